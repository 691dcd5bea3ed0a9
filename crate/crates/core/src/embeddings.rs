//! Word vocabularies and embedding tables: skip-gram pretraining with
//! negative sampling, uniform random initialization, and a word2vec-style
//! text format.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{dot, sigmoid, Matrix};

pub const UNK: &str = "<unk>";
pub const PAD: &str = "<pad>";
pub const UNK_INDEX: usize = 0;
pub const PAD_INDEX: usize = 1;

/// Dense word index with `<unk>` at 0 and `<pad>` at 1. Words are stored lowercased.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
    counts: Vec<u64>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_words(Vec::<String>::new())
    }
}

impl Vocabulary {
    /// Builds a vocabulary from an ordered word list; specials are added when missing.
    pub fn from_words<S: Into<String>>(words: impl IntoIterator<Item = S>) -> Self {
        let mut v = Self {
            words: vec![UNK.to_string(), PAD.to_string()],
            index: HashMap::new(),
            counts: vec![0, 0],
        };
        v.index.insert(UNK.to_string(), UNK_INDEX);
        v.index.insert(PAD.to_string(), PAD_INDEX);
        for w in words {
            let w = w.into();
            if !v.index.contains_key(&w) {
                v.index.insert(w.clone(), v.words.len());
                v.words.push(w);
                v.counts.push(0);
            }
        }
        v
    }

    /// Like [`Vocabulary::from_words`], with a count per listed word.
    pub fn from_counted<S: Into<String>>(entries: impl IntoIterator<Item = (S, u64)>) -> Self {
        let mut v = Self::from_words(Vec::<String>::new());
        for (w, c) in entries {
            let w = w.into();
            match v.index.get(&w) {
                Some(&i) => v.counts[i] = c,
                None => {
                    v.index.insert(w.clone(), v.words.len());
                    v.words.push(w);
                    v.counts.push(c);
                }
            }
        }
        v
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, i: usize) -> &str {
        &self.words[i]
    }

    pub fn count(&self, i: usize) -> u64 {
        self.counts[i]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(&word.to_lowercase())
    }

    /// Index of the lowercased word, or [`UNK_INDEX`].
    pub fn index_of(&self, word: &str) -> usize {
        match self.index.get(word) {
            Some(&i) => i,
            None => self.index.get(&word.to_lowercase()).copied().unwrap_or(UNK_INDEX),
        }
    }
}

/// Counts lowercased words and keeps those seen at least `min_count` times,
/// most frequent first (ties alphabetical).
pub fn build_vocab<I, S>(streams: I, min_count: u64) -> Vocabulary
where
    I: IntoIterator,
    I::Item: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let min_count = min_count.max(1);
    let mut freq: HashMap<String, u64> = HashMap::new();
    for stream in streams {
        for w in stream {
            *freq.entry(w.as_ref().to_lowercase()).or_default() += 1;
        }
    }
    let mut kept: Vec<(String, u64)> = freq
        .into_iter()
        .filter(|(w, c)| *c >= min_count && w != UNK && w != PAD)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut vocab = Vocabulary::from_words(kept.iter().map(|(w, _)| w.clone()));
    for (i, (_, c)) in kept.iter().enumerate() {
        vocab.counts[i + 2] = *c;
    }
    vocab
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingSource {
    Pretrained,
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub values: Matrix,
    pub source: EmbeddingSource,
}

impl EmbeddingMatrix {
    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }
}

/// I.i.d. uniform rows on `[-b, b]` with `b = sqrt(3 / dim)` (unit variance scaling).
pub fn init_uniform(rows: usize, dim: usize, seed: u64) -> EmbeddingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    EmbeddingMatrix {
        values: uniform_matrix(rows, dim, uniform_bound(dim), &mut rng),
        source: EmbeddingSource::Random,
    }
}

pub fn uniform_bound(dim: usize) -> f64 {
    (3.0 / dim as f64).sqrt()
}

pub(crate) fn uniform_matrix(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Matrix {
    let dist = Uniform::new_inclusive(-bound, bound);
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Matrix::from_vec(rows, cols, data)
}

/// Row for the lowercased word, falling back to the `<unk>` row.
pub fn lookup<'a>(vocab: &Vocabulary, matrix: &'a EmbeddingMatrix, word: &str) -> &'a [f64] {
    matrix.values.row(vocab.index_of(word))
}

/// Writes `V d` then one `word v1 .. vd` line per row, six decimals.
pub fn format_embeddings(matrix: &EmbeddingMatrix, vocab: &Vocabulary) -> String {
    let mut out = format!("{} {}\n", matrix.rows(), matrix.dim());
    for (i, w) in vocab.words().iter().enumerate() {
        out.push_str(w);
        for v in matrix.values.row(i) {
            let _ = write!(out, " {v:.6}");
        }
        out.push('\n');
    }
    out
}

pub fn save_embeddings(matrix: &EmbeddingMatrix, vocab: &Vocabulary, path: &Path) -> Result<()> {
    assert_eq!(matrix.rows(), vocab.len(), "matrix rows must match vocabulary");
    fs::write(path, format_embeddings(matrix, vocab)).map_err(|e| Error::io(path, e))
}

pub fn parse_embeddings(content: &str) -> Result<(Vocabulary, EmbeddingMatrix)> {
    let mut lines = content.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::parse(1, "missing header"))?;
    let mut h = header.split_whitespace();
    let (Some(v), Some(d), None) = (h.next(), h.next(), h.next()) else {
        return Err(Error::parse(1, "header must be `V d`"));
    };
    let rows: usize = v.parse().map_err(|_| Error::parse(1, "bad row count"))?;
    let dim: usize = d.parse().map_err(|_| Error::parse(1, "bad dimension"))?;

    let mut words = Vec::with_capacity(rows);
    let mut data = Vec::with_capacity(rows * dim);
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let word = parts.next().expect("non-empty line").to_string();
        let before = data.len();
        for p in parts {
            let x: f64 = p.parse().map_err(|_| Error::parse(i + 1, format!("bad value `{p}`")))?;
            data.push(x);
        }
        if data.len() - before != dim {
            return Err(Error::parse(
                i + 1,
                format!("expected {dim} values, found {}", data.len() - before),
            ));
        }
        words.push(word);
    }
    if words.len() != rows {
        return Err(Error::parse(
            1,
            format!("header declares {rows} rows, found {}", words.len()),
        ));
    }

    // Foreign files may lack the special rows; give them zero vectors.
    let mut values = Matrix::from_vec(rows, dim, data);
    let vocab = Vocabulary::from_words(words.iter().cloned());
    if vocab.len() != rows {
        let mut full = Matrix::zeros(vocab.len(), dim);
        for (r, w) in words.iter().enumerate() {
            full.row_mut(vocab.index_of(w)).copy_from_slice(values.row(r));
        }
        values = full;
    }
    Ok((
        vocab,
        EmbeddingMatrix {
            values,
            source: EmbeddingSource::Pretrained,
        },
    ))
}

pub fn load_embeddings(path: &Path) -> Result<(Vocabulary, EmbeddingMatrix)> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&content)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub min_count: u64,
    pub subsample: f64,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        Self {
            dim: 100,
            window: 5,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            min_count: 5,
            subsample: 1e-3,
            seed: 1,
        }
    }
}

impl SkipGramConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.window == 0 || self.negatives == 0 {
            return Err(Error::Config("dim, window and negatives must be >= 1".into()));
        }
        if self.epochs == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::Config("epochs and learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Draws word indices from the unigram distribution raised to 0.75.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    cumulative: Vec<f64>,
}

impl NegativeSampler {
    pub fn new(counts: &[u64]) -> Self {
        let mut acc = 0.0;
        let cumulative = counts
            .iter()
            .map(|&c| {
                acc += (c as f64).powf(0.75);
                acc
            })
            .collect();
        Self { cumulative }
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let total = self.total();
        let mut prev = 0.0;
        self.cumulative
            .iter()
            .map(|&c| {
                let p = (c - prev) / total;
                prev = c;
                p
            })
            .collect()
    }

    fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let u = rng.gen::<f64>() * self.total();
        self.cumulative
            .partition_point(|&c| c <= u)
            .min(self.cumulative.len() - 1)
    }
}

/// Input (word) and output (context) tables of a skip-gram model.
#[derive(Debug, Clone, PartialEq)]
pub struct SkipGramModel {
    pub input: Matrix,
    pub output: Matrix,
}

impl SkipGramModel {
    /// word2vec initialization: input uniform in `±0.5/dim`, output zero.
    pub fn new(rows: usize, dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            input: uniform_matrix(rows, dim, 0.5 / dim as f64, rng),
            output: Matrix::zeros(rows, dim),
        }
    }

    /// Negative-sampling loss of one (center, context) pair with the given negatives.
    pub fn pair_loss(&self, center: usize, context: usize, negatives: &[usize]) -> f64 {
        let x = self.input.row(center);
        let mut loss = -sigmoid(dot(x, self.output.row(context))).ln();
        for &n in negatives.iter().filter(|&&n| n != context) {
            loss -= sigmoid(-dot(x, self.output.row(n))).ln();
        }
        loss
    }

    /// One SGD step on a pair; returns the loss before the update.
    pub fn train_pair(&mut self, center: usize, context: usize, negatives: &[usize], lr: f64) -> f64 {
        let dim = self.input.cols();
        let mut grad_in = vec![0.0; dim];
        let mut loss = 0.0;
        let targets =
            std::iter::once((context, 1.0)).chain(negatives.iter().filter(|&&n| n != context).map(|&n| (n, 0.0)));
        for (target, label) in targets {
            let score = dot(self.input.row(center), self.output.row(target));
            let p = sigmoid(score);
            loss -= if label > 0.5 { p.ln() } else { (1.0 - p).ln() };
            let g = (label - p) * lr;
            for (gi, o) in grad_in.iter_mut().zip(self.output.row(target)) {
                *gi += g * o;
            }
            let (input, output) = (&self.input, &mut self.output);
            for (o, x) in output.row_mut(target).iter_mut().zip(input.row(center)) {
                *o += g * x;
            }
        }
        for (x, g) in self.input.row_mut(center).iter_mut().zip(&grad_in) {
            *x += g;
        }
        loss
    }
}

/// Trains skip-gram vectors with negative sampling, single-threaded and
/// deterministic per seed. Out-of-vocabulary words are dropped from the
/// stream; the `<unk>` and `<pad>` rows keep their initial values.
pub fn train_skipgram<S: AsRef<str>>(
    streams: &[Vec<S>],
    config: &SkipGramConfig,
) -> Result<(Vocabulary, EmbeddingMatrix)> {
    config.validate()?;
    let vocab = build_vocab(streams.iter().map(|s| s.iter()), config.min_count);
    if vocab.len() <= 2 {
        return Err(Error::EmptyCorpus);
    }
    let sentences: Vec<Vec<usize>> = streams
        .iter()
        .map(|s| {
            s.iter()
                .map(|w| vocab.index_of(w.as_ref()))
                .filter(|&i| i > PAD_INDEX)
                .collect()
        })
        .collect();
    let total_words: u64 = vocab.counts().iter().sum();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = SkipGramModel::new(vocab.len(), config.dim, &mut rng);
    let sampler = NegativeSampler::new(vocab.counts());
    let threshold = config.subsample * total_words as f64;
    let budget = (config.epochs as u64 * total_words) as f64 + 1.0;
    let mut processed = 0u64;
    let mut negatives = vec![0; config.negatives];

    for _ in 0..config.epochs {
        for sentence in &sentences {
            let kept: Vec<usize> = sentence
                .iter()
                .copied()
                .filter(|&w| {
                    if config.subsample <= 0.0 {
                        return true;
                    }
                    let f = vocab.count(w) as f64;
                    let keep = ((f / threshold).sqrt() + 1.0) * threshold / f;
                    rng.gen::<f64>() < keep
                })
                .collect();
            for (i, &center) in kept.iter().enumerate() {
                let lr = config.learning_rate * (1.0 - processed as f64 / budget).max(1e-4);
                let span = config.window - rng.gen_range(0..config.window);
                let lo = i.saturating_sub(span);
                let hi = (i + span).min(kept.len() - 1);
                for j in lo..=hi {
                    if j == i {
                        continue;
                    }
                    for n in negatives.iter_mut() {
                        *n = sampler.sample(&mut rng);
                    }
                    model.train_pair(center, kept[j], &negatives, lr);
                }
            }
            processed += sentence.len() as u64;
        }
    }

    Ok((
        vocab,
        EmbeddingMatrix {
            values: model.input,
            source: EmbeddingSource::Pretrained,
        },
    ))
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocab_threshold() {
        let v = build_vocab([vec!["a", "a", "b"]], 2);
        assert!(v.contains("a"));
        assert!(!v.contains("b"));
        assert_eq!(v.index_of("b"), UNK_INDEX);
        assert_eq!(v.count(v.index_of("a")), 2);
    }

    #[test]
    fn empty_stream_has_only_specials() {
        let v = build_vocab(Vec::<Vec<&str>>::new(), 1);
        assert_eq!(v.words(), &[UNK.to_string(), PAD.to_string()]);
        let v = build_vocab([vec!["x"]], 1);
        assert!(v.contains("x"));
        assert_eq!(v.len(), 3);
    }

    #[test]
    fn lookup_is_case_insensitive_with_unk_fallback() {
        let v = build_vocab([vec!["aspirin", "lasix"]], 1);
        let m = init_uniform(v.len(), 4, 3);
        assert_eq!(lookup(&v, &m, "Aspirin"), lookup(&v, &m, "aspirin"));
        assert_eq!(lookup(&v, &m, "aspirin"), m.values.row(v.index_of("aspirin")));
        assert_eq!(lookup(&v, &m, "zzz"), m.values.row(UNK_INDEX));
    }

    #[test]
    fn uniform_bound_and_determinism() {
        let m = init_uniform(50, 100, 9);
        let b = 0.03f64.sqrt();
        assert!((uniform_bound(100) - 0.173_205_080_756_887_7).abs() < 1e-12);
        assert!(m.values.as_slice().iter().all(|v| v.abs() <= b));
        assert_eq!(m, init_uniform(50, 100, 9));
        assert_eq!(m.source, EmbeddingSource::Random);
        let one = init_uniform(1, 1, 0);
        assert!(one.values.get(0, 0).abs() <= 3f64.sqrt());
    }

    #[test]
    fn text_format() {
        let v = Vocabulary::from_words(Vec::<String>::new());
        let m = EmbeddingMatrix {
            values: Matrix::from_rows(&[vec![0.5, -1.0, 2.0], vec![0.0, 0.25, 1e-7]]),
            source: EmbeddingSource::Random,
        };
        let text = format_embeddings(&m, &v);
        assert_eq!(text.lines().count(), 3);
        assert_eq!(text.lines().next(), Some("2 3"));
        let (v2, m2) = parse_embeddings(&text).unwrap();
        assert_eq!(v2, v);
        for (a, b) in m.values.as_slice().iter().zip(m2.values.as_slice()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn arity_mismatch_is_a_parse_error() {
        let err = parse_embeddings("2 3\n<unk> 1 2 3\n<pad> 1 2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
        assert!(parse_embeddings("2 3\n<unk> 1 2 3\n").is_err());
        assert!(parse_embeddings("").is_err());
    }

    #[test]
    fn foreign_file_gets_special_rows() {
        let (v, m) = parse_embeddings("1 2\nfoo 0.5 0.5\n").unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(m.values.row(UNK_INDEX), &[0.0, 0.0]);
        assert_eq!(lookup(&v, &m, "FOO"), &[0.5, 0.5]);
    }

    #[test]
    fn pair_loss_decreases_over_first_updates() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut model = SkipGramModel::new(12, 16, &mut rng);
        let negatives = [5, 7, 9, 11, 4];
        let mut prev = model.pair_loss(2, 3, &negatives);
        for _ in 0..10 {
            model.train_pair(2, 3, &negatives, 0.025);
            let now = model.pair_loss(2, 3, &negatives);
            assert!(now < prev, "{now} >= {prev}");
            prev = now;
        }
    }

    #[test]
    fn empty_after_min_count_is_an_error() {
        let streams = vec![vec!["a", "b"]];
        let cfg = SkipGramConfig {
            epochs: 1,
            ..SkipGramConfig::default()
        };
        assert!(matches!(train_skipgram(&streams, &cfg), Err(Error::EmptyCorpus)));
        let empty: Vec<Vec<&str>> = Vec::new();
        assert!(train_skipgram(&empty, &cfg).is_err());
    }

    #[test]
    fn sampler_never_draws_zero_count_words() {
        let s = NegativeSampler::new(&[0, 0, 3, 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            assert!(s.sample(&mut rng) >= 2);
        }
        let p = s.probabilities();
        assert_eq!(p[0], 0.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
