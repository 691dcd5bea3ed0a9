//! RMSProp training of the tagger with mini-batches, a document-level
//! validation split, early stopping on validation lenient micro F1, and
//! end-to-end document prediction.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{iob_to_spans, segment, Annotation, Document, IobLabel};
use crate::embeddings::{build_vocab, init_uniform, Vocabulary};
use crate::error::{Error, Result};
use crate::evaluation::{count_corpus, score, MatchMode, Pairing};
use crate::features::{align_features, FeatureRow};
use crate::network::{EncodedSequence, Fault, ModelConfig, ModelParams, Tagger};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    pub max_epochs: usize,
    pub seed: u64,
    /// Global L2 norm the gradient is rescaled to when exceeded.
    pub clip_norm: Option<f64>,
    /// Worker threads for batch gradients; 1 is bitwise reproducible.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            rho: 0.9,
            epsilon: 1e-8,
            batch_size: 8,
            patience: 3,
            validation_fraction: 0.10,
            max_epochs: 100,
            seed: 1,
            clip_norm: None,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config("validation fraction must lie in (0, 1)".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Config("rho must lie in (0, 1)".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.epsilon > 0.0) {
            return Err(Error::Config("learning rate and epsilon must be positive".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.threads == 0 {
            return Err(Error::Config("batch size, max epochs and threads must be >= 1".into()));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("clip norm must be positive".into()));
        }
        Ok(())
    }
}

/// Running mean of squared gradients, one entry per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsPropState {
    pub cache: ModelParams,
}

impl RmsPropState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            cache: params.zeros_like(),
        }
    }
}

/// Elementwise RMSProp update of one tensor.
pub fn rmsprop_update(param: &mut [f64], grad: &[f64], cache: &mut [f64], config: &TrainConfig) -> Result<()> {
    if param.len() != grad.len() || param.len() != cache.len() {
        return Err(Error::Shape(format!(
            "parameter of {} values, gradient of {}, cache of {}",
            param.len(),
            grad.len(),
            cache.len()
        )));
    }
    let (rho, lr, eps) = (config.rho, config.learning_rate, config.epsilon);
    for ((p, &g), c) in param.iter_mut().zip(grad).zip(cache.iter_mut()) {
        *c = rho * *c + (1.0 - rho) * g * g;
        *p -= lr * g / (c.sqrt() + eps);
    }
    Ok(())
}

pub fn global_norm(grads: &ModelParams) -> f64 {
    grads
        .tensors()
        .iter()
        .flat_map(|t| t.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// One optimizer step over every tensor. Clipping, when configured, rescales
/// `grads` in place first.
pub fn rmsprop_step(
    params: &mut ModelParams,
    grads: &mut ModelParams,
    state: &mut RmsPropState,
    config: &TrainConfig,
) -> Result<()> {
    let shapes = params.tensor_shapes();
    if grads.tensor_shapes() != shapes || state.cache.tensor_shapes() != shapes {
        return Err(Error::Shape(
            "gradient or optimizer state does not match the parameters".into(),
        ));
    }
    if let Some(max) = config.clip_norm {
        let norm = global_norm(grads);
        if norm > max {
            let s = max / norm;
            for t in grads.tensors_mut() {
                t.iter_mut().for_each(|v| *v *= s);
            }
        }
    }
    for ((p, g), c) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.cache.tensors_mut())
    {
        rmsprop_update(p, g, c, config)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Patience-based stopping on a metric to maximize. Epochs count from 1;
/// only a strict improvement resets the counter, so ties keep the earlier epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    epoch: usize,
    best: Option<(usize, f64)>,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            epoch: 0,
            best: None,
        }
    }

    pub fn observe(&mut self, metric: f64) -> StopDecision {
        self.epoch += 1;
        if self.best.is_none_or(|(_, b)| metric > b) {
            self.best = Some((self.epoch, metric));
        }
        if self.epoch - self.best_epoch() >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    /// 0 before any observation.
    pub fn best_epoch(&self) -> usize {
        self.best.map_or(0, |(e, _)| e)
    }

    pub fn best_metric(&self) -> Option<f64> {
        self.best.map(|(_, m)| m)
    }

    pub fn is_best(&self, epoch: usize) -> bool {
        self.best_epoch() == epoch
    }
}

/// Document-level split: `max(1, round(fraction · N))` validation documents
/// chosen by a seeded shuffle, both parts kept in input order.
pub fn split_train_val<T: Clone>(documents: &[T], fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    let n = documents.len();
    if n < 2 {
        return Err(Error::Config(format!(
            "a validation split needs at least 2 documents, got {n}"
        )));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config("validation fraction must lie in (0, 1)".into()));
    }
    let n_val = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut in_val = vec![false; n];
    order[..n_val].iter().for_each(|&i| in_val[i] = true);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (d, v) in documents.iter().zip(in_val) {
        if v { &mut val } else { &mut train }.push(d.clone());
    }
    Ok((train, val))
}

/// An annotated document with its optional semantic-tag sidecar.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingDocument {
    pub document: Document,
    pub features: Option<Vec<FeatureRow>>,
}

/// One encoded segment and its gold label indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub sequence: EncodedSequence,
    pub gold: Vec<usize>,
}

/// Fails when augmentation is on and any document lacks a sidecar.
pub fn check_features(config: &ModelConfig, docs: &[TrainingDocument]) -> Result<()> {
    if !config.augment {
        return Ok(());
    }
    let missing: Vec<&str> = docs
        .iter()
        .filter(|d| d.features.is_none())
        .map(|d| d.document.id.as_str())
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "feature sidecars missing for: {}",
            missing.join(", ")
        )))
    }
}

/// Segments, featurizes and encodes documents; empty segments are skipped.
pub fn build_examples(tagger: &Tagger, docs: &[TrainingDocument]) -> Vec<Example> {
    let mut out = Vec::new();
    for d in docs {
        for seg in segment(&d.document) {
            if seg.tokens.is_empty() {
                continue;
            }
            let feats = d.features.as_ref().map(|rows| align_features(&seg.tokens, rows));
            let sequence = tagger.encode(&seg.tokens, feats.as_deref());
            let gold = seg
                .labels
                .expect("segments of annotated documents carry labels")
                .iter()
                .map(|l| l.index())
                .collect();
            out.push(Example { sequence, gold });
        }
    }
    out
}

/// A tagger with a vocabulary of every training token (lowercased) plus
/// the reserved rows, and uniformly initialized word vectors.
pub fn random_init_tagger(config: ModelConfig, docs: &[TrainingDocument]) -> Result<Tagger> {
    let streams: Vec<Vec<String>> = docs
        .iter()
        .map(|d| {
            crate::corpus::tokenize(&d.document.text)
                .into_iter()
                .map(|t| t.surface)
                .collect()
        })
        .collect();
    let vocab: Vocabulary = build_vocab(&streams, 1);
    let emb = init_uniform(vocab.len(), config.word_dim, config.seed);
    Tagger::new(config, vocab, emb.values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-segment NLL over the epoch's updates.
    pub train_nll: f64,
    pub val_f1_lenient_micro: f64,
    pub is_best: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn best_epoch(&self) -> Option<usize> {
        self.epochs.iter().find(|e| e.is_best).map(|e| e.epoch)
    }

    /// One JSON object per epoch, as an array.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.epochs).expect("plain records serialize")
    }
}

/// Mean NLL of a batch and its gradient (scaled by `1/|batch|`) accumulated
/// into `grads`. With several threads, chunk gradients are summed in chunk order.
fn batch_gradients(tagger: &Tagger, batch: &[&Example], grads: &mut ModelParams, threads: usize) -> Result<f64> {
    let scale = 1.0 / batch.len() as f64;
    let run = |chunk: &[&Example], g: &mut ModelParams| -> Result<f64> {
        let mut total = 0.0;
        for ex in chunk {
            total += tagger.loss_and_gradients(&ex.sequence, &ex.gold, g, scale, Fault::None)?;
        }
        Ok(total)
    };
    if threads <= 1 || batch.len() < 2 {
        return Ok(run(batch, grads)? * scale);
    }
    let size = batch.len().div_ceil(threads);
    let results: Vec<Result<(f64, ModelParams)>> = std::thread::scope(|s| {
        let handles: Vec<_> = batch
            .chunks(size)
            .map(|chunk| {
                s.spawn(move || {
                    let mut g = grads_template(tagger);
                    run(chunk, &mut g).map(|l| (l, g))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    let mut total = 0.0;
    for r in results {
        let (l, g) = r?;
        total += l;
        grads.add_scaled(&g, 1.0);
    }
    Ok(total * scale)
}

fn grads_template(tagger: &Tagger) -> ModelParams {
    tagger.params.zeros_like()
}

/// Validation lenient micro F1 (percent) of whole-document predictions.
pub fn validation_f1(tagger: &Tagger, docs: &[TrainingDocument]) -> f64 {
    let preds: Vec<Vec<Annotation>> = docs
        .iter()
        .map(|d| predict_document(tagger, &d.document.text, d.features.as_deref()))
        .collect();
    let counts = count_corpus(
        docs.iter()
            .zip(&preds)
            .map(|(d, p)| (d.document.annotations.as_slice(), p.as_slice())),
        MatchMode::Lenient,
        Pairing::Greedy,
    );
    score(&counts, MatchMode::Lenient).micro.scores.f1
}

/// Fraction of gold token labels reproduced by Viterbi decoding.
pub fn token_accuracy(tagger: &Tagger, examples: &[Example]) -> f64 {
    let (mut right, mut total) = (0usize, 0usize);
    for ex in examples {
        let pred = tagger.decode(&ex.sequence);
        right += pred.iter().zip(&ex.gold).filter(|(a, b)| a == b).count();
        total += ex.gold.len();
    }
    if total == 0 {
        0.0
    } else {
        right as f64 / total as f64
    }
}

/// Trains from `tagger` and returns the parameters of the best validation
/// epoch with the per-epoch history.
pub fn train(
    mut tagger: Tagger,
    train_docs: &[TrainingDocument],
    val_docs: &[TrainingDocument],
    config: &TrainConfig,
) -> Result<(Tagger, TrainHistory)> {
    config.validate()?;
    tagger.config.validate()?;
    check_features(&tagger.config, train_docs)?;
    check_features(&tagger.config, val_docs)?;
    let examples = build_examples(&tagger, train_docs);
    if examples.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = RmsPropState::new(&tagger.params);
    let mut grads = tagger.params.zeros_like();
    let mut stopper = EarlyStopping::new(config.patience);
    let mut history = TrainHistory::default();
    let mut best = tagger.params.clone();
    let mut order: Vec<usize> = (0..examples.len()).collect();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut nll_sum = 0.0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Example> = idx.iter().map(|&i| &examples[i]).collect();
            grads.fill_zero();
            let loss = batch_gradients(&tagger, &batch, &mut grads, config.threads)?;
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::Divergence { epoch, batch: b + 1 });
            }
            nll_sum += loss * batch.len() as f64;
            rmsprop_step(&mut tagger.params, &mut grads, &mut state, config)?;
            if !tagger.params.all_finite() {
                return Err(Error::Divergence { epoch, batch: b + 1 });
            }
        }
        let f1 = validation_f1(&tagger, val_docs);
        let decision = stopper.observe(f1);
        if stopper.is_best(epoch) {
            best.clone_from(&tagger.params);
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_nll: nll_sum / examples.len() as f64,
            val_f1_lenient_micro: f1,
            is_best: false,
        });
        if decision == StopDecision::Stop {
            break;
        }
    }
    let best_epoch = stopper.best_epoch();
    history
        .epochs
        .iter_mut()
        .for_each(|e| e.is_best = e.epoch == best_epoch);
    tagger.params = best;
    Ok((tagger, history))
}

/// Splits `docs` into train and validation parts, then trains.
pub fn train_with_split(
    tagger: Tagger,
    docs: &[TrainingDocument],
    config: &TrainConfig,
) -> Result<(Tagger, TrainHistory)> {
    let (tr, val) = split_train_val(docs, config.validation_fraction, config.seed)?;
    train(tagger, &tr, &val, config)
}

/// Tags a raw document. Annotations carry document character offsets and
/// ids `T1..Tn` in document order. Without a sidecar every token gets the
/// outside tag in both streams.
pub fn predict_document(tagger: &Tagger, text: &str, features: Option<&[FeatureRow]>) -> Vec<Annotation> {
    let doc = Document::new("", text);
    let mut out = Vec::new();
    for seg in segment(&doc) {
        if seg.tokens.is_empty() {
            continue;
        }
        let feats = features.map(|rows| align_features(&seg.tokens, rows));
        let seq = tagger.encode(&seg.tokens, feats.as_deref());
        let labels: Vec<IobLabel> = tagger
            .decode(&seq)
            .into_iter()
            .map(|i| IobLabel::from_index(i).unwrap_or(IobLabel::O))
            .collect();
        out.extend(iob_to_spans(&seg.tokens, &labels));
    }
    for (i, a) in out.iter_mut().enumerate() {
        a.id = format!("T{}", i + 1);
        a.text = doc.surface(&a.fragments);
    }
    out
}
