//! Feature-augmented input layer, bidirectional LSTM encoder and emission
//! projection, with exact backpropagation through time.
//!
//! Token representation is `[word ‖ clamp tag ‖ ctakes tag]` (or the word
//! vector alone without augmentation). Each direction runs an LSTM with
//! `H = round(0.7 · D)` units, gate order (input, forget, cell, output). The
//! projection maps `[h_fwd ‖ h_bwd]` to one score per IOB label, and those
//! scores feed the CRF.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{IobLabel, Token};
use crate::crf::{self, CrfParams};
use crate::embeddings::{uniform_bound, uniform_matrix, Vocabulary};
use crate::error::{Error, Result};
use crate::features::{TagVocabularies, TokenFeatures};
use crate::linalg::{sigmoid, Matrix};

/// How the two semantic tag streams are embedded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TagStreams {
    /// One table per pipeline, concatenated.
    Separate,
    /// One shared table; the two looked-up rows are summed.
    Merged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub word_dim: usize,
    pub clamp_dim: usize,
    pub ctakes_dim: usize,
    pub augment: bool,
    pub tag_streams: TagStreams,
    pub hidden_fraction: f64,
    /// Fixed hidden size instead of the fraction rule.
    pub hidden_override: Option<usize>,
    pub num_labels: usize,
    /// Penalize illegal IOB transitions in the CRF.
    pub mask_transitions: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            word_dim: 100,
            clamp_dim: 50,
            ctakes_dim: 50,
            augment: false,
            tag_streams: TagStreams::Separate,
            hidden_fraction: 0.7,
            hidden_override: None,
            num_labels: IobLabel::COUNT,
            mask_transitions: false,
            seed: 1,
        }
    }
}

/// `round(fraction · input_dim)`, halves rounded up, at least 1.
pub fn hidden_size(input_dim: usize, fraction: f64) -> usize {
    ((fraction * input_dim as f64 + 0.5).floor() as usize).max(1)
}

impl ModelConfig {
    pub fn tag_dim(&self) -> usize {
        match (self.augment, self.tag_streams) {
            (false, _) => 0,
            (true, TagStreams::Separate) => self.clamp_dim + self.ctakes_dim,
            (true, TagStreams::Merged) => self.clamp_dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.word_dim + self.tag_dim()
    }

    pub fn hidden(&self) -> usize {
        self.hidden_override
            .unwrap_or_else(|| hidden_size(self.input_dim(), self.hidden_fraction))
    }

    pub fn validate(&self) -> Result<()> {
        if self.word_dim == 0 || self.num_labels == 0 {
            return Err(Error::Config("word dim and label count must be >= 1".into()));
        }
        if self.augment && (self.clamp_dim == 0 || (self.tag_streams == TagStreams::Separate && self.ctakes_dim == 0)) {
            return Err(Error::Config("tag dims must be >= 1 with augmentation".into()));
        }
        if self.hidden_override == Some(0) || !(self.hidden_fraction > 0.0) {
            return Err(Error::Config("hidden size must be >= 1".into()));
        }
        if self.mask_transitions && self.num_labels != IobLabel::COUNT {
            return Err(Error::Config("transition masking needs the 19-label set".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input,
    Forget,
    Cell,
    Output,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Input, Gate::Forget, Gate::Cell, Gate::Output];

    fn slot(self) -> usize {
        self as usize
    }
}

/// Weights of one LSTM direction; rows are stacked by gate (i, f, g, o).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub w: Matrix,
    pub u: Matrix,
    pub b: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            w: Matrix::zeros(4 * hidden, input_dim),
            u: Matrix::zeros(4 * hidden, hidden),
            b: vec![0.0; 4 * hidden],
        }
    }

    /// Glorot-uniform `W` and `U`, forget-gate bias 1, other biases 0.
    pub fn init(input_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let glorot = |fan_in: usize, fan_out: usize| (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut b = vec![0.0; 4 * hidden];
        b[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
        Self {
            w: uniform_matrix(4 * hidden, input_dim, glorot(input_dim, 4 * hidden), rng),
            u: uniform_matrix(4 * hidden, hidden, glorot(hidden, 4 * hidden), rng),
            b,
        }
    }

    pub fn hidden(&self) -> usize {
        self.u.cols()
    }
}

/// Intermediates of one LSTM step, kept for the backward pass.
#[derive(Debug, Clone)]
struct StepCache {
    /// Post-activation gates `[i, f, g, o]`.
    gates: Vec<f64>,
    c_prev: Vec<f64>,
    h_prev: Vec<f64>,
    tanh_c: Vec<f64>,
}

fn lstm_step(x: &[f64], h_prev: &[f64], c_prev: &[f64], p: &LstmParams) -> (Vec<f64>, Vec<f64>, StepCache) {
    let hd = p.hidden();
    let mut gates = p.b.clone();
    let mut tmp = vec![0.0; 4 * hd];
    p.w.mul_vec_into(x, &mut tmp);
    gates.iter_mut().zip(&tmp).for_each(|(a, b)| *a += b);
    p.u.mul_vec_into(h_prev, &mut tmp);
    gates.iter_mut().zip(&tmp).for_each(|(a, b)| *a += b);
    for (k, v) in gates.iter_mut().enumerate() {
        *v = if k / hd == 2 { v.tanh() } else { sigmoid(*v) };
    }
    let mut c = vec![0.0; hd];
    let mut h = vec![0.0; hd];
    let mut tanh_c = vec![0.0; hd];
    for j in 0..hd {
        let (i, f, g, o) = (gates[j], gates[hd + j], gates[2 * hd + j], gates[3 * hd + j]);
        c[j] = f * c_prev[j] + i * g;
        tanh_c[j] = c[j].tanh();
        h[j] = o * tanh_c[j];
    }
    let cache = StepCache {
        gates,
        c_prev: c_prev.to_vec(),
        h_prev: h_prev.to_vec(),
        tanh_c,
    };
    (h, c, cache)
}

/// One LSTM step: returns `(h, c)`.
pub fn lstm_cell(x: &[f64], h_prev: &[f64], c_prev: &[f64], params: &LstmParams) -> (Vec<f64>, Vec<f64>) {
    let (h, c, _) = lstm_step(x, h_prev, c_prev, params);
    (h, c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionParams {
    /// `K × 2H`
    pub w: Matrix,
    pub b: Vec<f64>,
}

/// Every learnable tensor of the tagger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub word_emb: Matrix,
    /// The CLAMP table, or the single shared table in merged mode.
    pub clamp_emb: Option<Matrix>,
    pub ctakes_emb: Option<Matrix>,
    pub forward: LstmParams,
    pub backward: LstmParams,
    pub projection: ProjectionParams,
    pub crf: CrfParams,
}

impl ModelParams {
    /// Freshly initialized parameters around a given word table.
    pub fn init(config: &ModelConfig, word_emb: Matrix) -> Result<Self> {
        config.validate()?;
        if word_emb.cols() != config.word_dim {
            return Err(Error::Shape(format!(
                "word embeddings have dim {}, config expects {}",
                word_emb.cols(),
                config.word_dim
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (clamp_emb, ctakes_emb) = match (config.augment, config.tag_streams) {
            (false, _) => (None, None),
            (true, TagStreams::Separate) => (
                Some(uniform_matrix(
                    TagVocabularies::CLAMP_SIZE,
                    config.clamp_dim,
                    uniform_bound(config.clamp_dim),
                    &mut rng,
                )),
                Some(uniform_matrix(
                    TagVocabularies::CTAKES_SIZE,
                    config.ctakes_dim,
                    uniform_bound(config.ctakes_dim),
                    &mut rng,
                )),
            ),
            (true, TagStreams::Merged) => (
                Some(uniform_matrix(
                    TagVocabularies::MERGED_SIZE,
                    config.clamp_dim,
                    uniform_bound(config.clamp_dim),
                    &mut rng,
                )),
                None,
            ),
        };
        let d = config.input_dim();
        let h = config.hidden();
        let k = config.num_labels;
        let forward = LstmParams::init(d, h, &mut rng);
        let backward = LstmParams::init(d, h, &mut rng);
        let bound = (6.0 / (2 * h + k) as f64).sqrt();
        let projection = ProjectionParams {
            w: uniform_matrix(k, 2 * h, bound, &mut rng),
            b: vec![0.0; k],
        };
        Ok(Self {
            word_emb,
            clamp_emb,
            ctakes_emb,
            forward,
            backward,
            projection,
            crf: CrfParams::zeros(k),
        })
    }

    /// Same shapes, all zeros (a gradient accumulator).
    pub fn zeros_like(&self) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        let zl = |l: &LstmParams| LstmParams {
            w: z(&l.w),
            u: z(&l.u),
            b: vec![0.0; l.b.len()],
        };
        Self {
            word_emb: z(&self.word_emb),
            clamp_emb: self.clamp_emb.as_ref().map(z),
            ctakes_emb: self.ctakes_emb.as_ref().map(z),
            forward: zl(&self.forward),
            backward: zl(&self.backward),
            projection: ProjectionParams {
                w: z(&self.projection.w),
                b: vec![0.0; self.projection.b.len()],
            },
            crf: CrfParams::zeros(self.crf.num_labels()),
        }
    }

    /// `(name, rows, cols)` of every tensor, in a fixed order.
    pub fn tensor_shapes(&self) -> Vec<(&'static str, usize, usize)> {
        let mut out = vec![("word_emb", self.word_emb.rows(), self.word_emb.cols())];
        if let Some(m) = &self.clamp_emb {
            out.push(("clamp_emb", m.rows(), m.cols()));
        }
        if let Some(m) = &self.ctakes_emb {
            out.push(("ctakes_emb", m.rows(), m.cols()));
        }
        for (name, l) in [("fwd", &self.forward), ("bwd", &self.backward)] {
            let (w, u, b) = match name {
                "fwd" => ("fwd.w", "fwd.u", "fwd.b"),
                _ => ("bwd.w", "bwd.u", "bwd.b"),
            };
            out.push((w, l.w.rows(), l.w.cols()));
            out.push((u, l.u.rows(), l.u.cols()));
            out.push((b, 1, l.b.len()));
        }
        let k = self.crf.num_labels();
        out.push(("proj.w", self.projection.w.rows(), self.projection.w.cols()));
        out.push(("proj.b", 1, self.projection.b.len()));
        out.push(("crf.transitions", k, k));
        out.push(("crf.start", 1, k));
        out.push(("crf.end", 1, k));
        out
    }

    /// Flat views of every tensor, in [`ModelParams::tensor_shapes`] order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = vec![self.word_emb.as_slice()];
        out.extend(self.clamp_emb.as_ref().map(Matrix::as_slice));
        out.extend(self.ctakes_emb.as_ref().map(Matrix::as_slice));
        for l in [&self.forward, &self.backward] {
            out.push(l.w.as_slice());
            out.push(l.u.as_slice());
            out.push(&l.b);
        }
        out.push(self.projection.w.as_slice());
        out.push(&self.projection.b);
        out.push(self.crf.transitions.as_slice());
        out.push(&self.crf.start);
        out.push(&self.crf.end);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![self.word_emb.as_mut_slice()];
        out.extend(self.clamp_emb.as_mut().map(Matrix::as_mut_slice));
        out.extend(self.ctakes_emb.as_mut().map(Matrix::as_mut_slice));
        for l in [&mut self.forward, &mut self.backward] {
            out.push(l.w.as_mut_slice());
            out.push(l.u.as_mut_slice());
            out.push(&mut l.b);
        }
        out.push(self.projection.w.as_mut_slice());
        out.push(&mut self.projection.b);
        out.push(self.crf.transitions.as_mut_slice());
        out.push(&mut self.crf.start);
        out.push(&mut self.crf.end);
        out
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// `self += scale · other`
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += scale * y);
        }
    }

    pub fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// Vocabulary indices for one token sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSequence {
    pub words: Vec<usize>,
    /// Rows in the CLAMP (or merged) table.
    pub clamp: Vec<usize>,
    /// Rows in the cTAKES table (or the merged table in merged mode).
    pub ctakes: Vec<usize>,
}

impl EncodedSequence {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// A tagger: configuration, word vocabulary and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Tagger {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ModelParams,
}

/// Forward-pass intermediates needed by [`Tagger::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub inputs: Matrix,
    pub hidden: Matrix,
    pub emissions: Matrix,
    fwd_steps: Vec<StepCache>,
    /// Indexed by processing order, i.e. position `L-1-s` for step `s`.
    bwd_steps: Vec<StepCache>,
}

/// Sign fault injected into the backward pass, for checker sanity tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    NegateGate(Gate),
}

/// Runs both LSTM chains over `inputs` (L×D) from zero state; returns L×2H.
pub fn bilstm_forward(inputs: &Matrix, forward: &LstmParams, backward: &LstmParams) -> Matrix {
    bilstm_forward_cached(inputs, forward, backward).0
}

fn bilstm_forward_cached(
    inputs: &Matrix,
    forward: &LstmParams,
    backward: &LstmParams,
) -> (Matrix, Vec<StepCache>, Vec<StepCache>) {
    let l = inputs.rows();
    let hd = forward.hidden();
    let mut hidden = Matrix::zeros(l, 2 * hd);
    let mut run = |params: &LstmParams, order: &mut dyn Iterator<Item = usize>, offset: usize| {
        let mut h = vec![0.0; hd];
        let mut c = vec![0.0; hd];
        let mut steps = Vec::with_capacity(l);
        for t in order {
            let (h2, c2, cache) = lstm_step(inputs.row(t), &h, &c, params);
            hidden.row_mut(t)[offset..offset + hd].copy_from_slice(&h2);
            h = h2;
            c = c2;
            steps.push(cache);
        }
        steps
    };
    let fwd = run(forward, &mut (0..l), 0);
    let bwd = run(backward, &mut (0..l).rev(), hd);
    (hidden, fwd, bwd)
}

/// Row `t` is `W · hidden[t] + b`.
pub fn emissions(hidden: &Matrix, projection: &ProjectionParams) -> Matrix {
    let k = projection.b.len();
    let mut out = Matrix::zeros(hidden.rows(), k);
    for t in 0..hidden.rows() {
        let row = out.row_mut(t);
        projection.w.mul_vec_into(hidden.row(t), row);
        row.iter_mut().zip(&projection.b).for_each(|(a, b)| *a += b);
    }
    out
}

/// Backpropagates through one LSTM chain. `d_hidden_at(t)` is the upstream
/// gradient on `h` at input position `t`; `positions` lists input positions
/// in processing order. Accumulates into `grads` and `d_inputs`.
fn lstm_backward(
    params: &LstmParams,
    steps: &[StepCache],
    positions: &[usize],
    inputs: &Matrix,
    d_hidden: &Matrix,
    offset: usize,
    grads: &mut LstmParams,
    d_inputs: &mut Matrix,
    fault: Fault,
) {
    let hd = params.hidden();
    let mut dh_next = vec![0.0; hd];
    let mut dc_next = vec![0.0; hd];
    let mut da = vec![0.0; 4 * hd];
    for (s, &t) in positions.iter().enumerate().rev() {
        let st = &steps[s];
        let g = &st.gates;
        for j in 0..hd {
            let dh = d_hidden.get(t, offset + j) + dh_next[j];
            let (i, f, gg, o) = (g[j], g[hd + j], g[2 * hd + j], g[3 * hd + j]);
            let tc = st.tanh_c[j];
            let d_o = dh * tc;
            let dc = dh * o * (1.0 - tc * tc) + dc_next[j];
            let d_i = dc * gg;
            let d_g = dc * i;
            let d_f = dc * st.c_prev[j];
            dc_next[j] = dc * f;
            da[j] = d_i * i * (1.0 - i);
            da[hd + j] = d_f * f * (1.0 - f);
            da[2 * hd + j] = d_g * (1.0 - gg * gg);
            da[3 * hd + j] = d_o * o * (1.0 - o);
        }
        if let Fault::NegateGate(gate) = fault {
            let k = gate.slot();
            da[k * hd..(k + 1) * hd].iter_mut().for_each(|v| *v = -*v);
        }
        grads.w.add_outer(&da, inputs.row(t));
        grads.u.add_outer(&da, &st.h_prev);
        grads.b.iter_mut().zip(&da).for_each(|(a, b)| *a += b);
        params.w.tmul_vec_acc(&da, d_inputs.row_mut(t));
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        params.u.tmul_vec_acc(&da, &mut dh_next);
    }
}

impl Tagger {
    pub fn new(config: ModelConfig, vocab: Vocabulary, word_emb: Matrix) -> Result<Self> {
        if word_emb.rows() != vocab.len() {
            return Err(Error::Shape(format!(
                "{} embedding rows for a vocabulary of {}",
                word_emb.rows(),
                vocab.len()
            )));
        }
        let params = ModelParams::init(&config, word_emb)?;
        Ok(Self { config, vocab, params })
    }

    /// Maps tokens and their tags to table rows. Without augmentation the
    /// tag indices are all zero and never read.
    pub fn encode(&self, tokens: &[Token], features: Option<&[TokenFeatures]>) -> EncodedSequence {
        let words = tokens.iter().map(|t| self.vocab.index_of(&t.surface)).collect();
        let l = tokens.len();
        let tags = TagVocabularies {
            clamp_size: TagVocabularies::CLAMP_SIZE,
            ctakes_size: TagVocabularies::CTAKES_SIZE,
        };
        let (clamp, ctakes) = match (self.config.augment, features) {
            (true, Some(f)) => {
                assert_eq!(f.len(), l, "one feature pair per token");
                let clamp = f.iter().map(|x| tags.clamp_index(x.clamp)).collect();
                let ctakes = f
                    .iter()
                    .map(|x| match self.config.tag_streams {
                        TagStreams::Separate => tags.ctakes_index(x.ctakes),
                        TagStreams::Merged => tags.merged_ctakes_index(x.ctakes),
                    })
                    .collect();
                (clamp, ctakes)
            }
            _ => (vec![0; l], vec![0; l]),
        };
        EncodedSequence { words, clamp, ctakes }
    }

    /// Input vector of position `t`.
    pub fn token_representation(&self, seq: &EncodedSequence, t: usize) -> Vec<f64> {
        let p = &self.params;
        let mut x = p.word_emb.row(seq.words[t]).to_vec();
        if self.config.augment {
            match self.config.tag_streams {
                TagStreams::Separate => {
                    x.extend_from_slice(p.clamp_emb.as_ref().expect("clamp table").row(seq.clamp[t]));
                    x.extend_from_slice(p.ctakes_emb.as_ref().expect("ctakes table").row(seq.ctakes[t]));
                }
                TagStreams::Merged => {
                    let table = p.clamp_emb.as_ref().expect("merged table");
                    let mut tag = table.row(seq.clamp[t]).to_vec();
                    tag.iter_mut().zip(table.row(seq.ctakes[t])).for_each(|(a, b)| *a += b);
                    x.extend_from_slice(&tag);
                }
            }
        }
        x
    }

    pub fn inputs(&self, seq: &EncodedSequence) -> Matrix {
        let rows: Vec<Vec<f64>> = (0..seq.len()).map(|t| self.token_representation(seq, t)).collect();
        if rows.is_empty() {
            return Matrix::zeros(0, self.config.input_dim());
        }
        Matrix::from_rows(&rows)
    }

    pub fn forward(&self, seq: &EncodedSequence) -> ForwardCache {
        let inputs = self.inputs(seq);
        let (hidden, fwd_steps, bwd_steps) =
            bilstm_forward_cached(&inputs, &self.params.forward, &self.params.backward);
        let emissions = emissions(&hidden, &self.params.projection);
        ForwardCache {
            inputs,
            hidden,
            emissions,
            fwd_steps,
            bwd_steps,
        }
    }

    /// The CRF actually used for scoring (masked when configured).
    pub fn effective_crf(&self) -> std::borrow::Cow<'_, CrfParams> {
        if self.config.mask_transitions {
            std::borrow::Cow::Owned(self.params.crf.with_iob_mask())
        } else {
            std::borrow::Cow::Borrowed(&self.params.crf)
        }
    }

    /// Gradients of a scalar loss with upstream `d_scores` (L×K) on the
    /// emissions, added into `grads` (scaled by `scale`). CRF tensors are
    /// untouched here.
    pub fn backward(
        &self,
        seq: &EncodedSequence,
        cache: &ForwardCache,
        d_scores: &Matrix,
        grads: &mut ModelParams,
        scale: f64,
        fault: Fault,
    ) -> Result<()> {
        let l = seq.len();
        let hd = self.config.hidden();
        if cache.inputs.rows() != l || cache.fwd_steps.len() != l || d_scores.shape() != cache.emissions.shape() {
            return Err(Error::Shape("forward cache does not match this sequence".into()));
        }
        let p = &self.params;
        let d_scores = {
            let mut d = d_scores.clone();
            d.as_mut_slice().iter_mut().for_each(|v| *v *= scale);
            d
        };

        let mut d_hidden = Matrix::zeros(l, 2 * hd);
        for t in 0..l {
            let ds = d_scores.row(t);
            grads.projection.w.add_outer(ds, cache.hidden.row(t));
            grads.projection.b.iter_mut().zip(ds).for_each(|(a, b)| *a += b);
            p.projection.w.tmul_vec_acc(ds, d_hidden.row_mut(t));
        }

        let mut d_inputs = Matrix::zeros(l, self.config.input_dim());
        let fwd_pos: Vec<usize> = (0..l).collect();
        let bwd_pos: Vec<usize> = (0..l).rev().collect();
        lstm_backward(
            &p.forward,
            &cache.fwd_steps,
            &fwd_pos,
            &cache.inputs,
            &d_hidden,
            0,
            &mut grads.forward,
            &mut d_inputs,
            fault,
        );
        lstm_backward(
            &p.backward,
            &cache.bwd_steps,
            &bwd_pos,
            &cache.inputs,
            &d_hidden,
            hd,
            &mut grads.backward,
            &mut d_inputs,
            fault,
        );

        let wd = self.config.word_dim;
        for t in 0..l {
            let dx = d_inputs.row(t);
            grads
                .word_emb
                .row_mut(seq.words[t])
                .iter_mut()
                .zip(&dx[..wd])
                .for_each(|(a, b)| *a += b);
            if !self.config.augment {
                continue;
            }
            match self.config.tag_streams {
                TagStreams::Separate => {
                    let cd = self.config.clamp_dim;
                    let ct = grads.clamp_emb.as_mut().expect("clamp grads");
                    ct.row_mut(seq.clamp[t])
                        .iter_mut()
                        .zip(&dx[wd..wd + cd])
                        .for_each(|(a, b)| *a += b);
                    let kt = grads.ctakes_emb.as_mut().expect("ctakes grads");
                    kt.row_mut(seq.ctakes[t])
                        .iter_mut()
                        .zip(&dx[wd + cd..])
                        .for_each(|(a, b)| *a += b);
                }
                TagStreams::Merged => {
                    let table = grads.clamp_emb.as_mut().expect("merged grads");
                    for row in [seq.clamp[t], seq.ctakes[t]] {
                        table.row_mut(row).iter_mut().zip(&dx[wd..]).for_each(|(a, b)| *a += b);
                    }
                }
            }
        }
        Ok(())
    }

    /// CRF negative log-likelihood of `gold`.
    pub fn loss(&self, seq: &EncodedSequence, gold: &[usize]) -> Result<f64> {
        if seq.is_empty() {
            return Err(Error::EmptySequence);
        }
        let cache = self.forward(seq);
        crf::nll(&cache.emissions, &self.effective_crf(), gold)
    }

    /// NLL of `gold`, with `scale ·` its gradient added into `grads`.
    pub fn loss_and_gradients(
        &self,
        seq: &EncodedSequence,
        gold: &[usize],
        grads: &mut ModelParams,
        scale: f64,
        fault: Fault,
    ) -> Result<f64> {
        if seq.is_empty() {
            return Err(Error::EmptySequence);
        }
        let cache = self.forward(seq);
        let g = crf::nll_gradients(&cache.emissions, &self.effective_crf(), gold)?;
        self.backward(seq, &cache, &g.emissions, grads, scale, fault)?;
        let c = &mut grads.crf;
        c.transitions
            .as_mut_slice()
            .iter_mut()
            .zip(g.transitions.as_slice())
            .for_each(|(a, b)| *a += scale * b);
        c.start.iter_mut().zip(&g.start).for_each(|(a, b)| *a += scale * b);
        c.end.iter_mut().zip(&g.end).for_each(|(a, b)| *a += scale * b);
        Ok(g.nll)
    }

    /// Best label path (label indices).
    pub fn decode(&self, seq: &EncodedSequence) -> Vec<usize> {
        if seq.is_empty() {
            return Vec::new();
        }
        let cache = self.forward(seq);
        crf::viterbi(&cache.emissions, &self.effective_crf())
            .expect("non-empty sequence")
            .labels
    }
}

/// Result of comparing analytic and central-difference gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `(tensor name, max relative error, coordinates checked)`
    pub per_tensor: Vec<(&'static str, f64, usize)>,
    pub overall: f64,
}

/// `|a - n| / max(1e-12, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-12)
}

/// Compares backprop gradients of the CRF loss against central differences
/// on up to `max_coords` coordinates per tensor (all when `None`).
pub fn gradient_check(
    tagger: &Tagger,
    seq: &EncodedSequence,
    gold: &[usize],
    eps: f64,
    max_coords: Option<usize>,
    seed: u64,
    fault: Fault,
) -> Result<GradCheckReport> {
    if seq.is_empty() {
        return Err(Error::EmptySequence);
    }
    if !(1e-6..=1e-4).contains(&eps) {
        return Err(Error::Config(format!("epsilon {eps} outside [1e-6, 1e-4]")));
    }
    let mut grads = tagger.params.zeros_like();
    tagger.loss_and_gradients(seq, gold, &mut grads, 1.0, fault)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes = tagger.params.tensor_shapes();
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
    let mut probe = tagger.clone();
    let mut per_tensor = Vec::with_capacity(shapes.len());
    let mut overall: f64 = 0.0;

    for (ti, &(name, rows, cols)) in shapes.iter().enumerate() {
        let n = rows * cols;
        let coords: Vec<usize> = match max_coords {
            Some(m) if m < n => (0..m).map(|_| rng.gen_range(0..n)).collect(),
            _ => (0..n).collect(),
        };
        let mut worst: f64 = 0.0;
        for &c in &coords {
            let orig = probe.params.tensors()[ti][c];
            probe.params.tensors_mut()[ti][c] = orig + eps;
            let up = probe.loss(seq, gold)?;
            probe.params.tensors_mut()[ti][c] = orig - eps;
            let down = probe.loss(seq, gold)?;
            probe.params.tensors_mut()[ti][c] = orig;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(relative_error(analytic[ti][c], numeric));
        }
        overall = overall.max(worst);
        per_tensor.push((name, worst, coords.len()));
    }
    Ok(GradCheckReport { per_tensor, overall })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::init_uniform;

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn dimension_rule() {
        let word_only = ModelConfig::default();
        assert_eq!(word_only.input_dim(), 100);
        assert_eq!(word_only.hidden(), 70);
        let aug = ModelConfig {
            augment: true,
            ..ModelConfig::default()
        };
        assert_eq!(aug.input_dim(), 200);
        assert_eq!(aug.hidden(), 140);
        let merged = ModelConfig {
            augment: true,
            tag_streams: TagStreams::Merged,
            ..ModelConfig::default()
        };
        assert_eq!(merged.input_dim(), 150);
        assert_eq!(hidden_size(1, 0.7), 1);
        assert_eq!(hidden_size(5, 0.7), 4); // 3.5 rounds up
        assert_eq!(hidden_size(12, 0.7), 8);
        let fixed = ModelConfig {
            augment: true,
            hidden_override: Some(70),
            ..ModelConfig::default()
        };
        assert_eq!(fixed.hidden(), 70);
    }

    #[test]
    fn zero_cell() {
        let p = LstmParams::zeros(3, 1);
        let (h, c) = lstm_cell(&[0.3, -0.1, 2.0], &[0.0], &[0.0], &p);
        assert_eq!((h[0], c[0]), (0.0, 0.0));
    }

    #[test]
    fn half_gates_with_unit_cell() {
        let p = LstmParams::zeros(2, 1);
        let (h, c) = lstm_cell(&[0.0, 0.0], &[0.0], &[1.0], &p);
        assert!((c[0] - 0.5).abs() < 1e-15);
        assert!((h[0] - 0.5 * 0.5f64.tanh()).abs() < 1e-15);
        assert!((h[0] - 0.231_058_578_630_004_9).abs() < 1e-12);
    }

    #[test]
    fn forget_bias_one() {
        let mut p = LstmParams::zeros(2, 1);
        p.b[1] = 1.0;
        let (_, c) = lstm_cell(&[0.0, 0.0], &[0.0], &[1.0], &p);
        assert!((c[0] - sig(1.0)).abs() < 1e-15);
        assert!((c[0] - 0.731_058_578_630_004_9).abs() < 1e-12);
    }

    #[test]
    fn init_sets_forget_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = LstmParams::init(4, 3, &mut rng);
        assert_eq!(&p.b[3..6], &[1.0, 1.0, 1.0]);
        assert!(p.b[..3].iter().chain(&p.b[6..]).all(|&v| v == 0.0));
        let bound = (6.0f64 / 16.0).sqrt();
        assert!(p.w.as_slice().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn emission_projection() {
        let proj = ProjectionParams {
            w: Matrix::from_rows(&[vec![2.0]]),
            b: vec![0.0],
        };
        assert_eq!(emissions(&Matrix::from_rows(&[vec![3.0]]), &proj).row(0), &[6.0]);
        let proj = ProjectionParams {
            w: Matrix::zeros(3, 4),
            b: vec![1.0, -2.0, 0.5],
        };
        let e = emissions(&Matrix::from_rows(&[vec![1.0; 4], vec![-3.0; 4]]), &proj);
        assert_eq!(e.row(0), &[1.0, -2.0, 0.5]);
        assert_eq!(e.row(1), &[1.0, -2.0, 0.5]);
        assert_eq!(emissions(&Matrix::zeros(0, 4), &proj).rows(), 0);
    }

    #[test]
    fn bilstm_widths_and_single_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (d, h) in [(100, 70), (200, 140)] {
            let cfg_h = hidden_size(d, 0.7);
            assert_eq!(cfg_h, h);
            let f = LstmParams::init(d, h, &mut rng);
            let b = LstmParams::init(d, h, &mut rng);
            let x = uniform_matrix(3, d, 1.0, &mut rng);
            assert_eq!(bilstm_forward(&x, &f, &b).shape(), (3, 2 * h));
        }
        let f = LstmParams::init(4, 3, &mut rng);
        let b = LstmParams::init(4, 3, &mut rng);
        let x = uniform_matrix(1, 4, 1.0, &mut rng);
        let out = bilstm_forward(&x, &f, &b);
        let (hf, _) = lstm_cell(x.row(0), &[0.0; 3], &[0.0; 3], &f);
        let (hb, _) = lstm_cell(x.row(0), &[0.0; 3], &[0.0; 3], &b);
        assert_eq!(&out.row(0)[..3], &hf[..]);
        assert_eq!(&out.row(0)[3..], &hb[..]);
        assert_eq!(bilstm_forward(&Matrix::zeros(0, 4), &f, &b).rows(), 0);
    }

    fn toy_tagger(augment: bool, seed: u64) -> Tagger {
        let vocab = Vocabulary::from_words(["a", "b", "c"]);
        let config = ModelConfig {
            word_dim: 6,
            clamp_dim: 3,
            ctakes_dim: 3,
            augment,
            seed,
            ..ModelConfig::default()
        };
        let emb = init_uniform(vocab.len(), 6, seed).values;
        let mut t = Tagger::new(config, vocab, emb).unwrap();
        // move away from the zero CRF so every tensor carries signal
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for v in t.params.crf.transitions.as_mut_slice() {
            *v = rng.gen_range(-0.5..0.5);
        }
        t
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let t = toy_tagger(true, 3);
        let seq = EncodedSequence {
            words: vec![2, 3, 4],
            clamp: vec![0, 1, 5],
            ctakes: vec![0, 2, 1],
        };
        let cache = t.forward(&seq);
        let mut g = t.params.zeros_like();
        let d = Matrix::zeros(3, 19);
        t.backward(&seq, &cache, &d, &mut g, 1.0, Fault::None).unwrap();
        assert!(g.tensors().iter().all(|x| x.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn sum_of_emissions_has_unit_bias_gradient() {
        let t = toy_tagger(false, 4);
        let seq = t.encode(&[Token::new("a", 0, 1)], None);
        let cache = t.forward(&seq);
        let mut g = t.params.zeros_like();
        let d = Matrix::from_vec(1, 19, vec![1.0; 19]);
        t.backward(&seq, &cache, &d, &mut g, 1.0, Fault::None).unwrap();
        assert_eq!(g.projection.b, vec![1.0; 19]);
    }

    #[test]
    fn mismatched_cache_is_rejected() {
        let t = toy_tagger(false, 4);
        let s1 = t.encode(&[Token::new("a", 0, 1)], None);
        let s2 = t.encode(&[Token::new("a", 0, 1), Token::new("b", 2, 3)], None);
        let cache = t.forward(&s1);
        let mut g = t.params.zeros_like();
        let err = t.backward(&s2, &cache, &Matrix::zeros(2, 19), &mut g, 1.0, Fault::None);
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    #[test]
    fn gradients_match_central_differences() {
        for seed in 0..3 {
            let t = toy_tagger(true, seed);
            let seq = EncodedSequence {
                words: vec![2, 4, 0, 3],
                clamp: vec![0, 3, 3, 18],
                ctakes: vec![1, 0, 5, 2],
            };
            let gold = [1, 2, 0, 7];
            let r = gradient_check(&t, &seq, &gold, 1e-5, None, seed, Fault::None).unwrap();
            assert!(r.overall < 1e-4, "{:?}", r.per_tensor);
        }
    }

    #[test]
    fn merged_stream_gradients_match() {
        let vocab = Vocabulary::from_words(["a", "b"]);
        let config = ModelConfig {
            word_dim: 4,
            clamp_dim: 3,
            augment: true,
            tag_streams: TagStreams::Merged,
            ..ModelConfig::default()
        };
        let t = Tagger::new(config, vocab.clone(), init_uniform(vocab.len(), 4, 1).values).unwrap();
        let seq = EncodedSequence {
            words: vec![2, 3, 2],
            clamp: vec![1, 0, 4],
            ctakes: vec![20, 0, 19],
        };
        let r = gradient_check(&t, &seq, &[0, 1, 2], 1e-5, None, 0, Fault::None).unwrap();
        assert!(r.overall < 1e-4, "{:?}", r.per_tensor);
    }

    #[test]
    fn negated_forget_gate_is_detected() {
        let t = toy_tagger(true, 9);
        let seq = EncodedSequence {
            words: vec![2, 3, 4],
            clamp: vec![0, 1, 2],
            ctakes: vec![0, 1, 2],
        };
        let r = gradient_check(&t, &seq, &[3, 4, 0], 1e-5, None, 0, Fault::NegateGate(Gate::Forget)).unwrap();
        assert!(r.overall > 1e-2);
    }

    #[test]
    fn checker_rejects_empty_and_bad_epsilon() {
        let t = toy_tagger(false, 1);
        let empty = t.encode(&[], None);
        assert!(matches!(
            gradient_check(&t, &empty, &[], 1e-5, None, 0, Fault::None),
            Err(Error::EmptySequence)
        ));
        let seq = t.encode(&[Token::new("a", 0, 1)], None);
        assert!(gradient_check(&t, &seq, &[0], 1e-2, None, 0, Fault::None).is_err());
    }

    #[test]
    fn word_only_ignores_features() {
        let t = toy_tagger(false, 5);
        let toks = [Token::new("a", 0, 1), Token::new("b", 2, 3)];
        let f1 = [TokenFeatures::default(); 2];
        let f2 = [TokenFeatures {
            clamp: crate::features::ClampTag::Tagged(
                crate::features::ClampSemantic::Problem,
                crate::features::Assertion::Absent,
            ),
            ctakes: crate::features::CtakesTag::Procedure,
        }; 2];
        let e1 = t.forward(&t.encode(&toks, Some(&f1))).emissions;
        let e2 = t.forward(&t.encode(&toks, Some(&f2))).emissions;
        assert_eq!(e1, e2);
    }

    #[test]
    fn augmented_representation_layout() {
        let t = toy_tagger(true, 6);
        let seq = t.encode(&[Token::new("A", 0, 1)], Some(&[TokenFeatures::default()]));
        let x = t.token_representation(&seq, 0);
        assert_eq!(x.len(), 12);
        assert_eq!(&x[..6], t.params.word_emb.row(t.vocab.index_of("a")));
        assert_eq!(&x[6..9], t.params.clamp_emb.as_ref().unwrap().row(0));
        assert_eq!(&x[9..], t.params.ctakes_emb.as_ref().unwrap().row(0));
    }

    #[test]
    fn activations_and_cell_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = LstmParams::init(5, 4, &mut rng);
        let inputs = uniform_matrix(30, 5, 1.0, &mut rng);
        let (_, steps, _) = bilstm_forward_cached(&inputs, &p, &p);
        let mut prev_c: Vec<f64> = vec![0.0; 4];
        for st in &steps {
            for (k, g) in st.gates.iter().enumerate() {
                if k / 4 == 2 {
                    assert!(g.abs() < 1.0);
                } else {
                    assert!(*g > 0.0 && *g < 1.0);
                }
            }
            let c: Vec<f64> = (0..4)
                .map(|j| st.gates[4 + j] * st.c_prev[j] + st.gates[j] * st.gates[8 + j])
                .collect();
            for j in 0..4 {
                assert!(c[j].abs() <= prev_c[j].abs() + 1.0);
            }
            prev_c = c;
        }
    }
}
