//! Linear-chain CRF: forward algorithm, forward-backward gradients and
//! Viterbi decoding, plus exhaustive-enumeration oracles for small lattices.
//!
//! A path `y` over emissions `E` (L×K) scores
//! `start[y0] + Σ E[t][yt] + Σ T[y(t-1)][yt] + end[y(L-1)]`.

use serde::{Deserialize, Serialize};

use crate::corpus::IobLabel;
use crate::error::{Error, Result};
use crate::linalg::{log_sum_exp, Matrix};

/// Largest lattice the brute-force oracles will enumerate.
pub const MAX_ENUMERATED_PATHS: f64 = 1e6;

/// Additive penalty for transitions that are illegal under IOB.
pub const IOB_MASK_PENALTY: f64 = -1e4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrfParams {
    /// `transitions[i][j]`: score of label `j` following label `i`.
    pub transitions: Matrix,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

impl CrfParams {
    /// All-zero scores (uniform prior over label paths).
    pub fn zeros(num_labels: usize) -> Self {
        Self {
            transitions: Matrix::zeros(num_labels, num_labels),
            start: vec![0.0; num_labels],
            end: vec![0.0; num_labels],
        }
    }

    pub fn num_labels(&self) -> usize {
        self.start.len()
    }

    pub fn all_finite(&self) -> bool {
        self.transitions.all_finite() && self.start.iter().chain(&self.end).all(|v| v.is_finite())
    }

    /// Copy with illegal IOB moves (`O → I-X`, `B-X/I-X → I-Y` for `Y ≠ X`,
    /// start `→ I-X`) penalized. Requires the 19-label layout.
    pub fn with_iob_mask(&self) -> CrfParams {
        let k = self.num_labels();
        assert_eq!(k, IobLabel::COUNT, "IOB mask needs the full label set");
        let mut out = self.clone();
        for j in 0..k {
            let IobLabel::I(cls) = IobLabel::from_index(j).expect("label") else {
                continue;
            };
            out.start[j] += IOB_MASK_PENALTY;
            for i in 0..k {
                let ok = IobLabel::from_index(i).expect("label").class() == Some(cls);
                if !ok {
                    out.transitions.add_at(i, j, IOB_MASK_PENALTY);
                }
            }
        }
        out
    }

    fn check(&self, emissions: &Matrix) -> Result<()> {
        if emissions.rows() == 0 {
            return Err(Error::EmptySequence);
        }
        let k = self.num_labels();
        if emissions.cols() != k || self.end.len() != k || self.transitions.shape() != (k, k) {
            return Err(Error::Shape(format!(
                "emissions {:?} against {k} labels",
                emissions.shape()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedPath {
    pub labels: Vec<usize>,
    pub score: f64,
}

/// Unnormalized score of one label path.
pub fn path_score(emissions: &Matrix, crf: &CrfParams, labels: &[usize]) -> f64 {
    let mut s = crf.start[labels[0]] + crf.end[labels[labels.len() - 1]];
    for (t, &y) in labels.iter().enumerate() {
        s += emissions.get(t, y);
        if t > 0 {
            s += crf.transitions.get(labels[t - 1], y);
        }
    }
    s
}

fn forward_table(emissions: &Matrix, crf: &CrfParams) -> Matrix {
    let (l, k) = emissions.shape();
    let mut alpha = Matrix::zeros(l, k);
    for j in 0..k {
        alpha.set(0, j, crf.start[j] + emissions.get(0, j));
    }
    let mut buf = vec![0.0; k];
    for t in 1..l {
        for j in 0..k {
            for (i, b) in buf.iter_mut().enumerate() {
                *b = alpha.get(t - 1, i) + crf.transitions.get(i, j);
            }
            alpha.set(t, j, log_sum_exp(&buf) + emissions.get(t, j));
        }
    }
    alpha
}

fn backward_table(emissions: &Matrix, crf: &CrfParams) -> Matrix {
    let (l, k) = emissions.shape();
    let mut beta = Matrix::zeros(l, k);
    beta.row_mut(l - 1).copy_from_slice(&crf.end);
    let mut buf = vec![0.0; k];
    for t in (0..l - 1).rev() {
        for i in 0..k {
            for (j, b) in buf.iter_mut().enumerate() {
                *b = crf.transitions.get(i, j) + emissions.get(t + 1, j) + beta.get(t + 1, j);
            }
            beta.set(t, i, log_sum_exp(&buf));
        }
    }
    beta
}

fn log_z_from_alpha(alpha: &Matrix, crf: &CrfParams) -> f64 {
    let last = alpha.rows() - 1;
    let terms: Vec<f64> = (0..alpha.cols()).map(|j| alpha.get(last, j) + crf.end[j]).collect();
    log_sum_exp(&terms)
}

/// Log of the sum of `exp(score)` over all `K^L` label paths.
pub fn log_partition(emissions: &Matrix, crf: &CrfParams) -> Result<f64> {
    crf.check(emissions)?;
    Ok(log_z_from_alpha(&forward_table(emissions, crf), crf))
}

fn enumerate_paths(emissions: &Matrix, crf: &CrfParams, mut visit: impl FnMut(&[usize], f64)) -> Result<()> {
    crf.check(emissions)?;
    let (l, k) = emissions.shape();
    let paths = (k as f64).powi(l as i32);
    if paths > MAX_ENUMERATED_PATHS {
        return Err(Error::TooLarge { paths });
    }
    // odometer in lexicographic order
    let mut labels = vec![0usize; l];
    loop {
        visit(&labels, path_score(emissions, crf, &labels));
        let mut pos = l;
        loop {
            if pos == 0 {
                return Ok(());
            }
            pos -= 1;
            labels[pos] += 1;
            if labels[pos] < k {
                break;
            }
            labels[pos] = 0;
        }
    }
}

/// Reference log-partition by explicit enumeration.
pub fn brute_force_log_partition(emissions: &Matrix, crf: &CrfParams) -> Result<f64> {
    let mut scores = Vec::new();
    enumerate_paths(emissions, crf, |_, s| scores.push(s))?;
    Ok(log_sum_exp(&scores))
}

/// Reference best path; exact ties go to the lexicographically smallest sequence.
pub fn brute_force_best(emissions: &Matrix, crf: &CrfParams) -> Result<DecodedPath> {
    let mut best = DecodedPath {
        labels: Vec::new(),
        score: f64::NEG_INFINITY,
    };
    enumerate_paths(emissions, crf, |labels, s| {
        if s > best.score {
            best = DecodedPath {
                labels: labels.to_vec(),
                score: s,
            };
        }
    })?;
    Ok(best)
}

fn check_gold(gold: &[usize], emissions: &Matrix) -> Result<()> {
    if gold.len() != emissions.rows() {
        return Err(Error::Shape(format!(
            "{} gold labels for {} positions",
            gold.len(),
            emissions.rows()
        )));
    }
    let k = emissions.cols();
    if let Some(&label) = gold.iter().find(|&&y| y >= k) {
        return Err(Error::LabelOutOfRange { label, num_labels: k });
    }
    Ok(())
}

/// Negative log-likelihood of the gold path.
pub fn nll(emissions: &Matrix, crf: &CrfParams, gold: &[usize]) -> Result<f64> {
    crf.check(emissions)?;
    check_gold(gold, emissions)?;
    Ok(log_partition(emissions, crf)? - path_score(emissions, crf, gold))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrfGradients {
    pub nll: f64,
    pub emissions: Matrix,
    pub transitions: Matrix,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    /// Per-position label marginals under the model.
    pub marginals: Matrix,
}

/// NLL and its gradients: model expectations minus gold counts.
pub fn nll_gradients(emissions: &Matrix, crf: &CrfParams, gold: &[usize]) -> Result<CrfGradients> {
    crf.check(emissions)?;
    check_gold(gold, emissions)?;
    let (l, k) = emissions.shape();
    let alpha = forward_table(emissions, crf);
    let beta = backward_table(emissions, crf);
    let log_z = log_z_from_alpha(&alpha, crf);

    let mut marginals = Matrix::zeros(l, k);
    for t in 0..l {
        for j in 0..k {
            marginals.set(t, j, (alpha.get(t, j) + beta.get(t, j) - log_z).exp());
        }
    }

    let mut d_trans = Matrix::zeros(k, k);
    for t in 1..l {
        for i in 0..k {
            let a = alpha.get(t - 1, i) - log_z;
            for j in 0..k {
                let p = (a + crf.transitions.get(i, j) + emissions.get(t, j) + beta.get(t, j)).exp();
                d_trans.add_at(i, j, p);
            }
        }
        d_trans.add_at(gold[t - 1], gold[t], -1.0);
    }

    let mut d_emit = marginals.clone();
    for (t, &y) in gold.iter().enumerate() {
        d_emit.add_at(t, y, -1.0);
    }
    let mut d_start = marginals.row(0).to_vec();
    d_start[gold[0]] -= 1.0;
    let mut d_end = marginals.row(l - 1).to_vec();
    d_end[gold[l - 1]] -= 1.0;

    Ok(CrfGradients {
        nll: log_z - path_score(emissions, crf, gold),
        emissions: d_emit,
        transitions: d_trans,
        start: d_start,
        end: d_end,
        marginals,
    })
}

/// Maximum-score path. Ties pick the smallest label index, both for the
/// final label and for each backpointer.
pub fn viterbi(emissions: &Matrix, crf: &CrfParams) -> Result<DecodedPath> {
    crf.check(emissions)?;
    let (l, k) = emissions.shape();
    let mut delta: Vec<f64> = (0..k).map(|j| crf.start[j] + emissions.get(0, j)).collect();
    let mut back = vec![vec![0usize; k]; l];
    let mut next = vec![0.0; k];
    for t in 1..l {
        for j in 0..k {
            let mut best_i = 0;
            let mut best = f64::NEG_INFINITY;
            for (i, &d) in delta.iter().enumerate() {
                let s = d + crf.transitions.get(i, j);
                if s > best {
                    best = s;
                    best_i = i;
                }
            }
            back[t][j] = best_i;
            next[j] = best + emissions.get(t, j);
        }
        std::mem::swap(&mut delta, &mut next);
    }
    let mut last = 0;
    let mut best = f64::NEG_INFINITY;
    for j in 0..k {
        let s = delta[j] + crf.end[j];
        if s > best {
            best = s;
            last = j;
        }
    }
    let mut labels = vec![0; l];
    labels[l - 1] = last;
    for t in (1..l).rev() {
        labels[t - 1] = back[t][labels[t]];
    }
    Ok(DecodedPath {
        score: path_score(emissions, crf, &labels),
        labels,
    })
}
