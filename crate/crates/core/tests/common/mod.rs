//! Double-double reference loss for finite-difference gradient checks.
//!
//! Central differences at `eps = 1e-5` on an `f64` loss carry about
//! `1e-16 · |loss| / eps` of roundoff, which swamps coordinates whose true
//! gradient is below roughly `1e-6`. This independent reimplementation of
//! the tagger loss runs in ~106-bit arithmetic, so the same differences
//! resolve every coordinate.

#![allow(dead_code)]

use medseq::network::{EncodedSequence, Fault, TagStreams, Tagger};
use twofloat::TwoFloat as T;

fn t(x: f64) -> T {
    T::from(x)
}

/// `e^x` by range reduction, a short Taylor series and repeated squaring.
pub fn exp(x: T) -> T {
    if x.hi() < -700.0 {
        return t(0.0);
    }
    let k = (x.hi() / std::f64::consts::LN_2).round();
    let r = x - twofloat::consts::LN_2 * k;
    let s = r / 1024.0;
    // e^s - 1 with |s| < 4e-4: ten terms reach double-double precision.
    let mut p = t(0.0);
    for n in (1..=10).rev() {
        p = (p + 1.0) * s / n as f64;
    }
    for _ in 0..10 {
        p = p * 2.0 + p * p;
    }
    (p + 1.0) * 2f64.powi(k as i32)
}

/// Natural log by Newton steps on [`exp`].
pub fn ln(x: T) -> T {
    let mut y = t(x.hi().ln());
    for _ in 0..2 {
        y = y + x * exp(-y) - 1.0;
    }
    y
}

pub fn sigmoid(x: T) -> T {
    if x.hi() >= 0.0 {
        t(1.0) / (exp(-x) + 1.0)
    } else {
        let e = exp(x);
        e / (e + 1.0)
    }
}

pub fn tanh(x: T) -> T {
    if x.hi() < 0.0 {
        return -tanh(-x);
    }
    let e = exp(x * -2.0);
    (t(1.0) - e) / (e + 1.0)
}

/// Parameters as double-double values, laid out like the tagger's tensors.
struct Params {
    tensors: Vec<Vec<T>>,
    names: Vec<&'static str>,
    shapes: Vec<(usize, usize)>,
}

impl Params {
    fn new(tagger: &Tagger, bump: Option<(usize, usize, f64)>) -> Self {
        let mut tensors: Vec<Vec<T>> = tagger
            .params
            .tensors()
            .iter()
            .map(|v| v.iter().map(|&x| t(x)).collect())
            .collect();
        if let Some((ti, c, delta)) = bump {
            let orig = tagger.params.tensors()[ti][c];
            tensors[ti][c] = T::new_add(orig, delta);
        }
        let shapes = tagger.params.tensor_shapes();
        Self {
            tensors,
            names: shapes.iter().map(|s| s.0).collect(),
            shapes: shapes.iter().map(|s| (s.1, s.2)).collect(),
        }
    }

    fn get(&self, name: &str) -> (&[T], usize) {
        let i = self.names.iter().position(|n| *n == name).expect("known tensor");
        (&self.tensors[i], self.shapes[i].1)
    }
}

fn lstm(p: &Params, prefix: &str, xs: &[Vec<T>], reverse: bool) -> Vec<Vec<T>> {
    let (w, d) = p.get(&format!("{prefix}.w"));
    let (u, hd) = p.get(&format!("{prefix}.u"));
    let (b, _) = p.get(&format!("{prefix}.b"));
    let l = xs.len();
    let mut out = vec![Vec::new(); l];
    let mut h = vec![t(0.0); hd];
    let mut c = vec![t(0.0); hd];
    let order: Vec<usize> = if reverse {
        (0..l).rev().collect()
    } else {
        (0..l).collect()
    };
    for pos in order {
        let x = &xs[pos];
        let a: Vec<T> = (0..4 * hd)
            .map(|r| {
                let mut s = b[r];
                for k in 0..d {
                    s += w[r * d + k] * x[k];
                }
                for k in 0..hd {
                    s += u[r * hd + k] * h[k];
                }
                s
            })
            .collect();
        for j in 0..hd {
            let i = sigmoid(a[j]);
            let f = sigmoid(a[hd + j]);
            let g = tanh(a[2 * hd + j]);
            let o = sigmoid(a[3 * hd + j]);
            c[j] = f * c[j] + i * g;
            h[j] = o * tanh(c[j]);
        }
        out[pos] = h.clone();
    }
    out
}

/// CRF negative log-likelihood of `gold`, optionally with one parameter
/// shifted by `delta` (exactly, in double-double).
pub fn loss(tagger: &Tagger, seq: &EncodedSequence, gold: &[usize], bump: Option<(usize, usize, f64)>) -> T {
    assert!(
        !tagger.config.mask_transitions,
        "reference loss covers the unmasked CRF"
    );
    let p = Params::new(tagger, bump);
    let l = seq.len();
    let (we, wd) = p.get("word_emb");
    let xs: Vec<Vec<T>> = (0..l)
        .map(|i| {
            let mut x: Vec<T> = we[seq.words[i] * wd..(seq.words[i] + 1) * wd].to_vec();
            if tagger.config.augment {
                assert_eq!(tagger.config.tag_streams, TagStreams::Separate);
                let (ce, cd) = p.get("clamp_emb");
                x.extend_from_slice(&ce[seq.clamp[i] * cd..(seq.clamp[i] + 1) * cd]);
                let (ke, kd) = p.get("ctakes_emb");
                x.extend_from_slice(&ke[seq.ctakes[i] * kd..(seq.ctakes[i] + 1) * kd]);
            }
            x
        })
        .collect();
    let hf = lstm(&p, "fwd", &xs, false);
    let hb = lstm(&p, "bwd", &xs, true);
    let (pw, two_h) = p.get("proj.w");
    let (pb, _) = p.get("proj.b");
    let k = pb.len();
    let em: Vec<Vec<T>> = (0..l)
        .map(|i| {
            let hcat: Vec<T> = hf[i].iter().chain(&hb[i]).copied().collect();
            (0..k)
                .map(|r| {
                    let mut s = pb[r];
                    for j in 0..two_h {
                        s += pw[r * two_h + j] * hcat[j];
                    }
                    s
                })
                .collect()
        })
        .collect();
    let (tr, _) = p.get("crf.transitions");
    let (start, _) = p.get("crf.start");
    let (end, _) = p.get("crf.end");

    let mut gold_score = start[gold[0]] + end[gold[l - 1]];
    for i in 0..l {
        gold_score += em[i][gold[i]];
        if i > 0 {
            gold_score += tr[gold[i - 1] * k + gold[i]];
        }
    }
    // Forward recursion in probability space; toy scores stay far from overflow.
    let etr: Vec<T> = tr.iter().map(|&v| exp(v)).collect();
    let mut alpha: Vec<T> = (0..k).map(|j| exp(start[j] + em[0][j])).collect();
    for row in em.iter().skip(1) {
        alpha = (0..k)
            .map(|j| {
                let mut s = t(0.0);
                for i in 0..k {
                    s += alpha[i] * etr[i * k + j];
                }
                s * exp(row[j])
            })
            .collect();
    }
    let mut z = t(0.0);
    for j in 0..k {
        z += alpha[j] * exp(end[j]);
    }
    ln(z) - gold_score
}

/// Largest relative error, `|a - n| / max(1e-12, |a| + |n|)`, between the
/// tagger's analytic gradient (with `fault` injected) and central
/// differences of the reference loss over every coordinate.
pub fn max_relative_error(tagger: &Tagger, seq: &EncodedSequence, gold: &[usize], eps: f64, fault: Fault) -> f64 {
    let mut grads = tagger.params.zeros_like();
    tagger
        .loss_and_gradients(seq, gold, &mut grads, 1.0, fault)
        .expect("non-empty toy sequence");
    let mut worst: f64 = 0.0;
    for (ti, g) in grads.tensors().iter().enumerate() {
        for (c, &a) in g.iter().enumerate() {
            let up = loss(tagger, seq, gold, Some((ti, c, eps)));
            let down = loss(tagger, seq, gold, Some((ti, c, -eps)));
            let n = ((up - down) / (2.0 * eps)).hi();
            worst = worst.max((a - n).abs() / (a.abs() + n.abs()).max(1e-12));
        }
    }
    worst
}
