//! Span-level scoring in the n2c2 style (strict and lenient matching,
//! per-class and micro/macro precision, recall and F1) and token-level
//! confusion matrices.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{Annotation, EntityClass, IobLabel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    /// Same class and identical fragment lists.
    Strict,
    /// Same class and at least one shared character.
    Lenient,
}

impl MatchMode {
    pub fn matches(self, gold: &Annotation, pred: &Annotation) -> bool {
        gold.class == pred.class
            && match self {
                MatchMode::Strict => gold.fragments == pred.fragments,
                MatchMode::Lenient => gold.overlaps(pred),
            }
    }
}

/// How gold and predicted spans are paired one-to-one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pairing {
    /// Gold in ascending start order takes the first unmatched compatible prediction.
    #[default]
    Greedy,
    /// Maximum cardinality bipartite matching.
    Bipartite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub class: EntityClass,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ClassCounts {
    pub fn new(class: EntityClass) -> Self {
        Self {
            class,
            tp: 0,
            fp: 0,
            fn_: 0,
        }
    }

    pub fn add(&mut self, other: &ClassCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanMatch {
    pub counts: ClassCounts,
    /// `(gold index, pred index)` of matched pairs.
    pub pairs: Vec<(usize, usize)>,
}

/// Pairs gold and predicted annotations of one class.
pub fn match_spans(
    class: EntityClass,
    gold: &[&Annotation],
    pred: &[&Annotation],
    mode: MatchMode,
    pairing: Pairing,
) -> SpanMatch {
    let compatible = |g: usize, p: usize| mode.matches(gold[g], pred[p]);
    let mut pred_owner: Vec<Option<usize>> = vec![None; pred.len()];

    match pairing {
        Pairing::Greedy => {
            let mut gold_order: Vec<usize> = (0..gold.len()).collect();
            gold_order.sort_by_key(|&g| (gold[g].start(), g));
            let mut pred_order: Vec<usize> = (0..pred.len()).collect();
            pred_order.sort_by_key(|&p| (pred[p].start(), p));
            for g in gold_order {
                if let Some(&p) = pred_order
                    .iter()
                    .find(|&&p| pred_owner[p].is_none() && compatible(g, p))
                {
                    pred_owner[p] = Some(g);
                }
            }
        }
        Pairing::Bipartite => {
            fn augment(g: usize, adj: &[Vec<usize>], owner: &mut [Option<usize>], seen: &mut [bool]) -> bool {
                for &p in &adj[g] {
                    if seen[p] {
                        continue;
                    }
                    seen[p] = true;
                    if owner[p].is_none_or(|o| augment(o, adj, owner, seen)) {
                        owner[p] = Some(g);
                        return true;
                    }
                }
                false
            }
            let adj: Vec<Vec<usize>> = (0..gold.len())
                .map(|g| (0..pred.len()).filter(|&p| compatible(g, p)).collect())
                .collect();
            for g in 0..gold.len() {
                let mut seen = vec![false; pred.len()];
                augment(g, &adj, &mut pred_owner, &mut seen);
            }
        }
    }

    let mut pairs: Vec<(usize, usize)> = pred_owner
        .iter()
        .enumerate()
        .filter_map(|(p, g)| g.map(|g| (g, p)))
        .collect();
    pairs.sort_unstable();
    let tp = pairs.len() as u64;
    SpanMatch {
        counts: ClassCounts {
            class,
            tp,
            fp: pred.len() as u64 - tp,
            fn_: gold.len() as u64 - tp,
        },
        pairs,
    }
}

/// Per-class counts for one document, in [`EntityClass::ALL`] order.
pub fn count_document(gold: &[Annotation], pred: &[Annotation], mode: MatchMode, pairing: Pairing) -> Vec<ClassCounts> {
    EntityClass::ALL
        .iter()
        .map(|&c| {
            let g: Vec<&Annotation> = gold.iter().filter(|a| a.class == c).collect();
            let p: Vec<&Annotation> = pred.iter().filter(|a| a.class == c).collect();
            match_spans(c, &g, &p, mode, pairing).counts
        })
        .collect()
}

/// Pools per-class counts over document pairs `(gold, pred)`.
pub fn count_corpus<'a>(
    docs: impl IntoIterator<Item = (&'a [Annotation], &'a [Annotation])>,
    mode: MatchMode,
    pairing: Pairing,
) -> Vec<ClassCounts> {
    let mut total: Vec<ClassCounts> = EntityClass::ALL.iter().map(|&c| ClassCounts::new(c)).collect();
    for (g, p) in docs {
        for (t, c) in total.iter_mut().zip(count_document(g, p, mode, pairing)) {
            t.add(&c);
        }
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    /// Percentages.
    pub p: f64,
    pub r: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let ratio = |n: u64, d: u64| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        let p = ratio(tp, tp + fp);
        let r = ratio(tp, tp + fn_);
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        Self {
            p: 100.0 * p,
            r: 100.0 * r,
            f1: 100.0 * f1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    #[serde(flatten)]
    pub counts: ClassCounts,
    #[serde(flatten)]
    pub scores: Prf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MicroScore {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    #[serde(flatten)]
    pub scores: Prf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: MatchMode,
    pub per_class: Vec<ClassScore>,
    pub micro: MicroScore,
    /// Unweighted mean of the per-class values.
    #[serde(rename = "macro")]
    pub macro_: Prf,
}

/// Scores pooled counts. Macro averages run over exactly the classes given
/// (all nine from [`count_corpus`], with absent classes scoring 0).
pub fn score(counts: &[ClassCounts], mode: MatchMode) -> EvalReport {
    let per_class: Vec<ClassScore> = counts
        .iter()
        .map(|c| ClassScore {
            counts: *c,
            scores: Prf::from_counts(c.tp, c.fp, c.fn_),
        })
        .collect();
    let (tp, fp, fn_) = counts
        .iter()
        .fold((0, 0, 0), |(a, b, c), x| (a + x.tp, b + x.fp, c + x.fn_));
    let n = per_class.len().max(1) as f64;
    let mean = |f: fn(&Prf) -> f64| per_class.iter().map(|c| f(&c.scores)).sum::<f64>() / n;
    EvalReport {
        mode,
        micro: MicroScore {
            tp,
            fp,
            fn_,
            scores: Prf::from_counts(tp, fp, fn_),
        },
        macro_: Prf {
            p: mean(|s| s.p),
            r: mean(|s| s.r),
            f1: mean(|s| s.f1),
        },
        per_class,
    }
}

/// Row/column order of confusion matrices.
pub const CONFUSION_ORDER: [Option<EntityClass>; 10] = [
    Some(EntityClass::Strength),
    Some(EntityClass::Frequency),
    Some(EntityClass::Form),
    Some(EntityClass::Route),
    Some(EntityClass::Drug),
    Some(EntityClass::Dosage),
    Some(EntityClass::Duration),
    Some(EntityClass::Reason),
    Some(EntityClass::Ade),
    None,
];

pub fn confusion_index(class: Option<EntityClass>) -> usize {
    CONFUSION_ORDER
        .iter()
        .position(|c| *c == class)
        .expect("every class has a slot")
}

/// Token counts, rows actual and columns predicted, in [`CONFUSION_ORDER`].
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenConfusion {
    pub matrix: [[u64; 10]; 10],
}

impl TokenConfusion {
    pub fn add(&mut self, other: &TokenConfusion) {
        for (r, o) in self.matrix.iter_mut().zip(&other.matrix) {
            for (a, b) in r.iter_mut().zip(o) {
                *a += b;
            }
        }
    }

    pub fn get(&self, actual: Option<EntityClass>, predicted: Option<EntityClass>) -> u64 {
        self.matrix[confusion_index(actual)][confusion_index(predicted)]
    }

    pub fn total(&self) -> u64 {
        self.matrix.iter().flatten().sum()
    }
}

/// Collapses IOB labels to classes and counts `(actual, predicted)` per token.
pub fn token_confusion(gold: &[IobLabel], pred: &[IobLabel]) -> Result<TokenConfusion> {
    if gold.len() != pred.len() {
        return Err(Error::Shape(format!(
            "{} gold labels against {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    let mut out = TokenConfusion::default();
    for (g, p) in gold.iter().zip(pred) {
        out.matrix[confusion_index(g.class())][confusion_index(p.class())] += 1;
    }
    Ok(out)
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Machine-readable report with scores rounded to two decimals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub mode: MatchMode,
    pub per_class: Vec<ClassScore>,
    pub micro: MicroScore,
    #[serde(rename = "macro")]
    pub macro_: Prf,
    pub confusion: [[u64; 10]; 10],
}

/// Renders a text table (classes by descending F1, then micro and macro
/// rows, then the confusion matrix) and the machine-readable record.
pub fn render_report(report: &EvalReport, confusion: &TokenConfusion) -> (String, ReportRecord) {
    let r2 = |s: &Prf| Prf {
        p: round2(s.p),
        r: round2(s.r),
        f1: round2(s.f1),
    };
    let record = ReportRecord {
        mode: report.mode,
        per_class: report
            .per_class
            .iter()
            .map(|c| ClassScore {
                counts: c.counts,
                scores: r2(&c.scores),
            })
            .collect(),
        micro: MicroScore {
            scores: r2(&report.micro.scores),
            ..report.micro
        },
        macro_: r2(&report.macro_),
        confusion: confusion.matrix,
    };

    let mode = match report.mode {
        MatchMode::Strict => "strict",
        MatchMode::Lenient => "lenient",
    };
    let mut out = String::new();
    let _ = writeln!(out, "Evaluation ({mode})");
    let _ = writeln!(
        out,
        "{:<18}{:>8}{:>8}{:>8}{:>8}{:>8}{:>8}",
        "Class", "P", "R", "F1", "TP", "FP", "FN"
    );
    let mut rows: Vec<&ClassScore> = report.per_class.iter().collect();
    rows.sort_by(|a, b| b.scores.f1.total_cmp(&a.scores.f1));
    for c in rows {
        let _ = writeln!(
            out,
            "{:<18}{:>8.2}{:>8.2}{:>8.2}{:>8}{:>8}{:>8}",
            c.counts.class.name(),
            c.scores.p,
            c.scores.r,
            c.scores.f1,
            c.counts.tp,
            c.counts.fp,
            c.counts.fn_
        );
    }
    let m = &report.micro;
    let _ = writeln!(
        out,
        "{:<18}{:>8.2}{:>8.2}{:>8.2}{:>8}{:>8}{:>8}",
        "Overall (micro)", m.scores.p, m.scores.r, m.scores.f1, m.tp, m.fp, m.fn_
    );
    let _ = writeln!(
        out,
        "{:<18}{:>8.2}{:>8.2}{:>8.2}",
        "Overall (macro)", report.macro_.p, report.macro_.r, report.macro_.f1
    );

    let name = |c: Option<EntityClass>| c.map_or("O", EntityClass::name);
    let _ = writeln!(out, "\nToken confusion (rows actual, columns predicted)");
    let _ = write!(out, "{:<10}", "");
    for c in CONFUSION_ORDER {
        let _ = write!(out, "{:>10}", name(c));
    }
    out.push('\n');
    for (i, row) in confusion.matrix.iter().enumerate() {
        let _ = write!(out, "{:<10}", name(CONFUSION_ORDER[i]));
        for v in row {
            let _ = write!(out, "{v:>10}");
        }
        out.push('\n');
    }
    (out, record)
}
