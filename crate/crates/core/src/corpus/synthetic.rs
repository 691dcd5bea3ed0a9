//! Templated medication-line corpora with feature sidecars.
//!
//! The clinical corpora this tagger targets are access-restricted, so tests
//! and demos run on generated documents. Mention counts per document follow
//! configurable per-class rates (defaults are the training-set averages of
//! the shared task) and surface forms come from a small clinical lexicon,
//! optionally extended with pseudo-words.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{write_standoff, Annotation, Document, EntityClass, Fragment};
use crate::error::{Error, Result};
use crate::features::{write_token_features, Assertion, ClampSemantic, ClampTag, CtakesTag, FeatureRow};

/// Mean mentions per document for each class, in [`EntityClass::ALL`] order.
pub const DEFAULT_RATES: [f64; 9] = [53.55, 22.08, 21.95, 20.73, 18.07, 13.93, 12.72, 3.17, 1.95];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub documents: usize,
    /// Mean mentions per document, indexed by [`EntityClass::index`].
    pub rates: [f64; 9],
    /// Probability that a Reason/ADE mention carries its informative tags.
    pub tag_correlation: f64,
    /// Reason and ADE share one lexicon and one connector word, so only the
    /// feature sidecar tells them apart.
    pub shared_condition_lexicon: bool,
    /// Pseudo-words added to each of the Drug, Reason and ADE lexicons.
    pub lexicon_expansion: usize,
    pub max_mentions_per_line: usize,
    /// Entity-free narrative lines per document.
    pub filler_lines: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            documents: 10,
            rates: DEFAULT_RATES,
            tag_correlation: 0.9,
            shared_condition_lexicon: false,
            lexicon_expansion: 0,
            max_mentions_per_line: 4,
            filler_lines: 2,
        }
    }
}

impl SyntheticConfig {
    pub fn with_rates(seed: u64, documents: usize, rates: [f64; 9]) -> Self {
        Self {
            seed,
            documents,
            rates,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(r) = self.rates.iter().find(|r| !r.is_finite() || **r < 0.0) {
            return Err(Error::Config(format!("mention rate {r} must be finite and >= 0")));
        }
        if !(0.0..=1.0).contains(&self.tag_correlation) {
            return Err(Error::Config(format!(
                "tag correlation {} must lie in [0, 1]",
                self.tag_correlation
            )));
        }
        if self.max_mentions_per_line == 0 {
            return Err(Error::Config("max mentions per line must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDocument {
    pub document: Document,
    pub features: Vec<FeatureRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub config: SyntheticConfig,
    pub documents: Vec<SyntheticDocument>,
}

impl SyntheticCorpus {
    /// Writes `<id>.txt`, `<id>.ann`, `<id>.feat` per document and a `manifest` of the generator settings.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: String, content: &str| {
            let path = dir.join(name);
            fs::write(&path, content).map_err(|e| Error::io(&path, e))
        };
        for d in &self.documents {
            let id = &d.document.id;
            write(format!("{id}.txt"), &d.document.text)?;
            write(format!("{id}.ann"), &write_standoff(&d.document))?;
            write(format!("{id}.feat"), &write_token_features(&d.features))?;
        }
        write("manifest".into(), &self.manifest())
    }

    pub fn manifest(&self) -> String {
        let c = &self.config;
        let rates = EntityClass::ALL
            .iter()
            .map(|cl| format!("{}:{}", cl.name(), c.rates[cl.index()]))
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "seed = {}\ndocuments = {}\nrates = {}\ntag_correlation = {}\nshared_condition_lexicon = {}\nlexicon_expansion = {}\nmax_mentions_per_line = {}\nfiller_lines = {}\n",
            c.seed,
            c.documents,
            rates,
            c.tag_correlation,
            c.shared_condition_lexicon,
            c.lexicon_expansion,
            c.max_mentions_per_line,
            c.filler_lines
        )
    }
}

const DRUGS: &[&str] = &[
    "coumadin",
    "vancomycin",
    "aspirin",
    "lasix",
    "prednisone",
    "o2",
    "vitamin k",
    "packed red blood cells",
];
const STRENGTHS: &[&str] = &[
    "8.6 mg",
    "2.5 mg/3 ml (0.083%)",
    "400 unit",
    "100 unit/ml",
    "5% (700 mg/patch)",
];
const FORMS: &[&str] = &["tablet", "capsule", "cream", "tablet sustained release 24 hr"];
const FREQUENCIES: &[&str] = &["daily", "prn", "q4h (every 4 hours) as needed", "qid"];
const ROUTES: &[&str] = &[
    "po",
    "iv",
    "by mouth",
    "inhalation",
    "p.o.",
    "topical",
    "nasal",
    "injection",
];
// "100 unit/ml" is left to Strength and "prn" to Frequency so that every
// surface form has a single class.
const DOSAGES: &[&str] = &["one (1)", "sliding scale", "taper", "2 units", "30 ml"];
const REASONS: &[&str] = &[
    "pain",
    "constipation",
    "anxiety",
    "nausea",
    "wheezing",
    "atrial fibrillation",
    "pneumonia",
    "hypotension",
];
const ADES: &[&str] = &[
    "rash",
    "thrombocytopenia",
    "toxicity",
    "diarrhea",
    "altered mental status",
];
const DURATIONS: &[&str] = &[
    "for 7 days",
    "for one week",
    "5 days",
    "few days",
    "chronically",
    "until his ciwa was less than 10",
];

const FILLERS: &[&str] = &[
    "patient was discharged home in stable condition .",
    "follow up with primary care physician in two weeks .",
    "vital signs were within normal limits",
    "no known drug allergies",
    "discharge medications :",
    "please call if symptoms worsen .",
];

const SYLLABLES: &[&str] = &[
    "ra", "to", "vi", "mel", "zan", "cor", "dex", "pra", "lin", "sul", "fen", "ox", "bu", "ter", "qua", "mo", "nil",
    "sap", "gro", "ke",
];

/// Canonical order of mentions within a medication line.
fn line_rank(c: EntityClass, shared: bool) -> usize {
    match c {
        EntityClass::Drug => 0,
        EntityClass::Strength => 1,
        EntityClass::Dosage => 2,
        EntityClass::Form => 3,
        EntityClass::Route => 4,
        EntityClass::Frequency => 5,
        EntityClass::Duration => 6,
        EntityClass::Reason => 7,
        EntityClass::Ade if shared => 7,
        EntityClass::Ade => 8,
    }
}

fn connector(c: EntityClass, shared: bool) -> Option<&'static str> {
    match c {
        EntityClass::Reason | EntityClass::Ade if shared => Some("with"),
        EntityClass::Reason => Some("for"),
        EntityClass::Ade => Some("complicated by"),
        _ => None,
    }
}

struct Lexicon {
    by_class: Vec<Vec<String>>,
}

impl Lexicon {
    fn new(expansion: usize, shared: bool) -> Self {
        let base = |w: &[&str]| w.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let mut by_class: Vec<Vec<String>> = EntityClass::ALL
            .iter()
            .map(|c| match c {
                EntityClass::Drug => base(DRUGS),
                EntityClass::Strength => base(STRENGTHS),
                EntityClass::Form => base(FORMS),
                EntityClass::Frequency => base(FREQUENCIES),
                EntityClass::Route => base(ROUTES),
                EntityClass::Dosage => base(DOSAGES),
                EntityClass::Reason => base(REASONS),
                EntityClass::Ade => base(ADES),
                EntityClass::Duration => base(DURATIONS),
            })
            .collect();

        // Pseudo-words are a function of `expansion` only, so corpora drawn
        // with different seeds share them.
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_1e81);
        let mut taken: std::collections::HashSet<String> = by_class.iter().flatten().cloned().collect();
        for class in [EntityClass::Drug, EntityClass::Reason, EntityClass::Ade] {
            let mut added = 0;
            while added < expansion {
                let n = rng.gen_range(2..=3);
                let word: String = (0..n).map(|_| *SYLLABLES.choose(&mut rng).unwrap()).collect();
                if taken.insert(word.clone()) {
                    by_class[class.index()].push(word);
                    added += 1;
                }
            }
        }
        if shared {
            let mut union = by_class[EntityClass::Reason.index()].clone();
            union.extend(by_class[EntityClass::Ade.index()].iter().cloned());
            by_class[EntityClass::Reason.index()] = union.clone();
            by_class[EntityClass::Ade.index()] = union;
        }
        Self { by_class }
    }

    fn pick<'a>(&'a self, class: EntityClass, rng: &mut ChaCha8Rng) -> &'a str {
        self.by_class[class.index()].choose(rng).expect("non-empty lexicon")
    }
}

fn random_tags(rng: &mut ChaCha8Rng) -> (ClampTag, CtakesTag) {
    let clamp = ClampTag::from_unit_index(rng.gen_range(0..19)).expect("in range");
    let ctakes = CtakesTag::ALL[rng.gen_range(0..CtakesTag::ALL.len())];
    (clamp, ctakes)
}

fn tags_for(class: EntityClass, p: f64, rng: &mut ChaCha8Rng) -> Option<(ClampTag, CtakesTag)> {
    let problem = ClampTag::Tagged(ClampSemantic::Problem, Assertion::Present);
    match class {
        EntityClass::Drug => Some((
            ClampTag::Tagged(ClampSemantic::Treatment, Assertion::Present),
            CtakesTag::Medication,
        )),
        EntityClass::Reason | EntityClass::Ade => {
            let informative = if class == EntityClass::Reason {
                (problem, CtakesTag::DiseaseDisorder)
            } else {
                (problem, CtakesTag::SignSymptom)
            };
            // draw both numbers unconditionally so the stream does not depend on p
            let u: f64 = rng.gen();
            let noise = random_tags(rng);
            Some(if u < p { informative } else { noise })
        }
        _ => None,
    }
}

/// Generates a deterministic corpus for `config`.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticCorpus> {
    config.validate()?;
    let shared = config.shared_condition_lexicon;
    let lexicon = Lexicon::new(config.lexicon_expansion, shared);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut documents = Vec::with_capacity(config.documents);

    for d in 0..config.documents {
        let mut mentions: Vec<EntityClass> = Vec::new();
        for class in EntityClass::ALL {
            let rate = config.rates[class.index()];
            let extra: f64 = rng.gen();
            let count = rate.floor() as usize + usize::from(extra < rate.fract());
            mentions.extend(std::iter::repeat_n(class, count));
        }
        mentions.shuffle(&mut rng);

        let mut lines: Vec<Vec<EntityClass>> = Vec::new();
        let mut rest = &mentions[..];
        while !rest.is_empty() {
            let take = rng.gen_range(1..=config.max_mentions_per_line).min(rest.len());
            let mut line = rest[..take].to_vec();
            line.sort_by_key(|&c| line_rank(c, shared));
            lines.push(line);
            rest = &rest[take..];
        }

        // None marks a filler line
        let mut layout: Vec<Option<Vec<EntityClass>>> = lines.into_iter().map(Some).collect();
        for _ in 0..config.filler_lines {
            let at = rng.gen_range(0..=layout.len());
            layout.insert(at, None);
        }

        let mut text = String::new();
        let mut len = 0usize;
        let mut annotations = Vec::new();
        let mut features = Vec::new();
        let push = |s: &str, text: &mut String, len: &mut usize| {
            if *len > 0 && !text.ends_with('\n') {
                text.push(' ');
                *len += 1;
            }
            let start = *len;
            text.push_str(s);
            *len += s.chars().count();
            (start, *len)
        };

        for (li, line) in layout.iter().enumerate() {
            if li > 0 {
                text.push('\n');
                len += 1;
            }
            match line {
                None => {
                    let filler = FILLERS.choose(&mut rng).expect("fillers");
                    push(filler, &mut text, &mut len);
                }
                Some(classes) => {
                    for &class in classes {
                        if let Some(c) = connector(class, shared) {
                            push(c, &mut text, &mut len);
                        }
                        let surface = lexicon.pick(class, &mut rng).to_string();
                        let (start, end) = push(&surface, &mut text, &mut len);
                        annotations.push(Annotation {
                            id: format!("T{}", annotations.len() + 1),
                            class,
                            fragments: vec![Fragment::new(start, end)],
                            text: surface,
                        });
                        if let Some((clamp, ctakes)) = tags_for(class, config.tag_correlation, &mut rng) {
                            features.push(FeatureRow {
                                start,
                                end,
                                clamp,
                                ctakes,
                            });
                        }
                    }
                }
            }
        }

        documents.push(SyntheticDocument {
            document: Document {
                id: format!("doc{:04}", d + 1),
                text,
                annotations,
            },
            features,
        });
    }

    Ok(SyntheticCorpus {
        config: config.clone(),
        documents,
    })
}
