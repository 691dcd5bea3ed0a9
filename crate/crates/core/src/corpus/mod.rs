//! Documents, standoff annotations, tokens, segments and IOB labels.

mod iob;
mod segment;
mod standoff;
pub mod synthetic;
mod tokenize;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use iob::{iob_to_spans, spans_to_iob, IobEncoding};
pub use segment::{segment, segment_with_cap, MAX_SEGMENT_TOKENS};
pub use standoff::{load_corpus_dir, read_standoff, write_standoff, Standoff};
pub use synthetic::{generate_synthetic, SyntheticConfig, SyntheticCorpus, SyntheticDocument, DEFAULT_RATES};
pub use tokenize::tokenize;

/// The nine drug-related entity types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntityClass {
    Drug,
    Strength,
    Form,
    Frequency,
    Route,
    Dosage,
    Reason,
    #[serde(rename = "ADE")]
    Ade,
    Duration,
}

impl EntityClass {
    pub const COUNT: usize = 9;

    pub const ALL: [EntityClass; 9] = [
        EntityClass::Drug,
        EntityClass::Strength,
        EntityClass::Form,
        EntityClass::Frequency,
        EntityClass::Route,
        EntityClass::Dosage,
        EntityClass::Reason,
        EntityClass::Ade,
        EntityClass::Duration,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EntityClass::Drug => "Drug",
            EntityClass::Strength => "Strength",
            EntityClass::Form => "Form",
            EntityClass::Frequency => "Frequency",
            EntityClass::Route => "Route",
            EntityClass::Dosage => "Dosage",
            EntityClass::Reason => "Reason",
            EntityClass::Ade => "ADE",
            EntityClass::Duration => "Duration",
        }
    }

    /// Position in [`EntityClass::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for EntityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownClass(pub String);

impl FromStr for EntityClass {
    type Err = UnknownClass;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| UnknownClass(s.to_string()))
    }
}

/// Half-open character range `[start, end)` counted in Unicode scalar values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Fragment {
    pub start: usize,
    pub end: usize,
}

impl Fragment {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// Number of shared characters.
    pub fn overlap(&self, start: usize, end: usize) -> usize {
        self.end.min(end).saturating_sub(self.start.max(start))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: String,
    pub class: EntityClass,
    /// Sorted, non-overlapping, each non-empty.
    pub fragments: Vec<Fragment>,
    pub text: String,
}

impl Annotation {
    pub fn start(&self) -> usize {
        self.fragments.first().map_or(0, |f| f.start)
    }

    pub fn end(&self) -> usize {
        self.fragments.last().map_or(0, |f| f.end)
    }

    /// Total number of covered characters across fragments.
    pub fn covered_len(&self) -> usize {
        self.fragments.iter().map(Fragment::len).sum()
    }

    /// Characters shared between the fragment union and `[start, end)`.
    pub fn overlap_with_range(&self, start: usize, end: usize) -> usize {
        self.fragments.iter().map(|f| f.overlap(start, end)).sum()
    }

    /// True when the fragment unions share at least one character.
    pub fn overlaps(&self, other: &Annotation) -> bool {
        self.fragments
            .iter()
            .any(|f| other.overlap_with_range(f.start, f.end) > 0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub annotations: Vec<Annotation>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            annotations: Vec::new(),
        }
    }

    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }

    /// Surface string of the fragments, joined by one space.
    pub fn surface(&self, fragments: &[Fragment]) -> String {
        let chars: Vec<char> = self.text.chars().collect();
        fragments
            .iter()
            .map(|f| chars[f.start..f.end].iter().collect::<String>())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub start: usize,
    pub end: usize,
}

impl Token {
    pub fn new(surface: impl Into<String>, start: usize, end: usize) -> Self {
        Self {
            surface: surface.into(),
            start,
            end,
        }
    }
}

/// One IOB label; index layout is `O = 0`, `B-c = 1 + 2c`, `I-c = 2 + 2c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IobLabel {
    O,
    B(EntityClass),
    I(EntityClass),
}

impl IobLabel {
    pub const COUNT: usize = 2 * EntityClass::COUNT + 1;

    pub fn index(self) -> usize {
        match self {
            IobLabel::O => 0,
            IobLabel::B(c) => 1 + 2 * c.index(),
            IobLabel::I(c) => 2 + 2 * c.index(),
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        if i == 0 {
            return Some(IobLabel::O);
        }
        let class = EntityClass::from_index((i - 1) / 2)?;
        Some(if i % 2 == 1 {
            IobLabel::B(class)
        } else {
            IobLabel::I(class)
        })
    }

    pub fn all() -> impl Iterator<Item = IobLabel> {
        (0..Self::COUNT).filter_map(Self::from_index)
    }

    pub fn class(self) -> Option<EntityClass> {
        match self {
            IobLabel::O => None,
            IobLabel::B(c) | IobLabel::I(c) => Some(c),
        }
    }
}

impl fmt::Display for IobLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IobLabel::O => f.write_str("O"),
            IobLabel::B(c) => write!(f, "B-{c}"),
            IobLabel::I(c) => write!(f, "I-{c}"),
        }
    }
}

impl FromStr for IobLabel {
    type Err = UnknownClass;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "O" {
            return Ok(IobLabel::O);
        }
        match s.split_once('-') {
            Some(("B", c)) => Ok(IobLabel::B(c.parse()?)),
            Some(("I", c)) => Ok(IobLabel::I(c.parse()?)),
            _ => Err(UnknownClass(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub doc_id: String,
    pub tokens: Vec<Token>,
    /// Same length as `tokens` when present.
    pub labels: Option<Vec<IobLabel>>,
}

/// Non-fatal data problems found while reading or encoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Warning {
    /// The surface column of a standoff line disagrees with the text at its offsets.
    SurfaceMismatch {
        line: usize,
        id: String,
        expected: String,
        found: String,
    },
    /// Two annotations claim the same token; `kept` won.
    LabelConflict {
        token: usize,
        kept: String,
        dropped: String,
    },
}
