//! Token-level semantic tags produced by external clinical pipelines.
//!
//! Two tag streams are read from a sidecar file: a CLAMP-style stream
//! (semantic type plus an optional present/absent assertion) and a
//! cTAKES-style stream. Each stream is aligned onto tokens and mapped into
//! a closed vocabulary so it can be embedded next to the word vector.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Token;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClampSemantic {
    Problem,
    Treatment,
    Test,
    Temporal,
    Negation,
    SeverityDegree,
    BodyLocation,
    Change,
    Uncertainty,
}

impl ClampSemantic {
    pub const ALL: [ClampSemantic; 9] = [
        ClampSemantic::Problem,
        ClampSemantic::Treatment,
        ClampSemantic::Test,
        ClampSemantic::Temporal,
        ClampSemantic::Negation,
        ClampSemantic::SeverityDegree,
        ClampSemantic::BodyLocation,
        ClampSemantic::Change,
        ClampSemantic::Uncertainty,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ClampSemantic::Problem => "problem",
            ClampSemantic::Treatment => "treatment",
            ClampSemantic::Test => "test",
            ClampSemantic::Temporal => "temporal",
            ClampSemantic::Negation => "negation",
            ClampSemantic::SeverityDegree => "severity_degree",
            ClampSemantic::BodyLocation => "body_location",
            ClampSemantic::Change => "change",
            ClampSemantic::Uncertainty => "uncertainty",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Assertion {
    Present,
    Absent,
    None,
}

/// A CLAMP-style tag; the outside tag carries no assertion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub enum ClampTag {
    #[default]
    O,
    Tagged(ClampSemantic, Assertion),
}

impl ClampTag {
    /// Index in the closed CLAMP vocabulary: `O = 0`, then
    /// `(semantic, present)` / `(semantic, absent)` pairs. A tag without an
    /// assertion shares the `present` unit.
    pub fn unit_index(self) -> usize {
        match self {
            ClampTag::O => 0,
            ClampTag::Tagged(s, a) => 1 + 2 * (s as usize) + usize::from(a == Assertion::Absent),
        }
    }

    pub fn from_unit_index(i: usize) -> Option<Self> {
        if i == 0 {
            return Some(ClampTag::O);
        }
        let s = *ClampSemantic::ALL.get((i - 1) / 2)?;
        let a = if (i - 1) % 2 == 0 {
            Assertion::Present
        } else {
            Assertion::Absent
        };
        Some(ClampTag::Tagged(s, a))
    }
}

impl fmt::Display for ClampTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClampTag::O => f.write_str("-"),
            ClampTag::Tagged(s, Assertion::None) => f.write_str(s.name()),
            ClampTag::Tagged(s, Assertion::Present) => write!(f, "{}:present", s.name()),
            ClampTag::Tagged(s, Assertion::Absent) => write!(f, "{}:absent", s.name()),
        }
    }
}

impl FromStr for ClampTag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s == "-" || s == "O" {
            return Ok(ClampTag::O);
        }
        let (name, assertion) = match s.split_once(':') {
            None => (s, Assertion::None),
            Some((n, "present")) => (n, Assertion::Present),
            Some((n, "absent")) => (n, Assertion::Absent),
            Some(_) => return Err(s.to_string()),
        };
        ClampSemantic::ALL
            .iter()
            .find(|c| c.name() == name)
            .map(|&c| ClampTag::Tagged(c, assertion))
            .ok_or_else(|| s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub enum CtakesTag {
    #[default]
    O,
    Medication,
    DiseaseDisorder,
    SignSymptom,
    AnatomicalSite,
    Procedure,
}

impl CtakesTag {
    pub const ALL: [CtakesTag; 6] = [
        CtakesTag::O,
        CtakesTag::Medication,
        CtakesTag::DiseaseDisorder,
        CtakesTag::SignSymptom,
        CtakesTag::AnatomicalSite,
        CtakesTag::Procedure,
    ];

    pub fn unit_index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            CtakesTag::O => "-",
            CtakesTag::Medication => "Medication",
            CtakesTag::DiseaseDisorder => "DiseaseDisorder",
            CtakesTag::SignSymptom => "SignSymptom",
            CtakesTag::AnatomicalSite => "AnatomicalSite",
            CtakesTag::Procedure => "Procedure",
        }
    }
}

impl fmt::Display for CtakesTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CtakesTag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s == "-" || s == "O" {
            return Ok(CtakesTag::O);
        }
        CtakesTag::ALL
            .iter()
            .find(|c| c.name() == s)
            .copied()
            .ok_or_else(|| s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct TokenFeatures {
    pub clamp: ClampTag,
    pub ctakes: CtakesTag,
}

/// One row of a feature sidecar file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FeatureRow {
    pub start: usize,
    pub end: usize,
    pub clamp: ClampTag,
    pub ctakes: CtakesTag,
}

/// Parses sidecar content: `start \t end \t clamp[:assertion] \t ctakes`, `-` for no tag.
pub fn parse_token_features(content: &str) -> Result<Vec<FeatureRow>> {
    let mut rows = Vec::new();
    for (i, raw) in content.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(Error::parse(
                line_no,
                format!("expected 4 tab-separated columns, found {}", cols.len()),
            ));
        }
        let start: usize = cols[0]
            .parse()
            .map_err(|_| Error::parse(line_no, format!("bad start `{}`", cols[0])))?;
        let end: usize = cols[1]
            .parse()
            .map_err(|_| Error::parse(line_no, format!("bad end `{}`", cols[1])))?;
        if start > end {
            return Err(Error::parse(line_no, "start after end"));
        }
        let clamp = cols[2]
            .parse()
            .map_err(|name| Error::UnknownTag { line: line_no, name })?;
        let ctakes = cols[3]
            .parse()
            .map_err(|name| Error::UnknownTag { line: line_no, name })?;
        rows.push(FeatureRow {
            start,
            end,
            clamp,
            ctakes,
        });
    }
    Ok(rows)
}

pub fn read_token_features(path: &Path) -> Result<Vec<FeatureRow>> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_token_features(&content)
}

pub fn write_token_features(rows: &[FeatureRow]) -> String {
    rows.iter()
        .map(|r| format!("{}\t{}\t{}\t{}\n", r.start, r.end, r.clamp, r.ctakes))
        .collect()
}

/// Assigns each token the tags of the rows overlapping it.
///
/// Streams are resolved independently: among rows carrying a tag for a
/// stream, the one sharing the most characters with the token wins, ties
/// going to the first row in sorted order. Untagged tokens get `(O, O)`.
pub fn align_features(tokens: &[Token], rows: &[FeatureRow]) -> Vec<TokenFeatures> {
    let mut sorted = rows.to_vec();
    sorted.sort();
    tokens
        .iter()
        .map(|tok| {
            let mut out = TokenFeatures::default();
            let mut best_clamp = 0;
            let mut best_ctakes = 0;
            for row in sorted.iter().take_while(|r| r.start < tok.end) {
                let overlap = row.end.min(tok.end).saturating_sub(row.start.max(tok.start));
                if overlap == 0 {
                    continue;
                }
                if row.clamp != ClampTag::O && overlap > best_clamp {
                    best_clamp = overlap;
                    out.clamp = row.clamp;
                }
                if row.ctakes != CtakesTag::O && overlap > best_ctakes {
                    best_ctakes = overlap;
                    out.ctakes = row.ctakes;
                }
            }
            out
        })
        .collect()
}

/// Closed-world tag vocabularies; sizes do not depend on observed data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TagVocabularies {
    pub clamp_size: usize,
    pub ctakes_size: usize,
}

impl TagVocabularies {
    pub const CLAMP_SIZE: usize = 1 + 2 * 9;
    pub const CTAKES_SIZE: usize = 6;
    /// Size of the single table used when both streams share one embedding.
    pub const MERGED_SIZE: usize = Self::CLAMP_SIZE + Self::CTAKES_SIZE - 1;

    pub fn clamp_index(&self, tag: ClampTag) -> usize {
        tag.unit_index()
    }

    pub fn ctakes_index(&self, tag: CtakesTag) -> usize {
        tag.unit_index()
    }

    /// Index of a cTAKES unit inside the merged table (after all CLAMP units).
    pub fn merged_ctakes_index(&self, tag: CtakesTag) -> usize {
        match tag {
            CtakesTag::O => 0,
            t => Self::CLAMP_SIZE + t.unit_index() - 1,
        }
    }
}

/// Both vocabularies always enumerate the full tag sets, whatever is observed.
pub fn build_tag_vocab<'a>(_sequences: impl IntoIterator<Item = &'a [TokenFeatures]>) -> TagVocabularies {
    TagVocabularies {
        clamp_size: TagVocabularies::CLAMP_SIZE,
        ctakes_size: TagVocabularies::CTAKES_SIZE,
    }
}
