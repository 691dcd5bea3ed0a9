use std::fs;
use std::path::Path;

use super::{Annotation, Document, EntityClass, Fragment, Warning};
use crate::error::{Error, Result};

/// A parsed document plus any non-fatal findings.
#[derive(Debug, Clone)]
pub struct Standoff {
    pub document: Document,
    pub warnings: Vec<Warning>,
}

/// Parses a standoff annotation file against its text.
///
/// Only `T` lines are read. Offsets are authoritative: when the surface
/// column disagrees with the text, the annotation keeps the text at its
/// offsets and a [`Warning::SurfaceMismatch`] is recorded.
pub fn read_standoff(doc_id: &str, text: &str, ann: &str) -> Result<Standoff> {
    let chars: Vec<char> = text.chars().collect();
    let mut annotations = Vec::new();
    let mut warnings = Vec::new();

    for (i, raw) in ann.split('\n').enumerate() {
        let line_no = i + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if !line.starts_with('T') {
            continue;
        }
        let mut fields = line.splitn(3, '\t');
        let id = fields.next().unwrap_or_default();
        let (Some(body), Some(surface)) = (fields.next(), fields.next()) else {
            return Err(Error::parse(line_no, "expected three tab-separated fields"));
        };
        let (class_name, offsets) = body
            .split_once(' ')
            .ok_or_else(|| Error::parse(line_no, "missing offsets"))?;
        let class: EntityClass = class_name.parse().map_err(|_| Error::UnknownClass {
            line: line_no,
            name: class_name.to_string(),
        })?;
        let fragments = parse_fragments(offsets, line_no, chars.len())?;
        let actual = fragments
            .iter()
            .map(|f| chars[f.start..f.end].iter().collect::<String>())
            .collect::<Vec<_>>()
            .join(" ");
        if normalize_surface(&actual) != normalize_surface(surface) {
            warnings.push(Warning::SurfaceMismatch {
                line: line_no,
                id: id.to_string(),
                expected: surface.to_string(),
                found: actual.clone(),
            });
        }
        annotations.push(Annotation {
            id: id.to_string(),
            class,
            fragments,
            text: actual,
        });
    }

    Ok(Standoff {
        document: Document {
            id: doc_id.to_string(),
            text: text.to_string(),
            annotations,
        },
        warnings,
    })
}

fn parse_fragments(offsets: &str, line: usize, len: usize) -> Result<Vec<Fragment>> {
    let mut fragments: Vec<Fragment> = Vec::new();
    for part in offsets.split(';') {
        let mut nums = part.split_whitespace();
        let (Some(s), Some(e), None) = (nums.next(), nums.next(), nums.next()) else {
            return Err(Error::parse(line, format!("bad fragment `{part}`")));
        };
        let start: usize = s
            .parse()
            .map_err(|_| Error::parse(line, format!("non-numeric offset `{s}`")))?;
        let end: usize = e
            .parse()
            .map_err(|_| Error::parse(line, format!("non-numeric offset `{e}`")))?;
        if start >= end {
            return Err(Error::parse(line, format!("empty fragment {start} {end}")));
        }
        if end > len {
            return Err(Error::OutOfBounds { line, offset: end, len });
        }
        if let Some(prev) = fragments.last() {
            if start < prev.end {
                return Err(Error::parse(line, "fragments overlap or are unsorted"));
            }
        }
        fragments.push(Fragment::new(start, end));
    }
    Ok(fragments)
}

fn normalize_surface(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Serializes the annotations of `doc`, one `T` line each.
pub fn write_standoff(doc: &Document) -> String {
    let mut out = String::new();
    for a in &doc.annotations {
        let offsets = a
            .fragments
            .iter()
            .map(|f| format!("{} {}", f.start, f.end))
            .collect::<Vec<_>>()
            .join(";");
        let surface: String = a
            .text
            .chars()
            .map(|c| if c == '\n' || c == '\t' || c == '\r' { ' ' } else { c })
            .collect();
        out.push_str(&format!("{}\t{} {}\t{}\n", a.id, a.class, offsets, surface));
    }
    out
}

/// Reads every `<id>.txt` in `dir` with its optional `<id>.ann`, sorted by id.
pub fn load_corpus_dir(dir: &Path) -> Result<Vec<Standoff>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut ids = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "txt") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let txt_path = dir.join(format!("{id}.txt"));
        let text = fs::read_to_string(&txt_path).map_err(|e| Error::io(&txt_path, e))?;
        let ann_path = dir.join(format!("{id}.ann"));
        let ann = if ann_path.exists() {
            fs::read_to_string(&ann_path).map_err(|e| Error::io(&ann_path, e))?
        } else {
            String::new()
        };
        out.push(read_standoff(&id, &text, &ann)?);
    }
    Ok(out)
}
