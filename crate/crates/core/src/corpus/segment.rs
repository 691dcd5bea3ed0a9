use super::{spans_to_iob, Document, Segment, Token};
use crate::corpus::tokenize;

/// Longest segment produced by [`segment`].
pub const MAX_SEGMENT_TOKENS: usize = 120;

/// Splits a document into line segments, labelled from its annotations.
///
/// Lines joined by an annotation fragment that crosses a line break form one
/// segment. Segments longer than [`MAX_SEGMENT_TOKENS`] are cut at the
/// closest earlier boundary that no fragment straddles.
pub fn segment(doc: &Document) -> Vec<Segment> {
    segment_with_cap(doc, MAX_SEGMENT_TOKENS)
}

pub fn segment_with_cap(doc: &Document, cap: usize) -> Vec<Segment> {
    assert!(cap >= 1);
    let chars: Vec<char> = doc.text.chars().collect();
    let tokens = tokenize(&doc.text);
    if tokens.is_empty() {
        return Vec::new();
    }

    // A newline at position p is a hard boundary unless some fragment contains it.
    let crossed = |p: usize| {
        doc.annotations
            .iter()
            .flat_map(|a| a.fragments.iter())
            .any(|f| f.start <= p && p < f.end)
    };

    let mut groups: Vec<Vec<Token>> = vec![Vec::new()];
    let mut last_end = 0;
    for tok in tokens {
        let breaks = chars[last_end..tok.start]
            .iter()
            .enumerate()
            .any(|(k, &c)| c == '\n' && !crossed(last_end + k));
        if breaks && !groups.last().is_some_and(Vec::is_empty) {
            groups.push(Vec::new());
        }
        last_end = tok.end;
        groups.last_mut().expect("non-empty").push(tok);
    }

    let straddled = |left: &Token, right: &Token| {
        doc.annotations
            .iter()
            .flat_map(|a| a.fragments.iter())
            .any(|f| f.overlap(left.start, left.end) > 0 && f.overlap(right.start, right.end) > 0)
    };

    let mut segments = Vec::new();
    for mut group in groups {
        while group.len() > cap {
            let cut = (1..=cap)
                .rev()
                .find(|&b| !straddled(&group[b - 1], &group[b]))
                .unwrap_or(cap);
            let rest = group.split_off(cut);
            segments.push(group);
            group = rest;
        }
        if !group.is_empty() {
            segments.push(group);
        }
    }

    segments
        .into_iter()
        .map(|tokens| {
            let labels = spans_to_iob(&tokens, &doc.annotations).labels;
            Segment {
                doc_id: doc.id.clone(),
                tokens,
                labels: Some(labels),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Annotation, EntityClass, Fragment, IobLabel};

    fn doc(text: &str, frags: &[(usize, usize)]) -> Document {
        let mut d = Document::new("d", text);
        for (i, &(s, e)) in frags.iter().enumerate() {
            d.annotations.push(Annotation {
                id: format!("T{}", i + 1),
                class: EntityClass::Reason,
                fragments: vec![Fragment::new(s, e)],
                text: String::new(),
            });
        }
        d
    }

    #[test]
    fn one_segment_per_line() {
        let s = segment(&doc("aspirin daily\nlasix po", &[]));
        assert_eq!(s.len(), 2);
        assert_eq!(s[1].tokens[0].surface, "lasix");
        assert_eq!(segment(&doc("aspirin daily", &[])).len(), 1);
    }

    #[test]
    fn blank_lines_do_not_make_segments() {
        assert_eq!(segment(&doc("\n\naspirin\n\n\nlasix\n", &[])).len(), 2);
        assert!(segment(&doc("", &[])).is_empty());
    }

    #[test]
    fn cross_line_annotation_merges_lines() {
        // "atrial\nfibrillation" annotated as one fragment
        let s = segment(&doc("for atrial\nfibrillation\nlasix", &[(4, 23)]));
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].tokens.len(), 3);
        let labels = s[0].labels.as_ref().unwrap();
        assert_eq!(labels[1], IobLabel::B(EntityClass::Reason));
        assert_eq!(labels[2], IobLabel::I(EntityClass::Reason));
    }

    #[test]
    fn cap_splits_at_annotation_free_boundary() {
        // tokens: a b c d e ; annotation covers c..d
        let d = doc("a b c d e", &[(4, 7)]);
        let s = segment_with_cap(&d, 3);
        let sizes: Vec<usize> = s.iter().map(|s| s.tokens.len()).collect();
        // a boundary after 3 tokens would split "c d"; cut after 2 instead
        assert_eq!(sizes, vec![2, 3]);
        let total: usize = sizes.iter().sum();
        assert_eq!(total, 5);
    }
}
