use super::{Annotation, EntityClass, Fragment, IobLabel, Token, Warning};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IobEncoding {
    pub labels: Vec<IobLabel>,
    pub warnings: Vec<Warning>,
}

/// Labels each token with the class of the annotation it overlaps.
///
/// A token overlapping several annotations goes to the one covering the
/// most characters in total (earlier start on ties) and a
/// [`Warning::LabelConflict`] is recorded for each loser.
pub fn spans_to_iob(tokens: &[Token], annotations: &[Annotation]) -> IobEncoding {
    let mut owner: Vec<Option<usize>> = vec![None; tokens.len()];
    let mut warnings = Vec::new();

    for (ti, tok) in tokens.iter().enumerate() {
        let mut claims = annotations
            .iter()
            .enumerate()
            .filter(|(_, a)| a.overlap_with_range(tok.start, tok.end) > 0);
        let Some(mut best) = claims.next().map(|(i, _)| i) else {
            continue;
        };
        for (i, _) in claims {
            let (winner, loser) = if beats(&annotations[i], &annotations[best]) {
                (i, best)
            } else {
                (best, i)
            };
            warnings.push(Warning::LabelConflict {
                token: ti,
                kept: annotations[winner].id.clone(),
                dropped: annotations[loser].id.clone(),
            });
            best = winner;
        }
        owner[ti] = Some(best);
    }

    let mut seen = vec![false; annotations.len()];
    let labels = owner
        .into_iter()
        .map(|o| match o {
            None => IobLabel::O,
            Some(a) => {
                let class = annotations[a].class;
                if std::mem::replace(&mut seen[a], true) {
                    IobLabel::I(class)
                } else {
                    IobLabel::B(class)
                }
            }
        })
        .collect();

    IobEncoding { labels, warnings }
}

fn beats(a: &Annotation, b: &Annotation) -> bool {
    let (la, lb) = (a.covered_len(), b.covered_len());
    la > lb || (la == lb && a.start() < b.start())
}

/// Merges labelled tokens back into single-fragment annotations.
///
/// `B-X` always opens a new entity; `I-X` continues an open `X` entity and
/// otherwise opens one. Ids are `T1..Tn` in order; `text` is rebuilt from the
/// token surfaces with one space per gap character.
pub fn iob_to_spans(tokens: &[Token], labels: &[IobLabel]) -> Vec<Annotation> {
    assert_eq!(tokens.len(), labels.len(), "tokens and labels differ in length");
    let mut runs: Vec<(EntityClass, usize, usize)> = Vec::new();
    let mut open: Option<EntityClass> = None;
    for (i, label) in labels.iter().enumerate() {
        match *label {
            IobLabel::O => open = None,
            IobLabel::I(c) if open == Some(c) => runs.last_mut().expect("open run").2 = i,
            IobLabel::B(c) | IobLabel::I(c) => {
                runs.push((c, i, i));
                open = Some(c);
            }
        }
    }
    runs.into_iter()
        .enumerate()
        .map(|(n, (class, first, last))| {
            let mut text = String::new();
            for t in first..=last {
                if t > first {
                    let gap = tokens[t].start.saturating_sub(tokens[t - 1].end);
                    text.extend(std::iter::repeat_n(' ', gap));
                }
                text.push_str(&tokens[t].surface);
            }
            Annotation {
                id: format!("T{}", n + 1),
                class,
                fragments: vec![Fragment::new(tokens[first].start, tokens[last].end)],
                text,
            }
        })
        .collect()
}
