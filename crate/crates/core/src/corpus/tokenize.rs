use super::Token;

/// Splits text into word and punctuation tokens with exact character offsets.
///
/// Whitespace separates chunks. Inside a chunk, alphanumeric runs stay
/// together, a `.` or `,` between two digits stays inside the number, and
/// abbreviations made of single letters separated by periods (`p.o.`) are
/// kept whole. Every other punctuation character is its own token.
pub fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let end = if let Some(end) = abbreviation_end(&chars, i) {
            end
        } else if chars[i].is_alphanumeric() {
            alnum_run_end(&chars, i)
        } else {
            i + 1
        };
        tokens.push(Token::new(chars[i..end].iter().collect::<String>(), i, end));
        i = end;
    }
    tokens
}

fn alnum_run_end(chars: &[char], start: usize) -> usize {
    let mut j = start;
    while j < chars.len() {
        let c = chars[j];
        if c.is_alphanumeric() {
            j += 1;
        } else if (c == '.' || c == ',')
            && j > start
            && chars[j - 1].is_ascii_digit()
            && chars.get(j + 1).is_some_and(|n| n.is_ascii_digit())
        {
            j += 1;
        } else {
            break;
        }
    }
    j
}

/// Matches `L.L.` / `L.L` (two or more single letters joined by periods)
/// starting at `start`, where the run is not followed by another alphanumeric.
fn abbreviation_end(chars: &[char], start: usize) -> Option<usize> {
    if start > 0 && chars[start - 1].is_alphanumeric() {
        return None;
    }
    let mut j = start;
    let mut letters = 0;
    loop {
        if !chars.get(j).is_some_and(|c| c.is_alphabetic()) {
            break;
        }
        if chars.get(j + 1).is_some_and(|c| c.is_alphanumeric()) {
            return None;
        }
        letters += 1;
        j += 1;
        if chars.get(j) == Some(&'.') {
            j += 1;
        } else {
            break;
        }
    }
    if letters < 2 {
        return None;
    }
    if chars.get(j).is_some_and(|c| c.is_alphanumeric()) {
        return None;
    }
    Some(j)
}
