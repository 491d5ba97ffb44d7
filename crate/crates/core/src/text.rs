//! Text normalization shared by the cue matcher, the intent classifier and
//! the sentiment tokenizer.

/// Lowercases, drops apostrophes, turns every other non-alphanumeric
/// character into a space and collapses runs of whitespace.
///
/// `"That's cherry-picking!"` becomes `"thats cherry picking"`.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for ch in text.chars() {
        if is_apostrophe(ch) {
            continue;
        }
        if ch.is_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.extend(ch.to_lowercase());
        } else {
            pending_space = true;
        }
    }
    out
}

/// True when `phrase` (already normalized) occurs in `haystack` (already
/// normalized) on token boundaries.
pub fn contains_phrase(haystack: &str, phrase: &str) -> bool {
    if phrase.is_empty() {
        return false;
    }
    haystack.match_indices(phrase).any(|(start, _)| {
        let end = start + phrase.len();
        let left_ok = start == 0 || haystack.as_bytes()[start - 1] == b' ';
        let right_ok = end == haystack.len() || haystack.as_bytes()[end] == b' ';
        left_ok && right_ok
    })
}

/// Splits into lowercase word tokens, keeping in-word apostrophes so that
/// contractions such as `isn't` survive as a single token.
pub fn word_tokens(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else if is_apostrophe(ch) && !current.is_empty() {
            current.push('\'');
        } else if !current.is_empty() {
            tokens.push(finish_token(std::mem::take(&mut current)));
        }
    }
    if !current.is_empty() {
        tokens.push(finish_token(current));
    }
    tokens.retain(|t| !t.is_empty());
    tokens
}

fn finish_token(mut token: String) -> String {
    while token.ends_with('\'') {
        token.pop();
    }
    token
}

fn is_apostrophe(ch: char) -> bool {
    matches!(ch, '\'' | '\u{2019}' | '\u{2018}' | '`')
}
