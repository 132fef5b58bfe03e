//! Small string utilities shared across modules: the mark reference grammar,
//! whole-token replacement and word tokenizing.

use alloc::string::String;
use alloc::vec::Vec;

/// Parses a mark reference of the form `[N]` with `N` a positive integer.
///
/// The grammar is `\[[0-9]+\]` with the additional requirement that the
/// number is non-zero. Leading zeros are rejected so a reference has exactly
/// one spelling.
pub fn parse_mark_ref(s: &str) -> Option<u32> {
    let digits = s.strip_prefix('[')?.strip_suffix(']')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    if digits.len() > 1 && digits.starts_with('0') {
        return None;
    }
    match digits.parse::<u32>() {
        Ok(0) | Err(_) => None,
        Ok(n) => Some(n),
    }
}

/// Formats a mark number as a reference string.
pub fn mark_ref(n: u32) -> String {
    alloc::format!("[{n}]")
}

/// Returns true if `s` contains any substring matching `\[[0-9]+\]`.
pub fn contains_mark_ref(s: &str) -> bool {
    let bytes = s.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'[' {
            let mut j = i + 1;
            while j < bytes.len() && bytes[j].is_ascii_digit() {
                j += 1;
            }
            if j > i + 1 && j < bytes.len() && bytes[j] == b']' {
                return true;
            }
        }
        i += 1;
    }
    false
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Case-sensitive whole-token replacement of `old` by `new`.
///
/// An occurrence of `old` only counts when the characters on either side are
/// not word characters, so `"Camera"` does not match inside `"Cameras"`.
/// Text that already reads `new` at the current position is skipped as a
/// unit; this keeps the replacement idempotent even when `new` contains
/// `old` (renaming `"Camera"` to `"Front Camera"`).
pub fn replace_token(text: &str, old: &str, new: &str) -> String {
    if old.is_empty() {
        return String::from(text);
    }
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    let mut prev: Option<char> = None;
    while !rest.is_empty() {
        let boundary_before = prev.is_none_or(|c| !is_word_char(c));
        if boundary_before && !new.is_empty() && starts_with_token(rest, new) {
            out.push_str(new);
            prev = new.chars().last();
            rest = &rest[new.len()..];
            continue;
        }
        if boundary_before && starts_with_token(rest, old) {
            out.push_str(new);
            prev = old.chars().last();
            rest = &rest[old.len()..];
            continue;
        }
        let c = rest.chars().next().expect("non-empty");
        out.push(c);
        prev = Some(c);
        rest = &rest[c.len_utf8()..];
    }
    out
}

fn starts_with_token(s: &str, token: &str) -> bool {
    s.starts_with(token) && s[token.len()..].chars().next().is_none_or(|c| !is_word_char(c))
}

/// Returns true if `token` occurs in `text` as a whole token.
pub fn contains_token(text: &str, token: &str) -> bool {
    if token.is_empty() {
        return false;
    }
    let mut prev: Option<char> = None;
    for (i, c) in text.char_indices() {
        if prev.is_none_or(|p| !is_word_char(p)) && starts_with_token(&text[i..], token) {
            return true;
        }
        prev = Some(c);
    }
    false
}

/// Lowercased alphanumeric words of `s`; `_`, `-` and punctuation separate
/// words.
pub fn words(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mark_ref_grammar() {
        assert_eq!(parse_mark_ref("[1]"), Some(1));
        assert_eq!(parse_mark_ref("[12]"), Some(12));
        assert_eq!(parse_mark_ref("[0]"), None);
        assert_eq!(parse_mark_ref("[01]"), None);
        assert_eq!(parse_mark_ref("[]"), None);
        assert_eq!(parse_mark_ref("1"), None);
        assert_eq!(parse_mark_ref("[1"), None);
        assert_eq!(parse_mark_ref("[a]"), None);
    }

    #[test]
    fn detects_embedded_refs() {
        assert!(contains_mark_ref("Alice [1] can view"));
        assert!(contains_mark_ref("[0]"));
        assert!(!contains_mark_ref("Alice [x] can view"));
        assert!(!contains_mark_ref("[] and ["));
    }

    #[test]
    fn whole_token_only() {
        assert_eq!(replace_token("Camera and Cameras", "Camera", "Cam"), "Cam and Cameras");
        assert_eq!(replace_token("Lobby Camera feed", "Lobby Camera", "Front Door Camera"), "Front Door Camera feed");
        assert_eq!(replace_token("policy1", "policy", "rule"), "policy1");
        assert_eq!(replace_token("Alice's view", "Alice", "Bob"), "Bob's view");
    }

    #[test]
    fn replacement_is_idempotent_when_new_contains_old() {
        let once = replace_token("Camera one, Camera two", "Camera", "Front Camera");
        assert_eq!(once, "Front Camera one, Front Camera two");
        assert_eq!(replace_token(&once, "Camera", "Front Camera"), once);
    }

    #[test]
    fn token_search() {
        assert!(contains_token("the Lobby Camera feed", "Lobby Camera"));
        assert!(!contains_token("the Lobby Cameras", "Lobby Camera"));
        assert!(!contains_token("x", ""));
    }
}
