//! Character-offset helpers.
//!
//! Every offset that crosses a module boundary (wire messages, SQuAD
//! `answer_start`, annotation tasks) counts Unicode scalar values, the same
//! unit Python string indexing uses. Rust strings index by byte, so these
//! helpers do the conversion in one place.

/// Number of characters in `text`.
pub fn char_len(text: &str) -> usize {
    text.chars().count()
}

/// Byte index of the character at `char_idx`, or `text.len()` when
/// `char_idx` equals the character count. `None` past the end.
pub fn byte_offset(text: &str, char_idx: usize) -> Option<usize> {
    if char_idx == 0 {
        return Some(0);
    }
    let mut count = 0;
    for (byte, _) in text.char_indices() {
        if count == char_idx {
            return Some(byte);
        }
        count += 1;
    }
    (count == char_idx).then_some(text.len())
}

/// Character index of a byte offset that sits on a char boundary.
pub fn char_offset(text: &str, byte_idx: usize) -> usize {
    text[..byte_idx].chars().count()
}

/// Slice `text` by character range `[start, end)`.
pub fn char_slice(text: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let b_start = byte_offset(text, start)?;
    let b_end = byte_offset(text, end)?;
    Some(&text[b_start..b_end])
}

/// Character offset of the first exact occurrence of `needle`.
pub fn find_char(haystack: &str, needle: &str) -> Option<usize> {
    if needle.is_empty() {
        return None;
    }
    haystack.find(needle).map(|b| char_offset(haystack, b))
}

/// Maximal runs of non-whitespace.
pub fn tokenize_whitespace(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}
