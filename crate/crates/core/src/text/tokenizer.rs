//! Greedy longest-match subword tokenization.

use super::vocab::{Vocab, CLS_ID, CONTINUATION, SEP_ID, SPECIAL_TOKENS, UNK_ID};

/// Lowercases and splits on whitespace and punctuation; punctuation becomes
/// its own word. Special tokens pass through intact.
pub fn basic_split(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for raw in text.split_whitespace() {
        if SPECIAL_TOKENS.contains(&raw) {
            out.push(raw.to_string());
            continue;
        }
        let mut current = String::new();
        for ch in raw.chars() {
            if ch.is_ascii_punctuation() || (!ch.is_alphanumeric() && !ch.is_whitespace()) {
                if !current.is_empty() {
                    out.push(std::mem::take(&mut current));
                }
                out.push(ch.to_string());
            } else {
                current.extend(ch.to_lowercase());
            }
        }
        if !current.is_empty() {
            out.push(current);
        }
    }
    out
}

/// Splits one word into vocabulary pieces, longest match first. A character
/// with no matching piece becomes `[UNK]` and matching resumes after it.
pub fn wordpiece(word: &str, vocab: &Vocab, out: &mut Vec<u32>) {
    if let Some(id) = vocab.id(word) {
        out.push(id);
        return;
    }
    let chars: Vec<char> = word.chars().collect();
    let mut start = 0;
    let mut piece = String::new();
    while start < chars.len() {
        let mut found = None;
        for end in (start + 1..=chars.len()).rev() {
            piece.clear();
            if start > 0 {
                piece.push_str(CONTINUATION);
            }
            piece.extend(&chars[start..end]);
            if let Some(id) = vocab.id(&piece) {
                found = Some((id, end));
                break;
            }
        }
        match found {
            Some((id, end)) => {
                out.push(id);
                start = end;
            }
            None => {
                out.push(UNK_ID);
                start += 1;
            }
        }
    }
}

/// `[CLS] pieces… [SEP]`, truncated to `max_len` ids keeping the prefix.
pub fn tokenize(text: &str, vocab: &Vocab, max_len: usize) -> Vec<u32> {
    let mut ids = vec![CLS_ID];
    for word in basic_split(text) {
        if ids.len() >= max_len {
            break;
        }
        wordpiece(&word, vocab, &mut ids);
    }
    ids.push(SEP_ID);
    ids.truncate(max_len);
    ids
}
