/// Redaction placeholders kept verbatim (uppercase) by the tokenizer.
pub const PLACEHOLDERS: [&str; 4] = ["NAME", "DATE", "NUMBER", "EMAIL"];

const CONTRACTION_SUFFIXES: [&str; 7] = ["n't", "'ve", "'re", "'ll", "'s", "'d", "'m"];

/// Digit runs at least this long are redacted as `NUMBER`.
const MIN_REDACTED_DIGITS: usize = 5;

/// Lowercases, splits punctuation into separate tokens, splits common
/// English contractions (`can't` -> `ca n't`), and substitutes pattern-based
/// redactions (email addresses, long digit runs). Placeholders such as
/// `NAME` survive as single uppercase tokens.
pub fn normalize_text(raw: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in raw.split_whitespace() {
        normalize_chunk(chunk, &mut out);
    }
    out
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '\'' || c == '-' || c == '_'
}

fn normalize_chunk(chunk: &str, out: &mut Vec<String>) {
    let trimmed = chunk.trim_end_matches(|c: char| !is_word_char(c));
    if looks_like_email(trimmed) {
        out.push("EMAIL".to_string());
        out.extend(chunk[trimmed.len()..].chars().map(String::from));
        return;
    }
    let mut word = String::new();
    for c in chunk.chars() {
        if is_word_char(c) {
            word.push(c);
        } else {
            flush_word(&mut word, out);
            out.push(c.to_string());
        }
    }
    flush_word(&mut word, out);
}

fn flush_word(word: &mut String, out: &mut Vec<String>) {
    if word.is_empty() {
        return;
    }
    let w = std::mem::take(word);
    if PLACEHOLDERS.contains(&w.as_str()) {
        out.push(w);
        return;
    }
    if w.len() >= MIN_REDACTED_DIGITS && w.chars().all(|c| c.is_ascii_digit()) {
        out.push("NUMBER".to_string());
        return;
    }
    let lower = w.to_lowercase();
    for suffix in CONTRACTION_SUFFIXES {
        if let Some(stem) = lower.strip_suffix(suffix) {
            if !stem.is_empty() && !stem.ends_with('\'') {
                out.push(stem.to_string());
                out.push(suffix.to_string());
                return;
            }
        }
    }
    out.push(lower);
}

fn looks_like_email(s: &str) -> bool {
    let Some((local, domain)) = s.split_once('@') else {
        return false;
    };
    !local.is_empty()
        && domain.contains('.')
        && !domain.starts_with('.')
        && !domain.ends_with('.')
        && !domain.contains('@')
}
