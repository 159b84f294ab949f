//! Whitespace and punctuation tokenization, sentence splitting.

/// Characters that end a sentence when followed by whitespace or end of text.
const TERMINATORS: &[char] = &['.', '!', '?'];
/// Full-width terminators end a sentence unconditionally.
const WIDE_TERMINATORS: &[char] = &['。', '！', '？'];
/// Joiners stay inside a token when flanked by alphanumerics ("3.5", "1981-06-25", "don't").
const JOINERS: &[char] = &['.', ',', '-', '\'', ':', '/'];

/// Splits text into lowercase tokens. Punctuation becomes its own token
/// unless it joins two alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut cur = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if c.is_alphanumeric() {
            cur.extend(c.to_lowercase());
        } else if JOINERS.contains(&c)
            && !cur.is_empty()
            && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric())
        {
            cur.push(c);
        } else {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            if !c.is_whitespace() {
                out.push(c.to_string());
            }
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Splits an event text into sentences, trimming whitespace. Empty pieces are dropped.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut start = 0;
    for (i, &c) in chars.iter().enumerate() {
        let ends = WIDE_TERMINATORS.contains(&c)
            || (TERMINATORS.contains(&c) && chars.get(i + 1).is_none_or(|n| n.is_whitespace()));
        if ends {
            push_trimmed(&mut out, &chars[start..=i]);
            start = i + 1;
        }
    }
    push_trimmed(&mut out, &chars[start..]);
    out
}

fn push_trimmed(out: &mut Vec<String>, piece: &[char]) {
    let s: String = piece.iter().collect();
    let s = s.split_whitespace().collect::<Vec<_>>().join(" ");
    if !s.is_empty() {
        out.push(s);
    }
}
