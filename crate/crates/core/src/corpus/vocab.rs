use std::collections::HashMap;

use crate::error::{Result, UtsError};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];

/// Token/id mapping with the four reserved ids first.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Keeps the `cap` most frequent tokens; equal counts keep scan order.
    pub fn build<'a, I, T>(sequences: I, cap: usize) -> Result<Self>
    where
        I: IntoIterator<Item = T>,
        T: IntoIterator<Item = &'a String>,
    {
        let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
        for seq in sequences {
            for tok in seq {
                let next = counts.len();
                counts.entry(tok.as_str()).or_insert((0, next)).0 += 1;
            }
        }
        if counts.is_empty() {
            return Err(UtsError::Data("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut ranked: Vec<(&str, usize, usize)> = counts
            .into_iter()
            .filter(|(t, _)| !RESERVED.contains(t))
            .map(|(t, (c, first))| (t, c, first))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        ranked.truncate(cap);
        Ok(Self::from_words(ranked.into_iter().map(|(t, _, _)| t.to_string())))
    }

    /// Builds from non-reserved words in id order.
    pub fn from_words(words: impl IntoIterator<Item = String>) -> Self {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(words);
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or UNK.
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Non-reserved words in id order.
    pub fn words(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self.words()).expect("string list serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let words: Vec<String> =
            serde_json::from_str(s).map_err(|e| UtsError::Data(format!("bad vocabulary: {e}")))?;
        let v = Self::from_words(words);
        if v.index.len() != v.tokens.len() {
            return Err(UtsError::Data("vocabulary has duplicate entries".into()));
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn frequency_cutoff() {
        let v = Vocab::build([toks("c b a a b a")].iter(), 2).unwrap();
        assert_eq!(v.words(), ["a", "b"]);
        assert_eq!(v.len(), 6);
        assert_eq!(v.id("c"), UNK);
    }

    #[test]
    fn cap_larger_than_distinct() {
        let v = Vocab::build([toks("x y"), toks("z")].iter(), 100).unwrap();
        assert_eq!(v.words(), ["x", "y", "z"]);
    }

    #[test]
    fn ties_follow_scan_order() {
        let seqs = [toks("q p"), toks("p q r r")];
        let v = Vocab::build(seqs.iter(), 3).unwrap();
        // Scan-order oracle: stable sort of first-seen order by descending count.
        let mut seen: Vec<String> = Vec::new();
        for t in seqs.iter().flatten() {
            if !seen.contains(t) {
                seen.push(t.clone());
            }
        }
        let count = |t: &String| seqs.iter().flatten().filter(|x| *x == t).count();
        seen.sort_by_key(|t| std::cmp::Reverse(count(t)));
        assert_eq!(v.words(), &seen[..]);
        assert_eq!(v.words(), ["q", "p", "r"]);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let empty: Vec<Vec<String>> = vec![];
        assert!(Vocab::build(empty.iter(), 5).is_err());
    }

    #[test]
    fn json_round_trip() {
        let v = Vocab::build([toks("a b \"c\"")].iter(), 10).unwrap();
        assert_eq!(Vocab::from_json(&v.to_json()).unwrap(), v);
    }
}
