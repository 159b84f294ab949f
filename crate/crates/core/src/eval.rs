//! ROUGE-1/2/L and Date-F1.

use std::collections::{BTreeSet, HashMap};

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(hits: f64, cand_total: f64, ref_total: f64) -> Self {
        let precision = if cand_total > 0.0 { hits / cand_total } else { 0.0 };
        let recall = if ref_total > 0.0 { hits / ref_total } else { 0.0 };
        Self::from_pr(precision, recall)
    }

    pub fn from_pr(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self { precision, recall, f1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RougeScore {
    pub r1: Prf,
    pub r2: Prf,
    pub rl: Prf,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DateScore {
    #[serde(flatten)]
    pub prf: Prf,
    /// Neither side mentioned a date; scored as 1.0.
    pub both_empty: bool,
}

/// Multiset of n-grams.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NgramCounts<'a> {
    counts: HashMap<&'a [String], usize>,
    total: usize,
}

impl<'a> NgramCounts<'a> {
    pub fn new(tokens: &'a [String], n: usize) -> Self {
        let mut c = Self::default();
        c.add(tokens, n);
        c
    }

    /// Adds the n-grams of one more segment; none span segment boundaries.
    pub fn add(&mut self, tokens: &'a [String], n: usize) {
        assert!(n >= 1);
        if tokens.len() < n {
            return;
        }
        for g in tokens.windows(n) {
            *self.counts.entry(g).or_insert(0) += 1;
            self.total += 1;
        }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// Clipped overlap.
    pub fn overlap(&self, other: &NgramCounts<'_>) -> usize {
        self.counts
            .iter()
            .map(|(g, &c)| c.min(other.counts.get(g).copied().unwrap_or(0)))
            .sum()
    }

    pub fn score(&self, reference: &NgramCounts<'_>) -> Prf {
        Prf::from_counts(self.overlap(reference) as f64, self.total as f64, reference.total as f64)
    }
}

pub fn rouge_n(candidate: &[String], reference: &[String], n: usize) -> Prf {
    if reference.len() < n {
        log::warn!("reference shorter than {n} tokens; ROUGE-{n} is 0");
    }
    NgramCounts::new(candidate, n).score(&NgramCounts::new(reference, n))
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Whole-text LCS F1.
pub fn rouge_l(candidate: &[String], reference: &[String]) -> Prf {
    let l = lcs_len(candidate, reference) as f64;
    Prf::from_counts(l, candidate.len() as f64, reference.len() as f64)
}

pub fn rouge(candidate: &[String], reference: &[String]) -> RougeScore {
    RougeScore {
        r1: rouge_n(candidate, reference, 1),
        r2: rouge_n(candidate, reference, 2),
        rl: rouge_l(candidate, reference),
    }
}

/// Pattern set for date mentions. Longer forms are tried first, so
/// "1981-06-25" yields one date, not three.
#[derive(Debug, Clone)]
pub struct DateExtractor {
    pattern: Regex,
}

impl Default for DateExtractor {
    fn default() -> Self {
        Self::new(&[r"\d{4}-\d{2}-\d{2}", r"\d{4}-\d{2}", r"\d{4}"]).expect("built-in patterns compile")
    }
}

impl DateExtractor {
    pub fn new(patterns: &[&str]) -> Result<Self, regex::Error> {
        let alts: Vec<String> = patterns.iter().map(|p| format!("(?:{p})")).collect();
        let pattern = Regex::new(&format!(r"\b(?:{})\b", alts.join("|")))?;
        Ok(Self { pattern })
    }

    pub fn extract(&self, text: &str) -> BTreeSet<String> {
        self.pattern.find_iter(text).map(|m| m.as_str().to_string()).collect()
    }

    pub fn date_f1(&self, candidate: &str, reference: &str) -> DateScore {
        let c = self.extract(candidate);
        let r = self.extract(reference);
        if c.is_empty() && r.is_empty() {
            return DateScore {
                prf: Prf { precision: 1.0, recall: 1.0, f1: 1.0 },
                both_empty: true,
            };
        }
        let hits = c.intersection(&r).count() as f64;
        DateScore {
            prf: Prf::from_counts(hits, c.len() as f64, r.len() as f64),
            both_empty: false,
        }
    }
}

pub fn date_f1(candidate: &str, reference: &str) -> DateScore {
    DateExtractor::default().date_f1(candidate, reference)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn identical_texts() {
        let a = toks("the cat sat");
        let s = rouge(&a, &a);
        for p in [s.r1, s.r2, s.rl] {
            assert_eq!(p, Prf { precision: 1.0, recall: 1.0, f1: 1.0 });
        }
    }

    #[test]
    fn bigram_hand_example() {
        let p = rouge_n(&toks("a b c"), &toks("a b d"), 2);
        assert_eq!(p, Prf { precision: 0.5, recall: 0.5, f1: 0.5 });
    }

    #[test]
    fn disjoint() {
        assert_eq!(rouge_n(&toks("a b"), &toks("c d"), 1).f1, 0.0);
    }

    #[test]
    fn clipping() {
        let p = rouge_n(&toks("a a a"), &toks("a b"), 1);
        assert_abs_diff_eq!(p.precision, 1.0 / 3.0);
        assert_abs_diff_eq!(p.recall, 0.5);
    }

    #[test]
    fn lcs_hand_example() {
        let p = rouge_l(&toks("a c e"), &toks("a b c d e"));
        assert_eq!(p.precision, 1.0);
        assert_abs_diff_eq!(p.recall, 0.6);
        assert_abs_diff_eq!(p.f1, 0.75);
    }

    #[test]
    fn empty_reference_scores_zero() {
        assert_eq!(rouge_n(&toks("a"), &[], 1).f1, 0.0);
        assert_eq!(rouge_l(&[], &[]).f1, 0.0);
    }

    #[test]
    fn dates() {
        let s = date_f1("born 1981 , won in 1984 and 1984", "1981 debut ; 1997 retired");
        assert_eq!(s.prf, Prf { precision: 0.5, recall: 0.5, f1: 0.5 });
        assert!(!s.both_empty);
        let e = date_f1("no dates", "none here");
        assert!(e.both_empty);
        assert_eq!(e.prf.f1, 1.0);
        let d = DateExtractor::default();
        assert_eq!(d.extract("on 1981-06-25 and 2001-02, not 12345"), ["1981-06-25", "2001-02"].map(String::from).into());
    }

    #[test]
    fn custom_patterns() {
        let d = DateExtractor::new(&[r"\d{1,2}/\d{1,2}/\d{4}"]).unwrap();
        assert_eq!(d.extract("on 3/14/1999 or 1999").len(), 1);
    }

    fn words(max: usize) -> impl Strategy<Value = Vec<String>> {
        proptest::collection::vec(prop_oneof!["a", "b", "c"].prop_map(String::from), 0..max)
    }

    proptest! {
        #[test]
        fn scores_in_unit_interval_and_symmetric(a in words(12), b in words(12)) {
            for n in 1..=2 {
                let ab = rouge_n(&a, &b, n);
                let ba = rouge_n(&b, &a, n);
                prop_assert!((0.0..=1.0).contains(&ab.f1));
                prop_assert_eq!(ab.precision, ba.recall);
            }
            let l = rouge_l(&a, &b);
            prop_assert!((0.0..=1.0).contains(&l.f1));
        }

        #[test]
        fn appending_shared_ngram_never_lowers_overlap(a in words(8), b in words(8), g in words(3)) {
            prop_assume!(g.len() == 2);
            let before = NgramCounts::new(&a, 2).overlap(&NgramCounts::new(&b, 2));
            let (mut a2, mut b2) = (a.clone(), b.clone());
            a2.extend(g.iter().cloned());
            b2.extend(g.iter().cloned());
            let after = NgramCounts::new(&a2, 2).overlap(&NgramCounts::new(&b2, 2));
            prop_assert!(after >= before);
        }
    }
}
