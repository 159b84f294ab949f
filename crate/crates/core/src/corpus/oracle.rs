//! Greedy ROUGE-2 extractive oracle.

use crate::eval::NgramCounts;

/// ROUGE-2 F1 of a sentence set against the reference. Bigrams never span
/// two sentences, so the score does not depend on selection order.
pub fn set_rouge2(sentences: &[&[String]], selected: &[usize], reference: &[String]) -> f64 {
    let reference = NgramCounts::new(reference, 2);
    let mut cand = NgramCounts::default();
    for &i in selected {
        cand.add(sentences[i], 2);
    }
    cand.score(&reference).f1
}

/// Adds the sentence with the largest ROUGE-2 F1 gain until no sentence
/// improves the score or `max_selected` is reached. Ties go to the lowest
/// index. Returns indices ascending.
pub fn greedy_oracle(sentences: &[&[String]], reference: &[String], max_selected: usize) -> Vec<usize> {
    let mut selected: Vec<usize> = Vec::new();
    let mut current = 0.0;
    while selected.len() < max_selected {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..sentences.len() {
            if selected.contains(&i) {
                continue;
            }
            selected.push(i);
            let s = set_rouge2(sentences, &selected, reference);
            selected.pop();
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        match best {
            Some((i, s)) if s > current => {
                selected.push(i);
                current = s;
            }
            _ => break,
        }
    }
    selected.sort_unstable();
    selected
}
