//! Template-generated timelines for training and tests.
//!
//! Each event opens with "In YEAR, NAME VERB the OBJECT." and may carry
//! distractor clauses. Events whose verb is salient make it into the
//! summary as "YEAR : NAME PARAPHRASE the OBJECT ." in time order.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{greedy_oracle, tokenize, RawEvent, RawRecord};
use crate::error::{Result, UtsError};

const NAMES: &[&str] = &[
    "Avery", "Blake", "Casey", "Dana", "Emery", "Finley", "Harper", "Jordan", "Kendall", "Logan",
    "Morgan", "Parker", "Quinn", "Reese", "Rowan", "Sawyer", "Skyler", "Taylor",
];
/// (verb, summary paraphrase).
const SALIENT: &[(&str, &str)] = &[
    ("won", "secured"),
    ("released", "launched"),
    ("married", "wed"),
    ("founded", "established"),
    ("joined", "entered"),
    ("recorded", "cut"),
];
const ROUTINE: &[&str] = &["visited", "praised", "attended", "mentioned", "watched", "discussed"];
const OBJECTS: &[&str] = &[
    "award", "album", "band", "company", "league", "studio", "prize", "label", "tour", "series",
    "festival", "charity", "film", "club", "school", "academy", "network", "gallery", "theater", "trophy",
];
const DISTRACTOR_VERBS: &[&str] = &["also met", "later called", "briefly toured", "often thanked"];
const DISTRACTOR_OBJECTS: &[&str] = &["friends", "critics", "fans", "reporters", "neighbors", "mentors"];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub min_events: usize,
    pub max_events: usize,
    /// Upper bound on summarized events.
    pub max_salient: usize,
    pub salient_prob: f64,
    pub max_distractors: usize,
    pub first_year: (u32, u32),
    pub max_year_step: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            min_events: 3,
            max_events: 8,
            max_salient: 4,
            salient_prob: 0.4,
            max_distractors: 1,
            first_year: (1950, 1990),
            max_year_step: 4,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.min_events >= 1
            && self.min_events <= self.max_events
            && self.max_events <= OBJECTS.len()
            && self.max_salient >= 1
            && (0.0..=1.0).contains(&self.salient_prob)
            && self.first_year.0 <= self.first_year.1
            && self.max_year_step >= 1;
        if ok {
            Ok(())
        } else {
            Err(UtsError::Config(format!("invalid synthetic corpus settings: {self:?}")))
        }
    }
}

/// Deterministic in `seed`. Oracle labels come from the greedy ROUGE-2 oracle.
pub fn generate_synthetic(seed: u64, n: usize, cfg: &SynthConfig) -> Result<Vec<RawRecord>> {
    cfg.validate()?;
    if n == 0 {
        return Err(UtsError::Config("number of examples must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|i| one_record(&mut rng, cfg, format!("synth-{seed}-{i}"))).collect())
}

fn one_record(rng: &mut ChaCha8Rng, cfg: &SynthConfig, id: String) -> RawRecord {
    let name = *NAMES.choose(rng).unwrap();
    let n_events = rng.gen_range(cfg.min_events..=cfg.max_events);
    let objects: Vec<&str> = OBJECTS.choose_multiple(rng, n_events).copied().collect();
    let mut salient: Vec<bool> = (0..n_events).map(|_| rng.gen_bool(cfg.salient_prob)).collect();
    if !salient.contains(&true) {
        salient[rng.gen_range(0..n_events)] = true;
    }
    while salient.iter().filter(|&&s| s).count() > cfg.max_salient {
        let on: Vec<usize> = (0..n_events).filter(|&i| salient[i]).collect();
        salient[*on.choose(rng).unwrap()] = false;
    }

    let mut year = rng.gen_range(cfg.first_year.0..=cfg.first_year.1);
    let mut events = Vec::new();
    let mut summary = Vec::new();
    let mut lead_sentences = Vec::new();
    let mut sentence_count = 0;
    for (k, obj) in objects.iter().enumerate() {
        if k > 0 {
            year += rng.gen_range(1..=cfg.max_year_step);
        }
        let lead = if salient[k] {
            let (verb, para) = *SALIENT.choose(rng).unwrap();
            summary.push(format!("{year} : {name} {para} the {obj} ."));
            lead_sentences.push(sentence_count);
            format!("In {year}, {name} {verb} the {obj}.")
        } else {
            format!("In {year}, {name} {} the {obj}.", ROUTINE.choose(rng).unwrap())
        };
        let mut text = lead;
        sentence_count += 1;
        for _ in 0..rng.gen_range(0..=cfg.max_distractors) {
            let v = DISTRACTOR_VERBS.choose(rng).unwrap();
            let o = DISTRACTOR_OBJECTS.choose(rng).unwrap();
            text.push_str(&format!(" {name} {v} {o}."));
            sentence_count += 1;
        }
        events.push(RawEvent { time: year.to_string(), text, tokens: None });
    }

    let sentences: Vec<Vec<String>> = events
        .iter()
        .flat_map(|e| super::split_sentences(&e.text))
        .map(|s| tokenize(&s))
        .collect();
    let refs: Vec<&[String]> = sentences.iter().map(Vec::as_slice).collect();
    let reference: Vec<String> = summary.iter().flat_map(|s| tokenize(s)).collect();
    let oracle = greedy_oracle(&refs, &reference, cfg.max_salient);
    debug_assert_eq!(oracle, lead_sentences);
    RawRecord { id, events, summary, oracle: Some(oracle) }
}
