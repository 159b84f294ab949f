//! Timeline records, the JSON Lines format, truncation and oracle labels.

mod oracle;
pub mod synth;
mod tokenize;
mod vocab;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, UtsError};

pub use oracle::{greedy_oracle, set_rouge2};
pub use tokenize::{split_sentences, tokenize};
pub use vocab::{Vocab, BOS, EOS, PAD, RESERVED, UNK};

/// One line of a corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub id: String,
    pub events: Vec<RawEvent>,
    pub summary: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawEvent {
    pub time: String,
    pub text: String,
    /// Optional pre-split tokens, one list per sentence. When present they
    /// are used verbatim instead of the built-in tokenizer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<Vec<String>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub timestamp: String,
    pub sentences: Vec<String>,
    /// Tokens of each entry of `sentences`, untruncated.
    pub sentence_tokens: Vec<Vec<String>>,
    /// Event tokens after the article budget.
    pub tokens: Vec<String>,
    pretokenized: bool,
}

/// A document sentence as seen by the extractive branch.
#[derive(Debug, Clone, PartialEq)]
pub struct DocSentence {
    pub event: usize,
    pub text: String,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimelineExample {
    pub id: String,
    pub events: Vec<Event>,
    pub summary: Vec<String>,
    pub summary_tokens: Vec<String>,
    /// Flattened, capped document sentences in event order.
    pub doc_sentences: Vec<DocSentence>,
    /// Ascending indices into `doc_sentences`.
    pub oracle_labels: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TruncationPolicy {
    pub max_article_tokens: usize,
    pub max_summary_tokens: usize,
    pub max_events: usize,
    pub max_sentences: usize,
    pub max_sentence_tokens: usize,
    pub max_selected: usize,
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        Self {
            max_article_tokens: 400,
            max_summary_tokens: 70,
            max_events: 8,
            max_sentences: 24,
            max_sentence_tokens: 20,
            max_selected: 4,
        }
    }
}

impl TruncationPolicy {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("max_article_tokens", self.max_article_tokens),
            ("max_summary_tokens", self.max_summary_tokens),
            ("max_events", self.max_events),
            ("max_sentences", self.max_sentences),
            ("max_sentence_tokens", self.max_sentence_tokens),
            ("max_selected", self.max_selected),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(UtsError::Config(format!("{name} must be positive")));
            }
        }
        if self.max_article_tokens < self.max_events {
            return Err(UtsError::Config("max_article_tokens must be at least max_events".into()));
        }
        Ok(())
    }

    /// Applies every limit in place. Idempotent.
    pub fn apply(&self, ex: &mut TimelineExample) {
        ex.events.truncate(self.max_events);
        let total: usize = ex.events.iter().map(|e| e.tokens.len()).sum();
        if total > self.max_article_tokens {
            let n = ex.events.len();
            let (share, extra) = (self.max_article_tokens / n, self.max_article_tokens % n);
            for (i, e) in ex.events.iter_mut().enumerate() {
                e.tokens.truncate(share + usize::from(i < extra));
            }
        }
        ex.summary_tokens.truncate(self.max_summary_tokens);
        ex.doc_sentences = ex
            .events
            .iter()
            .enumerate()
            .flat_map(|(i, e)| {
                e.sentences.iter().zip(&e.sentence_tokens).map(move |(s, t)| DocSentence {
                    event: i,
                    text: s.clone(),
                    tokens: t[..t.len().min(self.max_sentence_tokens)].to_vec(),
                })
            })
            .filter(|s| !s.tokens.is_empty())
            .take(self.max_sentences)
            .collect();
        let n = ex.doc_sentences.len();
        if let Some(labels) = &mut ex.oracle_labels {
            labels.retain(|&l| l < n);
        }
    }
}

impl Event {
    fn from_raw(raw: &RawEvent) -> std::result::Result<Self, String> {
        let (sentences, sentence_tokens, pretokenized) = match &raw.tokens {
            Some(toks) => (toks.iter().map(|s| s.join(" ")).collect(), toks.clone(), true),
            None => {
                let sentences = split_sentences(&raw.text);
                let toks = sentences.iter().map(|s| tokenize(s)).collect();
                (sentences, toks, false)
            }
        };
        let tokens: Vec<String> = sentence_tokens.iter().flatten().cloned().collect();
        if tokens.is_empty() {
            return Err("event has no tokens".into());
        }
        Ok(Self {
            timestamp: raw.time.clone(),
            sentences,
            sentence_tokens,
            tokens,
            pretokenized,
        })
    }
}

impl TimelineExample {
    /// Tokenizes and truncates one record.
    pub fn from_raw(raw: &RawRecord, policy: &TruncationPolicy) -> std::result::Result<Self, String> {
        if raw.events.is_empty() {
            return Err("record has no events".into());
        }
        let events = raw
            .events
            .iter()
            .enumerate()
            .map(|(i, e)| Event::from_raw(e).map_err(|m| format!("event {i}: {m}")))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let summary_tokens: Vec<String> = raw.summary.iter().flat_map(|s| tokenize(s)).collect();
        if summary_tokens.is_empty() {
            return Err("empty summary".into());
        }
        if let Some(labels) = &raw.oracle {
            if labels.windows(2).any(|w| w[0] >= w[1]) {
                return Err("oracle labels must be strictly increasing".into());
            }
        }
        let mut ex = Self {
            id: raw.id.clone(),
            events,
            summary: raw.summary.clone(),
            summary_tokens,
            doc_sentences: Vec::new(),
            oracle_labels: raw.oracle.clone(),
        };
        let labels_before = ex.oracle_labels.as_ref().map(Vec::len);
        policy.apply(&mut ex);
        if ex.oracle_labels.as_ref().map(Vec::len) != labels_before {
            return Err(format!(
                "oracle label out of range ({} document sentences after truncation)",
                ex.doc_sentences.len()
            ));
        }
        Ok(ex)
    }

    pub fn to_raw(&self) -> RawRecord {
        RawRecord {
            id: self.id.clone(),
            events: self
                .events
                .iter()
                .map(|e| RawEvent {
                    time: e.timestamp.clone(),
                    text: e.sentences.join(" "),
                    tokens: e.pretokenized.then(|| e.sentence_tokens.clone()),
                })
                .collect(),
            summary: self.summary.clone(),
            oracle: self.oracle_labels.clone(),
        }
    }

    /// Number of document sentences contributed by each event.
    pub fn sentence_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.events.len()];
        for s in &self.doc_sentences {
            counts[s.event] += 1;
        }
        counts
    }

    /// Greedy ROUGE-2 oracle over the truncated sentences and summary.
    pub fn compute_oracle(&self, max_selected: usize) -> Vec<usize> {
        let sents: Vec<&[String]> = self.doc_sentences.iter().map(|s| s.tokens.as_slice()).collect();
        greedy_oracle(&sents, &self.summary_tokens, max_selected)
    }

    /// Every token the model may see, for vocabulary building.
    pub fn all_tokens(&self) -> impl Iterator<Item = &String> {
        self.events
            .iter()
            .flat_map(|e| e.sentence_tokens.iter().flatten())
            .chain(&self.summary_tokens)
    }

    pub fn summary_text(&self) -> String {
        self.summary.join(" ")
    }
}

pub fn make_oracle_labels(ex: &TimelineExample, max_selected: usize) -> Vec<usize> {
    ex.compute_oracle(max_selected)
}

/// A record that failed validation and was skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct Skipped {
    pub line: usize,
    pub reason: String,
}

/// Reads a corpus. With `strict`, the first malformed record is an error;
/// otherwise it is logged, reported and skipped.
pub fn load_corpus(
    path: &Path,
    policy: &TruncationPolicy,
    strict: bool,
) -> Result<(Vec<TimelineExample>, Vec<Skipped>)> {
    policy.validate()?;
    let file = File::open(path).map_err(|e| UtsError::io(format!("opening {}", path.display()), e))?;
    let mut examples = Vec::new();
    let mut skipped = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| UtsError::io(format!("reading {}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<RawRecord>(&line)
            .map_err(|e| e.to_string())
            .and_then(|raw| TimelineExample::from_raw(&raw, policy));
        match parsed {
            Ok(ex) => examples.push(ex),
            Err(msg) if strict => {
                return Err(UtsError::Malformed {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg,
                })
            }
            Err(msg) => {
                log::warn!("{}:{}: skipping record: {msg}", path.display(), i + 1);
                skipped.push(Skipped { line: i + 1, reason: msg });
            }
        }
    }
    if examples.is_empty() {
        return Err(UtsError::Data(format!("{} contains no usable records", path.display())));
    }
    Ok((examples, skipped))
}

pub fn write_records<'a>(path: &Path, records: impl IntoIterator<Item = &'a RawRecord>) -> Result<()> {
    let ctx = || format!("writing {}", path.display());
    let file = File::create(path).map_err(|e| UtsError::io(ctx(), e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("records serialize");
        writeln!(w, "{line}").map_err(|e| UtsError::io(ctx(), e))?;
    }
    w.flush().map_err(|e| UtsError::io(ctx(), e))
}

pub fn write_corpus(path: &Path, examples: &[TimelineExample]) -> Result<()> {
    let raws: Vec<RawRecord> = examples.iter().map(TimelineExample::to_raw).collect();
    write_records(path, &raws)
}

pub fn build_vocab(examples: &[TimelineExample], cap: usize) -> Result<Vocab> {
    Vocab::build(examples.iter().map(|e| e.all_tokens()), cap)
}
