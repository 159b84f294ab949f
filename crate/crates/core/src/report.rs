//! Summaries for a corpus and metric reports averaged over checkpoints.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use uts_numerics::Scalar;

use crate::corpus::TimelineExample;
use crate::error::{Result, UtsError};
use crate::eval::{rouge, DateExtractor, DateScore, Prf, RougeScore};
use crate::summarizer::Summarizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Abs,
    Ext,
}

impl FromStr for Mode {
    type Err = UtsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "abs" => Ok(Mode::Abs),
            "ext" => Ok(Mode::Ext),
            _ => Err(UtsError::Config(format!("unknown mode {s:?} (expected abs or ext)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummarizeOptions {
    pub mode: Mode,
    pub beam: usize,
    pub max_len: usize,
    pub max_selected: usize,
}

/// One line of `summarize` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryOutput {
    pub id: String,
    pub mode: Mode,
    pub summary: String,
    pub tokens: Vec<String>,
    /// Extracted sentence indices in selection order (`ext` only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selected: Option<Vec<usize>>,
}

pub fn summarize<S: Scalar>(model: &Summarizer<S>, ex: &TimelineExample, opts: &SummarizeOptions) -> Result<SummaryOutput> {
    let enc = model.encode(ex);
    let (tokens, selected) = match opts.mode {
        Mode::Abs => {
            let d = model.beam(&enc, opts.beam, opts.max_len)?;
            (model.tokens_text(&enc, &d.tokens), None)
        }
        Mode::Ext => {
            let d = model.extract(&enc, opts.max_selected)?;
            let tokens = d.sorted().iter().flat_map(|&i| ex.doc_sentences[i].tokens.iter().cloned()).collect();
            (tokens, Some(d.selected))
        }
    };
    Ok(SummaryOutput { id: ex.id.clone(), mode: opts.mode, summary: tokens.join(" "), tokens, selected })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleScores {
    pub id: String,
    pub rouge: RougeScore,
    pub date: DateScore,
}

/// Mean precision, recall and F1 of each metric.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricMeans {
    pub rouge1: Prf,
    pub rouge2: Prf,
    pub rougel: Prf,
    pub date: Prf,
}

fn mean_prf<'a>(items: impl Iterator<Item = &'a Prf>) -> Prf {
    let (mut p, mut r, mut f, mut n) = (0.0, 0.0, 0.0, 0usize);
    for x in items {
        p += x.precision;
        r += x.recall;
        f += x.f1;
        n += 1;
    }
    if n == 0 {
        return Prf::default();
    }
    let n = n as f64;
    Prf { precision: p / n, recall: r / n, f1: f / n }
}

impl MetricMeans {
    pub fn over_examples(rows: &[ExampleScores]) -> Self {
        MetricMeans {
            rouge1: mean_prf(rows.iter().map(|r| &r.rouge.r1)),
            rouge2: mean_prf(rows.iter().map(|r| &r.rouge.r2)),
            rougel: mean_prf(rows.iter().map(|r| &r.rouge.rl)),
            date: mean_prf(rows.iter().map(|r| &r.date.prf)),
        }
    }

    pub fn over(means: &[MetricMeans]) -> Self {
        MetricMeans {
            rouge1: mean_prf(means.iter().map(|m| &m.rouge1)),
            rouge2: mean_prf(means.iter().map(|m| &m.rouge2)),
            rougel: mean_prf(means.iter().map(|m| &m.rougel)),
            date: mean_prf(means.iter().map(|m| &m.date)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointReport {
    pub checkpoint: String,
    pub mean: MetricMeans,
    pub examples: Vec<ExampleScores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: Mode,
    pub examples: usize,
    /// Per-checkpoint example means, averaged.
    pub mean: MetricMeans,
    pub checkpoints: Vec<CheckpointReport>,
}

impl EvalReport {
    pub fn from_checkpoints(mode: Mode, checkpoints: Vec<CheckpointReport>) -> Result<Self> {
        let first = checkpoints.first().ok_or_else(|| UtsError::Config("no checkpoints to evaluate".into()))?;
        let examples = first.examples.len();
        if checkpoints.iter().any(|c| c.examples.len() != examples) {
            return Err(UtsError::Data("checkpoints were scored on different example sets".into()));
        }
        let means: Vec<MetricMeans> = checkpoints.iter().map(|c| c.mean).collect();
        Ok(EvalReport { mode, examples, mean: MetricMeans::over(&means), checkpoints })
    }
}

pub fn score_checkpoint<S: Scalar>(
    model: &Summarizer<S>,
    label: &str,
    examples: &[TimelineExample],
    opts: &SummarizeOptions,
) -> Result<CheckpointReport> {
    if examples.is_empty() {
        return Err(UtsError::Data("no examples to evaluate".into()));
    }
    let dates = DateExtractor::default();
    let mut rows = Vec::with_capacity(examples.len());
    for ex in examples {
        let out = summarize(model, ex, opts)?;
        rows.push(ExampleScores {
            id: ex.id.clone(),
            rouge: rouge(&out.tokens, &ex.summary_tokens),
            date: dates.date_f1(&out.summary, &ex.summary_text()),
        });
    }
    Ok(CheckpointReport { checkpoint: label.to_string(), mean: MetricMeans::over_examples(&rows), examples: rows })
}

/// Loads and scores each checkpoint. All checkpoints must share one model
/// configuration.
pub fn eval_report<S: Scalar>(paths: &[PathBuf], examples: &[TimelineExample], opts: &SummarizeOptions) -> Result<EvalReport> {
    let mut reports = Vec::with_capacity(paths.len());
    let mut config = None;
    for path in paths {
        let (model, _) = Summarizer::<S>::load(path)?;
        match &config {
            None => config = Some(model.cfg.clone()),
            Some(c) if *c != model.cfg => {
                return Err(UtsError::CheckpointMismatch(format!(
                    "{} has a different model configuration from {}",
                    path.display(),
                    paths[0].display()
                )))
            }
            Some(_) => {}
        }
        reports.push(score_checkpoint(&model, &label(path), examples, opts)?);
    }
    EvalReport::from_checkpoints(opts.mode, reports)
}

fn label(path: &Path) -> String {
    path.display().to_string()
}
