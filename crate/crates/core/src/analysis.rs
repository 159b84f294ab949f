//! Attention dumps and diagnostic summaries: time-attention maps,
//! two-level attention maps, the π center-of-mass trend, and the loss-curve
//! SVG.

use std::fmt::Write as _;

use serde::Serialize;
use uts_numerics::Scalar;

use crate::corpus::TimelineExample;
use crate::error::{Result, UtsError};
use crate::model::abs_decoder::Decoded;
use crate::model::EncodedExample;
use crate::summarizer::Summarizer;
use crate::train::EpochLog;

/// A labelled matrix written as CSV with one row per decode step.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl AttentionMap {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,token");
        for c in &self.col_labels {
            out.push(',');
            out.push_str(&csv_field(c));
        }
        out.push('\n');
        for (i, (label, row)) in self.row_labels.iter().zip(&self.rows).enumerate() {
            let _ = write!(out, "{i},{}", csv_field(label));
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

fn step_labels<S: Scalar>(model: &Summarizer<S>, ex: &EncodedExample, d: &Decoded) -> Vec<String> {
    d.trace.rows.iter().map(|r| ex.token_text(&model.vocab, r.token).to_string()).collect()
}

fn event_labels(ex: &EncodedExample) -> Vec<String> {
    (0..ex.n_events()).map(|i| format!("event{i}")).collect()
}

fn word_labels<S: Scalar>(model: &Summarizer<S>, ex: &EncodedExample) -> Vec<String> {
    let mut within = vec![0usize; ex.n_events()];
    ex.word_event
        .iter()
        .zip(&ex.source_ext)
        .map(|(&e, &id)| {
            let j = within[e];
            within[e] += 1;
            format!("e{e}w{j}:{}", ex.token_text(&model.vocab, id))
        })
        .collect()
}

/// π per decode step, `[steps × events]`.
pub fn time_attention_map<S: Scalar>(model: &Summarizer<S>, ex: &EncodedExample, d: &Decoded) -> AttentionMap {
    AttentionMap {
        row_labels: step_labels(model, ex, d),
        col_labels: event_labels(ex),
        rows: d.trace.rows.iter().map(|r| r.pi.clone()).collect(),
    }
}

pub struct TwoLevelMaps {
    /// Word attention, `[steps × words]`.
    pub alpha: AttentionMap,
    /// Event attention, `[steps × events]`.
    pub beta: AttentionMap,
    /// Modulated word attention `α·β`, `[steps × words]`.
    pub gamma: AttentionMap,
}

pub fn two_level_maps<S: Scalar>(model: &Summarizer<S>, ex: &EncodedExample, d: &Decoded) -> TwoLevelMaps {
    let steps = step_labels(model, ex, d);
    let words = word_labels(model, ex);
    let map = |cols: &[String], f: &dyn Fn(&crate::model::abs_decoder::TraceRow) -> Vec<f64>| AttentionMap {
        row_labels: steps.clone(),
        col_labels: cols.to_vec(),
        rows: d.trace.rows.iter().map(f).collect(),
    };
    TwoLevelMaps {
        alpha: map(&words, &|r| r.alpha.clone()),
        beta: map(&event_labels(ex), &|r| r.beta.clone()),
        gamma: map(&words, &|r| r.gamma.clone()),
    }
}

/// `Σ_i i·π_i` with events indexed from 0.
pub fn center_of_mass(dist: &[f64]) -> f64 {
    dist.iter().enumerate().map(|(i, p)| i as f64 * p).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeAttentionTrend {
    pub examples: usize,
    /// Mean π center of mass at the first decode step.
    pub first_step: f64,
    /// Mean π center of mass at the last decode step.
    pub last_step: f64,
    pub per_example: Vec<(String, f64, f64)>,
}

impl TimeAttentionTrend {
    pub fn moves_later(&self) -> bool {
        self.first_step < self.last_step
    }
}

/// Decodes every example and compares π at its first and last step.
pub fn time_attention_trend<S: Scalar>(
    model: &Summarizer<S>,
    examples: &[TimelineExample],
    beam: usize,
    max_len: usize,
) -> Result<TimeAttentionTrend> {
    if examples.is_empty() {
        return Err(UtsError::Data("no examples to analyze".into()));
    }
    let mut per_example = Vec::with_capacity(examples.len());
    for ex in examples {
        let enc = model.encode(ex);
        let d = model.beam(&enc, beam, max_len)?;
        let (first, last) = match (d.trace.rows.first(), d.trace.rows.last()) {
            (Some(f), Some(l)) => (center_of_mass(&f.pi), center_of_mass(&l.pi)),
            _ => return Err(UtsError::Data(format!("{}: empty decoder trace", ex.id))),
        };
        per_example.push((ex.id.clone(), first, last));
    }
    let n = per_example.len() as f64;
    Ok(TimeAttentionTrend {
        examples: per_example.len(),
        first_step: per_example.iter().map(|e| e.1).sum::<f64>() / n,
        last_step: per_example.iter().map(|e| e.2).sum::<f64>() / n,
        per_example,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtractionStats {
    pub examples: usize,
    /// Examples whose selections were made in strictly ascending order.
    pub ascending: usize,
    /// Examples whose sorted selection equals the oracle labels.
    pub oracle_match: usize,
}

pub fn extraction_stats<S: Scalar>(model: &Summarizer<S>, examples: &[TimelineExample], max_selected: usize) -> Result<ExtractionStats> {
    let mut stats = ExtractionStats { examples: examples.len(), ascending: 0, oracle_match: 0 };
    for ex in examples {
        let enc = model.encode(ex);
        let d = model.extract(&enc, max_selected)?;
        if d.selected.windows(2).all(|w| w[0] < w[1]) {
            stats.ascending += 1;
        }
        if ex.oracle_labels.as_ref() == Some(&d.sorted()) {
            stats.oracle_match += 1;
        }
    }
    Ok(stats)
}

const SERIES: [(&str, &str); 5] = [
    ("L_abs", "#1f77b4"),
    ("L_ext", "#ff7f0e"),
    ("L_inc", "#2ca02c"),
    ("total", "#7f7f7f"),
    ("consistency", "#d62728"),
];

fn series_value(e: &EpochLog, i: usize) -> f64 {
    [e.abs, e.ext, e.inc, e.total, e.consistency][i]
}

/// Line chart of the per-epoch losses, one panel per series so curves of
/// different scale stay readable.
pub fn plot_losses_svg(log: &[EpochLog]) -> Result<String> {
    if log.is_empty() {
        return Err(UtsError::Data("loss log is empty".into()));
    }
    let (pw, ph, margin) = (360.0, 180.0, 50.0);
    let width = 2.0 * (pw + margin) + margin;
    let height = 3.0 * (ph + margin) + margin;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (e_min, e_max) = (log[0].epoch as f64, log[log.len() - 1].epoch as f64);
    let e_span = (e_max - e_min).max(1.0);
    for (i, (name, color)) in SERIES.iter().enumerate() {
        let ox = margin + (i % 2) as f64 * (pw + margin);
        let oy = margin + (i / 2) as f64 * (ph + margin);
        let values: Vec<f64> = log.iter().map(|e| series_value(e, i)).filter(|v| v.is_finite()).collect();
        let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let (lo, hi) = if values.is_empty() { (0.0, 1.0) } else if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
        let _ = writeln!(svg, r##"<g><rect x="{ox}" y="{oy}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##);
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{name}</text>"#, ox + pw / 2.0, oy - 8.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{hi:.3}</text>"#, ox - 4.0, oy + 10.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{lo:.3}</text>"#, ox - 4.0, oy + ph);
        let _ = writeln!(svg, r#"<text x="{ox}" y="{}">{e_min}</text>"#, oy + ph + 14.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{e_max}</text>"#, ox + pw, oy + ph + 14.0);
        let points: Vec<String> = log
            .iter()
            .filter(|e| series_value(e, i).is_finite())
            .map(|e| {
                let x = ox + (e.epoch as f64 - e_min) / e_span * pw;
                let y = oy + ph - (series_value(e, i) - lo) / (hi - lo) * ph;
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/></g>"#,
            points.join(" ")
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">epoch</text>"#,
        width / 2.0,
        height - 10.0
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn center_of_mass_by_hand() {
        assert_eq!(center_of_mass(&[1.0, 0.0, 0.0]), 0.0);
        assert_eq!(center_of_mass(&[0.0, 0.5, 0.5]), 1.5);
    }

    #[test]
    fn svg_from_three_epochs() {
        let log: Vec<EpochLog> = (1..=3)
            .map(|e| EpochLog {
                epoch: e,
                abs: 4.0 / e as f64,
                ext: 2.0,
                inc: 4.0 - 0.5 * e as f64,
                total: 10.0 - e as f64,
                consistency: 5.3 - e as f64,
                abs_per_token: 1.0,
                val_total: None,
            })
            .collect();
        let svg = plot_losses_svg(&log).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), SERIES.len());
        assert!(plot_losses_svg(&[]).is_err());
    }

    #[test]
    fn csv_quotes_labels_with_commas() {
        let m = AttentionMap {
            row_labels: vec![",".into()],
            col_labels: vec!["event0".into()],
            rows: vec![vec![1.0]],
        };
        assert_eq!(m.to_csv(), "step,token,event0\n0,\",\",1\n");
    }
}
