//! End-to-end acceptance checks, one PASS/FAIL line per criterion.
//!
//! Criteria 5, 6 and 7 share one set of training runs: three seeds of the
//! full model, of λ = 0 and of the model without the graph encoder, each
//! trained for a fixed number of epochs on the same synthetic corpus and
//! scored with its best-validation parameters on a held-out set.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uts_core::analysis::{extraction_stats, time_attention_trend};
use uts_core::check::{gradcheck_toy, joint_gradcheck_config};
use uts_core::corpus::synth::{generate_synthetic, SynthConfig};
use uts_core::corpus::{build_vocab, greedy_oracle, set_rouge2, TimelineExample};
use uts_core::eval::{lcs_len, rouge};
use uts_core::train::{mean_loss, EpochLog, TrainConfig, Trainer};
use uts_core::Summarizer64;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn corpus(seed: u64, n: usize, cfg: &TrainConfig) -> Vec<TimelineExample> {
    generate_synthetic(seed, n, &SynthConfig::default())
        .unwrap()
        .iter()
        .map(|r| TimelineExample::from_raw(r, &cfg.policy()).unwrap())
        .collect()
}

fn sums_to_one(v: &[f64]) -> bool {
    (v.iter().sum::<f64>() - 1.0).abs() <= 1e-6
}

fn gradient_integrity() -> Outcome {
    let start = Instant::now();
    let report = gradcheck_toy(3, joint_gradcheck_config()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        report.passed() && report.max_rel_error() < 1e-4 && secs < 60.0,
        format!(
            "{} coordinates, max relative error {:.2e}, {} failures, {secs:.1}s",
            report.coordinates_checked,
            report.max_rel_error(),
            report.failures.len()
        ),
    )
}

fn normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let examples = corpus(21, 40, &TrainConfig::desk());
    let (mut steps, mut violations, mut selections) = (0usize, 0usize, 0usize);
    while steps < 1000 {
        let mut cfg = TrainConfig::desk();
        cfg.init_range = rng.gen_range(0.02..2.0);
        cfg.use_graph = rng.gen_bool(0.5);
        cfg.seed = rng.gen();
        let vocab = build_vocab(&examples, cfg.vocab_cap).unwrap();
        let model = Summarizer64::new(cfg.model_config(vocab.len()), vocab, cfg.seed).unwrap();
        let ex = examples.choose(&mut rng).unwrap();
        let enc = model.encode(ex);
        let d = model.greedy(&enc, rng.gen_range(1..=30)).unwrap();
        for row in &d.trace.rows {
            let dists = [&row.alpha, &row.beta, &row.pi, &row.gamma_hat, &row.final_dist];
            violations += dists.iter().filter(|v| !sums_to_one(v)).count();
            steps += 1;
        }
        let picks = model.extract(&enc, cfg.max_selected).unwrap();
        for beta_hat in &picks.step_attention {
            violations += usize::from(!sums_to_one(beta_hat));
            selections += 1;
        }
    }
    outcome(
        violations == 0,
        format!("{steps} decode steps, {selections} extractor steps, {violations} violations"),
    )
}

fn random_tokens(rng: &mut ChaCha8Rng, max_len: usize, alphabet: usize) -> Vec<String> {
    let n = rng.gen_range(0..=max_len);
    (0..n).map(|_| format!("t{}", rng.gen_range(0..alphabet))).collect()
}

fn brute_force_lcs(a: &[String], b: &[String]) -> usize {
    let is_subsequence = |sub: &[&String]| {
        let mut it = b.iter();
        sub.iter().all(|s| it.any(|x| x == *s))
    };
    (0u32..1 << a.len())
        .filter_map(|mask| {
            let sub: Vec<&String> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| &a[i]).collect();
            is_subsequence(&sub).then_some(sub.len())
        })
        .max()
        .unwrap_or(0)
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let lcs_ok = (0..200)
        .filter(|_| {
            let a = random_tokens(&mut rng, 10, 4);
            let b = random_tokens(&mut rng, 10, 4);
            lcs_len(&a, &b) == brute_force_lcs(&a, &b)
        })
        .count();
    let max_selected = 4;
    let (mut equal, mut above) = (0, 0);
    for _ in 0..100 {
        let n = rng.gen_range(1..=10);
        let sentences: Vec<Vec<String>> = (0..n).map(|_| random_tokens(&mut rng, 8, 6)).collect();
        let reference = random_tokens(&mut rng, 16, 6);
        let refs: Vec<&[String]> = sentences.iter().map(Vec::as_slice).collect();
        let greedy = set_rouge2(&refs, &greedy_oracle(&refs, &reference, max_selected), &reference);
        let best = (0u32..1 << n)
            .filter(|m| m.count_ones() as usize <= max_selected)
            .map(|m| {
                let subset: Vec<usize> = (0..n).filter(|i| m >> i & 1 == 1).collect();
                set_rouge2(&refs, &subset, &reference)
            })
            .fold(0.0, f64::max);
        if (greedy - best).abs() < 1e-12 {
            equal += 1;
        }
        if greedy > best + 1e-12 {
            above += 1;
        }
    }
    outcome(
        lcs_ok == 200 && equal >= 80 && above == 0,
        format!("LCS agrees on {lcs_ok}/200 pairs; greedy oracle optimal on {equal}/100, above optimum {above}"),
    )
}

fn exact_and_extracted(model: &Summarizer64, examples: &[TimelineExample], max_len: usize, max_selected: usize) -> (usize, usize) {
    let exact = examples
        .iter()
        .filter(|ex| {
            let enc = model.encode(ex);
            model.tokens_text(&enc, &model.greedy(&enc, max_len).unwrap().tokens) == ex.summary_tokens
        })
        .count();
    (exact, extraction_stats(model, examples, max_selected).unwrap().oracle_match)
}

fn overfit() -> (Outcome, Summarizer64) {
    let start = Instant::now();
    let mut cfg = TrainConfig::desk();
    cfg.max_epochs = 200;
    let examples = corpus(7, 32, &cfg);
    let mut trainer = Trainer::<f64>::new(cfg.clone(), examples.clone(), Vec::new()).unwrap();
    let opts = cfg.loss_options();
    let mut last = String::new();
    while trainer.state.epoch < cfg.max_epochs {
        trainer.epoch().unwrap();
        if !trainer.state.epoch.is_multiple_of(10) {
            continue;
        }
        let loss = mean_loss(&trainer.model, trainer.train_examples(), &opts).unwrap();
        let per_token = loss.abs * examples.len() as f64 / loss.abs_tokens as f64;
        let (exact, extracted) = exact_and_extracted(&trainer.model, &examples, cfg.max_decode_len, cfg.max_selected);
        last = format!(
            "epoch {}: per-token L_abs {per_token:.4}, exact {exact}/32, extractor {extracted}/32, {:.0}s",
            trainer.state.epoch,
            start.elapsed().as_secs_f64()
        );
        println!("  overfit {last}");
        if per_token < 0.1 && exact * 10 >= 9 * 32 && extracted * 10 >= 9 * 32 {
            let fast = start.elapsed().as_secs_f64() < 1800.0;
            return (outcome(fast, last), trainer.model);
        }
    }
    (outcome(false, last), trainer.model)
}

#[derive(Clone, Copy, PartialEq)]
enum Variant {
    Full,
    NoUnifier,
    NoGraph,
}

impl Variant {
    fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoUnifier => "lambda=0",
            Variant::NoGraph => "no-graph",
        }
    }
}

struct Run {
    variant: Variant,
    seed: u64,
    rouge2: f64,
    log: Vec<EpochLog>,
    model: Summarizer64,
}

const EPOCHS: usize = 25;

fn train_run(variant: Variant, seed: u64, train: &[TimelineExample], val: &[TimelineExample], test: &[TimelineExample]) -> Run {
    let mut cfg = TrainConfig::desk();
    cfg.seed = seed;
    cfg.max_epochs = EPOCHS;
    cfg.patience = EPOCHS;
    match variant {
        Variant::Full => {}
        Variant::NoUnifier => cfg.lambda_inc = 0.0,
        Variant::NoGraph => cfg.use_graph = false,
    }
    let mut trainer = Trainer::<f64>::new(cfg.clone(), train.to_vec(), val.to_vec()).unwrap();
    trainer.run().unwrap();
    let model = trainer.best.clone().unwrap();
    let rouge2 = test
        .iter()
        .map(|ex| {
            let enc = model.encode(ex);
            let d = model.beam(&enc, cfg.beam, cfg.max_decode_len).unwrap();
            rouge(&model.tokens_text(&enc, &d.tokens), &ex.summary_tokens).r2.f1
        })
        .sum::<f64>()
        / test.len() as f64;
    println!("  {} seed {seed}: ROUGE-2 {rouge2:.4} after {} epochs", variant.name(), trainer.state.epoch);
    Run { variant, seed, rouge2, log: trainer.log, model }
}

fn time_order(runs: &[Run], test: &[TimelineExample]) -> Outcome {
    let cfg = TrainConfig::desk();
    let (mut first, mut last, mut ascending, mut total) = (0.0, 0.0, 0, 0);
    let mut parts = Vec::new();
    for run in runs.iter().filter(|r| r.variant == Variant::Full) {
        let trend = time_attention_trend(&run.model, test, cfg.beam, cfg.max_decode_len).unwrap();
        let ext = extraction_stats(&run.model, test, cfg.max_selected).unwrap();
        parts.push(format!("seed {} {:.2}->{:.2}", run.seed, trend.first_step, trend.last_step));
        first += trend.first_step * trend.examples as f64;
        last += trend.last_step * trend.examples as f64;
        ascending += ext.ascending;
        total += ext.examples;
    }
    let (first, last) = (first / total as f64, last / total as f64);
    outcome(
        first < last && ascending * 10 >= total * 9,
        format!(
            "pi center of mass first step {first:.3}, last step {last:.3} ({}); ascending {ascending}/{total}",
            parts.join(", ")
        ),
    )
}

fn unifier_trend(runs: &[Run]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for run in runs.iter().filter(|r| r.variant == Variant::Full) {
        let (a, b) = (&run.log[0], run.log.last().unwrap());
        pass &= b.inc < a.inc && b.consistency < a.consistency;
        parts.push(format!(
            "seed {}: L_inc {:.3}->{:.3}, consistency {:.3}->{:.3}",
            run.seed, a.inc, b.inc, a.consistency, b.consistency
        ));
    }
    outcome(pass, parts.join("; "))
}

fn ablation(runs: &[Run]) -> Outcome {
    let mean = |v: Variant| {
        let r: Vec<f64> = runs.iter().filter(|r| r.variant == v).map(|r| r.rouge2).collect();
        r.iter().sum::<f64>() / r.len() as f64
    };
    let (full, no_unifier, no_graph) = (mean(Variant::Full), mean(Variant::NoUnifier), mean(Variant::NoGraph));
    outcome(
        full >= no_unifier && full >= no_graph,
        format!(
            "mean ROUGE-2 full {full:.4}, lambda=0 {no_unifier:.4} (delta {:+.4}), no-graph {no_graph:.4} (delta {:+.4})",
            full - no_unifier,
            full - no_graph
        ),
    )
}

fn determinism(trained: &Summarizer64) -> Outcome {
    let cfg = TrainConfig::desk();
    let examples = corpus(9, 16, &cfg);
    let epoch_one = || {
        let mut t = Trainer::<f64>::new(cfg.clone(), examples.clone(), Vec::new()).unwrap();
        t.epoch().unwrap();
        t.model.to_bytes(&[]).unwrap()
    };
    let reproducible = epoch_one() == epoch_one();

    let bytes = trained.to_bytes(&[]).unwrap();
    let (back, _) = Summarizer64::from_reader(&mut bytes.as_slice()).unwrap();
    let round_trip = back.to_bytes(&[]).unwrap() == bytes;

    let held_out = corpus(12, 100, &cfg);
    let agree = held_out
        .iter()
        .filter(|ex| {
            let enc = trained.encode(ex);
            trained.beam(&enc, 1, cfg.max_decode_len).unwrap().tokens
                == trained.greedy(&enc, cfg.max_decode_len).unwrap().tokens
        })
        .count();
    outcome(
        reproducible && round_trip && agree == 100,
        format!("epoch-1 bitwise reproducible {reproducible}, checkpoint round trip {round_trip}, beam 1 = greedy on {agree}/100"),
    )
}

fn main() {
    // `cargo test` passes harness flags; a name filter that excludes this
    // suite skips it.
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !filters.is_empty() && !filters.iter().any(|f| "acceptance".contains(f.as_str())) {
        return;
    }
    let start = Instant::now();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &'static str, o: Outcome| {
        println!("criterion {n} ({name}): {} | {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };
    report(1, "gradient integrity", gradient_integrity());
    report(2, "normalization", normalization());
    report(3, "oracle equivalence", oracle_equivalence());
    let (fit, trained) = overfit();
    report(4, "overfit", fit);

    let cfg = TrainConfig::desk();
    let train = corpus(100, 256, &cfg);
    let val = corpus(200, 32, &cfg);
    let test = corpus(300, 64, &cfg);
    let mut runs = Vec::new();
    for seed in 1..=3 {
        for variant in [Variant::Full, Variant::NoUnifier, Variant::NoGraph] {
            runs.push(train_run(variant, seed, &train, &val, &test));
        }
    }
    report(5, "time-order diagnostics", time_order(&runs, &test));
    report(6, "unifier trend", unifier_trend(&runs));
    report(7, "ablation direction", ablation(&runs));
    report(8, "determinism and persistence", determinism(&trained));

    println!("\nacceptance summary ({:.0}s):", start.elapsed().as_secs_f64());
    for (n, name, o) in &results {
        println!("  {n}. {name}: {}", if o.pass { "PASS" } else { "FAIL" });
    }
    let failed: BTreeSet<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
