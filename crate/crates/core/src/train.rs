//! Training configuration, the minibatch Adagrad loop, early stopping and
//! top-3 checkpoint retention.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use uts_numerics::{adagrad_step, Gradients, Scalar};

use crate::corpus::{TimelineExample, TruncationPolicy, Vocab};
use crate::error::{Result, UtsError};
use crate::model::unifier::{LossBreakdown, LossOptions};
use crate::model::{EncodedExample, ModelConfig};
use crate::summarizer::Summarizer;

pub const TOP_CHECKPOINTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl std::str::FromStr for Precision {
    type Err = UtsError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" | "32" => Ok(Self::F32),
            "f64" | "64" => Ok(Self::F64),
            _ => Err(UtsError::Config(format!("precision must be f32 or f64, got {s}"))),
        }
    }
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::F32 => "f32",
            Self::F64 => "f64",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub key_dim: usize,
    pub global_dim: usize,
    pub local_dim: usize,
    pub batch_size: usize,
    pub max_events: usize,
    pub lr: f64,
    /// Starting value of every Adagrad accumulator.
    pub adagrad_init: f64,
    pub clip_norm: f64,
    pub beam: usize,
    /// Top-K sentences of the extractor attention used by the inconsistency loss.
    pub k: usize,
    pub lambda_inc: f64,
    pub init_range: f64,
    pub seed: u64,
    pub max_epochs: usize,
    pub patience: usize,
    pub polish_iters: usize,
    pub use_graph: bool,
    pub re_residual: bool,
    pub vocab_cap: usize,
    pub max_article_tokens: usize,
    pub max_summary_tokens: usize,
    pub max_sentences: usize,
    pub max_sentence_tokens: usize,
    pub max_selected: usize,
    pub max_decode_len: usize,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let policy = TruncationPolicy::default();
        Self {
            hidden_dim: 256,
            embed_dim: 128,
            key_dim: 128,
            global_dim: 512,
            local_dim: 256,
            batch_size: 16,
            max_events: 8,
            lr: 0.15,
            adagrad_init: 0.1,
            clip_norm: 2.0,
            beam: 4,
            k: 3,
            lambda_inc: 1.0,
            init_range: 0.02,
            seed: 1,
            max_epochs: 30,
            patience: 3,
            polish_iters: 2,
            use_graph: true,
            re_residual: false,
            vocab_cap: 50_000,
            max_article_tokens: policy.max_article_tokens,
            max_summary_tokens: policy.max_summary_tokens,
            max_sentences: policy.max_sentences,
            max_sentence_tokens: policy.max_sentence_tokens,
            max_selected: policy.max_selected,
            max_decode_len: policy.max_summary_tokens,
            precision: Precision::F64,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| UtsError::Config(format!("bad value for {key}: {value:?}")))
}

impl TrainConfig {
    /// Small dimensions that train in minutes on one core. At this size
    /// λ = 1 often drives both attention maps onto the first sentence, so
    /// the inconsistency term is down-weighted.
    pub fn desk() -> Self {
        Self {
            hidden_dim: 32,
            embed_dim: 16,
            key_dim: 16,
            global_dim: 64,
            local_dim: 32,
            batch_size: 1,
            lambda_inc: 0.3,
            ..Self::default()
        }
    }

    pub const KEYS: &'static [&'static str] = &[
        "hidden_dim",
        "embed_dim",
        "key_dim",
        "global_dim",
        "local_dim",
        "batch_size",
        "max_events",
        "lr",
        "adagrad_init",
        "clip_norm",
        "beam",
        "k",
        "lambda_inc",
        "init_range",
        "seed",
        "max_epochs",
        "patience",
        "polish_iters",
        "use_graph",
        "re_residual",
        "vocab_cap",
        "max_article_tokens",
        "max_summary_tokens",
        "max_sentences",
        "max_sentence_tokens",
        "max_selected",
        "max_decode_len",
        "precision",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key.trim() {
            "hidden_dim" => self.hidden_dim = parse(key, value)?,
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "key_dim" => self.key_dim = parse(key, value)?,
            "global_dim" => self.global_dim = parse(key, value)?,
            "local_dim" => self.local_dim = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "max_events" => self.max_events = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "adagrad_init" => self.adagrad_init = parse(key, value)?,
            "clip_norm" => self.clip_norm = parse(key, value)?,
            "beam" => self.beam = parse(key, value)?,
            "k" | "K" => self.k = parse(key, value)?,
            "lambda_inc" => self.lambda_inc = parse(key, value)?,
            "init_range" => self.init_range = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "polish_iters" => self.polish_iters = parse(key, value)?,
            "use_graph" => self.use_graph = parse(key, value)?,
            "re_residual" => self.re_residual = parse(key, value)?,
            "vocab_cap" => self.vocab_cap = parse(key, value)?,
            "max_article_tokens" => self.max_article_tokens = parse(key, value)?,
            "max_summary_tokens" => self.max_summary_tokens = parse(key, value)?,
            "max_sentences" => self.max_sentences = parse(key, value)?,
            "max_sentence_tokens" => self.max_sentence_tokens = parse(key, value)?,
            "max_selected" => self.max_selected = parse(key, value)?,
            "max_decode_len" => self.max_decode_len = parse(key, value)?,
            "precision" => self.precision = value.trim().parse()?,
            other => return Err(UtsError::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "hidden_dim" => self.hidden_dim.to_string(),
            "embed_dim" => self.embed_dim.to_string(),
            "key_dim" => self.key_dim.to_string(),
            "global_dim" => self.global_dim.to_string(),
            "local_dim" => self.local_dim.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "max_events" => self.max_events.to_string(),
            "lr" => self.lr.to_string(),
            "adagrad_init" => self.adagrad_init.to_string(),
            "clip_norm" => self.clip_norm.to_string(),
            "beam" => self.beam.to_string(),
            "k" => self.k.to_string(),
            "lambda_inc" => self.lambda_inc.to_string(),
            "init_range" => self.init_range.to_string(),
            "seed" => self.seed.to_string(),
            "max_epochs" => self.max_epochs.to_string(),
            "patience" => self.patience.to_string(),
            "polish_iters" => self.polish_iters.to_string(),
            "use_graph" => self.use_graph.to_string(),
            "re_residual" => self.re_residual.to_string(),
            "vocab_cap" => self.vocab_cap.to_string(),
            "max_article_tokens" => self.max_article_tokens.to_string(),
            "max_summary_tokens" => self.max_summary_tokens.to_string(),
            "max_sentences" => self.max_sentences.to_string(),
            "max_sentence_tokens" => self.max_sentence_tokens.to_string(),
            "max_selected" => self.max_selected.to_string(),
            "max_decode_len" => self.max_decode_len.to_string(),
            "precision" => self.precision.to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines; blank lines and `#` comments are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| UtsError::Config(format!("line {}: expected key=value", i + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in Self::KEYS {
            let _ = writeln!(s, "{key} = {}", self.get(key).unwrap_or_default());
        }
        s
    }

    pub fn to_meta(&self) -> Vec<(String, String)> {
        Self::KEYS
            .iter()
            .map(|k| (format!("train.{k}"), self.get(k).unwrap_or_default()))
            .collect()
    }

    /// Recovers the settings stored in a checkpoint header by [`Self::to_meta`];
    /// keys that are absent keep their defaults.
    pub fn from_meta(meta: &[(String, String)]) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in meta {
            if let Some(key) = k.strip_prefix("train.") {
                cfg.set(key, v)?;
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("beam", self.beam),
            ("k", self.k),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
            ("vocab_cap", self.vocab_cap),
            ("max_decode_len", self.max_decode_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(UtsError::Config(format!("{name} must be positive")));
            }
        }
        if !(self.lr > 0.0) || !(self.clip_norm > 0.0) {
            return Err(UtsError::Config("lr and clip_norm must be positive".into()));
        }
        if !(self.adagrad_init >= 0.0) {
            return Err(UtsError::Config("adagrad_init must be non-negative".into()));
        }
        if !(self.lambda_inc >= 0.0) {
            return Err(UtsError::Config("lambda_inc must be non-negative".into()));
        }
        self.policy().validate()?;
        self.model_config(16).validate()
    }

    pub fn policy(&self) -> TruncationPolicy {
        TruncationPolicy {
            max_article_tokens: self.max_article_tokens,
            max_summary_tokens: self.max_summary_tokens,
            max_events: self.max_events,
            max_sentences: self.max_sentences,
            max_sentence_tokens: self.max_sentence_tokens,
            max_selected: self.max_selected,
        }
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            key_dim: self.key_dim,
            global_dim: self.global_dim,
            local_dim: self.local_dim,
            max_events: self.max_events,
            polish_iters: self.polish_iters,
            use_graph: self.use_graph,
            re_residual: self.re_residual,
            init_range: self.init_range,
        }
    }

    pub fn loss_options(&self) -> LossOptions {
        LossOptions {
            lambda_inc: self.lambda_inc,
            top_k: self.k,
        }
    }
}

/// Fills in greedy oracle labels wherever a record lacks them.
pub fn ensure_oracles(examples: &mut [TimelineExample], max_selected: usize) {
    for ex in examples {
        if ex.oracle_labels.is_none() {
            ex.oracle_labels = Some(ex.compute_oracle(max_selected));
        }
    }
}

pub fn encode_all<S: Scalar>(model: &Summarizer<S>, examples: &[TimelineExample]) -> Vec<EncodedExample> {
    examples.iter().map(|ex| model.encode(ex)).collect()
}

/// Per-epoch means over training examples, plus the validation loss.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpochLog {
    pub epoch: usize,
    pub abs: f64,
    pub ext: f64,
    pub inc: f64,
    pub total: f64,
    pub consistency: f64,
    /// Teacher-forced abstractive loss per target token.
    pub abs_per_token: f64,
    pub val_total: Option<f64>,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,abs,ext,inc,total,consistency,abs_per_token,val_total";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch,
            self.abs,
            self.ext,
            self.inc,
            self.total,
            self.consistency,
            self.abs_per_token,
            self.val_total.map_or(String::new(), |v| v.to_string())
        )
    }

    pub fn parse_csv(text: &str) -> Result<Vec<EpochLog>> {
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with("epoch") {
                continue;
            }
            let bad = |msg: &str| UtsError::Data(format!("loss log line {}: {msg}", i + 1));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() < 5 {
                return Err(bad("expected at least epoch,abs,ext,inc,total"));
            }
            let num = |j: usize| -> Result<f64> {
                match f.get(j) {
                    None => Ok(f64::NAN),
                    Some(s) => s.trim().parse().map_err(|_| bad(&format!("bad number {s:?}"))),
                }
            };
            out.push(EpochLog {
                epoch: f[0].trim().parse().map_err(|_| bad("bad epoch"))?,
                abs: num(1)?,
                ext: num(2)?,
                inc: num(3)?,
                total: num(4)?,
                consistency: num(5)?,
                abs_per_token: num(6)?,
                val_total: match f.get(7).map(|s| s.trim()) {
                    None | Some("") => None,
                    Some(_) => Some(num(7)?),
                },
            });
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub epoch: usize,
    pub best_val_loss: f64,
    pub epochs_since_best: usize,
    /// Ascending by validation loss, at most [`TOP_CHECKPOINTS`] entries.
    pub top_checkpoints: Vec<(f64, PathBuf)>,
}

impl Default for TrainState {
    fn default() -> Self {
        Self {
            epoch: 0,
            best_val_loss: f64::INFINITY,
            epochs_since_best: 0,
            top_checkpoints: Vec::new(),
        }
    }
}

impl TrainState {
    /// Records an epoch's validation loss; returns true if it is a new best.
    pub fn observe(&mut self, val_loss: f64) -> bool {
        self.epoch += 1;
        if val_loss < self.best_val_loss {
            self.best_val_loss = val_loss;
            self.epochs_since_best = 0;
            true
        } else {
            self.epochs_since_best += 1;
            false
        }
    }

    pub fn should_stop(&self, patience: usize) -> bool {
        self.epochs_since_best >= patience
    }

    /// Whether a checkpoint with this loss would enter the top list.
    pub fn qualifies(&self, val_loss: f64) -> bool {
        self.top_checkpoints.len() < TOP_CHECKPOINTS
            || self.top_checkpoints.last().is_some_and(|(worst, _)| val_loss < *worst)
    }

    /// Inserts a checkpoint, returning the path that fell off the list, if any.
    pub fn insert_checkpoint(&mut self, val_loss: f64, path: PathBuf) -> Option<PathBuf> {
        let at = self.top_checkpoints.partition_point(|(v, _)| *v <= val_loss);
        self.top_checkpoints.insert(at, (val_loss, path));
        if self.top_checkpoints.len() > TOP_CHECKPOINTS {
            self.top_checkpoints.pop().map(|(_, p)| p)
        } else {
            None
        }
    }
}

/// Mean loss breakdown over a set of examples, without gradients.
pub fn mean_loss<S: Scalar>(model: &Summarizer<S>, examples: &[EncodedExample], opts: &LossOptions) -> Result<LossBreakdown> {
    let mut acc = LossBreakdown::default();
    for ex in examples {
        let b = model.loss(ex, opts)?;
        add_breakdown(&mut acc, &b);
    }
    Ok(scale_breakdown(acc, examples.len()))
}

fn add_breakdown(acc: &mut LossBreakdown, b: &LossBreakdown) {
    acc.abs += b.abs;
    acc.ext += b.ext;
    acc.inc += b.inc;
    acc.total += b.total;
    acc.consistency += b.consistency;
    acc.abs_tokens += b.abs_tokens;
}

fn scale_breakdown(mut acc: LossBreakdown, n: usize) -> LossBreakdown {
    let n = n.max(1) as f64;
    acc.abs /= n;
    acc.ext /= n;
    acc.inc /= n;
    acc.total /= n;
    acc.consistency /= n;
    acc
}

/// Owns the model and optimizer state across epochs.
pub struct Trainer<S: Scalar> {
    pub cfg: TrainConfig,
    pub model: Summarizer<S>,
    pub state: TrainState,
    pub log: Vec<EpochLog>,
    /// Parameters of the epoch with the lowest validation loss so far.
    pub best: Option<Summarizer<S>>,
    train: Vec<EncodedExample>,
    val: Vec<EncodedExample>,
    rng: ChaCha8Rng,
    out_dir: Option<PathBuf>,
}

impl<S: Scalar> Trainer<S> {
    /// Builds the vocabulary from the training set and initializes the model.
    pub fn new(cfg: TrainConfig, mut train: Vec<TimelineExample>, mut val: Vec<TimelineExample>) -> Result<Self> {
        cfg.validate()?;
        if train.is_empty() {
            return Err(UtsError::Data("training corpus is empty".into()));
        }
        ensure_oracles(&mut train, cfg.max_selected);
        ensure_oracles(&mut val, cfg.max_selected);
        let vocab = crate::corpus::build_vocab(&train, cfg.vocab_cap)?;
        Self::with_vocab(cfg, vocab, &train, &val)
    }

    pub fn with_vocab(cfg: TrainConfig, vocab: Vocab, train: &[TimelineExample], val: &[TimelineExample]) -> Result<Self> {
        let mut model = Summarizer::new(cfg.model_config(vocab.len()), vocab, cfg.seed)?;
        model.params.fill_accumulators(S::lit(cfg.adagrad_init))?;
        let train = encode_all(&model, train);
        let val = encode_all(&model, val);
        if let Some(ex) = train.iter().chain(&val).find(|e| e.oracle.is_none()) {
            return Err(UtsError::Data(format!("{}: missing oracle labels", ex.id)));
        }
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            model,
            state: TrainState::default(),
            log: Vec::new(),
            best: None,
            train,
            val,
            out_dir: None,
        })
    }

    /// Directory for checkpoints and the loss log; created if missing.
    pub fn set_out_dir(&mut self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| UtsError::io(format!("creating {}", dir.display()), e))?;
        self.out_dir = Some(dir.to_path_buf());
        Ok(())
    }

    pub fn train_examples(&self) -> &[EncodedExample] {
        &self.train
    }

    pub fn val_examples(&self) -> &[EncodedExample] {
        &self.val
    }

    /// Runs one pass over the shuffled training set, validates, and updates
    /// the early-stopping state and checkpoints.
    pub fn epoch(&mut self) -> Result<EpochLog> {
        let epoch = self.state.epoch + 1;
        let opts = self.cfg.loss_options();
        let lr = S::lit(self.cfg.lr);
        let clip = S::lit(self.cfg.clip_norm);
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut self.rng);

        let mut acc = LossBreakdown::default();
        for (batch_id, batch) in order.chunks(self.cfg.batch_size).enumerate() {
            let diverged = || UtsError::Diverged { epoch, batch: batch_id };
            let mut grads = Gradients::empty();
            for &i in batch {
                let (b, g) = self.model.loss_and_grads(&self.train[i], &opts).map_err(|e| {
                    if e.is_numerical() {
                        diverged()
                    } else {
                        e
                    }
                })?;
                if !b.total.is_finite() {
                    return Err(diverged());
                }
                add_breakdown(&mut acc, &b);
                grads.accumulate(&g);
            }
            grads.scale(S::lit(1.0 / batch.len() as f64));
            if !grads.global_norm().is_finite() {
                return Err(diverged());
            }
            adagrad_step(&mut self.model.params, &grads, lr, clip)?;
        }
        let tokens = acc.abs_tokens;
        let mean = scale_breakdown(acc, self.train.len());
        let val_total = if self.val.is_empty() {
            None
        } else {
            Some(mean_loss(&self.model, &self.val, &opts)?.total)
        };
        let entry = EpochLog {
            epoch,
            abs: mean.abs,
            ext: mean.ext,
            inc: mean.inc,
            total: mean.total,
            consistency: mean.consistency,
            abs_per_token: mean.abs * self.train.len() as f64 / tokens.max(1) as f64,
            val_total,
        };
        let val_loss = val_total.unwrap_or(mean.total);
        let qualifies = self.state.qualifies(val_loss);
        if self.state.observe(val_loss) {
            self.best = Some(self.model.clone());
        }
        if let (Some(dir), true) = (&self.out_dir, qualifies) {
            let path = dir.join(format!("epoch-{epoch:03}.ckpt"));
            let mut meta = self.cfg.to_meta();
            meta.push(("epoch".into(), epoch.to_string()));
            meta.push(("val_loss".into(), val_loss.to_string()));
            self.model.save(&path, &meta)?;
            if let Some(old) = self.state.insert_checkpoint(val_loss, path) {
                if let Err(e) = fs::remove_file(&old) {
                    warn!("could not remove {}: {e}", old.display());
                }
            }
        }
        self.log.push(entry);
        if let Some(dir) = &self.out_dir {
            self.write_log(&dir.join("losses.csv"))?;
        }
        info!(
            "epoch {epoch}: abs {:.4} ext {:.4} inc {:.4} total {:.4} val {}",
            entry.abs,
            entry.ext,
            entry.inc,
            entry.total,
            val_total.map_or("-".into(), |v| format!("{v:.4}"))
        );
        Ok(entry)
    }

    /// Trains until `max_epochs` or early stopping.
    pub fn run(&mut self) -> Result<&TrainState> {
        while self.state.epoch < self.cfg.max_epochs {
            self.epoch()?;
            if self.state.should_stop(self.cfg.patience) {
                info!("early stop after epoch {}", self.state.epoch);
                break;
            }
        }
        Ok(&self.state)
    }

    pub fn write_log(&self, path: &Path) -> Result<()> {
        let mut s = String::from(EpochLog::CSV_HEADER);
        s.push('\n');
        for e in &self.log {
            s.push_str(&e.to_csv_row());
            s.push('\n');
        }
        fs::write(path, s).map_err(|e| UtsError::io(format!("writing {}", path.display()), e))
    }
}
