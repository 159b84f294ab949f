//! The summarizer: encoders, memory, decoder, extractor and the unifier.

pub mod abs_decoder;
mod cells;
mod encode;
pub mod event_encoder;
pub mod ext_branch;
pub mod graph_encoder;
pub mod memory;
pub mod unifier;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use uts_numerics::{ParamStore, Scalar, Tape, Tensor, Var};

use crate::error::{Result, UtsError};

pub use encode::EncodedExample;

/// Architecture hyperparameters; everything that fixes parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Width of the time position vectors, which are also the memory keys.
    pub key_dim: usize,
    pub global_dim: usize,
    /// Width of the local memory values; these are the event vectors themselves.
    pub local_dim: usize,
    pub max_events: usize,
    pub polish_iters: usize,
    pub use_graph: bool,
    pub re_residual: bool,
    pub init_range: f64,
}

impl ModelConfig {
    /// Desk-sized defaults for a given vocabulary.
    pub fn small(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            embed_dim: 16,
            hidden_dim: 32,
            key_dim: 16,
            global_dim: 64,
            local_dim: 32,
            max_events: 8,
            polish_iters: 2,
            use_graph: true,
            re_residual: false,
            init_range: 0.02,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("key_dim", self.key_dim),
            ("global_dim", self.global_dim),
            ("local_dim", self.local_dim),
            ("max_events", self.max_events),
            ("polish_iters", self.polish_iters),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(UtsError::Config(format!("{name} must be positive")));
            }
        }
        if self.vocab_size <= crate::corpus::RESERVED.len() {
            return Err(UtsError::Config("vocabulary has no ordinary words".into()));
        }
        if self.local_dim != self.hidden_dim {
            return Err(UtsError::Config(format!(
                "local_dim ({}) must equal hidden_dim ({}): local memory values are the event vectors",
                self.local_dim, self.hidden_dim
            )));
        }
        if !(self.init_range > 0.0) {
            return Err(UtsError::Config("init_range must be positive".into()));
        }
        Ok(())
    }

    /// Key/value pairs recorded in checkpoints.
    pub fn to_meta(&self) -> Vec<(String, String)> {
        vec![
            ("vocab_size".into(), self.vocab_size.to_string()),
            ("embed_dim".into(), self.embed_dim.to_string()),
            ("hidden_dim".into(), self.hidden_dim.to_string()),
            ("key_dim".into(), self.key_dim.to_string()),
            ("global_dim".into(), self.global_dim.to_string()),
            ("local_dim".into(), self.local_dim.to_string()),
            ("max_events".into(), self.max_events.to_string()),
            ("polish_iters".into(), self.polish_iters.to_string()),
            ("use_graph".into(), self.use_graph.to_string()),
            ("re_residual".into(), self.re_residual.to_string()),
            ("init_range".into(), self.init_range.to_string()),
        ]
    }

    pub fn from_meta(meta: &[(String, String)]) -> Result<Self> {
        fn get<T: std::str::FromStr>(meta: &[(String, String)], key: &str) -> Result<T> {
            let v = meta
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v)
                .ok_or_else(|| UtsError::CheckpointMismatch(format!("header lacks {key}")))?;
            v.parse()
                .map_err(|_| UtsError::CheckpointMismatch(format!("bad value for {key}: {v}")))
        }
        let cfg = Self {
            vocab_size: get(meta, "vocab_size")?,
            embed_dim: get(meta, "embed_dim")?,
            hidden_dim: get(meta, "hidden_dim")?,
            key_dim: get(meta, "key_dim")?,
            global_dim: get(meta, "global_dim")?,
            local_dim: get(meta, "local_dim")?,
            max_events: get(meta, "max_events")?,
            polish_iters: get(meta, "polish_iters")?,
            use_graph: get(meta, "use_graph")?,
            re_residual: get(meta, "re_residual")?,
            init_range: get(meta, "init_range")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    Uniform,
    /// Uniform, with the forget-gate block of a fused LSTM bias set to 1.
    LstmBias,
    Zero,
}

/// Every parameter: name, shape and initialization.
fn param_specs(c: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (v, e, h, k, g) = (c.vocab_size, c.embed_dim, c.hidden_dim, c.key_dim, c.global_dim);
    let mut specs: Vec<(String, Vec<usize>, Init)> = Vec::new();
    let mut add = |name: &str, shape: &[usize], init: Init| specs.push((name.to_string(), shape.to_vec(), init));
    let lstm = |add: &mut dyn FnMut(&str, &[usize], Init), prefix: &str, input: usize| {
        add(&format!("{prefix}.wx"), &[input, 4 * h], Init::Uniform);
        add(&format!("{prefix}.wh"), &[h, 4 * h], Init::Uniform);
        add(&format!("{prefix}.b"), &[1, 4 * h], Init::LstmBias);
    };
    let sru = |add: &mut dyn FnMut(&str, &[usize], Init), prefix: &str| {
        for gate in ["r", "z", "s"] {
            add(&format!("{prefix}.w{gate}"), &[h, h], Init::Uniform);
            add(&format!("{prefix}.u{gate}"), &[h, h], Init::Uniform);
            add(&format!("{prefix}.b{gate}"), &[1, h], Init::Uniform);
        }
        add(&format!("{prefix}.vz"), &[h, h], Init::Uniform);
    };

    add("embed.E", &[v, e], Init::Uniform);
    add("time_pos.P", &[c.max_events, k], Init::Uniform);

    lstm(&mut add, "encoder.fwd", e + k);
    lstm(&mut add, "encoder.bwd", e + k);
    sru(&mut add, "encoder.sru");

    if c.use_graph {
        add("graph.mlp.w1", &[2 * h, h], Init::Uniform);
        add("graph.mlp.b1", &[1, h], Init::Uniform);
        add("graph.mlp.w2", &[h, h], Init::Uniform);
        add("graph.mlp.b2", &[1, h], Init::Uniform);
        add("graph.wq", &[h, h], Init::Uniform);
        add("graph.wk", &[h, h], Init::Uniform);
        add("graph.wv", &[h, h], Init::Uniform);
    }

    add("memory.w_up", &[h, g], Init::Uniform);
    add("memory.We", &[h, k], Init::Uniform);
    add("memory.w_down", &[g, h], Init::Uniform);
    add("memory.wo", &[3 * h, h], Init::Uniform);
    add("memory.bo", &[1, h], Init::Uniform);
    add("memory.wn", &[3 * h, h], Init::Uniform);
    add("memory.bn", &[1, h], Init::Uniform);

    lstm(&mut add, "decoder.init", c.max_events * h);
    add("decoder.init.hc", &[1, h], Init::Uniform);
    lstm(&mut add, "decoder.lstm", h + e);
    add("attn_word.Wh", &[h, h], Init::Uniform);
    add("attn_word.Wb", &[h, h], Init::Uniform);
    add("attn_word.wa", &[h, 1], Init::Uniform);
    add("attn_event.Wd", &[h, h], Init::Uniform);
    add("attn_event.Wc", &[h, h], Init::Uniform);
    add("attn_event.We", &[h, 1], Init::Uniform);
    add("out.Wv", &[4 * h, v], Init::Uniform);
    add("out.bv", &[1, v], Init::Zero);
    add("copy.wc", &[h, 1], Init::Uniform);
    add("copy.wh", &[h, 1], Init::Uniform);
    add("copy.wx", &[e, 1], Init::Uniform);
    add("copy.b", &[1, 1], Init::Zero);

    lstm(&mut add, "sent.fwd", e);
    lstm(&mut add, "sent.bwd", e);
    add("sent.doc.w", &[h, h], Init::Uniform);
    add("sent.doc.b", &[1, h], Init::Uniform);
    sru(&mut add, "sent.sru");
    for gate in ["r", "z", "n"] {
        add(&format!("sent.gru.w{gate}"), &[h, h], Init::Uniform);
        add(&format!("sent.gru.u{gate}"), &[h, h], Init::Uniform);
        add(&format!("sent.gru.b{gate}"), &[1, h], Init::Uniform);
    }

    lstm(&mut add, "extractor.lstm", 2 * h);
    add("extractor.start", &[1, h], Init::Uniform);
    add("extractor.stop", &[1, h], Init::Uniform);
    add("extractor.att.U", &[h, h], Init::Uniform);
    add("extractor.att.W", &[h, h], Init::Uniform);
    add("extractor.att.v", &[h, 1], Init::Uniform);
    add("extractor.mlp.ws", &[h, h], Init::Uniform);
    add("extractor.mlp.wh", &[h, h], Init::Uniform);
    add("extractor.mlp.b", &[1, h], Init::Uniform);
    add("extractor.mlp.w2", &[h, 1], Init::Uniform);
    specs
}

/// Freshly initialized parameters: uniform in ±init_range, LSTM forget
/// biases at 1, output biases at 0.
pub fn init_params<S: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<ParamStore<S>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (name, shape, init) in param_specs(cfg) {
        match init {
            Init::Zero => store.insert(name, Tensor::zeros(&shape)),
            Init::Uniform => store.insert_uniform(name, &shape, cfg.init_range, &mut rng),
            Init::LstmBias => {
                store.insert_uniform(name.clone(), &shape, cfg.init_range, &mut rng);
                let h = shape[1] / 4;
                let b = store.get_mut(&name).expect("just inserted");
                for v in &mut b.data_mut()[h..2 * h] {
                    *v = S::one();
                }
            }
        }
    }
    Ok(store)
}

/// Checks that a parameter store has exactly the shapes `cfg` implies.
pub fn check_params<S: Scalar>(cfg: &ModelConfig, params: &ParamStore<S>) -> Result<()> {
    let specs = param_specs(cfg);
    if specs.len() != params.len() {
        return Err(UtsError::CheckpointMismatch(format!(
            "expected {} parameters, found {}",
            specs.len(),
            params.len()
        )));
    }
    for (name, shape, _) in specs {
        match params.get(&name) {
            Some(t) if t.shape() == shape.as_slice() => {}
            Some(t) => {
                return Err(UtsError::CheckpointMismatch(format!(
                    "{name}: expected shape {shape:?}, found {:?}",
                    t.shape()
                )))
            }
            None => return Err(UtsError::CheckpointMismatch(format!("missing parameter {name}"))),
        }
    }
    Ok(())
}

/// A forward pass in progress: the tape, the parameters and the config.
pub struct Net<'a, S: Scalar> {
    pub t: &'a Tape<S>,
    pub p: &'a ParamStore<S>,
    pub cfg: &'a ModelConfig,
}

impl<'a, S: Scalar> Net<'a, S> {
    pub fn new(t: &'a Tape<S>, p: &'a ParamStore<S>, cfg: &'a ModelConfig) -> Self {
        Self { t, p, cfg }
    }

    pub fn w(&self, name: &str) -> Var {
        self.t.param(self.p, name)
    }

    pub fn zeros_row(&self, n: usize) -> Var {
        self.t.constant(Tensor::zeros(&[1, n]))
    }

    /// Row vector of a node's values as f64.
    pub fn values(&self, v: Var) -> Vec<f64> {
        self.t.with_value(v, |x| x.data().iter().map(|s| s.as_f64()).collect())
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.t.item(v).as_f64()
    }
}
