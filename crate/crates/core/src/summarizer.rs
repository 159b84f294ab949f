//! A trained model bundled with its vocabulary, plus checkpoint I/O.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use uts_numerics::{checkpoint, Gradients, ParamStore, Scalar, Tape};

use crate::corpus::{TimelineExample, Vocab};
use crate::error::{Result, UtsError};
use crate::model::abs_decoder::{beam_decode, encode_abs, greedy_decode, Decoded};
use crate::model::ext_branch::{encode_sentences, extract, ExtractDecision};
use crate::model::unifier::{joint_forward, LossBreakdown, LossOptions};
use crate::model::{check_params, init_params, EncodedExample, ModelConfig, Net};

#[derive(Debug, Clone, PartialEq)]
pub struct Summarizer<S: Scalar> {
    pub cfg: ModelConfig,
    pub params: ParamStore<S>,
    pub vocab: Vocab,
}

impl<S: Scalar> Summarizer<S> {
    pub fn new(cfg: ModelConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        if cfg.vocab_size != vocab.len() {
            return Err(UtsError::Config(format!(
                "vocab_size {} does not match a vocabulary of {}",
                cfg.vocab_size,
                vocab.len()
            )));
        }
        let params = init_params(&cfg, seed)?;
        Ok(Self { cfg, params, vocab })
    }

    pub fn encode(&self, ex: &TimelineExample) -> EncodedExample {
        EncodedExample::new(ex, &self.vocab)
    }

    /// Joint loss and parameter gradients for one example.
    pub fn loss_and_grads(&self, ex: &EncodedExample, opts: &LossOptions) -> Result<(LossBreakdown, Gradients<S>)> {
        let t = Tape::new();
        let net = Net::new(&t, &self.params, &self.cfg);
        let f = joint_forward(&net, ex, opts)?;
        let grads = t.backward(f.total)?;
        Ok((f.breakdown, grads))
    }

    /// Joint loss without gradients.
    pub fn loss(&self, ex: &EncodedExample, opts: &LossOptions) -> Result<LossBreakdown> {
        let t = Tape::inference();
        let net = Net::new(&t, &self.params, &self.cfg);
        let f = joint_forward(&net, ex, opts)?;
        t.check()?;
        Ok(f.breakdown)
    }

    pub fn greedy(&self, ex: &EncodedExample, max_len: usize) -> Result<Decoded> {
        let t = Tape::inference();
        let net = Net::new(&t, &self.params, &self.cfg);
        let ae = encode_abs(&net, ex)?;
        Ok(greedy_decode(&net, ex, &ae, max_len))
    }

    pub fn beam(&self, ex: &EncodedExample, beam: usize, max_len: usize) -> Result<Decoded> {
        if beam == 0 {
            return Err(UtsError::Config("beam size must be at least 1".into()));
        }
        let t = Tape::inference();
        let net = Net::new(&t, &self.params, &self.cfg);
        let ae = encode_abs(&net, ex)?;
        Ok(beam_decode(&net, ex, &ae, beam, max_len))
    }

    pub fn extract(&self, ex: &EncodedExample, max_selected: usize) -> Result<ExtractDecision> {
        let t = Tape::inference();
        let net = Net::new(&t, &self.params, &self.cfg);
        let se = encode_sentences(&net, ex)?;
        Ok(extract(&net, &se, ex.sentences.len(), max_selected))
    }

    pub fn tokens_text(&self, ex: &EncodedExample, tokens: &[usize]) -> Vec<String> {
        tokens.iter().map(|&id| ex.token_text(&self.vocab, id).to_string()).collect()
    }

    fn meta(&self, extra: &[(String, String)]) -> Vec<(String, String)> {
        let mut meta = self.cfg.to_meta();
        meta.push(("vocab".into(), self.vocab.to_json()));
        meta.extend(extra.iter().cloned());
        meta
    }

    pub fn to_bytes(&self, extra: &[(String, String)]) -> Result<Vec<u8>> {
        Ok(checkpoint::encode(&self.meta(extra), &self.params)?)
    }

    pub fn save(&self, path: &Path, extra: &[(String, String)]) -> Result<()> {
        let ctx = || format!("writing {}", path.display());
        let file = File::create(path).map_err(|e| UtsError::io(ctx(), e))?;
        let mut w = BufWriter::new(file);
        checkpoint::write(&mut w, &self.meta(extra), &self.params)?;
        w.flush().map_err(|e| UtsError::io(ctx(), e))
    }

    /// Reads a checkpoint and checks every parameter shape against its header.
    pub fn from_reader(r: &mut impl std::io::BufRead) -> Result<(Self, Vec<(String, String)>)> {
        let (meta, params) = checkpoint::read::<S>(r)?;
        let cfg = ModelConfig::from_meta(&meta)?;
        let vocab_json = meta
            .iter()
            .find(|(k, _)| k == "vocab")
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| UtsError::CheckpointMismatch("header lacks the vocabulary".into()))?;
        let vocab = Vocab::from_json(vocab_json)?;
        if vocab.len() != cfg.vocab_size {
            return Err(UtsError::CheckpointMismatch("vocabulary size disagrees with vocab_size".into()));
        }
        check_params(&cfg, &params)?;
        Ok((Self { cfg, params, vocab }, meta))
    }

    pub fn load(path: &Path) -> Result<(Self, Vec<(String, String)>)> {
        let file = File::open(path).map_err(|e| UtsError::io(format!("opening {}", path.display()), e))?;
        Self::from_reader(&mut BufReader::new(file))
    }
}

/// Scalar type recorded in a checkpoint ("f32" or "f64").
pub fn checkpoint_dtype(path: &Path) -> Result<String> {
    let file = File::open(path).map_err(|e| UtsError::io(format!("opening {}", path.display()), e))?;
    Ok(checkpoint::peek_dtype(&mut BufReader::new(file))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> Summarizer<f64> {
        let vocab = Vocab::from_words(["a", "b", "c"].map(String::from));
        let mut cfg = ModelConfig::small(vocab.len());
        cfg.hidden_dim = 4;
        cfg.local_dim = 4;
        Summarizer::new(cfg, vocab, 5).unwrap()
    }

    #[test]
    fn bytes_round_trip_identically() {
        let m = model();
        let extra = vec![("epoch".to_string(), "3".to_string())];
        let bytes = m.to_bytes(&extra).unwrap();
        let (back, meta) = Summarizer::<f64>::from_reader(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, m);
        assert!(meta.contains(&extra[0]));
        assert_eq!(back.to_bytes(&extra).unwrap(), bytes);
    }

    #[test]
    fn header_mismatch_is_detected() {
        let m = model();
        let mut meta = m.meta(&[]);
        for (k, v) in &mut meta {
            if k == "key_dim" {
                *v = "5".into();
            }
        }
        let bytes = checkpoint::encode(&meta, &m.params).unwrap();
        let err = Summarizer::<f64>::from_reader(&mut bytes.as_slice()).unwrap_err();
        assert!(matches!(err, UtsError::CheckpointMismatch(_)), "{err}");
    }

    #[test]
    fn vocab_size_must_match() {
        let vocab = Vocab::from_words(["a".to_string()]);
        assert!(Summarizer::<f64>::new(ModelConfig::small(9), vocab, 1).is_err());
    }
}
