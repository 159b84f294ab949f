use crate::corpus::{TimelineExample, Vocab, EOS, UNK};

/// An example mapped to ids. Source words missing from the vocabulary get
/// extended ids `vocab.len() + k` so the copy mechanism can emit them.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedExample {
    pub id: String,
    /// Vocabulary ids per event; unknown words map to UNK.
    pub events: Vec<Vec<usize>>,
    /// Event of each flattened source word.
    pub word_event: Vec<usize>,
    /// Extended id of each flattened source word.
    pub source_ext: Vec<usize>,
    pub oov: Vec<String>,
    pub sentences: Vec<Vec<usize>>,
    pub sentence_event: Vec<usize>,
    /// Reference summary in extended ids, EOS-terminated.
    pub target: Vec<usize>,
    pub oracle: Option<Vec<usize>>,
    pub vocab_size: usize,
}

impl EncodedExample {
    pub fn new(ex: &TimelineExample, vocab: &Vocab) -> Self {
        let v = vocab.len();
        let mut oov: Vec<String> = Vec::new();
        let mut events = Vec::new();
        let mut word_event = Vec::new();
        let mut source_ext = Vec::new();
        for (i, e) in ex.events.iter().enumerate() {
            let mut ids = Vec::with_capacity(e.tokens.len());
            for tok in &e.tokens {
                let id = vocab.id(tok);
                ids.push(id);
                word_event.push(i);
                source_ext.push(match vocab.get(tok) {
                    Some(id) => id,
                    None => v + position_or_push(&mut oov, tok),
                });
            }
            events.push(ids);
        }
        let sentences = ex
            .doc_sentences
            .iter()
            .map(|s| s.tokens.iter().map(|t| vocab.id(t)).collect())
            .collect();
        let sentence_event = ex.doc_sentences.iter().map(|s| s.event).collect();
        let mut target: Vec<usize> = ex
            .summary_tokens
            .iter()
            .map(|tok| match vocab.get(tok) {
                Some(id) => id,
                None => oov.iter().position(|o| o == tok).map_or(UNK, |k| v + k),
            })
            .collect();
        target.push(EOS);
        Self {
            id: ex.id.clone(),
            events,
            word_event,
            source_ext,
            oov,
            sentences,
            sentence_event,
            target,
            oracle: ex.oracle_labels.clone(),
            vocab_size: v,
        }
    }

    pub fn n_events(&self) -> usize {
        self.events.len()
    }

    pub fn n_words(&self) -> usize {
        self.word_event.len()
    }

    pub fn ext_vocab_size(&self) -> usize {
        self.vocab_size + self.oov.len()
    }

    /// The vocabulary id fed back into the decoder for an extended id.
    pub fn input_id(&self, ext: usize) -> usize {
        if ext < self.vocab_size {
            ext
        } else {
            UNK
        }
    }

    pub fn token_text<'a>(&'a self, vocab: &'a Vocab, ext: usize) -> &'a str {
        if ext < self.vocab_size {
            vocab.token(ext).unwrap_or("<unk>")
        } else {
            &self.oov[ext - self.vocab_size]
        }
    }

    pub fn sentence_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_events()];
        for &e in &self.sentence_event {
            counts[e] += 1;
        }
        counts
    }
}

fn position_or_push(list: &mut Vec<String>, tok: &str) -> usize {
    match list.iter().position(|o| o == tok) {
        Some(k) => k,
        None => {
            list.push(tok.to_string());
            list.len() - 1
        }
    }
}
