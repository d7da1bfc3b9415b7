//! The full question generator: parameter registry plus forward passes.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{ContextSet, Example, Fact, Vocab, UNK};
use crate::decoder::{decode_states, step_distributions, CopyModes, CopySource, DecoderParams, StepOutput};
use crate::encoder::{augment_fact, EncoderParams, FusionParams};
use crate::error::{Error, Result};
use crate::kbembed::{self, KbEmbedding};
use crate::nn::{uniform, EMBED_INIT_RANGE};
use crate::numdiff::{Graph, ParamId, ParamStore, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub d: usize,
    pub heads: usize,
    pub layers: usize,
    pub dropout: f64,
    pub copy: CopyModes,
    /// Gated fusion of KB embeddings with context summaries. When off,
    /// the decoder attends over the raw KB rows.
    pub fusion: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 32,
            heads: 2,
            layers: 2,
            dropout: 0.1,
            copy: CopyModes::default(),
            fusion: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub word_emb: ParamId,
    pub kb_emb: ParamId,
    pub encoder: EncoderParams,
    pub fusion: FusionParams,
    pub decoder: DecoderParams,
}

/// Encoder-side nodes for one fact.
#[derive(Clone, Debug)]
pub struct EncodedFact {
    pub h_f: Var,
    pub context_rows: Var,
    pub source: CopySource,
}

/// Teacher-forced outputs for one example.
#[derive(Clone, Debug)]
pub struct TeacherForced {
    pub out: StepOutput,
    /// Gold targets `y_1..y_n` (EOS included) as extended ids.
    pub gold: Vec<usize>,
    /// Answer-type words as extended ids.
    pub answers: Vec<usize>,
    pub source: CopySource,
}

impl Model {
    /// Registers all parameters. `gen_size` is `|V|`, `kb_size` the KB
    /// vocabulary size.
    pub fn new(config: ModelConfig, gen_size: usize, kb_size: usize, seed: u64) -> Result<Self> {
        if config.d == 0 || config.layers == 0 {
            return Err(Error::config("d and layers must be positive"));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::config(format!("dropout must lie in [0, 1), got {}", config.dropout)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.d;
        let word_emb = store.add("word_emb", uniform(&mut rng, gen_size, d, EMBED_INIT_RANGE))?;
        let kb_emb = store.add("kb_emb", kbembed::init_random(kb_size, d, seed ^ 0x6b62).table)?;
        let encoder = EncoderParams::register(&mut store, &mut rng, word_emb, config.layers, config.heads, config.dropout)?;
        let fusion = FusionParams::register(&mut store, &mut rng, d)?;
        let decoder = DecoderParams::register(&mut store, &mut rng, word_emb, config.layers, config.heads, config.dropout)?;
        Ok(Model {
            config,
            store,
            word_emb,
            kb_emb,
            encoder,
            fusion,
            decoder,
        })
    }

    pub fn gen_size(&self) -> usize {
        self.store.get(self.word_emb).value.rows()
    }

    pub fn kb_size(&self) -> usize {
        self.store.get(self.kb_emb).value.rows()
    }

    /// Replaces the KB table (e.g. with TransE vectors).
    pub fn set_kb_embedding(&mut self, emb: &KbEmbedding) -> Result<()> {
        let cur = &self.store.get(self.kb_emb).value;
        if cur.shape() != emb.table.shape() {
            return Err(Error::contract(format!(
                "KB table shape {:?} does not match the model's {:?}",
                emb.table.shape(),
                cur.shape()
            )));
        }
        self.store.get_mut(self.kb_emb).value = emb.table.clone();
        Ok(())
    }

    pub fn freeze_kb(&mut self, frozen: bool) {
        self.store.set_frozen(self.kb_emb, frozen);
    }

    /// Overwrites word-embedding rows from a text file of
    /// `token v_1 … v_d` lines. Returns the number of rows set.
    pub fn load_word_vectors(&mut self, vocab: &Vocab, path: &Path) -> Result<usize> {
        let text = std::fs::read_to_string(path)?;
        let d = self.config.d;
        let gen = self.gen_size();
        let table = &mut self.store.get_mut(self.word_emb).value;
        let mut set = 0;
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(tok) = parts.next() else { continue };
            let vals = parts
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Ingest {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: e.to_string(),
                })?;
            if vals.len() != d {
                return Err(Error::Ingest {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: format!("expected {d} values, found {}", vals.len()),
                });
            }
            if let Some(id) = vocab.id(tok).filter(|&id| id < gen) {
                table.row_mut(id).copy_from_slice(&vals);
                set += 1;
            }
        }
        Ok(set)
    }

    /// Embedding rows for word ids (words outside `V` read UNK's row).
    pub fn embedding_rows(&self, ids: &[usize]) -> Vec<usize> {
        let gen = self.gen_size();
        ids.iter().map(|&w| if w < gen { w } else { UNK }).collect()
    }

    /// Builds `H_f`, the encoded context rows and the copy source.
    pub fn encode(&self, g: &mut Graph, fact: Fact, contexts: &ContextSet) -> Result<EncodedFact> {
        let source = CopySource::new(contexts, self.gen_size())?;
        let table = g.param(&self.store, self.kb_emb);
        let kb_rows = kbembed::lookup(g, table, fact)?;
        let rows = [
            self.embedding_rows(&contexts.subject),
            self.embedding_rows(&contexts.predicate),
            self.embedding_rows(&contexts.object),
        ];
        let aug = augment_fact(
            g,
            &self.store,
            &self.encoder,
            &self.fusion,
            [&rows[0], &rows[1], &rows[2]],
            kb_rows,
            self.config.fusion,
        )?;
        Ok(EncodedFact {
            h_f: aug.h_f,
            context_rows: aug.context_rows,
            source,
        })
    }

    /// Step distributions for the input prefix `inputs` (embedding rows,
    /// starting with BOS).
    pub fn steps(&self, g: &mut Graph, enc: &EncodedFact, inputs: &[usize]) -> Result<StepOutput> {
        let states = decode_states(g, &self.store, &self.decoder, inputs, enc.h_f)?;
        step_distributions(
            g,
            &self.store,
            &self.decoder,
            states,
            inputs,
            enc.context_rows,
            &enc.source,
            self.config.copy,
        )
    }

    /// Distribution for the step after `inputs` (only the last row).
    pub fn next_step(&self, g: &mut Graph, enc: &EncodedFact, inputs: &[usize]) -> Result<StepOutput> {
        let states = decode_states(g, &self.store, &self.decoder, inputs, enc.h_f)?;
        let last = g.gather_rows(states, &[inputs.len() - 1])?;
        step_distributions(
            g,
            &self.store,
            &self.decoder,
            last,
            &inputs[inputs.len() - 1..],
            enc.context_rows,
            &enc.source,
            self.config.copy,
        )
    }

    /// Teacher-forced pass over a gold question.
    pub fn teacher_forced(&self, g: &mut Graph, ex: &Example) -> Result<TeacherForced> {
        if ex.question.len() < 2 {
            return Err(Error::contract("question must hold BOS and at least one target"));
        }
        let enc = self.encode(g, ex.fact, &ex.contexts)?;
        let n = ex.question.len() - 1;
        let inputs = self.embedding_rows(&ex.question[..n]);
        let out = self.steps(g, &enc, &inputs)?;
        let gold = ex.question[1..].iter().map(|&w| enc.source.ext_id(w)).collect();
        let answers = ex.answer_words.iter().map(|&w| enc.source.ext_id(w)).collect();
        Ok(TeacherForced {
            out,
            gold,
            answers,
            source: enc.source,
        })
    }
}
