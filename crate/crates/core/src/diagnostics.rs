//! Whole-model gradient check on a small random instance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{ContextSet, Example, Fact, BOS, EOS, SUBJ_PH};
use crate::error::Result;
use crate::model::{Model, ModelConfig};
use crate::nn::uniform;
use crate::numdiff::{grad_check, grad_check_two_scale, GradCheckReport, Graph, ParamStore};
use crate::objective::{example_loss, LossOptions};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckSetup {
    pub model: ModelConfig,
    pub vocab_size: usize,
    pub kb_size: usize,
    pub context_len: usize,
    pub question_len: usize,
    pub lambda: f64,
    pub eps: f64,
    /// Coarse step for the two-scale check; `None` checks at `eps` only.
    pub coarse_eps: Option<f64>,
    /// Embedding tables (word, segment, KB) are redrawn uniformly in
    /// `±embed_scale` before checking.
    pub embed_scale: f64,
    pub seed: u64,
}

impl Default for GradCheckSetup {
    fn default() -> Self {
        GradCheckSetup {
            model: ModelConfig {
                d: 8,
                heads: 2,
                layers: 1,
                dropout: 0.0,
                ..Default::default()
            },
            vocab_size: 30,
            kb_size: 6,
            context_len: 3,
            question_len: 5,
            lambda: 0.2,
            eps: 1e-5,
            coarse_eps: Some(1e-3),
            embed_scale: 0.5,
            seed: 0,
        }
    }
}

/// A random example whose contexts contain a repeated token and one word
/// outside the generation vocabulary, so every copy path is exercised.
pub fn random_example(setup: &GradCheckSetup, rng: &mut ChaCha8Rng) -> Example {
    let v = setup.vocab_size;
    let mut word = || rng.gen_range(SUBJ_PH + 1..v);
    let n = setup.context_len.max(1);
    let subject: Vec<usize> = (0..n).map(|_| word()).collect();
    let predicate: Vec<usize> = (0..n).map(|_| word()).collect();
    let mut object: Vec<usize> = (0..n).map(|_| word()).collect();
    object[0] = subject[0];
    if n > 1 {
        object[n - 1] = v;
    }
    let mut question = vec![BOS, word(), SUBJ_PH];
    while question.len() < setup.question_len.max(3) {
        question.push(word());
    }
    question.push(object[0]);
    if n > 1 {
        question.push(v);
    }
    question.push(EOS);
    let mut answer_words: Vec<usize> = object.iter().copied().filter(|&w| w < v).collect();
    answer_words.sort_unstable();
    answer_words.dedup();
    let k = setup.kb_size;
    Example {
        fact: Fact {
            subject: 0,
            predicate: k - 1,
            object: 1.min(k - 1),
        },
        contexts: ContextSet {
            subject,
            predicate,
            object,
        },
        question,
        answer_words,
        subject_span: Some((1, 1)),
        subject_name: vec!["subject".into()],
        reference: Vec::new(),
    }
}

/// Central-difference check of the total loss against every parameter.
pub fn check_model_gradients(setup: &GradCheckSetup) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(setup.seed);
    let mut model = Model::new(setup.model, setup.vocab_size, setup.kb_size, setup.seed)?;
    let ex = random_example(setup, &mut rng);
    for id in [model.word_emb, model.encoder.segment_emb, model.kb_emb] {
        let t = &model.store.get(id).value;
        let fresh = uniform(&mut rng, t.rows(), t.cols(), setup.embed_scale);
        model.store.get_mut(id).value = fresh;
    }
    let opts = LossOptions {
        lambda: setup.lambda,
        soft_min: None,
    };
    let mut store = std::mem::take(&mut model.store);
    let loss = |g: &mut Graph, s: &ParamStore| {
        let view = Model {
            store: s.clone(),
            ..model.clone()
        };
        Ok(example_loss(&view, g, &ex, &opts)?.0)
    };
    let report = match setup.coarse_eps {
        Some(c) => grad_check_two_scale(&mut store, c, setup.eps, loss)?,
        None => grad_check(&mut store, setup.eps, loss)?,
    };
    model.store = store;
    Ok(report)
}
