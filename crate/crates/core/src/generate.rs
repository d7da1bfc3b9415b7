//! Greedy and beam decoding, and surface realization.

use crate::corpus::{ContextSet, Example, Fact, KnowledgeBase, Vocab, BOS, EOS, SPECIAL_TOKENS, SUBJ_PH};
use crate::decoder::{dominant_mode, CopySource, MODE_CODES};
use crate::error::Result;
use crate::model::Model;
use crate::numdiff::Graph;

pub const DEFAULT_MAX_LEN: usize = 20;

/// A decoded question.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    /// Extended ids, EOS excluded.
    pub ids: Vec<usize>,
    /// Chosen mode per emitted id (see [`MODE_CODES`]).
    pub modes: Vec<usize>,
    /// Sum of log-probabilities, EOS included when emitted.
    pub log_prob: f64,
    pub source: CopySource,
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in row.iter().enumerate() {
        if p > row[best] {
            best = i;
        }
    }
    best
}

/// Argmax decoding; ties go to the lowest extended id.
pub fn greedy_decode(model: &Model, fact: Fact, contexts: &ContextSet, max_len: usize) -> Result<Decoded> {
    let mut g = Graph::new();
    let enc = model.encode(&mut g, fact, contexts)?;
    let mut inputs = vec![BOS];
    let (mut ids, mut modes, mut log_prob) = (Vec::new(), Vec::new(), 0.0);
    while ids.len() < max_len {
        let out = model.next_step(&mut g, &enc, &inputs)?;
        let row = g.value(out.probs).row(0);
        let next = argmax(row);
        log_prob += row[next].ln();
        if next == EOS {
            break;
        }
        modes.push(dominant_mode(&g, &out, &enc.source, 0, next));
        ids.push(next);
        inputs.push(enc.source.input_row(next));
    }
    Ok(Decoded {
        ids,
        modes,
        log_prob,
        source: enc.source,
    })
}

#[derive(Clone)]
struct Hypothesis {
    ids: Vec<usize>,
    modes: Vec<usize>,
    log_prob: f64,
}

impl Hypothesis {
    /// Length-normalized score; `finished` counts the EOS step.
    fn score(&self, finished: bool) -> f64 {
        let len = self.ids.len() + usize::from(finished);
        self.log_prob / len.max(1) as f64
    }
}

/// Beam search ranked by length-normalized log-probability. Candidates
/// tie-break by parent rank, then lowest extended id; `beam_width = 1`
/// reproduces [`greedy_decode`].
pub fn beam_decode(
    model: &Model,
    fact: Fact,
    contexts: &ContextSet,
    max_len: usize,
    beam_width: usize,
) -> Result<Decoded> {
    let width = beam_width.max(1);
    let mut g = Graph::new();
    let enc = model.encode(&mut g, fact, contexts)?;
    let mut live = vec![Hypothesis {
        ids: Vec::new(),
        modes: Vec::new(),
        log_prob: 0.0,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..max_len {
        // (score, parent, ext, mode)
        let mut cands: Vec<(f64, usize, usize, usize)> = Vec::new();
        for (h_idx, h) in live.iter().enumerate() {
            let mut inputs = vec![BOS];
            inputs.extend(h.ids.iter().map(|&e| enc.source.input_row(e)));
            let out = model.next_step(&mut g, &enc, &inputs)?;
            let row = g.value(out.probs).row(0).to_vec();
            let mut order: Vec<usize> = (0..row.len()).filter(|&e| row[e] > 0.0).collect();
            order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            for &e in order.iter().take(width) {
                let mode = dominant_mode(&g, &out, &enc.source, 0, e);
                cands.push((h.log_prob + row[e].ln(), h_idx, e, mode));
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut next = Vec::with_capacity(width);
        for (lp, parent, e, mode) in cands.into_iter().take(width) {
            let p = &live[parent];
            if e == EOS {
                finished.push(Hypothesis {
                    ids: p.ids.clone(),
                    modes: p.modes.clone(),
                    log_prob: lp,
                });
            } else {
                let mut h = p.clone();
                h.ids.push(e);
                h.modes.push(mode);
                h.log_prob = lp;
                next.push(h);
            }
        }
        live = next;
        if live.is_empty() || finished.len() >= width {
            break;
        }
    }
    let mut pool: Vec<(f64, Hypothesis)> = finished.into_iter().map(|h| (h.score(true), h)).collect();
    if pool.is_empty() {
        pool = live.into_iter().map(|h| (h.score(false), h)).collect();
    }
    // stable: earlier hypotheses win ties
    let mut best = 0;
    for i in 1..pool.len() {
        if pool[i].0 > pool[best].0 {
            best = i;
        }
    }
    let h = pool.swap_remove(best).1;
    Ok(Decoded {
        ids: h.ids,
        modes: h.modes,
        log_prob: h.log_prob,
        source: enc.source,
    })
}

/// Token strings of decoded extended ids.
pub fn decoded_tokens(decoded: &Decoded, vocab: &Vocab) -> Vec<String> {
    decoded
        .ids
        .iter()
        .map(|&e| vocab.token(decoded.source.word_id(e)).to_string())
        .collect()
}

/// Joins tokens with spaces, expanding the subject placeholder into the
/// full subject name.
pub fn surface_realize(tokens: &[String], subject_name: &[String]) -> String {
    let ph = SPECIAL_TOKENS[SUBJ_PH];
    let mut out: Vec<&str> = Vec::with_capacity(tokens.len() + subject_name.len());
    for t in tokens {
        if t == ph {
            out.extend(subject_name.iter().map(String::as_str));
        } else {
            out.push(t);
        }
    }
    out.join(" ")
}

pub fn mode_string(modes: &[usize]) -> String {
    modes.iter().map(|&m| MODE_CODES[m]).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecodeOptions {
    pub max_len: usize,
    pub beam_width: usize,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions {
            max_len: DEFAULT_MAX_LEN,
            beam_width: 1,
        }
    }
}

/// One line of a generation file.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedQuestion {
    pub fact_ids: [String; 3],
    pub tokens: Vec<String>,
    pub text: String,
    pub modes: String,
}

impl GeneratedQuestion {
    pub fn to_line(&self) -> String {
        format!("{}\t{}\t{}", self.fact_ids.join(" "), self.text, self.modes)
    }
}

/// Decodes one example and realizes its surface form.
pub fn generate_one(
    model: &Model,
    kb: &KnowledgeBase,
    vocab: &Vocab,
    ex: &Example,
    opts: &DecodeOptions,
) -> Result<GeneratedQuestion> {
    let decoded = if opts.beam_width <= 1 {
        greedy_decode(model, ex.fact, &ex.contexts, opts.max_len)?
    } else {
        beam_decode(model, ex.fact, &ex.contexts, opts.max_len, opts.beam_width)?
    };
    let tokens = decoded_tokens(&decoded, vocab);
    let text = surface_realize(&tokens, &ex.subject_name);
    let name = |i: usize| kb.vocab.name(i).to_string();
    Ok(GeneratedQuestion {
        fact_ids: [name(ex.fact.subject), name(ex.fact.predicate), name(ex.fact.object)],
        tokens: text.split(' ').filter(|t| !t.is_empty()).map(String::from).collect(),
        text,
        modes: mode_string(&decoded.modes),
    })
}

pub fn generate_all(
    model: &Model,
    kb: &KnowledgeBase,
    vocab: &Vocab,
    examples: &[Example],
    opts: &DecodeOptions,
) -> Result<Vec<GeneratedQuestion>> {
    examples.iter().map(|ex| generate_one(model, kb, vocab, ex, opts)).collect()
}
