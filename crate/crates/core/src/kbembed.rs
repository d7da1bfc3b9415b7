//! KB embedding matrix `E_f`: random init or TransE pretraining.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::Fact;
use crate::error::{Error, Result};
use crate::nn::{uniform, EMBED_INIT_RANGE};
use crate::numdiff::{Graph, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct KbEmbedding {
    pub table: Tensor,
    pub pretrained: bool,
}

pub fn init_random(k: usize, d: usize, seed: u64) -> KbEmbedding {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    KbEmbedding {
        table: uniform(&mut rng, k, d, EMBED_INIT_RANGE),
        pretrained: false,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransEConfig {
    pub margin: f64,
    pub lr: f64,
    pub epochs: usize,
    pub neg_per_pos: usize,
    pub seed: u64,
}

impl Default for TransEConfig {
    fn default() -> Self {
        TransEConfig {
            margin: 1.0,
            lr: 0.01,
            epochs: 50,
            neg_per_pos: 1,
            seed: 0,
        }
    }
}

/// Result of [`pretrain_transe`]: the table plus the hinge loss per epoch.
#[derive(Clone, Debug)]
pub struct TransERun {
    pub embedding: KbEmbedding,
    pub epoch_losses: Vec<f64>,
}

fn distance(t: &Tensor, s: usize, p: usize, o: usize) -> (f64, Vec<f64>) {
    let diff: Vec<f64> = (0..t.cols()).map(|j| t.get(s, j) + t.get(p, j) - t.get(o, j)).collect();
    let n = diff.iter().map(|x| x * x).sum::<f64>().sqrt();
    (n, diff)
}

/// Applies `sign · lr · ∂‖s+p−o‖/∂·` to the three rows.
fn step(t: &mut Tensor, s: usize, p: usize, o: usize, diff: &[f64], norm: f64, scale: f64) {
    if norm == 0.0 {
        return;
    }
    for (j, &x) in diff.iter().enumerate() {
        let g = scale * x / norm;
        t.row_mut(s)[j] -= g;
        t.row_mut(p)[j] -= g;
        t.row_mut(o)[j] += g;
    }
}

/// Trains TransE with a margin ranking loss on `k`-row tables.
///
/// Entities are the indices appearing as subject or object; a negative
/// replaces the head or the tail (probability 0.5 each) with a random
/// entity. Entity rows are L2-normalized after every epoch.
pub fn pretrain_transe(triples: &[Fact], k: usize, d: usize, cfg: &TransEConfig) -> Result<TransERun> {
    if cfg.margin <= 0.0 {
        return Err(Error::config(format!("TransE margin must be positive, got {}", cfg.margin)));
    }
    if triples.is_empty() {
        return Err(Error::contract("TransE needs at least one triple"));
    }
    if let Some(bad) = triples.iter().find(|f| f.subject.max(f.predicate).max(f.object) >= k) {
        return Err(Error::contract(format!("triple {bad:?} outside a {k}-row table")));
    }
    let mut emb = init_random(k, d, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7a5e);
    let entities: Vec<usize> = triples
        .iter()
        .flat_map(|f| [f.subject, f.object])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut order: Vec<usize> = (0..triples.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    let t = &mut emb.table;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let f = triples[i];
            for _ in 0..cfg.neg_per_pos {
                let corrupt = entities[rng.gen_range(0..entities.len())];
                let (ns, no) = if rng.gen_bool(0.5) {
                    (corrupt, f.object)
                } else {
                    (f.subject, corrupt)
                };
                let (dp, diff_p) = distance(t, f.subject, f.predicate, f.object);
                let (dn, diff_n) = distance(t, ns, f.predicate, no);
                let loss = cfg.margin + dp - dn;
                if loss > 0.0 {
                    total += loss;
                    step(t, f.subject, f.predicate, f.object, &diff_p, dp, cfg.lr);
                    step(t, ns, f.predicate, no, &diff_n, dn, -cfg.lr);
                }
            }
        }
        for &e in &entities {
            let row = t.row_mut(e);
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                row.iter_mut().for_each(|x| *x /= n);
            }
        }
        losses.push(total);
    }
    emb.pretrained = true;
    Ok(TransERun {
        embedding: emb,
        epoch_losses: losses,
    })
}

/// `(e^s, e^p, e^o)` rows of `table` as one `[3, d]` node, so gradients
/// scatter back into the table.
pub fn lookup(g: &mut Graph, table: Var, fact: Fact) -> Result<Var> {
    g.gather_rows(table, &[fact.subject, fact.predicate, fact.object])
}

/// Filtered rank (1 = best) of the true object among all `candidates`
/// for each triple, skipping candidates that form another known triple.
pub fn filtered_object_ranks(table: &Tensor, triples: &[Fact], candidates: &[usize]) -> Vec<usize> {
    let known: std::collections::HashSet<Fact> = triples.iter().copied().collect();
    triples
        .iter()
        .map(|f| {
            let (truth, _) = distance(table, f.subject, f.predicate, f.object);
            1 + candidates
                .iter()
                .filter(|&&c| c != f.object)
                .filter(|&&c| {
                    !known.contains(&Fact {
                        object: c,
                        ..*f
                    })
                })
                .filter(|&&c| distance(table, f.subject, f.predicate, c).0 < truth)
                .count()
        })
        .collect()
}

const HEADER: &str = "kbembed";

pub fn save(emb: &KbEmbedding, path: &Path) -> Result<()> {
    let t = &emb.table;
    let mut out = format!("{HEADER} {} {} {}\n", t.rows(), t.cols(), u8::from(emb.pretrained));
    for r in 0..t.rows() {
        let row: Vec<String> = t.row(r).iter().map(|x| format!("{x:.16e}")).collect();
        writeln!(out, "{}", row.join(" ")).unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<KbEmbedding> {
    let text = std::fs::read_to_string(path)?;
    let bad = |msg: String| Error::Checkpoint(format!("{}: {msg}", path.display()));
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split_whitespace().collect();
    let [tag, k, d, flag] = header[..] else {
        return Err(bad("malformed header".into()));
    };
    if tag != HEADER {
        return Err(bad(format!("expected `{HEADER}` header")));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|e| bad(format!("{s}: {e}")));
    let (k, d) = (parse(k)?, parse(d)?);
    let mut data = Vec::with_capacity(k * d);
    for (i, line) in lines.enumerate() {
        let before = data.len();
        for tok in line.split_whitespace() {
            data.push(tok.parse::<f64>().map_err(|e| bad(format!("row {i}: {e}")))?);
        }
        if data.len() - before != d {
            return Err(bad(format!("row {i} has {} values, expected {d}", data.len() - before)));
        }
    }
    if data.len() != k * d {
        return Err(bad(format!("expected {k} rows")));
    }
    Ok(KbEmbedding {
        table: Tensor::matrix(k, d, data),
        pretrained: flag == "1",
    })
}
