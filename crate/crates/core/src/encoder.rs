//! Context transformer encoder and the context-augmented fact encoder.

use rand_chacha::ChaCha8Rng;

use crate::corpus::Segment;
use crate::error::{Error, Result};
use crate::nn::{glorot, residual_norm, uniform, AttentionParams, FeedForwardParams, LayerNormParams, EMBED_INIT_RANGE};
use crate::numdiff::{Graph, ParamId, ParamStore, Var};

#[derive(Clone, Copy, Debug)]
pub struct EncoderLayer {
    pub attention: AttentionParams,
    pub norm1: LayerNormParams,
    pub ffn: FeedForwardParams,
    pub norm2: LayerNormParams,
}

/// One transformer stack shared by the subject, predicate and object
/// contexts.
#[derive(Clone, Debug)]
pub struct EncoderParams {
    /// Word embeddings, `[|V|, d]`; the same parameter as the decoder's.
    pub word_emb: ParamId,
    /// `[3, d]`, rows in [`Segment`] order.
    pub segment_emb: ParamId,
    pub layers: Vec<EncoderLayer>,
    pub dropout: f64,
}

impl EncoderParams {
    pub fn register(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        word_emb: ParamId,
        layers: usize,
        heads: usize,
        dropout: f64,
    ) -> Result<Self> {
        let d = store.get(word_emb).value.cols();
        let segment_emb = store.add("enc.segment_emb", uniform(rng, 3, d, EMBED_INIT_RANGE))?;
        let layers = (0..layers)
            .map(|l| {
                let p = format!("enc.{l}");
                Ok(EncoderLayer {
                    attention: AttentionParams::register(store, rng, &format!("{p}.attn"), d, heads)?,
                    norm1: LayerNormParams::register(store, &format!("{p}.norm1"), d)?,
                    ffn: FeedForwardParams::register(store, rng, &format!("{p}.ffn"), d, 2 * d)?,
                    norm2: LayerNormParams::register(store, &format!("{p}.norm2"), d)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EncoderParams {
            word_emb,
            segment_emb,
            layers,
            dropout,
        })
    }
}

/// Encodes one context. `rows` are embedding-table rows (see
/// [`Vocab::embedding_row`](crate::corpus::Vocab::embedding_row)).
/// Returns `[n, d]`.
pub fn encode_context(g: &mut Graph, store: &ParamStore, p: &EncoderParams, rows: &[usize], seg: Segment) -> Result<Var> {
    if rows.is_empty() {
        return Err(Error::contract("cannot encode an empty context"));
    }
    let table = g.param(store, p.word_emb);
    let tok = g.gather_rows(table, rows)?;
    let segs = g.param(store, p.segment_emb);
    let seg_row = g.gather_rows(segs, &[seg.index()])?;
    let mut x = g.add_row(tok, seg_row)?;
    for layer in &p.layers {
        let a = layer.attention.forward(g, store, x, x, None)?;
        x = residual_norm(g, store, &layer.norm1, x, a, p.dropout)?;
        let f = layer.ffn.forward(g, store, x)?;
        x = residual_norm(g, store, &layer.norm2, x, f, p.dropout)?;
    }
    Ok(x)
}

/// `αᵀC` with `α = softmax(C·e / √d)`; `e` is `[1, d]`, `C` is `[n, d]`.
pub fn attentive_vector(g: &mut Graph, e: Var, c: Var) -> Result<Var> {
    let d = g.shape(e).1;
    let logits = g.matmul_nt(e, c)?;
    let logits = g.scale(logits, 1.0 / (d as f64).sqrt());
    let alpha = g.softmax_rows(logits)?;
    g.matmul(alpha, c)
}

/// Gate weights `W_f`, `W_g`, each `[d, 2d]` (no bias).
#[derive(Clone, Copy, Debug)]
pub struct FusionParams {
    pub wf: ParamId,
    pub wg: ParamId,
}

impl FusionParams {
    pub fn register(store: &mut ParamStore, rng: &mut ChaCha8Rng, d: usize) -> Result<Self> {
        Ok(FusionParams {
            wf: store.add("fusion.wf", glorot(rng, d, 2 * d))?,
            wg: store.add("fusion.wg", glorot(rng, d, 2 * d))?,
        })
    }
}

/// `h = g⊙f + (1−g)⊙e` with `f = tanh(W_f[c;e])`, `g = σ(W_g[c;e])`.
/// Works row-wise, so `c` and `e` may hold several atoms at once.
pub fn gated_fuse(g: &mut Graph, store: &ParamStore, p: &FusionParams, c: Var, e: Var) -> Result<Var> {
    let ce = g.concat_cols(&[c, e])?;
    let wf = g.param(store, p.wf);
    let wg = g.param(store, p.wg);
    let f = g.matmul_nt(ce, wf)?;
    let f = g.tanh(f);
    let gate = g.matmul_nt(ce, wg)?;
    let gate = g.sigmoid(gate);
    let gf = g.mul(gate, f)?;
    let one_minus = g.affine(gate, -1.0, 1.0);
    let ge = g.mul(one_minus, e)?;
    g.add(gf, ge)
}

/// Output of [`augment_fact`].
#[derive(Clone, Copy, Debug)]
pub struct AugmentedFact {
    /// `[3, d]`: rows `h^s, h^p, h^o`.
    pub h_f: Var,
    /// Encoded contexts `C^s, C^p, C^o` stacked in that order, `[|χ|, d]`.
    pub context_rows: Var,
}

/// Encodes the three contexts and fuses each with its KB embedding row.
/// `kb_rows` is `[3, d]` (`e^s; e^p; e^o`). With `fuse == false`, `H_f`
/// is the KB rows themselves.
pub fn augment_fact(
    g: &mut Graph,
    store: &ParamStore,
    enc: &EncoderParams,
    fusion: &FusionParams,
    contexts: [&[usize]; 3],
    kb_rows: Var,
    fuse: bool,
) -> Result<AugmentedFact> {
    let mut encoded = Vec::with_capacity(3);
    let mut attended = Vec::with_capacity(3);
    for (seg, rows) in Segment::ALL.into_iter().zip(contexts) {
        let c = encode_context(g, store, enc, rows, seg)?;
        if fuse {
            let e = g.gather_rows(kb_rows, &[seg.index()])?;
            attended.push(attentive_vector(g, e, c)?);
        }
        encoded.push(c);
    }
    let context_rows = g.concat_rows(&encoded)?;
    let h_f = if fuse {
        let c = g.concat_rows(&attended)?;
        gated_fuse(g, store, fusion, c, kb_rows)?
    } else {
        kb_rows
    };
    Ok(AugmentedFact { h_f, context_rows })
}
