//! Transformer decoder with fact attention and the three-mode copy mixture.

use rand_chacha::ChaCha8Rng;

use crate::corpus::{ContextSet, Segment, SUBJ_PH, UNK};
use crate::error::{Error, Result};
use crate::nn::{
    causal_mask, glorot, residual_norm, sinusoidal_positions, AttentionParams, FeedForwardParams, LayerNormParams,
};
use crate::numdiff::{Graph, ParamId, ParamStore, Tensor, Var};

pub const MODE_GENERATE: usize = 0;
pub const MODE_KB_COPY: usize = 1;
pub const MODE_CONTEXT_COPY: usize = 2;
pub const MODE_CODES: [char; 3] = ['g', 'k', 'c'];

/// The copy source `χ = x^s ++ x^p ++ x^o` and its extended-vocabulary
/// layout.
///
/// Extended ids `0..gen_size` are the generation vocabulary; context
/// tokens outside it get ids `gen_size..ext_size` in first-occurrence
/// order.
#[derive(Clone, Debug, PartialEq)]
pub struct CopySource {
    pub tokens: Vec<usize>,
    pub segments: Vec<Segment>,
    /// Positions of each unique token, in first-occurrence order.
    pub groups: Vec<Vec<usize>>,
    /// Word id of each group.
    pub group_tokens: Vec<usize>,
    /// Extended id of each group.
    pub group_ext: Vec<usize>,
    pub gen_size: usize,
    pub ext_size: usize,
}

impl CopySource {
    pub fn new(contexts: &ContextSet, gen_size: usize) -> Result<Self> {
        if contexts.is_empty() {
            return Err(Error::contract("empty copy source"));
        }
        let (tokens, segments): (Vec<usize>, Vec<Segment>) = contexts.tokens_with_segments().unzip();
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut group_tokens = Vec::new();
        let mut group_ext = Vec::new();
        let mut ext_size = gen_size;
        for (pos, &tok) in tokens.iter().enumerate() {
            match group_tokens.iter().position(|&t| t == tok) {
                Some(j) => groups[j].push(pos),
                None => {
                    groups.push(vec![pos]);
                    group_tokens.push(tok);
                    if tok < gen_size {
                        group_ext.push(tok);
                    } else {
                        group_ext.push(ext_size);
                        ext_size += 1;
                    }
                }
            }
        }
        Ok(CopySource {
            tokens,
            segments,
            groups,
            group_tokens,
            group_ext,
            gen_size,
            ext_size,
        })
    }

    /// Extended id of a word: itself inside `V`, its slot if it is an
    /// out-of-vocabulary context token, otherwise UNK.
    pub fn ext_id(&self, word: usize) -> usize {
        if word < self.gen_size {
            return word;
        }
        self.group_tokens
            .iter()
            .position(|&t| t == word)
            .map_or(UNK, |j| self.group_ext[j])
    }

    /// Word id of an extended id.
    pub fn word_id(&self, ext: usize) -> usize {
        if ext < self.gen_size {
            return ext;
        }
        let j = self.group_ext.iter().position(|&e| e == ext).expect("extended id outside the source");
        self.group_tokens[j]
    }

    /// Embedding row fed back when `ext` is the previous output.
    pub fn input_row(&self, ext: usize) -> usize {
        if ext < self.gen_size {
            ext
        } else {
            UNK
        }
    }
}

/// Which copy modes the switch may select.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CopyModes {
    pub kb: bool,
    pub context: bool,
}

impl Default for CopyModes {
    fn default() -> Self {
        CopyModes { kb: true, context: true }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderLayer {
    pub self_attn: AttentionParams,
    pub norm1: LayerNormParams,
    pub fact_attn: AttentionParams,
    pub norm2: LayerNormParams,
    pub ffn: FeedForwardParams,
    pub norm3: LayerNormParams,
}

#[derive(Clone, Debug)]
pub struct DecoderParams {
    /// Tied with the encoder input and the output projection.
    pub word_emb: ParamId,
    pub layers: Vec<DecoderLayer>,
    /// `[3, 2d]`.
    pub w_mode: ParamId,
    /// KB-copy perceptron `d → d/2 → 1`.
    pub kb_w1: ParamId,
    pub kb_b1: ParamId,
    pub kb_w2: ParamId,
    pub kb_b2: ParamId,
    /// `[d, d]`.
    pub w_ctx: ParamId,
    pub dropout: f64,
}

impl DecoderParams {
    pub fn register(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        word_emb: ParamId,
        layers: usize,
        heads: usize,
        dropout: f64,
    ) -> Result<Self> {
        let d = store.get(word_emb).value.cols();
        let half = (d / 2).max(1);
        let layers = (0..layers)
            .map(|l| {
                let p = format!("dec.{l}");
                Ok(DecoderLayer {
                    self_attn: AttentionParams::register(store, rng, &format!("{p}.self_attn"), d, heads)?,
                    norm1: LayerNormParams::register(store, &format!("{p}.norm1"), d)?,
                    fact_attn: AttentionParams::register(store, rng, &format!("{p}.fact_attn"), d, heads)?,
                    norm2: LayerNormParams::register(store, &format!("{p}.norm2"), d)?,
                    ffn: FeedForwardParams::register(store, rng, &format!("{p}.ffn"), d, 2 * d)?,
                    norm3: LayerNormParams::register(store, &format!("{p}.norm3"), d)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DecoderParams {
            word_emb,
            layers,
            w_mode: store.add("dec.w_mode", glorot(rng, 3, 2 * d))?,
            kb_w1: store.add("dec.kb_mlp.w1", glorot(rng, d, half))?,
            kb_b1: store.add("dec.kb_mlp.b1", Tensor::zeros(1, half))?,
            kb_w2: store.add("dec.kb_mlp.w2", glorot(rng, half, 1))?,
            kb_b2: store.add("dec.kb_mlp.b2", Tensor::zeros(1, 1))?,
            w_ctx: store.add("dec.w_ctx", glorot(rng, d, d))?,
            dropout,
        })
    }
}

/// Top-layer states `s_1..s_T` for the inputs `y_0..y_{T-1}` (embedding
/// rows, starting with BOS). Returns `[T, d]`.
pub fn decode_states(g: &mut Graph, store: &ParamStore, p: &DecoderParams, inputs: &[usize], h_f: Var) -> Result<Var> {
    if inputs.is_empty() {
        return Err(Error::contract("decoder needs at least the BOS token"));
    }
    let table = g.param(store, p.word_emb);
    let d = g.shape(table).1;
    let emb = g.gather_rows(table, inputs)?;
    let pos = g.constant(sinusoidal_positions(inputs.len(), d));
    let mut x = g.add(emb, pos)?;
    let mask = g.constant(causal_mask(inputs.len()));
    for layer in &p.layers {
        let a = layer.self_attn.forward(g, store, x, x, Some(mask))?;
        x = residual_norm(g, store, &layer.norm1, x, a, p.dropout)?;
        let f = layer.fact_attn.forward(g, store, x, h_f, None)?;
        x = residual_norm(g, store, &layer.norm2, x, f, p.dropout)?;
        let h = layer.ffn.forward(g, store, x)?;
        x = residual_norm(g, store, &layer.norm3, x, h, p.dropout)?;
    }
    Ok(x)
}

/// Linear switch logits `W_mode·[s_t; y_{t-1}]`, `[T, 3]`.
pub fn mode_logits(g: &mut Graph, store: &ParamStore, p: &DecoderParams, states: Var, prev_emb: Var) -> Result<Var> {
    let x = g.concat_cols(&[states, prev_emb])?;
    let w = g.param(store, p.w_mode);
    g.matmul_nt(x, w)
}

/// `softmax(W_mode·[s_t; y_{t-1}])`: the plain three-way switch.
pub fn mode_switch(g: &mut Graph, store: &ParamStore, p: &DecoderParams, states: Var, prev_emb: Var) -> Result<Var> {
    let logits = mode_logits(g, store, p, states, prev_emb)?;
    g.softmax_rows(logits)
}

/// KB-copy perceptron output, `[T, 1]`.
pub fn kb_copy_logit(g: &mut Graph, store: &ParamStore, p: &DecoderParams, states: Var) -> Result<Var> {
    let (w1, b1, w2, b2) = (
        g.param(store, p.kb_w1),
        g.param(store, p.kb_b1),
        g.param(store, p.kb_w2),
        g.param(store, p.kb_b2),
    );
    let h = g.matmul(states, w1)?;
    let h = g.add_row(h, b1)?;
    let h = g.relu(h);
    let o = g.matmul(h, w2)?;
    g.add_row(o, b2)
}

/// Generation distribution over `V`: `softmax(s_t·Eᵀ)` with the tied table.
pub fn p_vocab(g: &mut Graph, store: &ParamStore, p: &DecoderParams, states: Var) -> Result<Var> {
    let table = g.param(store, p.word_emb);
    let logits = g.matmul_nt(states, table)?;
    g.softmax_rows(logits)
}

/// Position scores `softmax_m(s_t·W_ctx·k_m)` over the encoded context rows.
pub fn copy_position_scores(
    g: &mut Graph,
    store: &ParamStore,
    p: &DecoderParams,
    states: Var,
    keys: Var,
) -> Result<Var> {
    let w = g.param(store, p.w_ctx);
    let q = g.matmul(states, w)?;
    let logits = g.matmul_nt(q, keys)?;
    g.softmax_rows(logits)
}

/// Maxout over repeated tokens, then renormalization: `[T, |groups|]`.
pub fn maxout_copy(g: &mut Graph, position_scores: Var, source: &CopySource) -> Result<Var> {
    let m = g.group_max(position_scores, &source.groups)?;
    g.row_normalize(m)
}

/// Per-step outputs of the decoder head.
#[derive(Clone, Copy, Debug)]
pub struct StepOutput {
    /// Extended distribution, `[T, ext_size]`.
    pub probs: Var,
    /// Mode probabilities `(gen, kb, ctx)`, `[T, 3]`.
    pub modes: Var,
    /// `[T, |V|]`.
    pub vocab: Var,
    /// Maxout-reduced copy distribution `[T, |groups|]`, if enabled.
    pub copy: Option<Var>,
}

/// Mixes the three modes into the extended distribution.
#[allow(clippy::too_many_arguments)]
pub fn step_distributions(
    g: &mut Graph,
    store: &ParamStore,
    p: &DecoderParams,
    states: Var,
    inputs: &[usize],
    context_rows: Var,
    source: &CopySource,
    modes_on: CopyModes,
) -> Result<StepOutput> {
    let t = g.shape(states).0;
    let table = g.param(store, p.word_emb);
    let prev = g.gather_rows(table, inputs)?;
    let mut logits = mode_logits(g, store, p, states, prev)?;
    if modes_on.kb {
        let kb = kb_copy_logit(g, store, p, states)?;
        let kb = g.scatter_cols(kb, &[MODE_KB_COPY], 3)?;
        logits = g.add(logits, kb)?;
    }
    if !modes_on.kb || !modes_on.context {
        let mut mask = Tensor::zeros(t, 3);
        for r in 0..t {
            if !modes_on.kb {
                mask.row_mut(r)[MODE_KB_COPY] = f64::NEG_INFINITY;
            }
            if !modes_on.context {
                mask.row_mut(r)[MODE_CONTEXT_COPY] = f64::NEG_INFINITY;
            }
        }
        let mask = g.constant(mask);
        logits = g.add(logits, mask)?;
    }
    let modes = g.softmax_rows(logits)?;

    let width = source.ext_size;
    let vocab = p_vocab(g, store, p, states)?;
    let gen_size = g.shape(vocab).1;
    let p_gen = g.select_cols(modes, &[MODE_GENERATE])?;
    let mut probs = g.mul_col(vocab, p_gen)?;
    if width > gen_size {
        let cols: Vec<usize> = (0..gen_size).collect();
        probs = g.scatter_cols(probs, &cols, width)?;
    }
    if modes_on.kb {
        let p_kb = g.select_cols(modes, &[MODE_KB_COPY])?;
        let kb = g.scatter_cols(p_kb, &[SUBJ_PH], width)?;
        probs = g.add(probs, kb)?;
    }
    let copy = if modes_on.context {
        let scores = copy_position_scores(g, store, p, states, context_rows)?;
        let copy = maxout_copy(g, scores, source)?;
        let p_ctx = g.select_cols(modes, &[MODE_CONTEXT_COPY])?;
        let weighted = g.mul_col(copy, p_ctx)?;
        let placed = g.scatter_cols(weighted, &source.group_ext, width)?;
        probs = g.add(probs, placed)?;
        Some(copy)
    } else {
        None
    };
    Ok(StepOutput {
        probs,
        modes,
        vocab,
        copy,
    })
}

/// The mode contributing most to `ext` at step `row` (ties: g, k, c).
pub fn dominant_mode(g: &Graph, out: &StepOutput, source: &CopySource, row: usize, ext: usize) -> usize {
    let modes = g.value(out.modes).row(row);
    let gen = if ext < source.gen_size {
        modes[MODE_GENERATE] * g.value(out.vocab).get(row, ext)
    } else {
        0.0
    };
    let kb = if ext == SUBJ_PH { modes[MODE_KB_COPY] } else { 0.0 };
    let ctx = match (out.copy, source.group_ext.iter().position(|&e| e == ext)) {
        (Some(c), Some(j)) => modes[MODE_CONTEXT_COPY] * g.value(c).get(row, j),
        _ => 0.0,
    };
    let mut best = MODE_GENERATE;
    for (m, v) in [(MODE_KB_COPY, kb), (MODE_CONTEXT_COPY, ctx)] {
        let cur = [gen, kb, ctx][best];
        if v > cur {
            best = m;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::uniform;
    use rand::SeedableRng;

    fn ctx(s: &[usize], p: &[usize], o: &[usize]) -> ContextSet {
        ContextSet {
            subject: s.to_vec(),
            predicate: p.to_vec(),
            object: o.to_vec(),
        }
    }

    #[test]
    fn copy_source_layout() {
        // gen_size 10: 12 and 15 are context-only words
        let src = CopySource::new(&ctx(&[7, 12], &[7], &[15, 12, 3]), 10).unwrap();
        assert_eq!(src.tokens, vec![7, 12, 7, 15, 12, 3]);
        assert_eq!(src.groups, vec![vec![0, 2], vec![1, 4], vec![3], vec![5]]);
        assert_eq!(src.group_ext, vec![7, 10, 11, 3]);
        assert_eq!(src.ext_size, 12);
        assert_eq!(src.ext_id(15), 11);
        assert_eq!(src.ext_id(4), 4);
        assert_eq!(src.ext_id(99), UNK);
        assert_eq!(src.word_id(10), 12);
        assert_eq!(src.input_row(11), UNK);
        assert!(CopySource::new(&ctx(&[], &[], &[]), 10).is_err());
    }

    #[test]
    fn maxout_hand_case() {
        // χ = [city, of, city], position scores [0.2, 0.5, 0.3]
        let src = CopySource::new(&ctx(&[20], &[21], &[20]), 30).unwrap();
        let mut g = Graph::new();
        let s = g.constant(Tensor::row_vector(vec![0.2, 0.5, 0.3]));
        let m = g.group_max(s, &src.groups).unwrap();
        assert_eq!(g.value(m).data(), &[0.3, 0.5]);
        let out = maxout_copy(&mut g, s, &src).unwrap();
        let v = g.value(out).data();
        assert!((v[0] - 0.375).abs() < 1e-15 && (v[1] - 0.625).abs() < 1e-15);
    }

    #[test]
    fn distinct_tokens_keep_position_scores() {
        let src = CopySource::new(&ctx(&[5], &[6], &[7, 8]), 30).unwrap();
        let mut g = Graph::new();
        let s = g.constant(Tensor::row_vector(vec![0.1, 0.2, 0.3, 0.4]));
        let out = maxout_copy(&mut g, s, &src).unwrap();
        for (a, b) in g.value(out).data().iter().zip([0.1, 0.2, 0.3, 0.4]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    fn params(d: usize) -> (ParamStore, DecoderParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let word = store.add("word_emb", uniform(&mut rng, 9, d, 0.5)).unwrap();
        let dec = DecoderParams::register(&mut store, &mut rng, word, 1, 2, 0.0).unwrap();
        (store, dec)
    }

    #[test]
    fn zero_switch_weights_are_uniform() {
        let (mut store, dec) = params(4);
        store.get_mut(dec.w_mode).value = Tensor::zeros(3, 8);
        let mut g = Graph::new();
        let s = g.constant(uniform(&mut ChaCha8Rng::seed_from_u64(0), 2, 4, 1.0));
        let y = g.constant(uniform(&mut ChaCha8Rng::seed_from_u64(1), 2, 4, 1.0));
        let m = mode_switch(&mut g, &store, &dec, s, y).unwrap();
        assert!(g.value(m).data().iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn switch_hand_case() {
        // 2d = 4; logits = W·x = [1, 0, -1]
        let (mut store, dec) = params(2);
        store.get_mut(dec.w_mode).value =
            Tensor::from_rows(&[&[1.0, 0.0, 0.0, 0.0], &[0.0, 0.0, 0.0, 0.0], &[0.0, 0.0, 0.0, -1.0]]);
        let mut g = Graph::new();
        let s = g.constant(Tensor::row_vector(vec![1.0, 5.0]));
        let y = g.constant(Tensor::row_vector(vec![-3.0, 1.0]));
        let m = mode_switch(&mut g, &store, &dec, s, y).unwrap();
        let z = 1f64.exp() + 1.0 + (-1f64).exp();
        let expect = [1f64.exp() / z, 1.0 / z, (-1f64).exp() / z];
        for (a, b) in g.value(m).data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn causal_states_and_full_mixture() {
        let (store, dec) = params(4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut g = Graph::new();
        let h_f = g.constant(uniform(&mut rng, 3, 4, 1.0));
        let short = decode_states(&mut g, &store, &dec, &[1, 5], h_f).unwrap();
        let long = decode_states(&mut g, &store, &dec, &[1, 5, 7, 2], h_f).unwrap();
        assert_eq!(g.value(short).data(), &g.value(long).data()[..8]);

        let src = CopySource::new(&ctx(&[5, 11], &[6], &[11, 3]), 9).unwrap();
        let keys = g.constant(uniform(&mut rng, 5, 4, 1.0));
        let out = step_distributions(&mut g, &store, &dec, long, &[1, 5, 7, 2], keys, &src, CopyModes::default())
            .unwrap();
        let probs = g.value(out.probs);
        assert_eq!(probs.cols(), 10);
        for r in 0..4 {
            let s: f64 = probs.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(decode_states(&mut g, &store, &dec, &[], h_f).is_err());
    }

    #[test]
    fn generation_only_mixture_is_p_vocab() {
        let (store, dec) = params(4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = Graph::new();
        let h_f = g.constant(uniform(&mut rng, 3, 4, 1.0));
        let states = decode_states(&mut g, &store, &dec, &[1, 6], h_f).unwrap();
        let src = CopySource::new(&ctx(&[5], &[6], &[7]), 9).unwrap();
        let keys = g.constant(uniform(&mut rng, 3, 4, 1.0));
        let off = CopyModes { kb: false, context: false };
        let out = step_distributions(&mut g, &store, &dec, states, &[1, 6], keys, &src, off).unwrap();
        assert_eq!(g.value(out.probs), g.value(out.vocab));
        assert!(g.value(out.modes).data().chunks(3).all(|m| m == [1.0, 0.0, 0.0]));
    }
}
