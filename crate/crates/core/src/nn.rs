//! Transformer building blocks shared by the encoder and decoder.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numdiff::{Graph, ParamId, ParamStore, Tensor, Var};

pub const EMBED_INIT_RANGE: f64 = 0.08;

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, range: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-range..=range)).collect();
    Tensor::matrix(rows, cols, data)
}

/// Glorot-uniform weight of shape `[fan_in, fan_out]`.
pub fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, fan_in, fan_out, r)
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormParams {
    pub fn register(store: &mut ParamStore, prefix: &str, d: usize) -> Result<Self> {
        Ok(LayerNormParams {
            gain: store.add(format!("{prefix}.gain"), Tensor::full(1, d, 1.0))?,
            bias: store.add(format!("{prefix}.bias"), Tensor::zeros(1, d))?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        g.layer_norm(x, gain, bias)
    }
}

/// Multi-head attention projections. Heads are column blocks of the
/// `[d, d]` projection matrices.
#[derive(Clone, Copy, Debug)]
pub struct AttentionParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub w0: ParamId,
    pub heads: usize,
}

impl AttentionParams {
    pub fn register(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, d: usize, heads: usize) -> Result<Self> {
        if heads == 0 || d % heads != 0 {
            return Err(Error::config(format!("d={d} is not divisible by h={heads}")));
        }
        Ok(AttentionParams {
            wq: store.add(format!("{prefix}.wq"), glorot(rng, d, d))?,
            wk: store.add(format!("{prefix}.wk"), glorot(rng, d, d))?,
            wv: store.add(format!("{prefix}.wv"), glorot(rng, d, d))?,
            w0: store.add(format!("{prefix}.w0"), glorot(rng, d, d))?,
            heads,
        })
    }

    /// `Concat(head_1..head_h)·W_0` with `head_j = softmax(Q_j K_jᵀ / √(d/h) + mask) V_j`.
    /// `mask` is an additive `[Tq, Tk]` constant (use `-inf` to block).
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, query: Var, memory: Var, mask: Option<Var>) -> Result<Var> {
        let (wq, wk, wv, w0) = (
            g.param(store, self.wq),
            g.param(store, self.wk),
            g.param(store, self.wv),
            g.param(store, self.w0),
        );
        let q = g.matmul(query, wq)?;
        let k = g.matmul(memory, wk)?;
        let v = g.matmul(memory, wv)?;
        let d = g.shape(q).1;
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for j in 0..self.heads {
            let (lo, hi) = (j * dh, (j + 1) * dh);
            let (qj, kj, vj) = if self.heads == 1 {
                (q, k, v)
            } else {
                (g.slice_cols(q, lo, hi)?, g.slice_cols(k, lo, hi)?, g.slice_cols(v, lo, hi)?)
            };
            let scores = g.matmul_nt(qj, kj)?;
            let mut scores = g.scale(scores, scale);
            if let Some(m) = mask {
                scores = g.add(scores, m)?;
            }
            let attn = g.softmax_rows(scores)?;
            outs.push(g.matmul(attn, vj)?);
        }
        let cat = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs)? };
        g.matmul(cat, w0)
    }
}

/// Position-wise `relu(x W_1 + b_1) W_2 + b_2`.
#[derive(Clone, Copy, Debug)]
pub struct FeedForwardParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl FeedForwardParams {
    pub fn register(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, d: usize, inner: usize) -> Result<Self> {
        Ok(FeedForwardParams {
            w1: store.add(format!("{prefix}.w1"), glorot(rng, d, inner))?,
            b1: store.add(format!("{prefix}.b1"), Tensor::zeros(1, inner))?,
            w2: store.add(format!("{prefix}.w2"), glorot(rng, inner, d))?,
            b2: store.add(format!("{prefix}.b2"), Tensor::zeros(1, d))?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let (w1, b1, w2, b2) = (
            g.param(store, self.w1),
            g.param(store, self.b1),
            g.param(store, self.w2),
            g.param(store, self.b2),
        );
        let h = g.matmul(x, w1)?;
        let h = g.add_row(h, b1)?;
        let h = g.relu(h);
        let o = g.matmul(h, w2)?;
        g.add_row(o, b2)
    }
}

/// `LayerNorm(x + Dropout(sub))`.
pub fn residual_norm(
    g: &mut Graph,
    store: &ParamStore,
    norm: &LayerNormParams,
    x: Var,
    sub: Var,
    dropout: f64,
) -> Result<Var> {
    let sub = g.dropout(sub, dropout);
    let sum = g.add(x, sub)?;
    norm.forward(g, store, sum)
}

/// Sinusoidal position encodings, `[n, d]`.
pub fn sinusoidal_positions(n: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; n * d];
    for pos in 0..n {
        for i in 0..d {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 * freq;
            data[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::matrix(n, d, data)
}

/// Additive causal mask: `-inf` above the diagonal.
pub fn causal_mask(n: usize) -> Tensor {
    let mut t = Tensor::zeros(n, n);
    for r in 0..n {
        for c in r + 1..n {
            t.row_mut(r)[c] = f64::NEG_INFINITY;
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numdiff::grad_check;
    use rand::SeedableRng;

    #[test]
    fn positions_match_formula() {
        let p = sinusoidal_positions(3, 4);
        assert_eq!(p.row(0), &[0.0, 1.0, 0.0, 1.0]);
        assert!((p.get(2, 0) - 2f64.sin()).abs() < 1e-15);
        assert!((p.get(2, 3) - (2.0 / 100.0f64).cos()).abs() < 1e-15);
    }

    #[test]
    fn single_key_gets_full_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let att = AttentionParams::register(&mut store, &mut rng, "a", 4, 2).unwrap();
        let mut g = Graph::new();
        let x = g.constant(uniform(&mut rng, 1, 4, 1.0));
        let out = att.forward(&mut g, &store, x, x, None).unwrap();
        // softmax over one key is 1, so the output is v·W_0
        let v = g.value(x).matmul(&store.get(att.wv).value).unwrap();
        let expect = v.matmul(&store.get(att.w0).value).unwrap();
        for (a, b) in g.value(out).data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_indivisible_heads() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        assert!(matches!(
            AttentionParams::register(&mut store, &mut rng, "a", 6, 4),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn masked_attention_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let att = AttentionParams::register(&mut store, &mut rng, "a", 4, 2).unwrap();
        let ff = FeedForwardParams::register(&mut store, &mut rng, "f", 4, 8).unwrap();
        let ln = LayerNormParams::register(&mut store, "n", 4).unwrap();
        let x = uniform(&mut rng, 3, 4, 1.0);
        let w = uniform(&mut rng, 3, 4, 1.0);
        let report = grad_check(&mut store, 1e-5, |g, s| {
            let xv = g.constant(x.clone());
            let m = g.constant(causal_mask(3));
            let a = att.forward(g, s, xv, xv, Some(m))?;
            let h = residual_norm(g, s, &ln, xv, a, 0.0)?;
            let f = ff.forward(g, s, h)?;
            let wv = g.constant(w.clone());
            let prod = g.mul(f, wv)?;
            Ok(g.sum(prod))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }
}
