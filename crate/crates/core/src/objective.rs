//! Question-aware loss, answer-aware loss and their weighted sum.

use crate::corpus::Example;
use crate::error::Result;
use crate::model::Model;
use crate::numdiff::{Graph, Tensor, Var};

pub const PROB_FLOOR: f64 = 1e-12;
pub const DEFAULT_LAMBDA: f64 = 0.2;

/// `−(1/|Y|) Σ_t log max(P_t(y_t), 1e-12)` over `probs` (`[|Y|, W]`).
pub fn question_loss(g: &mut Graph, probs: Var, gold: &[usize]) -> Result<Var> {
    let nll = g.neg_log_prob(probs, gold, PROB_FLOOR)?;
    Ok(g.mean(nll))
}

/// The `(a_n, t)` pair selected by the answer loss, both 0-based:
/// `answer` indexes the answer-word list, `step` the output position.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AnswerPair {
    pub answer: usize,
    pub step: usize,
}

/// `min_{a_n ∈ A} min_t −log P_t(a_n)`. Ties go to the earlier answer
/// word, then the earlier step. Empty `A` gives 0 and no pair. With
/// `soft_min = Some(τ)` the hard minimum is replaced by a soft-min of
/// temperature `τ` (no pair is reported).
pub fn answer_loss(
    g: &mut Graph,
    probs: Var,
    answers: &[usize],
    soft_min: Option<f64>,
) -> Result<(Var, Option<AnswerPair>)> {
    if answers.is_empty() {
        return Ok((g.constant(Tensor::scalar(0.0)), None));
    }
    let steps = g.shape(probs).0;
    let picked = g.select_cols(probs, answers)?;
    // [|A|, T] so row-major order is answer-major
    let by_answer = g.transpose(picked);
    let logp = g.log_floor(by_answer, PROB_FLOOR);
    let h = g.scale(logp, -1.0);
    if let Some(tau) = soft_min {
        return Ok((g.soft_min(h, tau), None));
    }
    let (loss, flat) = g.min_all(h);
    Ok((
        loss,
        Some(AnswerPair {
            answer: flat / steps,
            step: flat % steps,
        }),
    ))
}

/// `ques + λ·ans`; exactly `ques` when `λ = 0`.
pub fn total_loss(g: &mut Graph, ques: Var, ans: Var, lambda: f64) -> Result<Var> {
    if lambda == 0.0 {
        return Ok(ques);
    }
    let weighted = g.scale(ans, lambda);
    g.add(ques, weighted)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossOptions {
    pub lambda: f64,
    pub soft_min: Option<f64>,
}

impl Default for LossOptions {
    fn default() -> Self {
        LossOptions {
            lambda: DEFAULT_LAMBDA,
            soft_min: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub ques_loss: f64,
    pub ans_loss: f64,
    pub total_loss: f64,
    pub argmin_pair: Option<AnswerPair>,
}

/// Teacher-forced loss of one example.
pub fn example_loss(model: &Model, g: &mut Graph, ex: &Example, opts: &LossOptions) -> Result<(Var, LossBreakdown)> {
    let tf = model.teacher_forced(g, ex)?;
    let ques = question_loss(g, tf.out.probs, &tf.gold)?;
    let (ans, pair) = answer_loss(g, tf.out.probs, &tf.answers, opts.soft_min)?;
    let total = total_loss(g, ques, ans, opts.lambda)?;
    let breakdown = LossBreakdown {
        ques_loss: g.value(ques).item(),
        ans_loss: g.value(ans).item(),
        total_loss: g.value(total).item(),
        argmin_pair: pair,
    };
    Ok((total, breakdown))
}

/// Teacher-forced question loss alone; the answer loss is never built.
pub fn question_only_loss(model: &Model, g: &mut Graph, ex: &Example) -> Result<(Var, LossBreakdown)> {
    let tf = model.teacher_forced(g, ex)?;
    let ques = question_loss(g, tf.out.probs, &tf.gold)?;
    let v = g.value(ques).item();
    let breakdown = LossBreakdown {
        ques_loss: v,
        ans_loss: 0.0,
        total_loss: v,
        argmin_pair: None,
    };
    Ok((ques, breakdown))
}
