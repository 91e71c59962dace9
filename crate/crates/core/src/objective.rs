//! The training objective: next-step cross-entropy, the reconstruction
//! regularizer on the current interaction, and the L1 / squared-L2 waviness
//! of consecutive prediction vectors, plus their analytic gradients with
//! respect to every output `y_t`.
//!
//! All four terms share the normalizer `N = Σ_i (T_i − 1)` over the traces
//! passed in; the waviness terms are further divided by the skill count `M`.

use serde::{Deserialize, Serialize};

use crate::data::InteractionSequence;
use crate::error::{DktError, Result};
use crate::math::diff_norms;
use crate::model::PredictionTrace;

/// Probabilities are clamped to `[PROB_EPS, 1 − PROB_EPS]` before taking logs.
pub const PROB_EPS: f64 = 1e-12;

/// Weights of the regularization terms; all zero is plain DKT.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda_r: f64,
    pub lambda_w1: f64,
    pub lambda_w2: f64,
}

impl LossConfig {
    pub const PLAIN: LossConfig = LossConfig {
        lambda_r: 0.0,
        lambda_w1: 0.0,
        lambda_w2: 0.0,
    };

    pub fn new(lambda_r: f64, lambda_w1: f64, lambda_w2: f64) -> Result<Self> {
        let cfg = LossConfig {
            lambda_r,
            lambda_w1,
            lambda_w2,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_r", self.lambda_r),
            ("lambda_w1", self.lambda_w1),
            ("lambda_w2", self.lambda_w2),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(DktError::contract(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn is_plain(&self) -> bool {
        self.lambda_r == 0.0 && self.lambda_w1 == 0.0 && self.lambda_w2 == 0.0
    }

    pub fn as_tuple(&self) -> (f64, f64, f64) {
        (self.lambda_r, self.lambda_w1, self.lambda_w2)
    }
}

/// Every term of the regularized loss over one batch (or dataset).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchLossReport {
    pub next_loss: f64,
    pub recon: f64,
    pub w1: f64,
    /// Root of the mean squared change; the loss uses `w2_sq`.
    pub w2: f64,
    pub w2_sq: f64,
    pub total: f64,
    /// `Σ_i (T_i − 1)`.
    pub n_terms: usize,
}

pub fn xent(p: f64, correct: bool) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    if correct {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// `d xent / dp`, zero where the clamp is active.
fn xent_grad(p: f64, correct: bool) -> f64 {
    if !(PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
        return 0.0;
    }
    let a = if correct { 1.0 } else { 0.0 };
    (p - a) / (p * (1.0 - p))
}

/// Validates alignment and returns `(N, M)`.
pub(crate) fn check_aligned(traces: &[PredictionTrace], seqs: &[InteractionSequence]) -> Result<(usize, usize)> {
    if traces.len() != seqs.len() {
        return Err(DktError::shape(format!(
            "{} traces for {} sequences",
            traces.len(),
            seqs.len()
        )));
    }
    let m = traces_width(traces)?;
    let mut n = 0;
    for (tr, s) in traces.iter().zip(seqs) {
        if tr.len() != s.len() {
            return Err(DktError::shape(format!(
                "trace of length {} for a sequence of length {}",
                tr.len(),
                s.len()
            )));
        }
        if let Some(&q) = s.questions().iter().find(|&&q| q >= m) {
            return Err(DktError::contract(format!("question id {q} is outside [0, {m})")));
        }
        n += s.len().saturating_sub(1);
    }
    if n == 0 {
        return Err(DktError::NoTerms);
    }
    Ok((n, m))
}

fn traces_width(traces: &[PredictionTrace]) -> Result<usize> {
    let m = traces
        .iter()
        .flat_map(|t| t.outputs.first())
        .map(Vec::len)
        .next()
        .ok_or(DktError::NoTerms)?;
    if traces.iter().flat_map(|t| &t.outputs).any(|y| y.len() != m) {
        return Err(DktError::shape("prediction vectors of differing lengths"));
    }
    Ok(m)
}

/// Mean next-step cross-entropy `l(y_t·δ(q_{t+1}), a_{t+1})`.
pub fn next_step_loss(traces: &[PredictionTrace], seqs: &[InteractionSequence]) -> Result<f64> {
    let (n, _) = check_aligned(traces, seqs)?;
    let mut sum = 0.0;
    for (tr, s) in traces.iter().zip(seqs) {
        for t in 0..s.len() - 1 {
            sum += xent(tr.outputs[t][s.question(t + 1)], s.answer(t + 1));
        }
    }
    Ok(sum / n as f64)
}

/// Mean current-step cross-entropy `l(y_t·δ(q_t), a_t)` over `t < T`.
pub fn reconstruction_reg(traces: &[PredictionTrace], seqs: &[InteractionSequence]) -> Result<f64> {
    let (n, _) = check_aligned(traces, seqs)?;
    let mut sum = 0.0;
    for (tr, s) in traces.iter().zip(seqs) {
        for t in 0..s.len() - 1 {
            sum += xent(tr.outputs[t][s.question(t)], s.answer(t));
        }
    }
    Ok(sum / n as f64)
}

/// `(Σ ‖Δy‖₁, Σ ‖Δy‖₂², N, M)` over consecutive outputs.
fn waviness_sums(traces: &[PredictionTrace]) -> Result<(f64, f64, usize, usize)> {
    let m = traces_width(traces)?;
    let mut l1 = 0.0;
    let mut l2 = 0.0;
    let mut n = 0;
    for tr in traces {
        for pair in tr.outputs.windows(2) {
            let (a, b) = diff_norms(&pair[1], &pair[0])?;
            l1 += a;
            l2 += b;
        }
        n += tr.len().saturating_sub(1);
    }
    if n == 0 {
        return Err(DktError::NoTerms);
    }
    Ok((l1, l2, n, m))
}

/// `(w1, w2)`: mean absolute and root-mean-square change per component
/// between consecutive prediction vectors.
pub fn waviness(traces: &[PredictionTrace]) -> Result<(f64, f64)> {
    let (l1, l2, n, m) = waviness_sums(traces)?;
    let denom = (m * n) as f64;
    Ok((l1 / denom, (l2 / denom).sqrt()))
}

/// The regularized loss `L + λr·r + λw1·w1 + λw2·w2²` and its parts.
pub fn total_loss(traces: &[PredictionTrace], seqs: &[InteractionSequence], cfg: &LossConfig) -> Result<BatchLossReport> {
    cfg.validate()?;
    let (n, _) = check_aligned(traces, seqs)?;
    let next_loss = next_step_loss(traces, seqs)?;
    let recon = reconstruction_reg(traces, seqs)?;
    let (l1, l2, _, m) = waviness_sums(traces)?;
    let denom = (m * n) as f64;
    let w1 = l1 / denom;
    let w2_sq = l2 / denom;
    let mut total = next_loss;
    if cfg.lambda_r != 0.0 {
        total += cfg.lambda_r * recon;
    }
    if cfg.lambda_w1 != 0.0 {
        total += cfg.lambda_w1 * w1;
    }
    if cfg.lambda_w2 != 0.0 {
        total += cfg.lambda_w2 * w2_sq;
    }
    Ok(BatchLossReport {
        next_loss,
        recon,
        w1,
        w2: w2_sq.sqrt(),
        w2_sq,
        total,
        n_terms: n,
    })
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Gradient seeds of the plain next-step loss only.
pub fn next_step_output_grads(traces: &[PredictionTrace], seqs: &[InteractionSequence]) -> Result<Vec<Vec<Vec<f64>>>> {
    let (n, m) = check_aligned(traces, seqs)?;
    let inv_n = 1.0 / n as f64;
    let mut grads = Vec::with_capacity(traces.len());
    for (tr, s) in traces.iter().zip(seqs) {
        let mut g = vec![vec![0.0; m]; s.len()];
        for t in 0..s.len() - 1 {
            let q = s.question(t + 1);
            g[t][q] += xent_grad(tr.outputs[t][q], s.answer(t + 1)) * inv_n;
        }
        grads.push(g);
    }
    Ok(grads)
}

/// `dL′/dy_t` for every sequence and step.
///
/// Terms whose weight is zero are skipped entirely, so the all-zero config
/// produces exactly the plain next-step seeds.
pub fn loss_output_grads(
    traces: &[PredictionTrace],
    seqs: &[InteractionSequence],
    cfg: &LossConfig,
) -> Result<Vec<Vec<Vec<f64>>>> {
    cfg.validate()?;
    let mut grads = next_step_output_grads(traces, seqs)?;
    let (n, m) = check_aligned(traces, seqs)?;
    let inv_n = 1.0 / n as f64;
    let inv_mn = 1.0 / (m * n) as f64;

    for ((tr, s), g) in traces.iter().zip(seqs).zip(grads.iter_mut()) {
        let t_len = s.len();
        if cfg.lambda_r != 0.0 {
            for t in 0..t_len - 1 {
                let q = s.question(t);
                g[t][q] += cfg.lambda_r * xent_grad(tr.outputs[t][q], s.answer(t)) * inv_n;
            }
        }
        if cfg.lambda_w1 != 0.0 || cfg.lambda_w2 != 0.0 {
            let y = &tr.outputs;
            for t in 0..t_len {
                for k in 0..m {
                    let back = if t > 0 { y[t][k] - y[t - 1][k] } else { 0.0 };
                    let fwd = if t + 1 < t_len { y[t + 1][k] - y[t][k] } else { 0.0 };
                    let mut d = 0.0;
                    if cfg.lambda_w1 != 0.0 {
                        d += cfg.lambda_w1 * (sign(back) - sign(fwd)) * inv_mn;
                    }
                    if cfg.lambda_w2 != 0.0 {
                        d += 2.0 * cfg.lambda_w2 * (back - fwd) * inv_mn;
                    }
                    g[t][k] += d;
                }
            }
        }
    }
    Ok(grads)
}
