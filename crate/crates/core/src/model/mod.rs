//! The DKT sequence model: LSTM (or vanilla RNN) hidden layer and a sigmoid
//! output layer producing one probability per skill at every step, plus
//! exact backpropagation through time.

mod checkpoint;
mod lstm;
mod vanilla;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use lstm::{lstm_step, LstmParams, LstmStepCache};
pub use vanilla::{RnnParams, RnnStepCache};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{active_inputs, Encoding, InteractionSequence};
use crate::error::{DktError, Result};
use crate::math::{add_transpose_matvec, axpy, dot, sigmoid_scalar, Matrix};

/// Random generator used for initialization, shuffling and dropout masks.
pub type RunRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> RunRng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    #[default]
    Lstm,
    Vanilla,
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CellKind::Lstm => f.write_str("lstm"),
            CellKind::Vanilla => f.write_str("vanilla"),
        }
    }
}

impl FromStr for CellKind {
    type Err = DktError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lstm" => Ok(CellKind::Lstm),
            "vanilla" => Ok(CellKind::Vanilla),
            other => Err(DktError::contract(format!("unknown cell kind '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden_size: usize,
    pub cell_kind: CellKind,
    pub encoding: Encoding,
    /// Probability of zeroing a hidden unit before the output layer.
    pub dropout_rate: f64,
    pub init_stddev: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_size: 200,
            cell_kind: CellKind::Lstm,
            encoding: Encoding::Compressed,
            dropout_rate: 0.5,
            init_stddev: 0.05,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 {
            return Err(DktError::contract("hidden size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(DktError::contract(format!(
                "dropout rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if !(self.init_stddev >= 0.0 && self.init_stddev.is_finite()) {
            return Err(DktError::contract("init stddev must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Trainable parameters for either cell kind. Gradients share this type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cell", rename_all = "lowercase")]
pub enum Params {
    Lstm(LstmParams),
    Vanilla(RnnParams),
}

impl Params {
    pub fn zeros(kind: CellKind, num_skills: usize, hidden: usize) -> Self {
        match kind {
            CellKind::Lstm => Params::Lstm(LstmParams::zeros(num_skills, hidden)),
            CellKind::Vanilla => Params::Vanilla(RnnParams::zeros(num_skills, hidden)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Params::zeros(self.cell_kind(), self.num_skills(), self.hidden_size())
    }

    pub fn cell_kind(&self) -> CellKind {
        match self {
            Params::Lstm(_) => CellKind::Lstm,
            Params::Vanilla(_) => CellKind::Vanilla,
        }
    }

    pub fn num_skills(&self) -> usize {
        match self {
            Params::Lstm(p) => p.num_skills,
            Params::Vanilla(p) => p.num_skills,
        }
    }

    pub fn hidden_size(&self) -> usize {
        match self {
            Params::Lstm(p) => p.hidden,
            Params::Vanilla(p) => p.hidden,
        }
    }

    pub fn w_hy(&self) -> &Matrix {
        match self {
            Params::Lstm(p) => &p.w_hy,
            Params::Vanilla(p) => &p.w_hy,
        }
    }

    pub fn b_y(&self) -> &[f64] {
        match self {
            Params::Lstm(p) => &p.b_y,
            Params::Vanilla(p) => &p.b_y,
        }
    }

    fn output_layer_mut(&mut self) -> (&mut Matrix, &mut Vec<f64>) {
        match self {
            Params::Lstm(p) => (&mut p.w_hy, &mut p.b_y),
            Params::Vanilla(p) => (&mut p.w_hy, &mut p.b_y),
        }
    }

    /// Every parameter tensor, flattened row-major, with its name.
    pub fn named_tensors(&self) -> Vec<(&'static str, &[f64])> {
        match self {
            Params::Lstm(p) => p.named_tensors(),
            Params::Vanilla(p) => p.named_tensors(),
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Params::Lstm(p) => p.tensors_mut(),
            Params::Vanilla(p) => p.tensors_mut(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// All entries concatenated in tensor order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.named_tensors().iter().flat_map(|(_, t)| t.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, index: usize, value: f64) {
        let mut offset = index;
        for t in self.tensors_mut() {
            if offset < t.len() {
                t[offset] = value;
                return;
            }
            offset -= t.len();
        }
        panic!("parameter index {index} out of range");
    }

    /// `self += alpha · other`.
    pub fn add_scaled(&mut self, other: &Params, alpha: f64) -> Result<()> {
        self.check_same_shape(other)?;
        let src = other.named_tensors();
        for (dst, (_, s)) in self.tensors_mut().into_iter().zip(src) {
            axpy(alpha, s, dst);
        }
        Ok(())
    }

    pub fn check_same_shape(&self, other: &Params) -> Result<()> {
        if self.cell_kind() != other.cell_kind()
            || self.num_skills() != other.num_skills()
            || self.hidden_size() != other.hidden_size()
        {
            return Err(DktError::shape(format!(
                "parameter sets differ: {}/M={}/H={} vs {}/M={}/H={}",
                self.cell_kind(),
                self.num_skills(),
                self.hidden_size(),
                other.cell_kind(),
                other.num_skills(),
                other.hidden_size()
            )));
        }
        Ok(())
    }

    /// Shape consistency and finiteness of every entry.
    pub fn validate(&self) -> Result<()> {
        match self {
            Params::Lstm(p) => p.check_shapes()?,
            Params::Vanilla(p) => p.check_shapes()?,
        }
        for (name, t) in self.named_tensors() {
            if t.iter().any(|v| !v.is_finite()) {
                return Err(DktError::contract(format!("non-finite entry in {name}")));
            }
        }
        Ok(())
    }
}

/// Gaussian weights `N(0, init_stddev²)` drawn from `cfg.seed`, zero biases.
pub fn init_params(cfg: &ModelConfig, num_skills: usize) -> Result<Params> {
    cfg.validate()?;
    if num_skills == 0 {
        return Err(DktError::contract("num_skills must be positive"));
    }
    let mut rng = seeded_rng(cfg.seed);
    Ok(match cfg.cell_kind {
        CellKind::Lstm => Params::Lstm(LstmParams::random(num_skills, cfg.hidden_size, cfg.init_stddev, &mut rng)),
        CellKind::Vanilla => Params::Vanilla(RnnParams::random(num_skills, cfg.hidden_size, cfg.init_stddev, &mut rng)),
    })
}

/// `σ(W_hy·(h ⊗ mask) + b_y)`. The mask holds already-scaled multipliers
/// (`0` or `1/keep_prob`) and is only given in training mode.
pub fn output_step(h: &[f64], p: &Params, mask: Option<&[f64]>) -> Result<Vec<f64>> {
    let w = p.w_hy();
    if h.len() != w.cols() || mask.is_some_and(|m| m.len() != h.len()) {
        return Err(DktError::shape(format!(
            "output_step: h has {} entries for H={}",
            h.len(),
            w.cols()
        )));
    }
    let dropped: Vec<f64>;
    let input = match mask {
        Some(m) => {
            dropped = h.iter().zip(m).map(|(a, b)| a * b).collect();
            &dropped[..]
        }
        None => h,
    };
    Ok(output_from(w, p.b_y(), input))
}

fn output_from(w: &Matrix, b: &[f64], h: &[f64]) -> Vec<f64> {
    (0..w.rows()).map(|k| sigmoid_scalar(dot(w.row(k), h) + b[k])).collect()
}

/// Inference, or training with dropout masks drawn from the given generator.
pub enum Mode<'a> {
    Infer,
    Train(&'a mut RunRng),
}

#[derive(Clone, Debug)]
enum StepCache {
    Lstm(LstmStepCache),
    Vanilla(RnnStepCache),
}

#[derive(Clone, Debug)]
struct TraceCache {
    steps: Vec<StepCache>,
    /// Hidden state after dropout, i.e. the actual input of the output layer.
    output_inputs: Vec<Vec<f64>>,
    masks: Vec<Option<Vec<f64>>>,
    kind: CellKind,
    num_skills: usize,
    hidden: usize,
}

/// Per-step outputs `y_t` of one sequence; in training mode also the
/// activations needed for backpropagation.
#[derive(Clone, Debug)]
pub struct PredictionTrace {
    pub outputs: Vec<Vec<f64>>,
    cache: Option<TraceCache>,
}

impl PredictionTrace {
    /// A cache-less trace, for computing losses and metrics on given outputs.
    pub fn from_outputs(outputs: Vec<Vec<f64>>) -> Self {
        PredictionTrace { outputs, cache: None }
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    /// Drops the backpropagation cache.
    pub fn into_outputs(self) -> Vec<Vec<f64>> {
        self.outputs
    }
}

fn draw_mask(rng: &mut RunRng, hidden: usize, rate: f64) -> Option<Vec<f64>> {
    if rate == 0.0 {
        return None;
    }
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    Some(
        (0..hidden)
            .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
            .collect(),
    )
}

/// Runs the model over a whole sequence from `h_0 = c_0 = 0`.
pub fn forward_sequence(seq: &InteractionSequence, p: &Params, cfg: &ModelConfig, mode: Mode<'_>) -> Result<PredictionTrace> {
    let m = p.num_skills();
    let hdim = p.hidden_size();
    if let Some(&q) = seq.questions().iter().find(|&&q| q >= m) {
        return Err(DktError::contract(format!("question id {q} is outside [0, {m})")));
    }
    let t_len = seq.len();
    let mut outputs = Vec::with_capacity(t_len);
    let (train, mut rng) = match mode {
        Mode::Infer => (false, None),
        Mode::Train(r) => (true, Some(r)),
    };
    let mut steps = Vec::new();
    let mut output_inputs = Vec::new();
    let mut masks = Vec::new();

    let mut h = vec![0.0; hdim];
    let mut c = vec![0.0; hdim];
    for t in 0..t_len {
        let active = active_inputs(seq.question(t), seq.answer(t), m, cfg.encoding)?;
        let step = match p {
            Params::Lstm(lp) => {
                let (h_new, cache) = lstm::step_sparse(lp, active, &h, &c);
                c.clone_from(&cache.c);
                h = h_new;
                StepCache::Lstm(cache)
            }
            Params::Vanilla(rp) => {
                let (h_new, cache) = vanilla::step_sparse(rp, active, &h);
                h = h_new;
                StepCache::Vanilla(cache)
            }
        };
        let mask = match rng.as_deref_mut() {
            Some(r) => draw_mask(r, hdim, cfg.dropout_rate),
            None => None,
        };
        let out_in: Vec<f64> = match &mask {
            Some(mk) => h.iter().zip(mk).map(|(a, b)| a * b).collect(),
            None => h.clone(),
        };
        outputs.push(output_from(p.w_hy(), p.b_y(), &out_in));
        if train {
            steps.push(step);
            output_inputs.push(out_in);
            masks.push(mask);
        }
    }

    let cache = train.then(|| TraceCache {
        steps,
        output_inputs,
        masks,
        kind: p.cell_kind(),
        num_skills: m,
        hidden: hdim,
    });
    Ok(PredictionTrace { outputs, cache })
}

/// Exact gradients of `Σ_t dL/dy_t · y_t` with respect to every parameter,
/// accumulated into `grads`.
pub fn accumulate_backward(trace: &PredictionTrace, output_grads: &[Vec<f64>], p: &Params, grads: &mut Params) -> Result<()> {
    let cache = trace
        .cache
        .as_ref()
        .ok_or_else(|| DktError::contract("backpropagation needs a trace produced in training mode"))?;
    if cache.kind != p.cell_kind() || cache.num_skills != p.num_skills() || cache.hidden != p.hidden_size() {
        return Err(DktError::shape("trace was produced by differently shaped parameters"));
    }
    p.check_same_shape(grads)?;
    if output_grads.len() != trace.outputs.len() || output_grads.iter().any(|g| g.len() != p.num_skills()) {
        return Err(DktError::shape("output gradients do not match the trace"));
    }

    let hdim = p.hidden_size();
    let t_len = trace.outputs.len();
    let mut dh_next = vec![0.0; hdim];
    let mut dc_next = vec![0.0; hdim];
    let mut gate_dz: Vec<Vec<f64>> = Vec::new();
    if p.cell_kind() == CellKind::Lstm {
        gate_dz = vec![vec![0.0; 4 * hdim]; t_len];
    }
    for t in (0..t_len).rev() {
        let y = &trace.outputs[t];
        let dz: Vec<f64> = output_grads[t].iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect();

        let mut dh = vec![0.0; hdim];
        {
            let (dw_hy, db_y) = grads.output_layer_mut();
            let out_in = &cache.output_inputs[t];
            for (k, &d) in dz.iter().enumerate() {
                if d != 0.0 {
                    db_y[k] += d;
                    axpy(d, out_in, dw_hy.row_mut(k));
                }
            }
        }
        add_transpose_matvec(p.w_hy(), &dz, &mut dh);
        if let Some(mask) = &cache.masks[t] {
            for (d, m) in dh.iter_mut().zip(mask) {
                *d *= m;
            }
        }
        for (d, n) in dh.iter_mut().zip(&dh_next) {
            *d += n;
        }

        match (&cache.steps[t], p, &mut *grads) {
            (StepCache::Lstm(sc), Params::Lstm(lp), Params::Lstm(_)) => {
                let (dh_prev, dc_prev) = lstm::step_backward(lp, sc, &dh, &dc_next, &mut gate_dz[t]);
                dh_next = dh_prev;
                dc_next = dc_prev;
            }
            (StepCache::Vanilla(sc), Params::Vanilla(rp), Params::Vanilla(rg)) => {
                dh_next = vanilla::step_backward(rp, sc, &dh, rg);
            }
            _ => return Err(DktError::shape("cell kind mismatch during backpropagation")),
        }
    }
    if let Params::Lstm(lg) = grads {
        let caches: Vec<&LstmStepCache> = cache
            .steps
            .iter()
            .filter_map(|s| match s {
                StepCache::Lstm(c) => Some(c),
                StepCache::Vanilla(_) => None,
            })
            .collect();
        lstm::accumulate_weight_grads(&caches, &gate_dz, lg);
    }
    Ok(())
}

/// Like [`accumulate_backward`] but returns a fresh gradient set.
pub fn backward_sequence(trace: &PredictionTrace, output_grads: &[Vec<f64>], p: &Params) -> Result<Params> {
    let mut grads = p.zeros_like();
    accumulate_backward(trace, output_grads, p, &mut grads)?;
    Ok(grads)
}

#[cfg(test)]
mod tests;
