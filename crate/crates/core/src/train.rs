//! Minibatch training with global-norm clipping and early stopping, k-fold
//! grid search over the regularization weights, model selection and a
//! finite-difference gradient check.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{kfold, split_train_test, Dataset, InteractionSequence};
use crate::error::{DktError, Result};
use crate::metrics::{full_report, MetricsReport};
use crate::model::{
    accumulate_backward, forward_sequence, init_params, seeded_rng, Mode, ModelConfig, Params, PredictionTrace,
};
use crate::objective::{loss_output_grads, next_step_loss, next_step_output_grads, total_loss, LossConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Sgd,
    Adam,
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam => "adam",
        })
    }
}

impl FromStr for Optimizer {
    type Err = DktError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            _ => Err(DktError::contract(format!("unknown optimizer {s:?}"))),
        }
    }
}

/// Which held-out set drives early stopping.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EarlyStopOn {
    /// A split carved from the training pool.
    #[default]
    Validation,
    /// The evaluation set itself.
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub clip_threshold: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub optimizer: Optimizer,
    pub early_stop_on: EarlyStopOn,
    /// Share of the training pool held out for early stopping.
    pub validation_fraction: f64,
    /// Drives batch shuffling, dropout masks and the validation split.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            clip_threshold: 3.0,
            batch_size: 32,
            max_epochs: 100,
            patience: 5,
            optimizer: Optimizer::Sgd,
            early_stop_on: EarlyStopOn::Validation,
            validation_fraction: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(DktError::contract(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.clip_threshold > 0.0) {
            return Err(DktError::contract(format!(
                "clip_threshold must be positive, got {}",
                self.clip_threshold
            )));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(DktError::contract("batch_size, max_epochs and patience must be positive"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(DktError::contract(format!(
                "validation_fraction must be in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

/// The loss a training run minimizes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Objective {
    Regularized(LossConfig),
    /// Next-step cross-entropy through code that never touches the
    /// regularizers.
    NextStepOnly,
}

impl Objective {
    fn loss(&self, traces: &[PredictionTrace], seqs: &[InteractionSequence]) -> Result<f64> {
        match self {
            Objective::Regularized(cfg) => Ok(total_loss(traces, seqs, cfg)?.total),
            Objective::NextStepOnly => next_step_loss(traces, seqs),
        }
    }

    fn output_grads(&self, traces: &[PredictionTrace], seqs: &[InteractionSequence]) -> Result<Vec<Vec<Vec<f64>>>> {
        match self {
            Objective::Regularized(cfg) => loss_output_grads(traces, seqs, cfg),
            Objective::NextStepOnly => next_step_output_grads(traces, seqs),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Term-weighted mean of the batch losses seen during the epoch.
    pub train_loss: f64,
    pub monitor: MetricsReport,
    pub wall_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    /// Loss of the initial parameters on the training set.
    pub initial_loss: f64,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were returned.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl RunHistory {
    /// Line-oriented `key=value` text. Timing is optional so that histories
    /// of identical runs can be compared byte for byte.
    pub fn to_text(&self, with_timing: bool) -> String {
        let mut out = format!("initial_loss={:?}\n", self.initial_loss);
        for e in &self.epochs {
            let r = &e.monitor;
            out.push_str(&format!(
                "epoch={} train_loss={:?} auc_n={:?} auc_c={:?} w1={:?} w2={:?} m1={:?} m2={:?}",
                e.epoch, e.train_loss, r.auc_n, r.auc_c, r.w1, r.w2, r.m1, r.m2
            ));
            if with_timing {
                out.push_str(&format!(" wall_secs={:.3}", e.wall_secs));
            }
            out.push('\n');
        }
        out.push_str(&format!(
            "best_epoch={}\nstopped_early={}\n",
            self.best_epoch, self.stopped_early
        ));
        out
    }

    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch - 1]
    }
}

/// Inference traces for every sequence of `d`.
pub fn predict(params: &Params, d: &Dataset, model_cfg: &ModelConfig) -> Result<Vec<PredictionTrace>> {
    d.sequences()
        .iter()
        .map(|s| forward_sequence(s, params, model_cfg, Mode::Infer))
        .collect()
}

fn check_skills(params: &Params, d: &Dataset) -> Result<()> {
    if d.num_skills() > params.num_skills() {
        return Err(DktError::contract(format!(
            "data has M={} but the model has M={}",
            d.num_skills(),
            params.num_skills()
        )));
    }
    Ok(())
}

/// The six measures of inference-mode predictions on `d`.
pub fn evaluate(params: &Params, d: &Dataset, model_cfg: &ModelConfig) -> Result<MetricsReport> {
    check_skills(params, d)?;
    full_report(&predict(params, d, model_cfg)?, d.sequences())
}

/// Inference-mode regularized loss on `d`.
pub fn dataset_loss(params: &Params, d: &Dataset, model_cfg: &ModelConfig, loss_cfg: &LossConfig) -> Result<f64> {
    check_skills(params, d)?;
    Ok(total_loss(&predict(params, d, model_cfg)?, d.sequences(), loss_cfg)?.total)
}

struct Adam {
    m: Params,
    v: Params,
    step: i32,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(p: &Params) -> Self {
        Adam {
            m: p.zeros_like(),
            v: p.zeros_like(),
            step: 0,
        }
    }

    fn update(&mut self, params: &mut Params, grads: &mut Params, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.step);
        let c2 = 1.0 - ADAM_BETA2.powi(self.step);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors_mut())
            .zip(self.m.tensors_mut().into_iter().zip(self.v.tensors_mut()));
        for ((p, g), (m, v)) in tensors {
            for i in 0..p.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
            }
        }
    }
}

const DIVERGENCE_FACTOR: f64 = 10.0;
const DIVERGENCE_EPOCHS: usize = 3;

/// Fails on a non-finite epoch loss or on `DIVERGENCE_EPOCHS` consecutive
/// epochs above `DIVERGENCE_FACTOR` times the initial loss.
struct DivergenceGuard {
    initial: f64,
    run: usize,
}

impl DivergenceGuard {
    fn new(initial: f64) -> Self {
        DivergenceGuard { initial, run: 0 }
    }

    fn observe(&mut self, epoch: usize, loss: f64) -> Result<()> {
        if !loss.is_finite() {
            return Err(DktError::Divergence {
                epoch,
                reason: format!("train loss is {loss}"),
            });
        }
        if loss > DIVERGENCE_FACTOR * self.initial {
            self.run += 1;
            if self.run >= DIVERGENCE_EPOCHS {
                return Err(DktError::Divergence {
                    epoch,
                    reason: format!(
                        "train loss {loss} above {DIVERGENCE_FACTOR}x the initial {} for {DIVERGENCE_EPOCHS} epochs",
                        self.initial
                    ),
                });
            }
        } else {
            self.run = 0;
        }
        Ok(())
    }
}

/// Trains from freshly initialized parameters on `train_set`, early-stopping
/// on next-step AUC over `monitor_set`, and returns the best epoch's
/// parameters.
pub fn train(
    train_set: &Dataset,
    monitor_set: &Dataset,
    model_cfg: &ModelConfig,
    loss_cfg: &LossConfig,
    train_cfg: &TrainConfig,
) -> Result<(Params, RunHistory)> {
    loss_cfg.validate()?;
    train_objective(train_set, monitor_set, model_cfg, Objective::Regularized(*loss_cfg), train_cfg)
}

pub fn train_objective(
    train_set: &Dataset,
    monitor_set: &Dataset,
    model_cfg: &ModelConfig,
    objective: Objective,
    train_cfg: &TrainConfig,
) -> Result<(Params, RunHistory)> {
    train_cfg.validate()?;
    let m = train_set.num_skills().max(monitor_set.num_skills());
    let params = init_params(model_cfg, m)?;
    train_from(params, train_set, monitor_set, model_cfg, objective, train_cfg)
}

/// [`train_objective`] starting from the given parameters.
pub fn train_from(
    mut params: Params,
    train_set: &Dataset,
    monitor_set: &Dataset,
    model_cfg: &ModelConfig,
    objective: Objective,
    train_cfg: &TrainConfig,
) -> Result<(Params, RunHistory)> {
    train_cfg.validate()?;
    model_cfg.validate()?;
    if train_set.is_empty() || monitor_set.is_empty() {
        return Err(DktError::contract("training and monitor sets must be non-empty"));
    }
    check_skills(&params, train_set)?;
    check_skills(&params, monitor_set)?;

    let seqs = train_set.sequences();
    let initial_loss = objective.loss(&predict(&params, train_set, model_cfg)?, seqs)?;
    if !initial_loss.is_finite() {
        return Err(DktError::Divergence {
            epoch: 0,
            reason: format!("initial loss is {initial_loss}"),
        });
    }

    let mut rng = seeded_rng(train_cfg.seed);
    let mut adam = (train_cfg.optimizer == Optimizer::Adam).then(|| Adam::new(&params));
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, Params)> = None;
    let mut since_best = 0;
    let mut guard = DivergenceGuard::new(initial_loss);
    let mut stopped_early = false;

    for epoch in 1..=train_cfg.max_epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut term_sum = 0usize;
        for batch in order.chunks(train_cfg.batch_size) {
            let batch_seqs: Vec<InteractionSequence> = batch.iter().map(|&i| seqs[i].clone()).collect();
            let traces = batch_seqs
                .iter()
                .map(|s| forward_sequence(s, &params, model_cfg, Mode::Train(&mut rng)))
                .collect::<Result<Vec<_>>>()?;
            let terms: usize = batch_seqs.iter().map(InteractionSequence::num_terms).sum();
            let loss = objective.loss(&traces, &batch_seqs)?;
            if !loss.is_finite() {
                return Err(DktError::Divergence {
                    epoch,
                    reason: format!("batch loss is {loss}"),
                });
            }
            loss_sum += loss * terms as f64;
            term_sum += terms;

            let out_grads = objective.output_grads(&traces, &batch_seqs)?;
            let mut grads = params.zeros_like();
            for (tr, g) in traces.iter().zip(&out_grads) {
                accumulate_backward(tr, g, &params, &mut grads)?;
            }
            let norm = crate::math::clip_global_norm(&mut grads.tensors_mut(), train_cfg.clip_threshold)?;
            if !norm.is_finite() {
                return Err(DktError::Divergence {
                    epoch,
                    reason: format!("gradient norm is {norm}"),
                });
            }
            match adam.as_mut() {
                Some(a) => a.update(&mut params, &mut grads, train_cfg.learning_rate),
                None => params.add_scaled(&grads, -train_cfg.learning_rate)?,
            }
        }
        let train_loss = loss_sum / term_sum as f64;

        guard.observe(epoch, train_loss)?;

        let monitor = evaluate(&params, monitor_set, model_cfg)?;
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            monitor,
            wall_secs: start.elapsed().as_secs_f64(),
        });

        let improved = best.as_ref().is_none_or(|(score, _, _)| monitor.auc_n > *score);
        if improved {
            best = Some((monitor.auc_n, epoch, params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= train_cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }

    let (_, best_epoch, best_params) = best.expect("at least one epoch runs");
    Ok((
        best_params,
        RunHistory {
            initial_loss,
            epochs,
            best_epoch,
            stopped_early,
        },
    ))
}

/// Outcome of training on a pool and scoring on held-out data.
#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub params: Params,
    pub history: RunHistory,
    pub report: MetricsReport,
}

/// Trains on `pool` and evaluates on `held_out`. Early stopping uses a
/// validation split of the pool, or `held_out` itself when configured so.
pub fn fit(
    pool: &Dataset,
    held_out: &Dataset,
    model_cfg: &ModelConfig,
    objective: Objective,
    train_cfg: &TrainConfig,
) -> Result<FitOutcome> {
    train_cfg.validate()?;
    let m = pool.num_skills().max(held_out.num_skills());
    let params = init_params(model_cfg, m)?;
    let (params, history) = match train_cfg.early_stop_on {
        EarlyStopOn::Validation => {
            let (tr, val) = split_train_test(pool, train_cfg.validation_fraction, train_cfg.seed)?;
            train_from(params, &tr, &val, model_cfg, objective, train_cfg)?
        }
        EarlyStopOn::Test => train_from(params, pool, held_out, model_cfg, objective, train_cfg)?,
    };
    let report = evaluate(&params, held_out, model_cfg)?;
    Ok(FitOutcome {
        params,
        history,
        report,
    })
}

/// Candidate values for each regularization weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lambda_r: Vec<f64>,
    pub lambda_w1: Vec<f64>,
    pub lambda_w2: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            lambda_r: vec![0.0, 0.05, 0.10, 0.15, 0.20, 0.25],
            lambda_w1: vec![0.0, 0.01, 0.03, 0.1, 0.3, 1.0],
            lambda_w2: vec![0.0, 0.3, 1.0, 3.0, 10.0, 30.0, 100.0],
        }
    }
}

impl GridSpec {
    pub fn baseline_only() -> Self {
        GridSpec {
            lambda_r: vec![0.0],
            lambda_w1: vec![0.0],
            lambda_w2: vec![0.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, list) in [
            ("lambda_r", &self.lambda_r),
            ("lambda_w1", &self.lambda_w1),
            ("lambda_w2", &self.lambda_w2),
        ] {
            if list.is_empty() {
                return Err(DktError::contract(format!("empty {name} grid")));
            }
            if let Some(v) = list.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
                return Err(DktError::contract(format!("{name} grid holds invalid value {v}")));
            }
            for (i, a) in list.iter().enumerate() {
                if list[..i].contains(a) {
                    return Err(DktError::contract(format!("{name} grid repeats {a}")));
                }
            }
        }
        Ok(())
    }

    /// All triples, `λr` outermost.
    pub fn configs(&self) -> Vec<LossConfig> {
        let mut out = Vec::with_capacity(self.lambda_r.len() * self.lambda_w1.len() * self.lambda_w2.len());
        for &r in &self.lambda_r {
            for &w1 in &self.lambda_w1 {
                for &w2 in &self.lambda_w2 {
                    out.push(LossConfig {
                        lambda_r: r,
                        lambda_w1: w1,
                        lambda_w2: w2,
                    });
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub loss: LossConfig,
    pub mean: MetricsReport,
    pub folds: Vec<MetricsReport>,
}

/// k-fold cross-validated reports for every triple of the grid. Fold
/// assignment depends only on `train_cfg.seed`, so all triples see the same
/// folds.
pub fn grid_search(
    pool: &Dataset,
    grid: &GridSpec,
    folds: usize,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<Vec<GridResult>> {
    grid.validate()?;
    let splits = kfold(pool, folds, train_cfg.seed)?;
    let mut results = Vec::new();
    for loss in grid.configs() {
        let mut reports = Vec::with_capacity(folds);
        for (tr, held) in &splits {
            reports.push(fit(tr, held, model_cfg, Objective::Regularized(loss), train_cfg)?.report);
        }
        results.push(GridResult {
            loss,
            mean: MetricsReport::mean(&reports)?,
            folds: reports,
        });
    }
    Ok(results)
}

pub fn grid_results_to_text(results: &[GridResult]) -> String {
    let mut out = String::new();
    for g in results {
        let (r, w1, w2) = g.loss.as_tuple();
        let m = &g.mean;
        out.push_str(&format!(
            "lambda_r={r:?} lambda_w1={w1:?} lambda_w2={w2:?} auc_n={:?} auc_c={:?} w1={:?} w2={:?} m1={:?} m2={:?}\n",
            m.auc_n, m.auc_c, m.w1, m.w2, m.m1, m.m2
        ));
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub loss: LossConfig,
    pub report: MetricsReport,
    /// No candidate was less wavy than the baseline; the baseline is returned.
    pub fallback: bool,
}

/// Keeps candidates whose `w1` is below the baseline's and picks the highest
/// `auc_n + auc_c + m1 + m2`; ties go to the lexicographically smaller triple.
pub fn select_best(results: &[GridResult], baseline: &MetricsReport) -> Selection {
    let mut winner: Option<&GridResult> = None;
    for g in results.iter().filter(|g| g.mean.w1 < baseline.w1) {
        let better = match winner {
            None => true,
            Some(w) => {
                let (a, b) = (g.mean.selection_score(), w.mean.selection_score());
                a > b || (a == b && g.loss.as_tuple().partial_cmp(&w.loss.as_tuple()) == Some(std::cmp::Ordering::Less))
            }
        };
        if better {
            winner = Some(g);
        }
    }
    match winner {
        Some(g) => Selection {
            loss: g.loss,
            report: g.mean,
            fallback: false,
        },
        None => Selection {
            loss: LossConfig::PLAIN,
            report: *baseline,
            fallback: true,
        },
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(1, |analytic|)` over checked entries.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Entries whose perturbation crossed a kink of the L1 waviness term.
    pub skipped: usize,
}

pub const GRAD_CHECK_EPS: f64 = 1e-5;

fn waviness_signs(traces: &[PredictionTrace]) -> Vec<i8> {
    traces
        .iter()
        .flat_map(|t| t.outputs.windows(2))
        .flat_map(|w| w[1].iter().zip(&w[0]).map(|(a, b)| (a - b).partial_cmp(&0.0).map_or(0, |o| o as i8)))
        .collect()
}

/// Compares backpropagated parameter gradients of the regularized loss with
/// central differences on a random model and random data drawn from `seed`.
/// Dropout masks are replayed exactly for every evaluation.
pub fn gradient_check(model_cfg: &ModelConfig, num_skills: usize, loss_cfg: &LossConfig, seed: u64) -> Result<GradCheckReport> {
    model_cfg.validate()?;
    loss_cfg.validate()?;
    if num_skills == 0 || num_skills > 5 || model_cfg.hidden_size > 6 {
        return Err(DktError::contract("gradient_check needs M <= 5 and H <= 6"));
    }
    let mut rng = seeded_rng(seed);
    let seqs: Vec<InteractionSequence> = (0..3)
        .map(|_| {
            let t_len = rng.random_range(2..=6);
            let q = (0..t_len).map(|_| rng.random_range(0..num_skills)).collect();
            let a = (0..t_len).map(|_| rng.random::<bool>()).collect();
            InteractionSequence::new(q, a)
        })
        .collect::<Result<_>>()?;
    let cfg = ModelConfig {
        seed: seed.wrapping_add(1),
        ..model_cfg.clone()
    };
    let mut params = init_params(&cfg, num_skills)?;
    let mask_seed = seed.wrapping_add(2);

    let run = |p: &Params| -> Result<Vec<PredictionTrace>> {
        let mut r = seeded_rng(mask_seed);
        seqs.iter()
            .map(|s| forward_sequence(s, p, &cfg, Mode::Train(&mut r)))
            .collect()
    };

    let traces = run(&params)?;
    let out_grads = loss_output_grads(&traces, &seqs, loss_cfg)?;
    let mut grads = params.zeros_like();
    for (tr, g) in traces.iter().zip(&out_grads) {
        accumulate_backward(tr, g, &params, &mut grads)?;
    }
    let analytic = grads.to_flat();
    let base_signs = waviness_signs(&traces);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    let flat = params.to_flat();
    for (i, &orig) in flat.iter().enumerate() {
        params.set_flat(i, orig + GRAD_CHECK_EPS);
        let plus = run(&params)?;
        params.set_flat(i, orig - GRAD_CHECK_EPS);
        let minus = run(&params)?;
        params.set_flat(i, orig);

        if loss_cfg.lambda_w1 != 0.0 && (waviness_signs(&plus) != base_signs || waviness_signs(&minus) != base_signs) {
            report.skipped += 1;
            continue;
        }
        let lp = total_loss(&plus, &seqs, loss_cfg)?.total;
        let lm = total_loss(&minus, &seqs, loss_cfg)?.total;
        let numeric = (lp - lm) / (2.0 * GRAD_CHECK_EPS);
        let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        report.max_rel_error = report.max_rel_error.max(rel);
        report.checked += 1;
    }
    Ok(report)
}
