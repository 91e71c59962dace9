use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::ActiveInputs;
use crate::error::{DktError, Result};
use crate::math::{axpy, dot, Matrix};

/// Weights of the tanh RNN `h_t = tanh(W_hx x_t + W_hh h_{t−1} + b_h)` plus
/// the sigmoid output layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RnnParams {
    pub w_hx: Matrix,
    pub w_hh: Matrix,
    pub b_h: Vec<f64>,
    pub w_hy: Matrix,
    pub b_y: Vec<f64>,
    pub num_skills: usize,
    pub hidden: usize,
}

impl RnnParams {
    pub fn zeros(num_skills: usize, hidden: usize) -> Self {
        RnnParams {
            w_hx: Matrix::zeros(hidden, 2 * num_skills),
            w_hh: Matrix::zeros(hidden, hidden),
            b_h: vec![0.0; hidden],
            w_hy: Matrix::zeros(num_skills, hidden),
            b_y: vec![0.0; num_skills],
            num_skills,
            hidden,
        }
    }

    /// Gaussian weights, zero biases. Draw order: W_hx, W_hh, W_hy.
    pub fn random<R: Rng>(num_skills: usize, hidden: usize, stddev: f64, rng: &mut R) -> Self {
        let mut p = RnnParams::zeros(num_skills, hidden);
        if stddev > 0.0 {
            let normal = Normal::new(0.0, stddev).expect("positive finite stddev");
            for w in [&mut p.w_hx, &mut p.w_hh, &mut p.w_hy] {
                for v in w.as_mut_slice() {
                    *v = normal.sample(rng);
                }
            }
        }
        p
    }

    pub(crate) fn named_tensors(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("w_hx", self.w_hx.as_slice()),
            ("w_hh", self.w_hh.as_slice()),
            ("b_h", &self.b_h),
            ("w_hy", self.w_hy.as_slice()),
            ("b_y", &self.b_y),
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w_hx.as_mut_slice(),
            self.w_hh.as_mut_slice(),
            &mut self.b_h,
            self.w_hy.as_mut_slice(),
            &mut self.b_y,
        ]
    }

    pub(crate) fn check_shapes(&self) -> Result<()> {
        let (m, h) = (self.num_skills, self.hidden);
        if self.w_hx.shape() != (h, 2 * m) || self.w_hh.shape() != (h, h) || self.b_h.len() != h {
            return Err(DktError::shape("recurrent layer does not match (M, H)"));
        }
        if self.w_hy.shape() != (m, h) || self.b_y.len() != m {
            return Err(DktError::shape("output layer does not match (M, H)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct RnnStepCache {
    pub(crate) active: ActiveInputs,
    pub h_prev: Vec<f64>,
    pub h: Vec<f64>,
}

pub(crate) fn step_sparse(p: &RnnParams, active: ActiveInputs, h_prev: &[f64]) -> (Vec<f64>, RnnStepCache) {
    let idx = active.as_slice();
    let h: Vec<f64> = (0..p.hidden)
        .map(|k| {
            let rx = p.w_hx.row(k);
            let mut z = p.b_h[k] + dot(p.w_hh.row(k), h_prev);
            for &a in idx {
                z += rx[a];
            }
            z.tanh()
        })
        .collect();
    let cache = RnnStepCache {
        active,
        h_prev: h_prev.to_vec(),
        h: h.clone(),
    };
    (h, cache)
}

/// Accumulates gradients for one step and returns `dh_prev`.
pub(crate) fn step_backward(p: &RnnParams, cache: &RnnStepCache, dh: &[f64], grads: &mut RnnParams) -> Vec<f64> {
    let mut dh_prev = vec![0.0; p.hidden];
    let active = cache.active.as_slice();
    for k in 0..p.hidden {
        let d = dh[k] * (1.0 - cache.h[k] * cache.h[k]);
        if d == 0.0 {
            continue;
        }
        grads.b_h[k] += d;
        let row = grads.w_hx.row_mut(k);
        for &a in active {
            row[a] += d;
        }
        axpy(d, &cache.h_prev, grads.w_hh.row_mut(k));
        axpy(d, p.w_hh.row(k), &mut dh_prev);
    }
    dh_prev
}
