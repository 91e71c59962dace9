use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::ActiveInputs;
use crate::error::{DktError, Result};
use crate::math::{affine, axpy, dot, sigmoid_scalar, Matrix};

/// Weights of a single-layer LSTM plus the sigmoid output layer.
///
/// Each gate matrix is `H × (2M + H)` and acts on `[x_t, h_{t−1}]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub w_f: Matrix,
    pub w_i: Matrix,
    pub w_o: Matrix,
    pub w_c: Matrix,
    pub b_f: Vec<f64>,
    pub b_i: Vec<f64>,
    pub b_o: Vec<f64>,
    pub b_c: Vec<f64>,
    pub w_hy: Matrix,
    pub b_y: Vec<f64>,
    pub num_skills: usize,
    pub hidden: usize,
}

impl LstmParams {
    pub fn zeros(num_skills: usize, hidden: usize) -> Self {
        let cols = 2 * num_skills + hidden;
        LstmParams {
            w_f: Matrix::zeros(hidden, cols),
            w_i: Matrix::zeros(hidden, cols),
            w_o: Matrix::zeros(hidden, cols),
            w_c: Matrix::zeros(hidden, cols),
            b_f: vec![0.0; hidden],
            b_i: vec![0.0; hidden],
            b_o: vec![0.0; hidden],
            b_c: vec![0.0; hidden],
            w_hy: Matrix::zeros(num_skills, hidden),
            b_y: vec![0.0; num_skills],
            num_skills,
            hidden,
        }
    }

    /// Gaussian weights, zero biases. Draw order: W_f, W_i, W_o, W_c, W_hy.
    pub fn random<R: Rng>(num_skills: usize, hidden: usize, stddev: f64, rng: &mut R) -> Self {
        let mut p = LstmParams::zeros(num_skills, hidden);
        if stddev > 0.0 {
            let normal = Normal::new(0.0, stddev).expect("positive finite stddev");
            for w in [&mut p.w_f, &mut p.w_i, &mut p.w_o, &mut p.w_c, &mut p.w_hy] {
                for v in w.as_mut_slice() {
                    *v = normal.sample(rng);
                }
            }
        }
        p
    }

    pub(crate) fn named_tensors(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("w_f", self.w_f.as_slice()),
            ("w_i", self.w_i.as_slice()),
            ("w_o", self.w_o.as_slice()),
            ("w_c", self.w_c.as_slice()),
            ("b_f", &self.b_f),
            ("b_i", &self.b_i),
            ("b_o", &self.b_o),
            ("b_c", &self.b_c),
            ("w_hy", self.w_hy.as_slice()),
            ("b_y", &self.b_y),
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w_f.as_mut_slice(),
            self.w_i.as_mut_slice(),
            self.w_o.as_mut_slice(),
            self.w_c.as_mut_slice(),
            &mut self.b_f,
            &mut self.b_i,
            &mut self.b_o,
            &mut self.b_c,
            self.w_hy.as_mut_slice(),
            &mut self.b_y,
        ]
    }

    pub(crate) fn check_shapes(&self) -> Result<()> {
        let (m, h) = (self.num_skills, self.hidden);
        let gate = (h, 2 * m + h);
        for (name, w) in [("w_f", &self.w_f), ("w_i", &self.w_i), ("w_o", &self.w_o), ("w_c", &self.w_c)] {
            if w.shape() != gate {
                return Err(DktError::shape(format!("{name} is {:?}, expected {gate:?}", w.shape())));
            }
        }
        for (name, b) in [("b_f", &self.b_f), ("b_i", &self.b_i), ("b_o", &self.b_o), ("b_c", &self.b_c)] {
            if b.len() != h {
                return Err(DktError::shape(format!("{name} has {} entries, expected {h}", b.len())));
            }
        }
        if self.w_hy.shape() != (m, h) || self.b_y.len() != m {
            return Err(DktError::shape("output layer does not match (M, H)"));
        }
        Ok(())
    }
}

/// Activations kept from one LSTM step for backpropagation.
#[derive(Clone, Debug)]
pub struct LstmStepCache {
    pub(crate) active: ActiveInputs,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub f: Vec<f64>,
    pub i: Vec<f64>,
    pub o: Vec<f64>,
    /// Candidate cell values `c̃`.
    pub g: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

/// `W[:, active] + W[:, 2M..]·h_prev + b`, exploiting the one-hot input.
#[inline]
fn gate_preactivation(w: &Matrix, b: &[f64], active: &[usize], x_cols: usize, h_prev: &[f64], row: usize) -> f64 {
    let r = w.row(row);
    let mut z = b[row] + dot(&r[x_cols..], h_prev);
    for &a in active {
        z += r[a];
    }
    z
}

/// One step on a sparse (one-hot style) input.
pub(crate) fn step_sparse(
    p: &LstmParams,
    active: ActiveInputs,
    h_prev: &[f64],
    c_prev: &[f64],
) -> (Vec<f64>, LstmStepCache) {
    let hdim = p.hidden;
    let x_cols = 2 * p.num_skills;
    let idx = active.as_slice();
    let mut f = vec![0.0; hdim];
    let mut i = vec![0.0; hdim];
    let mut o = vec![0.0; hdim];
    let mut g = vec![0.0; hdim];
    let mut c = vec![0.0; hdim];
    let mut tanh_c = vec![0.0; hdim];
    let mut h = vec![0.0; hdim];
    for k in 0..hdim {
        f[k] = sigmoid_scalar(gate_preactivation(&p.w_f, &p.b_f, idx, x_cols, h_prev, k));
        i[k] = sigmoid_scalar(gate_preactivation(&p.w_i, &p.b_i, idx, x_cols, h_prev, k));
        o[k] = sigmoid_scalar(gate_preactivation(&p.w_o, &p.b_o, idx, x_cols, h_prev, k));
        g[k] = gate_preactivation(&p.w_c, &p.b_c, idx, x_cols, h_prev, k).tanh();
        c[k] = f[k] * c_prev[k] + i[k] * g[k];
        tanh_c[k] = c[k].tanh();
        h[k] = o[k] * tanh_c[k];
    }
    let cache = LstmStepCache {
        active,
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        f,
        i,
        o,
        g,
        c,
        tanh_c,
    };
    (h, cache)
}

/// One LSTM step on a dense input `x` of length `2M`; returns `(h, c, cache)`.
///
/// This goes through [`affine`] on the explicit concatenation `[x, h_prev]`
/// and is independent of the sparse path used during training.
pub fn lstm_step(x: &[f64], h_prev: &[f64], c_prev: &[f64], p: &LstmParams) -> Result<(Vec<f64>, Vec<f64>, LstmStepCache)> {
    if x.len() != 2 * p.num_skills || h_prev.len() != p.hidden || c_prev.len() != p.hidden {
        return Err(DktError::shape(format!(
            "lstm_step: x {}, h {}, c {} for M={}, H={}",
            x.len(),
            h_prev.len(),
            c_prev.len(),
            p.num_skills,
            p.hidden
        )));
    }
    let xh: Vec<f64> = x.iter().chain(h_prev).copied().collect();
    let f: Vec<f64> = affine(&p.w_f, &xh, &p.b_f)?.into_iter().map(sigmoid_scalar).collect();
    let i: Vec<f64> = affine(&p.w_i, &xh, &p.b_i)?.into_iter().map(sigmoid_scalar).collect();
    let o: Vec<f64> = affine(&p.w_o, &xh, &p.b_o)?.into_iter().map(sigmoid_scalar).collect();
    let g: Vec<f64> = affine(&p.w_c, &xh, &p.b_c)?.into_iter().map(f64::tanh).collect();
    let c: Vec<f64> = (0..p.hidden).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h: Vec<f64> = o.iter().zip(&tanh_c).map(|(a, b)| a * b).collect();

    // Dense inputs are recorded by their nonzero coordinates when they are 0/1.
    let nz: Vec<usize> = x.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(k, _)| k).collect();
    let active = match nz.as_slice() {
        [a] => ActiveInputs::from_parts([*a, 0], 1),
        [a, b] => ActiveInputs::from_parts([*a, *b], 2),
        _ => ActiveInputs::from_parts([0, 0], 0),
    };
    let cache = LstmStepCache {
        active,
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        f,
        i,
        o,
        g,
        c: c.clone(),
        tanh_c,
    };
    Ok((h, c, cache))
}

/// Backpropagates one step: writes the gate pre-activation gradients
/// `[dz_f, dz_i, dz_o, dz_g]` into `dz` and returns `(dh_prev, dc_prev)`.
/// Weight gradients are left to [`accumulate_weight_grads`].
pub(crate) fn step_backward(
    p: &LstmParams,
    cache: &LstmStepCache,
    dh: &[f64],
    dc_next: &[f64],
    dz: &mut [f64],
) -> (Vec<f64>, Vec<f64>) {
    let hdim = p.hidden;
    let x_cols = 2 * p.num_skills;
    let (dz_f, rest) = dz.split_at_mut(hdim);
    let (dz_i, rest) = rest.split_at_mut(hdim);
    let (dz_o, dz_g) = rest.split_at_mut(hdim);
    let mut dc_prev = vec![0.0; hdim];
    for k in 0..hdim {
        let (f, i, o, g, tc) = (cache.f[k], cache.i[k], cache.o[k], cache.g[k], cache.tanh_c[k]);
        let d_o = dh[k] * tc;
        let dc = dh[k] * o * (1.0 - tc * tc) + dc_next[k];
        dz_f[k] = dc * cache.c_prev[k] * f * (1.0 - f);
        dz_i[k] = dc * g * i * (1.0 - i);
        dz_g[k] = dc * i * (1.0 - g * g);
        dz_o[k] = d_o * o * (1.0 - o);
        dc_prev[k] = dc * f;
    }

    let mut dh_prev = vec![0.0; hdim];
    for (w, dz) in [(&p.w_f, &*dz_f), (&p.w_i, &*dz_i), (&p.w_o, &*dz_o), (&p.w_c, &*dz_g)] {
        for (k, &d) in dz.iter().enumerate() {
            if d != 0.0 {
                axpy(d, &w.row(k)[x_cols..], &mut dh_prev);
            }
        }
    }
    (dh_prev, dc_prev)
}

/// Adds `Σ_t dz_t ⊗ [x_t, h_{t−1}]` and `Σ_t dz_t` to the gate weights and
/// biases, one weight row at a time.
pub(crate) fn accumulate_weight_grads(caches: &[&LstmStepCache], dzs: &[Vec<f64>], grads: &mut LstmParams) {
    let hdim = grads.hidden;
    let x_cols = 2 * grads.num_skills;
    let gates = [
        (&mut grads.w_f, &mut grads.b_f),
        (&mut grads.w_i, &mut grads.b_i),
        (&mut grads.w_o, &mut grads.b_o),
        (&mut grads.w_c, &mut grads.b_c),
    ];
    for (gi, (dw, db)) in gates.into_iter().enumerate() {
        for k in 0..hdim {
            let row = dw.row_mut(k);
            let mut bias = 0.0;
            for (cache, dz) in caches.iter().zip(dzs) {
                let d = dz[gi * hdim + k];
                if d == 0.0 {
                    continue;
                }
                bias += d;
                for &a in cache.active.as_slice() {
                    row[a] += d;
                }
                axpy(d, &cache.h_prev, &mut row[x_cols..]);
            }
            db[k] += bias;
        }
    }
}
