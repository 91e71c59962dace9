use super::*;
use crate::data::InteractionSequence;

fn seq(pairs: &[(usize, u8)]) -> InteractionSequence {
    InteractionSequence::from_pairs(pairs).unwrap()
}

fn small_cfg(kind: CellKind, hidden: usize, dropout: f64) -> ModelConfig {
    ModelConfig {
        hidden_size: hidden,
        cell_kind: kind,
        encoding: Encoding::Compressed,
        dropout_rate: dropout,
        init_stddev: 0.5,
        seed: 17,
    }
}

#[test]
fn init_is_deterministic() {
    let cfg = small_cfg(CellKind::Lstm, 6, 0.5);
    let a = init_params(&cfg, 4).unwrap();
    let b = init_params(&cfg, 4).unwrap();
    let bits = |p: &Params| p.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    let other = init_params(&ModelConfig { seed: 18, ..cfg }, 4).unwrap();
    assert_ne!(bits(&a), bits(&other));
}

#[test]
fn zero_stddev_gives_zero_weights() {
    let cfg = ModelConfig {
        init_stddev: 0.0,
        hidden_size: 5,
        ..ModelConfig::default()
    };
    let p = init_params(&cfg, 3).unwrap();
    assert!(p.to_flat().iter().all(|&v| v == 0.0));
}

#[test]
fn default_init_statistics() {
    let p = init_params(&ModelConfig::default(), 50).unwrap();
    let mut weights = Vec::new();
    for (name, t) in p.named_tensors() {
        if name.starts_with("w_") {
            weights.extend_from_slice(t);
        } else {
            assert!(t.iter().all(|&v| v == 0.0), "{name} should start at zero");
        }
    }
    assert!(weights.len() >= 10_000);
    let n = weights.len() as f64;
    let mean = weights.iter().sum::<f64>() / n;
    let sd = (weights.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!((sd - 0.05).abs() < 0.005, "{sd}");
}

#[test]
fn output_step_cases() {
    let p = Params::zeros(CellKind::Lstm, 3, 4);
    assert_eq!(output_step(&[0.3, -0.2, 0.9, 0.0], &p, None).unwrap(), vec![0.5; 3]);
    assert!(output_step(&[0.0; 3], &p, None).is_err());

    let cfg = small_cfg(CellKind::Lstm, 4, 0.5);
    let p = init_params(&cfg, 3).unwrap();
    let h = [0.4, -0.9, 0.1, 0.7];
    let y = output_step(&h, &p, None).unwrap();
    assert!(y.iter().all(|&v| v > 0.0 && v < 1.0));
    let ones = [1.0; 4];
    assert_eq!(output_step(&h, &p, Some(&ones)).unwrap(), y);
}

#[test]
fn zero_model_predicts_one_half() {
    let p = Params::zeros(CellKind::Lstm, 3, 4);
    let cfg = small_cfg(CellKind::Lstm, 4, 0.5);
    let trace = forward_sequence(&seq(&[(0, 1), (2, 0)]), &p, &cfg, Mode::Infer).unwrap();
    assert_eq!(trace.outputs, vec![vec![0.5; 3]; 2]);
}

#[test]
fn inference_is_deterministic_and_train_without_dropout_matches() {
    for kind in [CellKind::Lstm, CellKind::Vanilla] {
        let cfg = small_cfg(kind, 5, 0.0);
        let p = init_params(&cfg, 4).unwrap();
        let s = seq(&[(0, 1), (3, 0), (1, 1), (1, 0)]);
        let a = forward_sequence(&s, &p, &cfg, Mode::Infer).unwrap();
        let b = forward_sequence(&s, &p, &cfg, Mode::Infer).unwrap();
        assert_eq!(a.outputs, b.outputs);
        let mut rng = seeded_rng(1);
        let c = forward_sequence(&s, &p, &cfg, Mode::Train(&mut rng)).unwrap();
        assert_eq!(a.outputs, c.outputs);
        assert!(c.has_cache() && !a.has_cache());
    }
}

#[test]
fn out_of_range_question_is_rejected() {
    let cfg = small_cfg(CellKind::Lstm, 3, 0.0);
    let p = init_params(&cfg, 2).unwrap();
    assert!(forward_sequence(&seq(&[(0, 1), (2, 1)]), &p, &cfg, Mode::Infer).is_err());
}

/// Scalar evaluation for M = 1, H = 1: each gate has weights on
/// `[x_0, x_1, h]` and the input is one-hot at `a` (compressed encoding).
#[test]
fn scalar_hand_evaluation() {
    let mut lp = LstmParams::zeros(1, 1);
    let wf = [0.3, -0.2, 0.5];
    let wi = [-0.4, 0.6, 0.1];
    let wo = [0.2, 0.25, -0.3];
    let wc = [0.7, -0.5, 0.4];
    for k in 0..3 {
        lp.w_f.set(0, k, wf[k]);
        lp.w_i.set(0, k, wi[k]);
        lp.w_o.set(0, k, wo[k]);
        lp.w_c.set(0, k, wc[k]);
    }
    lp.b_f[0] = 0.1;
    lp.b_i[0] = -0.1;
    lp.b_o[0] = 0.05;
    lp.b_c[0] = 0.0;
    lp.w_hy.set(0, 0, 1.5);
    lp.b_y[0] = -0.2;
    let p = Params::Lstm(lp);

    let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
    let answers = [1usize, 0];
    let (mut h, mut c) = (0.0f64, 0.0f64);
    let mut expected = Vec::new();
    for &a in &answers {
        let f = sig(wf[a] + wf[2] * h + 0.1);
        let i = sig(wi[a] + wi[2] * h - 0.1);
        let o = sig(wo[a] + wo[2] * h + 0.05);
        let g = (wc[a] + wc[2] * h).tanh();
        c = f * c + i * g;
        h = o * c.tanh();
        expected.push(sig(1.5 * h - 0.2));
    }

    let cfg = small_cfg(CellKind::Lstm, 1, 0.0);
    let trace = forward_sequence(&seq(&[(0, 1), (0, 0)]), &p, &cfg, Mode::Infer).unwrap();
    for t in 0..2 {
        assert!((trace.outputs[t][0] - expected[t]).abs() < 1e-14);
    }
}

#[test]
fn zero_seed_gives_zero_gradient() {
    let cfg = small_cfg(CellKind::Lstm, 4, 0.5);
    let p = init_params(&cfg, 3).unwrap();
    let s = seq(&[(0, 1), (1, 0), (2, 1)]);
    let mut rng = seeded_rng(3);
    let trace = forward_sequence(&s, &p, &cfg, Mode::Train(&mut rng)).unwrap();
    let g = backward_sequence(&trace, &vec![vec![0.0; 3]; 3], &p).unwrap();
    assert!(g.to_flat().iter().all(|&v| v == 0.0));
}

#[test]
fn single_step_output_bias_gradient() {
    let cfg = small_cfg(CellKind::Lstm, 4, 0.0);
    let p = init_params(&cfg, 3).unwrap();
    let s = seq(&[(0, 1), (1, 0)]);
    let mut rng = seeded_rng(3);
    let trace = forward_sequence(&s, &p, &cfg, Mode::Train(&mut rng)).unwrap();
    let dy = vec![vec![0.7, -1.2, 0.3], vec![0.0; 3]];
    let g = backward_sequence(&trace, &dy, &p).unwrap();
    let y = &trace.outputs[0];
    for k in 0..3 {
        let expected = dy[0][k] * y[k] * (1.0 - y[k]);
        assert!((g.b_y()[k] - expected).abs() < 1e-15);
    }
}

#[test]
fn backward_rejects_inference_traces() {
    let cfg = small_cfg(CellKind::Lstm, 2, 0.0);
    let p = init_params(&cfg, 2).unwrap();
    let s = seq(&[(0, 1), (1, 0)]);
    let trace = forward_sequence(&s, &p, &cfg, Mode::Infer).unwrap();
    assert!(backward_sequence(&trace, &vec![vec![0.0; 2]; 2], &p).is_err());
}

/// Central finite differences of `Σ_t g_t · y_t`, replaying the same dropout
/// masks on every evaluation.
fn fd_oracle(s: &InteractionSequence, p: &Params, cfg: &ModelConfig, seeds: &[Vec<f64>], mask_seed: u64) -> Vec<f64> {
    let eps = 1e-5;
    let objective = |q: &Params| {
        let mut rng = seeded_rng(mask_seed);
        let tr = forward_sequence(s, q, cfg, Mode::Train(&mut rng)).unwrap();
        tr.outputs
            .iter()
            .zip(seeds)
            .map(|(y, g)| y.iter().zip(g).map(|(a, b)| a * b).sum::<f64>())
            .sum::<f64>()
    };
    let base = p.to_flat();
    (0..base.len())
        .map(|k| {
            let mut plus = p.clone();
            plus.set_flat(k, base[k] + eps);
            let mut minus = p.clone();
            minus.set_flat(k, base[k] - eps);
            (objective(&plus) - objective(&minus)) / (2.0 * eps)
        })
        .collect()
}

#[test]
fn bptt_matches_finite_differences() {
    for kind in [CellKind::Lstm, CellKind::Vanilla] {
        for (encoding, dropout) in [(Encoding::Compressed, 0.0), (Encoding::Concat, 0.5)] {
            let cfg = ModelConfig {
                encoding,
                ..small_cfg(kind, 4, dropout)
            };
            let p = init_params(&cfg, 3).unwrap();
            let s = seq(&[(0, 1), (2, 0), (1, 1), (2, 1), (0, 0)]);
            let mut g_rng = seeded_rng(99);
            let seeds: Vec<Vec<f64>> = (0..5).map(|_| (0..3).map(|_| g_rng.random::<f64>() * 2.0 - 1.0).collect()).collect();

            let mut rng = seeded_rng(7);
            let trace = forward_sequence(&s, &p, &cfg, Mode::Train(&mut rng)).unwrap();
            let analytic = backward_sequence(&trace, &seeds, &p).unwrap().to_flat();
            let numeric = fd_oracle(&s, &p, &cfg, &seeds, 7);
            let worst = analytic
                .iter()
                .zip(&numeric)
                .map(|(a, n)| (a - n).abs() / a.abs().max(1.0))
                .fold(0.0, f64::max);
            assert!(worst < 1e-4, "{kind} {encoding} dropout {dropout}: {worst}");
        }
    }
}

/// Relabelling skills by a permutation and permuting the parameters that
/// touch skill indices permutes the outputs the same way.
#[test]
fn relabeling_equivariance() {
    let m = 4;
    let perm = [2usize, 0, 3, 1];
    let cfg = small_cfg(CellKind::Lstm, 3, 0.0);
    let p = init_params(&cfg, m).unwrap();
    let Params::Lstm(lp) = &p else { unreachable!() };

    let mut q = lp.clone();
    for (w_new, w_old) in [
        (&mut q.w_f, &lp.w_f),
        (&mut q.w_i, &lp.w_i),
        (&mut q.w_o, &lp.w_o),
        (&mut q.w_c, &lp.w_c),
    ] {
        for r in 0..w_old.rows() {
            for k in 0..m {
                for a in 0..2 {
                    w_new.set(r, perm[k] + a * m, w_old.get(r, k + a * m));
                }
            }
        }
    }
    for k in 0..m {
        for c in 0..lp.hidden {
            q.w_hy.set(perm[k], c, lp.w_hy.get(k, c));
        }
        q.b_y[perm[k]] = lp.b_y[k];
    }
    let q = Params::Lstm(q);

    let s = seq(&[(0, 1), (3, 0), (1, 1), (2, 0), (0, 0)]);
    let relabeled = InteractionSequence::new(
        s.questions().iter().map(|&x| perm[x]).collect(),
        s.answers().to_vec(),
    )
    .unwrap();
    let a = forward_sequence(&s, &p, &cfg, Mode::Infer).unwrap();
    let b = forward_sequence(&relabeled, &q, &cfg, Mode::Infer).unwrap();
    for t in 0..s.len() {
        for k in 0..m {
            assert!((a.outputs[t][k] - b.outputs[t][perm[k]]).abs() < 1e-14);
        }
    }
}

#[test]
fn params_arithmetic() {
    let cfg = small_cfg(CellKind::Vanilla, 3, 0.0);
    let mut p = init_params(&cfg, 2).unwrap();
    let before = p.to_flat();
    let g = p.clone();
    p.add_scaled(&g, -1.0).unwrap();
    assert!(p.to_flat().iter().all(|&v| v == 0.0));
    assert_eq!(g.to_flat(), before);
    let other = Params::zeros(CellKind::Lstm, 2, 3);
    assert!(p.add_scaled(&other, 1.0).is_err());
    assert_eq!(p.num_params(), 3 * 4 + 3 * 3 + 3 + 2 * 3 + 2);
}
