//! Evaluation measures: next-step and current-step AUC, waviness, the m1/m2
//! consistency scores, and ordered-pair correctness matrices.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, InteractionSequence};
use crate::error::{DktError, Result};
use crate::model::PredictionTrace;
use crate::objective::{check_aligned, waviness};

/// Mann–Whitney AUC with tie-averaged ranks.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(DktError::shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(DktError::contract(format!("non-finite score {s}")));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(DktError::UndefinedAuc(format!(
            "{n_pos} positives and {n_neg} negatives"
        )));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Ranks are 1-based; a tie group spanning positions [i, j) gets (i+1+j)/2.
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let pos_in_group = order[i..j].iter().filter(|&&k| labels[k]).count();
        pos_rank_sum += avg_rank * pos_in_group as f64;
        i = j;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

fn pool(traces: &[PredictionTrace], seqs: &[InteractionSequence], lookahead: usize) -> Result<(Vec<f64>, Vec<bool>)> {
    let (n, _) = check_aligned(traces, seqs)?;
    let mut scores = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (tr, s) in traces.iter().zip(seqs) {
        for t in 0..s.len() - 1 {
            scores.push(tr.outputs[t][s.question(t + lookahead)]);
            labels.push(s.answer(t + lookahead));
        }
    }
    Ok((scores, labels))
}

/// AUC of `y_t·δ(q_{t+1})` against `a_{t+1}`.
pub fn auc_next(traces: &[PredictionTrace], seqs: &[InteractionSequence]) -> Result<f64> {
    let (s, l) = pool(traces, seqs, 1)?;
    auc(&s, &l)
}

/// AUC of `y_t·δ(q_t)` against `a_t` for every step that has a successor.
pub fn auc_current(traces: &[PredictionTrace], seqs: &[InteractionSequence]) -> Result<f64> {
    let (s, l) = pool(traces, seqs, 0)?;
    auc(&s, &l)
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

/// `(m1, m2)`: agreement between the observed answer and the direction
/// (m1) or signed size (m2) of the change in that skill's prediction.
pub fn consistency_m(traces: &[PredictionTrace], seqs: &[InteractionSequence]) -> Result<(f64, f64)> {
    let (n, _) = check_aligned(traces, seqs)?;
    let mut m1 = 0.0;
    let mut m2 = 0.0;
    for (tr, s) in traces.iter().zip(seqs) {
        for t in 1..s.len() {
            let q = s.question(t);
            let delta = tr.outputs[t][q] - tr.outputs[t - 1][q];
            let dir = if s.answer(t) { 1.0 } else { -1.0 };
            m1 += dir * sign(delta);
            m2 += dir * delta;
        }
    }
    Ok((m1 / n as f64, m2 / n as f64))
}

/// The six evaluation measures over a pool of students.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc_n: f64,
    pub auc_c: f64,
    pub w1: f64,
    pub w2: f64,
    pub m1: f64,
    pub m2: f64,
    pub n_pairs_n: usize,
    pub n_pairs_c: usize,
}

const REAL_KEYS: [&str; 6] = ["auc_n", "auc_c", "w1", "w2", "m1", "m2"];

impl MetricsReport {
    /// `auc_n + auc_c + m1 + m2`, the model-selection score.
    pub fn selection_score(&self) -> f64 {
        self.auc_n + self.auc_c + self.m1 + self.m2
    }

    fn reals(&self) -> [f64; 6] {
        [self.auc_n, self.auc_c, self.w1, self.w2, self.m1, self.m2]
    }

    /// Field-wise arithmetic mean; pair counts are summed.
    pub fn mean(reports: &[MetricsReport]) -> Result<MetricsReport> {
        if reports.is_empty() {
            return Err(DktError::contract("mean of zero reports"));
        }
        let k = reports.len() as f64;
        let mut acc = [0.0; 6];
        for r in reports {
            for (a, v) in acc.iter_mut().zip(r.reals()) {
                *a += v;
            }
        }
        Ok(MetricsReport {
            auc_n: acc[0] / k,
            auc_c: acc[1] / k,
            w1: acc[2] / k,
            w2: acc[3] / k,
            m1: acc[4] / k,
            m2: acc[5] / k,
            n_pairs_n: reports.iter().map(|r| r.n_pairs_n).sum(),
            n_pairs_c: reports.iter().map(|r| r.n_pairs_c).sum(),
        })
    }

    /// One `key=value` line per field; floats in shortest round-trip form.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for (k, v) in REAL_KEYS.iter().zip(self.reals()) {
            out.push_str(&format!("{k}={v:?}\n"));
        }
        out.push_str(&format!("n_pairs_n={}\nn_pairs_c={}\n", self.n_pairs_n, self.n_pairs_c));
        out
    }

    pub fn from_kv(text: &str) -> Result<MetricsReport> {
        let mut reals = [None; 6];
        let mut counts = [None; 2];
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| DktError::parse(lineno + 1, "expected key=value"))?;
            let (k, v) = (k.trim(), v.trim());
            if let Some(i) = REAL_KEYS.iter().position(|&r| r == k) {
                reals[i] = Some(
                    v.parse::<f64>()
                        .map_err(|e| DktError::parse(lineno + 1, format!("{k}: {e}")))?,
                );
            } else if let Some(i) = ["n_pairs_n", "n_pairs_c"].iter().position(|&r| r == k) {
                counts[i] = Some(
                    v.parse::<usize>()
                        .map_err(|e| DktError::parse(lineno + 1, format!("{k}: {e}")))?,
                );
            }
        }
        let get = |i: usize| reals[i].ok_or_else(|| DktError::parse(0, format!("missing key {}", REAL_KEYS[i])));
        Ok(MetricsReport {
            auc_n: get(0)?,
            auc_c: get(1)?,
            w1: get(2)?,
            w2: get(3)?,
            m1: get(4)?,
            m2: get(5)?,
            n_pairs_n: counts[0].unwrap_or(0),
            n_pairs_c: counts[1].unwrap_or(0),
        })
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "auc_n={:.4} auc_c={:.4} w1={:.4} w2={:.4} m1={:.4} m2={:.4}",
            self.auc_n, self.auc_c, self.w1, self.w2, self.m1, self.m2
        )
    }
}

pub fn full_report(traces: &[PredictionTrace], seqs: &[InteractionSequence]) -> Result<MetricsReport> {
    let (n, _) = check_aligned(traces, seqs)?;
    let (w1, w2) = waviness(traces)?;
    let (m1, m2) = consistency_m(traces, seqs)?;
    Ok(MetricsReport {
        auc_n: auc_next(traces, seqs)?,
        auc_c: auc_current(traces, seqs)?,
        w1,
        w2,
        m1,
        m2,
        n_pairs_n: n,
        n_pairs_c: n,
    })
}

/// Answer-pair counts for consecutive attempts at `skill_a` then `skill_b`.
/// `counts[i][j]`: `i` indexes the first answer, `j` the second; index 0 is
/// correct, 1 incorrect.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectnessMatrix {
    pub skill_a: usize,
    pub skill_b: usize,
    pub counts: [[u64; 2]; 2],
}

fn idx(correct: bool) -> usize {
    if correct {
        0
    } else {
        1
    }
}

impl CorrectnessMatrix {
    pub fn get(&self, current_correct: bool, next_correct: bool) -> u64 {
        self.counts[idx(current_correct)][idx(next_correct)]
    }

    pub fn row_total(&self, current_correct: bool) -> u64 {
        self.counts[idx(current_correct)].iter().sum()
    }

    pub fn col_total(&self, next_correct: bool) -> u64 {
        self.counts.iter().map(|r| r[idx(next_correct)]).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

impl fmt::Display for CorrectnessMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w = 10;
        writeln!(f, "{:>22} next = s{}", "", self.skill_b)?;
        writeln!(f, "{:>22}{:>w$}{:>w$}{:>w$}", "", "correct", "incorrect", "total")?;
        for (label, c) in [("correct", true), ("incorrect", false)] {
            let head = if c {
                format!("current = s{}", self.skill_a)
            } else {
                String::new()
            };
            writeln!(
                f,
                "{head:>12}{label:>10}{:>w$}{:>w$}{:>w$}",
                self.get(c, true),
                self.get(c, false),
                self.row_total(c)
            )?;
        }
        writeln!(
            f,
            "{:>22}{:>w$}{:>w$}{:>w$}",
            "total",
            self.col_total(true),
            self.col_total(false),
            self.total()
        )
    }
}

pub fn correctness_matrix(d: &Dataset, skill_a: usize, skill_b: usize) -> Result<CorrectnessMatrix> {
    let m = d.num_skills();
    if skill_a >= m || skill_b >= m {
        return Err(DktError::contract(format!(
            "skills ({skill_a}, {skill_b}) outside [0, {m})"
        )));
    }
    let mut cm = CorrectnessMatrix {
        skill_a,
        skill_b,
        counts: [[0; 2]; 2],
    };
    for s in d.sequences() {
        for t in 0..s.len() - 1 {
            if s.question(t) == skill_a && s.question(t + 1) == skill_b {
                cm.counts[idx(s.answer(t))][idx(s.answer(t + 1))] += 1;
            }
        }
    }
    Ok(cm)
}
