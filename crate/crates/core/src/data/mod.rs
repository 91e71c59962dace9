//! Interaction data: sequences, datasets, input encoding and splitting.

mod simulate;
mod triplet;

pub use simulate::{exercise_difficulties, generate_simulated, irt_probability, SimConfig};
pub use triplet::{parse_triplet_log, read_triplet_file, serialize_triplet_log, ParsedLog};

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DktError, Result};

/// One student's ordered `(question, correct?)` interactions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionSequence {
    questions: Vec<usize>,
    answers: Vec<bool>,
}

impl InteractionSequence {
    /// Requires equal lengths and at least two interactions.
    pub fn new(questions: Vec<usize>, answers: Vec<bool>) -> Result<Self> {
        if questions.len() != answers.len() {
            return Err(DktError::contract(format!(
                "{} questions but {} answers",
                questions.len(),
                answers.len()
            )));
        }
        if questions.len() < 2 {
            return Err(DktError::contract(
                "a sequence needs at least 2 interactions",
            ));
        }
        Ok(InteractionSequence { questions, answers })
    }

    /// Convenience constructor taking answers as 0/1 integers.
    pub fn from_pairs(pairs: &[(usize, u8)]) -> Result<Self> {
        let mut questions = Vec::with_capacity(pairs.len());
        let mut answers = Vec::with_capacity(pairs.len());
        for &(q, a) in pairs {
            if a > 1 {
                return Err(DktError::contract(format!("answer {a} is not 0 or 1")));
            }
            questions.push(q);
            answers.push(a == 1);
        }
        InteractionSequence::new(questions, answers)
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    /// Always false: construction rejects sequences shorter than 2.
    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    pub fn questions(&self) -> &[usize] {
        &self.questions
    }

    pub fn answers(&self) -> &[bool] {
        &self.answers
    }

    pub fn question(&self, t: usize) -> usize {
        self.questions[t]
    }

    pub fn answer(&self, t: usize) -> bool {
        self.answers[t]
    }

    pub fn max_question(&self) -> usize {
        self.questions.iter().copied().max().unwrap_or(0)
    }

    /// Number of next-step prediction terms this sequence contributes.
    pub fn num_terms(&self) -> usize {
        self.len() - 1
    }
}

/// A collection of sequences over a shared skill space of size `num_skills`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    sequences: Vec<InteractionSequence>,
    num_skills: usize,
}

impl Dataset {
    /// Builds a dataset with `num_skills` inferred as one past the largest id.
    pub fn from_sequences(sequences: Vec<InteractionSequence>) -> Result<Self> {
        let m = sequences
            .iter()
            .map(|s| s.max_question() + 1)
            .max()
            .ok_or_else(|| DktError::contract("cannot infer the skill count of an empty dataset"))?;
        Ok(Dataset {
            sequences,
            num_skills: m,
        })
    }

    /// Builds a dataset with an explicitly declared skill count.
    pub fn with_num_skills(sequences: Vec<InteractionSequence>, num_skills: usize) -> Result<Self> {
        if num_skills == 0 {
            return Err(DktError::contract("num_skills must be positive"));
        }
        if let Some(s) = sequences.iter().find(|s| s.max_question() >= num_skills) {
            return Err(DktError::contract(format!(
                "question id {} is outside [0, {num_skills})",
                s.max_question()
            )));
        }
        Ok(Dataset {
            sequences,
            num_skills,
        })
    }

    pub fn sequences(&self) -> &[InteractionSequence] {
        &self.sequences
    }

    pub fn num_skills(&self) -> usize {
        self.num_skills
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn num_interactions(&self) -> usize {
        self.sequences.iter().map(InteractionSequence::len).sum()
    }

    pub fn mean_correctness(&self) -> f64 {
        let correct: usize = self
            .sequences
            .iter()
            .map(|s| s.answers().iter().filter(|&&a| a).count())
            .sum();
        correct as f64 / self.num_interactions().max(1) as f64
    }

    /// Sub-dataset of the given sequence indices, keeping the skill count.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            sequences: indices.iter().map(|&i| self.sequences[i].clone()).collect(),
            num_skills: self.num_skills,
        }
    }
}

/// How an interaction `(q, a)` becomes a `2M`-dimensional input.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    /// A single one at `q + a·M`.
    #[default]
    Compressed,
    /// A one at `q`, plus a one at `M + q` when the answer is correct.
    Concat,
}

impl fmt::Display for Encoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Encoding::Compressed => f.write_str("compressed"),
            Encoding::Concat => f.write_str("concat"),
        }
    }
}

impl FromStr for Encoding {
    type Err = DktError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "compressed" => Ok(Encoding::Compressed),
            "concat" => Ok(Encoding::Concat),
            other => Err(DktError::contract(format!("unknown encoding '{other}'"))),
        }
    }
}

/// Nonzero input coordinates (each with value 1) for one interaction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ActiveInputs {
    idx: [usize; 2],
    len: usize,
}

impl ActiveInputs {
    pub(crate) fn from_parts(idx: [usize; 2], len: usize) -> Self {
        ActiveInputs { idx, len }
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.idx[..self.len]
    }
}

/// Sparse form of [`encode_input`].
pub fn active_inputs(q: usize, correct: bool, num_skills: usize, scheme: Encoding) -> Result<ActiveInputs> {
    if q >= num_skills {
        return Err(DktError::contract(format!(
            "question id {q} is outside [0, {num_skills})"
        )));
    }
    Ok(match (scheme, correct) {
        (Encoding::Compressed, false) => ActiveInputs { idx: [q, 0], len: 1 },
        (Encoding::Compressed, true) => ActiveInputs {
            idx: [q + num_skills, 0],
            len: 1,
        },
        (Encoding::Concat, false) => ActiveInputs { idx: [q, 0], len: 1 },
        (Encoding::Concat, true) => ActiveInputs {
            idx: [q, q + num_skills],
            len: 2,
        },
    })
}

/// Dense `2M` input vector for one interaction.
pub fn encode_input(q: usize, correct: bool, num_skills: usize, scheme: Encoding) -> Result<Vec<f64>> {
    let active = active_inputs(q, correct, num_skills, scheme)?;
    let mut x = vec![0.0; 2 * num_skills];
    for &i in active.as_slice() {
        x[i] = 1.0;
    }
    Ok(x)
}

fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    idx
}

/// Student-level random split into `(train, test)`.
pub fn split_train_test(d: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DktError::contract(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let n = d.len();
    if n < 2 {
        return Err(DktError::contract(format!(
            "cannot split a dataset of {n} sequences"
        )));
    }
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    let idx = shuffled_indices(n, seed);
    let mut test: Vec<usize> = idx[..n_test].to_vec();
    let mut train: Vec<usize> = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((d.subset(&train), d.subset(&test)))
}

/// `k` (train, validation) pairs whose validation folds partition `d`.
pub fn kfold(d: &Dataset, k: usize, seed: u64) -> Result<Vec<(Dataset, Dataset)>> {
    if k < 2 {
        return Err(DktError::contract(format!("k-fold needs k >= 2, got {k}")));
    }
    if k > d.len() {
        return Err(DktError::contract(format!(
            "{k} folds requested for {} sequences",
            d.len()
        )));
    }
    let n = d.len();
    let idx = shuffled_indices(n, seed);
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut val: Vec<usize> = idx[start..start + size].to_vec();
        let mut train: Vec<usize> = idx[..start].iter().chain(&idx[start + size..]).copied().collect();
        val.sort_unstable();
        train.sort_unstable();
        folds.push((d.subset(&train), d.subset(&val)));
        start += size;
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy(n: usize) -> Dataset {
        let seqs = (0..n)
            .map(|i| InteractionSequence::from_pairs(&[(i % 4, 1), ((i + 1) % 4, (i % 2) as u8), (i % 3, 0)]).unwrap())
            .collect();
        Dataset::from_sequences(seqs).unwrap()
    }

    #[test]
    fn sequence_contract() {
        assert!(InteractionSequence::from_pairs(&[(1, 1)]).is_err());
        assert!(InteractionSequence::from_pairs(&[(1, 1), (2, 2)]).is_err());
        assert!(InteractionSequence::new(vec![1, 2], vec![true]).is_err());
        let s = InteractionSequence::from_pairs(&[(1, 1), (2, 0)]).unwrap();
        assert_eq!(s.num_terms(), 1);
    }

    #[test]
    fn declared_skill_count_must_cover_ids() {
        let s = InteractionSequence::from_pairs(&[(4, 1), (2, 0)]).unwrap();
        assert!(Dataset::with_num_skills(vec![s.clone()], 4).is_err());
        assert_eq!(Dataset::with_num_skills(vec![s.clone()], 9).unwrap().num_skills(), 9);
        assert_eq!(Dataset::from_sequences(vec![s]).unwrap().num_skills(), 5);
    }

    #[test]
    fn encoding_examples() {
        let c0 = encode_input(1, false, 3, Encoding::Compressed).unwrap();
        assert_eq!(c0, vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let c1 = encode_input(1, true, 3, Encoding::Compressed).unwrap();
        assert_eq!(c1, vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let k1 = encode_input(1, true, 3, Encoding::Concat).unwrap();
        assert_eq!(k1, vec![0.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
        let k0 = encode_input(1, false, 3, Encoding::Concat).unwrap();
        assert_eq!(k0, vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(encode_input(3, true, 3, Encoding::Concat).is_err());
    }

    #[test]
    fn split_sizes_and_partition() {
        let d = toy(10);
        let (train, test) = split_train_test(&d, 0.2, 11).unwrap();
        assert_eq!((train.len(), test.len()), (8, 2));
        let (train2, test2) = split_train_test(&d, 0.2, 11).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);

        let mut all: Vec<_> = train.sequences().iter().chain(test.sequences()).cloned().collect();
        let mut orig = d.sequences().to_vec();
        let key = |s: &InteractionSequence| (s.questions().to_vec(), s.answers().to_vec());
        all.sort_by_key(key);
        orig.sort_by_key(key);
        assert_eq!(all, orig);

        assert!(split_train_test(&toy(1), 0.2, 0).is_err());
        assert!(split_train_test(&d, 1.0, 0).is_err());
    }

    #[test]
    fn kfold_partition_laws() {
        let n = 10;
        // Distinct sequences so membership can be tracked by content.
        let seqs: Vec<_> = (0..n)
            .map(|i| InteractionSequence::from_pairs(&[(i, 1), (i, 0)]).unwrap())
            .collect();
        let d = Dataset::from_sequences(seqs).unwrap();
        let folds = kfold(&d, 5, 3).unwrap();
        assert_eq!(folds.len(), 5);
        let mut seen_val = vec![0usize; n];
        let mut seen_train = vec![0usize; n];
        for (train, val) in &folds {
            assert_eq!(val.len(), 2);
            assert_eq!(train.len(), 8);
            for s in val.sequences() {
                seen_val[s.question(0)] += 1;
            }
            for s in train.sequences() {
                seen_train[s.question(0)] += 1;
            }
        }
        assert!(seen_val.iter().all(|&c| c == 1));
        assert!(seen_train.iter().all(|&c| c == 4));
        assert_eq!(folds, kfold(&d, 5, 3).unwrap());
        assert!(kfold(&d, 11, 3).is_err());
        assert!(kfold(&d, 1, 3).is_err());
    }

    proptest! {
        #[test]
        fn encoding_nonzero_counts(m in 1usize..20, q_frac in 0.0f64..1.0, a: bool) {
            let q = ((m as f64 * q_frac) as usize).min(m - 1);
            let c = encode_input(q, a, m, Encoding::Compressed).unwrap();
            prop_assert_eq!(c.iter().filter(|&&v| v != 0.0).count(), 1);
            let k = encode_input(q, a, m, Encoding::Concat).unwrap();
            prop_assert_eq!(k.iter().filter(|&&v| v != 0.0).count(), 1 + usize::from(a));
        }

        #[test]
        fn kfold_sizes_balanced(n in 2usize..40, k in 2usize..8, seed: u64) {
            prop_assume!(k <= n);
            let d = toy(n);
            let folds = kfold(&d, k, seed).unwrap();
            let sizes: Vec<usize> = folds.iter().map(|(_, v)| v.len()).collect();
            prop_assert_eq!(sizes.iter().sum::<usize>(), n);
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }
}
