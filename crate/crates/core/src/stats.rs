//! Out-of-bag bookkeeping and the empirical quantities the bounds consume.
//!
//! Each tree `i` is evaluated on a set `E_i` that depends on the mode:
//!
//! | mode           | `E_i`           | pair set for `(i, j)`        |
//! |----------------|-----------------|------------------------------|
//! | `OobOnly`      | `V_i`           | `V_i ∩ V_j`                  |
//! | `OobPlusVal`   | `V_i ∪ V̄`       | `(V_i ∩ V_j) ∪ V̄`            |
//! | `ValOnly`      | `V̄`             | `V̄`                          |
//!
//! where `V_i` holds the training rows missing from tree `i`'s bootstrap
//! sample and `V̄` is a separate validation set. Set membership is kept as
//! bitsets so the `m (m - 1) / 2` pair counts are popcounts.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::forest::{Ensemble, VoteMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    OobOnly,
    OobPlusVal,
    ValOnly,
}

impl EvalMode {
    pub fn needs_validation(self) -> bool {
        !matches!(self, EvalMode::OobOnly)
    }

    fn uses_oob(self) -> bool {
        !matches!(self, EvalMode::ValOnly)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct BitSet {
    words: Vec<u64>,
}

impl BitSet {
    fn from_fn(n: usize, f: impl Fn(usize) -> bool) -> Self {
        let mut words = vec![0u64; n.div_ceil(64)];
        for i in 0..n {
            if f(i) {
                words[i / 64] |= 1 << (i % 64);
            }
        }
        BitSet { words }
    }

    fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    fn and_count(&self, other: &BitSet) -> usize {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }
}

/// Training rows absent from each tree's bootstrap sample (`V_i`), in
/// ascending order. An empty `V_i` is a configuration error.
pub fn oob_sets(ens: &Ensemble, n_train: usize) -> Result<Vec<Vec<usize>>> {
    ens.bootstraps()
        .iter()
        .enumerate()
        .map(|(i, boot)| {
            let mut in_bag = vec![false; n_train];
            for &r in boot {
                in_bag[r as usize] = true;
            }
            let v: Vec<usize> = (0..n_train).filter(|&r| !in_bag[r]).collect();
            if v.is_empty() {
                Err(Error::EmptyEvalSet { tree: i })
            } else {
                Ok(v)
            }
        })
        .collect()
}

/// Per-voter predictions on the training set (with out-of-bag masks) and,
/// optionally, on a validation set.
#[derive(Debug, Clone)]
pub struct Evaluation {
    train_votes: VoteMatrix,
    train_labels: Vec<i8>,
    oob_rows: Vec<Vec<usize>>,
    oob: Vec<BitSet>,
    train_err: Vec<BitSet>,
    train_pos: Vec<BitSet>,
    validation: Option<Validation>,
}

#[derive(Debug, Clone)]
struct Validation {
    votes: VoteMatrix,
    labels: Vec<i8>,
    err: Vec<BitSet>,
    pos: Vec<BitSet>,
}

impl Validation {
    fn new(votes: VoteMatrix, labels: Vec<i8>) -> Self {
        let n = labels.len();
        let err = (0..votes.n_voters())
            .map(|i| BitSet::from_fn(n, |r| votes.get(i, r) != labels[r]))
            .collect();
        let pos = (0..votes.n_voters())
            .map(|i| BitSet::from_fn(n, |r| votes.get(i, r) > 0))
            .collect();
        Validation {
            votes,
            labels,
            err,
            pos,
        }
    }
}

impl Evaluation {
    /// Predicts every tree on `train` (and `validation`) and records each
    /// tree's out-of-bag rows.
    pub fn new(
        ens: &Ensemble,
        train: &Dataset,
        validation: Option<&Dataset>,
        exec: Exec,
    ) -> Result<Self> {
        let oob_rows = oob_sets(ens, train.len())?;
        let train_votes = ens.votes(train, exec);
        let val = validation.map(|v| (ens.votes(v, exec), v.labels().to_vec()));
        Self::from_votes(train_votes, train.labels().to_vec(), oob_rows, val)
    }

    /// Builds an evaluation from precomputed predictions. `oob_rows[i]` lists
    /// the training rows tree `i` did not see.
    pub fn from_votes(
        train_votes: VoteMatrix,
        train_labels: Vec<i8>,
        oob_rows: Vec<Vec<usize>>,
        validation: Option<(VoteMatrix, Vec<i8>)>,
    ) -> Result<Self> {
        let m = train_votes.n_voters();
        let n = train_labels.len();
        if train_votes.n_rows() != n || oob_rows.len() != m {
            return Err(Error::InvalidArgument(
                "vote matrix does not match labels or out-of-bag sets".into(),
            ));
        }
        if let Some((v, l)) = &validation {
            if v.n_voters() != m || v.n_rows() != l.len() {
                return Err(Error::InvalidArgument(
                    "validation votes do not match the ensemble".into(),
                ));
            }
        }
        let oob = oob_rows
            .iter()
            .map(|rows| {
                let mut mask = vec![false; n];
                for &r in rows {
                    mask[r] = true;
                }
                BitSet::from_fn(n, |r| mask[r])
            })
            .collect();
        let train_err = (0..m)
            .map(|i| BitSet::from_fn(n, |r| train_votes.get(i, r) != train_labels[r]))
            .collect();
        let train_pos = (0..m)
            .map(|i| BitSet::from_fn(n, |r| train_votes.get(i, r) > 0))
            .collect();
        Ok(Evaluation {
            train_votes,
            train_labels,
            oob_rows,
            oob,
            train_err,
            train_pos,
            validation: validation.map(|(v, l)| Validation::new(v, l)),
        })
    }

    pub fn n_voters(&self) -> usize {
        self.train_votes.n_voters()
    }

    pub fn n_train(&self) -> usize {
        self.train_labels.len()
    }

    pub fn n_validation(&self) -> Option<usize> {
        self.validation.as_ref().map(|v| v.labels.len())
    }

    pub fn oob_rows(&self) -> &[Vec<usize>] {
        &self.oob_rows
    }

    pub fn train_votes(&self) -> &VoteMatrix {
        &self.train_votes
    }

    pub fn train_labels(&self) -> &[i8] {
        &self.train_labels
    }

    /// Validation predictions and labels, when a validation set was given.
    pub fn validation(&self) -> Option<(&VoteMatrix, &[i8])> {
        self.validation.as_ref().map(|v| (&v.votes, v.labels.as_slice()))
    }

    fn validation_for(&self, mode: EvalMode) -> Result<Option<&Validation>> {
        match (mode.needs_validation(), &self.validation) {
            (false, _) => Ok(None),
            (true, Some(v)) if !v.labels.is_empty() => Ok(Some(v)),
            (true, _) => Err(Error::Config(format!(
                "evaluation mode {mode:?} needs a nonempty validation set"
            ))),
        }
    }

    /// Out-of-bag majority vote: every training row is voted on by the
    /// trees that did not see it. Weights may be signed (a negative weight
    /// votes for the tree's complement). Rows no tree left out are skipped.
    pub fn oob_mv_estimate(&self, weights: &[f64]) -> OobEstimate {
        assert_eq!(weights.len(), self.n_voters());
        let n = self.n_train();
        let mut score = vec![0.0f64; n];
        let mut covered = vec![false; n];
        for (i, rows) in self.oob_rows.iter().enumerate() {
            let w = weights[i];
            for &r in rows {
                covered[r] = true;
                score[r] += w * f64::from(self.train_votes.get(i, r));
            }
        }
        let mut wrong = 0usize;
        let mut n_covered = 0usize;
        for r in 0..n {
            if !covered[r] {
                continue;
            }
            n_covered += 1;
            let pred = if score[r] >= 0.0 { 1 } else { -1 };
            if pred != self.train_labels[r] {
                wrong += 1;
            }
        }
        if n_covered < n {
            warn!(
                "out-of-bag estimate covers {n_covered} of {n} training rows; uncovered rows skipped"
            );
        }
        OobEstimate {
            loss: if n_covered == 0 {
                0.0
            } else {
                wrong as f64 / n_covered as f64
            },
            covered: n_covered,
            total: n,
        }
    }

    /// Majority-vote loss on the validation set, if present.
    pub fn validation_mv_loss(&self, weights: &[f64]) -> Option<f64> {
        self.validation
            .as_ref()
            .map(|v| v.votes.mv_loss(weights, &v.labels))
    }

    /// Per-tree losses, pairwise disagreement and joint error, and the
    /// effective sample sizes for `mode`. `weights` only enters the stored
    /// out-of-bag majority-vote estimate.
    pub fn statistics(&self, mode: EvalMode, weights: &[f64], exec: Exec) -> Result<OobStatistics> {
        let m = self.n_voters();
        let val = self.validation_for(mode)?;
        let n_val = val.map_or(0, |v| v.labels.len());
        let oob_on = mode.uses_oob();

        let mut per_tree_loss = Vec::with_capacity(m);
        let mut per_tree_count = Vec::with_capacity(m);
        for i in 0..m {
            let (mut count, mut errs) = (0, 0);
            if oob_on {
                count += self.oob[i].count();
                errs += self.oob[i].and_count(&self.train_err[i]);
            }
            if let Some(v) = val {
                count += n_val;
                errs += v.err[i].count();
            }
            if count == 0 {
                return Err(Error::EmptyEvalSet { tree: i });
            }
            per_tree_loss.push(errs as f64 / count as f64);
            per_tree_count.push(count);
        }

        // Row i of the upper triangle: (count, disagreements, joint errors).
        let upper: Vec<Vec<(usize, usize, usize)>> = exec.map_range(m, |i| {
            let mut row = Vec::with_capacity(m - i - 1);
            for j in i + 1..m {
                let (mut c, mut dis, mut joint) = (0, 0, 0);
                if oob_on {
                    let (a, b) = (&self.oob[i], &self.oob[j]);
                    for w in 0..a.words.len() {
                        let both = a.words[w] & b.words[w];
                        c += both.count_ones() as usize;
                        dis += (both & (self.train_pos[i].words[w] ^ self.train_pos[j].words[w]))
                            .count_ones() as usize;
                        joint += (both & self.train_err[i].words[w] & self.train_err[j].words[w])
                            .count_ones() as usize;
                    }
                }
                if let Some(v) = val {
                    c += n_val;
                    for w in 0..v.pos[i].words.len() {
                        dis += (v.pos[i].words[w] ^ v.pos[j].words[w]).count_ones() as usize;
                        joint += (v.err[i].words[w] & v.err[j].words[w]).count_ones() as usize;
                    }
                }
                row.push((c, dis, joint));
            }
            row
        });

        let mut disagreement = vec![0.0; m * m];
        let mut joint_error = vec![0.0; m * m];
        let mut pair_count = vec![0usize; m * m];
        let mut n_pair = usize::MAX;
        for i in 0..m {
            joint_error[i * m + i] = per_tree_loss[i];
            pair_count[i * m + i] = per_tree_count[i];
            for (k, &(c, dis, joint)) in upper[i].iter().enumerate() {
                let j = i + 1 + k;
                if c == 0 {
                    return Err(Error::EmptyPairSet { i, j });
                }
                let (d, e) = (dis as f64 / c as f64, joint as f64 / c as f64);
                disagreement[i * m + j] = d;
                disagreement[j * m + i] = d;
                joint_error[i * m + j] = e;
                joint_error[j * m + i] = e;
                pair_count[i * m + j] = c;
                pair_count[j * m + i] = c;
                n_pair = n_pair.min(c);
            }
        }
        let n_gibbs = *per_tree_count.iter().min().expect("at least one voter");
        if m == 1 {
            n_pair = n_gibbs;
        }

        Ok(OobStatistics {
            mode,
            n_voters: m,
            per_tree_loss,
            per_tree_count,
            disagreement,
            joint_error,
            pair_count,
            n_gibbs,
            n_pair,
            oob_mv_loss: self.oob_mv_estimate(weights).loss,
        })
    }
}

/// Out-of-bag majority-vote loss over the rows at least one tree left out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OobEstimate {
    pub loss: f64,
    pub covered: usize,
    pub total: usize,
}

/// Empirical per-voter and pairwise statistics under one evaluation mode.
/// Matrices are dense `m x m`, row-major and symmetric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OobStatistics {
    pub mode: EvalMode,
    pub n_voters: usize,
    pub per_tree_loss: Vec<f64>,
    pub per_tree_count: Vec<usize>,
    /// Zero on the diagonal.
    pub disagreement: Vec<f64>,
    /// Per-tree loss on the diagonal.
    pub joint_error: Vec<f64>,
    pub pair_count: Vec<usize>,
    /// `min_i |E_i|`.
    pub n_gibbs: usize,
    /// `min_{i != j} |E_i ∩ E_j|`; equals `n_gibbs` for a single voter.
    pub n_pair: usize,
    pub oob_mv_loss: f64,
}

impl OobStatistics {
    pub fn disagreement_at(&self, i: usize, j: usize) -> f64 {
        self.disagreement[i * self.n_voters + j]
    }

    pub fn joint_error_at(&self, i: usize, j: usize) -> f64 {
        self.joint_error[i * self.n_voters + j]
    }

    pub fn effective_sizes(&self) -> (usize, usize) {
        (self.n_gibbs, self.n_pair)
    }

    /// `sum_i rho_i L(h_i, E_i)`.
    pub fn gibbs_loss(&self, rho: &[f64]) -> f64 {
        assert_eq!(rho.len(), self.n_voters);
        rho.iter().zip(&self.per_tree_loss).map(|(r, l)| r * l).sum()
    }

    fn quadratic(&self, matrix: &[f64], rho: &[f64]) -> f64 {
        assert_eq!(rho.len(), self.n_voters);
        let m = self.n_voters;
        let mut total = 0.0;
        for (i, &ri) in rho.iter().enumerate() {
            if ri == 0.0 {
                continue;
            }
            let row = &matrix[i * m..(i + 1) * m];
            let inner: f64 = row.iter().zip(rho).map(|(a, r)| a * r).sum();
            total += ri * inner;
        }
        total
    }

    /// `d_rho = sum_ij rho_i rho_j d_ij`.
    pub fn disagreement_rho(&self, rho: &[f64]) -> f64 {
        self.quadratic(&self.disagreement, rho)
    }

    /// `e_rho = sum_ij rho_i rho_j e_ij`.
    pub fn joint_error_rho(&self, rho: &[f64]) -> f64 {
        self.quadratic(&self.joint_error, rho)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::{uniform, TreeModel};

    fn eval_val_only(train_votes: Vec<Vec<i8>>, labels: Vec<i8>) -> Evaluation {
        let m = train_votes.len();
        let n = labels.len();
        let votes = VoteMatrix::from_rows(train_votes);
        Evaluation::from_votes(
            VoteMatrix::from_rows(vec![vec![1; 1]; m]),
            vec![1],
            vec![vec![0]; m],
            Some((votes, labels)),
        )
        .inspect(|e| assert_eq!(e.n_validation(), Some(n)))
        .unwrap()
    }

    #[test]
    fn identical_and_antipodal_voters() {
        let labels = vec![1, -1, 1, 1, -1];
        let h = vec![1, 1, 1, -1, -1];
        let neg: Vec<i8> = h.iter().map(|v| -v).collect();
        let ev = eval_val_only(vec![h.clone(), h.clone(), neg], labels);
        let s = ev.statistics(EvalMode::ValOnly, &uniform(3), Exec::Sequential).unwrap();
        assert_eq!(s.per_tree_loss[0], 0.4);
        assert_eq!(s.disagreement_at(0, 1), 0.0);
        assert_eq!(s.joint_error_at(0, 1), 0.4);
        assert_eq!(s.disagreement_at(0, 2), 1.0);
        assert_eq!(s.joint_error_at(0, 2), 0.0);
        assert_eq!(s.effective_sizes(), (5, 5));
    }

    #[test]
    fn gibbs_loss_examples() {
        let labels = vec![1; 10];
        let tree = |wrong: usize| (0..10).map(|r| if r < wrong { -1 } else { 1 }).collect::<Vec<i8>>();
        let ev = eval_val_only(vec![tree(1), tree(2), tree(3)], labels.clone());
        let s = ev.statistics(EvalMode::ValOnly, &uniform(3), Exec::Sequential).unwrap();
        assert!((s.gibbs_loss(&uniform(3)) - 0.2).abs() < 1e-15);
        assert_eq!(s.gibbs_loss(&[0.0, 1.0, 0.0]), 0.2);

        let perfect = eval_val_only(vec![tree(0), tree(0)], labels);
        let s = perfect.statistics(EvalMode::ValOnly, &uniform(2), Exec::Sequential).unwrap();
        assert_eq!(s.gibbs_loss(&uniform(2)), 0.0);
    }

    #[test]
    fn forced_full_bootstrap_has_no_oob_rows() {
        let t = vec![TreeModel::leaf(1)];
        let ens = Ensemble::from_parts(t, vec![vec![0, 1, 2]], vec![1.0]).unwrap();
        assert!(matches!(oob_sets(&ens, 3), Err(Error::EmptyEvalSet { tree: 0 })));
    }

    #[test]
    fn disjoint_oob_sets_fail_pairwise() {
        let votes = VoteMatrix::from_rows(vec![vec![1, 1, 1, 1], vec![1, 1, 1, 1]]);
        let ev = Evaluation::from_votes(votes, vec![1, 1, -1, -1], vec![vec![0, 1], vec![2, 3]], None)
            .unwrap();
        let err = ev.statistics(EvalMode::OobOnly, &uniform(2), Exec::Sequential).unwrap_err();
        assert!(matches!(err, Error::EmptyPairSet { i: 0, j: 1 }));
        // Validation mode without a validation set is a configuration error.
        assert!(matches!(
            ev.statistics(EvalMode::ValOnly, &uniform(2), Exec::Sequential),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn modes_combine_oob_and_validation() {
        // Two voters, four training rows, two validation rows.
        let train = VoteMatrix::from_rows(vec![vec![1, -1, 1, 1], vec![1, 1, -1, 1]]);
        let val = VoteMatrix::from_rows(vec![vec![1, 1], vec![-1, 1]]);
        let ev = Evaluation::from_votes(
            train,
            vec![1, 1, 1, -1],
            vec![vec![0, 1, 3], vec![1, 2, 3]],
            Some((val, vec![1, -1])),
        )
        .unwrap();
        let w = uniform(2);
        let oob = ev.statistics(EvalMode::OobOnly, &w, Exec::Sequential).unwrap();
        // Tree 0 on rows {0,1,3}: wrong on 1 and 3.
        assert_eq!(oob.per_tree_loss[0], 2.0 / 3.0);
        // Tree 1 on rows {1,2,3}: wrong on 2 and 3.
        assert_eq!(oob.per_tree_loss[1], 2.0 / 3.0);
        // Shared rows {1,3}: disagree on 1, both wrong on 3.
        assert_eq!(oob.pair_count[1], 2);
        assert_eq!(oob.disagreement_at(0, 1), 0.5);
        assert_eq!(oob.joint_error_at(0, 1), 0.5);
        assert_eq!(oob.effective_sizes(), (3, 2));

        let both = ev.statistics(EvalMode::OobPlusVal, &w, Exec::Sequential).unwrap();
        // Validation: tree 0 wrong on row 1, tree 1 wrong on rows 0 and 1.
        assert_eq!(both.per_tree_loss[0], 3.0 / 5.0);
        assert_eq!(both.per_tree_loss[1], 4.0 / 5.0);
        assert_eq!(both.disagreement_at(0, 1), 2.0 / 4.0);
        assert_eq!(both.joint_error_at(0, 1), 2.0 / 4.0);
        assert_eq!(both.effective_sizes(), (5, 4));

        let val_only = ev.statistics(EvalMode::ValOnly, &w, Exec::Sequential).unwrap();
        assert_eq!(val_only.effective_sizes(), (2, 2));
        assert_eq!(val_only.disagreement_at(0, 1), 0.5);
    }

    #[test]
    fn oob_estimate_skips_uncovered_rows() {
        let train = VoteMatrix::from_rows(vec![vec![1, -1, -1]]);
        let ev = Evaluation::from_votes(train, vec![1, 1, -1], vec![vec![0, 1]], None).unwrap();
        let est = ev.oob_mv_estimate(&[1.0]);
        assert_eq!(est.covered, 2);
        assert_eq!(est.loss, 0.5);
        // m = 1: the estimate is the tree's out-of-bag loss.
        let s = ev.statistics(EvalMode::OobOnly, &[1.0], Exec::Sequential).unwrap();
        assert_eq!(s.oob_mv_loss, s.per_tree_loss[0]);
        assert_eq!(s.n_pair, s.n_gibbs);
    }
}
