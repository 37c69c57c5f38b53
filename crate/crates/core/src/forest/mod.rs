//! Bagged ensembles of CART trees and their weighted majority vote.

mod tree;

pub use tree::{train_tree, Node, SplitFeatures, TreeConfig, TreeModel};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::Exec;

/// Trees, the bootstrap multiset each was grown on, and the posterior
/// weights of the vote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    trees: Vec<TreeModel>,
    /// Sorted training-row indices drawn for each tree, with repetition.
    bootstraps: Vec<Vec<u32>>,
    weights: Vec<f64>,
}

impl Ensemble {
    /// Assembles an ensemble from parts. `weights` must be a probability
    /// vector of the same length as `trees`.
    pub fn from_parts(
        trees: Vec<TreeModel>,
        bootstraps: Vec<Vec<u32>>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        if trees.is_empty() {
            return Err(Error::InvalidArgument("an ensemble needs at least one tree".into()));
        }
        if bootstraps.len() != trees.len() {
            return Err(Error::InvalidArgument(
                "one bootstrap sample per tree is required".into(),
            ));
        }
        check_weights(&weights, trees.len())?;
        let bootstraps = bootstraps
            .into_iter()
            .map(|mut b| {
                b.sort_unstable();
                b
            })
            .collect();
        Ok(Ensemble {
            trees,
            bootstraps,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    pub fn trees(&self) -> &[TreeModel] {
        &self.trees
    }

    pub fn bootstraps(&self) -> &[Vec<u32>] {
        &self.bootstraps
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        check_weights(&weights, self.trees.len())?;
        self.weights = weights;
        Ok(())
    }

    /// `+1`/`-1` prediction of the weighted majority vote, ties to `+1`.
    pub fn mv_predict(&self, x: &[f64]) -> i8 {
        let s: f64 = self
            .trees
            .iter()
            .zip(&self.weights)
            .map(|(t, &w)| w * f64::from(t.predict(x)))
            .sum();
        if s >= 0.0 {
            1
        } else {
            -1
        }
    }

    /// Per-tree predictions on every row of `data`.
    pub fn votes(&self, data: &Dataset, exec: Exec) -> VoteMatrix {
        let n = data.len();
        let rows = exec.map_range(self.trees.len(), |i| {
            let t = &self.trees[i];
            (0..n).map(|r| t.predict(data.row(r))).collect::<Vec<i8>>()
        });
        VoteMatrix {
            n_voters: self.trees.len(),
            n_rows: n,
            votes: rows.concat(),
        }
    }

    /// `y * sum_i rho_i h_i(x)` for every row.
    pub fn margins(&self, data: &Dataset) -> Vec<f64> {
        self.votes(data, Exec::Sequential)
            .margins(&self.weights, data.labels())
    }
}

fn check_weights(weights: &[f64], m: usize) -> Result<()> {
    if weights.len() != m {
        return Err(Error::InvalidArgument(format!(
            "{} weights for {m} voters",
            weights.len()
        )));
    }
    if weights.iter().any(|w| w.is_nan() || *w < 0.0) {
        return Err(Error::InvalidArgument("weights must be nonnegative".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("weights sum to {total}, not 1")));
    }
    Ok(())
}

/// Uniform weights over `m` voters.
pub fn uniform(m: usize) -> Vec<f64> {
    vec![1.0 / m as f64; m]
}

/// Per-tree `+1`/`-1` predictions, one row per voter.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteMatrix {
    n_voters: usize,
    n_rows: usize,
    votes: Vec<i8>,
}

impl VoteMatrix {
    pub fn from_rows(rows: Vec<Vec<i8>>) -> Self {
        let n_rows = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == n_rows), "ragged vote matrix");
        VoteMatrix {
            n_voters: rows.len(),
            n_rows,
            votes: rows.concat(),
        }
    }

    pub fn n_voters(&self) -> usize {
        self.n_voters
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    #[inline]
    pub fn voter(&self, i: usize) -> &[i8] {
        &self.votes[i * self.n_rows..(i + 1) * self.n_rows]
    }

    #[inline]
    pub fn get(&self, voter: usize, row: usize) -> i8 {
        self.votes[voter * self.n_rows + row]
    }

    /// Weighted vote sum `sum_i w_i h_i(x)` per row. Weights may be signed.
    pub fn scores(&self, weights: &[f64]) -> Vec<f64> {
        assert_eq!(weights.len(), self.n_voters);
        let mut s = vec![0.0; self.n_rows];
        for (i, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (acc, &v) in s.iter_mut().zip(self.voter(i)) {
                *acc += w * f64::from(v);
            }
        }
        s
    }

    pub fn margins(&self, weights: &[f64], labels: &[i8]) -> Vec<f64> {
        assert_eq!(labels.len(), self.n_rows);
        self.scores(weights)
            .into_iter()
            .zip(labels)
            .map(|(s, &y)| f64::from(y) * s)
            .collect()
    }

    /// Majority-vote predictions with ties to `+1`.
    pub fn mv_predictions(&self, weights: &[f64]) -> Vec<i8> {
        self.scores(weights)
            .into_iter()
            .map(|s| if s >= 0.0 { 1 } else { -1 })
            .collect()
    }

    /// Fraction of rows the weighted majority vote gets wrong.
    pub fn mv_loss(&self, weights: &[f64], labels: &[i8]) -> f64 {
        if self.n_rows == 0 {
            return 0.0;
        }
        let wrong = self
            .mv_predictions(weights)
            .iter()
            .zip(labels)
            .filter(|(p, y)| p != y)
            .count();
        wrong as f64 / self.n_rows as f64
    }
}

/// Empirical majority-vote loss read off margins: the fraction `<= 0`.
pub fn mv_loss_from_margins(margins: &[f64]) -> f64 {
    if margins.is_empty() {
        return 0.0;
    }
    margins.iter().filter(|&&m| m <= 0.0).count() as f64 / margins.len() as f64
}

/// Draws `n` row indices uniformly with replacement, sorted.
pub fn bootstrap_sample<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<u32> {
    let mut rows: Vec<u32> = (0..n).map(|_| rng.random_range(0..n as u32)).collect();
    rows.sort_unstable();
    rows
}

/// Generator for tree `index` of a forest seeded with `seed`: one ChaCha
/// stream per tree, so trees do not depend on scheduling order.
pub fn tree_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Trains `m` trees, each on its own bootstrap sample of `data`, with uniform
/// weights.
pub fn train_forest(
    data: &Dataset,
    m: usize,
    cfg: &TreeConfig,
    seed: u64,
    exec: Exec,
) -> Result<Ensemble> {
    if m == 0 {
        return Err(Error::Config("tree count must be at least 1".into()));
    }
    if data.is_empty() {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }
    let grown = exec.map_range(m, |i| {
        let mut rng = tree_rng(seed, i);
        let rows = bootstrap_sample(data.len(), &mut rng);
        let tree = train_tree(data, &rows, cfg, &mut rng);
        (tree, rows)
    });
    let (trees, bootstraps): (Vec<_>, Vec<_>) = grown.into_iter().unzip();
    Ok(Ensemble {
        trees,
        bootstraps,
        weights: uniform(m),
    })
}
