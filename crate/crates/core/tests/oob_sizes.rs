use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use forest_bounds::stats::oob_sets;
use forest_bounds::{train_forest, Dataset, EvalMode, Evaluation, Exec, TreeConfig};

fn noisy_line(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
    let labels = rows
        .iter()
        .map(|r| if r[0] + 0.3 * rng.random::<f64>() > 0.65 { 1 } else { -1 })
        .collect();
    Dataset::new(rows, labels).unwrap()
}

/// Fraction of rows missed by both of two independent bootstrap draws,
/// averaged over `draws` simulated pairs. Uses its own sampler.
fn pair_oob_fraction(n: usize, draws: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut total = 0usize;
    for _ in 0..draws {
        let mut hit = vec![[false; 2]; n];
        for _ in 0..n {
            hit[rng.random_range(0..n)][0] = true;
        }
        for _ in 0..n {
            hit[rng.random_range(0..n)][1] = true;
        }
        total += hit.iter().filter(|h| !h[0] && !h[1]).count();
    }
    total as f64 / (draws * n) as f64
}

/// Range of `min_{i<j} |V_i ∩ V_j|` over `forests` simulated forests of `m`
/// independent bootstraps of `n` rows.
fn min_pair_range(n: usize, m: usize, forests: usize) -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let (mut lo, mut hi) = (usize::MAX, 0);
    for _ in 0..forests {
        let oob: Vec<Vec<bool>> = (0..m)
            .map(|_| {
                let mut out = vec![true; n];
                for _ in 0..n {
                    out[rng.random_range(0..n)] = false;
                }
                out
            })
            .collect();
        let mut min = usize::MAX;
        for i in 0..m {
            for j in i + 1..m {
                min = min.min((0..n).filter(|&r| oob[i][r] && oob[j][r]).count());
            }
        }
        lo = lo.min(min);
        hi = hi.max(min);
    }
    (lo, hi)
}

#[test]
fn oob_fractions_match_independent_bootstraps() {
    let n = 1000;
    let ds = noisy_line(n, 1);
    let ens = train_forest(&ds, 100, &TreeConfig::default(), 7, Exec::default()).unwrap();
    let sets = oob_sets(&ens, n).unwrap();
    let single = sets.iter().map(Vec::len).sum::<usize>() as f64 / (100 * n) as f64;
    assert!((single - (-1f64).exp()).abs() < 0.01, "{single}");

    let oracle = pair_oob_fraction(n, 1000);
    assert!((oracle - (-2f64).exp()).abs() < 0.005, "oracle {oracle}");
    let mut pairs = 0usize;
    let mut shared = 0usize;
    for i in 0..100 {
        let mut mark = vec![false; n];
        for &r in &sets[i] {
            mark[r] = true;
        }
        for other in &sets[i + 1..] {
            shared += other.iter().filter(|&&r| mark[r]).count();
            pairs += 1;
        }
    }
    let mean = shared as f64 / (pairs * n) as f64;
    assert!((mean - oracle).abs() < 0.005, "{mean} vs {oracle}");
}

#[test]
fn effective_sizes_by_mode() {
    let n = 1000;
    let train = noisy_line(n, 2);
    let val = noisy_line(300, 3);
    let ens = train_forest(&train, 100, &TreeConfig::default(), 11, Exec::default()).unwrap();
    let ev = Evaluation::new(&ens, &train, Some(&val), Exec::default()).unwrap();
    let w = ens.weights().to_vec();
    let oob = ev.statistics(EvalMode::OobOnly, &w, Exec::default()).unwrap();
    let both = ev.statistics(EvalMode::OobPlusVal, &w, Exec::default()).unwrap();
    let only = ev.statistics(EvalMode::ValOnly, &w, Exec::default()).unwrap();

    // A single pair averages e^-2 |T| ~ 135 rows, but n_pair is the minimum
    // over 4950 pairs, which lands several standard deviations lower.
    let (g, p) = oob.effective_sizes();
    let (lo, hi) = min_pair_range(n, 100, 40);
    assert!(lo <= p && p <= hi, "{p} outside simulated [{lo}, {hi}]");
    assert!(g >= p);
    assert_eq!(both.effective_sizes(), (g + 300, p + 300));
    assert_eq!(only.effective_sizes(), (300, 300));
}

#[test]
fn pairwise_matrices_are_symmetric_with_loss_diagonal() {
    let train = noisy_line(400, 4);
    let ens = train_forest(&train, 20, &TreeConfig { max_depth: Some(2), ..TreeConfig::default() }, 5, Exec::default())
        .unwrap();
    let ev = Evaluation::new(&ens, &train, None, Exec::default()).unwrap();
    for exec in [Exec::Sequential, Exec::default()] {
        let s = ev.statistics(EvalMode::OobOnly, ens.weights(), exec).unwrap();
        for i in 0..20 {
            assert_eq!(s.disagreement_at(i, i), 0.0);
            assert_eq!(s.joint_error_at(i, i), s.per_tree_loss[i]);
            for j in 0..20 {
                assert_eq!(s.disagreement_at(i, j), s.disagreement_at(j, i));
                assert_eq!(s.joint_error_at(i, j), s.joint_error_at(j, i));
                let (d, e) = (s.disagreement_at(i, j), s.joint_error_at(i, j));
                assert!((0.0..=1.0).contains(&d) && (0.0..=1.0).contains(&e));
            }
        }
    }
    let a = ev.statistics(EvalMode::OobOnly, ens.weights(), Exec::Sequential).unwrap();
    let b = ev.statistics(EvalMode::OobOnly, ens.weights(), Exec::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn oob_estimate_tracks_held_out_loss() {
    let train = noisy_line(1000, 5);
    let test = noisy_line(2000, 6);
    let ens = train_forest(&train, 100, &TreeConfig::default(), 3, Exec::default()).unwrap();
    let ev = Evaluation::new(&ens, &train, None, Exec::default()).unwrap();
    let est = ev.oob_mv_estimate(ens.weights());
    assert_eq!(est.covered, est.total);
    let held_out = forest_bounds::experiment::test_loss(&ens, &test, Exec::default());
    assert!((est.loss - held_out).abs() < 0.04, "{} vs {held_out}", est.loss);
}
