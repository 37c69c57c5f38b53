use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use forest_bounds::bound_math::XiMode;
use forest_bounds::bounds::{aligned_cbound, c1_bound, c2_bound, lambda_bound, pbkl, sh_bound};
use forest_bounds::experiment::{table_path, Report, SplitPlan, TABLE_HEADER};
use forest_bounds::{
    load_dataset, run_experiment, run_on_dataset, run_sweep, Error, ExperimentConfig, LabelSpec,
    Setting, SplitFeatures, TreeCount,
};

/// Two informative numeric features, one categorical and one noise column.
fn write_csv(path: &Path, n: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = String::from("a,b,colour,noise,class\n");
    for i in 0..n {
        let (a, b): (f64, f64) = (rng.random(), rng.random());
        let colour = ["red", "green", "blue"][rng.random_range(0..3)];
        let flip = rng.random::<f64>() < 0.1;
        let pos = (a + b > 1.0) != flip;
        let noise = if i % 97 == 0 { "?".to_string() } else { format!("{:.3}", rng.random::<f64>()) };
        s += &format!("{a:.4},{b:.4},{colour},{noise},{}\n", if pos { "yes" } else { "no" });
    }
    fs::write(path, s).unwrap();
}

fn cfg(setting: Setting) -> ExperimentConfig {
    ExperimentConfig {
        setting,
        seed: 3,
        trees: TreeCount::Fixed(40),
        ..ExperimentConfig::default()
    }
}

#[test]
fn loader_drops_missing_rows_and_encodes_categories() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.csv");
    write_csv(&p, 300, 1);
    let spec = LabelSpec {
        column: Some("class".into()),
        positive: Some("no".into()),
    };
    let ds = load_dataset(&p, &spec).unwrap();
    assert_eq!(ds.len(), 300 - 4); // rows 0, 97, 194, 291
    assert_eq!(ds.n_features(), 4);
    let colours: std::collections::BTreeSet<u64> = (0..ds.len()).map(|i| ds.value(i, 2) as u64).collect();
    assert_eq!(colours.into_iter().collect::<Vec<_>>(), vec![0, 1, 2]);

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "x,y\n1,a\n2,b\n3,c\n").unwrap();
    let err = load_dataset(&bad, &LabelSpec::default()).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("3 distinct"), "{err}");
}

#[test]
fn split_plans_partition_rows() {
    for setting in [Setting::Bagging, Setting::Validation, Setting::Optimize] {
        let plan = SplitPlan::new(1001, setting, 9);
        let mut all: Vec<usize> = plan.train.iter().chain(&plan.validation).chain(&plan.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..1001).collect::<Vec<_>>());
        assert_eq!(plan.test.len(), 500);
        let val = if setting == Setting::Validation { 250 } else { 0 };
        assert_eq!(plan.validation.len(), val);
    }
}

#[test]
fn reports_round_trip_and_rows_recompute() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("synthetic.csv");
    write_csv(&data, 500, 2);
    for setting in [Setting::Bagging, Setting::Validation, Setting::Optimize] {
        let report = run_experiment(&cfg(setting), &data, &LabelSpec::default()).unwrap();
        assert_eq!(report.dataset, "synthetic");
        let out = dir.path().join(format!("{setting:?}.json"));
        let table = report.write(&out).unwrap();
        assert_eq!(table, table_path(&out));

        let back: Report = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
        assert_eq!(back.runs, report.runs);

        let mut reader = csv::Reader::from_path(&table).unwrap();
        let header: Vec<String> = reader.headers().unwrap().iter().map(str::to_owned).collect();
        assert_eq!(header, TABLE_HEADER);
        let mut seen = 0;
        for rec in reader.records() {
            let rec = rec.unwrap();
            let f = |k: &str| -> Option<f64> {
                let v = &rec[header.iter().position(|h| h == k).unwrap()];
                (!v.is_empty()).then(|| v.parse().unwrap())
            };
            let n = |k: &str| f(k).map(|v| v as usize);
            let xi = match &rec[header.iter().position(|h| h == "xi_mode").unwrap()] {
                "two_sqrt_n" => XiMode::TwoSqrtN,
                _ => XiMode::Xi,
            };
            let delta = f("delta").unwrap();
            let again = match &rec[6] {
                "PBKL" => pbkl(f("gibbs_emp").unwrap(), n("n_gibbs").unwrap(), f("kl_div").unwrap(), delta, xi),
                "SH" => sh_bound(f("mv_emp").unwrap(), n("n_gibbs").unwrap(), delta, xi),
                "C1" => c1_bound(
                    f("gibbs_emp").unwrap(),
                    n("n_gibbs").unwrap(),
                    f("d_emp").unwrap(),
                    n("n_pair").unwrap(),
                    f("kl_div").unwrap(),
                    delta,
                    xi,
                ),
                "C2" => c2_bound(f("d_emp").unwrap(), f("e_emp").unwrap(), n("n_pair").unwrap(), f("kl_div").unwrap(), delta, xi),
                "LAMBDA" => lambda_bound(f("gibbs_emp").unwrap(), n("n_gibbs").unwrap(), f("kl_div").unwrap(), delta, f("lambda").unwrap()),
                "C_ALIGNED" => aligned_cbound(f("gibbs_emp").unwrap(), f("d_emp").unwrap(), n("n_pair").unwrap(), delta, xi),
                other => panic!("unexpected bound {other}"),
            }
            .unwrap();
            let recorded = f("mv_bound").unwrap();
            assert!((again.mv_bound - recorded).abs() <= 1e-9, "{setting:?} {}: {} vs {recorded}", &rec[6], again.mv_bound);
            seen += 1;
        }
        let expected: usize = report.runs[0].sections.iter().map(|s| s.bounds.len()).sum();
        assert_eq!(seen, expected);
    }
}

#[test]
fn settings_produce_their_sections() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("s.csv");
    write_csv(&data, 400, 4);
    let ds = load_dataset(&data, &LabelSpec::default()).unwrap();

    let bag = run_on_dataset(&cfg(Setting::Bagging), &ds, "s").unwrap();
    let run = &bag.runs[0];
    assert_eq!((run.n_train, run.n_validation, run.n_test), (ds.len() - ds.len() / 2, 0, ds.len() / 2));
    assert_eq!(run.sections.len(), 1);

    let val = run_on_dataset(&cfg(Setting::Validation), &ds, "s").unwrap();
    let modes: Vec<_> = val.runs[0].sections.iter().map(|s| s.eval_mode).collect();
    assert_eq!(modes.len(), 2);
    for s in &val.runs[0].sections {
        assert!(s.bounds.iter().any(|b| b.report.bound_name.as_str() == "SH"));
    }

    let opt = run_on_dataset(&cfg(Setting::Optimize), &ds, "s").unwrap();
    let names: Vec<_> = opt.runs[0].sections.iter().map(|s| s.posterior.as_str()).collect();
    assert_eq!(names, ["uniform", "lambda", "cbound"]);
    let lam = &opt.runs[0].posteriors[0];
    assert!((lam.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let c = &opt.runs[0].posteriors[1];
    assert!(c.weights.iter().map(|w| w.abs()).sum::<f64>() <= 1.0 + 1e-9);
    assert!(c.max_alignment_violation.unwrap() < 1e-9);
}

#[test]
fn repeats_average_consecutive_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("r.csv");
    write_csv(&data, 300, 5);
    let ds = load_dataset(&data, &LabelSpec::default()).unwrap();
    let c = ExperimentConfig {
        repeats: 3,
        ..cfg(Setting::Bagging)
    };
    let r = run_on_dataset(&c, &ds, "r").unwrap();
    assert_eq!(r.runs.iter().map(|x| x.seed).collect::<Vec<_>>(), [3, 4, 5]);
    let row = &r.summary[0];
    let mean = r.runs.iter().map(|x| x.sections[0].bounds[0].report.mv_bound).sum::<f64>() / 3.0;
    assert!((row.mean_mv_bound - mean).abs() < 1e-15);
}

#[test]
fn fixed_mu_errors_are_numeric() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("m.csv");
    write_csv(&data, 300, 6);
    let ds = load_dataset(&data, &LabelSpec::default()).unwrap();
    let c = ExperimentConfig {
        mu: Some(0.999),
        ..cfg(Setting::Optimize)
    };
    let err = run_on_dataset(&c, &ds, "m").unwrap_err();
    assert!(matches!(err, Error::InfeasibleMu { .. }), "{err}");
    assert_eq!(err.exit_code(), 4);
    let bad = ExperimentConfig {
        mu: Some(0.3),
        ..cfg(Setting::Bagging)
    };
    assert_eq!(run_on_dataset(&bad, &ds, "m").unwrap_err().exit_code(), 3);
}

#[test]
fn small_data_needs_explicit_tree_count() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("tiny.csv");
    write_csv(&data, 200, 7);
    let c = ExperimentConfig {
        trees: TreeCount::Auto,
        ..cfg(Setting::Bagging)
    };
    let err = run_experiment(&c, &data, &LabelSpec::default()).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn sweep_covers_the_grid() {
    // One dominant feature, so best-feature stumps all make the same cut.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let rows: Vec<Vec<f64>> = (0..400).map(|_| vec![rng.random(), rng.random(), rng.random()]).collect();
    let labels = rows
        .iter()
        .map(|r| if (r[0] > 0.5) != (rng.random::<f64>() < 0.15) { 1 } else { -1 })
        .collect();
    let ds = forest_bounds::Dataset::new(rows, labels).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let depths = [Some(1), Some(3), None];
    let modes = [SplitFeatures::All, SplitFeatures::OneRandom];
    let sw = run_sweep(&cfg(Setting::Bagging), &ds, "w", &depths, &modes).unwrap();
    assert_eq!(sw.points.len(), 6);
    // Stumps on the best feature agree more than full trees do.
    let stump = &sw.points[0];
    let full = &sw.points[2];
    assert!(stump.d_emp < full.d_emp, "{} vs {}", stump.d_emp, full.d_emp);
    // Random-feature stumps are weaker than best-feature stumps.
    assert!(sw.points[3].gibbs_emp > stump.gibbs_emp);
    for p in &sw.points {
        assert!(p.bound("PBKL").is_some() && p.bound("C2").is_some());
    }
    let out = dir.path().join("sweep.json");
    let table = sw.write(&out).unwrap();
    assert_eq!(fs::read_to_string(table).unwrap().lines().count(), 7);

    let err = run_sweep(&cfg(Setting::Bagging), &ds, "w", &[None, Some(2)], &modes).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}
