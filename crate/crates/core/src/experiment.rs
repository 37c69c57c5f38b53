//! End-to-end runs: split the data, grow a forest, compute every applicable
//! bound and write JSON / CSV reports.
//!
//! | setting      | train    | validation | test  | evaluation modes          |
//! |--------------|----------|------------|-------|---------------------------|
//! | `Bagging`    | N - N/2  | —          | N/2   | out-of-bag                |
//! | `Validation` | rest     | N/4        | N/2   | oob + validation, val only |
//! | `Optimize`   | N - N/2  | —          | N/2   | out-of-bag, three posteriors |

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bound_math::XiMode;
use crate::bounds::{
    c1_bound, c2_bound, cbound_oracle, kl_to_uniform, lambda_bound, pbkl, sh_bound, BoundReport,
};
use crate::data::{load_dataset, Dataset, LabelSpec};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::forest::{train_forest, uniform, Ensemble, SplitFeatures, TreeConfig};
use crate::optimize::{best_lambda, default_mu_grid, optimize_lambda, select_mu};
use crate::stats::{EvalMode, Evaluation, OobStatistics};

/// Candidate forest sizes for the automatic rule.
pub const AUTO_TREE_COUNTS: [usize; 4] = [100, 200, 500, 1000];

/// Stream id for the split shuffle; trees use streams `0..m`.
const SPLIT_STREAM: u64 = 1 << 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Bagging,
    Validation,
    Optimize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeCount {
    /// Largest of [`AUTO_TREE_COUNTS`] strictly below `N / 4`.
    Auto,
    Fixed(usize),
}

impl TreeCount {
    pub fn resolve(self, n_total: usize) -> Result<usize> {
        match self {
            TreeCount::Fixed(0) => Err(Error::Config("tree count must be at least 1".into())),
            TreeCount::Fixed(m) => Ok(m),
            TreeCount::Auto => AUTO_TREE_COUNTS
                .iter()
                .rev()
                .copied()
                .find(|&c| 4 * c < n_total)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "automatic tree count needs N > {}, dataset has {n_total} rows; pass an explicit count",
                        4 * AUTO_TREE_COUNTS[0]
                    ))
                }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub setting: Setting,
    pub seed: u64,
    pub delta: f64,
    pub trees: TreeCount,
    pub tree: TreeConfig,
    /// Replaces the setting's evaluation modes with this single one.
    pub eval_mode: Option<EvalMode>,
    /// Which constant the primary kl-form bounds use. Both PBkl variants
    /// are always reported.
    pub xi_mode: XiMode,
    pub mu_grid_size: usize,
    /// Fixed margin target for the aligned posterior instead of the grid.
    #[serde(default)]
    pub mu: Option<f64>,
    /// Runs with seeds `seed, seed + 1, ...`; their mean is summarized.
    pub repeats: usize,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            setting: Setting::Bagging,
            seed: 0,
            delta: 0.05,
            trees: TreeCount::Auto,
            tree: TreeConfig::default(),
            eval_mode: None,
            xi_mode: XiMode::Xi,
            mu_grid_size: 20,
            mu: None,
            repeats: 1,
            exec: Exec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta = {} is not in (0, 1)", self.delta)));
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if self.setting == Setting::Optimize && self.mu_grid_size == 0 {
            return Err(Error::Config("mu grid must have at least one point".into()));
        }
        if let Some(mu) = self.mu {
            if self.setting != Setting::Optimize {
                return Err(Error::Config("a margin target only applies to the optimize setting".into()));
            }
            if !(mu > 0.0 && mu < 1.0) {
                return Err(Error::Config(format!("mu = {mu} is not in (0, 1)")));
            }
        }
        if let Some(mode) = self.eval_mode {
            if mode.needs_validation() && self.setting != Setting::Validation {
                return Err(Error::Config(format!(
                    "evaluation mode {mode:?} needs the validation setting"
                )));
            }
        }
        if self.tree.max_depth == Some(0) {
            return Err(Error::Config("max depth must be at least 1".into()));
        }
        Ok(())
    }

    fn eval_modes(&self) -> Vec<EvalMode> {
        match (self.eval_mode, self.setting) {
            (Some(mode), _) => vec![mode],
            (None, Setting::Validation) => vec![EvalMode::OobPlusVal, EvalMode::ValOnly],
            (None, _) => vec![EvalMode::OobOnly],
        }
    }
}

/// Disjoint row sets covering `0..N`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitPlan {
    /// Seeded shuffle; the first `N/2` rows are the test set, the next
    /// `N/4` the validation set (validation setting only), the rest train.
    pub fn new(n: usize, setting: Setting, seed: u64) -> Self {
        let mut rows: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(SPLIT_STREAM);
        rows.shuffle(&mut rng);
        let n_test = n / 2;
        let n_val = if setting == Setting::Validation { n / 4 } else { 0 };
        let test = rows[..n_test].to_vec();
        let validation = rows[n_test..n_test + n_val].to_vec();
        let train = rows[n_test + n_val..].to_vec();
        SplitPlan {
            train,
            validation,
            test,
        }
    }
}

/// One bound in a report section. `primary` marks the variant that follows
/// the configured constant when both PBkl variants are present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    #[serde(flatten)]
    pub report: BoundReport,
    pub primary: bool,
}

/// Bounds and empirical quantities for one posterior under one evaluation
/// mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub posterior: String,
    pub eval_mode: EvalMode,
    pub gibbs_emp: f64,
    pub d_emp: f64,
    pub e_emp: f64,
    pub kl_div: f64,
    pub n_gibbs: usize,
    pub n_pair: usize,
    pub oob_mv_loss: f64,
    pub validation_mv_loss: Option<f64>,
    pub test_mv_loss: f64,
    pub test_gibbs_loss: f64,
    /// C-bound on the test set's margin moments; `None` when the first
    /// moment is not positive.
    pub test_cbound: Option<f64>,
    pub bounds: Vec<BoundRow>,
}

impl Section {
    pub fn bound(&self, name: crate::bounds::BoundName) -> Option<&BoundReport> {
        self.bounds
            .iter()
            .find(|b| b.report.bound_name == name && b.primary)
            .map(|b| &b.report)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorReport {
    pub name: String,
    /// Weights on the original trees; signed for the aligned posterior.
    pub weights: Vec<f64>,
    /// Per-tree losses on each tree's evaluation set, same order.
    pub per_tree_loss: Vec<f64>,
    pub lambda_star: Option<f64>,
    pub lambda_history: Option<Vec<f64>>,
    pub mu: Option<f64>,
    pub complement_mass: Option<f64>,
    pub qp_kkt_residual: Option<f64>,
    pub max_alignment_violation: Option<f64>,
    pub mu_candidates: Option<Vec<crate::optimize::MuCandidate>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub n_trees: usize,
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,
    pub sections: Vec<Section>,
    pub posteriors: Vec<PosteriorReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub posterior: String,
    pub eval_mode: EvalMode,
    pub bound_name: crate::bounds::BoundName,
    pub xi_mode: Option<XiMode>,
    pub mean_mv_bound: f64,
    pub mean_test_mv_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub dataset: String,
    pub n_total: usize,
    pub n_features: usize,
    pub config: ExperimentConfig,
    pub runs: Vec<RunReport>,
    pub summary: Vec<SummaryRow>,
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Loads `data` and runs the configured experiment.
pub fn run_experiment(cfg: &ExperimentConfig, data: &Path, label: &LabelSpec) -> Result<Report> {
    let ds = load_dataset(data, label)?;
    run_on_dataset(cfg, &ds, &dataset_name(data))
}

pub fn run_on_dataset(cfg: &ExperimentConfig, ds: &Dataset, name: &str) -> Result<Report> {
    cfg.validate()?;
    let m = cfg.trees.resolve(ds.len())?;
    let runs = (0..cfg.repeats)
        .map(|k| run_once(cfg, ds, m, cfg.seed.wrapping_add(k as u64)))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| with_context(e, name))?;
    let summary = summarize(&runs);
    Ok(Report {
        dataset: name.to_string(),
        n_total: ds.len(),
        n_features: ds.n_features(),
        config: cfg.clone(),
        runs,
        summary,
    })
}

fn with_context(e: Error, name: &str) -> Error {
    match e {
        Error::Data(s) => Error::Data(format!("{name}: {s}")),
        Error::Config(s) => Error::Config(format!("{name}: {s}")),
        Error::Numeric(s) => Error::Numeric(format!("{name}: {s}")),
        other => other,
    }
}

fn run_once(cfg: &ExperimentConfig, ds: &Dataset, m: usize, seed: u64) -> Result<RunReport> {
    let plan = SplitPlan::new(ds.len(), cfg.setting, seed);
    let train = ds.subset(&plan.train);
    let test = ds.subset(&plan.test);
    let validation = (!plan.validation.is_empty()).then(|| ds.subset(&plan.validation));
    if cfg.setting == Setting::Validation && validation.is_none() {
        return Err(Error::Config("dataset too small for a validation split".into()));
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::Config("dataset too small to split".into()));
    }
    info!(
        "seed {seed}: {m} trees on {} rows ({} validation, {} test)",
        train.len(),
        plan.validation.len(),
        test.len()
    );
    let ens = train_forest(&train, m, &cfg.tree, seed, cfg.exec)?;
    let eval = Evaluation::new(&ens, &train, validation.as_ref(), cfg.exec)?;
    let test_votes = ens.votes(&test, cfg.exec);

    let mut sections = Vec::new();
    let mut posteriors = Vec::new();
    let w = uniform(m);
    for mode in cfg.eval_modes() {
        let stats = eval.statistics(mode, &w, cfg.exec)?;
        let ctx = SectionInput {
            cfg,
            eval: &eval,
            stats: &stats,
            test_votes: &test_votes,
            test_labels: test.labels(),
        };
        let mut section = ctx.kl_section("uniform", &w, 0.0, None)?;
        if cfg.setting == Setting::Optimize {
            let lam = best_lambda(section.gibbs_emp, stats.n_gibbs, 0.0, cfg.delta);
            section.bounds.push(row(
                lambda_bound(section.gibbs_emp, stats.n_gibbs, 0.0, cfg.delta, lam)?,
                true,
            ));
        }
        sections.push(section);

        if cfg.setting == Setting::Optimize {
            let (lam_section, lam_post) = ctx.lambda_section()?;
            sections.push(lam_section);
            posteriors.push(lam_post);
            let (c_section, c_post) = ctx.cbound_section()?;
            sections.push(c_section);
            posteriors.push(c_post);
        }
    }
    Ok(RunReport {
        seed,
        n_trees: m,
        n_train: train.len(),
        n_validation: plan.validation.len(),
        n_test: test.len(),
        sections,
        posteriors,
    })
}

fn row(report: BoundReport, primary: bool) -> BoundRow {
    BoundRow { report, primary }
}

struct SectionInput<'a> {
    cfg: &'a ExperimentConfig,
    eval: &'a Evaluation,
    stats: &'a OobStatistics,
    test_votes: &'a crate::forest::VoteMatrix,
    test_labels: &'a [i8],
}

impl SectionInput<'_> {
    fn test_quantities(&self, weights: &[f64]) -> (f64, f64, Option<f64>) {
        let margins = self.test_votes.margins(weights, self.test_labels);
        let n = margins.len() as f64;
        let mv = crate::forest::mv_loss_from_margins(&margins);
        let m1 = margins.iter().sum::<f64>() / n;
        let m2 = margins.iter().map(|v| v * v).sum::<f64>() / n;
        // Net weights of an aligned posterior still carry total mass 1, so
        // the Gibbs loss is (1 - M1) / 2 in both cases.
        let gibbs = (1.0 - m1) / 2.0;
        (mv, gibbs, cbound_oracle(m1, m2).ok())
    }

    /// PBkl (both constants), C1, C2 and, with a validation set, SH for a
    /// posterior on the original trees.
    fn kl_section(&self, name: &str, rho: &[f64], kl_div: f64, lambda: Option<f64>) -> Result<Section> {
        let (cfg, s) = (self.cfg, self.stats);
        let gibbs = s.gibbs_loss(rho).clamp(0.0, 1.0);
        let d = s.disagreement_rho(rho).clamp(0.0, 1.0);
        let e = s.joint_error_rho(rho).clamp(0.0, 1.0 - d);
        let mut bounds = Vec::new();
        for xi_mode in [XiMode::Xi, XiMode::TwoSqrtN] {
            bounds.push(row(
                pbkl(gibbs, s.n_gibbs, kl_div, cfg.delta, xi_mode)?,
                xi_mode == cfg.xi_mode,
            ));
        }
        bounds.push(row(
            c1_bound(gibbs, s.n_gibbs, d, s.n_pair, kl_div, cfg.delta, cfg.xi_mode)?,
            true,
        ));
        bounds.push(row(c2_bound(d, e, s.n_pair, kl_div, cfg.delta, cfg.xi_mode)?, true));
        let validation_mv_loss = self.eval.validation_mv_loss(rho);
        if let (Some(loss), Some(n_val)) = (validation_mv_loss, self.eval.n_validation()) {
            if n_val > 0 {
                bounds.push(row(sh_bound(loss, n_val, cfg.delta, cfg.xi_mode)?, true));
            }
        }
        if let Some(l) = lambda {
            bounds.push(row(lambda_bound(gibbs, s.n_gibbs, kl_div, cfg.delta, l)?, true));
        }
        let (test_mv, test_gibbs, test_cbound) = self.test_quantities(rho);
        Ok(Section {
            posterior: name.to_string(),
            eval_mode: s.mode,
            gibbs_emp: gibbs,
            d_emp: d,
            e_emp: e,
            kl_div,
            n_gibbs: s.n_gibbs,
            n_pair: s.n_pair,
            oob_mv_loss: self.eval.oob_mv_estimate(rho).loss,
            validation_mv_loss,
            test_mv_loss: test_mv,
            test_gibbs_loss: test_gibbs,
            test_cbound,
            bounds,
        })
    }

    fn lambda_section(&self) -> Result<(Section, PosteriorReport)> {
        let opt = optimize_lambda(self.stats, self.cfg.delta)?;
        let rho = &opt.posterior.weights;
        let kl = kl_to_uniform(rho);
        let section = self.kl_section("lambda", rho, kl, opt.posterior.lambda_star)?;
        let post = PosteriorReport {
            name: "lambda".into(),
            weights: rho.clone(),
            per_tree_loss: self.stats.per_tree_loss.clone(),
            lambda_star: opt.posterior.lambda_star,
            lambda_history: Some(opt.history),
            mu: None,
            complement_mass: None,
            qp_kkt_residual: None,
            max_alignment_violation: None,
            mu_candidates: None,
        };
        Ok((section, post))
    }

    /// Aligned C-bound posterior with `mu` picked by the out-of-bag vote, or
    /// the configured target.
    /// Reported alongside PBkl for the same posterior on the doubled set.
    fn cbound_section(&self) -> Result<(Section, PosteriorReport)> {
        let (cfg, s) = (self.cfg, self.stats);
        let grid = match cfg.mu {
            Some(mu) => vec![mu],
            None => default_mu_grid(s, cfg.mu_grid_size),
        };
        if grid.is_empty() {
            return Err(Error::Numeric(
                "no tree beats chance; the aligned program has no positive first moment".into(),
            ));
        }
        let sel = select_mu(s, self.eval, &grid, cfg.delta, cfg.xi_mode, cfg.exec)?;
        let sol = &sel.best.solution;
        let w = sol.posterior.signed_weights();
        let gibbs = ((1.0 - sol.first_moment) / 2.0).clamp(0.0, 1.0);
        let d = ((1.0 - sol.second_moment) / 2.0).clamp(0.0, 1.0);
        let kl = kl_to_uniform(&sol.posterior.rho());
        let mut bounds = vec![row(sel.best.report.clone(), true)];
        for xi_mode in [XiMode::Xi, XiMode::TwoSqrtN] {
            bounds.push(row(
                pbkl(gibbs, s.n_gibbs, kl, cfg.delta, xi_mode)?,
                xi_mode == cfg.xi_mode,
            ));
        }
        let (test_mv, test_gibbs, test_cbound) = self.test_quantities(&w);
        let section = Section {
            posterior: "cbound".into(),
            eval_mode: s.mode,
            gibbs_emp: gibbs,
            d_emp: d,
            e_emp: gibbs - d / 2.0,
            kl_div: kl,
            n_gibbs: s.n_gibbs,
            n_pair: s.n_pair,
            oob_mv_loss: sel.oob_mv_loss,
            validation_mv_loss: self.eval.validation_mv_loss(&w),
            test_mv_loss: test_mv,
            test_gibbs_loss: test_gibbs,
            test_cbound,
            bounds,
        };
        let post = PosteriorReport {
            name: "cbound".into(),
            weights: w,
            per_tree_loss: s.per_tree_loss.clone(),
            lambda_star: None,
            lambda_history: None,
            mu: Some(sel.best.mu),
            complement_mass: Some(sol.posterior.complement_mass()),
            qp_kkt_residual: Some(sol.kkt_residual),
            max_alignment_violation: Some(sol.max_alignment_violation),
            mu_candidates: Some(sel.candidates),
        };
        Ok((section, post))
    }
}

fn summarize(runs: &[RunReport]) -> Vec<SummaryRow> {
    let Some(first) = runs.first() else {
        return Vec::new();
    };
    let k = runs.len() as f64;
    let mut out = Vec::new();
    for (si, section) in first.sections.iter().enumerate() {
        for (bi, b) in section.bounds.iter().enumerate() {
            let mean_bound = runs.iter().map(|r| r.sections[si].bounds[bi].report.mv_bound).sum::<f64>() / k;
            let mean_test = runs.iter().map(|r| r.sections[si].test_mv_loss).sum::<f64>() / k;
            out.push(SummaryRow {
                posterior: section.posterior.clone(),
                eval_mode: section.eval_mode,
                bound_name: b.report.bound_name,
                xi_mode: b.report.ingredients.xi_mode,
                mean_mv_bound: mean_bound,
                mean_test_mv_loss: mean_test,
            });
        }
    }
    out
}

/// Column order of the bound table.
pub const TABLE_HEADER: [&str; 27] = [
    "dataset", "setting", "seed", "n_trees", "posterior", "eval_mode", "bound", "primary",
    "mv_bound", "gibbs_bound", "trivial", "gibbs_emp", "mv_emp", "d_emp", "e_emp", "kl_div",
    "n_gibbs", "n_pair", "delta", "lambda", "xi_mode", "rhs_gibbs", "rhs_pair", "gibbs_upper",
    "disagreement_lower", "test_mv_loss", "oob_mv_loss",
];

fn opt_f(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn opt_u(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn enum_str<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        Ok(other) => other.to_string(),
        Err(_) => String::new(),
    }
}

impl Report {
    /// One row per bound per section per run. Floats use the shortest
    /// representation that round-trips.
    pub fn table(&self) -> Vec<Vec<String>> {
        let mut rows = Vec::new();
        for run in &self.runs {
            for s in &run.sections {
                for b in &s.bounds {
                    let r = &b.report;
                    let ing = &r.ingredients;
                    rows.push(vec![
                        self.dataset.clone(),
                        enum_str(&self.config.setting),
                        run.seed.to_string(),
                        run.n_trees.to_string(),
                        s.posterior.clone(),
                        enum_str(&s.eval_mode),
                        r.bound_name.as_str().to_string(),
                        b.primary.to_string(),
                        r.mv_bound.to_string(),
                        opt_f(r.gibbs_bound),
                        r.trivial.to_string(),
                        opt_f(ing.gibbs_emp),
                        opt_f(ing.mv_emp),
                        opt_f(ing.d_emp),
                        opt_f(ing.e_emp),
                        opt_f(ing.kl_div),
                        opt_u(ing.n_gibbs),
                        opt_u(ing.n_pair),
                        ing.delta.to_string(),
                        opt_f(ing.lambda),
                        ing.xi_mode.map(|x| enum_str(&x)).unwrap_or_default(),
                        opt_f(ing.rhs_gibbs),
                        opt_f(ing.rhs_pair),
                        opt_f(ing.gibbs_upper),
                        opt_f(ing.disagreement_lower),
                        s.test_mv_loss.to_string(),
                        s.oob_mv_loss.to_string(),
                    ]);
                }
            }
        }
        rows
    }

    /// Writes the JSON report to `path` and the bound table next to it
    /// (same stem, `.csv`).
    pub fn write(&self, path: &Path) -> Result<PathBuf> {
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json + "\n")?;
        let csv_path = table_path(path);
        write_table(&csv_path, &TABLE_HEADER, &self.table())?;
        Ok(csv_path)
    }
}

/// `report.json` → `report.csv`; any other name gets `.csv` appended.
pub fn table_path(path: &Path) -> PathBuf {
    if path.extension().is_some_and(|e| e == "json") {
        path.with_extension("csv")
    } else {
        let mut s = path.as_os_str().to_owned();
        s.push(".csv");
        PathBuf::from(s)
    }
}

fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// One sweep run summarized for plotting against the Gibbs risk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub max_depth: Option<usize>,
    pub split_features: SplitFeatures,
    pub eval_mode: EvalMode,
    pub gibbs_emp: f64,
    pub d_emp: f64,
    pub e_emp: f64,
    pub test_mv_loss: f64,
    pub oob_mv_loss: f64,
    /// `(bound name, mv bound)` for each primary bound in the section.
    pub bounds: Vec<(String, f64)>,
}

impl SweepPoint {
    pub fn bound(&self, name: &str) -> Option<f64> {
        self.bounds.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub dataset: String,
    pub config: ExperimentConfig,
    pub points: Vec<SweepPoint>,
}

/// Runs the configured setting once per `(depth, feature mode)` pair and
/// keeps the first section (the setting's main evaluation mode).
pub fn run_sweep(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    name: &str,
    depths: &[Option<usize>],
    modes: &[SplitFeatures],
) -> Result<SweepReport> {
    cfg.validate()?;
    if depths.is_empty() || modes.is_empty() {
        return Err(Error::Config("sweep needs at least one depth and one feature mode".into()));
    }
    // Unlimited depth sorts last.
    let key = |d: &Option<usize>| d.unwrap_or(usize::MAX);
    if depths.windows(2).any(|w| key(&w[0]) >= key(&w[1])) {
        return Err(Error::Config("sweep depths must be strictly increasing".into()));
    }
    let grid: Vec<(SplitFeatures, Option<usize>)> = modes
        .iter()
        .flat_map(|&f| depths.iter().map(move |&d| (f, d)))
        .collect();
    let points = cfg.exec.try_map_range(grid.len(), |k| {
        let (features, depth) = grid[k];
        let mut c = cfg.clone();
        c.tree = TreeConfig {
            max_depth: depth,
            split_features: features,
        };
        c.repeats = 1;
        let report = run_on_dataset(&c, ds, name)?;
        let s = &report.runs[0].sections[0];
        Ok::<_, Error>(SweepPoint {
            max_depth: depth,
            split_features: features,
            eval_mode: s.eval_mode,
            gibbs_emp: s.gibbs_emp,
            d_emp: s.d_emp,
            e_emp: s.e_emp,
            test_mv_loss: s.test_mv_loss,
            oob_mv_loss: s.oob_mv_loss,
            bounds: s
                .bounds
                .iter()
                .filter(|b| b.primary)
                .map(|b| (b.report.bound_name.as_str().to_string(), b.report.mv_bound))
                .collect(),
        })
    })?;
    Ok(SweepReport {
        dataset: name.to_string(),
        config: cfg.clone(),
        points,
    })
}

impl SweepReport {
    pub fn write(&self, path: &Path) -> Result<PathBuf> {
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json + "\n")?;
        let names: Vec<String> = {
            let mut v: Vec<String> = Vec::new();
            for p in &self.points {
                for (n, _) in &p.bounds {
                    if !v.contains(n) {
                        v.push(n.clone());
                    }
                }
            }
            v
        };
        let mut header: Vec<&str> = vec![
            "gibbs_emp", "d_emp", "e_emp", "test_mv_loss", "oob_mv_loss", "max_depth",
            "split_features", "eval_mode",
        ];
        header.extend(names.iter().map(String::as_str));
        let rows: Vec<Vec<String>> = self
            .points
            .iter()
            .map(|p| {
                let mut r = vec![
                    p.gibbs_emp.to_string(),
                    p.d_emp.to_string(),
                    p.e_emp.to_string(),
                    p.test_mv_loss.to_string(),
                    p.oob_mv_loss.to_string(),
                    p.max_depth.map_or_else(|| "none".to_string(), |d| d.to_string()),
                    enum_str(&p.split_features),
                    enum_str(&p.eval_mode),
                ];
                r.extend(names.iter().map(|n| opt_f(p.bound(n))));
                r
            })
            .collect();
        let csv_path = table_path(path);
        write_table(&csv_path, &header, &rows)?;
        Ok(csv_path)
    }
}

/// Mean majority-vote test loss of an ensemble; used by tests and benches.
pub fn test_loss(ens: &Ensemble, test: &Dataset, exec: Exec) -> f64 {
    ens.votes(test, exec).mv_loss(ens.weights(), test.labels())
}
