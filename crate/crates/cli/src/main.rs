use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

use forest_bounds::bound_math::XiMode;
use forest_bounds::data::{load_dataset, LabelSpec};
use forest_bounds::experiment::{run_on_dataset, run_sweep, ExperimentConfig, Setting, TreeCount};
use forest_bounds::forest::{SplitFeatures, TreeConfig};
use forest_bounds::stats::EvalMode;
use forest_bounds::{Error, Exec};

/// Random forests with PAC-Bayesian bounds on the majority vote.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one forest and report every applicable bound.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "none")]
        max_depth: Depth,
        #[arg(long, value_enum, default_value = "all")]
        features: Features,
    },
    /// Repeat a run over tree depths and feature modes.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated depths; `none` for unlimited.
        #[arg(long, value_delimiter = ',', required = true)]
        depths: Vec<Depth>,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "all,one")]
        features: Vec<Features>,
    },
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long, value_enum, default_value = "bagging")]
    setting: SettingArg,
    /// CSV file with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Label column name (default: last column).
    #[arg(long)]
    label: Option<String>,
    /// Label value mapped to +1 (default: first value in the file).
    #[arg(long)]
    positive: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    /// `auto` or a tree count.
    #[arg(long, default_value = "auto")]
    trees: Trees,
    /// Override the setting's evaluation modes.
    #[arg(long, value_enum)]
    eval_mode: Option<EvalModeArg>,
    /// Use 2 sqrt(n) instead of xi(n) in the primary bounds.
    #[arg(long)]
    two_sqrt_n: bool,
    /// Number of log-spaced margin targets for the C-bound optimizer.
    #[arg(long, default_value_t = 20)]
    mu_grid: usize,
    /// Fixed margin target for the C-bound optimizer; skips the grid.
    #[arg(long)]
    mu: Option<f64>,
    /// Runs with consecutive seeds; the report includes their mean.
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    /// Disable the thread pool.
    #[arg(long)]
    sequential: bool,
    /// JSON report path; the CSV table goes next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SettingArg {
    Bagging,
    Validation,
    Optimize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Features {
    All,
    One,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EvalModeArg {
    Oob,
    OobPlusVal,
    Val,
}

#[derive(Clone, Copy, Debug)]
struct Depth(Option<usize>);

impl FromStr for Depth {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("none") {
            return Ok(Depth(None));
        }
        match s.parse::<usize>() {
            Ok(0) | Err(_) => Err(format!("expected `none` or a positive depth, got {s:?}")),
            Ok(d) => Ok(Depth(Some(d))),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Trees(TreeCount);

impl FromStr for Trees {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Trees(TreeCount::Auto));
        }
        match s.parse::<usize>() {
            Ok(0) | Err(_) => Err(format!("expected `auto` or a positive count, got {s:?}")),
            Ok(m) => Ok(Trees(TreeCount::Fixed(m))),
        }
    }
}

impl From<Features> for SplitFeatures {
    fn from(f: Features) -> Self {
        match f {
            Features::All => SplitFeatures::All,
            Features::One => SplitFeatures::OneRandom,
        }
    }
}

fn config(c: &Common, tree: TreeConfig) -> ExperimentConfig {
    ExperimentConfig {
        setting: match c.setting {
            SettingArg::Bagging => Setting::Bagging,
            SettingArg::Validation => Setting::Validation,
            SettingArg::Optimize => Setting::Optimize,
        },
        seed: c.seed,
        delta: c.delta,
        trees: c.trees.0,
        tree,
        eval_mode: c.eval_mode.map(|m| match m {
            EvalModeArg::Oob => EvalMode::OobOnly,
            EvalModeArg::OobPlusVal => EvalMode::OobPlusVal,
            EvalModeArg::Val => EvalMode::ValOnly,
        }),
        xi_mode: if c.two_sqrt_n { XiMode::TwoSqrtN } else { XiMode::Xi },
        mu_grid_size: c.mu_grid,
        mu: c.mu,
        repeats: c.repeats,
        exec: if c.sequential { Exec::Sequential } else { Exec::default() },
    }
}

fn dataset_name(c: &Common) -> String {
    c.data
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| c.data.display().to_string())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run {
            common,
            max_depth,
            features,
        } => {
            let tree = TreeConfig {
                max_depth: max_depth.0,
                split_features: features.into(),
            };
            let cfg = config(&common, tree);
            cfg.validate()?;
            let ds = load_dataset(&common.data, &label_spec(&common))?;
            let report = run_on_dataset(&cfg, &ds, &dataset_name(&common))?;
            let table = report.write(&common.out)?;
            println!("{}", common.out.display());
            println!("{}", table.display());
        }
        Command::Sweep {
            common,
            depths,
            features,
        } => {
            let cfg = config(&common, TreeConfig::default());
            cfg.validate()?;
            let ds = load_dataset(&common.data, &label_spec(&common))?;
            let depths: Vec<Option<usize>> = depths.iter().map(|d| d.0).collect();
            let modes: Vec<SplitFeatures> = features.into_iter().map(Into::into).collect();
            let report = run_sweep(&cfg, &ds, &dataset_name(&common), &depths, &modes)?;
            let table = report.write(&common.out)?;
            println!("{}", common.out.display());
            println!("{}", table.display());
        }
    }
    Ok(())
}

fn label_spec(c: &Common) -> LabelSpec {
    LabelSpec {
        column: c.label.clone(),
        positive: c.positive.clone(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_and_tree_values() {
        assert_eq!("none".parse::<Depth>().unwrap().0, None);
        assert_eq!("7".parse::<Depth>().unwrap().0, Some(7));
        assert!("0".parse::<Depth>().is_err());
        assert_eq!("auto".parse::<Trees>().unwrap().0, TreeCount::Auto);
        assert_eq!("300".parse::<Trees>().unwrap().0, TreeCount::Fixed(300));
        assert!("-1".parse::<Trees>().is_err());
    }

    #[test]
    fn sweep_lists_split_on_commas() {
        let cli = Cli::try_parse_from([
            "forest-bounds", "sweep", "--data", "x.csv", "--out", "o.json", "--depths", "1,2,none",
            "--features", "one",
        ])
        .unwrap();
        match cli.command {
            Command::Sweep { depths, features, .. } => {
                assert_eq!(depths.iter().map(|d| d.0).collect::<Vec<_>>(), [Some(1), Some(2), None]);
                assert!(matches!(features[..], [Features::One]));
            }
            _ => panic!("expected sweep"),
        }
    }
}
