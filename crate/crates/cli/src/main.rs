//! `sdperl` command-line driver.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime
//! failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sdperl_core::code_metrics::extract_corpus;
use sdperl_core::dataset::{load_feature_matrix, save_feature_matrix, DEFAULT_LABEL_COLUMN};
use sdperl_core::embedder::{build_embeddings, EmbeddingConfig};
use sdperl_core::environment::Mode;
use sdperl_core::report::BestActions;
use sdperl_core::runner::{run_experiment, sweep_feature_count, ExperimentConfig, PheromoneMode};
use sdperl_core::stats::independent_t_test;
use sdperl_core::Error;

#[derive(Parser)]
#[command(name = "sdperl", version, about = "Reinforcement-learning feature selection for defect prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute static code metrics for a labelled source tree.
    ExtractMetrics {
        #[arg(long)]
        root: PathBuf,
        /// CSV with a `path` column and a label column.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = DEFAULT_LABEL_COLUMN)]
        label_column: String,
    },
    /// Build per-feature embeddings from a feature matrix.
    Embed {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 5)]
        k_start: usize,
        #[arg(long, default_value_t = 14)]
        k_end: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Manifest path; defaults to the output path with a `.json` extension.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Cluster the raw statistics instead of z-scored ones.
        #[arg(long)]
        raw_stats: bool,
        #[arg(long, default_value = DEFAULT_LABEL_COLUMN)]
        label_column: String,
    },
    /// Train the agent and evaluate the selected subset.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Subset size.
        #[arg(long)]
        m: Option<usize>,
    },
    /// t-test on the best evaluation scores of two groups of run directories.
    Compare {
        #[arg(long = "a", num_args = 2.., required = true)]
        group_a: Vec<PathBuf>,
        #[arg(long = "b", num_args = 2.., required = true)]
        group_b: Vec<PathBuf>,
    },
    /// One run per subset size.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated subset sizes.
        #[arg(long = "m", value_delimiter = ',', required = true)]
        m_values: Vec<usize>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    pheromone: Option<String>,
    #[arg(long)]
    timesteps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    train_data: Option<PathBuf>,
    #[arg(long)]
    test_data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    plots: bool,
}

impl RunArgs {
    fn config(&self, m: Option<usize>) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path).map_err(as_config_error)?,
            None => ExperimentConfig::default(),
        };
        if let Some(mode) = &self.mode {
            cfg.mode = mode.parse::<Mode>()?;
        }
        if let Some(p) = &self.pheromone {
            cfg.pheromone_mode = p.parse::<PheromoneMode>()?;
        }
        if let Some(t) = self.timesteps {
            cfg.timesteps = t;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(p) = &self.train_data {
            cfg.train_data = Some(p.clone());
        }
        if let Some(p) = &self.test_data {
            cfg.test_data = Some(p.clone());
        }
        if let Some(p) = &self.out {
            cfg.output_dir = Some(p.clone());
        }
        if let Some(p) = &self.resume {
            cfg.resume_from = Some(p.clone());
        }
        if let Some(m) = m {
            cfg.m = m;
        }
        cfg.plots |= self.plots;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Failures reading the config file itself are configuration errors.
fn as_config_error(e: Error) -> Error {
    match e.root() {
        Error::Io { .. } | Error::Json(_) => Error::Config(e.to_string()),
        _ => e,
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Config(_) => 2,
        Error::Data(_) | Error::Csv(_) | Error::Io { .. } | Error::Json(_) => 3,
        _ => 4,
    }
}

fn create_parent(path: &Path) -> Result<(), Error> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        None => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    create_parent(path)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::ExtractMetrics {
            root,
            labels,
            out,
            label_column,
        } => {
            let matrix = extract_corpus(&root, &labels, &label_column)?;
            create_parent(&out)?;
            save_feature_matrix(&matrix, &out, &label_column)?;
            log::info!("wrote {} rows to {}", matrix.n_rows(), out.display());
        }
        Command::Embed {
            input,
            k_start,
            k_end,
            seed,
            out,
            manifest,
            raw_stats,
            label_column,
        } => {
            let matrix = load_feature_matrix(&input, &label_column)?;
            let cfg = EmbeddingConfig {
                k_start,
                k_end,
                seed,
                standardize: !raw_stats,
            };
            if k_start < 2 || k_start > k_end || k_end > matrix.n_features() {
                return Err(Error::Config(format!(
                    "need 2 <= k_start <= k_end <= {} features, got {k_start}..={k_end}",
                    matrix.n_features()
                )));
            }
            let table = build_embeddings(&matrix, &cfg)?;
            write_text(&out, &table.to_csv(matrix.feature_names()))?;
            let manifest = manifest.unwrap_or_else(|| out.with_extension("json"));
            write_text(&manifest, &serde_json::to_string_pretty(&table.manifest())?)?;
            log::info!("wrote {} embeddings of dim {}", table.n_features(), table.dim);
        }
        Command::Train { run, m } => {
            let cfg = run.config(m)?;
            let report = run_experiment(&cfg)?;
            let m = &report.test_metrics;
            println!(
                "{}",
                serde_json::to_string_pretty(&serde_json::json!({
                    "best_eval_score": report.best_score,
                    "best_episode": report.best_episode,
                    "episodes": report.episodes.len(),
                    "test": m,
                    "output_dir": cfg.output_dir,
                }))?
            );
        }
        Command::Compare { group_a, group_b } => {
            let scores = |dirs: &[PathBuf]| -> Result<Vec<f64>, Error> {
                dirs.iter()
                    .map(|d| BestActions::load(d).map(|b| b.best_eval_score))
                    .collect()
            };
            let (a, b) = (scores(&group_a)?, scores(&group_b)?);
            let r = independent_t_test(&a, &b)?;
            println!("{}", serde_json::to_string_pretty(&serde_json::json!({
                "n_a": a.len(),
                "n_b": b.len(),
                "t": r.t,
                "p": r.p,
                "df": r.df,
                "cohens_d": r.cohens_d,
            }))?);
        }
        Command::Sweep { run, m_values } => {
            // the config's own m only has to be valid; the sweep overrides it
            let cfg = run.config(m_values.iter().copied().min())?;
            let load = |p: &Option<PathBuf>, key: &str| -> Result<_, Error> {
                let p = p
                    .as_ref()
                    .ok_or_else(|| Error::Config(format!("'{key}' is required")))?;
                load_feature_matrix(p, &cfg.label_column)
            };
            let train = load(&cfg.train_data, "train_data")?;
            let test = load(&cfg.test_data, "test_data")?;
            let sweep = sweep_feature_count(&cfg, &m_values, &train, &test)?;
            print!("{}", sdperl_core::report::sweep_csv(&sweep));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
