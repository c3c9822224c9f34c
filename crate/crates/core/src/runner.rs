//! Experiment orchestration.
//!
//! A run splits the earlier project version into train and evaluation parts,
//! balances the training part with SMOTE, trains the agent for a budget of
//! agent steps, picks the test-time subset, then fits the final classifier on
//! the whole earlier version and scores it on the later version. The later
//! version is touched only in that last step.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::agent::{
    sample_action, NetworkConfig, PolicyParams, PpoConfig, PpoLearner, RolloutBuffer, Role,
    Transition, UpdateDiagnostics,
};
use crate::classifier::{
    evaluate, train_classifier, ClassifierConfig, ClassifierKind, EvalMetrics, Oracle,
    RewardMetric, TrainedClassifier,
};
use crate::dataset::{
    load_feature_matrix, resplit_until_defective, smote_oversample, FeatureMatrix, SplitConfig,
    DEFAULT_LABEL_COLUMN, DEFAULT_SMOTE_K,
};
use crate::embedder::{build_embeddings, EmbeddingConfig};
use crate::environment::{steps_per_episode, Environment, FeatureSpace, Mode};
use crate::error::{Error, Result};
use crate::pheromone::{PheromoneTable, DEFAULT_TEMPERATURE};
use crate::rng::{derive_seed, stream_rng, stream_seed, Stream};
use crate::stats::{independent_t_test, TTest};

/// Test-time subset policy, which also decides whether training episodes are
/// seeded from the pheromone table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PheromoneMode {
    /// Unseeded training; test with the best training episode.
    Vanilla,
    /// Seeded training; test with the top-M pheromone levels.
    #[default]
    Pheromone,
    /// Seeded training; test with the best training episode.
    #[serde(alias = "best-action")]
    PheromoneBestAction,
}

impl PheromoneMode {
    pub fn seeds_episodes(self) -> bool {
        self != PheromoneMode::Vanilla
    }
}

impl std::fmt::Display for PheromoneMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PheromoneMode::Vanilla => "vanilla",
            PheromoneMode::Pheromone => "pheromone",
            PheromoneMode::PheromoneBestAction => "pheromone-best-action",
        })
    }
}

impl std::str::FromStr for PheromoneMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(PheromoneMode::Vanilla),
            "pheromone" => Ok(PheromoneMode::Pheromone),
            "best-action" | "pheromone-best-action" => Ok(PheromoneMode::PheromoneBestAction),
            other => Err(Error::Config(format!(
                "unknown pheromone mode '{other}' (expected vanilla, pheromone or best-action)"
            ))),
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simple" => Ok(Mode::Simple),
            "custom" => Ok(Mode::Custom),
            other => Err(Error::Config(format!(
                "unknown mode '{other}' (expected simple or custom)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub pheromone_mode: PheromoneMode,
    /// Subset size.
    pub m: usize,
    /// Budget of agent steps; only whole episodes are run.
    pub timesteps: usize,
    pub k_start: usize,
    pub k_end: usize,
    /// Z-score feature statistics before clustering.
    pub standardize_stats: bool,
    pub seed: u64,
    /// Earlier project version: training and evaluation splits.
    pub train_data: Option<PathBuf>,
    /// Later project version: final test set.
    pub test_data: Option<PathBuf>,
    pub label_column: String,
    pub eval_fraction: f64,
    pub smote_k: usize,
    pub classifier: ClassifierKind,
    pub metric: RewardMetric,
    /// Softmax temperature for pheromone seeding.
    pub temperature: f64,
    pub output_dir: Option<PathBuf>,
    /// Policy checkpoint to start from.
    pub resume_from: Option<PathBuf>,
    /// Also write SVG charts next to the plot-data CSVs.
    pub plots: bool,
    #[serde(flatten)]
    pub network: NetworkConfig,
    #[serde(flatten)]
    pub ppo: PpoConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Custom,
            pheromone_mode: PheromoneMode::Pheromone,
            m: 20,
            timesteps: 30_000,
            k_start: 5,
            k_end: 14,
            standardize_stats: true,
            seed: 0,
            train_data: None,
            test_data: None,
            label_column: DEFAULT_LABEL_COLUMN.to_string(),
            eval_fraction: 0.2,
            smote_k: DEFAULT_SMOTE_K,
            classifier: ClassifierKind::LogisticRegression,
            metric: RewardMetric::F1,
            temperature: DEFAULT_TEMPERATURE,
            output_dir: None,
            resume_from: None,
            plots: false,
            network: NetworkConfig::default(),
            ppo: PpoConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses a flat TOML document; unknown keys are rejected.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        let known = serde_json::to_value(Self::default())?;
        let known = known.as_object().expect("config serializes to an object");
        let unknown: Vec<&str> = table
            .keys()
            .map(String::as_str)
            .filter(|k| !known.contains_key(*k))
            .collect();
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown config keys: {}", unknown.join(", "))));
        }
        let cfg: Self = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("invalid config: {e}")))?;
        Ok(cfg)
    }

    /// Reads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| e.context(path.display().to_string()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.train_data,
            &mut cfg.test_data,
            &mut cfg.output_dir,
            &mut cfg.resume_from,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Checks constraints that do not depend on the data.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.m == 0 {
            return fail("m must be positive".into());
        }
        if self.timesteps < self.m {
            return fail(format!("timesteps ({}) must be at least m ({})", self.timesteps, self.m));
        }
        if self.mode == Mode::Custom && (self.k_start < 2 || self.k_start > self.k_end) {
            return fail(format!(
                "custom mode needs 2 <= k_start <= k_end, got {}..={}",
                self.k_start, self.k_end
            ));
        }
        if !(self.eval_fraction > 0.0 && self.eval_fraction < 1.0) {
            return fail(format!("eval_fraction must be in (0, 1), got {}", self.eval_fraction));
        }
        if self.smote_k == 0 {
            return fail("smote_k must be positive".into());
        }
        if !(self.temperature > 0.0) {
            return fail(format!("temperature must be positive, got {}", self.temperature));
        }
        let p = &self.ppo;
        if p.epochs == 0 || p.episodes_per_update == 0 || p.minibatch_size == 0 {
            return fail("epochs, episodes_per_update and minibatch_size must be positive".into());
        }
        if !(p.clip_range > 0.0) || !(p.learning_rate >= 0.0) || !(p.max_grad_norm > 0.0) {
            return fail("clip_range and max_grad_norm must be positive, learning_rate non-negative".into());
        }
        let n = &self.network;
        if n.layers == 0 || n.heads == 0 || n.hidden == 0 || n.hidden % n.heads != 0 {
            return fail(format!(
                "network needs positive layers/heads and hidden divisible by heads, got {n:?}"
            ));
        }
        Ok(())
    }

    pub fn oracle(&self) -> Oracle {
        Oracle {
            classifier: ClassifierConfig {
                kind: self.classifier,
                ..ClassifierConfig::default()
            },
            metric: self.metric,
        }
    }

    pub fn steps_per_episode(&self) -> usize {
        steps_per_episode(self.m, self.pheromone_mode.seeds_episodes())
    }

    /// Agent steps actually taken: whole episodes only.
    pub fn effective_timesteps(&self) -> usize {
        let spe = self.steps_per_episode();
        self.timesteps / spe * spe
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    /// Final subset in selection order, seeded features first.
    pub subset: Vec<usize>,
    pub seeded_count: usize,
    pub initial_score: f64,
    pub final_score: f64,
    /// Sum of the episode's TD rewards.
    pub reward_sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub timestep: usize,
    pub episode: usize,
    pub feature: usize,
    pub td_reward: f64,
    pub score: f64,
    pub f1: f64,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    /// Episodes completed when the update ran.
    pub after_episode: usize,
    pub diagnostics: UpdateDiagnostics,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub feature_names: Vec<String>,
    /// Seed the splitter ended up using.
    pub split_seed: u64,
    pub best_subset: Vec<usize>,
    pub best_score: f64,
    pub best_episode: usize,
    pub episodes: Vec<EpisodeRecord>,
    pub steps: Vec<StepRecord>,
    pub updates: Vec<UpdateRecord>,
    pub pheromone: PheromoneTable,
    /// Subset used for the final classifier.
    pub test_subset: Vec<usize>,
    pub test_metrics: EvalMetrics,
    pub model: TrainedClassifier,
    pub policy: PolicyParams,
    pub wall_clock_secs: f64,
}

impl RunReport {
    pub fn total_steps(&self) -> usize {
        self.steps.len()
    }

    /// Sum of all TD rewards of the run.
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.td_reward).sum()
    }
}

/// Index of the highest-scoring episode; the earliest wins ties.
pub fn best_episode(history: &[EpisodeRecord]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, e) in history.iter().enumerate() {
        if best.is_none_or(|b| e.final_score > history[b].final_score) {
            best = Some(i);
        }
    }
    best
}

/// The subset the final classifier is trained on.
pub fn select_test_features(
    mode: PheromoneMode,
    table: &PheromoneTable,
    history: &[EpisodeRecord],
    m: usize,
) -> Result<Vec<usize>> {
    match mode {
        PheromoneMode::Pheromone => table.top_k(m),
        PheromoneMode::Vanilla | PheromoneMode::PheromoneBestAction => best_episode(history)
            .map(|i| history[i].subset.clone())
            .ok_or_else(|| Error::InvalidArgument("no completed episodes to choose from".into())),
    }
}

/// Fits the classifier on the whole (SMOTE-balanced) earlier version and
/// scores it on the later version.
pub fn final_evaluation(
    config: &ExperimentConfig,
    train_version: &FeatureMatrix,
    test_version: &FeatureMatrix,
    subset: &[usize],
) -> Result<(TrainedClassifier, EvalMetrics)> {
    let balanced = smote_oversample(
        train_version,
        config.smote_k,
        derive_seed(stream_seed(config.seed, Stream::Smote), 1),
    )?;
    let model = train_classifier(&balanced, subset, &config.oracle().classifier)?;
    let metrics = evaluate(&model, test_version)?;
    Ok((model, metrics))
}

fn check_same_features(a: &FeatureMatrix, b: &FeatureMatrix) -> Result<()> {
    if a.feature_names() != b.feature_names() {
        return Err(Error::Data(
            "train and test versions must have the same feature columns in the same order".into(),
        ));
    }
    Ok(())
}

/// Loads the configured datasets, runs, and writes the report if an output
/// directory is set.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    let path = |p: &Option<PathBuf>, key: &str| {
        p.clone()
            .ok_or_else(|| Error::Config(format!("'{key}' is required")))
    };
    let train_path = path(&config.train_data, "train_data")?;
    let test_path = path(&config.test_data, "test_data")?;
    let train_version = load_feature_matrix(&train_path, &config.label_column)?;
    let test_version = load_feature_matrix(&test_path, &config.label_column)?;
    let report = run_experiment_on(config, &train_version, &test_version)?;
    if let Some(dir) = &config.output_dir {
        crate::report::emit_report(&report, dir)?;
    }
    Ok(report)
}

/// Runs on in-memory datasets without writing anything.
pub fn run_experiment_on(
    config: &ExperimentConfig,
    train_version: &FeatureMatrix,
    test_version: &FeatureMatrix,
) -> Result<RunReport> {
    config.validate()?;
    check_same_features(train_version, test_version)?;
    let started = Instant::now();
    let n = train_version.n_features();
    if config.m > n {
        return Err(Error::Config(format!("m = {} exceeds the {n} features", config.m)));
    }
    if config.mode == Mode::Custom && config.k_end > n {
        return Err(Error::Config(format!("k_end = {} exceeds the {n} features", config.k_end)));
    }

    let split = resplit_until_defective(
        train_version,
        SplitConfig {
            eval_fraction: config.eval_fraction,
            seed: stream_seed(config.seed, Stream::Split),
        },
    )
    .map_err(|e| e.context("splitting the training version"))?;
    let train = smote_oversample(&split.train, config.smote_k, stream_seed(config.seed, Stream::Smote))
        .map_err(|e| e.context("balancing the training split"))?;
    let space = match config.mode {
        Mode::Simple => FeatureSpace::simple(n)?,
        Mode::Custom => {
            let table = build_embeddings(
                &train,
                &EmbeddingConfig {
                    k_start: config.k_start,
                    k_end: config.k_end,
                    seed: config.seed,
                    standardize: config.standardize_stats,
                },
            )
            .map_err(|e| e.context("building embeddings"))?;
            FeatureSpace::custom(&table)?
        }
    };
    let seeded = config.pheromone_mode.seeds_episodes();
    let env = Environment::new(space, train, split.eval.clone(), config.oracle(), config.m)?
        .with_seeding(seeded, config.temperature);
    let dim = env.space.dim();

    let mut policy = PolicyParams::new(
        config.network,
        dim,
        config.m,
        dim,
        &mut stream_rng(config.seed, Stream::PolicyInit),
    )?;
    if let Some(path) = &config.resume_from {
        policy = PolicyParams::load(path, &policy.actor_shape)
            .map_err(|e| e.context(format!("resuming from {}", path.display())))?;
    }
    let mut learner = PpoLearner::new(config.ppo, &policy);
    let mut table = PheromoneTable::new(n)?;
    let mut seed_rng = stream_rng(config.seed, Stream::PheromoneSeed);
    let mut action_rng = stream_rng(config.seed, Stream::ActionSample);
    let mut batch_rng = stream_rng(config.seed, Stream::Minibatch);

    let n_episodes = config.effective_timesteps() / config.steps_per_episode();
    let mut buffer = RolloutBuffer::new();
    let mut episodes = Vec::with_capacity(n_episodes);
    let mut steps = Vec::with_capacity(config.effective_timesteps());
    let mut updates = Vec::new();
    log::info!(
        "run: mode={} pheromone={} m={} episodes={} steps/episode={}",
        config.mode,
        config.pheromone_mode,
        config.m,
        n_episodes,
        config.steps_per_episode()
    );

    for episode in 0..n_episodes {
        let mut state = env.reset(&table, &mut seed_rng)?;
        let mut reward_sum = 0.0;
        while !state.is_done() {
            let slots = state.slots.clone();
            let filled = state.filled();
            let mean = policy.forward(&slots, filled, Role::Actor)?;
            let value = policy.value(&slots, filled)?;
            let (action, log_prob) = sample_action(&mean, &policy.log_std, &mut action_rng);
            let outcome = env
                .step(&mut state, &action, seeded.then_some(&mut table))
                .map_err(|e| e.context(format!("episode {episode}")))?;
            reward_sum += outcome.td_reward;
            steps.push(StepRecord {
                timestep: steps.len() + 1,
                episode,
                feature: outcome.feature,
                td_reward: outcome.td_reward,
                score: outcome.score,
                f1: outcome.metrics.f1,
                auc: outcome.metrics.auc,
            });
            buffer.push(Transition {
                slots,
                filled,
                action,
                log_prob,
                value,
                reward: outcome.td_reward,
                done: outcome.done,
            });
        }
        episodes.push(EpisodeRecord {
            episode,
            subset: state.selected.clone(),
            seeded_count: state.seeded_count,
            initial_score: state.initial_score,
            final_score: state.score,
            reward_sum,
        });
        let last = episode + 1 == n_episodes;
        if (episode + 1) % config.ppo.episodes_per_update == 0 || last {
            buffer.finish(config.ppo.gamma, config.ppo.gae_lambda, config.ppo.normalize_advantages);
            let diagnostics = learner
                .update(&mut policy, &buffer, &mut batch_rng)
                .map_err(|e| e.context(format!("policy update after episode {episode}")))?;
            log::debug!("episode {episode}: {diagnostics:?}");
            updates.push(UpdateRecord {
                after_episode: episode + 1,
                diagnostics,
            });
            buffer.clear();
        }
    }

    let best = best_episode(&episodes).expect("at least one episode runs");
    let test_subset = select_test_features(config.pheromone_mode, &table, &episodes, config.m)?;
    let (model, test_metrics) = final_evaluation(config, train_version, test_version, &test_subset)
        .map_err(|e| e.context("final evaluation"))?;
    log::info!(
        "run done: best eval score {:.4} (episode {}), test f1 {:.4}",
        episodes[best].final_score,
        best,
        test_metrics.f1
    );
    Ok(RunReport {
        config: config.clone(),
        feature_names: train_version.feature_names().to_vec(),
        split_seed: split.used_seed,
        best_subset: episodes[best].subset.clone(),
        best_score: episodes[best].final_score,
        best_episode: best,
        episodes,
        steps,
        updates,
        pheromone: table,
        test_subset,
        test_metrics,
        model,
        policy,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}

/// Independent t-test on the best evaluation scores of two groups of runs.
pub fn compare_settings(a: &[RunReport], b: &[RunReport]) -> Result<TTest> {
    let scores = |g: &[RunReport]| g.iter().map(|r| r.best_score).collect::<Vec<_>>();
    independent_t_test(&scores(a), &scores(b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub m: usize,
    pub seed: u64,
    pub best_score: f64,
    pub metrics: EvalMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub rows: Vec<SweepRow>,
    /// Values of M that appeared more than once and were dropped.
    pub duplicates: Vec<usize>,
}

/// Seed of the sweep run for subset size `m`.
pub fn sweep_seed(seed: u64, m: usize) -> u64 {
    derive_seed(stream_seed(seed, Stream::Sweep), m as u64)
}

/// One run per distinct M, in first-seen order. With an output directory set,
/// each run writes to `m_<M>/` below it and the table goes to
/// `metrics_vs_m.csv`.
pub fn sweep_feature_count(
    config: &ExperimentConfig,
    m_values: &[usize],
    train_version: &FeatureMatrix,
    test_version: &FeatureMatrix,
) -> Result<Sweep> {
    if m_values.is_empty() {
        return Err(Error::Config("sweep needs at least one value of m".into()));
    }
    let mut seen = BTreeSet::new();
    let mut distinct = Vec::new();
    let mut duplicates = Vec::new();
    for &m in m_values {
        if seen.insert(m) {
            distinct.push(m);
        } else {
            log::warn!("m = {m} listed more than once; running it once");
            duplicates.push(m);
        }
    }
    let mut rows = Vec::with_capacity(distinct.len());
    for m in distinct {
        let cfg = ExperimentConfig {
            m,
            seed: sweep_seed(config.seed, m),
            output_dir: None,
            ..config.clone()
        };
        let report = run_experiment_on(&cfg, train_version, test_version)
            .map_err(|e| e.context(format!("sweep point m = {m}")))?;
        if let Some(dir) = &config.output_dir {
            crate::report::emit_report(&report, &dir.join(format!("m_{m}")))?;
        }
        rows.push(SweepRow {
            m,
            seed: cfg.seed,
            best_score: report.best_score,
            metrics: report.test_metrics,
        });
    }
    let sweep = Sweep { rows, duplicates };
    if let Some(dir) = &config.output_dir {
        crate::report::emit_sweep(&sweep, dir, config.plots)?;
    }
    Ok(sweep)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(episode: usize, score: f64) -> EpisodeRecord {
        EpisodeRecord {
            episode,
            subset: vec![episode, episode + 10],
            seeded_count: 0,
            initial_score: 0.0,
            final_score: score,
            reward_sum: score,
        }
    }

    #[test]
    fn best_episode_keeps_earliest_max() {
        let h = [record(0, 0.2), record(1, 0.7), record(2, 0.5), record(3, 0.7)];
        assert_eq!(best_episode(&h), Some(1));
        assert_eq!(best_episode(&[]), None);
    }

    #[test]
    fn test_subset_by_mode() {
        let mut table = PheromoneTable::new(20).unwrap();
        table.update(5, 1.0).unwrap();
        table.update(7, 2.0).unwrap();
        let h = [record(0, 0.1), record(1, 0.9)];
        assert_eq!(select_test_features(PheromoneMode::Vanilla, &table, &h, 2).unwrap(), vec![1, 11]);
        assert_eq!(
            select_test_features(PheromoneMode::PheromoneBestAction, &table, &h, 2).unwrap(),
            vec![1, 11]
        );
        assert_eq!(select_test_features(PheromoneMode::Pheromone, &table, &h, 2).unwrap(), vec![7, 5]);
        assert!(select_test_features(PheromoneMode::Vanilla, &table, &[], 2).is_err());
    }

    #[test]
    fn mode_names() {
        for s in ["vanilla", "pheromone", "best-action"] {
            let m: PheromoneMode = s.parse().unwrap();
            assert!(m.to_string().ends_with(s));
        }
        assert!("pheromones".parse::<PheromoneMode>().is_err());
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let err = ExperimentConfig::from_toml_str("m = 5\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus"));
        let cfg = ExperimentConfig::from_toml_str(
            "m = 5\nmode = \"simple\"\npheromone_mode = \"best-action\"\ngamma = 0.9\nhidden = 8\n",
        )
        .unwrap();
        assert_eq!(cfg.m, 5);
        assert_eq!(cfg.mode, Mode::Simple);
        assert_eq!(cfg.pheromone_mode, PheromoneMode::PheromoneBestAction);
        assert_eq!(cfg.ppo.gamma, 0.9);
        assert_eq!(cfg.network.hidden, 8);
        assert_eq!(cfg.timesteps, 30_000);
    }

    #[test]
    fn effective_budget() {
        let cfg = ExperimentConfig { m: 20, timesteps: 100, ..Default::default() };
        assert_eq!(cfg.steps_per_episode(), 14);
        assert_eq!(cfg.effective_timesteps(), 98);
        let cfg = ExperimentConfig { pheromone_mode: PheromoneMode::Vanilla, ..cfg };
        assert_eq!(cfg.effective_timesteps(), 100);
    }
}
