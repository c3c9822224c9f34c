//! Helpers shared by the integration test targets.

#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sdperl_core::code_metrics::{MetricVector, METRIC_NAMES};

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/metrics")
}

/// Snippet names with a `.java` source and a `.json` expectation.
pub fn golden_cases() -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(golden_dir())
        .expect("golden dir")
        .filter_map(|e| {
            let p = e.ok()?.path();
            (p.extension()? == "java").then(|| p.file_stem()?.to_str().map(str::to_owned))?
        })
        .collect();
    names.sort();
    names
}

/// Expected metric values; ratios may be written as "num/den".
pub fn golden_expected(name: &str) -> [f64; 20] {
    let text = fs::read_to_string(golden_dir().join(format!("{name}.json"))).expect("golden json");
    let v: serde_json::Value = serde_json::from_str(&text).expect("valid json");
    let mut out = [0.0; 20];
    for (slot, key) in out.iter_mut().zip(METRIC_NAMES) {
        *slot = match &v[key] {
            serde_json::Value::Number(n) => n.as_f64().expect("number"),
            serde_json::Value::String(s) => {
                let (a, b) = s.split_once('/').expect("ratio");
                a.trim().parse::<f64>().unwrap() / b.trim().parse::<f64>().unwrap()
            }
            other => panic!("{name}: bad value for {key}: {other}"),
        };
    }
    out
}

pub fn golden_source(name: &str) -> String {
    fs::read_to_string(golden_dir().join(format!("{name}.java"))).expect("golden source")
}

/// Mismatching metric names for one golden case.
pub fn golden_mismatches(name: &str, got: &MetricVector) -> Vec<String> {
    let want = golden_expected(name);
    METRIC_NAMES
        .iter()
        .zip(want.iter().zip(got.to_array()))
        .filter(|(_, (w, g))| *w != g)
        .map(|(k, (w, g))| format!("{k}: want {w}, got {g}"))
        .collect()
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct LineCounts {
    pub total: usize,
    pub blank: usize,
    pub code: usize,
    pub comment_only: usize,
}

/// Line classification written independently of the library lexer: walks
/// one line at a time, carrying only whether a block comment is open.
/// String and char literals end at their closing quote or at the line end.
pub fn classify_lines(source: &str) -> LineCounts {
    let mut counts = LineCounts::default();
    let mut in_block = false;
    let mut lines: Vec<&str> = source.split('\n').collect();
    if source.is_empty() || source.ends_with('\n') {
        lines.pop();
    }
    for line in lines {
        counts.total += 1;
        if line.trim().is_empty() {
            counts.blank += 1;
            continue;
        }
        let b = line.as_bytes();
        let mut code = false;
        let mut i = 0;
        while i < b.len() {
            if in_block {
                if b[i] == b'*' && b.get(i + 1) == Some(&b'/') {
                    in_block = false;
                    i += 2;
                } else {
                    i += 1;
                }
                continue;
            }
            match b[i] {
                b'/' if b.get(i + 1) == Some(&b'/') => break,
                b'/' if b.get(i + 1) == Some(&b'*') => {
                    in_block = true;
                    i += 2;
                }
                q @ (b'"' | b'\'') => {
                    code = true;
                    i += 1;
                    while i < b.len() && b[i] != q {
                        i += if b[i] == b'\\' { 2 } else { 1 };
                    }
                    i += 1;
                }
                c => {
                    if !c.is_ascii_whitespace() {
                        code = true;
                    }
                    i += 1;
                }
            }
        }
        if code {
            counts.code += 1;
        } else {
            counts.comment_only += 1;
        }
    }
    counts
}

/// Random Java-flavoured text dense in comment and quote markers.
pub fn fuzz_source(rng: &mut ChaCha8Rng) -> String {
    const PIECES: &[&str] = &[
        "/", "*", "//", "/*", "*/", "\"", "'", "\\", "\n", "\n", "\n", " ", " ", "\t", "int x", "=",
        ";", "for", "(", ")", "{", "}", "foo.bar(1)", "@A", "0x1F", "\r", "  ", "if", "class",
    ];
    let n = rng.random_range(0..80);
    (0..n).map(|_| PIECES[rng.random_range(0..PIECES.len())]).collect()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Whether `p` lies on the closed segment from `a` to `b`.
pub fn on_segment(p: &[f64], a: &[f64], b: &[f64]) -> bool {
    let scale = a.iter().chain(b).fold(1.0_f64, |m, v| m.max(v.abs()));
    let tol = 1e-9 * scale;
    let (j, span) = a
        .iter()
        .zip(b)
        .map(|(x, y)| y - x)
        .enumerate()
        .fold((0, 0.0_f64), |(bj, bs), (j, d)| if d.abs() > bs.abs() { (j, d) } else { (bj, bs) });
    if span.abs() <= tol {
        return p.iter().zip(a).all(|(x, y)| (x - y).abs() <= tol);
    }
    let u = (p[j] - a[j]) / span;
    (-1e-12..=1.0 + 1e-12).contains(&u)
        && p.iter()
            .zip(a.iter().zip(b))
            .all(|(x, (lo, hi))| (x - (lo + u * (hi - lo))).abs() <= tol)
}

/// Checks an oversampled matrix against its input: originals kept in place,
/// classes balanced, synthetic rows minority-labelled and each on a segment
/// between a minority row and one of its `k` nearest minority rows.
pub fn smote_violations(
    input: &sdperl_core::dataset::FeatureMatrix,
    output: &sdperl_core::dataset::FeatureMatrix,
    k: usize,
) -> Vec<String> {
    let mut bad = Vec::new();
    let (pos, neg) = (input.count_label(1), input.count_label(0));
    let majority = pos.max(neg);
    let minority_label = u8::from(pos < neg);
    if output.count_label(0) != majority || output.count_label(1) != majority {
        bad.push(format!(
            "unbalanced: {} benign, {} defective, want {majority} each",
            output.count_label(0),
            output.count_label(1)
        ));
    }
    for r in 0..input.n_rows() {
        if r >= output.n_rows() || output.row(r) != input.row(r) || output.label(r) != input.label(r) {
            bad.push(format!("original row {r} changed"));
        }
    }
    let minority: Vec<&[f64]> = (0..input.n_rows())
        .filter(|&r| input.label(r) == minority_label)
        .map(|r| input.row(r))
        .collect();
    let k = k.min(minority.len().saturating_sub(1)).max(1);
    // a neighbour qualifies when no more than k-1 others are strictly closer
    let is_neighbour = |i: usize, j: usize| {
        let d = dist2(minority[i], minority[j]);
        let closer = (0..minority.len())
            .filter(|&o| o != i && dist2(minority[i], minority[o]) < d)
            .count();
        i != j && closer < k
    };
    for r in input.n_rows()..output.n_rows() {
        if output.label(r) != minority_label {
            bad.push(format!("synthetic row {r} has the majority label"));
            continue;
        }
        let p = output.row(r);
        let found = (0..minority.len()).any(|i| {
            (0..minority.len()).any(|j| is_neighbour(i, j) && on_segment(p, minority[i], minority[j]))
        });
        if !found {
            bad.push(format!("synthetic row {r} is on no neighbour segment"));
        }
    }
    bad
}

/// Random two-class matrix with a strict minority of at least two rows.
pub fn random_imbalanced(rng: &mut ChaCha8Rng) -> sdperl_core::dataset::FeatureMatrix {
    let n_min = rng.random_range(2..10);
    let n_maj = rng.random_range(n_min + 1..40);
    let dim = rng.random_range(1..6);
    let minority_label: u8 = rng.random_range(0..2);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n_min + n_maj {
        let label = if i < n_min { minority_label } else { 1 - minority_label };
        // a few exact duplicates exercise zero-length segments
        let row: Vec<f64> = if i > 0 && i < n_min && rng.random_bool(0.1) {
            rows[i - 1].clone()
        } else {
            (0..dim).map(|_| rng.random_range(-50.0..50.0)).collect()
        };
        rows.push(row);
        labels.push(label);
    }
    let names = (0..dim).map(|i| format!("x{i}")).collect();
    sdperl_core::dataset::FeatureMatrix::new(names, rows, labels, None).unwrap()
}

pub mod gradcheck {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use sdperl_core::agent::network::NetworkConfig;
    use sdperl_core::agent::policy::log_prob_on_tape;
    use sdperl_core::agent::ppo::{flat_gradient, ppo_loss, Sample};
    use sdperl_core::agent::{network, PolicyParams, PpoConfig, Tape, Tensor};

    pub const H: f64 = 1e-4;
    /// Denominator floor of the relative error, so that two gradients that
    /// are both numerically zero compare as equal.
    pub const REL_FLOOR: f64 = 1e-6;

    pub const SLOT_DIM: usize = 3;
    pub const SLOTS: usize = 4;
    pub const ACTION_DIM: usize = 3;

    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub enum Target {
        CriticValue,
        ActorLogProb,
        PpoLoss,
    }

    pub fn toy_policy(seed: u64) -> PolicyParams {
        let cfg = NetworkConfig { layers: 1, heads: 2, hidden: 4, ff_width: 8 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = PolicyParams::new(cfg, SLOT_DIM, SLOTS, ACTION_DIM, &mut rng).unwrap();
        // move away from the small-gain initialisation so every path carries signal
        p.for_each_value_mut(|_, v| *v += rng.random_range(-0.3..0.3));
        p
    }

    pub struct Problem {
        pub slots: Vec<Tensor>,
        pub filled: Vec<usize>,
        pub actions: Vec<Vec<f64>>,
        pub old_log_probs: Vec<f64>,
        pub advantages: Vec<f64>,
        pub returns: Vec<f64>,
    }

    pub fn random_problem(rng: &mut ChaCha8Rng, batch: usize) -> Problem {
        let mut p = Problem {
            slots: vec![],
            filled: vec![],
            actions: vec![],
            old_log_probs: vec![],
            advantages: vec![],
            returns: vec![],
        };
        for _ in 0..batch {
            let filled = rng.random_range(0..SLOTS);
            let mut t = Tensor::zeros(SLOTS, SLOT_DIM);
            for v in &mut t.data[..filled * SLOT_DIM] {
                *v = rng.random_range(-1.0..1.0);
            }
            p.slots.push(t);
            p.filled.push(filled);
            p.actions.push((0..ACTION_DIM).map(|_| rng.random_range(-1.5..1.5)).collect());
            p.old_log_probs.push(0.0);
            p.advantages.push(rng.random_range(-1.0..1.0));
            p.returns.push(rng.random_range(-1.0..1.0));
        }
        p
    }

    fn samples(p: &Problem) -> Vec<Sample<'_>> {
        (0..p.slots.len())
            .map(|i| Sample {
                slots: &p.slots[i],
                filled: p.filled[i],
                action: &p.actions[i],
                old_log_prob: p.old_log_probs[i],
                advantage: p.advantages[i],
                ret: p.returns[i],
            })
            .collect()
    }

    /// Value and flat gradient of the target at `params`.
    pub fn evaluate(target: Target, params: &PolicyParams, prob: &Problem, cfg: &PpoConfig) -> (f64, Vec<f64>) {
        let mut tape = Tape::new();
        let vars = params.to_tape(&mut tape);
        let root = match target {
            Target::CriticValue => {
                network::forward(&mut tape, &params.critic_shape, &vars.critic, &prob.slots[0], prob.filled[0])
                    .unwrap()
            }
            Target::ActorLogProb => {
                let mean =
                    network::forward(&mut tape, &params.actor_shape, &vars.actor, &prob.slots[0], prob.filled[0])
                        .unwrap();
                log_prob_on_tape(&mut tape, mean, vars.log_std, &prob.actions[0])
            }
            Target::PpoLoss => ppo_loss(&mut tape, params, &vars, &samples(prob), cfg).unwrap().loss,
        };
        (tape.scalar(root), flat_gradient(&tape, root, &vars))
    }

    fn perturbed(params: &PolicyParams, index: usize, delta: f64) -> PolicyParams {
        let mut p = params.clone();
        p.for_each_value_mut(|i, v| {
            if i == index {
                *v += delta;
            }
        });
        p
    }

    /// Indices of the parameters the target can depend on.
    fn relevant(target: Target, params: &PolicyParams) -> std::ops::Range<usize> {
        let actor: usize = params.actor.iter().map(Tensor::len).sum();
        let critic: usize = params.critic.iter().map(Tensor::len).sum();
        match target {
            Target::CriticValue => actor..actor + critic,
            Target::ActorLogProb => 0..params.parameter_count(),
            Target::PpoLoss => 0..params.parameter_count(),
        }
    }

    /// Relative errors `|a - n| / max(|a|, |n|, REL_FLOOR)` of `probes`
    /// randomly drawn (policy, state, coordinate) triples.
    pub fn relative_errors(target: Target, probes: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = PpoConfig { entropy_coef: 0.01, clip_range: 0.2, value_coef: 0.5, ..Default::default() };
        (0..probes)
            .map(|probe| {
                let params = toy_policy(seed.wrapping_mul(1000).wrapping_add(probe as u64));
                let mut prob = random_problem(&mut rng, 4);
                if target == Target::PpoLoss {
                    // old log-probs off the current ones so some ratios clip
                    for i in 0..prob.slots.len() {
                        let mean = params
                            .forward(&prob.slots[i], prob.filled[i], sdperl_core::agent::Role::Actor)
                            .unwrap();
                        let lp = sdperl_core::agent::gaussian_log_prob(&prob.actions[i], &mean, &params.log_std);
                        prob.old_log_probs[i] = lp + rng.random_range(-0.5..0.5);
                    }
                }
                let (_, grad) = evaluate(target, &params, &prob, &cfg);
                let idx = rng.random_range(relevant(target, &params));
                let (up, _) = evaluate(target, &perturbed(&params, idx, H), &prob, &cfg);
                let (down, _) = evaluate(target, &perturbed(&params, idx, -H), &prob, &cfg);
                let numeric = (up - down) / (2.0 * H);
                let analytic = grad[idx];
                (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
            })
            .collect()
    }

    /// `(fraction below 1e-3, maximum)` of a set of relative errors.
    pub fn summary(errors: &[f64]) -> (f64, f64) {
        let good = errors.iter().filter(|&&e| e < 1e-3).count() as f64 / errors.len() as f64;
        (good, errors.iter().copied().fold(0.0, f64::max))
    }
}

/// `Γ(n/2)` for a positive integer `n`, by the half-step recursion.
fn gamma_half(n: u32) -> f64 {
    let (mut x, mut g) = if n % 2 == 0 { (1.0, 1.0) } else { (0.5, std::f64::consts::PI.sqrt()) };
    while x < n as f64 / 2.0 {
        g *= x;
        x += 1.0;
    }
    g
}

/// Two-sided Student-t p-value for integer `df`, by Simpson quadrature of
/// the density over `[0, |t|]`.
pub fn t_two_sided_p(t: f64, df: u32) -> f64 {
    let nu = df as f64;
    let c = gamma_half(df + 1) / ((nu * std::f64::consts::PI).sqrt() * gamma_half(df));
    let f = |x: f64| c * (1.0 + x * x / nu).powf(-(nu + 1.0) / 2.0);
    let n = 20_000;
    let h = t.abs() / n as f64;
    let mut s = f(0.0) + f(t.abs());
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    1.0 - 2.0 * s * h / 3.0
}

/// Pooled-variance t statistic and Cohen's d written out term by term.
pub fn t_and_d_by_hand(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let ss = |x: &[f64]| {
        let m = mean(x);
        x.iter().map(|v| (v - m) * (v - m)).sum::<f64>()
    };
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let sp = ((ss(a) + ss(b)) / (na + nb - 2.0)).sqrt();
    let diff = mean(a) - mean(b);
    (diff / (sp * (1.0 / na + 1.0 / nb).sqrt()), diff / sp)
}

pub mod runs {
    use sdperl_core::agent::network::NetworkConfig;
    use sdperl_core::agent::PpoConfig;
    use sdperl_core::dataset::FeatureMatrix;
    use sdperl_core::environment::Mode;
    use sdperl_core::runner::{ExperimentConfig, PheromoneMode};
    use sdperl_core::synthetic::{generate, SyntheticConfig, SyntheticData};

    pub fn small_data() -> SyntheticData {
        generate(&SyntheticConfig { rows: 150, features: 12, informative: 3, ..Default::default() }).unwrap()
    }

    /// Tiny network and budget so a run takes well under a second.
    pub fn small_config(mode: Mode, pheromone_mode: PheromoneMode, seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            mode,
            pheromone_mode,
            m: 6,
            timesteps: 48,
            k_start: 2,
            k_end: 4,
            seed,
            network: NetworkConfig { layers: 1, heads: 2, hidden: 4, ff_width: 8 },
            ppo: PpoConfig { episodes_per_update: 3, epochs: 2, minibatch_size: 8, ..Default::default() },
            ..Default::default()
        }
    }

    pub fn pair(d: &SyntheticData) -> (&FeatureMatrix, &FeatureMatrix) {
        (&d.train_version, &d.test_version)
    }
}
