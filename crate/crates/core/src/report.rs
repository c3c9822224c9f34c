//! Run artifacts on disk.
//!
//! Data files hold no timestamps, so emitting the same report twice gives
//! identical bytes. Wall-clock time goes to `timing.json` on its own.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::classifier::EvalMetrics;
use crate::error::{Error, Result};
use crate::pheromone::csv_field;
use crate::runner::{RunReport, Sweep};

/// Files every run directory contains.
pub const RUN_FILES: [&str; 6] = [
    "metrics.csv",
    "pheromone.csv",
    "training_log.csv",
    "best_actions.json",
    "config.json",
    "episode_scores.csv",
];

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::io(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn metric_rows(m: &EvalMetrics) -> [(&'static str, String); 5] {
    [
        ("precision", m.precision.to_string()),
        ("recall", m.recall.to_string()),
        ("f1", m.f1.to_string()),
        ("auc", opt(m.auc)),
        ("accuracy", m.accuracy.to_string()),
    ]
}

/// Contents of `best_actions.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestActions {
    pub mode: String,
    pub pheromone_mode: String,
    pub best_episode: usize,
    pub best_eval_score: f64,
    pub feature_ids: Vec<usize>,
    pub features: Vec<String>,
    pub test_feature_ids: Vec<usize>,
    pub test_features: Vec<String>,
}

impl BestActions {
    pub fn from_report(r: &RunReport) -> Self {
        let names = |ids: &[usize]| ids.iter().map(|&i| r.feature_names[i].clone()).collect();
        Self {
            mode: r.config.mode.to_string(),
            pheromone_mode: r.config.pheromone_mode.to_string(),
            best_episode: r.best_episode,
            best_eval_score: r.best_score,
            feature_ids: r.best_subset.clone(),
            features: names(&r.best_subset),
            test_feature_ids: r.test_subset.clone(),
            test_features: names(&r.test_subset),
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("best_actions.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::from(e).context(path.display().to_string()))
    }
}

pub fn metrics_csv(r: &RunReport) -> String {
    let mut out = String::from("metric,value\n");
    for (k, v) in metric_rows(&r.test_metrics) {
        let _ = writeln!(out, "{k},{v}");
    }
    let _ = writeln!(out, "best_eval_score,{}", r.best_score);
    let _ = writeln!(out, "best_episode,{}", r.best_episode);
    let _ = writeln!(out, "episodes,{}", r.episodes.len());
    let _ = writeln!(out, "agent_steps,{}", r.total_steps());
    out
}

pub fn training_log_csv(r: &RunReport) -> String {
    let mut out = String::from("timestep,episode,feature_id,feature,td_reward,score,f1,auc\n");
    for s in &r.steps {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            s.timestep,
            s.episode,
            s.feature,
            csv_field(&r.feature_names[s.feature]),
            s.td_reward,
            s.score,
            s.f1,
            opt(s.auc)
        );
    }
    out
}

pub fn episode_scores_csv(r: &RunReport) -> String {
    let mut out = String::from("episode,initial_score,final_score,reward_sum,best_so_far\n");
    let mut best = f64::NEG_INFINITY;
    for e in &r.episodes {
        best = best.max(e.final_score);
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            e.episode, e.initial_score, e.final_score, e.reward_sum, best
        );
    }
    out
}

pub fn updates_csv(r: &RunReport) -> String {
    let mut out = String::from(
        "after_episode,policy_loss,value_loss,entropy,clip_fraction,approx_kl,grad_norm,gradient_steps\n",
    );
    for u in &r.updates {
        let d = &u.diagnostics;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            u.after_episode,
            d.policy_loss,
            d.value_loss,
            d.entropy,
            d.clip_fraction,
            d.approx_kl,
            d.grad_norm,
            d.gradient_steps
        );
    }
    out
}

/// Writes all artifacts of a run into `dir`, creating it if needed.
pub fn emit_report(r: &RunReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(dir, "metrics.csv", &metrics_csv(r))?;
    write(dir, "pheromone.csv", &r.pheromone.to_csv(&r.feature_names))?;
    write(dir, "training_log.csv", &training_log_csv(r))?;
    write(
        dir,
        "best_actions.json",
        &serde_json::to_string_pretty(&BestActions::from_report(r))?,
    )?;
    write(dir, "config.json", &serde_json::to_string_pretty(&r.config)?)?;
    write(dir, "episode_scores.csv", &episode_scores_csv(r))?;
    write(dir, "updates.csv", &updates_csv(r))?;
    let model = json!({
        "features": r.test_subset.iter().map(|&i| &r.feature_names[i]).collect::<Vec<_>>(),
        "classifier": r.model,
    });
    write(dir, "model.json", &serde_json::to_string_pretty(&model)?)?;
    r.policy.save(&dir.join("policy.json"), &serde_json::to_value(r.config.ppo)?)?;
    write(
        dir,
        "timing.json",
        &serde_json::to_string_pretty(&json!({ "wall_clock_secs": r.wall_clock_secs }))?,
    )?;
    if r.config.plots {
        let points: Vec<(f64, f64)> = r
            .episodes
            .iter()
            .map(|e| (e.episode as f64, e.final_score))
            .collect();
        write(
            dir,
            "episode_scores.svg",
            &line_chart_svg("Evaluation score per episode", "episode", "score", &points),
        )?;
    }
    Ok(())
}

pub fn sweep_csv(s: &Sweep) -> String {
    let mut out = String::from("m,seed,best_eval_score,precision,recall,f1,auc,accuracy\n");
    for row in &s.rows {
        let m = &row.metrics;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            row.m,
            row.seed,
            row.best_score,
            m.precision,
            m.recall,
            m.f1,
            opt(m.auc),
            m.accuracy
        );
    }
    out
}

pub fn emit_sweep(s: &Sweep, dir: &Path, plots: bool) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(dir, "metrics_vs_m.csv", &sweep_csv(s))?;
    if plots {
        let points: Vec<(f64, f64)> = s.rows.iter().map(|r| (r.m as f64, r.metrics.f1)).collect();
        write(
            dir,
            "metrics_vs_m.svg",
            &line_chart_svg("Test F1 by subset size", "M", "F1", &points),
        )?;
    }
    Ok(())
}

/// Minimal standalone SVG line chart.
pub fn line_chart_svg(title: &str, x_label: &str, y_label: &str, points: &[(f64, f64)]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const PAD: f64 = 50.0;
    let (mut x0, mut x1, mut y0, mut y1) = (0.0, 1.0, 0.0, 1.0);
    if let Some(&(x, y)) = points.first() {
        (x0, x1, y0, y1) = (x, x, y, y);
        for &(x, y) in points {
            x0 = f64::min(x0, x);
            x1 = f64::max(x1, x);
            y0 = f64::min(y0, y);
            y1 = f64::max(y1, y);
        }
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let path: Vec<String> = points
        .iter()
        .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
        .collect();
    let esc = |s: &str| s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#,
        W / 2.0,
        esc(title)
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{PAD}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{}" stroke="black"/>"#,
        H - PAD,
        W - PAD,
        H - PAD,
        H - PAD
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#,
        W / 2.0,
        H - 12.0,
        esc(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        esc(y_label)
    );
    for (v, y) in [(y0, sy(y0)), (y1, sy(y1))] {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.2}" text-anchor="end" font-family="sans-serif" font-size="10">{v:.3}</text>"#,
            PAD - 4.0,
            y + 3.0
        );
    }
    for (v, x) in [(x0, sx(x0)), (x1, sx(x1))] {
        let _ = writeln!(
            svg,
            r#"<text x="{x:.2}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="10">{v}</text>"#,
            H - PAD + 14.0
        );
    }
    if !path.is_empty() {
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{}"/>"#,
            path.join(" ")
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_is_well_formed() {
        let svg = line_chart_svg("a < b", "x", "y", &[(0.0, 0.1), (1.0, 0.5), (2.0, 0.3)]);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a &lt; b"));
        assert!(svg.contains("<polyline"));
        let empty = line_chart_svg("t", "x", "y", &[]);
        assert!(!empty.contains("<polyline"));
    }
}
