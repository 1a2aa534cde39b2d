//! End-to-end harness: configuration, the ingest -> train -> recommend ->
//! re-rank -> evaluate chain, hyperparameter sweeps, and report emission.
//!
//! Every run compares two algorithms on the same trained model: `truncate`
//! (the private model's top-K cut to k) and `rerank` (the fairness-
//! constrained selection), isolating the re-ranking stage's effect.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::{group_users, Dataset, UserGroups};
use crate::metrics::{evaluate_metric, f1_at_k, ndcg_at_k, MetricsReport, RelevanceLabels};
use crate::model::Scorer;
use crate::privacy::{calibrate_noise, float_as_string, ClipBounds, PrivacySpec};
use crate::rerank::{solve, RerankInstance, RerankSolution};
use crate::train::{top_k_lists, train_dp, RecLists, TrainConfig, TrainOutcome};
use crate::{Error, Result};

/// How the clip bounds are chosen.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum ClipSetting {
    /// One bound for every group.
    Uniform(f64),
    /// Pre-tune from a non-private pass: the suggested bound per group is
    /// the median per-example gradient norm. Spelled `"pretune"`.
    Keyword(String),
    /// Explicit per-group bounds.
    PerGroup { user: f64, item: f64, extra: f64 },
}

/// Which held-out split supplies the re-ranker's relevance labels.
///
/// Validation keeps the evaluation target unseen by the solver. Test makes
/// the constraint metric the same quantity the final report measures, which
/// is what it takes for the re-ranking to move the reported gap directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintLabels {
    #[default]
    Validation,
    Test,
}

/// Privacy budget wiring: a target epsilon (calibrated to a noise
/// multiplier), an explicit multiplier, or the non-private setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrivacySetting {
    /// Calibrate z to meet this epsilon at the run's (q, T, delta).
    EpsilonTarget(f64),
    /// Use this mechanism noise multiplier directly.
    NoiseMultiplier(f64),
    /// z = 0: plain SGD, epsilon = infinity.
    NonPrivate,
}

/// One experiment: dataset handle, model and training knobs, privacy
/// budget, and the two list lengths.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Label used in report rows.
    #[serde(default = "default_name")]
    pub name: String,
    /// Dataset bundle path (the CLI fills this; library callers may pass
    /// a dataset directly).
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    pub seed: u64,
    pub scorer: Scorer,
    #[serde(default = "default_dim")]
    pub d: usize,
    pub learning_rate: f64,
    #[serde(default = "one")]
    pub lr_decay: f64,
    pub lambda: f64,
    pub batch: usize,
    pub steps: usize,
    pub clip: ClipSetting,
    pub privacy: PrivacySetting,
    #[serde(default = "default_delta_exponent")]
    pub delta_exponent: f64,
    /// Pre-ranker list length K.
    #[serde(default = "default_pre_k")]
    pub pre_k: usize,
    /// Final list length k.
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    /// Fairness budget; `inf` disables the constraint.
    #[serde(default = "inf")]
    pub alpha: f64,
    /// Label source for the re-rank constraint.
    #[serde(default)]
    pub constraint_labels: ConstraintLabels,
    /// Steps of the non-private pre-tuning pass (0 = same as `steps`).
    #[serde(default)]
    pub pretune_steps: usize,
    /// Uniform clip bounds to sweep (retrains per point).
    #[serde(default)]
    pub sweep_clip: Vec<f64>,
    /// Fairness budgets to sweep (one training, re-rank per point).
    #[serde(default)]
    pub sweep_alpha: Vec<f64>,
    /// Write a resumable checkpoint every this many steps (0 = only final).
    #[serde(default)]
    pub checkpoint_every: usize,
}

fn default_name() -> String {
    "dataset".into()
}
fn default_dim() -> usize {
    32
}
fn one() -> f64 {
    1.0
}
fn inf() -> f64 {
    f64::INFINITY
}
fn default_delta_exponent() -> f64 {
    1.5
}
fn default_pre_k() -> usize {
    20
}
fn default_top_k() -> usize {
    10
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k > self.pre_k {
            return Err(Error::Config(format!(
                "k = {} exceeds K = {}",
                self.top_k, self.pre_k
            )));
        }
        if let ClipSetting::Keyword(word) = &self.clip {
            if word != "pretune" {
                return Err(Error::Config(format!(
                    "unknown clip keyword {word:?} (expected \"pretune\")"
                )));
            }
        }
        if let PrivacySetting::EpsilonTarget(eps) = self.privacy {
            if eps.is_nan() || eps <= 0.0 {
                return Err(Error::Config("epsilon target must be positive".into()));
            }
            if eps.is_infinite() {
                return Err(Error::Config(
                    "use privacy = \"non_private\" for the infinite budget".into(),
                ));
            }
        }
        Ok(())
    }

    /// Stable hash of the serialized config, for manifests.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        format!("{:016x}", fnv1a64(text.as_bytes()))
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// One row of the evaluation report: a metric broken out by group for one
/// algorithm at one privacy budget. Metric values are fractions;
/// `to_csv_row` scales to percentages with two decimals.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub scorer: String,
    pub algorithm: String,
    #[serde(with = "float_as_string")]
    pub epsilon: f64,
    pub metric: String,
    pub total: f64,
    pub active: f64,
    pub inactive: f64,
    pub gap: f64,
}

pub const REPORT_HEADER: &str = "dataset,scorer,algorithm,epsilon,metric,total,active,inactive,gap";

impl ReportRow {
    pub fn to_csv_row(&self) -> String {
        let eps = if self.epsilon.is_finite() {
            format!("{}", self.epsilon)
        } else {
            "inf".into()
        };
        format!(
            "{},{},{},{},{},{:.2},{:.2},{:.2},{:.2}",
            self.dataset,
            self.scorer,
            self.algorithm,
            eps,
            self.metric,
            self.total * 100.0,
            self.active * 100.0,
            self.inactive * 100.0,
            self.gap * 100.0
        )
    }
}

/// Traceability record tying every artifact to its configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub checkpoint_path: Option<PathBuf>,
    pub report_path: Option<PathBuf>,
    pub certificate: PrivacySpec,
}

/// Condensed solver report for manifests and logs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverReport {
    pub objective: f64,
    pub gap: f64,
    pub feasible: bool,
    pub nodes_expanded: u64,
}

impl From<&RerankSolution> for SolverReport {
    fn from(s: &RerankSolution) -> Self {
        SolverReport {
            objective: s.objective,
            gap: s.gap_f64(),
            feasible: s.feasible,
            nodes_expanded: s.nodes_expanded,
        }
    }
}

/// Everything a single experiment produces.
#[derive(Debug)]
pub struct ExperimentOutcome {
    pub rows: Vec<ReportRow>,
    pub certificate: PrivacySpec,
    pub solver: SolverReport,
    pub manifest: RunManifest,
    pub train: TrainOutcome,
    pub candidates: RecLists,
    pub rerank_lists: Vec<Vec<u32>>,
}

/// The trained half of a run, reusable across alpha sweep points.
pub struct TrainedStage {
    pub outcome: TrainOutcome,
    pub candidates: RecLists,
    pub groups: UserGroups,
    pub val_labels: RelevanceLabels,
    pub test_labels: RelevanceLabels,
    pub resolved_bounds: ClipBounds,
    pub resolved_z: f64,
}

/// Resolve the clip bounds (running the pre-tune pass if asked) and the
/// mechanism noise multiplier (calibrating to an epsilon target if given),
/// producing the concrete training configuration.
pub fn resolve_train_config(dataset: &Dataset, config: &ExperimentConfig) -> Result<TrainConfig> {
    config.validate().map_err(|e| e.in_stage("config"))?;
    let n = dataset.n_train();
    let delta = dataset.delta(config.delta_exponent);
    if delta >= 1.0 / n as f64 {
        return Err(Error::Config(format!(
            "delta {delta} is not below 1/n = {}",
            1.0 / n as f64
        ))
        .in_stage("config"));
    }
    let q = config.batch as f64 / n as f64;

    let bounds = match &config.clip {
        ClipSetting::Uniform(c) => ClipBounds::uniform(*c),
        ClipSetting::PerGroup { user, item, extra } => ClipBounds {
            user: *user,
            item: *item,
            extra: *extra,
        },
        ClipSetting::Keyword(_) => {
            pretune_bounds(dataset, config).map_err(|e| e.in_stage("pretune"))?
        }
    };

    let groups_count = match config.scorer {
        Scorer::Mf => 2,
        Scorer::NeuMf => 3,
    };
    let z = match config.privacy {
        PrivacySetting::NonPrivate => 0.0,
        PrivacySetting::NoiseMultiplier(z) => z,
        PrivacySetting::EpsilonTarget(target) => {
            let z_acc = calibrate_noise(target, delta, q, config.steps)
                .map_err(|e| e.in_stage("calibrate"))?;
            z_acc * (groups_count as f64).sqrt()
        }
    };

    Ok(TrainConfig {
        scorer: config.scorer,
        d: config.d,
        learning_rate: config.learning_rate,
        lr_decay: config.lr_decay,
        lambda: config.lambda,
        batch_expected: config.batch,
        steps: config.steps,
        bounds,
        noise_multiplier: z,
        delta_exponent: config.delta_exponent,
        seed: config.seed,
    })
}

/// Resolve the clip setting, calibrate noise if an epsilon target is given,
/// train, and produce the top-K candidate lists.
pub fn train_stage(dataset: &Dataset, config: &ExperimentConfig) -> Result<TrainedStage> {
    let train_config = resolve_train_config(dataset, config)?;
    let bounds = train_config.bounds;
    let z = train_config.noise_multiplier;
    let outcome = train_dp(dataset, &train_config).map_err(|e| e.in_stage("train"))?;
    if let Some(div) = &outcome.divergence {
        return Err(Error::Diverged {
            step: div.step,
            reason: div.reason.clone(),
        }
        .in_stage("train"));
    }
    let candidates =
        top_k_lists(&outcome.params, dataset, config.pre_k).map_err(|e| e.in_stage("recommend"))?;
    let groups = group_users(dataset);
    let val_labels = RelevanceLabels::from_pairs(dataset.n_users, &dataset.val, "validation");
    let test_labels = RelevanceLabels::from_pairs(dataset.n_users, &dataset.test, "test");
    Ok(TrainedStage {
        outcome,
        candidates,
        groups,
        val_labels,
        test_labels,
        resolved_bounds: bounds,
        resolved_z: z,
    })
}

/// Suggested clip bounds from a non-private pass: the median per-example
/// gradient norm per group.
pub fn pretune_bounds(dataset: &Dataset, config: &ExperimentConfig) -> Result<ClipBounds> {
    let steps = if config.pretune_steps > 0 {
        config.pretune_steps
    } else {
        config.steps
    };
    let train_config = TrainConfig {
        scorer: config.scorer,
        d: config.d,
        learning_rate: config.learning_rate,
        lr_decay: config.lr_decay,
        lambda: config.lambda,
        batch_expected: config.batch,
        steps,
        bounds: ClipBounds::uniform(f64::INFINITY),
        noise_multiplier: 0.0,
        delta_exponent: config.delta_exponent,
        seed: config.seed,
    };
    let outcome = train_dp(dataset, &train_config)?;
    // Norms measured at the trained parameters, over every training triple.
    let mut user_norms = Vec::with_capacity(dataset.n_train());
    let mut item_norms = Vec::with_capacity(dataset.n_train());
    let mut w_norms = Vec::with_capacity(dataset.n_train());
    for (&(u, v), &(_, vn)) in dataset.train.iter().zip(&dataset.negatives) {
        let g = crate::model::per_example_grad(
            &outcome.params,
            &crate::model::Triple {
                user: u,
                pos_item: v,
                neg_item: vn,
            },
            config.lambda,
        )?;
        user_norms.push(g.user_norm());
        item_norms.push(g.item_norm());
        w_norms.push(g.w_norm());
    }
    let median = |mut xs: Vec<f64>| -> f64 {
        xs.sort_by(f64::total_cmp);
        let m = xs[xs.len() / 2];
        if m > 0.0 {
            m
        } else {
            1.0
        }
    };
    let user = median(user_norms);
    let item = median(item_norms);
    let extra = match config.scorer {
        Scorer::Mf => item,
        Scorer::NeuMf => median(w_norms),
    };
    Ok(ClipBounds { user, item, extra })
}

/// Re-rank and evaluate one alpha on an already-trained stage. Returns the
/// four report rows, the solver report, and the re-ranked lists.
pub fn rerank_and_evaluate(
    stage: &TrainedStage,
    config: &ExperimentConfig,
    alpha: f64,
) -> Result<(Vec<ReportRow>, SolverReport, Vec<Vec<u32>>)> {
    let k = config.top_k;
    let epsilon = stage.outcome.privacy.epsilon;
    let reference = match config.constraint_labels {
        ConstraintLabels::Validation => &stage.val_labels,
        ConstraintLabels::Test => &stage.test_labels,
    };
    let instance =
        RerankInstance::from_candidates(&stage.candidates, reference, &stage.groups, alpha, k);
    let solution = solve(&instance).map_err(|e| e.in_stage("rerank"))?;

    let truncated = stage.candidates.truncate_to(k).item_lists();
    let reranked = solution.chosen.clone();

    let mut rows = Vec::new();
    for (algorithm, lists) in [("truncate", &truncated), ("rerank", &reranked)] {
        for (metric_name, metric) in [
            (
                "ndcg",
                ndcg_at_k as fn(&[u32], &std::collections::HashSet<u32>, usize) -> Option<f64>,
            ),
            ("f1", f1_at_k),
        ] {
            let report: MetricsReport = evaluate_metric(
                lists,
                &stage.test_labels,
                &stage.groups,
                k,
                metric_name,
                metric,
            )
            .map_err(|e| e.in_stage("evaluate"))?;
            rows.push(ReportRow {
                dataset: config.name.clone(),
                scorer: scorer_name(config.scorer).into(),
                algorithm: (*algorithm).into(),
                epsilon,
                metric: report.metric,
                total: report.total,
                active: report.active,
                inactive: report.inactive,
                gap: report.gap,
            });
        }
    }
    Ok((rows, SolverReport::from(&solution), reranked))
}

pub fn scorer_name(scorer: Scorer) -> &'static str {
    match scorer {
        Scorer::Mf => "mf",
        Scorer::NeuMf => "neumf",
    }
}

/// The full chain on one configuration.
pub fn run_experiment(dataset: &Dataset, config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let stage = train_stage(dataset, config)?;
    let (rows, solver, rerank_lists) = rerank_and_evaluate(&stage, config, config.alpha)?;
    let manifest = RunManifest {
        config_hash: config.hash(),
        seed: config.seed,
        checkpoint_path: None,
        report_path: None,
        certificate: stage.outcome.privacy.clone(),
    };
    Ok(ExperimentOutcome {
        rows,
        certificate: stage.outcome.privacy.clone(),
        solver,
        manifest,
        train: stage.outcome,
        candidates: stage.candidates,
        rerank_lists,
    })
}

/// What a sweep varies.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Uniform clip bound per point; retrains each point.
    Clip(Vec<f64>),
    /// Fairness budget per point; trains once and re-ranks per point.
    Alpha(Vec<f64>),
}

/// One sweep point: the grid value and either rows or the failure message.
#[derive(Debug)]
pub struct SweepPoint {
    pub value: f64,
    pub rows: std::result::Result<Vec<ReportRow>, String>,
}

/// Run a grid sweep. Per-point failures are recorded and the sweep
/// continues; seeds are shared across points.
pub fn sweep(
    dataset: &Dataset,
    base: &ExperimentConfig,
    axis: &SweepAxis,
) -> Result<Vec<SweepPoint>> {
    match axis {
        SweepAxis::Clip(grid) => {
            if grid.is_empty() {
                return Err(Error::Config("empty clip grid".into()));
            }
            Ok(grid
                .iter()
                .map(|&c| {
                    let mut config = base.clone();
                    config.clip = ClipSetting::Uniform(c);
                    SweepPoint {
                        value: c,
                        rows: run_experiment(dataset, &config)
                            .map(|o| o.rows)
                            .map_err(|e| e.to_string()),
                    }
                })
                .collect())
        }
        SweepAxis::Alpha(grid) => {
            if grid.is_empty() {
                return Err(Error::Config("empty alpha grid".into()));
            }
            let stage = train_stage(dataset, base)?;
            Ok(grid
                .iter()
                .map(|&alpha| SweepPoint {
                    value: alpha,
                    rows: rerank_and_evaluate(&stage, base, alpha)
                        .map(|(rows, _, _)| rows)
                        .map_err(|e| e.to_string()),
                })
                .collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{generate, SyntheticConfig};
    use crate::data::{binarize, Feedback};

    pub(crate) fn small_dataset(seed: u64) -> Dataset {
        let config = SyntheticConfig {
            n_users: 40,
            n_items: 60,
            n_genres: 4,
            base_interactions: 8,
            active_boost: 4.0,
            active_fraction: 0.2,
            affinity: 0.8,
            seed,
        };
        let raw = generate(&config);
        let (labeled, _) = binarize(&raw, Feedback::Implicit);
        Dataset::assemble(&labeled, seed).unwrap()
    }

    pub(crate) fn small_config(seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            name: "synthetic".into(),
            dataset: None,
            seed,
            scorer: Scorer::Mf,
            d: 4,
            learning_rate: 0.1,
            lr_decay: 1.0,
            lambda: 0.005,
            batch: 32,
            steps: 40,
            clip: ClipSetting::Uniform(1.0),
            privacy: PrivacySetting::NoiseMultiplier(0.6),
            delta_exponent: 1.5,
            pre_k: 8,
            top_k: 4,
            alpha: 0.05,
            constraint_labels: ConstraintLabels::Validation,
            pretune_steps: 0,
            sweep_clip: Vec::new(),
            sweep_alpha: Vec::new(),
            checkpoint_every: 0,
        }
    }

    #[test]
    fn non_private_records_zero_noise_and_inf_epsilon() {
        let ds = small_dataset(1);
        let mut config = small_config(1);
        config.privacy = PrivacySetting::NonPrivate;
        let outcome = run_experiment(&ds, &config).unwrap();
        assert_eq!(outcome.certificate.noise_multiplier, 0.0);
        assert!(outcome.certificate.epsilon.is_infinite());
        for row in &outcome.rows {
            assert!(row.epsilon.is_infinite());
        }
    }

    #[test]
    fn alpha_inf_makes_rerank_equal_truncation() {
        let ds = small_dataset(2);
        let mut config = small_config(2);
        config.alpha = f64::INFINITY;
        let outcome = run_experiment(&ds, &config).unwrap();
        let truncated = outcome.candidates.truncate_to(config.top_k).item_lists();
        assert_eq!(outcome.rerank_lists, truncated);
        // With identical lists the four rows pair up exactly.
        for metric in ["ndcg", "f1"] {
            let t = outcome
                .rows
                .iter()
                .find(|r| r.algorithm == "truncate" && r.metric == metric)
                .unwrap();
            let r = outcome
                .rows
                .iter()
                .find(|r| r.algorithm == "rerank" && r.metric == metric)
                .unwrap();
            assert_eq!(t.total, r.total);
            assert_eq!(t.gap, r.gap);
        }
    }

    #[test]
    fn manifest_reruns_reproduce_rows_exactly() {
        let ds = small_dataset(3);
        let config = small_config(3);
        let a = run_experiment(&ds, &config).unwrap();
        let b = run_experiment(&ds, &config).unwrap();
        assert_eq!(a.manifest.config_hash, b.manifest.config_hash);
        assert_eq!(
            serde_json::to_string(&a.rows).unwrap(),
            serde_json::to_string(&b.rows).unwrap()
        );
        assert_eq!(a.certificate, b.certificate);
    }

    #[test]
    fn epsilon_target_certificate_meets_budget() {
        let ds = small_dataset(4);
        let mut config = small_config(4);
        config.privacy = PrivacySetting::EpsilonTarget(8.0);
        let outcome = run_experiment(&ds, &config).unwrap();
        assert!(outcome.certificate.epsilon <= 8.0);
        assert!(outcome.certificate.epsilon > 8.0 - 0.5);
        assert!(outcome.certificate.noise_multiplier > 0.0);
    }

    #[test]
    fn singleton_sweep_equals_run_experiment() {
        let ds = small_dataset(5);
        let config = small_config(5);
        let single = run_experiment(&ds, &config).unwrap();
        let points = sweep(&ds, &config, &SweepAxis::Alpha(vec![config.alpha])).unwrap();
        assert_eq!(points.len(), 1);
        let rows = points[0].rows.as_ref().unwrap();
        assert_eq!(
            serde_json::to_string(rows).unwrap(),
            serde_json::to_string(&single.rows).unwrap()
        );
    }

    #[test]
    fn clip_sweep_records_per_point_failures_and_continues() {
        let ds = small_dataset(6);
        let config = small_config(6);
        // A negative clip bound is rejected by validation; the sweep must
        // keep going and the good point must succeed.
        let points = sweep(&ds, &config, &SweepAxis::Clip(vec![-1.0, 1.0])).unwrap();
        assert!(points[0].rows.is_err());
        assert!(points[1].rows.is_ok());
    }

    #[test]
    fn pretune_produces_positive_bounds() {
        let ds = small_dataset(7);
        let mut config = small_config(7);
        config.pretune_steps = 10;
        let bounds = pretune_bounds(&ds, &config).unwrap();
        assert!(bounds.user > 0.0 && bounds.user.is_finite());
        assert!(bounds.item > 0.0 && bounds.item.is_finite());
    }

    #[test]
    fn report_row_formats_percentages() {
        let row = ReportRow {
            dataset: "d".into(),
            scorer: "mf".into(),
            algorithm: "truncate".into(),
            epsilon: f64::INFINITY,
            metric: "f1".into(),
            total: 0.04312,
            active: 0.0712,
            inactive: 0.0361,
            gap: 0.0351,
        };
        assert_eq!(row.to_csv_row(), "d,mf,truncate,inf,f1,4.31,7.12,3.61,3.51");
    }
}
