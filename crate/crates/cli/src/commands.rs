//! Subcommand implementations. Configuration problems exit 2, stage
//! failures exit 3.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use fairdp::data::{binarize, io as data_io, Dataset, Feedback};
use fairdp::experiment::{
    resolve_train_config, ExperimentConfig, ReportRow, RunManifest, SweepAxis, REPORT_HEADER,
};
use fairdp::metrics::{evaluate_metric, f1_at_k, ndcg_at_k, RelevanceLabels};
use fairdp::model::Checkpoint;
use fairdp::privacy::{calibrate_noise, rdp_epsilon_with_order};
use fairdp::rerank::{io as rerank_io, solve, RerankInstance};
use fairdp::train::{read_reclists, top_k_lists, train_dp_with_sink, write_reclists};

pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }
    fn stage(message: impl Into<String>) -> Self {
        CliError {
            code: 3,
            message: message.into(),
        }
    }
}

impl From<fairdp::Error> for CliError {
    fn from(err: fairdp::Error) -> Self {
        let code = match &err {
            fairdp::Error::Config(_) | fairdp::Error::DegenerateSplit(_) => 2,
            fairdp::Error::Stage { source, .. } => {
                if matches!(**source, fairdp::Error::Config(_)) {
                    2
                } else {
                    3
                }
            }
            _ => 3,
        };
        CliError {
            code,
            message: err.to_string(),
        }
    }
}

type CliResult = Result<(), CliError>;

fn parse_alpha(text: &str) -> Result<f64, CliError> {
    if text == "inf" {
        return Ok(f64::INFINITY);
    }
    text.parse::<f64>()
        .map_err(|_| CliError::config(format!("bad alpha {text:?}")))
}

fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    Dataset::load(path).map_err(|e| CliError::stage(format!("loading {}: {e}", path.display())))
}

fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("reading {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::stage(format!("creating {}: {e}", path.display())))
}

pub fn ingest(
    input: &Path,
    feedback: &str,
    seed: u64,
    out: &Path,
    out_stats: Option<&Path>,
) -> CliResult {
    let feedback = match feedback {
        "explicit" => Feedback::Explicit,
        "implicit" => Feedback::Implicit,
        other => return Err(CliError::config(format!("bad feedback kind {other:?}"))),
    };
    let (raw, diagnostics) = data_io::parse_interactions_path(input)
        .map_err(|e| CliError::stage(format!("parsing {}: {e}", input.display())))?;
    for d in &diagnostics {
        eprintln!("warning: {d}");
    }
    let (labeled, rejected) = binarize(&raw, feedback);
    for r in &rejected {
        eprintln!("warning: row {} rejected: {}", r.row, r.reason);
    }
    let dataset = Dataset::assemble(&labeled, seed).map_err(CliError::from)?;
    dataset.save(out).map_err(CliError::from)?;
    let report = data_io::stats_report(&dataset.stats());
    match out_stats {
        Some(path) => {
            let mut w = create(path)?;
            w.write_all(report.as_bytes())
                .map_err(|e| CliError::stage(e.to_string()))?;
        }
        None => print!("{report}"),
    }
    Ok(())
}

pub fn train(
    config_path: &Path,
    dataset_override: Option<&Path>,
    out: &Path,
    out_log: Option<&Path>,
    out_manifest: Option<&Path>,
) -> CliResult {
    let config = load_config(config_path)?;
    let dataset_path = dataset_override
        .map(|p| p.to_path_buf())
        .or_else(|| config.dataset.clone())
        .ok_or_else(|| CliError::config("no dataset given (config or --dataset)"))?;
    let dataset = load_dataset(&dataset_path)?;
    let train_config = resolve_train_config(&dataset, &config).map_err(CliError::from)?;

    let mut sink = |ckpt: &Checkpoint| -> fairdp::Result<()> {
        ckpt.save(out)?;
        Ok(())
    };
    let outcome = train_dp_with_sink(
        &dataset,
        &train_config,
        config.checkpoint_every,
        Some(&mut sink),
    )
    .map_err(CliError::from)?;

    if let Some(path) = out_log {
        let mut w = create(path)?;
        writeln!(w, "step,loss,epsilon_so_far").map_err(|e| CliError::stage(e.to_string()))?;
        for entry in &outcome.log {
            let loss = entry.batch_loss.map(|l| l.to_string()).unwrap_or_default();
            let eps = if entry.epsilon_so_far.is_finite() {
                entry.epsilon_so_far.to_string()
            } else {
                "inf".into()
            };
            writeln!(w, "{},{loss},{eps}", entry.step)
                .map_err(|e| CliError::stage(e.to_string()))?;
        }
    }

    if let Some(path) = out_manifest {
        let manifest = RunManifest {
            config_hash: config.hash(),
            seed: config.seed,
            checkpoint_path: Some(out.to_path_buf()),
            report_path: out_log.map(|p| p.to_path_buf()),
            certificate: outcome.privacy.clone(),
        };
        let mut w = create(path)?;
        serde_json::to_writer_pretty(&mut w, &manifest)
            .map_err(|e| CliError::stage(e.to_string()))?;
        writeln!(w).map_err(|e| CliError::stage(e.to_string()))?;
    }

    eprintln!(
        "trained {} steps, epsilon = {}",
        outcome.steps_done,
        if outcome.privacy.epsilon.is_finite() {
            format!("{:.4}", outcome.privacy.epsilon)
        } else {
            "inf".into()
        }
    );
    if let Some(div) = &outcome.divergence {
        return Err(CliError::stage(format!(
            "training diverged at step {}: {} (last good checkpoint saved)",
            div.step, div.reason
        )));
    }
    Ok(())
}

pub fn recommend(checkpoint: &Path, dataset: &Path, k: usize, out: &Path) -> CliResult {
    let ckpt = Checkpoint::load(checkpoint).map_err(CliError::from)?;
    let dataset = load_dataset(dataset)?;
    let lists = top_k_lists(&ckpt.params, &dataset, k).map_err(CliError::from)?;
    let mut w = create(out)?;
    write_reclists(&mut w, &lists).map_err(CliError::from)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn rerank(
    instance_path: Option<&Path>,
    reclists: Option<&Path>,
    dataset: Option<&Path>,
    alpha: &str,
    k: usize,
    labels: &str,
    out_instance: Option<&Path>,
    out: &Path,
) -> CliResult {
    let instance: RerankInstance = match (instance_path, reclists, dataset) {
        (Some(path), _, _) => {
            let file = File::open(path)
                .map_err(|e| CliError::stage(format!("{}: {e}", path.display())))?;
            rerank_io::read_instance(file).map_err(CliError::from)?
        }
        (None, Some(lists_path), Some(dataset_path)) => {
            let alpha = parse_alpha(alpha)?;
            let dataset = load_dataset(dataset_path)?;
            let file = File::open(lists_path)
                .map_err(|e| CliError::stage(format!("{}: {e}", lists_path.display())))?;
            let lists = read_reclists(file).map_err(CliError::from)?;
            let groups = fairdp::data::group_users(&dataset);
            let labels = match labels {
                "validation" => {
                    RelevanceLabels::from_pairs(dataset.n_users, &dataset.val, "validation")
                }
                "test" => RelevanceLabels::from_pairs(dataset.n_users, &dataset.test, "test"),
                other => return Err(CliError::config(format!("bad label source {other:?}"))),
            };
            RerankInstance::from_candidates(&lists, &labels, &groups, alpha, k)
        }
        _ => {
            return Err(CliError::config(
                "need --instance, or --reclists with --dataset",
            ))
        }
    };
    if let Some(path) = out_instance {
        let mut w = create(path)?;
        rerank_io::write_instance(&mut w, &instance).map_err(CliError::from)?;
    }
    let solution = solve(&instance).map_err(CliError::from)?;
    let mut w = create(out)?;
    rerank_io::write_solution(&mut w, &instance, &solution).map_err(CliError::from)?;
    eprintln!(
        "objective {:.6}, gap {:.6}, feasible {}, nodes {}",
        solution.objective,
        solution.gap_f64(),
        solution.feasible,
        solution.nodes_expanded
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    reclists_path: &Path,
    solution_path: Option<&Path>,
    dataset_path: &Path,
    k: usize,
    name: &str,
    scorer: &str,
    epsilon: &str,
    out: Option<&Path>,
) -> CliResult {
    let epsilon = parse_alpha(epsilon)?;
    let dataset = load_dataset(dataset_path)?;
    let groups = fairdp::data::group_users(&dataset);
    let test_labels = RelevanceLabels::from_pairs(dataset.n_users, &dataset.test, "test");
    let file = File::open(reclists_path)
        .map_err(|e| CliError::stage(format!("{}: {e}", reclists_path.display())))?;
    let lists = read_reclists(file).map_err(CliError::from)?;

    let mut sources: Vec<(String, Vec<Vec<u32>>)> =
        vec![("truncate".into(), lists.truncate_to(k).item_lists())];
    if let Some(path) = solution_path {
        let file =
            File::open(path).map_err(|e| CliError::stage(format!("{}: {e}", path.display())))?;
        let solution = rerank_io::read_solution(file).map_err(CliError::from)?;
        let mut per_user = vec![Vec::new(); dataset.n_users];
        for (user, items) in solution.chosen {
            per_user[user as usize] = items;
        }
        sources.push(("rerank".into(), per_user));
    }

    let mut rows = Vec::new();
    for (algorithm, item_lists) in &sources {
        for (metric_name, metric) in [
            (
                "ndcg",
                ndcg_at_k as fn(&[u32], &std::collections::HashSet<u32>, usize) -> Option<f64>,
            ),
            ("f1", f1_at_k),
        ] {
            let report = evaluate_metric(item_lists, &test_labels, &groups, k, metric_name, metric)
                .map_err(CliError::from)?;
            rows.push(ReportRow {
                dataset: name.to_string(),
                scorer: scorer.to_string(),
                algorithm: algorithm.clone(),
                epsilon,
                metric: report.metric,
                total: report.total,
                active: report.active,
                inactive: report.inactive,
                gap: report.gap,
            });
        }
    }

    emit_rows(&rows, out)
}

fn emit_rows(rows: &[ReportRow], out: Option<&Path>) -> CliResult {
    let mut text = String::from(REPORT_HEADER);
    text.push('\n');
    for row in rows {
        text.push_str(&row.to_csv_row());
        text.push('\n');
    }
    match out {
        Some(path) => {
            let mut w = create(path)?;
            w.write_all(text.as_bytes())
                .map_err(|e| CliError::stage(e.to_string()))?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

pub fn sweep(
    config_path: &Path,
    dataset_override: Option<&Path>,
    axis: &str,
    out: Option<&Path>,
) -> CliResult {
    let config = load_config(config_path)?;
    let dataset_path = dataset_override
        .map(|p| p.to_path_buf())
        .or_else(|| config.dataset.clone())
        .ok_or_else(|| CliError::config("no dataset given (config or --dataset)"))?;
    let dataset = load_dataset(&dataset_path)?;
    let axis = match axis {
        "clip" => SweepAxis::Clip(config.sweep_clip.clone()),
        "alpha" => SweepAxis::Alpha(config.sweep_alpha.clone()),
        other => return Err(CliError::config(format!("bad axis {other:?}"))),
    };
    let points = fairdp::experiment::sweep(&dataset, &config, &axis).map_err(CliError::from)?;

    let mut text = format!("value,{REPORT_HEADER}\n");
    for point in &points {
        match &point.rows {
            Ok(rows) => {
                for row in rows {
                    text.push_str(&format!("{},{}\n", point.value, row.to_csv_row()));
                }
            }
            Err(message) => {
                eprintln!("warning: point {} failed: {message}", point.value);
                text.push_str(&format!("{},FAILED,{message}\n", point.value));
            }
        }
    }
    match out {
        Some(path) => {
            let mut w = create(path)?;
            w.write_all(text.as_bytes())
                .map_err(|e| CliError::stage(e.to_string()))?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

pub fn accountant(
    z: Option<f64>,
    epsilon: Option<f64>,
    delta: Option<f64>,
    delta_exponent: Option<f64>,
    n: Option<usize>,
    q: f64,
    steps: usize,
) -> CliResult {
    let delta = match (delta, delta_exponent, n) {
        (Some(d), None, _) => d,
        (None, Some(exp), Some(n)) => (n as f64).powf(-exp),
        (None, None, _) => {
            return Err(CliError::config(
                "need --delta or --delta-exponent with --n",
            ))
        }
        _ => return Err(CliError::config("give either --delta or --delta-exponent")),
    };
    let (z, epsilon, order) = match (z, epsilon) {
        (Some(z), None) => {
            let (eps, order) =
                rdp_epsilon_with_order(z, q, steps, delta).map_err(CliError::from)?;
            (z, eps, order)
        }
        (None, Some(target)) => {
            let z = calibrate_noise(target, delta, q, steps).map_err(CliError::from)?;
            let (eps, order) =
                rdp_epsilon_with_order(z, q, steps, delta).map_err(CliError::from)?;
            (z, eps, order)
        }
        _ => return Err(CliError::config("give exactly one of --z or --epsilon")),
    };
    let report = serde_json::json!({
        "epsilon": epsilon,
        "optimal_order": order,
        "z": z,
        "delta": delta,
        "q": q,
        "steps": steps,
    });
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
    Ok(())
}

pub fn report(inputs: &[std::path::PathBuf], out: Option<&Path>) -> CliResult {
    if inputs.is_empty() {
        return Err(CliError::config("no input reports given"));
    }
    let mut rows: Vec<Vec<String>> = Vec::new();
    for path in inputs {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::stage(format!("{}: {e}", path.display())))?;
        for line in text.lines().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            rows.push(line.split(',').map(str::to_string).collect());
        }
    }
    // Sort by dataset, scorer, epsilon (inf last), algorithm, metric.
    rows.sort_by(|a, b| {
        let eps = |r: &Vec<String>| -> f64 {
            match r.get(3).map(String::as_str) {
                Some("inf") => f64::INFINITY,
                Some(v) => v.parse().unwrap_or(f64::NAN),
                None => f64::NAN,
            }
        };
        a.first()
            .cmp(&b.first())
            .then(a.get(1).cmp(&b.get(1)))
            .then(eps(a).total_cmp(&eps(b)))
            .then(a.get(2).cmp(&b.get(2)))
            .then(a.get(4).cmp(&b.get(4)))
    });
    let mut text = String::from(REPORT_HEADER);
    text.push('\n');
    for row in rows {
        text.push_str(&row.join(","));
        text.push('\n');
    }
    match out {
        Some(path) => {
            let mut w = create(path)?;
            w.write_all(text.as_bytes())
                .map_err(|e| CliError::stage(e.to_string()))?;
        }
        None => print!("{text}"),
    }
    Ok(())
}
