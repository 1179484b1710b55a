//! Command bodies. Each writes its files through an [`OutDir`] so the
//! manifest can hash them afterwards. Warnings are logged by the core as
//! they arise.

use std::path::Path;

use panda_core::sim::generate;
use panda_core::{fit_mle, infer, run_benchmark, run_panda, tune, Dataset, InferenceResult, NoiseScheme, PandaFit, TuneResult};

use crate::error::CliError;
use crate::manifest::{Invocation, RunManifest, MANIFEST_NAME};
use crate::settings::Resolved;
use crate::table::{fmt, fmt_opt, read_dataset, sha256_file, write_dataset, OutDir};

fn prepare(input: &Path, s: &Resolved) -> Result<(Dataset, NoiseScheme), CliError> {
    let data = read_dataset(input, &s.response)?;
    let scheme = if s.pilot_from_data {
        let pilot = fit_mle(&s.family, &data, None, None)?;
        match &s.scheme {
            NoiseScheme::AdaptiveLasso { lambda, gamma, .. } => {
                NoiseScheme::AdaptiveLasso { lambda: *lambda, gamma: *gamma, pilot: pilot.slopes.iter().copied().collect() }
            }
            other => other.clone(),
        }
    } else {
        s.scheme.clone()
    };
    Ok((data, scheme))
}

fn coefficient_rows(fit: &PandaFit, names: &[String]) -> Vec<Vec<String>> {
    let mut rows = vec![vec![
        "(intercept)".to_string(),
        fmt(fit.theta_unthresholded.intercept),
        fmt(fit.theta_hat.intercept),
        "false".to_string(),
    ]];
    for (j, name) in names.iter().enumerate() {
        rows.push(vec![
            name.clone(),
            fmt(fit.theta_unthresholded.slopes[j]),
            fmt(fit.theta_hat.slopes[j]),
            fit.is_zero[j].to_string(),
        ]);
    }
    rows
}

fn write_coefficients(out: &mut OutDir, fit: &PandaFit, names: &[String]) -> Result<(), CliError> {
    out.csv("coefficients.csv", &["name", "raw_estimate", "estimate", "is_zero"], &coefficient_rows(fit, names))
}

fn write_trace(out: &mut OutDir, fit: &PandaFit, names: &[String]) -> Result<(), CliError> {
    let mut header = vec!["t", "loss", "loss_bar", "z", "(intercept)"];
    header.extend(names.iter().map(String::as_str));
    let rows: Vec<Vec<String>> = fit
        .loss_trace
        .iter()
        .map(|row| {
            let mut r = vec![row.t.to_string(), fmt(row.loss), fmt(row.loss_bar), fmt_opt(row.z)];
            r.extend(row.theta_bar.iter().map(|v| fmt(*v)));
            r
        })
        .collect();
    out.csv("trace.csv", &header, &rows)
}

fn write_inference(out: &mut OutDir, inf: &InferenceResult) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> = (0..inf.names.len())
        .map(|k| {
            let est = if k == 0 { inf.estimates.intercept } else { inf.estimates.slopes[k - 1] };
            vec![inf.names[k].clone(), fmt(est), fmt(inf.std_errors[k]), fmt(inf.ci_lower[k]), fmt(inf.ci_upper[k]), fmt(inf.wald_z[k])]
        })
        .collect();
    out.csv("inference.csv", &["name", "estimate", "std_error", "ci_lower", "ci_upper", "z"], &rows)?;
    out.json("inference.json", inf)
}

fn write_tuning(out: &mut OutDir, res: &TuneResult, names: &[String]) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> = res
        .table
        .iter()
        .map(|r| {
            vec![
                fmt(r.lambda_ne),
                r.n_e.to_string(),
                fmt_opt(r.score),
                r.n_nonzero.map(|k| k.to_string()).unwrap_or_default(),
                r.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    out.csv("tune_scores.csv", &["lambda_ne", "n_e", "score", "n_nonzero", "error"], &rows)?;
    out.json("tune.json", &serde_json::json!({ "best": res.best, "best_index": res.best_index, "table": res.table }))?;
    write_coefficients(out, &res.refit, names)
}

/// Runs `inv`, writing every output into `out`.
pub fn execute(inv: &Invocation, out: &mut OutDir) -> Result<(), CliError> {
    match inv {
        Invocation::Fit { input, settings } => {
            let (data, scheme) = prepare(input, settings)?;
            let fit = run_panda(&settings.family, &data, &scheme, &settings.config)?;
            write_coefficients(out, &fit, &data.column_names)?;
            write_trace(out, &fit, &data.column_names)?;
            out.json("fit.json", &fit)
        }
        Invocation::Trace { input, settings } => {
            let (data, scheme) = prepare(input, settings)?;
            let fit = run_panda(&settings.family, &data, &scheme, &settings.config)?;
            write_trace(out, &fit, &data.column_names)
        }
        Invocation::Infer { input, settings, fit } => {
            let (data, scheme) = prepare(input, settings)?;
            let fit: PandaFit = match fit {
                Some(path) => {
                    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
                    serde_json::from_str(&text).map_err(|e| CliError::io(format!("malformed fit file {}: {e}", path.display())))?
                }
                None => run_panda(&settings.family, &data, &scheme, &settings.config)?,
            };
            let inf = infer(&fit, &data, settings.alpha)?;
            write_inference(out, &inf)
        }
        Invocation::Tune { input, settings, grid } => {
            let (data, scheme) = prepare(input, settings)?;
            let grid = panda_core::TuneGrid { scheme_template: scheme, ..grid.clone() };
            let res = tune(&settings.family, &data, &grid, &settings.config)?;
            write_tuning(out, &res, &data.column_names)
        }
        Invocation::Simulate { benchmark } => {
            let report = run_benchmark(benchmark)?;
            out.json("benchmark.json", benchmark)?;
            out.json("report.json", &report)?;
            let beta = &benchmark.design.beta_true;
            let cov: Vec<Vec<String>> = (0..report.coverage_by_coef.len())
                .map(|j| vec![format!("x{}", j + 1), fmt(beta[j]), fmt(report.coverage_by_coef[j]), fmt(report.ci_width_by_coef[j])])
                .collect();
            out.csv("coverage.csv", &["name", "true_value", "coverage_pct", "mean_ci_width"], &cov)?;
            let reps: Vec<Vec<String>> = report
                .records
                .iter()
                .map(|r| {
                    vec![
                        r.index.to_string(),
                        fmt(r.model_error),
                        fmt(r.comparator_error),
                        fmt(r.relative_error),
                        r.correct_zeros.to_string(),
                        r.incorrect_zeros.to_string(),
                        fmt_opt(r.lambda_ne),
                        r.n_e.to_string(),
                    ]
                })
                .collect();
            out.csv(
                "replicates.csv",
                &["replicate", "model_error", "comparator_error", "relative_error", "correct_zeros", "incorrect_zeros", "lambda_ne", "n_e"],
                &reps,
            )?;
            eprintln!(
                "{}: MRME {:.2}, zeros {:.2}/{:.2}, {} of {} replicates failed",
                report.name,
                report.mrme,
                report.correct_zeros,
                report.incorrect_zeros,
                report.failures.len(),
                report.replicates
            );
            Ok(())
        }
        Invocation::EmitData { design, replicate, path } => {
            let (data, beta) = generate(design, *replicate)?;
            let name = path.to_string_lossy().to_string();
            write_dataset(&out.dir.join(path), &data, "y")?;
            out.record(&name);
            out.json("beta_true.json", &beta)
        }
    }
}

/// Runs `inv` and writes `manifest.json` next to its outputs.
pub fn run_recorded(inv: Invocation, seed_drawn: bool, dir: &Path) -> Result<RunManifest, CliError> {
    if seed_drawn {
        eprintln!("seed: {}", inv.seed());
    }
    let started = chrono::Utc::now().to_rfc3339();
    let input_sha256 = inv.input().map(sha256_file).transpose()?;
    let mut out = OutDir::create(dir)?;
    execute(&inv, &mut out)?;
    let manifest = RunManifest {
        seed: inv.seed(),
        invocation: inv,
        input_sha256,
        seed_drawn,
        version: env!("CARGO_PKG_VERSION").to_string(),
        started,
        finished: chrono::Utc::now().to_rfc3339(),
        outputs: out.hashes()?,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::io(format!("cannot serialize manifest: {e}")))?;
    std::fs::write(dir.join(MANIFEST_NAME), text + "\n").map_err(|e| CliError::io(format!("cannot write manifest: {e}")))?;
    Ok(manifest)
}

/// Re-executes a recorded run into `dir` and lists outputs whose hashes differ.
pub fn replay(manifest: &RunManifest, dir: &Path) -> Result<Vec<String>, CliError> {
    if let (Some(input), Some(expected)) = (manifest.invocation.input(), &manifest.input_sha256) {
        let now = sha256_file(input)?;
        if &now != expected {
            return Err(CliError::io(format!("input {} changed since the recorded run", input.display())));
        }
    }
    let mut out = OutDir::create(dir)?;
    execute(&manifest.invocation, &mut out)?;
    let fresh = out.hashes()?;
    let mut diffs = Vec::new();
    for (name, hash) in &manifest.outputs {
        if fresh.get(name) != Some(hash) {
            diffs.push(name.clone());
        }
    }
    Ok(diffs)
}
