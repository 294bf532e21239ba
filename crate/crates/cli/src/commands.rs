use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use fo_bias::data::closed_loop_dataset;
use fo_bias::estimator::{asymptotic_model, fit_ls, matrix_rows};
use fo_bias::oag::run_oag;
use fo_bias::stability::{check_condition_c, condition_threshold, Verdict};
use fo_bias::system::ClosedLoop;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, SweepParam};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Model {
    Fitted,
    Asymptotic,
    True,
}

fn write_json(dir: &Path, name: &str, value: &Value) -> Result<()> {
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn with_hash(mut value: Value, hash: &str) -> Value {
    value["config_hash"] = json!(hash);
    value
}

fn model_matrix(cfg: &ExperimentConfig, cl: &ClosedLoop, model: Model) -> Result<DMatrix<f64>> {
    Ok(match model {
        Model::Fitted => {
            let data = closed_loop_dataset(cl, cfg.estimation.samples, cfg.estimation.seed, false)?;
            fit_ls(&data)?.pi_hat
        }
        Model::Asymptotic => asymptotic_model(cl)?.pi_hat,
        Model::True => cl.g().clone(),
    })
}

/// Returns the verdict; the caller maps it to the exit code.
pub fn analyze(cfg: &ExperimentConfig, out: &Path) -> Result<Verdict> {
    let cl = cfg.closed_loop()?;
    let report = check_condition_c(&cl)?;
    let limit = asymptotic_model(&cl)?;
    let mut value = report.to_json();
    value["lambda"] = json!(matrix_rows(cl.lambda()));
    value["pi_hat_limit"] = json!(matrix_rows(&limit.pi_hat));
    write_json(out, "condition.json", &with_hash(value, &cfg.hash()))?;
    Ok(report.verdict)
}

pub fn estimate_cmd(cfg: &ExperimentConfig, out: &Path, model: Model) -> Result<()> {
    let cl = cfg.closed_loop()?;
    let hash = cfg.hash();
    let est = match model {
        Model::Fitted => {
            let data = closed_loop_dataset(&cl, cfg.estimation.samples, cfg.estimation.seed, true)?;
            let mut w = create(out, "dataset.csv")?;
            data.write_csv(&mut w, Some(&format!("config_hash={hash}")))?;
            w.flush()?;
            fit_ls(&data)?
        }
        Model::Asymptotic => asymptotic_model(&cl)?,
        Model::True => bail!("estimate supports --model fitted or asymptotic"),
    };
    let limit = asymptotic_model(&cl)?;
    let mut value = est.to_json();
    value["seed"] = json!(cfg.estimation.seed);
    value["error_to_limit"] = json!((&est.pi_hat - &limit.pi_hat).norm());
    write_json(out, "estimate.json", &with_hash(value, &hash))
}

pub fn simulate(cfg: &ExperimentConfig, out: &Path, model: Model) -> Result<bool> {
    let cl = cfg.closed_loop()?;
    let Some((oag, cost)) = cfg.oag()? else {
        bail!("simulate needs an \"oag\" section in the config");
    };
    let hash = cfg.hash();
    let pi_hat = model_matrix(cfg, &cl, model)?;
    let traj = run_oag(cl.g(), &pi_hat, &cost, &oag)?;
    let mut w = create(out, "trajectory.csv")?;
    traj.write_csv(&mut w, Some(&format!("config_hash={hash}")))?;
    w.flush()?;
    let mut value = traj.status_json();
    value["model"] = json!(model_name(model));
    value["pi_hat"] = json!(matrix_rows(&pi_hat));
    write_json(out, "trajectory.json", &with_hash(value, &hash))?;
    Ok(traj.converged())
}

fn model_name(model: Model) -> &'static str {
    match model {
        Model::Fitted => "fitted",
        Model::Asymptotic => "asymptotic",
        Model::True => "true",
    }
}

struct SweepRow {
    sigma_w2: f64,
    lambda_min: f64,
    verdict: Verdict,
    oag_status: String,
    final_phi: Option<f64>,
}

fn sweep_point(cfg: &ExperimentConfig, sigma_w2: f64) -> Result<SweepRow> {
    let cl = cfg.closed_loop_at(sigma_w2)?;
    let report = check_condition_c(&cl)?;
    let (oag_status, final_phi) = match cfg.oag()? {
        Some((oag, cost)) => {
            let pi_hat = model_matrix(cfg, &cl, Model::Fitted)?;
            let mut oag = oag;
            // Only the endpoint is reported.
            oag.record_stride = usize::MAX;
            let traj = run_oag(cl.g(), &pi_hat, &cost, &oag)?;
            (traj.status.label().to_string(), Some(traj.final_cost()))
        }
        None => ("Skipped".to_string(), None),
    };
    Ok(SweepRow {
        sigma_w2,
        lambda_min: report.lambda_min,
        verdict: report.verdict,
        oag_status,
        final_phi,
    })
}

pub fn sweep(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let Some(sw) = &cfg.sweep else {
        bail!("sweep needs a \"sweep\" section in the config");
    };
    match sw.param {
        SweepParam::SigmaW2 => {}
    }
    let hash = cfg.hash();
    let rows = sw
        .grid
        .par_iter()
        .map(|&s| sweep_point(cfg, s).with_context(|| format!("sweep point sigma_w2 = {s}")))
        .collect::<Result<Vec<_>>>()?;

    let mut w = create(out, "sweep.csv")?;
    writeln!(w, "# config_hash={hash}")?;
    writeln!(w, "sigma_w2,lambda_min,verdict,oag_status,final_phi")?;
    for r in &rows {
        let phi = r.final_phi.map(|p| format!("{p:?}")).unwrap_or_default();
        writeln!(w, "{:?},{:?},{},{},{}", r.sigma_w2, r.lambda_min, r.verdict.as_str(), r.oag_status, phi)?;
    }
    w.flush()?;

    let range = sw.threshold_range.unwrap_or_else(|| {
        let lo = sw.grid.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = sw.grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        [lo, hi]
    });
    let system = cfg.system()?;
    let value = match condition_threshold(&system, &cfg.sigma_r()?, (range[0], range[1])) {
        Ok(t) => json!({ "threshold": t, "range": range }),
        Err(e) => json!({ "threshold": null, "range": range, "error": e.to_string() }),
    };
    write_json(out, "threshold.json", &with_hash(value, &hash))
}
