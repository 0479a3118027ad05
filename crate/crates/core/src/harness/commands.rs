//! The subcommands. Each writes its artifacts and returns a short summary.

use std::path::PathBuf;

use num_complex::Complex64;
use serde::Serialize;
use serde_json::json;

use crate::conditioning::{cond_table, cond_table_csv, fig13_csv, recovery_norm_from_sigma, sweep_fig13};
use crate::error::Result;
use crate::fft::CenteredFft;
use crate::harness::arrayfile::ArrayFile;
use crate::harness::config::ExperimentConfig;
use crate::harness::experiments::{
    fill_hio_point, noise_histograms, noise_model, noisy_measurement, partial_fill_trials, recover_run,
    sweep_widths, Scenario,
};
use crate::harness::{num, Artifacts};
use crate::lattice::{Grid, IndexSet};
use crate::noise::{expected_amplification_bound, median, HistogramBin};
use crate::retrieval::{run_hio, FillPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Recover,
    CondTable,
    NoiseHist,
    Hio,
    FillHio,
    PartialFill,
    SweepFig13,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Recover => "recover",
            Command::CondTable => "cond-table",
            Command::NoiseHist => "noise-hist",
            Command::Hio => "hio",
            Command::FillHio => "fill-hio",
            Command::PartialFill => "partial-fill",
            Command::SweepFig13 => "sweep-fig13",
        }
    }
}

/// What a command produced.
#[derive(Debug, Clone, Serialize)]
pub struct Outcome {
    pub command: String,
    pub files: Vec<PathBuf>,
    pub summary: serde_json::Value,
}

/// Validates the config and returns it as JSON without computing anything.
pub fn dry_run(cmd: Command, cfg: &ExperimentConfig) -> Result<String> {
    cfg.validate()?;
    Ok(serde_json::to_string_pretty(&json!({
        "command": cmd.name(),
        "config_sha256": cfg.hash(),
        "config": cfg,
    }))?)
}

pub fn run(cmd: Command, cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.validate()?;
    let mut art = Artifacts::create(cmd.name(), cfg)?;
    let summary = match cmd {
        Command::Recover => cmd_recover(cfg, &mut art)?,
        Command::CondTable => cmd_cond_table(cfg, &mut art)?,
        Command::NoiseHist => cmd_noise_hist(cfg, &mut art)?,
        Command::Hio => cmd_hio(cfg, &mut art)?,
        Command::FillHio => cmd_fill_hio(cfg, &mut art)?,
        Command::PartialFill => cmd_partial_fill(cfg, &mut art)?,
        Command::SweepFig13 => cmd_sweep_fig13(cfg, &mut art)?,
    };
    Ok(Outcome {
        command: cmd.name().to_string(),
        files: art.written().to_vec(),
        summary,
    })
}

fn grid_dims(grid: Grid) -> Vec<usize> {
    vec![grid.side(); grid.d]
}

fn box_dims(set: &IndexSet) -> Vec<usize> {
    match set.bbox() {
        Some(b) => b.iter().map(|&(lo, hi)| (hi - lo + 1) as usize).collect(),
        None => vec![set.len()],
    }
}

fn mask_array(set: &IndexSet) -> Result<ArrayFile> {
    let data = set.mask().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    ArrayFile::real(grid_dims(set.grid()), data)
}

fn image_array(grid: Grid, image: &[f64]) -> Result<ArrayFile> {
    ArrayFile::real(grid_dims(grid), image.to_vec())
}

/// Fill accuracy, the singular spectrum and the four recovery panels.
pub fn cmd_recover(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<serde_json::Value> {
    let run = recover_run(cfg)?;
    let sc = &run.scenario;
    let svd = run.op.svd();
    let rows: Vec<String> = svd
        .sigma
        .iter()
        .enumerate()
        .map(|(j, &s)| format!("{},{},{}", j + 1, num(s), num(recovery_norm_from_sigma(s))))
        .collect();
    art.csv("singular_values.csv", "j,sigma,nu", &rows)?;
    art.array("r_mask", &mask_array(&sc.region)?, "1 on the constraint region R, 0 elsewhere")?;
    let hole_dims = box_dims(&sc.hole);
    art.array(
        "recovered_hole",
        &ArrayFile::real(hole_dims.clone(), run.recovery.values.clone())?,
        "recovered |rho_hat|^2 on W, row-major over the hole box",
    )?;
    art.array(
        "withheld_hole",
        &ArrayFile::real(hole_dims, sc.sim.withheld.clone())?,
        "true |rho_hat|^2 on W",
    )?;
    let grid = sc.geometry.grid();
    let fft = CenteredFft::new(grid);
    let completed = run.measurement.merged(&run.recovery.values)?;
    let mut diff: Vec<Complex64> = completed
        .iter()
        .zip(&sc.sim.power)
        .map(|(a, b)| Complex64::new(a - b, 0.0))
        .collect();
    fft.inverse(&mut diff);
    art.array(
        "autocorrelation_error",
        &ArrayFile::real(grid_dims(grid), diff.iter().map(|z| z.re).collect())?,
        "inverse DFT of (completed minus true) |rho_hat|^2 over J",
    )?;
    let summary = json!({
        "geometry": sc.geometry,
        "w": sc.geometry.w(),
        "hole_size": sc.hole.len(),
        "region_size": sc.region.len(),
        "sigma_min": svd.sigma_min(),
        "sigma_max": svd.sigma_max(),
        "condition": svd.sigma_max() / svd.sigma_min(),
        "recovery_norm": recovery_norm_from_sigma(svd.sigma_min()),
        "fill": run.accuracy,
        "residual": run.recovery.residual,
        "relative_residual": run.recovery.relative_residual,
        "imag_norm": run.recovery.imag_norm,
        "rank": run.recovery.rank,
        "noise": cfg.single_noise()?,
    });
    art.json("recover.json", &summary)?;
    Ok(summary)
}

fn or_default<T: Clone>(list: &[T], value: T) -> Vec<T> {
    if list.is_empty() {
        vec![value]
    } else {
        list.to_vec()
    }
}

fn split_csv(text: &str) -> (String, Vec<String>) {
    let mut lines = text.lines().map(str::to_string);
    let header = lines.next().unwrap_or_default();
    (header, lines.collect())
}

/// `‖R_{R,W}‖` over `ns x ms x k0s`.
pub fn cmd_cond_table(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<serde_json::Value> {
    let rows = cond_table(
        cfg.beta,
        &or_default(&cfg.ns, cfg.n),
        &or_default(&cfg.ms, cfg.m),
        &or_default(&cfg.k0s, cfg.k0),
        cfg.d,
    )?;
    let (header, body) = split_csv(&cond_table_csv(&rows));
    art.csv("cond_table.csv", &header, &body)?;
    art.json("cond_table.json", &rows)?;
    Ok(json!({ "rows": rows.len() }))
}

/// `[mu0]^{-1/2}` against its asymptote on 1d grids.
pub fn cmd_sweep_fig13(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<serde_json::Value> {
    let rows = sweep_fig13(
        &or_default(&cfg.betas, cfg.beta),
        &or_default(&cfg.k0s, cfg.k0),
        &or_default(&cfg.ms, cfg.m),
        cfg.n,
    )?;
    let (header, body) = split_csv(&fig13_csv(&rows));
    art.csv("fig13.csv", &header, &body)?;
    art.json("fig13.json", &rows)?;
    Ok(json!({ "rows": rows.len() }))
}

fn hist_rows(bins: &[HistogramBin]) -> Vec<String> {
    bins.iter()
        .map(|b| format!("{},{},{}", num(b.left), num(b.right), b.count))
        .collect()
}

/// Amplification ratios `‖R n‖ / ‖n‖` per noise model.
pub fn cmd_noise_hist(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<serde_json::Value> {
    let (op, runs) = noise_histograms(cfg)?;
    let mut per_model = serde_json::Map::new();
    for r in &runs {
        let kind = serde_json::to_value(r.model.kind)?;
        let kind = kind.as_str().unwrap_or("noise").to_string();
        let rows: Vec<String> = r
            .ratios
            .iter()
            .enumerate()
            .map(|(t, x)| format!("{t},{}", num(*x)))
            .collect();
        art.csv(&format!("noise_{kind}_ratios.csv"), "trial,ratio", &rows)?;
        art.csv(&format!("noise_{kind}_hist.csv"), "left,right,count", &hist_rows(&r.histogram))?;
        per_model.insert(kind, json!({ "model": r.model, "summary": r.summary }));
    }
    let summary = json!({
        "sigma_min": op.svd().sigma_min(),
        "bound": expected_amplification_bound(&op),
        "models": per_model,
    });
    art.json("noise_summary.json", &summary)?;
    Ok(summary)
}

/// One HIO reconstruction with the configured fill policy.
pub fn cmd_hio(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<serde_json::Value> {
    let sc = Scenario::from_config(cfg)?;
    let model = cfg.single_noise()?.map(|k| noise_model(cfg, k));
    let needs_op = cfg.fill != FillPolicy::None || model.is_some();
    let op = if needs_op { Some(sc.operator(cfg)?) } else { None };
    let meas = match &op {
        Some(op) => noisy_measurement(&sc, op, model.as_ref(), 0)?,
        None => sc.sim.measurement.clone(),
    };
    let fill = match (&op, cfg.fill) {
        (Some(op), f) if f != FillPolicy::None => Some(op.recover(&meas)?.values),
        _ => None,
    };
    let mut hcfg = sc.hio_config(cfg, cfg.fill, cfg.hio_seed());
    hcfg.log_every = 50;
    let rep = run_hio(&meas, fill.as_deref(), &hcfg, Some(sc.truth()))?;
    let grid = sc.geometry.grid();
    art.array("hio_image", &image_array(grid, &rep.image)?, "reconstruction of the best restart")?;
    art.array("truth_image", &image_array(grid, sc.truth())?, "phantom")?;
    let errs = rep.restart_image_errors.clone().unwrap_or_default();
    let rows: Vec<String> = rep
        .restart_data_errors
        .iter()
        .zip(&errs)
        .enumerate()
        .map(|(r, (d, e))| format!("{r},{},{}", num(*d), num(*e)))
        .collect();
    art.csv("hio_restarts.csv", "restart,data_error,image_error", &rows)?;
    let diag: Vec<String> = rep
        .diagnostics
        .iter()
        .map(|p| format!("{},{},{}", p.restart, p.iteration, num(p.data_error)))
        .collect();
    art.csv("hio_diagnostics.csv", "restart,iteration,data_error", &diag)?;
    art.json("hio_report.json", &rep)?;
    Ok(json!({
        "rel_image_error": rep.rel_image_error,
        "data_error": rep.data_error,
        "best_restart": rep.best_restart,
    }))
}

/// HIO alone against Fill+HIO over the hole sizes `ws`.
pub fn cmd_fill_hio(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<serde_json::Value> {
    let mut restart_rows = Vec::new();
    let mut summary_rows = Vec::new();
    let mut points = Vec::new();
    let mut truth_written = false;
    for w in sweep_widths(cfg)? {
        let p = fill_hio_point(cfg, w)?;
        for r in &p.restarts {
            restart_rows.push(format!(
                "{w},{},{},{},{},{}",
                r.restart,
                num(r.hio_error),
                num(r.fill_error),
                num(r.hio_data_error),
                num(r.fill_data_error)
            ));
        }
        summary_rows.push(format!(
            "{w},{},{},{},{},{},{},{}",
            num(p.k0),
            num(p.sigma_min),
            num(p.fill.max_rel_error),
            num(p.fill.rel_error),
            num(p.hio_median),
            num(p.fill_median),
            num(p.dominance)
        ));
        let grid = cfg.geometry_for_w(w)?.grid();
        if !truth_written {
            let sc = Scenario::build(cfg, cfg.geometry_for_w(w)?)?;
            art.array("truth_image", &image_array(grid, sc.truth())?, "phantom")?;
            truth_written = true;
        }
        art.array(&format!("hio_w{w}"), &image_array(grid, &p.hio.image)?, "HIO alone, best restart")?;
        art.array(&format!("fill_hio_w{w}"), &image_array(grid, &p.fill_hio.image)?, "Fill+HIO, best restart")?;
        points.push(p);
    }
    art.csv(
        "fill_hio_restarts.csv",
        "w,restart,hio_error,fill_error,hio_data_error,fill_data_error",
        &restart_rows,
    )?;
    art.csv(
        "fill_hio_summary.csv",
        "w,k0,sigma_min,fill_max_rel_error,fill_rel_error,hio_median,fill_median,dominance",
        &summary_rows,
    )?;
    art.json("fill_hio.json", &points)?;
    Ok(json!({ "widths": points.iter().map(|p| p.w).collect::<Vec<_>>() }))
}

/// Equal-width bins over a shared range so two histograms line up.
fn shared_histograms(a: &[f64], b: &[f64], bins: usize) -> Vec<String> {
    let all = a.iter().chain(b);
    let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
    let bins = bins.max(1);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let count = |v: &[f64]| {
        let mut c = vec![0usize; bins];
        for &x in v {
            c[(((x - lo) / width) as usize).min(bins - 1)] += 1;
        }
        c
    };
    let (ca, cb) = (count(a), count(b));
    (0..bins)
        .map(|i| {
            format!(
                "{},{},{},{}",
                num(lo + i as f64 * width),
                num(lo + (i + 1) as f64 * width),
                ca[i],
                cb[i]
            )
        })
        .collect()
}

/// Noisy trials of HIO alone against the data-error-selected partial fill.
pub fn cmd_partial_fill(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<serde_json::Value> {
    let trials = partial_fill_trials(cfg)?;
    let rows: Vec<String> = trials
        .iter()
        .map(|t| {
            format!(
                "{},{},{},{},{},{}",
                t.trial,
                num(t.hio_error),
                num(t.partial_error),
                t.depth,
                num(t.hio_data_error),
                num(t.partial_data_error)
            )
        })
        .collect();
    art.csv(
        "partial_fill_trials.csv",
        "trial,hio_error,partial_error,depth,hio_data_error,partial_data_error",
        &rows,
    )?;
    let a: Vec<f64> = trials.iter().map(|t| t.hio_error).collect();
    let b: Vec<f64> = trials.iter().map(|t| t.partial_error).collect();
    art.csv(
        "partial_fill_hist.csv",
        "left,right,hio_count,partial_count",
        &shared_histograms(&a, &b, cfg.bins),
    )?;
    let summary = json!({
        "trials": trials.len(),
        "hio_median": median(&a),
        "partial_median": median(&b),
        "hio_mean": a.iter().sum::<f64>() / a.len().max(1) as f64,
        "partial_mean": b.iter().sum::<f64>() / b.len().max(1) as f64,
        "depths": trials.iter().map(|t| t.depth).collect::<Vec<_>>(),
    });
    art.json("partial_fill.json", &summary)?;
    Ok(summary)
}
