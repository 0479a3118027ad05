//! Experiment drivers shared by the CLI commands and the acceptance suite.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::config::{hex, ExperimentConfig, SacSource};
use crate::lattice::{autocorrelation_support, beamstop_window, constraint_region, Geometry, IndexSet};
use crate::noise::{self, median, trial_rng, NoiseKind, NoiseModel, NoiseTrials};
use crate::phantom::{estimate_support, preset, simulate_measurement, Phantom, Simulation};
use crate::recovery::{recovery_svd, Measurement, Recovery, RecoveryOperator, RecoveryOptions};
use crate::spectral::{read_svd_cache, write_svd_cache, ThinSvd};
use crate::retrieval::{
    partial_fill_search_with, register_and_error, run_hio, FillPolicy, HioConfig, ReconReport,
};

pub fn recovery_options(cfg: &ExperimentConfig) -> RecoveryOptions {
    RecoveryOptions {
        sigma_floor: cfg.sigma_floor,
        truncate: cfg.truncate,
        symmetrize: cfg.symmetrize,
        svd_cap: cfg.svd_cap,
        ..RecoveryOptions::default()
    }
}

/// Phantom, hole, supports and noise-free data for one geometry.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub geometry: Geometry,
    pub phantom: Phantom,
    pub hole: IndexSet,
    /// Support estimate used as the HIO constraint.
    pub support: IndexSet,
    pub sac: IndexSet,
    pub region: IndexSet,
    pub sim: Simulation,
}

impl Scenario {
    pub fn build(cfg: &ExperimentConfig, geometry: Geometry) -> Result<Self> {
        let phantom = preset(&cfg.phantom, &geometry, cfg.seed)?;
        let hole = beamstop_window(&geometry)?;
        let support = estimate_support(geometry.grid(), &phantom.image, cfg.margin)?;
        let sac = match cfg.sac {
            SacSource::Support => autocorrelation_support(&support)?,
            SacSource::Geometry => geometry.sac_box()?,
        };
        let region = constraint_region(&geometry, &sac)?;
        let sim = simulate_measurement(&phantom, &geometry, &hole)?;
        Ok(Scenario {
            geometry,
            phantom,
            hole,
            support,
            sac,
            region,
            sim,
        })
    }

    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        Self::build(cfg, cfg.geometry()?)
    }

    pub fn operator(&self, cfg: &ExperimentConfig) -> Result<RecoveryOperator> {
        let options = recovery_options(cfg);
        if !cfg.svd_cache {
            return RecoveryOperator::new(self.geometry, &self.hole, &self.region, options);
        }
        let svd = cached_svd(cfg, self.geometry, &self.hole, &self.region, &options)?;
        RecoveryOperator::from_svd(self.geometry, svd, options)
    }

    pub fn hio_config(&self, cfg: &ExperimentConfig, fill: FillPolicy, seed: u64) -> HioConfig {
        HioConfig {
            max_iters: cfg.hio_iters,
            er_iters: cfg.er_iters,
            feedback: cfg.feedback,
            restarts: cfg.restarts,
            seed,
            fill_policy: fill,
            mode: cfg.mode,
            positivity: cfg.positivity,
            log_every: 0,
            ..HioConfig::new(self.support.clone())
        }
    }

    pub fn truth(&self) -> &[f64] {
        &self.phantom.image
    }
}

/// Loads the SVD of `F*_{R,W}` from the cache directory, computing and storing
/// it on a miss. Files are keyed by the grid and both mask hashes.
pub fn cached_svd(
    cfg: &ExperimentConfig,
    geometry: Geometry,
    w: &IndexSet,
    r: &IndexSet,
    options: &RecoveryOptions,
) -> Result<ThinSvd> {
    let dir = cfg.output.join("svd_cache");
    let key = format!(
        "d{}_n{}_m{}_{}_{}.hfsv",
        geometry.d,
        geometry.n,
        geometry.m,
        &hex(&w.hash())[..16],
        &hex(&r.hash())[..16]
    );
    let path = dir.join(key);
    if let Ok(file) = File::open(&path) {
        if let Ok(svd) = read_svd_cache(&mut BufReader::new(file), r, w) {
            return Ok(svd);
        }
    }
    let svd = recovery_svd(w, r, options)?;
    fs::create_dir_all(&dir)?;
    let mut out = BufWriter::new(File::create(&path)?);
    write_svd_cache(&mut out, geometry.n as u32, geometry.m as u32, &svd)?;
    out.flush()?;
    Ok(svd)
}

/// Relative errors of recovered hole values against the withheld data.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FillAccuracy {
    pub max_rel_error: f64,
    pub rel_error: f64,
}

pub fn fill_accuracy(values: &[f64], truth: &[f64]) -> FillAccuracy {
    let mut max_rel: f64 = 0.0;
    let mut num = 0.0;
    let mut den = 0.0;
    for (&v, &t) in values.iter().zip(truth) {
        if t != 0.0 {
            max_rel = max_rel.max(((v - t) / t).abs());
        }
        num += (v - t) * (v - t);
        den += t * t;
    }
    FillAccuracy {
        max_rel_error: max_rel,
        rel_error: if den > 0.0 { (num / den).sqrt() } else { num.sqrt() },
    }
}

/// The noise model of `kind` at the configured strength.
pub fn noise_model(cfg: &ExperimentConfig, kind: NoiseKind) -> NoiseModel {
    NoiseModel {
        kind,
        scale: match kind {
            NoiseKind::Poisson => cfg.snr,
            _ => cfg.noise_scale,
        },
        seed: cfg.noise_seed(),
    }
}

/// The measurement of the scenario, with noise on `W^c` drawn for `trial`
/// when a model is given.
pub fn noisy_measurement(
    scenario: &Scenario,
    op: &RecoveryOperator,
    model: Option<&NoiseModel>,
    trial: u64,
) -> Result<Measurement> {
    let Some(model) = model else {
        return Ok(scenario.sim.measurement.clone());
    };
    let mut rng = trial_rng(model.seed, trial);
    let n = noise::sample_noise_on_measured(op, model, &scenario.sim.power, &mut rng)?;
    let noisy: Vec<f64> = scenario.sim.power.iter().zip(&n).map(|(a, b)| a + b).collect();
    Measurement::new(scenario.geometry, noisy, scenario.hole.clone())
}

/// One recovery run: the operator, the fill and its accuracy.
pub struct RecoverRun {
    pub scenario: Scenario,
    pub op: RecoveryOperator,
    pub measurement: Measurement,
    pub recovery: Recovery,
    pub accuracy: FillAccuracy,
}

pub fn recover_run(cfg: &ExperimentConfig) -> Result<RecoverRun> {
    let scenario = Scenario::from_config(cfg)?;
    let op = scenario.operator(cfg)?;
    let model = cfg.single_noise()?.map(|k| noise_model(cfg, k));
    let measurement = noisy_measurement(&scenario, &op, model.as_ref(), 0)?;
    let recovery = op.recover(&measurement)?;
    let accuracy = fill_accuracy(&recovery.values, &scenario.sim.withheld);
    Ok(RecoverRun {
        scenario,
        op,
        measurement,
        recovery,
        accuracy,
    })
}

/// Amplification trials for every configured noise model (all three when
/// none is configured).
pub fn noise_histograms(cfg: &ExperimentConfig) -> Result<(RecoveryOperator, Vec<NoiseTrials>)> {
    let scenario = Scenario::from_config(cfg)?;
    let op = scenario.operator(cfg)?;
    let kinds = if cfg.noise.is_empty() {
        vec![NoiseKind::Uniform, NoiseKind::Gaussian, NoiseKind::Poisson]
    } else {
        cfg.noise.clone()
    };
    let runs = kinds
        .into_iter()
        .map(|k| noise::run_noise_trials(&op, &noise_model(cfg, k), &scenario.sim.power, cfg.trials, cfg.bins))
        .collect::<Result<_>>()?;
    Ok((op, runs))
}

#[derive(Debug, Clone, Serialize)]
pub struct PairedRestart {
    pub restart: usize,
    pub hio_error: f64,
    pub fill_error: f64,
    pub hio_data_error: f64,
    pub fill_data_error: f64,
}

/// HIO alone against Fill+HIO at one hole size, restart by restart with
/// shared starting points.
#[derive(Debug, Clone, Serialize)]
pub struct FillHioPoint {
    pub w: usize,
    pub k0: f64,
    pub sigma_min: f64,
    pub fill: FillAccuracy,
    pub restarts: Vec<PairedRestart>,
    pub hio_median: f64,
    pub fill_median: f64,
    /// Fraction of restarts in which Fill+HIO ends with the smaller error.
    pub dominance: f64,
    #[serde(skip)]
    pub hio: ReconReport,
    #[serde(skip)]
    pub fill_hio: ReconReport,
}

pub fn fill_hio_point(cfg: &ExperimentConfig, w: usize) -> Result<FillHioPoint> {
    let geometry = cfg.geometry_for_w(w)?;
    let scenario = Scenario::build(cfg, geometry)?;
    let op = scenario.operator(cfg)?;
    let rec = op.recover(&scenario.sim.measurement)?;
    let truth = scenario.truth();
    let meas = &scenario.sim.measurement;
    let seed = cfg.hio_seed();
    let hio = run_hio(meas, None, &scenario.hio_config(cfg, FillPolicy::None, seed), Some(truth))?;
    let fill_hio = run_hio(
        meas,
        Some(&rec.values),
        &scenario.hio_config(cfg, FillPolicy::Full, seed),
        Some(truth),
    )?;
    let a = hio.restart_image_errors.clone().unwrap_or_default();
    let b = fill_hio.restart_image_errors.clone().unwrap_or_default();
    let restarts: Vec<PairedRestart> = (0..a.len())
        .map(|r| PairedRestart {
            restart: r,
            hio_error: a[r],
            fill_error: b[r],
            hio_data_error: hio.restart_data_errors[r],
            fill_data_error: fill_hio.restart_data_errors[r],
        })
        .collect();
    let wins = restarts.iter().filter(|p| p.fill_error < p.hio_error).count();
    Ok(FillHioPoint {
        w,
        k0: geometry.k0,
        sigma_min: op.svd().sigma_min(),
        fill: fill_accuracy(&rec.values, &scenario.sim.withheld),
        hio_median: median(&a),
        fill_median: median(&b),
        dominance: wins as f64 / restarts.len().max(1) as f64,
        restarts,
        hio,
        fill_hio,
    })
}

/// Hole sizes of a sweep: `ws` when given, the configured one otherwise.
pub fn sweep_widths(cfg: &ExperimentConfig) -> Result<Vec<usize>> {
    if cfg.ws.is_empty() {
        Ok(vec![cfg.geometry()?.w()])
    } else {
        Ok(cfg.ws.clone())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PartialFillTrial {
    pub trial: usize,
    pub hio_error: f64,
    pub partial_error: f64,
    pub depth: usize,
    pub hio_data_error: f64,
    pub partial_data_error: f64,
}

/// Noisy trials comparing HIO alone with the data-error-selected partial
/// fill. Trial `t` draws its noise from stream `t` and its HIO starts from
/// seed `hio_seed + t * restarts`.
pub fn partial_fill_trials(cfg: &ExperimentConfig) -> Result<Vec<PartialFillTrial>> {
    let kind = cfg.single_noise()?.unwrap_or(NoiseKind::Poisson);
    let scenario = Scenario::from_config(cfg)?;
    let op = scenario.operator(cfg)?;
    let model = noise_model(cfg, kind);
    let truth = scenario.truth();
    (0..cfg.trials)
        .map(|t| {
            let meas = noisy_measurement(&scenario, &op, Some(&model), t as u64)?;
            let rec = op.recover(&meas)?;
            let seed = cfg.hio_seed().wrapping_add((t * cfg.restarts) as u64);
            let hcfg = scenario.hio_config(cfg, FillPolicy::None, seed);
            let hio = run_hio(&meas, None, &hcfg, Some(truth))?;
            let hio_error = image_error(&hio)?;
            let hio_data_error = hio.data_error;
            let partial = partial_fill_search_with(&meas, &rec.values, &hcfg, Some(truth), Some(hio))?;
            Ok(PartialFillTrial {
                trial: t,
                hio_error,
                partial_error: image_error(&partial.best)?,
                depth: partial.depth,
                hio_data_error,
                partial_data_error: partial.best.data_error,
            })
        })
        .collect()
}

fn image_error(rep: &ReconReport) -> Result<f64> {
    rep.rel_image_error
        .ok_or_else(|| Error::InvalidInput("reconstruction has no reference image".into()))
}

/// Registered error of an arbitrary image against the scenario's phantom.
pub fn registered_error(scenario: &Scenario, image: &[f64]) -> Result<f64> {
    Ok(register_and_error(scenario.geometry.grid(), image, scenario.truth())?.error)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(dir: &std::path::Path) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        for kv in ["N=8", "m=3", "k0=1.5", "restarts=3", "hio_iters=60", "trials=4"] {
            cfg.apply_override(kv).unwrap();
        }
        cfg.output = dir.to_path_buf();
        cfg
    }

    #[test]
    fn cached_operator_matches_fresh_one() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(dir.path());
        let sc = Scenario::from_config(&cfg).unwrap();
        let fresh = sc.operator(&cfg).unwrap();
        cfg.svd_cache = true;
        let first = sc.operator(&cfg).unwrap();
        let files: Vec<_> = fs::read_dir(dir.path().join("svd_cache")).unwrap().collect();
        assert_eq!(files.len(), 1);
        let second = sc.operator(&cfg).unwrap();
        assert_eq!(first.svd().sigma, fresh.svd().sigma);
        assert_eq!(second.svd().sigma, fresh.svd().sigma);
        assert_eq!(second.svd().u, fresh.svd().u);
        let a = fresh.recover(&sc.sim.measurement).unwrap().values;
        let b = second.recover(&sc.sim.measurement).unwrap().values;
        assert_eq!(a, b);
    }

    #[test]
    fn fill_accuracy_of_exact_values_is_zero() {
        let acc = fill_accuracy(&[1.0, -2.0, 3.0], &[1.0, -2.0, 3.0]);
        assert_eq!(acc.max_rel_error, 0.0);
        assert_eq!(acc.rel_error, 0.0);
    }

    #[test]
    fn noise_free_fill_reproduces_withheld_data() {
        let dir = tempfile::tempdir().unwrap();
        let run = recover_run(&small(dir.path())).unwrap();
        let acc = fill_accuracy(&run.recovery.values, &run.scenario.sim.withheld);
        assert!(acc.max_rel_error < 1e-10, "{acc:?}");
    }

    #[test]
    fn fill_hio_point_pairs_restarts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path());
        let p = fill_hio_point(&cfg, 4).unwrap();
        assert_eq!(p.w, 4);
        assert_eq!(p.restarts.len(), 3);
        assert!((0.0..=1.0).contains(&p.dominance));
        let again = fill_hio_point(&cfg, 4).unwrap();
        assert_eq!(p.hio_median, again.hio_median);
        assert_eq!(p.fill_median, again.fill_median);
    }

    #[test]
    fn partial_fill_trials_are_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path());
        let a = partial_fill_trials(&cfg).unwrap();
        let b = partial_fill_trials(&cfg).unwrap();
        assert_eq!(a.len(), 4);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.hio_error, y.hio_error);
            assert_eq!(x.partial_error, y.partial_error);
        }
    }
}
