//! Phase retrieval by HIO, alone or with the hole (partly) filled by the
//! linear recovery.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{CenteredFft, Direction, FftWork};
use crate::lattice::{Grid, IndexSet};
use crate::recovery::Measurement;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Which part of the hole is constrained with recovered values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillPolicy {
    /// The hole is left unconstrained.
    None,
    /// The whole hole is constrained.
    Full,
    /// The outer `t` square rings of the hole are constrained.
    Annular(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    /// `rho + P_A(2 P_S rho - rho) - P_S rho`.
    DouglasRachford,
    /// Fienup's input-output update with feedback `beta`.
    Classical,
}

#[derive(Debug, Clone)]
pub struct HioConfig {
    pub max_iters: usize,
    /// Error-reduction steps `P_S P_A` applied to the final image.
    pub er_iters: usize,
    /// Feedback parameter of the classical update.
    pub feedback: f64,
    pub restarts: usize,
    pub seed: u64,
    pub support: IndexSet,
    pub fill_policy: FillPolicy,
    pub mode: UpdateMode,
    /// Also require the image to be nonnegative on the support.
    pub positivity: bool,
    /// Record the data error every this many iterations; 0 disables it.
    pub log_every: usize,
}

impl HioConfig {
    pub fn new(support: IndexSet) -> Self {
        HioConfig {
            max_iters: 2000,
            er_iters: 0,
            feedback: 0.9,
            restarts: 1,
            seed: 0,
            support,
            fill_policy: FillPolicy::None,
            mode: UpdateMode::DouglasRachford,
            positivity: false,
            log_every: 50,
        }
    }

    pub fn object(&self) -> ObjectConstraint<'_> {
        ObjectConstraint {
            support: &self.support,
            positivity: self.positivity,
        }
    }

    pub fn validate(&self, hole: &IndexSet) -> Result<()> {
        if !(self.feedback > 0.0 && self.feedback <= 1.0) {
            return Err(Error::Config(format!(
                "feedback {} must lie in (0, 1]",
                self.feedback
            )));
        }
        if self.restarts == 0 {
            return Err(Error::Config("restarts must be at least 1".into()));
        }
        if self.support.is_empty() {
            return Err(Error::Config("support is empty".into()));
        }
        if let FillPolicy::Annular(t) = self.fill_policy {
            let rings = ring_count(hole);
            if t > rings {
                return Err(Error::Config(format!(
                    "annular depth {t} exceeds the {rings} rings of the hole"
                )));
            }
        }
        Ok(())
    }
}

/// Distance from `k` to the boundary of the bounding box of `hole`, in the
/// max norm: 0 on the outermost ring.
fn depth_from_boundary(bbox: &[(i64, i64)], k: &[i64]) -> usize {
    bbox.iter()
        .zip(k)
        .map(|(&(lo, hi), &x)| (x - lo).min(hi - x))
        .min()
        .unwrap_or(0)
        .max(0) as usize
}

/// Number of square rings of the hole, `w` for `W = [1-w : w-1]^d`.
pub fn ring_count(hole: &IndexSet) -> usize {
    match hole.bounding_box() {
        Some(b) => b.iter().map(|&(lo, hi)| ((hi - lo) / 2 + 1) as usize).min().unwrap_or(0),
        None => 0,
    }
}

/// Mask over the hole positions (ordered like `hole.positions()`) of the
/// entries constrained by `policy`.
pub fn filled_subset(hole: &IndexSet, policy: FillPolicy) -> Vec<bool> {
    let grid = hole.grid();
    let pos = hole.positions();
    match policy {
        FillPolicy::None => vec![false; pos.len()],
        FillPolicy::Full => vec![true; pos.len()],
        FillPolicy::Annular(t) => {
            let bbox = hole.bounding_box().unwrap_or_default();
            pos.iter()
                .map(|&p| depth_from_boundary(&bbox, &grid.unflat(p)) < t)
                .collect()
        }
    }
}

/// Target moduli on the constrained frequencies.
#[derive(Debug, Clone)]
pub struct Constraints {
    pub mask: Vec<bool>,
    /// `sqrt(max(target, 0))`, meaningful where `mask` is set.
    pub modulus: Vec<f64>,
}

impl Constraints {
    /// Constrains every frequency of `targets` (squared moduli) flagged in `mask`.
    pub fn new(mask: Vec<bool>, targets: &[f64]) -> Result<Self> {
        if mask.len() != targets.len() {
            return Err(Error::DimensionMismatch {
                expected: mask.len(),
                got: targets.len(),
            });
        }
        let modulus = targets.iter().map(|&t| t.max(0.0).sqrt()).collect();
        Ok(Constraints { mask, modulus })
    }

    /// `W^c` from the measurement plus the part of the hole selected by `policy`.
    pub fn from_measurement(meas: &Measurement, fill: Option<&[f64]>, policy: FillPolicy) -> Result<Self> {
        let mut mask: Vec<bool> = meas.hole.mask().iter().map(|&h| !h).collect();
        let mut targets = meas.a2.clone();
        let chosen = filled_subset(&meas.hole, policy);
        if chosen.iter().any(|&c| c) {
            let fill = fill.ok_or_else(|| {
                Error::InvalidInput("fill policy needs recovered values".into())
            })?;
            if fill.len() != meas.hole.len() {
                return Err(Error::DimensionMismatch {
                    expected: meas.hole.len(),
                    got: fill.len(),
                });
            }
            for ((p, &c), &v) in meas.hole.positions().into_iter().zip(&chosen).zip(fill) {
                if c {
                    mask[p] = true;
                    targets[p] = v;
                }
            }
        }
        Constraints::new(mask, &targets)
    }
}

/// Zeroes `rho` outside `support`.
pub fn project_support(rho: &[f64], support: &IndexSet) -> Vec<f64> {
    rho.iter()
        .zip(support.mask())
        .map(|(&x, &s)| if s { x } else { 0.0 })
        .collect()
}

/// Holds FFT plans and scratch space for repeated projections.
pub struct Projector {
    fft: CenteredFft,
    buf: Vec<Complex64>,
    work: FftWork,
}

impl Projector {
    pub fn new(grid: Grid) -> Self {
        Projector {
            fft: CenteredFft::new(grid),
            buf: vec![ZERO; grid.len()],
            work: FftWork::default(),
        }
    }

    /// Replaces moduli on the constrained set, keeping phases, and returns
    /// the real part of the inverse transform together with the discarded
    /// imaginary norm.
    pub fn magnitude(&mut self, rho: &[f64], c: &Constraints, out: &mut [f64]) -> f64 {
        for (b, &x) in self.buf.iter_mut().zip(rho) {
            *b = Complex64::new(x, 0.0);
        }
        self.fft.transform_with(&mut self.buf, Direction::Forward, &mut self.work);
        for ((z, &m), &t) in self.buf.iter_mut().zip(&c.mask).zip(&c.modulus) {
            if m {
                let r = z.norm_sqr().sqrt();
                *z = if r > 0.0 { *z * (t / r) } else { Complex64::new(t, 0.0) };
            }
        }
        self.fft.transform_with(&mut self.buf, Direction::Inverse, &mut self.work);
        let mut imag = 0.0;
        for (o, z) in out.iter_mut().zip(&self.buf) {
            *o = z.re;
            imag += z.im * z.im;
        }
        imag.sqrt()
    }

    pub fn power(&mut self, rho: &[f64]) -> Vec<f64> {
        for (b, &x) in self.buf.iter_mut().zip(rho) {
            *b = Complex64::new(x, 0.0);
        }
        self.fft.transform_with(&mut self.buf, Direction::Forward, &mut self.work);
        self.buf.iter().map(|z| z.norm_sqr()).collect()
    }
}

/// One magnitude projection on `grid`; targets must be nonnegative.
pub fn project_magnitude(grid: Grid, rho: &[f64], targets_sq: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if targets_sq.iter().zip(mask).any(|(&t, &m)| m && t < 0.0) {
        return Err(Error::InvalidInput("magnitude targets must be nonnegative".into()));
    }
    let c = Constraints::new(mask.to_vec(), targets_sq)?;
    let mut proj = Projector::new(grid);
    let mut out = vec![0.0; rho.len()];
    proj.magnitude(rho, &c, &mut out);
    Ok(out)
}

/// The object-domain constraint: on the support, and nonnegative when
/// `positivity` is set.
#[derive(Debug, Clone, Copy)]
pub struct ObjectConstraint<'a> {
    pub support: &'a IndexSet,
    pub positivity: bool,
}

impl ObjectConstraint<'_> {
    fn admits(&self, i: usize, x: f64) -> bool {
        self.support.mask()[i] && (!self.positivity || x >= 0.0)
    }

    /// Nearest point of the constraint set.
    pub fn project(&self, rho: &[f64]) -> Vec<f64> {
        rho.iter()
            .enumerate()
            .map(|(i, &x)| if self.admits(i, x) { x } else { 0.0 })
            .collect()
    }

    /// `2 P_S rho - rho`.
    pub fn reflect(&self, rho: &[f64]) -> Vec<f64> {
        rho.iter()
            .enumerate()
            .map(|(i, &x)| if self.admits(i, x) { x } else { -x })
            .collect()
    }
}

/// One update of the iteration.
pub fn hio_step(
    proj: &mut Projector,
    rho: &[f64],
    object: ObjectConstraint<'_>,
    c: &Constraints,
    mode: UpdateMode,
    feedback: f64,
) -> Vec<f64> {
    let mut pa = vec![0.0; rho.len()];
    match mode {
        UpdateMode::DouglasRachford => {
            proj.magnitude(&object.reflect(rho), c, &mut pa);
            rho.iter()
                .zip(&pa)
                .enumerate()
                .map(|(i, (&x, &a))| {
                    let ps = if object.admits(i, x) { x } else { 0.0 };
                    x + a - ps
                })
                .collect()
        }
        UpdateMode::Classical => {
            proj.magnitude(rho, c, &mut pa);
            rho.iter()
                .zip(&pa)
                .enumerate()
                .map(|(i, (&x, &a))| if object.admits(i, a) { a } else { x - feedback * a })
                .collect()
        }
    }
}

/// `‖|rho_hat|² - ref‖ / ‖ref‖` over the measured set (outside `hole`).
pub fn data_error_from_power(power: &[f64], reference: &[f64], hole: &IndexSet) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for ((&p, &r), &h) in power.iter().zip(reference).zip(hole.mask()) {
        if !h {
            num += (p - r) * (p - r);
            den += r * r;
        }
    }
    if den == 0.0 {
        return Err(Error::InvalidInput("reference spectrum is zero".into()));
    }
    Ok((num / den).sqrt())
}

pub fn data_error(rho: &[f64], meas: &Measurement) -> Result<f64> {
    let mut proj = Projector::new(meas.geometry.grid());
    data_error_from_power(&proj.power(rho), &meas.a2, &meas.hole)
}

/// Result of aligning a reconstruction with the truth.
#[derive(Debug, Clone, Serialize)]
pub struct Registration {
    pub error: f64,
    pub shift: Vec<i64>,
    pub flipped: bool,
    pub sign: f64,
}

fn transformed(grid: Grid, rho: &[f64], shift: &[i64], flipped: bool, sign: f64) -> Vec<f64> {
    let mut out = vec![0.0; rho.len()];
    for (q, &v) in rho.iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        let x = grid.unflat(q);
        let y: Vec<i64> = x
            .iter()
            .zip(shift)
            .map(|(&a, &t)| grid.wrap(if flipped { -a } else { a } + t))
            .collect();
        out[grid.flat(&y)] = sign * v;
    }
    out
}

/// Relative error after removing cyclic shifts, the flip `rho(-x)` and the
/// global sign, chosen to maximize correlation with `rho0`.
pub fn register_and_error(grid: Grid, rho: &[f64], rho0: &[f64]) -> Result<Registration> {
    if rho.len() != grid.len() || rho0.len() != grid.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            got: rho.len().min(rho0.len()),
        });
    }
    let n0 = rho0.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n0 == 0.0 {
        return Err(Error::InvalidInput("reference image is zero".into()));
    }
    let fft = CenteredFft::new(grid);
    let a = fft.forward_real(rho0);
    let b = fft.forward_real(rho);
    let mut best = (f64::NEG_INFINITY, 0usize, false, 1.0);
    for flipped in [false, true] {
        // shift t maps x to x + t (or -x + t); its transform picks up
        // conj(b) for the plain case and b for the flip
        let mut c: Vec<Complex64> = a
            .iter()
            .zip(&b)
            .map(|(x, y)| if flipped { x * y } else { x * y.conj() })
            .collect();
        fft.inverse(&mut c);
        for (p, z) in c.iter().enumerate() {
            let v = z.re.abs();
            if v > best.0 {
                best = (v, p, flipped, z.re.signum());
            }
        }
    }
    // correlation index is the shift in the centered convention
    let (_, p, flipped, sign) = best;
    let shift = grid.unflat(p);
    let shift: Vec<i64> = shift.iter().map(|&t| grid.wrap(t)).collect();
    let aligned = transformed(grid, rho, &shift, flipped, if sign == 0.0 { 1.0 } else { sign });
    let err = aligned
        .iter()
        .zip(rho0)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
        / n0;
    Ok(Registration {
        error: err,
        shift,
        flipped,
        sign: if sign == 0.0 { 1.0 } else { sign },
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticPoint {
    pub restart: usize,
    pub iteration: usize,
    pub data_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReconReport {
    #[serde(skip)]
    pub image: Vec<f64>,
    /// Registered relative image error of the selected restart, when the
    /// truth is known.
    pub rel_image_error: Option<f64>,
    pub data_error: f64,
    pub iterations_run: usize,
    pub fill_policy_used: FillPolicy,
    pub mode: UpdateMode,
    pub best_restart: usize,
    pub restart_data_errors: Vec<f64>,
    pub restart_image_errors: Option<Vec<f64>>,
    /// Largest discarded imaginary norm after an inverse transform.
    pub max_imag_norm: f64,
    pub diagnostics: Vec<DiagnosticPoint>,
}

fn random_start(support: &IndexSet, scale: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    support
        .mask()
        .iter()
        .map(|&s| if s { scale * rng.random::<f64>() } else { 0.0 })
        .collect()
}

/// Runs `config.restarts` independent HIO runs and keeps the one with the
/// smallest data error. Restart `r` draws its start from seed `seed + r`.
pub fn run_hio(
    meas: &Measurement,
    fill: Option<&[f64]>,
    config: &HioConfig,
    truth: Option<&[f64]>,
) -> Result<ReconReport> {
    config.validate(&meas.hole)?;
    let grid = meas.geometry.grid();
    if config.support.grid() != grid {
        return Err(Error::IndexSet("support is not on the measurement grid".into()));
    }
    let constraints = Constraints::from_measurement(meas, fill, config.fill_policy)?;
    let mut proj = Projector::new(grid);
    let energy: f64 = meas.a2.iter().filter(|x| **x > 0.0).sum();
    let scale = 2.0 * (energy / config.support.len() as f64).sqrt();

    let mut data_errors = Vec::with_capacity(config.restarts);
    let mut image_errors = truth.map(|_| Vec::with_capacity(config.restarts));
    let mut diagnostics = Vec::new();
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let mut max_imag: f64 = 0.0;
    for r in 0..config.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(r as u64));
        let mut rho = random_start(&config.support, scale, &mut rng);
        for it in 1..=config.max_iters {
            rho = hio_step(
                &mut proj,
                &rho,
                config.object(),
                &constraints,
                config.mode,
                config.feedback,
            );
            if config.log_every > 0 && it % config.log_every == 0 {
                let img = final_image(&mut proj, &rho, config, &constraints).0;
                diagnostics.push(DiagnosticPoint {
                    restart: r,
                    iteration: it,
                    data_error: data_error_from_power(&proj.power(&img), &meas.a2, &meas.hole)?,
                });
            }
        }
        let (mut img, imag) = final_image(&mut proj, &rho, config, &constraints);
        max_imag = max_imag.max(imag);
        let mut pa = vec![0.0; img.len()];
        for _ in 0..config.er_iters {
            let imag = proj.magnitude(&img, &constraints, &mut pa);
            max_imag = max_imag.max(imag);
            img = config.object().project(&pa);
        }
        let de = data_error_from_power(&proj.power(&img), &meas.a2, &meas.hole)?;
        data_errors.push(de);
        if let (Some(t), Some(errs)) = (truth, image_errors.as_mut()) {
            errs.push(register_and_error(grid, &img, t)?.error);
        }
        if best.as_ref().is_none_or(|b| de < b.0) {
            best = Some((de, r, img));
        }
    }
    let (de, r, image) = best.expect("at least one restart");
    Ok(ReconReport {
        rel_image_error: image_errors.as_ref().map(|e| e[r]),
        image,
        data_error: de,
        iterations_run: config.max_iters + config.er_iters,
        fill_policy_used: config.fill_policy,
        mode: config.mode,
        best_restart: r,
        restart_data_errors: data_errors,
        restart_image_errors: image_errors,
        max_imag_norm: max_imag,
        diagnostics,
    })
}

/// The image read off the iterate: `P_S P_A (2 P_S rho - rho)` for the Douglas-Rachford
/// update, `P_S rho` for the classical one.
fn final_image(proj: &mut Projector, rho: &[f64], config: &HioConfig, c: &Constraints) -> (Vec<f64>, f64) {
    let object = config.object();
    match config.mode {
        UpdateMode::DouglasRachford => {
            let mut pa = vec![0.0; rho.len()];
            let imag = proj.magnitude(&object.reflect(rho), c, &mut pa);
            (object.project(&pa), imag)
        }
        UpdateMode::Classical => (object.project(rho), 0.0),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DepthResult {
    pub depth: usize,
    pub data_error: f64,
    pub rel_image_error: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PartialFillReport {
    pub best: ReconReport,
    pub depth: usize,
    pub per_depth: Vec<DepthResult>,
}

/// Runs HIO with the outer `t` rings filled for `t = 0..=w` and keeps the
/// depth with the smallest data error, ties going to the smaller depth.
pub fn partial_fill_search(
    meas: &Measurement,
    recovered: &[f64],
    config: &HioConfig,
    truth: Option<&[f64]>,
) -> Result<PartialFillReport> {
    partial_fill_search_with(meas, recovered, config, truth, None)
}

/// As [`partial_fill_search`], reusing `baseline` as the depth-0 run. The
/// baseline must come from `run_hio` with the same config and no fill.
pub fn partial_fill_search_with(
    meas: &Measurement,
    recovered: &[f64],
    config: &HioConfig,
    truth: Option<&[f64]>,
    mut baseline: Option<ReconReport>,
) -> Result<PartialFillReport> {
    if recovered.len() != meas.hole.len() {
        return Err(Error::DimensionMismatch {
            expected: meas.hole.len(),
            got: recovered.len(),
        });
    }
    let rings = ring_count(&meas.hole);
    let mut per_depth = Vec::with_capacity(rings + 1);
    let mut best: Option<(usize, ReconReport)> = None;
    for t in 0..=rings {
        let cfg = HioConfig {
            fill_policy: FillPolicy::Annular(t),
            ..config.clone()
        };
        let rep = match baseline.take() {
            Some(mut b) if t == 0 => {
                b.fill_policy_used = FillPolicy::Annular(0);
                b
            }
            _ => run_hio(meas, Some(recovered), &cfg, truth)?,
        };
        per_depth.push(DepthResult {
            depth: t,
            data_error: rep.data_error,
            rel_image_error: rep.rel_image_error,
        });
        if best.as_ref().is_none_or(|b| rep.data_error < b.1.data_error) {
            best = Some((t, rep));
        }
    }
    let (depth, best) = best.expect("at least one depth");
    Ok(PartialFillReport {
        best,
        depth,
        per_depth,
    })
}
