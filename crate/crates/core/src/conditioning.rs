//! Norm of the recovery operator: exact, through the complement identity
//! with tensor products, and through the closed-form asymptote.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fft::Direction;
use crate::lattice::{beamstop_window, constraint_region, Geometry, Grid, IndexSet};
use crate::recovery::{RecoveryOperator, RecoveryOptions};
use crate::spectral::{singular_values, RestrictedDft};

/// Value above which a 1d condition number is no longer meaningful in
/// double precision.
pub const SATURATION: f64 = 1e15;

/// Below this `sigma_min` the automatic selection avoids the dense route.
pub const DIRECT_SIGMA_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    DenseSvd,
    Complement1dTensor,
    PowerIteration,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::DenseSvd => "dense_svd",
            Method::Complement1dTensor => "complement_1d_tensor",
            Method::PowerIteration => "power_iteration",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditioningReport {
    pub geometry: Geometry,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// `‖R_{R,W}‖`.
    pub recovery_norm: f64,
    /// `1 / sigma_min`.
    pub bound: f64,
    /// `sigma_min^2`.
    pub mu0: f64,
    /// Largest singular value of `F*_{S_AC,W}`.
    pub tau1: f64,
    pub asymptotic: f64,
    pub method: Method,
}

/// `‖R_{R,W}‖ = sqrt(sigma_min^{-2} - 1)`.
///
/// `R R* = V (Σ^{-2} - I) V*` because `F*_{R,W^c} F_{W^c,R} = I - F*_{R,W} F_{W,R}`
/// on `R`, so every singular value of the recovery operator is
/// `nu_j = sqrt(sigma_j^{-2} - 1)`.
pub fn recovery_norm_from_sigma(sigma: f64) -> f64 {
    ((1.0 - sigma) * (1.0 + sigma)).max(0.0).sqrt() / sigma
}

/// Singular values `nu_j` of the recovery operator, descending.
pub fn recovery_singular_values(sigma: &[f64]) -> Vec<f64> {
    sigma.iter().rev().map(|&s| recovery_norm_from_sigma(s)).collect()
}

/// Power iteration on `R R*`, seeded with the last right singular vector.
///
/// Returns the norm estimate and the iteration count.
pub fn power_iteration_norm(op: &RecoveryOperator, max_iters: usize, tol: f64) -> Result<(f64, usize)> {
    let svd = op.svd();
    let mut x: Vec<Complex64> = svd.right_vector(op.rank() - 1);
    let mut est = 0.0f64;
    let mut change = f64::INFINITY;
    for it in 1..=max_iters {
        let y = op.apply_adjoint(&x);
        let z = op.apply_complex(&y);
        let lambda = z.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if lambda == 0.0 {
            return Ok((0.0, it));
        }
        let next = lambda.sqrt();
        change = (next - est).abs() / next;
        est = next;
        x = z.into_iter().map(|c| c / lambda).collect();
        if change <= tol {
            return Ok((est, it));
        }
    }
    Err(Error::NoConvergence {
        iters: max_iters,
        change,
    })
}

/// Exact conditioning of `F*_{R,W}` through its thin SVD, with the norm
/// found by power iteration.
pub fn recovery_norm_exact(
    geometry: &Geometry,
    w: &IndexSet,
    r: &IndexSet,
    max_iters: usize,
    tol: f64,
) -> Result<ConditioningReport> {
    let options = RecoveryOptions {
        sigma_floor: 0.0,
        ..Default::default()
    };
    let op = RecoveryOperator::new(*geometry, w, r, options)?;
    let (norm, _) = power_iteration_norm(&op, max_iters, tol)?;
    let s_min = op.svd().sigma_min();
    Ok(ConditioningReport {
        geometry: *geometry,
        sigma_min: s_min,
        sigma_max: op.svd().sigma_max(),
        recovery_norm: norm,
        bound: 1.0 / s_min,
        mu0: s_min * s_min,
        tau1: ((1.0 - s_min) * (1.0 + s_min)).max(0.0).sqrt(),
        asymptotic: asymptotic_norm(geometry.beta, geometry.k0, geometry.d),
        method: Method::PowerIteration,
    })
}

/// Per-axis result of the complement route.
#[derive(Debug, Clone, Serialize)]
pub struct ComplementResult {
    pub sigma_min: f64,
    /// Largest singular value of `F*_{S_AC,W}`.
    pub tau1: f64,
    /// `1 - tau_a^2` per axis, computed directly as `sigma_min^2` of the 1d
    /// operator on the complement.
    pub eps: Vec<f64>,
    pub tau_axes: Vec<f64>,
}

fn interval_set(half: usize, lo: i64, hi: i64) -> Result<IndexSet> {
    IndexSet::from_box(Grid::new(1, half), &[(lo, hi)])
}

/// `sigma_min` of `F*_{R,W}` for box `W` and `R = J \ S_AC` with `S_AC` a box,
/// from 1d spectra.
///
/// `F*_{S_AC,W}` factors as a tensor product, so `tau_1 = prod tau_a` and
/// `sigma_min^2 = 1 - prod (1 - eps_a)`, which is evaluated with `ln1p` and
/// `expm1` to keep tiny values accurate.
pub fn sigma_min_via_complement(w: &IndexSet, sac: &IndexSet) -> Result<ComplementResult> {
    if w.grid() != sac.grid() {
        return Err(Error::IndexSet("W and S_AC live on different grids".into()));
    }
    let wb = w
        .bbox()
        .ok_or_else(|| Error::NotBox("hole W is not a box".into()))?
        .to_vec();
    let half = w.grid().half;
    let d = w.grid().d;
    let sb = if sac.is_empty() {
        None
    } else {
        Some(
            sac.bbox()
                .ok_or_else(|| Error::NotBox("S_AC is not a box".into()))?
                .to_vec(),
        )
    };
    let mut eps = Vec::with_capacity(d);
    let mut tau_axes = Vec::with_capacity(d);
    for a in 0..d {
        let wa = interval_set(half, wb[a].0, wb[a].1)?;
        let (e, t) = match &sb {
            None => (1.0, 0.0),
            Some(sb) => {
                let sa = interval_set(half, sb[a].0, sb[a].1)?;
                let ra = sa.complement();
                let p = wa.len();
                let s_r = if ra.len() < p {
                    0.0
                } else {
                    let op = RestrictedDft::new(wa.clone(), ra, Direction::Inverse)?;
                    singular_values(op.to_dense()).last().copied().unwrap_or(0.0)
                };
                let op = RestrictedDft::new(wa, sa, Direction::Inverse)?;
                let t = singular_values(op.to_dense()).first().copied().unwrap_or(0.0);
                (s_r * s_r, t)
            }
        };
        eps.push(e);
        tau_axes.push(t);
    }
    let log_keep: f64 = eps.iter().map(|&e| (-e).ln_1p()).sum();
    let sigma_min = (-log_keep.exp_m1()).max(0.0).sqrt();
    Ok(ComplementResult {
        sigma_min,
        tau1: tau_axes.iter().product(),
        eps,
        tau_axes,
    })
}

/// Conditioning of a box geometry through the complement route.
pub fn complement_report(geometry: &Geometry, w: &IndexSet, sac: &IndexSet) -> Result<ConditioningReport> {
    let c = sigma_min_via_complement(w, sac)?;
    Ok(ConditioningReport {
        geometry: *geometry,
        sigma_min: c.sigma_min,
        sigma_max: sigma_max_via_complement(w, sac)?,
        recovery_norm: recovery_norm_from_sigma(c.sigma_min),
        bound: 1.0 / c.sigma_min,
        mu0: c.sigma_min * c.sigma_min,
        tau1: c.tau1,
        asymptotic: asymptotic_norm(geometry.beta, geometry.k0, geometry.d),
        method: Method::Complement1dTensor,
    })
}

/// `sigma_max` of `F*_{R,W}` from the smallest `tau` of the tensor factors.
fn sigma_max_via_complement(w: &IndexSet, sac: &IndexSet) -> Result<f64> {
    if sac.is_empty() {
        return Ok(1.0);
    }
    let (wb, sb) = match (w.bbox(), sac.bbox()) {
        (Some(a), Some(b)) => (a.to_vec(), b.to_vec()),
        _ => return Err(Error::NotBox("complement route needs boxes".into())),
    };
    let half = w.grid().half;
    let mut tmin = 1.0;
    for a in 0..wb.len() {
        let wa = interval_set(half, wb[a].0, wb[a].1)?;
        let sa = interval_set(half, sb[a].0, sb[a].1)?;
        let p = wa.len();
        let op = RestrictedDft::new(wa, sa.clone(), Direction::Inverse)?;
        let s = singular_values(op.to_dense());
        // fewer rows than columns leaves zero singular values
        tmin *= if sa.len() < p { 0.0 } else { s.last().copied().unwrap_or(0.0) };
    }
    Ok(((1.0 - tmin) * (1.0 + tmin)).max(0.0).sqrt())
}

/// Picks the complement route for boxes and the dense route otherwise.
pub fn condition(geometry: &Geometry, w: &IndexSet, sac: &IndexSet) -> Result<ConditioningReport> {
    if w.is_box() && (sac.is_box() || sac.is_empty()) {
        return complement_report(geometry, w, sac);
    }
    let r = constraint_region(geometry, sac)?;
    recovery_norm_exact(geometry, w, &r, 10_000, 1e-6)
}

/// Conditioning of `geometry` with its box window and box `S_AC`.
pub fn condition_geometry(geometry: &Geometry) -> Result<ConditioningReport> {
    let w = beamstop_window(geometry)?;
    let sac = geometry.sac_box()?;
    condition(geometry, &w, &sac)
}

/// `e^{pi beta k0} / (sqrt(4 pi d) (beta k0)^{1/4})`.
pub fn asymptotic_norm(beta: f64, k0: f64, d: usize) -> f64 {
    let x = beta * k0;
    (PI * x).exp() / ((4.0 * PI * d as f64).sqrt() * x.powf(0.25))
}

/// `4 d pi sqrt(beta k0) e^{-2 pi beta k0}`.
pub fn mu0_asymptotic(beta: f64, k0: f64, d: usize) -> f64 {
    let x = beta * k0;
    4.0 * d as f64 * PI * x.sqrt() * (-2.0 * PI * x).exp()
}

/// `max_j |sigma_j^2 + tau_{p-j+1}^2 - 1|` for `F*_{L,K}` and `F*_{L^c,K}`.
pub fn verify_complement_identity(k: &IndexSet, l: &IndexSet) -> Result<f64> {
    let grid = k.grid();
    if grid != l.grid() {
        return Err(Error::IndexSet("K and L live on different grids".into()));
    }
    let cap = match grid.d {
        1 => 64,
        2 => 16,
        _ => 0,
    };
    if grid.side() > cap {
        return Err(Error::CapExceeded {
            size: grid.side(),
            cap,
        });
    }
    let p = k.len();
    if p > l.len() {
        return Err(Error::Underdetermined { r: l.len(), w: p });
    }
    if p == 0 {
        return Ok(0.0);
    }
    let spectrum = |dst: IndexSet| -> Result<Vec<f64>> {
        if dst.is_empty() {
            return Ok(vec![0.0; p]);
        }
        let op = RestrictedDft::new(k.clone(), dst, Direction::Inverse)?;
        let mut s = singular_values(op.to_dense());
        s.resize(p, 0.0);
        Ok(s)
    };
    let sigma = spectrum(l.clone())?;
    let tau = spectrum(l.complement())?;
    Ok((0..p)
        .map(|j| (sigma[j] * sigma[j] + tau[p - 1 - j] * tau[p - 1 - j] - 1.0).abs())
        .fold(0.0, f64::max))
}

/// One point of the 1d sweep.
#[derive(Debug, Clone, Serialize)]
pub struct Fig13Row {
    pub beta: f64,
    pub n: usize,
    pub m: usize,
    pub k0: f64,
    /// `mu0^{-1/2} = 1 / sigma_min` of the 1d operator.
    pub exact: f64,
    pub asymptote: f64,
    pub saturated: bool,
}

/// `[mu0(S_AC, W, 1)]^{-1/2}` for each `(beta, m, k0)` on 1d grids with base `n`.
pub fn sweep_fig13(betas: &[f64], k0s: &[f64], ms: &[usize], n: usize) -> Result<Vec<Fig13Row>> {
    let mut rows = Vec::new();
    for &beta in betas {
        for &m in ms {
            for &k0 in k0s {
                let g = Geometry::new(1, n, m, beta, k0)?;
                let w = beamstop_window(&g)?;
                let sac = g.sac_box()?;
                let r = sac.complement();
                let op = RestrictedDft::new(w, r, Direction::Inverse)?;
                let s_min = singular_values(op.to_dense()).last().copied().unwrap_or(0.0);
                let exact = 1.0 / s_min;
                rows.push(Fig13Row {
                    beta,
                    n,
                    m,
                    k0,
                    exact,
                    asymptote: asymptotic_norm(beta, k0, 1),
                    saturated: !(exact.is_finite() && exact < SATURATION),
                });
            }
        }
    }
    Ok(rows)
}

/// One line of the conditioning table.
#[derive(Debug, Clone, Serialize)]
pub struct CondRow {
    pub beta: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub m: usize,
    pub k0: f64,
    pub d: usize,
    pub sigma_min: f64,
    pub recovery_norm: f64,
    pub bound: f64,
    pub asymptotic: f64,
    pub method: Method,
}

impl From<&ConditioningReport> for CondRow {
    fn from(r: &ConditioningReport) -> Self {
        CondRow {
            beta: r.geometry.beta,
            n: r.geometry.n,
            m: r.geometry.m,
            k0: r.geometry.k0,
            d: r.geometry.d,
            sigma_min: r.sigma_min,
            recovery_norm: r.recovery_norm,
            bound: r.bound,
            asymptotic: r.asymptotic,
            method: r.method,
        }
    }
}

/// Conditioning of every `(n, m, k0)` combination at fixed `beta` and `d`.
pub fn cond_table(beta: f64, ns: &[usize], ms: &[usize], k0s: &[f64], d: usize) -> Result<Vec<CondRow>> {
    let mut rows = Vec::new();
    for &n in ns {
        for &k0 in k0s {
            for &m in ms {
                let g = Geometry::new(d, n, m, beta, k0)?;
                rows.push(CondRow::from(&condition_geometry(&g)?));
            }
        }
    }
    Ok(rows)
}

pub fn cond_table_csv(rows: &[CondRow]) -> String {
    let mut s = String::from("beta,N,m,k0,d,sigma_min,recovery_norm,bound,asymptotic,method\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{:e},{:e},{:e},{:e},{}",
            r.beta,
            r.n,
            r.m,
            r.k0,
            r.d,
            r.sigma_min,
            r.recovery_norm,
            r.bound,
            r.asymptotic,
            r.method.as_str()
        );
    }
    s
}

pub fn fig13_csv(rows: &[Fig13Row]) -> String {
    let mut s = String::from("beta,N,m,k0,exact,asymptote,saturated\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{:e},{:e},{}",
            r.beta, r.n, r.m, r.k0, r.exact, r.asymptote, r.saturated
        );
    }
    s
}
