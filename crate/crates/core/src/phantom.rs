//! Smooth test images with box support and their noise-free measurements.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::CenteredFft;
use crate::lattice::{Geometry, Grid, IndexSet};
use crate::recovery::Measurement;

/// Wendland's compactly supported C² function, `(1 - r)^4 (4r + 1)` on `[0, 1)`.
pub fn wendland(r: f64) -> f64 {
    if r >= 1.0 {
        0.0
    } else {
        let r = r.abs();
        (1.0 - r).powi(4) * (4.0 * r + 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: Vec<f64>,
    pub radius: f64,
    pub amplitude: f64,
}

/// Generation parameters, enough to rebuild the image exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomParams {
    pub seed: u64,
    pub signed: bool,
    pub offset: f64,
    /// Inclusive per-axis bounds of the support box.
    pub support_box: Vec<(i64, i64)>,
    /// Width in samples of the C² edge ramp of a flat-top envelope; `None`
    /// uses a Wendland window spanning the whole box.
    #[serde(default)]
    pub taper: Option<f64>,
    pub bumps: Vec<Bump>,
}

/// How `make_phantom_with` draws its bumps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhantomStyle {
    pub n_bumps: usize,
    pub signed: bool,
    pub offset: f64,
    /// Amplitudes are drawn from `amplitude * U(0.5, 1.5)`.
    pub amplitude: f64,
    /// Radius range as fractions of the shortest box side.
    pub radius: (f64, f64),
    pub taper: Option<f64>,
}

impl PhantomStyle {
    /// Wide bumps under a full-box Wendland window.
    pub fn smooth(n_bumps: usize, signed: bool) -> Self {
        PhantomStyle {
            n_bumps,
            signed,
            offset: 0.25,
            amplitude: 1.0,
            radius: (0.12, 0.4),
            taper: None,
        }
    }
}

/// Quintic smoothstep, C² at both ends.
fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (10.0 + t * (6.0 * t - 15.0))
}

#[derive(Debug, Clone)]
pub struct Phantom {
    pub grid: Grid,
    pub image: Vec<f64>,
    pub support: IndexSet,
    pub signed: bool,
    pub params: PhantomParams,
}

/// Default support box inside `[1 - n : n]^d`: `n - 6` on each side, with
/// odd axes one sample wider on the positive side.
pub fn default_support_box(n: usize, d: usize) -> Vec<(i64, i64)> {
    let h = n.saturating_sub(6).max(n / 2).max(1) as i64;
    (0..d).map(|a| (-h, if a % 2 == 1 { h + 1 } else { h })).collect()
}

/// Renders the image from its parameters.
///
/// The image is `envelope(x) (offset + sum_b a_b psi(|x - c_b| / r_b))` where the
/// envelope is a product of 1d Wendland windows that vanish exactly one
/// sample outside the box.
pub fn render(grid: Grid, params: &PhantomParams) -> Result<Phantom> {
    let d = grid.d;
    if params.support_box.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: params.support_box.len(),
        });
    }
    let support = IndexSet::from_box(grid, &params.support_box)?;
    let mut image = vec![0.0; grid.len()];
    for p in support.positions() {
        let x = grid.unflat(p);
        let mut env = 1.0;
        for (a, &(lo, hi)) in params.support_box.iter().enumerate() {
            let xa = x[a] as f64;
            env *= match params.taper {
                None => {
                    let mid = 0.5 * (lo + hi) as f64;
                    let hw = 0.5 * (hi - lo) as f64 + 1.0;
                    wendland((xa - mid).abs() / hw)
                }
                Some(t) => {
                    smoothstep((xa - (lo - 1) as f64) / t) * smoothstep(((hi + 1) as f64 - xa) / t)
                }
            };
        }
        let mut v = params.offset;
        for b in &params.bumps {
            let r2: f64 = x
                .iter()
                .zip(&b.center)
                .map(|(&xi, &ci)| (xi as f64 - ci).powi(2))
                .sum();
            v += b.amplitude * wendland(r2.sqrt() / b.radius);
        }
        image[p] = env * v;
    }
    Ok(Phantom {
        grid,
        image,
        support,
        signed: params.signed,
        params: params.clone(),
    })
}

/// Sum of `n_bumps` random Wendland bumps on a positive pedestal inside the
/// default support box.
pub fn make_phantom(geometry: &Geometry, n_bumps: usize, signed: bool, seed: u64) -> Result<Phantom> {
    make_phantom_with(geometry, &PhantomStyle::smooth(n_bumps, signed), seed)
}

pub fn make_phantom_with(geometry: &Geometry, style: &PhantomStyle, seed: u64) -> Result<Phantom> {
    if style.n_bumps == 0 {
        return Err(Error::InvalidInput("n_bumps must be at least 1".into()));
    }
    if !(style.radius.0 > 0.0 && style.radius.0 < style.radius.1) {
        return Err(Error::InvalidInput("radius range must satisfy 0 < lo < hi".into()));
    }
    if style.taper.is_some_and(|t| t.is_nan() || t <= 0.0) {
        return Err(Error::InvalidInput("taper must be positive".into()));
    }
    geometry.validate()?;
    let grid = geometry.grid();
    let support_box = default_support_box(geometry.n, geometry.d);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let span = support_box
        .iter()
        .map(|&(lo, hi)| (hi - lo) as f64)
        .fold(f64::INFINITY, f64::min)
        .max(1.0);
    let bumps = (0..style.n_bumps)
        .map(|_| {
            let center = support_box
                .iter()
                .map(|&(lo, hi)| rng.random_range(lo as f64..=hi as f64))
                .collect();
            let radius = span * rng.random_range(style.radius.0..style.radius.1);
            let mut amp = style.amplitude * rng.random_range(0.5..1.5);
            if style.signed && rng.random_bool(0.5) {
                amp = -amp;
            }
            Bump {
                center,
                radius,
                amplitude: amp,
            }
        })
        .collect();
    let params = PhantomParams {
        seed,
        signed: style.signed,
        offset: style.offset,
        support_box,
        taper: style.taper,
        bumps,
    };
    render(grid, &params)
}

pub const PRESETS: [&str; 4] = ["signed64", "nonneg64", "largemean64", "flattop64"];

/// Style of a named preset: a signed image, a nonnegative image, one
/// dominated by its mean, and a nonnegative image with many small bumps on a
/// plateau that fills the support box up to a two-sample edge ramp.
pub fn preset_style(name: &str) -> Result<PhantomStyle> {
    match name {
        "signed64" => Ok(PhantomStyle::smooth(12, true)),
        "nonneg64" => Ok(PhantomStyle::smooth(12, false)),
        "largemean64" => Ok(PhantomStyle {
            offset: 2.0,
            amplitude: 0.3,
            ..PhantomStyle::smooth(12, false)
        }),
        "flattop64" => Ok(PhantomStyle {
            n_bumps: 30,
            signed: false,
            offset: 1.0,
            amplitude: 1.0,
            radius: (0.04, 0.15),
            taper: Some(2.0),
        }),
        other => Err(Error::Config(format!(
            "unknown phantom preset '{other}' (expected one of {PRESETS:?})"
        ))),
    }
}

pub fn preset(name: &str, geometry: &Geometry, seed: u64) -> Result<Phantom> {
    make_phantom_with(geometry, &preset_style(name)?, seed)
}

/// A noise-free measurement together with the withheld data.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub measurement: Measurement,
    /// `|rho_hat|²` on `W`, ordered like `W.positions()`.
    pub withheld: Vec<f64>,
    /// `|rho_hat|²` over all of `J`.
    pub power: Vec<f64>,
}

/// `|rho_hat|²` over `J` for a real image.
pub fn power_spectrum(grid: Grid, image: &[f64]) -> Vec<f64> {
    CenteredFft::new(grid)
        .forward_real(image)
        .iter()
        .map(|z| z.norm_sqr())
        .collect()
}

pub fn simulate_measurement(phantom: &Phantom, geometry: &Geometry, hole: &IndexSet) -> Result<Simulation> {
    if phantom.grid != geometry.grid() {
        return Err(Error::IndexSet("phantom is not on the geometry's grid".into()));
    }
    let n = geometry.n as i64;
    let inside = phantom
        .support
        .bounding_box()
        .map(|b| b.iter().all(|&(lo, hi)| lo >= 1 - n && hi <= n))
        .unwrap_or(true);
    if !inside {
        return Err(Error::InvalidInput(format!(
            "phantom support exceeds [1-N:N] with N = {n}"
        )));
    }
    let power = power_spectrum(phantom.grid, &phantom.image);
    let withheld = hole.positions().iter().map(|&p| power[p]).collect();
    let measurement = Measurement::new(*geometry, power.clone(), hole.clone())?;
    Ok(Simulation {
        measurement,
        withheld,
        power,
    })
}

/// Bounding box of the nonzero pixels grown by `margin`, clipped to `J`.
pub fn estimate_support(grid: Grid, image: &[f64], margin: usize) -> Result<IndexSet> {
    let nz = IndexSet::from_mask(grid, image.iter().map(|&x| x != 0.0).collect())?;
    let b = nz
        .bounding_box()
        .ok_or_else(|| Error::InvalidInput("image is identically zero".into()))?;
    let m = margin as i64;
    let bounds: Vec<(i64, i64)> = b
        .iter()
        .map(|&(lo, hi)| ((lo - m).max(grid.lo()), (hi + m).min(grid.hi())))
        .collect();
    IndexSet::from_box(grid, &bounds)
}
