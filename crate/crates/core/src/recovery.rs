//! Linear hole filling: the recovery operator `alpha_W = -F*†_{R,W} F*_{R,W^c} a²`.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fft::{CenteredFft, Direction};
use crate::lattice::{Geometry, IndexSet};
use crate::spectral::{thin_svd_box, thin_svd_f_rw, ThinSvd, DEFAULT_SVD_CAP};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Squared-modulus DFT samples over `J`, zeroed on the hole.
#[derive(Debug, Clone)]
pub struct Measurement {
    pub geometry: Geometry,
    pub a2: Vec<f64>,
    pub hole: IndexSet,
}

impl Measurement {
    /// Wraps `a2`, zeroing it on `hole`.
    pub fn new(geometry: Geometry, mut a2: Vec<f64>, hole: IndexSet) -> Result<Self> {
        let grid = geometry.grid();
        if a2.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: a2.len(),
            });
        }
        if hole.grid() != grid {
            return Err(Error::IndexSet("hole is not on the geometry's grid".into()));
        }
        for p in hole.positions() {
            a2[p] = 0.0;
        }
        Ok(Measurement { geometry, a2, hole })
    }

    /// Copy of `a2` with `values` (ordered like the hole positions) written
    /// into the hole.
    pub fn merged(&self, values: &[f64]) -> Result<Vec<f64>> {
        let pos = self.hole.positions();
        if values.len() != pos.len() {
            return Err(Error::DimensionMismatch {
                expected: pos.len(),
                got: values.len(),
            });
        }
        let mut out = self.a2.clone();
        for (&p, &v) in pos.iter().zip(values) {
            out[p] = v;
        }
        Ok(out)
    }
}

/// Settings for the least-squares solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RecoveryOptions {
    /// Singular values below `sigma_floor * sigma_max` make the solve ill-posed.
    pub sigma_floor: f64,
    /// Drop singular triples below the floor instead of failing.
    pub truncate: bool,
    /// Average the result with its reflection `k -> -k` after the solve.
    pub symmetrize: bool,
    /// Largest `|W|` for the SVD.
    pub svd_cap: usize,
    /// Use the per-axis tensor SVD when `W` and `J \ R` are boxes.
    pub structured: bool,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        RecoveryOptions {
            sigma_floor: 1e-14,
            truncate: false,
            symmetrize: false,
            svd_cap: DEFAULT_SVD_CAP,
            structured: true,
        }
    }
}

/// Output of one fill.
#[derive(Debug, Clone, Serialize)]
pub struct Recovery {
    /// Recovered `|rho_hat|^2` on `W`, ordered like `W.positions()`.
    pub values: Vec<f64>,
    /// Norm of the imaginary part discarded after the solve.
    pub imag_norm: f64,
    /// `‖F*(completed a²)‖` restricted to `R`.
    pub residual: f64,
    /// `residual` divided by `‖F*_{R,W^c} a²‖`.
    pub relative_residual: f64,
    /// Number of singular triples used.
    pub rank: usize,
}

/// The linear map from data on `W^c` to values on `W`.
#[derive(Debug, Clone)]
pub struct RecoveryOperator {
    geometry: Geometry,
    svd: ThinSvd,
    w: IndexSet,
    r: IndexSet,
    w_pos: Vec<usize>,
    r_pos: Vec<usize>,
    fft: CenteredFft,
    options: RecoveryOptions,
    rank: usize,
}

/// Thin SVD of `F*_{R,W}`, through the per-axis factorization when `W` and
/// `J \ R` are both boxes and `options.structured` is set.
pub fn recovery_svd(w: &IndexSet, r: &IndexSet, options: &RecoveryOptions) -> Result<ThinSvd> {
    let sac = r.complement();
    if options.structured && w.is_box() && sac.is_box() && !sac.is_empty() {
        thin_svd_box(w, &sac, options.svd_cap)
    } else {
        thin_svd_f_rw(r, w, options.svd_cap)
    }
}

impl RecoveryOperator {
    pub fn new(geometry: Geometry, w: &IndexSet, r: &IndexSet, options: RecoveryOptions) -> Result<Self> {
        let svd = recovery_svd(w, r, &options)?;
        Self::from_svd(geometry, svd, options)
    }

    /// Builds the operator around a precomputed (for example cached) SVD.
    pub fn from_svd(geometry: Geometry, svd: ThinSvd, options: RecoveryOptions) -> Result<Self> {
        if svd.direction != Direction::Inverse {
            return Err(Error::InvalidInput("expected the SVD of F*_{R,W}".into()));
        }
        if svd.src.grid() != geometry.grid() {
            return Err(Error::IndexSet("SVD is not on the geometry's grid".into()));
        }
        if !svd.src.intersection(&svd.dst)?.is_empty() {
            return Err(Error::IndexSet("W and R overlap".into()));
        }
        let floor = options.sigma_floor * svd.sigma_max();
        let rank = svd.sigma.iter().take_while(|&&s| s >= floor && s > 0.0).count();
        if rank < svd.rank() && !options.truncate {
            return Err(Error::IllPosed {
                sigma_min: svd.sigma_min(),
                floor,
            });
        }
        if rank == 0 {
            return Err(Error::IllPosed {
                sigma_min: svd.sigma_min(),
                floor,
            });
        }
        let w = svd.src.clone();
        let r = svd.dst.clone();
        Ok(RecoveryOperator {
            geometry,
            w_pos: w.positions(),
            r_pos: r.positions(),
            fft: CenteredFft::new(geometry.grid()),
            svd,
            w,
            r,
            options,
            rank,
        })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn svd(&self) -> &ThinSvd {
        &self.svd
    }

    pub fn hole(&self) -> &IndexSet {
        &self.w
    }

    pub fn region(&self) -> &IndexSet {
        &self.r
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn options(&self) -> &RecoveryOptions {
        &self.options
    }

    /// `V Σ⁻¹ U* b` for `b` on `R`, over the retained rank.
    pub fn pseudo_inverse(&self, b: &[Complex64]) -> Vec<Complex64> {
        let u = &self.svd.u;
        let v = &self.svd.v;
        let mut c = vec![ZERO; self.rank];
        for (j, cj) in c.iter_mut().enumerate() {
            let col = u.column(j);
            let s: Complex64 = col.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
            *cj = s / self.svd.sigma[j];
        }
        let mut out = vec![ZERO; v.nrows()];
        for (j, cj) in c.iter().enumerate() {
            for (o, x) in out.iter_mut().zip(v.column(j).iter()) {
                *o += x * cj;
            }
        }
        out
    }

    /// `F*_{R,W^c} z` for `z` given over all of `J`; entries on `W` are ignored.
    pub fn apply_outer(&self, z: &[Complex64]) -> Vec<Complex64> {
        let mut buf = z.to_vec();
        for &p in &self.w_pos {
            buf[p] = ZERO;
        }
        self.fft.transform(&mut buf, Direction::Inverse);
        self.r_pos.iter().map(|&p| buf[p]).collect()
    }

    /// The recovery operator applied to data over `J` (values on `W` ignored),
    /// before realification.
    pub fn apply_complex(&self, z: &[Complex64]) -> Vec<Complex64> {
        let b: Vec<Complex64> = self.apply_outer(z).into_iter().map(|x| -x).collect();
        self.pseudo_inverse(&b)
    }

    /// Adjoint of the recovery operator: data on `W` to data over `J`,
    /// zero on `W`.
    pub fn apply_adjoint(&self, y: &[Complex64]) -> Vec<Complex64> {
        let u = &self.svd.u;
        let v = &self.svd.v;
        let mut c = vec![ZERO; self.rank];
        for (j, cj) in c.iter_mut().enumerate() {
            let s: Complex64 = v.column(j).iter().zip(y).map(|(x, t)| x.conj() * t).sum();
            *cj = s / self.svd.sigma[j];
        }
        let mut on_r = vec![ZERO; self.r_pos.len()];
        for (j, cj) in c.iter().enumerate() {
            for (o, x) in on_r.iter_mut().zip(u.column(j).iter()) {
                *o += x * cj;
            }
        }
        let mut buf = vec![ZERO; self.geometry.grid().len()];
        for (&p, x) in self.r_pos.iter().zip(&on_r) {
            buf[p] = -x;
        }
        self.fft.transform(&mut buf, Direction::Forward);
        for &p in &self.w_pos {
            buf[p] = ZERO;
        }
        buf
    }

    /// Fills the hole of `meas`.
    pub fn recover(&self, meas: &Measurement) -> Result<Recovery> {
        if meas.hole != self.w {
            return Err(Error::IndexSet(
                "measurement hole differs from the operator's W".into(),
            ));
        }
        if meas.a2.len() != self.geometry.grid().len() {
            return Err(Error::DimensionMismatch {
                expected: self.geometry.grid().len(),
                got: meas.a2.len(),
            });
        }
        let z: Vec<Complex64> = meas.a2.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        let b: Vec<Complex64> = self.apply_outer(&z);
        let alpha = self.pseudo_inverse(&b.iter().map(|x| -x).collect::<Vec<_>>());
        let imag_norm = alpha.iter().map(|x| x.im * x.im).sum::<f64>().sqrt();
        let mut values: Vec<f64> = alpha.iter().map(|x| x.re).collect();
        if self.options.symmetrize {
            values = self.symmetrized(&values);
        }

        let mut full = z;
        for (&p, &v) in self.w_pos.iter().zip(&values) {
            full[p] = Complex64::new(v, 0.0);
        }
        self.fft.transform(&mut full, Direction::Inverse);
        let residual = self.r_pos.iter().map(|&p| full[p].norm_sqr()).sum::<f64>().sqrt();
        let b_norm = b.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        let relative_residual = if b_norm > 0.0 { residual / b_norm } else { 0.0 };
        Ok(Recovery {
            values,
            imag_norm,
            residual,
            relative_residual,
            rank: self.rank,
        })
    }

    fn symmetrized(&self, values: &[f64]) -> Vec<f64> {
        let grid = self.geometry.grid();
        let index: std::collections::HashMap<usize, usize> =
            self.w_pos.iter().enumerate().map(|(i, &p)| (p, i)).collect();
        self.w_pos
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let neg: Vec<i64> = grid.unflat(p).iter().map(|&k| grid.wrap(-k)).collect();
                match index.get(&grid.flat(&neg)) {
                    Some(&j) => 0.5 * (values[i] + values[j]),
                    None => values[i],
                }
            })
            .collect()
    }
}

/// Convenience wrapper around [`RecoveryOperator::recover`].
pub fn recover_hole(op: &RecoveryOperator, meas: &Measurement) -> Result<Recovery> {
    op.recover(meas)
}

/// Coefficients `c = V* alpha_W` in the right singular basis.
pub fn expand_in_singular_basis(op: &RecoveryOperator, alpha: &[f64]) -> Result<Vec<Complex64>> {
    let v = &op.svd().v;
    if alpha.len() != v.nrows() {
        return Err(Error::DimensionMismatch {
            expected: v.nrows(),
            got: alpha.len(),
        });
    }
    Ok((0..v.ncols())
        .map(|j| {
            v.column(j)
                .iter()
                .zip(alpha)
                .map(|(x, &a)| x.conj() * a)
                .sum()
        })
        .collect())
}

/// Magnitudes from squared magnitudes, with relative errors against a
/// reference magnitude.
#[derive(Debug, Clone, Serialize)]
pub struct MagnitudeReport {
    pub u: Vec<f64>,
    /// `|u² - ref²| / ref²`.
    pub rel_err_sq: Vec<f64>,
    /// `|u - ref| / ref`.
    pub rel_err_mag: Vec<f64>,
    /// Entries of the input that were negative and clipped to zero.
    pub negative_count: usize,
}

pub fn magnitude_from_squared(u2: &[f64], reference: &[f64]) -> Result<MagnitudeReport> {
    if u2.len() != reference.len() {
        return Err(Error::DimensionMismatch {
            expected: reference.len(),
            got: u2.len(),
        });
    }
    let negative_count = u2.iter().filter(|&&x| x < 0.0).count();
    let u: Vec<f64> = u2.iter().map(|&x| x.max(0.0).sqrt()).collect();
    let rel_err_sq = u2
        .iter()
        .zip(reference)
        .map(|(&x, &r)| (x - r * r).abs() / (r * r))
        .collect();
    let rel_err_mag = u
        .iter()
        .zip(reference)
        .map(|(&x, &r)| (x - r).abs() / r)
        .collect();
    Ok(MagnitudeReport {
        u,
        rel_err_sq,
        rel_err_mag,
        negative_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{beamstop_window, constraint_region, Grid};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    /// |rho_hat|^2 by a dense 1d DFT.
    fn dense_power_1d(grid: Grid, rho: &[f64]) -> Vec<f64> {
        let side = grid.side() as f64;
        (0..grid.side())
            .map(|pk| {
                let k = grid.index(pk) as f64;
                let s: Complex64 = (0..grid.side())
                    .map(|pj| {
                        let j = grid.index(pj) as f64;
                        rho[pj] * Complex64::from_polar(1.0, -2.0 * PI * j * k / side)
                    })
                    .sum();
                s.norm_sqr() / side
            })
            .collect()
    }

    fn setup_1d() -> (Geometry, IndexSet, IndexSet, IndexSet) {
        // mN = 8: image on [-2:2], S_AC = [-4:4], W = [-1:1]
        let g = Geometry::new(1, 4, 2, 1.25, 1.0).unwrap();
        let grid = g.grid();
        let w = IndexSet::from_box(grid, &[(-1, 1)]).unwrap();
        let s = IndexSet::from_box(grid, &[(-2, 2)]).unwrap();
        let sac = IndexSet::from_box(grid, &[(-4, 4)]).unwrap();
        let r = sac.complement();
        (g, w, s, r)
    }

    #[test]
    fn exact_fill_1d_matches_dense_oracle() {
        let (g, w, s, r) = setup_1d();
        let grid = g.grid();
        let op = RecoveryOperator::new(g, &w, &r, RecoveryOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let rho: Vec<f64> = (0..grid.len())
                .map(|p| if s.mask()[p] { rng.random::<f64>() - 0.3 } else { 0.0 })
                .collect();
            let truth = dense_power_1d(grid, &rho);
            let meas = Measurement::new(g, truth.clone(), w.clone()).unwrap();
            let rec = recover_hole(&op, &meas).unwrap();
            for (v, p) in rec.values.iter().zip(w.positions()) {
                assert!((v - truth[p]).abs() <= 1e-10 * truth[p].abs().max(1e-3));
            }
            assert!(rec.relative_residual < 1e-10);
            assert!(rec.imag_norm < 1e-10);
        }
    }

    #[test]
    fn structured_and_dense_routes_agree_2d() {
        let g = Geometry::new(2, 4, 2, 1.25, 1.0).unwrap();
        let grid = g.grid();
        let w = IndexSet::from_box(grid, &[(-1, 1), (-1, 1)]).unwrap();
        let s = IndexSet::from_box(grid, &[(-2, 2), (-2, 3)]).unwrap();
        let sac = IndexSet::from_box(grid, &[(-4, 4), (-5, 5)]).unwrap();
        let r = sac.complement();
        let fast = RecoveryOperator::new(g, &w, &r, RecoveryOptions::default()).unwrap();
        let dense = RecoveryOperator::new(
            g,
            &w,
            &r,
            RecoveryOptions {
                structured: false,
                ..Default::default()
            },
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rho: Vec<f64> = (0..grid.len())
            .map(|p| if s.mask()[p] { rng.random::<f64>() } else { 0.0 })
            .collect();
        let fft = CenteredFft::new(grid);
        let truth: Vec<f64> = fft.forward_real(&rho).iter().map(|z| z.norm_sqr()).collect();
        let meas = Measurement::new(g, truth.clone(), w.clone()).unwrap();
        let a = fast.recover(&meas).unwrap();
        let b = dense.recover(&meas).unwrap();
        for ((x, y), p) in a.values.iter().zip(&b.values).zip(w.positions()) {
            assert!((x - y).abs() <= 1e-9 * truth[p].max(1e-3));
            assert!((x - truth[p]).abs() <= 1e-9 * truth[p].max(1e-3));
        }
    }

    #[test]
    fn zero_data_gives_zero() {
        let (g, w, _, r) = setup_1d();
        let op = RecoveryOperator::new(g, &w, &r, RecoveryOptions::default()).unwrap();
        let meas = Measurement::new(g, vec![0.0; g.grid().len()], w).unwrap();
        let rec = op.recover(&meas).unwrap();
        assert!(rec.values.iter().all(|&v| v == 0.0));
        assert_eq!(rec.residual, 0.0);
    }

    #[test]
    fn measurement_zeroes_hole() {
        let (g, w, _, _) = setup_1d();
        let meas = Measurement::new(g, vec![1.0; g.grid().len()], w.clone()).unwrap();
        assert!(w.positions().iter().all(|&p| meas.a2[p] == 0.0));
        let merged = meas.merged(&vec![2.0; w.len()]).unwrap();
        assert_eq!(merged.iter().filter(|&&x| x == 2.0).count(), w.len());
    }

    #[test]
    fn hole_mismatch_is_rejected() {
        let (g, w, _, r) = setup_1d();
        let op = RecoveryOperator::new(g, &w, &r, RecoveryOptions::default()).unwrap();
        let other = IndexSet::from_box(g.grid(), &[(0, 0)]).unwrap();
        let meas = Measurement::new(g, vec![0.0; g.grid().len()], other).unwrap();
        assert!(op.recover(&meas).is_err());
    }

    #[test]
    fn floor_triggers_ill_posed() {
        let (g, w, _, r) = setup_1d();
        let opts = RecoveryOptions {
            sigma_floor: 0.999,
            ..Default::default()
        };
        let err = RecoveryOperator::new(g, &w, &r, opts).unwrap_err();
        assert!(matches!(err, Error::IllPosed { .. }));
        assert!(err.is_ill_posed());
        let op = RecoveryOperator::new(
            g,
            &w,
            &r,
            RecoveryOptions {
                truncate: true,
                ..opts
            },
        )
        .unwrap();
        assert!(op.rank() >= 1 && op.rank() < w.len());
    }

    #[test]
    fn wrong_support_leaves_residual() {
        let (g, w, _, r) = setup_1d();
        let grid = g.grid();
        let op = RecoveryOperator::new(g, &w, &r, RecoveryOptions::default()).unwrap();
        // image on [-4:4] has autocorrelation well outside [-4:4]
        let rho: Vec<f64> = (0..grid.len())
            .map(|p| if grid.index(p).abs() <= 4 { 1.0 + 0.1 * p as f64 } else { 0.0 })
            .collect();
        let meas = Measurement::new(g, dense_power_1d(grid, &rho), w).unwrap();
        let rec = op.recover(&meas).unwrap();
        assert!(rec.relative_residual > 1e-3);
    }

    #[test]
    fn singular_vector_expands_to_unit() {
        let g = Geometry::new(2, 4, 2, 1.5, 1.0).unwrap();
        let w = beamstop_window(&g).unwrap();
        let sac = IndexSet::from_box(g.grid(), &[(-5, 5), (-5, 5)]).unwrap();
        let r = constraint_region(&g, &sac).unwrap();
        let op = RecoveryOperator::new(g, &w, &r, RecoveryOptions::default()).unwrap();
        // v_j is complex in general, so test round trip on random real input
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let alpha: Vec<f64> = (0..w.len()).map(|_| rng.random::<f64>()).collect();
        let c = expand_in_singular_basis(&op, &alpha).unwrap();
        let n_a: f64 = alpha.iter().map(|x| x * x).sum::<f64>().sqrt();
        let n_c: f64 = c.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        assert!((n_a - n_c).abs() < 1e-12 * n_a);
        let v = &op.svd().v;
        for (i, &a) in alpha.iter().enumerate() {
            let back: Complex64 = (0..c.len()).map(|j| v[(i, j)] * c[j]).sum();
            assert!((back.re - a).abs() < 1e-12 && back.im.abs() < 1e-12);
        }
        // the expansion of v_j itself is e_j
        let vj = op.svd().right_vector(2);
        let e: Vec<Complex64> = (0..v.ncols())
            .map(|k| v.column(k).iter().zip(&vj).map(|(x, y)| x.conj() * y).sum())
            .collect();
        for (k, z) in e.iter().enumerate() {
            let want = if k == 2 { 1.0 } else { 0.0 };
            assert!((z - Complex64::new(want, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn adjoint_is_consistent() {
        let (g, w, _, r) = setup_1d();
        let op = RecoveryOperator::new(g, &w, &r, RecoveryOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w_pos = w.positions();
        let mut z: Vec<Complex64> = (0..g.grid().len())
            .map(|_| Complex64::new(rng.random(), rng.random()))
            .collect();
        for &p in &w_pos {
            z[p] = ZERO;
        }
        let y: Vec<Complex64> = (0..w.len()).map(|_| Complex64::new(rng.random(), rng.random())).collect();
        let lhs: Complex64 = op.apply_complex(&z).iter().zip(&y).map(|(a, b)| a * b.conj()).sum();
        let rhs: Complex64 = z.iter().zip(&op.apply_adjoint(&y)).map(|(a, b)| a * b.conj()).sum();
        assert!((lhs - rhs).norm() < 1e-10 * lhs.norm().max(1.0));
    }

    #[test]
    fn magnitude_identities() {
        let r = vec![1.0, 2.0, 0.5];
        let rep = magnitude_from_squared(&[1.0, 4.0, 0.25], &r).unwrap();
        assert!(rep.rel_err_sq.iter().chain(&rep.rel_err_mag).all(|&e| e == 0.0));
        let eps = 1e-6;
        let u2: Vec<f64> = r.iter().map(|x| x * x * (1.0 + eps)).collect();
        let rep = magnitude_from_squared(&u2, &r).unwrap();
        for e in &rep.rel_err_mag {
            assert!((e - eps / 2.0).abs() < 1e-11);
        }
        let rep = magnitude_from_squared(&[-1.0, 4.0, 0.25], &r).unwrap();
        assert_eq!(rep.negative_count, 1);
        assert_eq!(rep.u[0], 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn recovery_is_linear(seed in 0u64..1000, s in -3.0f64..3.0) {
            let (g, w, _, r) = setup_1d();
            let op = RecoveryOperator::new(g, &w, &r, RecoveryOptions::default()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = g.grid().len();
            let a: Vec<f64> = (0..n).map(|_| rng.random()).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.random()).collect();
            let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + s * y).collect();
            let ra = op.recover(&Measurement::new(g, a, w.clone()).unwrap()).unwrap();
            let rb = op.recover(&Measurement::new(g, b, w.clone()).unwrap()).unwrap();
            let rab = op.recover(&Measurement::new(g, ab, w.clone()).unwrap()).unwrap();
            for i in 0..w.len() {
                let want = ra.values[i] + s * rb.values[i];
                prop_assert!((rab.values[i] - want).abs() < 1e-12 * (1.0 + want.abs()) * 10.0);
            }
        }
    }
}
