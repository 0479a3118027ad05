//! Restricted DFT operators between index sets and the thin SVD of
//! `F*_{R,W}`.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::{CenteredFft, Direction};
use crate::lattice::{Grid, IndexSet};

/// Default cap on `|W|` for the dense SVD route.
pub const DEFAULT_SVD_CAP: usize = 4096;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// The submatrix of `F` (or `F*`) mapping data on `src` to points in `dst`.
#[derive(Debug, Clone)]
pub struct RestrictedDft {
    fft: CenteredFft,
    src: IndexSet,
    dst: IndexSet,
    src_pos: Vec<usize>,
    dst_pos: Vec<usize>,
    direction: Direction,
}

impl RestrictedDft {
    pub fn new(src: IndexSet, dst: IndexSet, direction: Direction) -> Result<Self> {
        if src.grid() != dst.grid() {
            return Err(Error::IndexSet("src and dst live on different grids".into()));
        }
        let fft = CenteredFft::new(src.grid());
        Ok(Self::with_fft(fft, src, dst, direction))
    }

    pub(crate) fn with_fft(
        fft: CenteredFft,
        src: IndexSet,
        dst: IndexSet,
        direction: Direction,
    ) -> Self {
        let src_pos = src.positions();
        let dst_pos = dst.positions();
        RestrictedDft {
            fft,
            src,
            dst,
            src_pos,
            dst_pos,
            direction,
        }
    }

    /// `F*_{R,W}`: frequency data on `w` to image points in `r`.
    pub fn inverse(w: &IndexSet, r: &IndexSet) -> Result<Self> {
        Self::new(w.clone(), r.clone(), Direction::Inverse)
    }

    pub fn grid(&self) -> Grid {
        self.src.grid()
    }

    pub fn src(&self) -> &IndexSet {
        &self.src
    }

    pub fn dst(&self) -> &IndexSet {
        &self.dst
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn fft(&self) -> &CenteredFft {
        &self.fft
    }

    /// The adjoint, which swaps the two sets and reverses the direction.
    pub fn adjoint(&self) -> RestrictedDft {
        RestrictedDft {
            fft: self.fft.clone(),
            src: self.dst.clone(),
            dst: self.src.clone(),
            src_pos: self.dst_pos.clone(),
            dst_pos: self.src_pos.clone(),
            direction: self.direction.reverse(),
        }
    }

    /// Embeds `x` (ordered like `src.positions()`) into `J`, transforms and
    /// restricts to `dst`.
    pub fn apply(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        if x.len() != self.src_pos.len() {
            return Err(Error::DimensionMismatch {
                expected: self.src_pos.len(),
                got: x.len(),
            });
        }
        let mut buf = vec![ZERO; self.grid().len()];
        for (&p, &v) in self.src_pos.iter().zip(x) {
            buf[p] = v;
        }
        self.fft.transform(&mut buf, self.direction);
        Ok(self.dst_pos.iter().map(|&p| buf[p]).collect())
    }

    pub fn apply_real(&self, x: &[f64]) -> Result<Vec<Complex64>> {
        let xc: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.apply(&xc)
    }

    /// Materializes the `|dst| x |src|` matrix, one transform per column.
    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let rows = self.dst_pos.len();
        let cols = self.src_pos.len();
        let mut a = DMatrix::<Complex64>::zeros(rows, cols);
        let mut buf = vec![ZERO; self.grid().len()];
        for (c, &p) in self.src_pos.iter().enumerate() {
            buf.iter_mut().for_each(|v| *v = ZERO);
            buf[p] = Complex64::new(1.0, 0.0);
            self.fft.transform(&mut buf, self.direction);
            for (r, &q) in self.dst_pos.iter().enumerate() {
                a[(r, c)] = buf[q];
            }
        }
        a
    }
}

/// Reduced SVD `A = U diag(sigma) V*` of a restricted DFT with
/// `|dst| >= |src|`.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    /// `|dst| x p`, orthonormal columns.
    pub u: DMatrix<Complex64>,
    /// Descending.
    pub sigma: Vec<f64>,
    /// `|src| x p`, orthonormal columns.
    pub v: DMatrix<Complex64>,
    pub src: IndexSet,
    pub dst: IndexSet,
    pub direction: Direction,
}

impl ThinSvd {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma.first().copied().unwrap_or(0.0)
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigma.last().copied().unwrap_or(0.0)
    }

    /// Column `j` (0-based) of `V`.
    pub fn right_vector(&self, j: usize) -> Vec<Complex64> {
        self.v.column(j).iter().copied().collect()
    }

    pub fn left_vector(&self, j: usize) -> Vec<Complex64> {
        self.u.column(j).iter().copied().collect()
    }
}

/// Singular values (descending) of an arbitrary dense matrix.
pub fn singular_values(a: DMatrix<Complex64>) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    let svd = a.svd(false, false);
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Thin SVD of a restricted DFT operator.
pub fn thin_svd(op: &RestrictedDft, cap: usize) -> Result<ThinSvd> {
    let p = op.src().len();
    if p > cap {
        return Err(Error::CapExceeded { size: p, cap });
    }
    if op.dst().len() < p {
        return Err(Error::Underdetermined {
            r: op.dst().len(),
            w: p,
        });
    }
    if p == 0 {
        return Err(Error::IndexSet("source set is empty".into()));
    }
    let a = op.to_dense();
    let svd = a.svd(true, true);
    let u_raw = svd.u.expect("requested U");
    let vt_raw = svd.v_t.expect("requested V");
    Ok(assemble(
        &u_raw,
        svd.singular_values.as_slice(),
        &vt_raw,
        op.src().clone(),
        op.dst().clone(),
        op.direction(),
    ))
}

/// Sorts the triples by descending singular value and fixes each column
/// phase so the largest-modulus entry of `v` is real and positive.
fn assemble(
    u_raw: &DMatrix<Complex64>,
    s_raw: &[f64],
    vt_raw: &DMatrix<Complex64>,
    src: IndexSet,
    dst: IndexSet,
    direction: Direction,
) -> ThinSvd {
    let p = s_raw.len();
    let rows = u_raw.nrows();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&i, &j| s_raw[j].total_cmp(&s_raw[i]));
    let mut u = DMatrix::<Complex64>::zeros(rows, p);
    let mut v = DMatrix::<Complex64>::zeros(vt_raw.ncols(), p);
    let mut sigma = Vec::with_capacity(p);
    for (out, &k) in order.iter().enumerate() {
        sigma.push(s_raw[k]);
        // V column k is the conjugate of row k of V*.
        let vcol: Vec<Complex64> = vt_raw.row(k).iter().map(|z| z.conj()).collect();
        let (imax, _) = vcol
            .iter()
            .enumerate()
            .fold((0, -1.0), |best, (i, z)| {
                if z.norm() > best.1 {
                    (i, z.norm())
                } else {
                    best
                }
            });
        let phase = vcol[imax].conj() / vcol[imax].norm();
        for (i, z) in vcol.iter().enumerate() {
            v[(i, out)] = z * phase;
        }
        for i in 0..rows {
            u[(i, out)] = u_raw[(i, k)] * phase;
        }
    }
    ThinSvd {
        u,
        sigma,
        v,
        src,
        dst,
        direction,
    }
}

/// Thin SVD of `F*_{R,W}`.
pub fn thin_svd_f_rw(r: &IndexSet, w: &IndexSet, cap: usize) -> Result<ThinSvd> {
    let op = RestrictedDft::inverse(w, r)?;
    thin_svd(&op, cap)
}

/// Per-axis factors of the box route: the right singular vectors `v` of
/// `F*_{R_a,W_a}` and the images of `v` under the three 1d restrictions.
struct AxisFactors {
    v: DMatrix<Complex64>,
    /// `sqrt(eps_a)`, the singular values of `F*_{R_a,W_a}`.
    sr: Vec<f64>,
    /// `F*_{R_a,W_a} v = U_r diag(sr)`, rows ordered over `R_a`.
    on_r: DMatrix<Complex64>,
    /// `F*_{S_a,W_a} v`, rows over `S_a`.
    on_s: DMatrix<Complex64>,
    /// `F*_{J_a,W_a} v`, rows over `J_a`.
    on_j: DMatrix<Complex64>,
    r_idx: Vec<i64>,
    s_idx: Vec<i64>,
}

fn axis_factors(half: usize, w: (i64, i64), s: (i64, i64)) -> Result<AxisFactors> {
    let line = Grid::new(1, half);
    let wa = IndexSet::from_box(line, &[w])?;
    let sa = IndexSet::from_box(line, &[s])?;
    let ra = sa.complement();
    let ja = IndexSet::full(line);
    let k = wa.len();
    let mr = RestrictedDft::inverse(&wa, &ra)?.to_dense();
    let rows = mr.nrows();
    // Zero rows leave the Gram matrix unchanged and guarantee a full V.
    let padded = if rows < k {
        let mut z = DMatrix::<Complex64>::zeros(k, k);
        z.rows_mut(0, rows).copy_from(&mr);
        z
    } else {
        mr
    };
    let svd = padded.svd(true, true);
    let ur = svd.u.expect("requested U");
    let v = svd.v_t.expect("requested V").adjoint();
    let sr: Vec<f64> = svd.singular_values.iter().copied().collect();
    let mut on_r = DMatrix::<Complex64>::zeros(rows, k);
    for j in 0..k {
        for i in 0..rows {
            on_r[(i, j)] = ur[(i, j)] * sr[j];
        }
    }
    let on_s = RestrictedDft::inverse(&wa, &sa)?.to_dense() * &v;
    let on_j = RestrictedDft::inverse(&wa, &ja)?.to_dense() * &v;
    let idx = |set: &IndexSet| set.points().into_iter().map(|p| p[0]).collect();
    Ok(AxisFactors {
        r_idx: idx(&ra),
        s_idx: idx(&sa),
        v,
        sr,
        on_r,
        on_s,
        on_j,
    })
}

/// Thin SVD of `F*_{R,W}` for a box `W` and `R = J \ S` with `S` a box.
///
/// Since `F*_{J,W}` is an isometry, `A*A = I - B*B` with `B = F*_{S,W}`, and
/// `B*B` is a Kronecker product of 1d Gram matrices. The right singular
/// vectors are therefore Kronecker products of the right singular vectors of
/// the 1d operators `F*_{R_a,W_a}`, with singular values `sqrt(eps_a)` and
/// `sigma^2 = 1 - prod_a (1 - eps_a)`. `R` splits into the disjoint blocks
/// `S_1 x .. x S_{a-1} x R_a x J_{a+1} x .. x J_d`, on each of which `A v` is a
/// Kronecker product of 1d factors, so every column of `U` is assembled with
/// relative accuracy.
pub fn thin_svd_box(w: &IndexSet, sac: &IndexSet, cap: usize) -> Result<ThinSvd> {
    let grid = w.grid();
    if sac.grid() != grid {
        return Err(Error::IndexSet("W and S live on different grids".into()));
    }
    let (Some(wb), Some(sb)) = (w.bbox(), sac.bbox()) else {
        return Err(Error::NotBox("W and S must both be boxes".into()));
    };
    if !w.is_box() || !sac.is_box() {
        return Err(Error::NotBox("W and S must both be boxes".into()));
    }
    let p = w.len();
    if p > cap {
        return Err(Error::CapExceeded { size: p, cap });
    }
    let r = sac.complement();
    if r.len() < p {
        return Err(Error::Underdetermined { r: r.len(), w: p });
    }
    let d = grid.d;
    let axes: Vec<AxisFactors> = (0..d)
        .map(|a| axis_factors(grid.half, wb[a], sb[a]))
        .collect::<Result<_>>()?;

    let mut v = DMatrix::<Complex64>::from_element(1, 1, Complex64::new(1.0, 0.0));
    for ax in &axes {
        v = v.kronecker(&ax.v);
    }
    // multi-index of each column, axis 0 slowest
    let dims: Vec<usize> = axes.iter().map(|ax| ax.sr.len()).collect();
    let multi = |mut j: usize| -> Vec<usize> {
        let mut out = vec![0; d];
        for a in (0..d).rev() {
            out[a] = j % dims[a];
            j /= dims[a];
        }
        out
    };
    let sigma: Vec<f64> = (0..p)
        .map(|j| {
            let keep: f64 = multi(j)
                .iter()
                .zip(&axes)
                .map(|(&k, ax)| (-(ax.sr[k] * ax.sr[k]).min(1.0)).ln_1p())
                .sum();
            (-keep.exp_m1()).max(0.0).sqrt()
        })
        .collect();

    let r_pos = r.positions();
    let side = grid.side();
    let whole_axis: Vec<i64> = (grid.lo()..=grid.hi()).collect();
    let mut full = vec![ZERO; grid.len()];
    let mut u = DMatrix::<Complex64>::zeros(r.len(), p);
    for j in 0..p {
        if sigma[j] == 0.0 {
            continue;
        }
        let ks = multi(j);
        for a in 0..d {
            // block a: S on axes < a, R on axis a, J on axes > a
            let mut entries: Vec<(usize, Complex64)> = vec![(0, Complex64::new(1.0 / sigma[j], 0.0))];
            for (b, ax) in axes.iter().enumerate() {
                let (idx, mat) = match b.cmp(&a) {
                    std::cmp::Ordering::Less => (&ax.s_idx, &ax.on_s),
                    std::cmp::Ordering::Equal => (&ax.r_idx, &ax.on_r),
                    std::cmp::Ordering::Greater => (&whole_axis, &ax.on_j),
                };
                let col = mat.column(ks[b]);
                entries = entries
                    .iter()
                    .flat_map(|&(pre, c)| {
                        idx.iter()
                            .zip(col.iter())
                            .map(move |(&i, &z)| (pre * side + grid.pos(i), c * z))
                    })
                    .collect();
            }
            for (flat, z) in entries {
                full[flat] = z;
            }
        }
        for (i, &pos) in r_pos.iter().enumerate() {
            u[(i, j)] = full[pos];
        }
    }
    Ok(assemble(&u, &sigma, &v.adjoint(), w.clone(), r, Direction::Inverse))
}

/// The full-grid field obtained by transforming the `j`-th (1-based) right
/// singular vector, supported on `src`, over all of `J`.
///
/// For `F*_{R,W}` this is `F*(v_j)`; its energy in `R` is `sigma_j^2`.
pub fn singular_vector_field(svd: &ThinSvd, j: usize) -> Result<Vec<Complex64>> {
    if j == 0 || j > svd.rank() {
        return Err(Error::InvalidInput(format!(
            "singular index {j} outside 1..={}",
            svd.rank()
        )));
    }
    let grid = svd.src.grid();
    let fft = CenteredFft::new(grid);
    let mut buf = vec![ZERO; grid.len()];
    for (i, p) in svd.src.positions().into_iter().enumerate() {
        buf[p] = svd.v[(i, j - 1)];
    }
    fft.transform(&mut buf, svd.direction);
    Ok(buf)
}

const SVD_MAGIC: &[u8; 4] = b"HFSV";
const SVD_VERSION: u32 = 1;

/// Geometry-keyed header of an SVD cache file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SvdCacheHeader {
    pub d: u32,
    pub n: u32,
    pub m: u32,
    pub w_hash: [u8; 32],
    pub r_hash: [u8; 32],
}

/// Writes the cache: magic, version, d, N, m, mask hashes, `p`, `|R|`,
/// `sigma`, then `U` and `V` row-major as interleaved little-endian
/// complex float64.
pub fn write_svd_cache<W: Write>(out: &mut W, n: u32, m: u32, svd: &ThinSvd) -> Result<()> {
    let grid = svd.src.grid();
    out.write_all(SVD_MAGIC)?;
    out.write_all(&SVD_VERSION.to_le_bytes())?;
    out.write_all(&(grid.d as u32).to_le_bytes())?;
    out.write_all(&n.to_le_bytes())?;
    out.write_all(&m.to_le_bytes())?;
    out.write_all(&svd.src.hash())?;
    out.write_all(&svd.dst.hash())?;
    out.write_all(&(svd.rank() as u64).to_le_bytes())?;
    out.write_all(&(svd.dst.len() as u64).to_le_bytes())?;
    for s in &svd.sigma {
        out.write_all(&s.to_le_bytes())?;
    }
    for mat in [&svd.u, &svd.v] {
        for i in 0..mat.nrows() {
            for j in 0..mat.ncols() {
                let z = mat[(i, j)];
                out.write_all(&z.re.to_le_bytes())?;
                out.write_all(&z.im.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn read_svd_cache_header<R: Read>(input: &mut R) -> Result<SvdCacheHeader> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != SVD_MAGIC {
        return Err(Error::Format("not an SVD cache file".into()));
    }
    let version = read_u32(input)?;
    if version != SVD_VERSION {
        return Err(Error::Format(format!("unsupported SVD cache version {version}")));
    }
    let d = read_u32(input)?;
    let n = read_u32(input)?;
    let m = read_u32(input)?;
    let mut w_hash = [0u8; 32];
    let mut r_hash = [0u8; 32];
    input.read_exact(&mut w_hash)?;
    input.read_exact(&mut r_hash)?;
    Ok(SvdCacheHeader {
        d,
        n,
        m,
        w_hash,
        r_hash,
    })
}

/// Reads a cache written for `F*_{R,W}`; the masks must hash to the header.
pub fn read_svd_cache<R: Read>(input: &mut R, r: &IndexSet, w: &IndexSet) -> Result<ThinSvd> {
    let header = read_svd_cache_header(input)?;
    if header.w_hash != w.hash() || header.r_hash != r.hash() {
        return Err(Error::Format("SVD cache does not match the requested masks".into()));
    }
    let p = read_u64(input)? as usize;
    let rows = read_u64(input)? as usize;
    if p != w.len() || rows != r.len() {
        return Err(Error::Format("SVD cache dimensions do not match".into()));
    }
    let sigma = (0..p).map(|_| read_f64(input)).collect::<Result<Vec<_>>>()?;
    let mut read_mat = |nr: usize, nc: usize| -> Result<DMatrix<Complex64>> {
        let mut mat = DMatrix::<Complex64>::zeros(nr, nc);
        for i in 0..nr {
            for j in 0..nc {
                let re = read_f64(input)?;
                let im = read_f64(input)?;
                mat[(i, j)] = Complex64::new(re, im);
            }
        }
        Ok(mat)
    };
    let u = read_mat(rows, p)?;
    let v = read_mat(p, p)?;
    Ok(ThinSvd {
        u,
        sigma,
        v,
        src: w.clone(),
        dst: r.clone(),
        direction: Direction::Inverse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    /// Closed-form entries of `F*` restricted to (dst, src), 1d.
    fn dense_inverse_1d(grid: Grid, src: &IndexSet, dst: &IndexSet) -> DMatrix<Complex64> {
        let side = grid.side() as f64;
        let s = src.points();
        let t = dst.points();
        DMatrix::from_fn(t.len(), s.len(), |i, j| {
            Complex64::from_polar(1.0 / side.sqrt(), 2.0 * PI * (t[i][0] * s[j][0]) as f64 / side)
        })
    }

    fn random_set(grid: Grid, rng: &mut ChaCha8Rng, p: f64) -> IndexSet {
        let mask = (0..grid.len()).map(|_| rng.random::<f64>() < p).collect();
        IndexSet::from_mask(grid, mask).unwrap()
    }

    fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
        (0..n)
            .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect()
    }

    #[test]
    fn delta_maps_to_constant() {
        let grid = Grid::new(2, 3);
        let full = IndexSet::full(grid);
        let op = RestrictedDft::new(full.clone(), full, Direction::Forward).unwrap();
        let mut x = vec![ZERO; grid.len()];
        x[grid.flat(&[0, 0])] = Complex64::new(1.0, 0.0);
        let y = op.apply(&x).unwrap();
        for v in y {
            assert!((v.re - 1.0 / 6.0).abs() < 1e-15 && v.im.abs() < 1e-15);
        }
    }

    #[test]
    fn single_source_column_matches_dense() {
        let grid = Grid::new(1, 4);
        let src = IndexSet::from_points(grid, &[vec![0]]).unwrap();
        let dst = IndexSet::full(grid);
        let op = RestrictedDft::new(src.clone(), dst.clone(), Direction::Inverse).unwrap();
        let y = op.apply(&[Complex64::new(1.0, 0.0)]).unwrap();
        let dense = dense_inverse_1d(grid, &src, &dst);
        for (i, v) in y.iter().enumerate() {
            assert!((v - dense[(i, 0)]).norm() < 1e-15);
        }
    }

    #[test]
    fn adjoint_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let grid = Grid::new(2, 4);
        let w = random_set(grid, &mut rng, 0.2);
        let r = random_set(grid, &mut rng, 0.6);
        let fwd = RestrictedDft::new(r.clone(), w.clone(), Direction::Forward).unwrap();
        let adj = fwd.adjoint();
        assert_eq!(adj.direction(), Direction::Inverse);
        let x = random_vec(r.len(), &mut rng);
        let y = random_vec(w.len(), &mut rng);
        let fx = fwd.apply(&x).unwrap();
        let ay = adj.apply(&y).unwrap();
        let lhs: Complex64 = fx.iter().zip(&y).map(|(a, b)| a * b.conj()).sum();
        let rhs: Complex64 = x.iter().zip(&ay).map(|(a, b)| a * b.conj()).sum();
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        let grid = Grid::new(1, 4);
        let full = IndexSet::full(grid);
        let op = RestrictedDft::new(full.clone(), full, Direction::Forward).unwrap();
        assert!(matches!(
            op.apply(&[ZERO; 3]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn svd_matches_dense_oracle_1d() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let grid = Grid::new(1, 8);
        for _ in 0..5 {
            let w = random_set(grid, &mut rng, 0.3);
            let r = random_set(grid, &mut rng, 0.7);
            if w.is_empty() || r.len() < w.len() {
                continue;
            }
            let svd = thin_svd_f_rw(&r, &w, DEFAULT_SVD_CAP).unwrap();
            let want = singular_values(dense_inverse_1d(grid, &w, &r));
            for (a, b) in svd.sigma.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn svd_invariants() {
        let grid = Grid::new(2, 6);
        let w = IndexSet::from_box(grid, &[(-2, 2), (-2, 2)]).unwrap();
        let sac = IndexSet::from_box(grid, &[(-3, 3), (-4, 4)]).unwrap();
        let r = sac.complement();
        let svd = thin_svd_f_rw(&r, &w, DEFAULT_SVD_CAP).unwrap();
        assert_eq!(svd.rank(), 25);
        for win in svd.sigma.windows(2) {
            assert!(win[0] >= win[1]);
        }
        assert!(svd.sigma.iter().all(|&s| (-1e-12..=1.0 + 1e-12).contains(&s)));
        let p = svd.rank();
        let utu = svd.u.adjoint() * &svd.u;
        let vtv = svd.v.adjoint() * &svd.v;
        let eye = DMatrix::<Complex64>::identity(p, p);
        assert!((utu - &eye).norm() < 1e-10);
        assert!((vtv - &eye).norm() < 1e-10);

        let a = RestrictedDft::inverse(&w, &r).unwrap().to_dense();
        let sig = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            p,
            svd.sigma.iter().map(|&s| Complex64::new(s, 0.0)),
        ));
        let rec = &svd.u * sig * svd.v.adjoint();
        assert!((a - rec).norm() <= 1e-10 * svd.sigma_max() * (p as f64).sqrt());

        // the largest-modulus entry of each v column is real and positive
        for j in 0..p {
            let col = svd.right_vector(j);
            let big = col
                .iter()
                .max_by(|a, b| a.norm().total_cmp(&b.norm()))
                .unwrap();
            assert!(big.im.abs() < 1e-14 && big.re > 0.0);
        }
    }

    #[test]
    fn energy_split_on_complement() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let grid = Grid::new(2, 5);
        let w = IndexSet::from_box(grid, &[(-2, 2), (-1, 2)]).unwrap();
        let sac = IndexSet::from_box(grid, &[(-3, 3), (-3, 3)]).unwrap();
        let r = sac.complement();
        let a_r = RestrictedDft::inverse(&w, &r).unwrap();
        let a_s = RestrictedDft::inverse(&w, &sac).unwrap();
        for _ in 0..10 {
            let mut x = random_vec(w.len(), &mut rng);
            let nx: f64 = x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            x.iter_mut().for_each(|z| *z /= nx);
            let e_r: f64 = a_r.apply(&x).unwrap().iter().map(|z| z.norm_sqr()).sum();
            let e_s: f64 = a_s.apply(&x).unwrap().iter().map(|z| z.norm_sqr()).sum();
            assert!((e_r + e_s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_vector_energy() {
        let grid = Grid::new(2, 8);
        let w = IndexSet::from_box(grid, &[(-2, 2), (-2, 2)]).unwrap();
        let sac = IndexSet::from_box(grid, &[(-5, 5), (-5, 5)]).unwrap();
        let r = sac.complement();
        let svd = thin_svd_f_rw(&r, &w, DEFAULT_SVD_CAP).unwrap();
        let p = svd.rank();
        for j in [1, p] {
            let field = singular_vector_field(&svd, j).unwrap();
            let total: f64 = field.iter().map(|z| z.norm_sqr()).sum();
            let in_r: f64 = r.positions().iter().map(|&q| field[q].norm_sqr()).sum();
            let s = svd.sigma[j - 1];
            assert!((total - 1.0).abs() < 1e-12);
            assert!((in_r - s * s).abs() < 1e-12);
        }
        assert!(singular_vector_field(&svd, 0).is_err());
        assert!(singular_vector_field(&svd, p + 1).is_err());
    }

    #[test]
    fn cap_and_shape_errors() {
        let grid = Grid::new(1, 8);
        let w = IndexSet::from_box(grid, &[(-3, 3)]).unwrap();
        let r = IndexSet::from_box(grid, &[(5, 8)]).unwrap();
        assert!(matches!(
            thin_svd_f_rw(&r, &w, DEFAULT_SVD_CAP),
            Err(Error::Underdetermined { .. })
        ));
        let r = w.complement();
        assert!(matches!(
            thin_svd_f_rw(&r, &w, 4),
            Err(Error::CapExceeded { .. })
        ));
    }

    #[test]
    fn cache_round_trip() {
        let grid = Grid::new(2, 4);
        let w = IndexSet::from_box(grid, &[(-1, 1), (-1, 1)]).unwrap();
        let r = IndexSet::from_box(grid, &[(-2, 2), (-2, 2)]).unwrap().complement();
        let svd = thin_svd_f_rw(&r, &w, DEFAULT_SVD_CAP).unwrap();
        let mut bytes = Vec::new();
        write_svd_cache(&mut bytes, 2, 2, &svd).unwrap();
        assert_eq!(&bytes[..4], b"HFSV");
        let back = read_svd_cache(&mut bytes.as_slice(), &r, &w).unwrap();
        assert_eq!(back.sigma, svd.sigma);
        assert_eq!(back.u, svd.u);
        assert_eq!(back.v, svd.v);
        // wrong masks are rejected
        assert!(read_svd_cache(&mut bytes.as_slice(), &w.complement(), &w).is_err());
    }

    fn check_box_route(grid: Grid, wb: &[(i64, i64)], sb: &[(i64, i64)]) {
        let w = IndexSet::from_box(grid, wb).unwrap();
        let sac = IndexSet::from_box(grid, sb).unwrap();
        let r = sac.complement();
        let dense = thin_svd_f_rw(&r, &w, DEFAULT_SVD_CAP).unwrap();
        let fast = thin_svd_box(&w, &sac, DEFAULT_SVD_CAP).unwrap();
        assert_eq!(fast.rank(), dense.rank());
        for (a, b) in fast.sigma.iter().zip(&dense.sigma) {
            assert!((a - b).abs() <= 1e-10 * b.max(1e-3), "{a} vs {b}");
        }
        let a = RestrictedDft::inverse(&w, &r).unwrap().to_dense();
        let s = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            fast.rank(),
            fast.sigma.iter().map(|&x| Complex64::new(x, 0.0)),
        ));
        let rebuilt = &fast.u * s * fast.v.adjoint();
        assert!((rebuilt - &a).norm() < 1e-11 * a.norm());
        let p = fast.rank();
        let gram_v = fast.v.adjoint() * &fast.v;
        assert!((gram_v - DMatrix::<Complex64>::identity(p, p)).norm() < 1e-11);
        let gram_u = fast.u.adjoint() * &fast.u;
        assert!((gram_u - DMatrix::<Complex64>::identity(p, p)).norm() < 1e-8);
    }

    #[test]
    fn box_route_matches_dense_1d() {
        check_box_route(Grid::new(1, 12), &[(-2, 2)], &[(-6, 6)]);
    }

    #[test]
    fn box_route_matches_dense_2d() {
        check_box_route(Grid::new(2, 6), &[(-1, 1), (-2, 1)], &[(-4, 4), (-3, 5)]);
    }

    #[test]
    fn box_route_matches_dense_3d() {
        check_box_route(Grid::new(3, 4), &[(-1, 1), (0, 1), (-1, 0)], &[(-2, 2), (-3, 2), (-2, 3)]);
    }

    #[test]
    fn box_route_rejects_non_box() {
        let grid = Grid::new(2, 4);
        let w = IndexSet::from_points(grid, &[vec![0, 0], vec![1, 1]]).unwrap();
        let sac = IndexSet::from_box(grid, &[(-2, 2), (-2, 2)]).unwrap();
        assert!(matches!(thin_svd_box(&w, &sac, 100), Err(Error::NotBox(_))));
    }
}
