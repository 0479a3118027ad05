//! Discrete geometry: the grid `J`, the support sets `S` and `S_AC`, the
//! beamstop window `W` and the constraint region `R`.
//!
//! Logical indices along each axis run over `[1 - mN : mN]`. They are stored
//! in a 0-based row-major array where logical index `j` lives at position
//! `j + mN - 1`. Axis 0 varies slowest. The frequency grid uses the same
//! convention, so `k = 0` sits at position `mN - 1` on every axis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Problem geometry.
///
/// `n` is the base half-resolution (samples of the image live in
/// `[1 - n : n]^d`), `m` the oversampling factor, `beta` the autocorrelation
/// support factor and `k0` the beamstop half-width in physical frequency
/// units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub d: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub m: usize,
    pub beta: f64,
    pub k0: f64,
}

impl Geometry {
    pub fn new(d: usize, n: usize, m: usize, beta: f64, k0: f64) -> Result<Self> {
        let g = Geometry { d, n, m, beta, k0 };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Geometry("dimension d must be at least 1".into()));
        }
        if self.n == 0 || self.m == 0 {
            return Err(Error::Geometry("N and m must be positive".into()));
        }
        if !(self.beta > 1.0 && self.beta <= 2.0) {
            return Err(Error::Geometry(format!(
                "beta = {} must satisfy 1 < beta <= 2",
                self.beta
            )));
        }
        if !(self.k0.is_finite() && self.k0 >= 0.0) {
            return Err(Error::Geometry(format!("k0 = {} must be >= 0", self.k0)));
        }
        let w = self.w();
        if 2 * w > 2 * self.m * self.n {
            return Err(Error::Geometry(format!(
                "hole of width {} does not fit strictly inside a grid of side {}",
                2 * w - 1,
                2 * self.m * self.n
            )));
        }
        Ok(())
    }

    /// Hole half-extent in grid units, `w = floor(1 + m k0)`.
    pub fn w(&self) -> usize {
        (1.0 + self.m as f64 * self.k0).floor() as usize
    }

    /// `mN`, the largest logical index on each axis.
    pub fn half(&self) -> usize {
        self.m * self.n
    }

    pub fn grid(&self) -> Grid {
        Grid::new(self.d, self.half())
    }

    /// Half-width of the box autocorrelation support.
    ///
    /// The autocorrelation is supported in the open box `(-beta/2, beta/2)^d`
    /// in physical units; with sample spacing `1/(2N)` the lattice points are
    /// those with `|j| < beta N`.
    pub fn sac_half_width(&self) -> usize {
        let x = self.beta * self.n as f64;
        let c = x.ceil();
        // ceil(x) - 1 is the largest integer strictly below x.
        (c as usize).saturating_sub(1)
    }

    /// Box autocorrelation support `[-h : h]^d` with `h = sac_half_width()`.
    pub fn sac_box(&self) -> Result<IndexSet> {
        let h = self.sac_half_width() as i64;
        if h >= self.half() as i64 {
            return Err(Error::Geometry(format!(
                "autocorrelation box half-width {h} does not fit inside J (mN = {})",
                self.half()
            )));
        }
        IndexSet::from_box(self.grid(), &vec![(-h, h); self.d])
    }
}

/// The grid `J = [1 - half : half]^d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid {
    pub d: usize,
    pub half: usize,
}

impl Grid {
    pub fn new(d: usize, half: usize) -> Self {
        Grid { d, half }
    }

    /// Points per axis, `2 half`.
    pub fn side(&self) -> usize {
        2 * self.half
    }

    /// Total number of grid points.
    pub fn len(&self) -> usize {
        self.side().pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.half == 0
    }

    pub fn lo(&self) -> i64 {
        1 - self.half as i64
    }

    pub fn hi(&self) -> i64 {
        self.half as i64
    }

    pub fn contains_index(&self, j: i64) -> bool {
        j >= self.lo() && j <= self.hi()
    }

    /// Array position of a logical index along one axis.
    pub fn pos(&self, j: i64) -> usize {
        (j + self.half as i64 - 1) as usize
    }

    /// Logical index of an array position along one axis.
    pub fn index(&self, p: usize) -> i64 {
        p as i64 - self.half as i64 + 1
    }

    /// Flat offset of a multi-index given in logical coordinates.
    pub fn flat(&self, idx: &[i64]) -> usize {
        let side = self.side();
        idx.iter().fold(0usize, |acc, &j| acc * side + self.pos(j))
    }

    /// Logical multi-index of a flat offset.
    pub fn unflat(&self, mut flat: usize) -> Vec<i64> {
        let side = self.side();
        let mut out = vec![0i64; self.d];
        for a in (0..self.d).rev() {
            out[a] = self.index(flat % side);
            flat /= side;
        }
        out
    }

    /// Wraps a logical index onto `[1 - half : half]` modulo the side length.
    pub fn wrap(&self, j: i64) -> i64 {
        let side = self.side() as i64;
        (j - self.lo()).rem_euclid(side) + self.lo()
    }
}

/// A subset of `J` held as a boolean mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexSet {
    grid: Grid,
    mask: Vec<bool>,
    cardinality: usize,
    bbox: Option<Vec<(i64, i64)>>,
}

impl IndexSet {
    pub fn from_mask(grid: Grid, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: mask.len(),
            });
        }
        let cardinality = mask.iter().filter(|&&b| b).count();
        let mut s = IndexSet {
            grid,
            mask,
            cardinality,
            bbox: None,
        };
        s.bbox = s.detect_box();
        Ok(s)
    }

    /// The axis-aligned box with inclusive per-axis logical bounds.
    pub fn from_box(grid: Grid, bounds: &[(i64, i64)]) -> Result<Self> {
        if bounds.len() != grid.d {
            return Err(Error::DimensionMismatch {
                expected: grid.d,
                got: bounds.len(),
            });
        }
        for &(lo, hi) in bounds {
            if lo > hi {
                return Err(Error::IndexSet(format!("empty box range [{lo}:{hi}]")));
            }
            if !grid.contains_index(lo) || !grid.contains_index(hi) {
                return Err(Error::IndexSet(format!(
                    "box range [{lo}:{hi}] exceeds J = [{}:{}]",
                    grid.lo(),
                    grid.hi()
                )));
            }
        }
        let mut mask = vec![false; grid.len()];
        let mut cardinality = 0;
        for (flat, m) in mask.iter_mut().enumerate() {
            let idx = grid.unflat(flat);
            if idx
                .iter()
                .zip(bounds)
                .all(|(&j, &(lo, hi))| j >= lo && j <= hi)
            {
                *m = true;
                cardinality += 1;
            }
        }
        Ok(IndexSet {
            grid,
            mask,
            cardinality,
            bbox: Some(bounds.to_vec()),
        })
    }

    pub fn full(grid: Grid) -> Self {
        let b = vec![(grid.lo(), grid.hi()); grid.d];
        IndexSet {
            grid,
            mask: vec![true; grid.len()],
            cardinality: grid.len(),
            bbox: Some(b),
        }
    }

    pub fn empty(grid: Grid) -> Self {
        IndexSet {
            grid,
            mask: vec![false; grid.len()],
            cardinality: 0,
            bbox: None,
        }
    }

    /// Builds a set from a list of logical multi-indices.
    pub fn from_points(grid: Grid, points: &[Vec<i64>]) -> Result<Self> {
        let mut mask = vec![false; grid.len()];
        for p in points {
            if p.len() != grid.d || !p.iter().all(|&j| grid.contains_index(j)) {
                return Err(Error::IndexSet(format!("point {p:?} is outside J")));
            }
            mask[grid.flat(p)] = true;
        }
        IndexSet::from_mask(grid, mask)
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.cardinality
    }

    pub fn is_empty(&self) -> bool {
        self.cardinality == 0
    }

    /// Inclusive per-axis bounds when the set is exactly a box.
    pub fn bbox(&self) -> Option<&[(i64, i64)]> {
        self.bbox.as_deref()
    }

    pub fn is_box(&self) -> bool {
        self.bbox.is_some()
    }

    pub fn contains(&self, idx: &[i64]) -> bool {
        idx.len() == self.grid.d
            && idx.iter().all(|&j| self.grid.contains_index(j))
            && self.mask[self.grid.flat(idx)]
    }

    /// Flat positions of the members, in increasing order.
    pub fn positions(&self) -> Vec<usize> {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    /// Logical multi-indices of the members, in increasing flat order.
    pub fn points(&self) -> Vec<Vec<i64>> {
        self.positions()
            .into_iter()
            .map(|p| self.grid.unflat(p))
            .collect()
    }

    pub fn complement(&self) -> IndexSet {
        let mask = self.mask.iter().map(|&b| !b).collect();
        IndexSet::from_mask(self.grid, mask).expect("same grid")
    }

    pub fn union(&self, other: &IndexSet) -> Result<IndexSet> {
        self.combine(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &IndexSet) -> Result<IndexSet> {
        self.combine(other, |a, b| a && b)
    }

    pub fn difference(&self, other: &IndexSet) -> Result<IndexSet> {
        self.combine(other, |a, b| a && !b)
    }

    pub fn is_subset(&self, other: &IndexSet) -> bool {
        self.grid == other.grid
            && self
                .mask
                .iter()
                .zip(&other.mask)
                .all(|(&a, &b)| !a || b)
    }

    fn combine(&self, other: &IndexSet, f: impl Fn(bool, bool) -> bool) -> Result<IndexSet> {
        if self.grid != other.grid {
            return Err(Error::IndexSet("index sets live on different grids".into()));
        }
        let mask = self
            .mask
            .iter()
            .zip(&other.mask)
            .map(|(&a, &b)| f(a, b))
            .collect();
        IndexSet::from_mask(self.grid, mask)
    }

    /// Smallest box containing the set, whether or not the set is a box.
    pub fn bounding_box(&self) -> Option<Vec<(i64, i64)>> {
        if self.cardinality == 0 {
            return None;
        }
        let mut b = vec![(i64::MAX, i64::MIN); self.grid.d];
        for p in self.positions() {
            for (a, j) in self.grid.unflat(p).into_iter().enumerate() {
                b[a].0 = b[a].0.min(j);
                b[a].1 = b[a].1.max(j);
            }
        }
        Some(b)
    }

    fn detect_box(&self) -> Option<Vec<(i64, i64)>> {
        let b = self.bounding_box()?;
        let volume: usize = b.iter().map(|&(lo, hi)| (hi - lo + 1) as usize).product();
        (volume == self.cardinality).then_some(b)
    }

    /// Content hash of the mask, used to key caches.
    pub fn hash(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update((self.grid.d as u64).to_le_bytes());
        h.update((self.grid.half as u64).to_le_bytes());
        for chunk in self.mask.chunks(8) {
            let mut byte = 0u8;
            for (i, &b) in chunk.iter().enumerate() {
                if b {
                    byte |= 1 << i;
                }
            }
            h.update([byte]);
        }
        h.finalize().into()
    }
}

/// Beamstop window `W = [1 - w : w - 1]^d`.
pub fn beamstop_window(geometry: &Geometry) -> Result<IndexSet> {
    geometry.validate()?;
    let w = geometry.w() as i64;
    IndexSet::from_box(geometry.grid(), &vec![(1 - w, w - 1); geometry.d])
}

/// Difference set `S - S = { j - k : j, k in S }`.
///
/// Box inputs take a closed form; other shapes are enumerated.
pub fn autocorrelation_support(s: &IndexSet) -> Result<IndexSet> {
    if s.is_empty() {
        return Err(Error::IndexSet("support set is empty".into()));
    }
    let grid = s.grid();
    if let Some(b) = s.bbox() {
        let bounds: Vec<(i64, i64)> = b.iter().map(|&(lo, hi)| (lo - hi, hi - lo)).collect();
        if bounds.iter().any(|&(lo, hi)| !grid.contains_index(lo) || !grid.contains_index(hi)) {
            return Err(Error::IndexSet(format!(
                "difference set {bounds:?} exceeds J = [{}:{}]",
                grid.lo(),
                grid.hi()
            )));
        }
        return IndexSet::from_box(grid, &bounds);
    }
    let pts = s.points();
    let mut mask = vec![false; grid.len()];
    let mut diff = vec![0i64; grid.d];
    for p in &pts {
        for q in &pts {
            for a in 0..grid.d {
                diff[a] = p[a] - q[a];
            }
            if !diff.iter().all(|&j| grid.contains_index(j)) {
                return Err(Error::IndexSet(format!(
                    "difference {diff:?} lies outside J = [{}:{}]",
                    grid.lo(),
                    grid.hi()
                )));
            }
            mask[grid.flat(&diff)] = true;
        }
    }
    IndexSet::from_mask(grid, mask)
}

/// Constraint region `R = J \ S_AC`, rejected when `|R| <= |W|`.
pub fn constraint_region(geometry: &Geometry, sac: &IndexSet) -> Result<IndexSet> {
    if sac.grid() != geometry.grid() {
        return Err(Error::IndexSet(
            "autocorrelation support is not on the geometry's grid".into(),
        ));
    }
    let r = sac.complement();
    let w = beamstop_window(geometry)?;
    if r.len() <= w.len() {
        return Err(Error::Underdetermined {
            r: r.len(),
            w: w.len(),
        });
    }
    Ok(r)
}

/// Sufficient condition for `F*_{R,W}` to have a trivial null space.
///
/// Along some axis, `W` must fit in a slab `[p : p + u]` while `R` contains
/// every hyperplane of a slab `[q : q + v]` with `v > u`. Slabs are taken
/// cyclically since the DFT is periodic.
pub fn theorem0_check(w: &IndexSet, r: &IndexSet) -> bool {
    if w.grid() != r.grid() || w.is_empty() || r.is_empty() {
        return false;
    }
    let grid = w.grid();
    let side = grid.side();
    let wb = match w.bounding_box() {
        Some(b) => b,
        None => return false,
    };
    for (axis, &(lo, hi)) in wb.iter().enumerate() {
        let u = hi - lo;
        // A hyperplane x_axis = c is full when every point on it lies in R.
        let mut full = vec![true; side];
        for (flat, &inside) in r.mask().iter().enumerate() {
            if !inside {
                let c = (flat / side.pow((grid.d - 1 - axis) as u32)) % side;
                full[c] = false;
            }
        }
        let run = longest_cyclic_run(&full);
        if run == side || (run as i64 - 1) > u {
            return true;
        }
    }
    false
}

fn longest_cyclic_run(flags: &[bool]) -> usize {
    let n = flags.len();
    if flags.iter().all(|&f| f) {
        return n;
    }
    let mut best = 0;
    let mut cur = 0;
    for i in 0..2 * n {
        if flags[i % n] {
            cur += 1;
            best = best.max(cur);
        } else {
            cur = 0;
        }
    }
    best.min(n)
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexSetFile {
    dims: Vec<usize>,
    origin_offset: Vec<i64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    bbox: Option<Vec<[i64; 2]>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    rle: Option<Vec<usize>>,
}

impl IndexSet {
    /// JSON document `{dims, origin_offset, bbox | rle}`.
    ///
    /// `origin_offset` is the array position of logical index 0 on each axis.
    /// The run-length encoding alternates runs of absent and present points
    /// in row-major order, starting with an absent run (possibly of length 0).
    pub fn to_json(&self) -> String {
        let file = IndexSetFile {
            dims: vec![self.grid.side(); self.grid.d],
            origin_offset: vec![self.grid.half as i64 - 1; self.grid.d],
            bbox: self
                .bbox
                .as_ref()
                .map(|b| b.iter().map(|&(lo, hi)| [lo, hi]).collect()),
            rle: if self.bbox.is_some() {
                None
            } else {
                Some(run_lengths(&self.mask))
            },
        };
        serde_json::to_string(&file).expect("serializable")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: IndexSetFile = serde_json::from_str(s)?;
        let d = file.dims.len();
        if d == 0 || file.dims.iter().any(|&x| x != file.dims[0] || x % 2 != 0) {
            return Err(Error::Format(format!(
                "dims {:?} must be equal and even on every axis",
                file.dims
            )));
        }
        let half = file.dims[0] / 2;
        if file.origin_offset.len() != d
            || file.origin_offset.iter().any(|&o| o != half as i64 - 1)
        {
            return Err(Error::Format(format!(
                "origin_offset {:?} does not match the centered convention",
                file.origin_offset
            )));
        }
        let grid = Grid::new(d, half);
        match (file.bbox, file.rle) {
            (Some(b), _) => {
                let bounds: Vec<(i64, i64)> = b.into_iter().map(|[lo, hi]| (lo, hi)).collect();
                IndexSet::from_box(grid, &bounds)
            }
            (None, Some(runs)) => {
                let mut mask = Vec::with_capacity(grid.len());
                for (i, &len) in runs.iter().enumerate() {
                    mask.extend(std::iter::repeat_n(i % 2 == 1, len));
                }
                if mask.len() != grid.len() {
                    return Err(Error::Format(format!(
                        "run lengths cover {} points, grid has {}",
                        mask.len(),
                        grid.len()
                    )));
                }
                IndexSet::from_mask(grid, mask)
            }
            (None, None) => Err(Error::Format("index set needs bbox or rle".into())),
        }
    }
}

fn run_lengths(mask: &[bool]) -> Vec<usize> {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0usize;
    for &b in mask {
        if b == current {
            len += 1;
        } else {
            runs.push(len);
            current = b;
            len = 1;
        }
    }
    runs.push(len);
    runs
}
