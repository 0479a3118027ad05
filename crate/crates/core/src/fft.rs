//! Centered, unitary d-dimensional DFT on the grid `J`.
//!
//! Forward: `X_k = M^{-d/2} sum_j x_j exp(-2 pi i j.k / M)` with `M = 2mN`.
//! The centering is done with index rolls so masks stay exact.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::lattice::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `F`, image to frequency.
    Forward,
    /// `F*`, frequency to image.
    Inverse,
}

impl Direction {
    pub fn reverse(self) -> Self {
        match self {
            Direction::Forward => Direction::Inverse,
            Direction::Inverse => Direction::Forward,
        }
    }
}

/// Reusable scratch space for [`CenteredFft::transform_with`].
#[derive(Default)]
pub struct FftWork {
    lines: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

/// FFT plans for one grid.
#[derive(Clone)]
pub struct CenteredFft {
    grid: Grid,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// natural index of each array position along an axis
    roll: Vec<usize>,
}

impl std::fmt::Debug for CenteredFft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CenteredFft").field("grid", &self.grid).finish()
    }
}

impl CenteredFft {
    pub fn new(grid: Grid) -> Self {
        let side = grid.side();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(side);
        let inverse = planner.plan_fft_inverse(side);
        let shift = grid.half - 1;
        let roll = (0..side).map(|p| (p + side - shift) % side).collect();
        CenteredFft {
            grid,
            forward,
            inverse,
            roll,
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, Direction::Forward);
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, Direction::Inverse);
    }

    pub fn transform(&self, data: &mut [Complex64], dir: Direction) {
        let mut work = FftWork::default();
        self.transform_with(data, dir, &mut work);
    }

    /// As [`CenteredFft::transform`], reusing the buffers in `work`.
    pub fn transform_with(&self, data: &mut [Complex64], dir: Direction, work: &mut FftWork) {
        assert_eq!(data.len(), self.grid.len(), "array does not match grid");
        let plan = match dir {
            Direction::Forward => &self.forward,
            Direction::Inverse => &self.inverse,
        };
        let side = self.grid.side();
        let d = self.grid.d;
        let scale = 1.0 / (side as f64).sqrt();
        let zero = Complex64::new(0.0, 0.0);
        work.lines.resize(data.len(), zero);
        work.scratch.resize(plan.get_inplace_scratch_len(), zero);
        let lines = &mut work.lines;
        for axis in 0..d {
            let stride = side.pow((d - 1 - axis) as u32);
            let outer = self.grid.len() / (side * stride);
            // gather every line along `axis` into contiguous, unrolled order
            for o in 0..outer {
                for s in 0..stride {
                    let base = o * side * stride + s;
                    let line = &mut lines[(o * stride + s) * side..][..side];
                    for (p, &t) in self.roll.iter().enumerate() {
                        line[t] = data[base + p * stride];
                    }
                }
            }
            plan.process_with_scratch(lines, &mut work.scratch);
            for o in 0..outer {
                for s in 0..stride {
                    let base = o * side * stride + s;
                    let line = &lines[(o * stride + s) * side..][..side];
                    for (p, &t) in self.roll.iter().enumerate() {
                        data[base + p * stride] = line[t] * scale;
                    }
                }
            }
        }
    }

    /// Transform of a real array, returned as complex.
    pub fn forward_real(&self, data: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = data.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn dense_dft_1d(half: usize, x: &[Complex64], sign: f64) -> Vec<Complex64> {
        let grid = Grid::new(1, half);
        let side = grid.side();
        (0..side)
            .map(|pk| {
                let k = grid.index(pk) as f64;
                (0..side)
                    .map(|pj| {
                        let j = grid.index(pj) as f64;
                        x[pj] * Complex64::from_polar(1.0, sign * 2.0 * PI * j * k / side as f64)
                    })
                    .sum::<Complex64>()
                    / (side as f64).sqrt()
            })
            .collect()
    }

    #[test]
    fn matches_dense_1d() {
        let grid = Grid::new(1, 5);
        let fft = CenteredFft::new(grid);
        let x: Vec<Complex64> = (0..10)
            .map(|i| Complex64::new((i as f64 * 0.7).sin(), (i as f64 * 1.3).cos()))
            .collect();
        let mut y = x.clone();
        fft.forward(&mut y);
        let want = dense_dft_1d(5, &x, -1.0);
        for (a, b) in y.iter().zip(&want) {
            assert!((a - b).norm() < 1e-13);
        }
        let mut z = x.clone();
        fft.inverse(&mut z);
        let want = dense_dft_1d(5, &x, 1.0);
        for (a, b) in z.iter().zip(&want) {
            assert!((a - b).norm() < 1e-13);
        }
    }

    #[test]
    fn delta_at_origin_is_flat() {
        let grid = Grid::new(2, 3);
        let fft = CenteredFft::new(grid);
        let mut x = vec![Complex64::new(0.0, 0.0); grid.len()];
        x[grid.flat(&[0, 0])] = Complex64::new(1.0, 0.0);
        fft.forward(&mut x);
        for v in &x {
            assert!((v - Complex64::new(1.0 / 6.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn round_trip_2d() {
        let grid = Grid::new(2, 4);
        let fft = CenteredFft::new(grid);
        let x: Vec<Complex64> = (0..grid.len())
            .map(|i| Complex64::new((i as f64).sin(), 0.5 * (i as f64).cos()))
            .collect();
        let mut y = x.clone();
        fft.forward(&mut y);
        fft.inverse(&mut y);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).norm() < 1e-13);
        }
    }
}
