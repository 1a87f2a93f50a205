//! Multi-dimensional FFTs on a [`Grid`], plus spectral derivative helpers.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::grid::Grid;

/// Unnormalized forward/inverse FFT over all axes of a grid.
///
/// Clones share plans but own their scratch space, so each solver can hold
/// one without synchronization.
#[derive(Clone)]
pub struct NdFft {
    grid: Grid,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
    block: Vec<Complex64>,
}

impl std::fmt::Debug for NdFft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NdFft").field("grid", &self.grid).finish()
    }
}

impl NdFft {
    pub fn new(grid: Grid) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(grid.n);
        let inverse = planner.plan_fft_inverse(grid.n);
        let len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        let block = if grid.dim > 1 { vec![Complex64::default(); grid.len()] } else { Vec::new() };
        Self {
            grid,
            forward,
            inverse,
            scratch: vec![Complex64::default(); len],
            block,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// In-place forward transform, `X_k = sum_x x e^{-i k x}`.
    pub fn forward(&mut self, data: &mut [Complex64]) {
        let plan = Arc::clone(&self.forward);
        self.transform(data, plan.as_ref());
    }

    /// In-place inverse transform without the `1/N` factor.
    pub fn inverse(&mut self, data: &mut [Complex64]) {
        let plan = Arc::clone(&self.inverse);
        self.transform(data, plan.as_ref());
    }

    fn transform(&mut self, data: &mut [Complex64], plan: &dyn Fft<f64>) {
        let g = self.grid;
        assert_eq!(data.len(), g.len(), "buffer does not match grid");
        let n = g.n;
        plan.process_with_scratch(data, &mut self.scratch);
        for axis in 0..g.dim.saturating_sub(1) {
            // View as outer x n x stride; transpose each n x stride block so
            // the lines along `axis` become contiguous.
            let stride = g.stride(axis);
            let block_len = n * stride;
            for block in data.chunks_exact_mut(block_len) {
                let tmp = &mut self.block[..block_len];
                for i in 0..n {
                    for j in 0..stride {
                        tmp[j * n + i] = block[i * stride + j];
                    }
                }
                plan.process_with_scratch(tmp, &mut self.scratch);
                for i in 0..n {
                    for j in 0..stride {
                        block[i * stride + j] = tmp[j * n + i];
                    }
                }
            }
        }
    }

    /// Forward transform of a real field into a fresh complex buffer.
    pub fn forward_real(&mut self, values: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }
}

/// Spectral multiplier for `d/dx_axis` at FFT index `flat`; zero on the
/// Nyquist plane where the odd derivative has no real representation.
#[inline]
pub fn derivative_symbol(grid: &Grid, flat: usize, axis: usize) -> Complex64 {
    let idx = grid.multi_index(flat);
    if grid.is_nyquist(idx[axis]) {
        Complex64::default()
    } else {
        Complex64::new(0.0, grid.wavenumber(idx[axis]))
    }
}

/// Spectral divergence of a vector field given by its real components.
pub fn divergence(fft: &mut NdFft, components: &[Vec<f64>]) -> Vec<f64> {
    let grid = *fft.grid();
    let n_total = grid.len();
    let mut acc = vec![Complex64::default(); n_total];
    for (axis, comp) in components.iter().enumerate() {
        let hat = fft.forward_real(comp);
        for (flat, (a, h)) in acc.iter_mut().zip(hat.iter()).enumerate() {
            *a += derivative_symbol(&grid, flat, axis) * h;
        }
    }
    fft.inverse(&mut acc);
    let scale = 1.0 / n_total as f64;
    acc.iter().map(|c| c.re * scale).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn naive_dft(grid: &Grid, data: &[Complex64]) -> Vec<Complex64> {
        let n = grid.len();
        (0..n)
            .map(|kf| {
                let ki = grid.multi_index(kf);
                let mut s = Complex64::default();
                for (xf, v) in data.iter().enumerate() {
                    let xi = grid.multi_index(xf);
                    let phase: f64 = (0..grid.dim)
                        .map(|a| (ki[a] * xi[a]) as f64)
                        .sum::<f64>()
                        * 2.0
                        * PI
                        / grid.n as f64;
                    s += v * Complex64::from_polar(1.0, -phase);
                }
                s
            })
            .collect()
    }

    #[test]
    fn matches_naive_dft_in_2d_and_3d() {
        for dim in [2usize, 3] {
            let grid = Grid::new(dim, 4, 1.0).unwrap();
            let data: Vec<Complex64> = (0..grid.len())
                .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
                .collect();
            let expect = naive_dft(&grid, &data);
            let mut got = data.clone();
            let mut fft = NdFft::new(grid);
            fft.forward(&mut got);
            for (a, b) in got.iter().zip(expect.iter()) {
                assert!((a - b).norm() < 1e-10);
            }
            fft.inverse(&mut got);
            for (a, b) in got.iter().zip(data.iter()) {
                assert!((a / grid.len() as f64 - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn divergence_of_gradient_is_laplacian() {
        let grid = Grid::new(2, 32, 2.0 * PI).unwrap();
        let mut fft = NdFft::new(grid);
        // phi = sin(x) cos(2y): grad = (cos x cos 2y, -2 sin x sin 2y), lap = -5 phi
        let mut gx = vec![0.0; grid.len()];
        let mut gy = vec![0.0; grid.len()];
        let mut phi = vec![0.0; grid.len()];
        for f in 0..grid.len() {
            let idx = grid.multi_index(f);
            let (x, y) = (idx[0] as f64 * grid.dx(), idx[1] as f64 * grid.dx());
            phi[f] = x.sin() * (2.0 * y).cos();
            gx[f] = x.cos() * (2.0 * y).cos();
            gy[f] = -2.0 * x.sin() * (2.0 * y).sin();
        }
        let div = divergence(&mut fft, &[gx, gy]);
        for f in 0..grid.len() {
            assert!((div[f] + 5.0 * phi[f]).abs() < 1e-10);
        }
    }
}
