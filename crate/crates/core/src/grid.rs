//! Periodic cubic grids.
//!
//! Nodes are stored row-major with axis 0 slowest. Node `i` along an axis sits
//! at `i * dx`; [`Grid::signed_coord`] maps it to the minimal-image coordinate
//! in `[-L/2, L/2)`, which is how fields centred at the origin are laid out.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::covariance::CovarianceSpec;
use crate::error::{Error, Result};

/// Largest dimension for grid-based modules.
pub const MAX_DIM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dim: usize,
    /// Points per side; a power of two.
    pub n: usize,
    /// Side length of the periodic box.
    pub length: f64,
}

impl Grid {
    pub fn new(dim: usize, n: usize, length: f64) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::Config(format!(
                "grid dimension must be in 1..={MAX_DIM}, got {dim}"
            )));
        }
        if n < 4 || !n.is_power_of_two() {
            return Err(Error::Config(format!(
                "points per side must be a power of two >= 4, got {n}"
            )));
        }
        if !(length > 0.0) || !length.is_finite() {
            return Err(Error::Config(format!("box length must be positive, got {length}")));
        }
        Ok(Self { dim, n, length })
    }

    /// Smallest grid satisfying the resolution rules for `spec`:
    /// `L = 8 M` and `dx <= l/4`.
    pub fn for_spec(spec: &CovarianceSpec) -> Result<Self> {
        let length = 8.0 * spec.support_radius;
        let min_n = (4.0 * length / spec.corr_length).ceil() as usize;
        Self::new(spec.dimension, min_n.next_power_of_two().max(4), length)
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        self.length / self.n as f64
    }

    /// Total number of nodes.
    #[inline]
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn cell_volume(&self) -> f64 {
        self.dx().powi(self.dim as i32)
    }

    #[inline]
    pub fn volume(&self) -> f64 {
        self.length.powi(self.dim as i32)
    }

    /// Stride of `axis` in the flat layout.
    #[inline]
    pub fn stride(&self, axis: usize) -> usize {
        self.n.pow((self.dim - 1 - axis) as u32)
    }

    pub fn multi_index(&self, mut flat: usize) -> [usize; MAX_DIM] {
        let mut idx = [0usize; MAX_DIM];
        for axis in (0..self.dim).rev() {
            idx[axis] = flat % self.n;
            flat /= self.n;
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx[..self.dim].iter().fold(0, |acc, &i| acc * self.n + i)
    }

    /// Flat index of the node displaced by `shift` nodes (periodic).
    pub fn shifted(&self, flat: usize, shift: &[i64]) -> usize {
        let idx = self.multi_index(flat);
        let n = self.n as i64;
        let mut out = 0usize;
        for axis in 0..self.dim {
            let j = (idx[axis] as i64 + shift[axis]).rem_euclid(n) as usize;
            out = out * self.n + j;
        }
        out
    }

    /// Signed integer offset of index `i` (minimal image), in `[-n/2, n/2)`.
    #[inline]
    pub fn signed_index(&self, i: usize) -> i64 {
        let n = self.n as i64;
        let i = i as i64;
        if i < n / 2 {
            i
        } else {
            i - n
        }
    }

    /// Minimal-image coordinate of node index `i` along an axis.
    #[inline]
    pub fn signed_coord(&self, i: usize) -> f64 {
        self.signed_index(i) as f64 * self.dx()
    }

    /// Minimal-image position of a node.
    pub fn position(&self, flat: usize) -> [f64; MAX_DIM] {
        let idx = self.multi_index(flat);
        let mut x = [0.0; MAX_DIM];
        for axis in 0..self.dim {
            x[axis] = self.signed_coord(idx[axis]);
        }
        x
    }

    /// Angular wavenumber of FFT index `i` along an axis.
    #[inline]
    pub fn wavenumber(&self, i: usize) -> f64 {
        2.0 * PI * self.signed_index(i) as f64 / self.length
    }

    #[inline]
    pub fn is_nyquist(&self, i: usize) -> bool {
        i == self.n / 2
    }

    /// Wavevector of a flat FFT index.
    pub fn wavevector(&self, flat: usize) -> [f64; MAX_DIM] {
        let idx = self.multi_index(flat);
        let mut k = [0.0; MAX_DIM];
        for axis in 0..self.dim {
            k[axis] = self.wavenumber(idx[axis]);
        }
        k
    }

    /// Flat index of `-k` for the FFT index `flat`.
    pub fn negated(&self, flat: usize) -> usize {
        let idx = self.multi_index(flat);
        let mut out = 0usize;
        for axis in 0..self.dim {
            out = out * self.n + (self.n - idx[axis]) % self.n;
        }
        out
    }

    /// Largest `|k|^2` represented on the grid.
    pub fn max_k2(&self) -> f64 {
        let k = PI / self.dx();
        self.dim as f64 * k * k
    }

    /// Minimal-image wrap of a coordinate into `[-L/2, L/2)`.
    #[inline]
    pub fn wrap_signed(&self, x: f64) -> f64 {
        let l = self.length;
        (x + 0.5 * l).rem_euclid(l) - 0.5 * l
    }

    /// Checks the resolution rules `L >= 8 M` and `dx <= l/4`.
    pub fn check_resolves(&self, spec: &CovarianceSpec) -> Result<()> {
        if self.dim != spec.dimension {
            return Err(Error::Resolution(format!(
                "grid dimension {} does not match spec dimension {}",
                self.dim, spec.dimension
            )));
        }
        let tol = 1e-12 * self.length;
        if self.length + tol < 8.0 * spec.support_radius {
            return Err(Error::Resolution(format!(
                "box length {} is below 8 x support radius {}",
                self.length, spec.support_radius
            )));
        }
        if self.dx() > 0.25 * spec.corr_length + tol {
            return Err(Error::Resolution(format!(
                "dx = {} does not resolve correlation length {} (need dx <= l/4)",
                self.dx(),
                spec.corr_length
            )));
        }
        Ok(())
    }
}
