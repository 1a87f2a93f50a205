//! Velocity covariance kernels and the matrices derived from them.
//!
//! All three families are generated by the Gaussian potential
//! `Phi(z) = phi0 * exp(-|z|^2 / (2 l^2))`:
//!
//! * isotropic-scalar: `R = Phi I` with `phi0 = sigma2`;
//! * potential: `R = -Hess Phi` with `phi0 = sigma2 l^2`;
//! * incompressible: `R = -lap(Phi) I + Hess Phi` with `phi0 = sigma2 l^2 / (d - 1)`.
//!
//! Each choice gives `tr R(0) = d sigma2` and a positive semidefinite spectral
//! density, and every derivative of `R` reduces to derivatives of `Phi`,
//! which are available in closed form up to fourth order.

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::spectral::{derivative_symbol, NdFft};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    IsotropicScalar,
    Incompressible,
    Potential,
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Family::IsotropicScalar => "isotropic-scalar",
            Family::Incompressible => "incompressible",
            Family::Potential => "potential",
        })
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "isotropic-scalar" => Ok(Family::IsotropicScalar),
            "incompressible" => Ok(Family::Incompressible),
            "potential" => Ok(Family::Potential),
            other => Err(Error::Config(format!("unknown covariance family `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovarianceSpec {
    pub dimension: usize,
    pub nu: f64,
    pub family: Family,
    pub sigma2: f64,
    pub corr_length: f64,
    pub support_radius: f64,
}

/// A `d x d` covariance matrix value.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixKernel {
    pub entries: DMatrix<f64>,
}

impl MatrixKernel {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }
}

impl CovarianceSpec {
    /// Spec with support radius `4 l`.
    pub fn new(dimension: usize, nu: f64, family: Family, sigma2: f64, corr_length: f64) -> Result<Self> {
        let spec = Self {
            dimension,
            nu,
            family,
            sigma2,
            corr_length,
            support_radius: 4.0 * corr_length,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The default scalar kernel: `d = 1, nu = 1, sigma2 = 0.5, l = 1`.
    pub fn default_scalar() -> Self {
        Self::new(1, 1.0, Family::IsotropicScalar, 0.5, 1.0).expect("default spec is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.dimension == 0 {
            return bad("dimension must be at least 1".into());
        }
        if !(self.nu > 0.0) || !self.nu.is_finite() {
            return bad(format!("nu must be positive, got {}", self.nu));
        }
        if !(self.sigma2 >= 0.0) || !self.sigma2.is_finite() {
            return bad(format!("sigma2 must be nonnegative, got {}", self.sigma2));
        }
        if !(self.corr_length > 0.0) || !self.corr_length.is_finite() {
            return bad(format!("corr_length must be positive, got {}", self.corr_length));
        }
        if !(self.support_radius >= 4.0 * self.corr_length * (1.0 - 1e-12)) {
            return bad(format!(
                "support_radius {} is below 4 x corr_length {}",
                self.support_radius, self.corr_length
            ));
        }
        if self.dimension == 1 && self.family != Family::IsotropicScalar {
            return bad(format!("family {} is not available in d = 1", self.family));
        }
        Ok(())
    }

    fn phi0(&self) -> f64 {
        let l2 = self.corr_length * self.corr_length;
        match self.family {
            Family::IsotropicScalar => self.sigma2,
            Family::Potential => self.sigma2 * l2,
            Family::Incompressible => self.sigma2 * l2 / (self.dimension as f64 - 1.0),
        }
    }

    /// Largest eigenvalue of `nu I + R(0)`; every family has `R(0) = sigma2 I`.
    pub fn lambda_max(&self) -> f64 {
        self.nu + self.sigma2
    }
}

/// Derivatives of the Gaussian potential at a fixed point.
struct Potential<'a> {
    z: &'a [f64],
    s: f64,
    phi: f64,
}

#[inline]
fn delta(i: usize, j: usize) -> f64 {
    if i == j {
        1.0
    } else {
        0.0
    }
}

impl<'a> Potential<'a> {
    fn new(spec: &CovarianceSpec, z: &'a [f64]) -> Self {
        let s = 1.0 / (spec.corr_length * spec.corr_length);
        let r2: f64 = z.iter().map(|v| v * v).sum();
        Self { z, s, phi: spec.phi0() * (-0.5 * s * r2).exp() }
    }

    fn d1(&self, i: usize) -> f64 {
        -self.s * self.z[i] * self.phi
    }

    fn d2(&self, i: usize, j: usize) -> f64 {
        let (s, z) = (self.s, self.z);
        (s * s * z[i] * z[j] - s * delta(i, j)) * self.phi
    }

    fn d3(&self, i: usize, j: usize, k: usize) -> f64 {
        let (s, z) = (self.s, self.z);
        let lin = delta(i, j) * z[k] + delta(i, k) * z[j] + delta(j, k) * z[i];
        (-s * s * s * z[i] * z[j] * z[k] + s * s * lin) * self.phi
    }

    fn d4(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        let (s, z) = (self.s, self.z);
        let quad = delta(i, j) * z[k] * z[l]
            + delta(i, k) * z[j] * z[l]
            + delta(i, l) * z[j] * z[k]
            + delta(j, k) * z[i] * z[l]
            + delta(j, l) * z[i] * z[k]
            + delta(k, l) * z[i] * z[j];
        let cst = delta(i, j) * delta(k, l) + delta(i, k) * delta(j, l) + delta(i, l) * delta(j, k);
        (s.powi(4) * z[i] * z[j] * z[k] * z[l] - s.powi(3) * quad + s * s * cst) * self.phi
    }

    /// Derivative of `Phi` along the index list `idx` (length 0 to 4).
    fn deriv(&self, idx: &[usize]) -> f64 {
        match *idx {
            [] => self.phi,
            [i] => self.d1(i),
            [i, j] => self.d2(i, j),
            [i, j, k] => self.d3(i, j, k),
            [i, j, k, l] => self.d4(i, j, k, l),
            _ => unreachable!("potential derivatives are only needed up to order 4"),
        }
    }

    /// Derivative of `R_ij` along `extra` (length 0 to 2).
    fn r_entry(&self, family: Family, i: usize, j: usize, extra: &[usize]) -> f64 {
        let mut idx = [0usize; 4];
        let with = |idx: &mut [usize; 4], head: &[usize]| -> usize {
            idx[..head.len()].copy_from_slice(head);
            idx[head.len()..head.len() + extra.len()].copy_from_slice(extra);
            head.len() + extra.len()
        };
        match family {
            Family::IsotropicScalar => {
                if i == j {
                    self.deriv(extra)
                } else {
                    0.0
                }
            }
            Family::Potential => {
                let n = with(&mut idx, &[i, j]);
                -self.deriv(&idx[..n])
            }
            Family::Incompressible => {
                let n = with(&mut idx, &[i, j]);
                let mut v = self.deriv(&idx[..n]);
                if i == j {
                    for m in 0..self.z.len() {
                        let n = with(&mut idx, &[m, m]);
                        v -= self.deriv(&idx[..n]);
                    }
                }
                v
            }
        }
    }
}

fn check_point(spec: &CovarianceSpec, z: &[f64]) {
    assert_eq!(z.len(), spec.dimension, "point dimension does not match spec");
}

/// `R(z)`.
pub fn eval_r(spec: &CovarianceSpec, z: &[f64]) -> Result<MatrixKernel> {
    spec.validate()?;
    Ok(MatrixKernel { entries: r_derivative(spec, z, &[]) })
}

/// `d^|extra| R / dz_extra` at `z`, for up to two derivative indices.
pub fn r_derivative(spec: &CovarianceSpec, z: &[f64], extra: &[usize]) -> DMatrix<f64> {
    check_point(spec, z);
    assert!(extra.len() <= 2);
    let d = spec.dimension;
    let p = Potential::new(spec, z);
    DMatrix::from_fn(d, d, |i, j| p.r_entry(spec.family, i, j, extra))
}

/// `(div R)_j = sum_i dR_ij/dz_i`.
pub fn div_r(spec: &CovarianceSpec, z: &[f64]) -> Result<DVector<f64>> {
    spec.validate()?;
    check_point(spec, z);
    let d = spec.dimension;
    if spec.family == Family::Incompressible {
        return Ok(DVector::zeros(d));
    }
    let p = Potential::new(spec, z);
    Ok(DVector::from_fn(d, |j, _| {
        (0..d).map(|i| p.r_entry(spec.family, i, j, &[i])).sum()
    }))
}

/// `nu I + R(0)`.
pub fn effective_diffusivity(spec: &CovarianceSpec) -> Result<DMatrix<f64>> {
    let zero = vec![0.0; spec.dimension];
    let r0 = eval_r(spec, &zero)?.entries;
    Ok(DMatrix::identity(spec.dimension, spec.dimension) * spec.nu + r0)
}

/// The `2d x 2d` generator matrix of the pair `(W, Z)` at separation `z`.
pub fn a_matrix(spec: &CovarianceSpec, z: &[f64]) -> Result<DMatrix<f64>> {
    let d = spec.dimension;
    let zero = vec![0.0; d];
    let r0 = eval_r(spec, &zero)?.entries;
    let r = eval_r(spec, z)?.entries;
    let rt = r.transpose();
    let id = DMatrix::<f64>::identity(d, d);
    let mut a = DMatrix::zeros(2 * d, 2 * d);
    let a11 = (&id * spec.nu + &r0) * 0.25 + (&r + &rt) * 0.125;
    let a12 = (&rt - &r) * 0.25;
    let a21 = (&r - &rt) * 0.25;
    let a22 = &id * spec.nu + &r0 - (&r + &rt) * 0.5;
    a.view_mut((0, 0), (d, d)).copy_from(&a11);
    a.view_mut((0, d), (d, d)).copy_from(&a12);
    a.view_mut((d, 0), (d, d)).copy_from(&a21);
    a.view_mut((d, d), (d, d)).copy_from(&a22);
    Ok(a)
}

/// Separation block `A22(z) = nu I + R(0) - (R(z) + R(z)^T)/2`.
pub fn a22_matrix(spec: &CovarianceSpec, z: &[f64]) -> Result<DMatrix<f64>> {
    let d = spec.dimension;
    let zero = vec![0.0; d];
    let r0 = eval_r(spec, &zero)?.entries;
    let r = eval_r(spec, z)?.entries;
    Ok(DMatrix::identity(d, d) * spec.nu + r0 - (&r + r.transpose()) * 0.5)
}

/// Derivative of `A22` along `extra` (one or two indices).
pub fn a22_derivative(spec: &CovarianceSpec, z: &[f64], extra: &[usize]) -> DMatrix<f64> {
    assert!(!extra.is_empty());
    let dr = r_derivative(spec, z, extra);
    (&dr + dr.transpose()) * -0.5
}

/// `chi(z) = (nu + f(0)) / (nu + f(0) - f(z))` for the scalar family.
pub fn chi_closed_form(spec: &CovarianceSpec, z: &[f64]) -> Result<f64> {
    spec.validate()?;
    if spec.family != Family::IsotropicScalar {
        return Err(Error::InvalidSpec(format!(
            "no closed-form invariant density for family {}; use the numeric solver",
            spec.family
        )));
    }
    check_point(spec, z);
    let f0 = spec.sigma2;
    let fz = Potential::new(spec, z).phi;
    Ok((spec.nu + f0) / (spec.nu + f0 - fz))
}

/// Continuum Fourier transform `int R(z) e^{-i k z} dz`.
///
/// On a periodic box of side `L` the field covariance is reproduced by
/// `sum_k spectral_density(k) e^{i k z} / L^d`.
pub fn spectral_density(spec: &CovarianceSpec, k: &[f64]) -> Result<DMatrix<f64>> {
    spec.validate()?;
    check_point(spec, k);
    let d = spec.dimension;
    let l2 = spec.corr_length * spec.corr_length;
    let k2: f64 = k.iter().map(|v| v * v).sum();
    let phi_hat = spec.phi0() * (2.0 * PI * l2).powf(0.5 * d as f64) * (-0.5 * l2 * k2).exp();
    Ok(DMatrix::from_fn(d, d, |i, j| match spec.family {
        Family::IsotropicScalar => delta(i, j) * phi_hat,
        Family::Potential => k[i] * k[j] * phi_hat,
        Family::Incompressible => (k2 * delta(i, j) - k[i] * k[j]) * phi_hat,
    }))
}

/// `R` sampled on the grid by discrete Fourier inversion of the spectral
/// density; entry `[i * d + j][node]`.
pub fn r_on_grid(spec: &CovarianceSpec, grid: &Grid) -> Result<Vec<Vec<f64>>> {
    Ok(spectral_fields(spec, grid, None)?.0)
}

/// Spectral divergence `(div R)_j` on the grid, from the same inversion as
/// [`r_on_grid`]; component `j` per entry.
pub fn div_r_on_grid(spec: &CovarianceSpec, grid: &Grid) -> Result<Vec<Vec<f64>>> {
    let d = spec.dimension;
    let mut out = Vec::with_capacity(d);
    for j in 0..d {
        out.push(spectral_fields(spec, grid, Some(j))?.1);
    }
    Ok(out)
}

fn spectral_fields(
    spec: &CovarianceSpec,
    grid: &Grid,
    div_column: Option<usize>,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    grid.check_resolves(spec)?;
    let d = spec.dimension;
    let n = grid.len();
    let mut fft = NdFft::new(*grid);
    let mut hats = vec![vec![Complex64::default(); n]; d * d];
    let mut div = vec![Complex64::default(); n];
    for flat in 0..n {
        let kv = grid.wavevector(flat);
        let s = spectral_density(spec, &kv[..d])?;
        for i in 0..d {
            for j in 0..d {
                hats[i * d + j][flat] = Complex64::new(s[(i, j)], 0.0);
            }
        }
        if let Some(j) = div_column {
            for i in 0..d {
                div[flat] += derivative_symbol(grid, flat, i) * s[(i, j)];
            }
        }
    }
    let scale = 1.0 / grid.volume();
    let mut fields = Vec::with_capacity(d * d);
    if div_column.is_none() {
        for mut h in hats {
            fft.inverse(&mut h);
            fields.push(h.iter().map(|c| c.re * scale).collect());
        }
    }
    fft.inverse(&mut div);
    Ok((fields, div.iter().map(|c| c.re * scale).collect()))
}
