//! Gaussian velocity increments on a periodic grid.
//!
//! An increment is drawn directly in Fourier space: for every wavevector with
//! non-negligible spectral weight we draw `a_k = C_k xi` with
//! `C_k C_k^T = S_k dt`, set `a_{-k} = conj(a_k)`, and invert. The retained
//! coefficients double as an exact trigonometric interpolant.

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::covariance::{spectral_density, CovarianceSpec};
use crate::error::{Error, Result};
use crate::grid::{Grid, MAX_DIM};
use crate::rng::{Purpose, RngStream};
use crate::spectral::{self, NdFft};

/// Modes whose spectral variance falls below this fraction of the peak are
/// dropped; the discarded variance is far below any statistical resolution.
const MODE_CUTOFF: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    /// Evaluate the retained Fourier series exactly.
    Fourier,
    /// Tensor-product 4-point Lagrange interpolation of the node values.
    Cubic,
}

impl Interpolation {
    /// Fourier in one dimension, cubic above.
    pub fn default_for(dim: usize) -> Self {
        if dim == 1 {
            Interpolation::Fourier
        } else {
            Interpolation::Cubic
        }
    }
}

/// Canonical half of a set of Fourier modes; each entry stands for itself and
/// its conjugate partner.
#[derive(Debug, Clone)]
pub struct ModeTable {
    pub dim: usize,
    /// Signed integer wave indices.
    pub index: Vec<[i32; MAX_DIM]>,
    /// Flat FFT index of each mode and of its partner `-k`.
    pub flat: Vec<usize>,
    pub partner: Vec<usize>,
    /// 1 for self-conjugate modes, 2 otherwise.
    pub weight: Vec<f64>,
    pub max_index: [usize; MAX_DIM],
}

impl ModeTable {
    fn from_flats(grid: &Grid, flats: Vec<usize>) -> Self {
        let mut index = Vec::with_capacity(flats.len());
        let mut partner = Vec::with_capacity(flats.len());
        let mut weight = Vec::with_capacity(flats.len());
        let mut max_index = [0usize; MAX_DIM];
        for &f in &flats {
            let mi = grid.multi_index(f);
            let mut m = [0i32; MAX_DIM];
            for a in 0..grid.dim {
                m[a] = grid.signed_index(mi[a]) as i32;
                max_index[a] = max_index[a].max(m[a].unsigned_abs() as usize);
            }
            let p = grid.negated(f);
            index.push(m);
            partner.push(p);
            weight.push(if p == f { 1.0 } else { 2.0 });
        }
        Self { dim: grid.dim, index, flat: flats, partner, weight, max_index }
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }
}

/// Fourier coefficients `a_k` (per component) on a canonical mode table, with
/// `V(x) = sum_k w_k Re(a_k e^{i k x})`.
#[derive(Debug, Clone)]
pub struct SpectralRep {
    pub modes: Arc<ModeTable>,
    /// `coeffs[mode * components + c]`.
    pub coeffs: Vec<Complex64>,
    pub components: usize,
}

impl SpectralRep {
    /// Exact spectral representation of real node values.
    pub fn from_values(grid: &Grid, components: &[Vec<f64>]) -> Self {
        let mut fft = NdFft::new(*grid);
        let n = grid.len();
        let scale = 1.0 / n as f64;
        let hats: Vec<Vec<Complex64>> = components
            .iter()
            .map(|c| fft.forward_real(c).into_iter().map(|v| v * scale).collect())
            .collect();
        let peak = hats
            .iter()
            .flat_map(|h| h.iter().map(|v| v.norm()))
            .fold(0.0f64, f64::max);
        let flats: Vec<usize> = (0..n)
            .filter(|&f| f <= grid.negated(f))
            .filter(|&f| hats.iter().any(|h| h[f].norm() > 1e-14 * peak))
            .collect();
        let modes = Arc::new(ModeTable::from_flats(grid, flats));
        let mut coeffs = Vec::with_capacity(modes.len() * components.len());
        for &f in &modes.flat {
            for h in &hats {
                coeffs.push(h[f]);
            }
        }
        Self { modes, coeffs, components: components.len() }
    }
}

/// One time step's velocity increment `V(t + dt, .) - V(t, .)` on the grid.
#[derive(Debug, Clone)]
pub struct FieldIncrement {
    pub grid: Grid,
    pub dt: f64,
    /// Replica and time slot the increment was drawn for, if any.
    pub replica: Option<u64>,
    pub slot: Option<i64>,
    components: Vec<Vec<f64>>,
    spectrum: OnceLock<SpectralRep>,
}

impl FieldIncrement {
    /// Increment with given node values (test injection and tooling).
    pub fn from_values(grid: Grid, dt: f64, components: Vec<Vec<f64>>) -> Result<Self> {
        if components.len() != grid.dim || components.iter().any(|c| c.len() != grid.len()) {
            return Err(Error::Config(format!(
                "expected {} components of {} values",
                grid.dim,
                grid.len()
            )));
        }
        if components.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("increment values".into()));
        }
        Ok(Self { grid, dt, replica: None, slot: None, components, spectrum: OnceLock::new() })
    }

    pub fn zero(grid: Grid, dt: f64) -> Self {
        Self {
            grid,
            dt,
            replica: None,
            slot: None,
            components: vec![vec![0.0; grid.len()]; grid.dim],
            spectrum: OnceLock::new(),
        }
    }

    pub fn with_tag(mut self, replica: u64, slot: i64) -> Self {
        self.replica = Some(replica);
        self.slot = Some(slot);
        self
    }

    pub fn component(&self, axis: usize) -> &[f64] {
        &self.components[axis]
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    pub fn spectrum(&self) -> &SpectralRep {
        self.spectrum
            .get_or_init(|| SpectralRep::from_values(&self.grid, &self.components))
    }

    /// `a * x + b * y`, for increments sharing grid and mode table.
    pub fn combine(a: f64, x: &Self, b: f64, y: &Self, dt: f64) -> Self {
        assert_eq!(x.grid, y.grid);
        let components = x
            .components
            .iter()
            .zip(&y.components)
            .map(|(u, v)| u.iter().zip(v).map(|(p, q)| a * p + b * q).collect())
            .collect();
        let spectrum = OnceLock::new();
        if let (Some(sx), Some(sy)) = (x.spectrum.get(), y.spectrum.get()) {
            if Arc::ptr_eq(&sx.modes, &sy.modes) {
                let coeffs = sx.coeffs.iter().zip(&sy.coeffs).map(|(p, q)| p * a + q * b).collect();
                let _ = spectrum.set(SpectralRep {
                    modes: Arc::clone(&sx.modes),
                    coeffs,
                    components: sx.components,
                });
            }
        }
        Self { grid: x.grid, dt, replica: x.replica, slot: x.slot, components, spectrum }
    }

    /// Spectral divergence of the increment at the nodes.
    pub fn spectral_divergence(&self) -> Vec<f64> {
        let mut fft = NdFft::new(self.grid);
        spectral::divergence(&mut fft, &self.components)
    }

    /// Velocity increment at an arbitrary point.
    pub fn velocity_at(&self, x: &[f64], method: Interpolation, out: &mut [f64]) {
        match method {
            Interpolation::Fourier => fourier_eval(&self.grid, self.spectrum(), x, out),
            Interpolation::Cubic => cubic_eval(&self.grid, &self.components, x, out),
        }
    }
}

/// `interpolate_velocity` in functional form.
pub fn interpolate_velocity(inc: &FieldIncrement, x: &[f64], method: Interpolation) -> Vec<f64> {
    let mut out = vec![0.0; inc.grid.dim];
    inc.velocity_at(x, method, &mut out);
    out
}

/// Evaluates a spectral representation at `x`.
pub fn fourier_eval(grid: &Grid, rep: &SpectralRep, x: &[f64], out: &mut [f64]) {
    fourier_eval_with(grid, rep, x, out, &mut FourierScratch::default());
}

/// Reusable power tables for [`fourier_eval_with`].
#[derive(Debug, Clone, Default)]
pub struct FourierScratch {
    powers: [Vec<Complex64>; MAX_DIM],
}

/// [`fourier_eval`] without per-call allocation.
pub fn fourier_eval_with(grid: &Grid, rep: &SpectralRep, x: &[f64], out: &mut [f64], scratch: &mut FourierScratch) {
    let dim = grid.dim;
    let nc = rep.components;
    out[..nc].iter_mut().for_each(|v| *v = 0.0);
    let modes = &rep.modes;
    // powers[a][m] = e^{i 2 pi m x_a / L}
    for a in 0..dim {
        let base = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * x[a] / grid.length);
        let p = &mut scratch.powers[a];
        p.clear();
        let mut cur = Complex64::new(1.0, 0.0);
        for _ in 0..=modes.max_index[a] {
            p.push(cur);
            cur *= base;
        }
    }
    let powers = &scratch.powers;
    if dim == 1 && nc == 1 {
        // In 1D every stored index is non-negative, so no conjugation branch.
        let p = &powers[0];
        let mut acc = 0.0;
        for ((m, w), a) in modes.index.iter().zip(&modes.weight).zip(&rep.coeffs) {
            let e = p[m[0].unsigned_abs() as usize];
            acc += w * (a.re * e.re - a.im * e.im);
        }
        out[0] = acc;
        return;
    }
    for (t, m) in modes.index.iter().enumerate() {
        let mut phase = Complex64::new(modes.weight[t], 0.0);
        for a in 0..dim {
            let p = powers[a][m[a].unsigned_abs() as usize];
            phase *= if m[a] < 0 { p.conj() } else { p };
        }
        let c = &rep.coeffs[t * nc..(t + 1) * nc];
        for (o, a) in out.iter_mut().zip(c) {
            *o += a.re * phase.re - a.im * phase.im;
        }
    }
}

#[inline]
fn lagrange4(t: f64) -> [f64; 4] {
    [
        -t * (t - 1.0) * (t - 2.0) / 6.0,
        (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
        -(t + 1.0) * t * (t - 2.0) / 2.0,
        (t + 1.0) * t * (t - 1.0) / 6.0,
    ]
}

/// Tensor-product cubic interpolation of periodic node values at `x`.
pub fn cubic_eval(grid: &Grid, fields: &[Vec<f64>], x: &[f64], out: &mut [f64]) {
    let dim = grid.dim;
    let n = grid.n;
    let mut base = [0usize; MAX_DIM];
    let mut w = [[0.0; 4]; MAX_DIM];
    for a in 0..dim {
        let s = x[a].rem_euclid(grid.length) / grid.dx();
        let i0 = s.floor();
        let frac = s - i0;
        base[a] = (i0 as usize + n - 1) % n;
        w[a] = lagrange4(frac);
    }
    out[..fields.len()].iter_mut().for_each(|v| *v = 0.0);
    let combos = 4usize.pow(dim as u32);
    for c in 0..combos {
        let mut weight = 1.0;
        let mut flat = 0usize;
        let mut rem = c;
        for a in 0..dim {
            let o = rem % 4;
            rem /= 4;
            weight *= w[a][o];
            flat = flat * n + (base[a] + o) % n;
        }
        if weight == 0.0 {
            continue;
        }
        for (v, f) in out.iter_mut().zip(fields) {
            *v += weight * f[flat];
        }
    }
}

/// Draws increments for one `(spec, grid, dt)`.
#[derive(Debug, Clone)]
pub struct FieldSynthesizer {
    spec: CovarianceSpec,
    grid: Grid,
    dt: f64,
    modes: Arc<ModeTable>,
    /// Row-major `d x d` square root of `S_k dt` per mode.
    filters: Vec<f64>,
    fft: NdFft,
    buf: Vec<Complex64>,
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() == 1 {
        return DMatrix::from_element(1, 1, m[(0, 0)].max(0.0).sqrt());
    }
    let eig = SymmetricEigen::new(m.clone());
    // Round-off in a null eigenvalue would otherwise survive the square root
    // at relative size sqrt(eps).
    let top = eig.eigenvalues.amax();
    let sq = eig.eigenvalues.map(|v| if v > 1e-12 * top { v.sqrt() } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&sq) * eig.eigenvectors.transpose()
}

impl FieldSynthesizer {
    pub fn new(spec: &CovarianceSpec, grid: &Grid, dt: f64) -> Result<Self> {
        spec.validate()?;
        grid.check_resolves(spec)?;
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Config(format!("time step must be positive, got {dt}")));
        }
        let d = grid.dim;
        let vol = grid.volume();
        let mut entries = Vec::new();
        let mut peak = 0.0f64;
        for flat in 0..grid.len() {
            if flat > grid.negated(flat) {
                continue;
            }
            let k = grid.wavevector(flat);
            let s = spectral_density(spec, &k[..d])? * (dt / vol);
            let tr = s.trace();
            peak = peak.max(tr);
            entries.push((flat, s, tr));
        }
        let mut flats = Vec::new();
        let mut filters = Vec::new();
        for (flat, s, tr) in entries {
            if peak > 0.0 && tr > MODE_CUTOFF * peak {
                flats.push(flat);
                let c = psd_sqrt(&s);
                for i in 0..d {
                    for j in 0..d {
                        filters.push(c[(i, j)]);
                    }
                }
            }
        }
        let modes = Arc::new(ModeTable::from_flats(grid, flats));
        Ok(Self {
            spec: *spec,
            grid: *grid,
            dt,
            modes,
            filters,
            fft: NdFft::new(*grid),
            buf: vec![Complex64::default(); grid.len()],
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn spec(&self) -> &CovarianceSpec {
        &self.spec
    }

    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    /// Draws one increment from `rng`.
    pub fn draw<R: Rng + ?Sized>(&mut self, rng: &mut R) -> FieldIncrement {
        let d = self.grid.dim;
        let nm = self.modes.len();
        let mut coeffs = vec![Complex64::default(); nm * d];
        let mut xi_re = [0.0; MAX_DIM];
        let mut xi_im = [0.0; MAX_DIM];
        let h = std::f64::consts::FRAC_1_SQRT_2;
        for t in 0..nm {
            let selfconj = self.modes.weight[t] == 1.0;
            for j in 0..d {
                if selfconj {
                    xi_re[j] = rng.sample(StandardNormal);
                    xi_im[j] = 0.0;
                } else {
                    xi_re[j] = h * rng.sample::<f64, _>(StandardNormal);
                    xi_im[j] = h * rng.sample::<f64, _>(StandardNormal);
                }
            }
            let c = &self.filters[t * d * d..(t + 1) * d * d];
            for i in 0..d {
                let mut re = 0.0;
                let mut im = 0.0;
                for j in 0..d {
                    re += c[i * d + j] * xi_re[j];
                    im += c[i * d + j] * xi_im[j];
                }
                coeffs[t * d + i] = Complex64::new(re, im);
            }
        }
        let components = self.invert(&coeffs);
        let spectrum = OnceLock::new();
        let _ = spectrum.set(SpectralRep { modes: Arc::clone(&self.modes), coeffs, components: d });
        FieldIncrement { grid: self.grid, dt: self.dt, replica: None, slot: None, components, spectrum }
    }

    /// Node values from canonical coefficients; components are paired into
    /// the real and imaginary parts of one inverse transform.
    fn invert(&mut self, coeffs: &[Complex64]) -> Vec<Vec<f64>> {
        let d = self.grid.dim;
        let n = self.grid.len();
        let mut out = vec![Vec::new(); d];
        if self.modes.is_empty() {
            return vec![vec![0.0; n]; d];
        }
        let i_unit = Complex64::new(0.0, 1.0);
        let mut c = 0;
        while c < d {
            let paired = c + 1 < d;
            self.buf.iter_mut().for_each(|v| *v = Complex64::default());
            for t in 0..self.modes.len() {
                let f = self.modes.flat[t];
                let p = self.modes.partner[t];
                let a = coeffs[t * d + c];
                let b = if paired { coeffs[t * d + c + 1] } else { Complex64::default() };
                if f == p {
                    self.buf[f] = a + i_unit * b;
                } else {
                    self.buf[f] = a + i_unit * b;
                    self.buf[p] = a.conj() + i_unit * b.conj();
                }
            }
            self.fft.inverse(&mut self.buf);
            out[c] = self.buf.iter().map(|v| v.re).collect();
            if paired {
                out[c + 1] = self.buf.iter().map(|v| v.im).collect();
            }
            c += 2;
        }
        out
    }
}

/// One-shot draw of the increment for `slot` of `stream`.
pub fn synthesize_increment(
    spec: &CovarianceSpec,
    grid: &Grid,
    dt: f64,
    stream: &RngStream,
    slot: i64,
) -> Result<FieldIncrement> {
    let mut synth = FieldSynthesizer::new(spec, grid, dt)?;
    let mut rng = stream.at(0, slot);
    Ok(synth.draw(&mut rng).with_tag(stream.replica, slot))
}

/// The velocity environment of one replica: increment `slot` covers
/// `[slot dt, (slot + 1) dt)` and is a pure function of
/// `(master_seed, replica, slot)`.
#[derive(Debug, Clone)]
pub struct Environment {
    synth: FieldSynthesizer,
    stream: RngStream,
}

impl Environment {
    pub fn new(spec: &CovarianceSpec, grid: &Grid, dt: f64, master_seed: u64, replica: u64) -> Result<Self> {
        Ok(Self {
            synth: FieldSynthesizer::new(spec, grid, dt)?,
            stream: RngStream::new(master_seed, replica, Purpose::Environment),
        })
    }

    pub fn replica(&self) -> u64 {
        self.stream.replica
    }

    pub fn master_seed(&self) -> u64 {
        self.stream.master_seed
    }

    pub fn dt(&self) -> f64 {
        self.synth.dt
    }

    pub fn grid(&self) -> &Grid {
        &self.synth.grid
    }

    pub fn spec(&self) -> &CovarianceSpec {
        &self.synth.spec
    }

    /// Slot containing the start time `t`.
    pub fn slot_of(&self, t: f64) -> i64 {
        (t / self.synth.dt).round() as i64
    }

    pub fn increment(&mut self, slot: i64) -> FieldIncrement {
        let mut rng = self.stream.at(0, slot);
        self.synth.draw(&mut rng).with_tag(self.stream.replica, slot)
    }

    /// Splits the increment of `slot` into two independent half-step
    /// increments summing to it exactly (Brownian bridge in each mode).
    pub fn half_increments(&mut self, slot: i64) -> (FieldIncrement, FieldIncrement) {
        let full = self.increment(slot);
        let mut rng = self.stream.with_purpose(Purpose::Refinement).at(0, slot);
        let y = self.synth.draw(&mut rng);
        let half = 0.5 * self.synth.dt;
        let a = FieldIncrement::combine(0.5, &full, 0.5, &y, half);
        let b = FieldIncrement::combine(0.5, &full, -0.5, &y, half);
        (a, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::Family;
    use std::f64::consts::PI;

    #[test]
    fn zero_amplitude_gives_zero_field() {
        let spec = CovarianceSpec { sigma2: 0.0, ..CovarianceSpec::default_scalar() };
        let grid = Grid::for_spec(&spec).unwrap();
        let inc = synthesize_increment(&spec, &grid, 0.01, &RngStream::new(1, 0, Purpose::Environment), 0).unwrap();
        assert!(inc.component(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn resolution_violation_is_rejected() {
        let spec = CovarianceSpec::default_scalar();
        let coarse = Grid::new(1, 64, 32.0).unwrap();
        assert!(matches!(FieldSynthesizer::new(&spec, &coarse, 0.01), Err(Error::Resolution(_))));
        let small = Grid::new(1, 128, 16.0).unwrap();
        assert!(FieldSynthesizer::new(&spec, &small, 0.01).is_err());
    }

    #[test]
    fn interpolation_is_exact_at_nodes() {
        let spec = CovarianceSpec::new(2, 1.0, Family::Potential, 0.5, 1.0).unwrap();
        let grid = Grid::new(2, 128, 32.0).unwrap();
        let inc = synthesize_increment(&spec, &grid, 0.01, &RngStream::new(3, 1, Purpose::Environment), 4).unwrap();
        for flat in [0usize, 17, 5000, 16383] {
            let idx = grid.multi_index(flat);
            let x = [idx[0] as f64 * grid.dx(), idx[1] as f64 * grid.dx()];
            for method in [Interpolation::Fourier, Interpolation::Cubic] {
                let v = interpolate_velocity(&inc, &x, method);
                for a in 0..2 {
                    assert!((v[a] - inc.component(a)[flat]).abs() < 1e-12, "{method:?}");
                }
            }
        }
    }

    #[test]
    fn reproduces_constants() {
        let grid = Grid::new(2, 16, 4.0).unwrap();
        let inc = FieldIncrement::from_values(grid, 0.1, vec![vec![0.3; 256], vec![-1.25; 256]]).unwrap();
        for x in [[0.123, 3.9], [-7.7, 0.5]] {
            for method in [Interpolation::Fourier, Interpolation::Cubic] {
                let v = interpolate_velocity(&inc, &x, method);
                assert!((v[0] - 0.3).abs() < 1e-13 && (v[1] + 1.25).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn single_mode_mid_cell() {
        let grid = Grid::new(1, 64, 2.0 * PI).unwrap();
        let f = |x: f64| (3.0 * x + 0.4).sin();
        let vals: Vec<f64> = (0..64).map(|i| f(i as f64 * grid.dx())).collect();
        let inc = FieldIncrement::from_values(grid, 1.0, vec![vals]).unwrap();
        for i in 0..64 {
            let x = (i as f64 + 0.5) * grid.dx();
            let exact = f(x);
            let four = interpolate_velocity(&inc, &[x], Interpolation::Fourier)[0];
            let cub = interpolate_velocity(&inc, &[x], Interpolation::Cubic)[0];
            assert!((four - exact).abs() < 1e-12);
            assert!((cub - exact).abs() <= 1e-3);
        }
    }

    #[test]
    fn incompressible_draws_are_divergence_free() {
        let spec = CovarianceSpec::new(2, 1.0, Family::Incompressible, 0.5, 1.0).unwrap();
        let grid = Grid::new(2, 128, 32.0).unwrap();
        let mut env = Environment::new(&spec, &grid, 0.005, 11, 0).unwrap();
        for slot in 0..3 {
            let inc = env.increment(slot);
            let scale = inc.components().iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
            let div = inc.spectral_divergence();
            let worst = div.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(worst <= 1e-12 * scale / grid.dx(), "{worst} vs {scale}");
        }
    }

    #[test]
    fn half_increments_sum_to_full() {
        let spec = CovarianceSpec::default_scalar();
        let grid = Grid::for_spec(&spec).unwrap();
        let mut env = Environment::new(&spec, &grid, 0.01, 5, 2).unwrap();
        let full = env.increment(7);
        let (a, b) = env.half_increments(7);
        for i in 0..grid.len() {
            assert!((a.component(0)[i] + b.component(0)[i] - full.component(0)[i]).abs() < 1e-15);
        }
        assert_eq!(a.dt, 0.005);
        let x = [3.21];
        let s = interpolate_velocity(&a, &x, Interpolation::Fourier)[0]
            + interpolate_velocity(&b, &x, Interpolation::Fourier)[0];
        assert!((s - interpolate_velocity(&full, &x, Interpolation::Fourier)[0]).abs() < 1e-14);
    }

    #[test]
    fn environment_slots_are_reproducible() {
        let spec = CovarianceSpec::default_scalar();
        let grid = Grid::for_spec(&spec).unwrap();
        let mut e1 = Environment::new(&spec, &grid, 0.01, 5, 2).unwrap();
        let mut e2 = Environment::new(&spec, &grid, 0.01, 5, 2).unwrap();
        let _ = e2.increment(3);
        assert_eq!(e1.increment(9).component(0), e2.increment(9).component(0));
        let mut other = Environment::new(&spec, &grid, 0.01, 5, 3).unwrap();
        assert_ne!(e1.increment(9).component(0), other.increment(9).component(0));
    }
}
