//! Uniform discretization of the torus T³ = (ℝ/2πℤ)³ with spectral calculus:
//! forward/inverse Fourier transforms, multiplier application, Sobolev norms
//! and quadrature.
//!
//! Conventions: f(x) = Σ_k c_k e^{ik·x} with integer wavevectors k, component
//! range {-n/2, …, n/2-1}; quadrature is the plain product rule with cell
//! volume (2π/n)³; Parseval reads ∫|f|² = (2π)³ Σ|c_k|².

use crate::scalar::{cast, Cx, Real};
use crate::{Error, Result};
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Cubic grid on the 2π-torus with cached FFT plans.
pub struct TorusGrid<R: Real> {
    n: usize,
    fft_fwd: Arc<dyn Fft<R>>,
    fft_inv: Arc<dyn Fft<R>>,
    k_sq: Vec<R>,
}

impl<R: Real> TorusGrid<R> {
    pub fn new(n_per_dim: usize) -> Result<Arc<Self>> {
        if n_per_dim < 8 || n_per_dim % 2 != 0 {
            return Err(Error::InvalidGrid(format!(
                "n_per_dim must be even and >= 8, got {n_per_dim}"
            )));
        }
        let mut planner = FftPlanner::new();
        let fft_fwd = planner.plan_fft_forward(n_per_dim);
        let fft_inv = planner.plan_fft_inverse(n_per_dim);
        let mut k_sq = vec![R::zero(); n_per_dim * n_per_dim * n_per_dim];
        let grid = Self {
            n: n_per_dim,
            fft_fwd,
            fft_inv,
            k_sq: Vec::new(),
        };
        for idx in 0..k_sq.len() {
            let k = grid.wavevector(idx);
            k_sq[idx] = cast::<R>((k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64);
        }
        Ok(Arc::new(Self { k_sq, ..grid }))
    }

    pub fn n_per_dim(&self) -> usize {
        self.n
    }

    /// Number of sites / spectral bins, n³.
    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Grid spacing 2π/n.
    pub fn spacing(&self) -> R {
        cast::<R>(2.0) * R::PI() / cast_usize_r::<R>(self.n)
    }

    /// Quadrature weight per site, (2π/n)³.
    pub fn cell_volume(&self) -> R {
        let h = self.spacing();
        h * h * h
    }

    /// Total volume (2π)³.
    pub fn volume(&self) -> R {
        let two_pi = cast::<R>(2.0) * R::PI();
        two_pi * two_pi * two_pi
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    /// Site coordinates in [0, 2π)³.
    pub fn site(&self, idx: usize) -> [R; 3] {
        let n = self.n;
        let h = self.spacing();
        let k = idx % n;
        let j = (idx / n) % n;
        let i = idx / (n * n);
        [
            h * cast_usize_r::<R>(i),
            h * cast_usize_r::<R>(j),
            h * cast_usize_r::<R>(k),
        ]
    }

    /// Integer wavevector of a spectral bin. Components lie in
    /// {-n/2, …, n/2-1}; ±n/2 alias to the same grid mode, so the set is
    /// closed under negation for everything below the boundary bin.
    pub fn wavevector(&self, idx: usize) -> [i32; 3] {
        let n = self.n;
        let half = (n / 2) as i32;
        let unfold = |b: usize| -> i32 {
            let b = b as i32;
            if b < half {
                b
            } else {
                b - n as i32
            }
        };
        let kz = idx % n;
        let ky = (idx / n) % n;
        let kx = idx / (n * n);
        [unfold(kx), unfold(ky), unfold(kz)]
    }

    /// Spectral bin index of an integer wavevector (components folded mod n).
    pub fn bin(&self, k: [i32; 3]) -> usize {
        let n = self.n as i32;
        let fold = |c: i32| -> usize { (((c % n) + n) % n) as usize };
        (fold(k[0]) * self.n + fold(k[1])) * self.n + fold(k[2])
    }

    /// |k|² per spectral bin.
    #[inline]
    pub fn k_sq(&self, idx: usize) -> R {
        self.k_sq[idx]
    }

    /// In-place 3D FFT, unnormalized, axis by axis.
    fn fft3(&self, data: &mut [Cx<R>], inverse: bool) {
        let n = self.n;
        assert_eq!(data.len(), self.len());
        let plan = if inverse { &self.fft_inv } else { &self.fft_fwd };
        let mut scratch = vec![Cx::new(R::zero(), R::zero()); plan.get_inplace_scratch_len()];

        // z axis: contiguous lines
        plan.process_with_scratch(data, &mut scratch);

        // y axis: stride n
        let mut line = vec![Cx::new(R::zero(), R::zero()); n];
        for i in 0..n {
            for k in 0..n {
                let base = i * n * n + k;
                for j in 0..n {
                    line[j] = data[base + j * n];
                }
                plan.process_with_scratch(&mut line, &mut scratch);
                for j in 0..n {
                    data[base + j * n] = line[j];
                }
            }
        }

        // x axis: stride n²
        for j in 0..n {
            for k in 0..n {
                let base = j * n + k;
                for i in 0..n {
                    line[i] = data[base + i * n * n];
                }
                plan.process_with_scratch(&mut line, &mut scratch);
                for i in 0..n {
                    data[base + i * n * n] = line[i];
                }
            }
        }
    }

    /// Spectral coefficients c_k of grid values (forward transform).
    pub fn forward(&self, values: &[Cx<R>]) -> Result<Vec<Cx<R>>> {
        if values.len() != self.len() {
            return Err(Error::SizeMismatch(format!(
                "field has {} values, grid has {} sites",
                values.len(),
                self.len()
            )));
        }
        let mut data = values.to_vec();
        self.fft3(&mut data, false);
        let scale = R::one() / cast_usize_r::<R>(self.len());
        for c in data.iter_mut() {
            *c = c.scale(scale);
        }
        Ok(data)
    }

    /// Reconstruct grid values from spectral coefficients.
    pub fn inverse(&self, coeffs: &[Cx<R>]) -> Result<Vec<Cx<R>>> {
        if coeffs.len() != self.len() {
            return Err(Error::SizeMismatch(format!(
                "coefficient array has {} entries, grid has {} bins",
                coeffs.len(),
                self.len()
            )));
        }
        let mut data = coeffs.to_vec();
        self.fft3(&mut data, true);
        Ok(data)
    }
}

#[inline]
fn cast_usize_r<R: Real>(n: usize) -> R {
    R::from_usize(n).expect("usize fits scalar")
}

/// Complex scalar function sampled on a [`TorusGrid`].
#[derive(Clone)]
pub struct Field<R: Real> {
    grid: Arc<TorusGrid<R>>,
    values: Vec<Cx<R>>,
}

impl<R: Real> Field<R> {
    pub fn new(grid: Arc<TorusGrid<R>>, values: Vec<Cx<R>>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::SizeMismatch(format!(
                "{} values on a grid of {} sites",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Arc<TorusGrid<R>>) -> Self {
        let n = grid.len();
        Self {
            grid,
            values: vec![Cx::new(R::zero(), R::zero()); n],
        }
    }

    pub fn constant(grid: Arc<TorusGrid<R>>, value: Cx<R>) -> Self {
        let n = grid.len();
        Self {
            grid,
            values: vec![value; n],
        }
    }

    /// The unit-L² constant (2π)^{-3/2}.
    pub fn normalized_constant(grid: Arc<TorusGrid<R>>) -> Self {
        let amp = grid.volume().sqrt().recip();
        Self::constant(grid, Cx::new(amp, R::zero()))
    }

    /// e^{ik·x}, unit amplitude.
    pub fn plane_wave(grid: Arc<TorusGrid<R>>, k: [i32; 3]) -> Self {
        Self::from_fn(grid, |x| {
            let phase = cast::<R>(k[0] as f64) * x[0]
                + cast::<R>(k[1] as f64) * x[1]
                + cast::<R>(k[2] as f64) * x[2];
            Cx::new(phase.cos(), phase.sin())
        })
    }

    pub fn from_fn(grid: Arc<TorusGrid<R>>, mut f: impl FnMut([R; 3]) -> Cx<R>) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.site(i))).collect();
        Self { grid, values }
    }

    pub fn from_spectral(grid: Arc<TorusGrid<R>>, coeffs: &[Cx<R>]) -> Result<Self> {
        let values = grid.inverse(coeffs)?;
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &Arc<TorusGrid<R>> {
        &self.grid
    }

    pub fn values(&self) -> &[Cx<R>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Cx<R>] {
        &mut self.values
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || self.grid.n_per_dim() == other.grid.n_per_dim()
    }

    /// Spectral coefficients of this field.
    pub fn spectral(&self) -> Vec<Cx<R>> {
        self.grid.forward(&self.values).expect("sizes match by construction")
    }

    /// L² norm by quadrature.
    pub fn l2_norm(&self) -> R {
        let sum: R = self.values.iter().map(|v| v.norm_sqr()).sum();
        (sum * self.grid.cell_volume()).sqrt()
    }

    /// Quadrature inner product, conjugate-linear in `self`.
    pub fn inner(&self, other: &Self) -> Result<Cx<R>> {
        if !self.same_grid(other) {
            return Err(Error::GridMismatch);
        }
        let mut acc = Cx::new(R::zero(), R::zero());
        for (a, b) in self.values.iter().zip(&other.values) {
            acc += a.conj() * *b;
        }
        Ok(acc.scale(self.grid.cell_volume()))
    }

    pub fn linf_norm(&self) -> R {
        self.values
            .iter()
            .map(|v| v.norm())
            .fold(R::zero(), |a, b| if b > a { b } else { a })
    }

    pub fn normalize(&mut self) {
        let nrm = self.l2_norm();
        if nrm > R::zero() {
            let s = nrm.recip();
            for v in self.values.iter_mut() {
                *v = v.scale(s);
            }
        }
    }

    pub fn scale(&mut self, s: Cx<R>) {
        for v in self.values.iter_mut() {
            *v *= s;
        }
    }

    /// self += s · other
    pub fn axpy(&mut self, s: Cx<R>, other: &Self) -> Result<()> {
        if !self.same_grid(other) {
            return Err(Error::GridMismatch);
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += s * *b;
        }
        Ok(())
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        if !self.same_grid(other) {
            return Err(Error::GridMismatch);
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| *a - *b)
            .collect();
        Ok(Self {
            grid: self.grid.clone(),
            values,
        })
    }

    pub fn l2_distance(&self, other: &Self) -> Result<R> {
        Ok(self.sub(other)?.l2_norm())
    }

    /// Apply a spectral multiplier given as a function of the wavevector and
    /// its |k|².
    pub fn apply_spectral(&self, mult: impl Fn([i32; 3], R) -> Cx<R>) -> Self {
        let mut coeffs = self.spectral();
        for (idx, c) in coeffs.iter_mut().enumerate() {
            let k = self.grid.wavevector(idx);
            *c *= mult(k, self.grid.k_sq(idx));
        }
        Self {
            grid: self.grid.clone(),
            values: self.grid.inverse(&coeffs).expect("size"),
        }
    }

    /// Max |k| component present with coefficient above `tol` (diagnostic).
    pub fn spectral_radius(&self, tol: R) -> i32 {
        let coeffs = self.spectral();
        let mut r = 0;
        for (idx, c) in coeffs.iter().enumerate() {
            if c.norm() > tol {
                let k = self.grid.wavevector(idx);
                r = r.max(k[0].abs()).max(k[1].abs()).max(k[2].abs());
            }
        }
        r
    }
}

/// Sobolev multiplier (1 + |k|²)^s.
#[derive(Clone, Copy, Debug)]
pub struct SobolevWeight<R: Real> {
    pub exponent: R,
}

impl<R: Real> SobolevWeight<R> {
    pub fn new(exponent: R) -> Self {
        Self { exponent }
    }

    #[inline]
    pub fn multiplier(&self, k_sq: R) -> R {
        (R::one() + k_sq).powf(self.exponent)
    }
}

/// Scale spectral coefficients by (1+|k|²)^s.
pub fn apply_multiplier<R: Real>(f: &Field<R>, w: SobolevWeight<R>) -> Field<R> {
    f.apply_spectral(|_, ksq| Cx::new(w.multiplier(ksq), R::zero()))
}

/// H^s norm: ((2π)³ Σ_k (1+|k|²)^s |c_k|²)^{1/2}. s = 0 reproduces the L²
/// quadrature norm.
pub fn sobolev_norm<R: Real>(f: &Field<R>, s: R) -> R {
    let coeffs = f.spectral();
    let w = SobolevWeight::new(s);
    let grid = f.grid();
    let mut acc = R::zero();
    for (idx, c) in coeffs.iter().enumerate() {
        acc += w.multiplier(grid.k_sq(idx)) * c.norm_sqr();
    }
    (acc * grid.volume()).sqrt()
}

/// Periodic convolution (f*g)(x) = ∫_{T³} f(x−y) g(y) dy via spectral
/// product; agrees with the direct quadrature double sum to roundoff.
pub fn convolve<R: Real>(f: &Field<R>, g: &Field<R>) -> Result<Field<R>> {
    if !f.same_grid(g) {
        return Err(Error::GridMismatch);
    }
    let fc = f.spectral();
    let gc = g.spectral();
    let vol = f.grid().volume();
    let coeffs: Vec<Cx<R>> = fc
        .iter()
        .zip(&gc)
        .map(|(a, b)| (*a * *b).scale(vol))
        .collect();
    Field::from_spectral(f.grid().clone(), &coeffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::seeded_vector;
    use approx::assert_relative_eq;

    fn grid(n: usize) -> Arc<TorusGrid<f64>> {
        TorusGrid::new(n).unwrap()
    }

    fn random_field(g: &Arc<TorusGrid<f64>>, seed: u64) -> Field<f64> {
        Field::new(g.clone(), seeded_vector(g.len(), seed)).unwrap()
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(TorusGrid::<f64>::new(7).is_err());
        assert!(TorusGrid::<f64>::new(6).is_err());
        assert!(TorusGrid::<f64>::new(9).is_err());
        assert!(TorusGrid::<f64>::new(8).is_ok());
    }

    #[test]
    fn constant_transforms_to_zero_mode() {
        let g = grid(8);
        let f = Field::constant(g.clone(), Cx::new(1.0, 0.0));
        let c = f.spectral();
        assert_relative_eq!(c[g.bin([0, 0, 0])].re, 1.0, epsilon = 1e-13);
        for (idx, v) in c.iter().enumerate() {
            if idx != g.bin([0, 0, 0]) {
                assert!(v.norm() < 1e-13);
            }
        }
    }

    #[test]
    fn plane_wave_is_single_mode() {
        let g = grid(8);
        let f = Field::plane_wave(g.clone(), [1, 0, 0]);
        let c = f.spectral();
        let bin = g.bin([1, 0, 0]);
        assert_relative_eq!(c[bin].re, 1.0, epsilon = 1e-12);
        assert!(c[bin].im.abs() < 1e-12);
        for (idx, v) in c.iter().enumerate() {
            if idx != bin {
                assert!(v.norm() < 1e-12, "bin {idx} leaked {}", v.norm());
            }
        }
    }

    #[test]
    fn roundtrip_identity() {
        let g = grid(16);
        let f = random_field(&g, 5);
        let back = Field::from_spectral(g.clone(), &f.spectral()).unwrap();
        let rel = f.l2_distance(&back).unwrap() / f.l2_norm();
        assert!(rel < 1e-12, "roundtrip rel err {rel}");
    }

    #[test]
    fn parseval_matches_quadrature() {
        let g = grid(16);
        let f = random_field(&g, 9);
        let direct = f.l2_norm();
        let spectral = sobolev_norm(&f, 0.0);
        assert_relative_eq!(direct, spectral, max_relative = 1e-12);
    }

    #[test]
    fn sobolev_norm_examples() {
        let g = grid(8);
        let c = Field::normalized_constant(g.clone());
        for s in [-1.0, 0.0, 2.0, 3.5] {
            assert_relative_eq!(sobolev_norm(&c, s), 1.0, epsilon = 1e-12);
        }
        let mut pw = Field::plane_wave(g.clone(), [1, 0, 0]);
        let amp = 1.0 / (2.0 * std::f64::consts::PI).powf(1.5);
        pw.scale(Cx::new(amp, 0.0));
        assert_relative_eq!(sobolev_norm(&pw, 1.0), 2.0f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn multiplier_identity_and_eigenfunction() {
        let g = grid(8);
        let f = random_field(&g, 11);
        let id = apply_multiplier(&f, SobolevWeight::new(0.0));
        assert!(f.l2_distance(&id).unwrap() < 1e-12);

        let pw = Field::plane_wave(g.clone(), [1, 2, 0]);
        let out = apply_multiplier(&pw, SobolevWeight::new(-0.5));
        let expect = (1.0 + 5.0f64).powf(-0.5);
        for (a, b) in out.values().iter().zip(pw.values()) {
            assert!((a - b * expect).norm() < 1e-12);
        }

        let c = Field::constant(g.clone(), Cx::new(0.7, 0.0));
        let out = apply_multiplier(&c, SobolevWeight::new(2.0));
        assert!(c.l2_distance(&out).unwrap() < 1e-12);
    }

    #[test]
    fn multiplier_inverse_composes_to_identity() {
        let g = grid(8);
        for seed in [1u64, 2, 3] {
            let f = random_field(&g, seed);
            let s = 0.5 + seed as f64;
            let there = apply_multiplier(&f, SobolevWeight::new(s));
            let back = apply_multiplier(&there, SobolevWeight::new(-s));
            let rel = f.l2_distance(&back).unwrap() / f.l2_norm();
            assert!(rel < 1e-12, "seed {seed}: rel {rel}");
        }
    }

    #[test]
    fn convolution_of_constants_gives_volume() {
        let g = grid(8);
        let one = Field::constant(g.clone(), Cx::new(1.0, 0.0));
        let out = convolve(&one, &one).unwrap();
        let vol = (2.0 * std::f64::consts::PI).powi(3);
        for v in out.values() {
            assert_relative_eq!(v.re, vol, max_relative = 1e-12);
            assert!(v.im.abs() < 1e-9);
        }
    }

    #[test]
    fn convolution_matches_direct_double_sum() {
        let g = grid(8);
        let n = g.n_per_dim();
        let f = random_field(&g, 21);
        let h = random_field(&g, 22);
        let fast = convolve(&f, &h).unwrap();

        let cell = g.cell_volume();
        let mut max_rel = 0.0f64;
        for ix in 0..n {
            for iy in 0..n {
                for iz in 0..n {
                    let mut acc = Cx::new(0.0, 0.0);
                    for jx in 0..n {
                        for jy in 0..n {
                            for jz in 0..n {
                                let dx = (ix + n - jx) % n;
                                let dy = (iy + n - jy) % n;
                                let dz = (iz + n - jz) % n;
                                acc += f.values()[g.index(dx, dy, dz)]
                                    * h.values()[g.index(jx, jy, jz)];
                            }
                        }
                    }
                    acc = acc.scale(cell);
                    let got = fast.values()[g.index(ix, iy, iz)];
                    let rel = (got - acc).norm() / acc.norm().max(1e-300);
                    max_rel = max_rel.max(rel);
                }
            }
        }
        assert!(max_rel < 1e-10, "direct-sum oracle mismatch {max_rel}");
    }

    #[test]
    fn convolution_with_plane_wave_picks_single_mode() {
        let g = grid(8);
        let f = Field::plane_wave(g.clone(), [1, 0, 0]);
        let h = random_field(&g, 33);
        let out = convolve(&f, &h).unwrap();
        let ghat = h.spectral()[g.bin([1, 0, 0])];
        let vol = (2.0 * std::f64::consts::PI).powi(3);
        for (idx, v) in out.values().iter().enumerate() {
            let x = g.site(idx);
            let phase = Cx::new(x[0].cos(), x[0].sin());
            let expect = ghat * phase * vol;
            assert!((v - expect).norm() < 1e-9 * vol.max(1.0));
        }
    }

    #[test]
    fn near_delta_convolution_recovers_smooth_field() {
        let g = grid(32);
        // normalized narrow bump as delta approximant
        let r0 = 0.35;
        let mut bump = Field::from_fn(g.clone(), |x| {
            let wrap = |t: f64| {
                let mut t = t % (2.0 * std::f64::consts::PI);
                if t > std::f64::consts::PI {
                    t -= 2.0 * std::f64::consts::PI;
                }
                t
            };
            let r2 = wrap(x[0]).powi(2) + wrap(x[1]).powi(2) + wrap(x[2]).powi(2);
            if r2 < r0 * r0 {
                Cx::new((1.0 - r2 / (r0 * r0)).powi(2), 0.0)
            } else {
                Cx::new(0.0, 0.0)
            }
        });
        let total: f64 = bump.values().iter().map(|v| v.re).sum::<f64>() * g.cell_volume();
        bump.scale(Cx::new(1.0 / total, 0.0));
        let smooth = Field::from_fn(g.clone(), |x| {
            Cx::new(1.0 + 0.5 * x[0].cos() + 0.3 * (x[1] + x[2]).sin(), 0.0)
        });
        let out = convolve(&smooth, &bump).unwrap();
        let rel = smooth.l2_distance(&out).unwrap() / smooth.l2_norm();
        assert!(rel < 0.02, "delta approximant error {rel}");
    }

    #[test]
    fn f32_instantiation_roundtrips() {
        let g = TorusGrid::<f32>::new(8).unwrap();
        let vals = seeded_vector::<f32>(g.len(), 4);
        let f = Field::new(g.clone(), vals).unwrap();
        let back = Field::from_spectral(g.clone(), &f.spectral()).unwrap();
        let rel = f.l2_distance(&back).unwrap() / f.l2_norm();
        assert!(rel < 1e-5);
    }

    #[test]
    fn grid_mismatch_is_an_error() {
        let g8 = grid(8);
        let g16 = grid(16);
        let f = Field::constant(g8, Cx::new(1.0, 0.0));
        let h = Field::constant(g16, Cx::new(1.0, 0.0));
        assert!(convolve(&f, &h).is_err());
    }
}
