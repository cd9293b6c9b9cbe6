//! Symmetric three-body potentials V on ℝ⁶ in pair-product form, their
//! N-rescalings V_N(x,y) = N^{6β} V(N^β x, N^β y), the partial integrals the
//! Hartree nonlinearity and pair kernels need, and the limiting coupling
//! b₀ = ½∬V.
//!
//! The building block is an even, nonnegative, compactly supported radial
//! bump w(x) = A(1−|x|²/R²)² (|x| ≤ R), which has closed-form radial
//! integrals — those serve as oracles for the quadrature paths. Two forms
//! are supported:
//!
//! * `PairProductSum`:  V(x,y) = (w(x)w(y) + w(x)w(x−y) + w(y)w(x−y))/3,
//!   the canonical family for all dynamics (it collapses the Hartree double
//!   convolution to FFT convolutions);
//! * `TripleProduct`:   V(x,y) = w(x)w(y)w(x−y), oracle-only.
//!
//! Both satisfy the exchange symmetry V(x,y) = V(y,x) and the three-body
//! symmetry V(x−y,x−z) = V(y−x,y−z) = V(z−y,z−x) pointwise.

use crate::grid::{convolve, Field, TorusGrid};
use crate::scalar::{cast, cast_usize, Cx, Real};
use crate::{Error, Result};
use ndarray::Array2;
use num_traits::Float;
use std::sync::Arc;

/// Radial quartic bump w(x) = amplitude · (1 − |x|²/R²)² for |x| ≤ R.
#[derive(Clone, Copy, Debug)]
pub struct PairProfile<R: Real> {
    amplitude: R,
    support_radius: R,
}

impl<R: Real> PairProfile<R> {
    pub fn new(amplitude: R, support_radius: R) -> Result<Self> {
        if amplitude < R::zero() {
            return Err(Error::InvalidPotential(format!(
                "amplitude must be >= 0, got {amplitude}"
            )));
        }
        if support_radius <= R::zero() || support_radius >= R::PI() {
            return Err(Error::InvalidPotential(format!(
                "support radius must lie in (0, π), got {support_radius}"
            )));
        }
        Ok(Self {
            amplitude,
            support_radius,
        })
    }

    pub fn amplitude(&self) -> R {
        self.amplitude
    }

    pub fn support_radius(&self) -> R {
        self.support_radius
    }

    /// w as a function of the radius.
    #[inline]
    pub fn eval_radial(&self, r: R) -> R {
        if r >= self.support_radius {
            return R::zero();
        }
        let t = R::one() - (r / self.support_radius) * (r / self.support_radius);
        self.amplitude * t * t
    }

    #[inline]
    pub fn eval(&self, x: [R; 3]) -> R {
        self.eval_radial((x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt())
    }

    /// ∫_{ℝ³} w = 32π A R³ / 105 (closed form for the quartic bump).
    pub fn integral(&self) -> R {
        let pi = R::PI();
        cast::<R>(32.0) * pi * self.amplitude * self.support_radius.powi(3) / cast::<R>(105.0)
    }

    /// Radial profile of the self-convolution (w*w)(r), by quadrature of
    /// the spherical convolution formula
    ///   (w*w)(r) = (2π/r) ∫ s·w(s) [ ∫_{|r−s|}^{r+s} t·w(t) dt ] ds,
    /// with the inner integral in closed form.
    pub fn self_convolution_radial(&self, r: R, panels: usize) -> R {
        let rr = self.support_radius;
        if r >= rr + rr {
            return R::zero();
        }
        // closed-form antiderivative of t·w(t) on [0, R]
        let prim = |t: R| -> R {
            let t = t.min(rr).max(R::zero());
            let u = t / rr;
            let u2 = u * u;
            // ∫ t (1-u²)² dt = R² (u²/2 − u⁴/2 + u⁶/6)
            self.amplitude
                * rr
                * rr
                * (u2 / cast::<R>(2.0) - u2 * u2 / cast::<R>(2.0) + u2 * u2 * u2 / cast::<R>(6.0))
        };
        let n = panels.max(16);
        let h = rr / cast_usize::<R>(n);
        if r <= R::zero() {
            // limit r→0: (w*w)(0) = 4π ∫ s² w(s)² ds
            let mut acc = R::zero();
            for i in 0..=n {
                let s = h * cast_usize::<R>(i);
                let f = s * s * self.eval_radial(s) * self.eval_radial(s);
                acc += simpson_weight::<R>(i, n) * f;
            }
            return cast::<R>(4.0) * R::PI() * acc * h / cast::<R>(3.0);
        }
        let mut acc = R::zero();
        for i in 0..=n {
            let s = h * cast_usize::<R>(i);
            let lo = Float::abs(r - s);
            let hi = r + s;
            let inner = prim(hi) - prim(lo.min(rr));
            let f = s * self.eval_radial(s) * inner;
            acc += simpson_weight::<R>(i, n) * f;
        }
        cast::<R>(2.0) * R::PI() / r * acc * h / cast::<R>(3.0)
    }
}

#[inline]
fn simpson_weight<R: Real>(i: usize, n: usize) -> R {
    if i == 0 || i == n {
        R::one()
    } else if i % 2 == 1 {
        cast::<R>(4.0)
    } else {
        cast::<R>(2.0)
    }
}

/// Which symmetric combination of pair profiles builds V.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PotentialForm {
    PairProductSum,
    TripleProduct,
}

/// Three-body potential with its N-rescaling parameters.
#[derive(Clone, Debug)]
pub struct ThreeBodyPotential<R: Real> {
    pub form: PotentialForm,
    pub profile: PairProfile<R>,
    pub beta: R,
    pub n_scaling: u64,
}

impl<R: Real> ThreeBodyPotential<R> {
    pub fn new(
        form: PotentialForm,
        profile: PairProfile<R>,
        beta: R,
        n_scaling: u64,
    ) -> Result<Self> {
        if beta <= R::zero() || beta >= cast::<R>(1.0 / 6.0) {
            return Err(Error::InvalidPotential(format!(
                "beta must lie in (0, 1/6), got {beta}"
            )));
        }
        if n_scaling == 0 {
            return Err(Error::InvalidPotential("N must be positive".into()));
        }
        Ok(Self {
            form,
            profile,
            beta,
            n_scaling,
        })
    }

    pub fn with_n(&self, n_scaling: u64) -> Self {
        Self {
            n_scaling,
            ..self.clone()
        }
    }

    /// N^β.
    pub fn scale_factor(&self) -> R {
        cast::<R>(self.n_scaling as f64).powf(self.beta)
    }

    /// Unscaled V(x, y).
    pub fn eval_unscaled(&self, x: [R; 3], y: [R; 3]) -> R {
        let w = &self.profile;
        let d = [x[0] - y[0], x[1] - y[1], x[2] - y[2]];
        match self.form {
            PotentialForm::PairProductSum => {
                (w.eval(x) * w.eval(y) + w.eval(x) * w.eval(d) + w.eval(y) * w.eval(d))
                    / cast::<R>(3.0)
            }
            PotentialForm::TripleProduct => w.eval(x) * w.eval(y) * w.eval(d),
        }
    }

    /// Rescaled V_N(x, y) = N^{6β} V(N^β x, N^β y).
    pub fn eval(&self, x: [R; 3], y: [R; 3]) -> R {
        let s = self.scale_factor();
        let amp = s.powi(6);
        amp * self.eval_unscaled(
            [x[0] * s, x[1] * s, x[2] * s],
            [y[0] * s, y[1] * s, y[2] * s],
        )
    }

    /// Rescaled pair bump w_N(x) = N^{3β} w(N^β x), radial.
    pub fn w_n_radial(&self, r: R) -> R {
        let s = self.scale_factor();
        s.powi(3) * self.profile.eval_radial(r * s)
    }

    /// ∬ V (unscaled; equals ∬ V_N for every N by change of variables):
    /// closed form (∫w)² for the pair-product sum, radial quadrature for the
    /// triple product.
    pub fn double_integral(&self) -> R {
        match self.form {
            PotentialForm::PairProductSum => {
                let i = self.profile.integral();
                i * i
            }
            PotentialForm::TripleProduct => self.triple_overlap(600),
        }
    }

    /// ∬ w(x)w(y)w(x−y) = ∫ w · (w*w); radial Simpson.
    fn triple_overlap(&self, panels: usize) -> R {
        let rr = self.profile.support_radius();
        let n = panels;
        let h = rr / cast_usize::<R>(n);
        let mut acc = R::zero();
        for i in 0..=n {
            let r = h * cast_usize::<R>(i);
            let f = r * r
                * self.profile.eval_radial(r)
                * self.profile.self_convolution_radial(r, 400);
            acc += simpson_weight::<R>(i, n) * f;
        }
        cast::<R>(4.0) * R::PI() * acc * h / cast::<R>(3.0)
    }

    /// Limiting coupling b₀ = ½ ∬_{ℝ⁶} V, by quadrature at the unscaled
    /// level; signals an error when two quadrature resolutions disagree by
    /// more than 1e-6 relative.
    pub fn coupling_b0(&self) -> Result<R> {
        let (coarse, fine) = match self.form {
            PotentialForm::PairProductSum => {
                // ∬V = (∫w)²; quadrature of ∫w at two radial resolutions
                let int_w = |panels: usize| -> R {
                    let rr = self.profile.support_radius();
                    let h = rr / cast_usize::<R>(panels);
                    let mut acc = R::zero();
                    for i in 0..=panels {
                        let r = h * cast_usize::<R>(i);
                        acc +=
                            simpson_weight::<R>(i, panels) * r * r * self.profile.eval_radial(r);
                    }
                    cast::<R>(4.0) * R::PI() * acc * h / cast::<R>(3.0)
                };
                let a = int_w(200);
                let b = int_w(400);
                (a * a, b * b)
            }
            PotentialForm::TripleProduct => (self.triple_overlap(300), self.triple_overlap(600)),
        };
        if fine == R::zero() && coarse == R::zero() {
            return Ok(R::zero());
        }
        let rel = Float::abs(fine - coarse) / Float::abs(fine).max(R::min_positive_value());
        if rel > cast::<R>(1e-6) {
            return Err(Error::QuadratureInconsistent(format!(
                "coupling quadrature relative disagreement {rel:e}"
            )));
        }
        Ok(fine / cast::<R>(2.0))
    }

    /// Grid-consistent coupling: b₀ computed from the same minimal-image
    /// sampling of w_N the dynamics uses, i.e. ½ (h³ Σ w_N)². Constant-data
    /// closed forms hold against this value to roundoff. Pair form only.
    pub fn coupling_b0_grid(&self, grid: &Arc<TorusGrid<R>>) -> Result<R> {
        if self.form != PotentialForm::PairProductSum {
            return Err(Error::UnsupportedForm(
                "grid coupling is defined for the pair-product form".into(),
            ));
        }
        let s = self.sampled_w_n(grid).integral_quadrature();
        Ok(s * s / cast::<R>(2.0))
    }

    /// w_N sampled on the grid with minimal-image distance.
    pub fn sampled_w_n(&self, grid: &Arc<TorusGrid<R>>) -> SampledBump<R> {
        let two_pi = cast::<R>(2.0) * R::PI();
        let pi = R::PI();
        let values: Vec<R> = (0..grid.len())
            .map(|idx| {
                let x = grid.site(idx);
                let mut r2 = R::zero();
                for c in x {
                    let mut d = c % two_pi;
                    if d >= pi {
                        d -= two_pi;
                    }
                    if d < -pi {
                        d += two_pi;
                    }
                    r2 += d * d;
                }
                self.w_n_radial(r2.sqrt())
            })
            .collect();
        SampledBump {
            grid: grid.clone(),
            values,
        }
    }

    /// Resolution validity rule: scaling experiments only trust data points
    /// with N^β ≤ n_per_dim / 4 (at least four grid points across the core).
    pub fn resolves_on(&self, grid: &Arc<TorusGrid<R>>) -> bool {
        self.scale_factor() <= cast_usize::<R>(grid.n_per_dim()) / cast::<R>(4.0)
    }

    /// Hartree nonlinearity F(x) = ½ ∬ |u(y)|² V_N(x−y, x−z) |u(z)|² dy dz,
    /// via the closed form F = (g² + 2 w_N*(f·g))/6 with f = |u|², g = w_N*f.
    pub fn hartree_nonlinearity(&self, u: &Field<R>) -> Result<Field<R>> {
        if self.form != PotentialForm::PairProductSum {
            return Err(Error::UnsupportedForm(
                "hartree_nonlinearity requires the pair-product form (the triple product is \
                 available only through the direct-summation oracle)"
                    .into(),
            ));
        }
        let grid = u.grid().clone();
        let w = self.sampled_w_n(&grid).as_field();
        let mut f = Field::zeros(grid.clone());
        for (dst, v) in f.values_mut().iter_mut().zip(u.values()) {
            *dst = Cx::new(v.norm_sqr(), R::zero());
        }
        let g = convolve(&w, &f)?;
        let mut fg = f.clone();
        for (dst, gv) in fg.values_mut().iter_mut().zip(g.values()) {
            *dst *= *gv;
        }
        let conv2 = convolve(&w, &fg)?;
        let sixth = cast::<R>(1.0 / 6.0);
        let mut out = Field::zeros(grid);
        for ((dst, gv), cv) in out
            .values_mut()
            .iter_mut()
            .zip(g.values())
            .zip(conv2.values())
        {
            *dst = (*gv * *gv + (*cv + *cv)).scale(sixth);
        }
        Ok(out)
    }

    /// Two-point function m(x,y) = ∫ V_N(x−y, x−z) f(z) dz in decomposed
    /// form. `f` must be (numerically) real and nonnegative.
    pub fn partial_integral_w2(&self, f: &Field<R>) -> Result<TwoPointKernel<R>> {
        if self.form != PotentialForm::PairProductSum {
            return Err(Error::UnsupportedForm(
                "partial_integral_w2 requires the pair-product form".into(),
            ));
        }
        let tol = cast::<R>(1e-10);
        for v in f.values() {
            if Float::abs(v.im) > tol || v.re < -tol {
                return Err(Error::PreconditionViolated(
                    "density must be real and nonnegative".into(),
                ));
            }
        }
        let grid = f.grid().clone();
        let w = self.sampled_w_n(&grid);
        let wf = w.as_field();
        let g = convolve(&wf, f)?;
        Ok(TwoPointKernel {
            grid,
            w_n: w.values,
            g: g.values().iter().map(|v| v.re).collect(),
            f: f.values().iter().map(|v| v.re).collect(),
        })
    }

    /// Translation-invariant single-variable reduction
    /// W(x) = ∫ V_N(x, z) dz = (2 I_N w_N(x) + (w_N*w_N)(x)) / 3 with
    /// I_N = ∫ w_N, realized on the grid.
    pub fn pair_marginal_on(&self, grid: &Arc<TorusGrid<R>>) -> Result<Field<R>> {
        if self.form != PotentialForm::PairProductSum {
            return Err(Error::UnsupportedForm(
                "pair marginal requires the pair-product form".into(),
            ));
        }
        let w = self.sampled_w_n(grid);
        let wf = w.as_field();
        let i_n = w.integral_quadrature();
        let ww = convolve(&wf, &wf)?;
        let third = cast::<R>(1.0 / 3.0);
        let mut out = Field::zeros(grid.clone());
        for ((dst, wv), cv) in out.values_mut().iter_mut().zip(&w.values).zip(ww.values()) {
            *dst = Cx::new(((*wv + *wv) * i_n + cv.re) * third, R::zero());
        }
        Ok(out)
    }

    /// Largest generalized eigenvalue λ of (multiplication by W) v = λ(−Δ)v
    /// on mean-zero fields, divided by ‖W‖_{L^{3/2}}. W = ∫V_N(·, z)dz.
    /// Diagnostic for the kinetic bound on translation-invariant potentials;
    /// discretization shifts the constant, so resolutions are compared
    /// rather than asserting a fixed value.
    pub fn sobolev_ratio_diagnostic(&self, grid: &Arc<TorusGrid<R>>) -> Result<R> {
        let w = self.pair_marginal_on(grid)?;
        let w_vals: Vec<R> = w.values().iter().map(|v| v.re).collect();
        let norm_32 = {
            let p = cast::<R>(1.5);
            let sum: R =
                w_vals.iter().map(|&v| Float::abs(v).powf(p)).sum::<R>() * grid.cell_volume();
            sum.powf(cast::<R>(2.0 / 3.0))
        };
        if norm_32 <= R::zero() {
            return Ok(R::zero());
        }
        // λ_max of (−Δ)^{-1/2} W (−Δ)^{-1/2} restricted to mean-zero fields
        let g = grid.clone();
        let wv = w_vals;
        let apply = move |v: &[Cx<R>]| -> Vec<Cx<R>> {
            let field = Field::new(g.clone(), v.to_vec()).expect("size");
            let half_inv = |_k: [i32; 3], ksq: R| -> Cx<R> {
                if ksq > R::zero() {
                    Cx::new(ksq.sqrt().recip(), R::zero())
                } else {
                    Cx::new(R::zero(), R::zero())
                }
            };
            let mut stage = field.apply_spectral(half_inv);
            for (sv, wi) in stage.values_mut().iter_mut().zip(&wv) {
                *sv = sv.scale(*wi);
            }
            let out = stage.apply_spectral(half_inv);
            out.values().to_vec()
        };
        let (lambda, _) = crate::linalg::lanczos_extreme(&apply, grid.len(), 60, 2, true);
        Ok(lambda / norm_32)
    }
}

/// Minimal-image sampling of w_N on a grid.
pub struct SampledBump<R: Real> {
    pub grid: Arc<TorusGrid<R>>,
    pub values: Vec<R>,
}

impl<R: Real> SampledBump<R> {
    pub fn as_field(&self) -> Field<R> {
        Field::new(
            self.grid.clone(),
            self.values.iter().map(|&v| Cx::new(v, R::zero())).collect(),
        )
        .expect("size")
    }

    /// h³ Σ w_N — the grid realization of ∫ w_N.
    pub fn integral_quadrature(&self) -> R {
        self.values.iter().copied().sum::<R>() * self.grid.cell_volume()
    }
}

/// m(x,y) = ∫ V_N(x−y, x−z) f(z) dz in the decomposed form
/// m = (w_N(x−y)·g(x) + w_N(x−y)·g(y) + r(x,y)) / 3 with g = w_N * f and
/// r(x,y) = ∫ w_N(x−z) w_N(y−z) f(z) dz.
pub struct TwoPointKernel<R: Real> {
    grid: Arc<TorusGrid<R>>,
    w_n: Vec<R>,
    g: Vec<R>,
    f: Vec<R>,
}

impl<R: Real> TwoPointKernel<R> {
    pub fn grid(&self) -> &Arc<TorusGrid<R>> {
        &self.grid
    }

    pub fn g_values(&self) -> &[R] {
        &self.g
    }

    pub fn w_n_values(&self) -> &[R] {
        &self.w_n
    }

    /// w_N at the displacement between two site indices.
    #[inline]
    pub fn w_at_displacement(&self, ix: usize, iy: usize) -> R {
        let n = self.grid.n_per_dim();
        let (ax, ay, az) = split(ix, n);
        let (bx, by, bz) = split(iy, n);
        let d = self
            .grid
            .index((ax + n - bx) % n, (ay + n - by) % n, (az + n - bz) % n);
        self.w_n[d]
    }

    /// Lazy evaluation of r(x,y) by direct quadrature, O(n³) per pair.
    pub fn r_lazy(&self, ix: usize, iy: usize) -> R {
        let n = self.grid.n_per_dim();
        let (ax, ay, az) = split(ix, n);
        let (bx, by, bz) = split(iy, n);
        let mut acc = R::zero();
        for zx in 0..n {
            for zy in 0..n {
                for zz in 0..n {
                    let iz = self.grid.index(zx, zy, zz);
                    if self.f[iz] == R::zero() {
                        continue;
                    }
                    let d1 = self
                        .grid
                        .index((ax + n - zx) % n, (ay + n - zy) % n, (az + n - zz) % n);
                    let d2 = self
                        .grid
                        .index((bx + n - zx) % n, (by + n - zy) % n, (bz + n - zz) % n);
                    acc += self.w_n[d1] * self.w_n[d2] * self.f[iz];
                }
            }
        }
        acc * self.grid.cell_volume()
    }

    /// m(x,y) with the residual term evaluated lazily.
    pub fn eval(&self, ix: usize, iy: usize) -> R {
        let w = self.w_at_displacement(ix, iy);
        ((self.g[ix] + self.g[iy]) * w + self.r_lazy(ix, iy)) / cast::<R>(3.0)
    }

    /// Dense n³×n³ materialization of m; guarded to grids ≤ 16³. The
    /// residual r is assembled column-by-column with FFT convolutions.
    pub fn dense(&self) -> Result<Array2<R>> {
        let n = self.grid.n_per_dim();
        if n > 16 {
            return Err(Error::DenseTooLarge(format!(
                "dense two-point materialization limited to 16³, grid is {n}³"
            )));
        }
        let len = self.grid.len();
        let w_field = Field::new(
            self.grid.clone(),
            self.w_n.iter().map(|&v| Cx::new(v, R::zero())).collect(),
        )?;
        let mut out = Array2::zeros((len, len));
        let third = cast::<R>(1.0 / 3.0);
        for iy in 0..len {
            // q_y(z) = w_N(y−z) f(z); r(·,y) = w_N * q_y
            let mut q = Field::zeros(self.grid.clone());
            for iz in 0..len {
                let wyz = self.w_at_displacement(iy, iz);
                q.values_mut()[iz] = Cx::new(wyz * self.f[iz], R::zero());
            }
            let r_col = convolve(&w_field, &q)?;
            for ix in 0..len {
                let w = self.w_at_displacement(ix, iy);
                out[(ix, iy)] = ((self.g[ix] + self.g[iy]) * w + r_col.values()[ix].re) * third;
            }
        }
        Ok(out)
    }
}

#[inline]
pub(crate) fn split(idx: usize, n: usize) -> (usize, usize, usize) {
    (idx / (n * n), (idx / n) % n, idx % n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn profile(a: f64, r: f64) -> PairProfile<f64> {
        PairProfile::new(a, r).unwrap()
    }

    fn unit_integral_profile() -> PairProfile<f64> {
        // amplitude chosen so ∫w = 1
        let r: f64 = 1.5;
        let a = 105.0 / (32.0 * std::f64::consts::PI * r.powi(3));
        profile(a, r)
    }

    #[test]
    fn closed_form_integral_matches_midpoint_quadrature() {
        let p = profile(2.5, 1.3);
        let n = 160;
        let h = 2.0 * p.support_radius() / n as f64;
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let x = [
                        -p.support_radius() + (i as f64 + 0.5) * h,
                        -p.support_radius() + (j as f64 + 0.5) * h,
                        -p.support_radius() + (k as f64 + 0.5) * h,
                    ];
                    acc += p.eval(x);
                }
            }
        }
        acc *= h * h * h;
        assert_relative_eq!(acc, p.integral(), max_relative = 1e-4);
    }

    #[test]
    fn coupling_b0_pair_form_analytic_reduction() {
        let p = unit_integral_profile();
        assert_relative_eq!(p.integral(), 1.0, epsilon = 1e-14);
        let v = ThreeBodyPotential::new(PotentialForm::PairProductSum, p, 0.1, 1).unwrap();
        let b0 = v.coupling_b0().unwrap();
        assert_relative_eq!(b0, 0.5, max_relative = 1e-9);
    }

    #[test]
    fn coupling_b0_zero_amplitude() {
        let p = profile(0.0, 1.0);
        let v = ThreeBodyPotential::new(PotentialForm::PairProductSum, p, 0.1, 4).unwrap();
        assert_eq!(v.coupling_b0().unwrap(), 0.0);
    }

    #[test]
    fn coupling_b0_triple_product_matches_monte_carlo() {
        let p = profile(1.0, 1.2);
        let v = ThreeBodyPotential::new(PotentialForm::TripleProduct, p, 0.1, 1).unwrap();
        let quad = v.coupling_b0().unwrap();

        // importance sampling: x, y drawn from density w/∫w, so
        // ∬ w(x)w(y)w(x−y) = (∫w)² E[w(x−y)] and the estimator has O(1)
        // relative variance instead of the huge uniform-box variance
        let r = p.support_radius();
        let radial_cdf = |t: f64| -> f64 {
            // ∫₀^t s²(1−s²/R²)² ds normalized by its value at R
            let u = t / r;
            let num = u.powi(3) / 3.0 - 2.0 * u.powi(5) / 5.0 + u.powi(7) / 7.0;
            num / (1.0 / 3.0 - 2.0 / 5.0 + 1.0 / 7.0)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(12345);
        // tabulated inverse CDF (the tiny interpolation bias cancels in the
        // comparison because both draws use the same table)
        let table: Vec<f64> = (0..=4096)
            .map(|i| {
                let q = i as f64 / 4096.0;
                let (mut lo, mut hi) = (0.0, r);
                for _ in 0..50 {
                    let mid = 0.5 * (lo + hi);
                    if radial_cdf(mid) < q {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            })
            .collect();
        let sample_radius = |q: f64| -> f64 {
            let pos = q * 4096.0;
            let i = (pos as usize).min(4095);
            let frac = pos - i as f64;
            table[i] * (1.0 - frac) + table[i + 1] * frac
        };
        let draw = |rng: &mut ChaCha8Rng, rad: f64| -> [f64; 3] {
            let cos_t = rng.gen_range(-1.0..1.0f64);
            let phi = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
            let sin_t = (1.0 - cos_t * cos_t).sqrt();
            [
                rad * sin_t * phi.cos(),
                rad * sin_t * phi.sin(),
                rad * cos_t,
            ]
        };
        let samples = 25_000_000usize;
        let mut acc = 0.0f64;
        for _ in 0..samples {
            let q1 = rng.gen_range(0.0..1.0);
            let q2 = rng.gen_range(0.0..1.0);
            let rx = sample_radius(q1);
            let ry = sample_radius(q2);
            let x = draw(&mut rng, rx);
            let y = draw(&mut rng, ry);
            let d = [x[0] - y[0], x[1] - y[1], x[2] - y[2]];
            acc += p.eval(d);
        }
        let int_w = p.integral();
        let mc = 0.5 * int_w * int_w * acc / samples as f64;
        assert_relative_eq!(mc, quad, max_relative = 1e-3);
    }

    #[test]
    fn symmetries_hold_pointwise() {
        let p = profile(1.7, 1.1);
        for form in [PotentialForm::PairProductSum, PotentialForm::TripleProduct] {
            let v = ThreeBodyPotential::new(form, p, 0.12, 9).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            for _ in 0..1000 {
                let mut pt = || {
                    [
                        rng.gen_range(-1.5..1.5),
                        rng.gen_range(-1.5..1.5),
                        rng.gen_range(-1.5..1.5),
                    ]
                };
                let (x, y, z) = (pt(), pt(), pt());
                let d = |a: [f64; 3], b: [f64; 3]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
                // exchange
                let xy = d(x, y);
                assert_eq!(v.eval(xy, d(x, z)), v.eval(d(x, z), xy));
                // three-body symmetry: V(x−y,x−z) = V(y−x,y−z) = V(z−y,z−x)
                let a = v.eval(d(x, y), d(x, z));
                let b = v.eval(d(y, x), d(y, z));
                let c = v.eval(d(z, y), d(z, x));
                assert!((a - b).abs() <= 1e-13 * a.abs().max(1.0));
                assert!((a - c).abs() <= 1e-13 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn rescaled_double_integral_is_n_independent() {
        let p = profile(2.0, 1.4);
        let v1 = ThreeBodyPotential::new(PotentialForm::PairProductSum, p, 0.15, 1).unwrap();
        let base = v1.double_integral();
        for n in [4u64, 64, 1024] {
            // change of variables: the quadrature in scaled coordinates is
            // the unscaled quadrature, so the double integral is exactly
            // N-independent
            let vn = v1.with_n(n);
            assert_relative_eq!(vn.double_integral(), base, max_relative = 1e-10);
        }
    }

    #[test]
    fn hartree_nonlinearity_constant_data_reduces_to_grid_coupling() {
        let grid = TorusGrid::<f64>::new(16).unwrap();
        let p = profile(3.0, 2.0);
        let v = ThreeBodyPotential::new(PotentialForm::PairProductSum, p, 0.15, 8).unwrap();
        let u = Field::normalized_constant(grid.clone());
        let f = v.hartree_nonlinearity(&u).unwrap();
        let rho = 1.0 / (2.0 * std::f64::consts::PI).powi(3);
        let b0_grid = v.coupling_b0_grid(&grid).unwrap();
        let expect = b0_grid * rho * rho;
        for val in f.values() {
            assert_relative_eq!(val.re, expect, max_relative = 1e-11);
            assert!(val.im.abs() < 1e-14);
        }
        // and within quadrature error of the continuum coupling
        let b0 = v.coupling_b0().unwrap();
        assert_relative_eq!(b0_grid, b0, max_relative = 2e-2);
    }

    #[test]
    fn hartree_nonlinearity_zero_amplitude() {
        let grid = TorusGrid::<f64>::new(8).unwrap();
        let p = profile(0.0, 1.0);
        let v = ThreeBodyPotential::new(PotentialForm::PairProductSum, p, 0.1, 4).unwrap();
        let u = Field::normalized_constant(grid.clone());
        let f = v.hartree_nonlinearity(&u).unwrap();
        for val in f.values() {
            assert!(val.norm() < 1e-15);
        }
    }

    #[test]
    fn hartree_nonlinearity_rejects_triple_product() {
        let grid = TorusGrid::<f64>::new(8).unwrap();
        let p = profile(1.0, 1.0);
        let v = ThreeBodyPotential::new(PotentialForm::TripleProduct, p, 0.1, 4).unwrap();
        let u = Field::normalized_constant(grid);
        assert!(matches!(
            v.hartree_nonlinearity(&u),
            Err(Error::UnsupportedForm(_))
        ));
    }

    /// Direct double-sum oracle on 8³ (convolution structure exploited per
    /// term so the reduction stays independent of the FFT path).
    #[test]
    fn hartree_nonlinearity_matches_direct_summation() {
        let grid = TorusGrid::<f64>::new(8).unwrap();
        let n = grid.n_per_dim();
        let p = profile(2.0, 2.2);
        let v = ThreeBodyPotential::new(PotentialForm::PairProductSum, p, 0.12, 3).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut u = Field::from_fn(grid.clone(), |_| {
            Cx::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        u.normalize();
        let fast = v.hartree_nonlinearity(&u).unwrap();

        let w = v.sampled_w_n(&grid);
        let f: Vec<f64> = u.values().iter().map(|c| c.norm_sqr()).collect();
        let cell = grid.cell_volume();
        let wd = |a: usize, b: usize| -> f64 {
            let (ax, ay, az) = split(a, n);
            let (bx, by, bz) = split(b, n);
            w.values[grid.index((ax + n - bx) % n, (ay + n - by) % n, (az + n - bz) % n)]
        };
        let len = grid.len();
        let mut g = vec![0.0f64; len];
        for x in 0..len {
            let mut acc = 0.0;
            for y in 0..len {
                acc += wd(x, y) * f[y];
            }
            g[x] = acc * cell;
        }
        let mut c = vec![0.0f64; len];
        for x in 0..len {
            let mut acc = 0.0;
            for y in 0..len {
                acc += wd(x, y) * f[y] * g[y];
            }
            c[x] = acc * cell;
        }
        let mut max_rel = 0.0f64;
        for x in 0..len {
            let direct = (g[x] * g[x] + 2.0 * c[x]) / 6.0;
            let rel = (fast.values()[x].re - direct).abs() / direct.abs().max(1e-12);
            max_rel = max_rel.max(rel);
        }
        assert!(max_rel < 1e-8, "direct-summation oracle mismatch {max_rel}");
    }

    #[test]
    fn hartree_nonlinearity_real_nonnegative_on_random_data() {
        let grid = TorusGrid::<f64>::new(16).unwrap();
        let p = profile(4.0, 2.0);
        let v = ThreeBodyPotential::new(PotentialForm::PairProductSum, p, 0.15, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut u = Field::from_fn(grid, |_| {
            Cx::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        u.normalize();
        let f = v.hartree_nonlinearity(&u).unwrap();
        for val in f.values() {
            assert!(val.im.abs() < 1e-12);
            assert!(val.re > -1e-12);
        }
    }

    #[test]
    fn partial_integral_constant_density_reduction() {
        let grid = TorusGrid::<f64>::new(8).unwrap();
        let p = profile(2.0, 2.0);
        let v = ThreeBodyPotential::new(PotentialForm::PairProductSum, p, 0.1, 2).unwrap();
        let rho = 0.37;
        let f = Field::constant(grid.clone(), Cx::new(rho, 0.0));
        let kern = v.partial_integral_w2(&f).unwrap();

        let w = v.sampled_w_n(&grid);
        let i_n = w.integral_quadrature();
        let ww = convolve(&w.as_field(), &w.as_field()).unwrap();
        // m(x,y) = ρ[(2/3) w_N(x−y) I_N + (1/3)(w_N*w_N)(x−y)]
        for (ix, iy) in [(0usize, 0usize), (3, 100), (57, 200), (511, 1)] {
            let n = grid.n_per_dim();
            let (ax, ay, az) = split(ix, n);
            let (bx, by, bz) = split(iy, n);
            let disp = grid.index((ax + n - bx) % n, (ay + n - by) % n, (az + n - bz) % n);
            let expect = rho * (2.0 / 3.0 * w.values[disp] * i_n + ww.values()[disp].re / 3.0);
            assert_relative_eq!(
                kern.eval(ix, iy),
                expect,
                max_relative = 1e-10,
                epsilon = 1e-13
            );
        }
    }

    #[test]
    fn partial_integral_zero_density() {
        let grid = TorusGrid::<f64>::new(8).unwrap();
        let p = profile(2.0, 2.0);
        let v = ThreeBodyPotential::new(PotentialForm::PairProductSum, p, 0.1, 2).unwrap();
        let f = Field::zeros(grid);
        let kern = v.partial_integral_w2(&f).unwrap();
        assert_eq!(kern.eval(0, 5), 0.0);
        assert_eq!(kern.eval(100, 100), 0.0);
    }

    #[test]
    fn partial_integral_matches_direct_summation() {
        let grid = TorusGrid::<f64>::new(8).unwrap();
        let p = profile(1.5, 2.4);
        let v = ThreeBodyPotential::new(PotentialForm::PairProductSum, p, 0.13, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let f = Field::from_fn(grid.clone(), |_| Cx::new(rng.gen_range(0.0..1.0), 0.0));
        let kern = v.partial_integral_w2(&f).unwrap();
        let dense = kern.dense().unwrap();

        let cell = grid.cell_volume();
        // the torus potential periodizes each pair factor with its own
        // minimal image, so the oracle builds V from the three pairwise
        // minimal-image distances
        let min_dist = |a: [f64; 3], b: [f64; 3]| -> f64 {
            let mut r2 = 0.0;
            for i in 0..3 {
                let mut d = (a[i] - b[i]) % (2.0 * std::f64::consts::PI);
                if d >= std::f64::consts::PI {
                    d -= 2.0 * std::f64::consts::PI;
                }
                if d < -std::f64::consts::PI {
                    d += 2.0 * std::f64::consts::PI;
                }
                r2 += d * d;
            }
            r2.sqrt()
        };
        let mut max_rel = 0.0f64;
        for (ix, iy) in [(0usize, 1usize), (10, 400), (333, 77), (500, 500)] {
            let x = grid.site(ix);
            let y = grid.site(iy);
            let mut acc = 0.0;
            for iz in 0..grid.len() {
                let z = grid.site(iz);
                let wxy = v.w_n_radial(min_dist(x, y));
                let wxz = v.w_n_radial(min_dist(x, z));
                let wyz = v.w_n_radial(min_dist(y, z));
                let vper = (wxy * wxz + wxy * wyz + wxz * wyz) / 3.0;
                acc += vper * f.values()[iz].re;
            }
            acc *= cell;
            let got = dense[(ix, iy)];
            let lazy = kern.eval(ix, iy);
            let rel = (got - acc).abs() / acc.abs().max(1e-12);
            max_rel = max_rel.max(rel);
            assert_relative_eq!(lazy, got, max_relative = 1e-10, epsilon = 1e-14);
        }
        assert!(max_rel < 1e-8, "direct-summation mismatch {max_rel}");
    }

    #[test]
    fn dense_materialization_guard() {
        let grid = TorusGrid::<f64>::new(32).unwrap();
        let p = profile(1.0, 1.0);
        let v = ThreeBodyPotential::new(PotentialForm::PairProductSum, p, 0.1, 2).unwrap();
        let f = Field::constant(grid, Cx::new(0.1, 0.0));
        let kern = v.partial_integral_w2(&f).unwrap();
        assert!(matches!(kern.dense(), Err(Error::DenseTooLarge(_))));
    }

    #[test]
    fn sobolev_ratio_zero_potential() {
        let grid = TorusGrid::<f64>::new(8).unwrap();
        let p = profile(0.0, 1.0);
        let v = ThreeBodyPotential::new(PotentialForm::PairProductSum, p, 0.1, 2).unwrap();
        assert_eq!(v.sobolev_ratio_diagnostic(&grid).unwrap(), 0.0);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(PairProfile::new(-1.0, 1.0f64).is_err());
        assert!(PairProfile::new(1.0, 3.2f64).is_err()); // ≥ π
        let p = profile(1.0, 1.0);
        assert!(ThreeBodyPotential::new(PotentialForm::PairProductSum, p, 0.2, 4).is_err());
        assert!(ThreeBodyPotential::new(PotentialForm::PairProductSum, p, 0.1, 0).is_err());
    }
}
