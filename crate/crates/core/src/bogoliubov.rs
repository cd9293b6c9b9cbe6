//! Pair-excitation structure around a condensate: the one-body Hartree
//! operator, the kernels K₁ and K₂ of the quadratic generator, their
//! Hilbert–Schmidt scaling laws in the rescaling parameter N, the (γ, α)
//! excitation density-matrix evolution, and the pairing-term eigenvalue
//! certification on a truncated Fock space.

use crate::fock::{d_gamma_diag, pairing_operator, FockBasis, FockOperator};
use crate::grid::{convolve, Field};
use crate::linalg::{hermitian_eigenvalues, loglog_slope};
use crate::potential::ThreeBodyPotential;
use crate::scalar::{cast, cast_usize, Cx, Real};
use crate::{Error, Result};
use ndarray::Array2;
use num_traits::Float;

/// Finite set of excited wavevectors, closed under k ↦ −k, zero mode
/// excluded (the condensate direction for the constant condensate).
#[derive(Clone, Debug)]
pub struct ModeBasis {
    modes: Vec<[i32; 3]>,
}

impl ModeBasis {
    /// All k ≠ 0 with |k|² ≤ cutoff.
    pub fn shell(cutoff: i32) -> Result<Self> {
        if cutoff < 1 {
            return Err(Error::CutoffTooLarge("cutoff must be ≥ 1".into()));
        }
        let r = (cutoff as f64).sqrt() as i32 + 1;
        let mut modes = Vec::new();
        for kx in -r..=r {
            for ky in -r..=r {
                for kz in -r..=r {
                    let k2 = kx * kx + ky * ky + kz * kz;
                    if k2 > 0 && k2 <= cutoff {
                        modes.push([kx, ky, kz]);
                    }
                }
            }
        }
        modes.sort_by_key(|k| {
            (
                k[0] * k[0] + k[1] * k[1] + k[2] * k[2],
                k[0].abs() + k[1].abs() + k[2].abs(),
                [k[0], k[1], k[2]],
            )
        });
        Ok(Self { modes })
    }

    /// The first `count` modes of the shell ordering, taken in ±k pairs so
    /// the set stays closed under negation. `count` must be even.
    pub fn first_pairs(count: usize) -> Result<Self> {
        if count == 0 || count % 2 != 0 {
            return Err(Error::InvalidGrid(format!(
                "mode count must be even and positive, got {count}"
            )));
        }
        let big = Self::shell(((count as i32) / 2 + 2).pow(2))?;
        let mut modes: Vec<[i32; 3]> = Vec::new();
        for &k in &big.modes {
            if modes.contains(&k) {
                continue;
            }
            modes.push(k);
            let nk = [-k[0], -k[1], -k[2]];
            if !modes.contains(&nk) {
                modes.push(nk);
            }
            if modes.len() >= count {
                break;
            }
        }
        modes.truncate(count);
        Ok(Self { modes })
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn modes(&self) -> &[[i32; 3]] {
        &self.modes
    }

    pub fn index_of(&self, k: [i32; 3]) -> Option<usize> {
        self.modes.iter().position(|&m| m == k)
    }

    /// Index of −k (the basis is closed under negation).
    pub fn negation_index(&self, a: usize) -> usize {
        let k = self.modes[a];
        self.index_of([-k[0], -k[1], -k[2]])
            .expect("mode basis closed under negation")
    }

    pub fn max_k_sq(&self) -> i32 {
        self.modes
            .iter()
            .map(|k| k[0] * k[0] + k[1] * k[1] + k[2] * k[2])
            .max()
            .unwrap_or(0)
    }
}

/// Compressed one-body and pair kernels in an orthonormal excited basis:
/// h = Q(−Δ + f_V)Q, K₁ = QK̃₁Q, and the pair-creation matrix K₂.
pub struct PairKernels<R: Real> {
    pub modes: ModeBasis,
    pub h: Array2<Cx<R>>,
    pub k1: Array2<Cx<R>>,
    pub k2: Array2<Cx<R>>,
}

impl<R: Real> PairKernels<R> {
    /// The self-adjoint one-body block h + K₁ of the quadratic generator.
    pub fn one_body(&self) -> Array2<Cx<R>> {
        &self.h + &self.k1
    }

    pub fn hermiticity_defect(&self) -> R {
        let mut worst = R::zero();
        for m in [&self.h, &self.k1] {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    let d = (m[(i, j)] - m[(j, i)].conj()).norm();
                    if d > worst {
                        worst = d;
                    }
                }
            }
        }
        worst
    }

    pub fn k2_symmetry_defect(&self) -> R {
        let mut worst = R::zero();
        for i in 0..self.k2.nrows() {
            for j in 0..self.k2.ncols() {
                let d = (self.k2[(i, j)] - self.k2[(j, i)]).norm();
                if d > worst {
                    worst = d;
                }
            }
        }
        worst
    }
}

/// Build the compressed kernels for a normalized condensate `u`. The basis
/// functions are Q-projected plane waves re-orthonormalized by Gram–Schmidt
/// in the grid inner product (for the constant condensate they are exactly
/// the plane waves).
pub fn build_kernels<R: Real>(
    u: &Field<R>,
    potential: &ThreeBodyPotential<R>,
    modes: &ModeBasis,
) -> Result<PairKernels<R>> {
    let grid = u.grid().clone();
    if Float::abs(u.l2_norm() - R::one()) > cast::<R>(1e-8) {
        return Err(Error::NotNormalized("condensate must have unit norm".into()));
    }
    // orthonormal excited basis
    let mut basis_fields: Vec<Field<R>> = Vec::with_capacity(modes.len());
    let norm_amp = grid.volume().sqrt().recip();
    for &k in modes.modes() {
        let mut pw = Field::plane_wave(grid.clone(), k);
        pw.scale(Cx::new(norm_amp, R::zero()));
        // project off the condensate
        let overlap = u.inner(&pw)?;
        pw.axpy(-overlap, u)?;
        // modified Gram–Schmidt against the accepted fields
        for prev in &basis_fields {
            let c = prev.inner(&pw)?;
            pw.axpy(-c, prev)?;
        }
        let nrm = pw.l2_norm();
        if nrm < cast::<R>(1e-8) {
            return Err(Error::InvalidGrid(
                "mode basis degenerates after condensate projection".into(),
            ));
        }
        pw.scale(Cx::new(nrm.recip(), R::zero()));
        basis_fields.push(pw);
    }

    let m = modes.len();
    let cell = grid.cell_volume();
    let f_v = potential.hartree_nonlinearity(u)?;
    let w_sample = potential.sampled_w_n(&grid);
    let w_field = w_sample.as_field();
    let density = Field::new(
        grid.clone(),
        u.values().iter().map(|v| Cx::new(v.norm_sqr(), R::zero())).collect(),
    )?;
    let g = convolve(&w_field, &density)?;

    // p_a(x) = conj(e_a)(x) u(x) for the bilinear contractions, and the
    // convolutions w * p_a, w * (g p_a) they need
    let mut p_fields = Vec::with_capacity(m);
    for e in &basis_fields {
        let mut p = Field::zeros(grid.clone());
        for ((dst, ev), uv) in p.values_mut().iter_mut().zip(e.values()).zip(u.values()) {
            *dst = ev.conj() * *uv;
        }
        p_fields.push(p);
    }
    let w_conv_p: Vec<Field<R>> = p_fields
        .iter()
        .map(|p| convolve(&w_field, p))
        .collect::<Result<_>>()?;
    // q_b(y) = conj(u)(y) e_b(y) for K₁'s right slot
    let mut q_fields = Vec::with_capacity(m);
    for e in &basis_fields {
        let mut q = Field::zeros(grid.clone());
        for ((dst, ev), uv) in q.values_mut().iter_mut().zip(e.values()).zip(u.values()) {
            *dst = uv.conj() * *ev;
        }
        q_fields.push(q);
    }
    let w_conv_q: Vec<Field<R>> = q_fields
        .iter()
        .map(|q| convolve(&w_field, q))
        .collect::<Result<_>>()?;

    // bilinear ∬ a(x) m(x,y) b(y) with m = (w(x−y)[g(x)+g(y)] + r)/3
    let third = cast::<R>(1.0 / 3.0);
    let m_bilinear = |a: &Field<R>,
                      w_conv_b: &Field<R>,
                      b: &Field<R>|
     -> Result<Cx<R>> {
        // term1: Σ a·g·(w*b)
        let mut t1 = Cx::new(R::zero(), R::zero());
        for ((av, gv), wb) in a.values().iter().zip(g.values()).zip(w_conv_b.values()) {
            t1 += *av * gv.re * *wb;
        }
        // term2: Σ a·(w*(g·b))
        let mut gb = Field::zeros(grid.clone());
        for ((dst, gv), bv) in gb.values_mut().iter_mut().zip(g.values()).zip(b.values()) {
            *dst = Cx::new(gv.re, R::zero()) * *bv;
        }
        let w_gb = convolve(&w_field, &gb)?;
        let mut t2 = Cx::new(R::zero(), R::zero());
        for (av, wv) in a.values().iter().zip(w_gb.values()) {
            t2 += *av * *wv;
        }
        // term3: Σ f·(w*a)·(w*b)
        let w_a = convolve(&w_field, a)?;
        let mut t3 = Cx::new(R::zero(), R::zero());
        for ((fv, wa), wb) in density.values().iter().zip(w_a.values()).zip(w_conv_b.values()) {
            t3 += Cx::new(fv.re, R::zero()) * *wa * *wb;
        }
        Ok((t1 + t2 + t3).scale(third * cell))
    };

    let mut h = Array2::zeros((m, m));
    let mut k1 = Array2::zeros((m, m));
    let mut k2 = Array2::zeros((m, m));
    for b in 0..m {
        let eb = &basis_fields[b];
        // kinetic + multiplication by the Hartree potential
        let minus_lap = eb.apply_spectral(|_, ksq| Cx::new(ksq, R::zero()));
        for a in 0..m {
            let ea = &basis_fields[a];
            let mut acc = ea.inner(&minus_lap)?;
            let mut pot_acc = Cx::new(R::zero(), R::zero());
            for ((av, fv), bv) in ea.values().iter().zip(f_v.values()).zip(eb.values()) {
                pot_acc += av.conj() * fv.re * *bv;
            }
            acc += pot_acc.scale(cell);
            h[(a, b)] = acc;
        }
        for a in 0..m {
            k1[(a, b)] = m_bilinear(&p_fields[a], &w_conv_q[b], &q_fields[b])?;
            k2[(a, b)] = m_bilinear(&p_fields[a], &w_conv_p[b], &p_fields[b])?;
        }
    }

    Ok(PairKernels {
        modes: modes.clone(),
        h,
        k1,
        k2,
    })
}

/// Excitation density matrices (γ, α) in the mode basis.
#[derive(Clone)]
pub struct BogoliubovState<R: Real> {
    pub gamma: Array2<Cx<R>>,
    pub alpha: Array2<Cx<R>>,
    pub time: R,
}

impl<R: Real> BogoliubovState<R> {
    pub fn vacuum(m: usize) -> Self {
        Self {
            gamma: Array2::zeros((m, m)),
            alpha: Array2::zeros((m, m)),
            time: R::zero(),
        }
    }

    pub fn trace_gamma(&self) -> R {
        let mut acc = R::zero();
        for i in 0..self.gamma.nrows() {
            acc += self.gamma[(i, i)].re;
        }
        acc
    }

    /// Σ w_a γ_aa for diagonal monitor weights (e.g. 1 + |k|²).
    pub fn weighted_trace(&self, weights: &[R]) -> R {
        let mut acc = R::zero();
        for (i, &w) in weights.iter().enumerate() {
            acc += w * self.gamma[(i, i)].re;
        }
        acc
    }

    pub fn hermiticity_error(&self) -> R {
        let mut worst = R::zero();
        for i in 0..self.gamma.nrows() {
            for j in 0..self.gamma.ncols() {
                let d = (self.gamma[(i, j)] - self.gamma[(j, i)].conj()).norm();
                if d > worst {
                    worst = d;
                }
            }
        }
        worst
    }

    pub fn symmetry_error(&self) -> R {
        let mut worst = R::zero();
        for i in 0..self.alpha.nrows() {
            for j in 0..self.alpha.ncols() {
                let d = (self.alpha[(i, j)] - self.alpha[(j, i)]).norm();
                if d > worst {
                    worst = d;
                }
            }
        }
        worst
    }

    /// ‖α ᾱ − γ(1+γ)‖_F: zero for pure quasi-free states evolved from the
    /// vacuum.
    pub fn purity_error(&self) -> R {
        let alpha_bar = self.alpha.mapv(|v| v.conj());
        let lhs = self.alpha.dot(&alpha_bar);
        let eye: Array2<Cx<R>> = Array2::eye(self.gamma.nrows());
        let rhs = self.gamma.dot(&(&eye + &self.gamma));
        crate::linalg::frobenius_distance(&lhs, &rhs)
    }

    pub fn smallest_gamma_eigenvalue(&self) -> R {
        hermitian_eigenvalues(&self.gamma)[0]
    }
}

/// Monitor record along a density-matrix evolution.
#[derive(Clone, Debug)]
pub struct DensityMonitor<R: Real> {
    pub time: R,
    pub trace_gamma: R,
    pub kinetic: R,
    pub purity_error: R,
    pub hermiticity_error: R,
    pub symmetry_error: R,
}

fn commutator_rhs<R: Real>(
    gamma: &Array2<Cx<R>>,
    alpha: &Array2<Cx<R>>,
    a: &Array2<Cx<R>>,
    b: &Array2<Cx<R>>,
) -> (Array2<Cx<R>>, Array2<Cx<R>>) {
    let minus_i = Cx::new(R::zero(), -R::one());
    let alpha_bar = alpha.mapv(|v| v.conj());
    let b_bar = b.mapv(|v| v.conj());
    // i∂γ = Aγ − γA + Bᾱ − αB̄
    let dgamma = (&a.dot(gamma) - &gamma.dot(a) + &b.dot(&alpha_bar) - &alpha.dot(&b_bar))
        .mapv(|v| v * minus_i);
    // i∂α = Aα + αAᵀ + B + Bγᵀ + γB
    let a_t = a.t().to_owned();
    let gamma_t = gamma.t().to_owned();
    let dalpha = (&(&a.dot(alpha) + &alpha.dot(&a_t)) + &(b + &(b.dot(&gamma_t) + gamma.dot(b))))
        .mapv(|v| v * minus_i);
    (dgamma, dalpha)
}

/// Classical RK4 integration of the (γ, α) system with the given constant
/// kernels; structure errors (hermiticity, symmetry, purity) are monitored
/// rather than enforced.
pub fn evolve_density_matrices<R: Real>(
    kernels: &PairKernels<R>,
    state0: &BogoliubovState<R>,
    dt: R,
    t_final: R,
    kinetic_weights: &[R],
    monitor_stride: usize,
) -> Result<(BogoliubovState<R>, Vec<DensityMonitor<R>>)> {
    let a = kernels.one_body();
    let b = kernels.k2.clone();
    let steps = (t_final / dt).round().to_f64().expect("finite") as usize;
    let mut gamma = state0.gamma.clone();
    let mut alpha = state0.alpha.clone();
    let mut monitors = Vec::new();
    let two = cast::<R>(2.0);
    let six = cast::<R>(6.0);
    let half = Cx::new(dt / two, R::zero());
    let full = Cx::new(dt, R::zero());
    let record = |g: &Array2<Cx<R>>, al: &Array2<Cx<R>>, t: R, out: &mut Vec<DensityMonitor<R>>| {
        let s = BogoliubovState {
            gamma: g.clone(),
            alpha: al.clone(),
            time: t,
        };
        out.push(DensityMonitor {
            time: t,
            trace_gamma: s.trace_gamma(),
            kinetic: s.weighted_trace(kinetic_weights),
            purity_error: s.purity_error(),
            hermiticity_error: s.hermiticity_error(),
            symmetry_error: s.symmetry_error(),
        });
    };
    record(&gamma, &alpha, R::zero(), &mut monitors);

    for step in 1..=steps {
        let (k1g, k1a) = commutator_rhs(&gamma, &alpha, &a, &b);
        let g2 = &gamma + &k1g.mapv(|v| v * half);
        let a2 = &alpha + &k1a.mapv(|v| v * half);
        let (k2g, k2a) = commutator_rhs(&g2, &a2, &a, &b);
        let g3 = &gamma + &k2g.mapv(|v| v * half);
        let a3 = &alpha + &k2a.mapv(|v| v * half);
        let (k3g, k3a) = commutator_rhs(&g3, &a3, &a, &b);
        let g4 = &gamma + &k3g.mapv(|v| v * full);
        let a4 = &alpha + &k3a.mapv(|v| v * full);
        let (k4g, k4a) = commutator_rhs(&g4, &a4, &a, &b);
        let wsum = |k1: &Array2<Cx<R>>,
                    k2: &Array2<Cx<R>>,
                    k3: &Array2<Cx<R>>,
                    k4: &Array2<Cx<R>>| {
            let mut out = k1.clone();
            out.zip_mut_with(k2, |x, y| *x += *y * two);
            out.zip_mut_with(k3, |x, y| *x += *y * two);
            out.zip_mut_with(k4, |x, y| *x += *y);
            out.mapv(|v| v * Cx::new(dt / six, R::zero()))
        };
        gamma = &gamma + &wsum(&k1g, &k2g, &k3g, &k4g);
        alpha = &alpha + &wsum(&k1a, &k2a, &k3a, &k4a);
        if gamma.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::Instability("non-finite density matrix".into()));
        }
        let t = dt * cast::<R>(step as f64);
        if step % monitor_stride.max(1) == 0 || step == steps {
            record(&gamma, &alpha, t, &mut monitors);
        }
    }
    Ok((
        BogoliubovState {
            gamma,
            alpha,
            time: t_final,
        },
        monitors,
    ))
}


/// Variant of [`evolve_density_matrices`] for a non-constant condensate:
/// kernels are rebuilt from the trajectory snapshots and each RK4 step uses
/// the kernels of the latest snapshot at or before its start time.
pub fn evolve_density_matrices_along<R: Real>(
    traj: &crate::hartree::Trajectory<R>,
    potential: &ThreeBodyPotential<R>,
    modes: &ModeBasis,
    state0: &BogoliubovState<R>,
    dt: R,
    t_final: R,
    kinetic_weights: &[R],
    monitor_stride: usize,
) -> Result<(BogoliubovState<R>, Vec<DensityMonitor<R>>)> {
    if traj.snapshots.is_empty() {
        return Err(Error::InvalidProblem(
            "trajectory carries no snapshots; evolve with a snapshot stride".into(),
        ));
    }
    let kernels: Vec<(R, PairKernels<R>)> = traj
        .snapshots
        .iter()
        .map(|(t, u)| Ok((*t, build_kernels(u, potential, modes)?)))
        .collect::<Result<_>>()?;
    let steps = (t_final / dt).round().to_f64().expect("finite") as usize;
    let mut gamma = state0.gamma.clone();
    let mut alpha = state0.alpha.clone();
    let mut monitors = Vec::new();
    let mut snap_idx = 0usize;
    for step in 0..=steps {
        let t = dt * cast::<R>(step as f64);
        while snap_idx + 1 < kernels.len() && kernels[snap_idx + 1].0 <= t {
            snap_idx += 1;
        }
        if step % monitor_stride.max(1) == 0 || step == steps {
            let state = BogoliubovState {
                gamma: gamma.clone(),
                alpha: alpha.clone(),
                time: t,
            };
            monitors.push(DensityMonitor {
                time: t,
                trace_gamma: state.trace_gamma(),
                kinetic: state.weighted_trace(kinetic_weights),
                purity_error: state.purity_error(),
                hermiticity_error: state.hermiticity_error(),
                symmetry_error: state.symmetry_error(),
            });
        }
        if step == steps {
            break;
        }
        let kern = &kernels[snap_idx].1;
        let one = BogoliubovState {
            gamma,
            alpha,
            time: t,
        };
        let (next, _) = evolve_density_matrices(kern, &one, dt, dt, kinetic_weights, usize::MAX)?;
        gamma = next.gamma;
        alpha = next.alpha;
    }
    Ok((
        BogoliubovState {
            gamma,
            alpha,
            time: t_final,
        },
        monitors,
    ))
}

/// Row of the kernel scaling report: squared Hilbert–Schmidt norms of the
/// kernels at one rescaling parameter N.
#[derive(Clone, Copy, Debug)]
pub struct KernelScalingRow {
    pub n_scaling: u64,
    pub resolved: bool,
    /// ‖K̃₂‖²_HS
    pub hs_k2_tilde: f64,
    /// ‖(1−Δ)^{−1/2} K₂‖²_HS (projected kernel, weight in x)
    pub hs_k2_weighted: f64,
    /// ‖(1−Δ)^{−3/4−ε} K̃₂‖²_HS
    pub hs_k2_tilde_34: f64,
    /// ‖(1−Δ_x)^{−1/2} k_z‖²_HS averaged over sampled z
    pub hs_kz: f64,
}

/// Fitted exponents of the scaling report columns.
#[derive(Clone, Copy, Debug, Default)]
pub struct KernelScalingFit {
    pub k2_tilde: Option<f64>,
    pub k2_weighted: Option<f64>,
    pub k2_tilde_34: Option<f64>,
    pub kz: Option<f64>,
}

pub struct KernelScalingReport {
    pub rows: Vec<KernelScalingRow>,
    pub fit: KernelScalingFit,
    pub epsilon: f64,
}

/// Grid-level Hilbert–Schmidt norms of K̃₂, the projected K₂ and the
/// three-body slice kernel k_z, with Sobolev weights applied spectrally in
/// the x variable, streamed column by column (no dense n³×n³ storage).
pub fn kernel_scaling_report<R: Real>(
    u: &Field<R>,
    family: &ThreeBodyPotential<R>,
    n_list: &[u64],
    epsilon: f64,
    z_samples: &[usize],
) -> Result<KernelScalingReport> {
    let grid = u.grid().clone();
    if grid.n_per_dim() > 16 {
        return Err(Error::DenseTooLarge(
            "kernel norms walk all n³ columns; use grids ≤ 16³".into(),
        ));
    }
    let len = grid.len();
    let cell = grid.cell_volume();
    let density = Field::new(
        grid.clone(),
        u.values().iter().map(|v| Cx::new(v.norm_sqr(), R::zero())).collect(),
    )?;

    let mut rows = Vec::new();
    for &n in n_list {
        let vn = family.with_n(n);
        let resolved = vn.resolves_on(&grid);
        let w = vn.sampled_w_n(&grid);
        let w_field = w.as_field();
        let g = convolve(&w_field, &density)?;

        // helpers for column construction
        let nn = grid.n_per_dim();
        let disp = |a: usize, b: usize| -> usize {
            let (ax, ay, az) = crate::potential::split(a, nn);
            let (bx, by, bz) = crate::potential::split(b, nn);
            grid.index((ax + nn - bx) % nn, (ay + nn - by) % nn, (az + nn - bz) % nn)
        };

        // first pass: c(y) = ⟨u, K̃₂(·,y)⟩ and d(x) = Σ_y conj(u_y) K̃₂(x,y) h³
        // for the Q-projection, plus the plain norms
        let mut hs_k2_tilde = R::zero();
        let mut hs_k2_tilde_34 = R::zero();
        let mut c_proj = vec![Cx::new(R::zero(), R::zero()); len];
        let mut d_proj = vec![Cx::new(R::zero(), R::zero()); len];
        let mut e0 = Cx::new(R::zero(), R::zero());
        let weight34 = cast::<R>(-0.75 - epsilon);

        let mut columns: Vec<Vec<Cx<R>>> = Vec::with_capacity(len);
        for iy in 0..len {
            // K̃₂(·,y) = m(·,y) u(·) u(y); r(·,y) by FFT convolution
            let mut q = Field::zeros(grid.clone());
            for iz in 0..len {
                let wyz = w.values[disp(iy, iz)];
                q.values_mut()[iz] = Cx::new(wyz, R::zero()) * density.values()[iz];
            }
            let r_col = convolve(&w_field, &q)?;
            let third = cast::<R>(1.0 / 3.0);
            let uy = u.values()[iy];
            let gy = g.values()[iy].re;
            let col: Vec<Cx<R>> = (0..len)
                .map(|ix| {
                    let wxy = w.values[disp(ix, iy)];
                    let m_val =
                        (Cx::new(wxy * (g.values()[ix].re + gy), R::zero()) + r_col.values()[ix])
                            .scale(third);
                    m_val * u.values()[ix] * uy
                })
                .collect();
            for (ix, v) in col.iter().enumerate() {
                hs_k2_tilde += v.norm_sqr();
                c_proj[iy] += u.values()[ix].conj() * *v * Cx::new(cell, R::zero());
                d_proj[ix] += u.values()[iy].conj() * *v * Cx::new(cell, R::zero());
                e0 += u.values()[ix].conj() * u.values()[iy].conj() * *v
                    * Cx::new(cell * cell, R::zero());
            }
            // weighted K̃₂ column (x-variable spectral weight)
            let col_field = Field::new(grid.clone(), col.clone())?;
            let wcol = col_field
                .apply_spectral(|_, ksq| Cx::new((R::one() + ksq).powf(weight34), R::zero()));
            for v in wcol.values() {
                hs_k2_tilde_34 += v.norm_sqr();
            }
            columns.push(col);
        }
        hs_k2_tilde *= cell * cell;
        hs_k2_tilde_34 *= cell * cell;

        // second pass: projected K₂ = (Q⊗Q)K̃₂ column, then (1−Δ_x)^{-1/2}
        let mut hs_k2_weighted = R::zero();
        let weight_half = cast::<R>(-0.5);
        for iy in 0..len {
            let uy = u.values()[iy];
            let col: Vec<Cx<R>> = (0..len)
                .map(|ix| {
                    columns[iy][ix] - u.values()[ix] * c_proj[iy] - d_proj[ix] * uy
                        + u.values()[ix] * uy * e0
                })
                .collect();
            let col_field = Field::new(grid.clone(), col)?;
            let wcol = col_field
                .apply_spectral(|_, ksq| Cx::new((R::one() + ksq).powf(weight_half), R::zero()));
            for v in wcol.values() {
                hs_k2_weighted += v.norm_sqr();
            }
        }
        hs_k2_weighted *= cell * cell;

        // k_z(x,y) = u(x)u(y)V_N(x−y,x−z) at sampled z, weighted in x
        let mut hs_kz = R::zero();
        for &iz in z_samples {
            let mut acc = R::zero();
            for iy in 0..len {
                let wyz = w.values[disp(iy, iz)];
                let col: Vec<Cx<R>> = (0..len)
                    .map(|ix| {
                        let wxy = w.values[disp(ix, iy)];
                        let wxz = w.values[disp(ix, iz)];
                        let v = (wxy * wxz + wxy * wyz + wxz * wyz) / cast::<R>(3.0);
                        u.values()[ix] * u.values()[iy] * v
                    })
                    .collect();
                let col_field = Field::new(grid.clone(), col)?;
                let wcol = col_field.apply_spectral(|_, ksq| {
                    Cx::new((R::one() + ksq).powf(weight_half), R::zero())
                });
                for v in wcol.values() {
                    acc += v.norm_sqr();
                }
            }
            hs_kz += acc * cell * cell;
        }
        if !z_samples.is_empty() {
            hs_kz /= cast_usize::<R>(z_samples.len());
        }

        rows.push(KernelScalingRow {
            n_scaling: n,
            resolved,
            hs_k2_tilde: hs_k2_tilde.to_f64().unwrap_or(f64::NAN),
            hs_k2_weighted: hs_k2_weighted.to_f64().unwrap_or(f64::NAN),
            hs_k2_tilde_34: hs_k2_tilde_34.to_f64().unwrap_or(f64::NAN),
            hs_kz: hs_kz.to_f64().unwrap_or(f64::NAN),
        });
    }

    let fit_of = |pick: &dyn Fn(&KernelScalingRow) -> f64| -> Option<f64> {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.resolved)
            .map(|r| (r.n_scaling as f64, pick(r)))
            .collect();
        loglog_slope(&pts)
    };
    let fit = KernelScalingFit {
        k2_tilde: fit_of(&|r| r.hs_k2_tilde),
        k2_weighted: fit_of(&|r| r.hs_k2_weighted),
        k2_tilde_34: fit_of(&|r| r.hs_k2_tilde_34),
        kz: fit_of(&|r| r.hs_kz),
    };
    Ok(KernelScalingReport { rows, fit, epsilon })
}

/// Outcome of the pairing-term certification
/// ±½∬(K a*a* + h.c.) ≤ dΓ(H) + ½‖H^{−1/2}K‖² on a truncated Fock space.
#[derive(Clone, Copy, Debug)]
pub struct PairingCertificate {
    /// smallest eigenvalue of dΓ(H) + pairing + shift
    pub min_eig_plus: f64,
    /// smallest eigenvalue of dΓ(H) − pairing + shift
    pub min_eig_minus: f64,
    /// the additive constant ½‖H^{−1/2}K‖²_HS
    pub shift: f64,
    /// 1 − λ_max(H^{−1/2} K H^{−1} K† H^{−1/2}); ≥ 0 when the hypothesis
    /// K H^{−1} K† ≤ H holds
    pub precondition_margin: f64,
}

/// Assemble dΓ(H) ± pairing(K) + ½‖H^{−1/2}K‖² on the occupation basis with
/// particle cutoff `p_cut` and certify nonnegativity of the bottom
/// eigenvalue. H is diagonal positive; K symmetric. The matrix hypothesis
/// K H^{−1} K† ≤ H is verified first.
pub fn certify_pairing_bound<R: Real>(
    h_diag: &[R],
    k: &Array2<Cx<R>>,
    p_cut: usize,
) -> Result<PairingCertificate> {
    let m = h_diag.len();
    if k.nrows() != m || k.ncols() != m {
        return Err(Error::SizeMismatch("K must be M×M".into()));
    }
    if h_diag.iter().any(|&h| h <= R::zero()) {
        return Err(Error::PreconditionViolated("H must be positive".into()));
    }
    for i in 0..m {
        for j in 0..m {
            if (k[(i, j)] - k[(j, i)]).norm() > cast::<R>(1e-12) {
                return Err(Error::PreconditionViolated(
                    "K must have a symmetric kernel".into(),
                ));
            }
        }
    }
    // precondition K H^{-1} K† ≤ H  ⇔  λ_max(H^{-1/2} K H^{-1} K† H^{-1/2}) ≤ 1
    let mut m_mat = Array2::zeros((m, m));
    for i in 0..m {
        for j in 0..m {
            let mut acc = Cx::new(R::zero(), R::zero());
            for l in 0..m {
                acc += k[(i, l)] * k[(j, l)].conj() / h_diag[l];
            }
            m_mat[(i, j)] = acc / (h_diag[i] * h_diag[j]).sqrt();
        }
    }
    let lam_max = *hermitian_eigenvalues(&m_mat)
        .last()
        .expect("nonempty spectrum");
    let margin = (R::one() - lam_max).to_f64().unwrap_or(f64::NAN);
    if margin < -1e-10 {
        return Err(Error::PreconditionViolated(format!(
            "K H^-1 K* ≤ H fails: λ_max = {}",
            1.0 - margin
        )));
    }

    let basis = FockBasis::new(m, p_cut)?;
    if basis.dim() > 5000 {
        return Err(Error::DimensionOverflow(format!(
            "dense certification limited to dimension 5000, got {}",
            basis.dim()
        )));
    }
    let dgh = d_gamma_diag(&basis, h_diag);
    let pairing = pairing_operator(&basis, k);
    let mut shift = R::zero();
    for i in 0..m {
        for j in 0..m {
            shift += k[(i, j)].norm_sqr() / h_diag[i];
        }
    }
    shift /= cast::<R>(2.0);
    let shift_op = FockOperator::identity(basis.dim()).scaled(Cx::new(shift, R::zero()));

    let mut out = [0.0f64; 2];
    for (slot, sign) in [(0usize, R::one()), (1, -R::one())] {
        let op = dgh
            .add_scaled(Cx::new(sign, R::zero()), &pairing)
            .add(&shift_op);
        let eigs = hermitian_eigenvalues(&op.to_dense());
        out[slot] = eigs[0].to_f64().unwrap_or(f64::NAN);
    }
    Ok(PairingCertificate {
        min_eig_plus: out[0],
        min_eig_minus: out[1],
        shift: shift.to_f64().unwrap_or(f64::NAN),
        precondition_margin: margin,
    })
}
