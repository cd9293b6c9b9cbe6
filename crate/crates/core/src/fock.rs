//! Truncated bosonic Fock space over finitely many excited plane-wave
//! modes: creation/annihilation algebra, second quantization dΓ, the
//! quadratic pair-excitation generator, the cubic-and-higher correction
//! terms R₀…R₆ of the transformed many-body generator together with the
//! scalar phase rate χ, truncated propagation, and eigenvalue certification
//! of the quadratic-form error bounds.
//!
//! The condensate is restricted to the constant zero mode here, which makes
//! the excited space the span of nonzero plane waves and reduces every
//! mode-coupling coefficient to momentum-conserving contractions of the
//! Fourier transform of the rescaled pair bump. The few-body module
//! exercises the same formulas for a general condensate on a tiny lattice.

use crate::bogoliubov::ModeBasis;
use crate::grid::Field;
use crate::linalg::{hermitian_eigenvalues, lanczos_expv};
use crate::potential::ThreeBodyPotential;
use crate::scalar::{cast, Cx, Real};
use crate::{Error, Result};
use ndarray::Array2;
use num_traits::Float;
use std::collections::HashMap;
use std::sync::Arc;

/// Enumerated occupation basis (n₁,…,n_M) with Σnᵢ ≤ P.
pub struct FockBasis {
    n_modes: usize,
    p_cut: usize,
    states: Vec<Vec<u8>>,
    index: HashMap<Vec<u8>, usize>,
    sector: Vec<usize>,
}

impl FockBasis {
    pub fn new(n_modes: usize, p_cut: usize) -> Result<Arc<Self>> {
        if n_modes == 0 {
            return Err(Error::InvalidGrid("need at least one mode".into()));
        }
        let dim = binomial(n_modes + p_cut, n_modes);
        if dim > 200_000 {
            return Err(Error::DimensionOverflow(format!(
                "Fock basis dimension {dim} too large"
            )));
        }
        let mut states = Vec::with_capacity(dim);
        let mut current = vec![0u8; n_modes];
        enumerate(&mut states, &mut current, 0, p_cut);
        states.sort_by_key(|s| {
            (
                s.iter().map(|&x| x as usize).sum::<usize>(),
                s.iter().map(|&x| x as usize).collect::<Vec<_>>(),
            )
        });
        let index: HashMap<Vec<u8>, usize> = states
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        let sector = states
            .iter()
            .map(|s| s.iter().map(|&x| x as usize).sum())
            .collect();
        Ok(Arc::new(Self {
            n_modes,
            p_cut,
            states,
            index,
            sector,
        }))
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn p_cut(&self) -> usize {
        self.p_cut
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn state(&self, i: usize) -> &[u8] {
        &self.states[i]
    }

    pub fn index_of(&self, occ: &[u8]) -> Option<usize> {
        self.index.get(occ).copied()
    }

    /// Total particle number of basis state i.
    pub fn sector(&self, i: usize) -> usize {
        self.sector[i]
    }

    /// Index of the vacuum.
    pub fn vacuum_index(&self) -> usize {
        self.index_of(&vec![0u8; self.n_modes]).expect("vacuum")
    }

    pub fn sector_mask(&self, max_sector: usize) -> Vec<bool> {
        self.sector.iter().map(|&s| s <= max_sector).collect()
    }
}

fn enumerate(out: &mut Vec<Vec<u8>>, current: &mut Vec<u8>, mode: usize, budget: usize) {
    if mode == current.len() {
        out.push(current.clone());
        return;
    }
    for n in 0..=budget {
        current[mode] = n as u8;
        enumerate(out, current, mode + 1, budget - n);
    }
    current[mode] = 0;
}

fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as usize
}

/// Coefficient vector on a [`FockBasis`].
#[derive(Clone)]
pub struct FockVector<R: Real> {
    pub basis: Arc<FockBasis>,
    pub coeffs: Vec<Cx<R>>,
}

impl<R: Real> FockVector<R> {
    pub fn zeros(basis: Arc<FockBasis>) -> Self {
        let dim = basis.dim();
        Self {
            basis,
            coeffs: vec![Cx::new(R::zero(), R::zero()); dim],
        }
    }

    pub fn vacuum(basis: Arc<FockBasis>) -> Self {
        let mut v = Self::zeros(basis);
        let idx = v.basis.vacuum_index();
        v.coeffs[idx] = Cx::new(R::one(), R::zero());
        v
    }

    pub fn norm(&self) -> R {
        crate::linalg::norm(&self.coeffs)
    }

    /// Weight per particle-number sector.
    pub fn sector_weights(&self) -> Vec<R> {
        let mut w = vec![R::zero(); self.basis.p_cut() + 1];
        for (i, c) in self.coeffs.iter().enumerate() {
            w[self.basis.sector(i)] += c.norm_sqr();
        }
        w
    }

    /// Weight above a sector cutoff.
    pub fn leakage_above(&self, m: usize) -> R {
        let mut acc = R::zero();
        for (i, c) in self.coeffs.iter().enumerate() {
            if self.basis.sector(i) > m {
                acc += c.norm_sqr();
            }
        }
        acc
    }
}

/// Sparse operator on a truncated Fock space (CSR). Creation amplitudes
/// that would leave the cutoff are dropped and their squared magnitude
/// accumulated as the truncation leakage.
pub struct FockOperator<R: Real> {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<Cx<R>>,
    dropped_norm_sq: R,
}

impl<R: Real> FockOperator<R> {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            row_ptr: vec![0; dim + 1],
            cols: Vec::new(),
            vals: Vec::new(),
            dropped_norm_sq: R::zero(),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            row_ptr: (0..=dim).collect(),
            cols: (0..dim as u32).collect(),
            vals: vec![Cx::new(R::one(), R::zero()); dim],
            dropped_norm_sq: R::zero(),
        }
    }

    /// Accumulated magnitude of cutoff-dropped transitions.
    pub fn truncation_leakage(&self) -> R {
        self.dropped_norm_sq.sqrt()
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn apply(&self, v: &[Cx<R>]) -> Vec<Cx<R>> {
        assert_eq!(v.len(), self.dim);
        let mut out = vec![Cx::new(R::zero(), R::zero()); self.dim];
        for row in 0..self.dim {
            let mut acc = Cx::new(R::zero(), R::zero());
            for p in self.row_ptr[row]..self.row_ptr[row + 1] {
                acc += self.vals[p] * v[self.cols[p] as usize];
            }
            out[row] = acc;
        }
        out
    }

    pub fn expectation(&self, v: &[Cx<R>]) -> Cx<R> {
        crate::linalg::inner(v, &self.apply(v))
    }

    pub fn adjoint(&self) -> Self {
        let mut trips = Vec::with_capacity(self.vals.len());
        for row in 0..self.dim {
            for p in self.row_ptr[row]..self.row_ptr[row + 1] {
                trips.push((self.cols[p], row as u32, self.vals[p].conj()));
            }
        }
        Self::from_triplets(self.dim, trips, self.dropped_norm_sq)
    }

    pub fn scaled(&self, s: Cx<R>) -> Self {
        Self {
            dim: self.dim,
            row_ptr: self.row_ptr.clone(),
            cols: self.cols.clone(),
            vals: self.vals.iter().map(|v| *v * s).collect(),
            dropped_norm_sq: self.dropped_norm_sq,
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let mut trips = Vec::with_capacity(self.vals.len() + other.vals.len());
        for op in [self, other] {
            for row in 0..op.dim {
                for p in op.row_ptr[row]..op.row_ptr[row + 1] {
                    trips.push((row as u32, op.cols[p], op.vals[p]));
                }
            }
        }
        Self::from_triplets(
            self.dim,
            trips,
            self.dropped_norm_sq + other.dropped_norm_sq,
        )
    }

    /// self + s·other
    pub fn add_scaled(&self, s: Cx<R>, other: &Self) -> Self {
        self.add(&other.scaled(s))
    }

    /// Symmetrized sum op + op†.
    pub fn plus_adjoint(&self) -> Self {
        self.add(&self.adjoint())
    }

    pub fn from_triplets(dim: usize, mut trips: Vec<(u32, u32, Cx<R>)>, dropped: R) -> Self {
        trips.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; dim + 1];
        let mut cols = Vec::with_capacity(trips.len());
        let mut vals: Vec<Cx<R>> = Vec::with_capacity(trips.len());
        let mut last: Option<(u32, u32)> = None;
        for (r, c, v) in trips {
            if last == Some((r, c)) {
                let idx = vals.len() - 1;
                vals[idx] += v;
            } else {
                row_ptr[r as usize + 1] += 1;
                cols.push(c);
                vals.push(v);
                last = Some((r, c));
            }
        }
        for i in 0..dim {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            dim,
            row_ptr,
            cols,
            vals,
            dropped_norm_sq: dropped,
        }
    }

    pub fn to_dense(&self) -> Array2<Cx<R>> {
        let mut m = Array2::zeros((self.dim, self.dim));
        for row in 0..self.dim {
            for p in self.row_ptr[row]..self.row_ptr[row + 1] {
                m[(row, self.cols[p] as usize)] = self.vals[p];
            }
        }
        m
    }

    /// Max |A − A†| entry.
    pub fn hermiticity_defect(&self) -> R {
        let d = self.to_dense();
        let mut worst = R::zero();
        for i in 0..self.dim {
            for j in 0..self.dim {
                let diff = (d[(i, j)] - d[(j, i)].conj()).norm();
                if diff > worst {
                    worst = diff;
                }
            }
        }
        worst
    }

    /// Dense compression 1^{≤m}·A·1^{≤m} onto the sectors ≤ m, with the
    /// retained indices.
    pub fn sector_block(
        &self,
        basis: &FockBasis,
        max_sector: usize,
    ) -> (Array2<Cx<R>>, Vec<usize>) {
        let keep: Vec<usize> = (0..self.dim)
            .filter(|&i| basis.sector(i) <= max_sector)
            .collect();
        let pos: HashMap<usize, usize> = keep.iter().enumerate().map(|(a, &b)| (b, a)).collect();
        let mut m = Array2::zeros((keep.len(), keep.len()));
        for (bi, &row) in keep.iter().enumerate() {
            for p in self.row_ptr[row]..self.row_ptr[row + 1] {
                if let Some(&bj) = pos.get(&(self.cols[p] as usize)) {
                    m[(bi, bj)] = self.vals[p];
                }
            }
        }
        (m, keep)
    }
}

/// Incremental triplet builder with cutoff-drop accounting.
struct OperatorBuilder<R: Real> {
    dim: usize,
    trips: Vec<(u32, u32, Cx<R>)>,
    dropped_sq: R,
}

impl<R: Real> OperatorBuilder<R> {
    fn new(dim: usize) -> Self {
        Self {
            dim,
            trips: Vec::new(),
            dropped_sq: R::zero(),
        }
    }

    fn push(&mut self, row: usize, col: usize, val: Cx<R>) {
        if val.norm_sqr() > R::zero() {
            self.trips.push((row as u32, col as u32, val));
        }
    }

    fn drop_entry(&mut self, val: Cx<R>) {
        self.dropped_sq += val.norm_sqr();
    }

    fn finish(self) -> FockOperator<R> {
        FockOperator::from_triplets(self.dim, self.trips, self.dropped_sq)
    }
}

pub enum LadderKind {
    Create,
    Annihilate,
}

/// Single-mode ladder operator with standard √n matrix elements; creation
/// drops transitions exceeding the particle cutoff.
pub fn ladder<R: Real>(basis: &Arc<FockBasis>, mode: usize, kind: LadderKind) -> FockOperator<R> {
    assert!(mode < basis.n_modes());
    let mut b = OperatorBuilder::new(basis.dim());
    for col in 0..basis.dim() {
        let occ = basis.state(col);
        match kind {
            LadderKind::Annihilate => {
                if occ[mode] > 0 {
                    let mut target = occ.to_vec();
                    target[mode] -= 1;
                    let amp = cast::<R>(occ[mode] as f64).sqrt();
                    let row = basis.index_of(&target).expect("sector below cutoff");
                    b.push(row, col, Cx::new(amp, R::zero()));
                }
            }
            LadderKind::Create => {
                let amp = cast::<R>((occ[mode] + 1) as f64).sqrt();
                if basis.sector(col) + 1 > basis.p_cut() {
                    b.drop_entry(Cx::new(amp, R::zero()));
                } else {
                    let mut target = occ.to_vec();
                    target[mode] += 1;
                    let row = basis.index_of(&target).expect("inside cutoff");
                    b.push(row, col, Cx::new(amp, R::zero()));
                }
            }
        }
    }
    b.finish()
}

/// Second quantization dΓ(A) = Σ A_{pq} a*_p a_q of a one-body matrix.
pub fn d_gamma<R: Real>(basis: &Arc<FockBasis>, a: &Array2<Cx<R>>) -> FockOperator<R> {
    let m = basis.n_modes();
    assert_eq!(a.nrows(), m);
    assert_eq!(a.ncols(), m);
    let mut b = OperatorBuilder::new(basis.dim());
    for col in 0..basis.dim() {
        let occ = basis.state(col);
        for q in 0..m {
            if occ[q] == 0 {
                continue;
            }
            for p in 0..m {
                let v = a[(p, q)];
                if v.norm_sqr() == R::zero() {
                    continue;
                }
                let nq = occ[q] as f64;
                let np_after = if p == q { nq } else { occ[p] as f64 + 1.0 };
                let amp = (nq * np_after).sqrt();
                let mut target = occ.to_vec();
                target[q] -= 1;
                target[p] += 1;
                let row = basis.index_of(&target).expect("sector preserved");
                b.push(row, col, v * cast::<R>(amp));
            }
        }
    }
    b.finish()
}

/// dΓ(diag) for a diagonal one-body operator.
pub fn d_gamma_diag<R: Real>(basis: &Arc<FockBasis>, diag: &[R]) -> FockOperator<R> {
    let m = basis.n_modes();
    assert_eq!(diag.len(), m);
    let mut b = OperatorBuilder::new(basis.dim());
    for col in 0..basis.dim() {
        let occ = basis.state(col);
        let mut acc = R::zero();
        for (q, &d) in diag.iter().enumerate() {
            acc += cast::<R>(occ[q] as f64) * d;
        }
        b.push(col, col, Cx::new(acc, R::zero()));
    }
    b.finish()
}

/// ½ Σ_{ab} (K_{ab} a*_a a*_b + conj(K_{ab}) a_b a_a) for a symmetric K
/// (the pairing part of a quadratic Hamiltonian).
pub fn pairing_operator<R: Real>(basis: &Arc<FockBasis>, k: &Array2<Cx<R>>) -> FockOperator<R> {
    let create = pair_create_with_factor(basis, k, |_| R::one());
    let half = Cx::new(cast::<R>(0.5), R::zero());
    create.scaled(half).add(&create.adjoint().scaled(half))
}

/// Σ_{ab} K_{ab} a*_a a*_b · f(𝒩), the diagonal factor evaluated on the
/// input sector.
fn pair_create_with_factor<R: Real>(
    basis: &Arc<FockBasis>,
    k: &Array2<Cx<R>>,
    factor: impl Fn(usize) -> R,
) -> FockOperator<R> {
    let m = basis.n_modes();
    let mut b = OperatorBuilder::new(basis.dim());
    for col in 0..basis.dim() {
        let occ = basis.state(col);
        let s = basis.sector(col);
        let f = factor(s);
        if f == R::zero() {
            continue;
        }
        for a_m in 0..m {
            for b_m in 0..m {
                let v = k[(a_m, b_m)];
                if v.norm_sqr() == R::zero() {
                    continue;
                }
                // a*_b then a*_a
                let amp_b = (occ[b_m] as f64 + 1.0).sqrt();
                let amp_a = if a_m == b_m {
                    (occ[a_m] as f64 + 2.0).sqrt()
                } else {
                    (occ[a_m] as f64 + 1.0).sqrt()
                };
                let val = v * cast::<R>(amp_a * amp_b) * Cx::new(f, R::zero());
                if s + 2 > basis.p_cut() {
                    b.drop_entry(val);
                    continue;
                }
                let mut target = occ.to_vec();
                target[b_m] += 1;
                target[a_m] += 1;
                let row = basis.index_of(&target).expect("inside cutoff");
                b.push(row, col, val);
            }
        }
    }
    b.finish()
}

/// √max(N−s−j, 0); the clamping matches the convention that these factors
/// vanish on high sectors.
#[inline]
fn sqrt_clamped<R: Real>(n_phys: f64, s: usize, j: usize) -> R {
    let v = n_phys - s as f64 - j as f64;
    if v > 0.0 {
        cast::<R>(v.sqrt())
    } else {
        R::zero()
    }
}

/// Fourier data of the sampled pair bump: Ŵ(k) = ∫ w_N e^{-ik·x} on a cube
/// of integer wavevectors large enough for all momentum contractions.
pub struct ModeCoupling<R: Real> {
    range: i32,
    side: usize,
    table: Vec<R>,
}

impl<R: Real> ModeCoupling<R> {
    pub fn from_grid(w_field: &Field<R>, range: i32) -> Result<Self> {
        let grid = w_field.grid();
        if range as usize >= grid.n_per_dim() / 2 {
            return Err(Error::CutoffTooLarge(format!(
                "coupling table needs wavevectors to ±{range}, grid resolves only ±{}",
                grid.n_per_dim() / 2 - 1
            )));
        }
        let coeffs = w_field.spectral();
        let vol = grid.volume();
        let side = (2 * range + 1) as usize;
        let mut table = vec![R::zero(); side * side * side];
        for kx in -range..=range {
            for ky in -range..=range {
                for kz in -range..=range {
                    let c = coeffs[grid.bin([kx, ky, kz])];
                    let idx = ((kx + range) as usize * side + (ky + range) as usize) * side
                        + (kz + range) as usize;
                    table[idx] = c.re * vol;
                }
            }
        }
        Ok(Self { range, side, table })
    }

    /// Ŵ(k); zero outside the tabulated cube (assembly validates the range
    /// needed beforehand).
    #[inline]
    pub fn w_hat(&self, k: [i32; 3]) -> R {
        for c in k {
            if c.abs() > self.range {
                return R::zero();
            }
        }
        let idx = ((k[0] + self.range) as usize * self.side + (k[1] + self.range) as usize)
            * self.side
            + (k[2] + self.range) as usize;
        self.table[idx]
    }

    /// V̂_N(p,q) = (Ŵ(p)Ŵ(q) + Ŵ(q)Ŵ(p+q) + Ŵ(p)Ŵ(p+q))/3 for the
    /// pair-product-sum form.
    #[inline]
    pub fn v_hat(&self, p: [i32; 3], q: [i32; 3]) -> R {
        let pq = [p[0] + q[0], p[1] + q[1], p[2] + q[2]];
        let wp = self.w_hat(p);
        let wq = self.w_hat(q);
        let wpq = self.w_hat(pq);
        (wp * wq + wq * wpq + wp * wpq) / cast::<R>(3.0)
    }

    /// Ŵ₂(k) = V̂_N(k, 0): transform of x ↦ ∫V_N(x, s) ds.
    #[inline]
    pub fn w2_hat(&self, k: [i32; 3]) -> R {
        self.v_hat(k, [0, 0, 0])
    }
}

/// The transformed-dynamics generator on the truncated Fock space for the
/// constant condensate: quadratic part, correction terms, phase rate and
/// monitor operators.
pub struct GeneratorBundle<R: Real> {
    pub n_phys: u64,
    pub chi: R,
    pub bogoliubov: FockOperator<R>,
    pub r: Vec<FockOperator<R>>,
    pub number_op: FockOperator<R>,
    pub kinetic_op: FockOperator<R>,
    pub basis: Arc<FockBasis>,
    pub modes: ModeBasis,
    /// 𝔹 + ½ Σ (R_j + R_j†)
    pub h_tilde: FockOperator<R>,
    /// diag of h + K₁ in the mode basis (shared with the density-matrix side)
    pub one_body_diag: Vec<R>,
    /// K₂ matrix in the mode basis
    pub k2: Array2<Cx<R>>,
}

fn neg(k: [i32; 3]) -> [i32; 3] {
    [-k[0], -k[1], -k[2]]
}

fn add3(a: [i32; 3], b: [i32; 3]) -> [i32; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn sub3(a: [i32; 3], b: [i32; 3]) -> [i32; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Assemble the full generator bundle for the constant condensate
/// u = (2π)^{-3/2}. All mode couplings come from the grid quadrature of the
/// sampled potential (its FFT), so closed-form cross-checks hold to
/// roundoff against the same discretization.
pub fn assemble_generator<R: Real>(
    u: &Field<R>,
    potential: &ThreeBodyPotential<R>,
    modes: &ModeBasis,
    basis: &Arc<FockBasis>,
    n_phys: u64,
) -> Result<GeneratorBundle<R>> {
    if basis.n_modes() != modes.len() {
        return Err(Error::SizeMismatch(format!(
            "Fock basis has {} modes, mode basis {}",
            basis.n_modes(),
            modes.len()
        )));
    }
    let grid = u.grid().clone();
    let amp = grid.volume().sqrt().recip();
    for v in u.values() {
        if (v - Cx::new(amp, R::zero())).norm() > cast::<R>(1e-10) {
            return Err(Error::UnsupportedCondensate(
                "Fock-space generator assembly requires the constant condensate (2π)^{-3/2}"
                    .into(),
            ));
        }
    }
    let max_comp = modes
        .modes()
        .iter()
        .flat_map(|k| k.iter().map(|c| c.abs()))
        .max()
        .unwrap_or(0);
    let w_field = potential.sampled_w_n(&grid).as_field();
    let coupling = ModeCoupling::from_grid(&w_field, 4 * max_comp)?;

    let rho = grid.volume().recip();
    let rho2 = rho * rho;
    let n = n_phys as f64;
    let nf = cast::<R>(n);
    let n2 = nf * nf;
    let dim = basis.dim();
    let mlist = modes.modes().to_vec();
    let m = mlist.len();

    // scalar couplings
    let w0 = coupling.w_hat([0, 0, 0]);
    let triple_self = rho2 * w0 * w0; // ⟨u⊗³, V_N u⊗³⟩
    let f_v = triple_self / cast::<R>(2.0); // the constant Hartree potential
    let chi = cast::<R>((2.0 * n + 3.0) / 6.0) * triple_self;

    // one-body pieces: h = |k|² + f_V, K₁ = ρ²Ŵ₂(k) (both diagonal)
    let ksq = |k: [i32; 3]| cast::<R>((k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64);
    let k1_diag: Vec<R> = mlist.iter().map(|&k| rho2 * coupling.w2_hat(k)).collect();
    let one_body_diag: Vec<R> = mlist
        .iter()
        .zip(&k1_diag)
        .map(|(&k, &k1)| ksq(k) + f_v + k1)
        .collect();

    // K₂ matrix: ρ²Ŵ₂(k_a) on pairs (a, mate(a))
    let mut k2 = Array2::zeros((m, m));
    for a in 0..m {
        let b = modes.negation_index(a);
        k2[(a, b)] = Cx::new(rho2 * coupling.w2_hat(mlist[a]), R::zero());
    }

    // 𝔹 = dΓ(h + K₁) + pairing(K₂)
    let bogoliubov = d_gamma_diag(basis, &one_body_diag).add(&pairing_operator(basis, &k2));

    // monitors
    let number_op = d_gamma_diag(basis, &vec![R::one(); m]);
    let kin_diag: Vec<R> = mlist.iter().map(|&k| R::one() + ksq(k)).collect();
    let kinetic_op = d_gamma_diag(basis, &kin_diag);

    // --- correction terms ---

    // R₀: scalar part + dΓ(Q(f_V + K̃₁)Q)·((N−𝒩)(N−𝒩−1)/N² − 1)
    let r0 = {
        let mut b = OperatorBuilder::new(dim);
        for col in 0..dim {
            let occ = basis.state(col);
            let s = basis.sector(col) as f64;
            let scalar = triple_self / cast::<R>(6.0)
                * cast::<R>(
                    (3.0 * s * s + 6.0 * s + 2.0) / n - s * (s + 1.0) * (s + 2.0) / (n * n),
                );
            let mut dg = R::zero();
            for (q, &occq) in occ.iter().enumerate() {
                dg += cast::<R>(occq as f64) * (f_v + k1_diag[q]);
            }
            let factor = cast::<R>(((n - s) * (n - s - 1.0)) / (n * n) - 1.0);
            b.push(col, col, Cx::new(scalar + dg * factor, R::zero()));
        }
        b.finish()
    };

    // R₁ vanishes for the constant condensate: the annihilated function
    // 2 f_V u is parallel to u, and Q kills it.
    let r1 = FockOperator::zero(dim);

    // R₂ = Σ K₂(a,b) a*_a a*_b (√(N−𝒩−1)√(N−𝒩)(N−𝒩−2)/N² − 1)
    let r2 = pair_create_with_factor(basis, &k2, |s| {
        sqrt_clamped::<R>(n, s, 1) * sqrt_clamped::<R>(n, s, 0) * cast::<R>(n - s as f64 - 2.0)
            / n2
            - R::one()
    });

    // R₃ = (ρ²/3N²) Σ_{k+l+m=0} V̂(l,m) a*a*a* √(N−𝒩−2)√(N−𝒩−1)√(N−𝒩)
    //    + (2ρ²/N²) Σ Ŵ₂(l) a*_k a*_l a_{k+l} √(N−𝒩)(N−𝒩−1)
    //    + (ρ²/N²) Σ V̂(−l,k+l) a*_k a*_l a_{k+l} √(N−𝒩)(N−𝒩−1)
    let r3 = {
        let mut b = OperatorBuilder::new(dim);
        for col in 0..dim {
            let occ = basis.state(col);
            let s = basis.sector(col);
            let d31 = sqrt_clamped::<R>(n, s, 0)
                * sqrt_clamped::<R>(n, s, 1)
                * sqrt_clamped::<R>(n, s, 2);
            if d31 != R::zero() {
                for li in 0..m {
                    for mi in 0..m {
                        let k = neg(add3(mlist[li], mlist[mi]));
                        if let Some(ki) = modes.index_of(k) {
                            let coeff =
                                rho2 * coupling.v_hat(mlist[li], mlist[mi]) / (cast::<R>(3.0) * n2);
                            create3(
                                &mut b,
                                basis,
                                col,
                                occ,
                                [ki, li, mi],
                                Cx::new(coeff * d31, R::zero()),
                            );
                        }
                    }
                }
            }
            let d32 = sqrt_clamped::<R>(n, s, 0) * cast::<R>(n - s as f64 - 1.0);
            if d32 != R::zero() {
                for (pi, &occp) in occ.iter().enumerate() {
                    if occp == 0 {
                        continue;
                    }
                    for ki in 0..m {
                        let l = sub3(mlist[pi], mlist[ki]);
                        if let Some(li) = modes.index_of(l) {
                            let c32 = cast::<R>(2.0) * rho2 * coupling.w2_hat(mlist[li]) / n2;
                            let c33 = rho2 * coupling.v_hat(neg(mlist[li]), mlist[pi]) / n2;
                            let coeff = (c32 + c33) * d32;
                            create2_annihilate1(
                                &mut b,
                                basis,
                                col,
                                occ,
                                [ki, li],
                                pi,
                                Cx::new(coeff, R::zero()),
                            );
                        }
                    }
                }
            }
        }
        b.finish()
    };

    // R₄ = (ρ²/N²) Σ_{k+l+m=p} V̂(l,m) a*_k a*_l a*_m a_p √(N−𝒩−1)√(N−𝒩)
    //    + (ρ²/2N²) Σ_{k+l=p+q} Ŵ₂(k−p) a*_k a*_l a_p a_q (N−𝒩)
    //    + (ρ²/N²) Σ_{k+l=p+q} V̂(−l,q) a*_k a*_l a_p a_q (N−𝒩)
    let r4 = {
        let mut b = OperatorBuilder::new(dim);
        for col in 0..dim {
            let occ = basis.state(col);
            let s = basis.sector(col);
            let d41 = sqrt_clamped::<R>(n, s, 1) * sqrt_clamped::<R>(n, s, 0);
            if d41 != R::zero() {
                for (pi, &occp) in occ.iter().enumerate() {
                    if occp == 0 {
                        continue;
                    }
                    for li in 0..m {
                        for mi in 0..m {
                            let k = sub3(mlist[pi], add3(mlist[li], mlist[mi]));
                            if let Some(ki) = modes.index_of(k) {
                                let coeff = rho2 * coupling.v_hat(mlist[li], mlist[mi]) / n2 * d41;
                                create3_annihilate1(
                                    &mut b,
                                    basis,
                                    col,
                                    occ,
                                    [ki, li, mi],
                                    pi,
                                    Cx::new(coeff, R::zero()),
                                );
                            }
                        }
                    }
                }
            }
            let d4n = cast::<R>(n - s as f64);
            if d4n != R::zero() {
                for (pi, &occp) in occ.iter().enumerate() {
                    if occp == 0 {
                        continue;
                    }
                    for (qi, &occq) in occ.iter().enumerate() {
                        if occq == 0 || (qi == pi && occp < 2) {
                            continue;
                        }
                        for ki in 0..m {
                            let l = sub3(add3(mlist[pi], mlist[qi]), mlist[ki]);
                            if let Some(li) = modes.index_of(l) {
                                let c42 = rho2 * coupling.w2_hat(sub3(mlist[ki], mlist[pi]))
                                    / (cast::<R>(2.0) * n2);
                                let c43 = rho2 * coupling.v_hat(neg(mlist[li]), mlist[qi]) / n2;
                                let coeff = (c42 + c43) * d4n;
                                create2_annihilate2(
                                    &mut b,
                                    basis,
                                    col,
                                    occ,
                                    [ki, li],
                                    [pi, qi],
                                    Cx::new(coeff, R::zero()),
                                );
                            }
                        }
                    }
                }
            }
        }
        b.finish()
    };

    // R₅ = (ρ²/N²) Σ_{k+l+m=p+q} V̂(q−l,−m) a*_k a*_l a*_m a_p a_q √(N−𝒩−2)
    let r5 = {
        let mut b = OperatorBuilder::new(dim);
        for col in 0..dim {
            let occ = basis.state(col);
            let s = basis.sector(col);
            let d5 = sqrt_clamped::<R>(n, s, 2);
            if d5 == R::zero() {
                continue;
            }
            for (pi, &occp) in occ.iter().enumerate() {
                if occp == 0 {
                    continue;
                }
                for (qi, &occq) in occ.iter().enumerate() {
                    if occq == 0 || (qi == pi && occp < 2) {
                        continue;
                    }
                    let total = add3(mlist[pi], mlist[qi]);
                    for li in 0..m {
                        for mi in 0..m {
                            let k = sub3(total, add3(mlist[li], mlist[mi]));
                            if let Some(ki) = modes.index_of(k) {
                                let coeff = rho2
                                    * coupling.v_hat(sub3(mlist[qi], mlist[li]), neg(mlist[mi]))
                                    / n2
                                    * d5;
                                create3_annihilate2(
                                    &mut b,
                                    basis,
                                    col,
                                    occ,
                                    [ki, li, mi],
                                    [pi, qi],
                                    Cx::new(coeff, R::zero()),
                                );
                            }
                        }
                    }
                }
            }
        }
        b.finish()
    };

    // R₆ = (ρ²/6N²) Σ_{k+l+m=p+q+r} V̂(q−l, r−m) a*a*a* a_p a_q a_r
    let r6 = {
        let mut b = OperatorBuilder::new(dim);
        for col in 0..dim {
            let occ = basis.state(col);
            for (pi, &occp) in occ.iter().enumerate() {
                if occp == 0 {
                    continue;
                }
                for (qi, &occq) in occ.iter().enumerate() {
                    let avail_q = occq as i32 - i32::from(qi == pi);
                    if avail_q <= 0 {
                        continue;
                    }
                    for (ri, &occr) in occ.iter().enumerate() {
                        let avail_r = occr as i32 - i32::from(ri == pi) - i32::from(ri == qi);
                        if avail_r <= 0 {
                            continue;
                        }
                        let total = add3(add3(mlist[pi], mlist[qi]), mlist[ri]);
                        for li in 0..m {
                            for mi in 0..m {
                                let k = sub3(total, add3(mlist[li], mlist[mi]));
                                if let Some(ki) = modes.index_of(k) {
                                    let coeff = rho2
                                        * coupling.v_hat(
                                            sub3(mlist[qi], mlist[li]),
                                            sub3(mlist[ri], mlist[mi]),
                                        )
                                        / (cast::<R>(6.0) * n2);
                                    create3_annihilate3(
                                        &mut b,
                                        basis,
                                        col,
                                        occ,
                                        [ki, li, mi],
                                        [pi, qi, ri],
                                        Cx::new(coeff, R::zero()),
                                    );
                                }
                            }
                        }
                    }
                }
            }
        }
        b.finish()
    };

    let r = vec![r0, r1, r2, r3, r4, r5, r6];
    let mut h_tilde = bogoliubov.add(&FockOperator::zero(dim));
    let half = Cx::new(cast::<R>(0.5), R::zero());
    for rj in &r {
        h_tilde = h_tilde.add(&rj.plus_adjoint().scaled(half));
    }

    Ok(GeneratorBundle {
        n_phys,
        chi,
        bogoliubov,
        r,
        number_op,
        kinetic_op,
        basis: basis.clone(),
        modes: modes.clone(),
        h_tilde,
        one_body_diag,
        k2,
    })
}

// --- ladder monomial helpers (annihilations applied right to left, then
// creations innermost first; amplitudes √n / √(n+1); cutoff drops recorded)

fn annihilate_seq(occ: &mut [u8], order: &[usize]) -> Option<f64> {
    let mut amp = 1.0f64;
    for &idx in order.iter().rev() {
        if occ[idx] == 0 {
            return None;
        }
        amp *= occ[idx] as f64;
        occ[idx] -= 1;
    }
    Some(amp.sqrt())
}

fn create_seq(occ: &mut [u8], order: &[usize]) -> f64 {
    let mut amp = 1.0f64;
    for &idx in order.iter().rev() {
        occ[idx] += 1;
        amp *= occ[idx] as f64;
    }
    amp.sqrt()
}

fn emit<R: Real>(
    b: &mut OperatorBuilder<R>,
    basis: &FockBasis,
    col: usize,
    occ: Vec<u8>,
    val: Cx<R>,
) {
    let s: usize = occ.iter().map(|&x| x as usize).sum();
    if s > basis.p_cut() {
        b.drop_entry(val);
        return;
    }
    let row = basis.index_of(&occ).expect("inside cutoff");
    b.push(row, col, val);
}

fn create3<R: Real>(
    b: &mut OperatorBuilder<R>,
    basis: &FockBasis,
    col: usize,
    occ: &[u8],
    creates: [usize; 3],
    coeff: Cx<R>,
) {
    let mut o = occ.to_vec();
    let amp = create_seq(&mut o, &creates);
    emit(b, basis, col, o, coeff * cast::<R>(amp));
}

fn create2_annihilate1<R: Real>(
    b: &mut OperatorBuilder<R>,
    basis: &FockBasis,
    col: usize,
    occ: &[u8],
    creates: [usize; 2],
    ann: usize,
    coeff: Cx<R>,
) {
    let mut o = occ.to_vec();
    let Some(amp_a) = annihilate_seq(&mut o, &[ann]) else {
        return;
    };
    let amp_c = create_seq(&mut o, &creates);
    emit(b, basis, col, o, coeff * cast::<R>(amp_a * amp_c));
}

fn create3_annihilate1<R: Real>(
    b: &mut OperatorBuilder<R>,
    basis: &FockBasis,
    col: usize,
    occ: &[u8],
    creates: [usize; 3],
    ann: usize,
    coeff: Cx<R>,
) {
    let mut o = occ.to_vec();
    let Some(amp_a) = annihilate_seq(&mut o, &[ann]) else {
        return;
    };
    let amp_c = create_seq(&mut o, &creates);
    emit(b, basis, col, o, coeff * cast::<R>(amp_a * amp_c));
}

fn create2_annihilate2<R: Real>(
    b: &mut OperatorBuilder<R>,
    basis: &FockBasis,
    col: usize,
    occ: &[u8],
    creates: [usize; 2],
    anns: [usize; 2],
    coeff: Cx<R>,
) {
    let mut o = occ.to_vec();
    let Some(amp_a) = annihilate_seq(&mut o, &anns) else {
        return;
    };
    let amp_c = create_seq(&mut o, &creates);
    emit(b, basis, col, o, coeff * cast::<R>(amp_a * amp_c));
}

fn create3_annihilate2<R: Real>(
    b: &mut OperatorBuilder<R>,
    basis: &FockBasis,
    col: usize,
    occ: &[u8],
    creates: [usize; 3],
    anns: [usize; 2],
    coeff: Cx<R>,
) {
    let mut o = occ.to_vec();
    let Some(amp_a) = annihilate_seq(&mut o, &anns) else {
        return;
    };
    let amp_c = create_seq(&mut o, &creates);
    emit(b, basis, col, o, coeff * cast::<R>(amp_a * amp_c));
}

fn create3_annihilate3<R: Real>(
    b: &mut OperatorBuilder<R>,
    basis: &FockBasis,
    col: usize,
    occ: &[u8],
    creates: [usize; 3],
    anns: [usize; 3],
    coeff: Cx<R>,
) {
    let mut o = occ.to_vec();
    let Some(amp_a) = annihilate_seq(&mut o, &anns) else {
        return;
    };
    let amp_c = create_seq(&mut o, &creates);
    emit(b, basis, col, o, coeff * cast::<R>(amp_a * amp_c));
}

/// η threshold of the error-bound certification:
/// max{√(mN^{2β−1}), √(m³N^{5β−3}), m²N^{4β−2}} (calibration constant 1).
pub fn eta_threshold(m: usize, n_phys: u64, beta: f64) -> f64 {
    let m = m as f64;
    let n = n_phys as f64;
    let a = (m * n.powf(2.0 * beta - 1.0)).sqrt();
    let b = (m.powi(3) * n.powf(5.0 * beta - 3.0)).sqrt();
    let c = m * m * n.powf(4.0 * beta - 2.0);
    a.max(b).max(c)
}

/// One certification row of the error-bound suite.
#[derive(Clone, Copy, Debug)]
pub struct ErrorBoundRow {
    pub j: usize,
    pub sign: i32,
    pub eta: f64,
    pub m_sector: usize,
    pub n_phys: u64,
    pub beta: f64,
    pub min_eig: f64,
    pub minimal_c: f64,
    pub eta_ok: bool,
}

/// For each j and sign, the smallest eigenvalue of
/// 1^{≤m}[η dΓ(1−Δ) ∓ (R_j + R_j†)]1^{≤m} and the smallest shift constant
/// c ≥ 0 making η dΓ(1−Δ) + c·m·N^{4β−1} ∓ (R_j + R_j†) ⪰ 0 there.
pub fn certify_error_bounds<R: Real>(
    bundle: &GeneratorBundle<R>,
    m_sector: usize,
    eta: f64,
    beta: f64,
) -> Result<Vec<ErrorBoundRow>> {
    let basis = &bundle.basis;
    if m_sector + 3 > basis.p_cut() {
        return Err(Error::PreconditionViolated(format!(
            "need sector cutoff m ≤ P − 3 (m = {m_sector}, P = {})",
            basis.p_cut()
        )));
    }
    let eta_ok = eta >= eta_threshold(m_sector, bundle.n_phys, beta);
    let n = bundle.n_phys as f64;
    let scale = m_sector as f64 * n.powf(4.0 * beta - 1.0);
    let mut rows = Vec::new();
    for (j, rj) in bundle.r.iter().enumerate() {
        let sym = rj.plus_adjoint();
        for sign in [1i32, -1] {
            let op = bundle
                .kinetic_op
                .scaled(Cx::new(cast::<R>(eta), R::zero()))
                .add_scaled(Cx::new(cast::<R>(-(sign as f64)), R::zero()), &sym);
            let (block, _) = op.sector_block(basis, m_sector);
            let eigs = hermitian_eigenvalues(&block);
            let min_eig = eigs[0].to_f64().unwrap_or(f64::NAN);
            let minimal_c = if min_eig >= 0.0 { 0.0 } else { -min_eig / scale };
            rows.push(ErrorBoundRow {
                j,
                sign,
                eta,
                m_sector,
                n_phys: bundle.n_phys,
                beta,
                min_eig,
                minimal_c,
                eta_ok,
            });
        }
    }
    Ok(rows)
}

/// Monitor record along a truncated evolution.
#[derive(Clone, Debug)]
pub struct TruncatedMonitor<R: Real> {
    pub time: R,
    pub norm: R,
    pub number: R,
    pub kinetic: R,
    pub sector_weights: Vec<R>,
}

/// Norm-conserving propagation of i∂Φ = 1^{≤M} H 1^{≤M} Φ by Krylov steps.
pub fn evolve_truncated<R: Real>(
    generator: &FockOperator<R>,
    basis: &Arc<FockBasis>,
    phi0: &FockVector<R>,
    m_cut: usize,
    dt: R,
    t_final: R,
    number_op: &FockOperator<R>,
    kinetic_op: &FockOperator<R>,
    monitor_stride: usize,
) -> Result<(FockVector<R>, Vec<TruncatedMonitor<R>>)> {
    if m_cut > basis.p_cut() {
        return Err(Error::CutoffTooLarge(format!(
            "sector cutoff {m_cut} exceeds particle cutoff {}",
            basis.p_cut()
        )));
    }
    let mask = basis.sector_mask(m_cut);
    if phi0
        .coeffs
        .iter()
        .zip(&mask)
        .any(|(c, &keep)| !keep && c.norm_sqr() > cast::<R>(1e-28))
    {
        return Err(Error::PreconditionViolated(
            "initial vector must be supported in sectors ≤ M".into(),
        ));
    }
    let apply = |v: &[Cx<R>]| -> Vec<Cx<R>> {
        let mut masked = v.to_vec();
        for (c, &keep) in masked.iter_mut().zip(&mask) {
            if !keep {
                *c = Cx::new(R::zero(), R::zero());
            }
        }
        let mut out = generator.apply(&masked);
        for (c, &keep) in out.iter_mut().zip(&mask) {
            if !keep {
                *c = Cx::new(R::zero(), R::zero());
            }
        }
        out
    };

    let steps = (t_final / dt).round().to_f64().expect("finite") as usize;
    let mut v = phi0.coeffs.clone();
    let norm0 = crate::linalg::norm(&v);
    let mut monitors = Vec::new();
    let record = |v: &Vec<Cx<R>>, t: R, monitors: &mut Vec<TruncatedMonitor<R>>| {
        let fv = FockVector {
            basis: basis.clone(),
            coeffs: v.clone(),
        };
        monitors.push(TruncatedMonitor {
            time: t,
            norm: fv.norm(),
            number: number_op.expectation(&fv.coeffs).re,
            kinetic: kinetic_op.expectation(&fv.coeffs).re,
            sector_weights: fv.sector_weights(),
        });
    };
    record(&v, R::zero(), &mut monitors);

    for step in 1..=steps {
        v = lanczos_expv(&apply, &v, dt, 24);
        let t = dt * cast::<R>(step as f64);
        let drift = Float::abs(crate::linalg::norm(&v) - norm0);
        if drift > cast::<R>(1e-8) * (R::one() + t) {
            return Err(Error::Instability(format!(
                "norm drift {drift:e} at t = {t}"
            )));
        }
        if step % monitor_stride.max(1) == 0 || step == steps {
            record(&v, t, &mut monitors);
        }
    }
    Ok((
        FockVector {
            basis: basis.clone(),
            coeffs: v,
        },
        monitors,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bogoliubov::ModeBasis;
    use crate::grid::TorusGrid;
    use crate::potential::{PairProfile, PotentialForm};
    use approx::assert_relative_eq;

    fn small_basis(m: usize, p: usize) -> Arc<FockBasis> {
        FockBasis::new(m, p).unwrap()
    }

    #[test]
    fn basis_dimension_is_multiset_count() {
        let b = small_basis(3, 4);
        assert_eq!(b.dim(), binomial(7, 3));
        let b = small_basis(6, 8);
        assert_eq!(b.dim(), binomial(14, 6));
        let mut seen = std::collections::HashSet::new();
        for i in 0..b.dim() {
            assert!(seen.insert(b.state(i).to_vec()));
        }
    }

    #[test]
    fn ccr_below_cutoff_boundary() {
        let basis = small_basis(3, 5);
        for p in 0..3 {
            for q in 0..3 {
                let a_p = ladder::<f64>(&basis, p, LadderKind::Annihilate);
                let ad_q = ladder::<f64>(&basis, q, LadderKind::Create);
                let comm = {
                    let pq = a_p.to_dense().dot(&ad_q.to_dense());
                    let qp = ad_q.to_dense().dot(&a_p.to_dense());
                    &pq - &qp
                };
                let expect = if p == q { 1.0 } else { 0.0 };
                for i in 0..basis.dim() {
                    for j in 0..basis.dim() {
                        if basis.sector(i) <= 4 && basis.sector(j) <= 4 {
                            let want = if i == j { expect } else { 0.0 };
                            assert!(
                                (comm[(i, j)].re - want).abs() < 1e-12
                                    && comm[(i, j)].im.abs() < 1e-12,
                                "CCR violated at ({i},{j})"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn annihilation_kills_vacuum_and_number_eigenvalue() {
        let basis = small_basis(2, 4);
        let a0 = ladder::<f64>(&basis, 0, LadderKind::Annihilate);
        let vac = FockVector::<f64>::vacuum(basis.clone());
        let out = a0.apply(&vac.coeffs);
        assert!(crate::linalg::norm(&out) < 1e-15);

        // a*_p a_p on |n_p = 3⟩ → 3
        let idx = basis.index_of(&[3, 0]).unwrap();
        let ad0 = ladder::<f64>(&basis, 0, LadderKind::Create);
        let mut v = vec![Cx::new(0.0, 0.0); basis.dim()];
        v[idx] = Cx::new(1.0, 0.0);
        let out = ad0.apply(&a0.apply(&v));
        assert_relative_eq!(out[idx].re, 3.0, epsilon = 1e-14);
    }

    #[test]
    fn d_gamma_identity_is_number_operator() {
        let basis = small_basis(3, 4);
        let eye: Array2<Cx<f64>> = Array2::eye(3);
        let n_op = d_gamma(&basis, &eye);
        for i in 0..basis.dim() {
            let mut v = vec![Cx::new(0.0, 0.0); basis.dim()];
            v[i] = Cx::new(1.0, 0.0);
            let out = n_op.apply(&v);
            assert_relative_eq!(out[i].re, basis.sector(i) as f64, epsilon = 1e-14);
        }
    }

    #[test]
    fn d_gamma_diagonal_kinetic_eigenvalues() {
        let basis = small_basis(3, 3);
        let diag = [2.0, 5.0, 1.0];
        let op = d_gamma_diag::<f64>(&basis, &diag);
        for i in 0..basis.dim() {
            let occ = basis.state(i);
            let expect: f64 = occ.iter().zip(&diag).map(|(&n, &d)| n as f64 * d).sum();
            let mut v = vec![Cx::new(0.0, 0.0); basis.dim()];
            v[i] = Cx::new(1.0, 0.0);
            assert_relative_eq!(op.apply(&v)[i].re, expect, epsilon = 1e-13);
        }
    }

    #[test]
    fn d_gamma_self_adjoint_and_one_particle_spectrum() {
        let basis = small_basis(4, 3);
        let raw = crate::linalg::seeded_vector::<f64>(16, 31);
        let mut a = Array2::zeros((4, 4));
        for i in 0..4 {
            for j in 0..4 {
                a[(i, j)] = raw[i * 4 + j];
            }
        }
        let herm = {
            let conj_t = a.t().mapv(|x: Cx<f64>| x.conj());
            (&a + &conj_t).mapv(|x| x * Cx::new(0.5, 0.0))
        };
        let op = d_gamma(&basis, &herm);
        assert!(op.hermiticity_defect() < 1e-12);
        // dΓ(A)† = dΓ(A†)
        let opt = d_gamma(&basis, &herm.t().mapv(|x: Cx<f64>| x.conj()).to_owned());
        let diff = op.adjoint().add_scaled(Cx::new(-1.0, 0.0), &opt);
        assert!(diff.to_dense().iter().all(|v| v.norm() < 1e-13));

        // one-particle block spectrum = spectrum of A
        let (block, keep) = op.sector_block(&basis, 1);
        let one: Vec<usize> = keep
            .iter()
            .enumerate()
            .filter(|(_, &i)| basis.sector(i) == 1)
            .map(|(b, _)| b)
            .collect();
        let mut sub = Array2::zeros((one.len(), one.len()));
        for (bi, &i) in one.iter().enumerate() {
            for (bj, &j) in one.iter().enumerate() {
                sub[(bi, bj)] = block[(i, j)];
            }
        }
        let got = hermitian_eigenvalues(&sub);
        let want = hermitian_eigenvalues(&herm);
        for (g, w) in got.iter().zip(&want) {
            assert_relative_eq!(g, w, epsilon = 1e-12);
        }
    }

    fn test_setup(
        grid_n: usize,
        cutoff: i32,
        p_cut: usize,
        n_phys: u64,
    ) -> (
        GeneratorBundle<f64>,
        Arc<TorusGrid<f64>>,
        ThreeBodyPotential<f64>,
    ) {
        let grid = TorusGrid::<f64>::new(grid_n).unwrap();
        let profile = PairProfile::new(12.0, 2.0).unwrap();
        let pot = ThreeBodyPotential::new(PotentialForm::PairProductSum, profile, 0.1, 16).unwrap();
        let modes = ModeBasis::shell(cutoff).unwrap();
        let basis = FockBasis::new(modes.len(), p_cut).unwrap();
        let u = Field::normalized_constant(grid.clone());
        let bundle = assemble_generator(&u, &pot, &modes, &basis, n_phys).unwrap();
        (bundle, grid, pot)
    }

    #[test]
    fn zero_amplitude_generator_is_free() {
        let grid = TorusGrid::<f64>::new(16).unwrap();
        let profile = PairProfile::new(0.0, 2.0).unwrap();
        let pot = ThreeBodyPotential::new(PotentialForm::PairProductSum, profile, 0.1, 16).unwrap();
        let modes = ModeBasis::shell(1).unwrap();
        let basis = FockBasis::new(modes.len(), 4).unwrap();
        let u = Field::normalized_constant(grid.clone());
        let bundle = assemble_generator(&u, &pot, &modes, &basis, 100).unwrap();
        assert_eq!(bundle.chi, 0.0);
        for rj in &bundle.r {
            assert!(rj.to_dense().iter().all(|v| v.norm() < 1e-15));
        }
        for i in 0..basis.dim() {
            let occ = basis.state(i);
            let expect: f64 = occ
                .iter()
                .zip(modes.modes())
                .map(|(&n, k)| n as f64 * (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64)
                .sum();
            let mut v = vec![Cx::new(0.0, 0.0); basis.dim()];
            v[i] = Cx::new(1.0, 0.0);
            assert_relative_eq!(bundle.bogoliubov.apply(&v)[i].re, expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn chi_constant_condensate_closed_form() {
        let (bundle, grid, pot) = test_setup(16, 1, 4, 50);
        // χ = (2N+3)/6 · 2 b₀ᵍ (2π)^{-6}
        let rho = 1.0 / (2.0 * std::f64::consts::PI).powi(3);
        let b0g = pot.coupling_b0_grid(&grid).unwrap();
        let expect = (2.0 * 50.0 + 3.0) / 6.0 * 2.0 * b0g * rho * rho;
        assert_relative_eq!(bundle.chi, expect, max_relative = 1e-12);

        // independent cross-check through the sampled sum
        let w = pot.sampled_w_n(&grid);
        let s = w.integral_quadrature();
        let triple = rho * rho * s * s;
        assert_relative_eq!(
            bundle.chi,
            (2.0 * 50.0 + 3.0) / 6.0 * triple,
            max_relative = 1e-10
        );
    }

    #[test]
    fn vacuum_expectation_of_r0() {
        let (bundle, grid, pot) = test_setup(16, 1, 4, 64);
        let vac = FockVector::<f64>::vacuum(bundle.basis.clone());
        let got = bundle.r[0].expectation(&vac.coeffs).re;
        // ⟨Ω, R₀ Ω⟩ = ⟨u⊗³, V_N u⊗³⟩/(3N)
        let rho = 1.0 / (2.0 * std::f64::consts::PI).powi(3);
        let s = pot.sampled_w_n(&grid).integral_quadrature();
        let triple = rho * rho * s * s;
        assert_relative_eq!(got, triple / (3.0 * 64.0), max_relative = 1e-12);
    }

    #[test]
    fn r1_vanishes_for_constant_condensate() {
        let (bundle, _, _) = test_setup(16, 1, 4, 64);
        assert_eq!(bundle.r[1].nnz(), 0);
    }

    #[test]
    fn generator_terms_are_self_adjoint_after_symmetrization() {
        let (bundle, _, _) = test_setup(16, 1, 5, 40);
        assert!(bundle.bogoliubov.hermiticity_defect() < 1e-12);
        for rj in &bundle.r {
            assert!(rj.plus_adjoint().hermiticity_defect() < 1e-12);
        }
        assert!(bundle.h_tilde.hermiticity_defect() < 1e-12);
    }

    #[test]
    fn r_terms_change_particle_number_by_at_most_three() {
        let (bundle, _, _) = test_setup(16, 1, 6, 40);
        let basis = &bundle.basis;
        for rj in &bundle.r {
            let d = rj.to_dense();
            for i in 0..basis.dim() {
                for j in 0..basis.dim() {
                    if d[(i, j)].norm() > 1e-14 {
                        let ds = basis.sector(i) as i64 - basis.sector(j) as i64;
                        assert!(ds.abs() <= 3, "sector jump {ds}");
                    }
                }
            }
        }
    }

    /// With P > N the assembled generator must not move weight above
    /// sector N: the combined creation factors vanish on 𝒩 ∈ {N, N−1, N−2}.
    #[test]
    fn no_transitions_above_physical_n() {
        let (bundle, _, _) = test_setup(16, 1, 8, 5);
        let basis = &bundle.basis;
        let d = bundle.h_tilde.to_dense();
        for i in 0..basis.dim() {
            for j in 0..basis.dim() {
                if basis.sector(i) > 5 && basis.sector(j) <= 5 {
                    assert!(
                        d[(i, j)].norm() < 1e-12,
                        "escape {} -> {} amplitude {}",
                        basis.sector(j),
                        basis.sector(i),
                        d[(i, j)].norm()
                    );
                }
            }
        }
    }

    /// Constant-condensate momentum reduction cross-checked against direct
    /// grid quadrature on 8³: T(k,l,m) = (2π)³ V̂(−l,−m) δ_{k+l+m,0} with the
    /// direct side summed over all site triples of the periodized potential.
    #[test]
    fn momentum_contraction_matches_direct_quadrature() {
        let grid = TorusGrid::<f64>::new(8).unwrap();
        let profile = PairProfile::new(6.0, 2.4).unwrap();
        let pot = ThreeBodyPotential::new(PotentialForm::PairProductSum, profile, 0.12, 4).unwrap();
        let w = pot.sampled_w_n(&grid);

        let n = grid.n_per_dim();
        let len = grid.len();
        let cell = grid.cell_volume();
        let k: [i32; 3] = [1, 0, 0];
        let l: [i32; 3] = [0, 1, 0];
        let m: [i32; 3] = [-1, -1, 0];
        let disp = |a: usize, b: usize| -> usize {
            let (ax, ay, az) = crate::potential::split(a, n);
            let (bx, by, bz) = crate::potential::split(b, n);
            grid.index((ax + n - bx) % n, (ay + n - by) % n, (az + n - bz) % n)
        };
        let phase = |kk: [i32; 3], x: [f64; 3]| -> Cx<f64> {
            let p = -(kk[0] as f64 * x[0] + kk[1] as f64 * x[1] + kk[2] as f64 * x[2]);
            Cx::new(p.cos(), p.sin())
        };
        let mut direct = Cx::new(0.0, 0.0);
        for ix in 0..len {
            let x = grid.site(ix);
            let px = phase(k, x);
            for iy in 0..len {
                let wxy = w.values[disp(ix, iy)];
                let y = grid.site(iy);
                let pxy = px * phase(l, y);
                for iz in 0..len {
                    let wxz = w.values[disp(ix, iz)];
                    let wyz = w.values[disp(iy, iz)];
                    let v = (wxy * wxz + wxy * wyz + wxz * wyz) / 3.0;
                    if v == 0.0 {
                        continue;
                    }
                    let z = grid.site(iz);
                    direct += pxy * phase(m, z) * v;
                }
            }
        }
        direct *= Cx::new(cell * cell * cell, 0.0);

        let w_field = w.as_field();
        let coupling = ModeCoupling::from_grid(&w_field, 3).unwrap();
        let vol = (2.0 * std::f64::consts::PI).powi(3);
        let reduced = vol * coupling.v_hat([-l[0], -l[1], -l[2]], [-m[0], -m[1], -m[2]]);
        assert_relative_eq!(direct.re, reduced, max_relative = 1e-8);
        assert!(direct.im.abs() < 1e-9 * reduced.abs().max(1.0));
    }

    #[test]
    fn truncated_evolution_diagonal_generator_rotates_sectors() {
        let basis = small_basis(2, 4);
        let n_op = d_gamma_diag::<f64>(&basis, &[1.0, 1.0]);
        let mut phi = FockVector::<f64>::zeros(basis.clone());
        let idx2 = basis.index_of(&[1, 1]).unwrap();
        phi.coeffs[basis.vacuum_index()] = Cx::new(0.6, 0.0);
        phi.coeffs[idx2] = Cx::new(0.8, 0.0);
        let kin = FockOperator::identity(basis.dim());
        let (out, monitors) =
            evolve_truncated(&n_op, &basis, &phi, 4, 0.01, 1.0, &n_op, &kin, 50).unwrap();
        // each sector acquires phase e^{-int}
        let expect2 = Cx::new(0.8 * (2.0f64).cos(), -0.8 * (2.0f64).sin());
        assert!((out.coeffs[idx2] - expect2).norm() < 1e-9);
        assert!((out.coeffs[basis.vacuum_index()] - Cx::new(0.6, 0.0)).norm() < 1e-12);
        for m in &monitors {
            assert_relative_eq!(m.number, 0.8 * 0.8 * 2.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn eta_threshold_matches_formula() {
        let got = eta_threshold(3, 64, 0.1);
        let expect = (3.0f64 * 64.0f64.powf(-0.8)).sqrt();
        assert_relative_eq!(got, expect, epsilon = 1e-15);
    }
}
