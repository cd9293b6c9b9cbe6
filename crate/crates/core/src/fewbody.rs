//! Exact propagation of two and three bosons on a tiny periodic lattice
//! under the three-body Hamiltonian, reduced-density-matrix extraction, the
//! condensate-excitation transform U_N, and a brute-force verification of
//! the transformed-dynamics identity i∂Φ = [𝔹 + ½Σ(R_j+R_j†)]Φ including
//! the scalar phase, with the exact propagator as the oracle.
//!
//! The lattice Laplacian is the nearest-neighbor stencil (sparse,
//! Lanczos-friendly); the structural identities verified here hold verbatim
//! for any self-adjoint one-body operator, so the O(h²) dispersion error is
//! irrelevant. Everything lives in the counting-measure ℓ² inner product on
//! sites, under which the h³ quadrature factors of the continuum model
//! cancel identically.

use crate::fock::FockOperator;
use crate::linalg::{self, lanczos_expv};
use crate::potential::ThreeBodyPotential;
use crate::scalar::{cast, Cx, Real};
use crate::{Error, Result};
use ndarray::Array2;
use num_traits::Float;
use std::collections::HashMap;
use std::sync::Arc;

/// Uniform periodic lattice discretizing the torus, with a nearest-neighbor
/// Laplacian scaled by (2π/s)^{-2}.
pub struct Lattice<R: Real> {
    s: usize,
    inv_h2: R,
}

impl<R: Real> Lattice<R> {
    pub fn new(sites_per_dim: usize) -> Result<Arc<Self>> {
        if !(4..=6).contains(&sites_per_dim) {
            return Err(Error::InvalidGrid(format!(
                "sites_per_dim must lie in [4, 6], got {sites_per_dim}"
            )));
        }
        let h = cast::<R>(2.0) * R::PI() / cast::<R>(sites_per_dim as f64);
        Ok(Arc::new(Self {
            s: sites_per_dim,
            inv_h2: (h * h).recip(),
        }))
    }

    pub fn sites_per_dim(&self) -> usize {
        self.s
    }

    pub fn site_count(&self) -> usize {
        self.s * self.s * self.s
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.s + y) * self.s + z
    }

    pub fn coords(&self, i: usize) -> [usize; 3] {
        [i / (self.s * self.s), (i / self.s) % self.s, i % self.s]
    }

    pub fn neighbors(&self, i: usize) -> [usize; 6] {
        let s = self.s;
        let [x, y, z] = self.coords(i);
        [
            self.index((x + 1) % s, y, z),
            self.index((x + s - 1) % s, y, z),
            self.index(x, (y + 1) % s, z),
            self.index(x, (y + s - 1) % s, z),
            self.index(x, y, (z + 1) % s),
            self.index(x, y, (z + s - 1) % s),
        ]
    }

    /// −Δ as a dense one-body matrix (symmetric, PSD, constants in kernel).
    pub fn minus_laplacian(&self) -> Array2<Cx<R>> {
        let n = self.site_count();
        let mut m = Array2::zeros((n, n));
        let six = cast::<R>(6.0);
        for i in 0..n {
            m[(i, i)] = Cx::new(six * self.inv_h2, R::zero());
            for nb in self.neighbors(i) {
                m[(i, nb)] += Cx::new(-self.inv_h2, R::zero());
            }
        }
        m
    }

    /// Minimal-image distance between two sites.
    pub fn min_distance(&self, a: usize, b: usize) -> R {
        let s = self.s as i64;
        let ca = self.coords(a);
        let cb = self.coords(b);
        let h = cast::<R>(2.0) * R::PI() / cast::<R>(self.s as f64);
        let mut acc = R::zero();
        for d in 0..3 {
            let mut diff = ca[d] as i64 - cb[d] as i64;
            diff = ((diff % s) + s) % s;
            if diff > s / 2 {
                diff -= s;
            }
            let dist = h * cast::<R>(diff as f64);
            acc += dist * dist;
        }
        acc.sqrt()
    }
}

/// Pairwise minimal-image samples of the rescaled bump on the lattice; the
/// three-body value is assembled on the fly from the pair table.
pub struct SiteInteraction<R: Real> {
    s_count: usize,
    w_pair: Vec<R>,
}

impl<R: Real> SiteInteraction<R> {
    pub fn build(lattice: &Lattice<R>, potential: &ThreeBodyPotential<R>) -> Self {
        let n = lattice.site_count();
        let mut w_pair = vec![R::zero(); n * n];
        for a in 0..n {
            for b in 0..n {
                w_pair[a * n + b] = potential.w_n_radial(lattice.min_distance(a, b));
            }
        }
        Self {
            s_count: n,
            w_pair,
        }
    }

    #[inline]
    pub fn w(&self, a: usize, b: usize) -> R {
        self.w_pair[a * self.s_count + b]
    }

    /// V_N at a site triple, periodized per pair factor.
    #[inline]
    pub fn v3(&self, i: usize, j: usize, k: usize) -> R {
        let wij = self.w(i, j);
        let wik = self.w(i, k);
        let wjk = self.w(j, k);
        (wij * wik + wij * wjk + wik * wjk) / cast::<R>(3.0)
    }
}

/// Symmetric occupation basis of N bosons on S sites (multisets of sites).
pub struct FewBodyBasis {
    s_sites: usize,
    n_particles: usize,
    states: Vec<Vec<u16>>,
    index: HashMap<Vec<u16>, usize>,
}

impl FewBodyBasis {
    pub fn new(s_sites: usize, n_particles: usize) -> Result<Arc<Self>> {
        if !(n_particles == 2 || n_particles == 3) {
            return Err(Error::InvalidProblem(format!(
                "n_particles must be 2 or 3, got {n_particles}"
            )));
        }
        let dim = multiset_count(s_sites, n_particles);
        if dim > 3_000_000 {
            return Err(Error::DimensionOverflow(format!(
                "few-body dimension {dim} exceeds the 3e6 guard"
            )));
        }
        let mut states = Vec::with_capacity(dim);
        if n_particles == 2 {
            for a in 0..s_sites as u16 {
                for b in a..s_sites as u16 {
                    states.push(vec![a, b]);
                }
            }
        } else {
            for a in 0..s_sites as u16 {
                for b in a..s_sites as u16 {
                    for c in b..s_sites as u16 {
                        states.push(vec![a, b, c]);
                    }
                }
            }
        }
        let index = states
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Ok(Arc::new(Self {
            s_sites,
            n_particles,
            states,
            index,
        }))
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    pub fn s_sites(&self) -> usize {
        self.s_sites
    }

    pub fn state(&self, i: usize) -> &[u16] {
        &self.states[i]
    }

    pub fn index_of(&self, multiset: &[u16]) -> Option<usize> {
        self.index.get(multiset).copied()
    }

    fn occupation(&self, i: usize) -> HashMap<u16, u32> {
        let mut occ = HashMap::new();
        for &site in &self.states[i] {
            *occ.entry(site).or_insert(0) += 1;
        }
        occ
    }
}

fn multiset_count(s: usize, n: usize) -> usize {
    // C(s+n-1, n)
    let mut acc: u128 = 1;
    for i in 0..n {
        acc = acc * (s + n - 1 - i) as u128 / (i + 1) as u128;
    }
    acc as usize
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(|x| x as f64).product::<f64>().max(1.0)
}

/// Symmetric N-particle wavefunction in the occupation representation.
#[derive(Clone)]
pub struct FewBodyState<R: Real> {
    pub basis: Arc<FewBodyBasis>,
    pub coeffs: Vec<Cx<R>>,
}

impl<R: Real> FewBodyState<R> {
    pub fn zeros(basis: Arc<FewBodyBasis>) -> Self {
        let dim = basis.dim();
        Self {
            basis,
            coeffs: vec![Cx::new(R::zero(), R::zero()); dim],
        }
    }

    /// Symmetrized product state u^{⊗N} for a unit one-body vector u.
    pub fn product(basis: Arc<FewBodyBasis>, u: &[Cx<R>]) -> Self {
        let n = basis.n_particles() as u32;
        let mut out = Self::zeros(basis);
        for i in 0..out.basis.dim() {
            let occ = out.basis.occupation(i);
            let mut mult_fact = 1.0f64;
            let mut amp = Cx::new(R::one(), R::zero());
            for (&site, &m) in &occ {
                mult_fact *= factorial(m);
                for _ in 0..m {
                    amp *= u[site as usize];
                }
            }
            // ⟨multiset|u^{⊗N}⟩ = √(N!/Πm!)·Πu
            let comb = (factorial(n) / mult_fact).sqrt();
            out.coeffs[i] = amp * cast::<R>(comb);
        }
        out
    }

    pub fn norm(&self) -> R {
        linalg::norm(&self.coeffs)
    }

    pub fn normalize(&mut self) {
        let nrm = self.norm();
        if nrm > R::zero() {
            linalg::scale_in_place(&mut self.coeffs, Cx::new(nrm.recip(), R::zero()));
        }
    }

    /// Expand into the plain (non-compressed) symmetric tensor on (ℂ^S)^⊗N.
    pub fn to_tensor(&self) -> Vec<Cx<R>> {
        let s = self.basis.s_sites();
        let n = self.basis.n_particles();
        let mut out = vec![Cx::new(R::zero(), R::zero()); s.pow(n as u32)];
        for (i, &c) in self.coeffs.iter().enumerate() {
            if c.norm_sqr() == R::zero() {
                continue;
            }
            let sites = self.basis.state(i);
            let occ = self.basis.occupation(i);
            let mult: f64 = occ.values().map(|&m| factorial(m)).product();
            let val = c * cast::<R>((mult / factorial(n as u32)).sqrt());
            let mut perm: Vec<u16> = sites.to_vec();
            permutations(&mut perm, 0, &mut |p| {
                let mut idx = 0usize;
                for &site in p.iter() {
                    idx = idx * s + site as usize;
                }
                out[idx] = val;
            });
        }
        out
    }

    /// Rebuild from a symmetric tensor.
    pub fn from_tensor(basis: Arc<FewBodyBasis>, tensor: &[Cx<R>]) -> Self {
        let s = basis.s_sites();
        let n = basis.n_particles() as u32;
        let mut out = Self::zeros(basis);
        for i in 0..out.basis.dim() {
            let sites = out.basis.state(i);
            let mut idx = 0usize;
            for &site in sites {
                idx = idx * s + site as usize;
            }
            let occ = out.basis.occupation(i);
            let mult: f64 = occ.values().map(|&m| factorial(m)).product();
            out.coeffs[i] = tensor[idx] * cast::<R>((factorial(n) / mult).sqrt());
        }
        out
    }
}

fn permutations(items: &mut Vec<u16>, k: usize, visit: &mut impl FnMut(&[u16])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permutations(items, k + 1, visit);
        items.swap(k, i);
    }
}

/// H = Σᵢ(−Δᵢ) + (1/N_s²) Σ_{i<j<k} V_N(xᵢ−xⱼ, xᵢ−xₖ) on the symmetric
/// occupation basis. For two particles the interaction sum is empty.
/// `n_scaling` is the N of the mean-field coupling (and of V_N), decoupled
/// from the particle number for structural experiments.
pub fn build_hamiltonian<R: Real>(
    lattice: &Arc<Lattice<R>>,
    basis: &Arc<FewBodyBasis>,
    potential: &ThreeBodyPotential<R>,
    n_scaling: u64,
) -> Result<FockOperator<R>> {
    if basis.s_sites() != lattice.site_count() {
        return Err(Error::SizeMismatch(
            "basis and lattice site counts differ".into(),
        ));
    }
    let interaction = SiteInteraction::build(lattice, potential);
    let coupling = cast::<R>((n_scaling as f64).powi(-2));
    let six = cast::<R>(6.0);
    let n_p = basis.n_particles();
    let mut trips: Vec<(u32, u32, Cx<R>)> = Vec::new();
    for col in 0..basis.dim() {
        let sites = basis.state(col);
        // diagonal: kinetic on-site + interaction
        let mut diag = six * lattice.inv_h2 * cast::<R>(n_p as f64);
        if n_p == 3 {
            diag += coupling
                * interaction.v3(sites[0] as usize, sites[1] as usize, sites[2] as usize);
        }
        trips.push((col as u32, col as u32, Cx::new(diag, R::zero())));
        // hopping: −(1/h²) Σ a*_y a_x over neighbor pairs
        let occ = basis.occupation(col);
        for (&site, &mult) in &occ {
            for nb in lattice.neighbors(site as usize) {
                let nb = nb as u16;
                // amplitude √(n_x (n_nb + 1)) with target occupation
                let n_x = mult as f64;
                let n_nb = *occ.get(&nb).unwrap_or(&0) as f64;
                let amp = (n_x * (n_nb + 1.0)).sqrt();
                let mut target: Vec<u16> = sites.to_vec();
                let pos = target.iter().position(|&t| t == site).expect("occupied");
                target[pos] = nb;
                target.sort_unstable();
                let row = basis.index_of(&target).expect("valid state");
                trips.push((
                    row as u32,
                    col as u32,
                    Cx::new(-lattice.inv_h2 * cast::<R>(amp), R::zero()),
                ));
            }
        }
    }
    Ok(FockOperator::from_triplets(basis.dim(), trips, R::zero()))
}

/// Propagation record.
pub struct FewBodyTrajectory<R: Real> {
    pub times: Vec<R>,
    pub norms: Vec<R>,
    pub energies: Vec<R>,
    pub final_state: FewBodyState<R>,
}

/// Krylov (Lanczos) exponential stepping; norm and energy drift are
/// monitored against the 1e-9-per-unit-time contract.
pub fn propagate<R: Real>(
    h: &FockOperator<R>,
    psi0: &FewBodyState<R>,
    dt: R,
    t_final: R,
) -> Result<FewBodyTrajectory<R>> {
    if Float::abs(psi0.norm() - R::one()) > cast::<R>(1e-8) {
        return Err(Error::NotNormalized("initial state must be unit".into()));
    }
    let steps = (t_final / dt).round().to_f64().expect("finite") as usize;
    let apply = |v: &[Cx<R>]| h.apply(v);
    let mut v = psi0.coeffs.clone();
    let e0 = h.expectation(&v).re;
    let mut times = vec![R::zero()];
    let mut norms = vec![linalg::norm(&v)];
    let mut energies = vec![e0];
    for step in 1..=steps {
        v = lanczos_expv(&apply, &v, dt, 30);
        let t = dt * cast::<R>(step as f64);
        let nrm = linalg::norm(&v);
        let en = h.expectation(&v).re;
        if Float::abs(nrm - R::one()) > cast::<R>(1e-9) * (R::one() + t)
            || Float::abs(en - e0) > cast::<R>(1e-9) * (R::one() + t) * (R::one() + Float::abs(e0))
        {
            return Err(Error::Instability(format!(
                "conservation drift at t = {t}: |Δnorm| = {:e}, |ΔE| = {:e}; retry with smaller dt",
                Float::abs(nrm - R::one()),
                Float::abs(en - e0)
            )));
        }
        times.push(t);
        norms.push(nrm);
        energies.push(en);
    }
    Ok(FewBodyTrajectory {
        times,
        norms,
        energies,
        final_state: FewBodyState {
            basis: psi0.basis.clone(),
            coeffs: v,
        },
    })
}

/// One-body reduced density matrix, trace = N.
pub struct ReducedDensityMatrix<R: Real> {
    pub matrix: Array2<Cx<R>>,
}

impl<R: Real> ReducedDensityMatrix<R> {
    pub fn trace(&self) -> R {
        let mut acc = R::zero();
        for i in 0..self.matrix.nrows() {
            acc += self.matrix[(i, i)].re;
        }
        acc
    }

    pub fn eigenvalues(&self) -> Vec<R> {
        crate::linalg::hermitian_eigenvalues(&self.matrix)
    }

    pub fn hermiticity_defect(&self) -> R {
        let mut worst = R::zero();
        for i in 0..self.matrix.nrows() {
            for j in 0..self.matrix.ncols() {
                let d = (self.matrix[(i, j)] - self.matrix[(j, i)].conj()).norm();
                if d > worst {
                    worst = d;
                }
            }
        }
        worst
    }
}

/// γ(x;y) = ⟨Ψ, a*_y a_x Ψ⟩ by contraction in the occupation basis.
pub fn reduced_density<R: Real>(psi: &FewBodyState<R>) -> ReducedDensityMatrix<R> {
    let s = psi.basis.s_sites();
    let mut g = Array2::zeros((s, s));
    for (i, &c) in psi.coeffs.iter().enumerate() {
        if c.norm_sqr() == R::zero() {
            continue;
        }
        let occ = psi.basis.occupation(i);
        for (&x, &nx) in &occ {
            // diagonal y = x
            g[(x as usize, x as usize)] += Cx::new(cast::<R>(nx as f64), R::zero()) * c.norm_sqr();
            // off-diagonal moves x → y
            for y in 0..s as u16 {
                if y == x {
                    continue;
                }
                let ny = *occ.get(&y).unwrap_or(&0);
                let mut target: Vec<u16> = psi.basis.state(i).to_vec();
                let pos = target.iter().position(|&t| t == x).expect("occupied");
                target[pos] = y;
                target.sort_unstable();
                let j = psi.basis.index_of(&target).expect("valid");
                let amp = ((nx as f64) * (ny as f64 + 1.0)).sqrt();
                // ⟨a*_y a_x⟩ term: conj(c_target)·c·amp contributes to γ(x;y)
                g[(x as usize, y as usize)] +=
                    psi.coeffs[j].conj() * c * cast::<R>(amp);
            }
        }
    }
    ReducedDensityMatrix { matrix: g }
}

/// Sectored excitation vector (φ₀,…,φ_N) in plain tensor representation;
/// sector n lives on (ℂ^S)^{⊗n}.
#[derive(Clone)]
pub struct ExcitationVector<R: Real> {
    pub s_sites: usize,
    pub sectors: Vec<Vec<Cx<R>>>,
}

impl<R: Real> ExcitationVector<R> {
    pub fn zeros(s_sites: usize, n_max: usize) -> Self {
        let sectors = (0..=n_max)
            .map(|n| vec![Cx::new(R::zero(), R::zero()); s_sites.pow(n as u32)])
            .collect();
        Self { s_sites, sectors }
    }

    pub fn norm_sqr(&self) -> R {
        self.sectors
            .iter()
            .map(|sec| sec.iter().map(|c| c.norm_sqr()).sum::<R>())
            .sum()
    }

    pub fn norm(&self) -> R {
        self.norm_sqr().sqrt()
    }

    pub fn sector_norm_sqr(&self, n: usize) -> R {
        self.sectors[n].iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn axpy(&mut self, s: Cx<R>, other: &Self) {
        for (a, b) in self.sectors.iter_mut().zip(&other.sectors) {
            linalg::axpy(a, s, b);
        }
    }

    pub fn scale(&mut self, s: Cx<R>) {
        for sec in self.sectors.iter_mut() {
            linalg::scale_in_place(sec, s);
        }
    }

    pub fn distance(&self, other: &Self) -> R {
        let mut acc = R::zero();
        for (a, b) in self.sectors.iter().zip(&other.sectors) {
            for (x, y) in a.iter().zip(b) {
                acc += (*x - *y).norm_sqr();
            }
        }
        acc.sqrt()
    }

    /// One-body density of the excitation vector:
    /// γ(x;y) = Σ_n n Σ_rest φ_n(x,rest) conj(φ_n(y,rest)).
    pub fn one_body_density(&self) -> Array2<Cx<R>> {
        let s = self.s_sites;
        let mut g = Array2::zeros((s, s));
        for (n, sec) in self.sectors.iter().enumerate() {
            if n == 0 {
                continue;
            }
            let rest = s.pow((n - 1) as u32);
            for x in 0..s {
                for y in 0..s {
                    let mut acc = Cx::new(R::zero(), R::zero());
                    for r in 0..rest {
                        acc += sec[x * rest + r] * sec[y * rest + r].conj();
                    }
                    g[(x, y)] += acc * cast::<R>(n as f64);
                }
            }
        }
        g
    }
}

// --- tensor slot primitives (sector n ≤ 3, lexicographic index) ---

fn slot_sizes(s: usize, n: usize, slot: usize) -> (usize, usize) {
    // (prefix, suffix) block sizes around the slot
    let prefix = s.pow(slot as u32);
    let suffix = s.pow((n - 1 - slot) as u32);
    (prefix, suffix)
}

/// out(prefix, suffix) = Σ_i weights[i] · φ(prefix, i, suffix)
fn contract_slot<R: Real>(
    s: usize,
    n: usize,
    slot: usize,
    weights: &[Cx<R>],
    phi: &[Cx<R>],
) -> Vec<Cx<R>> {
    let (prefix, suffix) = slot_sizes(s, n, slot);
    let mut out = vec![Cx::new(R::zero(), R::zero()); prefix * suffix];
    for p in 0..prefix {
        for i in 0..s {
            let w = weights[i];
            if w.norm_sqr() == R::zero() {
                continue;
            }
            let base = (p * s + i) * suffix;
            let obase = p * suffix;
            for q in 0..suffix {
                out[obase + q] += w * phi[base + q];
            }
        }
    }
    out
}

/// out(prefix, i, suffix) = v[i] · φ(prefix, suffix)
fn insert_slot<R: Real>(
    s: usize,
    n_out: usize,
    slot: usize,
    v: &[Cx<R>],
    phi: &[Cx<R>],
) -> Vec<Cx<R>> {
    let (prefix, suffix) = slot_sizes(s, n_out, slot);
    let mut out = vec![Cx::new(R::zero(), R::zero()); prefix * s * suffix];
    for p in 0..prefix {
        for i in 0..s {
            let w = v[i];
            if w.norm_sqr() == R::zero() {
                continue;
            }
            let base = (p * s + i) * suffix;
            let ibase = p * suffix;
            for q in 0..suffix {
                out[base + q] = w * phi[ibase + q];
            }
        }
    }
    out
}

/// Apply a one-body matrix to one slot.
fn matrix_slot<R: Real>(
    s: usize,
    n: usize,
    slot: usize,
    a: &Array2<Cx<R>>,
    phi: &[Cx<R>],
) -> Vec<Cx<R>> {
    let (prefix, suffix) = slot_sizes(s, n, slot);
    let mut out = vec![Cx::new(R::zero(), R::zero()); phi.len()];
    let mut line = vec![Cx::new(R::zero(), R::zero()); s];
    for p in 0..prefix {
        for q in 0..suffix {
            for i in 0..s {
                line[i] = phi[(p * s + i) * suffix + q];
            }
            for i in 0..s {
                let mut acc = Cx::new(R::zero(), R::zero());
                for j in 0..s {
                    acc += a[(i, j)] * line[j];
                }
                out[(p * s + i) * suffix + q] = acc;
            }
        }
    }
    out
}

/// Projection Q = 1 − |u⟩⟨u| on one slot.
fn q_slot<R: Real>(s: usize, n: usize, slot: usize, u: &[Cx<R>], phi: &[Cx<R>]) -> Vec<Cx<R>> {
    let u_conj: Vec<Cx<R>> = u.iter().map(|v| v.conj()).collect();
    let contracted = contract_slot(s, n, slot, &u_conj, phi);
    let back = insert_slot(s, n, slot, u, &contracted);
    phi.iter().zip(&back).map(|(a, b)| *a - *b).collect()
}

/// Symmetrize an n-tensor (average over all n! index permutations).
fn symmetrize<R: Real>(s: usize, n: usize, phi: &[Cx<R>]) -> Vec<Cx<R>> {
    match n {
        0 | 1 => phi.to_vec(),
        2 => {
            let mut out = vec![Cx::new(R::zero(), R::zero()); phi.len()];
            let half = cast::<R>(0.5);
            for i in 0..s {
                for j in 0..s {
                    out[i * s + j] = (phi[i * s + j] + phi[j * s + i]).scale(half);
                }
            }
            out
        }
        3 => {
            let mut out = vec![Cx::new(R::zero(), R::zero()); phi.len()];
            let sixth = cast::<R>(1.0 / 6.0);
            for i in 0..s {
                for j in 0..s {
                    for k in 0..s {
                        let v = phi[(i * s + j) * s + k]
                            + phi[(i * s + k) * s + j]
                            + phi[(j * s + i) * s + k]
                            + phi[(j * s + k) * s + i]
                            + phi[(k * s + i) * s + j]
                            + phi[(k * s + j) * s + i];
                        out[(i * s + j) * s + k] = v.scale(sixth);
                    }
                }
            }
            out
        }
        _ => unreachable!("sectors beyond 3 are never built"),
    }
}

/// a(u): sector n → n−1, amplitude √n.
fn annihilate_u<R: Real>(s: usize, n: usize, u: &[Cx<R>], phi: &[Cx<R>]) -> Vec<Cx<R>> {
    let u_conj: Vec<Cx<R>> = u.iter().map(|v| v.conj()).collect();
    let mut out = contract_slot(s, n, 0, &u_conj, phi);
    let amp = cast::<R>((n as f64).sqrt());
    linalg::scale_in_place(&mut out, Cx::new(amp, R::zero()));
    out
}

/// a*(u): sector n → n+1, amplitude √(n+1), output symmetric when the
/// input is.
fn create_u<R: Real>(s: usize, n: usize, u: &[Cx<R>], phi: &[Cx<R>]) -> Vec<Cx<R>> {
    let n_out = n + 1;
    let mut out = vec![Cx::new(R::zero(), R::zero()); s.pow(n_out as u32)];
    for slot in 0..n_out {
        let ins = insert_slot(s, n_out, slot, u, phi);
        linalg::axpy(&mut out, Cx::new(R::one(), R::zero()), &ins);
    }
    // √(n+1)·P_sym(u⊗φ) = (1/√(n+1)) Σ_slots insert
    let amp = cast::<R>(1.0 / ((n_out as f64).sqrt()));
    linalg::scale_in_place(&mut out, Cx::new(amp, R::zero()));
    out
}

/// The condensate-excitation transform
/// U_N: Ψ ↦ ⊕_k Q^{⊗k} a(u)^{N−k} Ψ / √((N−k)!).
pub fn un_transform<R: Real>(psi: &FewBodyState<R>, u: &[Cx<R>]) -> Result<ExcitationVector<R>> {
    let s = psi.basis.s_sites();
    let n = psi.basis.n_particles();
    if Float::abs(linalg::norm(u) - R::one()) > cast::<R>(1e-10) {
        return Err(Error::NotNormalized("condensate must be unit".into()));
    }
    let tensor = psi.to_tensor();
    let mut out = ExcitationVector::zeros(s, n);
    // repeatedly annihilate the condensate mode, then project every slot
    let mut reduced: Vec<Vec<Cx<R>>> = vec![tensor];
    for k in (0..n).rev() {
        let last = reduced.last().unwrap();
        reduced.push(annihilate_u(s, k + 1, u, last));
    }
    // reduced[j] = a(u)^j Ψ lives in sector n−j; φ_k = Q^{⊗k}(a(u)^{n−k}Ψ)/√((n−k)!)
    for k in 0..=n {
        let j = n - k;
        let mut sec = reduced[j].clone();
        for slot in 0..k {
            sec = q_slot(s, k, slot, u, &sec);
        }
        let fact = cast::<R>(1.0 / factorial(j as u32).sqrt());
        linalg::scale_in_place(&mut sec, Cx::new(fact, R::zero()));
        out.sectors[k] = sec;
    }
    Ok(out)
}

/// Inverse transform: Ψ = Σ_k a*(u)^{N−k} φ_k / √((N−k)!).
pub fn un_inverse<R: Real>(
    phi: &ExcitationVector<R>,
    u: &[Cx<R>],
    basis: &Arc<FewBodyBasis>,
) -> Result<FewBodyState<R>> {
    let s = phi.s_sites;
    let n = basis.n_particles();
    if phi.sectors.len() != n + 1 {
        return Err(Error::SizeMismatch("sector count must be N+1".into()));
    }
    let mut tensor = vec![Cx::new(R::zero(), R::zero()); s.pow(n as u32)];
    for k in 0..=n {
        let mut sec = phi.sectors[k].clone();
        for level in k..n {
            sec = create_u(s, level, u, &sec);
        }
        let fact = cast::<R>(1.0 / factorial((n - k) as u32).sqrt());
        linalg::axpy(&mut tensor, Cx::new(fact, R::zero()), &sec);
    }
    Ok(FewBodyState::from_tensor(basis.clone(), &tensor))
}

/// Time-dependent pieces the lattice generator needs at one instant.
pub struct LatticeGeneratorAt<R: Real> {
    pub(crate) s: usize,
    pub(crate) n_phys: f64,
    pub(crate) u: Vec<Cx<R>>,
    pub(crate) minus_lap: Array2<Cx<R>>,
    pub(crate) interaction: Arc<SiteInteraction<R>>,
    /// m(x,y) = Σ_z V3(x,y,z)|u_z|²
    pub(crate) m_two: Vec<R>,
    /// W1(x) = Σ_{y,z} V3(x,y,z)|u_y|²|u_z|² (twice the Hartree potential)
    pub(crate) w1: Vec<R>,
    /// K̃₂ = m ⊙ (u⊗u), then Q⊗Q
    pub(crate) k2: Vec<Cx<R>>,
    /// K₁ = Q K̃₁ Q as dense matrix
    pub(crate) k1: Array2<Cx<R>>,
    /// Q(½W1 + K̃₁)Q for the R₀ correction
    pub(crate) a0: Array2<Cx<R>>,
    /// Q[W1 ⊙ u] for R₁
    pub(crate) g1: Vec<Cx<R>>,
    /// Q^{⊗3}[V3 ⊙ u⊗u⊗u] for the triple-creation part of R₃
    pub(crate) g3: Vec<Cx<R>>,
    /// scalar ⟨u⊗³, V_N u⊗³⟩
    pub(crate) triple_self: R,
}

impl<R: Real> LatticeGeneratorAt<R> {
    /// χ(t) = (2N+3)/6 · ⟨u⊗³, V_N u⊗³⟩ at this instant.
    pub fn chi(&self) -> R {
        cast::<R>((2.0 * self.n_phys + 3.0) / 6.0) * self.triple_self
    }
}

/// Assemble the instant data for condensate `u` (unit ℓ² norm). `n_phys`
/// must equal the particle number for the transformed-dynamics identity.
pub fn lattice_generator_at<R: Real>(
    lattice: &Arc<Lattice<R>>,
    interaction: &Arc<SiteInteraction<R>>,
    u: &[Cx<R>],
    n_phys: usize,
) -> LatticeGeneratorAt<R> {
    let s = lattice.site_count();
    let f: Vec<R> = u.iter().map(|v| v.norm_sqr()).collect();
    // m(x,y) and W1 via the pair decomposition: g = W_pair f, etc.
    let wp = |a: usize, b: usize| interaction.w(a, b);
    let mut g = vec![R::zero(); s];
    for x in 0..s {
        let mut acc = R::zero();
        for z in 0..s {
            acc += wp(x, z) * f[z];
        }
        g[x] = acc;
    }
    let mut c = vec![R::zero(); s];
    for x in 0..s {
        let mut acc = R::zero();
        for z in 0..s {
            acc += wp(x, z) * f[z] * g[z];
        }
        c[x] = acc;
    }
    let third = cast::<R>(1.0 / 3.0);
    let mut m_two = vec![R::zero(); s * s];
    for x in 0..s {
        for y in 0..s {
            // m = (w(x−y)(g(x)+g(y)) + Σ_z w(x−z)w(y−z)f_z)/3
            let mut r = R::zero();
            for z in 0..s {
                r += wp(x, z) * wp(y, z) * f[z];
            }
            m_two[x * s + y] = (wp(x, y) * (g[x] + g[y]) + r) * third;
        }
    }
    let w1: Vec<R> = (0..s).map(|x| (g[x] * g[x] + c[x] + c[x]) * third).collect();
    let triple_self: R = (0..s).map(|x| f[x] * w1[x]).sum();

    let apply_q_mat = |mat: &Array2<Cx<R>>| -> Array2<Cx<R>> {
        // Q M Q with Q = 1 − |u⟩⟨u|
        let n = mat.nrows();
        let mut mu = vec![Cx::new(R::zero(), R::zero()); n]; // M u
        let mut um = vec![Cx::new(R::zero(), R::zero()); n]; // u† M
        for i in 0..n {
            for j in 0..n {
                mu[i] += mat[(i, j)] * u[j];
                um[j] += u[i].conj() * mat[(i, j)];
            }
        }
        let umu: Cx<R> = (0..n).map(|i| u[i].conj() * mu[i]).sum();
        let mut out = mat.clone();
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] = mat[(i, j)] - u[i] * um[j] - mu[i] * u[j].conj()
                    + u[i] * umu * u[j].conj();
            }
        }
        out
    };

    // K̃₁(x,y) = m(x,y) u(x) conj(u(y)); K₁ = Q K̃₁ Q
    let mut k1_tilde = Array2::zeros((s, s));
    for x in 0..s {
        for y in 0..s {
            k1_tilde[(x, y)] = Cx::new(m_two[x * s + y], R::zero()) * u[x] * u[y].conj();
        }
    }
    let k1 = apply_q_mat(&k1_tilde);

    // A₀ = Q(½W1 + K̃₁)Q
    let mut a0_inner = k1_tilde;
    let half = cast::<R>(0.5);
    for x in 0..s {
        a0_inner[(x, x)] += Cx::new(w1[x] * half, R::zero());
    }
    let a0 = apply_q_mat(&a0_inner);

    // K₂ = (Q⊗Q)[m ⊙ (u⊗u)]
    let mut k2_tilde = vec![Cx::new(R::zero(), R::zero()); s * s];
    for x in 0..s {
        for y in 0..s {
            k2_tilde[x * s + y] = Cx::new(m_two[x * s + y], R::zero()) * u[x] * u[y];
        }
    }
    let mut k2 = q_slot(s, 2, 0, u, &k2_tilde);
    k2 = q_slot(s, 2, 1, u, &k2);

    // g₁ = Q[W1 ⊙ u]
    let mut g1: Vec<Cx<R>> = (0..s).map(|x| Cx::new(w1[x], R::zero()) * u[x]).collect();
    g1 = q_slot(s, 1, 0, u, &g1);

    // G₃ = Q^{⊗3}[V3 ⊙ u⊗u⊗u]
    let mut g3 = vec![Cx::new(R::zero(), R::zero()); s * s * s];
    for x in 0..s {
        for y in 0..s {
            for z in 0..s {
                g3[(x * s + y) * s + z] =
                    Cx::new(interaction.v3(x, y, z), R::zero()) * u[x] * u[y] * u[z];
            }
        }
    }
    for slot in 0..3 {
        g3 = q_slot(s, 3, slot, u, &g3);
    }

    LatticeGeneratorAt {
        s,
        n_phys: n_phys as f64,
        u: u.to_vec(),
        minus_lap: lattice.minus_laplacian(),
        interaction: interaction.clone(),
        m_two,
        w1,
        k2,
        k1,
        a0,
        g1,
        g3,
        triple_self,
    }
}

fn sqrt_clamped_f(v: f64) -> f64 {
    if v > 0.0 {
        v.sqrt()
    } else {
        0.0
    }
}

impl<R: Real> LatticeGeneratorAt<R> {
    pub(crate) fn dgamma_apply(&self, a: &Array2<Cx<R>>, phi: &ExcitationVector<R>) -> ExcitationVector<R> {
        let s = self.s;
        let mut out = ExcitationVector::zeros(s, phi.sectors.len() - 1);
        for (n, sec) in phi.sectors.iter().enumerate() {
            if n == 0 {
                continue;
            }
            for slot in 0..n {
                let piece = matrix_slot(s, n, slot, a, sec);
                linalg::axpy(&mut out.sectors[n], Cx::new(R::one(), R::zero()), &piece);
            }
        }
        out
    }

    /// 𝔹 = dΓ(h + K₁) + ½Σ(K₂ a*a* + h.c.) with h = −Δ + mult(½W1)
    /// (h deliberately not Q-compressed: the identity needs the full h).
    pub fn quadratic_apply(&self, phi: &ExcitationVector<R>) -> ExcitationVector<R> {
        let s = self.s;
        let n_max = phi.sectors.len() - 1;
        // one-body: h + K₁
        let mut a = self.minus_lap.clone();
        let half = cast::<R>(0.5);
        for x in 0..s {
            a[(x, x)] += Cx::new(self.w1[x] * half, R::zero());
        }
        let a = &a + &self.k1;
        let mut out = self.dgamma_apply(&a, phi);

        // pair creation ½ Σ K₂(a,b) a*_a a*_b : sector n → n+2
        for n in 0..=n_max.saturating_sub(2) {
            let src = &phi.sectors[n];
            if src.iter().all(|c| c.norm_sqr() == R::zero()) {
                continue;
            }
            // K₂ ⊗ φ_n, then P_sym, amplitude ½√((n+1)(n+2))·2? The double
            // sum over (a,b) with symmetric K₂ is already encoded in the
            // 2-tensor; the ladder constant for Σ_{ab}K_{ab}a*_a a*_b is
            // √((n+1)(n+2)) on P_sym(K⊗φ), and the generator carries ½.
            let mut kphi = vec![Cx::new(R::zero(), R::zero()); s.pow((n + 2) as u32)];
            let rest = s.pow(n as u32);
            for ab in 0..s * s {
                let kv = self.k2[ab];
                if kv.norm_sqr() == R::zero() {
                    continue;
                }
                let base = ab * rest;
                for r in 0..rest {
                    kphi[base + r] = kv * src[r];
                }
            }
            let sym = symmetrize(s, n + 2, &kphi);
            let amp = cast::<R>(0.5 * (((n + 1) * (n + 2)) as f64).sqrt());
            linalg::axpy(&mut out.sectors[n + 2], Cx::new(amp, R::zero()), &sym);
        }
        // pair annihilation ½ Σ conj(K₂) a a : sector n → n−2
        for n in 2..=n_max {
            let src = &phi.sectors[n];
            if src.iter().all(|c| c.norm_sqr() == R::zero()) {
                continue;
            }
            let rest = s.pow((n - 2) as u32);
            let mut contracted = vec![Cx::new(R::zero(), R::zero()); rest];
            for ab in 0..s * s {
                let kv = self.k2[ab].conj();
                if kv.norm_sqr() == R::zero() {
                    continue;
                }
                let base = ab * rest;
                for r in 0..rest {
                    contracted[r] += kv * src[base + r];
                }
            }
            let amp = cast::<R>(0.5 * ((n * (n - 1)) as f64).sqrt());
            linalg::axpy(&mut out.sectors[n - 2], Cx::new(amp, R::zero()), &contracted);
        }
        out
    }

    /// ½ Σ_j (R_j + R_j†) applied to a sectored vector.
    pub fn corrections_apply(&self, phi: &ExcitationVector<R>) -> ExcitationVector<R> {
        let mut out = self.r_apply(phi);
        let adj = self.r_adjoint_apply(phi);
        out.axpy(Cx::new(R::one(), R::zero()), &adj);
        out.scale(Cx::new(cast::<R>(0.5), R::zero()));
        out
    }

    /// Full transformed generator H̃ = 𝔹 + ½Σ(R_j + R_j†).
    pub fn apply(&self, phi: &ExcitationVector<R>) -> ExcitationVector<R> {
        let mut out = self.quadratic_apply(phi);
        let corr = self.corrections_apply(phi);
        out.axpy(Cx::new(R::one(), R::zero()), &corr);
        out
    }

    /// Σ_j R_j (un-symmetrized). Bits of `mask` select pieces:
    /// 0:R₀ 1:R₁ 2:R₂ 3:R₃₁ 4:R₃₂ 5:R₃₃ 6:R₄₁ 7:R₄₂ 8:R₄₃ 9:R₅ 10:R₆.
    fn r_apply(&self, phi: &ExcitationVector<R>) -> ExcitationVector<R> {
        self.r_apply_masked(phi, u32::MAX)
    }

    pub(crate) fn r_apply_masked(&self, phi: &ExcitationVector<R>, mask: u32) -> ExcitationVector<R> {
        let s = self.s;
        let n = self.n_phys;
        let n2 = n * n;
        let n_max = phi.sectors.len() - 1;
        let u = &self.u;
        let mut out = ExcitationVector::zeros(s, n_max);

        // R₀ = ω(𝒩-polynomial) + dΓ(A₀)((N−𝒩)(N−𝒩−1)/N² − 1)
        for sec in 0..=n_max {
            if mask & 1 == 0 { break; }
            let src = &phi.sectors[sec];
            if src.iter().all(|c| c.norm_sqr() == R::zero()) {
                continue;
            }
            let sf = sec as f64;
            let scalar = self.triple_self / cast::<R>(6.0)
                * cast::<R>((3.0 * sf * sf + 6.0 * sf + 2.0) / n - sf * (sf + 1.0) * (sf + 2.0) / n2);
            linalg::axpy(&mut out.sectors[sec], Cx::new(scalar, R::zero()), src);
            let factor = cast::<R>(((n - sf) * (n - sf - 1.0)) / n2 - 1.0);
            if factor != R::zero() && sec > 0 {
                for slot in 0..sec {
                    let piece = matrix_slot(s, sec, slot, &self.a0, src);
                    linalg::axpy(&mut out.sectors[sec], Cx::new(factor, R::zero()), &piece);
                }
            }
        }

        // R₁ = ((N−𝒩)(N−𝒩−1)/N² − 1)√(N−𝒩)·a(g₁): sector sec → sec−1,
        // diagonal evaluated on the output sector
        let g1_conj: Vec<Cx<R>> = self.g1.iter().map(|v| v.conj()).collect();
        for sec in 1..=n_max {
            if mask & (1 << 1) == 0 { break; }
            let src = &phi.sectors[sec];
            if src.iter().all(|c| c.norm_sqr() == R::zero()) {
                continue;
            }
            let sout = (sec - 1) as f64;
            let d = (((n - sout - 1.0) * (n - sout - 2.0)) / n2 - 1.0) * sqrt_clamped_f(n - sout);
            if d == 0.0 {
                continue;
            }
            let mut ann = contract_slot(s, sec, 0, &g1_conj, src);
            let amp = cast::<R>(d * (sec as f64).sqrt());
            linalg::scale_in_place(&mut ann, Cx::new(amp, R::zero()));
            linalg::axpy(&mut out.sectors[sec - 1], Cx::new(R::one(), R::zero()), &ann);
        }

        // R₂ = Σ K₂ a*a* (√(N−𝒩−1)√(N−𝒩)(N−𝒩−2)/N² − 1): sec → sec+2
        for sec in 0..=n_max.saturating_sub(2) {
            if mask & (1 << 2) == 0 { break; }
            let src = &phi.sectors[sec];
            if src.iter().all(|c| c.norm_sqr() == R::zero()) {
                continue;
            }
            let sf = sec as f64;
            let d = sqrt_clamped_f(n - sf - 1.0) * sqrt_clamped_f(n - sf) * (n - sf - 2.0) / n2
                - 1.0;
            if d == 0.0 {
                continue;
            }
            let rest = s.pow(sec as u32);
            let mut kphi = vec![Cx::new(R::zero(), R::zero()); s.pow((sec + 2) as u32)];
            for ab in 0..s * s {
                let kv = self.k2[ab];
                if kv.norm_sqr() == R::zero() {
                    continue;
                }
                let base = ab * rest;
                for r in 0..rest {
                    kphi[base + r] = kv * src[r];
                }
            }
            let sym = symmetrize(s, sec + 2, &kphi);
            let amp = cast::<R>(d * (((sec + 1) * (sec + 2)) as f64).sqrt());
            linalg::axpy(&mut out.sectors[sec + 2], Cx::new(amp, R::zero()), &sym);
        }

        // R₃ pieces
        // R₃,₁ = (1/3N²) Σ G₃ a*a*a* √(N−𝒩−2)√(N−𝒩−1)√(N−𝒩): sec → sec+3
        for sec in 0..=n_max.saturating_sub(3) {
            if mask & (1 << 3) == 0 { break; }
            let src = &phi.sectors[sec];
            if src.iter().all(|c| c.norm_sqr() == R::zero()) {
                continue;
            }
            let sf = sec as f64;
            let d = sqrt_clamped_f(n - sf)
                * sqrt_clamped_f(n - sf - 1.0)
                * sqrt_clamped_f(n - sf - 2.0)
                / (3.0 * n2);
            if d == 0.0 {
                continue;
            }
            let rest = s.pow(sec as u32);
            let mut gphi = vec![Cx::new(R::zero(), R::zero()); s.pow((sec + 3) as u32)];
            for abc in 0..s * s * s {
                let gv = self.g3[abc];
                if gv.norm_sqr() == R::zero() {
                    continue;
                }
                let base = abc * rest;
                for r in 0..rest {
                    gphi[base + r] = gv * src[r];
                }
            }
            let sym = symmetrize(s, sec + 3, &gphi);
            let lad = (((sec + 1) * (sec + 2) * (sec + 3)) as f64).sqrt();
            linalg::axpy(
                &mut out.sectors[sec + 3],
                Cx::new(cast::<R>(d * lad), R::zero()),
                &sym,
            );
        }

        // R₃,₂ and R₃,₃: a*a*a with √(N−𝒩)(N−𝒩−1) at the input sector
        for sec in 1..n_max {
            let src = &phi.sectors[sec];
            if src.iter().all(|c| c.norm_sqr() == R::zero()) {
                continue;
            }
            let sf = sec as f64;
            let d = sqrt_clamped_f(n - sf) * (n - sf - 1.0);
            if d == 0.0 {
                continue;
            }
            let lad = ((sec * (sec + 1)) as f64).sqrt() * (sec as f64).sqrt();
            // R₃,₂: ξ = Q_slot1 φ; T(x̃,ỹ,rest) = m(x̃,ỹ)u(ỹ)ξ(x̃,rest); Q⊗Q
            if mask & (1 << 4) != 0 {
                let xi = q_slot(s, sec, 0, u, src);
                let rest = s.pow((sec - 1) as u32);
                let mut t = vec![Cx::new(R::zero(), R::zero()); s * s * rest];
                for x in 0..s {
                    for y in 0..s {
                        let factor = Cx::new(self.m_two[x * s + y], R::zero()) * u[y];
                        if factor.norm_sqr() == R::zero() {
                            continue;
                        }
                        let tb = (x * s + y) * rest;
                        let xb = x * rest;
                        for r in 0..rest {
                            t[tb + r] = factor * xi[xb + r];
                        }
                    }
                }
                let mut t = q_slot(s, sec + 1, 0, u, &t);
                t = q_slot(s, sec + 1, 1, u, &t);
                let sym = symmetrize(s, sec + 1, &t);
                let amp = cast::<R>(2.0 / n2 * d * lad);
                linalg::axpy(&mut out.sectors[sec + 1], Cx::new(amp, R::zero()), &sym);
            }
            // R₃,₃: Σ V3(x,y,z)u(x)u(y)ū(z) b*_x b*_y b_z (creators carry the
            // condensate weights, the annihilated slot is plain-Q projected)
            if mask & (1 << 5) != 0 {
                let rest = s.pow((sec - 1) as u32);
                let xi = q_slot(s, sec, 0, u, src);
                let mut mu = vec![Cx::new(R::zero(), R::zero()); s * s * rest];
                for x in 0..s {
                    for y in 0..s {
                        let mut line = vec![Cx::new(R::zero(), R::zero()); rest];
                        for z in 0..s {
                            let v3 = self.interaction.v3(x, y, z);
                            if v3 == R::zero() {
                                continue;
                            }
                            let w = Cx::new(v3, R::zero()) * u[z].conj();
                            let zb = z * rest;
                            for r in 0..rest {
                                line[r] += w * xi[zb + r];
                            }
                        }
                        let factor = u[x] * u[y];
                        let tb = (x * s + y) * rest;
                        for r in 0..rest {
                            mu[tb + r] = factor * line[r];
                        }
                    }
                }
                let mut t = q_slot(s, sec + 1, 0, u, &mu);
                t = q_slot(s, sec + 1, 1, u, &t);
                let sym = symmetrize(s, sec + 1, &t);
                let amp = cast::<R>(1.0 / n2 * d * lad);
                linalg::axpy(&mut out.sectors[sec + 1], Cx::new(amp, R::zero()), &sym);
            }
        }

        // R₄ pieces
        // R₄,₁: sec → sec+2 with √(N−𝒩−1)√(N−𝒩)
        for sec in 1..=n_max {
            if mask & (1 << 6) == 0 { break; }
            if sec + 2 > n_max {
                continue;
            }
            let src = &phi.sectors[sec];
            if src.iter().all(|c| c.norm_sqr() == R::zero()) {
                continue;
            }
            let sf = sec as f64;
            let d = sqrt_clamped_f(n - sf - 1.0) * sqrt_clamped_f(n - sf) / n2;
            if d == 0.0 {
                continue;
            }
            let xi = q_slot(s, sec, 0, u, src);
            let rest = s.pow((sec - 1) as u32);
            let mut t = vec![Cx::new(R::zero(), R::zero()); s * s * s * rest];
            for x in 0..s {
                let xb = x * rest;
                for y in 0..s {
                    for z in 0..s {
                        let v3 = self.interaction.v3(x, y, z);
                        if v3 == R::zero() {
                            continue;
                        }
                        let factor = Cx::new(v3, R::zero()) * u[y] * u[z];
                        let tb = ((x * s + y) * s + z) * rest;
                        for r in 0..rest {
                            t[tb + r] = factor * xi[xb + r];
                        }
                    }
                }
            }
            for slot in 0..3 {
                t = q_slot(s, sec + 2, slot, u, &t);
            }
            let sym = symmetrize(s, sec + 2, &t);
            let lad = (sec as f64).sqrt() * ((sec * (sec + 1) * (sec + 2)) as f64).sqrt();
            linalg::axpy(
                &mut out.sectors[sec + 2],
                Cx::new(cast::<R>(d * lad), R::zero()),
                &sym,
            );
        }

        // R₄,₂ + R₄,₃ and R₅, R₆: sector-preserving or +1 shifts with two
        // annihilations
        for sec in 2..=n_max {
            let src = &phi.sectors[sec];
            if src.iter().all(|c| c.norm_sqr() == R::zero()) {
                continue;
            }
            let sf = sec as f64;
            let rest = s.pow((sec - 2) as u32);
            let ann_amp = ((sec * (sec - 1)) as f64).sqrt();

            // ψ₂(x', y', rest) with Q on both annihilated slots
            let mut psi2 = q_slot(s, sec, 0, u, src);
            psi2 = q_slot(s, sec, 1, u, &psi2);

            // R₄,₂: (1/2N²)(N−𝒩)·(Q⊗Q)[m ⊙ ψ₂]
            let d42 = (n - sf) / (2.0 * n2);
            if d42 != 0.0 && mask & (1 << 7) != 0 {
                let mut t = vec![Cx::new(R::zero(), R::zero()); s * s * rest];
                for xy in 0..s * s {
                    let factor = Cx::new(self.m_two[xy], R::zero());
                    let base = xy * rest;
                    for r in 0..rest {
                        t[base + r] = factor * psi2[base + r];
                    }
                }
                let mut t = q_slot(s, sec, 0, u, &t);
                t = q_slot(s, sec, 1, u, &t);
                let sym = symmetrize(s, sec, &t);
                let amp = cast::<R>(d42 * ann_amp * ann_amp);
                linalg::axpy(&mut out.sectors[sec], Cx::new(amp, R::zero()), &sym);
            }

            // R₄,₃: (1/N²)(N−𝒩)·(Q⊗Q on (x,y))[Σ_z V3(x,y,z)conj(u_z)·u(y-slot?)…]
            // chains: x: Q—x̃—Q→x' ; y: Q—ỹ—(1, fed u(y')=u(ỹ)) ; z = z̃ with
            // conj(u(z)) on the left and Q→z' on the right.
            let d43 = (n - sf) / n2;
            if d43 != 0.0 && mask & (1 << 8) != 0 {
                // annihilations on x' (Q chain) and z' (Q chain): ψ₂ already
                // has Q on both slots; slot order (x', z')
                let mut t = vec![Cx::new(R::zero(), R::zero()); s * s * rest];
                for x in 0..s {
                    for y in 0..s {
                        let mut line = vec![Cx::new(R::zero(), R::zero()); rest];
                        for z in 0..s {
                            let v3 = self.interaction.v3(x, y, z);
                            if v3 == R::zero() {
                                continue;
                            }
                            let w = Cx::new(v3, R::zero()) * u[z].conj();
                            let zb = (x * s + z) * rest;
                            for r in 0..rest {
                                line[r] += w * psi2[zb + r];
                            }
                        }
                        let factor = u[y];
                        let tb = (x * s + y) * rest;
                        for r in 0..rest {
                            t[tb + r] = factor * line[r];
                        }
                    }
                }
                let mut t = q_slot(s, sec, 0, u, &t);
                t = q_slot(s, sec, 1, u, &t);
                let sym = symmetrize(s, sec, &t);
                let amp = cast::<R>(d43 * ann_amp * ann_amp);
                linalg::axpy(&mut out.sectors[sec], Cx::new(amp, R::zero()), &sym);
            }

            // R₅: sec → sec+1 with √(N−𝒩−2) at the input sector
            if sec + 1 <= n_max && mask & (1 << 9) != 0 {
                let d5 = sqrt_clamped_f(n - sf) / n2;
                if d5 != 0.0 {
                    let mut t = vec![Cx::new(R::zero(), R::zero()); s * s * s * rest];
                    for x in 0..s {
                        for y in 0..s {
                            let pb = (x * s + y) * rest;
                            for z in 0..s {
                                let v3 = self.interaction.v3(x, y, z);
                                if v3 == R::zero() {
                                    continue;
                                }
                                let factor = Cx::new(v3, R::zero()) * u[z];
                                let tb = ((x * s + y) * s + z) * rest;
                                for r in 0..rest {
                                    t[tb + r] = factor * psi2[pb + r];
                                }
                            }
                        }
                    }
                    for slot in 0..3 {
                        t = q_slot(s, sec + 1, slot, u, &t);
                    }
                    let sym = symmetrize(s, sec + 1, &t);
                    let lad = ann_amp * (((sec - 1) * sec * (sec + 1)) as f64).sqrt();
                    let amp = cast::<R>(d5 * lad);
                    linalg::axpy(&mut out.sectors[sec + 1], Cx::new(amp, R::zero()), &sym);
                }
            }

            // R₆: sector preserved, three annihilations (needs sec = 3)
            if sec == 3 && mask & (1 << 10) != 0 {
                let d6 = 1.0 / (6.0 * n2);
                // ψ₃ = Q^{⊗3}φ₃ then V3 ⊙, then Q^{⊗3}, ladder 3!·d6
                let mut psi3 = psi2; // Q applied to slots 0,1 already
                psi3 = q_slot(s, 3, 2, u, &psi3);
                let mut t = vec![Cx::new(R::zero(), R::zero()); s * s * s];
                for x in 0..s {
                    for y in 0..s {
                        for z in 0..s {
                            let v3 = self.interaction.v3(x, y, z);
                            let idx = (x * s + y) * s + z;
                            t[idx] = Cx::new(v3, R::zero()) * psi3[idx];
                        }
                    }
                }
                for slot in 0..3 {
                    t = q_slot(s, 3, slot, u, &t);
                }
                // already symmetric (V3 symmetric, φ₃ symmetric)
                let amp = cast::<R>(d6 * 6.0);
                linalg::axpy(&mut out.sectors[3], Cx::new(amp, R::zero()), &t);
            }
        }
        out
    }

    /// Σ_j R_j† via ⟨ψ, R†φ⟩ = ⟨Rψ, φ⟩: assembled by applying R to a dual
    /// basis would be wasteful; instead each adjoint action is coded
    /// directly from the conjugated formulas.
    fn r_adjoint_apply(&self, phi: &ExcitationVector<R>) -> ExcitationVector<R> {
        // R_j are sums of pieces of the form D(𝒩-dependent) × (tensor
        // kernels with Q projections); their adjoints reverse the ladder
        // direction and conjugate the kernels. Rather than hand-code each
        // one again, exploit linearity: build the adjoint by matrix-free
        // transposition over sectors using the forward action on basis
        // blocks. Sectors are small (S³ at most), so the forward action on
        // a full sector basis is affordable only for S=64; instead use the
        // identity ⟨e_i, R†φ⟩ = conj(⟨φ_target-block contributions⟩).
        //
        // Practical route: the forward map sector s → s' is a linear map
        // L_{s'}s; the adjoint block is L†: apply the forward action to the
        // conjugate of φ and conjugate the result, with ladder directions
        // mirrored. The clean implementation is the inner-product route:
        // R†φ restricted to sector s equals Σ_{s'} (L_{s',s})† φ_{s'}.
        //
        // Here we realize it by running the forward action on delta vectors
        // only over the *occupied* target sectors — but the forward maps
        // are all built from slot-local primitives whose adjoints are the
        // same primitives with conjugated kernels and reversed insert /
        // contract roles, so we code the reverse actions directly below.
        self.r_adjoint_masked(phi, u32::MAX)
    }

    pub(crate) fn r_adjoint_masked(&self, phi: &ExcitationVector<R>, mask: u32) -> ExcitationVector<R> {
        let s = self.s;
        let n_max = phi.sectors.len() - 1;
        let mut out = ExcitationVector::zeros(s, n_max);
        // Adjoint of a map sec → sec' built as φ ↦ c·P_sym(K ⊗_pattern Qφ)
        // is φ' ↦ conj-kernel contraction from sec' back to sec. All pieces
        // below mirror r_apply with contract/insert swapped.
        let u = &self.u;
        let n = self.n_phys;
        let n2 = n * n;

        // R₀† = R₀ (diagonal, real scalars; A₀ self-adjoint)
        for sec in 0..=n_max {
            if mask & 1 == 0 { break; }
            let src = &phi.sectors[sec];
            if src.iter().all(|c| c.norm_sqr() == R::zero()) {
                continue;
            }
            let sf = sec as f64;
            let scalar = self.triple_self / cast::<R>(6.0)
                * cast::<R>((3.0 * sf * sf + 6.0 * sf + 2.0) / n - sf * (sf + 1.0) * (sf + 2.0) / n2);
            linalg::axpy(&mut out.sectors[sec], Cx::new(scalar, R::zero()), src);
            let factor = cast::<R>(((n - sf) * (n - sf - 1.0)) / n2 - 1.0);
            if factor != R::zero() && sec > 0 {
                for slot in 0..sec {
                    let piece = matrix_slot(s, sec, slot, &self.a0, src);
                    linalg::axpy(&mut out.sectors[sec], Cx::new(factor, R::zero()), &piece);
                }
            }
        }

        // R₁† = a*(g₁)·conj(d): sector sec → sec+1
        for sec in 0..n_max {
            if mask & (1 << 1) == 0 { break; }
            let src = &phi.sectors[sec];
            if src.iter().all(|c| c.norm_sqr() == R::zero()) {
                continue;
            }
            let sf = sec as f64;
            let d = (((n - sf - 1.0) * (n - sf - 2.0)) / n2 - 1.0) * sqrt_clamped_f(n - sf);
            if d == 0.0 {
                continue;
            }
            let created = create_u_general(s, sec, &self.g1, src);
            linalg::axpy(
                &mut out.sectors[sec + 1],
                Cx::new(cast::<R>(d), R::zero()),
                &created,
            );
        }

        // R₂†: sec → sec−2, conj kernel, diagonal at output sector
        for sec in 2..=n_max {
            if mask & (1 << 2) == 0 { break; }
            let src = &phi.sectors[sec];
            if src.iter().all(|c| c.norm_sqr() == R::zero()) {
                continue;
            }
            let sout = (sec - 2) as f64;
            let d = sqrt_clamped_f(n - sout - 1.0) * sqrt_clamped_f(n - sout) * (n - sout - 2.0)
                / n2
                - 1.0;
            if d == 0.0 {
                continue;
            }
            let rest = s.pow((sec - 2) as u32);
            let mut contracted = vec![Cx::new(R::zero(), R::zero()); rest];
            for ab in 0..s * s {
                let kv = self.k2[ab].conj();
                if kv.norm_sqr() == R::zero() {
                    continue;
                }
                let base = ab * rest;
                for r in 0..rest {
                    contracted[r] += kv * src[base + r];
                }
            }
            let amp = cast::<R>(d * ((sec * (sec - 1)) as f64).sqrt());
            linalg::axpy(&mut out.sectors[sec - 2], Cx::new(amp, R::zero()), &contracted);
        }

        // R₃,₁†: sec → sec−3
        for sec in 3..=n_max {
            if mask & (1 << 3) == 0 { break; }
            let src = &phi.sectors[sec];
            if src.iter().all(|c| c.norm_sqr() == R::zero()) {
                continue;
            }
            let sout = (sec - 3) as f64;
            let d = sqrt_clamped_f(n - sout)
                * sqrt_clamped_f(n - sout - 1.0)
                * sqrt_clamped_f(n - sout - 2.0)
                / (3.0 * n2);
            if d == 0.0 {
                continue;
            }
            let rest = s.pow((sec - 3) as u32);
            let mut contracted = vec![Cx::new(R::zero(), R::zero()); rest];
            for abc in 0..s * s * s {
                let gv = self.g3[abc].conj();
                if gv.norm_sqr() == R::zero() {
                    continue;
                }
                let base = abc * rest;
                for r in 0..rest {
                    contracted[r] += gv * src[base + r];
                }
            }
            let lad = ((sec * (sec - 1) * (sec - 2)) as f64).sqrt();
            linalg::axpy(
                &mut out.sectors[sec - 3],
                Cx::new(cast::<R>(d * lad), R::zero()),
                &contracted,
            );
        }

        // R₃,₂† and R₃,₃†: sec → sec−1 (annihilate two, create one)
        for sec in 2..=n_max {
            let src = &phi.sectors[sec];
            if src.iter().all(|c| c.norm_sqr() == R::zero()) {
                continue;
            }
            let sout = (sec - 1) as f64;
            let d = sqrt_clamped_f(n - sout) * (n - sout - 1.0);
            if d == 0.0 {
                continue;
            }
            let lad = (((sec - 1) * sec) as f64).sqrt() * ((sec - 1) as f64).sqrt();
            let rest = s.pow((sec - 2) as u32);
            // adjoint of R₃,₂ piece: contract the (x,y) slots of φ with
            // conj(Q⊗Q[m ⊙ (·⊗u)Q]) and re-create on x̃' via Q
            if mask & (1 << 4) != 0 {
                let mut t = q_slot(s, sec, 0, u, src);
                t = q_slot(s, sec, 1, u, &t);
                // contract slot 2 (y-position) against conj kernel:
                // out(x̃,rest) = Σ_y conj(m(x̃,y)u(y)) t(x̃,y,rest)
                let mut red = vec![Cx::new(R::zero(), R::zero()); s * rest];
                for x in 0..s {
                    for y in 0..s {
                        let kv = (Cx::new(self.m_two[x * s + y], R::zero()) * u[y]).conj();
                        if kv.norm_sqr() == R::zero() {
                            continue;
                        }
                        let tb = (x * s + y) * rest;
                        let ob = x * rest;
                        for r in 0..rest {
                            red[ob + r] += kv * t[tb + r];
                        }
                    }
                }
                let red = q_slot(s, sec - 1, 0, u, &red);
                let sym = symmetrize(s, sec - 1, &red);
                let amp = cast::<R>(2.0 / n2 * d * lad);
                linalg::axpy(&mut out.sectors[sec - 1], Cx::new(amp, R::zero()), &sym);
            }
            // adjoint of R₃,₃: contract (x,y) against conj(V3 u(x)u(y)),
            // multiply u(z) on the created slot, plain Q at the end
            if mask & (1 << 5) != 0 {
                let mut t = q_slot(s, sec, 0, u, src);
                t = q_slot(s, sec, 1, u, &t);
                let mut red = vec![Cx::new(R::zero(), R::zero()); s * rest];
                for z in 0..s {
                    let mut acc = vec![Cx::new(R::zero(), R::zero()); rest];
                    for x in 0..s {
                        for y in 0..s {
                            let v3 = self.interaction.v3(x, y, z);
                            if v3 == R::zero() {
                                continue;
                            }
                            let kv = Cx::new(v3, R::zero()) * (u[x] * u[y]).conj();
                            let tb = (x * s + y) * rest;
                            for r in 0..rest {
                                acc[r] += kv * t[tb + r];
                            }
                        }
                    }
                    let uz = u[z];
                    let ob = z * rest;
                    for r in 0..rest {
                        red[ob + r] = uz * acc[r];
                    }
                }
                let red = q_slot(s, sec - 1, 0, u, &red);
                let sym = symmetrize(s, sec - 1, &red);
                let amp = cast::<R>(1.0 / n2 * d * lad);
                linalg::axpy(&mut out.sectors[sec - 1], Cx::new(amp, R::zero()), &sym);
            }
        }

        // R₄,₁†: sec → sec−2 … only relevant source sector is 3 (output 1)
        for sec in 3..=n_max {
            if mask & (1 << 6) == 0 { break; }
            let src = &phi.sectors[sec];
            if src.iter().all(|c| c.norm_sqr() == R::zero()) {
                continue;
            }
            let sout = (sec - 2) as f64;
            let d = sqrt_clamped_f(n - sout - 1.0) * sqrt_clamped_f(n - sout) / n2;
            if d == 0.0 {
                continue;
            }
            let rest = s.pow((sec - 3) as u32);
            let mut t = src.clone();
            for slot in 0..3 {
                t = q_slot(s, sec, slot, u, &t);
            }
            // contract (y,z) against conj(V3·u(y)u(z)), Q on the remaining x̃
            let mut red = vec![Cx::new(R::zero(), R::zero()); s * rest];
            for x in 0..s {
                let mut acc = vec![Cx::new(R::zero(), R::zero()); rest];
                for y in 0..s {
                    for z in 0..s {
                        let v3 = self.interaction.v3(x, y, z);
                        if v3 == R::zero() {
                            continue;
                        }
                        let kv = Cx::new(v3, R::zero()) * (u[y] * u[z]).conj();
                        let tb = ((x * s + y) * s + z) * rest;
                        for r in 0..rest {
                            acc[r] += kv * t[tb + r];
                        }
                    }
                }
                let ob = x * rest;
                for r in 0..rest {
                    red[ob + r] = acc[r];
                }
            }
            let red = q_slot(s, sec - 2, 0, u, &red);
            let sym = symmetrize(s, sec - 2, &red);
            let lad = ((sec * (sec - 1) * (sec - 2)) as f64).sqrt() * ((sec - 2) as f64).sqrt();
            linalg::axpy(
                &mut out.sectors[sec - 2],
                Cx::new(cast::<R>(d * lad), R::zero()),
                &sym,
            );
        }

        // R₄,₂†, R₄,₃†: sector preserving (self-structure, conj kernels,
        // diagonal factor at the same sector)
        for sec in 2..=n_max {
            let src = &phi.sectors[sec];
            if src.iter().all(|c| c.norm_sqr() == R::zero()) {
                continue;
            }
            let sf = sec as f64;
            let rest = s.pow((sec - 2) as u32);
            let ann_amp = ((sec * (sec - 1)) as f64).sqrt();
            let mut psi2 = q_slot(s, sec, 0, u, src);
            psi2 = q_slot(s, sec, 1, u, &psi2);

            let d42 = (n - sf) / (2.0 * n2);
            if d42 != 0.0 && mask & (1 << 7) != 0 {
                let mut t = vec![Cx::new(R::zero(), R::zero()); s * s * rest];
                for xy in 0..s * s {
                    let factor = Cx::new(self.m_two[xy], R::zero());
                    let base = xy * rest;
                    for r in 0..rest {
                        t[base + r] = factor * psi2[base + r];
                    }
                }
                let mut t = q_slot(s, sec, 0, u, &t);
                t = q_slot(s, sec, 1, u, &t);
                let sym = symmetrize(s, sec, &t);
                let amp = cast::<R>(d42 * ann_amp * ann_amp);
                linalg::axpy(&mut out.sectors[sec], Cx::new(amp, R::zero()), &sym);
            }
            let d43 = (n - sf) / n2;
            if d43 != 0.0 && mask & (1 << 8) != 0 {
                // adjoint of the R₄,₃ chain: swap (u(y), conj(u_z)) roles
                let mut t = vec![Cx::new(R::zero(), R::zero()); s * s * rest];
                for x in 0..s {
                    for z in 0..s {
                        let mut line = vec![Cx::new(R::zero(), R::zero()); rest];
                        for y in 0..s {
                            let v3 = self.interaction.v3(x, y, z);
                            if v3 == R::zero() {
                                continue;
                            }
                            let w = Cx::new(v3, R::zero()) * u[y].conj();
                            let yb = (x * s + y) * rest;
                            for r in 0..rest {
                                line[r] += w * psi2[yb + r];
                            }
                        }
                        let factor = u[z];
                        let tb = (x * s + z) * rest;
                        for r in 0..rest {
                            t[tb + r] = factor * line[r];
                        }
                    }
                }
                let mut t = q_slot(s, sec, 0, u, &t);
                t = q_slot(s, sec, 1, u, &t);
                let sym = symmetrize(s, sec, &t);
                let amp = cast::<R>(d43 * ann_amp * ann_amp);
                linalg::axpy(&mut out.sectors[sec], Cx::new(amp, R::zero()), &sym);
            }
        }

        // R₅†: sec → sec−1 (annihilate three, create two)
        for sec in 3..=n_max {
            if mask & (1 << 9) == 0 { break; }
            let src = &phi.sectors[sec];
            if src.iter().all(|c| c.norm_sqr() == R::zero()) {
                continue;
            }
            let sout = (sec - 1) as f64;
            let d = sqrt_clamped_f(n - sout) / n2;
            if d == 0.0 {
                continue;
            }
            let rest = s.pow((sec - 3) as u32);
            let mut t = src.clone();
            for slot in 0..3 {
                t = q_slot(s, sec, slot, u, &t);
            }
            // contract z against conj(V3 u(z)) leaving (x,y)
            let mut red = vec![Cx::new(R::zero(), R::zero()); s * s * rest];
            for x in 0..s {
                for y in 0..s {
                    let mut acc = vec![Cx::new(R::zero(), R::zero()); rest];
                    for z in 0..s {
                        let v3 = self.interaction.v3(x, y, z);
                        if v3 == R::zero() {
                            continue;
                        }
                        let kv = Cx::new(v3, R::zero()) * u[z].conj();
                        let tb = ((x * s + y) * s + z) * rest;
                        for r in 0..rest {
                            acc[r] += kv * t[tb + r];
                        }
                    }
                    let ob = (x * s + y) * rest;
                    for r in 0..rest {
                        red[ob + r] = acc[r];
                    }
                }
            }
            let mut red = q_slot(s, sec - 1, 0, u, &red);
            red = q_slot(s, sec - 1, 1, u, &red);
            let sym = symmetrize(s, sec - 1, &red);
            // annihilate 3 from sec, create 2 onto sec−3
            let lad = ((sec * (sec - 1) * (sec - 2)) as f64).sqrt()
                * (((sec - 2) * (sec - 1)) as f64).sqrt();
            linalg::axpy(
                &mut out.sectors[sec - 1],
                Cx::new(cast::<R>(d * lad), R::zero()),
                &sym,
            );
        }

        // R₆† = R₆ (self-adjoint by symmetry of the kernel)
        if n_max >= 3 && mask & (1 << 10) != 0 {
            let src = &phi.sectors[3];
            if !src.iter().all(|c| c.norm_sqr() == R::zero()) {
                let d6 = 1.0 / (6.0 * n2);
                let mut psi3 = src.clone();
                for slot in 0..3 {
                    psi3 = q_slot(s, 3, slot, u, &psi3);
                }
                let mut t = vec![Cx::new(R::zero(), R::zero()); s * s * s];
                for x in 0..s {
                    for y in 0..s {
                        for z in 0..s {
                            let idx = (x * s + y) * s + z;
                            t[idx] =
                                Cx::new(self.interaction.v3(x, y, z), R::zero()) * psi3[idx];
                        }
                    }
                }
                for slot in 0..3 {
                    t = q_slot(s, 3, slot, u, &t);
                }
                let amp = cast::<R>(d6 * 6.0);
                linalg::axpy(&mut out.sectors[3], Cx::new(amp, R::zero()), &t);
            }
        }

        out
    }
}

/// a*(v) for a general (not necessarily unit) vector v.
fn create_u_general<R: Real>(s: usize, n: usize, v: &[Cx<R>], phi: &[Cx<R>]) -> Vec<Cx<R>> {
    let n_out = n + 1;
    let mut out = vec![Cx::new(R::zero(), R::zero()); s.pow(n_out as u32)];
    for slot in 0..n_out {
        let ins = insert_slot(s, n_out, slot, v, phi);
        linalg::axpy(&mut out, Cx::new(R::one(), R::zero()), &ins);
    }
    let amp = cast::<R>(1.0 / ((n_out as f64).sqrt()));
    linalg::scale_in_place(&mut out, Cx::new(amp, R::zero()));
    out
}

/// χ = (2N+3)/6 · ⟨u⊗³, V_N u⊗³⟩ without assembling the full generator.
pub fn lattice_chi<R: Real>(interaction: &SiteInteraction<R>, u: &[Cx<R>], n_phys: usize) -> R {
    let f_pot = lattice_hartree_potential(interaction, u);
    let triple: R = u
        .iter()
        .zip(&f_pot)
        .map(|(uu, fp)| uu.norm_sqr() * (*fp + *fp))
        .sum();
    cast::<R>((2.0 * n_phys as f64 + 3.0) / 6.0) * triple
}

/// Lattice Hartree right-hand side: iu̇ = (−Δ + F[u])u with
/// F(x) = ½ Σ_{j,k} V3(x,j,k)|u_j|²|u_k|².
pub fn lattice_hartree_potential<R: Real>(
    interaction: &SiteInteraction<R>,
    u: &[Cx<R>],
) -> Vec<R> {
    let s = u.len();
    let f: Vec<R> = u.iter().map(|v| v.norm_sqr()).collect();
    let mut g = vec![R::zero(); s];
    for x in 0..s {
        let mut acc = R::zero();
        for z in 0..s {
            acc += interaction.w(x, z) * f[z];
        }
        g[x] = acc;
    }
    let mut c = vec![R::zero(); s];
    for x in 0..s {
        let mut acc = R::zero();
        for z in 0..s {
            acc += interaction.w(x, z) * f[z] * g[z];
        }
        c[x] = acc;
    }
    (0..s)
        .map(|x| (g[x] * g[x] + c[x] + c[x]) / cast::<R>(6.0))
        .collect()
}

/// One RK4 step of the lattice Hartree equation.
pub fn lattice_hartree_step<R: Real>(
    lattice: &Lattice<R>,
    interaction: &SiteInteraction<R>,
    u: &[Cx<R>],
    dt: R,
) -> Vec<Cx<R>> {
    let minus_lap = |v: &[Cx<R>]| -> Vec<Cx<R>> {
        let s = v.len();
        let six = cast::<R>(6.0);
        let mut out = vec![Cx::new(R::zero(), R::zero()); s];
        for i in 0..s {
            let mut acc = v[i].scale(six);
            for nb in lattice.neighbors(i) {
                acc -= v[nb];
            }
            out[i] = acc.scale(lattice.inv_h2);
        }
        out
    };
    let rhs = |v: &[Cx<R>]| -> Vec<Cx<R>> {
        let pot = lattice_hartree_potential(interaction, v);
        let kin = minus_lap(v);
        let minus_i = Cx::new(R::zero(), -R::one());
        kin.iter()
            .zip(v)
            .zip(&pot)
            .map(|((k, vv), p)| (*k + vv.scale(*p)) * minus_i)
            .collect()
    };
    let k1 = rhs(u);
    let half = Cx::new(dt / cast::<R>(2.0), R::zero());
    let full = Cx::new(dt, R::zero());
    let mut u2 = u.to_vec();
    linalg::axpy(&mut u2, half, &k1);
    let k2 = rhs(&u2);
    let mut u3 = u.to_vec();
    linalg::axpy(&mut u3, half, &k2);
    let k3 = rhs(&u3);
    let mut u4 = u.to_vec();
    linalg::axpy(&mut u4, full, &k3);
    let k4 = rhs(&u4);
    let sixth = Cx::new(dt / cast::<R>(6.0), R::zero());
    let third = Cx::new(dt / cast::<R>(3.0), R::zero());
    let mut out = u.to_vec();
    linalg::axpy(&mut out, sixth, &k1);
    linalg::axpy(&mut out, third, &k2);
    linalg::axpy(&mut out, third, &k3);
    linalg::axpy(&mut out, sixth, &k4);
    out
}

/// Outcome of the transformed-generator verification.
#[derive(Clone, Debug)]
pub struct EquivalenceReport {
    pub max_residual: f64,
    pub residuals: Vec<(f64, f64)>,
    pub fd_dt: f64,
    /// residual with χ perturbed by +1%
    pub perturbed_max_residual: f64,
    /// mean |χ| along the checked window (scale of the expected probe kick)
    pub chi_scale: f64,
}

/// Left path: propagate Ψ exactly and map through U_N(t) with the phase
/// e^{−i∫χ}. Right path: 4th-order finite-difference time derivative of the
/// left path versus H̃(t) applied via the lattice-instantiated generator.
/// Reports max over sampled t of ‖i∂Φ − H̃Φ‖/‖Φ‖, plus the χ-perturbation
/// probe (+1% on χ must kick the residual by ≈ 0.01·|χ|).
///
/// The identity requires the physical coupling, so the Hamiltonian is built
/// with N_scaling = N_particles = 3.
pub fn generator_equivalence_check<R: Real>(
    lattice: &Arc<Lattice<R>>,
    potential: &ThreeBodyPotential<R>,
    u0: &[Cx<R>],
    psi0: &FewBodyState<R>,
    dt: R,
    t_final: R,
    samples: usize,
) -> Result<EquivalenceReport> {
    let n_particles = psi0.basis.n_particles();
    if n_particles != 3 {
        return Err(Error::InvalidProblem(
            "the generator equivalence check runs with three particles".into(),
        ));
    }
    if Float::abs(linalg::norm(u0) - R::one()) > cast::<R>(1e-10) {
        return Err(Error::NotNormalized("u0 must be unit".into()));
    }
    let interaction = Arc::new(SiteInteraction::build(lattice, potential));
    let h = build_hamiltonian(lattice, &psi0.basis, potential, 3)?;

    let dt_f = dt.to_f64().unwrap_or(0.0);
    let t_f = t_final.to_f64().unwrap_or(0.0);
    let sample_times: Vec<f64> = (0..samples)
        .map(|i| 2.0 * dt_f + (t_f - 4.0 * dt_f) * i as f64 / (samples.max(2) - 1) as f64)
        .collect();

    // walk u and the χ phase forward on a fine grid, capturing u and θ at
    // every needed stencil time
    let run = |chi_scale_factor: f64, fd_h: f64| -> Result<(Vec<(f64, f64)>, f64)> {
        let mut needed: Vec<f64> = Vec::new();
        for &t in &sample_times {
            for o in [-2.0, -1.0, 0.0, 1.0, 2.0] {
                needed.push(t + o * fd_h);
            }
        }
        needed.sort_by(|a, b| a.partial_cmp(b).unwrap());
        needed.dedup_by(|a, b| (*a - *b).abs() < 1e-14);

        let dt_u = fd_h / 20.0;
        let mut u = u0.to_vec();
        let mut theta = 0.0f64;
        let mut t_now = 0.0f64;
        let mut u_at: HashMap<u64, (Vec<Cx<R>>, f64)> = HashMap::new();
        let key = |t: f64| (t / 1e-12).round() as u64;
        let chi_of = |uu: &[Cx<R>]| -> f64 {
            lattice_chi(&interaction, uu, 3).to_f64().unwrap_or(0.0) * chi_scale_factor
        };
        for &t_target in &needed {
            while t_now < t_target - 1e-13 {
                let step = dt_u.min(t_target - t_now);
                let chi_a = chi_of(&u);
                let u_mid = lattice_hartree_step(lattice, &interaction, &u, cast::<R>(step / 2.0));
                let chi_m = chi_of(&u_mid);
                let u_next = lattice_hartree_step(lattice, &interaction, &u, cast::<R>(step));
                let chi_b = chi_of(&u_next);
                // Simpson increment of ∫χ
                theta += step / 6.0 * (chi_a + 4.0 * chi_m + chi_b);
                u = u_next;
                t_now += step;
            }
            u_at.insert(key(t_target), (u.clone(), theta));
        }

        // walk Ψ forward, capturing at the needed times
        let mut psi = psi0.coeffs.clone();
        let mut t_psi = 0.0f64;
        let mut psi_at: HashMap<u64, Vec<Cx<R>>> = HashMap::new();
        let apply_h = |v: &[Cx<R>]| h.apply(v);
        for &t_target in &needed {
            while t_psi < t_target - 1e-13 {
                let step = (fd_h / 5.0).min(t_target - t_psi);
                psi = lanczos_expv(&apply_h, &psi, cast::<R>(step), 30);
                t_psi += step;
            }
            psi_at.insert(key(t_target), psi.clone());
        }

        let phi_of = |t: f64| -> Result<ExcitationVector<R>> {
            let (uu, th) = u_at.get(&key(t)).expect("cached");
            let psi_t = FewBodyState {
                basis: psi0.basis.clone(),
                coeffs: psi_at.get(&key(t)).expect("cached").clone(),
            };
            let mut phi = un_transform(&psi_t, uu)?;
            let phase = Cx::new(cast::<R>((-th).cos()), cast::<R>((-th).sin()));
            phi.scale(phase);
            Ok(phi)
        };

        let mut residuals = Vec::new();
        let mut chi_acc = 0.0f64;
        for &t in &sample_times {
            let pm2 = phi_of(t - 2.0 * fd_h)?;
            let pm1 = phi_of(t - fd_h)?;
            let p0 = phi_of(t)?;
            let pp1 = phi_of(t + fd_h)?;
            let pp2 = phi_of(t + 2.0 * fd_h)?;
            // 4th-order centered derivative
            let mut dphi = ExcitationVector::zeros(p0.s_sites, n_particles);
            let c = 1.0 / (12.0 * fd_h);
            dphi.axpy(Cx::new(cast::<R>(c), R::zero()), &pm2);
            dphi.axpy(Cx::new(cast::<R>(-8.0 * c), R::zero()), &pm1);
            dphi.axpy(Cx::new(cast::<R>(8.0 * c), R::zero()), &pp1);
            dphi.axpy(Cx::new(cast::<R>(-c), R::zero()), &pp2);

            let (uu, _) = u_at.get(&key(t)).expect("cached");
            let gen = lattice_generator_at(lattice, &interaction, uu, 3);
            chi_acc += gen.chi().to_f64().unwrap_or(0.0).abs();
            let mut rhs = gen.apply(&p0);
            // residual = ‖i∂Φ − H̃Φ‖/‖Φ‖
            dphi.scale(Cx::new(R::zero(), R::one()));
            rhs.axpy(Cx::new(-R::one(), R::zero()), &dphi);
            let r = rhs.norm() / p0.norm();
            residuals.push((t, r.to_f64().unwrap_or(f64::NAN)));
        }
        Ok((residuals, chi_acc / sample_times.len() as f64))
    };

    let mut fd_h = dt_f;
    let (mut residuals, chi_scale) = run(1.0, fd_h)?;
    let max0 = residuals.iter().map(|r| r.1).fold(0.0f64, f64::max);
    // auto-refine once if the finite-difference error dominates
    let (res_half, _) = run(1.0, fd_h / 2.0)?;
    let max_half = res_half.iter().map(|r| r.1).fold(0.0f64, f64::max);
    if max_half < max0 / 2.0 {
        residuals = res_half;
        fd_h /= 2.0;
    }
    let max_residual = residuals.iter().map(|r| r.1).fold(0.0f64, f64::max);

    let (res_pert, _) = run(1.01, fd_h)?;
    let perturbed = res_pert.iter().map(|r| r.1).fold(0.0f64, f64::max);

    Ok(EquivalenceReport {
        max_residual,
        residuals,
        fd_dt: fd_h,
        perturbed_max_residual: perturbed,
        chi_scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::lanczos_extreme;
    use crate::potential::{PairProfile, PotentialForm};
    use approx::assert_relative_eq;

    fn lattice4() -> Arc<Lattice<f64>> {
        Lattice::new(4).unwrap()
    }

    fn pot(amplitude: f64) -> ThreeBodyPotential<f64> {
        let p = PairProfile::new(amplitude, 2.0).unwrap();
        ThreeBodyPotential::new(PotentialForm::PairProductSum, p, 0.12, 3).unwrap()
    }

    #[test]
    fn lattice_rejects_bad_sizes() {
        assert!(Lattice::<f64>::new(3).is_err());
        assert!(Lattice::<f64>::new(7).is_err());
        assert!(Lattice::<f64>::new(4).is_ok());
    }

    #[test]
    fn laplacian_is_symmetric_psd_with_constant_kernel() {
        let lat = lattice4();
        let m = lat.minus_laplacian();
        let s = lat.site_count();
        for i in 0..s {
            for j in 0..s {
                assert!((m[(i, j)] - m[(j, i)].conj()).norm() < 1e-14);
            }
        }
        let evs = crate::linalg::hermitian_eigenvalues(&m);
        assert!(evs[0] > -1e-10);
        assert!(evs[0].abs() < 1e-10); // constant in kernel
    }

    #[test]
    fn two_particles_are_free_with_uniform_ground_state() {
        let lat = lattice4();
        let basis = FewBodyBasis::new(lat.site_count(), 2).unwrap();
        let h = build_hamiltonian(&lat, &basis, &pot(5.0), 7).unwrap();
        let s = lat.site_count();
        let u: Vec<Cx<f64>> = vec![Cx::new(1.0 / (s as f64).sqrt(), 0.0); s];
        let uniform = FewBodyState::product(basis.clone(), &u);
        let hv = h.apply(&uniform.coeffs);
        assert!(crate::linalg::norm(&hv) < 1e-10, "uniform not in kernel");
    }

    #[test]
    fn interaction_expectation_matches_direct_triple_sum() {
        let lat = lattice4();
        let s = lat.site_count();
        let basis = FewBodyBasis::new(s, 3).unwrap();
        let v = pot(4.0);
        let n_s = 5u64;
        let h = build_hamiltonian(&lat, &basis, &v, n_s).unwrap();
        let u: Vec<Cx<f64>> = vec![Cx::new(1.0 / (s as f64).sqrt(), 0.0); s];
        let uniform = FewBodyState::product(basis.clone(), &u);
        assert_relative_eq!(uniform.norm(), 1.0, epsilon = 1e-12);
        let got = h.expectation(&uniform.coeffs).re;

        // kinetic part vanishes on the uniform state; interaction by the
        // direct triple sum with density 1/S per particle
        let inter = SiteInteraction::build(&lat, &v);
        let mut acc = 0.0;
        for i in 0..s {
            for j in 0..s {
                for k in 0..s {
                    acc += inter.v3(i, j, k);
                }
            }
        }
        let expect = acc / (s as f64).powi(3) / (n_s as f64).powi(2);
        assert_relative_eq!(got, expect, max_relative = 1e-10);
    }

    #[test]
    fn propagation_of_eigenvector_is_phase_rotation() {
        let lat = lattice4();
        let basis = FewBodyBasis::new(lat.site_count(), 3).unwrap();
        let h = build_hamiltonian(&lat, &basis, &pot(3.0), 3).unwrap();
        let apply = |v: &[Cx<f64>]| h.apply(v);
        let (e0, ground) = lanczos_extreme(&apply, basis.dim(), 60, 3, false);
        let psi0 = FewBodyState {
            basis: basis.clone(),
            coeffs: ground,
        };
        let t = 0.3;
        let traj = propagate(&h, &psi0, 0.05, t).unwrap();
        let phase = Cx::new((e0 * t).cos(), -(e0 * t).sin());
        let mut expect = psi0.coeffs.clone();
        crate::linalg::scale_in_place(&mut expect, phase);
        let mut err = 0.0f64;
        for (a, b) in traj.final_state.coeffs.iter().zip(&expect) {
            err += (a - b).norm_sqr();
        }
        assert!(err.sqrt() < 1e-9, "phase-rotation error {}", err.sqrt());
    }

    #[test]
    fn free_evolution_is_separable() {
        let lat = lattice4();
        let s = lat.site_count();
        let basis = FewBodyBasis::new(s, 2).unwrap();
        let h = build_hamiltonian(&lat, &basis, &pot(0.0), 3).unwrap();
        // normalized smooth one-body vector
        let mut f: Vec<Cx<f64>> = (0..s)
            .map(|i| {
                let c = lat.coords(i);
                Cx::new(
                    1.0 + 0.3 * (c[0] as f64).cos(),
                    0.2 * (c[1] as f64 + 0.5).sin(),
                )
            })
            .collect();
        let nrm = crate::linalg::norm(&f);
        crate::linalg::scale_in_place(&mut f, Cx::new(1.0 / nrm, 0.0));
        let psi0 = FewBodyState::product(basis.clone(), &f);
        let t = 0.4;
        let traj = propagate(&h, &psi0, 0.02, t).unwrap();
        // single-particle propagation and re-symmetrization
        let prop = crate::linalg::hermitian_propagator(&lat.minus_laplacian(), t);
        let f_t = crate::linalg::mat_vec(&prop, &f);
        let expect = FewBodyState::product(basis.clone(), &f_t);
        let mut err = 0.0f64;
        for (a, b) in traj.final_state.coeffs.iter().zip(&expect.coeffs) {
            err += (a - b).norm_sqr();
        }
        assert!(err.sqrt() < 1e-9, "separable evolution error {}", err.sqrt());
    }

    #[test]
    fn step_halving_agreement() {
        let lat = lattice4();
        let basis = FewBodyBasis::new(lat.site_count(), 3).unwrap();
        let h = build_hamiltonian(&lat, &basis, &pot(4.0), 3).unwrap();
        let s = lat.site_count();
        let mut f: Vec<Cx<f64>> = (0..s)
            .map(|i| Cx::new(1.0 + 0.2 * (i as f64).sin(), 0.1 * (i as f64).cos()))
            .collect();
        let nrm = crate::linalg::norm(&f);
        crate::linalg::scale_in_place(&mut f, Cx::new(1.0 / nrm, 0.0));
        let psi0 = FewBodyState::product(basis.clone(), &f);
        let a = propagate(&h, &psi0, 0.02, 0.2).unwrap().final_state;
        let b = propagate(&h, &psi0, 0.01, 0.2).unwrap().final_state;
        let mut err = 0.0f64;
        for (x, y) in a.coeffs.iter().zip(&b.coeffs) {
            err += (x - y).norm_sqr();
        }
        assert!(err.sqrt() < 1e-8, "step-halving disagreement {}", err.sqrt());
    }

    #[test]
    fn reduced_density_of_product_state() {
        let lat = lattice4();
        let s = lat.site_count();
        let basis = FewBodyBasis::new(s, 3).unwrap();
        let mut f: Vec<Cx<f64>> = (0..s)
            .map(|i| Cx::new(0.4 + (i as f64 * 0.7).cos(), (i as f64 * 0.3).sin()))
            .collect();
        let nrm = crate::linalg::norm(&f);
        crate::linalg::scale_in_place(&mut f, Cx::new(1.0 / nrm, 0.0));
        let psi = FewBodyState::product(basis, &f);
        let rdm = reduced_density(&psi);
        assert_relative_eq!(rdm.trace(), 3.0, epsilon = 1e-10);
        assert!(rdm.hermiticity_defect() < 1e-12);
        // γ = 3|f⟩⟨f|
        for x in 0..s {
            for y in 0..s {
                let expect = f[x] * f[y].conj() * 3.0;
                assert!((rdm.matrix[(x, y)] - expect).norm() < 1e-10);
            }
        }
        let evs = rdm.eigenvalues();
        assert!(evs[0] > -1e-10);
    }

    #[test]
    fn reduced_density_random_state_trace_and_positivity() {
        let lat = lattice4();
        let basis = FewBodyBasis::new(lat.site_count(), 3).unwrap();
        let raw = crate::linalg::seeded_vector::<f64>(basis.dim(), 5);
        let mut psi = FewBodyState {
            basis,
            coeffs: raw,
        };
        psi.normalize();
        let rdm = reduced_density(&psi);
        assert_relative_eq!(rdm.trace(), 3.0, epsilon = 1e-10);
        assert!(rdm.eigenvalues()[0] > -1e-10);
    }

    fn unit_site_vector(s: usize, seed: u64) -> Vec<Cx<f64>> {
        let mut v = crate::linalg::seeded_vector::<f64>(s, seed);
        let nrm = crate::linalg::norm(&v);
        crate::linalg::scale_in_place(&mut v, Cx::new(1.0 / nrm, 0.0));
        v
    }

    #[test]
    fn un_transform_pure_condensate_is_vacuum() {
        let lat = lattice4();
        let s = lat.site_count();
        let basis = FewBodyBasis::new(s, 3).unwrap();
        let u = unit_site_vector(s, 3);
        let psi = FewBodyState::product(basis, &u);
        let phi = un_transform(&psi, &u).unwrap();
        assert_relative_eq!(phi.sectors[0][0].re, 1.0, epsilon = 1e-10);
        for n in 1..=3 {
            assert!(phi.sector_norm_sqr(n) < 1e-20, "sector {n} leaked");
        }
    }

    #[test]
    fn un_transform_fully_excited() {
        let lat = lattice4();
        let s = lat.site_count();
        let basis = FewBodyBasis::new(s, 3).unwrap();
        let u = unit_site_vector(s, 3);
        // v ⊥ u
        let mut v = unit_site_vector(s, 8);
        let overlap: Cx<f64> = crate::linalg::inner(&u, &v);
        crate::linalg::axpy(&mut v, -overlap, &u);
        let nrm = crate::linalg::norm(&v);
        crate::linalg::scale_in_place(&mut v, Cx::new(1.0 / nrm, 0.0));

        let psi = FewBodyState::product(basis, &v);
        let phi = un_transform(&psi, &u).unwrap();
        for n in 0..3 {
            assert!(phi.sector_norm_sqr(n) < 1e-18, "sector {n} should vanish");
        }
        assert_relative_eq!(phi.sector_norm_sqr(3), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn un_transform_isometry_and_inverse() {
        let lat = lattice4();
        let s = lat.site_count();
        let basis = FewBodyBasis::new(s, 3).unwrap();
        let u = unit_site_vector(s, 13);
        for seed in [1u64, 2, 3, 4, 5] {
            let raw = crate::linalg::seeded_vector::<f64>(basis.dim(), seed);
            let mut psi = FewBodyState {
                basis: basis.clone(),
                coeffs: raw,
            };
            psi.normalize();
            let phi = un_transform(&psi, &u).unwrap();
            assert_relative_eq!(phi.norm_sqr(), 1.0, epsilon = 1e-12);
            let back = un_inverse(&phi, &u, &basis).unwrap();
            let mut err = 0.0f64;
            for (a, b) in back.coeffs.iter().zip(&psi.coeffs) {
                err += (a - b).norm_sqr();
            }
            assert!(err.sqrt() < 1e-10, "roundtrip error {}", err.sqrt());
        }
    }

    /// The key density-matrix identity Q γ_Ψ Q = γ_Φ.
    #[test]
    fn excitation_density_identity() {
        let lat = lattice4();
        let s = lat.site_count();
        let basis = FewBodyBasis::new(s, 3).unwrap();
        let u = unit_site_vector(s, 21);
        for seed in [11u64, 12, 13, 14, 15] {
            let raw = crate::linalg::seeded_vector::<f64>(basis.dim(), seed);
            let mut psi = FewBodyState {
                basis: basis.clone(),
                coeffs: raw,
            };
            psi.normalize();
            let gamma_psi = reduced_density(&psi).matrix;
            let phi = un_transform(&psi, &u).unwrap();
            let gamma_phi = phi.one_body_density();
            // Q γ Q
            let mut q = Array2::<Cx<f64>>::eye(s);
            for i in 0..s {
                for j in 0..s {
                    q[(i, j)] -= u[i] * u[j].conj();
                }
            }
            let lhs = q.dot(&gamma_psi).dot(&q);
            let err = crate::linalg::frobenius_distance(&lhs, &gamma_phi);
            assert!(err < 1e-10, "identity violated by {err}");
        }
    }

    #[test]
    fn bec_sanity_weak_coupling_ground_state() {
        let lat = lattice4();
        let basis = FewBodyBasis::new(lat.site_count(), 3).unwrap();
        let h = build_hamiltonian(&lat, &basis, &pot(0.5), 3).unwrap();
        let apply = |v: &[Cx<f64>]| h.apply(v);
        let (_, ground) = lanczos_extreme(&apply, basis.dim(), 80, 3, false);
        let psi = FewBodyState {
            basis,
            coeffs: ground,
        };
        let rdm = reduced_density(&psi);
        let evs = rdm.eigenvalues();
        let top = evs.last().unwrap() / 3.0;
        assert!(top > 0.99, "condensate fraction {top}");
    }


    /// Derivative-free form of the transformed-dynamics identity at one
    /// instant: U(H_N Ψ) + iU̇U†(UΨ) = (H̃ + χ)(UΨ), with
    /// iU̇U† = a*(u)a(Qhu) − √(N−𝒩)a(Qhu) − a*(Qhu)√(N−𝒩) − ⟨u,hu⟩(N−𝒩).
    /// Returns per-sector residual norms.
    fn frozen_identity_residual(
        lat: &Arc<Lattice<f64>>,
        v: &ThreeBodyPotential<f64>,
        u: &[Cx<f64>],
        psi: &FewBodyState<f64>,
    ) -> Vec<f64> {
        let s = lat.site_count();
        let n_p = psi.basis.n_particles();
        let inter = Arc::new(SiteInteraction::build(lat, v));
        let h = build_hamiltonian(lat, &psi.basis, v, n_p as u64).unwrap();
        let gen = lattice_generator_at(lat, &inter, u, n_p);

        // h u = (−Δ + F)u
        let f_pot = lattice_hartree_potential(&inter, u);
        let lap = lat.minus_laplacian();
        let mut hu = crate::linalg::mat_vec(&lap, u);
        for (x, (dst, uu)) in hu.iter_mut().zip(u).enumerate().map(|(i, p)| (i, p)) {
            *dst += uu.scale(f_pot[x]);
        }
        let u_dot_hu: Cx<f64> = crate::linalg::inner(u, &hu);
        // Qhu
        let mut qhu = hu.clone();
        let overlap: Cx<f64> = crate::linalg::inner(u, &hu);
        crate::linalg::axpy(&mut qhu, -overlap, u);

        // left: U(HΨ) + D(UΨ)
        let hpsi = FewBodyState { basis: psi.basis.clone(), coeffs: h.apply(&psi.coeffs) };
        let lhs1 = un_transform(&hpsi, u).unwrap();
        let phi = un_transform(psi, u).unwrap();
        let n = n_p as f64;

        let qhu_conj: Vec<Cx<f64>> = qhu.iter().map(|z| z.conj()).collect();
        let mut dphi = ExcitationVector::zeros(s, n_p);
        for sec in 0..=n_p {
            let src = &phi.sectors[sec];
            if src.iter().all(|c| c.norm_sqr() == 0.0) { continue; }
            // a*(u)a(Qhu): sector-preserving
            if sec >= 1 {
                let mut ann = contract_slot(s, sec, 0, &qhu_conj, src);
                crate::linalg::scale_in_place(&mut ann, Cx::new((sec as f64).sqrt(), 0.0));
                let created = create_u_general(s, sec - 1, &u.to_vec(), &ann);
                crate::linalg::axpy(&mut dphi.sectors[sec], Cx::new(1.0, 0.0), &created);
            }
            // −√(N−𝒩)a(Qhu): output sector sec−1, diag at output
            if sec >= 1 {
                let mut ann = contract_slot(s, sec, 0, &qhu_conj, src);
                let amp = (sec as f64).sqrt() * sqrt_clamped_f(n - (sec as f64 - 1.0));
                crate::linalg::scale_in_place(&mut ann, Cx::new(-amp, 0.0));
                crate::linalg::axpy(&mut dphi.sectors[sec - 1], Cx::new(1.0, 0.0), &ann);
            }
            // −a*(Qhu)√(N−𝒩): diag at input, then create
            if sec + 1 <= n_p {
                let amp = sqrt_clamped_f(n - sec as f64);
                let created = create_u_general(s, sec, &qhu, src);
                crate::linalg::axpy(&mut dphi.sectors[sec + 1], Cx::new(-amp, 0.0), &created);
            }
            // −⟨u,hu⟩(N−𝒩)
            let c = -u_dot_hu * Cx::new(n - sec as f64, 0.0);
            let mut piece = src.clone();
            crate::linalg::scale_in_place(&mut piece, c);
            crate::linalg::axpy(&mut dphi.sectors[sec], Cx::new(1.0, 0.0), &piece);
        }

        let mut lhs = lhs1;
        lhs.axpy(Cx::new(1.0, 0.0), &dphi);

        // right: (H̃ − χ)(UΨ) — the scalar χ is what the phase removes
        let mut rhs = gen.apply(&phi);
        let chi = gen.chi();
        rhs.axpy(Cx::new(-chi, 0.0), &phi);

        (0..=n_p)
            .map(|sec| {
                let mut acc = 0.0f64;
                for (a, b) in lhs.sectors[sec].iter().zip(&rhs.sectors[sec]) {
                    acc += (a - b).norm_sqr();
                }
                acc.sqrt()
            })
            .collect()
    }


    #[test]
    fn frozen_identity_free_case() {
        let lat = lattice4();
        let s = lat.site_count();
        let basis = FewBodyBasis::new(s, 3).unwrap();
        let u = unit_site_vector(s, 41);
        let raw = crate::linalg::seeded_vector::<f64>(basis.dim(), 42);
        let mut psi = FewBodyState { basis, coeffs: raw };
        psi.normalize();
        let res = frozen_identity_residual(&lat, &pot(0.0), &u, &psi);
        for (sec, r) in res.iter().enumerate() {
            assert!(r < &1e-12, "sector {sec} residual {r:e} (all: {res:?})");
        }
    }

    #[test]
    fn frozen_identity_holds_per_sector() {
        let lat = lattice4();
        let s = lat.site_count();
        let basis = FewBodyBasis::new(s, 3).unwrap();
        let u = unit_site_vector(s, 41);
        let raw = crate::linalg::seeded_vector::<f64>(basis.dim(), 42);
        let mut psi = FewBodyState { basis, coeffs: raw };
        psi.normalize();
        let res = frozen_identity_residual(&lat, &pot(3.0), &u, &psi);
        for (sec, r) in res.iter().enumerate() {
            assert!(r < &1e-12, "sector {sec} residual {r:e} (all: {res:?})");
        }
    }

    #[test]
    fn generator_equivalence_free_case() {
        let lat = lattice4();
        let s = lat.site_count();
        let basis = FewBodyBasis::new(s, 3).unwrap();
        let u0: Vec<Cx<f64>> = vec![Cx::new(1.0 / (s as f64).sqrt(), 0.0); s];
        // small symmetric excitation on top of the condensate
        let mut psi = FewBodyState::product(basis.clone(), &u0);
        let raw = crate::linalg::seeded_vector::<f64>(basis.dim(), 2);
        for (c, r) in psi.coeffs.iter_mut().zip(&raw) {
            *c += r * Cx::new(0.05, 0.0);
        }
        psi.normalize();
        let report =
            generator_equivalence_check(&lat, &pot(0.0), &u0, &psi, 1e-3, 0.02, 3).unwrap();
        assert!(
            report.max_residual < 1e-8,
            "free residual {}",
            report.max_residual
        );
    }

    #[test]
    fn generator_equivalence_interacting() {
        let lat = lattice4();
        let s = lat.site_count();
        let basis = FewBodyBasis::new(s, 3).unwrap();
        let u0: Vec<Cx<f64>> = vec![Cx::new(1.0 / (s as f64).sqrt(), 0.0); s];
        let mut psi = FewBodyState::product(basis.clone(), &u0);
        let raw = crate::linalg::seeded_vector::<f64>(basis.dim(), 4);
        for (c, r) in psi.coeffs.iter_mut().zip(&raw) {
            *c += r * Cx::new(0.08, 0.0);
        }
        psi.normalize();
        let report =
            generator_equivalence_check(&lat, &pot(3.0), &u0, &psi, 1e-3, 0.03, 3).unwrap();
        assert!(
            report.max_residual < 1e-5,
            "residual {}",
            report.max_residual
        );
        // the χ probe must actually bite: expected kick ≈ 0.01·|χ|
        let kick = report.perturbed_max_residual;
        assert!(
            kick > 5.0 * report.max_residual.max(1e-9),
            "probe too weak: base {} perturbed {}",
            report.max_residual,
            kick
        );
        let expected = 0.01 * report.chi_scale;
        assert!(
            kick > 0.3 * expected && kick < 3.0 * expected + 10.0 * report.max_residual,
            "probe kick {kick} vs expected {expected}"
        );
    }
}
