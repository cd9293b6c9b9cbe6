//! Small dense/iterative linear algebra kept generic over the scalar:
//! complex-Hermitian Jacobi eigensolver, Lanczos (Krylov propagation and
//! extreme Ritz values), and log-log slope fits for the scaling experiments.
//!
//! Problem sizes here are modest (dense eigensolves stay below ~5000 per the
//! truncation rules), so a cyclic Jacobi with full eigenvector accumulation
//! is both adequate and robust.

use crate::scalar::{cast, im, re, Cx, Real};
use ndarray::Array2;
use num_traits::Float;

/// Conjugate-linear-in-first inner product.
pub fn inner<R: Real>(a: &[Cx<R>], b: &[Cx<R>]) -> Cx<R> {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = Cx::new(R::zero(), R::zero());
    for (x, y) in a.iter().zip(b) {
        acc += x.conj() * y;
    }
    acc
}

pub fn norm<R: Real>(a: &[Cx<R>]) -> R {
    a.iter().map(|x| x.norm_sqr()).sum::<R>().sqrt()
}

pub fn scale_in_place<R: Real>(a: &mut [Cx<R>], s: Cx<R>) {
    for x in a.iter_mut() {
        *x *= s;
    }
}

/// a += s * b
pub fn axpy<R: Real>(a: &mut [Cx<R>], s: Cx<R>, b: &[Cx<R>]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += s * *y;
    }
}

/// Eigendecomposition of a Hermitian matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues ascending and the unitary of eigenvectors as columns,
/// so `a ≈ v · diag(λ) · v†`.
pub fn hermitian_eigen<R: Real>(a: &Array2<Cx<R>>) -> (Vec<R>, Array2<Cx<R>>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "hermitian_eigen: matrix must be square");
    let mut m = a.clone();
    let mut v: Array2<Cx<R>> = Array2::eye(n);
    if n <= 1 {
        let vals = (0..n).map(|i| m[(i, i)].re).collect();
        return (vals, v);
    }

    let frob: R = m.iter().map(|x| x.norm_sqr()).sum::<R>().sqrt();
    let tol = frob * cast::<R>(1e-30).max(R::epsilon() * cast::<R>(32.0));
    let max_sweeps = 60;

    for _ in 0..max_sweeps {
        let mut off = R::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[(p, q)].norm_sqr();
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                let beta = apq.norm();
                if beta <= tol * cast::<R>(1e-2) {
                    continue;
                }
                let phase = apq / Cx::new(beta, R::zero());
                let app = m[(p, p)].re;
                let aqq = m[(q, q)].re;
                let tau = (aqq - app) / (beta + beta);
                let t = if tau >= R::zero() {
                    R::one() / (tau + (R::one() + tau * tau).sqrt())
                } else {
                    -R::one() / (-tau + (R::one() + tau * tau).sqrt())
                };
                let c = R::one() / (R::one() + t * t).sqrt();
                let s = t * c;
                // unitary block: [[c, s], [-phase.conj()*s, phase.conj()*c]]
                let u_pp = re(c);
                let u_pq = re(s);
                let u_qp = -phase.conj() * s;
                let u_qq = phase.conj() * c;

                // columns: m <- m * U
                for i in 0..n {
                    let mip = m[(i, p)];
                    let miq = m[(i, q)];
                    m[(i, p)] = mip * u_pp + miq * u_qp;
                    m[(i, q)] = mip * u_pq + miq * u_qq;
                }
                // rows: m <- U† * m
                for j in 0..n {
                    let mpj = m[(p, j)];
                    let mqj = m[(q, j)];
                    m[(p, j)] = u_pp.conj() * mpj + u_qp.conj() * mqj;
                    m[(q, j)] = u_pq.conj() * mpj + u_qq.conj() * mqj;
                }
                // enforce exact zero and real diagonal against drift
                m[(p, q)] = Cx::new(R::zero(), R::zero());
                m[(q, p)] = Cx::new(R::zero(), R::zero());
                m[(p, p)] = re(m[(p, p)].re);
                m[(q, q)] = re(m[(q, q)].re);

                for i in 0..n {
                    let vip = v[(i, p)];
                    let viq = v[(i, q)];
                    v[(i, p)] = vip * u_pp + viq * u_qp;
                    v[(i, q)] = vip * u_pq + viq * u_qq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let vals: Vec<R> = (0..n).map(|i| m[(i, i)].re).collect();
    order.sort_by(|&i, &j| vals[i].partial_cmp(&vals[j]).unwrap());
    let sorted_vals: Vec<R> = order.iter().map(|&i| vals[i]).collect();
    let mut sorted_vecs = Array2::zeros((n, n));
    for (new_col, &old_col) in order.iter().enumerate() {
        for i in 0..n {
            sorted_vecs[(i, new_col)] = v[(i, old_col)];
        }
    }
    (sorted_vals, sorted_vecs)
}

/// Eigenvalues only, ascending.
pub fn hermitian_eigenvalues<R: Real>(a: &Array2<Cx<R>>) -> Vec<R> {
    hermitian_eigen(a).0
}

/// Deterministic pseudo-random start vector (splitmix-style), independent of
/// any RNG crate so the iterative solvers stay reproducible.
pub fn seeded_vector<R: Real>(n: usize, seed: u64) -> Vec<Cx<R>> {
    let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1);
    let mut next = move || {
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z = z ^ (z >> 31);
        // map to (-1, 1)
        (z as f64 / u64::MAX as f64) * 2.0 - 1.0
    };
    (0..n)
        .map(|_| Cx::new(cast::<R>(next()), cast::<R>(next())))
        .collect()
}

/// One Lanczos pass with full reorthogonalization.
///
/// Returns the orthonormal basis, the tridiagonal entries (alpha, beta) and
/// whether the recursion terminated early (invariant subspace).
fn lanczos_basis<R: Real>(
    apply: &dyn Fn(&[Cx<R>]) -> Vec<Cx<R>>,
    start: &[Cx<R>],
    k: usize,
) -> (Vec<Vec<Cx<R>>>, Vec<R>, Vec<R>) {
    let mut basis: Vec<Vec<Cx<R>>> = Vec::with_capacity(k);
    let mut alphas: Vec<R> = Vec::with_capacity(k);
    let mut betas: Vec<R> = Vec::with_capacity(k);

    let nrm = norm(start);
    assert!(nrm > R::zero(), "lanczos: zero start vector");
    let mut v = start.to_vec();
    scale_in_place(&mut v, re(R::one() / nrm));
    basis.push(v);

    for j in 0..k {
        let mut w = apply(&basis[j]);
        let alpha = inner(&basis[j], &w).re;
        alphas.push(alpha);
        axpy(&mut w, re(-alpha), &basis[j]);
        if j > 0 {
            let b = betas[j - 1];
            axpy(&mut w, re(-b), &basis[j - 1]);
        }
        // full reorthogonalization (twice is enough)
        for _ in 0..2 {
            for q in &basis {
                let c = inner(q, &w);
                axpy(&mut w, -c, q);
            }
        }
        let b = norm(&w);
        if j + 1 == k || b < cast::<R>(1e-14) {
            if b < cast::<R>(1e-14) {
                break;
            }
        }
        if j + 1 < k {
            betas.push(b);
            scale_in_place(&mut w, re(R::one() / b));
            basis.push(w);
        }
    }
    (basis, alphas, betas)
}

fn tridiag_eigen<R: Real>(alphas: &[R], betas: &[R]) -> (Vec<R>, Array2<Cx<R>>) {
    let k = alphas.len();
    let mut t: Array2<Cx<R>> = Array2::zeros((k, k));
    for i in 0..k {
        t[(i, i)] = re(alphas[i]);
        if i + 1 < k {
            t[(i, i + 1)] = re(betas[i]);
            t[(i + 1, i)] = re(betas[i]);
        }
    }
    hermitian_eigen(&t)
}

/// Krylov propagation `exp(-i * dt * H) v` for Hermitian `H`.
///
/// `k` is the Krylov dimension per step; accuracy improves rapidly with `k`
/// for `dt * ||H||` of order a few.
pub fn lanczos_expv<R: Real>(
    apply: &dyn Fn(&[Cx<R>]) -> Vec<Cx<R>>,
    v: &[Cx<R>],
    dt: R,
    k: usize,
) -> Vec<Cx<R>> {
    let vnorm = norm(v);
    if vnorm == R::zero() {
        return v.to_vec();
    }
    let (basis, alphas, betas) = lanczos_basis(apply, v, k.max(2));
    let m = basis.len().min(alphas.len());
    let (vals, vecs) = tridiag_eigen(&alphas[..m], &betas[..m.saturating_sub(1)]);
    // coeffs = U exp(-i dt Λ) U† e1
    let mut coeffs = vec![Cx::new(R::zero(), R::zero()); m];
    for (j, cj) in coeffs.iter_mut().enumerate() {
        let mut acc = Cx::new(R::zero(), R::zero());
        for l in 0..m {
            let phase = -dt * vals[l];
            let e = Cx::new(phase.cos(), phase.sin());
            acc += vecs[(j, l)] * e * vecs[(0, l)].conj();
        }
        *cj = acc;
    }
    let mut out = vec![Cx::new(R::zero(), R::zero()); v.len()];
    for (j, q) in basis.iter().take(m).enumerate() {
        axpy(&mut out, coeffs[j] * vnorm, q);
    }
    out
}

/// Extreme Ritz value of a Hermitian operator (largest or smallest), with the
/// Ritz vector. Restarted Lanczos; deterministic start.
pub fn lanczos_extreme<R: Real>(
    apply: &dyn Fn(&[Cx<R>]) -> Vec<Cx<R>>,
    n: usize,
    k: usize,
    restarts: usize,
    largest: bool,
) -> (R, Vec<Cx<R>>) {
    let mut start = seeded_vector::<R>(n, 0x5EED_CAFE);
    let mut value = R::zero();
    for _ in 0..restarts.max(1) {
        let (basis, alphas, betas) = lanczos_basis(apply, &start, k);
        let m = basis.len().min(alphas.len());
        let (vals, vecs) = tridiag_eigen(&alphas[..m], &betas[..m.saturating_sub(1)]);
        let idx = if largest { m - 1 } else { 0 };
        value = vals[idx];
        let mut ritz = vec![Cx::new(R::zero(), R::zero()); n];
        for (j, q) in basis.iter().take(m).enumerate() {
            axpy(&mut ritz, vecs[(j, idx)], q);
        }
        let nrm = norm(&ritz);
        scale_in_place(&mut ritz, re(R::one() / nrm));
        start = ritz;
    }
    (value, start)
}

/// Least-squares slope of log(y) against log(x); `None` when degenerate
/// (fewer than two usable points or nonpositive data).
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|&(x, y)| (x.ln(), y.ln()))
        .collect();
    if usable.len() < 2 {
        return None;
    }
    let n = usable.len() as f64;
    let sx: f64 = usable.iter().map(|p| p.0).sum();
    let sy: f64 = usable.iter().map(|p| p.1).sum();
    let sxx: f64 = usable.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = usable.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if Float::abs(denom) < 1e-30 {
        return None;
    }
    Some((n * sxy - sx * sy) / denom)
}

/// exp(-i * dt * H) as a dense matrix action via full eigendecomposition.
/// Used by small-dimension oracles in tests and the 2x2 closed forms.
pub fn hermitian_propagator<R: Real>(h: &Array2<Cx<R>>, dt: R) -> Array2<Cx<R>> {
    let n = h.nrows();
    let (vals, vecs) = hermitian_eigen(h);
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let mut acc = Cx::new(R::zero(), R::zero());
            for l in 0..n {
                let phase = -dt * vals[l];
                let e = Cx::new(phase.cos(), phase.sin());
                acc += vecs[(i, l)] * e * vecs[(j, l)].conj();
            }
            out[(i, j)] = acc;
        }
    }
    out
}

/// Frobenius distance between matrices.
pub fn frobenius_distance<R: Real>(a: &Array2<Cx<R>>, b: &Array2<Cx<R>>) -> R {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (*x - *y).norm_sqr())
        .sum::<R>()
        .sqrt()
}

/// Matrix unitarily applied: out = m · v for dense complex matrix.
pub fn mat_vec<R: Real>(m: &Array2<Cx<R>>, v: &[Cx<R>]) -> Vec<Cx<R>> {
    let n = m.nrows();
    let mut out = vec![Cx::new(R::zero(), R::zero()); n];
    for i in 0..n {
        let mut acc = Cx::new(R::zero(), R::zero());
        for j in 0..m.ncols() {
            acc += m[(i, j)] * v[j];
        }
        out[i] = acc;
    }
    out
}

#[allow(unused)]
fn unused_im_guard<R: Real>() -> Cx<R> {
    im::<R>()
}
