//! Dense numerical kernels: spectral radius, Lyapunov and Riccati solvers,
//! matrix exponential and system H2 norms.
//!
//! Everything here works on `nalgebra::DMatrix<f64>`. The only iterative
//! large-scale path is [`spectral_radius`], which accepts any
//! [`LinearOperator`] (dense or CSR) and runs Arnoldi.

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::CsrMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, RompcError};
use crate::model::TimeDomain;

/// Iteration cap shared by the doubling and sign-function solvers.
pub const RICCATI_MAX_ITER: usize = 200;

/// Krylov dimension up to which Arnoldi is run to completion (exact Hessenberg reduction).
const FULL_ARNOLDI_DIM: usize = 300;
const RESTART_DIM: usize = 80;
const MAX_RESTARTS: usize = 400;

/// Matrix-vector product interface used by the iterative eigenvalue path.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    /// y = A x
    fn apply(&self, x: &DVector<f64>) -> DVector<f64>;
}

impl LinearOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self * x
    }
}

impl LinearOperator for CsrMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        csr_mul_vec(self, x)
    }
}

pub fn csr_mul_vec(a: &CsrMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    let mut y = DVector::zeros(a.nrows());
    for (i, row) in a.row_iter().enumerate() {
        let mut s = 0.0;
        for (&j, &v) in row.col_indices().iter().zip(row.values()) {
            s += v * x[j];
        }
        y[i] = s;
    }
    y
}

/// y = Aᵀ x without forming the transpose.
pub fn csr_tr_mul_vec(a: &CsrMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    let mut y = DVector::zeros(a.ncols());
    for (i, row) in a.row_iter().enumerate() {
        let xi = x[i];
        if xi == 0.0 {
            continue;
        }
        for (&j, &v) in row.col_indices().iter().zip(row.values()) {
            y[j] += v * xi;
        }
    }
    y
}

/// CSR copy of a dense matrix, keeping only exact nonzeros.
pub fn dense_to_csr(a: &DMatrix<f64>) -> CsrMatrix<f64> {
    let mut offsets = Vec::with_capacity(a.nrows() + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    offsets.push(0);
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            let v = a[(i, j)];
            if v != 0.0 {
                cols.push(j);
                vals.push(v);
            }
        }
        offsets.push(cols.len());
    }
    CsrMatrix::try_from_csr_data(a.nrows(), a.ncols(), offsets, cols, vals)
        .expect("row-major construction is always valid CSR")
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    if m.nrows() == 1 || m.ncols() == 1 {
        return m.norm();
    }
    m.singular_values().max()
}

pub fn spectral_norm_complex(m: &DMatrix<Complex64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().max()
}

pub fn solve(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if a.nrows() != a.ncols() || a.nrows() != b.nrows() {
        return Err(RompcError::dims(format!(
            "{what}: cannot solve {}x{} system with {} rhs rows",
            a.nrows(),
            a.ncols(),
            b.nrows()
        )));
    }
    let lu = a.clone().lu();
    let x = lu
        .solve(b)
        .ok_or_else(|| RompcError::Singular(what.to_string()))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(RompcError::Singular(what.to_string()));
    }
    Ok(x)
}

pub fn inverse(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    solve(a, &DMatrix::identity(a.nrows(), a.nrows()), what)
}

/// 1-norm condition number estimate computed from an explicit inverse.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    match a.clone().try_inverse() {
        Some(inv) => a.norm() * inv.norm(),
        None => f64::INFINITY,
    }
}

/// Cholesky factor L (lower) of a symmetric positive definite matrix.
pub fn cholesky(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let s = symmetrize(a);
    s.cholesky()
        .map(|c| c.l())
        .ok_or_else(|| RompcError::NotPositiveDefinite(what.to_string()))
}

pub fn is_positive_definite(a: &DMatrix<f64>) -> bool {
    a.is_square()
        && (a - a.transpose()).norm() <= 1e-10 * (1.0 + a.norm())
        && symmetrize(a).cholesky().is_some()
}

/// Factor Z with P ≈ Z Zᵀ for a symmetric positive semidefinite P; negative
/// round-off eigenvalues are clipped to zero.
pub fn psd_factor(p: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(p).symmetric_eigen();
    let mut z = eig.eigenvectors.clone();
    for (j, &l) in eig.eigenvalues.iter().enumerate() {
        let s = l.max(0.0).sqrt();
        z.column_mut(j).scale_mut(s);
    }
    z
}

/// Eigenvalues of a dense real matrix (Francis QR on the Hessenberg form).
pub fn eigenvalues(a: &DMatrix<f64>) -> Vec<Complex64> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    if a.nrows() == 1 {
        return vec![Complex64::new(a[(0, 0)], 0.0)];
    }
    a.complex_eigenvalues().iter().copied().collect()
}

pub fn dense_spectral_radius(a: &DMatrix<f64>) -> f64 {
    eigenvalues(a).iter().map(|l| l.norm()).fold(0.0, f64::max)
}

pub fn is_schur_stable(a: &DMatrix<f64>) -> bool {
    dense_spectral_radius(a) < 1.0
}

pub fn is_hurwitz(a: &DMatrix<f64>) -> bool {
    eigenvalues(a).iter().all(|l| l.re < 0.0)
}

/// Spectral radius max |λ(A)| by Arnoldi iteration.
///
/// Operators of dimension up to 300 are reduced completely to Hessenberg form
/// (exact up to round-off); larger ones use a Krylov–Schur restart that keeps the
/// largest-magnitude half of the Schur form.
pub fn spectral_radius(op: &dyn LinearOperator) -> Result<f64> {
    let n = op.dim();
    if n == 0 {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let start = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
    if n <= FULL_ARNOLDI_DIM {
        let mut v = DMatrix::zeros(n, n + 1);
        let mut h = DMatrix::zeros(n + 1, n);
        v.set_column(0, &(&start / start.norm()));
        arnoldi_extend(op, &mut v, &mut h, 0, n, &mut rng);
        return Ok(dense_spectral_radius(&h.rows(0, n).into_owned()));
    }

    let m = RESTART_DIM.min(n - 1);
    let keep = m / 2;
    let mut v = DMatrix::<Complex64>::zeros(n, m + 1);
    let mut h = DMatrix::<Complex64>::zeros(m + 1, m);
    v.set_column(0, &(&start / start.norm()).map(|x| Complex64::new(x, 0.0)));
    let mut from = 0;
    let mut best = 0.0;
    for _ in 0..MAX_RESTARTS {
        complex_arnoldi_extend(op, &mut v, &mut h, from, m, &mut rng);
        let (mut u, mut t) = nalgebra::Schur::new(h.rows(0, m).into_owned()).unpack();
        sort_schur_by_magnitude(&mut u, &mut t);
        best = t[(0, 0)].norm();
        // Krylov–Schur relation A V U = V U T + v_m bᵀ with b = h_m e_mᵀ U
        let b: Vec<Complex64> = (0..m).map(|j| h[(m, m - 1)] * u[(m - 1, j)]).collect();
        if b[0].norm() <= 1e-10 * best.max(1e-300) {
            return Ok(best);
        }
        let vk = v.columns(0, m) * u.columns(0, keep);
        let vm = v.column(m).into_owned();
        v.columns_mut(0, keep).copy_from(&vk);
        v.set_column(keep, &vm);
        h.fill(Complex64::new(0.0, 0.0));
        h.view_mut((0, 0), (keep, keep))
            .copy_from(&t.view((0, 0), (keep, keep)));
        for j in 0..keep {
            h[(keep, j)] = b[j];
        }
        from = keep;
    }
    Err(RompcError::NotConverged {
        what: "spectral radius (Krylov-Schur)".into(),
        iterations: MAX_RESTARTS,
        estimate: best,
    })
}

/// Reorder a complex Schur form T = UᴴAU so |T_jj| is non-increasing, by
/// adjacent Givens swaps.
fn sort_schur_by_magnitude(u: &mut DMatrix<Complex64>, t: &mut DMatrix<Complex64>) {
    let m = t.nrows();
    for i in 0..m {
        for j in (i..m - 1).rev() {
            if t[(j + 1, j + 1)].norm() > t[(j, j)].norm() {
                swap_schur(u, t, j);
            }
        }
    }
}

fn swap_schur(u: &mut DMatrix<Complex64>, t: &mut DMatrix<Complex64>, k: usize) {
    let m = t.nrows();
    let a = t[(k, k)];
    let b = t[(k + 1, k + 1)];
    let x1 = t[(k, k + 1)];
    let x2 = b - a;
    let r = (x1.norm_sqr() + x2.norm_sqr()).sqrt();
    if r == 0.0 {
        return;
    }
    let (g11, g21) = (x1 / r, x2 / r);
    let (g12, g22) = (-g21.conj(), g11.conj());
    // T ← Gᴴ T on rows k, k+1
    for j in 0..m {
        let (p, q) = (t[(k, j)], t[(k + 1, j)]);
        t[(k, j)] = g11.conj() * p + g21.conj() * q;
        t[(k + 1, j)] = g12.conj() * p + g22.conj() * q;
    }
    // T ← T G and U ← U G on columns k, k+1
    for i in 0..m {
        let (p, q) = (t[(i, k)], t[(i, k + 1)]);
        t[(i, k)] = p * g11 + q * g21;
        t[(i, k + 1)] = p * g12 + q * g22;
        let (p, q) = (u[(i, k)], u[(i, k + 1)]);
        u[(i, k)] = p * g11 + q * g21;
        u[(i, k + 1)] = p * g12 + q * g22;
    }
    t[(k + 1, k)] = Complex64::new(0.0, 0.0);
}

fn complex_arnoldi_extend(
    op: &dyn LinearOperator,
    v: &mut DMatrix<Complex64>,
    h: &mut DMatrix<Complex64>,
    from: usize,
    to: usize,
    rng: &mut ChaCha8Rng,
) {
    let n = op.dim();
    let mut scale = 0.0_f64;
    for j in from..to {
        let col = v.column(j);
        let re = op.apply(&col.map(|z| z.re));
        let im = op.apply(&col.map(|z| z.im));
        let mut w = DVector::from_fn(n, |i, _| Complex64::new(re[i], im[i]));
        scale = scale.max(w.norm());
        for _pass in 0..2 {
            let c = v.columns(0, j + 1).ad_mul(&w);
            w -= v.columns(0, j + 1) * &c;
            for i in 0..=j {
                h[(i, j)] += c[i];
            }
        }
        let beta = w.norm();
        if beta > 1e-12 * scale.max(1e-300) {
            h[(j + 1, j)] = Complex64::new(beta, 0.0);
            v.set_column(j + 1, &w.unscale(beta));
        } else {
            let mut r = DVector::from_fn(n, |_, _| Complex64::new(rng.random::<f64>() - 0.5, 0.0));
            for _pass in 0..2 {
                let c = v.columns(0, j + 1).ad_mul(&r);
                r -= v.columns(0, j + 1) * c;
            }
            let rn = r.norm();
            v.set_column(j + 1, &r.unscale(rn));
        }
    }
}

/// Arnoldi steps `from..to` on the basis `v` (n×(k+1)) and Hessenberg matrix
/// `h` ((k+1)×k), with re-orthogonalization. Breakdowns are continued with a
/// fresh random direction so that to = n yields a full Hessenberg reduction.
fn arnoldi_extend(
    op: &dyn LinearOperator,
    v: &mut DMatrix<f64>,
    h: &mut DMatrix<f64>,
    from: usize,
    to: usize,
    rng: &mut ChaCha8Rng,
) {
    let n = op.dim();
    let mut scale = 0.0_f64;
    for j in from..to {
        let mut w = op.apply(&v.column(j).into_owned());
        scale = scale.max(w.norm());
        for _pass in 0..2 {
            let c = v.columns(0, j + 1).tr_mul(&w);
            w -= v.columns(0, j + 1) * &c;
            for i in 0..=j {
                h[(i, j)] += c[i];
            }
        }
        let beta = w.norm();
        if beta > 1e-12 * scale.max(1e-300) || j + 1 == n {
            h[(j + 1, j)] = beta;
            if beta > 0.0 {
                v.set_column(j + 1, &(w / beta));
            }
        } else {
            let mut r = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
            for _pass in 0..2 {
                let c = v.columns(0, j + 1).tr_mul(&r);
                r -= v.columns(0, j + 1) * c;
            }
            let rn = r.norm();
            v.set_column(j + 1, &(r / rn));
        }
    }
}

/// Unit vector approximately spanning null(M - λI) by complex inverse iteration.
pub(crate) fn null_vector(m: &DMatrix<Complex64>, lambda: Complex64) -> DVector<Complex64> {
    let n = m.nrows();
    let scale = m.iter().map(|x| x.norm()).fold(0.0, f64::max).max(1.0);
    let shift = lambda + Complex64::new(scale * 1e-13, scale * 1e-14);
    let mut shifted = m.clone();
    for i in 0..n {
        shifted[(i, i)] -= shift;
    }
    let lu = shifted.lu();
    let mut v = DVector::from_fn(n, |i, _| {
        Complex64::new(1.0 + 0.1 * i as f64, 0.05 * i as f64)
    });
    for _ in 0..4 {
        let next = match lu.solve(&v) {
            Some(x) => x,
            None => break,
        };
        let nn = next.norm();
        if nn == 0.0 || !nn.is_finite() {
            break;
        }
        v = next.unscale(nn);
    }
    let nn = v.norm();
    v.unscale(nn)
}

/// Eigen-decomposition data for the eigenvector route of decay certificates.
#[derive(Debug, Clone)]
pub struct EigenInfo {
    pub eigenvalues: Vec<Complex64>,
    pub diagonalizable: bool,
    /// Eigenvector matrix T (columns), A = T D T⁻¹.
    pub t: Option<DMatrix<Complex64>>,
    pub t_inv: Option<DMatrix<Complex64>>,
    /// Spectral condition number of T (∞ when not diagonalizable).
    pub condition: f64,
}

/// Eigenvectors by complex inverse iteration; repeated eigenvalues are
/// handled by deflating previously found vectors of the same cluster.
pub fn eigen_decomposition(a: &DMatrix<f64>) -> EigenInfo {
    let n = a.nrows();
    let vals = eigenvalues(a);
    let ac = a.map(|x| Complex64::new(x, 0.0));
    let scale = a.norm().max(1e-300);
    let mut t = DMatrix::<Complex64>::zeros(n, n);
    for (j, &lam) in vals.iter().enumerate() {
        let mut v = null_vector(&ac, lam);
        // vectors already used for numerically equal eigenvalues
        let same: Vec<usize> = (0..j)
            .filter(|&i| (vals[i] - lam).norm() <= 1e-8 * scale)
            .collect();
        if !same.is_empty() {
            let mut rng = ChaCha8Rng::seed_from_u64(j as u64 + 17);
            let mut shifted = ac.clone();
            for i in 0..n {
                shifted[(i, i)] -=
                    lam + Complex64::new(scale * 1e-12 * (1.0 + same.len() as f64), 0.0);
            }
            let lu = shifted.lu();
            let mut w = DVector::from_fn(n, |_, _| {
                Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
            });
            for _ in 0..4 {
                for &i in &same {
                    let ti = t.column(i).into_owned();
                    let c = ti.dotc(&w);
                    w -= ti * c;
                }
                if let Some(x) = lu.solve(&w) {
                    let nn = x.norm();
                    if nn > 0.0 && nn.is_finite() {
                        w = x.unscale(nn);
                    }
                }
            }
            for &i in &same {
                let ti = t.column(i).into_owned();
                let c = ti.dotc(&w);
                w -= ti * c;
            }
            let nn = w.norm();
            if nn > 0.0 {
                v = w.unscale(nn);
            }
        }
        t.set_column(j, &v);
    }
    let t_inv = t.clone().try_inverse();
    let (diagonalizable, condition) = match &t_inv {
        Some(ti) => {
            let c = spectral_norm_complex(&t) * spectral_norm_complex(ti);
            // reconstruction check: T D T⁻¹ must reproduce A
            let d = DMatrix::from_diagonal(&DVector::from_vec(vals.clone()));
            let rec = &t * d * ti;
            let err = (rec - &ac).iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            (c.is_finite() && c < 1e12 && err <= 1e-8 * scale, c)
        }
        None => (false, f64::INFINITY),
    };
    EigenInfo {
        eigenvalues: vals,
        diagonalizable,
        t: Some(t),
        t_inv,
        condition,
    }
}

/// Solve the discrete Lyapunov equation AᵀGA − G + Q = 0.
///
/// Smith doubling followed by one residual-correction pass. Requires ρ(A) < 1.
pub fn solve_dlyap(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if !a.is_square() || q.shape() != (n, n) {
        return Err(RompcError::dims(format!(
            "dlyap: A is {:?}, Q is {:?}",
            a.shape(),
            q.shape()
        )));
    }
    let rho = dense_spectral_radius(a);
    if rho >= 1.0 {
        return Err(RompcError::Unstable(format!(
            "discrete Lyapunov equation needs rho(A) < 1, got {rho}"
        )));
    }
    let mut g = smith_doubling(a, &symmetrize(q))?;
    let resid = a.transpose() * &g * a - &g + q;
    let corr = smith_doubling(a, &symmetrize(&resid))?;
    g += corr;
    Ok(symmetrize(&g))
}

fn smith_doubling(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut g = q.clone();
    let mut ak = a.clone();
    for _ in 0..64 {
        let inc = ak.transpose() * &g * &ak;
        let inc_norm = inc.norm();
        g += &inc;
        if inc_norm <= 1e-17 * g.norm() || inc_norm == 0.0 {
            return Ok(g);
        }
        ak = &ak * &ak;
        if !ak.iter().all(|v| v.is_finite()) {
            break;
        }
    }
    if g.iter().all(|v| v.is_finite()) {
        Ok(g)
    } else {
        Err(RompcError::NotConverged {
            what: "Smith doubling".into(),
            iterations: 64,
            estimate: f64::NAN,
        })
    }
}

/// Solve the continuous Lyapunov equation AᵀX + XA + Q = 0 for Hurwitz A,
/// via a Cayley transform to the discrete equation.
pub fn solve_clyap(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if !a.is_square() || q.shape() != (n, n) {
        return Err(RompcError::dims(format!(
            "clyap: A is {:?}, Q is {:?}",
            a.shape(),
            q.shape()
        )));
    }
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let eig = eigenvalues(a);
    if eig.iter().any(|l| l.re >= 0.0) {
        return Err(RompcError::Unstable(
            "continuous Lyapunov equation needs a Hurwitz matrix".into(),
        ));
    }
    let lo = eig.iter().map(|l| l.norm()).fold(f64::INFINITY, f64::min);
    let hi = eig.iter().map(|l| l.norm()).fold(0.0, f64::max);
    let mu = (lo * hi).sqrt().max(1e-300);
    let id = DMatrix::<f64>::identity(n, n);
    let s = inverse(&(&id * mu - a), "Cayley transform")?;
    let ad = (&id * mu + a) * &s;
    let once = |rhs: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let qd = s.transpose() * rhs * &s * (2.0 * mu);
        smith_doubling(&ad, &symmetrize(&qd))
    };
    let mut x = once(q)?;
    let resid = a.transpose() * &x + &x * a + q;
    x += once(&resid)?;
    Ok(symmetrize(&x))
}

fn check_riccati_args(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<()> {
    let n = a.nrows();
    let m = b.ncols();
    if !a.is_square() || b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(RompcError::dims(format!(
            "Riccati: A {:?}, B {:?}, Q {:?}, R {:?}",
            a.shape(),
            b.shape(),
            q.shape(),
            r.shape()
        )));
    }
    if m > 0 && symmetrize(r).cholesky().is_none() {
        return Err(RompcError::NotPositiveDefinite(
            "R in Riccati equation".into(),
        ));
    }
    Ok(())
}

/// DARE residual AᵀXA − X − AᵀXB(BᵀXB+R)⁻¹BᵀXA + Q.
pub fn dare_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    x: &DMatrix<f64>,
) -> DMatrix<f64> {
    let btx = b.transpose() * x;
    let s = &btx * b + r;
    let sol = s
        .lu()
        .solve(&(&btx * a))
        .unwrap_or_else(|| DMatrix::zeros(b.ncols(), a.ncols()));
    a.transpose() * x * a - x - a.transpose() * btx.transpose() * sol + q
}

/// Optimal gain K = −(BᵀXB+R)⁻¹BᵀXA for a DARE solution X.
pub fn dare_gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    r: &DMatrix<f64>,
    x: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let btx = b.transpose() * x;
    let s = &btx * b + r;
    Ok(-solve(&s, &(&btx * a), "BᵀXB + R")?)
}

/// Stabilizing solution of the discrete algebraic Riccati equation
/// X = AᵀXA − AᵀXB(BᵀXB + R)⁻¹BᵀXA + Q.
///
/// Structure-preserving doubling, then Hewer (Newton) refinement steps.
pub fn solve_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_riccati_args(a, b, q, r)?;
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let g0 = if b.ncols() > 0 {
        b * solve(r, &b.transpose(), "R")?
    } else {
        DMatrix::zeros(n, n)
    };
    let mut ak = a.clone();
    let mut gk = symmetrize(&g0);
    let mut hk = symmetrize(q);
    let mut converged = false;
    for _ in 0..RICCATI_MAX_ITER {
        let w = &id + &gk * &hk;
        let lu = w.lu();
        let w_a = lu.solve(&ak).ok_or_else(|| {
            RompcError::Unstabilizable("doubling iteration hit a singular step".into())
        })?;
        let w_g = lu.solve(&gk).ok_or_else(|| {
            RompcError::Unstabilizable("doubling iteration hit a singular step".into())
        })?;
        let a_next = &ak * &w_a;
        let g_next = symmetrize(&(&gk + &ak * w_g * ak.transpose()));
        let h_next = symmetrize(&(&hk + ak.transpose() * &hk * &w_a));
        let delta = (&h_next - &hk).norm();
        let finite = h_next.iter().all(|v| v.is_finite()) && a_next.iter().all(|v| v.is_finite());
        if !finite || h_next.norm() > 1e150 {
            return Err(RompcError::Unstabilizable(
                "Riccati doubling iteration diverged".into(),
            ));
        }
        ak = a_next;
        gk = g_next;
        hk = h_next;
        if delta <= 1e-15 * (1.0 + hk.norm()) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(RompcError::NotConverged {
            what: "DARE doubling".into(),
            iterations: RICCATI_MAX_ITER,
            estimate: hk.norm(),
        });
    }
    let mut x = hk;
    let k = dare_gain(a, b, r, &x)?;
    let ac = a + b * &k;
    if !is_schur_stable(&ac) {
        return Err(RompcError::Unstabilizable(
            "no stabilizing DARE solution: closed loop A + BK is not Schur stable".into(),
        ));
    }
    // Hewer refinement: X ← solution of (A+BK)ᵀX(A+BK) − X + Q + KᵀRK = 0
    for _ in 0..2 {
        let k = dare_gain(a, b, r, &x)?;
        let ac = a + b * &k;
        if !is_schur_stable(&ac) {
            break;
        }
        let rhs = q + k.transpose() * r * &k;
        let cand = solve_dlyap(&ac, &symmetrize(&rhs))?;
        let r_old = dare_residual(a, b, q, r, &x).norm();
        let r_new = dare_residual(a, b, q, r, &cand).norm();
        if r_new <= r_old {
            x = cand;
        } else {
            break;
        }
    }
    Ok(symmetrize(&x))
}

/// CARE residual AᵀX + XA − XBR⁻¹BᵀX + Q.
pub fn care_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    x: &DMatrix<f64>,
) -> DMatrix<f64> {
    let rinv_bt = r
        .clone()
        .lu()
        .solve(&b.transpose())
        .unwrap_or_else(|| DMatrix::zeros(b.ncols(), b.nrows()));
    a.transpose() * x + x * a - x * b * rinv_bt * x + q
}

/// Optimal gain K = R⁻¹BᵀX for a CARE solution (control law u = −Kx).
pub fn care_gain(b: &DMatrix<f64>, r: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    solve(r, &(b.transpose() * x), "R")
}

/// Stabilizing solution of AᵀX + XA − XBR⁻¹BᵀX + Q = 0.
///
/// Matrix sign function of the Hamiltonian (determinant scaled Newton
/// iteration), then Newton–Kleinman refinement.
pub fn solve_care(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_riccati_args(a, b, q, r)?;
    let n = a.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let g = if b.ncols() > 0 {
        b * solve(r, &b.transpose(), "R")?
    } else {
        DMatrix::zeros(n, n)
    };
    let mut ham = DMatrix::<f64>::zeros(2 * n, 2 * n);
    ham.view_mut((0, 0), (n, n)).copy_from(a);
    ham.view_mut((0, n), (n, n)).copy_from(&(-&g));
    ham.view_mut((n, 0), (n, n)).copy_from(&(-symmetrize(q)));
    ham.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));

    let z = matrix_sign(&ham).map_err(|e| match e {
        RompcError::Singular(_) | RompcError::NotConverged { .. } => RompcError::Unstabilizable(
            "sign iteration failed (Hamiltonian eigenvalues on or near the imaginary axis)".into(),
        ),
        other => other,
    })?;
    let id = DMatrix::<f64>::identity(n, n);
    let mut lhs = DMatrix::<f64>::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n))
        .copy_from(&z.view((0, n), (n, n)));
    lhs.view_mut((n, 0), (n, n))
        .copy_from(&(z.view((n, n), (n, n)) + &id));
    let mut rhs = DMatrix::<f64>::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n))
        .copy_from(&(-(z.view((0, 0), (n, n)) + &id)));
    rhs.view_mut((n, 0), (n, n))
        .copy_from(&(-z.view((n, 0), (n, n))));
    let svd = lhs.svd(true, true);
    let mut x = svd
        .solve(&rhs, 1e-13)
        .map_err(|e| RompcError::Unstabilizable(format!("CARE subspace solve failed: {e}")))?;
    x = symmetrize(&x);

    let k = care_gain(b, r, &x)?;
    if !is_hurwitz(&(a - b * &k)) {
        return Err(RompcError::Unstabilizable(
            "no stabilizing CARE solution: A − BK is not Hurwitz".into(),
        ));
    }
    for _ in 0..3 {
        let k = care_gain(b, r, &x)?;
        let ac = a - b * &k;
        if !is_hurwitz(&ac) {
            break;
        }
        let rhs = q + k.transpose() * r * &k;
        let cand = solve_clyap(&ac, &symmetrize(&rhs))?;
        if care_residual(a, b, q, r, &cand).norm() <= care_residual(a, b, q, r, &x).norm() {
            x = cand;
        } else {
            break;
        }
    }
    Ok(symmetrize(&x))
}

/// Matrix sign function by the determinant-scaled Newton iteration
/// Z ← (Z/c + c Z⁻¹)/2. Fails when M has eigenvalues on the imaginary axis.
pub fn matrix_sign(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let mut z = m.clone();
    for it in 0..RICCATI_MAX_ITER {
        let lu = z.clone().lu();
        // |det Z|^{1/n} from the LU diagonal, safe from overflow
        let log_det: f64 = lu.u().diagonal().iter().map(|d| d.abs().ln()).sum();
        let zinv = lu.try_inverse().ok_or_else(|| {
            RompcError::Singular("sign iteration: eigenvalue on the imaginary axis".into())
        })?;
        let c = if log_det.is_finite() && it < 20 {
            (log_det / n as f64).exp()
        } else {
            1.0
        };
        let next = (&z / c + &zinv * c) * 0.5;
        if !next.iter().all(|v| v.is_finite()) {
            return Err(RompcError::Singular("sign iteration diverged".into()));
        }
        let delta = (&next - &z).norm();
        z = next;
        if delta <= 1e-13 * z.norm() {
            return Ok(z);
        }
    }
    Err(RompcError::NotConverged {
        what: "matrix sign iteration".into(),
        iterations: RICCATI_MAX_ITER,
        estimate: f64::NAN,
    })
}

/// e^{A t} by scaling and squaring with a degree-13 Padé approximant.
pub fn matrix_exponential(a: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    const THETA13: f64 = 5.371920351148152;
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    if n == 0 {
        return id;
    }
    let at = a * t;
    let norm1 = (0..n)
        .map(|j| at.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    if norm1 == 0.0 {
        return id;
    }
    let s = if norm1 > THETA13 {
        (norm1 / THETA13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let x = at / 2f64.powi(s);
    let x2 = &x * &x;
    let x4 = &x2 * &x2;
    let x6 = &x4 * &x2;
    let inner_u = &x6 * (&x6 * B[13] + &x4 * B[11] + &x2 * B[9])
        + &x6 * B[7]
        + &x4 * B[5]
        + &x2 * B[3]
        + &id * B[1];
    let u = &x * inner_u;
    let v = &x6 * (&x6 * B[12] + &x4 * B[10] + &x2 * B[8])
        + &x6 * B[6]
        + &x4 * B[4]
        + &x2 * B[2]
        + &id * B[0];
    let p = &v + &u;
    let qm = &v - &u;
    let mut e = qm
        .lu()
        .solve(&p)
        .expect("Padé denominator is nonsingular for scaled arguments");
    for _ in 0..s {
        e = &e * &e;
    }
    e
}

/// H2 norm of (A, B_in, C_out): √trace(C P Cᵀ) with P the controllability Gramian.
pub fn h2_norm(
    a: &DMatrix<f64>,
    b_in: &DMatrix<f64>,
    c_out: &DMatrix<f64>,
    domain: TimeDomain,
) -> Result<f64> {
    let n = a.nrows();
    if b_in.nrows() != n || c_out.ncols() != n {
        return Err(RompcError::dims(format!(
            "h2_norm: A {:?}, B {:?}, C {:?}",
            a.shape(),
            b_in.shape(),
            c_out.shape()
        )));
    }
    let bbt = b_in * b_in.transpose();
    let p = match domain {
        TimeDomain::Discrete { .. } => solve_dlyap(&a.transpose(), &bbt)?,
        TimeDomain::Continuous => solve_clyap(&a.transpose(), &bbt)?,
    };
    let tr = (c_out * p * c_out.transpose()).trace();
    Ok(tr.max(0.0).sqrt())
}
