//! H-representation polytopes `{x | Hx ≤ b}`: membership, tightening,
//! support functions and maxima of weighted norms over vertex sets.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{Result, RompcError};
use crate::linalg;
use crate::solvers::{solve_lp, LinearProgram, LpOptions, Status};

/// Default cap on the number of vertices visited by [`weighted_norm_max`].
pub const VERTEX_CAP: u128 = 1 << 20;
/// Largest dimension handled by general (non-box) vertex enumeration.
pub const MAX_ENUM_DIM: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Polytope {
    pub h: DMatrix<f64>,
    pub b: DVector<f64>,
    pub label: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Support {
    Bounded(f64),
    Unbounded,
}

impl Support {
    pub fn value(self) -> Option<f64> {
        match self {
            Support::Bounded(v) => Some(v),
            Support::Unbounded => None,
        }
    }
}

impl Polytope {
    pub fn new(h: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if h.nrows() != b.len() {
            return Err(RompcError::dims(format!(
                "polytope has {} rows but b has {} entries",
                h.nrows(),
                b.len()
            )));
        }
        if h.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(RompcError::invalid("polytope data must be finite"));
        }
        Ok(Polytope { h, b, label: None })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    /// Box `lower ≤ x ≤ upper`, rows ordered [I; −I].
    pub fn from_box(lower: &[f64], upper: &[f64]) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(RompcError::dims("box bounds of different lengths"));
        }
        let d = lower.len();
        let mut h = DMatrix::zeros(2 * d, d);
        let mut b = DVector::zeros(2 * d);
        for k in 0..d {
            if lower[k] > upper[k] {
                return Err(RompcError::EmptySet(format!(
                    "box coordinate {k} has lower {} > upper {}",
                    lower[k], upper[k]
                )));
            }
            h[(k, k)] = 1.0;
            b[k] = upper[k];
            h[(d + k, k)] = -1.0;
            b[d + k] = -lower[k];
        }
        Polytope::new(h, b)
    }

    /// Symmetric box `|x_k| ≤ r_k`.
    pub fn symmetric_box(radius: &[f64]) -> Result<Self> {
        let lower: Vec<f64> = radius.iter().map(|r| -r).collect();
        Polytope::from_box(&lower, radius)
    }

    /// The zero-dimensional set (no variables).
    pub fn empty_dim() -> Self {
        Polytope {
            h: DMatrix::zeros(0, 0),
            b: DVector::zeros(0),
            label: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.h.ncols()
    }

    pub fn num_rows(&self) -> usize {
        self.h.nrows()
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> Result<bool> {
        if x.len() != self.dim() {
            return Err(RompcError::dims(format!(
                "point of length {} for a {}-dimensional set",
                x.len(),
                self.dim()
            )));
        }
        let hx = &self.h * x;
        Ok((0..self.num_rows()).all(|i| hx[i] <= self.b[i] + tol * (1.0 + self.b[i].abs())))
    }

    /// Largest violation max_i (H x − b)_i (negative when strictly inside).
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        if self.num_rows() == 0 {
            return f64::NEG_INFINITY;
        }
        (&self.h * x - &self.b).max()
    }

    /// `{x | Hx ≤ b − Δ}`; warns when the result is empty or loses the origin.
    pub fn tighten(&self, delta: &DVector<f64>) -> Result<Polytope> {
        if delta.len() != self.num_rows() {
            return Err(RompcError::dims(format!(
                "tightening vector has {} entries for {} rows",
                delta.len(),
                self.num_rows()
            )));
        }
        if let Some(i) = delta.iter().position(|&d| d < 0.0 || d.is_nan()) {
            return Err(RompcError::invalid(format!(
                "tightening entry {i} is negative ({})",
                delta[i]
            )));
        }
        let out = Polytope {
            h: self.h.clone(),
            b: &self.b - delta,
            label: self.label.clone(),
        };
        let name = self.label.as_deref().unwrap_or("set");
        if out.b.iter().any(|&v| v < 0.0) {
            warn!("tightened {name} no longer contains the origin");
        }
        if out.is_empty()? {
            warn!("tightened {name} is empty");
        }
        Ok(out)
    }

    /// Per-coordinate bounds if every row involves a single coordinate and
    /// every coordinate is bounded on both sides.
    pub fn as_box(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let d = self.dim();
        let mut lo = vec![f64::NEG_INFINITY; d];
        let mut hi = vec![f64::INFINITY; d];
        for i in 0..self.num_rows() {
            let nz: Vec<usize> = (0..d).filter(|&j| self.h[(i, j)] != 0.0).collect();
            match nz.as_slice() {
                [] => {
                    if self.b[i] < 0.0 {
                        return None;
                    }
                }
                [j] => {
                    let a = self.h[(i, *j)];
                    let v = self.b[i] / a;
                    if a > 0.0 {
                        hi[*j] = hi[*j].min(v);
                    } else {
                        lo[*j] = lo[*j].max(v);
                    }
                }
                _ => return None,
            }
        }
        if lo.iter().chain(hi.iter()).all(|v| v.is_finite()) && (0..d).all(|j| lo[j] <= hi[j]) {
            Some((lo, hi))
        } else {
            None
        }
    }

    /// True when the set is exactly {0}.
    pub fn is_origin(&self) -> bool {
        match self.as_box() {
            Some((lo, hi)) => lo.iter().chain(hi.iter()).all(|&v| v == 0.0),
            None => false,
        }
    }

    pub fn support_max(&self, c: &DVector<f64>) -> Result<Support> {
        support_max(c, self)
    }

    pub fn is_empty(&self) -> Result<bool> {
        if self.dim() == 0 {
            return Ok(self.b.iter().any(|&v| v < 0.0));
        }
        if let Some((lo, hi)) = self.as_box() {
            return Ok((0..lo.len()).any(|j| lo[j] > hi[j]));
        }
        let lp = LinearProgram::new(DVector::zeros(self.dim()))
            .with_ineq(self.h.clone(), self.b.clone());
        let s = solve_lp(&lp, &LpOptions::default())?;
        Ok(s.status == Status::Infeasible)
    }

    /// Every coordinate bounded above and below (2·dim support LPs).
    pub fn is_compact(&self) -> Result<bool> {
        if self.as_box().is_some() {
            return Ok(true);
        }
        for j in 0..self.dim() {
            for s in [1.0, -1.0] {
                let mut c = DVector::zeros(self.dim());
                c[j] = s;
                match self.support_max(&c) {
                    Ok(Support::Unbounded) => return Ok(false),
                    Ok(Support::Bounded(_)) => {}
                    Err(RompcError::EmptySet(_)) => return Ok(true),
                    Err(e) => return Err(e),
                }
            }
        }
        Ok(true)
    }

    /// Vertex list. Boxes enumerate corners directly; other sets of
    /// dimension ≤ 8 enumerate all d-row subsets (basic feasible points).
    pub fn vertices(&self, cap: u128) -> Result<Vec<DVector<f64>>> {
        let d = self.dim();
        if d == 0 {
            return Ok(vec![DVector::zeros(0)]);
        }
        if let Some((lo, hi)) = self.as_box() {
            let count: u128 = (0..d)
                .map(|j| if lo[j] == hi[j] { 1u128 } else { 2 })
                .product();
            if count > cap {
                return Err(RompcError::VertexCap { count, cap });
            }
            let mut out = vec![DVector::zeros(d)];
            for j in 0..d {
                let mut next = Vec::with_capacity(out.len() * 2);
                for v in &out {
                    let mut a = v.clone();
                    a[j] = lo[j];
                    next.push(a);
                    if hi[j] != lo[j] {
                        let mut b = v.clone();
                        b[j] = hi[j];
                        next.push(b);
                    }
                }
                out = next;
            }
            return Ok(out);
        }
        if d > MAX_ENUM_DIM {
            return Err(RompcError::invalid(format!(
                "vertex enumeration of a general {d}-dimensional polytope (limit {MAX_ENUM_DIM}); supply a box or a product of low-dimensional factors"
            )));
        }
        let q = self.num_rows();
        let combos = binomial(q as u128, d as u128);
        if combos > cap.saturating_mul(16) {
            return Err(RompcError::VertexCap { count: combos, cap });
        }
        let scale = self.b.amax().max(1.0);
        let mut out: Vec<DVector<f64>> = Vec::new();
        let mut idx: Vec<usize> = (0..d).collect();
        loop {
            let sub = DMatrix::from_fn(d, d, |r, c| self.h[(idx[r], c)]);
            let rhs = DVector::from_fn(d, |r, _| self.b[idx[r]]);
            if let Some(x) = sub.lu().solve(&rhs) {
                if x.iter().all(|v| v.is_finite()) && self.max_violation(&x) <= 1e-9 * scale {
                    if !out.iter().any(|v| (v - &x).amax() <= 1e-9 * scale) {
                        out.push(x);
                        if out.len() as u128 > cap {
                            return Err(RompcError::VertexCap {
                                count: out.len() as u128,
                                cap,
                            });
                        }
                    }
                }
            }
            // next combination
            let mut k = d;
            loop {
                if k == 0 {
                    return if out.is_empty() {
                        Err(RompcError::EmptySet(
                            "polytope has no vertices (empty or unbounded)".into(),
                        ))
                    } else {
                        Ok(out)
                    };
                }
                k -= 1;
                if idx[k] < q - d + k {
                    idx[k] += 1;
                    for t in k + 1..d {
                        idx[t] = idx[t - 1] + 1;
                    }
                    break;
                }
            }
        }
    }

    /// Cartesian product S₁ × S₂.
    pub fn product(&self, other: &Polytope) -> Polytope {
        let (q1, d1) = self.h.shape();
        let (q2, d2) = other.h.shape();
        let mut h = DMatrix::zeros(q1 + q2, d1 + d2);
        h.view_mut((0, 0), (q1, d1)).copy_from(&self.h);
        h.view_mut((q1, d1), (q2, d2)).copy_from(&other.h);
        let mut b = DVector::zeros(q1 + q2);
        b.rows_mut(0, q1).copy_from(&self.b);
        b.rows_mut(q1, q2).copy_from(&other.b);
        Polytope { h, b, label: None }
    }
}

fn binomial(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    let mut r: u128 = 1;
    for i in 0..k {
        r = r.saturating_mul(n - i) / (i + 1);
    }
    r
}

/// max cᵀx over S.
pub fn support_max(c: &DVector<f64>, s: &Polytope) -> Result<Support> {
    if c.len() != s.dim() {
        return Err(RompcError::dims(format!(
            "direction of length {} for a {}-dimensional set",
            c.len(),
            s.dim()
        )));
    }
    if let Some((lo, hi)) = s.as_box() {
        let v = (0..c.len())
            .map(|j| {
                if c[j] >= 0.0 {
                    c[j] * hi[j]
                } else {
                    c[j] * lo[j]
                }
            })
            .sum();
        return Ok(Support::Bounded(v));
    }
    let lp = LinearProgram::new(c.clone()).with_ineq(s.h.clone(), s.b.clone());
    let r = solve_lp(&lp, &LpOptions::default())?;
    match r.status {
        Status::Optimal => Ok(Support::Bounded(r.objective)),
        Status::Unbounded => Ok(Support::Unbounded),
        Status::Infeasible => Err(RompcError::EmptySet(format!(
            "support function of empty {}",
            s.label.as_deref().unwrap_or("set")
        ))),
        Status::MaxIter => Err(RompcError::Solver(
            "support LP hit the iteration cap".into(),
        )),
    }
}

/// max over s ∈ S₁ × … × S_k of ‖M s‖_G, with G symmetric positive definite.
///
/// Exact: the maximum of a convex function over a polytope is attained at a
/// vertex, and the vertices of a product are products of factor vertices.
/// Box factors are split into independent intervals.
pub fn weighted_norm_max(m: &DMatrix<f64>, g: &DMatrix<f64>, factors: &[&Polytope]) -> Result<f64> {
    weighted_norm_max_capped(m, g, factors, VERTEX_CAP)
}

pub fn weighted_norm_max_capped(
    m: &DMatrix<f64>,
    g: &DMatrix<f64>,
    factors: &[&Polytope],
    cap: u128,
) -> Result<f64> {
    let total_dim: usize = factors.iter().map(|f| f.dim()).sum();
    if m.ncols() != total_dim {
        return Err(RompcError::dims(format!(
            "matrix has {} columns for a product set of dimension {total_dim}",
            m.ncols()
        )));
    }
    if g.shape() != (m.nrows(), m.nrows()) {
        return Err(RompcError::dims(
            "weight matrix does not match the image dimension",
        ));
    }
    let l = linalg::cholesky(g, "weight matrix G")?;
    let n = l.transpose() * m;
    weighted_norm_max_factored(&n, factors, cap)
}

/// Same as [`weighted_norm_max`] with the weight already applied (‖N s‖₂).
pub fn weighted_norm_max_factored(
    n: &DMatrix<f64>,
    factors: &[&Polytope],
    cap: u128,
) -> Result<f64> {
    // vertex images per independent factor
    let mut images: Vec<Vec<DVector<f64>>> = Vec::new();
    let mut offset = 0;
    let mut count: u128 = 1;
    for f in factors {
        let d = f.dim();
        if d == 0 {
            continue;
        }
        let block = n.columns(offset, d);
        if let Some((lo, hi)) = f.as_box() {
            for j in 0..d {
                let col = block.column(j);
                if lo[j] == hi[j] {
                    images.push(vec![col * lo[j]]);
                } else {
                    images.push(vec![col * lo[j], col * hi[j]]);
                    count = count.saturating_mul(2);
                }
            }
        } else {
            let verts = f.vertices(cap)?;
            count = count.saturating_mul(verts.len() as u128);
            images.push(verts.iter().map(|v| &block * v).collect());
        }
        offset += d;
        if count > cap {
            return Err(RompcError::VertexCap { count, cap });
        }
    }
    let rows = n.nrows();
    if images.is_empty() {
        return Ok(0.0);
    }
    // fold fixed (single-vertex) factors into a constant
    let mut base = DVector::zeros(rows);
    let mut free: Vec<Vec<DVector<f64>>> = Vec::new();
    for imgs in images {
        if imgs.len() == 1 {
            base += &imgs[0];
        } else {
            free.push(imgs);
        }
    }
    let mut choice = vec![0usize; free.len()];
    let recompute = |choice: &[usize]| -> DVector<f64> {
        let mut v = base.clone();
        for (k, &c) in choice.iter().enumerate() {
            v += &free[k][c];
        }
        v
    };
    let mut cur = recompute(&choice);
    let mut best = cur.norm();
    let mut steps: u64 = 0;
    loop {
        // odometer increment with incremental image update
        let mut k = 0;
        loop {
            if k == free.len() {
                return Ok(best);
            }
            let old = choice[k];
            let next = (old + 1) % free[k].len();
            cur += &free[k][next];
            cur -= &free[k][old];
            choice[k] = next;
            if next != 0 {
                break;
            }
            k += 1;
        }
        steps += 1;
        if steps % 4096 == 0 {
            cur = recompute(&choice);
        }
        best = best.max(cur.norm());
    }
}
