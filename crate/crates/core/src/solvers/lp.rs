//! Dense bounded-variable revised simplex.
//!
//! Problems are stated as `maximize cᵀx s.t. A_ineq x ≤ b_ineq, A_eq x = b_eq,
//! l ≤ x ≤ u`. Tall problems (many more rows than variables) are solved
//! through their dual so that the basis dimension is the number of variables.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::{SolveStatus, Status};
use crate::error::{Result, RompcError};

#[derive(Debug, Clone)]
pub struct LinearProgram {
    /// Objective to maximize.
    pub c: DVector<f64>,
    pub a_ineq: DMatrix<f64>,
    pub b_ineq: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    /// Variable bounds; ±∞ for none.
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl LinearProgram {
    /// Free variables, no constraints.
    pub fn new(c: DVector<f64>) -> Self {
        let n = c.len();
        LinearProgram {
            c,
            a_ineq: DMatrix::zeros(0, n),
            b_ineq: DVector::zeros(0),
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    /// Append rows `a x ≤ b`.
    pub fn with_ineq(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_ineq = stack_rows(&self.a_ineq, &a);
        self.b_ineq = stack_vec(&self.b_ineq, &b);
        self
    }

    /// Append rows `a x = b`.
    pub fn with_eq(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_eq = stack_rows(&self.a_eq, &a);
        self.b_eq = stack_vec(&self.b_eq, &b);
        self
    }

    pub fn with_bounds(mut self, lower: DVector<f64>, upper: DVector<f64>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if self.a_ineq.ncols() != n || self.a_eq.ncols() != n {
            return Err(RompcError::dims(format!(
                "LP has {n} variables but constraint matrices have {} and {} columns",
                self.a_ineq.ncols(),
                self.a_eq.ncols()
            )));
        }
        if self.a_ineq.nrows() != self.b_ineq.len() || self.a_eq.nrows() != self.b_eq.len() {
            return Err(RompcError::dims(
                "LP constraint rows do not match right-hand sides",
            ));
        }
        if self.lower.len() != n || self.upper.len() != n {
            return Err(RompcError::dims("LP bound vectors have wrong length"));
        }
        let finite = |v: &f64| v.is_finite();
        if !self.c.iter().all(finite)
            || !self.a_ineq.iter().all(finite)
            || !self.b_ineq.iter().all(finite)
            || !self.a_eq.iter().all(finite)
            || !self.b_eq.iter().all(finite)
        {
            return Err(RompcError::invalid("LP data must be finite"));
        }
        for j in 0..n {
            if self.lower[j].is_nan()
                || self.upper[j].is_nan()
                || self.lower[j] == f64::INFINITY
                || self.upper[j] == f64::NEG_INFINITY
            {
                return Err(RompcError::invalid(format!(
                    "LP bound {j} is not a valid interval end"
                )));
            }
        }
        Ok(())
    }
}

fn stack_rows(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    if top.nrows() == 0 {
        return bottom.clone();
    }
    let mut out = DMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.rows_mut(0, top.nrows()).copy_from(top);
    out.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    out
}

fn stack_vec(top: &DVector<f64>, bottom: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(top.len() + bottom.len());
    out.rows_mut(0, top.len()).copy_from(top);
    out.rows_mut(top.len(), bottom.len()).copy_from(bottom);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Formulation {
    /// Dual when the row count exceeds twice the variable count.
    Auto,
    Primal,
    Dual,
}

#[derive(Debug, Clone, Copy)]
pub struct LpOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub formulation: Formulation,
}

impl Default for LpOptions {
    fn default() -> Self {
        LpOptions {
            tol: 1e-9,
            max_iter: 100_000,
            formulation: Formulation::Auto,
        }
    }
}

pub fn solve_lp(lp: &LinearProgram, opts: &LpOptions) -> Result<SolveStatus> {
    lp.validate()?;
    let start = Instant::now();
    let n = lp.num_vars();
    let bound_rows = (0..n)
        .map(|j| lp.lower[j].is_finite() as usize + lp.upper[j].is_finite() as usize)
        .sum::<usize>();
    let rows = lp.a_ineq.nrows() + lp.a_eq.nrows();
    let dual = match opts.formulation {
        Formulation::Primal => false,
        Formulation::Dual => true,
        Formulation::Auto => n > 0 && rows + bound_rows > 2 * n + 16,
    };
    let mut out = if dual {
        solve_via_dual(lp, opts)
    } else {
        solve_primal(lp, opts)
    };
    out.solve_time = start.elapsed();
    Ok(out)
}

fn solve_primal(lp: &LinearProgram, opts: &LpOptions) -> SolveStatus {
    let n = lp.num_vars();
    let mi = lp.a_ineq.nrows();
    let me = lp.a_eq.nrows();
    let m = mi + me;
    let mut a = DMatrix::zeros(m, n + mi);
    a.view_mut((0, 0), (mi, n)).copy_from(&lp.a_ineq);
    a.view_mut((mi, 0), (me, n)).copy_from(&lp.a_eq);
    for i in 0..mi {
        a[(i, n + i)] = 1.0;
    }
    let mut b = DVector::zeros(m);
    b.rows_mut(0, mi).copy_from(&lp.b_ineq);
    b.rows_mut(mi, me).copy_from(&lp.b_eq);
    let mut c = DVector::zeros(n + mi);
    c.rows_mut(0, n).copy_from(&(-&lp.c));
    let mut lo = vec![0.0; n + mi];
    let mut hi = vec![f64::INFINITY; n + mi];
    for j in 0..n {
        lo[j] = lp.lower[j];
        hi[j] = lp.upper[j];
    }
    let mut unit = vec![None; m];
    for (i, u) in unit.iter_mut().enumerate().take(mi) {
        *u = Some(n + i);
    }
    let sf = Standard {
        a: &a,
        b,
        c,
        lo,
        hi,
        unit,
    };
    let res = simplex(&sf, opts);
    let x = res.x.rows(0, n).into_owned();
    let objective = lp.c.dot(&x);
    match res.outcome {
        Outcome::Optimal => SolveStatus {
            status: Status::Optimal,
            objective,
            x: Some(x),
            iterations: res.iterations,
            solve_time: Default::default(),
        },
        Outcome::MaxIter => SolveStatus {
            status: Status::MaxIter,
            objective,
            x: Some(x),
            iterations: res.iterations,
            solve_time: Default::default(),
        },
        Outcome::Infeasible => {
            SolveStatus::without_point(Status::Infeasible, res.iterations, Default::default())
        }
        Outcome::Unbounded => {
            SolveStatus::without_point(Status::Unbounded, res.iterations, Default::default())
        }
    }
}

/// Dual of `max cᵀx, Ãx ≤ b̃, A_eq x = b_eq` (finite bounds folded into Ã):
/// `min b̃ᵀy + b_eqᵀz, Ãᵀy + A_eqᵀz = c, y ≥ 0`. The primal point is the
/// simplex multiplier vector of the dual's equality rows.
fn solve_via_dual(lp: &LinearProgram, opts: &LpOptions) -> SolveStatus {
    let n = lp.num_vars();
    let mi = lp.a_ineq.nrows();
    let me = lp.a_eq.nrows();
    let mut extra: Vec<(usize, f64, f64)> = Vec::new();
    for j in 0..n {
        if lp.upper[j].is_finite() {
            extra.push((j, 1.0, lp.upper[j]));
        }
        if lp.lower[j].is_finite() {
            extra.push((j, -1.0, -lp.lower[j]));
        }
    }
    let q = mi + extra.len();
    let nd = q + me;
    let mut ad = DMatrix::zeros(n, nd);
    ad.view_mut((0, 0), (n, mi))
        .copy_from(&lp.a_ineq.transpose());
    for (k, &(j, s, _)) in extra.iter().enumerate() {
        ad[(j, mi + k)] = s;
    }
    ad.view_mut((0, q), (n, me)).copy_from(&lp.a_eq.transpose());
    let mut cd = DVector::zeros(nd);
    cd.rows_mut(0, mi).copy_from(&lp.b_ineq);
    for (k, &(_, _, v)) in extra.iter().enumerate() {
        cd[mi + k] = v;
    }
    cd.rows_mut(q, me).copy_from(&lp.b_eq);
    let mut lo = vec![0.0; nd];
    let mut hi = vec![f64::INFINITY; nd];
    for j in q..nd {
        lo[j] = f64::NEG_INFINITY;
        hi[j] = f64::INFINITY;
    }
    let sf = Standard {
        a: &ad,
        b: lp.c.clone(),
        c: cd,
        lo,
        hi,
        unit: vec![None; n],
    };
    let res = simplex(&sf, opts);
    match res.outcome {
        Outcome::Optimal | Outcome::MaxIter => {
            let x = res.pi;
            let objective = lp.c.dot(&x);
            let status = if res.outcome == Outcome::Optimal {
                Status::Optimal
            } else {
                Status::MaxIter
            };
            SolveStatus {
                status,
                objective,
                x: Some(x),
                iterations: res.iterations,
                solve_time: Default::default(),
            }
        }
        Outcome::Unbounded => {
            SolveStatus::without_point(Status::Infeasible, res.iterations, Default::default())
        }
        Outcome::Infeasible => {
            // dual infeasible: primal is unbounded unless it is itself infeasible
            let feas = Standard {
                a: &ad,
                b: DVector::zeros(n),
                c: sf.c.clone(),
                lo: sf.lo.clone(),
                hi: sf.hi.clone(),
                unit: vec![None; n],
            };
            let check = simplex(&feas, opts);
            let status = if check.outcome == Outcome::Unbounded {
                Status::Infeasible
            } else {
                Status::Unbounded
            };
            SolveStatus::without_point(
                status,
                res.iterations + check.iterations,
                Default::default(),
            )
        }
    }
}

/// `min cᵀx s.t. A x = b, lo ≤ x ≤ hi`.
struct Standard<'a> {
    a: &'a DMatrix<f64>,
    b: DVector<f64>,
    c: DVector<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    /// Per row, a structural column equal to the unit vector e_i (a slack),
    /// usable in the starting basis when its value comes out nonnegative.
    unit: Vec<Option<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
}

struct SimplexResult {
    outcome: Outcome,
    x: DVector<f64>,
    pi: DVector<f64>,
    iterations: usize,
}

const NONBASIC: usize = usize::MAX;
const REFACTOR_EVERY: usize = 100;
const DEGENERATE_LIMIT: usize = 1000;

struct Simplex<'a> {
    sf: &'a Standard<'a>,
    m: usize,
    n: usize,
    /// Artificial column i is art_sign[i]·e_i (index n + i).
    art_sign: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    x: Vec<f64>,
    basis: Vec<usize>,
    pos: Vec<usize>,
    binv: DMatrix<f64>,
    cost: Vec<f64>,
    excluded: Vec<bool>,
    col_norm2: Vec<f64>,
    pivots_since_refactor: usize,
    iterations: usize,
    degenerate_run: usize,
    cursor: usize,
    ftol: f64,
    dtol: f64,
}

fn simplex(sf: &Standard, opts: &LpOptions) -> SimplexResult {
    let m = sf.a.nrows();
    let n = sf.a.ncols();
    let total = n + m;
    let mut lo = sf.lo.clone();
    let mut hi = sf.hi.clone();
    lo.extend(std::iter::repeat_n(0.0, m));
    hi.extend(std::iter::repeat_n(f64::INFINITY, m));
    let mut x = vec![0.0; total];
    for j in 0..n {
        x[j] = if lo[j].is_finite() {
            lo[j]
        } else if hi[j].is_finite() {
            hi[j]
        } else {
            0.0
        };
    }
    let bscale = sf.b.amax().max(1.0);
    let cscale = sf.c.amax().max(1.0);
    let col_norm2: Vec<f64> = (0..n)
        .map(|j| sf.a.column(j).norm_squared())
        .chain(std::iter::repeat_n(1.0, m))
        .collect();
    let mut s = Simplex {
        sf,
        m,
        n,
        art_sign: vec![1.0; m],
        lo,
        hi,
        x,
        basis: vec![0; m],
        pos: vec![NONBASIC; total],
        binv: DMatrix::identity(m, m),
        cost: vec![0.0; total],
        excluded: vec![false; total],
        col_norm2,
        pivots_since_refactor: 0,
        iterations: 0,
        degenerate_run: 0,
        cursor: 0,
        ftol: opts.tol * bscale,
        dtol: opts.tol * cscale,
    };

    // starting basis: slacks where they come out feasible, artificials elsewhere
    let mut resid = sf.b.clone();
    for j in 0..n {
        if s.x[j] != 0.0 {
            resid.axpy(-s.x[j], &sf.a.column(j), 1.0);
        }
    }
    let mut any_art = false;
    for i in 0..m {
        match sf.unit[i] {
            Some(j) if resid[i] >= 0.0 && s.lo[j] <= 0.0 => {
                s.basis[i] = j;
                s.pos[j] = i;
                s.x[j] += resid[i];
                s.excluded[n + i] = true;
                s.hi[n + i] = 0.0;
            }
            _ => {
                s.art_sign[i] = if resid[i] >= 0.0 { 1.0 } else { -1.0 };
                s.basis[i] = n + i;
                s.pos[n + i] = i;
                s.x[n + i] = resid[i].abs();
                s.cost[n + i] = 1.0;
                any_art = true;
            }
        }
    }
    for i in 0..m {
        s.binv[(i, i)] = if s.basis[i] >= n { s.art_sign[i] } else { 1.0 };
    }

    if any_art {
        let out = s.run(opts.max_iter);
        if out == Outcome::MaxIter {
            return s.result(Outcome::MaxIter);
        }
        let infeas: f64 = (n..total)
            .filter(|&j| s.pos[j] != NONBASIC)
            .map(|j| s.x[j])
            .sum();
        if infeas > 1e3 * s.ftol.max(1e-12) {
            return s.result(Outcome::Infeasible);
        }
        s.drive_out_artificials();
    }
    for j in n..total {
        s.hi[j] = 0.0;
        s.cost[j] = 0.0;
        if s.pos[j] == NONBASIC {
            s.excluded[j] = true;
            s.x[j] = 0.0;
        }
    }
    for j in 0..n {
        s.cost[j] = sf.c[j];
    }
    s.degenerate_run = 0;
    let out = s.run(opts.max_iter);
    s.result(out)
}

impl Simplex<'_> {
    fn result(&self, outcome: Outcome) -> SimplexResult {
        let cb = DVector::from_iterator(self.m, self.basis.iter().map(|&j| self.cost_of(j)));
        let pi = self.binv.tr_mul(&cb);
        SimplexResult {
            outcome,
            x: DVector::from_iterator(self.n, self.x[..self.n].iter().copied()),
            pi,
            iterations: self.iterations,
        }
    }

    fn cost_of(&self, j: usize) -> f64 {
        self.cost[j]
    }

    fn column(&self, j: usize) -> DVector<f64> {
        if j < self.n {
            self.sf.a.column(j).into_owned()
        } else {
            let mut e = DVector::zeros(self.m);
            e[j - self.n] = self.art_sign[j - self.n];
            e
        }
    }

    fn ftran(&self, j: usize) -> DVector<f64> {
        if j < self.n {
            &self.binv * self.sf.a.column(j)
        } else {
            let i = j - self.n;
            self.binv.column(i) * self.art_sign[i]
        }
    }

    fn reduced_cost(&self, j: usize, pi: &DVector<f64>) -> f64 {
        if j < self.n {
            self.cost[j] - self.sf.a.column(j).dot(pi)
        } else {
            let i = j - self.n;
            self.cost[j] - self.art_sign[i] * pi[i]
        }
    }

    /// Improving direction for nonbasic j with reduced cost d, if any.
    fn direction(&self, j: usize, d: f64) -> Option<f64> {
        let (lo, hi, x) = (self.lo[j], self.hi[j], self.x[j]);
        if lo == hi {
            return None;
        }
        let at_lo = lo.is_finite() && x <= lo;
        let at_hi = hi.is_finite() && x >= hi;
        if d < -self.dtol && !at_hi {
            Some(1.0)
        } else if d > self.dtol && !at_lo {
            Some(-1.0)
        } else {
            None
        }
    }

    fn price(&mut self, pi: &DVector<f64>, bland: bool) -> Option<(usize, f64)> {
        let total = self.n + self.m;
        if bland {
            for j in 0..total {
                if self.pos[j] != NONBASIC || self.excluded[j] {
                    continue;
                }
                let d = self.reduced_cost(j, pi);
                if let Some(dir) = self.direction(j, d) {
                    return Some((j, dir));
                }
            }
            return None;
        }
        let seg = (total / 8).max(512).min(total);
        let mut scanned = 0;
        while scanned < total {
            let mut best: Option<(usize, f64, f64)> = None;
            let end = (scanned + seg).min(total);
            for k in scanned..end {
                let j = (self.cursor + k) % total;
                if self.pos[j] != NONBASIC || self.excluded[j] {
                    continue;
                }
                let d = self.reduced_cost(j, pi);
                if let Some(dir) = self.direction(j, d) {
                    let score = d * d / (1.0 + self.col_norm2[j]);
                    if best.is_none_or(|b| score > b.2) {
                        best = Some((j, dir, score));
                    }
                }
            }
            scanned = end;
            if let Some((j, dir, _)) = best {
                self.cursor = (self.cursor + scanned) % total;
                return Some((j, dir));
            }
        }
        None
    }

    fn run(&mut self, max_iter: usize) -> Outcome {
        loop {
            if self.iterations >= max_iter {
                return Outcome::MaxIter;
            }
            if self.pivots_since_refactor >= REFACTOR_EVERY {
                self.refactor();
            }
            let cb = DVector::from_iterator(self.m, self.basis.iter().map(|&j| self.cost_of(j)));
            let pi = self.binv.tr_mul(&cb);
            let bland = self.degenerate_run >= DEGENERATE_LIMIT;
            let Some((q, dir)) = self.price(&pi, bland) else {
                if self.pivots_since_refactor > 0 {
                    // confirm optimality on a fresh factorization
                    self.refactor();
                    let cb =
                        DVector::from_iterator(self.m, self.basis.iter().map(|&j| self.cost_of(j)));
                    let pi = self.binv.tr_mul(&cb);
                    if self.price(&pi, true).is_some() {
                        continue;
                    }
                }
                return Outcome::Optimal;
            };
            self.iterations += 1;
            let alpha = self.ftran(q);
            match self.ratio_test(q, dir, &alpha, bland) {
                None => return Outcome::Unbounded,
                Some((t, leave)) => {
                    if t <= 1e-12 {
                        self.degenerate_run += 1;
                    } else {
                        self.degenerate_run = 0;
                    }
                    self.step(q, dir, &alpha, t, leave);
                }
            }
        }
    }

    /// Returns the step length and the leaving basis row (None for a bound flip).
    fn ratio_test(
        &self,
        q: usize,
        dir: f64,
        alpha: &DVector<f64>,
        bland: bool,
    ) -> Option<(f64, Option<usize>)> {
        let ptol = 1e-9;
        let amax = alpha.amax().max(1.0);
        let mut limit = f64::INFINITY;
        // pass 1: relaxed bounds
        for i in 0..self.m {
            let rate = -dir * alpha[i];
            if rate.abs() <= ptol * amax {
                continue;
            }
            let j = self.basis[i];
            let r = if rate < 0.0 {
                if !self.lo[j].is_finite() {
                    continue;
                }
                (self.x[j] - self.lo[j] + self.ftol) / -rate
            } else {
                if !self.hi[j].is_finite() {
                    continue;
                }
                (self.hi[j] - self.x[j] + self.ftol) / rate
            };
            limit = limit.min(r);
        }
        let flip = self.hi[q] - self.lo[q];
        if flip.is_finite() && flip <= limit {
            return Some((flip, None));
        }
        if !limit.is_finite() {
            return None;
        }
        // pass 2: among rows within the relaxed limit, take the largest pivot
        let mut choice: Option<(usize, f64, f64)> = None;
        for i in 0..self.m {
            let rate = -dir * alpha[i];
            if rate.abs() <= ptol * amax {
                continue;
            }
            let j = self.basis[i];
            let r = if rate < 0.0 {
                if !self.lo[j].is_finite() {
                    continue;
                }
                (self.x[j] - self.lo[j]) / -rate
            } else {
                if !self.hi[j].is_finite() {
                    continue;
                }
                (self.hi[j] - self.x[j]) / rate
            };
            if r > limit {
                continue;
            }
            let better = match choice {
                None => true,
                Some((ci, _, cmag)) => {
                    if bland {
                        j < self.basis[ci]
                    } else {
                        rate.abs() > cmag
                    }
                }
            };
            if better {
                choice = Some((i, r.max(0.0), rate.abs()));
            }
        }
        choice.map(|(i, t, _)| (t, Some(i)))
    }

    fn step(&mut self, q: usize, dir: f64, alpha: &DVector<f64>, t: f64, leave: Option<usize>) {
        if t != 0.0 {
            self.x[q] += dir * t;
            for i in 0..self.m {
                let j = self.basis[i];
                self.x[j] -= dir * t * alpha[i];
            }
        }
        let Some(r) = leave else {
            // bound flip: snap the entering variable onto the bound it reached
            self.x[q] = if dir > 0.0 { self.hi[q] } else { self.lo[q] };
            return;
        };
        let out = self.basis[r];
        let rate = -dir * alpha[r];
        self.x[out] = if rate < 0.0 {
            self.lo[out]
        } else {
            self.hi[out]
        };
        self.pos[out] = NONBASIC;
        self.basis[r] = q;
        self.pos[q] = r;
        self.pivot_inverse(r, alpha);
    }

    fn pivot_inverse(&mut self, r: usize, alpha: &DVector<f64>) {
        let piv = alpha[r];
        let row: DVector<f64> = self.binv.row(r).transpose() / piv;
        let mut u = alpha.clone();
        u[r] -= 1.0;
        self.binv.ger(-1.0, &u, &row, 1.0);
        self.pivots_since_refactor += 1;
    }

    fn refactor(&mut self) {
        let mut bmat = DMatrix::zeros(self.m, self.m);
        for (i, &j) in self.basis.iter().enumerate() {
            bmat.set_column(i, &self.column(j));
        }
        if let Some(inv) = bmat.lu().try_inverse() {
            self.binv = inv;
        }
        // recompute basic values from the nonbasic ones
        let mut rhs = self.sf.b.clone();
        for j in 0..self.n + self.m {
            if self.pos[j] == NONBASIC && self.x[j] != 0.0 {
                rhs -= self.column(j) * self.x[j];
            }
        }
        let xb = &self.binv * rhs;
        for (i, &j) in self.basis.iter().enumerate() {
            let mut v = xb[i];
            // absorb round-off just outside the bounds
            if v < self.lo[j] && v > self.lo[j] - self.ftol {
                v = self.lo[j];
            }
            if v > self.hi[j] && v < self.hi[j] + self.ftol {
                v = self.hi[j];
            }
            self.x[j] = v;
        }
        self.pivots_since_refactor = 0;
    }

    /// Pivot zero-level artificials out of the basis where some structural
    /// column has a usable entry in their row; remaining ones mark redundant rows.
    fn drive_out_artificials(&mut self) {
        self.refactor();
        for r in 0..self.m {
            let j = self.basis[r];
            if j < self.n {
                continue;
            }
            let row = self.binv.row(r).transpose();
            let mut best: Option<(usize, f64)> = None;
            for k in 0..self.n {
                if self.pos[k] != NONBASIC || self.lo[k] == self.hi[k] {
                    continue;
                }
                let v = self.sf.a.column(k).dot(&row).abs();
                if v > 1e-7 && best.is_none_or(|b| v > b.1) {
                    best = Some((k, v));
                }
            }
            if let Some((k, _)) = best {
                let alpha = self.ftran(k);
                self.x[j] = 0.0;
                self.pos[j] = NONBASIC;
                self.basis[r] = k;
                self.pos[k] = r;
                self.pivot_inverse(r, &alpha);
            }
        }
        self.refactor();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::Status;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn m(r: usize, c: usize, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, x)
    }

    #[test]
    fn interval_maximum() {
        let lp = LinearProgram::new(v(&[1.0])).with_ineq(m(2, 1, &[1.0, -1.0]), v(&[2.0, 1.0]));
        let s = solve_lp(&lp, &LpOptions::default()).unwrap();
        assert_eq!(s.status, Status::Optimal);
        assert_relative_eq!(s.objective, 2.0, epsilon = 1e-12);
        assert_relative_eq!(s.x.unwrap()[0], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn unbounded_ray() {
        let lp = LinearProgram::new(v(&[1.0])).with_ineq(m(1, 1, &[-1.0]), v(&[0.0]));
        let s = solve_lp(&lp, &LpOptions::default()).unwrap();
        assert_eq!(s.status, Status::Unbounded);
    }

    #[test]
    fn degenerate_face() {
        let lp = LinearProgram::new(v(&[1.0, 1.0]))
            .with_ineq(m(1, 2, &[1.0, 1.0]), v(&[1.0]))
            .with_bounds(v(&[0.0, 0.0]), v(&[f64::INFINITY, f64::INFINITY]));
        let s = solve_lp(&lp, &LpOptions::default()).unwrap();
        assert_relative_eq!(s.objective, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn infeasible_detected_in_both_forms() {
        let lp = LinearProgram::new(v(&[1.0])).with_ineq(m(2, 1, &[1.0, -1.0]), v(&[-1.0, -1.0]));
        for f in [Formulation::Primal, Formulation::Dual] {
            let s = solve_lp(
                &lp,
                &LpOptions {
                    formulation: f,
                    ..Default::default()
                },
            )
            .unwrap();
            assert_eq!(s.status, Status::Infeasible, "{f:?}");
        }
        let lp = LinearProgram::new(v(&[1.0, 0.0])).with_ineq(m(1, 2, &[0.0, 1.0]), v(&[1.0]));
        for f in [Formulation::Primal, Formulation::Dual] {
            let s = solve_lp(
                &lp,
                &LpOptions {
                    formulation: f,
                    ..Default::default()
                },
            )
            .unwrap();
            assert_eq!(s.status, Status::Unbounded, "{f:?}");
        }
    }

    #[test]
    fn equality_rows_and_free_variables() {
        // max x + 2y s.t. x + y = 1, -3 ≤ x ≤ 3, y ≤ 2
        let lp = LinearProgram::new(v(&[1.0, 2.0]))
            .with_eq(m(1, 2, &[1.0, 1.0]), v(&[1.0]))
            .with_bounds(v(&[-3.0, f64::NEG_INFINITY]), v(&[3.0, 2.0]));
        for f in [Formulation::Primal, Formulation::Dual] {
            let s = solve_lp(
                &lp,
                &LpOptions {
                    formulation: f,
                    ..Default::default()
                },
            )
            .unwrap();
            assert_eq!(s.status, Status::Optimal);
            assert_relative_eq!(s.objective, 3.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn box_maximum_matches_vertex_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for d in 1..=8 {
            let lo: Vec<f64> = (0..d).map(|_| -rng.random::<f64>() - 0.1).collect();
            let hi: Vec<f64> = (0..d).map(|_| rng.random::<f64>() + 0.1).collect();
            let c: Vec<f64> = (0..d).map(|_| rng.random::<f64>() - 0.5).collect();
            let mut brute = f64::NEG_INFINITY;
            for mask in 0..(1usize << d) {
                let val: f64 = (0..d)
                    .map(|k| c[k] * if mask >> k & 1 == 1 { hi[k] } else { lo[k] })
                    .sum();
                brute = brute.max(val);
            }
            // boxes expressed as rows, not bounds
            let mut a = DMatrix::zeros(2 * d, d);
            let mut b = DVector::zeros(2 * d);
            for k in 0..d {
                a[(2 * k, k)] = 1.0;
                b[2 * k] = hi[k];
                a[(2 * k + 1, k)] = -1.0;
                b[2 * k + 1] = -lo[k];
            }
            let lp = LinearProgram::new(DVector::from_vec(c)).with_ineq(a, b);
            let s = solve_lp(&lp, &LpOptions::default()).unwrap();
            assert!(
                (s.objective - brute).abs() <= 1e-9,
                "d={d}: {} vs {brute}",
                s.objective
            );
        }
    }

    fn random_lp(rng: &mut ChaCha8Rng, rows: usize, n: usize) -> LinearProgram {
        // feasible (x = 0 strictly interior) and bounded (box bounds)
        let a = DMatrix::from_fn(rows, n, |_, _| rng.random::<f64>() - 0.5);
        let b = DVector::from_fn(rows, |_, _| rng.random::<f64>() + 0.1);
        let c = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
        LinearProgram::new(c).with_ineq(a, b).with_bounds(
            DVector::from_element(n, -5.0),
            DVector::from_element(n, 5.0),
        )
    }

    #[test]
    fn strong_duality_on_random_lps() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let rows = rng.random_range(2..12);
            let n = rng.random_range(1..6);
            let lp = random_lp(&mut rng, rows, n);
            let primal = solve_lp(&lp, &LpOptions::default()).unwrap();
            assert_eq!(primal.status, Status::Optimal);
            // explicit dual: min bᵀy + 5·1ᵀ(s⁺ + s⁻) s.t. Aᵀy + s⁺ − s⁻ = c, y, s ≥ 0
            let q = rows + 2 * n;
            let mut aeq = DMatrix::zeros(n, q);
            aeq.view_mut((0, 0), (n, rows))
                .copy_from(&lp.a_ineq.transpose());
            let mut obj = DVector::zeros(q);
            obj.rows_mut(0, rows).copy_from(&(-&lp.b_ineq));
            for j in 0..n {
                aeq[(j, rows + j)] = 1.0;
                aeq[(j, rows + n + j)] = -1.0;
                obj[rows + j] = -5.0;
                obj[rows + n + j] = -5.0;
            }
            let dual = LinearProgram::new(obj)
                .with_eq(aeq, lp.c.clone())
                .with_bounds(DVector::zeros(q), DVector::from_element(q, f64::INFINITY));
            let d = solve_lp(&dual, &LpOptions::default()).unwrap();
            assert_eq!(d.status, Status::Optimal);
            assert!(
                (primal.objective + d.objective).abs() <= 1e-6,
                "{} vs {}",
                primal.objective,
                -d.objective
            );
        }
    }

    #[test]
    fn primal_and_dual_formulations_agree_on_tall_lps() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let lp = random_lp(&mut rng, 120, 15);
            let a = solve_lp(
                &lp,
                &LpOptions {
                    formulation: Formulation::Primal,
                    ..Default::default()
                },
            )
            .unwrap();
            let b = solve_lp(
                &lp,
                &LpOptions {
                    formulation: Formulation::Dual,
                    ..Default::default()
                },
            )
            .unwrap();
            assert!((a.objective - b.objective).abs() <= 1e-8 * (1.0 + a.objective.abs()));
            let x = b.x.unwrap();
            let viol = (&lp.a_ineq * &x - &lp.b_ineq).max();
            assert!(viol <= 1e-9, "violation {viol}");
        }
    }
}
