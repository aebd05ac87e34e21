//! Projection-based model reduction: Petrov–Galerkin projection, balanced
//! truncation (square-root method), stable/unstable splitting and the
//! relative H2 model error.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Result, RompcError};
use crate::linalg;
use crate::model::{StateSpaceModel, TimeDomain};

/// Largest accepted condition number of WᵀV.
pub const MAX_BASIS_CONDITION: f64 = 1e12;
/// Default distance from the stability boundary below which a mode counts as marginal.
pub const MARGINAL_TOL: f64 = 1e-8;

/// Trial basis V and test basis W (both n^f × n) defining the oblique
/// projector P = V(WᵀV)⁻¹Wᵀ.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionBasis {
    pub v: DMatrix<f64>,
    pub w: DMatrix<f64>,
}

impl ProjectionBasis {
    pub fn new(v: DMatrix<f64>, w: DMatrix<f64>) -> Result<Self> {
        if v.shape() != w.shape() {
            return Err(RompcError::dims(format!(
                "V is {:?} but W is {:?}",
                v.shape(),
                w.shape()
            )));
        }
        if v.ncols() > v.nrows() || v.ncols() == 0 {
            return Err(RompcError::dims(format!(
                "basis must have 1..={} columns, got {}",
                v.nrows(),
                v.ncols()
            )));
        }
        let basis = ProjectionBasis { v, w };
        let cond = basis.condition();
        if !(cond <= MAX_BASIS_CONDITION) {
            return Err(RompcError::Singular(format!(
                "WᵀV has condition number {cond:e} (limit {MAX_BASIS_CONDITION:e})"
            )));
        }
        Ok(basis)
    }

    /// Galerkin projection W = V.
    pub fn galerkin(v: DMatrix<f64>) -> Result<Self> {
        ProjectionBasis::new(v.clone(), v)
    }

    pub fn identity(n: usize) -> Self {
        ProjectionBasis {
            v: DMatrix::identity(n, n),
            w: DMatrix::identity(n, n),
        }
    }

    pub fn full_dim(&self) -> usize {
        self.v.nrows()
    }

    pub fn rom_dim(&self) -> usize {
        self.v.ncols()
    }

    pub fn wtv(&self) -> DMatrix<f64> {
        self.w.transpose() * &self.v
    }

    /// Spectral condition number of WᵀV.
    pub fn condition(&self) -> f64 {
        let sv = self.wtv().singular_values();
        let mn = sv.min();
        if mn == 0.0 {
            f64::INFINITY
        } else {
            sv.max() / mn
        }
    }

    /// (WᵀV)⁻¹Wᵀ, the left factor of the projector.
    pub fn left(&self) -> Result<DMatrix<f64>> {
        linalg::solve(&self.wtv(), &self.w.transpose(), "WᵀV")
    }

    /// Dense projector P = V(WᵀV)⁻¹Wᵀ.
    pub fn projector(&self) -> Result<DMatrix<f64>> {
        Ok(&self.v * self.left()?)
    }
}

/// ROM (WᵀV)⁻¹Wᵀ(A^f, B^f, B^f_w)V-style projection, plus Q = VᵀQ^fV when a
/// full-order state weight is given.
pub fn petrov_galerkin_project(
    fom: &StateSpaceModel,
    basis: &ProjectionBasis,
    qf: Option<&DMatrix<f64>>,
) -> Result<(StateSpaceModel, Option<DMatrix<f64>>)> {
    let nf = fom.n();
    if basis.full_dim() != nf {
        return Err(RompcError::dims(format!(
            "basis has {} rows but the model has {nf} states",
            basis.full_dim()
        )));
    }
    let left = basis.left()?;
    let a = &left * (&fom.a * &basis.v);
    let b = &left * &fom.b;
    let bw = &left * &fom.bw;
    let c = &fom.c * &basis.v;
    let h = &fom.h * &basis.v;
    let rom = StateSpaceModel::new(a, b, Some(bw), c, h, fom.time_domain)?;
    let q = match qf {
        Some(qf) => {
            if qf.shape() != (nf, nf) {
                return Err(RompcError::dims(format!(
                    "Q^f is {:?}, expected {nf}x{nf}",
                    qf.shape()
                )));
            }
            Some(linalg::symmetrize(&(basis.v.transpose() * qf * &basis.v)))
        }
        None => None,
    };
    Ok((rom, q))
}

/// Controllability Gramian of (A, B) in the model's time domain.
pub fn controllability_gramian(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    domain: TimeDomain,
) -> Result<DMatrix<f64>> {
    let bbt = b * b.transpose();
    match domain {
        TimeDomain::Discrete { .. } => linalg::solve_dlyap(&a.transpose(), &bbt),
        TimeDomain::Continuous => linalg::solve_clyap(&a.transpose(), &bbt),
    }
}

/// Observability Gramian of (A, C).
pub fn observability_gramian(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    domain: TimeDomain,
) -> Result<DMatrix<f64>> {
    let ctc = c.transpose() * c;
    match domain {
        TimeDomain::Discrete { .. } => linalg::solve_dlyap(a, &ctc),
        TimeDomain::Continuous => linalg::solve_clyap(a, &ctc),
    }
}

fn check_stable(a: &DMatrix<f64>, domain: TimeDomain) -> Result<()> {
    let eig = linalg::eigenvalues(a);
    let ok = match domain {
        TimeDomain::Discrete { .. } => eig.iter().all(|l| l.norm() < 1.0),
        TimeDomain::Continuous => eig.iter().all(|l| l.re < 0.0),
    };
    if ok {
        Ok(())
    } else {
        Err(RompcError::Unstable(
            "balanced truncation needs a stable model; split off the unstable modes first".into(),
        ))
    }
}

/// Balanced truncation of the input/output map (A, B_in, C_out).
///
/// Square-root method: Gramian factors Z_c, Z_o, SVD Z_oᵀZ_c = UΣYᵀ,
/// V = Z_c Y₁Σ₁^{-1/2}, W = Z_o U₁Σ₁^{-1/2}. Returns the basis and all
/// Hankel singular values (descending).
pub fn balanced_truncation_io(
    a: &DMatrix<f64>,
    b_in: &DMatrix<f64>,
    c_out: &DMatrix<f64>,
    domain: TimeDomain,
    n: usize,
) -> Result<(ProjectionBasis, Vec<f64>)> {
    let nf = a.nrows();
    if n == 0 || n > nf {
        return Err(RompcError::invalid(format!(
            "reduced dimension must be in 1..={nf}, got {n}"
        )));
    }
    check_stable(a, domain)?;
    let p = controllability_gramian(a, b_in, domain)?;
    let q = observability_gramian(a, c_out, domain)?;
    let zc = linalg::psd_factor(&p);
    let zo = linalg::psd_factor(&q);
    let svd = (zo.transpose() * &zc).svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let sigma = svd.singular_values;
    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]));
    let hsv: Vec<f64> = order.iter().map(|&i| sigma[i]).collect();
    let floor = 1e-14 * hsv[0].max(1e-300);
    if hsv[n - 1] <= floor {
        return Err(RompcError::invalid(format!(
            "requested {n} states but the Gramian product has numerical rank {}",
            hsv.iter().filter(|&&s| s > floor).count()
        )));
    }
    let mut v = DMatrix::zeros(nf, n);
    let mut w = DMatrix::zeros(nf, n);
    for (k, &i) in order.iter().take(n).enumerate() {
        let s = sigma[i].sqrt();
        v.set_column(k, &(&zc * vt.row(i).transpose() / s));
        w.set_column(k, &(&zo * u.column(i) / s));
    }
    Ok((ProjectionBasis::new(v, w)?, hsv))
}

/// Balanced truncation of a plant for predictive control: inputs [B B_w],
/// outputs [C; H].
pub fn balanced_truncation(
    model: &StateSpaceModel,
    n: usize,
) -> Result<(ProjectionBasis, Vec<f64>)> {
    let (b_in, c_out) = control_channels(model);
    balanced_truncation_io(&model.a, &b_in, &c_out, model.time_domain, n)
}

fn control_channels(model: &StateSpaceModel) -> (DMatrix<f64>, DMatrix<f64>) {
    let nf = model.n();
    let mut b_in = DMatrix::zeros(nf, model.m() + model.mw());
    b_in.columns_mut(0, model.m()).copy_from(&model.b);
    b_in.columns_mut(model.m(), model.mw()).copy_from(&model.bw);
    let mut c_out = DMatrix::zeros(model.p() + model.o(), nf);
    c_out.rows_mut(0, model.p()).copy_from(&model.c);
    c_out.rows_mut(model.p(), model.o()).copy_from(&model.h);
    (b_in, c_out)
}

/// Stable/unstable invariant-subspace decomposition.
#[derive(Debug, Clone)]
pub struct ModalSplit {
    /// Stable invariant subspace (None when empty).
    pub stable: Option<ProjectionBasis>,
    /// Unstable invariant subspace (None when empty).
    pub unstable: Option<ProjectionBasis>,
    pub stable_spectrum: Vec<Complex64>,
    pub unstable_spectrum: Vec<Complex64>,
}

/// Split the state space into the stable and unstable invariant subspaces of A.
///
/// The spectral projector comes from the matrix sign function of the Cayley
/// transform (A − I)⁻¹(A + I) in discrete time, or of A itself in continuous
/// time. Modes within `marginal_tol` of the stability boundary are rejected.
pub fn stable_unstable_split(model: &StateSpaceModel, marginal_tol: f64) -> Result<ModalSplit> {
    let nf = model.n();
    let a = &model.a;
    let eig = linalg::eigenvalues(a);
    let margin = |l: &Complex64| match model.time_domain {
        TimeDomain::Discrete { .. } => l.norm() - 1.0,
        TimeDomain::Continuous => l.re,
    };
    if let Some(l) = eig.iter().find(|l| margin(l).abs() <= marginal_tol) {
        return Err(RompcError::Assumption(format!(
            "marginally stable eigenvalue {:.12} + {:.12}i lies within {marginal_tol:e} of the stability boundary",
            l.re, l.im
        )));
    }
    let (stable_spectrum, unstable_spectrum): (Vec<Complex64>, Vec<Complex64>) =
        eig.iter().partition(|l| margin(l) < 0.0);
    let ns = stable_spectrum.len();
    let id = DMatrix::<f64>::identity(nf, nf);
    let (stable, unstable) = if ns == nf {
        (Some(ProjectionBasis::identity(nf)), None)
    } else if ns == 0 {
        (None, Some(ProjectionBasis::identity(nf)))
    } else {
        let m = match model.time_domain {
            TimeDomain::Discrete { .. } => linalg::solve(&(a - &id), &(a + &id), "A − I")?,
            TimeDomain::Continuous => a.clone(),
        };
        let sign = linalg::matrix_sign(&m)?;
        let ps = (&id - &sign) * 0.5;
        let pu = (&id + &sign) * 0.5;
        let vs = range_basis(&ps, ns);
        let ws = range_basis(&ps.transpose(), ns);
        let vu = range_basis(&pu, nf - ns);
        let wu = range_basis(&pu.transpose(), nf - ns);
        (
            Some(ProjectionBasis::new(vs, ws)?),
            Some(ProjectionBasis::new(vu, wu)?),
        )
    };
    Ok(ModalSplit {
        stable,
        unstable,
        stable_spectrum,
        unstable_spectrum,
    })
}

/// Orthonormal basis of the dominant rank-r column space.
fn range_basis(m: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
    let svd = m.clone().svd(true, false);
    let u = svd.u.unwrap();
    let sigma = svd.singular_values;
    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]));
    DMatrix::from_fn(m.nrows(), r, |i, k| u[(i, order[k])])
}

/// Reduce a possibly unstable plant: the unstable modes are kept whole and
/// only the stable part is balanced and truncated to `n_stable` states.
/// Returns the combined basis (with WᵀV = I) and the stable part's Hankel
/// singular values.
pub fn split_and_truncate(
    model: &StateSpaceModel,
    n_stable: usize,
    marginal_tol: f64,
) -> Result<(ProjectionBasis, Vec<f64>)> {
    let split = stable_unstable_split(model, marginal_tol)?;
    let nf = model.n();
    let mut vcols: Vec<DVector<f64>> = Vec::new();
    let mut wcols: Vec<DVector<f64>> = Vec::new();
    let mut hsv = Vec::new();
    if let Some(bs) = &split.stable {
        if n_stable > 0 {
            let (sub, _) = petrov_galerkin_project(model, bs, None)?;
            let (br, s) = balanced_truncation(&sub, n_stable)?;
            hsv = s;
            let v1 = &bs.v * &br.v;
            let w1 = &bs.w * linalg::solve(&bs.wtv().transpose(), &br.w, "W_sᵀV_s")?;
            vcols.extend(v1.column_iter().map(|c| c.into_owned()));
            wcols.extend(w1.column_iter().map(|c| c.into_owned()));
        }
    }
    if let Some(bu) = &split.unstable {
        let w2 = &bu.w
            * linalg::solve(
                &bu.wtv().transpose(),
                &DMatrix::identity(bu.rom_dim(), bu.rom_dim()),
                "W_uᵀV_u",
            )?;
        vcols.extend(bu.v.column_iter().map(|c| c.into_owned()));
        wcols.extend(w2.column_iter().map(|c| c.into_owned()));
    }
    if vcols.is_empty() {
        return Err(RompcError::invalid("reduced model would have no states"));
    }
    let v = DMatrix::from_columns(&vcols);
    let w = DMatrix::from_columns(&wcols);
    debug_assert_eq!(v.nrows(), nf);
    Ok((ProjectionBasis::new(v, w)?, hsv))
}

/// ‖Σ − Σ_r‖_H2 / ‖Σ‖_H2 for the input-to-performance maps (u → z).
pub fn relative_h2_error(fom: &StateSpaceModel, rom: &StateSpaceModel) -> Result<f64> {
    if fom.m() != rom.m() || fom.o() != rom.o() {
        return Err(RompcError::dims(
            "full and reduced models have different input/performance dimensions",
        ));
    }
    let (nf, n) = (fom.n(), rom.n());
    let mut a = DMatrix::zeros(nf + n, nf + n);
    a.view_mut((0, 0), (nf, nf)).copy_from(&fom.a);
    a.view_mut((nf, nf), (n, n)).copy_from(&rom.a);
    let mut b = DMatrix::zeros(nf + n, fom.m());
    b.rows_mut(0, nf).copy_from(&fom.b);
    b.rows_mut(nf, n).copy_from(&rom.b);
    let mut c = DMatrix::zeros(fom.o(), nf + n);
    c.columns_mut(0, nf).copy_from(&fom.h);
    c.columns_mut(nf, n).copy_from(&(-&rom.h));
    let num = linalg::h2_norm(&a, &b, &c, fom.time_domain)?;
    let den = linalg::h2_norm(&fom.a, &fom.b, &fom.h, fom.time_domain)?;
    if den == 0.0 {
        return Err(RompcError::invalid(
            "full-order input-to-performance map has zero H2 norm",
        ));
    }
    Ok(num / den)
}
