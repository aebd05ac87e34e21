//! Closed-loop error system assembly and reduced-order Riccati gain synthesis.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RompcError};
use crate::linalg;
use crate::model::StateSpaceModel;
use crate::reduction::ProjectionBasis;

/// Default regularization added to the process-noise weight.
pub const DEFAULT_GAMMA_REG: f64 = 1e-3;

/// Error dynamics ε⁺ = A_ε ε + B_ε r + G_ε ω with ε = (x^f − V x̄, x̂ − x̄),
/// r = (x̄, ū), ω = (w, v), together with the plant/estimator input matrix
/// B_ξ and the constraint output maps E_z, E_u.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSystem {
    pub a_eps: DMatrix<f64>,
    pub b_eps: DMatrix<f64>,
    pub g_eps: DMatrix<f64>,
    pub b_xi: DMatrix<f64>,
    pub e_z: DMatrix<f64>,
    pub e_u: DMatrix<f64>,
    pub nf: usize,
    pub n: usize,
}

impl ErrorSystem {
    pub fn dim(&self) -> usize {
        self.nf + self.n
    }

    /// Stacked outputs E = [E_z; E_u].
    pub fn e_stacked(&self) -> DMatrix<f64> {
        let (nz, nu) = (self.e_z.nrows(), self.e_u.nrows());
        let mut e = DMatrix::zeros(nz + nu, self.dim());
        e.rows_mut(0, nz).copy_from(&self.e_z);
        e.rows_mut(nz, nu).copy_from(&self.e_u);
        e
    }

    pub fn spectral_radius(&self) -> Result<f64> {
        linalg::spectral_radius(&self.a_eps)
    }
}

/// Assemble the error system for gains K (m×n) and L (n×p). `hz` and `hu`
/// are the constraint normals of Z and U.
pub fn assemble_error_system(
    fom: &StateSpaceModel,
    rom: &StateSpaceModel,
    basis: &ProjectionBasis,
    k: &DMatrix<f64>,
    l: &DMatrix<f64>,
    hz: &DMatrix<f64>,
    hu: &DMatrix<f64>,
) -> Result<ErrorSystem> {
    let (nf, n) = (fom.n(), rom.n());
    let (m, p, o, mw) = (fom.m(), fom.p(), fom.o(), fom.mw());
    if basis.full_dim() != nf || basis.rom_dim() != n {
        return Err(RompcError::dims(format!(
            "basis is {}x{} but models have {nf} and {n} states",
            basis.full_dim(),
            basis.rom_dim()
        )));
    }
    if rom.m() != m || rom.p() != p || rom.o() != o {
        return Err(RompcError::dims(
            "full and reduced models have different input/output dimensions",
        ));
    }
    if k.shape() != (m, n) {
        return Err(RompcError::dims(format!(
            "K is {:?}, expected {m}x{n}",
            k.shape()
        )));
    }
    if l.shape() != (n, p) {
        return Err(RompcError::dims(format!(
            "L is {:?}, expected {n}x{p}",
            l.shape()
        )));
    }
    if hz.ncols() != o || hu.ncols() != m {
        return Err(RompcError::dims(
            "constraint normals do not match the performance/input dimensions",
        ));
    }
    let ne = nf + n;
    let bk = &rom.b * k;

    let mut a_eps = DMatrix::zeros(ne, ne);
    a_eps.view_mut((0, 0), (nf, nf)).copy_from(&fom.a);
    a_eps.view_mut((0, nf), (nf, n)).copy_from(&(&fom.b * k));
    a_eps.view_mut((nf, 0), (n, nf)).copy_from(&(l * &fom.c));
    a_eps
        .view_mut((nf, nf), (n, n))
        .copy_from(&(&rom.a + &bk - l * &rom.c));

    // P⊥A^fV = A^fV − V(WᵀV)⁻¹WᵀA^fV, P⊥B^f likewise
    let left = basis.left()?;
    let afv = &fom.a * &basis.v;
    let pa = &afv - &basis.v * (&left * &afv);
    let pb = &fom.b - &basis.v * (&left * &fom.b);
    let mut b_eps = DMatrix::zeros(ne, n + m);
    b_eps.view_mut((0, 0), (nf, n)).copy_from(&pa);
    b_eps.view_mut((0, n), (nf, m)).copy_from(&pb);

    let mut g_eps = DMatrix::zeros(ne, mw + p);
    g_eps.view_mut((0, 0), (nf, mw)).copy_from(&fom.bw);
    g_eps.view_mut((nf, mw), (n, p)).copy_from(l);

    let mut b_xi = DMatrix::zeros(ne, n + m);
    b_xi.view_mut((0, 0), (nf, n)).copy_from(&(-(&fom.b * k)));
    b_xi.view_mut((0, n), (nf, m)).copy_from(&fom.b);
    b_xi.view_mut((nf, 0), (n, n)).copy_from(&(-&bk));
    b_xi.view_mut((nf, n), (n, m)).copy_from(&rom.b);

    let mut e_z = DMatrix::zeros(hz.nrows(), ne);
    e_z.columns_mut(0, nf).copy_from(&(hz * &fom.h));
    let mut e_u = DMatrix::zeros(hu.nrows(), ne);
    e_u.columns_mut(nf, n).copy_from(&(hu * k));

    Ok(ErrorSystem {
        a_eps,
        b_eps,
        g_eps,
        b_xi,
        e_z,
        e_u,
        nf,
        n,
    })
}

/// Performance weights: z̃ = (W_z δ_z, W_u δ_u).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisWeights {
    pub wz: DMatrix<f64>,
    pub wu: DMatrix<f64>,
    pub gamma_reg: f64,
}

impl SynthesisWeights {
    pub fn identity(o: usize, m: usize) -> Self {
        SynthesisWeights {
            wz: DMatrix::identity(o, o),
            wu: DMatrix::identity(m, m),
            gamma_reg: DEFAULT_GAMMA_REG,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainPair {
    pub k: DMatrix<f64>,
    pub l: DMatrix<f64>,
    /// Spectral radius of A_ε; the spectral abscissa for continuous-time models.
    pub rho_a_eps: f64,
    /// H2 norm of the reduced closed-loop error system the gains optimize.
    pub h2_reduced: Option<f64>,
}

/// Controller and estimator gains from the two reduced-order Riccati
/// equations, without any full-order check.
///
/// K = −(BᵀXB + R)⁻¹BᵀXA with X from DARE(A, B, HᵀW_zᵀW_zH, W_uᵀW_u);
/// L = AYCᵀ(CYCᵀ + I)⁻ᵀ with Y from DARE(Aᵀ, Cᵀ, B_wB_wᵀ + γI, I).
/// Continuous-time models use the CARE counterparts K = −R⁻¹BᵀX, L = YCᵀ.
pub fn reduced_riccati_gains(
    rom: &StateSpaceModel,
    weights: &SynthesisWeights,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (n, m, p, o) = (rom.n(), rom.m(), rom.p(), rom.o());
    if weights.wz.ncols() != o || weights.wu.ncols() != m {
        return Err(RompcError::dims(
            "weights do not match the performance/input dimensions",
        ));
    }
    if !(weights.gamma_reg > 0.0) {
        return Err(RompcError::invalid(format!(
            "regularization must be positive, got {}",
            weights.gamma_reg
        )));
    }
    let r = linalg::symmetrize(&(weights.wu.transpose() * &weights.wu));
    if !linalg::is_positive_definite(&r) {
        return Err(RompcError::NotPositiveDefinite(
            "W_uᵀW_u must have full rank".into(),
        ));
    }
    let wzh = &weights.wz * &rom.h;
    let qz = linalg::symmetrize(&(wzh.transpose() * &wzh));
    let qw = linalg::symmetrize(
        &(&rom.bw * rom.bw.transpose() + DMatrix::identity(n, n) * weights.gamma_reg),
    );
    let assumption = |e: RompcError| match e {
        RompcError::Unstabilizable(msg) => RompcError::Assumption(format!(
            "reduced model must be controllable from u and observable from y and z: {msg}"
        )),
        other => other,
    };
    if !rom.is_discrete() {
        let x = linalg::solve_care(&rom.a, &rom.b, &qz, &r).map_err(assumption)?;
        let y = linalg::solve_care(
            &rom.a.transpose(),
            &rom.c.transpose(),
            &qw,
            &DMatrix::identity(p, p),
        )
        .map_err(assumption)?;
        // u = Kx with K = −R⁻¹BᵀX, L = YCᵀ
        let k = -linalg::care_gain(&rom.b, &r, &x)?;
        let l = &y * rom.c.transpose();
        return Ok((k, l));
    }
    let x = linalg::solve_dare(&rom.a, &rom.b, &qz, &r).map_err(assumption)?;
    let y = linalg::solve_dare(
        &rom.a.transpose(),
        &rom.c.transpose(),
        &qw,
        &DMatrix::identity(p, p),
    )
    .map_err(assumption)?;
    let k = -linalg::solve(
        &(rom.b.transpose() * &x * &rom.b + &r),
        &(rom.b.transpose() * &x * &rom.a),
        "BᵀXB + R",
    )?;
    let s = &rom.c * &y * rom.c.transpose() + DMatrix::identity(p, p);
    // L = AYCᵀ S⁻ᵀ  ⇔  Lᵀ = S⁻¹ C Y Aᵀ
    let lt = linalg::solve(&s, &(&rom.c * &y * rom.a.transpose()), "CYCᵀ + I")?;
    Ok((k, lt.transpose()))
}

/// Reduced-order Riccati synthesis with full-order stability verification.
pub fn riccati_gains(
    fom: &StateSpaceModel,
    rom: &StateSpaceModel,
    basis: &ProjectionBasis,
    weights: &SynthesisWeights,
) -> Result<GainPair> {
    let (k, l) = reduced_riccati_gains(rom, weights)?;
    let empty_z = DMatrix::zeros(0, fom.o());
    let empty_u = DMatrix::zeros(0, fom.m());
    let err = assemble_error_system(fom, rom, basis, &k, &l, &empty_z, &empty_u)?;
    if !rom.is_discrete() {
        let abscissa = linalg::eigenvalues(&err.a_eps)
            .iter()
            .map(|l| l.re)
            .fold(f64::NEG_INFINITY, f64::max);
        if !(abscissa < 0.0) {
            return Err(RompcError::SynthesisFailed(format!(
                "reduced-order Riccati method failed to stabilize the continuous error dynamics (spectral abscissa {abscissa:.6})"
            )));
        }
        let h2 = reduced_loop_h2(rom, &k, &l, weights).ok();
        return Ok(GainPair {
            k,
            l,
            rho_a_eps: abscissa,
            h2_reduced: h2,
        });
    }
    let rho = err.spectral_radius()?;
    if !(rho < 1.0) {
        return Err(RompcError::SynthesisFailed(format!(
            "reduced-order Riccati method failed to stabilize the error dynamics (spectral radius {rho:.6}); \
             verify that the reduced model is sufficiently accurate, or consider optimizing the gains \
             against the full-order closed-loop H2 norm"
        )));
    }
    let h2 = reduced_loop_h2(rom, &k, &l, weights).ok();
    Ok(GainPair {
        k,
        l,
        rho_a_eps: rho,
        h2_reduced: h2,
    })
}

/// H2 norm of the reduced LQG loop (e_r, d) driven by (w, v) with outputs
/// (W_z H e_r, W_u K d).
pub fn reduced_loop_h2(
    rom: &StateSpaceModel,
    k: &DMatrix<f64>,
    l: &DMatrix<f64>,
    weights: &SynthesisWeights,
) -> Result<f64> {
    let (n, p, mw) = (rom.n(), rom.p(), rom.mw());
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    a.view_mut((0, 0), (n, n)).copy_from(&rom.a);
    a.view_mut((0, n), (n, n)).copy_from(&(&rom.b * k));
    a.view_mut((n, 0), (n, n)).copy_from(&(l * &rom.c));
    a.view_mut((n, n), (n, n))
        .copy_from(&(&rom.a + &rom.b * k - l * &rom.c));
    let mut b = DMatrix::zeros(2 * n, mw + p);
    b.view_mut((0, 0), (n, mw)).copy_from(&rom.bw);
    b.view_mut((n, mw), (n, p)).copy_from(l);
    let o = weights.wz.nrows();
    let mu = weights.wu.nrows();
    let mut c = DMatrix::zeros(o + mu, 2 * n);
    c.view_mut((0, 0), (o, n))
        .copy_from(&(&weights.wz * &rom.h));
    c.view_mut((o, n), (mu, n)).copy_from(&(&weights.wu * k));
    linalg::h2_norm(&a, &b, &c, rom.time_domain)
}

/// H2 norm of (A_ε, [B_ε G_ε], H_ε) with H_ε = blockdiag(W_z H^f, W_u K).
pub fn closed_loop_h2(
    err: &ErrorSystem,
    fom: &StateSpaceModel,
    k: &DMatrix<f64>,
    wz: &DMatrix<f64>,
    wu: &DMatrix<f64>,
) -> Result<f64> {
    let (nf, n) = (err.nf, err.n);
    if fom.n() != nf || k.ncols() != n {
        return Err(RompcError::dims(
            "error system does not match the model and gain",
        ));
    }
    if !(linalg::dense_spectral_radius(&err.a_eps) < 1.0) {
        return Err(RompcError::Unstable(
            "closed-loop error dynamics are not Schur stable".into(),
        ));
    }
    let ne = nf + n;
    let (nb, ng) = (err.b_eps.ncols(), err.g_eps.ncols());
    let mut b = DMatrix::zeros(ne, nb + ng);
    b.columns_mut(0, nb).copy_from(&err.b_eps);
    b.columns_mut(nb, ng).copy_from(&err.g_eps);
    let (o, mu) = (wz.nrows(), wu.nrows());
    let mut c = DMatrix::zeros(o + mu, ne);
    c.view_mut((0, 0), (o, nf)).copy_from(&(wz * &fom.h));
    c.view_mut((o, nf), (mu, n)).copy_from(&(wu * k));
    linalg::h2_norm(&err.a_eps, &b, &c, fom.time_domain)
}
