//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rompc::benchmarks::{heat_problem, without_disturbances, HeatConfig};
use rompc::bounds::{
    compute_decay_params, compute_xbar, ct_delta2, default_lyapunov_eta, delta2,
    norm_decay_profile, tau_for_threshold, ConstraintSets, DecayMethod, DecayParameters,
};
use rompc::design::{
    synthesize, terminal_constraint, QpSettings, RompcDesign, SynthOptions, SynthesisReport,
};
use rompc::geometry::Polytope;
use rompc::linalg;
use rompc::ocp::{default_qp_options, solve_ocp, OcpSpec, Target};
use rompc::problem::{
    BoundSpec, CostSpec, OcpConfig, ProblemSpec, ReductionMethod, ReductionSpec, TerminalMode,
};
use rompc::reduction::{
    balanced_truncation, balanced_truncation_io, petrov_galerkin_project, ProjectionBasis,
};
use rompc::runtime::{
    compute_setpoint_targets, monte_carlo, simulate_closed_loop, simulate_closed_loop_ct,
    zoh_discretize, CtController, DisturbancePolicy, MonteCarloSummary, SimConfig,
    CONSTRAINT_SLACK,
};
use rompc::synthesis::{assemble_error_system, riccati_gains, ErrorSystem, SynthesisWeights};
use rompc::{StateSpaceModel, TimeDomain};

type Check = Result<(bool, String), String>;

const DT: TimeDomain = TimeDomain::Discrete { dt: 0.1 };

fn jobs() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn uniform(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn scaled_to_radius(a: DMatrix<f64>, rho: f64) -> DMatrix<f64> {
    let r = linalg::dense_spectral_radius(&a);
    a * (rho / r)
}

fn random_discrete(
    rng: &mut ChaCha8Rng,
    n: usize,
    m: usize,
    p: usize,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let rho = rng.random_range(0.3..0.95);
    let a = scaled_to_radius(uniform(rng, n, n), rho);
    (a, uniform(rng, n, m), uniform(rng, p, n))
}

/// Offline design of the 200-state heat benchmark, shared by several criteria.
struct Heat {
    spec: ProblemSpec,
    design: RompcDesign,
    report: SynthesisReport,
    err: ErrorSystem,
    seconds: f64,
}

fn heat() -> Result<Heat, String> {
    let spec = heat_problem(&HeatConfig::default()).map_err(err)?;
    let t = Instant::now();
    let (design, report) = synthesize(
        &spec,
        &SynthOptions {
            jobs: jobs(),
            skip_delta1: false,
        },
    )
    .map_err(err)?;
    let seconds = t.elapsed().as_secs_f64();
    let err = assemble_error_system(
        &spec.fom,
        &design.rom,
        &design.basis,
        &design.k,
        &design.l,
        &spec.sets.z.h,
        &spec.sets.u.h,
    )
    .map_err(err)?;
    Ok(Heat {
        spec,
        design,
        report,
        err,
        seconds,
    })
}

fn c1_synthesis(h: &Heat) -> Check {
    let stages: Vec<String> = h
        .report
        .timings
        .iter()
        .map(|(s, t)| format!("{s} {t:.1}s"))
        .collect();
    Ok((
        h.design.rho_a_eps < 1.0 && h.seconds < 60.0,
        format!(
            "n^f = {}, n = {}, rho(A_eps) = {:.6}, pipeline {:.1} s ({}), tau = {}",
            h.report.nf,
            h.report.n,
            h.design.rho_a_eps,
            h.seconds,
            stages.join(", "),
            h.report.bounds.tau
        ),
    ))
}

fn c2_soundness(h: &Heat) -> Check {
    let k0 = 2 * h.spec.bounds.tau;
    let setpoint = DVector::from_element(1, 0.45);
    let mut total = MonteCarloSummary::default();
    for (policy, seed) in [
        (DisturbancePolicy::Vertex, 0),
        (DisturbancePolicy::Uniform, 100_000),
    ] {
        let cfg = SimConfig {
            steps: k0 + 400,
            k0: Some(k0),
            disturbance: policy,
            seed,
            setpoint: Some(setpoint.clone()),
            ..SimConfig::default()
        };
        let s = monte_carlo(&h.spec, &h.design, &cfg, 250, jobs()).map_err(err)?;
        total.merge(&s);
    }
    let ratio = |tube: &[f64], delta: &DVector<f64>| {
        tube.iter()
            .zip(delta.iter())
            .map(|(t, d)| t / d)
            .fold(0.0, f64::max)
    };
    let within = |tube: &[f64], delta: &DVector<f64>| {
        tube.len() == delta.len()
            && tube
                .iter()
                .zip(delta.iter())
                .all(|(t, d)| *t <= d + CONSTRAINT_SLACK)
    };
    let pass = total.is_clean()
        && within(&total.tube_max_z, &h.design.delta_z)
        && within(&total.tube_max_u, &h.design.delta_u);
    Ok((
        pass,
        format!(
            "{} runs (vertex + uniform, r = 0.45, k0 = {k0}, 400 steps after k0): {} violating, {} failed; max tube/Delta z {:.3}, u {:.3}",
            total.runs,
            total.violating_runs,
            total.failed_runs,
            ratio(&total.tube_max_z, &h.design.delta_z),
            ratio(&total.tube_max_u, &h.design.delta_u)
        ),
    ))
}

/// Every admissible vertex sequence of the Δ⁽²⁾ window, maximized by enumeration.
fn enumerate_delta2(
    err: &ErrorSystem,
    theta: &DVector<f64>,
    rom: &StateSpaceModel,
    xbar: &Polytope,
    sets: &ConstraintSets,
    tau: usize,
) -> Option<f64> {
    let (lo, hi) = xbar.as_box()?;
    let (ulo, uhi) = sets.u.as_box()?;
    let (wlo, whi) = sets.w.as_box()?;
    let (vlo, vhi) = sets.v.as_box()?;
    let n = rom.n();
    let steps = 2 * tau;
    let mut best = f64::NEG_INFINITY;
    for corner in 0..(1u32 << n) {
        let x0 = DVector::from_fn(n, |i, _| if corner >> i & 1 == 1 { hi[i] } else { lo[i] });
        for umask in 0..(1u32 << steps) {
            let mut x = x0.clone();
            let mut feasible = true;
            let mut window = Vec::new();
            for t in 0..steps {
                let u = if umask >> t & 1 == 1 { uhi[0] } else { ulo[0] };
                let z = &rom.h * &x;
                if !xbar.contains(&x, 1e-12).ok()? || !sets.z.contains(&z, 1e-12).ok()? {
                    feasible = false;
                    break;
                }
                if t >= tau {
                    window.push(DVector::from_vec(vec![x.as_slice(), &[u]].concat()));
                }
                x = &rom.a * &x + &rom.b * DVector::from_element(1, u);
            }
            if !feasible {
                continue;
            }
            for wmask in 0..(1u32 << (2 * tau)) {
                let mut eps = DVector::zeros(err.dim());
                for (j, r) in window.iter().enumerate() {
                    let w = if wmask >> (2 * j) & 1 == 1 {
                        whi[0]
                    } else {
                        wlo[0]
                    };
                    let v = if wmask >> (2 * j + 1) & 1 == 1 {
                        vhi[0]
                    } else {
                        vlo[0]
                    };
                    eps = &err.a_eps * &eps
                        + &err.b_eps * r
                        + &err.g_eps * DVector::from_vec(vec![w, v]);
                }
                best = best.max(theta.dot(&eps));
            }
        }
    }
    Some(best)
}

fn c3_brute_force() -> Check {
    // 4-state plant whose leading 2x2 block is diagonal; Galerkin projection
    // onto it gives H = I, so Z = X̄ is invariant and the window polytope is a
    // product of boxes
    let a = DMatrix::from_row_slice(
        4,
        4,
        &[
            0.6, 0.0, 0.1, 0.05, 0.0, 0.3, -0.05, 0.1, 0.2, 0.1, 0.4, 0.1, -0.1, 0.2, 0.0, 0.5,
        ],
    );
    let b = DMatrix::from_column_slice(4, 1, &[0.5, 0.8, 0.3, -0.2]);
    let bw = DMatrix::from_column_slice(4, 1, &[0.2, -0.1, 0.3, 0.1]);
    let c = DMatrix::from_row_slice(1, 4, &[1.0, 0.5, 0.2, 0.1]);
    let hf = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    let fom = StateSpaceModel::new(a, b, Some(bw), c, hf, DT).map_err(err)?;
    let basis = ProjectionBasis::galerkin(DMatrix::from_row_slice(
        4,
        2,
        &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
    ))
    .map_err(err)?;
    let (rom, _) = petrov_galerkin_project(&fom, &basis, None).map_err(err)?;
    let gains =
        riccati_gains(&fom, &rom, &basis, &SynthesisWeights::identity(2, 1)).map_err(err)?;
    let sets = ConstraintSets {
        z: Polytope::symmetric_box(&[1.0, 1.0]).map_err(err)?,
        u: Polytope::symmetric_box(&[0.5]).map_err(err)?,
        w: Polytope::symmetric_box(&[0.3]).map_err(err)?,
        v: Polytope::symmetric_box(&[0.1]).map_err(err)?,
    };
    let es = assemble_error_system(&fom, &rom, &basis, &gains.k, &gains.l, &sets.z.h, &sets.u.h)
        .map_err(err)?;
    let tau = 3;
    let xbar = compute_xbar(&rom, &sets.z, &sets.u, tau).map_err(err)?;
    let e = es.e_stacked();
    let mut worst: f64 = 0.0;
    for i in 0..e.nrows() {
        let theta = e.row(i).transpose();
        let lp = delta2(&es, &theta, &rom, &xbar, &sets, tau).map_err(err)?;
        let brute = enumerate_delta2(&es, &theta, &rom, &xbar, &sets, tau)
            .ok_or("enumeration needs box sets")?;
        worst = worst.max((lp - brute).abs());
    }
    Ok((
        worst <= 1e-6,
        format!(
            "n^f = 4, n = 2, tau = 3, {} rows: max |LP - enumeration| = {worst:.2e}",
            e.nrows()
        ),
    ))
}

fn c4_convergence(h: &Heat) -> Check {
    let quiet = without_disturbances(&h.spec).map_err(err)?;
    let t_sel = h
        .design
        .tracking
        .clone()
        .ok_or("benchmark has no tracking selector")?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    let mut latest = 0;
    let mut setpoints = Vec::new();
    let mut tried = 0;
    while setpoints.len() < 10 && tried < 200 {
        tried += 1;
        let r = DVector::from_element(1, rng.random_range(-0.5..0.5));
        if compute_setpoint_targets(&quiet.fom, &h.design, &t_sel, &r).is_err() {
            continue;
        }
        let cfg = SimConfig {
            steps: 400,
            k0: Some(0),
            setpoint: Some(r.clone()),
            ..SimConfig::default()
        };
        let log = simulate_closed_loop(&quiet, &h.design, &cfg).map_err(err)?;
        let errs: Vec<f64> = log
            .records
            .iter()
            .map(|rec| (&t_sel * DVector::from_column_slice(&rec.z) - &r).norm())
            .collect();
        // first step after which the error stays below 1e-6
        let settle = errs.iter().rposition(|e| *e >= 1e-6).map_or(0, |i| i + 1);
        latest = latest.max(settle);
        worst = worst.max(*errs.last().unwrap());
        setpoints.push(r[0]);
    }
    let shown: Vec<String> = setpoints.iter().map(|r| format!("{r:.3}")).collect();
    Ok((
        setpoints.len() == 10 && worst < 1e-6 && latest <= 400,
        format!(
            "{} feasible setpoints [{}]: final |Tz - r| max {worst:.2e}, settled below 1e-6 by step {latest}",
            setpoints.len(),
            shown.join(", ")
        ),
    ))
}

/// max_i ‖A^i‖_G / (Mγ^i) − 1 over i ≤ 50.
fn certificate_excess(a: &DMatrix<f64>, d: &DecayParameters) -> Result<f64, String> {
    let l = linalg::cholesky(&d.g, "G").map_err(err)?;
    let mut lt_pow = l.transpose();
    let mut worst = f64::NEG_INFINITY;
    for i in 0..=50 {
        // ‖A^i‖_G = ‖Lᵀ A^i L⁻ᵀ‖₂ = ‖L⁻¹ (Lᵀ A^i)ᵀ‖₂
        let x = l
            .solve_lower_triangular(&lt_pow.transpose())
            .ok_or("singular Cholesky factor")?;
        let norm = linalg::spectral_norm(&x);
        worst = worst.max(norm / (d.m * d.gamma.powi(i)) - 1.0);
        lt_pow = &lt_pow * a;
    }
    Ok(worst)
}

fn c5_certificates(h: &Heat) -> Check {
    let mut mats = vec![("heat".to_string(), h.err.a_eps.clone())];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for k in 0..20 {
        let n = rng.random_range(2..=30);
        let rho = rng.random_range(0.5..0.99);
        mats.push((
            format!("random {k}"),
            scaled_to_radius(uniform(&mut rng, n, n), rho),
        ));
    }
    let (mut count, mut declined) = (0, 0);
    let mut worst = f64::NEG_INFINITY;
    for (name, a) in &mats {
        let rho = linalg::dense_spectral_radius(a);
        for method in [
            DecayMethod::Lyapunov {
                eta: default_lyapunov_eta(rho),
            },
            DecayMethod::Eigen,
        ] {
            let d = match compute_decay_params(a, method) {
                Ok(d) => d,
                // the eigen route refuses defective matrices instead of producing a certificate
                Err(rompc::RompcError::Assumption(_)) if method == DecayMethod::Eigen => {
                    declined += 1;
                    continue;
                }
                Err(e) => return Err(format!("{name}: {e}")),
            };
            worst = worst.max(certificate_excess(a, &d)?);
            count += 1;
        }
    }
    Ok((
        worst <= 1e-8 && count > mats.len(),
        format!(
            "{count} certificates (Lyapunov and eigen routes, heat A_eps and 20 random; {declined} eigen route declined as defective): max ||A^i||_G/(M gamma^i) - 1 = {worst:.2e} for i <= 50"
        ),
    ))
}

fn frob(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

fn freq_response(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    z: Complex64,
) -> DMatrix<Complex64> {
    let n = a.nrows();
    let zi_a = DMatrix::<Complex64>::from_fn(
        n,
        n,
        |i, j| if i == j { z } else { Complex64::new(0.0, 0.0) } - Complex64::new(a[(i, j)], 0.0),
    );
    let bc = b.map(|v| Complex64::new(v, 0.0));
    let x = zi_a.lu().solve(&bc).expect("z outside the spectrum");
    c.map(|v| Complex64::new(v, 0.0)) * x
}

fn c6_kernels() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut dare, mut care, mut dlyap): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..200 {
        let n = rng.random_range(1..=50);
        let m = rng.random_range(1..=3);
        let a = uniform(&mut rng, n, n) * (1.2 / (n as f64).sqrt());
        let b = uniform(&mut rng, n, m);
        let q = DMatrix::identity(n, n);
        let r = DMatrix::identity(m, m);
        let x = linalg::solve_dare(&a, &b, &q, &r).map_err(err)?;
        dare = dare.max(frob(&linalg::dare_residual(&a, &b, &q, &r, &x)) / (1.0 + frob(&x)));
        // shifted so that only a few modes are unstable in continuous time
        let ac = &a - DMatrix::identity(n, n) * 0.5;
        let x = linalg::solve_care(&ac, &b, &q, &r).map_err(err)?;
        care = care.max(frob(&linalg::care_residual(&ac, &b, &q, &r, &x)) / (1.0 + frob(&x)));
        let s = scaled_to_radius(uniform(&mut rng, n, n), rng.random_range(0.1..0.95));
        let f = uniform(&mut rng, n, n);
        let qs = &f * f.transpose() + DMatrix::identity(n, n);
        let x = linalg::solve_dlyap(&s, &qs).map_err(err)?;
        dlyap = dlyap.max(frob(&(s.transpose() * &x * &s - &x + &qs)) / (1.0 + frob(&x)));
    }

    // balanced truncation error bound on a 10³-point frequency grid
    let mut bt_excess = f64::NEG_INFINITY;
    for _ in 0..50 {
        let nf = rng.random_range(4..=16);
        let (m, p) = (rng.random_range(1..=2), rng.random_range(1..=2));
        let (a, b, c) = random_discrete(&mut rng, nf, m, p);
        let n = rng.random_range(1..nf);
        let (basis, hsv) = balanced_truncation_io(&a, &b, &c, DT, n).map_err(err)?;
        let wtv_inv = linalg::inverse(&(basis.w.transpose() * &basis.v), "WᵀV").map_err(err)?;
        let ar = &wtv_inv * basis.w.transpose() * &a * &basis.v;
        let br = &wtv_inv * basis.w.transpose() * &b;
        let cr = &c * &basis.v;
        let bound = 2.0 * hsv[n..].iter().sum::<f64>();
        let mut peak: f64 = 0.0;
        for k in 0..1000 {
            let z = Complex64::from_polar(1.0, std::f64::consts::PI * k as f64 / 999.0);
            let diff = freq_response(&a, &b, &c, z) - freq_response(&ar, &br, &cr, z);
            peak = peak.max(linalg::spectral_norm_complex(&diff));
        }
        bt_excess = bt_excess.max(peak - bound);
    }

    // H2 norm against the impulse-response energy
    let mut h2_rel: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(1..=20);
        let (a, b, c) = random_discrete(&mut rng, n, 2, 2);
        let h2 = linalg::h2_norm(&a, &b, &c, DT).map_err(err)?;
        let mut energy = 0.0;
        let mut ak_b = b.clone();
        for _ in 0..20_000 {
            let term = (&c * &ak_b).norm_squared();
            energy += term;
            if term <= 1e-32 * energy {
                break;
            }
            ak_b = &a * ak_b;
        }
        h2_rel = h2_rel.max((h2 - energy.sqrt()).abs() / energy.sqrt().max(1e-300));
    }
    let pass = dare <= 1e-9 && care <= 1e-9 && dlyap <= 1e-9 && bt_excess <= 1e-6 && h2_rel <= 1e-6;
    Ok((
        pass,
        format!(
            "residual/(1+||X||): DARE {dare:.1e}, CARE {care:.1e}, dlyap {dlyap:.1e} (200 each, n <= 50); BT max(peak - 2 sum sigma) {bt_excess:.1e} (50 systems); H2 rel. diff {h2_rel:.1e}"
        ),
    ))
}

/// Largest distance from an eigenvalue of one list to its matched partner in the other.
fn spectrum_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    let mut used = vec![false; b.len()];
    let mut worst: f64 = 0.0;
    for x in a {
        let (j, d) = b
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .map(|(j, y)| (j, (x - y).norm()))
            .min_by(|p, q| p.1.total_cmp(&q.1))
            .unwrap_or((0, f64::INFINITY));
        used[j] = true;
        worst = worst.max(d);
    }
    worst
}

fn c7_separation() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    let mut nonzero_b = 0;
    for _ in 0..20 {
        let n = rng.random_range(2..=8);
        let (a, b, c) = random_discrete(&mut rng, n, 1, 1);
        let h = uniform(&mut rng, 2, n);
        let bw = uniform(&mut rng, n, 1);
        let fom = StateSpaceModel::new(a, b, Some(bw), c, h, DT).map_err(err)?;
        let basis = ProjectionBasis::identity(n);
        let (rom, _) = petrov_galerkin_project(&fom, &basis, None).map_err(err)?;
        let g =
            riccati_gains(&fom, &rom, &basis, &SynthesisWeights::identity(2, 1)).map_err(err)?;
        let hz = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]);
        let hu = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let es = assemble_error_system(&fom, &rom, &basis, &g.k, &g.l, &hz, &hu).map_err(err)?;
        nonzero_b += es.b_eps.iter().filter(|v| **v != 0.0).count();
        let eps = linalg::eigenvalues(&es.a_eps);
        let mut sep = linalg::eigenvalues(&(&rom.a + &rom.b * &g.k));
        sep.extend(linalg::eigenvalues(&(&rom.a - &g.l * &rom.c)));
        worst = worst
            .max(spectrum_distance(&eps, &sep))
            .max(spectrum_distance(&sep, &eps));
    }
    Ok((
        worst <= 1e-8 && nonzero_b == 0,
        format!("20 random systems, V = W = I: max eigenvalue mismatch {worst:.1e}, nonzero B_eps entries {nonzero_b}"),
    ))
}

fn c8_decay_profile(h: &Heat) -> Check {
    let profile = norm_decay_profile(&h.err, 2000);
    let Some(t_hit) = tau_for_threshold(&profile, 1e-10) else {
        return Ok((
            false,
            format!(
                "profile never reaches 1e-10 (min {:.2e})",
                profile.iter().cloned().fold(f64::INFINITY, f64::min)
            ),
        ));
    };
    // last increase of the profile; beyond it the profile is monotone
    let last_rise = (1..profile.len())
        .rev()
        .find(|&t| profile[t] > profile[t - 1])
        .unwrap_or(0);
    let tau = h.spec.bounds.tau;
    Ok((
        last_rise < t_hit,
        format!(
            "||E A_eps^t B_eps||: t=0 {:.2e}, t={tau} {:.2e}; <= 1e-10 from t = {t_hit}; monotone decreasing from t = {last_rise}",
            profile[0], profile[tau]
        ),
    ))
}

fn rk4(
    a: &DMatrix<f64>,
    f: &DVector<f64>,
    x: &DVector<f64>,
    t: f64,
    substeps: usize,
) -> DVector<f64> {
    let h = t / substeps as f64;
    let rhs = |x: &DVector<f64>| a * x + f;
    let mut x = x.clone();
    for _ in 0..substeps {
        let k1 = rhs(&x);
        let k2 = rhs(&(&x + &k1 * (h / 2.0)));
        let k3 = rhs(&(&x + &k2 * (h / 2.0)));
        let k4 = rhs(&(&x + &k3 * h));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    x
}

fn c9_continuous() -> Check {
    let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.0, -2.0]);
    let b = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
    let bw = DMatrix::from_column_slice(2, 1, &[0.1, 0.1]);
    let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
    let fom = StateSpaceModel::new(
        a.clone(),
        b.clone(),
        Some(bw.clone()),
        c,
        DMatrix::identity(2, 2),
        TimeDomain::Continuous,
    )
    .map_err(err)?;
    let sets = ConstraintSets {
        z: Polytope::symmetric_box(&[5.0, 5.0]).map_err(err)?,
        u: Polytope::symmetric_box(&[2.0]).map_err(err)?,
        w: Polytope::symmetric_box(&[0.5]).map_err(err)?,
        v: Polytope::symmetric_box(&[0.01]).map_err(err)?,
    };
    let (basis, _) = balanced_truncation(&fom, 1).map_err(err)?;
    let (rom, _) = petrov_galerkin_project(&fom, &basis, None).map_err(err)?;
    let gains =
        riccati_gains(&fom, &rom, &basis, &SynthesisWeights::identity(2, 1)).map_err(err)?;

    let (dt_ctrl, dt_ocp) = (0.02, 0.1);
    let rom_d = zoh_discretize(&rom, dt_ocp).map_err(err)?;
    let q = rom_d.h.transpose() * &rom_d.h;
    let r = DMatrix::identity(1, 1);
    let target = Target::origin(1, 1);
    let (p, terminal, k_f) = terminal_constraint(
        &rom_d,
        &q,
        &r,
        &sets.z,
        &sets.u,
        &target,
        TerminalMode::InvariantOrEquality,
    )
    .map_err(err)?;
    let ocp = OcpSpec {
        a: rom_d.a.clone(),
        b: rom_d.b.clone(),
        h: rom_d.h.clone(),
        zbar: sets.z.clone(),
        ubar: sets.u.clone(),
        q,
        r,
        p,
        k_f,
        terminal,
        horizon: 10,
        target,
    };
    let ctl = CtController::new(
        &rom,
        &gains.k,
        &gains.l,
        ocp,
        dt_ctrl,
        dt_ocp,
        QpSettings::default(),
    )
    .map_err(err)?;
    let problem = ProblemSpec {
        fom,
        sets: sets.clone(),
        cost: CostSpec::identity(2, 1),
        reduction: ReductionSpec {
            rom_dim: 1,
            method: ReductionMethod::Basis(basis.clone()),
        },
        bounds: BoundSpec::default(),
        ocp: OcpConfig {
            horizon: 10,
            k0: Some(0),
            ..OcpConfig::default()
        },
    };
    let cfg = SimConfig {
        steps: 200,
        k0: Some(0),
        disturbance: DisturbancePolicy::Uniform,
        x_f_init: Some(DVector::from_vec(vec![1.0, -0.5])),
        seed: 9,
        ..SimConfig::default()
    };
    let log = simulate_closed_loop_ct(&problem, &ctl, &cfg).map_err(err)?;
    let mut x = DVector::from_vec(vec![1.0, -0.5]);
    let mut sample_err: f64 = 0.0;
    for k in 0..log.records.len() {
        let rec = &log.records[k];
        sample_err = sample_err.max((DVector::from_column_slice(&rec.z) - &x).amax());
        let f = &b * DVector::from_column_slice(&rec.u) + &bw * DVector::from_column_slice(&rec.w);
        x = rk4(&a, &f, &x, dt_ctrl, 200);
    }
    let moved = log.records.iter().map(|r| r.u[0].abs()).fold(0.0, f64::max);

    // quadrature refinement of the continuous-time Δ⁽²⁾
    let es = assemble_error_system(
        &problem.fom,
        &rom,
        &basis,
        &gains.k,
        &gains.l,
        &sets.z.h,
        &sets.u.h,
    )
    .map_err(err)?;
    let tau_s = 2.0;
    let mut values = Vec::new();
    for dt in [0.02, 0.01] {
        let rd = zoh_discretize(&rom, dt).map_err(err)?;
        let xbar =
            compute_xbar(&rd, &sets.z, &sets.u, (tau_s / dt).round() as usize).map_err(err)?;
        let e = es.e_stacked();
        let row: Vec<f64> = (0..e.nrows())
            .map(|i| ct_delta2(&es, &e.row(i).transpose(), &rd, &xbar, &sets, tau_s, dt))
            .collect::<Result<_, _>>()
            .map_err(err)?;
        values.push(row);
    }
    let change = values[0]
        .iter()
        .zip(&values[1])
        .map(|(c, f)| (c - f).abs() / f.abs().max(1e-300))
        .fold(0.0, f64::max);
    Ok((
        sample_err <= 1e-8 && change < 0.01 && moved > 0.0,
        format!(
            "2-state CT plant, 1-state ROM, dt_ctrl {dt_ctrl}, dt_ocp {dt_ocp}: max |x_ZOH - x_RK4| at samples {sample_err:.1e} over {} steps; ct_delta2 rel. change dt 0.02 -> 0.01: {:.3}%",
            log.records.len(),
            100.0 * change
        ),
    ))
}

fn c10_recursive_feasibility(h: &Heat) -> Check {
    let rom = &h.design.rom;
    let (n, m) = (rom.n(), rom.m());
    let ocp = h.design.ocp_spec(&Target::origin(n, m)).map_err(err)?;
    let opts = default_qp_options();
    let feasible = |x: &DVector<f64>| {
        solve_ocp(&ocp, x, None, &opts)
            .map(|s| s.is_feasible())
            .unwrap_or(false)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (mut infeasible_steps, mut increases, mut worst_rise) = (0, 0, 0.0f64);
    let mut solves = 0;
    for _ in 0..100 {
        let d = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)).normalize();
        // largest feasible scale along d, then a random point below it
        let (mut lo, mut hi) = (0.0, 1e-3);
        while feasible(&(&d * hi)) && hi < 1e9 {
            lo = hi;
            hi *= 4.0;
        }
        for _ in 0..30 {
            let mid = 0.5 * (lo + hi);
            if feasible(&(&d * mid)) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut x = &d * (lo * rng.random_range(0.05..0.95));
        let mut warm = None;
        let mut prev = f64::INFINITY;
        for _ in 0..200 {
            let sol = solve_ocp(&ocp, &x, warm.as_ref(), &opts).map_err(err)?;
            solves += 1;
            if !sol.is_feasible() {
                infeasible_steps += 1;
                break;
            }
            let cost = sol.cost();
            let tol = 1e-7 * (1.0 + prev.abs().min(cost.abs()));
            if cost > prev + tol {
                increases += 1;
                worst_rise = worst_rise.max((cost - prev) / (1.0 + prev.abs()));
            }
            prev = cost;
            x = &rom.a * &x + &rom.b * &sol.u0;
            warm = sol.shifted_warm_start(&ocp);
        }
    }
    Ok((
        infeasible_steps == 0 && increases == 0,
        format!("100 starts x 200 steps ({solves} solves): {infeasible_steps} infeasible, {increases} cost increases (worst rel. {worst_rise:.1e})"),
    ))
}

fn main() -> ExitCode {
    println!("running acceptance criteria");
    let heat = heat();
    let with_heat = |f: fn(&Heat) -> Check| -> Check {
        match &heat {
            Ok(h) => f(h),
            Err(e) => Err(format!("heat benchmark synthesis failed: {e}")),
        }
    };
    let criteria: Vec<(&str, Box<dyn Fn() -> Check + '_>)> = vec![
        (
            "synthesis stability and runtime",
            Box::new(|| with_heat(c1_synthesis)),
        ),
        (
            "bound soundness (Monte Carlo)",
            Box::new(|| with_heat(c2_soundness)),
        ),
        ("brute-force bound equivalence", Box::new(c3_brute_force)),
        (
            "disturbance-free convergence",
            Box::new(|| with_heat(c4_convergence)),
        ),
        (
            "decay certificate validity",
            Box::new(|| with_heat(c5_certificates)),
        ),
        ("numerical kernels", Box::new(c6_kernels)),
        ("separation degeneracy", Box::new(c7_separation)),
        (
            "tau-decay diagnostic",
            Box::new(|| with_heat(c8_decay_profile)),
        ),
        ("continuous-time consistency", Box::new(c9_continuous)),
        (
            "recursive feasibility",
            Box::new(|| with_heat(c10_recursive_feasibility)),
        ),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let (pass, detail) = match run() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "[{}] {:>2}. {name}: {detail} ({:.1} s)",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            t.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
