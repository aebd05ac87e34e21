use std::fmt::Write as _;

use rompc::bounds::BoundReport;
use rompc::design::{RompcDesign, SynthesisReport};
use rompc::problem::ProblemSpec;
use rompc::runtime::MonteCarloSummary;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub status: CheckStatus,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, pass: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            status: if pass {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            },
            detail: detail.into(),
        }
    }

    pub fn skipped(name: &str, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            status: CheckStatus::Skipped,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignSummary {
    pub nf: usize,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub o: usize,
    pub rho_a_eps: f64,
    pub rel_h2_error: Option<f64>,
    pub hankel_singular_values: Vec<f64>,
    pub horizon: usize,
    pub k0: usize,
    pub terminal_rows: Option<usize>,
}

impl DesignSummary {
    pub fn new(spec: &ProblemSpec, design: &RompcDesign, synth: Option<&SynthesisReport>) -> Self {
        let rom = &design.rom;
        DesignSummary {
            nf: spec.fom.n(),
            n: rom.n(),
            m: rom.m(),
            p: rom.p(),
            o: rom.o(),
            rho_a_eps: design.rho_a_eps,
            rel_h2_error: synth.and_then(|s| s.rel_h2_error),
            hankel_singular_values: synth
                .map(|s| s.hankel_singular_values.clone())
                .unwrap_or_default(),
            horizon: design.horizon,
            k0: design.k0,
            terminal_rows: design.terminal_set.as_ref().map(|x| x.num_rows()),
        }
    }
}

/// Original constraint offsets, needed to express tightenings relative to them.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ConstraintOffsets {
    pub b_z: Vec<f64>,
    pub b_u: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationReport {
    pub disturbance: String,
    pub seed: u64,
    pub setpoint: Option<Vec<f64>>,
    pub summary: MonteCarloSummary,
}

/// Machine-readable record of one CLI invocation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub design: Option<DesignSummary>,
    pub bounds: Option<BoundReport>,
    pub constraints: Option<ConstraintOffsets>,
    pub simulation: Option<SimulationReport>,
    pub checks: Vec<Check>,
    pub timings: Vec<(String, f64)>,
}

impl RunReport {
    pub fn new(command: &str) -> Self {
        RunReport {
            command: command.into(),
            design: None,
            bounds: None,
            constraints: None,
            simulation: None,
            checks: Vec::new(),
            timings: Vec::new(),
        }
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }
}

/// Checks shared by `synth` and `bounds`.
pub fn bound_checks(bounds: &BoundReport, design: &RompcDesign) -> Vec<Check> {
    let mut checks = vec![Check::new(
        "error_dynamics_stable",
        design.rho_a_eps < 1.0,
        format!("rho(A_eps) = {:.6}", design.rho_a_eps),
    )];
    checks.push(if bounds.delta1_waived {
        Check::skipped("delta1", bounds.note())
    } else {
        Check::new(
            "delta1",
            bounds.delta1.is_finite(),
            format!("delta1 = {:.3e}", bounds.delta1),
        )
    });
    let nonneg = design
        .delta_z
        .iter()
        .chain(design.delta_u.iter())
        .all(|d| *d >= 0.0);
    checks.push(Check::new("tightening_nonnegative", nonneg, ""));
    checks.push(match &design.terminal_set {
        Some(x) => Check::new("terminal_set", true, format!("{} rows", x.num_rows())),
        None => Check::skipped("terminal_set", "equality terminal constraint"),
    });
    checks
}

fn pct(delta: f64, b: f64) -> String {
    if b > 0.0 {
        format!("{:.4}", 100.0 * delta / b)
    } else {
        "-".into()
    }
}

/// Plain-text tables for a stored report.
pub fn render(report: &RunReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "command: {}", report.command);
    if let Some(d) = &report.design {
        let _ = writeln!(s, "\nmodel");
        let _ = writeln!(
            s,
            "  n^f {:>8}   n {:>4}   m {:>3}   p {:>3}   o {:>3}",
            d.nf, d.n, d.m, d.p, d.o
        );
        let _ = writeln!(s, "  rho(A_eps)        {:.6}", d.rho_a_eps);
        match d.rel_h2_error {
            Some(e) => {
                let _ = writeln!(s, "  rel. H2 error     {e:.3e}");
            }
            None => {
                let _ = writeln!(s, "  rel. H2 error     n/a");
            }
        }
        let _ = writeln!(s, "  horizon N         {}", d.horizon);
        let _ = writeln!(s, "  handover k0       {}", d.k0);
        match d.terminal_rows {
            Some(r) => {
                let _ = writeln!(s, "  terminal set      {r} rows");
            }
            None => {
                let _ = writeln!(s, "  terminal set      equality");
            }
        }
    }
    if let Some(b) = &report.bounds {
        let _ = writeln!(
            s,
            "\nerror bounds (tau = {}, eta = {:.1e})",
            b.tau, b.eta_init
        );
        if b.delta1_waived {
            let _ = writeln!(s, "  {}", b.note());
        } else {
            let _ = writeln!(
                s,
                "  delta1 = {:.3e}   M = {:.3e}   gamma = {:.6}",
                b.delta1, b.m, b.gamma
            );
        }
        let offsets = report.constraints.clone().unwrap_or_default();
        let _ = writeln!(
            s,
            "  {:<6} {:>12} {:>12} {:>12} {:>12} {:>10}",
            "row", "b", "delta1", "delta2", "delta", "% of b"
        );
        let rows = |s: &mut String, tag: &str, d1: &[f64], d2: &[f64], d: &[f64], b: &[f64]| {
            for i in 0..d.len() {
                let bi = b.get(i).copied().unwrap_or(f64::NAN);
                let _ = writeln!(
                    s,
                    "  {:<6} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>10}",
                    format!("{tag}{}", i + 1),
                    bi,
                    d1.get(i).copied().unwrap_or(0.0),
                    d2.get(i).copied().unwrap_or(0.0),
                    d[i],
                    pct(d[i], bi)
                );
            }
        };
        rows(
            &mut s,
            "z",
            &b.delta1_z,
            &b.delta2_z,
            &b.delta_z,
            &offsets.b_z,
        );
        rows(
            &mut s,
            "u",
            &b.delta1_u,
            &b.delta2_u,
            &b.delta_u,
            &offsets.b_u,
        );
        let t = &b.tightening;
        let _ = writeln!(
            s,
            "  summary (%): r {:.3e}  T_z max {:.4} min {:.4}  T_u max {:.4} min {:.4}",
            t.r, t.t_z_max, t.t_z_min, t.t_u_max, t.t_u_min
        );
    }
    if let Some(sim) = &report.simulation {
        let m = &sim.summary;
        let _ = writeln!(
            s,
            "\nsimulation ({} disturbances, seed {})",
            sim.disturbance, sim.seed
        );
        if let Some(r) = &sim.setpoint {
            let _ = writeln!(s, "  setpoint          {r:?}");
        }
        let _ = writeln!(s, "  runs {}   steps {}   k0 {}", m.runs, m.steps, m.k0);
        let _ = writeln!(
            s,
            "  violating runs    {}   violation steps {}",
            m.violating_runs, m.violation_steps
        );
        let _ = writeln!(s, "  failed runs       {}", m.failed_runs);
        for f in m.failures.iter().take(5) {
            let _ = writeln!(s, "    {f}");
        }
        let fmt = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:.4e}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let _ = writeln!(s, "  tube max z        {}", fmt(&m.tube_max_z));
        let _ = writeln!(s, "  tube max u        {}", fmt(&m.tube_max_u));
    }
    if !report.checks.is_empty() {
        let _ = writeln!(s, "\nchecks");
        for c in &report.checks {
            let st = match c.status {
                CheckStatus::Pass => "pass",
                CheckStatus::Fail => "FAIL",
                CheckStatus::Skipped => "skipped",
            };
            let _ = writeln!(s, "  {:<8} {:<28} {}", st, c.name, c.detail);
        }
    }
    if !report.timings.is_empty() {
        let _ = writeln!(s, "\ntimings (s)");
        for (name, t) in &report.timings {
            let _ = writeln!(s, "  {name:<16} {t:>10.3}");
        }
    }
    s
}
