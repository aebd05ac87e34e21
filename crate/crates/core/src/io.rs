//! File formats: Matrix Market payloads, the JSON problem manifest, stored
//! designs and trajectory logs.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bounds::{ConstraintSets, DecayChoice, DEFAULT_ETA_INIT};
use crate::design::{QpSettings, RompcDesign};
use crate::error::{Result, RompcError};
use crate::geometry::Polytope;
use crate::model::{StateSpaceModel, TimeDomain};
use crate::problem::{
    BoundSpec, CostSpec, OcpConfig, ProblemSpec, ReductionMethod, ReductionSpec, StateWeight,
    TerminalMode,
};
use crate::reduction::ProjectionBasis;
use crate::runtime::TrajectoryLog;
use crate::synthesis::DEFAULT_GAMMA_REG;

/// Read a Matrix Market file (coordinate or array; real or integer;
/// general, symmetric or skew-symmetric) into a dense matrix.
pub fn read_matrix_market(path: &Path) -> Result<DMatrix<f64>> {
    let file = fs::File::open(path).map_err(|e| RompcError::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let bad = |line: usize, msg: &str| RompcError::parse(path, format!("line {}: {msg}", line + 1));

    let (i0, header) = match lines.next() {
        Some((i, l)) => (i, l.map_err(|e| RompcError::io(path, e))?),
        None => return Err(RompcError::parse(path, "empty file")),
    };
    let head: Vec<String> = header
        .split_whitespace()
        .map(|s| s.to_ascii_lowercase())
        .collect();
    if head.len() != 5 || head[0] != "%%matrixmarket" || head[1] != "matrix" {
        return Err(bad(
            i0,
            "expected '%%MatrixMarket matrix <format> <field> <symmetry>'",
        ));
    }
    let coordinate = match head[2].as_str() {
        "coordinate" => true,
        "array" => false,
        other => return Err(bad(i0, &format!("unsupported format '{other}'"))),
    };
    if !matches!(head[3].as_str(), "real" | "integer" | "double") {
        return Err(bad(i0, &format!("unsupported field '{}'", head[3])));
    }
    let sym = match head[4].as_str() {
        "general" => 0,
        "symmetric" => 1,
        "skew-symmetric" => -1,
        other => return Err(bad(i0, &format!("unsupported symmetry '{other}'"))),
    };

    let mut data = lines.filter_map(|(i, l)| match l {
        Ok(l) if l.trim().is_empty() || l.trim_start().starts_with('%') => None,
        Ok(l) => Some(Ok((i, l))),
        Err(e) => Some(Err(RompcError::io(path, e))),
    });
    let (si, size) = data
        .next()
        .ok_or_else(|| RompcError::parse(path, "missing size line"))??;
    let dims: Vec<usize> = size
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad(si, "malformed size line"))?;
    let num = |i: usize, t: &str| {
        t.parse::<f64>()
            .map_err(|_| bad(i, &format!("malformed number '{t}'")))
    };

    if coordinate {
        if dims.len() != 3 {
            return Err(bad(si, "coordinate size line needs rows, cols, entries"));
        }
        let (r, c, nnz) = (dims[0], dims[1], dims[2]);
        let mut m = DMatrix::zeros(r, c);
        let mut count = 0;
        for item in data {
            let (i, l) = item?;
            let t: Vec<&str> = l.split_whitespace().collect();
            if t.len() != 3 {
                return Err(bad(i, "expected 'row col value'"));
            }
            let ri: usize = t[0].parse().map_err(|_| bad(i, "malformed row index"))?;
            let ci: usize = t[1].parse().map_err(|_| bad(i, "malformed column index"))?;
            if ri == 0 || ci == 0 || ri > r || ci > c {
                return Err(bad(i, "index out of range"));
            }
            let v = num(i, t[2])?;
            m[(ri - 1, ci - 1)] += v;
            if sym != 0 && ri != ci {
                m[(ci - 1, ri - 1)] += sym as f64 * v;
            }
            count += 1;
        }
        if count != nnz {
            return Err(RompcError::parse(
                path,
                format!("expected {nnz} entries, found {count}"),
            ));
        }
        Ok(m)
    } else {
        if dims.len() != 2 {
            return Err(bad(si, "array size line needs rows, cols"));
        }
        let (r, c) = (dims[0], dims[1]);
        let mut values = Vec::with_capacity(r * c);
        for item in data {
            let (i, l) = item?;
            for t in l.split_whitespace() {
                values.push(num(i, t)?);
            }
        }
        if sym == 0 {
            if values.len() != r * c {
                return Err(RompcError::parse(
                    path,
                    format!("expected {} values, found {}", r * c, values.len()),
                ));
            }
            return Ok(DMatrix::from_column_slice(r, c, &values));
        }
        if r != c {
            return Err(RompcError::parse(path, "symmetric array must be square"));
        }
        // lower triangle, column major (diagonal omitted when skew)
        let expect = if sym > 0 {
            r * (r + 1) / 2
        } else {
            r * (r.saturating_sub(1)) / 2
        };
        if values.len() != expect {
            return Err(RompcError::parse(
                path,
                format!("expected {expect} values, found {}", values.len()),
            ));
        }
        let mut m = DMatrix::zeros(r, r);
        let mut it = values.into_iter();
        for j in 0..r {
            let start = if sym > 0 { j } else { j + 1 };
            for i in start..r {
                let v = it.next().expect("counted");
                m[(i, j)] = v;
                if i != j {
                    m[(j, i)] = sym as f64 * v;
                }
            }
        }
        Ok(m)
    }
}

/// Write a dense matrix in Matrix Market array format with 17 significant digits.
pub fn write_matrix_market(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut s = String::with_capacity(32 * (m.len() + 2));
    s.push_str("%%MatrixMarket matrix array real general\n");
    s.push_str(&format!("{} {}\n", m.nrows(), m.ncols()));
    for v in m.iter() {
        s.push_str(&format!("{v:.16e}\n"));
    }
    fs::write(path, s).map_err(|e| RompcError::io(path, e))
}

pub fn read_vector(path: &Path) -> Result<DVector<f64>> {
    let m = read_matrix_market(path)?;
    if m.ncols() != 1 && m.nrows() != 1 && !m.is_empty() {
        return Err(RompcError::parse(
            path,
            format!(
                "expected a vector, found a {}x{} matrix",
                m.nrows(),
                m.ncols()
            ),
        ));
    }
    Ok(DVector::from_iterator(m.len(), m.iter().cloned()))
}

pub fn write_vector(path: &Path, v: &DVector<f64>) -> Result<()> {
    write_matrix_market(path, &DMatrix::from_column_slice(v.len(), 1, v.as_slice()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| RompcError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| RompcError::parse(path, e.to_string()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| RompcError::parse(path, e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| RompcError::io(path, e))
}

/// Polytope in a manifest: explicit H-representation or box bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SetEntry {
    HRep { h: String, b: Vec<f64> },
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FomEntry {
    pub a: String,
    pub b: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bw: Option<String>,
    pub c: String,
    pub h: String,
    pub time_domain: TimeDomain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintEntry {
    pub z: SetEntry,
    pub u: SetEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<SetEntry>,
    pub v: SetEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEntry {
    /// "projected" or a matrix file.
    pub qf: String,
    pub r: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wz: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wu: Option<String>,
    #[serde(default = "default_gamma")]
    pub gamma_reg: f64,
}

fn default_gamma() -> f64 {
    DEFAULT_GAMMA_REG
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReductionMethodEntry {
    BalancedTruncation,
    StableSplit,
    Basis { v: String, w: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionEntry {
    pub rom_dim: usize,
    pub method: ReductionMethodEntry,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayEntry {
    Auto,
    Lyapunov { eta: Option<f64> },
    Eigen,
    Skip,
}

impl From<DecayEntry> for DecayChoice {
    fn from(d: DecayEntry) -> Self {
        match d {
            DecayEntry::Auto => DecayChoice::Auto,
            DecayEntry::Lyapunov { eta } => DecayChoice::Lyapunov { eta },
            DecayEntry::Eigen => DecayChoice::Eigen,
            DecayEntry::Skip => DecayChoice::Skip,
        }
    }
}

impl From<DecayChoice> for DecayEntry {
    fn from(d: DecayChoice) -> Self {
        match d {
            DecayChoice::Auto => DecayEntry::Auto,
            DecayChoice::Lyapunov { eta } => DecayEntry::Lyapunov { eta },
            DecayChoice::Eigen => DecayEntry::Eigen,
            DecayChoice::Skip => DecayEntry::Skip,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundEntry {
    pub tau: usize,
    #[serde(default = "default_eta")]
    pub eta_init: f64,
    #[serde(default)]
    pub i_bar: Option<usize>,
    #[serde(default = "default_decay")]
    pub decay: DecayEntry,
}

fn default_eta() -> f64 {
    DEFAULT_ETA_INIT
}

fn default_decay() -> DecayEntry {
    DecayEntry::Auto
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcpEntry {
    pub horizon: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tracking: Option<String>,
    #[serde(default = "default_terminal")]
    pub terminal: TerminalMode,
    #[serde(default)]
    pub k0: Option<usize>,
}

fn default_terminal() -> TerminalMode {
    TerminalMode::InvariantOrEquality
}

/// JSON problem manifest; matrix entries are paths relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub fom: FomEntry,
    pub constraints: ConstraintEntry,
    pub disturbances: DisturbanceEntry,
    pub cost: CostEntry,
    pub reduction: ReductionEntry,
    pub bounds: BoundEntry,
    pub ocp: OcpEntry,
}

fn resolve(dir: &Path, file: &str) -> PathBuf {
    dir.join(file)
}

fn load_set(dir: &Path, entry: &SetEntry, label: &str) -> Result<Polytope> {
    let set = match entry {
        SetEntry::HRep { h, b } => Polytope::new(
            read_matrix_market(&resolve(dir, h))?,
            DVector::from_vec(b.clone()),
        )?,
        SetEntry::Box { lower, upper } => Polytope::from_box(lower, upper)?,
    };
    Ok(set.with_label(label))
}

/// Load and validate a problem manifest.
pub fn load_problem(path: &Path) -> Result<ProblemSpec> {
    let man: Manifest = read_json(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mat = |f: &str| read_matrix_market(&resolve(dir, f));
    let f = &man.fom;
    let fom = StateSpaceModel::new(
        mat(&f.a)?,
        mat(&f.b)?,
        f.bw.as_deref().map(mat).transpose()?,
        mat(&f.c)?,
        mat(&f.h)?,
        f.time_domain,
    )?;
    let w = match &man.disturbances.w {
        Some(e) => load_set(dir, e, "W")?,
        None if fom.mw() == 0 => Polytope::empty_dim(),
        None => {
            return Err(RompcError::invalid(
                "the model has a disturbance input but the manifest gives no W",
            ))
        }
    };
    let sets = ConstraintSets {
        z: load_set(dir, &man.constraints.z, "Z")?,
        u: load_set(dir, &man.constraints.u, "U")?,
        w,
        v: load_set(dir, &man.disturbances.v, "V")?,
    };
    let c = &man.cost;
    let qf = match c.qf.as_str() {
        "projected" => StateWeight::Projected,
        file => StateWeight::Matrix(mat(file)?),
    };
    let cost = CostSpec {
        qf,
        r: mat(&c.r)?,
        wz: c
            .wz
            .as_deref()
            .map(mat)
            .transpose()?
            .unwrap_or_else(|| DMatrix::identity(fom.o(), fom.o())),
        wu: c
            .wu
            .as_deref()
            .map(mat)
            .transpose()?
            .unwrap_or_else(|| DMatrix::identity(fom.m(), fom.m())),
        gamma_reg: c.gamma_reg,
    };
    let method = match &man.reduction.method {
        ReductionMethodEntry::BalancedTruncation => ReductionMethod::BalancedTruncation,
        ReductionMethodEntry::StableSplit => ReductionMethod::StableSplit,
        ReductionMethodEntry::Basis { v, w } => {
            ReductionMethod::Basis(ProjectionBasis::new(mat(v)?, mat(w)?)?)
        }
    };
    let spec = ProblemSpec {
        fom,
        sets,
        cost,
        reduction: ReductionSpec {
            rom_dim: man.reduction.rom_dim,
            method,
        },
        bounds: BoundSpec {
            tau: man.bounds.tau,
            eta_init: man.bounds.eta_init,
            i_bar: man.bounds.i_bar,
            decay: man.bounds.decay.into(),
        },
        ocp: OcpConfig {
            horizon: man.ocp.horizon,
            tracking: man.ocp.tracking.as_deref().map(mat).transpose()?,
            terminal: man.ocp.terminal,
            k0: man.ocp.k0,
        },
    };
    spec.validate()?;
    Ok(spec)
}

fn save_set(dir: &Path, set: &Polytope, stem: &str) -> Result<SetEntry> {
    let file = format!("{stem}.mtx");
    write_matrix_market(&dir.join(&file), &set.h)?;
    Ok(SetEntry::HRep {
        h: file,
        b: set.b.as_slice().to_vec(),
    })
}

/// Write a problem as `dir/manifest.json` plus Matrix Market payloads.
pub fn save_problem(spec: &ProblemSpec, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| RompcError::io(dir, e))?;
    let put = |name: &str, m: &DMatrix<f64>| -> Result<String> {
        let file = format!("{name}.mtx");
        write_matrix_market(&dir.join(&file), m)?;
        Ok(file)
    };
    let fom = &spec.fom;
    let man = Manifest {
        fom: FomEntry {
            a: put("A", &fom.a)?,
            b: put("B", &fom.b)?,
            bw: if fom.mw() > 0 {
                Some(put("Bw", &fom.bw)?)
            } else {
                None
            },
            c: put("C", &fom.c)?,
            h: put("H", &fom.h)?,
            time_domain: fom.time_domain,
        },
        constraints: ConstraintEntry {
            z: save_set(dir, &spec.sets.z, "Z_H")?,
            u: save_set(dir, &spec.sets.u, "U_H")?,
        },
        disturbances: DisturbanceEntry {
            w: if fom.mw() > 0 {
                Some(save_set(dir, &spec.sets.w, "W_H")?)
            } else {
                None
            },
            v: save_set(dir, &spec.sets.v, "V_H")?,
        },
        cost: CostEntry {
            qf: match &spec.cost.qf {
                StateWeight::Projected => "projected".into(),
                StateWeight::Matrix(q) => put("Qf", q)?,
            },
            r: put("R", &spec.cost.r)?,
            wz: Some(put("Wz", &spec.cost.wz)?),
            wu: Some(put("Wu", &spec.cost.wu)?),
            gamma_reg: spec.cost.gamma_reg,
        },
        reduction: ReductionEntry {
            rom_dim: spec.reduction.rom_dim,
            method: match &spec.reduction.method {
                ReductionMethod::BalancedTruncation => ReductionMethodEntry::BalancedTruncation,
                ReductionMethod::StableSplit => ReductionMethodEntry::StableSplit,
                ReductionMethod::Basis(b) => ReductionMethodEntry::Basis {
                    v: put("basis_V", &b.v)?,
                    w: put("basis_W", &b.w)?,
                },
            },
        },
        bounds: BoundEntry {
            tau: spec.bounds.tau,
            eta_init: spec.bounds.eta_init,
            i_bar: spec.bounds.i_bar,
            decay: spec.bounds.decay.into(),
        },
        ocp: OcpEntry {
            horizon: spec.ocp.horizon,
            tracking: spec
                .ocp
                .tracking
                .as_ref()
                .map(|t| put("T", t))
                .transpose()?,
            terminal: spec.ocp.terminal,
            k0: spec.ocp.k0,
        },
    };
    let path = dir.join("manifest.json");
    write_json(&path, &man)?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DesignFile {
    time_domain: TimeDomain,
    horizon: usize,
    k0: usize,
    terminal_mode: TerminalMode,
    qp: QpSettings,
    rho_a_eps: f64,
    has_terminal_set: bool,
    has_tracking: bool,
    zbar_label: Option<String>,
    ubar_label: Option<String>,
    #[serde(default)]
    terminal_label: Option<String>,
}

const DESIGN_FILE: &str = "design.json";

fn design_dir(path: &Path) -> PathBuf {
    if path.file_name().is_some_and(|n| n == DESIGN_FILE) {
        path.parent().unwrap_or(Path::new(".")).to_path_buf()
    } else {
        path.to_path_buf()
    }
}

/// Store a design as a directory: `design.json` plus one Matrix Market file
/// per matrix or vector.
pub fn save_design(design: &RompcDesign, path: &Path) -> Result<()> {
    design.validate()?;
    let dir = design_dir(path);
    fs::create_dir_all(&dir).map_err(|e| RompcError::io(&dir, e))?;
    let put =
        |name: &str, m: &DMatrix<f64>| write_matrix_market(&dir.join(format!("{name}.mtx")), m);
    let putv = |name: &str, v: &DVector<f64>| write_vector(&dir.join(format!("{name}.mtx")), v);
    let rom = &design.rom;
    put("rom_A", &rom.a)?;
    put("rom_B", &rom.b)?;
    put("rom_Bw", &rom.bw)?;
    put("rom_C", &rom.c)?;
    put("rom_H", &rom.h)?;
    put("basis_V", &design.basis.v)?;
    put("basis_W", &design.basis.w)?;
    put("K", &design.k)?;
    put("L", &design.l)?;
    put("P", &design.p)?;
    put("K_f", &design.k_f)?;
    put("Q", &design.q)?;
    put("R", &design.r)?;
    putv("delta_z", &design.delta_z)?;
    putv("delta_u", &design.delta_u)?;
    put("Zbar_H", &design.zbar.h)?;
    putv("Zbar_b", &design.zbar.b)?;
    put("Ubar_H", &design.ubar.h)?;
    putv("Ubar_b", &design.ubar.b)?;
    if let Some(x_f) = &design.terminal_set {
        put("Xf_H", &x_f.h)?;
        putv("Xf_b", &x_f.b)?;
    }
    if let Some(t) = &design.tracking {
        put("T", t)?;
    }
    let meta = DesignFile {
        time_domain: rom.time_domain,
        horizon: design.horizon,
        k0: design.k0,
        terminal_mode: design.terminal_mode,
        qp: design.qp,
        rho_a_eps: design.rho_a_eps,
        has_terminal_set: design.terminal_set.is_some(),
        has_tracking: design.tracking.is_some(),
        zbar_label: design.zbar.label.clone(),
        ubar_label: design.ubar.label.clone(),
        terminal_label: design.terminal_set.as_ref().and_then(|x| x.label.clone()),
    };
    write_json(&dir.join(DESIGN_FILE), &meta)
}

/// Load a design directory (or its `design.json`) and check its invariants.
pub fn load_design(path: &Path) -> Result<RompcDesign> {
    let dir = design_dir(path);
    let meta: DesignFile = read_json(&dir.join(DESIGN_FILE))?;
    let get = |name: &str| read_matrix_market(&dir.join(format!("{name}.mtx")));
    let getv = |name: &str| read_vector(&dir.join(format!("{name}.mtx")));
    let rom = StateSpaceModel::new(
        get("rom_A")?,
        get("rom_B")?,
        Some(get("rom_Bw")?),
        get("rom_C")?,
        get("rom_H")?,
        meta.time_domain,
    )?;
    let labelled = |p: Polytope, l: &Option<String>| match l {
        Some(l) => p.with_label(l.clone()),
        None => p,
    };
    let design = RompcDesign {
        basis: ProjectionBasis::new(get("basis_V")?, get("basis_W")?)?,
        k: get("K")?,
        l: get("L")?,
        p: get("P")?,
        k_f: get("K_f")?,
        terminal_set: if meta.has_terminal_set {
            Some(labelled(
                Polytope::new(get("Xf_H")?, getv("Xf_b")?)?,
                &meta.terminal_label,
            ))
        } else {
            None
        },
        terminal_mode: meta.terminal_mode,
        delta_z: getv("delta_z")?,
        delta_u: getv("delta_u")?,
        zbar: labelled(
            Polytope::new(get("Zbar_H")?, getv("Zbar_b")?)?,
            &meta.zbar_label,
        ),
        ubar: labelled(
            Polytope::new(get("Ubar_H")?, getv("Ubar_b")?)?,
            &meta.ubar_label,
        ),
        q: get("Q")?,
        r: get("R")?,
        horizon: meta.horizon,
        k0: meta.k0,
        tracking: if meta.has_tracking {
            Some(get("T")?)
        } else {
            None
        },
        qp: meta.qp,
        rho_a_eps: meta.rho_a_eps,
        rom,
    };
    design.validate()?;
    Ok(design)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryFormat {
    Csv,
    Json,
}

/// CSV columns: k, t, z_1..z_o, u_1..u_m, zbar_1..zbar_o, ubar_1..ubar_m, status.
pub fn trajectory_header(o: usize, m: usize) -> Vec<String> {
    let mut h = vec!["k".to_string(), "t".to_string()];
    h.extend((1..=o).map(|i| format!("z_{i}")));
    h.extend((1..=m).map(|i| format!("u_{i}")));
    h.extend((1..=o).map(|i| format!("zbar_{i}")));
    h.extend((1..=m).map(|i| format!("ubar_{i}")));
    h.push("status".to_string());
    h
}

pub fn write_trajectory(log: &TrajectoryLog, path: &Path, format: TrajectoryFormat) -> Result<()> {
    match format {
        TrajectoryFormat::Json => write_json(path, &log.records),
        TrajectoryFormat::Csv => {
            let file = fs::File::create(path).map_err(|e| RompcError::io(path, e))?;
            let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
            let csv_err = |e: csv::Error| RompcError::parse(path, e.to_string());
            w.write_record(trajectory_header(log.o, log.m))
                .map_err(csv_err)?;
            for r in &log.records {
                let mut row = vec![r.k.to_string(), format!("{:.16e}", r.t)];
                row.extend(
                    r.z.iter()
                        .chain(&r.u)
                        .chain(&r.z_bar)
                        .chain(&r.u_bar)
                        .map(|v| format!("{v:.16e}")),
                );
                row.push(r.status().to_string());
                w.write_record(&row).map_err(csv_err)?;
            }
            let mut inner = w
                .into_inner()
                .map_err(|e| RompcError::parse(path, e.to_string()))?;
            inner.flush().map_err(|e| RompcError::io(path, e))
        }
    }
}

/// Serialize any report-like value as pretty JSON.
pub fn write_report<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    write_json(path, value)
}

pub fn read_report<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    read_json(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::{heat_problem, HeatConfig};
    use crate::runtime::{Phase, StepRecord};
    use proptest::prelude::*;
    use tempfile::tempdir;

    fn two_state_problem() -> ProblemSpec {
        let cfg = HeatConfig {
            nf: 2,
            z_at: vec![0.3],
            y_at: vec![0.6],
            rom_dim: 1,
            tau: 5,
            ..HeatConfig::default()
        };
        heat_problem(&cfg).unwrap()
    }

    #[test]
    fn problem_round_trip() {
        let dir = tempdir().unwrap();
        let spec = two_state_problem();
        let path = save_problem(&spec, dir.path()).unwrap();
        let back = load_problem(&path).unwrap();
        assert_eq!(back.fom.dims(), spec.fom.dims());
        assert_eq!(back.fom, spec.fom);
        assert_eq!(back.sets.z.b, spec.sets.z.b);
        assert_eq!(back.ocp, spec.ocp);
        assert_eq!(back.bounds, spec.bounds);
    }

    #[test]
    fn unbounded_z_is_rejected() {
        let dir = tempdir().unwrap();
        let spec = two_state_problem();
        let path = save_problem(&spec, dir.path()).unwrap();
        // keep only the lower bound on z_1
        write_matrix_market(
            &dir.path().join("Z_H.mtx"),
            &DMatrix::from_element(1, 1, -1.0),
        )
        .unwrap();
        let mut man: Manifest = read_json(&path).unwrap();
        man.constraints.z = SetEntry::HRep {
            h: "Z_H.mtx".into(),
            b: vec![0.5],
        };
        write_json(&path, &man).unwrap();
        let err = load_problem(&path).unwrap_err();
        assert!(
            err.to_string().contains("unbounded constraint set"),
            "{err}"
        );
    }

    #[test]
    fn wrong_shape_is_rejected() {
        let dir = tempdir().unwrap();
        let spec = two_state_problem();
        let path = save_problem(&spec, dir.path()).unwrap();
        write_matrix_market(&dir.path().join("A.mtx"), &DMatrix::zeros(3, 2)).unwrap();
        let err = load_problem(&path).unwrap_err();
        assert!(err.to_string().contains("dimension mismatch"), "{err}");
    }

    #[test]
    fn coordinate_and_symmetric_formats() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("c.mtx");
        fs::write(&p, "%%MatrixMarket matrix coordinate real symmetric\n% comment\n3 3 3\n1 1 2.0\n3 1 -1.5\n2 2 4\n").unwrap();
        let m = read_matrix_market(&p).unwrap();
        assert_eq!(
            m,
            DMatrix::from_row_slice(3, 3, &[2.0, 0.0, -1.5, 0.0, 4.0, 0.0, -1.5, 0.0, 0.0])
        );
        fs::write(
            &p,
            "%%MatrixMarket matrix array real symmetric\n2 2\n1\n2\n3\n",
        )
        .unwrap();
        assert_eq!(
            read_matrix_market(&p).unwrap(),
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 3.0])
        );
        fs::write(
            &p,
            "%%MatrixMarket matrix array real general\n2 2\n1\n2\n3\n",
        )
        .unwrap();
        assert!(matches!(
            read_matrix_market(&p),
            Err(RompcError::Parse { .. })
        ));
    }

    proptest! {
        #[test]
        fn matrix_market_is_bit_exact(vals in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 1..40)) {
            let dir = tempdir().unwrap();
            let p = dir.path().join("m.mtx");
            let m = DMatrix::from_column_slice(vals.len(), 1, &vals);
            write_matrix_market(&p, &m).unwrap();
            let back = read_matrix_market(&p).unwrap();
            for (a, b) in m.iter().zip(back.iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    fn sample_design() -> RompcDesign {
        let spec = two_state_problem();
        let (rom, basis, _, q) = crate::design::reduce(&spec).unwrap();
        let set_z = spec
            .sets
            .z
            .tighten(&DVector::from_vec(vec![0.0123456789, 0.1 / 3.0]))
            .unwrap();
        let set_u = spec
            .sets
            .u
            .tighten(&DVector::from_vec(vec![1e-7, 2e-7]))
            .unwrap();
        let p = crate::linalg::solve_dare(&rom.a, &rom.b, &q, &spec.cost.r).unwrap();
        let k_f = crate::linalg::dare_gain(&rom.a, &rom.b, &spec.cost.r, &p).unwrap();
        RompcDesign {
            basis,
            k: DMatrix::from_element(1, 1, -std::f64::consts::PI / 7.0),
            l: DMatrix::from_element(1, 1, 1.0 / 3.0),
            p,
            k_f,
            terminal_set: Some(Polytope::symmetric_box(&[0.1]).unwrap()),
            terminal_mode: TerminalMode::Invariant,
            delta_z: DVector::from_vec(vec![0.0123456789, 0.1 / 3.0]),
            delta_u: DVector::from_vec(vec![1e-7, 2e-7]),
            zbar: set_z,
            ubar: set_u,
            q,
            r: spec.cost.r.clone(),
            horizon: 7,
            k0: 10,
            tracking: spec.ocp.tracking.clone(),
            qp: QpSettings::default(),
            rho_a_eps: 0.123_456_789_012_345_68,
            rom,
        }
    }

    #[test]
    fn design_round_trip_is_exact() {
        let dir = tempdir().unwrap();
        let d = sample_design();
        save_design(&d, dir.path()).unwrap();
        let back = load_design(&dir.path().join("design.json")).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn negative_tightening_is_rejected() {
        let dir = tempdir().unwrap();
        save_design(&sample_design(), dir.path()).unwrap();
        write_vector(
            &dir.path().join("delta_z.mtx"),
            &DVector::from_vec(vec![0.1, -0.01]),
        )
        .unwrap();
        assert!(load_design(dir.path()).is_err());
    }

    #[test]
    fn truncated_design_is_a_parse_error() {
        let dir = tempdir().unwrap();
        save_design(&sample_design(), dir.path()).unwrap();
        let p = dir.path().join("design.json");
        let text = fs::read_to_string(&p).unwrap();
        fs::write(&p, &text[..text.len() / 2]).unwrap();
        assert!(matches!(
            load_design(dir.path()),
            Err(RompcError::Parse { .. })
        ));
        let kp = dir.path().join("K.mtx");
        fs::write(&kp, "%%MatrixMarket matrix array real general\n1 1\n").unwrap();
        assert!(matches!(
            get_err(dir.path()),
            Some(RompcError::Parse { .. })
        ));
    }

    fn get_err(dir: &Path) -> Option<RompcError> {
        write_json(
            &dir.join("design.json"),
            &DesignFile {
                time_domain: TimeDomain::Discrete { dt: 0.01 },
                horizon: 7,
                k0: 10,
                terminal_mode: TerminalMode::Invariant,
                qp: QpSettings::default(),
                rho_a_eps: 0.5,
                has_terminal_set: true,
                has_tracking: true,
                zbar_label: None,
                ubar_label: None,
                terminal_label: None,
            },
        )
        .unwrap();
        load_design(dir).err()
    }

    fn record(k: usize) -> StepRecord {
        StepRecord {
            k,
            t: k as f64 * 0.1,
            x_bar: vec![0.0],
            x_hat: vec![0.0],
            u: vec![0.5],
            u_bar: vec![0.25],
            y: vec![0.0],
            z: vec![1.0, 2.0],
            z_bar: vec![1.5, 2.5],
            w: vec![],
            v: vec![0.0],
            phase: Phase::Startup,
            ocp: None,
            z_ok: true,
            u_ok: true,
        }
    }

    #[test]
    fn trajectory_outputs() {
        let dir = tempdir().unwrap();
        let log = TrajectoryLog {
            dt: 0.1,
            k0: 0,
            o: 2,
            m: 1,
            records: (0..3).map(record).collect(),
        };
        let csv_path = dir.path().join("t.csv");
        write_trajectory(&log, &csv_path, TrajectoryFormat::Csv).unwrap();
        let text = fs::read_to_string(&csv_path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "k,t,z_1,z_2,u_1,zbar_1,zbar_2,ubar_1,status");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].ends_with(",startup"));

        let json_path = dir.path().join("t.json");
        write_trajectory(&log, &json_path, TrajectoryFormat::Json).unwrap();
        let v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&json_path).unwrap()).unwrap();
        assert_eq!(v.as_array().unwrap().len(), 3);

        let empty = TrajectoryLog {
            records: Vec::new(),
            ..log
        };
        write_trajectory(&empty, &csv_path, TrajectoryFormat::Csv).unwrap();
        assert_eq!(fs::read_to_string(&csv_path).unwrap().lines().count(), 1);
    }
}
