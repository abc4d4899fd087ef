//! Run configuration: a sectioned key-value text format, validation, and
//! assembly of a [`Simulation`] from the parsed values.
//!
//! Unknown keys are rejected with their line number; every other key either
//! has a default or is listed as required. The effective configuration can
//! be echoed back out and re-parses to an identical `RunConfig`.

use crate::eulerian::{SimpleConfig, TimeController};
use crate::fields::{BcSpec, GasProps};
use crate::grid::{build_grid, Box3, Face, GridConfig};
use crate::lagrangian::{populate_bed, ParcelSet, StressParams, WallModel};
use crate::probe::ProbeQuantity;
use crate::scheduler::{parse_assignment, CouplingMode, Simulation};
use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(n) => write!(f, "line {n}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn err_at(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError { line: Some(line), message: message.into() }
}

fn err(message: impl Into<String>) -> ConfigError {
    ConfigError { line: None, message: message.into() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolidsConfig {
    pub d_p: f64,
    pub rho_p: f64,
    pub omega: f64,
    pub eps_p0: f64,
    pub bed: Box3,
    pub seed: u64,
    pub stress: StressParams,
    pub wall: WallModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeConfig {
    pub ctl: TimeController,
    pub t_end: f64,
    pub mean_discard: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParallelConfig {
    pub devices: String,
    pub coupling: CouplingMode,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Dump cadence in seconds of physical time; 0 disables periodic dumps.
    pub dump_every: f64,
    pub probes: Vec<[f64; 3]>,
    pub probe_interval: f64,
    pub probe_quantity: ProbeQuantity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub gas: GasProps,
    pub solids: Option<SolidsConfig>,
    pub bc: BcSpec,
    pub simple: SimpleConfig,
    pub time: TimeConfig,
    pub parallel: ParallelConfig,
    pub output: OutputConfig,
}

struct Entry {
    line: usize,
    section: String,
    key: String,
    value: String,
    used: bool,
}

struct Entries(Vec<Entry>);

impl Entries {
    fn take(&mut self, section: &str, key: &str) -> Option<(usize, String)> {
        for e in self.0.iter_mut() {
            if e.section == section && e.key == key && !e.used {
                e.used = true;
                return Some((e.line, e.value.clone()));
            }
        }
        None
    }

    fn take_all(&mut self, section: &str, key: &str) -> Vec<(usize, String)> {
        let mut out = Vec::new();
        for e in self.0.iter_mut() {
            if e.section == section && e.key == key && !e.used {
                e.used = true;
                out.push((e.line, e.value.clone()));
            }
        }
        out
    }

    fn has_section(&self, section: &str) -> bool {
        self.0.iter().any(|e| e.section == section)
    }

    fn first_unused(&self) -> Option<&Entry> {
        self.0.iter().find(|e| !e.used)
    }
}

fn parse_f64(line: usize, key: &str, v: &str) -> Result<f64, ConfigError> {
    v.parse::<f64>()
        .map_err(|_| err_at(line, format!("key '{key}': expected a number, got {v:?}")))
}

fn parse_usize(line: usize, key: &str, v: &str) -> Result<usize, ConfigError> {
    v.parse::<usize>()
        .map_err(|_| err_at(line, format!("key '{key}': expected an integer, got {v:?}")))
}

fn parse_u64(line: usize, key: &str, v: &str) -> Result<u64, ConfigError> {
    v.parse::<u64>()
        .map_err(|_| err_at(line, format!("key '{key}': expected an integer, got {v:?}")))
}

fn parse_vec3(line: usize, key: &str, v: &str) -> Result<[f64; 3], ConfigError> {
    let parts: Vec<&str> = v.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(err_at(line, format!("key '{key}': expected three numbers, got {v:?}")));
    }
    let mut out = [0.0; 3];
    for (i, p) in parts.iter().enumerate() {
        out[i] = parse_f64(line, key, p)?;
    }
    Ok(out)
}

fn parse_cells(line: usize, key: &str, v: &str) -> Result<[usize; 3], ConfigError> {
    let parts: Vec<&str> = v.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(err_at(line, format!("key '{key}': expected three integers, got {v:?}")));
    }
    let mut out = [0; 3];
    for (i, p) in parts.iter().enumerate() {
        out[i] = parse_usize(line, key, p)?;
    }
    Ok(out)
}

fn parse_face(line: usize, key: &str, v: &str) -> Result<Face, ConfigError> {
    match v.to_ascii_lowercase().as_str() {
        "xmin" => Ok(Face::XMin),
        "xmax" => Ok(Face::XMax),
        "ymin" => Ok(Face::YMin),
        "ymax" => Ok(Face::YMax),
        "zmin" => Ok(Face::ZMin),
        "zmax" => Ok(Face::ZMax),
        other => Err(err_at(
            line,
            format!("key '{key}': expected a face (xmin..zmax), got {other:?}"),
        )),
    }
}

fn parse_box(line: usize, key: &str, v: &str) -> Result<Box3, ConfigError> {
    let parts: Vec<&str> = v.split_whitespace().collect();
    if parts.len() != 6 {
        return Err(err_at(
            line,
            format!("key '{key}': expected six numbers (lo xyz, hi xyz), got {v:?}"),
        ));
    }
    let mut vals = [0.0; 6];
    for (i, p) in parts.iter().enumerate() {
        vals[i] = parse_f64(line, key, p)?;
    }
    Ok(Box3::new([vals[0], vals[1], vals[2]], [vals[3], vals[4], vals[5]]))
}

/// Known sections and their keys; anything else is rejected.
fn schema() -> Vec<(&'static str, Vec<&'static str>)> {
    vec![
        ("grid", vec!["size", "cells", "origin", "inlet", "outlet", "blocked"]),
        ("gas", vec!["rho", "mu", "p_ref", "gravity"]),
        (
            "solids",
            vec![
                "d_p", "rho_p", "omega", "eps_p0", "bed", "seed", "p_s", "beta", "eps_cp",
                "alpha", "e_n", "e_t",
            ],
        ),
        ("bc", vec!["inlet_speed", "outlet_gauge_p"]),
        (
            "simple",
            vec![
                "tol",
                "max_outer",
                "urf_mom",
                "urf_p",
                "lin_tol_mom",
                "lin_maxit_mom",
                "lin_tol_p",
                "lin_maxit_p",
            ],
        ),
        (
            "time",
            vec![
                "dt0",
                "dt_min",
                "dt_max",
                "grow_factor",
                "shrink_factor",
                "grow_threshold",
                "t_end",
                "mean_discard",
            ],
        ),
        ("parallel", vec!["devices", "coupling", "workers"]),
        (
            "output",
            vec!["dir", "dump_every", "probe", "probe_interval", "probe_quantity"],
        ),
    ]
}

/// Parse configuration text. See the README for the key reference.
pub fn parse_config_str(text: &str) -> Result<RunConfig, ConfigError> {
    let mut entries = Vec::new();
    let mut section = String::new();
    let known = schema();
    let known_sections: BTreeSet<&str> = known.iter().map(|(s, _)| *s).collect();

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(inner) = line.strip_prefix('[') {
            let name = inner
                .strip_suffix(']')
                .ok_or_else(|| err_at(line_no, format!("malformed section header {line:?}")))?
                .trim()
                .to_string();
            if !known_sections.contains(name.as_str()) {
                return Err(err_at(line_no, format!("unknown section [{name}]")));
            }
            section = name;
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err_at(line_no, format!("expected 'key = value', got {line:?}")))?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if section.is_empty() {
            return Err(err_at(line_no, format!("key '{key}' outside any section")));
        }
        let allowed = known.iter().find(|(s, _)| *s == section).map(|(_, k)| k).unwrap();
        if !allowed.contains(&key.as_str()) {
            return Err(err_at(line_no, format!("unknown key '{key}' in [{section}]")));
        }
        entries.push(Entry { line: line_no, section: section.clone(), key, value, used: false });
    }

    let mut e = Entries(entries);

    // --- required keys ---
    let mut missing = Vec::new();
    let size = e.take("grid", "size");
    let cells = e.take("grid", "cells");
    if size.is_none() {
        missing.push("[grid] size");
    }
    if cells.is_none() {
        missing.push("[grid] cells");
    }
    if !missing.is_empty() {
        return Err(err(format!("missing required keys: {}", missing.join(", "))));
    }
    let (sl, sv) = size.unwrap();
    let (cl, cv) = cells.unwrap();

    let grid = GridConfig {
        extents: parse_vec3(sl, "size", &sv)?,
        cells: parse_cells(cl, "cells", &cv)?,
        origin: match e.take("grid", "origin") {
            Some((l, v)) => parse_vec3(l, "origin", &v)?,
            None => [0.0; 3],
        },
        inlet_faces: e
            .take_all("grid", "inlet")
            .into_iter()
            .map(|(l, v)| parse_face(l, "inlet", &v))
            .collect::<Result<_, _>>()?,
        outlet_faces: e
            .take_all("grid", "outlet")
            .into_iter()
            .map(|(l, v)| parse_face(l, "outlet", &v))
            .collect::<Result<_, _>>()?,
        blocked: e
            .take_all("grid", "blocked")
            .into_iter()
            .map(|(l, v)| parse_box(l, "blocked", &v))
            .collect::<Result<_, _>>()?,
    };

    let gas = GasProps {
        rho_g: match e.take("gas", "rho") {
            Some((l, v)) => parse_f64(l, "rho", &v)?,
            None => 1.0,
        },
        mu_g: match e.take("gas", "mu") {
            Some((l, v)) => parse_f64(l, "mu", &v)?,
            None => 1.8e-5,
        },
        p_ref: match e.take("gas", "p_ref") {
            Some((l, v)) => parse_f64(l, "p_ref", &v)?,
            None => 101_325.0,
        },
        gravity: match e.take("gas", "gravity") {
            Some((l, v)) => parse_vec3(l, "gravity", &v)?,
            None => [0.0; 3],
        },
    };

    let solids = if e.has_section("solids") {
        let req = |ents: &mut Entries, key: &str| -> Result<(usize, String), ConfigError> {
            ents.take("solids", key)
                .ok_or_else(|| err(format!("missing required key: [solids] {key}")))
        };
        let (l, v) = req(&mut e, "d_p")?;
        let d_p = parse_f64(l, "d_p", &v)?;
        let (l, v) = req(&mut e, "rho_p")?;
        let rho_p = parse_f64(l, "rho_p", &v)?;
        let (l, v) = req(&mut e, "omega")?;
        let omega = parse_f64(l, "omega", &v)?;
        let (l, v) = req(&mut e, "eps_p0")?;
        let eps_p0 = parse_f64(l, "eps_p0", &v)?;
        let (l, v) = req(&mut e, "bed")?;
        let bed = parse_box(l, "bed", &v)?;
        let seed = match e.take("solids", "seed") {
            Some((l, v)) => parse_u64(l, "seed", &v)?,
            None => 0,
        };
        let defaults = StressParams::default();
        let stress = StressParams {
            p_s: match e.take("solids", "p_s") {
                Some((l, v)) => parse_f64(l, "p_s", &v)?,
                None => defaults.p_s,
            },
            beta: match e.take("solids", "beta") {
                Some((l, v)) => parse_f64(l, "beta", &v)?,
                None => defaults.beta,
            },
            eps_cp: match e.take("solids", "eps_cp") {
                Some((l, v)) => parse_f64(l, "eps_cp", &v)?,
                None => defaults.eps_cp,
            },
            alpha: match e.take("solids", "alpha") {
                Some((l, v)) => parse_f64(l, "alpha", &v)?,
                None => defaults.alpha,
            },
        };
        let wd = WallModel::default();
        let wall = WallModel {
            e_n: match e.take("solids", "e_n") {
                Some((l, v)) => parse_f64(l, "e_n", &v)?,
                None => wd.e_n,
            },
            e_t: match e.take("solids", "e_t") {
                Some((l, v)) => parse_f64(l, "e_t", &v)?,
                None => wd.e_t,
            },
        };
        Some(SolidsConfig { d_p, rho_p, omega, eps_p0, bed, seed, stress, wall })
    } else {
        None
    };

    let bc = BcSpec {
        inlet_speed: match e.take("bc", "inlet_speed") {
            Some((l, v)) => parse_f64(l, "inlet_speed", &v)?,
            None => 0.0,
        },
        outlet_gauge_p: match e.take("bc", "outlet_gauge_p") {
            Some((l, v)) => parse_f64(l, "outlet_gauge_p", &v)?,
            None => 0.0,
        },
    };

    let sd = SimpleConfig::default();
    let simple = SimpleConfig {
        tol: match e.take("simple", "tol") {
            Some((l, v)) => parse_f64(l, "tol", &v)?,
            None => sd.tol,
        },
        max_outer: match e.take("simple", "max_outer") {
            Some((l, v)) => parse_usize(l, "max_outer", &v)?,
            None => sd.max_outer,
        },
        urf_mom: match e.take("simple", "urf_mom") {
            Some((l, v)) => parse_f64(l, "urf_mom", &v)?,
            None => sd.urf_mom,
        },
        urf_p: match e.take("simple", "urf_p") {
            Some((l, v)) => parse_f64(l, "urf_p", &v)?,
            None => sd.urf_p,
        },
        lin_tol_mom: match e.take("simple", "lin_tol_mom") {
            Some((l, v)) => parse_f64(l, "lin_tol_mom", &v)?,
            None => sd.lin_tol_mom,
        },
        lin_maxit_mom: match e.take("simple", "lin_maxit_mom") {
            Some((l, v)) => parse_usize(l, "lin_maxit_mom", &v)?,
            None => sd.lin_maxit_mom,
        },
        lin_tol_p: match e.take("simple", "lin_tol_p") {
            Some((l, v)) => parse_f64(l, "lin_tol_p", &v)?,
            None => sd.lin_tol_p,
        },
        lin_maxit_p: match e.take("simple", "lin_maxit_p") {
            Some((l, v)) => parse_usize(l, "lin_maxit_p", &v)?,
            None => sd.lin_maxit_p,
        },
    };

    let dt0 = match e.take("time", "dt0") {
        Some((l, v)) => parse_f64(l, "dt0", &v)?,
        None => 1e-3,
    };
    let time = TimeConfig {
        ctl: TimeController {
            dt: dt0,
            dt_min: match e.take("time", "dt_min") {
                Some((l, v)) => parse_f64(l, "dt_min", &v)?,
                None => 1e-7,
            },
            dt_max: match e.take("time", "dt_max") {
                Some((l, v)) => parse_f64(l, "dt_max", &v)?,
                None => 1e-3,
            },
            grow_factor: match e.take("time", "grow_factor") {
                Some((l, v)) => parse_f64(l, "grow_factor", &v)?,
                None => 1.1,
            },
            shrink_factor: match e.take("time", "shrink_factor") {
                Some((l, v)) => parse_f64(l, "shrink_factor", &v)?,
                None => 0.5,
            },
            grow_threshold: match e.take("time", "grow_threshold") {
                Some((l, v)) => parse_usize(l, "grow_threshold", &v)?,
                None => 8,
            },
        },
        t_end: match e.take("time", "t_end") {
            Some((l, v)) => parse_f64(l, "t_end", &v)?,
            None => 0.0,
        },
        mean_discard: match e.take("time", "mean_discard") {
            Some((l, v)) => parse_f64(l, "mean_discard", &v)?,
            None => 0.0,
        },
    };

    let parallel = ParallelConfig {
        devices: match e.take("parallel", "devices") {
            Some((_, v)) => v,
            None => "111[1]".to_string(),
        },
        coupling: match e.take("parallel", "coupling") {
            Some((l, v)) => v
                .parse::<CouplingMode>()
                .map_err(|m| err_at(l, m))?,
            None => CouplingMode::Explicit,
        },
        workers: match e.take("parallel", "workers") {
            Some((l, v)) => parse_usize(l, "workers", &v)?,
            None => 8,
        },
    };

    let output = OutputConfig {
        dir: match e.take("output", "dir") {
            Some((_, v)) => PathBuf::from(v),
            None => PathBuf::from("out"),
        },
        dump_every: match e.take("output", "dump_every") {
            Some((l, v)) => parse_f64(l, "dump_every", &v)?,
            None => 0.0,
        },
        probes: e
            .take_all("output", "probe")
            .into_iter()
            .map(|(l, v)| parse_vec3(l, "probe", &v))
            .collect::<Result<_, _>>()?,
        probe_interval: match e.take("output", "probe_interval") {
            Some((l, v)) => parse_f64(l, "probe_interval", &v)?,
            None => 0.01,
        },
        probe_quantity: match e.take("output", "probe_quantity") {
            Some((l, v)) => v.parse::<ProbeQuantity>().map_err(|m| err_at(l, m))?,
            None => ProbeQuantity::EpsG,
        },
    };

    if let Some(stray) = e.first_unused() {
        return Err(err_at(
            stray.line,
            format!("duplicate key '{}' in [{}]", stray.key, stray.section),
        ));
    }

    let config = RunConfig { grid, gas, solids, bc, simple, time, parallel, output };
    validate(&config)?;
    Ok(config)
}

fn validate(c: &RunConfig) -> Result<(), ConfigError> {
    if let Some(s) = &c.solids {
        if s.eps_p0 >= s.stress.eps_cp {
            return Err(err(format!(
                "solids eps_p0 = {} must stay below the close-pack fraction eps_cp = {}",
                s.eps_p0, s.stress.eps_cp
            )));
        }
        for a in 0..3 {
            let lo = c.grid.origin[a];
            let hi = lo + c.grid.extents[a];
            if s.bed.lo[a] < lo - 1e-12 || s.bed.hi[a] > hi + 1e-12 {
                return Err(err("solids bed region extends outside the domain"));
            }
        }
    }
    let t = &c.time.ctl;
    if !(t.dt_min <= t.dt && t.dt <= t.dt_max) {
        return Err(err(format!(
            "time bounds violated: need dt_min <= dt0 <= dt_max, got {} / {} / {}",
            t.dt_min, t.dt, t.dt_max
        )));
    }
    if !(t.grow_factor > 1.0 && t.shrink_factor < 1.0 && t.shrink_factor > 0.0) {
        return Err(err("time factors must satisfy grow > 1 > shrink > 0"));
    }
    if c.simple.urf_mom <= 0.0 || c.simple.urf_mom > 1.0 || c.simple.urf_p <= 0.0 || c.simple.urf_p > 1.0 {
        return Err(err("under-relaxation factors must lie in (0, 1]"));
    }
    parse_assignment(&c.parallel.devices, c.parallel.workers)
        .map_err(|e2| err(e2.to_string()))?;
    Ok(())
}

/// Parse a configuration file.
pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e2| err(format!("cannot read {}: {e2}", path.display())))?;
    parse_config_str(&text)
}

fn face_name(f: Face) -> &'static str {
    match f {
        Face::XMin => "xmin",
        Face::XMax => "xmax",
        Face::YMin => "ymin",
        Face::YMax => "ymax",
        Face::ZMin => "zmin",
        Face::ZMax => "zmax",
    }
}

impl RunConfig {
    /// Render the effective configuration; parsing the result reproduces
    /// this config exactly.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let v3 = |v: [f64; 3]| format!("{:?} {:?} {:?}", v[0], v[1], v[2]);
        s.push_str("[grid]\n");
        s.push_str(&format!("size = {}\n", v3(self.grid.extents)));
        s.push_str(&format!(
            "cells = {} {} {}\n",
            self.grid.cells[0], self.grid.cells[1], self.grid.cells[2]
        ));
        s.push_str(&format!("origin = {}\n", v3(self.grid.origin)));
        for f in &self.grid.inlet_faces {
            s.push_str(&format!("inlet = {}\n", face_name(*f)));
        }
        for f in &self.grid.outlet_faces {
            s.push_str(&format!("outlet = {}\n", face_name(*f)));
        }
        for b in &self.grid.blocked {
            s.push_str(&format!("blocked = {} {}\n", v3(b.lo), v3(b.hi)));
        }
        s.push_str("\n[gas]\n");
        s.push_str(&format!("rho = {:?}\n", self.gas.rho_g));
        s.push_str(&format!("mu = {:?}\n", self.gas.mu_g));
        s.push_str(&format!("p_ref = {:?}\n", self.gas.p_ref));
        s.push_str(&format!("gravity = {}\n", v3(self.gas.gravity)));
        if let Some(so) = &self.solids {
            s.push_str("\n[solids]\n");
            s.push_str(&format!("d_p = {:?}\n", so.d_p));
            s.push_str(&format!("rho_p = {:?}\n", so.rho_p));
            s.push_str(&format!("omega = {:?}\n", so.omega));
            s.push_str(&format!("eps_p0 = {:?}\n", so.eps_p0));
            s.push_str(&format!("bed = {} {}\n", v3(so.bed.lo), v3(so.bed.hi)));
            s.push_str(&format!("seed = {}\n", so.seed));
            s.push_str(&format!("p_s = {:?}\n", so.stress.p_s));
            s.push_str(&format!("beta = {:?}\n", so.stress.beta));
            s.push_str(&format!("eps_cp = {:?}\n", so.stress.eps_cp));
            s.push_str(&format!("alpha = {:?}\n", so.stress.alpha));
            s.push_str(&format!("e_n = {:?}\n", so.wall.e_n));
            s.push_str(&format!("e_t = {:?}\n", so.wall.e_t));
        }
        s.push_str("\n[bc]\n");
        s.push_str(&format!("inlet_speed = {:?}\n", self.bc.inlet_speed));
        s.push_str(&format!("outlet_gauge_p = {:?}\n", self.bc.outlet_gauge_p));
        s.push_str("\n[simple]\n");
        s.push_str(&format!("tol = {:?}\n", self.simple.tol));
        s.push_str(&format!("max_outer = {}\n", self.simple.max_outer));
        s.push_str(&format!("urf_mom = {:?}\n", self.simple.urf_mom));
        s.push_str(&format!("urf_p = {:?}\n", self.simple.urf_p));
        s.push_str(&format!("lin_tol_mom = {:?}\n", self.simple.lin_tol_mom));
        s.push_str(&format!("lin_maxit_mom = {}\n", self.simple.lin_maxit_mom));
        s.push_str(&format!("lin_tol_p = {:?}\n", self.simple.lin_tol_p));
        s.push_str(&format!("lin_maxit_p = {}\n", self.simple.lin_maxit_p));
        s.push_str("\n[time]\n");
        s.push_str(&format!("dt0 = {:?}\n", self.time.ctl.dt));
        s.push_str(&format!("dt_min = {:?}\n", self.time.ctl.dt_min));
        s.push_str(&format!("dt_max = {:?}\n", self.time.ctl.dt_max));
        s.push_str(&format!("grow_factor = {:?}\n", self.time.ctl.grow_factor));
        s.push_str(&format!("shrink_factor = {:?}\n", self.time.ctl.shrink_factor));
        s.push_str(&format!("grow_threshold = {}\n", self.time.ctl.grow_threshold));
        s.push_str(&format!("t_end = {:?}\n", self.time.t_end));
        s.push_str(&format!("mean_discard = {:?}\n", self.time.mean_discard));
        s.push_str("\n[parallel]\n");
        s.push_str(&format!("devices = {}\n", self.parallel.devices));
        s.push_str(&format!(
            "coupling = {}\n",
            match self.parallel.coupling {
                CouplingMode::Explicit => "explicit",
                CouplingMode::Implicit => "implicit",
            }
        ));
        s.push_str(&format!("workers = {}\n", self.parallel.workers));
        s.push_str("\n[output]\n");
        s.push_str(&format!("dir = {}\n", self.output.dir.display()));
        s.push_str(&format!("dump_every = {:?}\n", self.output.dump_every));
        for p in &self.output.probes {
            s.push_str(&format!("probe = {}\n", v3(*p)));
        }
        s.push_str(&format!("probe_interval = {:?}\n", self.output.probe_interval));
        s.push_str(&format!("probe_quantity = {}\n", self.output.probe_quantity));
        s
    }

    /// Build a ready-to-run simulation from the parsed configuration.
    pub fn to_simulation(&self) -> Result<Simulation, ConfigError> {
        let (grid, flags) = build_grid(&self.grid).map_err(|e2| err(e2.to_string()))?;
        let (parcels, stress, wall) = match &self.solids {
            Some(s) => {
                let parcels = populate_bed(
                    s.bed, s.eps_p0, s.d_p, s.rho_p, s.omega, s.seed, &grid,
                )
                .map_err(|e2| err(e2.to_string()))?;
                (parcels, s.stress, s.wall)
            }
            None => (ParcelSet::default(), StressParams::default(), WallModel::default()),
        };
        let assignment = parse_assignment(&self.parallel.devices, self.parallel.workers)
            .map_err(|e2| err(e2.to_string()))?;
        Simulation::new(
            grid,
            flags,
            self.gas.clone(),
            self.bc.clone(),
            stress,
            wall,
            self.simple.clone(),
            self.time.ctl.clone(),
            assignment,
            self.parallel.coupling,
            parcels,
        )
        .map_err(|e2| err(e2.to_string()))
    }
}
