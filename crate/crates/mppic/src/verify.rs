//! State dumps, the significant-digits comparison metric, and histogram
//! reports.
//!
//! # Dump format (`.mpxd`)
//!
//! Little-endian binary, fixed layout:
//!
//! | bytes | content                                         |
//! |-------|-------------------------------------------------|
//! | 4     | magic `MPXD`                                    |
//! | 4     | format version (u32, currently 1)               |
//! | 12    | interior cell counts nx, ny, nz (u32 each)      |
//! | 48    | dx, dy, dz, origin x/y/z (f64 each)             |
//! | 8     | parcel count (u64)                              |
//! | 16    | time, dt (f64 each)                             |
//!
//! followed by the cell arrays, each `(nx+2)(ny+2)(nz+2)` binary64 values in
//! the order eps_g, p_gauge, u, v, w, eps_p, F_x, F_y, F_z, and then the
//! parcel arrays, each `parcel count` values: x, y, z, u, v, w, d, rho,
//! omega. `load(save(s))` is bitwise identical to `s`.

use crate::lagrangian::ParcelSet;
use crate::scheduler::Simulation;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const DUMP_MAGIC: [u8; 4] = *b"MPXD";
pub const DUMP_VERSION: u32 = 1;

/// Digits clamp range: exact matches report 16, gross mismatches -5.
pub const DIGITS_MAX: f64 = 16.0;
pub const DIGITS_MIN: f64 = -5.0;

const FIELD_NAMES: [&str; 9] = ["eps_g", "p", "u", "v", "w", "eps_p", "F_x", "F_y", "F_z"];
const PARCEL_NAMES: [&str; 9] = [
    "parcel_x", "parcel_y", "parcel_z", "parcel_u", "parcel_v", "parcel_w", "parcel_d",
    "parcel_rho", "parcel_omega",
];

/// In-memory image of one dump file.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldDump {
    pub nx: u32,
    pub ny: u32,
    pub nz: u32,
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    pub time: f64,
    pub dt: f64,
    /// Cell arrays in file order (see module docs).
    pub fields: Vec<Vec<f64>>,
    pub parcels: ParcelSet,
}

impl FieldDump {
    pub fn stored_len(&self) -> usize {
        (self.nx as usize + 2) * (self.ny as usize + 2) * (self.nz as usize + 2)
    }

    pub fn field(&self, name: &str) -> Option<&[f64]> {
        FIELD_NAMES
            .iter()
            .position(|&n| n == name)
            .map(|i| self.fields[i].as_slice())
    }
}

#[derive(Debug)]
pub enum DumpError {
    Io(std::io::Error),
    BadMagic,
    BadVersion(u32),
    Truncated,
    TrailingBytes,
    ShapeMismatch(String),
}

impl fmt::Display for DumpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DumpError::Io(e) => write!(f, "dump I/O error: {e}"),
            DumpError::BadMagic => write!(f, "not a field dump (bad magic)"),
            DumpError::BadVersion(v) => write!(f, "unsupported dump version {v}"),
            DumpError::Truncated => write!(f, "dump truncated (corrupt header or payload)"),
            DumpError::TrailingBytes => write!(f, "dump has trailing bytes beyond its payload"),
            DumpError::ShapeMismatch(m) => write!(f, "shape mismatch: {m}"),
        }
    }
}

impl std::error::Error for DumpError {}

impl From<std::io::Error> for DumpError {
    fn from(e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            DumpError::Truncated
        } else {
            DumpError::Io(e)
        }
    }
}

fn write_f64s<W: Write>(w: &mut W, vals: &[f64]) -> Result<(), DumpError> {
    for &v in vals {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>, DumpError> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Write the solver state to `path` in the dump format.
pub fn dump_state(sim: &Simulation, path: &Path) -> Result<(), DumpError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&DUMP_MAGIC)?;
    w.write_all(&DUMP_VERSION.to_le_bytes())?;
    for n in [sim.grid.nx as u32, sim.grid.ny as u32, sim.grid.nz as u32] {
        w.write_all(&n.to_le_bytes())?;
    }
    for v in [
        sim.grid.dx,
        sim.grid.dy,
        sim.grid.dz,
        sim.grid.origin[0],
        sim.grid.origin[1],
        sim.grid.origin[2],
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&(sim.parcels.len() as u64).to_le_bytes())?;
    w.write_all(&sim.time.to_le_bytes())?;
    w.write_all(&sim.timectl.dt.to_le_bytes())?;

    let s = &sim.state;
    for arr in [&s.eps_g, &s.p, &s.u, &s.v, &s.w, &s.eps_p, &s.fx, &s.fy, &s.fz] {
        write_f64s(&mut w, arr)?;
    }
    let p = &sim.parcels;
    for arr in [&p.x, &p.y, &p.z, &p.u, &p.v, &p.w, &p.d, &p.rho, &p.omega] {
        write_f64s(&mut w, arr)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a dump file back into memory, validating magic, version, and length.
pub fn load_state(path: &Path) -> Result<FieldDump, DumpError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != DUMP_MAGIC {
        return Err(DumpError::BadMagic);
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != DUMP_VERSION {
        return Err(DumpError::BadVersion(version));
    }
    let mut dims = [0u32; 3];
    for d in dims.iter_mut() {
        r.read_exact(&mut u32buf)?;
        *d = u32::from_le_bytes(u32buf);
    }
    let geo = read_f64s(&mut r, 6)?;
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf)?;
    let parcel_count = u64::from_le_bytes(u64buf) as usize;
    let tt = read_f64s(&mut r, 2)?;

    let stored = (dims[0] as usize + 2) * (dims[1] as usize + 2) * (dims[2] as usize + 2);
    let mut fields = Vec::with_capacity(9);
    for _ in 0..9 {
        fields.push(read_f64s(&mut r, stored)?);
    }
    let mut parr = Vec::with_capacity(9);
    for _ in 0..9 {
        parr.push(read_f64s(&mut r, parcel_count)?);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(DumpError::TrailingBytes);
    }

    let mut it = parr.into_iter();
    let parcels = ParcelSet {
        x: it.next().unwrap(),
        y: it.next().unwrap(),
        z: it.next().unwrap(),
        u: it.next().unwrap(),
        v: it.next().unwrap(),
        w: it.next().unwrap(),
        d: it.next().unwrap(),
        rho: it.next().unwrap(),
        omega: it.next().unwrap(),
    };
    Ok(FieldDump {
        nx: dims[0],
        ny: dims[1],
        nz: dims[2],
        spacing: [geo[0], geo[1], geo[2]],
        origin: [geo[3], geo[4], geo[5]],
        time: tt[0],
        dt: tt[1],
        fields,
        parcels,
    })
}

/// Install a loaded dump into a simulation built for the same grid. The run
/// continues bitwise identically to one that never paused.
pub fn restore_state(sim: &mut Simulation, dump: &FieldDump) -> Result<(), DumpError> {
    if dump.nx as usize != sim.grid.nx
        || dump.ny as usize != sim.grid.ny
        || dump.nz as usize != sim.grid.nz
    {
        return Err(DumpError::ShapeMismatch(format!(
            "dump grid {}x{}x{} vs simulation {}x{}x{}",
            dump.nx, dump.ny, dump.nz, sim.grid.nx, sim.grid.ny, sim.grid.nz
        )));
    }
    let s = &mut sim.state;
    s.eps_g = dump.fields[0].clone();
    s.p = dump.fields[1].clone();
    s.u = dump.fields[2].clone();
    s.v = dump.fields[3].clone();
    s.w = dump.fields[4].clone();
    s.eps_p = dump.fields[5].clone();
    s.fx = dump.fields[6].clone();
    s.fy = dump.fields[7].clone();
    s.fz = dump.fields[8].clone();
    // The next step replaces eps_go with the current eps_g before use.
    s.eps_go = dump.fields[0].clone();
    sim.parcels = dump.parcels.clone();
    sim.time = dump.time;
    sim.timectl.dt = dump.dt;
    Ok(())
}

/// Matching significant digits between a reference `a` and a comparison `b`:
/// `-log10(|a - b| / |a|)`, clamped to 16 for exact matches and to -5 below.
/// Callers exclude zero references.
pub fn digits_matching(a: f64, b: f64) -> f64 {
    if a == b {
        return DIGITS_MAX;
    }
    let d = -((a - b).abs() / a.abs()).log10();
    if d.is_nan() {
        return DIGITS_MIN;
    }
    d.clamp(DIGITS_MIN, DIGITS_MAX)
}

/// Integer-binned histogram of matching-digit counts over [-5, 16].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DigitsHistogram {
    /// counts[i] holds bin i - 5.
    pub counts: [u64; 22],
    /// Entries skipped because the reference value was zero.
    pub zero_refs: u64,
}

impl Default for DigitsHistogram {
    fn default() -> Self {
        DigitsHistogram { counts: [0; 22], zero_refs: 0 }
    }
}

impl DigitsHistogram {
    pub fn add(&mut self, reference: f64, other: f64) {
        if reference == 0.0 {
            self.zero_refs += 1;
            return;
        }
        let bin = digits_matching(reference, other).round() as i64 + 5;
        self.counts[bin.clamp(0, 21) as usize] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Lowest occupied bin value, if any entries were compared.
    pub fn min_digits(&self) -> Option<i32> {
        self.counts.iter().position(|&c| c > 0).map(|i| i as i32 - 5)
    }

    /// Most frequent bin (ties resolve to the lower bin).
    pub fn mode_digits(&self) -> Option<i32> {
        let mut best: Option<(usize, u64)> = None;
        for (i, &c) in self.counts.iter().enumerate() {
            if c > 0 && best.map_or(true, |(_, bc)| c > bc) {
                best = Some((i, c));
            }
        }
        best.map(|(i, _)| i as i32 - 5)
    }

    /// Median bin by cumulative count.
    pub fn median_digits(&self) -> Option<i32> {
        let total = self.total();
        if total == 0 {
            return None;
        }
        let half = total.div_ceil(2);
        let mut acc = 0;
        for (i, &c) in self.counts.iter().enumerate() {
            acc += c;
            if acc >= half {
                return Some(i as i32 - 5);
            }
        }
        None
    }

    /// True when every compared entry landed in exactly one bin.
    pub fn single_bar_at(&self, digits: i32) -> bool {
        let idx = (digits + 5) as usize;
        self.total() > 0 && self.counts[idx] == self.total()
    }
}

/// Per-variable histogram report from comparing two dumps.
#[derive(Debug, Clone)]
pub struct CompareReport {
    pub variables: Vec<(String, DigitsHistogram)>,
}

impl CompareReport {
    /// CSV with columns `variable,digits_bin,count` (occupied bins only),
    /// plus `variable,zero_refs,count` rows for excluded entries.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variable,digits_bin,count\n");
        for (name, hist) in &self.variables {
            for (i, &c) in hist.counts.iter().enumerate() {
                if c > 0 {
                    out.push_str(&format!("{name},{},{c}\n", i as i32 - 5));
                }
            }
            if hist.zero_refs > 0 {
                out.push_str(&format!("{name},zero_refs,{}\n", hist.zero_refs));
            }
        }
        out
    }

    pub fn summary_lines(&self) -> Vec<String> {
        self.variables
            .iter()
            .map(|(name, h)| {
                format!(
                    "{name}: n={} min={} median={} mode={} zero_refs={}",
                    h.total(),
                    h.min_digits().map_or("-".into(), |v| v.to_string()),
                    h.median_digits().map_or("-".into(), |v| v.to_string()),
                    h.mode_digits().map_or("-".into(), |v| v.to_string()),
                    h.zero_refs
                )
            })
            .collect()
    }
}

/// Element-wise digits comparison of two dumps of the same shape. Variable
/// `a` is the reference; parcels are compared by index.
pub fn compare_dumps(a: &FieldDump, b: &FieldDump) -> Result<CompareReport, DumpError> {
    if (a.nx, a.ny, a.nz) != (b.nx, b.ny, b.nz) {
        return Err(DumpError::ShapeMismatch(format!(
            "grids {}x{}x{} vs {}x{}x{}",
            a.nx, a.ny, a.nz, b.nx, b.ny, b.nz
        )));
    }
    if a.parcels.len() != b.parcels.len() {
        return Err(DumpError::ShapeMismatch(format!(
            "parcel counts {} vs {}",
            a.parcels.len(),
            b.parcels.len()
        )));
    }
    let mut variables = Vec::new();
    for (i, name) in FIELD_NAMES.iter().enumerate() {
        let mut hist = DigitsHistogram::default();
        for (&x, &y) in a.fields[i].iter().zip(b.fields[i].iter()) {
            hist.add(x, y);
        }
        variables.push((name.to_string(), hist));
    }
    let pa = &a.parcels;
    let pb = &b.parcels;
    let pairs: [(&[f64], &[f64]); 9] = [
        (&pa.x, &pb.x),
        (&pa.y, &pb.y),
        (&pa.z, &pb.z),
        (&pa.u, &pb.u),
        (&pa.v, &pb.v),
        (&pa.w, &pb.w),
        (&pa.d, &pb.d),
        (&pa.rho, &pb.rho),
        (&pa.omega, &pb.omega),
    ];
    for (name, (xa, xb)) in PARCEL_NAMES.iter().zip(pairs) {
        let mut hist = DigitsHistogram::default();
        for (&x, &y) in xa.iter().zip(xb.iter()) {
            hist.add(x, y);
        }
        variables.push((name.to_string(), hist));
    }
    Ok(CompareReport { variables })
}

/// File-path convenience wrapper over [`compare_dumps`].
pub fn compare_dump_files(a: &Path, b: &Path) -> Result<CompareReport, DumpError> {
    let da = load_state(a)?;
    let db = load_state(b)?;
    compare_dumps(&da, &db)
}
