//! Strong/weak scaling drivers, per-phase wall-time bookkeeping, and the
//! energy-consumption estimator.
//!
//! Hardware-dependent speedups are recorded, never asserted; the
//! equivalence column, by contrast, is exact by construction and reports
//! the minimum matching digits against the single-worker run.

use crate::fields::{BcSpec, GasProps};
use crate::grid::{build_grid, Box3, Face, GridConfig};
use crate::lagrangian::{populate_bed, ParcelSet, StressParams, WallModel};
use crate::scheduler::{parse_assignment, CouplingMode, Simulation};
use crate::eulerian::{SimpleConfig, TimeController};
use crate::verify::{digits_matching, DIGITS_MAX};
use std::fmt;

/// Wall time per phase plus iteration counts, accumulated over a run.
///
/// The time-per-SIMPLE-iteration metric divides the wall time spent inside
/// the SIMPLE routine (particle coupling included, parcel advance excluded)
/// by the total outer iterations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TimingRecord {
    pub deposit_s: f64,
    pub drag_s: f64,
    pub momentum_s: f64,
    pub pressure_s: f64,
    pub correct_s: f64,
    pub advance_s: f64,
    pub outer_iters: u64,
    pub steps: u64,
}

impl TimingRecord {
    /// Wall time attributed to the SIMPLE routine.
    pub fn simple_time_s(&self) -> f64 {
        self.deposit_s + self.drag_s + self.momentum_s + self.pressure_s + self.correct_s
    }

    pub fn time_per_simple_iteration(&self) -> f64 {
        if self.outer_iters == 0 {
            0.0
        } else {
            self.simple_time_s() / self.outer_iters as f64
        }
    }
}

#[derive(Debug)]
pub struct BenchError(pub String);

impl fmt::Display for BenchError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "benchmark error: {}", self.0)
    }
}

impl std::error::Error for BenchError {}

// ---------------------------------------------------------------------------
// Energy model
// ---------------------------------------------------------------------------

/// Named resources with watt ratings.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerModel {
    pub resources: Vec<(String, f64)>,
}

impl Default for PowerModel {
    fn default() -> Self {
        PowerModel {
            resources: vec![
                ("cpu_node".into(), 806.7),
                ("dgx_base".into(), 6500.0),
                ("a100".into(), 400.0),
            ],
        }
    }
}

impl PowerModel {
    pub fn rating(&self, name: &str) -> Result<f64, BenchError> {
        self.resources
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, w)| w)
            .ok_or_else(|| BenchError(format!("unknown resource {name:?}")))
    }

    /// Effective draw of a DGX-class box running `gpus_used` of its eight
    /// accelerators: base rating minus the idle accelerators' share.
    pub fn dgx_effective_watts(&self, gpus_used: usize) -> Result<f64, BenchError> {
        let base = self.rating("dgx_base")?;
        let gpu = self.rating("a100")?;
        Ok(base - (8.0 - gpus_used as f64) * gpu)
    }
}

/// Per-node rating of the reference CPU cluster: 800 W per node plus the
/// per-node share of the interconnect switches (64 edge switches at 187 W
/// and 2 director switches at 229 W over 1856 nodes), both quoted to 0.1 W.
pub fn reference_node_watts() -> f64 {
    let interconnect_per_node = crate::util::round1((64.0 * 187.0 + 2.0 * 229.0) / 1856.0);
    crate::util::round1(800.0 + interconnect_per_node)
}

/// Energy (J) for a set of `(resource, count)` usages over a wall time.
pub fn energy_estimate(
    model: &PowerModel,
    usage: &[(&str, f64)],
    wall_s: f64,
) -> Result<f64, BenchError> {
    let mut total = 0.0;
    for &(name, count) in usage {
        total += model.rating(name)? * count * wall_s;
    }
    Ok(total)
}

/// Fractional savings of configuration `a` against configuration `b`.
pub fn energy_savings(energy_a: f64, energy_b: f64) -> f64 {
    1.0 - energy_a / energy_b
}

// ---------------------------------------------------------------------------
// Benchmark cases
// ---------------------------------------------------------------------------

/// A runnable benchmark configuration at a given size scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchCase {
    /// Single-phase backward-facing step channel.
    Bfs,
    /// MP-PIC fluidized bed.
    Bed,
}

impl BenchCase {
    pub fn name(&self) -> &'static str {
        match self {
            BenchCase::Bfs => "bfs",
            BenchCase::Bed => "bed",
        }
    }

    /// Build a simulation of this case. `scale` multiplies the streamwise
    /// cell count; for the bed, `parcels_per_scale` decides whether parcel
    /// count follows the mesh (weak scaling families).
    pub fn build(
        &self,
        scale: usize,
        scale_parcels: bool,
        devices: &str,
        coupling: CouplingMode,
    ) -> Result<Simulation, BenchError> {
        let err = |e: &dyn fmt::Display| BenchError(e.to_string());
        match self {
            BenchCase::Bfs => {
                let (grid, flags) = build_grid(&GridConfig {
                    extents: [0.098, 0.049, 0.98],
                    cells: [10, 5, 50 * scale],
                    origin: [0.0; 3],
                    inlet_faces: vec![Face::ZMin],
                    outlet_faces: vec![Face::ZMax],
                    blocked: vec![Box3::new([0.0, 0.0, 0.0], [0.049, 0.049, 0.098])],
                })
                .map_err(|e| err(&e))?;
                let gas = GasProps { rho_g: 1.0, mu_g: 1.8e-5, p_ref: 101_325.0, gravity: [0.0; 3] };
                Simulation::new(
                    grid,
                    flags,
                    gas,
                    BcSpec { inlet_speed: 1.0, outlet_gauge_p: 0.0 },
                    StressParams::default(),
                    WallModel::default(),
                    SimpleConfig { tol: 1e-4, max_outer: 60, ..Default::default() },
                    TimeController::fixed(1e-3),
                    parse_assignment(devices, 8).map_err(|e| err(&e))?,
                    coupling,
                    ParcelSet::default(),
                )
                .map_err(|e| err(&e))
            }
            BenchCase::Bed => {
                let (grid, flags) = build_grid(&GridConfig {
                    extents: [0.12, 0.12, 0.36],
                    cells: [6, 6, 18 * scale],
                    origin: [0.0; 3],
                    inlet_faces: vec![Face::ZMin],
                    outlet_faces: vec![Face::ZMax],
                    blocked: vec![],
                })
                .map_err(|e| err(&e))?;
                // Base omega gives ~8k parcels; halve it per scale step when
                // parcels track the mesh.
                let omega = if scale_parcels { 30_000.0 / scale as f64 } else { 30_000.0 };
                let parcels = populate_bed(
                    Box3::new([0.0; 3], [0.12, 0.12, 0.12]),
                    0.58,
                    200e-6,
                    2000.0,
                    omega,
                    42,
                    &grid,
                )
                .map_err(|e| err(&e))?;
                let gas = GasProps {
                    rho_g: 1.0,
                    mu_g: 1.8e-5,
                    p_ref: 101_325.0,
                    gravity: [0.0, 0.0, -9.81],
                };
                Simulation::new(
                    grid,
                    flags,
                    gas,
                    BcSpec { inlet_speed: 0.15, outlet_gauge_p: 0.0 },
                    StressParams::default(),
                    WallModel::default(),
                    SimpleConfig { tol: 1e-4, max_outer: 60, ..Default::default() },
                    TimeController::fixed(2e-4),
                    parse_assignment(devices, 8).map_err(|e| err(&e))?,
                    coupling,
                    parcels,
                )
                .map_err(|e| err(&e))
            }
        }
    }
}

/// Momentum-worker assignment pattern for a worker count: equations are
/// dealt round-robin over workers starting at worker 2, pressure and the
/// particle workload stay on worker 1. Reproduces 111[1], 212[1], 231[1],
/// 234[1].
pub fn assignment_for_workers(workers: usize) -> String {
    let dev = |i: usize| ((i % workers) + 1).to_string();
    format!("{}{}{}[1]", dev(1), dev(2), dev(3))
}

#[derive(Debug, Clone)]
pub struct StrongRow {
    pub case_name: String,
    pub workers: usize,
    pub assignment: String,
    pub steps: u64,
    pub outer_iters: u64,
    pub time_per_simple_iter_s: f64,
    pub speedup_vs_single: f64,
    /// Minimum matching digits against the single-worker run (16 = bitwise).
    pub equivalence_digits: f64,
}

#[derive(Debug, Clone)]
pub struct StrongScalingReport {
    pub rows: Vec<StrongRow>,
}

impl StrongScalingReport {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("case,workers,assignment,steps,outer_iters,time_per_simple_iter_s,speedup_vs_single,equivalence_digits\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{:.9e},{:.6},{}\n",
                r.case_name,
                r.workers,
                r.assignment,
                r.steps,
                r.outer_iters,
                r.time_per_simple_iter_s,
                r.speedup_vs_single,
                r.equivalence_digits
            ));
        }
        out
    }
}

/// Minimum matching digits between two simulations' states (16 = bitwise).
pub fn state_equivalence_digits(a: &Simulation, b: &Simulation) -> f64 {
    if a.state == b.state && a.parcels == b.parcels {
        return DIGITS_MAX;
    }
    let mut min = DIGITS_MAX;
    let pairs: Vec<(&[f64], &[f64])> = vec![
        (&a.state.eps_g, &b.state.eps_g),
        (&a.state.p, &b.state.p),
        (&a.state.u, &b.state.u),
        (&a.state.v, &b.state.v),
        (&a.state.w, &b.state.w),
        (&a.state.eps_p, &b.state.eps_p),
        (&a.parcels.x, &b.parcels.x),
        (&a.parcels.y, &b.parcels.y),
        (&a.parcels.z, &b.parcels.z),
        (&a.parcels.u, &b.parcels.u),
        (&a.parcels.v, &b.parcels.v),
        (&a.parcels.w, &b.parcels.w),
    ];
    for (xa, xb) in pairs {
        if xa.len() != xb.len() {
            return crate::verify::DIGITS_MIN;
        }
        for (&va, &vb) in xa.iter().zip(xb.iter()) {
            if va != 0.0 {
                min = min.min(digits_matching(va, vb));
            } else if vb != 0.0 {
                min = min.min(crate::verify::DIGITS_MIN);
            }
        }
    }
    min
}

fn run_measured(sim: &mut Simulation, steps: usize) -> Result<(), BenchError> {
    // Warmup step, excluded from the timing record.
    sim.step().map_err(|e| BenchError(e.to_string()))?;
    sim.timing = TimingRecord::default();
    for _ in 0..steps {
        sim.step().map_err(|e| BenchError(e.to_string()))?;
    }
    Ok(())
}

/// Fixed problem size, varying worker count. One warmup step plus `steps`
/// measured steps per entry; every run is checked for equivalence against
/// the single-worker run.
pub fn strong_scaling(
    case: BenchCase,
    worker_counts: &[usize],
    steps: usize,
    coupling: CouplingMode,
) -> Result<StrongScalingReport, BenchError> {
    let mut baseline = case.build(1, false, &assignment_for_workers(1), coupling)?;
    run_measured(&mut baseline, steps)?;
    let base_time = baseline.timing.time_per_simple_iteration();

    let mut rows = Vec::new();
    for &w in worker_counts {
        if w == 0 || w > 8 {
            return Err(BenchError(format!("worker count {w} out of range")));
        }
        let assignment = assignment_for_workers(w);
        let (time, outer, steps_done, equiv) = if w == 1 {
            (
                base_time,
                baseline.timing.outer_iters,
                baseline.timing.steps,
                DIGITS_MAX,
            )
        } else {
            let mut sim = case.build(1, false, &assignment, coupling)?;
            run_measured(&mut sim, steps)?;
            (
                sim.timing.time_per_simple_iteration(),
                sim.timing.outer_iters,
                sim.timing.steps,
                state_equivalence_digits(&sim, &baseline),
            )
        };
        rows.push(StrongRow {
            case_name: case.name().into(),
            workers: w,
            assignment,
            steps: steps_done,
            outer_iters: outer,
            time_per_simple_iter_s: time,
            speedup_vs_single: if time > 0.0 { base_time / time } else { 0.0 },
            equivalence_digits: equiv,
        });
    }
    Ok(StrongScalingReport { rows })
}

#[derive(Debug, Clone)]
pub struct WeakRow {
    pub case_name: String,
    pub family: String,
    pub scale: usize,
    pub cells: usize,
    pub parcels: usize,
    pub steps: u64,
    pub outer_iters: u64,
    pub time_per_simple_iter_s: f64,
    /// (t / t_base) / (workload / workload_base); near one means time grows
    /// with workload (saturation diagnostic).
    pub time_workload_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct WeakScalingReport {
    pub rows: Vec<WeakRow>,
}

impl WeakScalingReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "case,family,scale,cells,parcels,steps,outer_iters,time_per_simple_iter_s,time_workload_ratio\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{:.9e},{:.6}\n",
                r.case_name,
                r.family,
                r.scale,
                r.cells,
                r.parcels,
                r.steps,
                r.outer_iters,
                r.time_per_simple_iter_s,
                r.time_workload_ratio
            ));
        }
        out
    }
}

/// Which quantities grow with the scale in a weak-scaling family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeakFamily {
    /// Cells grow, no parcels (single phase).
    Cells,
    /// Cells grow, parcel count fixed.
    ConstantParcels,
    /// Cells and parcels grow together.
    VariableParcels,
}

impl WeakFamily {
    fn name(&self) -> &'static str {
        match self {
            WeakFamily::Cells => "cells",
            WeakFamily::ConstantParcels => "constant_parcels",
            WeakFamily::VariableParcels => "variable_parcels",
        }
    }
}

/// Fixed worker assignment, growing problem size.
pub fn weak_scaling(
    case: BenchCase,
    family: WeakFamily,
    scales: &[usize],
    steps: usize,
    devices: &str,
    coupling: CouplingMode,
) -> Result<WeakScalingReport, BenchError> {
    if scales.is_empty() {
        return Err(BenchError("empty scale list".into()));
    }
    let mut prev_scale = 0usize;
    for &s in scales {
        if s <= prev_scale {
            return Err(BenchError("scale list must be strictly increasing".into()));
        }
        prev_scale = s;
    }
    let mut rows: Vec<WeakRow> = Vec::new();
    let mut base: Option<(f64, f64)> = None;
    for &scale in scales {
        let scale_parcels = family == WeakFamily::VariableParcels;
        let mut sim = case.build(scale, scale_parcels, devices, coupling)?;
        if family == WeakFamily::Cells && !sim.parcels.is_empty() {
            return Err(BenchError("cells-only family needs a single-phase case".into()));
        }
        let cells = sim.grid.nx * sim.grid.ny * sim.grid.nz;
        let parcels = sim.parcels.len();
        run_measured(&mut sim, steps)?;
        let time = sim.timing.time_per_simple_iteration();
        let workload = (cells + parcels) as f64;
        let (t0, w0) = *base.get_or_insert((time, workload));
        rows.push(WeakRow {
            case_name: case.name().into(),
            family: family.name().into(),
            scale,
            cells,
            parcels,
            steps: sim.timing.steps,
            outer_iters: sim.timing.outer_iters,
            time_per_simple_iter_s: time,
            time_workload_ratio: if t0 > 0.0 && w0 > 0.0 { (time / t0) / (workload / w0) } else { 0.0 },
        });
    }
    Ok(WeakScalingReport { rows })
}
