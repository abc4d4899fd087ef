//! Acceptance suite. Each numbered check prints one pass/fail line; run with
//! `cargo test -p mppic --test acceptance -- --nocapture` to see them.

use mppic::bench::{self, BenchCase, PowerModel};
use mppic::drag::{syamlal_obrien_coefficient, syamlal_obrien_vr};
use mppic::fields::GasProps;
use mppic::grid::Lattice;
use mppic::lagrangian::{solids_stress, ParcelSet, StressParams};
use mppic::probe::{spectrum, ProbeSeries};
use mppic::scheduler::{CouplingMode, RunOptions, Simulation};
use mppic::util::neumaier_sum;
use mppic::verify;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn config_text(name: &str) -> &'static str {
    match name {
        "bed_desk" => include_str!("../../../configs/bed_desk.cfg"),
        "bfs" => include_str!("../../../configs/bfs.cfg"),
        other => panic!("unknown config {other}"),
    }
}

fn build_sim(name: &str, devices: &str, coupling: CouplingMode) -> Simulation {
    let mut cfg = mppic::parse_config_str(config_text(name)).expect("config parses");
    cfg.parallel.devices = devices.to_string();
    cfg.parallel.coupling = coupling;
    cfg.to_simulation().expect("simulation builds")
}

struct Criterion {
    label: &'static str,
    started: Instant,
}

impl Criterion {
    fn new(label: &'static str) -> Self {
        Criterion { label, started: Instant::now() }
    }

    fn check(&self, pass: bool, detail: &str) {
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!(
            "ACCEPTANCE {} {verdict} ({:.1} s): {detail}",
            self.label,
            self.started.elapsed().as_secs_f64()
        );
        assert!(pass, "criterion {} failed: {detail}", self.label);
    }
}

#[test]
fn criterion_01_equation_parallel_equivalence() {
    let c = Criterion::new("1 equation-parallel equivalence");
    let mut a = build_sim("bed_desk", "111[1]", CouplingMode::Explicit);
    let mut b = build_sim("bed_desk", "234[1234]", CouplingMode::Explicit);
    assert!(a.parcels.len() > 70_000 && a.parcels.len() < 90_000, "~8e4 parcels expected");
    a.step().expect("111[1] step");
    b.step().expect("234[1234] step");
    let identical = a.state == b.state && a.parcels == b.parcels;
    c.check(
        identical,
        &format!(
            "one desk-bed step, 111[1] vs 234[1234] with {} parcels: bitwise identical = {identical}",
            a.parcels.len()
        ),
    );
}

#[test]
fn criterion_02_digits_matching_tool() {
    let c = Criterion::new("2 digits-matching tool");
    let dir = tempfile::tempdir().unwrap();
    let path_a = dir.path().join("a.mpxd");
    let path_b = dir.path().join("b.mpxd");

    // A short active run gives nonzero values in every field family; flush
    // anything tiny so the uniform relative perturbation is representable
    // everywhere.
    let mut sim = build_sim("bed_desk", "111[1]", CouplingMode::Explicit);
    sim.step().unwrap();
    sim.step().unwrap();
    for arr in [
        &mut sim.state.eps_g,
        &mut sim.state.p,
        &mut sim.state.u,
        &mut sim.state.v,
        &mut sim.state.w,
        &mut sim.state.eps_p,
        &mut sim.state.fx,
        &mut sim.state.fy,
        &mut sim.state.fz,
    ] {
        for x in arr.iter_mut() {
            if x.abs() < 1e-30 {
                *x = 0.0;
            }
        }
    }
    verify::dump_state(&sim, &path_a).unwrap();

    let mut dump = verify::load_state(&path_a).unwrap();
    for field in dump.fields.iter_mut() {
        for x in field.iter_mut() {
            *x *= 1.0 + 1e-9;
        }
    }
    for arr in [
        &mut dump.parcels.x,
        &mut dump.parcels.y,
        &mut dump.parcels.z,
        &mut dump.parcels.u,
        &mut dump.parcels.v,
        &mut dump.parcels.w,
        &mut dump.parcels.d,
        &mut dump.parcels.rho,
        &mut dump.parcels.omega,
    ] {
        for x in arr.iter_mut() {
            *x *= 1.0 + 1e-9;
        }
    }
    let mut sim_b = build_sim("bed_desk", "111[1]", CouplingMode::Explicit);
    verify::restore_state(&mut sim_b, &dump).unwrap();
    verify::dump_state(&sim_b, &path_b).unwrap();

    let perturbed = verify::compare_dump_files(&path_a, &path_b).unwrap();
    let mut nonzero_vars = 0;
    let mut all_at_nine = true;
    for (name, hist) in &perturbed.variables {
        if hist.total() == 0 {
            continue;
        }
        nonzero_vars += 1;
        if !hist.single_bar_at(9) {
            all_at_nine = false;
            eprintln!("variable {name} not a single bar at 9: {:?}", hist.counts);
        }
    }
    let self_cmp = verify::compare_dump_files(&path_a, &path_a).unwrap();
    let all_sixteen = self_cmp
        .variables
        .iter()
        .filter(|(_, h)| h.total() > 0)
        .all(|(_, h)| h.single_bar_at(16));
    c.check(
        all_at_nine && all_sixteen && nonzero_vars >= 15,
        &format!(
            "1e-9 perturbation -> single bar at 9 for {nonzero_vars} nonzero variables = {all_at_nine}; self-compare all at 16 = {all_sixteen}"
        ),
    );
}

#[test]
fn criterion_03_bed_pressure_drop_and_08_bed_spectrum() {
    let c = Criterion::new("3 bed pressure drop");
    let mut cfg = mppic::parse_config_str(config_text("bed_desk")).unwrap();
    cfg.time.t_end = 3.0;
    cfg.time.mean_discard = 1.0;
    let mut sim = cfg.to_simulation().unwrap();
    let opts = RunOptions {
        t_end: cfg.time.t_end,
        mean_discard: cfg.time.mean_discard,
        probe_points: cfg.output.probes.clone(),
        probe_interval: cfg.output.probe_interval,
        probe_quantity: cfg.output.probe_quantity,
        dump_every: 0.0,
        dump_dir: None,
    };
    let outputs = sim.run(&opts).expect("bed run completes");

    // Time-averaged cross-section pressure at the bottom and top interior
    // layers; the outlet holds gauge zero at the top face.
    let grid = &sim.grid;
    let layer_mean = |k: usize| -> f64 {
        let mut sum = 0.0;
        let mut n = 0;
        for j in 1..=grid.ny {
            for i in 1..=grid.nx {
                let idx = grid.idx(i, j, k);
                if sim.flags.is_fluid(idx) {
                    sum += outputs.mean.mean_p(idx);
                    n += 1;
                }
            }
        }
        sum / n as f64
    };
    let dp = layer_mean(1) - layer_mean(grid.nz);
    let target = 0.58 * 2000.0 * 9.81 * 0.12;
    let rel = ((dp - target) / target).abs();
    c.check(
        rel <= 0.10,
        &format!(
            "time-mean inlet-to-outlet pressure drop {dp:.1} Pa vs bed weight {target:.1} Pa ({:.1}% off, tolerance 10%)",
            rel * 100.0
        ),
    );

    // Criterion 8 (bed part): a dominant bubbling frequency in (0.5, 10) Hz
    // from the eps_g probe at the bed center over the averaged window.
    let c8 = Criterion::new("8b bed bubbling spectrum");
    let sampler = &outputs.probes[0];
    let mut window = ProbeSeries::default();
    for (t, v) in sampler.series.times.iter().zip(sampler.series.values.iter()) {
        if *t >= 1.0 && *t < 3.0 {
            window.push(*t, *v);
        }
    }
    let spec = spectrum(&window).expect("windowed probe series spectrum");
    let dominant = spec.dominant_hz;
    c8.check(
        dominant > 0.5 && dominant < 10.0,
        &format!(
            "dominant bubbling frequency {dominant:.3} Hz from {} samples lies in (0.5, 10) Hz",
            window.len()
        ),
    );
}

#[test]
fn criterion_04_coupling_contract() {
    let c = Criterion::new("4 explicit/implicit coupling contract");

    // Frozen zero-slip configuration: sealed box, no gravity, everything at
    // rest. The drag field is identically zero in both modes and the steps
    // must agree bitwise.
    let quiescent = |coupling| -> Simulation {
        let text = "\
[grid]
size = 0.04 0.04 0.04
cells = 4 4 4
[gas]
rho = 1.093
mu = 1.9e-5
gravity = 0 0 0
[solids]
d_p = 400e-6
rho_p = 2000
omega = 500
eps_p0 = 0.2
bed = 0 0 0  0.04 0.04 0.04
seed = 9
[time]
dt0 = 1e-3
dt_min = 1e-3
dt_max = 1e-3
";
        let mut cfg = mppic::parse_config_str(text).unwrap();
        cfg.parallel.coupling = coupling;
        cfg.to_simulation().unwrap()
    };
    let mut e = quiescent(CouplingMode::Explicit);
    let mut i = quiescent(CouplingMode::Implicit);
    let re = e.step().unwrap();
    let ri = i.step().unwrap();
    let zero_slip_identical = e.state == i.state
        && e.parcels == i.parcels
        && e.state.fx.iter().all(|&f| f == 0.0);

    // Active parcels: drag-field builds counted per step.
    let mut ae = build_sim("bed_desk", "111[1]", CouplingMode::Explicit);
    let mut ai = build_sim("bed_desk", "111[1]", CouplingMode::Implicit);
    let rae = ae.step().unwrap();
    let rai = ai.step().unwrap();
    let counts_ok = rae.drag_evaluations == 1
        && rai.drag_evaluations == rai.outer_iters
        && rai.outer_iters > 1
        && re.drag_evaluations == 1
        && ri.drag_evaluations == ri.outer_iters;
    c.check(
        zero_slip_identical && counts_ok,
        &format!(
            "zero-slip bitwise equality = {zero_slip_identical}; F builds: explicit {} per step, implicit {} over {} iterations",
            rae.drag_evaluations, rai.drag_evaluations, rai.outer_iters
        ),
    );
}

#[test]
fn criterion_05_conservation_suite() {
    let c = Criterion::new("5 conservation suite");

    // (a) Deposition volume conservation with 1e5 random parcels.
    let (grid, _) = mppic::grid::build_grid(&mppic::grid::GridConfig {
        extents: [0.12, 0.12, 0.36],
        cells: [12, 12, 36],
        origin: [0.0; 3],
        inlet_faces: vec![],
        outlet_faces: vec![],
        blocked: vec![],
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 100_000;
    let mut parcels = ParcelSet::default();
    for _ in 0..n {
        parcels.x.push(rng.gen::<f64>() * 0.12);
        parcels.y.push(rng.gen::<f64>() * 0.12);
        parcels.z.push(rng.gen::<f64>() * 0.36);
        parcels.d.push(rng.gen_range(50e-6..600e-6));
        parcels.omega.push(rng.gen_range(1.0..5000.0));
    }
    parcels.u = vec![0.0; n];
    parcels.v = vec![0.0; n];
    parcels.w = vec![0.0; n];
    parcels.rho = vec![2000.0; n];
    let dep = mppic::lagrangian::deposit(&parcels, &grid).unwrap();
    let deposited = neumaier_sum(dep.eps_p.iter().map(|&e| e * grid.cell_volume()));
    let expected = neumaier_sum((0..n).map(|i| parcels.volume(i)));
    let dep_rel = ((deposited - expected) / expected).abs();

    // (b) Gas mass balance at single-phase BFS convergence.
    let mut cfg = mppic::parse_config_str(config_text("bfs")).unwrap();
    cfg.time.t_end = 0.06; // three fixed 0.02 s steps, each tightly converged
    let mut sim = cfg.to_simulation().unwrap();
    let outputs = sim.run(&RunOptions { t_end: cfg.time.t_end, ..Default::default() }).unwrap();
    let last = outputs.step_logs.last().unwrap();
    let (inflow, outflow) =
        mppic::fields::boundary_mass_flows(&sim.state, &sim.grid, &sim.flags, &sim.gas);
    let flux_rel = ((inflow - outflow) / inflow).abs();

    // (c) Drag momentum bookkeeping with 1e5 random parcels.
    let gas = GasProps { rho_g: 1.093, mu_g: 1.9e-5, p_ref: 0.0, gravity: [0.0; 3] };
    let mut state = mppic::fields::FieldState::new(&grid);
    for (i, x) in state.u.iter_mut().enumerate() {
        *x = 0.3 + 1e-4 * (i % 17) as f64;
    }
    for (i, z) in state.w.iter_mut().enumerate() {
        *z = -0.1 + 1e-4 * (i % 13) as f64;
    }
    for (i, e) in state.eps_g.iter_mut().enumerate() {
        *e = 0.55 + 1e-3 * (i % 7) as f64;
    }
    let drag = mppic::drag::compute_parcel_drag(&parcels, &state, &grid, &gas).unwrap();
    let faces = mppic::drag::accumulate_face_forces(&parcels, &drag.force, &grid).unwrap();
    let mut drag_rel: f64 = 0.0;
    for axis in 0..3 {
        let gas_side = neumaier_sum(faces[axis].iter().map(|&f| f * grid.cell_volume()));
        let parcel_side = neumaier_sum(drag.force.iter().map(|f| f[axis]));
        let scale = neumaier_sum(drag.force.iter().map(|f| f[axis].abs())).max(1e-300);
        drag_rel = drag_rel.max(((gas_side - parcel_side) / scale).abs());
    }

    c.check(
        dep_rel <= 1e-12 && flux_rel <= 1e-6 && drag_rel <= 1e-12 && last.converged,
        &format!(
            "deposition rel err {dep_rel:.2e} (<=1e-12); BFS in/out mismatch {flux_rel:.2e} (<=1e-6, inflow {inflow:.4e} kg/s, converged={}); drag bookkeeping rel err {drag_rel:.2e} (<=1e-12)",
            last.converged
        ),
    );
}

#[test]
fn criterion_06_restart_determinism() {
    let c = Criterion::new("6 restart/determinism");
    let dir = tempfile::tempdir().unwrap();
    let dump_path = dir.path().join("mid.mpxd");

    // Small but active bed so twenty steps stay fast.
    let text = "\
[grid]
size = 0.04 0.04 0.12
cells = 4 4 12
inlet = zmin
outlet = zmax
[gas]
rho = 1.093
mu = 1.9e-5
gravity = 0 0 -9.81
[solids]
d_p = 400e-6
rho_p = 2000
omega = 200
eps_p0 = 0.3
bed = 0 0 0  0.04 0.04 0.04
seed = 5
[bc]
inlet_speed = 0.25
[simple]
tol = 1e-4
max_outer = 60
[time]
dt0 = 2e-4
dt_min = 1e-6
dt_max = 5e-4
";
    let cfg = mppic::parse_config_str(text).unwrap();
    let mut straight = cfg.to_simulation().unwrap();
    for _ in 0..20 {
        straight.step().unwrap();
    }

    let mut first_half = cfg.to_simulation().unwrap();
    for _ in 0..10 {
        first_half.step().unwrap();
    }
    verify::dump_state(&first_half, &dump_path).unwrap();
    let dump = verify::load_state(&dump_path).unwrap();
    let mut resumed = cfg.to_simulation().unwrap();
    verify::restore_state(&mut resumed, &dump).unwrap();
    for _ in 0..10 {
        resumed.step().unwrap();
    }

    let identical = straight.state == resumed.state && straight.parcels == resumed.parcels;
    // Round trip of the dump file itself is bitwise.
    let dump_path2 = dir.path().join("mid2.mpxd");
    verify::dump_state(&first_half, &dump_path2).unwrap();
    let bytes_equal =
        std::fs::read(&dump_path).unwrap() == std::fs::read(&dump_path2).unwrap();
    c.check(
        identical && bytes_equal,
        &format!("20 straight steps vs 10 + dump/load + 10: bitwise identical = {identical}; dump bytes stable = {bytes_equal}"),
    );
}

#[test]
fn criterion_07_closure_unit_checks() {
    let c = Criterion::new("7 closure unit checks");
    let params = StressParams { p_s: 100.0, beta: 3.0, eps_cp: 0.6, alpha: 1e-7 };
    let tau = solids_stress(&[0.5, 0.6], &params);
    let tau_mid_ok = ((tau[0] - 125.0) / 125.0).abs() <= 1e-12;
    let tau_cp_ok = ((tau[1] - 5.4e8) / 5.4e8).abs() <= 1e-12;

    let eps_g: f64 = 0.9;
    let vr = syamlal_obrien_vr(eps_g, 0.0);
    let vr_ok = ((vr - eps_g.powf(4.14)) / vr).abs() <= 1e-12;

    let gas = GasProps { rho_g: 1.093, mu_g: 1.9e-5, p_ref: 0.0, gravity: [0.0; 3] };
    let zero_slip = syamlal_obrien_coefficient(0.7, 0.0, 400e-6, &gas);

    c.check(
        tau_mid_ok && tau_cp_ok && vr_ok && zero_slip == 0.0,
        &format!(
            "tau(0.5) = {:.12e} (125 Pa), tau(0.6) = {:.6e} (5.4e8 Pa), V_r(Re=0) = eps^4.14 to {:.1e}, beta(slip=0) = {zero_slip}",
            tau[0],
            tau[1],
            ((vr - eps_g.powf(4.14)) / vr).abs()
        ),
    );
}

#[test]
fn criterion_08_synthetic_spectrum() {
    let c = Criterion::new("8a synthetic spectrum");
    let fs = 100.0;
    let n = 512;
    let mut series = ProbeSeries::default();
    for i in 0..n {
        let t = i as f64 / fs;
        series.push(t, (2.0 * std::f64::consts::PI * 2.0 * t).sin());
    }
    let spec = spectrum(&series).unwrap();
    let bin_exact = spec.dominant_hz == 10.0 * fs / n as f64; // 1.953125 Hz

    let mean = series.values.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = series.values.iter().map(|&v| v - mean).collect();
    let bins = mppic::probe::dft(&centered);
    let time_energy: f64 = centered.iter().map(|&x| x * x).sum();
    let freq_energy: f64 =
        bins.iter().map(|&(re, im)| re * re + im * im).sum::<f64>() / n as f64;
    let parseval_rel = ((time_energy - freq_energy) / time_energy).abs();

    c.check(
        bin_exact && parseval_rel <= 1e-10,
        &format!(
            "2 Hz sine at 100 Hz/512 samples -> dominant {:.6} Hz (expected 1.953125, exact = {bin_exact}); Parseval rel err {parseval_rel:.2e} (<=1e-10)",
            spec.dominant_hz
        ),
    );
}

#[test]
fn criterion_09_energy_model() {
    let c = Criterion::new("9 energy model");
    let model = PowerModel::default();
    let four_gpu = model.dgx_effective_watts(4).unwrap();
    let node = bench::reference_node_watts();
    let t = 3600.0;
    let e_gpu = four_gpu * t;
    let e_cpu = bench::energy_estimate(&model, &[("cpu_node", 25.0)], t).unwrap();
    let savings_pct = bench::energy_savings(e_gpu, e_cpu) * 100.0;
    // The reported 82%/90% figures additionally reflect measured wall-time
    // ratios on the reference hardware; only the equal-wall-time fraction is
    // asserted here.
    c.check(
        four_gpu == 4900.0 && node == 806.7 && (savings_pct - 75.7).abs() <= 0.1,
        &format!(
            "four-accelerator figure {four_gpu} W (= 4.9 kW), node figure {node} W, equal-wall-time savings {savings_pct:.2}% (75.7 +/- 0.1)"
        ),
    );
}

#[test]
fn criterion_10_strong_scaling_substitute() {
    let c = Criterion::new("10 strong-scaling substitute");
    let host = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let report = bench::strong_scaling(BenchCase::Bed, &[1, 4], 2, CouplingMode::Explicit)
        .expect("strong scaling runs");
    let row1 = &report.rows[0];
    let row4 = &report.rows[1];
    let equiv_ok =
        row1.equivalence_digits == 16.0 && row4.equivalence_digits == 16.0;
    let recorded = row1.time_per_simple_iter_s > 0.0 && row4.time_per_simple_iter_s > 0.0;
    // Speedup is logged, never asserted.
    println!(
        "  strong scaling ({host} host cores): 1 worker {:.3e} s/iter; 4 workers ({}) {:.3e} s/iter; speedup {:.2}",
        row1.time_per_simple_iter_s,
        row4.assignment,
        row4.time_per_simple_iter_s,
        row4.speedup_vs_single
    );
    c.check(
        equiv_ok && recorded && row4.assignment == "234[1]",
        &format!(
            "time-per-SIMPLE-iteration recorded for 1 vs 3 momentum workers; equivalence digits {} and {} (16 = bitwise)",
            row1.equivalence_digits, row4.equivalence_digits
        ),
    );
}

#[test]
fn criterion_08_interpolation_partition_of_unity() {
    // Folded into the conservation story: the acceptance-level partition of
    // unity backing every gather/scatter above. One million interior points.
    let c = Criterion::new("grid partition of unity (supporting)");
    let grid =
        mppic::grid::GridSpec::new([12, 12, 36], [0.12, 0.12, 0.36], [0.0; 3]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    for target in [Lattice::Center, Lattice::XFace, Lattice::YFace, Lattice::ZFace] {
        for _ in 0..250_000 {
            let pos = [
                rng.gen::<f64>() * 0.12,
                rng.gen::<f64>() * 0.12,
                rng.gen::<f64>() * 0.36,
            ];
            let st = mppic::grid::trilinear_stencil(pos, &grid, target).unwrap();
            let sum: f64 = st.w.iter().sum();
            worst = worst.max((sum - 1.0).abs());
        }
    }
    c.check(
        worst <= 1e-15,
        &format!("1e6 random stencils: worst |sum(w) - 1| = {worst:.2e} (<=1e-15)"),
    );
}
