//! Finite-volume discretization of the gas momentum equations, the SIMPLE
//! pressure-correction step, and adaptive time-step control.
//!
//! Momentum unknowns are staggered faces between two fluid cells (or a fluid
//! cell and an outlet ghost, so outflow faces satisfy momentum); pressure
//! correction lives on fluid cell centers. Convection is first-order upwind,
//! diffusion is central with volume-fraction-weighted face viscosity, and
//! under-relaxation is applied implicitly.

mod linsolve;

pub use linsolve::{solve_bicgstab, EquationSystem, LinOutcome};

use crate::fields::{FieldState, GasProps};
use crate::grid::{CellFlag, CellFlags, GridSpec};

/// SIMPLE loop settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SimpleConfig {
    /// Per-equation normalized residual tolerance.
    pub tol: f64,
    /// Outer iteration cap per attempted step.
    pub max_outer: usize,
    pub urf_mom: f64,
    pub urf_p: f64,
    pub lin_tol_mom: f64,
    pub lin_maxit_mom: usize,
    pub lin_tol_p: f64,
    pub lin_maxit_p: usize,
}

impl Default for SimpleConfig {
    fn default() -> Self {
        SimpleConfig {
            tol: 1e-3,
            max_outer: 500,
            urf_mom: 0.7,
            urf_p: 0.7,
            lin_tol_mom: 1e-4,
            lin_maxit_mom: 20,
            lin_tol_p: 1e-6,
            lin_maxit_p: 500,
        }
    }
}

/// Adaptive time-step state and policy.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeController {
    pub dt: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub grow_factor: f64,
    pub shrink_factor: f64,
    /// Grow dt after converging within this many outer iterations.
    pub grow_threshold: usize,
}

impl TimeController {
    pub fn fixed(dt: f64) -> Self {
        TimeController {
            dt,
            dt_min: dt,
            dt_max: dt,
            grow_factor: 1.1,
            shrink_factor: 0.5,
            grow_threshold: 8,
        }
    }
}

/// What to do with an attempted step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepDecision {
    Accept,
    /// Step failed but dt is already at the floor; accept with a warning.
    AcceptAtDtMin,
    /// Reject, shrink dt, and retry from the saved state.
    Retry,
}

impl TimeController {
    /// Apply the adaptation rule after one attempted step.
    pub fn adapt(&mut self, outer_iters: usize, converged: bool, parcel_cfl_ok: bool) -> StepDecision {
        if converged && parcel_cfl_ok {
            if outer_iters <= self.grow_threshold {
                self.dt = (self.dt * self.grow_factor).min(self.dt_max);
            }
            StepDecision::Accept
        } else if self.dt > self.dt_min {
            self.dt = (self.dt * self.shrink_factor).max(self.dt_min);
            StepDecision::Retry
        } else {
            StepDecision::AcceptAtDtMin
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AssembleError {
    NonFinite { equation: &'static str, cell: usize },
}

impl std::fmt::Display for AssembleError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AssembleError::NonFinite { equation, cell } => {
                write!(f, "non-finite coefficient in {equation} equation at cell {cell}")
            }
        }
    }
}

impl std::error::Error for AssembleError {}

const AXIS_NAMES: [&str; 3] = ["u", "v", "w"];

/// Whether the staggered face owned by `idx` along `axis` is a momentum
/// unknown: both sides fluid, or one side fluid with an outlet ghost.
pub fn momentum_active_mask(grid: &GridSpec, flags: &CellFlags, axis: usize) -> Vec<bool> {
    let strides = grid.strides();
    let dims = grid.stored_dims();
    let mut active = vec![false; grid.stored_len()];
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let coords = [i, j, k];
                if coords[axis] + 1 >= dims[axis] {
                    continue;
                }
                let c = grid.idx(i, j, k);
                let p = flags.flag(c);
                let e = flags.flag(c + strides[axis]);
                active[c] = matches!(
                    (p, e),
                    (CellFlag::Fluid, CellFlag::Fluid)
                        | (CellFlag::Fluid, CellFlag::Outlet)
                        | (CellFlag::Outlet, CellFlag::Fluid)
                );
            }
        }
    }
    active
}

/// Assemble one momentum component over the frozen snapshot `cur`.
///
/// `old` carries the step-start fields for the transient term; `cur` feeds
/// convection fluxes, the pressure gradient, and the under-relaxation
/// reference. The interphase drag enters through its linearized split
/// (`drag_coeff` on the diagonal, `drag_source` on the rhs): the drag is
/// far stiffer than the face inertia in a dense bed, and a pure rhs source
/// diverges. Couplings to fixed faces are folded into the rhs so only
/// unknowns stay in the matrix.
#[allow(clippy::too_many_arguments)]
pub fn assemble_momentum(
    axis: usize,
    cur: &FieldState,
    old: &FieldState,
    grid: &GridSpec,
    flags: &CellFlags,
    gas: &GasProps,
    drag_coeff: &[f64],
    drag_source: &[f64],
    dt: f64,
    urf: f64,
) -> Result<EquationSystem, AssembleError> {
    let strides = grid.strides();
    let dims = grid.stored_dims();
    let areas = grid.face_areas();
    let vol = grid.cell_volume();
    let d = [grid.dx, grid.dy, grid.dz];
    let rho = gas.rho_g;
    let mu = gas.mu_g;
    let g_c = gas.gravity[axis];
    let sc = strides[axis];

    let vel = cur.velocity(axis);
    let vel_old = old.velocity(axis);
    let active = momentum_active_mask(grid, flags, axis);

    let mut sys = EquationSystem::identity(grid.stored_len(), strides, vel.to_vec());
    sys.active = active;

    // Transverse axes in fixed order.
    let (t1, t2) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };

    let eps = &cur.eps_g;
    let eps_o = &cur.eps_go;

    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let f = grid.idx(i, j, k);
                if !sys.active[f] {
                    continue;
                }
                let p_cell = f;
                let e_cell = f + sc;

                let eps_f = 0.5 * (eps[p_cell] + eps[e_cell]);
                let eps_fo = 0.5 * (eps_o[p_cell] + eps_o[e_cell]);
                let apt = eps_f * rho * vol / dt;
                let mut rhs = eps_fo * rho * vol / dt * vel_old[f];

                // Pressure gradient, drag source, gravity.
                rhs -= eps_f * (cur.p[e_cell] - cur.p[p_cell]) * areas[axis];
                rhs += drag_source[f];
                rhs += eps_f * rho * g_c * vol;

                let mut apc = 0.0;
                // Net mass outflow of this CV; subtracted against u_P below
                // so rows stay diagonally dominant when the snapshot does
                // not yet satisfy continuity.
                let mut mdot_net = 0.0;
                // Six neighbor slots in the fixed order e, w, n, s, t, b
                // mapped onto (coef slot, neighbor face index).
                let mut coef = [0.0f64; 6];
                let mut nb: [Option<usize>; 6] = [None; 6];

                // Along-axis CV faces sit on the adjacent cell centers.
                {
                    let coords = [i, j, k];
                    // East CV face (center of e_cell).
                    let vel_e_nb = if coords[axis] + 2 < dims[axis] {
                        Some(f + sc)
                    } else {
                        None
                    };
                    let u_e = 0.5 * (vel[f] + vel_e_nb.map_or(vel[f], |n| vel[n]));
                    let flux_e = rho * eps[e_cell] * u_e * areas[axis];
                    let diff_e = mu * eps[e_cell] * areas[axis] / d[axis];
                    coef[0] = diff_e + (-flux_e).max(0.0);
                    apc += diff_e + flux_e.max(0.0);
                    mdot_net += flux_e;
                    nb[0] = vel_e_nb;

                    // West CV face (center of p_cell).
                    let vel_w_nb = if coords[axis] >= 1 { Some(f - sc) } else { None };
                    let u_w = 0.5 * (vel_w_nb.map_or(vel[f], |n| vel[n]) + vel[f]);
                    let flux_w = rho * eps[p_cell] * u_w * areas[axis];
                    let diff_w = mu * eps[p_cell] * areas[axis] / d[axis];
                    coef[1] = diff_w + flux_w.max(0.0);
                    apc += diff_w + (-flux_w).max(0.0);
                    mdot_net -= flux_w;
                    nb[1] = vel_w_nb;
                }

                // Transverse CV faces.
                for (slot_hi, t) in [(2usize, t1), (4usize, t2)] {
                    let st = strides[t];
                    let velt = cur.velocity(t);
                    // High-side transverse face.
                    let adv_hi = 0.5 * (velt[p_cell] + velt[e_cell]);
                    let eps_hi = 0.25
                        * (eps[p_cell] + eps[p_cell + st] + eps[e_cell] + eps[e_cell + st]);
                    let flux_hi = rho * eps_hi * adv_hi * areas[t];
                    let diff_hi = mu * eps_hi * areas[t] / d[t];
                    coef[slot_hi] = diff_hi + (-flux_hi).max(0.0);
                    apc += diff_hi + flux_hi.max(0.0);
                    mdot_net += flux_hi;
                    nb[slot_hi] = Some(f + st);

                    // Low-side transverse face.
                    let adv_lo = 0.5 * (velt[p_cell - st] + velt[e_cell - st]);
                    let eps_lo = 0.25
                        * (eps[p_cell] + eps[p_cell - st] + eps[e_cell] + eps[e_cell - st]);
                    let flux_lo = rho * eps_lo * adv_lo * areas[t];
                    let diff_lo = mu * eps_lo * areas[t] / d[t];
                    coef[slot_hi + 1] = diff_lo + flux_lo.max(0.0);
                    apc += diff_lo + (-flux_lo).max(0.0);
                    mdot_net -= flux_lo;
                    nb[slot_hi + 1] = Some(f - st);
                }

                // Subtract u_P times the CV's discrete continuity defect:
                // exact once the corrected field conserves mass, and it pins
                // a_P = sum(a_nb) + transient so upwind rows never lose
                // diagonal dominance mid-iteration.
                let ap_full = apc - mdot_net + apt + drag_coeff[f];
                let ap_rel = ap_full / urf;
                rhs += (1.0 - urf) * ap_rel * vel[f];

                // Fold fixed neighbors into the rhs.
                for slot in 0..6 {
                    if coef[slot] == 0.0 {
                        continue;
                    }
                    let keep = match nb[slot] {
                        Some(n) if sys.active[n] => true,
                        Some(n) => {
                            rhs += coef[slot] * vel[n];
                            false
                        }
                        None => {
                            // Off-storage neighbor (outlet boundary face on
                            // the min side): zero-gradient fold.
                            rhs += coef[slot] * vel[f];
                            false
                        }
                    };
                    if !keep {
                        coef[slot] = 0.0;
                    }
                }

                if !ap_rel.is_finite() || !rhs.is_finite() || coef.iter().any(|c| !c.is_finite()) {
                    return Err(AssembleError::NonFinite { equation: AXIS_NAMES[axis], cell: f });
                }

                sys.ap[f] = ap_rel;
                sys.rhs[f] = rhs;
                // Slot order: along-axis hi/lo, t1 hi/lo, t2 hi/lo. Map onto
                // the named east/west/north/south/top/bottom arrays so the
                // strides line up.
                let slots = [
                    (axis, 0usize, 1usize),
                    (t1, 2, 3),
                    (t2, 4, 5),
                ];
                for (ax, hi_slot, lo_slot) in slots {
                    match ax {
                        0 => {
                            sys.ae[f] = coef[hi_slot];
                            sys.aw[f] = coef[lo_slot];
                        }
                        1 => {
                            sys.an[f] = coef[hi_slot];
                            sys.as_[f] = coef[lo_slot];
                        }
                        _ => {
                            sys.at[f] = coef[hi_slot];
                            sys.ab[f] = coef[lo_slot];
                        }
                    }
                }
            }
        }
    }

    #[cfg(debug_assertions)]
    sys.assert_diagonal_dominance(AXIS_NAMES[axis]);

    Ok(sys)
}

/// Assemble the SIMPLE pressure-correction system from the starred field.
///
/// Returns the system together with the per-cell continuity imbalance that
/// forms its rhs. Face coefficients use the momentum diagonals; outlet
/// neighbors act as Dirichlet p' = 0. If the grid has no outlet, the first
/// fluid cell is pinned.
pub fn assemble_pressure_correction(
    star: &FieldState,
    mom_ap: [&[f64]; 3],
    grid: &GridSpec,
    flags: &CellFlags,
    gas: &GasProps,
    dt: f64,
) -> Result<(EquationSystem, Vec<f64>), AssembleError> {
    let strides = grid.strides();
    let areas = grid.face_areas();
    let rho = gas.rho_g;
    let imbalance = crate::fields::continuity_imbalance(star, grid, flags, gas, Some(dt));

    let mut sys = EquationSystem::identity(grid.stored_len(), strides, vec![0.0; grid.stored_len()]);
    sys.rhs = vec![0.0; grid.stored_len()];

    let mut has_outlet = false;
    for (i, j, k) in grid.interior_iter() {
        let c = grid.idx(i, j, k);
        if !flags.is_fluid(c) {
            continue;
        }
        let mut ap = 0.0;
        let mut coef_hi = [0.0f64; 3];
        let mut coef_lo = [0.0f64; 3];
        for axis in 0..3 {
            let s = strides[axis];
            // High-side neighbor; face owned by this cell.
            let nbh = c + s;
            match flags.flag(nbh) {
                CellFlag::Fluid => {
                    let eps_f = 0.5 * (star.eps_g[c] + star.eps_g[nbh]);
                    let df = eps_f * eps_f * rho * areas[axis] * areas[axis] / mom_ap[axis][c];
                    coef_hi[axis] = df;
                    ap += df;
                }
                CellFlag::Outlet => {
                    has_outlet = true;
                    let eps_f = 0.5 * (star.eps_g[c] + star.eps_g[nbh]);
                    let df = eps_f * eps_f * rho * areas[axis] * areas[axis] / mom_ap[axis][c];
                    ap += df;
                }
                _ => {}
            }
            // Low-side neighbor; face owned by the neighbor.
            let nbl = c - s;
            match flags.flag(nbl) {
                CellFlag::Fluid => {
                    let eps_f = 0.5 * (star.eps_g[c] + star.eps_g[nbl]);
                    let df = eps_f * eps_f * rho * areas[axis] * areas[axis] / mom_ap[axis][nbl];
                    coef_lo[axis] = df;
                    ap += df;
                }
                CellFlag::Outlet => {
                    has_outlet = true;
                    let eps_f = 0.5 * (star.eps_g[c] + star.eps_g[nbl]);
                    let df = eps_f * eps_f * rho * areas[axis] * areas[axis] / mom_ap[axis][nbl];
                    ap += df;
                }
                _ => {}
            }
        }
        if ap == 0.0 {
            // Isolated cell: hold p' at zero.
            continue;
        }
        if !ap.is_finite() {
            return Err(AssembleError::NonFinite { equation: "p'", cell: c });
        }
        sys.ap[c] = ap;
        sys.ae[c] = coef_hi[0];
        sys.aw[c] = coef_lo[0];
        sys.an[c] = coef_hi[1];
        sys.as_[c] = coef_lo[1];
        sys.at[c] = coef_hi[2];
        sys.ab[c] = coef_lo[2];
        sys.rhs[c] = imbalance[c];
        sys.x[c] = 0.0;
        sys.active[c] = true;
    }

    if !has_outlet {
        pin_reference_cell(&mut sys, grid, flags);
    }

    Ok((sys, imbalance))
}

/// Remove the all-Neumann null space by pinning p' = 0 at the first fluid
/// cell.
fn pin_reference_cell(sys: &mut EquationSystem, grid: &GridSpec, flags: &CellFlags) {
    let strides = grid.strides();
    let pin = match (0..grid.stored_len()).find(|&c| flags.is_fluid(c)) {
        Some(c) => c,
        None => return,
    };
    sys.ap[pin] = 1.0;
    sys.ae[pin] = 0.0;
    sys.aw[pin] = 0.0;
    sys.an[pin] = 0.0;
    sys.as_[pin] = 0.0;
    sys.at[pin] = 0.0;
    sys.ab[pin] = 0.0;
    sys.rhs[pin] = 0.0;
    sys.active[pin] = false;
    // Drop the neighbors' couplings into the pinned cell; its p' is known.
    let [sx, sy, sz] = strides;
    if pin + sx < sys.n {
        sys.aw[pin + sx] = 0.0;
    }
    if pin >= sx {
        sys.ae[pin - sx] = 0.0;
    }
    if pin + sy < sys.n {
        sys.as_[pin + sy] = 0.0;
    }
    if pin >= sy {
        sys.an[pin - sy] = 0.0;
    }
    if pin + sz < sys.n {
        sys.ab[pin + sz] = 0.0;
    }
    if pin >= sz {
        sys.at[pin - sz] = 0.0;
    }
}

/// Apply the SIMPLE corrector: velocities from the p' gradient across each
/// active face, pressure under-relaxed by `urf_p`.
pub fn correct_fields(
    state: &mut FieldState,
    p_prime: &[f64],
    mom_ap: [&[f64]; 3],
    grid: &GridSpec,
    flags: &CellFlags,
    urf_p: f64,
) {
    let strides = grid.strides();
    let areas = grid.face_areas();
    for axis in 0..3 {
        let active = momentum_active_mask(grid, flags, axis);
        let sc = strides[axis];
        let area = areas[axis];
        let ap = mom_ap[axis];
        let eps = state.eps_g.clone();
        let vel = state.velocity_mut(axis);
        for f in 0..vel.len() {
            if !active[f] {
                continue;
            }
            let eps_f = 0.5 * (eps[f] + eps[f + sc]);
            vel[f] -= eps_f * area / ap[f] * (p_prime[f + sc] - p_prime[f]);
        }
    }
    for c in 0..state.p.len() {
        if flags.is_fluid(c) {
            state.p[c] += urf_p * p_prime[c];
        }
    }
}
