//! Staggered Cartesian mesh with a one-cell ghost layer.
//!
//! Scalars (pressure, volume fractions) live at cell centers; velocity
//! components live on the cell faces normal to them. Stored arrays cover
//! interior cells plus one ghost layer per side, so a grid with `nx` x `ny`
//! x `nz` interior cells stores `(nx+2)(ny+2)(nz+2)` values. Boundary
//! conditions are realized through ghost-cell values.

use std::fmt;

/// Uniform structured grid specification. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    /// Interior cell counts per axis.
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    /// Cell sizes (m).
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    /// Physical coordinates of the lower corner of the interior region (m).
    pub origin: [f64; 3],
}

/// Per-cell boundary classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellFlag {
    Fluid,
    Wall,
    Inlet,
    Outlet,
    /// Interior obstacle cell (e.g. the step of a backward-facing step case).
    Blocked,
}

/// Flags for every stored cell, indexed like the field arrays.
#[derive(Debug, Clone)]
pub struct CellFlags {
    pub flags: Vec<CellFlag>,
}

/// Which node lattice an interpolation targets.
///
/// `Center` is the cell-center lattice; the face variants are the staggered
/// lattices carrying the matching velocity component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lattice {
    Center,
    XFace,
    YFace,
    ZFace,
}

/// Eight surrounding lattice nodes and their trilinear weights.
///
/// Weights are opposite sub-volume fractions; they are non-negative and sum
/// to one up to round-off.
#[derive(Debug, Clone, Copy)]
pub struct InterpStencil {
    pub idx: [usize; 8],
    pub w: [f64; 8],
}

/// Domain boundary faces, used to place inlet/outlet regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Face {
    XMin,
    XMax,
    YMin,
    YMax,
    ZMin,
    ZMax,
}

impl Face {
    pub fn axis(self) -> usize {
        match self {
            Face::XMin | Face::XMax => 0,
            Face::YMin | Face::YMax => 1,
            Face::ZMin | Face::ZMax => 2,
        }
    }

    /// +1 if the face is on the low side of the domain (inflow points along
    /// the positive axis), -1 on the high side.
    pub fn inward_sign(self) -> f64 {
        match self {
            Face::XMin | Face::YMin | Face::ZMin => 1.0,
            Face::XMax | Face::YMax | Face::ZMax => -1.0,
        }
    }
}

/// Axis-aligned box in physical coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3 {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl Box3 {
    pub fn new(lo: [f64; 3], hi: [f64; 3]) -> Self {
        Box3 { lo, hi }
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.lo[a] && p[a] <= self.hi[a])
    }

    pub fn volume(&self) -> f64 {
        (0..3).map(|a| (self.hi[a] - self.lo[a]).max(0.0)).product()
    }
}

/// Grid construction input: domain extents, cell counts, and flagged regions.
#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub extents: [f64; 3],
    pub cells: [usize; 3],
    pub origin: [f64; 3],
    /// Boundary faces carrying an inlet; all unlisted faces default to walls.
    pub inlet_faces: Vec<Face>,
    pub outlet_faces: Vec<Face>,
    /// Interior obstacle boxes. Cells whose center falls inside are BLOCKED.
    pub blocked: Vec<Box3>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GridError {
    BadSpec(String),
    RegionOutsideDomain(String),
    ContradictoryRegions(String),
    NoFluidCells,
    OutOfDomain { pos: [f64; 3] },
}

impl fmt::Display for GridError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridError::BadSpec(m) => write!(f, "invalid grid spec: {m}"),
            GridError::RegionOutsideDomain(m) => write!(f, "region outside domain: {m}"),
            GridError::ContradictoryRegions(m) => write!(f, "contradictory regions: {m}"),
            GridError::NoFluidCells => write!(f, "grid has no fluid cells"),
            GridError::OutOfDomain { pos } => {
                write!(f, "position ({}, {}, {}) outside stored extent", pos[0], pos[1], pos[2])
            }
        }
    }
}

impl std::error::Error for GridError {}

impl GridSpec {
    pub fn new(
        cells: [usize; 3],
        extents: [f64; 3],
        origin: [f64; 3],
    ) -> Result<Self, GridError> {
        if cells.iter().any(|&n| n < 2) {
            return Err(GridError::BadSpec(format!(
                "need at least 2 cells per axis, got {cells:?}"
            )));
        }
        if extents.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
            return Err(GridError::BadSpec(format!("extents must be positive, got {extents:?}")));
        }
        Ok(GridSpec {
            nx: cells[0],
            ny: cells[1],
            nz: cells[2],
            dx: extents[0] / cells[0] as f64,
            dy: extents[1] / cells[1] as f64,
            dz: extents[2] / cells[2] as f64,
            origin,
        })
    }

    /// Stored cells per axis, ghost layer included.
    pub fn stored_dims(&self) -> [usize; 3] {
        [self.nx + 2, self.ny + 2, self.nz + 2]
    }

    /// Total stored cell count, ghost layer included.
    pub fn stored_len(&self) -> usize {
        (self.nx + 2) * (self.ny + 2) * (self.nz + 2)
    }

    /// Linear index of stored cell (i, j, k); x varies fastest.
    #[inline]
    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (k * (self.ny + 2) + j) * (self.nx + 2) + i
    }

    /// Inverse of [`GridSpec::idx`].
    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let nxs = self.nx + 2;
        let nys = self.ny + 2;
        let i = idx % nxs;
        let j = (idx / nxs) % nys;
        let k = idx / (nxs * nys);
        (i, j, k)
    }

    /// Index strides per axis: moving one cell in x/y/z shifts the linear
    /// index by these amounts.
    #[inline]
    pub fn strides(&self) -> [usize; 3] {
        [1, self.nx + 2, (self.nx + 2) * (self.ny + 2)]
    }

    #[inline]
    pub fn interior(&self, i: usize, j: usize, k: usize) -> bool {
        i >= 1 && i <= self.nx && j >= 1 && j <= self.ny && k >= 1 && k <= self.nz
    }

    /// Center of stored cell (i, j, k) in physical coordinates.
    pub fn cell_center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            self.origin[0] + (i as f64 - 0.5) * self.dx,
            self.origin[1] + (j as f64 - 0.5) * self.dy,
            self.origin[2] + (k as f64 - 0.5) * self.dz,
        ]
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx * self.dy * self.dz
    }

    /// Face areas normal to x, y, z.
    pub fn face_areas(&self) -> [f64; 3] {
        [self.dy * self.dz, self.dx * self.dz, self.dx * self.dy]
    }

    pub fn extents(&self) -> [f64; 3] {
        [
            self.nx as f64 * self.dx,
            self.ny as f64 * self.dy,
            self.nz as f64 * self.dz,
        ]
    }

    /// True if `pos` lies strictly inside the interior region.
    pub fn in_interior(&self, pos: [f64; 3]) -> bool {
        let ext = self.extents();
        (0..3).all(|a| pos[a] > self.origin[a] && pos[a] < self.origin[a] + ext[a])
    }

    /// Iterate over interior (i, j, k) triples in index order.
    pub fn interior_iter(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let (nx, ny, nz) = (self.nx, self.ny, self.nz);
        (1..=nz).flat_map(move |k| (1..=ny).flat_map(move |j| (1..=nx).map(move |i| (i, j, k))))
    }
}

/// Stored cell containing `pos`. Points exactly on a shared face resolve to
/// the higher-index cell, so parcel binning is deterministic.
pub fn cell_of_point(pos: [f64; 3], grid: &GridSpec) -> Result<usize, GridError> {
    let dims = grid.stored_dims();
    let d = [grid.dx, grid.dy, grid.dz];
    let mut ijk = [0usize; 3];
    for a in 0..3 {
        let rel = (pos[a] - grid.origin[a]) / d[a];
        // Stored index: interior cell 1 spans rel in [0, 1).
        let cell = rel.floor() + 1.0;
        if cell < 0.0 || cell >= dims[a] as f64 {
            return Err(GridError::OutOfDomain { pos });
        }
        ijk[a] = cell as usize;
    }
    Ok(grid.idx(ijk[0], ijk[1], ijk[2]))
}

/// Trilinear stencil around `pos` on the requested lattice.
///
/// Along the component axis of a face lattice the nodes sit on cell faces;
/// along every other axis they sit at cell-center levels. `pos` must lie in
/// the interior region; callers clamp or reflect first.
pub fn trilinear_stencil(
    pos: [f64; 3],
    grid: &GridSpec,
    target: Lattice,
) -> Result<InterpStencil, GridError> {
    if !grid.in_interior(pos) {
        return Err(GridError::OutOfDomain { pos });
    }
    let face_axis = match target {
        Lattice::Center => usize::MAX,
        Lattice::XFace => 0,
        Lattice::YFace => 1,
        Lattice::ZFace => 2,
    };
    let d = [grid.dx, grid.dy, grid.dz];
    let mut lo = [0usize; 3];
    let mut frac = [0f64; 3];
    for a in 0..3 {
        let rel = (pos[a] - grid.origin[a]) / d[a];
        // Face nodes of stored cell m sit at rel = m; centers at rel = m - 1/2.
        let s = if a == face_axis { rel } else { rel + 0.5 };
        let base = s.floor();
        lo[a] = base as usize;
        frac[a] = s - base;
    }
    let [sx, sy, sz] = grid.strides();
    let base = grid.idx(lo[0], lo[1], lo[2]);
    let (fx, fy, fz) = (frac[0], frac[1], frac[2]);
    let wx = [1.0 - fx, fx];
    let wy = [1.0 - fy, fy];
    let wz = [1.0 - fz, fz];
    let mut idx = [0usize; 8];
    let mut w = [0f64; 8];
    let mut n = 0;
    for kz in 0..2 {
        for jy in 0..2 {
            for ix in 0..2 {
                idx[n] = base + ix * sx + jy * sy + kz * sz;
                w[n] = wx[ix] * wy[jy] * wz[kz];
                n += 1;
            }
        }
    }
    Ok(InterpStencil { idx, w })
}

impl InterpStencil {
    /// Weighted gather from a field array.
    #[inline]
    pub fn gather(&self, field: &[f64]) -> f64 {
        let mut acc = 0.0;
        for n in 0..8 {
            acc += self.w[n] * field[self.idx[n]];
        }
        acc
    }

    /// Weighted scatter-add of `value` into a field array.
    #[inline]
    pub fn scatter(&self, field: &mut [f64], value: f64) {
        for n in 0..8 {
            field[self.idx[n]] += self.w[n] * value;
        }
    }
}

impl CellFlags {
    pub fn flag(&self, idx: usize) -> CellFlag {
        self.flags[idx]
    }

    pub fn is_fluid(&self, idx: usize) -> bool {
        self.flags[idx] == CellFlag::Fluid
    }
}

/// Build the grid and classify every stored cell.
///
/// Interior cells default to FLUID, the ghost layer to WALL; inlet/outlet
/// faces reflag their ghost slabs and blocked boxes carve obstacles out of
/// the interior.
pub fn build_grid(config: &GridConfig) -> Result<(GridSpec, CellFlags), GridError> {
    let grid = GridSpec::new(config.cells, config.extents, config.origin)?;
    let mut flags = vec![CellFlag::Wall; grid.stored_len()];

    for k in 1..=grid.nz {
        for j in 1..=grid.ny {
            for i in 1..=grid.nx {
                flags[grid.idx(i, j, k)] = CellFlag::Fluid;
            }
        }
    }

    let ext = grid.extents();
    let domain = Box3::new(grid.origin, [
        grid.origin[0] + ext[0],
        grid.origin[1] + ext[1],
        grid.origin[2] + ext[2],
    ]);
    for b in &config.blocked {
        if (0..3).any(|a| b.lo[a] < domain.lo[a] - 1e-12 || b.hi[a] > domain.hi[a] + 1e-12) {
            return Err(GridError::RegionOutsideDomain(format!("{b:?}")));
        }
        let mut hit = false;
        for (i, j, k) in grid.interior_iter() {
            if b.contains(grid.cell_center(i, j, k)) {
                flags[grid.idx(i, j, k)] = CellFlag::Blocked;
                hit = true;
            }
        }
        if !hit {
            return Err(GridError::RegionOutsideDomain(format!(
                "{b:?} covers no cell centers"
            )));
        }
    }

    // Inlet/outlet slabs go on last; ghosts facing a BLOCKED interior cell
    // stay walls so obstacles may abut a flow boundary (BFS step).
    for (face, flag) in config
        .inlet_faces
        .iter()
        .map(|&f| (f, CellFlag::Inlet))
        .chain(config.outlet_faces.iter().map(|&f| (f, CellFlag::Outlet)))
    {
        if config.inlet_faces.contains(&face) && config.outlet_faces.contains(&face) {
            return Err(GridError::ContradictoryRegions(format!(
                "face {face:?} is both inlet and outlet"
            )));
        }
        let towards = interior_step(&grid, face);
        for_face_ghosts(&grid, face, |idx| {
            let neighbor = (idx as isize + towards) as usize;
            if flags[neighbor] == CellFlag::Fluid {
                flags[idx] = flag;
            }
        });
    }

    let cell_flags = CellFlags { flags };
    validate_flags(&grid, &cell_flags)?;
    Ok((grid, cell_flags))
}

/// Signed linear-index step from a face's ghost cells towards the interior.
fn interior_step(grid: &GridSpec, face: Face) -> isize {
    let [sx, sy, sz] = grid.strides();
    let s = [sx as isize, sy as isize, sz as isize][face.axis()];
    if face.inward_sign() > 0.0 {
        s
    } else {
        -s
    }
}

/// Visit the ghost cells of one domain face.
fn for_face_ghosts(grid: &GridSpec, face: Face, mut f: impl FnMut(usize)) {
    let (nx, ny, nz) = (grid.nx, grid.ny, grid.nz);
    match face {
        Face::XMin | Face::XMax => {
            let i = if face == Face::XMin { 0 } else { nx + 1 };
            for k in 1..=nz {
                for j in 1..=ny {
                    f(grid.idx(i, j, k));
                }
            }
        }
        Face::YMin | Face::YMax => {
            let j = if face == Face::YMin { 0 } else { ny + 1 };
            for k in 1..=nz {
                for i in 1..=nx {
                    f(grid.idx(i, j, k));
                }
            }
        }
        Face::ZMin | Face::ZMax => {
            let k = if face == Face::ZMin { 0 } else { nz + 1 };
            for j in 1..=ny {
                for i in 1..=nx {
                    f(grid.idx(i, j, k));
                }
            }
        }
    }
}

fn validate_flags(grid: &GridSpec, flags: &CellFlags) -> Result<(), GridError> {
    let [sx, sy, sz] = grid.strides();
    let mut any_fluid = false;
    for k in 0..grid.nz + 2 {
        for j in 0..grid.ny + 2 {
            for i in 0..grid.nx + 2 {
                let idx = grid.idx(i, j, k);
                let flag = flags.flag(idx);
                if !grid.interior(i, j, k) && flag == CellFlag::Fluid {
                    return Err(GridError::ContradictoryRegions(format!(
                        "ghost cell ({i},{j},{k}) flagged FLUID"
                    )));
                }
                if flag == CellFlag::Fluid {
                    any_fluid = true;
                }
                if matches!(flag, CellFlag::Inlet | CellFlag::Outlet) {
                    let mut adj_fluid = false;
                    for (stride, lo, n) in
                        [(sx, i, grid.nx), (sy, j, grid.ny), (sz, k, grid.nz)]
                    {
                        if lo + 1 <= n + 1 && flags.flag(idx + stride) == CellFlag::Fluid {
                            adj_fluid = true;
                        }
                        if lo >= 1 && flags.flag(idx - stride) == CellFlag::Fluid {
                            adj_fluid = true;
                        }
                    }
                    if !adj_fluid {
                        return Err(GridError::ContradictoryRegions(format!(
                            "inlet/outlet cell ({i},{j},{k}) has no adjacent fluid cell"
                        )));
                    }
                }
            }
        }
    }
    if !any_fluid {
        return Err(GridError::NoFluidCells);
    }
    Ok(())
}
