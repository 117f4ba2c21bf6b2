//! Axisymmetric cell-centred grid, fields on it, and the mass bookkeeping
//! that turns porosity fields into observable deposit masses.
//!
//! Cells are indexed `(i, j)` with `i` radial (0 at the axis) and `j` axial
//! (0 at the bottom face). Storage is row-major over `(i, j)`, so the flat
//! index is `i * nz + j`.

use std::f64::consts::PI;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used when deciding whether a length lands on a cell face.
const FACE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridShape", into = "GridShape")]
pub struct AxiGrid {
    nr: usize,
    nz: usize,
    radius: f64,
    height: f64,
    dr: f64,
    dz: f64,
    r_centers: Vec<f64>,
}

/// Serialized form of a grid; spacing and centres are rebuilt on load.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridShape {
    radius: f64,
    height: f64,
    nr: usize,
    nz: usize,
}

impl TryFrom<GridShape> for AxiGrid {
    type Error = Error;

    fn try_from(g: GridShape) -> Result<Self> {
        AxiGrid::new(g.radius, g.height, g.nr, g.nz)
    }
}

impl From<AxiGrid> for GridShape {
    fn from(g: AxiGrid) -> Self {
        GridShape {
            radius: g.radius,
            height: g.height,
            nr: g.nr,
            nz: g.nz,
        }
    }
}

impl AxiGrid {
    pub fn new(radius: f64, height: f64, nr: usize, nz: usize) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0 && height.is_finite() && height > 0.0) {
            return Err(Error::InvalidGeometry(format!(
                "radius {radius} and height {height} must be positive"
            )));
        }
        if nr < 4 || nz < 4 {
            return Err(Error::InvalidGeometry(format!(
                "grid {nr}x{nz} needs at least 4 cells in each direction"
            )));
        }
        let dr = radius / nr as f64;
        let dz = height / nz as f64;
        let r_centers = (0..nr).map(|i| (i as f64 + 0.5) * dr).collect();
        Ok(Self {
            nr,
            nz,
            radius,
            height,
            dr,
            dz,
            r_centers,
        })
    }

    pub fn nr(&self) -> usize {
        self.nr
    }

    pub fn nz(&self) -> usize {
        self.nz
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    pub fn dr(&self) -> f64 {
        self.dr
    }

    pub fn dz(&self) -> f64 {
        self.dz
    }

    pub fn r_centers(&self) -> &[f64] {
        &self.r_centers
    }

    pub fn z_center(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.dz
    }

    /// Number of cells.
    pub fn len(&self) -> usize {
        self.nr * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.nz + j
    }

    /// Annular cell volume `2π r_i dr dz`.
    pub fn cell_volume(&self, i: usize, j: usize) -> Result<f64> {
        if i >= self.nr || j >= self.nz {
            return Err(Error::Index {
                i,
                j,
                nr: self.nr,
                nz: self.nz,
            });
        }
        Ok(2.0 * PI * self.r_centers[i] * self.dr * self.dz)
    }

    /// Cell volumes in storage order.
    pub fn volumes(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for i in 0..self.nr {
            let v = 2.0 * PI * self.r_centers[i] * self.dr * self.dz;
            out.extend(std::iter::repeat(v).take(self.nz));
        }
        out
    }

    pub fn total_volume(&self) -> f64 {
        PI * self.radius * self.radius * self.height
    }

    /// Flat index of the cell containing the physical point `(r, z)`, clamped to the grid.
    pub fn locate(&self, r: f64, z: f64) -> usize {
        let i = ((r / self.dr).floor().max(0.0) as usize).min(self.nr - 1);
        let j = ((z / self.dz).floor().max(0.0) as usize).min(self.nz - 1);
        self.index(i, j)
    }
}

/// Convenience constructor mirroring [`AxiGrid::new`].
pub fn make_grid(radius: f64, height: f64, nr: usize, nz: usize) -> Result<AxiGrid> {
    AxiGrid::new(radius, height, nr, nz)
}

/// Cell values on an [`AxiGrid`], row-major `(nr x nz)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    nr: usize,
    nz: usize,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: &AxiGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::contract(format!(
                "field has {} values, grid has {} cells",
                values.len(),
                grid.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Evaluation(format!(
                "non-finite field value at cell {k}"
            )));
        }
        Ok(Self {
            nr: grid.nr(),
            nz: grid.nz(),
            values,
        })
    }

    pub fn uniform(grid: &AxiGrid, value: f64) -> Self {
        Self {
            nr: grid.nr(),
            nz: grid.nz(),
            values: vec![value; grid.len()],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.nz + j]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nr, self.nz)
    }

    pub fn matches(&self, grid: &AxiGrid) -> bool {
        self.nr == grid.nr() && self.nz == grid.nz()
    }
}

/// State of the preform: porosity `ε`, gas molarity `C`, and elapsed time.
///
/// Deposit fraction is not stored; it is always `ε₀ − ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CviState {
    pub porosity: ScalarField,
    pub molarity: ScalarField,
    pub eps0: f64,
    pub time: f64,
}

impl CviState {
    pub fn new(porosity: ScalarField, molarity: ScalarField, eps0: f64, time: f64) -> Result<Self> {
        if porosity.shape() != molarity.shape() {
            return Err(Error::contract("porosity and molarity shapes differ"));
        }
        if !(eps0 > 0.0 && eps0 < 1.0) {
            return Err(Error::contract(format!(
                "initial porosity {eps0} outside (0, 1)"
            )));
        }
        if porosity
            .values()
            .iter()
            .any(|&e| !(0.0..=eps0).contains(&e))
        {
            return Err(Error::contract("porosity outside [0, eps0]"));
        }
        if molarity.values().iter().any(|&c| c < 0.0) {
            return Err(Error::contract("negative molarity"));
        }
        Ok(Self {
            porosity,
            molarity,
            eps0,
            time,
        })
    }

    /// Fresh preform at `ε = ε₀` with a uniform molarity guess.
    pub fn pristine(grid: &AxiGrid, eps0: f64, molarity: f64) -> Result<Self> {
        Self::new(
            ScalarField::uniform(grid, eps0),
            ScalarField::uniform(grid, molarity),
            eps0,
            0.0,
        )
    }

    pub fn deposit_fraction(&self) -> Vec<f64> {
        self.porosity
            .values()
            .iter()
            .map(|e| self.eps0 - e)
            .collect()
    }
}

/// Axial sectioning of the sample, as fractions of the height.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSpec {
    z_bounds: Vec<f64>,
}

impl SegmentSpec {
    pub fn new(z_bounds: Vec<f64>) -> Result<Self> {
        if z_bounds.len() < 2 {
            return Err(Error::contract("segment spec needs at least two bounds"));
        }
        if z_bounds[0] != 0.0 || *z_bounds.last().unwrap() != 1.0 {
            return Err(Error::contract(
                "segment bounds must start at 0 and end at 1",
            ));
        }
        if z_bounds.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::contract(
                "segment bounds must be strictly increasing",
            ));
        }
        Ok(Self { z_bounds })
    }

    pub fn whole() -> Self {
        Self {
            z_bounds: vec![0.0, 1.0],
        }
    }

    pub fn bounds(&self) -> &[f64] {
        &self.z_bounds
    }

    pub fn count(&self) -> usize {
        self.z_bounds.len() - 1
    }

    /// Axial cell ranges of each segment. Every bound must sit on a cell face.
    pub fn cell_ranges(&self, nz: usize) -> Result<Vec<Range<usize>>> {
        let faces = self
            .z_bounds
            .iter()
            .map(|&b| {
                let x = b * nz as f64;
                let k = x.round();
                if (x - k).abs() > FACE_TOL * nz as f64 {
                    Err(Error::Alignment {
                        value: b,
                        nearest: k / nz as f64,
                    })
                } else {
                    Ok(k as usize)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        if faces.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::contract(format!(
                "segment collapses to zero cells at nz = {nz}"
            )));
        }
        Ok(faces.windows(2).map(|w| w[0]..w[1]).collect())
    }

    /// Moves every bound to its nearest cell face, warning when one moved.
    pub fn snapped(&self, nz: usize) -> Result<Self> {
        let snapped: Vec<f64> = self
            .z_bounds
            .iter()
            .map(|&b| {
                let s = (b * nz as f64).round() / nz as f64;
                if (s - b).abs() > FACE_TOL {
                    log::warn!("segment bound {b} snapped to cell face {s}");
                }
                s
            })
            .collect();
        Self::new(snapped)
    }
}

/// Material removed between densification cycles.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TrimSpec {
    pub radial_trim: f64,
    pub top_trim: f64,
    pub bottom_trim: f64,
}

impl TrimSpec {
    pub fn is_identity(&self) -> bool {
        self.radial_trim == 0.0 && self.top_trim == 0.0 && self.bottom_trim == 0.0
    }

    /// Cells removed `(radial, top, bottom)`, snapping each trim to whole cells.
    pub fn cell_counts(&self, grid: &AxiGrid) -> Result<(usize, usize, usize)> {
        let snap = |len: f64, h: f64, what: &str| -> Result<usize> {
            if !(len.is_finite() && len >= 0.0) {
                return Err(Error::InvalidGeometry(format!(
                    "{what} trim {len} must be >= 0"
                )));
            }
            let x = len / h;
            let k = x.round();
            if (x - k).abs() > 1e-6 {
                log::warn!("{what} trim {len} m snapped to {} cells", k);
            }
            Ok(k as usize)
        };
        let cr = snap(self.radial_trim, grid.dr(), "radial")?;
        let ct = snap(self.top_trim, grid.dz(), "top")?;
        let cb = snap(self.bottom_trim, grid.dz(), "bottom")?;
        if grid.nr() < cr + 4 || grid.nz() < ct + cb + 4 {
            return Err(Error::InvalidGeometry(format!(
                "trim ({cr}, {ct}, {cb}) cells leaves fewer than 4 cells on a {}x{} grid",
                grid.nr(),
                grid.nz()
            )));
        }
        Ok((cr, ct, cb))
    }

    /// Flat indices (old grid) of the cells that survive machining, in new-grid order.
    pub fn retained_cells(&self, grid: &AxiGrid) -> Result<(AxiGrid, Vec<usize>)> {
        let (cr, ct, cb) = self.cell_counts(grid)?;
        let nr = grid.nr() - cr;
        let nz = grid.nz() - ct - cb;
        let new_grid = AxiGrid::new(nr as f64 * grid.dr(), nz as f64 * grid.dz(), nr, nz)?;
        let mut keep = Vec::with_capacity(nr * nz);
        for i in 0..nr {
            for j in cb..cb + nz {
                keep.push(grid.index(i, j));
            }
        }
        Ok((new_grid, keep))
    }
}

/// Deposit mass `Σ ρ_d (ε₀ − ε) V` over the cells whose centres lie in the
/// axial fraction interval `[lo, hi)`.
pub fn integrate_deposit_mass(
    state: &CviState,
    grid: &AxiGrid,
    rho_d: f64,
    z_range: (f64, f64),
) -> f64 {
    let (lo, hi) = z_range;
    let h = grid.height();
    let mut total = 0.0;
    for j in 0..grid.nz() {
        let zc = grid.z_center(j) / h;
        if zc >= lo && zc < hi {
            total += layer_mass(state, grid, rho_d, j);
        }
    }
    total
}

fn layer_mass(state: &CviState, grid: &AxiGrid, rho_d: f64, j: usize) -> f64 {
    let eps = state.porosity.values();
    let mut acc = 0.0;
    for i in 0..grid.nr() {
        let v = 2.0 * PI * grid.r_centers()[i] * grid.dr() * grid.dz();
        acc += rho_d * (state.eps0 - eps[grid.index(i, j)]) * v;
    }
    acc
}

/// Deposit mass of each axial segment.
pub fn segment_masses(
    state: &CviState,
    grid: &AxiGrid,
    rho_d: f64,
    seg: &SegmentSpec,
) -> Result<Vec<f64>> {
    let ranges = seg.cell_ranges(grid.nz())?;
    Ok(ranges
        .into_iter()
        .map(|r| r.map(|j| layer_mass(state, grid, rho_d, j)).sum())
        .collect())
}

/// Removes the outer radial layer and optional top/bottom layers.
///
/// Surviving cells keep their values; the deposit in removed cells is lost.
pub fn apply_machining(
    state: &CviState,
    grid: &AxiGrid,
    trim: &TrimSpec,
) -> Result<(AxiGrid, CviState)> {
    let (new_grid, keep) = trim.retained_cells(grid)?;
    let eps: Vec<f64> = keep.iter().map(|&k| state.porosity.values()[k]).collect();
    let c: Vec<f64> = keep.iter().map(|&k| state.molarity.values()[k]).collect();
    let new_state = CviState {
        porosity: ScalarField::new(&new_grid, eps)?,
        molarity: ScalarField::new(&new_grid, c)?,
        eps0: state.eps0,
        time: state.time,
    };
    Ok((new_grid, new_state))
}
