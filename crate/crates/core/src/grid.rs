//! Uniform discretization of the rectangular workspace and the quadtree
//! ladder linking coarse and fine cells.
//!
//! Cells are indexed row-major (`i = iy * nx + ix`) at every level. Instead of
//! renumbering cells in quadtree order, the ladder exposes explicit
//! [`ResolutionLadder::children`] / [`ResolutionLadder::parent`] maps; the
//! children of a coarse cell are returned in quadrant order SW, SE, NW, NE.

use crate::{Error, Position, Result};

const TILING_RTOL: f64 = 1e-9;

/// Index of a cell within one grid (or one ladder level).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellIndex(pub usize);

impl CellIndex {
    pub fn get(self) -> usize {
        self.0
    }
}

impl From<usize> for CellIndex {
    fn from(v: usize) -> Self {
        CellIndex(v)
    }
}

/// An axis-aligned rectangular workspace.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Workspace {
    pub origin: Position,
    /// `(width, height)`, m.
    pub extent: (f64, f64),
}

impl Workspace {
    pub fn new(origin: Position, extent: (f64, f64)) -> Self {
        Workspace { origin, extent }
    }

    pub fn contains(&self, p: Position) -> bool {
        p.x >= self.origin.x
            && p.y >= self.origin.y
            && p.x <= self.origin.x + self.extent.0
            && p.y <= self.origin.y + self.extent.1
    }
}

/// A `nx × ny` tiling of the workspace by square cells of side `resolution`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    origin: Position,
    extent: (f64, f64),
    resolution: f64,
    nx: usize,
    ny: usize,
}

fn tile_count(extent: f64, resolution: f64) -> Result<usize> {
    let ratio = extent / resolution;
    let n = ratio.round();
    if !ratio.is_finite() || n < 1.0 || (ratio - n).abs() > TILING_RTOL * ratio.max(1.0) {
        return Err(Error::NonTiling { extent, resolution });
    }
    Ok(n as usize)
}

impl GridSpec {
    /// Tile `width × height` meters starting at `origin` with cells of side
    /// `resolution`. The extent must be an exact multiple of the resolution.
    pub fn new(origin: Position, extent: (f64, f64), resolution: f64) -> Result<Self> {
        let (width, height) = extent;
        for (name, v) in [
            ("width", width),
            ("height", height),
            ("resolution", resolution),
        ] {
            if v.is_nan() || v <= 0.0 || !v.is_finite() {
                return Err(Error::param(name, format!("must be positive, got {v}")));
            }
        }
        let nx = tile_count(width, resolution)?;
        let ny = tile_count(height, resolution)?;
        Ok(GridSpec {
            origin,
            extent,
            resolution,
            nx,
            ny,
        })
    }

    pub fn origin(&self) -> Position {
        self.origin
    }

    pub fn extent(&self) -> (f64, f64) {
        self.extent
    }

    pub fn workspace(&self) -> Workspace {
        Workspace::new(self.origin, self.extent)
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    /// `(nx, ny)`.
    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn cell_count(&self) -> usize {
        self.nx * self.ny
    }

    pub fn check(&self, cell: CellIndex) -> Result<()> {
        if cell.0 < self.cell_count() {
            Ok(())
        } else {
            Err(Error::InvalidCell {
                index: cell.0,
                cells: self.cell_count(),
            })
        }
    }

    /// Column/row of a cell. Caller guarantees the index is valid.
    pub fn coords(&self, cell: CellIndex) -> (usize, usize) {
        (cell.0 % self.nx, cell.0 / self.nx)
    }

    pub fn index(&self, ix: usize, iy: usize) -> CellIndex {
        debug_assert!(ix < self.nx && iy < self.ny);
        CellIndex(iy * self.nx + ix)
    }

    pub fn cell_center(&self, cell: CellIndex) -> Position {
        let (ix, iy) = self.coords(cell);
        Position::new(
            self.origin.x + (ix as f64 + 0.5) * self.resolution,
            self.origin.y + (iy as f64 + 0.5) * self.resolution,
        )
    }

    /// Lower-left corner of a cell.
    pub fn cell_corner(&self, cell: CellIndex) -> Position {
        let (ix, iy) = self.coords(cell);
        Position::new(
            self.origin.x + ix as f64 * self.resolution,
            self.origin.y + iy as f64 * self.resolution,
        )
    }

    /// All cell centers in index order (the cell-center map of the grid).
    pub fn centers(&self) -> Vec<Position> {
        (0..self.cell_count())
            .map(|i| self.cell_center(CellIndex(i)))
            .collect()
    }

    /// Whether `p` lies in the closed workspace rectangle.
    pub fn contains(&self, p: Position) -> bool {
        self.workspace().contains(p)
    }

    fn axis_cell(&self, offset: f64, origin: f64, n: usize) -> usize {
        let u = self.resolution;
        let mut i = ((offset - origin) / u).floor().max(0.0) as usize;
        i = i.min(n - 1);
        // Edges are `origin + i * u`; correct the float quotient against them
        // so points on shared edges go to the upper cell.
        if i + 1 < n && offset >= origin + (i + 1) as f64 * u {
            i += 1;
        } else if i > 0 && offset < origin + i as f64 * u {
            i -= 1;
        }
        i
    }

    /// Cell whose half-open area `[x0, x0+u) × [y0, y0+u)` contains `p`.
    /// Points on the far workspace edges belong to the last row/column.
    pub fn locate(&self, p: Position) -> Result<CellIndex> {
        if !self.contains(p) {
            return Err(Error::OutOfBounds { x: p.x, y: p.y });
        }
        let ix = self.axis_cell(p.x, self.origin.x, self.nx);
        let iy = self.axis_cell(p.y, self.origin.y, self.ny);
        Ok(self.index(ix, iy))
    }

    /// Euclidean distance between two cell centers, computed from the integer
    /// cell offset so that it only depends on the displacement.
    pub fn center_distance(&self, a: CellIndex, b: CellIndex) -> f64 {
        let (ax, ay) = self.coords(a);
        let (bx, by) = self.coords(b);
        offset_distance(ax.abs_diff(bx), ay.abs_diff(by), self.resolution)
    }
}

pub(crate) fn offset_distance(dx: usize, dy: usize, resolution: f64) -> f64 {
    let (dx, dy) = (dx as f64, dy as f64);
    resolution * (dx * dx + dy * dy).sqrt()
}

/// Quadtree ladder of grids, coarsest first; each level halves the cell side.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolutionLadder {
    levels: Vec<GridSpec>,
}

impl ResolutionLadder {
    /// Build `levels` grids whose finest resolution is `finest`. The extent
    /// must tile at the coarsest resolution `finest * 2^(levels-1)`.
    pub fn new(origin: Position, extent: (f64, f64), finest: f64, levels: usize) -> Result<Self> {
        if levels < 1 {
            return Err(Error::InvalidLevels(levels));
        }
        let coarsest = finest * (1u64 << (levels - 1)) as f64;
        let base = GridSpec::new(origin, extent, coarsest)?;
        let mut grids = Vec::with_capacity(levels);
        grids.push(base);
        for k in 1..levels {
            let prev = &grids[k - 1];
            let resolution = finest * (1u64 << (levels - 1 - k)) as f64;
            grids.push(GridSpec {
                origin,
                extent,
                resolution,
                nx: prev.nx * 2,
                ny: prev.ny * 2,
            });
        }
        Ok(ResolutionLadder { levels: grids })
    }

    /// Number of levels `r`.
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn levels(&self) -> &[GridSpec] {
        &self.levels
    }

    pub fn level(&self, k: usize) -> Result<&GridSpec> {
        self.levels.get(k).ok_or(Error::LevelOutOfRange {
            level: k,
            levels: self.levels.len(),
        })
    }

    pub fn coarsest(&self) -> &GridSpec {
        &self.levels[0]
    }

    pub fn finest(&self) -> &GridSpec {
        self.levels.last().expect("ladder has at least one level")
    }

    /// The four level-`k+1` cells covering `parent` (a level-`k` cell), in
    /// quadrant order SW, SE, NW, NE.
    pub fn children(&self, k: usize, parent: CellIndex) -> Result<[CellIndex; 4]> {
        if k + 1 >= self.levels.len() {
            return Err(Error::LevelOutOfRange {
                level: k,
                levels: self.levels.len(),
            });
        }
        let coarse = &self.levels[k];
        coarse.check(parent)?;
        let fine = &self.levels[k + 1];
        let (ix, iy) = coarse.coords(parent);
        let (fx, fy) = (2 * ix, 2 * iy);
        Ok([
            fine.index(fx, fy),
            fine.index(fx + 1, fy),
            fine.index(fx, fy + 1),
            fine.index(fx + 1, fy + 1),
        ])
    }

    /// The level-`k-1` cell containing `child` (a level-`k` cell).
    pub fn parent(&self, k: usize, child: CellIndex) -> Result<CellIndex> {
        if k == 0 || k >= self.levels.len() {
            return Err(Error::LevelOutOfRange {
                level: k,
                levels: self.levels.len(),
            });
        }
        let fine = &self.levels[k];
        fine.check(child)?;
        let (ix, iy) = fine.coords(child);
        Ok(self.levels[k - 1].index(ix / 2, iy / 2))
    }
}
