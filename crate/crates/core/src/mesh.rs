//! Uniform rectangular mesh of the unit square Ω = (0,1)².
//!
//! Degrees of freedom live on cells (piecewise constants) and on edges
//! (lowest-order Raviart–Thomas normal fluxes), so the mesh tracks both and
//! fixes the conventions every assembly routine relies on:
//!
//! * Cells are numbered row-major from the lower-left corner: cell `(ix, iy)`
//!   has index `iy * nx + ix`.
//! * Edges are numbered vertical group first, then horizontal, each group
//!   row-major. The vertical edge on grid line `x = i·dx` beside cell row `j`
//!   has index `j*(nx+1) + i`; the horizontal edge on `y = j·dy` above/below
//!   cell column `i` has index `nv + j*nx + i` where `nv = (nx+1)*ny`.
//! * Every edge carries a fixed unit normal: `(+1, 0)` for vertical edges and
//!   `(0, +1)` for horizontal ones. Boundary edges additionally record the
//!   sign that turns the fixed normal into the outward normal of Ω.
//!
//! Construction is deterministic: the same `(nx, ny)` always produces
//! bit-identical index structures, which keeps assembled matrices and golden
//! files reproducible.

use crate::error::{Error, Result};
use std::io::{BufRead, Write};

/// Direction of an edge's fixed unit normal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    /// Edge lies on a line x = const; fixed normal (+1, 0).
    Vertical,
    /// Edge lies on a line y = const; fixed normal (0, +1).
    Horizontal,
}

impl Orientation {
    /// The fixed unit normal carried by edges of this orientation.
    pub fn normal(self) -> (f64, f64) {
        match self {
            Orientation::Vertical => (1.0, 0.0),
            Orientation::Horizontal => (0.0, 1.0),
        }
    }
}

/// A single mesh edge with its geometry and cell adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    /// Direction of the fixed unit normal.
    pub orientation: Orientation,
    /// Edge length: dy for vertical edges, dx for horizontal ones.
    pub length: f64,
    /// First endpoint (lower y for vertical edges, lower x for horizontal).
    pub start: (f64, f64),
    /// Second endpoint.
    pub end: (f64, f64),
    /// Adjacent cell on the side the fixed normal points away from
    /// (left of a vertical edge, below a horizontal edge), if any.
    pub cell_behind: Option<usize>,
    /// Adjacent cell on the side the fixed normal points into
    /// (right of a vertical edge, above a horizontal edge), if any.
    pub cell_ahead: Option<usize>,
}

impl Edge {
    /// True when exactly one cell touches the edge.
    pub fn is_boundary(&self) -> bool {
        self.cell_behind.is_none() || self.cell_ahead.is_none()
    }
}

/// A boundary edge index paired with the sign that makes its fixed normal
/// point out of Ω.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryEdge {
    /// Global edge index.
    pub edge: usize,
    /// +1 if the fixed normal already points outward, −1 otherwise.
    pub outward_sign: f64,
}

/// Selector for the part of ∂Ω where flux is measured.
#[derive(Debug, Clone, PartialEq)]
pub enum BoundaryRegion {
    /// All of ∂Ω.
    Whole,
    /// One named side of the unit square.
    Side(Side),
    /// An explicit set of boundary edge indices.
    Edges(Vec<usize>),
}

/// The four sides of the unit square.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

/// Uniform rectangular mesh of the unit square.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    /// Cell count in x.
    pub nx: usize,
    /// Cell count in y.
    pub ny: usize,
    /// Cell width, 1/nx.
    pub dx: f64,
    /// Cell height, 1/ny.
    pub dy: f64,
    edges: Vec<Edge>,
    boundary: Vec<BoundaryEdge>,
}

/// Build the uniform mesh with `nx × ny` cells.
///
/// Fails on a zero cell count in either direction.
pub fn build_mesh(nx: usize, ny: usize) -> Result<Mesh> {
    if nx == 0 || ny == 0 {
        return Err(Error::invalid(format!(
            "mesh needs at least one cell per direction, got {nx}x{ny}"
        )));
    }
    let dx = 1.0 / nx as f64;
    let dy = 1.0 / ny as f64;
    let nv = (nx + 1) * ny;
    let nh = nx * (ny + 1);
    let mut edges = Vec::with_capacity(nv + nh);

    // Vertical edges: x = i*dx, spanning cell row j.
    for j in 0..ny {
        for i in 0..=nx {
            let x = i as f64 * dx;
            edges.push(Edge {
                orientation: Orientation::Vertical,
                length: dy,
                start: (x, j as f64 * dy),
                end: (x, (j + 1) as f64 * dy),
                cell_behind: (i > 0).then(|| j * nx + (i - 1)),
                cell_ahead: (i < nx).then(|| j * nx + i),
            });
        }
    }
    // Horizontal edges: y = j*dy, spanning cell column i.
    for j in 0..=ny {
        for i in 0..nx {
            let y = j as f64 * dy;
            edges.push(Edge {
                orientation: Orientation::Horizontal,
                length: dx,
                start: (i as f64 * dx, y),
                end: ((i + 1) as f64 * dx, y),
                cell_behind: (j > 0).then(|| (j - 1) * nx + i),
                cell_ahead: (j < ny).then(|| j * nx + i),
            });
        }
    }

    let mut boundary = Vec::with_capacity(2 * (nx + ny));
    for (idx, e) in edges.iter().enumerate() {
        match (e.cell_behind, e.cell_ahead) {
            (Some(_), None) => boundary.push(BoundaryEdge {
                edge: idx,
                outward_sign: 1.0,
            }),
            (None, Some(_)) => boundary.push(BoundaryEdge {
                edge: idx,
                outward_sign: -1.0,
            }),
            _ => {}
        }
    }

    Ok(Mesh {
        nx,
        ny,
        dx,
        dy,
        edges,
        boundary,
    })
}

impl Mesh {
    /// Number of cells J = nx·ny.
    pub fn num_cells(&self) -> usize {
        self.nx * self.ny
    }

    /// Number of edges I = nx·(ny+1) + ny·(nx+1).
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Cell area dx·dy (uniform over the mesh).
    pub fn cell_area(&self) -> f64 {
        self.dx * self.dy
    }

    /// All edges in index order.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Boundary edges with outward signs, sorted by edge index.
    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary
    }

    /// Index of cell `(ix, iy)`.
    pub fn cell_index(&self, ix: usize, iy: usize) -> usize {
        debug_assert!(ix < self.nx && iy < self.ny);
        iy * self.nx + ix
    }

    /// Column/row coordinates of a cell index.
    pub fn cell_coords(&self, cell: usize) -> (usize, usize) {
        (cell % self.nx, cell / self.nx)
    }

    /// Center point of a cell.
    pub fn cell_center(&self, cell: usize) -> (f64, f64) {
        let (ix, iy) = self.cell_coords(cell);
        ((ix as f64 + 0.5) * self.dx, (iy as f64 + 0.5) * self.dy)
    }

    /// Index of the vertical edge on grid line i (0..=nx) in cell row j.
    pub fn vertical_edge(&self, i: usize, j: usize) -> usize {
        debug_assert!(i <= self.nx && j < self.ny);
        j * (self.nx + 1) + i
    }

    /// Index of the horizontal edge on grid line j (0..=ny) in cell column i.
    pub fn horizontal_edge(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j <= self.ny);
        (self.nx + 1) * self.ny + j * self.nx + i
    }

    /// The four edges of a cell as `[left, right, bottom, top]`.
    pub fn cell_edges(&self, cell: usize) -> [usize; 4] {
        let (ix, iy) = self.cell_coords(cell);
        [
            self.vertical_edge(ix, iy),
            self.vertical_edge(ix + 1, iy),
            self.horizontal_edge(ix, iy),
            self.horizontal_edge(ix, iy + 1),
        ]
    }

    /// Boundary edges lying in `region`, sorted by edge index, each with its
    /// outward-normal sign.
    ///
    /// An explicit edge set must be non-empty and name only boundary edges.
    pub fn boundary_restriction(&self, region: &BoundaryRegion) -> Result<Vec<BoundaryEdge>> {
        match region {
            BoundaryRegion::Whole => Ok(self.boundary.clone()),
            BoundaryRegion::Side(side) => {
                let keep = |e: &Edge| -> bool {
                    match side {
                        Side::Left => e.orientation == Orientation::Vertical && e.start.0 == 0.0,
                        Side::Right => e.orientation == Orientation::Vertical && e.start.0 == 1.0,
                        Side::Bottom => {
                            e.orientation == Orientation::Horizontal && e.start.1 == 0.0
                        }
                        Side::Top => e.orientation == Orientation::Horizontal && e.start.1 == 1.0,
                    }
                };
                Ok(self
                    .boundary
                    .iter()
                    .copied()
                    .filter(|b| keep(&self.edges[b.edge]))
                    .collect())
            }
            BoundaryRegion::Edges(set) => {
                if set.is_empty() {
                    return Err(Error::invalid("empty boundary region"));
                }
                let mut sorted = set.clone();
                sorted.sort_unstable();
                sorted.dedup();
                sorted
                    .iter()
                    .map(|&e| {
                        self.boundary
                            .iter()
                            .find(|b| b.edge == e)
                            .copied()
                            .ok_or_else(|| {
                                Error::invalid(format!("edge {e} is not a boundary edge"))
                            })
                    })
                    .collect()
            }
        }
    }

    /// Write the plain-text edge table
    /// `edge_index x0 y0 x1 y1 normal_x normal_y boundary_flag`.
    pub fn write_dump<W: Write>(&self, mut out: W) -> Result<()> {
        for (idx, e) in self.edges.iter().enumerate() {
            let (nx, ny) = e.orientation.normal();
            writeln!(
                out,
                "{idx} {} {} {} {} {nx} {ny} {}",
                e.start.0,
                e.start.1,
                e.end.0,
                e.end.1,
                u8::from(e.is_boundary())
            )?;
        }
        Ok(())
    }
}

/// One row of the mesh dump table.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshDumpRow {
    /// Global edge index.
    pub edge: usize,
    /// Endpoints (x0, y0) – (x1, y1).
    pub start: (f64, f64),
    /// Second endpoint.
    pub end: (f64, f64),
    /// Fixed unit normal.
    pub normal: (f64, f64),
    /// True for boundary edges.
    pub boundary: bool,
}

/// Parse a mesh dump produced by [`Mesh::write_dump`].
pub fn read_mesh_dump<R: BufRead>(reader: R) -> Result<Vec<MeshDumpRow>> {
    let mut rows = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(Error::Parse(format!(
                "mesh dump line {}: expected 8 fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Parse(format!("mesh dump line {}: bad number", lineno + 1)))
        };
        rows.push(MeshDumpRow {
            edge: fields[0]
                .parse()
                .map_err(|_| Error::Parse(format!("mesh dump line {}: bad index", lineno + 1)))?,
            start: (num(fields[1])?, num(fields[2])?),
            end: (num(fields[3])?, num(fields[4])?),
            normal: (num(fields[5])?, num(fields[6])?),
            boundary: fields[7] == "1",
        });
    }
    Ok(rows)
}
