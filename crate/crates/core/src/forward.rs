//! Mixed finite element forward solver for the time-fractional diffusion
//! equation with a cellwise reaction coefficient.
//!
//! The spatial discretization uses the lowest-order rectangular mixed pair:
//! one flux degree of freedom per edge (the constant normal component of
//! `ω = −∇u`) and one value degree of freedom per cell (the piecewise-constant
//! approximation of `u`). With the fractional time weights of [`crate::caputo`]
//! every step `n` solves the same saddle-point system
//!
//! ```text
//! [ A    B      ] [σⁿ]   [ λ(tₙ)·Gb        ]
//! [ s·Bᵀ C + s·D] [βⁿ] = [ C·histⁿ         ]
//! ```
//!
//! where `A` is the negated edge mass matrix, `B` the divergence coupling,
//! `C` the cell mass diagonal, `D` the reaction diagonal, `s` the fractional
//! step scale, `Gb` the boundary-profile load, and `histⁿ` the weighted
//! combination of earlier cell states. The matrix is independent of time, so
//! [`ForwardOperator`] factors it once per coefficient field and reuses the
//! factorization for all steps and excitations. The cell mass multiplies the
//! history term on the right-hand side for the same reason it appears on the
//! left: both sides of the second block row are tested against the cell basis.
//!
//! Boundary measurements come from the flux unknowns directly: the outward
//! normal derivative of `u` on a boundary edge is `−(outward sign)·σ`, since
//! `σ` stores the component of `−∇u` along the fixed edge normal.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;

use rayon::prelude::*;

use crate::band::{BandLu, BandMatrix};
use crate::caputo::{history_combination, CaputoScheme};
use crate::error::{Error, Result};
use crate::mesh::{BoundaryRegion, Mesh};

/// 7-point Gauss–Legendre nodes and weights on [−1, 1]. Integrates the
/// trigonometric boundary profiles used here to machine precision on edges of
/// length ≤ 1 (the degree-13 rule's error term is below 1e−16 there).
const GAUSS7: [(f64, f64); 7] = [
    (-0.949_107_912_342_758_5, 0.129_484_966_168_870_65),
    (-0.741_531_185_599_394_5, 0.279_705_391_489_276_6),
    (-0.405_845_151_377_397_2, 0.381_830_050_505_118_3),
    (0.0, 0.417_959_183_673_468_96),
    (0.405_845_151_377_397_2, 0.381_830_050_505_118_3),
    (0.741_531_185_599_394_5, 0.279_705_391_489_276_6),
    (0.949_107_912_342_758_5, 0.129_484_966_168_870_65),
];

/// Spatial profile of a Dirichlet boundary excitation.
#[derive(Clone)]
pub enum SurfaceProfile {
    /// `g(x, y) = sin(k1·π·x)·cos(k2·π·y)`.
    SineCosine {
        /// Frequency along x.
        k1: u32,
        /// Frequency along y.
        k2: u32,
    },
    /// Constant profile `g ≡ value`.
    Constant(f64),
    /// Arbitrary profile evaluable at boundary points.
    Custom(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>),
}

impl SurfaceProfile {
    /// Evaluates the profile at a point.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            SurfaceProfile::SineCosine { k1, k2 } => {
                (f64::from(*k1) * std::f64::consts::PI * x).sin()
                    * (f64::from(*k2) * std::f64::consts::PI * y).cos()
            }
            SurfaceProfile::Constant(v) => *v,
            SurfaceProfile::Custom(f) => f(x, y),
        }
    }
}

impl fmt::Debug for SurfaceProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SurfaceProfile::SineCosine { k1, k2 } => {
                write!(f, "SineCosine {{ k1: {k1}, k2: {k2} }}")
            }
            SurfaceProfile::Constant(v) => write!(f, "Constant({v})"),
            SurfaceProfile::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Time amplitude of a Dirichlet boundary excitation.
#[derive(Clone)]
pub enum TimeAmplitude {
    /// `λ(t) = t²`.
    QuadraticRamp,
    /// Arbitrary amplitude; must vanish at `t = 0` to be compatible with the
    /// zero initial state.
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl TimeAmplitude {
    /// Evaluates the amplitude at time `t`.
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            TimeAmplitude::QuadraticRamp => t * t,
            TimeAmplitude::Custom(f) => f(t),
        }
    }
}

impl fmt::Debug for TimeAmplitude {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeAmplitude::QuadraticRamp => write!(f, "QuadraticRamp"),
            TimeAmplitude::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Time-separable Dirichlet boundary excitation `u|_{∂Ω} = λ(t)·g(x, y)`.
#[derive(Clone, Debug)]
pub struct Excitation {
    /// Spatial profile `g`.
    pub surface: SurfaceProfile,
    /// Time amplitude `λ`.
    pub amplitude: TimeAmplitude,
    /// Identifier used in data files and logs.
    pub label: String,
}

impl Excitation {
    /// The standard excitation `sin(k1·π·x)·cos(k2·π·y)` with `λ(t) = t²`.
    pub fn standard(k1: u32, k2: u32) -> Self {
        Excitation {
            surface: SurfaceProfile::SineCosine { k1, k2 },
            amplitude: TimeAmplitude::QuadraticRamp,
            label: format!("g{k1}{k2}"),
        }
    }

    /// Checks the compatibility condition `λ(0) = 0` required by the zero
    /// initial state.
    pub fn validate(&self) -> Result<()> {
        let at_zero = self.amplitude.eval(0.0);
        if at_zero.abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "excitation '{}' has λ(0) = {at_zero:e}; the amplitude must vanish at t = 0",
                self.label
            )));
        }
        Ok(())
    }
}

/// Time- and coefficient-independent matrices of the mixed discretization.
///
/// The reaction diagonal and the boundary load complete the per-step system;
/// they are produced by [`assemble_reaction`] and [`assemble_boundary_load`].
#[derive(Clone, Debug, PartialEq)]
pub struct FemMatrices {
    /// Entries of the negated edge mass matrix `−∫ ψᵢ·ψⱼ`, as sorted
    /// `(row, col, value)` triplets with both symmetric halves stored.
    pub edge_mass: Vec<(usize, usize, f64)>,
    /// Divergence coupling entries `(edge, cell, ±edge length)`; positive when
    /// the fixed edge normal points out of the cell (right/top edge), negative
    /// otherwise (left/bottom edge).
    pub divergence: Vec<(usize, usize, f64)>,
    /// Cell mass diagonal: one cell area per cell.
    pub cell_mass: Vec<f64>,
}

/// Assembles the edge mass, divergence coupling, and cell mass matrices.
///
/// All integrals are closed-form: on a `dx × dy` cell the two edge basis
/// functions sharing a direction contribute `area/3` on the diagonal and
/// `area/6` off it (then negated), perpendicular pairs do not couple, and the
/// divergence entries are `±(edge length)`.
pub fn assemble_static(mesh: &Mesh) -> FemMatrices {
    let area = mesh.cell_area();
    let mut mass: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut divergence = Vec::with_capacity(4 * mesh.num_cells());
    for cell in 0..mesh.num_cells() {
        let [left, right, bottom, top] = mesh.cell_edges(cell);
        for (e1, e2) in [(left, right), (bottom, top)] {
            *mass.entry((e1, e1)).or_insert(0.0) += area / 3.0;
            *mass.entry((e2, e2)).or_insert(0.0) += area / 3.0;
            *mass.entry((e1, e2)).or_insert(0.0) += area / 6.0;
            *mass.entry((e2, e1)).or_insert(0.0) += area / 6.0;
        }
        divergence.push((left, cell, -mesh.dy));
        divergence.push((right, cell, mesh.dy));
        divergence.push((bottom, cell, -mesh.dx));
        divergence.push((top, cell, mesh.dx));
    }
    let edge_mass = mass.into_iter().map(|((i, j), v)| (i, j, -v)).collect();
    divergence.sort_unstable_by_key(|&(e, c, _)| (e, c));
    FemMatrices {
        edge_mass,
        divergence,
        cell_mass: vec![area; mesh.num_cells()],
    }
}

/// Assembles the reaction diagonal: entry `c` is `q[c] · cell area`.
pub fn assemble_reaction(mesh: &Mesh, q: &[f64]) -> Result<Vec<f64>> {
    if q.len() != mesh.num_cells() {
        return Err(Error::invalid(format!(
            "reaction field has {} entries but the mesh has {} cells",
            q.len(),
            mesh.num_cells()
        )));
    }
    if let Some(bad) = q.iter().find(|v| !v.is_finite() || **v <= 0.0) {
        return Err(Error::invalid(format!(
            "reaction field contains a non-finite or non-positive value {bad}"
        )));
    }
    let area = mesh.cell_area();
    Ok(q.iter().map(|v| v * area).collect())
}

/// Boundary load in time-separated form: column `n` of the full load matrix
/// equals `amplitudes[n−1] · base`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryLoad {
    /// Time-independent boundary integrals `(outward sign)·∫_edge g ds`, one
    /// entry per edge; zero away from the boundary.
    pub base: Vec<f64>,
    /// Amplitude values `λ(tₙ)` for the steps `n = 1..=M`.
    pub amplitudes: Vec<f64>,
}

impl BoundaryLoad {
    /// Number of time steps covered by the load.
    pub fn num_steps(&self) -> usize {
        self.amplitudes.len()
    }

    /// The dense load column for step `n` (1-based).
    pub fn column(&self, n: usize) -> Result<Vec<f64>> {
        if n == 0 || n > self.amplitudes.len() {
            return Err(Error::invalid(format!(
                "load column {n} out of range 1..={}",
                self.amplitudes.len()
            )));
        }
        let amp = self.amplitudes[n - 1];
        Ok(self.base.iter().map(|v| amp * v).collect())
    }
}

/// Integrates `g` over one edge with the 7-point Gauss rule.
fn edge_integral(mesh: &Mesh, edge: usize, g: &SurfaceProfile) -> f64 {
    let e = &mesh.edges()[edge];
    let (x0, y0) = e.start;
    let (x1, y1) = e.end;
    let (mx, my) = (0.5 * (x0 + x1), 0.5 * (y0 + y1));
    let (hx, hy) = (0.5 * (x1 - x0), 0.5 * (y1 - y0));
    let half_len = 0.5 * e.length;
    let mut sum = 0.0;
    for (node, weight) in GAUSS7 {
        sum += weight * g.eval(mx + hx * node, my + hy * node);
    }
    half_len * sum
}

/// Assembles the boundary load of an excitation: entry `i` of `base` is
/// `(outward sign)·∫_{edge i} g ds` for boundary edges and zero otherwise,
/// and `amplitudes[n−1] = λ(tₙ)` on the scheme's time grid.
pub fn assemble_boundary_load(
    mesh: &Mesh,
    exc: &Excitation,
    scheme: &CaputoScheme,
) -> Result<BoundaryLoad> {
    exc.validate()?;
    let mut base = vec![0.0; mesh.num_edges()];
    for be in mesh.boundary_edges() {
        base[be.edge] = be.outward_sign * edge_integral(mesh, be.edge, &exc.surface);
    }
    let amplitudes = (1..=scheme.num_steps)
        .map(|n| exc.amplitude.eval(scheme.time(n)))
        .collect();
    Ok(BoundaryLoad { base, amplitudes })
}

/// Discrete solution of one forward run: per-step flux and cell-value vectors.
#[derive(Clone, Debug)]
pub struct ForwardSolution<'a> {
    /// The mesh the run was discretized on.
    pub mesh: &'a Mesh,
    /// The fractional time scheme used.
    pub scheme: CaputoScheme,
    /// Flux vectors `σⁿ` for `n = 1..=M`; entry `[n−1][e]` is the constant
    /// normal component of `−∇u` on edge `e` at step `n`.
    pub sigma: Vec<Vec<f64>>,
    /// Cell-value vectors `βⁿ` for `n = 1..=M`.
    pub beta: Vec<Vec<f64>>,
}

/// Factorized forward stepper for one coefficient field.
///
/// Construction assembles and factors the saddle-point matrix; [`Self::run`]
/// then marches any excitation through all `M` steps with back-substitutions
/// only. Runs for different excitations may share one operator concurrently.
pub struct ForwardOperator<'m, 's> {
    mesh: &'m Mesh,
    scheme: &'s CaputoScheme,
    lu: BandLu,
    /// System position → natural index (edges `0..I`, then cells `I..I+J`).
    perm: Vec<usize>,
    /// Natural index → system position; inverse of `perm`.
    pos: Vec<usize>,
    cell_mass: Vec<f64>,
}

/// Builds the row ordering that keeps the saddle-point matrix banded: sweep
/// the rows of the grid bottom-up, interleaving each row's horizontal edges,
/// vertical edges, and cells, and close with the top horizontal edges.
fn strip_permutation(mesh: &Mesh) -> Vec<usize> {
    let num_edges = mesh.num_edges();
    let mut perm = Vec::with_capacity(num_edges + mesh.num_cells());
    for j in 0..mesh.ny {
        for i in 0..mesh.nx {
            perm.push(mesh.horizontal_edge(i, j));
        }
        for i in 0..=mesh.nx {
            perm.push(mesh.vertical_edge(i, j));
        }
        for i in 0..mesh.nx {
            perm.push(num_edges + mesh.cell_index(i, j));
        }
    }
    for i in 0..mesh.nx {
        perm.push(mesh.horizontal_edge(i, mesh.ny));
    }
    perm
}

impl<'m, 's> ForwardOperator<'m, 's> {
    /// Assembles and factors the block system for the coefficient field `q`.
    pub fn new(mesh: &'m Mesh, q: &[f64], scheme: &'s CaputoScheme) -> Result<Self> {
        let matrices = assemble_static(mesh);
        let reaction = assemble_reaction(mesh, q)?;
        let scale = scheme.scale;
        let num_edges = mesh.num_edges();
        let dim = num_edges + mesh.num_cells();

        let perm = strip_permutation(mesh);
        let mut pos = vec![0usize; dim];
        for (p, &natural) in perm.iter().enumerate() {
            pos[natural] = p;
        }

        let mut triplets = Vec::with_capacity(
            matrices.edge_mass.len() + 2 * matrices.divergence.len() + mesh.num_cells(),
        );
        for &(i, j, v) in &matrices.edge_mass {
            triplets.push((pos[i], pos[j], v));
        }
        for &(e, c, v) in &matrices.divergence {
            triplets.push((pos[e], pos[num_edges + c], v));
            triplets.push((pos[num_edges + c], pos[e], scale * v));
        }
        for c in 0..mesh.num_cells() {
            let p = pos[num_edges + c];
            triplets.push((p, p, matrices.cell_mass[c] + scale * reaction[c]));
        }

        let lu = BandMatrix::from_triplets(dim, &triplets)?.factor()?;
        Ok(ForwardOperator {
            mesh,
            scheme,
            lu,
            perm,
            pos,
            cell_mass: matrices.cell_mass,
        })
    }

    /// Marches the factored system through all `M` steps for one excitation.
    pub fn run(&self, load: &BoundaryLoad) -> Result<ForwardSolution<'m>> {
        let num_edges = self.mesh.num_edges();
        let num_cells = self.mesh.num_cells();
        if load.base.len() != num_edges {
            return Err(Error::invalid(format!(
                "boundary load has {} entries but the mesh has {} edges",
                load.base.len(),
                num_edges
            )));
        }
        let steps = self.scheme.num_steps;
        if load.num_steps() != steps {
            return Err(Error::invalid(format!(
                "boundary load covers {} steps but the scheme has {}",
                load.num_steps(),
                steps
            )));
        }

        let mut sigma = Vec::with_capacity(steps);
        let mut beta = Vec::with_capacity(steps);
        // Cell states β⁰, β¹, …; the zero initial state seeds the history.
        let mut states: Vec<Vec<f64>> = vec![vec![0.0; num_cells]];
        let mut rhs = vec![0.0; num_edges + num_cells];
        for n in 1..=steps {
            let hist = history_combination(self.scheme, n, &states)?;
            let amp = load.amplitudes[n - 1];
            for (p, &natural) in self.perm.iter().enumerate() {
                rhs[p] = if natural < num_edges {
                    amp * load.base[natural]
                } else {
                    self.cell_mass[natural - num_edges] * hist[natural - num_edges]
                };
            }
            self.lu.solve_in_place(&mut rhs);
            let sigma_n: Vec<f64> = (0..num_edges).map(|e| rhs[self.pos[e]]).collect();
            let beta_n: Vec<f64> = (0..num_cells)
                .map(|c| rhs[self.pos[num_edges + c]])
                .collect();
            sigma.push(sigma_n);
            states.push(beta_n.clone());
            beta.push(beta_n);
        }
        Ok(ForwardSolution {
            mesh: self.mesh,
            scheme: self.scheme.clone(),
            sigma,
            beta,
        })
    }
}

/// Solves the forward problem for one excitation: assemble, factor, march.
pub fn solve_forward<'a>(
    mesh: &'a Mesh,
    q: &[f64],
    exc: &Excitation,
    scheme: &CaputoScheme,
) -> Result<ForwardSolution<'a>> {
    let op = ForwardOperator::new(mesh, q, scheme)?;
    let load = assemble_boundary_load(mesh, exc, scheme)?;
    op.run(&load)
}

/// Extracts the outward normal derivative `∂u/∂ν = −(outward sign)·σ` on the
/// requested boundary region at the requested steps, concatenated time-major
/// (all region edges of the first step, then the second, …).
pub fn extract_flux(
    sol: &ForwardSolution<'_>,
    region: &BoundaryRegion,
    times: &[usize],
) -> Result<Vec<f64>> {
    let edges = sol.mesh.boundary_restriction(region)?;
    let steps = sol.sigma.len();
    let mut out = Vec::with_capacity(times.len() * edges.len());
    for &n in times {
        if n == 0 || n > steps {
            return Err(Error::invalid(format!(
                "measurement step {n} out of range 1..={steps}"
            )));
        }
        let sigma_n = &sol.sigma[n - 1];
        out.extend(edges.iter().map(|be| -be.outward_sign * sigma_n[be.edge]));
    }
    Ok(out)
}

/// The discrete Dirichlet-to-Neumann map: stacks the flux measurements of all
/// excitations, in list order, sharing one factorization of the system.
pub fn dirichlet_to_neumann(
    mesh: &Mesh,
    q: &[f64],
    excitations: &[Excitation],
    scheme: &CaputoScheme,
    region: &BoundaryRegion,
    times: &[usize],
) -> Result<Vec<f64>> {
    if excitations.is_empty() {
        return Err(Error::invalid("excitation list is empty"));
    }
    let op = ForwardOperator::new(mesh, q, scheme)?;
    let blocks = excitations
        .par_iter()
        .map(|exc| {
            let load = assemble_boundary_load(mesh, exc, scheme)?;
            let sol = op.run(&load)?;
            extract_flux(&sol, region, times)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(blocks.concat())
}

/// Max-norm residual of the step-`n` block system at the recorded solution;
/// used to assert that accepted steps actually solve their linear systems.
pub fn residual_for_step(
    sol: &ForwardSolution<'_>,
    load: &BoundaryLoad,
    q: &[f64],
    n: usize,
) -> Result<f64> {
    let mesh = sol.mesh;
    let steps = sol.sigma.len();
    if n == 0 || n > steps {
        return Err(Error::invalid(format!("step {n} out of range 1..={steps}")));
    }
    let matrices = assemble_static(mesh);
    let reaction = assemble_reaction(mesh, q)?;
    let scale = sol.scheme.scale;
    let mut states: Vec<Vec<f64>> = Vec::with_capacity(n);
    states.push(vec![0.0; mesh.num_cells()]);
    states.extend(sol.beta[..n - 1].iter().cloned());
    let hist = history_combination(&sol.scheme, n, &states)?;

    let sigma_n = &sol.sigma[n - 1];
    let beta_n = &sol.beta[n - 1];
    let amp = load.amplitudes[n - 1];
    let mut edge_residual = vec![0.0; mesh.num_edges()];
    for e in 0..mesh.num_edges() {
        edge_residual[e] = -amp * load.base[e];
    }
    for &(i, j, v) in &matrices.edge_mass {
        edge_residual[i] += v * sigma_n[j];
    }
    let mut cell_residual: Vec<f64> = (0..mesh.num_cells())
        .map(|c| (matrices.cell_mass[c] + scale * reaction[c]) * beta_n[c]
            - matrices.cell_mass[c] * hist[c])
        .collect();
    for &(e, c, v) in &matrices.divergence {
        edge_residual[e] += v * beta_n[c];
        cell_residual[c] += scale * v * sigma_n[e];
    }
    let worst = edge_residual
        .iter()
        .chain(cell_residual.iter())
        .fold(0.0f64, |acc, r| acc.max(r.abs()));
    Ok(worst)
}

/// One row of a cell-field dump.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldDumpRow {
    /// Cell index in row-major order.
    pub cell_index: usize,
    /// Cell center x.
    pub x: f64,
    /// Cell center y.
    pub y: f64,
    /// Field value on the cell.
    pub value: f64,
}

/// Writes a cellwise field as `cell_index x_center y_center value` lines.
pub fn write_field_dump<W: Write>(mut out: W, mesh: &Mesh, values: &[f64]) -> Result<()> {
    if values.len() != mesh.num_cells() {
        return Err(Error::invalid(format!(
            "field has {} entries but the mesh has {} cells",
            values.len(),
            mesh.num_cells()
        )));
    }
    writeln!(out, "# cell_index x_center y_center value")?;
    for (c, v) in values.iter().enumerate() {
        let (x, y) = mesh.cell_center(c);
        writeln!(out, "{c} {x} {y} {v}")?;
    }
    Ok(())
}

/// Reads a field dump written by [`write_field_dump`].
pub fn read_field_dump<R: BufRead>(input: R) -> Result<Vec<FieldDumpRow>> {
    let mut rows = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::Parse(format!(
                "field dump line {}: expected 4 fields, found {}",
                lineno + 1,
                fields.len()
            )));
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|e| Error::Parse(format!("field dump line {}: {e}", lineno + 1)))
        };
        rows.push(FieldDumpRow {
            cell_index: fields[0]
                .parse()
                .map_err(|e| Error::Parse(format!("field dump line {}: {e}", lineno + 1)))?,
            x: parse_f(fields[1])?,
            y: parse_f(fields[2])?,
            value: parse_f(fields[3])?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::caputo::build_scheme;
    use crate::mesh::{build_mesh, Orientation, Side};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    /// Evaluates the basis function of `edge` on `cell` at a point; the basis
    /// has unit normal component on its own edge, decays linearly across the
    /// cell, and is aligned with the fixed edge normal.
    fn basis_eval(mesh: &Mesh, edge: usize, cell: usize, x: f64, y: f64) -> (f64, f64) {
        let e = &mesh.edges()[edge];
        let (ix, iy) = mesh.cell_coords(cell);
        let (x0, y0) = (ix as f64 * mesh.dx, iy as f64 * mesh.dy);
        match e.orientation {
            Orientation::Vertical => {
                let xe = e.start.0;
                if (xe - (x0 + mesh.dx)).abs() < 1e-12 {
                    ((x - x0) / mesh.dx, 0.0)
                } else {
                    ((x0 + mesh.dx - x) / mesh.dx, 0.0)
                }
            }
            Orientation::Horizontal => {
                let ye = e.start.1;
                if (ye - (y0 + mesh.dy)).abs() < 1e-12 {
                    (0.0, (y - y0) / mesh.dy)
                } else {
                    (0.0, (y0 + mesh.dy - y) / mesh.dy)
                }
            }
        }
    }

    #[test]
    fn unit_cell_static_matrices() {
        let mesh = build_mesh(1, 1).unwrap();
        let m = assemble_static(&mesh);
        assert_eq!(m.cell_mass, vec![1.0]);
        let lookup: HashMap<(usize, usize), f64> =
            m.edge_mass.iter().map(|&(i, j, v)| ((i, j), v)).collect();
        // Edges 0/1 are the left/right pair, 2/3 the bottom/top pair.
        for (e1, e2) in [(0, 1), (2, 3)] {
            assert_abs_diff_eq!(lookup[&(e1, e1)], -1.0 / 3.0, epsilon = 1e-15);
            assert_abs_diff_eq!(lookup[&(e2, e2)], -1.0 / 3.0, epsilon = 1e-15);
            assert_abs_diff_eq!(lookup[&(e1, e2)], -1.0 / 6.0, epsilon = 1e-15);
            assert_abs_diff_eq!(lookup[&(e2, e1)], -1.0 / 6.0, epsilon = 1e-15);
        }
        assert_eq!(m.edge_mass.len(), 8);
        assert_eq!(m.divergence.len(), 4);
    }

    #[test]
    fn edge_mass_is_symmetric_negative() {
        let mesh = build_mesh(4, 3).unwrap();
        let m = assemble_static(&mesh);
        let lookup: HashMap<(usize, usize), f64> =
            m.edge_mass.iter().map(|&(i, j, v)| ((i, j), v)).collect();
        for (&(i, j), &v) in &lookup {
            assert_eq!(lookup[&(j, i)], v);
            if i == j {
                assert!(v < 0.0);
            }
        }
    }

    #[test]
    fn divergence_matches_quadrature_oracle() {
        // The divergence of every basis function is constant on each cell, so
        // a central difference of the (linear) basis components recovers it
        // exactly; the entry is that constant times the cell area.
        for (nx, ny) in [(2, 2), (3, 5)] {
            let mesh = build_mesh(nx, ny).unwrap();
            let m = assemble_static(&mesh);
            let mut per_edge = vec![0usize; mesh.num_edges()];
            for &(e, c, v) in &m.divergence {
                per_edge[e] += 1;
                let (x, y) = mesh.cell_center(c);
                let h = 1e-4;
                let div = (basis_eval(&mesh, e, c, x + h, y).0
                    - basis_eval(&mesh, e, c, x - h, y).0)
                    / (2.0 * h)
                    + (basis_eval(&mesh, e, c, x, y + h).1
                        - basis_eval(&mesh, e, c, x, y - h).1)
                        / (2.0 * h);
                assert_abs_diff_eq!(v, div * mesh.cell_area(), epsilon = 1e-12);
            }
            for (e, count) in per_edge.iter().enumerate() {
                let edge = &mesh.edges()[e];
                let adjacent = [edge.cell_behind, edge.cell_ahead]
                    .iter()
                    .flatten()
                    .count();
                assert_eq!(*count, adjacent, "edge {e}");
            }
        }
    }

    #[test]
    fn edge_mass_constant_field_energy() {
        // The interpolant of the constant field (1, 0) sets every vertical
        // edge dof to 1; its negated squared L² norm over the unit square
        // is −1. Same along y.
        let mesh = build_mesh(2, 2).unwrap();
        let m = assemble_static(&mesh);
        let num_vertical = (mesh.nx + 1) * mesh.ny;
        for vertical in [true, false] {
            let dof = |e: usize| -> f64 {
                let is_v = e < num_vertical;
                if is_v == vertical {
                    1.0
                } else {
                    0.0
                }
            };
            let form: f64 = m
                .edge_mass
                .iter()
                .map(|&(i, j, v)| v * dof(i) * dof(j))
                .sum();
            assert_abs_diff_eq!(form, -1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn reaction_diagonal_examples() {
        let unit = build_mesh(1, 1).unwrap();
        assert_eq!(assemble_reaction(&unit, &[1.0]).unwrap(), vec![1.0]);

        let mesh = build_mesh(2, 2).unwrap();
        let ones = vec![1.0; 4];
        assert_eq!(
            assemble_reaction(&mesh, &ones).unwrap(),
            assemble_static(&mesh).cell_mass
        );
        let spiked = assemble_reaction(&mesh, &[10.0, 1.0, 1.0, 1.0]).unwrap();
        for (got, want) in spiked.iter().zip([2.5, 0.25, 0.25, 0.25]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-15);
        }

        assert!(assemble_reaction(&mesh, &[1.0; 3]).is_err());
        assert!(assemble_reaction(&mesh, &[1.0, -2.0, 1.0, 1.0]).is_err());
        assert!(assemble_reaction(&mesh, &[1.0, f64::NAN, 1.0, 1.0]).is_err());
    }

    #[test]
    fn boundary_load_closed_form() {
        let mesh = build_mesh(2, 2).unwrap();
        let scheme = build_scheme(0.4, 0.01, 100).unwrap();
        let load =
            assemble_boundary_load(&mesh, &Excitation::standard(1, 1), &scheme).unwrap();

        // ∫ sin(πx) dx over each bottom half-edge is 1/π; bottom signs are −1.
        let inv_pi = 1.0 / std::f64::consts::PI;
        for i in 0..2 {
            let bottom = mesh.horizontal_edge(i, 0);
            assert_abs_diff_eq!(load.base[bottom], -inv_pi, epsilon = 1e-10);
            // Top: cos(π·1) flips the profile sign, the outward sign is +1.
            let top = mesh.horizontal_edge(i, 2);
            assert_abs_diff_eq!(load.base[top], -inv_pi, epsilon = 1e-10);
        }
        // sin vanishes on both vertical boundaries.
        for j in 0..2 {
            assert_abs_diff_eq!(load.base[mesh.vertical_edge(0, j)], 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(load.base[mesh.vertical_edge(2, j)], 0.0, epsilon = 1e-12);
        }
        // Interior edges carry no load.
        assert_eq!(load.base[mesh.vertical_edge(1, 0)], 0.0);
        assert_eq!(load.base[mesh.horizontal_edge(0, 1)], 0.0);

        // λ(t) = t² doubles in t → quadruples in value.
        assert_abs_diff_eq!(
            load.amplitudes[19] / load.amplitudes[9],
            4.0,
            epsilon = 1e-12
        );
        let col2 = load.column(2).unwrap();
        for (full, base) in col2.iter().zip(&load.base) {
            assert_abs_diff_eq!(*full, load.amplitudes[1] * base, epsilon = 0.0);
        }
        assert!(load.column(0).is_err());
        assert!(load.column(101).is_err());
    }

    #[test]
    fn zero_profile_gives_zero_load() {
        let mesh = build_mesh(3, 3).unwrap();
        let scheme = build_scheme(0.5, 0.1, 10).unwrap();
        let exc = Excitation {
            surface: SurfaceProfile::Constant(0.0),
            amplitude: TimeAmplitude::QuadraticRamp,
            label: "zero".into(),
        };
        let load = assemble_boundary_load(&mesh, &exc, &scheme).unwrap();
        assert!(load.base.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn incompatible_amplitude_rejected() {
        let mesh = build_mesh(2, 2).unwrap();
        let scheme = build_scheme(0.4, 0.1, 5).unwrap();
        let exc = Excitation {
            surface: SurfaceProfile::Constant(1.0),
            amplitude: TimeAmplitude::Custom(Arc::new(|t| 1.0 + t)),
            label: "bad".into(),
        };
        assert!(assemble_boundary_load(&mesh, &exc, &scheme).is_err());
    }

    #[test]
    fn zero_excitation_yields_zero_solution() {
        let mesh = build_mesh(3, 3).unwrap();
        let scheme = build_scheme(0.4, 0.05, 8).unwrap();
        let exc = Excitation {
            surface: SurfaceProfile::Constant(0.0),
            amplitude: TimeAmplitude::QuadraticRamp,
            label: "zero".into(),
        };
        let sol = solve_forward(&mesh, &vec![1.0; 9], &exc, &scheme).unwrap();
        for n in 0..8 {
            assert!(sol.sigma[n].iter().all(|v| *v == 0.0));
            assert!(sol.beta[n].iter().all(|v| *v == 0.0));
        }
        let flux = extract_flux(&sol, &BoundaryRegion::Whole, &[1, 8]).unwrap();
        assert_eq!(flux.len(), 2 * 12);
        assert!(flux.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn solution_scales_linearly_with_excitation() {
        let mesh = build_mesh(5, 5).unwrap();
        let scheme = build_scheme(0.6, 0.02, 10).unwrap();
        let q: Vec<f64> = (0..25).map(|c| 1.0 + 0.5 * (c as f64).sin()).collect();
        let base_exc = Excitation::standard(1, 2);
        let base_sol = solve_forward(&mesh, &q, &base_exc, &scheme).unwrap();
        let base_flux = extract_flux(&base_sol, &BoundaryRegion::Whole, &[5, 10]).unwrap();

        for c in [-1.0, 0.5, 3.0] {
            let scaled = Excitation {
                surface: SurfaceProfile::Custom(Arc::new(move |x, y| {
                    c * SurfaceProfile::SineCosine { k1: 1, k2: 2 }.eval(x, y)
                })),
                amplitude: TimeAmplitude::QuadraticRamp,
                label: format!("scaled{c}"),
            };
            let sol = solve_forward(&mesh, &q, &scaled, &scheme).unwrap();
            for n in 0..10 {
                for (got, want) in sol.sigma[n].iter().zip(&base_sol.sigma[n]) {
                    assert_abs_diff_eq!(*got, c * want, epsilon = 1e-10);
                }
            }
            let flux = extract_flux(&sol, &BoundaryRegion::Whole, &[5, 10]).unwrap();
            for (got, want) in flux.iter().zip(&base_flux) {
                assert_abs_diff_eq!(*got, c * want, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn accepted_steps_satisfy_block_system() {
        let mesh = build_mesh(6, 6).unwrap();
        let scheme = build_scheme(0.4, 0.05, 12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let q: Vec<f64> = (0..36).map(|_| rng.gen_range(0.5..5.0)).collect();
        let exc = Excitation::standard(2, 1);
        let load = assemble_boundary_load(&mesh, &exc, &scheme).unwrap();
        let op = ForwardOperator::new(&mesh, &q, &scheme).unwrap();
        let sol = op.run(&load).unwrap();
        for n in [1, 6, 12] {
            let res = residual_for_step(&sol, &load, &q, n).unwrap();
            assert!(res <= 1e-10, "step {n} residual {res:e}");
        }
    }

    #[test]
    fn flux_layout_and_step_bounds() {
        let mesh = build_mesh(20, 20).unwrap();
        let scheme = build_scheme(0.4, 0.2, 5).unwrap();
        let sol = solve_forward(&mesh, &vec![1.0; 400], &Excitation::standard(1, 1), &scheme)
            .unwrap();
        let flux = extract_flux(&sol, &BoundaryRegion::Whole, &[1, 2, 3, 4, 5]).unwrap();
        assert_eq!(flux.len(), 400);
        let left = extract_flux(&sol, &BoundaryRegion::Side(Side::Left), &[5]).unwrap();
        assert_eq!(left.len(), 20);
        assert!(extract_flux(&sol, &BoundaryRegion::Whole, &[0]).is_err());
        assert!(extract_flux(&sol, &BoundaryRegion::Whole, &[6]).is_err());
    }

    #[test]
    fn stacked_excitations_concatenate() {
        let mesh = build_mesh(4, 4).unwrap();
        let scheme = build_scheme(0.4, 0.1, 6).unwrap();
        let q: Vec<f64> = (0..16).map(|c| 1.0 + 0.1 * c as f64).collect();
        let excs = [
            Excitation::standard(1, 1),
            Excitation::standard(1, 2),
            Excitation::standard(2, 1),
        ];
        let times = [2, 4, 6];
        let region = BoundaryRegion::Whole;
        let stacked =
            dirichlet_to_neumann(&mesh, &q, &excs, &scheme, &region, &times).unwrap();
        let singles: Vec<Vec<f64>> = excs
            .iter()
            .map(|e| {
                dirichlet_to_neumann(&mesh, &q, std::slice::from_ref(e), &scheme, &region, &times)
                    .unwrap()
            })
            .collect();
        assert_eq!(stacked.len(), 3 * singles[0].len());
        assert_eq!(stacked, singles.concat());

        let swapped = [excs[1].clone(), excs[0].clone(), excs[2].clone()];
        let permuted =
            dirichlet_to_neumann(&mesh, &q, &swapped, &scheme, &region, &times).unwrap();
        assert_eq!(
            permuted,
            [singles[1].clone(), singles[0].clone(), singles[2].clone()].concat()
        );

        assert!(dirichlet_to_neumann(&mesh, &q, &[], &scheme, &region, &times).is_err());
    }

    #[test]
    fn flux_sign_matches_gradient_reconstruction() {
        // Drive the boundary with λ(t) = t(1−t): while the boundary value
        // rises the interior lags behind it and the outward derivative is
        // positive; at t = 1 the boundary is back at zero, the interior still
        // holds mass, and the outward derivative is negative. A one-sided
        // difference against the adjacent cell value reconstructs the same
        // signs independently.
        let mesh = build_mesh(32, 32).unwrap();
        let scheme = build_scheme(0.4, 0.025, 40).unwrap();
        let exc = Excitation {
            surface: SurfaceProfile::Constant(1.0),
            amplitude: TimeAmplitude::Custom(Arc::new(|t| t * (1.0 - t))),
            label: "pulse".into(),
        };
        let sol = solve_forward(&mesh, &vec![1.0; 32 * 32], &exc, &scheme).unwrap();
        for (n, positive) in [(8usize, true), (40usize, false)] {
            let t = scheme.time(n);
            let flux = extract_flux(&sol, &BoundaryRegion::Whole, &[n]).unwrap();
            let boundary = mesh.boundary_edges();
            let mut mean_flux = 0.0;
            let mut mean_rec = 0.0;
            for (be, &f) in boundary.iter().zip(&flux) {
                let edge = &mesh.edges()[be.edge];
                let cell = edge
                    .cell_behind
                    .or(edge.cell_ahead)
                    .expect("boundary edge has one adjacent cell");
                let half = match edge.orientation {
                    Orientation::Vertical => 0.5 * mesh.dx,
                    Orientation::Horizontal => 0.5 * mesh.dy,
                };
                let rec = (exc.amplitude.eval(t) - sol.beta[n - 1][cell]) / half;
                assert_eq!(f.signum(), rec.signum(), "edge {}", be.edge);
                mean_flux += f;
                mean_rec += rec;
            }
            mean_flux /= flux.len() as f64;
            mean_rec /= flux.len() as f64;
            assert_eq!(mean_flux > 0.0, positive, "step {n}: mean {mean_flux:e}");
            assert!(
                (mean_flux - mean_rec).abs() <= 0.2 * mean_flux.abs(),
                "step {n}: flux mean {mean_flux:e} vs reconstruction {mean_rec:e}"
            );
        }
    }

    #[test]
    fn field_dump_round_trips() {
        let mesh = build_mesh(3, 2).unwrap();
        let scheme = build_scheme(0.5, 0.1, 4).unwrap();
        let sol = solve_forward(&mesh, &vec![2.0; 6], &Excitation::standard(1, 1), &scheme)
            .unwrap();
        let values = &sol.beta[3];
        let mut first = Vec::new();
        write_field_dump(&mut first, &mesh, values).unwrap();
        let rows = read_field_dump(first.as_slice()).unwrap();
        assert_eq!(rows.len(), 6);
        for (c, row) in rows.iter().enumerate() {
            let (x, y) = mesh.cell_center(c);
            assert_eq!(row.cell_index, c);
            assert_eq!(row.x, x);
            assert_eq!(row.y, y);
            assert_eq!(row.value, values[c]);
        }
        let mut second = Vec::new();
        write_field_dump(&mut second, &mesh, values).unwrap();
        assert_eq!(first, second);

        assert!(write_field_dump(Vec::new(), &mesh, &[1.0]).is_err());
        assert!(read_field_dump("0 0.5 0.5".as_bytes()).is_err());
        assert!(read_field_dump("a b c d".as_bytes()).is_err());
    }
}
