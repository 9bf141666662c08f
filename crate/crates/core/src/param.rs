//! Coefficient parameterizations: the map from a low-dimensional parameter
//! vector `a` to a cellwise reaction field `q`.
//!
//! Three families are supported. The log-normal family writes
//! `q = exp(H·a)` with `H` the truncated discrete Karhunen–Loève basis of a
//! Gaussian covariance ([`build_kle`]); it suits smooth coefficients and keeps
//! the first mode sign-definite. The indicator families tile the domain with
//! rectangular blocks or full-height vertical strips and assign one parameter
//! per region; they suit piecewise-constant and piecewise-smooth coefficients.
//! Every realization is clamped into an admissible interval so downstream
//! solvers always see strictly positive, bounded coefficients.
//!
//! Region numbering for `blocks_x × blocks_y` subregions is x-major:
//! `region = block_x·blocks_y + block_y`, with both block indices growing with
//! the coordinate. Strips are numbered left to right.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::mesh::Mesh;

/// Interval the realized coefficient is clamped into.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdmissibleBounds {
    /// Smallest admissible coefficient value.
    pub lower: f64,
    /// Largest admissible coefficient value.
    pub upper: f64,
}

impl Default for AdmissibleBounds {
    fn default() -> Self {
        AdmissibleBounds {
            lower: 1e-3,
            upper: 100.0,
        }
    }
}

impl AdmissibleBounds {
    /// Clamps one value into the interval.
    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lower, self.upper)
    }
}

/// Truncated discrete Karhunen–Loève basis of a Gaussian log-field.
#[derive(Clone, Debug)]
pub struct KleBasis {
    /// Covariance variance ρ².
    pub rho2: f64,
    /// Correlation length along x.
    pub l1: f64,
    /// Correlation length along y.
    pub l2: f64,
    /// All discrete eigenvalues, descending, tiny negatives clipped to zero.
    pub eigenvalues: Vec<f64>,
    /// Retained scaled modes: column `i` holds `√λᵢ·φᵢ` at the cell centers.
    pub modes: Vec<Vec<f64>>,
    /// Retained mode count.
    pub n_q: usize,
    /// Energy fraction the truncation was asked to reach.
    pub energy_fraction: f64,
}

/// Builds the discrete Karhunen–Loève basis of the covariance
/// `ρ²·exp(−(x−x')²/(2l₁²) − (y−y')²/(2l₂²))` on the mesh's cell centers.
///
/// The integral eigenproblem is discretized with cell-area quadrature
/// weights, symmetrized, and solved densely; the basis keeps the smallest
/// number of leading modes whose eigenvalue sum reaches `energy_fraction` of
/// the total. Each retained column is `√λᵢ·φᵢ` with the sign chosen so the
/// entry of largest magnitude is positive.
pub fn build_kle(
    mesh: &Mesh,
    rho2: f64,
    l1: f64,
    l2: f64,
    energy_fraction: f64,
) -> Result<KleBasis> {
    for (name, v) in [("rho2", rho2), ("l1", l1), ("l2", l2)] {
        if !v.is_finite() || v <= 0.0 {
            return Err(Error::invalid(format!("{name} must be positive, got {v}")));
        }
    }
    if !(energy_fraction > 0.0 && energy_fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "energy fraction must lie in (0, 1], got {energy_fraction}"
        )));
    }

    let m = mesh.num_cells();
    let weight = mesh.cell_area();
    let centers: Vec<(f64, f64)> = (0..m).map(|c| mesh.cell_center(c)).collect();
    // Quadrature-weighted covariance; uniform weights keep it symmetric.
    let cov = DMatrix::from_fn(m, m, |i, j| {
        let dx = centers[i].0 - centers[j].0;
        let dy = centers[i].1 - centers[j].1;
        weight * rho2 * (-dx * dx / (2.0 * l1 * l1) - dy * dy / (2.0 * l2 * l2)).exp()
    });
    let eigen = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        eigen.eigenvalues[b]
            .partial_cmp(&eigen.eigenvalues[a])
            .expect("eigenvalues are finite")
    });
    let mut eigenvalues = Vec::with_capacity(m);
    for &idx in &order {
        let lambda = eigen.eigenvalues[idx];
        if lambda < -1e-12 {
            return Err(Error::Singular(format!(
                "covariance produced a negative eigenvalue {lambda:e}"
            )));
        }
        eigenvalues.push(lambda.max(0.0));
    }

    let total: f64 = eigenvalues.iter().sum();
    let mut cumulative = 0.0;
    let mut n_q = m;
    for (i, lambda) in eigenvalues.iter().enumerate() {
        cumulative += lambda;
        if cumulative >= energy_fraction * total {
            n_q = i + 1;
            break;
        }
    }

    let inv_sqrt_w = 1.0 / weight.sqrt();
    let modes = order[..n_q]
        .iter()
        .zip(&eigenvalues)
        .map(|(&idx, &lambda)| {
            let scale = lambda.sqrt() * inv_sqrt_w;
            let mut column: Vec<f64> = (0..m).map(|c| scale * eigen.eigenvectors[(c, idx)]).collect();
            let largest = column
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).expect("finite"))
                .map(|(c, _)| c)
                .expect("nonempty column");
            if column[largest] < 0.0 {
                for v in &mut column {
                    *v = -*v;
                }
            }
            column
        })
        .collect();

    Ok(KleBasis {
        rho2,
        l1,
        l2,
        eigenvalues,
        modes,
        n_q,
        energy_fraction,
    })
}

/// A parameterized family of cellwise coefficient fields.
#[derive(Clone, Debug)]
pub enum CoefficientParam {
    /// Log-normal field `q = exp(H·a)` over a Karhunen–Loève basis.
    Kle {
        /// The basis `H`.
        basis: KleBasis,
        /// Clamping interval.
        bounds: AdmissibleBounds,
    },
    /// One parameter per rectangular block in a `blocks_x × blocks_y` tiling.
    Subregion {
        /// Block count along x.
        blocks_x: usize,
        /// Block count along y.
        blocks_y: usize,
        /// Clamping interval.
        bounds: AdmissibleBounds,
    },
    /// One parameter per full-height vertical strip, numbered left to right.
    Strip {
        /// Strip count.
        count: usize,
        /// Clamping interval.
        bounds: AdmissibleBounds,
    },
}

impl CoefficientParam {
    /// Log-normal parameterization with default bounds.
    pub fn kle(basis: KleBasis) -> Self {
        CoefficientParam::Kle {
            basis,
            bounds: AdmissibleBounds::default(),
        }
    }

    /// Rectangular-block parameterization with default bounds.
    pub fn subregion(blocks_x: usize, blocks_y: usize) -> Self {
        CoefficientParam::Subregion {
            blocks_x,
            blocks_y,
            bounds: AdmissibleBounds::default(),
        }
    }

    /// Vertical-strip parameterization with default bounds.
    pub fn strip(count: usize) -> Self {
        CoefficientParam::Strip {
            count,
            bounds: AdmissibleBounds::default(),
        }
    }

    /// Number of parameters.
    pub fn dim(&self) -> usize {
        match self {
            CoefficientParam::Kle { basis, .. } => basis.n_q,
            CoefficientParam::Subregion {
                blocks_x, blocks_y, ..
            } => blocks_x * blocks_y,
            CoefficientParam::Strip { count, .. } => *count,
        }
    }

    /// The clamping interval.
    pub fn bounds(&self) -> AdmissibleBounds {
        match self {
            CoefficientParam::Kle { bounds, .. }
            | CoefficientParam::Subregion { bounds, .. }
            | CoefficientParam::Strip { bounds, .. } => *bounds,
        }
    }

    /// Region index of a cell for the indicator families; `None` for KLE.
    pub fn region_of(&self, mesh: &Mesh, cell: usize) -> Option<usize> {
        let (ix, iy) = mesh.cell_coords(cell);
        match self {
            CoefficientParam::Kle { .. } => None,
            CoefficientParam::Subregion {
                blocks_x, blocks_y, ..
            } => {
                let bx = ix * blocks_x / mesh.nx;
                let by = iy * blocks_y / mesh.ny;
                Some(bx * blocks_y + by)
            }
            CoefficientParam::Strip { count, .. } => Some(ix * count / mesh.nx),
        }
    }
}

/// Realizes the cellwise coefficient field of a parameter vector, clamped
/// into the admissible interval.
pub fn realize(param: &CoefficientParam, mesh: &Mesh, a: &[f64]) -> Result<Vec<f64>> {
    if a.len() != param.dim() {
        return Err(Error::invalid(format!(
            "parameter vector has {} entries, expected {}",
            a.len(),
            param.dim()
        )));
    }
    if let Some(bad) = a.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!(
            "parameter vector contains non-finite entry {bad}"
        )));
    }
    let bounds = param.bounds();
    let field = match param {
        CoefficientParam::Kle { basis, .. } => {
            let m = mesh.num_cells();
            if basis.modes.iter().any(|col| col.len() != m) {
                return Err(Error::invalid(format!(
                    "basis was built on a different mesh ({m} cells expected)"
                )));
            }
            (0..m)
                .map(|c| {
                    let exponent: f64 =
                        basis.modes.iter().zip(a).map(|(col, ai)| col[c] * ai).sum();
                    bounds.clamp(exponent.exp())
                })
                .collect()
        }
        CoefficientParam::Subregion { .. } | CoefficientParam::Strip { .. } => (0..mesh
            .num_cells())
            .map(|c| {
                let region = param
                    .region_of(mesh, c)
                    .expect("indicator families always assign a region");
                bounds.clamp(a[region])
            })
            .collect(),
    };
    Ok(field)
}

/// Averages a cellwise field over each region of an indicator
/// parameterization; inverse of [`realize`] for admissible vectors.
pub fn region_average(
    param: &CoefficientParam,
    mesh: &Mesh,
    field: &[f64],
) -> Result<Vec<f64>> {
    if field.len() != mesh.num_cells() {
        return Err(Error::invalid(format!(
            "field has {} entries but the mesh has {} cells",
            field.len(),
            mesh.num_cells()
        )));
    }
    if matches!(param, CoefficientParam::Kle { .. }) {
        return Err(Error::invalid(
            "region averaging requires an indicator parameterization",
        ));
    }
    let mut sums = vec![0.0; param.dim()];
    let mut counts = vec![0usize; param.dim()];
    for (c, v) in field.iter().enumerate() {
        let region = param
            .region_of(mesh, c)
            .expect("indicator families always assign a region");
        sums[region] += v;
        counts[region] += 1;
    }
    if let Some(empty) = counts.iter().position(|&n| n == 0) {
        return Err(Error::invalid(format!(
            "region {empty} covers no cells on this mesh"
        )));
    }
    Ok(sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| s / n as f64)
        .collect())
}

/// The benchmark coefficient fields the experiments reconstruct.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TruthCase {
    /// `cos(πx)·sin(πy) + 1.5`.
    Smooth,
    /// `10` on `[0, 2/3] × [0, 1/3]`, `1` elsewhere.
    Jump,
    /// Piecewise-linear profile in `x`: `1`, `12x−2`, `4`, `−12x+13` on
    /// successive quarters.
    PiecewiseSmooth,
}

impl TruthCase {
    /// Parses a case name as used in experiment configurations.
    pub fn parse(name: &str) -> Result<TruthCase> {
        match name {
            "smooth" => Ok(TruthCase::Smooth),
            "jump" => Ok(TruthCase::Jump),
            "pwsmooth" => Ok(TruthCase::PiecewiseSmooth),
            other => Err(Error::invalid(format!(
                "unknown truth case '{other}' (expected smooth, jump, or pwsmooth)"
            ))),
        }
    }

    /// Name used in experiment configurations.
    pub fn name(self) -> &'static str {
        match self {
            TruthCase::Smooth => "smooth",
            TruthCase::Jump => "jump",
            TruthCase::PiecewiseSmooth => "pwsmooth",
        }
    }

    /// Evaluates the closed-form field at a point.
    pub fn eval(self, x: f64, y: f64) -> f64 {
        match self {
            TruthCase::Smooth => {
                (std::f64::consts::PI * x).cos() * (std::f64::consts::PI * y).sin() + 1.5
            }
            TruthCase::Jump => {
                if x <= 2.0 / 3.0 && y <= 1.0 / 3.0 {
                    10.0
                } else {
                    1.0
                }
            }
            TruthCase::PiecewiseSmooth => {
                if x < 0.25 {
                    1.0
                } else if x < 0.5 {
                    12.0 * x - 2.0
                } else if x < 0.75 {
                    4.0
                } else {
                    13.0 - 12.0 * x
                }
            }
        }
    }
}

/// Evaluates a benchmark field at every cell center.
pub fn project_truth(mesh: &Mesh, case: TruthCase) -> Vec<f64> {
    (0..mesh.num_cells())
        .map(|c| {
            let (x, y) = mesh.cell_center(c);
            case.eval(x, y)
        })
        .collect()
}
