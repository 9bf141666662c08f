//! Synthetic measurement generation: named experiment setups, boundary-flux
//! data schedules, and reproducible Gaussian noise.
//!
//! An [`ExperimentSpec`] bundles everything a reconstruction run needs: the
//! benchmark coefficient, the parameterization family, mesh and time-stepping
//! sizes, the measurement schedule, the excitation list, noise level, and
//! default penalty weights. [`paper_specs`] returns the three standard setups
//! (`smooth`, `jump`, `pwsmooth`); [`make_data`] produces the clean and noisy
//! flux vectors for a spec.
//!
//! Noise is additive i.i.d. Gaussian. Two scalings of the level `δ` are
//! supported: [`NoiseScale::Absolute`] uses standard deviation `δ` directly,
//! and [`NoiseScale::RelativeRms`] uses `δ` times the root-mean-square of the
//! clean data. The standard setups use the absolute scaling with `δ = 0.01`;
//! relative scaling is the constructor default for ad-hoc specs.
//!
//! By default data are generated on the same grid the inversion uses. The
//! `refine_data_grid` flag instead solves the forward problem on a
//! once-refined mesh and averages each boundary edge's two children, which
//! breaks the shared-discretization shortcut when honest robustness checks
//! are wanted.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::caputo::CaputoScheme;
use crate::error::{Error, Result};
use crate::forward::{dirichlet_to_neumann, Excitation};
use crate::mesh::{build_mesh, BoundaryRegion, Mesh, Orientation};
use crate::param::{build_kle, project_truth, CoefficientParam, TruthCase};
use crate::regpen::PenaltyGraph;

/// How the noise level `δ` maps to the Gaussian standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseScale {
    /// Standard deviation `δ · RMS(clean)`.
    RelativeRms,
    /// Standard deviation `δ` as given.
    Absolute,
}

/// The ordered excitation catalog `(k₁, k₂)`; specs draw the first `N`.
pub const EXCITATION_CATALOG: [(u32, u32); 5] = [(1, 1), (1, 2), (2, 1), (2, 2), (1, 3)];

/// Parameterization family of an experiment, in buildable form.
#[derive(Clone, Debug)]
pub enum ParamKind {
    /// Log-normal Karhunen–Loève coefficients.
    Kle {
        /// Covariance variance.
        rho2: f64,
        /// Correlation length along x.
        l1: f64,
        /// Correlation length along y.
        l2: f64,
        /// Energy fraction selecting the mode count.
        energy_fraction: f64,
    },
    /// Rectangular-block indicators.
    Subregion {
        /// Block count along x.
        blocks_x: usize,
        /// Block count along y.
        blocks_y: usize,
    },
    /// Vertical-strip indicators.
    Strip {
        /// Strip count.
        count: usize,
    },
}

impl ParamKind {
    /// Builds the concrete parameterization on a mesh.
    pub fn build(&self, mesh: &Mesh) -> Result<CoefficientParam> {
        match self {
            ParamKind::Kle {
                rho2,
                l1,
                l2,
                energy_fraction,
            } => Ok(CoefficientParam::kle(build_kle(
                mesh,
                *rho2,
                *l1,
                *l2,
                *energy_fraction,
            )?)),
            ParamKind::Subregion { blocks_x, blocks_y } => {
                Ok(CoefficientParam::subregion(*blocks_x, *blocks_y))
            }
            ParamKind::Strip { count } => Ok(CoefficientParam::strip(*count)),
        }
    }

    /// Neighbor graph the variation penalty should use for this family.
    pub fn penalty_graph(&self) -> PenaltyGraph {
        match self {
            ParamKind::Kle { .. } => PenaltyGraph::None,
            ParamKind::Subregion { blocks_x, blocks_y } => PenaltyGraph::Grid {
                blocks_x: *blocks_x,
                blocks_y: *blocks_y,
            },
            ParamKind::Strip { count } => PenaltyGraph::Chain(*count),
        }
    }

    /// Neutral starting vector (`q ≡ 1`): zeros for the log-normal family,
    /// ones for the indicator families.
    pub fn initial(&self, dim: usize) -> Vec<f64> {
        match self {
            ParamKind::Kle { .. } => vec![0.0; dim],
            ParamKind::Subregion { .. } | ParamKind::Strip { .. } => vec![1.0; dim],
        }
    }

    /// Short family name used in logs.
    pub fn label(&self) -> &'static str {
        match self {
            ParamKind::Kle { .. } => "kle",
            ParamKind::Subregion { .. } => "subregion",
            ParamKind::Strip { .. } => "strip",
        }
    }
}

/// A complete description of one synthetic reconstruction experiment.
#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    /// Name used in file headers and summaries.
    pub name: String,
    /// Benchmark coefficient the data are generated from.
    pub truth: TruthCase,
    /// Parameterization family for the reconstruction.
    pub param: ParamKind,
    /// Cells along x.
    pub nx: usize,
    /// Cells along y.
    pub ny: usize,
    /// Fractional order of the time derivative.
    pub alpha: f64,
    /// Time-step size.
    pub dt: f64,
    /// Measurement step indices, strictly increasing, 1-based.
    pub measurement_steps: Vec<usize>,
    /// Excitation frequency pairs `(k₁, k₂)`, one per experiment.
    pub excitations: Vec<(u32, u32)>,
    /// Noise level `δ`.
    pub delta: f64,
    /// Scaling of `δ` into a standard deviation.
    pub noise_scale: NoiseScale,
    /// Seed of the noise generator.
    pub seed: u64,
    /// Boundary portion where flux is measured.
    pub region: BoundaryRegion,
    /// Default squared-`L²` penalty weight.
    pub beta: f64,
    /// Default bounded-variation penalty weight.
    pub gamma: f64,
    /// Generate data on a once-refined grid instead of the inversion grid.
    pub refine_data_grid: bool,
}

impl ExperimentSpec {
    /// Checks the internal consistency of the spec.
    pub fn validate(&self) -> Result<()> {
        if self.measurement_steps.is_empty() {
            return Err(Error::invalid("measurement schedule is empty"));
        }
        if self.measurement_steps[0] == 0 {
            return Err(Error::invalid("measurement steps are 1-based"));
        }
        if self.measurement_steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(
                "measurement steps must be strictly increasing",
            ));
        }
        if self.excitations.is_empty() {
            return Err(Error::invalid("at least one excitation is required"));
        }
        if !self.delta.is_finite() || self.delta < 0.0 {
            return Err(Error::invalid(format!(
                "noise level must be nonnegative, got {}",
                self.delta
            )));
        }
        for (label, v) in [("beta", self.beta), ("gamma", self.gamma)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!(
                    "{label} must be nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Number of time steps needed to reach the last measurement.
    pub fn required_steps(&self) -> usize {
        self.measurement_steps.last().copied().unwrap_or(0)
    }

    /// Builds the mesh the spec prescribes.
    pub fn build_mesh(&self) -> Result<Mesh> {
        build_mesh(self.nx, self.ny)
    }

    /// Builds the time-stepping scheme reaching the last measurement.
    pub fn build_scheme(&self) -> Result<CaputoScheme> {
        self.validate()?;
        crate::caputo::build_scheme(self.alpha, self.dt, self.required_steps())
    }

    /// Instantiates the excitations.
    pub fn excitation_list(&self) -> Vec<Excitation> {
        self.excitations
            .iter()
            .map(|&(k1, k2)| Excitation::standard(k1, k2))
            .collect()
    }
}

/// The three standard experiment setups.
///
/// All use `λ(t) = t²`, `Δt = 1/100`, whole-boundary measurements, one
/// excitation, noise level `δ = 0.01` with absolute scaling, and `α = 0.4`:
///
/// * `smooth` — smooth benchmark on a 20×20 grid, 8 Karhunen–Loève modes,
///   squared-`L²` penalty `β = 5e−4`, measurements at steps 61..101.
/// * `jump` — discontinuous benchmark on an 18×18 grid, 3×3 subregions,
///   variation penalty `γ = 5e−3`, measurements at steps 61..101.
/// * `pwsmooth` — piecewise-smooth benchmark on a 20×20 grid, 20 strips,
///   combined penalty `β = 5.005e−3`, `γ = 1.005e−6`, measurements at the
///   odd steps 21..99.
pub fn paper_specs() -> Vec<ExperimentSpec> {
    let base = ExperimentSpec {
        name: String::new(),
        truth: TruthCase::Smooth,
        param: ParamKind::Strip { count: 1 },
        nx: 20,
        ny: 20,
        alpha: 0.4,
        dt: 0.01,
        measurement_steps: vec![61, 71, 81, 91, 101],
        excitations: vec![EXCITATION_CATALOG[0]],
        delta: 0.01,
        noise_scale: NoiseScale::Absolute,
        seed: 1,
        region: BoundaryRegion::Whole,
        beta: 0.0,
        gamma: 0.0,
        refine_data_grid: false,
    };
    vec![
        ExperimentSpec {
            name: "smooth".into(),
            truth: TruthCase::Smooth,
            param: ParamKind::Kle {
                rho2: 0.01,
                l1: 0.3,
                l2: 0.3,
                energy_fraction: 0.94,
            },
            beta: 5e-4,
            ..base.clone()
        },
        ExperimentSpec {
            name: "jump".into(),
            truth: TruthCase::Jump,
            param: ParamKind::Subregion {
                blocks_x: 3,
                blocks_y: 3,
            },
            nx: 18,
            ny: 18,
            gamma: 5e-3,
            ..base.clone()
        },
        ExperimentSpec {
            name: "pwsmooth".into(),
            truth: TruthCase::PiecewiseSmooth,
            param: ParamKind::Strip { count: 20 },
            measurement_steps: (21..=99).step_by(2).collect(),
            beta: 5.005e-3,
            gamma: 1.005e-6,
            ..base
        },
    ]
}

/// Looks up a standard setup by name.
pub fn spec_by_name(name: &str) -> Result<ExperimentSpec> {
    paper_specs()
        .into_iter()
        .find(|s| s.name == name)
        .ok_or_else(|| {
            Error::invalid(format!(
                "unknown experiment '{name}' (expected smooth, jump, or pwsmooth)"
            ))
        })
}

/// Adds seeded i.i.d. Gaussian noise to a data vector.
///
/// `delta = 0` returns the input unchanged; otherwise the standard deviation
/// is `delta` (absolute scaling) or `delta · RMS(clean)` (relative scaling).
pub fn add_noise(clean: &[f64], delta: f64, scale: NoiseScale, seed: u64) -> Result<Vec<f64>> {
    if !delta.is_finite() || delta < 0.0 {
        return Err(Error::invalid(format!(
            "noise level must be nonnegative, got {delta}"
        )));
    }
    if delta == 0.0 {
        return Ok(clean.to_vec());
    }
    let sigma = match scale {
        NoiseScale::Absolute => delta,
        NoiseScale::RelativeRms => {
            let rms = (clean.iter().map(|v| v * v).sum::<f64>() / clean.len().max(1) as f64).sqrt();
            delta * rms
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(clean
        .iter()
        .map(|v| {
            let z: f64 = StandardNormal.sample(&mut rng);
            v + sigma * z
        })
        .collect())
}

/// Clean flux data generated on a once-refined mesh, averaged back onto the
/// boundary edges of `mesh`.
fn refined_clean(
    spec: &ExperimentSpec,
    mesh: &Mesh,
    scheme: &CaputoScheme,
) -> Result<Vec<f64>> {
    let fine = build_mesh(2 * mesh.nx, 2 * mesh.ny)?;
    let q_fine = project_truth(&fine, spec.truth);
    let coarse_edges = mesh.boundary_restriction(&spec.region)?;
    // Children of each coarse boundary edge on the refined mesh.
    let children: Vec<[usize; 2]> = coarse_edges
        .iter()
        .map(|b| {
            let e = &mesh.edges()[b.edge];
            match e.orientation {
                Orientation::Vertical => {
                    let i = (e.start.0 * fine.nx as f64).round() as usize;
                    let j = (e.start.1 * mesh.ny as f64).round() as usize;
                    [fine.vertical_edge(i, 2 * j), fine.vertical_edge(i, 2 * j + 1)]
                }
                Orientation::Horizontal => {
                    let j = (e.start.1 * fine.ny as f64).round() as usize;
                    let i = (e.start.0 * mesh.nx as f64).round() as usize;
                    [
                        fine.horizontal_edge(2 * i, j),
                        fine.horizontal_edge(2 * i + 1, j),
                    ]
                }
            }
        })
        .collect();
    let fine_region =
        BoundaryRegion::Edges(children.iter().flat_map(|pair| pair.iter().copied()).collect());
    let fine_edges = fine.boundary_restriction(&fine_region)?;
    let pos: HashMap<usize, usize> = fine_edges
        .iter()
        .enumerate()
        .map(|(p, b)| (b.edge, p))
        .collect();
    let flux = dirichlet_to_neumann(
        &fine,
        &q_fine,
        &spec.excitation_list(),
        scheme,
        &fine_region,
        &spec.measurement_steps,
    )?;
    let stride = fine_edges.len();
    let blocks = spec.excitations.len() * spec.measurement_steps.len();
    let mut out = Vec::with_capacity(blocks * children.len());
    for block in 0..blocks {
        let base = block * stride;
        for pair in &children {
            let a = flux[base + pos[&pair[0]]];
            let b = flux[base + pos[&pair[1]]];
            out.push(0.5 * (a + b));
        }
    }
    Ok(out)
}

/// Generates the clean and noisy measurement vectors of an experiment.
///
/// The layout stacks excitations outermost, then measurement times, then the
/// boundary edges of the region in index order. The noise stream is fully
/// determined by `(spec.seed, spec)`.
pub fn make_data(
    spec: &ExperimentSpec,
    mesh: &Mesh,
    scheme: &CaputoScheme,
) -> Result<(Vec<f64>, Vec<f64>)> {
    spec.validate()?;
    if mesh.nx != spec.nx || mesh.ny != spec.ny {
        return Err(Error::invalid(format!(
            "mesh is {}x{} but the spec prescribes {}x{}",
            mesh.nx, mesh.ny, spec.nx, spec.ny
        )));
    }
    if (scheme.alpha - spec.alpha).abs() > 1e-12 || (scheme.dt - spec.dt).abs() > 1e-12 {
        return Err(Error::invalid(
            "time scheme does not match the spec's alpha and dt",
        ));
    }
    if spec.required_steps() > scheme.num_steps {
        return Err(Error::invalid(format!(
            "last measurement step {} exceeds the scheme's {} steps",
            spec.required_steps(),
            scheme.num_steps
        )));
    }
    let clean = if spec.refine_data_grid {
        refined_clean(spec, mesh, scheme)?
    } else {
        let q_true = project_truth(mesh, spec.truth);
        dirichlet_to_neumann(
            mesh,
            &q_true,
            &spec.excitation_list(),
            scheme,
            &spec.region,
            &spec.measurement_steps,
        )?
    };
    let noisy = add_noise(&clean, spec.delta, spec.noise_scale, spec.seed)?;
    Ok((clean, noisy))
}

/// One measurement in the plain-text data format.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DataRow {
    /// Excitation index, 0-based.
    pub experiment: usize,
    /// Time-step index of the measurement.
    pub step: usize,
    /// Mesh edge index of the measurement.
    pub edge: usize,
    /// Measured outward flux.
    pub value: f64,
}

/// Pairs a data vector with its (experiment, step, edge) coordinates.
pub fn data_rows(spec: &ExperimentSpec, mesh: &Mesh, values: &[f64]) -> Result<Vec<DataRow>> {
    let edges = mesh.boundary_restriction(&spec.region)?;
    let expected = spec.excitations.len() * spec.measurement_steps.len() * edges.len();
    if values.len() != expected {
        return Err(Error::invalid(format!(
            "data vector has {} entries, expected {expected}",
            values.len()
        )));
    }
    let mut rows = Vec::with_capacity(expected);
    let mut k = 0;
    for e in 0..spec.excitations.len() {
        for &step in &spec.measurement_steps {
            for b in &edges {
                rows.push(DataRow {
                    experiment: e,
                    step,
                    edge: b.edge,
                    value: values[k],
                });
                k += 1;
            }
        }
    }
    Ok(rows)
}

/// Reassembles a data vector from rows, in the spec's layout; rows may come
/// in any order but must cover every coordinate exactly once.
pub fn rows_to_vector(spec: &ExperimentSpec, mesh: &Mesh, rows: &[DataRow]) -> Result<Vec<f64>> {
    let edges = mesh.boundary_restriction(&spec.region)?;
    let expected = spec.excitations.len() * spec.measurement_steps.len() * edges.len();
    if rows.len() != expected {
        return Err(Error::invalid(format!(
            "{} rows given, expected {expected}",
            rows.len()
        )));
    }
    let step_pos: HashMap<usize, usize> = spec
        .measurement_steps
        .iter()
        .enumerate()
        .map(|(i, &s)| (s, i))
        .collect();
    let edge_pos: HashMap<usize, usize> = edges
        .iter()
        .enumerate()
        .map(|(i, b)| (b.edge, i))
        .collect();
    let mut out = vec![f64::NAN; expected];
    let mut filled = vec![false; expected];
    for row in rows {
        let ti = *step_pos.get(&row.step).ok_or_else(|| {
            Error::invalid(format!("step {} is not in the measurement schedule", row.step))
        })?;
        let bi = *edge_pos.get(&row.edge).ok_or_else(|| {
            Error::invalid(format!("edge {} is not in the measured region", row.edge))
        })?;
        if row.experiment >= spec.excitations.len() {
            return Err(Error::invalid(format!(
                "experiment index {} out of range",
                row.experiment
            )));
        }
        let k = (row.experiment * spec.measurement_steps.len() + ti) * edges.len() + bi;
        if filled[k] {
            return Err(Error::invalid(format!(
                "duplicate measurement for experiment {} step {} edge {}",
                row.experiment, row.step, row.edge
            )));
        }
        filled[k] = true;
        out[k] = row.value;
    }
    Ok(out)
}

/// Writes rows as `experiment time_index edge_index value` lines.
pub fn write_data<W: Write>(mut out: W, rows: &[DataRow]) -> Result<()> {
    writeln!(out, "# experiment time_index edge_index value")?;
    for r in rows {
        writeln!(out, "{} {} {} {}", r.experiment, r.step, r.edge, r.value)?;
    }
    Ok(())
}

/// Reads rows written by [`write_data`]; `#` lines and blank lines are
/// skipped.
pub fn read_data<R: BufRead>(reader: R) -> Result<Vec<DataRow>> {
    let mut rows = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::Parse(format!(
                "line {}: expected 4 fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        rows.push(DataRow {
            experiment: fields[0]
                .parse()
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?,
            step: fields[1]
                .parse()
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?,
            edge: fields[2]
                .parse()
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?,
            value: fields[3]
                .parse()
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?,
        });
    }
    Ok(rows)
}
