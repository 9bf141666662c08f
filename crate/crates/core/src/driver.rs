//! Configuration-driven orchestration of reconstruction experiments.
//!
//! A [`RunConfig`] names one of the standard experiments, optional parameter
//! sweeps (Cartesian products over `alpha`, `beta`, `gamma`, `delta`, `seed`,
//! and the excitation count `n`), solver overrides, and an output directory.
//! [`run_config`] executes every sweep point: it generates (or loads) the
//! measurement data, runs the reconstruction, and writes one iteration log
//! and one field dump per point plus a shared summary table with one row per
//! point. Re-running a point overwrites its row in place, so summaries stay
//! append-safe across repeated invocations.
//!
//! Noise seeding is reproducible: each point's effective seed is the base
//! seed (or the point's swept `seed` value) XOR-folded with an FNV-1a hash of
//! the point's other coordinates, and every output header records both the
//! base and the effective value.
//!
//! [`compare_penalties`] runs the three regularization variants (`L²` only,
//! bounded-variation only, and combined) against one shared noisy data
//! vector and reports them as three summary rows.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::forward::{write_field_dump, FieldDumpRow};
use crate::invert::{run, InverseProblem, InversionRun, LmConfig};
use crate::param::{project_truth, realize};
use crate::synth::{
    make_data, read_data, rows_to_vector, spec_by_name, ExperimentSpec, EXCITATION_CATALOG,
};

/// Sweepable experiment coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum SweepKey {
    /// Fractional order of the time derivative.
    Alpha,
    /// Squared-`L²` penalty weight.
    Beta,
    /// Bounded-variation penalty weight.
    Gamma,
    /// Noise level.
    Delta,
    /// Noise seed (replaces the base seed for the point).
    Seed,
    /// Number of excitations, drawn in order from the standard catalog.
    N,
}

impl SweepKey {
    /// Parses an axis name as written in configs and `--sweep` flags.
    pub fn parse(name: &str) -> Result<SweepKey> {
        match name {
            "alpha" => Ok(SweepKey::Alpha),
            "beta" => Ok(SweepKey::Beta),
            "gamma" => Ok(SweepKey::Gamma),
            "delta" => Ok(SweepKey::Delta),
            "seed" => Ok(SweepKey::Seed),
            "N" | "n" => Ok(SweepKey::N),
            other => Err(Error::invalid(format!(
                "unknown sweep axis '{other}' (expected alpha, beta, gamma, delta, seed, or N)"
            ))),
        }
    }

    /// Axis name used in labels and headers.
    pub fn name(self) -> &'static str {
        match self {
            SweepKey::Alpha => "alpha",
            SweepKey::Beta => "beta",
            SweepKey::Gamma => "gamma",
            SweepKey::Delta => "delta",
            SweepKey::Seed => "seed",
            SweepKey::N => "N",
        }
    }
}

/// One sweep axis: a key and its raw value tokens, kept as written so labels
/// and hashes are stable regardless of float formatting.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepAxis {
    /// The swept coordinate.
    pub key: SweepKey,
    /// Value tokens, applied in order.
    pub values: Vec<String>,
}

impl SweepAxis {
    /// Parses `key=v1,v2,...`.
    pub fn parse(text: &str) -> Result<SweepAxis> {
        let (name, list) = text.split_once('=').ok_or_else(|| {
            Error::invalid(format!("sweep '{text}' must look like key=v1,v2,..."))
        })?;
        let key = SweepKey::parse(name.trim())?;
        let values: Vec<String> = list
            .split(',')
            .map(|v| v.trim().to_string())
            .filter(|v| !v.is_empty())
            .collect();
        if values.is_empty() {
            return Err(Error::invalid(format!("sweep '{text}' lists no values")));
        }
        Ok(SweepAxis { key, values })
    }
}

/// Optional overrides of the solver configuration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolverOverrides {
    /// Finite-difference step.
    pub tau: Option<f64>,
    /// Stopping threshold on the step norm.
    pub eps: Option<f64>,
    /// Iteration budget.
    pub max_iterations: Option<usize>,
    /// Smoothing parameter of the penalty matrices.
    pub smooth_eps: Option<f64>,
}

/// A complete orchestration request.
#[derive(Clone, Debug)]
pub struct RunConfig {
    /// Name of the standard experiment to run.
    pub experiment: String,
    /// Base noise seed; swept `seed` values replace it per point.
    pub base_seed: u64,
    /// Directory all outputs are written into.
    pub out_dir: PathBuf,
    /// Externally supplied measurement file; replaces generated noisy data.
    pub data_file: Option<PathBuf>,
    /// Sweep axes, outermost first.
    pub sweeps: Vec<SweepAxis>,
    /// Solver overrides applied to every point.
    pub overrides: SolverOverrides,
    /// Run the three-way penalty comparison instead of plain sweeps.
    pub compare_penalties: bool,
    /// Generate data on a once-refined grid.
    pub refine_data_grid: bool,
}

impl RunConfig {
    /// A config running `experiment` once with defaults into `out_dir`.
    pub fn new(experiment: &str, out_dir: &Path) -> RunConfig {
        RunConfig {
            experiment: experiment.to_string(),
            base_seed: 1,
            out_dir: out_dir.to_path_buf(),
            data_file: None,
            sweeps: Vec::new(),
            overrides: SolverOverrides::default(),
            compare_penalties: false,
            refine_data_grid: false,
        }
    }

    /// Applies one `key = value` assignment as read from a config file.
    pub fn assign(&mut self, key: &str, value: &str) -> Result<()> {
        let parse_f64 = |v: &str| -> Result<f64> {
            v.parse()
                .map_err(|e| Error::Parse(format!("value '{v}' for {key}: {e}")))
        };
        match key {
            "experiment" => self.experiment = value.to_string(),
            "seed" => {
                self.base_seed = value
                    .parse()
                    .map_err(|e| Error::Parse(format!("value '{value}' for seed: {e}")))?
            }
            "out" => self.out_dir = PathBuf::from(value),
            "data" => self.data_file = Some(PathBuf::from(value)),
            "sweep" => self.sweeps.push(SweepAxis::parse(value)?),
            "tau" => self.overrides.tau = Some(parse_f64(value)?),
            "eps" => self.overrides.eps = Some(parse_f64(value)?),
            "max_iterations" => {
                self.overrides.max_iterations = Some(value.parse().map_err(|e| {
                    Error::Parse(format!("value '{value}' for max_iterations: {e}"))
                })?)
            }
            "smooth_eps" => self.overrides.smooth_eps = Some(parse_f64(value)?),
            "compare_penalties" => {
                self.compare_penalties = value
                    .parse()
                    .map_err(|e| Error::Parse(format!("value '{value}' for {key}: {e}")))?
            }
            "refine_data_grid" => {
                self.refine_data_grid = value
                    .parse()
                    .map_err(|e| Error::Parse(format!("value '{value}' for {key}: {e}")))?
            }
            other => {
                return Err(Error::invalid(format!(
                    "unknown configuration key '{other}'"
                )))
            }
        }
        Ok(())
    }

    /// Reads `key = value` lines (with `#`-comments) into an existing config;
    /// later assignments win.
    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)?;
        for (lineno, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or_else(|| {
                Error::Parse(format!(
                    "{}:{}: expected 'key = value'",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.assign(key.trim(), value.trim())?;
        }
        Ok(())
    }
}

/// 64-bit FNV-1a hash of a label.
pub fn fnv1a(text: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in text.bytes() {
        hash ^= byte as u64;
        hash = hash.wrapping_mul(0x100_0000_01b3);
    }
    hash
}

/// One resolved sweep point: raw coordinate tokens in axis order.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    /// `(key, token)` pairs, outermost axis first.
    pub coords: Vec<(SweepKey, String)>,
}

impl SweepPoint {
    /// Human-readable label, `alpha=0.2 gamma=5e-3` style; empty for the
    /// trivial point.
    pub fn label(&self) -> String {
        self.coords
            .iter()
            .map(|(k, v)| format!("{}={v}", k.name()))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Label restricted to non-seed coordinates; this is what gets hashed.
    fn scramble_label(&self) -> String {
        self.coords
            .iter()
            .filter(|(k, _)| *k != SweepKey::Seed)
            .map(|(k, v)| format!("{}={v}", k.name()))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// The seed the point's data generation uses: the swept `seed` value if
    /// present (else `base`), XOR-folded with the hash of the remaining
    /// coordinates.
    pub fn effective_seed(&self, base: u64) -> Result<u64> {
        let mut seed = base;
        for (key, token) in &self.coords {
            if *key == SweepKey::Seed {
                seed = token
                    .parse()
                    .map_err(|e| Error::Parse(format!("seed '{token}': {e}")))?;
            }
        }
        let label = self.scramble_label();
        if label.is_empty() {
            Ok(seed)
        } else {
            Ok(seed ^ fnv1a(&label))
        }
    }

    /// File-name fragment for the point's outputs; empty for the trivial
    /// point.
    pub fn file_stem(&self) -> String {
        self.coords
            .iter()
            .map(|(k, v)| format!("{}-{v}", k.name()))
            .collect::<Vec<_>>()
            .join("_")
    }

    /// Applies the coordinates to an experiment spec.
    pub fn apply(&self, spec: &mut ExperimentSpec) -> Result<()> {
        for (key, token) in &self.coords {
            let bad =
                |e: std::num::ParseFloatError| Error::Parse(format!("value '{token}': {e}"));
            match key {
                SweepKey::Alpha => spec.alpha = token.parse().map_err(bad)?,
                SweepKey::Beta => spec.beta = token.parse().map_err(bad)?,
                SweepKey::Gamma => spec.gamma = token.parse().map_err(bad)?,
                SweepKey::Delta => spec.delta = token.parse().map_err(bad)?,
                SweepKey::Seed => {} // handled by effective_seed
                SweepKey::N => {
                    let n: usize = token
                        .parse()
                        .map_err(|e| Error::Parse(format!("value '{token}': {e}")))?;
                    if n == 0 || n > EXCITATION_CATALOG.len() {
                        return Err(Error::invalid(format!(
                            "N must lie in 1..={}, got {n}",
                            EXCITATION_CATALOG.len()
                        )));
                    }
                    spec.excitations = EXCITATION_CATALOG[..n].to_vec();
                }
            }
        }
        Ok(())
    }
}

/// Expands the sweep axes into their Cartesian product, outermost axis
/// varying slowest; no axes yield the single trivial point.
pub fn sweep_points(axes: &[SweepAxis]) -> Vec<SweepPoint> {
    let mut points = vec![SweepPoint { coords: Vec::new() }];
    for axis in axes {
        let mut next = Vec::with_capacity(points.len() * axis.values.len());
        for point in &points {
            for value in &axis.values {
                let mut coords = point.coords.clone();
                coords.push((axis.key, value.clone()));
                next.push(SweepPoint { coords });
            }
        }
        points = next;
    }
    points
}

/// One line of the summary table.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    /// Experiment (or comparison-variant) name.
    pub name: String,
    /// Fractional order.
    pub alpha: f64,
    /// Squared-`L²` weight.
    pub beta: f64,
    /// Bounded-variation weight.
    pub gamma: f64,
    /// Noise level.
    pub delta: f64,
    /// Effective noise seed.
    pub seed: u64,
    /// Excitation count.
    pub n: usize,
    /// Executed iterations.
    pub iterations: usize,
    /// Final relative error (`NaN` when truth was unavailable).
    pub final_epsilon: f64,
}

impl SummaryRow {
    /// Identity of the sweep point the row describes; rows with equal keys
    /// overwrite each other.
    fn key(&self) -> String {
        format!(
            "{} {} {} {} {} {} {}",
            self.name, self.alpha, self.beta, self.gamma, self.delta, self.seed, self.n
        )
    }
}

/// Writes summary rows with their column header.
pub fn write_summary<W: Write>(mut out: W, rows: &[SummaryRow]) -> Result<()> {
    writeln!(
        out,
        "# name alpha beta gamma delta seed N iterations final_epsilon"
    )?;
    for r in rows {
        writeln!(
            out,
            "{} {} {} {} {} {} {} {} {}",
            r.name, r.alpha, r.beta, r.gamma, r.delta, r.seed, r.n, r.iterations, r.final_epsilon
        )?;
    }
    Ok(())
}

/// Reads rows written by [`write_summary`].
pub fn read_summary<R: BufRead>(reader: R) -> Result<Vec<SummaryRow>> {
    let mut rows = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 9 {
            return Err(Error::Parse(format!(
                "line {}: expected 9 fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        let ctx = |e: String| Error::Parse(format!("line {}: {e}", lineno + 1));
        let f = |s: &str| -> Result<f64> { s.parse().map_err(|e| ctx(format!("{e}"))) };
        rows.push(SummaryRow {
            name: fields[0].to_string(),
            alpha: f(fields[1])?,
            beta: f(fields[2])?,
            gamma: f(fields[3])?,
            delta: f(fields[4])?,
            seed: fields[5].parse().map_err(|e| ctx(format!("{e}")))?,
            n: fields[6].parse().map_err(|e| ctx(format!("{e}")))?,
            iterations: fields[7].parse().map_err(|e| ctx(format!("{e}")))?,
            final_epsilon: f(fields[8])?,
        });
    }
    Ok(rows)
}

/// Inserts or replaces rows in the summary file, keyed by the sweep-point
/// identity, keeping the file sorted by key.
pub fn update_summary(path: &Path, new_rows: &[SummaryRow]) -> Result<()> {
    let mut by_key: BTreeMap<String, SummaryRow> = BTreeMap::new();
    if path.exists() {
        let text = fs::read(path)?;
        for row in read_summary(&text[..])? {
            by_key.insert(row.key(), row);
        }
    }
    for row in new_rows {
        by_key.insert(row.key(), row.clone());
    }
    let rows: Vec<SummaryRow> = by_key.into_values().collect();
    let mut buffer = Vec::new();
    write_summary(&mut buffer, &rows)?;
    fs::write(path, buffer)?;
    Ok(())
}

/// Outcome of one executed sweep point.
#[derive(Clone, Debug)]
pub struct PointReport {
    /// The summary row the point produced.
    pub row: SummaryRow,
    /// Iteration-log file.
    pub log_path: PathBuf,
    /// Final-field dump file.
    pub field_path: PathBuf,
    /// The full run history.
    pub run: InversionRun,
}

fn solver_config(spec: &ExperimentSpec, dim: usize, ov: &SolverOverrides) -> Result<LmConfig> {
    let mut config = LmConfig::standard(spec, dim)?;
    if let Some(tau) = ov.tau {
        config.tau = tau;
    }
    if let Some(eps) = ov.eps {
        config.eps = eps;
    }
    if let Some(max) = ov.max_iterations {
        config.max_iterations = max;
    }
    if let Some(eps) = ov.smooth_eps {
        config.penalty = config.penalty.with_smooth_eps(eps)?;
    }
    Ok(config)
}

fn reject_unregularized(spec: &ExperimentSpec) -> Result<()> {
    if spec.beta == 0.0 && spec.gamma == 0.0 {
        return Err(Error::invalid(
            "both penalties are disabled (beta = gamma = 0); the normal equations \
             may be rank-deficient — enable at least one penalty",
        ));
    }
    Ok(())
}

fn header_lines(
    config: &RunConfig,
    spec: &ExperimentSpec,
    point: &SweepPoint,
    effective_seed: u64,
    data_hash: u64,
) -> String {
    let label = point.label();
    format!(
        "# experiment={} point=\"{}\" base_seed={} effective_seed={} data_fnv1a={:016x}\n\
         # alpha={} beta={} gamma={} delta={} N={} mesh={}x{} steps={}\n",
        spec.name,
        if label.is_empty() { "-" } else { &label },
        config.base_seed,
        effective_seed,
        data_hash,
        spec.alpha,
        spec.beta,
        spec.gamma,
        spec.delta,
        spec.excitations.len(),
        spec.nx,
        spec.ny,
        spec.required_steps(),
    )
}

fn hash_data(values: &[f64]) -> u64 {
    let mut text = String::new();
    for v in values {
        text.push_str(&format!("{v};"));
    }
    fnv1a(&text)
}

fn write_point_outputs(
    config: &RunConfig,
    spec: &ExperimentSpec,
    point: &SweepPoint,
    effective_seed: u64,
    name: &str,
    problem: &InverseProblem,
    data_hash: u64,
    outcome: &InversionRun,
) -> Result<PointReport> {
    let stem_point = point.file_stem();
    let stem = if stem_point.is_empty() {
        name.to_string()
    } else {
        format!("{name}_{stem_point}")
    };
    let header = header_lines(config, spec, point, effective_seed, data_hash);

    let log_path = config.out_dir.join(format!("{stem}_iters.txt"));
    let mut log = Vec::new();
    log.extend_from_slice(header.as_bytes());
    crate::invert::write_iteration_log(&mut log, outcome)?;
    fs::write(&log_path, log)?;

    let field_path = config.out_dir.join(format!("{stem}_field.txt"));
    let q = realize(&problem.param, &problem.mesh, outcome.final_iterate())?;
    let rows: Vec<FieldDumpRow> = (0..problem.mesh.num_cells())
        .map(|c| {
            let (x, y) = problem.mesh.cell_center(c);
            FieldDumpRow {
                cell: c,
                x,
                y,
                value: q[c],
            }
        })
        .collect();
    let mut field = Vec::new();
    field.extend_from_slice(header.as_bytes());
    write_field_dump(&mut field, &rows)?;
    fs::write(&field_path, field)?;

    let row = SummaryRow {
        name: name.to_string(),
        alpha: spec.alpha,
        beta: spec.beta,
        gamma: spec.gamma,
        delta: spec.delta,
        seed: effective_seed,
        n: spec.excitations.len(),
        iterations: outcome.iterations(),
        final_epsilon: outcome.final_relative_error().unwrap_or(f64::NAN),
    };
    Ok(PointReport {
        row,
        log_path,
        field_path,
        run: outcome.clone(),
    })
}

/// Executes every sweep point of the config and writes its outputs; returns
/// one report per point in sweep order.
pub fn run_config(config: &RunConfig) -> Result<Vec<PointReport>> {
    fs::create_dir_all(&config.out_dir)?;
    if config.compare_penalties {
        if !config.sweeps.is_empty() {
            return Err(Error::invalid(
                "the penalty comparison runs a single point; drop the sweeps",
            ));
        }
        return compare_penalties(config);
    }

    let points = sweep_points(&config.sweeps);
    let mut reports = Vec::with_capacity(points.len());
    for point in &points {
        let mut spec = spec_by_name(&config.experiment)?;
        point.apply(&mut spec)?;
        spec.refine_data_grid = config.refine_data_grid;
        let effective_seed = point.effective_seed(config.base_seed)?;
        spec.seed = effective_seed;
        reject_unregularized(&spec)?;

        let problem = InverseProblem::from_spec(&spec)?;
        let mesh = spec.build_mesh()?;
        let scheme = spec.build_scheme()?;
        let data = match &config.data_file {
            Some(path) => {
                let text = fs::read(path)?;
                rows_to_vector(&spec, &mesh, &read_data(&text[..])?)?
            }
            None => make_data(&spec, &mesh, &scheme)?.1,
        };
        let truth = project_truth(&mesh, spec.truth);
        let solver = solver_config(&spec, problem.dim(), &config.overrides)?;
        let outcome = run(&solver, &problem, &data, Some(&truth))?;

        let report = write_point_outputs(
            config,
            &spec,
            point,
            effective_seed,
            &spec.name.clone(),
            &problem,
            hash_data(&data),
            &outcome,
        )?;
        update_summary(&config.out_dir.join("summary.txt"), &[report.row.clone()])?;
        reports.push(report);
    }
    Ok(reports)
}

/// Runs the `L²`-only, variation-only, and combined penalties against one
/// shared noisy data vector; the three reports carry `:l2`, `:bv`, and
/// `:l2+bv` name suffixes.
///
/// The config's experiment must set both penalty weights so each single
/// variant stays regularized.
pub fn compare_penalties(config: &RunConfig) -> Result<Vec<PointReport>> {
    fs::create_dir_all(&config.out_dir)?;
    let mut spec = spec_by_name(&config.experiment)?;
    spec.refine_data_grid = config.refine_data_grid;
    let trivial = SweepPoint { coords: Vec::new() };
    let effective_seed = trivial.effective_seed(config.base_seed)?;
    spec.seed = effective_seed;
    if spec.beta == 0.0 || spec.gamma == 0.0 {
        return Err(Error::invalid(
            "the penalty comparison needs an experiment with both beta and gamma positive",
        ));
    }

    let problem = InverseProblem::from_spec(&spec)?;
    let mesh = spec.build_mesh()?;
    let scheme = spec.build_scheme()?;
    let data = match &config.data_file {
        Some(path) => {
            let text = fs::read(path)?;
            rows_to_vector(&spec, &mesh, &read_data(&text[..])?)?
        }
        None => make_data(&spec, &mesh, &scheme)?.1,
    };
    let data_hash = hash_data(&data);
    let truth = project_truth(&mesh, spec.truth);

    let variants = [
        ("l2", spec.beta, 0.0),
        ("bv", 0.0, spec.gamma),
        ("l2+bv", spec.beta, spec.gamma),
    ];
    let mut reports = Vec::with_capacity(3);
    for (suffix, beta, gamma) in variants {
        let mut variant_spec = spec.clone();
        variant_spec.beta = beta;
        variant_spec.gamma = gamma;
        let solver = solver_config(&variant_spec, problem.dim(), &config.overrides)?;
        let outcome = run(&solver, &problem, &data, Some(&truth))?;
        let name = format!("{}:{suffix}", spec.name);
        let report = write_point_outputs(
            config,
            &variant_spec,
            &trivial,
            effective_seed,
            &name,
            &problem,
            data_hash,
            &outcome,
        )?;
        update_summary(&config.out_dir.join("summary.txt"), &[report.row.clone()])?;
        reports.push(report);
    }
    Ok(reports)
}
