//! Experiment configuration and the end-to-end pipeline:
//! mesh → coefficients → assembly → spectra → test space → saddle solve.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_all, AssemblyOptions, Convection, KappaTilde, OperatorSet};
use crate::coeff::{
    darcy_velocity, field_example1, field_example2, field_example3, generate_channelized_k, CoefficientField,
    FieldSource, RasterField, Source,
};
use crate::error::{Error, Result};
use crate::mesh::MeshHierarchy;
use crate::solver::{
    assemble_saddle, error_measures, fine_solve, solve_saddle, trial_field, v_projection, ErrorMeasures, Metric,
    SaddleMethod,
};
use crate::spectral::{build_aux_space, AuxSpace};
use crate::testspace::{
    build_global_test_space, build_test_space, global_column, localized_column, verify_global as check_global,
    ColumnKind, EtaSpace, GlobalVerification, LocalSolver, PiMode, PiOperator, TestSpaceOptions, GLOBAL_DOF_THRESHOLD,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Example {
    /// `κ = 1/200`, cellular velocity, `f = 1`.
    #[default]
    Ex1,
    /// `κ = 1/2000`, stream-function velocity, `f = 1`.
    Ex2,
    /// `κ = 1/20`, Darcy velocity through a high-contrast raster.
    Ex3,
    /// `κ` from a user raster, Darcy velocity through the same raster.
    Custom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub example: Example,
    pub n_coarse: usize,
    pub m_refine: usize,
    pub layers: usize,
    pub j_per_cell: usize,
    pub pi_mode: PiMode,
    pub eta_space: EtaSpace,
    pub kappa_tilde: KappaTilde,
    pub convection: Convection,
    pub metric: Metric,
    pub local_solver: LocalSolver,
    /// Permeability raster for `ex3` (generated when absent) and `custom`.
    pub raster: Option<PathBuf>,
    pub seed: u64,
    pub contrast: f64,
    /// Multiplier on the source term.
    pub load_scale: f64,
    /// JSON report destination.
    pub output: Option<PathBuf>,
    /// CSV table appended to after each run.
    pub csv: Option<PathBuf>,
    /// Wall-clock timings make reports non-reproducible and are off by default.
    pub record_timings: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            example: Example::Ex1,
            n_coarse: 10,
            m_refine: 20,
            layers: 3,
            j_per_cell: 3,
            pi_mode: PiMode::Plain,
            eta_space: EtaSpace::ZeroTrace,
            kappa_tilde: KappaTilde::Sum,
            convection: Convection::Direct,
            metric: Metric::LumpedC,
            local_solver: LocalSolver::Auto,
            raster: None,
            seed: 42,
            contrast: 1e4,
            load_scale: 1.0,
            output: None,
            csv: None,
            record_timings: false,
        }
    }
}

/// Sets `key` to `value` in a serializable struct, parsing `value` as JSON
/// when possible and as a string otherwise.
pub fn apply_override<T: Serialize + for<'de> Deserialize<'de>>(target: &T, assignment: &str) -> Result<T> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let mut json = serde_json::to_value(target)?;
    let obj = json
        .as_object_mut()
        .ok_or_else(|| Error::Config("config is not an object".into()))?;
    if !obj.contains_key(key.trim()) {
        return Err(Error::Config(format!("unknown config key `{}`", key.trim())));
    }
    let parsed = serde_json::from_str(value.trim()).unwrap_or_else(|_| serde_json::Value::String(value.trim().into()));
    obj.insert(key.trim().into(), parsed);
    serde_json::from_value(json).map_err(|e| Error::Config(format!("override `{assignment}`: {e}")))
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn with_overrides<'a>(&self, overrides: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut cfg = self.clone();
        for o in overrides {
            cfg = apply_override(&cfg, o)?;
        }
        Ok(cfg)
    }

    /// Checks counts; returns warnings for legal but questionable settings.
    pub fn validate(&self) -> Result<Vec<String>> {
        for (name, v) in [
            ("n_coarse", self.n_coarse),
            ("m_refine", self.m_refine),
            ("layers", self.layers),
            ("j_per_cell", self.j_per_cell),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.contrast >= 1.0) {
            return Err(Error::Config(format!(
                "contrast must be at least 1, got {}",
                self.contrast
            )));
        }
        if !self.load_scale.is_finite() {
            return Err(Error::Config("load_scale must be finite".into()));
        }
        if self.example == Example::Custom && self.raster.is_none() {
            return Err(Error::Config("example `custom` needs a raster path".into()));
        }
        let mut warnings = Vec::new();
        if self.layers < 2 {
            warnings.push(format!(
                "layers = {} is below 2; the localization estimate assumes at least 2",
                self.layers
            ));
        }
        Ok(warnings)
    }

    pub fn assembly_options(&self) -> AssemblyOptions {
        AssemblyOptions {
            kappa_tilde: self.kappa_tilde,
            convection: self.convection,
        }
    }

    pub fn test_space_options(&self) -> TestSpaceOptions {
        TestSpaceOptions {
            layers: self.layers,
            pi_mode: self.pi_mode,
            eta_space: self.eta_space,
            local_solver: self.local_solver,
        }
    }
}

/// Mesh, coefficients and load for a configuration.
pub struct Problem {
    pub mesh: MeshHierarchy,
    pub field: CoefficientField,
    pub load: Source,
    pub raster: Option<RasterField>,
}

pub fn load_or_generate_raster(cfg: &ExperimentConfig) -> Result<RasterField> {
    match &cfg.raster {
        Some(p) => RasterField::load(p),
        None => generate_channelized_k(cfg.seed, cfg.contrast),
    }
}

pub fn build_problem(cfg: &ExperimentConfig) -> Result<Problem> {
    let mesh = MeshHierarchy::new(cfg.n_coarse, cfg.m_refine)?;
    let (field, load, raster) = match cfg.example {
        Example::Ex1 => (
            CoefficientField::from_analytic(&mesh, &field_example1()),
            Source::constant(1.0),
            None,
        ),
        Example::Ex2 => (
            CoefficientField::from_analytic(&mesh, &field_example2()),
            Source::constant(1.0),
            None,
        ),
        Example::Ex3 => {
            let k = load_or_generate_raster(cfg)?;
            (field_example3(&mesh, &k)?, Source::example3_load(), Some(k))
        }
        Example::Custom => {
            let k = load_or_generate_raster(cfg)?;
            let velocity = darcy_velocity(&mesh, &k, &Source::example3_darcy_source())?;
            let kappa: Vec<f64> = k.sample_fine_cells(&mesh).into_iter().flat_map(|v| [v; 4]).collect();
            let field = CoefficientField::new(&mesh, kappa, velocity, FieldSource::Raster)?;
            (field, Source::example3_load(), Some(k))
        }
    };
    Ok(Problem {
        mesh,
        field,
        load: load.scaled(cfg.load_scale),
        raster,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub problem: f64,
    pub assembly: f64,
    pub spectral: f64,
    pub test_space: f64,
    pub saddle: f64,
    pub reference: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dimensions {
    pub n_fine: usize,
    pub n_dofs: usize,
    pub n_trial: usize,
    pub n_aux: usize,
    pub n_test: usize,
    pub test_nnz: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub config: ExperimentConfig,
    pub warnings: Vec<String>,
    pub dimensions: Dimensions,
    pub coarse_h: f64,
    pub kappa_contrast: f64,
    pub max_cell_peclet: f64,
    /// `min_i λ⁽ⁱ⁾_{J+1}`.
    pub lambda_min: f64,
    pub errors: ErrorMeasures,
    pub w_norm: f64,
    pub coupling_rank: usize,
    pub saddle_method: SaddleMethod,
    pub constraint_residual: f64,
    pub timings: Option<Timings>,
}

impl SolveReport {
    pub fn csv_header() -> &'static str {
        "basis,H,layers,v_error,proj_error,ratio,w_norm,runtime,status"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},ok",
            self.config.j_per_cell,
            fmt17(self.coarse_h),
            self.config.layers,
            fmt17(self.errors.v_error),
            fmt17(self.errors.proj_error),
            self.errors.ratio.map(fmt17).unwrap_or_default(),
            fmt17(self.w_norm),
            self.timings.as_ref().map(|t| fmt17(t.total)).unwrap_or_default(),
        )
    }
}

/// 17 significant digits.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Intermediate objects of a run, kept for inspection.
pub struct RunArtifacts {
    pub problem_raster: Option<RasterField>,
    pub op: OperatorSet,
    pub aux: AuxSpace,
    pub u_fine: Vec<f64>,
    pub u_ms: Vec<f64>,
    pub u_proj: Vec<f64>,
}

fn timed<T>(slot: &mut f64, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t = Instant::now();
    let out = f();
    *slot = t.elapsed().as_secs_f64();
    out
}

/// Runs the full pipeline and returns the report with its artifacts.
pub fn run_with_artifacts(cfg: &ExperimentConfig) -> Result<(SolveReport, RunArtifacts)> {
    faer::set_global_parallelism(faer::Par::Seq);
    let warnings = cfg.validate()?;
    let start = Instant::now();
    let mut t = Timings::default();

    let problem = timed(&mut t.problem, || build_problem(cfg)).map_err(|e| e.in_phase("coefficients"))?;
    let op = timed(&mut t.assembly, || {
        assemble_all(&problem.mesh, &problem.field, &problem.load, cfg.assembly_options())
    })
    .map_err(|e| e.in_phase("assembly"))?;
    let aux = timed(&mut t.spectral, || build_aux_space(&op, cfg.j_per_cell)).map_err(|e| e.in_phase("spectral"))?;
    let pi = PiOperator::new(&op, &aux, cfg.pi_mode).map_err(|e| e.in_phase("test space"))?;
    let ws = timed(&mut t.test_space, || build_test_space(&pi, cfg.test_space_options()))
        .map_err(|e| e.in_phase("test space"))?;
    let sol = timed(&mut t.saddle, || {
        let sys = assemble_saddle(&op, &ws, cfg.metric)?;
        solve_saddle(&sys)
    })
    .map_err(|e| e.in_phase("saddle solve"))?;
    let (u_fine, u_proj) = timed(&mut t.reference, || {
        let u = fine_solve(&op)?;
        let alpha = v_projection(&op, &u)?;
        let p = trial_field(&op, &alpha);
        Ok((u, p))
    })
    .map_err(|e| e.in_phase("reference solve"))?;
    let u_ms = trial_field(&op, &sol.u);
    let errors = error_measures(&op, &u_fine, &u_ms, &u_proj);
    t.total = start.elapsed().as_secs_f64();

    let mesh = &op.mesh;
    let report = SolveReport {
        config: cfg.clone(),
        warnings,
        dimensions: Dimensions {
            n_fine: mesh.n_fine(),
            n_dofs: mesh.n_dofs(),
            n_trial: mesh.n_trial(),
            n_aux: aux.dim(),
            n_test: ws.n_test(),
            test_nnz: ws.columns.compute_nnz(),
        },
        coarse_h: mesh.coarse_h(),
        kappa_contrast: op.field.contrast(),
        max_cell_peclet: op.field.max_cell_peclet(mesh.h()),
        lambda_min: aux.lambda_min(),
        errors,
        w_norm: sol.w_norm,
        coupling_rank: sol.rank,
        saddle_method: sol.method,
        constraint_residual: sol.constraint_residual,
        timings: cfg.record_timings.then_some(t),
    };
    drop(pi);
    Ok((
        report,
        RunArtifacts {
            problem_raster: problem.raster,
            op,
            aux,
            u_fine,
            u_ms,
            u_proj,
        },
    ))
}

/// Runs the pipeline and writes the configured JSON report and CSV row.
pub fn run(cfg: &ExperimentConfig) -> Result<SolveReport> {
    let (report, _) = run_with_artifacts(cfg)?;
    write_outputs(&report)?;
    Ok(report)
}

/// Writes the report to `config.output` and appends to `config.csv`, when set.
pub fn write_outputs(report: &SolveReport) -> Result<()> {
    if let Some(path) = &report.config.output {
        std::fs::write(path, serde_json::to_string_pretty(report)? + "\n")?;
    }
    if let Some(path) = &report.config.csv {
        append_csv(path, &report.csv_row())?;
    }
    Ok(())
}

fn append_csv(path: &Path, row: &str) -> Result<()> {
    let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "{}", SolveReport::csv_header())?;
    }
    writeln!(f, "{row}")?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub base: ExperimentConfig,
    /// `(n_coarse, layers)` pairs.
    pub rows: Vec<(usize, usize)>,
    /// Fine cells per side, shared by every row.
    pub fine_cells: usize,
    /// Runs rows on the rayon pool instead of sequentially.
    pub parallel: bool,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            base: ExperimentConfig::default(),
            rows: vec![(10, 3), (20, 4), (40, 5)],
            fine_cells: 200,
            parallel: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub n_coarse: usize,
    pub layers: usize,
    pub outcome: std::result::Result<SolveReport, String>,
}

impl StudyRow {
    pub fn csv_row(&self, basis: usize) -> String {
        match &self.outcome {
            Ok(r) => r.csv_row(),
            Err(e) => format!(
                "{basis},{},{},,,,,,\"{}\"",
                fmt17(1.0 / self.n_coarse as f64),
                self.layers,
                e.replace('"', "'")
            ),
        }
    }
}

pub fn row_config(study: &StudyConfig, n_coarse: usize, layers: usize) -> Result<ExperimentConfig> {
    if n_coarse == 0 || study.fine_cells % n_coarse != 0 {
        return Err(Error::Config(format!(
            "n_coarse = {n_coarse} does not divide fine_cells = {}",
            study.fine_cells
        )));
    }
    Ok(ExperimentConfig {
        n_coarse,
        m_refine: study.fine_cells / n_coarse,
        layers,
        output: None,
        csv: None,
        ..study.base.clone()
    })
}

/// One run per `(n_coarse, layers)`; failures are recorded and the sweep continues.
pub fn study(study: &StudyConfig) -> Vec<StudyRow> {
    let one = |&(n, l): &(usize, usize)| StudyRow {
        n_coarse: n,
        layers: l,
        outcome: row_config(study, n, l)
            .and_then(|c| run_with_artifacts(&c))
            .map(|(r, _)| r)
            .map_err(|e| e.to_string()),
    };
    if study.parallel {
        use rayon::prelude::*;
        study.rows.par_iter().map(one).collect()
    } else {
        study.rows.iter().map(one).collect()
    }
}

pub fn study_csv(study: &StudyConfig, rows: &[StudyRow]) -> String {
    let mut out = String::from(SolveReport::csv_header());
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_row(study.base.j_per_cell));
        out.push('\n');
    }
    out
}

/// Operators, spectra and `π` for desk-scale checks.
pub fn prepare(cfg: &ExperimentConfig) -> Result<(OperatorSet, AuxSpace)> {
    faer::set_global_parallelism(faer::Par::Seq);
    cfg.validate()?;
    let problem = build_problem(cfg)?;
    let op = assemble_all(&problem.mesh, &problem.field, &problem.load, cfg.assembly_options())?;
    let aux = build_aux_space(&op, cfg.j_per_cell)?;
    Ok((op, aux))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GlobalReport {
    pub config: ExperimentConfig,
    pub n_dofs: usize,
    pub threshold: usize,
    pub verification: GlobalVerification,
}

pub fn verify_global(cfg: &ExperimentConfig, threshold: Option<usize>) -> Result<GlobalReport> {
    let threshold = threshold.unwrap_or(GLOBAL_DOF_THRESHOLD);
    let mesh = MeshHierarchy::new(cfg.n_coarse, cfg.m_refine)?;
    if mesh.n_dofs() > threshold {
        return Err(Error::TooLarge {
            dofs: mesh.n_dofs(),
            threshold,
        });
    }
    let (op, aux) = prepare(cfg)?;
    let pi = PiOperator::new(&op, &aux, cfg.pi_mode)?;
    let global = build_global_test_space(&pi, threshold)?;
    Ok(GlobalReport {
        config: cfg.clone(),
        n_dofs: op.n_dofs(),
        threshold,
        verification: check_global(&pi, &global),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayRow {
    pub column: ColumnKind,
    pub layers: usize,
    /// `‖w_glo − w_ms(l)‖_V`.
    pub error: f64,
    /// `error / ‖w_glo‖_V`.
    pub relative: f64,
    /// `e(l) / e(l−1)`, absent on the first row of a column.
    pub ratio: Option<f64>,
}

/// Columns sampled by default: three spectral and two trial-derived columns
/// around the middle of the grid. Trial columns sit off-centre so their
/// patches stay proper subdomains for one more layer.
pub fn default_decay_columns(n_coarse: usize, j_per_cell: usize) -> Vec<ColumnKind> {
    let c = n_coarse / 2;
    let cell = |x: usize, y: usize| y * n_coarse + x;
    let trial = |x: usize, y: usize| (y - 1) * (n_coarse - 1) + (x - 1);
    let q = (n_coarse / 4).max(1);
    vec![
        ColumnKind::Spectral {
            cell: cell(c, c),
            index: 0,
        },
        ColumnKind::Spectral {
            cell: cell(q, c),
            index: 1.min(j_per_cell - 1),
        },
        ColumnKind::Spectral {
            cell: cell(c, q),
            index: (j_per_cell - 1),
        },
        ColumnKind::Trial {
            trial: trial(c.saturating_sub(1).max(1), c),
        },
        ColumnKind::Trial {
            trial: trial(q.max(1), c),
        },
    ]
}

pub fn decay_study(
    cfg: &ExperimentConfig,
    layers: std::ops::RangeInclusive<usize>,
    columns: &[ColumnKind],
    threshold: Option<usize>,
) -> Result<Vec<DecayRow>> {
    let threshold = threshold.unwrap_or(GLOBAL_DOF_THRESHOLD);
    let mesh = MeshHierarchy::new(cfg.n_coarse, cfg.m_refine)?;
    if mesh.n_dofs() > threshold {
        return Err(Error::TooLarge {
            dofs: mesh.n_dofs(),
            threshold,
        });
    }
    let (op, aux) = prepare(cfg)?;
    let pi = PiOperator::new(&op, &aux, cfg.pi_mode)?;
    let global = build_global_test_space(&pi, threshold)?;
    let mut rows = Vec::new();
    for &kind in columns {
        let reference = global_column(&global, kind, aux.n_basis);
        let norm = op.v_norm(&reference);
        let mut prev: Option<f64> = None;
        for l in layers.clone() {
            let opts = TestSpaceOptions {
                layers: l,
                ..cfg.test_space_options()
            };
            let local = localized_column(&pi, kind, opts)?;
            let diff: Vec<f64> = reference.iter().zip(&local).map(|(a, b)| a - b).collect();
            let error = op.v_norm(&diff);
            rows.push(DecayRow {
                column: kind,
                layers: l,
                error,
                relative: if norm == 0.0 { error } else { error / norm },
                ratio: prev.map(|p| error / p),
            });
            prev = Some(error);
        }
    }
    Ok(rows)
}

pub fn decay_csv(rows: &[DecayRow]) -> String {
    let mut out = String::from("column,layers,error,relative,ratio\n");
    for r in rows {
        let label = match r.column {
            ColumnKind::Spectral { cell, index } => format!("psi:{cell}:{index}"),
            ColumnKind::Trial { trial } => format!("trial:{trial}"),
        };
        out.push_str(&format!(
            "{label},{},{},{},{}\n",
            r.layers,
            fmt17(r.error),
            fmt17(r.relative),
            r.ratio.map(fmt17).unwrap_or_default()
        ));
    }
    out
}

/// Quantities that `dump_field` can write.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DumpTarget {
    /// Permeability raster of `ex3`/`custom` (generated or loaded).
    Raster,
    /// Cell averages of `κ` on the fine grid.
    Kappa,
    /// Cell averages of `|b|` on the fine grid.
    Speed,
    /// Fine reference solution at vertices.
    Fine,
    /// Multiscale solution at vertices.
    Multiscale,
    /// One localized test function at vertices.
    Column(ColumnKind),
}

/// Plain-text grid: `n_rows n_cols`, then one line per row, row 0 at `y = 0`.
pub fn grid_text(rows: usize, cols: usize, values: &[f64]) -> String {
    assert_eq!(values.len(), rows * cols);
    let mut s = format!("{rows} {cols}\n");
    for r in values.chunks(cols) {
        let line: Vec<String> = r.iter().map(|v| format!("{v:.17e}")).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

/// Dof vector spread to the `(n+1)²` fine vertices, zero on `∂Ω`.
pub fn vertex_values(mesh: &MeshHierarchy, u: &[f64]) -> Vec<f64> {
    (0..mesh.n_fine_vertices())
        .map(|v| mesh.dof_of_vertex(v).map_or(0.0, |d| u[d]))
        .collect()
}

fn cell_average(mesh: &MeshHierarchy, per_quad: impl Fn(usize) -> f64) -> Vec<f64> {
    (0..mesh.n_fine_cells())
        .map(|c| (0..4).map(|q| per_quad(c * 4 + q)).sum::<f64>() / 4.0)
        .collect()
}

/// Writes `target` as a plain-text grid.
pub fn dump_field(cfg: &ExperimentConfig, target: DumpTarget, path: impl AsRef<Path>) -> Result<()> {
    faer::set_global_parallelism(faer::Par::Seq);
    cfg.validate()?;
    let text = match target {
        DumpTarget::Raster => load_or_generate_raster(cfg)?.to_text(),
        DumpTarget::Kappa | DumpTarget::Speed => {
            let p = build_problem(cfg)?;
            let f = &p.field;
            let n = p.mesh.n_fine();
            let values = if target == DumpTarget::Kappa {
                cell_average(&p.mesh, |q| f.kappa()[q])
            } else {
                cell_average(&p.mesh, |q| {
                    let b = f.velocity()[q];
                    b[0].hypot(b[1])
                })
            };
            grid_text(n, n, &values)
        }
        DumpTarget::Fine | DumpTarget::Multiscale => {
            let (_, art) = run_with_artifacts(cfg)?;
            let u = if target == DumpTarget::Fine {
                &art.u_fine
            } else {
                &art.u_ms
            };
            let n = art.op.mesh.n_fine() + 1;
            grid_text(n, n, &vertex_values(&art.op.mesh, u))
        }
        DumpTarget::Column(kind) => {
            let (op, aux) = prepare(cfg)?;
            let pi = PiOperator::new(&op, &aux, cfg.pi_mode)?;
            let w = localized_column(&pi, kind, cfg.test_space_options())?;
            let n = op.mesh.n_fine() + 1;
            grid_text(n, n, &vertex_values(&op.mesh, &w))
        }
    };
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_coarsest_row() {
        let c = ExperimentConfig::default();
        assert_eq!((c.n_coarse, c.m_refine, c.layers, c.j_per_cell), (10, 20, 3, 3));
        assert_eq!(c.example, Example::Ex1);
    }

    #[test]
    fn overrides_parse_json_and_strings() {
        let c = ExperimentConfig::default();
        let c = c
            .with_overrides([
                "n_coarse=4",
                "example=ex2",
                "pi_mode={\"inverse_lambda\":{\"floor\":0.5}}",
            ])
            .unwrap();
        assert_eq!(c.n_coarse, 4);
        assert_eq!(c.example, Example::Ex2);
        assert_eq!(c.pi_mode, PiMode::InverseLambda { floor: 0.5 });
        assert!(c.with_overrides(["nonsense=1"]).is_err());
        assert!(c.with_overrides(["n_coarse"]).is_err());
        assert!(c.with_overrides(["n_coarse=minus"]).is_err());
    }

    #[test]
    fn config_json_roundtrip() {
        let c = ExperimentConfig {
            raster: Some("k.txt".into()),
            ..Default::default()
        };
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&text).unwrap(), c);
        let partial: ExperimentConfig = serde_json::from_str(r#"{"n_coarse": 5}"#).unwrap();
        assert_eq!(partial.m_refine, 20);
    }

    #[test]
    fn validation() {
        let mut c = ExperimentConfig::default();
        c.layers = 1;
        assert_eq!(c.validate().unwrap().len(), 1);
        c.j_per_cell = 0;
        assert!(c.validate().is_err());
        let c = ExperimentConfig {
            example: Example::Custom,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn study_rows_require_divisibility() {
        let s = StudyConfig::default();
        assert_eq!(row_config(&s, 40, 5).unwrap().m_refine, 5);
        assert!(row_config(&s, 30, 5).is_err());
        let empty = StudyConfig {
            rows: vec![],
            ..Default::default()
        };
        assert!(study(&empty).is_empty());
        assert_eq!(study_csv(&empty, &[]).lines().count(), 1);
    }

    #[test]
    fn zero_load_reports_zero_errors() {
        let cfg = ExperimentConfig {
            n_coarse: 4,
            m_refine: 3,
            layers: 1,
            load_scale: 0.0,
            ..Default::default()
        };
        let r = run(&cfg).unwrap();
        assert_eq!(r.errors.v_error, 0.0);
        assert_eq!(r.errors.ratio, None);
        assert!(r.csv_row().starts_with("3,2.5000000000000000e-1,1,"));
    }

    #[test]
    fn default_decay_columns_are_valid() {
        let cols = default_decay_columns(10, 3);
        assert_eq!(cols.len(), 5);
        for c in cols {
            match c {
                ColumnKind::Spectral { cell, index } => assert!(cell < 100 && index < 3),
                ColumnKind::Trial { trial } => assert!(trial < 81),
            }
        }
    }
}
