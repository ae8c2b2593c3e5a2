//! Configured end-to-end runs: forward data, reconstruction, metrics, and
//! the studies built on them.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, StageContext};
use crate::forward::{
    add_noise, extract_cauchy, solve_forward_with, CauchyData, MediumCoefficients, ProblemKind,
    TimeScheme, WaveField,
};
use crate::grid::{Grid, TimeGrid};
use crate::qrm::{assemble, DEFAULT_EPSILON};
use crate::reconstruction::{
    cutoff_study, metrics, reconstruct_source, CutoffEntry, Inclusion, Metrics,
};
use crate::solver::{
    band_storage_bytes, solve, solve_banded, Preconditioner, SolveMethod, SolveOptions,
    SolveReport, DIRECT_MEMORY_LIMIT_BYTES,
};
use crate::spectral::{spectral_boundary_with, CouplingField};
use crate::time_basis::{default_quad_order, BasisKind, ProjectionRule, TimeBasis};

/// Source functions of the experiment suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceId {
    /// Disc of value 1, center (0.5, 0), radius 0.3.
    Example1,
    /// Example 1 plus a square of value 2 centered at (-0.5, 0.5).
    Example2,
    /// Rectangle of value 3 with a circular void, and an ellipse of value -2.5.
    Example3,
    /// Indicator of the letter T.
    Example4,
    /// Smooth bump centered at 0.2 (1D).
    Test1,
    /// `1 - x²` (1D).
    Test2,
    /// `sin(π x³)` (1D).
    Test3,
    /// Values read from a CSV file in the field format written by this crate
    /// (`x,y,value` or `x,value`, node order).
    GridFile { path: PathBuf },
}

impl SourceId {
    pub fn dimension(&self) -> Option<usize> {
        match self {
            SourceId::Example1 | SourceId::Example2 | SourceId::Example3 | SourceId::Example4 => {
                Some(2)
            }
            SourceId::Test1 | SourceId::Test2 | SourceId::Test3 => Some(1),
            SourceId::GridFile { .. } => None,
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "example1" => SourceId::Example1,
            "example2" => SourceId::Example2,
            "example3" => SourceId::Example3,
            "example4" => SourceId::Example4,
            "test1" => SourceId::Test1,
            "test2" => SourceId::Test2,
            "test3" => SourceId::Test3,
            other => SourceId::GridFile {
                path: PathBuf::from(other),
            },
        })
    }
}

/// Half-size of the square in Example 2: the formula's `0.3²` taken
/// literally, or `0.3`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SquareSize {
    #[default]
    Verbatim,
    Wide,
}

impl SquareSize {
    pub fn half_side(self) -> f64 {
        match self {
            SquareSize::Verbatim => 0.3 * 0.3,
            SquareSize::Wide => 0.3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MediumPreset {
    /// `a = 1 + sin²(r²)`, damping `0.5(cos r² + sin r²)`, drift `(2, 1)`, potential `cos r²`.
    Cavity2d,
    /// `a = 1 + sin²(x²)`, drift `sin(πx)`, potential `cos(2πx)`, no damping.
    Interval1d,
    /// Plain wave equation.
    Unit,
}

impl MediumPreset {
    pub fn build(self, grid: &Grid) -> Result<MediumCoefficients> {
        match self {
            MediumPreset::Cavity2d => MediumCoefficients::cavity_2d(grid),
            MediumPreset::Interval1d => MediumCoefficients::interval_1d(grid),
            MediumPreset::Unit => Ok(MediumCoefficients::unit(grid)),
        }
    }
}

/// Everything that defines one run. Unspecified fields take the 2D
/// defaults (`R = 1`, `Nx = 81`, `T = 2`, `NT = 201`, `N = 35`, `ε = 1e-12`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dimension: usize,
    pub problem: ProblemKind,
    pub source: SourceId,
    pub square_size: SquareSize,
    pub medium: MediumPreset,
    pub half_width: f64,
    pub nx: usize,
    pub t_final: f64,
    pub nt: usize,
    pub basis: BasisKind,
    pub n_modes: usize,
    /// Gauss-Legendre order for basis integrals; `2N + 40` when absent.
    pub quad_order: Option<usize>,
    pub delta: f64,
    pub seed: u64,
    pub epsilon: f64,
    pub solver: SolveOptions,
    pub scheme: TimeScheme,
    pub projection: ProjectionRule,
    /// Generate data on a grid refined 2x in space and time, then restrict.
    pub refine_data: bool,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dimension: 2,
            problem: ProblemKind::Dirichlet,
            source: SourceId::Example1,
            square_size: SquareSize::Verbatim,
            medium: MediumPreset::Cavity2d,
            half_width: 1.0,
            nx: 81,
            t_final: 2.0,
            nt: 201,
            basis: BasisKind::Klibanov,
            n_modes: 35,
            quad_order: None,
            delta: 0.1,
            seed: 0,
            epsilon: DEFAULT_EPSILON,
            solver: SolveOptions {
                preconditioner: Preconditioner::BlockJacobi,
                ..SolveOptions::default()
            },
            scheme: TimeScheme::Implicit,
            projection: ProjectionRule::Product,
            refine_data: false,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    /// One of the 2D examples with the default settings.
    pub fn example(source: SourceId, problem: ProblemKind, delta: f64) -> Self {
        Self {
            source,
            problem,
            delta,
            ..Self::default()
        }
    }

    /// The 1D setting: interval `(-1, 1)`, `T = 4`, no damping, Dirichlet
    /// problem, 5% noise. The normal equations are small enough here to be
    /// factored directly.
    pub fn one_dimensional(source: SourceId) -> Self {
        Self {
            dimension: 1,
            source,
            medium: MediumPreset::Interval1d,
            nx: 161,
            t_final: 4.0,
            nt: 401,
            delta: 0.05,
            solver: SolveOptions {
                method: SolveMethod::Direct,
                ..SolveOptions::default()
            },
            ..Self::default()
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Fill in derived defaults and check consistency.
    pub fn resolved(&self) -> Result<Self> {
        let mut c = self.clone();
        if c.quad_order.is_none() {
            c.quad_order = Some(default_quad_order(c.n_modes));
        }
        if let Some(d) = c.source.dimension() {
            if d != c.dimension {
                return Err(Error::invalid(format!(
                    "source {:?} is {d}-dimensional but the config asks for dimension {}",
                    c.source, c.dimension
                )));
            }
        }
        let medium_dim = match c.medium {
            MediumPreset::Cavity2d => Some(2),
            MediumPreset::Interval1d => Some(1),
            MediumPreset::Unit => None,
        };
        if medium_dim.is_some_and(|d| d != c.dimension) {
            return Err(Error::invalid(format!(
                "medium {:?} does not fit dimension {}",
                c.medium, c.dimension
            )));
        }
        if !(c.delta >= 0.0) {
            return Err(Error::invalid(format!(
                "noise level must be nonnegative, got {}",
                c.delta
            )));
        }
        if c.n_modes == 0 {
            return Err(Error::invalid("n_modes must be positive"));
        }
        Grid::new(c.dimension, c.half_width, c.nx)?;
        TimeGrid::new(c.t_final, c.nt)?;
        Ok(c)
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.dimension, self.half_width, self.nx)
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.t_final, self.nt)
    }
}

/// Source values on a grid and the labelled inclusions used for metrics.
pub fn sample_source(config: &ExperimentConfig, grid: &Grid) -> Result<(Vec<f64>, Vec<Inclusion>)> {
    let disc = |x: f64, y: f64| (x - 0.5).powi(2) + y * y < 0.3 * 0.3;
    let half = config.square_size.half_side();
    let square = move |x: f64, y: f64| (x + 0.5).abs().max((y - 0.5).abs()) < half;
    let rect = |x: f64, y: f64| {
        (2.0 * (x - 0.5).abs()).max(y.abs()) < 0.7 && (x - 0.5).powi(2) + y * y >= 0.2 * 0.2
    };
    let ellipse = |x: f64, y: f64| 7.0 * (x + 0.6).powi(2) + (y - 0.4).powi(2) <= 0.5 * 0.5;
    let letter_t = |x: f64, y: f64| {
        let bar = (-0.5..=0.5).contains(&x) && (0.4..=0.7).contains(&y);
        let stem = (-0.15..=0.15).contains(&x) && (-0.7..=0.4).contains(&y);
        bar || stem
    };
    let indicator = |b: bool| if b { 1.0 } else { 0.0 };
    Ok(match &config.source {
        SourceId::Example1 => (
            grid.sample(|x, y| indicator(disc(x, y))),
            vec![Inclusion::from_indicator(grid, "disc", 1.0, disc)],
        ),
        SourceId::Example2 => (
            grid.sample(|x, y| {
                if square(x, y) {
                    2.0
                } else {
                    indicator(disc(x, y))
                }
            }),
            vec![
                Inclusion::from_indicator(grid, "disc", 1.0, disc),
                Inclusion::from_indicator(grid, "square", 2.0, square),
            ],
        ),
        SourceId::Example3 => (
            grid.sample(|x, y| {
                if ellipse(x, y) {
                    -2.5
                } else if rect(x, y) {
                    3.0
                } else {
                    0.0
                }
            }),
            vec![
                Inclusion::from_indicator(grid, "rectangle", 3.0, rect),
                Inclusion::from_indicator(grid, "ellipse", -2.5, ellipse),
            ],
        ),
        SourceId::Example4 => (
            grid.sample(|x, y| indicator(letter_t(x, y))),
            vec![Inclusion::from_indicator(grid, "letter_t", 1.0, letter_t)],
        ),
        SourceId::Test1 => (
            grid.sample(|x, _| {
                let r2 = (x - 0.2).powi(2);
                if r2 < 0.09 {
                    (r2 / (r2 - 0.09)).exp()
                } else {
                    0.0
                }
            }),
            vec![],
        ),
        SourceId::Test2 => (grid.sample(|x, _| 1.0 - x * x), vec![]),
        SourceId::Test3 => (
            grid.sample(|x, _| (std::f64::consts::PI * x.powi(3)).sin()),
            vec![],
        ),
        SourceId::GridFile { path } => (read_field_csv(path, grid)?, vec![]),
    })
}

/// Read the `value` column of a field CSV, checking node coordinates.
pub fn read_field_csv(path: &Path, grid: &Grid) -> Result<Vec<f64>> {
    let file = fs::File::open(path)?;
    let mut out = Vec::with_capacity(grid.n_nodes());
    let tol = 1e-9 * grid.half_width();
    for (line_no, line) in BufReader::new(file).lines().enumerate().skip(1) {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<f64> = line
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::invalid(format!("{}:{}: {e}", path.display(), line_no + 1)))?;
        if cols.len() != grid.dim() + 1 {
            return Err(Error::invalid(format!(
                "{}:{}: expected {} columns",
                path.display(),
                line_no + 1,
                grid.dim() + 1
            )));
        }
        let k = out.len();
        if k >= grid.n_nodes() {
            return Err(Error::ShapeMismatch(format!(
                "{} has more rows than grid nodes",
                path.display()
            )));
        }
        let (x, y) = grid.position(k);
        let y_ok = grid.dim() == 1 || (cols[1] - y).abs() <= tol;
        if (cols[0] - x).abs() > tol || !y_ok {
            return Err(Error::invalid(format!(
                "{}:{}: node coordinates do not match the grid",
                path.display(),
                line_no + 1
            )));
        }
        out.push(cols[grid.dim()]);
    }
    if out.len() != grid.n_nodes() {
        return Err(Error::ShapeMismatch(format!(
            "{} has {} values, grid has {} nodes",
            path.display(),
            out.len(),
            grid.n_nodes()
        )));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Default)]
struct Timer {
    stages: Vec<StageTiming>,
}

impl Timer {
    fn run<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f().stage(stage)?;
        let seconds = start.elapsed().as_secs_f64();
        info!("stage {stage}: {seconds:.2} s");
        self.stages.push(StageTiming {
            stage: stage.to_string(),
            seconds,
        });
        Ok(out)
    }
}

/// Forward data shared by all reconstructions of one configuration.
pub struct Prepared {
    pub config: ExperimentConfig,
    pub grid: Grid,
    pub time: TimeGrid,
    pub medium: MediumCoefficients,
    pub p_true: Vec<f64>,
    pub inclusions: Vec<Inclusion>,
    pub field: WaveField,
    pub clean: CauchyData,
    timings: Vec<StageTiming>,
}

/// Run the forward problem and extract noiseless data.
pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    let config = config.resolved()?;
    let mut timer = Timer::default();
    let grid = config.grid()?;
    let time = config.time_grid()?;
    let medium = config.medium.build(&grid).stage("medium")?;
    let (p_true, inclusions) = sample_source(&config, &grid).stage("source")?;
    let field = timer.run("forward", || {
        if config.refine_data {
            let fine = Grid::new(config.dimension, config.half_width, 2 * (config.nx - 1) + 1)?;
            let fine_time = TimeGrid::new(config.t_final, 2 * (config.nt - 1) + 1)?;
            let fine_medium = config.medium.build(&fine)?;
            let (fine_p, _) = sample_source(&config, &fine)?;
            let f = solve_forward_with(
                &fine_medium,
                &fine_p,
                &fine,
                &fine_time,
                config.problem,
                config.scheme,
                None,
            )?;
            f.restrict(&grid, &time)
        } else {
            solve_forward_with(
                &medium,
                &p_true,
                &grid,
                &time,
                config.problem,
                config.scheme,
                None,
            )
        }
    })?;
    let clean = timer.run("cauchy", || Ok(extract_cauchy(&field, config.problem)))?;
    Ok(Prepared {
        config,
        grid,
        time,
        medium,
        p_true,
        inclusions,
        field,
        clean,
        timings: timer.stages,
    })
}

/// Machine-readable account of a run; not part of the deterministic outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub n_unknowns: usize,
    pub functional_value: f64,
    pub solve: SolveReport,
    pub stages: Vec<StageTiming>,
}

/// Result of one reconstruction.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub config: ExperimentConfig,
    pub grid: Grid,
    pub p_true: Vec<f64>,
    pub p_comp: Vec<f64>,
    pub metrics: Metrics,
    pub report: RunReport,
}

impl Prepared {
    /// Reconstruct with the configured basis, noise level and seed.
    pub fn reconstruct(&self) -> Result<Outcome> {
        self.reconstruct_with(
            self.config.basis,
            self.config.n_modes,
            self.config.delta,
            self.config.seed,
        )
    }

    pub fn reconstruct_with(
        &self,
        kind: BasisKind,
        n_modes: usize,
        delta: f64,
        seed: u64,
    ) -> Result<Outcome> {
        let mut config = self.config.clone();
        config.basis = kind;
        config.n_modes = n_modes;
        config.delta = delta;
        config.seed = seed;
        config.quad_order = None;
        let config = config.resolved()?;
        let mut timer = Timer {
            stages: self.timings.clone(),
        };
        let quad = config
            .quad_order
            .unwrap_or_else(|| default_quad_order(n_modes));
        let noisy = timer.run("noise", || add_noise(&self.clean, delta, seed))?;
        let basis = timer.run("basis", || {
            TimeBasis::build(kind, n_modes, config.t_final, quad)
        })?;
        let spectral = timer.run("spectral", || {
            spectral_boundary_with(&noisy, &basis, config.projection)
        })?;
        let mass = basis.mass_matrices();
        let coupling = timer.run("coupling", || Ok(CouplingField::new(&self.medium, &mass)))?;
        let system = timer.run("assemble", || {
            assemble(
                &self.grid,
                &self.medium,
                &coupling,
                &spectral,
                config.epsilon,
                config.problem,
            )
        })?;
        let (u, solve_report) = timer.run("solve", || {
            let mut op = system.normal_operator();
            match config.solver.method {
                SolveMethod::Cg => solve(&mut op, &system.normal_rhs(), &config.solver),
                SolveMethod::Direct => {
                    let bytes = band_storage_bytes(system.n_unknowns(), system.normal_bandwidth());
                    if bytes > DIRECT_MEMORY_LIMIT_BYTES {
                        return Err(Error::invalid(format!(
                            "direct solve needs {:.1} GiB of band storage (limit {:.1} GiB); use the cg method",
                            bytes as f64 / (1u64 << 30) as f64,
                            DIRECT_MEMORY_LIMIT_BYTES as f64 / (1u64 << 30) as f64
                        )));
                    }
                    solve_banded(system.normal_band_matrix(), &mut op, &system.normal_rhs(), &config.solver)
                }
            }
        })?;
        let functional_value = system.functional(&u)?;
        let rec = timer.run("reconstruct", || {
            reconstruct_source(&u, system.flat(), &mass.psi0)
        })?;
        let m = timer.run("metrics", || {
            metrics(&self.grid, &rec.p_comp, &self.p_true, &self.inclusions)
        })?;
        info!(
            "{:?} problem {} basis {kind} N={n_modes} delta={delta} seed={seed}: rel L2 {:.4}, rel H1 {:.4}",
            config.source,
            config.problem.number(),
            m.rel_l2,
            m.rel_h1
        );
        Ok(Outcome {
            report: RunReport {
                n_unknowns: system.n_unknowns(),
                functional_value,
                solve: solve_report,
                stages: timer.stages,
            },
            config,
            grid: self.grid.clone(),
            p_true: self.p_true.clone(),
            p_comp: rec.p_comp,
            metrics: m,
        })
    }
}

/// Full pipeline for one configuration.
pub fn run_example(config: &ExperimentConfig) -> Result<Outcome> {
    prepare(config)?.reconstruct()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    use std::io::Write;
    writeln!(w)?;
    Ok(())
}

fn write_field(path: &Path, grid: &Grid, field: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    grid.write_field_csv(&mut w, field)?;
    use std::io::Write;
    w.flush()?;
    Ok(())
}

impl Outcome {
    /// Write `metrics.json`, `report.json`, `resolved_config.json` and
    /// `fields/{p_comp,p_true}.csv` into `dir`.
    pub fn write_bundle(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("fields"))?;
        write_json(&dir.join("metrics.json"), &self.metrics)?;
        write_json(&dir.join("report.json"), &self.report)?;
        write_json(&dir.join("resolved_config.json"), &self.config)?;
        write_field(
            &dir.join("fields").join("p_comp.csv"),
            &self.grid,
            &self.p_comp,
        )?;
        write_field(
            &dir.join("fields").join("p_true.csv"),
            &self.grid,
            &self.p_true,
        )?;
        Ok(())
    }
}

/// The same data inverted with both time bases.
pub struct Comparison {
    pub klibanov: Outcome,
    pub trigonometric: Outcome,
}

impl Comparison {
    pub fn write_bundle(&self, dir: &Path) -> Result<()> {
        self.klibanov.write_bundle(&dir.join("klibanov"))?;
        self.trigonometric.write_bundle(&dir.join("trigonometric"))
    }
}

/// 1D test `test_id` (1, 2 or 3) with both bases at `n_modes` functions each.
pub fn run_1d_comparison(test_id: u8, delta: f64, seed: u64, n_modes: usize) -> Result<Comparison> {
    let mut config = ExperimentConfig::one_dimensional(match test_id {
        1 => SourceId::Test1,
        2 => SourceId::Test2,
        3 => SourceId::Test3,
        _ => {
            return Err(Error::invalid(format!(
                "1D test must be 1, 2 or 3, got {test_id}"
            )))
        }
    });
    config.delta = delta;
    config.seed = seed;
    config.n_modes = n_modes;
    compare_bases(&config)
}

/// Invert one configuration's data with both bases.
pub fn compare_bases(config: &ExperimentConfig) -> Result<Comparison> {
    let prepared = prepare(config)?;
    let c = &prepared.config;
    Ok(Comparison {
        klibanov: prepared.reconstruct_with(BasisKind::Klibanov, c.n_modes, c.delta, c.seed)?,
        trigonometric: prepared.reconstruct_with(
            BasisKind::Trigonometric,
            c.n_modes,
            c.delta,
            c.seed,
        )?,
    })
}

/// Truncation levels of the cutoff figure.
pub const CUTOFF_LEVELS: [usize; 3] = [15, 20, 35];

pub struct CutoffFigure {
    pub config: ExperimentConfig,
    pub grid: Grid,
    pub entries: Vec<CutoffEntry>,
}

/// Truncation error of the Example 2 wave field at `N = 15, 20, 35`.
pub fn run_cutoff_figure(config: &ExperimentConfig) -> Result<CutoffFigure> {
    let mut config = config.clone();
    config.source = SourceId::Example2;
    let prepared = prepare(&config)?;
    let entries = cutoff_study(
        &prepared.field,
        config.basis,
        &CUTOFF_LEVELS,
        config.projection,
    )
    .stage("cutoff")?;
    for e in &entries {
        info!("cutoff N={}: sup error {:.3e}", e.n_modes, e.sup_error);
    }
    Ok(CutoffFigure {
        config: prepared.config,
        grid: prepared.grid,
        entries,
    })
}

impl CutoffFigure {
    /// `cutoff.json` plus one `fields/cutoff_N{n}.csv` per level.
    pub fn write_bundle(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("fields"))?;
        write_json(&dir.join("cutoff.json"), &self.entries)?;
        write_json(&dir.join("resolved_config.json"), &self.config)?;
        for e in &self.entries {
            write_field(
                &dir.join("fields")
                    .join(format!("cutoff_N{}.csv", e.n_modes)),
                &self.grid,
                &e.error_field,
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub delta: f64,
    pub seeds: Vec<u64>,
    /// Relative H¹ distance to the noiseless reconstruction, per seed.
    pub rel_h1: Vec<f64>,
    pub mean_rel_h1: f64,
    /// `mean_rel_h1 / delta` (absent for `delta = 0`).
    pub ratio: Option<f64>,
    /// Relative H¹ error against the true source, seed-averaged.
    pub mean_rel_h1_vs_true: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// `max(e/δ) / min(e/δ)` over the positive noise levels.
    pub ratio_spread: f64,
    pub spread_bound: f64,
    /// Consecutive steps in δ where the mean error does not decrease.
    pub nondecreasing_steps: usize,
    pub total_steps: usize,
    /// Relative H¹ error of the noiseless reconstruction against the true
    /// source (the floor set by truncation, discretization and ε).
    pub noiseless_rel_h1: f64,
    pub trend_holds: bool,
}

/// Lipschitz-type stability sweep.
///
/// The noise-free reconstruction `u*` (same model, same `ε`) is the
/// reference: the stability estimate bounds `‖u^δ − u*‖` by `C(δ + √ε ‖u*‖)`,
/// so the distance to `u*` should grow at most linearly in `δ`. Errors
/// against the true source are reported alongside.
pub fn convergence_sweep(
    config: &ExperimentConfig,
    deltas: &[f64],
    seeds: &[u64],
    spread_bound: f64,
) -> Result<SweepTable> {
    if deltas.is_empty() || seeds.is_empty() {
        return Err(Error::invalid(
            "sweep needs at least one noise level and one seed",
        ));
    }
    if deltas.windows(2).any(|w| w[1] <= w[0]) || deltas[0] < 0.0 {
        return Err(Error::invalid(
            "noise levels must be nonnegative and strictly ascending",
        ));
    }
    let prepared = prepare(config)?;
    let c = &prepared.config;
    let reference = prepared
        .reconstruct_with(c.basis, c.n_modes, 0.0, 0)
        .map_err(|e| e.in_stage("sweep delta=0"))?;
    let mut rows = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let mut rel = Vec::with_capacity(seeds.len());
        let mut vs_true = 0.0;
        for &seed in seeds {
            let out = if delta == 0.0 {
                reference.clone()
            } else {
                prepared
                    .reconstruct_with(c.basis, c.n_modes, delta, seed)
                    .map_err(|e| e.in_stage(format!("sweep delta={delta} seed={seed}")))?
            };
            rel.push(metrics(&prepared.grid, &out.p_comp, &reference.p_comp, &[])?.rel_h1);
            vs_true += out.metrics.rel_h1;
        }
        let mean = rel.iter().sum::<f64>() / rel.len() as f64;
        rows.push(SweepRow {
            delta,
            seeds: seeds.to_vec(),
            rel_h1: rel,
            mean_rel_h1: mean,
            ratio: (delta > 0.0).then(|| mean / delta),
            mean_rel_h1_vs_true: vs_true / seeds.len() as f64,
        });
    }
    let ratios: Vec<f64> = rows.iter().filter_map(|r| r.ratio).collect();
    let ratio_spread = if ratios.is_empty() {
        1.0
    } else {
        ratios.iter().cloned().fold(0.0, f64::max)
            / ratios.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    let total_steps = rows.len().saturating_sub(1);
    let nondecreasing_steps = rows
        .windows(2)
        .filter(|w| w[1].mean_rel_h1 >= w[0].mean_rel_h1)
        .count();
    Ok(SweepTable {
        trend_holds: ratio_spread <= spread_bound && nondecreasing_steps + 1 >= total_steps.max(1),
        rows,
        ratio_spread,
        spread_bound,
        nondecreasing_steps,
        total_steps,
        noiseless_rel_h1: reference.metrics.rel_h1,
    })
}

impl SweepTable {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(source: SourceId) -> ExperimentConfig {
        ExperimentConfig {
            nx: 11,
            nt: 41,
            n_modes: 4,
            solver: SolveOptions {
                tol: 1e-8,
                max_iter: 500,
                ..SolveOptions::default()
            },
            ..ExperimentConfig::example(source, ProblemKind::Dirichlet, 0.1)
        }
    }

    #[test]
    fn defaults_match_the_two_dimensional_setting() {
        let c = ExperimentConfig::default().resolved().unwrap();
        assert_eq!(
            (c.half_width, c.nx, c.t_final, c.nt, c.n_modes),
            (1.0, 81, 2.0, 201, 35)
        );
        assert_eq!(c.epsilon, 1e-12);
        assert_eq!(c.quad_order, Some(110));
        let one = ExperimentConfig::one_dimensional(SourceId::Test2)
            .resolved()
            .unwrap();
        assert_eq!(
            (one.dimension, one.t_final, one.medium),
            (1, 4.0, MediumPreset::Interval1d)
        );
        assert_eq!(one.solver.method, SolveMethod::Direct);
        assert_eq!(c.solver.method, SolveMethod::Cg);
        assert_eq!(c.solver.preconditioner, Preconditioner::BlockJacobi);
    }

    #[test]
    fn config_round_trips_and_rejects_mismatches() {
        let c = ExperimentConfig::default();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&s).unwrap(), c);
        let partial: ExperimentConfig =
            serde_json::from_str(r#"{"nx": 41, "problem": "neumann_bc"}"#).unwrap();
        assert_eq!(partial.nx, 41);
        assert_eq!(partial.problem, ProblemKind::Neumann);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"bogus": 1}"#).is_err());
        let bad = ExperimentConfig {
            source: SourceId::Test1,
            ..ExperimentConfig::default()
        };
        assert!(bad.resolved().is_err());
    }

    #[test]
    fn example_sources_follow_their_definitions() {
        let grid = Grid::square(1.0, 81).unwrap();
        let value_at = |src: SourceId, x: f64, y: f64| {
            let cfg = ExperimentConfig::example(src, ProblemKind::Dirichlet, 0.0);
            let (p, _) = sample_source(&cfg, &grid).unwrap();
            let i = ((x + 1.0) / grid.h()).round() as usize;
            let j = ((y + 1.0) / grid.h()).round() as usize;
            p[grid.node(i, j)]
        };
        assert_eq!(value_at(SourceId::Example1, 0.5, 0.0), 1.0);
        assert_eq!(value_at(SourceId::Example1, 0.5, 0.3), 0.0);
        assert_eq!(value_at(SourceId::Example2, -0.5, 0.5), 2.0);
        assert_eq!(value_at(SourceId::Example2, -0.5, 0.6), 0.0);
        assert_eq!(value_at(SourceId::Example3, 0.5, 0.0), 0.0);
        assert_eq!(value_at(SourceId::Example3, 0.5, 0.5), 3.0);
        assert_eq!(value_at(SourceId::Example3, -0.6, 0.4), -2.5);
        assert_eq!(value_at(SourceId::Example4, 0.0, 0.0), 1.0);
        assert_eq!(value_at(SourceId::Example4, 0.4, 0.0), 0.0);
        assert_eq!(value_at(SourceId::Example4, 0.4, 0.5), 1.0);
        let wide = ExperimentConfig {
            square_size: SquareSize::Wide,
            ..ExperimentConfig::example(SourceId::Example2, ProblemKind::Dirichlet, 0.0)
        };
        let (p, inc) = sample_source(&wide, &grid).unwrap();
        assert_eq!(p[grid.node(12, 56)], 2.0); // (-0.7, 0.4)
        assert_eq!(inc.len(), 2);
    }

    #[test]
    fn one_dimensional_sources() {
        let grid = Grid::interval(1.0, 11).unwrap();
        let cfg = |s| ExperimentConfig::one_dimensional(s);
        let (bump, _) = sample_source(&cfg(SourceId::Test1), &grid).unwrap();
        assert!((bump[6] - 1.0).abs() < 1e-12); // x = 0.2
        assert_eq!(bump[0], 0.0);
        let (p2, _) = sample_source(&cfg(SourceId::Test2), &grid).unwrap();
        assert!((p2[5] - 1.0).abs() < 1e-12 && p2[0].abs() < 1e-12);
    }

    #[test]
    fn grid_file_source_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let grid = Grid::square(1.0, 5).unwrap();
        let field = grid.sample(|x, y| (1.0 - x * x) * (1.0 - y * y));
        let path = dir.path().join("p.csv");
        write_field(&path, &grid, &field).unwrap();
        assert_eq!(read_field_csv(&path, &grid).unwrap(), field);
        let other = Grid::square(1.0, 6).unwrap();
        assert!(read_field_csv(&path, &other).is_err());
    }

    #[test]
    fn small_pipeline_runs_and_writes_a_bundle() {
        let out = run_example(&small(SourceId::Example1)).unwrap();
        assert!(out.metrics.rel_l2.is_finite());
        assert_eq!(out.report.n_unknowns, 11 * 11 * 4);
        let stages: Vec<_> = out.report.stages.iter().map(|s| s.stage.as_str()).collect();
        assert!(stages.contains(&"forward") && stages.contains(&"solve"));
        let dir = tempfile::tempdir().unwrap();
        out.write_bundle(dir.path()).unwrap();
        for f in [
            "metrics.json",
            "report.json",
            "resolved_config.json",
            "fields/p_comp.csv",
            "fields/p_true.csv",
        ] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
    }

    #[test]
    fn stage_errors_name_the_stage() {
        let mut cfg = small(SourceId::Example1);
        cfg.epsilon = -1.0;
        let err = run_example(&cfg).unwrap_err();
        assert!(err.to_string().contains("assemble"), "{err}");
        let source = std::error::Error::source(&err).unwrap().to_string();
        assert!(source.contains("regularization"), "{source}");
    }

    #[test]
    fn refined_data_restricts_to_the_coarse_grid() {
        let mut cfg = small(SourceId::Example1);
        cfg.refine_data = true;
        let p = prepare(&cfg).unwrap();
        assert_eq!(p.clean.nodes.len(), 40);
        assert_eq!(p.clean.n_times, 41);
    }
}
