//! Batch experiment runner for the bosegas engine. Every subcommand reads
//! an optional `key = value` config file plus overriding flags, requires an
//! explicit seed wherever sampling is involved, and writes CSV or JSON
//! lines whose body is bitwise reproducible for a fixed configuration (only
//! the JSON header timestamp varies between runs).

mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use bosegas::asymptotics::{
    free_bc_cell_counts, pareto_lclt_check, pd_convergence_test, DickmanDensity, FreeCellParams,
    ParetoWalkModel, PdParams,
};
use bosegas::ensemble::{chemical_potential, free_energy, PartitionTable, TiltedEnsemble};
use bosegas::loops::{sample_conditioned, short_long_split, LoopThresholds};
use bosegas::rdm::{odlro_sweep, RdmKernel};
use bosegas::report::{write_csv_pairs, write_csv_records, JsonLinesReport};
use bosegas::rng::stream_rng;
use bosegas::spectral::TraceTable;
use bosegas::{Bc, Geometry};

use config::{ensure_increasing, ensure_positive, CliError, CliResult, Settings};

#[derive(Parser)]
#[command(
    name = "bosegas",
    about = "Desk-scale experiments on the ideal Bose gas in a box",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the cycle-trace table t_k and write it as text.
    Traces(TracesArgs),
    /// Canonical partition function Z_N from the cycle-sum recursion.
    Partition(PartitionArgs),
    /// Free energy and chemical potential over a density grid (CSV).
    FreeEnergy(FreeEnergyArgs),
    /// Off-diagonal profile gamma_N(0, r e1) as CSV r,gamma.
    RdmProfile(RdmProfileArgs),
    /// sigma_N sweep over a size sequence with the ODLRO verdict (JSON lines).
    OdlroSweep(OdlroSweepArgs),
    /// Sample conditioned loop configurations and summarize them (JSON lines).
    SampleLoops(SampleLoopsArgs),
    /// Poisson-Dirichlet convergence experiment (JSON lines).
    PdTest(PdTestArgs),
    /// Heavy-tail local-limit check by exact convolution (JSON lines).
    Lclt(LcltArgs),
    /// Dickman density value at a point.
    Dickman(DickmanArgs),
    /// Tilted-ensemble local-CLT experiment (JSON lines).
    CltTilted(CltTiltedArgs),
    /// Free-boundary marked-cell experiment (JSON lines).
    FreeCells(FreeCellsArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Key=value config file; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run this module's invariant suite instead of the experiment.
    #[arg(long)]
    selftest: bool,
}

#[derive(Args)]
struct GeometryArgs {
    /// Boundary condition: dirichlet, neumann, periodic, or free.
    #[arg(long)]
    bc: Option<String>,
    /// Spatial dimension.
    #[arg(long)]
    d: Option<u32>,
    /// Inverse temperature.
    #[arg(long)]
    beta: Option<f64>,
    /// Box side length.
    #[arg(long = "L")]
    l: Option<f64>,
}

impl GeometryArgs {
    fn resolve(&self, settings: &Settings) -> CliResult<(Bc, u32, f64, f64)> {
        let bc = settings.require(settings.bc(self.bc.as_deref(), "bc")?, "bc")?;
        let d = settings.require(settings.merge(self.d, "d")?, "d")?;
        let beta = ensure_positive(
            settings.require(settings.merge(self.beta, "beta")?, "beta")?,
            "beta",
        )?;
        let l = ensure_positive(settings.require(settings.merge(self.l, "L")?, "L")?, "L")?;
        Ok((bc, d, beta, l))
    }
}

#[derive(Args)]
struct TracesArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    geometry: GeometryArgs,
    /// Largest cycle length to tabulate.
    #[arg(long)]
    n_max: Option<usize>,
}

#[derive(Args)]
struct PartitionArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    geometry: GeometryArgs,
    /// Particle number.
    #[arg(long = "N")]
    n: Option<usize>,
}

#[derive(Args)]
struct FreeEnergyArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Spatial dimension.
    #[arg(long)]
    d: Option<u32>,
    /// Inverse temperature.
    #[arg(long)]
    beta: Option<f64>,
    /// Smallest density on the grid.
    #[arg(long)]
    rho_min: Option<f64>,
    /// Largest density on the grid.
    #[arg(long)]
    rho_max: Option<f64>,
    /// Number of grid points.
    #[arg(long)]
    points: Option<usize>,
}

#[derive(Args)]
struct RdmProfileArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    geometry: GeometryArgs,
    /// Particle number.
    #[arg(long = "N")]
    n: Option<usize>,
    /// Number of radii between 0 and 0.49 L.
    #[arg(long)]
    points: Option<usize>,
}

#[derive(Args)]
struct OdlroSweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Boundary condition: dirichlet, neumann, periodic, or free.
    #[arg(long)]
    bc: Option<String>,
    /// Spatial dimension (needs d >= 3).
    #[arg(long)]
    d: Option<u32>,
    /// Inverse temperature.
    #[arg(long)]
    beta: Option<f64>,
    /// Particle density; the box side follows as (N/rho)^(1/d).
    #[arg(long)]
    rho: Option<f64>,
    /// Comma-separated strictly increasing particle numbers.
    #[arg(long)]
    ns: Option<String>,
    /// Nystrom grid points per axis (free bc only).
    #[arg(long)]
    grid: Option<usize>,
    /// Number of off-diagonal profile radii.
    #[arg(long)]
    profile_points: Option<usize>,
}

#[derive(Args)]
struct SampleLoopsArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    geometry: GeometryArgs,
    /// Particle number.
    #[arg(long = "N")]
    n: Option<usize>,
    /// Number of configurations to draw.
    #[arg(long)]
    samples: Option<usize>,
    /// RNG seed (mandatory; there is no wall-clock default).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PdTestArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Boundary condition: dirichlet, neumann, or periodic.
    #[arg(long)]
    bc: Option<String>,
    /// Spatial dimension (needs d >= 3).
    #[arg(long)]
    d: Option<u32>,
    /// Inverse temperature.
    #[arg(long)]
    beta: Option<f64>,
    /// Supercritical particle density.
    #[arg(long)]
    rho: Option<f64>,
    /// Comma-separated strictly increasing particle numbers.
    #[arg(long)]
    ns: Option<String>,
    /// Configurations per size.
    #[arg(long)]
    samples: Option<usize>,
    /// Bootstrap resamples for the KS-decrease confidence.
    #[arg(long)]
    bootstrap: Option<usize>,
    /// RNG seed (mandatory; there is no wall-clock default).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct LcltArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Spatial dimension of the step distribution (needs d >= 3).
    #[arg(long)]
    d: Option<u32>,
    /// Number of steps.
    #[arg(long)]
    n: Option<usize>,
    /// Comma-separated offsets k from the walk center a*n.
    #[arg(long)]
    ks: Option<String>,
    /// Window constant c: checked values v satisfy c*n <= v <= n/c.
    #[arg(long)]
    window_c: Option<f64>,
}

#[derive(Args)]
struct DickmanArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Evaluation point x >= 0.
    #[arg(long)]
    x: Option<f64>,
}

#[derive(Args)]
struct CltTiltedArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    geometry: GeometryArgs,
    /// Chemical potential (mu <= 0).
    #[arg(long)]
    mu: Option<f64>,
    /// Largest cycle length kept in the tilted rates.
    #[arg(long)]
    n_max: Option<usize>,
    /// Number of particle-number samples.
    #[arg(long)]
    samples: Option<usize>,
    /// Sandwich constant C for the flat-window check.
    #[arg(long)]
    sandwich_c: Option<f64>,
    /// RNG seed (mandatory; there is no wall-clock default).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct FreeCellsArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Spatial dimension (needs d >= 3).
    #[arg(long)]
    d: Option<u32>,
    /// Inverse temperature.
    #[arg(long)]
    beta: Option<f64>,
    /// Number of unit cells.
    #[arg(long)]
    volume_cells: Option<usize>,
    /// Number of total-count samples.
    #[arg(long)]
    samples: Option<usize>,
    /// Lower edge of the tail-fit window in w - rho_c.
    #[arg(long)]
    window_lo: Option<f64>,
    /// Upper edge of the tail-fit window in w - rho_c.
    #[arg(long)]
    window_hi: Option<f64>,
    /// Number of logarithmic tail bins.
    #[arg(long)]
    bins: Option<usize>,
    /// RNG seed (mandatory; there is no wall-clock default).
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message);
            ExitCode::from(err.code)
        }
    }
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Traces(args) => run_traces(args),
        Command::Partition(args) => run_partition(args),
        Command::FreeEnergy(args) => run_free_energy(args),
        Command::RdmProfile(args) => run_rdm_profile(args),
        Command::OdlroSweep(args) => run_odlro_sweep(args),
        Command::SampleLoops(args) => run_sample_loops(args),
        Command::PdTest(args) => run_pd_test(args),
        Command::Lclt(args) => run_lclt(args),
        Command::Dickman(args) => run_dickman(args),
        Command::CltTilted(args) => run_clt_tilted(args),
        Command::FreeCells(args) => run_free_cells(args),
    }
}

fn epoch_seconds() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn out_writer(path: Option<&PathBuf>) -> CliResult<Box<dyn Write>> {
    match path {
        Some(p) => {
            let file = std::fs::File::create(p).map_err(|e| {
                CliError::runtime(format!("cannot create output file {}: {e}", p.display()))
            })?;
            Ok(Box::new(std::io::BufWriter::new(file)))
        }
        None => Ok(Box::new(std::io::stdout().lock())),
    }
}

/// Runs the invariant suite backing a subcommand, printing one line per
/// check and failing with a nonzero exit when any check fails.
fn run_selftest(suite: &str) -> CliResult<()> {
    let results = bosegas::selftest::run_suite(suite)
        .map_err(|e| CliError::runtime(e.to_string()))?;
    let mut failed = 0usize;
    for r in &results {
        let tag = if r.passed { "[ok]  " } else { "[FAIL]" };
        println!("{tag} {}/{}: {}", r.suite, r.name, r.detail);
        if !r.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        Err(CliError::runtime(format!(
            "selftest: {failed} of {} checks failed in suite '{suite}'",
            results.len()
        )))
    } else {
        println!("selftest: all {} checks passed in suite '{suite}'", results.len());
        Ok(())
    }
}

fn run_traces(args: TracesArgs) -> CliResult<()> {
    if args.common.selftest {
        return run_selftest("spectral");
    }
    let settings = Settings::new(
        args.common.config.as_deref(),
        &["bc", "d", "beta", "L", "n_max"],
    )?;
    let (bc, d, beta, l) = args.geometry.resolve(&settings)?;
    let n_max = settings.require(settings.merge(args.n_max, "n_max")?, "n_max")?;
    let geom = Geometry::new(bc, d, l)?;
    let traces = TraceTable::build(geom, beta, n_max)?;
    let mut w = out_writer(args.common.out.as_ref())?;
    traces.write_to(&mut w)?;
    Ok(())
}

fn run_partition(args: PartitionArgs) -> CliResult<()> {
    if args.common.selftest {
        return run_selftest("ensemble");
    }
    let settings = Settings::new(
        args.common.config.as_deref(),
        &["bc", "d", "beta", "L", "N"],
    )?;
    let (bc, d, beta, l) = args.geometry.resolve(&settings)?;
    let n = settings.require(settings.merge(args.n, "N")?, "N")?;
    let geom = Geometry::new(bc, d, l)?;
    let traces = TraceTable::build(geom, beta, n)?;
    let table = PartitionTable::build(&traces, n)?;
    let z = table.log_z(n)?.exp();
    let mut w = out_writer(args.common.out.as_ref())?;
    writeln!(w, "{z}")?;
    Ok(())
}

#[derive(Serialize)]
struct FreeEnergyRow {
    rho: f64,
    mu: f64,
    free_energy: f64,
}

fn run_free_energy(args: FreeEnergyArgs) -> CliResult<()> {
    if args.common.selftest {
        return run_selftest("ensemble");
    }
    let settings = Settings::new(
        args.common.config.as_deref(),
        &["d", "beta", "rho_min", "rho_max", "points"],
    )?;
    let d = settings.require(settings.merge(args.d, "d")?, "d")?;
    let beta = ensure_positive(
        settings.require(settings.merge(args.beta, "beta")?, "beta")?,
        "beta",
    )?;
    let rho_min = ensure_positive(
        settings.require(settings.merge(args.rho_min, "rho_min")?, "rho_min")?,
        "rho_min",
    )?;
    let rho_max = ensure_positive(
        settings.require(settings.merge(args.rho_max, "rho_max")?, "rho_max")?,
        "rho_max",
    )?;
    if rho_max <= rho_min {
        return Err(CliError::config(format!(
            "'rho_max' ({rho_max}) must exceed 'rho_min' ({rho_min})"
        )));
    }
    let points = settings.merge(args.points, "points")?.unwrap_or(64);
    if points < 2 {
        return Err(CliError::config("'points' must be at least 2"));
    }
    let rows: Vec<FreeEnergyRow> = (0..points)
        .map(|i| {
            let rho = rho_min + (rho_max - rho_min) * i as f64 / (points - 1) as f64;
            let mu = chemical_potential(rho, beta, d)?;
            let f = free_energy(rho, beta, d)?;
            Ok(FreeEnergyRow { rho, mu, free_energy: f })
        })
        .collect::<CliResult<_>>()?;
    let w = out_writer(args.common.out.as_ref())?;
    write_csv_records(w, &rows)?;
    Ok(())
}

fn run_rdm_profile(args: RdmProfileArgs) -> CliResult<()> {
    if args.common.selftest {
        return run_selftest("rdm");
    }
    let settings = Settings::new(
        args.common.config.as_deref(),
        &["bc", "d", "beta", "L", "N", "points"],
    )?;
    let (bc, d, beta, l) = args.geometry.resolve(&settings)?;
    let n = settings.require(settings.merge(args.n, "N")?, "N")?;
    let points = settings.merge(args.points, "points")?.unwrap_or(48);
    let geom = Geometry::new(bc, d, l)?;
    let traces = TraceTable::build(geom, beta, n)?;
    let table = PartitionTable::build(&traces, n)?;
    let kernel = RdmKernel::new(&table, n)?;
    let profile = kernel.profile(points)?;
    let w = out_writer(args.common.out.as_ref())?;
    write_csv_pairs(w, ("r", "gamma"), &profile)?;
    Ok(())
}

fn run_odlro_sweep(args: OdlroSweepArgs) -> CliResult<()> {
    if args.common.selftest {
        return run_selftest("rdm");
    }
    let settings = Settings::new(
        args.common.config.as_deref(),
        &["bc", "d", "beta", "rho", "ns", "grid", "profile_points"],
    )?;
    let bc = settings.require(settings.bc(args.bc.as_deref(), "bc")?, "bc")?;
    let d = settings.require(settings.merge(args.d, "d")?, "d")?;
    let beta = ensure_positive(
        settings.require(settings.merge(args.beta, "beta")?, "beta")?,
        "beta",
    )?;
    let rho = ensure_positive(
        settings.require(settings.merge(args.rho, "rho")?, "rho")?,
        "rho",
    )?;
    let ns: Vec<usize> =
        settings.require(settings.list(args.ns.as_deref(), "ns")?, "ns")?;
    ensure_increasing(&ns, "ns")?;
    let grid = settings.merge(args.grid, "grid")?.unwrap_or(8);
    let profile_points = settings.merge(args.profile_points, "profile_points")?.unwrap_or(40);

    let report = odlro_sweep(bc, d, beta, rho, &ns, grid, profile_points)?;
    let mut doc = JsonLinesReport::new("odlro-sweep", 0, epoch_seconds());
    for row in &report.rows {
        doc.push_value(&json!({
            "n": row.n,
            "l": row.l,
            "sigma": row.sigma.sigma,
            "sigma_per_volume": row.sigma_per_volume,
            "rayleigh_lower_bound": row.sigma.rayleigh_lower_bound,
            "rel_err_vs_excess": row.rel_err_vs_excess,
            "exp_fit_slope": row.exp_fit.map(|f| f.slope),
            "exp_fit_r_squared": row.exp_fit.map(|f| f.r_squared),
        }));
    }
    doc.push_value(&json!({
        "verdict": report.verdict.as_str(),
        "regime": match report.regime {
            bosegas::rdm::Regime::Supercritical => "supercritical",
            bosegas::rdm::Regime::Subcritical => "subcritical",
        },
        "rho": report.rho,
        "rho_c": report.rho_c,
        "band_spread": report.band_spread,
        "rel_errs_decreasing": report.rel_errs_decreasing,
    }));
    let w = out_writer(args.common.out.as_ref())?;
    doc.write_to(w)?;
    Ok(())
}

fn run_sample_loops(args: SampleLoopsArgs) -> CliResult<()> {
    if args.common.selftest {
        return run_selftest("loops");
    }
    let settings = Settings::new(
        args.common.config.as_deref(),
        &["bc", "d", "beta", "L", "N", "samples", "seed"],
    )?;
    let (bc, d, beta, l) = args.geometry.resolve(&settings)?;
    let n = settings.require(settings.merge(args.n, "N")?, "N")?;
    let samples = settings.require(settings.merge(args.samples, "samples")?, "samples")?;
    if samples == 0 {
        return Err(CliError::config("'samples' must be positive"));
    }
    let seed = settings.require(settings.merge(args.seed, "seed")?, "seed")?;

    let geom = Geometry::new(bc, d, l)?;
    let traces = TraceTable::build(geom, beta, n)?;
    let table = PartitionTable::build(&traces, n)?;
    let thresholds = LoopThresholds::new(n, l, d).ok();
    let mut rng = stream_rng(seed, 0);
    let mut loop_counts = Vec::with_capacity(samples);
    let mut largest = Vec::with_capacity(samples);
    let mut long_fraction = Vec::with_capacity(samples);
    for _ in 0..samples {
        let config = sample_conditioned(&table, n, &mut rng)?;
        loop_counts.push(config.loop_count() as f64);
        largest.push(*config.ordered_lengths().first().unwrap_or(&0) as f64);
        if let Some(t) = &thresholds {
            let (_, long) = short_long_split(&config, t);
            long_fraction.push(long as f64 / n as f64);
        }
    }

    let mut doc = JsonLinesReport::new("sample-loops", seed, epoch_seconds());
    let push_stat = |doc: &mut JsonLinesReport, stat: &str, values: &[f64]| {
        let (mean, stderr) = bosegas::numerics::mean_and_stderr(values);
        doc.push_value(&json!({
            "stat": stat,
            "value": mean,
            "stderr": stderr,
            "samples": values.len(),
            "n": n,
        }));
    };
    push_stat(&mut doc, "mean_loop_count", &loop_counts);
    push_stat(&mut doc, "mean_largest_loop", &largest);
    if let Some(t) = &thresholds {
        push_stat(&mut doc, "long_mass_fraction", &long_fraction);
        doc.push_value(&json!({
            "stat": "short_loop_threshold",
            "value": t.t_n,
            "n": n,
        }));
    }
    let w = out_writer(args.common.out.as_ref())?;
    doc.write_to(w)?;
    Ok(())
}

fn run_pd_test(args: PdTestArgs) -> CliResult<()> {
    if args.common.selftest {
        return run_selftest("asymptotics");
    }
    let settings = Settings::new(
        args.common.config.as_deref(),
        &["bc", "d", "beta", "rho", "ns", "samples", "bootstrap", "seed"],
    )?;
    let bc = settings.require(settings.bc(args.bc.as_deref(), "bc")?, "bc")?;
    let d = settings.require(settings.merge(args.d, "d")?, "d")?;
    let beta = ensure_positive(
        settings.require(settings.merge(args.beta, "beta")?, "beta")?,
        "beta",
    )?;
    let rho = ensure_positive(
        settings.require(settings.merge(args.rho, "rho")?, "rho")?,
        "rho",
    )?;
    let ns: Vec<usize> =
        settings.require(settings.list(args.ns.as_deref(), "ns")?, "ns")?;
    ensure_increasing(&ns, "ns")?;
    let samples = settings.require(settings.merge(args.samples, "samples")?, "samples")?;
    let bootstrap = settings.merge(args.bootstrap, "bootstrap")?.unwrap_or(400);
    let seed = settings.require(settings.merge(args.seed, "seed")?, "seed")?;

    let dickman = DickmanDensity::build(12.0)?;
    let params = PdParams { bc, d, beta, rho, samples, bootstrap };
    let report = pd_convergence_test(&params, &ns, &dickman, seed)?;
    let mut doc = JsonLinesReport::new("pd-test", seed, epoch_seconds());
    for row in &report.rows {
        doc.push_value(&json!({
            "n": row.n,
            "l": row.l,
            "ks": row.ks,
            "mean_long_density": row.mean_long_density,
            "stderr_long_density": row.stderr_long_density,
        }));
    }
    doc.push_value(&json!({
        "rho_minus_rho_c": report.rho_minus_rho_c,
        "ks_diff_p5": report.ks_diff_p5,
        "ks_decreasing_95": report.ks_decreasing_95,
    }));
    let w = out_writer(args.common.out.as_ref())?;
    doc.write_to(w)?;
    Ok(())
}

fn run_lclt(args: LcltArgs) -> CliResult<()> {
    if args.common.selftest {
        return run_selftest("asymptotics");
    }
    let settings = Settings::new(
        args.common.config.as_deref(),
        &["d", "n", "ks", "window_c"],
    )?;
    let d = settings.require(settings.merge(args.d, "d")?, "d")?;
    let n = settings.require(settings.merge(args.n, "n")?, "n")?;
    let ks: Vec<i64> = settings.require(settings.list(args.ks.as_deref(), "ks")?, "ks")?;
    let window_c = settings.merge(args.window_c, "window_c")?.unwrap_or(0.2);

    let model = ParetoWalkModel::new(d)?;
    let report = pareto_lclt_check(&model, n, &ks, window_c)?;
    let mut doc = JsonLinesReport::new("lclt", 0, epoch_seconds());
    for row in &report.rows {
        doc.push_value(&json!({
            "k": row.k,
            "value": row.value,
            "exact_pmf": row.exact_pmf,
            "predicted_pmf": row.predicted_pmf,
            "ratio": row.ratio,
            "in_window": row.in_window,
        }));
    }
    doc.push_value(&json!({
        "n": report.n,
        "cap": report.cap,
        "deficit": report.deficit,
        "worst_in_window_error": report.worst_in_window_error,
    }));
    let w = out_writer(args.common.out.as_ref())?;
    doc.write_to(w)?;
    Ok(())
}

fn run_dickman(args: DickmanArgs) -> CliResult<()> {
    if args.common.selftest {
        return run_selftest("asymptotics");
    }
    let settings = Settings::new(args.common.config.as_deref(), &["x"])?;
    let x = settings.require(settings.merge(args.x, "x")?, "x")?;
    if x.is_nan() || x < 0.0 {
        return Err(CliError::config(format!("'x' must be nonnegative, got {x}")));
    }
    let x_max = x.ceil().max(2.0);
    let dickman = DickmanDensity::build(x_max)?;
    let value = dickman.eval(x)?;
    let mut w = out_writer(args.common.out.as_ref())?;
    writeln!(w, "{value}")?;
    Ok(())
}

fn run_clt_tilted(args: CltTiltedArgs) -> CliResult<()> {
    if args.common.selftest {
        return run_selftest("ensemble");
    }
    let settings = Settings::new(
        args.common.config.as_deref(),
        &["bc", "d", "beta", "L", "mu", "n_max", "samples", "sandwich_c", "seed"],
    )?;
    let (bc, d, beta, l) = args.geometry.resolve(&settings)?;
    let mu = settings.require(settings.merge(args.mu, "mu")?, "mu")?;
    let n_max = settings.merge(args.n_max, "n_max")?.unwrap_or(1024);
    let samples = settings.require(settings.merge(args.samples, "samples")?, "samples")?;
    let sandwich_c = settings.merge(args.sandwich_c, "sandwich_c")?.unwrap_or(40.0);
    let seed = settings.require(settings.merge(args.seed, "seed")?, "seed")?;

    let geom = Geometry::new(bc, d, l)?;
    let ens = TiltedEnsemble::new(geom, beta, mu, n_max)?;
    let report = ens.local_clt_check(samples, sandwich_c, seed);
    let mut doc = JsonLinesReport::new("clt-tilted", seed, epoch_seconds());
    doc.push_value(&json!({
        "samples": report.samples,
        "theoretical_mean": report.theoretical_mean,
        "empirical_mean": report.empirical_mean,
        "theoretical_variance": report.theoretical_variance,
        "empirical_variance": report.empirical_variance,
        "sup_distance": report.sup_distance,
        "sup_bound_frac": 0.15 / geom.volume().sqrt(),
        "sandwich_c": report.sandwich_c,
        "sandwich_ok": report.sandwich_ok,
        "window_min_scaled": report.window_min_scaled,
        "window_max_scaled": report.window_max_scaled,
    }));
    let w = out_writer(args.common.out.as_ref())?;
    doc.write_to(w)?;
    Ok(())
}

fn run_free_cells(args: FreeCellsArgs) -> CliResult<()> {
    if args.common.selftest {
        return run_selftest("asymptotics");
    }
    let settings = Settings::new(
        args.common.config.as_deref(),
        &["d", "beta", "volume_cells", "samples", "window_lo", "window_hi", "bins", "seed"],
    )?;
    let d = settings.require(settings.merge(args.d, "d")?, "d")?;
    let beta = ensure_positive(
        settings.require(settings.merge(args.beta, "beta")?, "beta")?,
        "beta",
    )?;
    let volume_cells =
        settings.require(settings.merge(args.volume_cells, "volume_cells")?, "volume_cells")?;
    let samples = settings.require(settings.merge(args.samples, "samples")?, "samples")?;
    let window_lo = settings.merge(args.window_lo, "window_lo")?.unwrap_or(0.1);
    let window_hi = settings.merge(args.window_hi, "window_hi")?.unwrap_or(1.2);
    let bins = settings.merge(args.bins, "bins")?.unwrap_or(16);
    let seed = settings.require(settings.merge(args.seed, "seed")?, "seed")?;

    let params = FreeCellParams {
        d,
        beta,
        volume_cells,
        samples,
        window: (window_lo, window_hi),
        bins,
    };
    let report = free_bc_cell_counts(&params, seed)?;
    let mut doc = JsonLinesReport::new("free-cells", seed, epoch_seconds());
    doc.push_value(&json!({
        "rho_c": report.rho_c,
        "p_free": report.p_free,
        "marks_per_cell": report.marks_per_cell,
        "marks_stderr": report.marks_stderr,
        "empirical_cell_mean": report.empirical_cell_mean,
        "cell_mean_reference": report.cell_mean_reference,
        "cell_mean_stderr": report.cell_mean_stderr,
        "mark_cap": report.mark_cap,
        "slope": report.slope,
        "slope_reference": report.slope_reference,
        "r_squared": report.r_squared,
        "fit_points": report.fit_points,
    }));
    let w = out_writer(args.common.out.as_ref())?;
    doc.write_to(w)?;
    Ok(())
}
