//! `gaitcont`: scan equilibria for singular gaits, trace gait families,
//! run homotopy queries, and export or audit the resulting archives.
//!
//! Exit codes: 0 success, 1 input or I/O error (including a failed audit),
//! 2 scan without singular gaits, 3 query failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;

use gaitcont::archive::{FamilyArchive, QueryRecord, ScanRecord};
use gaitcont::continuation::{multi_dim, FamilyOptions, IndicatorStatus, ScanReport};
use gaitcont::export;
use gaitcont::homotopy::{solve_query, GaitQuery, HomotopyPath};
use gaitcont::models::{ModelConfig, ModelKind};
use gaitcont::{build_family, scan_singular, Error, HybridModel, RobotState};

const EXIT_INPUT: u8 = 1;
const EXIT_EMPTY_SCAN: u8 = 2;
const EXIT_QUERY: u8 = 3;

#[derive(Parser)]
#[command(
    name = "gaitcont",
    version,
    about = "Continuation of periodic walking gaits from equilibria"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ModelArgs {
    /// Model configuration (TOML). Defaults to the passive compass gait.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args)]
struct ScanArgs {
    /// Step-duration window `a,b` searched for singular equilibrium gaits.
    #[arg(long, value_parser = parse_interval, default_value = "0.1,1")]
    interval: (f64, f64),
    /// Number of uniform sub-intervals of the window.
    #[arg(long, default_value_t = 100)]
    steps: usize,
    /// Index into the model's list of equilibria.
    #[arg(long, default_value_t = 0)]
    equilibrium: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the indicator over a window and report singular equilibrium gaits.
    Scan {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        scan: ScanArgs,
        /// Write the scan (samples, classification, seeds) as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Trace both branches from every singular equilibrium gait.
    Trace {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        scan: ScanArgs,
        /// Gaits per branch (including the seed).
        #[arg(long, default_value_t = 250)]
        count: usize,
        /// Arclength step; both signs are traced.
        #[arg(long, default_value_t = 0.05, allow_negative_numbers = true)]
        step_size: f64,
        /// Trace only this seed.
        #[arg(long)]
        seed_index: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Multi-dimensional continuation from one seed: constant-control curves,
    /// then constant-time curves in each control parameter.
    Surface {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        scan: ScanArgs,
        /// Manifold dimension to cover (at most k + 1).
        #[arg(long, default_value_t = 2)]
        depth: usize,
        /// Gaits per curve at every level.
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value_t = 0.05, allow_negative_numbers = true)]
        step_size: f64,
        #[arg(long, default_value_t = 0)]
        seed_index: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Move from an archived gait to one satisfying a query file.
    Query {
        /// Model to solve with. Defaults to the archive's model; extra
        /// control parameters start at zero.
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        archive: PathBuf,
        #[arg(long)]
        query: PathBuf,
        /// Branch of the reference gait.
        #[arg(long, default_value_t = 0)]
        branch: usize,
        /// Index of the reference gait on its branch.
        #[arg(long)]
        index: usize,
        /// Where to write the updated archive (defaults to `--archive`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a CSV table, an SVG diagram, or animation frames.
    Export {
        #[arg(long)]
        archive: PathBuf,
        #[arg(long, value_enum)]
        format: Format,
        #[arg(long)]
        out: PathBuf,
        /// `branch:index` of a gait to animate (repeatable; default all).
        #[arg(long = "gait", value_parser = parse_gait_ref)]
        gaits: Vec<(usize, usize)>,
    },
    /// Recompute the periodicity residual of every archived gait.
    Audit {
        #[arg(long)]
        archive: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Svg,
    Frames,
}

fn parse_interval(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected `a,b`")?;
    let a: f64 = a.trim().parse().map_err(|e| format!("{e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("{e}"))?;
    if !(a > 0.0 && b > a) {
        return Err("need 0 < a < b".into());
    }
    Ok((a, b))
}

fn parse_gait_ref(s: &str) -> Result<(usize, usize), String> {
    let (b, i) = s.split_once(':').ok_or("expected `branch:index`")?;
    Ok((
        b.trim().parse().map_err(|e| format!("{e}"))?,
        i.trim().parse().map_err(|e| format!("{e}"))?,
    ))
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            code: EXIT_INPUT,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Scan { model, scan, out } => cmd_scan(&model, &scan, out.as_deref()),
        Command::Trace {
            model,
            scan,
            count,
            step_size,
            seed_index,
            out,
        } => cmd_trace(&model, &scan, count, step_size, seed_index, &out),
        Command::Surface {
            model,
            scan,
            depth,
            count,
            step_size,
            seed_index,
            out,
        } => cmd_surface(&model, &scan, depth, count, step_size, seed_index, &out),
        Command::Query {
            model,
            archive,
            query,
            branch,
            index,
            out,
        } => cmd_query(&model, &archive, &query, (branch, index), out.as_deref()),
        Command::Export {
            archive,
            format,
            out,
            gaits,
        } => cmd_export(&archive, format, &out, &gaits),
        Command::Audit { archive } => cmd_audit(&archive),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load_model(args: &ModelArgs) -> Result<(ModelConfig, Box<dyn HybridModel>), Failure> {
    let cfg = match &args.model {
        Some(path) => ModelConfig::load(path)?,
        None => ModelConfig::new(ModelKind::Compass),
    };
    let model = cfg.build()?;
    Ok((cfg, model))
}

fn equilibrium(model: &dyn HybridModel, index: usize) -> Result<RobotState, Failure> {
    let eqs = model.equilibria();
    eqs.get(index).cloned().ok_or_else(|| Failure {
        code: EXIT_INPUT,
        message: format!("equilibrium {index} out of range ({} available)", eqs.len()),
    })
}

fn print_scan(scan: &ScanReport) {
    println!("indicator samples: {}", scan.samples.len());
    println!("max |I|: {:e}", scan.max_abs_indicator());
    println!(
        "classification: {}",
        match scan.status {
            IndicatorStatus::Crossings => "crossings",
            IndicatorStatus::NoCrossing => "no-crossing",
            IndicatorStatus::ConstantZero => "constant-zero",
        }
    );
    for (i, root) in scan.roots.iter().enumerate() {
        let fmt = |v: &DVector<f64>| {
            v.iter()
                .map(|x| format!("{x:+.4}"))
                .collect::<Vec<_>>()
                .join(", ")
        };
        println!(
            "seed {i}: tau = {:.6}  I = {:+.3e}  null dim = {}  switchable = {}",
            root.point.tau, root.indicator, root.null_dim, root.switchable
        );
        println!("  tangent (pre-impact):  [{}]", fmt(&root.tangent));
        println!(
            "  tangent (post-impact): [{}]",
            fmt(&root.post_impact_tangent)
        );
    }
    if scan.status != IndicatorStatus::Crossings {
        println!("remediation: {}", scan.status.remediation());
    }
}

fn empty_scan_code(scan: &ScanReport) -> u8 {
    if scan.roots.is_empty() {
        EXIT_EMPTY_SCAN
    } else {
        0
    }
}

fn cmd_scan(model_args: &ModelArgs, args: &ScanArgs, out: Option<&Path>) -> CmdResult {
    let (_, model) = load_model(model_args)?;
    let x_eq = equilibrium(model.as_ref(), args.equilibrium)?;
    let mu = DVector::zeros(model.dims().k);
    let scan = scan_singular(model.as_ref(), &x_eq, &mu, args.interval, args.steps)?;
    print_scan(&scan);
    if let Some(path) = out {
        let record = ScanRecord::new(model.as_ref(), &scan, args.interval, args.steps);
        let text =
            serde_json::to_string_pretty(&record).map_err(|e| Error::Format(e.to_string()))?;
        write_file(path, &(text + "\n"))?;
    }
    Ok(empty_scan_code(&scan))
}

fn print_summary(archive: &FamilyArchive) {
    println!(
        "{:>6} {:>4} {:>4} {:>5} {:>6} {:>24} {:>22} {:>20}",
        "branch",
        "seed",
        "lvl",
        "dir",
        "gaits",
        "slope range (rad)",
        "slope range (deg)",
        "tau range (s)"
    );
    for (i, b) in archive.branches.iter().enumerate() {
        let range = |f: &dyn Fn(&gaitcont::archive::GaitRecord) -> Option<f64>| {
            b.gaits
                .iter()
                .filter_map(f)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(v), hi.max(v))
                })
        };
        let (s0, s1) = range(&|g| g.slope);
        let (t0, t1) = range(&|g| Some(g.tau));
        println!(
            "{i:>6} {:>4} {:>4} {:>+5} {:>6} {:>11.5},{:>11.5} {:>10.3},{:>10.3} {:>9.4},{:>9.4}{}",
            b.seed_index,
            b.level,
            b.direction,
            b.gaits.len(),
            s0,
            s1,
            s0.to_degrees(),
            s1.to_degrees(),
            t0,
            t1,
            if b.complete { "" } else { "  (incomplete)" }
        );
    }
}

fn cmd_trace(
    model_args: &ModelArgs,
    args: &ScanArgs,
    count: usize,
    step_size: f64,
    seed_index: Option<usize>,
    out: &Path,
) -> CmdResult {
    let (cfg, model) = load_model(model_args)?;
    let x_eq = equilibrium(model.as_ref(), args.equilibrium)?;
    let mu = DVector::zeros(model.dims().k);
    let opts = FamilyOptions {
        interval: args.interval,
        scan_steps: args.steps,
        count,
        step_size,
        seed_index,
        ..FamilyOptions::default()
    };
    let family = build_family(model.as_ref(), &x_eq, &mu, &opts)?;
    print_scan(&family.scan);
    let archive =
        FamilyArchive::from_family(&cfg, model.as_ref(), &family, args.interval, args.steps)?;
    archive.save(out)?;
    print_summary(&archive);
    println!("wrote {} gaits to {}", archive.gait_count(), out.display());
    Ok(empty_scan_code(&family.scan))
}

fn cmd_surface(
    model_args: &ModelArgs,
    args: &ScanArgs,
    depth: usize,
    count: usize,
    step_size: f64,
    seed_index: usize,
    out: &Path,
) -> CmdResult {
    let (cfg, model) = load_model(model_args)?;
    let x_eq = equilibrium(model.as_ref(), args.equilibrium)?;
    let mu = DVector::zeros(model.dims().k);
    let scan = scan_singular(model.as_ref(), &x_eq, &mu, args.interval, args.steps)?;
    print_scan(&scan);
    let mut archive = FamilyArchive::new(&cfg, model.as_ref());
    archive.scan = Some(ScanRecord::new(
        model.as_ref(),
        &scan,
        args.interval,
        args.steps,
    ));
    if scan.roots.is_empty() {
        archive.save(out)?;
        return Ok(EXIT_EMPTY_SCAN);
    }
    let seed = scan.roots.get(seed_index).ok_or_else(|| Failure {
        code: EXIT_INPUT,
        message: format!(
            "seed index {seed_index} out of range ({} seeds)",
            scan.roots.len()
        ),
    })?;
    let opts = FamilyOptions::default().curve;
    let branches = multi_dim(model.as_ref(), seed, depth, count, step_size, &opts)?;
    archive.add_branches(model.as_ref(), &branches)?;
    archive.save(out)?;
    print_summary(&archive);
    println!("wrote {} gaits to {}", archive.gait_count(), out.display());
    Ok(0)
}

fn cmd_query(
    model_args: &ModelArgs,
    archive_path: &Path,
    query_path: &Path,
    reference: (usize, usize),
    out: Option<&Path>,
) -> CmdResult {
    let mut archive = FamilyArchive::load(archive_path)?;
    let (cfg, model) = match &model_args.model {
        Some(_) => load_model(model_args)?,
        None => {
            let cfg = archive.model.clone();
            let model = cfg.build()?;
            (cfg, model)
        }
    };
    let text = std::fs::read_to_string(query_path)
        .map_err(|e| Error::Io(format!("{}: {e}", query_path.display())))?;
    let query = GaitQuery::from_toml(&text)?;

    let mut a = archive.gait(reference.0, reference.1)?;
    let k = model.dims().k;
    if a.mu.len() > k {
        return Err(Failure {
            code: EXIT_INPUT,
            message: format!(
                "reference has {} parameters but the model takes {k}",
                a.mu.len()
            ),
        });
    }
    let mut mu = DVector::zeros(k);
    mu.rows_mut(0, a.mu.len()).copy_from(&a.mu);
    a.mu = mu;

    let path = match solve_query(
        model.as_ref(),
        &query.constraints,
        &a,
        &query.options,
        1e-12,
    ) {
        Ok(path) => path,
        Err(e) => {
            return Err(Failure {
                code: EXIT_QUERY,
                message: format!("query failed: {e}"),
            })
        }
    };
    archive
        .queries
        .push(QueryRecord::new(cfg.resolved(), reference, &path));
    archive.save(out.unwrap_or(archive_path))?;
    print_query(model.as_ref(), &path);
    if path.converged() {
        Ok(0)
    } else {
        eprintln!(
            "query failed: {}",
            path.diagnostic
                .as_deref()
                .unwrap_or("no root of the constraints reached")
        );
        Ok(EXIT_QUERY)
    }
}

fn print_query(model: &dyn HybridModel, path: &HomotopyPath) {
    let last = path.last();
    let g = &last.gait;
    println!("status: {:?}", path.status);
    println!("accepted iterates: {}", path.states.len() - 1);
    println!("p = {:e}", last.p);
    if let Some(s) = model.slope(&g.x0) {
        println!("slope = {s:.10} rad ({:.6} deg)", s.to_degrees());
    }
    println!("tau = {:.10}", g.tau);
    println!(
        "mu = [{}]",
        g.mu.iter()
            .map(|v| format!("{v:.10}"))
            .collect::<Vec<_>>()
            .join(", ")
    );
    println!(
        "x0 = [{}]",
        g.x0.to_vector()
            .iter()
            .map(|v| format!("{v:.10}"))
            .collect::<Vec<_>>()
            .join(", ")
    );
    println!("periodicity residual = {:e}", last.residual);
}

fn cmd_export(
    archive_path: &Path,
    format: Format,
    out: &Path,
    gaits: &[(usize, usize)],
) -> CmdResult {
    let archive = FamilyArchive::load(archive_path)?;
    let text = match format {
        Format::Csv => export::to_csv(&archive)?,
        Format::Svg => export::to_svg(&archive)?,
        Format::Frames => {
            let model = archive.model.build()?;
            let anim = export::animation_frames(&archive, model.as_ref(), gaits)?;
            serde_json::to_string(&anim).map_err(|e| Error::Format(e.to_string()))? + "\n"
        }
    };
    write_file(out, &text)?;
    println!("wrote {}", out.display());
    Ok(0)
}

fn cmd_audit(archive_path: &Path) -> CmdResult {
    let archive = FamilyArchive::load(archive_path)?;
    let model = archive.model.build()?;
    let report = archive.audit(model.as_ref())?;
    println!("gaits checked: {}", report.checked);
    println!("max residual: {:e}", report.max_residual);
    println!("max stored/recomputed mismatch: {:e}", report.max_mismatch);
    for f in &report.failures {
        println!(
            "FAILED branch {} gait {}: stored {:e}, recomputed {:e}",
            f.branch, f.index, f.stored, f.recomputed
        );
    }
    if report.passed() {
        println!("audit passed");
        Ok(0)
    } else {
        Err(Failure {
            code: EXIT_INPUT,
            message: format!("audit failed for {} gaits", report.failures.len()),
        })
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())).into())
}
