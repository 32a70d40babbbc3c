use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use storsim_core::report::{compare, RunReport, DEFAULT_EQUIVALENCE_BAND};
use storsim_core::storage::Placement;
use storsim_core::synthgen::{generate, Mode, Pattern, PatternSpec};
use storsim_core::sysid::{ci_check, derive_profile, MeasurementSet};
use storsim_core::units::parse_size;
use storsim_core::workload::driver::DEFAULT_SEED;
use storsim_core::workload::SchedulingPolicy;
use storsim_core::{drive, parse_workload, DriveOptions, Error, PlatformProfile, StorageConfig, TaskGraph, Workload};

#[derive(Parser)]
#[command(
    name = "storsim",
    version,
    about = "Simulate an object-based distributed storage system under workflow I/O"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Derive a platform profile from benchmark measurements.
    Seed(SeedArgs),
    /// Generate a synthetic workload file.
    Gen(GenArgs),
    /// Replay a workload on one configuration.
    Simulate(SimulateArgs),
    /// Simulate every combination of the given axes and rank them.
    Sweep(SweepArgs),
    /// Summarize and rank existing report files.
    Report(ReportArgs),
}

#[derive(Args)]
struct SeedArgs {
    /// Measurement file (TOML).
    measurements: PathBuf,
    /// Where to write the profile; stdout when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Confidence level of the sample-size check.
    #[arg(long, default_value_t = 0.95)]
    confidence: f64,
    /// Target relative half-width of the confidence interval.
    #[arg(long, default_value_t = 0.05)]
    accuracy: f64,
}

#[derive(Args)]
struct GenArgs {
    /// micro_write, micro_read, pipeline, reduce, broadcast or blast.
    pattern: Pattern,
    /// dss (round-robin everywhere) or wass (pattern-specific hints).
    #[arg(long, default_value = "dss")]
    mode: Mode,
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    stages: Option<u32>,
    /// Multiplies every file size.
    #[arg(long)]
    scale: Option<u64>,
    /// Replication hint for broadcast and database files in wass mode.
    #[arg(long)]
    replication: Option<u32>,
    /// Number of files in a microbenchmark.
    #[arg(long)]
    repetitions: Option<u32>,
    /// Size of intermediate files (micro: the benchmark file).
    #[arg(long, value_parser = size_arg)]
    size: Option<u64>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct RunInputs {
    #[arg(long)]
    profile: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    workload: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// locality or static.
    #[arg(long, default_value = "locality")]
    policy: SchedulingPolicy,
    /// Delay between dispatching tasks that become ready together, in ns.
    #[arg(long, default_value_t = 0)]
    stagger_ns: u64,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    inputs: RunInputs,
    /// Output stem; writes <stem>.json and <stem>.ops.csv.
    #[arg(short, long, default_value = "report")]
    output: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    inputs: RunInputs,
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    stripe: Vec<u32>,
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    replication: Vec<u32>,
    #[arg(long, value_delimiter = ',', num_args = 1.., value_parser = size_arg)]
    chunk_size: Vec<u64>,
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    placement: Vec<Placement>,
    /// Directory for per-configuration reports and the ranking tables.
    #[arg(short, long, default_value = "sweep")]
    out_dir: PathBuf,
    /// Relative makespan difference under which configurations tie.
    #[arg(long, default_value_t = DEFAULT_EQUIVALENCE_BAND)]
    band: f64,
}

#[derive(Args)]
struct ReportArgs {
    /// Report files (<stem>.json) written by simulate or sweep.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_EQUIVALENCE_BAND)]
    band: f64,
}

fn size_arg(s: &str) -> Result<u64, String> {
    parse_size(s).map_err(|e| e.to_string())
}

fn read(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        context: format!("reading {}", path.display()),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text).map_err(|source| Error::Io {
        context: format!("writing {}", path.display()),
        source,
    })
}

struct Loaded {
    profile: PlatformProfile,
    config: StorageConfig,
    workload: Workload,
    graph: TaskGraph,
    opts: DriveOptions,
}

fn load(inputs: &RunInputs) -> Result<Loaded> {
    let profile = PlatformProfile::from_toml(&read(&inputs.profile)?)
        .map_err(Error::from)
        .with_context(|| inputs.profile.display().to_string())?;
    let config = StorageConfig::from_toml(&read(&inputs.config)?)
        .map_err(Error::from)
        .with_context(|| inputs.config.display().to_string())?;
    let (workload, graph) = parse_workload(&read(&inputs.workload)?)
        .map_err(Error::from)
        .with_context(|| inputs.workload.display().to_string())?;
    let opts = DriveOptions {
        seed: inputs.seed,
        policy: inputs.policy,
        stagger_ns: inputs.stagger_ns,
        ..DriveOptions::default()
    };
    Ok(Loaded {
        profile,
        config,
        workload,
        graph,
        opts,
    })
}

fn summary(label: &str, r: &RunReport) -> String {
    format!(
        "{label}: makespan {:.6} s, {} ops, {} stages, {} remote bytes, {} events",
        r.makespan_ns as f64 / 1e9,
        r.totals.ops,
        r.stages.len(),
        r.network.bytes_remote,
        r.event_count
    )
}

fn cmd_seed(a: &SeedArgs) -> Result<()> {
    let m = MeasurementSet::from_toml(&read(&a.measurements)?)
        .map_err(Error::from)
        .with_context(|| a.measurements.display().to_string())?;
    for (name, samples) in [("full_op_ns", &m.full_op_ns), ("zero_size_ns", &m.zero_size_ns)] {
        let ci = ci_check(samples, a.confidence, a.accuracy);
        if !ci.sufficient {
            eprintln!(
                "warning: {name}: {} samples give a ±{:.2}% interval at {:.0}% confidence (target ±{:.2}%)",
                ci.n,
                ci.relative_half_width * 100.0,
                a.confidence * 100.0,
                a.accuracy * 100.0
            );
        }
    }
    let profile = derive_profile(&m).map_err(Error::from)?;
    let text = profile.to_toml();
    match &a.output {
        Some(p) => write(p, &text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_gen(a: &GenArgs) -> Result<()> {
    let mut spec = PatternSpec::new(a.pattern).with_mode(a.mode);
    if let Some(v) = a.width {
        spec.width = v;
    }
    if let Some(v) = a.stages {
        spec.stages = v;
    }
    if let Some(v) = a.scale {
        spec.scale = v;
    }
    if let Some(v) = a.replication {
        spec.replication = v;
    }
    if let Some(v) = a.repetitions {
        spec.repetitions = v;
    }
    if let Some(v) = a.size {
        spec.intermediate_size = v;
    }
    let text = generate(&spec).map_err(Error::from)?.to_text();
    match &a.output {
        Some(p) => write(p, &text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let l = load(&a.inputs)?;
    let start = Instant::now();
    let report = drive(&l.workload, &l.graph, &l.config, &l.profile, &l.opts)?;
    report.write_files(&a.output)?;
    println!("{}", summary(&a.output.display().to_string(), &report));
    eprintln!("simulated in {:.3} s", start.elapsed().as_secs_f64());
    Ok(())
}

struct SweepPoint {
    label: String,
    config: StorageConfig,
}

fn sweep_points(base: &StorageConfig, a: &SweepArgs) -> Vec<SweepPoint> {
    let or_base = |v: &Vec<u32>, b: u32| if v.is_empty() { vec![b] } else { v.clone() };
    let stripes = or_base(&a.stripe, base.stripe_width);
    let repls = or_base(&a.replication, base.replication_level);
    let chunks = if a.chunk_size.is_empty() {
        vec![base.chunk_size]
    } else {
        a.chunk_size.clone()
    };
    let placements = if a.placement.is_empty() {
        vec![base.placement.clone()]
    } else {
        a.placement.clone()
    };
    let mut out = Vec::new();
    for &s in &stripes {
        for &r in &repls {
            for &c in &chunks {
                for p in &placements {
                    let mut label = format!("s{s}_r{r}");
                    if !a.chunk_size.is_empty() {
                        label.push_str(&format!("_c{c}"));
                    }
                    if !a.placement.is_empty() {
                        label.push_str(&format!("_{}", p.to_string().replace(':', "-")));
                    }
                    out.push(SweepPoint {
                        label,
                        config: StorageConfig {
                            stripe_width: s,
                            replication_level: r,
                            chunk_size: c,
                            placement: p.clone(),
                            ..base.clone()
                        },
                    });
                }
            }
        }
    }
    out
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let l = load(&a.inputs)?;
    let points = sweep_points(&l.config, a);
    fs::create_dir_all(&a.out_dir).map_err(|source| Error::Io {
        context: format!("creating {}", a.out_dir.display()),
        source,
    })?;
    let results: Vec<Result<RunReport, Error>> = points
        .par_iter()
        .map(|p| {
            p.config.validate()?;
            drive(&l.workload, &l.graph, &p.config, &l.profile, &l.opts)
        })
        .collect();

    let mut ok = Vec::new();
    let mut rows = Vec::new();
    for (i, (p, r)) in points.iter().zip(results).enumerate() {
        match r {
            Ok(report) => {
                report.write_files(&a.out_dir.join(&p.label))?;
                ok.push((p.label.clone(), report.makespan_ns));
                rows.push((i, p, Some(report.makespan_ns), String::new()));
            }
            Err(e) if e.is_input_error() => {
                eprintln!("skipping {}: {e}", p.label);
                rows.push((i, p, None, e.to_string()));
            }
            Err(e) => return Err(e).with_context(|| format!("configuration {}", p.label)),
        }
    }
    let ranking = compare(&ok, a.band);

    let mut csv =
        String::from("index,label,stripe_width,replication_level,chunk_size,placement,status,makespan_ns,rank,note\n");
    for (i, p, makespan, note) in &rows {
        let c = &p.config;
        let (status, ms, rank) = match makespan {
            Some(m) => (
                "ok",
                m.to_string(),
                ranking.entries[ranking.position(&p.label).unwrap()].rank.to_string(),
            ),
            None => ("skipped", String::new(), String::new()),
        };
        csv.push_str(&format!(
            "{i},{},{},{},{},{},{status},{ms},{rank},\"{}\"\n",
            p.label,
            c.stripe_width,
            c.replication_level,
            c.chunk_size,
            c.placement,
            note.replace('"', "'")
        ));
    }
    write(&a.out_dir.join("sweep.csv"), &csv)?;
    let mut buf = Vec::new();
    ranking.write_csv(&mut buf)?;
    write(&a.out_dir.join("ranking.csv"), &String::from_utf8_lossy(&buf))?;

    let mut out = std::io::stdout().lock();
    for e in &ranking.entries {
        let tie = e
            .equivalent_to
            .as_deref()
            .map(|l| format!(" (ties {l})"))
            .unwrap_or_default();
        writeln!(
            out,
            "{:>3}. {:<24} {:.6} s{tie}",
            e.rank,
            e.label,
            e.makespan_ns as f64 / 1e9
        )?;
    }
    let skipped = rows.iter().filter(|r| r.2.is_none()).count();
    if skipped > 0 {
        writeln!(out, "{skipped} configuration(s) skipped")?;
    }
    Ok(())
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    let mut named = Vec::new();
    for path in &a.reports {
        let r = RunReport::from_json(&read(path)?).with_context(|| path.display().to_string())?;
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        println!("{}", summary(&label, &r));
        for s in &r.stages {
            println!(
                "  stage {}: {} tasks, {:.6} s, {} ops, {} remote bytes",
                s.level,
                s.tasks,
                s.duration_ns as f64 / 1e9,
                s.totals.ops,
                s.totals.bytes_remote
            );
        }
        named.push((label, r.makespan_ns));
    }
    if named.len() > 1 {
        println!("ranking:");
        for e in compare(&named, a.band).entries {
            let tie = e.equivalent_to.map(|l| format!(" (ties {l})")).unwrap_or_default();
            println!(
                "{:>3}. {:<24} {:.6} s{tie}",
                e.rank,
                e.label,
                e.makespan_ns as f64 / 1e9
            );
        }
    }
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        Some(core) if !core.is_input_error() => 1,
        Some(_) => 2,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Seed(a) => cmd_seed(a),
        Command::Gen(a) => cmd_gen(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
