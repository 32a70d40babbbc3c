//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line; the
//! process exits nonzero if any of them fails.

use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

use storsim_core::report::{compare, OpRecord};
use storsim_core::storage::Placement;
use storsim_core::synthgen::{generate, sweep_configs, Mode, Pattern, PatternSpec};
use storsim_core::sysid::{ci_check, derive_profile, student_t_quantile, CalibrationOp, MeasurementSet};
use storsim_core::units::Rate;
use storsim_core::workload::OpKind;
use storsim_core::{drive, DriveOptions, PlatformProfile, RunReport, StorageConfig, TaskGraph, Workload};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(budget: Duration, start: Instant) -> Result<(), String> {
    let spent = start.elapsed();
    ensure(spent <= budget, || format!("took {spent:.2?}, budget {budget:?}"))
}

fn testbed_profile() -> PlatformProfile {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/testbed_measurements.toml");
    let m = MeasurementSet::from_toml(&std::fs::read_to_string(path).unwrap()).unwrap();
    derive_profile(&m).unwrap()
}

/// Manager, one storage node and one client on three separate hosts.
fn trio() -> StorageConfig {
    StorageConfig {
        n_hosts: 3,
        n_storage_nodes: 1,
        n_clients: 1,
        collocated: false,
        chunk_size: 1_000_000,
        stripe_width: 1,
        replication_level: 1,
        placement: Placement::RoundRobin,
    }
}

fn run(w: &Workload, cfg: &StorageConfig, p: &PlatformProfile) -> Result<RunReport, String> {
    let g = TaskGraph::build(w).map_err(|e| e.to_string())?;
    drive(w, &g, cfg, p, &DriveOptions::default()).map_err(|e| e.to_string())
}

fn run_text(text: &str, cfg: &StorageConfig, p: &PlatformProfile) -> Result<RunReport, String> {
    run(&Workload::parse(text).map_err(|e| e.to_string())?, cfg, p)
}

fn single(kind: &str, file: &str, size: u64) -> String {
    format!("task t_{kind}\n0,0,open,{file},0,0\n0,0,{kind},{file},0,{size}\n0,0,close,{file},0,0\n")
}

fn the_op(r: &RunReport, kind: OpKind) -> &OpRecord {
    r.records.iter().find(|x| x.kind == kind).expect("op present")
}

fn message_law() -> Check {
    let start = Instant::now();
    let p = testbed_profile();
    for r in 1..=5u64 {
        let cfg = StorageConfig {
            replication_level: r as u32,
            ..StorageConfig::default()
        };
        let rep = run_text(
            &format!("[files]\nf -\n[tasks]\n{}", single("write", "f", 100_000_000)),
            &cfg,
            &p,
        )?;
        let w = the_op(&rep, OpKind::Write);
        let got = (w.manager_requests, w.chunk_requests, w.replica_forwards);
        ensure(got == (2, 100, 100 * (r - 1)), || format!("r={r}: got {got:?}"))?;
    }
    within(Duration::from_secs(1), start)?;
    Ok("r=1..5: 2 manager, 100 chunk, 100(r-1) forward requests".into())
}

/// Analytic durations on the trio: frame transmissions at the remote rate, one
/// core latency per message, storage time per byte and manager time per request.
struct Analytic {
    p: PlatformProfile,
    chunk: u64,
}

impl Analytic {
    fn ceil(rate: Rate, units: u64) -> u64 {
        let n = units as u128 * rate.numer() as u128;
        let d = rate.denom() as u128;
        n.div_ceil(d) as u64
    }

    /// Per-frame transmission times of a message carrying `payload` bytes.
    fn frame_times(&self, payload: u64) -> Vec<u64> {
        let wire = payload.max(self.p.control_message_size);
        let mut left = wire;
        let mut out = Vec::new();
        loop {
            let b = left.min(self.p.frame_size);
            out.push(Self::ceil(self.p.mu_net_remote, b));
            left -= b;
            if left == 0 {
                break;
            }
        }
        out
    }

    fn message(&self, payload: u64) -> u64 {
        self.p.core_latency + self.frame_times(payload).iter().sum::<u64>()
    }

    fn pieces(&self, size: u64) -> Vec<u64> {
        let mut out = Vec::new();
        let mut left = size;
        while left > 0 {
            out.push(left.min(self.chunk));
            left -= left.min(self.chunk);
        }
        out
    }

    fn manager_round(&self) -> u64 {
        2 * self.message(0) + Self::ceil(self.p.mu_manager, 1)
    }

    /// Chunk sends are back to back on the client link; each store waits for its
    /// data and for the previous store; each ack waits for its store and the
    /// previous ack on the storage node's outgoing link.
    fn write(&self, size: u64) -> u64 {
        let t0 = Self::ceil(self.p.mu_client, 1) + self.manager_round();
        let lat = self.p.core_latency;
        let ack: u64 = self.frame_times(0).iter().sum();
        let mut send_end = t0;
        let mut store_end = 0;
        let mut ack_link_free = 0;
        let mut done = t0;
        for b in self.pieces(size) {
            send_end += self.frame_times(b).iter().sum::<u64>();
            store_end = store_end.max(send_end + lat) + Self::ceil(self.p.mu_storage, b);
            ack_link_free = ack_link_free.max(store_end) + ack;
            done = ack_link_free + lat;
        }
        done + self.manager_round()
    }

    fn read(&self, size: u64) -> u64 {
        let mut t = Self::ceil(self.p.mu_client, 1) + self.manager_round();
        for b in self.pieces(size) {
            t += self.message(0) + Self::ceil(self.p.mu_storage, b) + self.message(b);
        }
        t
    }
}

fn closed_form() -> Check {
    let start = Instant::now();
    let cfg = trio();
    let profiles = [
        testbed_profile(),
        PlatformProfile {
            mu_net_remote: Rate::new(8, 3).unwrap(),
            mu_net_loopback: Rate::new(1, 5).unwrap(),
            core_latency: 7_777,
            mu_storage: Rate::new(7, 4).unwrap(),
            mu_manager: Rate::from_int(123_457),
            mu_client: Rate::from_int(3_001),
            frame_size: 9_000,
            control_message_size: 200,
            ..PlatformProfile::default()
        },
    ];
    let mut cases = 0;
    for p in &profiles {
        let oracle = Analytic {
            p: p.clone(),
            chunk: cfg.chunk_size,
        };
        for size in [0, 1, 65_536, 999_999, 1_000_000, 1_000_001, 3_333_333, 10_000_000] {
            let text = format!(
                "[files]\nf -\n[tasks]\n{}{}",
                single("write", "f", size),
                single("read", "f", size)
            );
            let rep = run_text(&text, &cfg, p)?;
            let w = the_op(&rep, OpKind::Write).duration_ns();
            let r = the_op(&rep, OpKind::Read).duration_ns();
            let (ew, er) = (oracle.write(size), oracle.read(size));
            ensure(w.abs_diff(ew) <= 1 && r.abs_diff(er) <= 1, || {
                format!("size {size}: write {w} vs {ew}, read {r} vs {er}")
            })?;
            cases += 1;
        }
    }
    within(Duration::from_secs(1), start)?;
    Ok(format!("{cases} write/read sizes match the analytic sum"))
}

fn sysid_closure() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut checked = 0;
    while checked < 12 {
        let op = if checked % 2 == 0 {
            CalibrationOp::Write
        } else {
            CalibrationOp::Read
        };
        let chunk = rng.gen_range(1..=8) * 250_000;
        let mut m = MeasurementSet {
            remote_throughput_bps: [1e9, 2e9, 1e10][rng.gen_range(0..3)],
            loopback_throughput_bps: 2e10,
            chunk_size_bytes: chunk,
            full_op_ns: Vec::new(),
            zero_size_ns: Vec::new(),
            frame_size: Some([65_536, 9_000, 1_500][rng.gen_range(0..3)]),
            control_message_size: Some(rng.gen_range(0..2_048)),
            core_latency: Some(rng.gen_range(0..50_000)),
            calibration_op: op,
        };
        // Integer means, with the manager share divisible by its visit count.
        let zero_mean = rng.gen_range(200_000u64..2_000_000);
        let full_mean = zero_mean + chunk * 8 * 8 + rng.gen_range(100_000u64..5_000_000);
        m.zero_size_ns = vec![(zero_mean - 1_000) as f64, (zero_mean + 1_000) as f64];
        m.full_op_ns = vec![(full_mean - 5_000) as f64, full_mean as f64, (full_mean + 5_000) as f64];
        let p = match derive_profile(&m) {
            Ok(p) => p,
            Err(_) => continue,
        };
        let (kind, visits) = match op {
            CalibrationOp::Write => ("write", 2),
            CalibrationOp::Read => ("read", 1),
        };
        if p.mu_manager.time_for(1) * visits != p.mu_manager.time_for(visits) {
            continue;
        }
        let cfg = StorageConfig {
            chunk_size: chunk,
            ..trio()
        };
        let mut text = String::from("[files]\nfull -\nzero -\n[tasks]\n");
        if op == CalibrationOp::Read {
            text.push_str(&single("write", "full", chunk).replace("t_write", "setup_full"));
            text.push_str(&single("write", "zero", 0).replace("t_write", "setup_zero"));
        }
        // One benchmark task, so the two operations never overlap.
        text.push_str(&single(kind, "full", chunk).replace(&format!("t_{kind}"), "bench"));
        text.push_str(
            &single(kind, "zero", 0)
                .lines()
                .skip(1)
                .map(|l| format!("{l}\n"))
                .collect::<String>(),
        );
        let rep = run_text(&text, &cfg, &p)?;
        let dur = |file: &str| {
            rep.records
                .iter()
                .find(|r| r.task == "bench" && r.file == file && r.kind != OpKind::Open && r.kind != OpKind::Close)
                .map(|r| r.duration_ns())
                .unwrap()
        };
        ensure(dur("full") == full_mean, || {
            format!("{kind} full-op: simulated {} vs measured mean {full_mean}", dur("full"))
        })?;
        ensure(dur("zero") == zero_mean, || {
            format!("{kind} zero-op: simulated {} vs measured mean {zero_mean}", dur("zero"))
        })?;
        checked += 1;
    }
    within(Duration::from_secs(1), start)?;
    Ok(format!("{checked} random measurement sets reproduced exactly"))
}

fn sweep_25() -> Check {
    let start = Instant::now();
    let p = testbed_profile();
    let w = generate(&PatternSpec {
        intermediate_size: 100_000_000,
        ..PatternSpec::new(Pattern::MicroWrite)
    })
    .map_err(|e| e.to_string())?;
    let configs = sweep_configs(&StorageConfig::default(), &[1, 2, 3, 4, 5], &[1, 2, 3, 4, 5]);
    let mut rows = Vec::new();
    let mut write_ns = std::collections::BTreeMap::new();
    for (label, cfg) in &configs {
        let rep = run(&w, cfg, &p)?;
        write_ns.insert(
            (cfg.stripe_width, cfg.replication_level),
            the_op(&rep, OpKind::Write).duration_ns(),
        );
        rows.push((label.clone(), rep.makespan_ns));
    }
    let ranking = compare(&rows, storsim_core::report::DEFAULT_EQUIVALENCE_BAND);
    let mut csv = Vec::new();
    ranking.write_csv(&mut csv).map_err(|e| e.to_string())?;
    let lines = String::from_utf8(csv).unwrap().lines().count() - 1;
    ensure(lines == 25, || format!("{lines} rows"))?;
    for s in 1..=5 {
        for r in 2..=5 {
            let (a, b) = (write_ns[&(s, r - 1)], write_ns[&(s, r)]);
            ensure(a <= b, || {
                format!("stripe {s}: repl {} {a} ns > repl {r} {b} ns", r - 1)
            })?;
        }
    }
    within(Duration::from_secs(30), start)?;
    Ok("25 rows, write time non-decreasing in replication for stripes 1..5".into())
}

fn pipeline_wass_vs_dss() -> Check {
    let start = Instant::now();
    let p = testbed_profile();
    let cfg = StorageConfig::default();
    let dss = run(&generate(&PatternSpec::new(Pattern::Pipeline)).unwrap(), &cfg, &p)?;
    let spec = PatternSpec::new(Pattern::Pipeline).with_mode(Mode::Wass);
    let wass = run(&generate(&spec).unwrap(), &cfg, &p)?;
    let is_intermediate = |f: &str| (1..spec.stages).any(|k| f.ends_with(&format!("_f{k}")));
    let remote: u64 = wass
        .records
        .iter()
        .filter(|r| is_intermediate(&r.file))
        .map(|r| r.data_bytes_remote)
        .sum();
    let touched = wass
        .records
        .iter()
        .filter(|r| is_intermediate(&r.file) && r.size > 0)
        .count();
    ensure(touched == (2 * 19 * (spec.stages - 1)) as usize, || {
        format!("{touched} intermediate transfers")
    })?;
    ensure(remote == 0, || format!("{remote} remote intermediate bytes"))?;
    ensure(wass.makespan_ns < dss.makespan_ns, || {
        format!("WASS {} ns not below DSS {} ns", wass.makespan_ns, dss.makespan_ns)
    })?;
    within(Duration::from_secs(60), start)?;
    Ok(format!(
        "0 remote intermediate bytes; makespan WASS {:.3} s < DSS {:.3} s",
        wass.makespan_ns as f64 / 1e9,
        dss.makespan_ns as f64 / 1e9
    ))
}

fn reduce_wass_ranks_above() -> Check {
    let start = Instant::now();
    let p = testbed_profile();
    let cfg = StorageConfig::default();
    let dss = run(&generate(&PatternSpec::new(Pattern::Reduce)).unwrap(), &cfg, &p)?;
    let wass = run(
        &generate(&PatternSpec::new(Pattern::Reduce).with_mode(Mode::Wass)).unwrap(),
        &cfg,
        &p,
    )?;
    ensure(wass.stages.len() == 2, || format!("{} stages", wass.stages.len()))?;
    let reduce_reads = |r: &RunReport| -> (usize, u64) {
        let ops: Vec<_> = r
            .records
            .iter()
            .filter(|x| x.task == "reduce" && x.kind == OpKind::Read)
            .collect();
        (ops.len(), ops.iter().map(|x| x.data_bytes_remote).sum())
    };
    let (n, remote) = reduce_reads(&wass);
    ensure(n == 19, || format!("{n} reduce-stage reads"))?;
    ensure(remote == 0, || {
        format!("{remote} remote bytes read in the reduce stage")
    })?;
    let ranking = compare(
        &[
            ("dss".to_string(), dss.makespan_ns),
            ("wass".to_string(), wass.makespan_ns),
        ],
        storsim_core::report::DEFAULT_EQUIVALENCE_BAND,
    );
    ensure(
        ranking.labels() == ["wass", "dss"] && !ranking.equivalent("wass", "dss"),
        || format!("ranking {:?}", ranking.entries),
    )?;
    within(Duration::from_secs(60), start)?;
    Ok(format!(
        "0 remote reduce-stage read bytes; WASS {:.3} s ranks above DSS {:.3} s",
        wass.makespan_ns as f64 / 1e9,
        dss.makespan_ns as f64 / 1e9
    ))
}

fn peak_rss_kib() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    line.split_whitespace().nth(1)?.parse().ok()
}

fn blast_scale() -> Check {
    let start = Instant::now();
    let p = testbed_profile();
    let w = generate(&PatternSpec::new(Pattern::Blast).with_mode(Mode::Wass)).map_err(|e| e.to_string())?;
    let ops = w.op_count();
    ensure(ops >= 550_000, || format!("only {ops} operations"))?;
    let a = run(&w, &StorageConfig::default(), &p)?;
    let first = start.elapsed();
    let b = run(&w, &StorageConfig::default(), &p)?;
    let (mut ca, mut cb) = (Vec::new(), Vec::new());
    a.write_records_csv(&mut ca).map_err(|e| e.to_string())?;
    b.write_records_csv(&mut cb).map_err(|e| e.to_string())?;
    ensure(a.to_json() == b.to_json() && ca == cb, || "repeated runs differ".into())?;
    ensure(a.records.len() == ops, || {
        format!("{} records for {ops} ops", a.records.len())
    })?;
    ensure(first <= Duration::from_secs(300), || format!("took {first:.2?}"))?;
    let mem = peak_rss_kib()
        .map(|k| format!("{:.0} MiB", k as f64 / 1024.0))
        .unwrap_or_else(|| "n/a".into());
    Ok(format!(
        "{ops} ops in {:.2} s (simulated makespan {:.1} s), {} events, peak RSS {mem}",
        first.as_secs_f64(),
        a.makespan_ns as f64 / 1e9,
        a.event_count
    ))
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = testbed_profile();
    let mut cases = Vec::new();
    for pattern in [
        Pattern::MicroRead,
        Pattern::Pipeline,
        Pattern::Reduce,
        Pattern::Broadcast,
    ] {
        for mode in [Mode::Dss, Mode::Wass] {
            let spec = PatternSpec {
                replication: 3,
                scale: 1,
                intermediate_size: 30_000_000,
                ..PatternSpec::new(pattern).with_mode(mode)
            };
            cases.push((format!("{pattern}_{mode:?}"), generate(&spec).unwrap(), 1u32));
        }
    }
    let bcast = generate(&PatternSpec::new(Pattern::Broadcast)).unwrap();
    cases.push(("broadcast_r3".into(), bcast, 3));
    for (name, w, repl) in &cases {
        let cfg = StorageConfig {
            replication_level: *repl,
            stripe_width: 4,
            ..StorageConfig::default()
        };
        let mut files = Vec::new();
        for attempt in 0..2 {
            let stem = dir.path().join(format!("{name}_{attempt}"));
            run(w, &cfg, &p)?.write_files(&stem).map_err(|e| e.to_string())?;
            files.push([
                std::fs::read(stem.with_extension("json")).unwrap(),
                std::fs::read(stem.with_extension("ops.csv")).unwrap(),
            ]);
        }
        ensure(files[0] == files[1], || format!("{name}: report files differ"))?;
    }
    Ok(format!(
        "{} workloads, report files byte-identical on rerun",
        cases.len()
    ))
}

fn ci_agreement() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut sufficient, mut insufficient) = (0, 0);
    for set in 0..20 {
        let n = rng.gen_range(2..60);
        let mean = rng.gen_range(1e5..1e7);
        let spread = mean * rng.gen_range(0.005..0.3);
        let xs: Vec<f64> = (0..n).map(|_| mean + rng.gen_range(-spread..spread)).collect();
        let ours = ci_check(&xs, 0.95, 0.05);

        let m = xs.iter().sum::<f64>() / n as f64;
        let sd = (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64).sqrt();
        let t_ref = StudentsT::new(0.0, 1.0, (n - 1) as f64).unwrap().inverse_cdf(0.975);
        let t_ours = student_t_quantile(0.975, (n - 1) as f64);
        ensure((t_ours - t_ref).abs() <= 1e-6, || {
            format!("set {set}: t {t_ours} vs {t_ref}")
        })?;
        let expected = t_ref * sd / (n as f64).sqrt() / m <= 0.05;
        ensure(ours.sufficient == expected, || {
            format!("set {set} (n={n}): sufficiency disagrees")
        })?;
        if expected {
            sufficient += 1;
        } else {
            insufficient += 1;
        }
    }
    ensure(sufficient > 0 && insufficient > 0, || {
        "sets do not exercise both outcomes".into()
    })?;
    Ok(format!("20 sets agree ({sufficient} sufficient, {insufficient} not)"))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("message-count law", message_law),
        ("contention-free closed form", closed_form),
        ("calibration round trip", sysid_closure),
        ("25-configuration sweep", sweep_25),
        ("pipeline WASS vs DSS", pipeline_wass_vs_dss),
        ("reduce WASS ranking", reduce_wass_ranks_above),
        ("BLAST-like scale and speed", blast_scale),
        ("determinism", determinism),
        ("confidence-interval check", ci_agreement),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
