//! Generators for synthetic workloads: single-client microbenchmarks and the
//! pipeline, reduce and broadcast workflow patterns, plus a BLAST-shaped
//! broadcast-and-gather trace.
//!
//! In `Dss` mode every file follows the system-wide configuration. In `Wass` mode
//! inputs are staged on the host of the task reading them and generated files carry
//! placement and replication overrides suited to the pattern.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::WorkloadError;
use crate::storage::{Placement, StorageConfig};
use crate::workload::{FileDecl, FileOverrides, GroupDecl, GroupTarget, OpKind, TaskSpec, TraceOp, Workload};

pub const MB: u64 = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    MicroWrite,
    MicroRead,
    Pipeline,
    Reduce,
    Broadcast,
    Blast,
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pattern::MicroWrite => "micro_write",
            Pattern::MicroRead => "micro_read",
            Pattern::Pipeline => "pipeline",
            Pattern::Reduce => "reduce",
            Pattern::Broadcast => "broadcast",
            Pattern::Blast => "blast",
        })
    }
}

impl FromStr for Pattern {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "micro_write" => Pattern::MicroWrite,
            "micro_read" => Pattern::MicroRead,
            "pipeline" => Pattern::Pipeline,
            "reduce" => Pattern::Reduce,
            "broadcast" => Pattern::Broadcast,
            "blast" => Pattern::Blast,
            _ => return Err(format!("unknown pattern {s:?}")),
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Default storage configuration for every file.
    #[default]
    Dss,
    /// Pattern-specific placement and replication.
    Wass,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "dss" => Ok(Mode::Dss),
            "wass" => Ok(Mode::Wass),
            _ => Err(format!("unknown mode {s:?} (expected dss or wass)")),
        }
    }
}

/// Shape and sizes of a generated workload. Sizes are multiplied by `scale`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternSpec {
    pub pattern: Pattern,
    pub mode: Mode,
    /// Parallel branches (pipelines, producers or consumers).
    pub width: u32,
    /// Stages per pipeline.
    pub stages: u32,
    /// Workload input read by each first-stage task (BLAST: per-node query).
    pub input_size: u64,
    /// Files passed between tasks (micro: the benchmark file; BLAST: the database).
    pub intermediate_size: u64,
    /// Final outputs.
    pub output_size: u64,
    pub scale: u64,
    /// Replication of the broadcast file.
    pub replication: u32,
    /// Microbenchmark repetitions, one file each.
    pub repetitions: u32,
    /// Host of branch 0; branch `i` runs on `first_host + i`.
    pub first_host: u32,
    /// Granularity of database scans in the BLAST-like trace.
    pub read_size: u64,
}

impl PatternSpec {
    /// Defaults: 19 branches, 3 pipeline stages, 100 MB files. The BLAST-like trace
    /// uses a 1.7 GB database, 5.6 KB queries and 82 KB outputs.
    pub fn new(pattern: Pattern) -> PatternSpec {
        let base = PatternSpec {
            pattern,
            mode: Mode::Dss,
            width: 19,
            stages: 3,
            input_size: 100 * MB,
            intermediate_size: 100 * MB,
            output_size: 100 * MB,
            scale: 1,
            replication: 1,
            repetitions: 1,
            first_host: 1,
            read_size: 50_000,
        };
        match pattern {
            Pattern::MicroWrite | Pattern::MicroRead => PatternSpec { width: 1, ..base },
            Pattern::Blast => PatternSpec {
                input_size: 5_600,
                intermediate_size: 1_700 * MB,
                output_size: 82_000,
                ..base
            },
            _ => base,
        }
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    fn size(&self, bytes: u64) -> u64 {
        bytes * self.scale
    }

    fn host(&self, branch: u32) -> u32 {
        self.first_host + branch
    }

    fn wass(&self) -> bool {
        self.mode == Mode::Wass
    }

    fn check(&self) -> Result<(), WorkloadError> {
        let bad = |m: &str| Err(WorkloadError::Invalid(m.to_string()));
        if self.width == 0 {
            return bad("width must be at least 1");
        }
        if self.stages == 0 {
            return bad("stages must be at least 1");
        }
        if self.scale == 0 {
            return bad("scale must be at least 1");
        }
        if self.replication == 0 {
            return bad("replication must be at least 1");
        }
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1");
        }
        if self.read_size == 0 {
            return bad("read_size must be positive");
        }
        Ok(())
    }
}

#[derive(Default)]
struct Builder {
    w: Workload,
}

impl Builder {
    fn input(&mut self, name: &str, size: u64, at: Option<u32>) {
        self.w.files.push(FileDecl {
            name: name.into(),
            size: Some(size),
            overrides: FileOverrides::default(),
            at,
        });
    }

    fn file(&mut self, name: &str, overrides: FileOverrides) {
        self.w.files.push(FileDecl {
            name: name.into(),
            size: None,
            overrides,
            at: None,
        });
    }

    fn task(&mut self, id: String, pin: Option<u32>) -> &mut TaskSpec {
        self.w.tasks.push(TaskSpec {
            id,
            pin,
            ops: Vec::new(),
        });
        self.w.tasks.last_mut().expect("just pushed")
    }
}

fn session(t: &mut TaskSpec, client: u32, kind: OpKind, file: &str, size: u64) {
    t.ops.push(TraceOp::new(0, client, OpKind::Open, file, 0, 0));
    t.ops.push(TraceOp::new(0, client, kind, file, 0, size));
    t.ops.push(TraceOp::new(0, client, OpKind::Close, file, 0, 0));
}

/// Sequential reads of the whole file in `chunk`-sized pieces.
fn scan(t: &mut TaskSpec, client: u32, file: &str, size: u64, chunk: u64) {
    t.ops.push(TraceOp::new(0, client, OpKind::Open, file, 0, 0));
    let mut off = 0;
    while off < size {
        let n = chunk.min(size - off);
        t.ops.push(TraceOp::new(0, client, OpKind::Read, file, off, n));
        off += n;
    }
    t.ops.push(TraceOp::new(0, client, OpKind::Close, file, 0, 0));
}

fn local() -> FileOverrides {
    FileOverrides {
        placement: Some(Placement::Local),
        ..FileOverrides::default()
    }
}

/// Single-client write or read of `repetitions` files. Reads are preceded by a setup
/// task that writes the files.
pub fn gen_micro(spec: &PatternSpec) -> Result<String, WorkloadError> {
    Ok(micro(spec)?.to_text())
}

fn micro(spec: &PatternSpec) -> Result<Workload, WorkloadError> {
    spec.check()?;
    let size = spec.size(spec.intermediate_size);
    let names: Vec<String> = (0..spec.repetitions).map(|k| format!("micro_{k}")).collect();
    let mut b = Builder::default();
    for n in &names {
        b.file(n, FileOverrides::default());
    }
    let kind = match spec.pattern {
        Pattern::MicroWrite => OpKind::Write,
        Pattern::MicroRead => {
            let setup = b.task("setup".into(), None);
            for n in &names {
                session(setup, 0, OpKind::Write, n, size);
            }
            OpKind::Read
        }
        p => return Err(WorkloadError::Invalid(format!("{p} is not a microbenchmark"))),
    };
    let t = b.task("micro".into(), None);
    for n in &names {
        session(t, 0, kind, n, size);
    }
    Ok(b.w)
}

/// `width` independent pipelines of `stages` tasks; stage `k` of branch `i` reads
/// `p{i}_f{k-1}` and writes `p{i}_f{k}`.
pub fn gen_pipeline(spec: &PatternSpec) -> Result<String, WorkloadError> {
    Ok(pipeline(spec)?.to_text())
}

fn pipeline(spec: &PatternSpec) -> Result<Workload, WorkloadError> {
    spec.check()?;
    let mut b = Builder::default();
    for i in 0..spec.width {
        let host = spec.host(i);
        b.input(
            &format!("p{i}_f0"),
            spec.size(spec.input_size),
            spec.wass().then_some(host),
        );
        for k in 1..=spec.stages {
            let o = if spec.wass() { local() } else { FileOverrides::default() };
            b.file(&format!("p{i}_f{k}"), o);
        }
    }
    for i in 0..spec.width {
        for k in 1..=spec.stages {
            let read = if k == 1 {
                spec.input_size
            } else {
                spec.intermediate_size
            };
            let write = if k == spec.stages {
                spec.output_size
            } else {
                spec.intermediate_size
            };
            let t = b.task(format!("p{i}_s{k}"), Some(spec.host(i)));
            session(t, i, OpKind::Read, &format!("p{i}_f{}", k - 1), spec.size(read));
            session(t, i, OpKind::Write, &format!("p{i}_f{k}"), spec.size(write));
        }
    }
    Ok(b.w)
}

/// `width` producers each turning an input into an intermediate file, then one
/// reduce task on `first_host` reading every intermediate.
pub fn gen_reduce(spec: &PatternSpec) -> Result<String, WorkloadError> {
    Ok(reduce(spec)?.to_text())
}

fn reduce(spec: &PatternSpec) -> Result<Workload, WorkloadError> {
    spec.check()?;
    let mut b = Builder::default();
    let gather = FileOverrides {
        placement: Some(Placement::CoLocate("gather".into())),
        ..FileOverrides::default()
    };
    for i in 0..spec.width {
        b.input(
            &format!("r{i}_in"),
            spec.size(spec.input_size),
            spec.wass().then_some(spec.host(i)),
        );
        b.file(
            &format!("r{i}_mid"),
            if spec.wass() {
                gather.clone()
            } else {
                FileOverrides::default()
            },
        );
    }
    b.file(
        "reduce_out",
        if spec.wass() { local() } else { FileOverrides::default() },
    );
    if spec.wass() {
        b.w.groups.push(GroupDecl {
            name: "gather".into(),
            target: GroupTarget::Consumer("reduce".into()),
        });
    }
    for i in 0..spec.width {
        let t = b.task(format!("r{i}"), Some(spec.host(i)));
        session(t, i, OpKind::Read, &format!("r{i}_in"), spec.size(spec.input_size));
        session(
            t,
            i,
            OpKind::Write,
            &format!("r{i}_mid"),
            spec.size(spec.intermediate_size),
        );
    }
    let t = b.task("reduce".into(), Some(spec.first_host));
    for i in 0..spec.width {
        session(
            t,
            0,
            OpKind::Read,
            &format!("r{i}_mid"),
            spec.size(spec.intermediate_size),
        );
    }
    session(t, 0, OpKind::Write, "reduce_out", spec.size(spec.output_size));
    Ok(b.w)
}

/// One producer writes a file that `width` consumers on different hosts read. The
/// broadcast file is written with `replication` copies.
pub fn gen_broadcast(spec: &PatternSpec) -> Result<String, WorkloadError> {
    Ok(broadcast(spec)?.to_text())
}

fn broadcast(spec: &PatternSpec) -> Result<Workload, WorkloadError> {
    spec.check()?;
    let mut b = Builder::default();
    b.input(
        "bcast_in",
        spec.size(spec.input_size),
        spec.wass().then_some(spec.first_host),
    );
    b.file(
        "bcast",
        FileOverrides {
            replication_level: Some(spec.replication),
            ..FileOverrides::default()
        },
    );
    for i in 0..spec.width {
        b.file(
            &format!("c{i}_out"),
            if spec.wass() { local() } else { FileOverrides::default() },
        );
    }
    let t = b.task("producer".into(), Some(spec.first_host));
    session(t, 0, OpKind::Read, "bcast_in", spec.size(spec.input_size));
    session(t, 0, OpKind::Write, "bcast", spec.size(spec.intermediate_size));
    for i in 0..spec.width {
        let t = b.task(format!("c{i}"), Some(spec.host(i)));
        session(t, i, OpKind::Read, "bcast", spec.size(spec.intermediate_size));
        session(t, i, OpKind::Write, &format!("c{i}_out"), spec.size(spec.output_size));
    }
    Ok(b.w)
}

/// BLAST-shaped trace: a database is written once with `replication` copies, each of
/// `width` search tasks reads its query, scans the whole database in `read_size`
/// pieces and writes a result, and a gather task collects the results.
pub fn gen_blast(spec: &PatternSpec) -> Result<String, WorkloadError> {
    Ok(blast(spec)?.to_text())
}

fn blast(spec: &PatternSpec) -> Result<Workload, WorkloadError> {
    spec.check()?;
    let db_size = spec.size(spec.intermediate_size);
    let mut b = Builder::default();
    b.file(
        "db",
        FileOverrides {
            replication_level: Some(spec.replication),
            ..FileOverrides::default()
        },
    );
    for i in 0..spec.width {
        b.input(
            &format!("query_{i}"),
            spec.size(spec.input_size),
            spec.wass().then_some(spec.host(i)),
        );
        b.file(
            &format!("hits_{i}"),
            if spec.wass() { local() } else { FileOverrides::default() },
        );
    }
    b.file("result", FileOverrides::default());

    let t = b.task("format_db".into(), Some(spec.first_host));
    session(t, 0, OpKind::Write, "db", db_size);
    for i in 0..spec.width {
        let t = b.task(format!("search_{i}"), Some(spec.host(i)));
        session(t, i, OpKind::Read, &format!("query_{i}"), spec.size(spec.input_size));
        scan(t, i, "db", db_size, spec.read_size);
        session(t, i, OpKind::Write, &format!("hits_{i}"), spec.size(spec.output_size));
    }
    let t = b.task("gather".into(), Some(spec.first_host));
    for i in 0..spec.width {
        session(t, 0, OpKind::Read, &format!("hits_{i}"), spec.size(spec.output_size));
    }
    session(
        t,
        0,
        OpKind::Write,
        "result",
        spec.size(spec.output_size) * spec.width as u64,
    );
    Ok(b.w)
}

/// Build the workload for any pattern.
pub fn generate(spec: &PatternSpec) -> Result<Workload, WorkloadError> {
    match spec.pattern {
        Pattern::MicroWrite | Pattern::MicroRead => micro(spec),
        Pattern::Pipeline => pipeline(spec),
        Pattern::Reduce => reduce(spec),
        Pattern::Broadcast => broadcast(spec),
        Pattern::Blast => blast(spec),
    }
}

/// One configuration per (stripe width, replication level) pair, labelled
/// `s{stripe}_r{repl}`, in stripe-major order.
pub fn sweep_configs(base: &StorageConfig, stripes: &[u32], replications: &[u32]) -> Vec<(String, StorageConfig)> {
    stripes
        .iter()
        .flat_map(|&s| {
            replications.iter().map(move |&r| {
                (
                    format!("s{s}_r{r}"),
                    StorageConfig {
                        stripe_width: s,
                        replication_level: r,
                        ..base.clone()
                    },
                )
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::parse_workload;
    use proptest::prelude::*;

    fn parsed(text: &str) -> (Workload, crate::workload::TaskGraph) {
        parse_workload(text).unwrap()
    }

    #[test]
    fn micro_write_is_one_session() {
        let (w, _) = parsed(&gen_micro(&PatternSpec::new(Pattern::MicroWrite)).unwrap());
        assert_eq!(w.tasks.len(), 1);
        let kinds: Vec<OpKind> = w.tasks[0].ops.iter().map(|o| o.kind).collect();
        assert_eq!(kinds, vec![OpKind::Open, OpKind::Write, OpKind::Close]);
        assert_eq!(w.tasks[0].ops[1].size, 100 * MB);
    }

    #[test]
    fn micro_read_writes_its_file_first() {
        let (w, g) = parsed(&gen_micro(&PatternSpec::new(Pattern::MicroRead)).unwrap());
        assert_eq!(w.tasks[0].id, "setup");
        assert_eq!(g.edges(), vec![("setup".to_string(), "micro".to_string())]);
    }

    #[test]
    fn sweep_has_25_configs() {
        let all = sweep_configs(&StorageConfig::default(), &[1, 2, 3, 4, 5], &[1, 2, 3, 4, 5]);
        assert_eq!(all.len(), 25);
        assert_eq!(all[6].0, "s2_r2");
        assert!(all.iter().all(|(_, c)| c.validate().is_ok()));
    }

    #[test]
    fn pipeline_counts() {
        let (w, g) = parsed(&gen_pipeline(&PatternSpec::new(Pattern::Pipeline)).unwrap());
        assert_eq!(w.tasks.len(), 57);
        assert_eq!(w.files.len(), 19 * 4);
        assert_eq!(g.stage_count(), 3);
        let one = PatternSpec {
            width: 1,
            stages: 1,
            ..PatternSpec::new(Pattern::Pipeline)
        };
        let (w, _) = parsed(&gen_pipeline(&one).unwrap());
        assert_eq!(w.tasks.len(), 1);
        assert_eq!(w.tasks[0].ops.len(), 6);
    }

    #[test]
    fn wass_pipeline_keeps_intermediates_local() {
        let spec = PatternSpec::new(Pattern::Pipeline).with_mode(Mode::Wass);
        let (w, _) = parsed(&gen_pipeline(&spec).unwrap());
        let f = w.file("p3_f2").unwrap();
        assert_eq!(f.overrides.placement, Some(Placement::Local));
        assert_eq!(w.file("p3_f0").unwrap().at, Some(4));
    }

    #[test]
    fn reduce_shape() {
        let (w, g) = parsed(&gen_reduce(&PatternSpec::new(Pattern::Reduce)).unwrap());
        assert_eq!(w.tasks.len(), 20);
        let r = g.task_index("reduce").unwrap();
        assert_eq!(g.tasks[r].deps.len(), 19);
        let spec = PatternSpec::new(Pattern::Reduce).with_mode(Mode::Wass);
        let (w, _) = parsed(&gen_reduce(&spec).unwrap());
        assert_eq!(w.groups[0].target, GroupTarget::Consumer("reduce".into()));
        assert_eq!(
            w.file("r7_mid").unwrap().overrides.placement,
            Some(Placement::CoLocate("gather".into()))
        );
        let one = PatternSpec {
            width: 1,
            ..PatternSpec::new(Pattern::Reduce)
        };
        let (w, g) = parsed(&gen_reduce(&one).unwrap());
        assert_eq!(w.tasks.len(), 2);
        assert_eq!(g.stage_count(), 2);
    }

    #[test]
    fn broadcast_sets_replication() {
        let spec = PatternSpec {
            replication: 4,
            ..PatternSpec::new(Pattern::Broadcast)
        };
        let (w, g) = parsed(&gen_broadcast(&spec).unwrap());
        assert_eq!(w.file("bcast").unwrap().overrides.replication_level, Some(4));
        assert_eq!(w.tasks.len(), 20);
        assert_eq!(g.tasks[0].dependents.len(), 19);
    }

    #[test]
    fn blast_op_volume() {
        let (w, g) = parsed(&gen_blast(&PatternSpec::new(Pattern::Blast)).unwrap());
        // 34 000 database reads per search task plus a few sessions.
        assert!(w.op_count() >= 550_000, "{}", w.op_count());
        assert_eq!(w.op_count(), 3 + 19 * (3 + 34_002 + 3) + 19 * 3 + 3);
        assert_eq!(g.stage_count(), 3);
    }

    #[test]
    fn scale_multiplies_sizes() {
        let spec = PatternSpec {
            scale: 10,
            ..PatternSpec::new(Pattern::MicroWrite)
        };
        let (w, _) = parsed(&gen_micro(&spec).unwrap());
        assert_eq!(w.tasks[0].ops[1].size, 1_000 * MB);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let spec = PatternSpec {
            width: 0,
            ..PatternSpec::new(Pattern::Reduce)
        };
        assert!(gen_reduce(&spec).is_err());
        assert!(gen_micro(&PatternSpec::new(Pattern::Pipeline)).is_err());
    }

    proptest! {
        #[test]
        fn generated_workloads_parse_and_round_trip(
            pattern in prop::sample::select(vec![
                Pattern::MicroWrite, Pattern::MicroRead, Pattern::Pipeline, Pattern::Reduce, Pattern::Broadcast,
            ]),
            wass in any::<bool>(),
            width in 1u32..24,
            stages in 1u32..5,
            scale in 1u64..4,
        ) {
            let spec = PatternSpec {
                width,
                stages,
                scale,
                mode: if wass { Mode::Wass } else { Mode::Dss },
                ..PatternSpec::new(pattern)
            };
            let w = generate(&spec).unwrap();
            let text = w.to_text();
            let (back, g) = parse_workload(&text).unwrap();
            prop_assert_eq!(&back, &w);
            prop_assert_eq!(back.to_text(), text);
            if pattern == Pattern::Pipeline {
                prop_assert_eq!(g.len() as u32, width * stages);
                prop_assert_eq!(w.files.len() as u32, width * (stages + 1));
            }
        }
    }
}
