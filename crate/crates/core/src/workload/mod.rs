//! Workload descriptions: per-task I/O traces, file declarations with per-file
//! overrides, and co-locate groups.
//!
//! The text format is line oriented. `#` starts a comment. Three sections:
//!
//! ```text
//! [files]
//! # name  size|-  [placement=round_robin|local|co_locate:<group>] [replication=N] [stripe=N] [at=HOST]
//! input_0  100M  at=1
//! mid_*    -     placement=local          # names with * ? [ are glob overrides
//!
//! [groups]
//! # name  host=HOST | consumer=TASK
//! gather  consumer=reduce
//!
//! [tasks]
//! task stage1_0 pin=1
//! # timestamp_ns,client,op,file,offset,size
//! 0,0,open,input_0,0,0
//! 0,0,read,input_0,0,100M
//! 0,0,close,input_0,0,0
//! ```
//!
//! Files that no task writes are workload inputs and must carry a size; they are
//! placed in storage before the run starts (`at=HOST` stages them on that host).
//! Task dependencies are not listed: a task depends on every task that writes one of
//! the files it reads.

pub mod driver;
mod graph;
mod parse;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use graph::{assign_task_node, SchedulingPolicy, TaskGraph, TaskNode};
pub use parse::parse_workload;

use crate::storage::{FilePolicy, Placement, StorageConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Open,
    Read,
    Write,
    Close,
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OpKind::Open => "open",
            OpKind::Read => "read",
            OpKind::Write => "write",
            OpKind::Close => "close",
        })
    }
}

impl FromStr for OpKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "open" => Ok(OpKind::Open),
            "read" => Ok(OpKind::Read),
            "write" => Ok(OpKind::Write),
            "close" => Ok(OpKind::Close),
            _ => Err(format!("unknown operation {s:?}")),
        }
    }
}

/// One traced I/O call.
#[derive(Clone, Debug, Eq)]
pub struct TraceOp {
    /// Offset in ns from the start of the task; the difference to the previous op is
    /// the compute gap before this op is issued.
    pub timestamp: u64,
    pub client: u32,
    pub kind: OpKind,
    pub file: String,
    pub offset: u64,
    pub size: u64,
    /// Source line, 0 when built in code.
    pub line: usize,
}

impl PartialEq for TraceOp {
    fn eq(&self, o: &Self) -> bool {
        (
            self.timestamp,
            self.client,
            self.kind,
            &self.file,
            self.offset,
            self.size,
        ) == (o.timestamp, o.client, o.kind, &o.file, o.offset, o.size)
    }
}

impl TraceOp {
    pub fn new(timestamp: u64, client: u32, kind: OpKind, file: impl Into<String>, offset: u64, size: u64) -> Self {
        TraceOp {
            timestamp,
            client,
            kind,
            file: file.into(),
            offset,
            size,
            line: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FileOverrides {
    pub placement: Option<Placement>,
    pub replication_level: Option<u32>,
    pub stripe_width: Option<u32>,
}

impl FileOverrides {
    pub fn is_empty(&self) -> bool {
        self.placement.is_none() && self.replication_level.is_none() && self.stripe_width.is_none()
    }

    fn apply(&self, p: &mut FilePolicy) {
        if let Some(pl) = &self.placement {
            p.placement = pl.clone();
        }
        if let Some(r) = self.replication_level {
            p.replication_level = r;
        }
        if let Some(s) = self.stripe_width {
            p.stripe_width = s;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FileDecl {
    pub name: String,
    /// Required for workload inputs, optional for files some task writes.
    pub size: Option<u64>,
    pub overrides: FileOverrides,
    /// Stage an input file on this host's storage node.
    pub at: Option<u32>,
}

/// Overrides applied to every file whose name matches a glob.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatternOverride {
    pub pattern: String,
    pub overrides: FileOverrides,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GroupTarget {
    Host(u32),
    /// The host the named (pinned) task runs on.
    Consumer(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupDecl {
    pub name: String,
    pub target: GroupTarget,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskSpec {
    pub id: String,
    pub pin: Option<u32>,
    pub ops: Vec<TraceOp>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Workload {
    pub files: Vec<FileDecl>,
    pub patterns: Vec<PatternOverride>,
    pub groups: Vec<GroupDecl>,
    pub tasks: Vec<TaskSpec>,
}

impl Workload {
    pub fn file(&self, name: &str) -> Option<&FileDecl> {
        self.files.iter().find(|f| f.name == name)
    }

    pub fn op_count(&self) -> usize {
        self.tasks.iter().map(|t| t.ops.len()).sum()
    }

    /// Effective placement, replication and stripe width for `name`: the system
    /// configuration, then the first matching glob override, then the file's own flags.
    pub fn file_policy(&self, name: &str, config: &StorageConfig) -> FilePolicy {
        let mut p = FilePolicy {
            placement: config.placement.clone(),
            replication_level: config.replication_level,
            stripe_width: config.stripe_width,
        };
        if let Some(o) = self
            .patterns
            .iter()
            .find(|o| glob::Pattern::new(&o.pattern).is_ok_and(|g| g.matches(name)))
        {
            o.overrides.apply(&mut p);
        }
        if let Some(d) = self.file(name) {
            d.overrides.apply(&mut p);
        }
        p
    }

    /// Canonical text form; parsing it yields an equal workload.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("[files]\n");
        for f in &self.files {
            let size = f.size.map_or_else(|| "-".to_string(), |s| s.to_string());
            out.push_str(&format!("{} {}", f.name, size));
            write_overrides(&mut out, &f.overrides);
            if let Some(h) = f.at {
                out.push_str(&format!(" at={h}"));
            }
            out.push('\n');
        }
        for p in &self.patterns {
            out.push_str(&format!("{} -", p.pattern));
            write_overrides(&mut out, &p.overrides);
            out.push('\n');
        }
        if !self.groups.is_empty() {
            out.push_str("\n[groups]\n");
            for g in &self.groups {
                match &g.target {
                    GroupTarget::Host(h) => out.push_str(&format!("{} host={h}\n", g.name)),
                    GroupTarget::Consumer(t) => out.push_str(&format!("{} consumer={t}\n", g.name)),
                }
            }
        }
        out.push_str("\n[tasks]\n");
        for t in &self.tasks {
            out.push_str(&format!("task {}", t.id));
            if let Some(p) = t.pin {
                out.push_str(&format!(" pin={p}"));
            }
            out.push('\n');
            for op in &t.ops {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    op.timestamp, op.client, op.kind, op.file, op.offset, op.size
                ));
            }
        }
        out
    }
}

fn write_overrides(out: &mut String, o: &FileOverrides) {
    if let Some(p) = &o.placement {
        out.push_str(&format!(" placement={p}"));
    }
    if let Some(r) = o.replication_level {
        out.push_str(&format!(" replication={r}"));
    }
    if let Some(s) = o.stripe_width {
        out.push_str(&format!(" stripe={s}"));
    }
}

pub(crate) fn is_glob(name: &str) -> bool {
    name.contains(['*', '?', '['])
}
