//! Per-operation records, run aggregates and configuration ranking.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::storage::NetCounters;
use crate::workload::{OpKind, TaskGraph};

/// One replayed trace operation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpRecord {
    pub op_id: u64,
    pub task: String,
    /// Client label from the trace.
    pub client: u32,
    /// Host the operation ran on.
    pub host: u32,
    pub kind: OpKind,
    pub file: String,
    pub offset: u64,
    pub size: u64,
    pub start_ns: u64,
    pub end_ns: u64,
    pub bytes_remote: u64,
    pub bytes_loopback: u64,
    pub data_bytes_remote: u64,
    pub data_bytes_loopback: u64,
    pub chunk_requests: u64,
    pub replica_forwards: u64,
    pub manager_requests: u64,
    pub control_messages: u64,
    pub storage_bytes_delta: u64,
}

impl OpRecord {
    pub fn duration_ns(&self) -> u64 {
        self.end_ns - self.start_ns
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub ops: u64,
    pub reads: u64,
    pub writes: u64,
    pub bytes_read: u64,
    pub bytes_written: u64,
    pub bytes_remote: u64,
    pub bytes_loopback: u64,
    pub data_bytes_remote: u64,
    pub data_bytes_loopback: u64,
    pub chunk_requests: u64,
    pub replica_forwards: u64,
    pub manager_requests: u64,
    pub control_messages: u64,
}

impl Totals {
    fn add(&mut self, r: &OpRecord) {
        self.ops += 1;
        match r.kind {
            OpKind::Read => {
                self.reads += 1;
                self.bytes_read += r.size;
            }
            OpKind::Write => {
                self.writes += 1;
                self.bytes_written += r.size;
            }
            OpKind::Open | OpKind::Close => {}
        }
        self.bytes_remote += r.bytes_remote;
        self.bytes_loopback += r.bytes_loopback;
        self.data_bytes_remote += r.data_bytes_remote;
        self.data_bytes_loopback += r.data_bytes_loopback;
        self.chunk_requests += r.chunk_requests;
        self.replica_forwards += r.replica_forwards;
        self.manager_requests += r.manager_requests;
        self.control_messages += r.control_messages;
    }
}

/// Operations of all tasks at one topological level of the task graph.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSummary {
    pub level: usize,
    pub tasks: usize,
    pub start_ns: u64,
    pub end_ns: u64,
    pub duration_ns: u64,
    pub totals: Totals,
}

/// Bytes of storage held, counting every replica as a full chunk slot.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Footprint {
    pub staged: u64,
    pub peak: u64,
    #[serde(rename = "final")]
    pub final_: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub makespan_ns: u64,
    pub stages: Vec<StageSummary>,
    pub totals: Totals,
    pub footprint: Footprint,
    /// Counted by the network model itself, independently of the records.
    pub network: NetCounters,
    pub event_count: u64,
    /// Per-op records; written separately as CSV.
    #[serde(skip)]
    pub records: Vec<OpRecord>,
    /// Host time spent simulating; left out of report files so they stay reproducible.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

/// Build a report from the records of a run. Footprint and event count are left for
/// the caller to fill in.
pub fn aggregate(records: Vec<OpRecord>, graph: &TaskGraph) -> RunReport {
    let mut totals = Totals::default();
    let mut stages: Vec<Option<StageSummary>> = vec![None; graph.stage_count()];
    for r in &records {
        totals.add(r);
        let level = graph
            .task_index(&r.task)
            .map(|i| graph.tasks[i].level)
            .expect("record of a task outside the graph");
        let s = stages[level].get_or_insert_with(|| StageSummary {
            level,
            tasks: graph.tasks.iter().filter(|t| t.level == level).count(),
            start_ns: r.start_ns,
            end_ns: r.end_ns,
            duration_ns: 0,
            totals: Totals::default(),
        });
        s.start_ns = s.start_ns.min(r.start_ns);
        s.end_ns = s.end_ns.max(r.end_ns);
        s.totals.add(r);
    }
    let stages = stages
        .into_iter()
        .flatten()
        .map(|mut s| {
            s.duration_ns = s.end_ns - s.start_ns;
            s
        })
        .collect();
    let first = records.iter().map(|r| r.start_ns).min().unwrap_or(0);
    let last = records.iter().map(|r| r.end_ns).max().unwrap_or(0);
    RunReport {
        makespan_ns: last - first,
        stages,
        totals,
        records,
        ..RunReport::default()
    }
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<RunReport> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("report: {e}")))
    }

    pub fn write_records_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(r).map_err(|e| Error::Format(format!("csv: {e}")))?;
        }
        w.flush().map_err(|e| Error::Io {
            context: "writing op records".into(),
            source: e,
        })
    }

    /// Write `<stem>.json` and `<stem>.ops.csv` next to each other.
    pub fn write_files(&self, stem: &Path) -> Result<()> {
        let json = stem.with_extension("json");
        std::fs::write(&json, self.to_json()).map_err(|e| Error::Io {
            context: format!("writing {}", json.display()),
            source: e,
        })?;
        let csv_path = stem.with_extension("ops.csv");
        let f = std::fs::File::create(&csv_path).map_err(|e| Error::Io {
            context: format!("creating {}", csv_path.display()),
            source: e,
        })?;
        self.write_records_csv(std::io::BufWriter::new(f))
    }
}

pub const DEFAULT_EQUIVALENCE_BAND: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub rank: usize,
    pub label: String,
    pub makespan_ns: u64,
    /// Label of the fastest configuration this one is equivalent to, if not itself.
    pub equivalent_to: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub entries: Vec<RankEntry>,
}

impl Ranking {
    pub fn labels(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.label.as_str()).collect()
    }

    pub fn position(&self, label: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.label == label)
    }

    /// True when the two labels land in the same equivalence class.
    pub fn equivalent(&self, a: &str, b: &str) -> bool {
        let leader = |l: &str| {
            self.entries
                .iter()
                .find(|e| e.label == l)
                .map(|e| e.equivalent_to.clone().unwrap_or_else(|| e.label.clone()))
        };
        matches!((leader(a), leader(b)), (Some(x), Some(y)) if x == y)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["rank", "label", "makespan_ns", "equivalent_to"])
            .map_err(|e| Error::Format(e.to_string()))?;
        for e in &self.entries {
            w.write_record([
                e.rank.to_string(),
                e.label.clone(),
                e.makespan_ns.to_string(),
                e.equivalent_to.clone().unwrap_or_default(),
            ])
            .map_err(|e| Error::Format(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::Io {
            context: "writing ranking".into(),
            source: e,
        })
    }
}

/// Rank configurations by makespan, fastest first. A configuration within `band`
/// (relative) of the fastest member of the current class joins that class;
/// otherwise it starts a new one. Ties keep the input order.
pub fn compare(reports: &[(String, u64)], band: f64) -> Ranking {
    let mut order: Vec<usize> = (0..reports.len()).collect();
    order.sort_by_key(|&i| reports[i].1);
    let mut entries = Vec::with_capacity(order.len());
    let mut leader: Option<(String, u64)> = None;
    for (rank, i) in order.into_iter().enumerate() {
        let (label, makespan) = &reports[i];
        let equivalent_to = match &leader {
            Some((l, m)) if (*makespan as f64) <= *m as f64 * (1.0 + band) => Some(l.clone()),
            _ => {
                leader = Some((label.clone(), *makespan));
                None
            }
        };
        entries.push(RankEntry {
            rank: rank + 1,
            label: label.clone(),
            makespan_ns: *makespan,
            equivalent_to,
        });
    }
    Ranking { entries }
}
