//! Replays a workload against the cluster model.
//!
//! A task becomes eligible once every input produced inside the workload has been
//! closed by its writer. It then gets a host, and its operations are issued one after
//! another; the timestamp difference between consecutive operations is spent as
//! compute time before the next one is issued.

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use super::{assign_task_node, GroupTarget, OpKind, SchedulingPolicy, TaskGraph, Workload};
use crate::error::{ConfigError, Error, Result, WorkloadError};
use crate::report::{aggregate, Footprint, OpRecord, RunReport};
use crate::sim::{Handler, HostId, Scheduler, SimError, DEFAULT_EVENT_BUDGET};
use crate::storage::{
    Cluster, ClusterEvent, Completed, Fault, FilePolicy, ManagerError, OpRequest, Placement, PlatformProfile,
    StorageConfig,
};

pub const DEFAULT_SEED: u64 = 42;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DriveOptions {
    /// Seeds replica selection for reads.
    pub seed: u64,
    pub policy: SchedulingPolicy,
    /// Delay between consecutive dispatches of tasks that become eligible together.
    pub stagger_ns: u64,
    pub event_budget: u64,
}

impl Default for DriveOptions {
    fn default() -> Self {
        DriveOptions {
            seed: DEFAULT_SEED,
            policy: SchedulingPolicy::Locality,
            stagger_ns: 0,
            event_budget: DEFAULT_EVENT_BUDGET,
        }
    }
}

#[derive(Debug)]
pub enum Event {
    Cluster(ClusterEvent),
    Start(u32),
    Issue(u32),
}

impl From<ClusterEvent> for Event {
    fn from(e: ClusterEvent) -> Self {
        Event::Cluster(e)
    }
}

#[derive(Debug, Default)]
struct TaskRun {
    host: Option<HostId>,
    next_op: usize,
    waiting_inputs: usize,
    finished: bool,
}

struct Driver<'a> {
    w: &'a Workload,
    g: &'a TaskGraph,
    config: &'a StorageConfig,
    opts: &'a DriveOptions,
    cluster: Cluster,
    tasks: Vec<TaskRun>,
    loads: BTreeMap<HostId, usize>,
    /// Per task and op: whether completing the op seals its file for readers.
    seals: Vec<Vec<bool>>,
    consumers: HashMap<&'a str, Vec<usize>>,
    policies: HashMap<&'a str, FilePolicy>,
    op_base: Vec<u64>,
    records: Vec<OpRecord>,
}

fn tag(task: usize, op: usize) -> u64 {
    ((task as u64) << 32) | op as u64
}

fn untag(tag: u64) -> (usize, usize) {
    ((tag >> 32) as usize, (tag & 0xffff_ffff) as usize)
}

impl<'a> Driver<'a> {
    fn op_error(&self, task: usize, op: usize, msg: String) -> Error {
        let t = &self.w.tasks[task];
        Error::Workload(WorkloadError::Op {
            task: t.id.clone(),
            index: op,
            line: t.ops[op].line,
            msg,
        })
    }

    fn fault(&self, f: Fault) -> Error {
        match f {
            Fault::Sim(e) => Error::Sim(e),
            Fault::Op { tag, error } => {
                let (t, i) = untag(tag);
                match error {
                    ManagerError::Config(e) => Error::Config(e),
                    ManagerError::Usage(msg) => self.op_error(t, i, msg),
                }
            }
        }
    }

    fn policy(&mut self, file: &'a str) -> FilePolicy {
        let (w, config) = (self.w, self.config);
        self.policies
            .entry(file)
            .or_insert_with(|| w.file_policy(file, config))
            .clone()
    }

    fn dispatch(&mut self, sched: &mut Scheduler<Event>, mut ready: Vec<usize>) {
        ready.sort_unstable();
        for (k, t) in ready.into_iter().enumerate() {
            sched.schedule_in(k as u64 * self.opts.stagger_ns, Event::Start(t as u32));
        }
    }

    fn start_task(&mut self, sched: &mut Scheduler<Event>, t: usize) {
        let node = &self.g.tasks[t];
        let inputs: Vec<&str> = node.inputs.iter().map(String::as_str).collect();
        let topo = self.cluster.topology();
        let holding = self
            .cluster
            .manager()
            .hosts_holding_all(&inputs)
            .map(|hs| hs.into_iter().filter(|h| topo.is_client(*h)).collect::<Vec<_>>());
        let host = assign_task_node(holding.as_deref(), node.pin, &self.loads, self.opts.policy);
        *self.loads.get_mut(&host).expect("task placed on a client host") += 1;
        self.tasks[t].host = Some(host);
        self.advance(sched, t, None);
    }

    /// Issue the task's next op after its compute gap, or retire the task.
    fn advance(&mut self, sched: &mut Scheduler<Event>, t: usize, prev_ts: Option<u64>) {
        let ops = &self.w.tasks[t].ops;
        let i = self.tasks[t].next_op;
        if i == ops.len() {
            self.tasks[t].finished = true;
            let host = self.tasks[t].host.expect("started task");
            *self.loads.get_mut(&host).expect("client host") -= 1;
            return;
        }
        let gap = ops[i].timestamp - prev_ts.unwrap_or(0);
        if gap == 0 {
            self.issue(sched, t);
        } else {
            sched.schedule_in(gap, Event::Issue(t as u32));
        }
    }

    fn issue(&mut self, sched: &mut Scheduler<Event>, t: usize) {
        let i = self.tasks[t].next_op;
        let op = &self.w.tasks[t].ops[i];
        let policy = (op.kind == OpKind::Write).then(|| self.policy(&op.file));
        let req = OpRequest {
            tag: tag(t, i),
            host: self.tasks[t].host.expect("started task"),
            kind: op.kind,
            file: op.file.clone(),
            offset: op.offset,
            size: op.size,
            policy,
        };
        self.cluster.start_op(sched, req);
    }

    fn complete(&mut self, sched: &mut Scheduler<Event>, done: Completed, ready: &mut Vec<usize>) {
        let (t, i) = untag(done.tag);
        let task = &self.w.tasks[t];
        let op = &task.ops[i];
        let s = done.stats;
        self.records.push(OpRecord {
            op_id: self.op_base[t] + i as u64,
            task: task.id.clone(),
            client: op.client,
            host: self.tasks[t].host.expect("started task").0,
            kind: op.kind,
            file: op.file.clone(),
            offset: op.offset,
            size: op.size,
            start_ns: s.start.as_nanos(),
            end_ns: s.end.as_nanos(),
            bytes_remote: s.bytes_remote,
            bytes_loopback: s.bytes_loopback,
            data_bytes_remote: s.data_bytes_remote,
            data_bytes_loopback: s.data_bytes_loopback,
            chunk_requests: s.chunk_requests,
            replica_forwards: s.replica_forwards,
            manager_requests: s.manager_requests,
            control_messages: s.control_messages,
            storage_bytes_delta: s.storage_bytes_delta,
        });
        if self.seals[t][i] {
            self.cluster.seal(&op.file);
            for &c in self.consumers.get(op.file.as_str()).into_iter().flatten() {
                self.tasks[c].waiting_inputs -= 1;
                if self.tasks[c].waiting_inputs == 0 {
                    ready.push(c);
                }
            }
        }
        self.tasks[t].next_op = i + 1;
        self.advance(sched, t, Some(op.timestamp));
    }
}

impl Handler<Event> for Driver<'_> {
    type Error = Error;

    fn handle(&mut self, sched: &mut Scheduler<Event>, event: Event) -> Result<()> {
        match event {
            Event::Cluster(e) => {
                if let Err(f) = self.cluster.handle(sched, e) {
                    return Err(self.fault(f));
                }
                let done: Vec<Completed> = self.cluster.drain_completed().collect();
                let mut ready = Vec::new();
                for c in done {
                    self.complete(sched, c, &mut ready);
                }
                if !ready.is_empty() {
                    self.dispatch(sched, ready);
                }
            }
            Event::Start(t) => self.start_task(sched, t as usize),
            Event::Issue(t) => self.issue(sched, t as usize),
        }
        Ok(())
    }
}

/// Resolve co-locate groups to hosts.
fn group_hosts(w: &Workload, g: &TaskGraph) -> Result<BTreeMap<String, HostId>> {
    w.groups
        .iter()
        .map(|grp| {
            let host = match &grp.target {
                GroupTarget::Host(h) => HostId(*h),
                GroupTarget::Consumer(t) => {
                    let i = g.task_index(t).expect("validated consumer");
                    g.tasks[i].pin.expect("validated pin")
                }
            };
            Ok((grp.name.clone(), host))
        })
        .collect()
}

/// Simulate `w` on a cluster built from `config` and `profile`.
pub fn drive(
    w: &Workload,
    g: &TaskGraph,
    config: &StorageConfig,
    profile: &PlatformProfile,
    opts: &DriveOptions,
) -> Result<RunReport> {
    let wall = Instant::now();
    config.validate()?;
    profile.validate()?;
    let topo = config.topology()?;
    for t in &g.tasks {
        if let Some(p) = t.pin {
            if !topo.is_client(p) {
                return Err(
                    ConfigError::Invalid(format!("task {:?} is pinned to {p}, which runs no client", t.id)).into(),
                );
            }
        }
    }
    let groups = group_hosts(w, g)?;
    let loads = topo.clients.iter().map(|&h| (h, 0)).collect();
    let writer = topo.clients[0];
    let mut cluster = Cluster::new(profile.clone(), topo, config.chunk_size, groups, opts.seed);

    let mut staged = 0;
    for f in &w.files {
        let Some(size) = f.size else { continue };
        if g.producer_of(&f.name).is_some() {
            continue;
        }
        let mut policy = w.file_policy(&f.name, config);
        let host = match f.at {
            Some(h) => {
                policy.placement = Placement::Local;
                HostId(h)
            }
            None if policy.placement == Placement::Local => {
                return Err(ConfigError::Invalid(format!(
                    "input file {:?} has local placement but no at=HOST to stage it on",
                    f.name
                ))
                .into())
            }
            None => writer,
        };
        staged += cluster.stage(&f.name, size, &policy, host).map_err(|e| match e {
            ManagerError::Config(c) => Error::Config(c),
            ManagerError::Usage(m) => Error::Workload(WorkloadError::Invalid(m)),
        })?;
    }

    let mut tasks: Vec<TaskRun> = g.tasks.iter().map(|_| TaskRun::default()).collect();
    let mut consumers: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, node) in g.tasks.iter().enumerate() {
        for f in &node.inputs {
            if g.producer_of(f).is_some() {
                consumers.entry(f.as_str()).or_default().push(i);
                tasks[i].waiting_inputs += 1;
            }
        }
    }
    let seals = w
        .tasks
        .iter()
        .zip(&g.tasks)
        .map(|(t, node)| {
            let mut s = vec![false; t.ops.len()];
            for f in &node.outputs {
                let last_close = t
                    .ops
                    .iter()
                    .rposition(|o| o.kind == OpKind::Close && &o.file == f)
                    .expect("written files are closed");
                s[last_close] = true;
            }
            s
        })
        .collect();
    let mut op_base = Vec::with_capacity(w.tasks.len());
    let mut n = 0;
    for t in &w.tasks {
        op_base.push(n);
        n += t.ops.len() as u64;
    }

    let mut sched = Scheduler::with_budget(opts.event_budget);
    let ready: Vec<usize> = (0..tasks.len()).filter(|&i| tasks[i].waiting_inputs == 0).collect();
    let mut d = Driver {
        w,
        g,
        config,
        opts,
        cluster,
        tasks,
        loads,
        seals,
        consumers,
        policies: HashMap::new(),
        op_base,
        records: Vec::with_capacity(n as usize),
    };
    d.dispatch(&mut sched, ready);
    sched.run_until_idle(&mut d)?;

    if let Some(t) = d.tasks.iter().position(|t| !t.finished) {
        return Err(SimError::Invariant(format!("task {:?} never finished", w.tasks[t].id)).into());
    }
    d.cluster.check_drained()?;
    if d.records.len() as u64 != n {
        return Err(SimError::Invariant(format!("{} records for {n} trace operations", d.records.len())).into());
    }

    let mut records = d.records;
    records.sort_unstable_by_key(|r| r.op_id);
    let mut report = aggregate(records, g);
    report.footprint = Footprint {
        staged,
        peak: d.cluster.peak_usage(),
        final_: d.cluster.manager().total_usage(),
    };
    report.network = d.cluster.net_counters();
    report.event_count = sched.events_processed();
    report.wall_clock_secs = wall.elapsed().as_secs_f64();
    Ok(report)
}
