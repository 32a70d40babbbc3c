use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{GroupTarget, OpKind, Workload};
use crate::error::WorkloadError;
use crate::sim::HostId;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskNode {
    pub id: String,
    pub pin: Option<HostId>,
    /// Files read by the task, sorted.
    pub inputs: Vec<String>,
    /// Files written by the task, sorted.
    pub outputs: Vec<String>,
    /// Indices of tasks producing one of the inputs.
    pub deps: Vec<usize>,
    pub dependents: Vec<usize>,
    /// Topological level: 0 without dependencies, else one more than the deepest dependency.
    pub level: usize,
}

/// Task dependency graph derived from file production and consumption.
#[derive(Clone, Debug)]
pub struct TaskGraph {
    pub tasks: Vec<TaskNode>,
    producer: HashMap<String, usize>,
    index: HashMap<String, usize>,
}

impl TaskGraph {
    pub fn build(w: &Workload) -> Result<TaskGraph, WorkloadError> {
        let declared: BTreeSet<&str> = w.files.iter().map(|f| f.name.as_str()).collect();
        let mut producer: HashMap<String, usize> = HashMap::new();
        let mut tasks = Vec::with_capacity(w.tasks.len());
        let index: HashMap<String, usize> = w.tasks.iter().enumerate().map(|(i, t)| (t.id.clone(), i)).collect();

        for (ti, t) in w.tasks.iter().enumerate() {
            let mut inputs = BTreeSet::new();
            let mut outputs = BTreeSet::new();
            for op in &t.ops {
                if !declared.contains(op.file.as_str()) {
                    return Err(WorkloadError::UnknownFile(op.file.clone()));
                }
                match op.kind {
                    OpKind::Read => {
                        inputs.insert(op.file.clone());
                    }
                    OpKind::Write => {
                        outputs.insert(op.file.clone());
                    }
                    OpKind::Open | OpKind::Close => {}
                }
            }
            // Reading one's own output is a dependency on oneself.
            if inputs.intersection(&outputs).next().is_some() {
                return Err(WorkloadError::Cycle(vec![t.id.clone(), t.id.clone()]));
            }
            for f in &outputs {
                if let Some(&other) = producer.get(f) {
                    return Err(WorkloadError::Invalid(format!(
                        "file {f:?} is written by both {:?} and {:?}",
                        w.tasks[other].id, t.id
                    )));
                }
                producer.insert(f.clone(), ti);
            }
            tasks.push(TaskNode {
                id: t.id.clone(),
                pin: t.pin.map(HostId),
                inputs: inputs.into_iter().collect(),
                outputs: outputs.into_iter().collect(),
                deps: Vec::new(),
                dependents: Vec::new(),
                level: 0,
            });
        }

        for (ti, t) in w.tasks.iter().enumerate() {
            let mut deps = BTreeSet::new();
            for f in &tasks[ti].inputs {
                match producer.get(f) {
                    Some(&p) => {
                        deps.insert(p);
                    }
                    None => {
                        let decl = w.file(f).expect("checked above");
                        if decl.size.is_none() {
                            return Err(WorkloadError::ReadBeforeWrite {
                                file: f.clone(),
                                task: t.id.clone(),
                            });
                        }
                    }
                }
            }
            for &d in &deps {
                tasks[d].dependents.push(ti);
            }
            tasks[ti].deps = deps.into_iter().collect();
        }

        let mut g = TaskGraph { tasks, producer, index };
        g.assign_levels()?;
        g.check_groups(w)?;
        Ok(g)
    }

    fn assign_levels(&mut self) -> Result<(), WorkloadError> {
        let n = self.tasks.len();
        let mut indegree: Vec<usize> = self.tasks.iter().map(|t| t.deps.len()).collect();
        let mut ready: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut done = 0;
        while let Some(i) = ready.pop() {
            done += 1;
            let level = self.tasks[i].level;
            for k in 0..self.tasks[i].dependents.len() {
                let d = self.tasks[i].dependents[k];
                self.tasks[d].level = self.tasks[d].level.max(level + 1);
                indegree[d] -= 1;
                if indegree[d] == 0 {
                    ready.push(d);
                }
            }
        }
        if done == n {
            return Ok(());
        }
        let stuck: BTreeSet<usize> = (0..n).filter(|&i| indegree[i] > 0).collect();
        Err(WorkloadError::Cycle(self.find_cycle(&stuck)))
    }

    /// Walk dependencies inside `stuck` until a task repeats.
    fn find_cycle(&self, stuck: &BTreeSet<usize>) -> Vec<String> {
        let start = *stuck.iter().next().expect("non-empty");
        let mut path = vec![start];
        let mut pos: HashMap<usize, usize> = HashMap::from([(start, 0)]);
        let mut cur = start;
        loop {
            let next = *self.tasks[cur]
                .deps
                .iter()
                .find(|d| stuck.contains(d))
                .expect("every stuck task has a stuck dependency");
            if let Some(&at) = pos.get(&next) {
                // Dependencies point backwards; reverse to list producers first.
                let mut cycle: Vec<String> = path[at..].iter().rev().map(|&i| self.tasks[i].id.clone()).collect();
                cycle.push(cycle[0].clone());
                return cycle;
            }
            pos.insert(next, path.len());
            path.push(next);
            cur = next;
        }
    }

    fn check_groups(&self, w: &Workload) -> Result<(), WorkloadError> {
        let groups: BTreeSet<&str> = w.groups.iter().map(|g| g.name.as_str()).collect();
        for g in &w.groups {
            if let GroupTarget::Consumer(t) = &g.target {
                let i = self.index.get(t).ok_or_else(|| {
                    WorkloadError::Invalid(format!("group {:?} names unknown consumer task {t:?}", g.name))
                })?;
                if self.tasks[*i].pin.is_none() {
                    return Err(WorkloadError::Invalid(format!(
                        "group {:?}: consumer task {t:?} must be pinned to a host",
                        g.name
                    )));
                }
            }
        }
        let overrides = w
            .files
            .iter()
            .map(|f| &f.overrides)
            .chain(w.patterns.iter().map(|p| &p.overrides));
        for o in overrides {
            if let Some(crate::storage::Placement::CoLocate(g)) = &o.placement {
                if !groups.contains(g.as_str()) {
                    return Err(WorkloadError::Invalid(format!(
                        "placement refers to undeclared group {g:?}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn task_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn producer_of(&self, file: &str) -> Option<usize> {
        self.producer.get(file).copied()
    }

    pub fn stage_count(&self) -> usize {
        self.tasks.iter().map(|t| t.level + 1).max().unwrap_or(0)
    }

    /// Directed edges `(producer, consumer)` by task id.
    pub fn edges(&self) -> Vec<(String, String)> {
        let mut e = Vec::new();
        for t in &self.tasks {
            for &d in &t.deps {
                e.push((self.tasks[d].id.clone(), t.id.clone()));
            }
        }
        e
    }
}

/// How tasks are mapped to hosts when they become eligible.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulingPolicy {
    /// Run a task where all of its input chunks live, if such a host exists.
    #[default]
    Locality,
    /// Ignore data location: pinned host, else least loaded.
    Static,
}

impl FromStr for SchedulingPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "locality" => Ok(SchedulingPolicy::Locality),
            "static" => Ok(SchedulingPolicy::Static),
            _ => Err(format!("unknown scheduling policy {s:?} (expected locality or static)")),
        }
    }
}

/// Choose the host for a task that is ready to run.
///
/// `holding_all` is the set of client hosts that store every chunk of every input
/// (`None` when the inputs have no chunks). With locality scheduling a non-empty set
/// wins, preferring the pinned host, then the least loaded. Otherwise the task goes to
/// its pinned host, or the least-loaded client host. Ties go to the lowest host id.
pub fn assign_task_node(
    holding_all: Option<&[HostId]>,
    pin: Option<HostId>,
    loads: &BTreeMap<HostId, usize>,
    policy: SchedulingPolicy,
) -> HostId {
    let least_loaded = |hosts: &mut dyn Iterator<Item = HostId>| {
        hosts
            .min_by_key(|h| (loads.get(h).copied().unwrap_or(0), *h))
            .expect("at least one candidate host")
    };
    if policy == SchedulingPolicy::Locality {
        if let Some(cands) = holding_all.filter(|c| !c.is_empty()) {
            if let Some(p) = pin.filter(|p| cands.contains(p)) {
                return p;
            }
            return least_loaded(&mut cands.iter().copied());
        }
    }
    if let Some(p) = pin {
        return p;
    }
    least_loaded(&mut loads.keys().copied())
}
