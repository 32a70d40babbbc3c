//! Queueing model of the deployed system.
//!
//! Every host has a client queue, a storage queue and a full-duplex network
//! interface (out-queue and in-queue); host 0 also runs the manager. Messages are cut
//! into frames; a frame leaving the sender's out-queue reaches the receiver's
//! in-queue after the core latency, or after the optional shared core queue. A
//! message is handed to its destination service once its last frame clears the
//! in-queue.
//!
//! Write: allocate at the manager, stream every chunk to its primary, which stores it
//! and forwards it along the replica chain; the last replica acks the client, and the
//! client commits the chunk map. Read: look the range up at the manager, then fetch
//! the covered part of each chunk from one replica, one chunk at a time.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use slab::Slab;

use super::manager::{replica_select, ChunkMeta, FilePolicy, ManagerError, ManagerState, ReadSlice};
use super::{PlatformProfile, Topology};
use crate::net::{decompose, LinkKind, NetRequest, Reassembly, RequestKind};
use crate::sim::{EntityId, HostId, Scheduler, ServiceKind, ServiceQueue, SimError, Started, VirtualTime};
use crate::units::Rate;
use crate::workload::OpKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameJob {
    msg: u32,
    src: HostId,
    dst: HostId,
    bytes: u64,
    /// Transmission time, identical at both ends.
    service: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClusterEvent {
    /// The request in service at this entity finishes now.
    Done(EntityId),
    /// A frame reaches its destination in-queue.
    Arrive(FrameJob),
}

/// A client operation handed to the model.
#[derive(Clone, Debug)]
pub struct OpRequest {
    /// Opaque caller tag returned with the completion.
    pub tag: u64,
    pub host: HostId,
    pub kind: OpKind,
    pub file: String,
    pub offset: u64,
    pub size: u64,
    /// Effective file configuration; required for writes.
    pub policy: Option<FilePolicy>,
}

/// Timing and traffic attributed to one operation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpStats {
    pub start: VirtualTime,
    pub end: VirtualTime,
    /// Wire bytes of every message, by link kind.
    pub bytes_remote: u64,
    pub bytes_loopback: u64,
    /// Payload bytes of chunk data messages, by link kind.
    pub data_bytes_remote: u64,
    pub data_bytes_loopback: u64,
    /// Client to storage chunk messages (stores to a primary, or fetches).
    pub chunk_requests: u64,
    /// Storage to storage replica transfers.
    pub replica_forwards: u64,
    pub manager_requests: u64,
    pub control_messages: u64,
    pub storage_bytes_delta: u64,
}

#[derive(Clone, Debug)]
pub struct Completed {
    pub tag: u64,
    pub stats: OpStats,
}

/// Everything that went over the network, counted at send time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct NetCounters {
    pub messages: u64,
    pub control_messages: u64,
    pub bytes_remote: u64,
    pub bytes_loopback: u64,
    pub frames: u64,
}

#[derive(Debug)]
pub enum Fault {
    Sim(SimError),
    /// The manager rejected a request made on behalf of the tagged operation.
    Op {
        tag: u64,
        error: ManagerError,
    },
}

impl From<SimError> for Fault {
    fn from(e: SimError) -> Self {
        Fault::Sim(e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Body {
    Allocate,
    AllocReply,
    Store { chunk: u32, pos: u32 },
    ChunkAck,
    Commit,
    CommitAck,
    Lookup,
    LookupReply,
    Fetch { slice: u32 },
    ChunkData { slice: u32 },
}

impl Body {
    fn request_kind(self) -> RequestKind {
        match self {
            Body::Store { .. } | Body::ChunkData { .. } => RequestKind::ChunkData,
            _ => RequestKind::Control,
        }
    }

    fn deliver_to(self) -> ServiceKind {
        match self {
            Body::Allocate | Body::Commit | Body::Lookup => ServiceKind::Manager,
            Body::Store { .. } | Body::Fetch { .. } => ServiceKind::Storage,
            _ => ServiceKind::Client,
        }
    }
}

#[derive(Debug)]
struct Message {
    op: usize,
    dst: HostId,
    payload: u64,
    body: Body,
}

#[derive(Debug)]
struct OpState {
    req: OpRequest,
    stats: OpStats,
    chunks: Vec<ChunkMeta>,
    acks_pending: usize,
    slices: Vec<ReadSlice>,
    next_slice: usize,
}

#[derive(Debug)]
struct HostQueues {
    client: ServiceQueue<usize>,
    storage: ServiceQueue<usize>,
    out: ServiceQueue<FrameJob>,
    inq: ServiceQueue<FrameJob>,
}

pub struct Cluster {
    profile: PlatformProfile,
    topo: Topology,
    manager: ManagerState,
    groups: BTreeMap<String, HostId>,
    rng: ChaCha8Rng,
    hosts: Vec<HostQueues>,
    manager_q: ServiceQueue<usize>,
    core: Option<(Rate, ServiceQueue<FrameJob>)>,
    msgs: Slab<Message>,
    ops: Slab<OpState>,
    reassembly: Reassembly,
    finished: Vec<Completed>,
    net: NetCounters,
    peak_usage: u64,
}

const MANAGER: EntityId = EntityId {
    host: HostId(0),
    kind: ServiceKind::Manager,
};
const CORE: EntityId = EntityId {
    host: HostId(0),
    kind: ServiceKind::Core,
};

impl Cluster {
    pub fn new(
        profile: PlatformProfile,
        topo: Topology,
        chunk_size: u64,
        groups: BTreeMap<String, HostId>,
        seed: u64,
    ) -> Cluster {
        let hosts = (0..topo.n_hosts)
            .map(|h| {
                let id = |kind| EntityId::new(HostId(h), kind);
                HostQueues {
                    client: ServiceQueue::new(id(ServiceKind::Client)),
                    storage: ServiceQueue::new(id(ServiceKind::Storage)),
                    out: ServiceQueue::new(id(ServiceKind::NetOut)),
                    inq: ServiceQueue::new(id(ServiceKind::NetIn)),
                }
            })
            .collect();
        let core = profile.core_mu_net.map(|mu| (mu, ServiceQueue::new(CORE)));
        Cluster {
            manager: ManagerState::new(topo.storage.clone(), chunk_size),
            profile,
            topo,
            groups,
            rng: ChaCha8Rng::seed_from_u64(seed),
            hosts,
            manager_q: ServiceQueue::new(MANAGER),
            core,
            msgs: Slab::new(),
            ops: Slab::new(),
            reassembly: Reassembly::default(),
            finished: Vec::new(),
            net: NetCounters::default(),
            peak_usage: 0,
        }
    }

    pub fn manager(&self) -> &ManagerState {
        &self.manager
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn net_counters(&self) -> NetCounters {
        self.net
    }

    pub fn peak_usage(&self) -> u64 {
        self.peak_usage
    }

    /// Place a workload input before the run starts, without simulating the transfer.
    /// Returns the storage consumed.
    pub fn stage(&mut self, file: &str, size: u64, policy: &FilePolicy, writer: HostId) -> Result<u64, ManagerError> {
        let before = self.manager.total_usage();
        let chunks = self.manager.allocate(file, 0, size, policy, writer, &self.groups)?;
        self.manager.commit(file, &chunks)?;
        self.manager.seal(file);
        self.peak_usage = self.peak_usage.max(self.manager.total_usage());
        Ok(self.manager.total_usage() - before)
    }

    /// Close the file for writing; later writes fail.
    pub fn seal(&mut self, file: &str) {
        self.manager.seal(file);
    }

    /// Completions since the last call, in completion order.
    pub fn drain_completed(&mut self) -> std::vec::Drain<'_, Completed> {
        self.finished.drain(..)
    }

    /// Submit an operation to the client service of `req.host`.
    pub fn start_op<E: From<ClusterEvent>>(&mut self, sched: &mut Scheduler<E>, req: OpRequest) {
        let now = sched.now();
        let host = req.host;
        let key = self.ops.insert(OpState {
            req,
            stats: OpStats {
                start: now,
                ..OpStats::default()
            },
            chunks: Vec::new(),
            acks_pending: 0,
            slices: Vec::new(),
            next_slice: 0,
        });
        let service = self.profile.mu_client.time_for(1);
        if let Some(st) = self.hosts[host.0 as usize].client.enqueue(now, key, service) {
            done_at(sched, EntityId::new(host, ServiceKind::Client), st);
        }
    }

    pub fn handle<E: From<ClusterEvent>>(&mut self, sched: &mut Scheduler<E>, ev: ClusterEvent) -> Result<(), Fault> {
        match ev {
            ClusterEvent::Arrive(job) => {
                self.arrive(sched, job);
                Ok(())
            }
            ClusterEvent::Done(id) => self.done(sched, id),
        }
    }

    fn done<E: From<ClusterEvent>>(&mut self, sched: &mut Scheduler<E>, id: EntityId) -> Result<(), Fault> {
        let now = sched.now();
        let h = id.host.0 as usize;
        match id.kind {
            ServiceKind::NetOut => {
                let q = &mut self.hosts[h].out;
                let (_, next) = q.complete(now)?;
                if let Some(st) = next {
                    let job = *q.current().expect("just started");
                    done_at(sched, id, st);
                    self.transmit(sched, job);
                }
            }
            ServiceKind::NetIn => {
                let q = &mut self.hosts[h].inq;
                let (job, next) = q.complete(now)?;
                if let Some(st) = next {
                    done_at(sched, id, st);
                }
                if self.reassembly.frame_done(u64::from(job.msg))? {
                    self.deliver(sched, job.msg as usize);
                }
            }
            ServiceKind::Core => {
                let (_, q) = self.core.as_mut().expect("core event without a core queue");
                let (_, next) = q.complete(now)?;
                if let Some(st) = next {
                    let job = *q.current().expect("just started");
                    self.core_started(sched, job, st);
                }
            }
            ServiceKind::Manager => {
                let (key, next) = self.manager_q.complete(now)?;
                if let Some(st) = next {
                    done_at(sched, id, st);
                }
                self.manager_serve(sched, key)?;
            }
            ServiceKind::Storage => {
                let (key, next) = self.hosts[h].storage.complete(now)?;
                if let Some(st) = next {
                    done_at(sched, id, st);
                }
                self.storage_serve(sched, id.host, key);
            }
            ServiceKind::Client => {
                let (op, next) = self.hosts[h].client.complete(now)?;
                if let Some(st) = next {
                    done_at(sched, id, st);
                }
                self.client_ready(sched, op);
            }
        }
        Ok(())
    }

    fn send<E: From<ClusterEvent>>(
        &mut self,
        sched: &mut Scheduler<E>,
        op: usize,
        src: HostId,
        dst: HostId,
        payload: u64,
        body: Body,
    ) {
        let kind = body.request_kind();
        let link = LinkKind::between(src, dst);
        let key = self.msgs.vacant_key();
        let frames = decompose(
            &NetRequest {
                id: key as u64,
                src,
                dst,
                kind,
                payload_bytes: payload,
                deliver_to: body.deliver_to(),
            },
            self.profile.frame_size,
            self.profile.control_message_size,
        );
        self.msgs.insert(Message { op, dst, payload, body });
        self.reassembly.expect(key as u64, frames.len() as u32);

        let mut wire = 0;
        let now = sched.now();
        for f in frames {
            wire += f.bytes;
            let job = FrameJob {
                msg: key as u32,
                src,
                dst,
                bytes: f.bytes,
                service: self.profile.transmission_time(f.bytes, src, dst),
            };
            self.net.frames += 1;
            if let Some(st) = self.hosts[src.0 as usize].out.enqueue(now, job, job.service) {
                done_at(sched, EntityId::new(src, ServiceKind::NetOut), st);
                self.transmit(sched, job);
            }
        }

        self.net.messages += 1;
        let stats = &mut self.ops[op].stats;
        match link {
            LinkKind::Remote => {
                self.net.bytes_remote += wire;
                stats.bytes_remote += wire;
            }
            LinkKind::Loopback => {
                self.net.bytes_loopback += wire;
                stats.bytes_loopback += wire;
            }
        }
        match kind {
            RequestKind::Control => {
                self.net.control_messages += 1;
                stats.control_messages += 1;
            }
            RequestKind::ChunkData => match link {
                LinkKind::Remote => stats.data_bytes_remote += payload,
                LinkKind::Loopback => stats.data_bytes_loopback += payload,
            },
        }
        match body {
            Body::Allocate | Body::Commit | Body::Lookup => stats.manager_requests += 1,
            Body::Store { pos: 0, .. } | Body::Fetch { .. } => stats.chunk_requests += 1,
            Body::Store { .. } => stats.replica_forwards += 1,
            _ => {}
        }
    }

    /// A frame has entered transmission at its sender.
    fn transmit<E: From<ClusterEvent>>(&mut self, sched: &mut Scheduler<E>, job: FrameJob) {
        let now = sched.now();
        let link = LinkKind::between(job.src, job.dst);
        if link == LinkKind::Remote {
            if let Some((mu, q)) = self.core.as_mut() {
                if let Some(st) = q.enqueue(now, job, mu.time_for(job.bytes)) {
                    self.core_started(sched, job, st);
                }
                return;
            }
        }
        let at = now + self.profile.latency(link);
        self.arrive_at(sched, at, job);
    }

    /// The core forwards cut-through as well, but the frame cannot finish arriving
    /// before the core has finished carrying it.
    fn core_started<E: From<ClusterEvent>>(&mut self, sched: &mut Scheduler<E>, job: FrameJob, st: Started) {
        done_at(sched, CORE, st);
        let l = self.profile.core_latency;
        let head = st.started_at.as_nanos() + l;
        let tail = (st.completes_at.as_nanos() + l).saturating_sub(job.service);
        self.arrive_at(sched, VirtualTime::from_nanos(head.max(tail)), job);
    }

    fn arrive_at<E: From<ClusterEvent>>(&mut self, sched: &mut Scheduler<E>, at: VirtualTime, job: FrameJob) {
        if at == sched.now() {
            self.arrive(sched, job);
        } else {
            sched.schedule_in(at.since(sched.now()), ClusterEvent::Arrive(job).into());
        }
    }

    fn arrive<E: From<ClusterEvent>>(&mut self, sched: &mut Scheduler<E>, job: FrameJob) {
        if let Some(st) = self.hosts[job.dst.0 as usize]
            .inq
            .enqueue(sched.now(), job, job.service)
        {
            done_at(sched, EntityId::new(job.dst, ServiceKind::NetIn), st);
        }
    }

    /// All frames of a message are in: hand it to the destination service.
    fn deliver<E: From<ClusterEvent>>(&mut self, sched: &mut Scheduler<E>, key: usize) {
        let now = sched.now();
        let m = &self.msgs[key];
        match m.body.deliver_to() {
            ServiceKind::Manager => {
                if let Some(st) = self.manager_q.enqueue(now, key, self.profile.mu_manager.time_for(1)) {
                    done_at(sched, MANAGER, st);
                }
            }
            ServiceKind::Storage => {
                let bytes = match m.body {
                    Body::Store { .. } => m.payload,
                    Body::Fetch { slice } => self.ops[m.op].slices[slice as usize].len,
                    _ => unreachable!("not a storage request"),
                };
                let service = self.profile.storage_mu(m.dst).time_for(bytes);
                let dst = m.dst;
                if let Some(st) = self.hosts[dst.0 as usize].storage.enqueue(now, key, service) {
                    done_at(sched, EntityId::new(dst, ServiceKind::Storage), st);
                }
            }
            _ => self.client_receive(sched, key),
        }
    }

    fn manager_serve<E: From<ClusterEvent>>(&mut self, sched: &mut Scheduler<E>, key: usize) -> Result<(), Fault> {
        let m = self.msgs.remove(key);
        let op = &mut self.ops[m.op];
        let tag = op.req.tag;
        let fault = |error| Fault::Op { tag, error };
        let reply = match m.body {
            Body::Allocate => {
                let policy = op
                    .req
                    .policy
                    .as_ref()
                    .ok_or_else(|| fault(ManagerError::Usage("write without a file policy".into())))?;
                let before = self.manager.total_usage();
                op.chunks = self
                    .manager
                    .allocate(
                        &op.req.file,
                        op.req.offset,
                        op.req.size,
                        policy,
                        op.req.host,
                        &self.groups,
                    )
                    .map_err(fault)?;
                let after = self.manager.total_usage();
                op.stats.storage_bytes_delta += after - before;
                self.peak_usage = self.peak_usage.max(after);
                Body::AllocReply
            }
            Body::Commit => {
                self.manager.commit(&op.req.file, &op.chunks).map_err(fault)?;
                Body::CommitAck
            }
            Body::Lookup => {
                op.slices = self
                    .manager
                    .lookup(&op.req.file, op.req.offset, op.req.size)
                    .map_err(fault)?;
                Body::LookupReply
            }
            b => unreachable!("manager received {b:?}"),
        };
        let client = op.req.host;
        self.send(sched, m.op, self.topo.manager, client, 0, reply);
        Ok(())
    }

    fn storage_serve<E: From<ClusterEvent>>(&mut self, sched: &mut Scheduler<E>, host: HostId, key: usize) {
        let m = self.msgs.remove(key);
        let op = &self.ops[m.op];
        let client = op.req.host;
        match m.body {
            Body::Store { chunk, pos } => {
                let replicas = &op.chunks[chunk as usize].replicas;
                let next = pos as usize + 1;
                if next < replicas.len() {
                    let to = replicas[next];
                    self.send(sched, m.op, host, to, m.payload, Body::Store { chunk, pos: pos + 1 });
                } else {
                    self.send(sched, m.op, host, client, 0, Body::ChunkAck);
                }
            }
            Body::Fetch { slice } => {
                let len = op.slices[slice as usize].len;
                self.send(sched, m.op, host, client, len, Body::ChunkData { slice });
            }
            b => unreachable!("storage received {b:?}"),
        }
    }

    /// The client service has taken up a newly issued operation.
    fn client_ready<E: From<ClusterEvent>>(&mut self, sched: &mut Scheduler<E>, op: usize) {
        let host = self.ops[op].req.host;
        let manager = self.topo.manager;
        match self.ops[op].req.kind {
            OpKind::Open | OpKind::Close => self.finish(sched, op),
            OpKind::Write => self.send(sched, op, host, manager, 0, Body::Allocate),
            OpKind::Read => self.send(sched, op, host, manager, 0, Body::Lookup),
        }
    }

    fn client_receive<E: From<ClusterEvent>>(&mut self, sched: &mut Scheduler<E>, key: usize) {
        let m = self.msgs.remove(key);
        let op = m.op;
        let host = self.ops[op].req.host;
        let manager = self.topo.manager;
        match m.body {
            Body::AllocReply => {
                let state = &mut self.ops[op];
                state.acks_pending = state.chunks.len();
                if state.chunks.is_empty() {
                    self.send(sched, op, host, manager, 0, Body::Commit);
                    return;
                }
                let targets: Vec<(HostId, u64)> = state.chunks.iter().map(|c| (c.replicas[0], c.len)).collect();
                for (i, (to, len)) in targets.into_iter().enumerate() {
                    self.send(
                        sched,
                        op,
                        host,
                        to,
                        len,
                        Body::Store {
                            chunk: i as u32,
                            pos: 0,
                        },
                    );
                }
            }
            Body::ChunkAck => {
                let state = &mut self.ops[op];
                state.acks_pending -= 1;
                if state.acks_pending == 0 {
                    self.send(sched, op, host, manager, 0, Body::Commit);
                }
            }
            Body::CommitAck => self.finish(sched, op),
            Body::LookupReply => self.fetch_next(sched, op),
            Body::ChunkData { .. } => {
                self.ops[op].next_slice += 1;
                self.fetch_next(sched, op);
            }
            b => unreachable!("client received {b:?}"),
        }
    }

    fn fetch_next<E: From<ClusterEvent>>(&mut self, sched: &mut Scheduler<E>, op: usize) {
        let state = &self.ops[op];
        let Some(slice) = state.slices.get(state.next_slice) else {
            self.finish(sched, op);
            return;
        };
        let host = state.req.host;
        let from = replica_select(&slice.replicas, host, &mut self.rng);
        let idx = state.next_slice as u32;
        self.send(sched, op, host, from, 0, Body::Fetch { slice: idx });
    }

    fn finish<E>(&mut self, sched: &mut Scheduler<E>, op: usize) {
        let mut state = self.ops.remove(op);
        state.stats.end = sched.now();
        self.finished.push(Completed {
            tag: state.req.tag,
            stats: state.stats,
        });
    }

    /// After the event queue drains nothing may be left in flight.
    pub fn check_drained(&self) -> Result<(), SimError> {
        let incomplete = self.reassembly.incomplete();
        if !incomplete.is_empty() {
            return Err(SimError::Invariant(format!(
                "{} messages still missing frames at drain time (first id {})",
                incomplete.len(),
                incomplete[0]
            )));
        }
        if !self.msgs.is_empty() || !self.ops.is_empty() {
            return Err(SimError::Invariant(format!(
                "{} messages and {} operations left in flight",
                self.msgs.len(),
                self.ops.len()
            )));
        }
        let busy = self
            .hosts
            .iter()
            .flat_map(|h| [h.client.len(), h.storage.len(), h.out.len(), h.inq.len()])
            .chain([self.manager_q.len()])
            .chain(self.core.iter().map(|(_, q)| q.len()))
            .any(|n| n > 0);
        if busy {
            return Err(SimError::Invariant("service queues not empty at drain time".into()));
        }
        if !self.manager.usage_is_consistent(&[]) {
            return Err(SimError::Invariant(
                "storage usage differs from the stored chunk replicas".into(),
            ));
        }
        Ok(())
    }
}

fn done_at<E: From<ClusterEvent>>(sched: &mut Scheduler<E>, id: EntityId, st: Started) {
    sched.schedule_in(st.completes_at.since(sched.now()), ClusterEvent::Done(id).into());
}
