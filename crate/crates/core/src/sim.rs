//! Deterministic discrete-event engine.
//!
//! Three pieces are shared by every modeled component:
//!
//! * [`VirtualTime`], an integer nanosecond clock,
//! * [`Scheduler`], a priority queue ordered by `(fire_at, seq)` where `seq` is the
//!   insertion counter, so events scheduled for the same instant pop in insertion order,
//! * [`ServiceQueue`], a single-server FIFO queue with deterministic service times.
//!
//! The engine is single threaded. A `Scheduler` owns all of its state and can be moved
//! to another thread, which is how sweeps run several simulations at once.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::fmt;
use std::ops::Add;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default cap on processed events per run.
pub const DEFAULT_EVENT_BUDGET: u64 = 1_000_000_000;

/// Nanoseconds since the start of the simulation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VirtualTime(u64);

impl VirtualTime {
    pub const ZERO: VirtualTime = VirtualTime(0);

    pub const fn from_nanos(ns: u64) -> Self {
        VirtualTime(ns)
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    /// Nanoseconds elapsed since `earlier`, zero if `earlier` is in the future.
    pub fn since(self, earlier: VirtualTime) -> u64 {
        self.0.saturating_sub(earlier.0)
    }
}

impl Add<u64> for VirtualTime {
    type Output = VirtualTime;

    fn add(self, ns: u64) -> VirtualTime {
        VirtualTime(self.0 + ns)
    }
}

impl fmt::Display for VirtualTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ns", self.0)
    }
}

/// Host index in the simulated cluster.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HostId(pub u32);

impl fmt::Display for HostId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "host{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceKind {
    Client,
    Storage,
    Manager,
    NetOut,
    NetIn,
    Core,
}

/// A service instance: which host it lives on and what it is.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityId {
    pub host: HostId,
    pub kind: ServiceKind,
}

impl EntityId {
    pub fn new(host: HostId, kind: ServiceKind) -> Self {
        EntityId { host, kind }
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{:?}", self.host, self.kind)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("event scheduled at {at} while the clock is already at {now}")]
    PastEvent { at: VirtualTime, now: VirtualTime },
    #[error("event budget of {0} events exhausted; the model is probably looping")]
    BudgetExceeded(u64),
    #[error("model invariant violated: {0}")]
    Invariant(String),
}

struct Entry<E> {
    fire_at: VirtualTime,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.seq == other.seq
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    // BinaryHeap is a max-heap; invert so the earliest (fire_at, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.fire_at.cmp(&self.fire_at).then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Something that reacts to events popped off a [`Scheduler`].
pub trait Handler<E> {
    type Error: From<SimError>;

    fn handle(&mut self, sched: &mut Scheduler<E>, event: E) -> Result<(), Self::Error>;
}

/// Virtual clock plus pending-event queue.
pub struct Scheduler<E> {
    now: VirtualTime,
    next_seq: u64,
    heap: BinaryHeap<Entry<E>>,
    processed: u64,
    budget: u64,
}

impl<E> Default for Scheduler<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Scheduler<E> {
    pub fn new() -> Self {
        Self::with_budget(DEFAULT_EVENT_BUDGET)
    }

    pub fn with_budget(budget: u64) -> Self {
        Scheduler {
            now: VirtualTime::ZERO,
            next_seq: 0,
            heap: BinaryHeap::new(),
            processed: 0,
            budget,
        }
    }

    pub fn now(&self) -> VirtualTime {
        self.now
    }

    pub fn events_processed(&self) -> u64 {
        self.processed
    }

    pub fn pending(&self) -> usize {
        self.heap.len()
    }

    /// Enqueue `event` to fire at `at`. Scheduling into the past is an error.
    pub fn schedule(&mut self, at: VirtualTime, event: E) -> Result<(), SimError> {
        if at < self.now {
            return Err(SimError::PastEvent { at, now: self.now });
        }
        self.push(at, event);
        Ok(())
    }

    /// Enqueue `event` to fire `delay` nanoseconds from now.
    pub fn schedule_in(&mut self, delay: u64, event: E) {
        let at = self.now + delay;
        self.push(at, event);
    }

    fn push(&mut self, fire_at: VirtualTime, event: E) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry { fire_at, seq, event });
    }

    /// Pop the next event and advance the clock to its timestamp.
    pub fn pop(&mut self) -> Option<(VirtualTime, E)> {
        let entry = self.heap.pop()?;
        debug_assert!(entry.fire_at >= self.now);
        self.now = entry.fire_at;
        Some((entry.fire_at, entry.event))
    }

    /// Process events until the queue drains and return the final clock value.
    pub fn run_until_idle<H: Handler<E>>(&mut self, handler: &mut H) -> Result<VirtualTime, H::Error> {
        while let Some((_, event)) = self.pop() {
            if self.processed >= self.budget {
                return Err(SimError::BudgetExceeded(self.budget).into());
            }
            self.processed += 1;
            handler.handle(self, event)?;
        }
        Ok(self.now)
    }
}

/// Timing of a request that just entered service.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Started {
    pub started_at: VirtualTime,
    pub completes_at: VirtualTime,
}

/// Single-server FIFO queue. The service time of each request is fixed when it is
/// enqueued; the caller schedules a completion event at [`Started::completes_at`].
#[derive(Debug)]
pub struct ServiceQueue<R> {
    owner: EntityId,
    pending: VecDeque<(R, u64)>,
    current: Option<R>,
    busy_until: VirtualTime,
    enqueued: u64,
    served: u64,
}

impl<R> ServiceQueue<R> {
    pub fn new(owner: EntityId) -> Self {
        ServiceQueue {
            owner,
            pending: VecDeque::new(),
            current: None,
            busy_until: VirtualTime::ZERO,
            enqueued: 0,
            served: 0,
        }
    }

    pub fn owner(&self) -> EntityId {
        self.owner
    }

    /// Add a request. Returns its timing if the server was idle and it started at once.
    pub fn enqueue(&mut self, now: VirtualTime, request: R, service_ns: u64) -> Option<Started> {
        self.enqueued += 1;
        if self.current.is_none() {
            Some(self.start(now, request, service_ns))
        } else {
            self.pending.push_back((request, service_ns));
            None
        }
    }

    fn start(&mut self, now: VirtualTime, request: R, service_ns: u64) -> Started {
        self.current = Some(request);
        self.busy_until = now + service_ns;
        Started {
            started_at: now,
            completes_at: self.busy_until,
        }
    }

    /// Finish the request in service and start the next pending one, if any.
    pub fn complete(&mut self, now: VirtualTime) -> Result<(R, Option<Started>), SimError> {
        let done = self
            .current
            .take()
            .ok_or_else(|| SimError::Invariant(format!("{}: completion with nothing in service", self.owner)))?;
        if now != self.busy_until {
            return Err(SimError::Invariant(format!(
                "{}: completion at {now} but service ends at {}",
                self.owner, self.busy_until
            )));
        }
        self.served += 1;
        let next = self.pending.pop_front().map(|(r, s)| self.start(now, r, s));
        Ok((done, next))
    }

    pub fn current(&self) -> Option<&R> {
        self.current.as_ref()
    }

    pub fn is_idle(&self) -> bool {
        self.current.is_none()
    }

    /// Requests waiting or in service.
    pub fn len(&self) -> usize {
        self.pending.len() + usize::from(self.current.is_some())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn busy_until(&self) -> VirtualTime {
        self.busy_until
    }

    pub fn enqueued(&self) -> u64 {
        self.enqueued
    }

    pub fn served(&self) -> u64 {
        self.served
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Recorder {
        seen: Vec<(u64, &'static str)>,
    }

    impl Handler<&'static str> for Recorder {
        type Error = SimError;

        fn handle(&mut self, sched: &mut Scheduler<&'static str>, event: &'static str) -> Result<(), SimError> {
            self.seen.push((sched.now().as_nanos(), event));
            if event == "e1-spawns" {
                sched.schedule(VirtualTime::from_nanos(4), "e2")?;
            }
            Ok(())
        }
    }

    fn drain(sched: &mut Scheduler<&'static str>) -> Vec<&'static str> {
        std::iter::from_fn(|| sched.pop().map(|(_, e)| e)).collect()
    }

    #[test]
    fn pops_in_time_order() {
        let mut s = Scheduler::new();
        s.schedule(VirtualTime::from_nanos(5), "e1").unwrap();
        s.schedule(VirtualTime::from_nanos(3), "e2").unwrap();
        assert_eq!(drain(&mut s), vec!["e2", "e1"]);
    }

    #[test]
    fn equal_times_pop_in_insertion_order() {
        let mut s = Scheduler::new();
        s.schedule(VirtualTime::from_nanos(3), "a").unwrap();
        s.schedule(VirtualTime::from_nanos(3), "b").unwrap();
        assert_eq!(drain(&mut s), vec!["a", "b"]);
    }

    #[test]
    fn scheduling_into_the_past_fails() {
        let mut s = Scheduler::new();
        s.schedule(VirtualTime::from_nanos(4), "x").unwrap();
        s.pop();
        let err = s.schedule(VirtualTime::from_nanos(2), "late").unwrap_err();
        assert!(matches!(err, SimError::PastEvent { .. }));
    }

    #[test]
    fn run_until_idle_returns_final_clock() {
        let mut rec = Recorder { seen: vec![] };

        let mut empty: Scheduler<&'static str> = Scheduler::new();
        assert_eq!(empty.run_until_idle(&mut rec).unwrap(), VirtualTime::ZERO);

        let mut single = Scheduler::new();
        single.schedule(VirtualTime::from_nanos(7), "only").unwrap();
        assert_eq!(single.run_until_idle(&mut rec).unwrap().as_nanos(), 7);

        let mut chain = Scheduler::new();
        chain.schedule(VirtualTime::from_nanos(1), "e1-spawns").unwrap();
        assert_eq!(chain.run_until_idle(&mut rec).unwrap().as_nanos(), 4);
        assert_eq!(chain.events_processed(), 2);
    }

    #[test]
    fn budget_turns_runaway_models_into_errors() {
        struct Forever;
        impl Handler<()> for Forever {
            type Error = SimError;
            fn handle(&mut self, sched: &mut Scheduler<()>, _: ()) -> Result<(), SimError> {
                sched.schedule_in(1, ());
                Ok(())
            }
        }
        let mut s = Scheduler::with_budget(100);
        s.schedule_in(0, ());
        assert_eq!(s.run_until_idle(&mut Forever), Err(SimError::BudgetExceeded(100)));
    }

    #[test]
    fn service_queue_is_fifo_single_server() {
        let owner = EntityId::new(HostId(0), ServiceKind::Storage);
        let mut q = ServiceQueue::new(owner);
        let t0 = VirtualTime::ZERO;
        let first = q.enqueue(t0, "a", 10).unwrap();
        assert_eq!(first.completes_at.as_nanos(), 10);
        assert!(q.enqueue(t0, "b", 5).is_none());
        assert!(q.enqueue(VirtualTime::from_nanos(3), "c", 1).is_none());
        assert_eq!(q.len(), 3);

        let (done, next) = q.complete(VirtualTime::from_nanos(10)).unwrap();
        assert_eq!(done, "a");
        assert_eq!(next.unwrap().completes_at.as_nanos(), 15);
        let (done, next) = q.complete(VirtualTime::from_nanos(15)).unwrap();
        assert_eq!(done, "b");
        assert_eq!(next.unwrap().completes_at.as_nanos(), 16);
        let (done, next) = q.complete(VirtualTime::from_nanos(16)).unwrap();
        assert_eq!(done, "c");
        assert!(next.is_none());
        assert!(q.is_idle());
        assert_eq!((q.enqueued(), q.served()), (3, 3));
    }

    #[test]
    fn completing_an_idle_queue_is_a_model_bug() {
        let mut q: ServiceQueue<u8> = ServiceQueue::new(EntityId::new(HostId(1), ServiceKind::Client));
        assert!(matches!(q.complete(VirtualTime::ZERO), Err(SimError::Invariant(_))));
    }
}
