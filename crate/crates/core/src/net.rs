//! Network vocabulary: requests, frames and link kinds.
//!
//! Each host owns an out-queue and an in-queue (full duplex). A request is cut into
//! frames that pass through the sender's out-queue, the network core and the
//! receiver's in-queue. Frames are forwarded cut-through: a frame becomes available
//! at the receiver as soon as its transmission starts plus the core latency, so an
//! uncontended transfer of `b` bytes costs `latency + b * mu`. Contention appears when
//! several requests share an out-queue (fan-out) or an in-queue (incast).

use serde::{Deserialize, Serialize};

use crate::sim::{HostId, ServiceKind};
use crate::storage::PlatformProfile;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkKind {
    Remote,
    Loopback,
}

impl LinkKind {
    pub fn between(src: HostId, dst: HostId) -> LinkKind {
        if src == dst {
            LinkKind::Loopback
        } else {
            LinkKind::Remote
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    Control,
    ChunkData,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetRequest {
    pub id: u64,
    pub src: HostId,
    pub dst: HostId,
    pub kind: RequestKind,
    pub payload_bytes: u64,
    pub deliver_to: ServiceKind,
}

impl NetRequest {
    pub fn link(&self) -> LinkKind {
        LinkKind::between(self.src, self.dst)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Frame {
    pub request_id: u64,
    pub index: u32,
    pub bytes: u64,
}

/// Bytes a request occupies on the wire. Every message is at least one control
/// message long.
pub fn wire_bytes(payload_bytes: u64, control_message_size: u64) -> u64 {
    payload_bytes.max(control_message_size)
}

/// Number of frames for `wire` bytes; never zero.
pub fn frame_count(wire: u64, frame_size: u64) -> u64 {
    wire.div_ceil(frame_size).max(1)
}

/// Frames of one request, all `frame_size` long except possibly the last.
#[derive(Clone, Debug)]
pub struct Frames {
    request_id: u64,
    remaining: u64,
    frame_size: u64,
    next: u32,
    total: u32,
}

impl Iterator for Frames {
    type Item = Frame;

    fn next(&mut self) -> Option<Frame> {
        if self.next == self.total {
            return None;
        }
        let bytes = self.remaining.min(self.frame_size);
        self.remaining -= bytes;
        let f = Frame {
            request_id: self.request_id,
            index: self.next,
            bytes,
        };
        self.next += 1;
        Some(f)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = (self.total - self.next) as usize;
        (n, Some(n))
    }
}

impl ExactSizeIterator for Frames {}

/// Split `request` into frames. Payloads smaller than a control message are padded
/// to `control_message_size`.
pub fn decompose(request: &NetRequest, frame_size: u64, control_message_size: u64) -> Frames {
    assert!(frame_size > 0, "frame_size must be positive");
    let wire = wire_bytes(request.payload_bytes, control_message_size);
    let total = u32::try_from(frame_count(wire, frame_size)).expect("too many frames for one request");
    Frames {
        request_id: request.id,
        remaining: wire,
        frame_size,
        next: 0,
        total,
    }
}

/// Uncontended transit time of one frame: transmission at the link's per-byte time
/// plus the core latency for remote links.
pub fn frame_service_time(frame: &Frame, link: LinkKind, profile: &PlatformProfile) -> u64 {
    let mu = match link {
        LinkKind::Remote => profile.mu_net_remote,
        LinkKind::Loopback => profile.mu_net_loopback,
    };
    mu.time_for(frame.bytes) + profile.latency(link)
}

/// Tracks which frames of each request have cleared the destination in-queue.
///
/// Used by the cluster model to decide when a request is reassembled; kept separate
/// so delivery can be checked on its own.
#[derive(Debug, Default)]
pub struct Reassembly {
    outstanding: std::collections::HashMap<u64, (u32, u32)>,
}

impl Reassembly {
    pub fn expect(&mut self, request_id: u64, frames: u32) {
        let prev = self.outstanding.insert(request_id, (frames, 0));
        assert!(prev.is_none(), "request {request_id} registered twice");
    }

    /// Record one processed frame. Returns true when it was the last missing frame.
    pub fn frame_done(&mut self, request_id: u64) -> Result<bool, crate::sim::SimError> {
        let entry = self.outstanding.get_mut(&request_id).ok_or_else(|| {
            crate::sim::SimError::Invariant(format!("frame for unknown or completed request {request_id}"))
        })?;
        entry.1 += 1;
        if entry.1 == entry.0 {
            self.outstanding.remove(&request_id);
            Ok(true)
        } else {
            Ok(false)
        }
    }

    /// Requests still missing frames; non-empty at drain time means a model bug.
    pub fn incomplete(&self) -> Vec<u64> {
        let mut ids: Vec<u64> = self.outstanding.keys().copied().collect();
        ids.sort_unstable();
        ids
    }
}
