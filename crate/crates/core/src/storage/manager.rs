//! Metadata manager: file to chunk mapping, chunk placement and storage usage.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use super::config::Placement;
use crate::error::ConfigError;
use crate::sim::HostId;

/// Effective configuration for one file after per-file overrides are applied.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FilePolicy {
    pub placement: Placement,
    pub replication_level: u32,
    pub stripe_width: u32,
}

/// One chunk of a file and the hosts holding its replicas, primary first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChunkMeta {
    pub offset: u64,
    pub len: u64,
    pub replicas: Vec<HostId>,
}

#[derive(Clone, Debug)]
pub struct FileMeta {
    pub name: String,
    /// Bytes covered by committed chunks.
    pub size: u64,
    /// Bytes allocated so far, committed or not.
    reserved: u64,
    pub chunks: Vec<ChunkMeta>,
    pub policy: FilePolicy,
    pub sealed: bool,
}

/// Part of a read request served by one chunk.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReadSlice {
    pub chunk: usize,
    pub len: u64,
    pub replicas: Vec<HostId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ManagerError {
    Config(ConfigError),
    /// The request does not make sense for the file's current state.
    Usage(String),
}

impl From<ConfigError> for ManagerError {
    fn from(e: ConfigError) -> Self {
        ManagerError::Config(e)
    }
}

/// Replica sets for `n_chunks` consecutive chunks.
///
/// `storage` lists the storage hosts in cycle order. Primaries cycle over the
/// `stripe_width` nodes starting at position `first`. Each chunk's further replicas are
/// the next distinct nodes after its primary, first inside the stripe subset and then
/// continuing around the full cycle.
pub fn plan_replicas(
    storage: &[HostId],
    first: usize,
    stripe_width: usize,
    replication_level: usize,
    n_chunks: usize,
) -> Result<Vec<Vec<HostId>>, ConfigError> {
    let n = storage.len();
    if replication_level == 0 || replication_level > n {
        return Err(ConfigError::TooManyReplicas {
            wanted: replication_level as u32,
            available: n as u32,
        });
    }
    if stripe_width == 0 || stripe_width > n {
        return Err(ConfigError::Invalid(format!(
            "stripe width {stripe_width} does not fit {n} storage nodes"
        )));
    }
    let subset: Vec<usize> = (0..stripe_width).map(|k| (first + k) % n).collect();
    let rest: Vec<usize> = (0..n - stripe_width).map(|k| (first + stripe_width + k) % n).collect();
    Ok((0..n_chunks)
        .map(|i| {
            let p = i % stripe_width;
            (0..stripe_width)
                .map(|j| subset[(p + j) % stripe_width])
                .chain(rest.iter().copied())
                .take(replication_level)
                .map(|pos| storage[pos])
                .collect()
        })
        .collect())
}

#[derive(Debug)]
pub struct ManagerState {
    storage: Vec<HostId>,
    chunk_size: u64,
    files: HashMap<String, FileMeta>,
    usage: BTreeMap<HostId, u64>,
    cursor: usize,
}

impl ManagerState {
    pub fn new(storage: Vec<HostId>, chunk_size: u64) -> Self {
        assert!(chunk_size > 0);
        let usage = storage.iter().map(|&h| (h, 0)).collect();
        ManagerState {
            storage,
            chunk_size,
            files: HashMap::new(),
            usage,
            cursor: 0,
        }
    }

    pub fn chunk_size(&self) -> u64 {
        self.chunk_size
    }

    pub fn file(&self, name: &str) -> Option<&FileMeta> {
        self.files.get(name)
    }

    pub fn usage(&self) -> &BTreeMap<HostId, u64> {
        &self.usage
    }

    pub fn total_usage(&self) -> u64 {
        self.usage.values().sum()
    }

    fn position(&self, host: HostId) -> Option<usize> {
        self.storage.iter().position(|&h| h == host)
    }

    /// Allocate chunks for `size` bytes written at `offset` of `file`.
    ///
    /// Writes are append-only and a file cannot be written after it is sealed. The
    /// returned chunks are not visible to readers until [`ManagerState::commit`].
    pub fn allocate(
        &mut self,
        file: &str,
        offset: u64,
        size: u64,
        policy: &FilePolicy,
        writer: HostId,
        groups: &BTreeMap<String, HostId>,
    ) -> Result<Vec<ChunkMeta>, ManagerError> {
        let meta = self.files.entry(file.to_string()).or_insert_with(|| FileMeta {
            name: file.to_string(),
            size: 0,
            reserved: 0,
            chunks: Vec::new(),
            policy: policy.clone(),
            sealed: false,
        });
        if meta.sealed {
            return Err(ManagerError::Usage(format!(
                "file {file:?} is already closed by its writer"
            )));
        }
        if offset != meta.reserved {
            return Err(ManagerError::Usage(format!(
                "write to {file:?} at offset {offset} is not an append (file has {} bytes)",
                meta.reserved
            )));
        }
        let policy = meta.policy.clone();
        let n_chunks = size.div_ceil(self.chunk_size) as usize;
        let n = self.storage.len();

        let (first, stripe) = match &policy.placement {
            Placement::RoundRobin => {
                let first = self.cursor;
                if n_chunks > 0 {
                    self.cursor = (self.cursor + 1) % n;
                }
                (first, policy.stripe_width as usize)
            }
            Placement::Local => (self.position(writer).ok_or(ConfigError::NoLocalStorage(writer))?, 1),
            Placement::CoLocate(group) => {
                let target = *groups
                    .get(group)
                    .ok_or_else(|| ConfigError::UnknownGroup(group.clone()))?;
                let pos = self.position(target).ok_or_else(|| {
                    ConfigError::Invalid(format!(
                        "co-locate group {group:?} targets {target}, which runs no storage"
                    ))
                })?;
                (pos, 1)
            }
        };
        let replicas = plan_replicas(
            &self.storage,
            first,
            stripe,
            policy.replication_level as usize,
            n_chunks,
        )?;

        let chunks: Vec<ChunkMeta> = replicas
            .into_iter()
            .enumerate()
            .map(|(i, replicas)| {
                let start = offset + i as u64 * self.chunk_size;
                let len = self.chunk_size.min(offset + size - start);
                ChunkMeta {
                    offset: start,
                    len,
                    replicas,
                }
            })
            .collect();
        let meta = self.files.get_mut(file).expect("inserted above");
        meta.reserved += size;
        for c in &chunks {
            for h in &c.replicas {
                *self.usage.get_mut(h).expect("replica on a storage host") += self.chunk_size;
            }
        }
        Ok(chunks)
    }

    /// Publish the chunk map of a finished write.
    pub fn commit(&mut self, file: &str, chunks: &[ChunkMeta]) -> Result<(), ManagerError> {
        let meta = self
            .files
            .get_mut(file)
            .ok_or_else(|| ManagerError::Usage(format!("commit for unknown file {file:?}")))?;
        for c in chunks {
            if c.offset != meta.size {
                return Err(ManagerError::Usage(format!("out-of-order commit for {file:?}")));
            }
            meta.size += c.len;
            meta.chunks.push(c.clone());
        }
        Ok(())
    }

    pub fn seal(&mut self, file: &str) {
        if let Some(m) = self.files.get_mut(file) {
            m.sealed = true;
        }
    }

    /// Chunks covering `[offset, offset + size)` and how many bytes each contributes.
    pub fn lookup(&self, file: &str, offset: u64, size: u64) -> Result<Vec<ReadSlice>, ManagerError> {
        let meta = self
            .files
            .get(file)
            .ok_or_else(|| ManagerError::Usage(format!("read of nonexistent file {file:?}")))?;
        let end = offset.saturating_add(size);
        if end > meta.size {
            return Err(ManagerError::Usage(format!(
                "read of {file:?} range [{offset}, {end}) beyond its {} committed bytes",
                meta.size
            )));
        }
        // Chunks are sorted by offset; find the first one ending after `offset`.
        let first = meta.chunks.partition_point(|c| c.offset + c.len <= offset);
        Ok(meta.chunks[first..]
            .iter()
            .enumerate()
            .take_while(|(_, c)| c.offset < end)
            .map(|(i, c)| {
                let lo = c.offset.max(offset);
                let hi = (c.offset + c.len).min(end);
                ReadSlice {
                    chunk: first + i,
                    len: hi - lo,
                    replicas: c.replicas.clone(),
                }
            })
            .collect())
    }

    /// Usage must equal the chunk slots of every allocated replica.
    pub fn usage_is_consistent(&self, in_flight: &[ChunkMeta]) -> bool {
        let mut expected: BTreeMap<HostId, u64> = self.storage.iter().map(|&h| (h, 0)).collect();
        let committed = self.files.values().flat_map(|f| f.chunks.iter());
        for c in committed.chain(in_flight.iter()) {
            for h in &c.replicas {
                *expected.entry(*h).or_default() += self.chunk_size;
            }
        }
        expected == self.usage
    }

    /// Hosts holding a replica of every chunk of every listed file.
    ///
    /// Files without chunks place no constraint; `None` if no file has chunks.
    pub fn hosts_holding_all(&self, files: &[&str]) -> Option<Vec<HostId>> {
        let mut candidates: Option<Vec<HostId>> = None;
        for name in files {
            let Some(meta) = self.files.get(*name) else { continue };
            for c in &meta.chunks {
                candidates = Some(match candidates {
                    None => {
                        let mut v = c.replicas.clone();
                        v.sort_unstable();
                        v
                    }
                    Some(prev) => prev.into_iter().filter(|h| c.replicas.contains(h)).collect(),
                });
            }
        }
        candidates
    }
}

/// Pick the replica to read: a copy on the reader's own host if there is one,
/// otherwise uniformly at random.
pub fn replica_select<R: Rng>(replicas: &[HostId], reader: HostId, rng: &mut R) -> HostId {
    assert!(!replicas.is_empty(), "chunk without replicas");
    if replicas.contains(&reader) {
        return reader;
    }
    replicas[rng.gen_range(0..replicas.len())]
}
