use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::ConfigError;
use crate::sim::HostId;

/// Chunk placement policy.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub enum Placement {
    /// Primaries cycle over a stripe-width subset of the storage nodes.
    #[default]
    RoundRobin,
    /// All primaries on the writer's own host.
    Local,
    /// All primaries on the target host of the named co-locate group.
    CoLocate(String),
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Placement::RoundRobin => f.write_str("round_robin"),
            Placement::Local => f.write_str("local"),
            Placement::CoLocate(g) => write!(f, "co_locate:{g}"),
        }
    }
}

impl FromStr for Placement {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "round_robin" => Ok(Placement::RoundRobin),
            "local" => Ok(Placement::Local),
            _ => match s.strip_prefix("co_locate:") {
                Some(g) if !g.is_empty() => Ok(Placement::CoLocate(g.to_string())),
                _ => Err(ConfigError::Invalid(format!(
                    "unknown placement {s:?} (expected round_robin, local or co_locate:<group>)"
                ))),
            },
        }
    }
}

impl Serialize for Placement {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Placement {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// System-wide storage knobs and deployment shape.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorageConfig {
    pub n_hosts: u32,
    pub n_storage_nodes: u32,
    pub n_clients: u32,
    /// Client and storage services share hosts.
    pub collocated: bool,
    pub chunk_size: u64,
    pub stripe_width: u32,
    pub replication_level: u32,
    pub placement: Placement,
}

impl Default for StorageConfig {
    /// One manager host plus 19 hosts each running a storage node and a client.
    fn default() -> Self {
        StorageConfig {
            n_hosts: 20,
            n_storage_nodes: 19,
            n_clients: 19,
            collocated: true,
            chunk_size: 1_000_000,
            stripe_width: 19,
            replication_level: 1,
            placement: Placement::RoundRobin,
        }
    }
}

impl StorageConfig {
    /// Parse and validate a TOML document.
    pub fn from_toml(text: &str) -> Result<StorageConfig, ConfigError> {
        let v: StorageConfig = toml::from_str(text).map_err(|e| ConfigError::Invalid(format!("config: {e}")))?;
        v.validate()?;
        Ok(v)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.chunk_size == 0 {
            return bad("chunk_size must be positive".into());
        }
        if self.n_storage_nodes == 0 {
            return bad("at least one storage node is required".into());
        }
        if self.n_clients == 0 {
            return bad("at least one client is required".into());
        }
        if self.stripe_width == 0 || self.stripe_width > self.n_storage_nodes {
            return bad(format!(
                "stripe_width {} must be between 1 and n_storage_nodes ({})",
                self.stripe_width, self.n_storage_nodes
            ));
        }
        if self.replication_level == 0 || self.replication_level > self.n_storage_nodes {
            return bad(format!(
                "replication_level {} must be between 1 and n_storage_nodes ({})",
                self.replication_level, self.n_storage_nodes
            ));
        }
        if self.collocated && self.n_clients > self.n_storage_nodes {
            return bad(format!(
                "collocated deployment needs n_clients ({}) <= n_storage_nodes ({})",
                self.n_clients, self.n_storage_nodes
            ));
        }
        let needed = self.required_hosts();
        if self.n_hosts < needed {
            return bad(format!(
                "n_hosts {} is too small; this layout needs {needed}",
                self.n_hosts
            ));
        }
        Ok(())
    }

    fn required_hosts(&self) -> u32 {
        1 + self.n_storage_nodes + if self.collocated { 0 } else { self.n_clients }
    }

    pub fn topology(&self) -> Result<Topology, ConfigError> {
        self.validate()?;
        Ok(Topology::from_config(self))
    }
}

/// Which services run on which host.
///
/// Host 0 runs the manager. Storage nodes occupy hosts `1..=n_storage_nodes`. Clients
/// share the first `n_clients` storage hosts when collocated and follow them otherwise.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Topology {
    pub n_hosts: u32,
    pub manager: HostId,
    pub storage: Vec<HostId>,
    pub clients: Vec<HostId>,
}

impl Topology {
    fn from_config(c: &StorageConfig) -> Topology {
        let storage: Vec<HostId> = (1..=c.n_storage_nodes).map(HostId).collect();
        let first_client = if c.collocated { 1 } else { c.n_storage_nodes + 1 };
        let clients = (first_client..first_client + c.n_clients).map(HostId).collect();
        Topology {
            n_hosts: c.n_hosts,
            manager: HostId(0),
            storage,
            clients,
        }
    }

    pub fn is_storage(&self, h: HostId) -> bool {
        self.storage.binary_search(&h).is_ok()
    }

    pub fn is_client(&self, h: HostId) -> bool {
        self.clients.binary_search(&h).is_ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_the_twenty_node_testbed() {
        let t = StorageConfig::default().topology().unwrap();
        assert_eq!(t.storage.len(), 19);
        assert_eq!(t.clients, t.storage);
        assert_eq!(t.manager, HostId(0));
    }

    #[test]
    fn separate_clients_follow_storage_hosts() {
        let c = StorageConfig {
            n_hosts: 3,
            n_storage_nodes: 1,
            n_clients: 1,
            collocated: false,
            stripe_width: 1,
            ..StorageConfig::default()
        };
        let t = c.topology().unwrap();
        assert_eq!(t.storage, vec![HostId(1)]);
        assert_eq!(t.clients, vec![HostId(2)]);
        assert!(!t.is_client(HostId(1)));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = StorageConfig::default();
        for c in [
            StorageConfig {
                stripe_width: 20,
                ..base.clone()
            },
            StorageConfig {
                replication_level: 0,
                ..base.clone()
            },
            StorageConfig {
                replication_level: 20,
                ..base.clone()
            },
            StorageConfig {
                chunk_size: 0,
                ..base.clone()
            },
            StorageConfig {
                n_hosts: 19,
                ..base.clone()
            },
        ] {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn placement_text_form() {
        for s in ["round_robin", "local", "co_locate:g0"] {
            assert_eq!(s.parse::<Placement>().unwrap().to_string(), s);
        }
        assert!("co_locate:".parse::<Placement>().is_err());
        assert!("striped".parse::<Placement>().is_err());
    }

    #[test]
    fn config_file_keys_match_field_names() {
        let text = toml::to_string(&StorageConfig::default()).unwrap();
        let back: StorageConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, StorageConfig::default());
        assert!(toml::from_str::<StorageConfig>(&format!("{text}\nbogus = 1")).is_err());
    }
}
