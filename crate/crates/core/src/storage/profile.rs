use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::net::LinkKind;
use crate::sim::HostId;
use crate::units::Rate;

pub const DEFAULT_FRAME_SIZE: u64 = 64 * 1024;
pub const DEFAULT_CONTROL_MESSAGE_SIZE: u64 = 1024;

/// Calibrated service times for every modeled component.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatformProfile {
    /// ns per byte over a remote link.
    pub mu_net_remote: Rate,
    /// ns per byte between services on the same host.
    pub mu_net_loopback: Rate,
    /// Fixed latency added by the network core to each remote frame, in ns.
    #[serde(default)]
    pub core_latency: u64,
    /// Optional aggregate fabric capacity, ns per byte across all remote traffic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub core_mu_net: Option<Rate>,
    /// ns per stored or fetched byte.
    pub mu_storage: Rate,
    /// ns per manager request.
    pub mu_manager: Rate,
    /// ns per request handled by a client service.
    #[serde(default)]
    pub mu_client: Rate,
    #[serde(default = "default_frame_size")]
    pub frame_size: u64,
    #[serde(default = "default_control_size")]
    pub control_message_size: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub host_overrides: Vec<HostOverride>,
}

fn default_frame_size() -> u64 {
    DEFAULT_FRAME_SIZE
}

fn default_control_size() -> u64 {
    DEFAULT_CONTROL_MESSAGE_SIZE
}

impl Default for Rate {
    fn default() -> Self {
        Rate::ZERO
    }
}

/// Per-host replacement values for heterogeneous machines.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HostOverride {
    pub host: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_storage: Option<Rate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_net_remote: Option<Rate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_net_loopback: Option<Rate>,
}

impl Default for PlatformProfile {
    /// 1 Gbps remote links, 10 Gbps loopback, RAM-disk-like storage.
    fn default() -> Self {
        PlatformProfile {
            mu_net_remote: Rate::from_int(8),
            mu_net_loopback: Rate::new(4, 5).unwrap(),
            core_latency: 0,
            core_mu_net: None,
            mu_storage: Rate::from_int(1),
            mu_manager: Rate::from_int(200_000),
            mu_client: Rate::ZERO,
            frame_size: DEFAULT_FRAME_SIZE,
            control_message_size: DEFAULT_CONTROL_MESSAGE_SIZE,
            host_overrides: Vec::new(),
        }
    }
}

impl PlatformProfile {
    /// Parse and validate a TOML document.
    pub fn from_toml(text: &str) -> Result<PlatformProfile, ConfigError> {
        let v: PlatformProfile = toml::from_str(text).map_err(|e| ConfigError::Invalid(format!("profile: {e}")))?;
        v.validate()?;
        Ok(v)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("profile serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.frame_size == 0 {
            return Err(ConfigError::Invalid("frame_size must be positive".into()));
        }
        if self.mu_net_remote.is_zero() || self.mu_net_loopback.is_zero() {
            return Err(ConfigError::Invalid(
                "network per-byte times must be positive for both link kinds".into(),
            ));
        }
        let mut seen = std::collections::BTreeSet::new();
        for o in &self.host_overrides {
            if !seen.insert(o.host) {
                return Err(ConfigError::Invalid(format!("duplicate override for host {}", o.host)));
            }
        }
        Ok(())
    }

    fn host_override(&self, host: HostId) -> Option<&HostOverride> {
        self.host_overrides.iter().find(|o| o.host == host.0)
    }

    pub fn storage_mu(&self, host: HostId) -> Rate {
        self.host_override(host)
            .and_then(|o| o.mu_storage)
            .unwrap_or(self.mu_storage)
    }

    pub fn net_mu(&self, link: LinkKind, host: HostId) -> Rate {
        let o = self.host_override(host);
        match link {
            LinkKind::Remote => o.and_then(|o| o.mu_net_remote).unwrap_or(self.mu_net_remote),
            LinkKind::Loopback => o.and_then(|o| o.mu_net_loopback).unwrap_or(self.mu_net_loopback),
        }
    }

    /// Per-frame transmission time between two hosts. A remote transfer moves at the
    /// pace of the slower endpoint.
    pub fn transmission_time(&self, bytes: u64, src: HostId, dst: HostId) -> u64 {
        let link = LinkKind::between(src, dst);
        let a = self.net_mu(link, src).time_for(bytes);
        if src == dst {
            a
        } else {
            a.max(self.net_mu(link, dst).time_for(bytes))
        }
    }

    /// Latency the core adds to a frame; loopback traffic never enters the core.
    pub fn latency(&self, link: LinkKind) -> u64 {
        match link {
            LinkKind::Remote => self.core_latency,
            LinkKind::Loopback => 0,
        }
    }
}
