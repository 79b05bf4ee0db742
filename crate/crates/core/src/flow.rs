//! Shared flow vocabulary: directions, protocols, lookup keys and allowlist
//! rules exchanged between the compiler, the datapath and the replay harness.

use std::fmt;
use std::net::IpAddr;

use serde::{Deserialize, Serialize};

/// Rule/traffic direction relative to the IoT device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    FromDevice,
    ToDevice,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::FromDevice => "from-device",
            Direction::ToDevice => "to-device",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Transport protocols covered by the ACL model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Tcp,
    Udp,
    Icmp,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Tcp => "tcp",
            Protocol::Udp => "udp",
            Protocol::Icmp => "icmp",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Exact-match allowlist lookup key.
///
/// The port is the destination port for `from-device` rules and the source
/// port for `to-device` rules; 0 is the wildcard used for ICMP, which has no
/// ports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FlowKey {
    pub src_address: IpAddr,
    pub dst_address: IpAddr,
    pub direction: Direction,
    pub protocol: Protocol,
    pub port: u16,
}

impl FlowKey {
    /// Both addresses carry the same family.
    pub fn same_family(&self) -> bool {
        self.src_address.is_ipv4() == self.dst_address.is_ipv4()
    }
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} -> {} port {}",
            self.direction, self.protocol, self.src_address, self.dst_address, self.port
        )
    }
}

/// Name of the ACL and ACE a compiled rule came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleOrigin {
    pub acl: String,
    pub ace: String,
}

/// A concrete datapath rule: an allowlist key plus per-window maxima.
/// Limits of 0 mean unlimited.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowRule {
    pub key: FlowKey,
    pub max_packets_per_window: u64,
    pub max_bytes_per_window: u64,
    pub window_secs: u64,
    pub origin: RuleOrigin,
}

/// Index of the window a timestamp falls into, for windows anchored at
/// `anchor` with the given size.
///
/// Windows are closed at their upper edge: a timestamp landing exactly on a
/// boundary belongs to the earlier window, matching the trace-analysis rule
/// that only advances the window start while a record cannot be included.
pub(crate) fn window_slot(anchor: u64, size: u64, ts: u64) -> u64 {
    debug_assert!(size > 0);
    let d = ts.saturating_sub(anchor);
    if d == 0 {
        0
    } else {
        (d - 1) / size
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_timestamp_stays_in_earlier_window() {
        let w = 60;
        assert_eq!(window_slot(0, w, 0), 0);
        assert_eq!(window_slot(0, w, 59), 0);
        assert_eq!(window_slot(0, w, 60), 0);
        assert_eq!(window_slot(0, w, 61), 1);
        assert_eq!(window_slot(0, w, 300), 4);
        assert_eq!(window_slot(0, w, 301), 5);
    }

    #[test]
    fn key_family_check() {
        let k = FlowKey {
            src_address: "10.0.0.1".parse().unwrap(),
            dst_address: "2001:db8::1".parse().unwrap(),
            direction: Direction::FromDevice,
            protocol: Protocol::Tcp,
            port: 443,
        };
        assert!(!k.same_family());
    }
}
