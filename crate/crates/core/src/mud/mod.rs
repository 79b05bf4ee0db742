//! The extended MUD document model.
//!
//! A MUD file is a YANG-modeled JSON document (RFC 8520) carrying access
//! control lists for a device. This module parses and serializes the document
//! with the two rate-limit extension keys (`packet-rate`, `byte-rate`) inside
//! the `actions` object, and validates the structural invariants the rest of
//! the pipeline relies on.

mod rate;
mod wire;

use std::collections::HashSet;
use std::fmt;
use std::net::IpAddr;

use serde_json::{Map, Value};
use thiserror::Error;

use crate::flow::{Direction, Protocol};

pub use rate::{parse_rate, RateLimit, RatePeriod};

/// Errors produced while parsing or validating a MUD document.
#[derive(Debug, Error)]
pub enum MudError {
    #[error("invalid JSON at byte {offset} (line {line}, column {column}): {message}")]
    Json {
        offset: usize,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("policy references ACL '{name}' which is not defined in the document")]
    DanglingAcl { name: String },
    #[error("invalid rate '{input}': {reason}")]
    RateGrammar { input: String, reason: String },
    #[error("invalid MUD document: {message}")]
    Validation { message: String },
}

impl MudError {
    fn validation(message: impl Into<String>) -> Self {
        MudError::Validation {
            message: message.into(),
        }
    }
}

/// Address family of an ACL.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AddressFamily {
    Ipv4,
    Ipv6,
}

impl AddressFamily {
    pub fn matches(self, addr: &IpAddr) -> bool {
        match self {
            AddressFamily::Ipv4 => addr.is_ipv4(),
            AddressFamily::Ipv6 => addr.is_ipv6(),
        }
    }
}

impl fmt::Display for AddressFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AddressFamily::Ipv4 => "ipv4",
            AddressFamily::Ipv6 => "ipv6",
        })
    }
}

/// Forwarding action of an ACE. `reject` in the document is normalized to
/// [`Forwarding::Drop`] at parse time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Forwarding {
    Accept,
    Drop,
}

/// Which end of the flow a port constraint applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PortRole {
    Source,
    Destination,
}

/// A single port constraint (only equality matches are supported).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PortMatch {
    pub port: u16,
    pub role: PortRole,
}

/// Match criteria of an ACE, reduced to the subset the datapath can enforce.
///
/// `dns_name` names the remote endpoint: the destination for ACLs referenced
/// by the from-device policy and the source for to-device ACLs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchCriteria {
    pub dns_name: Option<String>,
    pub src_address: Option<IpAddr>,
    pub dst_address: Option<IpAddr>,
    pub protocol: Option<Protocol>,
    pub port: Option<PortMatch>,
    pub direction_initiated: Option<Direction>,
    /// Unknown keys found directly inside the `matches` object, preserved
    /// verbatim for round-tripping vendor extensions.
    pub extensions: Map<String, Value>,
}

/// The ACE action group, extended with the two rate-limit fields.
///
/// Rate fields absent from the document stay `None`; that is distinct from
/// an explicit `"0/..."`, which is the no-limit sentinel.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionGroup {
    pub forwarding: Forwarding,
    pub packet_rate: Option<RateLimit>,
    pub byte_rate: Option<RateLimit>,
    pub extensions: Map<String, Value>,
}

impl ActionGroup {
    pub fn accept() -> Self {
        ActionGroup {
            forwarding: Forwarding::Accept,
            packet_rate: None,
            byte_rate: None,
            extensions: Map::new(),
        }
    }
}

/// Access Control Entry: a name, match criteria and actions.
#[derive(Debug, Clone, PartialEq)]
pub struct Ace {
    pub name: String,
    pub matches: MatchCriteria,
    pub actions: ActionGroup,
}

/// Access Control List: an ordered list of ACEs over one address family.
#[derive(Debug, Clone, PartialEq)]
pub struct Acl {
    pub name: String,
    pub address_family: AddressFamily,
    pub aces: Vec<Ace>,
}

/// A parsed MUD document.
#[derive(Debug, Clone, PartialEq)]
pub struct MudFile {
    pub mud_version: u32,
    pub mud_url: String,
    pub last_update: String,
    pub cache_validity: Option<u32>,
    pub is_supported: bool,
    pub system_info: Option<String>,
    pub from_device_policy: Vec<String>,
    pub to_device_policy: Vec<String>,
    pub acls: Vec<Acl>,
    /// Unknown keys from the `ietf-mud:mud` container, preserved verbatim.
    pub extensions: Map<String, Value>,
}

impl MudFile {
    pub fn acl(&self, name: &str) -> Option<&Acl> {
        self.acls.iter().find(|a| a.name == name)
    }

    /// Direction of an ACL, derived from which device policy references it.
    /// Unreferenced ACLs default to from-device.
    pub fn acl_direction(&self, name: &str) -> Direction {
        if self.from_device_policy.iter().any(|n| n == name) {
            Direction::FromDevice
        } else if self.to_device_policy.iter().any(|n| n == name) {
            Direction::ToDevice
        } else {
            Direction::FromDevice
        }
    }

    /// Checks the structural invariants of the document.
    pub fn validate(&self) -> Result<(), MudError> {
        if self.mud_version < 1 {
            return Err(MudError::validation("mud-version must be >= 1"));
        }

        let mut names = HashSet::new();
        for acl in &self.acls {
            if !names.insert(acl.name.as_str()) {
                return Err(MudError::validation(format!(
                    "duplicate ACL name '{}'",
                    acl.name
                )));
            }
            let mut ace_names = HashSet::new();
            for ace in &acl.aces {
                if !ace_names.insert(ace.name.as_str()) {
                    return Err(MudError::validation(format!(
                        "duplicate ACE name '{}' in ACL '{}'",
                        ace.name, acl.name
                    )));
                }
                ace.validate_in(acl, self.acl_direction(&acl.name))?;
            }
        }

        for name in self.from_device_policy.iter().chain(&self.to_device_policy) {
            if self.acl(name).is_none() {
                return Err(MudError::DanglingAcl { name: name.clone() });
            }
        }
        Ok(())
    }
}

impl Ace {
    fn validate_in(&self, acl: &Acl, direction: Direction) -> Result<(), MudError> {
        let m = &self.matches;
        for (label, addr) in [("source", &m.src_address), ("destination", &m.dst_address)] {
            if let Some(addr) = addr {
                if !acl.address_family.matches(addr) {
                    return Err(MudError::validation(format!(
                        "ACE '{}' {label} address {addr} does not match ACL '{}' family {}",
                        self.name, acl.name, acl.address_family
                    )));
                }
            }
        }
        if m.dns_name.is_some() {
            let literal_remote = match direction {
                Direction::FromDevice => &m.dst_address,
                Direction::ToDevice => &m.src_address,
            };
            if literal_remote.is_some() {
                return Err(MudError::validation(format!(
                    "ACE '{}' has both a DNS name and a literal address for the remote endpoint",
                    self.name
                )));
            }
        }
        if m.port.is_some() && !matches!(m.protocol, Some(Protocol::Tcp) | Some(Protocol::Udp)) {
            return Err(MudError::validation(format!(
                "ACE '{}' has a port match without a tcp/udp protocol",
                self.name
            )));
        }
        Ok(())
    }
}

/// Parses a MUD JSON document and validates its invariants.
pub fn parse_mud_file(text: &str) -> Result<MudFile, MudError> {
    let doc: wire::Document = serde_json::from_str(text).map_err(|e| json_error(text, &e))?;
    let mud = wire::into_domain(doc)?;
    mud.validate()?;
    Ok(mud)
}

/// Serializes a MUD file back to the RFC 8520 JSON layout.
///
/// The caller is expected to hand in a valid document; parsing the output of
/// this function yields a structurally equal [`MudFile`].
pub fn serialize_mud_file(mud: &MudFile) -> String {
    let doc = wire::from_domain(mud);
    serde_json::to_string_pretty(&doc).expect("MUD wire model is always serializable")
}

fn json_error(text: &str, err: &serde_json::Error) -> MudError {
    let (line, column) = (err.line(), err.column());
    let offset = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum::<usize>()
        + column.saturating_sub(1);
    MudError::Json {
        offset,
        line,
        column,
        message: err.to_string(),
    }
}
