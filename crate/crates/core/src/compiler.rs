//! Translates a parsed MUD file plus device context into concrete datapath
//! rules: one exact-match allowlist entry per accept ACE, remote address and
//! device address, with rate limits normalized to per-window counts. Anything
//! not covered by an allowlist entry is dropped by the datapath, and that
//! default-drop posture is recorded explicitly per direction so backends can
//! install it as a policy of its own.

use std::collections::HashMap;
use std::net::IpAddr;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{Direction, FlowKey, FlowRule, Protocol, RuleOrigin};
use crate::mud::{Forwarding, MatchCriteria, MudFile, PortRole, RateLimit};

/// Canonical analysis/enforcement window.
pub const DEFAULT_WINDOW_SECS: u64 = 60;

/// Static device context: the device's addresses and a deterministic
/// hostname resolution map standing in for live DNS.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DeviceContext {
    pub device_id: String,
    #[serde(default)]
    pub device_addresses: Vec<IpAddr>,
    #[serde(default)]
    pub dns_map: HashMap<String, Vec<IpAddr>>,
}

impl DeviceContext {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CompileError> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| CompileError::Config {
            message: format!("{}: {e}", path.as_ref().display()),
        })?;
        let ctx: DeviceContext = serde_json::from_str(&text).map_err(|e| CompileError::Config {
            message: format!("{}: {e}", path.as_ref().display()),
        })?;
        ctx.validate()?;
        Ok(ctx)
    }

    pub fn validate(&self) -> Result<(), CompileError> {
        for (host, addrs) in &self.dns_map {
            if addrs.is_empty() {
                return Err(CompileError::Config {
                    message: format!("dns_map entry '{host}' has no addresses"),
                });
            }
            let v4 = addrs[0].is_ipv4();
            if addrs.iter().any(|a| a.is_ipv4() != v4) {
                return Err(CompileError::Config {
                    message: format!("dns_map entry '{host}' mixes address families"),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum CompileError {
    #[error("cannot resolve host '{host}' via the device context")]
    UnresolvedHost { host: String },
    #[error("invalid device context: {message}")]
    Config { message: String },
}

/// Explicit record of the drop-everything-else posture for one direction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DefaultDrop {
    pub direction: Direction,
    pub device_id: String,
}

/// Output of compilation: allowlist rules, the bookkeeping default-drop
/// records, and warnings for ACEs that were skipped.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CompileOutput {
    pub rules: Vec<FlowRule>,
    pub default_drops: Vec<DefaultDrop>,
    pub warnings: Vec<String>,
}

impl CompileOutput {
    /// Total firewall policies this MUD file produces (allow rules plus the
    /// per-direction default drops).
    pub fn policy_count(&self) -> usize {
        self.rules.len() + self.default_drops.len()
    }
}

/// Normalizes a rate limit to a per-window count: `ceil(count * window /
/// period)`. The zero sentinel passes through as 0 (unlimited).
pub fn rate_to_window(limit: RateLimit, window_secs: u64) -> u64 {
    assert!(window_secs > 0, "window must be positive");
    if limit.count == 0 {
        return 0;
    }
    let num = limit.count as u128 * window_secs as u128;
    let den = limit.period.as_secs() as u128;
    num.div_ceil(den) as u64
}

/// Compiles with the canonical 60 second window.
pub fn compile(mud: &MudFile, ctx: &DeviceContext) -> Result<CompileOutput, CompileError> {
    compile_with_window(mud, ctx, DEFAULT_WINDOW_SECS)
}

/// Compiles a MUD file into datapath rules over the given window size.
///
/// Every accept ACE yields one rule per resolved remote address crossed with
/// every device address of the matching family; drop/reject ACEs yield
/// nothing (dropping is the default posture). ACEs whose family or port
/// shape cannot be expressed as an exact-match key are skipped with a
/// warning.
pub fn compile_with_window(
    mud: &MudFile,
    ctx: &DeviceContext,
    window_secs: u64,
) -> Result<CompileOutput, CompileError> {
    assert!(window_secs > 0, "window must be positive");
    let mut out = CompileOutput::default();

    for (direction, policy) in [
        (Direction::FromDevice, &mud.from_device_policy),
        (Direction::ToDevice, &mud.to_device_policy),
    ] {
        if policy.is_empty() {
            continue;
        }
        out.default_drops.push(DefaultDrop {
            direction,
            device_id: ctx.device_id.clone(),
        });
        for acl_name in policy {
            let acl = mud
                .acl(acl_name)
                .expect("validated MUD files have no dangling ACL references");
            for ace in &acl.aces {
                if ace.actions.forwarding != Forwarding::Accept {
                    continue;
                }
                compile_ace(acl_name, ace, direction, ctx, window_secs, &mut out)?;
            }
        }
    }
    Ok(out)
}

fn compile_ace(
    acl_name: &str,
    ace: &crate::mud::Ace,
    direction: Direction,
    ctx: &DeviceContext,
    window_secs: u64,
    out: &mut CompileOutput,
) -> Result<(), CompileError> {
    let m = &ace.matches;
    let skip = |out: &mut CompileOutput, reason: &str| {
        out.warnings
            .push(format!("skipping ACE '{acl_name}/{}': {reason}", ace.name));
    };

    let Some(protocol) = m.protocol else {
        skip(out, "no protocol match; exact-match keys need one of tcp/udp/icmp");
        return Ok(());
    };

    let port = match (protocol, m.port) {
        (Protocol::Icmp, _) => 0, // ICMP has no ports; 0 is the wildcard.
        (_, Some(p)) => {
            let expected_role = match direction {
                Direction::FromDevice => PortRole::Destination,
                Direction::ToDevice => PortRole::Source,
            };
            if p.role != expected_role {
                skip(
                    out,
                    &format!("port role {:?} cannot be keyed for {direction} rules", p.role),
                );
                return Ok(());
            }
            if p.port == 0 {
                // Key port 0 is reserved for the ICMP wildcard.
                skip(out, "tcp/udp port 0 cannot be expressed as an exact-match key");
                return Ok(());
            }
            p.port
        }
        (_, None) => {
            skip(out, "tcp/udp ACE without a port cannot be expressed as an exact-match key");
            return Ok(());
        }
    };

    let Some(remotes) = resolve_remotes(m, direction, ctx)? else {
        skip(out, "no remote endpoint (DNS name or literal address)");
        return Ok(());
    };

    let device_literal = match direction {
        Direction::FromDevice => m.src_address,
        Direction::ToDevice => m.dst_address,
    };
    let device_addrs: Vec<IpAddr> = ctx
        .device_addresses
        .iter()
        .copied()
        .filter(|a| device_literal.is_none_or(|lit| lit == *a))
        .collect();

    let max_packets = ace
        .actions
        .packet_rate
        .map_or(0, |r| rate_to_window(r, window_secs));
    let max_bytes = ace
        .actions
        .byte_rate
        .map_or(0, |r| rate_to_window(r, window_secs));

    let mut emitted = false;
    for remote in &remotes {
        for device in &device_addrs {
            if device.is_ipv4() != remote.is_ipv4() {
                continue;
            }
            let (src, dst) = match direction {
                Direction::FromDevice => (*device, *remote),
                Direction::ToDevice => (*remote, *device),
            };
            out.rules.push(FlowRule {
                key: FlowKey {
                    src_address: src,
                    dst_address: dst,
                    direction,
                    protocol,
                    port,
                },
                max_packets_per_window: max_packets,
                max_bytes_per_window: max_bytes,
                window_secs,
                origin: RuleOrigin {
                    acl: acl_name.to_string(),
                    ace: ace.name.clone(),
                },
            });
            emitted = true;
        }
    }
    if !emitted {
        skip(out, "no device address matches the ACE family");
    }
    Ok(())
}

/// Remote endpoint addresses for an ACE, or `None` when the ACE names no
/// remote at all. DNS names must resolve through the context map.
fn resolve_remotes(
    m: &MatchCriteria,
    direction: Direction,
    ctx: &DeviceContext,
) -> Result<Option<Vec<IpAddr>>, CompileError> {
    if let Some(host) = &m.dns_name {
        let addrs = ctx
            .dns_map
            .get(host)
            .filter(|a| !a.is_empty())
            .ok_or_else(|| CompileError::UnresolvedHost { host: host.clone() })?;
        return Ok(Some(addrs.clone()));
    }
    let literal = match direction {
        Direction::FromDevice => m.dst_address,
        Direction::ToDevice => m.src_address,
    };
    Ok(literal.map(|a| vec![a]))
}
