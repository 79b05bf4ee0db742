//! The enforcement engine: an exact-match flow allowlist with per-rule
//! counters and two pluggable rate-limiter semantics.
//!
//! Packets whose key misses the table are dropped; the allowlist is the
//! whole policy and drop is the default posture. Packet processing may run
//! from several worker threads; rule insertion and deletion go through a
//! single control path and become visible atomically (workers see either the
//! old or the new rule, never a torn one).

pub mod bench;
mod limiter;
mod packet;

use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};

use thiserror::Error;

use crate::flow::{Direction, FlowKey, FlowRule, Protocol};

pub use limiter::{
    bucket_check, window_check, BucketState, FlowCounters, LimitDecision, TokenBucket,
    WindowState, DEFAULT_BURST,
};
pub use packet::{
    build_frame, fix_checksums, parse_headers, FrameSpec, L4Protocol, MalformedPacket,
    ParsedPacket, ETH_HDR_LEN,
};

/// Default allowlist capacity.
pub const DEFAULT_CAPACITY: usize = 4096;

const NS_PER_SEC: u64 = 1_000_000_000;

/// Which rate-limiter semantics to apply on a hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LimiterMode {
    /// Strict fixed windows (the XDP-style backend).
    Window,
    /// Token bucket with burst (the hashlimit-style backend).
    Bucket,
}

/// Per-packet decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerdictAction {
    Pass,
    Drop,
    /// Malformed/unparseable packet, mirroring XDP_ABORTED.
    Abort,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VerdictReason {
    NoRule,
    PktRateExceeded,
    ByteRateExceeded,
    Malformed,
    Allowed,
}

impl VerdictReason {
    pub fn as_str(self) -> &'static str {
        match self {
            VerdictReason::NoRule => "no-rule",
            VerdictReason::PktRateExceeded => "pkt-rate-exceeded",
            VerdictReason::ByteRateExceeded => "byte-rate-exceeded",
            VerdictReason::Malformed => "malformed",
            VerdictReason::Allowed => "allowed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Verdict {
    pub action: VerdictAction,
    pub reason: VerdictReason,
    /// Frame length as parsed, 0 if the frame was malformed beyond layer 2.
    pub length: u64,
}

impl Verdict {
    fn drop_no_rule(length: u64) -> Self {
        Verdict {
            action: VerdictAction::Drop,
            reason: VerdictReason::NoRule,
            length,
        }
    }

    pub fn passed(&self) -> bool {
        self.action == VerdictAction::Pass
    }
}

#[derive(Debug, Error)]
pub enum DatapathError {
    #[error("allowlist is full ({capacity} entries)")]
    TableFull { capacity: usize },
}

/// Cumulative pass/drop statistics for one rule plus its live window
/// counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RuleStats {
    pub passed_packets: u64,
    pub passed_bytes: u64,
    pub dropped_packets: u64,
    pub dropped_bytes: u64,
    pub window: FlowCounters,
}

struct EntryState {
    counters: FlowCounters,
    window: WindowState,
    buckets: Option<BucketState>,
    passed_packets: u64,
    passed_bytes: u64,
    dropped_packets: u64,
    dropped_bytes: u64,
}

struct RuleEntry {
    max_pkts: u64,
    max_bytes: u64,
    window_ns: u64,
    state: Mutex<EntryState>,
}

impl RuleEntry {
    fn new(rule: &FlowRule) -> Self {
        let window_ns = rule.window_secs.max(1).saturating_mul(NS_PER_SEC);
        RuleEntry {
            max_pkts: rule.max_packets_per_window,
            max_bytes: rule.max_bytes_per_window,
            window_ns,
            state: Mutex::new(EntryState {
                counters: FlowCounters {
                    packets: 0,
                    bytes: 0,
                    max_pkt_rate: rule.max_packets_per_window,
                    max_bytes_rate: rule.max_bytes_per_window,
                },
                window: WindowState::new(window_ns),
                buckets: None,
                passed_packets: 0,
                passed_bytes: 0,
                dropped_packets: 0,
                dropped_bytes: 0,
            }),
        }
    }
}

/// The flow allowlist plus verdict engine.
pub struct Datapath {
    table: RwLock<HashMap<FlowKey, Arc<RuleEntry>>>,
    capacity: usize,
    burst: u64,
}

impl Default for Datapath {
    fn default() -> Self {
        Self::new()
    }
}

impl Datapath {
    pub fn new() -> Self {
        Self::with_capacity(DEFAULT_CAPACITY)
    }

    pub fn with_capacity(capacity: usize) -> Self {
        Datapath {
            table: RwLock::new(HashMap::new()),
            capacity,
            burst: DEFAULT_BURST,
        }
    }

    /// Overrides the bucket-mode burst allowance (default 5 packets).
    pub fn set_burst(&mut self, burst: u64) {
        self.burst = burst;
    }

    pub fn len(&self) -> usize {
        self.table.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Installs a rule. Re-inserting an existing key replaces its maxima and
    /// resets all counters.
    pub fn insert_rule(&self, rule: &FlowRule) -> Result<(), DatapathError> {
        let mut table = self.table.write().unwrap();
        if !table.contains_key(&rule.key) && table.len() >= self.capacity {
            return Err(DatapathError::TableFull {
                capacity: self.capacity,
            });
        }
        table.insert(rule.key, Arc::new(RuleEntry::new(rule)));
        Ok(())
    }

    /// Removes a rule; returns false when the key was absent.
    pub fn delete_rule(&self, key: &FlowKey) -> bool {
        self.table.write().unwrap().remove(key).is_some()
    }

    /// Current window counters and maxima for a key.
    pub fn lookup(&self, key: &FlowKey) -> Option<FlowCounters> {
        let entry = self.table.read().unwrap().get(key).cloned()?;
        let st = entry.state.lock().unwrap();
        Some(st.counters)
    }

    /// Consistent snapshot of a rule's cumulative and window statistics.
    pub fn stats_snapshot(&self, key: &FlowKey) -> Option<RuleStats> {
        let entry = self.table.read().unwrap().get(key).cloned()?;
        let st = entry.state.lock().unwrap();
        Some(RuleStats {
            passed_packets: st.passed_packets,
            passed_bytes: st.passed_bytes,
            dropped_packets: st.dropped_packets,
            dropped_bytes: st.dropped_bytes,
            window: st.counters,
        })
    }

    /// Builds the allowlist key for a parsed packet: the destination port
    /// keys from-device traffic, the source port keys to-device traffic,
    /// and ICMP uses the port-0 wildcard.
    pub fn build_key(pkt: &ParsedPacket, direction: Direction) -> Option<FlowKey> {
        let protocol = match pkt.protocol {
            L4Protocol::Tcp => Protocol::Tcp,
            L4Protocol::Udp => Protocol::Udp,
            L4Protocol::Icmp => Protocol::Icmp,
            L4Protocol::Other(_) => return None,
        };
        let port = match (protocol, direction) {
            (Protocol::Icmp, _) => 0,
            (_, Direction::FromDevice) => pkt.dst_port,
            (_, Direction::ToDevice) => pkt.src_port,
        };
        Some(FlowKey {
            src_address: pkt.src_address,
            dst_address: pkt.dst_address,
            direction,
            protocol,
            port,
        })
    }

    /// Full per-packet path: parse, key, lookup, limit, account.
    pub fn process_packet(
        &self,
        frame: &[u8],
        timestamp_ns: u64,
        direction: Direction,
        mode: LimiterMode,
    ) -> Verdict {
        let pkt = match parse_headers(frame, timestamp_ns) {
            Ok(pkt) => pkt,
            Err(_) => {
                return Verdict {
                    action: VerdictAction::Abort,
                    reason: VerdictReason::Malformed,
                    length: frame.len() as u64,
                }
            }
        };
        self.process_parsed(&pkt, direction, mode)
    }

    /// Verdict path for an already-parsed packet.
    pub fn process_parsed(
        &self,
        pkt: &ParsedPacket,
        direction: Direction,
        mode: LimiterMode,
    ) -> Verdict {
        let Some(key) = Self::build_key(pkt, direction) else {
            // Protocols outside the ACL model never match the allowlist.
            return Verdict::drop_no_rule(pkt.length);
        };
        let Some(entry) = self.table.read().unwrap().get(&key).cloned() else {
            return Verdict::drop_no_rule(pkt.length);
        };

        let mut st = entry.state.lock().unwrap();
        let decision = {
            let EntryState {
                counters,
                window,
                buckets,
                ..
            } = &mut *st;
            if entry.max_pkts == 0 && entry.max_bytes == 0 {
                // No rate limit: pass and keep the window counters ticking.
                window.roll(counters, pkt.timestamp_ns);
                counters.packets += 1;
                counters.bytes += pkt.length;
                LimitDecision::Allow
            } else {
                match mode {
                    LimiterMode::Window => {
                        window_check(counters, window, pkt.timestamp_ns, pkt.length)
                    }
                    LimiterMode::Bucket => {
                        // Window counters keep rolling for statistics even in
                        // bucket mode; admission is the buckets' call.
                        window.roll(counters, pkt.timestamp_ns);
                        let buckets = buckets.get_or_insert_with(|| {
                            BucketState::new(
                                entry.max_pkts,
                                entry.max_bytes,
                                entry.window_ns,
                                self.burst,
                            )
                        });
                        let d = bucket_check(buckets, pkt.timestamp_ns, pkt.length);
                        if d == LimitDecision::Allow {
                            counters.packets += 1;
                            counters.bytes += pkt.length;
                        }
                        d
                    }
                }
            }
        };

        match decision {
            LimitDecision::Allow => {
                st.passed_packets += 1;
                st.passed_bytes += pkt.length;
                Verdict {
                    action: VerdictAction::Pass,
                    reason: VerdictReason::Allowed,
                    length: pkt.length,
                }
            }
            deny => {
                st.dropped_packets += 1;
                st.dropped_bytes += pkt.length;
                Verdict {
                    action: VerdictAction::Drop,
                    reason: match deny {
                        LimitDecision::DenyPacketRate => VerdictReason::PktRateExceeded,
                        _ => VerdictReason::ByteRateExceeded,
                    },
                    length: pkt.length,
                }
            }
        }
    }
}
