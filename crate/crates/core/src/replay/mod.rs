//! Trace replay: ingest packet traces (pcap or CSV), rewrite addresses to
//! match the test topology, push every frame through a fresh datapath in
//! virtual time, and report drop rates and per-window time series.
//!
//! Replay never sleeps: trace timestamps are the clock, so multi-day
//! traces finish in seconds and the same input always produces a
//! byte-identical report.

pub mod pcap;
pub mod synth;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io;
use std::net::IpAddr;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compiler::DEFAULT_WINDOW_SECS;
use crate::datapath::{
    build_frame, fix_checksums, parse_headers, Datapath, FrameSpec, L4Protocol, LimiterMode,
    VerdictAction, DEFAULT_CAPACITY, ETH_HDR_LEN,
};
use crate::flow::{window_slot, Direction, FlowRule};
use crate::learner::{LearnError, TraceProtocol, TraceRecord};

pub use pcap::{read_pcap, write_pcap, Frame};

const NS_PER_SEC: u64 = 1_000_000_000;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("bad pcap magic {found:#010x}")]
    PcapMagic { found: u32 },
    #[error("pcap file truncated in {0}")]
    PcapTruncated(&'static str),
    #[error("unsupported pcap linktype {linktype} (only Ethernet is handled)")]
    UnsupportedLinkType { linktype: u32 },
    #[error("trace record {index} has no 5-tuple columns to synthesize a frame from")]
    MissingEndpoints { index: usize },
    #[error("address remap is not injective: {addr} mapped twice")]
    RemapNotInjective { addr: IpAddr },
    #[error("address remap entry {from} -> {to} changes address family")]
    RemapMixedFamily { from: IpAddr, to: IpAddr },
    #[error("invalid remap config: {message}")]
    Config { message: String },
    #[error(transparent)]
    Trace(#[from] LearnError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Trace file format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceFormat {
    Pcap,
    Csv,
}

impl TraceFormat {
    /// Picks the format from a file extension (`.pcap`/`.cap` vs CSV).
    pub fn from_path(path: &Path) -> TraceFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("pcap") | Some("cap") => TraceFormat::Pcap,
            _ => TraceFormat::Csv,
        }
    }
}

/// What to do with frames whose addresses are absent from the remap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RemapDefault {
    #[default]
    Keep,
    DropRecord,
}

/// An address rewrite map, standing in for tcprewrite.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AddressRemap {
    #[serde(default)]
    pub map: HashMap<IpAddr, IpAddr>,
    #[serde(default)]
    pub default: RemapDefault,
}

impl AddressRemap {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ReplayError> {
        let text = std::fs::read_to_string(path)?;
        let remap: AddressRemap =
            serde_json::from_str(&text).map_err(|e| ReplayError::Config {
                message: e.to_string(),
            })?;
        remap.validate()?;
        Ok(remap)
    }

    /// The mapping must stay within one family per entry and be injective
    /// per family, otherwise rewritten flows could collide.
    pub fn validate(&self) -> Result<(), ReplayError> {
        let mut seen = HashSet::new();
        for (from, to) in &self.map {
            if from.is_ipv4() != to.is_ipv4() {
                return Err(ReplayError::RemapMixedFamily {
                    from: *from,
                    to: *to,
                });
            }
            if !seen.insert(*to) {
                return Err(ReplayError::RemapNotInjective { addr: *to });
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Loads a trace as (frame, timestamp) pairs ordered by timestamp.
///
/// CSV records are synthesized into minimal valid frames carrying the
/// record's 5-tuple and length. Out-of-order inputs are sorted with a
/// warning rather than rejected.
pub fn load_trace(
    path: impl AsRef<Path>,
    format: TraceFormat,
) -> Result<(Vec<Frame>, Vec<String>), ReplayError> {
    let mut frames = match format {
        TraceFormat::Pcap => read_pcap(path)?,
        TraceFormat::Csv => {
            let records = crate::learner::read_trace_csv(path)?;
            records_to_frames(&records)?
        }
    };
    let mut warnings = Vec::new();
    if frames.windows(2).any(|w| w[0].1 > w[1].1) {
        frames.sort_by_key(|(_, ts)| *ts);
        warnings.push("trace timestamps were out of order; sorted by timestamp".to_string());
    }
    Ok((frames, warnings))
}

/// Synthesizes one frame per trace record from its 5-tuple columns.
pub fn records_to_frames(records: &[TraceRecord]) -> Result<Vec<Frame>, ReplayError> {
    records
        .iter()
        .enumerate()
        .map(|(index, r)| {
            let e = r
                .endpoints
                .ok_or(ReplayError::MissingEndpoints { index })?;
            let protocol = match r.protocol {
                TraceProtocol::Tcp => L4Protocol::Tcp,
                TraceProtocol::Udp => L4Protocol::Udp,
                TraceProtocol::Icmp => L4Protocol::Icmp,
                // 253 is reserved for experimentation; it parses as Other
                // and therefore always misses the allowlist.
                TraceProtocol::Other => L4Protocol::Other(253),
            };
            let frame = build_frame(&FrameSpec {
                src: e.src_addr,
                dst: e.dst_addr,
                protocol,
                src_port: e.src_port,
                dst_port: e.dst_port,
                length: r.length as usize,
                tcp_flags: 0x02,
            });
            Ok((frame, r.timestamp_ns))
        })
        .collect()
}

/// Converts parsed frames into learner trace records, for running the
/// window analysis directly on a packet capture.
///
/// The source address doubles as the device id and every frame counts as
/// outgoing, matching the capture-at-the-device-side convention. Malformed
/// frames are skipped and reported in the second return value.
pub fn frames_to_records(frames: &[Frame]) -> (Vec<TraceRecord>, usize) {
    let mut skipped = 0;
    let records = frames
        .iter()
        .filter_map(|(frame, ts)| match parse_headers(frame, *ts) {
            Ok(pkt) => Some(TraceRecord {
                timestamp_ns: *ts,
                device_id: pkt.src_address.to_string(),
                direction: crate::learner::TraceDirection::Outgoing,
                protocol: match pkt.protocol {
                    L4Protocol::Tcp => TraceProtocol::Tcp,
                    L4Protocol::Udp => TraceProtocol::Udp,
                    L4Protocol::Icmp => TraceProtocol::Icmp,
                    L4Protocol::Other(_) => TraceProtocol::Other,
                },
                length: pkt.length,
                endpoints: Some(crate::learner::Endpoints {
                    src_addr: pkt.src_address,
                    dst_addr: pkt.dst_address,
                    src_port: pkt.src_port,
                    dst_port: pkt.dst_port,
                }),
            }),
            Err(_) => {
                skipped += 1;
                None
            }
        })
        .collect();
    (records, skipped)
}

/// Applies an address remap to a frame stream.
///
/// Mapped addresses are substituted in the frame bytes (checksums are
/// recomputed); with [`RemapDefault::DropRecord`], frames touching no mapped
/// address are dropped from the stream entirely.
pub fn rewrite(frames: Vec<Frame>, remap: &AddressRemap) -> Vec<Frame> {
    if remap.is_empty() && remap.default == RemapDefault::Keep {
        return frames;
    }
    frames
        .into_iter()
        .filter_map(|(mut frame, ts)| {
            let Ok(pkt) = parse_headers(&frame, ts) else {
                // Unparseable frames cannot be rewritten; keep them as-is
                // unless the default says to drop unmatched records.
                return match remap.default {
                    RemapDefault::Keep => Some((frame, ts)),
                    RemapDefault::DropRecord => None,
                };
            };
            let new_src = remap.map.get(&pkt.src_address).copied();
            let new_dst = remap.map.get(&pkt.dst_address).copied();
            if new_src.is_none() && new_dst.is_none() {
                return match remap.default {
                    RemapDefault::Keep => Some((frame, ts)),
                    RemapDefault::DropRecord => None,
                };
            }
            if let Some(addr) = new_src {
                write_address(&mut frame, addr, true);
            }
            if let Some(addr) = new_dst {
                write_address(&mut frame, addr, false);
            }
            fix_checksums(&mut frame);
            Some((frame, ts))
        })
        .collect()
}

fn write_address(frame: &mut [u8], addr: IpAddr, source: bool) {
    match addr {
        IpAddr::V4(a) => {
            let off = ETH_HDR_LEN + if source { 12 } else { 16 };
            frame[off..off + 4].copy_from_slice(&a.octets());
        }
        IpAddr::V6(a) => {
            let off = ETH_HDR_LEN + if source { 8 } else { 24 };
            frame[off..off + 16].copy_from_slice(&a.octets());
        }
    }
}

/// One row of the per-window series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReplayWindow {
    pub window_start: u64,
    pub passed_pkts: u64,
    pub dropped_pkts: u64,
    pub passed_bytes: u64,
    pub dropped_bytes: u64,
}

/// Totals and time series for one replay run.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReplayReport {
    pub total_packets: u64,
    pub total_bytes: u64,
    pub passed_packets: u64,
    pub passed_bytes: u64,
    pub dropped_packets: u64,
    pub dropped_bytes: u64,
    pub aborted_packets: u64,
    pub aborted_bytes: u64,
    pub drop_reason_histogram: BTreeMap<String, u64>,
    pub per_window_series: Vec<ReplayWindow>,
}

impl ReplayReport {
    pub fn packet_drop_rate(&self) -> f64 {
        if self.total_packets == 0 {
            0.0
        } else {
            self.dropped_packets as f64 / self.total_packets as f64
        }
    }

    pub fn byte_drop_rate(&self) -> f64 {
        if self.total_bytes == 0 {
            0.0
        } else {
            self.dropped_bytes as f64 / self.total_bytes as f64
        }
    }
}

/// Replays a frame stream against a fresh datapath loaded with `rules`.
///
/// Frames are fed in order with their trace timestamps as the clock; the
/// per-window series buckets verdicts into windows of the rule set's window
/// size, anchored at the first frame.
pub fn replay(
    frames: &[Frame],
    rules: &[FlowRule],
    mode: LimiterMode,
    direction: Direction,
) -> ReplayReport {
    replay_anchored(frames, rules, mode, direction, None)
}

fn replay_anchored(
    frames: &[Frame],
    rules: &[FlowRule],
    mode: LimiterMode,
    direction: Direction,
    anchor: Option<u64>,
) -> ReplayReport {
    let dp = Datapath::with_capacity(rules.len().max(DEFAULT_CAPACITY));
    for rule in rules {
        dp.insert_rule(rule)
            .expect("replay datapath sized to hold every rule");
    }
    let window_ns = rules
        .first()
        .map(|r| r.window_secs)
        .unwrap_or(DEFAULT_WINDOW_SECS)
        .max(1)
        .saturating_mul(NS_PER_SEC);

    let mut report = ReplayReport::default();
    let mut windows: BTreeMap<u64, ReplayWindow> = BTreeMap::new();
    let anchor = anchor.or_else(|| frames.first().map(|(_, ts)| *ts));

    for (frame, ts) in frames {
        let verdict = dp.process_packet(frame, *ts, direction, mode);
        let len = frame.len() as u64;
        let start = anchor.expect("anchor exists when frames exist")
            + window_slot(anchor.unwrap(), window_ns, *ts) * window_ns;
        let slot = windows.entry(start).or_insert_with(|| ReplayWindow {
            window_start: start,
            ..ReplayWindow::default()
        });
        match verdict.action {
            VerdictAction::Pass => {
                report.total_packets += 1;
                report.total_bytes += len;
                report.passed_packets += 1;
                report.passed_bytes += len;
                slot.passed_pkts += 1;
                slot.passed_bytes += len;
            }
            VerdictAction::Drop => {
                report.total_packets += 1;
                report.total_bytes += len;
                report.dropped_packets += 1;
                report.dropped_bytes += len;
                slot.dropped_pkts += 1;
                slot.dropped_bytes += len;
                *report
                    .drop_reason_histogram
                    .entry(verdict.reason.as_str().to_string())
                    .or_default() += 1;
            }
            VerdictAction::Abort => {
                report.aborted_packets += 1;
                report.aborted_bytes += len;
                *report
                    .drop_reason_histogram
                    .entry(verdict.reason.as_str().to_string())
                    .or_default() += 1;
            }
        }
    }
    report.per_window_series = windows.into_values().collect();
    report
}

/// Parallel replay, sharded by device.
///
/// Each shard runs against its own datapath loaded with the full rule set;
/// that is sound because rules embed device addresses, so a device's frames
/// can only ever hit its own rules. Shards share one window anchor and the
/// merged report equals the sequential one.
pub fn replay_sharded(
    shards: &[(String, Vec<Frame>)],
    rules: &[FlowRule],
    mode: LimiterMode,
    direction: Direction,
) -> ReplayReport {
    let anchor = shards
        .iter()
        .filter_map(|(_, frames)| frames.first().map(|(_, ts)| *ts))
        .min();

    let reports: Vec<ReplayReport> = std::thread::scope(|scope| {
        let handles: Vec<_> = shards
            .iter()
            .map(|(_, frames)| {
                scope.spawn(move || replay_anchored(frames, rules, mode, direction, anchor))
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });

    let mut merged = ReplayReport::default();
    let mut windows: BTreeMap<u64, ReplayWindow> = BTreeMap::new();
    for r in reports {
        merged.total_packets += r.total_packets;
        merged.total_bytes += r.total_bytes;
        merged.passed_packets += r.passed_packets;
        merged.passed_bytes += r.passed_bytes;
        merged.dropped_packets += r.dropped_packets;
        merged.dropped_bytes += r.dropped_bytes;
        merged.aborted_packets += r.aborted_packets;
        merged.aborted_bytes += r.aborted_bytes;
        for (reason, n) in r.drop_reason_histogram {
            *merged.drop_reason_histogram.entry(reason).or_default() += n;
        }
        for w in r.per_window_series {
            let slot = windows.entry(w.window_start).or_insert_with(|| ReplayWindow {
                window_start: w.window_start,
                ..ReplayWindow::default()
            });
            slot.passed_pkts += w.passed_pkts;
            slot.dropped_pkts += w.dropped_pkts;
            slot.passed_bytes += w.passed_bytes;
            slot.dropped_bytes += w.dropped_bytes;
        }
    }
    merged.per_window_series = windows.into_values().collect();
    merged
}

/// Report output format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

pub const REPORT_CSV_HEADER: &str =
    "window_start,passed_pkts,dropped_pkts,passed_bytes,dropped_bytes";

/// Renders the per-window series as CSV (totals live in the JSON variant).
pub fn report_to_csv(report: &ReplayReport) -> String {
    let mut out = String::from(REPORT_CSV_HEADER);
    out.push('\n');
    for w in &report.per_window_series {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            w.window_start, w.passed_pkts, w.dropped_pkts, w.passed_bytes, w.dropped_bytes
        ));
    }
    out
}

/// Writes a report to disk in the requested format.
pub fn emit_report(
    report: &ReplayReport,
    path: impl AsRef<Path>,
    format: ReportFormat,
) -> Result<(), ReplayError> {
    let text = match format {
        ReportFormat::Csv => report_to_csv(report),
        ReportFormat::Json => {
            serde_json::to_string_pretty(report).expect("report is always serializable")
        }
    };
    std::fs::write(path, text)?;
    Ok(())
}
