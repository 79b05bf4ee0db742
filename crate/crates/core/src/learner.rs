//! Windowed traffic analysis: slice per-device traces into fixed windows,
//! aggregate per-category packet/byte statistics, and derive "peaks" or
//! "averages" rate limits from them.
//!
//! The window rule follows the trace-analysis procedure: the first packet of
//! a device anchors the window start; a record at or before the window's end
//! is counted there, otherwise the start advances in whole window steps until
//! the record fits. Only non-empty windows are materialized, so idle periods
//! never dilute the averages.

use std::collections::{BTreeMap, HashMap};
use std::io;
use std::net::IpAddr;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::window_slot;
use crate::mud::{RateLimit, RatePeriod};

const NS_PER_SEC: u64 = 1_000_000_000;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("trace records for device '{device_id}' are not sorted by timestamp")]
    Unsorted { device_id: String },
    #[error("device '{device_id}' is missing from the category map")]
    UnmappedDevice { device_id: String },
    #[error("cannot derive a limit: {metric} statistic is zero")]
    ZeroStatistic { metric: &'static str },
    #[error("trace line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Direction of a trace record relative to its device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceDirection {
    Outgoing,
    Incoming,
}

impl TraceDirection {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceDirection::Outgoing => "outgoing",
            TraceDirection::Incoming => "incoming",
        }
    }
}

/// Transport protocol of a trace record. TCP and UDP get their own window
/// counters; ICMP and anything else land in the "other" bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceProtocol {
    Tcp,
    Udp,
    Icmp,
    Other,
}

impl TraceProtocol {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceProtocol::Tcp => "tcp",
            TraceProtocol::Udp => "udp",
            TraceProtocol::Icmp => "icmp",
            TraceProtocol::Other => "other",
        }
    }
}

/// Optional 5-tuple columns used when a CSV trace is replayed as frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endpoints {
    pub src_addr: IpAddr,
    pub dst_addr: IpAddr,
    pub src_port: u16,
    pub dst_port: u16,
}

/// One timestamped packet observation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub timestamp_ns: u64,
    pub device_id: String,
    pub direction: TraceDirection,
    pub protocol: TraceProtocol,
    pub length: u64,
    pub endpoints: Option<Endpoints>,
}

/// Per-device, per-window packet/byte aggregates. Only windows with at
/// least one record exist.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowStats {
    pub window_start: u64,
    pub device_id: String,
    pub tcp_packets: u64,
    pub tcp_bytes: u64,
    pub udp_packets: u64,
    pub udp_bytes: u64,
    pub other_packets: u64,
    pub other_bytes: u64,
}

impl WindowStats {
    fn new(window_start: u64, device_id: &str) -> Self {
        WindowStats {
            window_start,
            device_id: device_id.to_string(),
            tcp_packets: 0,
            tcp_bytes: 0,
            udp_packets: 0,
            udp_bytes: 0,
            other_packets: 0,
            other_bytes: 0,
        }
    }

    pub fn total_packets(&self) -> u64 {
        self.tcp_packets + self.udp_packets + self.other_packets
    }
}

/// Category-level statistics: per-window averages over active windows and
/// the mean of per-device window maxima ("peaks").
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub category: String,
    pub tcp_avg_pkts: f64,
    pub tcp_peak_pkts: f64,
    pub udp_avg_pkts: f64,
    pub udp_peak_pkts: f64,
    pub tcp_avg_bytes: f64,
    pub tcp_peak_bytes: f64,
    pub udp_avg_bytes: f64,
    pub udp_peak_bytes: f64,
}

/// Threshold-setting strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    Peaks,
    Averages,
}

impl std::str::FromStr for Policy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "peaks" => Ok(Policy::Peaks),
            "averages" => Ok(Policy::Averages),
            other => Err(format!("unknown policy '{other}' (expected peaks or averages)")),
        }
    }
}

/// Rounding granularity for suggested limits. The published thresholds use
/// different roundings per category, so this is an explicit parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Granularity {
    pub packet_round_to: u64,
    pub byte_round_to: u64,
}

/// Rate limits suggested from category statistics, expressed per minute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuggestedLimits {
    pub policy: Policy,
    pub packet_limit: RateLimit,
    pub byte_limit: RateLimit,
}

/// Slices a trace into per-device fixed windows.
///
/// Records must be sorted by timestamp within each device; the output is
/// ordered by device id and window start. Every record lands in exactly one
/// window.
pub fn windowize(trace: &[TraceRecord], window_secs: u64) -> Result<Vec<WindowStats>, LearnError> {
    assert!(window_secs > 0, "window size must be positive");
    let size_ns = window_secs.saturating_mul(NS_PER_SEC);

    struct DeviceState {
        anchor: u64,
        last_ts: u64,
        windows: Vec<WindowStats>,
    }
    let mut devices: BTreeMap<&str, DeviceState> = BTreeMap::new();

    for rec in trace {
        let st = devices
            .entry(rec.device_id.as_str())
            .or_insert_with(|| DeviceState {
                anchor: rec.timestamp_ns,
                last_ts: rec.timestamp_ns,
                windows: Vec::new(),
            });
        if rec.timestamp_ns < st.last_ts {
            return Err(LearnError::Unsorted {
                device_id: rec.device_id.clone(),
            });
        }
        st.last_ts = rec.timestamp_ns;

        let start = st.anchor + window_slot(st.anchor, size_ns, rec.timestamp_ns) * size_ns;
        if st.windows.last().map(|w| w.window_start) != Some(start) {
            st.windows.push(WindowStats::new(start, &rec.device_id));
        }
        let w = st.windows.last_mut().unwrap();
        match rec.protocol {
            TraceProtocol::Tcp => {
                w.tcp_packets += 1;
                w.tcp_bytes += rec.length;
            }
            TraceProtocol::Udp => {
                w.udp_packets += 1;
                w.udp_bytes += rec.length;
            }
            TraceProtocol::Icmp | TraceProtocol::Other => {
                w.other_packets += 1;
                w.other_bytes += rec.length;
            }
        }
    }

    Ok(devices.into_values().flat_map(|st| st.windows).collect())
}

/// Aggregates window statistics into per-category averages and peaks.
///
/// The average is the mean over all active windows of the category's
/// devices; the peak is the mean of each device's maximum window.
pub fn aggregate(
    windows: &[WindowStats],
    category_map: &HashMap<String, String>,
) -> Result<Vec<CategoryStats>, LearnError> {
    #[derive(Default)]
    struct DeviceAgg {
        tcp_pkts_max: u64,
        udp_pkts_max: u64,
        tcp_bytes_max: u64,
        udp_bytes_max: u64,
    }
    #[derive(Default)]
    struct CatAgg {
        windows: u64,
        tcp_pkts_sum: u64,
        udp_pkts_sum: u64,
        tcp_bytes_sum: u64,
        udp_bytes_sum: u64,
        devices: BTreeMap<String, DeviceAgg>,
    }

    let mut cats: BTreeMap<&str, CatAgg> = BTreeMap::new();
    for w in windows {
        let category =
            category_map
                .get(&w.device_id)
                .ok_or_else(|| LearnError::UnmappedDevice {
                    device_id: w.device_id.clone(),
                })?;
        let cat = cats.entry(category.as_str()).or_default();
        cat.windows += 1;
        cat.tcp_pkts_sum += w.tcp_packets;
        cat.udp_pkts_sum += w.udp_packets;
        cat.tcp_bytes_sum += w.tcp_bytes;
        cat.udp_bytes_sum += w.udp_bytes;
        let dev = cat.devices.entry(w.device_id.clone()).or_default();
        dev.tcp_pkts_max = dev.tcp_pkts_max.max(w.tcp_packets);
        dev.udp_pkts_max = dev.udp_pkts_max.max(w.udp_packets);
        dev.tcp_bytes_max = dev.tcp_bytes_max.max(w.tcp_bytes);
        dev.udp_bytes_max = dev.udp_bytes_max.max(w.udp_bytes);
    }

    Ok(cats
        .into_iter()
        .map(|(name, c)| {
            let nw = c.windows as f64;
            let nd = c.devices.len() as f64;
            let peak = |f: fn(&DeviceAgg) -> u64| {
                c.devices.values().map(|d| f(d) as f64).sum::<f64>() / nd
            };
            CategoryStats {
                category: name.to_string(),
                tcp_avg_pkts: c.tcp_pkts_sum as f64 / nw,
                tcp_peak_pkts: peak(|d| d.tcp_pkts_max),
                udp_avg_pkts: c.udp_pkts_sum as f64 / nw,
                udp_peak_pkts: peak(|d| d.udp_pkts_max),
                tcp_avg_bytes: c.tcp_bytes_sum as f64 / nw,
                tcp_peak_bytes: peak(|d| d.tcp_bytes_max),
                udp_avg_bytes: c.udp_bytes_sum as f64 / nw,
                udp_peak_bytes: peak(|d| d.udp_bytes_max),
            }
        })
        .collect())
}

/// Derives per-minute rate limits from category statistics.
///
/// The limit is the selected TCP statistic rounded up to the requested
/// granularity: `ceil(stat / round) * round`. The reliable-transport (TCP)
/// columns drive the thresholds, matching how the published limits were set.
pub fn suggest_limits(
    stats: &CategoryStats,
    policy: Policy,
    granularity: Granularity,
) -> Result<SuggestedLimits, LearnError> {
    assert!(
        granularity.packet_round_to > 0 && granularity.byte_round_to > 0,
        "granularity must be positive"
    );
    let (pkts, bytes) = match policy {
        Policy::Peaks => (stats.tcp_peak_pkts, stats.tcp_peak_bytes),
        Policy::Averages => (stats.tcp_avg_pkts, stats.tcp_avg_bytes),
    };
    if pkts <= 0.0 {
        return Err(LearnError::ZeroStatistic { metric: "packet" });
    }
    if bytes <= 0.0 {
        return Err(LearnError::ZeroStatistic { metric: "byte" });
    }
    let round_up = |stat: f64, to: u64| -> u64 { (stat / to as f64).ceil() as u64 * to };
    Ok(SuggestedLimits {
        policy,
        packet_limit: RateLimit::new(
            round_up(pkts, granularity.packet_round_to),
            RatePeriod::Minute,
        ),
        byte_limit: RateLimit::new(round_up(bytes, granularity.byte_round_to), RatePeriod::Minute),
    })
}

/// Loads a granularity config: category -> policy -> granularity.
pub fn load_granularity(
    path: impl AsRef<Path>,
) -> Result<HashMap<String, HashMap<String, Granularity>>, LearnError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| LearnError::Parse {
        line: e.line(),
        message: e.to_string(),
    })
}

// ---------------------------------------------------------------------------
// CSV trace format:
//   timestamp_ns,device_id,direction,protocol,length[,src,dst,sport,dport]
// ---------------------------------------------------------------------------

pub const TRACE_CSV_HEADER: &str =
    "timestamp_ns,device_id,direction,protocol,length,src_addr,dst_addr,src_port,dst_port";

/// Reads a CSV trace. The 5-tuple columns are optional; a header row is
/// detected and skipped.
pub fn read_trace_csv(path: impl AsRef<Path>) -> Result<Vec<TraceRecord>, LearnError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;

    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 1;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        if i == 0 && record.get(0).is_some_and(|f| f.parse::<u64>().is_err()) {
            continue; // header row
        }
        out.push(parse_trace_row(&record, line)?);
    }
    Ok(out)
}

fn parse_trace_row(record: &csv::StringRecord, line: usize) -> Result<TraceRecord, LearnError> {
    let err = |message: String| LearnError::Parse { line, message };
    let field = |idx: usize, name: &str| {
        record
            .get(idx)
            .filter(|f| !f.is_empty())
            .ok_or_else(|| err(format!("missing column {name}")))
    };

    let timestamp_ns: u64 = field(0, "timestamp_ns")?
        .parse()
        .map_err(|e| err(format!("bad timestamp: {e}")))?;
    let device_id = field(1, "device_id")?.to_string();
    let direction = match field(2, "direction")? {
        "outgoing" | "out" => TraceDirection::Outgoing,
        "incoming" | "in" => TraceDirection::Incoming,
        other => return Err(err(format!("bad direction '{other}'"))),
    };
    let protocol = match field(3, "protocol")? {
        "tcp" => TraceProtocol::Tcp,
        "udp" => TraceProtocol::Udp,
        "icmp" => TraceProtocol::Icmp,
        "other" => TraceProtocol::Other,
        other => return Err(err(format!("bad protocol '{other}'"))),
    };
    let length: u64 = field(4, "length")?
        .parse()
        .map_err(|e| err(format!("bad length: {e}")))?;
    if length == 0 {
        return Err(err("length must be positive".into()));
    }

    let endpoints = if record.len() >= 9 && !record[5].is_empty() {
        let addr = |idx: usize, name: &str| -> Result<IpAddr, LearnError> {
            field(idx, name)?
                .parse()
                .map_err(|e| err(format!("bad {name}: {e}")))
        };
        let port = |idx: usize, name: &str| -> Result<u16, LearnError> {
            field(idx, name)?
                .parse()
                .map_err(|e| err(format!("bad {name}: {e}")))
        };
        Some(Endpoints {
            src_addr: addr(5, "src_addr")?,
            dst_addr: addr(6, "dst_addr")?,
            src_port: port(7, "src_port")?,
            dst_port: port(8, "dst_port")?,
        })
    } else {
        None
    };

    Ok(TraceRecord {
        timestamp_ns,
        device_id,
        direction,
        protocol,
        length,
        endpoints,
    })
}

/// Writes a CSV trace with the full column set.
pub fn write_trace_csv(path: impl AsRef<Path>, records: &[TraceRecord]) -> Result<(), LearnError> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(TRACE_CSV_HEADER.split(','))?;
    for r in records {
        let (src, dst, sport, dport) = match &r.endpoints {
            Some(e) => (
                e.src_addr.to_string(),
                e.dst_addr.to_string(),
                e.src_port.to_string(),
                e.dst_port.to_string(),
            ),
            None => (String::new(), String::new(), String::new(), String::new()),
        };
        w.write_record([
            r.timestamp_ns.to_string(),
            r.device_id.clone(),
            r.direction.as_str().to_string(),
            r.protocol.as_str().to_string(),
            r.length.to_string(),
            src,
            dst,
            sport,
            dport,
        ])?;
    }
    w.flush().map_err(LearnError::from)?;
    Ok(())
}

/// Renders category statistics as CSV with one packets row and one bytes row
/// per category (category, metric, TCP, TCP Max, UDP, UDP Max).
pub fn category_stats_csv(stats: &[CategoryStats]) -> String {
    let mut out = String::from("category,metric,tcp,tcp_max,udp,udp_max\n");
    for s in stats {
        out.push_str(&format!(
            "{},pkts,{:.2},{:.2},{:.2},{:.2}\n",
            s.category, s.tcp_avg_pkts, s.tcp_peak_pkts, s.udp_avg_pkts, s.udp_peak_pkts
        ));
        out.push_str(&format!(
            "{},bytes,{:.2},{:.2},{:.2},{:.2}\n",
            s.category, s.tcp_avg_bytes, s.tcp_peak_bytes, s.udp_avg_bytes, s.udp_peak_bytes
        ));
    }
    out
}
