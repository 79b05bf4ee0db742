//! Synthetic trace generators: constant-bit-rate streams, SYN floods (the
//! stand-in for the DoS dataset) and a jittered "appliance" profile for
//! normal-traffic experiments.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::learner::{Endpoints, TraceDirection, TraceProtocol, TraceRecord};

const NS_PER_SEC: u64 = 1_000_000_000;

/// Constant-rate stream of `rate_pps` packets per second for `duration_secs`.
pub fn cbr(
    device_id: &str,
    endpoints: Endpoints,
    protocol: TraceProtocol,
    rate_pps: u64,
    duration_secs: u64,
    frame_len: u64,
    start_ns: u64,
) -> Vec<TraceRecord> {
    assert!(rate_pps > 0 && duration_secs > 0);
    let total = rate_pps * duration_secs;
    let interval = NS_PER_SEC / rate_pps;
    (0..total)
        .map(|i| TraceRecord {
            timestamp_ns: start_ns + i * interval,
            device_id: device_id.to_string(),
            direction: TraceDirection::Outgoing,
            protocol,
            length: frame_len,
            endpoints: Some(endpoints),
        })
        .collect()
}

/// TCP SYN flood at a constant rate; synthesized frames carry the SYN flag.
pub fn syn_flood(
    device_id: &str,
    endpoints: Endpoints,
    rate_pps: u64,
    duration_secs: u64,
    start_ns: u64,
) -> Vec<TraceRecord> {
    cbr(
        device_id,
        endpoints,
        TraceProtocol::Tcp,
        rate_pps,
        duration_secs,
        60,
        start_ns,
    )
}

/// Shape of a synthetic appliance-style workload: a steady per-minute packet
/// count with small jitter, plus a heavier burst minute at a fixed cadence.
#[derive(Debug, Clone, Copy)]
pub struct ApplianceProfile {
    pub minutes: u64,
    pub base_pkts_per_min: u64,
    pub pkt_jitter: u64,
    pub base_len: u64,
    pub len_jitter: u64,
    /// Every n-th minute is a burst minute (0 disables bursts).
    pub burst_every: u64,
    pub burst_pkts_per_min: u64,
    pub burst_len: u64,
}

impl Default for ApplianceProfile {
    fn default() -> Self {
        ApplianceProfile {
            minutes: 30,
            base_pkts_per_min: 45,
            pkt_jitter: 5,
            base_len: 100,
            len_jitter: 10,
            burst_every: 7,
            burst_pkts_per_min: 120,
            burst_len: 150,
        }
    }
}

/// Deterministic (seeded) appliance-like TCP trace following the profile.
pub fn appliance_trace(
    device_id: &str,
    endpoints: Endpoints,
    profile: &ApplianceProfile,
    seed: u64,
    start_ns: u64,
) -> Vec<TraceRecord> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut out = Vec::new();
    for minute in 0..profile.minutes {
        let burst = profile.burst_every > 0 && minute % profile.burst_every == profile.burst_every - 1;
        let (count, len_base) = if burst {
            (profile.burst_pkts_per_min, profile.burst_len)
        } else {
            (
                profile.base_pkts_per_min + rng.random_range(0..=profile.pkt_jitter),
                profile.base_len,
            )
        };
        let minute_start = start_ns + minute * 60 * NS_PER_SEC;
        let interval = 60 * NS_PER_SEC / count.max(1);
        for i in 0..count {
            let jitter = rng.random_range(0..interval / 2 + 1);
            out.push(TraceRecord {
                timestamp_ns: minute_start + i * interval + jitter,
                device_id: device_id.to_string(),
                direction: TraceDirection::Outgoing,
                protocol: TraceProtocol::Tcp,
                length: len_base + rng.random_range(0..=profile.len_jitter),
                endpoints: Some(endpoints),
            });
        }
    }
    out.sort_by_key(|r| r.timestamp_ns);
    out
}
