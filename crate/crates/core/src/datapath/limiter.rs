//! The two rate-limiter semantics.
//!
//! The strict window limiter mirrors the XDP backend: counters reset at fixed
//! window boundaries and everything over the per-window maximum is dropped,
//! which makes the shaped traffic line perfectly flat. The token bucket
//! mirrors iptables hashlimit with `--limit-burst`: credit accrues
//! continuously and short bursts above the steady rate are allowed.

use crate::flow::window_slot;

/// Default burst allowance, in packets, for bucket mode.
pub const DEFAULT_BURST: u64 = 5;

/// Verdict of a single limiter check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LimitDecision {
    Allow,
    DenyPacketRate,
    DenyByteRate,
}

/// Per-rule counters for the current window, plus the static maxima taken
/// from the MUD file. Zero maxima mean unlimited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FlowCounters {
    pub packets: u64,
    pub bytes: u64,
    pub max_pkt_rate: u64,
    pub max_bytes_rate: u64,
}

/// Window bookkeeping for one rule. The window anchor is set lazily by the
/// first packet that hits the rule, so replays in virtual time stay
/// deterministic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowState {
    pub window_start: Option<u64>,
    pub window_size: u64,
}

impl WindowState {
    pub fn new(window_size_ns: u64) -> Self {
        assert!(window_size_ns > 0, "window size must be positive");
        WindowState {
            window_start: None,
            window_size: window_size_ns,
        }
    }

    /// Rolls the window forward if `ts` falls past the current one, zeroing
    /// the counters first. Advancing keeps the start aligned to
    /// `anchor + k * window_size`; a timestamp exactly on a boundary stays
    /// in the earlier window.
    pub fn roll(&mut self, counters: &mut FlowCounters, ts: u64) -> bool {
        let Some(start) = self.window_start else {
            self.window_start = Some(ts);
            return false;
        };
        let slot = window_slot(start, self.window_size, ts);
        if slot == 0 {
            return false;
        }
        self.window_start = Some(start + slot * self.window_size);
        counters.packets = 0;
        counters.bytes = 0;
        true
    }
}

/// Strict-window check: reset-then-update, then admit the packet only if
/// both the packet and byte counters stay within their maxima. Admitted
/// packets are counted; denied packets leave the pass counters untouched.
pub fn window_check(
    counters: &mut FlowCounters,
    ws: &mut WindowState,
    ts: u64,
    len: u64,
) -> LimitDecision {
    ws.roll(counters, ts);
    if counters.max_pkt_rate != 0 && counters.packets + 1 > counters.max_pkt_rate {
        return LimitDecision::DenyPacketRate;
    }
    if counters.max_bytes_rate != 0 && counters.bytes + len > counters.max_bytes_rate {
        return LimitDecision::DenyByteRate;
    }
    counters.packets += 1;
    counters.bytes += len;
    LimitDecision::Allow
}

/// Continuous-refill token bucket.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenBucket {
    pub tokens: f64,
    pub burst: f64,
    /// Tokens per nanosecond.
    pub refill_rate: f64,
    pub last_refill: Option<u64>,
}

impl TokenBucket {
    /// A bucket that sustains `per_window` units per window and starts full
    /// at `burst` units.
    pub fn new(per_window: u64, window_ns: u64, burst: u64) -> Self {
        TokenBucket {
            tokens: burst as f64,
            burst: burst as f64,
            refill_rate: per_window as f64 / window_ns as f64,
            last_refill: None,
        }
    }

    fn refill(&mut self, ts: u64) {
        let last = self.last_refill.unwrap_or(ts);
        let elapsed = ts.saturating_sub(last);
        self.tokens = (self.tokens + elapsed as f64 * self.refill_rate).min(self.burst);
        self.last_refill = Some(ts);
    }

    fn peek(&mut self, ts: u64, cost: f64) -> bool {
        self.refill(ts);
        self.tokens >= cost
    }

    fn consume(&mut self, cost: f64) {
        self.tokens -= cost;
    }
}

/// Bucket-mode state for one rule: a packet bucket (1 token per packet, cap
/// `burst`) and a parallel byte bucket (`len` tokens per packet, cap one
/// window's byte budget). A `None` bucket means that dimension is unlimited.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BucketState {
    pub pkt: Option<TokenBucket>,
    pub byte: Option<TokenBucket>,
}

impl BucketState {
    pub fn new(max_pkts: u64, max_bytes: u64, window_ns: u64, burst: u64) -> Self {
        BucketState {
            // Sustained rate comes from refill; the packet bucket holds at
            // most the burst allowance.
            pkt: (max_pkts > 0).then(|| TokenBucket::new(max_pkts, window_ns, burst)),
            byte: (max_bytes > 0).then(|| TokenBucket {
                tokens: max_bytes as f64,
                burst: max_bytes as f64,
                refill_rate: max_bytes as f64 / window_ns as f64,
                last_refill: None,
            }),
        }
    }
}

/// Token-bucket check: refill both buckets, admit only if both have enough
/// credit, and consume from both on admission (all or nothing).
pub fn bucket_check(state: &mut BucketState, ts: u64, len: u64) -> LimitDecision {
    let pkt_ok = state.pkt.as_mut().is_none_or(|b| b.peek(ts, 1.0));
    let byte_ok = state.byte.as_mut().is_none_or(|b| b.peek(ts, len as f64));
    if !pkt_ok {
        return LimitDecision::DenyPacketRate;
    }
    if !byte_ok {
        return LimitDecision::DenyByteRate;
    }
    if let Some(b) = state.pkt.as_mut() {
        b.consume(1.0);
    }
    if let Some(b) = state.byte.as_mut() {
        b.consume(len as f64);
    }
    LimitDecision::Allow
}

#[cfg(test)]
mod tests {
    use super::*;

    const SEC: u64 = 1_000_000_000;

    fn counters(max_pkt: u64, max_bytes: u64) -> FlowCounters {
        FlowCounters {
            max_pkt_rate: max_pkt,
            max_bytes_rate: max_bytes,
            ..FlowCounters::default()
        }
    }

    #[test]
    fn window_expiry_resets_before_evaluation() {
        let mut c = counters(2, 0);
        let mut ws = WindowState::new(60 * SEC);
        assert_eq!(window_check(&mut c, &mut ws, 0, 100), LimitDecision::Allow);
        assert_eq!(window_check(&mut c, &mut ws, SEC, 100), LimitDecision::Allow);
        assert_eq!(
            window_check(&mut c, &mut ws, 2 * SEC, 100),
            LimitDecision::DenyPacketRate
        );
        // 61 s after the anchor: the window has expired, counters are reset
        // first, and only then is the packet evaluated.
        assert_eq!(window_check(&mut c, &mut ws, 61 * SEC, 100), LimitDecision::Allow);
        assert_eq!(ws.window_start, Some(60 * SEC));
        assert_eq!(c.packets, 1);
        assert_eq!(c.bytes, 100);
    }

    #[test]
    fn zero_maxima_always_allow() {
        let mut c = counters(0, 0);
        let mut ws = WindowState::new(60 * SEC);
        for i in 0..10_000u64 {
            assert_eq!(
                window_check(&mut c, &mut ws, i * SEC / 100, 1500),
                LimitDecision::Allow
            );
        }
        // Counters were reset at the 60 s rollover; the last window holds
        // the 3999 packets after it.
        assert_eq!(c.packets, 3_999);
    }

    #[test]
    fn byte_limit_denies_without_touching_pass_counters() {
        let mut c = counters(0, 250);
        let mut ws = WindowState::new(60 * SEC);
        assert_eq!(window_check(&mut c, &mut ws, 0, 200), LimitDecision::Allow);
        assert_eq!(
            window_check(&mut c, &mut ws, 1, 100),
            LimitDecision::DenyByteRate
        );
        assert_eq!(c.packets, 1);
        assert_eq!(c.bytes, 200);
        // A smaller packet still fits.
        assert_eq!(window_check(&mut c, &mut ws, 2, 50), LimitDecision::Allow);
        assert_eq!(c.bytes, 250);
    }

    #[test]
    fn cbr_stream_passes_exactly_the_window_maximum() {
        // 10 pkt/s for 120 s against 300 per 60 s window: 300 pass per
        // window, 600 total.
        let mut c = counters(300, 0);
        let mut ws = WindowState::new(60 * SEC);
        let mut passed = 0u64;
        let mut per_window = Vec::new();
        let mut current = 0u64;
        let mut last_start = None;
        for i in 0..1200u64 {
            let ts = i * SEC / 10;
            let decision = window_check(&mut c, &mut ws, ts, 100);
            if last_start.is_some() && ws.window_start != last_start {
                per_window.push(current);
                current = 0;
            }
            last_start = ws.window_start;
            if decision == LimitDecision::Allow {
                passed += 1;
                current += 1;
            }
        }
        per_window.push(current);
        assert_eq!(passed, 600);
        assert_eq!(per_window, vec![300, 300]);
    }

    #[test]
    fn fresh_bucket_allows_exactly_the_burst() {
        let mut st = BucketState::new(300, 0, 60 * SEC, DEFAULT_BURST);
        let mut allowed = 0;
        for _ in 0..20 {
            if bucket_check(&mut st, 0, 60) == LimitDecision::Allow {
                allowed += 1;
            }
        }
        assert_eq!(allowed, 5);
    }

    #[test]
    fn empty_bucket_with_zero_elapsed_denies() {
        let mut st = BucketState::new(300, 0, 60 * SEC, DEFAULT_BURST);
        for _ in 0..5 {
            assert_eq!(bucket_check(&mut st, 0, 60), LimitDecision::Allow);
        }
        assert_eq!(bucket_check(&mut st, 0, 60), LimitDecision::DenyPacketRate);
    }

    #[test]
    fn refill_one_per_second_burst_five_passes_fourteen_of_twenty() {
        // 20 packets over 10 s at 2 pkt/s against refill 1 pkt/s, burst 5.
        // Step-by-step simulation: the initial 5 tokens plus one refilled
        // token per second admit 14 packets (roughly burst + refills).
        let mut st = BucketState::new(60, 0, 60 * SEC, DEFAULT_BURST);
        let mut allowed = 0;
        for i in 0..20u64 {
            let ts = i * SEC / 2;
            if bucket_check(&mut st, ts, 60) == LimitDecision::Allow {
                allowed += 1;
            }
        }
        assert_eq!(allowed, 14);
    }

    #[test]
    fn byte_bucket_gates_in_parallel() {
        // Unlimited packets, 600 bytes per 60 s window: a fresh byte bucket
        // holds one window's budget.
        let mut st = BucketState::new(0, 0, 60 * SEC, DEFAULT_BURST);
        assert!(st.pkt.is_none());
        st.byte = Some(TokenBucket {
            tokens: 600.0,
            burst: 600.0,
            refill_rate: 600.0 / (60.0 * SEC as f64),
            last_refill: None,
        });
        for _ in 0..4 {
            assert_eq!(bucket_check(&mut st, 0, 150), LimitDecision::Allow);
        }
        assert_eq!(bucket_check(&mut st, 0, 150), LimitDecision::DenyByteRate);
    }
}
