//! Micro-benchmarks for rule insertion, deletion and the packet datapath,
//! reported with the same statistics columns as the reference measurements:
//! Min / Median / Avg / 90th / 99th / Max / Std.dev, in nanoseconds.

use std::fmt;
use std::time::Instant;

use crate::flow::{Direction, FlowKey, FlowRule, Protocol, RuleOrigin};

use super::{Datapath, LimiterMode};

/// Wall-clock distribution over one operation, in nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingStats {
    pub samples: usize,
    pub min: u64,
    pub median: f64,
    pub avg: f64,
    pub p90: f64,
    pub p99: f64,
    pub max: u64,
    pub stddev: f64,
}

impl TimingStats {
    /// Nearest-rank percentiles; the median interpolates between the two
    /// middle samples for even counts.
    pub fn from_samples(mut ns: Vec<u64>) -> Self {
        assert!(!ns.is_empty(), "need at least one sample");
        ns.sort_unstable();
        let n = ns.len();
        let min = ns[0];
        let max = ns[n - 1];
        let avg = ns.iter().sum::<u64>() as f64 / n as f64;
        let median = if n % 2 == 1 {
            ns[n / 2] as f64
        } else {
            (ns[n / 2 - 1] + ns[n / 2]) as f64 / 2.0
        };
        let pct = |q: f64| -> f64 {
            let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
            ns[rank - 1] as f64
        };
        let var = ns
            .iter()
            .map(|&x| {
                let d = x as f64 - avg;
                d * d
            })
            .sum::<f64>()
            / n as f64;
        TimingStats {
            samples: n,
            min,
            median,
            avg,
            p90: pct(0.90),
            p99: pct(0.99),
            max,
            stddev: var.sqrt(),
        }
    }
}

/// One benchmark run: insert x N, delete x N, datapath x M.
#[derive(Debug, Clone)]
pub struct BenchReport {
    pub insert: TimingStats,
    pub delete: TimingStats,
    pub datapath: TimingStats,
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<12} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
            "Experiment", "Min", "Median", "Avg", "90th", "99th", "Max", "Std.dev."
        )?;
        for (name, s) in [
            ("Insert rule", &self.insert),
            ("Delete rule", &self.delete),
            ("Datapath", &self.datapath),
        ] {
            writeln!(
                f,
                "{:<12} {:>10} {:>10.2} {:>10.2} {:>10.2} {:>10.2} {:>10} {:>10.2}",
                name, s.min, s.median, s.avg, s.p90, s.p99, s.max, s.stddev
            )?;
        }
        write!(f, "(times in nanoseconds)")
    }
}

/// Distinct synthetic rules for benchmarking, all from-device TCP flows.
pub fn synthetic_rules(n: usize) -> Vec<FlowRule> {
    (0..n)
        .map(|i| {
            let b = (i / 250) as u8;
            let c = (i % 250) as u8;
            FlowRule {
                key: FlowKey {
                    src_address: "192.168.10.20".parse().unwrap(),
                    dst_address: format!("203.0.{}.{}", b, c + 1).parse().unwrap(),
                    direction: Direction::FromDevice,
                    protocol: Protocol::Tcp,
                    port: 443,
                },
                max_packets_per_window: 0,
                max_bytes_per_window: 0,
                window_secs: 60,
                origin: RuleOrigin {
                    acl: "bench".into(),
                    ace: format!("bench-{i}"),
                },
            }
        })
        .collect()
}

/// Times `n_rules` insertions and deletions plus `n_packets` trips through
/// the packet-processing path with the rules installed.
pub fn run(n_rules: usize, n_packets: usize) -> BenchReport {
    assert!(n_rules >= 1 && n_packets >= 1);
    let dp = Datapath::with_capacity(n_rules.max(super::DEFAULT_CAPACITY));
    let rules = synthetic_rules(n_rules);

    let mut insert = Vec::with_capacity(n_rules);
    for rule in &rules {
        let t = Instant::now();
        dp.insert_rule(rule).expect("bench table sized for the rules");
        insert.push(t.elapsed().as_nanos() as u64);
    }

    // Match the first rule so the datapath numbers are lookup hits.
    let frame = super::build_frame(&super::FrameSpec {
        src: rules[0].key.src_address,
        dst: rules[0].key.dst_address,
        protocol: super::L4Protocol::Tcp,
        src_port: 40_000,
        dst_port: rules[0].key.port,
        length: 64,
        tcp_flags: 0x02,
    });
    let mut datapath = Vec::with_capacity(n_packets);
    for i in 0..n_packets {
        let ts = i as u64 * 1_000;
        let t = Instant::now();
        let verdict = dp.process_packet(&frame, ts, Direction::FromDevice, LimiterMode::Window);
        datapath.push(t.elapsed().as_nanos() as u64);
        debug_assert!(verdict.passed());
    }

    let mut delete = Vec::with_capacity(n_rules);
    for rule in &rules {
        let t = Instant::now();
        dp.delete_rule(&rule.key);
        delete.push(t.elapsed().as_nanos() as u64);
    }
    assert!(dp.is_empty(), "bench deleted every rule it inserted");

    BenchReport {
        insert: TimingStats::from_samples(insert),
        delete: TimingStats::from_samples(delete),
        datapath: TimingStats::from_samples(datapath),
    }
}
