//! Acceptance suite: one test per release criterion, each printing a
//! pass/fail line (visible with `cargo test --test acceptance -- --nocapture`).
//!
//! Each criterion pins its tolerances in the assertions themselves; the
//! oracles used here are implemented from scratch in this file and never
//! call into the engine paths they check.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::net::{IpAddr, TcpListener, TcpStream};
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use mudguard_core::compiler::{compile, DeviceContext};
use mudguard_core::datapath::{
    bench, build_frame, Datapath, FrameSpec, L4Protocol, LimiterMode, VerdictAction,
    VerdictReason,
};
use mudguard_core::flow::{Direction, FlowKey, FlowRule, Protocol, RuleOrigin};
use mudguard_core::learner::{
    self, load_granularity, suggest_limits, windowize, Endpoints, Policy, TraceDirection,
    TraceProtocol, TraceRecord,
};
use mudguard_core::manager::{DeviceEvent, EventOutcome, Manager};
use mudguard_core::mud::{parse_mud_file, serialize_mud_file, Forwarding, RateLimit, RatePeriod};
use mudguard_core::replay::{records_to_frames, replay, synth};

const SEC: u64 = 1_000_000_000;

fn fixtures_dir() -> &'static str {
    concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures")
}

fn fixture(name: &str) -> String {
    std::fs::read_to_string(format!("{}/{name}", fixtures_dir())).unwrap()
}

fn base_ctx() -> DeviceContext {
    DeviceContext::load(format!("{}/device-ctx.json", fixtures_dir())).unwrap()
}

fn pass(n: u32, name: &str) {
    println!("acceptance {n:02} ({name}): PASS");
}

/// Criterion 1: the published actions fragment parses to
/// {50/second, 50000/minute, accept} and round-trips exactly.
#[test]
fn acceptance_01_extension_parsing() {
    let started = Instant::now();
    let fragment = r#""actions": {
      "packet-rate": "50/second",
      "byte-rate": "50kb/minute",
      "forwarding": "accept"
    }"#;
    let document = format!(
        r#"{{
  "ietf-mud:mud": {{
    "mud-version": 1,
    "mud-url": "https://mud.example.com/fragment",
    "last-update": "2023-05-01T00:00:00+00:00",
    "is-supported": true,
    "from-device-policy": {{ "access-lists": {{ "access-list": [ {{ "name": "a" }} ] }} }}
  }},
  "ietf-access-control-list:acls": {{
    "acl": [ {{ "name": "a", "type": "ipv4-acl-type", "aces": {{ "ace": [ {{
      "name": "a0",
      "matches": {{
        "ipv4": {{ "ietf-acldns:dst-dnsname": "svc.example.com" }},
        "tcp": {{ "destination-port": {{ "operator": "eq", "port": 443 }} }}
      }},
      {fragment}
    }} ] }} }} ]
  }}
}}"#
    );

    let mud = parse_mud_file(&document).unwrap();
    let actions = &mud.acls[0].aces[0].actions;
    assert_eq!(actions.forwarding, Forwarding::Accept);
    assert_eq!(actions.packet_rate, Some(RateLimit::new(50, RatePeriod::Second)));
    assert_eq!(actions.byte_rate, Some(RateLimit::new(50_000, RatePeriod::Minute)));

    let reparsed = parse_mud_file(&serialize_mud_file(&mud)).unwrap();
    assert_eq!(reparsed, mud);

    assert!(started.elapsed().as_secs_f64() < 1.0, "criterion must finish in < 1 s");
    pass(1, "extension parsing");
}

/// Criterion 2: with an empty rule table, 100% of random valid packets are
/// dropped with reason no-rule.
#[test]
fn acceptance_02_default_drop() {
    let started = Instant::now();
    let dp = Datapath::new();
    let mut rng = StdRng::seed_from_u64(0x0dd0);

    for i in 0..1500u64 {
        let v4 = rng.random_bool(0.7);
        let (src, dst): (IpAddr, IpAddr) = if v4 {
            (
                std::net::Ipv4Addr::from(rng.random::<u32>()).into(),
                std::net::Ipv4Addr::from(rng.random::<u32>()).into(),
            )
        } else {
            (
                std::net::Ipv6Addr::from(rng.random::<u128>()).into(),
                std::net::Ipv6Addr::from(rng.random::<u128>()).into(),
            )
        };
        let protocol = match rng.random_range(0..4) {
            0 => L4Protocol::Tcp,
            1 => L4Protocol::Udp,
            2 => L4Protocol::Icmp,
            _ => L4Protocol::Other(rng.random_range(2..250)),
        };
        let frame = build_frame(&FrameSpec {
            src,
            dst,
            protocol,
            src_port: rng.random(),
            dst_port: rng.random(),
            length: rng.random_range(60..1500),
            tcp_flags: 0x02,
        });
        let verdict = dp.process_packet(&frame, i * 1_000, Direction::FromDevice, LimiterMode::Window);
        assert_eq!(verdict.action, VerdictAction::Drop);
        assert_eq!(verdict.reason, VerdictReason::NoRule);
    }

    assert!(started.elapsed().as_secs_f64() < 5.0, "criterion must finish in < 5 s");
    pass(2, "default drop");
}

fn flood_rule(limit: u64) -> FlowRule {
    FlowRule {
        key: FlowKey {
            src_address: "192.168.10.20".parse().unwrap(),
            dst_address: "203.0.113.10".parse().unwrap(),
            direction: Direction::FromDevice,
            protocol: Protocol::Tcp,
            port: 443,
        },
        max_packets_per_window: limit,
        max_bytes_per_window: 0,
        window_secs: 60,
        origin: RuleOrigin { acl: "a".into(), ace: "a0".into() },
    }
}

fn flood_endpoints() -> Endpoints {
    Endpoints {
        src_addr: "192.168.10.20".parse().unwrap(),
        dst_addr: "203.0.113.10".parse().unwrap(),
        src_port: 40_000,
        dst_port: 443,
    }
}

/// Criterion 3: a CBR flood at 10x the limit over 10 windows passes exactly
/// the per-window limit in window mode.
#[test]
fn acceptance_03_window_limiter_exactness() {
    let started = Instant::now();
    let limit = 120u64;
    let rules = vec![flood_rule(limit)];
    // 20 pkt/s = 1200 per window = 10x the limit, for 600 s = 10 windows.
    let records = synth::syn_flood("iot-1", flood_endpoints(), 20, 600, 0);
    let frames = records_to_frames(&records).unwrap();

    let report = replay(&frames, &rules, LimiterMode::Window, Direction::FromDevice);
    assert_eq!(report.per_window_series.len(), 10);
    for w in &report.per_window_series {
        assert_eq!(
            w.passed_pkts, limit,
            "window at {} must pass exactly the limit",
            w.window_start
        );
    }
    assert_eq!(report.passed_packets, limit * 10);

    assert!(started.elapsed().as_secs_f64() < 5.0, "criterion must finish in < 5 s");
    pass(3, "window limiter exactness");
}

/// Criterion 4: a fresh bucket admits exactly the 5-packet burst from an
/// instantaneous 20-packet blast, and over a full replay bucket-mode passes
/// exceed window-mode passes by at most burst x window count.
#[test]
fn acceptance_04_burst_semantics() {
    let started = Instant::now();

    let dp = Datapath::new();
    dp.insert_rule(&flood_rule(120)).unwrap();
    let frame = build_frame(&FrameSpec {
        src: "192.168.10.20".parse().unwrap(),
        dst: "203.0.113.10".parse().unwrap(),
        protocol: L4Protocol::Tcp,
        src_port: 40_000,
        dst_port: 443,
        length: 60,
        tcp_flags: 0x02,
    });
    let passed = (0..20)
        .filter(|_| {
            dp.process_packet(&frame, 0, Direction::FromDevice, LimiterMode::Bucket)
                .passed()
        })
        .count();
    assert_eq!(passed, 5, "a fresh bucket admits exactly the burst");

    let rules = vec![flood_rule(120)];
    let records = synth::syn_flood("iot-1", flood_endpoints(), 20, 600, 0);
    let frames = records_to_frames(&records).unwrap();
    let window = replay(&frames, &rules, LimiterMode::Window, Direction::FromDevice);
    let bucket = replay(&frames, &rules, LimiterMode::Bucket, Direction::FromDevice);
    let windows = window.per_window_series.len() as u64;
    assert!(bucket.passed_packets >= window.passed_packets);
    assert!(
        bucket.passed_packets - window.passed_packets <= 5 * windows,
        "bucket overshoot {} exceeds burst x {windows} windows",
        bucket.passed_packets - window.passed_packets
    );

    assert!(started.elapsed().as_secs_f64() < 5.0, "criterion must finish in < 5 s");
    pass(4, "burst semantics");
}

/// Criterion 5: windowize matches a brute-force floor-bucketing oracle on
/// 100 random traces, and every record is counted.
#[test]
fn acceptance_05_learner_oracle_equivalence() {
    let started = Instant::now();
    let window_secs = 60u64;
    let size_ns = window_secs * SEC;

    for seed in 0..100u64 {
        let mut rng = StdRng::seed_from_u64(seed);
        let n_records = rng.random_range(1..=10_000usize);
        let n_devices = rng.random_range(1..=3usize);
        let mut per_device_ts: Vec<u64> = (0..n_devices).map(|_| rng.random_range(0..SEC)).collect();
        let mut trace = Vec::with_capacity(n_records);
        for _ in 0..n_records {
            let d = rng.random_range(0..n_devices);
            per_device_ts[d] += rng.random_range(0..3 * size_ns / 2);
            trace.push(TraceRecord {
                timestamp_ns: per_device_ts[d],
                device_id: format!("dev-{d}"),
                direction: TraceDirection::Outgoing,
                protocol: match rng.random_range(0..3) {
                    0 => TraceProtocol::Tcp,
                    1 => TraceProtocol::Udp,
                    _ => TraceProtocol::Other,
                },
                length: rng.random_range(60..1500),
                endpoints: None,
            });
        }

        let windows = windowize(&trace, window_secs).unwrap();

        // Brute-force oracle: bucket every record by whole windows since its
        // device's first record; boundary multiples stay in the earlier
        // window, mirroring the "advance only while excluded" rule.
        let mut anchors: HashMap<&str, u64> = HashMap::new();
        let mut oracle: HashMap<(&str, u64), u64> = HashMap::new();
        for r in &trace {
            let anchor = *anchors.entry(r.device_id.as_str()).or_insert(r.timestamp_ns);
            let d = r.timestamp_ns - anchor;
            let slot = if d == 0 { 0 } else { (d - 1) / size_ns };
            *oracle.entry((r.device_id.as_str(), anchor + slot * size_ns)).or_default() += 1;
        }

        assert_eq!(windows.len(), oracle.len(), "seed {seed}: window count");
        let mut counted = 0u64;
        for w in &windows {
            let n = w.total_packets();
            assert_eq!(
                oracle.get(&(w.device_id.as_str(), w.window_start)),
                Some(&n),
                "seed {seed}: window {} of {}",
                w.window_start,
                w.device_id
            );
            counted += n;
        }
        assert_eq!(counted, trace.len() as u64, "seed {seed}: every record counted");
    }

    assert!(started.elapsed().as_secs_f64() < 30.0, "criterion must finish in < 30 s");
    pass(5, "learner oracle equivalence");
}

/// Criterion 6: the four published limit pairs are reproduced from the
/// corresponding statistics with the fixture granularity configs, and the
/// shipped MUD fixtures carry exactly those limits.
#[test]
fn acceptance_06_threshold_reproduction() {
    let started = Instant::now();
    let book = load_granularity(format!("{}/granularity.json", fixtures_dir())).unwrap();

    let stats = |avg_p, peak_p, avg_b, peak_b| learner::CategoryStats {
        category: "x".into(),
        tcp_avg_pkts: avg_p,
        tcp_peak_pkts: peak_p,
        udp_avg_pkts: 0.0,
        udp_peak_pkts: 0.0,
        tcp_avg_bytes: avg_b,
        tcp_peak_bytes: peak_b,
        udp_avg_bytes: 0.0,
        udp_peak_bytes: 0.0,
    };
    let appliances = stats(36.7, 223.2, 2350.7, 36761.2);
    let smarthubs = stats(21.3, 1716.8, 2375.3, 177385.12);

    let cases = [
        (&appliances, "appliances", Policy::Peaks, 250u64, 40_000u64, "appliances-peaks.json"),
        (&smarthubs, "smart-hubs", Policy::Peaks, 1720, 180_000, "smarthubs-peaks.json"),
        (&appliances, "appliances", Policy::Averages, 40, 3_000, "appliances-averages.json"),
        (&smarthubs, "smart-hubs", Policy::Averages, 22, 3_000, "smarthubs-averages.json"),
    ];
    for (stats, category, policy, want_pkts, want_bytes, fixture_name) in cases {
        let g = book[category][match policy {
            Policy::Peaks => "peaks",
            Policy::Averages => "averages",
        }];
        let limits = suggest_limits(stats, policy, g).unwrap();
        assert_eq!(limits.packet_limit, RateLimit::new(want_pkts, RatePeriod::Minute));
        assert_eq!(limits.byte_limit, RateLimit::new(want_bytes, RatePeriod::Minute));

        // The shipped fixture embodies the same thresholds.
        let mud = parse_mud_file(&fixture(fixture_name)).unwrap();
        let from_acl = mud.acl(&mud.from_device_policy[0]).unwrap();
        let actions = &from_acl.aces[0].actions;
        assert_eq!(actions.packet_rate, Some(limits.packet_limit));
        assert_eq!(actions.byte_rate, Some(limits.byte_limit));
    }

    assert!(started.elapsed().as_secs_f64() < 1.0, "criterion must finish in < 1 s");
    pass(6, "threshold reproduction");
}

/// Scratch window-mode simulator used as the drop-rate oracle: one window
/// chain per rule, anchored at the rule's first packet, counters reset on
/// advance, packet cap checked before byte cap.
fn oracle_drop_rate(frames: &[(Vec<u8>, u64)], rules: &[FlowRule]) -> f64 {
    let limits: HashMap<FlowKey, (u64, u64, u64)> = rules
        .iter()
        .map(|r| {
            (
                r.key,
                (r.max_packets_per_window, r.max_bytes_per_window, r.window_secs * SEC),
            )
        })
        .collect();
    let mut anchors: HashMap<FlowKey, u64> = HashMap::new();
    let mut admitted: HashMap<(FlowKey, u64), (u64, u64)> = HashMap::new();
    let mut total = 0u64;
    let mut dropped = 0u64;

    for (frame, ts) in frames {
        // Independent key derivation for from-device TCP frames.
        let dst_port = u16::from_be_bytes([frame[14 + 20 + 2], frame[14 + 20 + 3]]);
        let key = FlowKey {
            src_address: std::net::Ipv4Addr::new(frame[26], frame[27], frame[28], frame[29]).into(),
            dst_address: std::net::Ipv4Addr::new(frame[30], frame[31], frame[32], frame[33]).into(),
            direction: Direction::FromDevice,
            protocol: Protocol::Tcp,
            port: dst_port,
        };
        total += 1;
        let Some(&(max_pkt, max_bytes, window_ns)) = limits.get(&key) else {
            dropped += 1;
            continue;
        };
        let anchor = *anchors.entry(key).or_insert(*ts);
        let d = ts.saturating_sub(anchor);
        let slot = if d == 0 { 0 } else { (d - 1) / window_ns };
        let (pkts, bytes) = admitted.entry((key, slot)).or_insert((0, 0));
        let len = frame.len() as u64;
        if (max_pkt == 0 || *pkts < max_pkt) && (max_bytes == 0 || *bytes + len <= max_bytes) {
            *pkts += 1;
            *bytes += len;
        } else {
            dropped += 1;
        }
    }
    dropped as f64 / total as f64
}

/// Criterion 7: a calibrated synthetic appliance trace drops < 1.5% under
/// the peaks fixture and > 10% under the averages fixture per the oracle,
/// and the engine's drop rates match the oracle within 0.1 percentage
/// points.
#[test]
fn acceptance_07_normal_vs_abnormal_drop_behavior() {
    let started = Instant::now();
    let ctx = base_ctx();
    let records = synth::appliance_trace(
        "iot-1",
        flood_endpoints(),
        &synth::ApplianceProfile::default(),
        0xa991,
        0,
    );
    let frames = records_to_frames(&records).unwrap();

    let mut checked = Vec::new();
    for (fixture_name, max_rate, min_rate) in [
        ("appliances-peaks.json", Some(0.015), None),
        ("appliances-averages.json", None, Some(0.10)),
    ] {
        let mud = parse_mud_file(&fixture(fixture_name)).unwrap();
        let compiled = compile(&mud, &ctx).unwrap();
        assert!(compiled.warnings.is_empty());

        let oracle = oracle_drop_rate(&frames, &compiled.rules);
        if let Some(max_rate) = max_rate {
            assert!(
                oracle < max_rate,
                "{fixture_name}: oracle drop rate {oracle:.4} not below {max_rate}"
            );
        }
        if let Some(min_rate) = min_rate {
            assert!(
                oracle > min_rate,
                "{fixture_name}: oracle drop rate {oracle:.4} not above {min_rate}"
            );
        }

        let report = replay(&frames, &compiled.rules, LimiterMode::Window, Direction::FromDevice);
        let engine = report.packet_drop_rate();
        assert!(
            (engine - oracle).abs() <= 0.001,
            "{fixture_name}: engine {engine:.5} vs oracle {oracle:.5} differ by more than 0.1 pp"
        );
        checked.push((fixture_name, oracle, engine));
    }

    assert!(started.elapsed().as_secs_f64() < 30.0, "criterion must finish in < 30 s");
    for (name, oracle, engine) in checked {
        println!("  {name}: oracle {:.3}%, engine {:.3}%", oracle * 100.0, engine * 100.0);
    }
    pass(7, "normal vs abnormal drop behavior");
}

/// Criterion 8: 255 rules in, 255 rules out, the bench report carries all
/// six statistics columns, and median insert time stays under 100 us.
#[test]
fn acceptance_08_rule_churn() {
    let started = Instant::now();

    let dp = Datapath::new();
    let rules = bench::synthetic_rules(255);
    for r in &rules {
        dp.insert_rule(r).unwrap();
    }
    assert_eq!(dp.len(), 255);
    for r in &rules {
        assert!(dp.delete_rule(&r.key));
    }
    assert!(dp.is_empty(), "table empty after deleting the 255 rules");

    let report = bench::run(255, 2_000);
    let table = report.to_string();
    for column in ["Min", "Median", "Avg", "90th", "99th", "Max", "Std.dev."] {
        assert!(table.contains(column), "bench table missing column {column}");
    }
    assert_eq!(report.insert.samples, 255);
    assert_eq!(report.delete.samples, 255);
    assert!(
        report.insert.median < 100_000.0,
        "median insert {} ns exceeds 100 us",
        report.insert.median
    );

    assert!(started.elapsed().as_secs_f64() < 10.0, "criterion must finish in < 10 s");
    pass(8, "rule churn");
}

/// Criterion 9: per-packet processing median < 10 us with 255 rules
/// installed, and putting the firewall into a loopback echo path moves the
/// median round-trip latency by < 10%.
#[test]
fn acceptance_09_datapath_overhead() {
    let started = Instant::now();

    let report = bench::run(255, 20_000);
    assert!(
        report.datapath.median < 10_000.0,
        "median per-packet time {} ns exceeds 10 us",
        report.datapath.median
    );

    // Loopback echo microbenchmark.
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        let (mut stream, _) = listener.accept().unwrap();
        let mut buf = [0u8; 64];
        while stream.read_exact(&mut buf).is_ok() {
            if stream.write_all(&buf).is_err() {
                break;
            }
        }
    });

    let mut client = TcpStream::connect(addr).unwrap();
    client.set_nodelay(true).unwrap();
    let msg = [0x5au8; 64];
    let mut buf = [0u8; 64];

    let dp = Datapath::new();
    for r in bench::synthetic_rules(255) {
        dp.insert_rule(&r).unwrap();
    }
    let rules = bench::synthetic_rules(1);
    let frame = build_frame(&FrameSpec {
        src: rules[0].key.src_address,
        dst: rules[0].key.dst_address,
        protocol: L4Protocol::Tcp,
        src_port: 40_000,
        dst_port: rules[0].key.port,
        length: 64,
        tcp_flags: 0x02,
    });

    let mut echo_once = |with_firewall: bool, ts: u64| -> u64 {
        let t = Instant::now();
        if with_firewall {
            let verdict = dp.process_packet(&frame, ts, Direction::FromDevice, LimiterMode::Window);
            assert!(verdict.passed());
        }
        client.write_all(&msg).unwrap();
        client.read_exact(&mut buf).unwrap();
        t.elapsed().as_nanos() as u64
    };

    let median = |mut v: Vec<u64>| -> f64 {
        v.sort_unstable();
        v[v.len() / 2] as f64
    };

    // Warmup, then message-by-message alternation so load drift from
    // concurrently running tests hits both sides symmetrically. The real
    // firewall cost is constant, so a genuine regression fails every
    // attempt; the retries only absorb scheduler noise.
    for i in 0..200 {
        echo_once(i % 2 == 0, i);
    }
    let mut ts = 0u64;
    let mut last = (0.0, 0.0, 1.0);
    let mut within_bound = false;
    for _ in 0..3 {
        let mut baseline = Vec::with_capacity(2_000);
        let mut firewalled = Vec::with_capacity(2_000);
        for _ in 0..2_000 {
            ts += 2;
            baseline.push(echo_once(false, ts));
            firewalled.push(echo_once(true, ts + 1));
        }
        let m0 = median(baseline);
        let m1 = median(firewalled);
        let delta = (m1 - m0).abs() / m0;
        last = (m0, m1, delta);
        if delta < 0.10 {
            within_bound = true;
            break;
        }
    }
    let (m0, m1, delta) = last;
    assert!(
        within_bound,
        "echo median moved {:.1}% (baseline {m0} ns, with firewall {m1} ns)",
        delta * 100.0
    );

    assert!(started.elapsed().as_secs_f64() < 60.0, "criterion must finish in < 60 s");
    println!(
        "  datapath median {} ns; echo baseline {m0} ns vs firewalled {m1} ns ({:+.1}%)",
        report.datapath.median,
        (m1 - m0) / m0 * 100.0
    );
    pass(9, "datapath overhead property");
}

/// Criterion 10: joining the single-trusted-host fixture installs exactly 4
/// policies, leaving removes them all, and a broken fixture installs
/// nothing.
#[test]
fn acceptance_10_manager_lifecycle() {
    let started = Instant::now();
    let ctx = base_ctx();
    let mut manager = Manager::new();
    let dp = Datapath::new();

    let fixtures = fixtures_dir();
    let join = DeviceEvent::Join {
        device_id: "iot-1".into(),
        mud_url: format!("file://{fixtures}/single-trusted-host.json"),
        addresses: vec!["192.168.10.20".parse().unwrap()],
    };
    let outcome = manager.on_device_event(&join, &ctx, &dp).unwrap();
    match outcome {
        EventOutcome::Joined { policies, .. } => assert_eq!(policies, 4),
        other => panic!("expected join, got {other:?}"),
    }
    let keys: Vec<_> = manager
        .state
        .installed("iot-1")
        .unwrap()
        .rules
        .iter()
        .map(|r| r.key)
        .collect();
    assert_eq!(keys.len(), 2);

    let leave = DeviceEvent::Leave { device_id: "iot-1".into() };
    manager.on_device_event(&leave, &ctx, &dp).unwrap();
    assert!(dp.is_empty());
    for key in keys {
        assert!(dp.lookup(&key).is_none());
    }

    // Failure atomicity: the deliberately broken fixture installs nothing.
    let broken = DeviceEvent::Join {
        device_id: "iot-2".into(),
        mud_url: format!("file://{fixtures}/broken-dangling-acl.json"),
        addresses: vec!["192.168.10.21".parse().unwrap()],
    };
    assert!(manager.on_device_event(&broken, &ctx, &dp).is_err());
    assert!(dp.is_empty());
    assert!(manager.state.installed("iot-2").is_none());

    assert!(started.elapsed().as_secs_f64() < 5.0, "criterion must finish in < 5 s");
    pass(10, "manager lifecycle");
}
