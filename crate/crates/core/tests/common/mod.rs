//! Shared oracles and property checks for the integration and acceptance
//! targets. Oracles are written from the definitions, not from the library
//! code, so a shared bug cannot make both sides agree.
#![allow(dead_code)]

use std::collections::BTreeMap;

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

use fauras_core::client::{
    select_bitrate, AbrParams, AbrState, BufferEvent, ClientConfig, ClientSession, FetchAction,
    OverwriteNoticeHeader, PlayoutBuffer,
};
use fauras_core::engine::{advance, seeded_rng, ClientId, Flow, FlowId, LinkModel};
use fauras_core::media::{BitrateLadder, Kbps, SegmentPayload, SegmentRef, DEFAULT_RATES_KBPS};
use fauras_core::metrics::unfairness_index;
use fauras_core::proxy::{ProxyConfig, ProxyState, Strategy as Mode};
use fauras_core::server::{serve_request, PushPolicy, SegmentRequest};

pub fn ladder() -> BitrateLadder {
    BitrateLadder::default()
}

pub fn ladder_with(total: u32) -> BitrateLadder {
    BitrateLadder::new(DEFAULT_RATES_KBPS.to_vec(), 1.0, total).unwrap()
}

// ---------------------------------------------------------------------------
// Oracles
// ---------------------------------------------------------------------------

/// Highest rung at or below `bw` by linear scan; lowest rung if none.
pub fn fair_bitrate_scan(rates: &[Kbps], bw: f64) -> Kbps {
    let mut best = rates[0];
    for &r in rates {
        if f64::from(r) <= bw {
            best = best.max(r);
        }
    }
    best
}

pub fn fair_share_direct(capacity: f64, n: usize) -> f64 {
    capacity / n as f64
}

/// Estimated buffer written as `B + kL (c - r) / c`, capped.
pub fn estimate_buffer_direct(b: f64, k: u32, l: f64, r: f64, c: f64, bmax: f64) -> f64 {
    let v = b + f64::from(k) * l * (c - r) / c;
    if v > bmax {
        bmax
    } else {
        v
    }
}

pub fn should_overwrite_direct(r: Kbps, rf: Kbps, be: f64, k: u32, l: f64) -> bool {
    let over = r > rf;
    let low = be < f64::from(k) * l;
    over && low
}

/// Jain-derived unfairness from exact integer sums:
/// `1 - S^2/(nQ) = (nQ - S^2)/(nQ)` has no rounding before the final divide.
pub fn unfairness_exact(rates: &[u64]) -> f64 {
    let n = rates.len() as u128;
    let s: u128 = rates.iter().map(|&r| u128::from(r)).sum();
    let q: u128 = rates.iter().map(|&r| u128::from(r) * u128::from(r)).sum();
    if q == 0 {
        return 0.0;
    }
    let num = n * q - s * s;
    let den = n * q;
    (num as f64 / den as f64).sqrt()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    if a == b {
        return true;
    }
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Replays the gradual switching rule from scratch: one level toward the
/// target per decision, up only after `up_hold` decisions at a level.
pub struct AbrOracle {
    level: usize,
    held: u32,
    window: Vec<f64>,
    w: usize,
    alpha: f64,
    up_hold: u32,
}

impl AbrOracle {
    pub fn new(w: usize, alpha: f64, up_hold: u32) -> Self {
        Self { level: 0, held: 0, window: Vec::new(), w, alpha, up_hold }
    }

    pub fn sample(&mut self, s: f64) {
        self.window.push(s);
        if self.window.len() > self.w {
            self.window.remove(0);
        }
    }

    pub fn decide(&mut self, rates: &[Kbps]) -> Kbps {
        if self.window.is_empty() {
            self.level = 0;
            self.held = 1;
            return rates[0];
        }
        let hm = self.window.len() as f64 / self.window.iter().map(|s| 1.0 / s).sum::<f64>();
        let target_rate = fair_bitrate_scan(rates, self.alpha * hm);
        let target = rates.iter().position(|&r| r == target_rate).unwrap();
        let prev = self.level;
        if target > self.level && self.held >= self.up_hold {
            self.level += 1;
        } else if target < self.level {
            self.level -= 1;
        }
        if self.level == prev {
            self.held += 1;
        } else {
            self.held = 1;
        }
        rates[self.level]
    }
}

// ---------------------------------------------------------------------------
// Property harness
// ---------------------------------------------------------------------------

pub type Outcome = Result<(), String>;

/// Runs `test` on `cases` inputs drawn from `strategy` with a fixed seed.
pub fn check<S: proptest::strategy::Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Outcome
where
    S::Value: std::fmt::Debug,
{
    let config = Config { cases, failure_persistence: None, ..Config::default() };
    let rng = TestRng::from_seed(RngAlgorithm::ChaCha, &[7; 32]);
    let mut runner = TestRunner::new_with_rng(config, rng);
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

/// Random play-out buffer workload: `true` adds a segment when it fits,
/// a number plays that many seconds.
pub fn prop_buffer_bounds(cases: u32) -> Outcome {
    let ops = prop::collection::vec(prop_oneof![Just(None), (0.0f64..3.0).prop_map(Some)], 1..200);
    check(cases, (ops, 1u32..60, 0u32..4), |(ops, total, resume)| {
        let mut b = PlayoutBuffer::new(10.0, 1.0, 2.0, f64::from(resume), total).unwrap();
        let mut started = false;
        for op in ops {
            match op {
                None => {
                    if b.has_room() && b.delivered() < total {
                        if let Some(ev) = b.add_segment().map_err(|e| TestCaseError::fail(e.to_string()))? {
                            started |= ev == BufferEvent::Start;
                        }
                    }
                }
                Some(dt) => {
                    for (_, ev) in b.tick(dt) {
                        if ev == BufferEvent::Stall {
                            prop_assert!(started, "stall before playback start");
                            prop_assert_eq!(b.played(), b.delivered());
                            prop_assert!(b.delivered() < total);
                        }
                    }
                }
            }
            let l = b.level_s();
            prop_assert!((-1e-9..=10.0 + 1e-9).contains(&l), "level {} out of [0, 10]", l);
        }
        Ok(())
    })
}

/// Random flow sets on shared and sliced links.
pub fn prop_bandwidth_conservation(cases: u32) -> Outcome {
    let flows = prop::collection::vec((0u32..4, 1.0f64..3000.0), 0..10);
    let slices = prop::collection::vec(1.0f64..1000.0, 4);
    check(cases, (flows, slices, any::<bool>(), 0.01f64..5.0), |(specs, sl, sliced, dt)| {
        let capacity = 4000.0;
        let mut link = if sliced { LinkModel::sliced(capacity, 0.05) } else { LinkModel::shared(capacity, 0.05) }
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        if sliced {
            let table: BTreeMap<ClientId, f64> = sl.iter().enumerate().map(|(i, &s)| (ClientId(i as u32), s)).collect();
            link.set_slices(table).map_err(|e| TestCaseError::fail(e.to_string()))?;
        }
        let mut flows: Vec<Flow> = specs
            .iter()
            .enumerate()
            .map(|(i, &(c, size))| {
                let payload = SegmentPayload { seg: SegmentRef::new(i as u32 + 1, 99), size_kbit: size };
                Flow::new(FlowId(i as u64), ClientId(c), payload, 0.0)
            })
            .collect();
        let rates = link.rates(&flows);
        let total: f64 = rates.iter().sum();
        let bound = if sliced { sl.iter().sum::<f64>() } else { capacity };
        prop_assert!(total <= bound * (1.0 + 1e-12), "rate sum {} above {}", total, bound);
        if sliced {
            let mut per: BTreeMap<u32, f64> = BTreeMap::new();
            for (f, r) in flows.iter().zip(&rates) {
                *per.entry(f.client.0).or_default() += r;
            }
            for (c, r) in per {
                prop_assert!(rel_close(r, sl[c as usize], 1e-12), "client {} gets {} of slice {}", c, r, sl[c as usize]);
            }
        } else if !flows.is_empty() {
            prop_assert!(rel_close(total, capacity, 1e-12));
        }
        let before: f64 = flows.iter().map(|f| f.remaining_kbit).sum();
        let done = advance(&mut flows, &link, dt);
        let after: f64 = flows.iter().map(|f| f.remaining_kbit).sum();
        let moved = before - after;
        prop_assert!(moved <= bound * dt * (1.0 + 1e-9) + 1e-6, "moved {} kbit in {} s", moved, dt);
        for c in &done {
            prop_assert!(c.at_s <= dt + 1e-12);
            let rate_cap = if sliced { sl[c.flow.client.0 as usize] } else { capacity };
            prop_assert!(c.at_s * rate_cap >= c.flow.payload.size_kbit * (1.0 - 1e-9), "finished faster than its rate allows");
        }
        Ok(())
    })
}

/// Scale invariance, zero iff equal, growth with divergence.
pub fn prop_unfairness(cases: u32) -> Outcome {
    let rates = prop::collection::vec(1u32..5000, 1..12);
    check(cases, (rates, 0.001f64..1000.0, 1u32..5000), |(rates, lambda, extra)| {
        let f: Vec<f64> = rates.iter().map(|&r| f64::from(r)).collect();
        let base = unfairness_index(&f).unwrap();
        prop_assert!((0.0..=1.0).contains(&base));
        let scaled: Vec<f64> = f.iter().map(|r| r * lambda).collect();
        let s = unfairness_index(&scaled).unwrap();
        prop_assert!((s - base).abs() <= 1e-12, "scaled {} vs {}", s, base);
        let all_equal = rates.iter().all(|&r| r == rates[0]);
        prop_assert_eq!(base == 0.0, all_equal);
        if rates.len() >= 2 {
            let equal = vec![f[0]; rates.len()];
            let mut a = equal.clone();
            let mut b = equal;
            a[0] += f64::from(extra);
            b[0] += f64::from(extra) * 2.0;
            prop_assert!(unfairness_index(&b).unwrap() > unfairness_index(&a).unwrap());
        }
        Ok(())
    })
}

/// Decisions from random throughput histories never move more than one
/// ladder level, and match the replayed rule exactly.
pub fn prop_abr_one_level(cases: u32) -> Outcome {
    let samples = prop::collection::vec(prop::collection::vec(50.0f64..6000.0, 0..3), 1..40);
    check(cases, (samples, 1usize..8, 0.5f64..1.2, 0u32..4), |(rounds, w, alpha, up_hold)| {
        let ladder = ladder();
        let params = AbrParams { window: w, alpha, up_hold, ..AbrParams::default() };
        let mut abr = AbrState::new(params);
        let mut oracle = AbrOracle::new(w, alpha, up_hold);
        let mut prev: Option<usize> = None;
        for round in rounds {
            for s in round {
                abr.record_sample(s);
                oracle.sample(s);
            }
            let estimate = abr.estimate();
            let got = select_bitrate(&mut abr, &ladder, estimate);
            prop_assert_eq!(got, oracle.decide(ladder.rates()));
            let level = ladder.level_of(got).unwrap();
            if let Some(p) = prev {
                prop_assert!(level.abs_diff(p) <= 1, "jumped from level {} to {}", p, level);
            }
            prev = Some(level);
        }
        Ok(())
    })
}

/// What the scripted proxy does to one request.
#[derive(Debug, Clone, Copy)]
pub enum Rewrite {
    Pass,
    /// Rewrite to this ladder level, with or without the notice.
    To { level: usize, notice: bool },
}

pub fn rewrite_strategy() -> impl proptest::strategy::Strategy<Value = Rewrite> {
    prop_oneof![
        3 => Just(Rewrite::Pass),
        1 => (0usize..11, any::<bool>()).prop_map(|(level, notice)| Rewrite::To { level, notice }),
    ]
}

#[derive(Debug, Default)]
pub struct SessionTrace {
    pub requests: u32,
    pub promises: u32,
    pub discards: u32,
    pub delivered: u32,
    pub notices: u32,
}

/// Drives one client over an idealised path where every request is served
/// at `bw_kbps` and the scripted proxy applies `script[i]` to request `i`.
/// After a notice, checks that every segment of the rest of the cycle
/// (requested or pushed) carries the notice rate.
fn step(s: &mut ClientSession, now: &mut f64, dt: f64) {
    s.buffer_mut().tick(dt);
    *now += dt;
}

pub fn drive_session(k: u32, total: u32, bw_kbps: f64, script: &[Rewrite]) -> Result<SessionTrace, TestCaseError> {
    let fail = |e: fauras_core::SimError| TestCaseError::fail(e.to_string());
    let ladder = ladder_with(total);
    let cfg = ClientConfig::defaults_for(&ladder, k);
    let mut s = ClientSession::new(ClientId(0), ladder.clone(), cfg, seeded_rng(3)).map_err(fail)?;
    let policy = PushPolicy::new(k).map_err(fail)?;
    let mut now = 0.0;
    let mut trace = SessionTrace::default();
    // (notice rate, segments of the cycle not yet delivered)
    let mut forced: Option<(Kbps, u32)> = None;
    for _ in 0..100_000 {
        match s.next_fetch(now).map_err(fail)? {
            FetchAction::Done => return Ok(trace),
            FetchAction::Wait { dt_s } => step(&mut s, &mut now, dt_s),
            FetchAction::AwaitResponse | FetchAction::AwaitPush { .. } => {
                return Err(TestCaseError::fail("blocked with nothing in flight"));
            }
            FetchAction::Discard { .. } => trace.discards += 1,
            FetchAction::ConsumeFromCache { seg, .. } => {
                trace.delivered += 1;
                if let Some((rate, left)) = forced.as_mut() {
                    prop_assert_eq!(seg.bitrate_kbps, *rate, "cached segment ignores the notice");
                    *left -= 1;
                }
                if matches!(forced, Some((_, 0))) {
                    forced = None;
                }
            }
            FetchAction::SendRequest { id, request } => {
                if let Some((rate, _)) = forced {
                    prop_assert_eq!(request.seg.bitrate_kbps, rate, "in-cycle request ignores the notice");
                }
                let rule = script.get(trace.requests as usize).copied().unwrap_or(Rewrite::Pass);
                trace.requests += 1;
                let mut fwd = SegmentRequest::new(request.seg);
                let mut notice = None;
                if let Rewrite::To { level, notice: n } = rule {
                    let rate = ladder.rate_at(level);
                    if rate != request.seg.bitrate_kbps {
                        fwd.seg.bitrate_kbps = rate;
                        if n {
                            OverwriteNoticeHeader { bitrate_kbps: rate }.insert_into(&mut fwd.headers);
                            notice = Some(rate);
                        }
                    }
                }
                let resp = serve_request(&ladder, &fwd, policy).map_err(fail)?;
                trace.promises += resp.promises.len() as u32;
                s.on_response_start(id, &resp).map_err(fail)?;
                if let Some(rate) = notice {
                    trace.notices += 1;
                    prop_assert_eq!(s.abr().forced(), Some(rate));
                    prop_assert_eq!(s.cycle_bitrate(), rate);
                    forced = Some((rate, resp.promises.len() as u32));
                }
                step(&mut s, &mut now, 0.05 + resp.lead.size_kbit / bw_kbps);
                s.on_lead_done(id, resp.lead, now).map_err(fail)?;
                trace.delivered += 1;
                if notice.is_none() {
                    if let Some((_, left)) = forced.as_mut() {
                        *left = left.saturating_sub(1);
                    }
                }
                if matches!(forced, Some((_, 0))) {
                    forced = None;
                }
                for p in &resp.promises {
                    step(&mut s, &mut now, p.size_kbit / bw_kbps);
                    s.on_push_done(id, *p, now).map_err(fail)?;
                }
            }
        }
    }
    Err(TestCaseError::fail("session did not finish"))
}

/// Random proxy scripts with notices: forced-bitrate dominance is checked
/// inside [`drive_session`].
pub fn prop_forced_dominance(cases: u32) -> Outcome {
    let script = prop::collection::vec(rewrite_strategy(), 0..40);
    check(cases, (1u32..4, 2u32..40, 300.0f64..6000.0, script), |(k, total, bw, script)| {
        let t = drive_session(k, total, bw, &script)?;
        prop_assert_eq!(t.delivered, total);
        Ok(())
    })
}

/// When every rewrite carries a notice, no push is ever discarded, and the
/// request/promise split is the pure k-push one.
pub fn prop_notice_no_discard(cases: u32) -> Outcome {
    let script = prop::collection::vec(
        prop_oneof![3 => Just(Rewrite::Pass), 1 => (0usize..11).prop_map(|level| Rewrite::To { level, notice: true })],
        0..40,
    );
    check(cases, (1u32..4, 2u32..40, 300.0f64..6000.0, script), |(k, total, bw, script)| {
        let t = drive_session(k, total, bw, &script)?;
        prop_assert_eq!(t.discards, 0);
        prop_assert_eq!(t.requests, total.div_ceil(k));
        prop_assert_eq!(t.promises, total - total.div_ceil(k));
        Ok(())
    })
}

/// fair_bitrate: monotone, maximal by scan, fixed point on rungs.
pub fn prop_fair_bitrate(cases: u32) -> Outcome {
    check(cases, (0.0f64..4000.0, 0.0f64..4000.0), |(a, b)| {
        let ladder = ladder();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(ladder.fair_bitrate(lo) <= ladder.fair_bitrate(hi));
        let f = ladder.fair_bitrate(hi);
        prop_assert_eq!(f, fair_bitrate_scan(ladder.rates(), hi));
        if hi >= f64::from(ladder.lowest()) {
            prop_assert!(f64::from(f) <= hi);
            prop_assert!(!ladder.rates().iter().any(|&r| r > f && f64::from(r) <= hi));
        }
        for &r in ladder.rates() {
            prop_assert_eq!(ladder.fair_bitrate(f64::from(r)), r);
        }
        Ok(())
    })
}

/// Pure k-push over a whole video: ceil(T/k) responses, the rest promised,
/// and no promise past the last segment.
pub fn prop_origin_counts(cases: u32) -> Outcome {
    check(cases, (1u32..400, 1u32..8), |(total, k)| {
        let ladder = ladder_with(total);
        let policy = PushPolicy::new(k).unwrap();
        let (mut res, mut pp, mut next) = (0u32, 0u32, 1u32);
        while next <= total {
            let r = serve_request(&ladder, &SegmentRequest::new(SegmentRef::new(next, 838)), policy).unwrap();
            res += 1;
            pp += r.promises.len() as u32;
            prop_assert!(r.promises.iter().all(|p| p.seg.index <= total));
            next += 1 + r.promises.len() as u32;
        }
        prop_assert_eq!(res, total.div_ceil(k));
        prop_assert_eq!(pp, total - total.div_ceil(k));
        Ok(())
    })
}

/// Proxy bookkeeping under random join/leave sequences and requests.
pub fn prop_proxy_rules(cases: u32) -> Outcome {
    let ops = prop::collection::vec((0u32..6, any::<bool>()), 1..30);
    let strategy = prop_oneof![Just(Mode::NoProxy), Just(Mode::Reactive), Just(Mode::Proactive), Just(Mode::Fauras)];
    check(cases, (ops, strategy, 0usize..11, 0.0f64..10.0), |(ops, strategy, level, buffer)| {
        let ladder = ladder();
        let cfg = ProxyConfig {
            strategy,
            capacity_kbps: 3000.0,
            k: 2,
            buffer_max_s: 10.0,
            blanket_rewrite_kbps: None,
            notices: true,
        };
        let mut p = ProxyState::new(ladder.clone(), cfg, vec![]).unwrap();
        for (c, join) in ops {
            let id = ClientId(c);
            let slices = if join {
                if p.clients().contains(&id) {
                    continue;
                }
                p.join(id).unwrap()
            } else {
                match p.leave(id) {
                    Ok(s) => s,
                    Err(_) => {
                        prop_assert!(!p.clients().contains(&id));
                        continue;
                    }
                }
            };
            if strategy == Mode::NoProxy {
                prop_assert!(slices.is_empty());
            } else {
                prop_assert_eq!(slices.len(), p.clients().len());
                let want = 3000.0 / p.clients().len() as f64;
                for s in slices.values() {
                    prop_assert!((s - want).abs() <= 1e-9);
                }
            }
        }
        let Some(&client) = p.clients().iter().next() else { return Ok(()) };
        let rate = ladder.rate_at(level);
        let mut req = SegmentRequest::new(SegmentRef::new(5, rate));
        fauras_core::client::BufferReportHeader { level_s: buffer }.insert_into(&mut req.headers);
        let (fwd, d) = p.process_request(client, &req).unwrap();
        prop_assert!(fwd.seg.bitrate_kbps <= rate, "rewrote upward");
        match strategy {
            Mode::NoProxy | Mode::Reactive => prop_assert_eq!(fwd.seg, req.seg),
            Mode::Proactive => prop_assert_eq!(fwd.seg.bitrate_kbps, rate.min(d.fair_bitrate)),
            Mode::Fauras => {
                let be = d.estimated_buffer_s.unwrap();
                if be >= 2.0 {
                    prop_assert!(!d.triggered);
                }
            }
        }
        Ok(())
    })
}

/// The six named properties of the invariant suite, each at `cases`.
pub fn invariant_suite(cases: u32) -> Vec<(&'static str, Outcome)> {
    vec![
        ("buffer bounds", prop_buffer_bounds(cases)),
        ("bandwidth conservation", prop_bandwidth_conservation(cases)),
        ("unfairness scale invariance and zero iff equal", prop_unfairness(cases)),
        ("one-level ABR steps", prop_abr_one_level(cases)),
        ("forced-bitrate dominance", prop_forced_dominance(cases)),
        ("notice implies no discard", prop_notice_no_discard(cases)),
    ]
}
