use std::cmp::Ordering;

use laneward::context::{
    compact_clm, compact_memgpt, hibernate, pressure_report, restore, run_session, CompactionParams, ContextError,
    ContextParams, ContextPolicy, ContextWindow, Entry, Message, Session,
};
use laneward::metrics::{compute_ctx, parse_pressure};
use laneward::workloads::{gen_session, SessionConfig};
use proptest::prelude::*;

fn msg_strategy() -> impl Strategy<Value = (u64, f64, bool, u32)> {
    (50u64..2_000, 0.0f64..1.0, prop::bool::weighted(0.2), 0u32..3)
}

fn build(specs: &[(u64, f64, bool, u32)]) -> Vec<Message> {
    specs
        .iter()
        .enumerate()
        .map(|(i, &(tokens, imp, key, topic))| {
            let m = Message::new(i as u32, tokens).with_topic(topic);
            if key {
                m.key(0.5 + imp / 2.0)
            } else {
                m.with_importance(imp)
            }
        })
        .collect()
}

/// Written out by hand rather than calling the library's scorer.
fn oracle_value(m: &Message, now: u32) -> f64 {
    0.3 * (m.turn_index as f64 + 1.0) / (now as f64 + 1.0) + 0.4 * m.importance + 0.3 * if m.is_key { 1.0 } else { 0.0 }
}

/// Greedy minimum-value victim sequence, found by sorting every candidate.
fn oracle_victims(msgs: &[Message], now: u32, topic: Option<u32>, target: u64, rho: f64, tau: f64) -> Vec<u32> {
    let mut order: Vec<&Message> = msgs.iter().collect();
    order.sort_by(|a, b| {
        oracle_value(a, now)
            .partial_cmp(&oracle_value(b, now))
            .unwrap_or(Ordering::Equal)
            .then((Some(a.topic) == topic).cmp(&(Some(b.topic) == topic)))
            .then(a.seq.cmp(&b.seq))
    });
    let mut used: u64 = msgs.iter().map(|m| m.tokens).sum();
    let mut out = Vec::new();
    for m in order {
        if used <= target {
            break;
        }
        out.push(m.id);
        used -= m.tokens;
        if m.is_key || m.importance >= tau {
            used += ((rho * m.tokens as f64).ceil() as u64).max(1);
        }
    }
    out
}

fn window_of(msgs: &[Message], limit: u64) -> ContextWindow {
    let mut w = ContextWindow::new(limit);
    for m in msgs {
        w.insert(Entry::Message(m.clone()));
    }
    w
}

#[test]
fn victim_order_matches_brute_force_oracle() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(500);
    let params = CompactionParams::default();
    for case in 0..500 {
        let n = rng.gen_range(1..=8);
        let specs: Vec<_> = (0..n)
            .map(|_| (rng.gen_range(50..2_000), rng.gen::<f64>(), rng.gen_bool(0.25), rng.gen_range(0..3)))
            .collect();
        let msgs = build(&specs);
        let total: u64 = msgs.iter().map(|m| m.tokens).sum();
        let limit = total.max(2_000);
        let target = (rng.gen_range(0.2..0.9) * total as f64) as u64;
        let now = msgs.last().unwrap().turn_index + rng.gen_range(0..5);
        let topic = if rng.gen_bool(0.5) { Some(rng.gen_range(0..3)) } else { None };
        let mut w = window_of(&msgs, limit);
        let mut id = 0;
        let out = compact_clm(&mut w, now, topic, target, &params, &mut id).unwrap();
        assert_eq!(
            out.victims,
            oracle_victims(&msgs, now, topic, target, params.rho, params.tau_imp),
            "case {case}"
        );
        assert!(w.used() <= limit, "case {case}");
        // Key content is never lost: it stays verbatim or inside a summary.
        let keys: Vec<u32> = msgs.iter().filter(|m| m.is_key).map(|m| m.id).collect();
        assert_eq!(w.represented_keys().into_iter().collect::<Vec<_>>(), keys, "case {case}");
    }
}

proptest! {
    #[test]
    fn memgpt_evicts_a_prefix(specs in prop::collection::vec(msg_strategy(), 1..20), frac in 0.1f64..0.9) {
        let msgs = build(&specs);
        let total: u64 = msgs.iter().map(|m| m.tokens).sum();
        let mut w = window_of(&msgs, total);
        let mut id = 0;
        let out = compact_memgpt(&mut w, (frac * total as f64) as u64, 0.15, total, &mut id).unwrap();
        let expect: Vec<u32> = (0..out.victims.len() as u32).collect();
        prop_assert_eq!(&out.victims, &expect);
        let cost: u64 = msgs[..out.victims.len()].iter().map(|m| m.tokens).sum();
        prop_assert_eq!(out.cost_tokens, cost);
    }

    #[test]
    fn proactive_policies_stay_within_limit(
        specs in prop::collection::vec(msg_strategy(), 1..150),
        limit in 4_000u64..30_000,
        policy in prop::sample::select(vec![ContextPolicy::FifoTruncate, ContextPolicy::SlidingWindow, ContextPolicy::MemGptStyle, ContextPolicy::Clm]),
    ) {
        let msgs = build(&specs);
        let mut s = Session::new(policy, limit, ContextParams::default());
        for m in msgs {
            let rec = s.inject(m).unwrap();
            prop_assert!(rec.used <= limit);
            prop_assert!(!rec.overflow);
        }
        if !policy.summarizes() {
            prop_assert_eq!(s.counters.compact_cost, 0);
        }
    }

    #[test]
    fn pressure_block_round_trips(specs in prop::collection::vec(msg_strategy(), 0..60)) {
        let mut s = Session::new(ContextPolicy::Clm, 8_000, ContextParams::default());
        for m in build(&specs) {
            s.inject(m).unwrap();
        }
        let p = parse_pressure(&pressure_report(&s)).unwrap();
        prop_assert_eq!(p.used_tokens, s.window.used());
        prop_assert_eq!(p.limit_tokens, 8_000);
        prop_assert_eq!(p.tier2_records as usize, s.tier2.len());
        prop_assert_eq!(p.tier1_records as usize, s.tier1.len());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn hibernation_round_trip(
        specs in prop::collection::vec(msg_strategy(), 0..120),
        limit in 2_000u64..20_000,
        policy in prop::sample::select(ContextPolicy::ALL.to_vec()),
        cut in 0usize..120,
    ) {
        let msgs = build(&specs);
        let cut = cut.min(msgs.len());
        let mut s = Session::new(policy, limit, ContextParams::default());
        for m in &msgs[..cut] {
            s.inject(m.clone()).unwrap();
        }
        let back = restore(&hibernate(&s)).unwrap();
        prop_assert_eq!(&back, &s);
        // The restored session carries on exactly like the original.
        let mut a = s;
        let mut b = back;
        for m in &msgs[cut..] {
            prop_assert_eq!(a.inject(m.clone()).unwrap(), b.inject(m.clone()).unwrap());
        }
        prop_assert_eq!(a, b);
    }

    #[test]
    fn corrupted_images_are_rejected(flip in 0usize..10_000, bit in 0u8..8) {
        let msgs = gen_session(&SessionConfig::builtin("50turn").unwrap(), 3).unwrap();
        let (s, _) = run_session(&msgs[..40], ContextPolicy::Clm, 50_000, ContextParams::default()).unwrap();
        let mut img = hibernate(&s);
        let at = flip % img.len();
        img[at] ^= 1 << bit;
        prop_assert!(restore(&img).is_err());
    }
}

#[test]
fn interrupted_run_matches_uninterrupted() {
    let cfg = SessionConfig::builtin("200turn").unwrap();
    for seed in 1..=3 {
        let msgs = gen_session(&cfg, seed).unwrap();
        assert_eq!(msgs.len(), 400);
        for policy in ContextPolicy::ALL {
            let (whole, recs) = run_session(&msgs, policy, cfg.window, ContextParams::default()).unwrap();
            let (first, mut recs2) = run_session(&msgs[..200], policy, cfg.window, ContextParams::default()).unwrap();
            let img = hibernate(&first);
            drop(first);
            let mut resumed = restore(&img).unwrap();
            for m in &msgs[200..] {
                recs2.push(resumed.inject(m.clone()).unwrap());
            }
            assert_eq!(recs, recs2, "{policy} seed {seed}");
            assert_eq!(compute_ctx(&whole), compute_ctx(&resumed), "{policy} seed {seed}");
            assert_eq!(whole, resumed);
        }
    }
}

#[test]
fn hibernated_session_refuses_messages() {
    let mut s = Session::new(ContextPolicy::Clm, 1_000, ContextParams::default());
    s.hibernated = true;
    assert_eq!(s.inject(Message::new(0, 10)).unwrap_err(), ContextError::SessionHibernated);
}

#[test]
fn session_profiles_match_their_descriptions() {
    for (name, n, key, lo, hi) in [
        ("50turn", 100, 13, 49_980, 52_020),
        ("100turn", 200, 27, 102_900, 107_100),
        ("200turn", 400, 47, 197_960, 206_040),
        ("multitopic", 240, 35, 113_680, 118_320),
    ] {
        let cfg = SessionConfig::builtin(name).unwrap();
        for seed in 0..5 {
            let msgs = gen_session(&cfg, seed).unwrap();
            assert_eq!(msgs.len(), n, "{name}");
            assert_eq!(msgs.iter().filter(|m| m.is_key).count(), key, "{name}");
            let total: u64 = msgs.iter().map(|m| m.tokens).sum();
            assert!((lo..=hi).contains(&total), "{name}: {total}");
            assert!(msgs.iter().all(|m| !m.is_key || m.importance >= 0.5));
            // Keys are spread out: some in each half.
            let half = n as u32 / 2;
            assert!(msgs.iter().any(|m| m.is_key && m.seq < half));
            assert!(msgs.iter().any(|m| m.is_key && m.seq >= half));
        }
    }
    let mt = gen_session(&SessionConfig::builtin("multitopic").unwrap(), 1).unwrap();
    let switches = mt.windows(2).filter(|w| w[0].topic != w[1].topic).count();
    assert!(switches >= 4, "{switches} topic switches");
    let mut empty = SessionConfig::builtin("50turn").unwrap();
    empty.n_messages = 0;
    empty.n_key_messages = 0;
    empty.n_turns = 0;
    assert!(gen_session(&empty, 1).unwrap().is_empty());
}

#[test]
fn clm_keeps_every_key_on_built_in_sessions() {
    for name in SessionConfig::BUILTIN {
        let cfg = SessionConfig::builtin(name).unwrap();
        let msgs = gen_session(&cfg, 7).unwrap();
        let (s, _) = run_session(&msgs, ContextPolicy::Clm, cfg.window, ContextParams::default()).unwrap();
        let r = compute_ctx(&s);
        assert!(r.retention >= 0.99, "{name}: {}", r.retention);
        assert!(s.window.used() <= cfg.window);
    }
}

#[test]
fn faults_only_under_clm_and_only_on_topic_return() {
    let cfg = SessionConfig::builtin("multitopic").unwrap();
    let msgs = gen_session(&cfg, 2).unwrap();
    for policy in ContextPolicy::ALL {
        let (s, recs) = run_session(&msgs, policy, cfg.window, ContextParams::default()).unwrap();
        let faults = s.counters.tier1_faults + s.counters.tier2_faults;
        if policy != ContextPolicy::Clm {
            assert_eq!(faults, 0, "{policy}");
        }
        for (r, m) in recs.iter().zip(&msgs) {
            if r.fault_tier.is_some() {
                assert!(m.seq > 0 && msgs[m.seq as usize - 1].topic != m.topic);
            }
        }
    }
}
