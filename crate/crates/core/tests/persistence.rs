use std::collections::{BTreeMap, BTreeSet};
use std::fs;

use laneward::context::{summarize_stub, ContextParams, ContextPolicy, Message, Session};
use laneward::persistence::{ColdLog, PersistError, WarmRecord, WarmStore};
use laneward::workloads::{gen_session, SessionConfig};
use rand::{Rng, SeedableRng};

#[test]
fn replay_reconstructs_the_200_turn_session() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cold.log");
    let msgs = gen_session(&SessionConfig::builtin("200turn").unwrap(), 4).unwrap();
    let mut log = ColdLog::open(&path, "s200").unwrap();
    for (i, m) in msgs.iter().enumerate() {
        assert_eq!(log.append(m).unwrap(), i as u64);
    }
    log.close().unwrap();
    let back = ColdLog::replay(&path).unwrap();
    assert_eq!(back.len(), 400);
    assert!(back.iter().all(|r| r.session_id == "s200"));
    let replayed: Vec<Message> = back.into_iter().map(|r| r.message).collect();
    assert_eq!(serde_json::to_vec(&replayed).unwrap(), serde_json::to_vec(&msgs).unwrap());
}

#[test]
fn every_byte_prefix_replays_to_a_record_prefix() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cold.log");
    let msgs = gen_session(&SessionConfig::builtin("50turn").unwrap(), 1).unwrap();
    let mut log = ColdLog::open(&path, "s").unwrap();
    for m in &msgs[..25] {
        log.append(m).unwrap();
    }
    log.close().unwrap();
    let bytes = fs::read(&path).unwrap();
    let ends: Vec<usize> = bytes.iter().enumerate().filter(|(_, &b)| b == b'\n').map(|(i, _)| i + 1).collect();
    let cut_path = dir.path().join("cut.log");
    for len in 0..=bytes.len() {
        fs::write(&cut_path, &bytes[..len]).unwrap();
        let recs = ColdLog::replay(&cut_path).unwrap();
        let complete = ends.iter().filter(|&&e| e <= len).count();
        assert_eq!(recs.len(), complete, "prefix of {len} bytes");
        for (i, r) in recs.iter().enumerate() {
            assert_eq!(r.seq, i as u64);
            assert_eq!(r.message, msgs[i]);
        }
    }
    // Reopening a torn log continues cleanly after the last whole record.
    fs::write(&cut_path, &bytes[..ends[9] + 7]).unwrap();
    let mut log = ColdLog::open(&cut_path, "s").unwrap();
    assert_eq!(log.append(&msgs[10]).unwrap(), 10);
    assert_eq!(ColdLog::replay(&cut_path).unwrap().len(), 11);
}

#[test]
fn append_after_close_fails() {
    let dir = tempfile::tempdir().unwrap();
    let mut log = ColdLog::open(dir.path().join("c.log"), "s").unwrap();
    log.append(&Message::new(0, 5)).unwrap();
    log.close().unwrap();
    assert!(matches!(log.append(&Message::new(1, 5)), Err(PersistError::Closed)));
}

#[test]
fn corrupt_middle_line_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.log");
    let mut log = ColdLog::open(&path, "s").unwrap();
    for i in 0..3 {
        log.append(&Message::new(i, 5)).unwrap();
    }
    log.close().unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[1] = "{not json";
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    assert!(matches!(ColdLog::replay(&path), Err(PersistError::Corrupt { line: 2, .. })));
}

#[test]
fn ten_thousand_warm_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("warm.db");
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(10_000);
    let mut store = WarmStore::open(&path).unwrap();
    let mut expect: BTreeMap<u32, WarmRecord> = BTreeMap::new();
    for i in 0..10_000u64 {
        let id = rng.gen_range(0..3_000u32);
        let n = rng.gen_range(1..5u32);
        let first = rng.gen_range(0..10_000u32);
        let sources: Vec<Message> = (0..n)
            .map(|k| {
                let m = Message::new(first + k, rng.gen_range(1..3_000));
                if rng.gen_bool(0.3) {
                    m.key(rng.gen_range(0.5..1.0))
                } else {
                    m.with_importance(rng.gen())
                }
            })
            .collect();
        let rec = WarmRecord { summary: summarize_stub(id, &sources, rng.gen_range(0.05..0.5)), created_at: i };
        store.put(&rec).unwrap();
        assert_eq!(store.get(id).unwrap(), rec);
        expect.insert(id, rec);
    }
    assert!(matches!(store.get(3_000), Err(PersistError::NotFound(3_000))));
    drop(store);
    let mut store = WarmStore::open(&path).unwrap();
    assert_eq!(store.len(), expect.len());
    for (id, rec) in &expect {
        assert_eq!(&store.get(*id).unwrap(), rec);
    }
}

#[test]
fn warm_sources_exist_in_the_cold_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SessionConfig::builtin("100turn").unwrap();
    let msgs = gen_session(&cfg, 2).unwrap();
    let mut cold = ColdLog::open(dir.path().join("cold.log"), "s").unwrap();
    let mut warm = WarmStore::open(dir.path().join("warm.db")).unwrap();
    let mut s = Session::new(ContextPolicy::Clm, cfg.window, ContextParams::default());
    for m in &msgs {
        cold.append(m).unwrap();
        let rec = s.inject(m.clone()).unwrap();
        for sum in rec.compaction.iter().flat_map(|c| &c.summaries) {
            warm.put(&WarmRecord { summary: sum.clone(), created_at: rec.seq as u64 }).unwrap();
        }
    }
    cold.close().unwrap();
    let logged: BTreeSet<u32> =
        ColdLog::replay(&dir.path().join("cold.log")).unwrap().iter().map(|r| r.message.id).collect();
    assert!(!warm.is_empty());
    let ids: Vec<u32> = warm.ids().collect();
    for id in ids {
        let r = warm.get(id).unwrap();
        assert!(r.summary.source_ids.iter().all(|s| logged.contains(s)), "summary {id}");
        assert_eq!(&r.summary, &s.tier1[&id]);
    }
}
