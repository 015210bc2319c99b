//! Window compaction: value-scored summarize-or-evict, and the value-blind
//! oldest-first block eviction used by the MemGPT-style baseline.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::message::{Message, MessageId, Topic};
use super::value::{value, ValueWeights};
use super::window::{fold_summaries, summarize_stub, ContextWindow, Entry, Summary, SummaryId};
use super::ContextError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompactionParams {
    pub weights: ValueWeights,
    /// Summary size as a fraction of its sources.
    pub rho: f64,
    /// Importance at or above which a victim is summarized in place.
    pub tau_imp: f64,
}

impl Default for CompactionParams {
    fn default() -> Self {
        Self { weights: ValueWeights::default(), rho: 0.15, tau_imp: 0.5 }
    }
}

impl CompactionParams {
    pub fn important(&self, m: &Message) -> bool {
        m.is_key || m.importance >= self.tau_imp
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CompactionOutcome {
    /// Messages taken out of verbatim form, in selection order.
    pub victims: Vec<MessageId>,
    /// Every summary produced, in the window or only in the warm tier.
    pub summaries: Vec<Summary>,
    /// Summaries dropped from the window (they stay in the warm tier).
    pub evicted_summaries: Vec<SummaryId>,
    pub cost_tokens: u64,
}

/// Victim order: lowest value first; on equal value, content outside the
/// current topic goes before same-topic content, then older before newer.
pub fn victim_cmp(a: &Message, b: &Message, now_index: u32, topic: Option<Topic>, w: &ValueWeights) -> Ordering {
    let same = |m: &Message| Some(m.topic) == topic;
    value(a, now_index, w)
        .total_cmp(&value(b, now_index, w))
        .then(same(a).cmp(&same(b)))
        .then(a.seq.cmp(&b.seq))
}

fn check_fit(window: &ContextWindow) -> Result<(), ContextError> {
    if let Some(e) = window.entries().iter().find(|e| e.tokens() > window.limit) {
        return Err(ContextError::CannotFit { tokens: e.tokens(), limit: window.limit });
    }
    Ok(())
}

/// Runs of consecutive sequence numbers.
fn seq_runs(mut msgs: Vec<Message>) -> Vec<Vec<Message>> {
    msgs.sort_by_key(|m| m.seq);
    let mut runs: Vec<Vec<Message>> = Vec::new();
    for m in msgs {
        match runs.last_mut() {
            Some(r) if r.last().is_some_and(|p| p.seq + 1 == m.seq) => r.push(m),
            _ => runs.push(vec![m]),
        }
    }
    runs
}

/// Value-scored compaction down to `target` tokens.
///
/// Repeatedly takes the minimum-value verbatim message. Important victims
/// are replaced in the window by a summary; the rest leave the window and are
/// summarized into the warm tier only. Summaries of adjacent victims are
/// merged. When no verbatim message is left, summaries without key content
/// are dropped oldest first, and if the key summaries alone still exceed the
/// window limit they are folded into a single summary.
///
/// Cost counts each victim once when it is scored for eviction and once as
/// summarizer input.
pub fn compact_clm(
    window: &mut ContextWindow,
    now_index: u32,
    topic: Option<Topic>,
    target: u64,
    params: &CompactionParams,
    next_id: &mut SummaryId,
) -> Result<CompactionOutcome, ContextError> {
    let mut out = CompactionOutcome::default();
    let mut kept_in_window: Vec<Message> = Vec::new();
    let mut archived: Vec<Message> = Vec::new();
    // Placeholder summaries use ids past anything real; they are renumbered
    // once runs are merged.
    let mut placeholder = u32::MAX;

    while window.used() > target {
        let pick = window
            .entries()
            .iter()
            .enumerate()
            .filter_map(|(i, e)| e.as_message().map(|m| (i, m)))
            .min_by(|(_, a), (_, b)| victim_cmp(a, b, now_index, topic, &params.weights))
            .map(|(i, _)| i);
        let Some(idx) = pick else {
            let drop = window
                .entries()
                .iter()
                .position(|e| e.as_summary().is_some_and(|s| s.preserved_keys.is_empty() && s.id < placeholder));
            match drop {
                Some(i) => {
                    let Entry::Summary(s) = window.remove(i) else { unreachable!() };
                    out.evicted_summaries.push(s.id);
                    continue;
                }
                None => break,
            }
        };
        let Entry::Message(victim) = window.entries()[idx].clone() else { unreachable!() };
        out.victims.push(victim.id);
        out.cost_tokens += victim.tokens;
        if params.important(&victim) {
            placeholder -= 1;
            let s = summarize_stub(placeholder, std::slice::from_ref(&victim), params.rho);
            window.replace(idx, Entry::Summary(s));
            kept_in_window.push(victim);
        } else {
            window.remove(idx);
            archived.push(victim);
        }
    }

    // Merge placeholder summaries sitting next to each other in the window.
    let kept_runs = merge_placeholder_runs(window, &kept_in_window, placeholder);
    let mut batches: Vec<(Vec<Message>, bool)> = kept_runs.into_iter().map(|r| (r, true)).collect();
    batches.extend(seq_runs(archived).into_iter().map(|r| (r, false)));
    batches.sort_by_key(|(r, _)| r[0].seq);
    for (run, in_window) in batches {
        out.cost_tokens += run.iter().map(|m| m.tokens).sum::<u64>();
        let s = summarize_stub(*next_id, &run, params.rho);
        *next_id += 1;
        if in_window {
            window.insert(Entry::Summary(s.clone()));
        }
        out.summaries.push(s);
    }
    if window.used() > window.limit && window.entries().iter().all(|e| e.as_summary().is_some()) {
        let mut parts = Vec::new();
        while !window.is_empty() {
            let Entry::Summary(s) = window.remove(0) else { unreachable!() };
            out.evicted_summaries.push(s.id);
            out.cost_tokens += s.tokens;
            parts.push(s);
        }
        let s = fold_summaries(*next_id, &parts, params.rho);
        *next_id += 1;
        window.insert(Entry::Summary(s.clone()));
        out.summaries.push(s);
    }
    check_fit(window)?;
    Ok(out)
}

/// Pull placeholder summaries out of the window and group their sources into
/// runs that were adjacent in the window.
fn merge_placeholder_runs(window: &mut ContextWindow, sources: &[Message], floor: SummaryId) -> Vec<Vec<Message>> {
    let mut runs: Vec<Vec<Message>> = Vec::new();
    let mut prev_was_placeholder = false;
    let mut i = 0;
    while i < window.len() {
        let is_ph = window.entries()[i].as_summary().is_some_and(|s| s.id >= floor);
        if is_ph {
            let Entry::Summary(s) = window.remove(i) else { unreachable!() };
            let src = sources.iter().find(|m| m.id == s.source_ids[0]).expect("placeholder source").clone();
            if prev_was_placeholder {
                runs.last_mut().expect("open run").push(src);
            } else {
                runs.push(vec![src]);
            }
            prev_was_placeholder = true;
        } else {
            prev_was_placeholder = false;
            i += 1;
        }
    }
    runs
}

/// Oldest-first block eviction: verbatim messages leave the window oldest
/// first until the window, with the block's summary added back, is at
/// `target`. The summary is kept regardless of content. In-window summaries beyond
/// `summary_budget` tokens are dropped oldest first.
pub fn compact_memgpt(
    window: &mut ContextWindow,
    target: u64,
    rho: f64,
    summary_budget: u64,
    next_id: &mut SummaryId,
) -> Result<CompactionOutcome, ContextError> {
    let mut out = CompactionOutcome::default();
    let mut block: Vec<Message> = Vec::new();
    let mut block_tokens = 0u64;
    let projected = |used: u64, bt: u64| used + ((rho * bt as f64).ceil() as u64);
    while projected(window.used(), block_tokens) > target {
        let Some(i) = window.entries().iter().position(|e| e.as_message().is_some()) else { break };
        let Entry::Message(m) = window.remove(i) else { unreachable!() };
        block_tokens += m.tokens;
        out.victims.push(m.id);
        block.push(m);
    }
    if !block.is_empty() {
        out.cost_tokens = block_tokens;
        let s = summarize_stub(*next_id, &block, rho);
        *next_id += 1;
        window.insert(Entry::Summary(s.clone()));
        out.summaries.push(s);
    }
    while window.summary_tokens() > summary_budget {
        let i = window.entries().iter().position(|e| e.as_summary().is_some()).expect("summary tokens > 0");
        let Entry::Summary(s) = window.remove(i) else { unreachable!() };
        out.evicted_summaries.push(s.id);
    }
    check_fit(window)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window_of(msgs: &[Message], limit: u64) -> ContextWindow {
        let mut w = ContextWindow::new(limit);
        for m in msgs {
            w.insert(Entry::Message(m.clone()));
        }
        w
    }

    #[test]
    fn under_target_is_noop() {
        let mut w = window_of(&[Message::new(0, 100)], 1000);
        let mut id = 0;
        let out = compact_clm(&mut w, 0, None, 600, &CompactionParams::default(), &mut id).unwrap();
        assert_eq!(out.cost_tokens, 0);
        assert!(out.victims.is_empty());
    }

    #[test]
    fn key_messages_survive_as_summaries() {
        let msgs: Vec<Message> = (0..8)
            .map(|i| {
                let m = Message::new(i, 200).with_importance(0.1);
                if i % 3 == 0 { m.key(0.9) } else { m }
            })
            .collect();
        let keys: Vec<u32> = msgs.iter().filter(|m| m.is_key).map(|m| m.id).collect();
        let mut w = window_of(&msgs, 1600);
        let mut id = 0;
        compact_clm(&mut w, 3, None, 500, &CompactionParams::default(), &mut id).unwrap();
        assert!(w.used() <= 500);
        assert_eq!(w.represented_keys().into_iter().collect::<Vec<_>>(), keys);
    }

    #[test]
    fn adjacent_important_victims_share_a_summary() {
        let msgs: Vec<Message> = (0..4).map(|i| Message::new(i, 400).with_importance(0.6)).collect();
        let mut w = window_of(&msgs, 2000);
        let mut id = 0;
        let params = CompactionParams { rho: 0.25, ..CompactionParams::default() };
        let out = compact_clm(&mut w, 1, None, 1000, &params, &mut id).unwrap();
        // 1600 → 1300 → 1000 after two in-place replacements; the two
        // adjacent single-source summaries merge into one of 200 tokens
        assert_eq!(out.victims, vec![0, 1]);
        assert_eq!(out.summaries.len(), 1);
        assert_eq!(out.summaries[0].source_ids, vec![0, 1]);
        assert_eq!(out.summaries[0].tokens, 200);
        assert_eq!(w.used(), 1000);
        assert_eq!(out.cost_tokens, 2 * 800);
    }

    #[test]
    fn memgpt_evicts_oldest_regardless_of_value() {
        let msgs = vec![Message::new(0, 400).key(1.0), Message::new(1, 400), Message::new(2, 400)];
        let mut w = window_of(&msgs, 1200);
        let mut id = 0;
        let out = compact_memgpt(&mut w, 700, 0.25, 10_000, &mut id).unwrap();
        assert_eq!(out.victims, vec![0, 1]);
        assert_eq!(out.cost_tokens, 800);
        assert_eq!(w.used(), 600);
    }

    #[test]
    fn oversized_entry_cannot_fit() {
        let mut w = window_of(&[Message::new(0, 5000)], 1000);
        let mut id = 0;
        let err = compact_memgpt(&mut w, 10, 0.25, 0, &mut id);
        assert!(err.is_ok(), "a 5000-token message summarizes to 1250 and the budget then drops it");
        // 20000 summarizes to 5000, folding brings it to 1250: still too big.
        let mut w = window_of(&[Message::new(0, 20_000).key(1.0)], 1000);
        let params = CompactionParams { rho: 0.25, ..CompactionParams::default() };
        let err = compact_clm(&mut w, 0, None, 10, &params, &mut id).unwrap_err();
        assert_eq!(err, ContextError::CannotFit { tokens: 1250, limit: 1000 });
    }

    #[test]
    fn key_summaries_fold_when_they_alone_overflow() {
        let msgs: Vec<Message> = (0..10).map(|i| Message::new(i, 1000).key(0.9)).collect();
        let mut w = window_of(&msgs, 1000);
        let mut id = 0;
        let out = compact_clm(&mut w, 9, None, 600, &CompactionParams::default(), &mut id).unwrap();
        assert!(w.used() <= 1000, "{}", w.used());
        assert_eq!(w.len(), 1);
        assert_eq!(w.represented_keys().into_iter().collect::<Vec<_>>(), (0..10).collect::<Vec<_>>());
        assert!(!out.evicted_summaries.is_empty());
    }
}
