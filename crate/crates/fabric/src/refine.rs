//! Reactive subscription refinement.
//!
//! After processing its inbox, an agent may rewrite its profile text so the
//! pool's view of it tracks what it actually receives and handles. Policies
//! return `None` when the profile should stay as is; the protocol layer
//! decides when a refined profile is promoted to the shared pool.

use std::collections::BTreeMap;

use crate::embedding::tokenize;
use crate::types::{MessagePacket, Subscription};

/// Profile rewriting strategy. Must be deterministic in its inputs.
pub trait RefinementPolicy: Send + Sync {
    fn refine(
        &self,
        subscription: &Subscription,
        history: &[MessagePacket],
        inbox: &[MessagePacket],
    ) -> Option<String>;
}

/// Never refines. Baseline for ablations.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityRefiner;

impl RefinementPolicy for IdentityRefiner {
    fn refine(&self, _: &Subscription, _: &[MessagePacket], _: &[MessagePacket]) -> Option<String> {
        None
    }
}

/// Maximum profile length after refinement; text beyond this is truncated at
/// the previous token boundary.
pub const MAX_PROFILE_LEN: usize = 1024;

const APPEND_COUNT: usize = 3;

/// Words too generic to specialize on.
const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "in", "is", "it", "of", "on",
    "or", "that", "the", "then", "this", "to", "with",
];

/// Appends the most frequent unseen inbox tokens to the profile as a
/// `specialized in:` clause.
///
/// Tokens are drawn from each packet's routing text (its plan when present),
/// so the profile absorbs the intent vocabulary of the traffic it actually
/// receives and future matches for that traffic score higher. Tokens already
/// present in the profile are excluded, which makes the policy idempotent on
/// a stable inbox vocabulary. Frequency ties break lexicographically, so
/// refinement is deterministic.
#[derive(Debug, Clone, Copy, Default)]
pub struct KeywordRefiner;

impl RefinementPolicy for KeywordRefiner {
    fn refine(
        &self,
        subscription: &Subscription,
        _history: &[MessagePacket],
        inbox: &[MessagePacket],
    ) -> Option<String> {
        if inbox.is_empty() {
            return None;
        }
        let known: Vec<String> = tokenize(&subscription.profile_text).collect();
        let mut freq: BTreeMap<String, usize> = BTreeMap::new();
        for pkt in inbox {
            for token in tokenize(pkt.routing_text()) {
                if token.chars().all(|c| c.is_ascii_digit()) {
                    continue;
                }
                if STOPWORDS.contains(&token.as_str()) || known.contains(&token) {
                    continue;
                }
                *freq.entry(token).or_insert(0) += 1;
            }
        }
        // BTreeMap iteration gives the lexicographic tie-break for free once
        // sorted stably by count.
        let mut ranked: Vec<(String, usize)> = freq.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(APPEND_COUNT);
        if ranked.is_empty() {
            return None;
        }
        let words: Vec<String> = ranked.into_iter().map(|(t, _)| t).collect();
        let mut text = format!(
            "{} specialized in: {}",
            subscription.profile_text,
            words.join(" ")
        );
        if text.len() > MAX_PROFILE_LEN {
            let cut = text[..MAX_PROFILE_LEN]
                .rfind(char::is_whitespace)
                .unwrap_or(MAX_PROFILE_LEN);
            text.truncate(cut);
        }
        if text == subscription.profile_text {
            return None;
        }
        Some(text)
    }
}
