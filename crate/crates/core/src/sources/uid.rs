use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub const DEFAULT_DAILY_QUOTA: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UidStatus {
    Pending,
    Valid,
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessedCheck {
    pub state: String,
    pub id: String,
    pub valid: bool,
}

/// Queue key: higher priority first, then ascending id.
type QueueKey = (Reverse<u32>, String);

/// One queued check in the serialized form of the client.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueuedCheck {
    pub state: String,
    pub id: String,
    pub priority: u32,
}

/// Serialized form of [`UidValidationClient`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UidClientState {
    quota: usize,
    day: u32,
    queued: Vec<QueuedCheck>,
    /// Completed checks only; pending ones are implied by `queued`.
    results: BTreeMap<String, UidStatus>,
    #[serde(default)]
    processed_today: BTreeMap<String, usize>,
}

/// Cross-border VAT id checks with a per-member-state daily quota.
///
/// Each state has its own queue ordered by priority (descending) then id (ascending).
/// Enqueueing a known id is a no-op except that a higher priority replaces a lower one
/// while the check is still pending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "UidClientState", from = "UidClientState")]
pub struct UidValidationClient {
    quota: usize,
    queues: BTreeMap<String, BTreeSet<QueueKey>>,
    priorities: BTreeMap<(String, String), u32>,
    results: BTreeMap<String, UidStatus>,
    day: u32,
    processed_today: BTreeMap<String, usize>,
}

impl Default for UidValidationClient {
    fn default() -> Self {
        UidValidationClient::new(DEFAULT_DAILY_QUOTA)
    }
}

impl From<UidValidationClient> for UidClientState {
    fn from(c: UidValidationClient) -> Self {
        let queued = c
            .queues
            .iter()
            .flat_map(|(state, q)| {
                q.iter().map(move |(Reverse(p), id)| QueuedCheck {
                    state: state.clone(),
                    id: id.clone(),
                    priority: *p,
                })
            })
            .collect();
        let results = c
            .results
            .into_iter()
            .filter(|(_, s)| *s != UidStatus::Pending)
            .collect();
        UidClientState {
            quota: c.quota,
            day: c.day,
            queued,
            results,
            processed_today: c.processed_today,
        }
    }
}

impl From<UidClientState> for UidValidationClient {
    fn from(s: UidClientState) -> Self {
        let mut c = UidValidationClient::new(s.quota);
        c.day = s.day;
        c.results = s.results;
        c.processed_today = s.processed_today;
        for q in s.queued {
            c.enqueue(&q.state, &q.id, q.priority);
        }
        c
    }
}

impl UidValidationClient {
    pub fn new(quota: usize) -> Self {
        UidValidationClient {
            quota,
            queues: BTreeMap::new(),
            priorities: BTreeMap::new(),
            results: BTreeMap::new(),
            day: 0,
            processed_today: BTreeMap::new(),
        }
    }

    pub fn quota(&self) -> usize {
        self.quota
    }

    /// Takes effect from the next simulated day.
    pub fn set_quota(&mut self, quota: usize) {
        self.quota = quota;
    }

    pub fn day(&self) -> u32 {
        self.day
    }

    pub fn enqueue(&mut self, state: &str, id: &str, priority: u32) {
        if matches!(
            self.results.get(id),
            Some(UidStatus::Valid | UidStatus::Invalid)
        ) {
            return;
        }
        let key = (state.to_string(), id.to_string());
        let queue = self.queues.entry(state.to_string()).or_default();
        match self.priorities.get(&key) {
            Some(&old) if old >= priority => return,
            Some(&old) => {
                queue.remove(&(Reverse(old), id.to_string()));
            }
            None => {}
        }
        queue.insert((Reverse(priority), id.to_string()));
        self.priorities.insert(key, priority);
        self.results.insert(id.to_string(), UidStatus::Pending);
    }

    pub fn pending(&self) -> usize {
        self.queues.values().map(BTreeSet::len).sum()
    }

    pub fn pending_in(&self, state: &str) -> usize {
        self.queues.get(state).map_or(0, BTreeSet::len)
    }

    /// Ids queued for a state, in processing order.
    pub fn queue_order(&self, state: &str) -> Vec<String> {
        self.queues
            .get(state)
            .into_iter()
            .flatten()
            .map(|(_, id)| id.clone())
            .collect()
    }

    pub fn status(&self, id: &str) -> Option<UidStatus> {
        self.results.get(id).copied()
    }

    pub fn statuses(&self) -> &BTreeMap<String, UidStatus> {
        &self.results
    }

    /// Checks performed per state on the current day.
    pub fn processed_today(&self, state: &str) -> usize {
        self.processed_today.get(state).copied().unwrap_or(0)
    }

    /// Runs one simulated day: starts a new day, then validates up to the quota per
    /// state in queue order using `oracle`.
    pub fn run_validation_day(&mut self, oracle: impl Fn(&str) -> bool) -> Vec<ProcessedCheck> {
        self.day += 1;
        self.processed_today.clear();
        let mut out = Vec::new();
        for (state, queue) in &mut self.queues {
            let done = self.processed_today.entry(state.clone()).or_insert(0);
            while *done < self.quota {
                let Some((_, id)) = queue.pop_first() else {
                    break;
                };
                let valid = oracle(&id);
                self.priorities.remove(&(state.clone(), id.clone()));
                self.results.insert(
                    id.clone(),
                    if valid {
                        UidStatus::Valid
                    } else {
                        UidStatus::Invalid
                    },
                );
                *done += 1;
                out.push(ProcessedCheck {
                    state: state.clone(),
                    id,
                    valid,
                });
            }
        }
        self.queues.retain(|_, q| !q.is_empty());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enqueue_is_idempotent() {
        let mut c = UidValidationClient::new(5);
        c.enqueue("DE", "X", 10);
        c.enqueue("DE", "X", 10);
        c.enqueue("DE", "X", 3);
        assert_eq!(c.pending(), 1);
        assert_eq!(c.status("X"), Some(UidStatus::Pending));
    }

    #[test]
    fn priority_then_id_order() {
        let mut c = UidValidationClient::new(1);
        c.enqueue("DE", "low", 100);
        c.enqueue("DE", "high", 900);
        c.enqueue("FR", "B", 500);
        c.enqueue("FR", "A", 500);
        assert_eq!(c.queue_order("DE"), ["high", "low"]);
        assert_eq!(c.queue_order("FR"), ["A", "B"]);
        let first = c.run_validation_day(|_| true);
        let ids: Vec<&str> = first.iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids, ["high", "A"]);
    }

    #[test]
    fn quota_limits_each_day() {
        let mut c = UidValidationClient::new(2);
        for i in 0..5 {
            c.enqueue("IT", &format!("U{i}"), 0);
        }
        assert_eq!(c.run_validation_day(|id| id != "U1").len(), 2);
        assert_eq!(c.pending(), 3);
        assert_eq!(c.status("U1"), Some(UidStatus::Invalid));
        assert_eq!(c.status("U0"), Some(UidStatus::Valid));
        c.run_validation_day(|_| true);
        c.run_validation_day(|_| true);
        assert_eq!(c.pending(), 0);
        assert_eq!(c.day(), 3);
    }

    #[test]
    fn large_quota_processes_all() {
        let mut c = UidValidationClient::new(100);
        for i in 0..5 {
            c.enqueue("IT", &format!("U{i}"), i);
        }
        assert_eq!(c.run_validation_day(|_| true).len(), 5);
    }

    #[test]
    fn serialized_state_round_trips() {
        let mut c = UidValidationClient::new(1);
        c.enqueue("DE", "A", 5);
        c.enqueue("DE", "B", 7);
        c.enqueue("IT", "C", 1);
        c.run_validation_day(|id| id != "B");
        let json = serde_json::to_string(&c).unwrap();
        let back: UidValidationClient = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.queue_order("DE"), ["A"]);
        assert_eq!(back.status("B"), Some(UidStatus::Invalid));
    }

    #[test]
    fn resolved_ids_are_not_requeued() {
        let mut c = UidValidationClient::new(1);
        c.enqueue("AT", "X", 1);
        c.run_validation_day(|_| false);
        c.enqueue("AT", "X", 999);
        assert_eq!(c.pending(), 0);
        assert_eq!(c.status("X"), Some(UidStatus::Invalid));
    }
}
