//! Synchronous broadcast bus with optional per-receiver packet drops, and the
//! slot-allocation log derived from the trigger books.

use crate::error::{Error, Result};
use crate::numerics::Vector;
use crate::plant::NoiseSource;
use crate::trigger::TriggerBook;

/// One broadcast payload and which agents received it.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub sender: usize,
    pub payload: Vector,
    /// `delivered[r]`; the sender's own entry is always true.
    pub delivered: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BusRound {
    pub round: usize,
    pub p_drop: f64,
    pub deliveries: Vec<Delivery>,
}

impl BusRound {
    /// Payload from `sender` as seen by `receiver`, if it arrived.
    pub fn received(&self, receiver: usize, sender: usize) -> Option<&Vector> {
        self.deliveries
            .iter()
            .find(|d| d.sender == sender)
            .filter(|d| d.delivered.get(receiver).copied().unwrap_or(false))
            .map(|d| &d.payload)
    }
}

/// Broadcasts every `(sender, x̂)` pair to all `agents`; each
/// (sender, receiver) pair is dropped independently with `p_drop`.
pub fn broadcast(
    round: usize,
    senders: Vec<(usize, Vector)>,
    agents: usize,
    p_drop: f64,
    noise: &mut NoiseSource,
) -> Result<BusRound> {
    if !(0.0..=1.0).contains(&p_drop) {
        return Err(Error::Config(format!(
            "drop probability {p_drop} outside [0, 1]"
        )));
    }
    let mut deliveries = Vec::with_capacity(senders.len());
    for (sender, payload) in senders {
        if sender >= agents {
            return Err(Error::Contract(format!("sender {sender} out of range")));
        }
        let delivered = (0..agents)
            .map(|r| r == sender || p_drop == 0.0 || !noise.bernoulli(p_drop))
            .collect();
        deliveries.push(Delivery {
            sender,
            payload,
            delivered,
        });
    }
    Ok(BusRound {
        round,
        p_drop,
        deliveries,
    })
}

/// A consumed slot and when it became known.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct AllocationEntry {
    pub round: usize,
    pub agent: usize,
    /// `None` for slots settled before the run (step 1, PT start-up slots).
    pub decided_at: Option<usize>,
    pub lead_time: Option<usize>,
}

/// Slot log for rounds `1..=horizon`, ordered by round then agent.
pub fn allocation_log(books: &[&TriggerBook], horizon: usize) -> Vec<AllocationEntry> {
    let mut log: Vec<AllocationEntry> = books
        .iter()
        .enumerate()
        .flat_map(|(agent, book)| {
            book.triggers()
                .iter()
                .copied()
                .filter(move |&r| r <= horizon)
                .map(move |round| {
                    let decided_at = book.decided_at(round);
                    AllocationEntry {
                        round,
                        agent,
                        decided_at,
                        lead_time: decided_at.map(|d| round - d),
                    }
                })
        })
        .collect();
    log.sort_by_key(|e| (e.round, e.agent));
    log
}

/// Entries whose slot was known fewer than `lead` rounds in advance.
/// Configured slots count as known from the start.
pub fn lead_time_violations(log: &[AllocationEntry], lead: usize) -> Vec<AllocationEntry> {
    log.iter()
        .filter(|e| e.lead_time.is_some_and(|t| t < lead))
        .copied()
        .collect()
}
