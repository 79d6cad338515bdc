//! Per-agent policy state: decide, broadcast, update.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::klcore::{kl_budget, kl_ucb_solve, ucb1_bonus, ConfidenceParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    DecKlucb,
    DecUcb1,
    SingleKlucb,
    SingleUcb1,
}

impl Policy {
    pub const ALL: [Policy; 4] = [Policy::DecKlucb, Policy::DecUcb1, Policy::SingleKlucb, Policy::SingleUcb1];

    pub fn is_single_agent(self) -> bool {
        matches!(self, Policy::SingleKlucb | Policy::SingleUcb1)
    }

    pub fn is_kl(self) -> bool {
        matches!(self, Policy::DecKlucb | Policy::SingleKlucb)
    }

    pub fn single_agent_counterpart(self) -> Policy {
        if self.is_kl() {
            Policy::SingleKlucb
        } else {
            Policy::SingleUcb1
        }
    }

    /// Policy actually run by an agent with `neighborhood_size` neighbors:
    /// isolated agents fall back to the single-agent baseline.
    pub fn effective(self, neighborhood_size: usize) -> Policy {
        if neighborhood_size <= 1 {
            self.single_agent_counterpart()
        } else {
            self
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Policy::DecKlucb => "dec_klucb",
            Policy::DecUcb1 => "dec_ucb1",
            Policy::SingleKlucb => "single_klucb",
            Policy::SingleUcb1 => "single_ucb1",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown policy `{s}` (expected dec_klucb, dec_ucb1, single_klucb or single_ucb1)")))
    }
}

/// Values an agent sends to its neighbors at the end of its decision step.
#[derive(Debug, Clone, PartialEq)]
pub struct Broadcast {
    pub sender: usize,
    pub m_vec: Vec<u64>,
    pub z_vec: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub agent_id: usize,
    pub policy: Policy,
    pub params: ConfidenceParams,
    pub n: Vec<u64>,
    pub m: Vec<u64>,
    pub xbar: Vec<f64>,
    pub z: Vec<f64>,
    pub reward_sum: Vec<f64>,
}

impl AgentState {
    /// State after the initialization sweep: one pull of every arm.
    pub fn init(agent_id: usize, policy: Policy, params: ConfidenceParams, initial_rewards: &[f64]) -> Result<Self> {
        if initial_rewards.is_empty() {
            return Err(Error::Length { expected: 1, got: 0 });
        }
        if let Some(r) = initial_rewards.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::Domain(format!("initial reward {r} outside [0, 1]")));
        }
        let arms = initial_rewards.len();
        Ok(Self {
            agent_id,
            policy,
            params,
            n: vec![1; arms],
            m: vec![1; arms],
            xbar: initial_rewards.to_vec(),
            z: initial_rewards.to_vec(),
            reward_sum: initial_rewards.to_vec(),
        })
    }

    pub fn arm_count(&self) -> usize {
        self.n.len()
    }

    /// Arms lagging the estimated network maximum by at least `M` pulls.
    pub fn arm_index_set(&self) -> Vec<usize> {
        let arms = self.arm_count() as u64;
        (0..self.arm_count())
            .filter(|&k| self.n[k] + arms <= self.m[k])
            .collect()
    }

    /// Chooses the arm to pull in round `t` (from the time-`t` state).
    pub fn decide<R: Rng + ?Sized>(&self, t: u64, rng: &mut R) -> usize {
        if !self.policy.is_single_agent() {
            let lagging = self.arm_index_set();
            if !lagging.is_empty() {
                return lagging[rng.random_range(0..lagging.len())];
            }
        }
        self.greedy_index(t as f64)
    }

    /// Upper confidence index of arm `k` at time `t`.
    pub fn ucb_index(&self, k: usize, t: f64) -> f64 {
        let single = self.policy.is_single_agent();
        let estimate = if single { self.xbar[k] } else { self.z[k] };
        if self.policy.is_kl() {
            let budget = kl_budget(t, &self.params, single);
            kl_ucb_solve(estimate.clamp(0.0, 1.0), self.n[k], budget)
        } else {
            estimate + ucb1_bonus(t, self.n[k], &self.params, single)
        }
    }

    // argmax with ties to the lowest index
    fn greedy_index(&self, t: f64) -> usize {
        let mut best = 0;
        let mut best_val = f64::NEG_INFINITY;
        for k in 0..self.arm_count() {
            let v = self.ucb_index(k, t);
            if v > best_val {
                best = k;
                best_val = v;
            }
        }
        best
    }

    pub fn broadcast(&self) -> Broadcast {
        Broadcast { sender: self.agent_id, m_vec: self.m.clone(), z_vec: self.z.clone() }
    }

    /// Advances to `t + 1` after pulling `chosen` and observing `reward`.
    ///
    /// `weights_row` lists `(j, w_ij)` for every `j` in the neighborhood
    /// (self included); `inbox` must hold exactly one time-`t` broadcast from
    /// each of them.
    pub fn update(
        &mut self,
        chosen: usize,
        reward: f64,
        weights_row: &[(usize, f64)],
        inbox: &[&Broadcast],
    ) -> Result<()> {
        let arms = self.arm_count();
        if chosen >= arms {
            return Err(Error::Protocol(format!("agent {} chose arm {chosen} of {arms}", self.agent_id)));
        }
        if !(0.0..=1.0).contains(&reward) {
            return Err(Error::Domain(format!("reward {reward} outside [0, 1]")));
        }
        if inbox.len() != weights_row.len() {
            return Err(Error::Protocol(format!(
                "agent {} expected {} broadcasts, got {}",
                self.agent_id,
                weights_row.len(),
                inbox.len()
            )));
        }
        let mut ordered = Vec::with_capacity(weights_row.len());
        for &(j, w) in weights_row {
            let msg = inbox
                .iter()
                .find(|b| b.sender == j)
                .ok_or_else(|| Error::Protocol(format!("agent {} missing broadcast from {j}", self.agent_id)))?;
            if msg.m_vec.len() != arms || msg.z_vec.len() != arms {
                return Err(Error::Length { expected: arms, got: msg.z_vec.len().min(msg.m_vec.len()) });
            }
            ordered.push((w, *msg));
        }

        let old_xbar = self.xbar[chosen];
        self.n[chosen] += 1;
        self.reward_sum[chosen] += reward;
        self.xbar[chosen] = (self.reward_sum[chosen] / self.n[chosen] as f64).clamp(0.0, 1.0);

        for k in 0..arms {
            let fused: f64 = ordered.iter().map(|(w, b)| w * b.z_vec[k]).sum();
            let increment = if k == chosen { self.xbar[k] - old_xbar } else { 0.0 };
            self.z[k] = fused + increment;
            let neighbor_max = ordered.iter().map(|(_, b)| b.m_vec[k]).max().unwrap_or(0);
            self.m[k] = self.n[k].max(neighbor_max);
        }
        debug_assert!(self.n.iter().zip(&self.m).all(|(n, m)| m >= n));
        Ok(())
    }
}
