use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::policy::LogLinearPolicy;
use crate::reward::ObjectiveSet;
use crate::world::World;

/// Exact, enumerated evaluation of a policy against a reference policy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalMetrics {
    pub objective_ids: Vec<usize>,
    /// Mean over prompts of `E_pi[r_j]`.
    pub expected_reward: Vec<f64>,
    /// Fraction of prompts where the policy's expected `r_j` beats the
    /// reference's; ties count one half.
    pub win_rate: Vec<f64>,
    /// Unweighted mean of the win rates.
    pub average_score: f64,
}

impl EvalMetrics {
    pub fn win_rate_of(&self, objective_id: usize) -> f64 {
        let i = self
            .objective_ids
            .iter()
            .position(|&id| id == objective_id)
            .expect("objective was evaluated");
        self.win_rate[i]
    }

    pub fn expected_reward_of(&self, objective_id: usize) -> f64 {
        let i = self
            .objective_ids
            .iter()
            .position(|&id| id == objective_id)
            .expect("objective was evaluated");
        self.expected_reward[i]
    }

    /// Flat key-value record, e.g. `{"win_rate_1": .., "expected_reward_1": .., "average_score": ..}`.
    pub fn to_record(&self) -> serde_json::Map<String, serde_json::Value> {
        let mut map = serde_json::Map::new();
        for (i, id) in self.objective_ids.iter().enumerate() {
            map.insert(format!("expected_reward_{id}"), self.expected_reward[i].into());
            map.insert(format!("win_rate_{id}"), self.win_rate[i].into());
        }
        map.insert("average_score".into(), self.average_score.into());
        map
    }

    /// Inverse of [`EvalMetrics::to_record`]. Objectives are ordered by id.
    pub fn from_record(record: &serde_json::Map<String, serde_json::Value>) -> Result<Self> {
        let number = |key: &str| {
            record
                .get(key)
                .and_then(|v| v.as_f64())
                .ok_or_else(|| Error::config("metrics", format!("missing numeric field `{key}`")))
        };
        let mut objective_ids: Vec<usize> = record
            .keys()
            .filter_map(|k| k.strip_prefix("win_rate_")?.parse().ok())
            .collect();
        objective_ids.sort_unstable();
        if objective_ids.is_empty() {
            return Err(Error::config("metrics", "no `win_rate_<id>` fields"));
        }
        let mut expected_reward = Vec::with_capacity(objective_ids.len());
        let mut win_rate = Vec::with_capacity(objective_ids.len());
        for id in &objective_ids {
            expected_reward.push(number(&format!("expected_reward_{id}"))?);
            win_rate.push(number(&format!("win_rate_{id}"))?);
        }
        Ok(Self {
            objective_ids,
            expected_reward,
            win_rate,
            average_score: number("average_score")?,
        })
    }

    pub fn csv_header(&self) -> Vec<String> {
        let mut h: Vec<String> = Vec::new();
        for id in &self.objective_ids {
            h.push(format!("expected_reward_{id}"));
        }
        for id in &self.objective_ids {
            h.push(format!("win_rate_{id}"));
        }
        h.push("average_score".into());
        h
    }

    pub fn csv_row(&self) -> Vec<String> {
        self.expected_reward
            .iter()
            .chain(&self.win_rate)
            .chain(std::iter::once(&self.average_score))
            .map(|v| v.to_string())
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.csv_header())?;
        w.write_record(self.csv_row())?;
        w.flush()?;
        Ok(())
    }
}

fn expected(probs: &[f64], rewards: &[f64]) -> f64 {
    probs.iter().zip(rewards).map(|(p, r)| p * r).sum()
}

/// Evaluate `policy` against `reference` on the given prompts. Prompts are
/// processed in index order, so the result does not depend on the order of
/// `eval_prompt_ids`.
pub fn evaluate(
    policy: &LogLinearPolicy,
    reference: &LogLinearPolicy,
    world: &World,
    objectives: &ObjectiveSet,
    eval_prompt_ids: &[String],
) -> Result<EvalMetrics> {
    policy.check_dim(world)?;
    reference.check_dim(world)?;
    let mut prompts = eval_prompt_ids
        .iter()
        .map(|id| world.prompt_index(id))
        .collect::<Result<Vec<_>>>()?;
    prompts.sort_unstable();
    evaluate_indices(policy, reference, world, objectives, &prompts)
}

pub(crate) fn evaluate_indices(
    policy: &LogLinearPolicy,
    reference: &LogLinearPolicy,
    world: &World,
    objectives: &ObjectiveSet,
    prompts: &[usize],
) -> Result<EvalMetrics> {
    let k = objectives.len();
    let mut reward_sum = vec![0.0; k];
    let mut wins = vec![0.0; k];
    for &p in prompts {
        let pi = policy.probs(world, p);
        let pr = reference.probs(world, p);
        let all: Vec<usize> = (0..pi.len()).collect();
        for (i, spec) in objectives.iter().enumerate() {
            let rewards = spec.model.rewards_at(world, spec.id, p, &all)?;
            let mine = expected(&pi, &rewards);
            let theirs = expected(&pr, &rewards);
            reward_sum[i] += mine;
            wins[i] += if mine > theirs {
                1.0
            } else if mine == theirs {
                0.5
            } else {
                0.0
            };
        }
    }
    let n = prompts.len().max(1) as f64;
    let win_rate: Vec<f64> = wins.into_iter().map(|w| w / n).collect();
    let average_score = win_rate.iter().sum::<f64>() / k as f64;
    Ok(EvalMetrics {
        objective_ids: objectives.ids(),
        expected_reward: reward_sum.into_iter().map(|s| s / n).collect(),
        win_rate,
        average_score,
    })
}
