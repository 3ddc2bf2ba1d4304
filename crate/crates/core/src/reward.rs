//! Reward models and per-objective annotation of candidate responses.
//!
//! Explicit models read the world's reward tables or project features onto a
//! weight vector. Implicit models score a response by the scaled log-ratio
//! between a trained policy and its reference, `(beta / w) * log(pi / pi_ref)`.
//! The per-prompt partition term is omitted: every consumer works with
//! within-prompt reward differences, where it cancels.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::open_input;
use crate::linalg::dot;
use crate::policy::{load_policy, LogLinearPolicy};
use crate::world::World;

#[derive(Debug, Clone, PartialEq)]
pub struct ImplicitRewardModel {
    pub policy: LogLinearPolicy,
    pub reference: LogLinearPolicy,
    pub beta: f64,
    /// Weight the policy was trained with (1 for plain DPO).
    pub w: f64,
}

impl ImplicitRewardModel {
    pub fn new(policy: LogLinearPolicy, reference: LogLinearPolicy, beta: f64, w: f64) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::config("beta", "must be positive"));
        }
        if !(w > 0.0 && w <= 1.0) {
            return Err(Error::config("w", "must lie in (0, 1]"));
        }
        if policy.dim() != reference.dim() {
            return Err(Error::Dimension {
                expected: policy.dim(),
                actual: reference.dim(),
            });
        }
        Ok(Self {
            policy,
            reference,
            beta,
            w,
        })
    }

    /// Reward model implied by a plain DPO run (`w = 1`).
    pub fn from_dpo(policy: LogLinearPolicy, reference: LogLinearPolicy, beta: f64) -> Result<Self> {
        Self::new(policy, reference, beta, 1.0)
    }

    /// Rewards of every candidate of `prompt`.
    pub fn rewards_at(&self, world: &World, prompt: usize) -> Vec<f64> {
        let scale = self.beta / self.w;
        self.policy
            .log_probs(world, prompt)
            .into_iter()
            .zip(self.reference.log_probs(world, prompt))
            .map(|(a, b)| scale * (a - b))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RewardModel {
    /// Exact lookup in the world's reward table for the objective.
    Table,
    /// `u . phi(x, y)`
    Linear { weights: Vec<f64> },
    Implicit(ImplicitRewardModel),
}

impl RewardModel {
    fn check(&self, world: &World) -> Result<()> {
        match self {
            RewardModel::Table => Ok(()),
            RewardModel::Linear { weights } => {
                if weights.len() != world.feature_dim {
                    return Err(Error::Dimension {
                        expected: world.feature_dim,
                        actual: weights.len(),
                    });
                }
                Ok(())
            }
            RewardModel::Implicit(m) => {
                m.policy.check_dim(world)?;
                m.reference.check_dim(world)
            }
        }
    }

    /// Rewards for the given candidate indices of one prompt.
    pub fn rewards_at(
        &self,
        world: &World,
        objective_id: usize,
        prompt: usize,
        responses: &[usize],
    ) -> Result<Vec<f64>> {
        self.check(world)?;
        match self {
            RewardModel::Table => responses
                .iter()
                .map(|&r| {
                    world.reward(objective_id, prompt, r).ok_or_else(|| Error::MissingReward {
                        objective: objective_id,
                        prompt: world.candidates(prompt).prompt.id.clone(),
                        response: world
                            .candidates(prompt)
                            .responses
                            .get(r)
                            .map(|x| x.id.clone())
                            .unwrap_or_else(|| format!("#{r}")),
                    })
                })
                .collect(),
            RewardModel::Linear { weights } => Ok(responses
                .iter()
                .map(|&r| dot(weights, world.features(prompt, r)))
                .collect()),
            RewardModel::Implicit(m) => {
                let all = m.rewards_at(world, prompt);
                Ok(responses.iter().map(|&r| all[r]).collect())
            }
        }
    }
}

/// Evaluate an explicit (table or linear) reward model.
pub fn explicit_reward(
    model: &RewardModel,
    world: &World,
    objective_id: usize,
    prompt_id: &str,
    response_id: &str,
) -> Result<f64> {
    if matches!(model, RewardModel::Implicit(_)) {
        return Err(Error::config("reward_model", "expected an explicit reward model"));
    }
    let (p, r) = world.locate(prompt_id, response_id)?;
    Ok(model.rewards_at(world, objective_id, p, &[r])?[0])
}

pub fn implicit_reward(model: &ImplicitRewardModel, world: &World, prompt_id: &str, response_id: &str) -> Result<f64> {
    model.policy.check_dim(world)?;
    model.reference.check_dim(world)?;
    let (p, r) = world.locate(prompt_id, response_id)?;
    Ok(model.rewards_at(world, p)[r])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveSpec {
    pub id: usize,
    pub name: String,
    pub weight: f64,
    pub model: RewardModel,
}

/// A validated set of objectives: ids are `1..=K` in order and the weights
/// sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveSet {
    specs: Vec<ObjectiveSpec>,
}

impl ObjectiveSet {
    pub fn new(specs: Vec<ObjectiveSpec>) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::config("objectives", "at least one objective is required"));
        }
        for (i, s) in specs.iter().enumerate() {
            if s.id != i + 1 {
                return Err(Error::config(
                    "objectives",
                    format!("ids must be contiguous from 1; found {} at position {}", s.id, i + 1),
                ));
            }
            if !(s.weight > 0.0 && s.weight <= 1.0) {
                return Err(Error::config(
                    "weight",
                    format!("objective {} weight {} outside (0, 1]", s.id, s.weight),
                ));
            }
        }
        let total: f64 = specs.iter().map(|s| s.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config("weight", format!("objective weights sum to {total}, not 1")));
        }
        Ok(Self { specs })
    }

    /// Table rewards for every objective of `world`, equally weighted.
    pub fn from_tables(world: &World) -> Self {
        let k = world.num_objectives;
        Self {
            specs: (1..=k)
                .map(|id| ObjectiveSpec {
                    id,
                    name: format!("obj{id}"),
                    weight: 1.0 / k as f64,
                    model: RewardModel::Table,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ObjectiveSpec> {
        self.specs.iter()
    }

    pub fn get(&self, id: usize) -> Result<&ObjectiveSpec> {
        id.checked_sub(1)
            .and_then(|i| self.specs.get(i))
            .ok_or_else(|| Error::config("objective_id", format!("unknown objective {id}")))
    }

    pub fn ids(&self) -> Vec<usize> {
        self.specs.iter().map(|s| s.id).collect()
    }

    /// Replace one objective's reward model.
    pub fn with_model(mut self, id: usize, model: RewardModel) -> Result<Self> {
        self.get(id)?;
        self.specs[id - 1].model = model;
        Ok(self)
    }
}

/// Rewards of one response, keyed by objective id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RewardVector(pub BTreeMap<usize, f64>);

impl RewardVector {
    pub fn get(&self, objective_id: usize) -> Result<f64> {
        self.0
            .get(&objective_id)
            .copied()
            .ok_or(Error::MissingObjective(objective_id))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<const N: usize> From<[(usize, f64); N]> for RewardVector {
    fn from(entries: [(usize, f64); N]) -> Self {
        RewardVector(entries.into_iter().collect())
    }
}

/// Reward vectors for candidate indices of one prompt, in input order.
pub fn annotate_indices(
    world: &World,
    prompt: usize,
    responses: &[usize],
    objectives: &ObjectiveSet,
) -> Result<Vec<RewardVector>> {
    let mut out = vec![RewardVector::default(); responses.len()];
    for spec in objectives.iter() {
        let values = spec
            .model
            .rewards_at(world, spec.id, prompt, responses)
            .map_err(|e| Error::config(format!("objective {}", spec.id), e.to_string()))?;
        for (slot, v) in out.iter_mut().zip(values) {
            if !v.is_finite() {
                return Err(Error::config(format!("objective {}", spec.id), "non-finite reward"));
            }
            slot.0.insert(spec.id, v);
        }
    }
    Ok(out)
}

/// Annotate responses of one prompt with every objective's reward.
pub fn annotate(
    world: &World,
    prompt_id: &str,
    response_ids: &[&str],
    objectives: &ObjectiveSet,
) -> Result<Vec<(String, RewardVector)>> {
    let p = world.prompt_index(prompt_id)?;
    let indices = response_ids
        .iter()
        .map(|id| world.locate(prompt_id, id).map(|(_, r)| r))
        .collect::<Result<Vec<_>>>()?;
    let vectors = annotate_indices(world, p, &indices, objectives)?;
    Ok(response_ids.iter().map(|s| s.to_string()).zip(vectors).collect())
}

/// One line of an annotation audit dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub prompt_id: String,
    pub response_id: String,
    pub objective_id: usize,
    pub reward: f64,
}

pub fn annotation_records(prompt_id: &str, annotations: &[(String, RewardVector)]) -> Vec<AnnotationRecord> {
    annotations
        .iter()
        .flat_map(|(response_id, v)| {
            v.0.iter().map(move |(&objective_id, &reward)| AnnotationRecord {
                prompt_id: prompt_id.to_string(),
                response_id: response_id.clone(),
                objective_id,
                reward,
            })
        })
        .collect()
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum RewardSource {
    Table,
    Linear {
        weights: Vec<f64>,
    },
    Implicit {
        policy: PathBuf,
        reference: PathBuf,
        #[serde(default = "default_beta")]
        beta: f64,
        #[serde(default = "default_w")]
        w: f64,
    },
}

fn default_beta() -> f64 {
    0.1
}

fn default_w() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectiveEntry {
    id: usize,
    name: String,
    weight: f64,
    reward: RewardSource,
}

/// Load objectives from a JSON array of
/// `{"id", "name", "weight", "reward": {"kind": "table" | "linear" | "implicit", ...}}`.
/// Policy paths of implicit models are resolved relative to the file.
pub fn load_objectives(path: &Path) -> Result<ObjectiveSet> {
    let entries: Vec<ObjectiveEntry> = serde_json::from_reader(open_input(path)?)
        .map_err(|e| Error::config("objectives", format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    let specs = entries
        .into_iter()
        .map(|e| {
            let model = match e.reward {
                RewardSource::Table => RewardModel::Table,
                RewardSource::Linear { weights } => RewardModel::Linear { weights },
                RewardSource::Implicit {
                    policy,
                    reference,
                    beta,
                    w,
                } => RewardModel::Implicit(ImplicitRewardModel::new(
                    load_policy(&resolve(&policy))?,
                    load_policy(&resolve(&reference))?,
                    beta,
                    w,
                )?),
            };
            Ok(ObjectiveSpec {
                id: e.id,
                name: e.name,
                weight: e.weight,
                model,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ObjectiveSet::new(specs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{generate_world, WorldConfig};

    fn world() -> World {
        generate_world(&WorldConfig {
            num_prompts: 6,
            candidates_per_prompt: 5,
            feature_dim: 3,
            seed: 12,
            ..WorldConfig::default()
        })
        .unwrap()
    }

    fn policy(theta: Vec<f64>) -> LogLinearPolicy {
        LogLinearPolicy::new(theta, "pi").unwrap()
    }

    #[test]
    fn table_lookup_is_exact() {
        let w = world();
        let v = explicit_reward(&RewardModel::Table, &w, 2, "p3", "r4").unwrap();
        assert_eq!(v, w.reward(2, 3, 4).unwrap());
        assert!(explicit_reward(&RewardModel::Table, &w, 3, "p3", "r4").is_err());
    }

    #[test]
    fn linear_models() {
        let w = world();
        let zero = RewardModel::Linear { weights: vec![0.0; 3] };
        let e1 = RewardModel::Linear {
            weights: vec![1.0, 0.0, 0.0],
        };
        for r in 0..5 {
            let id = format!("r{r}");
            assert_eq!(explicit_reward(&zero, &w, 1, "p1", &id).unwrap(), 0.0);
            assert_eq!(explicit_reward(&e1, &w, 1, "p1", &id).unwrap(), w.features(1, r)[0]);
        }
        let u = RewardModel::Linear {
            weights: vec![0.3, -1.1, 2.0],
        };
        let u2 = RewardModel::Linear {
            weights: vec![0.6, -2.2, 4.0],
        };
        for r in 0..5 {
            let id = format!("r{r}");
            let a = explicit_reward(&u, &w, 1, "p2", &id).unwrap();
            let b = explicit_reward(&u2, &w, 1, "p2", &id).unwrap();
            assert!((b - 2.0 * a).abs() < 1e-12);
        }
        let short = RewardModel::Linear { weights: vec![1.0] };
        assert!(explicit_reward(&short, &w, 1, "p0", "r0").is_err());
    }

    #[test]
    fn implicit_reward_properties() {
        let w = world();
        let a = policy(vec![0.5, -0.2, 1.0]);
        let b = policy(vec![-0.1, 0.4, 0.3]);
        let same = ImplicitRewardModel::from_dpo(a.clone(), a.clone(), 0.1).unwrap();
        let fwd = ImplicitRewardModel::from_dpo(a.clone(), b.clone(), 0.1).unwrap();
        let back = ImplicitRewardModel::from_dpo(b, a, 0.1).unwrap();
        for r in 0..5 {
            let id = format!("r{r}");
            assert_eq!(implicit_reward(&same, &w, "p0", &id).unwrap(), 0.0);
            let x = implicit_reward(&fwd, &w, "p0", &id).unwrap();
            let y = implicit_reward(&back, &w, "p0", &id).unwrap();
            assert!((x + y).abs() < 1e-15);
        }
    }

    #[test]
    fn implicit_reward_arithmetic() {
        // Three candidates, reference uniform; choose theta so that the
        // log-ratio of r0 is exactly 0.9: 3e^t / (e^t + 2) = e^0.9.
        use crate::world::{CandidateSet, Prompt, Response};
        let sets = vec![CandidateSet {
            prompt: Prompt { id: "p0".into(), index: 0 },
            responses: (0..3)
                .map(|j| Response {
                    id: format!("r{j}"),
                    features: vec![if j == 0 { 1.0 } else { 0.0 }],
                    text: None,
                })
                .collect(),
        }];
        let w = World::from_parts(0, 1, 2, 0.0, 0.0, sets, vec![vec![vec![0.0; 2]; 3]]).unwrap();
        let c = 0.9f64.exp();
        let t = (2.0 * c / (3.0 - c)).ln();
        let pi = policy(vec![t]);
        let reference = policy(vec![0.0]);
        let log_ratio = pi.log_prob_at(&w, 0, 0) - reference.log_prob_at(&w, 0, 0);
        assert!((log_ratio - 0.9).abs() < 1e-12);
        let m = ImplicitRewardModel::new(pi, reference, 0.1, 0.9).unwrap();
        let got = implicit_reward(&m, &w, "p0", "r0").unwrap();
        assert!((got - 0.1).abs() < 1e-12);
    }

    #[test]
    fn implicit_gaps_ignore_per_prompt_shifts() {
        let w = world();
        let pi = policy(vec![0.7, 0.1, -0.4]);
        let reference = policy(vec![0.0; 3]);
        let m = ImplicitRewardModel::from_dpo(pi, reference, 0.1).unwrap();
        let r = m.rewards_at(&w, 2);
        // log pi(y) = s_y - logZ; adding c to every score changes neither
        // logZ-adjusted gaps nor the rewards themselves.
        let shifted: Vec<f64> = m.policy.scores(&w, 2).iter().map(|s| s + 5.0).collect();
        let lp = crate::policy::log_softmax(&shifted);
        let lr = m.reference.log_probs(&w, 2);
        for a in 0..5 {
            for b in 0..5 {
                let direct = r[a] - r[b];
                let via_shift = 0.1 * ((lp[a] - lr[a]) - (lp[b] - lr[b]));
                assert!((direct - via_shift).abs() < 1e-12);
            }
        }
    }

    fn mixed(w: &World) -> ObjectiveSet {
        let pi = policy(vec![0.2, 0.9, -0.5]);
        let reference = policy(vec![0.0; 3]);
        ObjectiveSet::new(vec![
            ObjectiveSpec {
                id: 1,
                name: "harmless".into(),
                weight: 0.1,
                model: RewardModel::Implicit(ImplicitRewardModel::from_dpo(pi, reference, 0.1).unwrap()),
            },
            ObjectiveSpec {
                id: 2,
                name: "helpful".into(),
                weight: 0.9,
                model: RewardModel::Table,
            },
        ])
        .inspect(|o| assert_eq!(o.len(), w.num_objectives))
        .unwrap()
    }

    #[test]
    fn annotation_shape_purity_and_sources() {
        let w = world();
        let objectives = mixed(&w);
        let ids = ["r0", "r3", "r1"];
        let a = annotate(&w, "p4", &ids, &objectives).unwrap();
        assert_eq!(a.len(), 3);
        assert!(a.iter().all(|(_, v)| v.len() == 2));
        assert_eq!(a, annotate(&w, "p4", &ids, &objectives).unwrap());

        let RewardModel::Implicit(m) = &objectives.get(1).unwrap().model else {
            unreachable!()
        };
        for (id, v) in &a {
            assert_eq!(v.get(1).unwrap(), implicit_reward(m, &w, "p4", id).unwrap());
            assert_eq!(
                v.get(2).unwrap(),
                explicit_reward(&RewardModel::Table, &w, 2, "p4", id).unwrap()
            );
        }

        let permuted = annotate(&w, "p4", &["r1", "r0", "r3"], &objectives).unwrap();
        assert_eq!(permuted[0], a[2]);
        assert_eq!(permuted[1], a[0]);
        assert_eq!(permuted[2], a[1]);

        assert_eq!(annotation_records("p4", &a).len(), 6);
    }

    #[test]
    fn objective_weights_must_sum_to_one() {
        let bad = ObjectiveSet::new(vec![
            ObjectiveSpec {
                id: 1,
                name: "a".into(),
                weight: 0.5,
                model: RewardModel::Table,
            },
            ObjectiveSpec {
                id: 2,
                name: "b".into(),
                weight: 0.4,
                model: RewardModel::Table,
            },
        ]);
        assert!(bad.is_err());
        let gap = ObjectiveSet::new(vec![ObjectiveSpec {
            id: 2,
            name: "a".into(),
            weight: 1.0,
            model: RewardModel::Table,
        }]);
        assert!(gap.is_err());
    }

    #[test]
    fn objectives_file_resolves_policies() {
        let dir = tempfile::tempdir().unwrap();
        crate::policy::save_policy(&policy(vec![0.1, 0.2, 0.3]), &dir.path().join("pi.txt")).unwrap();
        crate::policy::save_policy(&policy(vec![0.0; 3]), &dir.path().join("ref.txt")).unwrap();
        let path = dir.path().join("objectives.json");
        std::fs::write(
            &path,
            r#"[
              {"id": 1, "name": "harmless", "weight": 0.1,
               "reward": {"kind": "implicit", "policy": "pi.txt", "reference": "ref.txt"}},
              {"id": 2, "name": "helpful", "weight": 0.9, "reward": {"kind": "table"}}
            ]"#,
        )
        .unwrap();
        let o = load_objectives(&path).unwrap();
        assert_eq!(o.len(), 2);
        assert!(matches!(o.get(1).unwrap().model, RewardModel::Implicit(ref m) if m.beta == 0.1 && m.w == 1.0));
    }
}
