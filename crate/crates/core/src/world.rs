//! Synthetic multi-objective worlds: prompts, enumerable candidate responses
//! with feature vectors, and per-objective reward tables whose objectives are
//! pairwise correlated with a single tunable coefficient.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{open_input, record_error};

/// Generation parameters for a [`World`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub num_prompts: usize,
    pub candidates_per_prompt: usize,
    pub feature_dim: usize,
    pub num_objectives: usize,
    /// Pairwise correlation shared by every pair of objectives.
    pub conflict_rho: f64,
    /// Fraction of each standardized reward's variance that is explained
    /// linearly by the response features (0 = rewards independent of
    /// features, 1 = rewards fully determined by them).
    pub feature_signal: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            num_prompts: 200,
            candidates_per_prompt: 8,
            feature_dim: 8,
            num_objectives: 2,
            conflict_rho: -0.5,
            feature_signal: 0.8,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_prompts < 1 {
            return Err(Error::config("num_prompts", "must be at least 1"));
        }
        if self.candidates_per_prompt < 2 {
            return Err(Error::config("candidates_per_prompt", "must be at least 2"));
        }
        if self.feature_dim < 1 {
            return Err(Error::config("feature_dim", "must be at least 1"));
        }
        if self.num_objectives < 2 {
            return Err(Error::config("num_objectives", "must be at least 2"));
        }
        if !(-1.0..=1.0).contains(&self.conflict_rho) {
            return Err(Error::config(
                "conflict_rho",
                format!("{} is outside [-1, 1]", self.conflict_rho),
            ));
        }
        // Eigenvalues of the equicorrelation matrix are 1 - rho and
        // 1 + (K - 1) rho.
        let k = self.num_objectives as f64;
        if 1.0 + (k - 1.0) * self.conflict_rho < -1e-12 {
            return Err(Error::config(
                "conflict_rho",
                format!(
                    "correlation matrix with rho = {} is not positive semidefinite for {} objectives (need rho >= {})",
                    self.conflict_rho,
                    self.num_objectives,
                    -1.0 / (k - 1.0)
                ),
            ));
        }
        if !(0.0..=1.0).contains(&self.feature_signal) {
            return Err(Error::config(
                "feature_signal",
                format!("{} is outside [0, 1]", self.feature_signal),
            ));
        }
        if self.feature_signal > 0.0 && self.feature_dim < self.num_objectives {
            return Err(Error::config(
                "feature_dim",
                "must be at least num_objectives when feature_signal > 0",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub id: String,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: String,
    pub features: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub prompt: Prompt,
    pub responses: Vec<Response>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn position(&self, response_id: &str) -> Option<usize> {
        self.responses.iter().position(|r| r.id == response_id)
    }
}

/// A generated benchmark. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub seed: u64,
    pub feature_dim: usize,
    pub num_objectives: usize,
    pub conflict_rho: f64,
    pub feature_signal: f64,
    candidate_sets: Vec<CandidateSet>,
    /// `rewards[prompt][response][objective - 1]`
    rewards: Vec<Vec<Vec<f64>>>,
    prompt_lookup: HashMap<String, usize>,
}

impl World {
    /// Assemble a world from parts, checking every structural invariant.
    pub fn from_parts(
        seed: u64,
        feature_dim: usize,
        num_objectives: usize,
        conflict_rho: f64,
        feature_signal: f64,
        candidate_sets: Vec<CandidateSet>,
        rewards: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        if rewards.len() != candidate_sets.len() {
            return Err(Error::config("rewards", "one reward block per prompt required"));
        }
        let mut prompt_lookup = HashMap::with_capacity(candidate_sets.len());
        for (i, set) in candidate_sets.iter().enumerate() {
            if set.prompt.index != i {
                return Err(Error::config(
                    "prompt.index",
                    format!("prompt `{}` has index {} at position {i}", set.prompt.id, set.prompt.index),
                ));
            }
            if prompt_lookup.insert(set.prompt.id.clone(), i).is_some() {
                return Err(Error::config("prompt.id", format!("duplicate prompt id `{}`", set.prompt.id)));
            }
            if set.responses.len() < 2 {
                return Err(Error::config(
                    "candidates_per_prompt",
                    format!("prompt `{}` has fewer than 2 candidates", set.prompt.id),
                ));
            }
            for (j, r) in set.responses.iter().enumerate() {
                if set.responses[..j].iter().any(|o| o.id == r.id) {
                    return Err(Error::config(
                        "response.id",
                        format!("duplicate response id `{}` in prompt `{}`", r.id, set.prompt.id),
                    ));
                }
                if r.features.len() != feature_dim {
                    return Err(Error::Dimension { expected: feature_dim, actual: r.features.len() });
                }
                if r.features.iter().any(|v| !v.is_finite()) {
                    return Err(Error::config("features", format!("non-finite feature in `{}`", r.id)));
                }
            }
            if rewards[i].len() != set.responses.len()
                || rewards[i].iter().any(|row| row.len() != num_objectives)
            {
                return Err(Error::config(
                    "rewards",
                    format!("incomplete reward table for prompt `{}`", set.prompt.id),
                ));
            }
        }
        Ok(Self {
            seed,
            feature_dim,
            num_objectives,
            conflict_rho,
            feature_signal,
            candidate_sets,
            rewards,
            prompt_lookup,
        })
    }

    pub fn num_prompts(&self) -> usize {
        self.candidate_sets.len()
    }

    pub fn candidate_sets(&self) -> &[CandidateSet] {
        &self.candidate_sets
    }

    pub fn candidates(&self, prompt: usize) -> &CandidateSet {
        &self.candidate_sets[prompt]
    }

    pub fn prompt_index(&self, prompt_id: &str) -> Result<usize> {
        self.prompt_lookup
            .get(prompt_id)
            .copied()
            .ok_or_else(|| Error::UnknownPrompt(prompt_id.to_string()))
    }

    /// Resolve a `(prompt_id, response_id)` pair to indices.
    pub fn locate(&self, prompt_id: &str, response_id: &str) -> Result<(usize, usize)> {
        let p = self.prompt_index(prompt_id)?;
        let r = self.candidate_sets[p]
            .position(response_id)
            .ok_or_else(|| Error::UnknownResponse {
                prompt: prompt_id.to_string(),
                response: response_id.to_string(),
            })?;
        Ok((p, r))
    }

    pub fn features(&self, prompt: usize, response: usize) -> &[f64] {
        &self.candidate_sets[prompt].responses[response].features
    }

    /// Table reward for a 1-based objective id.
    pub fn reward(&self, objective_id: usize, prompt: usize, response: usize) -> Option<f64> {
        if objective_id == 0 {
            return None;
        }
        self.rewards
            .get(prompt)?
            .get(response)?
            .get(objective_id - 1)
            .copied()
    }

    pub fn objective_ids(&self) -> impl Iterator<Item = usize> {
        1..=self.num_objectives
    }
}

/// Lower-triangular factor of a positive semidefinite matrix. Zero pivots
/// are allowed as long as the remaining column is consistent with them.
pub(crate) fn cholesky_psd(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for j in 0..n {
        let d = a[j][j] - (0..j).map(|k| l[j][k] * l[j][k]).sum::<f64>();
        if d < -1e-10 {
            return None;
        }
        let pivot = if d <= 1e-12 { 0.0 } else { d.sqrt() };
        l[j][j] = pivot;
        for i in (j + 1)..n {
            let s = a[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            if pivot == 0.0 {
                if s.abs() > 1e-10 {
                    return None;
                }
            } else {
                l[i][j] = s / pivot;
            }
        }
    }
    Some(l)
}

fn orthonormal_rows(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(rows);
    while basis.len() < rows {
        let mut v: Vec<f64> = (0..cols).map(|_| StandardNormal.sample(rng)).collect();
        for b in &basis {
            let proj = crate::linalg::dot(&v, b);
            crate::linalg::axpy(-proj, b, &mut v);
        }
        let n = crate::linalg::norm(&v);
        if n > 1e-8 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

/// Generate a world. Identical configs yield identical worlds.
pub fn generate_world(config: &WorldConfig) -> Result<World> {
    config.validate()?;
    let k = config.num_objectives;
    let d = config.feature_dim;
    let corr: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| if i == j { 1.0 } else { config.conflict_rho }).collect())
        .collect();
    let chol = cholesky_psd(&corr).ok_or_else(|| {
        Error::config("conflict_rho", "correlation matrix is not positive semidefinite")
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let loadings = if config.feature_signal > 0.0 {
        orthonormal_rows(k, d, &mut rng)
    } else {
        Vec::new()
    };
    let signal = config.feature_signal.sqrt();
    let noise = (1.0 - config.feature_signal).sqrt();

    let mut sets = Vec::with_capacity(config.num_prompts);
    let mut rewards = Vec::with_capacity(config.num_prompts);
    for p in 0..config.num_prompts {
        let mut responses = Vec::with_capacity(config.candidates_per_prompt);
        let mut table = Vec::with_capacity(config.candidates_per_prompt);
        for j in 0..config.candidates_per_prompt {
            let features: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let latent: Vec<f64> = (0..k)
                .map(|o| {
                    let eps: f64 = StandardNormal.sample(&mut rng);
                    let explained = if loadings.is_empty() {
                        0.0
                    } else {
                        crate::linalg::dot(&loadings[o], &features)
                    };
                    signal * explained + noise * eps
                })
                .collect();
            let r: Vec<f64> = (0..k)
                .map(|o| (0..=o).map(|c| chol[o][c] * latent[c]).sum())
                .collect();
            responses.push(Response {
                id: format!("r{j}"),
                features,
                text: None,
            });
            table.push(r);
        }
        sets.push(CandidateSet {
            prompt: Prompt {
                id: format!("p{p}"),
                index: p,
            },
            responses,
        });
        rewards.push(table);
    }
    World::from_parts(
        config.seed,
        d,
        k,
        config.conflict_rho,
        config.feature_signal,
        sets,
        rewards,
    )
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case", deny_unknown_fields)]
enum WorldRecord {
    Header {
        seed: u64,
        feature_dim: usize,
        num_objectives: usize,
        conflict_rho: f64,
        feature_signal: f64,
        num_prompts: usize,
        num_responses: usize,
        num_rewards: usize,
    },
    Prompt {
        id: String,
        index: usize,
    },
    Response {
        prompt_id: String,
        id: String,
        features: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        text: Option<String>,
    },
    Reward {
        objective_id: usize,
        prompt_id: String,
        response_id: String,
        reward: f64,
    },
}

/// Write a world as line-delimited JSON records: a header, then prompts,
/// responses and reward entries.
pub fn save_world(world: &World, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let num_responses: usize = world.candidate_sets.iter().map(|s| s.len()).sum();
    let header = WorldRecord::Header {
        seed: world.seed,
        feature_dim: world.feature_dim,
        num_objectives: world.num_objectives,
        conflict_rho: world.conflict_rho,
        feature_signal: world.feature_signal,
        num_prompts: world.num_prompts(),
        num_responses,
        num_rewards: num_responses * world.num_objectives,
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for set in &world.candidate_sets {
        serde_json::to_writer(
            &mut out,
            &WorldRecord::Prompt {
                id: set.prompt.id.clone(),
                index: set.prompt.index,
            },
        )?;
        out.write_all(b"\n")?;
    }
    for set in &world.candidate_sets {
        for r in &set.responses {
            serde_json::to_writer(
                &mut out,
                &WorldRecord::Response {
                    prompt_id: set.prompt.id.clone(),
                    id: r.id.clone(),
                    features: r.features.clone(),
                    text: r.text.clone(),
                },
            )?;
            out.write_all(b"\n")?;
        }
    }
    for (p, set) in world.candidate_sets.iter().enumerate() {
        for (j, r) in set.responses.iter().enumerate() {
            for o in 0..world.num_objectives {
                serde_json::to_writer(
                    &mut out,
                    &WorldRecord::Reward {
                        objective_id: o + 1,
                        prompt_id: set.prompt.id.clone(),
                        response_id: r.id.clone(),
                        reward: world.rewards[p][j][o],
                    },
                )?;
                out.write_all(b"\n")?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn load_world(path: &Path) -> Result<World> {
    let reader = BufReader::new(open_input(path)?);
    let mut header = None;
    let mut sets: Vec<CandidateSet> = Vec::new();
    let mut lookup: HashMap<String, usize> = HashMap::new();
    let mut reward_entries: Vec<(usize, usize, String, String, f64)> = Vec::new();

    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: WorldRecord = serde_json::from_str(&line)
            .map_err(|e| record_error(path, line_no, "record", e.to_string()))?;
        match record {
            WorldRecord::Header {
                seed,
                feature_dim,
                num_objectives,
                conflict_rho,
                feature_signal,
                num_prompts,
                num_responses,
                num_rewards,
            } => {
                if header.is_some() {
                    return Err(record_error(path, line_no, "record", "duplicate header"));
                }
                header = Some((
                    seed,
                    feature_dim,
                    num_objectives,
                    conflict_rho,
                    feature_signal,
                    num_prompts,
                    num_responses,
                    num_rewards,
                ));
            }
            WorldRecord::Prompt { id, index } => {
                if index != sets.len() {
                    return Err(record_error(path, line_no, "index", "prompts must appear in index order"));
                }
                if lookup.insert(id.clone(), index).is_some() {
                    return Err(record_error(path, line_no, "id", format!("duplicate prompt id `{id}`")));
                }
                sets.push(CandidateSet {
                    prompt: Prompt { id, index },
                    responses: Vec::new(),
                });
            }
            WorldRecord::Response {
                prompt_id,
                id,
                features,
                text,
            } => {
                let p = *lookup
                    .get(&prompt_id)
                    .ok_or_else(|| record_error(path, line_no, "prompt_id", format!("unknown prompt `{prompt_id}`")))?;
                sets[p].responses.push(Response { id, features, text });
            }
            WorldRecord::Reward {
                objective_id,
                prompt_id,
                response_id,
                reward,
            } => reward_entries.push((line_no, objective_id, prompt_id, response_id, reward)),
        }
    }

    let Some((seed, d, k, rho, signal, num_prompts, num_responses, num_rewards)) = header else {
        return Err(record_error(path, 1, "record", "missing header"));
    };
    if sets.len() != num_prompts {
        return Err(record_error(path, 1, "num_prompts", format!("header says {num_prompts}, found {}", sets.len())));
    }
    let found_responses: usize = sets.iter().map(|s| s.len()).sum();
    if found_responses != num_responses {
        return Err(record_error(
            path,
            1,
            "num_responses",
            format!("header says {num_responses}, found {found_responses}"),
        ));
    }
    if reward_entries.len() != num_rewards {
        return Err(record_error(
            path,
            1,
            "num_rewards",
            format!("header says {num_rewards}, found {}", reward_entries.len()),
        ));
    }

    let mut table: Vec<Vec<Vec<Option<f64>>>> = sets
        .iter()
        .map(|s| vec![vec![None; k]; s.len()])
        .collect();
    for (line_no, objective_id, prompt_id, response_id, reward) in reward_entries {
        if objective_id == 0 || objective_id > k {
            return Err(record_error(path, line_no, "objective_id", format!("{objective_id} outside 1..={k}")));
        }
        let p = *lookup
            .get(&prompt_id)
            .ok_or_else(|| record_error(path, line_no, "prompt_id", format!("unknown prompt `{prompt_id}`")))?;
        let r = sets[p]
            .position(&response_id)
            .ok_or_else(|| record_error(path, line_no, "response_id", format!("unknown response `{response_id}`")))?;
        if !reward.is_finite() {
            return Err(record_error(path, line_no, "reward", "not finite"));
        }
        let slot = &mut table[p][r][objective_id - 1];
        if slot.is_some() {
            return Err(record_error(path, line_no, "reward", "duplicate reward entry"));
        }
        *slot = Some(reward);
    }
    let mut rewards = Vec::with_capacity(table.len());
    for (p, block) in table.into_iter().enumerate() {
        let mut rows = Vec::with_capacity(block.len());
        for (r, row) in block.into_iter().enumerate() {
            let mut values = Vec::with_capacity(k);
            for (o, v) in row.into_iter().enumerate() {
                values.push(v.ok_or_else(|| Error::MissingReward {
                    objective: o + 1,
                    prompt: sets[p].prompt.id.clone(),
                    response: sets[p].responses[r].id.clone(),
                })?);
            }
            rows.push(values);
        }
        rewards.push(rows);
    }
    World::from_parts(seed, d, k, rho, signal, sets, rewards)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64, rho: f64) -> WorldConfig {
        WorldConfig {
            num_prompts: 20,
            candidates_per_prompt: 6,
            feature_dim: 4,
            num_objectives: 2,
            conflict_rho: rho,
            feature_signal: 0.8,
            seed,
        }
    }

    fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        sxy / (sxx * syy).sqrt()
    }

    fn rewards_of(world: &World, objective: usize) -> Vec<f64> {
        let mut out = Vec::new();
        for p in 0..world.num_prompts() {
            for r in 0..world.candidates(p).len() {
                out.push(world.reward(objective, p, r).unwrap());
            }
        }
        out
    }

    #[test]
    fn same_seed_same_world() {
        let a = generate_world(&small(7, 0.0)).unwrap();
        let b = generate_world(&small(7, 0.0)).unwrap();
        assert_eq!(a, b);
        let c = generate_world(&small(8, 0.0)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn perfect_anticorrelation_is_antipodal() {
        for signal in [0.0, 0.5, 1.0] {
            let world = generate_world(&WorldConfig {
                conflict_rho: -1.0,
                feature_signal: signal,
                ..small(3, -1.0)
            })
            .unwrap();
            for p in 0..world.num_prompts() {
                for r in 0..world.candidates(p).len() {
                    assert_eq!(world.reward(2, p, r).unwrap(), -world.reward(1, p, r).unwrap());
                }
            }
        }
    }

    #[test]
    fn empirical_correlation_tracks_rho() {
        // Standard error of r near -0.5 at N = 1600 is (1 - rho^2)/sqrt(N) ~ 0.019,
        // so +-0.08 is a > 4 sigma band.
        let world = generate_world(&WorldConfig {
            num_prompts: 200,
            candidates_per_prompt: 8,
            feature_dim: 8,
            num_objectives: 2,
            conflict_rho: -0.5,
            feature_signal: 0.8,
            seed: 1,
        })
        .unwrap();
        let r = correlation(&rewards_of(&world, 1), &rewards_of(&world, 2));
        assert!((r + 0.5).abs() <= 0.08, "empirical correlation {r}");
    }

    #[test]
    fn independent_marginals_are_standard() {
        let world = generate_world(&WorldConfig {
            num_prompts: 200,
            conflict_rho: 0.0,
            seed: 11,
            ..WorldConfig::default()
        })
        .unwrap();
        for o in 1..=2 {
            let xs = rewards_of(&world, o);
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            assert!(mean.abs() < 0.1, "mean {mean}");
            assert!((var - 1.0).abs() < 0.2, "var {var}");
        }
    }

    #[test]
    fn invalid_configs_name_the_field() {
        let err = generate_world(&WorldConfig {
            conflict_rho: 1.5,
            ..WorldConfig::default()
        })
        .unwrap_err();
        assert!(err.to_string().contains("conflict_rho"));

        let err = generate_world(&WorldConfig {
            candidates_per_prompt: 1,
            ..WorldConfig::default()
        })
        .unwrap_err();
        assert!(err.to_string().contains("candidates_per_prompt"));

        // K = 3 requires rho >= -1/2.
        let err = generate_world(&WorldConfig {
            num_objectives: 3,
            conflict_rho: -0.6,
            ..WorldConfig::default()
        })
        .unwrap_err();
        assert!(err.to_string().contains("positive semidefinite"));
    }

    #[test]
    fn cholesky_reconstructs() {
        let a = vec![
            vec![1.0, -0.4, -0.4],
            vec![-0.4, 1.0, -0.4],
            vec![-0.4, -0.4, 1.0],
        ];
        let l = cholesky_psd(&a).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| l[i][k] * l[j][k]).sum();
                assert!((v - a[i][j]).abs() < 1e-12);
            }
        }
        assert!(cholesky_psd(&[vec![1.0, 2.0], vec![2.0, 1.0]]).is_none());
    }

    #[test]
    fn file_round_trip() {
        let world = generate_world(&small(5, -0.3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("world.jsonl");
        save_world(&world, &path).unwrap();
        let back = load_world(&path).unwrap();
        assert_eq!(world, back);

        let bytes = std::fs::read(&path).unwrap();
        save_world(&back, &path).unwrap();
        assert_eq!(bytes, std::fs::read(&path).unwrap());
    }

    #[test]
    fn truncated_file_is_rejected() {
        let world = generate_world(&small(5, -0.3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("world.jsonl");
        save_world(&world, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let cut: Vec<&str> = text.lines().collect();
        std::fs::write(&path, cut[..cut.len() - 1].join("\n")).unwrap();
        let err = load_world(&path).unwrap_err();
        assert!(err.to_string().contains("num_rewards"));
    }
}
