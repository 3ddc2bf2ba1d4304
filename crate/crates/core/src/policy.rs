//! Log-linear policies: a softmax over each prompt's candidate set with
//! scores `theta . phi(x, y)`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{open_input, record_error};
use crate::linalg::{axpy, dot};
use crate::world::World;

#[derive(Debug, Clone, PartialEq)]
pub struct LogLinearPolicy {
    pub theta: Vec<f64>,
    pub label: String,
}

/// Exact action distribution of a policy on one prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDistribution {
    pub prompt_id: String,
    pub probabilities: Vec<f64>,
}

impl LogLinearPolicy {
    pub fn new(theta: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("theta", "parameters must be finite"));
        }
        Ok(Self {
            theta,
            label: label.into(),
        })
    }

    /// The uniform policy (all parameters zero).
    pub fn zeros(dim: usize, label: impl Into<String>) -> Self {
        Self {
            theta: vec![0.0; dim],
            label: label.into(),
        }
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub(crate) fn with_theta(mut self, theta: Vec<f64>) -> Self {
        self.theta = theta;
        self
    }

    pub(crate) fn check_dim(&self, world: &World) -> Result<()> {
        if self.theta.len() != world.feature_dim {
            return Err(Error::Dimension {
                expected: world.feature_dim,
                actual: self.theta.len(),
            });
        }
        Ok(())
    }

    pub fn scores(&self, world: &World, prompt: usize) -> Vec<f64> {
        world
            .candidates(prompt)
            .responses
            .iter()
            .map(|r| dot(&self.theta, &r.features))
            .collect()
    }

    /// Log-probabilities of every candidate of `prompt`, computed as
    /// `(s_y - max) - ln(sum exp(s_i - max))`.
    pub fn log_probs(&self, world: &World, prompt: usize) -> Vec<f64> {
        log_softmax(&self.scores(world, prompt))
    }

    pub fn probs(&self, world: &World, prompt: usize) -> Vec<f64> {
        self.log_probs(world, prompt).into_iter().map(f64::exp).collect()
    }

    pub fn distribution(&self, world: &World, prompt_id: &str) -> Result<PolicyDistribution> {
        self.check_dim(world)?;
        let p = world.prompt_index(prompt_id)?;
        Ok(PolicyDistribution {
            prompt_id: prompt_id.to_string(),
            probabilities: self.probs(world, p),
        })
    }

    /// Expected feature vector under the policy on `prompt`.
    pub fn mean_features(&self, world: &World, prompt: usize) -> Vec<f64> {
        let probs = self.probs(world, prompt);
        let mut mean = vec![0.0; world.feature_dim];
        for (p, r) in probs.iter().zip(&world.candidates(prompt).responses) {
            axpy(*p, &r.features, &mut mean);
        }
        mean
    }

    pub fn log_prob_at(&self, world: &World, prompt: usize, response: usize) -> f64 {
        self.log_probs(world, prompt)[response]
    }

    /// `phi(x, y) - E_pi[phi(x, .)]`
    pub fn log_prob_grad_at(&self, world: &World, prompt: usize, response: usize) -> Vec<f64> {
        let mut g = world.features(prompt, response).to_vec();
        axpy(-1.0, &self.mean_features(world, prompt), &mut g);
        g
    }

    pub fn log_prob(&self, world: &World, prompt_id: &str, response_id: &str) -> Result<f64> {
        self.check_dim(world)?;
        let (p, r) = world.locate(prompt_id, response_id)?;
        Ok(self.log_prob_at(world, p, r))
    }

    pub fn log_prob_grad(&self, world: &World, prompt_id: &str, response_id: &str) -> Result<Vec<f64>> {
        self.check_dim(world)?;
        let (p, r) = world.locate(prompt_id, response_id)?;
        Ok(self.log_prob_grad_at(world, p, r))
    }

    /// Draw `n` candidate indices i.i.d. from the policy at the given
    /// temperature.
    pub fn sample_indices<R: Rng + ?Sized>(
        &self,
        world: &World,
        prompt: usize,
        n: usize,
        temperature: f64,
        rng: &mut R,
    ) -> Vec<usize> {
        let scores: Vec<f64> = self
            .scores(world, prompt)
            .into_iter()
            .map(|s| s / temperature)
            .collect();
        let probs: Vec<f64> = log_softmax(&scores).into_iter().map(f64::exp).collect();
        let dist = WeightedIndex::new(&probs).expect("softmax weights are finite and positive in sum");
        (0..n).map(|_| dist.sample(rng)).collect()
    }

    /// Draw `n` responses with replacement from the policy (temperature 1).
    pub fn sample_responses<R: Rng + ?Sized>(
        &self,
        world: &World,
        prompt_id: &str,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<String>> {
        self.check_dim(world)?;
        let p = world.prompt_index(prompt_id)?;
        let set = world.candidates(p);
        Ok(self
            .sample_indices(world, p, n, 1.0, rng)
            .into_iter()
            .map(|i| set.responses[i].id.clone())
            .collect())
    }
}

pub fn log_softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = scores.iter().map(|s| s - max).collect();
    let log_z = shifted.iter().map(|s| s.exp()).sum::<f64>().ln();
    shifted.into_iter().map(|s| s - log_z).collect()
}

/// Outcome of [`check_gradients`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub trials: usize,
    /// Worst componentwise `|analytic - numeric| / max(1, |analytic|)`.
    pub max_rel_error: f64,
}

/// Compare [`LogLinearPolicy::log_prob_grad_at`] with central differences on
/// random (prompt, response, theta) triples. The first trial uses the
/// policy's own parameters; later ones draw theta from a standard normal.
pub fn check_gradients(
    policy: &LogLinearPolicy,
    world: &World,
    num_trials: usize,
    step: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    policy.check_dim(world)?;
    if !(step > 0.0 && step <= 1e-2) {
        return Err(Error::config("step", format!("{step} outside (0, 1e-2]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for trial in 0..num_trials {
        let theta: Vec<f64> = if trial == 0 {
            policy.theta.clone()
        } else {
            (0..policy.dim()).map(|_| StandardNormal.sample(&mut rng)).collect()
        };
        let p = rng.random_range(0..world.num_prompts());
        let r = rng.random_range(0..world.candidates(p).len());
        let at = |t: Vec<f64>| LogLinearPolicy::zeros(0, "").with_theta(t).log_prob_at(world, p, r);
        let analytic = LogLinearPolicy::zeros(0, "")
            .with_theta(theta.clone())
            .log_prob_grad_at(world, p, r);
        for i in 0..theta.len() {
            let mut plus = theta.clone();
            let mut minus = theta.clone();
            plus[i] += step;
            minus[i] -= step;
            let numeric = (at(plus) - at(minus)) / (2.0 * step);
            let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
            worst = worst.max(rel);
        }
    }
    Ok(GradCheckReport {
        trials: num_trials,
        max_rel_error: worst,
    })
}

#[derive(Serialize, Deserialize)]
struct PolicyHeader {
    d: usize,
    label: String,
}

/// Write a policy: a JSON header line `{"d":..,"label":..}` followed by one
/// line of space-separated parameters with 17 significant digits.
pub fn save_policy(policy: &LogLinearPolicy, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer(
        &mut out,
        &PolicyHeader {
            d: policy.dim(),
            label: policy.label.clone(),
        },
    )?;
    out.write_all(b"\n")?;
    let params: Vec<String> = policy.theta.iter().map(|v| format!("{v:.16e}")).collect();
    out.write_all(params.join(" ").as_bytes())?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn load_policy(path: &Path) -> Result<LogLinearPolicy> {
    let mut lines = BufReader::new(open_input(path)?).lines();
    let header_line = lines
        .next()
        .transpose()?
        .ok_or_else(|| record_error(path, 1, "header", "missing"))?;
    let header: PolicyHeader =
        serde_json::from_str(&header_line).map_err(|e| record_error(path, 1, "header", e.to_string()))?;
    let params_line = lines.next().transpose()?.unwrap_or_default();
    let theta = params_line
        .split_whitespace()
        .enumerate()
        .map(|(i, tok)| {
            tok.parse::<f64>()
                .map_err(|e| record_error(path, 2, format!("theta[{i}]"), e.to_string()))
        })
        .collect::<Result<Vec<f64>>>()?;
    if theta.len() != header.d {
        return Err(record_error(
            path,
            2,
            "theta",
            format!("header declares d = {}, found {} parameters", header.d, theta.len()),
        ));
    }
    LogLinearPolicy::new(theta, header.label)
}
