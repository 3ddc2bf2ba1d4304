use crate::dataset::{PreferenceDataset, PreferenceSample, ResolvedSample};
use crate::error::{Error, Result};
use crate::linalg::{axpy, neg_log_sigmoid, scale, sigmoid};
use crate::policy::LogLinearPolicy;
use crate::reward::{ObjectiveSet, RewardModel};
use crate::world::World;

/// One non-current objective contributing to the margin.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginEntry {
    pub objective_id: usize,
    pub weight: f64,
    pub model: RewardModel,
}

/// Weights and reward models of the margin term: the current objective's
/// weight `w_k` plus every other objective's `(w_j, r_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginSpec {
    pub current_weight: f64,
    pub entries: Vec<MarginEntry>,
}

impl MarginSpec {
    pub fn new(current_weight: f64, entries: Vec<MarginEntry>) -> Result<Self> {
        if !(current_weight > 0.0 && current_weight <= 1.0) {
            return Err(Error::config("current_weight", format!("{current_weight} outside (0, 1]")));
        }
        if let Some(e) = entries.iter().find(|e| !(e.weight >= 0.0)) {
            return Err(Error::config(
                "margin.weight",
                format!("objective {} has negative weight {}", e.objective_id, e.weight),
            ));
        }
        let total = current_weight + entries.iter().map(|e| e.weight).sum::<f64>();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config("margin.weight", format!("weights sum to {total}, not 1")));
        }
        Ok(Self {
            current_weight,
            entries,
        })
    }

    /// No margin and `w_k = 1`: the plain DPO objective.
    pub fn none() -> Self {
        Self {
            current_weight: 1.0,
            entries: Vec::new(),
        }
    }

    /// Margin for training `current` with weight `current_weight`; the
    /// remaining `1 - current_weight` is split across the other objectives in
    /// proportion to their configured weights.
    pub fn for_stage(objectives: &ObjectiveSet, current: usize, current_weight: f64) -> Result<Self> {
        objectives.get(current)?;
        let others: Vec<_> = objectives.iter().filter(|o| o.id != current).collect();
        let mass: f64 = others.iter().map(|o| o.weight).sum();
        let rest = 1.0 - current_weight;
        let entries = others
            .into_iter()
            .map(|o| MarginEntry {
                objective_id: o.id,
                weight: if mass > 0.0 { rest * o.weight / mass } else { 0.0 },
                model: o.model.clone(),
            })
            .collect();
        Self::new(current_weight, entries)
    }

    /// Margin over `ids` only, splitting `1 - current_weight` evenly among
    /// them. An empty `ids` gives [`MarginSpec::none`].
    pub fn even_split(objectives: &ObjectiveSet, current_weight: f64, ids: &[usize]) -> Result<Self> {
        if ids.is_empty() {
            return Ok(Self::none());
        }
        let share = (1.0 - current_weight) / ids.len() as f64;
        let entries = ids
            .iter()
            .map(|&j| {
                Ok(MarginEntry {
                    objective_id: j,
                    weight: share,
                    model: objectives.get(j)?.model.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(current_weight, entries)
    }

    /// `sum_j (w_j / w_k) * (r_j(chosen) - r_j(rejected))`
    pub fn margin_gap(&self, world: &World, sample: &ResolvedSample) -> Result<f64> {
        let mut total = 0.0;
        for e in &self.entries {
            let r = e
                .model
                .rewards_at(world, e.objective_id, sample.prompt, &[sample.chosen, sample.rejected])?;
            total += e.weight / self.current_weight * (r[0] - r[1]);
        }
        Ok(total)
    }

    /// Per-objective reward gaps `r_j(chosen) - r_j(rejected)`.
    pub fn reward_gaps(&self, world: &World, sample: &ResolvedSample) -> Result<Vec<(usize, f64)>> {
        self.entries
            .iter()
            .map(|e| {
                let r = e
                    .model
                    .rewards_at(world, e.objective_id, sample.prompt, &[sample.chosen, sample.rejected])?;
                Ok((e.objective_id, r[0] - r[1]))
            })
            .collect()
    }
}

/// Loss, gradient and sigmoid argument of one preference pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleLoss {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub z: f64,
}

/// `grad log pi(chosen) - grad log pi(rejected)`.
pub fn pair_grad_diff(policy: &LogLinearPolicy, world: &World, sample: &ResolvedSample) -> Vec<f64> {
    let mean = policy.mean_features(world, sample.prompt);
    let mut gw = world.features(sample.prompt, sample.chosen).to_vec();
    axpy(-1.0, &mean, &mut gw);
    let mut gl = world.features(sample.prompt, sample.rejected).to_vec();
    axpy(-1.0, &mean, &mut gl);
    axpy(-1.0, &gl, &mut gw);
    gw
}

/// `log pi(chosen) - log pi(rejected)`
pub(crate) fn log_prob_gap(policy: &LogLinearPolicy, world: &World, sample: &ResolvedSample) -> f64 {
    let lp = policy.log_probs(world, sample.prompt);
    lp[sample.chosen] - lp[sample.rejected]
}

/// A sample with its policy-independent terms cached.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PreparedSample {
    pub resolved: ResolvedSample,
    pub reference_gap: f64,
    pub margin_gap: f64,
}

pub(crate) fn prepare(
    world: &World,
    samples: &[ResolvedSample],
    reference: &LogLinearPolicy,
    margin: &MarginSpec,
) -> Result<Vec<PreparedSample>> {
    samples
        .iter()
        .map(|s| {
            Ok(PreparedSample {
                resolved: *s,
                reference_gap: log_prob_gap(reference, world, s),
                margin_gap: margin.margin_gap(world, s)?,
            })
        })
        .collect()
}

pub(crate) fn prepared_loss_grad(
    policy: &LogLinearPolicy,
    world: &World,
    sample: &PreparedSample,
    beta: f64,
    current_weight: f64,
) -> SampleLoss {
    let scale_factor = beta / current_weight;
    let log_ratio_gap = log_prob_gap(policy, world, &sample.resolved) - sample.reference_gap;
    let z = scale_factor * log_ratio_gap - sample.margin_gap;
    let d = pair_grad_diff(policy, world, &sample.resolved);
    SampleLoss {
        loss: neg_log_sigmoid(z),
        grad: scale(-scale_factor * sigmoid(-z), &d),
        z,
    }
}

fn check_inputs(policy: &LogLinearPolicy, reference: &LogLinearPolicy, beta: f64, world: &World) -> Result<()> {
    policy.check_dim(world)?;
    reference.check_dim(world)?;
    if !(beta > 0.0) {
        return Err(Error::config("beta", "must be positive"));
    }
    Ok(())
}

/// MODPO loss of one pair:
/// `z = (beta / w_k) * [logratio(chosen) - logratio(rejected)] - margin_gap`,
/// `loss = -log sigmoid(z)`,
/// `grad = -(beta / w_k) * (1 - sigmoid(z)) * (grad log pi(chosen) - grad log pi(rejected))`.
pub fn modpo_sample_loss_grad(
    sample: &PreferenceSample,
    policy: &LogLinearPolicy,
    reference: &LogLinearPolicy,
    beta: f64,
    margin: &MarginSpec,
    world: &World,
) -> Result<SampleLoss> {
    check_inputs(policy, reference, beta, world)?;
    let resolved = sample.resolve(world)?;
    let prepared = PreparedSample {
        resolved,
        reference_gap: log_prob_gap(reference, world, &resolved),
        margin_gap: margin.margin_gap(world, &resolved)?,
    };
    Ok(prepared_loss_grad(policy, world, &prepared, beta, margin.current_weight))
}

/// DPO loss of one pair; identical to MODPO with `w_k = 1` and no margin.
pub fn dpo_sample_loss_grad(
    sample: &PreferenceSample,
    policy: &LogLinearPolicy,
    reference: &LogLinearPolicy,
    beta: f64,
    world: &World,
) -> Result<SampleLoss> {
    modpo_sample_loss_grad(sample, policy, reference, beta, &MarginSpec::none(), world)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchLossGrad {
    pub mean_loss: f64,
    pub mean_grad: Vec<f64>,
}

pub(crate) fn prepared_batch(
    policy: &LogLinearPolicy,
    world: &World,
    samples: &[PreparedSample],
    beta: f64,
    current_weight: f64,
) -> BatchLossGrad {
    let mut loss = 0.0;
    let mut grad = vec![0.0; policy.dim()];
    for s in samples {
        let sl = prepared_loss_grad(policy, world, s, beta, current_weight);
        loss += sl.loss;
        axpy(1.0, &sl.grad, &mut grad);
    }
    let n = samples.len() as f64;
    BatchLossGrad {
        mean_loss: loss / n,
        mean_grad: grad.into_iter().map(|g| g / n).collect(),
    }
}

/// Mean loss and gradient over a dataset. Per-sample terms are summed in
/// index order.
pub fn batch_loss_grad(
    dataset: &PreferenceDataset,
    policy: &LogLinearPolicy,
    reference: &LogLinearPolicy,
    beta: f64,
    margin: Option<&MarginSpec>,
    world: &World,
) -> Result<BatchLossGrad> {
    check_inputs(policy, reference, beta, world)?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset(dataset.name.clone()));
    }
    let none = MarginSpec::none();
    let margin = margin.unwrap_or(&none);
    let prepared = prepare(world, &dataset.resolve(world)?, reference, margin)?;
    Ok(prepared_batch(policy, world, &prepared, beta, margin.current_weight))
}
