use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{prepare, prepared_batch, MarginSpec};
use crate::dataset::PreferenceDataset;
use crate::error::{Error, Result};
use crate::io::write_jsonl;
use crate::linalg::axpy;
use crate::policy::LogLinearPolicy;
use crate::world::World;

/// Losses above this abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Dpo,
    Modpo,
    Spo,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dpo" => Ok(Method::Dpo),
            "modpo" => Ok(Method::Modpo),
            "spo" => Ok(Method::Spo),
            other => Err(Error::config("method", format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    pub beta: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// 0 means full batch.
    pub batch_size: usize,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::Dpo,
            beta: 0.1,
            learning_rate: 0.5,
            epochs: 10,
            batch_size: 0,
            seed: 0,
            shuffle: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(Error::config("beta", "must be positive"));
        }
        // lr = 0 is accepted as a no-op run.
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config("learning_rate", "must be a non-negative number"));
        }
        if self.epochs < 1 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub initial: LogLinearPolicy,
    pub final_policy: LogLinearPolicy,
    pub reference: LogLinearPolicy,
    /// Mean loss of each epoch, measured before each step's update.
    pub losses: Vec<f64>,
    pub config: TrainConfig,
}

/// Plain gradient descent `theta <- theta - lr * mean_grad` on the
/// (MO)DPO loss. Margin rewards and reference log-probabilities are computed
/// once up front.
pub fn train(
    dataset: &PreferenceDataset,
    init: &LogLinearPolicy,
    reference: &LogLinearPolicy,
    config: &TrainConfig,
    margin: Option<&MarginSpec>,
    world: &World,
) -> Result<TrainRun> {
    config.validate()?;
    init.check_dim(world)?;
    reference.check_dim(world)?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset(dataset.name.clone()));
    }
    let none = MarginSpec::none();
    let margin = match config.method {
        Method::Dpo => &none,
        Method::Modpo | Method::Spo => margin.unwrap_or(&none),
    };
    let prepared = prepare(world, &dataset.resolve(world)?, reference, margin)?;
    let n = prepared.len();
    let batch = if config.batch_size == 0 { n } else { config.batch_size.min(n) };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut policy = init.clone();
    let mut losses = Vec::with_capacity(config.epochs);
    let mut scratch = Vec::with_capacity(batch);

    for epoch in 0..config.epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            scratch.clear();
            scratch.extend(chunk.iter().map(|&i| prepared[i]));
            let step = prepared_batch(&policy, world, &scratch, config.beta, margin.current_weight);
            epoch_loss += step.mean_loss * chunk.len() as f64;
            axpy(-config.learning_rate, &step.mean_grad, &mut policy.theta);
        }
        let mean = epoch_loss / n as f64;
        if !mean.is_finite() || mean > DIVERGENCE_LIMIT || policy.theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { epoch, loss: mean });
        }
        losses.push(mean);
    }
    Ok(TrainRun {
        initial: init.clone(),
        final_policy: policy,
        reference: reference.clone(),
        losses,
        config: config.clone(),
    })
}

/// One stage of a sequential pipeline.
#[derive(Debug, Clone)]
pub struct Stage {
    pub dataset: PreferenceDataset,
    pub method: Method,
    pub margin: Option<MarginSpec>,
}

/// Train stages in order. Stage `i` starts from stage `i - 1`'s final
/// policy. SPO uses the previous stage's final policy as its reference;
/// DPO and MODPO always use `init`.
pub fn train_sequential(
    stages: &[Stage],
    init: &LogLinearPolicy,
    config: &TrainConfig,
    world: &World,
) -> Result<Vec<TrainRun>> {
    if stages.is_empty() {
        return Err(Error::config("stages", "at least one stage is required"));
    }
    let mut runs: Vec<TrainRun> = Vec::with_capacity(stages.len());
    for (index, stage) in stages.iter().enumerate() {
        let start = runs.last().map(|r| &r.final_policy).unwrap_or(init);
        let reference = match stage.method {
            Method::Spo => start,
            Method::Dpo | Method::Modpo => init,
        };
        let stage_config = TrainConfig {
            method: stage.method,
            ..config.clone()
        };
        let run = train(&stage.dataset, start, reference, &stage_config, stage.margin.as_ref(), world)
            .map_err(|e| Error::Stage {
                index,
                source: Box::new(e),
            })?;
        runs.push(TrainRun {
            final_policy: run.final_policy.with_label(format!("stage{}-{}", index + 1, stage.dataset.name)),
            ..run
        });
    }
    Ok(runs)
}

#[derive(Serialize)]
struct EpochRecord {
    epoch: usize,
    mean_loss: f64,
}

/// Write `{epoch, mean_loss}` lines.
pub fn save_train_log(run: &TrainRun, path: &Path) -> Result<()> {
    write_jsonl(
        path,
        run.losses.iter().enumerate().map(|(epoch, &mean_loss)| EpochRecord { epoch, mean_loss }),
    )
}
