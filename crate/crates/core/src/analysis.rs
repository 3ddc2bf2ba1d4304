//! Per-sample decomposition of the multi-objective gradient into the
//! current-objective part `G1` and the extra part `dG2` contributed by the
//! margin, with sign classification of `G1 . dG2`.
//!
//! For a log-linear policy both `G1` and `G1 + dG2` are multiples of
//! `d = grad log pi(chosen) - grad log pi(rejected)`, so
//! `G1 . dG2 = (beta/w_k)^2 * s1 * (s2 - s1) * |d|^2`, whose sign is the sign
//! of the margin gap: the extra objectives pull in the same direction exactly
//! when the pair is preferred by them too.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::align::{batch_loss_grad, pair_grad_diff, MarginSpec};
use crate::dataset::{PreferenceDataset, PreferenceSample, ResolvedSample};
use crate::error::{Error, Result};
use crate::linalg::{cosine, dot, scale, sigmoid};
use crate::policy::LogLinearPolicy;
use crate::world::World;

/// Band around zero in which `G1 . dG2` counts as neither aligned nor
/// conflicting.
pub const NEUTRAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Aligned,
    Conflicting,
    Neutral,
}

impl Verdict {
    pub fn from_dot(dot: f64) -> Self {
        if dot > NEUTRAL_TOL {
            Verdict::Aligned
        } else if dot < -NEUTRAL_TOL {
            Verdict::Conflicting
        } else {
            Verdict::Neutral
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Aligned => "aligned",
            Verdict::Conflicting => "conflicting",
            Verdict::Neutral => "neutral",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientReport {
    pub d_vec: Vec<f64>,
    /// Sigmoid weight without the margin.
    pub s1: f64,
    /// Sigmoid weight with the margin.
    pub s2: f64,
    pub g1: Vec<f64>,
    pub g12: Vec<f64>,
    pub delta_g2: Vec<f64>,
    pub dot: f64,
    pub margin_gap: f64,
    /// Chosen beats rejected on every margin objective.
    pub rc_consistent: bool,
    pub verdict: Verdict,
}

/// `sigmoid(b) - sigmoid(a)` without cancellation; its sign is exactly the
/// sign of `b - a`.
fn sigmoid_diff(a: f64, b: f64) -> f64 {
    if b >= a {
        sigmoid(b) * sigmoid(-a) * -(a - b).exp_m1()
    } else {
        -sigmoid_diff(b, a)
    }
}

fn report_resolved(
    sample: &ResolvedSample,
    policy: &LogLinearPolicy,
    reference: &LogLinearPolicy,
    beta: f64,
    margin: &MarginSpec,
    world: &World,
) -> Result<GradientReport> {
    let c = beta / margin.current_weight;
    let lp = policy.log_probs(world, sample.prompt);
    let lr = reference.log_probs(world, sample.prompt);
    let ratio_gap = (lp[sample.chosen] - lr[sample.chosen]) - (lp[sample.rejected] - lr[sample.rejected]);
    let a = -c * ratio_gap;
    let gaps = margin.reward_gaps(world, sample)?;
    let margin_gap = margin.margin_gap(world, sample)?;
    let s1 = sigmoid(a);
    let s2 = sigmoid(a + margin_gap);
    let d_vec = pair_grad_diff(policy, world, sample);
    let g1 = scale(-c * s1, &d_vec);
    let g12 = scale(-c * s2, &d_vec);
    let delta_g2 = scale(-c * sigmoid_diff(a, a + margin_gap), &d_vec);
    let dot = dot(&g1, &delta_g2);
    Ok(GradientReport {
        s1,
        s2,
        g1,
        g12,
        delta_g2,
        dot,
        margin_gap,
        rc_consistent: gaps.iter().all(|&(_, g)| g > 0.0),
        verdict: Verdict::from_dot(dot),
        d_vec,
    })
}

/// Decompose one sample's MODPO gradient. `G1` uses the same `beta / w_k`
/// prefactor as the full gradient so that `dG2` isolates the margin.
pub fn gradient_report(
    sample: &PreferenceSample,
    policy: &LogLinearPolicy,
    reference: &LogLinearPolicy,
    beta: f64,
    margin: &MarginSpec,
    world: &World,
) -> Result<GradientReport> {
    policy.check_dim(world)?;
    reference.check_dim(world)?;
    if !(beta > 0.0) {
        return Err(Error::config("beta", "must be positive"));
    }
    report_resolved(&sample.resolve(world)?, policy, reference, beta, margin, world)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassCounts {
    pub aligned: usize,
    pub conflicting: usize,
    pub neutral: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Classification {
    pub total: usize,
    pub counts: ClassCounts,
    /// Fraction of samples where `verdict == aligned` iff `margin_gap > 0`.
    pub margin_agreement: f64,
    /// Among non-neutral samples, the fraction where `verdict == aligned`
    /// iff the pair is consistent on every margin objective. `None` when
    /// every sample is neutral, e.g. without margin objectives.
    pub rc_agreement: Option<f64>,
    /// With more than one margin objective, consistency is sufficient for
    /// alignment but not necessary, so `rc_agreement` may fall below 1.
    pub sufficiency_only: bool,
    pub mean_dot_aligned: Option<f64>,
    pub mean_dot_conflicting: Option<f64>,
    pub mean_dot_neutral: Option<f64>,
    #[serde(skip)]
    pub reports: Vec<GradientReport>,
}

/// Gradient reports for every sample plus aggregate counts. Reports are
/// computed in parallel and aggregated in index order.
pub fn classify_dataset(
    dataset: &PreferenceDataset,
    policy: &LogLinearPolicy,
    reference: &LogLinearPolicy,
    beta: f64,
    margin: &MarginSpec,
    world: &World,
) -> Result<Classification> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset(dataset.name.clone()));
    }
    policy.check_dim(world)?;
    reference.check_dim(world)?;
    if !(beta > 0.0) {
        return Err(Error::config("beta", "must be positive"));
    }
    let resolved = dataset.resolve(world)?;
    let reports = resolved
        .par_iter()
        .map(|s| report_resolved(s, policy, reference, beta, margin, world))
        .collect::<Result<Vec<_>>>()?;

    let mut counts = ClassCounts {
        aligned: 0,
        conflicting: 0,
        neutral: 0,
    };
    let mut sums = [0.0; 3];
    let (mut margin_hits, mut rc_hits) = (0usize, 0usize);
    let mut decided = 0usize;
    for r in &reports {
        let slot = match r.verdict {
            Verdict::Aligned => {
                counts.aligned += 1;
                0
            }
            Verdict::Conflicting => {
                counts.conflicting += 1;
                1
            }
            Verdict::Neutral => {
                counts.neutral += 1;
                2
            }
        };
        sums[slot] += r.dot;
        let aligned = r.verdict == Verdict::Aligned;
        margin_hits += usize::from(aligned == (r.margin_gap > 0.0));
        if r.verdict != Verdict::Neutral {
            decided += 1;
            rc_hits += usize::from(aligned == r.rc_consistent);
        }
    }
    let mean = |sum: f64, n: usize| (n > 0).then(|| sum / n as f64);
    let total = reports.len();
    Ok(Classification {
        total,
        margin_agreement: margin_hits as f64 / total as f64,
        rc_agreement: (decided > 0).then(|| rc_hits as f64 / decided as f64),
        sufficiency_only: margin.entries.len() > 1,
        mean_dot_aligned: mean(sums[0], counts.aligned),
        mean_dot_conflicting: mean(sums[1], counts.conflicting),
        mean_dot_neutral: mean(sums[2], counts.neutral),
        counts,
        reports,
    })
}

/// One row per sample: `prompt_id, chosen_id, rejected_id, dot, margin_gap,
/// rc_consistent, verdict`.
pub fn write_classification_csv<W: Write>(
    dataset: &PreferenceDataset,
    classification: &Classification,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["prompt_id", "chosen_id", "rejected_id", "dot", "margin_gap", "rc_consistent", "verdict"])?;
    for (s, r) in dataset.samples.iter().zip(&classification.reports) {
        w.write_record([
            s.prompt_id.as_str(),
            s.chosen_id.as_str(),
            s.rejected_id.as_str(),
            &r.dot.to_string(),
            &r.margin_gap.to_string(),
            if r.rc_consistent { "true" } else { "false" },
            r.verdict.as_str(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Cosine between the mean DPO gradients of two datasets. Per-sample
/// gradients are always parallel to their own `d`, so disagreement between
/// objectives only shows up at batch level.
pub fn batch_gradient_cosine(
    a: &PreferenceDataset,
    b: &PreferenceDataset,
    policy: &LogLinearPolicy,
    reference: &LogLinearPolicy,
    beta: f64,
    world: &World,
) -> Result<f64> {
    let ga = batch_loss_grad(a, policy, reference, beta, None, world)?.mean_grad;
    let gb = batch_loss_grad(b, policy, reference, beta, None, world)?.mean_grad;
    cosine(&ga, &gb).ok_or_else(|| {
        let which = if ga.iter().all(|v| *v == 0.0) { &a.name } else { &b.name };
        Error::ZeroGradient(which.clone())
    })
}
