//! Reward-consistency sampling (RCS) and the baseline/ablation curation
//! strategies.
//!
//! For every input pair the curator samples `n` extra responses from a
//! policy, merges them with the original chosen/rejected responses, annotates
//! each candidate with every objective's reward and then picks a new pair:
//!
//! * `Rcs`: among ordered pairs that win on every masked objective, the one
//!   with the largest gap on the current objective;
//! * `Nrcs`: the largest current-objective gap with no consistency filter;
//! * `Orcs`: a uniformly random consistent pair;
//! * `RsdpoW`: best versus worst mean (optionally standardized) reward.
//!
//! `Vanilla` returns the input unchanged and `Mixed` concatenates the
//! previous objectives' datasets with the current one.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{merge_datasets, PreferenceDataset, PreferenceSample, Provenance, ResolvedSample};
use crate::error::{Error, Result};
use crate::io::write_jsonl;
use crate::policy::LogLinearPolicy;
use crate::reward::{annotate_indices, ObjectiveSet, RewardVector};
use crate::world::World;

/// Objectives on which the chosen response must strictly win, by more than
/// `delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyMask {
    pub objectives: BTreeSet<usize>,
    #[serde(default)]
    pub delta: f64,
}

impl ConsistencyMask {
    pub fn new(objectives: impl IntoIterator<Item = usize>) -> Self {
        Self {
            objectives: objectives.into_iter().collect(),
            delta: 0.0,
        }
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    /// Objectives `1..=current`.
    pub fn up_to(current: usize) -> Self {
        Self::new(1..=current)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "vanilla")]
    Vanilla,
    #[serde(rename = "mixed")]
    Mixed,
    #[serde(rename = "rcs")]
    Rcs,
    #[serde(rename = "nrcs")]
    Nrcs,
    #[serde(rename = "orcs")]
    Orcs,
    #[serde(rename = "rsdpo-w")]
    RsdpoW,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Vanilla,
        Strategy::Mixed,
        Strategy::Rcs,
        Strategy::Nrcs,
        Strategy::Orcs,
        Strategy::RsdpoW,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Vanilla => "vanilla",
            Strategy::Mixed => "mixed",
            Strategy::Rcs => "rcs",
            Strategy::Nrcs => "nrcs",
            Strategy::Orcs => "orcs",
            Strategy::RsdpoW => "rsdpo-w",
        }
    }

    fn provenance(self) -> Provenance {
        match self {
            Strategy::Rcs => Provenance::CuratedRcs,
            Strategy::Nrcs => Provenance::CuratedNrcs,
            Strategy::Orcs => Provenance::CuratedOrcs,
            Strategy::RsdpoW => Provenance::CuratedRsdpoW,
            Strategy::Vanilla | Strategy::Mixed => Provenance::Original,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == lower || (lower == "rsdpow" && *st == Strategy::RsdpoW))
            .ok_or_else(|| Error::config("strategy", format!("unknown strategy `{s}`")))
    }
}

/// What to do with an input pair whose candidates yield no acceptable pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    #[default]
    Drop,
    KeepOriginal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationConfig {
    pub strategy: Strategy,
    pub current_objective: usize,
    pub mask: ConsistencyMask,
    /// Responses sampled per input pair.
    pub n: usize,
    pub fallback: Fallback,
    pub seed: u64,
    /// RSDPO-W only: z-score each objective over the candidate set before
    /// averaging.
    pub standardize_for_average: bool,
    /// Sampling temperature of the candidate generator.
    pub temperature: f64,
}

impl CurationConfig {
    pub fn new(strategy: Strategy, current_objective: usize) -> Self {
        Self {
            strategy,
            current_objective,
            mask: ConsistencyMask::up_to(current_objective),
            n: 8,
            fallback: Fallback::Drop,
            seed: 0,
            standardize_for_average: true,
            temperature: 1.0,
        }
    }

    pub fn with_mask(mut self, mask: ConsistencyMask) -> Self {
        self.mask = mask;
        self
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_fallback(mut self, fallback: Fallback) -> Self {
        self.fallback = fallback;
        self
    }

    pub fn validate(&self, objectives: &ObjectiveSet) -> Result<()> {
        objectives.get(self.current_objective)?;
        for &id in &self.mask.objectives {
            objectives
                .get(id)
                .map_err(|_| Error::config("mask", format!("objective {id} is not configured")))?;
        }
        if !(self.mask.delta >= 0.0) {
            return Err(Error::config("mask.delta", "must be non-negative"));
        }
        if matches!(self.strategy, Strategy::Rcs | Strategy::Orcs) && self.mask.objectives.is_empty() {
            return Err(Error::config("mask", "must not be empty for rcs/orcs"));
        }
        if self.strategy == Strategy::Rcs && !self.mask.objectives.contains(&self.current_objective) {
            return Err(Error::config("mask", "must include the current objective for rcs"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::config("temperature", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleStatus {
    Emitted,
    Failed,
}

/// Per-input-pair outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub prompt_id: String,
    pub status: SampleStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chosen_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rejected_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub current_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurationReport {
    pub strategy: Strategy,
    pub input_count: usize,
    pub emitted_count: usize,
    pub failure_count: usize,
    pub config: CurationConfig,
    pub records: Vec<SampleRecord>,
}

/// Definition of reward consistency: `r_j(w) > r_j(l) + delta` for every
/// masked objective `j`.
pub fn is_reward_consistent(rewards_w: &RewardVector, rewards_l: &RewardVector, mask: &ConsistencyMask) -> Result<bool> {
    let mut ok = true;
    for &j in &mask.objectives {
        let (w, l) = (rewards_w.get(j)?, rewards_l.get(j)?);
        if !(w > l + mask.delta) {
            ok = false;
        }
    }
    Ok(ok)
}

/// Stream index for the `occurrence`-th sample of `prompt`.
fn rng_stream(prompt: usize, occurrence: usize) -> u64 {
    ((occurrence as u64) << 32) | prompt as u64
}

/// Generator `curate` uses to sample candidates for the `occurrence`-th
/// pair (0-based, in dataset order) of prompt index `prompt`.
pub fn pair_rng(seed: u64, prompt: usize, occurrence: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rng_stream(prompt, occurrence));
    rng
}

/// `[chosen, rejected, y_1, ..., y_n]` with duplicates removed (first
/// occurrence kept). Returns candidate indices.
pub(crate) fn expand_indices<R: Rng + ?Sized>(
    sample: &ResolvedSample,
    policy: &LogLinearPolicy,
    world: &World,
    n: usize,
    temperature: f64,
    rng: &mut R,
) -> Vec<usize> {
    let draws = policy.sample_indices(world, sample.prompt, n, temperature, rng);
    let mut out = Vec::with_capacity(n + 2);
    for r in [sample.chosen, sample.rejected].into_iter().chain(draws) {
        if !out.contains(&r) {
            out.push(r);
        }
    }
    out
}

/// Expand a pair with `n` policy samples; returns response ids.
pub fn expand_candidates<R: Rng + ?Sized>(
    sample: &PreferenceSample,
    policy: &LogLinearPolicy,
    world: &World,
    n: usize,
    rng: &mut R,
) -> Result<Vec<String>> {
    policy.check_dim(world)?;
    let resolved = sample.resolve(world)?;
    let set = world.candidates(resolved.prompt);
    Ok(expand_indices(&resolved, policy, world, n, 1.0, rng)
        .into_iter()
        .map(|i| set.responses[i].id.clone())
        .collect())
}

/// All ordered pairs `(u, v)` of positions passing the mask.
fn consistent_pairs(annotations: &[RewardVector], mask: &ConsistencyMask) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    for u in 0..annotations.len() {
        for v in 0..annotations.len() {
            if u != v && is_reward_consistent(&annotations[u], &annotations[v], mask)? {
                out.push((u, v));
            }
        }
    }
    Ok(out)
}

/// Largest `r_current(u) - r_current(v)` among `pairs`, ties broken by the
/// lexicographically smallest `(u_id, v_id)`.
fn max_gap_pair(
    pairs: impl IntoIterator<Item = (usize, usize)>,
    ids: &[&str],
    annotations: &[RewardVector],
    current: usize,
) -> Result<Option<(usize, usize, f64)>> {
    let mut best: Option<(usize, usize, f64)> = None;
    for (u, v) in pairs {
        let gap = annotations[u].get(current)? - annotations[v].get(current)?;
        let better = match best {
            None => true,
            Some((bu, bv, bg)) => gap > bg || (gap == bg && (ids[u], ids[v]) < (ids[bu], ids[bv])),
        };
        if better {
            best = Some((u, v, gap));
        }
    }
    Ok(best)
}

/// Filter ordered candidate pairs by the consistency mask, then take the one
/// with the largest current-objective gap. `None` when no pair passes.
pub fn select_pair_rcs(
    candidates: &[(String, RewardVector)],
    current_objective: usize,
    mask: &ConsistencyMask,
) -> Result<Option<(String, String)>> {
    let ids: Vec<&str> = candidates.iter().map(|(id, _)| id.as_str()).collect();
    let annotations: Vec<RewardVector> = candidates.iter().map(|(_, v)| v.clone()).collect();
    let pairs = consistent_pairs(&annotations, mask)?;
    Ok(max_gap_pair(pairs, &ids, &annotations, current_objective)?
        .map(|(u, v, _)| (ids[u].to_string(), ids[v].to_string())))
}

fn standardized_means(annotations: &[RewardVector], objectives: &[usize], standardize: bool) -> Result<Vec<f64>> {
    let m = annotations.len();
    let mut means = vec![0.0; m];
    for &j in objectives {
        let col = annotations.iter().map(|a| a.get(j)).collect::<Result<Vec<f64>>>()?;
        let mu = col.iter().sum::<f64>() / m as f64;
        let sd = (col.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / m as f64).sqrt();
        for (slot, x) in means.iter_mut().zip(&col) {
            *slot += if !standardize {
                *x
            } else if sd > 0.0 {
                (x - mu) / sd
            } else {
                0.0
            };
        }
    }
    Ok(means.into_iter().map(|s| s / objectives.len() as f64).collect())
}

/// Best and worst candidates by mean reward; `None` when they coincide.
fn rsdpo_w_pair(
    annotations: &[RewardVector],
    ids: &[&str],
    objectives: &[usize],
    standardize: bool,
) -> Result<Option<(usize, usize)>> {
    let means = standardized_means(annotations, objectives, standardize)?;
    let pick = |better: fn(f64, f64) -> bool| {
        (0..means.len()).fold(0, |best, i| {
            if better(means[i], means[best]) || (means[i] == means[best] && ids[i] < ids[best]) {
                i
            } else {
                best
            }
        })
    };
    let hi = pick(|a, b| a > b);
    let lo = pick(|a, b| a < b);
    if means[hi] == means[lo] {
        return Ok(None);
    }
    Ok(Some((hi, lo)))
}

struct Outcome {
    pair: Option<(usize, usize)>,
    gap: Option<f64>,
}

fn curate_one(
    sample: &ResolvedSample,
    occurrence: usize,
    policy: &LogLinearPolicy,
    world: &World,
    objectives: &ObjectiveSet,
    config: &CurationConfig,
) -> Result<Outcome> {
    let mut rng = pair_rng(config.seed, sample.prompt, occurrence);
    let candidates = expand_indices(sample, policy, world, config.n, config.temperature, &mut rng);
    let annotations = annotate_indices(world, sample.prompt, &candidates, objectives)?;
    let set = world.candidates(sample.prompt);
    let ids: Vec<&str> = candidates.iter().map(|&c| set.responses[c].id.as_str()).collect();
    let current = config.current_objective;
    let gap_of = |u: usize, v: usize| -> Result<f64> { Ok(annotations[u].get(current)? - annotations[v].get(current)?) };

    let local = match config.strategy {
        Strategy::Rcs => max_gap_pair(consistent_pairs(&annotations, &config.mask)?, &ids, &annotations, current)?
            .map(|(u, v, _)| (u, v)),
        Strategy::Nrcs => {
            let all = (0..candidates.len()).flat_map(|u| (0..candidates.len()).filter(move |&v| v != u).map(move |v| (u, v)));
            max_gap_pair(all, &ids, &annotations, current)?
                .filter(|&(_, _, g)| g > 0.0)
                .map(|(u, v, _)| (u, v))
        }
        Strategy::Orcs => {
            let pairs = consistent_pairs(&annotations, &config.mask)?;
            if pairs.is_empty() {
                None
            } else {
                Some(pairs[rng.random_range(0..pairs.len())])
            }
        }
        Strategy::RsdpoW => {
            let objs: Vec<usize> = if config.mask.objectives.is_empty() {
                objectives.ids()
            } else {
                config.mask.objectives.iter().copied().collect()
            };
            rsdpo_w_pair(&annotations, &ids, &objs, config.standardize_for_average)?
        }
        Strategy::Vanilla | Strategy::Mixed => unreachable!("handled by curate"),
    };
    Ok(match local {
        Some((u, v)) => Outcome {
            gap: Some(gap_of(u, v)?),
            pair: Some((candidates[u], candidates[v])),
        },
        None => Outcome { pair: None, gap: None },
    })
}

fn passthrough_report(dataset: &PreferenceDataset, config: &CurationConfig, input_count: usize) -> CurationReport {
    CurationReport {
        strategy: config.strategy,
        input_count,
        emitted_count: dataset.len(),
        failure_count: 0,
        config: config.clone(),
        records: dataset
            .samples
            .iter()
            .enumerate()
            .map(|(index, s)| SampleRecord {
                index,
                prompt_id: s.prompt_id.clone(),
                status: SampleStatus::Emitted,
                chosen_id: Some(s.chosen_id.clone()),
                rejected_id: Some(s.rejected_id.clone()),
                current_gap: None,
            })
            .collect(),
    }
}

/// Build the current objective's training set from `dataset` with the
/// configured strategy. `previous` holds earlier objectives' datasets and is
/// only used by `Mixed`. Samples are curated independently (and in
/// parallel); each draws from its own random stream keyed by
/// `(seed, prompt, occurrence)`, so the output does not depend on
/// scheduling.
pub fn curate(
    dataset: &PreferenceDataset,
    previous: &[&PreferenceDataset],
    policy: &LogLinearPolicy,
    world: &World,
    objectives: &ObjectiveSet,
    config: &CurationConfig,
) -> Result<(PreferenceDataset, CurationReport)> {
    config.validate(objectives)?;
    policy.check_dim(world)?;
    let resolved = dataset.resolve(world)?;
    match config.strategy {
        Strategy::Vanilla => {
            let out = dataset.clone();
            let report = passthrough_report(&out, config, dataset.len());
            return Ok((out, report));
        }
        Strategy::Mixed => {
            let mut all: Vec<&PreferenceDataset> = previous.to_vec();
            all.push(dataset);
            let mut out = merge_datasets(&all, world)?;
            out.objective_id = config.current_objective;
            let report = passthrough_report(&out, config, out.len());
            return Ok((out, report));
        }
        _ => {}
    }

    let mut seen: HashMap<usize, usize> = HashMap::new();
    let occurrences: Vec<usize> = resolved
        .iter()
        .map(|r| {
            let c = seen.entry(r.prompt).or_insert(0);
            *c += 1;
            *c - 1
        })
        .collect();
    let outcomes = resolved
        .par_iter()
        .zip(occurrences.par_iter())
        .map(|(s, &occ)| curate_one(s, occ, policy, world, objectives, config))
        .collect::<Result<Vec<_>>>()?;

    let provenance = config.strategy.provenance();
    let mut samples = Vec::with_capacity(outcomes.len());
    let mut records = Vec::with_capacity(outcomes.len());
    let mut failures = 0;
    for (index, (outcome, original)) in outcomes.into_iter().zip(&dataset.samples).enumerate() {
        let set = world.candidates(resolved[index].prompt);
        match outcome.pair {
            Some((w, l)) => {
                let s = PreferenceSample::new(&original.prompt_id, &set.responses[w].id, &set.responses[l].id, provenance);
                records.push(SampleRecord {
                    index,
                    prompt_id: s.prompt_id.clone(),
                    status: SampleStatus::Emitted,
                    chosen_id: Some(s.chosen_id.clone()),
                    rejected_id: Some(s.rejected_id.clone()),
                    current_gap: outcome.gap,
                });
                samples.push(s);
            }
            None => {
                failures += 1;
                records.push(SampleRecord {
                    index,
                    prompt_id: original.prompt_id.clone(),
                    status: SampleStatus::Failed,
                    chosen_id: None,
                    rejected_id: None,
                    current_gap: None,
                });
                if config.fallback == Fallback::KeepOriginal {
                    samples.push(original.clone());
                }
            }
        }
    }
    let out = PreferenceDataset::new(
        config.current_objective,
        format!("{}-{}", dataset.name, config.strategy),
        samples,
    );
    let report = CurationReport {
        strategy: config.strategy,
        input_count: dataset.len(),
        emitted_count: out.len(),
        failure_count: failures,
        config: config.clone(),
        records,
    };
    Ok((out, report))
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum ReportLine<'a> {
    Summary {
        strategy: Strategy,
        input_count: usize,
        emitted_count: usize,
        failure_count: usize,
        config: &'a CurationConfig,
    },
    Sample(&'a SampleRecord),
}

/// Summary line followed by one line per input pair.
pub fn save_curation_report(report: &CurationReport, path: &Path) -> Result<()> {
    let head = ReportLine::Summary {
        strategy: report.strategy,
        input_count: report.input_count,
        emitted_count: report.emitted_count,
        failure_count: report.failure_count,
        config: &report.config,
    };
    write_jsonl(path, std::iter::once(head).chain(report.records.iter().map(ReportLine::Sample)))
}

/// Exact consistency statistics of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RcStats {
    pub total: usize,
    pub consistent_count: usize,
    pub consistent_fraction: f64,
    /// `(objective_id, fraction of pairs where chosen does not win on it)`.
    pub reversal_fractions: Vec<(usize, f64)>,
}

pub fn dataset_rc_stats(
    dataset: &PreferenceDataset,
    world: &World,
    objectives: &ObjectiveSet,
    mask: &ConsistencyMask,
) -> Result<RcStats> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset(dataset.name.clone()));
    }
    let resolved = dataset.resolve(world)?;
    let mut consistent = 0;
    let mut reversals: Vec<(usize, usize)> = mask.objectives.iter().map(|&j| (j, 0)).collect();
    for s in &resolved {
        let ann = annotate_indices(world, s.prompt, &[s.chosen, s.rejected], objectives)?;
        if is_reward_consistent(&ann[0], &ann[1], mask)? {
            consistent += 1;
        }
        for (j, count) in reversals.iter_mut() {
            if !(ann[0].get(*j)? > ann[1].get(*j)? + mask.delta) {
                *count += 1;
            }
        }
    }
    let n = resolved.len() as f64;
    Ok(RcStats {
        total: resolved.len(),
        consistent_count: consistent,
        consistent_fraction: consistent as f64 / n,
        reversal_fractions: reversals.into_iter().map(|(j, c)| (j, c as f64 / n)).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FailurePoint {
    pub n: usize,
    pub failure_count: usize,
}

/// RCS failure counts as a function of the number of sampled responses.
/// Every run reuses `config.seed`, so for each pair the draws at a smaller
/// `n` are a prefix of those at a larger `n`.
pub fn failure_curve(
    dataset: &PreferenceDataset,
    policy: &LogLinearPolicy,
    world: &World,
    objectives: &ObjectiveSet,
    config: &CurationConfig,
    n_values: &[usize],
) -> Result<Vec<FailurePoint>> {
    if n_values.is_empty() {
        return Err(Error::config("n_values", "must not be empty"));
    }
    n_values
        .iter()
        .map(|&n| {
            let cfg = CurationConfig {
                strategy: Strategy::Rcs,
                n,
                fallback: Fallback::Drop,
                ..config.clone()
            };
            let (_, report) = curate(dataset, &[], policy, world, objectives, &cfg)?;
            Ok(FailurePoint {
                n,
                failure_count: report.failure_count,
            })
        })
        .collect()
}
