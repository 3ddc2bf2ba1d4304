//! End-to-end sequential alignment runs on generated worlds and the
//! experiment protocols built on them.
//!
//! A run generates a world, builds one single-objective dataset per
//! objective, then trains the stages in order. Each stage starts from the
//! previous stage's policy; its training data is either the vanilla dataset
//! or a transformation of it (curation, consistency subsets, merging). Reward
//! annotation uses either the world's exact tables or implicit reward models
//! obtained by training DPO on each vanilla dataset independently.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::align::{evaluate_indices, train, EvalMetrics, MarginSpec, Method, TrainConfig};
use crate::curation::{
    curate, failure_curve, is_reward_consistent, ConsistencyMask, CurationConfig, CurationReport, Fallback,
    FailurePoint, Strategy,
};
use crate::dataset::{build_vanilla_dataset, PreferenceDataset};
use crate::error::{Error, Result};
use crate::policy::LogLinearPolicy;
use crate::reward::{annotate_indices, ImplicitRewardModel, ObjectiveSet, ObjectiveSpec, RewardModel};
use crate::world::{generate_world, World, WorldConfig};

/// Where curation and margins get their rewards from. Evaluation always uses
/// the world's exact tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardSource {
    #[default]
    Table,
    Implicit,
}

/// Training data of one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Vanilla,
    /// Vanilla pairs that are reward-consistent on objectives `1..=current`.
    ConsistentSubset,
    /// Vanilla pairs that are not.
    InconsistentSubset,
    /// Vanilla data passed through a curation strategy. `mask` defaults to
    /// `1..=current`.
    Curated {
        strategy: Strategy,
        #[serde(default)]
        mask: Option<Vec<usize>>,
    },
}

impl DataSource {
    pub fn curated(strategy: Strategy) -> Self {
        DataSource::Curated { strategy, mask: None }
    }

    pub fn label(&self) -> String {
        match self {
            DataSource::Vanilla => "Vanilla".into(),
            DataSource::ConsistentSubset => "RC".into(),
            DataSource::InconsistentSubset => "NRC".into(),
            DataSource::Curated { strategy, mask } => {
                let base = match strategy {
                    Strategy::Vanilla => "Vanilla",
                    Strategy::Mixed => "Mixed",
                    Strategy::Rcs => "RCS",
                    Strategy::Nrcs => "NRCS",
                    Strategy::Orcs => "ORCS",
                    Strategy::RsdpoW => "RSDPO-W",
                };
                match mask {
                    None => base.into(),
                    Some(m) => format!(
                        "{base}[{}]",
                        m.iter().map(|j| j.to_string()).collect::<Vec<_>>().join(",")
                    ),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub objective: usize,
    pub data: DataSource,
    pub method: Method,
}

/// Everything needed to reproduce a run except the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub world: WorldConfig,
    pub train: TrainConfig,
    pub pairs_per_prompt: usize,
    pub reward_source: RewardSource,
    /// Weight `w_k` of the current objective for MODPO/SPO stages.
    pub current_weight: f64,
    /// Sampled responses per pair during curation.
    pub n: usize,
    pub fallback: Fallback,
    pub stages: Vec<StageSpec>,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            world: WorldConfig::default(),
            train: TrainConfig::default(),
            pairs_per_prompt: 1,
            reward_source: RewardSource::default(),
            current_weight: 0.9,
            n: 8,
            fallback: Fallback::Drop,
            stages: vec![
                StageSpec {
                    objective: 1,
                    data: DataSource::Vanilla,
                    method: Method::Dpo,
                },
                StageSpec {
                    objective: 2,
                    data: DataSource::curated(Strategy::Rcs),
                    method: Method::Modpo,
                },
            ],
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.train.validate()?;
        if self.stages.is_empty() {
            return Err(Error::config("stages", "at least one stage is required"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        if self.pairs_per_prompt == 0 {
            return Err(Error::config("pairs_per_prompt", "must be at least 1"));
        }
        if !(self.current_weight > 0.0 && self.current_weight <= 1.0) {
            return Err(Error::config("current_weight", "must lie in (0, 1]"));
        }
        for s in &self.stages {
            if s.objective == 0 || s.objective > self.world.num_objectives {
                return Err(Error::config("stages.objective", format!("unknown objective {}", s.objective)));
            }
        }
        Ok(())
    }

    /// Same spec with the last stage replaced.
    pub fn with_last_stage(&self, data: DataSource) -> Self {
        let mut out = self.clone();
        if let Some(last) = out.stages.last_mut() {
            last.data = data;
        }
        out
    }
}

/// Outcome of one stage.
#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub spec: StageSpec,
    pub dataset_size: usize,
    pub curation: Option<CurationReport>,
    pub policy: LogLinearPolicy,
    /// Against the initial (all-zero) policy.
    pub vs_init: EvalMetrics,
    /// Against the policy the stage started from.
    pub vs_previous: EvalMetrics,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub seed: u64,
    pub stages: Vec<StageOutcome>,
}

impl RunOutcome {
    pub fn last(&self) -> &StageOutcome {
        self.stages.last().expect("at least one stage")
    }
}

/// World, vanilla datasets and annotation models shared by every run with
/// the same spec and seed.
#[derive(Debug, Clone)]
pub struct Setup {
    pub seed: u64,
    pub world: World,
    pub init: LogLinearPolicy,
    /// `vanilla[j - 1]` is labelled by objective `j`.
    pub vanilla: Vec<PreferenceDataset>,
    /// Rewards used for curation, subsets and margins.
    pub annotation: ObjectiveSet,
    /// Exact rewards used for evaluation.
    pub truth: ObjectiveSet,
}

fn dataset_seed(seed: u64, objective: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(objective as u64)
}

impl Setup {
    pub fn new(spec: &ExperimentSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let world = generate_world(&WorldConfig { seed, ..spec.world.clone() })?;
        let init = LogLinearPolicy::zeros(world.feature_dim, "init");
        let vanilla = world
            .objective_ids()
            .map(|j| build_vanilla_dataset(&world, j, spec.pairs_per_prompt, dataset_seed(seed, j)).map(|d| d.0))
            .collect::<Result<Vec<_>>>()?;
        let truth = ObjectiveSet::from_tables(&world);
        let annotation = match spec.reward_source {
            RewardSource::Table => truth.clone(),
            RewardSource::Implicit => {
                let config = TrainConfig {
                    method: Method::Dpo,
                    ..spec.train.clone()
                };
                let mut specs = Vec::with_capacity(vanilla.len());
                for (i, d) in vanilla.iter().enumerate() {
                    let run = train(d, &init, &init, &config, None, &world)?;
                    let model = ImplicitRewardModel::from_dpo(run.final_policy, init.clone(), config.beta)?;
                    specs.push(ObjectiveSpec {
                        id: i + 1,
                        name: format!("obj{}", i + 1),
                        weight: 1.0 / vanilla.len() as f64,
                        model: RewardModel::Implicit(model),
                    });
                }
                ObjectiveSet::new(specs)?
            }
        };
        Ok(Self {
            seed,
            world,
            init,
            vanilla,
            annotation,
            truth,
        })
    }

    fn all_prompts(&self) -> Vec<usize> {
        (0..self.world.num_prompts()).collect()
    }

    pub fn evaluate(&self, policy: &LogLinearPolicy, reference: &LogLinearPolicy) -> Result<EvalMetrics> {
        evaluate_indices(policy, reference, &self.world, &self.truth, &self.all_prompts())
    }

    /// Margin over the objectives trained before `current`, splitting
    /// `1 - w_k` evenly among them. No margin for the first objective.
    pub fn margin_for(&self, current: usize, current_weight: f64) -> Result<MarginSpec> {
        let previous: Vec<usize> = (1..current).collect();
        MarginSpec::even_split(&self.annotation, current_weight, &previous)
    }

    fn consistency_split(&self, dataset: &PreferenceDataset, mask: &ConsistencyMask, keep: bool) -> Result<PreferenceDataset> {
        let mut samples = Vec::new();
        for (s, r) in dataset.samples.iter().zip(dataset.resolve(&self.world)?) {
            let a = annotate_indices(&self.world, r.prompt, &[r.chosen, r.rejected], &self.annotation)?;
            if is_reward_consistent(&a[0], &a[1], mask)? == keep {
                samples.push(s.clone());
            }
        }
        let tag = if keep { "rc" } else { "nrc" };
        Ok(PreferenceDataset::new(dataset.objective_id, format!("{}-{tag}", dataset.name), samples))
    }

    /// Training data for `stage`, sampling curation candidates from `sampler`.
    pub fn stage_data(
        &self,
        spec: &ExperimentSpec,
        stage: &StageSpec,
        sampler: &LogLinearPolicy,
    ) -> Result<(PreferenceDataset, Option<CurationReport>)> {
        let current = stage.objective;
        let base = &self.vanilla[current - 1];
        let full = ConsistencyMask::up_to(current);
        match &stage.data {
            DataSource::Vanilla => Ok((base.clone(), None)),
            DataSource::ConsistentSubset => Ok((self.consistency_split(base, &full, true)?, None)),
            DataSource::InconsistentSubset => Ok((self.consistency_split(base, &full, false)?, None)),
            DataSource::Curated { strategy, mask } => {
                let mask = mask.as_ref().map(|m| ConsistencyMask::new(m.iter().copied())).unwrap_or(full);
                let config = CurationConfig {
                    n: spec.n,
                    fallback: spec.fallback,
                    seed: dataset_seed(self.seed, current) ^ 0x5eed,
                    ..CurationConfig::new(*strategy, current).with_mask(mask)
                };
                let previous: Vec<&PreferenceDataset> = self.vanilla[..current - 1].iter().collect();
                let (data, report) = curate(base, &previous, sampler, &self.world, &self.annotation, &config)?;
                Ok((data, Some(report)))
            }
        }
    }

    /// Train one stage starting from `start`.
    pub fn run_stage(&self, spec: &ExperimentSpec, stage: &StageSpec, start: &LogLinearPolicy) -> Result<StageOutcome> {
        let (data, curation) = self.stage_data(spec, stage, start)?;
        let reference = match stage.method {
            Method::Spo => start,
            Method::Dpo | Method::Modpo => &self.init,
        };
        let margin = self.margin_for(stage.objective, spec.current_weight)?;
        let config = TrainConfig {
            method: stage.method,
            ..spec.train.clone()
        };
        let policy = if data.is_empty() {
            // Nothing to learn from: the stage leaves the policy unchanged.
            start.clone()
        } else {
            train(&data, start, reference, &config, Some(&margin), &self.world)?.final_policy
        };
        Ok(StageOutcome {
            spec: stage.clone(),
            dataset_size: data.len(),
            curation,
            vs_init: self.evaluate(&policy, &self.init)?,
            vs_previous: self.evaluate(&policy, start)?,
            policy,
        })
    }

    /// Train every stage of `spec` in order.
    pub fn run(&self, spec: &ExperimentSpec) -> Result<RunOutcome> {
        let mut stages: Vec<StageOutcome> = Vec::with_capacity(spec.stages.len());
        for (index, stage) in spec.stages.iter().enumerate() {
            let start = stages.last().map(|s| &s.policy).unwrap_or(&self.init);
            let outcome = self.run_stage(spec, stage, start).map_err(|e| Error::Stage {
                index,
                source: Box::new(e),
            })?;
            stages.push(outcome);
        }
        Ok(RunOutcome { seed: self.seed, stages })
    }

    /// Policy the last stage of `spec` starts from.
    pub fn start_of_last(&self, spec: &ExperimentSpec) -> Result<LogLinearPolicy> {
        let prefix = &spec.stages[..spec.stages.len().saturating_sub(1)];
        if prefix.is_empty() {
            return Ok(self.init.clone());
        }
        let head = self.run(&ExperimentSpec {
            stages: prefix.to_vec(),
            ..spec.clone()
        })?;
        Ok(head.last().policy.clone())
    }

    /// Run the shared prefix once, then each variant of the last stage.
    pub fn run_variants(&self, spec: &ExperimentSpec, variants: &[DataSource]) -> Result<Vec<StageOutcome>> {
        let last = spec
            .stages
            .last()
            .ok_or_else(|| Error::config("stages", "at least one stage is required"))?;
        let start = self.start_of_last(spec)?;
        variants
            .iter()
            .map(|data| {
                let stage = StageSpec {
                    data: data.clone(),
                    ..last.clone()
                };
                self.run_stage(spec, &stage, &start)
            })
            .collect()
    }
}

/// Run `spec` once per seed.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<RunOutcome>> {
    spec.validate()?;
    spec.seeds.iter().map(|&seed| Setup::new(spec, seed)?.run(spec)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub label: String,
    pub win_rates: Vec<f64>,
    pub average_score: f64,
    /// `row - vanilla` for each win rate, then for the average score.
    pub deltas: Vec<f64>,
}

/// Win rates per strategy with differences against the `Vanilla` row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportTable {
    pub caption: String,
    pub objective_ids: Vec<usize>,
    pub rows: Vec<ReportRow>,
}

pub const BASELINE_LABEL: &str = "Vanilla";

impl ReportTable {
    /// Build from labelled metrics; exactly one row must be labelled
    /// `Vanilla`.
    pub fn new(caption: impl Into<String>, rows: &[(String, EvalMetrics)]) -> Result<Self> {
        let baselines: Vec<_> = rows.iter().filter(|(l, _)| l == BASELINE_LABEL).collect();
        if baselines.len() != 1 {
            return Err(Error::config(
                "rows",
                format!("expected exactly one `{BASELINE_LABEL}` row, found {}", baselines.len()),
            ));
        }
        let base = &baselines[0].1;
        let objective_ids = base.objective_ids.clone();
        if let Some((l, _)) = rows.iter().find(|(_, m)| m.objective_ids != objective_ids) {
            return Err(Error::config("rows", format!("row `{l}` covers different objectives")));
        }
        let rows = rows
            .iter()
            .map(|(label, m)| {
                let mut deltas: Vec<f64> = m.win_rate.iter().zip(&base.win_rate).map(|(a, b)| a - b).collect();
                deltas.push(m.average_score - base.average_score);
                ReportRow {
                    label: label.clone(),
                    win_rates: m.win_rate.clone(),
                    average_score: m.average_score,
                    deltas,
                }
            })
            .collect();
        Ok(Self {
            caption: caption.into(),
            objective_ids,
            rows,
        })
    }

    pub fn row(&self, label: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec!["strategy".to_string()];
        h.extend(self.objective_ids.iter().map(|j| format!("win_rate_{j}")));
        h.push("average_score".into());
        h.extend(self.objective_ids.iter().map(|j| format!("delta_win_rate_{j}")));
        h.push("delta_average_score".into());
        h
    }

    fn cells(row: &ReportRow) -> Vec<String> {
        let mut c = vec![row.label.clone()];
        c.extend(row.win_rates.iter().map(|v| format!("{v:.4}")));
        c.push(format!("{:.4}", row.average_score));
        c.extend(row.deltas.iter().map(|v| format!("{v:+.4}")));
        c
    }

    /// Aligned plain-text rendering.
    pub fn to_text(&self) -> String {
        let header = self.header();
        let body: Vec<Vec<String>> = self.rows.iter().map(Self::cells).collect();
        let widths: Vec<usize> = (0..header.len())
            .map(|i| body.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        if !self.caption.is_empty() {
            let _ = writeln!(out, "{}", self.caption);
        }
        for line in std::iter::once(&header).chain(&body) {
            let cells: Vec<String> = line
                .iter()
                .enumerate()
                .map(|(i, c)| if i == 0 { format!("{c:<w$}", w = widths[i]) } else { format!("{c:>w$}", w = widths[i]) })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }

    /// CSV with full-precision numbers.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.header())?;
        for r in &self.rows {
            let mut rec = vec![r.label.clone()];
            rec.extend(r.win_rates.iter().map(|v| v.to_string()));
            rec.push(r.average_score.to_string());
            rec.extend(r.deltas.iter().map(|v| v.to_string()));
            w.write_record(rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Two-objective spec: DPO on objective 1, then `method` on objective 2.
pub fn two_objective_spec(method: Method) -> ExperimentSpec {
    let mut spec = ExperimentSpec::default();
    spec.stages[1].method = method;
    spec
}

/// Train objective 2 on the vanilla data and on its consistent and
/// inconsistent subsets. Metrics are against the objective-1 policy.
pub fn consistency_subsets(spec: &ExperimentSpec, seed: u64) -> Result<ReportTable> {
    let setup = Setup::new(spec, seed)?;
    let sources = [DataSource::Vanilla, DataSource::InconsistentSubset, DataSource::ConsistentSubset];
    let outcomes = setup.run_variants(spec, &sources)?;
    let rows: Vec<(String, EvalMetrics)> = sources
        .iter()
        .zip(outcomes)
        .map(|(s, o)| (s.label(), o.vs_previous))
        .collect();
    ReportTable::new(format!("consistency subsets, seed {seed}, against the objective-1 policy"), &rows)
}

/// Metrics against the initial policy for each last-stage data source.
pub fn compare_sources(spec: &ExperimentSpec, seed: u64, sources: &[DataSource], caption: &str) -> Result<ReportTable> {
    let setup = Setup::new(spec, seed)?;
    let outcomes = setup.run_variants(spec, sources)?;
    let rows: Vec<(String, EvalMetrics)> = sources
        .iter()
        .zip(outcomes)
        .map(|(s, o)| (s.label(), o.vs_init))
        .collect();
    ReportTable::new(format!("{caption}, seed {seed}"), &rows)
}

/// Vanilla, Mixed, RSDPO-W and RCS data for the last stage.
pub fn strategy_comparison(spec: &ExperimentSpec, seed: u64) -> Result<ReportTable> {
    let sources = [
        DataSource::Vanilla,
        DataSource::curated(Strategy::Mixed),
        DataSource::curated(Strategy::RsdpoW),
        DataSource::curated(Strategy::Rcs),
    ];
    compare_sources(spec, seed, &sources, "data strategies")
}

/// RCS against its two ablations.
pub fn ablation(spec: &ExperimentSpec, seed: u64) -> Result<ReportTable> {
    let sources = [
        DataSource::Vanilla,
        DataSource::curated(Strategy::Rcs),
        DataSource::curated(Strategy::Nrcs),
        DataSource::curated(Strategy::Orcs),
    ];
    compare_sources(spec, seed, &sources, "curation ablation")
}

/// RCS failure counts on the last stage's vanilla data, sampling from the
/// policy that stage would start from.
pub fn failure_counts(spec: &ExperimentSpec, seed: u64, n_values: &[usize]) -> Result<Vec<FailurePoint>> {
    let setup = Setup::new(spec, seed)?;
    let last = spec
        .stages
        .last()
        .ok_or_else(|| Error::config("stages", "at least one stage is required"))?;
    let sampler = setup.start_of_last(spec)?;
    let config = CurationConfig::new(Strategy::Rcs, last.objective).with_seed(dataset_seed(seed, last.objective) ^ 0x5eed);
    failure_curve(
        &setup.vanilla[last.objective - 1],
        &sampler,
        &setup.world,
        &setup.annotation,
        &config,
        n_values,
    )
}

/// Three objectives: DPO on objective 1, DPO on vanilla objective 2, then
/// objective 3 with the last stage to be varied.
pub fn three_objective_spec(conflict_rho: f64) -> ExperimentSpec {
    let mut spec = ExperimentSpec::default();
    spec.world.num_objectives = 3;
    spec.world.conflict_rho = conflict_rho;
    spec.stages = (1..=3)
        .map(|objective| StageSpec {
            objective,
            data: DataSource::Vanilla,
            method: Method::Dpo,
        })
        .collect();
    spec
}

/// Full-mask RCS on the last objective against RCS with `relaxed` removed
/// from the mask.
pub fn mask_flexibility(spec: &ExperimentSpec, seed: u64, relaxed: usize) -> Result<ReportTable> {
    let current = spec
        .stages
        .last()
        .ok_or_else(|| Error::config("stages", "at least one stage is required"))?
        .objective;
    if relaxed == current {
        return Err(Error::config("relaxed", "cannot relax the current objective"));
    }
    let partial: Vec<usize> = (1..=current).filter(|&j| j != relaxed).collect();
    let sources = [
        DataSource::Vanilla,
        DataSource::curated(Strategy::Rcs),
        DataSource::Curated {
            strategy: Strategy::Rcs,
            mask: Some(partial),
        },
    ];
    compare_sources(spec, seed, &sources, "consistency mask variants")
}
