//! Preference samples and datasets: vanilla single-objective labeling,
//! line-delimited persistence, and merging.

use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{open_input, record_error, write_jsonl};
use crate::world::World;

/// Where a preference pair came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Original,
    #[serde(rename = "curated-rcs")]
    CuratedRcs,
    #[serde(rename = "curated-nrcs")]
    CuratedNrcs,
    #[serde(rename = "curated-orcs")]
    CuratedOrcs,
    #[serde(rename = "curated-rsdpo-w")]
    CuratedRsdpoW,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Original => "original",
            Provenance::CuratedRcs => "curated-rcs",
            Provenance::CuratedNrcs => "curated-nrcs",
            Provenance::CuratedOrcs => "curated-orcs",
            Provenance::CuratedRsdpoW => "curated-rsdpo-w",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "original" => Provenance::Original,
            "curated-rcs" => Provenance::CuratedRcs,
            "curated-nrcs" => Provenance::CuratedNrcs,
            "curated-orcs" => Provenance::CuratedOrcs,
            "curated-rsdpo-w" => Provenance::CuratedRsdpoW,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceSample {
    pub prompt_id: String,
    pub chosen_id: String,
    pub rejected_id: String,
    pub provenance: Provenance,
}

/// A sample resolved to world indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResolvedSample {
    pub prompt: usize,
    pub chosen: usize,
    pub rejected: usize,
}

impl PreferenceSample {
    pub fn new(prompt_id: &str, chosen_id: &str, rejected_id: &str, provenance: Provenance) -> Self {
        Self {
            prompt_id: prompt_id.to_string(),
            chosen_id: chosen_id.to_string(),
            rejected_id: rejected_id.to_string(),
            provenance,
        }
    }

    pub fn resolve(&self, world: &World) -> Result<ResolvedSample> {
        let (prompt, chosen) = world.locate(&self.prompt_id, &self.chosen_id)?;
        let (_, rejected) = world.locate(&self.prompt_id, &self.rejected_id)?;
        if chosen == rejected {
            return Err(Error::UnknownResponse {
                prompt: self.prompt_id.clone(),
                response: format!("{} (chosen equals rejected)", self.chosen_id),
            });
        }
        Ok(ResolvedSample {
            prompt,
            chosen,
            rejected,
        })
    }

    /// The same pair with chosen and rejected exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            prompt_id: self.prompt_id.clone(),
            chosen_id: self.rejected_id.clone(),
            rejected_id: self.chosen_id.clone(),
            provenance: self.provenance,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceDataset {
    pub objective_id: usize,
    pub name: String,
    pub samples: Vec<PreferenceSample>,
}

impl PreferenceDataset {
    pub fn new(objective_id: usize, name: impl Into<String>, samples: Vec<PreferenceSample>) -> Self {
        Self {
            objective_id,
            name: name.into(),
            samples,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Resolve every sample, failing on the first invalid one.
    pub fn resolve(&self, world: &World) -> Result<Vec<ResolvedSample>> {
        self.samples
            .iter()
            .enumerate()
            .map(|(index, s)| {
                s.resolve(world).map_err(|e| Error::InvalidSample {
                    index,
                    message: e.to_string(),
                })
            })
            .collect()
    }

    pub fn validate(&self, world: &World) -> Result<()> {
        self.resolve(world).map(|_| ())
    }

    /// A dataset holding only the samples for which `keep` returns true.
    pub fn filtered(&self, name: impl Into<String>, mut keep: impl FnMut(&PreferenceSample) -> bool) -> Self {
        Self {
            objective_id: self.objective_id,
            name: name.into(),
            samples: self.samples.iter().filter(|s| keep(s)).cloned().collect(),
        }
    }
}

/// Summary of a vanilla labeling run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VanillaReport {
    /// Prompts whose candidate rewards were tied on every redraw.
    pub skipped_prompts: Vec<String>,
}

const TIE_RETRIES: usize = 32;

/// Label random pairs by a single objective: for each prompt draw
/// `pairs_per_prompt` unordered pairs and orient them so that the chosen
/// response strictly wins on `objective_id`. Tied pairs are redrawn.
pub fn build_vanilla_dataset(
    world: &World,
    objective_id: usize,
    pairs_per_prompt: usize,
    seed: u64,
) -> Result<(PreferenceDataset, VanillaReport)> {
    if objective_id == 0 || objective_id > world.num_objectives {
        return Err(Error::config(
            "objective_id",
            format!("{objective_id} outside 1..={}", world.num_objectives),
        ));
    }
    if pairs_per_prompt == 0 {
        return Err(Error::config("pairs_per_prompt", "must be at least 1"));
    }
    let mut samples = Vec::with_capacity(world.num_prompts() * pairs_per_prompt);
    let mut report = VanillaReport::default();
    let base = ChaCha8Rng::seed_from_u64(seed);
    for (p, set) in world.candidate_sets().iter().enumerate() {
        let mut rng = base.clone();
        rng.set_stream(p as u64);
        let m = set.len();
        let reward = |r: usize| world.reward(objective_id, p, r).expect("complete reward table");
        'pairs: for _ in 0..pairs_per_prompt {
            for _ in 0..TIE_RETRIES {
                let pick = sample_indices(&mut rng, m, 2);
                let (a, b) = (pick.index(0), pick.index(1));
                let (ra, rb) = (reward(a), reward(b));
                if ra == rb {
                    continue;
                }
                let (w, l) = if ra > rb { (a, b) } else { (b, a) };
                samples.push(PreferenceSample::new(
                    &set.prompt.id,
                    &set.responses[w].id,
                    &set.responses[l].id,
                    Provenance::Original,
                ));
                continue 'pairs;
            }
            report.skipped_prompts.push(set.prompt.id.clone());
            break;
        }
    }
    Ok((
        PreferenceDataset::new(objective_id, format!("vanilla-obj{objective_id}"), samples),
        report,
    ))
}

pub fn save_dataset(dataset: &PreferenceDataset, path: &Path) -> Result<()> {
    write_jsonl(path, &dataset.samples)
}

fn string_field(
    path: &Path,
    line: usize,
    obj: &serde_json::Map<String, serde_json::Value>,
    field: &str,
) -> Result<String> {
    match obj.get(field) {
        Some(serde_json::Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(record_error(path, line, field, "expected a string")),
        None => Err(record_error(path, line, field, "missing")),
    }
}

/// Load a dataset and validate every sample against `world`. The dataset
/// name is taken from the file stem.
pub fn load_dataset(path: &Path, world: &World, objective_id: usize) -> Result<PreferenceDataset> {
    let reader = BufReader::new(open_input(path)?);
    let mut samples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| record_error(path, line_no, "record", e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| record_error(path, line_no, "record", "expected a JSON object"))?;
        let prompt_id = string_field(path, line_no, obj, "prompt_id")?;
        let chosen_id = string_field(path, line_no, obj, "chosen_id")?;
        let rejected_id = string_field(path, line_no, obj, "rejected_id")?;
        let provenance = match obj.get("provenance") {
            None => Provenance::Original,
            Some(serde_json::Value::String(s)) => Provenance::parse(s)
                .ok_or_else(|| record_error(path, line_no, "provenance", format!("unknown provenance `{s}`")))?,
            Some(_) => return Err(record_error(path, line_no, "provenance", "expected a string")),
        };
        if chosen_id == rejected_id {
            return Err(record_error(path, line_no, "rejected_id", "equals chosen_id"));
        }
        let p = world
            .prompt_index(&prompt_id)
            .map_err(|e| record_error(path, line_no, "prompt_id", e.to_string()))?;
        for (field, id) in [("chosen_id", &chosen_id), ("rejected_id", &rejected_id)] {
            if world.candidates(p).position(id).is_none() {
                return Err(record_error(path, line_no, field, format!("unknown response `{id}` for prompt `{prompt_id}`")));
            }
        }
        samples.push(PreferenceSample {
            prompt_id,
            chosen_id,
            rejected_id,
            provenance,
        });
    }
    if samples.is_empty() {
        log::warn!("dataset file {} is empty", path.display());
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(PreferenceDataset::new(objective_id, name, samples))
}

/// Concatenate datasets in order (the "mixed" baseline). Every sample must
/// belong to `world`. The merged dataset takes the last input's objective.
pub fn merge_datasets(datasets: &[&PreferenceDataset], world: &World) -> Result<PreferenceDataset> {
    let Some(last) = datasets.last() else {
        return Err(Error::config("datasets", "nothing to merge"));
    };
    let mut samples = Vec::with_capacity(datasets.iter().map(|d| d.len()).sum());
    for d in datasets {
        d.validate(world).map_err(|e| {
            Error::config("datasets", format!("dataset `{}` does not belong to this world: {e}", d.name))
        })?;
        samples.extend(d.samples.iter().cloned());
    }
    let name = if datasets.len() == 1 {
        last.name.clone()
    } else {
        datasets.iter().map(|d| d.name.as_str()).collect::<Vec<_>>().join("+")
    };
    Ok(PreferenceDataset::new(last.objective_id, name, samples))
}
