//! Offline `(condition, noise, reference)` triples.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::mixture::{ConditionSpec, MixtureModel};
use crate::reference::{reference_solution, ReferenceTolerance};
use crate::rng::{derive_seed, sample_prior};
use crate::schedule::NoiseSchedule;

/// Version of the condition-to-mixture synthesis rule.
pub const SYNTHESIS_RULE_VERSION: u32 = 1;

/// How condition ids turn into mixtures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisSpec {
    pub dim: usize,
    pub generator_seed: u64,
    /// Fixed component count; drawn from {2..5} per condition when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<usize>,
    pub rule_version: u32,
    /// Every condition maps to this model when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed: Option<MixtureModel>,
}

impl SynthesisSpec {
    pub fn new(dim: usize, generator_seed: u64, components: Option<usize>) -> Self {
        Self { dim, generator_seed, components, rule_version: SYNTHESIS_RULE_VERSION, fixed: None }
    }

    pub fn fixed(model: MixtureModel) -> Self {
        Self {
            dim: model.dim(),
            generator_seed: 0,
            components: None,
            rule_version: SYNTHESIS_RULE_VERSION,
            fixed: Some(model),
        }
    }

    pub fn model(&self, condition_id: u64) -> Result<MixtureModel> {
        if let Some(m) = &self.fixed {
            return Ok(m.clone());
        }
        if self.rule_version != SYNTHESIS_RULE_VERSION {
            return Err(LabError::Config(format!("synthesis rule version {} is not supported", self.rule_version)));
        }
        ConditionSpec::new(condition_id, self.generator_seed).model(self.dim, self.components)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub condition_id: u64,
    pub noise_seed: u64,
    pub z: Vec<f64>,
    pub x_gt: Vec<f64>,
    pub ref_nfe: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub schedule: NoiseSchedule,
    pub synthesis: SynthesisSpec,
    pub reference: ReferenceTolerance,
    pub entries: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

#[derive(Debug, Clone)]
pub struct OfflineDataset {
    pub manifest: DatasetManifest,
    pub entries: Vec<DatasetEntry>,
    models: BTreeMap<u64, MixtureModel>,
}

/// `(condition_id, noise_seed)` pairs for `count` entries cycling over
/// `conditions` distinct conditions starting at `first_entry`.
pub fn entry_pairs(count: usize, conditions: u64, base_seed: u64, first_entry: u64) -> Vec<(u64, u64)> {
    let conditions = conditions.max(1);
    (first_entry..first_entry + count as u64)
        .map(|k| (k % conditions, derive_seed(base_seed, &[0x6e6f_6973, k])))
        .collect()
}

/// Draws `z` per pair and solves for `x_gt` with the reference integrator.
pub fn build_dataset(
    pairs: &[(u64, u64)],
    schedule: &NoiseSchedule,
    synthesis: SynthesisSpec,
    tol: ReferenceTolerance,
) -> Result<OfflineDataset> {
    if pairs.is_empty() {
        return Err(LabError::Config("dataset needs at least one (condition, seed) pair".into()));
    }
    let models = models_for(pairs.iter().map(|p| p.0), &synthesis)?;
    let dim = synthesis.dim;
    let entries = pairs
        .par_iter()
        .enumerate()
        .map(|(index, &(condition_id, noise_seed))| {
            let model = &models[&condition_id];
            let z = sample_prior(noise_seed, dim);
            let run = reference_solution(model, schedule, &z, tol).map_err(|e| e.at_entry(index))?;
            Ok(DatasetEntry { condition_id, noise_seed, x_gt: run.final_x().to_vec(), z, ref_nfe: run.nfe })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest {
        schedule: schedule.clone(),
        synthesis,
        reference: tol,
        entries: entries.len(),
        config_hash: None,
    };
    Ok(OfflineDataset { manifest, entries, models })
}

fn models_for(ids: impl Iterator<Item = u64>, synthesis: &SynthesisSpec) -> Result<BTreeMap<u64, MixtureModel>> {
    let mut models = BTreeMap::new();
    for id in ids {
        if let std::collections::btree_map::Entry::Vacant(slot) = models.entry(id) {
            slot.insert(synthesis.model(id)?);
        }
    }
    Ok(models)
}

impl OfflineDataset {
    pub fn from_parts(manifest: DatasetManifest, entries: Vec<DatasetEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(LabError::Config("dataset has no entries".into()));
        }
        let dim = manifest.synthesis.dim;
        if let Some((i, _)) = entries.iter().enumerate().find(|(_, e)| e.z.len() != dim || e.x_gt.len() != dim) {
            return Err(LabError::Parse {
                location: format!("record {}", i + 1),
                reason: format!("vectors must have dimension {dim}"),
            });
        }
        let models = models_for(entries.iter().map(|e| e.condition_id), &manifest.synthesis)?;
        Ok(Self { manifest, entries, models })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.manifest.schedule
    }

    pub fn model(&self, condition_id: u64) -> &MixtureModel {
        &self.models[&condition_id]
    }

    pub fn model_for(&self, entry: usize) -> &MixtureModel {
        self.model(self.entries[entry].condition_id)
    }

    /// Subset view with the same manifest settings.
    pub fn select(&self, range: std::ops::Range<usize>) -> Result<Self> {
        let entries = self.entries[range].to_vec();
        let mut manifest = self.manifest.clone();
        manifest.entries = entries.len();
        Self::from_parts(manifest, entries)
    }

    /// Recomputes `x_gt` for one entry and returns the max abs deviation.
    pub fn verify_entry(&self, index: usize) -> Result<f64> {
        let e = &self.entries[index];
        let run = reference_solution(self.model(e.condition_id), self.schedule(), &e.z, self.manifest.reference)?;
        Ok(run.final_x().iter().zip(&e.x_gt).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }

    /// Newline-delimited JSON, one record per entry.
    pub fn write_ndjson(&self, out: impl Write) -> Result<()> {
        let mut w = BufWriter::new(out);
        for e in &self.entries {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_ndjson(manifest: DatasetManifest, input: impl std::io::Read) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(input).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: DatasetEntry = serde_json::from_str(&line).map_err(|err| LabError::Parse {
                location: format!("line {} column {}", i + 1, err.column()),
                reason: err.to_string(),
            })?;
            entries.push(e);
        }
        Self::from_parts(manifest, entries)
    }

    /// Writes `path` (records) and `path.manifest.json`.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_ndjson(std::fs::File::create(path)?)?;
        std::fs::write(manifest_path(path), serde_json::to_string_pretty(&self.manifest)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let manifest: DatasetManifest = serde_json::from_str(&std::fs::read_to_string(manifest_path(path))?)?;
        Self::read_ndjson(manifest, std::fs::File::open(path)?)
    }
}

pub fn manifest_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    path.with_file_name(name)
}
