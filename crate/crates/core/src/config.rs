//! Run configuration: one JSON document per run, with command-line
//! overrides applied as dotted `key=value` assignments.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::corpus::SynthConfig;
use crate::discrim::ScoreMode;
use crate::error::{Error, Result};
use crate::pipeline::PipelineConfig;
use crate::planted::PlantedOptions;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthPreset {
    #[default]
    ThreeClass,
    Monotone,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSection {
    pub preset: SynthPreset,
    /// Replaces the preset when given.
    pub layout: Option<SynthConfig>,
    pub images: usize,
    pub planted: PlantedOptions,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            preset: SynthPreset::ThreeClass,
            layout: None,
            images: 500,
            planted: PlantedOptions::default(),
        }
    }
}

impl SynthSection {
    pub fn layout(&self) -> SynthConfig {
        match (&self.layout, self.preset) {
            (Some(l), _) => l.clone(),
            (None, SynthPreset::ThreeClass) => SynthConfig::three_class(),
            (None, SynthPreset::Monotone) => SynthConfig::monotone(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscrimSection {
    pub mode: ScoreMode,
    /// Layers for filter δ; empty means the pipeline's layers.
    pub layers: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopkSection {
    pub k: usize,
    /// Layer to export; empty means the first analysed layer.
    pub layer: String,
    /// Filters to export; empty means all.
    pub filters: Vec<usize>,
}

impl Default for TopkSection {
    fn default() -> Self {
        TopkSection {
            k: 10,
            layer: String::new(),
            filters: Vec::new(),
        }
    }
}

/// Target of the single-part `ga` command and the size used by `topfilters`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectSection {
    pub layer: String,
    /// `object/part`.
    pub part: String,
    /// Number of filters for `topfilters`; 0 takes each part's GA size from
    /// the pipeline results.
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Directory of `NNNNN.ppm` + `NNNNN.json` pairs.
    pub corpus: PathBuf,
    /// Network spec JSON; weights are read from `weights`.
    pub network: PathBuf,
    pub weights: PathBuf,
    /// Output directory of a previous `pipeline` run, read by `discrim` and `report`.
    pub pipeline_dir: PathBuf,
    pub out: PathBuf,
    /// Seeds every random choice of the run.
    pub seed: u64,
    pub pipeline: PipelineConfig,
    pub discrim: DiscrimSection,
    pub topk: TopkSection,
    pub select: SelectSection,
    pub synth: SynthSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: PathBuf::from("corpus"),
            network: PathBuf::from("network.json"),
            weights: PathBuf::from("weights.fsw"),
            pipeline_dir: PathBuf::from("out"),
            out: PathBuf::from("out"),
            seed: 0,
            pipeline: PipelineConfig::default(),
            discrim: DiscrimSection::default(),
            topk: TopkSection::default(),
            select: SelectSection::default(),
            synth: SynthSection::default(),
        }
    }
}

/// Parses a `key.path=value` assignment. The value is read as JSON when it
/// parses, otherwise as a string.
fn parse_assignment(s: &str) -> Result<(Vec<&str>, Value)> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{s}` is not of the form key=value")))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("override `{s}` has an empty key segment")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.split('.').collect(), value))
}

fn assign(root: &mut Value, path: &[&str], value: Value) -> Result<()> {
    let mut node = root;
    for (i, seg) in path.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("`{}` is not an object", path[..i].join("."))))?;
        if i + 1 == path.len() {
            obj.insert(seg.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(seg.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
    }
    Ok(())
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Applies `key.path=value` overrides on top of the serialized config.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut v = serde_json::to_value(self)?;
        for o in overrides {
            let (path, value) = parse_assignment(o)?;
            assign(&mut v, &path, value)?;
        }
        serde_json::from_value(v).map_err(|e| Error::Config(format!("after overrides: {e}")))
    }

    /// Copies the run seed into every seeded component.
    pub fn seeded(mut self) -> Self {
        self.pipeline.ga.seed = self.seed;
        self.synth.planted.seed = self.seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        if self.topk.k == 0 {
            return Err(Error::Config("topk.k must be positive".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run config serializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(serde_json::to_string(self).expect("run config serializes").as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
