//! Run configuration: every tunable parameter of every command, loadable
//! from a JSON file and overridable by flags.

use std::path::Path;

use anyhow::{bail, Context};
use chaincount_core::partition::PartitionConfig;
use chaincount_core::postprocess::{DedupConfig, DEFAULT_CONFIDENCE_THRESHOLD};
use chaincount_core::refine::RefineConfig;
use chaincount_core::report::DEFAULT_GAME_LEVELS;
use chaincount_core::synth::{CorruptionSpec, SceneSpec};
use chaincount_core::{gradcheck, FocalParams, LossWeights};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub focal: FocalParams,
    pub dedup: DedupSection,
    pub partition: PartitionSection,
    pub refine: RefineSection,
    pub metrics: MetricsSection,
    pub synth: SynthSection,
    pub gradcheck: GradcheckSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DedupSection {
    /// No default: the right value depends on object size and resolution.
    pub distance_threshold: Option<f64>,
    pub confidence_threshold: f64,
}

impl Default for DedupSection {
    fn default() -> Self {
        Self {
            distance_threshold: None,
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionSection {
    /// No default: depends on object spacing.
    pub gap_threshold: Option<f64>,
    pub padding: f64,
    pub merge_distance: f64,
}

impl Default for PartitionSection {
    fn default() -> Self {
        Self {
            gap_threshold: None,
            padding: 0.0,
            merge_distance: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineSection {
    pub steps: usize,
    pub learning_rate: f64,
    pub rematch_every: usize,
    pub weights: LossWeights,
    pub optimizer: chaincount_core::refine::Optimizer,
}

impl Default for RefineSection {
    fn default() -> Self {
        let d = RefineConfig::default();
        Self {
            steps: d.steps,
            learning_rate: d.learning_rate,
            rematch_every: d.rematch_every,
            weights: d.weights,
            optimizer: d.optimizer,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub game_levels: Vec<u32>,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            game_levels: DEFAULT_GAME_LEVELS.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub images: usize,
    pub scene: SceneSpec,
    pub corruption: CorruptionSpec,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            images: 10,
            scene: SceneSpec::default(),
            corruption: CorruptionSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSection {
    pub instances: usize,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        Self {
            instances: 100,
            step: gradcheck::DEFAULT_STEP,
            tolerance: gradcheck::DEFAULT_TOLERANCE,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn dedup_config(&self) -> anyhow::Result<DedupConfig> {
        let Some(distance_threshold) = self.dedup.distance_threshold else {
            bail!(
                "dedup distance threshold is not set (use --distance or dedup.distance_threshold)"
            );
        };
        let cfg = DedupConfig {
            distance_threshold,
            confidence_threshold: self.dedup.confidence_threshold,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn partition_config(&self) -> anyhow::Result<PartitionConfig> {
        let Some(gap_threshold) = self.partition.gap_threshold else {
            bail!("partition gap threshold is not set (use --gap or partition.gap_threshold)");
        };
        let cfg = PartitionConfig {
            gap_threshold,
            padding: self.partition.padding,
            merge_distance: self.partition.merge_distance,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn refine_config(&self) -> anyhow::Result<RefineConfig> {
        let r = &self.refine;
        let cfg = RefineConfig {
            steps: r.steps,
            learning_rate: r.learning_rate,
            rematch_every: r.rematch_every,
            weights: r.weights,
            focal: self.focal,
            optimizer: r.optimizer,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
