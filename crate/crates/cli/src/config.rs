use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dgode::dataio::{SyntheticConfig, DEFAULT_SPLIT};
use dgode::graph::GraphWindow;
use dgode::model::{ModelConfig, TrainConfig, WeightMap};
use dgode::odecore::OdeConfig;

/// Everything a command reads from the TOML file. Each section may be
/// omitted; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset file; absent means a synthetic set generated from `[data]`.
    pub dataset: Option<PathBuf>,
    /// Parameter dump used by `eval`.
    pub params: Option<PathBuf>,
    pub out: PathBuf,
    /// When set, overrides the seeds in `[data]` and `[train]` and seeds the
    /// split and parameter initialization.
    pub seed: Option<u64>,
    pub split: SplitSection,
    pub data: SyntheticConfig,
    pub model: ModelSection,
    pub graph: GraphWindow,
    pub ode: OdeConfig,
    pub train: TrainConfig,
    pub sweep: SweepSection,
    pub verify: VerifySection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            params: None,
            out: PathBuf::from("dgode-out"),
            seed: None,
            split: SplitSection::default(),
            data: SyntheticConfig::default(),
            model: ModelSection::default(),
            graph: GraphWindow::default(),
            ode: OdeConfig::default(),
            train: TrainConfig::default(),
            sweep: SweepSection::default(),
            verify: VerifySection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub fractions: [f64; 3],
}

impl Default for SplitSection {
    fn default() -> Self {
        Self { fractions: DEFAULT_SPLIT }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub depths: Vec<usize>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { depths: vec![2, 4, 8, 16, 32, 64] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub instances: usize,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self { instances: 50 }
    }
}

/// Architecture knobs; dataset-derived fields (classes, widths, speakers)
/// are filled in at run time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub gru_hidden: usize,
    pub node_dim: usize,
    pub head_hidden: usize,
    pub use_mixhop: bool,
    pub use_ode: bool,
    pub mixhop_depth: usize,
    pub hops: usize,
    pub alpha: f64,
    pub weight_map: WeightMap,
    pub weight_radius: f64,
    pub weight_floor: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let t = ModelConfig::for_dataset(2, [1, 1, 1], Vec::new());
        Self {
            gru_hidden: t.gru_hidden,
            node_dim: t.node_dim,
            head_hidden: t.head_hidden,
            use_mixhop: t.use_mixhop,
            use_ode: t.use_ode,
            mixhop_depth: t.mixhop_depth,
            hops: t.hops,
            alpha: t.alpha,
            weight_map: t.weight_map,
            weight_radius: t.weight_radius,
            weight_floor: t.weight_floor,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("config {}: {e}", path.display()))
    }

    /// Applies the master seed, if any, to every seeded section.
    pub fn resolve_seed(&mut self, flag: Option<u64>) {
        if let Some(seed) = flag.or(self.seed) {
            self.seed = Some(seed);
            self.data.seed = seed;
            self.train.seed = seed;
        }
    }

    /// Seed for the split and for parameter initialization.
    pub fn run_seed(&self) -> u64 {
        self.seed.unwrap_or(self.train.seed)
    }

    pub fn model_config(&self, classes: usize, dims: [usize; 3], speakers: Vec<String>) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            gru_hidden: m.gru_hidden,
            node_dim: m.node_dim,
            head_hidden: m.head_hidden,
            use_mixhop: m.use_mixhop,
            use_ode: m.use_ode,
            mixhop_depth: m.mixhop_depth,
            hops: m.hops,
            alpha: m.alpha,
            window: self.graph,
            ode: self.ode.clone(),
            weight_map: m.weight_map,
            weight_radius: m.weight_radius,
            weight_floor: m.weight_floor,
            ..ModelConfig::for_dataset(classes, dims, speakers)
        }
    }
}
