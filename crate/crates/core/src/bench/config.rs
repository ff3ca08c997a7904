//! Benchmark configuration files.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::systems::SystemSpec;
use super::BenchError;
use crate::acquisition::AcqSpec;
use crate::ensemble::CombineRule;
use crate::probo::{FidelityMode, RunConfig, System};
use crate::search::OptimizerConfig;
use crate::seed::Seed;
use crate::zoo::{build_model, MhConfig, ModelContext};

fn default_n_init() -> usize {
    3
}

/// One system/model/acquisition/fidelity combination.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    /// Defaults to `cell<k>` with `k` the cell's position.
    #[serde(default)]
    pub id: Option<String>,
    pub system: SystemSpec,
    pub model: String,
    pub acq: AcqSpec,
    pub fidelity: FidelityMode,
    /// Overrides the config-wide MH settings.
    #[serde(default)]
    pub mh: Option<MhConfig>,
    #[serde(default)]
    pub optimizer: Option<OptimizerConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub cells: Vec<CellSpec>,
    pub trials: usize,
    /// BO iterations `N` per trial.
    pub iterations: usize,
    pub seed: u64,
    /// Output directory; the command line can override it.
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default = "default_n_init")]
    pub n_init: usize,
    #[serde(default)]
    pub mh: MhConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub combine_rule: CombineRule,
    /// Fill the `wall_ms` column. Off by default so reruns are byte-identical.
    #[serde(default)]
    pub record_wall_time: bool,
}

impl BenchmarkConfig {
    pub fn from_json(text: &str) -> Result<Self, BenchError> {
        let config: BenchmarkConfig = serde_json::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            BenchError::Config(msg) => BenchError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Checks everything that can be checked without running: trial count,
    /// ids, and that every cell's system, model and run settings build.
    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |msg: String| Err(BenchError::Config(msg));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.cells.is_empty() {
            return bad("config has no cells".into());
        }
        let mut seen = HashSet::new();
        for k in 0..self.cells.len() {
            let id = self.cell_id(k);
            if id.is_empty() || id.contains([',', '"', '\n', '\r']) {
                return bad(format!("cell id `{id}` must be non-empty without commas, quotes or newlines"));
            }
            if !seen.insert(id.clone()) {
                return bad(format!("duplicate cell id `{id}`"));
            }
            let system = self.cells[k].system.build().map_err(|e| BenchError::Config(format!("cell `{id}`: {e}")))?;
            self.model_context(k, system.as_ref())
                .and_then(|ctx| build_model(&self.cells[k].model, &ctx))
                .and_then(|_| self.run_config(k, 0).validate())
                .map_err(|e| BenchError::Config(format!("cell `{id}`: {e}")))?;
        }
        Ok(())
    }

    pub fn cell_id(&self, k: usize) -> String {
        self.cells[k].id.clone().unwrap_or_else(|| format!("cell{k}"))
    }

    pub fn model_context(&self, k: usize, system: &dyn System) -> crate::error::Result<ModelContext> {
        let cell = &self.cells[k];
        Ok(ModelContext::new(system.search_box().clone())
            .with_mh(cell.mh.clone().unwrap_or_else(|| self.mh.clone()))
            .with_combine_rule(self.combine_rule)
            .with_tasks(cell.system.tasks()))
    }

    /// Trial seeds depend on the trial only, so every cell of a trial starts
    /// from the same initial design.
    pub fn trial_seed(&self, trial: usize) -> Seed {
        Seed(self.seed).derive(&[trial as u64])
    }

    pub fn run_config(&self, k: usize, trial: usize) -> RunConfig {
        let cell = &self.cells[k];
        let mut rc = RunConfig::new(self.iterations, cell.acq, cell.fidelity.clone(), self.trial_seed(trial));
        rc.n_init = self.n_init;
        rc.optimizer = cell.optimizer.unwrap_or(self.optimizer);
        rc
    }
}
