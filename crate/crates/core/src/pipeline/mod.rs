//! End to end driver: match graph, skeleton and clusters, parallel
//! reconstruction, merging, plus synthetic data and evaluation.

mod eval;
mod run;
mod synth;

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::IoError;

pub use eval::{evaluate, EvalMetrics};
pub use run::{
    build_tcn, engine_options, merge_options, run_monolithic, run_on, run_pipeline, strategy_csv, ClusterRun, MonolithicOutput, PipelineOutput, Tcn,
};
pub use synth::{generate_synthetic, load_dataset, CameraPattern, LoadedDataset, SynthConfig, SyntheticDataset};

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "PARSFM_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    TcnConstruction,
    WcdsExtraction,
    Clustering,
    ParallelReconstruction,
    ClusterMerging,
    Georeferencing,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::TcnConstruction => "TCNConstruction",
            Stage::WcdsExtraction => "WCDSExtraction",
            Stage::Clustering => "Clustering",
            Stage::ParallelReconstruction => "ParallelReconstruction",
            Stage::ClusterMerging => "ClusterMerging",
            Stage::Georeferencing => "Georeferencing",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{stage}: {message}")]
    Stage { stage: Stage, message: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

impl PipelineError {
    pub(crate) fn at(stage: Stage, message: impl fmt::Display) -> Self {
        PipelineError::Stage { stage, message: message.to_string() }
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            PipelineError::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchingMode {
    /// Supplied matches when the dataset has any, retrieval otherwise.
    Auto,
    Supplied,
    Retrieval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Edge weight ratio between match count and hull coverage.
    pub r_ew: f64,
    /// Vertex weight ratio between neighbour count and edge weight.
    pub r_vw: f64,
    pub min_matches: usize,
    /// Largest-scale features per image used for retrieval.
    pub index_features: usize,
    pub top_k: usize,
    pub cluster_max_size: usize,
    pub worker_count: usize,
    pub merge_threshold_px: f64,
    pub rng_seed: u64,
    pub matching: MatchingMode,
    pub vocab_branching: usize,
    pub vocab_depth: usize,
    pub dataset: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

/// Worker count from [`WORKERS_ENV`], else the number of available cores.
pub fn default_worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n: &usize| n >= 1)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            r_ew: 0.5,
            r_vw: 0.5,
            min_matches: 50,
            index_features: 1500,
            top_k: 100,
            cluster_max_size: 100,
            worker_count: default_worker_count(),
            merge_threshold_px: 1.8,
            rng_seed: 0,
            matching: MatchingMode::Auto,
            vocab_branching: 10,
            vocab_depth: 3,
            dataset: None,
            output: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        for (name, v) in [("r_ew", self.r_ew), ("r_vw", self.r_vw)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(PipelineError::Config(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        for (name, v) in [
            ("min_matches", self.min_matches),
            ("index_features", self.index_features),
            ("top_k", self.top_k),
            ("worker_count", self.worker_count),
            ("vocab_branching", self.vocab_branching),
            ("vocab_depth", self.vocab_depth),
        ] {
            if v < 1 {
                return Err(PipelineError::Config(format!("{name} must be at least 1")));
            }
        }
        if self.cluster_max_size < 2 {
            return Err(PipelineError::Config("cluster_max_size must be at least 2".into()));
        }
        if !(self.merge_threshold_px > 0.0) {
            return Err(PipelineError::Config("merge_threshold_px must be positive".into()));
        }
        Ok(())
    }
}
