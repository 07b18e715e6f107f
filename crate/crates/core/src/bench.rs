//! The desk benchmark used for ablations: a harder synthetic dataset and a
//! short training budget, so that design choices move the metrics.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic, SynthConfig};
use crate::error::Result;
use crate::eval::EvalReport;
use crate::losses::LossConfig;
use crate::train::{train, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Benchmark {
    pub synth: SynthConfig,
    pub train: TrainConfig,
}

impl Default for Benchmark {
    fn default() -> Self {
        Benchmark {
            synth: SynthConfig {
                num_ids: 16,
                per_id: 8,
                colors: 3,
                noise: 0.3,
                max_shift: 6,
                ..SynthConfig::default()
            },
            train: TrainConfig {
                total_epochs: 10,
                decay_epochs: vec![],
                eval_every: 0,
                ..TrainConfig::desk()
            },
        }
    }
}

impl Benchmark {
    pub fn with_ca(mut self, on: bool) -> Self {
        self.train.collaborative_attention = on;
        self
    }

    pub fn with_losses(mut self, l: &LossConfig) -> Self {
        let t = &mut self.train;
        t.use_ce = l.use_ce;
        t.use_triplet = l.use_triplet;
        t.use_center = l.use_center;
        t.supervise_local = l.supervise_local;
        self
    }

    /// One run: the dataset and the model both derive from `seed`.
    pub fn run(&self, seed: u64, scratch: &Path) -> Result<EvalReport> {
        let data = scratch.join(format!("bench_data_{seed}"));
        let manifest = generate_synthetic(&SynthConfig { seed, ..self.synth.clone() }, &data)?;
        let cfg = TrainConfig { seed, ..self.train.clone() };
        let out = train(&cfg, &manifest, None)?;
        Ok(out.log.final_report().cloned().expect("benchmark data has query and gallery"))
    }

    /// Mean mAP and rank-1 over `seeds`, plus the per-seed reports.
    pub fn run_seeds(&self, seeds: &[u64], scratch: &Path) -> Result<(f64, f64, Vec<EvalReport>)> {
        let reports = seeds.iter().map(|&s| self.run(s, scratch)).collect::<Result<Vec<_>>>()?;
        let n = reports.len().max(1) as f64;
        let map = reports.iter().map(|r| r.map).sum::<f64>() / n;
        let r1 = reports.iter().map(|r| r.rank1()).sum::<f64>() / n;
        Ok((map, r1, reports))
    }
}
