//! Episode-level parallelism over a rayon pool.
//!
//! Results are collected in episode order and the first failing episode by
//! index is reported, so output never depends on the number of workers.

use std::collections::BTreeSet;

use rayon::prelude::*;
use rayon::ThreadPool;
use spurbench_core::catalog::PairingTable;
use spurbench_core::embeddings::EmbeddingSet;
use spurbench_core::episodes::{sample_episode, ClipPool, EpisodeSpec};
use spurbench_core::eval::{score_episode, EpisodeBatch, EvalReport, Runner};
use spurbench_core::heads::HeadConfig;
use spurbench_core::{Error, Result};

pub struct Parallel {
    pool: ThreadPool,
}

impl Parallel {
    /// `jobs == 0` uses one worker per logical core.
    pub fn new(jobs: usize) -> anyhow::Result<Self> {
        Ok(Parallel { pool: rayon::ThreadPoolBuilder::new().num_threads(jobs).build()? })
    }

    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.pool.install(f)
    }

    pub fn sample(
        &self,
        table: &PairingTable,
        split: &BTreeSet<String>,
        spec: &EpisodeSpec,
        pool: &ClipPool,
        count: usize,
    ) -> Result<EpisodeBatch> {
        let results: Vec<Result<_>> = self.pool.install(|| {
            (0..count)
                .into_par_iter()
                .map(|i| sample_episode(table, split, &spec.for_index(i as u64), pool).map_err(|e| e.in_episode(i)))
                .collect()
        });
        Ok(EpisodeBatch { spec: *spec, episodes: results.into_iter().collect::<Result<_>>()? })
    }
}

impl Runner for Parallel {
    fn run(&self, batch: &EpisodeBatch, head: &HeadConfig, emb: &EmbeddingSet, embedding: &str) -> Result<EvalReport> {
        head.validate()?;
        let results: Vec<Result<f64>> = self.pool.install(|| {
            batch
                .episodes
                .par_iter()
                .enumerate()
                .map(|(i, ep)| score_episode(ep, head, emb).map_err(|e| e.in_episode(i)))
                .collect()
        });
        let trace = results.into_iter().collect::<Result<Vec<_>, Error>>()?;
        EvalReport::from_trace(&batch.spec, &head.label(), embedding, trace)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use spurbench_core::catalog::{assign_splits, SplitMode};
    use spurbench_core::embeddings::{ContractionParams, SyntheticBenchmark};
    use spurbench_core::eval::{run_eval_labeled, Sequential};
    use spurbench_core::heads::HeadKind;

    #[test]
    fn matches_sequential_for_any_worker_count() {
        let table = PairingTable::standard();
        let split = assign_splits(&table, SplitMode::Canonical).unwrap().test;
        let params = ContractionParams { dim: 24, ..Default::default() };
        let bench = SyntheticBenchmark::build(params, &table, &split, 10).unwrap();
        let spec = EpisodeSpec { seed: 3, ..Default::default() };
        let seq = EpisodeBatch::sample(&table, &split, &spec, &bench.pool, 40).unwrap();
        for jobs in [1, 3] {
            let par = Parallel::new(jobs).unwrap();
            let batch = par.sample(&table, &split, &spec, &bench.pool, 40).unwrap();
            assert_eq!(batch, seq);
            for h in [HeadConfig::Proto, HeadKind::ProtoLp.default_config()] {
                let a = par.run(&batch, &h, &bench.embeddings, "s").unwrap();
                let b = Sequential.run(&batch, &h, &bench.embeddings, "s").unwrap();
                assert_eq!(a, b);
                assert_eq!(b, run_eval_labeled(&batch, &h, &bench.embeddings, "s").unwrap());
            }
        }
    }
}
