//! Episodic evaluation, the IID–OOD gap and the head × embedding matrix.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use crate::catalog::PairingTable;
use crate::embeddings::{ContractionParams, EmbeddingSet, SyntheticBenchmark};
use crate::episodes::{sample_episodes, ClipPool, Episode, EpisodeSpec, Mode};
use crate::error::{Error, Result};
use crate::heads::{HeadConfig, Task};
use crate::stats::{mean_ci, mean_sd};

/// Episodes sampled once and shared by every head that runs on them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodeBatch {
    pub spec: EpisodeSpec,
    pub episodes: Vec<Episode>,
}

impl EpisodeBatch {
    pub fn sample(
        table: &PairingTable,
        split: &BTreeSet<String>,
        spec: &EpisodeSpec,
        pool: &ClipPool,
        count: usize,
    ) -> Result<Self> {
        Ok(EpisodeBatch { spec: *spec, episodes: sample_episodes(table, split, spec, pool, count)? })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Aggregate {
    /// Mean ± 1.96·sd/√n over all episodes.
    #[default]
    Episodes,
    /// Mean ± sd of the per-seed means.
    Seeds,
}

impl core::str::FromStr for Aggregate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "episodes" => Ok(Aggregate::Episodes),
            "seeds" => Ok(Aggregate::Seeds),
            _ => Err(Error::InvalidHyperparameter("aggregate must be `episodes` or `seeds`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    pub head: String,
    pub embedding: String,
    pub mode: Mode,
    pub n_way: usize,
    pub k_shot: usize,
    pub n_query: usize,
    pub seeds: Vec<u64>,
    pub episodes: usize,
    pub aggregate: Aggregate,
    /// Mean accuracy in percent.
    pub mean: f64,
    /// Half-width in percentage points; see [`Aggregate`].
    pub ci: f64,
    /// Per-episode accuracy in percent, in episode order.
    pub trace: Vec<f64>,
}

impl EvalReport {
    /// Assemble a report from per-episode accuracies (percent).
    pub fn from_trace(spec: &EpisodeSpec, head: &str, embedding: &str, trace: Vec<f64>) -> Result<Self> {
        let (mean, ci) = mean_ci(&trace)?;
        Ok(EvalReport {
            head: head.into(),
            embedding: embedding.into(),
            mode: spec.mode,
            n_way: spec.n_way,
            k_shot: spec.k_shot,
            n_query: spec.n_query,
            seeds: alloc::vec![spec.seed],
            episodes: trace.len(),
            aggregate: Aggregate::Episodes,
            mean,
            ci,
            trace,
        })
    }

    fn same_setup(&self, other: &EvalReport) -> bool {
        self.head == other.head
            && self.embedding == other.embedding
            && (self.n_way, self.k_shot, self.n_query) == (other.n_way, other.k_shot, other.n_query)
    }
}

/// Accuracy (percent) of `predicted` against the episode's query labels.
pub fn accuracy(ep: &Episode, predicted: &[usize]) -> f64 {
    let truth = ep.query_labels();
    if truth.is_empty() {
        return 0.0;
    }
    let hits = truth.iter().zip(predicted).filter(|(a, b)| a == b).count();
    100.0 * hits as f64 / truth.len() as f64
}

pub fn score_episode(ep: &Episode, head: &HeadConfig, emb: &EmbeddingSet) -> Result<f64> {
    let task = Task::from_episode(ep, emb)?;
    Ok(accuracy(ep, &head.classify(&task)?.labels))
}

/// Evaluate a batch with an arbitrary predictor. `predict` receives the
/// episode index, the episode and its task, and returns query labels.
pub fn run_eval_with<F>(batch: &EpisodeBatch, head: &str, embedding: &str, emb: &EmbeddingSet, mut predict: F) -> Result<EvalReport>
where
    F: FnMut(usize, &Episode, &Task) -> Result<Vec<usize>>,
{
    let trace = batch
        .episodes
        .iter()
        .enumerate()
        .map(|(i, ep)| {
            let task = Task::from_episode(ep, emb).map_err(|e| e.in_episode(i))?;
            let labels = predict(i, ep, &task).map_err(|e| e.in_episode(i))?;
            Ok(accuracy(ep, &labels))
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_trace(&batch.spec, head, embedding, trace)
}

pub fn run_eval(batch: &EpisodeBatch, head: &HeadConfig, emb: &EmbeddingSet) -> Result<EvalReport> {
    run_eval_labeled(batch, head, emb, "")
}

/// [`run_eval`] with a name recorded for the embedding set.
pub fn run_eval_labeled(batch: &EpisodeBatch, head: &HeadConfig, emb: &EmbeddingSet, embedding: &str) -> Result<EvalReport> {
    head.validate()?;
    run_eval_with(batch, &head.label(), embedding, emb, |_, _, task| Ok(head.classify(task)?.labels))
}

/// Something that can evaluate a head on a batch; lets callers supply a
/// parallel implementation.
pub trait Runner {
    fn run(&self, batch: &EpisodeBatch, head: &HeadConfig, emb: &EmbeddingSet, embedding: &str) -> Result<EvalReport>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Runner for Sequential {
    fn run(&self, batch: &EpisodeBatch, head: &HeadConfig, emb: &EmbeddingSet, embedding: &str) -> Result<EvalReport> {
        run_eval_labeled(batch, head, emb, embedding)
    }
}

/// Merge reports of the same setup run under different seeds.
pub fn combine(reports: &[EvalReport], aggregate: Aggregate) -> Result<EvalReport> {
    let first = reports.first().ok_or(Error::EmptySample)?;
    if reports.iter().any(|r| !r.same_setup(first) || r.mode != first.mode) {
        return Err(Error::IncomparableReports);
    }
    let trace: Vec<f64> = reports.iter().flat_map(|r| r.trace.iter().copied()).collect();
    let seeds: Vec<u64> = reports.iter().flat_map(|r| r.seeds.iter().copied()).collect();
    let (mean, ci) = match aggregate {
        Aggregate::Episodes => mean_ci(&trace)?,
        Aggregate::Seeds => {
            let per_seed: Vec<f64> = reports.iter().map(|r| r.mean).collect();
            mean_sd(&per_seed)?
        }
    };
    Ok(EvalReport { seeds, episodes: trace.len(), aggregate, mean, ci, trace, ..first.clone() })
}

/// Δ = IID mean − OOD mean, in percentage points.
pub fn gap_report(iid: &EvalReport, ood: &EvalReport) -> Result<f64> {
    if !iid.same_setup(ood) {
        return Err(Error::IncomparableReports);
    }
    Ok(iid.mean - ood.mean)
}

/// Δ and its half-width, treating the two means as independent.
pub fn gap_with_ci(iid: &EvalReport, ood: &EvalReport) -> Result<(f64, f64)> {
    let d = gap_report(iid, ood)?;
    Ok((d, libm::sqrt(iid.ci * iid.ci + ood.ci * ood.ci)))
}

/// Rows are heads, columns embedding sets.
pub fn head_swap_matrix<R: Runner>(
    runner: &R,
    heads: &[HeadConfig],
    sets: &[(&str, &EmbeddingSet)],
    batch: &EpisodeBatch,
) -> Result<Vec<Vec<EvalReport>>> {
    heads
        .iter()
        .enumerate()
        .map(|(r, h)| {
            sets.iter()
                .enumerate()
                .map(|(c, (name, emb))| runner.run(batch, h, emb, name).map_err(|e| e.in_cell(r, c)))
                .collect()
        })
        .collect()
}

/// Whether `values` is non-decreasing, allowing at most one adjacent drop no
/// larger than half the corresponding half-width.
pub fn trend_non_decreasing(values: &[f64], half_widths: &[f64]) -> bool {
    let mut inversions = 0;
    for i in 1..values.len() {
        let drop = values[i - 1] - values[i];
        if drop > 0.0 {
            let allowed = 0.5 * half_widths[i - 1].max(half_widths[i]);
            if drop > allowed {
                return false;
            }
            inversions += 1;
        }
    }
    inversions <= 1
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SweepPoint {
    pub strength: f64,
    pub iid: EvalReport,
    pub ood: EvalReport,
    pub delta: f64,
    pub delta_ci: f64,
}

/// Settings for a synthetic gap study.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSetup<'a> {
    pub table: &'a PairingTable,
    pub classes: &'a BTreeSet<String>,
    pub params: ContractionParams,
    /// IID spec; the OOD batch reuses it with `ood_mode`.
    pub spec: EpisodeSpec,
    pub ood_mode: Mode,
    pub episodes: usize,
    pub per_cell: usize,
}

impl SweepSetup<'_> {
    fn batches(&self, pool: &ClipPool) -> Result<(EpisodeBatch, EpisodeBatch)> {
        let iid = EpisodeSpec { mode: Mode::Iid, shared_query_background: false, ..self.spec };
        let ood = EpisodeSpec { mode: self.ood_mode, ..self.spec };
        Ok((
            EpisodeBatch::sample(self.table, self.classes, &iid, pool, self.episodes)?,
            EpisodeBatch::sample(self.table, self.classes, &ood, pool, self.episodes)?,
        ))
    }

    /// One IID/OOD comparison per head at the configured generator settings.
    pub fn gaps<R: Runner>(&self, runner: &R, heads: &[HeadConfig]) -> Result<Vec<SweepPoint>> {
        let bench = SyntheticBenchmark::build(self.params, self.table, self.classes, self.per_cell)?;
        let (iid, ood) = self.batches(&bench.pool)?;
        heads
            .iter()
            .map(|h| point(runner, self.params.bg_weight, h, &iid, &ood, &bench.embeddings))
            .collect()
    }

    /// Gap as a function of background weight β. Episodes and generator
    /// seed are shared by all points, so differences come from β alone.
    pub fn sweep<R: Runner>(&self, runner: &R, head: &HeadConfig, strengths: &[f64]) -> Result<Vec<SweepPoint>> {
        let mut batches = None;
        strengths
            .iter()
            .map(|&beta| {
                let params = ContractionParams { bg_weight: beta, ..self.params };
                let bench = SyntheticBenchmark::build(params, self.table, self.classes, self.per_cell)?;
                if batches.is_none() {
                    batches = Some(self.batches(&bench.pool)?);
                }
                let (iid, ood) = batches.as_ref().expect("sampled above");
                point(runner, beta, head, iid, ood, &bench.embeddings)
            })
            .collect()
    }
}

fn point<R: Runner>(
    runner: &R,
    strength: f64,
    head: &HeadConfig,
    iid: &EpisodeBatch,
    ood: &EpisodeBatch,
    emb: &EmbeddingSet,
) -> Result<SweepPoint> {
    let i = runner.run(iid, head, emb, "synthetic")?;
    let o = runner.run(ood, head, emb, "synthetic")?;
    let (delta, delta_ci) = gap_with_ci(&i, &o)?;
    Ok(SweepPoint { strength, iid: i, ood: o, delta, delta_ci })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{assign_splits, PairingTable, SplitMode};
    use crate::episodes::Item;
    use alloc::string::ToString;
    use alloc::vec;
    use rand::Rng;

    fn item(c: &str, fg: &str) -> Item {
        Item { clip_ref: c.into(), fg: fg.into(), bg: None }
    }

    /// Three 2-way 1-shot episodes on a line; predictions worked out by hand.
    fn fixture() -> (EpisodeBatch, EmbeddingSet) {
        let mut emb = EmbeddingSet::new(1).unwrap();
        for (c, v) in [("a0", 0.0), ("b0", 10.0), ("a1", 4.0), ("b1", 6.0), ("a2", 5.5), ("q", 5.2), ("r", 1.0)] {
            emb.insert(c, vec![v]).unwrap();
        }
        let classes = vec!["a".to_string(), "b".to_string()];
        let ep = |s: [&str; 2], q: Vec<Item>| Episode { classes: classes.clone(), support: vec![item(s[0], "a"), item(s[1], "b")], query: q };
        let episodes = vec![
            // Prototypes 0, 10: a1 (4) → a, b1 (6) → b.
            ep(["a0", "b0"], vec![item("a1", "a"), item("b1", "b")]),
            // Prototypes 4, 6: q (5.2) → b but is a; r (1) → a.
            ep(["a1", "b1"], vec![item("q", "a"), item("r", "a")]),
            // Prototypes 5.5, 10: q (5.2) → a; b1 (6) → a but is b; r → a.
            ep(["a2", "b0"], vec![item("q", "a"), item("b1", "b"), item("r", "a")]),
        ];
        let spec = EpisodeSpec { n_way: 2, k_shot: 1, n_query: 1, ..Default::default() };
        (EpisodeBatch { spec, episodes }, emb)
    }

    #[test]
    fn proto_on_hand_fixture() {
        let (batch, emb) = fixture();
        let r = run_eval(&batch, &HeadConfig::Proto, &emb).unwrap();
        assert_eq!(r.trace, vec![100.0, 50.0, 200.0 / 3.0]);
        assert!((r.mean - (100.0 + 50.0 + 200.0 / 3.0) / 3.0).abs() < 1e-12);
        assert_eq!(r.episodes, 3);
        assert!(r.ci >= 0.0);
    }

    #[test]
    fn oracle_and_missing_clips() {
        let (batch, emb) = fixture();
        let r = run_eval_with(&batch, "oracle", "", &emb, |_, ep, _| Ok(ep.query_labels())).unwrap();
        assert_eq!(r.mean, 100.0);
        let mut bad = batch.clone();
        bad.episodes[2].query[0].clip_ref = "nope".into();
        match run_eval(&bad, &HeadConfig::Proto, &emb) {
            Err(Error::Episode { index: 2, source }) => assert_eq!(*source, Error::MissingEmbedding("nope".into())),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn query_order_does_not_matter() {
        let (batch, emb) = fixture();
        let mut rev = batch.clone();
        for ep in &mut rev.episodes {
            ep.query.reverse();
        }
        assert_eq!(run_eval(&batch, &HeadConfig::Proto, &emb).unwrap().trace, run_eval(&rev, &HeadConfig::Proto, &emb).unwrap().trace);
    }

    #[test]
    fn random_guessing_sits_at_chance() {
        let table = PairingTable::standard();
        let split = assign_splits(&table, SplitMode::Canonical).unwrap().test;
        let pool = ClipPool::synthetic(&table, 12);
        let spec = EpisodeSpec { seed: 4, ..Default::default() };
        let batch = EpisodeBatch::sample(&table, &split, &spec, &pool, 2000).unwrap();
        let mut emb = EmbeddingSet::new(1).unwrap();
        for (c, _) in pool.items().map(|i| (i.clip_ref.clone(), ())) {
            emb.insert(&c, vec![1.0]).unwrap();
        }
        let r = run_eval_with(&batch, "uniform", "", &emb, |i, ep, _| {
            let mut rng = crate::rng::rng_from_seed(crate::rng::derive_seed(99, i as u64));
            Ok(ep.query.iter().map(|_| rng.random_range(0..ep.n_way())).collect())
        })
        .unwrap();
        assert!((r.mean - 20.0).abs() < 2.0, "{}", r.mean);
    }

    fn report(mean: f64, head: &str) -> EvalReport {
        let spec = EpisodeSpec::default();
        EvalReport { mean, ..EvalReport::from_trace(&spec, head, "clap", vec![mean]).unwrap() }
    }

    #[test]
    fn gaps() {
        let r = report(90.0, "proto");
        assert_eq!(gap_report(&r, &r).unwrap(), 0.0);
        assert!((gap_report(&report(95.30, "proto"), &report(86.98, "proto")).unwrap() - 8.32).abs() < 1e-9);
        assert!((gap_report(&report(97.43, "protolp"), &report(95.68, "protolp")).unwrap() - 1.75).abs() < 1e-9);
        assert_eq!(gap_report(&report(1.0, "proto"), &report(1.0, "cosine")), Err(Error::IncomparableReports));
    }

    #[test]
    fn combine_by_seed_and_episode() {
        let spec = EpisodeSpec::default();
        let a = EvalReport::from_trace(&EpisodeSpec { seed: 1, ..spec }, "proto", "", vec![80.0, 100.0]).unwrap();
        let b = EvalReport::from_trace(&EpisodeSpec { seed: 2, ..spec }, "proto", "", vec![60.0, 60.0]).unwrap();
        let s = combine(&[a.clone(), b.clone()], Aggregate::Seeds).unwrap();
        assert_eq!((s.mean, s.seeds.clone(), s.episodes), (75.0, vec![1, 2], 4));
        assert!((s.ci - libm::sqrt(450.0)).abs() < 1e-12);
        let e = combine(&[a, b], Aggregate::Episodes).unwrap();
        assert_eq!(e.mean, 75.0);
        assert_eq!(e.aggregate, Aggregate::Episodes);
    }

    #[test]
    fn matrix_shape_and_errors() {
        let (batch, emb) = fixture();
        let heads = [HeadConfig::Proto, HeadKind::Linear.default_config()];
        let m = head_swap_matrix(&Sequential, &heads, &[("x", &emb), ("y", &emb)], &batch).unwrap();
        assert_eq!((m.len(), m[0].len()), (2, 2));
        assert_eq!(m[0][0].trace, run_eval(&batch, &HeadConfig::Proto, &emb).unwrap().trace);
        let empty = EmbeddingSet::new(1).unwrap();
        match head_swap_matrix(&Sequential, &heads, &[("x", &emb), ("y", &empty)], &batch) {
            Err(Error::Cell { row: 0, col: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    use crate::heads::HeadKind;

    #[test]
    fn trend_rule() {
        assert!(trend_non_decreasing(&[0.0, 1.0, 2.0, 3.0], &[1.0; 4]));
        assert!(trend_non_decreasing(&[0.0, 1.0, 0.8, 3.0], &[1.0; 4]));
        assert!(!trend_non_decreasing(&[0.0, 1.0, 0.4, 3.0], &[1.0; 4]));
        assert!(!trend_non_decreasing(&[0.0, 1.0, 0.8, 0.6], &[1.0; 4]));
    }

    #[test]
    fn rerun_is_bit_exact() {
        let table = PairingTable::standard();
        let split = assign_splits(&table, SplitMode::Canonical).unwrap().test;
        let setup = SweepSetup {
            table: &table,
            classes: &split,
            params: ContractionParams { dim: 32, ..Default::default() },
            spec: EpisodeSpec { seed: 7, ..Default::default() },
            ood_mode: Mode::Ood,
            episodes: 30,
            per_cell: 12,
        };
        let a = setup.gaps(&Sequential, &[HeadConfig::Proto]).unwrap();
        let b = setup.gaps(&Sequential, &[HeadConfig::Proto]).unwrap();
        assert_eq!(a, b);
    }
}
