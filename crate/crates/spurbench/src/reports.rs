//! CSV and JSON report writers.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use spurbench_core::eval::{EvalReport, SweepPoint};
use spurbench_core::geometry::{DistributionReport, GeometryReport};

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))
}

fn join_seeds(seeds: &[u64]) -> String {
    seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(";")
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    head: &'a str,
    embedding: &'a str,
    mode: &'a str,
    n_way: usize,
    k_shot: usize,
    n_query: usize,
    episodes: usize,
    seeds: String,
    aggregate: &'a str,
    mean_acc: f64,
    ci: f64,
}

/// One row per report.
pub fn write_eval_csv(path: &Path, reports: &[EvalReport]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in reports {
        w.serialize(SummaryRow {
            head: &r.head,
            embedding: &r.embedding,
            mode: r.mode.as_str(),
            n_way: r.n_way,
            k_shot: r.k_shot,
            n_query: r.n_query,
            episodes: r.episodes,
            seeds: join_seeds(&r.seeds),
            aggregate: match r.aggregate {
                spurbench_core::eval::Aggregate::Episodes => "episodes",
                spurbench_core::eval::Aggregate::Seeds => "seeds",
            },
            mean_acc: r.mean,
            ci: r.ci,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct TraceRow<'a> {
    head: &'a str,
    embedding: &'a str,
    mode: &'a str,
    episode: usize,
    accuracy: f64,
}

/// Per-episode accuracies, long format.
pub fn write_trace_csv(path: &Path, reports: &[EvalReport]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in reports {
        for (episode, &accuracy) in r.trace.iter().enumerate() {
            w.serialize(TraceRow { head: &r.head, embedding: &r.embedding, mode: r.mode.as_str(), episode, accuracy })?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct GapRow {
    pub head: String,
    pub embedding: String,
    pub ood_mode: String,
    pub iid_acc: f64,
    pub iid_ci: f64,
    pub ood_acc: f64,
    pub ood_ci: f64,
    pub delta: f64,
    pub delta_ci: f64,
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Heads down, embedding sets across; cells are mean accuracy. A second
/// file in long format carries the half-widths.
pub fn write_matrix_csv(path: &Path, long_path: &Path, sets: &[String], matrix: &[Vec<EvalReport>]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["head".to_string()];
    header.extend(sets.iter().cloned());
    w.write_record(&header)?;
    for row in matrix {
        let mut rec = vec![row.first().map(|r| r.head.clone()).unwrap_or_default()];
        rec.extend(row.iter().map(|r| r.mean.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    let long: Vec<EvalReport> = matrix.iter().flatten().cloned().collect();
    write_eval_csv(long_path, &long)
}

#[derive(Serialize)]
struct SweepRow {
    strength: f64,
    delta: f64,
    delta_ci: f64,
    iid_acc: f64,
    ood_acc: f64,
}

pub fn write_sweep_csv(path: &Path, points: &[SweepPoint]) -> Result<()> {
    let rows: Vec<SweepRow> = points
        .iter()
        .map(|p| SweepRow { strength: p.strength, delta: p.delta, delta_ci: p.delta_ci, iid_acc: p.iid.mean, ood_acc: p.ood.mean })
        .collect();
    write_rows(path, &rows)
}

/// Magnitude and angular statistics per condition, one row each.
#[derive(Serialize)]
struct GeometryRow<'a> {
    condition: &'a str,
    n_clean: usize,
    n_mixed: usize,
    clean_mag: f64,
    clean_mag_ci: f64,
    mixed_mag: f64,
    mixed_mag_ci: f64,
    mag_p: f64,
    clean_cos: f64,
    mixed_cos: f64,
    diff: f64,
    cos_p: f64,
}

pub fn write_geometry_csv(path: &Path, rows: &[(String, GeometryReport)]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for (condition, g) in rows {
        w.serialize(GeometryRow {
            condition,
            n_clean: g.n_clean,
            n_mixed: g.n_mixed,
            clean_mag: g.clean_mag_mean,
            clean_mag_ci: g.clean_mag_ci,
            mixed_mag: g.mixed_mag_mean,
            mixed_mag_ci: g.mixed_mag_ci,
            mag_p: g.mag_p,
            clean_cos: g.clean_cos_mean,
            mixed_cos: g.mixed_cos_mean,
            diff: g.cos_diff,
            cos_p: g.cos_p,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct DistributionRow<'a> {
    comparison: &'a str,
    mmd: f64,
    mmd_raw: f64,
    centroid_cosine: f64,
    bandwidth: f64,
}

pub fn write_distribution_csv(path: &Path, rows: &[(String, DistributionReport)]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for (comparison, d) in rows {
        w.serialize(DistributionRow {
            comparison,
            mmd: d.mmd,
            mmd_raw: d.mmd_raw,
            centroid_cosine: d.centroid_cosine,
            bandwidth: d.bandwidth,
        })?;
    }
    w.flush()?;
    Ok(())
}
