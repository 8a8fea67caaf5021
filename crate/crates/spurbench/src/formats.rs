//! Tab-separated manifests and the binary embedding blob.
//!
//! See `docs/formats.md` for the layouts.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use spurbench_core::catalog::{PairingTable, Split, SplitAssignment};
use spurbench_core::embeddings::{EmbeddingSet, Frames};
use spurbench_core::episodes::{ClipPool, Episode, Item};

pub const NONE: &str = "-";

fn tsv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))
}

fn tsv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::WriterBuilder::new().delimiter(b'\t').from_path(path).with_context(|| format!("writing {}", path.display()))
}

fn opt(s: &str) -> Option<String> {
    (s != NONE).then(|| s.to_string())
}

fn or_none(s: &Option<String>) -> &str {
    s.as_deref().unwrap_or(NONE)
}

/// Any serializable rows as a headed TSV file.
pub fn write_tsv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = tsv_writer(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tsv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = tsv_reader(path)?;
    r.deserialize().collect::<Result<_, _>>().with_context(|| path.display().to_string())
}

pub fn read_table(path: &Path) -> Result<PairingTable> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    PairingTable::parse(&text).with_context(|| path.display().to_string())
}

// ---------------------------------------------------------------- pool

#[derive(Debug, Serialize, Deserialize)]
struct PoolRow {
    clip_ref: String,
    fg: String,
    bg: String,
}

pub fn write_pool<'a, I: IntoIterator<Item = &'a Item>>(path: &Path, items: I) -> Result<()> {
    let mut w = tsv_writer(path)?;
    for i in items {
        w.serialize(PoolRow { clip_ref: i.clip_ref.clone(), fg: i.fg.clone(), bg: or_none(&i.bg).into() })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pool(path: &Path) -> Result<ClipPool> {
    let mut pool = ClipPool::new();
    for (n, row) in tsv_reader(path)?.deserialize::<PoolRow>().enumerate() {
        let row = row.with_context(|| format!("{} row {}", path.display(), n + 1))?;
        pool.insert(&row.clip_ref, &row.fg, opt(&row.bg).as_deref())?;
    }
    Ok(pool)
}

// ---------------------------------------------------------------- splits

#[derive(Debug, Serialize, Deserialize)]
struct SplitRow {
    class: String,
    split: String,
}

pub fn write_splits(path: &Path, s: &SplitAssignment) -> Result<()> {
    let mut w = tsv_writer(path)?;
    for split in [Split::Train, Split::Val, Split::Test] {
        for c in s.get(split) {
            w.serialize(SplitRow { class: c.clone(), split: split.as_str().into() })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_splits(path: &Path) -> Result<SplitAssignment> {
    let mut s = SplitAssignment { train: Default::default(), val: Default::default(), test: Default::default() };
    for row in tsv_reader(path)?.deserialize::<SplitRow>() {
        let row = row?;
        let split: Split = row.split.parse().map_err(|e| anyhow!("{}: {e}", path.display()))?;
        match split {
            Split::Train => s.train.insert(row.class),
            Split::Val => s.val.insert(row.class),
            Split::Test => s.test.insert(row.class),
        };
    }
    Ok(s)
}

// ---------------------------------------------------------------- episodes

#[derive(Debug, Serialize, Deserialize)]
struct EpisodeRow {
    episode: usize,
    role: String,
    clip_ref: String,
    fg: String,
    bg: String,
}

pub fn write_episodes(path: &Path, episodes: &[Episode]) -> Result<()> {
    let mut w = tsv_writer(path)?;
    for (e, ep) in episodes.iter().enumerate() {
        for c in &ep.classes {
            w.serialize(EpisodeRow { episode: e, role: "class".into(), clip_ref: NONE.into(), fg: c.clone(), bg: NONE.into() })?;
        }
        for (role, items) in [("support", &ep.support), ("query", &ep.query)] {
            for i in items {
                w.serialize(EpisodeRow {
                    episode: e,
                    role: role.into(),
                    clip_ref: i.clip_ref.clone(),
                    fg: i.fg.clone(),
                    bg: or_none(&i.bg).into(),
                })?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_episodes(path: &Path) -> Result<Vec<Episode>> {
    let mut by_index: BTreeMap<usize, Episode> = BTreeMap::new();
    for (n, row) in tsv_reader(path)?.deserialize::<EpisodeRow>().enumerate() {
        let row = row.with_context(|| format!("{} row {}", path.display(), n + 1))?;
        let ep = by_index.entry(row.episode).or_insert_with(|| Episode { classes: vec![], support: vec![], query: vec![] });
        let item = || Item { clip_ref: row.clip_ref.clone(), fg: row.fg.clone(), bg: opt(&row.bg) };
        match row.role.as_str() {
            "class" => ep.classes.push(row.fg.clone()),
            "support" => ep.support.push(item()),
            "query" => ep.query.push(item()),
            other => bail!("{} row {}: unknown role `{other}`", path.display(), n + 1),
        }
    }
    let episodes: Vec<Episode> = by_index.into_values().collect();
    for (e, ep) in episodes.iter().enumerate() {
        if let Some(bad) = ep.support.iter().chain(&ep.query).find(|i| ep.label(i).is_none()) {
            bail!("{}: episode {e} item `{}` has class `{}` not listed for the episode", path.display(), bad.clip_ref, bad.fg);
        }
    }
    Ok(episodes)
}

// ---------------------------------------------------------------- embeddings

#[derive(Debug, Serialize, Deserialize)]
struct EmbeddingRow {
    clip_ref: String,
    offset: u64,
    dim: usize,
    n_frames: usize,
    frame_dim: usize,
}

/// The blob sits next to the manifest with extension `f32`.
pub fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("f32")
}

pub fn write_embeddings(manifest: &Path, set: &EmbeddingSet) -> Result<()> {
    let mut rows = tsv_writer(manifest)?;
    let blob = fs::File::create(blob_path(manifest))?;
    let mut blob = BufWriter::new(blob);
    let mut offset = 0u64;
    for (clip, v) in set.iter() {
        let frames = set.frames(clip);
        rows.serialize(EmbeddingRow {
            clip_ref: clip.into(),
            offset,
            dim: v.len(),
            n_frames: frames.map_or(0, |f| f.n_frames),
            frame_dim: frames.map_or(0, |f| f.dim),
        })?;
        for x in v.iter().chain(frames.map(|f| f.data.as_slice()).unwrap_or(&[])) {
            blob.write_all(&x.to_le_bytes())?;
            offset += 1;
        }
    }
    rows.flush()?;
    blob.flush()?;
    Ok(())
}

pub fn read_embeddings(manifest: &Path) -> Result<EmbeddingSet> {
    let bytes = fs::read(blob_path(manifest)).with_context(|| format!("reading {}", blob_path(manifest).display()))?;
    if bytes.len() % 4 != 0 {
        bail!("{}: length is not a multiple of 4", blob_path(manifest).display());
    }
    let floats: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    let mut set: Option<EmbeddingSet> = None;
    for (n, row) in tsv_reader(manifest)?.deserialize::<EmbeddingRow>().enumerate() {
        let row = row.with_context(|| format!("{} row {}", manifest.display(), n + 1))?;
        let start = row.offset as usize;
        let end = start + row.dim + row.n_frames * row.frame_dim;
        if end > floats.len() {
            bail!("{} row {}: span {start}..{end} exceeds blob of {} floats", manifest.display(), n + 1, floats.len());
        }
        let set = match &mut set {
            Some(s) => s,
            None => set.insert(EmbeddingSet::new(row.dim)?),
        };
        set.insert(&row.clip_ref, floats[start..start + row.dim].to_vec())?;
        if row.n_frames > 0 {
            let data = floats[start + row.dim..end].to_vec();
            set.insert_frames(&row.clip_ref, Frames { n_frames: row.n_frames, dim: row.frame_dim, data })?;
        }
    }
    set.ok_or_else(|| anyhow!("{}: no embeddings", manifest.display()))
}
