//! Embedding sets and the synthetic magnitude-contraction generator.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::catalog::PairingTable;
use crate::episodes::{ClipPool, Episode, Item};
use crate::rng::{derive_seed, fnv1a, rng_from_seed};
use crate::{Error, Result};

/// Frame-level descriptors of one clip, row-major `n_frames x dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frames {
    pub n_frames: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl Frames {
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Clip identifier to global vector, plus optional frame descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    global: BTreeMap<String, Vec<f32>>,
    frames: BTreeMap<String, Frames>,
    frame_dim: Option<usize>,
}

fn check_finite(clip: &str, v: &[f32]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteEmbedding(clip.into()))
    }
}

impl EmbeddingSet {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidModel("dim must be positive"));
        }
        Ok(EmbeddingSet { dim, global: BTreeMap::new(), frames: BTreeMap::new(), frame_dim: None })
    }

    pub fn insert(&mut self, clip: &str, v: Vec<f32>) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch { clip: clip.into(), expected: self.dim, found: v.len() });
        }
        check_finite(clip, &v)?;
        if self.global.contains_key(clip) {
            return Err(Error::DuplicateClip(clip.into()));
        }
        self.global.insert(clip.into(), v);
        Ok(())
    }

    pub fn insert_frames(&mut self, clip: &str, frames: Frames) -> Result<()> {
        if frames.n_frames == 0 || frames.dim == 0 {
            return Err(Error::EmptyFrames(clip.into()));
        }
        if frames.data.len() != frames.n_frames * frames.dim {
            return Err(Error::DimensionMismatch {
                clip: clip.into(),
                expected: frames.n_frames * frames.dim,
                found: frames.data.len(),
            });
        }
        if let Some(d) = self.frame_dim {
            if d != frames.dim {
                return Err(Error::DimensionMismatch { clip: clip.into(), expected: d, found: frames.dim });
            }
        }
        check_finite(clip, &frames.data)?;
        if self.frames.contains_key(clip) {
            return Err(Error::DuplicateClip(clip.into()));
        }
        self.frame_dim = Some(frames.dim);
        self.frames.insert(clip.into(), frames);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame_dim(&self) -> Option<usize> {
        self.frame_dim
    }

    pub fn len(&self) -> usize {
        self.global.len()
    }

    pub fn is_empty(&self) -> bool {
        self.global.is_empty()
    }

    pub fn get(&self, clip: &str) -> Option<&[f32]> {
        self.global.get(clip).map(Vec::as_slice)
    }

    pub fn frames(&self, clip: &str) -> Option<&Frames> {
        self.frames.get(clip)
    }

    pub fn has_frames(&self) -> bool {
        !self.frames.is_empty()
    }

    /// Clip identifiers in sorted order.
    pub fn clips(&self) -> impl Iterator<Item = &str> {
        self.global.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.global.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn global_f64(&self, clip: &str) -> Result<Vec<f64>> {
        self.get(clip)
            .map(|v| v.iter().map(|&x| f64::from(x)).collect())
            .ok_or_else(|| Error::MissingEmbedding(clip.into()))
    }

    pub fn frames_f64(&self, clip: &str) -> Result<Vec<Vec<f64>>> {
        let f = self.frames(clip).ok_or_else(|| Error::NoLocalDescriptors(clip.into()))?;
        Ok((0..f.n_frames).map(|i| f.row(i).iter().map(|&x| f64::from(x)).collect()).collect())
    }

    /// Errors with the first clip of `ep` lacking a global vector.
    pub fn covers(&self, ep: &Episode) -> Result<()> {
        for it in ep.support.iter().chain(&ep.query) {
            if !self.global.contains_key(&it.clip_ref) {
                return Err(Error::MissingEmbedding(it.clip_ref.clone()));
            }
        }
        Ok(())
    }
}

/// Parameters of the synthetic generator. Magnitudes are in embedding-norm
/// units.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ContractionParams {
    pub dim: usize,
    /// Per-coordinate standard deviation of the isotropic direction noise.
    pub angular_noise: f64,
    /// Weight of the background direction in mixed items.
    pub bg_weight: f64,
    pub clean_mag_mean: f64,
    pub clean_mag_std: f64,
    pub mixed_mag_mean: f64,
    pub mixed_mag_std: f64,
    /// Half-width `s` of the per-background magnitude multipliers, which are
    /// spread evenly over `[1 - s, 1 + s]` and assigned to backgrounds by a
    /// seeded shuffle. Zero gives every background the same magnitude law.
    pub bg_mag_spread: f64,
    /// Local descriptors generated per clip; zero disables them.
    pub frames_per_clip: usize,
    pub seed: u64,
}

impl Default for ContractionParams {
    fn default() -> Self {
        ContractionParams {
            dim: 128,
            angular_noise: 0.0327,
            bg_weight: 0.02,
            clean_mag_mean: 83.26,
            clean_mag_std: 5.0,
            mixed_mag_mean: 58.69,
            mixed_mag_std: 5.0,
            bg_mag_spread: 0.85,
            frames_per_clip: 0,
            seed: 0,
        }
    }
}

impl ContractionParams {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |x: f64| x.is_finite() && x >= 0.0;
        if self.dim == 0 {
            return Err(Error::InvalidModel("dim must be positive"));
        }
        if !finite_nonneg(self.angular_noise) {
            return Err(Error::InvalidModel("angular_noise must be >= 0"));
        }
        if !finite_nonneg(self.bg_weight) {
            return Err(Error::InvalidModel("bg_weight must be >= 0"));
        }
        if !(self.clean_mag_mean.is_finite() && self.clean_mag_mean > 0.0)
            || !(self.mixed_mag_mean.is_finite() && self.mixed_mag_mean > 0.0)
        {
            return Err(Error::InvalidModel("magnitude means must be > 0"));
        }
        if !finite_nonneg(self.clean_mag_std) || !finite_nonneg(self.mixed_mag_std) {
            return Err(Error::InvalidModel("magnitude stds must be >= 0"));
        }
        if self.mixed_mag_mean > self.clean_mag_mean {
            return Err(Error::InvalidModel("mixed_mag_mean must not exceed clean_mag_mean"));
        }
        if !(self.bg_mag_spread.is_finite() && (0.0..1.0).contains(&self.bg_mag_spread)) {
            return Err(Error::InvalidModel("bg_mag_spread must be in [0, 1)"));
        }
        Ok(())
    }
}

/// A fitted generator: unit directions for every class and background plus
/// the per-background magnitude multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractionModel {
    pub params: ContractionParams,
    classes: BTreeMap<String, usize>,
    backgrounds: BTreeMap<String, usize>,
    class_dirs: Vec<Vec<f64>>,
    bg_dirs: Vec<Vec<f64>>,
    bg_scale: Vec<f64>,
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit_vectors(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    let orthonormal = n <= dim;
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(n);
    while out.len() < n {
        let mut v = gaussian_vec(rng, dim);
        if orthonormal {
            // Gram-Schmidt, applied twice for numerical orthogonality.
            for _ in 0..2 {
                for u in &out {
                    let p = crate::math::dot(&v, u);
                    for (x, y) in v.iter_mut().zip(u) {
                        *x -= p * y;
                    }
                }
            }
        }
        if let Some(u) = crate::math::normalized(&v) {
            if crate::math::norm(&v) > 1e-6 {
                out.push(u);
            }
        }
    }
    out
}

impl ContractionModel {
    /// Directions are mutually orthonormal when `dim` is at least the number
    /// of classes plus backgrounds, random unit vectors otherwise.
    pub fn new<C, B>(params: ContractionParams, classes: C, backgrounds: B) -> Result<Self>
    where
        C: IntoIterator,
        C::Item: Into<String>,
        B: IntoIterator,
        B::Item: Into<String>,
    {
        params.validate()?;
        let classes: BTreeSet<String> = classes.into_iter().map(Into::into).collect();
        let backgrounds: BTreeSet<String> = backgrounds.into_iter().map(Into::into).collect();
        let mut rng = rng_from_seed(derive_seed(params.seed, 0x6469_7273));
        let nc = classes.len();
        let dirs = unit_vectors(&mut rng, nc + backgrounds.len(), params.dim);
        let (class_dirs, bg_dirs) = dirs.split_at(nc);

        let nb = backgrounds.len();
        let s = params.bg_mag_spread;
        let mut bg_scale: Vec<f64> = (0..nb)
            .map(|i| if nb < 2 { 1.0 } else { 1.0 - s + 2.0 * s * i as f64 / (nb - 1) as f64 })
            .collect();
        {
            use rand::seq::SliceRandom;
            bg_scale.shuffle(&mut rng);
        }

        Ok(ContractionModel {
            params,
            classes: classes.into_iter().enumerate().map(|(i, c)| (c, i)).collect(),
            backgrounds: backgrounds.into_iter().enumerate().map(|(i, b)| (b, i)).collect(),
            class_dirs: class_dirs.to_vec(),
            bg_dirs: bg_dirs.to_vec(),
            bg_scale,
        })
    }

    /// A model over every foreground and background class of a table.
    pub fn for_table(params: ContractionParams, table: &PairingTable) -> Result<Self> {
        Self::new(params, table.classes(), table.background_classes())
    }

    pub fn class_direction(&self, class: &str) -> Option<&[f64]> {
        self.classes.get(class).map(|&i| self.class_dirs[i].as_slice())
    }

    pub fn background_direction(&self, bg: &str) -> Option<&[f64]> {
        self.backgrounds.get(bg).map(|&i| self.bg_dirs[i].as_slice())
    }

    /// Magnitude multiplier applied to the mixed-magnitude mean for `bg`.
    pub fn background_scale(&self, bg: &str) -> Option<f64> {
        self.backgrounds.get(bg).map(|&i| self.bg_scale[i])
    }

    fn truncated_normal(rng: &mut ChaCha8Rng, mean: f64, std: f64) -> f64 {
        if std == 0.0 {
            return mean;
        }
        // mean > 0, so each draw is accepted with probability above 1/2.
        loop {
            let z: f64 = StandardNormal.sample(rng);
            let r = mean + std * z;
            if r > 0.0 {
                return r;
            }
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng, fg: usize, bg: Option<usize>) -> Vec<f64> {
        let p = &self.params;
        let mut v = self.class_dirs[fg].clone();
        if let Some(b) = bg {
            for (x, y) in v.iter_mut().zip(&self.bg_dirs[b]) {
                *x += p.bg_weight * y;
            }
        }
        if p.angular_noise > 0.0 {
            for x in v.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *x += p.angular_noise * z;
            }
        }
        let r = match bg {
            None => Self::truncated_normal(rng, p.clean_mag_mean, p.clean_mag_std),
            Some(b) => Self::truncated_normal(rng, p.mixed_mag_mean * self.bg_scale[b], p.mixed_mag_std),
        };
        let n = crate::math::norm(&v);
        // A zero pre-normalisation vector has probability zero; fall back to
        // the class direction rather than emit NaN.
        if n == 0.0 {
            return self.class_dirs[fg].iter().map(|x| r * x).collect();
        }
        v.iter().map(|x| r * x / n).collect()
    }

    /// One item's global vector and frames from its own random stream,
    /// keyed by clip identifier.
    pub fn sample_item(&self, item: &Item) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let fg = *self.classes.get(&item.fg).ok_or_else(|| Error::UnknownClass(item.fg.clone()))?;
        let bg = match &item.bg {
            None => None,
            Some(b) => Some(*self.backgrounds.get(b).ok_or_else(|| Error::UnknownClass(b.clone()))?),
        };
        let mut rng = rng_from_seed(derive_seed(self.params.seed, fnv1a(item.clip_ref.as_bytes())));
        let global = self.draw(&mut rng, fg, bg);
        let frames = (0..self.params.frames_per_clip).map(|_| self.draw(&mut rng, fg, bg)).collect();
        Ok((global, frames))
    }
}

/// Generates vectors for `items`; an item without background is a clean
/// (foreground-only) clip.
pub fn synth_embeddings<'a, I>(model: &ContractionModel, items: I) -> Result<EmbeddingSet>
where
    I: IntoIterator<Item = &'a Item>,
{
    let mut set = EmbeddingSet::new(model.params.dim)?;
    for item in items {
        let (g, frames) = model.sample_item(item)?;
        set.insert(&item.clip_ref, g.iter().map(|&x| x as f32).collect())?;
        if !frames.is_empty() {
            let data = frames.iter().flatten().map(|&x| x as f32).collect();
            set.insert_frames(&item.clip_ref, Frames { n_frames: frames.len(), dim: model.params.dim, data })?;
        }
    }
    Ok(set)
}

/// A clip pool plus matching synthetic embeddings for the given classes.
#[derive(Debug, Clone)]
pub struct SyntheticBenchmark {
    pub model: ContractionModel,
    pub pool: ClipPool,
    pub embeddings: EmbeddingSet,
}

impl SyntheticBenchmark {
    /// `per_cell` clips for every `(class, background)` cell and as many
    /// clean clips per class, restricted to `classes`.
    pub fn build(
        params: ContractionParams,
        table: &PairingTable,
        classes: &BTreeSet<String>,
        per_cell: usize,
    ) -> Result<Self> {
        let model = ContractionModel::for_table(params, table)?;
        let full = ClipPool::synthetic(table, per_cell);
        let items: Vec<Item> = full.items().filter(|i| classes.contains(&i.fg)).collect();
        let pool = ClipPool::from_items(&items)?;
        let embeddings = synth_embeddings(&model, &items)?;
        Ok(SyntheticBenchmark { model, pool, embeddings })
    }
}

/// `n` vectors for one class under one condition (`bg = None` is clean).
/// Identifiers are derived from `tag`, so different tags give independent
/// samples.
pub fn synth_condition(
    model: &ContractionModel,
    fg: &str,
    bg: Option<&str>,
    n: usize,
    tag: &str,
) -> Result<Vec<Vec<f64>>> {
    (0..n)
        .map(|i| {
            let item = Item {
                clip_ref: alloc::format!("{tag}/{fg}/{}/{i}", bg.unwrap_or("-")),
                fg: fg.into(),
                bg: bg.map(String::from),
            };
            model.sample_item(&item).map(|(g, _)| g)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{cosine, norm};
    use alloc::vec;

    fn model(p: ContractionParams) -> ContractionModel {
        ContractionModel::new(p, ["a", "b"], ["x", "y"]).unwrap()
    }

    #[test]
    fn set_validation() {
        let mut s = EmbeddingSet::new(3).unwrap();
        s.insert("a", vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(s.insert("b", vec![1.0, 2.0]), Err(Error::DimensionMismatch { .. })));
        assert_eq!(s.insert("c", vec![1.0, f32::NAN, 3.0]), Err(Error::NonFiniteEmbedding("c".into())));
        assert_eq!(s.insert("a", vec![1.0, 2.0, 3.0]), Err(Error::DuplicateClip("a".into())));
        assert_eq!(
            s.insert_frames("a", Frames { n_frames: 0, dim: 3, data: vec![] }),
            Err(Error::EmptyFrames("a".into()))
        );
        s.insert_frames("a", Frames { n_frames: 2, dim: 2, data: vec![1.0; 4] }).unwrap();
        assert!(s.insert_frames("b", Frames { n_frames: 1, dim: 3, data: vec![1.0; 3] }).is_err());
        assert_eq!(s.frames_f64("a").unwrap(), vec![vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert_eq!(s.frames_f64("zz"), Err(Error::NoLocalDescriptors("zz".into())));
        assert_eq!(s.global_f64("zz"), Err(Error::MissingEmbedding("zz".into())));
    }

    #[test]
    fn params_validation() {
        assert!(ContractionParams::default().validate().is_ok());
        let bad = [
            ContractionParams { dim: 0, ..Default::default() },
            ContractionParams { angular_noise: -0.1, ..Default::default() },
            ContractionParams { mixed_mag_mean: 90.0, ..Default::default() },
            ContractionParams { bg_mag_spread: 1.0, ..Default::default() },
            ContractionParams { clean_mag_std: f64::NAN, ..Default::default() },
        ];
        for p in bad {
            assert!(p.validate().is_err(), "{p:?}");
        }
    }

    #[test]
    fn directions_are_orthonormal() {
        let m = model(ContractionParams { dim: 8, ..Default::default() });
        let dirs = [
            m.class_direction("a").unwrap(),
            m.class_direction("b").unwrap(),
            m.background_direction("x").unwrap(),
            m.background_direction("y").unwrap(),
        ];
        for i in 0..4 {
            assert!((norm(dirs[i]) - 1.0).abs() < 1e-12);
            for j in 0..i {
                assert!(crate::math::dot(dirs[i], dirs[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn noiseless_clean_vectors_lie_on_class_direction() {
        let m = model(ContractionParams { angular_noise: 0.0, bg_weight: 0.0, ..Default::default() });
        for v in synth_condition(&m, "a", None, 20, "t").unwrap() {
            assert!((cosine(&v, m.class_direction("a").unwrap()).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn magnitude_means_match_parameters() {
        let p = ContractionParams { bg_mag_spread: 0.0, ..Default::default() };
        let m = model(p);
        let mean = |vs: Vec<Vec<f64>>| vs.iter().map(|v| norm(v)).sum::<f64>() / vs.len() as f64;
        let clean = mean(synth_condition(&m, "a", None, 10_000, "t").unwrap());
        let mixed = mean(synth_condition(&m, "a", Some("x"), 10_000, "t").unwrap());
        assert!((clean - 83.26).abs() < 2.0, "{clean}");
        assert!((mixed - 58.69).abs() < 2.0, "{mixed}");
    }

    #[test]
    fn cosine_band_at_moderate_noise() {
        // sigma^2 * dim sets the angular spread; at dim 16, sigma 0.1 and
        // beta 0.15 the mean cosine to the class direction is ~0.92.
        let p = ContractionParams { dim: 16, angular_noise: 0.1, bg_weight: 0.15, ..Default::default() };
        let m = model(p);
        let clean = synth_condition(&m, "a", None, 2000, "c").unwrap();
        let proto = crate::math::normalized(&crate::math::mean_rows(clean.iter().map(|v| v.as_slice()), 16)).unwrap();
        let mixed = synth_condition(&m, "a", Some("x"), 2000, "m").unwrap();
        let c = mixed.iter().map(|v| cosine(v, &proto).unwrap()).sum::<f64>() / mixed.len() as f64;
        assert!((0.85..=0.95).contains(&c), "{c}");
    }

    #[test]
    fn per_clip_streams_are_keyed_by_identifier() {
        let m = model(ContractionParams { frames_per_clip: 3, ..Default::default() });
        let items = [
            Item { clip_ref: "one".into(), fg: "a".into(), bg: Some("x".into()) },
            Item { clip_ref: "two".into(), fg: "b".into(), bg: None },
        ];
        let fwd = synth_embeddings(&m, &items).unwrap();
        let rev = synth_embeddings(&m, items.iter().rev()).unwrap();
        assert_eq!(fwd, rev);
        assert_eq!(fwd.frames("one").unwrap().n_frames, 3);
        assert!(matches!(
            m.sample_item(&Item { clip_ref: "z".into(), fg: "nope".into(), bg: None }),
            Err(Error::UnknownClass(_))
        ));
    }

    #[test]
    fn background_scales_are_spread_evenly() {
        let m = ContractionModel::new(
            ContractionParams { bg_mag_spread: 0.5, ..Default::default() },
            ["a"],
            ["p", "q", "r", "s", "t"],
        )
        .unwrap();
        let mut s: Vec<f64> = ["p", "q", "r", "s", "t"].iter().map(|b| m.background_scale(b).unwrap()).collect();
        s.sort_by(f64::total_cmp);
        for (got, want) in s.iter().zip([0.5, 0.75, 1.0, 1.25, 1.5]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn benchmark_covers_sampled_episodes() {
        use crate::catalog::{assign_splits, SplitMode};
        use crate::episodes::{sample_episode, EpisodeSpec};
        let t = PairingTable::standard();
        let split = assign_splits(&t, SplitMode::Canonical).unwrap().test;
        let b = SyntheticBenchmark::build(ContractionParams { dim: 64, ..Default::default() }, &t, &split, 12).unwrap();
        let ep = sample_episode(&t, &split, &EpisodeSpec::default(), &b.pool).unwrap();
        b.embeddings.covers(&ep).unwrap();
    }
}
