//! Radial-angular decomposition, magnitude contraction statistics and
//! distribution alignment.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{cosine, dot, median, norm, normalized, sq_dist};
use crate::stats::{mann_whitney_u, mean_ci};

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub magnitude: f64,
    pub direction: Vec<f64>,
}

pub fn decompose(v: &[f64]) -> Result<Decomposition> {
    let r = norm(v);
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::NoDirection);
    }
    Ok(Decomposition { magnitude: r, direction: v.iter().map(|x| x / r).collect() })
}

/// Normalized arithmetic mean of raw clean vectors.
pub fn clean_prototype(vectors: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = vectors.first().ok_or(Error::EmptySample)?;
    let dim = first.len();
    if let Some(v) = vectors.iter().find(|v| v.len() != dim) {
        return Err(Error::DimMismatch(dim, v.len()));
    }
    let mean = crate::math::mean_rows(vectors.iter().map(Vec::as_slice), dim);
    normalized(&mean).ok_or(Error::DegeneratePrototype)
}

/// A class-labelled embedding.
pub type Labeled = (String, Vec<f64>);

/// Clean prototypes for every class present in `clean`.
pub fn clean_prototypes(clean: &[Labeled]) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut by_class: BTreeMap<&str, Vec<Vec<f64>>> = BTreeMap::new();
    for (c, v) in clean {
        by_class.entry(c).or_default().push(v.clone());
    }
    by_class.into_iter().map(|(c, vs)| Ok((c.to_string(), clean_prototype(&vs)?))).collect()
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GeometryReport {
    pub n_clean: usize,
    pub n_mixed: usize,
    pub clean_mag_mean: f64,
    pub clean_mag_ci: f64,
    pub mixed_mag_mean: f64,
    pub mixed_mag_ci: f64,
    pub mag_u: f64,
    pub mag_p: f64,
    pub clean_cos_mean: f64,
    pub clean_cos_ci: f64,
    pub mixed_cos_mean: f64,
    pub mixed_cos_ci: f64,
    /// `|clean_cos_mean − mixed_cos_mean|`.
    pub cos_diff: f64,
    pub cos_u: f64,
    pub cos_p: f64,
}

fn magnitudes_and_cosines(set: &[Labeled], protos: &BTreeMap<String, Vec<f64>>) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut mags = Vec::with_capacity(set.len());
    let mut coss = Vec::with_capacity(set.len());
    for (class, v) in set {
        let p = protos.get(class).ok_or_else(|| Error::MissingCleanReference(class.clone()))?;
        if p.len() != v.len() {
            return Err(Error::DimMismatch(p.len(), v.len()));
        }
        let d = decompose(v)?;
        mags.push(d.magnitude);
        coss.push(dot(&d.direction, p));
    }
    Ok((mags, coss))
}

/// Compare magnitudes and cosine-to-own-prototype between clean and mixed
/// embeddings.
pub fn contraction_report(
    clean: &[Labeled],
    mixed: &[Labeled],
    prototypes: &BTreeMap<String, Vec<f64>>,
) -> Result<GeometryReport> {
    if clean.is_empty() || mixed.is_empty() {
        return Err(Error::EmptySample);
    }
    let (cm, cc) = magnitudes_and_cosines(clean, prototypes)?;
    let (mm, mc) = magnitudes_and_cosines(mixed, prototypes)?;
    let (clean_mag_mean, clean_mag_ci) = mean_ci(&cm)?;
    let (mixed_mag_mean, mixed_mag_ci) = mean_ci(&mm)?;
    let (clean_cos_mean, clean_cos_ci) = mean_ci(&cc)?;
    let (mixed_cos_mean, mixed_cos_ci) = mean_ci(&mc)?;
    let mag = mann_whitney_u(&cm, &mm)?;
    let cos = mann_whitney_u(&cc, &mc)?;
    Ok(GeometryReport {
        n_clean: clean.len(),
        n_mixed: mixed.len(),
        clean_mag_mean,
        clean_mag_ci,
        mixed_mag_mean,
        mixed_mag_ci,
        mag_u: mag.u,
        mag_p: mag.p,
        clean_cos_mean,
        clean_cos_ci,
        mixed_cos_mean,
        mixed_cos_ci,
        cos_diff: (clean_cos_mean - mixed_cos_mean).abs(),
        cos_u: cos.u,
        cos_p: cos.p,
    })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DistributionReport {
    /// Unbiased MMD² clamped at zero.
    pub mmd: f64,
    /// The estimator before clamping; may be slightly negative.
    pub mmd_raw: f64,
    pub centroid_cosine: f64,
    pub bandwidth: f64,
}

/// Median pairwise Euclidean distance over the pooled sets.
pub fn median_bandwidth(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    let pooled: Vec<&Vec<f64>> = x.iter().chain(y).collect();
    let mut d = Vec::with_capacity(pooled.len() * pooled.len().saturating_sub(1) / 2);
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            d.push(libm::sqrt(sq_dist(pooled[i], pooled[j])));
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    let h = median(&d);
    if h > 0.0 { h } else { 1.0 }
}

fn kernel_mean(a: &[Vec<f64>], b: &[Vec<f64>], gamma: f64, skip_diagonal: bool) -> f64 {
    let mut s = 0.0;
    let mut n = 0usize;
    for (i, u) in a.iter().enumerate() {
        for (j, v) in b.iter().enumerate() {
            if skip_diagonal && i == j {
                continue;
            }
            s += libm::exp(-gamma * sq_dist(u, v));
            n += 1;
        }
    }
    s / n as f64
}

/// RBF-kernel MMD² between two sets, `k(a, b) = exp(−‖a − b‖² / 2h²)`.
///
/// `bandwidth` of `None` uses the median heuristic. A set with a single
/// element contributes its biased within-set term (exactly 1).
pub fn mmd_rbf(x: &[Vec<f64>], y: &[Vec<f64>], bandwidth: Option<f64>) -> Result<DistributionReport> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptySample);
    }
    let dim = x[0].len();
    if let Some(v) = x.iter().chain(y).find(|v| v.len() != dim) {
        return Err(Error::DimMismatch(dim, v.len()));
    }
    let h = match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(_) => return Err(Error::InvalidHyperparameter("bandwidth must be positive")),
        None => median_bandwidth(x, y),
    };
    let gamma = 1.0 / (2.0 * h * h);
    let within = |s: &[Vec<f64>]| if s.len() < 2 { 1.0 } else { kernel_mean(s, s, gamma, true) };
    let raw = within(x) + within(y) - 2.0 * kernel_mean(x, y, gamma, false);
    let mx = crate::math::mean_rows(x.iter().map(Vec::as_slice), dim);
    let my = crate::math::mean_rows(y.iter().map(Vec::as_slice), dim);
    let centroid_cosine = cosine(&mx, &my).ok_or(Error::NoDirection)?.clamp(-1.0, 1.0);
    Ok(DistributionReport { mmd: raw.max(0.0), mmd_raw: raw, centroid_cosine, bandwidth: h })
}
