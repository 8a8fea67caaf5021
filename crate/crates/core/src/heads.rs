//! Few-shot inference heads over frozen embeddings.
//!
//! Every head maps a [`Task`] (labelled support vectors, unlabelled query
//! vectors) to per-query class posteriors. Heads keep no state between
//! tasks.

use alloc::vec;
use alloc::vec::Vec;

use crate::embeddings::EmbeddingSet;
use crate::episodes::Episode;
use crate::linalg::{cholesky_solve, Dense};
use crate::math::{argmax, cosine, dot, mean_rows, median, norm, normalized, softmax_in_place, sq_dist};
use crate::{Error, Result};

/// Vectors of one episode, in episode order.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub n_way: usize,
    pub support: Vec<Vec<f64>>,
    pub support_labels: Vec<usize>,
    pub query: Vec<Vec<f64>>,
    /// Frame descriptors, present when the embedding set has them.
    pub support_frames: Option<Vec<Vec<Vec<f64>>>>,
    pub query_frames: Option<Vec<Vec<Vec<f64>>>>,
}

impl Task {
    pub fn new(n_way: usize, support: Vec<Vec<f64>>, support_labels: Vec<usize>, query: Vec<Vec<f64>>) -> Result<Self> {
        let t = Task { n_way, support, support_labels, query, support_frames: None, query_frames: None };
        t.validate()?;
        Ok(t)
    }

    pub fn with_frames(mut self, support: Vec<Vec<Vec<f64>>>, query: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if support.len() != self.support.len() || query.len() != self.query.len() {
            return Err(Error::MalformedTask("frame lists differ in length from vectors"));
        }
        self.support_frames = Some(support);
        self.query_frames = Some(query);
        Ok(self)
    }

    /// Gathers vectors (and frames, if the set carries them) for `ep`.
    pub fn from_episode(ep: &Episode, emb: &EmbeddingSet) -> Result<Self> {
        let support = ep.support.iter().map(|i| emb.global_f64(&i.clip_ref)).collect::<Result<Vec<_>>>()?;
        let query = ep.query.iter().map(|i| emb.global_f64(&i.clip_ref)).collect::<Result<Vec<_>>>()?;
        let task = Task::new(ep.n_way(), support, ep.support_labels(), query)?;
        if emb.has_frames() {
            let frames = |items: &[crate::episodes::Item]| -> Vec<Vec<Vec<f64>>> {
                items.iter().map(|i| emb.frames_f64(&i.clip_ref).unwrap_or_default()).collect()
            };
            let (s, q) = (frames(&ep.support), frames(&ep.query));
            return task.with_frames(s, q);
        }
        Ok(task)
    }

    fn validate(&self) -> Result<()> {
        if self.n_way == 0 {
            return Err(Error::MalformedTask("n_way must be positive"));
        }
        if self.support.len() != self.support_labels.len() {
            return Err(Error::MalformedTask("support labels differ in length from vectors"));
        }
        if self.support_labels.iter().any(|&l| l >= self.n_way) {
            return Err(Error::MalformedTask("support label out of range"));
        }
        for c in 0..self.n_way {
            if !self.support_labels.contains(&c) {
                return Err(Error::MalformedTask("class without support"));
            }
        }
        let dim = self.support[0].len();
        for v in self.support.iter().chain(&self.query) {
            if v.len() != dim {
                return Err(Error::DimMismatch(dim, v.len()));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.support[0].len()
    }

    /// Per-class support means.
    pub fn prototypes(&self) -> Vec<Vec<f64>> {
        prototypes_of(&self.support, &self.support_labels, self.n_way)
    }
}

fn prototypes_of(support: &[Vec<f64>], labels: &[usize], n_way: usize) -> Vec<Vec<f64>> {
    let dim = support.first().map_or(0, Vec::len);
    (0..n_way)
        .map(|c| {
            mean_rows(
                support.iter().zip(labels).filter(|(_, &l)| l == c).map(|(v, _)| v.as_slice()),
                dim,
            )
        })
        .collect()
}

/// Per-query posteriors (rows sum to one) and argmax labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub n_way: usize,
    pub posteriors: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Prediction {
    pub fn from_posteriors(n_way: usize, posteriors: Vec<Vec<f64>>) -> Self {
        let labels = posteriors.iter().map(|p| argmax(p)).collect();
        Prediction { n_way, posteriors, labels }
    }

    fn from_logits(n_way: usize, mut logits: Vec<Vec<f64>>) -> Self {
        for row in &mut logits {
            softmax_in_place(row);
        }
        Self::from_posteriors(n_way, logits)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum HeadKind {
    Proto,
    Cosine,
    Linear,
    Dn4,
    LaplacianShot,
    BdCspn,
    ProtoLp,
    Bpa,
}

impl HeadKind {
    pub const ALL: [HeadKind; 8] = [
        HeadKind::Proto,
        HeadKind::Cosine,
        HeadKind::Linear,
        HeadKind::Dn4,
        HeadKind::LaplacianShot,
        HeadKind::BdCspn,
        HeadKind::ProtoLp,
        HeadKind::Bpa,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::Proto => "proto",
            HeadKind::Cosine => "cosine",
            HeadKind::Linear => "linear",
            HeadKind::Dn4 => "dn4",
            HeadKind::LaplacianShot => "laplacianshot",
            HeadKind::BdCspn => "bdcspn",
            HeadKind::ProtoLp => "protolp",
            HeadKind::Bpa => "bpa",
        }
    }

    pub fn default_config(self) -> HeadConfig {
        match self {
            HeadKind::Proto => HeadConfig::Proto,
            HeadKind::Cosine => HeadConfig::Cosine(CosineConfig::default()),
            HeadKind::Linear => HeadConfig::Linear(LinearConfig::default()),
            HeadKind::Dn4 => HeadConfig::Dn4(Dn4Config::default()),
            HeadKind::LaplacianShot => HeadConfig::LaplacianShot(LaplacianShotConfig::default()),
            HeadKind::BdCspn => HeadConfig::BdCspn(BdCspnConfig::default()),
            HeadKind::ProtoLp => HeadConfig::ProtoLp(ProtoLpConfig::default()),
            HeadKind::Bpa => HeadConfig::Bpa(BpaConfig::default()),
        }
    }
}

impl core::fmt::Display for HeadKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for HeadKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        HeadKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or(Error::InvalidHyperparameter("unknown head"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct CosineConfig {
    pub scale: f64,
    pub lr: f64,
    pub iters: usize,
}

impl Default for CosineConfig {
    fn default() -> Self {
        CosineConfig { scale: 10.0, lr: 0.01, iters: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct LinearConfig {
    pub lr: f64,
    pub iters: usize,
    pub l2: f64,
}

impl Default for LinearConfig {
    fn default() -> Self {
        LinearConfig { lr: 0.01, iters: 100, l2: 1e-3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct Dn4Config {
    pub k: usize,
}

impl Default for Dn4Config {
    fn default() -> Self {
        Dn4Config { k: 3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct LaplacianShotConfig {
    pub lambda: f64,
    pub knn: usize,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for LaplacianShotConfig {
    fn default() -> Self {
        LaplacianShotConfig { lambda: 0.7, knn: 3, max_iters: 20, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct BdCspnConfig {
    /// Temperature on cosine similarities, used for the soft query
    /// assignment, the rectification weights and the final posterior.
    pub epsilon: f64,
}

impl Default for BdCspnConfig {
    fn default() -> Self {
        BdCspnConfig { epsilon: 10.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ProtoLpConfig {
    pub rho: f64,
    pub knn: usize,
    /// L2-normalise every feature before building the graph.
    pub normalize: bool,
    /// After normalising, translate the queries so their mean matches the
    /// support mean.
    pub center: bool,
}

impl Default for ProtoLpConfig {
    fn default() -> Self {
        ProtoLpConfig { rho: 0.9, knn: 10, normalize: true, center: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct BpaConfig {
    pub epsilon: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for BpaConfig {
    fn default() -> Self {
        BpaConfig { epsilon: 0.05, max_iters: 100, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "head", rename_all = "lowercase"))]
pub enum HeadConfig {
    Proto,
    Cosine(CosineConfig),
    Linear(LinearConfig),
    Dn4(Dn4Config),
    LaplacianShot(LaplacianShotConfig),
    BdCspn(BdCspnConfig),
    ProtoLp(ProtoLpConfig),
    Bpa(BpaConfig),
}

impl HeadConfig {
    pub fn kind(&self) -> HeadKind {
        match self {
            HeadConfig::Proto => HeadKind::Proto,
            HeadConfig::Cosine(_) => HeadKind::Cosine,
            HeadConfig::Linear(_) => HeadKind::Linear,
            HeadConfig::Dn4(_) => HeadKind::Dn4,
            HeadConfig::LaplacianShot(_) => HeadKind::LaplacianShot,
            HeadConfig::BdCspn(_) => HeadKind::BdCspn,
            HeadConfig::ProtoLp(_) => HeadKind::ProtoLp,
            HeadConfig::Bpa(_) => HeadKind::Bpa,
        }
    }

    /// Short name for reports: the head name alone for default
    /// hyperparameters, otherwise the full configuration.
    pub fn label(&self) -> alloc::string::String {
        if *self == self.kind().default_config() {
            self.kind().as_str().into()
        } else {
            alloc::format!("{self:?}")
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |x: f64| x.is_finite() && x > 0.0;
        match *self {
            HeadConfig::Proto => Ok(()),
            HeadConfig::Cosine(c) if !(pos(c.scale) && pos(c.lr)) => {
                Err(Error::InvalidHyperparameter("cosine scale and lr must be > 0"))
            }
            HeadConfig::Linear(c) if !(pos(c.lr) && c.l2.is_finite() && c.l2 >= 0.0) => {
                Err(Error::InvalidHyperparameter("linear lr must be > 0 and l2 >= 0"))
            }
            HeadConfig::Dn4(c) if c.k == 0 => Err(Error::InvalidHyperparameter("dn4 k must be >= 1")),
            HeadConfig::LaplacianShot(c) if !(c.lambda.is_finite() && c.lambda >= 0.0 && c.knn >= 1) => {
                Err(Error::InvalidHyperparameter("laplacianshot lambda must be >= 0 and knn >= 1"))
            }
            HeadConfig::BdCspn(c) if !pos(c.epsilon) => Err(Error::InvalidHyperparameter("bdcspn epsilon must be > 0")),
            HeadConfig::ProtoLp(c) if !(c.rho.is_finite() && (0.0..1.0).contains(&c.rho) && c.knn >= 1) => {
                Err(Error::InvalidHyperparameter("protolp rho must be in [0, 1) and knn >= 1"))
            }
            HeadConfig::Bpa(c) if !(pos(c.epsilon) && pos(c.tol)) => {
                Err(Error::InvalidHyperparameter("bpa epsilon and tol must be > 0"))
            }
            _ => Ok(()),
        }
    }

    pub fn classify(&self, task: &Task) -> Result<Prediction> {
        self.validate()?;
        match self {
            HeadConfig::Proto => classify_proto(task),
            HeadConfig::Cosine(c) => classify_cosine(task, c),
            HeadConfig::Linear(c) => classify_linear(task, c),
            HeadConfig::Dn4(c) => classify_dn4(task, c),
            HeadConfig::LaplacianShot(c) => classify_laplacianshot(task, c),
            HeadConfig::BdCspn(c) => classify_bdcspn(task, c),
            HeadConfig::ProtoLp(c) => classify_protolp(task, c),
            HeadConfig::Bpa(c) => classify_bpa(task, c),
        }
    }
}

// ---------------------------------------------------------------- proto

fn proto_logits(query: &[Vec<f64>], protos: &[Vec<f64>]) -> Vec<Vec<f64>> {
    query.iter().map(|q| protos.iter().map(|p| -sq_dist(q, p)).collect()).collect()
}

/// Softmax over negative squared Euclidean distances to class means.
pub fn classify_proto(task: &Task) -> Result<Prediction> {
    Ok(Prediction::from_logits(task.n_way, proto_logits(&task.query, &task.prototypes())))
}

// ---------------------------------------------------------------- cosine

fn unit_rows(rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    rows.iter().map(|r| normalized(r).ok_or(Error::CannotNormalize)).collect()
}

/// Trains the cosine classifier's class weights on the support set.
pub fn cosine_weights(task: &Task, cfg: &CosineConfig) -> Result<Vec<Vec<f64>>> {
    let xs = unit_rows(&task.support)?;
    let mut w = unit_rows(&task.prototypes()).map_err(|_| Error::CannotNormalize)?;
    let n = xs.len() as f64;
    let dim = task.dim();
    for _ in 0..cfg.iters {
        let norms: Vec<f64> = w.iter().map(|r| norm(r)).collect();
        let mut grad = vec![vec![0.0; dim]; task.n_way];
        for (x, &y) in xs.iter().zip(&task.support_labels) {
            let cos: Vec<f64> = w.iter().zip(&norms).map(|(wj, nj)| dot(x, wj) / nj).collect();
            let mut p: Vec<f64> = cos.iter().map(|c| cfg.scale * c).collect();
            softmax_in_place(&mut p);
            for j in 0..task.n_way {
                let g = cfg.scale * (p[j] - if j == y { 1.0 } else { 0.0 }) / n;
                for d in 0..dim {
                    let w_hat = w[j][d] / norms[j];
                    grad[j][d] += g * (x[d] - cos[j] * w_hat) / norms[j];
                }
            }
        }
        for (wj, gj) in w.iter_mut().zip(&grad) {
            for (a, b) in wj.iter_mut().zip(gj) {
                *a -= cfg.lr * b;
            }
        }
    }
    Ok(w)
}

/// Scaled-cosine classifier fitted on the support set by gradient descent
/// from normalised prototypes.
pub fn classify_cosine(task: &Task, cfg: &CosineConfig) -> Result<Prediction> {
    let w = cosine_weights(task, cfg)?;
    let logits = task
        .query
        .iter()
        .map(|q| w.iter().map(|wj| cosine(q, wj).map(|c| cfg.scale * c).ok_or(Error::CannotNormalize)).collect())
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(Prediction::from_logits(task.n_way, logits))
}

// ---------------------------------------------------------------- linear

/// Weights (`n_way x dim`) and biases of the multinomial logistic regression
/// fitted on the support set.
pub fn linear_weights(task: &Task, cfg: &LinearConfig) -> (Vec<Vec<f64>>, Vec<f64>) {
    let dim = task.dim();
    let n = task.support.len() as f64;
    let mut w = vec![vec![0.0; dim]; task.n_way];
    let mut b = vec![0.0; task.n_way];
    for _ in 0..cfg.iters {
        let mut gw: Vec<Vec<f64>> = w.iter().map(|r| r.iter().map(|x| cfg.l2 * x).collect()).collect();
        let mut gb = vec![0.0; task.n_way];
        for (x, &y) in task.support.iter().zip(&task.support_labels) {
            let mut p: Vec<f64> = w.iter().zip(&b).map(|(wj, bj)| dot(wj, x) + bj).collect();
            softmax_in_place(&mut p);
            for j in 0..task.n_way {
                let g = (p[j] - if j == y { 1.0 } else { 0.0 }) / n;
                gb[j] += g;
                for (a, xd) in gw[j].iter_mut().zip(x) {
                    *a += g * xd;
                }
            }
        }
        for j in 0..task.n_way {
            b[j] -= cfg.lr * gb[j];
            for (a, g) in w[j].iter_mut().zip(&gw[j]) {
                *a -= cfg.lr * g;
            }
        }
    }
    (w, b)
}

/// Multinomial logistic regression on raw support features.
pub fn classify_linear(task: &Task, cfg: &LinearConfig) -> Result<Prediction> {
    let (w, b) = linear_weights(task, cfg);
    let logits = task.query.iter().map(|q| w.iter().zip(&b).map(|(wj, bj)| dot(wj, q) + bj).collect()).collect();
    Ok(Prediction::from_logits(task.n_way, logits))
}

// ---------------------------------------------------------------- dn4

/// Image-to-class scores: for each query descriptor, the sum of its `k`
/// highest cosine similarities to the class's support descriptors, summed
/// over query descriptors.
pub fn dn4_scores(task: &Task, cfg: &Dn4Config) -> Result<Vec<Vec<f64>>> {
    let missing = |i: usize, q: bool| Error::NoLocalDescriptors(alloc::format!("{} {i}", if q { "query" } else { "support" }));
    let sf = task.support_frames.as_ref().ok_or_else(|| missing(0, false))?;
    let qf = task.query_frames.as_ref().ok_or_else(|| missing(0, true))?;
    let mut per_class: Vec<Vec<Vec<f64>>> = vec![Vec::new(); task.n_way];
    for (i, (frames, &l)) in sf.iter().zip(&task.support_labels).enumerate() {
        if frames.is_empty() {
            return Err(missing(i, false));
        }
        per_class[l].extend(unit_rows(frames)?);
    }
    qf.iter()
        .enumerate()
        .map(|(i, frames)| {
            if frames.is_empty() {
                return Err(missing(i, true));
            }
            let qs = unit_rows(frames)?;
            Ok(per_class
                .iter()
                .map(|descs| {
                    let k = cfg.k.min(descs.len());
                    qs.iter()
                        .map(|q| {
                            let mut sims: Vec<f64> = descs.iter().map(|d| dot(q, d)).collect();
                            sims.sort_by(|a, b| b.total_cmp(a));
                            sims[..k].iter().sum::<f64>()
                        })
                        .sum()
                })
                .collect())
        })
        .collect()
}

/// Local-descriptor nearest-neighbour head.
pub fn classify_dn4(task: &Task, cfg: &Dn4Config) -> Result<Prediction> {
    Ok(Prediction::from_logits(task.n_way, dn4_scores(task, cfg)?))
}

// ---------------------------------------------------------------- laplacianshot

/// Directed k-nearest-neighbour indicator over rows (self excluded).
fn knn_indicator(x: &[Vec<f64>], k: usize) -> Vec<Vec<usize>> {
    (0..x.len())
        .map(|i| {
            let mut d: Vec<(f64, usize)> =
                (0..x.len()).filter(|&j| j != i).map(|j| (sq_dist(&x[i], &x[j]), j)).collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            d.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

/// Bound-optimisation of unary prototype distances plus a Laplacian term
/// over the query kNN graph: `Y <- softmax(-a + lambda * W Y)`.
pub fn classify_laplacianshot(task: &Task, cfg: &LaplacianShotConfig) -> Result<Prediction> {
    let unary = proto_logits(&task.query, &task.prototypes());
    let mut y = unary.clone();
    for row in &mut y {
        softmax_in_place(row);
    }
    if cfg.lambda == 0.0 || task.query.len() < 2 {
        return Ok(Prediction::from_posteriors(task.n_way, y));
    }
    let nbrs = knn_indicator(&task.query, cfg.knn);
    for _ in 0..cfg.max_iters {
        let next: Vec<Vec<f64>> = (0..task.query.len())
            .map(|i| {
                let mut row: Vec<f64> = (0..task.n_way)
                    .map(|c| unary[i][c] + cfg.lambda * nbrs[i].iter().map(|&j| y[j][c]).sum::<f64>())
                    .collect();
                softmax_in_place(&mut row);
                row
            })
            .collect();
        let change = next
            .iter()
            .zip(&y)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        y = next;
        if change < cfg.tol {
            break;
        }
    }
    Ok(Prediction::from_posteriors(task.n_way, y))
}

// ---------------------------------------------------------------- bd-cspn

/// Queries translated by (support mean - query mean).
pub fn bdcspn_shift(task: &Task) -> Vec<Vec<f64>> {
    let dim = task.dim();
    let ms = mean_rows(task.support.iter().map(Vec::as_slice), dim);
    let mq = mean_rows(task.query.iter().map(Vec::as_slice), dim);
    task.query.iter().map(|q| q.iter().enumerate().map(|(d, x)| x + ms[d] - mq[d]).collect()).collect()
}

/// Rectified prototypes: for class `c`, the weighted mean of its supports
/// (weight `exp(eps * cos(x, p_c))`) and of every shifted query (weight
/// `pi_qc * exp(eps * cos(q, p_c))`, with `pi_q` the softmax assignment of
/// `q` over the initial prototypes).
pub fn bdcspn_prototypes(task: &Task, cfg: &BdCspnConfig) -> Result<Vec<Vec<f64>>> {
    let shifted = bdcspn_shift(task);
    let protos = task.prototypes();
    let eps = cfg.epsilon;
    let cos = |a: &[f64], b: &[f64]| cosine(a, b).ok_or(Error::CannotNormalize);
    let mut assign = Vec::with_capacity(shifted.len());
    for q in &shifted {
        let mut row = protos.iter().map(|p| cos(q, p).map(|c| eps * c)).collect::<Result<Vec<_>>>()?;
        softmax_in_place(&mut row);
        assign.push(row);
    }
    let dim = task.dim();
    (0..task.n_way)
        .map(|c| {
            let p = &protos[c];
            // Weights are exp(eps * cos) with a common exp(-eps) factor
            // removed, which keeps them in (0, 1].
            let mut acc = vec![0.0; dim];
            let mut total = 0.0;
            for (x, &l) in task.support.iter().zip(&task.support_labels) {
                if l == c {
                    let w = libm::exp(eps * (cos(x, p)? - 1.0));
                    total += w;
                    for (a, v) in acc.iter_mut().zip(x) {
                        *a += w * v;
                    }
                }
            }
            for (q, pi) in shifted.iter().zip(&assign) {
                let w = pi[c] * libm::exp(eps * (cos(q, p)? - 1.0));
                total += w;
                for (a, v) in acc.iter_mut().zip(q) {
                    *a += w * v;
                }
            }
            Ok(acc.into_iter().map(|a| a / total).collect())
        })
        .collect()
}

/// Bias-diminishing prototype rectification, then cosine classification.
pub fn classify_bdcspn(task: &Task, cfg: &BdCspnConfig) -> Result<Prediction> {
    if task.query.is_empty() {
        return Ok(Prediction::from_posteriors(task.n_way, Vec::new()));
    }
    let protos = bdcspn_prototypes(task, cfg)?;
    let shifted = bdcspn_shift(task);
    let logits = shifted
        .iter()
        .map(|q| protos.iter().map(|p| cosine(q, p).map(|c| cfg.epsilon * c).ok_or(Error::CannotNormalize)).collect())
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(Prediction::from_logits(task.n_way, logits))
}

// ---------------------------------------------------------------- proto-lp

/// `F = (I - rho * S)^-1 Y` with `S = D^-1/2 W D^-1/2`. `w` must be
/// symmetric and nonnegative; `y` is row-major `n x m`.
pub fn label_propagation(w: &[Vec<f64>], y: &[f64], m: usize, rho: f64) -> Result<Vec<f64>> {
    let n = w.len();
    let deg: Vec<f64> = w.iter().map(|r| r.iter().sum::<f64>()).collect();
    let inv_sqrt: Vec<f64> = deg.iter().map(|&d| if d > 0.0 { 1.0 / libm::sqrt(d) } else { 0.0 }).collect();
    let mut a = Dense::zeros(n);
    for i in 0..n {
        for j in 0..n {
            let s = inv_sqrt[i] * w[i][j] * inv_sqrt[j];
            a.set(i, j, if i == j { 1.0 } else { 0.0 } - rho * s);
        }
    }
    cholesky_solve(&a, y, m).ok_or(Error::InvalidHyperparameter("propagation matrix not positive definite"))
}

/// Gaussian affinity with median bandwidth, kNN-sparsified and symmetrised
/// by elementwise max. The diagonal is zero.
pub fn knn_gaussian_affinity(x: &[Vec<f64>], k: usize) -> Vec<Vec<f64>> {
    let n = x.len();
    let d2: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| sq_dist(&x[i], &x[j])).collect()).collect();
    let off: Vec<f64> = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| d2[i][j]).collect();
    let bw = if off.is_empty() { 1.0 } else { median(&off) };
    let bw = if bw > 0.0 { bw } else { 1.0 };
    let full: Vec<Vec<f64>> =
        (0..n).map(|i| (0..n).map(|j| if i == j { 0.0 } else { libm::exp(-d2[i][j] / bw) }).collect()).collect();
    let mut w = vec![vec![0.0; n]; n];
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| full[i][b].total_cmp(&full[i][a]).then(a.cmp(&b)));
        for &j in order.iter().take(k) {
            w[i][j] = full[i][j];
        }
    }
    for i in 0..n {
        for j in 0..i {
            let m = f64::max(w[i][j], w[j][i]);
            w[i][j] = m;
            w[j][i] = m;
        }
    }
    w
}

/// Label propagation over a support + query graph.
pub fn classify_protolp(task: &Task, cfg: &ProtoLpConfig) -> Result<Prediction> {
    if task.query.is_empty() {
        return Ok(Prediction::from_posteriors(task.n_way, Vec::new()));
    }
    let (mut sup, mut qry) = (task.support.clone(), task.query.clone());
    if cfg.normalize {
        sup = unit_rows(&sup)?;
        qry = unit_rows(&qry)?;
    }
    if cfg.center {
        let dim = task.dim();
        let ms = mean_rows(sup.iter().map(Vec::as_slice), dim);
        let mq = mean_rows(qry.iter().map(Vec::as_slice), dim);
        for q in &mut qry {
            for d in 0..dim {
                q[d] += ms[d] - mq[d];
            }
        }
    }
    let ns = sup.len();
    let nodes: Vec<Vec<f64>> = sup.into_iter().chain(qry).collect();
    let w = knn_gaussian_affinity(&nodes, cfg.knn);
    let mut y = vec![0.0; nodes.len() * task.n_way];
    for (i, &l) in task.support_labels.iter().enumerate() {
        y[i * task.n_way + l] = 1.0;
    }
    let f = label_propagation(&w, &y, task.n_way, cfg.rho)?;
    let post = (ns..nodes.len())
        .map(|i| {
            let row: Vec<f64> = f[i * task.n_way..(i + 1) * task.n_way].iter().map(|v| v.max(0.0)).collect();
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                row.iter().map(|v| v / s).collect()
            } else {
                vec![1.0 / task.n_way as f64; task.n_way]
            }
        })
        .collect();
    Ok(Prediction::from_posteriors(task.n_way, post))
}

// ---------------------------------------------------------------- bpa

/// Symmetric Sinkhorn scaling of a symmetric nonnegative matrix to a doubly
/// stochastic one. Errors if the marginal residual is still above `tol`
/// after `max_iters` sweeps.
pub fn sinkhorn_symmetric(k: &[Vec<f64>], max_iters: usize, tol: f64) -> Result<Vec<Vec<f64>>> {
    let n = k.len();
    let mut d = vec![1.0; n];
    let scaled = |d: &[f64]| -> Vec<Vec<f64>> {
        (0..n).map(|i| (0..n).map(|j| d[i] * k[i][j] * d[j]).collect()).collect()
    };
    let residual = |p: &[Vec<f64>]| -> f64 {
        (0..n).map(|i| (p[i].iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max)
    };
    for _ in 0..max_iters {
        let kd: Vec<f64> = (0..n).map(|i| (0..n).map(|j| k[i][j] * d[j]).sum()).collect();
        for i in 0..n {
            if kd[i] <= 0.0 {
                return Err(Error::SinkhornBudgetExceeded { residual: f64::INFINITY });
            }
            d[i] = libm::sqrt(d[i] / kd[i]);
        }
        if residual(&scaled(&d)) < tol {
            return Ok(scaled(&d));
        }
    }
    let p = scaled(&d);
    let r = residual(&p);
    if r < tol {
        Ok(p)
    } else {
        Err(Error::SinkhornBudgetExceeded { residual: r })
    }
}

/// BPA re-embedding: each item's row of the Sinkhorn-balanced cosine
/// affinity over all episode items, with the self entry set to the row
/// maximum. Supports first, then queries.
pub fn bpa_features(task: &Task, cfg: &BpaConfig) -> Result<Vec<Vec<f64>>> {
    let items: Vec<Vec<f64>> = unit_rows(&task.support.iter().chain(&task.query).cloned().collect::<Vec<_>>())?;
    let n = items.len();
    // exp((cos - 1) / eps): the constant factor cancels in the scaling.
    let k: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 0.0 } else { libm::exp((dot(&items[i], &items[j]) - 1.0) / cfg.epsilon) }).collect())
        .collect();
    let mut p = sinkhorn_symmetric(&k, cfg.max_iters, cfg.tol)?;
    for (i, row) in p.iter_mut().enumerate() {
        row[i] = row.iter().copied().fold(0.0, f64::max);
    }
    Ok(p)
}

/// Prototype classification on BPA re-embedded features.
pub fn classify_bpa(task: &Task, cfg: &BpaConfig) -> Result<Prediction> {
    if task.query.is_empty() {
        return Ok(Prediction::from_posteriors(task.n_way, Vec::new()));
    }
    let mut feats = bpa_features(task, cfg)?;
    let query = feats.split_off(task.support.len());
    let protos = prototypes_of(&feats, &task.support_labels, task.n_way);
    Ok(Prediction::from_logits(task.n_way, proto_logits(&query, &protos)))
}
