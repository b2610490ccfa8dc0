//! Soft DBSCAN and dataset maintenance.
//!
//! DBSCAN first splits the data into `k` density clusters and `x` noise
//! points. Each noise point then seeds a singleton cluster of its own, so the
//! fuzzy stage runs with `c = k + x` clusters starting from the crisp DBSCAN
//! assignment. Memberships and centers are updated alternately with a
//! per-cluster Mahalanobis distance until memberships stop moving. A point
//! whose strongest membership lands on one of the singleton clusters is
//! flagged as noisy.
//!
//! [`maintain`] removes the flagged points and then thins out near-duplicates
//! inside each cluster.

use log::warn;
use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;

use crate::clustering::{dbscan, fuzzy_memberships, weighted_centers, DbscanResult};
use crate::dataset::{Dataset, FuzzyPartition, Partition};
use crate::error::{Error, Result};
use crate::metric::euclidean;

/// Which exponent the membership update applies to distance ratios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExponentMode {
    /// `2 / (m - 1)`, the exponent of the usual fuzzy c-means derivation.
    #[default]
    Standard,
    /// `m / (m - 1)`.
    Ratio,
}

impl ExponentMode {
    pub fn exponent(self, m: f64) -> f64 {
        match self {
            ExponentMode::Standard => 2.0 / (m - 1.0),
            ExponentMode::Ratio => m / (m - 1.0),
        }
    }
}

/// Distance used inside the fuzzy loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DistanceModel {
    /// Mahalanobis distance under each cluster's fuzzy covariance.
    #[default]
    FuzzyMahalanobis,
    /// Identity covariance for every cluster, i.e. Euclidean distance.
    Euclidean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftDbscanConfig {
    pub eps: f64,
    pub min_pts: usize,
    /// Weighting exponent.
    pub m: f64,
    /// Tolerance on the largest membership change between sweeps.
    pub xi: f64,
    pub max_iter: usize,
    pub exponent_mode: ExponentMode,
    /// Ridge added to every covariance before inversion. `None` picks
    /// `1e-6 · trace(Σ_data) / M`.
    pub cov_reg: Option<f64>,
    pub distance: DistanceModel,
}

impl Default for SoftDbscanConfig {
    fn default() -> Self {
        SoftDbscanConfig {
            eps: 1.0,
            min_pts: 4,
            m: 2.5,
            xi: 1e-4,
            max_iter: 300,
            exponent_mode: ExponentMode::Standard,
            cov_reg: None,
            distance: DistanceModel::FuzzyMahalanobis,
        }
    }
}

impl SoftDbscanConfig {
    pub fn new(eps: f64, min_pts: usize) -> Self {
        SoftDbscanConfig {
            eps,
            min_pts,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.m > 1.0) || !self.m.is_finite() {
            return Err(Error::invalid(format!("m = {} must exceed 1", self.m)));
        }
        if !(self.xi > 0.0) {
            return Err(Error::invalid(format!("xi = {} must be positive", self.xi)));
        }
        if let Some(reg) = self.cov_reg {
            if !(reg >= 0.0) || !reg.is_finite() {
                return Err(Error::invalid(format!("cov_reg = {reg} must be >= 0")));
            }
        }
        if self.m <= 2.0 {
            warn!("weighting exponent m = {} is not above 2", self.m);
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SoftDbscanOutput {
    pub memberships: FuzzyPartition,
    /// c×M cluster centers.
    pub centers: Array2<f64>,
    /// Number of DBSCAN clusters; clusters `0..k` came from them.
    pub k: usize,
    /// Clusters seeded by DBSCAN noise points, in increasing order (`k..c`).
    pub noise_seeded: Vec<usize>,
    /// Points whose argmax membership lies in a noise-seeded cluster.
    pub noisy_points: Vec<usize>,
    pub iterations: usize,
    pub seeding: DbscanResult,
}

impl SoftDbscanOutput {
    pub fn c(&self) -> usize {
        self.memberships.c()
    }

    pub fn is_noise_seeded(&self, cluster: usize) -> bool {
        cluster >= self.k
    }

    /// Argmax cluster of every point.
    pub fn hardened(&self) -> Partition {
        self.memberships.harden()
    }
}

/// `sqrt((x - v)ᵀ · cov_inverse · (x - v))`.
pub fn mahalanobis(x: ArrayView1<f64>, v: ArrayView1<f64>, cov_inverse: ArrayView2<f64>) -> Result<f64> {
    let m = x.len();
    if v.len() != m || cov_inverse.dim() != (m, m) {
        return Err(Error::shape("mahalanobis operands disagree in dimension"));
    }
    check_symmetric(cov_inverse)?;
    Ok(quadratic_form(x, v, cov_inverse))
}

fn check_symmetric(a: ArrayView2<f64>) -> Result<()> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("inverse covariance".into()));
    }
    let scale = a.iter().fold(0.0f64, |s, v| s.max(v.abs())).max(1.0);
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            if (a[[i, j]] - a[[j, i]]).abs() > 1e-9 * scale {
                return Err(Error::invalid("inverse covariance is not symmetric"));
            }
        }
    }
    Ok(())
}

fn quadratic_form(x: ArrayView1<f64>, v: ArrayView1<f64>, a: ArrayView2<f64>) -> f64 {
    let diff: Array1<f64> = &x - &v;
    diff.dot(&a.dot(&diff)).max(0.0).sqrt()
}

/// Ridge used when [`SoftDbscanConfig::cov_reg`] is unset: `1e-6` of the mean
/// per-feature variance, floored at `1e-12` for constant data.
pub fn default_cov_reg(data: &Dataset) -> f64 {
    let points = data.points();
    let n = points.nrows() as f64;
    let mean = points.sum_axis(ndarray::Axis(0)) / n;
    let trace: f64 = points
        .rows()
        .into_iter()
        .map(|r| r.iter().zip(mean.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum::<f64>()
        / n;
    (1e-6 * trace / data.dim() as f64).max(1e-12)
}

/// Per-cluster membership-weighted covariance plus `cov_reg · I`:
/// Σ_i = Σ_k μ_ik^m (x_k − v_i)(x_k − v_i)ᵀ / Σ_k μ_ik^m + cov_reg · I.
///
/// A cluster with no membership mass gets `cov_reg · I`.
pub fn fuzzy_covariances(
    data: &Dataset,
    u: &FuzzyPartition,
    centers: ArrayView2<f64>,
    m: f64,
    cov_reg: f64,
) -> Result<Vec<Array2<f64>>> {
    let dim = data.dim();
    if u.n() != data.len() || centers.dim() != (u.c(), dim) {
        return Err(Error::shape("memberships, centers and data disagree"));
    }
    let points = data.points();
    let mu = u.memberships();
    let covs = (0..u.c())
        .into_par_iter()
        .map(|i| {
            let center = centers.row(i);
            let mut scatter = Array2::<f64>::zeros((dim, dim));
            let mut mass = 0.0;
            for (k, x) in points.rows().into_iter().enumerate() {
                let w = mu[[i, k]].powf(m);
                if w == 0.0 {
                    continue;
                }
                mass += w;
                let d: Array1<f64> = &x - &center;
                for a in 0..dim {
                    for b in 0..dim {
                        scatter[[a, b]] += w * d[a] * d[b];
                    }
                }
            }
            if mass > 0.0 {
                scatter /= mass;
            }
            for a in 0..dim {
                scatter[[a, a]] += cov_reg;
            }
            scatter
        })
        .collect();
    Ok(covs)
}

/// Inverses of [`fuzzy_covariances`], one per cluster.
pub fn fuzzy_covariance(
    data: &Dataset,
    u: &FuzzyPartition,
    centers: ArrayView2<f64>,
    m: f64,
    cov_reg: f64,
) -> Result<Vec<Array2<f64>>> {
    fuzzy_covariances(data, u, centers, m, cov_reg)?
        .into_par_iter()
        .enumerate()
        .map(|(i, cov)| invert_spd(&cov).ok_or(Error::SingularCovariance { cluster: i }))
        .collect()
}

fn invert_spd(a: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    let m = DMatrix::from_fn(n, n, |i, j| a[[i, j]]);
    let inv = m.cholesky()?.inverse();
    if inv.iter().any(|v| !v.is_finite()) {
        return None;
    }
    // Symmetrize to remove rounding asymmetry.
    Some(Array2::from_shape_fn((n, n), |(i, j)| 0.5 * (inv[(i, j)] + inv[(j, i)])))
}

/// Fuzzy membership update μ_ik = 1 / Σ_j (MD_ik / MD_jk)^p for a c×n
/// distance matrix. A zero distance gives full membership to the lowest such
/// cluster.
pub fn membership_update(distances: &Array2<f64>, m: f64, mode: ExponentMode) -> Result<FuzzyPartition> {
    if !(m > 1.0) {
        return Err(Error::invalid(format!("m = {m} must exceed 1")));
    }
    if distances.iter().any(|&d| !d.is_finite() || d < 0.0) {
        return Err(Error::invalid("distances must be finite and non-negative"));
    }
    FuzzyPartition::new(fuzzy_memberships(distances, mode.exponent(m)))
}

/// Weighted centers v_i = Σ_k μ_ik^m x_k / Σ_k μ_ik^m. Clusters without
/// membership mass keep their entry from `previous`, or zero without one.
pub fn centers_update(
    data: &Dataset,
    u: &FuzzyPartition,
    m: f64,
    previous: Option<&Array2<f64>>,
) -> Result<Array2<f64>> {
    if u.n() != data.len() {
        return Err(Error::shape("memberships do not match dataset"));
    }
    if let Some(prev) = previous {
        if prev.dim() != (u.c(), data.dim()) {
            return Err(Error::shape("previous centers have the wrong shape"));
        }
    }
    Ok(weighted_centers(
        data.points(),
        &u.memberships().to_owned(),
        m,
        previous,
    ))
}

pub fn soft_dbscan(data: &Dataset, cfg: &SoftDbscanConfig) -> Result<SoftDbscanOutput> {
    soft_dbscan_observed(data, cfg, |_, _| {})
}

/// [`soft_dbscan`] that reports every membership matrix it produces, from the
/// crisp seed (iteration 0) onward.
pub fn soft_dbscan_observed(
    data: &Dataset,
    cfg: &SoftDbscanConfig,
    mut observe: impl FnMut(usize, &FuzzyPartition),
) -> Result<SoftDbscanOutput> {
    cfg.validate()?;
    let seeding = dbscan(data, cfg.eps, cfg.min_pts)?;
    let k = seeding.k;
    let c = k + seeding.noise.len();
    if c == 0 {
        return Err(Error::EmptyDataset);
    }
    if c > data.len() {
        warn!("soft dbscan produced {c} clusters for {} points", data.len());
    }

    // Crisp seed: DBSCAN clusters first, then one singleton per noise point.
    let mut seed_labels = vec![0; data.len()];
    let mut next_noise = k;
    for (i, a) in seeding.assignment.iter().enumerate() {
        seed_labels[i] = match a {
            Some(cluster) => *cluster,
            None => {
                next_noise += 1;
                next_noise - 1
            }
        };
    }
    let mut u = FuzzyPartition::from_partition(&Partition::new(seed_labels, c)?);
    observe(0, &u);
    let mut centers = centers_update(data, &u, cfg.m, None)?;
    let cov_reg = cfg.cov_reg.unwrap_or_else(|| default_cov_reg(data));
    let identity = Array2::<f64>::eye(data.dim());

    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        let inverses = match cfg.distance {
            DistanceModel::FuzzyMahalanobis => {
                fuzzy_covariance(data, &u, centers.view(), cfg.m, cov_reg)?
            }
            DistanceModel::Euclidean => vec![identity.clone(); c],
        };
        let distances = distance_matrix(data.points(), centers.view(), &inverses);
        let next = membership_update(&distances, cfg.m, cfg.exponent_mode)?;
        observe(iterations, &next);
        centers = centers_update(data, &next, cfg.m, Some(&centers))?;
        let delta = next.max_abs_diff(&u);
        u = next;
        if delta <= cfg.xi {
            break;
        }
    }

    let noise_seeded: Vec<usize> = (k..c).collect();
    let noisy_points = u
        .harden()
        .labels()
        .iter()
        .enumerate()
        .filter(|&(_, &a)| a >= k)
        .map(|(i, _)| i)
        .collect();
    Ok(SoftDbscanOutput {
        memberships: u,
        centers,
        k,
        noise_seeded,
        noisy_points,
        iterations,
        seeding,
    })
}

fn distance_matrix(points: ArrayView2<f64>, centers: ArrayView2<f64>, inverses: &[Array2<f64>]) -> Array2<f64> {
    let (n, c) = (points.nrows(), centers.nrows());
    let rows: Vec<Vec<f64>> = (0..c)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|k| quadratic_form(points.row(k), centers.row(i), inverses[i].view()))
                .collect()
        })
        .collect();
    let d = Array2::from_shape_vec((c, n), rows.concat()).expect("c x n distances");
    d
}

/// A dataset after noisy and redundant rows were removed.
#[derive(Debug, Clone)]
pub struct MaintainedDataset {
    /// Kept rows in their original order.
    pub reduced: Dataset,
    pub kept: Vec<usize>,
    pub removed_noisy: Vec<usize>,
    pub removed_redundant: Vec<usize>,
    pub soft: SoftDbscanOutput,
}

/// Removes the points soft DBSCAN flags as noisy, then, scanning in index
/// order, drops every point lying within `dedup_radius` of a point already
/// kept in the same argmax cluster.
pub fn maintain(data: &Dataset, cfg: &SoftDbscanConfig, dedup_radius: f64) -> Result<MaintainedDataset> {
    if !(dedup_radius >= 0.0) || !dedup_radius.is_finite() {
        return Err(Error::invalid(format!(
            "dedup radius {dedup_radius} must be non-negative"
        )));
    }
    let soft = soft_dbscan(data, cfg)?;
    let clusters = soft.hardened();
    let mut kept_by_cluster: Vec<Vec<usize>> = vec![Vec::new(); soft.c()];
    let (mut kept, mut removed_noisy, mut removed_redundant) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..data.len() {
        let cluster = clusters.label(i);
        if soft.is_noise_seeded(cluster) {
            removed_noisy.push(i);
            continue;
        }
        let duplicate = kept_by_cluster[cluster]
            .iter()
            .any(|&j| euclidean(data.row(i), data.row(j)) <= dedup_radius);
        if duplicate {
            removed_redundant.push(i);
        } else {
            kept_by_cluster[cluster].push(i);
            kept.push(i);
        }
    }
    if kept.is_empty() {
        return Err(Error::invalid("maintenance removed every point"));
    }
    Ok(MaintainedDataset {
        reduced: data.select(&kept)?,
        kept,
        removed_noisy,
        removed_redundant,
        soft,
    })
}
