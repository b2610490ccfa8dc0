//! Network-based consensus over an ensemble of base partitions.
//!
//! The pipeline runs several base clusterers over the data, aligns their
//! labels against the first partition, trains one network of a single shared
//! architecture per aligned partition, averages the trained weights
//! elementwise, and classifies every point with the averaged network.
//!
//! [`rcfm`] runs dataset maintenance first and the consensus on the reduced
//! data, then labels the removed points through their nearest kept neighbor.

use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::clustering::{fuzzy_cmeans, kmeans_restarts, pam};
use crate::dataset::{align_labels, Dataset, FuzzyPartition, Partition};
use crate::error::{Error, Result, StageExt};
use crate::maintenance::{maintain, MaintainedDataset, SoftDbscanConfig};
use crate::metric::{argmax, sq_euclidean};
use crate::mln::{forward, init_model, train_gd, Layer, MlnArchitecture, MlnModel, TrainingTargets};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaseMethod {
    KMeans,
    Pam,
    FuzzyCMeans,
}

impl BaseMethod {
    pub fn name(self) -> &'static str {
        match self {
            BaseMethod::KMeans => "kmeans",
            BaseMethod::Pam => "pam",
            BaseMethod::FuzzyCMeans => "fuzzy_cmeans",
        }
    }
}

impl std::str::FromStr for BaseMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "kmeans" | "k_means" => Ok(BaseMethod::KMeans),
            "pam" | "kmedoids" | "k_medoids" => Ok(BaseMethod::Pam),
            "fuzzy_cmeans" | "fcm" | "fuzzy_c_means" => Ok(BaseMethod::FuzzyCMeans),
            other => Err(Error::invalid(format!("unknown clustering method {other:?}"))),
        }
    }
}

impl std::fmt::Display for BaseMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// How the per-partition networks are initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitPolicy {
    /// Every network starts from the same weights, derived from the first
    /// ensemble seed. Hidden units then correspond across networks, which is
    /// what makes elementwise averaging meaningful.
    #[default]
    Shared,
    /// Network `i` starts from weights seeded by `derive_seed(seed_i, i)`.
    PerPartition,
}

/// Parameters of the base clusterers.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseParams {
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
    /// Lloyd runs per k-means call; the lowest-cost run is kept.
    pub kmeans_restarts: usize,
    pub pam_max_iter: usize,
    pub fcm_m: f64,
    pub fcm_tol: f64,
    pub fcm_max_iter: usize,
}

impl Default for BaseParams {
    fn default() -> Self {
        BaseParams {
            kmeans_max_iter: 300,
            kmeans_tol: 1e-6,
            kmeans_restarts: 10,
            pam_max_iter: 100,
            fcm_m: 2.0,
            fcm_tol: 1e-5,
            fcm_max_iter: 300,
        }
    }
}

/// Maintenance settings used by [`rcfm`].
#[derive(Debug, Clone, PartialEq)]
pub struct MaintenanceConfig {
    pub soft: SoftDbscanConfig,
    pub dedup_radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    pub methods: Vec<BaseMethod>,
    /// Number of clusters of every base partition and of the output.
    pub k: usize,
    pub seeds: Vec<u64>,
    /// Hidden layer sizes. `None` uses one layer of `max(4, 2k)` units.
    pub hidden: Option<Vec<usize>>,
    pub lr: f64,
    pub epochs: usize,
    pub init: InitPolicy,
    /// Standardize features (zero mean, unit variance) before the networks see them.
    pub standardize: bool,
    pub base: BaseParams,
    pub maintenance: Option<MaintenanceConfig>,
}

impl EnsembleConfig {
    pub fn new(methods: Vec<BaseMethod>, k: usize, seeds: Vec<u64>) -> Self {
        EnsembleConfig {
            methods,
            k,
            seeds,
            hidden: None,
            lr: 0.5,
            epochs: 500,
            init: InitPolicy::Shared,
            standardize: true,
            base: BaseParams::default(),
            maintenance: None,
        }
    }

    pub fn with_maintenance(mut self, soft: SoftDbscanConfig, dedup_radius: f64) -> Self {
        self.maintenance = Some(MaintenanceConfig { soft, dedup_radius });
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::invalid("ensemble needs at least one method"));
        }
        if self.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("ensemble needs at least one seed"));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::invalid(format!("learning rate {} is invalid", self.lr)));
        }
        Ok(())
    }

    /// Network shape for data with `inputs` features.
    pub fn arch(&self, inputs: usize) -> Result<MlnArchitecture> {
        match &self.hidden {
            None => MlnArchitecture::with_default_hidden(inputs, self.k),
            Some(h) => {
                let mut sizes = vec![inputs];
                sizes.extend(h);
                sizes.push(self.k);
                MlnArchitecture::new(sizes)
            }
        }
    }

    /// Number of base partitions the ensemble produces.
    pub fn ensemble_size(&self) -> usize {
        self.methods.len() * self.seeds.len()
    }
}

/// Per-feature affine map to zero mean and unit variance. Constant features
/// are only centered.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
}

impl Standardizer {
    pub fn fit(points: ArrayView2<f64>) -> Standardizer {
        let mean = points.mean_axis(Axis(0)).expect("non-empty data");
        let var = points.var_axis(Axis(0), 0.0);
        let scale = var.mapv(|v| if v > 0.0 { v.sqrt() } else { 1.0 });
        Standardizer { mean, scale }
    }

    pub fn identity(dim: usize) -> Standardizer {
        Standardizer {
            mean: Array1::zeros(dim),
            scale: Array1::ones(dim),
        }
    }

    pub fn apply(&self, points: ArrayView2<f64>) -> Array2<f64> {
        (&points - &self.mean) / &self.scale
    }
}

/// Parameters of one trained network, tagged with the base partition it was
/// trained on (`None` for a combined set).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    pub source: Option<usize>,
    pub layers: Vec<Layer>,
}

impl WeightSet {
    pub fn from_model(model: MlnModel, source: Option<usize>) -> WeightSet {
        WeightSet {
            source,
            layers: model.into_layers(),
        }
    }

    pub fn to_model(&self, arch: &MlnArchitecture) -> Result<MlnModel> {
        MlnModel::from_layers(arch.clone(), self.layers.clone())
    }

    fn same_shape(&self, other: &WeightSet) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weights.dim() == b.weights.dim() && a.bias.len() == b.bias.len())
    }
}

/// One partition per (method, seed) pair, methods outer and seeds inner.
/// Fuzzy c-means memberships are hardened by argmax.
pub fn generate_base_partitions(data: &Dataset, cfg: &EnsembleConfig) -> Result<Vec<Partition>> {
    cfg.validate()?;
    if cfg.k > data.len() {
        return Err(Error::invalid(format!(
            "k = {} exceeds {} points",
            cfg.k,
            data.len()
        )));
    }
    let jobs: Vec<(BaseMethod, u64)> = cfg
        .methods
        .iter()
        .flat_map(|&m| cfg.seeds.iter().map(move |&s| (m, s)))
        .collect();
    jobs.into_par_iter()
        .map(|(method, seed)| run_base(data, method, cfg.k, seed, &cfg.base).stage(method.name()))
        .collect()
}

/// Runs one base clusterer and returns a partition with exactly `k` clusters.
pub fn run_base(data: &Dataset, method: BaseMethod, k: usize, seed: u64, p: &BaseParams) -> Result<Partition> {
    match method {
        BaseMethod::KMeans => {
            kmeans_restarts(data, k, seed, p.kmeans_max_iter, p.kmeans_tol, p.kmeans_restarts).map(|f| f.partition)
        }
        BaseMethod::Pam => pam(data, k, seed, p.pam_max_iter),
        BaseMethod::FuzzyCMeans => {
            let u = fuzzy_cmeans(data, k, p.fcm_m, p.fcm_tol, seed, p.fcm_max_iter)?;
            Ok(harden_nonempty(&u))
        }
    }
}

/// Argmax hardening that refills empty clusters: each empty cluster takes
/// the point with the largest membership in it among clusters that still
/// have more than one member.
fn harden_nonempty(u: &FuzzyPartition) -> Partition {
    let hard = u.harden();
    let mut labels = hard.labels().to_vec();
    let mu = u.memberships();
    loop {
        let mut sizes = vec![0usize; u.c()];
        for &l in &labels {
            sizes[l] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            break;
        };
        let donor = (0..labels.len())
            .filter(|&i| sizes[labels[i]] > 1)
            .max_by(|&a, &b| mu[[empty, a]].total_cmp(&mu[[empty, b]]).then(b.cmp(&a)))
            .expect("c <= n");
        labels[donor] = empty;
    }
    Partition::new(labels, u.c()).expect("labels below c")
}

/// Relabels every partition against the first one.
pub fn align_ensemble(partitions: &[Partition]) -> Result<Vec<Partition>> {
    let Some(reference) = partitions.first() else {
        return Err(Error::invalid("empty ensemble"));
    };
    partitions
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if i == 0 {
                Ok(p.clone())
            } else {
                align_labels(p, reference)
            }
        })
        .collect()
}

/// One-hot rows: row `i` has a 1 in column `p(i)`.
pub fn encode_targets(p: &Partition, k: usize) -> Result<TrainingTargets> {
    if let Some(&bad) = p.labels().iter().find(|&&l| l >= k) {
        return Err(Error::invalid(format!("label {bad} does not fit k = {k}")));
    }
    let mut t = Array2::zeros((p.len(), k));
    for (i, &l) in p.labels().iter().enumerate() {
        t[[i, l]] = 1.0;
    }
    TrainingTargets::new(t)
}

/// Initialization seed for the network trained on base partition `index`.
pub fn trainer_seed(cfg: &EnsembleConfig, index: usize) -> u64 {
    match cfg.init {
        InitPolicy::Shared => derive_seed(cfg.seeds[0], u64::MAX),
        InitPolicy::PerPartition => {
            let base = cfg.seeds[index % cfg.seeds.len()];
            derive_seed(base, index as u64)
        }
    }
}

/// Trained parameters plus the loss history of one per-partition network.
#[derive(Debug, Clone)]
pub struct TrainedPartition {
    pub weights: WeightSet,
    pub history: Vec<f64>,
}

/// Trains a network on `inputs` (already standardized if configured) against
/// the one-hot encoding of `p`.
pub fn train_per_partition(
    inputs: ArrayView2<f64>,
    p: &Partition,
    cfg: &EnsembleConfig,
    seed: u64,
) -> Result<TrainedPartition> {
    if p.len() != inputs.nrows() {
        return Err(Error::shape("partition and data differ in length"));
    }
    let arch = cfg.arch(inputs.ncols())?;
    let targets = encode_targets(p, cfg.k)?;
    let model = init_model(&arch, seed);
    let trained = train_gd(&model, inputs, &targets, cfg.lr, cfg.epochs)?;
    Ok(TrainedPartition {
        weights: WeightSet::from_model(trained.model, None),
        history: trained.history,
    })
}

/// Elementwise arithmetic mean of every weight matrix and bias vector.
///
/// Each entry is summed in sorted order, so the result does not depend on the
/// order of `sets`; an entry equal across all sets is returned unchanged.
pub fn combine_weights(sets: &[WeightSet]) -> Result<WeightSet> {
    let Some(first) = sets.first() else {
        return Err(Error::invalid("no weight sets to combine"));
    };
    if let Some(bad) = sets.iter().position(|s| !first.same_shape(s)) {
        return Err(Error::shape(format!("weight set {bad} differs in shape")));
    }
    let mean_of = |values: &mut Vec<f64>| -> f64 {
        values.sort_by(f64::total_cmp);
        if values[0] == values[values.len() - 1] {
            return values[0];
        }
        values.iter().sum::<f64>() / values.len() as f64
    };
    let mut scratch = Vec::with_capacity(sets.len());
    let layers = (0..first.layers.len())
        .map(|l| {
            let w = &first.layers[l].weights;
            let weights = Array2::from_shape_fn(w.dim(), |idx| {
                scratch.clear();
                scratch.extend(sets.iter().map(|s| s.layers[l].weights[idx]));
                mean_of(&mut scratch)
            });
            let bias = Array1::from_shape_fn(first.layers[l].bias.len(), |j| {
                scratch.clear();
                scratch.extend(sets.iter().map(|s| s.layers[l].bias[j]));
                mean_of(&mut scratch)
            });
            Layer { weights, bias }
        })
        .collect();
    Ok(WeightSet { source: None, layers })
}

/// Final labels from a combined network.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalAssignment {
    /// Compacted partition: output units that won no point are dropped.
    pub partition: Partition,
    /// Argmax output unit of every point.
    pub units: Vec<usize>,
    /// For every output unit, its label in `partition` (`None` if unused).
    pub unit_to_label: Vec<Option<usize>>,
}

/// Argmax output unit for every row, ties to the lowest unit.
pub fn predict_units(model: &MlnModel, inputs: ArrayView2<f64>) -> Result<Vec<usize>> {
    let y = forward(model, inputs)?;
    Ok(y.rows().into_iter().map(|r| argmax(r.iter())).collect())
}

/// Classifies `inputs` with the network `wf` and compacts unused units away.
pub fn finalize(inputs: ArrayView2<f64>, arch: &MlnArchitecture, wf: &WeightSet) -> Result<FinalAssignment> {
    let model = wf.to_model(arch)?;
    let units = predict_units(&model, inputs)?;
    let raw = Partition::new(units.clone(), arch.outputs())?;
    let (partition, unit_to_label) = raw.compact();
    Ok(FinalAssignment {
        partition,
        units,
        unit_to_label,
    })
}

/// Everything produced by a consensus run.
#[derive(Debug, Clone)]
pub struct RcfmResult {
    /// Final partition of the dataset handed to the consensus stage.
    pub final_partition: Partition,
    /// Labels for every point of the original input. Equal to
    /// `final_partition` when no maintenance ran.
    pub full_labels: Partition,
    pub unit_to_label: Vec<Option<usize>>,
    /// Aligned base partitions, in generation order.
    pub base_partitions: Vec<Partition>,
    pub maintained: Option<MaintainedDataset>,
    pub combined_weights: WeightSet,
    pub arch: MlnArchitecture,
    pub standardizer: Standardizer,
    /// Loss history of every per-partition network.
    pub training_losses: Vec<Vec<f64>>,
    /// Mean loss of the combined network against each aligned base partition.
    pub combined_losses: Vec<f64>,
}

impl RcfmResult {
    pub fn model(&self) -> MlnModel {
        self.combined_weights
            .to_model(&self.arch)
            .expect("combined weights match the architecture")
    }

    /// Output unit for new points in the original feature space.
    pub fn predict_units(&self, points: ArrayView2<f64>) -> Result<Vec<usize>> {
        predict_units(&self.model(), self.standardizer.apply(points).view())
    }

    /// `id,label` CSV covering every original point.
    pub fn labels_csv(&self, ids: &[String]) -> String {
        let mut out = String::from("id,label\n");
        for (id, l) in ids.iter().zip(self.full_labels.labels()) {
            writeln!(out, "{id},{l}").unwrap();
        }
        out
    }

    /// Plain `key = value` record of the configuration and per-stage results.
    pub fn manifest(&self, cfg: &EnsembleConfig) -> String {
        let mut out = String::new();
        write_ensemble_config(&mut out, cfg);
        writeln!(out, "arch = {}", join(self.arch.layer_sizes())).unwrap();
        if let Some(m) = &self.maintained {
            writeln!(out, "maintenance.kept = {}", m.kept.len()).unwrap();
            writeln!(out, "maintenance.removed_noisy = {}", m.removed_noisy.len()).unwrap();
            writeln!(out, "maintenance.removed_redundant = {}", m.removed_redundant.len()).unwrap();
            writeln!(out, "maintenance.clusters = {}", m.soft.c()).unwrap();
            writeln!(out, "maintenance.dbscan_clusters = {}", m.soft.k).unwrap();
            writeln!(out, "maintenance.iterations = {}", m.soft.iterations).unwrap();
        }
        for (i, p) in self.base_partitions.iter().enumerate() {
            writeln!(out, "base.{i}.sizes = {}", join(&p.cluster_sizes())).unwrap();
        }
        for (i, h) in self.training_losses.iter().enumerate() {
            let first = h.first().copied().unwrap_or(f64::NAN);
            let last = h.last().copied().unwrap_or(f64::NAN);
            writeln!(out, "train.{i}.loss_initial = {first:?}").unwrap();
            writeln!(out, "train.{i}.loss_final = {last:?}").unwrap();
        }
        for (i, l) in self.combined_losses.iter().enumerate() {
            writeln!(out, "combined.loss_vs_base.{i} = {l:?}").unwrap();
        }
        writeln!(out, "final.k = {}", self.final_partition.k()).unwrap();
        writeln!(out, "final.sizes = {}", join(&self.final_partition.cluster_sizes())).unwrap();
        out
    }
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

pub(crate) fn write_ensemble_config(out: &mut String, cfg: &EnsembleConfig) {
    let methods: Vec<&str> = cfg.methods.iter().map(|m| m.name()).collect();
    writeln!(out, "methods = {}", methods.join(" ")).unwrap();
    writeln!(out, "k = {}", cfg.k).unwrap();
    writeln!(out, "seeds = {}", join(&cfg.seeds)).unwrap();
    match &cfg.hidden {
        Some(h) => writeln!(out, "hidden = {}", join(h)).unwrap(),
        None => writeln!(out, "hidden = default").unwrap(),
    }
    writeln!(out, "lr = {:?}", cfg.lr).unwrap();
    writeln!(out, "epochs = {}", cfg.epochs).unwrap();
    writeln!(out, "init = {:?}", cfg.init).unwrap();
    writeln!(out, "standardize = {}", cfg.standardize).unwrap();
    let b = &cfg.base;
    writeln!(out, "kmeans.max_iter = {}", b.kmeans_max_iter).unwrap();
    writeln!(out, "kmeans.tol = {:?}", b.kmeans_tol).unwrap();
    writeln!(out, "kmeans.restarts = {}", b.kmeans_restarts).unwrap();
    writeln!(out, "pam.max_iter = {}", b.pam_max_iter).unwrap();
    writeln!(out, "fcm.m = {:?}", b.fcm_m).unwrap();
    writeln!(out, "fcm.tol = {:?}", b.fcm_tol).unwrap();
    writeln!(out, "fcm.max_iter = {}", b.fcm_max_iter).unwrap();
    if let Some(m) = &cfg.maintenance {
        let s = &m.soft;
        writeln!(out, "maintenance.eps = {:?}", s.eps).unwrap();
        writeln!(out, "maintenance.min_pts = {}", s.min_pts).unwrap();
        writeln!(out, "maintenance.m = {:?}", s.m).unwrap();
        writeln!(out, "maintenance.xi = {:?}", s.xi).unwrap();
        writeln!(out, "maintenance.max_iter = {}", s.max_iter).unwrap();
        writeln!(out, "maintenance.exponent_mode = {:?}", s.exponent_mode).unwrap();
        match s.cov_reg {
            Some(r) => writeln!(out, "maintenance.cov_reg = {r:?}").unwrap(),
            None => writeln!(out, "maintenance.cov_reg = auto").unwrap(),
        }
        writeln!(out, "maintenance.dedup_radius = {:?}", m.dedup_radius).unwrap();
    }
}

/// Consensus without maintenance: base partitions, alignment, one network
/// per partition, weight averaging and final classification.
pub fn mlncf(data: &Dataset, cfg: &EnsembleConfig) -> Result<RcfmResult> {
    cfg.validate()?;
    if data.len() < cfg.k {
        return Err(Error::invalid(format!(
            "k = {} exceeds {} points",
            cfg.k,
            data.len()
        )));
    }
    let base = generate_base_partitions(data, cfg).stage("base partitions")?;
    let aligned = align_ensemble(&base).stage("alignment")?;

    let standardizer = if cfg.standardize {
        Standardizer::fit(data.points())
    } else {
        Standardizer::identity(data.dim())
    };
    let inputs = standardizer.apply(data.points());
    let arch = cfg.arch(data.dim()).stage("architecture")?;

    let trained: Vec<TrainedPartition> = aligned
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            train_per_partition(inputs.view(), p, cfg, trainer_seed(cfg, i))
                .map(|mut t| {
                    t.weights.source = Some(i);
                    t
                })
                .stage(&format!("training on base partition {i}"))
        })
        .collect::<Result<_>>()?;

    let sets: Vec<WeightSet> = trained.iter().map(|t| t.weights.clone()).collect();
    let combined = combine_weights(&sets).stage("combination")?;
    let fin = finalize(inputs.view(), &arch, &combined).stage("finalization")?;

    let outputs = forward(&combined.to_model(&arch)?, inputs.view())?;
    let combined_losses = aligned
        .iter()
        .map(|p| crate::mln::batch_loss(encode_targets(p, cfg.k)?.view(), outputs.view()))
        .collect::<Result<_>>()?;

    Ok(RcfmResult {
        full_labels: fin.partition.clone(),
        final_partition: fin.partition,
        unit_to_label: fin.unit_to_label,
        base_partitions: aligned,
        maintained: None,
        combined_weights: combined,
        arch,
        standardizer,
        training_losses: trained.into_iter().map(|t| t.history).collect(),
        combined_losses,
    })
}

/// Maintenance followed by [`mlncf`] on the reduced data. Removed points get
/// the final label of their nearest kept point.
pub fn rcfm(data: &Dataset, cfg: &EnsembleConfig) -> Result<RcfmResult> {
    let Some(mcfg) = &cfg.maintenance else {
        return Err(Error::invalid("rcfm needs a maintenance configuration"));
    };
    let maintained = maintain(data, &mcfg.soft, mcfg.dedup_radius).stage("maintenance")?;
    let reduced = &maintained.reduced;
    if reduced.len() < cfg.k {
        return Err(Error::invalid(format!(
            "maintenance left {} points for k = {}",
            reduced.len(),
            cfg.k
        ))
        .in_stage("maintenance"));
    }
    let mut result = mlncf(reduced, cfg)?;

    let mut labels = vec![0; data.len()];
    for (pos, &i) in maintained.kept.iter().enumerate() {
        labels[i] = result.final_partition.label(pos);
    }
    for &i in maintained.removed_noisy.iter().chain(&maintained.removed_redundant) {
        let nearest = (0..reduced.len())
            .min_by(|&a, &b| {
                sq_euclidean(data.row(i), reduced.row(a))
                    .total_cmp(&sq_euclidean(data.row(i), reduced.row(b)))
            })
            .expect("reduced set is non-empty");
        labels[i] = result.final_partition.label(nearest);
    }
    result.full_labels = Partition::new(labels, result.final_partition.k())?;
    result.maintained = Some(maintained);
    Ok(result)
}
