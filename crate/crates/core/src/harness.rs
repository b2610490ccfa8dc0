//! Experiment orchestration: synthetic data, dataset conditions, the
//! methods × conditions accuracy grid and its text rendering.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::clustering::{fuzzy_cmeans_fit, kmeans_restarts, nearest_center, pam_fit};
use crate::config::KvConfig;
use crate::consensus::{
    mlncf, rcfm, write_ensemble_config, BaseMethod, EnsembleConfig, InitPolicy, MaintenanceConfig,
};
use crate::dataset::{clustering_accuracy, Dataset, Partition};
use crate::error::{Error, Result, StageExt};
use crate::maintenance::{DistanceModel, ExponentMode, SoftDbscanConfig};
use crate::rng::{derive_seed, seeded};
use crate::speech::{mix_at_snr, read_wav, utterance_features, MfccConfig, Signal};

/// Gaussian blob generator settings.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobSpec {
    /// Blob points, shared round-robin among the `k` blobs.
    pub n: usize,
    pub k: usize,
    pub dim: usize,
    pub sigma: f64,
    /// Minimum pairwise distance between blob centers.
    pub separation: f64,
    /// `round(n·outlier_frac)` extra uniform points with no label.
    pub outlier_frac: f64,
    /// `round(n·duplicate_frac)` extra exact copies of random blob points.
    pub duplicate_frac: f64,
}

impl BlobSpec {
    pub fn new(n: usize, k: usize, dim: usize, sigma: f64, separation: f64) -> Self {
        BlobSpec {
            n,
            k,
            dim,
            sigma,
            separation,
            outlier_frac: 0.0,
            duplicate_frac: 0.0,
        }
    }

    pub fn outliers(mut self, frac: f64) -> Self {
        self.outlier_frac = frac;
        self
    }

    pub fn duplicates(mut self, frac: f64) -> Self {
        self.duplicate_frac = frac;
        self
    }
}

fn check_fraction(name: &str, f: f64) -> Result<()> {
    if !(0.0..1.0).contains(&f) {
        return Err(Error::invalid(format!("{name} = {f} must lie in [0, 1)")));
    }
    Ok(())
}

fn count_of(n: usize, frac: f64) -> usize {
    (n as f64 * frac).round() as usize
}

/// Centers placed by rejection sampling in a cube that grows until `k`
/// centers with the required spacing fit.
fn blob_centers(k: usize, dim: usize, separation: f64, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let per_axis = (k as f64).powf(1.0 / dim as f64).ceil().max(1.0);
    let mut side = separation * per_axis * 1.5;
    loop {
        let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
        let mut tries = 0;
        while centers.len() < k && tries < 2000 {
            tries += 1;
            let c: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..side)).collect();
            let far = centers.iter().all(|o| {
                o.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() >= separation
            });
            if far {
                centers.push(c);
            }
        }
        if centers.len() == k {
            return centers;
        }
        side *= 1.25;
    }
}

/// Seeded Gaussian blobs with optional uniform outliers and exact duplicates.
/// Rows are shuffled; outliers carry no label.
pub fn synth_blobs(spec: &BlobSpec, seed: u64) -> Result<Dataset> {
    if spec.k == 0 || spec.dim == 0 {
        return Err(Error::invalid("k and dim must be positive"));
    }
    if spec.k > spec.n {
        return Err(Error::invalid(format!("k = {} exceeds n = {}", spec.k, spec.n)));
    }
    if !(spec.sigma >= 0.0) || !(spec.separation >= 0.0) {
        return Err(Error::invalid("sigma and separation must be non-negative"));
    }
    check_fraction("outlier_frac", spec.outlier_frac)?;
    check_fraction("duplicate_frac", spec.duplicate_frac)?;

    let mut rng = seeded(seed);
    let centers = blob_centers(spec.k, spec.dim, spec.separation, &mut rng);
    let noise = Normal::new(0.0, spec.sigma).expect("sigma checked");
    let mut rows: Vec<(Vec<f64>, Option<usize>)> = (0..spec.n)
        .map(|i| {
            let c = i % spec.k;
            let p = centers[c].iter().map(|&x| x + noise.sample(&mut rng)).collect();
            (p, Some(c))
        })
        .collect();

    let (lo, hi) = bounding_box(rows.iter().map(|r| r.0.as_slice()), spec.dim);
    let margin = spec.separation / 2.0;
    for _ in 0..count_of(spec.n, spec.outlier_frac) {
        let p = (0..spec.dim)
            .map(|d| rng.random_range(lo[d] - margin..=hi[d] + margin))
            .collect();
        rows.push((p, None));
    }
    for _ in 0..count_of(spec.n, spec.duplicate_frac) {
        let src = rng.random_range(0..spec.n);
        rows.push(rows[src].clone());
    }
    rows.shuffle(&mut rng);
    to_dataset(rows, spec.dim)
}

fn bounding_box<'a>(rows: impl Iterator<Item = &'a [f64]>, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for r in rows {
        for d in 0..dim {
            lo[d] = lo[d].min(r[d]);
            hi[d] = hi[d].max(r[d]);
        }
    }
    (lo, hi)
}

fn to_dataset(rows: Vec<(Vec<f64>, Option<usize>)>, dim: usize) -> Result<Dataset> {
    let n = rows.len();
    let mut flat = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (p, l) in rows {
        flat.extend(p);
        labels.push(l);
    }
    let points = Array2::from_shape_vec((n, dim), flat).map_err(|e| Error::shape(e.to_string()))?;
    let ids = (0..n).map(|i| format!("p{i}")).collect();
    Dataset::new(points, ids, Some(labels))
}

/// Appends `round(n·frac)` unlabeled points drawn uniformly from the data's
/// bounding box, widened by 10% per side.
pub fn inject_outliers(data: &Dataset, frac: f64, seed: u64) -> Result<Dataset> {
    check_fraction("outlier_frac", frac)?;
    let count = count_of(data.len(), frac);
    if count == 0 {
        return Ok(data.clone());
    }
    let dim = data.dim();
    let rows: Vec<Vec<f64>> = data.points().rows().into_iter().map(|r| r.to_vec()).collect();
    let (lo, hi) = bounding_box(rows.iter().map(Vec::as_slice), dim);
    let mut rng = seeded(seed);
    let labels: Vec<Option<usize>> = match data.labels() {
        Some(l) => l.to_vec(),
        None => vec![None; data.len()],
    };
    let mut all: Vec<(Vec<f64>, Option<usize>)> = rows.into_iter().zip(labels).collect();
    for _ in 0..count {
        let p = (0..dim)
            .map(|d| {
                let pad = 0.1 * (hi[d] - lo[d]);
                rng.random_range(lo[d] - pad..=hi[d] + pad)
            })
            .collect();
        all.push((p, None));
    }
    let mut ids: Vec<String> = data.ids().to_vec();
    ids.extend((0..count).map(|i| format!("outlier{i}")));
    let n = all.len();
    let (pts, labels): (Vec<Vec<f64>>, Vec<Option<usize>>) = all.into_iter().unzip();
    let points = Array2::from_shape_vec((n, dim), pts.concat()).map_err(|e| Error::shape(e.to_string()))?;
    Dataset::new(points, ids, Some(labels))
}

/// `*.wav` files of a directory, sorted by name.
pub fn wav_files(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::invalid(format!("no .wav files in {}", dir.display())));
    }
    Ok(files)
}

/// Digit label from a file name such as `7_speaker_3.wav`: the leading run
/// of ASCII digits, if any.
pub fn label_from_name(path: &Path) -> Option<usize> {
    let stem = path.file_stem()?.to_str()?;
    let digits: String = stem.chars().take_while(char::is_ascii_digit).collect();
    digits.parse().ok()
}

/// Noise to mix into every utterance before feature extraction.
#[derive(Debug, Clone)]
pub struct NoiseMix<'a> {
    pub noise: &'a Signal,
    pub snr_db: f64,
    pub seed: u64,
}

/// One pooled feature row per WAV file, labeled from the file name. Ids are
/// the file stems.
pub fn features_from_wavs(files: &[PathBuf], cfg: &MfccConfig, mix: Option<NoiseMix<'_>>) -> Result<Dataset> {
    let rows: Vec<Vec<f64>> = files
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            let speech = read_wav(f)?;
            let signal = match &mix {
                Some(m) => mix_at_snr(&speech, m.noise, m.snr_db, derive_seed(m.seed, i as u64))?.mixed,
                None => speech,
            };
            utterance_features(&signal, cfg)
                .map(|v| v.to_vec())
                .stage(&f.display().to_string())
        })
        .collect::<Result<_>>()?;
    let dim = rows[0].len();
    let points = Array2::from_shape_vec((rows.len(), dim), rows.concat()).map_err(|e| Error::shape(e.to_string()))?;
    let ids = files
        .iter()
        .map(|f| f.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned()))
        .collect();
    let labels: Vec<Option<usize>> = files.iter().map(|f| label_from_name(f)).collect();
    let labels = labels.iter().any(Option::is_some).then_some(labels);
    Dataset::new(points, ids, labels)
}

/// A method that can fill a row of the report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HarnessMethod {
    Base(BaseMethod),
    Mlncf,
    Rcfm,
}

impl HarnessMethod {
    pub fn name(self) -> &'static str {
        match self {
            HarnessMethod::Base(b) => b.name(),
            HarnessMethod::Mlncf => "mlncf",
            HarnessMethod::Rcfm => "rcfm",
        }
    }

    /// Stable per-method tag for seed derivation, independent of list order.
    fn tag(self) -> u64 {
        match self {
            HarnessMethod::Base(BaseMethod::KMeans) => 1,
            HarnessMethod::Base(BaseMethod::Pam) => 2,
            HarnessMethod::Base(BaseMethod::FuzzyCMeans) => 3,
            HarnessMethod::Mlncf => 4,
            HarnessMethod::Rcfm => 5,
        }
    }
}

impl std::str::FromStr for HarnessMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mlncf" | "mlcf" => Ok(HarnessMethod::Mlncf),
            "rcfm" => Ok(HarnessMethod::Rcfm),
            other => other.parse().map(HarnessMethod::Base),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Synthetic(BlobSpec),
    Csv(PathBuf),
    Wav {
        speech_dir: PathBuf,
        noise: Option<PathBuf>,
        mfcc: MfccConfig,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub name: String,
    pub outlier_frac: f64,
    pub duplicate_frac: f64,
    /// Mix noise into WAV sources at this SNR.
    pub snr_db: Option<f64>,
    /// Noise file for this condition, overriding the source default.
    pub noise: Option<PathBuf>,
}

impl Condition {
    pub fn clean(name: &str) -> Self {
        Condition {
            name: name.to_string(),
            outlier_frac: 0.0,
            duplicate_frac: 0.0,
            snr_db: None,
            noise: None,
        }
    }

    /// `name key=value ...` with keys `outliers`, `duplicates`, `snr` and `noise`.
    fn parse(text: &str, kv: &KvConfig) -> Result<Condition> {
        let mut parts = text.split_whitespace();
        let name = parts.next().ok_or_else(|| Error::invalid("empty condition"))?;
        let mut c = Condition::clean(name);
        for p in parts {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("condition {name}: expected key=value, found {p:?}")))?;
            let num = || {
                v.parse::<f64>()
                    .map_err(|e| Error::invalid(format!("condition {name}: {k}: {e}")))
            };
            match k {
                "outliers" | "outlier_frac" => c.outlier_frac = num()?,
                "duplicates" | "duplicate_frac" => c.duplicate_frac = num()?,
                "snr" | "snr_db" => c.snr_db = Some(num()?),
                "noise" => c.noise = Some(kv.path(v)),
                other => return Err(Error::invalid(format!("condition {name}: unknown setting {other:?}"))),
            }
        }
        check_fraction("outliers", c.outlier_frac)?;
        check_fraction("duplicates", c.duplicate_frac)?;
        Ok(c)
    }

    fn describe(&self) -> String {
        let mut s = format!(
            "{} outliers={:?} duplicates={:?}",
            self.name, self.outlier_frac, self.duplicate_frac
        );
        if let Some(snr) = self.snr_db {
            write!(s, " snr={snr:?}").unwrap();
        }
        if let Some(n) = &self.noise {
            write!(s, " noise={}", n.display()).unwrap();
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub source: Source,
    pub conditions: Vec<Condition>,
    pub methods: Vec<HarnessMethod>,
    pub k: usize,
    /// Run seeds; every cell is the median over them.
    pub seeds: Vec<u64>,
    /// Settings for mlncf and rcfm. Its seeds are mixed with each run seed.
    pub ensemble: EnsembleConfig,
    /// Fraction of rows used for fitting; the rest are scored. `1.0` scores
    /// the fitted rows themselves.
    pub split: f64,
    pub out: Option<PathBuf>,
}

const ENSEMBLE_KEYS: &[&str] = &[
    "lr",
    "epochs",
    "hidden",
    "init",
    "standardize",
    "kmeans.*",
    "pam.*",
    "fcm.*",
    "maintenance.*",
];

/// Reads ensemble settings. `methods_key` and `seeds_key` name the keys
/// holding the base methods and ensemble seeds.
pub fn ensemble_from_kv(kv: &KvConfig, methods_key: &str, seeds_key: &str) -> Result<EnsembleConfig> {
    let methods = kv
        .get_list(methods_key)
        .into_iter()
        .map(str::parse)
        .collect::<Result<Vec<BaseMethod>>>()?;
    let methods = if methods.is_empty() {
        vec![BaseMethod::KMeans, BaseMethod::Pam, BaseMethod::FuzzyCMeans]
    } else {
        methods
    };
    let mut seeds: Vec<u64> = kv.parse_list(seeds_key)?;
    if seeds.is_empty() {
        seeds = vec![1, 2, 3, 4, 5];
    }
    let k: usize = kv.require("k")?;
    let mut cfg = EnsembleConfig::new(methods, k, seeds);
    if kv.contains("hidden") {
        cfg.hidden = Some(kv.parse_list("hidden")?);
    }
    cfg.lr = kv.parse_or("lr", cfg.lr)?;
    cfg.epochs = kv.parse_or("epochs", cfg.epochs)?;
    cfg.standardize = kv.parse_or("standardize", cfg.standardize)?;
    cfg.init = match kv.get("init") {
        None | Some("shared") => InitPolicy::Shared,
        Some("per_partition") => InitPolicy::PerPartition,
        Some(other) => return Err(Error::invalid(format!("init: unknown policy {other:?}"))),
    };
    let b = &mut cfg.base;
    b.kmeans_max_iter = kv.parse_or("kmeans.max_iter", b.kmeans_max_iter)?;
    b.kmeans_tol = kv.parse_or("kmeans.tol", b.kmeans_tol)?;
    b.kmeans_restarts = kv.parse_or("kmeans.restarts", b.kmeans_restarts)?;
    b.pam_max_iter = kv.parse_or("pam.max_iter", b.pam_max_iter)?;
    b.fcm_m = kv.parse_or("fcm.m", b.fcm_m)?;
    b.fcm_tol = kv.parse_or("fcm.tol", b.fcm_tol)?;
    b.fcm_max_iter = kv.parse_or("fcm.max_iter", b.fcm_max_iter)?;
    if kv.contains("maintenance.eps") {
        cfg.maintenance = Some(maintenance_from_kv(kv)?);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn maintenance_from_kv(kv: &KvConfig) -> Result<MaintenanceConfig> {
    let mut soft = SoftDbscanConfig::new(kv.require("maintenance.eps")?, kv.parse_or("maintenance.min_pts", 4)?);
    soft.m = kv.parse_or("maintenance.m", soft.m)?;
    soft.xi = kv.parse_or("maintenance.xi", soft.xi)?;
    soft.max_iter = kv.parse_or("maintenance.max_iter", soft.max_iter)?;
    soft.exponent_mode = match kv.get("maintenance.exponent_mode") {
        None | Some("standard") => ExponentMode::Standard,
        Some("ratio") => ExponentMode::Ratio,
        Some(other) => return Err(Error::invalid(format!("unknown exponent mode {other:?}"))),
    };
    soft.distance = match kv.get("maintenance.distance") {
        None | Some("mahalanobis") => DistanceModel::FuzzyMahalanobis,
        Some("euclidean") => DistanceModel::Euclidean,
        Some(other) => return Err(Error::invalid(format!("unknown distance model {other:?}"))),
    };
    soft.cov_reg = kv.parse_value("maintenance.cov_reg")?;
    soft.validate()?;
    Ok(MaintenanceConfig {
        soft,
        dedup_radius: kv.parse_or("maintenance.dedup_radius", 0.0)?,
    })
}

/// Keys accepted by a run configuration for the `consensus` and `rcfm` commands.
pub fn run_config_keys() -> Vec<&'static str> {
    let mut k = vec!["k", "methods", "seeds"];
    k.extend(ENSEMBLE_KEYS);
    k
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
        ExperimentConfig::from_kv(&KvConfig::load(path)?)
    }

    pub fn parse(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::from_kv(&KvConfig::parse(text)?)
    }

    pub fn from_kv(kv: &KvConfig) -> Result<ExperimentConfig> {
        let mut known = vec![
            "source", "n", "dim", "sigma", "separation", "csv", "speech_dir", "noise", "mfcc.*",
            "condition", "methods", "k", "seeds", "ensemble.methods", "ensemble.seeds", "split", "out",
        ];
        known.extend(ENSEMBLE_KEYS);
        kv.reject_unknown(&known)?;

        let k: usize = kv.require("k")?;
        let source = match kv.get("source").unwrap_or("synthetic") {
            "synthetic" => Source::Synthetic(BlobSpec::new(
                kv.parse_or("n", 150)?,
                k,
                kv.parse_or("dim", 2)?,
                kv.parse_or("sigma", 0.5)?,
                kv.parse_or("separation", 6.0)?,
            )),
            "csv" => Source::Csv(kv.path(
                kv.get("csv")
                    .ok_or_else(|| Error::invalid("source = csv needs `csv = <path>`"))?,
            )),
            "wav" => {
                let d = MfccConfig::default();
                let mfcc = MfccConfig {
                    frame_len: kv.parse_or("mfcc.frame_len", d.frame_len)?,
                    frame_shift: kv.parse_or("mfcc.frame_shift", d.frame_shift)?,
                    n_filters: kv.parse_or("mfcc.n_filters", d.n_filters)?,
                    n_ceps: kv.parse_or("mfcc.n_ceps", d.n_ceps)?,
                    pre_emphasis: kv.parse_or("mfcc.pre_emphasis", d.pre_emphasis)?,
                    log_floor: kv.parse_or("mfcc.log_floor", d.log_floor)?,
                    delta_width: kv.parse_or("mfcc.delta_width", d.delta_width)?,
                };
                mfcc.validate()?;
                Source::Wav {
                    speech_dir: kv.path(
                        kv.get("speech_dir")
                            .ok_or_else(|| Error::invalid("source = wav needs `speech_dir = <dir>`"))?,
                    ),
                    noise: kv.get("noise").map(|p| kv.path(p)),
                    mfcc,
                }
            }
            other => return Err(Error::invalid(format!("unknown source {other:?}"))),
        };
        let conditions = kv
            .get_all("condition")
            .into_iter()
            .map(|c| Condition::parse(c, kv))
            .collect::<Result<Vec<_>>>()?;
        let methods = kv
            .get_list("methods")
            .into_iter()
            .map(str::parse)
            .collect::<Result<Vec<HarnessMethod>>>()?;
        let seeds: Vec<u64> = kv.parse_list("seeds")?;
        let cfg = ExperimentConfig {
            source,
            conditions,
            methods,
            k,
            seeds: if seeds.is_empty() { vec![1] } else { seeds },
            ensemble: ensemble_from_kv(kv, "ensemble.methods", "ensemble.seeds")?,
            split: kv.parse_or("split", 0.7)?,
            out: kv.get("out").map(|p| kv.path(p)),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.conditions.is_empty() {
            return Err(Error::invalid("at least one condition is required"));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("at least one method is required"));
        }
        let mut names: Vec<&str> = self.conditions.iter().map(|c| c.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("condition names must be unique"));
        }
        if self.methods.contains(&HarnessMethod::Rcfm) && self.ensemble.maintenance.is_none() {
            return Err(Error::invalid("rcfm needs maintenance settings (maintenance.eps, ...)"));
        }
        if !(self.split > 0.0 && self.split <= 1.0) {
            return Err(Error::invalid(format!("split = {} must lie in (0, 1]", self.split)));
        }
        if self.ensemble.k != self.k {
            return Err(Error::invalid("ensemble k differs from experiment k"));
        }
        if let Source::Synthetic(b) = &self.source {
            if b.k != self.k {
                return Err(Error::invalid("synthetic k differs from experiment k"));
            }
        }
        for c in &self.conditions {
            if c.snr_db.is_some() && !matches!(self.source, Source::Wav { .. }) {
                return Err(Error::invalid(format!("condition {}: snr needs a wav source", c.name)));
            }
            if let (Some(_), Source::Wav { noise, .. }) = (c.snr_db, &self.source) {
                if c.noise.is_none() && noise.is_none() {
                    return Err(Error::invalid(format!("condition {}: snr given but no noise file", c.name)));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub methods: Vec<String>,
    pub conditions: Vec<String>,
    /// `cells[m][c]`: accuracy percentage of method `m` under condition `c`.
    pub cells: Vec<Vec<Option<f64>>>,
}

impl ReportTable {
    pub fn new(methods: Vec<String>, conditions: Vec<String>) -> Self {
        let cells = vec![vec![None; conditions.len()]; methods.len()];
        ReportTable {
            methods,
            conditions,
            cells,
        }
    }

    pub fn set(&mut self, method: usize, condition: usize, value: f64) {
        self.cells[method][condition] = Some(value);
    }

    pub fn get(&self, method: &str, condition: &str) -> Option<f64> {
        let m = self.methods.iter().position(|x| x == method)?;
        let c = self.conditions.iter().position(|x| x == condition)?;
        self.cells[m][c]
    }

    pub fn is_complete(&self) -> bool {
        self.cells.len() == self.methods.len()
            && self
                .cells
                .iter()
                .all(|r| r.len() == self.conditions.len() && r.iter().all(|c| c.is_some_and(f64::is_finite)))
    }
}

/// Methods as rows, conditions as columns, percentages with two decimals.
pub fn format_table(t: &ReportTable) -> Result<String> {
    if !t.is_complete() {
        return Err(Error::invalid("report table has missing cells"));
    }
    let cells: Vec<Vec<String>> = t
        .cells
        .iter()
        .map(|r| r.iter().map(|c| format!("{:.2}", c.unwrap())).collect())
        .collect();
    let first = t.methods.iter().map(String::len).chain([6]).max().unwrap();
    let widths: Vec<usize> = (0..t.conditions.len())
        .map(|j| cells.iter().map(|r| r[j].len()).chain([t.conditions[j].len()]).max().unwrap())
        .collect();
    let mut out = String::new();
    write!(out, "{:<first$}", "method").unwrap();
    for (c, w) in t.conditions.iter().zip(&widths) {
        write!(out, "  {c:>w$}").unwrap();
    }
    out.push('\n');
    for (m, row) in t.methods.iter().zip(&cells) {
        write!(out, "{m:<first$}").unwrap();
        for (v, w) in row.iter().zip(&widths) {
            write!(out, "  {v:>w$}").unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub table: ReportTable,
    pub manifest: String,
}

struct Prepared {
    dataset_seed: u64,
    data: Dataset,
    train: Vec<usize>,
    test: Vec<usize>,
}

struct CellRun {
    accuracy: f64,
    scored: usize,
}

const SPLIT_TAG: u64 = 0x5011;
const OUTLIER_TAG: u64 = 0x0071;

fn load_condition(cfg: &ExperimentConfig, cond: &Condition, dataset_seed: u64) -> Result<Dataset> {
    let data = match &cfg.source {
        Source::Synthetic(spec) => {
            let spec = spec.clone().outliers(cond.outlier_frac).duplicates(cond.duplicate_frac);
            return synth_blobs(&spec, dataset_seed);
        }
        Source::Csv(path) => crate::dataset::load_csv(path)?,
        Source::Wav {
            speech_dir,
            noise,
            mfcc,
        } => {
            let files = wav_files(speech_dir)?;
            match cond.snr_db {
                None => features_from_wavs(&files, mfcc, None)?,
                Some(snr_db) => {
                    let path = cond.noise.as_ref().or(noise.as_ref()).expect("validated");
                    let noise = read_wav(path)?;
                    let mix = NoiseMix {
                        noise: &noise,
                        snr_db,
                        seed: dataset_seed,
                    };
                    features_from_wavs(&files, mfcc, Some(mix))?
                }
            }
        }
    };
    if cond.duplicate_frac > 0.0 {
        return Err(Error::invalid(format!(
            "condition {}: duplicates are only generated for synthetic sources",
            cond.name
        )));
    }
    inject_outliers(&data, cond.outlier_frac, derive_seed(dataset_seed, OUTLIER_TAG))
}

fn prepare(cfg: &ExperimentConfig, ci: usize, seed: u64) -> Result<Prepared> {
    let cond = &cfg.conditions[ci];
    let dataset_seed = derive_seed(seed, ci as u64);
    let data = load_condition(cfg, cond, dataset_seed)?;
    if data.labels().is_none() {
        return Err(Error::invalid("scoring needs ground-truth labels"));
    }
    let n = data.len();
    let (train, test) = if cfg.split >= 1.0 {
        ((0..n).collect(), (0..n).collect())
    } else {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut seeded(derive_seed(dataset_seed, SPLIT_TAG)));
        let cut = ((n as f64 * cfg.split).round() as usize).clamp(1, n.saturating_sub(1).max(1));
        let (a, b) = idx.split_at(cut);
        let (mut a, mut b) = (a.to_vec(), b.to_vec());
        a.sort_unstable();
        b.sort_unstable();
        (a, b)
    };
    if train.len() < cfg.k {
        return Err(Error::invalid(format!(
            "training split has {} rows for k = {}",
            train.len(),
            cfg.k
        )));
    }
    Ok(Prepared {
        dataset_seed,
        data,
        train,
        test,
    })
}

/// Fits `method` on the training rows and returns predicted labels for the test rows.
fn predict(cfg: &ExperimentConfig, method: HarnessMethod, p: &Prepared) -> Result<Vec<usize>> {
    let train = p.data.select(&p.train)?;
    let test = p.data.select(&p.test)?;
    let seed = derive_seed(p.dataset_seed, 1000 + method.tag());
    let b = &cfg.ensemble.base;
    match method {
        HarnessMethod::Base(BaseMethod::KMeans) => {
            let fit = kmeans_restarts(&train, cfg.k, seed, b.kmeans_max_iter, b.kmeans_tol, b.kmeans_restarts)?;
            Ok(nearest_center(test.points(), fit.centers.view()))
        }
        HarnessMethod::Base(BaseMethod::Pam) => {
            let fit = pam_fit(&train, cfg.k, seed, b.pam_max_iter)?;
            let medoids = train.select(&fit.medoids)?;
            Ok(nearest_center(test.points(), medoids.points()))
        }
        HarnessMethod::Base(BaseMethod::FuzzyCMeans) => {
            let fit = fuzzy_cmeans_fit(&train, cfg.k, b.fcm_m, b.fcm_tol, seed, b.fcm_max_iter)?;
            Ok(nearest_center(test.points(), fit.centers.view()))
        }
        HarnessMethod::Mlncf | HarnessMethod::Rcfm => {
            let ens = run_ensemble_config(cfg, p.dataset_seed);
            let result = if method == HarnessMethod::Mlncf {
                mlncf(&train, &ens)?
            } else {
                rcfm(&train, &ens)?
            };
            result.predict_units(test.points())
        }
    }
}

/// Ensemble settings for one run: every configured seed mixed with the run's
/// dataset seed.
fn run_ensemble_config(cfg: &ExperimentConfig, dataset_seed: u64) -> EnsembleConfig {
    let mut ens = cfg.ensemble.clone();
    ens.seeds = cfg.ensemble.seeds.iter().map(|&s| derive_seed(dataset_seed, s)).collect();
    ens
}

fn score(cfg: &ExperimentConfig, method: HarnessMethod, p: &Prepared) -> Result<CellRun> {
    let pred = predict(cfg, method, p)?;
    let labels = p.data.labels().expect("checked in prepare");
    let (pred, truth): (Vec<usize>, Vec<usize>) = p
        .test
        .iter()
        .zip(pred)
        .filter_map(|(&i, l)| labels[i].map(|t| (l, t)))
        .unzip();
    if truth.is_empty() {
        return Err(Error::invalid("no labeled rows to score"));
    }
    let k = pred.iter().max().map_or(1, |m| m + 1).max(cfg.k);
    let accuracy = clustering_accuracy(&Partition::new(pred, k)?, &truth)?;
    Ok(CellRun {
        accuracy,
        scored: truth.len(),
    })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Runs every (method, condition, seed) cell and reports the median accuracy
/// (percent) over seeds. Unlabeled rows never count towards accuracy.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let grid: Vec<(usize, u64)> = (0..cfg.conditions.len())
        .flat_map(|ci| cfg.seeds.iter().map(move |&s| (ci, s)))
        .collect();
    let prepared: Vec<Prepared> = grid
        .par_iter()
        .map(|&(ci, s)| prepare(cfg, ci, s).stage(&format!("condition {}, seed {s}", cfg.conditions[ci].name)))
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, usize)> = (0..cfg.methods.len())
        .flat_map(|m| (0..prepared.len()).map(move |g| (m, g)))
        .collect();
    let runs: Vec<CellRun> = jobs
        .par_iter()
        .map(|&(m, g)| {
            let method = cfg.methods[m];
            let (ci, s) = grid[g];
            score(cfg, method, &prepared[g])
                .stage(&format!("{} on {}, seed {s}", method.name(), cfg.conditions[ci].name))
        })
        .collect::<Result<_>>()?;

    let mut table = ReportTable::new(
        cfg.methods.iter().map(|m| m.name().to_string()).collect(),
        cfg.conditions.iter().map(|c| c.name.clone()).collect(),
    );
    let mut manifest = experiment_header(cfg);
    for (g, p) in prepared.iter().enumerate() {
        let (ci, s) = grid[g];
        let labels = p.data.labels().expect("checked");
        let key = format!("run.{}.seed{s}", cfg.conditions[ci].name);
        writeln!(manifest, "{key}.dataset_seed = {}", p.dataset_seed).unwrap();
        writeln!(manifest, "{key}.rows = {}", p.data.len()).unwrap();
        writeln!(manifest, "{key}.train_rows = {}", p.train.len()).unwrap();
        writeln!(manifest, "{key}.test_rows = {}", p.test.len()).unwrap();
        let excluded = p.test.iter().filter(|&&i| labels[i].is_none()).count();
        writeln!(manifest, "{key}.excluded_unlabeled = {excluded}").unwrap();
        let ens = run_ensemble_config(cfg, p.dataset_seed);
        writeln!(manifest, "{key}.ensemble_seeds = {}", join(&ens.seeds)).unwrap();
    }
    for (m, method) in cfg.methods.iter().enumerate() {
        for (ci, cond) in cfg.conditions.iter().enumerate() {
            let mut accs = Vec::with_capacity(cfg.seeds.len());
            for (si, s) in cfg.seeds.iter().enumerate() {
                let run = &runs[m * prepared.len() + ci * cfg.seeds.len() + si];
                let key = format!("cell.{}.{}.seed{s}", method.name(), cond.name);
                writeln!(manifest, "{key}.accuracy = {:?}", run.accuracy).unwrap();
                writeln!(manifest, "{key}.scored = {}", run.scored).unwrap();
                accs.push(run.accuracy * 100.0);
            }
            let med = median(&mut accs);
            writeln!(manifest, "cell.{}.{}.median_percent = {med:?}", method.name(), cond.name).unwrap();
            table.set(m, ci, med);
        }
    }
    Ok(ExperimentReport { table, manifest })
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

fn experiment_header(cfg: &ExperimentConfig) -> String {
    let mut out = String::new();
    match &cfg.source {
        Source::Synthetic(b) => writeln!(
            out,
            "source = synthetic n={} k={} dim={} sigma={:?} separation={:?}",
            b.n, b.k, b.dim, b.sigma, b.separation
        )
        .unwrap(),
        Source::Csv(p) => writeln!(out, "source = csv {}", p.display()).unwrap(),
        Source::Wav {
            speech_dir,
            noise,
            mfcc,
        } => {
            writeln!(out, "source = wav {}", speech_dir.display()).unwrap();
            if let Some(n) = noise {
                writeln!(out, "noise = {}", n.display()).unwrap();
            }
            writeln!(out, "mfcc = {mfcc:?}").unwrap();
        }
    }
    for c in &cfg.conditions {
        writeln!(out, "condition = {}", c.describe()).unwrap();
    }
    let methods: Vec<&str> = cfg.methods.iter().map(|m| m.name()).collect();
    writeln!(out, "methods = {}", methods.join(" ")).unwrap();
    writeln!(out, "k = {}", cfg.k).unwrap();
    writeln!(out, "seeds = {}", join(&cfg.seeds)).unwrap();
    writeln!(out, "split = {:?}", cfg.split).unwrap();
    writeln!(out, "scoring = clustering accuracy on test rows; rows without a label are excluded").unwrap();
    let mut ens = String::new();
    write_ensemble_config(&mut ens, &cfg.ensemble);
    for line in ens.lines() {
        writeln!(out, "ensemble.{line}").unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(methods: &str, conditions: &[&str], seeds: &str) -> ExperimentConfig {
        let mut text = format!("k = 3\nn = 90\nmethods = {methods}\nseeds = {seeds}\nepochs = 200\n");
        for c in conditions {
            writeln!(text, "condition = {c}").unwrap();
        }
        text.push_str("ensemble.seeds = 1 2\nmaintenance.eps = 0.8\nmaintenance.min_pts = 4\n");
        ExperimentConfig::parse(&text).unwrap()
    }

    #[test]
    fn blob_contracts() {
        let spec = BlobSpec::new(100, 3, 2, 0.5, 6.0);
        let d = synth_blobs(&spec, 3).unwrap();
        assert_eq!(d.len(), 100);
        assert!(d.labels().unwrap().iter().all(Option::is_some));
        assert_eq!(d, synth_blobs(&spec, 3).unwrap());
        assert_ne!(d, synth_blobs(&spec, 4).unwrap());

        let noisy = synth_blobs(&spec.clone().outliers(0.1), 5).unwrap();
        assert_eq!(noisy.labels().unwrap().iter().filter(|l| l.is_none()).count(), 10);
        assert_eq!(noisy.len(), 110);

        let dup = synth_blobs(&spec.clone().duplicates(0.05), 5).unwrap();
        assert_eq!(dup.len(), 105);
        let rows: Vec<Vec<u64>> = dup
            .points()
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|v| v.to_bits()).collect())
            .collect();
        let mut uniq = rows.clone();
        uniq.sort();
        uniq.dedup();
        assert!(uniq.len() <= 100);

        assert!(synth_blobs(&BlobSpec::new(2, 3, 2, 0.5, 6.0), 1).is_err());
        assert!(synth_blobs(&spec.clone().outliers(1.0), 1).is_err());
        assert!(synth_blobs(&spec.clone().duplicates(-0.1), 1).is_err());
    }

    #[test]
    fn blob_centers_are_separated() {
        let mut rng = seeded(9);
        for dim in 1..4 {
            let c = blob_centers(6, dim, 5.0, &mut rng);
            for i in 0..6 {
                for j in 0..i {
                    let d: f64 = c[i].iter().zip(&c[j]).map(|(a, b)| (a - b) * (a - b)).sum();
                    assert!(d.sqrt() >= 5.0);
                }
            }
        }
    }

    #[test]
    fn wav_names_give_labels() {
        assert_eq!(label_from_name(Path::new("dir/7_jackson_3.wav")), Some(7));
        assert_eq!(label_from_name(Path::new("12-x.wav")), Some(12));
        assert_eq!(label_from_name(Path::new("noise.wav")), None);
    }

    #[test]
    fn table_rendering() {
        let mut t = ReportTable::new(vec!["mlncf".into(), "kmeans".into()], vec!["Subway".into()]);
        t.set(0, 0, 81.02);
        assert!(format_table(&t).is_err());
        t.set(1, 0, 95.0);
        let s = format_table(&t).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("method") && lines[0].ends_with("Subway"));
        assert!(lines[1].starts_with("mlncf") && lines[1].ends_with("81.02"));
        assert!(lines[2].ends_with("95.00"));
        assert!(lines.iter().all(|l| l.len() == lines[0].len()));

        let mut one = ReportTable::new(vec!["pam".into()], vec!["clean".into()]);
        one.set(0, 0, 100.0);
        assert_eq!(format_table(&one).unwrap().lines().count(), 2);
    }

    #[test]
    fn config_errors() {
        assert!(ExperimentConfig::parse("k = 3\nmethods = kmeans\n").is_err());
        assert!(ExperimentConfig::parse("k = 3\ncondition = a\n").is_err());
        assert!(ExperimentConfig::parse("k = 3\ncondition = a\nmethods = kmeans\nbogus = 1\n").is_err());
        assert!(ExperimentConfig::parse("k = 3\ncondition = a\nmethods = rcfm\n").is_err());
        assert!(ExperimentConfig::parse("k = 3\ncondition = a\ncondition = a\nmethods = pam\n").is_err());
        assert!(ExperimentConfig::parse("k = 3\ncondition = a snr=0\nmethods = pam\n").is_err());
        assert!(ExperimentConfig::parse("k = 3\ncondition = a outliers=2\nmethods = pam\n").is_err());
        assert!(ExperimentConfig::parse("k = 3\ncondition = a\nmethods = magic\n").is_err());
        let ok = ExperimentConfig::parse("k = 3\ncondition = a outliers=0.1\nmethods = pam kmeans\n").unwrap();
        assert_eq!(ok.conditions[0].outlier_frac, 0.1);
        assert_eq!(ok.methods.len(), 2);
        assert_eq!(ok.split, 0.7);
    }

    #[test]
    fn grid_is_complete_and_reproducible() {
        let cfg = quick("kmeans pam", &["clean", "noisy outliers=0.1"], "1 2");
        let a = run_experiment(&cfg).unwrap();
        assert!(a.table.is_complete());
        assert_eq!((a.table.methods.len(), a.table.conditions.len()), (2, 2));
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.table.get("kmeans", "clean").unwrap() >= 95.0, "{}\n{}", format_table(&a.table).unwrap(), a.manifest);
    }

    #[test]
    fn permuting_methods_permutes_rows() {
        let a = run_experiment(&quick("kmeans fuzzy_cmeans mlncf", &["c outliers=0.05"], "3")).unwrap();
        let b = run_experiment(&quick("mlncf kmeans fuzzy_cmeans", &["c outliers=0.05"], "3")).unwrap();
        for m in ["kmeans", "fuzzy_cmeans", "mlncf"] {
            assert_eq!(a.table.get(m, "c"), b.table.get(m, "c"));
        }
    }

    #[test]
    fn transductive_split_scores_every_labeled_row() {
        let mut cfg = quick("kmeans", &["clean"], "1");
        cfg.split = 1.0;
        let r = run_experiment(&cfg).unwrap();
        assert!(r.manifest.contains("cell.kmeans.clean.seed1.scored = 90"));
    }

    #[test]
    fn median_rules() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
