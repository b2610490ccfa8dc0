use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use rcfm::clustering::{dbscan, fuzzy_cmeans_fit, kmeans_restarts, pam_fit};
use rcfm::config::KvConfig;
use rcfm::consensus::{mlncf, rcfm, EnsembleConfig};
use rcfm::dataset::{load_csv, write_csv, Dataset};
use rcfm::harness::{
    ensemble_from_kv, features_from_wavs, format_table, run_config_keys, run_experiment, wav_files,
    ExperimentConfig, NoiseMix,
};
use rcfm::maintenance::{maintain, SoftDbscanConfig};
use rcfm::speech::{mix_at_snr, read_wav, write_wav, MfccConfig};

#[derive(Parser)]
#[command(name = "rcfm", version, about = "Clustering ensembles with network-based consensus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pooled 39-dimensional MFCC features, one CSV row per WAV file.
    Features {
        wav_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Mix this noise into every utterance first.
        #[arg(long, requires = "snr_db")]
        noise: Option<PathBuf>,
        #[arg(long, requires = "noise", allow_hyphen_values = true)]
        snr_db: Option<f64>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Adds noise to speech at a target SNR.
    Mix {
        speech: PathBuf,
        noise: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        snr_db: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Runs one base clusterer and writes `id,label` rows.
    Cluster {
        data: PathBuf,
        #[arg(long, value_enum)]
        method: Method,
        /// Cluster count (kmeans, pam, fuzzy_cmeans).
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 300)]
        max_iter: usize,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        /// Lloyd restarts for kmeans.
        #[arg(long, default_value_t = 10)]
        restarts: usize,
        /// Fuzzifier for fuzzy_cmeans.
        #[arg(long, default_value_t = 2.0)]
        m: f64,
        /// Neighborhood radius for dbscan.
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long, default_value_t = 4)]
        min_pts: usize,
        /// Output CSV; stdout when absent. A manifest goes to `<out>.manifest`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Removes noisy and redundant rows and writes the reduced dataset.
    Maintain {
        data: PathBuf,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        min_pts: usize,
        #[arg(long, default_value_t = 2.5)]
        m: f64,
        #[arg(long, default_value_t = 0.0)]
        dedup_radius: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Network consensus over an ensemble of base partitions.
    Consensus {
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Maintenance followed by network consensus.
    Rcfm {
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Methods × conditions accuracy table.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Report path; overrides `out` in the config. A manifest goes to `<out>.manifest`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Kmeans,
    Pam,
    #[value(name = "fuzzy_cmeans", alias = "fuzzy-cmeans", alias = "fcm")]
    FuzzyCmeans,
    Dbscan,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

fn write_file(path: &Path, text: &str) -> rcfm::Result<()> {
    std::fs::write(path, text).map_err(|e| rcfm::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Writes `body` to `out` (or stdout) and `manifest` next to `out`.
fn emit(out: Option<&Path>, body: &str, manifest: &str) -> rcfm::Result<()> {
    match out {
        Some(p) => {
            write_file(p, body)?;
            write_file(&manifest_path(p), manifest)
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(body.as_bytes()).map_err(|e| rcfm::Error::Io {
                path: "<stdout>".into(),
                source: e,
            })
        }
    }
}

fn labels_csv(data: &Dataset, labels: impl Iterator<Item = Option<usize>>) -> String {
    let mut out = String::from("id,label\n");
    for (id, l) in data.ids().iter().zip(labels) {
        match l {
            Some(l) => writeln!(out, "{id},{l}").unwrap(),
            None => writeln!(out, "{id},-1").unwrap(),
        }
    }
    out
}

fn dataset_csv(data: &Dataset) -> rcfm::Result<String> {
    let mut buf = Vec::new();
    write_csv(data, &mut buf).map_err(|e| rcfm::Error::Io {
        path: "<buffer>".into(),
        source: e,
    })?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

fn run_config(path: &Path) -> rcfm::Result<EnsembleConfig> {
    let kv = KvConfig::load(path)?;
    kv.reject_unknown(&run_config_keys())?;
    ensemble_from_kv(&kv, "methods", "seeds")
}

fn need_k(k: Option<usize>) -> rcfm::Result<usize> {
    k.ok_or_else(|| rcfm::Error::InvalidParameter("--k is required for this method".into()))
}

fn run(cmd: Command) -> rcfm::Result<()> {
    match cmd {
        Command::Features {
            wav_dir,
            out,
            noise,
            snr_db,
            seed,
        } => {
            let files = wav_files(&wav_dir)?;
            let cfg = MfccConfig::default();
            let noise = noise.map(read_wav).transpose()?;
            let mix = noise.as_ref().map(|n| NoiseMix {
                noise: n,
                snr_db: snr_db.expect("clap requires snr_db with noise"),
                seed,
            });
            let data = features_from_wavs(&files, &cfg, mix)?;
            let mut manifest = format!("command = features\nwav_dir = {}\nfiles = {}\n", wav_dir.display(), files.len());
            writeln!(manifest, "mfcc = {cfg:?}").unwrap();
            if let Some(snr) = snr_db {
                writeln!(manifest, "snr_db = {snr:?}\nseed = {seed}").unwrap();
            }
            emit(Some(&out), &dataset_csv(&data)?, &manifest)
        }
        Command::Mix {
            speech,
            noise,
            snr_db,
            out,
            seed,
        } => {
            let s = read_wav(&speech)?;
            let n = read_wav(&noise)?;
            let m = mix_at_snr(&s, &n, snr_db, seed)?;
            if m.clipped > 0 {
                log::warn!("{} samples clipped", m.clipped);
            }
            write_wav(&m.mixed, &out)?;
            let manifest = format!(
                "command = mix\nspeech = {}\nnoise = {}\nsnr_db = {snr_db:?}\nseed = {seed}\ngain = {:?}\nclipped = {}\n",
                speech.display(),
                noise.display(),
                m.gain,
                m.clipped
            );
            write_file(&manifest_path(&out), &manifest)
        }
        Command::Cluster {
            data,
            method,
            k,
            seed,
            max_iter,
            tol,
            restarts,
            m,
            eps,
            min_pts,
            out,
        } => {
            let d = load_csv(&data)?;
            let mut manifest = format!("command = cluster\ndata = {}\nrows = {}\n", data.display(), d.len());
            let labels: Vec<Option<usize>> = match method {
                Method::Kmeans => {
                    let k = need_k(k)?;
                    let fit = kmeans_restarts(&d, k, seed, max_iter, tol, restarts)?;
                    writeln!(
                        manifest,
                        "method = kmeans\nk = {k}\nseed = {seed}\nmax_iter = {max_iter}\ntol = {tol:?}\nrestarts = {restarts}\ncost = {:?}",
                        fit.cost_history.last().copied().unwrap_or(0.0)
                    )
                    .unwrap();
                    fit.partition.labels().iter().map(|&l| Some(l)).collect()
                }
                Method::Pam => {
                    let k = need_k(k)?;
                    let fit = pam_fit(&d, k, seed, max_iter)?;
                    writeln!(
                        manifest,
                        "method = pam\nk = {k}\nseed = {seed}\nmax_iter = {max_iter}\ncost = {:?}",
                        fit.cost_history.last().copied().unwrap_or(0.0)
                    )
                    .unwrap();
                    let ids: Vec<&str> = fit.medoids.iter().map(|&i| d.ids()[i].as_str()).collect();
                    writeln!(manifest, "medoids = {}", ids.join(" ")).unwrap();
                    fit.partition.labels().iter().map(|&l| Some(l)).collect()
                }
                Method::FuzzyCmeans => {
                    let k = need_k(k)?;
                    let fit = fuzzy_cmeans_fit(&d, k, m, tol, seed, max_iter)?;
                    writeln!(
                        manifest,
                        "method = fuzzy_cmeans\nk = {k}\nm = {m:?}\nseed = {seed}\nmax_iter = {max_iter}\ntol = {tol:?}\niterations = {}\nobjective = {:?}",
                        fit.iterations,
                        fit.objective_history.last().copied().unwrap_or(0.0)
                    )
                    .unwrap();
                    fit.memberships.harden().labels().iter().map(|&l| Some(l)).collect()
                }
                Method::Dbscan => {
                    let eps = eps.ok_or_else(|| rcfm::Error::InvalidParameter("--eps is required for dbscan".into()))?;
                    let r = dbscan(&d, eps, min_pts)?;
                    writeln!(
                        manifest,
                        "method = dbscan\neps = {eps:?}\nmin_pts = {min_pts}\nclusters = {}\nnoise = {}\nnoise_label = -1",
                        r.k,
                        r.noise.len()
                    )
                    .unwrap();
                    r.assignment
                }
            };
            emit(out.as_deref(), &labels_csv(&d, labels.into_iter()), &manifest)
        }
        Command::Maintain {
            data,
            eps,
            min_pts,
            m,
            dedup_radius,
            out,
        } => {
            let d = load_csv(&data)?;
            let mut cfg = SoftDbscanConfig::new(eps, min_pts);
            cfg.m = m;
            let r = maintain(&d, &cfg, dedup_radius)?;
            let ids = |rows: &[usize]| rows.iter().map(|&i| d.ids()[i].as_str()).collect::<Vec<_>>().join(" ");
            let manifest = format!(
                "command = maintain\ndata = {}\neps = {eps:?}\nmin_pts = {min_pts}\nm = {m:?}\ndedup_radius = {dedup_radius:?}\n\
                 dbscan_clusters = {}\nclusters = {}\niterations = {}\nkept = {}\nremoved_noisy = {}\nremoved_redundant = {}\n",
                data.display(),
                r.soft.k,
                r.soft.c(),
                r.soft.iterations,
                r.kept.len(),
                ids(&r.removed_noisy),
                ids(&r.removed_redundant)
            );
            emit(out.as_deref(), &dataset_csv(&r.reduced)?, &manifest)
        }
        Command::Consensus { data, config, out } => {
            let d = load_csv(&data)?;
            let cfg = run_config(&config)?;
            let r = mlncf(&d, &cfg)?;
            let manifest = format!("command = consensus\ndata = {}\n{}", data.display(), r.manifest(&cfg));
            emit(out.as_deref(), &r.labels_csv(d.ids()), &manifest)
        }
        Command::Rcfm { data, config, out } => {
            let d = load_csv(&data)?;
            let cfg = run_config(&config)?;
            let r = rcfm(&d, &cfg)?;
            let manifest = format!("command = rcfm\ndata = {}\n{}", data.display(), r.manifest(&cfg));
            emit(out.as_deref(), &r.labels_csv(d.ids()), &manifest)
        }
        Command::Experiment { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = run_experiment(&cfg)?;
            let table = format_table(&report.table)?;
            match out.or(cfg.out) {
                Some(p) => {
                    write_file(&p, &table)?;
                    write_file(&manifest_path(&p), &report.manifest)?;
                    print!("{table}");
                    Ok(())
                }
                None => emit(None, &table, &report.manifest),
            }
        }
    }
}
