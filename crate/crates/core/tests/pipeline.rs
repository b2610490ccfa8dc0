use ndarray::Array2;
use proptest::prelude::*;
use rcfm::consensus::{
    align_ensemble, combine_weights, generate_base_partitions, mlncf, rcfm, BaseMethod, EnsembleConfig, WeightSet,
};
use rcfm::dataset::{agreement, clustering_accuracy, save_csv, Dataset, Partition};
use rcfm::harness::{run_experiment, synth_blobs, BlobSpec, ExperimentConfig};
use rcfm::maintenance::{maintain, SoftDbscanConfig};
use rcfm::mln::Layer;

fn all_methods() -> Vec<BaseMethod> {
    vec![BaseMethod::KMeans, BaseMethod::Pam, BaseMethod::FuzzyCMeans]
}

fn truth(data: &Dataset) -> Vec<Option<usize>> {
    data.labels().unwrap().to_vec()
}

/// Accuracy over rows that carry a class.
fn inlier_accuracy(p: &Partition, labels: &[Option<usize>]) -> f64 {
    let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_some()).collect();
    let classes: Vec<usize> = rows.iter().map(|&i| labels[i].unwrap()).collect();
    clustering_accuracy(&p.subset(&rows).unwrap(), &classes).unwrap()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn mlncf_recovers_separable_blobs() {
    let cfg = EnsembleConfig::new(all_methods(), 3, vec![1, 2, 3]);
    let accs: Vec<f64> = (0..8)
        .map(|seed| {
            let data = synth_blobs(&BlobSpec::new(90, 3, 2, 0.5, 6.0), seed).unwrap();
            let r = mlncf(&data, &cfg).unwrap();
            assert_eq!(r.training_losses.len(), cfg.ensemble_size());
            inlier_accuracy(&r.final_partition, &truth(&data))
        })
        .collect();
    assert!(median(accs.clone()) >= 0.95, "{accs:?}");
}

#[test]
fn rcfm_is_mlncf_on_the_kept_rows() {
    let data = synth_blobs(&BlobSpec::new(90, 3, 2, 0.5, 6.0).outliers(0.1).duplicates(0.05), 11).unwrap();
    let soft = SoftDbscanConfig::new(0.6, 5);
    let base = EnsembleConfig::new(all_methods(), 3, vec![1, 2]);
    let robust = rcfm(&data, &base.clone().with_maintenance(soft.clone(), 0.0)).unwrap();

    let kept = maintain(&data, &soft, 0.0).unwrap();
    let plain = mlncf(&kept.reduced, &base).unwrap();
    assert_eq!(robust.final_partition, plain.final_partition);
    assert_eq!(robust.maintained.as_ref().unwrap().kept, kept.kept);

    // Kept rows carry their consensus label into the full output.
    for (j, &i) in kept.kept.iter().enumerate() {
        assert_eq!(robust.full_labels.label(i), robust.final_partition.label(j));
    }
    assert_eq!(robust.full_labels.len(), data.len());
}

#[test]
fn maintenance_helps_with_outliers() {
    let soft = SoftDbscanConfig::new(0.6, 5);
    let base = EnsembleConfig::new(all_methods(), 3, vec![1, 2]);
    let cfg = base.clone().with_maintenance(soft, 0.0);
    let mut wins = 0;
    let runs = 6;
    for seed in 0..runs {
        let data = synth_blobs(&BlobSpec::new(120, 3, 2, 0.5, 6.0).outliers(0.1), 100 + seed).unwrap();
        let labels = truth(&data);
        let a = inlier_accuracy(&mlncf(&data, &base).unwrap().final_partition, &labels);
        let b = inlier_accuracy(&rcfm(&data, &cfg).unwrap().full_labels, &labels);
        if b >= a {
            wins += 1;
        }
    }
    assert!(wins >= runs * 2 / 3, "rcfm matched or beat mlncf in {wins}/{runs}");
}

#[test]
fn alignment_never_lowers_agreement() {
    for seed in 0..5 {
        let data = synth_blobs(&BlobSpec::new(60, 4, 2, 1.2, 3.0), seed).unwrap();
        let cfg = EnsembleConfig::new(all_methods(), 4, vec![1, 2]);
        let raw = generate_base_partitions(&data, &cfg).unwrap();
        let aligned = align_ensemble(&raw).unwrap();
        assert_eq!(aligned[0], raw[0]);
        for (r, a) in raw.iter().zip(&aligned) {
            assert!(agreement(a, &raw[0]).unwrap() >= agreement(r, &raw[0]).unwrap());
        }
        assert_eq!(align_ensemble(&aligned).unwrap(), aligned);
    }
}

#[test]
fn unanimous_ensemble_reproduces_the_partition() {
    let data = synth_blobs(&BlobSpec::new(60, 3, 2, 0.4, 6.0), 4).unwrap();
    let cfg = EnsembleConfig::new(vec![BaseMethod::KMeans], 3, vec![9, 9, 9]);
    let r = mlncf(&data, &cfg).unwrap();
    assert_eq!(agreement(&r.final_partition, &r.base_partitions[0]).unwrap(), 1.0);
}

#[test]
fn experiment_on_a_csv_source() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_blobs(&BlobSpec::new(60, 2, 2, 0.4, 6.0), 2).unwrap();
    save_csv(&data, dir.path().join("d.csv")).unwrap();
    let cfg_path = dir.path().join("exp.cfg");
    std::fs::write(
        &cfg_path,
        "source = csv\ncsv = d.csv\nk = 2\ncondition = clean\ncondition = dirty outliers=0.1\nmethods = kmeans mlncf\nseeds = 1 2\nensemble.methods = kmeans pam\nensemble.seeds = 1 2\nepochs = 200\n",
    )
    .unwrap();
    let cfg = ExperimentConfig::load(&cfg_path).unwrap();
    let report = run_experiment(&cfg).unwrap();
    assert!(report.table.is_complete());
    for m in ["kmeans", "mlncf"] {
        assert!(report.table.get(m, "clean").unwrap() >= 95.0, "{m}");
    }
    assert_eq!(run_experiment(&cfg).unwrap().manifest, report.manifest);
}

fn weight_set(values: &[f64], rows: usize, cols: usize) -> WeightSet {
    WeightSet {
        source: None,
        layers: vec![Layer {
            weights: Array2::from_shape_vec((rows, cols), values[..rows * cols].to_vec()).unwrap(),
            bias: values[rows * cols..rows * cols + rows].to_vec().into(),
        }],
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn combining_ignores_order(
        mut sets in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 6), 1..7),
        rot in 0usize..7,
    ) {
        let ws: Vec<WeightSet> = sets.iter().map(|v| weight_set(v, 2, 2)).collect();
        let a = combine_weights(&ws).unwrap();
        let n = sets.len();
        sets.rotate_left(rot % n);
        sets.reverse();
        let ws: Vec<WeightSet> = sets.iter().map(|v| weight_set(v, 2, 2)).collect();
        let b = combine_weights(&ws).unwrap();
        prop_assert_eq!(a.layers, b.layers);
    }

    #[test]
    fn combining_copies_is_identity(v in prop::collection::vec(-5.0f64..5.0, 6), n in 1usize..6) {
        let w = weight_set(&v, 2, 2);
        let mean = combine_weights(&vec![w.clone(); n]).unwrap();
        prop_assert_eq!(mean.layers, w.layers);
    }
}
