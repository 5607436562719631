use std::collections::BTreeMap;

use sidefit::experiments::{ground_truth, learn_stack, prepare, run_experiment, ExperimentReport};
use sidefit::learn::{certify, FitOptions};
use sidefit::sideinfo::residual_functional;
use sidefit::{ExperimentConfig, FieldHandle, ModelFile, ModelId, VectorField};

#[test]
fn nested_stacks_never_lower_the_objective() {
    for seed in [0, 3] {
        let cfg = ExperimentConfig::disease().with_seed(seed);
        let prepared = prepare(&cfg).unwrap();
        for &d in &cfg.degrees {
            let objectives: Vec<f64> =
                cfg.stacks.iter().map(|s| learn_stack(&cfg, &prepared, s, d).unwrap().objective).collect();
            for w in objectives.windows(2) {
                assert!(w[1] >= w[0] - 1e-7, "seed {seed} degree {d}: {objectives:?}");
            }
        }
    }
}

#[test]
fn learned_models_satisfy_their_side_information() {
    let cfg = ExperimentConfig::disease();
    let prepared = prepare(&cfg).unwrap();
    let stack = cfg.stack("interp_inv_mon").unwrap();
    let model = learn_stack(&cfg, &prepared, stack, 3).unwrap();
    assert!(model.certificates.iter().all(|c| c.report.valid));
    let field = FieldHandle::poly(model.field.clone());
    for item in cfg.stack_items(stack).unwrap() {
        let rep = residual_functional(&field, &item.info, &prepared.domain, 50).unwrap();
        assert!(rep.value <= 1e-5, "{rep:?}");
    }
    // Certifying the fixed field again finds certificates for the same items.
    let again = certify(&model.field, &cfg.stack_items(stack).unwrap(), &prepared.domain, &FitOptions::default()).unwrap();
    assert_eq!(again.certificates.len(), model.certificates.len());
    assert!(again.certificates.iter().all(|c| c.report.valid));
}

#[test]
fn pendulum_run_is_reproducible_and_files_round_trip() {
    let mut cfg = ExperimentConfig::pendulum();
    cfg.metrics.traj_resolution = 5;
    cfg.metrics.sup_resolution = 21;
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = run_experiment(&cfg, a.path()).unwrap();
    let rb = run_experiment(&cfg, b.path()).unwrap();
    assert_eq!(ra.models.len(), 4);
    assert_eq!(ra, rb);
    for dir in [a.path(), b.path()] {
        let report = ExperimentReport::load(dir).unwrap();
        report.verify_files(dir).unwrap();
    }
    for m in &ra.models {
        let fa: ModelFile = serde_json::from_str(&std::fs::read_to_string(a.path().join(&m.model_file)).unwrap()).unwrap();
        let fb: ModelFile = serde_json::from_str(&std::fs::read_to_string(b.path().join(&m.model_file)).unwrap()).unwrap();
        for (p, q) in fa.components.iter().zip(&fb.components) {
            assert!((p - q).max_abs_coefficient() <= 1e-9);
        }
        // the pinned component stays exactly θ̇
        assert_eq!(fa.components[0], sidefit::MultiPoly::var(2, 1));
    }
    let none = ra.model("none", 5).unwrap();
    let full = ra.model("sym_pos_ham", 5).unwrap();
    assert!(full.trajectory_distance < none.trajectory_distance);
}

#[test]
fn tumor_stack_certificates_hold() {
    let cfg = ExperimentConfig::tumor();
    let prepared = prepare(&cfg).unwrap();
    let stack = cfg.stack("posmon_inv").unwrap();
    let model = learn_stack(&cfg, &prepared, stack, 5).unwrap();
    assert!(!model.certificates.is_empty());
    assert!(model.certificates.iter().all(|c| c.report.max_residual <= 1e-6 && c.report.min_eigenvalue >= -1e-7));
    let (truth, _) = ground_truth(ModelId::Tumor, &BTreeMap::new()).unwrap();
    let f = FieldHandle::poly(model.field);
    for (x, _) in &prepared.dataset.pairs {
        let (a, b) = (f.eval(x), truth.eval(x));
        assert!((a[0] - b[0]).abs() < 1e-2 && (a[1] - b[1]).abs() < 1e-2, "{x:?}: {a:?} vs {b:?}");
    }
}
