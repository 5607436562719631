use std::collections::BTreeMap;
use std::f64::consts::PI;

use approx::assert_abs_diff_eq;

use super::*;
use crate::dynamics::{ClosedForm, FieldHandle};
use crate::field::VectorField;
use crate::poly::{MultiPoly, PolyVec};
use crate::sideinfo::{InterpPoint, SideInfo};

fn truth(id: ModelId) -> FieldHandle {
    ground_truth(id, &BTreeMap::new()).unwrap().0
}

#[test]
fn disease_truth_value() {
    let v = truth(ModelId::Disease).eval(&[0.7, 0.3]);
    assert_abs_diff_eq!(v[0], -0.026, epsilon = 1e-12);
    assert_abs_diff_eq!(v[1], 0.034, epsilon = 1e-12);
}

#[test]
fn pendulum_truth_value() {
    let v = truth(ModelId::Pendulum).eval(&[PI / 4.0, 0.0]);
    assert_abs_diff_eq!(v[0], 0.0, epsilon = 1e-15);
    assert_abs_diff_eq!(v[1], -0.70711, epsilon = 1e-5);
}

#[test]
fn tumor_truth_value() {
    let v = truth(ModelId::Tumor).eval(&[1.0, 1.0]);
    assert_abs_diff_eq!(v[0], 0.0, epsilon = 1e-15);
    assert_abs_diff_eq!(v[1], 0.1, epsilon = 1e-15);
}

#[test]
fn model_domains() {
    let (_, omega) = ground_truth(ModelId::Pendulum, &BTreeMap::new()).unwrap();
    assert_eq!(omega.bounds().unwrap().0, &[-PI, -PI]);
    assert_eq!(ModelId::Tumor.domain().bounds().unwrap().1, &[2.0, 2.0]);
    for id in ModelId::ALL {
        assert_eq!(id.name().parse::<ModelId>().unwrap(), id);
    }
    assert!("sir".parse::<ModelId>().is_err());
}

#[test]
fn parameter_overrides_are_checked() {
    let mut p = BTreeMap::new();
    p.insert("a1".to_string(), 0.2);
    let (f, _) = ground_truth(ModelId::Disease, &p).unwrap();
    assert_abs_diff_eq!(f.eval(&[1.0, 0.0])[0], -0.2, epsilon = 1e-15);
    p.insert("a1".to_string(), -0.2);
    assert!(matches!(ground_truth(ModelId::Disease, &p), Err(ExperimentError::Config(_))));
    let unknown = BTreeMap::from([("u1".to_string(), 0.5)]);
    assert!(ground_truth(ModelId::Disease, &unknown).is_err());
    assert!(ground_truth(ModelId::DiseaseControlled, &unknown).is_ok());
    let neg = BTreeMap::from([("u2".to_string(), -0.1)]);
    assert!(ground_truth(ModelId::DiseaseControlled, &neg).is_err());
}

#[test]
fn controlled_truth_subtracts_controls() {
    let m = GroundTruthModel::new(ModelId::DiseaseControlled).with_param("u1", 0.5).with_param("u2", 0.25);
    let f = FieldHandle::Closed(m.closed_form().unwrap());
    let base = truth(ModelId::Disease).eval(&[0.7, 0.3]);
    let v = f.eval(&[0.7, 0.3]);
    assert_abs_diff_eq!(v[0], base[0] - 0.35, epsilon = 1e-15);
    assert_abs_diff_eq!(v[1], base[1] - 0.075, epsilon = 1e-15);
}

fn unit() -> crate::semialg::BasicSemialgebraicSet {
    crate::semialg::BasicSemialgebraicSet::box_set(&[0.0, 0.0], &[1.0, 1.0]).unwrap()
}

#[test]
fn zero_field_grid_has_zero_values() {
    let zero = FieldHandle::poly(PolyVec::new(vec![MultiPoly::zero(2), MultiPoly::zero(2)]).unwrap());
    let mut buf = Vec::new();
    let g = export_field_grid(&zero, &unit(), 4, &mut buf).unwrap();
    assert!(g.values.iter().flatten().all(|&v| v == 0.0));
    let back = read_field_grid(&buf[..]).unwrap();
    assert!(back.values.iter().flatten().all(|&v| v == 0.0));
}

#[test]
fn grid_row_count_and_order() {
    for r in [2, 3, 7] {
        let mut buf = Vec::new();
        let g = export_field_grid(&truth(ModelId::Disease), &unit(), r, &mut buf).unwrap();
        assert_eq!(g.points.len(), r * r);
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), r * r + 1);
        assert_eq!(text.lines().next().unwrap(), "x1,x2,f1,f2");
        // first coordinate outermost
        assert_eq!(g.points[1], vec![0.0, 1.0 / (r - 1) as f64]);
    }
}

#[test]
fn disease_grid_round_trips_exactly() {
    let f = truth(ModelId::Disease);
    let mut buf = Vec::new();
    let written = export_field_grid(&f, &unit(), 25, &mut buf).unwrap();
    let back = read_field_grid(&buf[..]).unwrap();
    assert_eq!(back, written);
    assert_eq!(back.n(), 2);
    for (x, v) in back.points.iter().zip(&back.values) {
        assert_eq!(&f.eval(x), v);
    }
}

#[test]
fn grid_reader_rejects_bad_header() {
    assert!(read_field_grid("x1,x2,f1\n0,0,0\n".as_bytes()).is_err());
    assert!(read_field_grid("x1,y1\n0,0\n".as_bytes()).is_err());
    assert!(read_field_grid("x1,f1\n0\n".as_bytes()).is_err());
}

#[test]
fn shipped_configs_validate_and_round_trip() {
    for name in ["disease", "pendulum", "tumor"] {
        let cfg = ExperimentConfig::shipped(name).unwrap();
        cfg.validate().unwrap();
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }
    assert!(ExperimentConfig::shipped("sir").is_none());
    let c = ControlConfig::shipped();
    assert_eq!(ControlConfig::from_json(&c.to_json()).unwrap(), c);
}

#[test]
fn shipped_config_files_match_builtins() {
    let files = [
        ("disease", include_str!("../../../../configs/disease.json")),
        ("pendulum", include_str!("../../../../configs/pendulum.json")),
        ("tumor", include_str!("../../../../configs/tumor.json")),
    ];
    for (name, text) in files {
        assert_eq!(ExperimentConfig::from_json(text).unwrap(), ExperimentConfig::shipped(name).unwrap(), "{name}");
    }
    let control = include_str!("../../../../configs/control.json");
    assert_eq!(ControlConfig::from_json(control).unwrap(), ControlConfig::shipped());
}

#[test]
fn shipped_stack_counts() {
    let count = |n: &str| {
        let c = ExperimentConfig::shipped(n).unwrap();
        c.stacks.len() * c.degrees.len()
    };
    assert_eq!(count("disease"), 8);
    assert_eq!(count("pendulum"), 4);
    assert_eq!(count("tumor"), 5);
}

#[test]
fn validation_rejects_bad_configs() {
    let base = ExperimentConfig::disease();
    let mut c = base.clone();
    c.stacks[1].items.push("nope".into());
    assert!(matches!(c.validate(), Err(ExperimentError::Config(_))));
    let mut c = base.clone();
    c.stacks.push(c.stacks[0].clone());
    assert!(c.validate().is_err());
    let mut c = base.clone();
    c.noise.sigma = -1.0;
    assert!(c.validate().is_err());
    let mut c = base.clone();
    c.degrees.clear();
    assert!(c.validate().is_err());
    let mut c = base.clone();
    c.name = "../up".into();
    assert!(c.validate().is_err());
    let mut c = base.clone();
    c.fixed = vec![None];
    assert!(c.validate().is_err());
    let mut c = base.clone();
    c.metrics.sup_resolution = 1;
    assert!(c.validate().is_err());
    let mut c = base;
    c.side_info.get_mut("inv").unwrap().multiplier_degree = Some(3);
    assert!(c.validate().is_err());
    assert!(ExperimentConfig::from_json("{\"name\": 1}").is_err());
}

#[test]
fn uniform_schedule_is_seeded_and_in_range() {
    let s = ScheduleSpec::Uniform { count: 4, lo: vec![0.1, 0.1], hi: vec![1.9, 1.9], times: vec![0.0, 0.5], seed: 3 };
    let a = s.resolve().unwrap();
    assert_eq!(a, s.resolve().unwrap());
    assert_eq!(a.len(), 4);
    assert!(a.iter().flat_map(|t| &t.x0).all(|&v| (0.1..1.9).contains(&v)));
}

fn small_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::disease();
    c.name = "small".into();
    c.degrees = vec![2];
    c.stacks.truncate(2);
    c.metrics.sup_resolution = 11;
    c.metrics.traj_resolution = 3;
    c.metrics.grid_resolution = 5;
    c.metrics.horizon = 2.0;
    c.metrics.step = 1e-2;
    c
}

#[test]
fn run_writes_manifest_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let report = run_experiment(&cfg, dir.path()).unwrap();
    assert_eq!(report.models.len(), 2);
    assert!(report.failure.is_none());
    assert_eq!(ExperimentReport::load(dir.path()).unwrap(), report);
    report.verify_files(dir.path()).unwrap();

    let interp = report.model("interp", 2).unwrap();
    assert_eq!(interp.items, vec!["interp".to_string()]);
    assert!(interp.residuals.iter().all(|r| r.value <= 1e-6));
    assert!(interp.sup_distance.is_finite() && interp.trajectory_distance.is_finite());

    let text = std::fs::read_to_string(dir.path().join(&interp.model_file)).unwrap();
    let file: crate::learn::ModelFile = serde_json::from_str(&text).unwrap();
    assert_eq!(file.n, 2);
    assert_eq!(file.objective, interp.objective);

    let grid = read_field_grid(std::fs::File::open(dir.path().join(&interp.grid_file)).unwrap()).unwrap();
    let field = FieldHandle::poly(PolyVec::new(file.components).unwrap());
    for (x, v) in grid.points.iter().zip(&grid.values) {
        assert_eq!(&field.eval(x), v);
    }
    let saved = ExperimentConfig::load(&dir.path().join("config.json")).unwrap();
    assert_eq!(saved, cfg);
}

#[test]
fn run_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = run_experiment(&small_config(), a.path()).unwrap();
    let rb = run_experiment(&small_config(), b.path()).unwrap();
    assert_eq!(ra, rb);
}

#[test]
fn run_records_failed_stage() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    let clash = SideInfo::Interp {
        points: vec![
            InterpPoint { x: vec![0.0, 0.0], y: vec![0.0, 0.0] },
            InterpPoint { x: vec![0.0, 0.0], y: vec![1.0, 0.0] },
        ],
    };
    cfg.side_info.insert("clash".into(), clash.into());
    cfg.stacks.push(StackSpec { name: "bad".into(), items: vec!["clash".into()] });
    let err = run_experiment(&cfg, dir.path()).unwrap_err();
    assert!(matches!(&err, ExperimentError::Stage { stage, .. } if stage == "learn bad_deg2"));
    assert!(matches!(err.root(), ExperimentError::Learn(_)));
    let report = ExperimentReport::load(dir.path()).unwrap();
    assert_eq!(report.failure.as_ref().unwrap().stage, "learn bad_deg2");
    report.verify_files(dir.path()).unwrap();
    assert!(report.files.iter().any(|f| f.path == "dataset.csv"));
}

fn quick_problem() -> ControlProblem {
    ControlProblem { resolution: 11, horizon: 5.0, step: 5e-2, ..ControlProblem::default() }
}

#[test]
fn control_problem_validation() {
    let ok = ControlProblem::default();
    ok.validate().unwrap();
    let bad = [
        ControlProblem { horizon: 0.0, ..ok.clone() },
        ControlProblem { alpha: -1.0, ..ok.clone() },
        ControlProblem { x_init: vec![1.5, 0.0], ..ok.clone() },
        ControlProblem { resolution: 1, ..ok.clone() },
        ControlProblem { truth: GroundTruthModel::new(ModelId::Tumor), ..ok },
    ];
    for p in bad {
        assert!(matches!(p.validate(), Err(ExperimentError::Config(_))), "{p:?}");
    }
}

#[test]
fn control_ties_prefer_small_controls() {
    // At the origin every control leaves the state at rest, so with α = 0 all costs tie.
    let cp = ControlProblem { alpha: 0.0, x_init: vec![0.0, 0.0], ..quick_problem() };
    let out = optimal_control_search(&cp, &truth(ModelId::Disease)).unwrap();
    assert_eq!(out.u, [0.0, 0.0]);
    assert_eq!(out.planned_cost, 0.0);
    assert_eq!(out.skipped, 0);
}

#[test]
fn control_with_expensive_controls_does_nothing() {
    let cp = ControlProblem { alpha: 100.0, ..quick_problem() };
    let out = optimal_control_search(&cp, &truth(ModelId::Disease)).unwrap();
    assert_eq!(out.u, [0.0, 0.0]);
    assert_abs_diff_eq!(out.planned_cost, out.realized_cost, epsilon = 1e-12);
}

#[test]
fn control_planning_with_truth_matches_realized() {
    let out = optimal_control_search(&quick_problem(), &truth(ModelId::Disease)).unwrap();
    assert_abs_diff_eq!(out.planned_cost, out.realized_cost, epsilon = 1e-12);
    assert!(out.u.iter().all(|u| (0.0..=1.0).contains(u)));
}

#[test]
fn control_skips_divergent_points() {
    // ẋᵢ = xᵢ² - uᵢxᵢ from (1, 1) blows up unless uᵢ = 1
    let sq = MultiPoly::var(2, 0).pow(2);
    let sq2 = MultiPoly::var(2, 1).pow(2);
    let blow = FieldHandle::poly(PolyVec::new(vec![sq, sq2]).unwrap());
    let cp = ControlProblem { x_init: vec![1.0, 1.0], ..quick_problem() };
    let out = optimal_control_search(&cp, &blow).unwrap();
    assert_eq!(out.u, [1.0, 1.0]);
    assert_eq!(out.skipped, 11 * 11 - 1);

    // ẋᵢ = xᵢ² + 1 - uᵢxᵢ ≥ 3/4 blows up for every control
    let one = MultiPoly::constant(2, 1.0);
    let blow = FieldHandle::poly(
        PolyVec::new(vec![&MultiPoly::var(2, 0).pow(2) + &one, &MultiPoly::var(2, 1).pow(2) + &one]).unwrap(),
    );
    let err = optimal_control_search(&cp, &blow).unwrap_err();
    assert!(matches!(err, ExperimentError::NoAdmissibleControl));
}

#[test]
fn monotone_quality_slack() {
    let row = |s: f64, truth: bool| ControlRow {
        label: String::new(),
        truth,
        outcome: ControlOutcome {
            u: [0.0; 2],
            planned_cost: 0.0,
            realized_state: vec![s, 0.0],
            realized_cost: 0.0,
            skipped: 0,
        },
    };
    assert!(monotone_quality(&[row(0.85, false), row(0.70, false), row(0.43, false), row(0.9, true)], 0.05));
    assert!(monotone_quality(&[row(0.5, false), row(0.54, false)], 0.05));
    assert!(!monotone_quality(&[row(0.5, false), row(0.6, false)], 0.05));
}

#[test]
fn closed_form_is_tagged() {
    let m = GroundTruthModel::new(ModelId::Pendulum).closed_form().unwrap();
    assert_eq!(m, ClosedForm::Pendulum { g: 1.0, l: 1.0, m: 1.0 });
}
