use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::dynamics::{sample_dataset, ClosedForm, FieldHandle, Provenance, SampleOptions, Schedule};
use crate::poly::monomial_basis;
use crate::sideinfo::{InterpPoint, MonRegion, SideInfo};

fn unit_box() -> BasicSemialgebraicSet {
    BasicSemialgebraicSet::box_set(&[0.0, 0.0], &[1.0, 1.0]).unwrap()
}

fn dataset(pairs: Vec<(Vec<f64>, Vec<f64>)>) -> Dataset {
    Dataset { pairs, provenance: Provenance { generator: "test".into(), sigma: 0.0, seed: 0 } }
}

fn disease() -> FieldHandle {
    FieldHandle::Closed(ClosedForm::Disease { a1: 0.05, b1: 0.1, a2: 0.05, b2: 0.1, u1: 0.0, u2: 0.0 })
}

fn disease_data(seed: u64) -> Dataset {
    let schedule = vec![Schedule { x0: vec![0.7, 0.3], times: (1..=20).map(f64::from).collect() }];
    sample_dataset(&disease(), "disease", &schedule, 1e-4, seed, &SampleOptions::default()).unwrap()
}

fn origin() -> SideInfo {
    SideInfo::Interp { points: vec![InterpPoint { x: vec![0.0, 0.0], y: vec![0.0, 0.0] }] }
}

fn mon() -> SideInfo {
    SideInfo::Mon {
        regions: vec![
            MonRegion { component: 1, variable: 0, nonneg: Some(unit_box()), nonpos: None },
            MonRegion { component: 0, variable: 1, nonneg: Some(unit_box()), nonpos: None },
        ],
    }
}

fn inv() -> SideInfo {
    SideInfo::Inv { sets: vec![unit_box()] }
}

fn random_generator(rng: &mut ChaCha8Rng, n: usize, d: u32) -> PolyVec {
    let basis = monomial_basis(n, d);
    let comps = (0..n)
        .map(|_| {
            let c: Vec<f64> = basis.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
            MultiPoly::from_coefficients(n, &basis, &c)
        })
        .collect();
    PolyVec::new(comps).unwrap()
}

fn sample_exact(f: &PolyVec, rng: &mut ChaCha8Rng, count: usize) -> Dataset {
    let n = f.n();
    dataset(
        (0..count)
            .map(|_| {
                let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
                let y = f.evaluate(&x).unwrap();
                (x, y)
            })
            .collect(),
    )
}

fn max_coef_gap(a: &PolyVec, b: &PolyVec) -> f64 {
    let d = a.degree().max(b.degree());
    let (ca, cb) = (a.coefficient_matrix(d).unwrap(), b.coefficient_matrix(d).unwrap());
    ca.iter().flatten().zip(cb.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn l2_loss_is_one_rotated_cone() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let f = random_generator(&mut rng, 2, 3);
    let data = sample_exact(&f, &mut rng, 7);
    let a = assemble(&LearningProblem::new(data, 2, 3, unit_box())).unwrap();
    let cones: Vec<Cone> = a.program.groups().iter().map(|g| g.cone.clone()).filter(|c| !matches!(c, Cone::Free(_))).collect();
    assert_eq!(cones, vec![Cone::Rsoc(2 + 7 * 2)]);
}

#[test]
fn l1_and_linf_use_linear_epigraphs() {
    let data = dataset(vec![(vec![0.5], vec![1.0]), (vec![0.2], vec![0.0])]);
    let dom = BasicSemialgebraicSet::box_set(&[0.0], &[1.0]).unwrap();
    for loss in [Loss::L1, Loss::LInf] {
        let mut prob = LearningProblem::new(data.clone(), 1, 1, dom.clone());
        prob.loss = loss;
        let a = assemble(&prob).unwrap();
        assert!(a.program.groups().iter().all(|g| matches!(g.cone, Cone::Free(_) | Cone::Nonneg(_))));
        // Two points fit exactly by a line.
        let m = fit(&prob, &FitOptions::default()).unwrap();
        assert!(m.objective < 1e-7, "{loss:?}: {}", m.objective);
    }
}

#[test]
fn disease_deg3_full_stack_block_counts() {
    let prob = LearningProblem::new(disease_data(0), 2, 3, unit_box())
        .with_side_info(origin())
        .with_side_info(inv())
        .with_side_info(mon());
    let a = assemble(&prob).unwrap();
    let interp_rows: usize = a.labels.iter().filter(|l| l.name == "s0.interp").map(|l| l.rows.len()).sum();
    assert_eq!(interp_rows, 2);
    let inv_gram: usize = a.blocks.iter().filter(|(k, _)| *k == 1).map(|(_, b)| b.blocks.psd_blocks.len()).sum();
    assert_eq!(inv_gram, 8);
    assert_eq!(a.blocks.iter().filter(|(k, _)| *k == 2).count(), 2);
}

#[test]
fn empty_dataset_is_feasibility() {
    let prob = LearningProblem::new(dataset(vec![]), 2, 2, unit_box()).with_side_info(origin());
    let m = fit(&prob, &FitOptions::default()).unwrap();
    assert_eq!(m.objective, 0.0);
    assert!(m.field.evaluate(&[0.0, 0.0]).unwrap().iter().all(|v| v.abs() < 1e-7));
}

#[test]
fn noiseless_recovery() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let f = random_generator(&mut rng, 2, 2);
    let data = sample_exact(&f, &mut rng, 12);
    let m = fit(&LearningProblem::new(data, 2, 2, unit_box()), &FitOptions::default()).unwrap();
    assert_eq!(m.status, SolveStatus::Optimal);
    assert!(m.objective <= 1e-10, "objective {}", m.objective);
    assert!(max_coef_gap(&m.field, &f) <= 1e-6, "gap {}", max_coef_gap(&m.field, &f));
}

#[test]
fn constraint_dominates_single_point() {
    let y = vec![0.3, -0.4];
    let prob = LearningProblem::new(dataset(vec![(vec![0.0, 0.0], y.clone())]), 2, 1, unit_box()).with_side_info(origin());
    let m = fit(&prob, &FitOptions::default()).unwrap();
    assert!((m.objective - 0.25).abs() < 1e-7);
    assert!(m.field.evaluate(&[0.0, 0.0]).unwrap().iter().all(|v| v.abs() < 1e-9));
}

#[test]
fn disease_deg2_full_stack_certifies() {
    let prob = LearningProblem::new(disease_data(0), 2, 2, unit_box())
        .with_side_info(origin())
        .with_side_info(inv())
        .with_side_info(mon());
    let m = fit(&prob, &FitOptions::default()).unwrap();
    assert_eq!(m.status, SolveStatus::Optimal);
    assert_eq!(m.certificates.len(), 6);
    assert!(m.certificates.iter().all(|c| c.report.valid));
    assert!(m.residuals.iter().all(|r| r.value <= DELTA));
}

#[test]
fn objective_is_monotone_in_side_info() {
    let data = disease_data(3);
    let stacks = [vec![], vec![origin()], vec![origin(), inv()], vec![origin(), inv(), mon()]];
    let mut prev = 0.0f64;
    for s in stacks {
        let mut prob = LearningProblem::new(data.clone(), 2, 3, unit_box());
        for item in s {
            prob = prob.with_side_info(item);
        }
        let m = fit(&prob, &FitOptions::default()).unwrap();
        assert!(m.objective >= prev - 1e-7, "{} < {prev}", m.objective);
        prev = m.objective;
    }
}

#[test]
fn refit_on_own_evaluations_is_exact() {
    let prob = LearningProblem::new(disease_data(1), 2, 2, unit_box()).with_side_info(origin()).with_side_info(mon());
    let m = fit(&prob, &FitOptions::default()).unwrap();
    let pairs = prob.data.pairs.iter().map(|(x, _)| (x.clone(), m.field.evaluate(x).unwrap())).collect();
    let again = fit(&LearningProblem { data: dataset(pairs), ..prob }, &FitOptions::default()).unwrap();
    assert!(again.objective <= 1e-10, "{}", again.objective);
}

#[test]
fn contradictory_interp_is_reported() {
    let a = SideInfo::Interp { points: vec![InterpPoint { x: vec![0.0, 0.0], y: vec![1.0, 0.0] }] };
    let prob = LearningProblem::new(dataset(vec![]), 2, 2, unit_box()).with_side_info(origin()).with_side_info(a);
    match assemble(&prob) {
        Err(LearnError::Contradictory { items, .. }) => assert_eq!(items, vec!["s0.interp", "s1.interp"]),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn infeasible_blocks_are_named() {
    // p₁(0, 0) = -1 contradicts p₁(0, x₂) ≥ 0 on the left edge.
    let out = SideInfo::Interp { points: vec![InterpPoint { x: vec![0.0, 0.0], y: vec![-1.0, 0.0] }] };
    let prob = LearningProblem::new(dataset(vec![]), 2, 2, unit_box()).with_side_info(out).with_side_info(inv());
    match fit(&prob, &FitOptions::default()) {
        Err(LearnError::Infeasible { blame }) => {
            assert!(blame.iter().any(|b| b == "s1.inv"), "{blame:?}");
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn fixed_component_is_kept() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let f = random_generator(&mut rng, 2, 2);
    let data = sample_exact(&f, &mut rng, 10);
    let mut prob = LearningProblem::new(data, 2, 2, unit_box());
    prob.fixed = vec![Some(f.component(0).clone()), None];
    let m = fit(&prob, &FitOptions::default()).unwrap();
    assert_eq!(m.field.component(0), f.component(0));
    assert!(max_coef_gap(&m.field, &f) <= 1e-6);
}

#[test]
fn model_file_round_trip() {
    let prob = LearningProblem::new(disease_data(2), 2, 2, unit_box()).with_side_info(origin()).with_side_info(inv());
    let m = fit(&prob, &FitOptions::default()).unwrap();
    let file = ModelFile::from(&m);
    let text = serde_json::to_string_pretty(&file).unwrap();
    let back: ModelFile = serde_json::from_str(&text).unwrap();
    assert_eq!(back, file);
    assert_eq!(back.field().unwrap(), m.field);
    assert_eq!(file.certificates.len(), 4);
    assert_eq!(file.fingerprint, prob.fingerprint());
}

#[test]
fn fit_is_deterministic() {
    let prob = LearningProblem::new(disease_data(4), 2, 3, unit_box()).with_side_info(origin()).with_side_info(mon());
    let a = fit(&prob, &FitOptions::default()).unwrap();
    let b = fit(&prob, &FitOptions::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn certify_pins_the_field() {
    let truth = crate::PolyVec::new(vec![
        MultiPoly::from_terms(2, [(vec![1, 0], -0.05), (vec![0, 1], 0.1), (vec![1, 1], -0.1)]).unwrap(),
        MultiPoly::from_terms(2, [(vec![0, 1], -0.05), (vec![1, 0], 0.1), (vec![1, 1], -0.1)]).unwrap(),
    ])
    .unwrap();
    let items: Vec<SideInfoItem> = vec![origin().into(), inv().into(), mon().into()];
    let m = certify(&truth, &items, &unit_box(), &FitOptions::default()).unwrap();
    assert_eq!(m.field, truth);
    assert!(m.certificates.iter().all(|c| c.report.valid));

    let bad = PolyVec::new(vec![MultiPoly::constant(2, -1.0), MultiPoly::zero(2)]).unwrap();
    assert!(matches!(
        certify(&bad, &[inv().into()], &unit_box(), &FitOptions::default()),
        Err(LearnError::Infeasible { .. })
    ));
}

#[test]
fn problem_serde_round_trip() {
    let prob = LearningProblem::new(disease_data(0), 2, 2, unit_box()).with_side_info(origin()).with_side_info(mon());
    let text = serde_json::to_string(&prob).unwrap();
    let back: LearningProblem = serde_json::from_str(&text).unwrap();
    assert_eq!(back, prob);
    assert_eq!(back.fingerprint(), prob.fingerprint());
}

mod props {
    use proptest::prelude::*;

    use super::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn linear_recovery(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = random_generator(&mut rng, 2, 1);
            let data = sample_exact(&f, &mut rng, 5);
            let m = fit(&LearningProblem::new(data, 2, 1, unit_box()), &FitOptions::default()).unwrap();
            prop_assert!(max_coef_gap(&m.field, &f) <= 1e-6);
        }

        #[test]
        fn objective_matches_recomputed_loss(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = dataset((0..6).map(|_| {
                let x = vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
                let y = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                (x, y)
            }).collect());
            let prob = LearningProblem::new(data, 2, 1, unit_box());
            let a = assemble(&prob).unwrap();
            let sol = InteriorPoint::default().solve(&a.program).unwrap();
            let m = fit(&prob, &FitOptions::default()).unwrap();
            prop_assert!((m.objective - sol.primal_objective).abs() <= 1e-6);
        }
    }
}
