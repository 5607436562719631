use proptest::prelude::*;

use sidefit::conic::{export_standard_form, import_standard_form, Cone, LinExpr, ProgramBuilder};
use sidefit::dynamics::{read_dataset_csv, sup_distance, write_dataset_csv, Provenance};
use sidefit::experiments::{export_field_grid, read_field_grid};
use sidefit::sideinfo::{residual_functional, InterpPoint};
use sidefit::{monomial_basis, BasicSemialgebraicSet, Dataset, FieldHandle, MultiPoly, PolyVec, SideInfo, VectorField};

fn unit() -> BasicSemialgebraicSet {
    BasicSemialgebraicSet::box_set(&[0.0, 0.0], &[1.0, 1.0]).unwrap()
}

fn arb_field(d: u32) -> impl Strategy<Value = PolyVec> {
    let len = monomial_basis(2, d).len();
    prop::collection::vec(prop::collection::vec(-2.0f64..2.0, len), 2).prop_map(move |cs| {
        let basis = monomial_basis(2, d);
        PolyVec::new(cs.iter().map(|c| MultiPoly::from_coefficients(2, &basis, c)).collect()).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn dataset_csv_round_trips(
        rows in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 4), 1..20),
        sigma in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let pairs = rows.iter().map(|r| (r[..2].to_vec(), r[2..].to_vec())).collect();
        let data = Dataset { pairs, provenance: Provenance { generator: "prop".into(), sigma, seed } };
        let mut buf = Vec::new();
        write_dataset_csv(&data, &mut buf).unwrap();
        prop_assert_eq!(read_dataset_csv(&buf[..]).unwrap(), data);
    }

    #[test]
    fn field_grid_round_trips(f in arb_field(3), r in 2usize..8) {
        let field = FieldHandle::poly(f);
        let mut buf = Vec::new();
        let written = export_field_grid(&field, &unit(), r, &mut buf).unwrap();
        prop_assert_eq!(written.points.len(), r * r);
        prop_assert_eq!(read_field_grid(&buf[..]).unwrap(), written);
    }

    #[test]
    fn sup_distance_is_a_metric(f in arb_field(2), g in arb_field(2), h in arb_field(1)) {
        let (f, g, h) = (FieldHandle::poly(f), FieldHandle::poly(g), FieldHandle::poly(h));
        let d = |a: &FieldHandle, b: &FieldHandle| sup_distance(a, b, &unit(), 7).unwrap();
        prop_assert_eq!(d(&f, &f), 0.0);
        prop_assert!((d(&f, &g) - d(&g, &f)).abs() <= 1e-12);
        prop_assert!(d(&f, &h) <= d(&f, &g) + d(&g, &h) + 1e-12);
    }

    #[test]
    fn interp_residual_measures_the_miss(f in arb_field(2), x in prop::array::uniform2(0.0f64..1.0)) {
        let field = FieldHandle::poly(f);
        let y = field.eval(&x);
        let exact = SideInfo::Interp { points: vec![InterpPoint { x: x.to_vec(), y: y.clone() }] };
        prop_assert!(residual_functional(&field, &exact, &unit(), 5).unwrap().value <= 1e-12);
        let off = SideInfo::Interp { points: vec![InterpPoint { x: x.to_vec(), y: vec![y[0] + 0.5, y[1]] }] };
        let v = residual_functional(&field, &off, &unit(), 5).unwrap().value;
        prop_assert!((v - 0.5).abs() <= 1e-9, "{}", v);
    }

    #[test]
    fn residuals_refine_monotonically(f in arb_field(3), k in 2usize..6) {
        let field = FieldHandle::poly(f);
        let pos = SideInfo::Inv { sets: vec![unit()] };
        let coarse = residual_functional(&field, &pos, &unit(), k).unwrap().value;
        let fine = residual_functional(&field, &pos, &unit(), 2 * k - 1).unwrap().value;
        prop_assert!(fine >= coarse - 1e-12);
    }

    #[test]
    fn standard_form_round_trips(c in prop::collection::vec(-10.0f64..10.0, 3), b in prop::collection::vec(-5.0f64..5.0, 2)) {
        let mut pb = ProgramBuilder::new();
        let x = pb.declare("x", Cone::Nonneg(2)).unwrap();
        let s = pb.declare("s", Cone::Soc(3)).unwrap();
        pb.add_objective(x.slot(0), c[0]);
        pb.add_objective(x.slot(1), c[1]);
        pb.add_objective(s.slot(0), c[2]);
        let mut e = LinExpr::var(x.slot(0));
        e.add_term(s.slot(1), 2.0);
        pb.add_equality(e, b[0]);
        pb.add_equality(LinExpr::var(s.slot(2)), b[1]);
        let p = pb.finish().unwrap().0;
        let mut buf = Vec::new();
        export_standard_form(&p, &mut buf).unwrap();
        prop_assert_eq!(import_standard_form(std::str::from_utf8(&buf).unwrap()).unwrap(), p);
    }
}
