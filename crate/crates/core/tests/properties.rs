use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use pwsm::coupling::InteractionFunction;
use pwsm::cycle::{find_limit_cycle, glass_cycle_analytic, LimitCycle};
use pwsm::io::SystemSpec;
use pwsm::iprc::{iprc_affine, jump_matrix, saltation_matrix, IprcOptions, PiecewiseIprc};
use pwsm::linalg::{expm, expm_pade};
use pwsm::oracle::wrap_phase;
use pwsm::system::tangent_basis;
use pwsm::zoo::{build_model, iris_closed_form, Model, IRIS_LAMBDAS, MODEL_NAMES};

fn vector(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(lo..hi, n).prop_map(DVector::from_vec)
}

fn unit_vector(n: usize) -> impl Strategy<Value = DVector<f64>> {
    vector(n, -1.0, 1.0)
        .prop_filter("non-degenerate", |v| v.norm() > 0.1)
        .prop_map(|v| v.normalize())
}

/// Unit normal and two fields that both cross it with rate at least 0.1.
fn crossing() -> impl Strategy<Value = (DVector<f64>, DVector<f64>, DVector<f64>)> {
    (2usize..=6).prop_flat_map(|n| {
        (unit_vector(n), vector(n, -3.0, 3.0), vector(n, -3.0, 3.0)).prop_map(|(nh, a, b)| {
            // Push each field forward along the normal until it crosses.
            let lift = |f: DVector<f64>| {
                let rate = nh.dot(&f);
                let need = (0.1 - rate).max(0.0);
                f + &nh * need
            };
            (lift(a), lift(b), nh)
        })
    })
}

struct Solved {
    model: Model,
    cycle: LimitCycle,
    iprc: PiecewiseIprc,
}

fn solved() -> &'static [Solved] {
    static CELL: OnceLock<Vec<Solved>> = OnceLock::new();
    CELL.get_or_init(|| {
        MODEL_NAMES
            .iter()
            .map(|name| {
                let model = build_model(name, &[]).unwrap();
                let cycle = find_limit_cycle(&model.system, &model.section, &model.guess, &model.cycle_options()).unwrap();
                let iprc = iprc_affine(&model.system, &cycle, &IprcOptions::default()).unwrap();
                Solved { model, cycle, iprc }
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn jump_is_inverse_transpose_of_saltation((fm, fp, nh) in crossing()) {
        let n = fm.len();
        let m = jump_matrix(&fm, &fp, &nh).unwrap();
        let s = saltation_matrix(&fm, &fp, &nh).unwrap();
        prop_assert!((m.transpose() * s - DMatrix::identity(n, n)).amax() < 1e-10);
    }

    #[test]
    fn jump_preserves_pairing((fm, fp, nh) in crossing(), seed in any::<u64>()) {
        let n = fm.len();
        let u = DVector::from_fn(n, |i, _| ((seed >> (i * 8)) & 0xff) as f64 / 128.0 - 1.0);
        let z = DVector::from_fn(n, |i, _| ((seed >> (i * 5 + 3)) & 0x3f) as f64 / 32.0 - 1.0);
        let m = jump_matrix(&fm, &fp, &nh).unwrap();
        let s = saltation_matrix(&fm, &fp, &nh).unwrap();
        prop_assert!(((&s * &u).dot(&(&m * &z)) - u.dot(&z)).abs() < 1e-10);
    }

    #[test]
    fn jump_matches_field_and_tangents((fm, fp, nh) in crossing(), z in vector(6, -1.0, 1.0)) {
        let z = z.rows(0, fm.len()).into_owned();
        let after = jump_matrix(&fm, &fp, &nh).unwrap() * &z;
        prop_assert!((fp.dot(&after) - fm.dot(&z)).abs() < 1e-10 * (1.0 + fm.dot(&z).abs()));
        for w in tangent_basis(&nh) {
            prop_assert!((w.dot(&after) - w.dot(&z)).abs() < 1e-10);
        }
    }

    #[test]
    fn tangent_basis_is_orthonormal(nh in (2usize..=6).prop_flat_map(unit_vector)) {
        let basis = tangent_basis(&nh);
        prop_assert_eq!(basis.len(), nh.len() - 1);
        for (i, w) in basis.iter().enumerate() {
            prop_assert!(w.dot(&nh).abs() < 1e-12);
            for (j, u) in basis.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((w.dot(u) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn expm_inverts_under_negation(entries in prop::collection::vec(-2.0f64..2.0, 9)) {
        let a = DMatrix::from_vec(3, 3, entries);
        let prod = expm(&a) * expm(&-&a);
        prop_assert!((prod - DMatrix::identity(3, 3)).amax() < 1e-10);
    }

    #[test]
    fn expm_shortcuts_agree_with_pade(d in prop::collection::vec(-3.0f64..3.0, 3), up in prop::collection::vec(-1.0f64..1.0, 3)) {
        let mut a = DMatrix::from_diagonal(&DVector::from_vec(d));
        a[(0, 1)] = up[0];
        a[(0, 2)] = up[1];
        a[(1, 2)] = up[2];
        let e = expm(&a);
        prop_assert!((&e - expm_pade(&a)).amax() < 1e-10 * e.amax().max(1.0));
    }

    #[test]
    fn wrapped_phase_is_congruent_and_centered(d in -50.0f64..50.0) {
        let w = wrap_phase(d);
        prop_assert!(w > -0.5 && w <= 0.5);
        prop_assert!(((d - w) - (d - w).round()).abs() < 1e-9);
    }

    #[test]
    fn odd_part_is_odd(values in prop::collection::vec(-1.0f64..1.0, 8..64), psi in -1.0f64..1.0) {
        let h = InteractionFunction { values };
        prop_assert!((h.odd_part(psi) + h.odd_part(-psi)).abs() < 1e-12);
        let grid = h.odd_part_grid();
        let n = grid.len();
        for j in 0..n {
            prop_assert!((grid[j] + grid[(n - j) % n]).abs() < 1e-15);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn iprc_normalization_holds_everywhere(k in 0usize..MODEL_NAMES.len(), theta in 0.0f64..1.0) {
        let s = &solved()[k];
        let sys = &s.model.system;
        let t = theta * s.cycle.period;
        let (seg, _) = s.cycle.segment_at(t);
        let f = sys.one_sided_field(s.cycle.segments[seg].region, &s.cycle.state_at(sys, t));
        let value = f.dot(&s.iprc.evaluate_time(t)) * s.cycle.period;
        prop_assert!((value - 1.0).abs() < 1e-8, "{}: T F.z = {}", s.model.name, value);
    }

    #[test]
    fn system_json_round_trips(k in 0usize..MODEL_NAMES.len()) {
        let sys = &solved()[k].model.system;
        let spec = SystemSpec::from_system(sys).unwrap();
        let text = serde_json::to_string(&spec).unwrap();
        let back: SystemSpec = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(&back, &spec);
        let rebuilt = back.build().unwrap();
        prop_assert_eq!(rebuilt.regions.len(), sys.regions.len());
        prop_assert_eq!(rebuilt.surfaces.len(), sys.surfaces.len());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn glass_cycle_matches_closed_form(
        a1 in -12.0f64..-2.0, b1 in 2.0f64..12.0,
        a2 in -12.0f64..-2.0, b2 in -12.0f64..-2.0,
        a3 in 2.0f64..12.0, b3 in -12.0f64..-2.0,
        a4 in 2.0f64..12.0, b4 in 2.0f64..12.0,
    ) {
        let targets = [(a1, b1), (a2, b2), (a3, b3), (a4, b4)];
        let Ok(g) = glass_cycle_analytic(&targets) else { return Ok(()) };
        // The section residual is amplified by 1 / (1 - mu) in the fixed
        // point, so nearly neutral cycles cannot meet the tolerance.
        prop_assume!(pwsm::zoo::glass_b_eigenvalue(&targets) > 1.2);
        let model = pwsm::zoo::glass(&targets).unwrap();
        let cycle = find_limit_cycle(&model.system, &model.section, &model.guess, &model.cycle_options()).unwrap();
        prop_assert!((cycle.period - g.period).abs() < 1e-8 * g.period);
        prop_assert!((cycle.segments[0].entry() - &g.points[0]).amax() < 1e-8 * g.points[0].amax());
    }

    #[test]
    fn iris_period_matches_closed_form(a in 0.01f64..0.24) {
        let model = build_model("iris", &[("a".into(), a)]).unwrap();
        let cycle = find_limit_cycle(&model.system, &model.section, &model.guess, &model.cycle_options()).unwrap();
        let u1 = cycle.section.coords(&cycle.segments[0].entry())[0];
        let cf = iris_closed_form(&IRIS_LAMBDAS, a, u1).unwrap();
        prop_assert!((cycle.period - cf.period).abs() < 1e-8 * cf.period);
        prop_assert!((pwsm::zoo::iris_return_map(&IRIS_LAMBDAS, a, u1) - u1).abs() < 1e-10);
    }
}
