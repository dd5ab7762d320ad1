//! Property tests for the structural invariants: metric relations, model
//! evaluation identities, expansion normalization, composite closure, and
//! prediction bounds.

use proptest::prelude::*;

use spherecov::field::{simulate, MeanModel};
use spherecov::geometry::{
    chordal_distance, great_circle_distance, Location, Metric, Sphere,
};
use spherecov::kernels::validity::{check_validity, schoenberg_coefficients};
use spherecov::kernels::{convex_sum, product, CovarianceModel, FamilyParams, Model};
use spherecov::predict::{crps_gaussian, krige};

const PI: f64 = std::f64::consts::PI;

fn loc2() -> impl Strategy<Value = Location> {
    (-90.0..=90.0f64, -180.0..180.0f64).prop_map(|(lat, lon)| Location::lat_lon(lat, lon).unwrap())
}

fn loc1() -> impl Strategy<Value = Location> {
    (0.0..2.0 * PI).prop_map(|a| Location::angle(a).unwrap())
}

fn sphere2() -> impl Strategy<Value = Sphere> {
    (0.1..10000.0f64).prop_map(|r| Sphere::new(2, r).unwrap())
}

/// Parameters drawn inside the catalog's great-circle validity region.
fn valid_gc_params() -> impl Strategy<Value = FamilyParams> {
    prop_oneof![
        (0.1..5.0f64, 0.05..3.0f64)
            .prop_map(|(sigma2, alpha)| FamilyParams::Exponential { sigma2, alpha }),
        (0.1..5.0f64, 0.05..3.0f64, 0.05..0.5f64)
            .prop_map(|(sigma2, alpha, nu)| FamilyParams::Matern { sigma2, alpha, nu }),
        (0.1..5.0f64, 0.05..3.0f64, 0.2..1.0f64)
            .prop_map(|(sigma2, alpha, beta)| FamilyParams::PoweredExponential {
                sigma2,
                alpha,
                beta
            }),
        (0.1..5.0f64, 0.1..2.0f64)
            .prop_map(|(sigma2, beta)| FamilyParams::SinePower { sigma2, beta }),
        (0.1..5.0f64, 0.3..PI, 6.0..9.0f64)
            .prop_map(|(sigma2, c, tau)| FamilyParams::WendlandC4 { sigma2, c, tau }),
        (0.1..5.0f64,).prop_map(|(sigma2,)| FamilyParams::Cosine { sigma2, n: 1.0 }),
    ]
}

fn any_params() -> impl Strategy<Value = FamilyParams> {
    prop_oneof![
        valid_gc_params(),
        (0.1..5.0f64, 0.05..0.95f64, 0.1..3.0f64)
            .prop_map(|(sigma2, tau, c)| FamilyParams::Multiquadric { sigma2, c, tau }),
        (0.1..5.0f64, 0.05..2.0f64)
            .prop_map(|(sigma2, alpha)| FamilyParams::Wave { sigma2, alpha }),
        (0.1..5.0f64, 0.05..3.0f64, 1.0..2.0f64)
            .prop_map(|(sigma2, alpha, beta)| FamilyParams::PoweredExponential {
                sigma2,
                alpha,
                beta
            }),
        (0.1..5.0f64, 0.05..3.0f64, 0.5..6.0f64)
            .prop_map(|(sigma2, alpha, nu)| FamilyParams::Matern { sigma2, alpha, nu }),
    ]
}

proptest! {
    // Chordal distance is the straight-line secant of the great-circle arc.
    #[test]
    fn chordal_is_secant_of_arc(a in loc2(), b in loc2(), s in sphere2()) {
        let gc = great_circle_distance(&a, &b, &s).unwrap();
        let ch = chordal_distance(&a, &b, &s).unwrap();
        let expected = 2.0 * s.radius() * (gc / (2.0 * s.radius())).sin();
        prop_assert!((ch - expected).abs() <= 1e-9 * s.radius());
    }

    // theta = 2 r arcsin(ch / 2r) inverts the secant map.
    #[test]
    fn arc_recovered_from_chord(a in loc2(), b in loc2(), s in sphere2()) {
        let gc = great_circle_distance(&a, &b, &s).unwrap();
        let ch = chordal_distance(&a, &b, &s).unwrap();
        let theta = 2.0 * s.radius() * ((ch / (2.0 * s.radius())).min(1.0)).asin();
        prop_assert!((gc - theta).abs() <= 1e-7 * s.radius());
    }

    #[test]
    fn metrics_bound_each_other(a in loc2(), b in loc2(), s in sphere2()) {
        let gc = great_circle_distance(&a, &b, &s).unwrap();
        let ch = chordal_distance(&a, &b, &s).unwrap();
        prop_assert!(ch <= gc + 1e-12 * s.radius());
        prop_assert!(gc <= (PI / 2.0) * ch + 1e-9 * s.radius());
    }

    #[test]
    fn great_circle_triangle_inequality(
        a in loc2(), b in loc2(), c in loc2(), s in sphere2()
    ) {
        let ab = great_circle_distance(&a, &b, &s).unwrap();
        let bc = great_circle_distance(&b, &c, &s).unwrap();
        let ac = great_circle_distance(&a, &c, &s).unwrap();
        prop_assert!(ac <= ab + bc + 1e-9 * s.radius());
    }

    #[test]
    fn distances_are_rotation_invariant(
        a in loc2(), b in loc2(), delta in -360.0..360.0f64
    ) {
        let s = Sphere::earth();
        let rot = |l: &Location| {
            Location::lat_lon(l.latitude().unwrap(), l.longitude().unwrap() + delta).unwrap()
        };
        let before = great_circle_distance(&a, &b, &s).unwrap();
        let after = great_circle_distance(&rot(&a), &rot(&b), &s).unwrap();
        prop_assert!((before - after).abs() <= 1e-6);
    }

    #[test]
    fn circle_distance_is_shorter_arc(x in 0.0..2.0*PI, y in 0.0..2.0*PI) {
        let s = Sphere::unit_circle();
        let a = Location::angle(x).unwrap();
        let b = Location::angle(y).unwrap();
        let gc = great_circle_distance(&a, &b, &s).unwrap();
        let raw = (x - y).abs();
        let expected = raw.min(2.0 * PI - raw);
        prop_assert!((gc - expected).abs() <= 1e-12);
        prop_assert!(gc <= PI + 1e-12);
    }

    // evaluate at distance zero is the variance, and never exceeded in
    // magnitude anywhere else for these positive definite families.
    #[test]
    fn zero_distance_gives_variance(
        params in valid_gc_params(), metric_gc in any::<bool>(), x in 0.0..1.0f64
    ) {
        let sphere = Sphere::new(2, 1.0).unwrap();
        let metric = if metric_gc { Metric::GreatCircle } else { Metric::Chordal };
        let m = match CovarianceModel::new(params, metric, sphere) {
            Ok(m) => Model::Single(m),
            // great-circle-only families rejected under chordal
            Err(_) => return Ok(()),
        };
        let sigma2 = m.variance();
        prop_assert!((m.evaluate(0.0).unwrap() - sigma2).abs() <= 1e-12 * sigma2);
        let d = x * sphere.max_distance(metric);
        prop_assert!(m.evaluate(d).unwrap().abs() <= sigma2 * (1.0 + 1e-12));
    }

    #[test]
    fn convex_sum_evaluates_as_mixture(
        p1 in valid_gc_params(), p2 in valid_gc_params(),
        w in 0.0..1.0f64, x in 0.0..PI
    ) {
        let sphere = Sphere::new(2, 1.0).unwrap();
        let m1 = Model::Single(CovarianceModel::new(p1, Metric::GreatCircle, sphere).unwrap());
        let m2 = Model::Single(CovarianceModel::new(p2, Metric::GreatCircle, sphere).unwrap());
        let a = m1.evaluate(x).unwrap();
        let b = m2.evaluate(x).unwrap();
        let cs = convex_sum(vec![(w, m1.clone()), (1.0 - w, m2.clone())]).unwrap();
        let got = cs.evaluate(x).unwrap();
        prop_assert!((got - (w * a + (1.0 - w) * b)).abs() <= 1e-12 * (1.0 + a.abs() + b.abs()));

        let pr = product(vec![m1, m2]).unwrap();
        let got = pr.evaluate(x).unwrap();
        prop_assert!((got - a * b).abs() <= 1e-12 * (1.0 + (a * b).abs()));
    }

    #[test]
    fn wendland_support_is_compact(
        sigma2 in 0.1..5.0f64, c in 0.3..PI, tau in 6.0..9.0f64, x in 0.0..1.0f64
    ) {
        let sphere = Sphere::new(2, 2.0).unwrap();
        let m = Model::Single(
            CovarianceModel::new(
                FamilyParams::WendlandC4 { sigma2, c, tau },
                Metric::GreatCircle,
                sphere,
            )
            .unwrap(),
        );
        let support = c * sphere.radius();
        let inside = x * support;
        let outside = support + x * (sphere.max_great_circle() - support);
        prop_assert!(m.evaluate(outside).unwrap() == 0.0);
        if inside < support * 0.99 {
            prop_assert!(m.evaluate(inside).unwrap() > 0.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    // A numerically converged expansion of a valid model must be a complete
    // probability-like weight system: nonnegative and summing to 1.
    #[test]
    fn converged_expansions_sum_to_one(params in valid_gc_params()) {
        let sphere = Sphere::new(2, 1.0).unwrap();
        let m = Model::Single(
            CovarianceModel::new(params, Metric::GreatCircle, sphere).unwrap(),
        );
        let b = schoenberg_coefficients(&m, 2, 200).unwrap();
        prop_assert!(b.iter().all(|&v| v >= -1e-8));
        // only meaningful when the truncation captured the whole tail
        if b[b.len() - 1].abs() < 1e-9 && b[b.len() - 2].abs() < 1e-9 {
            let sum: f64 = b.iter().sum();
            prop_assert!(
                (sum - 1.0).abs() <= 1e-6,
                "sum {} for {:?}", sum, m
            );
        }
    }

    // Convex sums and products of certified models stay certified.
    #[test]
    fn composites_of_valid_models_stay_valid(
        p1 in valid_gc_params(), p2 in valid_gc_params(), w in 0.05..0.95f64
    ) {
        let sphere = Sphere::new(2, 1.0).unwrap();
        let m1 = Model::Single(CovarianceModel::new(p1, Metric::GreatCircle, sphere).unwrap());
        let m2 = Model::Single(CovarianceModel::new(p2, Metric::GreatCircle, sphere).unwrap());
        prop_assume!(check_validity(&m1, 2, 200, 1e-8).unwrap().valid);
        prop_assume!(check_validity(&m2, 2, 200, 1e-8).unwrap().valid);
        let cs = convex_sum(vec![(w, m1.clone()), (1.0 - w, m2.clone())]).unwrap();
        prop_assert!(check_validity(&cs, 2, 200, 1e-8).unwrap().valid);
        let pr = product(vec![m1, m2]).unwrap();
        prop_assert!(check_validity(&pr, 2, 200, 1e-8).unwrap().valid);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // Simple kriging variance lies in [0, prior variance].
    #[test]
    fn kriging_variance_is_bounded(
        params in valid_gc_params(),
        obs in proptest::collection::vec((loc1(), -2.0..2.0f64), 3..8),
        target in loc1()
    ) {
        let sphere = Sphere::unit_circle();
        let m = match CovarianceModel::new(params, Metric::GreatCircle, sphere) {
            Ok(m) => Model::Single(m),
            Err(_) => return Ok(()),
        };
        // drop near-duplicate angles, which the kriging system rejects
        let mut obs = obs;
        obs.sort_by(|a, b| {
            let (Location::Angle(x), Location::Angle(y)) = (a.0, b.0) else { unreachable!() };
            x.partial_cmp(&y).unwrap()
        });
        obs.dedup_by(|a, b| {
            let (Location::Angle(x), Location::Angle(y)) = (a.0, b.0) else { unreachable!() };
            (x - y).abs() < 1e-6
        });
        let result = match krige(&m, &MeanModel::zero(), &obs, &[target]) {
            Ok(r) => r,
            Err(_) => return Ok(()),
        };
        let sd = result.predictions[0].sd;
        prop_assert!(sd >= 0.0);
        prop_assert!(sd * sd <= m.variance() * (1.0 + 1e-9) + result.jitter);
    }

    // More observations never increase the kriging variance: for nested
    // observation sets A within B, var_B <= var_A at every target.
    #[test]
    fn kriging_variance_shrinks_with_information(
        params in valid_gc_params(),
        base in proptest::collection::vec((loc1(), -2.0..2.0f64), 3..7),
        extra in proptest::collection::vec((loc1(), -2.0..2.0f64), 1..5),
        target in loc1()
    ) {
        let sphere = Sphere::unit_circle();
        let m = match CovarianceModel::new(params, Metric::GreatCircle, sphere) {
            Ok(m) => Model::Single(m),
            Err(_) => return Ok(()),
        };
        let mut all: Vec<(Location, f64)> = base.clone();
        all.extend(extra.iter().copied());
        all.sort_by(|a, b| {
            let (Location::Angle(x), Location::Angle(y)) = (a.0, b.0) else { unreachable!() };
            x.partial_cmp(&y).unwrap()
        });
        all.dedup_by(|a, b| {
            let (Location::Angle(x), Location::Angle(y)) = (a.0, b.0) else { unreachable!() };
            (x - y).abs() < 1e-3
        });
        prop_assume!(all.len() > base.len().min(3));
        let small = &all[..all.len() - 1];
        let (r_small, r_all) = match (
            krige(&m, &MeanModel::zero(), small, &[target]),
            krige(&m, &MeanModel::zero(), &all, &[target]),
        ) {
            (Ok(a), Ok(b)) => (a, b),
            _ => return Ok(()),
        };
        // the comparison only holds in exact arithmetic; skip jittered systems
        prop_assume!(r_small.jitter == 0.0 && r_all.jitter == 0.0);
        let va = r_small.predictions[0].sd.powi(2);
        let vb = r_all.predictions[0].sd.powi(2);
        prop_assert!(vb <= va + 1e-9, "var grew from {va} to {vb}");
    }

    // CRPS is translation invariant, symmetric in the error sign, and
    // nonnegative.
    #[test]
    fn crps_symmetries(
        mu in -5.0..5.0f64, sd in 0.0..3.0f64, y in -5.0..5.0f64, shift in -4.0..4.0f64
    ) {
        let base = crps_gaussian(mu, sd, y);
        prop_assert!(base >= 0.0);
        let shifted = crps_gaussian(mu + shift, sd, y + shift);
        prop_assert!((base - shifted).abs() <= 1e-10 * (1.0 + base));
        let mirrored = crps_gaussian(-mu, sd, -y);
        prop_assert!((base - mirrored).abs() <= 1e-10 * (1.0 + base));
    }

    // Same seed, same realization, bit for bit.
    #[test]
    fn simulation_is_seed_deterministic(
        params in valid_gc_params(), seed in any::<u64>(),
        angles in proptest::collection::vec(0.0..2.0*PI, 2..12)
    ) {
        let sphere = Sphere::unit_circle();
        let m = match CovarianceModel::new(params, Metric::GreatCircle, sphere) {
            Ok(m) => Model::Single(m),
            Err(_) => return Ok(()),
        };
        let mut locs: Vec<Location> = angles.iter().map(|&a| Location::angle(a).unwrap()).collect();
        locs.sort_by(|a, b| {
            let (Location::Angle(x), Location::Angle(y)) = (a, b) else { unreachable!() };
            x.partial_cmp(y).unwrap()
        });
        locs.dedup_by(|a, b| {
            let (Location::Angle(x), Location::Angle(y)) = (a, b) else { unreachable!() };
            (*x - *y).abs() < 1e-9
        });
        let f1 = simulate(&m, &locs, &MeanModel::zero(), seed).unwrap();
        let f2 = simulate(&m, &locs, &MeanModel::zero(), seed).unwrap();
        prop_assert!(f1.values.iter().zip(f2.values.iter()).all(|(a, b)| a == b));
    }

    // Unordered model evaluation: the full matrix agrees with pairwise
    // evaluation regardless of metric.
    #[test]
    fn covariance_matrix_matches_pairwise(
        params in any_params(),
        angles in proptest::collection::vec(0.0..2.0*PI, 2..8),
        metric_gc in any::<bool>()
    ) {
        let sphere = Sphere::unit_circle();
        let metric = if metric_gc { Metric::GreatCircle } else { Metric::Chordal };
        let m = match CovarianceModel::new(params, metric, sphere) {
            Ok(m) => Model::Single(m),
            Err(_) => return Ok(()),
        };
        let locs: Vec<Location> = angles.iter().map(|&a| Location::angle(a).unwrap()).collect();
        let sigma = spherecov::kernels::covariance_matrix(&m, &locs).unwrap();
        for i in 0..locs.len() {
            for j in 0..locs.len() {
                let d = spherecov::geometry::distance(&locs[i], &locs[j], &sphere, metric).unwrap();
                let v = m.evaluate(d).unwrap();
                prop_assert!((sigma[(i, j)] - v).abs() <= 1e-12 * (1.0 + v.abs()));
                prop_assert!((sigma[(i, j)] - sigma[(j, i)]).abs() == 0.0);
            }
        }
    }
}
