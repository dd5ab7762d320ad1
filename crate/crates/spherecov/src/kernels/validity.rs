//! Positive-definiteness certification on circles and spheres.
//!
//! Great-circle models are expanded in the orthogonal basis matching the
//! sphere dimension (Fourier cosines on the circle, Legendre polynomials on
//! the sphere); a model is certified valid when every expansion coefficient
//! up to `n_max` clears `-tolerance` and the analytic catalog does not veto
//! it. The catalog matters: some invalid models (Matern with nu just above
//! one half, powered exponential with beta just above one) have violations
//! so deep in the tail that no finite truncation can see them.
//!
//! Chordal models are certified by catalog membership of every component
//! family among covariances valid in three-dimensional Euclidean space;
//! restriction to the sphere then preserves validity. Families outside that
//! catalog are reported not valid rather than expanded.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::Metric;
use crate::kernels::quadrature::gauss_legendre;
use crate::kernels::{FamilyParams, Model};

pub const DEFAULT_N_MAX: usize = 200;
pub const DEFAULT_TOLERANCE: f64 = 1e-8;

const QUAD_START_NODES: usize = 2048;
const QUAD_MAX_NODES: usize = 32768;
const QUAD_VECTOR_TOL: f64 = 1e-10;

/// How a verdict was reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictMethod {
    /// Chordal model: catalog lookup of Euclidean validity, no expansion.
    CatalogChordal,
    /// Great-circle model the catalog decides; coefficients attached as
    /// numerical evidence.
    CatalogGreatCircle,
    /// Great-circle composite outside the catalog; the truncated expansion
    /// alone decides.
    QuadratureGreatCircle,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidityVerdict {
    pub valid: bool,
    /// First coefficient below -tolerance, as (index, value). Absent when
    /// the truncated expansion is clean, even if the catalog rules invalid.
    pub first_violation: Option<(usize, f64)>,
    /// Normalized expansion coefficients b_0..b_n_max (empty for chordal
    /// verdicts, which never expand).
    pub coefficients: Vec<f64>,
    pub tolerance: f64,
    pub n_max: usize,
    pub method: VerdictMethod,
}

fn check_dimension(d: u8) -> Result<()> {
    if d == 1 || d == 2 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: "d".to_string(),
            reason: format!("expansion dimension must be 1 or 2, got {d}"),
        })
    }
}

/// Normalized Schoenberg coefficients of a great-circle model.
///
/// For d=2 these are Legendre coefficients
/// b_n = [(2n+1)/2] * integral of psi(r x) P_n(cos x) sin x over [0, pi],
/// for d=1 Fourier-cosine coefficients, both divided by psi(0). Gauss-
/// Legendre quadrature starts at 2048 nodes per smooth piece and doubles
/// until successive coefficient vectors agree to 1e-10 in max norm.
pub fn schoenberg_coefficients(model: &Model, d: u8, n_max: usize) -> Result<Vec<f64>> {
    check_dimension(d)?;
    if n_max < 1 {
        return Err(Error::InvalidParameter {
            name: "n_max".to_string(),
            reason: format!("must be at least 1, got {n_max}"),
        });
    }
    if model.metric() != Metric::GreatCircle {
        return Err(Error::InvalidParameter {
            name: "metric".to_string(),
            reason: "spherical expansion requires a great_circle model; chordal models are \
                     certified by catalog lookup instead"
                .to_string(),
        });
    }
    let r = model.sphere().radius();
    let pieces = smooth_pieces(model);
    coefficients_of(&|x| model.evaluate(r * x), model.variance(), d, n_max, &pieces)
}

/// Expansion of an arbitrary angle function psi over the given smooth
/// pieces of [0, pi]; psi(0) must equal `variance`.
fn coefficients_of(
    psi: &dyn Fn(f64) -> Result<f64>,
    variance: f64,
    d: u8,
    n_max: usize,
    pieces: &[(f64, f64)],
) -> Result<Vec<f64>> {
    let mut prev: Option<Vec<f64>> = None;
    let mut nodes = QUAD_START_NODES;
    loop {
        let b = coefficients_fixed(psi, variance, d, n_max, pieces, nodes)?;
        if let Some(p) = &prev {
            let delta = b
                .iter()
                .zip(p.iter())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0_f64, f64::max);
            if delta < QUAD_VECTOR_TOL {
                return Ok(b);
            }
            if nodes >= QUAD_MAX_NODES {
                return Err(Error::QuadratureNonConvergence { nodes, delta });
            }
        }
        prev = Some(b);
        nodes *= 2;
    }
}

fn coefficients_fixed(
    psi: &dyn Fn(f64) -> Result<f64>,
    variance: f64,
    d: u8,
    n_max: usize,
    pieces: &[(f64, f64)],
    nodes: usize,
) -> Result<Vec<f64>> {
    let rule = gauss_legendre(nodes);
    let mut b = vec![0.0; n_max + 1];
    for &(lo, hi) in pieces {
        let half = 0.5 * (hi - lo);
        for (&node, &weight) in rule.nodes.iter().zip(rule.weights.iter()) {
            let t = lo + (node + 1.0) * half;
            let w = weight * half;
            let f = psi(t)? * w;
            match d {
                2 => {
                    // P_n(cos t) by the three-term recurrence, accumulated
                    // against psi(t) sin(t).
                    let ct = t.cos();
                    let y = f * t.sin();
                    let mut p_prev = 1.0;
                    let mut p_cur = ct;
                    b[0] += y;
                    if n_max >= 1 {
                        b[1] += y * p_cur;
                    }
                    for (n, slot) in b.iter_mut().enumerate().take(n_max + 1).skip(2) {
                        let nf = n as f64;
                        let p_next = ((2.0 * nf - 1.0) * ct * p_cur - (nf - 1.0) * p_prev) / nf;
                        *slot += y * p_next;
                        p_prev = p_cur;
                        p_cur = p_next;
                    }
                }
                _ => {
                    for (n, slot) in b.iter_mut().enumerate() {
                        *slot += f * (n as f64 * t).cos();
                    }
                }
            }
        }
    }
    for (n, slot) in b.iter_mut().enumerate() {
        let scale = match d {
            2 => (2.0 * n as f64 + 1.0) / 2.0,
            _ => {
                if n == 0 {
                    1.0 / std::f64::consts::PI
                } else {
                    2.0 / std::f64::consts::PI
                }
            }
        };
        *slot *= scale / variance;
    }
    Ok(b)
}

/// Splits [0, pi] at interior support edges (compactly supported Wendland
/// components), so each quadrature piece integrates a smooth function.
fn smooth_pieces(model: &Model) -> Vec<(f64, f64)> {
    let mut kinks = Vec::new();
    collect_kinks(model, &mut kinks);
    kinks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    kinks.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    let mut pieces = Vec::with_capacity(kinks.len() + 1);
    let mut lo = 0.0;
    for k in kinks {
        if k > lo + 1e-12 && k < std::f64::consts::PI - 1e-12 {
            pieces.push((lo, k));
            lo = k;
        }
    }
    pieces.push((lo, std::f64::consts::PI));
    pieces
}

fn collect_kinks(model: &Model, acc: &mut Vec<f64>) {
    match model {
        Model::Single(m) => {
            if let FamilyParams::WendlandC4 { c, .. } = m.params() {
                // great_circle support edge sits at angle c
                acc.push(*c);
            }
        }
        Model::Composite(c) => {
            for (_, m) in c.components() {
                collect_kinks(m, acc);
            }
        }
    }
}

/// Catalog answer for a single great-circle family: Some(valid) when the
/// answer is known analytically, None when only numerics can decide.
fn family_gc_valid(params: &FamilyParams, d: u8) -> bool {
    match *params {
        FamilyParams::Exponential { .. } => true,
        FamilyParams::Matern { nu, .. } => nu <= 0.5,
        FamilyParams::PoweredExponential { beta, .. } => beta <= 1.0,
        FamilyParams::SinePower { .. } => true,
        FamilyParams::Multiquadric { .. } => true,
        FamilyParams::WendlandC4 { .. } => true,
        FamilyParams::Wave { .. } => false,
        FamilyParams::Cosine { n, .. } => {
            let integer = (n - n.round()).abs() <= 1e-12 * n.max(1.0);
            integer && (n.round() == 1.0 || d == 1)
        }
    }
}

fn catalog_gc(model: &Model, d: u8) -> Option<bool> {
    match model {
        Model::Single(m) => Some(family_gc_valid(m.params(), d)),
        Model::Composite(c) => {
            // Convex sums and products of valid models stay valid (closure);
            // with any non-certified component the catalog abstains, since a
            // mixture can compensate an invalid part.
            let all_valid = c
                .components()
                .iter()
                .all(|(_, m)| catalog_gc(m, d) == Some(true));
            if all_valid {
                Some(true)
            } else {
                None
            }
        }
    }
}

/// Membership in the catalog of families valid in Euclidean 3-space, which
/// is what chordal evaluation requires.
fn phi3_member(model: &Model) -> bool {
    match model {
        Model::Single(m) => matches!(
            m.params(),
            FamilyParams::Exponential { .. }
                | FamilyParams::Matern { .. }
                | FamilyParams::PoweredExponential { .. }
                | FamilyParams::Wave { .. }
                | FamilyParams::WendlandC4 { .. }
        ),
        Model::Composite(c) => c.components().iter().all(|(_, m)| phi3_member(m)),
    }
}

/// Full validity check.
///
/// Great-circle models are expanded to `n_max` and vetted against both the
/// truncated coefficients and the analytic catalog; certification is always
/// "valid up to order n_max" when it rests on the numerics alone. Chordal
/// models are a catalog lookup (see module docs).
pub fn check_validity(model: &Model, d: u8, n_max: usize, tol: f64) -> Result<ValidityVerdict> {
    check_dimension(d)?;
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "tol".to_string(),
            reason: format!("must be positive and finite, got {tol}"),
        });
    }
    if model.metric() == Metric::Chordal {
        return Ok(ValidityVerdict {
            valid: phi3_member(model),
            first_violation: None,
            coefficients: Vec::new(),
            tolerance: tol,
            n_max,
            method: VerdictMethod::CatalogChordal,
        });
    }
    let coefficients = schoenberg_coefficients(model, d, n_max)?;
    let first_violation = coefficients
        .iter()
        .enumerate()
        .find(|(_, &b)| b < -tol)
        .map(|(n, &b)| (n, b));
    let (valid, method) = match catalog_gc(model, d) {
        Some(v) => (v && first_violation.is_none(), VerdictMethod::CatalogGreatCircle),
        None => (first_violation.is_none(), VerdictMethod::QuadratureGreatCircle),
    };
    Ok(ValidityVerdict {
        valid,
        first_violation,
        coefficients,
        tolerance: tol,
        n_max,
        method,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Sphere;
    use crate::kernels::{convex_sum, CovarianceModel};
    use approx::assert_relative_eq;

    fn unit() -> Sphere {
        Sphere::new(2, 1.0).unwrap()
    }

    fn gc(params: FamilyParams) -> Model {
        Model::Single(CovarianceModel::new(params, Metric::GreatCircle, unit()).unwrap())
    }

    fn chordal(params: FamilyParams) -> Model {
        Model::Single(CovarianceModel::new(params, Metric::Chordal, unit()).unwrap())
    }

    fn check(m: &Model, d: u8) -> ValidityVerdict {
        check_validity(m, d, DEFAULT_N_MAX, DEFAULT_TOLERANCE).unwrap()
    }

    #[test]
    fn constant_function_is_pure_b0() {
        for d in [1u8, 2] {
            let b = coefficients_of(&|_| Ok(2.5), 2.5, d, 50, &[(0.0, std::f64::consts::PI)])
                .unwrap();
            assert_relative_eq!(b[0], 1.0, max_relative = 1e-12);
            for &v in &b[1..] {
                assert!(v.abs() < 1e-12, "got {v}");
            }
        }
    }

    #[test]
    fn cosine_is_pure_b1_on_sphere() {
        let m = gc(FamilyParams::Cosine { sigma2: 3.0, n: 1.0 });
        let b = schoenberg_coefficients(&m, 2, 50).unwrap();
        assert_relative_eq!(b[1], 1.0, epsilon = 1e-10);
        for (n, &v) in b.iter().enumerate() {
            if n != 1 {
                assert!(v.abs() < 1e-8, "b[{n}] = {v}");
            }
        }
        assert!(check(&m, 2).valid);
    }

    // Frozen quadrature oracle: multiquadric coefficients on the sphere.
    #[test]
    fn multiquadric_reference_coefficients() {
        let m = gc(FamilyParams::Multiquadric { sigma2: 1.0, c: 2.0, tau: 0.3 });
        let b = schoenberg_coefficients(&m, 2, DEFAULT_N_MAX).unwrap();
        let reference = [
            2.899_408_284_023_369e-1,
            3.415_832_319_734_113e-1,
            2.033_060_730_684_548e-1,
            9.714_646_935_333_167e-2,
            4.151_368_261_136_380e-2,
            1.657_201_743_521_292e-2,
            6.318_112_492_610_887e-3,
            2.330_187_711_523_704e-3,
            8.381_124_254_905_166e-4,
        ];
        for (n, &expect) in reference.iter().enumerate() {
            assert_relative_eq!(b[n], expect, epsilon = 1e-10);
        }
        let sum: f64 = b.iter().sum();
        assert_relative_eq!(sum, 1.0, epsilon = 1e-6);
        let v = check(&m, 2);
        assert!(v.valid);
        assert_eq!(v.method, VerdictMethod::CatalogGreatCircle);
    }

    #[test]
    fn matern_above_half_is_invalid_with_visible_violation() {
        let m = gc(FamilyParams::Matern { sigma2: 1.0, alpha: 2.0, nu: 1.0 });
        let v2 = check(&m, 2);
        assert!(!v2.valid);
        let (n, b) = v2.first_violation.unwrap();
        assert_eq!(n, 4);
        assert_relative_eq!(b, -2.115_384_949_549_467e-3, epsilon = 1e-9);
        let v1 = check(&m, 1);
        assert!(!v1.valid);
        let (n1, b1) = v1.first_violation.unwrap();
        assert_eq!(n1, 4);
        assert_relative_eq!(b1, -2.261_670_096_912_014e-3, epsilon = 1e-9);
    }

    // The crossover case: numerics see nothing up to n_max, the catalog
    // still (correctly) rules it out.
    #[test]
    fn matern_just_above_half_fails_only_via_catalog() {
        let m = gc(FamilyParams::Matern { sigma2: 1.0, alpha: 1.0, nu: 0.51 });
        let v = check(&m, 2);
        assert!(!v.valid);
        assert!(v.first_violation.is_none());
        assert_eq!(v.method, VerdictMethod::CatalogGreatCircle);
        assert!(v.coefficients.iter().all(|&b| b >= -DEFAULT_TOLERANCE));
        // and at exactly one half it is valid
        let ok = gc(FamilyParams::Matern { sigma2: 1.0, alpha: 1.0, nu: 0.5 });
        assert!(check(&ok, 2).valid);
        assert!(check(&ok, 1).valid);
    }

    #[test]
    fn powered_exponential_beta_above_one() {
        let m = gc(FamilyParams::PoweredExponential { sigma2: 1.0, alpha: 1.0, beta: 2.0 });
        let v = check(&m, 2);
        assert!(!v.valid);
        let (n, b) = v.first_violation.unwrap();
        assert_eq!(n, 8);
        assert_relative_eq!(b, -2.254_629_456_492_728e-6, epsilon = 1e-11);
        let v1 = check(&m, 1);
        let (n1, b1) = v1.first_violation.unwrap();
        assert_eq!(n1, 8);
        assert_relative_eq!(b1, -1.991_816_574_703_850e-6, epsilon = 1e-11);
        // beta = 1.3: numerically clean to n_max, catalog still rejects
        let m13 = gc(FamilyParams::PoweredExponential { sigma2: 1.0, alpha: 1.0, beta: 1.3 });
        let v13 = check(&m13, 2);
        assert!(!v13.valid);
        assert!(v13.first_violation.is_none());
        // beta = 1 valid
        let m1 = gc(FamilyParams::PoweredExponential { sigma2: 1.0, alpha: 1.0, beta: 1.0 });
        assert!(check(&m1, 2).valid);
    }

    #[test]
    fn wave_with_great_circle_argument_is_invalid() {
        let m = gc(FamilyParams::Wave { sigma2: 1.0, alpha: 1.0 });
        let v2 = check(&m, 2);
        assert!(!v2.valid);
        let (n, b) = v2.first_violation.unwrap();
        assert_eq!(n, 2);
        assert_relative_eq!(b, -6.367_873_737_822_922e-2, epsilon = 1e-9);
        let v1 = check(&m, 1);
        let (n1, b1) = v1.first_violation.unwrap();
        assert_eq!(n1, 2);
        assert_relative_eq!(b1, -5.639_663_461_770_517e-2, epsilon = 1e-9);
        // even a very long range leaves a small but real violation
        let mfar = gc(FamilyParams::Wave { sigma2: 1.0, alpha: 120.0 });
        let vfar = check(&mfar, 1);
        assert!(!vfar.valid);
        let (nf, bf) = vfar.first_violation.unwrap();
        assert_eq!(nf, 2);
        assert_relative_eq!(bf, -1.157_340_117_223_486e-5, epsilon = 1e-10);
    }

    #[test]
    fn cosine_frequency_two_splits_by_dimension() {
        let m = gc(FamilyParams::Cosine { sigma2: 1.0, n: 2.0 });
        let v2 = check(&m, 2);
        assert!(!v2.valid);
        let (n, b) = v2.first_violation.unwrap();
        assert_eq!(n, 0);
        assert_relative_eq!(b, -1.0 / 3.0, epsilon = 1e-10);
        let v1 = check(&m, 1);
        assert!(v1.valid);
        assert_relative_eq!(v1.coefficients[2], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn cosine_fractional_frequency_invalid_on_circle() {
        let m = gc(FamilyParams::Cosine { sigma2: 1.0, n: 2.5 });
        let v = check(&m, 1);
        assert!(!v.valid);
        let (n, b) = v.first_violation.unwrap();
        assert_eq!(n, 1);
        assert_relative_eq!(b, -3.031_522_725_558_555e-1, epsilon = 1e-9);
    }

    #[test]
    fn sine_power_beta_two_known_coefficients() {
        let m = gc(FamilyParams::SinePower { sigma2: 1.0, beta: 2.0 });
        let b = schoenberg_coefficients(&m, 2, 50).unwrap();
        assert_relative_eq!(b[0], 0.5, epsilon = 1e-10);
        assert_relative_eq!(b[1], 0.5, epsilon = 1e-10);
        assert!(check(&m, 2).valid);
        assert!(check(&gc(FamilyParams::SinePower { sigma2: 1.0, beta: 1.5 }), 2).valid);
    }

    #[test]
    fn wendland_piecewise_quadrature_converges() {
        let m = gc(FamilyParams::WendlandC4 { sigma2: 1.0, c: 2.0, tau: 6.0 });
        let b = schoenberg_coefficients(&m, 2, DEFAULT_N_MAX).unwrap();
        assert_relative_eq!(b[0], 1.035_575_817_392_610e-1, epsilon = 1e-10);
        assert_relative_eq!(b[1], 2.525_243_300_382_067e-1, epsilon = 1e-10);
        assert_relative_eq!(b[2], 2.757_868_967_061_560e-1, epsilon = 1e-10);
        let sum: f64 = b.iter().sum();
        assert_relative_eq!(sum, 1.0, epsilon = 1e-6);
        assert!(check(&m, 2).valid);
    }

    #[test]
    fn convex_sum_of_valid_parts_certified_by_catalog() {
        let sp = gc(FamilyParams::SinePower { sigma2: 1.0, beta: 1.5 });
        let cs = gc(FamilyParams::Cosine { sigma2: 1.0, n: 1.0 });
        let c = convex_sum(vec![(0.7, sp), (0.3, cs)]).unwrap();
        for d in [1u8, 2] {
            let v = check(&c, d);
            assert!(v.valid, "d={d}");
            assert_eq!(v.method, VerdictMethod::CatalogGreatCircle);
            assert!(v.first_violation.is_none());
        }
    }

    #[test]
    fn mixture_with_invalid_part_decided_by_quadrature() {
        // cosine n=2 is invalid on the sphere alone, but a strong valid
        // partner absorbs its negative coefficient
        let sp = gc(FamilyParams::SinePower { sigma2: 1.0, beta: 1.0 });
        let c2 = gc(FamilyParams::Cosine { sigma2: 1.0, n: 2.0 });
        let mix = convex_sum(vec![(0.8, sp), (0.2, c2)]).unwrap();
        let v = check(&mix, 2);
        assert_eq!(v.method, VerdictMethod::QuadratureGreatCircle);
        assert!(v.valid);
        assert!(v.first_violation.is_none());
    }

    #[test]
    fn chordal_catalog_membership() {
        let valid = [
            chordal(FamilyParams::Exponential { sigma2: 1.0, alpha: 1.0 }),
            chordal(FamilyParams::Matern { sigma2: 1.0, alpha: 1.0, nu: 3.0 }),
            chordal(FamilyParams::PoweredExponential { sigma2: 1.0, alpha: 1.0, beta: 2.0 }),
            chordal(FamilyParams::Wave { sigma2: 1.0, alpha: 1.0 }),
            chordal(FamilyParams::WendlandC4 { sigma2: 1.0, c: 1.0, tau: 6.0 }),
        ];
        for m in &valid {
            let v = check(m, 2);
            assert!(v.valid, "{m:?}");
            assert_eq!(v.method, VerdictMethod::CatalogChordal);
            assert!(v.coefficients.is_empty());
        }
        let invalid = [
            chordal(FamilyParams::Multiquadric { sigma2: 1.0, c: 1.0, tau: 0.5 }),
            chordal(FamilyParams::SinePower { sigma2: 1.0, beta: 1.0 }),
            chordal(FamilyParams::Cosine { sigma2: 1.0, n: 1.0 }),
        ];
        for m in &invalid {
            assert!(!check(m, 2).valid, "{m:?}");
        }
    }

    #[test]
    fn expansion_rejects_chordal_models() {
        let m = chordal(FamilyParams::Exponential { sigma2: 1.0, alpha: 1.0 });
        assert!(schoenberg_coefficients(&m, 2, 10).is_err());
        assert!(schoenberg_coefficients(&gc(FamilyParams::Cosine { sigma2: 1.0, n: 1.0 }), 3, 10)
            .is_err());
    }
}
