//! Mean structure and exact Gaussian simulation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Location;
use crate::kernels::{covariance_matrix, Model};
use crate::linalg::cholesky_with_jitter;
use crate::rng::seeded_rng;

/// Deterministic mean surface: a constant, or the latitude harmonic
/// a0 + a1 cos(L pi/90) + a2 sin(L pi/90) with L the latitude in degrees
/// (period 180 degrees, pole to pole).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeanModel {
    Constant { a0: f64 },
    HarmonicLatitude { a0: f64, a1: f64, a2: f64 },
}

impl MeanModel {
    pub fn zero() -> Self {
        MeanModel::Constant { a0: 0.0 }
    }

    pub fn eval(&self, loc: &Location) -> Result<f64> {
        match *self {
            MeanModel::Constant { a0 } => Ok(a0),
            MeanModel::HarmonicLatitude { a0, a1, a2 } => {
                let lat = loc.latitude().ok_or(Error::LocationDimension { expected: 2 })?;
                let t = lat * std::f64::consts::PI / 90.0;
                Ok(a0 + a1 * t.cos() + a2 * t.sin())
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            MeanModel::Constant { a0 } => a0.is_finite(),
            MeanModel::HarmonicLatitude { a0, a1, a2 } => {
                a0.is_finite() && a1.is_finite() && a2.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter {
                name: "mean".to_string(),
                reason: "coefficients must be finite".to_string(),
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanKind {
    Constant,
    HarmonicLatitude,
}

/// Ordinary least squares for the requested mean structure.
///
/// Needs at least as many distinct latitudes as coefficients; a design
/// without them (every point on one parallel, say) is rank deficient.
pub fn fit_mean(kind: MeanKind, data: &[(Location, f64)]) -> Result<MeanModel> {
    if data.is_empty() {
        return Err(Error::EmptyLocations);
    }
    match kind {
        MeanKind::Constant => {
            let a0 = data.iter().map(|(_, v)| v).sum::<f64>() / data.len() as f64;
            Ok(MeanModel::Constant { a0 })
        }
        MeanKind::HarmonicLatitude => {
            let n = data.len();
            let mut x = DMatrix::zeros(n, 3);
            let mut y = DVector::zeros(n);
            for (i, (loc, v)) in data.iter().enumerate() {
                let lat = loc.latitude().ok_or(Error::LocationDimension { expected: 2 })?;
                let t = lat * std::f64::consts::PI / 90.0;
                x[(i, 0)] = 1.0;
                x[(i, 1)] = t.cos();
                x[(i, 2)] = t.sin();
                y[i] = *v;
            }
            let svd = x.svd(true, true);
            let max_sv = svd.singular_values.max();
            if svd.singular_values.iter().any(|&s| s < 1e-10 * max_sv) || n < 3 {
                return Err(Error::RankDeficient(
                    "harmonic latitude mean needs at least 3 distinct latitudes".to_string(),
                ));
            }
            let beta = svd.solve(&y, 1e-12).map_err(|e| Error::RankDeficient(e.to_string()))?;
            Ok(MeanModel::HarmonicLatitude { a0: beta[0], a1: beta[1], a2: beta[2] })
        }
    }
}

/// data minus the fitted mean, in data order.
pub fn residuals(mean: &MeanModel, data: &[(Location, f64)]) -> Result<Vec<f64>> {
    data.iter().map(|(loc, v)| Ok(v - mean.eval(loc)?)).collect()
}

/// One draw of a Gaussian field, with enough metadata to reproduce it.
#[derive(Debug, Clone)]
pub struct FieldRealization {
    pub locations: Vec<Location>,
    pub values: Vec<f64>,
    pub model: Model,
    pub seed: Option<u64>,
    /// Diagonal jitter the factorization needed.
    pub jitter: f64,
}

/// Exact simulation: mean + L z with L the lower Cholesky factor of the
/// model covariance (jitter ladder applied) and z standard normals from
/// the seeded generator. Identical inputs give identical output bytes.
///
/// Validity of the model is the caller's contract; an invalid model tends
/// to surface here as a factorization failure, which is itself a useful
/// diagnostic.
pub fn simulate(
    model: &Model,
    locations: &[Location],
    mean: &MeanModel,
    seed: u64,
) -> Result<FieldRealization> {
    let mut rng = seeded_rng(seed);
    let mut out = simulate_with_rng(model, locations, mean, &mut rng)?;
    out.seed = Some(seed);
    Ok(out)
}

/// Simulation driven by an external generator (experiment replicates hand
/// in their own stream).
pub fn simulate_with_rng(
    model: &Model,
    locations: &[Location],
    mean: &MeanModel,
    rng: &mut ChaCha12Rng,
) -> Result<FieldRealization> {
    mean.validate()?;
    if locations.is_empty() {
        return Err(Error::EmptyLocations);
    }
    let sigma = covariance_matrix(model, locations)?;
    let factor = cholesky_with_jitter(&sigma, model.variance())?;
    drop(sigma);
    let z = DVector::from_iterator(
        locations.len(),
        (0..locations.len()).map(|_| rng.sample::<f64, _>(StandardNormal)),
    );
    let correlated = factor.multiply_lower(&z);
    let mut values = Vec::with_capacity(locations.len());
    for (i, loc) in locations.iter().enumerate() {
        values.push(mean.eval(loc)? + correlated[i]);
    }
    Ok(FieldRealization {
        locations: locations.to_vec(),
        values,
        model: model.clone(),
        seed: None,
        jitter: factor.jitter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Metric, Sphere};
    use crate::kernels::{CovarianceModel, FamilyParams};
    use approx::assert_relative_eq;

    fn exp_circle(alpha: f64) -> Model {
        Model::Single(
            CovarianceModel::new(
                FamilyParams::Exponential { sigma2: 1.0, alpha },
                Metric::GreatCircle,
                Sphere::unit_circle(),
            )
            .unwrap(),
        )
    }

    #[test]
    fn constant_mean_everywhere() {
        let m = MeanModel::Constant { a0: 5.0 };
        assert_eq!(m.eval(&Location::angle(1.0).unwrap()).unwrap(), 5.0);
        assert_eq!(m.eval(&Location::lat_lon(12.0, -40.0).unwrap()).unwrap(), 5.0);
    }

    #[test]
    fn harmonic_mean_at_reference_latitudes() {
        let m = MeanModel::HarmonicLatitude { a0: 2.0, a1: 0.7, a2: -0.3 };
        let at = |lat: f64| m.eval(&Location::lat_lon(lat, 10.0).unwrap()).unwrap();
        assert_relative_eq!(at(90.0), 2.0 - 0.7, max_relative = 1e-14);
        assert_relative_eq!(at(45.0), 2.0 + (-0.3), max_relative = 1e-14);
        assert_relative_eq!(at(0.0), 2.0 + 0.7, max_relative = 1e-14);
        // circle locations have no latitude
        assert!(m.eval(&Location::angle(0.5).unwrap()).is_err());
    }

    #[test]
    fn ols_recovers_exact_harmonic_surface() {
        let truth = MeanModel::HarmonicLatitude { a0: 1.5, a1: -2.0, a2: 0.25 };
        let mut data = Vec::new();
        for (i, lat) in [-80.0, -35.0, -10.0, 20.0, 40.0, 65.0, 85.0].iter().enumerate() {
            let loc = Location::lat_lon(*lat, 30.0 * i as f64).unwrap();
            let v = truth.eval(&loc).unwrap();
            data.push((loc, v));
        }
        let fitted = fit_mean(MeanKind::HarmonicLatitude, &data).unwrap();
        match fitted {
            MeanModel::HarmonicLatitude { a0, a1, a2 } => {
                assert_relative_eq!(a0, 1.5, epsilon = 1e-10);
                assert_relative_eq!(a1, -2.0, epsilon = 1e-10);
                assert_relative_eq!(a2, 0.25, epsilon = 1e-10);
            }
            _ => unreachable!(),
        }
        let res = residuals(&fitted, &data).unwrap();
        assert!(res.iter().all(|r| r.abs() < 1e-10));
    }

    #[test]
    fn constant_fit_is_sample_mean() {
        let data = vec![
            (Location::lat_lon(0.0, 0.0).unwrap(), 1.0),
            (Location::lat_lon(10.0, 0.0).unwrap(), 2.0),
            (Location::lat_lon(20.0, 0.0).unwrap(), 6.0),
        ];
        match fit_mean(MeanKind::Constant, &data).unwrap() {
            MeanModel::Constant { a0 } => assert_relative_eq!(a0, 3.0, max_relative = 1e-15),
            _ => unreachable!(),
        }
    }

    #[test]
    fn two_latitudes_are_rank_deficient() {
        let mut data = Vec::new();
        for lon in [0.0, 90.0, 180.0] {
            data.push((Location::lat_lon(10.0, lon).unwrap(), 1.0));
            data.push((Location::lat_lon(-20.0, lon).unwrap(), 2.0));
        }
        assert!(matches!(
            fit_mean(MeanKind::HarmonicLatitude, &data),
            Err(Error::RankDeficient(_))
        ));
    }

    #[test]
    fn simulation_is_reproducible_and_linear_in_mean() {
        let model = exp_circle(1.0);
        let locs: Vec<Location> =
            (0..20).map(|i| Location::angle(i as f64 * 0.3).unwrap()).collect();
        let zero = MeanModel::zero();
        let shifted = MeanModel::Constant { a0: 3.0 };
        let a = simulate(&model, &locs, &zero, 42).unwrap();
        let b = simulate(&model, &locs, &zero, 42).unwrap();
        let c = simulate(&model, &locs, &shifted, 42).unwrap();
        for i in 0..locs.len() {
            assert_eq!(a.values[i], b.values[i]);
            assert_eq!(a.values[i] + 3.0, c.values[i]);
        }
        let d = simulate(&model, &locs, &zero, 43).unwrap();
        assert_ne!(a.values[0], d.values[0]);
    }

    #[test]
    fn single_location_monte_carlo_variance() {
        let model = exp_circle(1.0);
        let locs = vec![Location::angle(0.0).unwrap()];
        let mean = MeanModel::zero();
        let n = 100_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for seed in 0..n {
            let v = simulate(&model, &locs, &mean, seed).unwrap().values[0];
            sum += v;
            sumsq += v * v;
        }
        let var = (sumsq - sum * sum / n as f64) / (n as f64 - 1.0);
        assert!((0.97..1.03).contains(&var), "sample variance {var}");
    }

    #[test]
    fn empirical_covariance_matches_model() {
        let model = exp_circle(0.8);
        let locs: Vec<Location> =
            [0.0, 0.9, 2.0, 3.5, 5.0].iter().map(|&a| Location::angle(a).unwrap()).collect();
        let mean = MeanModel::zero();
        let reps = 20_000;
        let k = locs.len();
        let mut acc = vec![0.0; k * k];
        for seed in 0..reps {
            let v = simulate(&model, &locs, &mean, seed).unwrap().values;
            for i in 0..k {
                for j in 0..k {
                    acc[i * k + j] += v[i] * v[j];
                }
            }
        }
        let sigma = covariance_matrix(&model, &locs).unwrap();
        for i in 0..k {
            for j in 0..k {
                let emp = acc[i * k + j] / reps as f64;
                let truth = sigma[(i, j)];
                // var of a product of unit-variance normals is O(1); 3 se
                let se = 3.0 / (reps as f64).sqrt() * 1.5;
                assert!(
                    (emp - truth).abs() < se,
                    "entry ({i},{j}): empirical {emp} vs model {truth}"
                );
            }
        }
    }

    #[test]
    fn perfectly_correlated_pair_gets_equal_values() {
        // cosine frequency 2 on the circle: correlation 1 at angle pi
        let model = Model::Single(
            CovarianceModel::new(
                FamilyParams::Cosine { sigma2: 1.0, n: 2.0 },
                Metric::GreatCircle,
                Sphere::unit_circle(),
            )
            .unwrap(),
        );
        let locs = vec![
            Location::angle(0.0).unwrap(),
            Location::angle(std::f64::consts::PI).unwrap(),
        ];
        let r = simulate(&model, &locs, &MeanModel::zero(), 9).unwrap();
        assert_relative_eq!(r.values[0], r.values[1], epsilon = 1e-4);
    }
}
