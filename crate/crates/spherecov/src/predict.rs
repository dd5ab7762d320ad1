//! Simple kriging on residuals, Gaussian predictive scoring, and the
//! empirical semivariogram.

use nalgebra::DVector;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::field::{residuals, MeanModel};
use crate::geometry::{great_circle_distance, Location, Sphere};
use crate::kernels::{covariance_matrix, cross_covariance, Model};
use crate::linalg::cholesky_with_jitter;

#[derive(Debug, Clone)]
pub struct Prediction {
    pub location: Location,
    pub mean: f64,
    pub sd: f64,
    /// Filled in by the caller when the truth is known, for scoring.
    pub observed: Option<f64>,
    /// Great-circle distance to the closest observation.
    pub nearest_sample_distance: f64,
}

#[derive(Debug, Clone)]
pub struct KrigeResult {
    pub predictions: Vec<Prediction>,
    /// Jitter the observation covariance needed.
    pub jitter: f64,
    /// Predictive variances that came out negative by roundoff and were
    /// clamped to zero.
    pub clamped: usize,
}

/// Simple kriging: the mean surface is fixed (two-stage estimation), the
/// model interpolates the residuals. Predictive law at target t is Gaussian
/// with mean m(t) + k_t' Sigma^-1 z and variance sigma0^2 - k_t' Sigma^-1 k_t.
pub fn krige(
    model: &Model,
    mean: &MeanModel,
    obs: &[(Location, f64)],
    targets: &[Location],
) -> Result<KrigeResult> {
    if obs.is_empty() {
        return Err(Error::EmptyLocations);
    }
    let locs: Vec<Location> = obs.iter().map(|(l, _)| *l).collect();
    let sigma = covariance_matrix(model, &locs)?;
    let factor = cholesky_with_jitter(&sigma, model.variance())?;
    drop(sigma);
    let z = DVector::from_vec(residuals(mean, obs)?);
    let u = factor.solve_lower(&z);
    let kmat = cross_covariance(model, &locs, targets)?;
    let w = factor.solve_lower_matrix(&kmat);
    let sigma0 = model.variance();
    let sphere = model.sphere();
    let mut predictions = Vec::with_capacity(targets.len());
    let mut clamped = 0;
    for (j, target) in targets.iter().enumerate() {
        let col = w.column(j);
        let mut var = sigma0 - col.norm_squared();
        if var < 0.0 {
            clamped += 1;
            var = 0.0;
        }
        let mut nearest = f64::INFINITY;
        for l in &locs {
            let d = great_circle_distance(target, l, &sphere)?;
            if d < nearest {
                nearest = d;
            }
        }
        predictions.push(Prediction {
            location: *target,
            mean: mean.eval(target)? + col.dot(&u),
            sd: var.sqrt(),
            observed: None,
            nearest_sample_distance: nearest,
        });
    }
    Ok(KrigeResult { predictions, jitter: factor.jitter, clamped })
}

fn scored_errors(preds: &[Prediction]) -> Result<Vec<f64>> {
    if preds.is_empty() {
        return Err(Error::EmptyLocations);
    }
    preds
        .iter()
        .map(|p| {
            p.observed.map(|y| y - p.mean).ok_or_else(|| Error::InvalidParameter {
                name: "predictions".to_string(),
                reason: "scoring requires observed values on every prediction".to_string(),
            })
        })
        .collect()
}

pub fn rmse(preds: &[Prediction]) -> Result<f64> {
    let e = scored_errors(preds)?;
    Ok((e.iter().map(|x| x * x).sum::<f64>() / e.len() as f64).sqrt())
}

pub fn mae(preds: &[Prediction]) -> Result<f64> {
    let e = scored_errors(preds)?;
    Ok(e.iter().map(|x| x.abs()).sum::<f64>() / e.len() as f64)
}

/// Closed-form CRPS of a Gaussian predictive law:
/// sigma * [z(2 Phi(z) - 1) + 2 phi(z) - 1/sqrt(pi)], z = (y - mu)/sigma.
/// A point forecast (sd = 0) degenerates to absolute error.
pub fn crps_gaussian(mean: f64, sd: f64, observed: f64) -> f64 {
    assert!(sd >= 0.0, "predictive sd must be nonnegative");
    if sd == 0.0 {
        return (observed - mean).abs();
    }
    let z = (observed - mean) / sd;
    let n = Normal::new(0.0, 1.0).unwrap();
    let phi = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    sd * (z * (2.0 * n.cdf(z) - 1.0) + 2.0 * phi - std::f64::consts::FRAC_1_PI.sqrt())
}

pub fn crps_mean(preds: &[Prediction]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::EmptyLocations);
    }
    let mut acc = 0.0;
    for p in preds {
        let y = p.observed.ok_or_else(|| Error::InvalidParameter {
            name: "predictions".to_string(),
            reason: "scoring requires observed values on every prediction".to_string(),
        })?;
        acc += crps_gaussian(p.mean, p.sd, y);
    }
    Ok(acc / preds.len() as f64)
}

#[derive(Debug, Clone)]
pub struct VariogramEstimate {
    /// Centers of the nonempty great-circle distance bins.
    pub bin_centers: Vec<f64>,
    /// Semivariance per bin: half the mean squared increment.
    pub semivariances: Vec<f64>,
    pub counts: Vec<usize>,
    pub sample_variance: f64,
}

/// Equal-width binning in great-circle distance up to `max_distance`
/// (default: half the domain diameter). Empty bins are omitted.
pub fn empirical_semivariogram(
    data: &[(Location, f64)],
    sphere: &Sphere,
    n_bins: usize,
    max_distance: Option<f64>,
) -> Result<VariogramEstimate> {
    if data.len() < 2 {
        return Err(Error::EmptyLocations);
    }
    if n_bins == 0 {
        return Err(Error::InvalidParameter {
            name: "n_bins".to_string(),
            reason: "need at least one bin".to_string(),
        });
    }
    let max = max_distance.unwrap_or(sphere.max_great_circle() / 2.0);
    if !(max > 0.0) || !max.is_finite() {
        return Err(Error::InvalidParameter {
            name: "max_distance".to_string(),
            reason: format!("must be positive and finite, got {max}"),
        });
    }
    let width = max / n_bins as f64;
    let mut sums = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    for i in 0..data.len() {
        for j in (i + 1)..data.len() {
            let d = great_circle_distance(&data[i].0, &data[j].0, sphere)?;
            if d > max {
                continue;
            }
            let mut bin = (d / width) as usize;
            if bin == n_bins {
                bin -= 1; // d == max lands in the last bin
            }
            let diff = data[i].1 - data[j].1;
            sums[bin] += 0.5 * diff * diff;
            counts[bin] += 1;
        }
    }
    let n = data.len() as f64;
    let mean = data.iter().map(|(_, v)| v).sum::<f64>() / n;
    let sample_variance = if data.len() > 1 {
        data.iter().map(|(_, v)| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let mut bin_centers = Vec::new();
    let mut semivariances = Vec::new();
    let mut kept_counts = Vec::new();
    for b in 0..n_bins {
        if counts[b] > 0 {
            bin_centers.push((b as f64 + 0.5) * width);
            semivariances.push(sums[b] / counts[b] as f64);
            kept_counts.push(counts[b]);
        }
    }
    Ok(VariogramEstimate { bin_centers, semivariances, counts: kept_counts, sample_variance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::simulate;
    use crate::geometry::Metric;
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

    fn obs_on_circle(angles: &[f64], values: &[f64]) -> Vec<(Location, f64)> {
        angles
            .iter()
            .zip(values.iter())
            .map(|(&a, &v)| (Location::angle(a).unwrap(), v))
            .collect()
    }

    #[test]
    fn interpolation_exactness_at_observation() {
        let model = exp_circle(1.0);
        let obs = obs_on_circle(&[0.0, 1.0, 2.5, 4.0], &[0.3, -0.8, 1.2, 0.1]);
        let out =
            krige(&model, &MeanModel::zero(), &obs, &[Location::angle(2.5).unwrap()]).unwrap();
        let p = &out.predictions[0];
        assert!((p.mean - 1.2).abs() <= 1e-6, "mean {}", p.mean);
        assert!(p.sd <= 1e-6, "sd {}", p.sd);
        assert_eq!(p.nearest_sample_distance, 0.0);
    }

    #[test]
    fn no_correlation_returns_prior() {
        // compact support: observations more than c*r away contribute nothing
        let model = Model::Single(
            CovarianceModel::new(
                FamilyParams::WendlandC4 { sigma2: 2.0, c: 0.3, tau: 6.0 },
                Metric::GreatCircle,
                Sphere::earth(),
            )
            .unwrap(),
        );
        let obs = vec![
            (Location::lat_lon(0.0, 0.0).unwrap(), 1.0),
            (Location::lat_lon(0.0, 5.0).unwrap(), -2.0),
        ];
        let mean = MeanModel::Constant { a0: 7.0 };
        let out = krige(&model, &mean, &obs, &[Location::lat_lon(0.0, 180.0).unwrap()]).unwrap();
        let p = &out.predictions[0];
        assert_relative_eq!(p.mean, 7.0, max_relative = 1e-12);
        assert_relative_eq!(p.sd, 2.0_f64.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn two_observation_closed_form() {
        let model = exp_circle(1.3);
        let a0 = Location::angle(0.0).unwrap();
        let a1 = Location::angle(1.0).unwrap();
        let target = Location::angle(0.4).unwrap();
        let z = [0.7, -0.2];
        let obs = vec![(a0, z[0]), (a1, z[1])];
        let out = krige(&model, &MeanModel::zero(), &obs, &[target]).unwrap();
        // hand inversion of the 2x2 system
        let rho = (-1.0_f64 / 1.3).exp();
        let k = [(-0.4_f64 / 1.3).exp(), (-0.6_f64 / 1.3).exp()];
        let det = 1.0 - rho * rho;
        let w = [(k[0] - rho * k[1]) / det, (k[1] - rho * k[0]) / det];
        let mean = w[0] * z[0] + w[1] * z[1];
        let var = 1.0 - (k[0] * w[0] + k[1] * w[1]);
        let p = &out.predictions[0];
        assert_relative_eq!(p.mean, mean, epsilon = 1e-10);
        assert_relative_eq!(p.sd, var.sqrt(), epsilon = 1e-10);
        assert_relative_eq!(p.nearest_sample_distance, 0.4, epsilon = 1e-12);
    }

    #[test]
    fn kriging_variance_bounded_by_sill() {
        let model = exp_circle(2.0);
        let obs = obs_on_circle(&[0.0, 0.7, 1.9, 3.1, 4.6], &[0.1, 0.4, -0.2, 0.9, -1.1]);
        let targets: Vec<Location> =
            (0..50).map(|i| Location::angle(i as f64 * 0.12).unwrap()).collect();
        let out = krige(&model, &MeanModel::zero(), &obs, &targets).unwrap();
        for p in &out.predictions {
            assert!(p.sd * p.sd <= 1.0 + 1e-9);
        }
    }

    // Frozen numerical-integration oracle for the Gaussian CRPS.
    #[test]
    fn crps_reference_values() {
        let cases = [
            (0.0, 1.0, 0.0, 0.233_694_977_255),
            (0.0, 1.0, 2.0, 1.452_791_821_686),
            (0.0, 1.0, -2.0, 1.452_791_821_686),
            (1.0, 0.5, 2.3, 1.019_369_088_598),
            (0.0, 10.0, 5.0, 3.314_035_312_549),
            (0.0, 0.1, 0.25, 0.193_981_869_081),
        ];
        for &(mu, sd, y, expect) in &cases {
            assert_relative_eq!(crps_gaussian(mu, sd, y), expect, epsilon = 1e-9);
        }
    }

    #[test]
    fn crps_symmetry_and_degeneracy() {
        for &(mu, sd, dy) in &[(0.3, 2.0, 1.7), (-1.0, 0.25, 0.4)] {
            assert_relative_eq!(
                crps_gaussian(mu, sd, mu + dy),
                crps_gaussian(mu, sd, mu - dy),
                max_relative = 1e-13
            );
        }
        assert_eq!(crps_gaussian(1.0, 0.0, 3.5), 2.5);
        assert_eq!(crps_gaussian(1.0, 0.0, 1.0), 0.0);
        assert!(crps_gaussian(0.0, 1.0, 0.0) > 0.0);
    }

    #[test]
    fn score_arithmetic() {
        let mk = |err: f64| Prediction {
            location: Location::angle(0.0).unwrap(),
            mean: 0.0,
            sd: 1.0,
            observed: Some(err),
            nearest_sample_distance: 0.0,
        };
        let perfect = vec![mk(0.0), mk(0.0)];
        assert_eq!(rmse(&perfect).unwrap(), 0.0);
        assert_eq!(mae(&perfect).unwrap(), 0.0);
        let pm = vec![mk(1.0), mk(-1.0)];
        assert_relative_eq!(rmse(&pm).unwrap(), 1.0, max_relative = 1e-15);
        assert_relative_eq!(mae(&pm).unwrap(), 1.0, max_relative = 1e-15);
        let skew = vec![mk(0.0), mk(3.0)];
        assert_relative_eq!(rmse(&skew).unwrap(), (4.5_f64).sqrt(), max_relative = 1e-12);
        assert_relative_eq!(mae(&skew).unwrap(), 1.5, max_relative = 1e-15);
        assert!(rmse(&[]).is_err());
        let mut missing = vec![mk(1.0)];
        missing[0].observed = None;
        assert!(rmse(&missing).is_err());
    }

    #[test]
    fn variogram_constant_field_is_zero() {
        let s = Sphere::unit_circle();
        let data = obs_on_circle(&[0.0, 1.0, 2.0, 3.0], &[5.0, 5.0, 5.0, 5.0]);
        let v = empirical_semivariogram(&data, &s, 10, None).unwrap();
        assert!(v.semivariances.iter().all(|&x| x == 0.0));
        assert_eq!(v.sample_variance, 0.0);
    }

    #[test]
    fn variogram_two_points() {
        let s = Sphere::unit_circle();
        let data = obs_on_circle(&[0.0, 1.0], &[0.0, 2.0]);
        let v = empirical_semivariogram(&data, &s, 5, Some(2.0)).unwrap();
        assert_eq!(v.semivariances.len(), 1);
        assert_relative_eq!(v.semivariances[0], 2.0, max_relative = 1e-15);
        assert_eq!(v.counts[0], 1);
        // pair at distance 1.0 with width 0.4 lands in bin 2
        assert_relative_eq!(v.bin_centers[0], 1.0, max_relative = 1e-12);
    }

    #[test]
    fn variogram_matches_exponential_truth() {
        let s = Sphere::unit_circle();
        let model = exp_circle(1.0);
        let locs: Vec<Location> =
            (0..150).map(|i| Location::angle(i as f64 * 2.0 * std::f64::consts::PI / 150.0).unwrap())
                .collect();
        let mean = MeanModel::zero();
        let n_bins = 20;
        let reps = 100;
        let mut per_rep = vec![Vec::with_capacity(reps); n_bins];
        for seed in 0..reps as u64 {
            let f = simulate(&model, &locs, &mean, seed).unwrap();
            let data: Vec<(Location, f64)> =
                locs.iter().copied().zip(f.values.iter().copied()).collect();
            let v = empirical_semivariogram(&data, &s, n_bins, None).unwrap();
            for (c, sv) in v.bin_centers.iter().zip(v.semivariances.iter()) {
                let b = (c / (s.max_great_circle() / 2.0) * n_bins as f64) as usize;
                per_rep[b].push(*sv);
            }
        }
        for b in 0..n_bins {
            if per_rep[b].len() < reps / 2 {
                continue;
            }
            let m = per_rep[b].len() as f64;
            let avg = per_rep[b].iter().sum::<f64>() / m;
            let var =
                per_rep[b].iter().map(|x| (x - avg) * (x - avg)).sum::<f64>() / (m - 1.0);
            let se = (var / m).sqrt();
            let center = (b as f64 + 0.5) * (s.max_great_circle() / 2.0) / n_bins as f64;
            let truth = 1.0 - (-center).exp();
            assert!(
                (avg - truth).abs() < 4.0 * se + 0.01,
                "bin {b}: empirical {avg} vs truth {truth} (se {se})"
            );
        }
    }
}
