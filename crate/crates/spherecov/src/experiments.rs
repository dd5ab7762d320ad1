//! Replication harness: the circle-arc and sphere-threshold simulation
//! designs plus the two gridded-data sampling designs, with score
//! aggregation and plot-ready per-prediction records.

use nalgebra::DVector;
use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{fit_mean, simulate_with_rng, MeanKind, MeanModel};
use crate::fit::{get_param, mle_fit, FitSpec};
use crate::geometry::{Location, Metric, Sphere};
use crate::grid::{GridDataset, GridTransform};
use crate::kernels::{convex_sum, CovarianceModel, FamilyParams, Model};
use crate::linalg::blocked_cholesky;
use crate::predict::{crps_gaussian, krige, Prediction};
use crate::rng::replicate_rng;

// ---------------------------------------------------------------------------
// Designs

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLonBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl LatLonBox {
    pub fn contains(&self, loc: &Location) -> bool {
        match (loc.latitude(), loc.longitude()) {
            (Some(lat), Some(lon)) => {
                lat >= self.lat_min
                    && lat <= self.lat_max
                    && lon >= self.lon_min
                    && lon <= self.lon_max
            }
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DesignKind {
    /// Estimation angles sampled from the far arc, fixed prediction angles.
    S1Arc,
    /// Estimation where the centered field is below `lower`, prediction
    /// where it is above `upper`.
    S2Threshold { lower: f64, upper: f64 },
    /// Estimation and prediction restricted to lat-lon rectangles.
    GeoRegion { estimation: LatLonBox, prediction: LatLonBox },
    /// Estimation west of the prime meridian, prediction east of it.
    GeoHemisphere,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    #[serde(flatten)]
    pub kind: DesignKind,
    pub n_estimation: usize,
    pub n_prediction: usize,
    pub replicates: usize,
    pub master_seed: u64,
}

impl Design {
    pub fn validate(&self) -> Result<()> {
        if self.n_estimation == 0 || self.n_prediction == 0 || self.replicates == 0 {
            return Err(Error::Design(
                "estimation, prediction, and replicate counts must be positive".to_string(),
            ));
        }
        Ok(())
    }
}

/// The fixed prediction grid of the circle design: 10 equally spaced angles
/// in [0, pi/2).
pub fn s1_prediction_angles() -> Vec<f64> {
    (0..10).map(|k| k as f64 * std::f64::consts::PI / 20.0).collect()
}

/// Draws one replicate's estimation and prediction sets.
///
/// Grid-based kinds sample uniformly without replacement from the eligible
/// cells of `grid`; the threshold kind additionally needs the replicate's
/// field values. The circle kind ignores `grid`.
pub fn sample_design(
    design: &Design,
    replicate: usize,
    grid: Option<(&[Location], Option<&[f64]>)>,
) -> Result<(Vec<Location>, Vec<Location>)> {
    let mut rng = replicate_rng(design.master_seed, replicate as u64);
    match &design.kind {
        DesignKind::S1Arc => {
            let est = draw_s1_angles(design.n_estimation, &mut rng)?;
            let pred = s1_prediction_angles()
                .into_iter()
                .map(Location::angle)
                .collect::<Result<_>>()?;
            Ok((est, pred))
        }
        _ => {
            let (locs, values) =
                grid.ok_or_else(|| Error::Design("this design samples a grid".to_string()))?;
            let (ei, pi) = sample_grid_indices(design, &mut rng, locs, values)?;
            Ok((
                ei.iter().map(|&i| locs[i]).collect(),
                pi.iter().map(|&i| locs[i]).collect(),
            ))
        }
    }
}

fn draw_s1_angles(n: usize, rng: &mut ChaCha12Rng) -> Result<Vec<Location>> {
    let arc = Uniform::new(std::f64::consts::FRAC_PI_2, 1.5 * std::f64::consts::PI);
    (0..n).map(|_| Location::angle(arc.sample(rng))).collect()
}

fn sample_grid_indices(
    design: &Design,
    rng: &mut ChaCha12Rng,
    locs: &[Location],
    values: Option<&[f64]>,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let (est_eligible, pred_eligible): (Vec<usize>, Vec<usize>) = match &design.kind {
        DesignKind::S2Threshold { lower, upper } => {
            let v = values.ok_or_else(|| {
                Error::Design("threshold sampling needs field values".to_string())
            })?;
            if v.len() != locs.len() {
                return Err(Error::Design("field length does not match grid".to_string()));
            }
            (
                (0..locs.len()).filter(|&i| v[i] < *lower).collect(),
                (0..locs.len()).filter(|&i| v[i] > *upper).collect(),
            )
        }
        DesignKind::GeoRegion { estimation, prediction } => (
            (0..locs.len()).filter(|&i| estimation.contains(&locs[i])).collect(),
            (0..locs.len()).filter(|&i| prediction.contains(&locs[i])).collect(),
        ),
        DesignKind::GeoHemisphere => (
            (0..locs.len())
                .filter(|&i| locs[i].longitude().is_some_and(|l| l < 0.0))
                .collect(),
            (0..locs.len())
                .filter(|&i| locs[i].longitude().is_some_and(|l| l > 0.0))
                .collect(),
        ),
        DesignKind::S1Arc => unreachable!("circle design never reaches grid sampling"),
    };
    if est_eligible.len() < design.n_estimation {
        return Err(Error::EligibleShortfall {
            available: est_eligible.len(),
            requested: design.n_estimation,
        });
    }
    let est: Vec<usize> = rand::seq::index::sample(rng, est_eligible.len(), design.n_estimation)
        .iter()
        .map(|k| est_eligible[k])
        .collect();
    // keep the sets disjoint even when the eligible regions overlap
    let taken: std::collections::HashSet<usize> = est.iter().copied().collect();
    let pred_pool: Vec<usize> =
        pred_eligible.into_iter().filter(|i| !taken.contains(i)).collect();
    if pred_pool.len() < design.n_prediction {
        return Err(Error::EligibleShortfall {
            available: pred_pool.len(),
            requested: design.n_prediction,
        });
    }
    let pred: Vec<usize> = rand::seq::index::sample(rng, pred_pool.len(), design.n_prediction)
        .iter()
        .map(|k| pred_pool[k])
        .collect();
    Ok((est, pred))
}

// ---------------------------------------------------------------------------
// Score aggregation

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub sd: f64,
}

pub fn mean_sd(xs: &[f64]) -> Stat {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return Stat { mean: f64::NAN, sd: f64::NAN };
    }
    let mean = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Stat { mean, sd }
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamSummary {
    pub path: String,
    pub mean: f64,
    pub sd: f64,
}

/// One model's scores in one replicate, kept raw so every reported mean and
/// sd is recomputable.
#[derive(Debug, Clone, Serialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub estimates: Vec<(String, f64)>,
    pub loglik: f64,
    pub rmse: f64,
    pub mae: f64,
    pub crps: f64,
    pub boundary: Vec<String>,
    pub jitter: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelTable {
    pub name: String,
    pub replicates_used: usize,
    pub fit_failures: usize,
    pub estimates: Vec<ParamSummary>,
    pub loglik: Stat,
    pub rmse: Stat,
    pub mae: Stat,
    pub crps: Stat,
    #[serde(skip)]
    pub records: Vec<ReplicateRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScoreTable {
    pub design: String,
    pub master_seed: u64,
    pub replicates: usize,
    /// Replicates lost before fitting (e.g. threshold shortfall), dropped
    /// for every model to keep the comparison aligned.
    pub dropped_replicates: usize,
    pub models: Vec<ModelTable>,
}

/// One prediction of one model in one replicate; the plot-ready records
/// behind the distance-binned boxplots.
#[derive(Debug, Clone, Serialize)]
pub struct PredictionRecord {
    pub replicate: usize,
    pub model: String,
    pub prediction_index: usize,
    pub nearest_distance: f64,
    pub abs_error: f64,
    pub crps: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentOutput {
    pub table: ScoreTable,
    #[serde(skip)]
    pub records: Vec<PredictionRecord>,
}

struct ModelAccumulator {
    name: String,
    paths: Vec<String>,
    records: Vec<ReplicateRecord>,
    failures: usize,
}

impl ModelAccumulator {
    fn new(name: &str, paths: Vec<String>) -> Self {
        ModelAccumulator { name: name.to_string(), paths, records: Vec::new(), failures: 0 }
    }

    fn finish(self) -> ModelTable {
        let estimates = self
            .paths
            .iter()
            .enumerate()
            .map(|(k, path)| {
                let xs: Vec<f64> = self.records.iter().map(|r| r.estimates[k].1).collect();
                let s = mean_sd(&xs);
                ParamSummary { path: path.clone(), mean: s.mean, sd: s.sd }
            })
            .collect();
        let col = |f: fn(&ReplicateRecord) -> f64| {
            mean_sd(&self.records.iter().map(f).collect::<Vec<_>>())
        };
        ModelTable {
            name: self.name,
            replicates_used: self.records.len(),
            fit_failures: self.failures,
            estimates,
            loglik: col(|r| r.loglik),
            rmse: col(|r| r.rmse),
            mae: col(|r| r.mae),
            crps: col(|r| r.crps),
            records: self.records,
        }
    }
}

fn scores_of(preds: &[Prediction]) -> (f64, f64, f64) {
    let n = preds.len() as f64;
    let mut se = 0.0;
    let mut ae = 0.0;
    let mut cr = 0.0;
    for p in preds {
        let y = p.observed.expect("scored predictions carry observations");
        se += (y - p.mean) * (y - p.mean);
        ae += (y - p.mean).abs();
        cr += crps_gaussian(p.mean, p.sd, y);
    }
    ((se / n).sqrt(), ae / n, cr / n)
}

/// Fits one suite model on one replicate and scores its predictions.
/// Failures are recorded, not fatal.
#[allow(clippy::too_many_arguments)]
fn run_model_replicate(
    acc: &mut ModelAccumulator,
    records: &mut Vec<PredictionRecord>,
    spec: &FitSpec,
    mean: &MeanModel,
    est: &[(Location, f64)],
    targets: &[Location],
    target_values: &[f64],
    replicate: usize,
) {
    let fitted = match mle_fit(spec, mean, est) {
        Ok(f) => f,
        Err(_) => {
            acc.failures += 1;
            return;
        }
    };
    let mut out = match krige(&fitted.model, mean, est, targets) {
        Ok(o) => o,
        Err(_) => {
            acc.failures += 1;
            return;
        }
    };
    for (p, y) in out.predictions.iter_mut().zip(target_values.iter()) {
        p.observed = Some(*y);
    }
    let (rmse, mae, crps) = scores_of(&out.predictions);
    let estimates: Vec<(String, f64)> = acc
        .paths
        .iter()
        .map(|p| (p.clone(), get_param(&fitted.model, p).unwrap_or(f64::NAN)))
        .collect();
    for (k, p) in out.predictions.iter().enumerate() {
        records.push(PredictionRecord {
            replicate,
            model: acc.name.clone(),
            prediction_index: k,
            nearest_distance: p.nearest_sample_distance,
            abs_error: (p.observed.unwrap() - p.mean).abs(),
            crps: crps_gaussian(p.mean, p.sd, p.observed.unwrap()),
        });
    }
    acc.records.push(ReplicateRecord {
        replicate,
        estimates,
        loglik: fitted.loglik,
        rmse,
        mae,
        crps,
        boundary: fitted.boundary,
        jitter: fitted.jitter,
    });
}

// ---------------------------------------------------------------------------
// Model suites

fn single(params: FamilyParams, metric: Metric, sphere: Sphere) -> Model {
    Model::Single(CovarianceModel::new(params, metric, sphere).expect("suite template"))
}

fn matern_spec(metric: Metric, sphere: Sphere, var: f64) -> FitSpec {
    let d = sphere.max_distance(metric);
    let nu = if metric == Metric::GreatCircle { 0.25 } else { 1.0 };
    let t = single(FamilyParams::Matern { sigma2: var, alpha: d / 8.0, nu }, metric, sphere);
    FitSpec::new(t, &["sigma2", "alpha", "nu"])
}

/// The threshold study's convex sum: sine power plus cosine.
fn sine_cosine_spec(sphere: Sphere, var: f64) -> FitSpec {
    let sp = single(
        FamilyParams::SinePower { sigma2: var, beta: 1.0 },
        Metric::GreatCircle,
        sphere,
    );
    let cos = single(
        FamilyParams::Cosine { sigma2: var, n: 1.0 },
        Metric::GreatCircle,
        sphere,
    );
    let t = convex_sum(vec![(0.5, sp), (0.5, cos)]).expect("suite template");
    FitSpec::new(t, &["*.sigma2", "lambda", "0.beta"])
}

/// The gridded-data study's convex sum: great-circle Wendland plus cosine.
fn wendland_cosine_spec(sphere: Sphere, var: f64) -> FitSpec {
    let w = single(
        FamilyParams::WendlandC4 { sigma2: var, c: 2.0, tau: 8.0 },
        Metric::GreatCircle,
        sphere,
    );
    let cos = single(
        FamilyParams::Cosine { sigma2: var, n: 1.0 },
        Metric::GreatCircle,
        sphere,
    );
    let t = convex_sum(vec![(0.5, w), (0.5, cos)]).expect("suite template");
    FitSpec::new(t, &["*.sigma2", "lambda", "0.c", "0.tau"])
}

fn wave_spec(sphere: Sphere, var: f64) -> FitSpec {
    let d = sphere.max_distance(Metric::Chordal);
    let t = single(
        FamilyParams::Wave { sigma2: var, alpha: d / 8.0 },
        Metric::Chordal,
        sphere,
    );
    FitSpec::new(t, &["sigma2", "alpha"])
}

fn wendland_spec(metric: Metric, sphere: Sphere, var: f64) -> FitSpec {
    let c = if metric == Metric::GreatCircle { 2.0 } else { 1.0 };
    let t = single(FamilyParams::WendlandC4 { sigma2: var, c, tau: 8.0 }, metric, sphere);
    FitSpec::new(t, &["sigma2", "c", "tau"])
}

fn variance_of(data: &[(Location, f64)]) -> f64 {
    let xs: Vec<f64> = data.iter().map(|(_, v)| *v).collect();
    let s = mean_sd(&xs);
    (s.sd * s.sd).max(1e-6)
}

/// Model labels of the gridded-data comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GeoModelKind {
    MC,
    MG,
    C,
    WG,
    WC,
}

impl GeoModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            GeoModelKind::MC => "MC",
            GeoModelKind::MG => "MG",
            GeoModelKind::C => "C",
            GeoModelKind::WG => "WG",
            GeoModelKind::WC => "WC",
        }
    }

    fn spec(&self, sphere: Sphere, var: f64) -> FitSpec {
        match self {
            GeoModelKind::MC => matern_spec(Metric::Chordal, sphere, var),
            GeoModelKind::MG => matern_spec(Metric::GreatCircle, sphere, var),
            GeoModelKind::C => wendland_cosine_spec(sphere, var),
            GeoModelKind::WG => wendland_spec(Metric::GreatCircle, sphere, var),
            GeoModelKind::WC => wendland_spec(Metric::Chordal, sphere, var),
        }
    }
}

// ---------------------------------------------------------------------------
// Circle experiment

#[derive(Debug, Clone, Serialize)]
pub struct S1AngleRecord {
    pub replicate: usize,
    pub model: String,
    pub angle_index: usize,
    pub angle_rad: f64,
    pub abs_error: f64,
    pub crps: f64,
    pub nearest_distance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct S1RangeOutput {
    pub alpha: f64,
    pub table: ScoreTable,
    #[serde(skip)]
    pub angle_records: Vec<S1AngleRecord>,
}

/// Circle-arc design: the truth is a great-circle exponential field with
/// each range in `ranges`; a great-circle and a chordal exponential model
/// compete. With `fit_parameters` false both models keep the truth's values
/// (smoke mode).
pub fn run_s1(design: &Design, ranges: &[f64], fit_parameters: bool) -> Result<Vec<S1RangeOutput>> {
    design.validate()?;
    if design.kind != DesignKind::S1Arc {
        return Err(Error::Design("run_s1 requires the circle-arc design".to_string()));
    }
    if ranges.is_empty() {
        return Err(Error::Design("no range values supplied".to_string()));
    }
    let sphere = Sphere::unit_circle();
    let mean = MeanModel::zero();
    let mut outputs = Vec::new();
    for &alpha in ranges {
        let truth = single(
            FamilyParams::Exponential { sigma2: 1.0, alpha },
            Metric::GreatCircle,
            sphere,
        );
        let mut accs = vec![
            ModelAccumulator::new("gc", vec!["sigma2".into(), "alpha".into()]),
            ModelAccumulator::new("chordal", vec!["sigma2".into(), "alpha".into()]),
        ];
        let mut angle_records = Vec::new();
        let mut pred_records = Vec::new();
        for rep in 0..design.replicates {
            let mut rng = replicate_rng(design.master_seed, rep as u64);
            let est_locs = draw_s1_angles(design.n_estimation, &mut rng)?;
            let pred_locs: Vec<Location> = s1_prediction_angles()
                .into_iter()
                .map(Location::angle)
                .collect::<Result<_>>()?;
            let mut all = est_locs.clone();
            all.extend(pred_locs.iter().copied());
            let f = simulate_with_rng(&truth, &all, &mean, &mut rng)?;
            let est: Vec<(Location, f64)> = est_locs
                .iter()
                .copied()
                .zip(f.values[..est_locs.len()].iter().copied())
                .collect();
            let pred_values = &f.values[est_locs.len()..];
            let var = variance_of(&est);
            for (mi, metric) in [Metric::GreatCircle, Metric::Chordal].into_iter().enumerate() {
                let spec = if fit_parameters {
                    let d = sphere.max_distance(metric);
                    let t = single(
                        FamilyParams::Exponential { sigma2: var, alpha: d / 4.0 },
                        metric,
                        sphere,
                    );
                    FitSpec::new(t, &["sigma2", "alpha"])
                } else {
                    let t = single(
                        FamilyParams::Exponential { sigma2: 1.0, alpha },
                        metric,
                        sphere,
                    );
                    FitSpec::new(t, &[])
                };
                let before = accs[mi].records.len();
                run_model_replicate(
                    &mut accs[mi],
                    &mut pred_records,
                    &spec,
                    &mean,
                    &est,
                    &pred_locs,
                    pred_values,
                    rep,
                );
                if accs[mi].records.len() > before {
                    let name = accs[mi].name.clone();
                    for r in pred_records.iter().rev().take(pred_locs.len()) {
                        angle_records.push(S1AngleRecord {
                            replicate: rep,
                            model: name.clone(),
                            angle_index: r.prediction_index,
                            angle_rad: r.prediction_index as f64 * std::f64::consts::PI / 20.0,
                            abs_error: r.abs_error,
                            crps: r.crps,
                            nearest_distance: r.nearest_distance,
                        });
                    }
                }
            }
        }
        angle_records.sort_by(|a, b| {
            (a.replicate, &a.model, a.angle_index)
                .cmp(&(b.replicate, &b.model, b.angle_index))
        });
        outputs.push(S1RangeOutput {
            alpha,
            table: ScoreTable {
                design: format!("s1_arc alpha={alpha}"),
                master_seed: design.master_seed,
                replicates: design.replicates,
                dropped_replicates: 0,
                models: accs.into_iter().map(|a| a.finish()).collect(),
            },
            angle_records,
        });
    }
    Ok(outputs)
}

// ---------------------------------------------------------------------------
// Sphere threshold experiment

/// Substitute generator for the sphere study: the convex-sum model with the
/// sine-power and cosine components, on the full simulation grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct S2Generator {
    pub sigma2: f64,
    pub lambda: f64,
    pub beta: f64,
    pub n_lon: usize,
    pub n_lat: usize,
}

impl Default for S2Generator {
    fn default() -> Self {
        S2Generator { sigma2: 4.0, lambda: 0.7, beta: 1.5, n_lon: 128, n_lat: 64 }
    }
}

impl S2Generator {
    pub fn model(&self, sphere: Sphere) -> Result<Model> {
        let sp = Model::Single(CovarianceModel::new(
            FamilyParams::SinePower { sigma2: self.sigma2, beta: self.beta },
            Metric::GreatCircle,
            sphere,
        )?);
        let cos = Model::Single(CovarianceModel::new(
            FamilyParams::Cosine { sigma2: self.sigma2, n: 1.0 },
            Metric::GreatCircle,
            sphere,
        )?);
        convex_sum(vec![(self.lambda, sp), (1.0 - self.lambda, cos)])
    }

    /// Cell-centered global grid, row-major with latitude outer.
    pub fn grid_locations(&self) -> Result<Vec<Location>> {
        let mut locs = Vec::with_capacity(self.n_lon * self.n_lat);
        for j in 0..self.n_lat {
            let lat = -90.0 + (j as f64 + 0.5) * 180.0 / self.n_lat as f64;
            for k in 0..self.n_lon {
                let lon = k as f64 * 360.0 / self.n_lon as f64;
                locs.push(Location::lat_lon(lat, lon)?);
            }
        }
        Ok(locs)
    }
}

/// Sphere threshold design: fields drawn from the substitute generator on
/// the full grid, centered by the grid average; Matern-chordal,
/// Matern-great-circle, the convex sum, and the hole-effect model compete.
/// Replicates whose eligible sets fall short are dropped for every model
/// and counted.
pub fn run_s2(design: &Design, generator: &S2Generator) -> Result<ExperimentOutput> {
    design.validate()?;
    let DesignKind::S2Threshold { lower, upper } = design.kind else {
        return Err(Error::Design("run_s2 requires the threshold design".to_string()));
    };
    let sphere = Sphere::earth();
    let truth = generator.model(sphere)?;
    let locs = generator.grid_locations()?;
    let sigma = crate::kernels::covariance_matrix(&truth, &locs)?;
    let (l, _jitter) = blocked_cholesky(&sigma, truth.variance())?;
    drop(sigma);

    let mut accs = vec![
        ModelAccumulator::new("MC", vec!["sigma2".into(), "alpha".into(), "nu".into()]),
        ModelAccumulator::new("MG", vec!["sigma2".into(), "alpha".into(), "nu".into()]),
        ModelAccumulator::new("C", vec!["*.sigma2".into(), "lambda".into(), "0.beta".into()]),
        ModelAccumulator::new("H", vec!["sigma2".into(), "alpha".into()]),
    ];
    let mut records = Vec::new();
    let mut dropped = 0;
    for rep in 0..design.replicates {
        let mut rng = replicate_rng(design.master_seed, rep as u64);
        let z = DVector::from_iterator(
            locs.len(),
            (0..locs.len()).map(|_| rng.sample::<f64, _>(StandardNormal)),
        );
        let mut field = &l * z;
        let mean = field.sum() / field.len() as f64;
        field.apply(|v| *v -= mean);
        let values = field.as_slice();
        let (est_idx, pred_idx) =
            match sample_grid_indices_with(&design.kind, design, &mut rng, &locs, Some(values)) {
                Ok(v) => v,
                Err(Error::EligibleShortfall { .. }) => {
                    dropped += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
        debug_assert!(values.iter().filter(|v| **v < lower).count() >= est_idx.len());
        debug_assert!(values.iter().filter(|v| **v > upper).count() >= pred_idx.len());
        let est: Vec<(Location, f64)> =
            est_idx.iter().map(|&i| (locs[i], values[i])).collect();
        let targets: Vec<Location> = pred_idx.iter().map(|&i| locs[i]).collect();
        let target_values: Vec<f64> = pred_idx.iter().map(|&i| values[i]).collect();
        let var = variance_of(&est);
        let zero = MeanModel::zero();
        let specs = [
            matern_spec(Metric::Chordal, sphere, var),
            matern_spec(Metric::GreatCircle, sphere, var),
            sine_cosine_spec(sphere, var),
            wave_spec(sphere, var),
        ];
        for (acc, spec) in accs.iter_mut().zip(specs.iter()) {
            run_model_replicate(
                acc,
                &mut records,
                spec,
                &zero,
                &est,
                &targets,
                &target_values,
                rep,
            );
        }
    }
    Ok(ExperimentOutput {
        table: ScoreTable {
            design: format!(
                "s2_threshold lower={lower} upper={upper} sigma2={}",
                generator.sigma2
            ),
            master_seed: design.master_seed,
            replicates: design.replicates,
            dropped_replicates: dropped,
            models: accs.into_iter().map(|a| a.finish()).collect(),
        },
        records,
    })
}

fn sample_grid_indices_with(
    _kind: &DesignKind,
    design: &Design,
    rng: &mut ChaCha12Rng,
    locs: &[Location],
    values: Option<&[f64]>,
) -> Result<(Vec<usize>, Vec<usize>)> {
    sample_grid_indices(design, rng, locs, values)
}

// ---------------------------------------------------------------------------
// Gridded-data experiment

/// Gridded-data design: per replicate, sample the estimation and prediction
/// cells, fit the mean by least squares on the estimation set, fit each
/// competing covariance model to the residuals, and krige the prediction
/// cells.
pub fn run_geo(
    dataset: &GridDataset,
    design: &Design,
    mean_kind: MeanKind,
    models: &[GeoModelKind],
) -> Result<ExperimentOutput> {
    design.validate()?;
    if !matches!(design.kind, DesignKind::GeoRegion { .. } | DesignKind::GeoHemisphere) {
        return Err(Error::Design("run_geo requires a gridded-data design".to_string()));
    }
    if models.is_empty() {
        return Err(Error::Design("empty model list".to_string()));
    }
    let sphere = Sphere::earth();
    let locs = dataset.locations()?;
    let values = dataset.flat_values();
    let mut accs: Vec<ModelAccumulator> = models
        .iter()
        .map(|m| {
            let paths = m.spec(sphere, 1.0).free.iter().map(|f| f.path.clone()).collect();
            ModelAccumulator::new(m.name(), paths)
        })
        .collect();
    let mut records = Vec::new();
    for rep in 0..design.replicates {
        let mut rng = replicate_rng(design.master_seed, rep as u64);
        let (est_idx, pred_idx) =
            sample_grid_indices(design, &mut rng, &locs, Some(&values))?;
        let est_raw: Vec<(Location, f64)> =
            est_idx.iter().map(|&i| (locs[i], values[i])).collect();
        let mean = fit_mean(mean_kind, &est_raw)?;
        let targets: Vec<Location> = pred_idx.iter().map(|&i| locs[i]).collect();
        let target_values: Vec<f64> = pred_idx.iter().map(|&i| values[i]).collect();
        let resid: Vec<(Location, f64)> = est_raw
            .iter()
            .map(|(l, v)| Ok((*l, v - mean.eval(l)?)))
            .collect::<Result<_>>()?;
        let var = variance_of(&resid);
        for (acc, kind) in accs.iter_mut().zip(models.iter()) {
            let spec = kind.spec(sphere, var);
            run_model_replicate(
                acc,
                &mut records,
                &spec,
                &mean,
                &est_raw,
                &targets,
                &target_values,
                rep,
            );
        }
    }
    let label = match &design.kind {
        DesignKind::GeoRegion { .. } => "geo_region",
        _ => "geo_hemisphere",
    };
    Ok(ExperimentOutput {
        table: ScoreTable {
            design: format!("{label} mean={mean_kind:?}"),
            master_seed: design.master_seed,
            replicates: design.replicates,
            dropped_replicates: 0,
            models: accs.into_iter().map(|a| a.finish()).collect(),
        },
        records,
    })
}

/// One realization of `model` plus `mean` on a regular grid, packaged as a
/// dataset. With `store_squared` the written values are squared so loading
/// with the square-root transform recovers the field (the field must then
/// stay positive, e.g. via a large mean offset).
pub fn simulate_grid_dataset(
    model: &Model,
    mean: &MeanModel,
    latitudes: &[f64],
    longitudes: &[f64],
    seed: u64,
    store_squared: bool,
) -> Result<GridDataset> {
    let mut locs = Vec::with_capacity(latitudes.len() * longitudes.len());
    for &lat in latitudes {
        for &lon in longitudes {
            locs.push(Location::lat_lon(lat, lon)?);
        }
    }
    let sigma = crate::kernels::covariance_matrix(model, &locs)?;
    let (l, _jitter) = blocked_cholesky(&sigma, model.variance())?;
    drop(sigma);
    let mut rng = crate::rng::seeded_rng(seed);
    let z = DVector::from_iterator(
        locs.len(),
        (0..locs.len()).map(|_| rng.sample::<f64, _>(StandardNormal)),
    );
    let f = &l * z;
    let nlat = latitudes.len();
    let nlon = longitudes.len();
    let mut values = nalgebra::DMatrix::zeros(nlat, nlon);
    for i in 0..nlat {
        for j in 0..nlon {
            let v = mean.eval(&locs[i * nlon + j])? + f[i * nlon + j];
            values[(i, j)] = if store_squared {
                if v < 0.0 {
                    return Err(Error::Grid(format!(
                        "cannot store squared values: simulated value {v} is negative"
                    )));
                }
                v * v
            } else {
                v
            };
        }
    }
    let mut ds = GridDataset::new(
        latitudes.to_vec(),
        longitudes.to_vec(),
        values,
        &format!("synthetic seed={seed}"),
    )?;
    if store_squared {
        // dataset consumers load this file with the sqrt transform
        ds.transform = GridTransform::None;
    }
    Ok(ds)
}
