//! Parametric isotropic covariance families under either metric, plus
//! convex-sum and product combinators.

pub mod bessel;
pub mod quadrature;
pub mod validity;

use nalgebra::DMatrix;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::geometry::{self, Location, Metric, Sphere};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Exponential,
    Matern,
    PoweredExponential,
    Multiquadric,
    SinePower,
    WendlandC4,
    Wave,
    Cosine,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Exponential => "exponential",
            Family::Matern => "matern",
            Family::PoweredExponential => "powered_exponential",
            Family::Multiquadric => "multiquadric",
            Family::SinePower => "sine_power",
            Family::WendlandC4 => "wendland_c4",
            Family::Wave => "wave",
            Family::Cosine => "cosine",
        }
    }
}

/// Family tag plus its parameter subset. Parameter names follow the usual
/// conventions: sigma2 variance, alpha range, nu smoothness, beta power
/// index, c/tau shape parameters (multiquadric and Wendland overload these),
/// n cosine frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FamilyParams {
    Exponential { sigma2: f64, alpha: f64 },
    Matern { sigma2: f64, alpha: f64, nu: f64 },
    PoweredExponential { sigma2: f64, alpha: f64, beta: f64 },
    Multiquadric { sigma2: f64, c: f64, tau: f64 },
    SinePower { sigma2: f64, beta: f64 },
    WendlandC4 { sigma2: f64, c: f64, tau: f64 },
    Wave { sigma2: f64, alpha: f64 },
    Cosine { sigma2: f64, n: f64 },
}

impl FamilyParams {
    pub fn family(&self) -> Family {
        match self {
            FamilyParams::Exponential { .. } => Family::Exponential,
            FamilyParams::Matern { .. } => Family::Matern,
            FamilyParams::PoweredExponential { .. } => Family::PoweredExponential,
            FamilyParams::Multiquadric { .. } => Family::Multiquadric,
            FamilyParams::SinePower { .. } => Family::SinePower,
            FamilyParams::WendlandC4 { .. } => Family::WendlandC4,
            FamilyParams::Wave { .. } => Family::Wave,
            FamilyParams::Cosine { .. } => Family::Cosine,
        }
    }

    pub fn sigma2(&self) -> f64 {
        match *self {
            FamilyParams::Exponential { sigma2, .. }
            | FamilyParams::Matern { sigma2, .. }
            | FamilyParams::PoweredExponential { sigma2, .. }
            | FamilyParams::Multiquadric { sigma2, .. }
            | FamilyParams::SinePower { sigma2, .. }
            | FamilyParams::WendlandC4 { sigma2, .. }
            | FamilyParams::Wave { sigma2, .. }
            | FamilyParams::Cosine { sigma2, .. } => sigma2,
        }
    }
}

fn require(cond: bool, name: &str, reason: String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: name.to_string(),
            reason,
        })
    }
}

fn positive(v: f64, name: &str) -> Result<()> {
    require(v > 0.0 && v.is_finite(), name, format!("must be positive and finite, got {v}"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceModel {
    params: FamilyParams,
    metric: Metric,
    sphere: Sphere,
}

impl CovarianceModel {
    pub fn new(params: FamilyParams, metric: Metric, sphere: Sphere) -> Result<Self> {
        positive(params.sigma2(), "sigma2")?;
        match params {
            FamilyParams::Exponential { alpha, .. } | FamilyParams::Wave { alpha, .. } => {
                positive(alpha, "alpha")?;
            }
            FamilyParams::Matern { alpha, nu, .. } => {
                positive(alpha, "alpha")?;
                positive(nu, "nu")?;
            }
            FamilyParams::PoweredExponential { alpha, beta, .. } => {
                positive(alpha, "alpha")?;
                require(
                    beta > 0.0 && beta <= 2.0,
                    "beta",
                    format!("must lie in (0, 2], got {beta}"),
                )?;
            }
            FamilyParams::Multiquadric { c, tau, .. } => {
                positive(c, "c")?;
                require(
                    tau > 0.0 && tau < 1.0,
                    "tau",
                    format!("must lie in (0, 1), got {tau}"),
                )?;
            }
            FamilyParams::SinePower { beta, .. } => {
                require(
                    beta > 0.0 && beta <= 2.0,
                    "beta",
                    format!("must lie in (0, 2], got {beta}"),
                )?;
            }
            FamilyParams::WendlandC4 { c, tau, .. } => {
                positive(c, "c")?;
                if metric == Metric::GreatCircle {
                    require(
                        c <= std::f64::consts::PI,
                        "c",
                        format!("must lie in (0, pi] under great_circle, got {c}"),
                    )?;
                }
                require(tau >= 6.0 && tau.is_finite(), "tau", format!("must be >= 6, got {tau}"))?;
            }
            FamilyParams::Cosine { n, .. } => {
                positive(n, "n")?;
            }
        }
        Ok(CovarianceModel { params, metric, sphere })
    }

    pub fn params(&self) -> &FamilyParams {
        &self.params
    }

    pub fn family(&self) -> Family {
        self.params.family()
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn sphere(&self) -> Sphere {
        self.sphere
    }

    /// Total variance, the value at distance zero.
    pub fn variance(&self) -> f64 {
        self.params.sigma2()
    }

    fn check_distance(&self, x: f64) -> Result<()> {
        if !(x >= 0.0) || !x.is_finite() {
            return Err(Error::InvalidParameter {
                name: "distance".to_string(),
                reason: format!("must be finite and nonnegative, got {x}"),
            });
        }
        if self.metric == Metric::GreatCircle {
            let max = self.sphere.max_great_circle();
            if x > max * (1.0 + 1e-12) + 1e-9 {
                return Err(Error::DistanceOutOfRange { distance: x, max });
            }
        }
        Ok(())
    }

    /// Covariance at the given distance (great-circle or chordal per the
    /// model's metric tag). The formula is applied to the distance as given.
    pub fn evaluate(&self, x: f64) -> Result<f64> {
        self.check_distance(x)?;
        let r = self.sphere.radius();
        Ok(match self.params {
            FamilyParams::Exponential { sigma2, alpha } => sigma2 * (-x / alpha).exp(),
            FamilyParams::Matern { sigma2, alpha, nu } => matern_value(sigma2, alpha, nu, x),
            FamilyParams::PoweredExponential { sigma2, alpha, beta } => {
                sigma2 * (-(x / alpha).powf(beta)).exp()
            }
            FamilyParams::Multiquadric { sigma2, c, tau } => {
                let denom = 1.0 + tau * tau - 2.0 * tau * (x / r).cos();
                sigma2 * (1.0 - tau).powf(2.0 * c) / denom.powf(c)
            }
            FamilyParams::SinePower { sigma2, beta } => {
                sigma2 * (1.0 - (x / (2.0 * r)).sin().powf(beta))
            }
            FamilyParams::WendlandC4 { sigma2, c, tau } => {
                let u = x / (c * r);
                if u >= 1.0 {
                    0.0
                } else {
                    sigma2 * (1.0 + tau * u + u * u * (tau * tau - 1.0) / 3.0)
                        * (1.0 - u).powf(tau)
                }
            }
            FamilyParams::Wave { sigma2, alpha } => {
                if x == 0.0 {
                    sigma2
                } else {
                    sigma2 * (alpha / x) * (x / alpha).sin()
                }
            }
            FamilyParams::Cosine { sigma2, n } => sigma2 * (n * x / r).cos(),
        })
    }
}

/// Matern sigma2 * 2^(1-nu)/Gamma(nu) * u^nu K_nu(u), u = x/alpha, computed
/// in log space so neither u^nu nor K_nu can overflow on the way.
fn matern_value(sigma2: f64, alpha: f64, nu: f64, x: f64) -> f64 {
    let u = x / alpha;
    if u == 0.0 {
        return sigma2;
    }
    let ks = bessel::bessel_k_scaled(nu, u);
    if !ks.is_finite() {
        // K_nu overflow at tiny u means the (u/2)^(2 nu) correction has
        // vanished below f64 resolution.
        return sigma2;
    }
    let ln_val = (1.0 - nu) * std::f64::consts::LN_2 - ln_gamma(nu) + nu * u.ln() - u + ks.ln();
    sigma2 * ln_val.exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CompositeKind {
    ConvexSum,
    Product,
}

/// Weighted combination of models sharing metric and sphere. Product
/// components carry weight 1.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeModel {
    kind: CompositeKind,
    components: Vec<(f64, Model)>,
    metric: Metric,
    sphere: Sphere,
}

impl CompositeModel {
    pub fn kind(&self) -> CompositeKind {
        self.kind
    }

    pub fn components(&self) -> &[(f64, Model)] {
        &self.components
    }
}

/// A single covariance model or a composite of them.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Single(CovarianceModel),
    Composite(CompositeModel),
}

impl From<CovarianceModel> for Model {
    fn from(m: CovarianceModel) -> Self {
        Model::Single(m)
    }
}

impl Model {
    pub fn metric(&self) -> Metric {
        match self {
            Model::Single(m) => m.metric(),
            Model::Composite(c) => c.metric,
        }
    }

    pub fn sphere(&self) -> Sphere {
        match self {
            Model::Single(m) => m.sphere(),
            Model::Composite(c) => c.sphere,
        }
    }

    /// Value at distance zero: sigma2, the weighted sum, or the product.
    pub fn variance(&self) -> f64 {
        match self {
            Model::Single(m) => m.variance(),
            Model::Composite(c) => match c.kind {
                CompositeKind::ConvexSum => c
                    .components
                    .iter()
                    .map(|(w, m)| w * m.variance())
                    .sum(),
                CompositeKind::Product => {
                    c.components.iter().map(|(_, m)| m.variance()).product()
                }
            },
        }
    }

    pub fn evaluate(&self, x: f64) -> Result<f64> {
        match self {
            Model::Single(m) => m.evaluate(x),
            Model::Composite(c) => match c.kind {
                CompositeKind::ConvexSum => {
                    let mut acc = 0.0;
                    for (w, m) in &c.components {
                        acc += w * m.evaluate(x)?;
                    }
                    Ok(acc)
                }
                CompositeKind::Product => {
                    let mut acc = 1.0;
                    for (_, m) in &c.components {
                        acc *= m.evaluate(x)?;
                    }
                    Ok(acc)
                }
            },
        }
    }

    /// Entrywise evaluation over a precomputed distance matrix.
    pub fn evaluate_matrix(&self, distances: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(distances.nrows(), distances.ncols());
        for j in 0..distances.ncols() {
            for i in 0..distances.nrows() {
                out[(i, j)] = self.evaluate(distances[(i, j)])?;
            }
        }
        Ok(out)
    }

    /// Evaluation over a symmetric pairwise distance matrix: one triangle is
    /// computed and mirrored. Halves the cost of the Bessel-heavy families.
    pub fn evaluate_matrix_symmetric(&self, distances: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        debug_assert_eq!(distances.nrows(), distances.ncols());
        let n = distances.nrows();
        let diag = self.variance();
        let mut out = DMatrix::zeros(n, n);
        for j in 0..n {
            out[(j, j)] = diag;
            for i in (j + 1)..n {
                let v = self.evaluate(distances[(i, j)])?;
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        Ok(out)
    }
}

/// Convex sum: weights nonnegative and summing to 1, shared metric/sphere.
pub fn convex_sum(components: Vec<(f64, Model)>) -> Result<Model> {
    if components.is_empty() {
        return Err(Error::MismatchedComposite);
    }
    let sum: f64 = components.iter().map(|(w, _)| w).sum();
    if components.iter().any(|(w, _)| *w < 0.0) || (sum - 1.0).abs() > 1e-12 {
        return Err(Error::BadWeights { sum });
    }
    let metric = components[0].1.metric();
    let sphere = components[0].1.sphere();
    if components
        .iter()
        .any(|(_, m)| m.metric() != metric || m.sphere() != sphere)
    {
        return Err(Error::MismatchedComposite);
    }
    Ok(Model::Composite(CompositeModel {
        kind: CompositeKind::ConvexSum,
        components,
        metric,
        sphere,
    }))
}

/// Product of models sharing metric and sphere.
pub fn product(components: Vec<Model>) -> Result<Model> {
    if components.is_empty() {
        return Err(Error::MismatchedComposite);
    }
    let metric = components[0].metric();
    let sphere = components[0].sphere();
    if components
        .iter()
        .any(|m| m.metric() != metric || m.sphere() != sphere)
    {
        return Err(Error::MismatchedComposite);
    }
    Ok(Model::Composite(CompositeModel {
        kind: CompositeKind::Product,
        components: components.into_iter().map(|m| (1.0, m)).collect(),
        metric,
        sphere,
    }))
}

/// Model covariance matrix over a location set.
pub fn covariance_matrix(model: &Model, locs: &[Location]) -> Result<DMatrix<f64>> {
    let d = geometry::distance_matrix(locs, &model.sphere(), model.metric())?;
    model.evaluate_matrix_symmetric(&d)
}

/// Rectangular covariance between two location sets.
pub fn cross_covariance(
    model: &Model,
    rows: &[Location],
    cols: &[Location],
) -> Result<DMatrix<f64>> {
    let d = geometry::cross_distance_matrix(rows, cols, &model.sphere(), model.metric())?;
    model.evaluate_matrix(&d)
}

/// Minimum of the correlation evaluate(x)/evaluate(0) over a uniform grid of
/// grid_size distances spanning the model's domain.
pub fn min_correlation(model: &Model, grid_size: usize) -> Result<f64> {
    if grid_size < 100 {
        return Err(Error::InvalidParameter {
            name: "grid_size".to_string(),
            reason: format!("must be at least 100, got {grid_size}"),
        });
    }
    let max = model.sphere().max_distance(model.metric());
    let var = model.variance();
    let mut min = f64::INFINITY;
    for i in 0..grid_size {
        let x = max * i as f64 / (grid_size - 1) as f64;
        let v = model.evaluate(x)? / var;
        if v < min {
            min = v;
        }
    }
    Ok(min)
}
