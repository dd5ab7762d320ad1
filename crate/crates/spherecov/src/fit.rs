//! Maximum-likelihood estimation of covariance parameters.
//!
//! Free parameters are addressed by path ("alpha" on a single model,
//! "0.beta" for component 0 of a composite, "*.sigma2" tied across all
//! components, "lambda" for the weight of a two-component convex sum),
//! mapped to an unconstrained scale by a logit over their box, and
//! optimized with a multi-start Nelder-Mead simplex.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::field::{residuals, MeanModel};
use crate::geometry::{distance_matrix, Location, Metric};
use crate::kernels::{convex_sum, product, CompositeKind, CovarianceModel, FamilyParams, Model};
use crate::linalg::cholesky_with_jitter;

pub const DEFAULT_STARTS: usize = 5;
pub const DEFAULT_MAX_EVALS: usize = 2000;
const DIAMETER_TOL: f64 = 1e-8;
const FSPREAD_TOL: f64 = 1e-10;
const TIE_TOL: f64 = 1e-6;
/// Estimates within this fraction of the transformed box edge are snapped
/// to the bound and flagged.
const SNAP_U: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct FreeParam {
    pub path: String,
    /// Natural-scale box; None derives the default for the parameter kind.
    pub bounds: Option<(f64, f64)>,
}

impl FreeParam {
    pub fn new(path: &str) -> Self {
        FreeParam { path: path.to_string(), bounds: None }
    }
}

#[derive(Debug, Clone)]
pub struct FitSpec {
    /// Model holding fixed parameter values and the first start point.
    pub template: Model,
    pub free: Vec<FreeParam>,
    pub starts: usize,
    pub max_evals: usize,
    /// Extra start points in natural scale, one value per free parameter.
    pub explicit_starts: Vec<Vec<f64>>,
}

impl FitSpec {
    pub fn new(template: Model, free: &[&str]) -> Self {
        FitSpec {
            template,
            free: free.iter().map(|p| FreeParam::new(p)).collect(),
            starts: DEFAULT_STARTS,
            max_evals: DEFAULT_MAX_EVALS,
            explicit_starts: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FittedModel {
    pub model: Model,
    pub loglik: f64,
    pub converged: bool,
    pub evaluations: usize,
    pub jitter: f64,
    /// Paths of parameters that landed on a bound.
    pub boundary: Vec<String>,
}

// ---------------------------------------------------------------------------
// Parameter paths

fn leaf_get(params: &FamilyParams, name: &str) -> Option<f64> {
    use FamilyParams::*;
    match (params, name) {
        (Exponential { sigma2, .. }, "sigma2")
        | (Matern { sigma2, .. }, "sigma2")
        | (PoweredExponential { sigma2, .. }, "sigma2")
        | (Multiquadric { sigma2, .. }, "sigma2")
        | (SinePower { sigma2, .. }, "sigma2")
        | (WendlandC4 { sigma2, .. }, "sigma2")
        | (Wave { sigma2, .. }, "sigma2")
        | (Cosine { sigma2, .. }, "sigma2") => Some(*sigma2),
        (Exponential { alpha, .. }, "alpha")
        | (Matern { alpha, .. }, "alpha")
        | (PoweredExponential { alpha, .. }, "alpha")
        | (Wave { alpha, .. }, "alpha") => Some(*alpha),
        (Matern { nu, .. }, "nu") => Some(*nu),
        (PoweredExponential { beta, .. }, "beta") | (SinePower { beta, .. }, "beta") => {
            Some(*beta)
        }
        (Multiquadric { c, .. }, "c") | (WendlandC4 { c, .. }, "c") => Some(*c),
        (Multiquadric { tau, .. }, "tau") | (WendlandC4 { tau, .. }, "tau") => Some(*tau),
        (Cosine { n, .. }, "n") => Some(*n),
        _ => None,
    }
}

fn leaf_set(params: &FamilyParams, name: &str, value: f64) -> Option<FamilyParams> {
    use FamilyParams::*;
    let mut p = params.clone();
    let slot: &mut f64 = match (&mut p, name) {
        (Exponential { sigma2, .. }, "sigma2")
        | (Matern { sigma2, .. }, "sigma2")
        | (PoweredExponential { sigma2, .. }, "sigma2")
        | (Multiquadric { sigma2, .. }, "sigma2")
        | (SinePower { sigma2, .. }, "sigma2")
        | (WendlandC4 { sigma2, .. }, "sigma2")
        | (Wave { sigma2, .. }, "sigma2")
        | (Cosine { sigma2, .. }, "sigma2") => sigma2,
        (Exponential { alpha, .. }, "alpha")
        | (Matern { alpha, .. }, "alpha")
        | (PoweredExponential { alpha, .. }, "alpha")
        | (Wave { alpha, .. }, "alpha") => alpha,
        (Matern { nu, .. }, "nu") => nu,
        (PoweredExponential { beta, .. }, "beta") | (SinePower { beta, .. }, "beta") => beta,
        (Multiquadric { c, .. }, "c") | (WendlandC4 { c, .. }, "c") => c,
        (Multiquadric { tau, .. }, "tau") | (WendlandC4 { tau, .. }, "tau") => tau,
        (Cosine { n, .. }, "n") => n,
        _ => return None,
    };
    *slot = value;
    Some(p)
}

fn path_error(path: &str, reason: &str) -> Error {
    Error::InvalidParameter { name: format!("path {path}"), reason: reason.to_string() }
}

/// Read a parameter by path.
pub fn get_param(model: &Model, path: &str) -> Result<f64> {
    match model {
        Model::Single(m) => match path.split_once('.') {
            None => leaf_get(m.params(), path)
                .ok_or_else(|| path_error(path, "no such parameter on this family")),
            Some(_) => Err(path_error(path, "single model takes a bare parameter name")),
        },
        Model::Composite(c) => {
            if path == "lambda" {
                if c.kind() != CompositeKind::ConvexSum || c.components().len() != 2 {
                    return Err(path_error(
                        path,
                        "lambda addresses the weight of a two-component convex sum",
                    ));
                }
                return Ok(c.components()[0].0);
            }
            let (head, rest) = path
                .split_once('.')
                .ok_or_else(|| path_error(path, "composite model needs an indexed path"))?;
            if head == "*" {
                return get_param(&c.components()[0].1, rest);
            }
            let k: usize =
                head.parse().map_err(|_| path_error(path, "component index must be numeric"))?;
            let comp = c
                .components()
                .get(k)
                .ok_or_else(|| path_error(path, "component index out of range"))?;
            get_param(&comp.1, rest)
        }
    }
}

/// Write a parameter by path, revalidating family invariants.
pub fn set_param(model: &Model, path: &str, value: f64) -> Result<Model> {
    match model {
        Model::Single(m) => match path.split_once('.') {
            None => {
                let params = leaf_set(m.params(), path, value)
                    .ok_or_else(|| path_error(path, "no such parameter on this family"))?;
                Ok(Model::Single(CovarianceModel::new(params, m.metric(), m.sphere())?))
            }
            Some(_) => Err(path_error(path, "single model takes a bare parameter name")),
        },
        Model::Composite(c) => {
            if path == "lambda" {
                if c.kind() != CompositeKind::ConvexSum || c.components().len() != 2 {
                    return Err(path_error(
                        path,
                        "lambda addresses the weight of a two-component convex sum",
                    ));
                }
                if !(0.0..=1.0).contains(&value) {
                    return Err(path_error(path, "lambda must lie in [0, 1]"));
                }
                let comps = vec![
                    (value, c.components()[0].1.clone()),
                    (1.0 - value, c.components()[1].1.clone()),
                ];
                return convex_sum(comps);
            }
            let (head, rest) = path
                .split_once('.')
                .ok_or_else(|| path_error(path, "composite model needs an indexed path"))?;
            let mut comps: Vec<(f64, Model)> = c.components().to_vec();
            if head == "*" {
                for comp in comps.iter_mut() {
                    comp.1 = set_param(&comp.1, rest, value)?;
                }
            } else {
                let k: usize = head
                    .parse()
                    .map_err(|_| path_error(path, "component index must be numeric"))?;
                if k >= comps.len() {
                    return Err(path_error(path, "component index out of range"));
                }
                comps[k].1 = set_param(&comps[k].1, rest, value)?;
            }
            match c.kind() {
                CompositeKind::ConvexSum => convex_sum(comps),
                CompositeKind::Product => product(comps.into_iter().map(|(_, m)| m).collect()),
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Bounds and transforms

#[derive(Debug, Clone)]
struct ResolvedParam {
    path: String,
    lo: f64,
    hi: f64,
    /// Geometric parameters interpolate on the log scale.
    geometric: bool,
}

impl ResolvedParam {
    fn natural(&self, u: f64) -> f64 {
        if self.geometric {
            (self.lo.ln() + u * (self.hi / self.lo).ln()).exp()
        } else {
            self.lo + u * (self.hi - self.lo)
        }
    }

    fn unit(&self, x: f64) -> f64 {
        let u = if self.geometric {
            (x / self.lo).ln() / (self.hi / self.lo).ln()
        } else {
            (x - self.lo) / (self.hi - self.lo)
        };
        u.clamp(0.0, 1.0)
    }
}

fn logit(u: f64) -> f64 {
    (u / (1.0 - u)).ln()
}

fn sigmoid(y: f64) -> f64 {
    1.0 / (1.0 + (-y).exp())
}

/// Family that owns the leaf a path points at.
fn owning_model<'a>(model: &'a Model, path: &str) -> Result<(&'a CovarianceModel, String)> {
    match model {
        Model::Single(m) => Ok((m, path.to_string())),
        Model::Composite(c) => {
            if path == "lambda" {
                // caller handles lambda before asking for an owner
                return Err(path_error(path, "lambda has no owning family"));
            }
            let (head, rest) = path
                .split_once('.')
                .ok_or_else(|| path_error(path, "composite model needs an indexed path"))?;
            let k: usize = if head == "*" {
                0
            } else {
                head.parse().map_err(|_| path_error(path, "component index must be numeric"))?
            };
            let comp = c
                .components()
                .get(k)
                .ok_or_else(|| path_error(path, "component index out of range"))?;
            owning_model(&comp.1, rest)
        }
    }
}

fn default_bounds(model: &Model, path: &str) -> Result<(f64, f64, bool)> {
    if path == "lambda" || path.ends_with(".lambda") {
        return Ok((1e-6, 1.0 - 1e-6, false));
    }
    let (owner, leaf) = owning_model(model, path)?;
    let d_max = owner.sphere().max_distance(owner.metric());
    let gc = owner.metric() == Metric::GreatCircle;
    use crate::kernels::Family;
    let b = match (owner.family(), leaf.as_str()) {
        (_, "sigma2") => (1e-8, 1e6, true),
        (_, "alpha") => (1e-3 * d_max, 50.0 * d_max, true),
        (Family::Matern, "nu") if gc => (1e-3, 0.5, false),
        (Family::Matern, "nu") => (1e-3, 25.0, false),
        (_, "beta") => (1e-3, 2.0, false),
        (Family::WendlandC4, "c") if gc => (1e-3, std::f64::consts::PI, true),
        (Family::WendlandC4, "c") => (1e-3, 10.0, true),
        (Family::WendlandC4, "tau") => (6.0, 100.0, true),
        (Family::Multiquadric, "c") => (1e-3, 50.0, true),
        (Family::Multiquadric, "tau") => (1e-6, 1.0 - 1e-6, false),
        (Family::Cosine, "n") => (1e-3, 50.0, true),
        _ => return Err(path_error(path, "no default bounds for this parameter")),
    };
    Ok(b)
}

fn resolve_params(spec: &FitSpec) -> Result<Vec<ResolvedParam>> {
    spec.free
        .iter()
        .map(|fp| {
            let (dlo, dhi, geometric) = default_bounds(&spec.template, &fp.path)?;
            let (lo, hi) = fp.bounds.unwrap_or((dlo, dhi));
            if !(lo > 0.0 && hi > lo) && geometric {
                return Err(path_error(&fp.path, "geometric bounds must satisfy 0 < lo < hi"));
            }
            if hi <= lo {
                return Err(path_error(&fp.path, "bounds must satisfy lo < hi"));
            }
            Ok(ResolvedParam { path: fp.path.clone(), lo, hi, geometric })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Likelihood

struct DataCache {
    dists: DMatrix<f64>,
    z: DVector<f64>,
}

fn build_cache(model: &Model, mean: &MeanModel, data: &[(Location, f64)]) -> Result<DataCache> {
    if data.is_empty() {
        return Err(Error::EmptyLocations);
    }
    let locs: Vec<Location> = data.iter().map(|(l, _)| *l).collect();
    let dists = distance_matrix(&locs, &model.sphere(), model.metric())?;
    for i in 0..locs.len() {
        for j in (i + 1)..locs.len() {
            if dists[(i, j)] == 0.0 {
                return Err(Error::DuplicateLocations(i, j));
            }
        }
    }
    let z = DVector::from_vec(residuals(mean, data)?);
    Ok(DataCache { dists, z })
}

/// Gaussian log-likelihood via Cholesky with the shared jitter ladder.
fn loglik_cached(model: &Model, cache: &DataCache) -> Result<(f64, f64)> {
    let sigma = model.evaluate_matrix_symmetric(&cache.dists)?;
    let factor = cholesky_with_jitter(&sigma, model.variance())?;
    let n = cache.z.len() as f64;
    let u = factor.solve_lower(&cache.z);
    let ll = -0.5 * n * (2.0 * std::f64::consts::PI).ln()
        - factor.half_log_det()
        - 0.5 * u.norm_squared();
    Ok((ll, factor.jitter))
}

/// ell = -(n/2) log 2pi - (1/2) log|Sigma| - (1/2) z' Sigma^-1 z.
pub fn log_likelihood(model: &Model, mean: &MeanModel, data: &[(Location, f64)]) -> Result<f64> {
    let cache = build_cache(model, mean, data)?;
    Ok(loglik_cached(model, &cache)?.0)
}

// ---------------------------------------------------------------------------
// Nelder-Mead

struct NmOutcome {
    y: Vec<f64>,
    f: f64,
    evals: usize,
    converged: bool,
}

fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    y0: &[f64],
    step: f64,
    max_evals: usize,
) -> NmOutcome {
    let n = y0.len();
    let mut evals = 0;
    let mut eval = |y: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(y);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let fy0 = eval(y0, &mut evals);
    simplex.push((y0.to_vec(), fy0));
    for i in 0..n {
        let mut y = y0.to_vec();
        y[i] += step;
        let fy = eval(&y, &mut evals);
        simplex.push((y, fy));
    }
    let mut converged = false;
    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let diameter = simplex[1..]
            .iter()
            .map(|(y, _)| {
                y.iter()
                    .zip(simplex[0].0.iter())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        let spread = simplex[n].1 - simplex[0].1;
        if diameter < DIAMETER_TOL || spread < FSPREAD_TOL * (1.0 + simplex[0].1.abs()) {
            converged = true;
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(y, _)| y[j]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let reflect: Vec<f64> =
            (0..n).map(|j| centroid[j] + (centroid[j] - worst.0[j])).collect();
        let fr = eval(&reflect, &mut evals);
        if fr < simplex[0].1 {
            let expand: Vec<f64> =
                (0..n).map(|j| centroid[j] + 2.0 * (centroid[j] - worst.0[j])).collect();
            let fe = eval(&expand, &mut evals);
            simplex[n] = if fe < fr { (expand, fe) } else { (reflect, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (reflect, fr);
        } else {
            let contract: Vec<f64> = if fr < worst.1 {
                (0..n).map(|j| centroid[j] + 0.5 * (reflect[j] - centroid[j])).collect()
            } else {
                (0..n).map(|j| centroid[j] + 0.5 * (worst.0[j] - centroid[j])).collect()
            };
            let fc = eval(&contract, &mut evals);
            if fc < worst.1.min(fr) {
                simplex[n] = (contract, fc);
            } else {
                // shrink toward the best vertex
                let best = simplex[0].0.clone();
                for v in simplex[1..].iter_mut() {
                    for j in 0..n {
                        v.0[j] = best[j] + 0.5 * (v.0[j] - best[j]);
                    }
                    v.1 = eval(&v.0, &mut evals);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    NmOutcome { y: simplex[0].0.clone(), f: simplex[0].1, evals, converged }
}

// ---------------------------------------------------------------------------
// Multistart driver

fn radical_inverse(base: usize, mut k: usize) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut out = 0.0;
    while k > 0 {
        out += (k % base) as f64 * inv;
        k /= base;
        inv /= base as f64;
    }
    out
}

fn apply_point(template: &Model, params: &[ResolvedParam], y: &[f64]) -> Result<Model> {
    let mut model = template.clone();
    for (p, &yi) in params.iter().zip(y.iter()) {
        model = set_param(&model, &p.path, p.natural(sigmoid(yi)))?;
    }
    Ok(model)
}

struct StartOutcome {
    y: Vec<f64>,
    f: f64,
    evals: usize,
    converged: bool,
    alpha: Option<f64>,
}

/// Multi-start Nelder-Mead maximum likelihood.
///
/// Start 1 is the template's own values; the rest fill the box with a Halton
/// sequence; explicit starts from the spec are appended. Ties within 1e-6
/// log-likelihood resolve to the smallest range estimate.
pub fn mle_fit(spec: &FitSpec, mean: &MeanModel, data: &[(Location, f64)]) -> Result<FittedModel> {
    let params = resolve_params(spec)?;
    let cache = build_cache(&spec.template, mean, data)?;
    if params.is_empty() {
        let (ll, jitter) = loglik_cached(&spec.template, &cache)?;
        return Ok(FittedModel {
            model: spec.template.clone(),
            loglik: ll,
            converged: true,
            evaluations: 1,
            jitter,
            boundary: Vec::new(),
        });
    }

    let mut objective = |y: &[f64]| -> f64 {
        match apply_point(&spec.template, &params, y) {
            Ok(model) => match loglik_cached(&model, &cache) {
                Ok((ll, _)) => -ll,
                Err(_) => f64::INFINITY,
            },
            Err(_) => f64::INFINITY,
        }
    };

    // start points in unit coordinates
    let mut starts: Vec<Vec<f64>> = Vec::new();
    let template_u: Vec<f64> = params
        .iter()
        .map(|p| {
            let x = get_param(&spec.template, &p.path).unwrap_or((p.lo + p.hi) / 2.0);
            p.unit(x).clamp(1e-4, 1.0 - 1e-4)
        })
        .collect();
    starts.push(template_u);
    const BASES: [usize; 6] = [2, 3, 5, 7, 11, 13];
    for k in 1..spec.starts.max(1) {
        let u: Vec<f64> = params
            .iter()
            .enumerate()
            .map(|(i, _)| 0.05 + 0.9 * radical_inverse(BASES[i % BASES.len()], k))
            .collect();
        starts.push(u);
    }
    for ex in &spec.explicit_starts {
        if ex.len() != params.len() {
            return Err(Error::FitFailure(format!(
                "explicit start has {} values for {} free parameters",
                ex.len(),
                params.len()
            )));
        }
        starts.push(
            params
                .iter()
                .zip(ex.iter())
                .map(|(p, &x)| p.unit(x).clamp(1e-4, 1.0 - 1e-4))
                .collect(),
        );
    }

    let alpha_idx = params.iter().position(|p| {
        p.path == "alpha" || p.path.ends_with(".alpha")
    });
    let mut outcomes: Vec<StartOutcome> = Vec::new();
    for u in &starts {
        let y0: Vec<f64> = u.iter().map(|&ui| logit(ui)).collect();
        let out = nelder_mead(&mut objective, &y0, 0.5, spec.max_evals);
        if out.f.is_finite() {
            let alpha = alpha_idx.map(|i| params[i].natural(sigmoid(out.y[i])));
            outcomes.push(StartOutcome {
                y: out.y,
                f: out.f,
                evals: out.evals,
                converged: out.converged,
                alpha,
            });
        } else {
            outcomes.push(StartOutcome {
                y: Vec::new(),
                f: f64::INFINITY,
                evals: out.evals,
                converged: false,
                alpha: None,
            });
        }
    }
    let total_evals: usize = outcomes.iter().map(|o| o.evals).sum();
    let best = select_best(&outcomes)
        .ok_or_else(|| Error::FitFailure("no start produced a finite likelihood".to_string()))?;

    // snap near-bound coordinates and flag them
    let mut boundary = Vec::new();
    let mut values: Vec<f64> = Vec::with_capacity(params.len());
    for (p, &yi) in params.iter().zip(best.y.iter()) {
        let u = sigmoid(yi);
        if u <= SNAP_U {
            boundary.push(p.path.clone());
            values.push(p.lo);
        } else if u >= 1.0 - SNAP_U {
            boundary.push(p.path.clone());
            values.push(p.hi);
        } else {
            values.push(p.natural(u));
        }
    }
    let mut model = spec.template.clone();
    for (p, &x) in params.iter().zip(values.iter()) {
        model = set_param(&model, &p.path, x)?;
    }
    let (mut loglik, mut jitter) = match loglik_cached(&model, &cache) {
        Ok(v) => v,
        Err(_) => (f64::NEG_INFINITY, f64::NAN),
    };
    if !loglik.is_finite() && !boundary.is_empty() {
        // snapping broke factorizability; keep the unsnapped optimum
        model = apply_point(&spec.template, &params, &best.y)?;
        let v = loglik_cached(&model, &cache)?;
        loglik = v.0;
        jitter = v.1;
        boundary.clear();
    }
    if loglik < -best.f - 1e-9 {
        // snapped value is materially worse; report the unsnapped optimum
        let unsnapped = apply_point(&spec.template, &params, &best.y)?;
        let v = loglik_cached(&unsnapped, &cache)?;
        if v.0 > loglik {
            model = unsnapped;
            loglik = v.0;
            jitter = v.1;
        }
    }
    Ok(FittedModel {
        model,
        loglik,
        converged: best.converged,
        evaluations: total_evals,
        jitter,
        boundary,
    })
}

fn select_best(outcomes: &[StartOutcome]) -> Option<&StartOutcome> {
    let best_f = outcomes.iter().map(|o| o.f).fold(f64::INFINITY, f64::min);
    if !best_f.is_finite() {
        return None;
    }
    outcomes
        .iter()
        .filter(|o| o.f <= best_f + TIE_TOL)
        .min_by(|a, b| {
            let ka = a.alpha.unwrap_or(f64::INFINITY);
            let kb = b.alpha.unwrap_or(f64::INFINITY);
            ka.partial_cmp(&kb).unwrap_or(std::cmp::Ordering::Equal)
        })
}
