//! JSON configuration schema for the CLI: model specifications, per-command
//! config files, field-path error reporting, and the content hash stamped
//! into every output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experiments::{Design, GeoModelKind, S2Generator};
use crate::field::{MeanKind, MeanModel};
use crate::geometry::{Location, Metric, Sphere};
use crate::grid::GridTransform;
use crate::kernels::{convex_sum, product, CompositeKind, CovarianceModel, FamilyParams, Model};

/// Hex SHA-256 of the raw config bytes; stamped into outputs so any table
/// can be traced back to the exact file that produced it.
pub fn config_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Parses a config, turning schema violations into errors that carry the
/// offending field path.
pub fn from_json_str<T: DeserializeOwned>(text: &str) -> Result<T> {
    let mut de = serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        Error::Config { path, reason: e.inner().to_string() }
    })
}

/// Reads and parses a config file, returning the parsed value together
/// with its content hash.
pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<(T, String)> {
    let bytes = std::fs::read(path)?;
    let hash = config_hash(&bytes);
    let text = String::from_utf8(bytes)
        .map_err(|e| Error::Config { path: path.display().to_string(), reason: e.to_string() })?;
    Ok((from_json_str(&text)?, hash))
}

// ---------------------------------------------------------------------------
// Model specification

fn family_name(p: &FamilyParams) -> &'static str {
    match p {
        FamilyParams::Exponential { .. } => "exponential",
        FamilyParams::Matern { .. } => "matern",
        FamilyParams::PoweredExponential { .. } => "powered_exponential",
        FamilyParams::Multiquadric { .. } => "multiquadric",
        FamilyParams::SinePower { .. } => "sine_power",
        FamilyParams::WendlandC4 { .. } => "wendland_c4",
        FamilyParams::Wave { .. } => "wave",
        FamilyParams::Cosine { .. } => "cosine",
    }
}

fn param_map(p: &FamilyParams) -> BTreeMap<&'static str, f64> {
    let mut m = BTreeMap::new();
    match *p {
        FamilyParams::Exponential { sigma2, alpha } | FamilyParams::Wave { sigma2, alpha } => {
            m.insert("sigma2", sigma2);
            m.insert("alpha", alpha);
        }
        FamilyParams::Matern { sigma2, alpha, nu } => {
            m.insert("sigma2", sigma2);
            m.insert("alpha", alpha);
            m.insert("nu", nu);
        }
        FamilyParams::PoweredExponential { sigma2, alpha, beta } => {
            m.insert("sigma2", sigma2);
            m.insert("alpha", alpha);
            m.insert("beta", beta);
        }
        FamilyParams::Multiquadric { sigma2, c, tau }
        | FamilyParams::WendlandC4 { sigma2, c, tau } => {
            m.insert("sigma2", sigma2);
            m.insert("c", c);
            m.insert("tau", tau);
        }
        FamilyParams::SinePower { sigma2, beta } => {
            m.insert("sigma2", sigma2);
            m.insert("beta", beta);
        }
        FamilyParams::Cosine { sigma2, n } => {
            m.insert("sigma2", sigma2);
            m.insert("n", n);
        }
    }
    m
}

fn metric_name(m: Metric) -> &'static str {
    match m {
        Metric::GreatCircle => "great_circle",
        Metric::Chordal => "chordal",
    }
}

/// Serializes a model to the config representation: single models as
/// {family, metric, params, sphere}, composites as {composite, components}.
pub fn model_to_value(model: &Model) -> Value {
    match model {
        Model::Single(m) => {
            let params: serde_json::Map<String, Value> = param_map(m.params())
                .into_iter()
                .map(|(k, v)| (k.to_string(), json!(v)))
                .collect();
            json!({
                "family": family_name(m.params()),
                "metric": metric_name(m.metric()),
                "params": params,
                "sphere": {"d": m.sphere().dimension(), "r": m.sphere().radius()},
            })
        }
        Model::Composite(c) => {
            let kind = match c.kind() {
                CompositeKind::ConvexSum => "convex_sum",
                CompositeKind::Product => "product",
            };
            let components: Vec<Value> = c
                .components()
                .iter()
                .map(|(w, m)| json!({"weight": w, "model": model_to_value(m)}))
                .collect();
            json!({"composite": kind, "components": components})
        }
    }
}

fn cfg_err(path: &str, reason: impl Into<String>) -> Error {
    Error::Config { path: path.to_string(), reason: reason.into() }
}

fn expect_object<'v>(v: &'v Value, path: &str) -> Result<&'v serde_json::Map<String, Value>> {
    v.as_object().ok_or_else(|| cfg_err(path, "expected a JSON object"))
}

fn expect_f64(v: &Value, path: &str) -> Result<f64> {
    let x = v.as_f64().ok_or_else(|| cfg_err(path, "expected a number"))?;
    if !x.is_finite() {
        return Err(cfg_err(path, "must be finite"));
    }
    Ok(x)
}

fn get_field<'v>(
    obj: &'v serde_json::Map<String, Value>,
    key: &str,
    path: &str,
) -> Result<&'v Value> {
    obj.get(key).ok_or_else(|| cfg_err(&format!("{path}.{key}"), "missing required field"))
}

fn build_params(
    family: &str,
    obj: &serde_json::Map<String, Value>,
    path: &str,
) -> Result<FamilyParams> {
    let required: &[&str] = match family {
        "exponential" | "wave" => &["sigma2", "alpha"],
        "matern" => &["sigma2", "alpha", "nu"],
        "powered_exponential" => &["sigma2", "alpha", "beta"],
        "multiquadric" | "wendland_c4" => &["sigma2", "c", "tau"],
        "sine_power" => &["sigma2", "beta"],
        "cosine" => &["sigma2", "n"],
        other => {
            return Err(cfg_err(
                &format!("{path}.family"),
                format!(
                    "unknown family {other:?}; expected one of exponential, matern, \
                     powered_exponential, multiquadric, sine_power, wendland_c4, wave, cosine"
                ),
            ))
        }
    };
    let params = expect_object(get_field(obj, "params", path)?, &format!("{path}.params"))?;
    for key in params.keys() {
        if !required.contains(&key.as_str()) {
            return Err(cfg_err(
                &format!("{path}.params.{key}"),
                format!("unknown parameter for family {family:?}"),
            ));
        }
    }
    let get = |key: &str| -> Result<f64> {
        let p = format!("{path}.params.{key}");
        expect_f64(
            params.get(key).ok_or_else(|| cfg_err(&p, "missing required field"))?,
            &p,
        )
    };
    Ok(match family {
        "exponential" => FamilyParams::Exponential { sigma2: get("sigma2")?, alpha: get("alpha")? },
        "wave" => FamilyParams::Wave { sigma2: get("sigma2")?, alpha: get("alpha")? },
        "matern" => FamilyParams::Matern {
            sigma2: get("sigma2")?,
            alpha: get("alpha")?,
            nu: get("nu")?,
        },
        "powered_exponential" => FamilyParams::PoweredExponential {
            sigma2: get("sigma2")?,
            alpha: get("alpha")?,
            beta: get("beta")?,
        },
        "multiquadric" => FamilyParams::Multiquadric {
            sigma2: get("sigma2")?,
            c: get("c")?,
            tau: get("tau")?,
        },
        "wendland_c4" => FamilyParams::WendlandC4 {
            sigma2: get("sigma2")?,
            c: get("c")?,
            tau: get("tau")?,
        },
        "sine_power" => FamilyParams::SinePower { sigma2: get("sigma2")?, beta: get("beta")? },
        "cosine" => FamilyParams::Cosine { sigma2: get("sigma2")?, n: get("n")? },
        _ => unreachable!(),
    })
}

/// Builds a model from its config representation, reporting violations with
/// the JSON path rooted at `root` (usually "model").
pub fn model_from_value(v: &Value, root: &str) -> Result<Model> {
    let obj = expect_object(v, root)?;
    if let Some(kind) = obj.get("composite") {
        let kind = kind
            .as_str()
            .ok_or_else(|| cfg_err(&format!("{root}.composite"), "expected a string"))?;
        let comps_path = format!("{root}.components");
        let comps = get_field(obj, "components", root)?
            .as_array()
            .ok_or_else(|| cfg_err(&comps_path, "expected an array"))?;
        if comps.is_empty() {
            return Err(cfg_err(&comps_path, "must not be empty"));
        }
        let mut parts = Vec::with_capacity(comps.len());
        for (i, comp) in comps.iter().enumerate() {
            let cpath = format!("{comps_path}[{i}]");
            let cobj = expect_object(comp, &cpath)?;
            let weight = match cobj.get("weight") {
                Some(w) => expect_f64(w, &format!("{cpath}.weight"))?,
                None => 1.0,
            };
            let model = model_from_value(get_field(cobj, "model", &cpath)?, &format!("{cpath}.model"))?;
            parts.push((weight, model));
        }
        let built = match kind {
            "convex_sum" => convex_sum(parts),
            "product" => product(parts.into_iter().map(|(_, m)| m).collect()),
            other => {
                return Err(cfg_err(
                    &format!("{root}.composite"),
                    format!("unknown composite kind {other:?}; expected convex_sum or product"),
                ))
            }
        };
        built.map_err(|e| cfg_err(root, e.to_string()))
    } else {
        let family = get_field(obj, "family", root)?
            .as_str()
            .ok_or_else(|| cfg_err(&format!("{root}.family"), "expected a string"))?;
        let metric = match get_field(obj, "metric", root)?
            .as_str()
            .ok_or_else(|| cfg_err(&format!("{root}.metric"), "expected a string"))?
        {
            "great_circle" => Metric::GreatCircle,
            "chordal" => Metric::Chordal,
            other => {
                return Err(cfg_err(
                    &format!("{root}.metric"),
                    format!("unknown metric {other:?}; expected great_circle or chordal"),
                ))
            }
        };
        let sphere_path = format!("{root}.sphere");
        let sobj = expect_object(get_field(obj, "sphere", root)?, &sphere_path)?;
        let d = get_field(sobj, "d", &sphere_path)?
            .as_u64()
            .ok_or_else(|| cfg_err(&format!("{sphere_path}.d"), "expected 1 or 2"))?;
        let r = expect_f64(get_field(sobj, "r", &sphere_path)?, &format!("{sphere_path}.r"))?;
        let sphere = Sphere::new(d as u8, r)
            .map_err(|e| cfg_err(&sphere_path, e.to_string()))?;
        for key in obj.keys() {
            if !["family", "metric", "params", "sphere"].contains(&key.as_str()) {
                return Err(cfg_err(&format!("{root}.{key}"), "unknown field"));
            }
        }
        let params = build_params(family, obj, root)?;
        CovarianceModel::new(params, metric, sphere)
            .map(Model::Single)
            .map_err(|e| cfg_err(&format!("{root}.params"), e.to_string()))
    }
}

// ---------------------------------------------------------------------------
// Per-command configs

fn default_mean() -> MeanModel {
    MeanModel::zero()
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidateConfig {
    pub model: Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridAxes {
    pub latitudes: Vec<f64>,
    pub longitudes: Vec<f64>,
    #[serde(default)]
    pub store_squared: bool,
}

/// `simulate` draws one realization at explicit locations or on a lat-lon
/// grid (exactly one of the two must be given).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub model: Value,
    #[serde(default = "default_mean")]
    pub mean: MeanModel,
    pub seed: u64,
    #[serde(default)]
    pub locations: Option<Vec<Location>>,
    #[serde(default)]
    pub grid: Option<GridAxes>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    /// Template model; fixed parameters keep their template values.
    pub model: Value,
    pub free: Vec<String>,
    #[serde(default = "default_mean")]
    pub mean: MeanModel,
    /// Points CSV: header `lat,lon,value` or `angle,value`.
    pub data: PathBuf,
    #[serde(default)]
    pub starts: Option<usize>,
    #[serde(default)]
    pub max_evals: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictConfig {
    pub model: Value,
    #[serde(default = "default_mean")]
    pub mean: MeanModel,
    pub data: PathBuf,
    #[serde(default)]
    pub targets: Option<Vec<Location>>,
    /// Points CSV whose values, when present, score the predictions.
    #[serde(default)]
    pub targets_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariogramConfig {
    pub data: PathBuf,
    pub sphere: Sphere,
    #[serde(default = "default_bins")]
    pub n_bins: usize,
    #[serde(default)]
    pub max_distance: Option<f64>,
}

fn default_bins() -> usize {
    25
}

fn default_s1_ranges() -> Vec<f64> {
    use std::f64::consts::PI;
    vec![2.0 * PI, 1.5 * PI, PI, PI / 1.5, PI / 2.0, PI / 4.0]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct S1Config {
    pub design: Design,
    #[serde(default = "default_s1_ranges")]
    pub ranges: Vec<f64>,
    #[serde(default = "default_true")]
    pub fit_parameters: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct S2Config {
    pub design: Design,
    #[serde(default)]
    pub generator: S2Generator,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeoConfig {
    pub design: Design,
    /// Grid CSV: first row longitudes, first column latitudes.
    pub grid: PathBuf,
    #[serde(default)]
    pub transform: GridTransform,
    pub mean: MeanKind,
    pub models: Vec<GeoModelKind>,
}
