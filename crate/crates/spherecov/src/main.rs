//! Command-line driver: validity checks, simulation, fitting, prediction,
//! variograms, and the replication experiments, all configured by JSON
//! files and written to plot-ready CSV plus summary JSON.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use spherecov::config::{
    self, FitConfig, GeoConfig, PredictConfig, S1Config, S2Config, SimulateConfig,
    ValidateConfig, VariogramConfig,
};
use spherecov::error::{Error, Result};
use spherecov::experiments::{
    run_geo, run_s1, run_s2, PredictionRecord, S1RangeOutput, ScoreTable,
};
use spherecov::field::simulate;
use spherecov::fit::{mle_fit, FitSpec, FreeParam};
use spherecov::geometry::Location;
use spherecov::grid::{load_points, save_points, GridDataset};
use spherecov::kernels::validity::{check_validity, DEFAULT_N_MAX, DEFAULT_TOLERANCE};
use spherecov::predict::{crps_mean, empirical_semivariogram, krige, mae, rmse};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Parser)]
#[command(
    name = "spherecov",
    version,
    about = "Covariance models on circles and spheres: validity, simulation, fitting, kriging"
)]
struct Cli {
    /// JSON config file (required by every subcommand)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory, created if absent
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Master seed override
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Replicate count override for experiments
    #[arg(long, global = true)]
    replicates: Option<usize>,

    /// Upper cap on worker threads (this build runs replicates sequentially,
    /// so any cap >= 1 behaves identically)
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    /// Format of single-command result files; experiments always write
    /// CSV records plus a JSON summary
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check positive definiteness of a model
    Validate,
    /// Draw one Gaussian field realization at locations or on a grid
    Simulate,
    /// Maximum-likelihood fit of a model template to point data
    Fit,
    /// Krige point data onto target locations
    Predict,
    /// Empirical semivariogram of point data
    Variogram,
    /// Replication studies
    Experiment {
        #[command(subcommand)]
        which: Which,
    },
}

#[derive(Subcommand)]
enum Which {
    /// Circle arc design: great-circle vs chordal exponential
    S1,
    /// Sphere threshold design: MC, MG, C, H
    S2,
    /// Gridded-data design: configurable regions and model set
    Geo,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        let report = json!({"error": {"kind": error_kind(&e), "message": e.to_string()}});
        eprintln!("{report}");
        std::process::exit(1);
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidSphere(_) => "invalid_sphere",
        Error::InvalidLocation(_) => "invalid_location",
        Error::LocationDimension { .. } => "location_dimension",
        Error::EmptyLocations => "empty_locations",
        Error::InvalidParameter { .. } => "invalid_parameter",
        Error::DistanceOutOfRange { .. } => "distance_out_of_range",
        Error::MismatchedComposite => "mismatched_composite",
        Error::BadWeights { .. } => "bad_weights",
        Error::QuadratureNonConvergence { .. } => "quadrature_non_convergence",
        Error::Factorization { .. } => "factorization",
        Error::FitFailure(_) => "fit_failure",
        Error::DuplicateLocations(_, _) => "duplicate_locations",
        Error::Design(_) => "design",
        Error::EligibleShortfall { .. } => "eligible_shortfall",
        Error::Grid(_) => "grid",
        Error::Config { .. } => "config",
        Error::RankDeficient(_) => "rank_deficient",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
        Error::Csv(_) => "csv",
    }
}

fn run(cli: Cli) -> Result<()> {
    if cli.jobs == 0 {
        return Err(Error::Config {
            path: "--jobs".to_string(),
            reason: "must be at least 1".to_string(),
        });
    }
    let config_path = cli.config.as_deref().ok_or_else(|| Error::Config {
        path: "--config".to_string(),
        reason: "a JSON config file is required".to_string(),
    })?;
    std::fs::create_dir_all(&cli.out)?;
    match &cli.command {
        Command::Validate => cmd_validate(&cli, config_path),
        Command::Simulate => cmd_simulate(&cli, config_path),
        Command::Fit => cmd_fit(&cli, config_path),
        Command::Predict => cmd_predict(&cli, config_path),
        Command::Variogram => cmd_variogram(&cli, config_path),
        Command::Experiment { which: Which::S1 } => cmd_s1(&cli, config_path),
        Command::Experiment { which: Which::S2 } => cmd_s2(&cli, config_path),
        Command::Experiment { which: Which::Geo } => cmd_geo(&cli, config_path),
    }
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Single-model commands

fn cmd_validate(cli: &Cli, config_path: &Path) -> Result<()> {
    let (cfg, hash) = config::load_config::<ValidateConfig>(config_path)?;
    let model = config::model_from_value(&cfg.model, "model")?;
    let start = std::time::Instant::now();
    let verdict = check_validity(
        &model,
        model.sphere().dimension(),
        DEFAULT_N_MAX,
        DEFAULT_TOLERANCE,
    )?;
    let elapsed_ms = start.elapsed().as_millis() as u64;
    let out = cli.out.join("validate.json");
    write_json(
        &out,
        &json!({
            "config_hash": hash,
            "model": cfg.model,
            "verdict": verdict,
            "elapsed_ms": elapsed_ms,
        }),
    )?;
    match verdict.first_violation {
        Some((n, b)) if !verdict.valid => {
            println!("verdict: invalid (first violating coefficient b_{n} = {b:.6e})")
        }
        _ if !verdict.valid => println!("verdict: invalid (catalog)"),
        _ => println!("verdict: valid (up to order {})", verdict.n_max),
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_simulate(cli: &Cli, config_path: &Path) -> Result<()> {
    let (cfg, hash) = config::load_config::<SimulateConfig>(config_path)?;
    let model = config::model_from_value(&cfg.model, "model")?;
    let seed = cli.seed.unwrap_or(cfg.seed);
    match (&cfg.locations, &cfg.grid) {
        (Some(locs), None) => {
            let realization = simulate(&model, locs, &cfg.mean, seed)?;
            let pairs: Vec<(Location, f64)> = realization
                .locations
                .iter()
                .copied()
                .zip(realization.values.iter().copied())
                .collect();
            let meta = json!({
                "config_hash": hash,
                "seed": seed,
                "jitter": realization.jitter,
                "n": pairs.len(),
            });
            match cli.format {
                Format::Csv => {
                    let data_path = cli.out.join("realization.csv");
                    save_points(&data_path, &pairs)?;
                    write_json(&cli.out.join("simulate.json"), &meta)?;
                    println!("wrote {}", data_path.display());
                }
                Format::Json => {
                    let mut meta = meta;
                    meta["data"] = serde_json::to_value(&pairs)?;
                    let data_path = cli.out.join("realization.json");
                    write_json(&data_path, &meta)?;
                    println!("wrote {}", data_path.display());
                }
            }
        }
        (None, Some(grid)) => {
            let ds = spherecov::experiments::simulate_grid_dataset(
                &model,
                &cfg.mean,
                &grid.latitudes,
                &grid.longitudes,
                seed,
                grid.store_squared,
            )?;
            let data_path = cli.out.join("simulated_grid.csv");
            ds.save(&data_path)?;
            write_json(
                &cli.out.join("simulate.json"),
                &json!({
                    "config_hash": hash,
                    "seed": seed,
                    "n_cells": ds.n_cells(),
                    "store_squared": grid.store_squared,
                }),
            )?;
            println!("wrote {}", data_path.display());
        }
        _ => {
            return Err(Error::Config {
                path: "locations".to_string(),
                reason: "exactly one of `locations` and `grid` must be given".to_string(),
            })
        }
    }
    Ok(())
}

fn cmd_fit(cli: &Cli, config_path: &Path) -> Result<()> {
    let (cfg, hash) = config::load_config::<FitConfig>(config_path)?;
    let template = config::model_from_value(&cfg.model, "model")?;
    let data = load_points(&cfg.data)?;
    let mut spec = FitSpec::new(template, &[]);
    spec.free = cfg.free.iter().map(|p| FreeParam::new(p)).collect();
    if let Some(s) = cfg.starts {
        spec.starts = s;
    }
    if let Some(m) = cfg.max_evals {
        spec.max_evals = m;
    }
    let fitted = mle_fit(&spec, &cfg.mean, &data)?;
    let estimates: serde_json::Map<String, Value> = cfg
        .free
        .iter()
        .map(|p| {
            let v = spherecov::fit::get_param(&fitted.model, p).unwrap_or(f64::NAN);
            (p.clone(), json!(v))
        })
        .collect();
    let out = cli.out.join("fit.json");
    write_json(
        &out,
        &json!({
            "config_hash": hash,
            "model": config::model_to_value(&fitted.model),
            "estimates": estimates,
            "loglik": fitted.loglik,
            "converged": fitted.converged,
            "evaluations": fitted.evaluations,
            "jitter": fitted.jitter,
            "boundary": fitted.boundary,
        }),
    )?;
    if cli.format == Format::Csv {
        let mut w = csv::Writer::from_path(cli.out.join("fit_estimates.csv"))?;
        w.write_record(["param", "value"])?;
        for (k, v) in &estimates {
            w.write_record(&[k.clone(), format!("{}", v.as_f64().unwrap_or(f64::NAN))])?;
        }
        w.flush()?;
    }
    println!(
        "loglik = {:.6}, converged = {}, evaluations = {}",
        fitted.loglik, fitted.converged, fitted.evaluations
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn location_columns(loc: &Location) -> Vec<String> {
    match loc {
        Location::LatLon { lat, lon } => vec![format!("{lat}"), format!("{lon}")],
        Location::Angle(a) => vec![format!("{a}")],
    }
}

fn cmd_predict(cli: &Cli, config_path: &Path) -> Result<()> {
    let (cfg, hash) = config::load_config::<PredictConfig>(config_path)?;
    let model = config::model_from_value(&cfg.model, "model")?;
    let data = load_points(&cfg.data)?;
    let (targets, observed): (Vec<Location>, Option<Vec<f64>>) =
        match (&cfg.targets, &cfg.targets_path) {
            (Some(t), None) => (t.clone(), None),
            (None, Some(p)) => {
                let pts = load_points(p)?;
                let (locs, vals): (Vec<_>, Vec<_>) = pts.into_iter().unzip();
                (locs, Some(vals))
            }
            _ => {
                return Err(Error::Config {
                    path: "targets".to_string(),
                    reason: "exactly one of `targets` and `targets_path` must be given"
                        .to_string(),
                })
            }
        };
    let mut result = krige(&model, &cfg.mean, &data, &targets)?;
    if let Some(vals) = &observed {
        for (p, v) in result.predictions.iter_mut().zip(vals.iter()) {
            p.observed = Some(*v);
        }
    }
    let scores = if observed.is_some() {
        Some(json!({
            "rmse": rmse(&result.predictions)?,
            "mae": mae(&result.predictions)?,
            "crps": crps_mean(&result.predictions)?,
        }))
    } else {
        None
    };
    let meta = json!({
        "config_hash": hash,
        "jitter": result.jitter,
        "clamped": result.clamped,
        "n_targets": result.predictions.len(),
        "scores": scores,
    });
    match cli.format {
        Format::Csv => {
            let data_path = cli.out.join("predictions.csv");
            let mut w = csv::Writer::from_path(&data_path)?;
            let circle = matches!(targets.first(), Some(Location::Angle(_)));
            let mut header: Vec<&str> =
                if circle { vec!["angle"] } else { vec!["lat", "lon"] };
            header.extend(["mean", "sd", "nearest_distance", "observed"]);
            w.write_record(&header)?;
            for p in &result.predictions {
                let mut row = location_columns(&p.location);
                row.push(format!("{}", p.mean));
                row.push(format!("{}", p.sd));
                row.push(format!("{}", p.nearest_sample_distance));
                row.push(p.observed.map_or(String::new(), |v| format!("{v}")));
                w.write_record(&row)?;
            }
            w.flush()?;
            write_json(&cli.out.join("predict.json"), &meta)?;
            println!("wrote {}", data_path.display());
        }
        Format::Json => {
            let mut meta = meta;
            meta["predictions"] = json!(result
                .predictions
                .iter()
                .map(|p| json!({
                    "location": p.location,
                    "mean": p.mean,
                    "sd": p.sd,
                    "nearest_distance": p.nearest_sample_distance,
                    "observed": p.observed,
                }))
                .collect::<Vec<_>>());
            let data_path = cli.out.join("predictions.json");
            write_json(&data_path, &meta)?;
            println!("wrote {}", data_path.display());
        }
    }
    if let Some(s) = scores {
        println!("scores: {s}");
    }
    Ok(())
}

fn cmd_variogram(cli: &Cli, config_path: &Path) -> Result<()> {
    let (cfg, hash) = config::load_config::<VariogramConfig>(config_path)?;
    let data = load_points(&cfg.data)?;
    let est = empirical_semivariogram(&data, &cfg.sphere, cfg.n_bins, cfg.max_distance)?;
    let meta = json!({
        "config_hash": hash,
        "sample_variance": est.sample_variance,
        "n_bins": est.bin_centers.len(),
    });
    match cli.format {
        Format::Csv => {
            let data_path = cli.out.join("variogram.csv");
            let mut w = csv::Writer::from_path(&data_path)?;
            w.write_record(["bin_center", "semivariance", "count"])?;
            for i in 0..est.bin_centers.len() {
                w.write_record(&[
                    format!("{}", est.bin_centers[i]),
                    format!("{}", est.semivariances[i]),
                    format!("{}", est.counts[i]),
                ])?;
            }
            w.flush()?;
            write_json(&cli.out.join("variogram.json"), &meta)?;
            println!("wrote {}", data_path.display());
        }
        Format::Json => {
            let mut meta = meta;
            meta["bin_centers"] = json!(est.bin_centers);
            meta["semivariances"] = json!(est.semivariances);
            meta["counts"] = json!(est.counts);
            let data_path = cli.out.join("variogram.json");
            write_json(&data_path, &meta)?;
            println!("wrote {}", data_path.display());
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Experiments

fn apply_overrides(cli: &Cli, design: &mut spherecov::experiments::Design) {
    if let Some(seed) = cli.seed {
        design.master_seed = seed;
    }
    if let Some(reps) = cli.replicates {
        design.replicates = reps;
    }
}

/// Long-format scores CSV: one row per (model, replicate).
fn write_scores_csv(path: &Path, tables: &[(Option<f64>, &ScoreTable)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let with_alpha = tables.iter().any(|(a, _)| a.is_some());
    let mut header = Vec::new();
    if with_alpha {
        header.push("alpha");
    }
    header.extend(["model", "replicate", "loglik", "rmse", "mae", "crps", "jitter", "boundary"]);
    w.write_record(&header)?;
    for (alpha, table) in tables {
        for m in &table.models {
            for r in &m.records {
                let mut row = Vec::new();
                if let Some(a) = alpha {
                    row.push(format!("{a}"));
                } else if with_alpha {
                    row.push(String::new());
                }
                row.extend([
                    m.name.clone(),
                    format!("{}", r.replicate),
                    format!("{}", r.loglik),
                    format!("{}", r.rmse),
                    format!("{}", r.mae),
                    format!("{}", r.crps),
                    format!("{}", r.jitter),
                    r.boundary.join(";"),
                ]);
                w.write_record(&row)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Long-format estimates CSV: one row per (model, replicate, parameter).
fn write_estimates_csv(path: &Path, tables: &[(Option<f64>, &ScoreTable)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let with_alpha = tables.iter().any(|(a, _)| a.is_some());
    let mut header = Vec::new();
    if with_alpha {
        header.push("alpha");
    }
    header.extend(["model", "replicate", "param", "value"]);
    w.write_record(&header)?;
    for (alpha, table) in tables {
        for m in &table.models {
            for r in &m.records {
                for (param, value) in &r.estimates {
                    let mut row = Vec::new();
                    if let Some(a) = alpha {
                        row.push(format!("{a}"));
                    } else if with_alpha {
                        row.push(String::new());
                    }
                    row.extend([
                        m.name.clone(),
                        format!("{}", r.replicate),
                        param.clone(),
                        format!("{value}"),
                    ]);
                    w.write_record(&row)?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Boxplot-ready per-prediction CSV.
fn write_predictions_csv(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "model",
        "replicate",
        "prediction_index",
        "nearest_distance",
        "abs_error",
        "crps",
    ])?;
    for r in records {
        w.write_record(&[
            r.model.clone(),
            format!("{}", r.replicate),
            format!("{}", r.prediction_index),
            format!("{}", r.nearest_distance),
            format!("{}", r.abs_error),
            format!("{}", r.crps),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_s1_angles_csv(path: &Path, outputs: &[S1RangeOutput]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "alpha",
        "model",
        "replicate",
        "angle_index",
        "angle_rad",
        "nearest_distance",
        "abs_error",
        "crps",
    ])?;
    for out in outputs {
        for r in &out.angle_records {
            w.write_record(&[
                format!("{}", out.alpha),
                r.model.clone(),
                format!("{}", r.replicate),
                format!("{}", r.angle_index),
                format!("{}", r.angle_rad),
                format!("{}", r.nearest_distance),
                format!("{}", r.abs_error),
                format!("{}", r.crps),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn print_table(table: &ScoreTable) {
    println!("{}", table.design);
    for m in &table.models {
        println!(
            "  {:<8} reps={:<4} rmse={:.4} mae={:.4} crps={:.4} loglik={:.2}",
            m.name, m.replicates_used, m.rmse.mean, m.mae.mean, m.crps.mean, m.loglik.mean
        );
    }
}

fn cmd_s1(cli: &Cli, config_path: &Path) -> Result<()> {
    let (mut cfg, hash) = config::load_config::<S1Config>(config_path)?;
    apply_overrides(cli, &mut cfg.design);
    let outputs = run_s1(&cfg.design, &cfg.ranges, cfg.fit_parameters)?;
    let tables: Vec<(Option<f64>, &ScoreTable)> =
        outputs.iter().map(|o| (Some(o.alpha), &o.table)).collect();
    write_scores_csv(&cli.out.join("s1_scores.csv"), &tables)?;
    write_estimates_csv(&cli.out.join("s1_estimates.csv"), &tables)?;
    write_s1_angles_csv(&cli.out.join("s1_angles.csv"), &outputs)?;
    write_json(
        &cli.out.join("s1_summary.json"),
        &json!({
            "config_hash": hash,
            "master_seed": cfg.design.master_seed,
            "results": outputs,
        }),
    )?;
    for out in &outputs {
        print_table(&out.table);
    }
    println!("wrote {}", cli.out.join("s1_summary.json").display());
    Ok(())
}

fn cmd_s2(cli: &Cli, config_path: &Path) -> Result<()> {
    let (mut cfg, hash) = config::load_config::<S2Config>(config_path)?;
    apply_overrides(cli, &mut cfg.design);
    let output = run_s2(&cfg.design, &cfg.generator)?;
    let tables = [(None, &output.table)];
    write_scores_csv(&cli.out.join("s2_scores.csv"), &tables)?;
    write_estimates_csv(&cli.out.join("s2_estimates.csv"), &tables)?;
    write_predictions_csv(&cli.out.join("s2_predictions.csv"), &output.records)?;
    write_json(
        &cli.out.join("s2_summary.json"),
        &json!({
            "config_hash": hash,
            "master_seed": cfg.design.master_seed,
            "table": output.table,
        }),
    )?;
    print_table(&output.table);
    println!("wrote {}", cli.out.join("s2_summary.json").display());
    Ok(())
}

fn cmd_geo(cli: &Cli, config_path: &Path) -> Result<()> {
    let (mut cfg, hash) = config::load_config::<GeoConfig>(config_path)?;
    apply_overrides(cli, &mut cfg.design);
    let dataset = GridDataset::load(&cfg.grid, cfg.transform)?;
    let output = run_geo(&dataset, &cfg.design, cfg.mean, &cfg.models)?;
    let tables = [(None, &output.table)];
    write_scores_csv(&cli.out.join("geo_scores.csv"), &tables)?;
    write_estimates_csv(&cli.out.join("geo_estimates.csv"), &tables)?;
    write_predictions_csv(&cli.out.join("geo_predictions.csv"), &output.records)?;
    write_json(
        &cli.out.join("geo_summary.json"),
        &json!({
            "config_hash": hash,
            "master_seed": cfg.design.master_seed,
            "mean": cfg.mean,
            "table": output.table,
        }),
    )?;
    print_table(&output.table);
    println!("wrote {}", cli.out.join("geo_summary.json").display());
    Ok(())
}
