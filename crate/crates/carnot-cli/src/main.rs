//! Command-line front end: group validation, constant computation, and the
//! area/coarea verification harnesses.
//!
//! Exit codes: 0 success/agreement, 1 syntax error, 2 algebra violation,
//! 3 estimator failure, 4 disagreement, 5 hypothesis violation, 64 usage.

use carnot::cache::{cache_key, ConstantCache};
use carnot::measures::{
    self, area_integrate, coarea_check, density_constant, sh_ratio, ConstantRecord,
};
use carnot::metric::{box_norm, box_norm_auto, koranyi_norm, spherical_normalization, HomDistance};
use carnot::qmc::{Budget, MeasureEstimate};
use carnot::scenarios;
use carnot::spec::{parse_group_spec, resolve_group, GradedAlgebra, GroupSpecSource, ParseError};
use carnot::subgroup::HomSubgroup;
use carnot::{heisenberg, validate_algebra};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

const EXIT_SYNTAX: u8 = 1;
const EXIT_ALGEBRA: u8 = 2;
const EXIT_ESTIMATOR: u8 = 3;
const EXIT_DISAGREE: u8 = 4;
const EXIT_HYPOTHESIS: u8 = 5;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "carnot", version, about = "Numerical area/coarea toolkit for Carnot groups")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunConfig {
    /// Builtin tag (heis:1, abelian:2, engel) or path to a group spec file.
    #[arg(long, default_value = "heis:1")]
    group: String,
    /// Distance: koranyi | euclidean | box | box:eps1,eps2,...
    #[arg(long, default_value = "koranyi")]
    dist: String,
    /// Seed for every random stream (fixed default, never time-derived).
    #[arg(long, default_value_t = 20260810)]
    seed: u64,
    /// Quadrature nodes per replicate.
    #[arg(long, default_value_t = 16384)]
    samples: u64,
    /// Acceptance threshold for z-scores.
    #[arg(long, default_value_t = 3.0)]
    tolerance: f64,
    /// Write the JSON/CSV payload here instead of stdout only.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Output format.
    #[arg(long, default_value = "json")]
    format: String,
    /// Bypass the constants cache.
    #[arg(long, default_value_t = false)]
    no_cache: bool,
}

impl RunConfig {
    fn budget(&self) -> Budget {
        Budget::default().with_points(self.samples)
    }

    fn cache(&self) -> Option<ConstantCache> {
        if self.no_cache {
            return None;
        }
        let dir = std::env::var_os("CARNOT_CACHE_DIR")?;
        ConstantCache::open(std::path::Path::new(&dir)).ok()
    }

    fn resolve(&self) -> Result<(Arc<GradedAlgebra>, HomDistance), String> {
        let algebra = Arc::new(resolve_group(&self.group).map_err(|e| e.to_string())?);
        let dist = match self.dist.as_str() {
            "koranyi" => koranyi_norm(algebra.clone()).map_err(|e| e.to_string())?,
            "euclidean" => {
                if algebra.step != 1 {
                    return Err("euclidean distance requires a step-1 group".to_string());
                }
                box_norm(algebra.clone(), &[1.0])
            }
            "box" => box_norm_auto(algebra.clone(), self.seed),
            other => {
                let Some(spec) = other.strip_prefix("box:") else {
                    return Err(format!("unknown distance `{other}`"));
                };
                let eps: Result<Vec<f64>, _> = spec.split(',').map(str::parse::<f64>).collect();
                let eps = eps.map_err(|e| format!("bad box scales: {e}"))?;
                if eps.len() != algebra.step {
                    return Err(format!(
                        "box distance needs {} scales, got {}",
                        algebra.step,
                        eps.len()
                    ));
                }
                box_norm(algebra.clone(), &eps)
            }
        };
        Ok((algebra, dist))
    }

    fn emit(&self, payload: &str) -> Result<(), String> {
        println!("{payload}");
        if let Some(path) = &self.output {
            std::fs::write(path, payload).map_err(|e| e.to_string())?;
        }
        Ok(())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a group specification file.
    Validate { spec_path: PathBuf },
    /// Compute a named constant and print it as JSON.
    Constants {
        #[command(flatten)]
        config: RunConfig,
        /// heis_c | density | ratio | normalization
        #[arg(long)]
        kind: String,
        /// Codimension of the coordinate vertical subgroup (0 = full group).
        #[arg(long, default_value_t = 1)]
        k: usize,
    },
    /// Density constant of a coordinate vertical subgroup.
    Density {
        #[command(flatten)]
        config: RunConfig,
        #[arg(long, default_value_t = 1)]
        k: usize,
    },
    /// Verify the area identity on a bundled scenario.
    AreaCheck {
        #[command(flatten)]
        config: RunConfig,
        /// linear-windows | splitting-invariance
        #[arg(long, default_value = "linear-windows")]
        scenario: String,
    },
    /// Verify the coarea identity on a bundled scenario.
    CoareaCheck {
        #[command(flatten)]
        config: RunConfig,
        /// heis1-plane-slice | heis2-vertical-slice | heis1-xy-degenerate |
        /// heis1-xy-full-box
        #[arg(long, default_value = "heis1-plane-slice")]
        scenario: String,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // help/version requests are not usage errors
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Validate { spec_path } => cmd_validate(&spec_path),
        Command::Constants { config, kind, k } => cmd_constants(&config, &kind, k),
        Command::Density { config, k } => cmd_constants(&config, "density", k),
        Command::AreaCheck { config, scenario } => cmd_area_check(&config, &scenario),
        Command::CoareaCheck { config, scenario } => cmd_coarea_check(&config, &scenario),
    }
}

fn cmd_validate(spec_path: &std::path::Path) -> ExitCode {
    let src = match GroupSpecSource::from_file(spec_path) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("cannot read {}: {e}", spec_path.display());
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match parse_group_spec(&src) {
        Ok(algebra) => {
            let report = validate_algebra(&algebra);
            println!(
                "ok: group `{}` dim {} step {} layers {:?} hom-dim {} stratified {}",
                algebra.name,
                algebra.dim,
                algebra.step,
                algebra.layer_dims(),
                algebra.hom_dimension(),
                algebra.stratified
            );
            print!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            let code = match e {
                ParseError::Syntax(..)
                | ParseError::UnknownSymbol(..)
                | ParseError::DuplicateBracket(..)
                | ParseError::UnknownBuiltin(..)
                | ParseError::BadParameter(..) => EXIT_SYNTAX,
                ParseError::GradingViolation(..)
                | ParseError::JacobiViolation(..)
                | ParseError::AntisymmetryViolation(..) => EXIT_ALGEBRA,
            };
            ExitCode::from(code)
        }
    }
}

fn vertical_for(
    algebra: &Arc<GradedAlgebra>,
    dist: &HomDistance,
    k: usize,
) -> Result<HomSubgroup, String> {
    if let Some(_n) = heisenberg::heis_n(algebra) {
        Ok(heisenberg::coordinate_vertical(algebra.clone(), k)
            .map_err(|e| e.to_string())?
            .subgroup)
    } else if k == 0 {
        Ok(HomSubgroup::full(algebra.clone()))
    } else {
        // coordinate subgroup dropping the first k layer-1 directions
        let layer1 = algebra.layer_indices(1);
        if k > layer1.len() {
            return Err(format!("codimension {k} exceeds the first layer"));
        }
        let mut layer_bases: Vec<Vec<Vec<f64>>> = vec![Vec::new(); algebra.step];
        for (pos, &i) in layer1.iter().enumerate() {
            if pos < k {
                continue;
            }
            let mut v = vec![0.0; algebra.dim];
            v[i] = 1.0;
            layer_bases[0].push(v);
        }
        for l in 2..=algebra.step {
            for &i in &algebra.layer_indices(l) {
                let mut v = vec![0.0; algebra.dim];
                v[i] = 1.0;
                layer_bases[l - 1].push(v);
            }
        }
        let _ = dist;
        carnot::subgroup::make_subgroup(algebra.clone(), &layer_bases).map_err(|e| e.to_string())
    }
}

fn cmd_constants(config: &RunConfig, kind: &str, k: usize) -> ExitCode {
    let (algebra, dist) = match config.resolve() {
        Ok(x) => x,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let budget = config.budget();
    let cache = config.cache();
    let key = cache_key(&[
        ("group", config.group.clone()),
        ("dist", config.dist.clone()),
        ("kind", kind.to_string()),
        ("k", k.to_string()),
        ("seed", config.seed.to_string()),
        ("points", budget.points.to_string()),
    ]);
    let inputs = serde_json::json!({
        "group": config.group,
        "dist": config.dist,
        "k": k,
        "budget_points": budget.points,
    });

    let cached: Option<MeasureEstimate> = cache.as_ref().and_then(|c| c.get(&key));
    let record: Result<ConstantRecord, String> = match kind {
        "heis_c" => {
            let Some(n) = heisenberg::heis_n(&algebra) else {
                eprintln!("heis_c requires a Heisenberg group");
                return ExitCode::from(EXIT_USAGE);
            };
            let est = match cached {
                Some(est) => Ok(est),
                None => heisenberg::c_constant(n, k, &dist, &budget, config.seed)
                    .map(|c| c.value)
                    .map_err(|e| e.to_string()),
            };
            est.map(|est| {
                let mut r = ConstantRecord::from_estimate("heis_c", inputs.clone(), &est);
                r.flags.push(format!("n={n}"));
                if let Some(c) = &cache {
                    c.put(&key, est);
                }
                r
            })
        }
        "density" => match vertical_for(&algebra, &dist, k) {
            Ok(p) => {
                let est = cached
                    .unwrap_or_else(|| density_constant(&p, &dist, &budget, config.seed));
                if let Some(c) = &cache {
                    c.put(&key, est.clone());
                }
                Ok(ConstantRecord::from_estimate("density", inputs.clone(), &est))
            }
            Err(e) => Err(e),
        },
        "ratio" => match vertical_for(&algebra, &dist, k) {
            Ok(p) => Ok(sh_ratio(&p, &dist, &budget, config.seed)),
            Err(e) => Err(e),
        },
        "normalization" => match vertical_for(&algebra, &dist, k) {
            Ok(p) => {
                let est = cached.unwrap_or_else(|| {
                    spherical_normalization(&p, &dist, &budget, config.seed).theta
                });
                if let Some(c) = &cache {
                    c.put(&key, est.clone());
                }
                let mut r =
                    ConstantRecord::from_estimate("normalization", inputs.clone(), &est);
                r.flags.push("value is the unit-diameter sup Theta; beta = 1/Theta".into());
                Ok(r)
            }
            Err(e) => Err(e),
        },
        other => {
            eprintln!("unknown constant kind `{other}`");
            return ExitCode::from(EXIT_USAGE);
        }
    };

    match record {
        Ok(r) => {
            let payload = serde_json::to_string_pretty(&r).expect("record serializes");
            if config.emit(&payload).is_err() {
                return ExitCode::from(EXIT_ESTIMATOR);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("estimator failure: {e}");
            ExitCode::from(EXIT_ESTIMATOR)
        }
    }
}

fn cmd_area_check(config: &RunConfig, scenario: &str) -> ExitCode {
    let budget = config.budget();
    match scenario {
        "linear-windows" => {
            let mut worst_z = 0.0_f64;
            let mut lines = Vec::new();
            for w in scenarios::linear_windows() {
                let f = carnot::graphs::C1hFunction::from_morphism(&w.defining);
                let level = carnot::algebra::Point::origin(f.target.clone());
                let graph = carnot::graphs::level_set_as_graph(
                    &f,
                    &level,
                    &w.splitting,
                    w.domain.clone(),
                    &w.target_dist,
                    1e-11,
                );
                let est = match area_integrate(&graph, |_| 1.0, &w.dist, &budget, config.seed) {
                    Ok(e) => e,
                    Err(e) => {
                        eprintln!("{}: {e}", w.name);
                        return ExitCode::from(EXIT_ESTIMATOR);
                    }
                };
                let (oracle, oracle_se) =
                    match haar_window_oracle(&w, &graph, &budget, config.seed ^ 0x0a) {
                        Ok(x) => x,
                        Err(e) => {
                            eprintln!("{}: {e}", w.name);
                            return ExitCode::from(EXIT_ESTIMATOR);
                        }
                    };
                let se = (est.std_error.powi(2) + oracle_se.powi(2)).sqrt().max(1e-12);
                let z = (est.value - oracle).abs() / se;
                worst_z = worst_z.max(z);
                lines.push(serde_json::json!({
                    "window": w.name,
                    "area_route": est.value,
                    "haar_oracle": oracle,
                    "z": z,
                }));
            }
            let payload = serde_json::to_string_pretty(&serde_json::json!({
                "scenario": scenario,
                "windows": lines,
                "worst_z": worst_z,
                "pass": worst_z <= config.tolerance,
            }))
            .unwrap();
            let _ = config.emit(&payload);
            if worst_z <= config.tolerance {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_DISAGREE)
            }
        }
        "splitting-invariance" => {
            let s = scenarios::heis1_splitting_invariance();
            let mut values = Vec::new();
            for i in 0..2 {
                let level = carnot::algebra::Point::origin(s.f.target.clone());
                let graph = carnot::graphs::level_set_as_graph(
                    &s.f,
                    &level,
                    &s.splittings[i],
                    s.domains[i].clone(),
                    &s.target_dist,
                    1e-10,
                );
                let h = s.h.clone();
                match area_integrate(&graph, move |p| h(p), &s.dist, &budget, config.seed) {
                    Ok(e) => values.push(e),
                    Err(e) => {
                        eprintln!("splitting {i}: {e}");
                        return ExitCode::from(EXIT_ESTIMATOR);
                    }
                }
            }
            let z = values[0].z_against(&values[1]).abs();
            let payload = serde_json::to_string_pretty(&serde_json::json!({
                "scenario": scenario,
                "first": values[0],
                "second": values[1],
                "z": z,
                "pass": z <= config.tolerance,
            }))
            .unwrap();
            let _ = config.emit(&payload);
            if z <= config.tolerance {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_DISAGREE)
            }
        }
        other => {
            eprintln!("unknown area scenario `{other}`");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

/// Independent Haar-measure oracle for a subgroup window: beta_P times the
/// Lebesgue mass of the region of P projecting into the graph domain.
fn haar_window_oracle(
    w: &scenarios::LinearWindow,
    graph: &carnot::graphs::IntrinsicGraph,
    budget: &Budget,
    seed: u64,
) -> Result<(f64, f64), String> {
    let p = carnot::subgroup::kernel(&w.defining);
    let hp = spherical_normalization(&p, &w.dist, budget, seed);
    // the window's P-coefficient extent: exact at the corners for a
    // subgroup graph, inflated a little for safety
    let mut reach = 0.0_f64;
    let corners = 1usize << w.domain.len();
    for mask in 0..corners {
        let corner: Vec<f64> = w
            .domain
            .iter()
            .enumerate()
            .map(|(i, (lo, hi))| if mask >> i & 1 == 1 { *hi } else { *lo })
            .collect();
        let q = graph
            .graph_point(&corner)
            .map_err(|e| format!("corner solve failed: {e}"))?;
        for c in p.coeffs_of(&q.coords) {
            reach = reach.max(c.abs());
        }
    }
    let reach = reach * 1.2 + 0.05;
    let t = p.top_dim();
    let leb = carnot::qmc::integrate_unit_cube(t, seed ^ 0x33, budget.points, 6, |u| {
        let coeffs: Vec<f64> = u.iter().map(|x| (2.0 * x - 1.0) * reach).collect();
        let q = p.embed(&coeffs);
        let wc = w.splitting.w_coeffs(&q);
        let inside = wc
            .iter()
            .zip(&w.domain)
            .all(|(c, (lo, hi))| *c >= *lo && *c <= *hi);
        if inside {
            1.0
        } else {
            0.0
        }
    })
    .scale((2.0 * reach).powi(t as i32), 0.0);
    let value = leb.value * hp.beta;
    let se = ((leb.std_error * hp.beta).powi(2)
        + (value * hp.theta.std_error / hp.theta.value).powi(2))
    .sqrt();
    Ok((value, se))
}

fn cmd_coarea_check(config: &RunConfig, scenario: &str) -> ExitCode {
    let scn = match scenario {
        "heis1-plane-slice" => scenarios::heis1_plane_slice(),
        "heis2-vertical-slice" => scenarios::heis2_vertical_slice(),
        "heis1-xy-degenerate" => scenarios::heis1_xy_degenerate(),
        "heis1-xy-full-box" => scenarios::heis1_xy_full_box(),
        other => {
            eprintln!("unknown coarea scenario `{other}`");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let budget = config.budget();
    match coarea_check(&scn, &budget, config.seed) {
        Ok(report) => {
            let both_null = report.lhs.value.abs() <= 3.0 * report.lhs.std_error.max(1e-12)
                && report.rhs.value.abs() <= 3.0 * report.rhs.std_error.max(1e-12);
            let pass = report.z.abs() <= config.tolerance
                && (both_null || (report.ratio >= 0.95 && report.ratio <= 1.05));
            if config.format == "csv" {
                let mut csv = String::from("s,status,value,std_error\n");
                for row in &report.per_slice {
                    csv.push_str(&format!(
                        "{:?},{},{},{}\n",
                        row.s, row.status, row.value, row.std_error
                    ));
                }
                let _ = config.emit(&csv);
            } else {
                let payload = serde_json::to_string_pretty(&serde_json::json!({
                    "scenario": scenario,
                    "lhs": report.lhs,
                    "rhs": report.rhs,
                    "z": report.z,
                    "ratio": report.ratio,
                    "cells": {
                        "good": report.good_cells,
                        "empty": report.empty_cells,
                        "bad": report.bad_cells,
                        "bad_bound": report.bad_bound,
                    },
                    "pass": pass,
                }))
                .unwrap();
                let _ = config.emit(&payload);
            }
            if pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_DISAGREE)
            }
        }
        Err(measures::MeasureError::HypothesisViolated(p)) => {
            eprintln!("hypothesis violated at sampled point {p:?}");
            ExitCode::from(EXIT_HYPOTHESIS)
        }
        Err(e) => {
            eprintln!("estimator failure: {e}");
            ExitCode::from(EXIT_ESTIMATOR)
        }
    }
}
