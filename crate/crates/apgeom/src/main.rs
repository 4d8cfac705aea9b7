//! Command-line front end: load a geometry (catalog name or JSON chart
//! config), dispatch identity / variation / Euler-Lagrange / action runs
//! and emit machine-readable reports.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use apgeom::catalog::{self, CatalogEntry};
use apgeom::chart::{
    BumpWindow, DeformationField, DeformationShape, Geometry, GeometryConfig, Role,
};
use apgeom::error::GeomError;
use apgeom::exprlang::{Expr, Params};
use apgeom::identities;
use apgeom::variation::{
    action_value, block_flags, first_variation_check, umbilicity_preservation_check,
    volume_normalization_check, ActionKind, Domain, ElEvaluator, ElSystem, Flavor,
    VariationFamily,
};

#[derive(Parser)]
#[command(name = "apgeom", version, about = "Extrinsic geometry of almost-product charts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON config file; either a chart object or a settings object with
    /// an optional "chart" key.  Command-line flags win over file keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Catalog geometry name (see `apgeom catalog list`).
    #[arg(long)]
    geometry: Option<String>,
    /// Sample points per check.
    #[arg(long)]
    points: Option<usize>,
    /// Quadrature order (Gauss-Legendre points per axis).
    #[arg(long)]
    quad: Option<usize>,
    /// Residual tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Finite-difference step in the family parameter.
    #[arg(long)]
    fd_step: Option<f64>,
    /// Use volume-preserving families (keeps the starred mean values).
    #[arg(long)]
    volume_preserving: Option<bool>,
    /// Seed for point sampling and random variation profiles.
    #[arg(long)]
    seed: Option<u64>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the report rows as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Catalog parameter overrides, repeatable: --params k=v
    #[arg(long = "params", value_name = "K=V")]
    params: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Structural identity residuals over a low-discrepancy point sample.
    Identities(Common),
    /// First-variation formulas against finite differences in the family
    /// parameter, for seeded random bump directions.
    Variation(Common),
    /// Euler-Lagrange residuals of the requested system(s).
    El {
        #[command(flatten)]
        common: Common,
        /// System name; repeatable.  Defaults to every applicable system.
        #[arg(long)]
        system: Vec<String>,
    },
    /// Quadrature values of the two actions over the working domain.
    Action(Common),
    /// Catalog operations.
    Catalog {
        #[command(subcommand)]
        op: CatalogOp,
    },
    /// Print the chart JSON schema.
    Schema,
}

#[derive(Subcommand)]
enum CatalogOp {
    /// List builtin geometries.
    List {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build one builtin and re-verify its expected flags.
    Run {
        name: String,
        #[command(flatten)]
        common: Common,
    },
}

/// Settings file: keys mirror the flags; an embedded chart wins over a
/// geometry name.
#[derive(Deserialize, Default)]
struct FileConfig {
    geometry: Option<String>,
    system: Option<Vec<String>>,
    points: Option<usize>,
    quad: Option<usize>,
    tol: Option<f64>,
    fd_step: Option<f64>,
    volume_preserving: Option<bool>,
    seed: Option<u64>,
    chart: Option<GeometryConfig>,
}

#[derive(Serialize)]
struct CheckRow {
    check: String,
    geometry: String,
    n_points: usize,
    max_residual: f64,
    tol: f64,
    pass: bool,
}

#[derive(Serialize)]
struct Report {
    report_version: u32,
    checks: Vec<CheckRow>,
}

struct Settings {
    geometry_name: String,
    entry: Option<CatalogEntry>,
    geometry: Geometry,
    points: usize,
    quad: usize,
    tol: f64,
    fd_step: f64,
    volume_preserving: bool,
    seed: u64,
    systems: Vec<String>,
}

fn parse_params(pairs: &[String]) -> Result<Params, GeomError> {
    let mut params = Params::new();
    for pair in pairs {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| GeomError::config("/params", format!("expected k=v, got `{pair}`")))?;
        let value: f64 = v
            .parse()
            .map_err(|_| GeomError::config("/params", format!("`{v}` is not a number")))?;
        params.insert(k.trim().to_string(), value);
    }
    Ok(params)
}

fn resolve(common: &Common, systems_flag: &[String]) -> Result<Settings, GeomError> {
    let mut file = FileConfig::default();
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path)
            .map_err(|e| GeomError::config("/config", e.to_string()))?;
        let raw: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| GeomError::config("/config", e.to_string()))?;
        if raw.get("metric").is_some() {
            // the file is a bare chart object
            file.chart = Some(
                serde_json::from_value(raw)
                    .map_err(|e| GeomError::config("/config", e.to_string()))?,
            );
        } else {
            file = serde_json::from_value(raw)
                .map_err(|e| GeomError::config("/config", e.to_string()))?;
        }
    }
    let overrides = parse_params(&common.params)?;
    let name = common
        .geometry
        .clone()
        .or(file.geometry)
        .unwrap_or_else(|| "custom".to_string());
    let (entry, geometry, geometry_name) = if let Some(chart) = file.chart {
        let geom = chart.build()?;
        geom.check_signature(&geom.chart.interior_point(&vec![0.4; geom.dim()], 0.1))?;
        (None, geom, "custom".to_string())
    } else {
        if name == "custom" {
            return Err(GeomError::config(
                "/geometry",
                "need --geometry NAME or a chart in --config",
            ));
        }
        let entry = catalog::builtin(&name, &overrides)?;
        let geom = entry.geometry.clone();
        (Some(entry), geom, name)
    };
    let mut systems: Vec<String> = systems_flag.to_vec();
    if systems.is_empty() {
        systems = file.system.unwrap_or_default();
    }
    Ok(Settings {
        geometry_name,
        entry,
        geometry,
        points: common.points.or(file.points).unwrap_or(50),
        quad: common.quad.or(file.quad).unwrap_or(6),
        tol: common.tol.or(file.tol).unwrap_or(1e-8),
        fd_step: common.fd_step.or(file.fd_step).unwrap_or(1e-3),
        volume_preserving: common
            .volume_preserving
            .or(file.volume_preserving)
            .unwrap_or(true),
        seed: common.seed.or(file.seed).unwrap_or(0),
        systems,
    })
}

fn sample_points(geom: &Geometry, count: usize, seed: u64) -> Vec<Vec<f64>> {
    apgeom::numerics::halton_points(geom.dim(), count, seed as usize)
        .into_iter()
        .map(|u| geom.chart.interior_point(&u, 0.05))
        .collect()
}

fn inner_domain(geom: &Geometry, order: usize) -> Result<Domain, GeomError> {
    let bounds = geom
        .chart
        .bounds
        .iter()
        .map(|b| {
            let w = 0.1 * (b[1] - b[0]);
            [b[0] + w, b[1] - w]
        })
        .collect();
    Domain::new(bounds, order)
}

/// Seeded smooth bump direction: a low-order polynomial profile under the
/// compactly supported window of the working domain.
fn seeded_bump(dom: &Domain, dim: usize, seed: u64, index: usize) -> DeformationField {
    // splitmix64 stream; deterministic across platforms
    let mut state = seed
        .wrapping_mul(0x9e3779b97f4a7c15)
        .wrapping_add(index as u64 + 1);
    let mut next = move || {
        state = state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z = z ^ (z >> 31);
        (z >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let mut profile = format!("{:.6}", 1.0 + next());
    for k in 0..dim {
        profile.push_str(&format!(" + {:.6}*x{k}", next()));
    }
    let shrink: Vec<[f64; 2]> = dom
        .bounds
        .iter()
        .map(|b| {
            let c = 0.5 * (b[0] + b[1]);
            let h = 0.45 * (b[1] - b[0]);
            [c - h, c + h]
        })
        .collect();
    DeformationField {
        role: Role::Perp,
        shape: DeformationShape::Conformal(Expr::parse(&profile).expect("generated profile")),
        window: BumpWindow::new(
            shrink.iter().map(|b| b[0]).collect(),
            shrink.iter().map(|b| b[1]).collect(),
        ),
    }
}

fn run_identities(s: &Settings) -> Result<Vec<CheckRow>, GeomError> {
    let pts = sample_points(&s.geometry, s.points, s.seed);
    let reports = identities::check_all(&s.geometry, &pts, s.tol)?;
    Ok(reports
        .into_iter()
        .map(|r| CheckRow {
            check: r.check_name,
            geometry: s.geometry_name.clone(),
            n_points: r.n_points,
            max_residual: r.max_residual,
            tol: r.tol,
            pass: r.pass,
        })
        .collect())
}

fn run_variation(s: &Settings) -> Result<Vec<CheckRow>, GeomError> {
    let dim = s.geometry.dim();
    // midpoint rule resolves the bump-localized integrands; coarser per
    // axis in higher dimension to keep runs fast
    let per_axis = if dim <= 2 { 96 } else { 24 };
    let bounds: Vec<[f64; 2]> = s
        .geometry
        .chart
        .bounds
        .iter()
        .map(|b| {
            let w = 0.1 * (b[1] - b[0]);
            [b[0] + w, b[1] - w]
        })
        .collect();
    let dom = Domain::midpoint(bounds, per_axis)?;
    let n_bumps = s.points.min(8).max(1);
    let mut rows: Vec<CheckRow> = Vec::new();
    let bump = |name: &str, v: f64, tol: f64, rows: &mut Vec<CheckRow>| {
        match rows.iter_mut().find(|r| r.check == name) {
            Some(r) => {
                r.max_residual = r.max_residual.max(v);
                r.pass = r.max_residual < r.tol;
            }
            None => rows.push(CheckRow {
                check: name.to_string(),
                geometry: s.geometry_name.clone(),
                n_points: n_bumps,
                max_residual: v,
                tol,
                pass: v < tol,
            }),
        }
    };
    for k in 0..n_bumps {
        let field = seeded_bump(&dom, dim, s.seed, k);
        let (dvol, phi_res) = volume_normalization_check(&s.geometry, &dom, &field, s.fd_step)?;
        bump("volume_flow", dvol, 1e-8, &mut rows);
        bump("phi_dot_closed_form", phi_res, 1e-6, &mut rows);
        for (name, v) in first_variation_check(&s.geometry, &dom, &field, s.fd_step)? {
            let tol = if name.starts_with("dt_integrated") { 1e-5 } else { 1e-6 };
            bump(&name, v, tol, &mut rows);
        }
        let family = VariationFamily::new(s.geometry.clone(), field, Flavor::Plain)?;
        let rep = umbilicity_preservation_check(&family, &dom, Role::Tilde, 1e-2)?;
        bump("preserve_geodesic", rep.geodesic_defect, 1e-6, &mut rows);
        bump("preserve_umbilical", rep.umbilical_defect, 1e-6, &mut rows);
        bump("preserve_harmonic", rep.harmonic_defect, 1e-6, &mut rows);
    }
    Ok(rows)
}

fn run_el(s: &Settings) -> Result<Vec<CheckRow>, GeomError> {
    let dom = inner_domain(&s.geometry, s.quad)?;
    let ev = ElEvaluator::new(&s.geometry, &dom, s.volume_preserving)?;
    let systems: Vec<ElSystem> = if s.systems.is_empty() {
        ElSystem::ALL.to_vec()
    } else {
        s.systems
            .iter()
            .map(|name| name.parse())
            .collect::<Result<_, _>>()?
    };
    let explicit = !s.systems.is_empty();
    let pts = dom.sample_points(s.points.min(50), 0.1, s.seed as usize);
    let mut rows = Vec::new();
    for system in systems {
        let mut worst = 0.0f64;
        let mut applicable = true;
        for x in &pts {
            match ev.residual(x, system) {
                Ok(r) => worst = worst.max(r.residual),
                Err(GeomError::HypothesisViolated { which }) => {
                    if explicit {
                        return Err(GeomError::HypothesisViolated { which });
                    }
                    applicable = false;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if !applicable {
            continue;
        }
        // residuals gate the exit code only where the catalog claims the
        // metric is critical for the system; otherwise they are reported
        let gated = s
            .entry
            .as_ref()
            .map(|e| e.flags.critical.contains(&system))
            .unwrap_or(false);
        let tol = if s.tol > 1e-8 { s.tol } else { 1e-7 };
        rows.push(CheckRow {
            check: format!("el_{}", system.name()),
            geometry: s.geometry_name.clone(),
            n_points: pts.len(),
            max_residual: worst,
            tol,
            pass: !gated || worst < tol,
        });
    }
    Ok(rows)
}

fn run_action(s: &Settings) -> Result<Vec<CheckRow>, GeomError> {
    let dom = inner_domain(&s.geometry, s.quad.max(8))?;
    let mut rows = Vec::new();
    for (name, kind) in [("action_j_mix", ActionKind::Mix), ("action_j_ex_tilde", ActionKind::ExTilde)] {
        let v = action_value(&s.geometry, &dom, kind)?;
        rows.push(CheckRow {
            check: name.to_string(),
            geometry: s.geometry_name.clone(),
            n_points: 0,
            max_residual: v.value,
            tol: (v.value - v.refined).abs(),
            pass: v.converged,
        });
    }
    Ok(rows)
}

fn run_catalog_entry(s: &Settings) -> Result<Vec<CheckRow>, GeomError> {
    let entry = s.entry.as_ref().expect("catalog run resolves an entry");
    let pts = sample_points(&s.geometry, s.points.min(40), s.seed);
    let mut rows = Vec::new();
    let push = |check: &str, v: f64, tol: f64, rows: &mut Vec<CheckRow>| {
        rows.push(CheckRow {
            check: check.to_string(),
            geometry: s.geometry_name.clone(),
            n_points: pts.len(),
            max_residual: v,
            tol,
            pass: v < tol,
        });
    };

    for (label, role, expect_geo, expect_umb) in [
        ("tilde", Role::Tilde, entry.flags.tilde_geodesic, entry.flags.tilde_umbilical),
        ("perp", Role::Perp, entry.flags.perp_geodesic, entry.flags.perp_umbilical),
    ] {
        let f = block_flags(&s.geometry, role, &pts)?;
        if expect_geo {
            push(&format!("flag_geodesic_{label}"), f.geodesic_defect, 1e-8, &mut rows);
        }
        if expect_umb {
            push(&format!("flag_umbilical_{label}"), f.umbilical_defect, 1e-8, &mut rows);
        }
    }
    if let Some(expected) = entry.flags.s_mix {
        let mut worst = 0.0f64;
        for x in &pts {
            let v = apgeom::extrinsic::mixed_scalar_curvature(&s.geometry, x)?;
            worst = worst.max((v - expected).abs());
        }
        push("flag_s_mix", worst, 1e-7, &mut rows);
    }
    if !entry.flags.critical.is_empty() {
        let dom = inner_domain(&s.geometry, s.quad)?;
        let ev = ElEvaluator::new(&s.geometry, &dom, true)?;
        let el_pts = dom.sample_points(6, 0.1, s.seed as usize);
        for &system in &entry.flags.critical {
            let mut worst = 0.0f64;
            for x in &el_pts {
                worst = worst.max(ev.residual(x, system)?.residual);
            }
            push(&format!("flag_critical_{}", system.name()), worst, 1e-7, &mut rows);
        }
    }
    // serialization round-trip through the chart schema
    if let Some(config) = s.geometry.to_config() {
        let text = serde_json::to_string(&config)
            .map_err(|e| GeomError::config("/chart", e.to_string()))?;
        let back: GeometryConfig = serde_json::from_str(&text)
            .map_err(|e| GeomError::config("/chart", e.to_string()))?;
        let rebuilt = back.build()?;
        let mut worst = 0.0f64;
        for x in &pts {
            let a = s.geometry.metric_at(x)?;
            let b = rebuilt.metric_at(x)?;
            let mut d = 0.0f64;
            for i in 0..s.geometry.dim() {
                for j in 0..s.geometry.dim() {
                    d = d.max((a.at(i, j) - b.at(i, j)).abs());
                }
            }
            worst = worst.max(d);
        }
        push("schema_round_trip", worst, 1e-12, &mut rows);
    }
    Ok(rows)
}

fn chart_schema() -> serde_json::Value {
    serde_json::json!({
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "title": "apgeom chart",
        "type": "object",
        "required": ["n", "p", "box", "signature_q", "metric", "dtilde_frame"],
        "properties": {
            "n": { "type": "integer", "minimum": 1,
                   "description": "rank of the spanned distribution" },
            "p": { "type": "integer", "minimum": 1,
                   "description": "rank of the orthogonal complement" },
            "box": {
                "type": "array",
                "items": { "type": "array", "items": { "type": "number" },
                           "minItems": 2, "maxItems": 2 },
                "description": "per-coordinate closed intervals, n + p of them"
            },
            "signature_q": { "type": "integer", "minimum": 0,
                             "description": "number of negative eigenvalues of the metric" },
            "metric": {
                "type": "array",
                "items": { "type": "array", "items": { "type": "string" } },
                "description": "(n+p) x (n+p) symmetric matrix of expressions in x0..x{n+p-1}"
            },
            "dtilde_frame": {
                "type": "array",
                "items": { "type": "array", "items": { "type": "string" } },
                "description": "n expression-valued vector fields spanning the distribution"
            },
            "params": {
                "type": "object",
                "additionalProperties": { "type": "number" },
                "description": "named constants usable inside expressions"
            }
        }
    })
}

fn emit(out: &Option<PathBuf>, csv: &Option<PathBuf>, rows: Vec<CheckRow>) -> Result<bool, GeomError> {
    let pass = rows.iter().all(|r| r.pass);
    let report = Report { report_version: 1, checks: rows };
    let mut text = serde_json::to_string_pretty(&report)
        .map_err(|e| GeomError::config("/report", e.to_string()))?;
    text.push('\n');
    match out {
        Some(path) => fs::write(path, text).map_err(|e| GeomError::config("/out", e.to_string()))?,
        None => {
            std::io::stdout()
                .write_all(text.as_bytes())
                .map_err(|e| GeomError::config("/out", e.to_string()))?;
        }
    }
    if let Some(path) = csv {
        let mut s = String::from("check,geometry,n_points,max_residual,tol,pass\n");
        for r in &report.checks {
            s.push_str(&format!(
                "{},{},{},{:e},{:e},{}\n",
                r.check, r.geometry, r.n_points, r.max_residual, r.tol, r.pass
            ));
        }
        fs::write(path, s).map_err(|e| GeomError::config("/csv", e.to_string()))?;
    }
    Ok(pass)
}

fn dispatch(cli: Cli) -> Result<bool, GeomError> {
    match cli.command {
        Command::Identities(common) => {
            let s = resolve(&common, &[])?;
            emit(&common.out, &common.csv, run_identities(&s)?)
        }
        Command::Variation(common) => {
            let mut c = common.clone();
            if c.points.is_none() {
                c.points = Some(3);
            }
            let s = resolve(&c, &[])?;
            emit(&common.out, &common.csv, run_variation(&s)?)
        }
        Command::El { common, system } => {
            let s = resolve(&common, &system)?;
            emit(&common.out, &common.csv, run_el(&s)?)
        }
        Command::Action(common) => {
            let s = resolve(&common, &[])?;
            emit(&common.out, &common.csv, run_action(&s)?)
        }
        Command::Catalog { op } => match op {
            CatalogOp::List { out } => {
                let list: Vec<serde_json::Value> = catalog::BUILTINS
                    .iter()
                    .map(|(name, summary)| serde_json::json!({ "name": name, "summary": summary }))
                    .collect();
                let mut text = serde_json::to_string_pretty(&serde_json::json!({ "geometries": list }))
                    .map_err(|e| GeomError::config("/report", e.to_string()))?;
                text.push('\n');
                match out {
                    Some(path) => {
                        fs::write(path, text).map_err(|e| GeomError::config("/out", e.to_string()))?
                    }
                    None => print!("{text}"),
                }
                Ok(true)
            }
            CatalogOp::Run { name, common } => {
                let mut c = common.clone();
                c.geometry = Some(name);
                let s = resolve(&c, &[])?;
                emit(&common.out, &common.csv, run_catalog_entry(&s)?)
            }
        },
        Command::Schema => {
            println!("{}", serde_json::to_string_pretty(&chart_schema()).unwrap());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e @ GeomError::Config { .. }) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
