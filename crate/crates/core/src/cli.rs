//! Command-line interface: generation, estimation, the comparison table,
//! curve bands, the normality check, the equivalence demo, and the
//! consistency sweep. Every command is reproducible from its config and
//! seed; all CSV outputs carry a provenance header line.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::baselines::{iv_estimate, IvSpec};
use crate::config::{self, KvMap};
use crate::csvio;
use crate::datagen::gen_dataset;
use crate::diagnostics::{constant_fit_check, curve_bands, equivalence_demo};
use crate::error::{EivError, Result};
use crate::montecarlo::{consistency_sweep, run_study, run_table1, McStudySpec};
use crate::objective::residual_curve;
use crate::optimizer::{maximize, Method, SearchConfig};

#[derive(Parser)]
#[command(name = "eiv", version, about = "Errors-in-variables estimation via log-CF second derivatives")]
pub struct Cli {
    /// Worker threads for replication-level parallelism (default: all cores;
    /// the EIV_THREADS environment variable is the fallback).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

/// Overrides shared by the study-style commands.
#[derive(Args, Clone, Default)]
pub struct ObjectiveOverrides {
    /// Half-width of the weight support over u.
    #[arg(long)]
    pub u_max: Option<f64>,
    /// Number of quadrature nodes (odd).
    #[arg(long)]
    pub grid_size: Option<usize>,
    /// |s0| floor below which a node is masked.
    #[arg(long)]
    pub denom_floor: Option<f64>,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset from a design config.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the latent columns xstar1..,u1..,eps.
        #[arg(long)]
        latent: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_obs: Option<usize>,
    },
    /// Run one estimator on a dataset CSV (header x1..xK,y).
    Estimate {
        #[arg(long)]
        data: PathBuf,
        /// pd | ols | c3 | c4
        #[arg(long)]
        method: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        objective: ObjectiveOverrides,
        /// Seed for the PD random start.
        #[arg(long)]
        seed: Option<u64>,
        /// Search box "lo,hi;lo,hi" (PD only; default anchors on OLS).
        #[arg(long)]
        bounds: Option<String>,
    },
    /// Reproduce the comparison table: 3 designs x {no error, N(0,1) error}
    /// x {PD, C3, C4, OLS}.
    Table1 {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        n_obs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        objective: ObjectiveOverrides,
    },
    /// Monte Carlo bands of the log-CF second derivatives along (u,...,u,0).
    Curves {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        objective: ObjectiveOverrides,
    },
    /// Curve bands plus the constant-fit (nonnormality) verdict per pair.
    NormalityCheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        objective: ObjectiveOverrides,
    },
    /// Observational-equivalence construction: scaled coefficients with a
    /// dependent error reproduce the same observables.
    EquivalenceDemo {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Scaling constants, e.g. "2,2" (each must avoid 0 and 1).
        #[arg(long, default_value = "2,2")]
        c: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// RMSE versus sample size for the chosen methods.
    Consistency {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Ascending sample sizes, e.g. "1000,4000".
        #[arg(long, default_value = "1000,4000")]
        n_values: String,
        #[arg(long)]
        reps: Option<usize>,
        /// Comma-separated subset of pd,ols,c3,c4.
        #[arg(long, default_value = "pd")]
        methods: String,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        objective: ObjectiveOverrides,
    },
}

fn apply_override(map: &mut KvMap, key: &str, value: Option<String>) {
    if let Some(v) = value {
        map.insert(key.to_string(), v);
    }
}

fn apply_objective_overrides(map: &mut KvMap, o: &ObjectiveOverrides) {
    apply_override(map, "u_max", o.u_max.map(|v| v.to_string()));
    apply_override(map, "grid_size", o.grid_size.map(|v| v.to_string()));
    apply_override(map, "denom_floor", o.denom_floor.map(|v| v.to_string()));
}

fn load_config(path: Option<&Path>) -> Result<KvMap> {
    match path {
        Some(p) => config::load_kv(p),
        None => Ok(KvMap::new()),
    }
}

fn init_threads(threads: Option<usize>) {
    let n = threads.or_else(|| {
        std::env::var("EIV_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
    });
    if let Some(n) = n.filter(|&n| n > 0) {
        // Ignore the error if a pool already exists (repeat calls in tests).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

/// Grid for the band curves: grid_size nodes on [-u_max, u_max].
fn band_grid(map: &KvMap) -> Result<Vec<f64>> {
    let ospec = config::objective_from_kv(map)?;
    let u_max = ospec.weight.kind.u_max();
    let m = ospec.grid_size;
    let half = m / 2;
    let step = u_max / half as f64;
    let mut grid = vec![0.0; m];
    for i in 0..=half {
        let u = if i == half { u_max } else { i as f64 * step };
        grid[half + i] = u;
        grid[half - i] = -u;
    }
    Ok(grid)
}

pub fn run(cli: Cli) -> Result<()> {
    init_threads(cli.threads);
    match cli.command {
        Command::Gen { config: cfg, out, latent, seed, n_obs } => {
            let mut map = load_config(Some(&cfg))?;
            apply_override(&mut map, "seed", seed.map(|v| v.to_string()));
            apply_override(&mut map, "n_obs", n_obs.map(|v| v.to_string()));
            let design = config::design_from_kv(&map)?;
            let data = gen_dataset(&design)?;
            let prov = csvio::provenance_line(&config::config_hash(&map), design.seed);
            let path = out.join("dataset.csv");
            csvio::write_dataset(&path, &data, latent, &prov)?;
            println!("wrote {}", path.display());
            Ok(())
        }

        Command::Estimate { data, method, out, objective, seed, bounds } => {
            let mut map = KvMap::new();
            apply_objective_overrides(&mut map, &objective);
            apply_override(&mut map, "seed", seed.map(|v| v.to_string()));
            apply_override(&mut map, "bounds", bounds.clone());
            let ospec = config::objective_from_kv(&map)?;
            let seed = seed.unwrap_or(0);
            let dataset = csvio::read_dataset(&data)?;
            let method = Method::parse(&method)?;

            let report = match method {
                Method::Ols => crate::baselines::ols(&dataset)?,
                Method::C3 => iv_estimate(&dataset, &IvSpec::c3())?,
                Method::C4 => iv_estimate(&dataset, &IvSpec::c4())?,
                Method::Pd => {
                    let anchor = crate::baselines::ols(&dataset)?.b_hat;
                    let mut cfg = SearchConfig::anchored_at(&anchor, seed);
                    if let Some(b) = &bounds {
                        let parsed = config::parse_bounds(b)?;
                        if parsed.len() != dataset.k() {
                            return Err(EivError::Config(format!(
                                "bounds has {} axes, data has K = {}",
                                parsed.len(),
                                dataset.k()
                            )));
                        }
                        cfg.bounds = parsed;
                        for start in cfg.starts.iter_mut() {
                            for (v, &(lo, hi)) in start.iter_mut().zip(&cfg.bounds) {
                                *v = v.clamp(lo, hi);
                            }
                        }
                    }
                    maximize(&dataset, &ospec, &cfg)?
                }
            };

            let prov = csvio::provenance_line(&config::config_hash(&map), seed);
            csvio::write_report(&out.join("report.csv"), &report, &prov)?;
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("report.txt"), csvio::report_text(&report))?;
            if method == Method::Pd {
                let points = residual_curve(&dataset, &report.b_hat, &ospec)?;
                csvio::write_residual_curve(&out.join("residuals.csv"), &points, &prov)?;
            }
            print!("{}", csvio::report_text(&report));
            Ok(())
        }

        Command::Table1 { config: cfg, out, reps, n_obs, seed, objective } => {
            let mut map = load_config(cfg.as_deref())?;
            apply_objective_overrides(&mut map, &objective);
            apply_override(&mut map, "reps", reps.map(|v| v.to_string()));
            apply_override(&mut map, "n_obs", n_obs.map(|v| v.to_string()));
            apply_override(&mut map, "master_seed", seed.map(|v| v.to_string()));
            let reps = config::parse_usize(&map, "reps")?.unwrap_or(100);
            let n_obs = config::parse_usize(&map, "n_obs")?.unwrap_or(1000);
            let master_seed = config::parse_u64(&map, "master_seed")?.unwrap_or(0);
            let ospec = config::objective_from_kv(&map)?;

            let cells = run_table1(reps, n_obs, &ospec, master_seed)?;
            let prov = csvio::provenance_line(&config::config_hash(&map), master_seed);
            csvio::write_table1(&out.join("table1.csv"), &cells, &prov)?;
            let labeled: Vec<(String, String, &[crate::montecarlo::RepRecord])> = cells
                .iter()
                .map(|c| {
                    (
                        c.design.label().to_string(),
                        if c.with_meas_error { "normal(0,1)".to_string() } else { "none".to_string() },
                        c.records.as_slice(),
                    )
                })
                .collect();
            csvio::write_replications(&out.join("replications.csv"), &labeled, 2, &prov)?;
            for cell in &cells {
                let err = if cell.with_meas_error { "U~N(0,1)" } else { "U=0" };
                for m in &cell.summary.methods {
                    if let Some(c0) = m.coefs.first() {
                        println!(
                            "{} {} {}: mean b1 = {:.4}, sd = {:.4} ({} failures)",
                            cell.design.label(),
                            err,
                            m.method.label(),
                            c0.mean,
                            c0.sd,
                            m.failures
                        );
                    }
                }
            }
            println!("wrote {}", out.join("table1.csv").display());
            Ok(())
        }

        Command::Curves { config: cfg, out, reps, seed, objective } => {
            let mut map = load_config(Some(&cfg))?;
            apply_objective_overrides(&mut map, &objective);
            apply_override(&mut map, "seed", seed.map(|v| v.to_string()));
            apply_override(&mut map, "reps", reps.map(|v| v.to_string()));
            let reps = config::parse_usize(&map, "reps")?.unwrap_or(100);
            let mut design = config::design_from_kv(&map)?;
            if let Some(s) = config::parse_u64(&map, "seed")? {
                design.seed = s;
            }
            let ospec = config::objective_from_kv(&map)?;
            let grid = band_grid(&map)?;
            let set = curve_bands(&design, reps, &grid, ospec.denom_floor)?;
            let prov = csvio::provenance_line(&config::config_hash(&map), design.seed);
            let written = csvio::write_curve_bands(&out, &set, &prov)?;
            for p in &written {
                println!("wrote {}", p.display());
            }
            Ok(())
        }

        Command::NormalityCheck { config: cfg, out, reps, seed, objective } => {
            let mut map = load_config(Some(&cfg))?;
            apply_objective_overrides(&mut map, &objective);
            apply_override(&mut map, "seed", seed.map(|v| v.to_string()));
            apply_override(&mut map, "reps", reps.map(|v| v.to_string()));
            let reps = config::parse_usize(&map, "reps")?.unwrap_or(100);
            let mut design = config::design_from_kv(&map)?;
            if let Some(s) = config::parse_u64(&map, "seed")? {
                design.seed = s;
            }
            let ospec = config::objective_from_kv(&map)?;
            let grid = band_grid(&map)?;
            let set = curve_bands(&design, reps, &grid, ospec.denom_floor)?;
            let verdicts = constant_fit_check(&set);
            let prov = csvio::provenance_line(&config::config_hash(&map), design.seed);
            csvio::write_curve_bands(&out, &set, &prov)?;
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("verdicts.txt"), csvio::verdict_text(&verdicts))?;
            print!("{}", csvio::verdict_text(&verdicts));
            Ok(())
        }

        Command::EquivalenceDemo { config: cfg, out, c, seed } => {
            let mut map = load_config(Some(&cfg))?;
            apply_override(&mut map, "seed", seed.map(|v| v.to_string()));
            map.insert("c".into(), c.clone());
            let mut design = config::design_from_kv(&map)?;
            if let Some(s) = config::parse_u64(&map, "seed")? {
                design.seed = s;
            }
            let scales = config::parse_f64_list(&c)?;
            let report = equivalence_demo(&design, &scales)?;
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("equivalence.txt"), csvio::equivalence_text(&report))?;
            print!("{}", csvio::equivalence_text(&report));
            Ok(())
        }

        Command::Consistency { config: cfg, out, n_values, reps, methods, seed, objective } => {
            let mut map = load_config(Some(&cfg))?;
            apply_objective_overrides(&mut map, &objective);
            apply_override(&mut map, "reps", reps.map(|v| v.to_string()));
            apply_override(&mut map, "master_seed", seed.map(|v| v.to_string()));
            map.insert("n_values".into(), n_values.clone());
            map.insert("methods".into(), methods.clone());
            let reps = config::parse_usize(&map, "reps")?.unwrap_or(100);
            let master_seed = config::parse_u64(&map, "master_seed")?.unwrap_or(0);
            let design = config::design_from_kv(&map)?;
            let ospec = config::objective_from_kv(&map)?;
            let methods = config::parse_methods(&methods)?;
            let ns: Vec<usize> = n_values
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse::<usize>()
                        .map_err(|_| EivError::Config(format!("bad sample size '{t}'")))
                })
                .collect::<Result<_>>()?;
            let rows = consistency_sweep(&design, &ns, reps, &methods, &ospec, master_seed)?;
            let prov = csvio::provenance_line(&config::config_hash(&map), master_seed);
            csvio::write_consistency(&out.join("consistency.csv"), &rows, reps, &prov)?;
            for row in &rows {
                for (m, rmse, failures) in &row.per_method {
                    println!("N = {}: {} rmse = {:.5} ({} failures)", row.n_obs, m, rmse, failures);
                }
            }
            Ok(())
        }
    }
}

/// Runs a single study described entirely by a config file (used by tests
/// and kept for parity with the library surface).
pub fn study_from_kv(map: &KvMap) -> Result<McStudySpec> {
    let design = config::design_from_kv(map)?;
    let objective = config::objective_from_kv(map)?;
    let reps = config::parse_usize(map, "reps")?.unwrap_or(100);
    let methods = match map.get("methods") {
        Some(s) => config::parse_methods(s)?,
        None => vec![Method::Pd, Method::C3, Method::C4, Method::Ols],
    };
    let master_seed = config::parse_u64(map, "master_seed")?.unwrap_or(0);
    Ok(McStudySpec {
        design,
        reps,
        methods,
        objective,
        search: None,
        master_seed,
    })
}

/// Convenience wrapper used by the binary.
pub fn run_study_spec(spec: &McStudySpec) -> Result<()> {
    let _ = run_study(spec)?;
    Ok(())
}
