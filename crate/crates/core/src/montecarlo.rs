//! Replication engine: runs the estimators across seeded replications and
//! summarizes the Monte Carlo distributions.

use rayon::prelude::*;

use crate::baselines::{iv_estimate, ols, IvSpec};
use crate::datagen::{gen_dataset, paper_design, DesignSpec, PaperDesign};
use crate::error::{EivError, Result};
use crate::numeric::{derive_seed, mean, quantile, sample_sd};
use crate::objective::ObjectiveSpec;
use crate::optimizer::{grid_refine, maximize, EstimateReport, Method, SearchConfig};

/// Study description: one design, the methods to run, and the knobs shared
/// by every replication.
#[derive(Debug, Clone)]
pub struct McStudySpec {
    pub design: DesignSpec,
    pub reps: usize,
    pub methods: Vec<Method>,
    pub objective: ObjectiveSpec,
    /// Explicit search configuration for the PD estimator. None anchors the
    /// search at each replication's OLS estimate, which is the default.
    pub search: Option<SearchConfig>,
    pub master_seed: u64,
}

impl McStudySpec {
    pub fn validate(&self) -> Result<()> {
        if self.reps < 2 {
            return Err(EivError::Config("reps must be >= 2".into()));
        }
        if self.methods.is_empty() {
            return Err(EivError::Config("methods must be nonempty".into()));
        }
        self.design.validate()?;
        self.objective.validate()?;
        if let Some(cfg) = &self.search {
            cfg.validate()?;
        }
        Ok(())
    }
}

/// One replication x method outcome; failures carry the error message.
#[derive(Debug, Clone)]
pub struct RepRecord {
    pub rep: usize,
    pub seed: u64,
    pub method: Method,
    pub outcome: std::result::Result<EstimateReport, String>,
}

/// Per-coefficient Monte Carlo statistics.
#[derive(Debug, Clone, Copy)]
pub struct CoefStats {
    pub mean: f64,
    pub sd: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
}

/// Per-method summary; failed replications are excluded from the moments and
/// counted. `coefs` is empty when every replication failed.
#[derive(Debug, Clone)]
pub struct MethodSummary {
    pub method: Method,
    pub reps: usize,
    pub failures: usize,
    pub coefs: Vec<CoefStats>,
}

#[derive(Debug, Clone)]
pub struct McSummary {
    pub methods: Vec<MethodSummary>,
}

impl McSummary {
    pub fn for_method(&self, method: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == method)
    }
}

/// Runs one estimator on one dataset. The PD search is anchored at OLS when
/// no explicit configuration is given; if OLS itself fails, a coarse lattice
/// seeds the search instead.
fn run_method(
    data: &crate::datagen::Dataset,
    method: Method,
    objective: &ObjectiveSpec,
    search: &Option<SearchConfig>,
    rep_seed: u64,
) -> Result<EstimateReport> {
    match method {
        Method::Ols => ols(data),
        Method::C3 => iv_estimate(data, &IvSpec::c3()),
        Method::C4 => iv_estimate(data, &IvSpec::c4()),
        Method::Pd => {
            let cfg = match search {
                Some(cfg) => cfg.clone(),
                None => {
                    let anchor = match ols(data) {
                        Ok(r) => r.b_hat,
                        Err(_) => {
                            let k = data.k();
                            let bounds = vec![(-3.0, 3.0); k];
                            grid_refine(data, objective, &bounds, 7)?
                        }
                    };
                    SearchConfig::anchored_at(&anchor, rep_seed)
                }
            };
            maximize(data, objective, &cfg)
        }
    }
}

/// Runs the full study: `reps` datasets (seed derived per replication), all
/// methods on each, summary statistics per method and coefficient.
pub fn run_study(spec: &McStudySpec) -> Result<(McSummary, Vec<RepRecord>)> {
    spec.validate()?;
    let k = spec.design.k;

    let records: Vec<Vec<RepRecord>> = (0..spec.reps)
        .into_par_iter()
        .map(|rep| {
            let seed = derive_seed(spec.master_seed, rep as u64);
            let mut design = spec.design.clone();
            design.seed = seed;
            let mut out = Vec::with_capacity(spec.methods.len());
            match gen_dataset(&design) {
                Ok(data) => {
                    for &method in &spec.methods {
                        let outcome =
                            run_method(&data, method, &spec.objective, &spec.search, seed)
                                .map_err(|e| e.to_string());
                        out.push(RepRecord { rep, seed, method, outcome });
                    }
                }
                Err(e) => {
                    let msg = e.to_string();
                    for &method in &spec.methods {
                        out.push(RepRecord {
                            rep,
                            seed,
                            method,
                            outcome: Err(msg.clone()),
                        });
                    }
                }
            }
            out
        })
        .collect();
    let records: Vec<RepRecord> = records.into_iter().flatten().collect();

    let methods = spec
        .methods
        .iter()
        .map(|&method| summarize_method(&records, method, spec.reps, k))
        .collect();

    Ok((McSummary { methods }, records))
}

fn summarize_method(records: &[RepRecord], method: Method, reps: usize, k: usize) -> MethodSummary {
    let ok: Vec<&EstimateReport> = records
        .iter()
        .filter(|r| r.method == method)
        .filter_map(|r| r.outcome.as_ref().ok())
        .collect();
    let failures = reps - ok.len();
    let coefs = if ok.is_empty() {
        Vec::new()
    } else {
        (0..k)
            .map(|coef| {
                let vals: Vec<f64> = ok.iter().map(|r| r.b_hat[coef]).collect();
                CoefStats {
                    mean: mean(&vals),
                    sd: sample_sd(&vals),
                    q05: quantile(&vals, 0.05),
                    q50: quantile(&vals, 0.50),
                    q95: quantile(&vals, 0.95),
                }
            })
            .collect()
    };
    MethodSummary { method, reps, failures, coefs }
}

/// One cell of the comparison table: a design crossed with the presence of
/// measurement error.
#[derive(Debug, Clone)]
pub struct TableCell {
    pub design: PaperDesign,
    pub with_meas_error: bool,
    pub summary: McSummary,
    pub records: Vec<RepRecord>,
}

/// Runs the 3 designs x {no error, N(0,1) error} grid with all four
/// estimators, the layout of the paper-style comparison table.
pub fn run_table1(
    reps: usize,
    n_obs: usize,
    objective: &ObjectiveSpec,
    master_seed: u64,
) -> Result<Vec<TableCell>> {
    let designs = [PaperDesign::Beta12, PaperDesign::ChiSq5, PaperDesign::T5];
    let mut cells = Vec::with_capacity(6);
    for (d, &design) in designs.iter().enumerate() {
        for (e, &with_err) in [false, true].iter().enumerate() {
            let cell_seed = derive_seed(master_seed, (d * 2 + e) as u64);
            let spec = McStudySpec {
                design: paper_design(design, with_err, n_obs, cell_seed),
                reps,
                methods: vec![Method::Pd, Method::C3, Method::C4, Method::Ols],
                objective: objective.clone(),
                search: None,
                master_seed: cell_seed,
            };
            let (summary, records) = run_study(&spec)?;
            cells.push(TableCell {
                design,
                with_meas_error: with_err,
                summary,
                records,
            });
        }
    }
    Ok(cells)
}

/// RMSE of the first coefficient about its truth, per sample size and method.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub n_obs: usize,
    pub per_method: Vec<(Method, f64, usize)>,
}

/// Root-N consistency check: reruns the study at each sample size and
/// reports RMSE(b1). For a root-N consistent estimator the RMSE ratio
/// between N and 4N sits near 2.
pub fn consistency_sweep(
    design: &DesignSpec,
    n_values: &[usize],
    reps: usize,
    methods: &[Method],
    objective: &ObjectiveSpec,
    master_seed: u64,
) -> Result<Vec<SweepRow>> {
    if n_values.len() < 2 || n_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(EivError::Config(
            "n_values must be ascending with at least two entries".into(),
        ));
    }
    let beta1 = design.beta_true[0];
    let mut rows = Vec::with_capacity(n_values.len());
    for (i, &n) in n_values.iter().enumerate() {
        let mut d = design.clone();
        d.n_obs = n;
        let spec = McStudySpec {
            design: d,
            reps,
            methods: methods.to_vec(),
            objective: objective.clone(),
            search: None,
            master_seed: derive_seed(master_seed, i as u64),
        };
        let (_, records) = run_study(&spec)?;
        let per_method = methods
            .iter()
            .map(|&method| {
                let est: Vec<f64> = records
                    .iter()
                    .filter(|r| r.method == method)
                    .filter_map(|r| r.outcome.as_ref().ok().map(|rep| rep.b_hat[0]))
                    .collect();
                let failures = reps - est.len();
                let rmse = if est.is_empty() {
                    f64::NAN
                } else {
                    (est.iter().map(|b| (b - beta1) * (b - beta1)).sum::<f64>()
                        / est.len() as f64)
                        .sqrt()
                };
                (method, rmse, failures)
            })
            .collect();
        rows.push(SweepRow { n_obs: n, per_method });
    }
    Ok(rows)
}
