//! Derivative-free maximization of the sample objective over a compact box.
//!
//! A simplex (Nelder-Mead) local search runs from several starts; the best
//! terminal point wins. Starts default to the OLS estimate, axis-perturbed
//! copies, and one seeded random point, since the objective can be multimodal
//! at small N.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::datagen::Dataset;
use crate::error::{EivError, Result};
use crate::objective::{q_hat, ObjectiveSpec};

/// Estimator identity carried through reports and CSV output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Pd,
    Ols,
    C3,
    C4,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Pd => "PD",
            Method::Ols => "OLS",
            Method::C3 => "C3",
            Method::C4 => "C4",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pd" => Ok(Method::Pd),
            "ols" => Ok(Method::Ols),
            "c3" => Ok(Method::C3),
            "c4" => Ok(Method::C4),
            other => Err(EivError::Config(format!("unknown method '{other}'"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Search box, starts, and termination tolerances.
#[derive(Debug, Clone)]
pub struct SearchConfig {
    /// Per-axis (lo, hi) defining the compact box B.
    pub bounds: Vec<(f64, f64)>,
    pub starts: Vec<Vec<f64>>,
    /// Simplex diameter below which a start terminates.
    pub tol_x: f64,
    /// Objective spread below which a start terminates; also the flatness
    /// threshold for the non-identification flag.
    pub tol_f: f64,
    pub max_iter: usize,
    /// Seeds the random start and the flatness probe set.
    pub seed: u64,
}

impl SearchConfig {
    /// Default configuration anchored at an estimate (usually OLS): box
    /// [a - 5|a| - 1, a + 5|a| + 1] per axis, starts at the anchor, the
    /// 2K axis-perturbed copies (+/- 0.5), and one random interior point.
    pub fn anchored_at(anchor: &[f64], seed: u64) -> Self {
        let k = anchor.len();
        let bounds: Vec<(f64, f64)> = anchor
            .iter()
            .map(|a| (a - 5.0 * a.abs() - 1.0, a + 5.0 * a.abs() + 1.0))
            .collect();
        let mut starts = Vec::with_capacity(2 * k + 2);
        starts.push(anchor.to_vec());
        for axis in 0..k {
            for step in [0.5, -0.5] {
                let mut s = anchor.to_vec();
                s[axis] = (s[axis] + step).clamp(bounds[axis].0, bounds[axis].1);
                starts.push(s);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let random: Vec<f64> = bounds
            .iter()
            .map(|&(lo, hi)| rng.random_range(lo..hi))
            .collect();
        starts.push(random);
        SearchConfig {
            bounds,
            starts,
            tol_x: 1e-6,
            tol_f: 1e-10,
            max_iter: 2000,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bounds.is_empty() {
            return Err(EivError::Config("empty search bounds".into()));
        }
        for &(lo, hi) in &self.bounds {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(EivError::Config(format!("bad bounds ({lo}, {hi})")));
            }
        }
        if self.starts.is_empty() {
            return Err(EivError::Config("no optimizer starts".into()));
        }
        for s in &self.starts {
            if s.len() != self.bounds.len() {
                return Err(EivError::Config("start dimension mismatch".into()));
            }
            for (v, &(lo, hi)) in s.iter().zip(&self.bounds) {
                if !(*v >= lo && *v <= hi) {
                    return Err(EivError::Config(format!(
                        "start {v} outside bounds ({lo}, {hi})"
                    )));
                }
            }
        }
        if !(self.tol_x > 0.0 && self.tol_f > 0.0) || self.max_iter == 0 {
            return Err(EivError::Config("bad termination settings".into()));
        }
        Ok(())
    }
}

/// Result of one estimator run.
#[derive(Debug, Clone)]
pub struct EstimateReport {
    pub method: Method,
    pub b_hat: Vec<f64>,
    pub objective_at_opt: f64,
    pub n_evals: usize,
    pub converged: bool,
    pub start_used: Vec<f64>,
    /// Objective spread across terminal points and probes fell below tol_f:
    /// suspected non-identification (jointly normal latents, or a degenerate
    /// column).
    pub flat_objective: bool,
    pub diagnostics: Vec<(String, String)>,
}

struct StartOutcome {
    x: Vec<f64>,
    f: f64,
    evals: usize,
    converged_x: bool,
    converged_f: bool,
    start: Vec<f64>,
}

fn reflect_into_bounds(x: f64, lo: f64, hi: f64) -> f64 {
    let mut v = x;
    for _ in 0..16 {
        if v < lo {
            v = 2.0 * lo - v;
        } else if v > hi {
            v = 2.0 * hi - v;
        } else {
            return v;
        }
    }
    v.clamp(lo, hi)
}

fn clamp_point(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, &(lo, hi)) in x.iter_mut().zip(bounds) {
        *v = reflect_into_bounds(*v, lo, hi);
    }
}

fn diameter(simplex: &[Vec<f64>]) -> f64 {
    let best = &simplex[0];
    simplex[1..]
        .iter()
        .map(|v| {
            v.iter()
                .zip(best)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max)
}

/// Nelder-Mead ascent from one start. Returns None if the start itself is in
/// a degenerate region or evaluates non-finite.
fn nelder_mead_max<F: Fn(&[f64]) -> f64>(
    f: &F,
    start: &[f64],
    bounds: &[(f64, f64)],
    tol_x: f64,
    tol_f: f64,
    max_iter: usize,
) -> Option<StartOutcome> {
    let n = start.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64]| -> f64 {
        evals += 1;
        f(x)
    };

    let f0 = eval(start);
    if !f0.is_finite() {
        return None;
    }

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut values: Vec<f64> = Vec::with_capacity(n + 1);
    simplex.push(start.to_vec());
    values.push(f0);
    for axis in 0..n {
        let mut v = start.to_vec();
        let span = bounds[axis].1 - bounds[axis].0;
        let mut h = 0.1 * (1.0 + start[axis].abs());
        h = h.min(span / 4.0);
        if v[axis] + h > bounds[axis].1 {
            h = -h;
        }
        v[axis] += h;
        clamp_point(&mut v, bounds);
        let fv = eval(&v);
        if fv.is_nan() {
            return None;
        }
        simplex.push(v);
        values.push(fv);
    }

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut converged_x = false;
    let mut converged_f = false;

    for _ in 0..max_iter {
        // Sort descending: index 0 is the best vertex for a maximizer.
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap());
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        if diameter(&simplex) < tol_x {
            converged_x = true;
            break;
        }
        let spread = values[0] - values[n];
        if spread.is_finite() && spread.abs() < tol_f {
            converged_f = true;
            break;
        }

        // Centroid of all vertices but the worst.
        let mut centroid = vec![0.0; n];
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x;
            }
        }
        for c in centroid.iter_mut() {
            *c /= n as f64;
        }

        let worst = simplex[n].clone();
        let mut reflected: Vec<f64> = centroid
            .iter()
            .zip(&worst)
            .map(|(c, w)| c + alpha * (c - w))
            .collect();
        clamp_point(&mut reflected, bounds);
        let f_ref = eval(&reflected);
        if f_ref.is_nan() {
            return None;
        }

        if f_ref > values[0] {
            // Try expanding past the reflection.
            let mut expanded: Vec<f64> = centroid
                .iter()
                .zip(&reflected)
                .map(|(c, r)| c + gamma * (r - c))
                .collect();
            clamp_point(&mut expanded, bounds);
            let f_exp = eval(&expanded);
            if f_exp > f_ref {
                simplex[n] = expanded;
                values[n] = f_exp;
            } else {
                simplex[n] = reflected;
                values[n] = f_ref;
            }
        } else if f_ref > values[n - 1] {
            simplex[n] = reflected;
            values[n] = f_ref;
        } else {
            // Contract toward the centroid, outside or inside.
            let (anchor, f_anchor) = if f_ref > values[n] {
                (reflected.clone(), f_ref)
            } else {
                (worst.clone(), values[n])
            };
            let mut contracted: Vec<f64> = centroid
                .iter()
                .zip(&anchor)
                .map(|(c, a)| c + rho * (a - c))
                .collect();
            clamp_point(&mut contracted, bounds);
            let f_con = eval(&contracted);
            if f_con.is_nan() {
                return None;
            }
            if f_con > f_anchor {
                simplex[n] = contracted;
                values[n] = f_con;
            } else {
                // Shrink everything toward the best vertex.
                for i in 1..=n {
                    let best = simplex[0].clone();
                    for (x, b) in simplex[i].iter_mut().zip(&best) {
                        *x = b + sigma * (*x - b);
                    }
                    clamp_point(&mut simplex[i], bounds);
                    values[i] = eval(&simplex[i]);
                    if values[i].is_nan() {
                        return None;
                    }
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..=n).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap());
    let best = order[0];
    if !values[best].is_finite() {
        return None;
    }
    Some(StartOutcome {
        x: simplex[best].clone(),
        f: values[best],
        evals,
        converged_x,
        converged_f,
        start: start.to_vec(),
    })
}

fn lexicographic_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

/// Multistart driver over an arbitrary objective. Starts run independently
/// (in parallel); the reduction picks the maximum objective with a
/// lexicographic tie-break on the terminal point so reruns are identical.
fn multistart_maximize<F>(f: F, cfg: &SearchConfig) -> Result<EstimateReport>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    cfg.validate()?;
    let outcomes: Vec<Option<StartOutcome>> = cfg
        .starts
        .par_iter()
        .map(|start| nelder_mead_max(&f, start, &cfg.bounds, cfg.tol_x, cfg.tol_f, cfg.max_iter))
        .collect();

    let n_evals: usize = outcomes
        .iter()
        .flatten()
        .map(|o| o.evals)
        .sum::<usize>()
        + outcomes.iter().filter(|o| o.is_none()).count();

    let mut best: Option<&StartOutcome> = None;
    for o in outcomes.iter().flatten() {
        best = match best {
            None => Some(o),
            Some(b) => {
                if o.f > b.f || (o.f == b.f && lexicographic_less(&o.x, &b.x)) {
                    Some(o)
                } else {
                    Some(b)
                }
            }
        };
    }
    let best = best.ok_or_else(|| {
        EivError::OptimizationFailed("all starts degenerate or non-finite".into())
    })?;

    // Flatness probe: terminal objectives plus a seeded probe set. A spread
    // below tol_f across all of them suggests the objective carries no
    // identifying information.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xF1A7_0B7E_C71D_5EED);
    let k = cfg.bounds.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for o in outcomes.iter().flatten() {
        lo = lo.min(o.f);
        hi = hi.max(o.f);
    }
    for _ in 0..(2 * k + 3) {
        let p: Vec<f64> = cfg
            .bounds
            .iter()
            .map(|&(a, b)| rng.random_range(a..b))
            .collect();
        let v = f(&p);
        if v.is_finite() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let flat_objective = (hi - lo).abs() < cfg.tol_f;

    Ok(EstimateReport {
        method: Method::Pd,
        b_hat: best.x.clone(),
        objective_at_opt: best.f,
        n_evals,
        converged: best.converged_x || best.converged_f,
        start_used: best.start.clone(),
        flat_objective,
        diagnostics: vec![
            ("converged_x".into(), best.converged_x.to_string()),
            ("converged_f".into(), best.converged_f.to_string()),
            (
                "starts_failed".into(),
                outcomes.iter().filter(|o| o.is_none()).count().to_string(),
            ),
        ],
    })
}

/// The PD estimator: argmax of Q_N over the box, by multistart Nelder-Mead.
/// Degenerate regions (GridDegenerate) evaluate as -inf; a start whose whole
/// neighborhood is degenerate is dropped, and the run fails only when every
/// start drops.
pub fn maximize(data: &Dataset, spec: &ObjectiveSpec, cfg: &SearchConfig) -> Result<EstimateReport> {
    spec.validate()?;
    if data.n() < data.k() + 2 {
        return Err(EivError::InsufficientData(format!(
            "N = {} < K + 2 = {}",
            data.n(),
            data.k() + 2
        )));
    }
    let objective = |b: &[f64]| -> f64 {
        match q_hat(data, b, spec) {
            Ok(v) => v,
            Err(EivError::GridDegenerate { .. }) => f64::NEG_INFINITY,
            Err(_) => f64::NAN,
        }
    };
    multistart_maximize(objective, cfg)
}

/// Exhaustive evaluation on a per-axis lattice over `bounds`; returns the
/// best node. Used to seed `maximize` when no OLS start makes sense.
pub fn grid_refine(
    data: &Dataset,
    spec: &ObjectiveSpec,
    bounds: &[(f64, f64)],
    per_axis: usize,
) -> Result<Vec<f64>> {
    let objective = |b: &[f64]| -> f64 {
        match q_hat(data, b, spec) {
            Ok(v) => v,
            Err(_) => f64::NEG_INFINITY,
        }
    };
    lattice_best(objective, bounds, per_axis)
}

fn lattice_best<F: Fn(&[f64]) -> f64>(
    f: F,
    bounds: &[(f64, f64)],
    per_axis: usize,
) -> Result<Vec<f64>> {
    if per_axis < 3 {
        return Err(EivError::Config("per_axis must be >= 3".into()));
    }
    let k = bounds.len();
    let axis_nodes: Vec<Vec<f64>> = bounds
        .iter()
        .map(|&(lo, hi)| {
            (0..per_axis)
                .map(|i| lo + (hi - lo) * i as f64 / (per_axis - 1) as f64)
                .collect()
        })
        .collect();
    let total = per_axis.pow(k as u32);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for flat in 0..total {
        let mut idx = flat;
        let mut point = Vec::with_capacity(k);
        for axis_node in &axis_nodes {
            point.push(axis_node[idx % per_axis]);
            idx /= per_axis;
        }
        let v = f(&point);
        if !v.is_finite() {
            continue;
        }
        best = match best {
            None => Some((v, point)),
            Some((bv, bp)) => {
                if v > bv || (v == bv && lexicographic_less(&point, &bp)) {
                    Some((v, point))
                } else {
                    Some((bv, bp))
                }
            }
        };
    }
    best.map(|(_, p)| p)
        .ok_or_else(|| EivError::OptimizationFailed("every lattice node degenerate".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_dataset, paper_design, Dataset, PaperDesign};
    use nalgebra::{DMatrix, DVector};

    fn stub_cfg(k: usize) -> SearchConfig {
        SearchConfig {
            bounds: vec![(-3.0, 3.0); k],
            starts: vec![vec![0.0; k], vec![2.0; k]],
            tol_x: 1e-8,
            tol_f: 1e-14,
            max_iter: 2000,
            seed: 9,
        }
    }

    #[test]
    fn quadratic_stub_converges_to_known_optimum() {
        let f = |b: &[f64]| -((b[0] - 1.0).powi(2) + (b[1] - 1.0).powi(2));
        let report = multistart_maximize(f, &stub_cfg(2)).unwrap();
        assert!(report.converged);
        assert!((report.b_hat[0] - 1.0).abs() < 1e-6);
        assert!((report.b_hat[1] - 1.0).abs() < 1e-6);
        assert!(report.objective_at_opt > -1e-10);
    }

    #[test]
    fn optimum_respects_bounds() {
        // True optimum at 5, box caps at 2: the maximizer must stop at the wall.
        let f = |b: &[f64]| -(b[0] - 5.0).powi(2);
        let cfg = SearchConfig {
            bounds: vec![(-2.0, 2.0)],
            starts: vec![vec![0.0]],
            tol_x: 1e-8,
            tol_f: 1e-14,
            max_iter: 2000,
            seed: 1,
        };
        let report = multistart_maximize(f, &cfg).unwrap();
        assert!(report.b_hat[0] <= 2.0 + 1e-12);
        assert!((report.b_hat[0] - 2.0).abs() < 1e-4, "b = {}", report.b_hat[0]);
    }

    #[test]
    fn best_start_wins() {
        // Bimodal: peaks at -2 (height 1) and +2 (height 2).
        let f = |b: &[f64]| {
            let p1 = (-((b[0] + 2.0).powi(2)) * 4.0).exp();
            let p2 = 2.0 * (-((b[0] - 2.0).powi(2)) * 4.0).exp();
            p1 + p2
        };
        let cfg = SearchConfig {
            bounds: vec![(-4.0, 4.0)],
            starts: vec![vec![-2.1], vec![1.9]],
            tol_x: 1e-9,
            tol_f: 1e-15,
            max_iter: 4000,
            seed: 2,
        };
        let report = multistart_maximize(f, &cfg).unwrap();
        assert!((report.b_hat[0] - 2.0).abs() < 1e-5);
        // objective at optimum dominates every start value
        for s in &cfg.starts {
            assert!(report.objective_at_opt >= f(s));
        }
    }

    #[test]
    fn noiseless_data_recovers_truth_with_zero_objective() {
        let mut spec = paper_design(PaperDesign::ChiSq5, false, 500, 10);
        spec.eps_law = None;
        spec.alpha_x = vec![0.0, 0.0];
        spec.alpha_y = 0.0;
        let data = gen_dataset(&spec).unwrap();
        let cfg = SearchConfig {
            bounds: vec![(0.0, 2.0), (0.0, 2.0)],
            starts: vec![vec![1.0, 1.0], vec![0.5, 1.5]],
            tol_x: 1e-7,
            tol_f: 1e-12,
            max_iter: 2000,
            seed: 3,
        };
        let report = maximize(&data, &ObjectiveSpec::default(), &cfg).unwrap();
        assert!((report.b_hat[0] - 1.0).abs() < 1e-4, "b1 = {}", report.b_hat[0]);
        assert!((report.b_hat[1] - 1.0).abs() < 1e-4, "b2 = {}", report.b_hat[1]);
        assert!(report.objective_at_opt.abs() < 1e-12);
    }

    #[test]
    fn anchored_config_shape() {
        let cfg = SearchConfig::anchored_at(&[0.75, 0.75], 42);
        assert_eq!(cfg.starts.len(), 2 * 2 + 2);
        cfg.validate().unwrap();
        assert_eq!(cfg.bounds[0], (0.75 - 3.75 - 1.0, 0.75 + 3.75 + 1.0));
        // deterministic
        let cfg2 = SearchConfig::anchored_at(&[0.75, 0.75], 42);
        assert_eq!(cfg.starts, cfg2.starts);
    }

    #[test]
    fn flat_objective_flag_fires_on_constant_regressor() {
        // K = 1 with a constant regressor: every residual vanishes
        // identically, the objective is flat, and the flag must fire.
        let n = 50;
        let x = DMatrix::from_element(n, 1, 3.0);
        let y = DVector::from_fn(n, |i, _| (i as f64 * 0.7).sin());
        let data = Dataset::from_observables(x, y).unwrap();
        let cfg = SearchConfig {
            bounds: vec![(0.0, 2.0)],
            starts: vec![vec![0.5], vec![1.5]],
            tol_x: 1e-7,
            tol_f: 1e-10,
            max_iter: 500,
            seed: 4,
        };
        let report = maximize(&data, &ObjectiveSpec::default(), &cfg).unwrap();
        assert!(report.flat_objective);
    }

    #[test]
    fn lattice_returns_nearest_node_to_stub_optimum() {
        let c = [0.9, -0.4];
        let f = |b: &[f64]| -((b[0] - c[0]).powi(2) + (b[1] - c[1]).powi(2));
        let best = lattice_best(f, &[(-2.0, 2.0), (-2.0, 2.0)], 5).unwrap();
        // 5 nodes: -2,-1,0,1,2; nearest to (0.9,-0.4) is (1, 0)
        assert_eq!(best, vec![1.0, 0.0]);
    }

    #[test]
    fn lattice_hits_truth_on_noiseless_lattice_point() {
        let mut spec = paper_design(PaperDesign::ChiSq5, false, 400, 11);
        spec.eps_law = None;
        spec.alpha_x = vec![0.0, 0.0];
        spec.alpha_y = 0.0;
        let data = gen_dataset(&spec).unwrap();
        // beta = (1,1) is a lattice node of [0,2] with 3 per axis
        let best = grid_refine(
            &data,
            &ObjectiveSpec::default(),
            &[(0.0, 2.0), (0.0, 2.0)],
            3,
        )
        .unwrap();
        assert_eq!(best, vec![1.0, 1.0]);
    }

    #[test]
    fn deterministic_reports() {
        let spec = paper_design(PaperDesign::Beta12, true, 400, 55);
        let data = gen_dataset(&spec).unwrap();
        let cfg = SearchConfig::anchored_at(&[0.75, 0.75], 7);
        let ospec = ObjectiveSpec::default();
        let a = maximize(&data, &ospec, &cfg).unwrap();
        let b = maximize(&data, &ospec, &cfg).unwrap();
        assert_eq!(a.b_hat, b.b_hat);
        assert_eq!(a.objective_at_opt, b.objective_at_opt);
        assert_eq!(a.n_evals, b.n_evals);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = stub_cfg(1);
        cfg.bounds = vec![(1.0, 1.0)];
        assert!(cfg.validate().is_err());

        let mut cfg = stub_cfg(1);
        cfg.starts = vec![vec![10.0]];
        assert!(cfg.validate().is_err());

        let mut cfg = stub_cfg(1);
        cfg.starts.clear();
        assert!(cfg.validate().is_err());
    }
}
