//! The sample objective Q_N(b): squared residuals cov + pd_hat summed over
//! pairs and integrated over u against a normalized weight density.

use std::collections::HashMap;

use num_complex::Complex64;

use crate::datagen::Dataset;
use crate::ecf::{pd_hat, residual_pairs, sample_cov, weighted_sums, Pair};
use crate::error::{EivError, Result};
use crate::numeric::KahanSum;

/// Weight density over the frequency variable u. Both kinds are symmetric,
/// have positive mass on every neighborhood of 0, and are normalized so the
/// density integrates to one over the support [-u_max, u_max].
#[derive(Debug, Clone, PartialEq)]
pub enum WeightKind {
    UniformSymmetric { u_max: f64 },
    TruncGaussian { sigma: f64, u_max: f64 },
}

impl WeightKind {
    pub fn u_max(&self) -> f64 {
        match *self {
            WeightKind::UniformSymmetric { u_max } => u_max,
            WeightKind::TruncGaussian { u_max, .. } => u_max,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            WeightKind::UniformSymmetric { u_max } => {
                if !(u_max > 0.0) {
                    return Err(EivError::Config(
                        "weight support empty: u_max must be > 0".into(),
                    ));
                }
            }
            WeightKind::TruncGaussian { sigma, u_max } => {
                if !(u_max > 0.0) {
                    return Err(EivError::Config(
                        "weight support empty: u_max must be > 0".into(),
                    ));
                }
                if !(sigma > 0.0) {
                    return Err(EivError::Config("sigma must be > 0".into()));
                }
            }
        }
        Ok(())
    }

    /// Normalized density at u (zero outside the support).
    pub fn density(&self, u: f64) -> f64 {
        match *self {
            WeightKind::UniformSymmetric { u_max } => {
                if u.abs() <= u_max {
                    1.0 / (2.0 * u_max)
                } else {
                    0.0
                }
            }
            WeightKind::TruncGaussian { sigma, u_max } => {
                if u.abs() > u_max {
                    return 0.0;
                }
                let z = u / sigma;
                let phi = (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
                // Mass of N(0, sigma^2) on [-u_max, u_max]: 2 Phi(u_max/sigma) - 1.
                let mass = libm::erf(u_max / (sigma * std::f64::consts::SQRT_2));
                phi / mass
            }
        }
    }
}

/// Weight function: density kind plus optional nonnegative per-pair weights
/// (all 1 when absent; the paper's objective drops the pair subscripts).
#[derive(Debug, Clone)]
pub struct WeightSpec {
    pub kind: WeightKind,
    pub per_pair_weights: Option<HashMap<Pair, f64>>,
}

impl WeightSpec {
    pub fn uniform(u_max: f64) -> Self {
        WeightSpec {
            kind: WeightKind::UniformSymmetric { u_max },
            per_pair_weights: None,
        }
    }

    pub fn pair_weight(&self, pair: Pair) -> f64 {
        self.per_pair_weights
            .as_ref()
            .and_then(|m| m.get(&pair).copied())
            .unwrap_or(1.0)
    }

    fn validate(&self) -> Result<()> {
        self.kind.validate()?;
        if let Some(map) = &self.per_pair_weights {
            if map.values().any(|w| !(*w >= 0.0)) {
                return Err(EivError::Config("per-pair weights must be >= 0".into()));
            }
        }
        Ok(())
    }
}

/// Everything needed to evaluate Q_N: weight function, grid size, and the
/// |s0| floor below which a node is masked.
#[derive(Debug, Clone)]
pub struct ObjectiveSpec {
    pub weight: WeightSpec,
    /// Number of quadrature nodes; odd so the grid contains 0.
    pub grid_size: usize,
    pub denom_floor: f64,
}

impl Default for ObjectiveSpec {
    fn default() -> Self {
        ObjectiveSpec {
            weight: WeightSpec::uniform(1.0),
            grid_size: 41,
            denom_floor: 0.05,
        }
    }
}

impl ObjectiveSpec {
    pub fn validate(&self) -> Result<()> {
        self.weight.validate()?;
        if self.grid_size < 5 || self.grid_size % 2 == 0 {
            return Err(EivError::Config(format!(
                "grid_size must be odd and >= 5, got {}",
                self.grid_size
            )));
        }
        if !(self.denom_floor > 0.0 && self.denom_floor <= 0.5) {
            return Err(EivError::Config(format!(
                "denom_floor must lie in (0, 0.5], got {}",
                self.denom_floor
            )));
        }
        Ok(())
    }
}

/// Trapezoid nodes and weights on [-u_max, u_max], multiplied by the weight
/// density and normalized to sum to exactly one. Nodes and weights are built
/// by mirroring the positive half so symmetry holds bit-for-bit.
#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub denom_floor: f64,
    pub effective_mask: Vec<bool>,
}

impl QuadratureGrid {
    pub fn build(spec: &ObjectiveSpec) -> Result<Self> {
        spec.validate()?;
        let m = spec.grid_size;
        let u_max = spec.weight.kind.u_max();
        let half = m / 2;
        let step = u_max / half as f64;

        let mut nodes = vec![0.0f64; m];
        let mut raw = vec![0.0f64; m];
        for i in 0..=half {
            let u = if i == half { u_max } else { i as f64 * step };
            let trap = if i == half { step / 2.0 } else { step };
            // Node 0 is interior; endpoints get the half trapezoid weight.
            let w = trap * spec.weight.kind.density(u);
            nodes[half + i] = u;
            nodes[half - i] = -u;
            raw[half + i] = w;
            raw[half - i] = w;
        }
        nodes[half] = 0.0;

        let total: f64 = raw.iter().sum();
        if !(total > 0.0) {
            return Err(EivError::Config("quadrature weights sum to zero".into()));
        }
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        Ok(QuadratureGrid {
            nodes,
            weights,
            denom_floor: spec.denom_floor,
            effective_mask: vec![true; m],
        })
    }
}

/// Residuals cov + pd_hat at one (b, u) for every pair: the K(K-1)/2
/// regressor pairs followed by the K outcome pairs.
pub fn residuals_at(
    data: &Dataset,
    b: &[f64],
    u: f64,
    denom_floor: f64,
) -> Result<Vec<(Pair, Complex64)>> {
    let covs = pair_covariances(data)?;
    residuals_with_covs(data, b, u, denom_floor, &covs)
}

/// Covariances for all residual pairs; b- and u-independent, so callers that
/// sweep (b, u) compute them once.
pub fn pair_covariances(data: &Dataset) -> Result<Vec<(Pair, f64)>> {
    residual_pairs(data.k())
        .into_iter()
        .map(|p| sample_cov(data, p).map(|c| (p, c)))
        .collect()
}

fn residuals_with_covs(
    data: &Dataset,
    b: &[f64],
    u: f64,
    denom_floor: f64,
    covs: &[(Pair, f64)],
) -> Result<Vec<(Pair, Complex64)>> {
    let sums = weighted_sums(data, b, u);
    covs.iter()
        .map(|&(pair, cov)| {
            let pd = pd_hat(&sums, pair, denom_floor)?;
            Ok((pair, pd.value + Complex64::new(cov, 0.0)))
        })
        .collect()
}

/// Weighted sum of squared residual magnitudes at one node, or None when the
/// node is masked by the denominator floor.
fn node_pair_sum(
    data: &Dataset,
    b: &[f64],
    u: f64,
    spec: &ObjectiveSpec,
    covs: &[(Pair, f64)],
) -> Result<Option<f64>> {
    match residuals_with_covs(data, b, u, spec.denom_floor, covs) {
        Ok(residuals) => {
            let mut acc = KahanSum::new();
            for (pair, r) in residuals {
                acc.add(spec.weight.pair_weight(pair) * r.norm_sqr());
            }
            Ok(Some(acc.value()))
        }
        Err(EivError::DenominatorUnderflow { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Combines per-node pair sums with the grid: masks None nodes, renormalizes
/// the surviving weights to sum to one, and returns minus the weighted sum.
/// Errors with `GridDegenerate` when more than half the nodes are masked.
pub(crate) fn assemble_quadrature(grid: &QuadratureGrid, pair_sums: &[Option<f64>]) -> Result<f64> {
    assert_eq!(pair_sums.len(), grid.nodes.len());
    let total = grid.nodes.len();
    let masked = pair_sums.iter().filter(|s| s.is_none()).count();
    if masked * 2 > total {
        return Err(EivError::GridDegenerate { masked, total });
    }
    let mut weight_acc = KahanSum::new();
    for (w, s) in grid.weights.iter().zip(pair_sums) {
        if s.is_some() {
            weight_acc.add(*w);
        }
    }
    let live_weight = weight_acc.value();
    let mut acc = KahanSum::new();
    for (w, s) in grid.weights.iter().zip(pair_sums) {
        if let Some(v) = s {
            acc.add(w / live_weight * v);
        }
    }
    Ok(-acc.value())
}

/// The sample objective Q_N(b): always <= 0, and 0 exactly when every
/// residual vanishes on the grid.
pub fn q_hat(data: &Dataset, b: &[f64], spec: &ObjectiveSpec) -> Result<f64> {
    let grid = QuadratureGrid::build(spec)?;
    let covs = pair_covariances(data)?;
    let pair_sums: Vec<Option<f64>> = grid
        .nodes
        .iter()
        .map(|&u| node_pair_sum(data, b, u, spec, &covs))
        .collect::<Result<_>>()?;
    assemble_quadrature(&grid, &pair_sums)
}

/// One residual-curve sample: the residual for one pair at one node.
#[derive(Debug, Clone, Copy)]
pub struct ResidualPoint {
    pub u: f64,
    pub pair: Pair,
    pub residual: Complex64,
    pub denom_mag: f64,
}

/// Residuals over the whole grid at a fixed b, for CSV export. Nodes masked
/// by the denominator floor are skipped.
pub fn residual_curve(data: &Dataset, b: &[f64], spec: &ObjectiveSpec) -> Result<Vec<ResidualPoint>> {
    let grid = QuadratureGrid::build(spec)?;
    let covs = pair_covariances(data)?;
    let mut out = Vec::new();
    for &u in &grid.nodes {
        let sums = weighted_sums(data, b, u);
        let denom_mag = sums.s0.norm();
        if denom_mag < spec.denom_floor {
            continue;
        }
        for &(pair, cov) in &covs {
            let pd = pd_hat(&sums, pair, spec.denom_floor)?;
            out.push(ResidualPoint {
                u,
                pair,
                residual: pd.value + Complex64::new(cov, 0.0),
                denom_mag,
            });
        }
    }
    Ok(out)
}

/// Evaluates Q_N along one coordinate: b = b_base + delta * e_axis.
pub fn profile_curve(
    data: &Dataset,
    b_base: &[f64],
    axis: usize,
    deltas: &[f64],
    spec: &ObjectiveSpec,
) -> Result<Vec<(f64, f64)>> {
    if axis >= b_base.len() {
        return Err(EivError::Config(format!(
            "profile axis {axis} out of range for K = {}",
            b_base.len()
        )));
    }
    let mut out = Vec::with_capacity(deltas.len());
    for &d in deltas {
        let mut b = b_base.to_vec();
        b[axis] += d;
        out.push((d, q_hat(data, &b, spec)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_dataset, paper_design, Dataset, PaperDesign};
    use crate::numeric::derive_seed;
    use nalgebra::{DMatrix, DVector};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn noiseless_zero_intercept(n: usize, seed: u64) -> Dataset {
        let mut spec = paper_design(PaperDesign::ChiSq5, false, n, seed);
        spec.eps_law = None;
        spec.alpha_x = vec![0.0, 0.0];
        spec.alpha_y = 0.0;
        gen_dataset(&spec).unwrap()
    }

    #[test]
    fn residuals_vanish_exactly_at_origin() {
        let spec = paper_design(PaperDesign::T5, true, 700, 13);
        let data = gen_dataset(&spec).unwrap();
        for (pair, r) in residuals_at(&data, &[0.4, 1.9], 0.0, 0.05).unwrap() {
            assert_eq!(r, Complex64::new(0.0, 0.0), "pair {pair}");
        }
    }

    #[test]
    fn noiseless_residuals_vanish_exactly_at_truth() {
        // Zero intercepts make the phase bit-exactly zero at b = beta, so the
        // hat-derivative collapses to minus the covariance at every u.
        let data = noiseless_zero_intercept(600, 2);
        for u in [0.0, 0.3, -0.7, 1.0] {
            for (pair, r) in residuals_at(&data, &[1.0, 1.0], u, 0.05).unwrap() {
                assert_eq!(r, Complex64::new(0.0, 0.0), "pair {pair} u {u}");
            }
        }
    }

    #[test]
    fn q_hat_zero_exactly_on_noiseless_data() {
        let data = noiseless_zero_intercept(600, 3);
        let q = q_hat(&data, &[1.0, 1.0], &ObjectiveSpec::default()).unwrap();
        assert_eq!(q, 0.0);
    }

    #[test]
    fn q_hat_near_zero_with_intercepts() {
        // With nonzero intercepts the constant phase rounds per-row, leaving
        // residuals at the machine-epsilon scale.
        let mut spec = paper_design(PaperDesign::ChiSq5, false, 600, 4);
        spec.eps_law = None;
        let data = gen_dataset(&spec).unwrap();
        let q = q_hat(&data, &[1.0, 1.0], &ObjectiveSpec::default()).unwrap();
        assert!(q <= 0.0 && q.abs() < 1e-28, "q = {q}");
    }

    #[test]
    fn node_contributions_even_in_u() {
        let spec = paper_design(PaperDesign::Beta12, true, 400, 8);
        let data = gen_dataset(&spec).unwrap();
        let ospec = ObjectiveSpec::default();
        let covs = pair_covariances(&data).unwrap();
        for u in [0.25, 0.6, 1.0] {
            let plus = node_pair_sum(&data, &[0.9, 1.1], u, &ospec, &covs).unwrap();
            let minus = node_pair_sum(&data, &[0.9, 1.1], -u, &ospec, &covs).unwrap();
            assert_eq!(plus, minus, "contribution not even at u = {u}");
        }
    }

    #[test]
    fn half_grid_doubling_matches_full_quadrature() {
        let spec = paper_design(PaperDesign::ChiSq5, true, 500, 21);
        let data = gen_dataset(&spec).unwrap();
        let ospec = ObjectiveSpec::default();
        let b = [1.2, 0.7];
        let q_full = q_hat(&data, &b, &ospec).unwrap();

        let grid = QuadratureGrid::build(&ospec).unwrap();
        let covs = pair_covariances(&data).unwrap();
        let half = grid.nodes.len() / 2;
        let mut acc = 0.0;
        for i in half..grid.nodes.len() {
            let v = node_pair_sum(&data, &b, grid.nodes[i], &ospec, &covs)
                .unwrap()
                .unwrap();
            let factor = if i == half { 1.0 } else { 2.0 };
            acc += factor * grid.weights[i] * v;
        }
        let q_half = -acc;
        let rel = (q_full - q_half).abs() / q_full.abs().max(1e-300);
        assert!(rel < 1e-12, "full {q_full} vs half {q_half}");
    }

    #[test]
    fn quadrature_weights_normalized() {
        for kind in [
            WeightKind::UniformSymmetric { u_max: 1.0 },
            WeightKind::TruncGaussian { sigma: 0.5, u_max: 1.0 },
        ] {
            let spec = ObjectiveSpec {
                weight: WeightSpec { kind, per_pair_weights: None },
                grid_size: 41,
                denom_floor: 0.05,
            };
            let grid = QuadratureGrid::build(&spec).unwrap();
            let sum: f64 = grid.weights.iter().sum();
            assert!((sum - 1.0).abs() < 1e-14);
            // symmetric bit-for-bit
            let m = grid.nodes.len();
            for i in 0..m {
                assert_eq!(grid.nodes[i], -grid.nodes[m - 1 - i]);
                assert_eq!(grid.weights[i], grid.weights[m - 1 - i]);
            }
        }
    }

    #[test]
    fn trunc_gaussian_density_integrates_to_one() {
        let kind = WeightKind::TruncGaussian { sigma: 0.4, u_max: 1.0 };
        // Fine trapezoid over the support.
        let m = 4001;
        let step = 2.0 / (m - 1) as f64;
        let mut sum = 0.0;
        for i in 0..m {
            let u = -1.0 + i as f64 * step;
            let w = if i == 0 || i == m - 1 { 0.5 } else { 1.0 };
            sum += w * step * kind.density(u);
        }
        assert!((sum - 1.0).abs() < 1e-6, "integral = {sum}");
    }

    #[test]
    fn unit_residual_stub_recovers_pair_count() {
        // With every residual forced to 1 + 0i and unit pair weights, the
        // objective must equal minus the number of pairs: this pins the
        // quadrature weight normalization.
        let spec = ObjectiveSpec::default();
        let grid = QuadratureGrid::build(&spec).unwrap();
        let n_pairs = 3.0; // K = 2
        let sums = vec![Some(n_pairs); grid.nodes.len()];
        let q = assemble_quadrature(&grid, &sums).unwrap();
        assert!((q + n_pairs).abs() < 1e-12, "q = {q}");
    }

    #[test]
    fn masked_nodes_renormalize() {
        let spec = ObjectiveSpec::default();
        let grid = QuadratureGrid::build(&spec).unwrap();
        let m = grid.nodes.len();
        // Mask a third of the nodes; constant contributions must still give
        // exactly minus the constant.
        let sums: Vec<Option<f64>> = (0..m)
            .map(|i| if i % 3 == 0 { None } else { Some(2.5) })
            .collect();
        let q = assemble_quadrature(&grid, &sums).unwrap();
        assert!((q + 2.5).abs() < 1e-12);
    }

    #[test]
    fn grid_degenerate_when_majority_masked() {
        let spec = ObjectiveSpec::default();
        let grid = QuadratureGrid::build(&spec).unwrap();
        let m = grid.nodes.len();
        let sums: Vec<Option<f64>> = (0..m).map(|i| if i == m / 2 { Some(1.0) } else { None }).collect();
        assert!(matches!(
            assemble_quadrature(&grid, &sums),
            Err(EivError::GridDegenerate { .. })
        ));
    }

    #[test]
    fn wide_scale_data_degenerates_grid() {
        // Phases spread over thousands of radians kill |s0| away from u = 0
        // (N large enough that the random-phase noise floor 1/sqrt(N) sits
        // well under the 0.05 mask).
        let n = 5_000;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let x = DMatrix::from_fn(n, 2, |_, _| 3000.0 * rng.random::<f64>());
        let y = DVector::from_fn(n, |_, _| 3000.0 * rng.random::<f64>());
        let data = Dataset::from_observables(x, y).unwrap();
        let err = q_hat(&data, &[1.0, 1.0], &ObjectiveSpec::default()).unwrap_err();
        assert!(matches!(err, EivError::GridDegenerate { .. }));
    }

    #[test]
    fn q_hat_location_invariant() {
        let spec = paper_design(PaperDesign::ChiSq5, true, 800, 15);
        let data = gen_dataset(&spec).unwrap();
        let shifted = Dataset::from_observables(
            data.x.map(|v| v + 4.0),
            data.y.map(|v| v - 9.0),
        )
        .unwrap();
        let ospec = ObjectiveSpec::default();
        let b = [0.8, 1.3];
        let qa = q_hat(&data, &b, &ospec).unwrap();
        let qb = q_hat(&shifted, &b, &ospec).unwrap();
        assert!(((qa - qb) / qa.abs().max(1e-300)).abs() < 1e-9, "{qa} vs {qb}");
    }

    #[test]
    fn refinement_stable() {
        // Doubling the node count changes Q by < 1e-3 relative, and the
        // trapezoid error shrinks at its h^2 rate. Near the optimum the
        // integrand's relative curvature is largest, so the 1e-3 bound is
        // checked from 81 nodes there and from the default 41 a bit away.
        let spec = paper_design(PaperDesign::ChiSq5, true, 1000, 33);
        let data = gen_dataset(&spec).unwrap();
        let q_at = |b: &[f64], m: usize| {
            let ospec = ObjectiveSpec { grid_size: m, ..Default::default() };
            q_hat(&data, b, &ospec).unwrap()
        };

        let b_off = [1.4, 1.5];
        let (qc, qf) = (q_at(&b_off, 41), q_at(&b_off, 81));
        assert!(((qc - qf) / qc.abs()).abs() < 1e-3, "{qc} vs {qf}");

        let b_near = [0.9, 1.05];
        let (q41, q81, q161) = (q_at(&b_near, 41), q_at(&b_near, 81), q_at(&b_near, 161));
        let rel_coarse = ((q41 - q81) / q41.abs()).abs();
        let rel_fine = ((q81 - q161) / q81.abs()).abs();
        assert!(rel_fine < 1e-3, "81->161 change {rel_fine}");
        let order = rel_coarse / rel_fine;
        assert!((2.5..8.0).contains(&order), "convergence order ratio {order}");
    }

    #[test]
    fn truth_beats_offset_in_most_replications() {
        // Theorem-1 uniqueness, checked as a Monte Carlo consequence:
        // Q(beta) > Q(beta + 0.3) in at least 95 of 100 seeded replications.
        let ospec = ObjectiveSpec::default();
        let mut wins = 0;
        for rep in 0..100u64 {
            let spec = paper_design(PaperDesign::ChiSq5, true, 1000, derive_seed(501, rep));
            let data = gen_dataset(&spec).unwrap();
            let q_true = q_hat(&data, &[1.0, 1.0], &ospec).unwrap();
            let q_off = q_hat(&data, &[1.3, 1.3], &ospec).unwrap();
            if q_true > q_off {
                wins += 1;
            }
        }
        assert!(wins >= 95, "truth won only {wins}/100");
    }

    #[test]
    fn profile_curve_single_delta_matches_q_hat() {
        let spec = paper_design(PaperDesign::Beta12, true, 300, 6);
        let data = gen_dataset(&spec).unwrap();
        let ospec = ObjectiveSpec::default();
        let curve = profile_curve(&data, &[1.0, 1.0], 0, &[0.0], &ospec).unwrap();
        assert_eq!(curve.len(), 1);
        assert_eq!(curve[0].1, q_hat(&data, &[1.0, 1.0], &ospec).unwrap());
    }

    #[test]
    fn profile_curve_peaks_at_truth_on_noiseless_data() {
        let data = noiseless_zero_intercept(500, 44);
        let ospec = ObjectiveSpec::default();
        let deltas = [-0.4, -0.2, 0.0, 0.2, 0.4];
        let curve = profile_curve(&data, &[1.0, 1.0], 0, &deltas, &ospec).unwrap();
        let best = curve
            .iter()
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        assert_eq!(best.0, 0.0);
    }

    #[test]
    fn residuals_small_at_truth_against_bootstrap_se() {
        // At b = beta the population residual is zero for every pair; the
        // sample residual must sit within 5 bootstrap standard errors.
        let n = 100_000;
        let spec = paper_design(PaperDesign::ChiSq5, true, n, 61);
        let data = gen_dataset(&spec).unwrap();
        let b = [1.0, 1.0];
        let us = [-1.0, -0.5, 0.25, 0.5, 1.0];

        let point: Vec<Vec<Complex64>> = us
            .iter()
            .map(|&u| {
                residuals_at(&data, &b, u, 0.05)
                    .unwrap()
                    .into_iter()
                    .map(|(_, r)| r)
                    .collect()
            })
            .collect();

        // Nonparametric bootstrap of the residuals.
        let reps = 30;
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let mut boot: Vec<Vec<Vec<Complex64>>> = Vec::with_capacity(reps);
        for _ in 0..reps {
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let bx = DMatrix::from_fn(n, 2, |r, c| data.x[(idx[r], c)]);
            let by = DVector::from_fn(n, |r, _| data.y[idx[r]]);
            let bdata = Dataset::from_observables(bx, by).unwrap();
            boot.push(
                us.iter()
                    .map(|&u| {
                        residuals_at(&bdata, &b, u, 0.05)
                            .unwrap()
                            .into_iter()
                            .map(|(_, r)| r)
                            .collect()
                    })
                    .collect(),
            );
        }

        for (ui, &u) in us.iter().enumerate() {
            for pi in 0..point[ui].len() {
                let vals: Vec<Complex64> = boot.iter().map(|rep| rep[ui][pi]).collect();
                let mean_re = vals.iter().map(|v| v.re).sum::<f64>() / reps as f64;
                let mean_im = vals.iter().map(|v| v.im).sum::<f64>() / reps as f64;
                let var = vals
                    .iter()
                    .map(|v| {
                        let dr = v.re - mean_re;
                        let di = v.im - mean_im;
                        dr * dr + di * di
                    })
                    .sum::<f64>()
                    / (reps - 1) as f64;
                let se = var.sqrt();
                let mag = point[ui][pi].norm();
                assert!(
                    mag < 5.0 * se,
                    "u = {u}, pair {pi}: |res| = {mag}, 5 SE = {}",
                    5.0 * se
                );
            }
        }
    }
}
