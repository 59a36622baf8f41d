//! Curve-band diagnostics and the observational-equivalence demonstrator.
//!
//! The bands plot, across Monte Carlo replications, the estimated second
//! derivatives of the log CF of the observables along s = (u, ..., u, 0).
//! Joint normality of the latent regressors makes every such curve constant,
//! so a horizontal line fitting inside all the bands is evidence against
//! identification; the constant-fit check formalizes that visual rule.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::datagen::{gen_dataset, DesignSpec};
use crate::ecf::{ecf_sums_at, pd_hat, residual_pairs, Pair};
use crate::error::{EivError, Result};
use crate::numeric::{derive_seed, quantile};

/// Pointwise 5/50/95 empirical quantiles.
#[derive(Debug, Clone, Copy)]
pub struct QuantileTriple {
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
}

fn triple(values: &[f64]) -> QuantileTriple {
    QuantileTriple {
        q05: quantile(values, 0.05),
        q50: quantile(values, 0.50),
        q95: quantile(values, 0.95),
    }
}

/// Bands at one grid node for one pair.
#[derive(Debug, Clone, Copy)]
pub struct BandPoint {
    pub u: f64,
    pub n_valid: usize,
    pub re: QuantileTriple,
    pub im: QuantileTriple,
}

/// Bands for one derivative pair, plus the nodes truncated by denominator
/// underflow (too few replications survived there).
#[derive(Debug, Clone)]
pub struct PairBands {
    pub pair: Pair,
    pub points: Vec<BandPoint>,
    pub truncated_us: Vec<f64>,
}

/// Monte Carlo curves of the hat-derivatives along (u, ..., u, 0).
#[derive(Debug, Clone)]
pub struct DerivativeCurveSet {
    pub u_grid: Vec<f64>,
    pub pairs: Vec<Pair>,
    /// Raw curve values: `values[p][r][i]` is pair p, replication r, node i;
    /// None where |s0| fell below the floor.
    pub values: Vec<Vec<Vec<Option<Complex64>>>>,
    pub bands: Vec<PairBands>,
    pub reps: usize,
}

/// Default 41-node grid on [-1, 1] for the band plots.
pub fn default_u_grid() -> Vec<f64> {
    (0..41).map(|i| -1.0 + i as f64 * 0.05).collect()
}

/// Generates `reps` datasets from `design` (seeds derived per replication)
/// and collects the pd_hat curves for every pair with pointwise quantile
/// bands. A node keeps its band only when at least half the replications
/// survive the denominator floor there.
pub fn curve_bands(
    design: &DesignSpec,
    reps: usize,
    u_grid: &[f64],
    denom_floor: f64,
) -> Result<DerivativeCurveSet> {
    if reps < 20 {
        return Err(EivError::Config(format!(
            "curve bands need reps >= 20, got {reps}"
        )));
    }
    design.validate()?;
    if u_grid.is_empty() {
        return Err(EivError::Config("empty u grid".into()));
    }
    let pairs = residual_pairs(design.k);

    let per_rep: Vec<Result<Vec<Vec<Option<Complex64>>>>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut spec = design.clone();
            spec.seed = derive_seed(design.seed, rep as u64);
            let data = gen_dataset(&spec)?;
            let mut out: Vec<Vec<Option<Complex64>>> = vec![Vec::with_capacity(u_grid.len()); pairs.len()];
            let sx = vec![0.0f64; design.k];
            for &u in u_grid {
                let mut arg = sx.clone();
                for a in arg.iter_mut() {
                    *a = u;
                }
                let sums = ecf_sums_at(&data, &arg, 0.0, u);
                for (p, &pair) in pairs.iter().enumerate() {
                    match pd_hat(&sums, pair, denom_floor) {
                        Ok(pd) => out[p].push(Some(pd.value)),
                        Err(EivError::DenominatorUnderflow { .. }) => out[p].push(None),
                        Err(e) => return Err(e),
                    }
                }
            }
            Ok(out)
        })
        .collect();

    let mut values: Vec<Vec<Vec<Option<Complex64>>>> =
        vec![Vec::with_capacity(reps); pairs.len()];
    for rep_curves in per_rep {
        let rep_curves = rep_curves?;
        for (p, curve) in rep_curves.into_iter().enumerate() {
            values[p].push(curve);
        }
    }

    let min_valid = (reps / 2).max(2);
    let bands: Vec<PairBands> = pairs
        .iter()
        .enumerate()
        .map(|(p, &pair)| {
            let mut points = Vec::new();
            let mut truncated = Vec::new();
            for (i, &u) in u_grid.iter().enumerate() {
                let mut re = Vec::with_capacity(reps);
                let mut im = Vec::with_capacity(reps);
                for r in 0..reps {
                    if let Some(v) = values[p][r][i] {
                        re.push(v.re);
                        im.push(v.im);
                    }
                }
                if re.len() < min_valid {
                    truncated.push(u);
                    continue;
                }
                points.push(BandPoint {
                    u,
                    n_valid: re.len(),
                    re: triple(&re),
                    im: triple(&im),
                });
            }
            PairBands { pair, points, truncated_us: truncated }
        })
        .collect();

    Ok(DerivativeCurveSet {
        u_grid: u_grid.to_vec(),
        pairs,
        values,
        bands,
        reps,
    })
}

/// Verdict of the constant-fit check for one pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// No constant fits inside the band envelope: the derivative varies, as
    /// non-normal latents require.
    Variation,
    /// Some constant fits inside the bands; the data cannot rule out a
    /// constant derivative (jointly normal latents).
    NoVariation,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Variation => "variation",
            Verdict::NoVariation => "no-variation",
        })
    }
}

/// Constant-fit result for one pair. Positive margin: the bands exclude
/// every constant by that gap; negative: some constant clears all bands.
#[derive(Debug, Clone, Copy)]
pub struct ConstantFitReport {
    pub pair: Pair,
    pub verdict: Verdict,
    pub margin_re: f64,
    pub margin_im: f64,
    pub margin: f64,
}

/// For each pair: "variation" iff no complex constant lies inside the band
/// envelope at every u. Operationally, max over u of q05 exceeds min over u
/// of q95 for the real part or for the imaginary part.
pub fn constant_fit_check(curves: &DerivativeCurveSet) -> Vec<ConstantFitReport> {
    curves
        .bands
        .iter()
        .map(|pb| {
            let (mut max_q05_re, mut min_q95_re) = (f64::NEG_INFINITY, f64::INFINITY);
            let (mut max_q05_im, mut min_q95_im) = (f64::NEG_INFINITY, f64::INFINITY);
            for pt in &pb.points {
                max_q05_re = max_q05_re.max(pt.re.q05);
                min_q95_re = min_q95_re.min(pt.re.q95);
                max_q05_im = max_q05_im.max(pt.im.q05);
                min_q95_im = min_q95_im.min(pt.im.q95);
            }
            let margin_re = max_q05_re - min_q95_re;
            let margin_im = max_q05_im - min_q95_im;
            let margin = margin_re.max(margin_im);
            ConstantFitReport {
                pair: pb.pair,
                verdict: if margin > 0.0 {
                    Verdict::Variation
                } else {
                    Verdict::NoVariation
                },
                margin_re,
                margin_im,
                margin,
            }
        })
        .collect()
}

/// Output of the observational-equivalence construction.
#[derive(Debug, Clone)]
pub struct EquivalenceReport {
    pub c: Vec<f64>,
    pub beta_tilde: Vec<f64>,
    /// Largest absolute difference between tilde and base observables.
    pub max_x_diff: f64,
    pub max_y_diff: f64,
    /// Sample correlation of each tilde regressor with the tilde error.
    pub corr_xstar_eps: Vec<f64>,
    /// 4/sqrt(N), the significance yardstick for those correlations.
    pub corr_threshold: f64,
    /// True when some |correlation| exceeds the threshold: the tilde story
    /// violates the independence assumption, which is what rules it out.
    pub violates_independence: bool,
}

/// Builds the tilde model that is observationally equivalent to the base
/// model: X~*_k = X*_k + U_k, U~_k = 0, eps~ = eps + sum_k beta_k
/// (X*_k (1 - c_k) - c_k U_k), beta~_k = c_k beta_k. Verifies on one latent
/// draw that the implied observables match entry for entry, and measures the
/// regressor/error dependence the construction smuggles in.
pub fn equivalence_demo(base: &DesignSpec, c: &[f64]) -> Result<EquivalenceReport> {
    base.validate()?;
    if c.len() != base.k {
        return Err(EivError::Config(format!(
            "scaling vector has length {}, need K = {}",
            c.len(),
            base.k
        )));
    }
    for &ck in c {
        if ck == 0.0 || ck == 1.0 || !ck.is_finite() {
            return Err(EivError::InvalidScaling(ck));
        }
    }
    let has_noise =
        base.meas_error_law.iter().any(|l| l.is_some()) || base.eps_law.is_some();
    if !has_noise {
        return Err(EivError::InvalidDesign(
            "equivalence demo needs measurement errors or a nontrivial eps".into(),
        ));
    }

    let data = gen_dataset(base)?;
    let lat = data.latent.as_ref().expect("synthetic data retains latents");
    let n = data.n();
    let k = base.k;

    let beta_tilde: Vec<f64> = c.iter().zip(&base.beta_true).map(|(ck, bk)| ck * bk).collect();

    // Tilde latents.
    let mut x_star_t = lat.x_star.clone();
    for col in 0..k {
        for row in 0..n {
            x_star_t[(row, col)] += lat.u[(row, col)];
        }
    }
    let mut eps_t = lat.eps.clone();
    for row in 0..n {
        let mut shift = 0.0;
        for col in 0..k {
            shift += base.beta_true[col]
                * (lat.x_star[(row, col)] * (1.0 - c[col]) - c[col] * lat.u[(row, col)]);
        }
        eps_t[row] += shift;
    }

    // Tilde observables: X~ = alpha + X~* (tilde measurement error is zero),
    // Y~ = alpha_Y + X~* beta~ + eps~.
    let mut max_x_diff = 0.0f64;
    let mut max_y_diff = 0.0f64;
    for row in 0..n {
        for col in 0..k {
            let xt = base.alpha_x[col] + x_star_t[(row, col)];
            max_x_diff = max_x_diff.max((xt - data.x[(row, col)]).abs());
        }
        let mut acc = 0.0;
        for col in 0..k {
            acc += beta_tilde[col] * x_star_t[(row, col)];
        }
        let yt = (base.alpha_y + acc) + eps_t[row];
        max_y_diff = max_y_diff.max((yt - data.y[row]).abs());
    }

    let corr_threshold = 4.0 / (n as f64).sqrt();
    let mut corr_xstar_eps = Vec::with_capacity(k);
    let me = eps_t.iter().sum::<f64>() / n as f64;
    let sde = (eps_t.iter().map(|v| (v - me) * (v - me)).sum::<f64>() / n as f64).sqrt();
    for col in 0..k {
        let xs: Vec<f64> = x_star_t.column(col).iter().copied().collect();
        let mx = xs.iter().sum::<f64>() / n as f64;
        let sdx = (xs.iter().map(|v| (v - mx) * (v - mx)).sum::<f64>() / n as f64).sqrt();
        let cov = xs
            .iter()
            .zip(eps_t.iter())
            .map(|(a, b)| (a - mx) * (b - me))
            .sum::<f64>()
            / n as f64;
        corr_xstar_eps.push(cov / (sdx * sde));
    }
    let violates = corr_xstar_eps.iter().any(|r| r.abs() > corr_threshold);

    Ok(EquivalenceReport {
        c: c.to_vec(),
        beta_tilde,
        max_x_diff,
        max_y_diff,
        corr_xstar_eps,
        corr_threshold,
        violates_independence: violates,
    })
}
