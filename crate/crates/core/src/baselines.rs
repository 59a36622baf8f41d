//! Reference estimators: OLS and the third/fourth-order moment instrumental
//! variable estimators (C3, C4).
//!
//! C3 instruments are pairwise products of demeaned columns; C4 instruments
//! are triple products with their Gaussian part removed, so they carry only
//! third- and fourth-order information respectively. Both are run through
//! two-stage least squares on demeaned data.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::datagen::Dataset;
use crate::error::{EivError, Result};
use crate::numeric::KahanSum;
use crate::optimizer::{EstimateReport, Method};

/// Which instrument family to build, plus the ridge used to stabilize a
/// near-singular first-stage Gram matrix.
#[derive(Debug, Clone, Copy)]
pub struct IvSpec {
    pub instrument_kind: InstrumentKind,
    pub ridge: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstrumentKind {
    C3,
    C4,
}

impl IvSpec {
    pub fn c3() -> Self {
        IvSpec { instrument_kind: InstrumentKind::C3, ridge: 1e-10 }
    }

    pub fn c4() -> Self {
        IvSpec { instrument_kind: InstrumentKind::C4, ridge: 1e-10 }
    }
}

fn column_mean(m: &DMatrix<f64>, col: usize) -> f64 {
    let mut acc = KahanSum::new();
    for row in 0..m.nrows() {
        acc.add(m[(row, col)]);
    }
    acc.value() / m.nrows() as f64
}

fn vector_mean(v: &DVector<f64>) -> f64 {
    let mut acc = KahanSum::new();
    for row in 0..v.len() {
        acc.add(v[row]);
    }
    acc.value() / v.len() as f64
}

fn demeaned(data: &Dataset) -> (DMatrix<f64>, DVector<f64>) {
    let n = data.n();
    let k = data.k();
    let mut x = data.x.clone();
    for col in 0..k {
        let m = column_mean(&data.x, col);
        for row in 0..n {
            x[(row, col)] -= m;
        }
    }
    let my = vector_mean(&data.y);
    let y = data.y.map(|v| v - my);
    (x, y)
}

/// Covariance with divisor N of two already-demeaned columns.
fn cov_demeaned(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let mut acc = KahanSum::new();
    for row in 0..a.len() {
        acc.add(a[row] * b[row]);
    }
    acc.value() / a.len() as f64
}

/// Ordinary least squares with an intercept column. Slopes go to `b_hat`;
/// the intercept is reported in the diagnostics.
pub fn ols(data: &Dataset) -> Result<EstimateReport> {
    let n = data.n();
    let k = data.k();
    if n < k + 2 {
        return Err(EivError::InsufficientData(format!(
            "OLS needs N >= K + 2, got N = {n}, K = {k}"
        )));
    }
    let mut design = DMatrix::<f64>::zeros(n, k + 1);
    for row in 0..n {
        design[(row, 0)] = 1.0;
        for col in 0..k {
            design[(row, col + 1)] = data.x[(row, col)];
        }
    }
    let gram = design.transpose() * &design;
    let rhs = design.transpose() * &data.y;
    let chol = Cholesky::new(gram).ok_or(EivError::SingularDesign)?;
    let coef = chol.solve(&rhs);

    let residual = &data.y - &design * &coef;
    let mse = residual.norm_squared() / n as f64;
    let b_hat: Vec<f64> = (0..k).map(|i| coef[i + 1]).collect();
    Ok(EstimateReport {
        method: Method::Ols,
        b_hat,
        objective_at_opt: -mse,
        n_evals: 1,
        converged: true,
        start_used: Vec::new(),
        flat_objective: false,
        diagnostics: vec![("intercept".into(), format!("{}", coef[0]))],
    })
}

/// Builds the N x m instrument matrix from demeaned columns.
///
/// C3: all pairwise cross products x_i x_j (i < j) and x_k y.
/// C4: all triple products x_i x_j x_l (i <= j <= l, not all equal) with the
/// Gaussian part removed,
///     z - x_i cov(x_j, x_l) - x_j cov(x_i, x_l) - x_l cov(x_i, x_j),
/// plus x_i x_j y (i <= j) corrected analogously with cov(., y). The
/// correction leaves the instruments uncorrelated with any jointly normal
/// component, which is what makes them exogenous for the composite error.
/// The own-square outcome products x_i x_i y are required: without them the
/// population cross-moment matrix is rank deficient for Cholesky-mixed
/// designs (every remaining instrument contains x_1, whose fourth-cumulant
/// rows are proportional), and the estimator loses identification.
pub fn build_instruments(data: &Dataset, spec: &IvSpec) -> Result<DMatrix<f64>> {
    let n = data.n();
    let k = data.k();
    if n < 10 {
        return Err(EivError::InsufficientData(
            "instrument construction needs N >= 10".into(),
        ));
    }
    let (xd, yd) = demeaned(data);
    let xcols: Vec<DVector<f64>> = (0..k).map(|c| xd.column(c).into_owned()).collect();

    let mut cols: Vec<DVector<f64>> = Vec::new();
    match spec.instrument_kind {
        InstrumentKind::C3 => {
            for i in 0..k {
                for j in (i + 1)..k {
                    cols.push(xcols[i].component_mul(&xcols[j]));
                }
            }
            for i in 0..k {
                cols.push(xcols[i].component_mul(&yd));
            }
        }
        InstrumentKind::C4 => {
            for i in 0..k {
                for j in i..k {
                    for l in j..k {
                        if i == j && j == l {
                            continue;
                        }
                        let cov_jl = cov_demeaned(&xcols[j], &xcols[l]);
                        let cov_il = cov_demeaned(&xcols[i], &xcols[l]);
                        let cov_ij = cov_demeaned(&xcols[i], &xcols[j]);
                        let mut z = DVector::<f64>::zeros(n);
                        for row in 0..n {
                            let raw = xcols[i][row] * xcols[j][row] * xcols[l][row];
                            z[row] = raw
                                - xcols[i][row] * cov_jl
                                - xcols[j][row] * cov_il
                                - xcols[l][row] * cov_ij;
                        }
                        cols.push(z);
                    }
                }
            }
            for i in 0..k {
                for j in i..k {
                    let cov_jy = cov_demeaned(&xcols[j], &yd);
                    let cov_iy = cov_demeaned(&xcols[i], &yd);
                    let cov_ij = cov_demeaned(&xcols[i], &xcols[j]);
                    let mut z = DVector::<f64>::zeros(n);
                    for row in 0..n {
                        let raw = xcols[i][row] * xcols[j][row] * yd[row];
                        z[row] = raw
                            - xcols[i][row] * cov_jy
                            - xcols[j][row] * cov_iy
                            - yd[row] * cov_ij;
                    }
                    cols.push(z);
                }
            }
        }
    }

    let m = cols.len();
    let mut z = DMatrix::<f64>::zeros(n, m);
    for (c, col) in cols.iter().enumerate() {
        z.set_column(c, col);
    }
    Ok(z)
}

/// Two-stage least squares with the built instruments on demeaned data.
///
/// The weak-instrument flag fires when the smallest singular value of the
/// per-observation cross-moment matrix Z'X/N falls below 1e-3 * N; with the
/// bundled N = 1000 designs this separates vanishing third moments
/// (symmetric latents) from healthy fourth-order information.
pub fn iv_estimate(data: &Dataset, spec: &IvSpec) -> Result<EstimateReport> {
    let n = data.n();
    let k = data.k();
    let z = build_instruments(data, spec)?;
    let m = z.ncols();
    if m < k {
        return Err(EivError::Underidentified { m, k });
    }
    let (xd, yd) = demeaned(data);

    // Center the instruments; cross-moments become covariances and the
    // first stage conditions better.
    let mut zc = z;
    for col in 0..m {
        let mu = column_mean(&zc, col);
        for row in 0..n {
            zc[(row, col)] -= mu;
        }
    }

    let cross = zc.transpose() * &xd / n as f64;
    let smin = cross
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let weak = smin < 1e-3 * n as f64;

    let mut gram = zc.transpose() * &zc;
    let svals = gram.clone().svd(false, false).singular_values;
    let smax_g = svals.iter().copied().fold(0.0, f64::max);
    let smin_g = svals.iter().copied().fold(f64::INFINITY, f64::min);
    let mut ridge_applied = false;
    if !(smin_g > 0.0) || smax_g / smin_g > 1e12 {
        // Relative ridge: spec.ridge scaled by the mean diagonal.
        let scale = gram.trace() / m as f64;
        for i in 0..m {
            gram[(i, i)] += spec.ridge * scale.max(1.0);
        }
        ridge_applied = true;
    }

    let gram_chol = Cholesky::new(gram).ok_or(EivError::SingularDesign)?;
    let first_stage = gram_chol.solve(&(zc.transpose() * &xd));
    let x_hat = &zc * first_stage;

    let a = x_hat.transpose() * &xd;
    let rhs = x_hat.transpose() * &yd;
    let b = a
        .lu()
        .solve(&rhs)
        .ok_or(EivError::SingularDesign)?;

    let method = match spec.instrument_kind {
        InstrumentKind::C3 => Method::C3,
        InstrumentKind::C4 => Method::C4,
    };
    let mut x_mean = Vec::with_capacity(k);
    for col in 0..k {
        x_mean.push(column_mean(&data.x, col));
    }
    let intercept =
        vector_mean(&data.y) - x_mean.iter().zip(b.iter()).map(|(m, c)| m * c).sum::<f64>();
    Ok(EstimateReport {
        method,
        b_hat: b.iter().copied().collect(),
        objective_at_opt: f64::NAN,
        n_evals: 1,
        converged: true,
        start_used: Vec::new(),
        flat_objective: false,
        diagnostics: vec![
            ("intercept".into(), format!("{intercept}")),
            ("weak_instruments".into(), weak.to_string()),
            ("sigma_min_crossmoment".into(), format!("{smin}")),
            ("n_instruments".into(), m.to_string()),
            ("ridge_applied".into(), ridge_applied.to_string()),
        ],
    })
}

/// True when the report carries the weak-instrument marker.
pub fn is_weak(report: &EstimateReport) -> bool {
    report
        .diagnostics
        .iter()
        .any(|(k, v)| k == "weak_instruments" && v == "true")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{
        gen_dataset, paper_design, var2_cov1, DesignSpec, LatentLaw, MarginalLaw, PaperDesign,
    };
    use crate::numeric::{derive_seed, mean, sample_sd};

    fn noiseless(n: usize, seed: u64) -> Dataset {
        let mut spec = paper_design(PaperDesign::Beta12, false, n, seed);
        spec.eps_law = None;
        gen_dataset(&spec).unwrap()
    }

    #[test]
    fn ols_exact_on_noiseless_data() {
        let data = noiseless(300, 1);
        let report = ols(&data).unwrap();
        assert!((report.b_hat[0] - 1.0).abs() < 1e-10);
        assert!((report.b_hat[1] - 1.0).abs() < 1e-10);
        // intercept: alpha_Y - sum(beta alpha_x) = 1 - 2 = -1
        let intercept: f64 = report.diagnostics[0].1.parse().unwrap();
        assert!((intercept + 1.0).abs() < 1e-9);
    }

    #[test]
    fn ols_attenuates_to_matrix_algebra_plim() {
        // (Sigma* + I)^-1 Sigma* beta = (0.75, 0.75) for Sigma* = [[2,1],[1,2]].
        let spec = paper_design(PaperDesign::ChiSq5, true, 100_000, 2);
        let data = gen_dataset(&spec).unwrap();
        let report = ols(&data).unwrap();
        assert!((report.b_hat[0] - 0.75).abs() < 0.02, "b1 = {}", report.b_hat[0]);
        assert!((report.b_hat[1] - 0.75).abs() < 0.02, "b2 = {}", report.b_hat[1]);
    }

    #[test]
    fn ols_rejects_singular_design() {
        let x = nalgebra::DMatrix::from_fn(20, 2, |r, c| if c == 0 { r as f64 } else { 2.0 * r as f64 });
        let y = nalgebra::DVector::from_fn(20, |r, _| r as f64);
        let data = Dataset::from_observables(x, y).unwrap();
        assert!(matches!(ols(&data), Err(EivError::SingularDesign)));
    }

    #[test]
    fn c3_instrument_count_for_two_regressors() {
        let data = noiseless(100, 3);
        let z = build_instruments(&data, &IvSpec::c3()).unwrap();
        assert_eq!(z.ncols(), 3); // x1x2, x1y, x2y
    }

    #[test]
    fn c4_instrument_count_for_two_regressors() {
        let data = noiseless(100, 4);
        let z = build_instruments(&data, &IvSpec::c4()).unwrap();
        assert_eq!(z.ncols(), 5); // (112), (122), x1x1y, x1x2y, x2x2y
    }

    #[test]
    fn c4_single_regressor_reduces_to_own_square_product() {
        let spec = DesignSpec {
            k: 1,
            latent_law: LatentLaw::Marginal(MarginalLaw::ChiSquare { df: 5.0 }),
            target_cov: nalgebra::DMatrix::from_element(1, 1, 2.0),
            alpha_x: vec![0.0],
            alpha_y: 0.0,
            beta_true: vec![1.0],
            meas_error_law: vec![None],
            eps_law: None,
            n_obs: 500,
            seed: 5,
        };
        let data = gen_dataset(&spec).unwrap();
        let z = build_instruments(&data, &IvSpec::c4()).unwrap();
        assert_eq!(z.ncols(), 1); // x1 x1 y only; no triples survive
        let report = iv_estimate(&data, &IvSpec::c4()).unwrap();
        assert!((report.b_hat[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn instruments_orthogonal_to_composite_error() {
        // With retained latents, the composite error is eps - sum_k beta_k U_k;
        // each instrument's sample correlation with it stays within 4/sqrt(N).
        let spec = paper_design(PaperDesign::ChiSq5, true, 100_000, 6);
        let data = gen_dataset(&spec).unwrap();
        let lat = data.latent.as_ref().unwrap();
        let n = data.n();
        let v: Vec<f64> = (0..n)
            .map(|r| lat.eps[r] - lat.u[(r, 0)] - lat.u[(r, 1)])
            .collect();
        let bound = 4.0 / (n as f64).sqrt();
        for spec_iv in [IvSpec::c3(), IvSpec::c4()] {
            let z = build_instruments(&data, &spec_iv).unwrap();
            for col in 0..z.ncols() {
                let zc: Vec<f64> = z.column(col).iter().copied().collect();
                let (mz, mv) = (mean(&zc), mean(&v));
                let cov = zc.iter().zip(&v).map(|(a, b)| (a - mz) * (b - mv)).sum::<f64>() / n as f64;
                let sz = (zc.iter().map(|a| (a - mz).powi(2)).sum::<f64>() / n as f64).sqrt();
                let sv = (v.iter().map(|a| (a - mv).powi(2)).sum::<f64>() / n as f64).sqrt();
                let corr = cov / (sz * sv);
                assert!(
                    corr.abs() < bound,
                    "{:?} col {col}: corr = {corr}",
                    spec_iv.instrument_kind
                );
            }
        }
    }

    #[test]
    fn iv_exact_on_noiseless_data() {
        let data = noiseless(2_000, 7);
        for spec_iv in [IvSpec::c3(), IvSpec::c4()] {
            let report = iv_estimate(&data, &spec_iv).unwrap();
            assert!(
                (report.b_hat[0] - 1.0).abs() < 1e-8 && (report.b_hat[1] - 1.0).abs() < 1e-8,
                "{:?}: {:?}",
                spec_iv.instrument_kind,
                report.b_hat
            );
        }
    }

    #[test]
    fn gaussian_latents_starve_c3() {
        // Jointly normal latents have no third-order information: the C3
        // cross-moment matrix collapses and the weak flag fires.
        let mut weak_count = 0;
        let mut estimates = Vec::new();
        for rep in 0..20u64 {
            let mut spec = paper_design(PaperDesign::ChiSq5, true, 2_000, derive_seed(900, rep));
            spec.latent_law = LatentLaw::Marginal(MarginalLaw::Normal { mean: 0.0, var: 1.0 });
            spec.target_cov = var2_cov1(2);
            let data = gen_dataset(&spec).unwrap();
            let report = iv_estimate(&data, &IvSpec::c3()).unwrap();
            if is_weak(&report) {
                weak_count += 1;
            }
            estimates.push(report.b_hat[0]);
        }
        assert!(weak_count >= 16, "weak flag fired only {weak_count}/20");
        assert!(
            sample_sd(&estimates) > 0.3,
            "C3 spread suspiciously small on normal latents: {}",
            sample_sd(&estimates)
        );
    }

    #[test]
    fn slope_location_invariance() {
        let spec = paper_design(PaperDesign::ChiSq5, true, 3_000, 8);
        let data = gen_dataset(&spec).unwrap();
        let shifted = Dataset::from_observables(
            data.x.map(|v| v + 100.0),
            data.y.map(|v| v - 55.0),
        )
        .unwrap();
        let o1 = ols(&data).unwrap();
        let o2 = ols(&shifted).unwrap();
        for i in 0..2 {
            assert!((o1.b_hat[i] - o2.b_hat[i]).abs() < 1e-9);
        }
        for spec_iv in [IvSpec::c3(), IvSpec::c4()] {
            let r1 = iv_estimate(&data, &spec_iv).unwrap();
            let r2 = iv_estimate(&shifted, &spec_iv).unwrap();
            for i in 0..2 {
                assert!(
                    (r1.b_hat[i] - r2.b_hat[i]).abs() < 1e-8,
                    "{:?}: {:?} vs {:?}",
                    spec_iv.instrument_kind,
                    r1.b_hat,
                    r2.b_hat
                );
            }
        }
    }

    #[test]
    fn weak_flag_separates_t5_c3_from_c4() {
        // Symmetric latents kill third moments but not fourth: the flag
        // fires for C3 in at least 80/100 replications and for C4 in few.
        let mut c3_weak = 0;
        let mut c4_weak = 0;
        let reps = 100u64;
        for rep in 0..reps {
            let spec = paper_design(PaperDesign::T5, true, 1_000, derive_seed(901, rep));
            let data = gen_dataset(&spec).unwrap();
            if is_weak(&iv_estimate(&data, &IvSpec::c3()).unwrap()) {
                c3_weak += 1;
            }
            if is_weak(&iv_estimate(&data, &IvSpec::c4()).unwrap()) {
                c4_weak += 1;
            }
        }
        assert!(c3_weak >= 80, "C3 weak flag fired {c3_weak}/{reps}");
        assert!(c4_weak <= 20, "C4 weak flag fired {c4_weak}/{reps}");
    }
}
