//! Empirical characteristic function sums and the plug-in estimator of
//! second-order partial derivatives of the log characteristic function.
//!
//! For a point (b, u) the phase is t_n = u (sum_k b_k X_kn - Y_n) and the
//! weighted sums are
//!
//!   s0       = (1/N) sum_n e^{i t_n}
//!   s1(A)    = (1/N) sum_n A_n e^{i t_n}
//!   s2(A,B)  = (1/N) sum_n A_n B_n e^{i t_n}
//!
//! with A, B ranging over the columns X_1..X_K and Y. The estimated second
//! derivative for a pair is s1(A) s1(B) / s0^2 - s2(A,B) / s0.

use num_complex::Complex64;

use crate::datagen::Dataset;
use crate::error::{EivError, Result};
use crate::numeric::{KahanComplexSum, KahanSum};

/// Second member of a derivative pair: another regressor or the outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PairRhs {
    X(usize),
    Y,
}

/// Index pair (k1, k2) with k2 a regressor index or Y. Regressor indices are
/// zero-based internally; labels are one-based to match the x1..xK headers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Pair {
    pub k1: usize,
    pub rhs: PairRhs,
}

impl Pair {
    pub fn xx(k1: usize, k2: usize) -> Self {
        assert!(k1 < k2, "regressor pairs are ordered k1 < k2");
        Pair { k1, rhs: PairRhs::X(k2) }
    }

    pub fn xy(k1: usize) -> Self {
        Pair { k1, rhs: PairRhs::Y }
    }

    pub fn label(&self) -> String {
        match self.rhs {
            PairRhs::X(k2) => format!("x{}x{}", self.k1 + 1, k2 + 1),
            PairRhs::Y => format!("x{}y", self.k1 + 1),
        }
    }
}

impl std::fmt::Display for Pair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.label())
    }
}

/// All residual pairs for K regressors: the K(K-1)/2 regressor pairs in
/// lexicographic order, then (k, y) for k = 1..K.
pub fn residual_pairs(k: usize) -> Vec<Pair> {
    let mut pairs = Vec::with_capacity(k * (k - 1) / 2 + k);
    for k1 in 0..k {
        for k2 in (k1 + 1)..k {
            pairs.push(Pair::xx(k1, k2));
        }
    }
    for k1 in 0..k {
        pairs.push(Pair::xy(k1));
    }
    pairs
}

/// The complex sums at one evaluation point from which every hat-derivative
/// is formed. `s1` and `s2` are indexed by column, with index K meaning Y.
#[derive(Debug, Clone)]
pub struct WeightedEcfSums {
    pub s0: Complex64,
    pub s1: Vec<Complex64>,
    /// Full (K+1) x (K+1) symmetric matrix stored row-major.
    pub s2: Vec<Complex64>,
    /// Frequency parameter this point was evaluated at (metadata for audits).
    pub at_u: f64,
    k: usize,
}

impl WeightedEcfSums {
    pub fn k(&self) -> usize {
        self.k
    }

    fn col(&self, rhs: PairRhs) -> usize {
        match rhs {
            PairRhs::X(i) => i,
            PairRhs::Y => self.k,
        }
    }

    pub fn s1_at(&self, rhs: PairRhs) -> Complex64 {
        self.s1[self.col(rhs)]
    }

    pub fn s2_at(&self, a: PairRhs, b: PairRhs) -> Complex64 {
        let (i, j) = (self.col(a), self.col(b));
        self.s2[i * (self.k + 1) + j]
    }
}

/// One pass over the data accumulating all sums with Kahan compensation.
/// The phase for row n is produced by `phase`; the accumulation order over n
/// and over columns is fixed so identical inputs give identical bits.
fn sums_with_phase<F: Fn(usize) -> f64>(data: &Dataset, at_u: f64, phase: F) -> WeightedEcfSums {
    let n = data.n();
    let k = data.k();
    let cols = k + 1;
    let mut acc0 = KahanComplexSum::new();
    let mut acc1 = vec![KahanComplexSum::new(); cols];
    let mut acc2 = vec![KahanComplexSum::new(); cols * (cols + 1) / 2];
    let mut vals = vec![0.0f64; cols];

    for row in 0..n {
        for c in 0..k {
            vals[c] = data.x[(row, c)];
        }
        vals[k] = data.y[row];
        let t = phase(row);
        let (sin_t, cos_t) = t.sin_cos();
        let e = Complex64::new(cos_t, sin_t);
        acc0.add(e);
        let mut tri = 0;
        for a in 0..cols {
            let va = vals[a];
            acc1[a].add(Complex64::new(va * cos_t, va * sin_t));
            for b in a..cols {
                let w = va * vals[b];
                acc2[tri].add(Complex64::new(w * cos_t, w * sin_t));
                tri += 1;
            }
        }
    }

    let inv_n = n as f64;
    let s0 = acc0.value() / inv_n;
    let s1: Vec<Complex64> = acc1.iter().map(|a| a.value() / inv_n).collect();
    let mut s2 = vec![Complex64::new(0.0, 0.0); cols * cols];
    let mut tri = 0;
    for a in 0..cols {
        for b in a..cols {
            let v = acc2[tri].value() / inv_n;
            s2[a * cols + b] = v;
            s2[b * cols + a] = v;
            tri += 1;
        }
    }
    WeightedEcfSums { s0, s1, s2, at_u, k }
}

/// Weighted ECF sums at the point (b, u), phase t_n = u (sum_k b_k X_kn - Y_n).
///
/// The inner accumulation of sum_k b_k X_kn runs k ascending, the same order
/// gen_dataset uses to assemble Y, so for noiseless data at b = beta the
/// phase is bit-exactly constant.
pub fn weighted_sums(data: &Dataset, b: &[f64], u: f64) -> WeightedEcfSums {
    assert_eq!(b.len(), data.k(), "coefficient vector length must equal K");
    let x = &data.x;
    let y = &data.y;
    let k = data.k();
    sums_with_phase(data, u, |row| {
        let mut acc = 0.0;
        for c in 0..k {
            acc += b[c] * x[(row, c)];
        }
        u * (acc - y[row])
    })
}

/// Weighted ECF sums at a general argument s = (sx_1..sx_K, sy), phase
/// t_n = sum_k sx_k X_kn + sy Y_n. Used by the diagnostics curves, which
/// evaluate at (u, ..., u, 0). `at_u` only labels the point.
pub fn ecf_sums_at(data: &Dataset, sx: &[f64], sy: f64, at_u: f64) -> WeightedEcfSums {
    assert_eq!(sx.len(), data.k(), "argument length must equal K");
    let x = &data.x;
    let y = &data.y;
    let k = data.k();
    sums_with_phase(data, at_u, |row| {
        let mut acc = 0.0;
        for c in 0..k {
            acc += sx[c] * x[(row, c)];
        }
        acc + sy * y[row]
    })
}

/// Estimated second-order partial derivative of the log CF for one pair.
#[derive(Debug, Clone, Copy)]
pub struct PdEstimate {
    pub value: Complex64,
    pub pair: Pair,
    pub at_u: f64,
    /// |s0| at the evaluation point, recorded for stability audits.
    pub denom_mag: f64,
}

/// Ratio-minus-ratio estimator s1(k1) s1(k2) / s0^2 - s2(k1,k2) / s0.
///
/// At u = 0 this equals minus the sample covariance of the pair exactly.
/// Errors with `DenominatorUnderflow` when |s0| < `denom_floor`.
pub fn pd_hat(sums: &WeightedEcfSums, pair: Pair, denom_floor: f64) -> Result<PdEstimate> {
    let denom_mag = sums.s0.norm();
    if denom_mag < denom_floor {
        return Err(EivError::DenominatorUnderflow {
            at_u: sums.at_u,
            denom_mag,
            floor: denom_floor,
        });
    }
    let a = PairRhs::X(pair.k1);
    let b = pair.rhs;
    let value = sums.s1_at(a) * sums.s1_at(b) / (sums.s0 * sums.s0) - sums.s2_at(a, b) / sums.s0;
    Ok(PdEstimate {
        value,
        pair,
        at_u: sums.at_u,
        denom_mag,
    })
}

/// Plug-in covariance with divisor N (not N-1), exactly as the hat formulas
/// are written. Summation matches the ECF pass bit-for-bit so that
/// cov + pd_hat cancels exactly at u = 0.
pub fn sample_cov(data: &Dataset, pair: Pair) -> Result<f64> {
    let n = data.n();
    if n < 2 {
        return Err(EivError::InsufficientData(
            "sample covariance needs N >= 2".into(),
        ));
    }
    let value_at = |row: usize, rhs: PairRhs| -> f64 {
        match rhs {
            PairRhs::X(i) => data.x[(row, i)],
            PairRhs::Y => data.y[row],
        }
    };
    let a = PairRhs::X(pair.k1);
    let b = pair.rhs;
    let mut acc_a = KahanSum::new();
    let mut acc_b = KahanSum::new();
    let mut acc_ab = KahanSum::new();
    for row in 0..n {
        let va = value_at(row, a);
        let vb = value_at(row, b);
        acc_a.add(va);
        acc_b.add(vb);
        acc_ab.add(va * vb);
    }
    let inv_n = n as f64;
    let mean_a = acc_a.value() / inv_n;
    let mean_b = acc_b.value() / inv_n;
    let raw = acc_ab.value() / inv_n;
    Ok(raw - mean_a * mean_b)
}
