//! Flat key-value config files: UTF-8, one `key = value` per line, `#`
//! comments. Every key can be overridden by a CLI flag of the same name.
//!
//! Design keys: k, latent_law, target_cov, intercepts, beta_true,
//! meas_error_law, eps_law, n_obs, seed.
//! Study keys add: reps, methods, u_max, weight, weight_sigma, grid_size,
//! denom_floor, master_seed, bounds, tol_x, tol_f, max_iter.
//!
//! Laws are written `beta(1,2)`, `chisq(5)`, `studentt(5)`, `normal(0,1)`,
//! `exp(1)`, `commonfactorexp`, or `none`. Vectors are comma-separated;
//! matrices separate rows with `;`.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use crate::datagen::{DesignSpec, LatentLaw, MarginalLaw};
use crate::error::{EivError, Result};
use crate::objective::{ObjectiveSpec, WeightKind, WeightSpec};
use crate::optimizer::Method;

pub type KvMap = BTreeMap<String, String>;

/// Parses the flat key-value text. Duplicate keys are an error.
pub fn parse_kv_str(text: &str) -> Result<KvMap> {
    let mut map = KvMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            EivError::Config(format!("line {}: expected 'key = value'", idx + 1))
        })?;
        let key = key.trim().to_ascii_lowercase();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(EivError::Config(format!("line {}: empty key", idx + 1)));
        }
        if map.insert(key.clone(), value).is_some() {
            return Err(EivError::Config(format!(
                "line {}: duplicate key '{key}'",
                idx + 1
            )));
        }
    }
    Ok(map)
}

pub fn load_kv(path: &Path) -> Result<KvMap> {
    let text = std::fs::read_to_string(path)?;
    parse_kv_str(&text)
}

/// Hex digest of the canonical `key = value` serialization; stamped into
/// every output file's provenance line.
pub fn config_hash(map: &KvMap) -> String {
    let mut hasher = Sha256::new();
    for (k, v) in map {
        hasher.update(k.as_bytes());
        hasher.update(b"=");
        hasher.update(v.as_bytes());
        hasher.update(b"\n");
    }
    let digest = hasher.finalize();
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

pub fn parse_f64(map: &KvMap, key: &str) -> Result<Option<f64>> {
    match map.get(key) {
        None => Ok(None),
        Some(v) => v
            .parse::<f64>()
            .map(Some)
            .map_err(|_| EivError::Config(format!("{key}: '{v}' is not a number"))),
    }
}

pub fn parse_usize(map: &KvMap, key: &str) -> Result<Option<usize>> {
    match map.get(key) {
        None => Ok(None),
        Some(v) => v
            .parse::<usize>()
            .map(Some)
            .map_err(|_| EivError::Config(format!("{key}: '{v}' is not an integer"))),
    }
}

pub fn parse_u64(map: &KvMap, key: &str) -> Result<Option<u64>> {
    match map.get(key) {
        None => Ok(None),
        Some(v) => v
            .parse::<u64>()
            .map(Some)
            .map_err(|_| EivError::Config(format!("{key}: '{v}' is not an integer"))),
    }
}

pub fn parse_f64_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| EivError::Config(format!("'{t}' is not a number")))
        })
        .collect()
}

fn parse_matrix(s: &str) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = s
        .split(';')
        .map(|row| parse_f64_list(row))
        .collect::<Result<_>>()?;
    let nrows = rows.len();
    let ncols = rows.first().map(|r| r.len()).unwrap_or(0);
    if nrows == 0 || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(EivError::Config("ragged or empty matrix".into()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn matrix_to_string(m: &DMatrix<f64>) -> String {
    (0..m.nrows())
        .map(|i| {
            (0..m.ncols())
                .map(|j| format!("{}", m[(i, j)]))
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect::<Vec<_>>()
        .join(";")
}

/// Parses a law token: `beta(a,b)`, `chisq(df)`, `studentt(df)`,
/// `normal(mean,var)`, `exp(rate)`.
pub fn parse_marginal_law(s: &str) -> Result<MarginalLaw> {
    let s = s.trim().to_ascii_lowercase();
    let (name, args) = match s.split_once('(') {
        Some((n, rest)) => {
            let rest = rest
                .strip_suffix(')')
                .ok_or_else(|| EivError::Config(format!("law '{s}': missing ')'")))?;
            (n.trim(), parse_f64_list(rest)?)
        }
        None => (s.as_str(), Vec::new()),
    };
    let want = |n: usize| -> Result<()> {
        if args.len() == n {
            Ok(())
        } else {
            Err(EivError::Config(format!(
                "law '{name}' takes {n} parameter(s), got {}",
                args.len()
            )))
        }
    };
    match name {
        "beta" => {
            want(2)?;
            Ok(MarginalLaw::Beta { alpha: args[0], beta: args[1] })
        }
        "chisq" | "chisquare" => {
            want(1)?;
            Ok(MarginalLaw::ChiSquare { df: args[0] })
        }
        "studentt" | "t" => {
            want(1)?;
            Ok(MarginalLaw::StudentT { df: args[0] })
        }
        "normal" => {
            want(2)?;
            Ok(MarginalLaw::Normal { mean: args[0], var: args[1] })
        }
        "exp" | "exponential" => {
            want(1)?;
            Ok(MarginalLaw::Exponential { rate: args[0] })
        }
        other => Err(EivError::Config(format!("unknown law '{other}'"))),
    }
}

fn parse_optional_law(s: &str) -> Result<Option<MarginalLaw>> {
    if s.trim().eq_ignore_ascii_case("none") {
        Ok(None)
    } else {
        parse_marginal_law(s).map(Some)
    }
}

/// Builds a DesignSpec from a key-value map. Required keys: k, latent_law,
/// beta_true, n_obs. target_cov defaults to variance 2 / covariance 1;
/// intercepts default to all 1; error laws default to none.
pub fn design_from_kv(map: &KvMap) -> Result<DesignSpec> {
    let k = parse_usize(map, "k")?
        .ok_or_else(|| EivError::Config("missing key 'k'".into()))?;
    let latent_law = match map.get("latent_law") {
        None => return Err(EivError::Config("missing key 'latent_law'".into())),
        Some(s) if s.trim().eq_ignore_ascii_case("commonfactorexp") => LatentLaw::CommonFactorExp,
        Some(s) => LatentLaw::Marginal(parse_marginal_law(s)?),
    };
    let target_cov = match map.get("target_cov") {
        Some(s) => parse_matrix(s)?,
        None => crate::datagen::var2_cov1(k),
    };
    let (alpha_x, alpha_y) = match map.get("intercepts") {
        Some(s) => {
            let vals = parse_f64_list(s)?;
            if vals.len() != k + 1 {
                return Err(EivError::Config(format!(
                    "intercepts needs K+1 = {} values (alpha_1..alpha_K, alpha_Y)",
                    k + 1
                )));
            }
            (vals[..k].to_vec(), vals[k])
        }
        None => (vec![1.0; k], 1.0),
    };
    let beta_true = match map.get("beta_true") {
        Some(s) => parse_f64_list(s)?,
        None => return Err(EivError::Config("missing key 'beta_true'".into())),
    };
    let meas_error_law = match map.get("meas_error_law") {
        None => vec![None; k],
        Some(s) => {
            let parts: Vec<&str> = s.split('|').collect();
            if parts.len() == 1 {
                vec![parse_optional_law(parts[0])?; k]
            } else if parts.len() == k {
                parts
                    .iter()
                    .map(|p| parse_optional_law(p))
                    .collect::<Result<_>>()?
            } else {
                return Err(EivError::Config(
                    "meas_error_law: give one law or K '|'-separated laws".into(),
                ));
            }
        }
    };
    let eps_law = match map.get("eps_law") {
        None => None,
        Some(s) => parse_optional_law(s)?,
    };
    let n_obs = parse_usize(map, "n_obs")?
        .ok_or_else(|| EivError::Config("missing key 'n_obs'".into()))?;
    let seed = parse_u64(map, "seed")?.unwrap_or(0);

    let spec = DesignSpec {
        k,
        latent_law,
        target_cov,
        alpha_x,
        alpha_y,
        beta_true,
        meas_error_law,
        eps_law,
        n_obs,
        seed,
    };
    spec.validate()?;
    Ok(spec)
}

/// Canonical key-value form of a design, the inverse of `design_from_kv`.
pub fn design_to_kv(spec: &DesignSpec) -> KvMap {
    let mut map = KvMap::new();
    map.insert("k".into(), spec.k.to_string());
    map.insert("latent_law".into(), spec.latent_law.to_string());
    map.insert("target_cov".into(), matrix_to_string(&spec.target_cov));
    let mut intercepts: Vec<String> = spec.alpha_x.iter().map(|v| v.to_string()).collect();
    intercepts.push(spec.alpha_y.to_string());
    map.insert("intercepts".into(), intercepts.join(","));
    map.insert(
        "beta_true".into(),
        spec.beta_true
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    map.insert(
        "meas_error_law".into(),
        spec.meas_error_law
            .iter()
            .map(|l| match l {
                None => "none".to_string(),
                Some(law) => law.to_string(),
            })
            .collect::<Vec<_>>()
            .join("|"),
    );
    map.insert(
        "eps_law".into(),
        match &spec.eps_law {
            None => "none".to_string(),
            Some(law) => law.to_string(),
        },
    );
    map.insert("n_obs".into(), spec.n_obs.to_string());
    map.insert("seed".into(), spec.seed.to_string());
    map
}

/// Objective settings from config keys, with the module defaults for
/// anything absent: uniform weight with u_max 1, 41 nodes, floor 0.05.
pub fn objective_from_kv(map: &KvMap) -> Result<ObjectiveSpec> {
    let defaults = ObjectiveSpec::default();
    let u_max = parse_f64(map, "u_max")?.unwrap_or(1.0);
    let kind = match map.get("weight").map(|s| s.to_ascii_lowercase()) {
        None => WeightKind::UniformSymmetric { u_max },
        Some(ref s) if s == "uniform" => WeightKind::UniformSymmetric { u_max },
        Some(ref s) if s == "truncgaussian" || s == "gaussian" => {
            let sigma = parse_f64(map, "weight_sigma")?.unwrap_or(u_max / 2.0);
            WeightKind::TruncGaussian { sigma, u_max }
        }
        Some(other) => {
            return Err(EivError::Config(format!("unknown weight kind '{other}'")));
        }
    };
    let spec = ObjectiveSpec {
        weight: WeightSpec { kind, per_pair_weights: None },
        grid_size: parse_usize(map, "grid_size")?.unwrap_or(defaults.grid_size),
        denom_floor: parse_f64(map, "denom_floor")?.unwrap_or(defaults.denom_floor),
    };
    spec.validate()?;
    Ok(spec)
}

/// Comma-separated method list, e.g. "pd,ols,c3,c4".
pub fn parse_methods(s: &str) -> Result<Vec<Method>> {
    let methods: Vec<Method> = s
        .split(',')
        .map(|t| Method::parse(t.trim()))
        .collect::<Result<_>>()?;
    if methods.is_empty() {
        return Err(EivError::Config("empty method list".into()));
    }
    Ok(methods)
}

/// Bounds in the form "lo,hi;lo,hi;...", one pair per axis.
pub fn parse_bounds(s: &str) -> Result<Vec<(f64, f64)>> {
    s.split(';')
        .map(|pair| {
            let vals = parse_f64_list(pair)?;
            if vals.len() != 2 {
                return Err(EivError::Config(format!(
                    "bounds entry '{pair}' must be 'lo,hi'"
                )));
            }
            Ok((vals[0], vals[1]))
        })
        .collect()
}
