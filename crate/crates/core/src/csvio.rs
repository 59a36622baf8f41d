//! CSV input and output. Every file written here starts with a provenance
//! comment line (tool version, config hash, master seed) so outputs are
//! traceable and reruns byte-identical.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::datagen::Dataset;
use crate::diagnostics::{ConstantFitReport, DerivativeCurveSet, EquivalenceReport};
use crate::error::{EivError, Result};
use crate::montecarlo::{McSummary, RepRecord, SweepRow, TableCell};
use crate::objective::ResidualPoint;
use crate::optimizer::EstimateReport;

/// Provenance comment stamped as the first line of every output file.
pub fn provenance_line(config_hash: &str, master_seed: u64) -> String {
    format!(
        "# eiv {} config_hash={config_hash} master_seed={master_seed}",
        crate::VERSION
    )
}

fn open_out(path: &Path, provenance: &str) -> Result<std::fs::File> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "{provenance}")?;
    Ok(file)
}

/// Writes a dataset as CSV with header x1..xK,y; when `include_latent` is set
/// and the latents exist, appends xstar1..,u1..,eps columns.
pub fn write_dataset(path: &Path, data: &Dataset, include_latent: bool, provenance: &str) -> Result<()> {
    let mut file = open_out(path, provenance)?;
    let k = data.k();
    let mut header: Vec<String> = (1..=k).map(|i| format!("x{i}")).collect();
    header.push("y".into());
    let latent = if include_latent { data.latent.as_ref() } else { None };
    if latent.is_some() {
        for i in 1..=k {
            header.push(format!("xstar{i}"));
        }
        for i in 1..=k {
            header.push(format!("u{i}"));
        }
        header.push("eps".into());
    }
    writeln!(file, "{}", header.join(","))?;
    for row in 0..data.n() {
        let mut fields: Vec<String> = (0..k).map(|c| format!("{}", data.x[(row, c)])).collect();
        fields.push(format!("{}", data.y[row]));
        if let Some(lat) = latent {
            for c in 0..k {
                fields.push(format!("{}", lat.x_star[(row, c)]));
            }
            for c in 0..k {
                fields.push(format!("{}", lat.u[(row, c)]));
            }
            fields.push(format!("{}", lat.eps[row]));
        }
        writeln!(file, "{}", fields.join(","))?;
    }
    Ok(())
}

/// Reads a dataset from CSV. The header must start with x1..xK,y (in that
/// order); any further columns (latents) are ignored. `#` lines are skipped.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| EivError::CsvParse { line: 0, msg: e.to_string() })?;

    let headers = reader
        .headers()
        .map_err(|e| EivError::CsvParse { line: 1, msg: e.to_string() })?
        .clone();
    let names: Vec<&str> = headers.iter().collect();
    let mut k = 0;
    while k < names.len() && names[k] == format!("x{}", k + 1) {
        k += 1;
    }
    if k == 0 || k >= names.len() || names[k] != "y" {
        return Err(EivError::CsvParse {
            line: 1,
            msg: format!("header must start with x1..xK,y; got '{}'", names.join(",")),
        });
    }

    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| EivError::CsvParse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() < k + 1 {
            return Err(EivError::CsvParse {
                line,
                msg: format!("expected at least {} fields, got {}", k + 1, record.len()),
            });
        }
        for c in 0..=k {
            let raw = record.get(c).unwrap_or("");
            let v: f64 = raw.parse().map_err(|_| EivError::CsvParse {
                line,
                msg: format!("field '{raw}' is not a number"),
            })?;
            if c < k {
                xs.push(v);
            } else {
                ys.push(v);
            }
        }
    }
    let n = ys.len();
    if n == 0 {
        return Err(EivError::CsvParse { line: 0, msg: "no data rows".into() });
    }
    let x = DMatrix::from_fn(n, k, |r, c| xs[r * k + c]);
    let y = DVector::from_vec(ys);
    Dataset::from_observables(x, y)
}

fn report_fields(report: &EstimateReport) -> Vec<String> {
    let mut fields = vec![report.method.label().to_string()];
    for b in &report.b_hat {
        fields.push(format!("{b}"));
    }
    fields.push(format!("{}", report.objective_at_opt));
    fields.push(report.n_evals.to_string());
    fields.push(report.converged.to_string());
    fields.push(report.flat_objective.to_string());
    fields.push(
        report
            .diagnostics
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(";"),
    );
    fields
}

/// One-row estimate report CSV: method,b1..bK,objective,n_evals,converged,
/// flat_objective,notes.
pub fn write_report(path: &Path, report: &EstimateReport, provenance: &str) -> Result<()> {
    let mut file = open_out(path, provenance)?;
    let k = report.b_hat.len();
    let mut header = vec!["method".to_string()];
    header.extend((1..=k).map(|i| format!("b{i}")));
    header.extend(
        ["objective", "n_evals", "converged", "flat_objective", "notes"]
            .iter()
            .map(|s| s.to_string()),
    );
    writeln!(file, "{}", header.join(","))?;
    writeln!(file, "{}", csv_join(&report_fields(report)))?;
    Ok(())
}

/// Verbose key-value text block for one report.
pub fn report_text(report: &EstimateReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("method = {}\n", report.method));
    for (i, b) in report.b_hat.iter().enumerate() {
        out.push_str(&format!("b{} = {b}\n", i + 1));
    }
    out.push_str(&format!("objective = {}\n", report.objective_at_opt));
    out.push_str(&format!("n_evals = {}\n", report.n_evals));
    out.push_str(&format!("converged = {}\n", report.converged));
    out.push_str(&format!("flat_objective = {}\n", report.flat_objective));
    if !report.start_used.is_empty() {
        out.push_str(&format!(
            "start_used = {}\n",
            report
                .start_used
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(",")
        ));
    }
    for (k, v) in &report.diagnostics {
        out.push_str(&format!("{k} = {v}\n"));
    }
    out
}

fn csv_join(fields: &[String]) -> String {
    fields
        .iter()
        .map(|f| {
            if f.contains(',') || f.contains('"') || f.contains('\n') {
                format!("\"{}\"", f.replace('"', "\"\""))
            } else {
                f.clone()
            }
        })
        .collect::<Vec<_>>()
        .join(",")
}

/// Residual curve CSV: u,pair,re_residual,im_residual,denom_mag.
pub fn write_residual_curve(path: &Path, points: &[ResidualPoint], provenance: &str) -> Result<()> {
    let mut file = open_out(path, provenance)?;
    writeln!(file, "u,pair,re_residual,im_residual,denom_mag")?;
    for p in points {
        writeln!(
            file,
            "{},{},{},{},{}",
            p.u,
            p.pair.label(),
            p.residual.re,
            p.residual.im,
            p.denom_mag
        )?;
    }
    Ok(())
}

/// Profile curve CSV: delta,q_hat.
pub fn write_profile_curve(path: &Path, curve: &[(f64, f64)], provenance: &str) -> Result<()> {
    let mut file = open_out(path, provenance)?;
    writeln!(file, "delta,q_hat")?;
    for (d, q) in curve {
        writeln!(file, "{d},{q}")?;
    }
    Ok(())
}

/// Band CSVs, one file per pair named `curve_bands_<pair>.csv` under `dir`:
/// u,q05_re,q50_re,q95_re,q05_im,q50_im,q95_im,n_reps.
pub fn write_curve_bands(dir: &Path, set: &DerivativeCurveSet, provenance: &str) -> Result<Vec<std::path::PathBuf>> {
    let mut written = Vec::new();
    for bands in &set.bands {
        let path = dir.join(format!("curve_bands_{}.csv", bands.pair.label()));
        let mut file = open_out(&path, provenance)?;
        writeln!(file, "u,q05_re,q50_re,q95_re,q05_im,q50_im,q95_im,n_reps")?;
        for pt in &bands.points {
            writeln!(
                file,
                "{},{},{},{},{},{},{},{}",
                pt.u, pt.re.q05, pt.re.q50, pt.re.q95, pt.im.q05, pt.im.q50, pt.im.q95, pt.n_valid
            )?;
        }
        written.push(path);
    }
    Ok(written)
}

/// Constant-fit verdicts as a key-value text block.
pub fn verdict_text(reports: &[ConstantFitReport]) -> String {
    let mut out = String::new();
    for r in reports {
        out.push_str(&format!(
            "{} = {} (margin_re = {}, margin_im = {}, margin = {})\n",
            r.pair.label(),
            r.verdict,
            r.margin_re,
            r.margin_im,
            r.margin
        ));
    }
    out
}

/// Equivalence-demo report as a key-value text block.
pub fn equivalence_text(report: &EquivalenceReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "c = {}\n",
        report.c.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
    ));
    out.push_str(&format!(
        "beta_tilde = {}\n",
        report
            .beta_tilde
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",")
    ));
    out.push_str(&format!("max_x_diff = {}\n", report.max_x_diff));
    out.push_str(&format!("max_y_diff = {}\n", report.max_y_diff));
    for (i, r) in report.corr_xstar_eps.iter().enumerate() {
        out.push_str(&format!("corr_xstar{}_eps = {r}\n", i + 1));
    }
    out.push_str(&format!("corr_threshold = {}\n", report.corr_threshold));
    out.push_str(&format!(
        "violates_independence = {}\n",
        report.violates_independence
    ));
    out.push_str(&format!(
        "observables_match = {}\n",
        report.max_x_diff < 1e-9 && report.max_y_diff < 1e-9
    ));
    out
}

/// Long-format study summary: method,coef,mean,sd,q05,q50,q95,failures,reps.
pub fn write_summary(path: &Path, summary: &McSummary, provenance: &str) -> Result<()> {
    let mut file = open_out(path, provenance)?;
    writeln!(file, "method,coef,mean,sd,q05,q50,q95,failures,reps")?;
    for m in &summary.methods {
        if m.coefs.is_empty() {
            writeln!(file, "{},,,,,,,{},{}", m.method.label(), m.failures, m.reps)?;
            continue;
        }
        for (i, c) in m.coefs.iter().enumerate() {
            writeln!(
                file,
                "{},b{},{},{},{},{},{},{},{}",
                m.method.label(),
                i + 1,
                c.mean,
                c.sd,
                c.q05,
                c.q50,
                c.q95,
                m.failures,
                m.reps
            )?;
        }
    }
    Ok(())
}

/// Per-replication long CSV: design,error,method,rep,seed,b1..bK,objective,
/// converged,error_msg. `design`/`error` label the cell; empty for single
/// studies.
pub fn write_replications(
    path: &Path,
    cells: &[(String, String, &[RepRecord])],
    k: usize,
    provenance: &str,
) -> Result<()> {
    let mut file = open_out(path, provenance)?;
    let mut header = vec![
        "design".to_string(),
        "error".to_string(),
        "method".to_string(),
        "rep".to_string(),
        "seed".to_string(),
    ];
    header.extend((1..=k).map(|i| format!("b{i}")));
    header.push("objective".into());
    header.push("converged".into());
    header.push("error_msg".into());
    writeln!(file, "{}", header.join(","))?;
    for (design, error, records) in cells {
        for r in *records {
            let mut fields = vec![
                design.clone(),
                error.clone(),
                r.method.label().to_string(),
                r.rep.to_string(),
                r.seed.to_string(),
            ];
            match &r.outcome {
                Ok(rep) => {
                    for b in &rep.b_hat {
                        fields.push(format!("{b}"));
                    }
                    fields.push(format!("{}", rep.objective_at_opt));
                    fields.push(rep.converged.to_string());
                    fields.push(String::new());
                }
                Err(msg) => {
                    for _ in 0..k {
                        fields.push(String::new());
                    }
                    fields.push(String::new());
                    fields.push(String::new());
                    fields.push(msg.clone());
                }
            }
            writeln!(file, "{}", csv_join(&fields))?;
        }
    }
    Ok(())
}

/// Table-shaped summary CSV for the 6-cell comparison:
/// design,error,method,mean_b1,sd_b1,mean_b2,sd_b2,failures,reps.
pub fn write_table1(path: &Path, cells: &[TableCell], provenance: &str) -> Result<()> {
    let mut file = open_out(path, provenance)?;
    writeln!(
        file,
        "design,error,method,mean_b1,sd_b1,mean_b2,sd_b2,failures,reps"
    )?;
    for cell in cells {
        let error = if cell.with_meas_error { "normal(0,1)" } else { "none" };
        for m in &cell.summary.methods {
            if m.coefs.len() < 2 {
                writeln!(
                    file,
                    "{},{},{},,,,,{},{}",
                    cell.design.label(),
                    error,
                    m.method.label(),
                    m.failures,
                    m.reps
                )?;
                continue;
            }
            writeln!(
                file,
                "{},{},{},{},{},{},{},{},{}",
                cell.design.label(),
                error,
                m.method.label(),
                m.coefs[0].mean,
                m.coefs[0].sd,
                m.coefs[1].mean,
                m.coefs[1].sd,
                m.failures,
                m.reps
            )?;
        }
    }
    Ok(())
}

/// Consistency sweep CSV: n,method,rmse_b1,failures,reps.
pub fn write_consistency(path: &Path, rows: &[SweepRow], reps: usize, provenance: &str) -> Result<()> {
    let mut file = open_out(path, provenance)?;
    writeln!(file, "n,method,rmse_b1,failures,reps")?;
    for row in rows {
        for (method, rmse, failures) in &row.per_method {
            writeln!(
                file,
                "{},{},{},{},{}",
                row.n_obs,
                method.label(),
                rmse,
                failures,
                reps
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_dataset, paper_design, PaperDesign};
    use tempfile::tempdir;

    #[test]
    fn dataset_roundtrip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let spec = paper_design(PaperDesign::Beta12, true, 50, 3);
        let data = gen_dataset(&spec).unwrap();
        write_dataset(&path, &data, false, &provenance_line("abc", 3)).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back.n(), 50);
        assert_eq!(back.k(), 2);
        for row in 0..50 {
            // Values roundtrip through decimal text exactly (shortest f64
            // representation parses back to the same bits).
            assert_eq!(back.y[row], data.y[row]);
            assert_eq!(back.x[(row, 0)], data.x[(row, 0)]);
        }
    }

    #[test]
    fn dataset_with_latents_still_reads() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let spec = paper_design(PaperDesign::Beta12, true, 20, 4);
        let data = gen_dataset(&spec).unwrap();
        write_dataset(&path, &data, true, &provenance_line("abc", 4)).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back.k(), 2);
        assert_eq!(back.n(), 20);
    }

    #[test]
    fn parse_error_carries_line_number() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "x1,x2,y\n1,2,3\n4,oops,6\n").unwrap();
        match read_dataset(&path) {
            Err(EivError::CsvParse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_wrong_header() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "a,b,c\n1,2,3\n").unwrap();
        assert!(matches!(
            read_dataset(&path),
            Err(EivError::CsvParse { line: 1, .. })
        ));
    }
}
