//! CSV tables and model files.
//!
//! Numbers are written with `{:e}`, which is locale independent and round-trips
//! every `f64` exactly. Files are written to a sibling temporary and renamed
//! into place.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::design::Bounds;
use crate::dram::Chain;
use crate::error::{Error, Result};
use crate::models::FluxCurve;
use crate::multielement::MultielementPck;
use crate::sampling::ExperimentalDesign;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let name = path.file_name().ok_or_else(|| Error::InvalidArgument(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:e}")
}

/// CSV text for a header and numeric rows.
pub fn csv_string<I>(header: &[String], rows: I) -> Result<String>
where
    I: IntoIterator<Item = Vec<f64>>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::DimensionMismatch { expected: header.len(), got: row.len() });
        }
        w.write_record(row.iter().map(|v| fmt_f64(*v)))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

pub fn write_csv<I>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<f64>>,
{
    write_atomic(path, csv_string(header, rows)?.as_bytes())
}

/// Header and numeric rows of a CSV file.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("{}: row {}: {f:?}: {e}", path.display(), line + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != header.len() {
            return Err(Error::Parse(format!("{}: row {} has {} fields", path.display(), line + 1, row.len())));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

pub fn numbered(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|k| format!("{prefix}_{k}")).collect()
}

/// Design as `x_1..x_M,y`.
pub fn write_design(path: &Path, ed: &ExperimentalDesign) -> Result<()> {
    let m = ed.dim().unwrap_or(0);
    let mut header = numbered("x", m);
    header.push("y".into());
    let rows = ed.inputs.iter().zip(&ed.outputs).map(|(x, y)| {
        let mut r = x.clone();
        r.push(*y);
        r
    });
    write_csv(path, &header, rows)
}

/// Reads a design written by [`write_design`]; the last column is the output.
pub fn read_design(path: &Path) -> Result<ExperimentalDesign> {
    let (header, rows) = read_csv(path)?;
    if header.len() < 2 {
        return Err(Error::Parse(format!("{}: need at least one input and one output column", path.display())));
    }
    let (inputs, outputs) = rows.into_iter().map(|mut r| {
        let y = r.pop().expect("non-empty row");
        (r, y)
    }).unzip();
    ExperimentalDesign::new(inputs, outputs)
}

/// Flux curve as `T_bar,J_bar`.
pub fn write_flux(path: &Path, curve: &FluxCurve) -> Result<()> {
    write_flux_values(path, &curve.t_bar, &curve.j_bar)
}

pub fn write_flux_values(path: &Path, t_bar: &[f64], j_bar: &[f64]) -> Result<()> {
    let header = vec!["T_bar".to_string(), "J_bar".to_string()];
    write_csv(path, &header, t_bar.iter().zip(j_bar).map(|(t, j)| vec![*t, *j]))
}

pub fn read_flux(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let (header, rows) = read_csv(path)?;
    if header != ["T_bar", "J_bar"] {
        return Err(Error::Parse(format!("{}: expected header T_bar,J_bar, got {header:?}", path.display())));
    }
    Ok(rows.into_iter().map(|r| (r[0], r[1])).unzip())
}

/// Chain as `iter,theta_1..theta_d,log_post,stage` (stage 1, 2, or 0 for rejected).
pub fn write_chain(path: &Path, chain: &Chain) -> Result<()> {
    let mut header = vec!["iter".to_string()];
    header.extend(numbered("theta", chain.dim()));
    header.push("log_post".into());
    header.push("stage".into());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header)?;
    for (i, ((s, lp), st)) in chain.states.iter().zip(&chain.log_posts).zip(&chain.stages).enumerate() {
        let mut rec = vec![(i + 1).to_string()];
        rec.extend(s.iter().map(|v| fmt_f64(*v)));
        rec.push(fmt_f64(*lp));
        rec.push(st.code().to_string());
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BuildMeta {
    pub seed: u64,
    pub forward: String,
    pub construction_seconds: f64,
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format_version: u32,
    pub domain: Bounds,
    pub model: MultielementPck,
    pub meta: BuildMeta,
}

impl ModelFile {
    pub fn new(model: MultielementPck, meta: BuildMeta) -> Self {
        Self { format_version: MODEL_FORMAT_VERSION, domain: model.partition().parent().clone(), model, meta }
    }
}

pub fn save_model(path: &Path, file: &ModelFile) -> Result<()> {
    write_atomic(path, serde_json::to_string(file)?.as_bytes())
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    let text = fs::read_to_string(path)?;
    let probe: serde_json::Value = serde_json::from_str(&text)?;
    match probe.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == MODEL_FORMAT_VERSION as u64 => {}
        other => {
            return Err(Error::Parse(format!(
                "{}: unsupported model format version {other:?}, expected {MODEL_FORMAT_VERSION}",
                path.display()
            )))
        }
    }
    let file: ModelFile = serde_json::from_value(probe)?;
    if file.domain != *file.model.partition().parent() {
        return Err(Error::InvalidDomain("model file domain differs from the partition's parent".into()));
    }
    Ok(file)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/t.csv");
        let vals = vec![vec![0.1, -1e-300, f64::MAX], vec![1.0 / 3.0, 5e-324, -0.0]];
        write_csv(&p, &numbered("c", 3), vals.clone()).unwrap();
        let (h, rows) = read_csv(&p).unwrap();
        assert_eq!(h, ["c_1", "c_2", "c_3"]);
        for (a, b) in rows.iter().flatten().zip(vals.iter().flatten()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let leftovers: Vec<_> = fs::read_dir(p.parent().unwrap()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }

    #[test]
    fn design_and_flux_files() {
        let dir = tempfile::tempdir().unwrap();
        let ed = ExperimentalDesign::new(vec![vec![0.5, 1.5], vec![-2.0, 0.25]], vec![3.0, 4.0]).unwrap();
        let p = dir.path().join("ed.csv");
        write_design(&p, &ed).unwrap();
        assert_eq!(read_design(&p).unwrap(), ed);

        let f = dir.path().join("flux.csv");
        write_flux_values(&f, &[1.0, 1.5], &[0.0, 2e-3]).unwrap();
        assert_eq!(read_flux(&f).unwrap(), (vec![1.0, 1.5], vec![0.0, 2e-3]));
        assert!(read_flux(&p).is_err());
    }

    #[test]
    fn malformed_csv_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        fs::write(&p, "a,b\n1,x\n").unwrap();
        assert!(matches!(read_csv(&p), Err(Error::Parse(_))));
    }
}
