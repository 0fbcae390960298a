use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::Dataset;
use crate::error::{DdnError, Result};

/// Ordered `key=value` metadata stored next to a dataset file.
pub type Sidecar = BTreeMap<String, String>;

/// `data.csv` → `data.csv.meta`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

/// Writes a comma-separated file with columns `x0.. y0..` and its sidecar.
/// Values use the shortest decimal form that reads back to the same `f64`.
pub fn write_dataset(path: &Path, data: &Dataset, meta: &Sidecar) -> Result<()> {
    let mut out = String::new();
    let header: Vec<String> = (0..data.input_dim())
        .map(|i| format!("x{i}"))
        .chain((0..data.target_dim()).map(|j| format!("y{j}")))
        .collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for r in 0..data.len() {
        let row: Vec<String> = data.x(r).iter().chain(data.y(r)).map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;

    let mut side = fs::File::create(sidecar_path(path))?;
    for (k, v) in meta {
        if k.contains('=') || k.contains('\n') || v.contains('\n') {
            return Err(DdnError::config(format!("metadata entry '{k}' cannot be written as key=value")));
        }
        writeln!(side, "{k}={v}")?;
    }
    Ok(())
}

/// Reads a file written by [`write_dataset`]: columns named `x*` are
/// features and `y*` targets.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => DdnError::Io(io),
        other => DdnError::Format(format!("{other:?}")),
    })?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| DdnError::Parse { row: 1, column: 0, message: e.to_string() })?
        .iter()
        .map(str::to_string)
        .collect();
    let xs: Vec<usize> = (0..headers.len()).filter(|&i| headers[i].starts_with('x')).collect();
    let ys: Vec<usize> = (0..headers.len()).filter(|&i| headers[i].starts_with('y')).collect();
    if xs.is_empty() || ys.is_empty() || xs.len() + ys.len() != headers.len() {
        return Err(DdnError::Format(format!(
            "dataset header must hold only x* and y* columns, got {}",
            headers.join(",")
        )));
    }
    let (mut features, mut targets) = (Vec::new(), Vec::new());
    for (r, record) in reader.records().enumerate() {
        let line = r + 2;
        let record = record.map_err(|e| DdnError::Parse { row: line, column: 0, message: e.to_string() })?;
        let cell = |c: usize| -> Result<f64> {
            record.get(c).and_then(|s| s.parse().ok()).ok_or_else(|| DdnError::Parse {
                row: line,
                column: c + 1,
                message: format!("'{}' is not a number", record.get(c).unwrap_or("")),
            })
        };
        for &c in &xs {
            features.push(cell(c)?);
        }
        for &c in &ys {
            targets.push(cell(c)?);
        }
    }
    Dataset::new(xs.len(), ys.len(), features, targets)
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let text = fs::read_to_string(sidecar_path(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| DdnError::Format(format!("sidecar line '{l}' has no '='")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ToyTask;
    use crate::rng::seeded;
    use proptest::prelude::*;

    #[test]
    fn dataset_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ring.csv");
        let data = ToyTask::ElasticRing.generate(50, &mut seeded(2));
        let meta = Sidecar::from([("seed".to_string(), "2".to_string()), ("task".into(), "elastic_ring".into())]);
        write_dataset(&path, &data, &meta).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), data);
        assert_eq!(read_sidecar(&path).unwrap(), meta);
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("x0,y0,y1\n"));
    }

    proptest! {
        #[test]
        fn values_survive_text(v in proptest::num::f64::NORMAL) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("d.csv");
            let data = Dataset::new(1, 1, vec![v], vec![-v]).unwrap();
            write_dataset(&path, &data, &Sidecar::new()).unwrap();
            prop_assert_eq!(read_dataset(&path).unwrap(), data);
        }
    }
}
