use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rand::seq::SliceRandom;

use super::Dataset;
use crate::error::{DdnError, Result};
use crate::rng::{streams, substream};

/// Share of rows used for training.
pub const TRAIN_FRACTION: f64 = 0.3;

/// Training-split mean and population standard deviation of one column.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColumnStats {
    pub mean: f64,
    pub std: f64,
}

impl ColumnStats {
    fn of(values: impl Iterator<Item = f64> + Clone, name: &str) -> Result<Self> {
        let n = values.clone().count() as f64;
        let mean = values.clone().sum::<f64>() / n;
        let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        if !(var > 0.0) {
            return Err(DdnError::ZeroVariance(name.to_string()));
        }
        Ok(Self { mean, std: var.sqrt() })
    }

    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}

/// A z-scored tabular dataset with one train/test split.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularDataset {
    pub name: String,
    pub feature_names: Vec<String>,
    pub target_names: Vec<String>,
    pub train: Dataset,
    pub test: Dataset,
    pub feature_stats: Vec<ColumnStats>,
    pub target_stats: Vec<ColumnStats>,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    pub seed: u64,
    pub trial: u64,
}

impl TabularDataset {
    /// Target ranges derived from the normalized training targets.
    pub fn ranges(&self) -> Vec<(f64, f64)> {
        self.train.padded_ranges()
    }
}

/// Shuffled split of `0..rows` into `round(0.3 * rows)` training rows and
/// the rest; both lists are returned sorted.
pub fn split_indices(rows: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..rows).collect();
    order.shuffle(&mut substream(seed, streams::SPLIT));
    let n_train = (TRAIN_FRACTION * rows as f64).round() as usize;
    let mut train = order[..n_train].to_vec();
    let mut test = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

fn detect_delimiter(header: &str) -> u8 {
    [b',', b';', b'\t']
        .into_iter()
        .max_by_key(|&d| header.bytes().filter(|&b| b == d).count())
        .filter(|&d| header.bytes().any(|b| b == d))
        .unwrap_or(b',')
}

fn resolve_column(headers: &[String], spec: &str) -> Result<usize> {
    if let Some(i) = headers.iter().position(|h| h == spec) {
        return Ok(i);
    }
    match spec.parse::<usize>() {
        Ok(i) if i < headers.len() => Ok(i),
        _ => Err(DdnError::config(format!(
            "no column '{spec}' (columns: {})",
            headers.join(", ")
        ))),
    }
}

/// Reads a delimited numeric table, with or without a header row. `targets` names the
/// target columns by header or zero-based index; all other columns are
/// features. Rows are split with the trial's seed, then features and
/// targets are z-scored with training-split statistics.
pub fn load_tabular(path: &Path, targets: &[String], seed: u64, trial: u64) -> Result<TabularDataset> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    let header_line = BufReader::new(text.as_bytes()).lines().next().transpose()?.unwrap_or_default();
    let delimiter = detect_delimiter(&header_line);
    // a first line made only of numbers is data; columns are then named c0, c1, ..
    let headerless = header_line
        .split(delimiter as char)
        .all(|f| f.trim().parse::<f64>().is_ok());
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(!headerless)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = if headerless {
        (0..header_line.split(delimiter as char).count()).map(|i| format!("c{i}")).collect()
    } else {
        reader
            .headers()
            .map_err(|e| DdnError::Parse { row: 1, column: 0, message: e.to_string() })?
            .iter()
            .map(str::to_string)
            .collect()
    };
    let first_line = if headerless { 1 } else { 2 };
    if targets.is_empty() {
        return Err(DdnError::config("at least one target column is required"));
    }
    let target_idx: Vec<usize> = targets.iter().map(|t| resolve_column(&headers, t)).collect::<Result<_>>()?;
    let feature_idx: Vec<usize> = (0..headers.len()).filter(|i| !target_idx.contains(i)).collect();
    if feature_idx.is_empty() {
        return Err(DdnError::config("no feature columns remain"));
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let line = r + first_line;
        let record = record.map_err(|e| DdnError::Parse { row: line, column: 0, message: e.to_string() })?;
        if record.len() != headers.len() {
            return Err(DdnError::Parse {
                row: line,
                column: record.len() + 1,
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let values = record
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| DdnError::Parse {
                    row: line,
                    column: c + 1,
                    message: format!("'{cell}' is not a finite number"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(values);
    }
    if rows.len() < 2 {
        return Err(DdnError::config("need at least two data rows to split"));
    }

    let (train_rows, test_rows) = split_indices(rows.len(), seed);
    let stats_for = |cols: &[usize]| -> Result<Vec<ColumnStats>> {
        cols.iter()
            .map(|&c| ColumnStats::of(train_rows.iter().map(|&r| rows[r][c]), &headers[c]))
            .collect()
    };
    let feature_stats = stats_for(&feature_idx)?;
    let target_stats = stats_for(&target_idx)?;

    let build = |which: &[usize]| -> Result<Dataset> {
        let mut xs = Vec::with_capacity(which.len() * feature_idx.len());
        let mut ys = Vec::with_capacity(which.len() * target_idx.len());
        for &r in which {
            xs.extend(feature_idx.iter().zip(&feature_stats).map(|(&c, s)| s.normalize(rows[r][c])));
            ys.extend(target_idx.iter().zip(&target_stats).map(|(&c, s)| s.normalize(rows[r][c])));
        }
        Dataset::new(feature_idx.len(), target_idx.len(), xs, ys)
    };

    Ok(TabularDataset {
        name: path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        feature_names: feature_idx.iter().map(|&c| headers[c].clone()).collect(),
        target_names: target_idx.iter().map(|&c| headers[c].clone()).collect(),
        train: build(&train_rows)?,
        test: build(&test_rows)?,
        feature_stats,
        target_stats,
        train_rows,
        test_rows,
        seed,
        trial,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn table(rows: usize) -> String {
        let mut s = String::from("a;b;c;t\n");
        for i in 0..rows {
            let v = i as f64;
            s.push_str(&format!("{};{};{};{}\n", v, (v * 0.7).sin(), v * v, 2.0 * v + 1.0));
        }
        s
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let (train, test) = split_indices(768, 4);
        assert_eq!(train.len(), 230);
        assert_eq!(train.len() + test.len(), 768);
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..768).collect::<Vec<_>>());
        assert_ne!(split_indices(768, 5).0, train);
    }

    #[test]
    fn z_scores_use_training_rows() {
        let f = write(&table(100));
        let d = load_tabular(f.path(), &["t".into()], 3, 0).unwrap();
        assert_eq!(d.feature_names, vec!["a", "b", "c"]);
        assert_eq!(d.train.len(), 30);
        assert_eq!(d.test.len(), 70);
        for j in 0..3 {
            let col: Vec<f64> = (0..d.train.len()).map(|r| d.train.x(r)[j]).collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
            assert!(mean.abs() <= 1e-6);
            assert!((var - 1.0).abs() <= 1e-4);
        }
        let again = load_tabular(f.path(), &["3".into()], 3, 0).unwrap();
        assert_eq!(again.train, d.train);
    }

    #[test]
    fn parse_errors_carry_position() {
        let f = write("a,b\n1,2\n3,x\n");
        match load_tabular(f.path(), &["b".into()], 0, 0) {
            Err(DdnError::Parse { row, column, .. }) => assert_eq!((row, column), (3, 2)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn constant_column_rejected() {
        let f = write("a,k,t\n1,5,1\n2,5,3\n3,5,2\n4,5,8\n5,5,1\n6,5,0\n7,5,3\n");
        assert!(matches!(
            load_tabular(f.path(), &["t".into()], 0, 0),
            Err(DdnError::ZeroVariance(c)) if c == "k"
        ));
    }

    #[test]
    fn headerless_table() {
        let body: String = table(40).lines().skip(1).map(|l| format!("{l}\n")).collect();
        let f = write(&body);
        let d = load_tabular(f.path(), &["3".into()], 3, 0).unwrap();
        assert_eq!(d.feature_names, vec!["c0", "c1", "c2"]);
        assert_eq!(d.train.len() + d.test.len(), 40);
        let bad = write("1;2\n3;x\n");
        match load_tabular(bad.path(), &["c1".into()], 0, 0) {
            Err(DdnError::Parse { row, column, .. }) => assert_eq!((row, column), (2, 2)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_target_column() {
        let f = write(&table(10));
        assert!(matches!(load_tabular(f.path(), &["zz".into()], 0, 0), Err(DdnError::Config(_))));
    }
}
