//! On-disk formats: TOML metadata next to CSV tables, written atomically.
//! Floats carry 17 significant digits so they round-trip exactly.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::trajectory::{TrajectoryEnsemble, TrajectoryError};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Write to a sibling temporary file, then rename over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(contents).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    drop(f);
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(io_err(path))
}

pub fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let text = toml::to_string(value).map_err(|e| IoError::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    write_atomic(path, text.as_bytes())
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = read_text(path)?;
    toml::from_str(&text).map_err(|e| IoError::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

/// Hex SHA-256 of a byte string.
pub fn hash_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Numeric table; the first `int_cols` columns are written as integers.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub int_cols: usize,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: Vec<String>, int_cols: usize) -> Self {
        Self {
            header,
            int_cols,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(i, v)| if i < self.int_cols { format!("{}", *v as i64) } else { fmt_f64(*v) })
                .collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        write_atomic(path, self.to_csv().as_bytes())
    }

    pub fn load(path: &Path, int_cols: usize) -> Result<Self, IoError> {
        let text = read_text(path)?;
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let header: Vec<String> = match lines.next() {
            Some((_, h)) => h.split(',').map(|s| s.trim().to_string()).collect(),
            None => {
                return Err(IoError::Format {
                    path: path.to_path_buf(),
                    msg: "empty table".into(),
                })
            }
        };
        let mut rows = Vec::new();
        for (i, line) in lines {
            let row: Result<Vec<f64>, _> = line.split(',').map(|c| c.trim().parse::<f64>()).collect();
            let row = row.map_err(|e| IoError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })?;
            if row.len() != header.len() {
                return Err(IoError::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: format!("{} cells, header has {}", row.len(), header.len()),
                });
            }
            rows.push(row);
        }
        Ok(Self { header, int_cols, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[c]).collect())
    }
}

/// Rows `(trajectory_id, time_index, value_0, ...)` for a set of paths laid
/// out like the ensemble, `n_times * dim` values each.
pub fn paths_table(paths: &[Vec<f64>], n_times: usize, dim: usize) -> Table {
    let mut header = vec!["trajectory_id".to_string(), "time_index".to_string()];
    header.extend((0..dim).map(|d| format!("value_{d}")));
    let mut t = Table::new(header, 2);
    for (j, p) in paths.iter().enumerate() {
        for k in 0..n_times {
            let mut row = vec![j as f64, k as f64];
            row.extend_from_slice(&p[k * dim..(k + 1) * dim]);
            t.push(row);
        }
    }
    t
}

pub fn paths_from_table(t: &Table, path: &Path) -> Result<(usize, usize, Vec<Vec<f64>>), IoError> {
    let bad = |msg: String| IoError::Format {
        path: path.to_path_buf(),
        msg,
    };
    if t.header.len() < 3 || t.header[0] != "trajectory_id" || t.header[1] != "time_index" {
        return Err(bad("expected columns trajectory_id,time_index,value_0,...".into()));
    }
    let dim = t.header.len() - 2;
    let n_traj = t.rows.iter().map(|r| r[0] as usize + 1).max().unwrap_or(0);
    let n_times = t.rows.iter().map(|r| r[1] as usize + 1).max().unwrap_or(0);
    if t.rows.len() != n_traj * n_times {
        return Err(bad(format!("{} rows, expected {n_traj} x {n_times}", t.rows.len())));
    }
    let mut paths = vec![vec![f64::NAN; n_times * dim]; n_traj];
    for r in &t.rows {
        let (j, k) = (r[0] as usize, r[1] as usize);
        paths[j][k * dim..(k + 1) * dim].copy_from_slice(&r[2..]);
    }
    if paths.iter().flatten().any(|v| v.is_nan()) {
        return Err(bad("missing or non-numeric entries".into()));
    }
    Ok((n_times, dim, paths))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub kind: String,
    pub seed: u64,
    pub config_hash: String,
    pub n_traj: usize,
    pub n_times: usize,
    pub dim: usize,
    pub times: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inputs: Option<Vec<Vec<f64>>>,
}

pub const DATASET_META: &str = "dataset.toml";
pub const DATASET_TABLE: &str = "dataset.csv";

pub fn save_dataset(dir: &Path, data: &TrajectoryEnsemble, kind: &str, seed: u64, config_hash: &str) -> Result<DatasetMeta, IoError> {
    let meta = DatasetMeta {
        kind: kind.to_string(),
        seed,
        config_hash: config_hash.to_string(),
        n_traj: data.n_traj(),
        n_times: data.n_times(),
        dim: data.dim(),
        times: data.times().to_vec(),
        inputs: data.inputs().map(<[Vec<f64>]>::to_vec),
    };
    let paths: Vec<Vec<f64>> = (0..data.n_traj()).map(|j| data.path(j).to_vec()).collect();
    paths_table(&paths, data.n_times(), data.dim()).save(&dir.join(DATASET_TABLE))?;
    write_toml(&dir.join(DATASET_META), &meta)?;
    Ok(meta)
}

pub fn load_dataset(dir: &Path) -> Result<(TrajectoryEnsemble, DatasetMeta), IoError> {
    let meta: DatasetMeta = read_toml(&dir.join(DATASET_META))?;
    let table_path = dir.join(DATASET_TABLE);
    let table = Table::load(&table_path, 2)?;
    let (n_times, dim, paths) = paths_from_table(&table, &table_path)?;
    if n_times != meta.n_times || dim != meta.dim || paths.len() != meta.n_traj || meta.times.len() != n_times {
        return Err(IoError::Format {
            path: table_path,
            msg: "table shape disagrees with metadata".into(),
        });
    }
    let mut data = TrajectoryEnsemble::new(meta.times.clone(), dim, paths.concat())?;
    if let Some(inputs) = &meta.inputs {
        data = data.with_inputs(inputs.clone())?;
    }
    Ok((data, meta))
}

/// One value per line.
pub fn save_params(path: &Path, params: &[f64]) -> Result<(), IoError> {
    let mut s = String::with_capacity(params.len() * 24);
    for p in params {
        s.push_str(&fmt_f64(*p));
        s.push('\n');
    }
    write_atomic(path, s.as_bytes())
}

pub fn load_params(path: &Path) -> Result<Vec<f64>, IoError> {
    read_text(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<f64>().map_err(|e| IoError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data = TrajectoryEnsemble::new(vec![0.0, 0.5, 1.0], 2, (0..12).map(|i| i as f64 / 7.0).collect())
            .unwrap()
            .with_inputs(vec![vec![1.0], vec![2.0], vec![3.0]])
            .unwrap();
        save_dataset(dir.path(), &data, "custom", 4, "abc").unwrap();
        let (back, meta) = load_dataset(dir.path()).unwrap();
        assert_eq!(back, data);
        assert_eq!(meta.n_traj, 2);
        assert_eq!(meta.kind, "custom");
    }

    #[test]
    fn table_rejects_ragged_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        std::fs::write(&p, "a,b\n1,2\n3\n").unwrap();
        assert!(matches!(Table::load(&p, 0), Err(IoError::Parse { line: 3, .. })));
    }

    #[test]
    fn atomic_write_leaves_no_temporaries() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("x.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(
            hash_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    proptest! {
        #[test]
        fn params_round_trip_bit_exact(v in proptest::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 0..40)) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("w.params");
            save_params(&p, &v).unwrap();
            let back = load_params(&p).unwrap();
            prop_assert_eq!(back.len(), v.len());
            for (a, b) in back.iter().zip(&v) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
