//! Run directories and atomic file writes.

use std::io::Write;
use std::path::{Path, PathBuf};

use dfs_core::qmath::CMatrix;
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Writes `bytes` to a temporary file next to `path` and renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn json_bytes<T: Serialize>(value: &T) -> CliResult<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value).map_err(|e| CliError::Serialize(e.to_string()))?;
    v.push(b'\n');
    Ok(v)
}

/// CSV with a header taken from the row type's field names.
pub fn csv_bytes<T: Serialize>(rows: &[T]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Serialize(e.to_string()))?;
    }
    w.into_inner().map_err(|e| CliError::Serialize(e.to_string()))
}

/// Real and imaginary parts as two headerless CSV grids.
pub fn matrix_csv(m: &CMatrix) -> (Vec<u8>, Vec<u8>) {
    let grid = |f: &dyn Fn(usize, usize) -> f64| {
        let mut s = String::new();
        for i in 0..m.rows() {
            let row: Vec<String> = (0..m.cols()).map(|j| format!("{:e}", f(i, j))).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s.into_bytes()
    };
    (grid(&|i, j| m[(i, j)].re), grid(&|i, j| m[(i, j)].im))
}

/// Directory `out/<id>` collecting every file of one scenario.
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    pub fn create(out: &Path, id: &str) -> CliResult<Self> {
        let path = out.join(id);
        std::fs::create_dir_all(&path).map_err(|e| CliError::io(&path, e))?;
        Ok(RunDir { path })
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let p = self.path.join(name);
        atomic_write(&p, bytes)?;
        Ok(p)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<PathBuf> {
        self.write(name, &json_bytes(value)?)
    }

    pub fn write_csv<T: Serialize>(&self, name: &str, rows: &[T]) -> CliResult<PathBuf> {
        self.write(name, &csv_bytes(rows)?)
    }

    /// Writes `<stem>_re.csv` and `<stem>_im.csv`.
    pub fn write_matrix(&self, stem: &str, m: &CMatrix) -> CliResult<()> {
        let (re, im) = matrix_csv(m);
        self.write(&format!("{stem}_re.csv"), &re)?;
        self.write(&format!("{stem}_im.csv"), &im)?;
        Ok(())
    }
}

/// Parses a grid written by [`matrix_csv`] back into complex entries.
pub fn read_matrix_csv(re: &str, im: &str) -> CliResult<CMatrix> {
    let parse = |text: &str| -> CliResult<Vec<Vec<f64>>> {
        text.lines()
            .filter(|l| !l.is_empty())
            .map(|l| {
                l.split(',')
                    .map(|x| x.trim().parse::<f64>().map_err(|e| CliError::Serialize(format!("{x}: {e}"))))
                    .collect()
            })
            .collect()
    };
    let (r, i) = (parse(re)?, parse(im)?);
    let rows = r.len();
    let cols = r.first().map_or(0, |x| x.len());
    if rows == 0 || i.len() != rows || r.iter().chain(&i).any(|row| row.len() != cols) {
        return Err(CliError::Serialize("ragged matrix csv".into()));
    }
    let mut m = CMatrix::zeros(rows, cols);
    for a in 0..rows {
        for b in 0..cols {
            m[(a, b)] = dfs_core::C64::new(r[a][b], i[a][b]);
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use dfs_core::qmath::pauli;

    #[test]
    fn matrix_round_trip() {
        let m = &pauli::y().scale_re(0.1 / 3.0) + &pauli::x();
        let (re, im) = matrix_csv(&m);
        let back = read_matrix_csv(std::str::from_utf8(&re).unwrap(), std::str::from_utf8(&im).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        atomic_write(&p, b"one").unwrap();
        atomic_write(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
