use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::Species;

/// Observed or simulated time series of one patient.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub patient_id: String,
    pub times: Vec<f64>,
    pub a: Vec<Vec<f64>>,
    pub tau: Vec<Vec<f64>>,
    pub n: Vec<Vec<f64>>,
    pub c: Option<Vec<f64>>,
}

impl Trajectory {
    pub fn validate(&self) -> Result<()> {
        crate::spectral::check_times(&self.times)?;
        let nt = self.times.len();
        let nodes = self.a.first().map_or(0, Vec::len);
        for (what, series) in [("A series", &self.a), ("tau series", &self.tau), ("N series", &self.n)] {
            if series.len() != nt {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: nt,
                    got: series.len(),
                });
            }
            if let Some(bad) = series.iter().find(|v| v.len() != nodes) {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: nodes,
                    got: bad.len(),
                });
            }
        }
        if let Some(c) = &self.c {
            if c.len() != nt {
                return Err(Error::DimensionMismatch {
                    what: "cognitive series",
                    expected: nt,
                    got: c.len(),
                });
            }
        }
        Ok(())
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.a.first().map_or(0, Vec::len)
    }

    /// Nodal series of a spatial species.
    pub fn field(&self, s: Species) -> &[Vec<f64>] {
        match s {
            Species::A => &self.a,
            Species::Tau => &self.tau,
            Species::N => &self.n,
            Species::C => panic!("C is a scalar series"),
        }
    }

    /// Time points `range` of this trajectory.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Trajectory {
        Trajectory {
            patient_id: self.patient_id.clone(),
            times: self.times[range.clone()].to_vec(),
            a: self.a[range.clone()].to_vec(),
            tau: self.tau[range.clone()].to_vec(),
            n: self.n[range.clone()].to_vec(),
            c: self.c.as_ref().map(|c| c[range].to_vec()),
        }
    }

    /// Number of leading time points used for training: `ceil(frac * n_times)`.
    pub fn train_len(&self, frac: f64) -> usize {
        ((frac * self.n_times() as f64 - 1e-9).ceil() as usize).clamp(1, self.n_times())
    }

    fn file(dir: &Path, id: &str, tag: &str) -> PathBuf {
        dir.join(format!("{id}_{tag}.csv"))
    }

    /// One CSV per species (`<id>_A.csv`, `<id>_tau.csv`, `<id>_N.csv`, `<id>_C.csv`).
    pub fn save_csv(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for s in Species::FIELDS {
            let path = Self::file(dir, &self.patient_id, s.tag());
            let mut text = String::from("t");
            for i in 0..self.n_nodes() {
                write!(text, ",node_{i}").unwrap();
            }
            text.push('\n');
            for (t, row) in self.times.iter().zip(self.field(s)) {
                write!(text, "{}", fmt_num(*t)).unwrap();
                for v in row {
                    write!(text, ",{}", fmt_num(*v)).unwrap();
                }
                text.push('\n');
            }
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        if let Some(c) = &self.c {
            let path = Self::file(dir, &self.patient_id, "C");
            let mut text = String::from("t,C\n");
            for (t, v) in self.times.iter().zip(c) {
                writeln!(text, "{},{}", fmt_num(*t), fmt_num(*v)).unwrap();
            }
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    /// Reads the files written by [`save_csv`](Self::save_csv); the cognitive
    /// file is optional.
    pub fn load_csv(dir: impl AsRef<Path>, patient_id: &str) -> Result<Trajectory> {
        let dir = dir.as_ref();
        let mut times = None;
        let mut series = Vec::new();
        for s in Species::FIELDS {
            let path = Self::file(dir, patient_id, s.tag());
            let (t, rows) = read_table(&path)?;
            if let Some(prev) = &times {
                if prev != &t {
                    return Err(Error::Parse {
                        path,
                        line: 2,
                        msg: "time column differs from the A file".into(),
                    });
                }
            }
            times = Some(t);
            series.push(rows);
        }
        let cpath = Self::file(dir, patient_id, "C");
        let c = if cpath.exists() {
            let (t, rows) = read_table(&cpath)?;
            if Some(&t) != times.as_ref() || rows.iter().any(|r| r.len() != 1) {
                return Err(Error::Parse {
                    path: cpath,
                    line: 1,
                    msg: "cognitive file must have columns t,C on the same time grid".into(),
                });
            }
            Some(rows.into_iter().map(|r| r[0]).collect())
        } else {
            None
        };
        let n = series.pop().unwrap();
        let tau = series.pop().unwrap();
        let a = series.pop().unwrap();
        let traj = Trajectory {
            patient_id: patient_id.to_string(),
            times: times.unwrap(),
            a,
            tau,
            n,
            c,
        };
        traj.validate()?;
        Ok(traj)
    }
}

/// 17 significant digits, enough to read back the identical `f64`.
pub(crate) fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

fn read_table(path: &Path) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| perr(1, "empty file".into()))?;
    let width = header.split(',').count();
    if !header.starts_with('t') || width < 2 {
        return Err(perr(1, format!("unexpected header `{header}`")));
    }
    let mut times = Vec::new();
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| perr(i + 1, e.to_string()))?;
        if vals.len() != width {
            return Err(perr(i + 1, format!("expected {width} columns, found {}", vals.len())));
        }
        times.push(vals[0]);
        rows.push(vals[1..].to_vec());
    }
    Ok((times, rows))
}
