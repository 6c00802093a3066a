//! Plain-text containers for trajectories, demonstrations, controllers and
//! fitted models.
//!
//! Every float is written with 17 significant digits, which round-trips an
//! `f64` exactly. Matrices are row-major, one row per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::types::{
    Demonstration, DemonstrationSet, LinearGaussianDynamics, StatePath, Trajectory, TvlgController,
};

/// Shortest fixed-precision form that round-trips a 64-bit float.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_row<'a, W: Write>(w: &mut W, values: impl IntoIterator<Item = &'a f64>) -> Result<()> {
    let row: Vec<String> = values.into_iter().map(|&x| format_float(x)).collect();
    writeln!(w, "{}", row.join(" "))?;
    Ok(())
}

pub fn write_matrix<W: Write>(w: &mut W, m: &DMatrix<f64>) -> Result<()> {
    for r in 0..m.nrows() {
        let row: Vec<f64> = m.row(r).iter().copied().collect();
        write_row(w, &row)?;
    }
    Ok(())
}

/// Line-oriented reader that skips blank lines and remembers line numbers.
pub struct LineReader<R> {
    inner: R,
    line: usize,
    buf: String,
}

impl<R: BufRead> LineReader<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            line: 0,
            buf: String::new(),
        }
    }

    pub fn line_number(&self) -> usize {
        self.line
    }

    pub fn error(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line,
            message: message.into(),
        }
    }

    pub fn next_line(&mut self) -> Result<Option<&str>> {
        loop {
            self.buf.clear();
            if self.inner.read_line(&mut self.buf)? == 0 {
                return Ok(None);
            }
            self.line += 1;
            if !self.buf.trim().is_empty() {
                return Ok(Some(self.buf.trim()));
            }
        }
    }

    pub fn expect_line(&mut self) -> Result<String> {
        match self.next_line()? {
            Some(l) => Ok(l.to_owned()),
            None => Err(self.error("unexpected end of file")),
        }
    }

    pub fn read_floats(&mut self, expected: usize) -> Result<Vec<f64>> {
        let line = self.expect_line()?;
        let values = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|e| self.error(format!("bad float {tok:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if values.len() != expected {
            return Err(self.error(format!(
                "expected {expected} values, found {}",
                values.len()
            )));
        }
        Ok(values)
    }

    pub fn read_vector(&mut self, len: usize) -> Result<DVector<f64>> {
        Ok(DVector::from_vec(self.read_floats(len)?))
    }

    pub fn read_matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            data.extend(self.read_floats(cols)?);
        }
        Ok(DMatrix::from_row_slice(rows, cols, &data))
    }

    /// Parses a `[tag] key=value key=value ...` header, checking keys in order.
    pub fn read_header(&mut self, tag: Option<&str>, keys: &[&str]) -> Result<Vec<usize>> {
        let line = self.expect_line()?;
        let mut tokens = line.split_whitespace();
        if let Some(tag) = tag {
            if tokens.next() != Some(tag) {
                return Err(self.error(format!("expected header tag {tag:?}")));
            }
        }
        let mut out = Vec::with_capacity(keys.len());
        for key in keys {
            let tok = tokens
                .next()
                .ok_or_else(|| self.error(format!("missing header field {key}")))?;
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| self.error(format!("malformed header field {tok:?}")))?;
            if k != *key {
                return Err(self.error(format!("expected header field {key}, found {k}")));
            }
            out.push(
                v.parse()
                    .map_err(|e| self.error(format!("bad value for {key}: {e}")))?,
            );
        }
        if let Some(extra) = tokens.next() {
            return Err(self.error(format!("unexpected header field {extra:?}")));
        }
        Ok(out)
    }

    fn expect_eof(&mut self) -> Result<()> {
        match self.next_line()? {
            None => Ok(()),
            Some(_) => Err(self.error("trailing data after last record")),
        }
    }
}

fn parse_err(e: Error, line: usize) -> Error {
    match e {
        Error::Parse { .. } => e,
        other => Error::Parse {
            line,
            message: other.to_string(),
        },
    }
}

pub fn write_trajectories<W: Write>(w: &mut W, trajs: &[Trajectory]) -> Result<()> {
    let first = trajs
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot write an empty trajectory set".into()))?;
    let (n, m, horizon) = (first.state_dim(), first.action_dim(), first.horizon());
    writeln!(w, "n={n} m={m} T={horizon} count={}", trajs.len())?;
    for traj in trajs {
        if traj.state_dim() != n || traj.action_dim() != m || traj.horizon() != horizon {
            return Err(Error::InvalidArgument(
                "trajectories have mixed shapes".into(),
            ));
        }
        for s in traj.states() {
            write_row(w, s.iter())?;
        }
        for a in traj.actions() {
            write_row(w, a.iter())?;
        }
    }
    Ok(())
}

pub fn read_trajectories<R: BufRead>(r: R) -> Result<Vec<Trajectory>> {
    let mut lr = LineReader::new(r);
    let h = lr.read_header(None, &["n", "m", "T", "count"])?;
    let (n, m, horizon, count) = (h[0], h[1], h[2], h[3]);
    if m == 0 {
        return Err(lr.error("m=0 denotes a demonstration file; expected trajectories"));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let states = (0..=horizon)
            .map(|_| lr.read_vector(n))
            .collect::<Result<Vec<_>>>()?;
        let actions = (0..horizon)
            .map(|_| lr.read_vector(m))
            .collect::<Result<Vec<_>>>()?;
        out.push(Trajectory::new(states, actions).map_err(|e| parse_err(e, lr.line_number()))?);
    }
    lr.expect_eof()?;
    Ok(out)
}

pub fn write_demonstrations<W: Write>(w: &mut W, demos: &DemonstrationSet) -> Result<()> {
    writeln!(
        w,
        "n={} m=0 T={} count={}",
        demos.state_dim(),
        demos.horizon(),
        demos.len()
    )?;
    for d in demos.demos() {
        for s in d.states() {
            write_row(w, s.iter())?;
        }
    }
    Ok(())
}

pub fn read_demonstrations<R: BufRead>(r: R) -> Result<DemonstrationSet> {
    let mut lr = LineReader::new(r);
    let h = lr.read_header(None, &["n", "m", "T", "count"])?;
    let (n, m, horizon, count) = (h[0], h[1], h[2], h[3]);
    if m != 0 {
        return Err(lr.error(format!("demonstration files must declare m=0, found m={m}")));
    }
    let mut demos = Vec::with_capacity(count);
    for _ in 0..count {
        let states = (0..=horizon)
            .map(|_| lr.read_vector(n))
            .collect::<Result<Vec<_>>>()?;
        demos.push(Demonstration::new(states).map_err(|e| parse_err(e, lr.line_number()))?);
    }
    lr.expect_eof()?;
    DemonstrationSet::new(demos)
}

pub fn write_controller<W: Write>(w: &mut W, ctrl: &TvlgController) -> Result<()> {
    writeln!(
        w,
        "controller n={} m={} T={}",
        ctrl.state_dim(),
        ctrl.action_dim(),
        ctrl.horizon()
    )?;
    for t in 0..ctrl.horizon() {
        write_matrix(w, ctrl.gain(t))?;
        write_row(w, ctrl.offset(t).iter())?;
        write_matrix(w, ctrl.covariance(t))?;
    }
    Ok(())
}

pub fn read_controller<R: BufRead>(r: R) -> Result<TvlgController> {
    let mut lr = LineReader::new(r);
    let h = lr.read_header(Some("controller"), &["n", "m", "T"])?;
    let (n, m, horizon) = (h[0], h[1], h[2]);
    let (mut gains, mut offsets, mut covs) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..horizon {
        gains.push(lr.read_matrix(m, n)?);
        offsets.push(lr.read_vector(m)?);
        covs.push(lr.read_matrix(m, m)?);
    }
    lr.expect_eof()?;
    TvlgController::new(gains, offsets, covs).map_err(|e| parse_err(e, lr.line_number()))
}

pub fn write_dynamics<W: Write>(w: &mut W, dynamics: &LinearGaussianDynamics) -> Result<()> {
    writeln!(
        w,
        "dynamics n={} m={} T={}",
        dynamics.state_dim(),
        dynamics.action_dim(),
        dynamics.horizon()
    )?;
    for t in 0..dynamics.horizon() {
        write_matrix(w, dynamics.transition(t))?;
        write_row(w, dynamics.drift(t).iter())?;
        write_matrix(w, dynamics.noise(t))?;
    }
    Ok(())
}

pub fn read_dynamics<R: BufRead>(r: R) -> Result<LinearGaussianDynamics> {
    let mut lr = LineReader::new(r);
    let h = lr.read_header(Some("dynamics"), &["n", "m", "T"])?;
    let (n, m, horizon) = (h[0], h[1], h[2]);
    let (mut fs, mut ds, mut ss) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..horizon {
        fs.push(lr.read_matrix(n, n + m)?);
        ds.push(lr.read_vector(n)?);
        ss.push(lr.read_matrix(n, n)?);
    }
    lr.expect_eof()?;
    LinearGaussianDynamics::new(n, m, fs, ds, ss).map_err(|e| parse_err(e, lr.line_number()))
}

/// Writes through a buffered file handle.
pub fn save<P, F>(path: P, write: F) -> Result<()>
where
    P: AsRef<Path>,
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    let mut w = BufWriter::new(File::create(path)?);
    write(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load<P, T, F>(path: P, read: F) -> Result<T>
where
    P: AsRef<Path>,
    F: FnOnce(BufReader<File>) -> Result<T>,
{
    read(BufReader::new(File::open(path)?))
}
