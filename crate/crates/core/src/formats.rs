//! Plain-text grid and dataset files.
//!
//! Grid files hold one point per line as `x y z` in meters. Dataset files
//! hold, per subject, a `SUBJECT <id>` line, an `ANTHRO` line with the twelve
//! features, and one `MEAS x y z <129 dB values>` line per measurement.
//! In both, `#` starts a comment and blank lines are ignored. Numbers are
//! written with 17 significant digits so files round-trip exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, ParseError, Result};
use crate::geometry::{find_coincident, Grid, Position};
use crate::spectra::{Anthropometry, Dataset, Hrtf, SubjectRecord};
use crate::{ANTHRO_FEATURES, BINS};

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Non-comment content of each line with its 1-based number.
fn content_lines(r: impl BufRead) -> impl Iterator<Item = Result<(usize, String)>> {
    r.lines().enumerate().filter_map(|(i, line)| match line {
        Err(e) => Some(Err(Error::Io(e))),
        Ok(l) => {
            let body = l.split('#').next().unwrap_or("").trim().to_string();
            (!body.is_empty()).then_some(Ok((i + 1, body)))
        }
    })
}

fn parse_floats(line: usize, fields: &[&str], what: &str) -> Result<Vec<f64>, ParseError> {
    fields
        .iter()
        .map(|f| {
            let v: f64 = f
                .parse()
                .map_err(|_| ParseError::new(line, format!("{what}: {f:?} is not a number")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(ParseError::new(line, format!("{what}: non-finite value {f}")))
            }
        })
        .collect()
}

fn position(line: usize, fields: &[&str]) -> Result<Position, ParseError> {
    let v = parse_floats(line, fields, "position")?;
    Ok(Position::new(v[0], v[1], v[2]))
}

pub fn write_grid(w: &mut impl Write, grid: &Grid) -> Result<()> {
    writeln!(w, "# grid kind={} points={}", grid.kind().as_str(), grid.len())?;
    for p in grid.positions() {
        writeln!(w, "{} {} {}", num(p.x), num(p.y), num(p.z))?;
    }
    Ok(())
}

pub fn read_grid(r: impl BufRead) -> Result<Grid> {
    let mut points = Vec::new();
    let mut lines = Vec::new();
    for item in content_lines(r) {
        let (line, body) = item?;
        let fields: Vec<&str> = body.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(ParseError::new(line, format!("expected `x y z`, found {} fields", fields.len())).into());
        }
        let p = position(line, &fields)?;
        if !(p.norm() > 0.0) {
            return Err(ParseError::new(line, "grid point at the origin").into());
        }
        points.push(p);
        lines.push(line);
    }
    if points.is_empty() {
        return Err(ParseError::new(lines.last().copied().unwrap_or(0), "grid file has no points").into());
    }
    if let Some((a, b)) = find_coincident(&points) {
        let (first, second) = (lines[a.min(b)], lines[a.max(b)]);
        return Err(ParseError::new(second, format!("point coincides with line {first}")).into());
    }
    Grid::loaded(points)
}

pub fn write_dataset(w: &mut impl Write, dataset: &Dataset) -> Result<()> {
    writeln!(
        w,
        "# hrtf dataset subjects={} bins={BINS}",
        dataset.subjects().len()
    )?;
    for s in dataset.subjects() {
        writeln!(w, "SUBJECT {}", s.id())?;
        let anthro: Vec<String> = s.anthropometry().features().iter().map(|v| num(*v)).collect();
        writeln!(w, "ANTHRO {}", anthro.join(" "))?;
        for (p, h) in s.measurements() {
            let mut line = format!("MEAS {} {} {}", num(p.x), num(p.y), num(p.z));
            for v in h.bins() {
                line.push(' ');
                line.push_str(&num(*v));
            }
            writeln!(w, "{line}")?;
        }
    }
    Ok(())
}

struct Pending {
    id: String,
    line: usize,
    anthro: Option<Anthropometry>,
    measurements: Vec<(Position, Hrtf)>,
    meas_lines: Vec<usize>,
}

impl Pending {
    fn finish(self) -> Result<SubjectRecord> {
        let anthro = self
            .anthro
            .ok_or_else(|| ParseError::new(self.line, format!("subject {} has no ANTHRO line", self.id)))?;
        if self.measurements.is_empty() {
            return Err(ParseError::new(self.line, format!("subject {} has no measurements", self.id)).into());
        }
        let positions: Vec<Position> = self.measurements.iter().map(|(p, _)| *p).collect();
        if let Some((a, b)) = find_coincident(&positions) {
            let (first, second) = (self.meas_lines[a.min(b)], self.meas_lines[a.max(b)]);
            return Err(ParseError::new(
                second,
                format!("subject {} repeats the position of line {first}", self.id),
            )
            .into());
        }
        let line = self.line;
        SubjectRecord::new(self.id, anthro, self.measurements)
            .map_err(|e| ParseError::new(line, e.to_string()).into())
    }
}

/// Parses a dataset file. Anthropometry is z-scored over the file's subjects.
pub fn read_dataset(r: impl BufRead) -> Result<Dataset> {
    let mut done: Vec<(SubjectRecord, usize)> = Vec::new();
    let mut current: Option<Pending> = None;
    let mut last_line = 0;
    for item in content_lines(r) {
        let (line, body) = item?;
        last_line = line;
        let fields: Vec<&str> = body.split_whitespace().collect();
        match fields[0] {
            "SUBJECT" => {
                if fields.len() != 2 {
                    return Err(ParseError::new(line, "expected `SUBJECT <id>`").into());
                }
                if let Some(p) = current.take() {
                    let l = p.line;
                    done.push((p.finish()?, l));
                }
                let id = fields[1].to_string();
                if done.iter().any(|(s, _)| s.id() == id) {
                    return Err(ParseError::new(line, format!("duplicate subject id {id}")).into());
                }
                current = Some(Pending {
                    id,
                    line,
                    anthro: None,
                    measurements: Vec::new(),
                    meas_lines: Vec::new(),
                });
            }
            "ANTHRO" => {
                let p = current
                    .as_mut()
                    .ok_or_else(|| ParseError::new(line, "ANTHRO before any SUBJECT"))?;
                if p.anthro.is_some() {
                    return Err(ParseError::new(line, "second ANTHRO line for this subject").into());
                }
                if fields.len() - 1 != ANTHRO_FEATURES {
                    return Err(ParseError::new(
                        line,
                        format!("ANTHRO needs {ANTHRO_FEATURES} values, found {}", fields.len() - 1),
                    )
                    .into());
                }
                let values = parse_floats(line, &fields[1..], "ANTHRO")?;
                let a = Anthropometry::from_slice(&values).map_err(|e| ParseError::new(line, e.to_string()))?;
                p.anthro = Some(a);
            }
            "MEAS" => {
                let p = current
                    .as_mut()
                    .ok_or_else(|| ParseError::new(line, "MEAS before any SUBJECT"))?;
                if p.anthro.is_none() {
                    return Err(ParseError::new(line, "MEAS before the subject's ANTHRO line").into());
                }
                if fields.len() - 1 != 3 + BINS {
                    return Err(ParseError::new(
                        line,
                        format!("MEAS needs 3 coordinates and {BINS} values, found {}", fields.len() - 1),
                    )
                    .into());
                }
                let pos = position(line, &fields[1..4])?;
                if !(pos.norm() > 0.0) {
                    return Err(ParseError::new(line, "measurement at the origin").into());
                }
                let bins = parse_floats(line, &fields[4..], "MEAS")?;
                let h = Hrtf::new(bins).map_err(|e| ParseError::new(line, e.to_string()))?;
                p.measurements.push((pos, h));
                p.meas_lines.push(line);
            }
            other => {
                return Err(ParseError::new(line, format!("unknown record {other:?}")).into());
            }
        }
    }
    if let Some(p) = current.take() {
        let l = p.line;
        done.push((p.finish()?, l));
    }
    if done.is_empty() {
        return Err(ParseError::new(last_line, "dataset file has no subjects").into());
    }
    Dataset::ingest(done.into_iter().map(|(s, _)| s).collect())
}

pub fn save_grid(path: &Path, grid: &Grid) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_grid(&mut w, grid)?;
    w.flush()?;
    Ok(())
}

pub fn load_grid(path: &Path) -> Result<Grid> {
    read_grid(BufReader::new(File::open(path)?))
}

pub fn save_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset(&mut w, dataset)?;
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(BufReader::new(File::open(path)?))
}
