//! Spectra, subjects and datasets.
//!
//! An [`Hrtf`] here is a dB magnitude spectrum of [`BINS`] bins, obtained
//! from a 256-sample HRIR with an unnormalized real FFT, so a unit impulse
//! maps to a flat 0 dB response. Magnitudes are floored at `1e-12`
//! (-240 dB) before taking the logarithm.

mod synth;

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::geometry::{Grid, Position, COINCIDENT_EPS};
use crate::{ANTHRO_FEATURES, BINS, HRIR_LEN, SAMPLE_RATE};

pub use synth::{
    make_synthetic_dataset, random_anthropometry, synth_hrtf, synthetic_dataset_from,
    FieldSpec, ANTHRO_PRIORS_CM,
};

/// Linear magnitude floor applied before conversion to dB.
pub const MAG_FLOOR: f64 = 1e-12;
/// The dB value of [`MAG_FLOOR`].
pub const DB_FLOOR: f64 = -240.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Hrir {
    samples: Vec<f64>,
    sample_rate: f64,
}

impl Hrir {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.len() != HRIR_LEN {
            return Err(Error::Shape(format!(
                "HRIR needs {HRIR_LEN} samples, got {}",
                samples.len()
            )));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite {
                name: "hrir".into(),
            });
        }
        Ok(Self {
            samples,
            sample_rate: SAMPLE_RATE,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }
}

/// A dB log-magnitude spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct Hrtf {
    bins: Vec<f64>,
}

impl Hrtf {
    pub fn new(bins: Vec<f64>) -> Result<Self> {
        if bins.len() != BINS {
            return Err(Error::Shape(format!(
                "HRTF needs {BINS} bins, got {}",
                bins.len()
            )));
        }
        if let Some(k) = bins.iter().position(|b| !b.is_finite()) {
            return Err(Error::NonFinite {
                name: format!("hrtf bin {k}"),
            });
        }
        if let Some(k) = bins.iter().position(|&b| b < DB_FLOOR) {
            return Err(Error::Domain(format!(
                "bin {k} = {} dB is below the {DB_FLOOR} dB floor",
                bins[k]
            )));
        }
        Ok(Self { bins })
    }

    /// Every bin at `db`.
    pub fn flat(db: f64) -> Self {
        Self { bins: vec![db; BINS] }
    }

    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    pub fn into_bins(self) -> Vec<f64> {
        self.bins
    }
}

impl AsRef<[f64]> for Hrtf {
    fn as_ref(&self) -> &[f64] {
        &self.bins
    }
}

thread_local! {
    static FFT: RefCell<Option<Arc<dyn Fft<f64>>>> = const { RefCell::new(None) };
}

/// Linear magnitudes of the first [`BINS`] bins of the unnormalized DFT.
pub fn hrir_magnitudes(h: &Hrir) -> Vec<f64> {
    let fft = FFT.with(|cell| {
        cell.borrow_mut()
            .get_or_insert_with(|| FftPlanner::new().plan_fft_forward(HRIR_LEN))
            .clone()
    });
    let mut buf: Vec<Complex<f64>> = h.samples.iter().map(|&s| Complex::new(s, 0.0)).collect();
    fft.process(&mut buf);
    buf[..BINS].iter().map(|c| c.norm()).collect()
}

/// `20 log10 |FFT(h)|` over DC..Nyquist.
pub fn hrir_to_hrtf(h: &Hrir) -> Hrtf {
    let bins = hrir_magnitudes(h)
        .into_iter()
        .map(|m| 20.0 * m.max(MAG_FLOOR).log10())
        .collect();
    Hrtf { bins }
}

/// Log-spectral distance: RMS difference in dB.
pub fn lsd(x: &Hrtf, y: &Hrtf) -> f64 {
    lsd_slices(&x.bins, &y.bins)
}

pub fn lsd_slices(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "lsd of spectra with different bin counts");
    let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (sq / x.len() as f64).sqrt()
}

/// Per-feature z-score statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    mean: [f64; ANTHRO_FEATURES],
    std: [f64; ANTHRO_FEATURES],
}

impl NormStats {
    pub fn new(mean: [f64; ANTHRO_FEATURES], std: [f64; ANTHRO_FEATURES]) -> Result<Self> {
        if mean.iter().chain(&std).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                name: "anthropometry statistics".into(),
            });
        }
        if let Some(j) = std.iter().position(|&s| s <= 0.0) {
            return Err(Error::Config(format!(
                "feature {j} has non-positive standard deviation"
            )));
        }
        Ok(Self { mean, std })
    }

    /// Population statistics over the given subjects. Features with no spread
    /// (for instance a single subject) get unit deviation.
    pub fn from_features(rows: &[[f64; ANTHRO_FEATURES]]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Config("no subjects to compute statistics from".into()));
        }
        let n = rows.len() as f64;
        let mut mean = [0.0; ANTHRO_FEATURES];
        let mut std = [0.0; ANTHRO_FEATURES];
        for j in 0..ANTHRO_FEATURES {
            mean[j] = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
            std[j] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        }
        Self::new(mean, std)
    }

    pub fn mean(&self) -> &[f64; ANTHRO_FEATURES] {
        &self.mean
    }

    pub fn std(&self) -> &[f64; ANTHRO_FEATURES] {
        &self.std
    }
}

/// Raw anthropometric features plus the statistics they are normalized with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anthropometry {
    features: [f64; ANTHRO_FEATURES],
    norm: Option<NormStats>,
}

impl Anthropometry {
    pub fn new(features: [f64; ANTHRO_FEATURES]) -> Result<Self> {
        if features.iter().any(|f| !f.is_finite()) {
            return Err(Error::NonFinite {
                name: "anthropometry".into(),
            });
        }
        Ok(Self {
            features,
            norm: None,
        })
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let features: [f64; ANTHRO_FEATURES] = values.try_into().map_err(|_| {
            Error::Shape(format!(
                "anthropometry needs {ANTHRO_FEATURES} values, got {}",
                values.len()
            ))
        })?;
        Self::new(features)
    }

    pub fn with_norm(mut self, norm: NormStats) -> Self {
        self.norm = Some(norm);
        self
    }

    pub fn features(&self) -> &[f64; ANTHRO_FEATURES] {
        &self.features
    }

    pub fn norm(&self) -> Option<&NormStats> {
        self.norm.as_ref()
    }

    pub fn normalized(&self) -> Result<[f64; ANTHRO_FEATURES]> {
        let norm = self
            .norm
            .as_ref()
            .ok_or_else(|| Error::Config("anthropometry has no normalization statistics".into()))?;
        Ok(std::array::from_fn(|j| {
            (self.features[j] - norm.mean[j]) / norm.std[j]
        }))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    subject_id: String,
    anthropometry: Anthropometry,
    measurements: Vec<(Position, Hrtf)>,
}

impl SubjectRecord {
    pub fn new(
        subject_id: impl Into<String>,
        anthropometry: Anthropometry,
        measurements: Vec<(Position, Hrtf)>,
    ) -> Result<Self> {
        let subject_id = subject_id.into();
        if subject_id.is_empty() || subject_id.chars().any(char::is_whitespace) {
            return Err(Error::Domain(format!("invalid subject id {subject_id:?}")));
        }
        if measurements.is_empty() {
            return Err(Error::Domain(format!("subject {subject_id} has no measurements")));
        }
        let positions: Vec<Position> = measurements.iter().map(|(p, _)| *p).collect();
        if let Some((i, _)) = crate::geometry::find_coincident(&positions) {
            return Err(Error::Domain(format!(
                "subject {subject_id} has two measurements at {}",
                positions[i]
            )));
        }
        Ok(Self {
            subject_id,
            anthropometry,
            measurements,
        })
    }

    pub fn id(&self) -> &str {
        &self.subject_id
    }

    pub fn anthropometry(&self) -> &Anthropometry {
        &self.anthropometry
    }

    pub fn measurements(&self) -> &[(Position, Hrtf)] {
        &self.measurements
    }

    pub fn positions(&self) -> Vec<Position> {
        self.measurements.iter().map(|(p, _)| *p).collect()
    }

    pub(crate) fn set_norm(&mut self, norm: NormStats) {
        self.anthropometry.norm = Some(norm);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Synthetic,
    Ingested,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    subjects: Vec<SubjectRecord>,
    grid: Grid,
    origin: Origin,
}

impl Dataset {
    /// Checks that every measurement lies on the grid.
    pub fn new(subjects: Vec<SubjectRecord>, grid: Grid, origin: Origin) -> Result<Self> {
        if subjects.is_empty() {
            return Err(Error::Domain("dataset has no subjects".into()));
        }
        let lookup = GridLookup::new(&grid);
        for s in &subjects {
            if let Some((p, _)) = s.measurements.iter().find(|(p, _)| lookup.find(p).is_none()) {
                return Err(Error::Domain(format!(
                    "subject {} has a measurement at {p} off the dataset grid",
                    s.id()
                )));
            }
        }
        let mut ids: Vec<&str> = subjects.iter().map(SubjectRecord::id).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Domain(format!("duplicate subject id {}", w[0])));
        }
        Ok(Self {
            subjects,
            grid,
            origin,
        })
    }

    /// Builds a dataset from parsed subjects: the grid is the union of their
    /// positions in first-seen order, and anthropometry is z-scored with
    /// statistics over these subjects.
    pub fn ingest(mut subjects: Vec<SubjectRecord>) -> Result<Self> {
        let mut positions: Vec<Position> = Vec::new();
        {
            let mut seen = Vec::new();
            for s in &subjects {
                for (p, _) in &s.measurements {
                    seen.push(*p);
                }
            }
            let mut order: Vec<usize> = (0..seen.len()).collect();
            order.sort_by(|&a, &b| seen[a].x.total_cmp(&seen[b].x).then(a.cmp(&b)));
            let mut duplicate = vec![false; seen.len()];
            for (oi, &i) in order.iter().enumerate() {
                if duplicate[i] {
                    continue;
                }
                for &j in &order[oi + 1..] {
                    if seen[j].x - seen[i].x > COINCIDENT_EPS {
                        break;
                    }
                    if seen[i].distance(&seen[j]) <= COINCIDENT_EPS {
                        duplicate[i.max(j)] = true;
                    }
                }
            }
            for (i, p) in seen.into_iter().enumerate() {
                if !duplicate[i] {
                    positions.push(p);
                }
            }
        }
        let rows: Vec<[f64; ANTHRO_FEATURES]> =
            subjects.iter().map(|s| s.anthropometry.features).collect();
        let norm = NormStats::from_features(&rows)?;
        for s in &mut subjects {
            s.set_norm(norm);
        }
        let grid = Grid::loaded(positions)?;
        Self::new(subjects, grid, Origin::Ingested)
    }

    pub fn subjects(&self) -> &[SubjectRecord] {
        &self.subjects
    }

    pub fn subject(&self, id: &str) -> Option<&SubjectRecord> {
        self.subjects.iter().find(|s| s.id() == id)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn origin(&self) -> Origin {
        self.origin
    }

    pub fn subject_ids(&self) -> Vec<String> {
        self.subjects.iter().map(|s| s.id().to_string()).collect()
    }

    /// The subset of subjects with the given ids, sharing this dataset's grid.
    pub fn select(&self, ids: &[String]) -> Result<Self> {
        let subjects = ids
            .iter()
            .map(|id| {
                self.subject(id)
                    .cloned()
                    .ok_or_else(|| Error::Domain(format!("unknown subject {id}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(subjects, self.grid.clone(), self.origin)
    }

    pub fn measurement_count(&self) -> usize {
        self.subjects.iter().map(|s| s.measurements.len()).sum()
    }
}

/// Sorted-by-x index for coincidence lookups on large grids.
pub(crate) struct GridLookup<'a> {
    points: &'a [Position],
    order: Vec<usize>,
}

impl<'a> GridLookup<'a> {
    pub(crate) fn new(grid: &'a Grid) -> Self {
        let points = grid.positions();
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&a, &b| points[a].x.total_cmp(&points[b].x));
        Self { points, order }
    }

    pub(crate) fn find(&self, p: &Position) -> Option<usize> {
        let lo = self
            .order
            .partition_point(|&i| self.points[i].x < p.x - COINCIDENT_EPS);
        self.order[lo..]
            .iter()
            .take_while(|&&i| self.points[i].x <= p.x + COINCIDENT_EPS)
            .copied()
            .find(|&i| self.points[i].distance(p) <= COINCIDENT_EPS)
    }
}
