//! Per-plane LSD reports, super-resolution scoring, ablations and the
//! neighborhood study.
//!
//! Evaluation coarsens the dataset grid by a factor `T` to get the reference
//! set, predicts every measured position of the full grid from references
//! only, and scores each prediction by LSD. A target never serves as its own
//! reference unless [`EvalConfig::include_coincident`] is set.

use std::fmt::Write as _;
use std::io::Write;

use crate::baseline::linear_interp_excluding;
use crate::encoding::encode_anthro_z;
use crate::error::{Error, Result};
use crate::geometry::{
    downsample_grid, neighborhood_indices, plane_membership, sample_neighbor_indices, Plane,
    PlaneSet, Position, SampleMode, DEFAULT_PLANE_TOL_DEG,
};
use crate::network::{anthro_z_for, forward, ModelInput, ModelParams, Variant};
use crate::parallel::par_map;
use crate::spectra::{lsd, Dataset, GridLookup, Hrtf, SubjectRecord};
use crate::training::{make_folds, train, train_fold, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub n_neighbors: usize,
    /// Neighborhood radius for model predictions, meters.
    pub delta: f64,
    /// Downsampling factor of the reference grid.
    pub downsample: usize,
    pub plane_tol_deg: f64,
    /// Let a reference at the target position itself be used.
    pub include_coincident: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_neighbors: 8,
            delta: 0.3,
            downsample: 1,
            plane_tol_deg: DEFAULT_PLANE_TOL_DEG,
            include_coincident: false,
        }
    }
}

/// What a predictor may see for one target.
pub struct Query<'a> {
    pub target: Position,
    pub subject: &'a SubjectRecord,
    /// The subject's measurements on the reference grid.
    pub references: &'a [(Position, Hrtf)],
    /// Reference indices with `0 < d < delta`, nearest first.
    pub candidates: Vec<usize>,
    /// Reference at the target position, when coincident references are
    /// allowed.
    pub coincident: Option<usize>,
    /// Reference at the target position that must not be used.
    pub excluded: Option<usize>,
    pub n_neighbors: usize,
}

/// Anything that estimates an HRTF from a [`Query`].
pub trait Predictor: Sync {
    fn label(&self) -> String;

    /// `Err(Error::Uncoverable)` marks the target as skipped.
    fn predict(&self, query: &Query<'_>) -> Result<Hrtf>;
}

/// A trained network with test-mode neighbor sampling.
pub struct ModelPredictor<'p> {
    pub params: &'p ModelParams,
}

impl Predictor for ModelPredictor<'_> {
    fn label(&self) -> String {
        self.params.variant().to_string()
    }

    fn predict(&self, q: &Query<'_>) -> Result<Hrtf> {
        if q.candidates.is_empty() {
            return Err(Error::Uncoverable(format!("target at {}", q.target)));
        }
        let picks = sample_neighbor_indices(q.candidates.len(), self.params.n_neighbors(), SampleMode::Test, 0)?;
        let neighbors: Vec<Position> = picks.iter().map(|&i| q.references[q.candidates[i]].0).collect();
        let spectra: Vec<&[f64]> = picks.iter().map(|&i| q.references[q.candidates[i]].1.bins()).collect();
        let z = anthro_z_for(self.params, q.subject.anthropometry())?;
        let input = ModelInput::assemble(&q.target, &neighbors, &spectra, encode_anthro_z(&z))?;
        forward(&input, self.params)
    }
}

/// In-plane linear interpolation over all references.
pub struct BaselinePredictor;

impl Predictor for BaselinePredictor {
    fn label(&self) -> String {
        "linear".into()
    }

    fn predict(&self, q: &Query<'_>) -> Result<Hrtf> {
        linear_interp_excluding(q.references, &q.target, q.excluded)
            .map(|(h, _)| h)
            .map_err(|e| match e {
                Error::Domain(m) => Error::Uncoverable(m),
                other => other,
            })
    }
}

/// Copies the coincident reference if there is one, else the nearest
/// candidate.
pub struct NearestCopy;

impl Predictor for NearestCopy {
    fn label(&self) -> String {
        "nearest".into()
    }

    fn predict(&self, q: &Query<'_>) -> Result<Hrtf> {
        q.coincident
            .or_else(|| q.candidates.first().copied())
            .map(|i| q.references[i].1.clone())
            .ok_or_else(|| Error::Uncoverable(format!("target at {}", q.target)))
    }
}

/// Prediction for one measured position; `estimate` is `None` if skipped.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub subject: String,
    pub position: Position,
    pub truth: Hrtf,
    pub estimate: Option<Hrtf>,
}

/// Predicts every measurement of every subject from the reference grid.
pub fn predict_all(predictor: &dyn Predictor, dataset: &Dataset, cfg: &EvalConfig) -> Result<Vec<Prediction>> {
    if cfg.downsample == 0 || !(cfg.delta > 0.0) || cfg.n_neighbors == 0 {
        return Err(Error::Config("evaluation needs T >= 1, delta > 0 and N >= 1".into()));
    }
    let refs_grid = downsample_grid(dataset.grid(), cfg.downsample)?;
    let lookup = GridLookup::new(&refs_grid);
    let mut out = Vec::new();
    for s in dataset.subjects() {
        let references: Vec<(Position, Hrtf)> = s
            .measurements()
            .iter()
            .filter(|(p, _)| lookup.find(p).is_some())
            .cloned()
            .collect();
        let ref_positions: Vec<Position> = references.iter().map(|(p, _)| *p).collect();
        let results = par_map(s.measurements(), |_, (p, truth)| -> Result<Prediction> {
            let same = ref_positions.iter().position(|q| q.distance(p) == 0.0);
            let query = Query {
                target: *p,
                subject: s,
                references: &references,
                candidates: neighborhood_indices(&ref_positions, p, cfg.delta),
                coincident: same.filter(|_| cfg.include_coincident),
                excluded: same.filter(|_| !cfg.include_coincident),
                n_neighbors: cfg.n_neighbors,
            };
            let estimate = match predictor.predict(&query) {
                Ok(h) => Some(h),
                Err(Error::Uncoverable(_)) => None,
                Err(e) => return Err(e),
            };
            Ok(Prediction {
                subject: s.id().to_string(),
                position: *p,
                truth: truth.clone(),
                estimate,
            })
        });
        for r in results {
            out.push(r?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositionScore {
    pub subject: String,
    pub position: Position,
    pub lsd: f64,
    pub planes: PlaneSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub label: String,
    pub n_neighbors: usize,
    pub delta: f64,
    pub downsample: usize,
    /// Points of the reference grid.
    pub reference_count: usize,
    pub per_position: Vec<PositionScore>,
    pub skipped: usize,
    pub all: Option<f64>,
    pub horizontal: Option<f64>,
    pub median: Option<f64>,
    pub frontal: Option<f64>,
    pub counts: [usize; 4],
}

impl EvalReport {
    pub fn from_scores(
        label: String,
        cfg: &EvalConfig,
        reference_count: usize,
        per_position: Vec<PositionScore>,
        skipped: usize,
    ) -> Self {
        let mean_over = |filter: &dyn Fn(&PositionScore) -> bool| -> (Option<f64>, usize) {
            let (sum, n) = per_position
                .iter()
                .filter(|s| filter(s))
                .fold((0.0, 0usize), |(a, n), s| (a + s.lsd, n + 1));
            ((n > 0).then(|| sum / n as f64), n)
        };
        let (all, n_all) = mean_over(&|_| true);
        let (horizontal, n_h) = mean_over(&|s| s.planes.contains(Plane::Horizontal));
        let (median, n_m) = mean_over(&|s| s.planes.contains(Plane::Median));
        let (frontal, n_f) = mean_over(&|s| s.planes.contains(Plane::Frontal));
        Self {
            label,
            n_neighbors: cfg.n_neighbors,
            delta: cfg.delta,
            downsample: cfg.downsample,
            reference_count,
            per_position,
            skipped,
            all,
            horizontal,
            median,
            frontal,
            counts: [n_all, n_h, n_m, n_f],
        }
    }

    pub fn has_skips(&self) -> bool {
        self.skipped > 0
    }

    /// `[All, Hor., Med., Fro.]`.
    pub fn means(&self) -> [Option<f64>; 4] {
        [self.all, self.horizontal, self.median, self.frontal]
    }
}

pub fn score_predictions(
    label: String,
    predictions: &[Prediction],
    cfg: &EvalConfig,
    reference_count: usize,
) -> Result<EvalReport> {
    let mut scores = Vec::with_capacity(predictions.len());
    let mut skipped = 0;
    for p in predictions {
        match &p.estimate {
            Some(h) => scores.push(PositionScore {
                subject: p.subject.clone(),
                position: p.position,
                lsd: lsd(h, &p.truth),
                planes: plane_membership(&p.position, cfg.plane_tol_deg)?,
            }),
            None => skipped += 1,
        }
    }
    Ok(EvalReport::from_scores(label, cfg, reference_count, scores, skipped))
}

/// Scores `predictor` on every measured position of `dataset`.
pub fn evaluate(predictor: &dyn Predictor, dataset: &Dataset, cfg: &EvalConfig) -> Result<EvalReport> {
    let predictions = predict_all(predictor, dataset, cfg)?;
    let reference_count = downsample_grid(dataset.grid(), cfg.downsample)?.len();
    score_predictions(predictor.label(), &predictions, cfg, reference_count)
}

/// [`evaluate`] for a trained model; `cfg.n_neighbors` must match it.
pub fn evaluate_model(params: &ModelParams, dataset: &Dataset, cfg: &EvalConfig) -> Result<EvalReport> {
    if params.n_neighbors() != cfg.n_neighbors {
        return Err(Error::Config(format!(
            "checkpoint uses N = {}, evaluation asks for N = {}",
            params.n_neighbors(),
            cfg.n_neighbors
        )));
    }
    evaluate(&ModelPredictor { params }, dataset, cfg)
}

pub fn evaluate_baseline(dataset: &Dataset, cfg: &EvalConfig) -> Result<EvalReport> {
    evaluate(&BaselinePredictor, dataset, cfg)
}

fn fmt_opt(v: Option<f64>, precision: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.precision$}"))
}

pub const REPORT_HEADER: &str =
    "method,n_neighbors,delta,downsample,references,targets,skipped,All,Hor.,Med.,Fro.";

/// One summary row per report.
pub fn write_report_csv(w: &mut impl Write, reports: &[EvalReport]) -> Result<()> {
    writeln!(w, "{REPORT_HEADER}")?;
    for r in reports {
        let m: Vec<String> = r
            .means()
            .iter()
            .map(|v| v.map_or_else(String::new, |x| x.to_string()))
            .collect();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.label,
            r.n_neighbors,
            r.delta,
            r.downsample,
            r.reference_count,
            r.per_position.len(),
            r.skipped,
            m.join(",")
        )?;
    }
    Ok(())
}

/// Per-position scores: `subject,x,y,z,lsd,planes`.
pub fn write_positions_csv(w: &mut impl Write, report: &EvalReport) -> Result<()> {
    writeln!(w, "subject,x,y,z,lsd,planes")?;
    for s in &report.per_position {
        let planes: Vec<&str> = s.planes.iter().map(|p| p.label()).collect();
        writeln!(
            w,
            "{},{},{},{},{},{}",
            s.subject,
            s.position.x,
            s.position.y,
            s.position.z,
            s.lsd,
            planes.join(" ")
        )?;
    }
    Ok(())
}

/// Aligned text table with columns `All Hor. Med. Fro.` (dB).
pub fn report_table(reports: &[EvalReport]) -> String {
    let labels: Vec<String> = reports
        .iter()
        .map(|r| format!("{} (N={}, T={})", r.label, r.n_neighbors, r.downsample))
        .collect();
    let width = labels.iter().map(String::len).max().unwrap_or(0).max(6);
    let mut s = String::new();
    let _ = write!(s, "{:<width$}", "");
    for h in ["All", "Hor.", "Med.", "Fro."] {
        let _ = write!(s, " {h:>8}");
    }
    s.push('\n');
    for (r, label) in reports.iter().zip(&labels) {
        let _ = write!(s, "{label:<width$}");
        for m in r.means() {
            let _ = write!(s, " {:>8}", fmt_opt(m, 3));
        }
        s.push('\n');
    }
    for r in reports.iter().filter(|r| r.has_skips()) {
        let _ = writeln!(s, "note: {} skipped {} unreachable targets", r.label, r.skipped);
    }
    s
}

/// One row of the ablation table.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub all_mean: f64,
    pub skipped: usize,
}

/// Cross-validates every variant with the same configuration and scores each
/// fold's model on its held-out subjects.
pub fn ablation_run(dataset: &Dataset, train_cfg: &TrainConfig, eval_cfg: &EvalConfig) -> Result<Vec<AblationRow>> {
    let eval_cfg = EvalConfig {
        n_neighbors: train_cfg.n_neighbors,
        ..eval_cfg.clone()
    };
    Variant::ALL
        .iter()
        .map(|&variant| {
            let folds = train(dataset, variant, train_cfg)?;
            let mut scores = Vec::new();
            let mut skipped = 0;
            for f in &folds {
                let held_out = dataset.select(&f.split.val_subjects)?;
                let r = evaluate_model(&f.params, &held_out, &eval_cfg)?;
                skipped += r.skipped;
                scores.extend(r.per_position);
            }
            let report = EvalReport::from_scores(variant.to_string(), &eval_cfg, 0, scores, skipped);
            Ok(AblationRow {
                variant,
                all_mean: report.all.unwrap_or(f64::NAN),
                skipped,
            })
        })
        .collect()
}

pub fn write_ablation_csv(w: &mut impl Write, rows: &[AblationRow]) -> Result<()> {
    writeln!(w, "variant,All,skipped")?;
    for r in rows {
        writeln!(w, "{},{},{}", r.variant, r.all_mean, r.skipped)?;
    }
    Ok(())
}

/// All-mean LSD per `(N, delta)` cell; rows follow `n_list`, columns
/// `delta_list`.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyMatrix {
    pub n_list: Vec<usize>,
    pub delta_list: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

/// Trains and scores one model per `(N, delta)` cell on the first fold of
/// `train_cfg`'s split.
pub fn neighborhood_study(
    dataset: &Dataset,
    variant: Variant,
    n_list: &[usize],
    delta_list: &[f64],
    train_cfg: &TrainConfig,
    eval_cfg: &EvalConfig,
) -> Result<StudyMatrix> {
    if n_list.is_empty() || delta_list.is_empty() {
        return Err(Error::Config("neighborhood study needs nonempty N and delta lists".into()));
    }
    let split = make_folds(&dataset.subject_ids(), train_cfg.folds, train_cfg.seed)?
        .into_iter()
        .next()
        .expect("at least two folds");
    let held_out = dataset.select(&split.val_subjects)?;
    let mut values = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let mut row = Vec::with_capacity(delta_list.len());
        for &delta in delta_list {
            let tc = TrainConfig {
                n_neighbors: n,
                delta,
                ..train_cfg.clone()
            };
            let ec = EvalConfig {
                n_neighbors: n,
                delta,
                ..eval_cfg.clone()
            };
            let fold = train_fold(dataset, &split, variant, &tc)?;
            row.push(evaluate_model(&fold.params, &held_out, &ec)?.all.unwrap_or(f64::NAN));
        }
        values.push(row);
    }
    Ok(StudyMatrix {
        n_list: n_list.to_vec(),
        delta_list: delta_list.to_vec(),
        values,
    })
}

pub fn write_study_csv(w: &mut impl Write, m: &StudyMatrix) -> Result<()> {
    let header: Vec<String> = m.delta_list.iter().map(|d| format!("delta={d}")).collect();
    writeln!(w, "N,{}", header.join(","))?;
    for (n, row) in m.n_list.iter().zip(&m.values) {
        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
        writeln!(w, "{n},{}", cells.join(","))?;
    }
    Ok(())
}
