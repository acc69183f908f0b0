use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use hrtf_field::evaluation::{predict_all, BaselinePredictor, ModelPredictor, NearestCopy, Predictor};
use hrtf_field::geometry::plane_membership;
use hrtf_field::{Plane, Position, TrainConfig, BINS};

use crate::commands::{load_checkpoint, load_data};
use crate::settings::ConfigFile;
use crate::{EvalOpts, PlotArgs, UsageError};

/// A frequency by angle dB field, columns ordered by in-plane angle.
pub struct Panel {
    pub angles_deg: Vec<f64>,
    /// One column of `BINS` values per angle.
    pub columns: Vec<Vec<f64>>,
}

fn parse_plane(s: &str) -> Result<Plane> {
    match s.to_ascii_lowercase().as_str() {
        "horizontal" | "hor" => Ok(Plane::Horizontal),
        "median" | "med" => Ok(Plane::Median),
        "frontal" | "fro" => Ok(Plane::Frontal),
        _ => Err(UsageError(format!("unknown plane {s:?} (horizontal, median, frontal)")).into()),
    }
}

/// Angle within the plane, degrees in [0, 360).
pub fn in_plane_angle(plane: Plane, p: &Position) -> f64 {
    let a = match plane {
        Plane::Horizontal => p.y.atan2(p.x),
        Plane::Median => p.z.atan2(p.x),
        Plane::Frontal => p.z.atan2(p.y),
    };
    a.to_degrees().rem_euclid(360.0)
}

fn parse_range(s: &str) -> Result<(f64, f64)> {
    let bad = || UsageError(format!("--range wants LO:HI with LO < HI, got {s:?}"));
    let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    if !(lo < hi) {
        return Err(bad().into());
    }
    Ok((lo, hi))
}

pub fn data_range(panel: &Panel) -> (f64, f64) {
    panel
        .columns
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)))
}

/// Binary P5 image, one column per angle, highest bin on the top row.
pub fn to_pgm(panel: &Panel, lo: f64, hi: f64) -> Vec<u8> {
    let width = panel.columns.len();
    let mut out = format!("P5\n{width} {BINS}\n255\n").into_bytes();
    let span = hi - lo;
    for k in (0..BINS).rev() {
        for col in &panel.columns {
            let t = if span > 0.0 { (col[k] - lo) / span } else { 0.0 };
            out.push((t.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}

pub fn to_csv(panel: &Panel) -> String {
    let mut s = String::new();
    for k in 0..BINS {
        let row: Vec<String> = panel.columns.iter().map(|c| c[k].to_string()).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn run(a: PlotArgs) -> Result<()> {
    let mut c = ConfigFile::load(a.config.as_deref())?;
    let data: PathBuf = c.require(a.data, "data")?;
    let subject: Option<String> = c.pick(a.subject, "subject")?;
    let plane = parse_plane(&c.pick_or(a.plane, "plane", "median".to_string())?)?;
    let source: String = c.pick_or(a.source, "source", "truth".into())?;
    let checkpoint: Option<PathBuf> = c.pick(a.checkpoint, "checkpoint")?;
    let n: Option<usize> = c.pick(a.n, "n")?;
    let delta: f64 = c.pick_or(a.delta, "delta", TrainConfig::default().delta)?;
    let range: Option<String> = c.pick(a.range, "range")?;
    let out: PathBuf = c.require(a.out, "out")?;
    let EvalOpts {
        downsample,
        plane_tol,
        include_coincident,
    } = a.eval;
    let mut eval = hrtf_field::evaluation::EvalConfig::default();
    eval.downsample = c.pick_or(downsample, "downsample", eval.downsample)?;
    eval.plane_tol_deg = c.pick_or(plane_tol, "plane-tol", eval.plane_tol_deg)?;
    eval.include_coincident = c.switch(include_coincident, "include-coincident")?;
    eval.delta = delta;
    eval.n_neighbors = n.unwrap_or(eval.n_neighbors);
    c.finish()?;
    let range = range.as_deref().map(parse_range).transpose()?;

    let dataset = load_data(&data)?;
    let id = match subject {
        Some(id) => id,
        None => dataset.subject_ids().into_iter().next().context("dataset has no subjects")?,
    };
    if dataset.subject(&id).is_none() {
        return Err(UsageError(format!("no subject {id:?} in {}", data.display())).into());
    }
    let dataset = dataset.select(std::slice::from_ref(&id))?;

    let params;
    let predictor: Option<Box<dyn Predictor + '_>> = match source.as_str() {
        "truth" => None,
        "baseline" => Some(Box::new(BaselinePredictor)),
        "nearest" => Some(Box::new(NearestCopy)),
        "model" => {
            let path = checkpoint
                .as_deref()
                .ok_or_else(|| UsageError("--source model needs --checkpoint".into()))?;
            params = load_checkpoint(path, None, n)?;
            eval.n_neighbors = params.n_neighbors();
            Some(Box::new(ModelPredictor { params: &params }))
        }
        other => {
            return Err(UsageError(format!("unknown source {other:?} (truth, model, baseline, nearest)")).into())
        }
    };

    let mut points: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut missing = 0usize;
    match &predictor {
        None => {
            for (p, h) in dataset.subjects()[0].measurements() {
                if plane_membership(p, eval.plane_tol_deg)?.contains(plane) {
                    points.push((in_plane_angle(plane, p), h.bins().to_vec()));
                }
            }
        }
        Some(pred) => {
            for r in predict_all(pred.as_ref(), &dataset, &eval)? {
                if !plane_membership(&r.position, eval.plane_tol_deg)?.contains(plane) {
                    continue;
                }
                match r.estimate {
                    Some(h) => points.push((in_plane_angle(plane, &r.position), h.into_bins())),
                    None => missing += 1,
                }
            }
        }
    }
    if missing > 0 {
        eprintln!("note: {missing} plane positions had no neighbors and were left out");
    }
    if points.is_empty() {
        return Err(UsageError(format!("no positions of subject {id} lie on the {plane:?} plane")).into());
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let panel = Panel {
        angles_deg: points.iter().map(|p| p.0).collect(),
        columns: points.into_iter().map(|p| p.1).collect(),
    };

    let (lo, hi) = range.unwrap_or_else(|| data_range(&panel));
    write(&with_suffix(&out, ".csv"), to_csv(&panel).as_bytes())?;
    let angles: Vec<String> = panel.angles_deg.iter().map(|a| a.to_string()).collect();
    write(&with_suffix(&out, ".angles.csv"), format!("{}\n", angles.join("\n")).as_bytes())?;
    write(&with_suffix(&out, ".pgm"), &to_pgm(&panel, lo, hi))?;
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "dB range {lo} .. {hi} mapped to 0 .. 255");
    println!(
        "{} angles x {BINS} bins ({source}, subject {id}) -> {}.{{csv,angles.csv,pgm}}",
        panel.angles_deg.len(),
        out.display()
    );
    Ok(())
}
