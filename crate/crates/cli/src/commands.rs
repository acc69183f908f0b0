use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use hrtf_field::evaluation::{
    ablation_run, evaluate_baseline, evaluate_model, neighborhood_study, report_table, write_ablation_csv,
    write_positions_csv, write_report_csv, write_study_csv, EvalConfig, EvalReport,
};
use hrtf_field::formats::{load_dataset, load_grid, save_dataset, save_grid};
use hrtf_field::geometry::{make_geographical_grid, make_quasi_uniform_grid};
use hrtf_field::spectra::make_synthetic_dataset;
use hrtf_field::training::{run_summary, train as train_folds, train_all, write_log_csv};
use hrtf_field::{Dataset, ModelParams, TrainConfig, Variant};

use crate::settings::{parse_list, ConfigFile};
use crate::{AblationArgs, EvalArgs, EvalOpts, GenDataArgs, StudyArgs, TrainArgs, TrainOpts, UsageError};

pub const DEFAULT_RADIUS_M: f64 = 1.47;

pub fn load_data(path: &Path) -> Result<Dataset> {
    load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn make_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating directory {}", path.display()))
}

pub fn gen_data(a: GenDataArgs) -> Result<()> {
    let mut c = ConfigFile::load(a.config.as_deref())?;
    let kind: String = c.pick_or(a.grid, "grid", "quasi".into())?;
    let points: usize = c.pick_or(a.points, "points", 440)?;
    let step_el: f64 = c.pick_or(a.step_el, "step-el", 10.0)?;
    let step_az: f64 = c.pick_or(a.step_az, "step-az", 10.0)?;
    let radius: f64 = c.pick_or(a.radius, "radius", DEFAULT_RADIUS_M)?;
    let grid_file: Option<PathBuf> = c.pick(a.grid_file, "grid-file")?;
    let subjects: usize = c.pick_or(a.subjects, "subjects", 1)?;
    let seed: u64 = c.pick_or(a.seed, "seed", 0)?;
    let grid_out: Option<PathBuf> = c.pick(a.grid_out, "grid-out")?;
    let out: PathBuf = c.require(a.out, "out")?;
    c.finish()?;

    let grid = match kind.as_str() {
        "quasi" => make_quasi_uniform_grid(points, radius)?,
        "geo" => make_geographical_grid(step_el, step_az, radius)?,
        "file" => {
            let path = grid_file.ok_or_else(|| UsageError("--grid file needs --grid-file".into()))?;
            load_grid(&path).with_context(|| format!("loading grid {}", path.display()))?
        }
        other => return Err(UsageError(format!("unknown grid kind {other:?} (quasi, geo, file)")).into()),
    };
    if subjects == 0 {
        return Err(UsageError("--subjects must be at least 1".into()).into());
    }
    let dataset = make_synthetic_dataset(&grid, subjects, seed)?;
    save_dataset(&out, &dataset).with_context(|| format!("writing {}", out.display()))?;
    if let Some(path) = grid_out {
        save_grid(&path, &grid).with_context(|| format!("writing {}", path.display()))?;
    }
    println!(
        "{} points x {} subjects = {} measurements -> {}",
        grid.len(),
        subjects,
        dataset.measurement_count(),
        out.display()
    );
    Ok(())
}

struct TrainSetup {
    data: PathBuf,
    variant: Variant,
    cfg: TrainConfig,
    name: String,
    runs_dir: PathBuf,
}

impl TrainSetup {
    fn run_dir(&self) -> PathBuf {
        self.runs_dir.join(&self.name)
    }

    /// Resolved settings in config-file form.
    fn render(&self, extra: &[(&str, String)]) -> String {
        let c = &self.cfg;
        let mut s = String::new();
        let rows: Vec<(&str, String)> = vec![
            ("data", self.data.display().to_string()),
            ("variant", self.variant.to_string()),
            ("n", c.n_neighbors.to_string()),
            ("delta", c.delta.to_string()),
            ("batch", c.batch_size.to_string()),
            ("lr", c.lr0.to_string()),
            ("beta1", c.beta1.to_string()),
            ("beta2", c.beta2.to_string()),
            ("eps", c.eps.to_string()),
            ("weight-decay", c.weight_decay.to_string()),
            ("patience", c.patience_epochs.to_string()),
            ("lr-halving", c.lr_halving.to_string()),
            ("epochs", c.max_epochs.to_string()),
            ("seed", c.seed.to_string()),
            ("folds", c.folds.to_string()),
            ("name", self.name.clone()),
            ("runs-dir", self.runs_dir.display().to_string()),
        ];
        for (k, v) in rows.iter().chain(extra) {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

fn resolve_train(o: TrainOpts, c: &mut ConfigFile, default_name: &dyn Fn(Variant, u64) -> String) -> Result<TrainSetup> {
    let d = TrainConfig::default();
    let data: PathBuf = c.require(o.data, "data")?;
    let variant: Variant = c.pick_or(o.variant.map(|v| v.parse()).transpose()?, "variant", Variant::C2)?;
    let cfg = TrainConfig {
        n_neighbors: c.pick_or(o.n, "n", d.n_neighbors)?,
        delta: c.pick_or(o.delta, "delta", d.delta)?,
        batch_size: c.pick_or(o.batch, "batch", d.batch_size)?,
        lr0: c.pick_or(o.lr, "lr", d.lr0)?,
        beta1: c.pick_or(o.beta1, "beta1", d.beta1)?,
        beta2: c.pick_or(o.beta2, "beta2", d.beta2)?,
        eps: c.pick_or(o.eps, "eps", d.eps)?,
        weight_decay: c.pick_or(o.weight_decay, "weight-decay", d.weight_decay)?,
        patience_epochs: c.pick_or(o.patience, "patience", d.patience_epochs)?,
        lr_halving: c.pick_or(o.lr_halving, "lr-halving", d.lr_halving)?,
        max_epochs: c.pick_or(o.epochs, "epochs", d.max_epochs)?,
        seed: c.pick_or(o.seed, "seed", d.seed)?,
        folds: c.pick_or(o.folds, "folds", d.folds)?,
    };
    let name = c.pick_or(o.name, "name", default_name(variant, cfg.seed))?;
    let runs_dir = c.pick_or(o.runs_dir, "runs-dir", PathBuf::from("runs"))?;
    cfg.validate()?;
    Ok(TrainSetup {
        data,
        variant,
        cfg,
        name,
        runs_dir,
    })
}

fn resolve_eval(o: EvalOpts, c: &mut ConfigFile, n_neighbors: usize, delta: f64) -> Result<EvalConfig> {
    let d = EvalConfig::default();
    let cfg = EvalConfig {
        n_neighbors,
        delta,
        downsample: c.pick_or(o.downsample, "downsample", d.downsample)?,
        plane_tol_deg: c.pick_or(o.plane_tol, "plane-tol", d.plane_tol_deg)?,
        include_coincident: c.switch(o.include_coincident, "include-coincident")?,
    };
    if cfg.downsample == 0 {
        return Err(UsageError("--downsample must be at least 1".into()).into());
    }
    Ok(cfg)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut c = ConfigFile::load(a.opts.config.as_deref())?;
    let setup = resolve_train(a.opts, &mut c, &|v, s| format!("{v}-seed{s}"))?;
    let all = c.switch(a.all, "all")?;
    c.finish()?;
    let dataset = load_data(&setup.data)?;
    let folds = if all {
        vec![train_all(&dataset, setup.variant, &setup.cfg)?]
    } else {
        train_folds(&dataset, setup.variant, &setup.cfg)?
    };

    let dir = setup.run_dir();
    make_dir(&dir)?;
    write_text(&dir.join("config.txt"), &setup.render(&[("all", all.to_string())]))?;
    let mut log = Vec::new();
    for f in &folds {
        let path = dir.join(format!("fold{}.ckpt", f.split.fold_index));
        f.params.save(&path).with_context(|| format!("writing {}", path.display()))?;
        log.extend_from_slice(&f.log);
    }
    let mut w = create(&dir.join("log.csv"))?;
    write_log_csv(&mut w, &log)?;
    w.flush()?;
    let summary = run_summary(setup.variant, &setup.cfg, &folds);
    write_text(&dir.join("summary.txt"), &summary)?;
    print!("{summary}");
    println!("run directory: {}", dir.display());
    Ok(())
}

fn write_reports(dir: &Path, report: &EvalReport) -> Result<()> {
    make_dir(dir)?;
    let mut w = create(&dir.join("report.csv"))?;
    write_report_csv(&mut w, std::slice::from_ref(report))?;
    w.flush()?;
    let mut w = create(&dir.join("positions.csv"))?;
    write_positions_csv(&mut w, report)?;
    w.flush()?;
    write_text(&dir.join("report.txt"), &report_table(std::slice::from_ref(report)))
}

/// Checkpoint with its variant and neighbor count checked against the
/// requested ones.
pub fn load_checkpoint(path: &Path, variant: Option<Variant>, n: Option<usize>) -> Result<ModelParams> {
    let params = ModelParams::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    if let Some(v) = variant.filter(|v| *v != params.variant()) {
        return Err(anyhow!(
            "checkpoint {} holds variant {}, expected {v}",
            path.display(),
            params.variant()
        ));
    }
    if let Some(n) = n.filter(|n| *n != params.n_neighbors()) {
        return Err(anyhow!(
            "checkpoint {} uses N = {}, requested N = {n}",
            path.display(),
            params.n_neighbors()
        ));
    }
    Ok(params)
}

pub fn select_subjects(dataset: Dataset, subjects: Option<String>) -> Result<Dataset> {
    match subjects {
        None => Ok(dataset),
        Some(list) => {
            let ids: Vec<String> = list.split(',').map(|s| s.trim().to_string()).collect();
            Ok(dataset.select(&ids)?)
        }
    }
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let mut c = ConfigFile::load(a.config.as_deref())?;
    let data: PathBuf = c.require(a.data, "data")?;
    let checkpoint: Option<PathBuf> = c.pick(a.checkpoint, "checkpoint")?;
    let baseline = c.switch(a.baseline, "baseline")?;
    let variant: Option<Variant> = c.pick(a.variant.map(|v| v.parse()).transpose()?, "variant")?;
    let n: Option<usize> = c.pick(a.n, "n")?;
    let delta: f64 = c.pick_or(a.delta, "delta", TrainConfig::default().delta)?;
    let subjects: Option<String> = c.pick(a.subjects, "subjects")?;
    let out: Option<PathBuf> = c.pick(a.out, "out")?;
    let mut cfg = resolve_eval(a.eval, &mut c, n.unwrap_or(EvalConfig::default().n_neighbors), delta)?;
    c.finish()?;

    let dataset = select_subjects(load_data(&data)?, subjects)?;
    let (report, out) = match (checkpoint, baseline) {
        (Some(_), true) => return Err(UsageError("give either --checkpoint or --baseline, not both".into()).into()),
        (None, false) => return Err(UsageError("give --checkpoint or --baseline".into()).into()),
        (None, true) => (
            evaluate_baseline(&dataset, &cfg)?,
            out.unwrap_or_else(|| PathBuf::from("runs/baseline")),
        ),
        (Some(path), false) => {
            let params = load_checkpoint(&path, variant, n)?;
            cfg.n_neighbors = params.n_neighbors();
            let dir = out.unwrap_or_else(|| path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf));
            (evaluate_model(&params, &dataset, &cfg)?, dir)
        }
    };
    write_reports(&out, &report)?;
    print!("{}", report_table(std::slice::from_ref(&report)));
    println!(
        "references {} of {} grid points; reports in {}",
        report.reference_count,
        dataset.grid().len(),
        out.display()
    );
    Ok(())
}

pub fn ablation(a: AblationArgs) -> Result<()> {
    let mut c = ConfigFile::load(a.opts.config.as_deref())?;
    let setup = resolve_train(a.opts, &mut c, &|_, s| format!("ablation-seed{s}"))?;
    let eval_cfg = resolve_eval(a.eval, &mut c, setup.cfg.n_neighbors, setup.cfg.delta)?;
    c.finish()?;
    let dataset = load_data(&setup.data)?;
    let rows = ablation_run(&dataset, &setup.cfg, &eval_cfg)?;

    let dir = setup.run_dir();
    make_dir(&dir)?;
    write_text(&dir.join("config.txt"), &setup.render(&[("downsample", eval_cfg.downsample.to_string())]))?;
    let mut w = create(&dir.join("ablation.csv"))?;
    write_ablation_csv(&mut w, &rows)?;
    w.flush()?;
    println!("{:<8} {:>8}", "variant", "All");
    for r in &rows {
        println!("{:<8} {:>8.3}", r.variant.to_string(), r.all_mean);
        if r.skipped > 0 {
            println!("note: {} skipped {} unreachable targets", r.variant, r.skipped);
        }
    }
    println!("run directory: {}", dir.display());
    Ok(())
}

pub fn study(a: StudyArgs) -> Result<()> {
    let mut c = ConfigFile::load(a.opts.config.as_deref())?;
    let setup = resolve_train(a.opts, &mut c, &|v, s| format!("study-{v}-seed{s}"))?;
    let eval_cfg = resolve_eval(a.eval, &mut c, setup.cfg.n_neighbors, setup.cfg.delta)?;
    let n_list: Vec<usize> = parse_list(&c.pick_or(a.n_list, "n-list", "2,4,8".to_string())?)?;
    let delta_list: Vec<f64> = parse_list(&c.pick_or(a.delta_list, "delta-list", "0.2,0.3,0.5".to_string())?)?;
    c.finish()?;
    let dataset = load_data(&setup.data)?;
    let m = neighborhood_study(&dataset, setup.variant, &n_list, &delta_list, &setup.cfg, &eval_cfg)?;

    let dir = setup.run_dir();
    make_dir(&dir)?;
    write_text(&dir.join("config.txt"), &setup.render(&[]))?;
    let mut w = create(&dir.join("study.csv"))?;
    write_study_csv(&mut w, &m)?;
    w.flush()?;
    print!("{:>4}", "N");
    for d in &m.delta_list {
        print!(" {:>9}", format!("d={d}"));
    }
    println!();
    for (n, row) in m.n_list.iter().zip(&m.values) {
        print!("{n:>4}");
        for v in row {
            print!(" {v:>9.3}");
        }
        println!();
    }
    println!("run directory: {}", dir.display());
    Ok(())
}
