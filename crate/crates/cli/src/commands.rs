use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use fightnet::layers::Mode;
use fightnet::model::{count_params, expected_params, load_weights, save_weights, Component, Model, ParamCount};
use fightnet::pipeline::{make_folds, write_atomic, ClipLoader, ClipSource, FoldPlan, Manifest, NormStats, Subset};
use fightnet::train::{evaluate, grad_check, train_fold, CvSummary, Evaluation, GradCheckOptions, RunLog, Subject};
use fightnet::{par, Rng, Tensor};
use serde::Serialize;

use crate::config::RunConfig;
use crate::report::{percent, thousands, to_json, write_json, Table};

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum Failure {
    /// Bad configuration or arguments, detected before any output is written.
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

pub type Outcome = std::result::Result<(), Failure>;

trait Phase<T> {
    fn config(self) -> std::result::Result<T, Failure>;
    fn runtime(self) -> std::result::Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Phase<T> for std::result::Result<T, E> {
    fn config(self) -> std::result::Result<T, Failure> {
        self.map_err(|e| Failure::Config(e.into()))
    }

    fn runtime(self) -> std::result::Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

pub const WEIGHTS_FILE: &str = "weights.fnl";
pub const NORM_FILE: &str = "norm.json";
pub const RUN_LOG_FILE: &str = "run.jsonl";
pub const CONFIG_FILE: &str = "config.toml";

const INIT_TAG: u64 = 0x1d;

fn build_model(cfg: &RunConfig, seed: u64) -> Result<Model<f32>> {
    Ok(Model::build(&cfg.model, &mut Rng::new(seed).fork(INIT_TAG))?)
}

fn open_loader(cfg: &RunConfig) -> Result<ClipLoader> {
    let manifest = Manifest::read(cfg.manifest_path()?)?;
    Ok(ClipLoader::new(manifest, cfg.pipeline.clone(), cfg.model.input_mode)?)
}

fn fold_plan(cfg: &RunConfig, manifest: &Manifest) -> Result<FoldPlan> {
    match &cfg.data.fold_plan {
        Some(p) => {
            let plan = FoldPlan::read(p)?;
            plan.split(manifest, 0)?;
            Ok(plan)
        }
        None => Ok(make_folds(manifest, cfg.data.folds, cfg.data.fold_seed)?),
    }
}

fn split(plan: &FoldPlan, manifest: &Manifest, fold: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    if fold >= plan.k {
        bail!("fold {fold} out of range for a {}-fold plan", plan.k);
    }
    Ok(plan.split(manifest, fold)?)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Fits normalization on `train`, trains a fresh model and returns it.
fn fit(cfg: &RunConfig, loader: &mut ClipLoader, train: Vec<usize>, seed: u64) -> Result<(Model<f32>, RunLog)> {
    loader.fit_norm(&train)?;
    let mut model = build_model(cfg, seed)?;
    let tc = fightnet::train::TrainConfig { seed, ..cfg.train.clone() };
    let log = train_fold(&mut model, &Subset::new(&*loader, train), &tc)?;
    Ok((model, log))
}

pub fn train(cfg: &RunConfig, out: &Path, fold: Option<usize>) -> Outcome {
    let mut loader = open_loader(cfg).config()?;
    let train_idx = match fold {
        Some(f) => {
            let plan = fold_plan(cfg, loader.manifest()).config()?;
            split(&plan, loader.manifest(), f).config()?.0
        }
        None => (0..loader.len()).collect(),
    };
    if train_idx.len() < 2 {
        return Err(Failure::Config(anyhow!("training needs at least 2 clips, got {}", train_idx.len())));
    }

    let (model, log) = fit(cfg, &mut loader, train_idx.clone(), cfg.train.seed).runtime()?;
    let train_eval = evaluate(&model, &Subset::new(&loader, train_idx), cfg.data.eval_batch).runtime()?;
    create_dir(out).runtime()?;
    save_weights(&model, &out.join(WEIGHTS_FILE)).runtime()?;
    write_json(&out.join(NORM_FILE), &loader.norm()).runtime()?;
    write_atomic(&out.join(CONFIG_FILE), cfg.to_toml().as_bytes()).runtime()?;
    log.write_jsonl(&out.join(RUN_LOG_FILE)).runtime()?;

    let mut t = Table::new(["metric", "value"]);
    t.row(["iterations".to_string(), log.iterations.len().to_string()]);
    t.row(["final loss".to_string(), format!("{:.5}", log.losses().last().copied().unwrap_or(f64::NAN))]);
    t.row(["train accuracy".to_string(), percent(train_eval.accuracy)]);
    t.row(["wall clock".to_string(), format!("{:.1}s", log.wall_clock_secs)]);
    print!("{t}");
    println!("checkpoint written to {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct EvalReport<'a> {
    checkpoint: &'a Path,
    fold: Option<usize>,
    #[serde(flatten)]
    evaluation: &'a Evaluation,
}

fn predictions_table(e: &Evaluation) -> Table {
    let mut t = Table::new(["clip", "label", "p(violent)", "predicted"]);
    for p in &e.predictions {
        t.row([
            p.clip_id.clone(),
            p.label.to_string(),
            format!("{:.4}", p.probability),
            p.predicted.to_string(),
        ]);
    }
    t
}

pub fn eval(cfg: &RunConfig, checkpoint: &Path, fold: Option<usize>, out: Option<&Path>, json: bool) -> Outcome {
    let mut loader = open_loader(cfg).config()?;
    let weights = checkpoint.join(WEIGHTS_FILE);
    let norm_path = checkpoint.join(NORM_FILE);
    for p in [&weights, &norm_path] {
        if !p.is_file() {
            return Err(Failure::Config(anyhow!("checkpoint file {} does not exist", p.display())));
        }
    }
    let indices = match fold {
        Some(f) => {
            let plan = fold_plan(cfg, loader.manifest()).config()?;
            split(&plan, loader.manifest(), f).config()?.1
        }
        None => (0..loader.len()).collect(),
    };

    let norm: NormStats = serde_json::from_slice(&fs::read(&norm_path).runtime()?)
        .with_context(|| format!("parsing {}", norm_path.display()))
        .runtime()?;
    loader.set_norm(norm);
    let mut model = build_model(cfg, 0).runtime()?;
    load_weights(&mut model, &weights).runtime()?;
    let evaluation = evaluate(&model, &Subset::new(&loader, indices), cfg.data.eval_batch).runtime()?;

    let report = EvalReport {
        checkpoint,
        fold,
        evaluation: &evaluation,
    };
    if let Some(dir) = out {
        create_dir(dir).runtime()?;
        write_json(&dir.join("eval.json"), &report).runtime()?;
    }
    if json {
        println!("{}", to_json(&report));
    } else {
        print!("{}", predictions_table(&evaluation));
        println!("accuracy {} over {} clips", percent(evaluation.accuracy), evaluation.predictions.len());
    }
    Ok(())
}

#[derive(Serialize)]
struct FoldResult {
    fold: usize,
    train_clips: usize,
    test_clips: usize,
    accuracy: f64,
    final_loss: f64,
    predictions: Vec<fightnet::train::Prediction>,
}

#[derive(Serialize)]
struct CrossvalReport {
    folds: Vec<FoldResult>,
    summary: CvSummary,
    display: String,
}

pub fn crossval(cfg: &RunConfig, out: Option<&Path>, json: bool) -> Outcome {
    let mut loader = open_loader(cfg).config()?;
    let plan = fold_plan(cfg, loader.manifest()).config()?;
    let splits: Vec<_> = (0..plan.k)
        .map(|f| split(&plan, loader.manifest(), f))
        .collect::<Result<_>>()
        .config()?;
    if let Some((f, _)) = splits.iter().enumerate().find(|(_, (tr, te))| tr.len() < 2 || te.is_empty()) {
        return Err(Failure::Config(anyhow!("fold {f} has too few clips to train and test")));
    }
    if let Some(dir) = out {
        create_dir(dir).runtime()?;
        write_json(&dir.join("folds.json"), &plan).runtime()?;
    }

    let mut folds = Vec::with_capacity(plan.k);
    for (f, (train, test)) in splits.into_iter().enumerate() {
        log::info!("fold {f}: {} train clips, {} test clips", train.len(), test.len());
        let seed = cfg.train.seed.wrapping_add(f as u64);
        let (model, log) = fit(cfg, &mut loader, train.clone(), seed).runtime()?;
        let e = evaluate(&model, &Subset::new(&loader, test.clone()), cfg.data.eval_batch).runtime()?;
        if let Some(dir) = out {
            let log = RunLog {
                fold_accuracy: Some(e.accuracy),
                ..log.clone()
            };
            log.write_jsonl(&dir.join(format!("fold_{f}.jsonl"))).runtime()?;
        }
        folds.push(FoldResult {
            fold: f,
            train_clips: train.len(),
            test_clips: test.len(),
            accuracy: e.accuracy,
            final_loss: log.losses().last().copied().unwrap_or(f64::NAN),
            predictions: e.predictions,
        });
    }
    let summary = CvSummary::new(folds.iter().map(|f| f.accuracy).collect()).runtime()?;
    let report = CrossvalReport {
        display: summary.to_string(),
        folds,
        summary,
    };
    if let Some(dir) = out {
        write_json(&dir.join("crossval.json"), &report).runtime()?;
    }
    if json {
        println!("{}", to_json(&report));
    } else {
        let mut t = Table::new(["fold", "train", "test", "accuracy", "final loss"]);
        for f in &report.folds {
            t.row([
                f.fold.to_string(),
                f.train_clips.to_string(),
                f.test_clips.to_string(),
                percent(f.accuracy),
                format!("{:.4}", f.final_loss),
            ]);
        }
        print!("{t}");
        println!("accuracy {}", report.display);
    }
    Ok(())
}

pub fn count(cfg: &RunConfig, measure: bool, json: bool) -> Outcome {
    let counts: ParamCount = if measure {
        count_params(&build_model(cfg, 0).runtime()?)
    } else {
        expected_params(&cfg.model).config()?
    };
    if json {
        println!("{}", to_json(&counts));
        return Ok(());
    }
    let mut t = Table::new(["component", "params"]);
    for c in Component::ALL {
        let name = match c {
            Component::BatchNorm => "batchnorm",
            _ => c.prefix(),
        };
        t.row([name.to_string(), thousands(counts.get(c))]);
    }
    t.row(["total".to_string(), thousands(counts.total)]);
    print!("{t}");
    Ok(())
}

#[derive(Serialize)]
struct GradRow {
    subject: String,
    trials: usize,
    checked: usize,
    refined: usize,
    skipped: usize,
    max_rel_error: f64,
    worst: String,
    passed: bool,
}

pub fn gradcheck(subjects: &[Subject], trials: usize, seed: u64, out: Option<&Path>, json: bool) -> Outcome {
    if trials == 0 {
        return Err(Failure::Config(anyhow!("trials must be positive")));
    }
    let subjects = if subjects.is_empty() { Subject::suite() } else { subjects.to_vec() };
    let opts = GradCheckOptions::default();
    let mut rows = Vec::with_capacity(subjects.len());
    for s in subjects {
        let mut row = GradRow {
            subject: s.to_string(),
            trials,
            checked: 0,
            refined: 0,
            skipped: 0,
            max_rel_error: 0.0,
            worst: String::new(),
            passed: true,
        };
        for t in 0..trials {
            let r = grad_check(s, &opts, &mut Rng::new(seed).fork(t as u64)).runtime()?;
            row.checked += r.checked;
            row.refined += r.refined;
            row.skipped += r.skipped;
            row.passed &= r.passed();
            if r.max_rel_error >= row.max_rel_error {
                row.max_rel_error = r.max_rel_error;
                row.worst = r.worst;
            }
        }
        rows.push(row);
    }
    if let Some(p) = out {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            create_dir(dir).runtime()?;
        }
        write_json(p, &rows).runtime()?;
    }
    if json {
        println!("{}", to_json(&rows));
    } else {
        let mut t = Table::new(["subject", "checked", "refined", "skipped", "max rel err", "worst", "status"]);
        for r in &rows {
            t.row([
                r.subject.clone(),
                r.checked.to_string(),
                r.refined.to_string(),
                r.skipped.to_string(),
                format!("{:.2e}", r.max_rel_error),
                r.worst.clone(),
                if r.passed { "ok" } else { "FAIL" }.to_string(),
            ]);
        }
        print!("{t}");
    }
    let failed = rows.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(Failure::Runtime(anyhow!(
            "{failed} subject(s) exceeded relative error {:e}",
            opts.tolerance
        )));
    }
    Ok(())
}

pub fn make_folds_cmd(cfg: &RunConfig, out: &Path) -> Outcome {
    let manifest = Manifest::read(cfg.manifest_path().config()?).config()?;
    let plan = make_folds(&manifest, cfg.data.folds, cfg.data.fold_seed).config()?;
    plan.write(out).runtime()?;
    let mut t = Table::new(["fold", "clips", "violent"]);
    for (f, ids) in plan.folds.iter().enumerate() {
        let violent = ids
            .iter()
            .filter(|id| manifest.find(id).is_some_and(|i| manifest.entries[i].label == 1))
            .count();
        t.row([f.to_string(), ids.len().to_string(), violent.to_string()]);
    }
    print!("{t}");
    println!("fold plan written to {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct BenchRow {
    mode: &'static str,
    clips: usize,
    frames_per_clip: usize,
    seconds: f64,
    frames_per_second: f64,
}

pub fn bench(cfg: &RunConfig, clips: usize, repeats: usize, parallel: bool, json: bool) -> Outcome {
    if clips == 0 || repeats == 0 {
        return Err(Failure::Config(anyhow!("clips and repeats must be positive")));
    }
    let model = build_model(cfg, cfg.train.seed).runtime()?;
    let mut rng = Rng::new(cfg.train.seed);
    let side = cfg.model.frame_size;
    let inputs: Vec<Vec<Tensor<f32>>> = (0..clips)
        .map(|_| (0..cfg.pipeline.frames).map(|_| Tensor::randn(&[3, side, side], &mut rng)).collect())
        .collect();
    let mut modes = vec![("sequential", false)];
    if parallel {
        modes.push(("parallel", true));
    }
    let mut rows = Vec::new();
    for (name, on) in modes {
        par::set_enabled(on);
        model.forward_batch(&inputs, Mode::Eval).runtime()?;
        let start = Instant::now();
        for _ in 0..repeats {
            model.forward_batch(&inputs, Mode::Eval).runtime()?;
        }
        let secs = start.elapsed().as_secs_f64();
        rows.push(BenchRow {
            mode: name,
            clips,
            frames_per_clip: cfg.pipeline.frames,
            seconds: secs,
            frames_per_second: (clips * cfg.pipeline.frames * repeats) as f64 / secs,
        });
    }
    par::set_enabled(parallel);
    if json {
        println!("{}", to_json(&rows));
    } else {
        let mut t = Table::new(["mode", "clips", "frames/clip", "seconds", "frames/s"]);
        for r in &rows {
            t.row([
                r.mode.to_string(),
                r.clips.to_string(),
                r.frames_per_clip.to_string(),
                format!("{:.3}", r.seconds),
                format!("{:.1}", r.frames_per_second),
            ]);
        }
        print!("{t}");
    }
    Ok(())
}

pub fn load_config(path: Option<&PathBuf>, overrides: &[String]) -> std::result::Result<RunConfig, Failure> {
    RunConfig::load(path.map(PathBuf::as_path), overrides).config()
}
