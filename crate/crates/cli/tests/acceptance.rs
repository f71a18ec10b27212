//! One PASS/FAIL line per acceptance criterion.
//!
//! ```text
//! cargo test -p fightnet-cli --test acceptance -- --nocapture
//! ```

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use fightnet::kernels::{add, conv2d, hadamard, sigmoid, tanh};
use fightnet::layers::Mode;
use fightnet::model::{
    count_params, encode, expected_params, load_weights, load_weights_scoped, read_archive, save_weights, Component, LoadScope,
    Model, ModelConfig,
};
use fightnet::pipeline::{
    finish_inputs, flip_horizontal, frame_difference, make_folds, sample_indices, synthetic_frames, write_synthetic_dataset, Clip,
    ClipLoader, ClipSource, InMemoryClips, NormStats, PipelineConfig, NONVIOLENT, VIOLENT,
};
use fightnet::recurrent::{convlstm_step, lstm_step, ConvLstmParams, ConvLstmState, LstmParams, LstmState, GATES};
use fightnet::train::{evaluate, grad_check, train_fold, GradCheckOptions, Subject, TrainConfig};
use fightnet::{model::InputMode, par, Rng, Tensor};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn within(value: usize, reference: usize, tol: f64) -> bool {
    (value as f64 - reference as f64).abs() / reference as f64 <= tol
}

fn parameter_audit() -> Check {
    // Reference totals for the two aggregators.
    const CONVLSTM_TOTAL: usize = 9_619_544;
    const LSTM_TOTAL: usize = 77_520_072;
    // Gate count × (input kernel + hidden kernel + bias), independently.
    let convlstm_agg = 4 * (256 * 256 * 3 * 3 + 256 * 256 * 3 * 3 + 256);
    let lstm_agg = 4 * (1000 * 4096 + 1000 * 1000 + 1000);

    let start = Instant::now();
    let conv = expected_params(&ModelConfig::default()).map_err(e)?;
    let lstm = expected_params(&ModelConfig::lstm_baseline()).map_err(e)?;
    let measured = count_params(&Model::<f32>::build(&ModelConfig::default(), &mut Rng::new(0)).map_err(e)?);
    ensure(measured == conv, || format!("measured {measured:?} != closed form {conv:?}"))?;
    ensure(conv.aggregator == convlstm_agg, || format!("convlstm aggregator {}", conv.aggregator))?;
    ensure(lstm.aggregator == lstm_agg, || format!("lstm aggregator {}", lstm.aggregator))?;
    ensure(within(conv.total, CONVLSTM_TOTAL, 0.01), || format!("convlstm total {}", conv.total))?;
    ensure(within(lstm.total, LSTM_TOTAL, 0.02), || format!("lstm total {}", lstm.total))?;
    ensure(start.elapsed().as_secs_f64() < 1.0, || format!("took {:?}", start.elapsed()))?;
    Ok(format!(
        "convlstm total {} ({:+}), aggregator {}; lstm total {} ({:+.2}%), aggregator {}",
        conv.total,
        conv.total as i64 - CONVLSTM_TOTAL as i64,
        conv.aggregator,
        lstm.total,
        100.0 * (lstm.total as f64 - LSTM_TOTAL as f64) / LSTM_TOTAL as f64,
        lstm.aggregator
    ))
}

/// Rows `[g·h, (g+1)·h)` of a tensor stacked along its leading axis.
fn gate_rows(t: &Tensor<f64>, g: usize, h: usize) -> Tensor<f64> {
    let row: usize = t.dims()[1..].iter().product();
    let mut dims = t.dims().to_vec();
    dims[0] = h;
    Tensor::new(&dims, t.data()[g * h * row..(g + 1) * h * row].to_vec()).unwrap()
}

fn equation_fidelity() -> Check {
    let mut rng = Rng::new(11);
    let trials = 120;
    for trial in 0..trials {
        let (cin, hid) = (1 + rng.below(3), 1 + rng.below(3));
        let k = [1, 3][rng.below(2)];
        let (ht, wd) = (1 + rng.below(4), 1 + rng.below(4));
        let w_x = Tensor::<f64>::randn(&[GATES * hid, cin, k, k], &mut rng);
        let w_h = Tensor::<f64>::randn(&[GATES * hid, hid, k, k], &mut rng);
        let bias = Tensor::<f64>::randn(&[GATES * hid], &mut rng);
        let x = Tensor::<f64>::randn(&[cin, ht, wd], &mut rng);
        let state = ConvLstmState {
            h: Tensor::randn(&[hid, ht, wd], &mut rng),
            c: Tensor::randn(&[hid, ht, wd], &mut rng),
        };
        let p = ConvLstmParams::from_tensors("cell", w_x.clone(), w_h.clone(), bias.clone()).map_err(e)?;
        let got = convlstm_step(&x, &state, &p).map_err(e)?;

        let pad = k / 2;
        let zero = Tensor::zeros(&[hid]);
        let pre = |g: usize| -> Result<Tensor<f64>, String> {
            let zx = conv2d(&x, &gate_rows(&w_x, g, hid), &gate_rows(&bias, g, hid), 1, pad).map_err(e)?;
            let zh = conv2d(&state.h, &gate_rows(&w_h, g, hid), &zero, 1, pad).map_err(e)?;
            add(&zx, &zh).map_err(e)
        };
        let i = sigmoid(&pre(0)?);
        let f = sigmoid(&pre(1)?);
        let c_tilde = tanh(&pre(2)?);
        let c = add(&hadamard(&c_tilde, &i).map_err(e)?, &hadamard(&state.c, &f).map_err(e)?).map_err(e)?;
        let o = sigmoid(&pre(3)?);
        let h = hadamard(&o, &tanh(&c)).map_err(e)?;

        let bits = |t: &Tensor<f64>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        ensure(bits(&got.c) == bits(&c) && bits(&got.h) == bits(&h), || {
            format!("trial {trial}: cell differs from the straight-line composition")
        })?;
    }
    Ok(format!("{trials} random cells bit-identical"))
}

fn gradient_suite() -> Check {
    let start = Instant::now();
    let opts = GradCheckOptions::default();
    let mut worst = (0.0f64, String::new());
    for s in Subject::suite() {
        let trials = if s == Subject::Model { 3 } else { 10 };
        for t in 0..trials {
            let r = grad_check(s, &opts, &mut Rng::new(500 + t)).map_err(e)?;
            ensure(r.passed(), || format!("{s} trial {t}: {:.3e} at {}", r.max_rel_error, r.worst))?;
            if r.max_rel_error > worst.0 {
                worst = (r.max_rel_error, format!("{s}:{}", r.worst));
            }
        }
    }
    Ok(format!(
        "{} subjects, worst {:.2e} ({}), {:.1}s",
        Subject::suite().len(),
        worst.0,
        worst.1,
        start.elapsed().as_secs_f64()
    ))
}

fn reduction() -> Check {
    let mut rng = Rng::new(21);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (cin, hid) = (1 + rng.below(6), 1 + rng.below(6));
        let w_x = Tensor::<f64>::randn(&[GATES * hid, cin], &mut rng);
        let w_h = Tensor::<f64>::randn(&[GATES * hid, hid], &mut rng);
        let bias = Tensor::<f64>::randn(&[GATES * hid], &mut rng);
        let x = Tensor::<f64>::randn(&[cin], &mut rng);
        let (h0, c0) = (Tensor::<f64>::randn(&[hid], &mut rng), Tensor::<f64>::randn(&[hid], &mut rng));

        let fc = LstmParams::from_tensors("fc", w_x.clone(), w_h.clone(), bias.clone()).map_err(e)?;
        let want = lstm_step(&x, &LstmState { h: h0.clone(), c: c0.clone() }, &fc).map_err(e)?;

        let as4 = |t: &Tensor<f64>| Tensor::new(&[t.dims()[0], t.dims()[1], 1, 1], t.data().to_vec()).unwrap();
        let as3 = |t: &Tensor<f64>| Tensor::new(&[t.dims()[0], 1, 1], t.data().to_vec()).unwrap();
        let conv = ConvLstmParams::from_tensors("conv", as4(&w_x), as4(&w_h), bias).map_err(e)?;
        let got = convlstm_step(&as3(&x), &ConvLstmState { h: as3(&h0), c: as3(&c0) }, &conv).map_err(e)?;
        for (a, b) in got.h.data().iter().chain(got.c.data()).zip(want.h.data().iter().chain(want.c.data())) {
            worst = worst.max((a - b).abs() / b.abs().max(1e-300));
        }
    }
    ensure(worst <= 1e-12, || format!("max relative difference {worst:.3e}"))?;
    Ok(format!("50 random cells, max relative difference {worst:.1e}"))
}

fn synthetic_clips(n_per_class: usize, frames: usize, side: usize, seed: u64) -> InMemoryClips {
    let mut rng = Rng::new(seed);
    let mut clips = Vec::new();
    for i in 0..n_per_class {
        for label in [VIOLENT, NONVIOLENT] {
            let raw = synthetic_frames(label, frames, side, &mut rng.fork(clips.len() as u64));
            clips.push(Clip {
                clip_id: format!("{label}_{i}"),
                label,
                frames: finish_inputs(raw, InputMode::Diff, &NormStats::default()).unwrap(),
            });
        }
    }
    InMemoryClips { clips }
}

fn overfit() -> Check {
    let start = Instant::now();
    let data = synthetic_clips(4, 8, 32, 3);
    let mut model = Model::<f32>::build(&ModelConfig::tiny(32, 8), &mut Rng::new(1)).map_err(e)?;
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        batch_size: 8,
        iterations: 500,
        ..TrainConfig::default()
    };
    let log = train_fold(&mut model, &data, &cfg).map_err(e)?;
    let acc = evaluate(&model, &data, 8).map_err(e)?.accuracy;
    let first = log
        .iterations
        .iter()
        .find(|r| r.batch_accuracy == 1.0)
        .map_or("never".to_string(), |r| r.iteration.to_string());
    ensure(acc == 1.0, || format!("training accuracy {acc} after 500 iterations"))?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 600.0, || format!("took {secs:.0}s"))?;
    Ok(format!(
        "8 clips, lr 1e-3: 100% after 500 iterations (first fully correct batch at iteration {first}), final loss {:.4}, {secs:.1}s",
        log.losses().last().unwrap()
    ))
}

fn pipeline_properties() -> Check {
    let dir = tempfile::tempdir().map_err(e)?;
    let manifest = write_synthetic_dataset(dir.path(), 10, 24, 40, 5).map_err(e)?;

    let plan = make_folds(&manifest, 5, 9).map_err(e)?;
    let mut all: Vec<&String> = plan.folds.iter().flatten().collect();
    all.sort();
    all.dedup();
    ensure(all.len() == manifest.len() && plan.folds.iter().flatten().count() == manifest.len(), || {
        "folds do not partition the manifest".into()
    })?;
    for (f, ids) in plan.folds.iter().enumerate() {
        let violent = ids.iter().filter(|id| manifest.entries[manifest.find(id).unwrap()].label == VIOLENT).count();
        ensure(ids.len() == 4 && violent == 2, || format!("fold {f}: {} clips, {violent} violent", ids.len()))?;
        let (train, test) = plan.split(&manifest, f).map_err(e)?;
        ensure(train.iter().all(|i| !test.contains(i)) && train.len() + test.len() == manifest.len(), || {
            format!("fold {f}: train and test overlap")
        })?;
    }

    for frames in 2..60 {
        for n in 2..=frames {
            let idx = sample_indices(frames, n).map_err(e)?;
            ensure(idx[0] == 0 && idx[n - 1] == frames - 1 && idx.windows(2).all(|w| w[0] <= w[1]), || {
                format!("sample_indices({frames}, {n}) = {idx:?}")
            })?;
        }
    }

    let still = synthetic_frames(NONVIOLENT, 6, 24, &mut Rng::new(2));
    let diffs = frame_difference(&still).map_err(e)?;
    ensure(diffs.iter().all(|d| d.data().iter().all(|&v| v == 0.0)), || "static clip difference is not zero".into())?;

    let img = Tensor::<f32>::randn(&[3, 7, 9], &mut Rng::new(3));
    ensure(flip_horizontal(&flip_horizontal(&img)) == img, || "flip is not an involution".into())?;

    let loader = ClipLoader::new(manifest.clone(), PipelineConfig { frames: 20, ..PipelineConfig::default() }, InputMode::Diff)
        .map_err(e)?;
    for mode in [Mode::Eval, Mode::Train] {
        let clip = loader.load(0, mode, &mut Rng::new(4)).map_err(e)?;
        ensure(clip.len() == 19 && clip.iter().all(|t| t.dims() == [3, 224, 224]), || {
            format!("{mode:?} inputs: {} frames of {:?}", clip.len(), clip[0].dims())
        })?;
    }

    let data = synthetic_clips(3, 6, 16, 8);
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        batch_size: 4,
        iterations: 15,
        seed: 42,
        ..TrainConfig::default()
    };
    let run = |parallel: bool| -> Result<_, String> {
        par::set_enabled(parallel);
        let mut model = Model::<f32>::build(&ModelConfig::tiny(16, 3), &mut Rng::new(6)).map_err(e)?;
        let log = train_fold(&mut model, &data, &cfg).map_err(e)?;
        let weights: Vec<Vec<u32>> = model
            .named_tensors()
            .iter()
            .map(|(_, t)| t.data().iter().map(|v| v.to_bits()).collect())
            .collect();
        Ok((log.iterations, weights))
    };
    let a = run(false)?;
    let b = run(false)?;
    let c = run(true)?;
    par::set_enabled(false);
    ensure(a == b, || "two seeded runs differ".into())?;
    ensure(a == c, || "parallel run differs from sequential".into())?;
    Ok("folds, sampling, differencing, flip, 224×224 inputs, determinism".into())
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn crossval_protocol() -> Check {
    let out = tempfile::tempdir().map_err(e)?;
    let start = Instant::now();
    let res = Command::new(env!("CARGO_BIN_EXE_fightnet"))
        .arg("crossval")
        .arg("--config")
        .arg(repo_root().join("configs/synthetic.toml"))
        .arg("--out")
        .arg(out.path())
        .env("RUST_LOG", "warn")
        .output()
        .map_err(e)?;
    let stdout = String::from_utf8_lossy(&res.stdout);
    ensure(res.status.success(), || {
        format!("exit {:?}: {}", res.status.code(), String::from_utf8_lossy(&res.stderr))
    })?;
    let line = stdout
        .lines()
        .find(|l| l.starts_with("accuracy "))
        .ok_or_else(|| format!("no summary line in:\n{stdout}"))?;
    let summary = line.trim_start_matches("accuracy ");
    let (mean, std) = summary
        .strip_suffix('%')
        .and_then(|s| s.split_once('±'))
        .ok_or_else(|| format!("bad summary `{summary}`"))?;
    let mean_ok = mean.split_once('.').is_some_and(|(_, d)| d.len() == 1) && mean.parse::<f64>().is_ok();
    let std_ok = std.split_once('.').is_some_and(|(_, d)| d.len() == 2) && std.parse::<f64>().is_ok();
    ensure(mean_ok && std_ok, || format!("summary `{summary}` is not mean±std%"))?;
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.path().join("crossval.json")).map_err(e)?).map_err(e)?;
    let folds = report["folds"].as_array().map_or(0, Vec::len);
    ensure(folds == 5, || format!("{folds} folds in crossval.json"))?;
    ensure((0..5).all(|f| out.path().join(format!("fold_{f}.jsonl")).is_file()), || "missing fold logs".into())?;
    Ok(format!("5 folds on the bundled 20-clip manifest: {summary} ({:.1}s)", start.elapsed().as_secs_f64()))
}

fn archive() -> Check {
    let dir = tempfile::tempdir().map_err(e)?;
    let mut cfg = ModelConfig::tiny(16, 4);
    cfg.norm_slots = vec![fightnet::model::NormSlot::Batchnorm];
    let src = Model::<f32>::build(&cfg, &mut Rng::new(1)).map_err(e)?;
    let path = dir.path().join("w.fnl");
    save_weights(&src, &path).map_err(e)?;

    let bits = |m: &Model<f32>| -> Vec<(String, Vec<u32>)> {
        m.named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.data().iter().map(|v| v.to_bits()).collect()))
            .collect()
    };
    let mut dst = Model::<f32>::build(&cfg, &mut Rng::new(2)).map_err(e)?;
    ensure(bits(&dst) != bits(&src), || "different seeds gave identical models".into())?;
    load_weights(&mut dst, &path).map_err(e)?;
    ensure(bits(&dst) == bits(&src), || "round trip is not bit-exact".into())?;

    let backbone: Vec<_> = read_archive(&path)
        .map_err(e)?
        .into_iter()
        .filter(|(n, _)| Component::of(n) == Some(Component::Backbone))
        .collect();
    let partial = dir.path().join("backbone.fnl");
    std::fs::write(&partial, encode(&backbone).map_err(e)?).map_err(e)?;
    let mut fresh = Model::<f32>::build(&cfg, &mut Rng::new(3)).map_err(e)?;
    let before = bits(&fresh);
    load_weights_scoped(&mut fresh, &partial, LoadScope::BackboneOnly).map_err(e)?;
    let (want, after) = (bits(&src), bits(&fresh));
    let mut loaded = 0;
    for ((name, now), ((_, orig), (_, init))) in after.iter().zip(want.iter().zip(&before)) {
        if Component::of(name) == Some(Component::Backbone) {
            ensure(now == orig, || format!("{name} was not loaded"))?;
            loaded += 1;
        } else {
            ensure(now == init, || format!("{name} changed on a backbone-only load"))?;
        }
    }
    Ok(format!(
        "{} tensors round-trip; backbone-only load set {loaded}, left {} untouched",
        want.len(),
        want.len() - loaded
    ))
}

#[test]
fn acceptance() {
    par::set_enabled(false);
    let criteria: [Criterion; 8] = [
        ("parameter audit", parameter_audit),
        ("equation fidelity", equation_fidelity),
        ("gradient suite", gradient_suite),
        ("reduction to fully-connected LSTM", reduction),
        ("overfit sanity", overfit),
        ("pipeline properties", pipeline_properties),
        ("cross-validation protocol", crossval_protocol),
        ("weight archive", archive),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {}: PASS  {name}: {detail}", i + 1),
            Err(why) => {
                println!("criterion {}: FAIL  {name}: {why}", i + 1);
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
