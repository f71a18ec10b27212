use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fightnet::layers::Mode;
use fightnet::model::{Model, ModelConfig};
use fightnet::{par, Rng, Tensor};

const MODES: [(&str, bool); 2] = [("sequential", false), ("parallel", true)];

fn clips(n: usize, frames: usize, side: usize, rng: &mut Rng) -> Vec<Vec<Tensor<f32>>> {
    (0..n)
        .map(|_| (0..frames).map(|_| Tensor::randn(&[3, side, side], rng)).collect())
        .collect()
}

/// Training step cost (forward + backward) of the desk-scale model.
fn bench_tiny(c: &mut Criterion) {
    let mut rng = Rng::new(0);
    let model = Model::<f32>::build(&ModelConfig::tiny(32, 8), &mut rng).unwrap();
    let batch = clips(8, 8, 32, &mut rng);
    let mut group = c.benchmark_group("tiny_train_step");
    for (mode, on) in MODES {
        par::set_enabled(on);
        group.bench_function(mode, |bench| {
            bench.iter(|| {
                let cache = model.forward_batch(&batch, Mode::Train).unwrap();
                model.backward_batch(&cache, &[0.1; 8]).unwrap()
            })
        });
    }
    group.finish();
}

/// Eval-mode forward of the full-size model on short clips.
fn bench_full(c: &mut Criterion) {
    let mut rng = Rng::new(1);
    let model = Model::<f32>::build(&ModelConfig::default(), &mut rng).unwrap();
    let mut group = c.benchmark_group("full_forward");
    group.sample_size(10);
    for n in [1, 4] {
        let batch = clips(n, 4, 224, &mut rng);
        for (mode, on) in MODES {
            par::set_enabled(on);
            group.bench_with_input(BenchmarkId::new(mode, n), &n, |bench, _| {
                bench.iter(|| model.forward_batch(&batch, Mode::Eval).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench_tiny, bench_full);
criterion_main!(benches);
