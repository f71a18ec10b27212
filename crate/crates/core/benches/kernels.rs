use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fightnet::kernels::{conv2d, conv2d_grad};
use fightnet::par;
use fightnet::recurrent::{convlstm_step, ConvLstmParams, ConvLstmState};
use fightnet::{Rng, Tensor};

const MODES: [(&str, bool); 2] = [("sequential", false), ("parallel", true)];

fn bench_conv(c: &mut Criterion) {
    let mut rng = Rng::new(0);
    // First AlexNet layer and a mid-network 3x3 layer.
    let cases = [
        ("conv1", [3, 224, 224], [96, 3, 11, 11], 4, 2),
        ("conv3", [256, 13, 13], [384, 256, 3, 3], 1, 1),
    ];
    let mut group = c.benchmark_group("conv2d");
    group.sample_size(10);
    for (name, xd, wd, stride, pad) in cases {
        let x = Tensor::<f32>::randn(&xd, &mut rng);
        let w = Tensor::<f32>::randn(&wd, &mut rng);
        let b = Tensor::<f32>::zeros(&[wd[0]]);
        for (mode, on) in MODES {
            par::set_enabled(on);
            group.bench_with_input(BenchmarkId::new(mode, name), &(), |bench, _| {
                bench.iter(|| conv2d(&x, &w, &b, stride, pad).unwrap())
            });
        }
    }
    group.finish();

    let x = Tensor::<f32>::randn(&[256, 13, 13], &mut rng);
    let w = Tensor::<f32>::randn(&[384, 256, 3, 3], &mut rng);
    let gy = Tensor::<f32>::randn(&[384, 13, 13], &mut rng);
    let mut group = c.benchmark_group("conv2d_grad");
    group.sample_size(10);
    for (mode, on) in MODES {
        par::set_enabled(on);
        group.bench_function(mode, |bench| bench.iter(|| conv2d_grad(&x, &w, &gy, 1, 1).unwrap()));
    }
    group.finish();
}

fn bench_convlstm(c: &mut Criterion) {
    let mut rng = Rng::new(1);
    let p = ConvLstmParams::<f32>::init("cell", 256, 256, 3, &mut rng).unwrap();
    let x = Tensor::<f32>::randn(&[256, 6, 6], &mut rng);
    let s = ConvLstmState::zeros(256, 6, 6);
    let mut group = c.benchmark_group("convlstm_step");
    group.sample_size(10);
    for (mode, on) in MODES {
        par::set_enabled(on);
        group.bench_function(mode, |bench| bench.iter(|| convlstm_step(&x, &s, &p).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, bench_conv, bench_convlstm);
criterion_main!(benches);
