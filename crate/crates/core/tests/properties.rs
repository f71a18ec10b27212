use fightnet::kernels::{conv2d, maxpool2d};
use fightnet::model::{decode, encode};
use fightnet::pipeline::{crop, flip_horizontal, make_folds, sample_indices, Crop, Manifest, ManifestEntry};
use fightnet::train::{bce_loss, rmsprop_update, CvSummary};
use fightnet::{Rng, Tensor};
use proptest::prelude::*;

fn manifest(violent: usize, calm: usize) -> Manifest {
    let entries = (0..violent + calm)
        .map(|i| ManifestEntry {
            clip_id: format!("c{i:03}"),
            path: format!("clips/c{i:03}").into(),
            label: u8::from(i < violent),
            frame_count: 10,
        })
        .collect();
    Manifest::new(entries, "/data").unwrap()
}

proptest! {
    #[test]
    fn sampled_indices_span_clip(frames in 2usize..400, n in 2usize..40) {
        prop_assume!(n <= frames);
        let idx = sample_indices(frames, n).unwrap();
        prop_assert_eq!(idx.len(), n);
        prop_assert_eq!(idx[0], 0);
        prop_assert_eq!(idx[n - 1], frames - 1);
        prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn flip_is_involution(c in 1usize..4, h in 1usize..8, w in 1usize..8, seed: u64) {
        let img = Tensor::<f32>::randn(&[c, h, w], &mut Rng::new(seed));
        prop_assert_eq!(flip_horizontal(&flip_horizontal(&img)), img);
    }

    #[test]
    fn crops_stay_inside(h in 4usize..20, w in 4usize..20, side in 1usize..4, seed: u64) {
        let img = Tensor::<f32>::randn(&[3, h, w], &mut Rng::new(seed));
        for c in Crop::ALL {
            let (top, left) = c.offset(h, w, side);
            prop_assert!(top + side <= h && left + side <= w);
            let out = crop(&img, top, left, side).unwrap();
            prop_assert_eq!(out.dims(), &[3, side, side]);
        }
    }

    #[test]
    fn folds_are_stratified_partitions(violent in 3usize..30, calm in 3usize..30, k in 2usize..4, seed: u64) {
        let m = manifest(violent, calm);
        let plan = make_folds(&m, k, seed).unwrap();
        let mut ids: Vec<&String> = plan.folds.iter().flatten().collect();
        ids.sort();
        ids.dedup();
        prop_assert_eq!(ids.len(), m.len());
        let sizes: Vec<usize> = plan.folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for f in &plan.folds {
            let v = f.iter().filter(|id| m.entries[m.find(id).unwrap()].label == 1).count();
            prop_assert!(v.abs_diff(violent / k) <= 1);
        }
        prop_assert_eq!(make_folds(&m, k, seed).unwrap(), plan);
    }

    #[test]
    fn archive_round_trips(shapes in prop::collection::vec(prop::collection::vec(1usize..5, 1..4), 1..6), seed: u64) {
        let mut rng = Rng::new(seed);
        let entries: Vec<(String, Tensor<f32>)> = shapes
            .iter()
            .enumerate()
            .map(|(i, d)| (format!("t{i}.weight"), Tensor::randn(d, &mut rng)))
            .collect();
        let bytes = encode(&entries).unwrap();
        prop_assert_eq!(&decode(&bytes).unwrap(), &entries);
        prop_assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        prop_assert!(decode(&extra).is_err());
    }

    #[test]
    fn bce_is_finite_and_nonnegative(p in 0.0f64..=1.0, y in 0u8..2) {
        let (l, g) = bce_loss(p, y).unwrap();
        prop_assert!(l.is_finite() && l >= 0.0 && g.is_finite());
        let descends = if y == 1 { g < 0.0 } else { g > 0.0 };
        prop_assert!(descends);
    }

    #[test]
    fn rmsprop_moves_against_gradient(g in -10.0f64..10.0, p0 in -5.0f64..5.0) {
        prop_assume!(g.abs() > 1e-6);
        let mut p = Tensor::full(&[1], p0);
        let mut acc = Tensor::zeros(&[1]);
        rmsprop_update(&mut p, &Tensor::full(&[1], g), &mut acc, 1e-3, 0.99, 1e-8).unwrap();
        prop_assert!((p.data()[0] - p0) * g < 0.0);
        prop_assert!(acc.data()[0] > 0.0);
    }

    #[test]
    fn conv_is_linear_in_input(seed: u64, s in 1usize..3, pad in 0usize..2) {
        let mut rng = Rng::new(seed);
        let a = Tensor::<f64>::randn(&[2, 6, 6], &mut rng);
        let b = Tensor::<f64>::randn(&[2, 6, 6], &mut rng);
        let w = Tensor::<f64>::randn(&[3, 2, 3, 3], &mut rng);
        let zero = Tensor::zeros(&[3]);
        let sum = Tensor::new(&[2, 6, 6], a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect()).unwrap();
        let ya = conv2d(&a, &w, &zero, s, pad).unwrap();
        let yb = conv2d(&b, &w, &zero, s, pad).unwrap();
        let ys = conv2d(&sum, &w, &zero, s, pad).unwrap();
        for ((p, q), r) in ya.data().iter().zip(yb.data()).zip(ys.data()) {
            prop_assert!((p + q - r).abs() < 1e-10);
        }
    }

    #[test]
    fn pooling_never_exceeds_input_max(seed: u64) {
        let x = Tensor::<f32>::randn(&[2, 7, 7], &mut Rng::new(seed));
        let (y, _) = maxpool2d(&x, 3, 2).unwrap();
        let top = x.data().iter().cloned().fold(f32::MIN, f32::max);
        prop_assert!(y.data().iter().all(|&v| v <= top));
        prop_assert_eq!(y.dims(), &[2, 3, 3]);
    }

    #[test]
    fn cv_summary_bounds(accs in prop::collection::vec(0.0f64..=1.0, 1..10)) {
        let s = CvSummary::new(accs.clone()).unwrap();
        let lo = accs.iter().cloned().fold(f64::MAX, f64::min);
        let hi = accs.iter().cloned().fold(f64::MIN, f64::max);
        prop_assert!(s.mean >= lo - 1e-12 && s.mean <= hi + 1e-12);
        prop_assert!(s.std >= 0.0 && s.std <= (hi - lo) / 2.0 + 1e-12);
    }
}
