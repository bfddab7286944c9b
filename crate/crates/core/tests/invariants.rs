use cellprep_core::data::synth::{synth_scene, SynthSpec, MEMBRANE, NUCLEUS};
use cellprep_core::data::ClassColormap;
use cellprep_core::metrics::{kfold_split, metrics_from_confusion, split_hash, ConfusionMatrix};
use cellprep_core::translation::{make_translated, SigmoidOn};
use cellprep_core::{
    build_unet, ensemble_mix, fixed_weights, stack_outputs, EnsembleWeights, LabelMap, Tensor,
    UNetConfig,
};
use proptest::prelude::*;

fn tensor(shape: &[usize], vals: Vec<f64>) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), vals).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ensemble_mix_matches_naive_loop(
        s in 1usize..=6,
        b in 1usize..=2,
        c in 1usize..=3,
        hw in 1usize..=3,
        seed in any::<u64>(),
    ) {
        let mut x = seed;
        let mut rnd = move || {
            x ^= x << 13; x ^= x >> 7; x ^= x << 17;
            (x >> 11) as f64 / (1u64 << 53) as f64 * 4.0 - 2.0
        };
        let parts: Vec<Tensor<f64>> = (0..s).map(|_| tensor(&[b, c, hw, hw], (0..b * c * hw * hw).map(|_| rnd()).collect())).collect();
        let w: Vec<f64> = (0..s).map(|_| rnd()).collect();
        let bias = rnd();
        let refs: Vec<&Tensor<f64>> = parts.iter().collect();
        let stacked = stack_outputs(&refs).unwrap();
        let out = ensemble_mix(&stacked, &EnsembleWeights::from_values(w.clone(), bias, true).unwrap()).unwrap();
        for i in 0..out.numel() {
            let mut naive = bias;
            for k in 0..s {
                naive += w[k] * parts[k].data()[i];
            }
            prop_assert!((out.data()[i] - naive).abs() < 1e-6);
        }
        let summed = ensemble_mix(&stacked, &fixed_weights(s).unwrap()).unwrap();
        for i in 0..out.numel() {
            let plain = parts.iter().fold(0.0, |acc, p| acc + p.data()[i]);
            prop_assert_eq!(summed.data()[i], plain);
        }
    }

    #[test]
    fn dice_is_a_function_of_iou(pred in prop::collection::vec(0u8..3, 64), truth in prop::collection::vec(0u8..3, 64)) {
        let mut cm = ConfusionMatrix::new(3);
        cm.add_labels(&pred, &truth).unwrap();
        let m = metrics_from_confusion(&cm).unwrap();
        for c in 0..3 {
            if let (Some(i), Some(d)) = (m.iou[c], m.dice[c]) {
                prop_assert!((d - 2.0 * i / (1.0 + i)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn translated_images_stay_inside_unit_interval(
        input in prop::collection::vec(0.0f64..=1.0, 16),
        filt in prop::collection::vec(0.0f64..20.0, 32),
    ) {
        let x = tensor(&[1, 1, 4, 4], input);
        let f = tensor(&[1, 2, 4, 4], filt);
        for t in make_translated(&x, &f, SigmoidOn::Sum).unwrap() {
            prop_assert!(t.data().iter().all(|v| *v > 0.0 && *v < 1.0));
        }
    }

    #[test]
    fn saturated_f32_translation_stays_open(
        input in prop::collection::vec(0.0f32..=1.0, 16),
        filt in prop::collection::vec(0.0f32..1e4, 32),
    ) {
        let x = Tensor::new([1, 1, 4, 4], input).unwrap();
        let f = Tensor::new([1, 2, 4, 4], filt).unwrap();
        for t in make_translated(&x, &f, SigmoidOn::Sum).unwrap() {
            prop_assert!(t.data().iter().all(|v| *v > 0.0 && *v < 1.0));
        }
    }

    #[test]
    fn colormap_round_trips(labels in prop::collection::vec(0u8..3, 30)) {
        let cmap = ClassColormap::default();
        let lab = LabelMap::new(1, 5, 6, labels).unwrap();
        let img = cmap.encode(&lab, 0).unwrap();
        let back = cmap.decode(&img, std::path::Path::new("m.png")).unwrap();
        prop_assert_eq!(&back, &lab);
        prop_assert_eq!(cmap.encode(&back, 0).unwrap(), img);
    }

    #[test]
    fn kfold_partitions(k in 2usize..6, per in 2usize..8, seed in any::<u64>()) {
        let n = k * per + k * 2;
        let n = n - n % k;
        let val = 1;
        let folds = kfold_split(n, k, val, seed).unwrap();
        let mut tests: Vec<usize> = folds.iter().flat_map(|f| f.test.clone()).collect();
        tests.sort_unstable();
        prop_assert_eq!(tests, (0..n).collect::<Vec<_>>());
        for f in &folds {
            let mut all: Vec<usize> = f.train.iter().chain(&f.val).chain(&f.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert_eq!(f.val.len(), val);
        }
        prop_assert_eq!(split_hash(&folds), split_hash(&kfold_split(n, k, val, seed).unwrap()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn synthetic_scenes_are_valid(seed in any::<u64>(), n_cells in 0usize..8) {
        let spec = SynthSpec { seed, n_cells, ..SynthSpec::default() };
        let (img, lab) = synth_scene(&spec).unwrap();
        prop_assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(lab.labels().iter().all(|&l| l < 3));
        // every nucleus pixel is 8-surrounded by nucleus or membrane
        let n = spec.size as isize;
        for r in 0..n {
            for c in 0..n {
                if lab.get(0, r as usize, c as usize) != NUCLEUS {
                    continue;
                }
                for dr in -1..=1 {
                    for dc in -1..=1 {
                        let (rr, cc) = (r + dr, c + dc);
                        prop_assert!(rr >= 0 && cc >= 0 && rr < n && cc < n);
                        let l = lab.get(0, rr as usize, cc as usize);
                        prop_assert!(l == NUCLEUS || l == MEMBRANE);
                    }
                }
            }
        }
    }

    #[test]
    fn penultimate_maps_are_nonnegative(seed in any::<u64>(), vals in prop::collection::vec(-1.0f32..2.0, 256)) {
        let cfg = UNetConfig { in_channels: 1, num_classes: 3, depth: 2, base_width: 2 };
        let net = build_unet::<f32>(cfg, seed).unwrap();
        let x = Tensor::new([1, 1, 16, 16], vals).unwrap();
        let (_, pen) = net.forward(&x).unwrap();
        prop_assert_eq!(pen.shape(), &[1, 3, 16, 16]);
        prop_assert!(pen.data().iter().all(|v| *v >= 0.0));
    }
}
