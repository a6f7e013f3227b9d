mod common;

use common::*;
use hmk_core::masking::{feature_mask, hybrid_mask_with_tol, input_mask, mask_planes, MaskedFeatures, MaskingMode};
use hmk_core::prototype::{average_prototypes, cosine_map, map_prototype, predict_mask, upsample_prediction};
use hmk_core::tensor::resize_map;
use hmk_core::{broadcast_mask, cosine_correlation, hadamard, resize_bilinear, BinaryMask, Error, Tensor};
use rand::RngExt;

#[test]
fn hadamard_and_broadcast_match_loops() {
    let mut rng = rng(10);
    for _ in 0..50 {
        let (c, h, w) = (rng.random_range(1..=6), rng.random_range(1..=9), rng.random_range(1..=9));
        let a = random_tensor(&mut rng, &[c, h, w]);
        let b = random_tensor(&mut rng, &[c, h, w]);
        let prod = hadamard(&a, &b).unwrap();
        for i in 0..a.len() {
            assert_eq!(prod.data()[i], a.data()[i] * b.data()[i]);
        }
        let plane = random_tensor(&mut rng, &[h, w]);
        let bc = broadcast_mask(&plane, c).unwrap();
        assert_eq!(bc.shape(), &[c, h, w]);
        for k in 0..c {
            for p in 0..h * w {
                assert_eq!(bc.data()[k * h * w + p], plane.data()[p]);
            }
        }
    }
}

#[test]
fn feature_mask_matches_oracle_in_f64() {
    let mut rng = rng(11);
    for _ in 0..50 {
        let (c, h, w) = (rng.random_range(1..=5), rng.random_range(1..=12), rng.random_range(1..=12));
        let (mh, mw) = (rng.random_range(1..=30), rng.random_range(1..=30));
        let feat: Tensor<f64> = random_tensor(&mut rng, &[c, h, w]).cast();
        let mask = random_mask(&mut rng, mh, mw, 0.4);
        let got = feature_mask(&feat, &mask, 3).unwrap();
        assert_eq!(got.mode(), MaskingMode::Fm);
        assert_eq!(got.source_layer(), 3);
        let want = feature_mask_f64(feat.data(), c, h, w, &mask);
        assert!(max_abs_diff(got.features().data(), &want) < 1e-12);
    }
}

#[test]
fn mask_planes_resizes_mismatched_masks() {
    let mut rng = rng(12);
    let img = random_tensor(&mut rng, &[2, 5, 7]);
    let mask = random_mask(&mut rng, 10, 14, 0.5);
    let got = mask_planes(&img, &mask).unwrap();
    let want = feature_mask_f64(&to_f64(&img), 2, 5, 7, &mask);
    assert!(max_abs_diff(&to_f64(&got), &want) < 1e-6);
}

#[test]
fn input_mask_requires_three_channels() {
    let mask = BinaryMask::filled(4, 4, true).unwrap();
    let err = input_mask(&Tensor::<f32>::ones(&[4, 4, 4]).unwrap(), &mask).unwrap_err();
    assert!(matches!(err, Error::InvalidShape { .. }));
    assert!(input_mask(&Tensor::<f32>::ones(&[3, 4, 4]).unwrap(), &mask).is_ok());
}

#[test]
fn hybrid_with_tolerance_matches_loop() {
    let mut rng = rng(13);
    for _ in 0..50 {
        let (c, h, w) = (rng.random_range(1..=4), rng.random_range(1..=8), rng.random_range(1..=8));
        let fm = random_tensor(&mut rng, &[c, h, w]);
        let im = random_tensor(&mut rng, &[c, h, w]);
        let tol = rng.random_range(0.0f32..1.0);
        let got = hybrid_mask_with_tol(
            &MaskedFeatures::new(fm.clone(), MaskingMode::Fm, 1).unwrap(),
            &MaskedFeatures::new(im.clone(), MaskingMode::Im, 1).unwrap(),
            tol,
        )
        .unwrap();
        assert_eq!(got.mode(), MaskingMode::Hm);
        for i in 0..fm.len() {
            let want = if fm.data()[i].abs() > tol { fm.data()[i] } else { im.data()[i] };
            assert_eq!(got.features().data()[i], want);
        }
    }
}

#[test]
fn cosine_correlation_matches_oracle_in_f64() {
    let mut rng = rng(14);
    for _ in 0..30 {
        let c = rng.random_range(1..=8);
        let q: Tensor<f64> = sparse_tensor(&mut rng, &[c, 3, 4], 0.2).cast();
        let s: Tensor<f64> = sparse_tensor(&mut rng, &[c, 5, 2], 0.2).cast();
        let got = cosine_correlation(&q, &s).unwrap();
        let want = cosine(q.data(), s.data(), c, (3, 4), (5, 2));
        assert!(max_abs_diff(got.tensor().data(), &want) < 1e-12);
    }
}

#[test]
fn resize_map_matches_oracle_for_float_maps() {
    let mut rng = rng(15);
    for _ in 0..50 {
        let (h, w, oh, ow) = (
            rng.random_range(1..=20),
            rng.random_range(1..=20),
            rng.random_range(1..=20),
            rng.random_range(1..=20),
        );
        let map: Tensor<f64> = random_tensor(&mut rng, &[h, w]).cast();
        let got = resize_map(&map, oh, ow).unwrap();
        assert!(max_abs_diff(got.data(), &resize(map.data(), h, w, oh, ow)) < 1e-12);
        let (lo, hi) = map.min_max();
        assert!(got.data().iter().all(|&v| v >= lo && v <= hi));
    }
}

#[test]
fn map_prototype_matches_oracle() {
    let mut rng = rng(16);
    for _ in 0..50 {
        let (c, h, w) = (rng.random_range(1..=6), rng.random_range(1..=8), rng.random_range(1..=8));
        let feat = random_tensor(&mut rng, &[c, h, w]);
        let weights = Tensor::from_fn(&[h, w], |_| rng.random_range(0.0f32..1.0)).unwrap();
        let masked = MaskedFeatures::new(feat.clone(), MaskingMode::Hm, 0).unwrap();
        let got = map_prototype(&masked, &weights).unwrap();
        let want = map_prototype_f64(&to_f64(&feat), c, h * w, &to_f64(&weights));
        let got: Vec<f64> = got.vector().iter().map(|&v| v as f64).collect();
        assert!(max_abs_diff(&got, &want) < 1e-5);
    }
}

#[test]
fn k_shot_average_matches_mean_of_maps() {
    let mut rng = rng(17);
    let shots: Vec<_> = (0..5)
        .map(|_| {
            let feat = random_tensor(&mut rng, &[4, 3, 3]);
            let m = MaskedFeatures::new(feat, MaskingMode::Fm, 0).unwrap();
            map_prototype(&m, &Tensor::ones(&[3, 3]).unwrap()).unwrap()
        })
        .collect();
    let avg = average_prototypes(&shots).unwrap();
    for i in 0..4 {
        let want = shots.iter().map(|p| p.vector()[i] as f64).sum::<f64>() / 5.0;
        assert!((avg.vector()[i] as f64 - want).abs() < 1e-6);
    }
}

#[test]
fn predict_mask_matches_thresholded_oracle() {
    let mut rng = rng(18);
    for _ in 0..50 {
        let c = rng.random_range(1..=6);
        let feat = random_tensor(&mut rng, &[c, 2, 2]);
        let proto = map_prototype(
            &MaskedFeatures::new(feat, MaskingMode::Fm, 0).unwrap(),
            &Tensor::ones(&[2, 2]).unwrap(),
        )
        .unwrap();
        let query = sparse_tensor(&mut rng, &[c, 5, 6], 0.3);
        let thr = rng.random_range(-0.5f32..0.9);
        let pred = predict_mask(&proto, &query, thr).unwrap();
        let cos = cosine_map(&proto, &query).unwrap();
        let p = proto.vector().iter().map(|&v| v as f64).collect::<Vec<_>>();
        for loc in 0..30 {
            let col: Vec<f64> = (0..c).map(|k| query.data()[k * 30 + loc] as f64).collect();
            let (dot, nq, np) = col.iter().zip(&p).fold((0.0, 0.0, 0.0), |(d, a, b), (x, y)| {
                (d + x * y, a + x * x, b + y * y)
            });
            let zero = nq.sqrt() < 1e-12 || np.sqrt() < 1e-12;
            let oracle_cos = if zero { 0.0 } else { dot / (nq.sqrt() * np.sqrt()) };
            assert!((cos.data()[loc] as f64 - oracle_cos).abs() < 1e-5);
            if (oracle_cos - thr as f64).abs() > 1e-5 {
                let want = !zero && oracle_cos >= thr as f64;
                assert_eq!(pred.data()[loc] == 1, want, "loc {loc}");
            }
        }
    }
}

#[test]
fn upsample_prediction_matches_oracle() {
    let mut rng = rng(19);
    for _ in 0..50 {
        let (h, w) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let (oh, ow) = (rng.random_range(1..=32), rng.random_range(1..=32));
        let pred = random_mask(&mut rng, h, w, 0.5);
        let up = upsample_prediction(&pred, oh, ow).unwrap();
        let r = resize(&mask_f64(&pred), h, w, oh, ow);
        for (i, &v) in r.iter().enumerate() {
            if (v - 0.5).abs() > 1e-6 {
                assert_eq!(up.data()[i] == 1, v >= 0.5);
            }
        }
        let tau: Tensor<f32> = resize_bilinear(&pred, oh, ow).unwrap();
        assert_eq!(up, BinaryMask::threshold(&tau, 0.5).unwrap());
    }
}
