use dsscc_core::data;
use dsscc_core::metrics::{map_classify, ms_ssim, psnr, PSNR_CAP_DB};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn image() -> Vec<f32> {
    data::synthetic(1, 8).image(0).iter().map(|&v| v as f32).collect()
}

#[test]
fn psnr_examples() {
    let x = image();
    assert_eq!(psnr(&x, &x).unwrap(), PSNR_CAP_DB);
    let off: Vec<f32> = x.iter().map(|v| if *v < 255.0 { v + 1.0 } else { v - 1.0 }).collect();
    assert!((psnr(&x, &off).unwrap() - 48.1308).abs() < 1e-4);
    assert!(psnr(&x, &x[1..]).is_err());
}

#[test]
fn ms_ssim_identity_and_inversion() {
    let x = image();
    assert!((ms_ssim(&x, &x, 32, 32, 3).unwrap() - 1.0).abs() < 1e-12);
    let inv: Vec<f32> = x.iter().map(|v| 255.0 - v).collect();
    assert!(ms_ssim(&x, &inv, 32, 32, 3).unwrap() < 0.5);
}

#[test]
fn ms_ssim_falls_with_noise() {
    let x = image();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let scores: Vec<f64> = [5.0, 20.0, 60.0]
        .iter()
        .map(|&s| {
            let n = Normal::new(0.0f32, s).unwrap();
            let y: Vec<f32> = x.iter().map(|v| (v + n.sample(&mut rng)).clamp(0.0, 255.0)).collect();
            ms_ssim(&x, &y, 32, 32, 3).unwrap()
        })
        .collect();
    assert!(scores[0] >= scores[1] && scores[1] >= scores[2], "{scores:?}");
}

#[test]
fn ms_ssim_rejects_small_images() {
    let x = vec![0.0f32; 16 * 16 * 3];
    assert!(ms_ssim(&x, &x, 16, 16, 3).is_err());
}

#[test]
fn top_five_contains_the_map_label() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = Normal::new(0.0f32, 1.0).unwrap();
    for _ in 0..100 {
        let p: Vec<f32> = (0..10).map(|_| n.sample(&mut rng).exp()).collect();
        let (label, top) = map_classify(&p, 5);
        assert_eq!(top.len(), 5);
        assert_eq!(top[0], label);
        assert!(top.iter().all(|&k| p[k] >= p.iter().copied().filter(|v| !top.iter().any(|&t| p[t] == *v)).fold(0.0, f32::max)));
    }
}
