use facecloak::detector::FaceDetector;
use facecloak::search::{
    region_density, replay_trial, run_campaign, run_campaign_with, sweep_opacity_with, verify_report,
    CampaignConfig, KeyRegionMap,
};
use facecloak::{CascadeModel, Detection, Error, Layout, RasterImage, Rect, Result};
use proptest::prelude::*;

/// Finds a fixed "face" while its box stays mostly bright.
struct BrightBox {
    face: Rect,
    threshold: f64,
}

impl FaceDetector for BrightBox {
    fn detect(&self, img: &RasterImage) -> Result<Vec<Detection>> {
        let crop = img.crop(self.face)?;
        let mean = crop.pixels().iter().sum::<f64>() / crop.pixels().len() as f64;
        Ok(if mean >= self.threshold {
            vec![Detection {
                rect: self.face,
                neighbors: 5,
                weight: mean,
            }]
        } else {
            vec![]
        })
    }

    fn name(&self) -> String {
        "bright-box".into()
    }
}

fn scene() -> (RasterImage, BrightBox) {
    let img = RasterImage::filled(64, 64, Layout::Rgb, 1.0);
    let det = BrightBox {
        face: Rect::new(12, 10, 40, 40),
        threshold: 0.8,
    };
    (img, det)
}

fn small(iterations: u32, seed: u64) -> CampaignConfig {
    let mut cfg = CampaignConfig {
        iterations,
        seed,
        ..Default::default()
    };
    cfg.perturbation.shapes_per_iteration = 4;
    cfg
}

#[test]
fn report_invariants_hold() {
    let (img, det) = scene();
    let cfg = small(60, 11);
    let report = run_campaign_with(&img, &det, &cfg).unwrap();
    assert_eq!(report.trials.len(), 60);
    assert!(report.evading_trials > 0 && report.evading_trials < 60);
    assert_eq!(report.evasion_rate, report.evading_trials as f64 / 60.0);
    assert_eq!((report.success_heatmap.width, report.success_heatmap.height), (40, 40));
    for (s, f) in report.success_heatmap.counts.iter().zip(&report.failure_heatmap.counts) {
        assert!(s + f <= 60);
    }
    for stat in &report.region_stats {
        for d in [stat.evading_density, stat.detected_density].into_iter().flatten() {
            assert!((0.0..=1.0).contains(&d));
        }
    }
    verify_report(&report).unwrap();
    let densities = region_density(&report.success_heatmap, &report.regions, report.evading_trials).unwrap();
    for ((name, d), stat) in densities.iter().zip(&report.region_stats) {
        assert_eq!(name, &stat.region);
        assert_eq!(Some(*d), stat.evading_density);
    }

    // serialized report survives a round trip and still verifies
    let back = facecloak::CampaignReport::from_json(&report.to_json().unwrap()).unwrap();
    assert_eq!(back, report);
    verify_report(&back).unwrap();
}

#[test]
fn tampering_is_detected() {
    let (img, det) = scene();
    let report = run_campaign_with(&img, &det, &small(20, 3)).unwrap();
    let mut flipped = report.clone();
    flipped.trials[0].evaded = !flipped.trials[0].evaded;
    assert!(verify_report(&flipped).is_err());
    let mut rate = report.clone();
    rate.evasion_rate += 1e-12;
    assert!(verify_report(&rate).is_err());
    let mut heat = report.clone();
    heat.success_heatmap.counts[0] += 1;
    assert!(verify_report(&heat).is_err());
    let mut shapes = report;
    shapes.trials[1].shapes.pop();
    assert!(verify_report(&shapes).is_err());
}

#[test]
fn replay_reproduces_trials() {
    let (img, det) = scene();
    let report = run_campaign_with(&img, &det, &small(10, 8)).unwrap();
    for t in &report.trials {
        let (perturbed, shapes) = replay_trial(&img, &report, t.index).unwrap();
        assert_eq!(shapes, t.shapes);
        assert_eq!(det.detect(&perturbed).unwrap(), t.post_detections);
    }
    assert!(replay_trial(&img, &report, 10).is_err());
}

#[test]
fn zero_opacity_never_evades() {
    let (img, det) = scene();
    let mut cfg = small(1, 0);
    cfg.perturbation = cfg.perturbation.with_opacity(0.0);
    let report = run_campaign_with(&img, &det, &cfg).unwrap();
    assert!(!report.trials[0].evaded);
    assert!(report.directional.is_none());
    assert!(report.region_stats.iter().all(|s| s.evading_density.is_none()));
}

#[test]
fn sweep_levels_match_single_campaigns() {
    let (img, det) = scene();
    let cfg = small(30, 21);
    let sweep = sweep_opacity_with(&img, &det, &cfg, &[0.0, 0.5, 1.0]).unwrap();
    assert_eq!(sweep[0].evasion_rate, 0.0);
    let single = run_campaign_with(&img, &det, &cfg).unwrap();
    assert_eq!(sweep[2].evasion_rate, single.evasion_rate);
    assert!(sweep_opacity_with(&img, &det, &cfg, &[1.5]).is_err());
}

#[test]
fn no_face_in_baseline() {
    let img = RasterImage::filled(64, 64, Layout::Rgb, 0.0);
    let (_, det) = scene();
    assert!(matches!(run_campaign_with(&img, &det, &small(5, 0)), Err(Error::NoFaceInBaseline)));

    let model = CascadeModel::load(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/tests/fixtures/haarcascade_frontalface_default.xml"
    ))
    .unwrap();
    let noise = facecloak::load_image(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/noise.png")).unwrap();
    assert!(matches!(run_campaign(&noise, &model, &small(5, 0)), Err(Error::NoFaceInBaseline)));
}

#[test]
fn parallel_matches_serial() {
    let (img, det) = scene();
    let cfg = small(25, 77);
    let run = || run_campaign_with(&img, &det, &cfg).unwrap().to_json().unwrap();
    let wide = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let serial = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    assert_eq!(wide.install(run), serial.install(run));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn densities_bounded(w in 4u32..60, h in 4u32..60, n in 1u32..6, seed in any::<u64>()) {
        let mut rng = facecloak::SeededRng::new(seed, 0);
        let heat = facecloak::search::Heatmap {
            width: w,
            height: h,
            counts: (0..w * h).map(|_| rng.below(n as u64 + 1) as u32).collect(),
        };
        let map = KeyRegionMap::default();
        match region_density(&heat, &map, n) {
            Ok(ds) => for (_, d) in ds { prop_assert!((0.0..=1.0).contains(&d)); },
            Err(Error::EmptyRegion(_)) => {}
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        }
    }
}
