//! Simulated microscope: demosaic fidelity, focus gating inputs and the demo
//! data set.

use std::sync::Arc;

use arm_core::evalkit::image_hsd;
use arm_core::inference::run_fcn;
use arm_core::scope::demo::{self, capture_rgb, synth_slide, tumor_detector, DemoConfig, StainFamily};
use arm_core::scope::{
    debayer, focus_score, gaussian_blur, mosaic_rggb, render_fov, list_slides, ModelRegistry, Objective,
    ObjectiveName, StagePose, TissueClass, VirtualSlide,
};
use arm_core::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn psnr(a: &Tensor, b: &Tensor) -> f64 {
    let n = a.data().len() as f64;
    let mse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| ((x - y) as f64).powi(2))
        .sum::<f64>()
        / n;
    10.0 * (1.0 / mse).log10()
}

#[test]
fn smooth_slide_survives_mosaic_and_debayer() {
    let img = Tensor::from_fn(512, 512, 3, |y, x, c| {
        let (fy, fx) = (y as f32 / 512.0, x as f32 / 512.0);
        let phase = c as f32 * 1.3;
        0.55 + 0.3 * (6.0 * fy + phase).sin() * (5.0 * fx - phase).cos()
    });
    let slide = VirtualSlide::new("smooth", img, 0.25, vec![]).unwrap();
    for name in ObjectiveName::ALL {
        let ideal = render_fov(&slide, StagePose::new(64.0, 64.0), &Objective::standard(name), 96).unwrap();
        let back = debayer(&mosaic_rggb(&ideal)).unwrap();
        let db = psnr(&ideal, &back);
        assert!(db >= 40.0, "{name}: {db:.1} dB");
    }
}

fn demo_slide(family: StainFamily, seed: u64) -> Arc<VirtualSlide> {
    let cfg = DemoConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Arc::new(synth_slide("t", family, &cfg, 230.0, &mut rng).unwrap())
}

#[test]
fn sharp_demo_fovs_score_above_blurred() {
    for (family, seed) in [(StainFamily::Pink, 1), (StainFamily::Purple, 2)] {
        let slide = demo_slide(family, seed);
        for ann in slide.annotations() {
            let [x, y] = ann.centroid();
            let pose = StagePose::new(x * 0.25, y * 0.25);
            for obj in ObjectiveName::ALL {
                let sharp = capture_rgb(&slide, pose, obj, 128).unwrap();
                let blurred = capture_rgb(&slide, pose.with_focus(3.0), obj, 128).unwrap();
                let (s, b) = (focus_score(&sharp), focus_score(&blurred));
                assert!(s >= 0.5 && b < 0.5 && s > b, "{obj} {:?}: sharp {s:.3} blurred {b:.3}", ann.label);
                let sweep: Vec<f64> = [0.0, 1.0, 2.0, 4.0].iter().map(|&g| focus_score(&gaussian_blur(&sharp, g))).collect();
                assert!(sweep.windows(2).all(|w| w[1] <= w[0]), "{sweep:?}");
            }
        }
    }
}

#[test]
fn detector_separates_demo_tissue() {
    let det = tumor_detector(ObjectiveName::X10);
    let slide = demo_slide(StainFamily::Pink, 5);
    for ann in slide.annotations() {
        let [x, y] = ann.centroid();
        let rgb = capture_rgb(&slide, StagePose::new(x * 0.25, y * 0.25), ObjectiveName::X10, 128).unwrap();
        // Inference consumes the debayered frame at capture resolution.
        assert_eq!((rgb.height(), rgb.width()), (128, 128));
        let h = run_fcn(&det, &rgb).unwrap();
        assert_eq!((h.rows(), h.cols()), (128, 128));
        match ann.label {
            TissueClass::Tumor => assert!(h.max() >= 0.9),
            TissueClass::Benign => assert!(h.max() <= 0.1),
        }
    }
}

#[test]
fn stain_families_have_distinct_hue() {
    let pink = image_hsd("pink", demo_slide(StainFamily::Pink, 11).image());
    let purple = image_hsd("purple", demo_slide(StainFamily::Purple, 12).image());
    let d = (pink.hue - purple.hue).abs();
    assert!(d > 0.3, "pink {:.3} purple {:.3}", pink.hue, purple.hue);
}

#[test]
fn generated_demo_is_complete() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = DemoConfig {
        slide_px: 1536,
        tumors_per_slide: 2,
        benign_per_slide: 3,
        ..DemoConfig::default()
    };
    let summary = demo::generate(dir.path(), &cfg).unwrap();
    let slides = list_slides(&summary.slides_dir).unwrap();
    assert_eq!(slides.len(), 4);
    let reg = ModelRegistry::load_dir(&summary.models_dir).unwrap();
    assert!(reg.for_objective(ObjectiveName::X4).is_none());
    for name in [ObjectiveName::X10, ObjectiveName::X20, ObjectiveName::X40] {
        assert_eq!(reg.for_objective(name).unwrap().objective_tag(), name.tag());
    }
    assert!(reg.by_tag("bench").is_some());
    assert!(summary.nets_dir.join("mini_inception_naive.json").exists());

    assert_eq!(summary.rows.len(), 4 * 5);
    for row in &summary.rows {
        let score = row.score.unwrap();
        match row.label {
            TissueClass::Tumor => assert!(score >= 0.9, "{row:?}"),
            TissueClass::Benign => assert!(score <= 0.1, "{row:?}"),
        }
        assert!(dir.path().join(row.image.as_ref().unwrap()).exists());
    }
    let tumors = summary.rows.iter().filter(|r| r.label == TissueClass::Tumor).count();
    assert_eq!(tumors, 4 * 2);
}
