use mtriage_core::imgproc::*;
use mtriage_core::synth::*;
use mtriage_core::taxonomy::OutlierType;
use rand::Rng;

fn spec() -> SynthSpec {
    SynthSpec { seed: 17, ..Default::default() }
}

fn mlo_spec() -> SynthSpec {
    SynthSpec { p_mlo: 1.0, ..spec() }
}

fn foreground(img: &GrayImage) -> usize {
    img.pixels().iter().filter(|&&p| p > 10).count()
}

fn pre(img: &SynthImage) -> GrayImage {
    preprocess(&img.image, &img.meta).unwrap()
}

#[test]
fn outlier_counts_follow_the_mix() {
    assert_eq!(spec().n_outliers(), 10);
    assert_eq!(spec().outlier_counts().iter().sum::<usize>(), 10);
    let counts = allocate(136, &reference_mix());
    assert_eq!(counts, OutlierType::ALL.map(|t| t.reference_count() as usize));
    assert_eq!(counts[0], 36);

    let types = spec().assignments();
    assert_eq!(types.len(), 2000);
    assert_eq!(types.iter().filter(|t| t.is_some()).count(), 10);
    for (t, n) in OutlierType::ALL.iter().zip(spec().outlier_counts()) {
        assert_eq!(types.iter().filter(|x| **x == Some(*t)).count(), n);
    }
}

#[test]
fn spec_validation() {
    assert!(spec().validate().is_ok());
    assert!(SynthSpec { outlier_rate: 0.2, ..spec() }.validate().is_err());
    assert!(SynthSpec { outlier_rate: 0.0, ..spec() }.validate().is_err());
    let mut mix = reference_mix();
    mix[0] += 0.1;
    assert!(SynthSpec { mix, ..spec() }.validate().is_err());
}

#[test]
fn inliers_are_reproducible_and_plausible() {
    let s = spec();
    for i in 0..12 {
        let a = generate_image(&s, i, None);
        assert_eq!(a.image, generate_image(&s, i, None).image);
        let frac = foreground(&a.image) as f64 / a.image.pixels().len() as f64;
        assert!((0.2..=0.7).contains(&frac), "image {i}: foreground {frac}");
        assert!(a.image.pixels().iter().filter(|&&p| p <= 10).all(|&p| p <= 5));
        assert_eq!(erosion_score(&pre(&a), &ErosionParams::default()), 0);
    }
    assert_ne!(generate_image(&s, 0, None).image, generate_image(&s, 1, None).image);
}

#[test]
fn muscle_is_found_in_mlo_inliers() {
    let s = mlo_spec();
    let p = MuscleParams::default();
    let n = 40;
    let mut found = 0;
    for i in 0..n {
        let img = generate_image(&s, i, None);
        let frame = resize_bilinear(&pre(&img), ANALYSIS_SIZE, ANALYSIS_SIZE);
        if let Some(region) = extract_pectoral_muscle(&frame, &p).unwrap() {
            let truth = img.muscle.unwrap();
            if (region.boundary.angle - truth.angle).abs() <= 3.0 && (region.boundary.distance + truth.distance).abs() <= 4.0 {
                found += 1;
            }
            assert!(muscle_line_count(&frame, &region.mask, &p).unwrap().lines() <= 1);
        }
    }
    assert!(found as f64 >= 0.95 * n as f64, "{found}/{n}");
}

#[test]
fn pacemaker_survives_erosion() {
    let s = spec();
    for i in 0..6 {
        let base = generate_image(&s, i, None);
        let img = generate_image(&s, i, Some(OutlierType::Pacemaker));
        let bright: usize = img.image.pixels().iter().zip(base.image.pixels()).filter(|(a, b)| a != b && **a >= 240).count();
        assert!((40 * 40 - 4 * 100..=80 * 80).contains(&bright), "bright block of {bright} px");
        assert!(erosion_score(&pre(&img), &ErosionParams::default()) > 0);
    }
}

#[test]
fn devices_are_bright() {
    let s = spec();
    for kind in [OutlierType::Implant, OutlierType::Pacemaker, OutlierType::LoopRecorder] {
        let base = generate_image(&s, 3, None);
        let img = generate_image(&s, 3, Some(kind));
        let changed: Vec<u8> = img.image.pixels().iter().zip(base.image.pixels()).filter(|(a, b)| a != b).map(|(a, _)| *a).collect();
        assert!(!changed.is_empty());
        assert!(changed.iter().all(|&p| p >= 240), "{kind}");
    }
}

#[test]
fn exposure_error_shifts_mean() {
    let s = spec();
    for i in 0..8 {
        let base = generate_image(&s, i, None).image.mean();
        let shifted = generate_image(&s, i, Some(OutlierType::ExposureError)).image.mean();
        assert!((shifted - base).abs() >= 30.0, "image {i}: {base} -> {shifted}");
    }
}

#[test]
fn improper_placement_crops_foreground() {
    let s = spec();
    for i in 0..8 {
        let base = foreground(&generate_image(&s, i, None).image) as f64;
        let moved = foreground(&generate_image(&s, i, Some(OutlierType::ImproperPlacement)).image) as f64;
        assert!(moved <= 0.75 * base + 60.0, "image {i}: {base} -> {moved}");
    }
}

#[test]
fn striped_muscle_adds_lines() {
    let s = mlo_spec();
    let p = MuscleParams::default();
    for i in 0..10 {
        let base = generate_image(&s, i, None);
        let img = generate_image(&s, i, Some(OutlierType::ImproperRadiography1));
        let count = |im: &SynthImage| match muscle_score(&pre(im), &im.meta, &p).unwrap() {
            MuscleOutcome::Lines { count, .. } => count.lines(),
            other => panic!("image {i}: {other:?}"),
        };
        assert!(count(&base) <= 1);
        assert!(count(&img) >= 3, "image {i}");
    }
}

#[test]
fn stripes_stay_inside_the_wedge() {
    let s = mlo_spec();
    for i in 0..4 {
        let mut rng = s.image_rng(i);
        let _ = rng.random_bool(0.5);
        let _ = rng.random_bool(0.5);
        let mut scene = generate_inlier(&s, &mut rng, i as u32, Laterality::L, View::MLO);
        let before = scene.image.clone();
        inject(OutlierType::ImproperRadiography1, &mut scene, &mut rng);
        let w = before.width();
        for (k, (a, b)) in scene.image.pixels().iter().zip(before.pixels()).enumerate() {
            if a != b {
                assert!(scene.in_muscle(k / w, k % w), "pixel {k} changed outside the muscle");
            }
        }
    }
}

#[test]
fn irradiography_forces_mlo() {
    let s = SynthSpec { p_mlo: 0.0, ..spec() };
    let img = generate_image(&s, 5, Some(OutlierType::ImproperRadiography1));
    assert_eq!(img.meta.view, View::MLO);
}

#[test]
fn every_type_survives_preprocessing() {
    let s = spec();
    for (i, kind) in OutlierType::ALL.iter().enumerate() {
        for j in 0..3 {
            let img = generate_image(&s, 100 + 10 * i + j, Some(*kind));
            let out = pre(&img);
            assert_eq!((out.height(), out.width()), (PREPROCESSED_H, PREPROCESSED_W));
        }
    }
}

#[test]
fn erosion_ranks_device_above_clean_images() {
    let s = spec();
    let device = erosion_score(&pre(&generate_image(&s, 0, Some(OutlierType::Pacemaker))), &ErosionParams::default());
    for i in 1..200 {
        let clean = erosion_score(&pre(&generate_image(&s, i, None)), &ErosionParams::default());
        assert!(clean < device, "clean image {i} scores {clean} vs device {device}");
    }
}

#[test]
fn corpus_files_are_reproducible() {
    let s = SynthSpec { n_images: 40, outlier_rate: 0.1, seed: 3, ..Default::default() };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = write_corpus(&s, a.path()).unwrap();
    write_corpus(&s, b.path()).unwrap();
    for name in [METADATA_FILE, TRUTH_FILE, "images/00007.png", "images/00039.png"] {
        assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    let meta = read_metadata(&a.path().join(METADATA_FILE)).unwrap();
    assert_eq!(meta, ra);
    let truth = read_truth(&a.path().join(TRUTH_FILE)).unwrap();
    assert_eq!(truth.len(), 40);
    assert_eq!(truth.iter().filter(|t| t.1.is_some()).count(), 4);
    for (r, (id, t)) in meta.iter().zip(&truth) {
        assert_eq!((r.image_id, r.outlier_type), (*id, *t));
    }
    let line = std::fs::read_to_string(a.path().join(METADATA_FILE)).unwrap();
    let first: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
    for key in ["image_id", "laterality", "view", "manufacturer", "outlier_type"] {
        assert!(first.get(key).is_some(), "{key}");
    }
    let header = std::fs::read_to_string(a.path().join(TRUTH_FILE)).unwrap();
    assert!(header.starts_with("image_id,label,outlier_type\n"));
    let img = GrayImage::read(a.path().join("images/00007.png")).unwrap();
    assert_eq!(img, generate_image(&s, 7, s.assignments()[7]).image);
}

#[test]
fn grid_muscle_scores_match_single_runs() {
    let s = mlo_spec();
    let grid = MuscleParams::default().search_grid();
    for (i, kind) in [(0, None), (1, Some(OutlierType::ImproperRadiography1)), (2, Some(OutlierType::ImproperPlacement))] {
        let img = generate_image(&s, i, kind);
        let p = pre(&img);
        let shared = muscle_scores_for_grid(&p, &img.meta, &grid).unwrap();
        assert_eq!(shared.len(), 24);
        for (params, got) in grid.iter().zip(&shared) {
            assert_eq!(got, &muscle_score(&p, &img.meta, params).unwrap());
        }
    }
}

#[test]
fn grid_erosion_scores_match_single_runs() {
    let s = spec();
    let grid = ErosionParams::search_grid();
    for (i, kind) in [(0, None), (1, Some(OutlierType::Implant)), (2, Some(OutlierType::ExposureError))] {
        let p = pre(&generate_image(&s, i, kind));
        let shared = erosion_scores_for_grid(&p, &grid);
        for (params, got) in grid.iter().zip(&shared) {
            assert_eq!(*got, erosion_score(&p, params), "{params:?}");
        }
    }
}
