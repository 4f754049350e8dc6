use std::ffi::{CStr, CString};
use std::ptr;

use lbpcg::artifact::save_artifact;
use lbpcg::content::FeatureVector;
use lbpcg::gpe::AnnotatorReliability;
use lbpcg::learners::ForestConfig;
use lbpcg::pdc::{build_threshold_subsets, predict_preference, train_ensemble, Decision, EnsembleConfig, PdcExample};
use lbpcg_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(lbpcg_last_error()) }.to_string_lossy().into_owned()
}

fn small_schema() -> *mut LbpcgSchema {
    let mut s = ptr::null_mut();
    let cards = [2u32, 3];
    assert_eq!(unsafe { lbpcg_schema_new(cards.as_ptr(), cards.len(), &mut s) }, LbpcgStatus::Ok);
    s
}

#[test]
fn default_schema_size_and_id_round_trip() {
    unsafe {
        let mut s = ptr::null_mut();
        assert_eq!(lbpcg_schema_default(&mut s), LbpcgStatus::Ok);
        assert_eq!(lbpcg_schema_dimensions(s), 9);
        let mut size = 0;
        assert_eq!(lbpcg_schema_space_size(s, &mut size), LbpcgStatus::Ok);
        assert_eq!(size, 116_640);
        let mut v = [0u32; 9];
        assert_eq!(lbpcg_schema_vector_at(s, 4321, v.as_mut_ptr(), v.len()), LbpcgStatus::Ok);
        let mut id = 0;
        assert_eq!(lbpcg_schema_game_id(s, v.as_ptr(), v.len(), &mut id), LbpcgStatus::Ok);
        assert_eq!(id, 4321);
        lbpcg_schema_free(s);
    }
}

#[test]
fn errors_set_status_and_message() {
    unsafe {
        let mut s = ptr::null_mut();
        assert_eq!(lbpcg_schema_default(ptr::null_mut()), LbpcgStatus::NullPointer);
        assert!(last_error().contains("null"));

        let zero = [0u32];
        assert_eq!(lbpcg_schema_new(zero.as_ptr(), 1, &mut s), LbpcgStatus::InvalidArgument);
        assert!(s.is_null());
        assert!(!last_error().is_empty());

        let s = small_schema();
        assert!(last_error().is_empty(), "success clears the message");
        let bad = [5u32, 0];
        let mut id = 0;
        assert_eq!(lbpcg_schema_game_id(s, bad.as_ptr(), 2, &mut id), LbpcgStatus::InvalidArgument);
        let mut v = [0u32; 1];
        assert_eq!(lbpcg_schema_vector_at(s, 0, v.as_mut_ptr(), 1), LbpcgStatus::BufferTooSmall);
        lbpcg_schema_free(s);

        // Null handles are tolerated by free and by the count getters.
        lbpcg_schema_free(ptr::null_mut());
        lbpcg_gpe_free(ptr::null_mut());
        lbpcg_ensemble_free(ptr::null_mut());
        assert_eq!(lbpcg_gpe_game_count(ptr::null()), 0);
    }
}

#[test]
fn crowd_em_through_the_abi() {
    unsafe {
        let s = small_schema();
        // Four games; players 0-2 agree that games 0 and 1 are fun.
        let games = [0u32, 0, 0, 1, 1, 1, 1, 2];
        let truth = [1u8, 1, 0, 0];
        let (mut gs, mut ps, mut ys) = (vec![], vec![], vec![]);
        for p in 0..3usize {
            for n in 0..4usize {
                gs.push(n);
                ps.push(p);
                ys.push(truth[n]);
            }
        }
        let mut m = ptr::null_mut();
        let st = lbpcg_surveys_new(s, games.as_ptr(), 4, 3, gs.as_ptr(), ps.as_ptr(), ys.as_ptr(), ys.len(), &mut m);
        assert_eq!(st, LbpcgStatus::Ok, "{}", last_error());

        let mut gpe = ptr::null_mut();
        assert_eq!(lbpcg_gpe_fit(s, m, 0, 0.0, 1, &mut gpe), LbpcgStatus::Ok, "{}", last_error());
        assert_eq!(lbpcg_gpe_game_count(gpe), 4);
        assert_eq!(lbpcg_gpe_player_count(gpe), 3);
        let mut gamma = [0.0; 4];
        assert_eq!(lbpcg_gpe_gamma(gpe, gamma.as_mut_ptr(), 4), LbpcgStatus::Ok);
        assert!(gamma[0] > 0.9 && gamma[1] > 0.9 && gamma[2] < 0.1 && gamma[3] < 0.1, "{gamma:?}");
        let mut alpha = [0.0; 3];
        let mut beta = [0.0; 3];
        assert_eq!(lbpcg_gpe_alpha(gpe, alpha.as_mut_ptr(), 3), LbpcgStatus::Ok);
        assert_eq!(lbpcg_gpe_beta(gpe, beta.as_mut_ptr(), 3), LbpcgStatus::Ok);
        assert!(alpha.iter().chain(&beta).all(|&r| r > 0.9), "{alpha:?} {beta:?}");
        assert_eq!(lbpcg_gpe_gamma(gpe, gamma.as_mut_ptr(), 3), LbpcgStatus::BufferTooSmall);

        let g = [1u32, 0];
        let mut pop = -1.0;
        assert_eq!(lbpcg_gpe_predict(gpe, g.as_ptr(), 2, &mut pop), LbpcgStatus::Ok);
        assert!((0.0..=1.0).contains(&pop));

        lbpcg_gpe_free(gpe);
        lbpcg_surveys_free(m);
        lbpcg_schema_free(s);
    }
}

#[test]
fn degenerate_surveys_are_reported() {
    unsafe {
        let s = small_schema();
        let games = [0u32, 0, 1, 1];
        let (gs, ps, ys) = ([0usize], [0usize], [1u8]);
        let mut m = ptr::null_mut();
        assert_eq!(lbpcg_surveys_new(s, games.as_ptr(), 2, 1, gs.as_ptr(), ps.as_ptr(), ys.as_ptr(), 1, &mut m), LbpcgStatus::Ok);
        let mut gpe = ptr::null_mut();
        // Game 1 has no answers.
        assert_eq!(lbpcg_gpe_fit(s, m, 0, 0.0, 0, &mut gpe), LbpcgStatus::DegenerateData);
        assert!(gpe.is_null());
        lbpcg_surveys_free(m);
        lbpcg_schema_free(s);
    }
}

#[test]
fn ensemble_loaded_from_disk_matches_the_library() {
    // Enjoyment is visible in the first play-log value.
    let data: Vec<PdcExample> = (0..80)
        .map(|i| {
            let y = (i % 2) as u8;
            PdcExample {
                playlog: vec![f64::from(y) + 0.01 * (i % 7) as f64, 0.3],
                features: FeatureVector::single(i % 3),
                target: y,
                player: i % 4,
            }
        })
        .collect();
    let rel = AnnotatorReliability::uniform(4, 0.9);
    let subsets = build_threshold_subsets(&data, &rel, &[0.0, 0.5], &[0.0, 0.5]).unwrap();
    let forest = ForestConfig {
        trees: 10,
        ..ForestConfig::default()
    };
    let ens = train_ensemble(&data, &subsets, &[3], &forest, &EnsembleConfig::default(), 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ensemble.art");
    save_artifact(&ens, &path).unwrap();

    unsafe {
        let mut e = ptr::null_mut();
        let c = CString::new(path.to_str().unwrap()).unwrap();
        assert_eq!(lbpcg_ensemble_load(c.as_ptr(), &mut e), LbpcgStatus::Ok, "{}", last_error());
        assert_eq!(lbpcg_ensemble_playlog_width(e), 2);
        for (log, cat) in [([1.0, 0.3], 0usize), ([0.0, 0.3], 2), ([0.5, 0.3], 1)] {
            let want = predict_preference(&ens, &log, &FeatureVector::single(cat)).unwrap();
            let mut score = -1.0;
            let mut d = LbpcgDecision::Rejected;
            assert_eq!(lbpcg_ensemble_predict(e, log.as_ptr(), 2, cat, &mut score, &mut d), LbpcgStatus::Ok);
            assert_eq!(score, want.score);
            let expect = match want.decision {
                Decision::Positive => LbpcgDecision::Positive,
                Decision::Negative => LbpcgDecision::Negative,
                Decision::Rejected => LbpcgDecision::Rejected,
            };
            assert_eq!(d, expect);
        }
        // theta_r = 0 never rejects.
        assert_eq!(lbpcg_ensemble_set_thresholds(e, 0.5, 0.0), LbpcgStatus::Ok);
        let mut d = LbpcgDecision::Rejected;
        let log = [0.5, 0.3];
        assert_eq!(lbpcg_ensemble_predict(e, log.as_ptr(), 2, 1, ptr::null_mut(), &mut d), LbpcgStatus::Ok);
        assert_ne!(d, LbpcgDecision::Rejected);

        assert_eq!(lbpcg_ensemble_predict(e, log.as_ptr(), 1, 0, ptr::null_mut(), ptr::null_mut()), LbpcgStatus::InvalidArgument);
        assert_eq!(lbpcg_ensemble_predict(e, log.as_ptr(), 2, 7, ptr::null_mut(), ptr::null_mut()), LbpcgStatus::InvalidArgument);
        assert_eq!(lbpcg_ensemble_set_thresholds(e, 1.5, 0.0), LbpcgStatus::InvalidArgument);
        lbpcg_ensemble_free(e);
    }

    unsafe {
        let mut e = ptr::null_mut();
        let missing = CString::new(dir.path().join("nope.art").to_str().unwrap()).unwrap();
        assert_eq!(lbpcg_ensemble_load(missing.as_ptr(), &mut e), LbpcgStatus::Io);
        let wrong = dir.path().join("wrong.art");
        std::fs::write(&wrong, "lbpcg-artifact 1\nkind: gpe\n{}").unwrap();
        let wrong = CString::new(wrong.to_str().unwrap()).unwrap();
        assert_eq!(lbpcg_ensemble_load(wrong.as_ptr(), &mut e), LbpcgStatus::BadArtifact);
        assert!(e.is_null());
    }
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(lbpcg_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
