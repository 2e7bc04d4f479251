use std::ffi::{CStr, CString};
use std::ptr;

use nishilab_ffi::*;

const EA: &str = r#"{"lattice": {"dimension": 2, "side": 3, "kind": "short_range"}, "beta": 0.5,
                     "species": [{"p": 2, "delta": 1.0, "mu": 0.5}]}"#;

fn model(json: &str) -> *mut NlModel {
    let c = CString::new(json).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { nl_model_from_json(c.as_ptr(), &mut m) }, NlStatus::Ok);
    m
}

fn last_error() -> String {
    let p = nl_last_error_message();
    assert!(!p.is_null());
    let s = unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned();
    unsafe { nl_string_free(p) };
    s
}

#[test]
fn model_queries() {
    let m = model(EA);
    let (mut n, mut b, mut size) = (0usize, 0.0, 0usize);
    unsafe {
        assert_eq!(nl_model_num_sites(m, &mut n), NlStatus::Ok);
        assert_eq!(nl_model_nishimori_beta(m, &mut b), NlStatus::Ok);
        assert_eq!(nl_model_family_size(m, 2, &mut size), NlStatus::Ok);
        assert_eq!(nl_model_family_size(m, 4, &mut size), NlStatus::InvalidArgument);
        nl_model_free(m);
    }
    assert_eq!((n, b), (9, 0.5));
    assert!(last_error().contains("p=4"));
    let v = unsafe { CStr::from_ptr(nl_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn exact_state_matches_the_library() {
    let m = model(EA);
    unsafe {
        let mut d = ptr::null_mut();
        assert_eq!(nl_disorder_sample(m, 7, 3, &mut d), NlStatus::Ok);
        let mut e = ptr::null_mut();
        assert_eq!(nl_exact_new(m, d, 0.8, &mut e), NlStatus::Ok);
        let mut c = 0.0;
        let sites = [0usize, 1];
        assert_eq!(nl_exact_correlation(e, sites.as_ptr(), 2, &mut c), NlStatus::Ok);

        let core = nishilab::config::ExperimentConfig::from_json(&format!("{{\"model\": {EA}}}"))
            .unwrap()
            .base_model()
            .unwrap();
        let disorder = core.sample_disorder(nishilab::model::Provenance::new(7, 3));
        let gibbs = nishilab::exact::ExactGibbs::new(&core, &disorder, 0.8).unwrap();
        assert_eq!(c, gibbs.correlation(&[0, 1]).unwrap());

        let mut energy = 0.0;
        assert_eq!(nl_exact_mean_energy(e, &mut energy), NlStatus::Ok);
        assert_eq!(energy, gibbs.mean_energy());

        let spins = [1i8; 9];
        let mut h = 0.0;
        assert_eq!(nl_hamiltonian(m, d, spins.as_ptr(), 9, &mut h), NlStatus::Ok);
        assert_eq!(h, core.hamiltonian(&spins, &disorder));
        assert_eq!(
            nl_hamiltonian(m, d, spins.as_ptr(), 8, &mut h),
            NlStatus::InvalidArgument
        );
        let bad = [2i8; 9];
        assert_eq!(
            nl_hamiltonian(m, d, bad.as_ptr(), 9, &mut h),
            NlStatus::InvalidArgument
        );

        nl_exact_free(e);
        nl_disorder_free(d);
        nl_model_free(m);
    }
}

#[test]
fn infinite_temperature_partition_function() {
    let m = model(EA);
    unsafe {
        let mut d = ptr::null_mut();
        nl_disorder_sample(m, 1, 0, &mut d);
        let mut e = ptr::null_mut();
        assert_eq!(nl_exact_new(m, d, 0.0, &mut e), NlStatus::Ok);
        let mut log_z = 0.0;
        assert_eq!(nl_exact_log_partition(e, &mut log_z), NlStatus::Ok);
        assert!((log_z - 9.0 * std::f64::consts::LN_2).abs() < 1e-12);
        nl_exact_free(e);
        nl_disorder_free(d);
        nl_model_free(m);
    }
}

#[test]
fn error_codes() {
    unsafe {
        let mut m = ptr::null_mut();
        let bad =
            CString::new(r#"{"lattice": {"dimension": 1, "side": 4, "kind": "mean_field"}, "species": []}"#)
                .unwrap();
        assert_eq!(nl_model_from_json(bad.as_ptr(), &mut m), NlStatus::InvalidConfig);
        assert!(last_error().contains("beta"));
        assert!(m.is_null());

        assert_eq!(nl_model_from_json(ptr::null(), &mut m), NlStatus::NullPointer);
        let mut n = 0usize;
        assert_eq!(nl_model_num_sites(ptr::null(), &mut n), NlStatus::NullPointer);

        let big = model(
            r#"{"lattice": {"dimension": 1, "side": 40, "kind": "mean_field"}, "beta": 1.0,
                            "species": [{"p": 2, "delta": 1.0, "mu": 1.0}]}"#,
        );
        let mut d = ptr::null_mut();
        nl_disorder_sample(big, 1, 0, &mut d);
        let mut e = ptr::null_mut();
        assert_eq!(nl_exact_new(big, d, 1.0, &mut e), NlStatus::Capacity);
        assert!(e.is_null());

        let off = model(
            r#"{"lattice": {"dimension": 1, "side": 4, "kind": "mean_field"}, "beta": 1.0,
                            "species": [{"p": 1, "delta": 1.0, "mu": 1.0}, {"p": 2, "delta": 1.0, "mu": 0.5}]}"#,
        );
        let mut b = 0.0;
        assert_eq!(nl_model_nishimori_beta(off, &mut b), NlStatus::OffNishimori);

        nl_disorder_free(d);
        nl_model_free(big);
        nl_model_free(off);
        nl_model_free(ptr::null_mut());
        nl_string_free(ptr::null_mut());
    }
}

#[test]
fn run_config_writes_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let config = CString::new(
        r#"{"model": {"lattice": {"dimension": 1, "side": 2, "kind": "short_range"}, "beta": 0.5,
                      "species": [{"p": 2, "delta": 1.0, "mu": 0.5}]},
            "study": {"checks": [{"check": "gauge_correlations", "beta": 1.0, "x": [0], "y": [1]}]}}"#,
    )
    .unwrap();
    let out = CString::new(tmp.path().to_str().unwrap()).unwrap();
    let mut failed = usize::MAX;
    let status = unsafe { nl_run_config(config.as_ptr(), NlCommand::Verify, out.as_ptr(), &mut failed) };
    assert_eq!(status, NlStatus::Ok);
    assert_eq!(failed, 0);
    assert!(tmp.path().join("results.jsonl").exists());
    assert!(tmp.path().join("manifest.json").exists());

    let status = unsafe { nl_run_config(config.as_ptr(), NlCommand::Scaling, out.as_ptr(), &mut failed) };
    assert_eq!(status, NlStatus::InvalidConfig);
    assert!(last_error().contains("study.scaling"));
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/nishilab.h")).unwrap();
    for name in [
        "nl_version",
        "nl_last_error_message",
        "nl_string_free",
        "nl_model_from_json",
        "nl_model_free",
        "nl_model_num_sites",
        "nl_model_beta",
        "nl_model_nishimori_beta",
        "nl_model_family_size",
        "nl_disorder_sample",
        "nl_disorder_free",
        "nl_hamiltonian",
        "nl_exact_new",
        "nl_exact_free",
        "nl_exact_log_partition",
        "nl_exact_mean_energy",
        "nl_exact_correlation",
        "nl_run_config",
        "typedef struct NlModel NlModel",
        "NL_STATUS_CAPACITY = 4",
    ] {
        assert!(header.contains(name), "{name}");
    }
}
