//! Exercises the C interface from Rust: handle round trips, the JSON
//! payload shapes, and the status/message contract on failure paths.

use std::ffi::{c_char, CStr, CString};
use std::ptr;

use recprofile_ffi::{
    rp_dataset_free, rp_dataset_n_interactions, rp_dataset_n_items, rp_dataset_n_users,
    rp_dataset_open, rp_dataset_save, rp_dataset_summary_json, rp_dataset_synth, rp_last_error,
    rp_scenario_run, rp_string_free, rp_version, RpDataset, RpStatus,
};

fn last_error() -> String {
    unsafe { CStr::from_ptr(rp_last_error()) }
        .to_string_lossy()
        .into_owned()
}

/// Claims a string the library handed out and frees the C allocation.
fn take_string(p: *mut c_char) -> String {
    assert!(!p.is_null(), "expected a string, got null");
    let s = unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string();
    unsafe { rp_string_free(p) };
    s
}

/// A small two-cluster dataset: 60 users, 30 items, 8 interactions each.
fn synth(seed: u64) -> *mut RpDataset {
    let attr = CString::new("group").unwrap();
    let mut ds: *mut RpDataset = ptr::null_mut();
    let status =
        unsafe { rp_dataset_synth(60, 30, 2, 0.9, 8, attr.as_ptr(), seed, &mut ds) };
    assert_eq!(status, RpStatus::Ok, "synth failed: {}", last_error());
    assert!(!ds.is_null());
    ds
}

fn summary_json(ds: *const RpDataset) -> serde_json::Value {
    let mut out: *mut c_char = ptr::null_mut();
    let status = unsafe { rp_dataset_summary_json(ds, &mut out) };
    assert_eq!(status, RpStatus::Ok, "summary failed: {}", last_error());
    serde_json::from_str(&take_string(out)).expect("summary is valid JSON")
}

#[test]
fn version_is_a_nonempty_static_string() {
    let v = unsafe { CStr::from_ptr(rp_version()) }.to_str().unwrap();
    assert!(v.contains('.'), "unexpected version {v:?}");
}

#[test]
fn synthetic_dataset_reports_its_shape() {
    let ds = synth(11);
    unsafe {
        assert_eq!(rp_dataset_n_users(ds), 60);
        assert_eq!(rp_dataset_n_items(ds), 30);
        assert_eq!(rp_dataset_n_interactions(ds), 60 * 8);
    }

    let summary = summary_json(ds);
    assert_eq!(summary["users"], 60);
    assert_eq!(summary["items"], 30);
    assert_eq!(summary["interactions"], 480);
    let density = summary["density"].as_f64().unwrap();
    assert!((density - 480.0 / (60.0 * 30.0)).abs() < 1e-12);
    assert_eq!(summary["attributes"][0]["name"], "group");
    assert_eq!(summary["attributes"][0]["labels"].as_array().unwrap().len(), 2);

    unsafe { rp_dataset_free(ds) };
}

#[test]
fn dataset_round_trips_through_a_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = CString::new(tmp.path().join("ds").to_str().unwrap()).unwrap();

    let ds = synth(5);
    let before = summary_json(ds);
    let status = unsafe { rp_dataset_save(ds, dir.as_ptr()) };
    assert_eq!(status, RpStatus::Ok, "save failed: {}", last_error());

    let mut reopened: *mut RpDataset = ptr::null_mut();
    let status = unsafe { rp_dataset_open(dir.as_ptr(), &mut reopened) };
    assert_eq!(status, RpStatus::Ok, "open failed: {}", last_error());
    // Vocabulary files pin index order, so the whole summary survives.
    assert_eq!(summary_json(reopened), before);

    unsafe {
        rp_dataset_free(ds);
        rp_dataset_free(reopened);
    }
}

#[test]
fn scenario_run_returns_a_full_report() {
    let ds = synth(3);
    let config = CString::new(
        "scenario = 1\n\
         attribute = group\n\
         alpha = 0.3\n\
         beta = 0.3\n\
         k = 5\n\
         train.dim = 8\n\
         train.max_epochs = 10\n\
         classifier.hidden = 16\n\
         classifier.max_epochs = 40\n\
         seed = 3\n",
    )
    .unwrap();

    let mut out: *mut c_char = ptr::null_mut();
    let status = unsafe { rp_scenario_run(ds, config.as_ptr(), ptr::null(), &mut out) };
    assert_eq!(status, RpStatus::Ok, "run failed: {}", last_error());
    let report: serde_json::Value = serde_json::from_str(&take_string(out)).unwrap();

    assert_eq!(report["scenario"], 1);
    assert_eq!(report["attribute"], "group");
    assert_eq!(report["method"], "mlp");
    let accuracy = report["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&accuracy), "accuracy {accuracy}");
    assert!(report["macro_f1"].as_f64().unwrap() <= 1.0);
    assert!(report["runtime_s"].as_f64().unwrap() >= 0.0);
    // Scenario 1 never trains a surrogate or an alignment.
    assert!(report["surrogate"].is_null());
    assert!(report["alignment"].is_null());

    let predictions = report["predictions"].as_array().unwrap();
    assert_eq!(predictions.len(), report["n_eval"].as_u64().unwrap() as usize);
    assert!(!predictions.is_empty());
    for p in predictions {
        let user = p[0].as_str().unwrap();
        let label = p[1].as_str().unwrap();
        let confidence = p[2].as_f64().unwrap();
        assert!(user.starts_with('u'), "user id {user:?}");
        assert!(label == "0" || label == "1", "label {label:?}");
        assert!((0.0..=1.0).contains(&confidence), "confidence {confidence}");
    }

    unsafe { rp_dataset_free(ds) };
}

#[test]
fn scenario_run_covers_the_surrogate_path() {
    // A catalogue much wider than the providers can touch, so the run must
    // align content vectors for the leftover items.
    let attr = CString::new("group").unwrap();
    let mut ds: *mut RpDataset = ptr::null_mut();
    let status =
        unsafe { rp_dataset_synth(60, 120, 2, 0.9, 8, attr.as_ptr(), 4, &mut ds) };
    assert_eq!(status, RpStatus::Ok, "synth failed: {}", last_error());
    let tmp = tempfile::tempdir().unwrap();
    let cache = CString::new(tmp.path().to_str().unwrap()).unwrap();
    let config = CString::new(
        "scenario = 4\n\
         attribute = group\n\
         alpha = 0.3\n\
         beta = 0.3\n\
         candidates = mf\n\
         k = 5\n\
         k2 = 10\n\
         train.dim = 8\n\
         train.max_epochs = 10\n\
         classifier.hidden = 16\n\
         classifier.max_epochs = 40\n\
         seed = 4\n",
    )
    .unwrap();

    let mut out: *mut c_char = ptr::null_mut();
    let status = unsafe { rp_scenario_run(ds, config.as_ptr(), cache.as_ptr(), &mut out) };
    assert_eq!(status, RpStatus::Ok, "run failed: {}", last_error());
    let report: serde_json::Value = serde_json::from_str(&take_string(out)).unwrap();

    assert_eq!(report["scenario"], 4);
    assert_eq!(report["method"], "rapi");
    assert_eq!(report["surrogate"]["chosen"], "mf");
    let rls = report["surrogate"]["rls"][0][1].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&rls), "rls {rls}");
    assert!(report["alignment"]["holdout_res"].as_f64().unwrap() >= 0.0);
    // The cache directory now holds the trained original model.
    assert!(tmp.path().read_dir().unwrap().next().is_some());

    unsafe { rp_dataset_free(ds) };
}

#[test]
fn failures_set_the_status_and_the_message() {
    let ds = synth(9);
    let mut out_ds: *mut RpDataset = ptr::null_mut();
    let mut out_str: *mut c_char = ptr::null_mut();

    // Null and malformed arguments.
    unsafe {
        let status = rp_dataset_synth(10, 5, 2, 0.9, 3, ptr::null(), 0, &mut out_ds);
        assert_eq!(status, RpStatus::NullArgument);
        assert!(last_error().contains("attribute"), "{}", last_error());

        let attr = CString::new("group").unwrap();
        let status =
            rp_dataset_synth(10, 5, 2, 0.9, 3, attr.as_ptr(), 0, ptr::null_mut());
        assert_eq!(status, RpStatus::NullArgument);

        let not_utf8 = CString::new([0xffu8, 0xfe].as_slice()).unwrap();
        let status =
            rp_dataset_synth(10, 5, 2, 0.9, 3, not_utf8.as_ptr(), 0, &mut out_ds);
        assert_eq!(status, RpStatus::InvalidUtf8);

        // Zero users is rejected by validation, not by a crash.
        let status = rp_dataset_synth(0, 5, 2, 0.9, 3, attr.as_ptr(), 0, &mut out_ds);
        assert_eq!(status, RpStatus::InvalidArgument);
        assert!(out_ds.is_null());
    }

    // A directory that does not exist.
    unsafe {
        let dir = CString::new("/nonexistent/recprofile-smoke").unwrap();
        let status = rp_dataset_open(dir.as_ptr(), &mut out_ds);
        assert_eq!(status, RpStatus::IoError);
        assert!(last_error().contains("interactions.tsv"), "{}", last_error());
    }

    // Config text problems surface as parse/missing errors with the key name.
    unsafe {
        let config = CString::new("scenario = 1\nattribute = group\nbogus = 1\n").unwrap();
        let status = rp_scenario_run(ds, config.as_ptr(), ptr::null(), &mut out_str);
        assert_eq!(status, RpStatus::ParseError);
        assert!(last_error().contains("bogus"), "{}", last_error());

        let config = CString::new("attribute = group\n").unwrap();
        let status = rp_scenario_run(ds, config.as_ptr(), ptr::null(), &mut out_str);
        assert_eq!(status, RpStatus::Missing);
        assert!(last_error().contains("scenario"), "{}", last_error());

        let config = CString::new("scenario = 1\nattribute = nope\n").unwrap();
        let status = rp_scenario_run(ds, config.as_ptr(), ptr::null(), &mut out_str);
        assert_eq!(status, RpStatus::Missing);
        assert!(last_error().contains("nope"), "{}", last_error());
        assert!(out_str.is_null());
    }

    // Null handles are inert everywhere they are legal.
    unsafe {
        assert_eq!(rp_dataset_n_users(ptr::null()), 0);
        assert_eq!(rp_dataset_n_items(ptr::null()), 0);
        assert_eq!(rp_dataset_n_interactions(ptr::null()), 0);
        assert_eq!(
            rp_dataset_summary_json(ptr::null(), &mut out_str),
            RpStatus::NullArgument
        );
        rp_string_free(ptr::null_mut());
        rp_dataset_free(ptr::null_mut());
    }

    unsafe { rp_dataset_free(ds) };
}
