use std::ffi::{CStr, CString};
use std::ptr;

use discourse_ffi::*;

#[test]
fn null_arguments_are_rejected() {
    unsafe {
        let mut corpus = ptr::null_mut();
        assert_eq!(dsc_corpus_load(ptr::null(), &mut corpus), DscStatus::InvalidArgument);
        assert!(corpus.is_null());
        let msg = CStr::from_ptr(dsc_last_error()).to_str().unwrap();
        assert!(msg.contains("path"));
        assert_eq!(dsc_corpus_len(ptr::null()), 0);
        dsc_corpus_free(ptr::null_mut());
        dsc_string_free(ptr::null_mut());
    }
}

#[test]
fn success_clears_the_error() {
    unsafe {
        let mut out = ptr::null_mut();
        assert_ne!(dsc_tokenize_json(ptr::null(), &mut out), DscStatus::Ok);
        assert!(!dsc_last_error().is_null());
        let text = CString::new("Hello...hello").unwrap();
        assert_eq!(dsc_tokenize_json(text.as_ptr(), &mut out), DscStatus::Ok);
        assert!(dsc_last_error().is_null());
        assert_eq!(CStr::from_ptr(out).to_str().unwrap(), r#"["hello","hello"]"#);
        dsc_string_free(out);
    }
}

#[test]
fn parse_errors_map_to_parse_status() {
    unsafe {
        let bad = CString::new("{not json}\n").unwrap();
        let mut corpus = ptr::null_mut();
        assert_eq!(dsc_corpus_parse(bad.as_ptr(), &mut corpus), DscStatus::Parse);
        let good = CString::new(
            r#"{"id":"a","counselor_id":"c","outcome":"better","issue":null,"messages":[{"role":"texter","text":"hi"},{"role":"counselor","text":"hello"}]}"#,
        )
        .unwrap();
        assert_eq!(dsc_corpus_parse(good.as_ptr(), &mut corpus), DscStatus::Ok);
        assert_eq!(dsc_corpus_len(corpus), 1);
        dsc_corpus_free(corpus);
    }
}

#[test]
fn model_round_trips_through_json() {
    let corpus_path = CString::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../core/data/sample_corpus.jsonl")).unwrap();
    unsafe {
        let mut corpus = ptr::null_mut();
        assert_eq!(dsc_corpus_load(corpus_path.as_ptr(), &mut corpus), DscStatus::Ok);
        let mut model = ptr::null_mut();
        let mut ll = 0.0;
        assert_eq!(dsc_stage_model_fit(corpus, 2, 5, 10, 1e-4, &mut model, &mut ll), DscStatus::Ok);
        let mut json = ptr::null_mut();
        assert_eq!(dsc_stage_model_to_json(model, &mut json), DscStatus::Ok);
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("m.json");
        std::fs::write(&path, CStr::from_ptr(json).to_bytes()).unwrap();
        dsc_string_free(json);
        let cpath = CString::new(path.to_str().unwrap()).unwrap();
        let mut loaded = ptr::null_mut();
        assert_eq!(dsc_stage_model_load(cpath.as_ptr(), &mut loaded), DscStatus::Ok);
        assert_eq!(dsc_stage_model_stages(loaded), 2);
        dsc_stage_model_free(loaded);
        dsc_stage_model_free(model);
        dsc_corpus_free(corpus);
    }
}
