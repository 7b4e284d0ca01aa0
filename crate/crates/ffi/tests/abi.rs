use std::ffi::{c_char, CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use synthseg::fixture::{write_corpus, CorpusSpec};
use synthseg::taxonomy::ClassTaxonomy;
use synthseg_ffi::*;

fn last_error() -> String {
    let p = synthseg_last_error();
    assert!(!p.is_null(), "expected an error message");
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn mask_round_trip_and_decode_failure() {
    let tax = synthseg_taxonomy_voc();
    let labels: Vec<u8> = (0..64u32).map(|i| if i % 9 == 0 { 255 } else { (i % 21) as u8 }).collect();
    let (mut png, mut png_len) = (ptr::null_mut(), 0usize);
    let status = unsafe { synthseg_mask_encode(tax, 8, 8, labels.as_ptr(), &mut png, &mut png_len) };
    assert_eq!(status, SynthsegStatus::Ok);
    let (mut w, mut h, mut out) = (0u32, 0u32, ptr::null_mut());
    assert_eq!(unsafe { synthseg_mask_decode(png, png_len, &mut w, &mut h, &mut out) }, SynthsegStatus::Ok);
    assert_eq!((w, h), (8, 8));
    assert_eq!(unsafe { std::slice::from_raw_parts(out, 64) }, labels.as_slice());
    unsafe {
        synthseg_bytes_free(out, 64);
        synthseg_bytes_free(png, png_len);
    }

    let bad = vec![21u8; 4];
    let status = unsafe { synthseg_mask_encode(tax, 2, 2, bad.as_ptr(), &mut png, &mut png_len) };
    assert_eq!(status, SynthsegStatus::Encode);
    let junk = b"\x89PNG not really";
    let status = unsafe { synthseg_mask_decode(junk.as_ptr(), junk.len(), &mut w, &mut h, &mut out) };
    assert_eq!(status, SynthsegStatus::Decode);
    assert!(last_error().contains("decode"));
    unsafe { synthseg_taxonomy_free(tax) };
}

#[test]
fn null_arguments_are_rejected() {
    let mut v = 0.0;
    let mut id = 0u8;
    assert_eq!(unsafe { synthseg_canonicalize(ptr::null(), c"bus".as_ptr(), &mut id) }, SynthsegStatus::NullPointer);
    assert_eq!(unsafe { synthseg_fid(ptr::null(), ptr::null(), &mut v) }, SynthsegStatus::NullPointer);
    assert_eq!(unsafe { synthseg_cosine(ptr::null(), ptr::null(), 3, &mut v) }, SynthsegStatus::NullPointer);
    assert_eq!(unsafe { synthseg_taxonomy_len(ptr::null()) }, 0);
    unsafe {
        synthseg_taxonomy_free(ptr::null_mut());
        synthseg_string_free(ptr::null_mut());
        synthseg_plan_free(ptr::null_mut());
    }
}

#[test]
fn taxonomy_from_json() {
    let json = CString::new(r#"{"classes":[{"id":1,"name":"road","aliases":["street"],"rgb":[128,64,128]}]}"#).unwrap();
    let mut tax = ptr::null_mut();
    assert_eq!(unsafe { synthseg_taxonomy_from_json(json.as_ptr(), &mut tax) }, SynthsegStatus::Ok);
    let mut id = 0;
    assert_eq!(unsafe { synthseg_canonicalize(tax, c"Streets".as_ptr(), &mut id) }, SynthsegStatus::Ok);
    assert_eq!(id, 1);
    unsafe { synthseg_taxonomy_free(tax) };
    let mut tax = ptr::null_mut();
    assert_eq!(
        unsafe { synthseg_taxonomy_from_json(c"{\"classes\": []}".as_ptr(), &mut tax) },
        SynthsegStatus::InvalidArgument
    );
}

#[test]
fn metrics_through_the_abi() {
    // Identity covariance, mean shift (3, 4): distance 25.
    let a: Vec<f64> = vec![1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0];
    let b: Vec<f64> = a.chunks(2).flat_map(|r| [r[0] + 3.0, r[1] + 4.0]).collect();
    let (mut sa, mut sb) = (ptr::null_mut(), ptr::null_mut());
    unsafe {
        assert_eq!(synthseg_feature_stats_new(a.as_ptr(), 4, 2, &mut sa), SynthsegStatus::Ok);
        assert_eq!(synthseg_feature_stats_new(b.as_ptr(), 4, 2, &mut sb), SynthsegStatus::Ok);
        let mut v = -1.0;
        assert_eq!(synthseg_fid(sa, sb, &mut v), SynthsegStatus::Ok);
        assert!((v - 25.0).abs() < 1e-9);
        assert_eq!(synthseg_fid(sa, sa, &mut v), SynthsegStatus::Ok);
        assert!(v <= 1e-9);
        synthseg_feature_stats_free(sa);
        synthseg_feature_stats_free(sb);
        let mut one = ptr::null_mut();
        assert_eq!(synthseg_feature_stats_new(a.as_ptr(), 1, 2, &mut one), SynthsegStatus::InvalidArgument);
    }

    let probs = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    let (mut mean, mut std) = (0.0, 0.0);
    assert_eq!(unsafe { synthseg_inception_score(probs.as_ptr(), 3, 3, 1, &mut mean, &mut std) }, SynthsegStatus::Ok);
    assert!((mean - 3.0).abs() < 1e-9);
    let bad = [0.5, 0.6];
    assert_eq!(
        unsafe { synthseg_inception_score(bad.as_ptr(), 1, 2, 1, &mut mean, &mut std) },
        SynthsegStatus::InvalidArgument
    );

    let (u, v) = ([1.0, 0.0], [1.0, 1.0]);
    let mut c = 0.0;
    assert_eq!(unsafe { synthseg_cosine(u.as_ptr(), v.as_ptr(), 2, &mut c) }, SynthsegStatus::Ok);
    assert!((c - 0.5f64.sqrt()).abs() < 1e-12);
    let zero = [0.0, 0.0];
    assert_eq!(unsafe { synthseg_cosine(u.as_ptr(), zero.as_ptr(), 2, &mut c) }, SynthsegStatus::InvalidArgument);
}

#[test]
fn folds_and_plans() {
    let ids: Vec<u8> = (1..=20).collect();
    let mut fold_of = vec![99usize; 20];
    assert_eq!(unsafe { synthseg_split_folds(ids.as_ptr(), 20, 4, fold_of.as_mut_ptr()) }, SynthsegStatus::Ok);
    assert_eq!(fold_of, (0..20).map(|i| i / 5).collect::<Vec<_>>());
    assert_eq!(unsafe { synthseg_split_folds(ids.as_ptr(), 10, 3, fold_of.as_mut_ptr()) }, SynthsegStatus::InvalidArgument);

    let names: Vec<CString> = ["a", "b", "c"].iter().map(|s| CString::new(*s).unwrap()).collect();
    let ptrs: Vec<*const c_char> = names.iter().map(|s| s.as_ptr()).collect();
    let kept = [0u32, 2, 1];
    let counts = [2usize, 0, 1];
    let mut plan = ptr::null_mut();
    let status = unsafe {
        synthseg_plan_new(ptrs.as_ptr(), 3, kept.as_ptr(), counts.as_ptr(), 1.0, 4, 25, 11, &mut plan)
    };
    assert_eq!(status, SynthsegStatus::Ok);
    assert_eq!(unsafe { synthseg_plan_len(plan) }, 100);
    for s in 0..100 {
        let (mut r, mut j) = (0usize, 0i64);
        assert_eq!(unsafe { synthseg_plan_slot(plan, s, &mut r, &mut j) }, SynthsegStatus::Ok);
        match r {
            0 => assert!(j == 0 || j == 2),
            1 => assert_eq!(j, -1, "record without kept variants stays real"),
            _ => assert_eq!(j, 1),
        }
    }
    let (mut r, mut j) = (0usize, 0i64);
    assert_eq!(unsafe { synthseg_plan_slot(plan, 100, &mut r, &mut j) }, SynthsegStatus::InvalidArgument);
    let mut text = ptr::null_mut();
    assert_eq!(unsafe { synthseg_plan_to_jsonl(plan, &mut text) }, SynthsegStatus::Ok);
    let jsonl = unsafe { CStr::from_ptr(text) }.to_str().unwrap().to_string();
    assert_eq!(jsonl.lines().count(), 100);
    unsafe {
        synthseg_string_free(text);
        synthseg_plan_free(plan);
    }
    let status = unsafe {
        synthseg_plan_new(ptrs.as_ptr(), 3, kept.as_ptr(), counts.as_ptr(), 2.0, 4, 25, 11, &mut plan)
    };
    assert_eq!(status, SynthsegStatus::InvalidArgument);
    assert!(last_error().contains("alpha"));
}

#[test]
fn pipeline_from_config_file() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(&dir.path().join("corpus"), &CorpusSpec { images: 2, ..CorpusSpec::default() }, &ClassTaxonomy::pascal_voc())
        .unwrap();
    let config = dir.path().join("c.json");
    std::fs::write(
        &config,
        r#"{"corpus": {"root": "corpus"}, "output_dir": "out", "backends": "mock",
            "generation": {"k_per_image": 2, "width": 48, "height": 48}}"#,
    )
    .unwrap();
    let path = CString::new(config.to_str().unwrap()).unwrap();
    let mut report = ptr::null_mut();
    assert_eq!(unsafe { synthseg_run_pipeline(path.as_ptr(), &mut report) }, SynthsegStatus::Ok);
    let json: serde_json::Value = serde_json::from_str(unsafe { CStr::from_ptr(report) }.to_str().unwrap()).unwrap();
    assert_eq!(json["records"], 2);
    unsafe { synthseg_string_free(report) };
    assert!(dir.path().join("out/manifest.jsonl").is_file());

    let missing = CString::new(dir.path().join("nope.json").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { synthseg_run_pipeline(missing.as_ptr(), ptr::null_mut()) }, SynthsegStatus::InvalidArgument);
}

/// Compiles tests/c/smoke.c against the generated header and static library.
#[test]
fn c_program_links_and_runs() {
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    // target/<profile>/deps/abi-<hash> -> target/<profile>
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|p| p.parent()).unwrap().to_path_buf();
    let lib = profile_dir.join("libsynthseg_ffi.a");
    if !lib.is_file() {
        panic!("static library not found at {}", lib.display());
    }
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("no C compiler ({cc}) available; skipping");
        return;
    }
    let out = tempfile::tempdir().unwrap();
    let bin = out.path().join("smoke");
    let status = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(crate_dir.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "smoke program failed: {}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "ok");
}
