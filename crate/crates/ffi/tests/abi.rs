use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use twostage::model::{init_model, save_checkpoint, ModelSpec};
use twostage_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    unsafe {
        ts_last_error_message(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn generate(samples_per_class: usize) -> *mut TsCorpus {
    let mut c = ptr::null_mut();
    let st = unsafe { ts_corpus_generate(2, 40, 6, samples_per_class, 0.9, 0.0, 5, &mut c) };
    assert_eq!(st, TsStatus::Ok);
    c
}

fn histogram(c: *const TsCorpus) -> Vec<usize> {
    let mut k = 0;
    unsafe {
        assert_eq!(ts_corpus_num_classes(c, &mut k), TsStatus::Ok);
        let mut counts = vec![0; k];
        let mut written = 0;
        assert_eq!(ts_corpus_histogram(c, counts.as_mut_ptr(), k, &mut written), TsStatus::Ok);
        assert_eq!(written, k);
        counts
    }
}

#[test]
fn generate_and_ratio_imbalance() {
    let c = generate(100);
    assert_eq!(histogram(c), vec![100, 100]);
    let mut imb = ptr::null_mut();
    unsafe {
        assert_eq!(ts_corpus_apply_ratio(c, 1, 0.29, 3, &mut imb), TsStatus::Ok);
        assert_eq!(histogram(imb), vec![100, 29]);
        ts_corpus_free(imb);
        ts_corpus_free(c);
    }
}

#[test]
fn step_and_longtail_imbalance() {
    let mut c = ptr::null_mut();
    unsafe {
        assert_eq!(ts_corpus_generate(20, 200, 3, 600, 0.5, 0.0, 1, &mut c), TsStatus::Ok);
        let mut lt = ptr::null_mut();
        assert_eq!(ts_corpus_apply_longtail(c, 0.85, 2, &mut lt), TsStatus::Ok);
        let h = histogram(lt);
        assert_eq!(h[0], 600);
        assert_eq!(h[19], 27);
        ts_corpus_free(lt);

        let classes: Vec<usize> = (10..20).collect();
        let mut st = ptr::null_mut();
        assert_eq!(
            ts_corpus_apply_step(c, classes.as_ptr(), classes.len(), 59, 2, &mut st),
            TsStatus::Ok
        );
        let h = histogram(st);
        assert!(h[..10].iter().all(|&n| n == 600));
        assert!(h[10..].iter().all(|&n| n == 59));
        ts_corpus_free(st);
        ts_corpus_free(c);
    }
}

#[test]
fn parse_names_and_errors() {
    let text = CString::new("pos\tgood film\nneg\tdull film\npos\tfine\n").unwrap();
    let mut c = ptr::null_mut();
    unsafe {
        assert_eq!(ts_corpus_parse(text.as_ptr(), 16, &mut c), TsStatus::Ok);
        let mut n = 0;
        assert_eq!(ts_corpus_len(c, &mut n), TsStatus::Ok);
        assert_eq!(n, 3);
        let mut buf = [0 as c_char; 8];
        let mut needed = 0;
        assert_eq!(ts_corpus_class_name(c, 1, buf.as_mut_ptr(), buf.len(), &mut needed), TsStatus::Ok);
        assert_eq!(CStr::from_ptr(buf.as_ptr()).to_str().unwrap(), "neg");
        assert_eq!(needed, 4);
        assert_eq!(
            ts_corpus_class_name(c, 1, buf.as_mut_ptr(), 2, ptr::null_mut()),
            TsStatus::BufferTooSmall
        );
        assert_eq!(
            ts_corpus_class_name(c, 5, buf.as_mut_ptr(), buf.len(), ptr::null_mut()),
            TsStatus::InvalidArgument
        );

        // an unknown minority class is a data error and leaves the output untouched
        let mut out = ptr::null_mut();
        assert_eq!(ts_corpus_apply_ratio(c, 7, 0.5, 0, &mut out), TsStatus::Data);
        assert!(out.is_null());
        assert!(!last_error().is_empty());

        let mut counts = [0usize; 1];
        assert_eq!(
            ts_corpus_histogram(c, counts.as_mut_ptr(), 1, ptr::null_mut()),
            TsStatus::BufferTooSmall
        );
        ts_corpus_free(c);

        let bad = CString::new("no tab here\n").unwrap();
        assert_eq!(ts_corpus_parse(bad.as_ptr(), 16, &mut c), TsStatus::Parse);
        assert_eq!(ts_corpus_parse(ptr::null(), 16, &mut c), TsStatus::NullPointer);
        let missing = CString::new("/nonexistent/corpus.tsv").unwrap();
        assert_eq!(ts_corpus_load(missing.as_ptr(), 16, &mut c), TsStatus::Io);
        assert!(last_error().contains("nonexistent"));
    }
}

#[test]
fn write_then_load_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("c.tsv").to_str().unwrap()).unwrap();
    let c = generate(10);
    let mut back = ptr::null_mut();
    unsafe {
        assert_eq!(ts_corpus_write(c, path.as_ptr()), TsStatus::Ok);
        assert_eq!(ts_corpus_load(path.as_ptr(), 64, &mut back), TsStatus::Ok);
        assert_eq!(histogram(back), histogram(c));
        ts_corpus_free(back);
        ts_corpus_free(c);
    }
}

#[test]
fn featurize_and_predict_match_library() {
    let spec = ModelSpec {
        input_dim: 32,
        backbone_dims: vec![8],
        final_dim: 4,
        num_classes: 2,
    };
    let params = init_model(&spec, 9).unwrap();
    let bytes = save_checkpoint(&params);
    let c = generate(5);
    unsafe {
        let mut feats = ptr::null_mut();
        assert_eq!(ts_featurize(c, 32, 2, &mut feats), TsStatus::Ok);
        let (mut rows, mut dim) = (0, 0);
        assert_eq!(ts_features_shape(feats, &mut rows, &mut dim), TsStatus::Ok);
        assert_eq!((rows, dim), (10, 32));
        let mut values = vec![0f32; rows * dim];
        assert_eq!(
            ts_features_values(feats, values.as_mut_ptr(), values.len(), ptr::null_mut()),
            TsStatus::Ok
        );
        for row in values.chunks(dim) {
            let norm: f32 = row.iter().map(|v| v * v).sum();
            assert!((norm - 1.0).abs() < 1e-5);
        }

        let mut model = ptr::null_mut();
        assert_eq!(ts_model_from_bytes(bytes.as_ptr(), bytes.len(), &mut model), TsStatus::Ok);
        let (mut d, mut k) = (0, 0);
        assert_eq!(ts_model_shape(model, &mut d, &mut k), TsStatus::Ok);
        assert_eq!((d, k), (32, 2));
        let mut labels = vec![usize::MAX; rows];
        let mut written = 0;
        assert_eq!(
            ts_model_predict(model, feats, labels.as_mut_ptr(), labels.len(), &mut written),
            TsStatus::Ok
        );
        assert_eq!(written, rows);

        let lib_feats = twostage::dataset::featurize::<f32>(
            &twostage::dataset::generate_synthetic(&twostage::SynthSpec {
                num_classes: 2,
                vocab_size: 40,
                doc_length: 6,
                samples_per_class: 5,
                separation: 0.9,
                shift: 0.0,
                seed: 5,
            })
            .unwrap(),
            32,
            2,
        )
        .unwrap();
        assert_eq!(labels, params.predict(lib_feats.values()).unwrap());

        let mut logits = vec![0f32; rows * 2];
        assert_eq!(
            ts_model_logits(model, feats, logits.as_mut_ptr(), logits.len(), ptr::null_mut()),
            TsStatus::Ok
        );
        let lib_logits = params.logits(lib_feats.values()).unwrap();
        assert_eq!(logits, lib_logits.iter().copied().collect::<Vec<_>>());

        // a model with a different input width is rejected
        let mut narrow = ptr::null_mut();
        assert_eq!(ts_featurize(c, 16, 1, &mut narrow), TsStatus::Ok);
        assert_eq!(
            ts_model_predict(model, narrow, labels.as_mut_ptr(), labels.len(), ptr::null_mut()),
            TsStatus::Model
        );
        ts_features_free(narrow);
        ts_model_free(model);
        ts_features_free(feats);
        ts_corpus_free(c);
    }
}

#[test]
fn corrupt_checkpoint_is_model_error() {
    let mut model = ptr::null_mut();
    let junk = b"IMBF\x01\x00\x00\x00\x05";
    unsafe {
        assert_eq!(ts_model_from_bytes(junk.as_ptr(), junk.len(), &mut model), TsStatus::Model);
        assert!(model.is_null());
        let missing = CString::new("/nonexistent/model.ckpt").unwrap();
        assert_eq!(ts_model_load(missing.as_ptr(), &mut model), TsStatus::Io);
    }
}

#[test]
fn loss_constants() {
    let counts = [16usize, 256];
    let mut margins = [0f64; 2];
    unsafe {
        assert_eq!(ts_ldam_margins(counts.as_ptr(), 2, 0.5, margins.as_mut_ptr()), TsStatus::Ok);
        assert!((margins[0] - 0.5).abs() < 1e-12);
        assert!((margins[1] - 0.25).abs() < 1e-12);
        assert_eq!(ts_ldam_margins(counts.as_ptr(), 2, -1.0, margins.as_mut_ptr()), TsStatus::InvalidArgument);
    }
    assert!((ts_effective_number(3, 0.5) - 1.75).abs() < 1e-12);
    assert!(ts_effective_number(3, 1.5).is_nan());
}

#[test]
fn free_functions_accept_null() {
    unsafe {
        ts_corpus_free(ptr::null_mut());
        ts_features_free(ptr::null_mut());
        ts_model_free(ptr::null_mut());
    }
    let v = unsafe { CStr::from_ptr(ts_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

/// The generated header must compile as C (skipped when no C compiler is on PATH).
#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include").join("twostage.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in ["ts_corpus_load", "ts_model_predict", "ts_last_error_message", "TS_STATUS_BUFFER_TOO_SMALL"] {
        assert!(text.contains(f), "header lacks {f}");
    }
    let Ok(cc) = Command::new("cc").arg("--version").output() else {
        eprintln!("no C compiler found; header syntax not checked");
        return;
    };
    assert!(cc.status.success());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"twostage.h\"\nint main(void) { TsCorpus *c = 0; TsStatus s = ts_corpus_generate(2, 10, 3, 4, 0.5, 0.0, 1, &c); ts_corpus_free(c); return s == TS_STATUS_OK ? 0 : 1; }\n",
    )
    .unwrap();
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
