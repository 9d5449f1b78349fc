use std::ffi::{CStr, CString};
use std::ptr;

use qt_core::corpus::Vocabulary;
use qt_core::embedder::{embed_sentences, export_embeddings};
use qt_core::encoder::EncoderKind;
use qt_core::trainer::{QtModel as CoreModel, TrainConfig, Trainer};
use qt_ffi::*;

fn saved_model(dir: &std::path::Path) -> (CString, CoreModel<f32>) {
    let vocab = Vocabulary::build("red green blue cat dog bird", 100).unwrap();
    let config = TrainConfig { encoder: EncoderKind::Gru, emb_dim: 6, hidden_dim: 5, ..Default::default() };
    let trainer = Trainer::new(CoreModel::new(config, vocab, None).unwrap()).unwrap();
    let path = dir.join("m.qtck");
    trainer.save(&path).unwrap();
    (CString::new(path.to_str().unwrap()).unwrap(), trainer.into_model())
}

fn last_error() -> String {
    let p = qt_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn model_embed_matches_core() {
    let dir = tempfile::tempdir().unwrap();
    let (path, core) = saved_model(dir.path());
    let texts = ["red cat", "blue dog bird", "green green"];
    let owned: Vec<CString> = texts.iter().map(|s| CString::new(*s).unwrap()).collect();
    let ptrs: Vec<*const _> = owned.iter().map(|s| s.as_ptr()).collect();

    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(qt_model_load(path.as_ptr(), &mut model), QtStatus::Ok);
        let mut dim = 0;
        assert_eq!(qt_model_dim(model, &mut dim), QtStatus::Ok);
        assert_eq!(dim, core.embedding_dim());
        assert_eq!(dim, 10);

        let mut emb = ptr::null_mut();
        assert_eq!(qt_model_embed(model, ptrs.as_ptr(), ptrs.len(), &mut emb), QtStatus::Ok);
        let (mut n, mut d) = (0, 0);
        assert_eq!(qt_embeddings_shape(emb, &mut n, &mut d), QtStatus::Ok);
        assert_eq!((n, d), (3, 10));

        let tokens: Vec<Vec<&str>> = texts.iter().map(|t| t.split(' ').collect()).collect();
        let want = embed_sentences(&core, &tokens, 64).unwrap();
        let mut got = vec![0.0; 10];
        for id in 0..3 {
            assert_eq!(qt_embeddings_vector(emb, id, got.as_mut_ptr(), 10), QtStatus::Ok);
            assert_eq!(got, want.vector(id).unwrap());
        }
        assert_eq!(qt_embeddings_vector(emb, 0, got.as_mut_ptr(), 9), QtStatus::BufferTooSmall);

        let (mut ids, mut scores, mut count) = ([0u64; 3], [0.0; 3], 0);
        let q = want.vector(1).unwrap();
        let st = qt_embeddings_nearest(emb, q.as_ptr(), 10, 3, ids.as_mut_ptr(), scores.as_mut_ptr(), &mut count);
        assert_eq!(st, QtStatus::Ok);
        assert_eq!(count, 3);
        assert_eq!(ids[0], 1);
        assert!((scores[0] - 1.0).abs() < 1e-12);

        let st = qt_embeddings_analogy(emb, 2, 2, 0, 1, ids.as_mut_ptr(), scores.as_mut_ptr(), &mut count);
        assert_eq!(st, QtStatus::Ok);
        assert_eq!((count, ids[0]), (1, 0));

        qt_embeddings_free(emb);
        qt_model_free(model);
    }
}

#[test]
fn load_exported_embeddings() {
    let dir = tempfile::tempdir().unwrap();
    let (_, core) = saved_model(dir.path());
    let coll = embed_sentences(&core, &[vec!["cat"], vec!["dog", "bird"]], 8).unwrap();
    let file = dir.path().join("e.txt");
    export_embeddings(&coll, &file).unwrap();
    let c = CString::new(file.to_str().unwrap()).unwrap();
    unsafe {
        let mut emb = ptr::null_mut();
        assert_eq!(qt_embeddings_load(c.as_ptr(), &mut emb), QtStatus::Ok);
        let mut v = vec![0.0; 10];
        assert_eq!(qt_embeddings_vector(emb, 1, v.as_mut_ptr(), 10), QtStatus::Ok);
        assert_eq!(v, coll.vector(1).unwrap());
        qt_embeddings_free(emb);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = CString::new(dir.path().join("none.qtck").to_str().unwrap()).unwrap();
    let garbage = dir.path().join("bad.qtck");
    std::fs::write(&garbage, b"not a checkpoint").unwrap();
    let garbage = CString::new(garbage.to_str().unwrap()).unwrap();
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(qt_model_load(missing.as_ptr(), &mut model), QtStatus::Io);
        assert!(model.is_null());
        assert!(!last_error().is_empty());
        assert_eq!(qt_model_load(garbage.as_ptr(), &mut model), QtStatus::Format);
        assert_eq!(qt_model_load(ptr::null(), &mut model), QtStatus::NullPointer);
        assert!(last_error().contains("path"));

        let (x, y) = ([1.0, 2.0, 3.0], [2.0, 2.0, 2.0]);
        let mut r = 0.0;
        assert_eq!(qt_pearson(x.as_ptr(), y.as_ptr(), 3, &mut r), QtStatus::Degenerate);
        assert_eq!(qt_spearman(x.as_ptr(), x.as_ptr(), 2, &mut r), QtStatus::Input);
        assert_eq!(qt_spearman(x.as_ptr(), x.as_ptr(), 3, &mut r), QtStatus::Ok);
        assert!(qt_last_error().is_null());
        assert!((r - 1.0).abs() < 1e-12);

        let (dir_path, _) = saved_model(dir.path());
        assert_eq!(qt_model_load(dir_path.as_ptr(), &mut model), QtStatus::Ok);
        let bad = [CString::new("").unwrap()];
        let ptrs = [bad[0].as_ptr()];
        let mut emb = ptr::null_mut();
        assert_eq!(qt_model_embed(model, ptrs.as_ptr(), 1, &mut emb), QtStatus::Input);
        qt_model_free(model);
        qt_model_free(ptr::null_mut());
    }
}

#[test]
fn version_and_header() {
    let v = unsafe { CStr::from_ptr(qt_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/qt.h")).unwrap();
    for name in ["qt_model_load", "qt_model_embed", "qt_embeddings_nearest", "qt_embeddings_analogy", "QT_STATUS_OK"] {
        assert!(header.contains(name), "{name} missing from header");
    }
    assert!(header.contains("typedef struct QtModel QtModel;"));
}
