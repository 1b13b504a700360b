use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use convir::config::Config;
use convir::corpus::save_sessions;
use convir::data::Split;
use convir::derive::chain_triplets;
use convir::pipeline::{self, RunPaths, Workspace};
use convir::scoring::{ModelConfig, ModuleId};
use convir::synth::{generate_corpus, SynthConfig};
use convir_ffi::*;

fn last_error() -> String {
    let p = convir_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn metrics_and_argument_errors() {
    let ranks = [1usize, 3, 6, 9];
    let mut out = 0.0;
    unsafe {
        assert_eq!(convir_recall_at_k(ranks.as_ptr(), 4, 5, &mut out), ConvirStatus::Ok);
        assert_eq!(out, 0.5);
        assert!(convir_last_error().is_null());
        assert_eq!(convir_mrr(ranks.as_ptr(), 1, &mut out), ConvirStatus::Ok);
        assert_eq!(out, 1.0);
        assert_eq!(convir_recall_at_k(ptr::null(), 2, 5, &mut out), ConvirStatus::NullArgument);
        assert!(last_error().contains("ranks"));
        assert_eq!(convir_mrr(ranks.as_ptr(), 4, ptr::null_mut()), ConvirStatus::NullArgument);
        let zero = [0usize];
        assert_eq!(convir_mrr(zero.as_ptr(), 1, &mut out), ConvirStatus::InvalidArgument);
    }
    let v = unsafe { CStr::from_ptr(convir_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn tiny_config() -> Config {
    let mut cfg = Config {
        model: ModelConfig::tiny(8, 8),
        ..Config::default()
    };
    cfg.train.epochs = 1;
    cfg.train.augment = None;
    cfg.synth = SynthConfig {
        n_images: 30,
        seed: 2,
        image_size: 16,
        embedding_dim: 8,
        ..SynthConfig::default()
    };
    cfg.fusion.budget = 10;
    cfg
}

fn trained_run(dir: &Path) -> Config {
    let cfg = tiny_config();
    let corpus = dir.join("corpus");
    let synth = generate_corpus(&cfg.synth).unwrap();
    synth.save(&corpus).unwrap();
    let sessions = chain_triplets(&synth.triplets, 3, 5).unwrap();
    save_sessions(&corpus.join("sessions.jsonl"), &sessions).unwrap();
    let run = RunPaths::new(dir.join("run"));
    let ws = Workspace::open(&corpus, None, &cfg).unwrap();
    for m in ModuleId::ALL {
        pipeline::train(&ws, m, &cfg, &run).unwrap();
    }
    pipeline::build_index(&ws, &run).unwrap();
    pipeline::fuse_weights(&run, &cfg).unwrap();
    cfg.save(&dir.join("config.json")).unwrap();
    cfg
}

fn c(s: &Path) -> CString {
    CString::new(s.to_str().unwrap()).unwrap()
}

#[test]
fn retriever_lifecycle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = trained_run(dir.path());
    let (corpus, run, config) = (c(&dir.path().join("corpus")), c(&dir.path().join("run")), c(&dir.path().join("config.json")));
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(convir_retriever_open(corpus.as_ptr(), run.as_ptr(), config.as_ptr(), &mut h), ConvirStatus::Ok);
        assert!(!h.is_null());
        assert_eq!(convir_retriever_image_count(h), cfg.synth.n_images);

        let ws = Workspace::open(&dir.path().join("corpus"), None, &cfg).unwrap();
        let s = &ws.corpus.sessions[0];
        let session = CString::new(serde_json::to_string(s).unwrap()).unwrap();
        let mut out = ptr::null_mut();
        assert_eq!(convir_retriever_retrieve(h, session.as_ptr(), 3, &mut out), ConvirStatus::Ok);
        let json: serde_json::Value = serde_json::from_str(CStr::from_ptr(out).to_str().unwrap()).unwrap();
        convir_string_free(out);
        assert_eq!(json["items"].as_array().unwrap().len(), 3);
        assert_eq!(json["session_id"], s.session_id.as_str());

        let bad = CString::new(r#"{"session_id":"x","category":"dress","turns":[{"image_id":"nope","feedback":"is red"}]}"#).unwrap();
        let mut out = ptr::null_mut();
        assert_eq!(convir_retriever_retrieve(h, bad.as_ptr(), 3, &mut out), ConvirStatus::InvalidSession);
        assert!(out.is_null());
        assert!(last_error().contains("nope"));

        let garbage = CString::new("{").unwrap();
        assert_eq!(convir_retriever_retrieve(h, garbage.as_ptr(), 3, &mut out), ConvirStatus::Parse);

        let split = CString::new("test").unwrap();
        assert_eq!(convir_retriever_evaluate(h, split.as_ptr(), &mut out), ConvirStatus::Ok);
        let report: serde_json::Value = serde_json::from_str(CStr::from_ptr(out).to_str().unwrap()).unwrap();
        convir_string_free(out);
        let want = pipeline::evaluate(&ws, Split::Test, &RunPaths::new(dir.path().join("run"))).unwrap();
        assert_eq!(report["overall"]["r5"].as_f64().unwrap(), want.fused.overall.r5);

        let split = CString::new("holdout").unwrap();
        assert_eq!(convir_retriever_evaluate(h, split.as_ptr(), &mut out), ConvirStatus::InvalidArgument);
        convir_retriever_free(h);
        convir_retriever_free(ptr::null_mut());
    }
}

#[test]
fn open_reports_missing_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    let synth = generate_corpus(&cfg.synth).unwrap();
    synth.save(&dir.path().join("corpus")).unwrap();
    let sessions = chain_triplets(&synth.triplets, 3, 5).unwrap();
    save_sessions(&dir.path().join("corpus/sessions.jsonl"), &sessions).unwrap();
    cfg.save(&dir.path().join("config.json")).unwrap();
    let corpus = c(&dir.path().join("corpus"));
    let run = c(&dir.path().join("absent"));
    let config = c(&dir.path().join("config.json"));
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(convir_retriever_open(corpus.as_ptr(), run.as_ptr(), config.as_ptr(), &mut h), ConvirStatus::Io);
        assert!(last_error().contains("absent"));
        assert_eq!(convir_retriever_open(corpus.as_ptr(), run.as_ptr(), ptr::null(), &mut h), ConvirStatus::Parse);
        assert!(h.is_null());
        assert_eq!(convir_retriever_open(ptr::null(), run.as_ptr(), ptr::null(), &mut h), ConvirStatus::NullArgument);
    }
    assert!(last_error().contains("corpus_dir"));
}

#[test]
fn synth_corpus_writes_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = c(&dir.path().join("c"));
    unsafe {
        assert_eq!(convir_synth_corpus(out.as_ptr(), 24, 1), ConvirStatus::Ok);
        assert_eq!(convir_synth_corpus(out.as_ptr(), 3, 1), ConvirStatus::InvalidArgument);
    }
    for f in ["manifest.json", "attributes.json", "triplets.jsonl", "embeddings.txt"] {
        assert!(dir.path().join("c").join(f).exists(), "{f}");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = which("cc") else { return };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("t.c");
    std::fs::write(
        &src,
        "#include \"convir.h\"\nint main(void) { ConvirRetriever *h = 0; (void)h; return CONVIR_STATUS_OK; }\n",
    )
    .unwrap();
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = std::process::Command::new(cc)
        .arg("-fsyntax-only")
        .arg("-I")
        .arg(include)
        .arg(&src)
        .status()
        .unwrap();
    assert!(status.success());
}

fn which(name: &str) -> Result<std::path::PathBuf, ()> {
    std::env::var_os("PATH")
        .and_then(|paths| std::env::split_paths(&paths).map(|p| p.join(name)).find(|p| p.exists()))
        .ok_or(())
}
