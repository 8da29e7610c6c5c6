use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use rgfm_ffi::*;

fn karate() -> CString {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/karate.edges");
    CString::new(p.to_str().unwrap()).unwrap()
}

fn small_options() -> RgfmTrainOptions {
    let mut o = unsafe {
        let mut o = std::mem::zeroed();
        assert_eq!(rgfm_train_options_default(&mut o), RgfmStatus::Ok);
        o
    };
    o.dim = 4;
    o.hidden = 8;
    o.epochs = 2;
    o.seed = 3;
    o
}

fn last_error() -> String {
    let p = rgfm_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

#[test]
fn defaults_are_exposed() {
    let mut o = unsafe { std::mem::zeroed() };
    assert_eq!(unsafe { rgfm_train_options_default(&mut o) }, RgfmStatus::Ok);
    assert_eq!((o.dim, o.layers, o.epochs), (32, 2, 200));
    assert_eq!(o.learning_rate, 0.01);
    let v = unsafe { CStr::from_ptr(rgfm_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn train_embed_save_load_round_trip() {
    unsafe {
        let mut g = ptr::null_mut();
        assert_eq!(rgfm_graph_load(karate().as_ptr(), &mut g), RgfmStatus::Ok);
        assert_eq!((rgfm_graph_num_nodes(g), rgfm_graph_num_edges(g)), (34, 78));

        let opts = small_options();
        let mut trace = [0.0f64; 2];
        let mut ck = ptr::null_mut();
        assert_eq!(rgfm_train(g, &opts, trace.as_mut_ptr(), &mut ck), RgfmStatus::Ok);
        assert!(trace.iter().all(|l| l.is_finite() && *l > 0.0));

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("m.ckpt").to_str().unwrap()).unwrap();
        assert_eq!(rgfm_checkpoint_save(ck, path.as_ptr()), RgfmStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(rgfm_checkpoint_load(path.as_ptr(), &mut back), RgfmStatus::Ok);

        let mut e1 = ptr::null_mut();
        let mut e2 = ptr::null_mut();
        assert_eq!(rgfm_embed(g, ck, &mut e1), RgfmStatus::Ok);
        assert_eq!(rgfm_embed(g, back, &mut e2), RgfmStatus::Ok);
        let (mut rows, mut cols) = (0, 0);
        assert_eq!(rgfm_embedding_shape(e1, &mut rows, &mut cols), RgfmStatus::Ok);
        assert_eq!((rows, cols), (34, 8));
        let mut a = vec![0.0; rows * cols];
        let mut b = vec![0.0; rows * cols];
        assert_eq!(rgfm_embedding_copy(e1, a.as_mut_ptr(), a.len()), RgfmStatus::Ok);
        assert_eq!(rgfm_embedding_copy(e2, b.as_mut_ptr(), b.len()), RgfmStatus::Ok);
        assert_eq!(a, b);
        assert_eq!(rgfm_embedding_copy(e1, a.as_mut_ptr(), 3), RgfmStatus::BufferTooSmall);

        let (mut auc, mut ap) = (f64::NAN, f64::NAN);
        assert_eq!(rgfm_link_eval(g, ck, 0.2, 7, &mut auc, &mut ap), RgfmStatus::Ok);
        assert!((0.0..=1.0).contains(&auc) && (0.0..=1.0).contains(&ap));

        rgfm_embedding_free(e1);
        rgfm_embedding_free(e2);
        rgfm_checkpoint_free(back);
        rgfm_checkpoint_free(ck);
        rgfm_graph_free(g);
    }
}

#[test]
fn errors_report_codes_and_messages() {
    unsafe {
        let mut g = ptr::null_mut();
        let missing = CString::new("/nonexistent/graph.edges").unwrap();
        assert_eq!(rgfm_graph_load(missing.as_ptr(), &mut g), RgfmStatus::Io);
        assert!(g.is_null());
        assert!(last_error().contains("/nonexistent/graph.edges"));

        assert_eq!(rgfm_graph_load(ptr::null(), &mut g), RgfmStatus::NullPointer);

        let edges = [0usize, 1, 1, 9];
        assert_eq!(
            rgfm_graph_from_edges(3, edges.as_ptr(), 2, &mut g),
            RgfmStatus::InvalidArgument
        );

        let edges = [0usize, 1, 1, 2];
        assert_eq!(rgfm_graph_from_edges(3, edges.as_ptr(), 2, &mut g), RgfmStatus::Ok);
        let mut opts = small_options();
        opts.learning_rate = -1.0;
        let mut ck = ptr::null_mut();
        assert_eq!(
            rgfm_train(g, &opts, ptr::null_mut(), &mut ck),
            RgfmStatus::InvalidArgument
        );
        assert!(last_error().contains("learning rate"));
        assert_eq!(
            rgfm_train(ptr::null(), &opts, ptr::null_mut(), &mut ck),
            RgfmStatus::NullPointer
        );

        let dir = tempfile::tempdir().unwrap();
        let junk = dir.path().join("junk.ckpt");
        std::fs::write(&junk, b"not a checkpoint").unwrap();
        let junk = CString::new(junk.to_str().unwrap()).unwrap();
        assert_eq!(rgfm_checkpoint_load(junk.as_ptr(), &mut ck), RgfmStatus::Checkpoint);
        rgfm_graph_free(g);
        // freeing NULL is a no-op
        rgfm_graph_free(ptr::null_mut());
        rgfm_checkpoint_free(ptr::null_mut());
        rgfm_embedding_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_the_api() {
    let header = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/rgfm.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "RgfmStatus",
        "RGFM_STATUS_OK",
        "typedef struct RgfmGraph RgfmGraph",
        "RgfmTrainOptions",
        "rgfm_graph_load",
        "rgfm_train",
        "rgfm_embed",
        "rgfm_embedding_copy",
        "rgfm_link_eval",
        "rgfm_last_error",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
    // the header must compile as C when a compiler is present
    if let Ok(out) = Command::new("cc")
        .args(["-fsyntax-only", "-x", "c", "-std=c99"])
        .arg(&header)
        .output()
    {
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}
