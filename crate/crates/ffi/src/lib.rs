//! C ABI over `rgfm`.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_load`
//! style functions and released by the matching `*_free`. Every fallible
//! call returns an [`RgfmStatus`]; on failure a message for the calling
//! thread is available from [`rgfm_last_error`] until the next failing
//! call on that thread. Panics never unwind into C: they are caught and
//! reported as `RGFM_STATUS_PANIC`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use rgfm::eval::{evaluate_links, LinkSplit, Scorer};
use rgfm::graph::{load_edge_list, Graph};
use rgfm::init::InitConfig;
use rgfm::layer::ModelConfig;
use rgfm::pretrain::{embed, train, Checkpoint, Embedding, TrainConfig};
use rgfm::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RgfmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Dimension = 4,
    Numeric = 5,
    Checkpoint = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Opaque graph handle.
pub struct RgfmGraph(Graph);

/// Opaque checkpoint handle.
pub struct RgfmCheckpoint(Checkpoint);

/// Opaque embedding table handle.
pub struct RgfmEmbedding(Embedding);

/// Options for [`rgfm_train`]. Fill with [`rgfm_train_options_default`]
/// and override fields as needed.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct RgfmTrainOptions {
    /// Dimension of both factors.
    pub dim: usize,
    pub layers: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub temperature: f64,
    pub seed: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RgfmStatus {
    match e {
        Error::Io { .. } | Error::Format { .. } => RgfmStatus::Io,
        Error::Checkpoint(_) => RgfmStatus::Checkpoint,
        Error::Dimension { .. } => RgfmStatus::Dimension,
        Error::Argument(_) => RgfmStatus::InvalidArgument,
        _ => RgfmStatus::Numeric,
    }
}

struct Fail(RgfmStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(RgfmStatus::NullPointer, format!("{what} is NULL"))
}

/// Runs `f`, turning errors and panics into a status plus a stored message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RgfmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RgfmStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            RgfmStatus::Panic
        }
    }
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(RgfmStatus::InvalidArgument, "path is not UTF-8".into()))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rgfm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rgfm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a graph from `num_edges` pairs stored flat in `edges`
/// (`u0, v0, u1, v1, ...`).
#[no_mangle]
pub unsafe extern "C" fn rgfm_graph_from_edges(
    num_nodes: usize,
    edges: *const usize,
    num_edges: usize,
    out: *mut *mut RgfmGraph,
) -> RgfmStatus {
    guard(|| {
        if edges.is_null() && num_edges > 0 {
            return Err(null("edges"));
        }
        let flat = if num_edges == 0 {
            &[][..]
        } else {
            std::slice::from_raw_parts(edges, 2 * num_edges)
        };
        let pairs: Vec<(usize, usize)> = flat.chunks_exact(2).map(|p| (p[0], p[1])).collect();
        put(out, RgfmGraph(Graph::from_edges(num_nodes, &pairs)?))
    })
}

/// Reads a whitespace-separated edge list.
#[no_mangle]
pub unsafe extern "C" fn rgfm_graph_load(path: *const c_char, out: *mut *mut RgfmGraph) -> RgfmStatus {
    guard(|| put(out, RgfmGraph(load_edge_list(path_arg(path)?)?)))
}

#[no_mangle]
pub unsafe extern "C" fn rgfm_graph_num_nodes(graph: *const RgfmGraph) -> usize {
    graph.as_ref().map_or(0, |g| g.0.num_nodes())
}

#[no_mangle]
pub unsafe extern "C" fn rgfm_graph_num_edges(graph: *const RgfmGraph) -> usize {
    graph.as_ref().map_or(0, |g| g.0.num_edges())
}

#[no_mangle]
pub unsafe extern "C" fn rgfm_graph_free(graph: *mut RgfmGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Writes the default training options into `out`.
#[no_mangle]
pub unsafe extern "C" fn rgfm_train_options_default(out: *mut RgfmTrainOptions) -> RgfmStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("options"))?;
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        *out = RgfmTrainOptions {
            dim: m.dim_h,
            layers: m.layers,
            hidden: m.hidden,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            dropout: t.dropout,
            temperature: t.temperature,
            seed: t.seed,
        };
        Ok(())
    })
}

/// Pretrains on `graph`. If `trace` is not NULL it must hold at least
/// `options->epochs` doubles and receives the mean loss of each epoch.
#[no_mangle]
pub unsafe extern "C" fn rgfm_train(
    graph: *const RgfmGraph,
    options: *const RgfmTrainOptions,
    trace: *mut f64,
    out: *mut *mut RgfmCheckpoint,
) -> RgfmStatus {
    guard(|| {
        let g = handle(graph, "graph")?;
        let o = handle(options, "options")?;
        let model = ModelConfig {
            dim_h: o.dim,
            dim_s: o.dim,
            layers: o.layers,
            hidden: o.hidden,
            ..ModelConfig::default()
        };
        let cfg = TrainConfig {
            epochs: o.epochs,
            batch_size: o.batch_size,
            learning_rate: o.learning_rate,
            dropout: o.dropout,
            temperature: o.temperature,
            seed: o.seed,
            ..TrainConfig::default()
        };
        model.validate()?;
        let result = train(&g.0, model, InitConfig::default(), cfg)?;
        if !trace.is_null() {
            std::slice::from_raw_parts_mut(trace, result.trace.len()).copy_from_slice(&result.trace);
        }
        put(out, RgfmCheckpoint(result.checkpoint))
    })
}

#[no_mangle]
pub unsafe extern "C" fn rgfm_checkpoint_load(path: *const c_char, out: *mut *mut RgfmCheckpoint) -> RgfmStatus {
    guard(|| put(out, RgfmCheckpoint(Checkpoint::load(path_arg(path)?)?)))
}

#[no_mangle]
pub unsafe extern "C" fn rgfm_checkpoint_save(ckpt: *const RgfmCheckpoint, path: *const c_char) -> RgfmStatus {
    guard(|| {
        let c = handle(ckpt, "checkpoint")?;
        c.0.save(path_arg(path)?)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn rgfm_checkpoint_free(ckpt: *mut RgfmCheckpoint) {
    if !ckpt.is_null() {
        drop(Box::from_raw(ckpt));
    }
}

/// Embeds every node of `graph` with the checkpoint's parameters.
#[no_mangle]
pub unsafe extern "C" fn rgfm_embed(
    graph: *const RgfmGraph,
    ckpt: *const RgfmCheckpoint,
    out: *mut *mut RgfmEmbedding,
) -> RgfmStatus {
    guard(|| {
        let g = handle(graph, "graph")?;
        let c = handle(ckpt, "checkpoint")?;
        put(out, RgfmEmbedding(embed(&g.0, &c.0)?))
    })
}

/// Row and column counts of an embedding table.
#[no_mangle]
pub unsafe extern "C" fn rgfm_embedding_shape(
    emb: *const RgfmEmbedding,
    rows: *mut usize,
    cols: *mut usize,
) -> RgfmStatus {
    guard(|| {
        let e = handle(emb, "embedding")?;
        if rows.is_null() || cols.is_null() {
            return Err(null("shape output"));
        }
        *rows = e.0.num_nodes();
        *cols = e.0.dim();
        Ok(())
    })
}

/// Copies the table row-major into `buf`, which holds `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rgfm_embedding_copy(emb: *const RgfmEmbedding, buf: *mut f64, len: usize) -> RgfmStatus {
    guard(|| {
        let e = handle(emb, "embedding")?;
        let need = e.0.num_nodes() * e.0.dim();
        if len < need {
            return Err(Fail(
                RgfmStatus::BufferTooSmall,
                format!("buffer holds {len} values, table has {need}"),
            ));
        }
        if buf.is_null() && need > 0 {
            return Err(null("buffer"));
        }
        let out = std::slice::from_raw_parts_mut(buf, need);
        for (dst, row) in out.chunks_exact_mut(e.0.dim().max(1)).zip(&e.0.rows) {
            dst.copy_from_slice(row);
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn rgfm_embedding_free(emb: *mut RgfmEmbedding) {
    if !emb.is_null() {
        drop(Box::from_raw(emb));
    }
}

/// Link-prediction AUC and AP: `holdout` of the edges are hidden, the
/// checkpoint embeds the remaining graph, and held-out edges are ranked
/// against as many sampled non-edges by embedding dot product.
#[no_mangle]
pub unsafe extern "C" fn rgfm_link_eval(
    graph: *const RgfmGraph,
    ckpt: *const RgfmCheckpoint,
    holdout: f64,
    seed: u64,
    auc: *mut f64,
    ap: *mut f64,
) -> RgfmStatus {
    guard(|| {
        let g = handle(graph, "graph")?;
        let c = handle(ckpt, "checkpoint")?;
        if auc.is_null() || ap.is_null() {
            return Err(null("metric output"));
        }
        let split = LinkSplit::new(&g.0, holdout, seed)?;
        let (a, p) = evaluate_links(&g.0, &split, &c.0, Scorer::Dot)?;
        *auc = a;
        *ap = p;
        Ok(())
    })
}
