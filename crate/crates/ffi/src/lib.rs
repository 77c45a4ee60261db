//! C ABI over the streaming token memory, pooling and metric primitives.
//!
//! Every function returns a [`SnavStatus`]; on failure the message is
//! available from [`snav_last_error`] on the same thread. Panics never cross
//! the boundary. Token matrices are row-major `double` arrays of
//! `rows * channels` values.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use streamnav::features::{cosine_similarity, grid_pool, FrameFeatures, PoolScale, TokenMatrix};
use streamnav::memory::{MemoryState, MergeConfig};
use streamnav::metrics::spl;
use streamnav::TokenError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnavStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidConfig = 3,
    ShapeMismatch = 4,
    NonFinite = 5,
    EmptyMemory = 6,
    BufferTooSmall = 7,
    DegenerateEpisode = 8,
    Panic = 9,
}

/// Plain-data mirror of the merge configuration.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnavMergeConfig {
    pub alpha_curr: usize,
    pub alpha_short: usize,
    pub alpha_long: usize,
    pub buffer_len: usize,
    pub tau: f64,
}

impl From<MergeConfig> for SnavMergeConfig {
    fn from(c: MergeConfig) -> Self {
        Self {
            alpha_curr: c.alpha_curr.get(),
            alpha_short: c.alpha_short.get(),
            alpha_long: c.alpha_long.get(),
            buffer_len: c.buffer_len,
            tau: c.tau,
        }
    }
}

impl TryFrom<SnavMergeConfig> for MergeConfig {
    type Error = TokenError;
    fn try_from(c: SnavMergeConfig) -> Result<Self, TokenError> {
        Ok(MergeConfig {
            alpha_curr: PoolScale::new(c.alpha_curr)?,
            alpha_short: PoolScale::new(c.alpha_short)?,
            alpha_long: PoolScale::new(c.alpha_long)?,
            buffer_len: c.buffer_len,
            tau: c.tau,
        })
    }
}

/// Opaque streaming memory handle.
pub struct SnavMemory {
    state: MemoryState,
    cfg: MergeConfig,
    n_x: usize,
    channels: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

type Failure = (SnavStatus, String);

fn token_failure(e: TokenError) -> Failure {
    let status = match e {
        TokenError::NonSquareTokenGrid { .. } | TokenError::IncompatibleScale { .. } => SnavStatus::InvalidArgument,
        TokenError::DimensionMismatch { .. } | TokenError::ShapeMismatch { .. } => SnavStatus::ShapeMismatch,
        TokenError::NonFinite { .. } => SnavStatus::NonFinite,
        TokenError::EmptyMemory => SnavStatus::EmptyMemory,
        TokenError::InvalidConfig(_) => SnavStatus::InvalidConfig,
    };
    (status, e.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SnavStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SnavStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SnavStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    (SnavStatus::NullPointer, format!("{what} is null"))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    *out = value;
    Ok(())
}

/// Copies `m` into `out`, reporting the required length through `written`.
unsafe fn copy_matrix(m: &TokenMatrix, out: *mut f64, capacity: usize, written: *mut usize) -> Result<(), Failure> {
    let need = m.as_slice().len();
    write_out(written, need, "written")?;
    if capacity < need {
        return Err((
            SnavStatus::BufferTooSmall,
            format!("need {need} values, capacity {capacity}"),
        ));
    }
    if need > 0 {
        if out.is_null() {
            return Err(null("out"));
        }
        ptr::copy_nonoverlapping(m.as_slice().as_ptr(), out, need);
    }
    Ok(())
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn snav_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn snav_merge_config_default() -> SnavMergeConfig {
    MergeConfig::default().into()
}

/// Creates a memory for frames of `n_x` tokens by `channels` values.
/// `cfg` may be null for the defaults. Free with [`snav_memory_free`].
///
/// # Safety
/// `cfg` must be null or point to a valid config; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn snav_memory_new(
    cfg: *const SnavMergeConfig,
    n_x: usize,
    channels: usize,
    out: *mut *mut SnavMemory,
) -> SnavStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = if cfg.is_null() {
            MergeConfig::default()
        } else {
            MergeConfig::try_from(*cfg).map_err(token_failure)?
        };
        cfg.validate(n_x).map_err(token_failure)?;
        if channels == 0 {
            return Err((SnavStatus::InvalidArgument, "channels must be >= 1".into()));
        }
        let handle = Box::new(SnavMemory {
            state: MemoryState::new(),
            cfg,
            n_x,
            channels,
        });
        *out = Box::into_raw(handle);
        Ok(())
    })
}

/// # Safety
/// `mem` must be null or a handle from [`snav_memory_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn snav_memory_free(mem: *mut SnavMemory) {
    if !mem.is_null() {
        drop(Box::from_raw(mem));
    }
}

/// Pushes one frame of `len = n_x * channels` values.
///
/// # Safety
/// `mem` must be a live handle and `data` must hold `len` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn snav_memory_push(mem: *mut SnavMemory, data: *const f64, len: usize) -> SnavStatus {
    guard(|| {
        let mem = mem.as_mut().ok_or_else(|| null("mem"))?;
        let values = slice(data, len, "data")?;
        if len != mem.n_x * mem.channels {
            return Err((
                SnavStatus::ShapeMismatch,
                format!("frame has {len} values, expected {}", mem.n_x * mem.channels),
            ));
        }
        let tokens = TokenMatrix::new(mem.n_x, mem.channels, values.to_vec()).map_err(token_failure)?;
        let frame = FrameFeatures::new(tokens, mem.state.frames() + 1).map_err(token_failure)?;
        mem.state.push(&frame, &mem.cfg).map_err(token_failure)?;
        Ok(())
    })
}

/// # Safety
/// `mem` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn snav_memory_token_count(mem: *const SnavMemory, out: *mut usize) -> SnavStatus {
    guard(|| {
        let mem = mem.as_ref().ok_or_else(|| null("mem"))?;
        write_out(out, mem.state.token_count(), "out")
    })
}

/// Number of long-term entries.
///
/// # Safety
/// `mem` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn snav_memory_long_len(mem: *const SnavMemory, out: *mut usize) -> SnavStatus {
    guard(|| {
        let mem = mem.as_ref().ok_or_else(|| null("mem"))?;
        write_out(out, mem.state.long_term().len(), "out")
    })
}

/// Frames pushed so far.
///
/// # Safety
/// `mem` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn snav_memory_frames(mem: *const SnavMemory, out: *mut u64) -> SnavStatus {
    guard(|| {
        let mem = mem.as_ref().ok_or_else(|| null("mem"))?;
        write_out(out, mem.state.frames(), "out")
    })
}

/// Copies the token sequence (long, short, current; row-major) into `out`.
/// `written` receives the required value count even when the buffer is too small.
///
/// # Safety
/// `mem` must be a live handle; `out` must hold `capacity` writable doubles;
/// `written` must be writable.
#[no_mangle]
pub unsafe extern "C" fn snav_memory_copy_tokens(
    mem: *const SnavMemory,
    out: *mut f64,
    capacity: usize,
    written: *mut usize,
) -> SnavStatus {
    guard(|| {
        let mem = mem.as_ref().ok_or_else(|| null("mem"))?;
        let seq = mem.state.token_sequence().map_err(token_failure)?;
        copy_matrix(&seq, out, capacity, written)
    })
}

/// Average-pools a square token grid of `rows` tokens over `alpha x alpha` blocks.
///
/// # Safety
/// `data` must hold `rows * cols` doubles; `out` must hold `capacity`
/// writable doubles; `out_rows` must be writable.
#[no_mangle]
pub unsafe extern "C" fn snav_grid_pool(
    data: *const f64,
    rows: usize,
    cols: usize,
    alpha: usize,
    out: *mut f64,
    capacity: usize,
    out_rows: *mut usize,
) -> SnavStatus {
    guard(|| {
        let values = slice(data, rows * cols, "data")?;
        let x = TokenMatrix::new(rows, cols, values.to_vec()).map_err(token_failure)?;
        let alpha = PoolScale::new(alpha).map_err(token_failure)?;
        let pooled = grid_pool(&x, alpha).map_err(token_failure)?;
        write_out(out_rows, pooled.rows(), "out_rows")?;
        let mut written = 0usize;
        copy_matrix(&pooled, out, capacity, &mut written)
    })
}

/// # Safety
/// `a` and `b` must each hold `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn snav_cosine(a: *const f64, b: *const f64, len: usize, out: *mut f64) -> SnavStatus {
    guard(|| {
        let (a, b) = (slice(a, len, "a")?, slice(b, len, "b")?);
        let c = cosine_similarity(a, b).map_err(token_failure)?;
        write_out(out, c, "out")
    })
}

/// Success weighted by path length.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn snav_spl(success: bool, path_length: f64, geodesic: f64, out: *mut f64) -> SnavStatus {
    guard(|| {
        let v = spl(success, path_length, geodesic).map_err(|e| (SnavStatus::DegenerateEpisode, e.to_string()))?;
        write_out(out, v, "out")
    })
}
