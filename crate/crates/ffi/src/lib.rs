//! C ABI over the `chunkplan` planner.
//!
//! Conventions:
//! - every fallible function returns a [`CpStatus`] and writes results through
//!   out-pointers, which are left untouched on failure;
//! - objects are opaque handles released with their `*_free` function;
//! - strings returned to the caller are freed with [`cp_string_free`];
//! - after a non-OK status, [`cp_last_error_message`] describes the failure on
//!   the calling thread.
//!
//! No function unwinds across the boundary; a Rust panic becomes
//! [`CpStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use chunkplan::cost_model::{self, CostInputs, StrategyName, StrategySpec};
use chunkplan::profiles::{
    load_hardware_profile, load_model_profile, synthesize_transformer_profile, HardwareProfile,
    ModelProfile, PrecisionSpec, TransformerShape,
};
use chunkplan::rcache_sim::Device;
use chunkplan::search::{self, build_plan, load_plan, Plan, PlanOptions, Priority};
use chunkplan::Error;

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Validation = 4,
    Consistency = 5,
    Infeasible = 6,
    UndefinedStrategy = 7,
    InvalidArgument = 8,
    Io = 9,
    Panic = 10,
}

impl From<&Error> for CpStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Parse(_) | Error::UnsupportedVersion { .. } => CpStatus::Parse,
            Error::Validation(_)
            | Error::UncommonGraph { .. }
            | Error::ChunkTooSmall { .. }
            | Error::MissingRateEntry(_) => CpStatus::Validation,
            Error::Consistency(_) => CpStatus::Consistency,
            Error::InfeasibleCache(_) | Error::NoFeasibleCandidate(_) => CpStatus::Infeasible,
            Error::UndefinedStrategy(_) => CpStatus::UndefinedStrategy,
            Error::OracleLimit(_) | Error::InvalidArgument(_) => CpStatus::InvalidArgument,
            Error::Io(_) => CpStatus::Io,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CpDevice {
    Gpu = 0,
    Cpu = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CpStrategy {
    Ddp = 0,
    Zero1 = 1,
    Zero2 = 2,
    Zero3 = 3,
    RcacheMax = 4,
    RcacheMin = 5,
}

impl From<CpStrategy> for StrategyName {
    fn from(s: CpStrategy) -> Self {
        match s {
            CpStrategy::Ddp => StrategyName::Ddp,
            CpStrategy::Zero1 => StrategyName::Zero1,
            CpStrategy::Zero2 => StrategyName::Zero2,
            CpStrategy::Zero3 => StrategyName::Zero3,
            CpStrategy::RcacheMax => StrategyName::RCacheMax,
            CpStrategy::RcacheMin => StrategyName::RCacheMin,
        }
    }
}

/// Byte widths of compute values and optimizer states.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CpPrecision {
    pub compute_bytes: u64,
    pub optimizer_bytes: u64,
    pub optimizer_factor: u64,
}

impl CpPrecision {
    fn spec(&self) -> Result<PrecisionSpec, Error> {
        PrecisionSpec::new(
            self.compute_bytes,
            self.optimizer_bytes,
            self.optimizer_factor,
        )
    }
}

/// Planner knobs. `u_allowed` is used only when `has_u_allowed` is true.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CpPlanOptions {
    pub f_alloc: f64,
    pub f_frag: f64,
    pub has_u_allowed: bool,
    pub u_allowed: u64,
    pub grid_points: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CpPlanSummary {
    pub chunk_length: u64,
    pub n_block: usize,
    pub n_chunks: usize,
    pub working_set_blocks: usize,
    pub gpu_chunks: usize,
    pub gpu_count: u32,
    pub u_allowed: u64,
    pub total_bytes: u64,
    pub waste_rate: f64,
    pub benefit_rcache_block: f64,
    pub benefit_chunk_upload: f64,
    pub upload_first: bool,
    pub fallback: bool,
    /// When false the traffic fields below are zero.
    pub has_estimates: bool,
    pub g2g_bytes: u64,
    pub g2c_bytes: u64,
    pub c2g_bytes: u64,
    pub estimated_seconds: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CpCostRow {
    pub gpu_mem_per_gpu: u64,
    pub g2c_comm: u64,
    pub g2g_comm: u64,
}

/// Opaque model profile handle.
pub struct CpModelProfile(ModelProfile);
/// Opaque hardware profile handle.
pub struct CpHardwareProfile(HardwareProfile);
/// Opaque plan handle.
pub struct CpPlan(Plan);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn fail(status: CpStatus, msg: impl Into<String>) -> CpStatus {
    set_last_error(msg.into());
    status
}

fn from_err(e: Error) -> CpStatus {
    fail(CpStatus::from(&e), e.to_string())
}

/// Runs `f`, converting panics to [`CpStatus::Panic`].
fn guard(f: impl FnOnce() -> CpStatus) -> CpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(CpStatus::Panic, format!("panic: {msg}"))
        }
    }
}

macro_rules! try_cp {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(e) => return from_err(e),
        }
    };
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(CpStatus::NullPointer, concat!("`", stringify!($p), "` is null"));
        })+
    };
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, CpStatus> {
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| fail(CpStatus::InvalidUtf8, format!("argument is not UTF-8: {e}")))
}

fn into_c_string(text: String) -> Result<*mut c_char, CpStatus> {
    CString::new(text)
        .map(CString::into_raw)
        .map_err(|_| fail(CpStatus::InvalidArgument, "string contains an interior NUL"))
}

/// Message for the last failure on this thread, or NULL if none.
///
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn cp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[no_mangle]
pub extern "C" fn cp_precision_default() -> CpPrecision {
    let p = PrecisionSpec::default();
    CpPrecision {
        compute_bytes: p.compute_bytes,
        optimizer_bytes: p.optimizer_bytes,
        optimizer_factor: p.optimizer_factor,
    }
}

#[no_mangle]
pub extern "C" fn cp_plan_options_default() -> CpPlanOptions {
    let o = PlanOptions::default();
    CpPlanOptions {
        f_alloc: o.f_alloc,
        f_frag: o.f_frag,
        has_u_allowed: false,
        u_allowed: 0,
        grid_points: o.grid_points,
    }
}

// ---- model profiles -------------------------------------------------------

/// Parses a model profile document.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cp_model_profile_load_json(
    json: *const c_char,
    out: *mut *mut CpModelProfile,
) -> CpStatus {
    guard(|| {
        non_null!(json, out);
        let text = match str_arg(json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let profile = try_cp!(load_model_profile(text));
        *out = Box::into_raw(Box::new(CpModelProfile(profile)));
        CpStatus::Ok
    })
}

/// Synthesizes a GPT-2 style profile. Zero for `vocab`, `seq_len` or `batch` selects the default.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cp_model_profile_synthesize(
    hidden: u64,
    layers: u64,
    heads: u64,
    vocab: u64,
    seq_len: u64,
    batch: u64,
    out: *mut *mut CpModelProfile,
) -> CpStatus {
    guard(|| {
        non_null!(out);
        let mut shape = TransformerShape::new(hidden, layers, heads);
        if vocab > 0 {
            shape.vocab = vocab;
        }
        if seq_len > 0 {
            shape.seq_len = seq_len;
        }
        if batch > 0 {
            shape.batch = batch;
        }
        let profile = try_cp!(synthesize_transformer_profile(&shape));
        *out = Box::into_raw(Box::new(CpModelProfile(profile)));
        CpStatus::Ok
    })
}

/// # Safety
/// `profile` must be NULL or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn cp_model_profile_free(profile: *mut CpModelProfile) {
    if !profile.is_null() {
        drop(Box::from_raw(profile));
    }
}

/// # Safety
/// `profile` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cp_model_profile_total_elements(
    profile: *const CpModelProfile,
    out: *mut u64,
) -> CpStatus {
    guard(|| {
        non_null!(profile, out);
        *out = (*profile).0.total_elements();
        CpStatus::Ok
    })
}

// ---- hardware profiles ----------------------------------------------------

/// Parses a hardware profile document (rates in GB/s).
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cp_hardware_profile_load_json(
    json: *const c_char,
    out: *mut *mut CpHardwareProfile,
) -> CpStatus {
    guard(|| {
        non_null!(json, out);
        let text = match str_arg(json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let hw = try_cp!(load_hardware_profile(text));
        *out = Box::into_raw(Box::new(CpHardwareProfile(hw)));
        CpStatus::Ok
    })
}

/// The bundled 4 x 80 GB A100 development server profile.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cp_hardware_profile_dev_server(
    out: *mut *mut CpHardwareProfile,
) -> CpStatus {
    guard(|| {
        non_null!(out);
        *out = Box::into_raw(Box::new(CpHardwareProfile(HardwareProfile::dev_server())));
        CpStatus::Ok
    })
}

/// Selects the data-parallel GPU count used by later calls.
///
/// # Safety
/// `hw` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cp_hardware_profile_set_gpu_count(
    hw: *mut CpHardwareProfile,
    gpus: u32,
) -> CpStatus {
    guard(|| {
        non_null!(hw);
        let updated = try_cp!((*hw).0.with_gpu_count(gpus));
        (*hw).0 = updated;
        CpStatus::Ok
    })
}

/// # Safety
/// `hw` must be NULL or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn cp_hardware_profile_free(hw: *mut CpHardwareProfile) {
    if !hw.is_null() {
        drop(Box::from_raw(hw));
    }
}

// ---- plans ----------------------------------------------------------------

/// Runs the configuration search. `options` may be NULL for defaults.
///
/// A plan whose working set does not fit is still returned, with
/// `fallback` set in its summary.
///
/// # Safety
/// `profile` and `hw` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cp_plan_build(
    profile: *const CpModelProfile,
    hw: *const CpHardwareProfile,
    precision: CpPrecision,
    options: *const CpPlanOptions,
    out: *mut *mut CpPlan,
) -> CpStatus {
    guard(|| {
        non_null!(profile, hw, out);
        let mut opts = PlanOptions::default();
        if let Some(o) = options.as_ref() {
            opts.f_alloc = o.f_alloc;
            opts.f_frag = o.f_frag;
            opts.u_allowed = o.has_u_allowed.then_some(o.u_allowed);
            opts.grid_points = o.grid_points;
        }
        let precision = try_cp!(precision.spec());
        let plan = try_cp!(build_plan(&(*profile).0, &(*hw).0, precision, &opts));
        *out = Box::into_raw(Box::new(CpPlan(plan)));
        CpStatus::Ok
    })
}

/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cp_plan_load_json(json: *const c_char, out: *mut *mut CpPlan) -> CpStatus {
    guard(|| {
        non_null!(json, out);
        let text = match str_arg(json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let plan = try_cp!(load_plan(text));
        *out = Box::into_raw(Box::new(CpPlan(plan)));
        CpStatus::Ok
    })
}

/// Serializes a plan; free the result with [`cp_string_free`].
///
/// # Safety
/// `plan` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cp_plan_to_json(plan: *const CpPlan, out: *mut *mut c_char) -> CpStatus {
    guard(|| {
        non_null!(plan, out);
        let text = try_cp!((*plan).0.to_json());
        match into_c_string(text) {
            Ok(s) => {
                *out = s;
                CpStatus::Ok
            }
            Err(status) => status,
        }
    })
}

/// # Safety
/// `plan` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cp_plan_summary(plan: *const CpPlan, out: *mut CpPlanSummary) -> CpStatus {
    guard(|| {
        non_null!(plan, out);
        let p = &(*plan).0;
        let mut s = CpPlanSummary {
            chunk_length: p.chunk_length,
            n_block: p.n_block,
            n_chunks: p.n_chunks,
            working_set_blocks: p.working_set_blocks,
            gpu_chunks: p.gpu_chunks(),
            gpu_count: p.gpu_count,
            u_allowed: p.memory.u_allowed,
            total_bytes: p.memory.total_bytes,
            waste_rate: p.waste_rate,
            benefit_rcache_block: p.benefit_rcache_block,
            benefit_chunk_upload: p.benefit_chunk_upload,
            upload_first: p.priority == Priority::UploadFirst,
            fallback: p.fallback,
            ..Default::default()
        };
        if let Some(e) = &p.estimates {
            s.has_estimates = true;
            s.g2g_bytes = e.g2g_bytes;
            s.g2c_bytes = e.g2c_bytes;
            s.c2g_bytes = e.c2g_bytes;
            s.estimated_seconds = e.estimated_seconds();
        }
        *out = s;
        CpStatus::Ok
    })
}

/// Home device of chunk `chunk`.
///
/// # Safety
/// `plan` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cp_plan_chunk_home(
    plan: *const CpPlan,
    chunk: usize,
    out: *mut CpDevice,
) -> CpStatus {
    guard(|| {
        non_null!(plan, out);
        match (*plan).0.chunk_homes.get(&chunk) {
            Some(Device::Gpu) => *out = CpDevice::Gpu,
            Some(Device::Cpu) => *out = CpDevice::Cpu,
            None => {
                return fail(
                    CpStatus::InvalidArgument,
                    format!(
                        "chunk {chunk} out of range (plan has {})",
                        (*plan).0.n_chunks
                    ),
                )
            }
        }
        CpStatus::Ok
    })
}

/// # Safety
/// `plan` must be NULL or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn cp_plan_free(plan: *mut CpPlan) {
    if !plan.is_null() {
        drop(Box::from_raw(plan));
    }
}

// ---- formulas -------------------------------------------------------------

/// Per-GPU memory and communication of one strategy.
///
/// `epsilon_bytes` is only read for offloaded ZeRO-3 and must then be positive.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn cp_strategy_costs(
    strategy: CpStrategy,
    offload: bool,
    epsilon_bytes: u64,
    model_elements: u64,
    gpus: u64,
    aggregate_chunk_elements: u64,
    chunk_length: u64,
    precision: CpPrecision,
    out: *mut CpCostRow,
) -> CpStatus {
    guard(|| {
        non_null!(out);
        let inputs = CostInputs {
            model_elements,
            gpus,
            precision: try_cp!(precision.spec()),
            aggregate_chunk_elements,
            chunk_length,
        };
        let spec = StrategySpec {
            name: strategy.into(),
            offload,
            epsilon_bytes: (epsilon_bytes > 0).then_some(epsilon_bytes),
        };
        let row = try_cp!(cost_model::strategy_costs(&inputs, &spec));
        *out = CpCostRow {
            gpu_mem_per_gpu: row.gpu_mem_per_gpu,
            g2c_comm: row.g2c_comm,
            g2g_comm: row.g2g_comm,
        };
        CpStatus::Ok
    })
}

/// Normalized benefit of one more rCache block with `n` processes.
///
/// # Safety
/// `hw` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cp_benefit_i(
    hw: *const CpHardwareProfile,
    n: u32,
    chunk_length: u64,
    precision: CpPrecision,
    out: *mut f64,
) -> CpStatus {
    guard(|| {
        non_null!(hw, out);
        *out = try_cp!(search::benefit_i(
            n,
            chunk_length,
            &(*hw).0,
            try_cp!(precision.spec())
        ));
        CpStatus::Ok
    })
}

/// Normalized benefit of keeping one more chunk on GPU with `n` processes.
///
/// # Safety
/// `hw` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cp_benefit_j(
    hw: *const CpHardwareProfile,
    n: u32,
    chunk_length: u64,
    precision: CpPrecision,
    out: *mut f64,
) -> CpStatus {
    guard(|| {
        non_null!(hw, out);
        *out = try_cp!(search::benefit_j(
            n,
            chunk_length,
            &(*hw).0,
            try_cp!(precision.spec())
        ));
        CpStatus::Ok
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cp_allowed_memory(
    capacity_bytes: u64,
    buffer_bytes: u64,
    activation_bytes: u64,
    f_alloc: f64,
    f_frag: f64,
    out: *mut u64,
) -> CpStatus {
    guard(|| {
        non_null!(out);
        *out = try_cp!(search::allowed_memory(
            capacity_bytes,
            buffer_bytes,
            activation_bytes,
            f_alloc,
            f_frag
        ));
        CpStatus::Ok
    })
}
