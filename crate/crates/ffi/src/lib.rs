//! C ABI over the signal-control environment and trained Q-network policies.
//!
//! Every function returns a [`DsStatus`]. On failure the message is kept per
//! thread and can be copied out with [`ds_last_error`]. Handles are opaque and
//! must be released with their `_free` function. Panics never cross the
//! boundary; they surface as [`DsStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use deepsignal::controllers::drl_policy_step;
use deepsignal::dqn::network::QNetwork;
use deepsignal::dqn::Checkpoint;
use deepsignal::env::{EnvConfig, Environment};
use deepsignal::signal::{Action, NUM_ACTIONS};
use deepsignal::sim::NUM_APPROACHES;
use deepsignal::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    RuleViolation = 4,
    Io = 5,
    ShapeMismatch = 6,
    BufferTooSmall = 7,
    Panic = 8,
    Internal = 9,
}

/// Opaque simulation environment.
pub struct DsEnv {
    inner: Environment,
}

/// Opaque greedy policy backed by a checkpointed Q-network.
pub struct DsPolicy {
    network: QNetwork,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> DsStatus {
    match e {
        Error::RuleViolation { .. } | Error::SafetyViolation { .. } => DsStatus::RuleViolation,
        Error::Config(_) | Error::UnsupportedSize(_) | Error::Oversaturated(_) | Error::UnknownApproach(_) => {
            DsStatus::Config
        }
        Error::Io(_) => DsStatus::Io,
        Error::Json(_) => DsStatus::Config,
        Error::ShapeMismatch(_) => DsStatus::ShapeMismatch,
        Error::NonFiniteLoss { .. } | Error::Csv(_) => DsStatus::Internal,
    }
}

fn fail(status: DsStatus, msg: impl Into<String>) -> DsStatus {
    set_error(msg);
    status
}

/// Runs `f`, recording errors and converting panics.
fn guard(f: impl FnOnce() -> Result<(), DsStatus>) -> DsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DsStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(DsStatus::Panic, format!("panic: {msg}"))
        }
    }
}

fn lift<T>(r: deepsignal::Result<T>) -> Result<T, DsStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, DsStatus> {
    if p.is_null() {
        return Err(fail(DsStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(DsStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn mut_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, DsStatus> {
    p.as_mut().ok_or_else(|| fail(DsStatus::NullPointer, format!("{what} is null")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, DsStatus> {
    p.as_ref().ok_or_else(|| fail(DsStatus::NullPointer, format!("{what} is null")))
}

/// Copies the calling thread's last error message into `buf` as a
/// NUL-terminated string, truncating to `len - 1` bytes. Returns the full
/// message length in bytes, excluding the terminator.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ds_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Creates an environment. `config_json` holds an environment config object
/// (fields may be omitted to take defaults) and may be null for all defaults.
///
/// # Safety
/// `config_json` must be null or a NUL-terminated string; `out` must be a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ds_env_new(config_json: *const c_char, seed: u64, out: *mut *mut DsEnv) -> DsStatus {
    guard(|| {
        let out = mut_arg(out, "out")?;
        *out = std::ptr::null_mut();
        let cfg: EnvConfig = if config_json.is_null() {
            EnvConfig::default()
        } else {
            let text = str_arg(config_json, "config_json")?;
            serde_json::from_str(text).map_err(|e| fail(DsStatus::Config, format!("config: {e}")))?
        };
        let inner = lift(Environment::new(cfg, seed, true))?;
        *out = Box::into_raw(Box::new(DsEnv { inner }));
        Ok(())
    })
}

/// Releases an environment. Null is ignored.
///
/// # Safety
/// `env` must come from [`ds_env_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ds_env_free(env: *mut DsEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Applies `action` (0 = do nothing, 1..4 = advance ring 1, ring 2, both,
/// to barrier) and simulates one second. The reward is written to
/// `reward_out` when it is non-null.
///
/// # Safety
/// `env` must be a live handle; `reward_out` null or valid.
#[no_mangle]
pub unsafe extern "C" fn ds_env_step(env: *mut DsEnv, action: u32, reward_out: *mut f64) -> DsStatus {
    guard(|| {
        let env = mut_arg(env, "env")?;
        let a = Action::from_index(action as usize)
            .ok_or_else(|| fail(DsStatus::InvalidArgument, format!("action {action} out of range")))?;
        let report = lift(env.inner.step(a, 0))?;
        if let Some(r) = reward_out.as_mut() {
            *r = report.reward;
        }
        Ok(())
    })
}

/// Writes the rule checker's verdict for each of the five actions (1 = valid).
///
/// # Safety
/// `env` must be a live handle; `mask_out` must hold 5 bytes.
#[no_mangle]
pub unsafe extern "C" fn ds_env_valid_actions(env: *const DsEnv, mask_out: *mut u8) -> DsStatus {
    guard(|| {
        let env = ref_arg(env, "env")?;
        if mask_out.is_null() {
            return Err(fail(DsStatus::NullPointer, "mask_out is null"));
        }
        let out = std::slice::from_raw_parts_mut(mask_out, NUM_ACTIONS);
        for (o, v) in out.iter_mut().zip(env.inner.mask()) {
            *o = v as u8;
        }
        Ok(())
    })
}

/// Writes the current queue length of each approach (NB, SB, EB, WB).
///
/// # Safety
/// `env` must be a live handle; `queues_out` must hold 4 values.
#[no_mangle]
pub unsafe extern "C" fn ds_env_queues(env: *const DsEnv, queues_out: *mut u32) -> DsStatus {
    guard(|| {
        let env = ref_arg(env, "env")?;
        if queues_out.is_null() {
            return Err(fail(DsStatus::NullPointer, "queues_out is null"));
        }
        std::slice::from_raw_parts_mut(queues_out, NUM_APPROACHES).copy_from_slice(&env.inner.simulator().queue_lengths());
        Ok(())
    })
}

/// Simulated seconds since the environment was created.
///
/// # Safety
/// `env` must be a live handle; `t_out` valid.
#[no_mangle]
pub unsafe extern "C" fn ds_env_time(env: *const DsEnv, t_out: *mut u64) -> DsStatus {
    guard(|| {
        let env = ref_arg(env, "env")?;
        *mut_arg(t_out, "t_out")? = env.inner.time();
        Ok(())
    })
}

/// Copies the stacked state (4 frames, oldest first, each `size * size`
/// cells row-major, one byte per cell holding 0 or 1). `needed_out`, when
/// non-null, receives the required length; a short buffer fails with
/// [`DsStatus::BufferTooSmall`] without writing.
///
/// # Safety
/// `env` must be a live handle; `buf` must hold `len` bytes when non-null.
#[no_mangle]
pub unsafe extern "C" fn ds_env_observation(
    env: *const DsEnv,
    buf: *mut u8,
    len: usize,
    needed_out: *mut usize,
) -> DsStatus {
    guard(|| {
        let env = ref_arg(env, "env")?;
        let frames = env.inner.frames().expect("ffi environments always encode frames");
        let dense = frames.to_dense();
        if let Some(n) = needed_out.as_mut() {
            *n = dense.len();
        }
        if buf.is_null() || len < dense.len() {
            return Err(fail(DsStatus::BufferTooSmall, format!("observation needs {} bytes, got {len}", dense.len())));
        }
        let out = std::slice::from_raw_parts_mut(buf, dense.len());
        for (o, v) in out.iter_mut().zip(dense) {
            *o = (v != 0.0) as u8;
        }
        Ok(())
    })
}

/// Loads a checkpoint written by the trainer.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ds_policy_load(path: *const c_char, out: *mut *mut DsPolicy) -> DsStatus {
    guard(|| {
        let out = mut_arg(out, "out")?;
        *out = std::ptr::null_mut();
        let path = str_arg(path, "path")?;
        let ck = lift(Checkpoint::load(Path::new(path)))?;
        let network = lift(ck.network())?;
        *out = Box::into_raw(Box::new(DsPolicy { network }));
        Ok(())
    })
}

/// Releases a policy. Null is ignored.
///
/// # Safety
/// `policy` must come from [`ds_policy_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ds_policy_free(policy: *mut DsPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Writes the five Q-values for the environment's current state.
///
/// # Safety
/// Both handles must be live; `q_out` must hold 5 values.
#[no_mangle]
pub unsafe extern "C" fn ds_policy_q_values(policy: *const DsPolicy, env: *const DsEnv, q_out: *mut f64) -> DsStatus {
    guard(|| {
        let policy = ref_arg(policy, "policy")?;
        let env = ref_arg(env, "env")?;
        if q_out.is_null() {
            return Err(fail(DsStatus::NullPointer, "q_out is null"));
        }
        let frames = env.inner.frames().expect("ffi environments always encode frames");
        let q = lift(policy.network.forward_stack(frames))?;
        std::slice::from_raw_parts_mut(q_out, NUM_ACTIONS).copy_from_slice(&q);
        Ok(())
    })
}

/// Greedy valid action for the environment's current state.
///
/// # Safety
/// Both handles must be live; `action_out` valid.
#[no_mangle]
pub unsafe extern "C" fn ds_policy_act(policy: *const DsPolicy, env: *const DsEnv, action_out: *mut u32) -> DsStatus {
    guard(|| {
        let policy = ref_arg(policy, "policy")?;
        let env = ref_arg(env, "env")?;
        let out = mut_arg(action_out, "action_out")?;
        let frames = env.inner.frames().expect("ffi environments always encode frames");
        let a = lift(drl_policy_step(&policy.network, frames, &env.inner.mask()))?;
        *out = a.index() as u32;
        Ok(())
    })
}
