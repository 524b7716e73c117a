//! C ABI over the emulator.
//!
//! Every fallible function returns an [`LmStatus`]; on failure the message
//! is available from [`lm_last_error_message`] on the same thread until the
//! next failing call. Strings returned by the library are freed with
//! [`lm_string_free`], machines with [`lm_machine_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use looped_mlp::asm::{assemble_and_resolve, LoadedProgram};
use looped_mlp::emulator::{core_for, Backend, Emulator};
use looped_mlp::ir::{counted_layers, export_weights};
use looped_mlp::machine::{build_subleq_core, MachineConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Assembly = 4,
    Config = 5,
    Runtime = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LmBackend {
    Mlp = 0,
    MlpLowered = 1,
    Oracle = 2,
}

/// Opaque machine handle.
pub struct LmMachine {
    emulator: Emulator,
    program: LoadedProgram,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).expect("NULs removed"));
}

struct Failure(LmStatus, String);

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LmStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            LmStatus::Panic
        }
    }
}

fn fail<E: std::fmt::Display>(status: LmStatus) -> impl FnOnce(E) -> Failure {
    move |e| Failure(status, e.to_string())
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(LmStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

fn config(w: usize, d: usize, k: usize, m: usize) -> Result<MachineConfig, Failure> {
    MachineConfig::new(w, d, k, m).map_err(fail(LmStatus::Config))
}

fn backend(raw: u32) -> Result<Backend, Failure> {
    match raw {
        x if x == LmBackend::Mlp as u32 => Ok(Backend::Mlp),
        x if x == LmBackend::MlpLowered as u32 => Ok(Backend::MlpLowered),
        x if x == LmBackend::Oracle as u32 => Ok(Backend::Oracle),
        _ => Err(Failure(
            LmStatus::InvalidArgument,
            format!("unknown backend {raw}"),
        )),
    }
}

/// Message for the last failure on this thread; empty if none. Valid until
/// the next failing call on this thread.
#[no_mangle]
pub extern "C" fn lm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Assembles `source` (NUL-terminated) and loads it. `backend_id` is an
/// [`LmBackend`] value.
///
/// # Safety
/// `source` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lm_machine_new(
    source: *const c_char,
    w: usize,
    d: usize,
    k: usize,
    m: usize,
    backend_id: u32,
    out: *mut *mut LmMachine,
) -> LmStatus {
    guard(|| {
        non_null(source, "source")?;
        non_null(out, "out")?;
        let text = CStr::from_ptr(source)
            .to_str()
            .map_err(fail(LmStatus::InvalidUtf8))?;
        let cfg = config(w, d, k, m)?;
        let backend = backend(backend_id)?;
        let program = assemble_and_resolve(text, &cfg).map_err(fail(LmStatus::Assembly))?;
        let image = program.image().map_err(fail(LmStatus::Assembly))?;
        let emulator = Emulator::new(&image, backend).map_err(fail(LmStatus::Runtime))?;
        *out = Box::into_raw(Box::new(LmMachine { emulator, program }));
        Ok(())
    })
}

/// One iteration. `halted` (optional) receives 1 if the PC is now at EOF.
///
/// # Safety
/// `machine` must come from [`lm_machine_new`]; `halted` may be null.
#[no_mangle]
pub unsafe extern "C" fn lm_machine_step(machine: *mut LmMachine, halted: *mut i32) -> LmStatus {
    guard(|| {
        non_null(machine, "machine")?;
        let r = (*machine)
            .emulator
            .step()
            .map_err(fail(LmStatus::Runtime))?;
        if !halted.is_null() {
            *halted = r.halted as i32;
        }
        Ok(())
    })
}

/// Runs until halted or `max_iters` iterations. Both out-pointers are optional.
///
/// # Safety
/// `machine` must come from [`lm_machine_new`].
#[no_mangle]
pub unsafe extern "C" fn lm_machine_run(
    machine: *mut LmMachine,
    max_iters: u64,
    iterations: *mut u64,
    halted: *mut i32,
) -> LmStatus {
    guard(|| {
        non_null(machine, "machine")?;
        let (_, trace) = (*machine)
            .emulator
            .run(max_iters)
            .map_err(fail(LmStatus::Runtime))?;
        if !iterations.is_null() {
            *iterations = trace.len() as u64;
        }
        if !halted.is_null() {
            *halted = trace.last().is_some_and(|r| r.halted) as i32;
        }
        Ok(())
    })
}

/// Value of data slot `slot`.
///
/// # Safety
/// `machine` must come from [`lm_machine_new`] and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn lm_machine_read_word(
    machine: *const LmMachine,
    slot: usize,
    out: *mut i64,
) -> LmStatus {
    guard(|| {
        non_null(machine, "machine")?;
        non_null(out, "out")?;
        *out = (*machine)
            .emulator
            .word(slot)
            .map_err(fail(LmStatus::InvalidArgument))?;
        Ok(())
    })
}

/// Value of the data slot declared as `name`.
///
/// # Safety
/// `machine` must come from [`lm_machine_new`], `name` be a C string and
/// `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn lm_machine_read_symbol(
    machine: *const LmMachine,
    name: *const c_char,
    out: *mut i64,
) -> LmStatus {
    guard(|| {
        non_null(machine, "machine")?;
        non_null(name, "name")?;
        non_null(out, "out")?;
        let name = CStr::from_ptr(name)
            .to_str()
            .map_err(fail(LmStatus::InvalidUtf8))?;
        let m = &*machine;
        let slot = m
            .program
            .slot_of(name)
            .ok_or_else(|| Failure(LmStatus::InvalidArgument, format!("no data named `{name}`")))?;
        *out = m.emulator.word(slot).map_err(fail(LmStatus::Runtime))?;
        Ok(())
    })
}

/// Current program counter (a unified slot index).
///
/// # Safety
/// `machine` must come from [`lm_machine_new`] and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn lm_machine_pc(machine: *const LmMachine, out: *mut usize) -> LmStatus {
    guard(|| {
        non_null(machine, "machine")?;
        non_null(out, "out")?;
        *out = (*machine).emulator.pc().map_err(fail(LmStatus::Runtime))?;
        Ok(())
    })
}

/// # Safety
/// `machine` must come from [`lm_machine_new`] and not be used afterwards.
/// Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn lm_machine_free(machine: *mut LmMachine) {
    if !machine.is_null() {
        drop(Box::from_raw(machine));
    }
}

/// Counted layers of the SUBLEQ core at this configuration.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lm_core_counted_layers(
    w: usize,
    d: usize,
    k: usize,
    m: usize,
    out: *mut u32,
) -> LmStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = counted_layers(&build_subleq_core(&config(w, d, k, m)?));
        Ok(())
    })
}

/// The core's weights as a JSON document, NUL-terminated; free with
/// [`lm_string_free`]. Nonzero `lowered` lowers gates first.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lm_core_export_weights(
    w: usize,
    d: usize,
    k: usize,
    m: usize,
    lowered: i32,
    out: *mut *mut c_char,
) -> LmStatus {
    guard(|| {
        non_null(out, "out")?;
        let backend = if lowered != 0 {
            Backend::MlpLowered
        } else {
            Backend::Mlp
        };
        let core = core_for(&config(w, d, k, m)?, backend)
            .map_err(fail(LmStatus::Runtime))?
            .expect("network backend");
        let json = CString::new(export_weights(&core)).map_err(fail(LmStatus::Runtime))?;
        *out = json.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn lm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
