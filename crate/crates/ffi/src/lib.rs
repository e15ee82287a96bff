//! C ABI for `hbar-sim`.
//!
//! Every function returns an [`HbarStatus`]; on failure a message is
//! available from [`hbar_last_error`] on the same thread. Objects are opaque
//! handles created by the library and released with the matching `_free`
//! function. Panics never cross the boundary.
//!
//! Pointer arguments are checked for null. Non-null pointers must be valid
//! for the access described by each function: handles come from this
//! library and are not used after being freed, strings are NUL-terminated,
//! and buffers hold at least the stated number of elements.

#![allow(clippy::not_unsafe_ptr_arg_deref)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use hbar_sim::cli::parse_device_config;
use hbar_sim::experiments::{
    chevron_scan, find_anticrossings, spectroscopy_sweep, transfer_experiment, EigencurveSet, ExperimentOptions,
    PopulationGrid,
};
use hbar_sim::pulses::{calibrate_swap, SwapTarget};
use hbar_sim::{reference_device, DeviceSpec, Error, QubitId};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HbarStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Validation = 4,
    OutOfRange = 5,
    Runtime = 6,
    Io = 7,
    Panic = 8,
}

/// A device description.
pub struct HbarDevice(DeviceSpec);

/// Excited-state populations on an offset × duration grid.
pub struct HbarGrid(PopulationGrid);

/// Eigenfrequencies along a spectroscopy sweep.
pub struct HbarEigencurves {
    set: EigencurveSet,
    anticrossings: Vec<[f64; 2]>,
}

/// Run options for the time-domain experiments.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct HbarOptions {
    /// Nonzero for the master equation with device losses.
    pub decoherence: i32,
    pub parallelism: u32,
    pub steps_per_cycle: f64,
    pub fsr_multiple: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> HbarStatus {
    match e {
        Error::Parse { .. } => HbarStatus::Parse,
        Error::OutOfRange { .. } => HbarStatus::OutOfRange,
        Error::Io(_) => HbarStatus::Io,
        Error::Job { source, .. } => status_of(source),
        e if e.is_input_error() => HbarStatus::Validation,
        _ => HbarStatus::Runtime,
    }
}

enum Fail {
    Null(&'static str),
    Arg(String),
    Sim(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Sim(e)
    }
}

fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> HbarStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            HbarStatus::Ok
        }
        Ok(Err(Fail::Null(name))) => {
            set_error(format!("`{name}` is null"));
            HbarStatus::NullPointer
        }
        Ok(Err(Fail::Arg(msg))) => {
            set_error(msg);
            HbarStatus::InvalidArgument
        }
        Ok(Err(Fail::Sim(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            HbarStatus::Panic
        }
    }
}

unsafe fn arg<'a, T>(p: *const T, name: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(name))
}

unsafe fn out<'a, T>(p: *mut T, name: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(name))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Arg(format!("`{name}` is not valid UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, name: &'static str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn qubit_arg(q: u32) -> Result<QubitId, Fail> {
    match q {
        1 => Ok(QubitId::Q1),
        2 => Ok(QubitId::Q2),
        _ => Err(Fail::Arg(format!("qubit must be 1 or 2, got {q}"))),
    }
}

fn options_arg(opts: *const HbarOptions) -> Result<ExperimentOptions, Fail> {
    let mut o = ExperimentOptions::default();
    if let Some(h) = unsafe { opts.as_ref() } {
        o.decoherence = h.decoherence != 0;
        o.parallelism = h.parallelism as usize;
        o.integrator.steps_per_cycle = h.steps_per_cycle;
        o.fsr_multiple = h.fsr_multiple;
    }
    o.integrator.validate()?;
    Ok(o)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hbar_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next library call on this thread.
#[no_mangle]
pub extern "C" fn hbar_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Defaults: decoherence on, one thread, 100 steps per cycle, ±2 FSR.
#[no_mangle]
pub extern "C" fn hbar_options_default() -> HbarOptions {
    let o = ExperimentOptions::default();
    HbarOptions {
        decoherence: 1,
        parallelism: o.parallelism as u32,
        steps_per_cycle: o.integrator.steps_per_cycle,
        fsr_multiple: o.fsr_multiple,
    }
}

#[no_mangle]
pub extern "C" fn hbar_device_reference(out_device: *mut *mut HbarDevice) -> HbarStatus {
    guard(|| {
        let slot = unsafe { out(out_device, "out_device")? };
        *slot = Box::into_raw(Box::new(HbarDevice(reference_device())));
        Ok(())
    })
}

/// Parses a JSON device document. With `lenient` nonzero unknown keys are
/// ignored instead of rejected.
#[no_mangle]
pub extern "C" fn hbar_device_from_json(
    json: *const c_char,
    lenient: i32,
    out_device: *mut *mut HbarDevice,
) -> HbarStatus {
    guard(|| {
        let text = unsafe { str_arg(json, "json")? };
        let slot = unsafe { out(out_device, "out_device")? };
        let (device, _) = parse_device_config(text.as_bytes(), lenient != 0)?;
        *slot = Box::into_raw(Box::new(HbarDevice(device)));
        Ok(())
    })
}

/// Serializes a device; release the string with [`hbar_string_free`].
#[no_mangle]
pub extern "C" fn hbar_device_to_json(device: *const HbarDevice, out_json: *mut *mut c_char) -> HbarStatus {
    guard(|| {
        let d = unsafe { arg(device, "device")? };
        let slot = unsafe { out(out_json, "out_json")? };
        let s = hbar_sim::cli::device_json(&d.0);
        *slot = CString::new(s).expect("json has no nul").into_raw();
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn hbar_device_free(device: *mut HbarDevice) {
    if !device.is_null() {
        drop(unsafe { Box::from_raw(device) });
    }
}

#[no_mangle]
pub extern "C" fn hbar_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Duration (µs) of a full swap of `qubit` with the mode `mode_label`, or
/// with the other qubit when `mode_label` is null.
#[no_mangle]
pub extern "C" fn hbar_calibrate_swap(
    device: *const HbarDevice,
    qubit: u32,
    mode_label: *const c_char,
    out_duration_us: *mut f64,
) -> HbarStatus {
    guard(|| {
        let d = unsafe { arg(device, "device")? };
        let q = qubit_arg(qubit)?;
        let target = if mode_label.is_null() {
            SwapTarget::Qubit
        } else {
            SwapTarget::Mode(unsafe { str_arg(mode_label, "mode_label")? }.to_string())
        };
        let slot = unsafe { out(out_duration_us, "out_duration_us")? };
        *slot = calibrate_swap(&d.0, q, &target)?;
        Ok(())
    })
}

/// Chevron scan of `qubit`. `options` may be null for the defaults.
#[no_mangle]
pub extern "C" fn hbar_chevron(
    device: *const HbarDevice,
    qubit: u32,
    offsets_mhz: *const f64,
    n_offsets: usize,
    durations_us: *const f64,
    n_durations: usize,
    options: *const HbarOptions,
    out_grid: *mut *mut HbarGrid,
) -> HbarStatus {
    guard(|| {
        let d = unsafe { arg(device, "device")? };
        let q = qubit_arg(qubit)?;
        let offsets = unsafe { slice_arg(offsets_mhz, n_offsets, "offsets_mhz")? };
        let durations = unsafe { slice_arg(durations_us, n_durations, "durations_us")? };
        let opts = options_arg(options)?;
        let slot = unsafe { out(out_grid, "out_grid")? };
        let g = chevron_scan(&d.0, q, offsets, durations, &opts)?;
        *slot = Box::into_raw(Box::new(HbarGrid(g)));
        Ok(())
    })
}

/// Swap transfer through `mode_label` (null for the default transfer mode)
/// followed by a chevron on qubit 2.
#[no_mangle]
pub extern "C" fn hbar_transfer(
    device: *const HbarDevice,
    mode_label: *const c_char,
    offsets_mhz: *const f64,
    n_offsets: usize,
    durations_us: *const f64,
    n_durations: usize,
    options: *const HbarOptions,
    out_grid: *mut *mut HbarGrid,
) -> HbarStatus {
    guard(|| {
        let d = unsafe { arg(device, "device")? };
        let mode = if mode_label.is_null() {
            None
        } else {
            Some(unsafe { str_arg(mode_label, "mode_label")? })
        };
        let offsets = unsafe { slice_arg(offsets_mhz, n_offsets, "offsets_mhz")? };
        let durations = unsafe { slice_arg(durations_us, n_durations, "durations_us")? };
        let opts = options_arg(options)?;
        let slot = unsafe { out(out_grid, "out_grid")? };
        let g = transfer_experiment(&d.0, mode, offsets, durations, &opts)?;
        *slot = Box::into_raw(Box::new(HbarGrid(g)));
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn hbar_grid_shape(grid: *const HbarGrid, out_offsets: *mut usize, out_durations: *mut usize) -> HbarStatus {
    guard(|| {
        let g = unsafe { arg(grid, "grid")? };
        let (r, c) = g.0.shape();
        *unsafe { out(out_offsets, "out_offsets")? } = r;
        *unsafe { out(out_durations, "out_durations")? } = c;
        Ok(())
    })
}

/// Copies the populations row-major (offset-major) into `buffer`, which must
/// hold `n_offsets * n_durations` values.
#[no_mangle]
pub extern "C" fn hbar_grid_values(grid: *const HbarGrid, buffer: *mut f64, len: usize) -> HbarStatus {
    guard(|| {
        let g = unsafe { arg(grid, "grid")? };
        let (r, c) = g.0.shape();
        if len != r * c {
            return Err(Fail::Arg(format!("buffer holds {len} values, grid has {}", r * c)));
        }
        if buffer.is_null() {
            return Err(Fail::Null("buffer"));
        }
        let dst = unsafe { std::slice::from_raw_parts_mut(buffer, len) };
        for (chunk, row) in dst.chunks_mut(c.max(1)).zip(&g.0.values) {
            chunk.copy_from_slice(row);
        }
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn hbar_grid_get(
    grid: *const HbarGrid,
    offset_index: usize,
    duration_index: usize,
    out_value: *mut f64,
) -> HbarStatus {
    guard(|| {
        let g = unsafe { arg(grid, "grid")? };
        let v = g
            .0
            .values
            .get(offset_index)
            .and_then(|row| row.get(duration_index))
            .ok_or_else(|| Fail::Arg(format!("index ({offset_index}, {duration_index}) out of bounds")))?;
        *unsafe { out(out_value, "out_value")? } = *v;
        Ok(())
    })
}

/// Writes the grid as CSV; release the string with [`hbar_string_free`].
#[no_mangle]
pub extern "C" fn hbar_grid_to_csv(grid: *const HbarGrid, out_csv: *mut *mut c_char) -> HbarStatus {
    guard(|| {
        let g = unsafe { arg(grid, "grid")? };
        let slot = unsafe { out(out_csv, "out_csv")? };
        *slot = CString::new(hbar_sim::cli::grid_csv(&g.0)).expect("csv has no nul").into_raw();
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn hbar_grid_free(grid: *mut HbarGrid) {
    if !grid.is_null() {
        drop(unsafe { Box::from_raw(grid) });
    }
}

/// Sweeps `qubit` over `n_points` frequencies in `[lo_ghz, hi_ghz]`.
#[no_mangle]
pub extern "C" fn hbar_spectroscopy(
    device: *const HbarDevice,
    qubit: u32,
    lo_ghz: f64,
    hi_ghz: f64,
    n_points: usize,
    out_curves: *mut *mut HbarEigencurves,
) -> HbarStatus {
    guard(|| {
        let d = unsafe { arg(device, "device")? };
        let q = qubit_arg(qubit)?;
        let slot = unsafe { out(out_curves, "out_curves")? };
        let set = spectroscopy_sweep(&d.0, q, (lo_ghz, hi_ghz), n_points)?;
        let anticrossings = find_anticrossings(&d.0, &set)
            .into_iter()
            .map(|a| [a.swept_freq_ghz, a.gap_mhz])
            .collect();
        *slot = Box::into_raw(Box::new(HbarEigencurves { set, anticrossings }));
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn hbar_eigencurves_shape(
    curves: *const HbarEigencurves,
    out_points: *mut usize,
    out_levels: *mut usize,
) -> HbarStatus {
    guard(|| {
        let c = unsafe { arg(curves, "curves")? };
        *unsafe { out(out_points, "out_points")? } = c.set.swept_freqs_ghz.len();
        *unsafe { out(out_levels, "out_levels")? } = c.set.eigenfreqs_ghz.first().map_or(0, Vec::len);
        Ok(())
    })
}

/// Copies the lab-frame eigenfrequencies (GHz, ascending per point) row-major
/// into `buffer` of `points * levels` values.
#[no_mangle]
pub extern "C" fn hbar_eigencurves_values(curves: *const HbarEigencurves, buffer: *mut f64, len: usize) -> HbarStatus {
    guard(|| {
        let c = unsafe { arg(curves, "curves")? };
        let total: usize = c.set.eigenfreqs_ghz.iter().map(Vec::len).sum();
        if len != total {
            return Err(Fail::Arg(format!("buffer holds {len} values, curves have {total}")));
        }
        if buffer.is_null() {
            return Err(Fail::Null("buffer"));
        }
        let dst = unsafe { std::slice::from_raw_parts_mut(buffer, len) };
        for (d, v) in dst.iter_mut().zip(c.set.eigenfreqs_ghz.iter().flatten()) {
            *d = *v;
        }
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn hbar_eigencurves_anticrossing_count(curves: *const HbarEigencurves, out_count: *mut usize) -> HbarStatus {
    guard(|| {
        let c = unsafe { arg(curves, "curves")? };
        *unsafe { out(out_count, "out_count")? } = c.anticrossings.len();
        Ok(())
    })
}

/// Position (GHz) and splitting (MHz) of anticrossing `index`.
#[no_mangle]
pub extern "C" fn hbar_eigencurves_anticrossing(
    curves: *const HbarEigencurves,
    index: usize,
    out_freq_ghz: *mut f64,
    out_gap_mhz: *mut f64,
) -> HbarStatus {
    guard(|| {
        let c = unsafe { arg(curves, "curves")? };
        let [f, g] = *c
            .anticrossings
            .get(index)
            .ok_or_else(|| Fail::Arg(format!("anticrossing {index} out of bounds")))?;
        *unsafe { out(out_freq_ghz, "out_freq_ghz")? } = f;
        *unsafe { out(out_gap_mhz, "out_gap_mhz")? } = g;
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn hbar_eigencurves_free(curves: *mut HbarEigencurves) {
    if !curves.is_null() {
        drop(unsafe { Box::from_raw(curves) });
    }
}
