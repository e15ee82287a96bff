//! Command-line front end: device configuration ingestion, CSV writers and
//! run manifests.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::dynamics::{Method, Trajectory};
use crate::error::{Error, Result};
use crate::experiments::{
    chevron_scan, find_anticrossings, locality_test, spectroscopy_sweep, transfer_experiment, Anticrossing,
    EigencurveSet, ExperimentOptions, PopulationGrid, SpaceChoice,
};
use crate::model::{reference_device, DeviceSpec, QubitId, TruncationReport};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

const QUBIT_KEYS: &[&str] = &["label", "omega_op_ghz", "tune_min_ghz", "tune_max_ghz", "t1_us", "t2_us"];
const MODE_KEYS: &[&str] = &["label", "omega_ghz", "two_g_mhz", "t1_us"];
const DEVICE_KEYS: &[&str] = &[
    "qubit1",
    "qubit2",
    "modes1",
    "modes2",
    "qq_two_g_mhz",
    "frame_freq_ghz",
    "fock_dim",
    "cross_two_g_mhz",
];

/// `t2_us` → `T2`, `omega_op_ghz` → `omega_op`.
fn display_key(key: &str) -> String {
    let base = ["_ghz", "_mhz", "_us"]
        .iter()
        .find_map(|s| key.strip_suffix(s))
        .unwrap_or(key);
    match base {
        "t1" => "T1".into(),
        "t2" => "T2".into(),
        b => b.into(),
    }
}

fn check_object(
    value: &mut Value,
    path: &str,
    known: &[&str],
    required: &[&str],
    lenient: bool,
    warnings: &mut Vec<String>,
) -> Result<()> {
    let field = if path.is_empty() { "device" } else { path };
    let obj = value
        .as_object_mut()
        .ok_or_else(|| Error::validation(field, "expected an object"))?;
    let unknown: Vec<String> = obj.keys().filter(|k| !known.contains(&k.as_str())).cloned().collect();
    for k in unknown {
        let name = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
        if !lenient {
            return Err(Error::validation(name, "unknown key"));
        }
        warnings.push(format!("ignored unknown key `{name}`"));
        obj.remove(&k);
    }
    for k in required {
        if !obj.contains_key(*k) {
            let name = if path.is_empty() {
                display_key(k)
            } else {
                format!("{path}.{}", display_key(k))
            };
            return Err(Error::validation(name, "missing"));
        }
    }
    Ok(())
}

fn apply_defaults(obj: &mut Map<String, Value>) {
    for ladder in ["modes1", "modes2"] {
        obj.entry(ladder).or_insert_with(|| Value::Array(vec![]));
    }
    obj.entry("fock_dim").or_insert_with(|| Value::from(2));
    obj.entry("cross_two_g_mhz").or_insert_with(|| Value::from(0.0));
    if !obj.contains_key("frame_freq_ghz") {
        if let Some(f) = obj.get("qubit1").and_then(|q| q.get("omega_op_ghz")).cloned() {
            obj.insert("frame_freq_ghz".into(), f);
        }
    }
}

/// Parses and validates a JSON device document. Unknown keys are errors
/// unless `lenient`, in which case they are dropped with a warning. Omitted
/// ladders default to empty, `fock_dim` to 2, `cross_two_g_mhz` to 0 and
/// `frame_freq_ghz` to qubit 1's operating point.
///
/// Returns the device and the accumulated warnings.
pub fn parse_device_config(document: &[u8], lenient: bool) -> Result<(DeviceSpec, Vec<String>)> {
    let mut value: Value = serde_json::from_slice(document).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let mut warnings = Vec::new();
    check_object(&mut value, "", DEVICE_KEYS, &["qubit1", "qubit2", "qq_two_g_mhz"], lenient, &mut warnings)?;
    let obj = value.as_object_mut().expect("checked");
    for q in ["qubit1", "qubit2"] {
        check_object(obj.get_mut(q).expect("checked"), q, QUBIT_KEYS, QUBIT_KEYS, lenient, &mut warnings)?;
    }
    apply_defaults(obj);
    for ladder in ["modes1", "modes2"] {
        let arr = obj
            .get_mut(ladder)
            .and_then(Value::as_array_mut)
            .ok_or_else(|| Error::validation(ladder, "expected an array"))?;
        for (i, m) in arr.iter_mut().enumerate() {
            check_object(m, &format!("{ladder}[{i}]"), MODE_KEYS, MODE_KEYS, lenient, &mut warnings)?;
        }
    }
    let device: DeviceSpec = serde_json::from_value(value).map_err(|e| Error::validation("device", e.to_string()))?;
    warnings.extend(device.validate()?);
    Ok((device, warnings))
}

/// Pretty JSON document for `device`, accepted by [`parse_device_config`].
pub fn device_json(device: &DeviceSpec) -> String {
    serde_json::to_string_pretty(device).expect("device serializes") + "\n"
}

/// Formats `x` with nine significant digits, without trailing zeros.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let m = if mantissa.contains('.') {
            mantissa.trim_end_matches('0').trim_end_matches('.')
        } else {
            mantissa
        };
        format!("{m}e{exp}")
    }
}

/// Chevron-style CSV: one row per duration, one column per offset.
pub fn grid_csv(grid: &PopulationGrid) -> String {
    let mut s = String::from("duration_us");
    for o in &grid.offsets_mhz {
        write!(s, ",offset_MHz={}", format_sig9(*o)).expect("string write");
    }
    s.push('\n');
    for (j, d) in grid.durations_us.iter().enumerate() {
        s.push_str(&format_sig9(*d));
        for row in &grid.values {
            s.push(',');
            s.push_str(&format_sig9(row[j]));
        }
        s.push('\n');
    }
    s
}

pub fn eigencurves_csv(set: &EigencurveSet) -> String {
    let n = set.eigenfreqs_ghz.first().map_or(0, Vec::len);
    let mut s = String::from("swept_freq_ghz");
    for k in 0..n {
        write!(s, ",eigenfreq_{k}_ghz").expect("string write");
    }
    for k in 0..n {
        write!(s, ",qubit_weight_{k}").expect("string write");
    }
    s.push('\n');
    for (i, f) in set.swept_freqs_ghz.iter().enumerate() {
        s.push_str(&format_sig9(*f));
        for v in set.eigenfreqs_ghz[i].iter().chain(&set.qubit_weights[i]) {
            s.push(',');
            s.push_str(&format_sig9(*v));
        }
        s.push('\n');
    }
    s
}

pub fn trajectory_csv(traj: &Trajectory) -> String {
    let mut s = String::from("time_us");
    for label in traj.observables.keys() {
        write!(s, ",{label}").expect("string write");
    }
    s.push('\n');
    for (i, t) in traj.times.iter().enumerate() {
        s.push_str(&format_sig9(*t));
        for v in traj.observables.values() {
            s.push(',');
            s.push_str(&format_sig9(v[i]));
        }
        s.push('\n');
    }
    s
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn write_grid(grid: &PopulationGrid, path: &Path) -> Result<()> {
    write_atomic(path, grid_csv(grid).as_bytes())
}

/// `start:stop:n`, inclusive of both ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinRange {
    pub start: f64,
    pub stop: f64,
    pub n: usize,
}

impl LinRange {
    pub fn values(&self) -> Vec<f64> {
        match self.n {
            0 => vec![],
            1 => vec![self.start],
            n => (0..n)
                .map(|k| self.start + (self.stop - self.start) * k as f64 / (n - 1) as f64)
                .collect(),
        }
    }
}

impl FromStr for LinRange {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let [a, b, n] = parts[..] else {
            return Err(format!("expected start:stop:n, got `{s}`"));
        };
        let num = |x: &str| {
            x.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("invalid number `{x}`"))
        };
        let n: usize = n.trim().parse().map_err(|_| format!("invalid count `{n}`"))?;
        if n == 0 {
            return Err("count must be ≥ 1".into());
        }
        Ok(Self {
            start: num(a)?,
            stop: num(b)?,
            n,
        })
    }
}

/// A fully specified experiment; stored in manifests for replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "snake_case", deny_unknown_fields)]
pub enum Request {
    Spectroscopy {
        qubit: QubitId,
        freqs_ghz: LinRange,
    },
    Chevron {
        qubit: QubitId,
        offsets_mhz: LinRange,
        durations_us: LinRange,
    },
    Transfer {
        mode: Option<String>,
        offsets_mhz: LinRange,
        durations_us: LinRange,
    },
    Locality {
        cross_two_g_mhz: f64,
    },
}

impl Request {
    pub fn name(&self) -> &'static str {
        match self {
            Request::Spectroscopy { .. } => "spectroscopy",
            Request::Chevron { .. } => "chevron",
            Request::Transfer { .. } => "transfer",
            Request::Locality { .. } => "locality",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RunResults {
    Anticrossings { anticrossings: Vec<Anticrossing> },
    None {},
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub device_hash: String,
    pub args: Vec<String>,
    pub request: Request,
    pub options: ExperimentOptions,
    pub truncation: Option<TruncationReport>,
    pub warnings: Vec<String>,
    pub wall_clock_s: f64,
    pub outputs: Vec<String>,
    pub results: RunResults,
    pub device: DeviceSpec,
}

/// Runs `request` and writes `<experiment>.csv` and
/// `<experiment>.manifest.json` into `out_dir`.
pub fn run_request(
    request: &Request,
    device: &DeviceSpec,
    options: &ExperimentOptions,
    warnings: Vec<String>,
    args: Vec<String>,
    out_dir: &Path,
) -> Result<RunManifest> {
    let started = Instant::now();
    std::fs::create_dir_all(out_dir)?;
    let mut truncation = None;
    let mut results = RunResults::None {};
    let csv = match request {
        Request::Spectroscopy { qubit, freqs_ghz } => {
            let set = spectroscopy_sweep(device, *qubit, (freqs_ghz.start, freqs_ghz.stop), freqs_ghz.n)?;
            results = RunResults::Anticrossings {
                anticrossings: find_anticrossings(device, &set),
            };
            eigencurves_csv(&set)
        }
        Request::Chevron {
            qubit,
            offsets_mhz,
            durations_us,
        } => {
            let g = chevron_scan(device, *qubit, &offsets_mhz.values(), &durations_us.values(), options)?;
            truncation = Some(g.meta.truncation.clone());
            grid_csv(&g)
        }
        Request::Transfer {
            mode,
            offsets_mhz,
            durations_us,
        } => {
            let g = transfer_experiment(
                device,
                mode.as_deref(),
                &offsets_mhz.values(),
                &durations_us.values(),
                options,
            )?;
            truncation = Some(g.meta.truncation.clone());
            grid_csv(&g)
        }
        Request::Locality { cross_two_g_mhz } => trajectory_csv(&locality_test(device, *cross_two_g_mhz, options)?),
    };
    let name = request.name();
    let csv_name = format!("{name}.csv");
    write_atomic(&out_dir.join(&csv_name), csv.as_bytes())?;
    let manifest = RunManifest {
        tool_version: TOOL_VERSION.into(),
        device_hash: device.hash(),
        args,
        request: request.clone(),
        options: options.clone(),
        truncation,
        warnings,
        wall_clock_s: started.elapsed().as_secs_f64(),
        outputs: vec![csv_name],
        results,
        device: device.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write_atomic(&out_dir.join(format!("{name}.manifest.json")), json.as_bytes())?;
    Ok(manifest)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum IntegratorArg {
    Rk4,
    Adaptive45,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SpaceArg {
    Auto,
    Full,
    Subspace,
}

fn parse_qubit(s: &str) -> std::result::Result<QubitId, String> {
    match s {
        "1" => Ok(QubitId::Q1),
        "2" => Ok(QubitId::Q2),
        _ => Err(format!("expected 1 or 2, got `{s}`")),
    }
}

#[derive(Debug, Args)]
struct DeviceArgs {
    /// Device JSON; the built-in reference device when omitted.
    #[arg(long)]
    device: Option<PathBuf>,
    /// Drop unknown keys with a warning instead of failing.
    #[arg(long)]
    lenient: bool,
    #[arg(long)]
    fock_dim: Option<usize>,
    /// Rotating-frame frequency, GHz.
    #[arg(long)]
    frame_freq: Option<f64>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "on")]
    decoherence: OnOff,
    #[arg(long, default_value_t = 1)]
    parallelism: usize,
    #[arg(long, value_enum, default_value = "rk4")]
    integrator: IntegratorArg,
    #[arg(long)]
    steps_per_cycle: Option<f64>,
    /// Half-width of the kept mode window, in mode spacings.
    #[arg(long, default_value_t = 2.0)]
    fsr_multiple: f64,
    #[arg(long, value_enum, default_value = "auto")]
    space: SpaceArg,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Single-excitation eigenfrequencies while sweeping one qubit.
    Spectroscopy {
        #[command(flatten)]
        device: DeviceArgs,
        #[arg(long, value_parser = parse_qubit, default_value = "1")]
        qubit: QubitId,
        /// start:stop:n in GHz; the full tuning range with 2001 points when omitted.
        #[arg(long)]
        freqs: Option<LinRange>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// π pulse then a square flux pulse; excited population vs offset and duration.
    Chevron {
        #[command(flatten)]
        device: DeviceArgs,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_parser = parse_qubit)]
        qubit: QubitId,
        /// start:stop:n in MHz from the operating point.
        #[arg(long)]
        offsets: LinRange,
        /// start:stop:n in µs.
        #[arg(long)]
        durations: LinRange,
    },
    /// Swap transfer from qubit 1 through a mode to qubit 2, then a chevron on qubit 2.
    Transfer {
        #[command(flatten)]
        device: DeviceArgs,
        #[command(flatten)]
        run: RunArgs,
        /// Qubit-1 mode label; the 3.7885 GHz mode when omitted.
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        offsets: LinRange,
        #[arg(long)]
        durations: LinRange,
    },
    /// Qubit 2 tuned onto a mode of qubit 1 holding an excitation.
    Locality {
        #[command(flatten)]
        device: DeviceArgs,
        #[command(flatten)]
        run: RunArgs,
        /// Stray qubit 2 to mode splitting, MHz.
        #[arg(long, default_value_t = 0.0)]
        cross_two_g: f64,
    },
    /// Check a device file and print a summary.
    Validate {
        #[command(flatten)]
        device: DeviceArgs,
    },
    /// Print the reference device as JSON.
    Reference,
    /// Re-run the experiment recorded in a manifest.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Parser)]
#[command(name = "hbar-sim", version, about = "Two transmons coupled to HBAR mode ladders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn load_device(args: &DeviceArgs) -> Result<(DeviceSpec, Vec<String>)> {
    let (mut device, mut warnings) = match &args.device {
        Some(path) => parse_device_config(&std::fs::read(path)?, args.lenient)?,
        None => {
            let d = reference_device();
            let w = d.validate()?;
            (d, w)
        }
    };
    if let Some(d) = args.fock_dim {
        device.fock_dim = d;
    }
    if let Some(f) = args.frame_freq {
        device.frame_freq_ghz = f;
    }
    if args.fock_dim.is_some() || args.frame_freq.is_some() {
        warnings = device.validate()?;
    }
    Ok((device, warnings))
}

fn options(run: &RunArgs) -> Result<ExperimentOptions> {
    let mut o = ExperimentOptions {
        decoherence: run.decoherence == OnOff::On,
        fsr_multiple: run.fsr_multiple,
        parallelism: run.parallelism,
        space: match run.space {
            SpaceArg::Auto => SpaceChoice::Auto,
            SpaceArg::Full => SpaceChoice::Full,
            SpaceArg::Subspace => SpaceChoice::Subspace,
        },
        ..Default::default()
    };
    o.integrator.method = match run.integrator {
        IntegratorArg::Rk4 => Method::Rk4,
        IntegratorArg::Adaptive45 => Method::Adaptive45,
    };
    if let Some(s) = run.steps_per_cycle {
        o.integrator.steps_per_cycle = s;
    }
    o.integrator.validate()?;
    if o.parallelism == 0 {
        return Err(Error::validation("parallelism", "must be ≥ 1"));
    }
    Ok(o)
}

fn summary(device: &DeviceSpec, warnings: &[String]) -> String {
    let mut s = String::new();
    for q in QubitId::BOTH {
        let spec = device.qubit(q);
        let (gphi, _) = device.dephasing_rate(q);
        let modes = device.modes(q);
        writeln!(
            s,
            "{q} `{}`: omega_op {} GHz, tuning [{}, {}] GHz, T1 {} us, T2 {} us, pure dephasing {:.4} 1/us",
            spec.label, spec.omega_op_ghz, spec.tune_min_ghz, spec.tune_max_ghz, spec.t1_us, spec.t2_us, gphi
        )
        .expect("string write");
        match (modes.first(), modes.last()) {
            (Some(lo), Some(hi)) => writeln!(
                s,
                "  {} modes, {} to {} GHz, FSR {} MHz",
                modes.len(),
                lo.omega_ghz,
                hi.omega_ghz,
                device.fsr_ghz(q).map_or("n/a".into(), |f| format_sig9(f * 1e3))
            ),
            _ => writeln!(s, "  no modes"),
        }
        .expect("string write");
    }
    writeln!(
        s,
        "qubit-qubit 2g {} MHz, cross 2g {} MHz, frame {} GHz, fock_dim {}",
        device.qq_two_g_mhz, device.cross_two_g_mhz, device.frame_freq_ghz, device.fock_dim
    )
    .expect("string write");
    writeln!(s, "hash {}", device.hash()).expect("string write");
    for w in warnings {
        writeln!(s, "warning: {w}").expect("string write");
    }
    s
}

fn execute(cli: Cli, args: Vec<String>) -> Result<()> {
    match cli.command {
        Command::Validate { device } => {
            let (d, warnings) = load_device(&device)?;
            emit(&summary(&d, &warnings));
        }
        Command::Reference => {
            emit(&device_json(&reference_device()));
        }
        Command::Replay { manifest, out } => {
            let m: RunManifest = serde_json::from_slice(&std::fs::read(&manifest)?).map_err(|e| Error::Parse {
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            })?;
            let warnings = m.device.validate()?;
            run_request(&m.request, &m.device, &m.options, warnings, args, &out)?;
        }
        Command::Spectroscopy {
            device,
            qubit,
            freqs,
            out,
        } => {
            let (d, warnings) = load_device(&device)?;
            let s = d.qubit(qubit);
            let freqs_ghz = freqs.unwrap_or(LinRange {
                start: s.tune_min_ghz,
                stop: s.tune_max_ghz,
                n: 2001,
            });
            let req = Request::Spectroscopy { qubit, freqs_ghz };
            run_request(&req, &d, &ExperimentOptions::default(), warnings, args, &out)?;
        }
        Command::Chevron {
            device,
            run,
            qubit,
            offsets,
            durations,
        } => {
            let (d, warnings) = load_device(&device)?;
            let req = Request::Chevron {
                qubit,
                offsets_mhz: offsets,
                durations_us: durations,
            };
            run_request(&req, &d, &options(&run)?, warnings, args, &run.out)?;
        }
        Command::Transfer {
            device,
            run,
            mode,
            offsets,
            durations,
        } => {
            let (d, warnings) = load_device(&device)?;
            let req = Request::Transfer {
                mode,
                offsets_mhz: offsets,
                durations_us: durations,
            };
            run_request(&req, &d, &options(&run)?, warnings, args, &run.out)?;
        }
        Command::Locality { device, run, cross_two_g } => {
            let (d, warnings) = load_device(&device)?;
            let req = Request::Locality {
                cross_two_g_mhz: cross_two_g,
            };
            run_request(&req, &d, &options(&run)?, warnings, args, &run.out)?;
        }
    }
    Ok(())
}

/// Stdout write that tolerates a closed pipe.
fn emit(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

/// Entry point; returns the process exit code. 0 on success, 2 for usage and
/// validation errors, 1 for failures during a run.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    if args.len() <= 1 {
        let mut cmd = <Cli as clap::CommandFactory>::command();
        eprintln!("{}", cmd.render_help());
        return 2;
    }
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            if code == 0 {
                emit(&e.to_string());
            } else {
                eprint!("{e}");
            }
            return code;
        }
    };
    let recorded = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(cli, recorded) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                2
            } else {
                1
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TRANSFER_MODE_GHZ;

    fn reference_json() -> Value {
        serde_json::to_value(reference_device()).unwrap()
    }

    #[test]
    fn sig9_formatting() {
        assert_eq!(format_sig9(0.0), "0");
        assert_eq!(format_sig9(1.0), "1");
        assert_eq!(format_sig9(0.5), "0.5");
        assert_eq!(format_sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(format_sig9(2.0 / 3.0 * 100.0), "66.6666667");
        assert_eq!(format_sig9(-110.0), "-110");
        assert_eq!(format_sig9(9.999999999), "10");
        assert_eq!(format_sig9(1.2345e-9), "1.2345e-9");
        assert_eq!(format_sig9(123456789012.0), "1.23456789e11");
        assert_eq!(format_sig9(0.000123456789123), "0.000123456789");
    }

    #[test]
    fn reference_document_round_trips() {
        let bytes = serde_json::to_vec_pretty(&reference_device()).unwrap();
        let (d, warnings) = parse_device_config(&bytes, false).unwrap();
        assert_eq!(d, reference_device());
        // T2 slightly above 2 T1 on qubit 1
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].starts_with("qubit1"));
        let shipped = include_bytes!("../data/reference_device.json");
        assert_eq!(parse_device_config(shipped, false).unwrap().0, reference_device());
    }

    #[test]
    fn missing_t2_is_named() {
        let mut v = reference_json();
        v["qubit1"].as_object_mut().unwrap().remove("t2_us");
        match parse_device_config(&serde_json::to_vec(&v).unwrap(), false) {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "qubit1.T2"),
            other => panic!("{other:?}"),
        }
        v["qubit1"]["t2_us"] = Value::from(-1.0);
        match parse_device_config(&serde_json::to_vec(&v).unwrap(), false) {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "qubit1.T2"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn clamp_warning_is_reported() {
        let mut v = reference_json();
        v["qubit2"]["t2_us"] = Value::from(3.0 * 2.41);
        let (_, warnings) = parse_device_config(&serde_json::to_vec(&v).unwrap(), false).unwrap();
        let q2: Vec<&String> = warnings.iter().filter(|w| w.starts_with("qubit2")).collect();
        assert_eq!(q2.len(), 1);
        assert!(q2[0].contains("clamped"));
    }

    #[test]
    fn unknown_keys_strict_and_lenient() {
        let mut v = reference_json();
        v["qubit1"]["colour"] = Value::from("blue");
        v["modes1"][0]["q"] = Value::from(1);
        let bytes = serde_json::to_vec(&v).unwrap();
        match parse_device_config(&bytes, false) {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "qubit1.colour"),
            other => panic!("{other:?}"),
        }
        let (d, warnings) = parse_device_config(&bytes, true).unwrap();
        assert_eq!(d, reference_device());
        assert_eq!(warnings.iter().filter(|w| w.contains("unknown key")).count(), 2);
    }

    #[test]
    fn defaults_and_parse_errors() {
        let mut v = reference_json();
        let o = v.as_object_mut().unwrap();
        for k in ["modes1", "modes2", "frame_freq_ghz", "fock_dim", "cross_two_g_mhz"] {
            o.remove(k);
        }
        let (d, _) = parse_device_config(&serde_json::to_vec(&v).unwrap(), false).unwrap();
        assert_eq!(d, reference_device().without_modes());
        match parse_device_config(b"{\n  \"qubit1\": [1,\n}", false) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn lin_range_parsing() {
        let r: LinRange = "0:110:111".parse().unwrap();
        assert_eq!(r.values().len(), 111);
        assert_eq!(r.values()[110], 110.0);
        assert_eq!("5:5:1".parse::<LinRange>().unwrap().values(), vec![5.0]);
        assert!("1:2".parse::<LinRange>().is_err());
        assert!("1:2:0".parse::<LinRange>().is_err());
        assert!("a:2:3".parse::<LinRange>().is_err());
    }

    fn grid(offsets: usize, durations: usize) -> PopulationGrid {
        PopulationGrid {
            offsets_mhz: (0..offsets).map(|k| k as f64 * 1.1).collect(),
            durations_us: (0..durations).map(|k| k as f64 * 0.005).collect(),
            values: (0..offsets)
                .map(|i| (0..durations).map(|j| ((i * 7 + j) as f64 * 0.37).sin().abs()).collect())
                .collect(),
            meta: crate::experiments::GridMeta {
                experiment: "chevron".into(),
                device_hash: String::new(),
                qubit: QubitId::Q1,
                schedule: String::new(),
                truncation: TruncationReport {
                    fsr_multiple: 2.0,
                    windows1_ghz: vec![],
                    windows2_ghz: vec![],
                    kept1: vec![],
                    kept2: vec![],
                    dropped1: 0,
                    dropped2: 0,
                },
            },
        }
    }

    #[test]
    fn grid_csv_shape() {
        let s = grid_csv(&grid(1, 1));
        assert_eq!(s, "duration_us,offset_MHz=0\n0,0\n");
        let s = grid_csv(&grid(100, 200));
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines.len(), 201);
        assert!(lines.iter().all(|l| l.split(',').count() == 101));
        assert!(lines[0].starts_with("duration_us,offset_MHz=0,offset_MHz=1.1,"));
        assert!(!s.contains('\r'));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.csv");
        write_grid(&grid(3, 4), &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), grid_csv(&grid(3, 4)));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(main_with_args(["hbar-sim"]), 2);
        assert_eq!(main_with_args(["hbar-sim", "frobnicate"]), 2);
        assert_eq!(main_with_args(["hbar-sim", "validate"]), 0);
        assert_eq!(main_with_args(["hbar-sim", "--help"]), 0);
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.json");
        std::fs::write(&bad, "{").unwrap();
        assert_eq!(main_with_args(["hbar-sim", "validate", "--device", bad.to_str().unwrap()]), 2);
        let missing = dir.path().join("missing.json");
        assert_eq!(main_with_args(["hbar-sim", "validate", "--device", missing.to_str().unwrap()]), 1);
    }

    #[test]
    fn chevron_run_writes_manifest_and_replays() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("a");
        let off = format!("{0}:{0}:1", (TRANSFER_MODE_GHZ - 3.7778) * 1e3);
        let code = main_with_args([
            "hbar-sim",
            "chevron",
            "--qubit",
            "1",
            "--offsets",
            &off,
            "--durations",
            "0:0.05:3",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        let csv = std::fs::read(out.join("chevron.csv")).unwrap();
        let manifest = out.join("chevron.manifest.json");
        let m: RunManifest = serde_json::from_slice(&std::fs::read(&manifest).unwrap()).unwrap();
        assert_eq!(m.outputs, vec!["chevron.csv"]);
        assert_eq!(m.device, reference_device());
        assert!(m.truncation.is_some());
        let replay = dir.path().join("b");
        assert_eq!(
            main_with_args([
                "hbar-sim",
                "replay",
                "--manifest",
                manifest.to_str().unwrap(),
                "--out",
                replay.to_str().unwrap()
            ]),
            0
        );
        assert_eq!(std::fs::read(replay.join("chevron.csv")).unwrap(), csv);
    }
}
