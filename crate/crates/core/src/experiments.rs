//! The measurements: spectroscopy eigencurves, chevron scans, the swap
//! transfer between qubits and the mode-locality null test, plus the
//! order-preserving parallel sweep engine they run on.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    evolve_master_subspace, evolve_master_with, evolve_unitary, evolve_unitary_subspace, Dissipation,
    IntegratorConfig, SubspaceState, Trajectory,
};
use crate::error::{Error, Result};
use crate::model::{
    build_layout, single_excitation_in_frame, truncate_modes, DeviceSpec, QubitId, TruncationReport, Visited,
    TRANSFER_MODE_GHZ,
};
use crate::opalg::State;
use crate::pulses::{chevron_grid, compile, transfer_prefix, PulseElement, Schedule};

/// Which state space an evolution runs in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceChoice {
    /// Single-excitation subspace unless the schedule contains a drive.
    #[default]
    Auto,
    Full,
    Subspace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentOptions {
    pub integrator: IntegratorConfig,
    /// Master equation with the device's decay and dephasing; otherwise
    /// lossless Schrödinger evolution.
    pub decoherence: bool,
    /// Half-width, in mode spacings, of the window of modes kept around the
    /// frequencies the qubits visit.
    pub fsr_multiple: f64,
    pub parallelism: usize,
    pub space: SpaceChoice,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        Self {
            integrator: IntegratorConfig::default(),
            decoherence: true,
            fsr_multiple: 2.0,
            parallelism: 1,
            space: SpaceChoice::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub experiment: String,
    pub device_hash: String,
    pub qubit: QubitId,
    pub schedule: String,
    pub truncation: TruncationReport,
}

/// Excited population of the measured qubit; rows are offsets, columns
/// durations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationGrid {
    pub offsets_mhz: Vec<f64>,
    pub durations_us: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub meta: GridMeta,
}

impl PopulationGrid {
    pub fn shape(&self) -> (usize, usize) {
        (self.offsets_mhz.len(), self.durations_us.len())
    }

    pub fn column(&self, duration_index: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[duration_index]).collect()
    }
}

/// Single-excitation eigenfrequencies along a sweep of one qubit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigencurveSet {
    pub qubit: QubitId,
    pub swept_freqs_ghz: Vec<f64>,
    /// Lab-frame eigenfrequencies, ascending, one row per sweep point.
    pub eigenfreqs_ghz: Vec<Vec<f64>>,
    /// Weight of the swept qubit in each eigenvector, same layout.
    pub qubit_weights: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anticrossing {
    pub swept_freq_ghz: f64,
    pub gap_mhz: f64,
    /// Slot hybridizing with the swept qubit at the crossing.
    pub partner: String,
}

/// Runs independent jobs on `parallelism` threads. Results keep the input
/// order; a failing job yields an indexed error without affecting others.
pub fn run_sweep<J, T, F>(jobs: &[J], parallelism: usize, f: F) -> Result<Vec<Result<T>>>
where
    J: Sync,
    T: Send,
    F: Fn(&J) -> Result<T> + Sync,
{
    if parallelism == 0 {
        return Err(Error::validation("parallelism", "must be ≥ 1"));
    }
    let run = |(index, job): (usize, &J)| {
        f(job).map_err(|e| Error::Job {
            index,
            source: Box::new(e),
        })
    };
    if parallelism == 1 {
        return Ok(jobs.iter().enumerate().map(run).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    Ok(pool.install(|| jobs.par_iter().enumerate().map(run).collect()))
}

fn first_error<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    results.into_iter().collect()
}

fn swept_freqs(device: &DeviceSpec, qubit: QubitId, f: f64) -> [f64; 2] {
    let mut freqs = device.operating_freqs();
    freqs[qubit.index()] = f;
    freqs
}

/// Eigenvalues (rad/µs, ascending) and the swept qubit's weight in each
/// eigenvector.
fn dressed(device: &DeviceSpec, qubit: QubitId, f: f64) -> (Vec<f64>, Vec<f64>, DMatrix<f64>) {
    let h = single_excitation_in_frame(device, swept_freqs(device, qubit, f), device.frame_freq_ghz);
    let eig = h.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let weights = order
        .iter()
        .map(|&k| eig.eigenvectors[(qubit.index(), k)].powi(2))
        .collect();
    let vecs = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |i, c| eig.eigenvectors[(i, order[c])]);
    (vals, weights, vecs)
}

fn check_sweep_range(device: &DeviceSpec, qubit: QubitId, lo: f64, hi: f64) -> Result<()> {
    let s = device.qubit(qubit);
    for f in [lo, hi] {
        if !f.is_finite() || f < s.tune_min_ghz - 1e-12 || f > s.tune_max_ghz + 1e-12 {
            return Err(Error::OutOfRange {
                qubit: qubit.to_string(),
                freq_ghz: f,
                min_ghz: s.tune_min_ghz,
                max_ghz: s.tune_max_ghz,
            });
        }
    }
    if lo >= hi {
        return Err(Error::validation("freq_range", format!("empty range [{lo}, {hi}]")));
    }
    Ok(())
}

/// Sweeps `qubit` across `[lo, hi]` GHz holding the other at its operating
/// point, reporting the single-excitation eigenfrequencies in the lab frame.
pub fn spectroscopy_sweep(
    device: &DeviceSpec,
    qubit: QubitId,
    freq_range_ghz: (f64, f64),
    n_points: usize,
) -> Result<EigencurveSet> {
    device.validate()?;
    let (lo, hi) = freq_range_ghz;
    check_sweep_range(device, qubit, lo, hi)?;
    if n_points < 2 {
        return Err(Error::validation("n_points", "must be ≥ 2"));
    }
    let to_ghz = |e: f64| device.frame_freq_ghz + e / (2.0 * PI * 1e3);
    let mut set = EigencurveSet {
        qubit,
        swept_freqs_ghz: Vec::with_capacity(n_points),
        eigenfreqs_ghz: Vec::with_capacity(n_points),
        qubit_weights: Vec::with_capacity(n_points),
    };
    for k in 0..n_points {
        let f = lo + (hi - lo) * k as f64 / (n_points - 1) as f64;
        let (vals, weights, _) = dressed(device, qubit, f);
        set.swept_freqs_ghz.push(f);
        set.eigenfreqs_ghz.push(vals.into_iter().map(to_ghz).collect());
        set.qubit_weights.push(weights);
    }
    Ok(set)
}

/// Splitting (GHz) between the two eigenstates carrying the most weight of
/// the swept qubit, with those two weights.
fn hybrid_gap(vals: &[f64], weights: &[f64]) -> (f64, usize, usize) {
    let mut idx: Vec<usize> = (0..vals.len()).collect();
    idx.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]));
    let (a, b) = (idx[0], idx[1]);
    ((vals[a] - vals[b]).abs() / (2.0 * PI * 1e3), a, b)
}

/// Golden-section minimization of `f` on `[a, b]`.
pub(crate) fn golden_min<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Minimum weight of the swept qubit in both branches for a gap minimum to
/// count as an anticrossing.
pub const ANTICROSSING_MIN_WEIGHT: f64 = 0.25;

/// Locates anticrossings of the swept qubit along a sweep: local minima of
/// the splitting between the two eigenstates with most qubit character,
/// refined by golden-section search between the neighbouring grid points.
pub fn find_anticrossings(device: &DeviceSpec, set: &EigencurveSet) -> Vec<Anticrossing> {
    let qubit = set.qubit;
    let gaps: Vec<f64> = set
        .eigenfreqs_ghz
        .iter()
        .zip(&set.qubit_weights)
        .map(|(v, w)| hybrid_gap(v, w).0)
        .collect();
    let labels = {
        let mut l = vec![device.qubit1.label.clone(), device.qubit2.label.clone()];
        l.extend(device.modes1.iter().chain(&device.modes2).map(|m| m.label.clone()));
        l
    };
    let f = &set.swept_freqs_ghz;
    let mut out: Vec<Anticrossing> = Vec::new();
    for i in 1..gaps.len().saturating_sub(1) {
        if !(gaps[i] <= gaps[i - 1] && gaps[i] < gaps[i + 1]) {
            continue;
        }
        let gap_at = |x: f64| {
            let (v, w, _) = dressed(device, qubit, x);
            hybrid_gap(&v, &w).0
        };
        let (x, g) = golden_min(gap_at, f[i - 1], f[i + 1], 1e-13);
        let (v, w, vecs) = dressed(device, qubit, x);
        let (_, a, b) = hybrid_gap(&v, &w);
        if w[a].min(w[b]) < ANTICROSSING_MIN_WEIGHT {
            continue;
        }
        let partner = (0..labels.len())
            .filter(|&s| s != qubit.index())
            .max_by(|&s, &t| {
                let ws = vecs[(s, a)].powi(2) + vecs[(s, b)].powi(2);
                let wt = vecs[(t, a)].powi(2) + vecs[(t, b)].powi(2);
                ws.total_cmp(&wt)
            })
            .map(|s| labels[s].clone())
            .unwrap_or_default();
        let ac = Anticrossing {
            swept_freq_ghz: x,
            gap_mhz: g * 1e3,
            partner,
        };
        // neighbouring minima with the same partner belong to one crossing
        match out.last_mut() {
            Some(prev) if prev.partner == ac.partner => {
                if ac.gap_mhz < prev.gap_mhz {
                    *prev = ac;
                }
            }
            _ => out.push(ac),
        }
    }
    out
}

/// Evolves the ground state through `schedule` and returns the excitation
/// population of slot `label` at each sample time.
pub fn simulate_population(
    device: &DeviceSpec,
    schedule: &Schedule,
    sample_times: &[f64],
    label: &str,
    opts: &ExperimentOptions,
) -> Result<Vec<f64>> {
    let traj = simulate(device, schedule, sample_times, opts)?;
    traj.observable(label)
        .map(<[f64]>::to_vec)
        .ok_or_else(|| Error::UnknownSlot(label.to_string()))
}

/// Evolves the ground state through `schedule` in the space chosen by
/// `opts.space`.
pub fn simulate(
    device: &DeviceSpec,
    schedule: &Schedule,
    sample_times: &[f64],
    opts: &ExperimentOptions,
) -> Result<Trajectory> {
    let full = match opts.space {
        SpaceChoice::Auto => schedule.has_drive(),
        SpaceChoice::Full => true,
        SpaceChoice::Subspace => false,
    };
    let cfg = &opts.integrator;
    if full {
        let psi0 = State::ground(build_layout(device)?);
        if opts.decoherence {
            evolve_master_with(&psi0, schedule, device, cfg, sample_times, Dissipation::Device)
        } else {
            evolve_unitary(&psi0, schedule, device, cfg, sample_times)
        }
    } else {
        let psi0 = SubspaceState::ground(device);
        if opts.decoherence {
            evolve_master_subspace(&psi0, schedule, device, cfg, sample_times, Dissipation::Device)
        } else {
            evolve_unitary_subspace(&psi0, schedule, device, cfg, sample_times)
        }
    }
}

fn check_fsr_multiple(opts: &ExperimentOptions) -> Result<()> {
    if opts.fsr_multiple.is_finite() && opts.fsr_multiple >= 0.0 {
        Ok(())
    } else {
        Err(Error::validation("fsr_multiple", "must be ≥ 0"))
    }
}

fn check_grid(offsets: &[f64], durations: &[f64]) -> Result<()> {
    if offsets.is_empty() || durations.is_empty() {
        return Err(Error::validation("grid", "offsets and durations must be non-empty"));
    }
    if let Some(o) = offsets.iter().find(|o| !o.is_finite()) {
        return Err(Error::validation("offsets", format!("non-finite offset {o}")));
    }
    Ok(())
}

/// Sorted distinct durations and, for each input duration, its position.
fn sample_plan(durations: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut uniq: Vec<f64> = durations.to_vec();
    uniq.sort_by(f64::total_cmp);
    uniq.dedup();
    let pos = durations
        .iter()
        .map(|d| uniq.binary_search_by(|u| u.total_cmp(d)).expect("present"))
        .collect();
    (uniq, pos)
}

fn offset_span(offsets: &[f64]) -> (f64, f64) {
    offsets
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &o| (lo.min(o), hi.max(o)))
}

/// Chevron: for every `(offset, duration)`, a π pulse on `qubit` followed by
/// a square pulse to `omega_op + offset`, measuring that qubit's excited
/// population at the end of the pulse.
///
/// Each offset row is one evolution sampled at every duration, which is
/// identical to evaluating the grid points separately since nothing follows
/// the pulse. Rows run in parallel.
pub fn chevron_scan(
    device: &DeviceSpec,
    qubit: QubitId,
    offsets_mhz: &[f64],
    durations_us: &[f64],
    opts: &ExperimentOptions,
) -> Result<PopulationGrid> {
    check_grid(offsets_mhz, durations_us)?;
    check_fsr_multiple(opts)?;
    device.validate()?;
    let op = device.qubit(qubit).omega_op_ghz;
    // range and duration checks over the whole grid
    chevron_grid(device, qubit, offsets_mhz, &durations_us[..1])?;
    if let Some(d) = durations_us.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
        return Err(Error::InvalidSequence(format!("duration must be ≥ 0, got {d}")));
    }

    let (lo, hi) = offset_span(offsets_mhz);
    let mut visited: Visited = [vec![], vec![]];
    visited[qubit.index()].push((op + lo * 1e-3, op + hi * 1e-3));
    visited[qubit.index()].push((op, op));
    visited[qubit.other().index()].push((device.qubit(qubit.other()).omega_op_ghz, device.qubit(qubit.other()).omega_op_ghz));
    let (dev, truncation) = truncate_modes(device, &visited, opts.fsr_multiple);

    let (samples, pos) = sample_plan(durations_us);
    let t_max = *samples.last().expect("non-empty");
    let label = dev.qubit(qubit).label.clone();
    let rows = run_sweep(offsets_mhz, opts.parallelism, |&offset| {
        let mut seq = vec![PulseElement::pi(qubit)];
        if t_max > 0.0 {
            seq.push(PulseElement::flux(qubit, op + offset * 1e-3, t_max));
        }
        let sched = compile(&seq, &dev)?;
        let p = simulate_population(&dev, &sched, &samples, &label, opts)?;
        Ok(pos.iter().map(|&k| p[k]).collect::<Vec<f64>>())
    })?;
    Ok(PopulationGrid {
        offsets_mhz: offsets_mhz.to_vec(),
        durations_us: durations_us.to_vec(),
        values: first_error(rows)?,
        meta: GridMeta {
            experiment: "chevron".into(),
            device_hash: device.hash(),
            qubit,
            schedule: format!("pi({qubit}); flux_square({qubit}, omega_op + offset, duration)"),
            truncation,
        },
    })
}

/// The mode used for the swap transfer: `label` if given (must belong to
/// qubit 1), else the qubit-1 mode at 3.7885 GHz.
pub fn transfer_mode(device: &DeviceSpec, label: Option<&str>) -> Result<String> {
    match label {
        Some(l) => match device.find_mode(l) {
            Some((QubitId::Q1, _, _)) => Ok(l.to_string()),
            Some(_) => Err(Error::validation(l, "transfer mode must belong to qubit 1")),
            None => Err(Error::UnknownMode(l.to_string())),
        },
        None => device
            .modes1
            .iter()
            .find(|m| (m.omega_ghz - TRANSFER_MODE_GHZ).abs() < 5e-5)
            .map(|m| m.label.clone())
            .ok_or_else(|| Error::UnknownMode(format!("no qubit-1 mode at {TRANSFER_MODE_GHZ} GHz"))),
    }
}

/// Swap transfer: π on qubit 1, swap into the transfer mode and back, swap to
/// qubit 2 through the qubit–qubit resonance, then a square pulse on qubit 2
/// to `omega_op + offset` for each duration, measuring qubit 2.
pub fn transfer_experiment(
    device: &DeviceSpec,
    mode_label: Option<&str>,
    offsets_mhz: &[f64],
    durations_us: &[f64],
    opts: &ExperimentOptions,
) -> Result<PopulationGrid> {
    check_grid(offsets_mhz, durations_us)?;
    check_fsr_multiple(opts)?;
    device.validate()?;
    let mode = transfer_mode(device, mode_label)?;
    let q2 = QubitId::Q2;
    let op2 = device.qubit2.omega_op_ghz;
    chevron_grid(device, q2, offsets_mhz, &durations_us[..1])?;
    if let Some(d) = durations_us.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
        return Err(Error::InvalidSequence(format!("duration must be ≥ 0, got {d}")));
    }

    let prefix = compile(&transfer_prefix(&mode), device)?;
    let mut visited = prefix.visited_freqs(device);
    let (lo, hi) = offset_span(offsets_mhz);
    visited[1].push((op2 + lo * 1e-3, op2 + hi * 1e-3));
    let (dev, truncation) = truncate_modes(device, &visited, opts.fsr_multiple);

    let (samples, pos) = sample_plan(durations_us);
    let t_max = *samples.last().expect("non-empty");
    let rows = run_sweep(offsets_mhz, opts.parallelism, |&offset| {
        let mut seq = transfer_prefix(&mode);
        if t_max > 0.0 {
            seq.push(PulseElement::flux(q2, op2 + offset * 1e-3, t_max));
        }
        let sched = compile(&seq, &dev)?;
        let t0 = sched.span_us() - t_max;
        let times: Vec<f64> = samples.iter().map(|d| t0 + d).collect();
        let p = simulate_population(&dev, &sched, &times, &dev.qubit2.label, opts)?;
        Ok(pos.iter().map(|&k| p[k]).collect::<Vec<f64>>())
    })?;
    Ok(PopulationGrid {
        offsets_mhz: offsets_mhz.to_vec(),
        durations_us: durations_us.to_vec(),
        values: first_error(rows)?,
        meta: GridMeta {
            experiment: "transfer".into(),
            device_hash: device.hash(),
            qubit: q2,
            schedule: format!(
                "pi(qubit1); swap(qubit1, {mode}, 2 half periods); swap(qubit2 -> qubit1); flux_square(qubit2, omega_op + offset, duration)"
            ),
            truncation,
        },
    })
}

pub const LOCALITY_WINDOW_US: f64 = 2.0;
pub const LOCALITY_SAMPLES: usize = 401;

/// Mode-locality test: qubit 1 swaps its excitation into the transfer mode
/// and is tuned to the top of its range while qubit 2 is tuned onto the
/// mode for [`LOCALITY_WINDOW_US`]. Qubit 2 reaches the mode only through
/// `cross_two_g_mhz` (and, weakly, through the detuned qubit 1).
///
/// Qubit 2's own ladder is left out. Times in the returned trajectory are
/// measured from the start of the window.
pub fn locality_test(device: &DeviceSpec, cross_two_g_mhz: f64, opts: &ExperimentOptions) -> Result<Trajectory> {
    if !(cross_two_g_mhz.is_finite() && cross_two_g_mhz >= 0.0) {
        return Err(Error::validation("cross_two_g", "must be ≥ 0"));
    }
    check_fsr_multiple(opts)?;
    let mut d = device.clone();
    d.cross_two_g_mhz = cross_two_g_mhz;
    d.modes2.clear();
    d.validate()?;
    let mode = transfer_mode(&d, None)?;
    let f_mode = d.find_mode(&mode).expect("resolved").2.omega_ghz;
    let seq = vec![
        PulseElement::pi(QubitId::Q1),
        PulseElement::swap_to_mode(QubitId::Q1, &mode, 1),
        PulseElement::Simultaneous {
            elements: vec![
                PulseElement::flux(QubitId::Q1, d.qubit1.tune_max_ghz, LOCALITY_WINDOW_US),
                PulseElement::flux(QubitId::Q2, f_mode, LOCALITY_WINDOW_US),
            ],
        },
    ];
    let sched = compile(&seq, &d)?;
    let (dev, _) = truncate_modes(&d, &sched.visited_freqs(&d), opts.fsr_multiple);
    let sched = compile(&seq, &dev)?;
    let t0 = sched.span_us() - LOCALITY_WINDOW_US;
    let times: Vec<f64> = (0..LOCALITY_SAMPLES)
        .map(|k| t0 + LOCALITY_WINDOW_US * k as f64 / (LOCALITY_SAMPLES - 1) as f64)
        .collect();
    let mut traj = simulate(&dev, &sched, &times, opts)?;
    for t in &mut traj.times {
        *t -= t0;
    }
    Ok(traj)
}

/// Dominant oscillation frequency (MHz) of a uniformly sampled trace: FFT
/// peak of the zero-padded, mean-removed signal, refined by a least-squares
/// sinusoid fit around it.
pub fn oscillation_frequency_mhz(times_us: &[f64], values: &[f64]) -> Result<f64> {
    let n = values.len();
    if n < 8 || times_us.len() != n {
        return Err(Error::validation("trace", "need at least 8 samples with matching times"));
    }
    let dt = (times_us[n - 1] - times_us[0]) / (n - 1) as f64;
    if !(dt > 0.0) || times_us.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.max(1.0)) {
        return Err(Error::validation("trace", "samples must be uniformly spaced"));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let m = (16 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = values
        .iter()
        .map(|v| Complex::new(v - mean, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(m)
        .collect();
    FftPlanner::new().plan_fft_forward(m).process(&mut buf);
    let peak = (1..m / 2)
        .max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm()))
        .expect("non-empty spectrum");
    let f0 = peak as f64 / (m as f64 * dt);
    let span = times_us[n - 1] - times_us[0];
    let residual = |f: f64| sinusoid_residual(times_us, values, f);
    let half = 0.5 / span;
    let (f, _) = golden_min(residual, (f0 - half).max(0.0), f0 + half, 1e-12);
    Ok(f)
}

/// Residual of the least-squares fit `a + b·cos(2πft) + c·sin(2πft)`.
fn sinusoid_residual(t: &[f64], y: &[f64], f: f64) -> f64 {
    let w = 2.0 * PI * f;
    let basis = |ti: f64| [1.0, (w * ti).cos(), (w * ti).sin()];
    let mut ata = nalgebra::Matrix3::<f64>::zeros();
    let mut aty = nalgebra::Vector3::<f64>::zeros();
    for (&ti, &yi) in t.iter().zip(y) {
        let b = basis(ti);
        for r in 0..3 {
            aty[r] += b[r] * yi;
            for c in 0..3 {
                ata[(r, c)] += b[r] * b[c];
            }
        }
    }
    let Some(coef) = ata.lu().solve(&aty) else {
        return f64::INFINITY;
    };
    t.iter()
        .zip(y)
        .map(|(&ti, &yi)| {
            let b = basis(ti);
            let fit = coef[0] * b[0] + coef[1] * b[1] + coef[2] * b[2];
            (yi - fit).powi(2)
        })
        .sum()
}
