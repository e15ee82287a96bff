//! Time evolution over piecewise-constant schedules: the Lindblad master
//! equation for density matrices and Schrödinger evolution for pure states,
//! in the full composite space or restricted to at most one excitation.
//!
//! Segment boundaries and sample times are exact breakpoints. Each segment is
//! integrated in the device frame, except for driven segments which use a
//! frame co-rotating with the driven qubit.

use std::f64::consts::PI;

use indexmap::IndexMap;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    self, angular, build_collapse_ops, build_layout, hamiltonian_in_frame, DeviceSpec, QubitId,
};
use crate::opalg::{self, embed_at, Operator, State, StateKind, SystemLayout, C64, DENSE_LIMIT};
use crate::pulses::{PrepAction, Schedule, Segment};

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Largest composite dimension the full-space master equation accepts.
pub const MASTER_DIM_LIMIT: usize = 4096;

/// Sample times closer than this to a segment boundary count as on it.
const TIME_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Rk4,
    /// Dormand–Prince 5(4) with step-size control.
    Adaptive45,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub method: Method,
    pub dt_max_us: f64,
    /// Fixed steps per period of the fastest frequency in the schedule.
    pub steps_per_cycle: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub store_states: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            method: Method::Rk4,
            dt_max_us: 1e-3,
            steps_per_cycle: 100.0,
            rel_tol: 1e-9,
            abs_tol: 1e-11,
            store_states: false,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |field: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::validation(format!("integrator.{field}"), format!("must be > 0, got {v}")))
            }
        };
        pos("dt_max_us", self.dt_max_us)?;
        pos("rel_tol", self.rel_tol)?;
        pos("abs_tol", self.abs_tol)?;
        pos("steps_per_cycle", self.steps_per_cycle)?;
        if self.steps_per_cycle < 50.0 {
            return Err(Error::validation(
                "integrator.steps_per_cycle",
                format!("must be ≥ 50, got {}", self.steps_per_cycle),
            ));
        }
        Ok(())
    }
}

/// Whether the device's decay and dephasing channels are included.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dissipation {
    #[default]
    Device,
    Off,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Excitation population of every qubit and mode, by slot label.
    pub observables: IndexMap<String, Vec<f64>>,
    pub states: Option<Vec<State>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn observable(&self, label: &str) -> Option<&[f64]> {
        self.observables.get(label).map(Vec::as_slice)
    }
}

/// Largest linear frequency (MHz) present in any segment: detunings from
/// the segment's frame, couplings, drive strengths and, when dissipating,
/// decay rates over 2π.
pub fn max_frequency_mhz(schedule: &Schedule, device: &DeviceSpec, dissipation: Dissipation) -> f64 {
    let mut f: f64 = 0.0;
    for seg in &schedule.segments {
        let frame = segment_frame(device, seg);
        for q in seg.freqs() {
            f = f.max(1e3 * (q - frame).abs());
        }
        for m in device.modes1.iter().chain(&device.modes2) {
            f = f.max(1e3 * (m.omega_ghz - frame).abs()).max(m.two_g_mhz);
        }
        f = f.max(device.qq_two_g_mhz).max(device.cross_two_g_mhz);
        if let Some(d) = seg.drive {
            f = f.max(d.two_g_mhz);
        }
    }
    if dissipation == Dissipation::Device && !schedule.segments.is_empty() {
        let mut rates = vec![1.0 / device.qubit1.t1_us, 1.0 / device.qubit2.t1_us];
        rates.push(device.dephasing_rate(QubitId::Q1).0);
        rates.push(device.dephasing_rate(QubitId::Q2).0);
        rates.extend(device.modes1.iter().chain(&device.modes2).map(|m| 1.0 / m.t1_us));
        for r in rates {
            f = f.max(r / (2.0 * PI));
        }
    }
    f
}

/// Fixed step `min(dt_max, 1/(steps_per_cycle·f_max))` in µs.
pub fn step_size(schedule: &Schedule, device: &DeviceSpec, config: &IntegratorConfig, dissipation: Dissipation) -> f64 {
    let f = max_frequency_mhz(schedule, device, dissipation);
    if f > 0.0 {
        config.dt_max_us.min(1.0 / (config.steps_per_cycle * f))
    } else {
        config.dt_max_us
    }
}

fn segment_frame(device: &DeviceSpec, seg: &Segment) -> f64 {
    match seg.drive {
        Some(d) => seg.freqs()[d.qubit.index()],
        None => device.frame_freq_ghz,
    }
}

/// State restricted to `span{|vac⟩, |q1⟩, |q2⟩, |m⟩…}`: index 0 is the
/// no-excitation state, index `s + 1` has one quantum in slot `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceState {
    labels: Vec<String>,
    kind: StateKind,
    data: Vec<C64>,
}

fn slot_labels(device: &DeviceSpec) -> Vec<String> {
    let mut labels = vec![device.qubit1.label.clone(), device.qubit2.label.clone()];
    labels.extend(device.modes1.iter().chain(&device.modes2).map(|m| m.label.clone()));
    labels
}

impl SubspaceState {
    pub fn ground(device: &DeviceSpec) -> Self {
        let labels = slot_labels(device);
        let mut data = vec![ZERO; labels.len() + 1];
        data[0] = ONE;
        Self {
            labels,
            kind: StateKind::Vector,
            data,
        }
    }

    /// Single quantum in the slot labelled `label`.
    pub fn excited(device: &DeviceSpec, label: &str) -> Result<Self> {
        let labels = slot_labels(device);
        let s = labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownSlot(label.to_string()))?;
        let mut data = vec![ZERO; labels.len() + 1];
        data[s + 1] = ONE;
        Ok(Self {
            labels,
            kind: StateKind::Vector,
            data,
        })
    }

    pub fn vector(device: &DeviceSpec, data: Vec<C64>) -> Result<Self> {
        let labels = slot_labels(device);
        if data.len() != labels.len() + 1 {
            return Err(Error::DimensionMismatch {
                expected: labels.len() + 1,
                found: data.len(),
            });
        }
        let norm: f64 = data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidState(format!("vector norm {norm} differs from 1")));
        }
        Ok(Self {
            labels,
            kind: StateKind::Vector,
            data,
        })
    }

    pub fn to_density(&self) -> Self {
        match self.kind {
            StateKind::Density => self.clone(),
            StateKind::Vector => Self {
                labels: self.labels.clone(),
                kind: StateKind::Density,
                data: outer(&self.data),
            },
        }
    }

    pub fn kind(&self) -> StateKind {
        self.kind
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn dim(&self) -> usize {
        self.labels.len() + 1
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Restriction of a full-space state; fails when the state has weight
    /// outside the subspace.
    pub fn from_full(state: &State) -> Result<Self> {
        let layout = state.layout();
        let map = subspace_indices(layout);
        let n = layout.total_dim();
        let k = map.len();
        let in_sub = {
            let mut v = vec![usize::MAX; n];
            for (a, &i) in map.iter().enumerate() {
                v[i] = a;
            }
            v
        };
        let tol = 1e-12;
        let data = match state.kind() {
            StateKind::Vector => {
                let d = state.data();
                if (0..n).any(|i| in_sub[i] == usize::MAX && d[i].norm() > tol) {
                    return Err(Error::LeavesSubspace("state has multi-excitation weight".into()));
                }
                map.iter().map(|&i| d[i]).collect()
            }
            StateKind::Density => {
                let d = state.data();
                if (0..n).any(|i| in_sub[i] == usize::MAX && d[i * n + i].re.abs() > tol) {
                    return Err(Error::LeavesSubspace("state has multi-excitation weight".into()));
                }
                let mut out = vec![ZERO; k * k];
                for (a, &i) in map.iter().enumerate() {
                    for (b, &j) in map.iter().enumerate() {
                        out[a * k + b] = d[i * n + j];
                    }
                }
                out
            }
        };
        Ok(Self {
            labels: layout.labels().to_vec(),
            kind: state.kind(),
            data,
        })
    }

    /// Embedding into the full composite space.
    pub fn to_full(&self, layout: &SystemLayout) -> Result<State> {
        if layout.labels() != self.labels.as_slice() {
            return Err(Error::InvalidState("layout does not match subspace labels".into()));
        }
        let map = subspace_indices(layout);
        let n = layout.total_dim();
        let k = map.len();
        Ok(match self.kind {
            StateKind::Vector => {
                let mut v = vec![ZERO; n];
                for (a, &i) in map.iter().enumerate() {
                    v[i] = self.data[a];
                }
                State::from_parts_unchecked(layout.clone(), StateKind::Vector, v)
            }
            StateKind::Density => {
                if n > MASTER_DIM_LIMIT {
                    return Err(Error::LayoutTooLarge(format!("density matrix of dimension {n}")));
                }
                let mut m = vec![ZERO; n * n];
                for (a, &i) in map.iter().enumerate() {
                    for (b, &j) in map.iter().enumerate() {
                        m[i * n + j] = self.data[a * k + b];
                    }
                }
                State::from_parts_unchecked(layout.clone(), StateKind::Density, m)
            }
        })
    }
}

/// Full-space indices of `[vac, one quantum in slot 0, slot 1, …]`.
fn subspace_indices(layout: &SystemLayout) -> Vec<usize> {
    let ground: Vec<usize> = (0..layout.num_slots())
        .map(|s| layout.digit_for_quanta(s, 0).expect("zero quanta"))
        .collect();
    let mut out = vec![layout.index_of(&ground).expect("valid digits")];
    for s in 0..layout.num_slots() {
        let mut d = ground.clone();
        d[s] = layout.digit_for_quanta(s, 1).expect("one quantum");
        out.push(layout.index_of(&d).expect("valid digits"));
    }
    out
}

fn outer(v: &[C64]) -> Vec<C64> {
    let n = v.len();
    let mut rho = vec![ZERO; n * n];
    for i in 0..n {
        for j in 0..n {
            rho[i * n + j] = v[i] * v[j].conj();
        }
    }
    rho
}

/// Basis-level description of the space being integrated.
enum Space {
    Full(SystemLayout),
    Single { num_slots: usize },
}

impl Space {
    fn dim(&self) -> usize {
        match self {
            Space::Full(l) => l.total_dim(),
            Space::Single { num_slots } => num_slots + 1,
        }
    }

    /// Total excitation number of each basis state.
    fn number(&self) -> Vec<f64> {
        match self {
            Space::Full(l) => l.total_quanta().into_iter().map(|q| q as f64).collect(),
            Space::Single { num_slots } => {
                let mut n = vec![1.0; num_slots + 1];
                n[0] = 0.0;
                n
            }
        }
    }

    /// Per slot, the basis indices and quanta contributing to its population.
    fn population_weights(&self) -> Vec<Vec<(usize, f64)>> {
        match self {
            Space::Full(l) => (0..l.num_slots())
                .map(|s| {
                    (0..l.total_dim())
                        .filter_map(|i| {
                            let q = l.quanta(i, s);
                            (q > 0).then_some((i, q as f64))
                        })
                        .collect()
                })
                .collect(),
            Space::Single { num_slots } => (0..*num_slots).map(|s| vec![(s + 1, 1.0)]).collect(),
        }
    }

    fn hamiltonian(&self, device: &DeviceSpec, seg: &Segment) -> Result<Operator> {
        device.check_freqs(seg.freqs())?;
        let frame = segment_frame(device, seg);
        let drive = seg.drive.map(|d| (d.qubit, angular(d.two_g_mhz) / 2.0));
        match self {
            Space::Full(l) => hamiltonian_in_frame(device, l, seg.freqs(), frame, drive),
            Space::Single { num_slots } => {
                if drive.is_some() {
                    return Err(Error::LeavesSubspace("a finite drive couples to two excitations".into()));
                }
                let h = model::single_excitation_in_frame(device, seg.freqs(), frame);
                let det = model::slot_detunings(device, seg.freqs(), frame);
                let e_vac = -0.5 * (det[0] + det[1]);
                let mut t = vec![(0, 0, C64::new(e_vac, 0.0))];
                for i in 0..*num_slots {
                    for j in 0..*num_slots {
                        let v = if i == j { h[(i, j)] + e_vac } else { h[(i, j)] };
                        t.push((i + 1, j + 1, C64::new(v, 0.0)));
                    }
                }
                Operator::from_triplets(num_slots + 1, t)
            }
        }
    }

    fn collapse(&self, device: &DeviceSpec) -> Result<Vec<(Operator, f64)>> {
        let mut ops: Vec<(Operator, f64)> = match self {
            Space::Full(_) => build_collapse_ops(device)?
                .into_iter()
                .map(|c| (c.op, c.rate))
                .collect(),
            Space::Single { num_slots } => {
                let n = num_slots + 1;
                let lower = |s: usize| Operator::from_triplets(n, [(0, s + 1, ONE)]);
                let mut ops = Vec::new();
                for q in QubitId::BOTH {
                    let s = q.index();
                    let spec = device.qubit(q);
                    ops.push((lower(s)?, 1.0 / spec.t1_us));
                    let mut z = vec![-ONE; n];
                    z[s + 1] = ONE;
                    ops.push((Operator::diagonal(&z), device.dephasing_rate(q).0 / 2.0));
                }
                for (k, m) in device.modes1.iter().chain(&device.modes2).enumerate() {
                    ops.push((lower(2 + k)?, 1.0 / m.t1_us));
                }
                ops
            }
        };
        ops.retain(|(_, r)| *r > 0.0);
        Ok(ops)
    }

    /// Ideal bit flip of `q`, with the indices that must carry no weight for
    /// the flip to stay representable.
    fn flip(&self, q: QubitId) -> Result<(Operator, Vec<usize>)> {
        match self {
            Space::Full(l) => Ok((embed_at(&opalg::sigma_x(), q.index(), l)?, Vec::new())),
            Space::Single { num_slots } => {
                let s = q.index() + 1;
                let op = Operator::from_triplets(num_slots + 1, [(0, s, ONE), (s, 0, ONE)])?;
                let forbidden = (1..=*num_slots).filter(|&i| i != s).collect();
                Ok((op, forbidden))
            }
        }
    }
}

trait Rhs {
    fn eval(&mut self, y: &[C64], out: &mut [C64]);
}

enum Jump {
    /// At most one entry per row: `(row, col, value)`.
    Monomial {
        rate: f64,
        entries: Vec<(usize, usize, C64)>,
        real: bool,
    },
    General { rate: f64, op: Operator, scratch: Vec<C64>, scratch2: Vec<C64> },
}

/// `H_eff` split into its complex diagonal and off-diagonal rows; real
/// off-diagonal entries (the usual case) take the cheaper kernel.
struct SplitOp {
    n: usize,
    diag: Vec<C64>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
    real: bool,
}

impl SplitOp {
    fn new(op: &Operator) -> Self {
        let n = op.dim();
        let mut diag = vec![ZERO; n];
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for i in 0..n {
            let (c, v) = op.row(i);
            for (&j, &a) in c.iter().zip(v) {
                if i == j {
                    diag[i] = a;
                } else {
                    cols.push(j);
                    vals.push(a);
                }
            }
            row_ptr.push(cols.len());
        }
        let real = vals.iter().all(|v| v.im == 0.0);
        Self {
            n,
            diag,
            row_ptr,
            cols,
            vals,
            real,
        }
    }

    /// `out = self · m` for dense row-major `m`.
    fn mul_dense_into(&self, m: &[C64], out: &mut [C64]) {
        let n = self.n;
        for i in 0..n {
            let dst = &mut out[i * n..(i + 1) * n];
            let d = self.diag[i];
            for (o, &s) in dst.iter_mut().zip(&m[i * n..(i + 1) * n]) {
                *o = d * s;
            }
            let range = self.row_ptr[i]..self.row_ptr[i + 1];
            for (&k, &a) in self.cols[range.clone()].iter().zip(&self.vals[range]) {
                let src = &m[k * n..(k + 1) * n];
                if self.real {
                    let a = a.re;
                    for (o, &s) in dst.iter_mut().zip(src) {
                        *o += s * a;
                    }
                } else {
                    for (o, &s) in dst.iter_mut().zip(src) {
                        *o += a * s;
                    }
                }
            }
        }
    }
}

struct DensityRhs {
    n: usize,
    h_eff: SplitOp,
    jumps: Vec<Jump>,
    /// `Σ γ zᵢ·conj(zⱼ)` over diagonal jump operators, applied elementwise.
    diag_weights: Option<Vec<C64>>,
    x: Vec<C64>,
}

const TILE: usize = 32;

impl DensityRhs {
    fn new(h: &Operator, collapse: &[(Operator, f64)]) -> Result<Self> {
        let n = h.dim();
        let mut h_eff = h.clone();
        let mut jumps = Vec::new();
        let mut diag_weights: Option<Vec<C64>> = None;
        for (l, rate) in collapse {
            let ldl = l.adjoint().matmul(l)?;
            h_eff = h_eff.sub(&ldl.scale(C64::new(0.0, 0.5 * rate)))?;
            if l.iter().all(|(i, j, _)| i == j) {
                let z: Vec<C64> = (0..n).map(|i| l.get(i, i)).collect();
                let w = diag_weights.get_or_insert_with(|| vec![ZERO; n * n]);
                for i in 0..n {
                    for j in 0..n {
                        w[i * n + j] += z[i] * z[j].conj() * *rate;
                    }
                }
                continue;
            }
            jumps.push(if l.is_row_monomial() {
                Jump::Monomial {
                    rate: *rate,
                    entries: l.iter().collect(),
                    real: l.iter().all(|(_, _, v)| v.im == 0.0),
                }
            } else {
                Jump::General {
                    rate: *rate,
                    op: l.clone(),
                    scratch: vec![ZERO; n * n],
                    scratch2: vec![ZERO; n * n],
                }
            });
        }
        Ok(Self {
            n,
            h_eff: SplitOp::new(&h_eff),
            jumps,
            diag_weights,
            x: vec![ZERO; n * n],
        })
    }
}

impl Rhs for DensityRhs {
    fn eval(&mut self, rho: &[C64], out: &mut [C64]) {
        let n = self.n;
        self.h_eff.mul_dense_into(rho, &mut self.x);
        let x = &self.x;
        // −i(X − X†), tiled so the transposed reads stay in cache
        for bi in (0..n).step_by(TILE) {
            for bj in (0..n).step_by(TILE) {
                for i in bi..(bi + TILE).min(n) {
                    for j in bj..(bj + TILE).min(n) {
                        let a = x[i * n + j] - x[j * n + i].conj();
                        out[i * n + j] = C64::new(a.im, -a.re);
                    }
                }
            }
        }
        if let Some(w) = &self.diag_weights {
            for ((o, &wij), &r) in out.iter_mut().zip(w).zip(rho) {
                *o += wij * r;
            }
        }
        for jump in &mut self.jumps {
            match jump {
                Jump::Monomial { rate, entries, real } => {
                    for &(i, ci, vi) in entries.iter() {
                        let row = &rho[ci * n..(ci + 1) * n];
                        let dst = &mut out[i * n..(i + 1) * n];
                        if *real {
                            let s = vi.re * *rate;
                            for &(j, cj, vj) in entries.iter() {
                                dst[j] += row[cj] * (s * vj.re);
                            }
                        } else {
                            let s = vi * *rate;
                            for &(j, cj, vj) in entries.iter() {
                                dst[j] += s * vj.conj() * row[cj];
                            }
                        }
                    }
                }
                Jump::General {
                    rate,
                    op,
                    scratch,
                    scratch2,
                } => {
                    // L·(L·ρ)† = L ρ L† for Hermitian ρ
                    op.mul_dense_into(rho, scratch);
                    for i in 0..n {
                        for j in 0..n {
                            scratch2[i * n + j] = scratch[j * n + i].conj();
                        }
                    }
                    op.mul_dense_into(scratch2, scratch);
                    for (o, s) in out.iter_mut().zip(scratch.iter()) {
                        *o += s * *rate;
                    }
                }
            }
        }
    }
}

struct VectorRhs {
    h: Operator,
}

impl Rhs for VectorRhs {
    fn eval(&mut self, psi: &[C64], out: &mut [C64]) {
        self.h.apply_into(psi, out).expect("dimension checked");
        for z in out.iter_mut() {
            *z = C64::new(z.im, -z.re);
        }
    }
}

// Dormand–Prince tableau
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

struct Stepper {
    method: Method,
    dt: f64,
    rel_tol: f64,
    abs_tol: f64,
    k: Vec<Vec<C64>>,
    tmp: Vec<C64>,
    /// Step carried between intervals by the adaptive method.
    h_adapt: f64,
}

impl Stepper {
    fn new(config: &IntegratorConfig, dt: f64, len: usize) -> Self {
        let stages = match config.method {
            Method::Rk4 => 4,
            Method::Adaptive45 => 7,
        };
        Self {
            method: config.method,
            dt,
            rel_tol: config.rel_tol,
            abs_tol: config.abs_tol,
            k: vec![vec![ZERO; len]; stages],
            tmp: vec![ZERO; len],
            h_adapt: dt,
        }
    }

    /// Advances `y` from `t0` to `t1` (µs).
    fn advance<R: Rhs>(&mut self, rhs: &mut R, y: &mut [C64], t0: f64, t1: f64) -> Result<()> {
        let len = t1 - t0;
        if len <= 0.0 {
            return Ok(());
        }
        match self.method {
            Method::Rk4 => {
                let m = (len / self.dt - 1e-9).ceil().max(1.0) as usize;
                let h = len / m as f64;
                for _ in 0..m {
                    self.rk4_step(rhs, y, h);
                }
                Ok(())
            }
            Method::Adaptive45 => self.adaptive(rhs, y, t0, t1),
        }
    }

    fn rk4_step<R: Rhs>(&mut self, rhs: &mut R, y: &mut [C64], h: f64) {
        let (k1, rest) = self.k.split_at_mut(1);
        let (k2, rest) = rest.split_at_mut(1);
        let (k3, k4) = rest.split_at_mut(1);
        let (k1, k2, k3, k4) = (&mut k1[0], &mut k2[0], &mut k3[0], &mut k4[0]);
        let tmp = &mut self.tmp;
        rhs.eval(y, k1);
        for i in 0..y.len() {
            tmp[i] = y[i] + k1[i] * (0.5 * h);
        }
        rhs.eval(tmp, k2);
        for i in 0..y.len() {
            tmp[i] = y[i] + k2[i] * (0.5 * h);
        }
        rhs.eval(tmp, k3);
        for i in 0..y.len() {
            tmp[i] = y[i] + k3[i] * h;
        }
        rhs.eval(tmp, k4);
        let h6 = h / 6.0;
        for i in 0..y.len() {
            y[i] += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * h6;
        }
    }

    fn adaptive<R: Rhs>(&mut self, rhs: &mut R, y: &mut [C64], t0: f64, t1: f64) -> Result<()> {
        let n = y.len();
        let mut t = t0;
        let mut y_new = vec![ZERO; n];
        while t < t1 {
            let remaining = t1 - t;
            let mut h = self.h_adapt.min(remaining);
            let last = h >= remaining * (1.0 - 1e-12);
            if last {
                h = remaining;
            }
            if h < 1e-12 {
                return Err(Error::StepUnderflow(t));
            }
            rhs.eval(y, &mut self.k[0]);
            for s in 1..7 {
                for i in 0..n {
                    let mut acc = y[i];
                    for (j, &a) in DP_A[s][..s].iter().enumerate() {
                        if a != 0.0 {
                            acc += self.k[j][i] * (a * h);
                        }
                    }
                    self.tmp[i] = acc;
                }
                if s == 6 {
                    y_new.copy_from_slice(&self.tmp);
                }
                rhs.eval(&self.tmp, &mut self.k[s]);
            }
            let mut err: f64 = 0.0;
            for i in 0..n {
                let mut e = ZERO;
                for (s, &w) in DP_E.iter().enumerate() {
                    if w != 0.0 {
                        e += self.k[s][i] * (w * h);
                    }
                }
                let scale = self.abs_tol + self.rel_tol * y[i].norm().max(y_new[i].norm());
                err = err.max(e.norm() / scale);
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            if err <= 1.0 {
                y.copy_from_slice(&y_new);
                t = if last { t1 } else { t + h };
                if !last {
                    self.h_adapt = (h * factor).min(self.dt * 1e3);
                }
            } else {
                self.h_adapt = h * factor;
            }
        }
        Ok(())
    }
}

/// Exact propagator of a constant Hermitian Hamiltonian.
struct Spectral {
    vecs: DMatrix<C64>,
    vals: Vec<f64>,
}

impl Spectral {
    fn new(h: &Operator) -> Result<Self> {
        let eig = h.to_dense()?.symmetric_eigen();
        Ok(Self {
            vecs: eig.eigenvectors,
            vals: eig.eigenvalues.iter().copied().collect(),
        })
    }

    fn apply(&self, psi: &mut [C64], tau: f64) {
        let n = psi.len();
        let mut c = vec![ZERO; n];
        for k in 0..n {
            let mut acc = ZERO;
            for i in 0..n {
                acc += self.vecs[(i, k)].conj() * psi[i];
            }
            c[k] = acc * C64::from_polar(1.0, -self.vals[k] * tau);
        }
        for i in 0..n {
            let mut acc = ZERO;
            for k in 0..n {
                acc += self.vecs[(i, k)] * c[k];
            }
            psi[i] = acc;
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Repr {
    Vector,
    Density,
}

/// Result of a run before states are wrapped.
struct RawRun {
    times: Vec<f64>,
    observables: IndexMap<String, Vec<f64>>,
    states: Vec<Vec<C64>>,
}

fn check_samples(sample_times: &[f64], span: f64) -> Result<()> {
    for (k, &t) in sample_times.iter().enumerate() {
        if !t.is_finite() || t < -TIME_EPS || t > span + TIME_EPS {
            return Err(Error::SampleOutOfRange { time_us: t, span_us: span });
        }
        if k > 0 && t < sample_times[k - 1] {
            return Err(Error::validation("sample_times", "must be ascending"));
        }
    }
    Ok(())
}

/// Multiplies basis components by `exp(i·Δω·t·N)` (vector) or the matching
/// two-sided phase (density), moving from one rotating frame to another.
fn change_frame(y: &mut [C64], repr: Repr, number: &[f64], from_ghz: f64, to_ghz: f64, t: f64) {
    if from_ghz == to_ghz {
        return;
    }
    let w = 2.0 * PI * 1e3 * (to_ghz - from_ghz) * t;
    let n = number.len();
    match repr {
        Repr::Vector => {
            for i in 0..n {
                y[i] *= C64::from_polar(1.0, w * number[i]);
            }
        }
        Repr::Density => {
            for i in 0..n {
                for j in 0..n {
                    let dn = number[i] - number[j];
                    if dn != 0.0 {
                        y[i * n + j] *= C64::from_polar(1.0, w * dn);
                    }
                }
            }
        }
    }
}

fn apply_flip(y: &mut [C64], repr: Repr, op: &Operator, forbidden: &[usize]) -> Result<()> {
    let n = op.dim();
    let weight = |i: usize| match repr {
        Repr::Vector => y[i].norm_sqr(),
        Repr::Density => y[i * n + i].re.abs(),
    };
    if let Some(&i) = forbidden.iter().find(|&&i| weight(i) > 1e-12) {
        return Err(Error::LeavesSubspace(format!(
            "bit flip with weight {:.3e} on basis state {i}",
            weight(i)
        )));
    }
    match repr {
        Repr::Vector => {
            let v = op.apply(y)?;
            y.copy_from_slice(&v);
        }
        Repr::Density => {
            // X ρ X† for a Hermitian flip
            let mut a = vec![ZERO; n * n];
            op.mul_dense_into(y, &mut a);
            let mut at = vec![ZERO; n * n];
            for i in 0..n {
                for j in 0..n {
                    at[i * n + j] = a[j * n + i].conj();
                }
            }
            op.mul_dense_into(&at, &mut a);
            y.copy_from_slice(&a);
        }
    }
    Ok(())
}

struct Run<'a> {
    space: &'a Space,
    device: &'a DeviceSpec,
    schedule: &'a Schedule,
    config: &'a IntegratorConfig,
    dissipation: Dissipation,
    repr: Repr,
    /// Exact propagation for vector runs.
    spectral: bool,
}

impl Run<'_> {
    fn execute(&self, mut y: Vec<C64>, sample_times: &[f64], labels: &[String]) -> Result<RawRun> {
        self.config.validate()?;
        let span = self.schedule.span_us();
        check_samples(sample_times, span)?;
        let n = self.space.dim();
        let number = self.space.number();
        let weights = self.space.population_weights();
        let collapse = match (self.repr, self.dissipation) {
            (Repr::Density, Dissipation::Device) => self.space.collapse(self.device)?,
            _ => Vec::new(),
        };
        let dt = step_size(self.schedule, self.device, self.config, self.dissipation);
        let mut stepper = Stepper::new(self.config, dt, y.len());
        let boundaries = self.schedule.boundaries();
        let device_frame = self.device.frame_freq_ghz;
        let mut frame = device_frame;

        let mut out = RawRun {
            times: Vec::with_capacity(sample_times.len()),
            observables: labels
                .iter()
                .map(|l| (l.clone(), Vec::with_capacity(sample_times.len())))
                .collect(),
            states: Vec::new(),
        };
        let mut next = 0usize;

        let record = |y: &[C64], t: f64, frame: f64, out: &mut RawRun| {
            out.times.push(t);
            for (w, vals) in weights.iter().zip(out.observables.values_mut()) {
                let p: f64 = w
                    .iter()
                    .map(|&(i, q)| {
                        q * match self.repr {
                            Repr::Vector => y[i].norm_sqr(),
                            Repr::Density => y[i * n + i].re,
                        }
                    })
                    .sum();
                vals.push(p);
            }
            if self.config.store_states {
                let mut s = y.to_vec();
                change_frame(&mut s, self.repr, &number, frame, device_frame, t);
                out.states.push(s);
            }
        };

        let at_boundary = |k: usize, y: &mut Vec<C64>, frame: &mut f64, next: &mut usize, out: &mut RawRun| -> Result<()> {
            let t = boundaries[k];
            for p in self.schedule.preps.iter().filter(|p| p.before_segment == k) {
                match p.action {
                    PrepAction::PiX => {
                        // pulses are defined in the device frame
                        change_frame(y, self.repr, &number, *frame, device_frame, t);
                        *frame = device_frame;
                        let (op, forbidden) = self.space.flip(p.qubit)?;
                        apply_flip(y, self.repr, &op, &forbidden)?;
                    }
                }
            }
            while *next < sample_times.len() && sample_times[*next] <= t + TIME_EPS {
                record(y, sample_times[*next], *frame, out);
                *next += 1;
            }
            Ok(())
        };

        at_boundary(0, &mut y, &mut frame, &mut next, &mut out)?;
        for (k, seg) in self.schedule.segments.iter().enumerate() {
            let (t0, t1) = (boundaries[k], boundaries[k + 1]);
            let seg_frame = segment_frame(self.device, seg);
            change_frame(&mut y, self.repr, &number, frame, seg_frame, t0);
            frame = seg_frame;
            let h = self.space.hamiltonian(self.device, seg)?;
            let mut cursor = t0;
            if self.spectral {
                let prop = Spectral::new(&h)?;
                while next < sample_times.len() && sample_times[next] < t1 - TIME_EPS {
                    let ts = sample_times[next];
                    prop.apply(&mut y, ts - cursor);
                    cursor = ts;
                    record(&y, ts, frame, &mut out);
                    next += 1;
                }
                prop.apply(&mut y, t1 - cursor);
            } else {
                match self.repr {
                    Repr::Density => {
                        let mut rhs = DensityRhs::new(&h, &collapse)?;
                        while next < sample_times.len() && sample_times[next] < t1 - TIME_EPS {
                            let ts = sample_times[next];
                            stepper.advance(&mut rhs, &mut y, cursor, ts)?;
                            cursor = ts;
                            record(&y, ts, frame, &mut out);
                            next += 1;
                        }
                        stepper.advance(&mut rhs, &mut y, cursor, t1)?;
                    }
                    Repr::Vector => {
                        let mut rhs = VectorRhs { h };
                        while next < sample_times.len() && sample_times[next] < t1 - TIME_EPS {
                            let ts = sample_times[next];
                            stepper.advance(&mut rhs, &mut y, cursor, ts)?;
                            cursor = ts;
                            record(&y, ts, frame, &mut out);
                            next += 1;
                        }
                        stepper.advance(&mut rhs, &mut y, cursor, t1)?;
                    }
                }
            }
            at_boundary(k + 1, &mut y, &mut frame, &mut next, &mut out)?;
        }
        debug_assert_eq!(next, sample_times.len());
        Ok(out)
    }
}

fn check_layout(state: &State, device: &DeviceSpec) -> Result<SystemLayout> {
    let layout = build_layout(device)?;
    if state.layout() != &layout {
        return Err(Error::InvalidState(format!(
            "state layout (dim {}) does not match the device layout (dim {})",
            state.dim(),
            layout.total_dim()
        )));
    }
    Ok(layout)
}

fn wrap_full(raw: RawRun, layout: &SystemLayout, kind: StateKind, store: bool) -> Trajectory {
    let states = store.then(|| {
        raw.states
            .into_iter()
            .map(|d| State::from_parts_unchecked(layout.clone(), kind, d))
            .collect()
    });
    Trajectory {
        times: raw.times,
        observables: raw.observables,
        states,
    }
}

/// Lindblad evolution with the device's decay and dephasing channels.
pub fn evolve_master(
    rho0: &State,
    schedule: &Schedule,
    device: &DeviceSpec,
    config: &IntegratorConfig,
    sample_times: &[f64],
) -> Result<Trajectory> {
    evolve_master_with(rho0, schedule, device, config, sample_times, Dissipation::Device)
}

/// [`evolve_master`] with dissipation selectable. A pure initial state is
/// converted to a density matrix.
pub fn evolve_master_with(
    rho0: &State,
    schedule: &Schedule,
    device: &DeviceSpec,
    config: &IntegratorConfig,
    sample_times: &[f64],
    dissipation: Dissipation,
) -> Result<Trajectory> {
    let layout = check_layout(rho0, device)?;
    if layout.total_dim() > MASTER_DIM_LIMIT {
        return Err(Error::LayoutTooLarge(format!(
            "master equation limited to dimension {MASTER_DIM_LIMIT}, got {}",
            layout.total_dim()
        )));
    }
    let space = Space::Full(layout.clone());
    let run = Run {
        space: &space,
        device,
        schedule,
        config,
        dissipation,
        repr: Repr::Density,
        spectral: false,
    };
    let raw = run.execute(rho0.to_density().data().to_vec(), sample_times, layout.labels())?;
    Ok(wrap_full(raw, &layout, StateKind::Density, config.store_states))
}

/// Schrödinger evolution. Systems up to dimension 256 use the exact
/// propagator of each segment; larger ones the configured integrator.
pub fn evolve_unitary(
    psi0: &State,
    schedule: &Schedule,
    device: &DeviceSpec,
    config: &IntegratorConfig,
    sample_times: &[f64],
) -> Result<Trajectory> {
    let layout = check_layout(psi0, device)?;
    if psi0.kind() != StateKind::Vector {
        return Err(Error::InvalidState("unitary evolution needs a state vector".into()));
    }
    let space = Space::Full(layout.clone());
    let run = Run {
        space: &space,
        device,
        schedule,
        config,
        dissipation: Dissipation::Off,
        repr: Repr::Vector,
        spectral: layout.total_dim() <= DENSE_LIMIT,
    };
    let raw = run.execute(psi0.data().to_vec(), sample_times, layout.labels())?;
    Ok(wrap_full(raw, &layout, StateKind::Vector, config.store_states))
}

fn check_subspace(state: &SubspaceState, device: &DeviceSpec) -> Result<Space> {
    device.validate()?;
    let labels = slot_labels(device);
    if state.labels != labels {
        return Err(Error::InvalidState("subspace state does not match the device".into()));
    }
    Ok(Space::Single {
        num_slots: labels.len(),
    })
}

fn wrap_subspace(raw: RawRun, device: &DeviceSpec, kind: StateKind, store: bool) -> Result<Trajectory> {
    let states = if store {
        let layout = build_layout(device)?;
        let labels = slot_labels(device);
        Some(
            raw.states
                .into_iter()
                .map(|data| {
                    SubspaceState {
                        labels: labels.clone(),
                        kind,
                        data,
                    }
                    .to_full(&layout)
                })
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    Ok(Trajectory {
        times: raw.times,
        observables: raw.observables,
        states,
    })
}

/// Master equation restricted to zero or one excitation. Exact for the
/// device Hamiltonian and its decay channels, which never raise the
/// excitation number; fails with `LeavesSubspace` for finite drives or bit
/// flips of a qubit while another slot is excited.
pub fn evolve_master_subspace(
    rho0: &SubspaceState,
    schedule: &Schedule,
    device: &DeviceSpec,
    config: &IntegratorConfig,
    sample_times: &[f64],
    dissipation: Dissipation,
) -> Result<Trajectory> {
    let space = check_subspace(rho0, device)?;
    let run = Run {
        space: &space,
        device,
        schedule,
        config,
        dissipation,
        repr: Repr::Density,
        spectral: false,
    };
    let raw = run.execute(rho0.to_density().data, sample_times, &slot_labels(device))?;
    wrap_subspace(raw, device, StateKind::Density, config.store_states)
}

/// Schrödinger evolution restricted to zero or one excitation, with the
/// exact propagator.
pub fn evolve_unitary_subspace(
    psi0: &SubspaceState,
    schedule: &Schedule,
    device: &DeviceSpec,
    config: &IntegratorConfig,
    sample_times: &[f64],
) -> Result<Trajectory> {
    let space = check_subspace(psi0, device)?;
    if psi0.kind != StateKind::Vector {
        return Err(Error::InvalidState("unitary evolution needs a state vector".into()));
    }
    let run = Run {
        space: &space,
        device,
        schedule,
        config,
        dissipation: Dissipation::Off,
        repr: Repr::Vector,
        spectral: space.dim() <= DENSE_LIMIT,
    };
    let raw = run.execute(psi0.data.clone(), sample_times, &slot_labels(device))?;
    wrap_subspace(raw, device, StateKind::Vector, config.store_states)
}
