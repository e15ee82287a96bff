//! Device description and the rotating-frame Hamiltonian of two coupled
//! transmons, each with its own ladder of acoustic modes.
//!
//! Units: frequencies in the device description are linear (GHz for qubit and
//! mode frequencies, MHz for splittings). Generated operators carry angular
//! frequency in rad/µs with ħ = 1, so a splitting `2g` in MHz becomes a
//! Hamiltonian coefficient `g = 2π·two_g/2`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::opalg::{self, embed_at, Operator, SlotKind, SystemLayout, C64};

/// Which of the two transmons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum QubitId {
    Q1,
    Q2,
}

impl QubitId {
    pub fn index(self) -> usize {
        match self {
            QubitId::Q1 => 0,
            QubitId::Q2 => 1,
        }
    }

    pub fn other(self) -> Self {
        match self {
            QubitId::Q1 => QubitId::Q2,
            QubitId::Q2 => QubitId::Q1,
        }
    }

    pub fn number(self) -> u8 {
        self.index() as u8 + 1
    }

    pub const BOTH: [QubitId; 2] = [QubitId::Q1, QubitId::Q2];
}

impl TryFrom<u8> for QubitId {
    type Error = String;

    fn try_from(n: u8) -> std::result::Result<Self, String> {
        match n {
            1 => Ok(QubitId::Q1),
            2 => Ok(QubitId::Q2),
            _ => Err(format!("qubit must be 1 or 2, got {n}")),
        }
    }
}

impl From<QubitId> for u8 {
    fn from(q: QubitId) -> u8 {
        q.number()
    }
}

impl std::fmt::Display for QubitId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "qubit{}", self.number())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QubitSpec {
    pub label: String,
    pub omega_op_ghz: f64,
    pub tune_min_ghz: f64,
    pub tune_max_ghz: f64,
    pub t1_us: f64,
    pub t2_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    pub label: String,
    pub omega_ghz: f64,
    /// Full vacuum-Rabi splitting with the owning qubit.
    pub two_g_mhz: f64,
    pub t1_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSpec {
    pub qubit1: QubitSpec,
    pub qubit2: QubitSpec,
    pub modes1: Vec<ModeSpec>,
    pub modes2: Vec<ModeSpec>,
    /// Full qubit–qubit splitting `2J`.
    pub qq_two_g_mhz: f64,
    pub frame_freq_ghz: f64,
    pub fock_dim: usize,
    /// Stray splitting between each qubit and the other qubit's modes.
    pub cross_two_g_mhz: f64,
}

/// Decay or dephasing channel `rate · D[op]`.
#[derive(Debug, Clone)]
pub struct CollapseOp {
    pub label: String,
    pub op: Operator,
    /// 1/µs, never negative.
    pub rate: f64,
}

/// Pure dephasing rate `Γφ = 1/T2 − 1/(2·T1)` clamped at zero. The flag is
/// set when clamping happened.
pub fn pure_dephasing_rate(t1_us: f64, t2_us: f64) -> (f64, bool) {
    let raw = 1.0 / t2_us - 1.0 / (2.0 * t1_us);
    if raw < 0.0 {
        (0.0, true)
    } else {
        (raw, false)
    }
}

/// Linear MHz → angular rad/µs.
pub fn angular(mhz: f64) -> f64 {
    2.0 * PI * mhz
}

/// Angular detuning in rad/µs of `freq_ghz` from `frame_ghz`.
pub fn detuning(freq_ghz: f64, frame_ghz: f64) -> f64 {
    2.0 * PI * 1e3 * (freq_ghz - frame_ghz)
}

/// Ladder of modes with a fixed spacing anchored at `anchor_ghz`, indices
/// `k_min..=k_max` relative to the anchor. Frequencies are rounded to 0.1 MHz.
pub fn mode_ladder(
    prefix: &str,
    anchor_ghz: f64,
    spacing_ghz: f64,
    k_range: std::ops::RangeInclusive<i32>,
    two_g_mhz: f64,
    t1_us: f64,
) -> Vec<ModeSpec> {
    k_range
        .enumerate()
        .map(|(i, k)| ModeSpec {
            label: format!("{prefix}_{i}"),
            omega_ghz: ((anchor_ghz + spacing_ghz * k as f64) * 1e4).round() / 1e4,
            two_g_mhz,
            t1_us,
        })
        .collect()
}

/// Frequency of the acoustic mode used for the swap experiments.
pub const TRANSFER_MODE_GHZ: f64 = 3.7885;
/// Mode spacing of the shipped device.
pub const REFERENCE_FSR_GHZ: f64 = 0.022;

/// The measured device: operating points, coherence times and couplings,
/// with both acoustic ladders spanning the tuning range at the measured
/// spacing and anchored on the transfer mode.
pub fn reference_device() -> DeviceSpec {
    let ladder = |prefix: &str, two_g, t1| {
        mode_ladder(prefix, TRANSFER_MODE_GHZ, REFERENCE_FSR_GHZ, -8..=32, two_g, t1)
    };
    DeviceSpec {
        qubit1: QubitSpec {
            label: "q1".into(),
            omega_op_ghz: 3.7778,
            tune_min_ghz: 3.7,
            tune_max_ghz: 4.5,
            t1_us: 2.2,
            t2_us: 4.41,
        },
        qubit2: QubitSpec {
            label: "q2".into(),
            omega_op_ghz: 3.6673,
            tune_min_ghz: 3.6673,
            tune_max_ghz: 4.5,
            t1_us: 2.41,
            t2_us: 1.02,
        },
        modes1: ladder("m1", 2.55, 0.380),
        modes2: ladder("m2", 2.85, 0.320),
        qq_two_g_mhz: 16.7,
        frame_freq_ghz: 3.7778,
        fock_dim: 2,
        cross_two_g_mhz: 0.0,
    }
}

impl DeviceSpec {
    pub fn qubit(&self, q: QubitId) -> &QubitSpec {
        match q {
            QubitId::Q1 => &self.qubit1,
            QubitId::Q2 => &self.qubit2,
        }
    }

    pub fn qubit_mut(&mut self, q: QubitId) -> &mut QubitSpec {
        match q {
            QubitId::Q1 => &mut self.qubit1,
            QubitId::Q2 => &mut self.qubit2,
        }
    }

    pub fn modes(&self, q: QubitId) -> &[ModeSpec] {
        match q {
            QubitId::Q1 => &self.modes1,
            QubitId::Q2 => &self.modes2,
        }
    }

    pub fn modes_mut(&mut self, q: QubitId) -> &mut Vec<ModeSpec> {
        match q {
            QubitId::Q1 => &mut self.modes1,
            QubitId::Q2 => &mut self.modes2,
        }
    }

    pub fn operating_freqs(&self) -> [f64; 2] {
        [self.qubit1.omega_op_ghz, self.qubit2.omega_op_ghz]
    }

    pub fn num_modes(&self) -> usize {
        self.modes1.len() + self.modes2.len()
    }

    /// Owner, position within the owner's ladder, and spec of a mode.
    pub fn find_mode(&self, label: &str) -> Option<(QubitId, usize, &ModeSpec)> {
        QubitId::BOTH.into_iter().find_map(|q| {
            self.modes(q)
                .iter()
                .position(|m| m.label == label)
                .map(|i| (q, i, &self.modes(q)[i]))
        })
    }

    /// Mode of `q`'s ladder closest to `freq_ghz`.
    pub fn nearest_mode(&self, q: QubitId, freq_ghz: f64) -> Option<&ModeSpec> {
        self.modes(q).iter().min_by(|a, b| {
            (a.omega_ghz - freq_ghz)
                .abs()
                .total_cmp(&(b.omega_ghz - freq_ghz).abs())
        })
    }

    /// Median spacing of `q`'s ladder; `None` with fewer than two modes.
    pub fn fsr_ghz(&self, q: QubitId) -> Option<f64> {
        let modes = self.modes(q);
        if modes.len() < 2 {
            return None;
        }
        let mut gaps: Vec<f64> = modes.windows(2).map(|w| w[1].omega_ghz - w[0].omega_ghz).collect();
        gaps.sort_by(f64::total_cmp);
        let n = gaps.len();
        Some(if n % 2 == 1 {
            gaps[n / 2]
        } else {
            0.5 * (gaps[n / 2 - 1] + gaps[n / 2])
        })
    }

    pub fn dephasing_rate(&self, q: QubitId) -> (f64, bool) {
        let spec = self.qubit(q);
        pure_dephasing_rate(spec.t1_us, spec.t2_us)
    }

    /// SHA-256 over the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("device serializes");
        hex::encode(Sha256::digest(bytes))
    }

    /// Checks every invariant; returns non-fatal warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        let finite = |field: String, v: f64| -> Result<()> {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::validation(field, "must be finite"))
            }
        };
        let positive = |field: String, v: f64| -> Result<()> {
            finite(field.clone(), v)?;
            if v > 0.0 {
                Ok(())
            } else {
                Err(Error::validation(field, format!("must be > 0, got {v}")))
            }
        };
        let non_negative = |field: String, v: f64| -> Result<()> {
            finite(field.clone(), v)?;
            if v >= 0.0 {
                Ok(())
            } else {
                Err(Error::validation(field, format!("must be ≥ 0, got {v}")))
            }
        };

        let mut labels: Vec<&str> = Vec::new();
        for q in QubitId::BOTH {
            let name = format!("qubit{}", q.number());
            let s = self.qubit(q);
            positive(format!("{name}.omega_op"), s.omega_op_ghz)?;
            positive(format!("{name}.tune_min"), s.tune_min_ghz)?;
            positive(format!("{name}.tune_max"), s.tune_max_ghz)?;
            positive(format!("{name}.T1"), s.t1_us)?;
            positive(format!("{name}.T2"), s.t2_us)?;
            if !(s.tune_min_ghz <= s.omega_op_ghz && s.omega_op_ghz <= s.tune_max_ghz) {
                return Err(Error::validation(
                    format!("{name}.omega_op"),
                    format!(
                        "operating point {} GHz outside tuning range [{}, {}] GHz",
                        s.omega_op_ghz, s.tune_min_ghz, s.tune_max_ghz
                    ),
                ));
            }
            let (_, clamped) = self.dephasing_rate(q);
            if clamped {
                warnings.push(format!(
                    "{name}: 1/T2 - 1/(2 T1) = {:.6} 1/us is negative; pure dephasing clamped to 0",
                    1.0 / s.t2_us - 1.0 / (2.0 * s.t1_us)
                ));
            }
            labels.push(&s.label);

            let ladder = format!("modes{}", q.number());
            for (i, m) in self.modes(q).iter().enumerate() {
                positive(format!("{ladder}[{i}].omega"), m.omega_ghz)?;
                non_negative(format!("{ladder}[{i}].two_g"), m.two_g_mhz)?;
                positive(format!("{ladder}[{i}].T1"), m.t1_us)?;
                labels.push(&m.label);
            }
            if self
                .modes(q)
                .windows(2)
                .any(|w| w[1].omega_ghz < w[0].omega_ghz)
            {
                return Err(Error::validation(ladder, "modes must be sorted ascending in frequency"));
            }
        }
        let mut sorted = labels.clone();
        sorted.sort_unstable();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::validation("labels", format!("duplicate label `{}`", w[0])));
        }
        non_negative("qq_two_g".into(), self.qq_two_g_mhz)?;
        non_negative("cross_two_g".into(), self.cross_two_g_mhz)?;
        positive("frame_freq".into(), self.frame_freq_ghz)?;
        if self.fock_dim < 2 {
            return Err(Error::validation(
                "fock_dim",
                format!("must be ≥ 2, got {}", self.fock_dim),
            ));
        }
        for w in &warnings {
            log::debug!("{w}");
        }
        Ok(warnings)
    }

    pub(crate) fn check_freqs(&self, freqs: [f64; 2]) -> Result<()> {
        for q in QubitId::BOTH {
            let f = freqs[q.index()];
            let s = self.qubit(q);
            if !f.is_finite() {
                return Err(Error::validation(format!("{q} frequency"), "must be finite"));
            }
            let tol = 1e-12;
            if f < s.tune_min_ghz - tol || f > s.tune_max_ghz + tol {
                return Err(Error::OutOfRange {
                    qubit: q.to_string(),
                    freq_ghz: f,
                    min_ghz: s.tune_min_ghz,
                    max_ghz: s.tune_max_ghz,
                });
            }
        }
        Ok(())
    }

    /// Copy keeping a single mode of `q`'s ladder, the other ladder emptied,
    /// and the other qubit parked at the edge of its tuning range farthest
    /// from that mode. Used to look at one qubit–mode crossing on its own.
    pub fn isolated_mode_pair(&self, q: QubitId, mode_label: &str) -> Result<DeviceSpec> {
        let (owner, idx, _) = self
            .find_mode(mode_label)
            .ok_or_else(|| Error::UnknownMode(mode_label.to_string()))?;
        if owner != q {
            return Err(Error::validation(
                mode_label,
                format!("mode does not belong to {q}"),
            ));
        }
        let mut d = self.clone();
        let mode = d.modes(q)[idx].clone();
        *d.modes_mut(q) = vec![mode.clone()];
        d.modes_mut(q.other()).clear();
        let other = d.qubit_mut(q.other());
        other.omega_op_ghz = if (other.tune_max_ghz - mode.omega_ghz).abs()
            >= (other.tune_min_ghz - mode.omega_ghz).abs()
        {
            other.tune_max_ghz
        } else {
            other.tune_min_ghz
        };
        Ok(d)
    }

    /// Copy with both ladders removed.
    pub fn without_modes(&self) -> DeviceSpec {
        let mut d = self.clone();
        d.modes1.clear();
        d.modes2.clear();
        d
    }
}

/// Kept/dropped modes after restricting the ladders to frequency windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationReport {
    pub fsr_multiple: f64,
    pub windows1_ghz: Vec<(f64, f64)>,
    pub windows2_ghz: Vec<(f64, f64)>,
    pub kept1: Vec<String>,
    pub kept2: Vec<String>,
    pub dropped1: usize,
    pub dropped2: usize,
}

/// Frequency intervals (GHz) each qubit occupies during an experiment.
/// Points are degenerate intervals.
pub type Visited = [Vec<(f64, f64)>; 2];

/// Keeps the modes of each ladder lying within `fsr_multiple` spacings of
/// any frequency interval occupied by a qubit coupled to that ladder (its
/// owner, plus the other qubit when `cross_two_g_mhz` is nonzero). A ladder
/// with fewer than two modes has no spacing and is kept whole.
pub fn truncate_modes(device: &DeviceSpec, visited: &Visited, fsr_multiple: f64) -> (DeviceSpec, TruncationReport) {
    let mut out = device.clone();
    let mut windows: [Vec<(f64, f64)>; 2] = [Vec::new(), Vec::new()];
    let mut kept: [Vec<String>; 2] = [Vec::new(), Vec::new()];
    let mut dropped = [0usize; 2];
    for q in QubitId::BOTH {
        let k = q.index();
        let Some(fsr) = device.fsr_ghz(q) else {
            kept[k] = device.modes(q).iter().map(|m| m.label.clone()).collect();
            continue;
        };
        let margin = fsr_multiple * fsr;
        let mut spans: Vec<(f64, f64)> = visited[k].clone();
        if device.cross_two_g_mhz > 0.0 {
            spans.extend(visited[q.other().index()].iter().copied());
        }
        let mut spans: Vec<(f64, f64)> = spans
            .into_iter()
            .map(|(a, b)| (a.min(b) - margin, a.max(b) + margin))
            .collect();
        spans.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for (lo, hi) in spans {
            match merged.last_mut() {
                Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
                _ => merged.push((lo, hi)),
            }
        }
        let keep: Vec<ModeSpec> = device
            .modes(q)
            .iter()
            .filter(|m| {
                merged
                    .iter()
                    .any(|&(lo, hi)| m.omega_ghz >= lo - 1e-12 && m.omega_ghz <= hi + 1e-12)
            })
            .cloned()
            .collect();
        dropped[k] = device.modes(q).len() - keep.len();
        kept[k] = keep.iter().map(|m| m.label.clone()).collect();
        windows[k] = merged;
        *out.modes_mut(q) = keep;
    }
    let [kept1, kept2] = kept;
    let [windows1_ghz, windows2_ghz] = windows;
    (
        out,
        TruncationReport {
            fsr_multiple,
            windows1_ghz,
            windows2_ghz,
            kept1,
            kept2,
            dropped1: dropped[0],
            dropped2: dropped[1],
        },
    )
}

/// Composite layout `[q1, q2, modes1…, modes2…]`.
pub fn build_layout(device: &DeviceSpec) -> Result<SystemLayout> {
    device.validate()?;
    let mut slots = vec![
        (device.qubit1.label.clone(), SlotKind::Qubit, 2),
        (device.qubit2.label.clone(), SlotKind::Qubit, 2),
    ];
    for m in device.modes1.iter().chain(&device.modes2) {
        slots.push((m.label.clone(), SlotKind::Mode, device.fock_dim));
    }
    SystemLayout::new(slots)
}

/// Angular couplings `(slot_a, slot_b, g)` between slots in layout order.
/// Slot indices coincide with single-excitation basis indices.
pub(crate) fn couplings(device: &DeviceSpec) -> Vec<(usize, usize, f64)> {
    let m1 = device.modes1.len();
    let mut out = Vec::new();
    if device.qq_two_g_mhz > 0.0 {
        out.push((0, 1, angular(device.qq_two_g_mhz) / 2.0));
    }
    let cross = angular(device.cross_two_g_mhz) / 2.0;
    for (i, m) in device.modes1.iter().enumerate() {
        if m.two_g_mhz > 0.0 {
            out.push((0, 2 + i, angular(m.two_g_mhz) / 2.0));
        }
        if cross > 0.0 {
            out.push((1, 2 + i, cross));
        }
    }
    for (i, m) in device.modes2.iter().enumerate() {
        if m.two_g_mhz > 0.0 {
            out.push((1, 2 + m1 + i, angular(m.two_g_mhz) / 2.0));
        }
        if cross > 0.0 {
            out.push((0, 2 + m1 + i, cross));
        }
    }
    out
}

/// Bare angular detunings from `frame_ghz` of every slot, in layout order.
pub(crate) fn slot_detunings(device: &DeviceSpec, freqs: [f64; 2], frame_ghz: f64) -> Vec<f64> {
    let mut d = vec![detuning(freqs[0], frame_ghz), detuning(freqs[1], frame_ghz)];
    d.extend(
        device
            .modes1
            .iter()
            .chain(&device.modes2)
            .map(|m| detuning(m.omega_ghz, frame_ghz)),
    );
    d
}

/// Rotating-frame Hamiltonian at the given qubit frequencies.
///
/// `Δ₁/2·σz₁ + Δ₂/2·σz₂ + J(σ₊₁σ₋₂ + h.c.) + Σ Δₘ a†ₘaₘ + Σ g(a†σ₋ + aσ₊)`
/// with every detuning measured from `device.frame_freq_ghz`. Zero-point
/// terms are dropped. Stray couplings to the other qubit's modes are added
/// when `cross_two_g_mhz` is nonzero.
pub fn build_hamiltonian(device: &DeviceSpec, qubit_freqs: [f64; 2]) -> Result<Operator> {
    let layout = build_layout(device)?;
    device.check_freqs(qubit_freqs)?;
    hamiltonian_in_frame(device, &layout, qubit_freqs, device.frame_freq_ghz, None)
}

/// As [`build_hamiltonian`] but in an arbitrary frame, optionally with a
/// resonant drive `amplitude·σx` on one qubit (meaningful when the frame
/// co-rotates with that qubit).
pub(crate) fn hamiltonian_in_frame(
    device: &DeviceSpec,
    layout: &SystemLayout,
    qubit_freqs: [f64; 2],
    frame_ghz: f64,
    drive: Option<(QubitId, f64)>,
) -> Result<Operator> {
    let n = layout.total_dim();
    let det = slot_detunings(device, qubit_freqs, frame_ghz);
    let mut triplets: Vec<(usize, usize, C64)> = Vec::new();

    // diagonal: qubits contribute ±Δ/2, modes Δ·n
    for i in 0..n {
        let mut e = 0.0;
        for (s, &d) in det.iter().enumerate() {
            e += match layout.kinds()[s] {
                SlotKind::Qubit => {
                    if layout.digit(i, s) == 0 {
                        0.5 * d
                    } else {
                        -0.5 * d
                    }
                }
                SlotKind::Mode => d * layout.quanta(i, s) as f64,
            };
        }
        if e != 0.0 {
            triplets.push((i, i, C64::new(e, 0.0)));
        }
    }

    let lowering = |s: usize| -> Result<Operator> {
        match layout.kinds()[s] {
            SlotKind::Qubit => embed_at(&opalg::sigma_minus(), s, layout),
            SlotKind::Mode => embed_at(&opalg::ladder(layout.dims()[s])?, s, layout),
        }
    };
    for (a, b, g) in couplings(device) {
        // g (a† b + a b†) with a, b lowering operators of the two slots
        let la = lowering(a)?;
        let lb = lowering(b)?;
        let hop = la.adjoint().matmul(&lb)?;
        for (i, j, v) in hop.iter() {
            triplets.push((i, j, v * g));
            triplets.push((j, i, v.conj() * g));
        }
    }
    if let Some((q, amp)) = drive {
        let x = embed_at(&opalg::sigma_x(), q.index(), layout)?;
        triplets.extend(x.iter().map(|(i, j, v)| (i, j, v * amp)));
    }
    let h = Operator::from_triplets(n, triplets)?;
    debug_assert!(h.is_hermitian(1e-12));
    Ok(h)
}

/// Decay (`σ₋`, rate 1/T1) and pure dephasing (`σz`, rate Γφ/2) of each
/// qubit, then decay (`a`, rate 1/T1) of every mode.
pub fn build_collapse_ops(device: &DeviceSpec) -> Result<Vec<CollapseOp>> {
    let layout = build_layout(device)?;
    let mut ops = Vec::new();
    for q in QubitId::BOTH {
        let s = q.index();
        let spec = device.qubit(q);
        ops.push(CollapseOp {
            label: format!("{}.decay", spec.label),
            op: embed_at(&opalg::sigma_minus(), s, &layout)?,
            rate: 1.0 / spec.t1_us,
        });
        let (gamma_phi, _) = device.dephasing_rate(q);
        ops.push(CollapseOp {
            label: format!("{}.dephasing", spec.label),
            op: embed_at(&opalg::sigma_z(), s, &layout)?,
            rate: gamma_phi / 2.0,
        });
    }
    let a = opalg::ladder(device.fock_dim)?;
    for (k, m) in device.modes1.iter().chain(&device.modes2).enumerate() {
        ops.push(CollapseOp {
            label: format!("{}.decay", m.label),
            op: embed_at(&a, 2 + k, &layout)?,
            rate: 1.0 / m.t1_us,
        });
    }
    Ok(ops)
}

/// Total excitation number `Σσ₊σ₋ + Σa†a` as a diagonal operator.
pub fn excitation_number(layout: &SystemLayout) -> Operator {
    let diag: Vec<C64> = layout
        .total_quanta()
        .into_iter()
        .map(|q| C64::new(q as f64, 0.0))
        .collect();
    Operator::diagonal(&diag)
}

/// Hamiltonian restricted to one excitation, basis `[q1, q2, modes1…, modes2…]`.
///
/// Diagonal entries are the detunings of each excitation (energies measured
/// from the no-excitation state), off-diagonals the exchange couplings.
pub fn single_excitation_hamiltonian(device: &DeviceSpec, qubit_freqs: [f64; 2]) -> Result<DMatrix<f64>> {
    device.validate()?;
    device.check_freqs(qubit_freqs)?;
    Ok(single_excitation_in_frame(device, qubit_freqs, device.frame_freq_ghz))
}

pub(crate) fn single_excitation_in_frame(device: &DeviceSpec, qubit_freqs: [f64; 2], frame_ghz: f64) -> DMatrix<f64> {
    let det = slot_detunings(device, qubit_freqs, frame_ghz);
    let n = det.len();
    let mut h = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(det));
    for (a, b, g) in couplings(device) {
        h[(a, b)] += g;
        h[(b, a)] += g;
    }
    debug_assert_eq!(h.nrows(), n);
    h
}

/// Eigenvalues (ascending) of a real symmetric matrix.
#[cfg(test)]
pub(crate) fn sorted_eigenvalues(h: &DMatrix<f64>) -> Vec<f64> {
    let mut e: Vec<f64> = h.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    e.sort_by(f64::total_cmp);
    e
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_device(n1: usize, n2: usize) -> DeviceSpec {
        let mut d = reference_device();
        let k1 = d
            .modes1
            .iter()
            .position(|m| (m.omega_ghz - TRANSFER_MODE_GHZ).abs() < 1e-9)
            .unwrap();
        d.modes1 = d.modes1[k1 - n1 / 2..k1 - n1 / 2 + n1].to_vec();
        let k2 = d.modes2.iter().position(|m| (m.omega_ghz - 3.6785).abs() < 1e-9).unwrap();
        d.modes2 = d.modes2[k2 - n2 / 2..k2 - n2 / 2 + n2].to_vec();
        d
    }

    #[test]
    fn reference_values() {
        let d = reference_device();
        assert_eq!(d.qubit1.omega_op_ghz, 3.7778);
        assert_eq!(d.qubit2.omega_op_ghz, 3.6673);
        assert_eq!((d.qubit1.t1_us, d.qubit2.t1_us), (2.2, 2.41));
        assert_eq!((d.qubit1.t2_us, d.qubit2.t2_us), (4.41, 1.02));
        assert!(d.modes1.iter().all(|m| m.two_g_mhz == 2.55 && m.t1_us == 0.380));
        assert!(d.modes2.iter().all(|m| m.two_g_mhz == 2.85 && m.t1_us == 0.320));
        assert_eq!(d.qq_two_g_mhz, 16.7);
        assert!(d.modes1.iter().any(|m| m.omega_ghz == TRANSFER_MODE_GHZ));
        assert!((d.fsr_ghz(QubitId::Q1).unwrap() - 0.022).abs() < 1e-9);
        assert!((d.fsr_ghz(QubitId::Q2).unwrap() - 0.022).abs() < 1e-9);
        let warnings = d.validate().unwrap();
        assert_eq!(warnings.len(), 1, "{warnings:?}");
        assert!(warnings[0].starts_with("qubit1"));
    }

    #[test]
    fn layout_dimensions() {
        assert_eq!(build_layout(&small_device(1, 1)).unwrap().total_dim(), 16);
        assert_eq!(build_layout(&small_device(3, 3)).unwrap().total_dim(), 256);
        assert_eq!(build_layout(&small_device(0, 0)).unwrap().total_dim(), 4);
        let labels = build_layout(&small_device(2, 1)).unwrap().labels().to_vec();
        assert_eq!(labels[..2], ["q1".to_string(), "q2".to_string()]);
        assert!(labels[2].starts_with("m1_") && labels[4].starts_with("m2_"));
    }

    #[test]
    fn layout_rejects_invalid_spec() {
        let mut d = small_device(1, 1);
        d.fock_dim = 1;
        assert!(build_layout(&d).is_err());
        let mut d = small_device(2, 0);
        d.modes1.reverse();
        assert!(build_layout(&d).is_err());
    }

    #[test]
    fn qubit_qubit_splitting_at_resonance() {
        let d = small_device(0, 0);
        let f = 3.75;
        let h = build_hamiltonian(&d, [f, f]).unwrap();
        assert!(h.is_hermitian(0.0));
        let e = sorted_eigenvalues(&h.to_dense().unwrap().map(|z| z.re));
        // sectors: {gg}, {eg, ge}, {ee}; the single-excitation pair is e[1], e[2]
        let split_mhz = (e[2] - e[1]) / (2.0 * PI);
        assert!((split_mhz - 16.7).abs() / 16.7 < 1e-9, "{split_mhz}");
    }

    #[test]
    fn local_qubit_mode_splitting() {
        let d = small_device(1, 0);
        let d = d.isolated_mode_pair(QubitId::Q1, &d.modes1[0].label).unwrap();
        let mut z = d.clone();
        z.qq_two_g_mhz = 0.0;
        let h = single_excitation_hamiltonian(&z, [TRANSFER_MODE_GHZ, z.qubit2.omega_op_ghz]).unwrap();
        let e = sorted_eigenvalues(&h);
        // q2 is far away: the two lowest are the qubit–mode doublet
        let split = (e[1] - e[0]) / (2.0 * PI);
        assert!((split - 2.55).abs() < 1e-12, "{split}");
    }

    #[test]
    fn zero_couplings_give_diagonal_hamiltonian() {
        let mut d = small_device(2, 2);
        d.qq_two_g_mhz = 0.0;
        for m in d.modes1.iter_mut().chain(d.modes2.iter_mut()) {
            m.two_g_mhz = 0.0;
        }
        let h = build_hamiltonian(&d, [3.8, 3.7]).unwrap();
        assert!(h.iter().all(|(i, j, _)| i == j));
        let se = single_excitation_hamiltonian(&d, [3.8, 3.7]).unwrap();
        let mut expected = slot_detunings(&d, [3.8, 3.7], d.frame_freq_ghz);
        expected.sort_by(f64::total_cmp);
        assert_eq!(sorted_eigenvalues(&se), expected);
    }

    #[test]
    fn frequency_range_is_enforced() {
        let d = small_device(1, 1);
        assert!(matches!(
            build_hamiltonian(&d, [3.6, 3.7]),
            Err(Error::OutOfRange { .. })
        ));
        assert!(build_hamiltonian(&d, [f64::NAN, 3.7]).is_err());
        assert!(single_excitation_hamiltonian(&d, [3.8, 4.6]).is_err());
    }

    #[test]
    fn hamiltonian_conserves_excitations() {
        let mut d = small_device(2, 2);
        d.cross_two_g_mhz = 0.7;
        d.fock_dim = 3;
        let layout = build_layout(&d).unwrap();
        let h = build_hamiltonian(&d, [3.79, 3.70]).unwrap();
        let n = excitation_number(&layout);
        assert!(h.commutator(&n).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn collapse_rates() {
        let d = small_device(1, 1);
        let ops = build_collapse_ops(&d).unwrap();
        assert_eq!(ops.len(), 6);
        let rate = |l: &str| ops.iter().find(|c| c.label == l).unwrap().rate;
        assert!((rate("q1.decay") - 1.0 / 2.2).abs() < 1e-15);
        // qubit 1: 1/4.41 − 1/4.4 < 0 → clamped
        assert_eq!(rate("q1.dephasing"), 0.0);
        let gamma_phi_2: f64 = 1.0 / 1.02 - 1.0 / (2.0 * 2.41);
        assert!((gamma_phi_2 - 0.7729).abs() < 1e-4);
        assert!((rate("q2.dephasing") - gamma_phi_2 / 2.0).abs() < 1e-15);
        let m1 = &d.modes1[0].label;
        assert!((rate(&format!("{m1}.decay")) - 2.632).abs() < 1e-3);
        assert!(ops.iter().all(|c| c.rate >= 0.0));
    }

    #[test]
    fn single_excitation_block_matches_full_space() {
        let mut d = small_device(3, 2);
        d.cross_two_g_mhz = 0.4;
        let freqs = [3.7912, 3.6831];
        let layout = build_layout(&d).unwrap();
        let full = build_hamiltonian(&d, freqs).unwrap().to_dense().unwrap();
        let quanta = layout.total_quanta();
        let vac = quanta.iter().position(|&q| q == 0).unwrap();
        let e_vac = full[(vac, vac)].re;
        let idx: Vec<usize> = (0..layout.total_dim()).filter(|&i| quanta[i] == 1).collect();
        let block = DMatrix::from_fn(idx.len(), idx.len(), |a, b| full[(idx[a], idx[b])].re);
        let mut full_e: Vec<f64> = sorted_eigenvalues(&block).into_iter().map(|e| e - e_vac).collect();
        full_e.sort_by(f64::total_cmp);
        let fast = sorted_eigenvalues(&single_excitation_hamiltonian(&d, freqs).unwrap());
        assert_eq!(fast.len(), 2 + 5);
        for (a, b) in fast.iter().zip(&full_e) {
            assert!((a - b).abs() < 1e-10 * a.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn two_by_two_gap_with_detuning() {
        let d = small_device(1, 0);
        let mut d = d.isolated_mode_pair(QubitId::Q1, &d.modes1[0].label).unwrap();
        d.qq_two_g_mhz = 0.0;
        let delta_mhz = 2.55;
        let f1 = TRANSFER_MODE_GHZ + delta_mhz * 1e-3;
        let e = sorted_eigenvalues(&single_excitation_hamiltonian(&d, [f1, d.qubit2.omega_op_ghz]).unwrap());
        let gap = (e[1] - e[0]) / (2.0 * PI);
        let oracle = (delta_mhz * delta_mhz + 2.55 * 2.55).sqrt();
        assert!((gap - oracle).abs() < 1e-9);
        assert!((gap - 3.606).abs() < 1e-3);
    }

    #[test]
    fn frame_shift_moves_all_eigenvalues() {
        let d = small_device(2, 2);
        let mut shifted = d.clone();
        let delta = 0.0123;
        shifted.frame_freq_ghz += delta;
        let freqs = [3.80, 3.69];
        let a = sorted_eigenvalues(&single_excitation_hamiltonian(&d, freqs).unwrap());
        let b = sorted_eigenvalues(&single_excitation_hamiltonian(&shifted, freqs).unwrap());
        for (x, y) in a.iter().zip(&b) {
            assert!((y - x + detuning(d.frame_freq_ghz + delta, d.frame_freq_ghz)).abs() < 1e-10);
        }
        for k in 1..a.len() {
            assert!(((a[k] - a[k - 1]) - (b[k] - b[k - 1])).abs() < 1e-10);
        }
    }

    #[test]
    fn truncation_window() {
        let d = reference_device();
        let visited = [vec![(3.7778, 3.7778)], vec![(3.6673, 3.6673)]];
        let (t, report) = truncate_modes(&d, &visited, 2.0);
        // q1: 3.7778 ± 0.044 → 3.7445 … 3.8105
        assert_eq!(
            t.modes1.iter().map(|m| m.omega_ghz).collect::<Vec<_>>(),
            vec![3.7445, 3.7665, 3.7885, 3.8105]
        );
        assert_eq!(
            t.modes2.iter().map(|m| m.omega_ghz).collect::<Vec<_>>(),
            vec![3.6345, 3.6565, 3.6785, 3.7005]
        );
        assert_eq!(report.dropped1, d.modes1.len() - 4);
        assert_eq!(report.kept1.len(), 4);

        // disjoint windows stay disjoint
        let visited = [vec![(3.7778, 3.7778), (4.5, 4.5)], vec![]];
        let (t, report) = truncate_modes(&d, &visited, 1.0);
        assert_eq!(report.windows1_ghz.len(), 2);
        assert_eq!(
            t.modes1.iter().map(|m| m.omega_ghz).collect::<Vec<_>>(),
            vec![3.7665, 3.7885, 4.4925]
        );
        assert!(t.modes2.is_empty());

        // a stray coupling widens the other ladder's windows
        let mut c = d.clone();
        c.cross_two_g_mhz = 0.1;
        let visited = [vec![(3.7778, 3.7778)], vec![(4.0, 4.0)]];
        let (t, _) = truncate_modes(&c, &visited, 0.5);
        assert_eq!(
            t.modes1.iter().map(|m| m.omega_ghz).collect::<Vec<_>>(),
            vec![3.7885, 4.0085]
        );
    }

    #[test]
    fn device_hash_is_stable_and_sensitive() {
        let d = reference_device();
        assert_eq!(d.hash(), reference_device().hash());
        let mut e = d.clone();
        e.qq_two_g_mhz = 16.8;
        assert_ne!(d.hash(), e.hash());
    }
}
