//! Pulse sequences and their compilation into piecewise-constant schedules.
//!
//! Pulse amplitude is expressed directly as a qubit frequency; flux is not
//! modelled. Between elements both qubits sit at their operating points.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DeviceSpec, QubitId, Visited};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PiMode {
    /// Ideal instantaneous bit flip.
    #[default]
    Instantaneous,
    /// Resonant square drive `Ω·σx`, `Ω = 2π·drive_two_g/2`, lasting
    /// `duration_us`. A π rotation needs `duration = 1/(2·drive_two_g)`.
    Finite { duration_us: f64, drive_two_g_mhz: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwapTarget {
    /// A mode of the pulsed qubit's own ladder.
    Mode(String),
    /// The other qubit, held at its operating point.
    Qubit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PulseElement {
    PiPulse {
        qubit: QubitId,
        #[serde(default)]
        mode: PiMode,
    },
    FluxSquare {
        qubit: QubitId,
        target_freq_ghz: f64,
        duration_us: f64,
    },
    /// Square pulse onto the target's resonance for `half_periods` calibrated
    /// swap times.
    SwapSegment {
        qubit: QubitId,
        target: SwapTarget,
        half_periods: u32,
    },
    Idle {
        duration_us: f64,
    },
    /// Flux pulses on different qubits starting together. Each qubit returns
    /// to its operating point when its own pulse ends.
    Simultaneous { elements: Vec<PulseElement> },
}

impl PulseElement {
    pub fn pi(qubit: QubitId) -> Self {
        PulseElement::PiPulse {
            qubit,
            mode: PiMode::Instantaneous,
        }
    }

    pub fn flux(qubit: QubitId, target_freq_ghz: f64, duration_us: f64) -> Self {
        PulseElement::FluxSquare {
            qubit,
            target_freq_ghz,
            duration_us,
        }
    }

    pub fn swap_to_mode(qubit: QubitId, label: &str, half_periods: u32) -> Self {
        PulseElement::SwapSegment {
            qubit,
            target: SwapTarget::Mode(label.to_string()),
            half_periods,
        }
    }

    pub fn swap_to_qubit(qubit: QubitId, half_periods: u32) -> Self {
        PulseElement::SwapSegment {
            qubit,
            target: SwapTarget::Qubit,
            half_periods,
        }
    }
}

/// Resonant drive on one qubit during a segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Drive {
    pub qubit: QubitId,
    pub two_g_mhz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub duration_us: f64,
    pub qubit1_freq_ghz: f64,
    pub qubit2_freq_ghz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drive: Option<Drive>,
}

impl Segment {
    pub fn freqs(&self) -> [f64; 2] {
        [self.qubit1_freq_ghz, self.qubit2_freq_ghz]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrepAction {
    /// Ideal π rotation about x.
    PiX,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrepEvent {
    pub time_us: f64,
    /// Applied when the schedule reaches the start of this segment (or the
    /// end of the schedule when equal to the segment count).
    pub before_segment: usize,
    pub qubit: QubitId,
    pub action: PrepAction,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub segments: Vec<Segment>,
    pub preps: Vec<PrepEvent>,
}

impl Schedule {
    pub fn span_us(&self) -> f64 {
        self.segments.iter().map(|s| s.duration_us).sum()
    }

    /// Segment start times followed by the end of the schedule.
    pub fn boundaries(&self) -> Vec<f64> {
        let mut t = 0.0;
        let mut out = Vec::with_capacity(self.segments.len() + 1);
        out.push(0.0);
        for s in &self.segments {
            t += s.duration_us;
            out.push(t);
        }
        out
    }

    pub fn has_drive(&self) -> bool {
        self.segments.iter().any(|s| s.drive.is_some())
    }

    /// Frequencies each qubit takes, including its operating point.
    pub fn visited_freqs(&self, device: &DeviceSpec) -> Visited {
        let mut out: Visited = [Vec::new(), Vec::new()];
        let op = device.operating_freqs();
        for k in 0..2 {
            out[k].push((op[k], op[k]));
        }
        for s in &self.segments {
            for (k, f) in s.freqs().into_iter().enumerate() {
                if !out[k].contains(&(f, f)) {
                    out[k].push((f, f));
                }
            }
        }
        out
    }

    /// Appends the segments and preps of `other`, shifted to follow this one.
    pub fn append(&mut self, other: &Schedule) {
        let t0 = self.span_us();
        let k0 = self.segments.len();
        self.segments.extend(other.segments.iter().cloned());
        self.preps.extend(other.preps.iter().map(|p| PrepEvent {
            time_us: p.time_us + t0,
            before_segment: p.before_segment + k0,
            ..p.clone()
        }));
    }
}

/// Duration of a full population swap between `qubit` and the target at
/// exact resonance: `1/(2·two_g)` µs with the splitting in MHz.
pub fn calibrate_swap(device: &DeviceSpec, qubit: QubitId, target: &SwapTarget) -> Result<f64> {
    let two_g = match target {
        SwapTarget::Mode(label) => {
            let (owner, _, mode) = device
                .find_mode(label)
                .ok_or_else(|| Error::UnknownMode(label.clone()))?;
            if owner != qubit {
                return Err(Error::validation(
                    label.as_str(),
                    format!("mode belongs to {owner}, not {qubit}"),
                ));
            }
            mode.two_g_mhz
        }
        SwapTarget::Qubit => device.qq_two_g_mhz,
    };
    if two_g <= 0.0 {
        return Err(Error::validation(
            format!("{target:?}"),
            "cannot swap through a zero coupling",
        ));
    }
    Ok(1.0 / (2.0 * two_g))
}

fn check_duration(what: &str, d: f64) -> Result<()> {
    if d.is_finite() && d > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidSequence(format!("{what}: duration must be > 0, got {d}")))
    }
}

fn check_freq(device: &DeviceSpec, q: QubitId, f: f64) -> Result<()> {
    let s = device.qubit(q);
    if !f.is_finite() {
        return Err(Error::InvalidSequence(format!("{q}: non-finite target frequency")));
    }
    if f < s.tune_min_ghz - 1e-12 || f > s.tune_max_ghz + 1e-12 {
        return Err(Error::OutOfRange {
            qubit: q.to_string(),
            freq_ghz: f,
            min_ghz: s.tune_min_ghz,
            max_ghz: s.tune_max_ghz,
        });
    }
    Ok(())
}

/// Frequency and duration of a flux-type element, `None` for idle.
fn flux_step(device: &DeviceSpec, el: &PulseElement) -> Result<(Option<(QubitId, f64)>, f64)> {
    match el {
        PulseElement::FluxSquare {
            qubit,
            target_freq_ghz,
            duration_us,
        } => {
            check_duration("flux_square", *duration_us)?;
            check_freq(device, *qubit, *target_freq_ghz)?;
            Ok((Some((*qubit, *target_freq_ghz)), *duration_us))
        }
        PulseElement::SwapSegment {
            qubit,
            target,
            half_periods,
        } => {
            if *half_periods == 0 {
                return Err(Error::InvalidSequence("swap_segment: half_periods must be ≥ 1".into()));
            }
            let t = calibrate_swap(device, *qubit, target)? * *half_periods as f64;
            let f = match target {
                SwapTarget::Mode(label) => device.find_mode(label).expect("resolved above").2.omega_ghz,
                SwapTarget::Qubit => device.qubit(qubit.other()).omega_op_ghz,
            };
            check_freq(device, *qubit, f)?;
            Ok((Some((*qubit, f)), t))
        }
        PulseElement::Idle { duration_us } => {
            check_duration("idle", *duration_us)?;
            Ok((None, *duration_us))
        }
        _ => unreachable!("not a flux element"),
    }
}

/// Compiles a pulse sequence into a schedule.
pub fn compile(sequence: &[PulseElement], device: &DeviceSpec) -> Result<Schedule> {
    if sequence.is_empty() {
        return Err(Error::InvalidSequence("empty sequence".into()));
    }
    device.validate()?;
    let op = device.operating_freqs();
    let mut sched = Schedule::default();
    let mut t = 0.0;
    let segment = |duration_us: f64, freqs: [f64; 2], drive: Option<Drive>| Segment {
        duration_us,
        qubit1_freq_ghz: freqs[0],
        qubit2_freq_ghz: freqs[1],
        drive,
    };

    for el in sequence {
        match el {
            PulseElement::PiPulse { qubit, mode } => match mode {
                PiMode::Instantaneous => sched.preps.push(PrepEvent {
                    time_us: t,
                    before_segment: sched.segments.len(),
                    qubit: *qubit,
                    action: PrepAction::PiX,
                }),
                PiMode::Finite {
                    duration_us,
                    drive_two_g_mhz,
                } => {
                    check_duration("pi_pulse", *duration_us)?;
                    if !(drive_two_g_mhz.is_finite() && *drive_two_g_mhz > 0.0) {
                        return Err(Error::InvalidSequence(format!(
                            "pi_pulse: drive_two_g must be > 0, got {drive_two_g_mhz}"
                        )));
                    }
                    sched.segments.push(segment(
                        *duration_us,
                        op,
                        Some(Drive {
                            qubit: *qubit,
                            two_g_mhz: *drive_two_g_mhz,
                        }),
                    ));
                    t += duration_us;
                }
            },
            PulseElement::Simultaneous { elements } => {
                let mut steps: Vec<(QubitId, f64, f64)> = Vec::new();
                let mut idle: f64 = 0.0;
                for inner in elements {
                    match inner {
                        PulseElement::PiPulse {
                            qubit,
                            mode: PiMode::Instantaneous,
                        } => sched.preps.push(PrepEvent {
                            time_us: t,
                            before_segment: sched.segments.len(),
                            qubit: *qubit,
                            action: PrepAction::PiX,
                        }),
                        PulseElement::FluxSquare { .. }
                        | PulseElement::SwapSegment { .. }
                        | PulseElement::Idle { .. } => match flux_step(device, inner)? {
                            (Some((q, f)), d) => {
                                if steps.iter().any(|s| s.0 == q) {
                                    return Err(Error::OverlappingFlux(q.to_string()));
                                }
                                steps.push((q, f, d));
                            }
                            (None, d) => idle = idle.max(d),
                        },
                        other => {
                            return Err(Error::InvalidSequence(format!(
                                "element not allowed inside simultaneous: {other:?}"
                            )))
                        }
                    }
                }
                let mut ends: Vec<f64> = steps.iter().map(|s| s.2).collect();
                ends.push(idle);
                ends.retain(|&e| e > 0.0);
                ends.sort_by(f64::total_cmp);
                ends.dedup();
                let mut start = 0.0;
                for end in ends {
                    let mut freqs = op;
                    for &(q, f, d) in &steps {
                        if d >= end {
                            freqs[q.index()] = f;
                        }
                    }
                    sched.segments.push(segment(end - start, freqs, None));
                    start = end;
                }
                t += start;
            }
            _ => {
                let (step, d) = flux_step(device, el)?;
                let mut freqs = op;
                if let Some((q, f)) = step {
                    freqs[q.index()] = f;
                }
                sched.segments.push(segment(d, freqs, None));
                t += d;
            }
        }
    }
    Ok(sched)
}

/// One sequence per `(offset, duration)`, offsets outermost: a π pulse on
/// `qubit` followed by a square pulse to `omega_op + offset`. A zero duration
/// leaves only the π pulse.
pub fn chevron_grid(
    device: &DeviceSpec,
    qubit: QubitId,
    offsets_mhz: &[f64],
    durations_us: &[f64],
) -> Result<Vec<Vec<PulseElement>>> {
    let f0 = device.qubit(qubit).omega_op_ghz;
    let mut out = Vec::with_capacity(offsets_mhz.len() * durations_us.len());
    for &offset in offsets_mhz {
        check_freq(device, qubit, f0 + offset * 1e-3)?;
        for &d in durations_us {
            if !(d.is_finite() && d >= 0.0) {
                return Err(Error::InvalidSequence(format!("duration must be ≥ 0, got {d}")));
            }
            let mut seq = vec![PulseElement::pi(qubit)];
            if d > 0.0 {
                seq.push(PulseElement::flux(qubit, f0 + offset * 1e-3, d));
            }
            out.push(seq);
        }
    }
    Ok(out)
}

/// The swap-transfer protocol up to, not including, the final square pulse
/// on qubit 2: π on qubit 1, swap into `mode_label` and back, then swap
/// qubit 1 → qubit 2 by tuning qubit 2 onto qubit 1.
pub fn transfer_prefix(mode_label: &str) -> Vec<PulseElement> {
    vec![
        PulseElement::pi(QubitId::Q1),
        PulseElement::swap_to_mode(QubitId::Q1, mode_label, 2),
        PulseElement::swap_to_qubit(QubitId::Q2, 1),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{reference_device, TRANSFER_MODE_GHZ};

    fn transfer_mode(d: &DeviceSpec) -> String {
        d.nearest_mode(QubitId::Q1, TRANSFER_MODE_GHZ).unwrap().label.clone()
    }

    #[test]
    fn swap_times() {
        let d = reference_device();
        let t1 = calibrate_swap(&d, QubitId::Q1, &SwapTarget::Mode(transfer_mode(&d))).unwrap();
        assert!((t1 * 1e3 - 196.1).abs() < 0.05, "{t1}");
        let m2 = d.modes2[3].label.clone();
        let t2 = calibrate_swap(&d, QubitId::Q2, &SwapTarget::Mode(m2)).unwrap();
        assert!((t2 * 1e3 - 175.4).abs() < 0.05);
        let tq = calibrate_swap(&d, QubitId::Q1, &SwapTarget::Qubit).unwrap();
        assert!((tq * 1e3 - 29.94).abs() < 0.005);
    }

    #[test]
    fn swap_errors() {
        let d = reference_device();
        assert!(matches!(
            calibrate_swap(&d, QubitId::Q1, &SwapTarget::Mode("nope".into())),
            Err(Error::UnknownMode(_))
        ));
        let m2 = d.modes2[0].label.clone();
        assert!(calibrate_swap(&d, QubitId::Q1, &SwapTarget::Mode(m2)).is_err());
    }

    #[test]
    fn pi_only_sequence() {
        let d = reference_device();
        let s = compile(&[PulseElement::pi(QubitId::Q1)], &d).unwrap();
        assert!(s.segments.is_empty());
        assert_eq!(s.preps.len(), 1);
        assert_eq!(s.preps[0].before_segment, 0);
        assert_eq!(s.span_us(), 0.0);
        assert_eq!(s.visited_freqs(&d)[0], vec![(3.7778, 3.7778)]);
    }

    #[test]
    fn swap_segment_expands_to_flux_square() {
        let d = reference_device();
        let m = transfer_mode(&d);
        let s = compile(&[PulseElement::pi(QubitId::Q1), PulseElement::swap_to_mode(QubitId::Q1, &m, 1)], &d).unwrap();
        assert_eq!(s.segments.len(), 1);
        let seg = &s.segments[0];
        assert_eq!(seg.qubit1_freq_ghz, TRANSFER_MODE_GHZ);
        assert_eq!(seg.qubit2_freq_ghz, 3.6673);
        assert!((seg.duration_us - 1.0 / 5.1).abs() < 1e-15);
    }

    #[test]
    fn transfer_sequence_stages() {
        let d = reference_device();
        let mut seq = transfer_prefix(&transfer_mode(&d));
        seq.push(PulseElement::flux(QubitId::Q2, 3.70, 0.05));
        let s = compile(&seq, &d).unwrap();
        assert_eq!(s.preps.len() + s.segments.len(), 4);
        assert_eq!(s.segments[0].qubit1_freq_ghz, TRANSFER_MODE_GHZ);
        assert!((s.segments[0].duration_us - 2.0 / 5.1).abs() < 1e-15);
        assert_eq!(s.segments[1].qubit2_freq_ghz, 3.7778);
        assert!((s.segments[1].duration_us - 1.0 / 33.4).abs() < 1e-15);
        assert_eq!(s.segments[2].qubit2_freq_ghz, 3.70);
        let total = 2.0 / 5.1 + 1.0 / 33.4 + 0.05;
        assert!((s.span_us() - total).abs() < 1e-15);
    }

    #[test]
    fn finite_pi_pulse_is_a_driven_segment() {
        let d = reference_device();
        let s = compile(
            &[PulseElement::PiPulse {
                qubit: QubitId::Q2,
                mode: PiMode::Finite {
                    duration_us: 0.01,
                    drive_two_g_mhz: 50.0,
                },
            }],
            &d,
        )
        .unwrap();
        assert!(s.preps.is_empty());
        assert_eq!(
            s.segments[0].drive,
            Some(Drive {
                qubit: QubitId::Q2,
                two_g_mhz: 50.0
            })
        );
    }

    #[test]
    fn simultaneous_pulses_split_at_each_end() {
        let d = reference_device();
        let s = compile(
            &[PulseElement::Simultaneous {
                elements: vec![
                    PulseElement::flux(QubitId::Q1, 4.5, 0.3),
                    PulseElement::flux(QubitId::Q2, 3.7885, 0.1),
                ],
            }],
            &d,
        )
        .unwrap();
        assert_eq!(s.segments.len(), 2);
        assert_eq!(s.segments[0].freqs(), [4.5, 3.7885]);
        assert_eq!(s.segments[1].freqs(), [4.5, 3.6673]);
        assert!((s.span_us() - 0.3).abs() < 1e-15);

        let clash = compile(
            &[PulseElement::Simultaneous {
                elements: vec![
                    PulseElement::flux(QubitId::Q1, 4.5, 0.3),
                    PulseElement::flux(QubitId::Q1, 4.0, 0.1),
                ],
            }],
            &d,
        );
        assert!(matches!(clash, Err(Error::OverlappingFlux(_))));
    }

    #[test]
    fn compile_errors() {
        let d = reference_device();
        assert!(matches!(compile(&[], &d), Err(Error::InvalidSequence(_))));
        assert!(matches!(
            compile(&[PulseElement::flux(QubitId::Q1, 3.6, 0.1)], &d),
            Err(Error::OutOfRange { .. })
        ));
        assert!(compile(&[PulseElement::flux(QubitId::Q1, 3.8, 0.0)], &d).is_err());
        assert!(compile(&[PulseElement::Idle { duration_us: -1.0 }], &d).is_err());
        assert!(matches!(
            compile(&[PulseElement::swap_to_mode(QubitId::Q1, "m9_9", 1)], &d),
            Err(Error::UnknownMode(_))
        ));
    }

    #[test]
    fn chevron_grids() {
        let d = reference_device();
        assert!(chevron_grid(&d, QubitId::Q1, &[0.0, 5.0], &[]).unwrap().is_empty());
        let g = chevron_grid(&d, QubitId::Q1, &[10.7], &[0.1961]).unwrap();
        let s = compile(&g[0], &d).unwrap();
        assert!((s.segments[0].qubit1_freq_ghz - TRANSFER_MODE_GHZ).abs() < 1e-12);
        let g = chevron_grid(&d, QubitId::Q2, &[0.0, 1.0], &[0.0, 0.2, 0.4]).unwrap();
        assert_eq!(g.len(), 6);
        assert_eq!(g[0].len(), 1);
        assert!(matches!(
            chevron_grid(&d, QubitId::Q2, &[-1.0], &[0.1]),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn sequences_round_trip_through_json() {
        let d = reference_device();
        let mut seq = transfer_prefix(&transfer_mode(&d));
        seq.push(PulseElement::Simultaneous {
            elements: vec![PulseElement::Idle { duration_us: 0.2 }],
        });
        let text = serde_json::to_string(&seq).unwrap();
        let back: Vec<PulseElement> = serde_json::from_str(&text).unwrap();
        assert_eq!(seq, back);
        let bad = r#"[{"type":"idle","duration_us":1.0,"extra":2}]"#;
        assert!(serde_json::from_str::<Vec<PulseElement>>(bad).is_err());
    }
}
