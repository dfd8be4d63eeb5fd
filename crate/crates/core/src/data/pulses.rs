use crate::diffcore::RngStream;

pub const TRACE_LEN: usize = 256;
pub const NOISE_SIGMA: f64 = 0.02;

const RISE_START: f64 = 32.0;
const TOP_START: f64 = 64.0;
const TOP_END: f64 = 192.0;
const FALL_END: f64 = 224.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PulseClass {
    Normal,
    /// Seen anomaly family: mid-pulse amplitude droop.
    AnomalyA,
    /// Unseen anomaly family: superposed fast oscillation.
    AnomalyB,
}

impl PulseClass {
    pub fn as_str(self) -> &'static str {
        match self {
            PulseClass::Normal => "normal",
            PulseClass::AnomalyA => "anomaly_a",
            PulseClass::AnomalyB => "anomaly_b",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "normal" => Some(PulseClass::Normal),
            "anomaly_a" => Some(PulseClass::AnomalyA),
            "anomaly_b" => Some(PulseClass::AnomalyB),
            _ => None,
        }
    }

    pub fn is_anomaly(self) -> bool {
        self != PulseClass::Normal
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PulseRecord {
    pub id: u64,
    pub class: PulseClass,
    pub trace: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PulseCounts {
    pub normal: usize,
    pub anomaly_a: usize,
    pub anomaly_b: usize,
}

/// Noise-free trapezoid: zero, linear rise over [32, 64), flat top of 1
/// until 192, linear fall to zero at 224.
pub fn base_pulse(t: usize) -> f64 {
    let t = t as f64;
    if !(RISE_START..FALL_END).contains(&t) {
        0.0
    } else if t < TOP_START {
        (t - RISE_START) / (TOP_START - RISE_START)
    } else if t <= TOP_END {
        1.0
    } else {
        (FALL_END - t) / (FALL_END - TOP_END)
    }
}

fn one_pulse(class: PulseClass, rng: &mut RngStream) -> Vec<f64> {
    let mut trace: Vec<f64> = (0..TRACE_LEN).map(base_pulse).collect();
    match class {
        PulseClass::Normal => {}
        PulseClass::AnomalyA => {
            let depth = rng.uniform_range(0.2, 0.4);
            let onset = rng.uniform_range(96.0, 160.0);
            for (t, v) in trace.iter_mut().enumerate() {
                let ramp = ((t as f64 - onset) / 8.0).clamp(0.0, 1.0);
                *v *= 1.0 - depth * ramp;
            }
        }
        PulseClass::AnomalyB => {
            let amp = rng.uniform_range(0.2, 0.4);
            let period = rng.uniform_range(8.0, 16.0);
            let phase = rng.uniform_range(0.0, 2.0 * std::f64::consts::PI);
            for (t, v) in trace.iter_mut().enumerate() {
                let osc = (2.0 * std::f64::consts::PI * t as f64 / period + phase).sin();
                *v += amp * osc * base_pulse(t);
            }
        }
    }
    for v in &mut trace {
        *v = (*v + NOISE_SIGMA * rng.normal()).clamp(-2.0, 2.0);
    }
    trace
}

/// Generates `counts` pulses in class order (normal, A, B). Record `i` draws
/// from its own stream forked from `rng`, so ids are stable across requests.
pub fn gen_pulses(counts: PulseCounts, rng: &RngStream) -> Vec<PulseRecord> {
    let plan = [
        (PulseClass::Normal, counts.normal),
        (PulseClass::AnomalyA, counts.anomaly_a),
        (PulseClass::AnomalyB, counts.anomaly_b),
    ];
    let mut out = Vec::with_capacity(counts.normal + counts.anomaly_a + counts.anomaly_b);
    for (class, n) in plan {
        let stream = rng.fork_named(class.as_str());
        for i in 0..n {
            let mut r = stream.fork(i as u64);
            let id = out.len() as u64;
            out.push(PulseRecord { id, class, trace: one_pulse(class, &mut r) });
        }
    }
    out
}
