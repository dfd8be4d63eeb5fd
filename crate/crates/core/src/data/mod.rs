//! Seeded synthetic workloads.
//!
//! * Beam-pulse traces: a trapezoidal normal pulse, a "seen" anomaly family
//!   (amplitude droop) and an "unseen" family (superposed high-frequency
//!   oscillation), plus pair sampling for the twin network.
//! * Booster-like series: five coupled slowly drifting channels and a gate
//!   channel. Inside designated segments the output channel carries a
//!   large fast cycle and the gate rises above 0.995; windows from those
//!   segments are out of distribution.

mod benchmark;
mod booster;
mod io;
mod pairs;
mod pulses;

pub use benchmark::{BoosterBenchSpec, BoosterBenchmark, PulseBenchSpec, PulseBenchmark};
pub use booster::{
    filter_windows, gen_booster_series, make_windows, BoosterSeries, WindowedSample, CHANNELS, DEFAULT_GATE_THRESHOLD,
    OUTPUT_CHANNEL, WINDOW,
};
pub use io::{
    load_pulses, load_series, load_windows, save_pulses, save_series, save_windows, PULSE_HEADER_PREFIX,
};
pub use pairs::{make_pairs, sample_pairs, PulsePair};
pub use pulses::{base_pulse, gen_pulses, PulseClass, PulseCounts, PulseRecord, NOISE_SIGMA, TRACE_LEN};
