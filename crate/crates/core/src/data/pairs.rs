use std::collections::BTreeSet;

use super::pulses::{PulseClass, PulseRecord};
use crate::diffcore::{RngStream, Tensor};
use crate::error::{ensure, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PulsePair {
    pub id: u64,
    /// `[1, 256]`.
    pub trace_a: Tensor,
    pub trace_b: Tensor,
    /// 0 for normal–normal, 1 for normal–anomalous.
    pub label: u8,
    pub a_id: u64,
    pub b_id: u64,
    /// Class of the anomalous member, if any.
    pub anomaly: Option<PulseClass>,
}

fn trace_tensor(p: &PulseRecord) -> Tensor {
    Tensor::new(vec![1, p.trace.len()], p.trace.clone()).expect("trace shape")
}

/// Draws `count` distinct index pairs from a pool of `total` candidates
/// (enumerated by `decode`), without replacement.
fn distinct_indices(total: usize, count: usize, rng: &mut RngStream) -> Vec<usize> {
    if count >= total {
        let mut all: Vec<usize> = (0..total).collect();
        rng.shuffle(&mut all);
        return all;
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let k = rng.below(total);
        if seen.insert(k) {
            out.push(k);
        }
    }
    out
}

/// Samples up to `count` distinct pairs of normal pulses with one member of
/// class `partner`. For `partner == Normal` the pairs are unordered and never
/// repeat a record. Ids are assigned from `first_id`.
pub fn sample_pairs(
    pulses: &[PulseRecord],
    partner: PulseClass,
    count: usize,
    first_id: u64,
    rng: &mut RngStream,
) -> Result<Vec<PulsePair>> {
    let normals: Vec<&PulseRecord> = pulses.iter().filter(|p| p.class == PulseClass::Normal).collect();
    if count == 0 {
        return Ok(Vec::new());
    }
    let mut out = Vec::with_capacity(count);
    if partner == PulseClass::Normal {
        let n = normals.len();
        ensure!(n >= 2, "need at least 2 normal pulses for normal-normal pairs, got {n}");
        let total = n * (n - 1) / 2;
        for (k, flat) in distinct_indices(total, count, rng).into_iter().enumerate() {
            // unrank flat index into (i, j) with i < j
            let mut i = 0;
            let mut rem = flat;
            while rem >= n - 1 - i {
                rem -= n - 1 - i;
                i += 1;
            }
            let j = i + 1 + rem;
            let (a, b) = (normals[i], normals[j]);
            out.push(PulsePair {
                id: first_id + k as u64,
                trace_a: trace_tensor(a),
                trace_b: trace_tensor(b),
                label: 0,
                a_id: a.id,
                b_id: b.id,
                anomaly: None,
            });
        }
    } else {
        let anomalies: Vec<&PulseRecord> = pulses.iter().filter(|p| p.class == partner).collect();
        ensure!(!normals.is_empty(), "need at least 1 normal pulse for normal-anomaly pairs");
        ensure!(!anomalies.is_empty(), "no pulses of class {} available", partner.as_str());
        let total = normals.len() * anomalies.len();
        for (k, flat) in distinct_indices(total, count, rng).into_iter().enumerate() {
            let (a, b) = (normals[flat / anomalies.len()], anomalies[flat % anomalies.len()]);
            out.push(PulsePair {
                id: first_id + k as u64,
                trace_a: trace_tensor(a),
                trace_b: trace_tensor(b),
                label: 1,
                a_id: a.id,
                b_id: b.id,
                anomaly: Some(partner),
            });
        }
    }
    Ok(out)
}

/// Training pairs: up to `per_label` normal–normal pairs (label 0) and
/// `per_label` normal–anomaly pairs (label 1), shuffled together. Anomalous
/// partners come from class A only when `unseen_excluded`, otherwise from A
/// and B alike.
pub fn make_pairs(
    pulses: &[PulseRecord],
    per_label: usize,
    unseen_excluded: bool,
    rng: &RngStream,
) -> Result<Vec<PulsePair>> {
    let normals = pulses.iter().filter(|p| p.class == PulseClass::Normal).count();
    let allowed = |c: PulseClass| c == PulseClass::AnomalyA || (!unseen_excluded && c == PulseClass::AnomalyB);
    let anomalies = pulses.iter().filter(|p| allowed(p.class)).count();
    ensure!(normals >= 2, "need at least 2 normal pulses, got {normals}");
    ensure!(anomalies >= 1, "need at least 1 anomaly pulse of an allowed class");
    if per_label == 0 {
        return Ok(Vec::new());
    }

    let mut r = rng.fork_named("pairs");
    let mut out = sample_pairs(pulses, PulseClass::Normal, per_label, 0, &mut r)?;
    // split the anomalous budget over the allowed classes in proportion to their counts
    let classes: Vec<PulseClass> = [PulseClass::AnomalyA, PulseClass::AnomalyB]
        .into_iter()
        .filter(|&c| allowed(c) && pulses.iter().any(|p| p.class == c))
        .collect();
    let mut remaining = per_label;
    for (i, &c) in classes.iter().enumerate() {
        let n_c = pulses.iter().filter(|p| p.class == c).count();
        let share = if i + 1 == classes.len() { remaining } else { per_label * n_c / anomalies };
        remaining -= share;
        let first = out.len() as u64;
        out.extend(sample_pairs(pulses, c, share, first, &mut r)?);
    }
    r.shuffle(&mut out);
    for (k, p) in out.iter_mut().enumerate() {
        p.id = k as u64;
    }
    Ok(out)
}
