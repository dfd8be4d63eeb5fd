use std::collections::BTreeMap;

use crate::error::{ensure, Result};

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// mean(std | flag) / mean(std | !flag).
pub fn uncertainty_ratio(stds: &[f64], flags: &[bool]) -> Result<f64> {
    ensure!(stds.len() == flags.len(), "{} stds but {} flags", stds.len(), flags.len());
    let on: Vec<f64> = stds.iter().zip(flags).filter(|(_, &f)| f).map(|(s, _)| *s).collect();
    let off: Vec<f64> = stds.iter().zip(flags).filter(|(_, &f)| !f).map(|(s, _)| *s).collect();
    ensure!(!on.is_empty() && !off.is_empty(), "uncertainty ratio needs both flag values");
    Ok(mean(&on) / mean(&off))
}

/// Per-group means keyed by group name.
pub fn class_means<'a>(values: &[f64], groups: impl IntoIterator<Item = &'a str>) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (&v, g) in values.iter().zip(groups) {
        let e = acc.entry(g.to_string()).or_default();
        e.0 += v;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

/// Ranks starting at 1, ties get their average rank.
pub fn rankdata(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson on average ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    ensure!(a.len() == b.len() && a.len() >= 2, "spearman needs two equal-length samples of at least 2");
    let (ra, rb) = (rankdata(a), rankdata(b));
    let (ma, mb) = (mean(&ra), mean(&rb));
    let mut num = 0.0;
    let (mut da, mut db) = (0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        num += (x - ma) * (y - mb);
        da += (x - ma).powi(2);
        db += (y - mb).powi(2);
    }
    ensure!(da > 0.0 && db > 0.0, "spearman is undefined for a constant sample");
    Ok(num / (da * db).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_cases() {
        assert_eq!(uncertainty_ratio(&[1.0, 1.0], &[true, false]).unwrap(), 1.0);
        assert_eq!(uncertainty_ratio(&[2.0, 1.0, 4.0, 2.0], &[true, false, true, false]).unwrap(), 2.0);
        assert!(uncertainty_ratio(&[1.0, 1.0], &[true, true]).is_err());
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(rankdata(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn spearman_monotone() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [1.0, 8.0, 27.0, 64.0];
        assert!((spearman(&a, &b).unwrap() - 1.0).abs() < 1e-15);
        let c: Vec<f64> = b.iter().map(|x| -x).collect();
        assert!((spearman(&a, &c).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn grouped_means() {
        let m = class_means(&[1.0, 3.0, 5.0], ["a", "a", "b"]);
        assert_eq!(m["a"], 2.0);
        assert_eq!(m["b"], 5.0);
    }
}
