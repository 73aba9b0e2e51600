use super::stats::LandmarkStats;
use super::observed_or;
use crate::datamodel::StackedRow;

pub(super) fn fill_constant(rows: &[StackedRow], fill: f64) -> Vec<Vec<f64>> {
    rows.iter().map(|r| observed_or(&r.values, |_| fill)).collect()
}

pub(super) fn median_mode(stats: &LandmarkStats, rows: &[StackedRow]) -> Vec<Vec<f64>> {
    rows.iter().map(|r| observed_or(&r.values, |j| stats.at(j, r.s))).collect()
}

/// Last value carried forward; the episode's first row falls back to the
/// training baseline median/mode.
pub(super) fn locf(stats: &LandmarkStats, rows: &[StackedRow]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(rows.len());
    for r in rows {
        let prev = out.last();
        let row = observed_or(&r.values, |j| prev.map_or_else(|| stats.baseline(j), |p| p[j]));
        out.push(row);
    }
    out
}
