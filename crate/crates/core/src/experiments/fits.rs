//! Onset and scaling-collapse fits on averaged `Delta(t)` curves.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::grid::AggregateRow;
use crate::error::{Error, Result};

/// `L_E -> [(t, mean Delta)]`, each sorted by `t`.
pub type Curves = BTreeMap<usize, Vec<(f64, f64)>>;

/// Below this a value is treated as zero when interpolating in log space.
const LOG_FLOOR: f64 = 1e-12;
/// Slopes smaller than this are read as no dependence on `L_E`.
const FLAT_SLOPE: f64 = 1e-9;
/// The two halves of the plateau window may differ by this fraction.
const PLATEAU_TOLERANCE: f64 = 0.25;
const MIN_OVERLAP: usize = 3;
const SCAN_STEP: f64 = 0.05;
const SCAN_RANGE: f64 = 12.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Threshold {
    Absolute(f64),
    /// Fraction of each curve's late-time plateau.
    RelativeToPlateau(f64),
}

pub fn curves_from_aggregate(rows: &[AggregateRow], l_s: Option<usize>) -> Curves {
    let mut curves = Curves::new();
    for r in rows.iter().filter(|r| l_s.is_none_or(|l| r.l_s == l)) {
        curves.entry(r.l_e).or_default().push((r.t, r.mean));
    }
    for c in curves.values_mut() {
        c.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    curves
}

/// Mean over the last half `[T/2, T]` of the time window.
pub fn plateau(curve: &[(f64, f64)]) -> Result<f64> {
    let t_max = curve.last().ok_or_else(|| Error::FitRefused("empty curve".into()))?.0;
    let tail: Vec<f64> = curve.iter().filter(|(t, _)| *t >= t_max / 2.0).map(|p| p.1).collect();
    if tail.len() < 2 {
        return Err(Error::FitRefused("fewer than two points in the plateau window".into()));
    }
    let half = tail.len() / 2;
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let (first, second) = (mean(&tail[..half]), mean(&tail[half..]));
    let all = mean(&tail);
    if !(all > 0.0) || (first - second).abs() > PLATEAU_TOLERANCE * all {
        return Err(Error::FitRefused(format!(
            "no plateau: window halves average {first:e} and {second:e}"
        )));
    }
    Ok(all)
}

fn absolute(curve: &[(f64, f64)], threshold: Threshold) -> Result<f64> {
    match threshold {
        Threshold::Absolute(v) => Ok(v),
        Threshold::RelativeToPlateau(f) => Ok(f * plateau(curve)?),
    }
}

/// First time the curve reaches `threshold`, interpolated in log-log between
/// the bracketing grid points when both are positive.
pub fn crossing_time(curve: &[(f64, f64)], threshold: f64) -> Option<f64> {
    let i = curve.iter().position(|&(_, d)| d >= threshold)?;
    let (t1, d1) = curve[i];
    if i == 0 {
        return Some(t1);
    }
    let (t0, d0) = curve[i - 1];
    if d0 <= LOG_FLOOR || t0 <= 0.0 || d1 <= d0 {
        return Some(t1);
    }
    let frac = (threshold.ln() - d0.ln()) / (d1.ln() - d0.ln());
    Some((t0.ln() + frac * (t1.ln() - t0.ln())).exp())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn least_squares(points: &[(f64, f64)]) -> Result<LineFit> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return Err(Error::FitRefused(format!("{} point(s), need at least 2", points.len())));
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::FitRefused("all abscissae coincide".into()));
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r_squared = if ss_tot <= f64::EPSILON * my.abs().max(1.0) { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(LineFit { slope, intercept, r_squared })
}

/// `t* = t_0 exp(L_E / xi_t)`. A flat fit reports `xi_t = inf`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnsetFit {
    pub onsets: Vec<(usize, f64)>,
    /// `L_E` values whose curve never reached the threshold.
    pub missing: Vec<usize>,
    pub t0: f64,
    pub xi_t: f64,
    pub r_squared: f64,
}

fn inverse_slope(slope: f64) -> f64 {
    if slope.abs() < FLAT_SLOPE {
        f64::INFINITY
    } else {
        1.0 / slope
    }
}

pub fn fit_onset(curves: &Curves, threshold: Threshold) -> Result<OnsetFit> {
    let mut onsets = Vec::new();
    let mut missing = Vec::new();
    for (&l_e, curve) in curves {
        match crossing_time(curve, absolute(curve, threshold)?) {
            Some(t) if t > 0.0 => onsets.push((l_e, t)),
            _ => missing.push(l_e),
        }
    }
    if !missing.is_empty() {
        log::warn!("no onset for L_E = {missing:?}");
    }
    let line = least_squares(&onsets.iter().map(|&(l, t)| (l as f64, t.ln())).collect::<Vec<_>>())?;
    Ok(OnsetFit {
        onsets,
        missing,
        t0: line.intercept.exp(),
        xi_t: inverse_slope(line.slope),
        r_squared: line.r_squared,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseEntry {
    pub l_e: usize,
    pub t_star: f64,
    pub tau_star: f64,
    pub t_sat: f64,
    pub delta_inf: f64,
}

/// `Delta(t) = Delta_inf f(t / (t* tau*))` with `tau* ~ exp(-L_E / xi_tau)`
/// and `Delta_inf ~ exp(delta_inf_slope L_E)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub entries: Vec<CollapseEntry>,
    pub xi_tau: f64,
    pub delta_inf_slope: f64,
    pub residual: f64,
    pub onset: OnsetFit,
}

fn interpolate(reference: &[(f64, f64)], x: f64) -> Option<f64> {
    let (first, last) = (reference.first()?, reference.last()?);
    if x < first.0 || x > last.0 {
        return None;
    }
    let i = reference.partition_point(|p| p.0 < x);
    if i == 0 {
        return Some(first.1);
    }
    let (a, b) = (reference[i - 1], reference[i]);
    if b.0 == a.0 {
        return Some(b.1);
    }
    Some(a.1 + (x - a.0) / (b.0 - a.0) * (b.1 - a.1))
}

/// Mean squared mismatch of `points` shifted left by `s` against `reference`.
fn mismatch(reference: &[(f64, f64)], points: &[(f64, f64)], s: f64) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0);
    for &(x, y) in points {
        if let Some(r) = interpolate(reference, x - s) {
            sum += (y - r).powi(2);
            n += 1;
        }
    }
    (n >= MIN_OVERLAP).then(|| sum / n as f64)
}

fn best_shift(reference: &[(f64, f64)], points: &[(f64, f64)]) -> Option<(f64, f64)> {
    let steps = (SCAN_RANGE / SCAN_STEP) as i64;
    let mut best: Option<(f64, f64)> = None;
    for k in -steps..=steps {
        let s = k as f64 * SCAN_STEP;
        if let Some(m) = mismatch(reference, points, s) {
            if best.is_none_or(|(_, bm)| m < bm) {
                best = Some((s, m));
            }
        }
    }
    let (s0, m0) = best?;
    // golden-section refinement inside the neighbouring scan cells
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let f = |s: f64| mismatch(reference, points, s).unwrap_or(f64::INFINITY);
    let (mut a, mut b) = (s0 - SCAN_STEP, s0 + SCAN_STEP);
    let (mut c, mut d) = (b - g * (b - a), a + g * (b - a));
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..60 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let s1 = 0.5 * (a + b);
    let m1 = f(s1);
    Some(if m1 < m0 { (s1, m1) } else { (s0, m0) })
}

/// Collapses every curve onto the smallest-`L_E` curve, whose `tau*` is 1.
pub fn fit_collapse(curves: &Curves, threshold: Threshold) -> Result<ScalingFit> {
    let onset = fit_onset(curves, threshold)?;
    let t_star: BTreeMap<usize, f64> = onset.onsets.iter().copied().collect();
    let mut scaled = Vec::new();
    for (&l_e, curve) in curves {
        let Some(&ts) = t_star.get(&l_e) else { continue };
        let d_inf = plateau(curve)?;
        let pts: Vec<(f64, f64)> = curve
            .iter()
            .filter(|(t, _)| *t > 0.0)
            .map(|&(t, d)| (t.ln() - ts.ln(), d / d_inf))
            .collect();
        scaled.push((l_e, ts, d_inf, pts));
    }
    let (_, _, _, reference) = scaled.first().ok_or_else(|| Error::FitRefused("no curves".into()))?;
    let reference = reference.clone();
    let mut entries = Vec::new();
    let (mut total, mut count) = (0.0, 0);
    for (i, (l_e, ts, d_inf, pts)) in scaled.iter().enumerate() {
        let shift = if i == 0 {
            0.0
        } else {
            let (s, m) = best_shift(&reference, pts).ok_or_else(|| {
                Error::FitRefused(format!("L_E = {l_e} overlaps the reference in fewer than {MIN_OVERLAP} points"))
            })?;
            total += m;
            count += 1;
            s
        };
        let tau = shift.exp();
        entries.push(CollapseEntry { l_e: *l_e, t_star: *ts, tau_star: tau, t_sat: ts * tau, delta_inf: *d_inf });
    }
    let tau_line = least_squares(&entries.iter().map(|e| (e.l_e as f64, e.tau_star.ln())).collect::<Vec<_>>())?;
    let inf_line = least_squares(&entries.iter().map(|e| (e.l_e as f64, e.delta_inf.ln())).collect::<Vec<_>>())?;
    Ok(ScalingFit {
        entries,
        xi_tau: inverse_slope(-tau_line.slope),
        delta_inf_slope: inf_line.slope,
        residual: if count == 0 { 0.0 } else { total / count as f64 },
        onset,
    })
}
