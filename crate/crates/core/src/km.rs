//! Kaplan-Meier estimation and Stute's K-M weights, with optional Efron tail
//! correction.

use serde::Serialize;

use crate::data::OrderedDataset;

/// Product-limit curve over distinct event times.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KmCurve {
    pub event_times: Vec<f64>,
    /// Survival just after each event time.
    pub survival: Vec<f64>,
    /// Drop in survival at each event time.
    pub jumps: Vec<f64>,
    /// `false` when the largest observation is censored and uncorrected, so
    /// the curve stops above zero.
    pub defined_beyond_max: bool,
}

impl KmCurve {
    /// Right-continuous survival value at `t`.
    pub fn survival_at(&self, t: f64) -> f64 {
        let k = self.event_times.partition_point(|&e| e <= t);
        if k == 0 {
            1.0
        } else {
            self.survival[k - 1]
        }
    }

    pub fn final_survival(&self) -> f64 {
        self.survival.last().copied().unwrap_or(1.0)
    }
}

/// Per-position product-limit quantities for values sorted ascending.
#[derive(Debug, Clone)]
pub(crate) struct ProductLimit {
    /// Mass assigned to each position; zero for censored positions.
    pub jumps: Vec<f64>,
    /// Survival just after the tie group containing each position.
    pub survival_after: Vec<f64>,
}

/// Product-limit estimate on sorted `values`.
///
/// Tied values form one group: the curve drops by `S * d / r` where `d` and
/// `r` are the (multiplier-weighted) event count and risk set. The drop is
/// split across the group's events in proportion to their multipliers.
pub(crate) fn product_limit(
    values: &[f64],
    events: &[bool],
    multipliers: Option<&[f64]>,
) -> ProductLimit {
    let n = values.len();
    let weight = |i: usize| multipliers.map_or(1.0, |z| z[i]);
    let mut at_risk: f64 = (0..n).map(weight).sum();
    let mut survival = 1.0;
    let mut jumps = vec![0.0; n];
    let mut survival_after = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[end] == values[start] {
            end += 1;
        }
        let group_events: f64 = (start..end).filter(|&i| events[i]).map(weight).sum();
        let group_weight: f64 = (start..end).map(weight).sum();
        if group_events > 0.0 && at_risk > 0.0 {
            let drop = survival * (group_events / at_risk).min(1.0);
            for i in (start..end).filter(|&i| events[i]) {
                jumps[i] = drop * weight(i) / group_events;
            }
            survival -= drop;
            if survival < 0.0 {
                survival = 0.0;
            }
        }
        for s in &mut survival_after[start..end] {
            *s = survival;
        }
        at_risk -= group_weight;
        start = end;
    }
    ProductLimit {
        jumps,
        survival_after,
    }
}

/// Statuses after the optional tail correction, which reclassifies the last
/// ordered observation as an event.
pub(crate) fn corrected_events(data: &OrderedDataset, tail_correction: bool) -> Vec<bool> {
    let mut events = data.events().to_vec();
    if tail_correction {
        if let Some(last) = events.last_mut() {
            *last = true;
        }
    }
    events
}

/// Per-position jumps of the (optionally tail-corrected) K-M estimator.
///
/// With tail correction all survival left at the maximum time is placed on
/// the last observation, so the curve reaches zero even when censored
/// observations are tied with it.
pub(crate) fn position_jumps(data: &OrderedDataset, tail_correction: bool) -> ProductLimit {
    let events = corrected_events(data, tail_correction);
    let mut pl = product_limit(data.times(), &events, None);
    let n = data.n();
    if tail_correction {
        let remaining = pl.survival_after[n - 1];
        if remaining > 0.0 {
            pl.jumps[n - 1] += remaining;
            let tmax = data.max_time();
            for i in (0..n).rev().take_while(|&i| data.times()[i] == tmax) {
                pl.survival_after[i] = 0.0;
            }
        }
    }
    pl
}

pub fn km_estimate(data: &OrderedDataset, tail_correction: bool) -> KmCurve {
    let events = corrected_events(data, tail_correction);
    let pl = position_jumps(data, tail_correction);
    let times = data.times();
    let mut curve = KmCurve {
        event_times: Vec::new(),
        survival: Vec::new(),
        jumps: Vec::new(),
        defined_beyond_max: events[data.n() - 1],
    };
    for i in 0..data.n() {
        if !events[i] {
            continue;
        }
        if curve.event_times.last() == Some(&times[i]) {
            *curve.jumps.last_mut().unwrap() += pl.jumps[i];
        } else {
            curve.event_times.push(times[i]);
            curve.jumps.push(pl.jumps[i]);
            curve.survival.push(pl.survival_after[i]);
        }
    }
    curve
}

/// Stute's K-M weights aligned with the ordered observations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StuteWeights {
    pub weights: Vec<f64>,
    pub tail_corrected: bool,
    /// Statuses the weights were computed from (last one reclassified when
    /// tail corrected).
    pub events: Vec<bool>,
}

impl StuteWeights {
    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Closed-form Stute weights
/// `w_i = d_i / (n - i + 1) * prod_{j < i} ((n - j) / (n - j + 1))^{d_j}`.
pub fn stute_weights(data: &OrderedDataset, tail_correction: bool) -> StuteWeights {
    let events = corrected_events(data, tail_correction);
    let n = data.n();
    let mut weights = vec![0.0; n];
    let mut running = 1.0;
    for (i, &event) in events.iter().enumerate() {
        let remaining = (n - i) as f64;
        if event {
            weights[i] = running / remaining;
            running *= (remaining - 1.0) / remaining;
        }
    }
    StuteWeights {
        weights,
        tail_corrected: tail_correction,
        events,
    }
}
