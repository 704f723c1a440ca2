//! Mining of mobility patterns, usage behavior and flexibility from
//! historical daily traces, plus SoC forecasting and provider surplus.

use crate::error::{Error, Result};
use crate::model::{
    CellId, Flexibility, Location, MobilityPattern, Stay, TimeGrid, UsageBehavior, UserId,
};

/// A pattern slot counts as a stay only when the dominant cell's presence
/// probability reaches this threshold.
pub const PRESENCE_THRESHOLD: f64 = 0.5;

/// One observed day for one user: where they were and how charged their
/// battery was, per slot.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyTrace {
    pub owner: UserId,
    pub day: u32,
    pub locations: Vec<Location>,
    pub soc: Vec<f64>,
}

impl DailyTrace {
    pub fn horizon(&self) -> usize {
        self.locations.len()
    }
}

/// Flexibility marks for one stay, supplied alongside a mined pattern.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StayAnnotation {
    pub changeable: bool,
    pub stretchable: bool,
    /// Substitute cells; required nonempty when `changeable`.
    pub alternatives: Vec<CellId>,
    /// Inclusive (min_slots, max_slots); required when `stretchable`.
    pub stretch_bounds: Option<(usize, usize)>,
}

fn check_history(history: &[DailyTrace], horizon: usize) -> Result<UserId> {
    let first = history
        .first()
        .ok_or_else(|| Error::InsufficientData("empty history".into()))?;
    for t in history {
        if t.owner != first.owner {
            return Err(Error::InsufficientData(format!(
                "mixed owners in history: {} and {}",
                first.owner, t.owner
            )));
        }
        if t.locations.len() != horizon || t.soc.len() != horizon {
            return Err(Error::InsufficientData(format!(
                "trace for day {} does not cover the full grid",
                t.day
            )));
        }
    }
    Ok(first.owner)
}

/// Empirical per-slot presence frequencies over the given history.
///
/// `presence[slot][col]` is the fraction of days the owner was observed in
/// the column's cell at that slot; the final column is OUTSIDE. Rows sum to
/// one by construction.
pub fn estimate_mobility_pattern(
    history: &[DailyTrace],
    cells: &[CellId],
    grid: &TimeGrid,
) -> Result<MobilityPattern> {
    let owner = check_history(history, grid.horizon)?;
    let days = history.len() as f64;
    let width = cells.len() + 1;
    let mut presence = vec![vec![0.0f64; width]; grid.horizon];
    for trace in history {
        for (slot, loc) in trace.locations.iter().enumerate() {
            let col = match loc.cell() {
                Some(c) => cells.iter().position(|&x| x == c).ok_or(Error::UnknownCell(c))?,
                None => width - 1,
            };
            presence[slot][col] += 1.0;
        }
    }
    for row in &mut presence {
        for p in row.iter_mut() {
            *p /= days;
        }
    }
    Ok(MobilityPattern { owner, cells: cells.to_vec(), presence })
}

/// Mean state of charge per slot over the history.
pub fn estimate_usage_behavior(history: &[DailyTrace], capacity_wh: f64) -> Result<UsageBehavior> {
    let horizon = history.first().map(|t| t.horizon()).unwrap_or(0);
    let owner = check_history(history, horizon)?;
    let days = history.len() as f64;
    let mut soc = vec![0.0f64; horizon];
    for trace in history {
        for (slot, s) in trace.soc.iter().enumerate() {
            soc[slot] += s;
        }
    }
    for s in &mut soc {
        *s /= days;
    }
    Ok(UsageBehavior { owner, soc, battery_capacity_wh: capacity_wh })
}

/// Maximal runs of consecutive slots whose dominant cell is constant and has
/// presence at or above [`PRESENCE_THRESHOLD`]. Ties between cells break to
/// the smaller id; OUTSIDE never forms a stay.
pub fn extract_stays(pattern: &MobilityPattern) -> Vec<Stay> {
    let mut stays: Vec<Stay> = Vec::new();
    let mut current: Option<Stay> = None;
    for (slot, row) in pattern.presence.iter().enumerate() {
        let dominant = pattern
            .cells
            .iter()
            .zip(row.iter())
            .filter(|&(_, &p)| p >= PRESENCE_THRESHOLD)
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(a.0)))
            .map(|(&c, _)| c);
        match (dominant, current.as_mut()) {
            (Some(cell), Some(stay)) if stay.cell == cell && stay.end == slot => {
                stay.end = slot + 1;
            }
            (Some(cell), _) => {
                if let Some(stay) = current.take() {
                    stays.push(stay);
                }
                current = Some(Stay::new(cell, slot, slot + 1));
            }
            (None, _) => {
                if let Some(stay) = current.take() {
                    stays.push(stay);
                }
            }
        }
    }
    if let Some(stay) = current {
        stays.push(stay);
    }
    stays
}

/// Attach per-stay flexibility marks to the stays mined from a pattern.
pub fn derive_flexibility(
    pattern: &MobilityPattern,
    annotations: &[StayAnnotation],
) -> Result<Flexibility> {
    let stays = extract_stays(pattern);
    if stays.len() != annotations.len() {
        return Err(Error::StayAlignment { expected: stays.len(), got: annotations.len() });
    }
    let mut fx = Flexibility::rigid(stays);
    for (i, a) in annotations.iter().enumerate() {
        fx.changeable[i] = a.changeable;
        fx.stretchable[i] = a.stretchable;
        if a.changeable {
            fx.alternatives.insert(i, a.alternatives.clone());
        }
        if a.stretchable {
            if let Some(bounds) = a.stretch_bounds {
                fx.stretch_bounds.insert(i, bounds);
            }
        }
    }
    Ok(fx)
}

/// Project the usage behavior's per-slot SoC deltas onto `start_soc`,
/// clamping to [0,100]. Returns one value per slot in `start_slot..=end_slot`.
pub fn forecast_soc(
    usage: &UsageBehavior,
    start_slot: usize,
    start_soc: f64,
    end_slot: usize,
) -> Vec<f64> {
    debug_assert!(start_slot <= end_slot);
    let mut out = Vec::with_capacity(end_slot - start_slot + 1);
    let mut soc = start_soc.clamp(0.0, 100.0);
    out.push(soc);
    for slot in start_slot..end_slot {
        let delta = match (usage.soc.get(slot + 1), usage.soc.get(slot)) {
            (Some(&next), Some(&cur)) => next - cur,
            _ => 0.0,
        };
        soc = (soc + delta).clamp(0.0, 100.0);
        out.push(soc);
    }
    out
}

/// Minimum forecast SoC from `slot` to the end of the day, starting at `soc_now`.
pub fn min_future_soc(usage: &UsageBehavior, slot: usize, soc_now: f64) -> f64 {
    let end = usage.horizon().saturating_sub(1).max(slot);
    forecast_soc(usage, slot, soc_now, end)
        .into_iter()
        .fold(f64::INFINITY, f64::min)
}

/// Energy a provider can shed during a stay without its forecast SoC ever
/// dipping below `reserve_pct` for the rest of the day.
pub fn compute_surplus(usage: &UsageBehavior, stay: &Stay, reserve_pct: f64) -> f64 {
    let start_soc = usage.soc.get(stay.start).copied().unwrap_or(0.0);
    let min_soc = min_future_soc(usage, stay.start, start_soc);
    (usage.pct_to_wh(min_soc - reserve_pct)).max(0.0)
}

/// Watt-hours a consumer must receive from `slot` onward so the forecast
/// never dips below `threshold_pct`.
pub fn rest_of_day_deficit(
    usage: &UsageBehavior,
    slot: usize,
    soc_now: f64,
    threshold_pct: f64,
) -> f64 {
    let min_soc = min_future_soc(usage, slot, soc_now);
    (usage.pct_to_wh(threshold_pct - min_soc)).max(0.0)
}
