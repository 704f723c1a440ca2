//! Core domain types shared by every module: the discrete time grid,
//! microcells, mobility patterns, usage behavior, consumer flexibility,
//! services and requests.
//!
//! All values here are immutable after construction and safe to share across
//! threads. Validation never fails: [`Validate::validate`] returns the list
//! of violated invariants, empty when the value is well-formed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// Tolerance used when comparing probability masses and energy amounts.
pub const EPS: f64 = 1e-9;

/// Default battery reserve a provider keeps for itself, percent.
pub const DEFAULT_RESERVE_PCT: f64 = 20.0;

/// Default low-battery threshold that triggers consumer requests, percent.
pub const DEFAULT_THRESHOLD_PCT: f64 = 20.0;

/// Default wireless transfer range in meters.
pub const DEFAULT_RANGE_M: f64 = 5.0;

// ---------------------------------------------------------------------------
// Identifiers
// ---------------------------------------------------------------------------

/// Identifier of a user (device owner). One user owns one device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UserId(pub u32);

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "u{:04}", self.0)
    }
}

/// Identifier of a microcell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CellId(pub u32);

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{:02}", self.0)
    }
}

/// Identifier of an advertised energy service.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ServiceId(pub String);

impl fmt::Display for ServiceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Identifier of an energy request.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RequestId(pub String);

impl fmt::Display for RequestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Where a user is during one slot: inside a microcell or nowhere we model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "Option<CellId>", into = "Option<CellId>")]
pub enum Location {
    Cell(CellId),
    Outside,
}

impl Location {
    pub fn cell(self) -> Option<CellId> {
        match self {
            Location::Cell(c) => Some(c),
            Location::Outside => None,
        }
    }

    pub fn is_cell(self, cell: CellId) -> bool {
        self == Location::Cell(cell)
    }
}

impl From<Option<CellId>> for Location {
    fn from(v: Option<CellId>) -> Self {
        match v {
            Some(c) => Location::Cell(c),
            None => Location::Outside,
        }
    }
}

impl From<Location> for Option<CellId> {
    fn from(v: Location) -> Self {
        v.cell()
    }
}

// ---------------------------------------------------------------------------
// Time grid
// ---------------------------------------------------------------------------

/// The discrete day: fixed-width slots covering exactly 24 hours.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    /// Width of one slot in minutes.
    pub slot_minutes: u32,
    /// Number of slots per day.
    pub horizon: usize,
}

impl Default for TimeGrid {
    fn default() -> Self {
        TimeGrid { slot_minutes: 5, horizon: 288 }
    }
}

impl TimeGrid {
    /// Slot width in hours, the factor that converts watts to watt-hours per slot.
    pub fn slot_hours(&self) -> f64 {
        f64::from(self.slot_minutes) / 60.0
    }

    /// Slot index of a wall-clock time within the day.
    pub fn slot_of(&self, hours: u32, minutes: u32) -> usize {
        let total = (hours * 60 + minutes).min(24 * 60 - 1);
        (total / self.slot_minutes) as usize
    }
}

impl Validate for TimeGrid {
    fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.slot_minutes == 0 {
            v.push("slot_minutes must be positive".into());
        } else if self.slot_minutes as usize * self.horizon != 24 * 60 {
            v.push(format!(
                "slot_minutes x horizon must cover 24 hours, got {} x {}",
                self.slot_minutes, self.horizon
            ));
        }
        v
    }
}

// ---------------------------------------------------------------------------
// Microcells and stays
// ---------------------------------------------------------------------------

/// A confined gathering area: the spatial unit of colocation and composition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Microcell {
    pub id: CellId,
    pub label: String,
    /// Planar position in meters.
    pub position: (f64, f64),
    /// Cell radius in meters.
    pub radius_m: f64,
}

impl Validate for Microcell {
    fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.radius_m <= 0.0 {
            v.push("radius > 0 violated".into());
        }
        v
    }
}

/// A contiguous visit to one microcell: slots `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stay {
    pub cell: CellId,
    pub start: usize,
    pub end: usize,
}

impl Stay {
    pub fn new(cell: CellId, start: usize, end: usize) -> Self {
        Stay { cell, start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, slot: usize) -> bool {
        slot >= self.start && slot < self.end
    }
}

// ---------------------------------------------------------------------------
// Mobility and usage patterns
// ---------------------------------------------------------------------------

/// Per-slot probability distribution over microcells for one user, mined from
/// historical traces. A virtual OUTSIDE column absorbs the probability of not
/// being in any modeled cell, so every row sums to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobilityPattern {
    pub owner: UserId,
    /// Column order of `presence`; the OUTSIDE column is appended last.
    pub cells: Vec<CellId>,
    /// `presence[slot][col]`, rows of length `cells.len() + 1`.
    pub presence: Vec<Vec<f64>>,
}

impl MobilityPattern {
    pub fn horizon(&self) -> usize {
        self.presence.len()
    }

    fn column(&self, cell: CellId) -> Option<usize> {
        self.cells.iter().position(|&c| c == cell)
    }

    /// Probability of being in `cell` at `slot`; zero for unknown cells.
    pub fn prob(&self, slot: usize, cell: CellId) -> f64 {
        match (self.presence.get(slot), self.column(cell)) {
            (Some(row), Some(col)) => row[col],
            _ => 0.0,
        }
    }

    /// Probability of being outside every modeled cell at `slot`.
    pub fn outside_prob(&self, slot: usize) -> f64 {
        self.presence.get(slot).and_then(|r| r.last()).copied().unwrap_or(1.0)
    }
}

impl Validate for MobilityPattern {
    fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        let width = self.cells.len() + 1;
        for (slot, row) in self.presence.iter().enumerate() {
            if row.len() != width {
                v.push(format!("row {slot} has {} entries, expected {width}", row.len()));
                continue;
            }
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                v.push(format!("row {slot} has an entry outside [0,1]"));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > EPS {
                v.push(format!("row {slot} sums to {sum}, expected 1"));
            }
        }
        v
    }
}

/// Expected battery state of charge over the day, mined from history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageBehavior {
    pub owner: UserId,
    /// Expected SoC per slot, percent.
    pub soc: Vec<f64>,
    pub battery_capacity_wh: f64,
}

impl UsageBehavior {
    pub fn horizon(&self) -> usize {
        self.soc.len()
    }

    /// Watt-hours corresponding to `pct` percent of this battery.
    pub fn pct_to_wh(&self, pct: f64) -> f64 {
        pct / 100.0 * self.battery_capacity_wh
    }
}

impl Validate for UsageBehavior {
    fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.battery_capacity_wh <= 0.0 {
            v.push("battery_capacity > 0 violated".into());
        }
        if self.soc.iter().any(|&s| !(0.0..=100.0).contains(&s)) {
            v.push("soc entry outside [0,100]".into());
        }
        v
    }
}

// ---------------------------------------------------------------------------
// Flexibility
// ---------------------------------------------------------------------------

/// Per-stay toleration to substitute the venue or stretch/shorten the visit.
///
/// `changeable` and `stretchable` align index-by-index with `stays`. Each
/// changeable stay has a nonempty set of substitute cells; each stretchable
/// stay has inclusive length bounds in slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Flexibility {
    pub stays: Vec<Stay>,
    pub changeable: Vec<bool>,
    pub stretchable: Vec<bool>,
    /// Substitute cells per changeable stay index.
    pub alternatives: BTreeMap<usize, Vec<CellId>>,
    /// (min_slots, max_slots) per stretchable stay index.
    pub stretch_bounds: BTreeMap<usize, (usize, usize)>,
}

impl Flexibility {
    /// A flexibility record with every stay rigid.
    pub fn rigid(stays: Vec<Stay>) -> Self {
        let n = stays.len();
        Flexibility {
            stays,
            changeable: vec![false; n],
            stretchable: vec![false; n],
            alternatives: BTreeMap::new(),
            stretch_bounds: BTreeMap::new(),
        }
    }
}

impl Validate for Flexibility {
    fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        let n = self.stays.len();
        if self.changeable.len() != n || self.stretchable.len() != n {
            v.push(format!(
                "changeable/stretchable lengths ({}, {}) must equal stay count {n}",
                self.changeable.len(),
                self.stretchable.len()
            ));
            return v;
        }
        for (i, stay) in self.stays.iter().enumerate() {
            if stay.is_empty() {
                v.push(format!("stay {i} is empty"));
            }
            if i + 1 < n && stay.end > self.stays[i + 1].start {
                v.push(format!("stay {i} overlaps stay {}", i + 1));
            }
            if self.changeable[i] && self.alternatives.get(&i).map_or(true, Vec::is_empty) {
                v.push(format!("changeable stay {i} has no alternatives"));
            }
            if self.stretchable[i] {
                match self.stretch_bounds.get(&i) {
                    None => v.push(format!("stretchable stay {i} has no stretch bounds")),
                    Some(&(lo, hi)) => {
                        if !(lo <= stay.len() && stay.len() <= hi) {
                            v.push(format!(
                                "stay {i}: min_slots <= nominal <= max_slots violated ({lo} <= {} <= {hi})",
                                stay.len()
                            ));
                        }
                    }
                }
            }
        }
        v
    }
}

// ---------------------------------------------------------------------------
// Services and requests
// ---------------------------------------------------------------------------

/// Quality attributes an energy service advertises.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QoS {
    /// Microcell the service is offered in.
    pub cell: CellId,
    /// Wireless range in meters. Colocation is decided at microcell
    /// granularity; the range is carried as data only.
    pub range_m: f64,
    /// Advertised window, slots `[start, end)`.
    pub start: usize,
    pub end: usize,
    /// Total watt-hours the service can shed.
    pub deliverable_wh: f64,
    /// Transmit power in watts.
    pub intensity_w: f64,
    /// Fraction of drawn energy that arrives at the receiver.
    pub success_rate: f64,
    /// Provider reliability score.
    pub reliability: f64,
}

impl Validate for QoS {
    fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.start >= self.end {
            v.push("start < end violated".into());
        }
        if self.deliverable_wh < 0.0 {
            v.push("deliverable_capacity >= 0 violated".into());
        }
        if self.intensity_w <= 0.0 {
            v.push("intensity > 0 violated".into());
        }
        if !(0.0..=1.0).contains(&self.success_rate) {
            v.push("Tsr in [0,1] violated".into());
        }
        if !(0.0..=1.0).contains(&self.reliability) {
            v.push("Rel in [0,1] violated".into());
        }
        v
    }
}

/// A provider's advertised energy offer, generated ahead of time from their
/// mobility pattern and usage behavior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProactiveEnergyService {
    pub service_id: ServiceId,
    pub provider_id: UserId,
    /// Opaque capability labels; equality only.
    pub functionalities: BTreeSet<String>,
    pub qos: QoS,
    pub mobility: Arc<MobilityPattern>,
    pub usage: Arc<UsageBehavior>,
}

impl Validate for ProactiveEnergyService {
    fn validate(&self) -> Vec<String> {
        let mut v = self.qos.validate();
        if self.service_id.0.is_empty() {
            v.push("service_id must be nonempty".into());
        }
        v
    }
}

/// How a request came to exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RequestOrigin {
    Reactive,
    Proactive,
    BruteForce,
}

impl fmt::Display for RequestOrigin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RequestOrigin::Reactive => f.write_str("reactive"),
            RequestOrigin::Proactive => f.write_str("proactive"),
            RequestOrigin::BruteForce => f.write_str("bruteforce"),
        }
    }
}

/// A consumer's demand for energy at a time and place.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyRequest {
    pub request_id: RequestId,
    pub consumer_id: UserId,
    /// Slot the request is launched.
    pub issued_slot: usize,
    pub cell: CellId,
    /// Watt-hours needed.
    pub required_wh: f64,
    /// Maximum intake power in watts.
    pub max_intake_w: f64,
    /// Charging window length in slots; the window is `[issued, issued + duration)`.
    pub duration_slots: usize,
    pub origin: RequestOrigin,
}

impl EnergyRequest {
    pub fn window_end(&self) -> usize {
        self.issued_slot + self.duration_slots
    }

    pub fn window_contains(&self, slot: usize) -> bool {
        slot >= self.issued_slot && slot < self.window_end()
    }
}

impl Validate for EnergyRequest {
    fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.required_wh <= 0.0 {
            v.push("required_energy > 0 violated".into());
        }
        if self.max_intake_w <= 0.0 {
            v.push("max_intake > 0 violated".into());
        }
        if self.duration_slots == 0 {
            v.push("duration >= 1 violated".into());
        }
        v
    }
}

/// Static characteristics of the IoT device backing a user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub capacity_wh: f64,
    /// Transmit power when sharing (service intensity), watts.
    pub power_w: f64,
    /// Maximum intake power when receiving, watts.
    pub ci_w: f64,
    /// Transmission success rate.
    pub tsr: f64,
    /// Reliability score.
    pub rel: f64,
    #[serde(default = "default_range")]
    pub range_m: f64,
}

fn default_range() -> f64 {
    DEFAULT_RANGE_M
}

impl Validate for DeviceProfile {
    fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.capacity_wh <= 0.0 {
            v.push("capacity > 0 violated".into());
        }
        if self.power_w <= 0.0 {
            v.push("power > 0 violated".into());
        }
        if self.ci_w <= 0.0 {
            v.push("ci > 0 violated".into());
        }
        if !(0.0..=1.0).contains(&self.tsr) {
            v.push("tsr in [0,1] violated".into());
        }
        if !(0.0..=1.0).contains(&self.rel) {
            v.push("rel in [0,1] violated".into());
        }
        v
    }
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

/// Structural validation. Violations are data, not failures; `validate`
/// is deterministic and side-effect free.
pub trait Validate {
    /// Every violated invariant, empty when the value is well-formed.
    fn validate(&self) -> Vec<String>;

    /// Convenience: `Err(Error::Validation)` when any invariant is violated.
    fn ensure_valid(&self) -> crate::error::Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(crate::error::Error::Validation(v))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> TimeGrid {
        TimeGrid::default()
    }

    #[test]
    fn slot_of_maps_clock_times() {
        let g = grid();
        assert_eq!(g.slot_of(9, 0), 108);
        assert_eq!(g.slot_of(0, 0), 0);
        assert_eq!(g.slot_of(23, 59), 287);
        assert_eq!(g.slot_of(16, 0), 192);
    }

    #[test]
    fn default_grid_is_five_minute_slots() {
        let g = grid();
        assert_eq!(g.slot_minutes as usize * g.horizon, 24 * 60);
        assert!(g.validate().is_empty());
        assert!((g.slot_hours() - 1.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn qos_start_end_boundary_is_violation() {
        let qos = QoS {
            cell: CellId(0),
            range_m: 5.0,
            start: 10,
            end: 10,
            deliverable_wh: 1.0,
            intensity_w: 3.0,
            success_rate: 1.0,
            reliability: 1.0,
        };
        let v = qos.validate();
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("start < end"));
    }

    #[test]
    fn zero_required_energy_is_violation() {
        let rq = EnergyRequest {
            request_id: RequestId("rq-1".into()),
            consumer_id: UserId(1),
            issued_slot: 100,
            cell: CellId(0),
            required_wh: 0.0,
            max_intake_w: 2.0,
            duration_slots: 6,
            origin: RequestOrigin::Reactive,
        };
        let v = rq.validate();
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("required_energy"));
    }

    #[test]
    fn valid_service_has_no_violations() {
        let pattern = Arc::new(MobilityPattern {
            owner: UserId(1),
            cells: vec![CellId(0)],
            presence: vec![vec![0.8, 0.2]; 4],
        });
        let usage = Arc::new(UsageBehavior {
            owner: UserId(1),
            soc: vec![90.0; 4],
            battery_capacity_wh: 10.0,
        });
        let svc = ProactiveEnergyService {
            service_id: ServiceId("s-0001-0".into()),
            provider_id: UserId(1),
            functionalities: BTreeSet::from(["energy-transfer".to_string()]),
            qos: QoS {
                cell: CellId(0),
                range_m: 5.0,
                start: 0,
                end: 4,
                deliverable_wh: 1.5,
                intensity_w: 3.0,
                success_rate: 0.9,
                reliability: 0.95,
            },
            mobility: pattern,
            usage,
        };
        assert!(svc.validate().is_empty());
    }

    #[test]
    fn pattern_rows_must_be_distributions() {
        let bad = MobilityPattern {
            owner: UserId(2),
            cells: vec![CellId(0), CellId(1)],
            presence: vec![vec![0.5, 0.2, 0.2]],
        };
        let v = bad.validate();
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("sums to"));
    }

    #[test]
    fn flexibility_alignment_checks() {
        let stays = vec![Stay::new(CellId(0), 10, 20), Stay::new(CellId(1), 20, 30)];
        let mut fx = Flexibility::rigid(stays);
        assert!(fx.validate().is_empty());
        fx.changeable[1] = true;
        assert!(fx.validate().iter().any(|m| m.contains("no alternatives")));
        fx.alternatives.insert(1, vec![CellId(2)]);
        assert!(fx.validate().is_empty());
        fx.stretchable[0] = true;
        fx.stretch_bounds.insert(0, (12, 14));
        assert!(fx.validate().iter().any(|m| m.contains("nominal")));
    }

    #[test]
    fn location_serializes_as_nullable_cell() {
        let inside = serde_json::to_string(&Location::Cell(CellId(3))).unwrap();
        let outside = serde_json::to_string(&Location::Outside).unwrap();
        assert_eq!(inside, "3");
        assert_eq!(outside, "null");
        assert_eq!(serde_json::from_str::<Location>("null").unwrap(), Location::Outside);
    }

    #[test]
    fn model_round_trips_through_json() {
        let fx = Flexibility {
            stays: vec![Stay::new(CellId(1), 100, 110)],
            changeable: vec![true],
            stretchable: vec![true],
            alternatives: BTreeMap::from([(0usize, vec![CellId(2), CellId(3)])]),
            stretch_bounds: BTreeMap::from([(0usize, (8, 14))]),
        };
        let json = serde_json::to_string(&fx).unwrap();
        let back: Flexibility = serde_json::from_str(&json).unwrap();
        assert_eq!(fx, back);
    }
}
