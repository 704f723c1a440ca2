//! The three composition policies: proactive service/request generation with
//! consumer day planning, per-request spatio-temporal composition, the
//! reactive baseline and the brute-force baseline.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use crate::graph::MobilityGraph;
use crate::model::{
    CellId, DeviceProfile, EnergyRequest, Flexibility, Location, MobilityPattern,
    ProactiveEnergyService, QoS, RequestId, RequestOrigin, ServiceId, Stay, UsageBehavior,
    UserId, EPS,
};
use crate::patterns::{compute_surplus, extract_stays, rest_of_day_deficit};

/// A provider as the planner sees it: who they are, how they move, how their
/// battery behaves and what their hardware can do.
#[derive(Debug, Clone)]
pub struct ProviderContext {
    pub provider_id: UserId,
    pub pattern: Arc<MobilityPattern>,
    pub usage: Arc<UsageBehavior>,
    pub device: DeviceProfile,
    /// SoC percentage the provider never shares below.
    pub reserve_pct: f64,
}

/// A consumer as the planner sees it.
#[derive(Debug, Clone)]
pub struct ConsumerContext {
    pub consumer_id: UserId,
    pub usage: Arc<UsageBehavior>,
    pub flexibility: Flexibility,
    pub device: DeviceProfile,
    /// Low-battery percentage the consumer plans against.
    pub threshold_pct: f64,
}

impl ConsumerContext {
    /// Watt-hours the consumer must acquire so its forecast SoC never dips
    /// below the threshold.
    pub fn day_deficit_wh(&self) -> f64 {
        let start = self.usage.soc.first().copied().unwrap_or(0.0);
        rest_of_day_deficit(&self.usage, 0, start, self.threshold_pct)
    }
}

/// A consumer's resolved day: stays after flexibility resolution and the
/// requests pinned to them.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsumerPlan {
    pub consumer_id: UserId,
    pub stays: Vec<Stay>,
    pub requests: Vec<EnergyRequest>,
    pub expected_fulfillment_wh: f64,
}

/// One scheduled feed: `service` delivers `delivered_wh` to the request at `slot`.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub service_id: ServiceId,
    pub slot: usize,
    pub delivered_wh: f64,
}

/// Outcome of composing services for one request.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositionResult {
    pub request_id: RequestId,
    pub allocations: Vec<Allocation>,
    pub total_delivered_wh: f64,
    pub fulfilled: bool,
}

// ---------------------------------------------------------------------------
// Proactive services
// ---------------------------------------------------------------------------

/// One service per stay with positive shareable surplus. Deliverable
/// capacities are apportioned in time order so their sum never exceeds the
/// energy the provider can shed across the whole day.
pub fn generate_proactive_services(ctx: &ProviderContext) -> Vec<ProactiveEnergyService> {
    let stays = extract_stays(&ctx.pattern);
    let mut services = Vec::new();
    let mut shed_wh = 0.0;
    for (k, stay) in stays.iter().enumerate() {
        let surplus = compute_surplus(&ctx.usage, stay, ctx.reserve_pct);
        let dec = (surplus - shed_wh).max(0.0);
        if dec <= EPS {
            continue;
        }
        shed_wh += dec;
        services.push(ProactiveEnergyService {
            service_id: ServiceId(format!("s-{:04}-{k}", ctx.provider_id.0)),
            provider_id: ctx.provider_id,
            functionalities: BTreeSet::from(["energy-transfer".to_string()]),
            qos: QoS {
                cell: stay.cell,
                range_m: ctx.device.range_m,
                start: stay.start,
                end: stay.end,
                deliverable_wh: dec,
                intensity_w: ctx.device.power_w,
                success_rate: ctx.device.tsr,
                reliability: ctx.device.rel,
            },
            mobility: Arc::clone(&ctx.pattern),
            usage: Arc::clone(&ctx.usage),
        });
    }
    services
}

// ---------------------------------------------------------------------------
// Consumer planning
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct StayOption {
    stay: Stay,
    modified: bool,
}

fn options_for_stay(fx: &Flexibility, k: usize, horizon: usize) -> Vec<StayOption> {
    let nominal = fx.stays[k];
    let next_start = fx.stays.get(k + 1).map_or(horizon, |s| s.start);
    let max_len = next_start.saturating_sub(nominal.start).max(1);

    let mut cells = vec![nominal.cell];
    if fx.changeable[k] {
        if let Some(alts) = fx.alternatives.get(&k) {
            for &c in alts {
                if !cells.contains(&c) {
                    cells.push(c);
                }
            }
        }
    }

    let lengths: Vec<usize> = if fx.stretchable[k] {
        let (lo, hi) = fx.stretch_bounds.get(&k).copied().unwrap_or((nominal.len(), nominal.len()));
        let lo = lo.max(1);
        let hi = hi.min(max_len);
        if lo <= hi {
            (lo..=hi).collect()
        } else {
            vec![nominal.len().min(max_len)]
        }
    } else {
        vec![nominal.len().min(max_len)]
    };

    let mut out = Vec::with_capacity(cells.len() * lengths.len());
    for &cell in &cells {
        for &len in &lengths {
            let stay = Stay::new(cell, nominal.start, nominal.start + len);
            let modified = cell != nominal.cell || len != nominal.len();
            out.push(StayOption { stay, modified });
        }
    }
    out
}

#[derive(Debug, Clone)]
struct Partial {
    modified: usize,
    /// Sum of assigned energy weighted by acquisition slot; smaller is earlier.
    acquisition: f64,
    cells: Vec<CellId>,
    stays: Vec<Stay>,
    assigned: Vec<f64>,
}

impl Partial {
    fn better_than(&self, other: &Partial) -> bool {
        if self.modified != other.modified {
            return self.modified < other.modified;
        }
        if (self.acquisition - other.acquisition).abs() > EPS {
            return self.acquisition < other.acquisition;
        }
        self.cells < other.cells
    }
}

fn quantize(d: f64) -> u64 {
    (d.max(0.0) * 1e9).round() as u64
}

/// Resolve the consumer's stays and split its day deficit into requests.
///
/// Dynamic program over stays in time order. Each stay contributes its option
/// set: the nominal cell plus alternatives when changeable, crossed with stay
/// lengths within the stretch bounds when stretchable; rigid stays are never
/// altered. The objective maximizes expected fulfilled energy (assigned
/// request energy capped by claimable supply), tie-broken by fewer modified
/// stays, then earlier acquisition, then cell ids.
pub fn plan_consumer(ctx: &ConsumerContext, graph: &MobilityGraph) -> ConsumerPlan {
    let fx = &ctx.flexibility;
    let deficit = ctx.day_deficit_wh();
    let horizon = graph.horizon();

    // States keyed by quantized remaining deficit; each keeps the best
    // partial under the tie-break order. Prefix comparisons are preserved
    // under common suffixes because every component accumulates additively.
    let mut states: BTreeMap<u64, Partial> = BTreeMap::new();
    states.insert(
        quantize(deficit),
        Partial {
            modified: 0,
            acquisition: 0.0,
            cells: Vec::new(),
            stays: Vec::new(),
            assigned: Vec::new(),
        },
    );

    for k in 0..fx.stays.len() {
        let options = options_for_stay(fx, k, horizon);
        let mut next: BTreeMap<u64, Partial> = BTreeMap::new();
        for (dkey, partial) in &states {
            let remaining = *dkey as f64 / 1e9;
            for opt in &options {
                let claimable =
                    graph.expected_supply(opt.stay.cell, opt.stay.start..opt.stay.end);
                let assigned = claimable.min(remaining);
                let mut cand = partial.clone();
                cand.modified += usize::from(opt.modified);
                cand.acquisition += assigned * opt.stay.start as f64;
                cand.cells.push(opt.stay.cell);
                cand.stays.push(opt.stay);
                cand.assigned.push(assigned);
                let key = quantize(remaining - assigned);
                match next.get_mut(&key) {
                    Some(best) => {
                        if cand.better_than(best) {
                            *best = cand;
                        }
                    }
                    None => {
                        next.insert(key, cand);
                    }
                }
            }
        }
        states = next;
    }

    // Smallest remaining deficit wins; the map is keyed ascending.
    let (final_key, best) = states.pop_first().expect("at least one plan state");
    let fulfilled = deficit - final_key as f64 / 1e9;

    let mut requests = Vec::new();
    for (k, stay) in best.stays.iter().enumerate() {
        let re = best.assigned[k];
        if re <= EPS {
            continue;
        }
        requests.push(EnergyRequest {
            request_id: RequestId(format!("rq-{:04}-p{k}", ctx.consumer_id.0)),
            consumer_id: ctx.consumer_id,
            issued_slot: stay.start,
            cell: stay.cell,
            required_wh: re,
            max_intake_w: ctx.device.ci_w,
            duration_slots: stay.len(),
            origin: RequestOrigin::Proactive,
        });
    }

    ConsumerPlan {
        consumer_id: ctx.consumer_id,
        stays: best.stays,
        requests,
        expected_fulfillment_wh: fulfilled.max(0.0),
    }
}

/// The proactive request set for a consumer: the requests of its plan.
pub fn generate_proactive_requests(
    ctx: &ConsumerContext,
    graph: &MobilityGraph,
) -> Vec<EnergyRequest> {
    plan_consumer(ctx, graph).requests
}

// ---------------------------------------------------------------------------
// Spatio-temporal composition
// ---------------------------------------------------------------------------

/// What the composer may assume about the world while scheduling a request:
/// how much capacity each service still has and whether a given service can
/// actually feed this request in a given slot (both parties present, slot not
/// already committed to another request).
pub trait ServiceWorld {
    fn remaining_dec(&self, service: &ServiceId) -> f64;
    fn usable(&self, service: &ServiceId, slot: usize) -> bool;
}

/// A world with no presence uncertainty and no competing commitments;
/// capacities come straight from the advertised QoS.
#[derive(Debug, Clone, Default)]
pub struct FullAccess {
    overrides: HashMap<ServiceId, f64>,
}

impl FullAccess {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_dec(mut self, service: ServiceId, dec: f64) -> Self {
        self.overrides.insert(service, dec);
        self
    }
}

impl ServiceWorld for FullAccess {
    fn remaining_dec(&self, service: &ServiceId) -> f64 {
        self.overrides.get(service).copied().unwrap_or(f64::INFINITY)
    }

    fn usable(&self, _service: &ServiceId, _slot: usize) -> bool {
        true
    }
}

/// Select and schedule services for one request.
///
/// Candidates are the services colocated with the request whose windows
/// overlap it, ranked by deliverable energy within the overlap (capacity
/// capped by the rate over the shared window), ties to higher success rate
/// then service id. Allocation walks the request window slot by slot, each
/// slot fed by the single usable candidate that can deliver the most in that
/// slot (rank breaks per-slot ties), until the requirement is met or the
/// window ends. A service feeds at most one request per slot and a request
/// accepts at most one service per slot.
pub fn compose_spatiotemporal<W: ServiceWorld>(
    request: &EnergyRequest,
    services: &[ProactiveEnergyService],
    world: &W,
    slot_hours: f64,
) -> CompositionResult {
    let window = request.issued_slot..request.window_end();

    // Candidate filter and ranking.
    let mut ranked: Vec<&ProactiveEnergyService> = services
        .iter()
        .filter(|s| {
            s.qos.cell == request.cell
                && s.qos.start < window.end
                && s.qos.end > window.start
                && s.qos.success_rate > 0.0
        })
        .collect();
    // The world reports what is still uncommitted; it can never exceed the
    // advertised capacity.
    let dec_available = |s: &ProactiveEnergyService| -> f64 {
        s.qos.deliverable_wh.min(world.remaining_dec(&s.service_id))
    };
    let deliverable = |s: &ProactiveEnergyService| -> f64 {
        let overlap = s.qos.end.min(window.end).saturating_sub(s.qos.start.max(window.start));
        let rate = s.qos.intensity_w.min(request.max_intake_w) * slot_hours;
        dec_available(s).min(rate * overlap as f64) * s.qos.success_rate
    };
    ranked.sort_by(|a, b| {
        deliverable(b)
            .partial_cmp(&deliverable(a))
            .unwrap()
            .then(b.qos.success_rate.partial_cmp(&a.qos.success_rate).unwrap())
            .then(a.service_id.cmp(&b.service_id))
    });

    let mut dec_left: HashMap<&ServiceId, f64> =
        ranked.iter().map(|s| (&s.service_id, dec_available(s))).collect();

    let mut residual = request.required_wh;
    let mut allocations = Vec::new();
    for slot in window {
        if residual <= EPS {
            break;
        }
        let mut best: Option<(f64, f64, usize)> = None; // (delivered, drawn, rank)
        for (rank, svc) in ranked.iter().enumerate() {
            if slot < svc.qos.start || slot >= svc.qos.end || !world.usable(&svc.service_id, slot)
            {
                continue;
            }
            let dec = dec_left[&svc.service_id];
            if dec <= EPS {
                continue;
            }
            let rate_wh = svc.qos.intensity_w.min(request.max_intake_w) * slot_hours;
            let drawn_raw = dec.min(rate_wh);
            let delivered_raw = drawn_raw * svc.qos.success_rate;
            if delivered_raw <= EPS {
                continue;
            }
            let (delivered, drawn) = if delivered_raw > residual {
                (residual, residual / svc.qos.success_rate)
            } else {
                (delivered_raw, drawn_raw)
            };
            if best.map_or(true, |(d, _, _)| delivered > d + EPS) {
                best = Some((delivered, drawn, rank));
            }
        }
        if let Some((delivered, drawn, rank)) = best {
            let svc = ranked[rank];
            *dec_left.get_mut(&svc.service_id).unwrap() -= drawn;
            residual -= delivered;
            allocations.push(Allocation {
                service_id: svc.service_id.clone(),
                slot,
                delivered_wh: delivered,
            });
        }
    }

    let total: f64 = allocations.iter().map(|a| a.delivered_wh).sum();
    CompositionResult {
        request_id: request.request_id.clone(),
        allocations,
        total_delivered_wh: total,
        fulfilled: total >= request.required_wh - 1e-9,
    }
}

// ---------------------------------------------------------------------------
// Reactive baseline
// ---------------------------------------------------------------------------

/// Snapshot of one consumer at one slot, as seen by the reactive trigger.
#[derive(Debug, Clone)]
pub struct ReactiveTick {
    pub slot: usize,
    pub location: Location,
    /// Realized SoC after this slot's drain.
    pub soc: f64,
    /// Realized SoC before this slot's drain.
    pub prev_soc: f64,
    /// A threshold crossing happened earlier while outside any cell and has
    /// not produced a request yet.
    pub pending: bool,
    /// A reactive request window already covers this slot.
    pub has_active_request: bool,
    /// Remaining slots of the current realized stay, including this one.
    pub remaining_stay_slots: usize,
}

/// Emit a request when the realized SoC just crossed below the threshold (or
/// a crossing was deferred while outside), sized to restore the threshold and
/// cover the rest-of-day forecast deficit.
pub fn compose_reactive(ctx: &ConsumerContext, tick: &ReactiveTick) -> Option<EnergyRequest> {
    if tick.has_active_request {
        return None;
    }
    let crossed = tick.prev_soc >= ctx.threshold_pct && tick.soc < ctx.threshold_pct;
    if !(crossed || (tick.pending && tick.soc < ctx.threshold_pct)) {
        return None;
    }
    let cell = tick.location.cell()?;
    let re = rest_of_day_deficit(&ctx.usage, tick.slot, tick.soc, ctx.threshold_pct);
    if re <= EPS {
        return None;
    }
    Some(EnergyRequest {
        request_id: RequestId(format!("rq-{:04}-r{}", ctx.consumer_id.0, tick.slot)),
        consumer_id: ctx.consumer_id,
        issued_slot: tick.slot,
        cell,
        required_wh: re,
        max_intake_w: ctx.device.ci_w,
        duration_slots: tick.remaining_stay_slots.max(1),
        origin: RequestOrigin::Reactive,
    })
}

// ---------------------------------------------------------------------------
// Brute-force baseline
// ---------------------------------------------------------------------------

/// The brute-force request for one nominal stay given the consumer's SoC at
/// the stay's first slot: the whole outstanding rest-of-day deficit, or
/// nothing when the deficit is already covered.
pub fn bruteforce_request_at(
    ctx: &ConsumerContext,
    stay_index: usize,
    soc_at_start: f64,
) -> Option<EnergyRequest> {
    let stay = ctx.flexibility.stays.get(stay_index)?;
    let re = rest_of_day_deficit(&ctx.usage, stay.start, soc_at_start, ctx.threshold_pct);
    if re <= EPS {
        return None;
    }
    Some(EnergyRequest {
        request_id: RequestId(format!("rq-{:04}-b{stay_index}", ctx.consumer_id.0)),
        consumer_id: ctx.consumer_id,
        issued_slot: stay.start,
        cell: stay.cell,
        required_wh: re,
        max_intake_w: ctx.device.ci_w,
        duration_slots: stay.len(),
        origin: RequestOrigin::BruteForce,
    })
}

/// One request per visited stay, each sized to the deficit still outstanding
/// after the receipts accumulated before that stay. `receipts_wh[k]` is the
/// energy received before stay `k`; pass zeros for the no-receipt projection.
pub fn compose_bruteforce(ctx: &ConsumerContext, receipts_wh: &[f64]) -> Vec<EnergyRequest> {
    let mut out = Vec::new();
    for k in 0..ctx.flexibility.stays.len() {
        let stay = ctx.flexibility.stays[k];
        let expected = ctx.usage.soc.get(stay.start).copied().unwrap_or(0.0);
        let received = receipts_wh.get(k).copied().unwrap_or(0.0);
        let soc = (expected + received / ctx.usage.battery_capacity_wh * 100.0).min(100.0);
        if let Some(rq) = bruteforce_request_at(ctx, k, soc) {
            out.push(rq);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_mobility_graph, estimate_availability};
    use crate::model::{Microcell, TimeGrid, Validate};

    fn grid() -> TimeGrid {
        TimeGrid::default()
    }

    fn usage(soc: Vec<f64>, cap: f64) -> Arc<UsageBehavior> {
        Arc::new(UsageBehavior { owner: UserId(1), soc, battery_capacity_wh: cap })
    }

    fn device() -> DeviceProfile {
        DeviceProfile { capacity_wh: 10.0, power_w: 3.0, ci_w: 3.0, tsr: 1.0, rel: 0.9, range_m: 5.0 }
    }

    fn pattern_with_stays(
        owner: u32,
        cells: &[CellId],
        stays: &[(CellId, usize, usize)],
        presence: f64,
    ) -> Arc<MobilityPattern> {
        let g = grid();
        let width = cells.len() + 1;
        let mut rows = vec![vec![0.0; width]; g.horizon];
        for row in &mut rows {
            row[width - 1] = 1.0;
        }
        for &(cell, start, end) in stays {
            let col = cells.iter().position(|&c| c == cell).unwrap();
            for slot in start..end {
                rows[slot][col] = presence;
                rows[slot][width - 1] = 1.0 - presence;
            }
        }
        Arc::new(MobilityPattern { owner: UserId(owner), cells: cells.to_vec(), presence: rows })
    }

    fn flat_usage(soc_pct: f64) -> Arc<UsageBehavior> {
        usage(vec![soc_pct; grid().horizon], 10.0)
    }

    // -- proactive services --------------------------------------------------

    #[test]
    fn one_service_per_surplus_stay() {
        let cells = [CellId(0)];
        // Stay 12:00-12:30, constant 55 % SoC, 20 % reserve -> 3.5 Wh.
        let pattern = pattern_with_stays(1, &cells, &[(cells[0], 144, 150)], 1.0);
        let ctx = ProviderContext {
            provider_id: UserId(1),
            pattern,
            usage: flat_usage(55.0),
            device: device(),
            reserve_pct: 20.0,
        };
        let services = generate_proactive_services(&ctx);
        assert_eq!(services.len(), 1);
        let q = &services[0].qos;
        assert_eq!((q.start, q.end), (144, 150));
        assert!((q.deliverable_wh - 3.5).abs() < 1e-9);
        assert!(services[0].validate().is_empty());
    }

    #[test]
    fn provider_below_reserve_offers_nothing() {
        let cells = [CellId(0)];
        let pattern = pattern_with_stays(1, &cells, &[(cells[0], 100, 120)], 1.0);
        let ctx = ProviderContext {
            provider_id: UserId(1),
            pattern,
            usage: flat_usage(15.0),
            device: device(),
            reserve_pct: 20.0,
        };
        assert!(generate_proactive_services(&ctx).is_empty());
    }

    #[test]
    fn capacities_never_exceed_daily_surplus() {
        let cells = [CellId(0), CellId(1)];
        let pattern = pattern_with_stays(
            1,
            &cells,
            &[(cells[0], 100, 112), (cells[1], 150, 162)],
            1.0,
        );
        // Draining day: 40 % SoC at slot 100 area, ends at 40 -> constant after.
        let mut soc = vec![60.0; grid().horizon];
        for (t, s) in soc.iter_mut().enumerate() {
            if t >= 120 {
                *s = 40.0;
            }
        }
        let ctx = ProviderContext {
            provider_id: UserId(1),
            pattern,
            usage: usage(soc, 10.0),
            device: device(),
            reserve_pct: 20.0,
        };
        let services = generate_proactive_services(&ctx);
        let total: f64 = services.iter().map(|s| s.qos.deliverable_wh).sum();
        // Total daily surplus is (40 - 20)% of 10 Wh = 2 Wh.
        assert!(total <= 2.0 + 1e-9);
    }

    // -- planning -------------------------------------------------------------

    fn graph_with_supply(
        cells: &[Microcell],
        supply: &[(CellId, usize, usize, f64)], // cell, start, end, wh per slot
    ) -> MobilityGraph {
        let g = grid();
        let mut graph = build_mobility_graph::<MobilityPattern>(&[], cells, g.horizon, g.slot_hours());
        let ids: Vec<CellId> = cells.iter().map(|c| c.id).collect();
        let services: Vec<ProactiveEnergyService> = supply
            .iter()
            .enumerate()
            .map(|(i, &(cell, start, end, per_slot))| {
                let pattern = pattern_with_stays(100 + i as u32, &ids, &[(cell, start, end)], 1.0);
                ProactiveEnergyService {
                    service_id: ServiceId(format!("sup-{i}")),
                    provider_id: UserId(100 + i as u32),
                    functionalities: BTreeSet::new(),
                    qos: QoS {
                        cell,
                        range_m: 5.0,
                        start,
                        end,
                        deliverable_wh: per_slot * (end - start) as f64,
                        // High intensity so the uniform share is the cap.
                        intensity_w: per_slot * 12.0,
                        success_rate: 1.0,
                        reliability: 1.0,
                    },
                    mobility: pattern,
                    usage: flat_usage(90.0),
                }
            })
            .collect();
        estimate_availability(&mut graph, &services).unwrap();
        graph
    }

    fn microcells(n: u32) -> Vec<Microcell> {
        (0..n)
            .map(|i| Microcell {
                id: CellId(i),
                label: format!("cell-{i}"),
                position: (f64::from(i) * 100.0, 0.0),
                radius_m: 30.0,
            })
            .collect()
    }

    fn consumer_with(fx: Flexibility, soc: Vec<f64>) -> ConsumerContext {
        ConsumerContext {
            consumer_id: UserId(7),
            usage: usage(soc, 10.0),
            flexibility: fx,
            device: device(),
            threshold_pct: 20.0,
        }
    }

    fn declining_to(min_pct: f64) -> Vec<f64> {
        let g = grid();
        let start = 90.0;
        (0..g.horizon)
            .map(|t| start - (start - min_pct) * t as f64 / (g.horizon - 1) as f64)
            .collect()
    }

    #[test]
    fn rigid_plan_keeps_nominal_stays() {
        let cells = microcells(2);
        let stays = vec![Stay::new(CellId(0), 100, 112), Stay::new(CellId(1), 150, 162)];
        let fx = Flexibility::rigid(stays.clone());
        let graph = graph_with_supply(&cells, &[(CellId(0), 100, 112, 0.2)]);
        let ctx = consumer_with(fx, declining_to(10.0));
        let plan = plan_consumer(&ctx, &graph);
        assert_eq!(plan.stays, stays);
    }

    #[test]
    fn changeable_stay_moves_to_richer_cell() {
        let cells = microcells(3);
        // Lunch stay is changeable between cell 1 (poor) and cell 2 (rich).
        let stays = vec![Stay::new(CellId(1), 150, 162)];
        let mut fx = Flexibility::rigid(stays);
        fx.changeable[0] = true;
        fx.alternatives.insert(0, vec![CellId(2)]);
        let graph = graph_with_supply(
            &cells,
            &[(CellId(1), 150, 162, 0.02), (CellId(2), 150, 162, 0.1)],
        );
        let ctx = consumer_with(fx, declining_to(10.0));
        let plan = plan_consumer(&ctx, &graph);
        assert_eq!(plan.stays[0].cell, CellId(2));
        assert_eq!(plan.requests.len(), 1);
        assert_eq!(plan.requests[0].cell, CellId(2));
    }

    #[test]
    fn stretchable_stay_extends_to_cover_deficit() {
        let cells = microcells(1);
        // 0.1 Wh per slot supply; deficit 0.3 Wh beyond the nominal length.
        let stays = vec![Stay::new(CellId(0), 100, 103)];
        let mut fx = Flexibility::rigid(stays);
        fx.stretchable[0] = true;
        fx.stretch_bounds.insert(0, (3, 6));
        let graph = graph_with_supply(&cells, &[(CellId(0), 100, 112, 0.1)]);
        // Deficit 0.6 Wh: 3 nominal slots give 0.3, stretching +3 covers it.
        let mut soc = vec![90.0; grid().horizon];
        for (t, s) in soc.iter_mut().enumerate() {
            if t >= 200 {
                *s = 14.0;
            }
        }
        let ctx = consumer_with(fx, soc);
        assert!((ctx.day_deficit_wh() - 0.6).abs() < 1e-9);
        let plan = plan_consumer(&ctx, &graph);
        assert_eq!(plan.stays[0].end, 106);
        assert!((plan.expected_fulfillment_wh - 0.6).abs() < 1e-6);
    }

    #[test]
    fn zero_deficit_plans_no_requests_and_no_changes() {
        let cells = microcells(2);
        let stays = vec![Stay::new(CellId(0), 100, 112)];
        let mut fx = Flexibility::rigid(stays.clone());
        fx.changeable[0] = true;
        fx.alternatives.insert(0, vec![CellId(1)]);
        let graph = graph_with_supply(&cells, &[(CellId(1), 100, 112, 0.5)]);
        let ctx = consumer_with(fx, vec![80.0; grid().horizon]);
        let plan = plan_consumer(&ctx, &graph);
        assert!(plan.requests.is_empty());
        assert_eq!(plan.stays, stays);
    }

    #[test]
    fn requests_cover_the_deficit_before_the_late_library_stay() {
        // The forecast dips below the threshold during the last (library)
        // stay; the earlier coffee and food-court stays can cover the whole
        // deficit, so the requests land there and the library gets none.
        let cells = microcells(3);
        let stays = vec![
            Stay::new(CellId(0), 120, 132), // coffee
            Stay::new(CellId(1), 150, 162), // food court
            Stay::new(CellId(2), 192, 216), // library
        ];
        let fx = Flexibility::rigid(stays);
        let graph = graph_with_supply(
            &cells,
            &[
                (CellId(0), 120, 132, 0.07),
                (CellId(1), 150, 162, 0.08),
                (CellId(2), 192, 216, 0.05),
            ],
        );
        let ctx = consumer_with(fx, declining_to(8.0));
        assert!((ctx.day_deficit_wh() - 1.2).abs() < 1e-9);
        let plan = plan_consumer(&ctx, &graph);
        assert_eq!(plan.requests.len(), 2);
        assert!(plan.requests.iter().all(|r| r.cell != CellId(2)));
        let total: f64 = plan.requests.iter().map(|r| r.required_wh).sum();
        assert!((total - 1.2).abs() < 1e-6);
    }

    // -- spatio-temporal composition ------------------------------------------

    fn plain_service(
        id: &str,
        cell: CellId,
        window: (usize, usize),
        dec: f64,
        intensity: f64,
        tsr: f64,
    ) -> ProactiveEnergyService {
        let pattern = pattern_with_stays(50, &[cell], &[(cell, window.0, window.1)], 1.0);
        ProactiveEnergyService {
            service_id: ServiceId(id.to_string()),
            provider_id: UserId(50),
            functionalities: BTreeSet::new(),
            qos: QoS {
                cell,
                range_m: 5.0,
                start: window.0,
                end: window.1,
                deliverable_wh: dec,
                intensity_w: intensity,
                success_rate: tsr,
                reliability: 1.0,
            },
            mobility: pattern,
            usage: flat_usage(90.0),
        }
    }

    fn request(cell: CellId, slot: usize, wh: f64, du: usize, ci: f64) -> EnergyRequest {
        EnergyRequest {
            request_id: RequestId("rq-t".into()),
            consumer_id: UserId(7),
            issued_slot: slot,
            cell,
            required_wh: wh,
            max_intake_w: ci,
            duration_slots: du,
            origin: RequestOrigin::Proactive,
        }
    }

    #[test]
    fn composes_across_services_until_fulfilled() {
        let g = grid();
        let cell = CellId(0);
        // 30-minute window; s1 capacity-capped at 0.6 Wh, s2 capacity-capped
        // at 0.5 Wh, s3 in another cell. Both feed 0.2 Wh per slot.
        let s1 = plain_service("s1", cell, (100, 106), 0.6, 2.4, 1.0);
        let s2 = plain_service("s2", cell, (100, 106), 0.5, 2.4, 1.0);
        let s3 = plain_service("s3", CellId(1), (100, 106), 10.0, 3.0, 1.0);
        let rq = request(cell, 100, 1.0, 6, 3.0);
        let result =
            compose_spatiotemporal(&rq, &[s1, s2, s3], &FullAccess::new(), g.slot_hours());
        assert!(result.fulfilled);
        assert!((result.total_delivered_wh - 1.0).abs() < 1e-9);
        let used: BTreeSet<&str> =
            result.allocations.iter().map(|a| a.service_id.0.as_str()).collect();
        assert!(used.contains("s1") && used.contains("s2"));
        assert!(!used.contains("s3"));
    }

    #[test]
    fn no_overlapping_services_means_zero() {
        let g = grid();
        let s1 = plain_service("s1", CellId(0), (10, 20), 5.0, 3.0, 1.0);
        let rq = request(CellId(0), 100, 1.0, 6, 3.0);
        let result = compose_spatiotemporal(&rq, &[s1], &FullAccess::new(), g.slot_hours());
        assert_eq!(result.total_delivered_wh, 0.0);
        assert!(!result.fulfilled);
        assert!(result.allocations.is_empty());
    }

    #[test]
    fn single_slot_rate_arithmetic() {
        // I=3 W, CI=2 W, Tsr=0.8, one 5-minute slot -> 2/12*0.8 Wh.
        let g = grid();
        let s1 = plain_service("s1", CellId(0), (100, 101), 10.0, 3.0, 0.8);
        let rq = request(CellId(0), 100, 1.0, 1, 2.0);
        let result = compose_spatiotemporal(&rq, &[s1], &FullAccess::new(), g.slot_hours());
        assert!((result.total_delivered_wh - 2.0 / 12.0 * 0.8).abs() < 1e-12);
    }

    #[test]
    fn composition_respects_result_invariants() {
        let g = grid();
        let cell = CellId(0);
        let services = vec![
            plain_service("a", cell, (98, 110), 0.35, 2.0, 0.9),
            plain_service("b", cell, (100, 104), 0.2, 3.0, 0.75),
            plain_service("c", cell, (90, 102), 5.0, 1.5, 1.0),
        ];
        let rq = request(cell, 100, 0.9, 8, 2.5);
        let result = compose_spatiotemporal(&rq, &services, &FullAccess::new(), g.slot_hours());
        let total: f64 = result.allocations.iter().map(|a| a.delivered_wh).sum();
        assert!((total - result.total_delivered_wh).abs() < 1e-12);
        assert!(result.total_delivered_wh <= rq.required_wh + 1e-9);
        for a in &result.allocations {
            assert!(rq.window_contains(a.slot));
            let svc = services.iter().find(|s| s.service_id == a.service_id).unwrap();
            assert!(a.slot >= svc.qos.start && a.slot < svc.qos.end);
        }
        // Per-service totals bounded by capacity (delivered side).
        for svc in &services {
            let delivered: f64 = result
                .allocations
                .iter()
                .filter(|a| a.service_id == svc.service_id)
                .map(|a| a.delivered_wh)
                .sum();
            assert!(delivered <= svc.qos.deliverable_wh * svc.qos.success_rate + 1e-9);
        }
        // One service per slot.
        let mut slots: Vec<usize> = result.allocations.iter().map(|a| a.slot).collect();
        slots.sort_unstable();
        slots.dedup();
        assert_eq!(slots.len(), result.allocations.len());
    }

    // -- reactive -------------------------------------------------------------

    fn reactive_ctx(soc: Vec<f64>) -> ConsumerContext {
        ConsumerContext {
            consumer_id: UserId(3),
            usage: usage(soc, 10.0),
            flexibility: Flexibility::rigid(vec![]),
            device: device(),
            threshold_pct: 20.0,
        }
    }

    #[test]
    fn reactive_triggers_on_crossing_in_cell() {
        let ctx = reactive_ctx(declining_to(10.0));
        let tick = ReactiveTick {
            slot: 192,
            location: Location::Cell(CellId(4)),
            soc: 19.8,
            prev_soc: 20.1,
            pending: false,
            has_active_request: false,
            remaining_stay_slots: 12,
        };
        let rq = compose_reactive(&ctx, &tick).unwrap();
        assert_eq!(rq.issued_slot, 192);
        assert_eq!(rq.cell, CellId(4));
        assert_eq!(rq.duration_slots, 12);
        assert!(rq.required_wh > 0.0);
    }

    #[test]
    fn reactive_silent_above_threshold() {
        let ctx = reactive_ctx(vec![55.0; grid().horizon]);
        let tick = ReactiveTick {
            slot: 100,
            location: Location::Cell(CellId(0)),
            soc: 55.0,
            prev_soc: 55.0,
            pending: false,
            has_active_request: false,
            remaining_stay_slots: 6,
        };
        assert!(compose_reactive(&ctx, &tick).is_none());
    }

    #[test]
    fn reactive_defers_outside_crossings() {
        let ctx = reactive_ctx(declining_to(10.0));
        let outside = ReactiveTick {
            slot: 150,
            location: Location::Outside,
            soc: 19.5,
            prev_soc: 20.2,
            pending: false,
            has_active_request: false,
            remaining_stay_slots: 0,
        };
        assert!(compose_reactive(&ctx, &outside).is_none());
        // Later, inside a cell with the pending flag set.
        let inside = ReactiveTick {
            slot: 160,
            location: Location::Cell(CellId(2)),
            soc: 18.0,
            prev_soc: 18.2,
            pending: true,
            has_active_request: false,
            remaining_stay_slots: 8,
        };
        assert!(compose_reactive(&ctx, &inside).is_some());
    }

    // -- brute force -----------------------------------------------------------

    fn bruteforce_ctx(min_pct: f64, stays: Vec<Stay>) -> ConsumerContext {
        ConsumerContext {
            consumer_id: UserId(5),
            usage: usage(declining_to(min_pct), 10.0),
            flexibility: Flexibility::rigid(stays),
            device: device(),
            threshold_pct: 20.0,
        }
    }

    #[test]
    fn bruteforce_requests_every_visited_cell() {
        let stays = vec![
            Stay::new(CellId(0), 100, 110),
            Stay::new(CellId(1), 120, 130),
            Stay::new(CellId(2), 150, 160),
            Stay::new(CellId(3), 200, 210),
        ];
        let ctx = bruteforce_ctx(8.0, stays);
        let rqs = compose_bruteforce(&ctx, &[0.0; 4]);
        assert_eq!(rqs.len(), 4);
        assert!(rqs.iter().all(|r| r.origin == RequestOrigin::BruteForce));
    }

    #[test]
    fn bruteforce_zero_deficit_is_silent() {
        let stays = vec![Stay::new(CellId(0), 100, 110)];
        let ctx = bruteforce_ctx(50.0, stays);
        assert!(compose_bruteforce(&ctx, &[0.0]).is_empty());
    }

    #[test]
    fn bruteforce_suppresses_after_deficit_met() {
        let stays = vec![Stay::new(CellId(0), 100, 110), Stay::new(CellId(1), 150, 160)];
        let ctx = bruteforce_ctx(8.0, stays);
        let full = ctx.day_deficit_wh();
        assert!(full > 0.0);
        // Receipts at the first stay cover everything.
        let rqs = compose_bruteforce(&ctx, &[0.0, full + 0.5]);
        assert_eq!(rqs.len(), 1);
        assert_eq!(rqs[0].issued_slot, 100);
    }
}
