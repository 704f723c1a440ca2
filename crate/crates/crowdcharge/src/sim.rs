//! Discrete-time execution engine: realizes mobility from patterns, drains
//! batteries per usage behavior, activates requests per policy, schedules and
//! performs wireless transfers, and records every transfer in a ledger.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::composition::{
    bruteforce_request_at, compose_reactive, compose_spatiotemporal, generate_proactive_services,
    plan_consumer, ConsumerContext, ProviderContext, ReactiveTick, ServiceWorld,
};
use crate::error::Result;
use crate::graph::{build_mobility_graph, estimate_availability};
use crate::model::{
    CellId, EnergyRequest, Location, MobilityPattern, ProactiveEnergyService, RequestId,
    ServiceId, UsageBehavior, UserId, Validate, DEFAULT_RESERVE_PCT, DEFAULT_THRESHOLD_PCT, EPS,
};
use crate::patterns::{
    derive_flexibility, estimate_mobility_pattern, estimate_usage_behavior, extract_stays,
};
use crate::report::{RequestRecord, RunReport};
use crate::scenario::{Role, Scenario};
use crate::seeds::mix_seed;

/// Which composition technique drives request generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Policy {
    Reactive,
    Proactive,
    BruteForce,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::Reactive, Policy::Proactive, Policy::BruteForce];
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::Reactive => f.write_str("reactive"),
            Policy::Proactive => f.write_str("proactive"),
            Policy::BruteForce => f.write_str("bruteforce"),
        }
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "reactive" => Ok(Policy::Reactive),
            "proactive" => Ok(Policy::Proactive),
            "bruteforce" | "brute-force" => Ok(Policy::BruteForce),
            other => Err(format!("unknown policy '{other}'")),
        }
    }
}

/// One executed transfer.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferRecord {
    pub slot: usize,
    pub service_id: ServiceId,
    pub request_id: RequestId,
    pub delivered_wh: f64,
    pub drawn_wh: f64,
}

/// Mutable world the engine steps through the day.
#[derive(Debug, Clone)]
pub struct WorldState {
    pub slot: usize,
    pub locations: HashMap<UserId, Location>,
    /// Realized SoC per user, percent.
    pub soc: HashMap<UserId, f64>,
    pub capacity: HashMap<UserId, f64>,
    /// Watt-hours each service can still draw from its battery.
    pub remaining_dec: HashMap<ServiceId, f64>,
    /// Watt-hours received so far per request.
    pub received: HashMap<RequestId, f64>,
    pub ledger: Vec<TransferRecord>,
}

/// Everything needed to audit a run after the fact.
#[derive(Debug, Clone)]
pub struct RunTrace {
    pub ledger: Vec<TransferRecord>,
    pub realized: BTreeMap<UserId, Vec<Location>>,
    pub services: Vec<ProactiveEnergyService>,
    pub requests: Vec<EnergyRequest>,
}

// ---------------------------------------------------------------------------
// Mobility realization
// ---------------------------------------------------------------------------

fn sample_row(pattern: &MobilityPattern, slot: usize, rng: &mut ChaCha8Rng) -> Location {
    let row = &pattern.presence[slot];
    let r: f64 = rng.gen();
    let mut acc = 0.0;
    for (col, &p) in row.iter().enumerate() {
        acc += p;
        if r < acc {
            return if col < pattern.cells.len() {
                Location::Cell(pattern.cells[col])
            } else {
                Location::Outside
            };
        }
    }
    Location::Outside
}

/// Sample one day of locations from a pattern. Slots inside a mined stay are
/// sampled once at the stay's first slot and held for the whole interval;
/// slots outside any stay are sampled independently.
pub fn realize_mobility(pattern: &MobilityPattern, seed: u64) -> Vec<Location> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizon = pattern.horizon();
    let stays = extract_stays(pattern);
    let mut out = vec![Location::Outside; horizon];
    let mut next_stay = 0;
    let mut slot = 0;
    while slot < horizon {
        if next_stay < stays.len() && stays[next_stay].start == slot {
            let stay = stays[next_stay];
            let loc = sample_row(pattern, slot, &mut rng);
            for s in stay.start..stay.end.min(horizon) {
                out[s] = loc;
            }
            slot = stay.end;
            next_stay += 1;
        } else {
            out[slot] = sample_row(pattern, slot, &mut rng);
            slot += 1;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Transfers
// ---------------------------------------------------------------------------

/// Execute one slot of wireless transfer from `service` to `request`.
///
/// Drawn energy is capped by the service's remaining capacity and the shared
/// rate limit; delivered energy is the drawn amount after transmission loss,
/// further capped by the request's residual requirement (with the draw scaled
/// back proportionally). Updates capacities, receipts and both batteries and
/// appends a ledger record. Colocation and window preconditions are engine
/// contracts; violating them is a bug, not data.
pub fn transfer_energy(
    service: &ProactiveEnergyService,
    request: &EnergyRequest,
    state: &mut WorldState,
    slot: usize,
    slot_hours: f64,
) -> (f64, f64) {
    assert!(
        slot >= service.qos.start && slot < service.qos.end,
        "transfer outside service window"
    );
    assert!(request.window_contains(slot), "transfer outside request window");
    assert_eq!(service.qos.cell, request.cell, "service and request in different cells");
    assert!(
        state.locations.get(&service.provider_id).is_some_and(|l| l.is_cell(service.qos.cell)),
        "provider not colocated"
    );
    assert!(
        state.locations.get(&request.consumer_id).is_some_and(|l| l.is_cell(request.cell)),
        "consumer not colocated"
    );

    let tsr = service.qos.success_rate;
    if tsr <= 0.0 {
        return (0.0, 0.0);
    }
    let dec = state.remaining_dec.get(&service.service_id).copied().unwrap_or(0.0);
    let drawn_raw = dec.min(service.qos.intensity_w.min(request.max_intake_w) * slot_hours);
    let delivered_raw = drawn_raw * tsr;
    let received = state.received.get(&request.request_id).copied().unwrap_or(0.0);
    let residual = (request.required_wh - received).max(0.0);
    let (delivered, drawn) = if delivered_raw > residual {
        (residual, residual / tsr)
    } else {
        (delivered_raw, drawn_raw)
    };
    if delivered <= EPS {
        return (0.0, 0.0);
    }

    *state.remaining_dec.get_mut(&service.service_id).unwrap() -= drawn;
    *state.received.entry(request.request_id.clone()).or_insert(0.0) += delivered;
    let provider_cap = state.capacity[&service.provider_id];
    let consumer_cap = state.capacity[&request.consumer_id];
    if let Some(s) = state.soc.get_mut(&service.provider_id) {
        *s = (*s - drawn / provider_cap * 100.0).max(0.0);
    }
    if let Some(s) = state.soc.get_mut(&request.consumer_id) {
        *s = (*s + delivered / consumer_cap * 100.0).min(100.0);
    }
    state.ledger.push(TransferRecord {
        slot,
        service_id: service.service_id.clone(),
        request_id: request.request_id.clone(),
        delivered_wh: delivered,
        drawn_wh: drawn,
    });
    (delivered, drawn)
}

// ---------------------------------------------------------------------------
// Run
// ---------------------------------------------------------------------------

struct EngineView<'a> {
    services: &'a [ProactiveEnergyService],
    service_index: &'a HashMap<ServiceId, usize>,
    available_dec: &'a HashMap<ServiceId, f64>,
    occupied: &'a HashMap<ServiceId, HashSet<usize>>,
    realized: &'a [Vec<Location>],
    user_index: &'a HashMap<UserId, usize>,
    consumer_index: usize,
    request_cell: CellId,
}

impl ServiceWorld for EngineView<'_> {
    fn remaining_dec(&self, service: &ServiceId) -> f64 {
        self.available_dec.get(service).copied().unwrap_or(0.0)
    }

    fn usable(&self, service: &ServiceId, slot: usize) -> bool {
        if self.occupied.get(service).is_some_and(|s| s.contains(&slot)) {
            return false;
        }
        let svc = &self.services[self.service_index[service]];
        let provider = self.user_index[&svc.provider_id];
        self.realized[provider][slot].is_cell(svc.qos.cell)
            && self.realized[self.consumer_index][slot].is_cell(self.request_cell)
    }
}

/// Run one policy over one scenario with one seed. Pure: identical inputs
/// produce identical reports and traces. The report's `runtime_ms` is left at
/// zero; harnesses measure wall time around this call.
pub fn run(scenario: &Scenario, policy: Policy, seed: u64) -> Result<RunReport> {
    run_with_trace(scenario, policy, seed).map(|(report, _)| report)
}

/// [`run`], also returning the audit trace.
pub fn run_with_trace(
    scenario: &Scenario,
    policy: Policy,
    seed: u64,
) -> Result<(RunReport, RunTrace)> {
    scenario.ensure_valid()?;
    let grid = scenario.grid;
    let horizon = grid.horizon;
    let slot_hours = grid.slot_hours();
    let cell_ids: Vec<CellId> = scenario.microcells.iter().map(|c| c.id).collect();
    let users = &scenario.users;
    let user_index: HashMap<UserId, usize> =
        users.iter().enumerate().map(|(i, u)| (u.id, i)).collect();

    // Mine per-user patterns, usage and (for consumers) flexibility.
    let mut patterns: Vec<Arc<MobilityPattern>> = Vec::with_capacity(users.len());
    let mut usages: Vec<Arc<UsageBehavior>> = Vec::with_capacity(users.len());
    for user in users {
        let traces = user.daily_traces();
        patterns.push(Arc::new(estimate_mobility_pattern(&traces, &cell_ids, &grid)?));
        usages.push(Arc::new(estimate_usage_behavior(&traces, user.device.capacity_wh)?));
    }

    let mut consumers: Vec<(usize, ConsumerContext)> = Vec::new();
    for (i, user) in users.iter().enumerate() {
        if user.role != Role::Consumer {
            continue;
        }
        let flexibility =
            derive_flexibility(&patterns[i], &user.flexibility.annotations())?;
        consumers.push((
            i,
            ConsumerContext {
                consumer_id: user.id,
                usage: Arc::clone(&usages[i]),
                flexibility,
                device: user.device.clone(),
                threshold_pct: DEFAULT_THRESHOLD_PCT,
            },
        ));
    }

    // Providers advertise the same proactive services under every policy;
    // the policies differ on the consumer side only.
    let mut services: Vec<ProactiveEnergyService> = Vec::new();
    for (i, user) in users.iter().enumerate() {
        if user.role != Role::Provider {
            continue;
        }
        let ctx = ProviderContext {
            provider_id: user.id,
            pattern: Arc::clone(&patterns[i]),
            usage: Arc::clone(&usages[i]),
            device: user.device.clone(),
            reserve_pct: DEFAULT_RESERVE_PCT,
        };
        services.extend(generate_proactive_services(&ctx));
    }
    let service_index: HashMap<ServiceId, usize> =
        services.iter().enumerate().map(|(i, s)| (s.service_id.clone(), i)).collect();

    // Realize mobility; planned consumers will have their stays pinned below.
    let mut realized: Vec<Vec<Location>> = users
        .iter()
        .enumerate()
        .map(|(i, user)| realize_mobility(&patterns[i], mix_seed(seed, u64::from(user.id.0))))
        .collect();

    // Proactive planning: services -> graph -> availability -> per-consumer
    // plans, each consumer's requests registering demand for the next.
    let mut queued: BTreeMap<(usize, RequestId), EnergyRequest> = BTreeMap::new();
    if policy == Policy::Proactive {
        let mut graph =
            build_mobility_graph(&patterns, &scenario.microcells, horizon, slot_hours);
        estimate_availability(&mut graph, &services)?;
        for (i, ctx) in &consumers {
            let plan = plan_consumer(ctx, &graph);
            for rq in &plan.requests {
                graph.add_request_demand(rq);
                queued.insert((rq.issued_slot, rq.request_id.clone()), rq.clone());
            }
            for stay in &plan.stays {
                for slot in stay.start..stay.end.min(horizon) {
                    realized[*i][slot] = Location::Cell(stay.cell);
                }
            }
        }
    }

    // Engine state.
    let mut state = WorldState {
        slot: 0,
        locations: users
            .iter()
            .enumerate()
            .map(|(i, u)| (u.id, realized[i][0]))
            .collect(),
        soc: users
            .iter()
            .enumerate()
            .map(|(i, u)| (u.id, usages[i].soc.first().copied().unwrap_or(100.0)))
            .collect(),
        capacity: users.iter().map(|u| (u.id, u.device.capacity_wh)).collect(),
        remaining_dec: services
            .iter()
            .map(|s| (s.service_id.clone(), s.qos.deliverable_wh))
            .collect(),
        received: HashMap::new(),
        ledger: Vec::new(),
    };
    // Reservation pool and per-service slot commitments made at composition time.
    let mut available_dec: HashMap<ServiceId, f64> = state.remaining_dec.clone();
    let mut occupied: HashMap<ServiceId, HashSet<usize>> = HashMap::new();
    // Planned transfers per slot: (service index, request id, planned delivered).
    let mut schedule: Vec<Vec<(usize, RequestId, f64)>> = vec![Vec::new(); horizon];
    let mut launched: Vec<EnergyRequest> = Vec::new();
    let mut request_by_id: HashMap<RequestId, usize> = HashMap::new();
    // Reactive bookkeeping.
    let mut pending_crossing: HashMap<UserId, bool> = HashMap::new();
    let mut active_until: HashMap<UserId, usize> = HashMap::new();

    for slot in 0..horizon {
        state.slot = slot;
        for (i, user) in users.iter().enumerate() {
            state.locations.insert(user.id, realized[i][slot]);
        }

        // Drain per mined usage deltas, then (later in the slot) receipts.
        let mut prev_soc: HashMap<UserId, f64> = HashMap::new();
        for (i, user) in users.iter().enumerate() {
            let entry = state.soc.get_mut(&user.id).unwrap();
            prev_soc.insert(user.id, *entry);
            if slot > 0 {
                let delta = usages[i].soc[slot] - usages[i].soc[slot - 1];
                *entry = (*entry + delta).clamp(0.0, 100.0);
            }
        }

        // Policy-specific request generation.
        match policy {
            Policy::Proactive => {}
            Policy::Reactive => {
                for (i, ctx) in &consumers {
                    let uid = ctx.consumer_id;
                    let soc = state.soc[&uid];
                    let prev = prev_soc[&uid];
                    let location = realized[*i][slot];
                    let pending = pending_crossing.get(&uid).copied().unwrap_or(false);
                    let has_active = active_until.get(&uid).is_some_and(|&end| slot < end);
                    let remaining_stay = realized[*i][slot..]
                        .iter()
                        .take_while(|&&l| l == location)
                        .count();
                    let tick = ReactiveTick {
                        slot,
                        location,
                        soc,
                        prev_soc: prev,
                        pending,
                        has_active_request: has_active,
                        remaining_stay_slots: remaining_stay,
                    };
                    if let Some(rq) = compose_reactive(ctx, &tick) {
                        active_until.insert(uid, rq.window_end());
                        pending_crossing.insert(uid, false);
                        queued.insert((slot, rq.request_id.clone()), rq);
                    } else if !has_active
                        && location == Location::Outside
                        && prev >= ctx.threshold_pct
                        && soc < ctx.threshold_pct
                    {
                        pending_crossing.insert(uid, true);
                    }
                }
            }
            Policy::BruteForce => {
                for (_, ctx) in &consumers {
                    for (k, stay) in ctx.flexibility.stays.iter().enumerate() {
                        if stay.start == slot {
                            let soc = state.soc[&ctx.consumer_id];
                            if let Some(rq) = bruteforce_request_at(ctx, k, soc) {
                                queued.insert((slot, rq.request_id.clone()), rq);
                            }
                        }
                    }
                }
            }
        }

        // Activate due requests in (slot, id) order and schedule transfers.
        while let Some(entry) = queued.first_entry() {
            if entry.key().0 > slot {
                break;
            }
            let rq = entry.remove();
            let consumer_index = user_index[&rq.consumer_id];
            let view = EngineView {
                services: &services,
                service_index: &service_index,
                available_dec: &available_dec,
                occupied: &occupied,
                realized: &realized,
                user_index: &user_index,
                consumer_index,
                request_cell: rq.cell,
            };
            let result = compose_spatiotemporal(&rq, &services, &view, slot_hours);
            for alloc in &result.allocations {
                let idx = service_index[&alloc.service_id];
                let tsr = services[idx].qos.success_rate;
                let drawn = alloc.delivered_wh / tsr;
                *available_dec.get_mut(&alloc.service_id).unwrap() -= drawn;
                occupied.entry(alloc.service_id.clone()).or_default().insert(alloc.slot);
                schedule[alloc.slot].push((idx, rq.request_id.clone(), alloc.delivered_wh));
            }
            request_by_id.insert(rq.request_id.clone(), launched.len());
            launched.push(rq);
        }

        // Execute transfers planned for this slot.
        let due = std::mem::take(&mut schedule[slot]);
        for (svc_idx, rid, planned_wh) in due {
            let request = &launched[request_by_id[&rid]];
            let (delivered, _drawn) =
                transfer_energy(&services[svc_idx], request, &mut state, slot, slot_hours);
            debug_assert!(
                (delivered - planned_wh).abs() < 1e-6,
                "scheduled {planned_wh} but transferred {delivered}"
            );
        }
    }

    let records: Vec<RequestRecord> = launched
        .iter()
        .map(|rq| {
            let delivered = state.received.get(&rq.request_id).copied().unwrap_or(0.0);
            RequestRecord {
                request_id: rq.request_id.clone(),
                origin: rq.origin,
                required_wh: rq.required_wh,
                delivered_wh: delivered,
                fulfilled: delivered >= rq.required_wh - 1e-9,
            }
        })
        .collect();

    let report = RunReport::from_records(scenario.id.clone(), policy, seed, records);
    let trace = RunTrace {
        ledger: state.ledger,
        realized: users
            .iter()
            .enumerate()
            .map(|(i, u)| (u.id, std::mem::take(&mut realized[i])))
            .collect(),
        services,
        requests: launched,
    };
    Ok((report, trace))
}

/// Post-hoc conservation checks over a run trace. Returns every violation;
/// empty means the ledger is consistent with capacities, requirements,
/// windows and colocation.
pub fn audit_trace(trace: &RunTrace) -> Vec<String> {
    let mut violations = Vec::new();
    let services: HashMap<&ServiceId, &ProactiveEnergyService> =
        trace.services.iter().map(|s| (&s.service_id, s)).collect();
    let requests: HashMap<&RequestId, &EnergyRequest> =
        trace.requests.iter().map(|r| (&r.request_id, r)).collect();

    let mut drawn_per_service: HashMap<&ServiceId, f64> = HashMap::new();
    let mut delivered_per_request: HashMap<&RequestId, f64> = HashMap::new();

    for rec in &trace.ledger {
        let Some(svc) = services.get(&rec.service_id) else {
            violations.push(format!("ledger references unknown service {}", rec.service_id));
            continue;
        };
        let Some(rq) = requests.get(&rec.request_id) else {
            violations.push(format!("ledger references unknown request {}", rec.request_id));
            continue;
        };
        if (rec.delivered_wh - rec.drawn_wh * svc.qos.success_rate).abs() > 1e-9 {
            violations.push(format!(
                "record at slot {}: delivered {} != drawn {} x Tsr {}",
                rec.slot, rec.delivered_wh, rec.drawn_wh, svc.qos.success_rate
            ));
        }
        if rec.slot < svc.qos.start || rec.slot >= svc.qos.end {
            violations.push(format!(
                "transfer at slot {} outside service window of {}",
                rec.slot, rec.service_id
            ));
        }
        if !rq.window_contains(rec.slot) {
            violations.push(format!(
                "transfer at slot {} outside request window of {}",
                rec.slot, rec.request_id
            ));
        }
        if svc.qos.cell != rq.cell {
            violations.push(format!(
                "transfer between cells {} and {}",
                svc.qos.cell, rq.cell
            ));
        }
        let provider_there = trace
            .realized
            .get(&svc.provider_id)
            .and_then(|locs| locs.get(rec.slot))
            .is_some_and(|l| l.is_cell(svc.qos.cell));
        let consumer_there = trace
            .realized
            .get(&rq.consumer_id)
            .and_then(|locs| locs.get(rec.slot))
            .is_some_and(|l| l.is_cell(rq.cell));
        if !provider_there || !consumer_there {
            violations.push(format!(
                "non-colocated transfer at slot {} for {}",
                rec.slot, rec.service_id
            ));
        }
        *drawn_per_service.entry(&rec.service_id).or_insert(0.0) += rec.drawn_wh;
        *delivered_per_request.entry(&rec.request_id).or_insert(0.0) += rec.delivered_wh;
    }

    for (sid, drawn) in drawn_per_service {
        let dec = services[sid].qos.deliverable_wh;
        if drawn > dec + 1e-9 {
            violations.push(format!("service {sid} drawn {drawn} exceeds capacity {dec}"));
        }
    }
    for (rid, delivered) in delivered_per_request {
        let re = requests[rid].required_wh;
        if delivered > re + 1e-9 {
            violations.push(format!("request {rid} delivered {delivered} exceeds RE {re}"));
        }
    }
    violations
}
