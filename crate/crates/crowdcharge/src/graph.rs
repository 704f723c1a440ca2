//! Mobility graph over microcells, annotated per slot with expected energy
//! supply (from advertised services weighted by provider presence) and
//! expected demand (from generated requests).

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{CellId, EnergyRequest, Microcell, MobilityPattern, ProactiveEnergyService, EPS};
use crate::patterns::extract_stays;

/// Microcell nodes, stay-transition edges and per-slot expected energy
/// availability and demand.
#[derive(Debug, Clone, PartialEq)]
pub struct MobilityGraph {
    cells: Vec<CellId>,
    /// Directed transition weights; per source they sum to one when the
    /// source has any outgoing transition.
    edges: BTreeMap<(CellId, CellId), f64>,
    /// Expected deliverable watt-hours, `[slot][cell index]`.
    availability: Vec<Vec<f64>>,
    /// Expected requested watt-hours, `[slot][cell index]`.
    demand: Vec<Vec<f64>>,
    slot_hours: f64,
}

impl MobilityGraph {
    pub fn cells(&self) -> &[CellId] {
        &self.cells
    }

    pub fn horizon(&self) -> usize {
        self.availability.len()
    }

    pub fn contains(&self, cell: CellId) -> bool {
        self.cells.contains(&cell)
    }

    fn column(&self, cell: CellId) -> Option<usize> {
        self.cells.iter().position(|&c| c == cell)
    }

    pub fn edge_weight(&self, from: CellId, to: CellId) -> f64 {
        self.edges.get(&(from, to)).copied().unwrap_or(0.0)
    }

    pub fn edges(&self) -> impl Iterator<Item = (CellId, CellId, f64)> + '_ {
        self.edges.iter().map(|(&(a, b), &w)| (a, b, w))
    }

    pub fn availability_at(&self, slot: usize, cell: CellId) -> f64 {
        match self.column(cell) {
            Some(col) => self.availability.get(slot).map_or(0.0, |row| row[col]),
            None => 0.0,
        }
    }

    pub fn demand_at(&self, slot: usize, cell: CellId) -> f64 {
        match self.column(cell) {
            Some(col) => self.demand.get(slot).map_or(0.0, |row| row[col]),
            None => 0.0,
        }
    }

    /// Record a request's expected draw, spread uniformly over its window.
    pub fn add_request_demand(&mut self, request: &EnergyRequest) {
        let Some(col) = self.column(request.cell) else { return };
        if request.duration_slots == 0 {
            return;
        }
        let per_slot = request.required_wh / request.duration_slots as f64;
        for slot in request.issued_slot..request.window_end().min(self.horizon()) {
            self.demand[slot][col] += per_slot;
        }
    }

    /// Expected deliverable watt-hours at `cell` over `slots`.
    pub fn expected_supply(&self, cell: CellId, slots: std::ops::Range<usize>) -> f64 {
        let Some(col) = self.column(cell) else { return 0.0 };
        slots.filter(|&s| s < self.horizon()).map(|s| self.availability[s][col]).sum()
    }

    /// Expected watt-hours still unclaimed at `cell` over `slots`: per-slot
    /// supply net of demand already registered, never negative.
    pub fn expected_available_energy(
        &self,
        cell: CellId,
        slots: std::ops::Range<usize>,
    ) -> f64 {
        let Some(col) = self.column(cell) else { return 0.0 };
        slots
            .filter(|&s| s < self.horizon())
            .map(|s| (self.availability[s][col] - self.demand[s][col]).max(0.0))
            .sum()
    }

    /// Likelihood in [0,1] that energy demanded at `cell` over `slots` can be
    /// served: supply over demand, clamped. With no registered demand the
    /// score is 1 when any supply exists and 0 otherwise.
    pub fn availability_score(&self, cell: CellId, slots: std::ops::Range<usize>) -> f64 {
        let Some(col) = self.column(cell) else { return 0.0 };
        let mut supply = 0.0;
        let mut demand = 0.0;
        for s in slots.filter(|&s| s < self.horizon()) {
            supply += self.availability[s][col];
            demand += self.demand[s][col];
        }
        (supply / demand.max(EPS)).clamp(0.0, 1.0)
    }
}

/// Build the graph: nodes are the microcells, an edge `(a, b)` exists when
/// some pattern has a stay in `a` immediately followed by one in `b`, with
/// weights normalized per source cell. Availability and demand start at zero.
pub fn build_mobility_graph<P: std::borrow::Borrow<MobilityPattern>>(
    patterns: &[P],
    cells: &[Microcell],
    horizon: usize,
    slot_hours: f64,
) -> MobilityGraph {
    let ids: Vec<CellId> = cells.iter().map(|c| c.id).collect();
    let mut counts: BTreeMap<(CellId, CellId), f64> = BTreeMap::new();
    let mut out_totals: BTreeMap<CellId, f64> = BTreeMap::new();
    for pattern in patterns {
        let stays = extract_stays(pattern.borrow());
        for pair in stays.windows(2) {
            let (from, to) = (pair[0].cell, pair[1].cell);
            *counts.entry((from, to)).or_insert(0.0) += 1.0;
            *out_totals.entry(from).or_insert(0.0) += 1.0;
        }
    }
    let edges = counts
        .into_iter()
        .map(|((from, to), n)| ((from, to), n / out_totals[&from]))
        .collect();
    MobilityGraph {
        cells: ids,
        edges,
        availability: vec![vec![0.0; cells.len()]; horizon],
        demand: vec![vec![0.0; cells.len()]; horizon],
        slot_hours,
    }
}

/// Accumulate each service's expected per-slot supply into the graph:
/// presence probability of the provider at the service's cell times the
/// slot's deliverable energy, where the deliverable capacity is spread
/// uniformly over the advertised window and capped by the transfer rate.
pub fn estimate_availability(
    graph: &mut MobilityGraph,
    services: &[ProactiveEnergyService],
) -> Result<()> {
    for svc in services {
        let col = graph
            .column(svc.qos.cell)
            .ok_or(Error::UnknownCell(svc.qos.cell))?;
        let window = svc.qos.end.saturating_sub(svc.qos.start);
        if window == 0 {
            continue;
        }
        let rate_cap = svc.qos.intensity_w * graph.slot_hours * svc.qos.success_rate;
        let uniform_share = svc.qos.deliverable_wh / window as f64;
        let per_slot = rate_cap.min(uniform_share);
        for slot in svc.qos.start..svc.qos.end.min(graph.horizon()) {
            let theta = svc.mobility.prob(slot, svc.qos.cell);
            graph.availability[slot][col] += theta * per_slot;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{QoS, RequestId, RequestOrigin, TimeGrid, UserId};
    use std::collections::BTreeSet;
    use std::sync::Arc;

    fn microcells(n: u32) -> Vec<Microcell> {
        (0..n)
            .map(|i| Microcell {
                id: CellId(i),
                label: format!("cell-{i}"),
                position: (100.0 * f64::from(i), 0.0),
                radius_m: 30.0,
            })
            .collect()
    }

    fn pattern_with_stays(owner: u32, cells: &[CellId], stays: &[(CellId, usize, usize)]) -> MobilityPattern {
        let g = TimeGrid::default();
        let width = cells.len() + 1;
        let mut presence = vec![vec![0.0; width]; g.horizon];
        for row in &mut presence {
            row[width - 1] = 1.0;
        }
        for &(cell, start, end) in stays {
            let col = cells.iter().position(|&c| c == cell).unwrap();
            for slot in start..end {
                presence[slot][col] = 1.0;
                presence[slot][width - 1] = 0.0;
            }
        }
        MobilityPattern { owner: UserId(owner), cells: cells.to_vec(), presence }
    }

    fn service(
        id: &str,
        provider: u32,
        pattern: MobilityPattern,
        cell: CellId,
        window: (usize, usize),
        dec: f64,
        intensity: f64,
        tsr: f64,
    ) -> ProactiveEnergyService {
        let usage = crate::model::UsageBehavior {
            owner: UserId(provider),
            soc: vec![90.0; pattern.horizon()],
            battery_capacity_wh: 10.0,
        };
        ProactiveEnergyService {
            service_id: crate::model::ServiceId(id.to_string()),
            provider_id: UserId(provider),
            functionalities: BTreeSet::from(["energy-transfer".to_string()]),
            qos: QoS {
                cell,
                range_m: 5.0,
                start: window.0,
                end: window.1,
                deliverable_wh: dec,
                intensity_w: intensity,
                success_rate: tsr,
                reliability: 0.9,
            },
            mobility: Arc::new(pattern),
            usage: Arc::new(usage),
        }
    }

    #[test]
    fn single_path_yields_unit_weights() {
        let cells = microcells(3);
        let ids: Vec<CellId> = cells.iter().map(|c| c.id).collect();
        let stays = [(ids[0], 10, 20), (ids[1], 25, 35), (ids[2], 40, 50)];
        let patterns: Vec<_> =
            (0..4).map(|u| pattern_with_stays(u, &ids, &stays)).collect();
        let g = build_mobility_graph(&patterns, &cells, 288, 1.0 / 12.0);
        assert_eq!(g.edge_weight(ids[0], ids[1]), 1.0);
        assert_eq!(g.edge_weight(ids[1], ids[2]), 1.0);
        assert_eq!(g.edge_weight(ids[0], ids[2]), 0.0);
    }

    #[test]
    fn split_transitions_split_weights() {
        let cells = microcells(3);
        let ids: Vec<CellId> = cells.iter().map(|c| c.id).collect();
        let mut patterns = Vec::new();
        for u in 0..10 {
            let next = if u < 5 { ids[1] } else { ids[2] };
            patterns.push(pattern_with_stays(u, &ids, &[(ids[0], 10, 20), (next, 25, 35)]));
        }
        let g = build_mobility_graph(&patterns, &cells, 288, 1.0 / 12.0);
        assert!((g.edge_weight(ids[0], ids[1]) - 0.5).abs() < 1e-12);
        assert!((g.edge_weight(ids[0], ids[2]) - 0.5).abs() < 1e-12);
        // Per-node weights form a distribution.
        let total: f64 = g.edges().filter(|&(a, _, _)| a == ids[0]).map(|(_, _, w)| w).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn stationary_user_produces_no_edges() {
        let cells = microcells(2);
        let ids: Vec<CellId> = cells.iter().map(|c| c.id).collect();
        let patterns = vec![pattern_with_stays(0, &ids, &[(ids[0], 10, 30)])];
        let g = build_mobility_graph(&patterns, &cells, 288, 1.0 / 12.0);
        assert_eq!(g.edges().count(), 0);
    }

    #[test]
    fn availability_weights_presence() {
        let cells = microcells(1);
        let ids = [cells[0].id];
        let g5 = TimeGrid::default();
        let mut graph = build_mobility_graph::<MobilityPattern>(&[], &cells, g5.horizon, g5.slot_hours());
        // Two services in the same cell and slot, each contributing 0.25 Wh
        // per slot, with presence 0.9 and 0.5.
        let mut p1 = pattern_with_stays(1, &ids, &[(ids[0], 100, 101)]);
        p1.presence[100][0] = 0.9;
        p1.presence[100][1] = 0.1;
        let mut p2 = pattern_with_stays(2, &ids, &[(ids[0], 100, 101)]);
        p2.presence[100][0] = 0.5;
        p2.presence[100][1] = 0.5;
        let s1 = service("s1", 1, p1, ids[0], (100, 101), 10.0, 3.0, 1.0);
        let s2 = service("s2", 2, p2, ids[0], (100, 101), 10.0, 3.0, 1.0);
        estimate_availability(&mut graph, &[s1, s2]).unwrap();
        assert!((graph.availability_at(100, ids[0]) - 0.35).abs() < 1e-12);
    }

    #[test]
    fn no_services_means_zero_availability() {
        let cells = microcells(2);
        let g5 = TimeGrid::default();
        let graph = build_mobility_graph::<MobilityPattern>(&[], &cells, g5.horizon, g5.slot_hours());
        for slot in 0..g5.horizon {
            for c in &cells {
                assert_eq!(graph.availability_at(slot, c.id), 0.0);
            }
        }
    }

    #[test]
    fn full_presence_rate_limited_service_contributes_quarter_wh() {
        // 3 W, Tsr 1, 5-minute slot, ample capacity -> 0.25 Wh in the slot.
        let cells = microcells(1);
        let ids = [cells[0].id];
        let g5 = TimeGrid::default();
        let mut graph = build_mobility_graph::<MobilityPattern>(&[], &cells, g5.horizon, g5.slot_hours());
        let p = pattern_with_stays(1, &ids, &[(ids[0], 100, 112)]);
        let s = service("s1", 1, p, ids[0], (100, 112), 100.0, 3.0, 1.0);
        estimate_availability(&mut graph, &[s]).unwrap();
        assert!((graph.availability_at(100, ids[0]) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn unknown_cell_is_an_error() {
        let cells = microcells(1);
        let g5 = TimeGrid::default();
        let mut graph = build_mobility_graph::<MobilityPattern>(&[], &cells, g5.horizon, g5.slot_hours());
        let p = pattern_with_stays(1, &[CellId(9)], &[(CellId(9), 10, 20)]);
        let s = service("s1", 1, p, CellId(9), (10, 20), 1.0, 3.0, 1.0);
        assert!(matches!(
            estimate_availability(&mut graph, &[s]),
            Err(Error::UnknownCell(CellId(9)))
        ));
    }

    fn demand_request(cell: CellId, slot: usize, wh: f64, du: usize) -> EnergyRequest {
        EnergyRequest {
            request_id: RequestId(format!("rq-{slot}")),
            consumer_id: UserId(7),
            issued_slot: slot,
            cell,
            required_wh: wh,
            max_intake_w: 2.0,
            duration_slots: du,
            origin: RequestOrigin::Proactive,
        }
    }

    #[test]
    fn score_is_clamped_supply_demand_ratio() {
        let cells = microcells(1);
        let id = cells[0].id;
        let g5 = TimeGrid::default();
        let mut graph = build_mobility_graph::<MobilityPattern>(&[], &cells, g5.horizon, g5.slot_hours());
        // Install supply directly via a deterministic full-presence service.
        let p = pattern_with_stays(1, &[id], &[(id, 0, 48)]);
        // 48 slots x 1/12 h x 1 W = 4 Wh of supply.
        let s = service("s1", 1, p, id, (0, 48), 100.0, 1.0, 1.0);
        estimate_availability(&mut graph, &[s]).unwrap();
        graph.add_request_demand(&demand_request(id, 0, 5.0, 48));
        assert!((graph.availability_score(id, 0..48) - 0.8).abs() < 1e-9);

        // Oversupplied interval clamps at 1.
        let mut rich = build_mobility_graph::<MobilityPattern>(&[], &cells, g5.horizon, g5.slot_hours());
        let p2 = pattern_with_stays(1, &[id], &[(id, 0, 36)]);
        let s2 = service("s1", 1, p2, id, (0, 36), 100.0, 3.0, 1.0); // 9 Wh
        estimate_availability(&mut rich, &[s2]).unwrap();
        rich.add_request_demand(&demand_request(id, 0, 3.0, 36));
        assert_eq!(rich.availability_score(id, 0..36), 1.0);

        // Scarce interval: 1 Wh supply vs 5 Wh demand -> 0.2.
        let mut poor = build_mobility_graph::<MobilityPattern>(&[], &cells, g5.horizon, g5.slot_hours());
        let p3 = pattern_with_stays(1, &[id], &[(id, 0, 12)]);
        let s3 = service("s1", 1, p3, id, (0, 12), 1.0, 3.0, 1.0); // uniform share caps at 1 Wh
        estimate_availability(&mut poor, &[s3]).unwrap();
        poor.add_request_demand(&demand_request(id, 0, 5.0, 12));
        assert!((poor.availability_score(id, 0..12) - 0.2).abs() < 1e-9);
    }

    #[test]
    fn zero_demand_score_is_supply_indicator() {
        let cells = microcells(1);
        let id = cells[0].id;
        let g5 = TimeGrid::default();
        let mut graph = build_mobility_graph::<MobilityPattern>(&[], &cells, g5.horizon, g5.slot_hours());
        assert_eq!(graph.availability_score(id, 0..12), 0.0);
        let p = pattern_with_stays(1, &[id], &[(id, 0, 12)]);
        let s = service("s1", 1, p, id, (0, 12), 1.0, 3.0, 1.0);
        estimate_availability(&mut graph, &[s]).unwrap();
        assert_eq!(graph.availability_score(id, 0..12), 1.0);
    }

    #[test]
    fn adding_services_never_decreases_availability() {
        let cells = microcells(2);
        let ids: Vec<CellId> = cells.iter().map(|c| c.id).collect();
        let g5 = TimeGrid::default();
        let mut graph = build_mobility_graph::<MobilityPattern>(&[], &cells, g5.horizon, g5.slot_hours());
        let p1 = pattern_with_stays(1, &ids, &[(ids[0], 10, 30)]);
        let s1 = service("s1", 1, p1.clone(), ids[0], (10, 30), 2.0, 2.0, 0.9);
        estimate_availability(&mut graph, &[s1.clone()]).unwrap();
        let before: Vec<f64> = (0..g5.horizon).map(|t| graph.availability_at(t, ids[0])).collect();
        let s2 = service("s2", 1, p1, ids[0], (15, 25), 1.0, 2.0, 0.8);
        estimate_availability(&mut graph, &[s2]).unwrap();
        for (t, b) in before.iter().enumerate() {
            assert!(graph.availability_at(t, ids[0]) >= *b - 1e-12);
        }
    }
}
