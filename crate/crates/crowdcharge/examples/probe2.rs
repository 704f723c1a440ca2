use crowdcharge::scenario::{generate_scenario, ScenarioConfig};
use crowdcharge::sim::{run_with_trace, Policy};

fn main() {
    for ratio in [1.0, 6.0] {
        let config = ScenarioConfig { users: 100, microcells: 8, seed: 11, supply_demand_ratio: ratio, ..Default::default() };
        let s = generate_scenario(&config).unwrap();
        println!("=== ratio {ratio} ===");
        for policy in [Policy::Proactive, Policy::BruteForce] {
            let (report, _trace) = run_with_trace(&s, policy, 99).unwrap();
            // bucket requests by per-consumer order (suffix of id encodes stay index)
            let mut by_idx: Vec<(usize, usize, f64, f64)> = vec![(0, 0, 0.0, 0.0); 8]; // (n, zero, sum_fill, sum_re)
            for r in &report.records {
                let idx: usize = r.request_id.0.rsplit(|c| c == 'p' || c == 'b').next().unwrap().parse().unwrap_or(7).min(7);
                let fill = if r.required_wh > 0.0 { r.delivered_wh / r.required_wh } else { 1.0 };
                by_idx[idx].0 += 1;
                if fill < 0.01 { by_idx[idx].1 += 1; }
                by_idx[idx].2 += fill;
                by_idx[idx].3 += r.required_wh;
            }
            println!("{policy}: succ {:.3} over {} reqs", report.success_ratio, report.records.len());
            for (i, (n, zero, fill, re)) in by_idx.iter().enumerate() {
                if *n > 0 {
                    println!("  stay{}: n={:>3} zero={:>3} meanfill={:.2} meanRE={:.2}", i, n, zero, fill / *n as f64, re / *n as f64);
                }
            }
        }
    }
}
