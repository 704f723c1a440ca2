use crowdcharge::report::sweep;
use crowdcharge::scenario::ScenarioConfig;
use crowdcharge::sim::Policy;
use std::collections::BTreeMap;

fn main() {
    let seeds = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(6u32);
    let template = ScenarioConfig { users: 100, microcells: 8, seed: 11, ..Default::default() };
    let ratios = [1.0, 2.0, 3.0, 6.0, 9.0];
    let rows = sweep(&template, &ratios, &Policy::ALL, seeds).unwrap();
    let mut agg: BTreeMap<(u64, Policy), (f64, f64, f64, f64)> = BTreeMap::new();
    for r in &rows {
        let key = ((r.ratio * 10.0) as u64, r.policy);
        let e = agg.entry(key).or_insert((0.0, 0.0, 0.0, 0.0));
        e.0 += r.success_ratio;
        e.1 += r.mean_energy_per_request_wh;
        e.2 += r.requests as f64;
        e.3 += 1.0;
    }
    println!("{:>5} {:>11} {:>7} {:>8} {:>7}", "ratio", "policy", "succ", "wh/req", "reqs");
    let mut last_ratio = 0;
    for ((ratio, policy), (s, e, q, n)) in agg {
        if ratio != last_ratio { println!(); last_ratio = ratio; }
        println!("{:>5} {:>11} {:>7.3} {:>8.3} {:>7.1}", ratio as f64 / 10.0, policy.to_string(), s / n, e / n, q / n);
    }
}
