// Config-space search: which worlds produce the target policy orderings?
use crowdcharge::report::sweep;
use crowdcharge::scenario::ScenarioConfig;
use crowdcharge::sim::Policy;
use std::collections::BTreeMap;

fn score(template: &ScenarioConfig, seeds: u32) -> (f64, String) {
    let ratios = [1.0, 3.0, 6.0];
    let rows = match sweep(template, &ratios, &Policy::ALL, seeds) {
        Ok(r) => r,
        Err(e) => return (-100.0, format!("error: {e}")),
    };
    let mut agg: BTreeMap<(u64, Policy), (f64, f64)> = BTreeMap::new();
    for r in &rows {
        let e = agg.entry(((r.ratio * 10.0) as u64, r.policy)).or_insert((0.0, 0.0));
        e.0 += r.success_ratio;
        e.1 += 1.0;
    }
    let g = |ratio: f64, p: Policy| {
        let (s, n) = agg[&((ratio * 10.0) as u64, p)];
        s / n
    };
    let mut penalty = 0.0;
    let mut desc = String::new();
    for ratio in [1.0, 3.0, 6.0] {
        let (bf, pa, re) = (g(ratio, Policy::BruteForce), g(ratio, Policy::Proactive), g(ratio, Policy::Reactive));
        desc += &format!("r{ratio}: bf {bf:.2} pa {pa:.2} re {re:.2} | ");
        penalty += (pa - bf).max(0.0) + (re - pa).max(0.0);
    }
    (-penalty, desc)
}

fn main() {
    let base = ScenarioConfig { users: 100, microcells: 8, seed: 11, ..Default::default() };
    let mut variants: Vec<(String, ScenarioConfig)> = Vec::new();
    for pf in [0.3, 0.5] {
        for ch in [0.35, 0.65] {
            variants.push((
                format!("pf={pf} ch={ch}"),
                ScenarioConfig { provider_fraction: pf, changeable_fraction: ch, stretchable_fraction: ch, ..base.clone() },
            ));
        }
    }
    for (name, cfg) in variants {
        let (s, desc) = score(&cfg, 4);
        println!("{name:<18} score {s:+.3}  {desc}");
    }
}
