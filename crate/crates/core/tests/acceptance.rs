//! End-to-end acceptance run: one PASS/FAIL line per criterion, non-zero
//! exit if any fails.

#[path = "support/props.rs"]
mod props;

use std::process::ExitCode;
use std::time::Instant;

use rayon::prelude::*;

use natlab::analytics::{
    birthday_party_probability, birthday_success_probability, brute_force_duration, estimate_retention,
    pair_count, probes_for_target, CollisionModel, ASSUMED_BYTES_PER_RECORD,
};
use natlab::natbox::{NatClassName, PortAllocation};
use natlab::netsim::SimTime;
use natlab::scenario::{ScenarioSpec, World};
use natlab::traversal::{
    birthday_trial, brute_force_punch, run_interop_matrix, BruteForceParams, Policy, PunchStrategy,
};

const P_FULL: u64 = 65_535;

fn birthday(k: u64, p: u64) -> f64 {
    birthday_success_probability::<f64>(CollisionModel::new(p, k).unwrap())
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

fn c1() -> Result<String, String> {
    let half = birthday(54_000, P_FULL);
    let high = birthday(170_000, P_FULL);
    let k50 = probes_for_target(0.5f64, P_FULL).map_err(|e| e.to_string())?;
    let k999 = probes_for_target(0.999f64, P_FULL).map_err(|e| e.to_string())?;
    let detail = format!("p(54000)={half:.4} p(170000)={high:.5} k(0.5)={k50} k(0.999)={k999}");
    let ok = (0.47..=0.53).contains(&half)
        && high >= 0.998
        && within(k50 as f64, 54_000.0, 0.05 * 54_000.0)
        && within(k999 as f64, 170_000.0, 0.05 * 170_000.0);
    if ok { Ok(detail) } else { Err(detail) }
}

fn monte_carlo(port_space: u16, k: u64, trials: u64) -> f64 {
    let wins = (0..trials).into_par_iter().filter(|&t| birthday_trial(port_space, k, 0xB1D7 ^ (t << 20)).0).count();
    wins as f64 / trials as f64
}

fn c2() -> Result<String, String> {
    let low = monte_carlo(1024, 853, 500);
    let high = monte_carlo(1024, 2693, 500);
    let detail = format!("P=1024 500 trials: k=853 -> {low:.3}, k=2693 -> {high:.3}");
    if within(low, 0.50, 0.07) && high >= 0.985 { Ok(detail) } else { Err(detail) }
}

fn c3() -> Result<String, String> {
    let small = brute_force_duration(65_535, 57_000).map_err(|e| e.to_string())?.as_float::<f64>();
    let large = brute_force_duration(4_294_836_225, 57_000).map_err(|e| e.to_string())?.as_float::<f64>();
    let mut w = World::two_peers_with(NatClassName::FullCone, NatClassName::Symmetric, 3, |c| c.with_port_range(1, 1024));
    let (easy, hard, start) = w.introduce(0, 1).map_err(|e| e.to_string())?;
    let s = brute_force_punch(&mut w.net, &easy, &hard, BruteForceParams::new(1024, (1, 1024), start));
    let elapsed = s.stats.elapsed;
    let detail = format!(
        "65535@57000={small:.4}s 4294836225@57000={large:.1}s simulated scan {} in {:.3}s",
        if s.is_established() { "established" } else { "failed" },
        elapsed.as_micros() as f64 / 1e6
    );
    let ok = within(small, 1.150, 0.001)
        && within(large, 75_348.0, 1.0)
        && s.is_established()
        && elapsed <= SimTime::from_millis(1200);
    if ok { Ok(detail) } else { Err(detail) }
}

fn c4() -> Result<String, String> {
    use NatClassName::*;
    let mut hits = 0;
    let mut misses = Vec::new();
    for class in [OpenInternet, FullCone, RestrictedCone, PortRestrictedCone, Symmetric] {
        for alloc in [PortAllocation::Random, PortAllocation::Sequential { start: 20_000 }] {
            let mut w = World::two_peers_with(class, class, 4, |c| c.with_port_alloc(alloc));
            match w.discover(0) {
                Ok(p) if p.class == class => hits += 1,
                Ok(p) => misses.push(format!("{class:?}/{alloc:?} -> {:?}", p.class)),
                Err(e) => misses.push(format!("{class:?}/{alloc:?} -> {e}")),
            }
        }
    }
    let detail = format!("{hits}/10 exact {}", misses.join("; "));
    if hits == 10 { Ok(detail) } else { Err(detail) }
}

fn c5() -> Result<String, String> {
    let carriers = ScenarioSpec::carrier_experiment(5).carrier_configs();
    let easy = 3;
    let simple = run_interop_matrix(&carriers, &Policy::only(&[PunchStrategy::SimplePunch]), 5);
    let pattern = simple
        .cells
        .iter()
        .enumerate()
        .all(|(i, row)| row.iter().enumerate().all(|(j, c)| c.success == (i < easy && j < easy)));
    let birthday_policy = Policy::only(&[PunchStrategy::SimplePunch, PunchStrategy::Birthday(500_000)]);
    let flipped = run_interop_matrix(&carriers, &birthday_policy, 5);
    let detail = format!(
        "simple-punch {}/{} cells, {} of {} interoperable, pattern {}; with birthday {}/{}",
        simple.successes,
        simple.total,
        simple.interoperable,
        simple.carriers.len(),
        if pattern { "exact" } else { "differs" },
        flipped.successes,
        flipped.total
    );
    let ok = pattern
        && simple.successes == 9
        && simple.interoperable == 3
        && carriers.len() == 4
        && flipped.successes == flipped.total;
    if ok { Ok(detail) } else { Err(detail) }
}

fn c6() -> Result<String, String> {
    // Oracle: product of (365 - i) / 365 over i < 23, each factor exact.
    let oracle = 1.0 - (0..23u64).map(|i| (365 - i) as f64 / 365.0).product::<f64>();
    let p = birthday_party_probability::<f64>(23, 365);
    let detail = format!("p(23,365)={p:.5} oracle={oracle:.5} pairs={}", pair_count(23));
    if within(p, 0.5073, 0.0001) && within(p, oracle, 1e-12) && pair_count(23) == 253 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c7() -> Result<String, String> {
    let e = estimate_retention(25_000_000, 33_000, ASSUMED_BYTES_PER_RECORD);
    let tb = e.value.as_u64().unwrap_or(0) as f64 / 1e12;
    let labeled = e.provenance_note.contains("assumption");
    let detail = format!("{tb:.1} TB/day; {}", e.provenance_note);
    if within(tb, 425.0, 0.5) && labeled { Ok(detail) } else { Err(detail) }
}

fn c8() -> Result<String, String> {
    let failed: Vec<String> = props::SUITES
        .par_iter()
        .filter_map(|(name, suite)| suite(props::CASES).err().map(|e| format!("{name}: {e}")))
        .collect();
    let detail = format!("{}/{} suites at {} cases", props::SUITES.len() - failed.len(), props::SUITES.len(), props::CASES);
    if failed.is_empty() { Ok(detail) } else { Err(format!("{detail}; {}", failed.join(" | "))) }
}

fn main() -> ExitCode {
    let criteria: [(u32, fn() -> Result<String, String>); 8] =
        [(1, c1), (2, c2), (3, c3), (4, c4), (5, c5), (6, c6), (7, c7), (8, c8)];
    let mut all = true;
    for (n, check) in criteria {
        let t = Instant::now();
        let r = check();
        let secs = t.elapsed().as_secs_f64();
        match r {
            Ok(d) => println!("criterion {n}: PASS ({secs:.1}s) {d}"),
            Err(d) => {
                all = false;
                println!("criterion {n}: FAIL ({secs:.1}s) {d}");
            }
        }
    }
    if all { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
