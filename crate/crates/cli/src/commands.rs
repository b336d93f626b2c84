use std::fs;

use clap::{Args, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use natlab::analytics::{self, CollisionModel, Estimate as Formula, LinkBudget};
use natlab::scenario::{parse_ladder, parse_scenario, ScenarioSpec, World};
use natlab::traversal::{birthday_trial, ice_connect, run_interop_matrix, Policy, PunchStrategy};

use crate::output::{json, render, Table};
use crate::{CliError, Command, Common, OutFormat};

/// What a command printed, and whether traversal failed along the way.
pub struct Report {
    pub body: String,
    pub failure: Option<String>,
}

impl Report {
    fn ok(body: String) -> Self {
        Report { body, failure: None }
    }
}

#[derive(Subcommand, Debug, Clone)]
pub enum Estimate {
    /// Probes per second an uplink sustains.
    ProbeRate(ProbeRateArgs),
    /// Time to try every combination at a given rate.
    BruteForce(BruteForceArgs),
    /// Birthday success probability for each --k.
    Birthday(SpaceArgs),
    /// Probes per side needed for a target probability.
    ProbesFor(ProbesForArgs),
    /// Classic shared-birthday probability.
    BirthdayParty(PartyArgs),
    /// Daily volume of a per-connection log.
    Retention(RetentionArgs),
}

#[derive(Args, Debug, Clone)]
pub struct ProbeRateArgs {
    #[arg(long, default_value_t = 40_000_000)]
    pub upload_bps: u64,
    #[arg(long, default_value_t = analytics::DEFAULT_PROBE_WIRE_BYTES)]
    pub wire_bytes: u64,
}

#[derive(Args, Debug, Clone)]
pub struct BruteForceArgs {
    #[arg(long, default_value_t = analytics::PORT_SPACE)]
    pub combinations: u64,
    #[arg(long, default_value_t = 57_000)]
    pub pps: u64,
}

#[derive(Args, Debug, Clone)]
pub struct SpaceArgs {
    #[arg(long, default_value_t = analytics::PORT_SPACE)]
    pub port_space: u64,
}

#[derive(Args, Debug, Clone)]
pub struct ProbesForArgs {
    #[arg(long, default_value_t = 0.5)]
    pub target: f64,
    #[arg(long, default_value_t = analytics::PORT_SPACE)]
    pub port_space: u64,
}

#[derive(Args, Debug, Clone)]
pub struct PartyArgs {
    #[arg(long, default_value_t = 23)]
    pub people: u64,
    #[arg(long, default_value_t = 365)]
    pub days: u64,
}

#[derive(Args, Debug, Clone)]
pub struct RetentionArgs {
    #[arg(long, default_value_t = 25_000_000)]
    pub customers: u64,
    #[arg(long, default_value_t = 33_000)]
    pub connections: u64,
    #[arg(long, default_value_t = analytics::ASSUMED_BYTES_PER_RECORD)]
    pub record_bytes: u64,
}

const DEFAULT_MC_K: [u64; 3] = [400, 853, 2000];
const DEFAULT_TRIALS: u64 = 500;

pub fn execute(cmd: &Command, c: &Common) -> Result<Report, CliError> {
    match cmd {
        Command::Classify => classify(c),
        Command::Punch { from, to } => punch(c, from.as_deref(), to.as_deref()),
        Command::Matrix => matrix(c),
        Command::Montecarlo { port_space } => montecarlo(c, *port_space),
        Command::Estimate { what } => estimate(c, what.as_ref()),
    }
}

fn load_spec(c: &Common) -> Result<ScenarioSpec, CliError> {
    let mut spec = match &c.scenario {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            parse_scenario(&text).map_err(|e| CliError::Input(format!("{}:\n{e}", path.display())))?
        }
        None => ScenarioSpec::carrier_experiment(c.seed.unwrap_or(5)),
    };
    if let Some(seed) = c.seed {
        spec.seed = seed;
    }
    Ok(spec)
}

fn build(spec: &ScenarioSpec) -> Result<World, CliError> {
    World::build(spec).map_err(|e| CliError::Input(format!("scenario: {e}")))
}

/// The scenario policy, with --policy replacing the ladder and the first
/// --k replacing the birthday probe count.
fn policy(c: &Common, spec: &ScenarioSpec) -> Result<Policy, CliError> {
    let mut p = spec.policy.clone();
    let k = c.k.first().copied().or_else(|| {
        p.ladder.iter().find_map(|s| match s {
            PunchStrategy::Birthday(k) => Some(*k),
            _ => None,
        })
    });
    let k = k.unwrap_or(Policy::DEFAULT_BIRTHDAY_K);
    if let Some(ladder) = &c.policy {
        let rungs = parse_ladder(ladder, k).map_err(|e| CliError::Input(format!("--policy: {e}")))?;
        if rungs.is_empty() {
            return Err(CliError::Input("--policy: empty ladder".into()));
        }
        p.ladder = Policy::only(&rungs).ladder;
    }
    Ok(p.with_birthday_k(k))
}

fn peer_index(w: &World, name: &str) -> Result<usize, CliError> {
    w.peer_index(name).ok_or_else(|| CliError::Input(format!("no peer named `{name}`")))
}

#[derive(Serialize)]
struct ClassRow {
    peer: String,
    class: Option<String>,
    local: String,
    reflexive: Option<String>,
    error: Option<String>,
}

fn classify(c: &Common) -> Result<Report, CliError> {
    let spec = load_spec(c)?;
    let mut w = build(&spec)?;
    if w.peers.is_empty() {
        return Err(CliError::Input("scenario declares no peers".into()));
    }
    let mut rows = Vec::new();
    for i in 0..w.peers.len() {
        let (name, _, local) = w.peers[i].clone();
        let row = match w.discover(i) {
            Ok(p) => ClassRow {
                peer: name,
                class: Some(p.class.to_string()),
                local: local.to_string(),
                reflexive: p.reflexive().map(|r| r.to_string()),
                error: None,
            },
            Err(e) => ClassRow { peer: name, class: None, local: local.to_string(), reflexive: None, error: Some(e.to_string()) },
        };
        rows.push(row);
    }
    let mut t = Table::new(&["peer", "class", "local", "reflexive"]);
    for r in &rows {
        let class = r.class.clone().or_else(|| r.error.as_ref().map(|e| format!("error: {e}")));
        t.push(vec![r.peer.clone(), class.unwrap_or_default(), r.local.clone(), r.reflexive.clone().unwrap_or("-".into())]);
    }
    let body = render(c.out.unwrap_or(OutFormat::Text), &rows, &t, "")?;
    let failed: Vec<&str> = rows.iter().filter(|r| r.error.is_some()).map(|r| r.peer.as_str()).collect();
    let failure = (!failed.is_empty()).then(|| format!("discovery failed for {}", failed.join(", ")));
    Ok(Report { body, failure })
}

#[derive(Serialize)]
struct PathOut {
    kind: String,
    a_local: String,
    a_remote: String,
    b_local: String,
    b_remote: String,
    relay: Option<String>,
}

#[derive(Serialize)]
struct PunchOut {
    from: String,
    to: String,
    from_class: String,
    to_class: String,
    ladder: Vec<String>,
    established: bool,
    strategy: Option<String>,
    state: String,
    probes_sent: [u64; 2],
    mappings_consumed: [u64; 2],
    elapsed_us: u64,
    path: Option<PathOut>,
    attempts: Vec<(String, String)>,
}

fn state_name(s: &natlab::traversal::SessionState) -> String {
    use natlab::traversal::SessionState::*;
    match s {
        Idle => "idle".into(),
        Gathering => "gathering".into(),
        Punching => "punching".into(),
        Established(k) => format!("established({})", format!("{k:?}").to_lowercase()),
        Failed(r) => format!("failed({r})"),
    }
}

fn punch(c: &Common, from: Option<&str>, to: Option<&str>) -> Result<Report, CliError> {
    let spec = load_spec(c)?;
    let policy = policy(c, &spec)?;
    let mut w = build(&spec)?;
    let i = match from {
        Some(n) => peer_index(&w, n)?,
        None => 0,
    };
    let j = match to {
        Some(n) => peer_index(&w, n)?,
        None => usize::from(i == 0),
    };
    if w.peers.len() < 2 || i == j {
        return Err(CliError::Input("punch needs two distinct peers".into()));
    }
    let (a, b, start) = w.introduce(i, j).map_err(|e| CliError::Traversal(format!("discovery failed: {e}")))?;
    let relay = w.relay;
    let o = ice_connect(&mut w.net, &a, &b, &policy, start, relay);
    let out = PunchOut {
        from: w.peers[i].0.clone(),
        to: w.peers[j].0.clone(),
        from_class: a.class.to_string(),
        to_class: b.class.to_string(),
        ladder: policy.ladder.iter().map(|s| s.to_string()).collect(),
        established: o.session.is_established(),
        strategy: o.strategy.map(|s| s.to_string()),
        state: state_name(o.session.state()),
        probes_sent: o.stats.probes_sent,
        mappings_consumed: o.stats.mappings_consumed,
        elapsed_us: o.stats.elapsed.as_micros(),
        path: o.session.path.map(|p| PathOut {
            kind: format!("{:?}", p.kind).to_lowercase(),
            a_local: p.a.local.to_string(),
            a_remote: p.a.remote.to_string(),
            b_local: p.b.local.to_string(),
            b_remote: p.b.remote.to_string(),
            relay: p.relay.map(|r| r.to_string()),
        }),
        attempts: o.attempts.iter().map(|(s, st)| (s.to_string(), state_name(st))).collect(),
    };
    let mut t = Table::new(&["field", "value"]);
    let mut kv = |k: &str, v: String| t.push(vec![k.to_string(), v]);
    kv("peers", format!("{} ({}) -> {} ({})", out.from, out.from_class, out.to, out.to_class));
    kv("ladder", out.ladder.join(","));
    kv("state", out.state.clone());
    kv("strategy", out.strategy.clone().unwrap_or("-".into()));
    kv("probes", format!("{} / {}", out.probes_sent[0], out.probes_sent[1]));
    kv("mappings", format!("{} / {}", out.mappings_consumed[0], out.mappings_consumed[1]));
    kv("elapsed", o.stats.elapsed.to_string());
    if let Some(p) = &out.path {
        kv("path", p.kind.clone());
        kv("a", format!("{} -> {}", p.a_local, p.a_remote));
        kv("b", format!("{} -> {}", p.b_local, p.b_remote));
        if let Some(r) = &p.relay {
            kv("relay", r.clone());
        }
    }
    for (s, st) in &out.attempts {
        kv("attempt", format!("{s}: {st}"));
    }
    let body = render(c.out.unwrap_or(OutFormat::Text), &out, &t, "")?;
    let failure = (!out.established).then(|| format!("traversal failed: {}", out.state));
    Ok(Report { body, failure })
}

fn matrix(c: &Common) -> Result<Report, CliError> {
    let spec = load_spec(c)?;
    let policy = policy(c, &spec)?;
    let carriers = spec.carrier_configs();
    if carriers.len() < 2 {
        return Err(CliError::Input(format!("matrix needs at least 2 carriers, scenario has {}", carriers.len())));
    }
    let m = run_interop_matrix(&carriers, &policy, spec.seed);
    let body = match c.out.unwrap_or(OutFormat::Text) {
        OutFormat::Json => json(&m),
        OutFormat::Text => format!("{m}\n"),
        OutFormat::Csv => {
            let mut t = Table::new(&["from", "to", "success", "strategy", "probes"]);
            for (i, row) in m.cells.iter().enumerate() {
                for (j, cell) in row.iter().enumerate() {
                    t.push(vec![
                        m.carriers[i].clone(),
                        m.carriers[j].clone(),
                        cell.success.to_string(),
                        cell.strategy.map(|s| s.to_string()).unwrap_or_default(),
                        cell.probes.to_string(),
                    ]);
                }
            }
            t.csv()?
        }
    };
    Ok(Report::ok(body))
}

#[derive(Serialize)]
struct McRow {
    #[serde(rename = "P")]
    port_space: u16,
    k: u64,
    trials: u64,
    successes: u64,
    empirical_p: f64,
    analytic_p: f64,
}

fn montecarlo(c: &Common, port_space: u16) -> Result<Report, CliError> {
    if port_space == 0 {
        return Err(CliError::Input("--port-space must be at least 1".into()));
    }
    let ks = if c.k.is_empty() { DEFAULT_MC_K.to_vec() } else { c.k.clone() };
    if ks.contains(&0) {
        return Err(CliError::Input("--k values must be at least 1".into()));
    }
    let trials = c.trials.unwrap_or(DEFAULT_TRIALS);
    if trials == 0 {
        return Err(CliError::Input("--trials must be at least 1".into()));
    }
    let seed = c.seed.unwrap_or(0);
    let rows: Vec<McRow> = ks
        .iter()
        .map(|&k| {
            // Seeds depend only on (seed, k, trial), so the sum is independent of scheduling.
            let successes = (0..trials)
                .into_par_iter()
                .filter(|&t| birthday_trial(port_space, k, trial_seed(seed, k, t)).0)
                .count() as u64;
            let model = CollisionModel::new(port_space as u64, k).expect("non-zero inputs");
            McRow {
                port_space,
                k,
                trials,
                successes,
                empirical_p: successes as f64 / trials as f64,
                analytic_p: analytics::birthday_success_probability::<f64>(model),
            }
        })
        .collect();
    let mut t = Table::new(&["P", "k", "trials", "successes", "empirical_p", "analytic_p"]);
    for r in &rows {
        t.push(vec![
            r.port_space.to_string(),
            r.k.to_string(),
            r.trials.to_string(),
            r.successes.to_string(),
            format!("{:.4}", r.empirical_p),
            format!("{:.4}", r.analytic_p),
        ]);
    }
    Ok(Report::ok(render(c.out.unwrap_or(OutFormat::Csv), &rows, &t, "")?))
}

fn trial_seed(seed: u64, k: u64, t: u64) -> u64 {
    let mut x = seed ^ k.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ t.wrapping_mul(0xD1B5_4A32_D192_ED03);
    // splitmix64 finalizer
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn formulas(c: &Common, what: Option<&Estimate>) -> Result<Vec<Formula>, CliError> {
    let bad = |e: analytics::AnalyticsError| CliError::Input(e.to_string());
    let birthdays = |ks: &[u64], p: u64| -> Result<Vec<Formula>, CliError> {
        ks.iter().map(|&k| CollisionModel::new(p, k).map(analytics::estimate_birthday).map_err(bad)).collect()
    };
    let ks: Vec<u64> = if c.k.is_empty() { vec![54_000, 170_000] } else { c.k.clone() };
    Ok(match what {
        Some(Estimate::ProbeRate(a)) => {
            vec![analytics::estimate_probe_rate(LinkBudget::new(a.upload_bps, a.wire_bytes).map_err(bad)?)]
        }
        Some(Estimate::BruteForce(a)) => vec![analytics::estimate_brute_force(a.combinations, a.pps).map_err(bad)?],
        Some(Estimate::Birthday(a)) => birthdays(&ks, a.port_space)?,
        Some(Estimate::ProbesFor(a)) => vec![analytics::estimate_probes_for(a.target, a.port_space).map_err(bad)?],
        Some(Estimate::BirthdayParty(a)) => vec![analytics::estimate_birthday_party(a.people, a.days)],
        Some(Estimate::Retention(a)) => vec![analytics::estimate_retention(a.customers, a.connections, a.record_bytes)],
        None => {
            let p = analytics::PORT_SPACE;
            let mut all = vec![
                analytics::estimate_probe_rate(LinkBudget::new(40_000_000, analytics::DEFAULT_PROBE_WIRE_BYTES).map_err(bad)?),
                analytics::estimate_brute_force(p, 57_000).map_err(bad)?,
                analytics::estimate_brute_force(p * p, 57_000).map_err(bad)?,
            ];
            all.extend(birthdays(&ks, p)?);
            all.push(analytics::estimate_probes_for(0.5, p).map_err(bad)?);
            all.push(analytics::estimate_probes_for(0.999, p).map_err(bad)?);
            all.push(analytics::estimate_birthday_party(23, 365));
            all.push(analytics::estimate_retention(25_000_000, 33_000, analytics::ASSUMED_BYTES_PER_RECORD));
            all
        }
    })
}

fn estimate(c: &Common, what: Option<&Estimate>) -> Result<Report, CliError> {
    let all = formulas(c, what)?;
    let mut t = Table::new(&["formula", "inputs", "value", "note"]);
    for f in &all {
        t.push(vec![f.formula.to_string(), f.inputs.to_string(), f.value.to_string(), f.provenance_note.clone()]);
    }
    let body = match (c.out.unwrap_or(OutFormat::Json), all.as_slice()) {
        (OutFormat::Json, [one]) => json(one),
        (format, _) => render(format, &all, &t, "")?,
    };
    Ok(Report::ok(body))
}
