//! Closed-form estimates: probe-rate budget, exhaustive-search durations,
//! birthday collision odds and their inversion, the classic birthday
//! problem, and connection-log volume.

use num_rational::Ratio;
use serde::Serialize;
use serde_json::json;

use crate::scalar::Real;

/// Default bytes one minimal probe occupies on the wire: an 8-byte UDP
/// payload plus 80 bytes of framing. With 40 Mbit/s upload this gives
/// 56 818 probes/s. Counting 84 bytes of framing instead (92 total) gives
/// 54 347 probes/s.
pub const DEFAULT_PROBE_WIRE_BYTES: u64 = 88;

/// Full 16-bit port space.
pub const PORT_SPACE: u64 = 65_535;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnalyticsError {
    #[error("{0} must be strictly positive")]
    NonPositive(&'static str),
    #[error("target probability {0} must lie in [0, 1)")]
    ProbabilityOutOfRange(String),
}

/// Upload capacity and per-probe wire size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct LinkBudget {
    pub upload_bps: u64,
    pub bytes_per_probe_on_wire: u64,
}

impl LinkBudget {
    pub fn new(upload_bps: u64, bytes_per_probe_on_wire: u64) -> Result<Self, AnalyticsError> {
        if upload_bps == 0 {
            return Err(AnalyticsError::NonPositive("upload_bps"));
        }
        if bytes_per_probe_on_wire == 0 {
            return Err(AnalyticsError::NonPositive("bytes_per_probe_on_wire"));
        }
        Ok(LinkBudget { upload_bps, bytes_per_probe_on_wire })
    }
}

/// Probes per second the link can sustain, floored.
pub fn max_probe_rate(b: LinkBudget) -> u64 {
    b.upload_bps / (8 * b.bytes_per_probe_on_wire)
}

/// Exact duration in seconds, kept as a rational.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Seconds(pub Ratio<u128>);

impl Seconds {
    /// Rounded to the nearest millisecond.
    pub fn millis(self) -> u128 {
        let ms = self.0 * Ratio::from_integer(1000);
        ms.round().to_integer()
    }

    pub fn as_float<T: Real>(self) -> T {
        T::of_u64(*self.0.numer() as u64) / T::of_u64(*self.0.denom() as u64)
    }
}

/// Seconds to send `combinations` probes at `pps`.
pub fn brute_force_duration(combinations: u64, pps: u64) -> Result<Seconds, AnalyticsError> {
    if pps == 0 {
        return Err(AnalyticsError::NonPositive("pps"));
    }
    Ok(Seconds(Ratio::new(combinations as u128, pps as u128)))
}

/// Port space `P` and probes sent by each side `k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CollisionModel {
    pub port_space: u64,
    pub probes_per_side: u64,
}

impl CollisionModel {
    pub fn new(port_space: u64, probes_per_side: u64) -> Result<Self, AnalyticsError> {
        if port_space == 0 {
            return Err(AnalyticsError::NonPositive("port_space"));
        }
        Ok(CollisionModel { port_space, probes_per_side })
    }

    /// Number of (source, destination) port pairs, `P²`.
    pub fn pair_space(&self) -> u128 {
        (self.port_space as u128).pow(2)
    }
}

/// `1 − exp(−k²/P²)`: chance that one of A's `k` random (source,
/// destination) pairs mirrors one of B's.
pub fn birthday_success_probability<T: Real>(m: CollisionModel) -> T {
    let ratio = T::of_u64(m.probes_per_side) / T::of_u64(m.port_space);
    -(-(ratio * ratio)).exp_m1()
}

/// Smallest `k` with `birthday_success_probability(k, P) ≥ p`, by the
/// closed-form inverse `⌈P·√(−ln(1−p))⌉`.
pub fn probes_for_target<T: Real>(p: T, port_space: u64) -> Result<u64, AnalyticsError> {
    if !(p >= T::zero() && p < T::one()) {
        return Err(AnalyticsError::ProbabilityOutOfRange(p.to_string()));
    }
    if port_space == 0 {
        return Err(AnalyticsError::NonPositive("port_space"));
    }
    let k = T::of_u64(port_space) * (-(-p).ln_1p()).sqrt();
    Ok(k.ceil().to_u64().expect("finite, non-negative"))
}

/// Chance that at least two of `n` people share a birthday over `days`.
pub fn birthday_party_probability<T: Real>(n: u64, days: u64) -> T {
    if n > days {
        return T::one();
    }
    let d = T::of_u64(days);
    let none = (0..n).fold(T::one(), |acc, i| acc * (T::one() - T::of_u64(i) / d));
    T::one() - none
}

/// Unordered pairs among `n` items.
pub fn pair_count(n: u64) -> u64 {
    n * n.saturating_sub(1) / 2
}

/// Bytes per day of a per-connection log.
pub fn retention_volume(customers: u64, connections_per_day: u64, bytes_per_record: u64) -> u128 {
    customers as u128 * connections_per_day as u128 * bytes_per_record as u128
}

/// Record size assumed when reproducing the 425 TB/day figure; chosen so
/// that 25 M customers × 33 000 connections lands on it.
pub const ASSUMED_BYTES_PER_RECORD: u64 = 515;

/// Machine-readable result of one formula evaluation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub inputs: serde_json::Value,
    pub formula: &'static str,
    pub value: serde_json::Value,
    pub provenance_note: String,
}

pub fn estimate_probe_rate(b: LinkBudget) -> Estimate {
    let note = if b.bytes_per_probe_on_wire == DEFAULT_PROBE_WIRE_BYTES {
        "88 bytes/probe is a chosen default: an 8-byte payload plus 84 bytes of \
         ethernet overhead (92 bytes) gives 54347 pps, not the ~57000 usually quoted \
         for a 40 Mbit/s uplink; 88 bytes reproduces ~57000"
            .to_string()
    } else {
        format!("bytes per probe set to {}", b.bytes_per_probe_on_wire)
    };
    Estimate {
        inputs: json!(b),
        formula: "floor(upload_bps / (8 * bytes_per_probe_on_wire))",
        value: json!(max_probe_rate(b)),
        provenance_note: note,
    }
}

pub fn estimate_brute_force(combinations: u64, pps: u64) -> Result<Estimate, AnalyticsError> {
    let s = brute_force_duration(combinations, pps)?;
    let secs = s.millis() as f64 / 1000.0;
    Ok(Estimate {
        inputs: json!({ "combinations": combinations, "pps": pps }),
        formula: "combinations / pps (seconds, rounded to ms)",
        value: json!(secs),
        provenance_note: if secs < 3600.0 {
            format!("{secs:.3} seconds")
        } else {
            format!("{:.1} hours", secs / 3600.0)
        },
    })
}

pub fn estimate_birthday(m: CollisionModel) -> Estimate {
    Estimate {
        inputs: json!(m),
        formula: "1 - exp(-k^2 / P^2)",
        value: json!(birthday_success_probability::<f64>(m)),
        provenance_note: "with-replacement collision model; k counts probes per side".into(),
    }
}

pub fn estimate_probes_for(p: f64, port_space: u64) -> Result<Estimate, AnalyticsError> {
    Ok(Estimate {
        inputs: json!({ "target": p, "port_space": port_space }),
        formula: "ceil(P * sqrt(-ln(1 - p)))",
        value: json!(probes_for_target(p, port_space)?),
        provenance_note: "probes per side under the exponential collision model".into(),
    })
}

pub fn estimate_birthday_party(n: u64, days: u64) -> Estimate {
    Estimate {
        inputs: json!({ "people": n, "days": days }),
        formula: "1 - prod_{i<n} (1 - i/days)",
        value: json!({
            "probability": birthday_party_probability::<f64>(n, days),
            "pairs": pair_count(n),
        }),
        provenance_note: "exact product".into(),
    }
}

pub fn estimate_retention(customers: u64, connections: u64, bytes_per_record: u64) -> Estimate {
    let bytes = retention_volume(customers, connections, bytes_per_record);
    let note = if bytes_per_record == ASSUMED_BYTES_PER_RECORD {
        format!(
            "{:.0} TB/day; 515 bytes/record is an assumption back-solved from the 425 TB/day figure, not a measured record size",
            bytes as f64 / 1e12
        )
    } else {
        format!("{:.0} TB/day", bytes as f64 / 1e12)
    };
    Estimate {
        inputs: json!({ "customers": customers, "connections_per_day": connections, "bytes_per_record": bytes_per_record }),
        formula: "customers * connections_per_day * bytes_per_record",
        value: json!(bytes as u64),
        provenance_note: note,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::Float;
    use proptest::prelude::*;

    #[test]
    fn probe_rate_examples() {
        assert_eq!(max_probe_rate(LinkBudget::new(40_000_000, 88).unwrap()), 56_818);
        assert_eq!(max_probe_rate(LinkBudget::new(40_000_000, 92).unwrap()), 54_347);
        assert_eq!(max_probe_rate(LinkBudget::new(8, 1).unwrap()), 1);
        assert!(LinkBudget::new(0, 88).is_err());
        assert!(LinkBudget::new(1, 0).is_err());
    }

    #[test]
    fn brute_force_examples() {
        assert_eq!(brute_force_duration(65_535, 57_000).unwrap().millis(), 1_150);
        let long = brute_force_duration(4_294_836_225, 57_000).unwrap();
        assert_eq!(long.0.round().to_integer(), 75_348);
        assert!((long.as_float::<f64>() / 3600.0 - 20.93).abs() < 0.01);
        assert_eq!(brute_force_duration(0, 57_000).unwrap().millis(), 0);
        assert!(brute_force_duration(1, 0).is_err());
    }

    fn birthday_examples<T: Real>(tol: f64) {
        let p = |k, big_p| birthday_success_probability::<T>(CollisionModel::new(big_p, k).unwrap()).to_f64_lossy();
        assert!((p(54_000, 65_535) - 0.493).abs() < 5e-4 + tol);
        assert!((p(170_000, 65_535) - 0.9988).abs() < 5e-5 + tol);
        assert_eq!(p(0, 65_535), 0.0);
    }

    #[test]
    fn birthday_examples_f64() {
        birthday_examples::<f64>(0.0);
    }

    #[test]
    fn birthday_examples_f32() {
        birthday_examples::<f32>(1e-5);
    }

    #[test]
    fn inversion_examples() {
        let k50 = probes_for_target(0.5f64, 65_535).unwrap();
        let k999 = probes_for_target(0.999f64, 65_535).unwrap();
        // ⌈65535·√ln 2⌉ and ⌈65535·√ln 1000⌉
        assert_eq!(k50, 54_562);
        assert_eq!(k999, 172_244);
        assert!((k50 as f64 / 54_000.0 - 1.0).abs() < 0.02);
        assert!((k999 as f64 / 170_000.0 - 1.0).abs() < 0.02);
        assert_eq!(probes_for_target(0.0f64, 65_535).unwrap(), 0);
        assert!(probes_for_target(1.0f64, 65_535).is_err());
        assert!(probes_for_target(-0.1f64, 65_535).is_err());
        assert_eq!(probes_for_target(0.5f64, 1024).unwrap(), 853);
        assert_eq!(probes_for_target(0.999f64, 1024).unwrap(), 2692);
    }

    /// Permutation-counting oracle: P(no shared day) = days!/(days−n)! / daysⁿ,
    /// evaluated with exact big rationals.
    fn party_oracle(n: u64, days: u64) -> f64 {
        use num_bigint::BigInt;
        use num_rational::BigRational;
        use num_traits::{One, ToPrimitive};
        let mut falling = BigInt::one();
        let mut power = BigInt::one();
        for i in 0..n {
            falling *= BigInt::from(days - i);
            power *= BigInt::from(days);
        }
        let none = BigRational::new(falling, power);
        (BigRational::one() - none).to_f64().unwrap()
    }

    #[test]
    fn birthday_party() {
        let p: f64 = birthday_party_probability(23, 365);
        assert!((p - 0.5073).abs() < 1e-4);
        assert_eq!(pair_count(23), 253);
        assert_eq!(birthday_party_probability::<f64>(1, 365), 0.0);
        assert_eq!(birthday_party_probability::<f64>(366, 365), 1.0);
        for n in 0..=50 {
            let got: f64 = birthday_party_probability(n, 365);
            assert!((got - party_oracle(n, 365)).abs() < 1e-12, "n={n}");
        }
    }

    #[test]
    fn retention() {
        let v = retention_volume(25_000_000, 33_000, ASSUMED_BYTES_PER_RECORD);
        assert_eq!(v, 424_875_000_000_000);
        assert!((v as f64 / 1e12 - 425.0).abs() < 1.0);
        assert_eq!(retention_volume(0, 33_000, 515), 0);
        assert_eq!(retention_volume(1, 1, 100), 100);
        let e = estimate_retention(25_000_000, 33_000, 515);
        assert!(e.provenance_note.contains("assumption"));
    }

    /// Exact success probability of the with-replacement model, computed
    /// from the occupancy distribution of A's k cells among P² instead of the
    /// exponential approximation.
    fn exact_collision(port_space: u64, k: u64) -> f64 {
        let n = (port_space * port_space) as f64;
        let k = k as usize;
        // dist[j] = P(A's k draws cover exactly j distinct cells)
        let mut dist = vec![0.0f64; k + 1];
        dist[0] = 1.0;
        for step in 0..k {
            let mut next = vec![0.0; k + 1];
            for j in 0..=step {
                if dist[j] == 0.0 {
                    continue;
                }
                next[j] += dist[j] * (j as f64 / n);
                next[j + 1] += dist[j] * (1.0 - j as f64 / n);
            }
            dist = next;
        }
        let miss: f64 = dist.iter().enumerate().map(|(j, p)| p * (1.0 - j as f64 / n).powi(k as i32)).sum();
        1.0 - miss
    }

    /// Brute-force enumeration for a tiny space: every outcome of A's and
    /// B's probes, counted directly.
    fn enumerate_collision(port_space: u64, k: u32) -> f64 {
        let cells = port_space * port_space;
        let outcomes = cells.pow(k);
        let mut hits = 0u64;
        let decode = |mut idx: u64| {
            (0..k)
                .map(|_| {
                    let c = idx % cells;
                    idx /= cells;
                    (c / port_space, c % port_space)
                })
                .collect::<Vec<_>>()
        };
        for a in 0..outcomes {
            let pa = decode(a);
            for b in 0..outcomes {
                let pb = decode(b);
                if pa.iter().any(|&(s, d)| pb.iter().any(|&(s2, d2)| s == d2 && d == s2)) {
                    hits += 1;
                }
            }
        }
        hits as f64 / (outcomes * outcomes) as f64
    }

    #[test]
    fn exact_oracle_agrees_with_enumeration() {
        for (p, k) in [(2, 1), (2, 2), (3, 1), (3, 2)] {
            assert!((exact_collision(p, k as u64) - enumerate_collision(p, k)).abs() < 1e-12, "P={p} k={k}");
        }
    }

    #[test]
    fn exponential_model_matches_exact_oracle_small_spaces() {
        for port_space in [8u64, 16, 32, 64] {
            let k = (port_space as f64 * 2f64.ln().sqrt()).round() as u64;
            let model: f64 = birthday_success_probability(CollisionModel::new(port_space, k).unwrap());
            let exact = exact_collision(port_space, k);
            assert!((model - exact).abs() <= 0.02, "P={port_space}: model {model} exact {exact}");
        }
    }

    #[test]
    fn exponential_model_matches_monte_carlo_p1024() {
        use rand::{Rng, SeedableRng};
        use rayon::prelude::*;
        use std::collections::HashSet;
        let port_space = 1024u64;
        let k = probes_for_target(0.5f64, port_space).unwrap();
        let trials = 100_000u64;
        let hits: u64 = (0..trials)
            .into_par_iter()
            .map(|t| {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(t);
                let a: HashSet<(u64, u64)> =
                    (0..k).map(|_| (rng.gen_range(0..port_space), rng.gen_range(0..port_space))).collect();
                let hit = (0..k).any(|_| {
                    let (s, d) = (rng.gen_range(0..port_space), rng.gen_range(0..port_space));
                    a.contains(&(d, s))
                });
                hit as u64
            })
            .sum();
        let empirical = hits as f64 / trials as f64;
        let model: f64 = birthday_success_probability(CollisionModel::new(port_space, k).unwrap());
        assert!((empirical - model).abs() <= 0.02, "empirical {empirical} model {model}");
    }

    proptest! {
        #[test]
        fn inversion_reaches_target(pi in 0usize..10, si in 0usize..3) {
            let ps = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.999];
            let spaces = [256u64, 1024, 65_535];
            let (p, space) = (ps[pi], spaces[si]);
            let k = probes_for_target(p, space).unwrap();
            let got: f64 = birthday_success_probability(CollisionModel::new(space, k).unwrap());
            prop_assert!(got >= p, "k={} got={}", k, got);
            if k > 0 {
                let below: f64 = birthday_success_probability(CollisionModel::new(space, k - 1).unwrap());
                prop_assert!(below < p + 1e-12);
            }
        }

        #[test]
        fn monotone_in_k_and_p(space in 2u64..100_000, k in 1u64..200_000) {
            let f = |p, k| birthday_success_probability::<f64>(CollisionModel::new(p, k).unwrap());
            let here = f(space, k);
            if here < 1.0 - 1e-9 {
                prop_assert!(f(space, k + 1) > here);
                prop_assert!(f(space + 1, k) < here);
            }
        }
    }

    #[test]
    fn generic_over_scalar() {
        let m = CollisionModel::new(65_535, 54_000).unwrap();
        let a: f32 = birthday_success_probability(m);
        let b: f64 = birthday_success_probability(m);
        assert!((a as f64 - b).abs() < 1e-6);
        assert!(Float::is_finite(a));
    }
}
