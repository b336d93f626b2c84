#[path = "support/props.rs"]
mod props;

use props::CASES;

macro_rules! suite {
    ($($name:ident),* $(,)?) => {$(
        #[test]
        fn $name() {
            if let Err(e) = props::$name(CASES) {
                panic!("{e}");
            }
        }
    )*};
}

suite!(
    eim_invariance,
    edm_freshness,
    no_unsolicited_inbound,
    capacity,
    port_uniqueness,
    punch_correctness,
    simple_punch_completeness,
    simple_punch_soundness,
    ladder_monotonicity,
    chunking_safety,
    netsim_determinism,
);
