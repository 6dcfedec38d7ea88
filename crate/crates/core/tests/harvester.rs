use capsim::harvester::{load_trace, HarvestSample, HarvestSource, RandomPower};
use capsim::{SimDuration, SimTime};
use proptest::prelude::*;

fn random_source(seed: u64) -> HarvestSource {
    HarvestSource::Random {
        dist: RandomPower::Uniform { lo: 0.0, hi: 0.002 },
        seed,
        update_period: SimDuration::from_secs(60),
    }
}

#[test]
fn trace_file_parses_with_header_and_semicolons() {
    let text = "time;power\n0;0.001\n10;0.002\n30;0\n";
    let samples = load_trace(text.as_bytes()).unwrap();
    assert_eq!(
        samples,
        vec![
            HarvestSample { timestamp: 0.0, power: 0.001 },
            HarvestSample { timestamp: 10.0, power: 0.002 },
            HarvestSample { timestamp: 30.0, power: 0.0 },
        ]
    );
}

#[test]
fn trace_holds_last_value_and_errors_past_the_end() {
    let src = HarvestSource::Trace(load_trace("0,1\n10,2\n20,3\n".as_bytes()).unwrap().into());
    let at = |s: f64| src.power_at(SimTime::from_secs_f64(s));
    assert_eq!(at(0.0).unwrap(), 1.0);
    assert_eq!(at(9.999).unwrap(), 1.0);
    assert_eq!(at(10.0).unwrap(), 2.0);
    assert_eq!(at(20.0).unwrap(), 3.0);
    assert!(at(20.001).is_err());
}

proptest! {
    #[test]
    fn random_draws_depend_only_on_seed_and_period(seed in any::<u64>(), t in 0u64..1_000_000) {
        let src = random_source(seed);
        let now = SimTime::from_secs_f64(t as f64 * 0.37);
        let p = src.power_at(now).unwrap();
        prop_assert_eq!(p, random_source(seed).power_at(now).unwrap());
        prop_assert!((0.0..0.002).contains(&p));
        // constant up to the next change point
        let next = src.next_change_after(now).unwrap();
        prop_assert!(next > now);
        prop_assert_eq!(src.power_at(SimTime::from_nanos(next.as_nanos() - 1)).unwrap(), p);
    }

    #[test]
    fn trace_lookup_matches_linear_scan(
        steps in prop::collection::vec((1u32..100, 0.0f64..0.01), 1..30),
        query in 0.0f64..1.0,
    ) {
        let mut t = 0.0;
        let mut samples = Vec::new();
        for (dt, p) in steps {
            samples.push(HarvestSample { timestamp: t, power: p });
            t += dt as f64;
        }
        let end = samples.last().unwrap().timestamp;
        let q = query * end;
        let expected = samples.iter().rev().find(|s| s.timestamp <= q).unwrap().power;
        let src = HarvestSource::Trace(samples.into());
        prop_assert_eq!(src.power_at(SimTime::from_secs_f64(q)).unwrap(), expected);
    }
}
