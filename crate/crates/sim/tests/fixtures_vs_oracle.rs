use chrono::{TimeZone, Utc};
use hub_core::manifest::AccessPattern;
use hub_oracle::reference::run;
use hub_oracle::time::parse_timestamp;
use hub_oracle::{Case, FilterCond, Target};
use hub_sim::schema::{CALENDAR, FORMS, MAIL};
use hub_sim::scenario::ScenarioName;
use hub_sim::{generate_fixture, World};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn filter(fields: &[&str], cond: FilterCond) -> Case {
    Case::Filter {
        fields: fields.iter().map(|s| s.to_string()).collect(),
        as_list: fields.len() > 1,
        cond,
        require_all: false,
    }
}

fn oracle_count(provider: &str, records: &[Value], now: &str) -> usize {
    let now = parse_timestamp(now).unwrap();
    let chain = match provider {
        CALENDAR => vec![
            filter(&["start.dateTime"], FilterCond::Compare { op: ">".into(), target: Target::Now }),
        ],
        MAIL => vec![
            filter(&["snippet"], FilterCond::Contains { needle: "flight".into(), ignore_case: true }),
            Case::ExtractDate("snippet".into()),
        ],
        FORMS => vec![filter(&["valid"], FilterCond::Literal("true".into()))],
        other => panic!("no chain for {other}"),
    };
    let out = chain.iter().try_fold(records.to_vec(), |s, c| run(c, &s, now)).unwrap();
    if provider == CALENDAR {
        let link = |e: &Value, k: &str| e[k].as_str().is_some_and(|s| s.contains("zoom.us"));
        return out.iter().filter(|e| link(e, "location") || link(e, "description")).count();
    }
    out.len()
}

#[test]
fn planted_counts_match_oracle_and_engine() {
    let start = Utc.with_ymd_and_hms(2026, 1, 1, 0, 0, 0).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(11);
    for name in [ScenarioName::Zoom, ScenarioName::Uber, ScenarioName::Forms] {
        for seed in 0..40u64 {
            let (size, matching) = if seed == 0 {
                name.fixture_shape()
            } else {
                let size = r.random_range(0..120);
                (size, r.random_range(0..=size))
            };
            let fixture = generate_fixture(name.provider_id(), size, matching, seed).unwrap();
            assert_eq!(
                oracle_count(name.provider_id(), &fixture.records, "2026-01-01T00:00:00Z"),
                matching,
                "{name} seed {seed}"
            );
            let mut world = World::new(&[fixture], start).unwrap();
            let session = world
                .connect("app", &name.manifest(), AccessPattern::UserDriven, None, vec![])
                .unwrap();
            let preview = world.hub.preview(&session.grant_id, world.now).unwrap();
            assert_eq!((preview.input_count, preview.output_count), (size, matching), "{name} seed {seed}");
        }
    }
}

#[test]
fn zoom_example_counts() {
    let fixture = generate_fixture(CALENDAR, 97, 5, 42).unwrap();
    assert_eq!(oracle_count(CALENDAR, &fixture.records, "2026-01-01T00:00:00Z"), 5);
}
