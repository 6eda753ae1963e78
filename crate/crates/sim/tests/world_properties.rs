use chrono::{TimeDelta, TimeZone, Utc};
use hub_core::manifest::AccessPattern;
use hub_core::scheduler::Schedule;
use hub_oracle::derived::scheduled_firings;
use hub_sim::scenario::ScenarioName;
use hub_sim::World;
use proptest::prelude::*;

fn world() -> World {
    let fixture = ScenarioName::Zoom.standard_fixture(3).unwrap();
    World::new(&[fixture], Utc.with_ymd_and_hms(2026, 1, 1, 0, 0, 0).unwrap()).unwrap()
}

#[derive(Debug, Clone)]
enum Event {
    Advance(i64),
    Tick,
    Offline(i64),
    Query,
}

fn event() -> impl Strategy<Value = Event> {
    prop_oneof![
        (1i64..3600).prop_map(Event::Advance),
        Just(Event::Tick),
        (1i64..7200).prop_map(Event::Offline),
        Just(Event::Query),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn user_driven_only_delivers_on_query(trace in prop::collection::vec(event(), 0..120)) {
        let mut w = world();
        let mut s = w.connect("app", &ScenarioName::Zoom.manifest(), AccessPattern::UserDriven, None, vec![]).unwrap();
        let mut queried = 0;
        for e in trace {
            match e {
                Event::Advance(secs) => { w.advance(TimeDelta::seconds(secs)); }
                Event::Tick => prop_assert_eq!(w.tick(), 0),
                Event::Offline(secs) => prop_assert_eq!(w.offline(TimeDelta::seconds(secs)), 0),
                Event::Query => {
                    w.query(&mut s, None).unwrap();
                    queried += 1;
                }
            }
        }
        prop_assert_eq!(w.app.count(), queried);
    }

    #[test]
    fn scheduled_fires_once_per_elapsed_interval(interval in 10u64..600, horizon in 0u64..4000, step_frac in 0.05f64..1.0) {
        let mut w = world();
        let schedule = Schedule::every(interval);
        w.connect("app", &ScenarioName::Zoom.manifest(), AccessPattern::Scheduled, Some(schedule), vec![]).unwrap();
        let step = ((interval as f64 * step_frac) as u64).max(1);
        let mut elapsed = 0;
        let mut fired = 0;
        while elapsed < horizon {
            let by = step.min(horizon - elapsed);
            w.advance(TimeDelta::seconds(by as i64));
            elapsed += by;
            fired += w.tick();
        }
        prop_assert_eq!(fired as u64, scheduled_firings(horizon, interval));
        prop_assert_eq!(w.app.count() as u64, scheduled_firings(horizon, interval));
    }

    #[test]
    fn install_time_delivers_once(trace in prop::collection::vec(event(), 0..60)) {
        let mut w = world();
        let mut s = w.connect("app", &ScenarioName::Zoom.manifest(), AccessPattern::InstallTime, None, vec![]).unwrap();
        for e in trace {
            match e {
                Event::Advance(secs) => { w.advance(TimeDelta::seconds(secs)); }
                Event::Tick => { w.tick(); }
                Event::Offline(secs) => { w.offline(TimeDelta::seconds(secs)); }
                Event::Query => prop_assert!(w.query(&mut s, None).is_err()),
            }
        }
        prop_assert_eq!(w.app.count(), 1);
    }

    #[test]
    fn nothing_after_revoke(interval in 10u64..120, before in 0u64..10) {
        let mut w = world();
        let mut s = w.connect("app", &ScenarioName::Zoom.manifest(), AccessPattern::Scheduled, Some(Schedule::every(interval)), vec![]).unwrap();
        for _ in 0..before {
            w.advance(TimeDelta::seconds(interval as i64));
            w.tick();
        }
        let delivered = w.app.count();
        w.hub.revoke(&s.grant_id, w.now).unwrap();
        for _ in 0..10 {
            w.advance(TimeDelta::seconds(interval as i64));
            w.tick();
            prop_assert!(w.query(&mut s, None).is_err());
        }
        prop_assert_eq!(w.offline(TimeDelta::seconds(interval as i64 * 5)), 0);
        prop_assert_eq!(w.app.count(), delivered);
    }
}

#[test]
fn offline_window_catches_up_once() {
    let mut w = world();
    w.connect("app", &ScenarioName::Zoom.manifest(), AccessPattern::Scheduled, Some(Schedule::every(60)), vec![]).unwrap();
    w.advance(TimeDelta::seconds(60));
    assert_eq!(w.tick(), 1);
    assert_eq!(w.offline(TimeDelta::seconds(180)), 1);
    w.advance(TimeDelta::seconds(60));
    assert_eq!(w.tick(), 1);
    assert_eq!(w.app.count(), 3);
}
