mod common;

use chrono::{DateTime, TimeDelta, Utc};
use hub_core::broker::{jws, pkce, MemoryKeyStore, SigningKey, TokenStatus, TokenTable, Vault};
use hub_core::engine::ops::{apply, FieldScope, OpEnv};
use hub_core::manifest::{parse, validate};
use hub_core::policy::{AccessLog, Constraint, Decision, Grant, PolicyEngine};
use hub_core::scheduler::{AccessBinding, Schedule, Scheduler};
use hub_core::manifest::AccessPattern;
use hub_oracle::{gen, Case};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn t0() -> DateTime<Utc> {
    "2025-06-01T00:00:00Z".parse().unwrap()
}

fn run(case: &Case, doc: Vec<Value>) -> Vec<Value> {
    let mut env = OpEnv::new(t0(), FieldScope::Record, ChaCha8Rng::seed_from_u64(0));
    apply(&common::spec(case), doc, &mut env).unwrap_or_default()
}

fn is_subsequence(small: &[Value], big: &[Value]) -> bool {
    let mut it = big.iter();
    small.iter().all(|x| it.any(|y| y == x))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn filter_keeps_an_ordered_subset_and_is_idempotent(seed in any::<u64>()) {
        let mut r = gen::rng(seed);
        let doc = gen::document(&mut r);
        let case = gen::filter_case(&mut r);
        let once = run(&case, doc.clone());
        prop_assert!(is_subsequence(&once, &doc));
        prop_assert_eq!(run(&case, once.clone()), once);
    }

    #[test]
    fn limit_is_a_prefix(seed in any::<u64>(), n in 0u64..40) {
        let doc = gen::document(&mut gen::rng(seed));
        let out = run(&Case::Limit(n), doc.clone());
        prop_assert_eq!(out.len(), doc.len().min(n as usize));
        prop_assert_eq!(&doc[..out.len()], &out[..]);
    }

    #[test]
    fn projection_never_grows_records(seed in any::<u64>()) {
        let mut r = gen::rng(seed);
        let doc = gen::document(&mut r);
        let fields: Vec<String> = (0..3).map(|i| gen::PATHS[(seed as usize + i * 7) % gen::PATHS.len()].to_string()).collect();
        let out = run(&Case::SelectMany(fields), doc.clone());
        prop_assert!(out.len() <= doc.len());
        let total = |v: &[Value]| v.iter().map(|x| x.to_string().len()).sum::<usize>();
        prop_assert!(total(&out) <= total(&doc));
    }

    #[test]
    fn generated_manifests_validate(seed in any::<u64>()) {
        let text = gen::manifest_text(&mut gen::rng(seed));
        let m = parse(&text).unwrap();
        prop_assert!(validate(&m).is_empty());
        prop_assert!(m.same_structure(&parse(&m.to_text()).unwrap()));
    }

    #[test]
    fn pkce_accepts_only_its_verifier(a in "[A-Za-z0-9._~-]{43,128}", b in "[A-Za-z0-9._~-]{43,128}") {
        let challenge = pkce::challenge_for(&a);
        prop_assert!(pkce::verify(&a, &challenge));
        prop_assert_eq!(pkce::verify(&b, &challenge), a == b);
    }

    #[test]
    fn any_body_mutation_breaks_the_signature(body in proptest::collection::vec(any::<u8>(), 1..300), idx in any::<usize>(), flip in 1u8..=255) {
        let key = SigningKey::generate("k").unwrap();
        let sig = key.sign_detached(&body).unwrap();
        prop_assert!(jws::verify_detached(&sig, &key.jwk, &body));
        let mut bad = body.clone();
        let i = idx % bad.len();
        bad[i] ^= flip;
        prop_assert!(!jws::verify_detached(&sig, &key.jwk, &bad));
    }

    #[test]
    fn only_the_chain_head_is_accepted(steps in 1usize..40, probe in any::<usize>()) {
        let mut table = TokenTable::default();
        let mut tokens = vec![table.issue("g", t0()).token];
        for _ in 0..steps {
            let next = table.consume_and_rotate(tokens.last().unwrap(), t0()).unwrap().next.token;
            tokens.push(next);
        }
        let stale = &tokens[probe % (tokens.len() - 1)];
        prop_assert!(table.consume_and_rotate(stale, t0()).is_err());
        let chain = table.chain("g");
        let active: Vec<_> = chain.iter().filter(|(_, s)| *s == TokenStatus::Active).collect();
        prop_assert_eq!(active.len(), 1);
        prop_assert_eq!(active[0].0, steps as u64);
        let gens: Vec<u64> = chain.iter().map(|(g, _)| *g).collect();
        prop_assert_eq!(gens, (0..=steps as u64).collect::<Vec<_>>());
        prop_assert!(table.consume_and_rotate(tokens.last().unwrap(), t0()).is_ok());
    }

    #[test]
    fn frequency_limit_holds_in_every_window(gaps in proptest::collection::vec(0i64..200_000, 1..60), max in 1u32..4) {
        let mut policy = PolicyEngine::new(AccessLog::in_memory());
        policy.insert(Grant::pending("g", "h", "app", "p", AccessPattern::UserDriven, t0())).unwrap();
        let week = 7 * 24 * 3600;
        policy.decide("g", Decision::Allow, vec![Constraint::UsageFrequency { max_uses: max, per_seconds: week }], t0()).unwrap();
        let mut now = t0();
        for g in gaps {
            now += TimeDelta::seconds(g);
            if let Ok(r) = policy.reserve("g", now) {
                policy.commit(r);
            }
        }
        let uses = policy.usage("g");
        for (i, start) in uses.iter().enumerate() {
            let inside = uses[i..].iter().filter(|t| **t - *start < TimeDelta::seconds(week as i64)).count();
            prop_assert!(inside <= max as usize);
        }
    }

    #[test]
    fn scheduled_firings_match_floor(interval in 10u64..5000, horizon in 0u64..100_000, step in 1u64..400) {
        let mut s = Scheduler::new(10);
        s.activate(AccessBinding {
            grant_id: "g".into(),
            pattern: AccessPattern::Scheduled,
            schedule: Some(Schedule::every(interval)),
            endpoint: "http://x".into(),
        }, t0()).unwrap();
        let mut fired = 0u64;
        let mut t = 0;
        while t < horizon {
            t = (t + step).min(horizon);
            fired += s.tick(t0() + TimeDelta::seconds(t as i64)).len() as u64;
        }
        // Coarse ticks coalesce overdue runs, fine ticks see every one.
        if step <= interval {
            prop_assert_eq!(fired, hub_oracle::derived::scheduled_firings(horizon, interval));
        } else {
            prop_assert!(fired <= hub_oracle::derived::scheduled_firings(horizon, interval));
        }
    }

    #[test]
    fn vault_round_trips(secret in "[ -~]{0,64}", service in "[a-z]{1,12}") {
        let mut vault = Vault::in_memory(&MemoryKeyStore::random()).unwrap();
        vault.put(&service, &secret, Some(t0() + TimeDelta::days(1))).unwrap();
        let back: String = vault.get(&service, t0()).unwrap();
        prop_assert_eq!(back, secret);
    }
}
