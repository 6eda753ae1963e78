mod common;

use std::time::Instant;

use chrono::{DateTime, Utc};
use hub_core::engine::ops::{apply, FieldScope, OpEnv};
use hub_core::engine::json::canonical_json;
use hub_oracle::{gen, reference};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

const DOCUMENTS: u64 = 1200;

fn now() -> DateTime<Utc> {
    "2025-06-01T11:00:00Z".parse().unwrap()
}

fn same(a: &[Value], b: &[Value]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| x == y || numbers_close(x, y))
}

fn numbers_close(x: &Value, y: &Value) -> bool {
    match (x, y) {
        (Value::Number(a), Value::Number(b)) => {
            let (a, b) = (a.as_f64().unwrap(), b.as_f64().unwrap());
            (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
        }
        (Value::Object(a), Value::Object(b)) => {
            a.len() == b.len() && a.iter().all(|(k, v)| b.get(k).is_some_and(|w| v == w || numbers_close(v, w)))
        }
        _ => false,
    }
}

#[test]
fn operators_match_references() {
    let started = Instant::now();
    let mut mismatches = Vec::new();
    let mut compared = 0;
    let mut nonempty = 0;
    let mut refused = 0;
    for seed in 0..DOCUMENTS {
        let mut r = gen::rng(seed);
        let doc = gen::document(&mut r);
        for case in gen::case_per_operator(&mut r) {
            let spec = common::spec(&case);
            let mut env = OpEnv::new(now(), FieldScope::Record, ChaCha8Rng::seed_from_u64(0));
            let got = apply(&spec, doc.clone(), &mut env);
            let want = reference::run(&case, &doc, common::instant(now()));
            compared += 1;
            match &want {
                Ok(w) if !w.is_empty() => nonempty += 1,
                Err(_) => refused += 1,
                _ => {}
            }
            let agree = match (&got, &want) {
                (Ok(g), Ok(w)) => same(g, w),
                (Err(_), Err(_)) => true,
                _ => false,
            };
            if !agree {
                mismatches.push(format!(
                    "seed {seed} {case:?}\n  engine: {:?}\n  reference: {:?}",
                    got.map(|v| v.iter().map(canonical_json).collect::<Vec<_>>()),
                    want.map(|v| v.iter().map(canonical_json).collect::<Vec<_>>())
                ));
            }
        }
    }
    println!("{compared} comparisons, {nonempty} non-empty, {refused} refused");
    assert!(compared >= 6000);
    assert!(nonempty * 2 > compared);
    assert!(mismatches.is_empty(), "{} mismatches:\n{}", mismatches.len(), mismatches.iter().take(5).cloned().collect::<Vec<_>>().join("\n"));
    assert!(started.elapsed().as_secs() < 60);
}

#[test]
fn date_scanner_matches_reference() {
    for seed in 0..3000 {
        let text = gen::text(&mut gen::rng(seed));
        assert_eq!(hub_core::engine::dates::find_dates(&text), hub_oracle::dates::scan_dates(&text), "{text:?}");
    }
}

#[test]
fn timestamps_parse_alike() {
    for s in gen::TIMESTAMPS {
        let t = DateTime::parse_from_rfc3339(s).unwrap().with_timezone(&Utc);
        assert_eq!(hub_oracle::time::parse_timestamp(s), Some(common::instant(t)), "{s}");
    }
}
