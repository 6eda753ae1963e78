use std::time::Instant;

use hub_core::manifest::{canonicalize, describe, examples, hash_source, parse, validate};
use hub_oracle::gen;

#[test]
fn reference_manifests_describe() {
    for (src, steps) in [(examples::ZOOM, 5), (examples::NOTABILITY, 3), (examples::UBER, 5)] {
        let m = parse(src).unwrap();
        assert!(validate(&m).is_empty());
        assert_eq!(describe(&m).unwrap().len(), steps);
    }
}

#[test]
fn generated_manifests_round_trip() {
    let started = Instant::now();
    for seed in 0..200 {
        let text = gen::manifest_text(&mut gen::rng(seed));
        let m = parse(&text).unwrap_or_else(|e| panic!("seed {seed}: {e}\n{text}"));
        assert!(validate(&m).is_empty(), "seed {seed}: {:?}\n{text}", validate(&m));
        let again = parse(&m.to_text()).unwrap();
        assert!(m.same_structure(&again), "seed {seed}\n{text}\n---\n{}", m.to_text());
        assert_eq!(again.to_text(), m.to_text());
        assert_eq!(describe(&m).unwrap().len(), m.pipeline.len());
    }
    assert!(started.elapsed().as_secs() < 5);
}

#[test]
fn hash_ignores_layout() {
    for seed in 0..50 {
        let text = gen::manifest_text(&mut gen::rng(seed));
        let spaced = text.replace(" -> ", "   ->\t").replace('\n', "\r\n  // note\r\n");
        assert_eq!(canonicalize(&text), canonicalize(&spaced));
        assert_eq!(hash_source(&text), hash_source(&spaced));
        assert_eq!(parse(&spaced).unwrap().manifest_hash, parse(&text).unwrap().manifest_hash);
    }
}
