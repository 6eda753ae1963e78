//! Seeded random documents, operator cases and manifest texts.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

use crate::cases::{Case, FilterCond, MapKind, Param, Target};

pub type Rng8 = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng8 {
    ChaCha8Rng::seed_from_u64(seed)
}

const WORDS: &[&str] = &[
    "meeting", "Zoom", "zoom", "flight", "Flight", "confirmation", "itinerary", "lunch", "ref", "order",
    "café", "Über", "ß", "x_y", "id", "sync", "https://zoom.us/j/42", "notes", "folderId", "Room",
];

const DATEISH: &[&str] = &[
    "2025-03-14", "2025-03-14T09:30:00Z", "2025-03-14T09:30:00.250+02:00", "2025-03-14 09:30",
    "2025-02-29", "2024-02-29", "2025-13-45", "Mar 14, 2025", "March 3, 2024", "Sept. 9, 2023",
    "14 March 2025", "1 Jan 2026", "3/14/2025", "12/1/2024", "2025-03-14x", "Mar 14, 20255",
    "2025-03-14T09:30:00.5q", "x2025-03-14", "May 5, 2025",
];

pub const TIMESTAMPS: &[&str] = &[
    "2025-06-01T10:00:00Z", "2025-06-01T12:00:00+02:00", "2024-12-31T23:59:59Z", "2026-01-01T00:00:00Z",
    "2025-06-01T10:00:00.500Z", "2025-05-31T22:00:00-01:00", "2030-07-04T08:15:00Z", "2001-01-01T00:00:00Z",
];

/// Field paths the generated records may contain.
pub const PATHS: &[&str] = &[
    "title", "location", "description", "start.dateTime", "start", "tags", "attendees.email",
    "attendees.age", "attendees", "score", "price", "flag", "note", "meta.kind", "meta.level",
    "meta", "missing", "missing.deep", "parents",
];

pub fn text(r: &mut Rng8) -> String {
    let n = r.random_range(0..7);
    let mut parts = Vec::new();
    for _ in 0..n {
        let w = if r.random_bool(0.3) {
            DATEISH.choose(r).unwrap().to_string()
        } else if r.random_bool(0.15) {
            format!("ref{}", r.random_range(0..1000))
        } else {
            WORDS.choose(r).unwrap().to_string()
        };
        parts.push(w);
    }
    let sep = *[" ", " ", ", ", "-", "."].choose(r).unwrap();
    parts.join(sep)
}

fn scalar(r: &mut Rng8) -> Value {
    match r.random_range(0..8) {
        0 => json!(r.random_range(-50..150)),
        1 => json!((r.random_range(-5000..5000) as f64) / 100.0),
        2 => json!(r.random_bool(0.5)),
        3 => Value::Null,
        4 => json!(TIMESTAMPS.choose(r).unwrap()),
        5 => json!(r.random_range(0..100).to_string()),
        _ => json!(text(r)),
    }
}

fn maybe(r: &mut Rng8, m: &mut Map<String, Value>, key: &str, p: f64, v: impl FnOnce(&mut Rng8) -> Value) {
    if r.random_bool(p) {
        let value = v(r);
        m.insert(key.into(), value);
    }
}

pub fn record(r: &mut Rng8) -> Value {
    let mut m = Map::new();
    maybe(r, &mut m, "title", 0.9, |r| json!(text(r)));
    maybe(r, &mut m, "location", 0.7, |r| if r.random_bool(0.85) { json!(text(r)) } else { scalar(r) });
    maybe(r, &mut m, "description", 0.6, |r| json!(text(r)));
    maybe(r, &mut m, "start", 0.8, |r| {
        if r.random_bool(0.9) {
            json!({"dateTime": TIMESTAMPS.choose(r).unwrap()})
        } else {
            scalar(r)
        }
    });
    maybe(r, &mut m, "tags", 0.5, |r| {
        let n = r.random_range(0..4);
        Value::Array((0..n).map(|_| json!(WORDS.choose(r).unwrap())).collect())
    });
    maybe(r, &mut m, "attendees", 0.6, |r| {
        let n = r.random_range(0..4);
        Value::Array(
            (0..n)
                .map(|_| {
                    let mut a = Map::new();
                    maybe(r, &mut a, "email", 0.8, |r| json!(format!("{}@example.com", WORDS.choose(r).unwrap())));
                    maybe(r, &mut a, "age", 0.7, |r| {
                        if r.random_bool(0.9) { json!(r.random_range(0..90)) } else { scalar(r) }
                    });
                    Value::Object(a)
                })
                .collect(),
        )
    });
    maybe(r, &mut m, "score", 0.7, |r| if r.random_bool(0.85) { json!(r.random_range(-20..100)) } else { scalar(r) });
    maybe(r, &mut m, "price", 0.5, |r| json!((r.random_range(0..100_000) as f64) / 100.0));
    maybe(r, &mut m, "flag", 0.4, |r| json!(r.random_bool(0.5)));
    maybe(r, &mut m, "note", 0.3, |_| Value::Null);
    maybe(r, &mut m, "meta", 0.5, |r| {
        let mut o = Map::new();
        maybe(r, &mut o, "kind", 0.8, |r| json!(["a", "b", "c"].choose(r).unwrap()));
        maybe(r, &mut o, "level", 0.6, |r| json!(r.random_range(0..4)));
        Value::Object(o)
    });
    maybe(r, &mut m, "parents", 0.3, |r| json!(["folderId", "other"].choose(r).unwrap()));
    Value::Object(m)
}

/// A stream of 0 to 25 records.
pub fn document(r: &mut Rng8) -> Vec<Value> {
    let n = r.random_range(0..26);
    (0..n).map(|_| record(r)).collect()
}

fn path(r: &mut Rng8) -> String {
    PATHS.choose(r).unwrap().to_string()
}

fn paths(r: &mut Rng8) -> Vec<String> {
    let n = r.random_range(1..4);
    (0..n).map(|_| path(r)).collect()
}

fn target(r: &mut Rng8) -> Target {
    match r.random_range(0..4) {
        0 => Target::Now,
        1 => Target::Num(f64::from(r.random_range(-20..100))),
        2 => Target::Str(TIMESTAMPS.choose(r).unwrap().to_string()),
        _ => Target::Str([r.random_range(0..100).to_string(), "m".into(), "true".into(), "null".into()]
            .choose(r)
            .unwrap()
            .clone()),
    }
}

pub fn filter_case(r: &mut Rng8) -> Case {
    let cond = match r.random_range(0..4) {
        0 => FilterCond::Contains {
            needle: ["zoom", "Zoom", "flight", "ref", "2025", "1", "a"].choose(r).unwrap().to_string(),
            ignore_case: r.random_bool(0.5),
        },
        1 => FilterCond::Literal(
            ["a", "folderId", "true", "null", "12", "zoom"].choose(r).unwrap().to_string(),
        ),
        2 => FilterCond::LiteralNum(f64::from(r.random_range(0..5))),
        _ => FilterCond::Compare {
            op: ["=", "!=", ">", ">=", "<", "<="].choose(r).unwrap().to_string(),
            target: target(r),
        },
    };
    let fields = paths(r);
    Case::Filter {
        as_list: fields.len() > 1 || r.random_bool(0.3),
        fields,
        cond,
        require_all: r.random_bool(0.4),
    }
}

pub fn select_case(r: &mut Rng8) -> Case {
    if r.random_bool(0.4) {
        Case::SelectOne(path(r))
    } else {
        Case::SelectMany(paths(r))
    }
}

pub fn extract_case(r: &mut Rng8) -> Case {
    let field = *["title", "description", "location", "tags", "attendees.email", "start.dateTime", "score"]
        .choose(r)
        .unwrap();
    if r.random_bool(0.7) {
        Case::ExtractDate(field.into())
    } else {
        Case::ExtractNumber {
            field: field.into(),
            prefix: ["ref", "", "j/", "-"].choose(r).unwrap().to_string(),
        }
    }
}

pub fn limit_case(r: &mut Rng8) -> Case {
    Case::Limit(r.random_range(0..30))
}

pub fn aggregate_case(r: &mut Rng8) -> Case {
    let operation = ["count", "sum", "avg", "min", "max"].choose(r).unwrap().to_string();
    let field = ["score", "price", "attendees.age", "meta.level", "flag", "missing"].choose(r).unwrap();
    let field = (operation != "count" || r.random_bool(0.5)).then(|| field.to_string());
    let group_key = r
        .random_bool(0.5)
        .then(|| ["meta.kind", "flag", "parents", "tags", "missing"].choose(r).unwrap().to_string());
    Case::Aggregate { operation, field, group_key }
}

pub fn map_case(r: &mut Rng8) -> Case {
    let kind = match r.random_range(0..4) {
        0 => {
            let mut bounds: Vec<i64> = (0..r.random_range(1..5)).map(|_| r.random_range(-10..100)).collect();
            bounds.sort();
            bounds.dedup();
            MapKind::Bucket(bounds)
        }
        1 => MapKind::Lowercase,
        2 => MapKind::Truncate(r.random_range(0..12)),
        _ => MapKind::Rename(["renamed", "title", "x"].choose(r).unwrap().to_string()),
    };
    let field = match kind {
        MapKind::Bucket(_) => ["score", "price", "attendees.age", "meta.level", "missing"].choose(r).unwrap().to_string(),
        _ => path(r),
    };
    Case::Map { field, kind }
}

/// One case of every operator kind, in a fixed order.
pub fn case_per_operator(r: &mut Rng8) -> [Case; 6] {
    [
        filter_case(r),
        select_case(r),
        extract_case(r),
        limit_case(r),
        aggregate_case(r),
        map_case(r),
    ]
}

fn ident(r: &mut Rng8, used: &mut Vec<String>) -> String {
    loop {
        let stem = ["Pull", "Sel", "Keep", "Cut", "Tally", "Shape", "Send", "Out", "Grab", "Mask"].choose(r).unwrap();
        let id = format!("{stem}{}", r.random_range(0..100));
        if !used.contains(&id) {
            used.push(id.clone());
            return id;
        }
    }
}

fn operator_text(r: &mut Rng8, id: &str, ty: &str, params: &[(&str, Param)]) -> String {
    let mut parts = vec![format!("type: \"{ty}\"")];
    for (k, v) in params {
        parts.push(format!("{k}: {}", v.to_text()));
    }
    if r.random_bool(0.5) {
        parts.shuffle(r);
    }
    let sep = if r.random_bool(0.3) { ",\n      " } else { ", " };
    format!("{id}({})", parts.join(sep))
}

type OpLine = (String, String, Vec<(&'static str, Param)>);

/// A syntactically and semantically valid manifest, with varied layout.
pub fn manifest_text(r: &mut Rng8) -> String {
    let mut used = Vec::new();
    let receive = r.random_bool(0.25);
    let mut ops: Vec<OpLine> = Vec::new();
    if !receive && r.random_bool(0.2) {
        let id = ident(r, &mut used);
        ops.push((id, "Inject".into(), vec![("interval", Param::Num(f64::from(r.random_range(1..100) * 60)))]));
    }
    let id = ident(r, &mut used);
    if receive {
        ops.push((id, "Receive".into(), vec![("source", Param::str("www.example.com"))]));
    } else {
        let mut p = vec![("resourceType", Param::str(*["gmail", "google_calendar", "google_drive"].choose(r).unwrap()))];
        if r.random_bool(0.6) {
            p.push(("query", Param::str("{ messages(userId) { snippet } }")));
        }
        ops.push((id, "Pull".into(), p));
    }
    for _ in 0..r.random_range(0..5) {
        let case = match r.random_range(0..7) {
            0 => filter_case(r),
            1 => select_case(r),
            2 => extract_case(r),
            3 => limit_case(r),
            4 => aggregate_case(r),
            5 => map_case(r),
            _ => {
                let id = ident(r, &mut used);
                ops.push((id, "Anonymize".into(), vec![
                    ("field", Param::str(path(r))),
                    ("method", Param::str(*["hash", "redact"].choose(r).unwrap())),
                ]));
                continue;
            }
        };
        let id = ident(r, &mut used);
        ops.push((id, case.op_type().into(), case.params()));
    }
    let id = ident(r, &mut used);
    if receive && r.random_bool(0.6) {
        ops.push((id, "Write".into(), vec![
            ("action", Param::str("create")),
            ("resourceType", Param::str("google_drive")),
        ]));
    } else if r.random_bool(0.1) {
        ops.push((id, "Debug".into(), vec![]));
    } else {
        ops.push((id, "Post".into(), vec![("destination", Param::str("www.example.com"))]));
    }

    let mut out = String::new();
    out.push_str(&format!("TITLE: Generated {}\n", r.random_range(0..1000)));
    if r.random_bool(0.7) {
        out.push_str("DESCRIPTION: A generated pipeline\n");
    }
    if r.random_bool(0.3) {
        out.push_str("// a comment line\n");
    }
    let ids: Vec<&str> = ops.iter().map(|(id, _, _)| id.as_str()).collect();
    out.push_str("PIPELINE: ");
    for (i, id) in ids.iter().enumerate() {
        if i > 0 {
            out.push_str(if r.random_bool(0.2) { "\n    -> " } else { " -> " });
        }
        out.push_str(id);
    }
    out.push_str("\n\n");
    let mut order: Vec<usize> = (0..ops.len()).collect();
    if r.random_bool(0.3) {
        order.shuffle(r);
    }
    for i in order {
        let (id, ty, params) = &ops[i];
        out.push_str(&operator_text(r, id, ty, params));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let a: Vec<Value> = document(&mut rng(5));
        let b: Vec<Value> = document(&mut rng(5));
        assert_eq!(a, b);
        assert_eq!(manifest_text(&mut rng(9)), manifest_text(&mut rng(9)));
    }
}
