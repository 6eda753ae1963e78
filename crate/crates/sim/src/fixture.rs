//! Seeded fixture generation with a known number of planted matches.

use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::schema::{schema, SchemaError, CALENDAR, DRIVE, FORMS, MAIL};

/// The folder Notability may write into.
pub const NOTES_FOLDER: &str = "folderId";

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("matching_count {matching} exceeds size {size}")]
    TooManyMatching { size: usize, matching: usize },
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("fixture io: {0}")]
    Io(#[from] std::io::Error),
    #[error("fixture is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub provider_id: String,
    pub seed: u64,
    #[serde(default)]
    pub matching_count: usize,
    pub records: Vec<Value>,
}

impl Fixture {
    pub fn validate(&self) -> Result<(), SchemaError> {
        schema(&self.provider_id)?.validate(&self.records)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("fixture serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, FixtureError> {
        let f: Fixture = serde_json::from_str(text)?;
        f.validate()?;
        Ok(f)
    }

    pub fn load(path: &Path) -> Result<Self, FixtureError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Writes `<root>/<provider>/<name>.json`.
    pub fn save(&self, root: &Path, name: &str) -> Result<PathBuf, FixtureError> {
        let dir = root.join(&self.provider_id);
        std::fs::create_dir_all(&dir)?;
        let path = dir.join(format!("{name}.json"));
        std::fs::write(&path, self.to_json())?;
        Ok(path)
    }
}

const WORDS: &[&str] = &[
    "planning", "review", "budget", "sync", "roadmap", "design", "retro", "hiring", "launch", "offsite",
    "quarterly", "customer", "team", "product", "research", "weekly", "infra", "marketing",
];
const PLACES: &[&str] = &["Room 4B", "Cafe Lumen", "Library annex", "Building 7", "https://meet.example.org/abc-defg"];
const NAMES: &[&str] = &["ana", "bo", "chen", "dara", "eli", "femi", "gus", "hana", "ivo", "jun"];
const CITIES: &[&str] = &["Lisbon", "Denver", "Osaka", "Nairobi", "Quito", "Oslo", "Perth", "Austin"];
const AIRLINES: &[&str] = &["UA", "LH", "NH", "KQ", "TP", "QF"];
const MONTHS: &[&str] = &[
    "January", "February", "March", "April", "May", "June", "July", "August", "September", "October",
    "November", "December",
];

fn pick<'a>(r: &mut ChaCha8Rng, xs: &'a [&'a str]) -> &'a str {
    xs.choose(r).copied().unwrap_or_default()
}

fn phrase(r: &mut ChaCha8Rng, n: usize) -> String {
    (0..n).map(|_| pick(r, WORDS)).collect::<Vec<_>>().join(" ")
}

fn stamp(r: &mut ChaCha8Rng, future: bool) -> (String, String) {
    let year = if future { 2099 } else { r.random_range(2001..=2019) };
    let (mo, d, h) = (r.random_range(1..=12), r.random_range(1..=28), r.random_range(7..=18));
    (
        format!("{year}-{mo:02}-{d:02}T{h:02}:00:00Z"),
        format!("{year}-{mo:02}-{d:02}T{:02}:00:00Z", h + 1),
    )
}

fn zoom_link(r: &mut ChaCha8Rng) -> String {
    format!("https://zoom.us/j/{}", r.random_range(100_000_000u64..999_999_999))
}

fn calendar_event(r: &mut ChaCha8Rng, i: usize, matching: bool) -> Value {
    // non-matching events are past zoom calls, future non-zoom events or past non-zoom events
    let (future, zoom) = if matching {
        (true, true)
    } else {
        match r.random_range(0..3) {
            0 => (false, true),
            1 => (true, false),
            _ => (false, false),
        }
    };
    let (start, end) = stamp(r, future);
    let summary = phrase(r, 2);
    let (location, description) = match (zoom, r.random_bool(0.5)) {
        (true, true) => (zoom_link(r), format!("{} notes", phrase(r, 2))),
        (true, false) => (pick(r, PLACES).to_string(), format!("Join at {}", zoom_link(r))),
        (false, _) => (pick(r, PLACES).to_string(), format!("{} (zoom may follow)", phrase(r, 3))),
    };
    json!({
        "id": format!("evt-{i}"),
        "summary": summary,
        "description": description,
        "location": location,
        "start": {"dateTime": start},
        "end": {"dateTime": end},
    })
}

fn mail_message(r: &mut ChaCha8Rng, i: usize, matching: bool) -> Value {
    let sender = pick(r, NAMES);
    let city = pick(r, CITIES);
    let (subject, snippet) = if matching {
        let day = r.random_range(1..=28);
        let month = r.random_range(1..=12);
        let flight = format!("{}{}", pick(r, AIRLINES), r.random_range(100..999));
        let lead = if r.random_bool(0.5) { "Flight confirmation" } else { "Your flight itinerary" };
        let date = if r.random_bool(0.5) {
            format!("2099-{month:02}-{day:02}")
        } else {
            format!("{} {day}, 2099", MONTHS[month - 1])
        };
        (
            format!("{lead} {flight}"),
            format!("{lead}: {flight} to {city} departs {date}. Booking ref {}", booking(r)),
        )
    } else {
        match r.random_range(0..4) {
            0 => (
                format!("Flight deals to {city}"),
                format!("Flight deals to {city} this season, fares from {} credits", r.random_range(50..400)),
            ),
            1 => (
                "Hotel confirmation".into(),
                format!("Hotel confirmation for your stay in {city}, check-in 2099-0{}-1{}", r.random_range(1..9), r.random_range(0..9)),
            ),
            2 => ("Weekly digest".into(), format!("{} and {} this week", phrase(r, 3), phrase(r, 2))),
            _ => (
                format!("Re: {}", phrase(r, 2)),
                format!("{} here, sharing the {} itinerary draft", sender, phrase(r, 1)),
            ),
        }
    };
    let attachments: Vec<Value> = if r.random_bool(0.2) {
        vec![json!({"filename": format!("{}.pdf", pick(r, WORDS)), "mimeType": "application/pdf", "size": r.random_range(1_000..90_000)})]
    } else {
        Vec::new()
    };
    json!({
        "id": format!("msg-{i}"),
        "subject": subject,
        "snippet": snippet,
        "from": format!("{sender}@mail.example"),
        "attachments": attachments,
    })
}

fn booking(r: &mut ChaCha8Rng) -> String {
    (0..6)
        .map(|_| char::from(b'A' + r.random_range(0..26u8)))
        .collect()
}

fn drive_file(r: &mut ChaCha8Rng, i: usize, matching: bool) -> Value {
    let parents = if matching {
        json!([NOTES_FOLDER])
    } else if r.random_bool(0.3) {
        json!([NOTES_FOLDER, format!("folder-{}", r.random_range(1..50))])
    } else {
        json!([format!("folder-{}", r.random_range(1..50))])
    };
    let mime = pick(r, &["application/pdf", "text/plain", "image/png"]);
    json!({"id": format!("file-{i}"), "name": format!("{}.note", phrase(r, 2).replace(' ', "-")), "parents": parents, "mimeType": mime})
}

fn form_response(r: &mut ChaCha8Rng, i: usize, matching: bool) -> Value {
    json!({
        "responseId": format!("resp-{i}"),
        "answers": {"q1": pick(r, NAMES), "q2": phrase(r, 2), "q3": r.random_range(1..=5).to_string()},
        "valid": matching,
    })
}

/// Exactly `matching_count` records satisfy the provider's scenario
/// predicate: future zoom-linked events, flight confirmation mails, files
/// only in the notes folder, or valid form responses.
pub fn generate_fixture(
    provider_id: &str,
    size: usize,
    matching_count: usize,
    seed: u64,
) -> Result<Fixture, FixtureError> {
    schema(provider_id)?;
    if matching_count > size {
        return Err(FixtureError::TooManyMatching {
            size,
            matching: matching_count,
        });
    }
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut flags: Vec<bool> = (0..size).map(|i| i < matching_count).collect();
    flags.shuffle(&mut r);
    let make = match provider_id {
        CALENDAR => calendar_event,
        MAIL => mail_message,
        DRIVE => drive_file,
        FORMS => form_response,
        _ => unreachable!("schema checked"),
    };
    let records = flags.iter().enumerate().map(|(i, m)| make(&mut r, i, *m)).collect();
    Ok(Fixture {
        provider_id: provider_id.into(),
        seed,
        matching_count,
        records,
    })
}
