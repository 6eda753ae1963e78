//! Finds date and timestamp substrings in free text.

use std::sync::OnceLock;

use chrono::NaiveDate;
use regex::Regex;

const MONTHS: &str = "Jan(?:uary)?|Feb(?:ruary)?|Mar(?:ch)?|Apr(?:il)?|May|June?|July?|Aug(?:ust)?|Sep(?:t(?:ember)?)?|Oct(?:ober)?|Nov(?:ember)?|Dec(?:ember)?";

fn scanner() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        let iso = r"(?P<iso>(?P<ymd>\d{4}-\d{2}-\d{2})(?:[T ]\d{2}:\d{2}(?::\d{2}(?:\.\d+)?)?(?:Z|[+-]\d{2}:\d{2})?)?)";
        let month_first = format!(r"(?:{MONTHS})\.? \d{{1,2}}, \d{{4}}");
        let day_first = format!(r"\d{{1,2}} (?:{MONTHS})\.? \d{{4}}");
        let slashed = r"\d{1,2}/\d{1,2}/\d{4}";
        Regex::new(&format!(
            r"\b(?:{iso}|{month_first}|{day_first}|{slashed})\b"
        ))
        .expect("date scanner pattern")
    })
}

/// Date substrings in order of appearance. ISO dates must name a real
/// calendar day; `2025-13-45` is ignored.
pub fn find_dates(text: &str) -> Vec<String> {
    scanner()
        .captures_iter(text)
        .filter(|caps| match caps.name("ymd") {
            Some(ymd) => NaiveDate::parse_from_str(ymd.as_str(), "%Y-%m-%d").is_ok(),
            None => true,
        })
        .map(|caps| caps[0].to_string())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rfc3339_timestamp() {
        assert_eq!(
            find_dates("Your flight departs 2025-03-14T09:30:00Z from SFO"),
            ["2025-03-14T09:30:00Z"]
        );
        assert_eq!(
            find_dates("at 2025-03-14T09:30:00.250+02:00."),
            ["2025-03-14T09:30:00.250+02:00"]
        );
    }

    #[test]
    fn common_formats() {
        assert_eq!(
            find_dates("on Mar 14, 2025 or 14 March 2025 or 3/14/2025 or 2025-03-14"),
            ["Mar 14, 2025", "14 March 2025", "3/14/2025", "2025-03-14"]
        );
    }

    #[test]
    fn rejects_impossible_and_embedded() {
        assert!(find_dates("code 2025-13-45 and 12025-01-01x").is_empty());
        assert!(find_dates("no dates here").is_empty());
    }
}
