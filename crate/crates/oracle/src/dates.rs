//! A backtracking date scanner built from tiny combinators. Each combinator
//! returns candidate end offsets in preference order (greedy first).

use crate::time::valid_ymd;

const MONTHS: &[&[&str]] = &[
    &["January", "Jan"],
    &["February", "Feb"],
    &["March", "Mar"],
    &["April", "Apr"],
    &["May"],
    &["June", "Jun"],
    &["July", "Jul"],
    &["August", "Aug"],
    &["September", "Sept", "Sep"],
    &["October", "Oct"],
    &["November", "Nov"],
    &["December", "Dec"],
];

fn digits(b: &[u8], i: usize, min: usize, max: usize) -> Vec<usize> {
    let mut n = 0;
    while n < max && b.get(i + n).is_some_and(u8::is_ascii_digit) {
        n += 1;
    }
    if n < min {
        return vec![];
    }
    (min..=n).rev().map(|k| i + k).collect()
}

fn lit(b: &[u8], i: usize, s: &str) -> Vec<usize> {
    if b[i.min(b.len())..].starts_with(s.as_bytes()) {
        vec![i + s.len()]
    } else {
        vec![]
    }
}

fn then(ends: Vec<usize>, f: impl Fn(usize) -> Vec<usize>) -> Vec<usize> {
    ends.into_iter().flat_map(f).collect()
}

fn optional(i: usize, present: Vec<usize>) -> Vec<usize> {
    let mut v = present;
    v.push(i);
    v
}

fn month(b: &[u8], i: usize) -> Vec<usize> {
    MONTHS
        .iter()
        .flat_map(|forms| forms.iter().flat_map(move |f| lit(b, i, f)))
        .collect()
}

fn month_dot(b: &[u8], i: usize) -> Vec<usize> {
    then(month(b, i), |e| optional(e, lit(b, e, ".")))
}

fn iso(b: &[u8], i: usize) -> Vec<usize> {
    let ymd = then(digits(b, i, 4, 4), |e| {
        then(lit(b, e, "-"), |e| {
            then(digits(b, e, 2, 2), |e| {
                then(lit(b, e, "-"), |e| digits(b, e, 2, 2))
            })
        })
    });
    then(ymd, |e0| {
        let mut sep = lit(b, e0, "T");
        sep.extend(lit(b, e0, " "));
        let hm = then(sep, |e| {
            then(digits(b, e, 2, 2), |e| {
                then(lit(b, e, ":"), |e| digits(b, e, 2, 2))
            })
        });
        let timed = then(hm, |e| {
            let secs = then(lit(b, e, ":"), |e| {
                then(digits(b, e, 2, 2), |e| {
                    optional(e, then(lit(b, e, "."), |e| digits(b, e, 1, usize::MAX)))
                })
            });
            then(optional(e, secs), |e| {
                let mut tz = lit(b, e, "Z");
                for sign in ["+", "-"] {
                    tz.extend(then(lit(b, e, sign), |e| {
                        then(digits(b, e, 2, 2), |e| {
                            then(lit(b, e, ":"), |e| digits(b, e, 2, 2))
                        })
                    }));
                }
                optional(e, tz)
            })
        });
        optional(e0, timed)
    })
}

fn month_first(b: &[u8], i: usize) -> Vec<usize> {
    then(month_dot(b, i), |e| {
        then(lit(b, e, " "), |e| {
            then(digits(b, e, 1, 2), |e| {
                then(lit(b, e, ", "), |e| digits(b, e, 4, 4))
            })
        })
    })
}

fn day_first(b: &[u8], i: usize) -> Vec<usize> {
    then(digits(b, i, 1, 2), |e| {
        then(lit(b, e, " "), |e| {
            then(month_dot(b, e), |e| {
                then(lit(b, e, " "), |e| digits(b, e, 4, 4))
            })
        })
    })
}

fn slashed(b: &[u8], i: usize) -> Vec<usize> {
    then(digits(b, i, 1, 2), |e| {
        then(lit(b, e, "/"), |e| {
            then(digits(b, e, 1, 2), |e| {
                then(lit(b, e, "/"), |e| digits(b, e, 4, 4))
            })
        })
    })
}

fn is_word(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn boundary(s: &str, i: usize) -> bool {
    let before = s[..i].chars().next_back().is_some_and(is_word);
    let after = s[i..].chars().next().is_some_and(is_word);
    before != after
}

fn real_iso_day(text: &str) -> bool {
    let n = |r: std::ops::Range<usize>| text[r].parse::<i64>().unwrap_or(0);
    valid_ymd(n(0..4), n(5..7), n(8..10))
}

/// Date substrings in order; impossible ISO days are consumed but dropped.
pub fn scan_dates(s: &str) -> Vec<String> {
    let b = s.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < s.len() {
        if boundary(s, i) {
            let alternatives: [(bool, Vec<usize>); 4] = [
                (true, iso(b, i)),
                (false, month_first(b, i)),
                (false, day_first(b, i)),
                (false, slashed(b, i)),
            ];
            let hit = alternatives.into_iter().find_map(|(is_iso, ends)| {
                ends.into_iter()
                    .find(|e| s.is_char_boundary(*e) && boundary(s, *e))
                    .map(|e| (is_iso, e))
            });
            if let Some((is_iso, end)) = hit {
                let text = &s[i..end];
                if !is_iso || real_iso_day(text) {
                    out.push(text.to_string());
                }
                i = end;
                continue;
            }
        }
        i += s[i..].chars().next().map_or(1, char::len_utf8);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formats() {
        assert_eq!(
            scan_dates("on Mar 14, 2025 or 14 March 2025 or 3/14/2025 or 2025-03-14"),
            ["Mar 14, 2025", "14 March 2025", "3/14/2025", "2025-03-14"]
        );
        assert_eq!(scan_dates("at 2025-03-14T09:30:00.250+02:00."), ["2025-03-14T09:30:00.250+02:00"]);
        assert!(scan_dates("code 2025-13-45 and 12025-01-01x").is_empty());
        assert_eq!(scan_dates("2025-01-01T10:00:00.5x"), ["2025-01-01T10:00:00"]);
        assert_eq!(scan_dates("Sept. 3, 2024"), ["Sept. 3, 2024"]);
    }
}
