use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::model::{Manifest, OperatorSpec, OperatorType, ParamValue};
use super::validate::{validate, Diagnostic};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepDescription {
    pub ordinal: usize,
    pub operator_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("manifest has {} validation problem(s)", diagnostics.len())]
pub struct InvalidManifest {
    pub diagnostics: Vec<Diagnostic>,
}

/// One plain-language sentence per pipeline step, in pipeline order.
pub fn describe(m: &Manifest) -> Result<Vec<StepDescription>, InvalidManifest> {
    let diagnostics = validate(m);
    if !diagnostics.is_empty() {
        return Err(InvalidManifest { diagnostics });
    }
    Ok(m.stages()
        .enumerate()
        .map(|(i, op)| StepDescription {
            ordinal: i + 1,
            operator_id: op.id.clone(),
            text: sentence(op),
        })
        .collect())
}

fn fields(op: &OperatorSpec) -> String {
    match op.param("field") {
        Some(ParamValue::List(items)) => {
            let names: Vec<String> = items.iter().map(plain).collect();
            join_words(&names, "and")
        }
        Some(v) => plain(v),
        None => "the record".into(),
    }
}

fn plain(v: &ParamValue) -> String {
    match v {
        ParamValue::Str(s) => format!("\"{s}\""),
        ParamValue::Num(n) => n.to_string(),
        ParamValue::List(items) => {
            let parts: Vec<String> = items.iter().map(plain).collect();
            format!("[{}]", parts.join(", "))
        }
        ParamValue::Now => "the current time".into(),
    }
}

fn join_words(items: &[String], conj: &str) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} {conj} {last}", init.join(", ")),
    }
}

fn sentence(op: &OperatorSpec) -> String {
    let s = |key: &str| op.str_param(key).unwrap_or("").to_string();
    match op.op_type {
        OperatorType::Pull => match op.str_param("query") {
            Some(q) => format!(
                "Pull data from {} using the query `{}`.",
                s("resourceType"),
                q.split_whitespace().collect::<Vec<_>>().join(" ")
            ),
            None => format!("Pull data from {}.", s("resourceType")),
        },
        OperatorType::Receive => format!("Receive action requests sent by {}.", s("source")),
        OperatorType::Filter => {
            let several = matches!(op.param("field"), Some(ParamValue::List(l)) if l.len() > 1);
            let quantifier = if several {
                if op.str_param("requirement") == Some("all") {
                    "all of "
                } else {
                    "any of "
                }
            } else {
                ""
            };
            let target = op.param("targetValue").map(plain).unwrap_or_default();
            let condition = match op.str_param("operation").unwrap_or("") {
                "match" => match op.str_param("pattern") {
                    Some(p) => format!("matches the pattern \"{p}\""),
                    None => format!("equals {target}"),
                },
                "=" => format!("equals {target}"),
                "!=" => format!("does not equal {target}"),
                ">" => format!("is later or greater than {target}"),
                ">=" => format!("is at or after {target}"),
                "<" => format!("is earlier or less than {target}"),
                "<=" => format!("is at or before {target}"),
                other => format!("satisfies `{other}` {target}"),
            };
            format!(
                "Keep only records where {quantifier}{} {condition}; drop everything else.",
                fields(op)
            )
        }
        OperatorType::Select => match op.param("field") {
            Some(ParamValue::List(_)) => {
                format!("Select only the fields {} from each record.", fields(op))
            }
            _ => format!("Select the {} field, one record per item.", fields(op)),
        },
        OperatorType::Extract => match op.str_param("operation") {
            Some("date") => format!("Extract only the dates found in {}.", fields(op)),
            _ => format!(
                "Extract only the text matching the pattern \"{}\" from {}.",
                s("pattern"),
                fields(op)
            ),
        },
        OperatorType::Limit => format!(
            "Keep at most {} record(s).",
            op.num_param("count").unwrap_or_default()
        ),
        OperatorType::Aggregate => {
            let what = match op.str_param("operation").unwrap_or("count") {
                "count" => "the number of records".to_string(),
                "sum" => format!("the sum of {}", fields(op)),
                "avg" => format!("the average of {}", fields(op)),
                "min" => format!("the minimum of {}", fields(op)),
                "max" => format!("the maximum of {}", fields(op)),
                other => format!("`{other}` of {}", fields(op)),
            };
            match op.str_param("groupKey") {
                Some(g) => format!("Compute {what} for each \"{g}\" group; release only the totals."),
                None => format!("Compute {what}; release only the total."),
            }
        }
        OperatorType::Map => match op.str_param("operation").unwrap_or("") {
            "bucket" => format!(
                "Replace {} with its range among {}.",
                fields(op),
                op.param("buckets").map(plain).unwrap_or_default()
            ),
            "lowercase" => format!("Convert {} to lowercase.", fields(op)),
            "truncate" => format!(
                "Shorten {} to its first {} characters.",
                fields(op),
                op.num_param("length").unwrap_or_default()
            ),
            "rename" => format!("Rename {} to \"{}\".", fields(op), s("to")),
            other => format!("Apply `{other}` to {}.", fields(op)),
        },
        OperatorType::Anonymize => {
            let how = match op.str_param("method").unwrap_or("") {
                "hash" => "a one-way hash".to_string(),
                "redact" => "\"[REDACTED]\"".to_string(),
                "noise" => format!(
                    "a value with random noise of up to ±{}",
                    op.num_param("magnitude").unwrap_or_default()
                ),
                other => format!("`{other}`"),
            };
            format!("Anonymize {} by replacing it with {how}.", fields(op))
        }
        OperatorType::Post => format!("Send the results to {}.", s("destination")),
        OperatorType::Write => format!(
            "Perform the \"{}\" action on {} for requests that passed the previous steps.",
            s("action"),
            s("resourceType")
        ),
        OperatorType::Inject => {
            let every = op.num_param("interval").unwrap_or_default();
            match op.num_param("repeatNum") {
                Some(n) => format!("Run the pipeline every {every} seconds, {n} time(s)."),
                None => format!("Run the pipeline every {every} seconds."),
            }
        }
        OperatorType::Debug => "Print the data at this step for debugging.".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::examples::{NOTABILITY, UBER, ZOOM};
    use crate::manifest::parse;

    #[test]
    fn uber_has_five_steps_with_flight_match() {
        let steps = describe(&parse(UBER).unwrap()).unwrap();
        assert_eq!(steps.len(), 5);
        let third = steps[2].text.to_lowercase();
        assert!(third.contains("match") && third.contains("flight"), "{third}");
        assert_eq!(steps.iter().map(|s| s.ordinal).collect::<Vec<_>>(), [1, 2, 3, 4, 5]);
    }

    #[test]
    fn notability_restricts_parents() {
        let steps = describe(&parse(NOTABILITY).unwrap()).unwrap();
        assert_eq!(steps.len(), 3);
        assert!(steps[1].text.contains("parents") && steps[1].text.contains("folderId"));
    }

    #[test]
    fn zoom_mentions_key_params() {
        let steps = describe(&parse(ZOOM).unwrap()).unwrap();
        assert_eq!(steps.len(), 5);
        assert!(steps[2].text.contains("start.dateTime") && steps[2].text.contains("current time"));
        assert!(steps[3].text.contains("any of"));
        assert!(steps[4].text.contains("www.zoom.us"));
    }

    #[test]
    fn single_debug_and_invalid() {
        let one = parse("TITLE: t\nPIPELINE: D\nD(type: \"Debug\")").unwrap();
        assert_eq!(describe(&one).unwrap().len(), 1);
        let bad = parse("TITLE: t\nPIPELINE: D -> E\nD(type: \"Limit\", count: 1)\nE(type: \"Debug\")").unwrap();
        assert!(describe(&bad).is_err());
    }
}
