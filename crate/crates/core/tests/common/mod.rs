use chrono::{DateTime, Utc};
use hub_core::manifest::{OperatorSpec, OperatorType, ParamValue};
use hub_oracle::{Case, Param};

pub fn param(p: &Param) -> ParamValue {
    match p {
        Param::Str(s) => ParamValue::Str(s.clone()),
        Param::Num(n) => ParamValue::Num(*n),
        Param::List(items) => ParamValue::List(items.iter().map(param).collect()),
        Param::Now => ParamValue::Now,
    }
}

pub fn spec(case: &Case) -> OperatorSpec {
    let ty: OperatorType = case.op_type().parse().unwrap();
    case.params()
        .iter()
        .fold(OperatorSpec::new("Op", ty), |s, (k, v)| s.with(k, param(v)))
}

#[allow(dead_code)]
pub fn instant(t: DateTime<Utc>) -> (i64, u32) {
    (t.timestamp(), t.timestamp_subsec_nanos())
}
