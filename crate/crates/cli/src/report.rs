//! Summary text and machine JSON for one or more task sections.

use serde::Serialize;
use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Self {
        if ok { Verdict::Pass } else { Verdict::Fail }
    }
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
        }
    }
}

/// One scenario's results. Entries keep their insertion order.
#[derive(Debug, Clone)]
pub struct Section {
    pub name: String,
    pub task: String,
    pub verdict: Verdict,
    pub entries: Vec<(String, Value)>,
}

impl Section {
    pub fn new(name: &str, task: &str) -> Self {
        Self { name: name.into(), task: task.into(), verdict: Verdict::Pass, entries: Vec::new() }
    }

    pub fn push(&mut self, key: &str, value: impl Into<Value>) -> &mut Self {
        self.entries.push((key.into(), value.into()));
        self
    }

    pub fn to_json(&self) -> Value {
        let mut values = Map::new();
        for (k, v) in &self.entries {
            values.insert(k.clone(), round_value(v));
        }
        let mut m = Map::new();
        m.insert("name".into(), self.name.clone().into());
        m.insert("task".into(), self.task.clone().into());
        m.insert("verdict".into(), self.verdict.as_str().into());
        m.insert("values".into(), Value::Object(values));
        Value::Object(m)
    }
}

/// Rounds to 6 significant digits; non-finite values become strings.
pub fn sig6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.5e}").parse().expect("formatted float parses")
}

pub fn fmt6(x: f64) -> String {
    let a = x.abs();
    if !x.is_finite() || x == 0.0 || (1e-4..1e7).contains(&a) {
        return format!("{}", sig6(x));
    }
    let s = format!("{x:.5e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent form");
    let mantissa = mantissa.trim_end_matches('0').trim_end_matches('.');
    format!("{mantissa}e{exp}")
}

fn round_value(v: &Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("f64 number");
            serde_json::Number::from_f64(sig6(x)).map(Value::Number).unwrap_or(Value::Null)
        }
        Value::Array(a) => Value::Array(a.iter().map(round_value).collect()),
        Value::Object(o) => Value::Object(o.iter().map(|(k, v)| (k.clone(), round_value(v))).collect()),
        other => other.clone(),
    }
}

/// Float fields that may be infinite or NaN go through here.
pub fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map(Value::Number).unwrap_or_else(|| Value::String(format!("{x}")))
}

fn render(v: &Value) -> String {
    match v {
        Value::Number(n) => match n.as_f64() {
            Some(x) if n.is_f64() => fmt6(x),
            _ => n.to_string(),
        },
        Value::String(s) => s.clone(),
        Value::Array(a) => format!("[{}]", a.iter().map(render).collect::<Vec<_>>().join(", ")),
        other => other.to_string(),
    }
}

/// Human summary and machine JSON, sections in the given order.
pub fn emit_report(sections: &[Section]) -> (String, Value) {
    let mut text = String::new();
    for s in sections {
        text.push_str(&format!("[{}] task={} verdict={}\n", s.name, s.task, s.verdict.as_str()));
        for (k, v) in &s.entries {
            text.push_str(&format!("  {k} = {}\n", render(v)));
        }
    }
    let overall = Verdict::from_bool(sections.iter().all(|s| s.verdict == Verdict::Pass));
    let json = serde_json::json!({
        "verdict": overall.as_str(),
        "sections": sections.iter().map(Section::to_json).collect::<Vec<_>>(),
    });
    (text, json)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_report_is_valid() {
        let (text, json) = emit_report(&[]);
        assert!(text.is_empty());
        assert_eq!(json["sections"], Value::Array(vec![]));
        assert_eq!(json["verdict"], "pass");
    }

    #[test]
    fn six_significant_digits() {
        assert_eq!(fmt6(std::f64::consts::PI), "3.14159");
        assert_eq!(fmt6(1234567.0), "1234570");
        assert_eq!(fmt6(0.000123456789), "0.000123457");
        assert_eq!(fmt6(3.0608e-10), "3.0608e-10");
        assert_eq!(fmt6(-2.5e12), "-2.5e12");
        assert_eq!(fmt6(f64::INFINITY), "inf");
    }

    #[test]
    fn sections_keep_declaration_order() {
        let secs: Vec<Section> = ["c", "a", "b"].iter().map(|n| Section::new(n, "solve")).collect();
        let (text, json) = emit_report(&secs);
        let names: Vec<&str> = json["sections"].as_array().unwrap().iter().map(|s| s["name"].as_str().unwrap()).collect();
        assert_eq!(names, ["c", "a", "b"]);
        assert_eq!(text.lines().filter(|l| l.starts_with('[')).count(), 3);
    }

    #[test]
    fn json_values_are_rounded() {
        let mut s = Section::new("x", "hardy");
        s.push("c", 0.123456789);
        let (_, json) = emit_report(&[s]);
        assert_eq!(json["sections"][0]["values"]["c"], 0.123457);
    }
}
