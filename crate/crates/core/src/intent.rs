//! Intent gateway: turns templated operator intents into goal vectors,
//! keeps the static rule store and the dynamic KPI store, and validates
//! goals before they reach the orchestrator.
//!
//! Accepted forms (keywords are case-insensitive):
//!
//! ```text
//! <SLICE> <KPI> (<= | >=) <value> [<unit>]
//! increase <SLICE> <KPI> by <pct>%
//! reduce   <SLICE> <KPI> by <pct>%
//! ```
//!
//! Static rule files hold one rule per line, `#` starts a comment:
//!
//! ```text
//! <id>|<SLICE>|<KPI>|<threshold in SI units>|<free text>
//! ```

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::SliceKpis;
use crate::sla::{Intent, SliceKind, SliceSla};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("intent parse error at {position}: {kind}")]
pub struct ParseError {
    /// Byte offset into the input.
    pub position: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("empty intent")]
    Empty,
    #[error("unknown slice {0:?}")]
    UnknownSlice(String),
    #[error("unknown KPI {0:?}")]
    UnknownKpi(String),
    #[error("unknown unit {0:?}")]
    UnknownUnit(String),
    #[error("unit {unit:?} does not apply to {kpi}")]
    UnitMismatch { unit: String, kpi: String },
    #[error("invalid number {0:?}")]
    InvalidNumber(String),
    #[error("expected {expected}, found {found:?}")]
    Unexpected { expected: &'static str, found: String },
    #[error("expected {0} but the intent ended")]
    UnexpectedEnd(&'static str),
    #[error("unexpected character {0:?}")]
    BadCharacter(char),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Comparator {
    AtMost,
    AtLeast,
}

impl Comparator {
    fn symbol(self) -> &'static str {
        match self {
            Comparator::AtMost => "<=",
            Comparator::AtLeast => ">=",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Unit {
    Seconds,
    Millis,
    Micros,
    Bps,
    Kbps,
    Mbps,
    Gbps,
    Percent,
    /// Bare number (loss ratio).
    Ratio,
}

impl Unit {
    fn parse(word: &str) -> Option<Unit> {
        Some(match word.to_ascii_lowercase().as_str() {
            "s" => Unit::Seconds,
            "ms" => Unit::Millis,
            "us" => Unit::Micros,
            "bps" => Unit::Bps,
            "kbps" => Unit::Kbps,
            "mbps" => Unit::Mbps,
            "gbps" => Unit::Gbps,
            "%" => Unit::Percent,
            _ => return None,
        })
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Unit::Seconds => "s",
            Unit::Millis => "ms",
            Unit::Micros => "us",
            Unit::Bps => "bps",
            Unit::Kbps => "kbps",
            Unit::Mbps => "Mbps",
            Unit::Gbps => "Gbps",
            Unit::Percent => "%",
            Unit::Ratio => "",
        }
    }

    fn scale(self) -> f64 {
        match self {
            Unit::Seconds | Unit::Bps | Unit::Ratio => 1.0,
            Unit::Millis => 1e-3,
            Unit::Micros => 1e-6,
            Unit::Kbps => 1e3,
            Unit::Mbps => 1e6,
            Unit::Gbps => 1e9,
            Unit::Percent => 1e-2,
        }
    }

    fn fits(self, kpi: Intent) -> bool {
        match kpi {
            Intent::Latency => matches!(self, Unit::Seconds | Unit::Millis | Unit::Micros),
            Intent::Throughput | Intent::LongTerm | Intent::Percentile => {
                matches!(self, Unit::Bps | Unit::Kbps | Unit::Mbps | Unit::Gbps)
            }
            Intent::Loss => matches!(self, Unit::Percent | Unit::Ratio),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Margin {
    /// `kpi <cmp> value unit`. The value is kept in the written unit so the
    /// intent renders back losslessly.
    Absolute {
        comparator: Comparator,
        value: f64,
        unit: Unit,
    },
    /// Signed relative change in percent (`increase` positive, `reduce`
    /// negative).
    Relative { percent: f64 },
}

/// `(m_n, delta_n, z_n)`: target KPI, improvement margin, slice of interest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalVector {
    pub kpi: Intent,
    pub margin: Margin,
    pub slice: SliceKind,
}

impl GoalVector {
    /// Absolute margin in SI units, if any.
    pub fn absolute_si(&self) -> Option<f64> {
        match self.margin {
            Margin::Absolute { value, unit, .. } => Some(value * unit.scale()),
            Margin::Relative { .. } => None,
        }
    }
}

fn kpi_name(kpi: Intent) -> &'static str {
    match kpi {
        Intent::Throughput => "throughput",
        Intent::Latency => "latency",
        Intent::Loss => "loss",
        Intent::LongTerm => "long-term",
        Intent::Percentile => "percentile",
    }
}

fn parse_kpi(word: &str) -> Option<Intent> {
    Some(match word.to_ascii_lowercase().as_str() {
        "throughput" => Intent::Throughput,
        "latency" | "delay" => Intent::Latency,
        "loss" => Intent::Loss,
        "long-term" => Intent::LongTerm,
        "percentile" | "5th-percentile" => Intent::Percentile,
        _ => return None,
    })
}

fn parse_slice(word: &str) -> Option<SliceKind> {
    Some(match word.to_ascii_lowercase().as_str() {
        "embb" => SliceKind::Embb,
        "urllc" => SliceKind::Urllc,
        "be" => SliceKind::Be,
        _ => return None,
    })
}

impl fmt::Display for GoalVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.margin {
            Margin::Absolute { comparator, value, unit } => {
                write!(f, "{} {} {} {}", self.slice, kpi_name(self.kpi), comparator.symbol(), value)?;
                match unit {
                    Unit::Ratio => Ok(()),
                    Unit::Percent => f.write_str("%"),
                    u => write!(f, " {}", u.symbol()),
                }
            }
            Margin::Relative { percent } => {
                let verb = if percent >= 0.0 { "increase" } else { "reduce" };
                write!(f, "{verb} {} {} by {}%", self.slice, kpi_name(self.kpi), percent.abs())
            }
        }
    }
}

/// Canonical text of a goal; parsing it yields the same goal.
pub fn render(goal: &GoalVector) -> String {
    goal.to_string()
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Number(String),
    Le,
    Ge,
    Percent,
}

fn tokenize(text: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let mut out = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some(&(pos, c)) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
        } else if c.is_ascii_digit() || c == '.' || (c == '-' && text[pos + 1..].starts_with(|d: char| d.is_ascii_digit() || d == '.')) {
            let mut s = String::new();
            s.push(c);
            chars.next();
            while let Some(&(_, d)) = chars.peek() {
                if d.is_ascii_digit() || d == '.' {
                    s.push(d);
                    chars.next();
                } else {
                    break;
                }
            }
            out.push((pos, Tok::Number(s)));
        } else if c.is_alphabetic() {
            let mut s = String::new();
            while let Some(&(_, d)) = chars.peek() {
                if d.is_alphanumeric() || d == '-' || d == '_' {
                    s.push(d);
                    chars.next();
                } else {
                    break;
                }
            }
            out.push((pos, Tok::Word(s)));
        } else if c == '<' || c == '>' {
            chars.next();
            match chars.peek() {
                Some(&(_, '=')) => {
                    chars.next();
                    out.push((pos, if c == '<' { Tok::Le } else { Tok::Ge }));
                }
                _ => {
                    return Err(ParseError {
                        position: pos,
                        kind: ParseErrorKind::Unexpected {
                            expected: "'<=' or '>='",
                            found: c.to_string(),
                        },
                    })
                }
            }
        } else if c == '≤' || c == '≥' {
            chars.next();
            out.push((pos, if c == '≤' { Tok::Le } else { Tok::Ge }));
        } else if c == '%' {
            chars.next();
            out.push((pos, Tok::Percent));
        } else {
            return Err(ParseError {
                position: pos,
                kind: ParseErrorKind::BadCharacter(c),
            });
        }
    }
    Ok(out)
}

struct Cursor {
    toks: Vec<(usize, Tok)>,
    at: usize,
    end: usize,
}

impl Cursor {
    fn next(&mut self, expected: &'static str) -> Result<(usize, Tok), ParseError> {
        let t = self.toks.get(self.at).cloned().ok_or(ParseError {
            position: self.end,
            kind: ParseErrorKind::UnexpectedEnd(expected),
        })?;
        self.at += 1;
        Ok(t)
    }

    fn peek(&self) -> Option<&(usize, Tok)> {
        self.toks.get(self.at)
    }

    fn word(&mut self, expected: &'static str) -> Result<(usize, String), ParseError> {
        match self.next(expected)? {
            (p, Tok::Word(w)) => Ok((p, w)),
            (p, t) => Err(unexpected(p, expected, &t)),
        }
    }

    fn number(&mut self) -> Result<(usize, f64), ParseError> {
        match self.next("a number")? {
            (p, Tok::Number(s)) => s
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(|v| (p, v))
                .ok_or(ParseError {
                    position: p,
                    kind: ParseErrorKind::InvalidNumber(s),
                }),
            (p, t) => Err(unexpected(p, "a number", &t)),
        }
    }

    fn finish(&self) -> Result<(), ParseError> {
        match self.peek() {
            None => Ok(()),
            Some((p, t)) => Err(unexpected(*p, "end of intent", t)),
        }
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Word(w) | Tok::Number(w) => w.clone(),
        Tok::Le => "<=".into(),
        Tok::Ge => ">=".into(),
        Tok::Percent => "%".into(),
    }
}

fn unexpected(position: usize, expected: &'static str, found: &Tok) -> ParseError {
    ParseError {
        position,
        kind: ParseErrorKind::Unexpected {
            expected,
            found: describe(found),
        },
    }
}

fn slice_kpi(cur: &mut Cursor) -> Result<(SliceKind, Intent), ParseError> {
    let (p, w) = cur.word("a slice")?;
    let slice = parse_slice(&w).ok_or(ParseError {
        position: p,
        kind: ParseErrorKind::UnknownSlice(w),
    })?;
    let (p, w) = cur.word("a KPI")?;
    let kpi = parse_kpi(&w).ok_or(ParseError {
        position: p,
        kind: ParseErrorKind::UnknownKpi(w),
    })?;
    Ok((slice, kpi))
}

pub fn parse_intent(text: &str) -> Result<GoalVector, ParseError> {
    let toks = tokenize(text)?;
    if toks.is_empty() {
        return Err(ParseError {
            position: 0,
            kind: ParseErrorKind::Empty,
        });
    }
    let mut cur = Cursor {
        toks,
        at: 0,
        end: text.len(),
    };
    let verb = match cur.peek() {
        Some((_, Tok::Word(w))) => match w.to_ascii_lowercase().as_str() {
            "increase" => Some(1.0),
            "reduce" => Some(-1.0),
            _ => None,
        },
        _ => None,
    };

    let goal = if let Some(sign) = verb {
        cur.next("a verb")?;
        let (slice, kpi) = slice_kpi(&mut cur)?;
        let (p, by) = cur.word("'by'")?;
        if !by.eq_ignore_ascii_case("by") {
            return Err(unexpected(p, "'by'", &Tok::Word(by)));
        }
        let (_, pct) = cur.number()?;
        match cur.next("'%'")? {
            (_, Tok::Percent) => {}
            (p, t) => return Err(unexpected(p, "'%'", &t)),
        }
        GoalVector {
            kpi,
            slice,
            margin: Margin::Relative { percent: sign * pct },
        }
    } else {
        let (slice, kpi) = slice_kpi(&mut cur)?;
        let comparator = match cur.next("'<=' or '>='")? {
            (_, Tok::Le) => Comparator::AtMost,
            (_, Tok::Ge) => Comparator::AtLeast,
            (p, t) => return Err(unexpected(p, "'<=' or '>='", &t)),
        };
        let (_, value) = cur.number()?;
        let (unit, unit_pos, unit_text) = match cur.peek().cloned() {
            None => (Unit::Ratio, text.len(), String::new()),
            Some((p, Tok::Percent)) => {
                cur.at += 1;
                (Unit::Percent, p, "%".to_string())
            }
            Some((p, Tok::Word(w))) => {
                cur.at += 1;
                let u = Unit::parse(&w).ok_or(ParseError {
                    position: p,
                    kind: ParseErrorKind::UnknownUnit(w.clone()),
                })?;
                (u, p, w)
            }
            Some((p, t)) => return Err(unexpected(p, "a unit", &t)),
        };
        if !unit.fits(kpi) {
            if unit == Unit::Ratio {
                return Err(ParseError {
                    position: unit_pos,
                    kind: ParseErrorKind::UnexpectedEnd("a unit"),
                });
            }
            return Err(ParseError {
                position: unit_pos,
                kind: ParseErrorKind::UnitMismatch {
                    unit: unit_text,
                    kpi: kpi_name(kpi).to_string(),
                },
            });
        }
        GoalVector {
            kpi,
            slice,
            margin: Margin::Absolute { comparator, value, unit },
        }
    };
    cur.finish()?;
    Ok(goal)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticRule {
    pub id: String,
    pub slice: SliceKind,
    pub kpi: Intent,
    pub threshold: f64,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicEntry {
    pub slice: SliceKind,
    pub kpi: Intent,
    pub value: f64,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("rule file line {line}: {message}")]
pub struct RuleFileError {
    pub line: usize,
    pub message: String,
}

/// Static rules `D_s` plus the latest windowed KPIs `D_d(n)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContextStore {
    rules: Vec<StaticRule>,
    dynamic: BTreeMap<(SliceKind, Intent), DynamicEntry>,
}

impl ContextStore {
    pub fn new(rules: Vec<StaticRule>) -> Self {
        let mut rules = rules;
        rules.sort_by(|a, b| a.id.cmp(&b.id));
        Self {
            rules,
            dynamic: BTreeMap::new(),
        }
    }

    /// One rule per SLA threshold.
    pub fn from_slas(slas: &[SliceSla]) -> Self {
        let rules = slas
            .iter()
            .flat_map(|sla| {
                sla.kind.intents().iter().map(move |&i| StaticRule {
                    id: format!("sla-{}-{}", sla.kind.as_str().to_ascii_lowercase(), kpi_name(i)),
                    slice: sla.kind,
                    kpi: i,
                    threshold: sla.threshold(i),
                    text: format!("{} {} target", sla.kind, kpi_name(i)),
                })
            })
            .collect();
        Self::new(rules)
    }

    pub fn parse_rules(text: &str) -> Result<Vec<StaticRule>, RuleFileError> {
        let mut out = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| RuleFileError { line: idx + 1, message };
            let fields: Vec<&str> = line.splitn(5, '|').map(str::trim).collect();
            if fields.len() != 5 {
                return Err(err(format!("expected 5 '|'-separated fields, found {}", fields.len())));
            }
            let slice = parse_slice(fields[1]).ok_or_else(|| err(format!("unknown slice {:?}", fields[1])))?;
            let kpi = parse_kpi(fields[2]).ok_or_else(|| err(format!("unknown KPI {:?}", fields[2])))?;
            let threshold = fields[3]
                .parse::<f64>()
                .map_err(|_| err(format!("bad threshold {:?}", fields[3])))?;
            out.push(StaticRule {
                id: fields[0].to_string(),
                slice,
                kpi,
                threshold,
                text: fields[4].to_string(),
            });
        }
        Ok(out)
    }

    pub fn rules(&self) -> &[StaticRule] {
        &self.rules
    }

    pub fn ingest(&mut self, step: u64, kpis: &SliceKpis) {
        for &kpi in kpis.kind.intents() {
            self.dynamic.insert(
                (kpis.kind, kpi),
                DynamicEntry {
                    slice: kpis.kind,
                    kpi,
                    value: kpis.value(kpi),
                    step,
                },
            );
        }
    }

    pub fn latest(&self, slice: SliceKind, kpi: Intent) -> Option<&DynamicEntry> {
        self.dynamic.get(&(slice, kpi))
    }
}

/// `C = C_s ∪ C_d` for one goal.
#[derive(Debug, Clone, PartialEq)]
pub struct Context {
    pub rules: Vec<StaticRule>,
    pub dynamic: Vec<DynamicEntry>,
    /// No dynamic sample exists for the goal's (slice, KPI).
    pub stale: bool,
}

pub fn retrieve_context(goal: &GoalVector, store: &ContextStore) -> Context {
    let rules = store
        .rules
        .iter()
        .filter(|r| r.slice == goal.slice && r.kpi == goal.kpi)
        .cloned()
        .collect();
    let dynamic: Vec<DynamicEntry> = store
        .dynamic
        .values()
        .filter(|e| e.slice == goal.slice)
        .copied()
        .collect();
    let stale = !dynamic.iter().any(|e| e.kpi == goal.kpi);
    Context { rules, dynamic, stale }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReasonCode {
    Nonphysical,
    ExceedsCap,
    DirectionMismatch,
    UnsupportedKpi,
    UnknownSlice,
}

impl ReasonCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ReasonCode::Nonphysical => "nonphysical",
            ReasonCode::ExceedsCap => "exceeds-cap",
            ReasonCode::DirectionMismatch => "direction-mismatch",
            ReasonCode::UnsupportedKpi => "unsupported-kpi",
            ReasonCode::UnknownSlice => "unknown-slice",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("goal rejected ({}): {detail}", reason.as_str())]
pub struct Rejection {
    pub reason: ReasonCode,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidationLimits {
    /// Largest accepted relative increase, in percent.
    pub max_increase_pct: f64,
}

impl Default for ValidationLimits {
    fn default() -> Self {
        Self { max_increase_pct: 100.0 }
    }
}

/// Target region `C_g`: the KPI must be on the right side of `bound`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetRegion {
    pub slice: SliceKind,
    pub kpi: Intent,
    pub bound: f64,
}

impl TargetRegion {
    pub fn contains(&self, value: f64) -> bool {
        if self.kpi.higher_is_better() {
            value >= self.bound
        } else {
            value <= self.bound
        }
    }

    /// Normalized distance outside the region: `(v - b) / v` when a
    /// lower-is-better KPI overshoots, `(b - v) / b` when a higher-is-better
    /// KPI falls short. Zero inside.
    pub fn residual(&self, value: f64) -> f64 {
        if self.contains(value) {
            return 0.0;
        }
        let r = if self.kpi.higher_is_better() {
            (self.bound - value) / self.bound
        } else {
            (value - self.bound) / value
        };
        if r.is_finite() {
            r.clamp(0.0, 1.0)
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidatedGoal {
    pub goal: GoalVector,
    pub region: TargetRegion,
}

pub fn validate_goal(
    goal: &GoalVector,
    slas: &[SliceSla],
    context: &Context,
    limits: &ValidationLimits,
) -> Result<ValidatedGoal, Rejection> {
    let reject = |reason, detail: String| Err(Rejection { reason, detail });
    let Some(sla) = slas.iter().find(|s| s.kind == goal.slice) else {
        return reject(ReasonCode::UnknownSlice, format!("no {} slice is configured", goal.slice));
    };
    if !goal.slice.intents().contains(&goal.kpi) {
        return reject(
            ReasonCode::UnsupportedKpi,
            format!("{} slices carry no {} intent", goal.slice, kpi_name(goal.kpi)),
        );
    }
    let better_up = goal.kpi.higher_is_better();
    let bound = match goal.margin {
        Margin::Absolute { comparator, .. } => {
            let v = goal.absolute_si().expect("absolute margin");
            if !(v > 0.0) || (goal.kpi == Intent::Loss && v >= 1.0) {
                return reject(ReasonCode::Nonphysical, format!("target {v} is not physical"));
            }
            if (comparator == Comparator::AtLeast) != better_up {
                return reject(
                    ReasonCode::DirectionMismatch,
                    format!("{} targets must use {}", kpi_name(goal.kpi), if better_up { ">=" } else { "<=" }),
                );
            }
            v
        }
        Margin::Relative { percent } => {
            if (percent > 0.0) != better_up {
                return reject(
                    ReasonCode::DirectionMismatch,
                    format!("a {percent}% change worsens {}", kpi_name(goal.kpi)),
                );
            }
            if percent > limits.max_increase_pct {
                return reject(
                    ReasonCode::ExceedsCap,
                    format!("+{percent}% exceeds the {}% cap", limits.max_increase_pct),
                );
            }
            if percent <= -100.0 {
                return reject(ReasonCode::Nonphysical, format!("cannot reduce by {}%", -percent));
            }
            let base = context
                .dynamic
                .iter()
                .find(|e| e.kpi == goal.kpi)
                .map(|e| e.value)
                .filter(|v| *v > 0.0)
                .unwrap_or_else(|| sla.threshold(goal.kpi));
            base * (1.0 + percent / 100.0)
        }
    };
    Ok(ValidatedGoal {
        goal: *goal,
        region: TargetRegion {
            slice: goal.slice,
            kpi: goal.kpi,
            bound,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn templated_intents_parse() {
        let g = parse_intent("URLLC latency <= 2 ms").unwrap();
        assert_eq!(g.slice, SliceKind::Urllc);
        assert_eq!(g.kpi, Intent::Latency);
        assert_eq!(
            g.margin,
            Margin::Absolute {
                comparator: Comparator::AtMost,
                value: 2.0,
                unit: Unit::Millis
            }
        );
        assert!((g.absolute_si().unwrap() - 2e-3).abs() < 1e-18);

        let g = parse_intent("increase eMBB throughput by 10%").unwrap();
        assert_eq!(g.slice, SliceKind::Embb);
        assert_eq!(g.kpi, Intent::Throughput);
        assert_eq!(g.margin, Margin::Relative { percent: 10.0 });

        let g = parse_intent("reduce urllc latency by 25 %").unwrap();
        assert_eq!(g.margin, Margin::Relative { percent: -25.0 });
    }

    #[test]
    fn unknown_slice_is_positioned() {
        let err = parse_intent("XR jitter <= 1 ms").unwrap_err();
        assert_eq!(err.position, 0);
        assert_eq!(err.kind, ParseErrorKind::UnknownSlice("XR".into()));
        let err = parse_intent("URLLC jitter <= 1 ms").unwrap_err();
        assert_eq!(err.position, 6);
        assert!(matches!(err.kind, ParseErrorKind::UnknownKpi(_)));
    }

    #[test]
    fn malformed_intents_are_rejected() {
        for bad in [
            "",
            "URLLC latency <= 2",
            "URLLC latency <= 2 Mbps",
            "URLLC latency <= 2 ms extra",
            "increase eMBB throughput 10%",
            "increase eMBB throughput by 10",
            "URLLC latency < 2 ms",
            "eMBB throughput >= 1.2.3 Mbps",
            "URLLC latency <= 2 fortnights",
        ] {
            assert!(parse_intent(bad).is_err(), "{bad:?} parsed");
        }
    }

    fn ctx() -> Context {
        Context {
            rules: vec![],
            dynamic: vec![],
            stale: true,
        }
    }

    fn slas() -> Vec<SliceSla> {
        vec![SliceSla::embb(), SliceSla::urllc(), SliceSla::be()]
    }

    #[test]
    fn validation_examples() {
        let lim = ValidationLimits::default();
        let ok = validate_goal(&parse_intent("URLLC latency <= 2 ms").unwrap(), &slas(), &ctx(), &lim).unwrap();
        assert!((ok.region.bound - 2e-3).abs() < 1e-15);

        let neg = validate_goal(&parse_intent("URLLC latency <= -1 ms").unwrap(), &slas(), &ctx(), &lim);
        assert_eq!(neg.unwrap_err().reason, ReasonCode::Nonphysical);

        let big = validate_goal(&parse_intent("increase eMBB throughput by 500%").unwrap(), &slas(), &ctx(), &lim);
        assert_eq!(big.unwrap_err().reason, ReasonCode::ExceedsCap);

        let dir = validate_goal(&parse_intent("eMBB throughput <= 5 Mbps").unwrap(), &slas(), &ctx(), &lim);
        assert_eq!(dir.unwrap_err().reason, ReasonCode::DirectionMismatch);

        let kpi = validate_goal(&parse_intent("BE latency <= 5 ms").unwrap(), &slas(), &ctx(), &lim);
        assert_eq!(kpi.unwrap_err().reason, ReasonCode::UnsupportedKpi);
    }

    #[test]
    fn relative_goals_use_latest_kpi() {
        let mut store = ContextStore::from_slas(&slas());
        store.ingest(
            42,
            &SliceKpis {
                throughput_bps: 100e6,
                ..SliceKpis::empty(SliceKind::Embb)
            },
        );
        let g = parse_intent("increase eMBB throughput by 10%").unwrap();
        let c = retrieve_context(&g, &store);
        assert!(!c.stale);
        let v = validate_goal(&g, &slas(), &c, &ValidationLimits::default()).unwrap();
        assert!((v.region.bound - 110e6).abs() < 1e-3);
    }

    #[test]
    fn retrieval_examples() {
        let mut store = ContextStore::from_slas(&slas());
        let g = parse_intent("URLLC latency <= 2 ms").unwrap();
        let c = retrieve_context(&g, &store);
        assert_eq!(c.rules.len(), 1);
        assert_eq!(c.rules[0].threshold, 2e-3);
        assert!(c.dynamic.is_empty() && c.stale);

        store.ingest(
            7,
            &SliceKpis {
                latency_s: 1.5e-3,
                ..SliceKpis::empty(SliceKind::Urllc)
            },
        );
        store.ingest(7, &SliceKpis::empty(SliceKind::Embb));
        let c = retrieve_context(&g, &store);
        assert!(!c.stale);
        assert!(c.dynamic.iter().all(|e| e.slice == SliceKind::Urllc));
        let lat = c.dynamic.iter().find(|e| e.kpi == Intent::Latency).unwrap();
        assert_eq!((lat.value, lat.step), (1.5e-3, 7));
    }

    #[test]
    fn matching_rules_are_ordered_by_id() {
        let rules = ContextStore::parse_rules(
            "# id|slice|kpi|threshold|text\n\
             r9|URLLC|latency|0.002|3GPP URLLC budget\n\
             r1|URLLC|latency|0.001|operator policy\n\
             r5|eMBB|throughput|150e6|aggregate target\n",
        )
        .unwrap();
        let store = ContextStore::new(rules);
        let c = retrieve_context(&parse_intent("URLLC latency <= 2 ms").unwrap(), &store);
        let ids: Vec<&str> = c.rules.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, vec!["r1", "r9"]);
    }

    #[test]
    fn bad_rule_lines_report_line_numbers() {
        let err = ContextStore::parse_rules("ok|URLLC|latency|0.002|x\nbroken line\n").unwrap_err();
        assert_eq!(err.line, 2);
    }

    #[test]
    fn target_region_residuals() {
        let lat = TargetRegion {
            slice: SliceKind::Urllc,
            kpi: Intent::Latency,
            bound: 2e-3,
        };
        assert!(lat.contains(2e-3));
        assert!((lat.residual(4e-3) - 0.5).abs() < 1e-12);
        let thr = TargetRegion {
            slice: SliceKind::Embb,
            kpi: Intent::Throughput,
            bound: 150e6,
        };
        assert!((thr.residual(75e6) - 0.5).abs() < 1e-12);
    }

    fn arb_goal() -> impl Strategy<Value = GoalVector> {
        let slice = prop_oneof![Just(SliceKind::Embb), Just(SliceKind::Urllc), Just(SliceKind::Be)];
        let abs = (
            prop_oneof![
                (Just(Intent::Latency), prop_oneof![Just(Unit::Millis), Just(Unit::Micros), Just(Unit::Seconds)]),
                (Just(Intent::Throughput), prop_oneof![Just(Unit::Mbps), Just(Unit::Kbps), Just(Unit::Gbps), Just(Unit::Bps)]),
                (Just(Intent::Percentile), Just(Unit::Mbps)),
                (Just(Intent::Loss), prop_oneof![Just(Unit::Percent), Just(Unit::Ratio)]),
            ],
            prop_oneof![Just(Comparator::AtMost), Just(Comparator::AtLeast)],
            0.0f64..1e4,
        )
            .prop_map(|((kpi, unit), comparator, value)| (kpi, Margin::Absolute { comparator, value, unit }));
        let rel = (
            prop_oneof![Just(Intent::Latency), Just(Intent::Throughput), Just(Intent::LongTerm)],
            -99.0f64..500.0,
        )
            .prop_map(|(kpi, percent)| (kpi, Margin::Relative { percent }));
        (slice, prop_oneof![abs, rel]).prop_map(|(slice, (kpi, margin))| GoalVector { kpi, margin, slice })
    }

    proptest! {
        #[test]
        fn render_parse_round_trip(g in arb_goal()) {
            let text = render(&g);
            let back = parse_intent(&text).unwrap();
            prop_assert_eq!(back, g);
            prop_assert_eq!(render(&back), text);
        }

        #[test]
        fn parser_is_total(text in "[ -~]{0,40}") {
            // Either a goal or a positioned error, never a panic.
            if let Err(e) = parse_intent(&text) {
                prop_assert!(e.position <= text.len());
            }
        }
    }
}
