use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{Assignment, Attribute, Candidate, Component, Constellation, Grid, Puzzle, RuleDescriptor, RuleFamily, Shift, Sign};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct WireRule {
    family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    param: Option<Value>,
}

#[derive(Serialize, Deserialize)]
struct WireComponent {
    attributes: BTreeMap<Attribute, Grid>,
    rules: BTreeMap<Attribute, WireRule>,
}

#[derive(Serialize, Deserialize)]
struct WirePuzzle {
    constellation: String,
    components: Vec<WireComponent>,
    candidates: Vec<Map<String, Value>>,
    answer_index: usize,
    seed: u64,
}

fn rule_to_wire(r: &RuleDescriptor) -> WireRule {
    let param = match *r {
        RuleDescriptor::Constant => None,
        RuleDescriptor::Progression { step } => Some(Value::from(step)),
        RuleDescriptor::Arithmetic { sign } => Some(Value::from(match sign {
            Sign::Plus => "plus",
            Sign::Minus => "minus",
        })),
        RuleDescriptor::DistributeThree { shift } => Some(Value::from(match shift {
            Shift::Left => "left",
            Shift::Right => "right",
        })),
    };
    WireRule { family: r.family().name().to_string(), param }
}

fn rule_from_wire(w: &WireRule) -> std::result::Result<RuleDescriptor, String> {
    let family: RuleFamily = w.family.parse().map_err(|e: Error| e.to_string())?;
    let p = w.param.as_ref();
    let bad = || format!("bad param {p:?} for {family}");
    Ok(match family {
        RuleFamily::Constant => RuleDescriptor::Constant,
        RuleFamily::Progression => RuleDescriptor::Progression { step: p.and_then(Value::as_i64).ok_or_else(bad)? },
        RuleFamily::Arithmetic => RuleDescriptor::Arithmetic {
            sign: match p.and_then(Value::as_str) {
                Some("plus") => Sign::Plus,
                Some("minus") => Sign::Minus,
                _ => return Err(bad()),
            },
        },
        RuleFamily::DistributeThree => RuleDescriptor::DistributeThree {
            shift: match p.and_then(Value::as_str) {
                Some("left") => Shift::Left,
                Some("right") => Shift::Right,
                _ => return Err(bad()),
            },
        },
    })
}

/// Single-component candidates use bare attribute keys; otherwise keys are `"<component>.<attribute>"`.
fn candidate_to_wire(c: &Candidate) -> Map<String, Value> {
    let multi = c.components.len() > 1;
    let mut m = Map::new();
    for (ci, a) in c.components.iter().enumerate() {
        for (attr, v) in a {
            let key = if multi { format!("{ci}.{attr}") } else { attr.to_string() };
            m.insert(key, Value::from(*v));
        }
    }
    m
}

fn candidate_from_wire(m: &Map<String, Value>, n: usize) -> std::result::Result<Candidate, String> {
    let mut components = vec![Assignment::new(); n];
    for (key, v) in m {
        let (ci, name) = match key.split_once('.') {
            Some((i, name)) if n > 1 => (i.parse::<usize>().map_err(|_| format!("bad key `{key}`"))?, name),
            None if n == 1 => (0, key.as_str()),
            _ => return Err(format!("bad candidate key `{key}`")),
        };
        let attr: Attribute = name.parse().map_err(|e: Error| e.to_string())?;
        let v = v.as_i64().ok_or_else(|| format!("non-integer value for `{key}`"))?;
        components.get_mut(ci).ok_or_else(|| format!("component index out of range in `{key}`"))?.insert(attr, v);
    }
    Ok(Candidate { components })
}

fn to_wire(p: &Puzzle) -> WirePuzzle {
    WirePuzzle {
        constellation: p.constellation.name().to_string(),
        components: p
            .components
            .iter()
            .map(|c| WireComponent {
                attributes: c.grids.clone(),
                rules: c.rules.iter().map(|(a, r)| (*a, rule_to_wire(r))).collect(),
            })
            .collect(),
        candidates: p.candidates.iter().map(candidate_to_wire).collect(),
        answer_index: p.answer_index,
        seed: p.seed,
    }
}

fn from_wire(w: WirePuzzle) -> std::result::Result<Puzzle, String> {
    let constellation: Constellation = w.constellation.parse().map_err(|e: Error| e.to_string())?;
    let layouts = constellation.layouts();
    if layouts.len() != w.components.len() {
        return Err(format!("{constellation} needs {} components, got {}", layouts.len(), w.components.len()));
    }
    let components = layouts
        .into_iter()
        .zip(w.components)
        .map(|(layout, c)| {
            let rules = c.rules.iter().map(|(a, r)| Ok((*a, rule_from_wire(r)?))).collect::<std::result::Result<_, String>>()?;
            Ok(Component { layout, grids: c.attributes, rules })
        })
        .collect::<std::result::Result<Vec<_>, String>>()?;
    let n = components.len();
    let candidates = w.candidates.iter().map(|m| candidate_from_wire(m, n)).collect::<std::result::Result<Vec<_>, _>>()?;
    if w.answer_index >= candidates.len() {
        return Err(format!("answer_index {} out of range", w.answer_index));
    }
    Ok(Puzzle { constellation, components, candidates, answer_index: w.answer_index, seed: w.seed })
}

/// One JSON object per line, newline-terminated.
pub fn write_jsonl(puzzles: &[Puzzle], path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for p in puzzles {
        serde_json::to_writer(&mut out, &to_wire(p))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Blank lines are skipped; a malformed line fails with its 1-based number.
pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<Puzzle>> {
    let reader = BufReader::new(File::open(path)?);
    let mut puzzles = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse { line: i + 1, message };
        let wire: WirePuzzle = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        puzzles.push(from_wire(wire).map_err(parse_err)?);
    }
    Ok(puzzles)
}
