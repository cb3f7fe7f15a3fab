use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{RuleSet, Slot, K};
use crate::error::{Error, Result};
use crate::rpm::Attribute;

pub const CHECKPOINT_VERSION: u32 = 1;

/// A rule set together with the codebook seeds it was trained against.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub rules: RuleSet,
    pub codebook_seeds: BTreeMap<Attribute, u64>,
}

#[derive(Serialize, Deserialize)]
struct Wire {
    version: u32,
    #[serde(rename = "R")]
    r: usize,
    #[serde(rename = "T")]
    t: usize,
    #[serde(rename = "K")]
    k: usize,
    basis: Vec<String>,
    logits: Vec<Vec<Vec<f64>>>,
    frozen: Vec<bool>,
    codebook_seeds: BTreeMap<Attribute, u64>,
}

fn load_err(field: &str, message: impl Into<String>) -> Error {
    Error::Load { field: field.into(), message: message.into() }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let rs = &ckpt.rules;
    let wire = Wire {
        version: CHECKPOINT_VERSION,
        r: rs.rules(),
        t: rs.terms(),
        k: K,
        basis: Slot::ALL.iter().map(|s| s.name().to_string()).collect(),
        logits: rs.logits().chunks(rs.terms() * K).map(|rule| rule.chunks(K).map(<[f64]>::to_vec).collect()).collect(),
        frozen: rs.frozen().to_vec(),
        codebook_seeds: ckpt.codebook_seeds.clone(),
    };
    // serde_json prints the shortest representation that parses back to the same f64
    std::fs::write(path, serde_json::to_string_pretty(&wire)? + "\n")?;
    Ok(())
}

/// Loads a checkpoint. With `terms` set, a checkpoint of another template size is rejected.
pub fn load_checkpoint(path: impl AsRef<Path>, terms: Option<usize>) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)?;
    let wire: Wire = serde_json::from_str(&text).map_err(|e| load_err("<document>", e.to_string()))?;
    if wire.version != CHECKPOINT_VERSION {
        return Err(load_err("version", format!("expected {CHECKPOINT_VERSION}, found {}", wire.version)));
    }
    if wire.k != K {
        return Err(load_err("K", format!("expected {K}, found {}", wire.k)));
    }
    let basis: Vec<&str> = Slot::ALL.iter().map(|s| s.name()).collect();
    if wire.basis != basis {
        return Err(load_err("basis", format!("expected {basis:?}, found {:?}", wire.basis)));
    }
    if let Some(t) = terms {
        if wire.t != t {
            return Err(load_err("T", format!("run expects {t} terms, checkpoint has {}", wire.t)));
        }
    }
    if wire.logits.len() != wire.r {
        return Err(load_err("logits", format!("{} rules listed, R = {}", wire.logits.len(), wire.r)));
    }
    let mut logits = Vec::with_capacity(wire.r * wire.t * K);
    for (r, rule) in wire.logits.iter().enumerate() {
        if rule.len() != wire.t {
            return Err(load_err("logits", format!("rule {r} has {} terms, T = {}", rule.len(), wire.t)));
        }
        for (t, term) in rule.iter().enumerate() {
            if term.len() != K {
                return Err(load_err("logits", format!("rule {r} term {t} has {} entries, K = {K}", term.len())));
            }
            logits.extend(term);
        }
    }
    if wire.frozen.len() != wire.r {
        return Err(load_err("frozen", format!("{} flags for R = {}", wire.frozen.len(), wire.r)));
    }
    let rules = RuleSet::new(wire.r, wire.t, logits, wire.frozen).map_err(|e| load_err("logits", e.to_string()))?;
    Ok(Checkpoint { rules, codebook_seeds: wire.codebook_seeds })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seeds() -> BTreeMap<Attribute, u64> {
        Attribute::ALL.iter().enumerate().map(|(i, a)| (*a, i as u64 * 7 + 1)).collect()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let mut rules = RuleSet::random(5, 12, 3).unwrap();
        rules.set_frozen(2, true);
        rules.logits_mut()[7] = 1.0 / 3.0;
        let ckpt = Checkpoint { rules, codebook_seeds: seeds() };
        save_checkpoint(&ckpt, &path).unwrap();
        let back = load_checkpoint(&path, Some(12)).unwrap();
        assert_eq!(back, ckpt);
        for (a, b) in back.rules.logits().iter().zip(ckpt.rules.logits()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn template_size_mismatch_names_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("six.json");
        let ckpt = Checkpoint { rules: RuleSet::random(5, 6, 0).unwrap(), codebook_seeds: seeds() };
        save_checkpoint(&ckpt, &path).unwrap();
        match load_checkpoint(&path, Some(12)) {
            Err(Error::Load { field, .. }) => assert_eq!(field, "T"),
            other => panic!("expected load error, got {other:?}"),
        }
        assert_eq!(load_checkpoint(&path, Some(6)).unwrap(), ckpt);
    }

    #[test]
    fn version_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.json");
        let ckpt = Checkpoint { rules: RuleSet::random(1, 2, 0).unwrap(), codebook_seeds: seeds() };
        save_checkpoint(&ckpt, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap().replace("\"version\": 1", "\"version\": 2");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(load_checkpoint(&path, None), Err(Error::Load { field, .. }) if field == "version"));
    }
}
