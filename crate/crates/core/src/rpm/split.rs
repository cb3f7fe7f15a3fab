use std::collections::BTreeSet;

use super::{Attribute, Puzzle, RuleFamily};
use crate::error::{Error, Result};

/// Held-out (attribute, rule family) pairs for out-of-distribution evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OodSplit {
    held_out: BTreeSet<(Attribute, RuleFamily)>,
}

impl OodSplit {
    pub fn held_out(&self) -> &BTreeSet<(Attribute, RuleFamily)> {
        &self.held_out
    }

    fn touches(&self, p: &Puzzle) -> bool {
        p.rule_pairs().iter().any(|pair| self.held_out.contains(pair))
    }

    /// Accepts puzzles that contain no held-out pair.
    pub fn train(&self, p: &Puzzle) -> bool {
        !self.touches(p)
    }

    /// Accepts puzzles where some attribute follows a held-out rule.
    pub fn test(&self, p: &Puzzle) -> bool {
        self.touches(p)
    }
}

/// Every rule-attribute pair a center puzzle can carry (type has no arithmetic).
pub fn holdout_pairs() -> Vec<(Attribute, RuleFamily)> {
    use RuleFamily::*;
    let mut pairs: Vec<_> = [Constant, Progression, DistributeThree].into_iter().map(|f| (Attribute::Type, f)).collect();
    for attr in [Attribute::Size, Attribute::Color] {
        pairs.extend([Constant, Progression, DistributeThree, Arithmetic].into_iter().map(|f| (attr, f)));
    }
    pairs
}

pub fn ood_split(pairs: &[(Attribute, RuleFamily)]) -> Result<OodSplit> {
    let held_out: BTreeSet<_> = pairs.iter().copied().collect();
    if held_out.is_empty() {
        return Err(Error::Validation("held-out set is empty".into()));
    }
    if held_out.contains(&(Attribute::Type, RuleFamily::Arithmetic)) {
        return Err(Error::Validation("type never follows arithmetic".into()));
    }
    let all: BTreeSet<_> = holdout_pairs().into_iter().collect();
    if all.is_subset(&held_out) {
        return Err(Error::Validation("held-out set leaves nothing to train on".into()));
    }
    Ok(OodSplit { held_out })
}
