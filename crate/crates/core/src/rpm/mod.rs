//! Symbolic Raven's-progressive-matrix puzzles.
//!
//! Panels are described by integer attribute labels only (perfect perception).
//! Each attribute of each component follows one rule per puzzle; the generator
//! builds the 3x3 grids row by row from [`apply_rule`], then derives an
//! unbiased set of eight candidates by attribute bisection.

mod generate;
mod io;
mod rules;
mod split;

pub use generate::{derive_seed, gen_candidates, generate, generate_where, sample_puzzle, GenConfig};
pub use io::{read_jsonl, write_jsonl};
pub use rules::{apply_rule, popcount, rotate_mask, Domain, RowContext, RuleError};
pub use split::{ood_split, holdout_pairs, OodSplit};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    Type,
    Size,
    Color,
    Number,
    Position,
}

impl Attribute {
    pub const ALL: [Attribute; 5] = [Self::Type, Self::Size, Self::Color, Self::Number, Self::Position];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Type => "type",
            Self::Size => "size",
            Self::Color => "color",
            Self::Number => "number",
            Self::Position => "position",
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Attribute {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown attribute `{s}`")))
    }
}

/// Object arrangement of one panel component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Layout {
    /// One object; type, size and color only.
    Single,
    /// A grid of slots; adds number and position (a bitmask over the slots).
    Grid { slots: usize },
}

impl Layout {
    pub fn attributes(&self) -> &'static [Attribute] {
        match self {
            Self::Single => &Attribute::ALL[..3],
            Self::Grid { .. } => &Attribute::ALL,
        }
    }

    pub fn slots(&self) -> usize {
        match self {
            Self::Single => 1,
            Self::Grid { slots } => *slots,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Constellation {
    Center,
    Grid2x2,
    Grid3x3,
    LeftRight,
    UpDown,
    InOutCenter,
    InOutGrid,
}

impl Constellation {
    pub const ALL: [Constellation; 7] = [
        Self::Center,
        Self::Grid2x2,
        Self::Grid3x3,
        Self::LeftRight,
        Self::UpDown,
        Self::InOutCenter,
        Self::InOutGrid,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Center => "center",
            Self::Grid2x2 => "2x2",
            Self::Grid3x3 => "3x3",
            Self::LeftRight => "left-right",
            Self::UpDown => "up-down",
            Self::InOutCenter => "in-out-center",
            Self::InOutGrid => "in-out-grid",
        }
    }

    /// Component layouts; two-component constellations are independent components.
    pub fn layouts(&self) -> Vec<Layout> {
        match self {
            Self::Center => vec![Layout::Single],
            Self::Grid2x2 => vec![Layout::Grid { slots: 4 }],
            Self::Grid3x3 => vec![Layout::Grid { slots: 9 }],
            Self::LeftRight | Self::UpDown | Self::InOutCenter => vec![Layout::Single, Layout::Single],
            Self::InOutGrid => vec![Layout::Single, Layout::Grid { slots: 4 }],
        }
    }
}

impl fmt::Display for Constellation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Constellation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown constellation `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RuleFamily {
    Constant,
    Progression,
    Arithmetic,
    DistributeThree,
}

impl RuleFamily {
    pub const ALL: [RuleFamily; 4] = [Self::Constant, Self::Progression, Self::Arithmetic, Self::DistributeThree];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Constant => "constant",
            Self::Progression => "progression",
            Self::Arithmetic => "arithmetic",
            Self::DistributeThree => "distribute_three",
        }
    }
}

impl fmt::Display for RuleFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RuleFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "const" => return Ok(Self::Constant),
            "progr" => return Ok(Self::Progression),
            "arith" => return Ok(Self::Arithmetic),
            "dist3" | "d3" => return Ok(Self::DistributeThree),
            _ => {}
        }
        Self::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown rule family `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sign {
    Plus,
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Shift {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RuleDescriptor {
    Constant,
    Progression { step: i64 },
    Arithmetic { sign: Sign },
    DistributeThree { shift: Shift },
}

impl RuleDescriptor {
    pub fn family(&self) -> RuleFamily {
        match self {
            Self::Constant => RuleFamily::Constant,
            Self::Progression { .. } => RuleFamily::Progression,
            Self::Arithmetic { .. } => RuleFamily::Arithmetic,
            Self::DistributeThree { .. } => RuleFamily::DistributeThree,
        }
    }

    /// Position progression and arithmetic act on individual objects, not panels.
    pub fn is_hard(&self, attr: Attribute) -> bool {
        attr == Attribute::Position && matches!(self.family(), RuleFamily::Progression | RuleFamily::Arithmetic)
    }
}

pub type Grid = [[i64; 3]; 3];

/// Attribute values of one panel component.
pub type Assignment = BTreeMap<Attribute, i64>;

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub layout: Layout,
    pub grids: BTreeMap<Attribute, Grid>,
    /// Governing rules. For grid layouts only one of number / position is
    /// listed; the other is derived from it.
    pub rules: BTreeMap<Attribute, RuleDescriptor>,
}

impl Component {
    /// Values of panel (3,3).
    pub fn answer(&self) -> Assignment {
        self.grids.iter().map(|(a, g)| (*a, g[2][2])).collect()
    }
}

/// One answer panel: an assignment per component.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Candidate {
    pub components: Vec<Assignment>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Puzzle {
    pub constellation: Constellation,
    pub components: Vec<Component>,
    pub candidates: Vec<Candidate>,
    pub answer_index: usize,
    pub seed: u64,
}

impl Puzzle {
    pub fn truth(&self) -> Candidate {
        Candidate { components: self.components.iter().map(Component::answer).collect() }
    }

    /// True when some component carries a position progression or arithmetic rule.
    pub fn is_hard(&self) -> bool {
        self.components.iter().any(|c| c.rules.iter().any(|(a, r)| r.is_hard(*a)))
    }

    /// Every governing (attribute, family) pair of the puzzle.
    pub fn rule_pairs(&self) -> Vec<(Attribute, RuleFamily)> {
        self.components.iter().flat_map(|c| c.rules.iter().map(|(a, r)| (*a, r.family()))).collect()
    }
}
