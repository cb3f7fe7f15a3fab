//! The abductive rule learner.
//!
//! A rule set holds `R` rules of `T` terms each. Every term is a convex
//! combination of the eight basis vectors `[x1, x2, o1..o5, e]`, weighted by
//! a softmax over its logits. A rule binds its first `T/2` terms and unbinds
//! the binding of the remaining ones; rules are scored by how well they
//! reproduce the known third panels and blended by a softmax over those
//! scores.

mod checkpoint;
mod encoder;
mod engine;
mod reference;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use encoder::Encoder;
pub use engine::{loss_and_grad, predict_answer, puzzle_loss, Prediction};
pub use reference::{
    build_context, compute_terms, execute_rule, full_grid, loss, rule_confidence, soft_select, tape_loss, ContextView,
    Mode, PanelGrid,
};

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grad::softmax;

pub const DEFAULT_RULES: usize = 5;
pub const DEFAULT_TERMS: usize = 12;
/// Basis size: two current panels, five context panels and the identity.
pub const K: usize = 8;
/// Logit magnitude used when compiling programs.
pub const PROGRAM_LOGIT: f64 = 20.0;

/// One basis slot of a term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slot {
    X1,
    X2,
    O1,
    O2,
    O3,
    O4,
    O5,
    E,
}

impl Slot {
    pub const ALL: [Slot; K] = [Self::X1, Self::X2, Self::O1, Self::O2, Self::O3, Self::O4, Self::O5, Self::E];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// ASCII name used in files and on the command line.
    pub fn name(self) -> &'static str {
        ["x1", "x2", "o1", "o2", "o3", "o4", "o5", "e"][self.index()]
    }

    /// Display form with subscripts.
    pub fn symbol(self) -> &'static str {
        ["x₁", "x₂", "o₁", "o₂", "o₃", "o₄", "o₅", "e"][self.index()]
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl FromStr for Slot {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|x| x.name() == s || x.symbol() == s)
            .ok_or_else(|| Error::Validation(format!("unknown basis symbol `{s}`")))
    }
}

/// Learnable rule logits, shape `rules x terms x K`.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleSet {
    rules: usize,
    terms: usize,
    logits: Vec<f64>,
    frozen: Vec<bool>,
}

impl RuleSet {
    pub fn new(rules: usize, terms: usize, logits: Vec<f64>, frozen: Vec<bool>) -> Result<Self> {
        if rules == 0 {
            return Err(Error::Config("a rule set needs at least one rule".into()));
        }
        if terms == 0 || terms % 2 != 0 {
            return Err(Error::Config(format!("term count {terms} must be positive and even")));
        }
        if logits.len() != rules * terms * K {
            return Err(Error::Shape(format!("{} logits for {rules}x{terms}x{K}", logits.len())));
        }
        if frozen.len() != rules {
            return Err(Error::Shape(format!("{} frozen flags for {rules} rules", frozen.len())));
        }
        if let Some(i) = logits.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numerical { coordinate: i, message: "logit is not finite".into() });
        }
        Ok(Self { rules, terms, logits, frozen })
    }

    /// Logits drawn i.i.d. from N(0, 0.1²).
    pub fn random(rules: usize, terms: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.1).expect("valid normal");
        let logits = (0..rules * terms * K).map(|_| normal.sample(&mut rng)).collect();
        Self::new(rules, terms, logits, vec![false; rules])
    }

    /// All-zero logits: every term is the uniform bundle of the basis.
    pub fn uniform(rules: usize, terms: usize) -> Result<Self> {
        Self::new(rules, terms, vec![0.0; rules * terms * K], vec![false; rules])
    }

    pub fn rules(&self) -> usize {
        self.rules
    }

    pub fn terms(&self) -> usize {
        self.terms
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    pub fn frozen(&self) -> &[bool] {
        &self.frozen
    }

    pub fn set_frozen(&mut self, rule: usize, frozen: bool) {
        self.frozen[rule] = frozen;
    }

    pub fn term_logits(&self, rule: usize, term: usize) -> &[f64] {
        let i = (rule * self.terms + term) * K;
        &self.logits[i..i + K]
    }

    /// Softmax weights of one term.
    pub fn term_weights(&self, rule: usize, term: usize) -> Vec<f64> {
        softmax(self.term_logits(rule, term), 1.0)
    }

    /// Softmax weights of every term, laid out like the logits.
    pub fn all_weights(&self) -> Vec<f64> {
        self.logits.chunks(K).flat_map(|l| softmax(l, 1.0)).collect()
    }

    /// Number of logits that training may change.
    pub fn trainable_parameters(&self) -> usize {
        self.frozen.iter().filter(|f| !**f).count() * self.terms * K
    }

    /// Concatenation of the rules of `self` and `other` (same term count).
    pub fn extend(&self, other: &RuleSet) -> Result<RuleSet> {
        if self.terms != other.terms {
            return Err(Error::Shape(format!("cannot join {}-term and {}-term rule sets", self.terms, other.terms)));
        }
        let logits = self.logits.iter().chain(&other.logits).copied().collect();
        let frozen = self.frozen.iter().chain(&other.frozen).copied().collect();
        RuleSet::new(self.rules + other.rules, self.terms, logits, frozen)
    }
}

/// A hand-written rule: symbols bound on the left, symbols unbound on the right.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleProgram {
    pub name: String,
    pub plus: Vec<Slot>,
    pub minus: Vec<Slot>,
}

impl RuleProgram {
    pub fn new(name: impl Into<String>, plus: &[Slot], minus: &[Slot]) -> Self {
        Self { name: name.into(), plus: plus.to_vec(), minus: minus.to_vec() }
    }

    /// Parses `"x1 x2 | o1"`: symbols before the bar are bound, after it unbound.
    pub fn parse(name: impl Into<String>, text: &str) -> Result<Self> {
        let (plus, minus) = text.split_once('|').unwrap_or((text, ""));
        let side = |s: &str| s.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()).map(str::parse).collect::<Result<Vec<Slot>>>();
        Ok(Self { name: name.into(), plus: side(plus)?, minus: side(minus)? })
    }

    /// Logits of one rule with `terms` terms: `+m` on the named slot, `-m` elsewhere.
    pub fn compile(&self, terms: usize, magnitude: f64) -> Result<Vec<f64>> {
        let half = terms / 2;
        for (side, slots) in [("bound", &self.plus), ("unbound", &self.minus)] {
            if slots.len() > half {
                return Err(Error::Contract(format!(
                    "rule `{}` has {} {side} symbols but only {half} terms per side",
                    self.name,
                    slots.len()
                )));
            }
        }
        let mut logits = Vec::with_capacity(terms * K);
        for slots in [&self.plus, &self.minus] {
            for t in 0..half {
                let hot = slots.get(t).copied().unwrap_or(Slot::E);
                logits.extend(Slot::ALL.iter().map(|&s| if s == hot { magnitude } else { -magnitude }));
            }
        }
        Ok(logits)
    }
}

/// The four canonical rules. With `validated`, distribute-three carries extra
/// terms that cancel only when the first context row and the first column
/// have equal sums, which no other rule family guarantees.
pub fn canonical_programs(validated: bool) -> Vec<RuleProgram> {
    use Slot::*;
    let d3 = if validated {
        RuleProgram::new("distribute_three", &[O1, O2, O3, O1, O2, O3], &[X1, X2, O1, O4, X1])
    } else {
        RuleProgram::new("distribute_three", &[O1, O2, O3], &[X1, X2])
    };
    vec![
        RuleProgram::new("arithmetic_plus", &[X1, X2], &[]),
        RuleProgram::new("arithmetic_minus", &[X1], &[X2]),
        RuleProgram::new("progression", &[X2, X2], &[X1]),
        d3,
    ]
}

/// Parses a rules file: one `name: x1 x2 | o1` program per line. Blank lines
/// and lines starting with `#` are skipped.
pub fn parse_programs(text: &str) -> Result<Vec<RuleProgram>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse { line: i + 1, message };
        let (name, body) = line.split_once(':').ok_or_else(|| parse_err("expected `name: slots | slots`".into()))?;
        let program = RuleProgram::parse(name.trim(), body).map_err(|e| parse_err(e.to_string()))?;
        out.push(program);
    }
    if out.is_empty() {
        return Err(Error::Config("rules file defines no programs".into()));
    }
    Ok(out)
}

/// Compiles programs into a rule set with one rule per program.
pub fn program_rules(programs: &[RuleProgram], terms: usize, frozen: bool) -> Result<RuleSet> {
    if programs.is_empty() {
        return Err(Error::Config("no rule programs given".into()));
    }
    let mut logits = Vec::new();
    for p in programs {
        logits.extend(p.compile(terms, PROGRAM_LOGIT)?);
    }
    RuleSet::new(programs.len(), terms, logits, vec![frozen; programs.len()])
}

/// Per-term summary produced by [`inspect_rules`].
#[derive(Debug, Clone, PartialEq)]
pub struct TermSummary {
    pub slot: Slot,
    pub weight: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleSummary {
    pub terms: Vec<TermSummary>,
    pub expression: String,
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// Dominant slot, weight and entropy of every term, plus a symbolic rendering
/// of each rule's argmax program.
pub fn inspect_rules(rs: &RuleSet) -> Vec<RuleSummary> {
    (0..rs.rules())
        .map(|r| {
            let terms: Vec<TermSummary> = (0..rs.terms())
                .map(|t| {
                    let w = rs.term_weights(r, t);
                    let (i, &weight) = w
                        .iter()
                        .enumerate()
                        .fold((0, &w[0]), |best, cur| if cur.1 > best.1 { cur } else { best });
                    TermSummary { slot: Slot::from_index(i).expect("K slots"), weight, entropy: entropy(&w) }
                })
                .collect();
            let half = rs.terms() / 2;
            let side = |ts: &[TermSummary]| {
                let names: Vec<&str> = ts.iter().filter(|t| t.slot != Slot::E).map(|t| t.slot.symbol()).collect();
                if names.is_empty() {
                    "e".to_string()
                } else {
                    names.join(" ⊛ ")
                }
            };
            let plus = side(&terms[..half]);
            let minus = side(&terms[half..]);
            let expression =
                if minus == "e" { format!("({plus})") } else { format!("({plus}) ⊘ ({minus})") };
            RuleSummary { terms, expression }
        })
        .collect()
}

/// Human-readable table of [`inspect_rules`].
pub fn render_rules(rs: &RuleSet) -> String {
    let mut out = String::new();
    for (r, s) in inspect_rules(rs).iter().enumerate() {
        let frozen = if rs.frozen()[r] { " [frozen]" } else { "" };
        out.push_str(&format!("rule {}{frozen}: {}\n", r + 1, s.expression));
        for (t, term) in s.terms.iter().enumerate() {
            out.push_str(&format!(
                "  c{:<2} {:<3} w={:.6} H={:.4}\n",
                t + 1,
                term.slot.symbol(),
                term.weight,
                term.entropy
            ));
        }
    }
    out
}
