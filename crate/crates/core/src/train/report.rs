use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::rpm::{Constellation, Puzzle};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Score {
    pub correct: usize,
    pub total: usize,
}

impl Score {
    fn add(&mut self, ok: bool) {
        self.total += 1;
        self.correct += ok as usize;
    }

    /// Percentage correct, `None` when nothing was scored.
    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| 100.0 * self.correct as f64 / self.total as f64)
    }
}

/// Accuracy on one constellation. Puzzles with a position progression or
/// arithmetic rule act on objects rather than panels and are kept out of the
/// headline number.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstellationScore {
    pub constellation: String,
    pub headline: Score,
    pub accuracy: Option<f64>,
    pub hard: Score,
    pub hard_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub constellations: Vec<ConstellationScore>,
    /// Keyed `"attribute:family"`; every puzzle counts once per pair it contains.
    pub rule_families: BTreeMap<String, Score>,
    pub overall: Score,
    pub parameter_count: usize,
    pub epochs: Vec<EpochMetrics>,
    pub seed: u64,
    pub wall_clock_secs: f64,
}

impl RunReport {
    pub fn from_outcomes(data: &[Puzzle], correct: &[bool]) -> Self {
        let mut by_constellation: BTreeMap<Constellation, (Score, Score)> = BTreeMap::new();
        let mut families: BTreeMap<String, Score> = BTreeMap::new();
        let mut overall = Score::default();
        for (p, &ok) in data.iter().zip(correct) {
            let entry = by_constellation.entry(p.constellation).or_default();
            if p.is_hard() {
                entry.1.add(ok);
            } else {
                entry.0.add(ok);
                overall.add(ok);
            }
            let mut pairs = p.rule_pairs();
            pairs.sort();
            pairs.dedup();
            for (a, f) in pairs {
                families.entry(format!("{a}:{f}")).or_default().add(ok);
            }
        }
        let constellations = by_constellation
            .into_iter()
            .map(|(c, (headline, hard))| ConstellationScore {
                constellation: c.name().to_string(),
                accuracy: headline.accuracy(),
                headline,
                hard_accuracy: hard.accuracy(),
                hard,
            })
            .collect();
        Self {
            constellations,
            rule_families: families,
            overall,
            parameter_count: 0,
            epochs: Vec::new(),
            seed: 0,
            wall_clock_secs: 0.0,
        }
    }

    /// Headline accuracy of one constellation.
    pub fn accuracy_of(&self, c: Constellation) -> Option<f64> {
        self.constellations.iter().find(|s| s.constellation == c.name()).and_then(|s| s.accuracy)
    }

    pub fn family_accuracy(&self, key: &str) -> Option<f64> {
        self.rule_families.get(key).and_then(Score::accuracy)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// `epoch,loss,train_acc,val_acc`, one row per epoch; missing values are empty.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("epoch,loss,train_acc,val_acc\n");
        let cell = |x: f64| if x.is_finite() { format!("{x}") } else { String::new() };
        for m in &self.epochs {
            let _ = writeln!(out, "{},{},{},{}", m.epoch, cell(m.loss), cell(m.train_acc), cell(m.val_acc));
        }
        out
    }

    pub fn render_table(&self) -> String {
        let pct = |a: Option<f64>| a.map_or("-".to_string(), |x| format!("{x:.1}"));
        let mut out = String::new();
        let _ = writeln!(out, "{:<18} {:>8} {:>7} {:>10} {:>6}", "constellation", "acc(%)", "n", "hard(%)", "hard n");
        for c in &self.constellations {
            let _ = writeln!(
                out,
                "{:<18} {:>8} {:>7} {:>10} {:>6}",
                c.constellation,
                pct(c.accuracy),
                c.headline.total,
                pct(c.hard_accuracy),
                c.hard.total
            );
        }
        let _ = writeln!(out, "{:<18} {:>8} {:>7}", "overall", pct(self.overall.accuracy()), self.overall.total);
        let _ = writeln!(out, "\n{:<28} {:>8} {:>7}", "rule family", "acc(%)", "n");
        for (k, s) in &self.rule_families {
            let _ = writeln!(out, "{:<28} {:>8} {:>7}", k, pct(s.accuracy()), s.total);
        }
        let _ = writeln!(out, "\ntrainable parameters: {}", self.parameter_count);
        out
    }
}
