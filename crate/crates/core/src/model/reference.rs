//! Direct time-domain evaluation of the model on dense block vectors.
//!
//! These functions follow the model's definition literally and are used as
//! the ground truth for the fused spectral engine.

use super::engine::CONTEXT;
use super::{RuleSet, K};
use crate::error::{Error, Result};
use crate::grad::{softmax, ParamBlock, Tape, Var};
use crate::vsa::{bind, bundle, cosine, unbind, BlockVector};

/// A 3x3 matrix of panel vectors; `None` marks an unknown panel.
pub type PanelGrid = [[Option<BlockVector>; 3]; 3];

/// Wraps a fully known grid.
pub fn full_grid(g: [[BlockVector; 3]; 3]) -> PanelGrid {
    g.map(|row| row.map(Some))
}

/// Whether the third row's ground truth counts towards rule confidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// All three rows; used while training.
    Train,
    /// First two rows only; panel (3,3) is the unknown.
    Infer,
}

impl Mode {
    fn rows(self) -> usize {
        match self {
            Mode::Train => 3,
            Mode::Infer => 2,
        }
    }
}

/// Current panels `x`, context panels `o` and the identity `e` for one target row.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextView {
    pub x: [BlockVector; 2],
    pub o: [BlockVector; 5],
    pub e: BlockVector,
}

impl ContextView {
    /// Basis in slot order `[x1, x2, o1, o2, o3, o4, o5, e]`.
    pub fn basis(&self) -> [&BlockVector; K] {
        [&self.x[0], &self.x[1], &self.o[0], &self.o[1], &self.o[2], &self.o[3], &self.o[4], &self.e]
    }
}

fn panel(grid: &PanelGrid, i: usize) -> Result<&BlockVector> {
    grid[i / 3][i % 3]
        .as_ref()
        .ok_or_else(|| Error::Contract(format!("panel ({},{}) is required but missing", i / 3 + 1, i % 3 + 1)))
}

/// Context for predicting the third panel of `target_row` (0-based).
///
/// `x` is the row's first two panels, `o1..o3` a full other row and `o4, o5`
/// the first two panels of the remaining row, so that `x1`, `o1` and `o4`
/// are always the first column. Panel (3,3) is never used.
pub fn build_context(grid: &PanelGrid, target_row: usize) -> Result<ContextView> {
    if target_row > 2 {
        return Err(Error::Range(format!("target row {target_row} outside 0..3")));
    }
    let slots = CONTEXT[target_row];
    let get = |s: usize| panel(grid, slots[s]).cloned();
    let x = [get(0)?, get(1)?];
    let o = [get(2)?, get(3)?, get(4)?, get(5)?, get(6)?];
    let e = x[0].dims().identity();
    Ok(ContextView { x, o, e })
}

/// `c_k = bundle(basis, softmax(logits[rule][k]))` for every term of `rule`.
pub fn compute_terms(rs: &RuleSet, rule: usize, ctx: &ContextView) -> Result<Vec<BlockVector>> {
    let basis: Vec<BlockVector> = ctx.basis().into_iter().cloned().collect();
    (0..rs.terms()).map(|k| bundle(&basis, &rs.term_weights(rule, k))).collect()
}

/// Binds the first half of the terms and unbinds the binding of the second half.
pub fn execute_rule(terms: &[BlockVector]) -> Result<BlockVector> {
    if terms.is_empty() || terms.len() % 2 != 0 {
        return Err(Error::Shape(format!("a rule needs an even, positive number of terms, got {}", terms.len())));
    }
    let half = terms.len() / 2;
    let chain = |ts: &[BlockVector]| -> Result<BlockVector> {
        let mut acc = ts[0].clone();
        for t in &ts[1..] {
            acc = bind(&acc, t)?;
        }
        Ok(acc)
    };
    unbind(&chain(&terms[..half])?, &chain(&terms[half..])?)
}

fn predict_row(rs: &RuleSet, rule: usize, grid: &PanelGrid, row: usize) -> Result<BlockVector> {
    execute_rule(&compute_terms(rs, rule, &build_context(grid, row)?)?)
}

/// `s_r = sum_i cos(v(i,3), rule output on row i)` over the rows of `mode`.
pub fn rule_confidence(rs: &RuleSet, rule: usize, grid: &PanelGrid, mode: Mode) -> Result<f64> {
    let mut s = 0.0;
    for row in 0..mode.rows() {
        let truth = panel(grid, row * 3 + 2)?;
        s += cosine(truth, &predict_row(rs, rule, grid, row)?)?;
    }
    Ok(s)
}

/// `sum_r softmax(scores / temperature)_r * prediction_r`.
pub fn soft_select(scores: &[f64], predictions: &[BlockVector], temperature: f64) -> Result<BlockVector> {
    if scores.is_empty() || scores.len() != predictions.len() {
        return Err(Error::Shape(format!("{} scores for {} predictions", scores.len(), predictions.len())));
    }
    if !(temperature > 0.0) {
        return Err(Error::Config(format!("selection temperature {temperature} must be positive")));
    }
    let p = softmax(scores, temperature);
    let dims = predictions[0].dims();
    let mut data = vec![0.0; dims.dim];
    for (v, &w) in predictions.iter().zip(&p) {
        if v.dims() != dims {
            return Err(Error::Shape("predictions differ in shape".into()));
        }
        for (o, x) in data.iter_mut().zip(v.data()) {
            *o += w * x;
        }
    }
    BlockVector::from_data(dims, data)
}

/// `1 - sum_i cos(v(i,3), vhat(i,3))` per attribute grid, summed (or averaged) over grids.
pub fn loss(rs: &RuleSet, grids: &[PanelGrid], temperature: f64, average: bool) -> Result<f64> {
    let mut total = 0.0;
    for grid in grids {
        let preds: Vec<Vec<BlockVector>> = (0..3)
            .map(|row| (0..rs.rules()).map(|r| predict_row(rs, r, grid, row)).collect::<Result<Vec<_>>>())
            .collect::<Result<_>>()?;
        let mut scores = vec![0.0; rs.rules()];
        for (row, preds) in preds.iter().enumerate() {
            let truth = panel(grid, row * 3 + 2)?;
            for (s, v) in scores.iter_mut().zip(preds) {
                *s += cosine(truth, v)?;
            }
        }
        total += 1.0;
        for (row, preds) in preds.iter().enumerate() {
            total -= cosine(panel(grid, row * 3 + 2)?, &soft_select(&scores, preds, temperature)?)?;
        }
    }
    Ok(if average && !grids.is_empty() { total / grids.len() as f64 } else { total })
}

/// The same loss recorded on the autodiff tape; returns it with `d loss / d logits`.
pub fn tape_loss(rs: &RuleSet, grids: &[PanelGrid], temperature: f64, average: bool) -> Result<(f64, Vec<f64>)> {
    let mut params = [ParamBlock::new("logits", rs.logits().to_vec())];
    let mut tape = Tape::new();
    let logits = tape.param(0, &params[0]);
    let (rules, terms) = (rs.rules(), rs.terms());
    let half = terms / 2;
    let mut weights = Vec::with_capacity(rules * terms);
    for i in 0..rules * terms {
        let s = tape.slice(logits, i * K, K)?;
        weights.push(tape.softmax(s, 1.0)?);
    }
    let mut attr_losses = Vec::new();
    for grid in grids {
        let mut vars = Vec::with_capacity(9);
        for i in 0..9 {
            vars.push(tape.constant(panel(grid, i)?.data().to_vec()));
        }
        let dims = panel(grid, 0)?.dims();
        let e = tape.constant(dims.identity().into_data());
        let mut outputs: Vec<Vec<Var>> = Vec::new();
        let mut cos_by_rule: Vec<Vec<Var>> = vec![Vec::new(); rules];
        for row in 0..3 {
            let mut basis: Vec<Var> = CONTEXT[row].iter().map(|&p| vars[p]).collect();
            basis.push(e);
            let target = vars[row * 3 + 2];
            let mut row_out = Vec::with_capacity(rules);
            for (r, cos_r) in cos_by_rule.iter_mut().enumerate() {
                let c: Vec<Var> = (0..terms)
                    .map(|k| tape.weighted_sum(&basis, weights[r * terms + k]))
                    .collect::<Result<_>>()?;
                let mut p = c[0];
                for &t in &c[1..half] {
                    p = tape.bind(p, t, dims)?;
                }
                let mut q = c[half];
                for &t in &c[half + 1..] {
                    q = tape.bind(q, t, dims)?;
                }
                let v = tape.unbind(p, q, dims)?;
                cos_r.push(tape.cosine(v, target)?);
                row_out.push(v);
            }
            outputs.push(row_out);
        }
        let sums: Vec<Var> = cos_by_rule.iter().map(|c| tape.sum(c)).collect::<Result<_>>()?;
        let scores = tape.stack(&sums)?;
        let p = tape.softmax(scores, temperature)?;
        let mut cs = Vec::new();
        for (row, outs) in outputs.iter().enumerate() {
            let y = tape.weighted_sum(outs, p)?;
            cs.push(tape.cosine(y, vars[row * 3 + 2])?);
        }
        let total = tape.sum(&cs)?;
        attr_losses.push(tape.affine(total, -1.0, 1.0)?);
    }
    if attr_losses.is_empty() {
        return Ok((0.0, vec![0.0; rs.logits().len()]));
    }
    let mut loss = tape.sum(&attr_losses)?;
    if average {
        loss = tape.affine(loss, 1.0 / grids.len() as f64, 0.0)?;
    }
    tape.backward(loss, &mut params)?;
    let [block] = params;
    Ok((tape.scalar(loss), block.gradient))
}
