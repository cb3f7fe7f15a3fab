//! Fused frequency-domain evaluation of the rule set.
//!
//! Every quantity stays in the half-spectrum domain: terms are mixed bin by
//! bin, binding is a complex product, unbinding a product with the conjugate,
//! and similarities use Parseval weights. The backward pass mirrors the
//! forward pass by hand, using prefix and suffix products for the adjoints of
//! the term chains. The tape in [`crate::grad`] evaluates the same loss in the
//! time domain and serves as its reference.

use super::encoder::{Encoder, Frame};
use super::{RuleSet, K};
use crate::error::{Error, Result};
use crate::grad::softmax;
use crate::rpm::{Attribute, Grid, Puzzle};
use crate::vsa::Spectrum;

/// Panels (row-major index) playing `[x1, x2, o1, o2, o3, o4, o5]` for each target row.
/// `x1`, `o1` and `o4` always form the first column.
pub(crate) const CONTEXT: [[usize; 7]; 3] = [[0, 1, 3, 4, 5, 6, 7], [3, 4, 0, 1, 2, 6, 7], [6, 7, 0, 1, 2, 3, 4]];

fn target(row: usize) -> usize {
    row * 3 + 2
}

/// `o = a * b`
fn cmul(ar: &[f64], ai: &[f64], br: &[f64], bi: &[f64], or: &mut [f64], oi: &mut [f64]) {
    let n = or.len();
    let (ar, ai, br, bi, oi) = (&ar[..n], &ai[..n], &br[..n], &bi[..n], &mut oi[..n]);
    for f in 0..n {
        let (re, im) = (ar[f] * br[f] - ai[f] * bi[f], ar[f] * bi[f] + ai[f] * br[f]);
        or[f] = re;
        oi[f] = im;
    }
}

/// `o = a * conj(b)`
fn cmul_conj(ar: &[f64], ai: &[f64], br: &[f64], bi: &[f64], or: &mut [f64], oi: &mut [f64]) {
    let n = or.len();
    let (ar, ai, br, bi, oi) = (&ar[..n], &ai[..n], &br[..n], &bi[..n], &mut oi[..n]);
    for f in 0..n {
        let (re, im) = (ar[f] * br[f] + ai[f] * bi[f], ai[f] * br[f] - ar[f] * bi[f]);
        or[f] = re;
        oi[f] = im;
    }
}

/// `a *= b` in place.
fn cmul_assign(ar: &mut [f64], ai: &mut [f64], br: &[f64], bi: &[f64]) {
    let n = ar.len();
    let (ai, br, bi) = (&mut ai[..n], &br[..n], &bi[..n]);
    for f in 0..n {
        let (re, im) = (ar[f] * br[f] - ai[f] * bi[f], ar[f] * bi[f] + ai[f] * br[f]);
        ar[f] = re;
        ai[f] = im;
    }
}

/// Dot product with independent partial sums so the loop vectorizes.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for j in 0..8 {
            acc[j] += x[j] * y[j];
        }
    }
    acc.iter().sum::<f64>() + tail
}

/// Forward state of one attribute: all rules applied to all three rows.
struct Forward {
    n: usize,
    rules: usize,
    terms: usize,
    c_re: Vec<f64>,
    c_im: Vec<f64>,
    p_re: Vec<f64>,
    p_im: Vec<f64>,
    q_re: Vec<f64>,
    q_im: Vec<f64>,
    v_re: Vec<f64>,
    v_im: Vec<f64>,
    /// `cos(target, V)` per (row, rule); NaN where the target panel is unknown.
    cos: Vec<f64>,
    vnorm: Vec<f64>,
    tnorm: [f64; 3],
}

thread_local! {
    /// Buffers of dropped forward passes, reused so the hot loop does not
    /// return large allocations to the system on every attribute.
    static SPARE: std::cell::RefCell<Vec<Vec<f64>>> = const { std::cell::RefCell::new(Vec::new()) };
}

fn buffer(len: usize, fill: f64) -> Vec<f64> {
    let mut v = SPARE.with(|s| s.borrow_mut().pop()).unwrap_or_default();
    v.clear();
    v.resize(len, fill);
    v
}

impl Drop for Forward {
    fn drop(&mut self) {
        let bufs = [
            &mut self.c_re,
            &mut self.c_im,
            &mut self.p_re,
            &mut self.p_im,
            &mut self.q_re,
            &mut self.q_im,
            &mut self.v_re,
            &mut self.v_im,
        ];
        SPARE.with(|s| {
            let mut s = s.borrow_mut();
            for b in bufs {
                if s.len() < 32 {
                    s.push(std::mem::take(b));
                }
            }
        });
    }
}

impl Forward {
    fn term(&self, row: usize, rule: usize, k: usize) -> (&[f64], &[f64]) {
        let i = ((row * self.rules + rule) * self.terms + k) * self.n;
        (&self.c_re[i..i + self.n], &self.c_im[i..i + self.n])
    }

    fn rr(&self, row: usize, rule: usize) -> std::ops::Range<usize> {
        let i = (row * self.rules + rule) * self.n;
        i..i + self.n
    }
}

/// The distinct context panels of one row. Slots showing the same value share
/// a spectrum, so their weights can be merged before mixing.
struct RowBasis<'a> {
    spectra: Vec<&'a Spectrum>,
    group: [usize; 7],
}

fn row_basis<'a>(frame: &'a Frame, row: usize) -> Result<RowBasis<'a>> {
    let mut values: Vec<i64> = Vec::with_capacity(7);
    let mut spectra = Vec::with_capacity(7);
    let mut group = [0; 7];
    for (s, &p) in CONTEXT[row].iter().enumerate() {
        let v = frame.values[p].ok_or_else(|| Error::Contract(format!("panel ({},{}) is not available", p / 3 + 1, p % 3 + 1)))?;
        group[s] = match values.iter().position(|&u| u == v) {
            Some(g) => g,
            None => {
                values.push(v);
                spectra.push(frame.panel(p)?);
                values.len() - 1
            }
        };
    }
    Ok(RowBasis { spectra, group })
}

fn forward(frame: &Frame, w: &[f64], rules: usize, terms: usize) -> Result<Forward> {
    let n = frame.n;
    let half = terms / 2;
    let rows = 3;
    let mut f = Forward {
        n,
        rules,
        terms,
        c_re: buffer(rows * rules * terms * n, 0.0),
        c_im: buffer(rows * rules * terms * n, 0.0),
        p_re: buffer(rows * rules * n, 0.0),
        p_im: buffer(rows * rules * n, 0.0),
        q_re: buffer(rows * rules * n, 0.0),
        q_im: buffer(rows * rules * n, 0.0),
        v_re: buffer(rows * rules * n, 0.0),
        v_im: buffer(rows * rules * n, 0.0),
        cos: vec![f64::NAN; rows * rules],
        vnorm: vec![0.0; rows * rules],
        tnorm: [0.0; 3],
    };
    for row in 0..rows {
        let basis = row_basis(frame, row)?;
        let mut gw = vec![0.0; basis.spectra.len()];
        for r in 0..rules {
            for k in 0..terms {
                let wk = &w[(r * terms + k) * K..(r * terms + k + 1) * K];
                gw.fill(0.0);
                for (s, &g) in basis.group.iter().enumerate() {
                    gw[g] += wk[s];
                }
                let i = ((row * rules + r) * terms + k) * n;
                let (cr, ci) = (&mut f.c_re[i..i + n], &mut f.c_im[i..i + n]);
                cr.fill(wk[K - 1]);
                ci.fill(0.0);
                for (b, &ws) in basis.spectra.iter().zip(&gw) {
                    for ((x, y), (br, bi)) in cr.iter_mut().zip(ci.iter_mut()).zip(b.re.iter().zip(&b.im)) {
                        *x += ws * br;
                        *y += ws * bi;
                    }
                }
            }
            let rr = f.rr(row, r);
            let base = (row * rules + r) * terms;
            for (side, (pr, pi)) in [(0, (&mut f.p_re, &mut f.p_im)), (half, (&mut f.q_re, &mut f.q_im))] {
                let (pr, pi) = (&mut pr[rr.clone()], &mut pi[rr.clone()]);
                let i0 = (base + side) * n;
                pr.copy_from_slice(&f.c_re[i0..i0 + n]);
                pi.copy_from_slice(&f.c_im[i0..i0 + n]);
                for k in side + 1..side + half {
                    let i = (base + k) * n;
                    cmul_assign(pr, pi, &f.c_re[i..i + n], &f.c_im[i..i + n]);
                }
            }
            let (vr, vi) = (&mut f.v_re[rr.clone()], &mut f.v_im[rr.clone()]);
            cmul_conj(&f.p_re[rr.clone()], &f.p_im[rr.clone()], &f.q_re[rr.clone()], &f.q_im[rr.clone()], vr, vi);
            let v = Spectrum { re: vr.to_vec(), im: vi.to_vec() };
            let vn = frame.inner(&v, &v).sqrt();
            f.vnorm[row * rules + r] = vn;
            if let Some(t) = &frame.panels[target(row)] {
                let tn = frame.inner(t, t).sqrt();
                f.tnorm[row] = tn;
                f.cos[row * rules + r] = frame.inner(t, &v) / (tn * vn);
            }
        }
    }
    Ok(f)
}

/// Adjoint of one rule on one row: accumulates `d/dw` into `wbar`.
fn backward_rule(frame: &Frame, f: &Forward, basis: &RowBasis, row: usize, r: usize, vbar: (&[f64], &[f64]), wbar: &mut [f64]) {
    let n = f.n;
    let half = f.terms / 2;
    let rr = f.rr(row, r);
    let mut pbar = (vec![0.0; n], vec![0.0; n]);
    let mut qbar = (vec![0.0; n], vec![0.0; n]);
    // V = P conj(Q):  dP = dV Q,  dQ = P conj(dV)
    cmul(vbar.0, vbar.1, &f.q_re[rr.clone()], &f.q_im[rr.clone()], &mut pbar.0, &mut pbar.1);
    cmul_conj(&f.p_re[rr.clone()], &f.p_im[rr.clone()], vbar.0, vbar.1, &mut qbar.0, &mut qbar.1);

    let mut prefix = vec![(vec![1.0; n], vec![0.0; n]); half];
    let mut others = (vec![0.0; n], vec![0.0; n]);
    let mut cbar = (vec![0.0; n], vec![0.0; n]);
    for (side, gbar) in [(0, &pbar), (half, &qbar)] {
        for k in 1..half {
            let (cr, ci) = f.term(row, r, side + k - 1);
            let (prev, rest) = prefix.split_at_mut(k);
            let (pr, pi) = &prev[k - 1];
            cmul(pr, pi, cr, ci, &mut rest[0].0, &mut rest[0].1);
        }
        let mut suffix = (vec![1.0; n], vec![0.0; n]);
        for k in (0..half).rev() {
            cmul(&prefix[k].0, &prefix[k].1, &suffix.0, &suffix.1, &mut others.0, &mut others.1);
            cmul_conj(&gbar.0, &gbar.1, &others.0, &others.1, &mut cbar.0, &mut cbar.1);
            for (x, nu) in cbar.0.iter_mut().zip(&frame.nu) {
                *x *= nu;
            }
            for (y, nu) in cbar.1.iter_mut().zip(&frame.nu) {
                *y *= nu;
            }
            let wb = &mut wbar[(r * f.terms + side + k) * K..(r * f.terms + side + k + 1) * K];
            let d: Vec<f64> = basis.spectra.iter().map(|b| dot(&cbar.0, &b.re) + dot(&cbar.1, &b.im)).collect();
            for (s, &g) in basis.group.iter().enumerate() {
                wb[s] += d[g];
            }
            wb[K - 1] += cbar.0.iter().sum::<f64>();
            let (cr, ci) = f.term(row, r, side + k);
            cmul_assign(&mut suffix.0, &mut suffix.1, cr, ci);
        }
    }
}

/// Loss `1 - sum_i cos(t_i, yhat_i)` of one attribute, with its gradient with
/// respect to the term weights added to `wbar` when requested.
fn attribute_loss(frame: &Frame, w: &[f64], rules: usize, terms: usize, temperature: f64, wbar: Option<&mut [f64]>) -> Result<f64> {
    let f = forward(frame, w, rules, terms)?;
    let n = f.n;
    let scores: Vec<f64> = (0..rules).map(|r| (0..3).map(|i| f.cos[i * rules + r]).sum()).collect();
    let p = softmax(&scores, temperature);
    let mut loss = 1.0;
    let mut ybar = Vec::with_capacity(3);
    for i in 0..3 {
        let t = frame.panel(target(i))?;
        let mut y = Spectrum::zeros(n);
        for (r, &pr) in p.iter().enumerate() {
            let rr = f.rr(i, r);
            for ((a, b), (vr, vi)) in y.re.iter_mut().zip(y.im.iter_mut()).zip(f.v_re[rr.clone()].iter().zip(&f.v_im[rr])) {
                *a += pr * vr;
                *b += pr * vi;
            }
        }
        let yy = frame.inner(&y, &y);
        let yn = yy.sqrt();
        let c = frame.inner(t, &y) / (f.tnorm[i] * yn);
        loss -= c;
        // d(-cos)/dy
        let alpha = 1.0 / (f.tnorm[i] * yn);
        let beta = c / yy;
        let g = Spectrum {
            re: t.re.iter().zip(&y.re).map(|(a, b)| -(alpha * a - beta * b)).collect(),
            im: t.im.iter().zip(&y.im).map(|(a, b)| -(alpha * a - beta * b)).collect(),
        };
        ybar.push(g);
    }
    if !loss.is_finite() {
        return Err(Error::Numerical { coordinate: 0, message: format!("attribute loss is {loss}") });
    }
    let Some(wbar) = wbar else { return Ok(loss) };

    let mut pbar = vec![0.0; rules];
    for (i, g) in ybar.iter().enumerate() {
        for (r, pb) in pbar.iter_mut().enumerate() {
            let rr = f.rr(i, r);
            let v = Spectrum { re: f.v_re[rr.clone()].to_vec(), im: f.v_im[rr].to_vec() };
            *pb += frame.inner(g, &v);
        }
    }
    let mean: f64 = pbar.iter().zip(&p).map(|(a, b)| a * b).sum();
    let sbar: Vec<f64> = p.iter().zip(&pbar).map(|(pr, pb)| pr * (pb - mean) / temperature).collect();

    let mut vbar = (vec![0.0; n], vec![0.0; n]);
    for i in 0..3 {
        let t = frame.panel(target(i))?;
        let basis = row_basis(frame, i)?;
        for r in 0..rules {
            let rr = f.rr(i, r);
            let (vr, vi) = (&f.v_re[rr.clone()], &f.v_im[rr]);
            let vn = f.vnorm[i * rules + r];
            let a = sbar[r] / (f.tnorm[i] * vn);
            let b = sbar[r] * f.cos[i * rules + r] / (vn * vn);
            for j in 0..n {
                vbar.0[j] = p[r] * ybar[i].re[j] + a * t.re[j] - b * vr[j];
                vbar.1[j] = p[r] * ybar[i].im[j] + a * t.im[j] - b * vi[j];
            }
            backward_rule(frame, &f, &basis, i, r, (&vbar.0, &vbar.1), wbar);
        }
    }
    Ok(loss)
}

/// Infer-mode prediction of panel (3,3): confidences from rows 1 and 2 only.
fn attribute_predict(frame: &Frame, w: &[f64], rules: usize, terms: usize, temperature: f64) -> Result<(Spectrum, Vec<f64>)> {
    let f = forward(frame, w, rules, terms)?;
    let scores: Vec<f64> = (0..rules).map(|r| f.cos[r] + f.cos[rules + r]).collect();
    let p = softmax(&scores, temperature);
    let mut y = Spectrum::zeros(f.n);
    for (r, &pr) in p.iter().enumerate() {
        let rr = f.rr(2, r);
        for ((a, b), (vr, vi)) in y.re.iter_mut().zip(y.im.iter_mut()).zip(f.v_re[rr.clone()].iter().zip(&f.v_im[rr])) {
            *a += pr * vr;
            *b += pr * vi;
        }
    }
    Ok((y, scores))
}

fn panels(grid: &Grid, with_answer: bool) -> [Option<i64>; 9] {
    let mut out = [None; 9];
    for (i, o) in out.iter_mut().enumerate() {
        if i < 8 || with_answer {
            *o = Some(grid[i / 3][i % 3]);
        }
    }
    out
}

fn check_temperature(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Config(format!("selection temperature {t} must be positive")));
    }
    Ok(())
}

/// Attributes evaluated for a puzzle: every attribute of every component.
fn attribute_grids(p: &Puzzle) -> impl Iterator<Item = (usize, Attribute, &Grid)> {
    p.components
        .iter()
        .enumerate()
        .flat_map(|(ci, c)| c.layout.attributes().iter().filter_map(move |a| c.grids.get(a).map(|g| (ci, *a, g))))
}

fn loss_impl(p: &Puzzle, rs: &RuleSet, enc: &Encoder, temperature: f64, average: bool, grad: Option<&mut [f64]>) -> Result<f64> {
    check_temperature(temperature)?;
    let w = rs.all_weights();
    let (rules, terms) = (rs.rules(), rs.terms());
    let mut wbar = grad.as_ref().map(|_| vec![0.0; w.len()]);
    let mut total = 0.0;
    let mut count = 0usize;
    for (_, attr, grid) in attribute_grids(p) {
        let frame = enc.frame(attr, &panels(grid, true), &[], terms)?;
        total += attribute_loss(&frame, &w, rules, terms, temperature, wbar.as_deref_mut())?;
        count += 1;
    }
    let scale = if average && count > 0 { 1.0 / count as f64 } else { 1.0 };
    if let (Some(grad), Some(wbar)) = (grad, wbar) {
        if grad.len() != w.len() {
            return Err(Error::Shape(format!("gradient buffer of {} for {} logits", grad.len(), w.len())));
        }
        // softmax adjoint per term
        for ((g, wb), wk) in grad.chunks_mut(K).zip(wbar.chunks(K)).zip(w.chunks(K)) {
            let m: f64 = wb.iter().zip(wk).map(|(a, b)| a * b).sum();
            for j in 0..K {
                g[j] += scale * wk[j] * (wb[j] - m);
            }
        }
    }
    Ok(total * scale)
}

/// Training loss of one puzzle, summed (or averaged) over its attributes.
pub fn puzzle_loss(p: &Puzzle, rs: &RuleSet, enc: &Encoder, temperature: f64, average: bool) -> Result<f64> {
    loss_impl(p, rs, enc, temperature, average, None)
}

/// Training loss of one puzzle; its gradient with respect to the logits is added to `grad`.
pub fn loss_and_grad(p: &Puzzle, rs: &RuleSet, enc: &Encoder, temperature: f64, average: bool, grad: &mut [f64]) -> Result<f64> {
    loss_impl(p, rs, enc, temperature, average, Some(grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Chosen candidate; ties go to the lowest index.
    pub index: usize,
    /// Per-candidate score: summed cosine over all attributes.
    pub scores: Vec<f64>,
    /// Infer-mode rule confidences per evaluated (component, attribute).
    pub confidences: Vec<(usize, Attribute, Vec<f64>)>,
}

/// Picks the candidate closest to the predicted answer panel. Panel (3,3) is never read.
pub fn predict_answer(p: &Puzzle, rs: &RuleSet, enc: &Encoder, temperature: f64) -> Result<Prediction> {
    check_temperature(temperature)?;
    if p.candidates.is_empty() {
        return Err(Error::Contract("puzzle has no candidates".into()));
    }
    let w = rs.all_weights();
    let mut scores = vec![0.0; p.candidates.len()];
    let mut confidences = Vec::new();
    for (ci, attr, grid) in attribute_grids(p) {
        let values: Vec<i64> = p
            .candidates
            .iter()
            .map(|c| {
                c.components
                    .get(ci)
                    .and_then(|a| a.get(&attr).copied())
                    .ok_or_else(|| Error::Contract(format!("candidate lacks {attr} of component {ci}")))
            })
            .collect::<Result<_>>()?;
        let frame = enc.frame(attr, &panels(grid, false), &values, rs.terms())?;
        let (y, conf) = attribute_predict(&frame, &w, rs.rules(), rs.terms(), temperature)?;
        let yn = frame.inner(&y, &y).sqrt();
        for (s, &v) in scores.iter_mut().zip(&values) {
            let c = frame.encode(v)?;
            *s += frame.inner(&c, &y) / (frame.inner(&c, &c).sqrt() * yn);
        }
        confidences.push((ci, attr, conf));
    }
    let mut index = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[index] {
            index = i;
        }
    }
    Ok(Prediction { index, scores, confidences })
}
