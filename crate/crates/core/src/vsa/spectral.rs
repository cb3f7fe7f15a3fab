//! Per-block real FFT helpers.
//!
//! Spectra are stored split into real and imaginary planes, block after block,
//! `L / 2 + 1` bins per block. Inner products are evaluated directly in the
//! frequency domain with Parseval weights, so callers never need to go back to
//! the time domain just to measure similarity.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use realfft::num_complex::Complex;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

use super::{BlockVector, Dims};
use crate::error::{Error, Result};

/// Half spectrum of a block vector (or of a subset of its blocks).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl Spectrum {
    pub fn zeros(len: usize) -> Self {
        Self { re: vec![0.0; len], im: vec![0.0; len] }
    }

    /// The spectrum of the binding identity: all ones.
    pub fn ones(len: usize) -> Self {
        Self { re: vec![1.0; len], im: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }
}

pub struct SpectralPlan {
    l: usize,
    bins: usize,
    fwd: Arc<dyn RealToComplex<f64>>,
    inv: Arc<dyn ComplexToReal<f64>>,
    nu: Vec<f64>,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl std::fmt::Debug for SpectralPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralPlan").field("block_len", &self.l).finish()
    }
}

thread_local! {
    static PLANS: RefCell<HashMap<usize, Arc<SpectralPlan>>> = RefCell::new(HashMap::new());
}

impl SpectralPlan {
    pub fn new(l: usize) -> Self {
        let mut planner = RealFftPlanner::<f64>::new();
        let fwd = planner.plan_fft_forward(l);
        let inv = planner.plan_fft_inverse(l);
        let bins = l / 2 + 1;
        let nu = (0..bins)
            .map(|f| if f == 0 || (l % 2 == 0 && f == l / 2) { 1.0 / l as f64 } else { 2.0 / l as f64 })
            .collect();
        let cos = (0..l).map(|m| (2.0 * PI * m as f64 / l as f64).cos()).collect();
        let sin = (0..l).map(|m| (2.0 * PI * m as f64 / l as f64).sin()).collect();
        Self { l, bins, fwd, inv, nu, cos, sin }
    }

    /// A shared plan for block length `l`, cached per thread.
    pub fn cached(l: usize) -> Arc<Self> {
        PLANS.with(|p| p.borrow_mut().entry(l).or_insert_with(|| Arc::new(Self::new(l))).clone())
    }

    pub fn block_len(&self) -> usize {
        self.l
    }

    /// Number of half-spectrum bins per block.
    pub fn bins(&self) -> usize {
        self.bins
    }

    /// Parseval weight of each bin within a block.
    pub fn weights(&self) -> &[f64] {
        &self.nu
    }

    /// Transforms the listed blocks of a time-domain vector.
    pub fn forward_blocks(&self, data: &[f64], blocks: &[usize]) -> Spectrum {
        let l = self.l;
        let mut out = Spectrum::zeros(blocks.len() * self.bins);
        let mut input = self.fwd.make_input_vec();
        let mut output = self.fwd.make_output_vec();
        for (i, &b) in blocks.iter().enumerate() {
            input.copy_from_slice(&data[b * l..(b + 1) * l]);
            self.fwd.process(&mut input, &mut output).expect("fft buffer sizes are fixed by the plan");
            for (f, c) in output.iter().enumerate() {
                out.re[i * self.bins + f] = c.re;
                out.im[i * self.bins + f] = c.im;
            }
        }
        out
    }

    pub fn forward(&self, data: &[f64]) -> Spectrum {
        let blocks: Vec<usize> = (0..data.len() / self.l).collect();
        self.forward_blocks(data, &blocks)
    }

    /// Spectrum of a crisp vector given the active position of each (selected) block.
    pub fn crisp(&self, positions: &[usize]) -> Spectrum {
        let mut out = Spectrum::zeros(positions.len() * self.bins);
        for (i, &q) in positions.iter().enumerate() {
            for f in 0..self.bins {
                let m = (f * q) % self.l;
                out.re[i * self.bins + f] = self.cos[m];
                out.im[i * self.bins + f] = -self.sin[m];
            }
        }
        out
    }

    pub fn inverse(&self, s: &Spectrum) -> Vec<f64> {
        let blocks = s.len() / self.bins;
        let mut out = vec![0.0; blocks * self.l];
        let mut input = self.inv.make_input_vec();
        let mut output = self.inv.make_output_vec();
        let scale = 1.0 / self.l as f64;
        for b in 0..blocks {
            for (f, c) in input.iter_mut().enumerate() {
                *c = Complex::new(s.re[b * self.bins + f], s.im[b * self.bins + f]);
            }
            // a real signal has purely real DC and Nyquist bins
            input[0].im = 0.0;
            if self.l % 2 == 0 {
                input[self.bins - 1].im = 0.0;
            }
            self.inv.process(&mut input, &mut output).expect("fft buffer sizes are fixed by the plan");
            for (o, x) in out[b * self.l..(b + 1) * self.l].iter_mut().zip(&output) {
                *o = x * scale;
            }
        }
        out
    }

    /// Time-domain inner product evaluated on half spectra.
    pub fn inner(&self, a: &Spectrum, b: &Spectrum) -> f64 {
        let mut acc = 0.0;
        for (i, (ar, ai)) in a.re.chunks(self.bins).zip(a.im.chunks(self.bins)).enumerate() {
            let br = &b.re[i * self.bins..(i + 1) * self.bins];
            let bi = &b.im[i * self.bins..(i + 1) * self.bins];
            for f in 0..self.bins {
                acc += self.nu[f] * (ar[f] * br[f] + ai[f] * bi[f]);
            }
        }
        acc
    }
}

/// Binding through the frequency domain, `O(L log L)` per block.
pub fn bind_fft(a: &BlockVector, b: &BlockVector) -> Result<BlockVector> {
    if a.dims() != b.dims() {
        return Err(Error::Shape("bind_fft operands differ in shape".into()));
    }
    let dims: Dims = a.dims();
    let plan = SpectralPlan::cached(dims.block_len());
    let sa = plan.forward(a.data());
    let sb = plan.forward(b.data());
    let mut prod = Spectrum::zeros(sa.len());
    for f in 0..sa.len() {
        prod.re[f] = sa.re[f] * sb.re[f] - sa.im[f] * sb.im[f];
        prod.im[f] = sa.re[f] * sb.im[f] + sa.im[f] * sb.re[f];
    }
    // round-off can leave entries a hair below zero
    let data = plan.inverse(&prod).into_iter().map(|x| x.max(0.0)).collect();
    BlockVector::from_data(dims, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vsa::{bind, dot};

    #[test]
    fn parseval_inner_product() {
        let dims = Dims::new(64, 2).unwrap();
        let a: Vec<f64> = (0..64).map(|i| ((i * 7) % 11) as f64).collect();
        let b: Vec<f64> = (0..64).map(|i| ((i * 3) % 5) as f64).collect();
        let plan = SpectralPlan::new(dims.block_len());
        let got = plan.inner(&plan.forward(&a), &plan.forward(&b));
        assert!((got - dot(&a, &b)).abs() < 1e-9);
    }

    #[test]
    fn crisp_spectrum_matches_fft() {
        let plan = SpectralPlan::new(16);
        let mut v = vec![0.0; 32];
        v[5] = 1.0;
        v[16 + 11] = 1.0;
        let s = plan.forward(&v);
        let c = plan.crisp(&[5, 11]);
        for f in 0..s.len() {
            assert!((s.re[f] - c.re[f]).abs() < 1e-12 && (s.im[f] - c.im[f]).abs() < 1e-12);
        }
        let back = plan.inverse(&c);
        for (x, y) in back.iter().zip(&v) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn odd_block_length() {
        let plan = SpectralPlan::new(15);
        let a: Vec<f64> = (0..15).map(|i| (i % 4) as f64).collect();
        let s = plan.forward(&a);
        assert!((plan.inner(&s, &s) - dot(&a, &a)).abs() < 1e-9);
        let back = plan.inverse(&s);
        assert!(back.iter().zip(&a).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn fft_bind_matches_direct() {
        let dims = Dims::new(32, 4).unwrap();
        let a = BlockVector::from_data(dims, (0..32).map(|i| (i % 3) as f64 / 8.0).collect()).unwrap();
        let b = BlockVector::from_data(dims, (0..32).map(|i| (i % 5) as f64 / 10.0).collect()).unwrap();
        let d = bind(&a, &b).unwrap();
        let f = bind_fft(&a, &b).unwrap();
        for (x, y) in d.data().iter().zip(f.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
