use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::rpm::{derive_seed, Attribute, Grid};
use crate::vsa::{new_codebook, BlockVector, Codebook, CodebookKind, Dims, SpectralPlan, Spectrum};

/// Codeword count of the position codebook: one id per mask of up to nine slots.
const POSITION_CODES: usize = 512;

/// Attribute codebooks. Type, size, color and number use FPE codebooks so that
/// binding adds values; position masks get independent random codewords.
#[derive(Debug, Clone)]
pub struct Encoder {
    dims: Dims,
    codebooks: BTreeMap<Attribute, Codebook>,
    reduce: bool,
}

impl Encoder {
    pub fn new(dims: Dims, seed: u64) -> Result<Self> {
        let seeds = Attribute::ALL.iter().enumerate().map(|(i, a)| (*a, derive_seed(seed, i as u64))).collect();
        Self::from_seeds(dims, &seeds)
    }

    pub fn from_seeds(dims: Dims, seeds: &BTreeMap<Attribute, u64>) -> Result<Self> {
        let mut codebooks = BTreeMap::new();
        for attr in Attribute::ALL {
            let seed = *seeds.get(&attr).ok_or_else(|| Error::Contract(format!("no codebook seed for {attr}")))?;
            let cb = match attr {
                Attribute::Position => new_codebook(seed, POSITION_CODES, CodebookKind::Categorical, dims)?,
                _ => new_codebook(seed, dims.block_len(), CodebookKind::Fpe, dims)?,
            };
            codebooks.insert(attr, cb);
        }
        Ok(Self { dims, codebooks, reduce: true })
    }

    /// Turns the exact small-group evaluation of FPE attributes on or off (on by default).
    ///
    /// FPE codewords only ever meet through sums of a bounded number of values,
    /// so whenever those sums cannot wrap around the block, every similarity the
    /// model computes is the same in any cyclic group large enough to hold them.
    /// Evaluating in the smallest such group is exact and much cheaper.
    pub fn with_reduction(mut self, reduce: bool) -> Self {
        self.reduce = reduce;
        self
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn seeds(&self) -> BTreeMap<Attribute, u64> {
        self.codebooks.iter().map(|(a, cb)| (*a, cb.spec().seed)).collect()
    }

    pub fn codebook(&self, attr: Attribute) -> &Codebook {
        &self.codebooks[&attr]
    }

    pub fn vector(&self, attr: Attribute, value: i64) -> Result<BlockVector> {
        self.codebook(attr).vector(value)
    }

    pub fn grid_vectors(&self, attr: Attribute, grid: &Grid) -> Result<[[BlockVector; 3]; 3]> {
        let v = |i: usize, j: usize| self.vector(attr, grid[i][j]);
        Ok([[v(0, 0)?, v(0, 1)?, v(0, 2)?], [v(1, 0)?, v(1, 1)?, v(1, 2)?], [v(2, 0)?, v(2, 1)?, v(2, 2)?]])
    }

    /// Frequency-domain view of one attribute grid. `panels[8]` may be unknown.
    /// `extra` lists further values (candidates) that will be encoded in the frame.
    pub(crate) fn frame(&self, attr: Attribute, panels: &[Option<i64>; 9], extra: &[i64], terms: usize) -> Result<Frame<'_>> {
        let cb = self.codebook(attr);
        let known = panels.iter().flatten().chain(extra);
        for &v in known.clone() {
            if !cb.contains(v) {
                let r = cb.index_range();
                return Err(Error::Range(format!("{attr} value {v} outside codebook range [{}, {})", r.start, r.end)));
            }
        }
        let l = self.dims.block_len();
        let coder = if cb.kind() == CodebookKind::Fpe {
            let lo = known.clone().copied().min().unwrap_or(0).min(0);
            let hi = known.copied().max().unwrap_or(0).max(0);
            // every value a rule of `terms` terms produces lies in
            // [terms/2 * (lo-hi), terms/2 * (hi-lo)]; the common floor of 12 keeps
            // smaller templates on the same grid as the default one
            let width = terms.max(12) as i64 * (hi - lo);
            let m = ((width + 1) as usize).next_power_of_two().max(2);
            if self.reduce && m < l {
                Coder::Residue { m }
            } else {
                Coder::Blocks { codebook: cb, blocks: vec![0] }
            }
        } else {
            Coder::Blocks { codebook: cb, blocks: (0..self.dims.blocks).collect() }
        };
        let plan = match coder {
            Coder::Residue { m } => SpectralPlan::cached(m),
            Coder::Blocks { .. } => SpectralPlan::cached(l),
        };
        let channels = match &coder {
            Coder::Residue { .. } => 1,
            Coder::Blocks { blocks, .. } => blocks.len(),
        };
        let bins = plan.bins();
        let nu = (0..channels).flat_map(|_| plan.weights().iter().copied()).collect();
        let mut frame = Frame { plan, coder, n: channels * bins, nu, values: *panels, panels: Vec::with_capacity(9) };
        for p in panels {
            let s = match p {
                Some(v) => Some(frame.encode(*v)?),
                None => None,
            };
            frame.panels.push(s);
        }
        Ok(frame)
    }
}

#[derive(Debug)]
enum Coder<'a> {
    /// Single channel in the cyclic group of order `m`; value `v` sits at `v mod m`.
    Residue { m: usize },
    /// The listed blocks of the real codewords.
    Blocks { codebook: &'a Codebook, blocks: Vec<usize> },
}

#[derive(Debug)]
pub(crate) struct Frame<'a> {
    plan: Arc<SpectralPlan>,
    coder: Coder<'a>,
    /// Spectrum length: channels times bins.
    pub n: usize,
    /// Parseval weight of every spectrum entry.
    pub nu: Vec<f64>,
    pub values: [Option<i64>; 9],
    pub panels: Vec<Option<Spectrum>>,
}

impl Frame<'_> {
    pub fn encode(&self, value: i64) -> Result<Spectrum> {
        match &self.coder {
            Coder::Residue { m } => Ok(self.plan.crisp(&[value.rem_euclid(*m as i64) as usize])),
            Coder::Blocks { codebook, blocks } => {
                let hot = codebook.hot_positions(value)?;
                let pos: Vec<usize> = blocks.iter().map(|&b| hot[b]).collect();
                Ok(self.plan.crisp(&pos))
            }
        }
    }

    pub fn panel(&self, i: usize) -> Result<&Spectrum> {
        self.panels[i].as_ref().ok_or_else(|| Error::Contract(format!("panel ({},{}) is not available", i / 3 + 1, i % 3 + 1)))
    }

    pub fn inner(&self, a: &Spectrum, b: &Spectrum) -> f64 {
        let mut acc = [0.0; 4];
        let n = self.n;
        let (nu, ar, ai, br, bi) = (&self.nu[..n], &a.re[..n], &a.im[..n], &b.re[..n], &b.im[..n]);
        let mut f = 0;
        while f + 4 <= n {
            for j in 0..4 {
                acc[j] += nu[f + j] * (ar[f + j] * br[f + j] + ai[f + j] * bi[f + j]);
            }
            f += 4;
        }
        let mut tail = 0.0;
        for f in f..n {
            tail += nu[f] * (ar[f] * br[f] + ai[f] * bi[f]);
        }
        acc.iter().sum::<f64>() + tail
    }
}
