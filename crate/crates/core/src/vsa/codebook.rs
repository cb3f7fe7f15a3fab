use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BlockVector, Dims};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodebookKind {
    /// Fractional power encoding: entry `k` is the base vector bound with itself `k` times.
    Fpe,
    /// Independent random crisp codewords.
    Categorical,
}

/// Canonical on-disk form of a codebook. Vectors are regenerated from it, never stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CodebookSpec {
    pub kind: CodebookKind,
    #[serde(rename = "D")]
    pub dim: usize,
    #[serde(rename = "B")]
    pub blocks: usize,
    pub size: usize,
    pub seed: u64,
}

/// An ordered family of crisp codewords addressed by integer index.
///
/// Only the active position of each block is stored; [`Codebook::vector`]
/// materializes the dense form.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    spec: CodebookSpec,
    dims: Dims,
    offsets: Vec<usize>,
    start: i64,
    hot: Vec<usize>,
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

pub fn new_codebook(seed: u64, size: usize, kind: CodebookKind, dims: Dims) -> Result<Codebook> {
    let dims = Dims::new(dims.dim, dims.blocks)?;
    Codebook::from_spec(CodebookSpec { kind, dim: dims.dim, blocks: dims.blocks, size, seed })
}

impl Codebook {
    pub fn from_spec(spec: CodebookSpec) -> Result<Self> {
        let dims = Dims::new(spec.dim, spec.blocks)?;
        let l = dims.block_len();
        if spec.size == 0 {
            return Err(Error::Range("codebook size must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let b = dims.blocks;
        let mut hot = Vec::with_capacity(spec.size * b);
        let (offsets, start) = match spec.kind {
            CodebookKind::Fpe => {
                if spec.size > l {
                    return Err(Error::Range(format!(
                        "fpe codebook of size {} exceeds block length {l}; exponents would wrap around",
                        spec.size
                    )));
                }
                // odd offsets coprime with L give a full-length cycle per block
                let candidates: Vec<usize> = (1..l).step_by(2).filter(|&p| gcd(p, l) == 1).collect();
                let offsets: Vec<usize> = (0..b).map(|_| candidates[rng.gen_range(0..candidates.len())]).collect();
                let start = -((spec.size / 2) as i64);
                for k in start..start + spec.size as i64 {
                    for &p in &offsets {
                        hot.push((k * p as i64).rem_euclid(l as i64) as usize);
                    }
                }
                (offsets, start)
            }
            CodebookKind::Categorical => {
                for _ in 0..spec.size * b {
                    hot.push(rng.gen_range(0..l));
                }
                (Vec::new(), 0)
            }
        };
        Ok(Self { spec, dims, offsets, start, hot })
    }

    pub fn spec(&self) -> CodebookSpec {
        self.spec
    }

    pub fn kind(&self) -> CodebookKind {
        self.spec.kind
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.spec.size
    }

    pub fn is_empty(&self) -> bool {
        self.spec.size == 0
    }

    /// Per-block generator shifts of the FPE base vector (empty for categorical codebooks).
    pub fn generator_offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// The contiguous integer interval of valid indices.
    pub fn index_range(&self) -> Range<i64> {
        self.start..self.start + self.spec.size as i64
    }

    pub fn contains(&self, k: i64) -> bool {
        self.index_range().contains(&k)
    }

    /// Active position of each block for codeword `k`.
    pub fn hot_positions(&self, k: i64) -> Result<&[usize]> {
        if !self.contains(k) {
            let r = self.index_range();
            return Err(Error::Range(format!("index {k} outside codebook range [{}, {})", r.start, r.end)));
        }
        let i = (k - self.start) as usize * self.dims.blocks;
        Ok(&self.hot[i..i + self.dims.blocks])
    }

    pub fn vector(&self, k: i64) -> Result<BlockVector> {
        Ok(BlockVector::crisp(self.dims, self.hot_positions(k)?))
    }
}
