//! Generalized sparse block codes (GSBC).
//!
//! A [`BlockVector`] is a nonnegative `D`-dimensional vector split into `B`
//! contiguous blocks of length `L = D / B`. Binding is block-wise circular
//! convolution, unbinding is block-wise circular correlation, bundling is a
//! weighted sum followed by per-block L1 normalization, and similarity is the
//! cosine over the full vector.
//!
//! With a fractional-power-encoded [`Codebook`], binding two codewords adds
//! their exponents and unbinding subtracts them, so integer arithmetic on
//! attribute values can be carried out directly in the vector space.

mod codebook;
mod spectral;

pub use codebook::{new_codebook, Codebook, CodebookKind, CodebookSpec};
pub use spectral::{bind_fft, SpectralPlan, Spectrum};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vector shape: total dimension and number of blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub dim: usize,
    pub blocks: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Self { dim: 1024, blocks: 4 }
    }
}

impl Dims {
    pub fn new(dim: usize, blocks: usize) -> Result<Self> {
        if blocks == 0 || dim == 0 {
            return Err(Error::Config(format!("dimension {dim} and block count {blocks} must be positive")));
        }
        if dim % blocks != 0 {
            return Err(Error::Config(format!("dimension {dim} is not divisible by block count {blocks}")));
        }
        if dim / blocks < 2 {
            return Err(Error::Config(format!("block length {} is below 2", dim / blocks)));
        }
        Ok(Self { dim, blocks })
    }

    #[inline]
    pub fn block_len(&self) -> usize {
        self.dim / self.blocks
    }

    /// The binding identity: a one-hot at position 0 in every block.
    pub fn identity(&self) -> BlockVector {
        BlockVector::crisp(*self, &vec![0; self.blocks])
    }
}

/// A dense nonnegative block vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockVector {
    dims: Dims,
    data: Vec<f64>,
}

impl BlockVector {
    pub fn zeros(dims: Dims) -> Self {
        Self { dims, data: vec![0.0; dims.dim] }
    }

    pub fn from_data(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.dim {
            return Err(Error::Shape(format!("expected {} entries, got {}", dims.dim, data.len())));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Validation(format!("entry {i} is {} (entries must be finite and >= 0)", data[i])));
        }
        Ok(Self { dims, data })
    }

    /// A crisp vector with one active entry per block at the given positions.
    ///
    /// Panics if `positions.len() != dims.blocks` or a position exceeds the block length.
    pub fn crisp(dims: Dims, positions: &[usize]) -> Self {
        assert_eq!(positions.len(), dims.blocks, "one position per block");
        let l = dims.block_len();
        let mut data = vec![0.0; dims.dim];
        for (b, &p) in positions.iter().enumerate() {
            assert!(p < l, "position {p} outside block of length {l}");
            data[b * l + p] = 1.0;
        }
        Self { dims, data }
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn block(&self, b: usize) -> &[f64] {
        let l = self.dims.block_len();
        &self.data[b * l..(b + 1) * l]
    }

    pub fn block_sums(&self) -> Vec<f64> {
        self.data.chunks(self.dims.block_len()).map(|c| c.iter().sum()).collect()
    }

    /// True when every block holds exactly one `1.0` and zeros elsewhere.
    pub fn is_crisp(&self) -> bool {
        self.data.chunks(self.dims.block_len()).all(|c| {
            c.iter().filter(|&&v| v == 1.0).count() == 1 && c.iter().all(|&v| v == 0.0 || v == 1.0)
        })
    }

    pub fn norm(&self) -> f64 {
        dot(&self.data, &self.data).sqrt()
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_same(a: &BlockVector, b: &BlockVector) -> Result<()> {
    if a.dims != b.dims {
        return Err(Error::Shape(format!(
            "operands have shapes (D={}, B={}) and (D={}, B={})",
            a.dims.dim, a.dims.blocks, b.dims.dim, b.dims.blocks
        )));
    }
    Ok(())
}

/// Block-wise circular convolution on raw slices (entries may be signed).
pub(crate) fn conv_blocks(a: &[f64], b: &[f64], l: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for ((oa, ba), bb) in out.chunks_mut(l).zip(a.chunks(l)).zip(b.chunks(l)) {
        for (i, &ai) in ba.iter().enumerate() {
            if ai == 0.0 {
                continue;
            }
            let (head, tail) = bb.split_at(l - i);
            for (o, &bj) in oa[i..].iter_mut().zip(head) {
                *o += ai * bj;
            }
            for (o, &bj) in oa[..i].iter_mut().zip(tail) {
                *o += ai * bj;
            }
        }
    }
    out
}

/// Block-wise circular correlation on raw slices: `out[k] = sum_j a[k + j] * b[j]`.
pub(crate) fn corr_blocks(a: &[f64], b: &[f64], l: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for ((oa, ba), bb) in out.chunks_mut(l).zip(a.chunks(l)).zip(b.chunks(l)) {
        for (j, &bj) in bb.iter().enumerate() {
            if bj == 0.0 {
                continue;
            }
            // out[k] += a[(k + j) mod l] * bj
            let (head, tail) = ba.split_at(j);
            for (o, &ak) in oa[..l - j].iter_mut().zip(tail) {
                *o += ak * bj;
            }
            for (o, &ak) in oa[l - j..].iter_mut().zip(head) {
                *o += ak * bj;
            }
        }
    }
    out
}

/// Binding: block-wise circular convolution.
pub fn bind(a: &BlockVector, b: &BlockVector) -> Result<BlockVector> {
    check_same(a, b)?;
    Ok(BlockVector { dims: a.dims, data: conv_blocks(&a.data, &b.data, a.dims.block_len()) })
}

/// Unbinding: block-wise circular correlation. Exactly inverts [`bind`] when `b` is crisp.
pub fn unbind(a: &BlockVector, b: &BlockVector) -> Result<BlockVector> {
    check_same(a, b)?;
    Ok(BlockVector { dims: a.dims, data: corr_blocks(&a.data, &b.data, a.dims.block_len()) })
}

/// Bundling: weighted sum followed by rescaling every block to sum 1.
pub fn bundle(vs: &[BlockVector], weights: &[f64]) -> Result<BlockVector> {
    let first = vs.first().ok_or_else(|| Error::Degenerate("bundle of zero vectors".into()))?;
    if vs.len() != weights.len() {
        return Err(Error::Shape(format!("{} vectors but {} weights", vs.len(), weights.len())));
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(Error::Validation(format!("bundle weight {w} is not a finite nonnegative number")));
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Err(Error::Degenerate("all bundle weights are zero".into()));
    }
    let dims = first.dims;
    let mut data = vec![0.0; dims.dim];
    for (v, &w) in vs.iter().zip(weights) {
        check_same(first, v)?;
        for (o, x) in data.iter_mut().zip(&v.data) {
            *o += w * x;
        }
    }
    for (b, block) in data.chunks_mut(dims.block_len()).enumerate() {
        let s: f64 = block.iter().sum();
        if s <= 0.0 {
            return Err(Error::Degenerate(format!("block {b} of the bundle sums to zero")));
        }
        block.iter_mut().for_each(|x| *x /= s);
    }
    Ok(BlockVector { dims, data })
}

/// Cosine similarity over the full vector.
pub fn cosine(a: &BlockVector, b: &BlockVector) -> Result<f64> {
    check_same(a, b)?;
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("cosine with an all-zero vector".into()));
    }
    Ok(dot(&a.data, &b.data) / (na * nb))
}

/// Projects a probability mass function over codebook indices into the vector space.
pub fn pmf_to_vector(pmf: &[(i64, f64)], cb: &Codebook) -> Result<BlockVector> {
    let total: f64 = pmf.iter().map(|(_, p)| p).sum();
    if let Some((k, p)) = pmf.iter().find(|(_, p)| !p.is_finite() || *p < 0.0) {
        return Err(Error::Validation(format!("mass {p} at index {k} is negative or non-finite")));
    }
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::Validation(format!("pmf sums to {total}, expected 1")));
    }
    let dims = cb.dims();
    let l = dims.block_len();
    let mut data = vec![0.0; dims.dim];
    for &(k, p) in pmf {
        for (b, &pos) in cb.hot_positions(k)?.iter().enumerate() {
            data[b * l + pos] += p;
        }
    }
    Ok(BlockVector { dims, data })
}

/// Nearest codeword by cosine; ties go to the lowest index.
pub fn decode(v: &BlockVector, cb: &Codebook) -> Result<(i64, f64)> {
    if v.dims != cb.dims() {
        return Err(Error::Shape("vector and codebook shapes differ".into()));
    }
    let n = v.norm();
    if n == 0.0 {
        return Err(Error::Degenerate("decode of an all-zero vector".into()));
    }
    let l = v.dims.block_len();
    let scale = n * (v.dims.blocks as f64).sqrt();
    let mut best: Option<(i64, f64)> = None;
    for k in cb.index_range() {
        let d: f64 = cb.hot_positions(k)?.iter().enumerate().map(|(b, &p)| v.data[b * l + p]).sum();
        let c = d / scale;
        if best.map_or(true, |(_, bc)| c > bc) {
            best = Some((k, c));
        }
    }
    best.ok_or_else(|| Error::Degenerate("empty codebook".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fpe() -> Codebook {
        new_codebook(7, 256, CodebookKind::Fpe, Dims::default()).unwrap()
    }

    #[test]
    fn identity_is_codeword_zero() {
        let cb = fpe();
        assert_eq!(cb.vector(0).unwrap(), Dims::default().identity());
    }

    #[test]
    fn bind_adds_exponents() {
        let cb = fpe();
        let v = bind(&cb.vector(2).unwrap(), &cb.vector(3).unwrap()).unwrap();
        assert_eq!(decode(&v, &cb).unwrap(), (5, 1.0));
        let w = bind(&cb.vector(3).unwrap(), &cb.vector(2).unwrap()).unwrap();
        assert_eq!(v, w);
    }

    #[test]
    fn unbind_subtracts_exponents() {
        let cb = fpe();
        let v = unbind(&cb.vector(5).unwrap(), &cb.vector(2).unwrap()).unwrap();
        assert_eq!(decode(&v, &cb).unwrap(), (3, 1.0));
        let neg = unbind(&Dims::default().identity(), &cb.vector(2).unwrap()).unwrap();
        assert_eq!(neg, cb.vector(-2).unwrap());
    }

    #[test]
    fn bundle_of_two_codewords() {
        let cb = fpe();
        let (b1, b2) = (cb.vector(1).unwrap(), cb.vector(2).unwrap());
        let m = bundle(&[b1.clone(), b2.clone()], &[1.0, 1.0]).unwrap();
        let (c1, c2) = (cosine(&m, &b1).unwrap(), cosine(&m, &b2).unwrap());
        assert!((c1 - c2).abs() < 1e-15);
        assert!((c1 - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        let (k, s) = decode(&m, &cb).unwrap();
        assert_eq!(k, 1);
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);

        let skew = bundle(&[b1.clone(), b2.clone()], &[3.0, 1.0]).unwrap();
        assert!(cosine(&skew, &b1).unwrap() > cosine(&skew, &b2).unwrap());
        assert_eq!(bundle(&[b1.clone()], &[1.0]).unwrap(), b1);
    }

    #[test]
    fn bundle_rejects_zero_weights() {
        let cb = fpe();
        let err = bundle(&[cb.vector(1).unwrap()], &[0.0]).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
    }

    #[test]
    fn distinct_codewords_are_orthogonal() {
        let cb = fpe();
        assert_eq!(cosine(&cb.vector(3).unwrap(), &cb.vector(9).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn cosine_of_zero_vector_is_an_error() {
        let z = BlockVector::zeros(Dims::default());
        assert!(matches!(cosine(&z, &Dims::default().identity()), Err(Error::Degenerate(_))));
        assert!(matches!(decode(&z, &fpe()), Err(Error::Degenerate(_))));
    }

    #[test]
    fn shape_mismatch() {
        let a = Dims::default().identity();
        let b = Dims::new(512, 4).unwrap().identity();
        assert!(matches!(bind(&a, &b), Err(Error::Shape(_))));
        assert!(matches!(unbind(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn pmf_projection() {
        let cb = fpe();
        assert_eq!(pmf_to_vector(&[(4, 1.0)], &cb).unwrap(), cb.vector(4).unwrap());
        let u = pmf_to_vector(&[(1, 0.5), (2, 0.5)], &cb).unwrap();
        let (c1, c2) = (cosine(&u, &cb.vector(1).unwrap()).unwrap(), cosine(&u, &cb.vector(2).unwrap()).unwrap());
        assert_eq!(c1, c2);
        let skew = pmf_to_vector(&[(1, 0.9), (2, 0.1)], &cb).unwrap();
        assert_eq!(decode(&skew, &cb).unwrap().0, 1);
        assert!(skew.block_sums().iter().all(|s| (s - 1.0).abs() < 1e-9));

        assert!(matches!(pmf_to_vector(&[(1, 0.5)], &cb), Err(Error::Validation(_))));
        assert!(matches!(pmf_to_vector(&[(500, 1.0)], &cb), Err(Error::Range(_))));
    }

    #[test]
    fn crisp_inverse_on_soft_input() {
        let cb = fpe();
        let a = pmf_to_vector(&[(1, 0.2), (4, 0.3), (-7, 0.5)], &cb).unwrap();
        let b = cb.vector(11).unwrap();
        let back = unbind(&bind(&a, &b).unwrap(), &b).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn dims_validation() {
        assert!(matches!(Dims::new(1000, 3), Err(Error::Config(_))));
        assert!(Dims::new(64, 2).is_ok());
    }
}
