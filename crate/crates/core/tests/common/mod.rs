//! Strategies and VSA algebra properties shared by the property suite and the acceptance run.
#![allow(dead_code)]

use arlc_core::vsa::{bind, bind_fft, decode, new_codebook, unbind, BlockVector, CodebookKind, Dims};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

pub const TOL: f64 = 1e-9;

/// Shapes from a single short block up to the default (1024, 4).
pub fn dims() -> impl Strategy<Value = Dims> {
    prop_oneof![Just((16, 1)), Just((32, 2)), Just((64, 4)), Just((96, 4)), Just((256, 8)), Just((1024, 4))]
        .prop_map(|(d, b)| Dims::new(d, b).unwrap())
}

/// A nonnegative vector whose blocks each sum to 1.
pub fn dense(dims: Dims) -> impl Strategy<Value = BlockVector> {
    prop::collection::vec(0.0f64..1.0, dims.dim).prop_map(move |mut v| {
        for block in v.chunks_mut(dims.block_len()) {
            let s: f64 = block.iter().sum::<f64>() + 1e-12;
            block.iter_mut().for_each(|x| *x /= s);
        }
        BlockVector::from_data(dims, v).unwrap()
    })
}

pub fn crisp(dims: Dims) -> impl Strategy<Value = BlockVector> {
    prop::collection::vec(0..dims.block_len(), dims.blocks).prop_map(move |p| BlockVector::crisp(dims, &p))
}

pub fn close(a: &BlockVector, b: &BlockVector, tol: f64) -> Result<(), TestCaseError> {
    for (i, (x, y)) in a.data().iter().zip(b.data()).enumerate() {
        prop_assert!((x - y).abs() <= tol, "entry {i}: {x} vs {y}");
    }
    Ok(())
}

pub fn pair() -> impl Strategy<Value = (BlockVector, BlockVector)> {
    dims().prop_flat_map(|d| (dense(d), dense(d)))
}

pub fn triple() -> impl Strategy<Value = (BlockVector, BlockVector, BlockVector)> {
    dims().prop_flat_map(|d| (dense(d), dense(d), dense(d)))
}

pub fn dense_and_crisp() -> impl Strategy<Value = (BlockVector, BlockVector)> {
    dims().prop_flat_map(|d| (dense(d), crisp(d)))
}

pub fn commutative((a, b): (BlockVector, BlockVector)) -> Result<(), TestCaseError> {
    close(&bind(&a, &b).unwrap(), &bind(&b, &a).unwrap(), TOL)
}

pub fn associative((a, b, c): (BlockVector, BlockVector, BlockVector)) -> Result<(), TestCaseError> {
    let left = bind(&bind(&a, &b).unwrap(), &c).unwrap();
    let right = bind(&a, &bind(&b, &c).unwrap()).unwrap();
    close(&left, &right, TOL)
}

pub fn identity((a, _): (BlockVector, BlockVector)) -> Result<(), TestCaseError> {
    let e = a.dims().identity();
    prop_assert_eq!(bind(&a, &e).unwrap(), a.clone());
    prop_assert_eq!(unbind(&a, &e).unwrap(), a);
    Ok(())
}

pub fn crisp_inverse((a, b): (BlockVector, BlockVector)) -> Result<(), TestCaseError> {
    prop_assert_eq!(unbind(&bind(&a, &b).unwrap(), &b).unwrap(), a);
    Ok(())
}

pub fn normalization((a, b): (BlockVector, BlockVector)) -> Result<(), TestCaseError> {
    for s in bind(&a, &b).unwrap().block_sums() {
        prop_assert!((s - 1.0).abs() < TOL);
    }
    Ok(())
}

pub fn fft_matches_direct((a, b): (BlockVector, BlockVector)) -> Result<(), TestCaseError> {
    close(&bind_fft(&a, &b).unwrap(), &bind(&a, &b).unwrap(), TOL)
}

/// `(seed, i, j)` with `i`, `j`, `i + j` and `i - j` all inside a 256-entry codebook.
pub fn fpe_case() -> impl Strategy<Value = (u64, i64, i64)> {
    (any::<u64>(), -64i64..64, -64i64..64)
}

pub fn fpe_homomorphism((seed, i, j): (u64, i64, i64)) -> Result<(), TestCaseError> {
    let cb = new_codebook(seed, 256, CodebookKind::Fpe, Dims::default()).unwrap();
    let (bi, bj) = (cb.vector(i).unwrap(), cb.vector(j).unwrap());
    let (k, c) = decode(&bind(&bi, &bj).unwrap(), &cb).unwrap();
    prop_assert_eq!(k, i + j);
    prop_assert!((c - 1.0).abs() < TOL);
    let (k, c) = decode(&unbind(&bi, &bj).unwrap(), &cb).unwrap();
    prop_assert_eq!(k, i - j);
    prop_assert!((c - 1.0).abs() < TOL);
    Ok(())
}
