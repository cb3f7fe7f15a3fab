use crate::error::{Error, Result};

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// `max_i |analytic_i - numeric_i| / max(1, |numeric_i|)`.
    pub max_rel_error: f64,
    /// Coordinate where the maximum was attained.
    pub worst: usize,
}

/// Compares an analytic gradient with central differences.
///
/// `f` returns the objective value together with its analytic gradient; only
/// the value is used at the perturbed points.
pub fn finite_diff_check<F>(mut f: F, params: &[f64], eps: f64) -> Result<GradCheck>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Config(format!("finite-difference step {eps} outside [1e-7, 1e-3]")));
    }
    let (v0, analytic) = f(params)?;
    if !v0.is_finite() {
        return Err(Error::Numerical { coordinate: 0, message: format!("objective is {v0} at the base point") });
    }
    if analytic.len() != params.len() {
        return Err(Error::Shape(format!("gradient has {} entries for {} parameters", analytic.len(), params.len())));
    }
    let mut x = params.to_vec();
    let mut out = GradCheck { max_rel_error: 0.0, worst: 0 };
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let (fp, _) = f(&x)?;
        x[i] = orig - eps;
        let (fm, _) = f(&x)?;
        x[i] = orig;
        let numeric = (fp - fm) / (2.0 * eps);
        if !numeric.is_finite() || !analytic[i].is_finite() {
            return Err(Error::Numerical {
                coordinate: i,
                message: format!("analytic {} vs numeric {numeric}", analytic[i]),
            });
        }
        let err = (analytic[i] - numeric).abs() / numeric.abs().max(1.0);
        if err > out.max_rel_error {
            out = GradCheck { max_rel_error: err, worst: i };
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::{ParamBlock, Tape};
    use crate::vsa::Dims;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quadratic_is_exact() {
        let x = vec![0.3, -1.2, 2.0, 0.01];
        let r = finite_diff_check(|p| Ok((p.iter().map(|v| v * v).sum(), p.iter().map(|v| 2.0 * v).collect())), &x, 1e-5)
            .unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }

    #[test]
    fn constant_function() {
        let r = finite_diff_check(|p| Ok((4.0, vec![0.0; p.len()])), &[1.0, 2.0], 1e-4).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
    }

    #[test]
    fn step_out_of_range() {
        assert!(matches!(finite_diff_check(|p| Ok((0.0, p.to_vec())), &[1.0], 0.1), Err(Error::Config(_))));
    }

    #[test]
    fn reports_non_finite_coordinate() {
        let err = finite_diff_check(
            |p| Ok((if p[1] > 1.0 { f64::NAN } else { p[0] }, vec![1.0, 0.0])),
            &[0.0, 1.0],
            1e-5,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Numerical { coordinate: 1, .. }), "{err:?}");
    }

    /// cos(softmax(z1) . basis (*) softmax(z2) . basis (/) softmax(z3) . basis, target) at D = 64
    fn bind_chain(p: &[f64], basis: &[Vec<f64>], target: &[f64], dims: Dims) -> Result<(f64, Vec<f64>)> {
        let k = basis.len();
        let mut params = vec![ParamBlock::new("logits", p.to_vec())];
        let mut tape = Tape::new();
        let z = tape.param(0, &params[0]);
        let bs: Vec<_> = basis.iter().map(|b| tape.constant(b.clone())).collect();
        let mut terms = Vec::new();
        for t in 0..3 {
            let zt = tape.slice(z, t * k, k)?;
            let w = tape.softmax(zt, 1.0)?;
            terms.push(tape.weighted_sum(&bs, w)?);
        }
        let ab = tape.bind(terms[0], terms[1], dims)?;
        let r = tape.unbind(ab, terms[2], dims)?;
        let t = tape.constant(target.to_vec());
        let c = tape.cosine(r, t)?;
        tape.backward(c, &mut params)?;
        Ok((tape.scalar(c), params.remove(0).gradient))
    }

    #[test]
    fn bind_chain_matches_central_differences() {
        let dims = Dims::new(64, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let basis: Vec<Vec<f64>> = (0..4).map(|_| (0..64).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
            let target: Vec<f64> = (0..64).map(|_| rng.gen_range(0.0..1.0)).collect();
            let z: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let r = finite_diff_check(|p| bind_chain(p, &basis, &target, dims), &z, 1e-5).unwrap();
            assert!(r.max_rel_error < 1e-4, "{r:?}");
        }
    }
}
