//! Curvature for influence updates: a dense finite-difference Hessian and
//! the WoodFisher inverse built by rank-one Sherman-Morrison updates.

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{Classifier, LossSpec};

/// Largest parameter count accepted by the dense Hessian.
pub const EXACT_HESSIAN_MAX_PARAMS: usize = 2000;

/// Dense Hessian of the full objective on `ds` by central differences of
/// gradients, symmetrized.
pub fn exact_hessian(clf: &Classifier, ds: &Dataset, spec: &LossSpec, step: f64, exec: Exec) -> Result<DMatrix<f64>> {
    let p = clf.params.len();
    if p > EXACT_HESSIAN_MAX_PARAMS {
        return Err(Error::Capability(format!(
            "dense Hessian limited to {EXACT_HESSIAN_MAX_PARAMS} parameters, model has {p}"
        )));
    }
    if ds.is_empty() {
        return Err(Error::Domain("Hessian of an empty dataset".into()));
    }
    let cols = exec.try_map(p, |j| -> Result<Vec<f64>> {
        let mut plus = clf.params.clone();
        plus.values_mut()[j] += step;
        let mut minus = clf.params.clone();
        minus.values_mut()[j] -= step;
        let (_, gp) = clf.with_params(plus)?.loss_and_grad(ds, spec)?;
        let (_, gm) = clf.with_params(minus)?.loss_and_grad(ds, spec)?;
        Ok(gp.values().iter().zip(gm.values()).map(|(a, b)| (a - b) / (2.0 * step)).collect())
    })?;
    let h = DMatrix::from_fn(p, p, |i, j| cols[j][i]);
    Ok((&h + h.transpose()) * 0.5)
}

/// Solves `H x = b`: Cholesky, then Cholesky with `damping * I`, then LU.
pub fn solve_damped(h: &DMatrix<f64>, b: &[f64], damping: f64) -> Result<Vec<f64>> {
    let rhs = DVector::from_column_slice(b);
    if let Some(ch) = h.clone().cholesky() {
        return Ok(ch.solve(&rhs).iter().copied().collect());
    }
    let damped = h + DMatrix::identity(h.nrows(), h.ncols()) * damping;
    if let Some(ch) = damped.clone().cholesky() {
        return Ok(ch.solve(&rhs).iter().copied().collect());
    }
    match damped.lu().solve(&rhs) {
        Some(x) if x.iter().all(|v| v.is_finite()) => Ok(x.iter().copied().collect()),
        _ => Err(Error::Numeric("Hessian is singular after damping".into())),
    }
}

/// `(lambda I + (1/N) sum g g^T)^-1`, held in factored form
/// `(1/lambda) I - sum_j u_j u_j^T / c_j`.
#[derive(Debug, Clone)]
pub struct WoodFisher {
    lambda: f64,
    us: Vec<Vec<f64>>,
    cs: Vec<f64>,
    dim: usize,
}

impl WoodFisher {
    pub fn build(grads: &[Vec<f64>], lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::Config(format!("WoodFisher damping must be > 0, got {lambda}")));
        }
        let dim = grads.first().map_or(0, Vec::len);
        let n = grads.len() as f64;
        let mut wf = Self {
            lambda,
            us: Vec::with_capacity(grads.len()),
            cs: Vec::with_capacity(grads.len()),
            dim,
        };
        for g in grads {
            if g.len() != dim {
                return Err(Error::Shape("reference gradients differ in length".into()));
            }
            let u = wf.apply(g);
            let c = n + g.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>();
            wf.us.push(u);
            wf.cs.push(c);
        }
        Ok(wf)
    }

    /// `H^-1 v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = v.iter().map(|x| x / self.lambda).collect();
        for (u, c) in self.us.iter().zip(&self.cs) {
            let coef = u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / c;
            for (o, ui) in out.iter_mut().zip(u) {
                *o -= coef * ui;
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::identity(self.dim, self.dim) / self.lambda;
        for (u, c) in self.us.iter().zip(&self.cs) {
            let uv = DVector::from_column_slice(u);
            m -= &uv * uv.transpose() / *c;
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_blobs;
    use crate::model::Arch;
    use crate::numcore::RngStream;

    #[test]
    fn single_gradient_matches_the_sherman_morrison_formula() {
        let g = [1.0, -2.0, 0.5];
        let lambda = 0.5;
        let wf = WoodFisher::build(&[g.to_vec()], lambda).unwrap();
        let gn2: f64 = g.iter().map(|v| v * v).sum();
        let dense = wf.to_dense();
        for i in 0..3 {
            for j in 0..3 {
                let eye = if i == j { 1.0 / lambda } else { 0.0 };
                let want = eye - g[i] * g[j] / (lambda * lambda) / (1.0 + gn2 / lambda);
                assert!((dense[(i, j)] - want).abs() < 1e-14);
            }
        }
        let f = DMatrix::identity(3, 3) * lambda + DMatrix::from_fn(3, 3, |i, j| g[i] * g[j]);
        let prod = f * dense;
        assert!((prod - DMatrix::identity(3, 3)).abs().max() < 1e-12);
    }

    #[test]
    fn many_gradients_invert_the_damped_fisher() {
        let mut r = RngStream::new(1, 0);
        let grads: Vec<Vec<f64>> = (0..7).map(|_| (0..4).map(|_| r.standard_normal()).collect()).collect();
        let wf = WoodFisher::build(&grads, 0.1).unwrap();
        let mut f = DMatrix::identity(4, 4) * 0.1;
        for g in &grads {
            let v = DVector::from_column_slice(g);
            f += &v * v.transpose() / 7.0;
        }
        assert!((f * wf.to_dense() - DMatrix::identity(4, 4)).abs().max() < 1e-10);
        assert!(WoodFisher::build(&grads, 0.0).is_err());
    }

    #[test]
    fn ridge_hessian_is_constant_and_positive_definite() {
        let ds = make_blobs(10, 3, 3, 2.0, &RngStream::new(2, 0)).unwrap();
        let spec = LossSpec::ridge(0.1);
        let a = Classifier::init(Arch::Linear, 3, 3, &RngStream::new(2, 1)).unwrap();
        let b = Classifier::init(Arch::Linear, 3, 3, &RngStream::new(2, 2)).unwrap();
        let ha = exact_hessian(&a, &ds, &spec, 1e-4, Exec::Sequential).unwrap();
        let hb = exact_hessian(&b, &ds, &spec, 1e-4, Exec::Parallel { jobs: 2 }).unwrap();
        assert!((&ha - &hb).abs().max() < 1e-8);
        assert!(ha.clone().cholesky().is_some());
        assert!(ha.symmetric_eigenvalues().min() >= 0.1 - 1e-8);
    }

    #[test]
    fn damping_rescues_an_indefinite_matrix_and_zero_fails() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let x = solve_damped(&h, &[1.0, 1.0], 1e-4).unwrap();
        assert!((x[0] - 1.0 / 1.0001).abs() < 1e-12 && (x[1] - 1e4).abs() < 1e-6);
        let z = DMatrix::zeros(2, 2);
        assert!(matches!(solve_damped(&z, &[1.0, 1.0], 0.0), Err(Error::Numeric(_))));
    }
}
