//! Component monotone operators and their resolvents.
//!
//! Every family acts on a sample `(a, y)` and produces an output supported on
//! the sample's features (plus the three AUC tail coordinates). The l2 term
//! `lambda * z` is never folded into a family resolvent; it is applied by
//! [`wrap_l2_resolvent`], which rescales the input and the step.

use nalgebra::{DMatrix, Matrix4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::sparse::SparseVec;

pub const DEFAULT_NEWTON_ITERS: usize = 20;
const NEWTON_STOP: f64 = 1e-14;

/// Number of extra coordinates `[a; b; theta]` appended to `w` for AUC.
pub const AUC_TAIL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Ridge,
    Logistic,
    Auc,
}

impl Family {
    pub fn operating_dim(self, data_dim: usize) -> usize {
        match self {
            Family::Auc => data_dim + AUC_TAIL,
            _ => data_dim,
        }
    }

    pub fn is_classification(self) -> bool {
        !matches!(self, Family::Ridge)
    }
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ridge" => Ok(Family::Ridge),
            "logistic" => Ok(Family::Logistic),
            "auc" => Ok(Family::Auc),
            other => Err(Error::InvalidArgument(format!("unknown family {other:?}"))),
        }
    }
}

/// One component operator `B_{n,i}` bound to its sample.
#[derive(Debug, Clone, Copy)]
pub struct OperatorSpec<'a> {
    pub family: Family,
    pub sample: &'a Sample,
    /// Global positive ratio; only read by the AUC family.
    pub p: f64,
    pub lambda: f64,
    pub dim: usize,
}

impl<'a> OperatorSpec<'a> {
    pub fn new(family: Family, sample: &'a Sample, p: f64, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
        }
        if family.is_classification() && sample.label != 1.0 && sample.label != -1.0 {
            return Err(Error::InvalidArgument(format!(
                "{family:?} needs labels in {{-1, +1}}, line {} has {}",
                sample.line, sample.label
            )));
        }
        if family == Family::Auc && !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidArgument(format!("AUC needs 0 < p < 1, got {p}")));
        }
        Ok(Self::new_unchecked(family, sample, p, lambda))
    }

    pub(crate) fn new_unchecked(family: Family, sample: &'a Sample, p: f64, lambda: f64) -> Self {
        OperatorSpec {
            family,
            sample,
            p,
            lambda,
            dim: family.operating_dim(sample.features.dim()),
        }
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got,
            });
        }
        Ok(())
    }

    fn features(&self) -> &SparseVec {
        &self.sample.features
    }

    fn positive(&self) -> bool {
        self.sample.label > 0.0
    }

    /// Unregularized `B(z)`, supported on the sample (plus AUC tail).
    pub fn eval_unreg(&self, z: &[f64]) -> Result<SparseVec> {
        self.check_dim(z.len())?;
        let a = self.features();
        let s = a.dot_dense(z);
        let y = self.sample.label;
        let (coef, tail) = match self.family {
            Family::Ridge => (s - y, None),
            Family::Logistic => (logistic_coef(y, s), None),
            Family::Auc => {
                let d = a.dim();
                let (off_a, off_b, theta) = (z[d], z[d + 1], z[d + 2]);
                let p = self.p;
                if self.positive() {
                    let c = 2.0 * (1.0 - p);
                    (
                        c * ((s - off_a) - (1.0 + theta)),
                        Some([-c * (s - off_a), 0.0, 2.0 * p * (1.0 - p) * theta + c * s]),
                    )
                } else {
                    let c = 2.0 * p;
                    (
                        c * ((s - off_b) + (1.0 + theta)),
                        Some([0.0, -c * (s - off_b), 2.0 * p * (1.0 - p) * theta - c * s]),
                    )
                }
            }
        };
        let mut indices = a.indices().to_vec();
        let mut values: Vec<f64> = a.values().iter().map(|v| coef * v).collect();
        if let Some(tail) = tail {
            let d = a.dim();
            indices.extend([d, d + 1, d + 2]);
            values.extend(tail);
        }
        Ok(SparseVec::new(self.dim, indices, values))
    }

    /// Regularized `B(z) + lambda z`, dense.
    pub fn eval(&self, z: &[f64]) -> Result<Vec<f64>> {
        let b = self.eval_unreg(z)?;
        let mut out: Vec<f64> = z.iter().map(|v| self.lambda * v).collect();
        b.axpy_into(1.0, &mut out);
        Ok(out)
    }

    /// `J_{alpha B}` for the family, ignoring lambda.
    pub fn resolvent_unreg(&self, alpha: f64, psi: &[f64], newton_iters: usize) -> Result<Vec<f64>> {
        let mut out = psi.to_vec();
        self.resolve_unreg_in_place(alpha, &mut out, newton_iters)?;
        Ok(out)
    }

    pub fn resolve_unreg_in_place(&self, alpha: f64, psi: &mut [f64], newton_iters: usize) -> Result<()> {
        self.check_dim(psi.len())?;
        if !(alpha > 0.0) {
            return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
        }
        match self.family {
            Family::Ridge => ridge_in_place(self, alpha, psi),
            Family::Logistic => logistic_in_place(self, alpha, psi, newton_iters)?,
            Family::Auc => auc_in_place(self, alpha, psi)?,
        }
        Ok(())
    }

    /// `J_{alpha (B + lambda I)}(psi)`, computed in place through the l2 wrapper.
    pub fn resolve_in_place(&self, alpha: f64, psi: &mut [f64], newton_iters: usize) -> Result<()> {
        let rho = l2_scaling(self.lambda, alpha);
        if rho != 1.0 {
            for v in psi.iter_mut() {
                *v *= rho;
            }
        }
        self.resolve_unreg_in_place(rho * alpha, psi, newton_iters)
    }

    pub fn resolve(&self, alpha: f64, psi: &[f64], newton_iters: usize) -> Result<Vec<f64>> {
        let mut out = psi.to_vec();
        self.resolve_in_place(alpha, &mut out, newton_iters)?;
        Ok(out)
    }

    /// Lipschitz constant of the unregularized operator.
    pub fn lipschitz(&self) -> f64 {
        let n2 = self.features().norm_sq();
        match self.family {
            Family::Ridge => n2,
            Family::Logistic => n2 / 4.0,
            Family::Auc => auc_reduced_matrix(self.p, n2, self.positive()).singular_values().max(),
        }
    }

    /// `J += scale * dB/dz` (unregularized) at `z`.
    pub fn jacobian_add(&self, z: &[f64], scale: f64, jac: &mut DMatrix<f64>) -> Result<()> {
        self.check_dim(z.len())?;
        let a = self.features();
        let outer = |jac: &mut DMatrix<f64>, c: f64| {
            for (i, vi) in a.iter() {
                for (j, vj) in a.iter() {
                    jac[(i, j)] += c * vi * vj;
                }
            }
        };
        match self.family {
            Family::Ridge => outer(jac, scale),
            Family::Logistic => {
                let s = a.dot_dense(z);
                let sig = 1.0 / (1.0 + (self.sample.label * s).exp());
                outer(jac, scale * sig * (1.0 - sig));
            }
            Family::Auc => {
                let d = a.dim();
                let p = self.p;
                let (c, off, sign_theta) = if self.positive() {
                    (2.0 * (1.0 - p), d, -1.0)
                } else {
                    (2.0 * p, d + 1, 1.0)
                };
                let th = d + 2;
                outer(jac, scale * c);
                for (i, v) in a.iter() {
                    jac[(i, off)] -= scale * c * v;
                    jac[(i, th)] += scale * sign_theta * c * v;
                    jac[(off, i)] -= scale * c * v;
                    jac[(th, i)] -= scale * sign_theta * c * v;
                }
                jac[(off, off)] += scale * c;
                jac[(th, th)] += scale * 2.0 * p * (1.0 - p);
            }
        }
        Ok(())
    }
}

/// Family plus the global constants every component operator shares.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub family: Family,
    /// Positive-class ratio over the whole dataset (AUC only).
    pub p: f64,
    pub lambda: f64,
}

impl Problem {
    pub fn new(family: Family, p: f64, lambda: f64) -> Self {
        Problem { family, p, lambda }
    }

    pub fn op<'a>(&self, sample: &'a Sample) -> OperatorSpec<'a> {
        OperatorSpec::new_unchecked(self.family, sample, self.p, self.lambda)
    }

    /// Checks labels, `p` and `lambda` against every sample once.
    pub fn validate<'a>(&self, samples: impl IntoIterator<Item = &'a Sample>) -> Result<()> {
        for s in samples {
            OperatorSpec::new(self.family, s, self.p, self.lambda)?;
        }
        Ok(())
    }

    pub fn dim(&self, data_dim: usize) -> usize {
        self.family.operating_dim(data_dim)
    }

    /// `max_i L_i + lambda`, the constant used for the default step size.
    pub fn lipschitz<'a>(&self, samples: impl IntoIterator<Item = &'a Sample>) -> f64 {
        let l = samples
            .into_iter()
            .map(|s| self.op(s).lipschitz())
            .fold(0.0, f64::max);
        l + self.lambda
    }
}

fn logistic_coef(y: f64, s: f64) -> f64 {
    -y / (1.0 + (y * s).exp())
}

/// `1 - lambda alpha / (1 + lambda alpha)`.
pub fn l2_scaling(lambda: f64, alpha: f64) -> f64 {
    1.0 - lambda * alpha / (1.0 + lambda * alpha)
}

/// Resolvent of `B + lambda I` from a resolvent of `B`:
/// `J_{alpha (B + lambda I)}(z) = J_{rho alpha B}(rho z)`.
pub fn wrap_l2_resolvent<F>(resolvent_of_b: F, lambda: f64, alpha: f64, z: &[f64]) -> Result<Vec<f64>>
where
    F: FnOnce(f64, &[f64]) -> Result<Vec<f64>>,
{
    if !(lambda >= 0.0) || !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need lambda >= 0 and alpha > 0, got lambda={lambda}, alpha={alpha}"
        )));
    }
    let rho = l2_scaling(lambda, alpha);
    let scaled: Vec<f64> = z.iter().map(|v| rho * v).collect();
    resolvent_of_b(rho * alpha, &scaled)
}

fn require(op: &OperatorSpec<'_>, family: Family) -> Result<()> {
    if op.family != family {
        return Err(Error::InvalidArgument(format!(
            "expected a {family:?} operator, got {:?}",
            op.family
        )));
    }
    Ok(())
}

/// Closed-form ridge resolvent.
pub fn resolvent_ridge(op: &OperatorSpec<'_>, alpha: f64, psi: &[f64]) -> Result<Vec<f64>> {
    require(op, Family::Ridge)?;
    op.resolvent_unreg(alpha, psi, 0)
}

/// Logistic resolvent by a scalar Newton iteration on `a^T z`.
pub fn resolvent_logistic(
    op: &OperatorSpec<'_>,
    alpha: f64,
    psi: &[f64],
    newton_iters: usize,
) -> Result<Vec<f64>> {
    require(op, Family::Logistic)?;
    if newton_iters == 0 {
        return Err(Error::InvalidArgument("newton_iters must be >= 1".into()));
    }
    op.resolvent_unreg(alpha, psi, newton_iters)
}

/// Closed-form AUC resolvent via a 4x4 linear solve.
pub fn resolvent_auc(op: &OperatorSpec<'_>, alpha: f64, psi: &[f64]) -> Result<Vec<f64>> {
    require(op, Family::Auc)?;
    op.resolvent_unreg(alpha, psi, 0)
}

// z = psi - alpha (s - y) a with s = (a^T psi + alpha |a|^2 y) / (1 + alpha |a|^2).
fn ridge_in_place(op: &OperatorSpec<'_>, alpha: f64, psi: &mut [f64]) {
    let a = op.features();
    let y = op.sample.label;
    let n2 = a.norm_sq();
    let s = (a.dot_dense(psi) + alpha * n2 * y) / (1.0 + alpha * n2);
    a.axpy_into(-alpha * (s - y), psi);
}

// Solves s + alpha |a|^2 e(s) = b with e(s) = -y / (1 + exp(y s)), b = a^T psi.
fn logistic_in_place(op: &OperatorSpec<'_>, alpha: f64, psi: &mut [f64], iters: usize) -> Result<()> {
    let a = op.features();
    let y = op.sample.label;
    let n2 = a.norm_sq();
    let b = a.dot_dense(psi);
    let g = |s: f64| s + alpha * n2 * logistic_coef(y, s) - b;

    // |e| < 1 brackets the root in [b - alpha |a|^2, b + alpha |a|^2]; Newton
    // steps leaving the bracket are replaced by bisection.
    let (mut lo, mut hi) = (b - alpha * n2, b + alpha * n2);
    let mut s = 0.0f64.clamp(lo, hi);
    for _ in 0..iters {
        let gs = g(s);
        if gs == 0.0 {
            break;
        }
        if gs > 0.0 {
            hi = s;
        } else {
            lo = s;
        }
        let e = logistic_coef(y, s);
        let step = gs / (1.0 - alpha * n2 * (y * e + e * e));
        let next = s - step;
        s = if next.is_finite() && next >= lo && next <= hi { next } else { 0.5 * (lo + hi) };
        if step.abs() < NEWTON_STOP {
            break;
        }
    }
    if !s.is_finite() {
        return Err(Error::Numerical(format!(
            "logistic resolvent produced {s} (alpha={alpha}, a^T psi={b})"
        )));
    }
    if n2 > 0.0 {
        a.axpy_into(-(b - s) / n2, psi);
    }
    Ok(())
}

/// Nontrivial block of the AUC operator in the basis `(a/|a|, a, b, theta)`.
fn auc_reduced_matrix(p: f64, n2: f64, positive: bool) -> Matrix4<f64> {
    let n = n2.sqrt();
    let t = 2.0 * p * (1.0 - p);
    if positive {
        let c = 2.0 * (1.0 - p);
        Matrix4::new(
            c * n2, -c * n, 0.0, -c * n, //
            -c * n, c, 0.0, 0.0, //
            0.0, 0.0, 0.0, 0.0, //
            c * n, 0.0, 0.0, t,
        )
    } else {
        let c = 2.0 * p;
        Matrix4::new(
            c * n2, 0.0, -c * n, c * n, //
            0.0, 0.0, 0.0, 0.0, //
            -c * n, 0.0, c, 0.0, //
            -c * n, 0.0, 0.0, t,
        )
    }
}

fn auc_in_place(op: &OperatorSpec<'_>, alpha: f64, psi: &mut [f64]) -> Result<()> {
    let a = op.features();
    let d = a.dim();
    let p = op.p;
    let n2 = a.norm_sq();
    let s0 = a.dot_dense(psi);
    let (off_a, off_b, theta) = (psi[d], psi[d + 1], psi[d + 2]);
    let t = 1.0 + 2.0 * p * (1.0 - p) * alpha;
    if op.positive() {
        let c = 2.0 * (1.0 - p) * alpha;
        let m = [
            [1.0 + c * n2, -c * n2, 0.0, -c * n2],
            [-c, 1.0 + c, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [c, 0.0, 0.0, t],
        ];
        let r = solve4(m, [s0 + c * n2, off_a, off_b, theta])?;
        a.axpy_into(-c * ((r[0] - r[1]) - (1.0 + r[3])), psi);
        psi[d..d + 3].copy_from_slice(&r[1..]);
    } else {
        let c = 2.0 * p * alpha;
        let m = [
            [1.0 + c * n2, 0.0, -c * n2, c * n2],
            [0.0, 1.0, 0.0, 0.0],
            [-c, 0.0, 1.0 + c, 0.0],
            [-c, 0.0, 0.0, t],
        ];
        let r = solve4(m, [s0 - c * n2, off_a, off_b, theta])?;
        a.axpy_into(-c * ((r[0] - r[2]) + (1.0 + r[3])), psi);
        psi[d..d + 3].copy_from_slice(&r[1..]);
    }
    Ok(())
}

/// Gaussian elimination with partial pivoting.
pub fn solve4(mut m: [[f64; 4]; 4], mut rhs: [f64; 4]) -> Result<[f64; 4]> {
    for col in 0..4 {
        let piv = (col..4)
            .max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap())
            .unwrap();
        if !(m[piv][col].abs() > 1e-300) {
            return Err(Error::Singular(4));
        }
        m.swap(col, piv);
        rhs.swap(col, piv);
        for row in col + 1..4 {
            let f = m[row][col] / m[col][col];
            if f != 0.0 {
                for k in col..4 {
                    m[row][k] -= f * m[col][k];
                }
                rhs[row] -= f * rhs[col];
            }
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let tail: f64 = (row + 1..4).map(|k| m[row][k] * x[k]).sum();
        x[row] = (rhs[row] - tail) / m[row][row];
    }
    Ok(x)
}

/// Empirical strong-monotonicity modulus of `B + lambda I`: the minimum of
/// `<B(x) - B(y), x - y> / |x - y|^2` over random Gaussian pairs.
pub fn strong_monotonicity_estimate(op: &OperatorSpec<'_>, trials: usize, seed: u64) -> Result<f64> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = f64::INFINITY;
    for _ in 0..trials {
        let x: Vec<f64> = (0..op.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y: Vec<f64> = (0..op.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let bx = op.eval(&x)?;
        let by = op.eval(&y)?;
        let mut num = 0.0;
        let mut den = 0.0;
        for k in 0..op.dim {
            let dz = x[k] - y[k];
            num += (bx[k] - by[k]) * dz;
            den += dz * dz;
        }
        best = best.min(num / den);
    }
    Ok(best)
}

/// Objective value of one sample (for the AUC family, the saddle function
/// including the `lambda/2 |w|^2` term).
pub fn sample_loss(family: Family, sample: &Sample, p: f64, z: &[f64]) -> f64 {
    let s = sample.features.dot_dense(z);
    let y = sample.label;
    match family {
        Family::Ridge => 0.5 * (s - y) * (s - y),
        Family::Logistic => {
            let m = -y * s;
            if m > 0.0 {
                m + (-m).exp().ln_1p()
            } else {
                m.exp().ln_1p()
            }
        }
        Family::Auc => {
            let d = sample.features.dim();
            auc_saddle(p, y > 0.0, s, z[d], z[d + 1], z[d + 2])
        }
    }
}

/// Per-sample AUC saddle function without the regularizer.
pub fn auc_saddle(p: f64, positive: bool, s: f64, off_a: f64, off_b: f64, theta: f64) -> f64 {
    let mut f = -p * (1.0 - p) * theta * theta;
    if positive {
        f += (1.0 - p) * (s - off_a).powi(2) - 2.0 * (1.0 + theta) * (1.0 - p) * s;
    } else {
        f += p * (s - off_b).powi(2) + 2.0 * (1.0 + theta) * p * s;
    }
    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sample(dim: usize, idx: Vec<usize>, val: Vec<f64>, label: f64) -> Sample {
        Sample {
            features: SparseVec::new(dim, idx, val),
            label,
            line: 1,
        }
    }

    fn residual(op: &OperatorSpec<'_>, alpha: f64, psi: &[f64], z: &[f64]) -> f64 {
        let b = op.eval(z).unwrap();
        (0..z.len())
            .map(|k| (z[k] + alpha * b[k] - psi[k]).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    #[test]
    fn ridge_eval_and_resolvent_examples() {
        let s = sample(3, vec![0], vec![1.0], 0.0);
        let op = OperatorSpec::new(Family::Ridge, &s, 0.5, 0.0).unwrap();
        assert_eq!(op.eval(&[1.0, 0.0, 0.0]).unwrap(), vec![1.0, 0.0, 0.0]);

        let z = resolvent_ridge(&op, 1.0, &[1.0, 0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(z[0], 0.5, epsilon = 1e-15);
        assert!(residual(&op, 1.0, &[1.0, 0.0, 0.0], &z) < 1e-15);

        // psi orthogonal to a with y = 0 is a fixed point
        let z = resolvent_ridge(&op, 2.0, &[0.0, 3.0, -1.0]).unwrap();
        assert_eq!(z, vec![0.0, 3.0, -1.0]);

        let z = resolvent_ridge(&op, 1e-12, &[0.7, 0.1, 0.2]).unwrap();
        for (u, v) in z.iter().zip([0.7, 0.1, 0.2]) {
            assert_abs_diff_eq!(*u, v, epsilon = 1e-11);
        }
    }

    #[test]
    fn logistic_scalar_root() {
        // Root of t - 1/(1+e^t) = 0, frozen from an independent bracketing solve.
        const ROOT: f64 = 0.401_058_137_541_546_9;
        let s = sample(2, vec![0], vec![1.0], 1.0);
        let op = OperatorSpec::new(Family::Logistic, &s, 0.5, 0.0).unwrap();
        let z = resolvent_logistic(&op, 1.0, &[0.0, 0.0], DEFAULT_NEWTON_ITERS).unwrap();
        assert_abs_diff_eq!(z[0], ROOT, epsilon = 1e-12);

        let neg = sample(2, vec![0], vec![1.0], -1.0);
        let op = OperatorSpec::new(Family::Logistic, &neg, 0.5, 0.0).unwrap();
        let zn = resolvent_logistic(&op, 1.0, &[0.0, 0.0], DEFAULT_NEWTON_ITERS).unwrap();
        assert_abs_diff_eq!(zn[0], -z[0], epsilon = 1e-15);

        let zt = resolvent_logistic(&op, 1e-12, &[0.3, 0.4], DEFAULT_NEWTON_ITERS).unwrap();
        assert_abs_diff_eq!(zt[0], 0.3, epsilon = 1e-11);
        assert!(resolvent_logistic(&op, 1.0, &[0.0, 0.0], 0).is_err());
    }

    #[test]
    fn logistic_large_alpha_survives() {
        let s = sample(2, vec![0, 1], vec![0.6, 0.8], 1.0);
        let op = OperatorSpec::new(Family::Logistic, &s, 0.5, 0.0).unwrap();
        for alpha in [50.0, 500.0, 5e4] {
            let psi = [-30.0, 12.0];
            let z = op.resolvent_unreg(alpha, &psi, DEFAULT_NEWTON_ITERS).unwrap();
            assert!(residual(&op, alpha, &psi, &z) < 1e-8 * alpha, "alpha={alpha}");
        }
    }

    #[test]
    fn auc_eval_at_origin() {
        let s = sample(2, vec![0, 1], vec![0.6, 0.8], 1.0);
        let op = OperatorSpec::new(Family::Auc, &s, 0.3, 0.0).unwrap();
        let out = op.eval(&[0.0; 5]).unwrap();
        let c = -2.0 * 0.7;
        let expect = [c * 0.6, c * 0.8, 0.0, 0.0, 0.0];
        for (u, v) in out.iter().zip(expect) {
            assert_abs_diff_eq!(*u, v, epsilon = 1e-15);
        }
    }

    #[test]
    fn auc_requires_binary_labels_and_p() {
        let s = sample(2, vec![0], vec![1.0], 0.5);
        assert!(OperatorSpec::new(Family::Auc, &s, 0.3, 0.0).is_err());
        let s = sample(2, vec![0], vec![1.0], 1.0);
        assert!(OperatorSpec::new(Family::Auc, &s, 1.0, 0.0).is_err());
    }

    #[test]
    fn wrapper_examples() {
        assert_eq!(l2_scaling(0.0, 3.0), 1.0);
        assert_abs_diff_eq!(l2_scaling(1.0, 1.0), 0.5, epsilon = 1e-15);
        let zero_op = |_: f64, z: &[f64]| Ok(z.to_vec());
        let out = wrap_l2_resolvent(zero_op, 1.0, 1.0, &[2.0, -4.0]).unwrap();
        assert_eq!(out, vec![1.0, -2.0]);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let s = sample(3, vec![0], vec![1.0], 1.0);
        let op = OperatorSpec::new(Family::Ridge, &s, 0.5, 0.0).unwrap();
        assert!(matches!(
            op.eval(&[0.0; 2]),
            Err(Error::DimensionMismatch { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn solve4_matches_nalgebra() {
        let m = [
            [4.0, 1.0, 0.5, -1.0],
            [0.0, 0.0, 2.0, 1.0],
            [1.0, 3.0, 0.0, 0.0],
            [2.0, 0.0, 1.0, 5.0],
        ];
        let rhs = [1.0, 2.0, 3.0, 4.0];
        let x = solve4(m, rhs).unwrap();
        let mm = Matrix4::from_fn(|r, c| m[r][c]);
        let xr = mm.lu().solve(&nalgebra::Vector4::from(rhs)).unwrap();
        for k in 0..4 {
            assert_abs_diff_eq!(x[k], xr[k], epsilon = 1e-12);
        }
        assert!(matches!(solve4([[0.0; 4]; 4], rhs), Err(Error::Singular(4))));
    }

    #[test]
    fn lambda_identity_monotonicity() {
        let s = sample(4, vec![1], vec![1.0], 0.0);
        // a = e_1 with zero weight contributes nothing along other axes; use
        // the ridge family with a zero vector equivalent by checking the
        // wrapper-only operator through eval on orthogonal pairs is not
        // possible, so instead check B = lambda I on the complement.
        let op = OperatorSpec::new(Family::Ridge, &s, 0.5, 0.25).unwrap();
        let est = strong_monotonicity_estimate(&op, 200, 1).unwrap();
        assert!(est >= 0.25 - 1e-12);
    }
}
