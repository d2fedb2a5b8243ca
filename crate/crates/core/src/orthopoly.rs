//! Orthonormal polynomial bases for a coordinate law, the monomial and
//! orthonormal feature matrices `Phi`, `Psi`, and the change of basis
//! `Lambda` with `Phi = Psi Lambda`.

use std::collections::HashMap;

use faer::{Mat, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::TaylorKernelSpec;
use crate::linalg::{self, Design};
use crate::multiindex::{enumerate_multi_indices, multinomial_coeff, MultiIndex};

const HANKEL_MAX_CONDITION: f64 = 1e12;
const MAX_FEATURE_COLUMNS: usize = 100_000;

/// Law of a single coordinate. All members have mean zero and infinite support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", try_from = "DistributionRepr")]
pub enum CoordinateDistribution {
    StandardNormal,
    /// Uniform on `[-sqrt(3), sqrt(3)]`.
    UniformUnitVariance,
    /// Student t with `dof` degrees of freedom, rescaled to unit variance.
    StudentT { dof: f64 },
}

/// Flat form so that stray keys are rejected for every variant.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DistributionRepr {
    kind: String,
    #[serde(default)]
    dof: Option<f64>,
}

impl TryFrom<DistributionRepr> for CoordinateDistribution {
    type Error = String;

    fn try_from(r: DistributionRepr) -> std::result::Result<Self, String> {
        match (r.kind.as_str(), r.dof) {
            ("standard_normal", None) => Ok(CoordinateDistribution::StandardNormal),
            ("uniform_unit_variance", None) => Ok(CoordinateDistribution::UniformUnitVariance),
            ("student_t", Some(dof)) => Ok(CoordinateDistribution::StudentT { dof }),
            ("student_t", None) => Err("student_t needs 'dof'".into()),
            ("standard_normal" | "uniform_unit_variance", Some(_)) => {
                Err(format!("'dof' is not a parameter of {}", r.kind))
            }
            (other, _) => Err(format!(
                "unknown distribution '{other}', expected standard_normal, uniform_unit_variance or student_t"
            )),
        }
    }
}

impl CoordinateDistribution {
    pub fn validate(&self) -> Result<()> {
        if let CoordinateDistribution::StudentT { dof } = *self {
            if !(dof > 2.0 && dof.is_finite()) {
                return Err(Error::Domain(format!(
                    "standardized Student t needs dof > 2, got {dof}"
                )));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> String {
        match self {
            CoordinateDistribution::StandardNormal => "standard_normal".into(),
            CoordinateDistribution::UniformUnitVariance => "uniform_unit_variance".into(),
            CoordinateDistribution::StudentT { dof } => format!("student_t({dof})"),
        }
    }

    /// Exact raw moment `E[z^k]`; `None` when it does not exist.
    pub fn moment(&self, k: u32) -> Option<f64> {
        if k % 2 == 1 {
            return match self {
                CoordinateDistribution::StudentT { dof } if f64::from(k) >= *dof => None,
                _ => Some(0.0),
            };
        }
        let half = k / 2;
        match *self {
            // (k - 1)!!
            CoordinateDistribution::StandardNormal => {
                Some((1..=half).map(|i| f64::from(2 * i - 1)).product())
            }
            CoordinateDistribution::UniformUnitVariance => {
                Some(3f64.powi(half as i32) / f64::from(k + 1))
            }
            CoordinateDistribution::StudentT { dof } => {
                if f64::from(k) >= dof {
                    return None;
                }
                // E[t^{2j}] = nu^j prod (2i-1)/(nu-2i), times ((nu-2)/nu)^j
                Some(
                    (1..=half)
                        .map(|i| (dof - 2.0) * f64::from(2 * i - 1) / (dof - 2.0 * f64::from(i)))
                        .product(),
                )
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            CoordinateDistribution::StandardNormal => StandardNormal.sample(rng),
            CoordinateDistribution::UniformUnitVariance => {
                let s = 3f64.sqrt();
                Uniform::new_inclusive(-s, s).expect("valid bounds").sample(rng)
            }
            CoordinateDistribution::StudentT { dof } => {
                let t: f64 = StudentT::new(dof).expect("dof validated").sample(rng);
                t * ((dof - 2.0) / dof).sqrt()
            }
        }
    }

    /// `rows x dim` design with i.i.d. coordinates, filled row by row.
    pub fn sample_design(&self, rows: usize, dim: usize, seed: u64) -> Result<Design> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * dim).map(|_| self.sample(&mut rng)).collect();
        Design::from_row_major(rows, dim, data)
    }
}

/// Orthonormal polynomials `q_0..q_k` under a coordinate law, stored as a
/// lower-triangular coefficient matrix (row `j` holds `q_j` in `1, t, .., t^j`).
#[derive(Debug, Clone)]
pub struct OrthoPolyBasis {
    distribution: CoordinateDistribution,
    max_degree: u32,
    coeffs: Mat<f64>,
    /// Inverse of `coeffs`: row `j` expresses `t^j` in `q_0..q_j`.
    monomial_in_q: Mat<f64>,
}

/// Cholesky of the moment Hankel matrix `H_ij = m_{i+j}`; the inverse of the
/// lower factor maps monomials to orthonormal polynomials.
pub fn gram_schmidt_basis(dist: CoordinateDistribution, max_degree: u32) -> Result<OrthoPolyBasis> {
    dist.validate()?;
    let size = max_degree as usize + 1;
    let mut moments = Vec::with_capacity(2 * size - 1);
    for k in 0..(2 * size - 1) as u32 {
        moments.push(dist.moment(k).ok_or_else(|| {
            Error::Precondition(format!(
                "{} has no finite moment of order {k}, needed for a degree-{max_degree} basis",
                dist.name()
            ))
        })?);
    }
    let hankel = Mat::<f64>::from_fn(size, size, |i, j| moments[i + j]);
    for deg in 1..size {
        let sub = hankel.as_ref().submatrix(0, 0, deg + 1, deg + 1).to_owned();
        let ev = sub
            .self_adjoint_eigenvalues(Side::Lower)
            .map_err(|e| Error::Numeric(format!("Hankel eigenvalues: {e:?}")))?;
        let (lo, hi) = (ev[0], ev[ev.len() - 1]);
        if !(lo > 0.0 && hi / lo <= HANKEL_MAX_CONDITION) {
            return Err(Error::Degenerate(format!(
                "moment matrix of {} is numerically singular at degree {deg} (eigenvalues {lo:e}..{hi:e})",
                dist.name()
            )));
        }
    }
    let lower = linalg::cholesky_lower(&hankel).map_err(|_| {
        Error::Degenerate(format!("moment matrix of {} is not positive definite", dist.name()))
    })?;
    let coeffs = linalg::lower_triangular_inverse(&lower);
    Ok(OrthoPolyBasis {
        distribution: dist,
        max_degree,
        coeffs,
        monomial_in_q: lower,
    })
}

impl OrthoPolyBasis {
    pub fn distribution(&self) -> CoordinateDistribution {
        self.distribution
    }

    pub fn max_degree(&self) -> u32 {
        self.max_degree
    }

    pub fn coeffs(&self) -> &Mat<f64> {
        &self.coeffs
    }

    /// Coefficient of `q_l` in the expansion of `t^j`.
    pub fn monomial_coefficient(&self, j: u32, l: u32) -> f64 {
        self.monomial_in_q[(j as usize, l as usize)]
    }

    pub fn eval(&self, j: u32, t: f64) -> f64 {
        let row = j as usize;
        // Horner over the row
        (0..=row).rev().fold(0.0, |acc, k| acc * t + self.coeffs[(row, k)])
    }

    /// `q_0(t), .., q_k(t)` in one pass.
    pub fn eval_all(&self, t: f64, out: &mut [f64]) {
        for (j, slot) in out.iter_mut().enumerate().take(self.max_degree as usize + 1) {
            *slot = self.eval(j as u32, t);
        }
    }

    /// Univariate polynomial coefficients of `q_j`.
    pub fn poly(&self, j: u32) -> Vec<f64> {
        (0..=j as usize).map(|k| self.coeffs[(j as usize, k)]).collect()
    }

    /// Exact `E[prod_k q_{j_k}(z)]` from raw moments, `None` if a needed moment is infinite.
    pub fn exact_product_expectation(&self, degrees: &[u32]) -> Option<f64> {
        let mut product = vec![1.0];
        for &j in degrees {
            product = poly_mul(&product, &self.poly(j));
        }
        product
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(k, c)| self.distribution.moment(k as u32).map(|m| c * m))
            .sum()
    }
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// `prod_i q_{r_i}(x[i])`; zero exponents contribute 1 without evaluation.
pub fn tensor_q_eval(basis: &OrthoPolyBasis, r: &MultiIndex, x: &[f64]) -> Result<f64> {
    crate::error::check_dims(r.dim(), x.len(), "tensor_q_eval")?;
    if r.max_exponent() > basis.max_degree {
        return Err(Error::usage(format!(
            "multi-index {r:?} exceeds basis degree {}",
            basis.max_degree
        )));
    }
    Ok(r.support().map(|(i, ri)| basis.eval(ri, x[i])).product())
}

/// `E[q_r q_r' q_r'']` over the product law. Factorizes coordinatewise and is
/// exact whenever the needed univariate moments exist; otherwise falls back to
/// a seeded Monte-Carlo estimate over `samples` draws.
pub fn triangle_condition_check(
    basis: &OrthoPolyBasis,
    r: &MultiIndex,
    r1: &MultiIndex,
    r2: &MultiIndex,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let dim = r.dim();
    if r1.dim() != dim || r2.dim() != dim {
        return Err(Error::usage("triangle check needs equal-dimension multi-indices"));
    }
    for m in [r, r1, r2] {
        if m.max_exponent() > basis.max_degree {
            return Err(Error::usage(format!(
                "multi-index {m:?} exceeds basis degree {}",
                basis.max_degree
            )));
        }
    }
    let mut exact = Some(1.0);
    for i in 0..dim {
        let degs = [r.exponents()[i], r1.exponents()[i], r2.exponents()[i]];
        if degs == [0, 0, 0] {
            continue;
        }
        exact = exact.and_then(|acc| basis.exact_product_expectation(&degs).map(|e| acc * e));
    }
    match exact {
        Some(v) => Ok(v),
        None => triangle_condition_mc(basis, r, r1, r2, samples, seed),
    }
}

/// Monte-Carlo estimate of `E[q_r q_r' q_r'']`.
pub fn triangle_condition_mc(
    basis: &OrthoPolyBasis,
    r: &MultiIndex,
    r1: &MultiIndex,
    r2: &MultiIndex,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if samples == 0 {
        return Err(Error::usage("Monte-Carlo estimate needs at least one sample"));
    }
    let dim = r.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = vec![0.0; dim];
    let mut total = 0.0;
    for _ in 0..samples {
        for xi in x.iter_mut() {
            *xi = basis.distribution.sample(&mut rng);
        }
        total += tensor_q_eval(basis, r, &x)? * tensor_q_eval(basis, r1, &x)? * tensor_q_eval(basis, r2, &x)?;
    }
    Ok(total / samples as f64)
}

/// `Phi`, `Psi` (`n x N`) and `Lambda` (`N x N`) over the graded-lex index list.
#[derive(Debug, Clone)]
pub struct FeatureMatrices {
    pub phi: Mat<f64>,
    pub psi: Mat<f64>,
    pub lambda: Mat<f64>,
    pub index_order: Vec<MultiIndex>,
}

impl FeatureMatrices {
    pub fn num_features(&self) -> usize {
        self.index_order.len()
    }

    /// Largest Frobenius residual of `Phi - Psi Lambda`, relative to `|Phi|_F`.
    pub fn factorization_residual(&self) -> f64 {
        let prod = &self.psi * &self.lambda;
        let diff = &self.phi - &prod;
        diff.norm_l2() / self.phi.norm_l2()
    }
}

/// Per-column scale `sqrt(c_r alpha_|r|) d^{-|r|/2}`.
pub(crate) fn feature_scales(spec: &TaylorKernelSpec, indices: &[MultiIndex], dim: usize) -> Result<Vec<f64>> {
    indices
        .iter()
        .map(|r| {
            let c = multinomial_coeff(r)? as f64;
            let a = spec.alpha(r.degree() as usize);
            Ok((c * a).sqrt() / (dim as f64).powf(f64::from(r.degree()) / 2.0))
        })
        .collect()
}

pub(crate) fn check_positive_prefix(spec: &TaylorKernelSpec, degree: u32) -> Result<()> {
    for i in 0..=degree as usize {
        if !(spec.alpha(i) > 0.0) {
            return Err(Error::Precondition(format!(
                "alpha_{i} of '{}' must be positive up to degree {degree}",
                spec.label()
            )));
        }
    }
    Ok(())
}

pub(crate) fn feature_index_list(dim: usize, degree: u32) -> Result<Vec<MultiIndex>> {
    let count = crate::multiindex::multi_index_count(dim, degree)?;
    if count > MAX_FEATURE_COLUMNS {
        return Err(Error::Capacity(format!(
            "{count} feature columns exceed the budget of {MAX_FEATURE_COLUMNS}"
        )));
    }
    enumerate_multi_indices(dim, degree)
}

pub fn build_feature_matrices(
    spec: &TaylorKernelSpec,
    basis: &OrthoPolyBasis,
    x: &Design,
    degree: u32,
) -> Result<FeatureMatrices> {
    check_positive_prefix(spec, degree)?;
    if degree > basis.max_degree {
        return Err(Error::usage(format!(
            "basis has degree {} but features need {degree}",
            basis.max_degree
        )));
    }
    let dim = x.dim();
    let indices = feature_index_list(dim, degree)?;
    let scales = feature_scales(spec, &indices, dim)?;
    let n = x.rows();
    let cols = indices.len();
    let kmax = degree as usize + 1;

    let mut phi = Mat::<f64>::zeros(n, cols);
    let mut psi = Mat::<f64>::zeros(n, cols);
    let mut powers = vec![0.0; dim * kmax];
    let mut qvals = vec![0.0; dim * kmax];
    for i in 0..n {
        let row = x.row(i);
        for (c, &t) in row.iter().enumerate() {
            let mut p = 1.0;
            for j in 0..kmax {
                powers[c * kmax + j] = p;
                p *= t;
            }
            basis.eval_all(t, &mut qvals[c * kmax..(c + 1) * kmax]);
        }
        for (col, (r, &s)) in indices.iter().zip(&scales).enumerate() {
            let mut pm = s;
            let mut qm = s;
            for (c, e) in r.support() {
                pm *= powers[c * kmax + e as usize];
                qm *= qvals[c * kmax + e as usize];
            }
            phi[(i, col)] = pm;
            psi[(i, col)] = qm;
        }
    }

    let lambda = change_of_basis(basis, &indices, &scales)?;
    Ok(FeatureMatrices {
        phi,
        psi,
        lambda,
        index_order: indices,
    })
}

/// Expands each scaled monomial column in the scaled tensor `q` basis:
/// `t^j = sum_l L_{jl} q_l(t)` per coordinate, so column `r` of `Lambda` has
/// entries only at `s <= r` componentwise.
fn change_of_basis(basis: &OrthoPolyBasis, indices: &[MultiIndex], scales: &[f64]) -> Result<Mat<f64>> {
    let position: HashMap<&MultiIndex, usize> = indices.iter().enumerate().map(|(i, r)| (r, i)).collect();
    let n = indices.len();
    let mut lambda = Mat::<f64>::zeros(n, n);
    for (col, r) in indices.iter().enumerate() {
        let support: Vec<(usize, u32)> = r.support().collect();
        // odometer over s_i in 0..=r_i on the support of r
        let mut s = vec![0u32; support.len()];
        loop {
            let mut coeff = 1.0;
            let mut exps = vec![0u32; r.dim()];
            for (k, &(c, rc)) in support.iter().enumerate() {
                coeff *= basis.monomial_coefficient(rc, s[k]);
                exps[c] = s[k];
            }
            if coeff != 0.0 {
                let target = MultiIndex::new(exps);
                let row = *position
                    .get(&target)
                    .ok_or_else(|| Error::Numeric(format!("index {target:?} missing from ordering")))?;
                lambda[(row, col)] = coeff * scales[col] / scales[row];
            }
            if !advance_odometer(&mut s, &support) {
                break;
            }
        }
    }
    Ok(lambda)
}

fn advance_odometer(s: &mut [u32], limits: &[(usize, u32)]) -> bool {
    for (k, slot) in s.iter_mut().enumerate() {
        if *slot < limits[k].1 {
            *slot += 1;
            return true;
        }
        *slot = 0;
    }
    false
}

/// Operator norms `|Lambda|` and `|Lambda^{-1}|` from the singular values.
pub fn lambda_norms(fm: &FeatureMatrices) -> Result<(f64, f64)> {
    let sv = fm
        .lambda
        .singular_values()
        .map_err(|e| Error::Numeric(format!("SVD of Lambda failed: {e:?}")))?;
    let hi = sv[0];
    let lo = sv[sv.len() - 1];
    if !(lo >= 1e-12 * hi) {
        return Err(Error::Degenerate(format!(
            "Lambda is ill-conditioned: singular values {lo:e} .. {hi:e}"
        )));
    }
    Ok((hi, 1.0 / lo))
}
