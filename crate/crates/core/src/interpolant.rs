//! Kernel matrices, the minimum-norm (and ridge) interpolant, and Monte-Carlo
//! estimates of its variance and bias functionals.

use std::fmt;
use std::sync::Arc;

use faer::Mat;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{check_dims, Error, Result};
use crate::kernels::{dot, Kernel, Truncation};
use crate::linalg::{self, Design, SymSolver};
use crate::orthopoly::CoordinateDistribution;

pub const PINV_RELATIVE_CUTOFF: f64 = 1e-10;
pub const MAX_CONDITION: f64 = 1e12;
pub const MAX_REFERENCE_SIZE: usize = 100_000;
const TEST_CHUNK: usize = 256;

pub type PointFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// `rho_*` for representable targets.
#[derive(Clone)]
pub enum Density {
    /// `rho(z) = z[i]` (0-based coordinate).
    Coordinate(usize),
    Constant(f64),
    Custom(PointFn),
}

impl Density {
    pub fn eval(&self, z: &[f64]) -> f64 {
        match self {
            Density::Coordinate(i) => z[*i],
            Density::Constant(c) => *c,
            Density::Custom(f) => f(z),
        }
    }
}

impl fmt::Debug for Density {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Density::Coordinate(i) => write!(f, "Coordinate({i})"),
            Density::Constant(c) => write!(f, "Constant({c})"),
            Density::Custom(_) => f.write_str("Custom"),
        }
    }
}

/// Regression target `f_*`.
#[derive(Clone)]
pub enum TargetFunction {
    Zero,
    /// `f_*(x) = (1/M) sum_j k(x, z_j) rho(z_j)` over a frozen reference sample.
    Representable {
        kernel: Kernel,
        density: Density,
        reference: Design,
        weights: Vec<f64>,
    },
    Direct(PointFn),
}

impl fmt::Debug for TargetFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetFunction::Zero => f.write_str("Zero"),
            TargetFunction::Representable { kernel, density, reference, .. } => write!(
                f,
                "Representable({}, {density:?}, M={})",
                kernel.label(),
                reference.rows()
            ),
            TargetFunction::Direct(_) => f.write_str("Direct"),
        }
    }
}

/// Default reference size `10 n`, capped.
pub fn default_reference_size(n: usize) -> usize {
    n.saturating_mul(10).clamp(1, MAX_REFERENCE_SIZE)
}

impl TargetFunction {
    /// Draws the reference sample `z_1..z_M` from `dist` with its own seed.
    pub fn representable(
        kernel: Kernel,
        density: Density,
        dist: CoordinateDistribution,
        dim: usize,
        reference_size: usize,
        seed: u64,
    ) -> Result<Self> {
        if reference_size == 0 || reference_size > MAX_REFERENCE_SIZE {
            return Err(Error::usage(format!(
                "reference size must be in 1..={MAX_REFERENCE_SIZE}, got {reference_size}"
            )));
        }
        let reference = dist.sample_design(reference_size, dim, seed)?;
        Self::representable_on(kernel, density, reference)
    }

    /// Representable target over a caller-supplied reference sample.
    pub fn representable_on(kernel: Kernel, density: Density, reference: Design) -> Result<Self> {
        if let Density::Coordinate(i) = density {
            if i >= reference.dim() {
                return Err(Error::usage(format!(
                    "density coordinate {i} out of range for dimension {}",
                    reference.dim()
                )));
            }
        }
        let m = reference.rows() as f64;
        let weights = reference.iter_rows().map(|z| density.eval(z) / m).collect();
        Ok(TargetFunction::Representable {
            kernel,
            density,
            reference,
            weights,
        })
    }

    pub fn is_zero(&self) -> bool {
        match self {
            TargetFunction::Zero => true,
            TargetFunction::Representable { weights, .. } => weights.iter().all(|w| *w == 0.0),
            TargetFunction::Direct(_) => false,
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        match self {
            TargetFunction::Zero => Ok(0.0),
            TargetFunction::Direct(f) => Ok(f(x)),
            TargetFunction::Representable {
                kernel,
                reference,
                weights,
                ..
            } => {
                check_dims(reference.dim(), x.len(), "target eval")?;
                let xx = dot(x, x);
                let dim = x.len();
                Ok(reference
                    .iter_rows()
                    .zip(weights)
                    .map(|(z, w)| w * kernel.eval_parts(dot(x, z), xx, dot(z, z), dim, Truncation::Full))
                    .sum())
            }
        }
    }

    pub fn eval_design(&self, x: &Design) -> Result<Vec<f64>> {
        (0..x.rows()).into_par_iter().map(|i| self.eval(x.row(i))).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Design,
    pub y: Vec<f64>,
    pub dist: CoordinateDistribution,
    pub noise_sd: f64,
    pub seed: u64,
}

/// Design rows from `seed`, then label noise from the same stream.
pub fn sample_dataset(
    dist: CoordinateDistribution,
    n: usize,
    d: usize,
    target: &TargetFunction,
    noise_sd: f64,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 || d == 0 {
        return Err(Error::usage("dataset needs n >= 1 and d >= 1"));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::usage(format!("noise_sd must be finite and >= 0, got {noise_sd}")));
    }
    dist.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * d).map(|_| dist.sample(&mut rng)).collect();
    let x = Design::from_row_major(n, d, data)?;
    let mut y = target.eval_design(&x)?;
    if noise_sd > 0.0 {
        for yi in y.iter_mut() {
            let e: f64 = StandardNormal.sample(&mut rng);
            *yi += noise_sd * e;
        }
    }
    Ok(Dataset {
        x,
        y,
        dist,
        noise_sd,
        seed,
    })
}

fn sq_norms(x: &Design) -> Vec<f64> {
    x.iter_rows().map(|r| dot(r, r)).collect()
}

/// `k(x_i, x_j)` (divided by `n` when `normalized`), upper triangle mirrored.
pub fn kernel_matrix(kernel: &Kernel, x: &Design, mode: Truncation, normalized: bool) -> Result<Mat<f64>> {
    if let Kernel::Ntk { input_dim } = kernel {
        check_dims(*input_dim, x.dim(), "kernel_matrix")?;
    }
    let n = x.rows();
    let dim = x.dim();
    let norms = sq_norms(x);
    let scale = if normalized { 1.0 / n as f64 } else { 1.0 };
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = x.row(i);
            (i..n)
                .map(|j| kernel.eval_parts(dot(xi, x.row(j)), norms[i], norms[j], dim, mode) * scale)
                .collect()
        })
        .collect();
    let mut k = Mat::<f64>::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { row: i, col: i + off });
            }
            k[(i, i + off)] = v;
        }
    }
    linalg::symmetrize_from_upper(&mut k);
    Ok(k)
}

/// `k(a_i, b_j)` as an `a.rows() x b.rows()` matrix.
pub fn cross_kernel(kernel: &Kernel, a: &Design, b: &Design) -> Result<Mat<f64>> {
    check_dims(a.dim(), b.dim(), "cross_kernel")?;
    let dim = a.dim();
    let na = sq_norms(a);
    let cols: Vec<Vec<f64>> = (0..b.rows())
        .into_par_iter()
        .map(|j| {
            let z = b.row(j);
            let zz = dot(z, z);
            a.iter_rows()
                .zip(&na)
                .map(|(x, &xx)| kernel.eval_parts(dot(x, z), xx, zz, dim, Truncation::Full))
                .collect()
        })
        .collect();
    let mut out = Mat::<f64>::zeros(a.rows(), b.rows());
    for (j, col) in cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
            out[(i, j)] = v;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitDiagnostics {
    /// Extreme eigenvalues of the unnormalized (ridge-shifted) system matrix.
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub condition: f64,
    pub pinv_fallback: bool,
}

/// Factorized `k(X,X) + ridge n I`, shared read-only by every solve.
pub struct KernelSystem {
    kernel: Kernel,
    x: Design,
    ridge: f64,
    solver: SymSolver,
    diagnostics: FitDiagnostics,
}

impl KernelSystem {
    pub fn new(kernel: &Kernel, x: &Design, ridge: f64) -> Result<Self> {
        if !(ridge >= 0.0 && ridge.is_finite()) {
            return Err(Error::usage(format!("ridge must be finite and >= 0, got {ridge}")));
        }
        if x.rows() == 0 {
            return Err(Error::usage("empty design"));
        }
        let n = x.rows();
        let mut k = kernel_matrix(kernel, x, Truncation::Full, false)?;
        let shift = ridge * n as f64;
        if shift > 0.0 {
            for i in 0..n {
                k[(i, i)] += shift;
            }
        }
        let spectrum = linalg::sym_eigenvalues(k.as_ref())?;
        let lambda_min = spectrum[0];
        let lambda_max = spectrum[n - 1];
        let condition = if lambda_min > 0.0 { lambda_max / lambda_min } else { f64::INFINITY };
        let cholesky = if condition <= MAX_CONDITION {
            k.llt(faer::Side::Lower).ok()
        } else {
            None
        };
        let (solver, pinv_fallback) = match cholesky {
            Some(llt) => (SymSolver::Cholesky(llt), false),
            None => {
                let (solver, s) = linalg::sym_pinv(&k, PINV_RELATIVE_CUTOFF)?;
                let top = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if s.iter().all(|&v| v <= PINV_RELATIVE_CUTOFF * top) {
                    return Err(Error::Degenerate("every kernel eigenvalue is below the cutoff".into()));
                }
                (solver, true)
            }
        };
        Ok(KernelSystem {
            kernel: kernel.clone(),
            x: x.clone(),
            ridge,
            solver,
            diagnostics: FitDiagnostics {
                lambda_min,
                lambda_max,
                condition,
                pinv_fallback,
            },
        })
    }

    pub fn diagnostics(&self) -> FitDiagnostics {
        self.diagnostics
    }

    pub fn design(&self) -> &Design {
        &self.x
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn solve_vec(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        check_dims(self.x.rows(), rhs.len(), "solve")?;
        let b = Mat::<f64>::from_fn(rhs.len(), 1, |i, _| rhs[i]);
        let sol = self.solver.solve(b.as_ref());
        Ok((0..rhs.len()).map(|i| sol[(i, 0)]).collect())
    }

    /// `|K^{-1} k(X, t)|^2` for every row `t` of `test`.
    pub fn variance_terms(&self, test: &Design) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(test.rows());
        for chunk in chunks(test)? {
            let kt = cross_kernel(&self.kernel, &self.x, &chunk)?;
            let sol = self.solver.solve(kt.as_ref());
            for j in 0..sol.ncols() {
                out.push((0..sol.nrows()).map(|i| sol[(i, j)] * sol[(i, j)]).sum());
            }
        }
        Ok(out)
    }

    /// `(k(t, X) K^{-1} f(X) - f(t))^2` for every test row.
    pub fn bias_terms(&self, target: &TargetFunction, test: &Design) -> Result<Vec<f64>> {
        let fx = target.eval_design(&self.x)?;
        let beta = self.solve_vec(&fx)?;
        let preds = self.predict_with(&beta, test)?;
        let ft = target.eval_design(test)?;
        Ok(preds.iter().zip(&ft).map(|(p, f)| (p - f) * (p - f)).collect())
    }

    fn predict_with(&self, beta: &[f64], test: &Design) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(test.rows());
        for chunk in chunks(test)? {
            let kt = cross_kernel(&self.kernel, &self.x, &chunk)?;
            for j in 0..kt.ncols() {
                out.push((0..kt.nrows()).map(|i| kt[(i, j)] * beta[i]).sum());
            }
        }
        Ok(out)
    }
}

fn chunks(test: &Design) -> Result<Vec<Design>> {
    let d = test.dim();
    test.data()
        .chunks(TEST_CHUNK * d.max(1))
        .map(|c| Design::from_row_major(c.len() / d.max(1), d, c.to_vec()))
        .collect()
}

/// Fitted interpolant `f(x) = sum_i beta_i k(x, x_i)`.
pub struct InterpolantModel {
    system: KernelSystem,
    beta: Vec<f64>,
}

impl InterpolantModel {
    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn ridge(&self) -> f64 {
        self.system.ridge
    }

    pub fn diagnostics(&self) -> FitDiagnostics {
        self.system.diagnostics
    }

    pub fn system(&self) -> &KernelSystem {
        &self.system
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let design = Design::from_row_major(1, x.len(), x.to_vec())?;
        Ok(self.predict_design(&design)?[0])
    }

    pub fn predict_design(&self, test: &Design) -> Result<Vec<f64>> {
        check_dims(self.system.x.dim(), test.dim(), "predict")?;
        self.system.predict_with(&self.beta, test)
    }
}

/// Solves `(k(X,X) + lambda n I) beta = Y`; `lambda = 0` is the interpolant.
pub fn fit_min_norm(kernel: &Kernel, data: &Dataset, lambda: f64) -> Result<InterpolantModel> {
    check_dims(data.x.rows(), data.y.len(), "fit labels")?;
    let system = KernelSystem::new(kernel, &data.x, lambda)?;
    let beta = system.solve_vec(&data.y)?;
    Ok(InterpolantModel { system, beta })
}

pub fn predict(model: &InterpolantModel, x: &[f64]) -> Result<f64> {
    model.predict(x)
}

/// Mean and standard error of the mean.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let m = values.len();
    if m == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / m as f64;
    if m == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1) as f64;
    (mean, (var / m as f64).sqrt())
}

fn test_design(dist: CoordinateDistribution, m_test: usize, dim: usize, seed: u64) -> Result<Design> {
    if m_test == 0 {
        return Err(Error::usage("m_test must be >= 1"));
    }
    dist.sample_design(m_test, dim, seed)
}

/// Monte-Carlo `E_x |k(X,X)^{-1} k(X,x)|^2` over `m_test` fresh draws.
pub fn variance_functional(
    kernel: &Kernel,
    x: &Design,
    test_dist: CoordinateDistribution,
    m_test: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let system = KernelSystem::new(kernel, x, 0.0)?;
    let test = test_design(test_dist, m_test, x.dim(), seed)?;
    Ok(mean_se(&system.variance_terms(&test)?))
}

/// Monte-Carlo squared error of the noiseless interpolant of `f_*`.
pub fn bias_functional(
    kernel: &Kernel,
    x: &Design,
    target: &TargetFunction,
    test_dist: CoordinateDistribution,
    m_test: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let test = test_design(test_dist, m_test, x.dim(), seed)?;
    if target.is_zero() {
        return Ok((0.0, 0.0));
    }
    let system = KernelSystem::new(kernel, x, 0.0)?;
    Ok(mean_se(&system.bias_terms(target, &test)?))
}

/// `(C1_hat, C2_hat)` for the surrogate `f~_n(x) = (1/n) sum_i k(x, x_i) rho(x_i)`.
pub fn surrogate_checks(
    kernel: &Kernel,
    x: &Design,
    target: &TargetFunction,
    test_dist: CoordinateDistribution,
    m_test: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let TargetFunction::Representable { density, .. } = target else {
        return Err(Error::usage("surrogate checks need a representable target"));
    };
    let n = x.rows();
    let weights: Vec<f64> = x.iter_rows().map(|r| density.eval(r) / n as f64).collect();
    let surrogate = TargetFunction::Representable {
        kernel: kernel.clone(),
        density: density.clone(),
        reference: x.clone(),
        weights,
    };
    let train_f = target.eval_design(x)?;
    let train_s = surrogate.eval_design(x)?;
    let c2 = train_f.iter().zip(&train_s).map(|(a, b)| (a - b) * (a - b)).sum();
    let test = test_design(test_dist, m_test, x.dim(), seed)?;
    let test_f = target.eval_design(&test)?;
    let test_s = surrogate.eval_design(&test)?;
    let sq: Vec<f64> = test_f.iter().zip(&test_s).map(|(a, b)| (a - b) * (a - b)).collect();
    Ok((n as f64 * mean_se(&sq).0, c2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::TaylorKernelSpec;

    const GAUSS: CoordinateDistribution = CoordinateDistribution::StandardNormal;

    fn exp_data(n: usize, d: usize, seed: u64) -> Dataset {
        let target = TargetFunction::Direct(Arc::new(|x: &[f64]| x[0] + 0.5 * x[1] * x[1]));
        sample_dataset(GAUSS, n, d, &target, 0.3, seed).unwrap()
    }

    #[test]
    fn dataset_basics() {
        let a = sample_dataset(GAUSS, 10_000, 5, &TargetFunction::Zero, 0.0, 3).unwrap();
        assert!(a.y.iter().all(|v| *v == 0.0));
        for c in 0..5 {
            let m = a.x.iter_rows().map(|r| r[c]).sum::<f64>() / 1e4;
            assert!(m.abs() < 4.0 / 100.0);
        }
        let b = sample_dataset(GAUSS, 10_000, 5, &TargetFunction::Zero, 0.0, 3).unwrap();
        assert_eq!(a.x, b.x);
        let dir = TargetFunction::Direct(Arc::new(|x: &[f64]| x[0] * 2.0));
        let c = sample_dataset(GAUSS, 20, 3, &dir, 0.0, 1).unwrap();
        for (r, y) in c.x.iter_rows().zip(&c.y) {
            assert_eq!(*y, 2.0 * r[0]);
        }
        assert!(sample_dataset(GAUSS, 0, 3, &dir, 0.0, 1).is_err());
    }

    #[test]
    fn kernel_matrix_small_cases() {
        let k = Kernel::exp();
        let x = Design::from_rows(&[vec![0.5, -1.0]]).unwrap();
        let m = kernel_matrix(&k, &x, Truncation::Full, true).unwrap();
        assert!((m[(0, 0)] - (1.25f64 / 2.0).exp()).abs() <= 4.0 * f64::EPSILON);
        let x = GAUSS.sample_design(6, 3, 2).unwrap();
        let m = kernel_matrix(&k, &x, Truncation::AtMost(0), true).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(m[(i, j)], 1.0 / 6.0);
                assert_eq!(m[(i, j)], m[(j, i)]);
            }
        }
    }

    #[test]
    fn kernel_matrix_truncation_additivity() {
        let spec = TaylorKernelSpec::polynomial(vec![1.0, 0.5, 0.25, 0.125], "cubic").unwrap();
        let k = Kernel::Taylor(spec);
        let x = GAUSS.sample_design(15, 4, 9).unwrap();
        let full = kernel_matrix(&k, &x, Truncation::Full, true).unwrap();
        let mut sum = Mat::<f64>::zeros(15, 15);
        for i in 0..=3 {
            sum += kernel_matrix(&k, &x, Truncation::Exactly(i), true).unwrap();
        }
        assert!((&full - &sum).norm_max() <= 1e-10);
    }

    #[test]
    fn non_finite_entries_are_reported() {
        let k = Kernel::exp();
        let x = Design::from_rows(&[vec![1.0], vec![1e200]]).unwrap();
        match kernel_matrix(&k, &x, Truncation::Full, false) {
            Err(Error::NonFinite { row: 0, col: 1 }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn single_point_fit() {
        let k = Kernel::exp();
        let x = Design::from_rows(&[vec![0.3, 0.4]]).unwrap();
        let data = Dataset { x: x.clone(), y: vec![2.0], dist: GAUSS, noise_sd: 0.0, seed: 0 };
        let model = fit_min_norm(&k, &data, 0.0).unwrap();
        let kxx = k.eval(x.row(0), x.row(0)).unwrap();
        assert!((model.beta()[0] - 2.0 / kxx).abs() < 1e-15);
        assert!((model.predict(x.row(0)).unwrap() - 2.0).abs() < 1e-14);
        let (v, _) = variance_functional(&k, &x, GAUSS, 50, 3).unwrap();
        let t = GAUSS.sample_design(50, 2, 3).unwrap();
        let manual: f64 =
            t.iter_rows().map(|r| (k.eval(r, x.row(0)).unwrap() / kxx).powi(2)).sum::<f64>() / 50.0;
        assert!((v - manual).abs() <= 1e-12 * manual);
    }

    #[test]
    fn interpolates_training_labels() {
        let data = exp_data(200, 10, 4);
        let model = fit_min_norm(&Kernel::exp(), &data, 0.0).unwrap();
        assert!(!model.diagnostics().pinv_fallback);
        let preds = model.predict_design(&data.x).unwrap();
        let scale = 1.0 + data.y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let worst = preds.iter().zip(&data.y).fold(0.0f64, |m, (p, y)| m.max((p - y).abs()));
        assert!(worst <= 1e-6 * scale, "{worst}");
    }

    #[test]
    fn ridge_solution_is_stationary() {
        let data = exp_data(60, 5, 8);
        let lambda = 1e-2;
        let k = Kernel::exp();
        let model = fit_min_norm(&k, &data, lambda).unwrap();
        let km = kernel_matrix(&k, &data.x, Truncation::Full, false).unwrap();
        let n = data.y.len();
        let objective = |b: &[f64]| {
            let mut fit = 0.0;
            let mut reg = 0.0;
            for i in 0..n {
                let kb: f64 = (0..n).map(|j| km[(i, j)] * b[j]).sum();
                fit += (kb - data.y[i]).powi(2);
                reg += b[i] * kb;
            }
            fit / n as f64 + lambda * reg
        };
        let beta = model.beta().to_vec();
        let h = 1e-6;
        let mut worst = 0.0f64;
        for i in 0..n {
            let mut up = beta.clone();
            let mut dn = beta.clone();
            up[i] += h;
            dn[i] -= h;
            worst = worst.max(((objective(&up) - objective(&dn)) / (2.0 * h)).abs());
        }
        assert!(worst <= 1e-6, "{worst}");
    }

    #[test]
    fn ridge_path_approaches_interpolant() {
        // d comparable to n keeps k(X, X) well conditioned
        let data = exp_data(60, 40, 12);
        let k = Kernel::exp();
        let test = GAUSS.sample_design(50, 40, 99).unwrap();
        let base = fit_min_norm(&k, &data, 0.0).unwrap().predict_design(&test).unwrap();
        let scale = base.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut gaps = Vec::new();
        for lambda in [1e-2, 1e-4, 1e-6] {
            let p = fit_min_norm(&k, &data, lambda).unwrap().predict_design(&test).unwrap();
            gaps.push(p.iter().zip(&base).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())));
        }
        assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
        assert!(gaps[2] <= 1e-4 * scale, "{gaps:?}");
    }

    #[test]
    fn identity_column_property() {
        let k = Kernel::exp();
        let x = GAUSS.sample_design(80, 6, 5).unwrap();
        let system = KernelSystem::new(&k, &x, 0.0).unwrap();
        let rows = Design::from_row_major(3, 6, [x.row(0), x.row(17), x.row(79)].concat()).unwrap();
        for v in system.variance_terms(&rows).unwrap() {
            assert!((v - 1.0).abs() <= 1e-8, "{v}");
        }
        let target = TargetFunction::Direct(Arc::new(|x: &[f64]| x[1].sin()));
        for b in system.bias_terms(&target, &rows).unwrap() {
            assert!(b <= 1e-12);
        }
    }

    #[test]
    fn functionals_are_reproducible() {
        let k = Kernel::exp();
        let x = GAUSS.sample_design(100, 8, 5).unwrap();
        let a = variance_functional(&k, &x, GAUSS, 300, 1).unwrap();
        let b = variance_functional(&k, &x, GAUSS, 300, 1).unwrap();
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert_eq!(a.1.to_bits(), b.1.to_bits());
        let zero = TargetFunction::representable(k.clone(), Density::Constant(0.0), GAUSS, 8, 50, 2).unwrap();
        assert_eq!(bias_functional(&k, &x, &zero, GAUSS, 10, 1).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn surrogate_degenerate_cases() {
        let k = Kernel::exp();
        let x = GAUSS.sample_design(40, 5, 6).unwrap();
        let zero = TargetFunction::representable(k.clone(), Density::Constant(0.0), GAUSS, 5, 400, 2).unwrap();
        assert_eq!(surrogate_checks(&k, &x, &zero, GAUSS, 20, 1).unwrap(), (0.0, 0.0));
        let same = TargetFunction::representable_on(k.clone(), Density::Constant(1.5), x.clone()).unwrap();
        let (c1, c2) = surrogate_checks(&k, &x, &same, GAUSS, 20, 1).unwrap();
        assert!(c1.abs() < 1e-20 && c2.abs() < 1e-20);
        let direct = TargetFunction::Direct(Arc::new(|_: &[f64]| 1.0));
        assert!(matches!(surrogate_checks(&k, &x, &direct, GAUSS, 20, 1), Err(Error::Usage(_))));
    }

    #[test]
    fn bias_variance_decomposition() {
        let k = Kernel::exp();
        let n = 80;
        let d = 6;
        let sigma = 0.5;
        let target = TargetFunction::representable(k.clone(), Density::Coordinate(0), GAUSS, d, 800, 21).unwrap();
        let x = GAUSS.sample_design(n, d, 4).unwrap();
        let test = GAUSS.sample_design(400, d, 5).unwrap();
        let system = KernelSystem::new(&k, &x, 0.0).unwrap();
        let (bias, _) = mean_se(&system.bias_terms(&target, &test).unwrap());
        let (var, _) = mean_se(&system.variance_terms(&test).unwrap());
        let predicted = bias + sigma * sigma * var;

        let fx = target.eval_design(&x).unwrap();
        let ft = target.eval_design(&test).unwrap();
        let kt = cross_kernel(&k, &x, &test).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut mses = Vec::new();
        for _ in 0..200 {
            let y: Vec<f64> = fx
                .iter()
                .map(|f| f + sigma * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect();
            let beta = system.solve_vec(&y).unwrap();
            let mse = (0..test.rows())
                .map(|j| {
                    let p: f64 = (0..n).map(|i| kt[(i, j)] * beta[i]).sum();
                    (p - ft[j]).powi(2)
                })
                .sum::<f64>()
                / test.rows() as f64;
            mses.push(mse);
        }
        let (mse, se) = mean_se(&mses);
        assert!((mse - predicted).abs() <= 3.0 * se, "mse {mse} se {se} predicted {predicted}");
    }
}
