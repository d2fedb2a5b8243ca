//! Inner-product kernels `k(x, z) = h(x^T z / d)` defined by nonnegative Taylor
//! coefficients, and the one-hidden-layer ReLU neural tangent kernel.
//!
//! Both families depend on a pair of inputs only through `x^T z`, `|x|^2` and
//! `|z|^2`, and [`Kernel::eval_parts`] is the shared evaluation contract used
//! to assemble kernel matrices.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dims, Error, Result};
use crate::multiindex::pow_u;

/// Which Taylor degrees of `h` to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Truncation {
    Full,
    /// `h^{[<= i]}`: degrees `0..=i`.
    AtMost(u32),
    /// `h^{[i]}`: the single degree `i`.
    Exactly(u32),
}

/// Rule for coefficients past the explicit prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tail {
    /// Polynomial kernel: `alpha_i = 0` beyond the prefix.
    Zero,
    /// `alpha_i = 1 / i!` beyond the prefix.
    Exp,
}

pub type ClosedForm = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

const FULL_MODE_REL_TOL: f64 = 1e-16;
const FULL_MODE_MAX_TERMS: usize = 10_000;

/// `h(t) = sum_i alpha_i t^i` with `alpha_i >= 0`.
#[derive(Clone)]
pub struct TaylorKernelSpec {
    coefficients: Vec<f64>,
    tail: Tail,
    closed_form: Option<ClosedForm>,
    label: String,
}

impl fmt::Debug for TaylorKernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TaylorKernelSpec")
            .field("label", &self.label)
            .field("coefficients", &self.coefficients)
            .field("tail", &self.tail)
            .field("closed_form", &self.closed_form.is_some())
            .finish()
    }
}

impl TaylorKernelSpec {
    /// Validates nonnegativity and, when a closed form is supplied, its agreement
    /// with the 60-term partial sum on `[-1, 1]` to `1e-8`.
    pub fn new(
        coefficients: Vec<f64>,
        tail: Tail,
        closed_form: Option<ClosedForm>,
        label: impl Into<String>,
    ) -> Result<Self> {
        if let Some((i, a)) = coefficients
            .iter()
            .enumerate()
            .find(|(_, a)| !(a.is_finite() && **a >= 0.0))
        {
            return Err(Error::Domain(format!(
                "Taylor coefficient alpha_{i} = {a} must be finite and nonnegative"
            )));
        }
        let spec = TaylorKernelSpec {
            coefficients,
            tail,
            closed_form,
            label: label.into(),
        };
        if let Some(h) = &spec.closed_form {
            for k in 0..=40 {
                let t = -1.0 + 2.0 * f64::from(k) / 40.0;
                let partial: f64 = (0..=60).map(|i| spec.alpha(i) * pow_u(t, i as u32)).sum();
                let exact = h(t);
                if !((exact - partial).abs() <= 1e-8 * (1.0 + exact.abs())) {
                    return Err(Error::Domain(format!(
                        "closed form of '{}' disagrees with its series at t = {t}: {exact} vs {partial}",
                        spec.label
                    )));
                }
            }
        }
        Ok(spec)
    }

    /// `h(t) = e^t`.
    pub fn exp() -> Self {
        TaylorKernelSpec::new(vec![1.0], Tail::Exp, Some(Arc::new(f64::exp)), "exp")
            .expect("exp series is valid")
    }

    pub fn polynomial(coefficients: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        TaylorKernelSpec::new(coefficients, Tail::Zero, None, label)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn prefix(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn tail(&self) -> Tail {
        self.tail
    }

    pub fn closed_form(&self) -> Option<&ClosedForm> {
        self.closed_form.as_ref()
    }

    pub fn alpha(&self, i: usize) -> f64 {
        if let Some(&a) = self.coefficients.get(i) {
            return a;
        }
        match self.tail {
            Tail::Zero => 0.0,
            Tail::Exp => 1.0 / factorial_f64(i),
        }
    }

    pub fn eval_h(&self, t: f64, mode: Truncation) -> Result<f64> {
        if !t.is_finite() {
            return Err(Error::usage(format!("eval_h at non-finite t = {t}")));
        }
        Ok(self.h_unchecked(t, mode))
    }

    fn h_unchecked(&self, t: f64, mode: Truncation) -> f64 {
        match mode {
            Truncation::Exactly(i) => self.alpha(i as usize) * pow_u(t, i),
            Truncation::AtMost(deg) => {
                let mut sum = 0.0;
                let mut power = 1.0;
                for i in 0..=deg as usize {
                    sum += self.alpha(i) * power;
                    power *= t;
                }
                sum
            }
            Truncation::Full => {
                let mut sum = 0.0;
                let mut power = 1.0;
                for i in 0..FULL_MODE_MAX_TERMS {
                    let term = self.alpha(i) * power;
                    sum += term;
                    if i + 1 >= self.coefficients.len() {
                        if self.tail == Tail::Zero {
                            break;
                        }
                        if term.abs() < FULL_MODE_REL_TOL * sum.abs() || term == 0.0 && t == 0.0
                        {
                            break;
                        }
                    }
                    power *= t;
                }
                sum
            }
        }
    }
}

fn factorial_f64(i: usize) -> f64 {
    (1..=i).fold(1.0, |acc, k| acc * k as f64)
}

/// How the finite-width tangent kernel combines its two gradient terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FiniteWidthForm {
    /// `(1/m) sum_j [ s(w.x~) s(w.x~') + x^T x' a_j^2 s'(w.x~) s'(w.x~') ]`,
    /// taken literally. Its large-width limit is not `ntk_infinite`.
    Displayed,
    /// `(1/m) sum_j [ s(w.x~) s(w.x~')/2 + x~^T x~' a_j^2 s'(w.x~) s'(w.x~') ]`,
    /// whose expectation is exactly `ntk_infinite`.
    #[default]
    LimitMatched,
}

/// One-hidden-layer ReLU network on the augmented input `x~ = (x, sqrt(d))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NtkSpec {
    pub input_dim: usize,
    pub width: usize,
    pub form: FiniteWidthForm,
}

impl NtkSpec {
    pub fn new(input_dim: usize, width: usize) -> Self {
        NtkSpec {
            input_dim,
            width,
            form: FiniteWidthForm::default(),
        }
    }

    /// `|x~|^2 = |x|^2 + d`.
    pub fn augmented_sq_norm(&self, x: &[f64]) -> f64 {
        dot(x, x) + self.input_dim as f64
    }
}

const COS_SLACK: f64 = 1e-12;

/// `U(t) = 3t(pi - arccos t) + sqrt(1 - t^2)` on `[-1, 1]`.
pub fn ntk_u(t: f64) -> Result<f64> {
    if !(-1.0 - COS_SLACK..=1.0 + COS_SLACK).contains(&t) {
        return Err(Error::Domain(format!("U(t) requires t in [-1, 1], got {t}")));
    }
    let t = t.clamp(-1.0, 1.0);
    Ok(3.0 * t * (PI - t.acos()) + (1.0 - t * t).max(0.0).sqrt())
}

/// Coefficient of `t^{2i+2}` in the power series of `U`:
/// `(4i+5) (1/2)_i / (2 (2i+1) (i+1) i!)`.
pub fn ntk_u_even_coefficient(i: usize) -> f64 {
    let mut ratio = 1.0; // (1/2)_i / i!
    for k in 1..=i {
        ratio *= (k as f64 - 0.5) / k as f64;
    }
    even_coefficient_from_ratio(i, ratio)
}

fn even_coefficient_from_ratio(i: usize, ratio: f64) -> f64 {
    let i = i as f64;
    (4.0 * i + 5.0) * ratio / (2.0 * (2.0 * i + 1.0) * (i + 1.0))
}

/// Coefficient of `t^k` in the power series of `U`.
pub fn ntk_u_coefficient(k: usize) -> f64 {
    match k {
        0 => 1.0,
        1 => 1.5 * PI,
        k if k % 2 == 1 => 0.0,
        k => ntk_u_even_coefficient(k / 2 - 1),
    }
}

/// `1 + 3 pi t / 2 + sum_{i < terms} c_i t^{2i+2}`.
pub fn ntk_u_series(t: f64, terms: usize) -> f64 {
    let t2 = t * t;
    let mut sum = 1.0 + 1.5 * PI * t;
    let mut ratio = 1.0;
    let mut power = t2;
    for i in 0..terms {
        if i > 0 {
            ratio *= (i as f64 - 0.5) / i as f64;
        }
        sum += even_coefficient_from_ratio(i, ratio) * power;
        power *= t2;
    }
    sum
}

/// `(|x~| |z~|, cos angle(x~, z~))`. One square root of the product keeps
/// `cos = 1` exact for identical inputs, where `U` has infinite slope.
fn augmented_cosine(xz: f64, xx: f64, zz: f64, dim: usize) -> (f64, f64) {
    let d = dim as f64;
    let norms = ((xx + d) * (zz + d)).sqrt();
    let cos = ((xz + d) / norms).clamp(-1.0, 1.0);
    (norms, cos)
}

/// `h^inf(x, x') = |x~| |x~'| U(cos angle(x~, x~')) / (4 pi)`.
pub fn ntk_infinite(ntk: &NtkSpec, x: &[f64], x2: &[f64]) -> Result<f64> {
    check_dims(ntk.input_dim, x.len(), "ntk_infinite")?;
    check_dims(ntk.input_dim, x2.len(), "ntk_infinite")?;
    Ok(ntk_infinite_parts(dot(x, x2), dot(x, x), dot(x2, x2), ntk.input_dim))
}

fn ntk_infinite_parts(xz: f64, xx: f64, zz: f64, dim: usize) -> f64 {
    let (norms, cos) = augmented_cosine(xz, xx, zz, dim);
    let u = 3.0 * cos * (PI - cos.acos()) + (1.0 - cos * cos).max(0.0).sqrt();
    norms * u / (4.0 * PI)
}

/// Sampled first-layer weights `w_j ~ N(0, I_{d+1})` and output weights `a_j ~ N(0, 1)`.
#[derive(Debug, Clone)]
pub struct FiniteWidthNtk {
    dim: usize,
    width: usize,
    form: FiniteWidthForm,
    weights: Vec<f64>,
    output: Vec<f64>,
}

impl FiniteWidthNtk {
    pub fn sample(ntk: &NtkSpec, seed: u64) -> Result<Self> {
        if ntk.width == 0 {
            return Err(Error::usage("network width must be at least 1"));
        }
        let stride = ntk.input_dim + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(ntk.width * stride);
        let mut output = Vec::with_capacity(ntk.width);
        for _ in 0..ntk.width {
            for _ in 0..stride {
                weights.push(StandardNormal.sample(&mut rng));
            }
            output.push(StandardNormal.sample(&mut rng));
        }
        Ok(FiniteWidthNtk {
            dim: ntk.input_dim,
            width: ntk.width,
            form: ntk.form,
            weights,
            output,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn eval(&self, x: &[f64], x2: &[f64]) -> Result<f64> {
        check_dims(self.dim, x.len(), "finite-width NTK")?;
        check_dims(self.dim, x2.len(), "finite-width NTK")?;
        let sqrt_d = (self.dim as f64).sqrt();
        let stride = self.dim + 1;
        let (first_scale, second_inner) = match self.form {
            FiniteWidthForm::Displayed => (1.0, dot(x, x2)),
            FiniteWidthForm::LimitMatched => (0.5, dot(x, x2) + self.dim as f64),
        };
        let mut act = 0.0;
        let mut grad = 0.0;
        for (w, &a) in self.weights.chunks_exact(stride).zip(&self.output) {
            let u = dot(&w[..self.dim], x) + w[self.dim] * sqrt_d;
            let v = dot(&w[..self.dim], x2) + w[self.dim] * sqrt_d;
            if u > 0.0 && v > 0.0 {
                act += u * v;
                grad += a * a;
            }
        }
        Ok((first_scale * act + second_inner * grad) / self.width as f64)
    }
}

/// Finite-width empirical tangent kernel for one pair, weights drawn from `seed`.
pub fn ntk_finite_width(ntk: &NtkSpec, x: &[f64], x2: &[f64], seed: u64) -> Result<f64> {
    FiniteWidthNtk::sample(ntk, seed)?.eval(x, x2)
}

/// The kernels the interpolation and spectral code accept.
#[derive(Debug, Clone)]
pub enum Kernel {
    Taylor(TaylorKernelSpec),
    /// `|x~| |x~'| sum_i u_i cos^i / (4 pi)`, with `u_i` the coefficients of `U`.
    Ntk { input_dim: usize },
}

impl Kernel {
    pub fn exp() -> Self {
        Kernel::Taylor(TaylorKernelSpec::exp())
    }

    pub fn label(&self) -> &str {
        match self {
            Kernel::Taylor(spec) => spec.label(),
            Kernel::Ntk { .. } => "ntk",
        }
    }

    pub fn taylor(&self) -> Option<&TaylorKernelSpec> {
        match self {
            Kernel::Taylor(spec) => Some(spec),
            Kernel::Ntk { .. } => None,
        }
    }

    /// Evaluation from `x^T z`, `|x|^2`, `|z|^2` and the input dimension.
    pub fn eval_parts(&self, xz: f64, xx: f64, zz: f64, dim: usize, mode: Truncation) -> f64 {
        match self {
            Kernel::Taylor(spec) => spec.h_unchecked(xz / dim as f64, mode),
            Kernel::Ntk { .. } => match mode {
                Truncation::Full => ntk_infinite_parts(xz, xx, zz, dim),
                Truncation::AtMost(deg) => {
                    let (norms, cos) = augmented_cosine(xz, xx, zz, dim);
                    let s: f64 = (0..=deg)
                        .map(|k| ntk_u_coefficient(k as usize) * pow_u(cos, k))
                        .sum();
                    norms * s / (4.0 * PI)
                }
                Truncation::Exactly(k) => {
                    let (norms, cos) = augmented_cosine(xz, xx, zz, dim);
                    norms * ntk_u_coefficient(k as usize) * pow_u(cos, k) / (4.0 * PI)
                }
            },
        }
    }

    pub fn eval_mode(&self, x: &[f64], z: &[f64], mode: Truncation) -> Result<f64> {
        check_dims(x.len(), z.len(), "kernel_eval")?;
        if x.is_empty() {
            return Err(Error::usage("kernel inputs must have dimension >= 1"));
        }
        if let Kernel::Ntk { input_dim } = self {
            check_dims(*input_dim, x.len(), "kernel_eval")?;
        }
        Ok(self.eval_parts(dot(x, z), dot(x, x), dot(z, z), x.len(), mode))
    }

    pub fn eval(&self, x: &[f64], z: &[f64]) -> Result<f64> {
        self.eval_mode(x, z, Truncation::Full)
    }
}

/// `h(x^T z / d)` for a Taylor kernel.
pub fn kernel_eval(spec: &TaylorKernelSpec, x: &[f64], z: &[f64], mode: Truncation) -> Result<f64> {
    check_dims(x.len(), z.len(), "kernel_eval")?;
    if x.is_empty() {
        return Err(Error::usage("kernel inputs must have dimension >= 1"));
    }
    spec.eval_h(dot(x, z) / x.len() as f64, mode)
}

/// Sequential dot product; every kernel entry in the crate goes through this so
/// that `k(x_i, x_j)` is bit-identical wherever it is recomputed.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
