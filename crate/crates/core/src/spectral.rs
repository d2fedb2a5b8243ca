//! Rank and eigenvalue-floor diagnostics for truncated kernel matrices, the
//! diagonal-dominance check on the full kernel, the small-ball estimate and
//! the `L^4 / L^2` moment ratio.

use faer::Mat;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dims, Error, Result};
use crate::interpolant::{kernel_matrix, mean_se};
use crate::kernels::{dot, ntk_u_coefficient, Kernel, TaylorKernelSpec, Truncation};
use crate::linalg::{self, Design};
use crate::multiindex::{binomial, enumerate_multi_indices, MultiIndex};
use crate::orthopoly::{check_positive_prefix, feature_scales, FeatureMatrices, OrthoPolyBasis};

/// Relative cutoff separating numerically zero eigenvalues.
pub const RANK_CUTOFF: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralReport {
    /// Descending.
    pub eigenvalues: Vec<f64>,
    pub rank_numeric: usize,
    pub rank_predicted: u64,
    pub lambda_min_nonzero: f64,
    /// Largest eigenvalue below the cutoff (0 when the matrix has full rank).
    pub largest_null: f64,
    pub floor_scale: f64,
    pub floor_ratio: f64,
    /// Set when `n < C(d + iota, iota)`, so the predicted rank cannot be reached.
    pub underdetermined: bool,
    pub n: usize,
    pub d: usize,
    pub iota: u32,
    pub kernel: String,
    pub seed: u64,
}

/// Numerical rank and smallest nonzero eigenvalue of a descending spectrum.
pub fn rank_split(desc: &[f64]) -> (usize, f64, f64) {
    let top = desc.first().copied().unwrap_or(0.0);
    let cut = RANK_CUTOFF * top;
    let rank = desc.iter().take_while(|&&v| v >= cut).count();
    let min_nz = if rank > 0 { desc[rank - 1] } else { 0.0 };
    let null = desc.get(rank).map_or(0.0, |v| v.max(0.0));
    (rank, min_nz, null)
}

/// Eigendecomposes the normalized `K^{[<= iota]}`.
pub fn restricted_isometry_report(kernel: &Kernel, x: &Design, iota: u32, seed: u64) -> Result<SpectralReport> {
    let (n, d) = (x.rows(), x.dim());
    let k = kernel_matrix(kernel, x, Truncation::AtMost(iota), true)?;
    let mut eig = linalg::sym_eigenvalues(k.as_ref())?;
    eig.reverse();
    let (rank, min_nz, null) = rank_split(&eig);
    let predicted = binomial(d as u64 + u64::from(iota), u64::from(iota))?;
    let floor_scale = (d as f64).powi(-(iota as i32));
    Ok(SpectralReport {
        eigenvalues: eig,
        rank_numeric: rank,
        rank_predicted: predicted,
        lambda_min_nonzero: min_nz,
        largest_null: null,
        floor_scale,
        floor_ratio: min_nz / floor_scale,
        underdetermined: (n as u64) < predicted,
        n,
        d,
        iota,
        kernel: kernel.label().to_string(),
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaMinEig {
    /// `lambda_min(Phi^T Phi / n)`.
    pub phi: f64,
    /// `lambda_min(Psi^T Psi / n)`.
    pub psi: f64,
    /// Set when there are more features than samples.
    pub wide: bool,
}

fn gram_over_n(m: &Mat<f64>) -> Mat<f64> {
    let n = m.nrows() as f64;
    let mut g = m.transpose() * m;
    for j in 0..g.ncols() {
        for i in 0..g.nrows() {
            g[(i, j)] /= n;
        }
    }
    linalg::symmetrize_from_upper(&mut g);
    g
}

/// Ascending spectrum of `Phi^T Phi / n`.
pub fn theta_eigenvalues(fm: &FeatureMatrices) -> Result<Vec<f64>> {
    linalg::sym_eigenvalues(gram_over_n(&fm.phi).as_ref())
}

pub fn theta_min_eig(fm: &FeatureMatrices) -> Result<ThetaMinEig> {
    let phi = theta_eigenvalues(fm)?[0];
    let psi = linalg::sym_eigenvalues(gram_over_n(&fm.psi).as_ref())?[0];
    Ok(ThetaMinEig {
        phi,
        psi,
        wide: fm.num_features() > fm.phi.nrows(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelFloor {
    pub lambda_min_nk: f64,
    pub diag_min: f64,
    pub offdiag_l1_max: f64,
}

impl KernelFloor {
    pub fn dominant(&self) -> bool {
        self.offdiag_l1_max < self.diag_min
    }
}

fn check_degree_weight(kernel: &Kernel, degree: u32) -> Result<()> {
    let w = match kernel {
        Kernel::Taylor(spec) => spec.alpha(degree as usize),
        Kernel::Ntk { .. } => ntk_u_coefficient(degree as usize),
    };
    if !(w > 0.0) {
        return Err(Error::Precondition(format!(
            "degree {degree} carries no weight in '{}'",
            kernel.label()
        )));
    }
    Ok(())
}

/// Smallest diagonal entry of `n K^{[iota']}` and the largest off-diagonal row
/// `l1` norm. Cheap: no eigendecomposition.
pub fn degree_component_dominance(kernel: &Kernel, x: &Design, degree: u32) -> Result<(f64, f64)> {
    check_degree_weight(kernel, degree)?;
    let comp = kernel_matrix(kernel, x, Truncation::Exactly(degree), false)?;
    let n = x.rows();
    let mut diag_min = f64::INFINITY;
    let mut off_max = 0.0f64;
    for i in 0..n {
        diag_min = diag_min.min(comp[(i, i)]);
        let row: f64 = (0..n).filter(|&j| j != i).map(|j| comp[(i, j)].abs()).sum();
        off_max = off_max.max(row);
    }
    Ok((diag_min, off_max))
}

pub fn kernel_floor_check(kernel: &Kernel, x: &Design, degree: u32) -> Result<KernelFloor> {
    let (diag_min, offdiag_l1_max) = degree_component_dominance(kernel, x, degree)?;
    let k = kernel_matrix(kernel, x, Truncation::Full, false)?;
    let lambda_min_nk = linalg::sym_eigenvalues(k.as_ref())?[0];
    Ok(KernelFloor {
        lambda_min_nk,
        diag_min,
        offdiag_l1_max,
    })
}

/// Evaluates `sum_r w_r q_r(x)` over a fixed index list.
struct QExpansion<'a> {
    basis: &'a OrthoPolyBasis,
    indices: Vec<MultiIndex>,
    weights: Vec<f64>,
    kmax: usize,
    qvals: Vec<f64>,
}

impl<'a> QExpansion<'a> {
    fn new(basis: &'a OrthoPolyBasis, indices: Vec<MultiIndex>, weights: Vec<f64>, dim: usize, degree: u32) -> Self {
        let kmax = degree as usize + 1;
        QExpansion {
            basis,
            indices,
            weights,
            kmax,
            qvals: vec![0.0; dim * kmax],
        }
    }

    fn eval(&mut self, x: &[f64]) -> f64 {
        let k = self.kmax;
        for (c, &t) in x.iter().enumerate() {
            self.basis.eval_all(t, &mut self.qvals[c * k..(c + 1) * k]);
        }
        let q = &self.qvals;
        self.indices
            .iter()
            .zip(&self.weights)
            .filter(|(_, w)| **w != 0.0)
            .map(|(r, w)| w * r.support().map(|(c, e)| q[c * k + e as usize]).product::<f64>())
            .sum()
    }
}

fn check_basis(basis: &OrthoPolyBasis, degree: u32) -> Result<()> {
    if degree > basis.max_degree() {
        return Err(Error::usage(format!(
            "basis has degree {} but {degree} is needed",
            basis.max_degree()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmallBall {
    pub prob_hat: f64,
    pub std_error: f64,
    pub exact_second_moment: f64,
}

/// Monte-Carlo `P(f_u(X)^2 > eps E f_u^2)` with
/// `f_u = sum_r u_r sqrt(c_r alpha_|r|) d^{-|r|/2} q_r`.
#[allow(clippy::too_many_arguments)]
pub fn small_ball_estimate(
    spec: &TaylorKernelSpec,
    basis: &OrthoPolyBasis,
    d: usize,
    iota: u32,
    u: &[f64],
    eps: f64,
    samples: usize,
    seed: u64,
) -> Result<SmallBall> {
    check_basis(basis, iota)?;
    check_positive_prefix(spec, iota)?;
    let indices = enumerate_multi_indices(d, iota)?;
    check_dims(indices.len(), u.len(), "small-ball direction")?;
    let norm = dot(u, u).sqrt();
    if (norm - 1.0).abs() > 1e-8 {
        return Err(Error::usage(format!("direction must be a unit vector, |u| = {norm}")));
    }
    if samples == 0 {
        return Err(Error::usage("small-ball estimate needs samples >= 1"));
    }
    let scales = feature_scales(spec, &indices, d)?;
    let second: f64 = u.iter().zip(&scales).map(|(a, s)| a * a * s * s).sum();
    let weights = u.iter().zip(&scales).map(|(a, s)| a * s).collect();
    let mut f = QExpansion::new(basis, indices, weights, d, iota);
    let dist = basis.distribution();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = vec![0.0; d];
    let mut hits = 0usize;
    for _ in 0..samples {
        for xi in x.iter_mut() {
            *xi = dist.sample(&mut rng);
        }
        let v = f.eval(&x);
        if v * v > eps * second {
            hits += 1;
        }
    }
    let p = hits as f64 / samples as f64;
    Ok(SmallBall {
        prob_hat: p,
        std_error: (p * (1.0 - p) / samples as f64).sqrt(),
        exact_second_moment: second,
    })
}

/// Paley-Zygmund lower bound on the small-ball probability from an
/// `E f^4 / (E f^2)^2` ratio.
pub fn paley_zygmund_bound(eps: f64, l4_l2: f64) -> f64 {
    (1.0 - eps).powi(2) / l4_l2
}

/// Monte-Carlo `E[f_g^4] / (sum g^2)^2` with `f_g = sum_r g_r q_r`, plus its
/// standard error.
pub fn l4_l2_ratio(
    basis: &OrthoPolyBasis,
    gamma: &[f64],
    d: usize,
    iota: u32,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    check_basis(basis, iota)?;
    let indices = enumerate_multi_indices(d, iota)?;
    check_dims(indices.len(), gamma.len(), "coefficient vector")?;
    let l2 = dot(gamma, gamma);
    if !(l2 > 0.0) {
        return Err(Error::usage("coefficient vector must be nonzero"));
    }
    if samples == 0 {
        return Err(Error::usage("moment ratio needs samples >= 1"));
    }
    let mut f = QExpansion::new(basis, indices, gamma.to_vec(), d, iota);
    let dist = basis.distribution();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = vec![0.0; d];
    let fourth: Vec<f64> = (0..samples)
        .map(|_| {
            for xi in x.iter_mut() {
                *xi = dist.sample(&mut rng);
            }
            f.eval(&x).powi(4) / (l2 * l2)
        })
        .collect();
    Ok(mean_se(&fourth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orthopoly::{build_feature_matrices, gram_schmidt_basis, CoordinateDistribution};

    const GAUSS: CoordinateDistribution = CoordinateDistribution::StandardNormal;

    #[test]
    fn linear_kernel_in_one_dimension_has_rank_two() {
        let k = Kernel::Taylor(TaylorKernelSpec::polynomial(vec![1.0, 1.0], "1+t").unwrap());
        let x = GAUSS.sample_design(100, 1, 3).unwrap();
        let r = restricted_isometry_report(&k, &x, 1, 3).unwrap();
        assert_eq!(r.rank_numeric, 2);
        assert_eq!(r.rank_predicted, 2);
        assert!(r.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn degree_zero_is_rank_one() {
        let x = GAUSS.sample_design(30, 4, 1).unwrap();
        let r = restricted_isometry_report(&Kernel::exp(), &x, 0, 1).unwrap();
        assert_eq!(r.rank_numeric, 1);
        assert!((r.eigenvalues[0] - 1.0).abs() < 1e-12);
        assert!(!r.underdetermined);
        let small = GAUSS.sample_design(5, 4, 1).unwrap();
        assert!(restricted_isometry_report(&Kernel::exp(), &small, 2, 1).unwrap().underdetermined);
    }

    #[test]
    fn theta_single_column() {
        let spec = TaylorKernelSpec::polynomial(vec![2.5, 1.0], "p").unwrap();
        let basis = gram_schmidt_basis(GAUSS, 1).unwrap();
        let x = GAUSS.sample_design(20, 3, 8).unwrap();
        let fm = build_feature_matrices(&spec, &basis, &x, 0).unwrap();
        let t = theta_min_eig(&fm).unwrap();
        assert!((t.phi - 2.5).abs() < 1e-12 && (t.psi - 2.5).abs() < 1e-12);
    }

    #[test]
    fn theta_spectrum_matches_kernel_spectrum() {
        let spec = TaylorKernelSpec::exp();
        let basis = gram_schmidt_basis(GAUSS, 2).unwrap();
        for seed in 0..3 {
            let x = GAUSS.sample_design(200, 5, seed).unwrap();
            let fm = build_feature_matrices(&spec, &basis, &x, 2).unwrap();
            let mut theta = theta_eigenvalues(&fm).unwrap();
            theta.reverse();
            let r = restricted_isometry_report(&Kernel::Taylor(spec.clone()), &x, 2, seed).unwrap();
            assert_eq!(r.rank_numeric, theta.len());
            for (a, b) in theta.iter().zip(&r.eigenvalues) {
                assert!((a - b).abs() <= 1e-8 * b.abs(), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn full_kernel_dominates_truncation() {
        let k = Kernel::exp();
        let x = GAUSS.sample_design(120, 6, 4).unwrap();
        let full = kernel_matrix(&k, &x, Truncation::Full, true).unwrap();
        let ef = linalg::sym_eigenvalues(full.as_ref()).unwrap();
        for iota in 0..=3 {
            let t = kernel_matrix(&k, &x, Truncation::AtMost(iota), true).unwrap();
            let et = linalg::sym_eigenvalues(t.as_ref()).unwrap();
            for (a, b) in ef.iter().zip(&et) {
                assert!(*a >= b - 1e-9, "iota {iota}: {a} < {b}");
            }
        }
    }

    #[test]
    fn floor_single_point() {
        let x = Design::from_rows(&[vec![1.0, 2.0, 0.5]]).unwrap();
        let k = Kernel::exp();
        let f = kernel_floor_check(&k, &x, 3).unwrap();
        let t: f64 = 5.25 / 3.0;
        assert!((f.lambda_min_nk - t.exp()).abs() < 1e-12);
        assert!((f.diag_min - t.powi(3) / 6.0).abs() < 1e-12);
        assert_eq!(f.offdiag_l1_max, 0.0);
        let gap = Kernel::Taylor(TaylorKernelSpec::polynomial(vec![1.0, 0.0, 1.0], "gap").unwrap());
        assert!(matches!(kernel_floor_check(&gap, &x, 1), Err(Error::Precondition(_))));
    }

    #[test]
    fn small_ball_constant_direction() {
        let spec = TaylorKernelSpec::exp();
        let basis = gram_schmidt_basis(GAUSS, 2).unwrap();
        let mut u = vec![0.0; 21];
        u[0] = 1.0;
        let sb = small_ball_estimate(&spec, &basis, 5, 2, &u, 0.99, 500, 2).unwrap();
        assert_eq!(sb.prob_hat, 1.0);
        assert!((sb.exact_second_moment - 1.0).abs() < 1e-15);
        u[1] = 0.1;
        assert!(small_ball_estimate(&spec, &basis, 5, 2, &u, 0.5, 10, 2).is_err());
    }

    #[test]
    fn moment_ratio_of_constant_is_one() {
        let basis = gram_schmidt_basis(GAUSS, 2).unwrap();
        let mut g = vec![0.0; 21];
        g[0] = -2.0;
        let (r, se) = l4_l2_ratio(&basis, &g, 5, 2, 100, 1).unwrap();
        assert!((r - 1.0).abs() < 1e-14 && se < 1e-14);
        assert!(l4_l2_ratio(&basis, &[0.0; 21], 5, 2, 100, 1).is_err());
    }

    #[test]
    fn paley_zygmund_is_consistent_with_estimate() {
        let spec = TaylorKernelSpec::exp();
        let basis = gram_schmidt_basis(GAUSS, 2).unwrap();
        let idx = enumerate_multi_indices(4, 2).unwrap();
        let u: Vec<f64> = (0..idx.len()).map(|i| ((i * 7 % 5) as f64) - 2.0).collect();
        let nu = dot(&u, &u).sqrt();
        let u: Vec<f64> = u.iter().map(|v| v / nu).collect();
        let scales = feature_scales(&spec, &idx, 4).unwrap();
        let g: Vec<f64> = u.iter().zip(&scales).map(|(a, s)| a * s).collect();
        let (ratio, _) = l4_l2_ratio(&basis, &g, 4, 2, 40_000, 3).unwrap();
        let sb = small_ball_estimate(&spec, &basis, 4, 2, &u, 0.1, 40_000, 4).unwrap();
        assert!(sb.prob_hat + 3.0 * sb.std_error >= paley_zygmund_bound(0.1, ratio));
    }
}
