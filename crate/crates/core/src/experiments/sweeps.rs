//! Grid drivers. Cells run on a bounded rayon pool; rows are written in grid
//! order and flushed after every batch so interrupted runs stay usable.

use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::interpolant::{mean_se, sample_dataset, KernelSystem};
use crate::kernels::{ntk_infinite, FiniteWidthNtk, Kernel, NtkSpec};
use crate::linalg::Design;
use crate::multiindex::multi_index_count;
use crate::orthopoly::{build_feature_matrices, gram_schmidt_basis, lambda_norms};
use crate::spectral::{l4_l2_ratio, restricted_isometry_report, small_ball_estimate, theta_min_eig};

use super::config::{ExperimentConfig, ExperimentKind};
use super::rate::{rate_curve_alphas, theoretical_rate};
use super::seed::{cell_seed, stream};

pub const SCHEMA_VERSION: u32 = 1;

pub const DESCENT_HEADER: [&str; 14] = [
    "schema_version", "experiment", "n", "d", "trial", "seed", "variance_hat", "variance_se",
    "bias_hat", "bias_se", "lambda_min_nK", "pinv_fallback", "wall_ms", "error",
];

pub const SPECTRAL_HEADER: [&str; 19] = [
    "schema_version", "experiment", "n", "d", "iota", "trial", "seed", "kernel", "rank_numeric",
    "rank_predicted", "lambda_min_nonzero", "largest_null", "floor_scale", "floor_ratio",
    "theta_min_phi", "theta_min_psi", "lambda_norm", "lambda_inv_norm", "error",
];

pub const SMALLBALL_HEADER: [&str; 13] = [
    "schema_version", "experiment", "d", "iota", "index", "seed", "epsilon", "prob_hat",
    "prob_se", "exact_second_moment", "l4_l2_ratio", "l4_l2_se", "error",
];

pub const NTK_HEADER: [&str; 10] = [
    "schema_version", "experiment", "d", "width", "pair", "weight_seeds", "h_inf", "h_mean",
    "rel_error", "error",
];

pub const RATE_HEADER: [&str; 5] = ["schema_version", "experiment", "alpha", "iota", "beta"];

type Row = Vec<String>;

fn f(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(f).unwrap_or_default()
}

fn error_row(prefix: Vec<String>, width: usize, err: &Error) -> Row {
    let mut row = prefix;
    row.resize(width - 1, String::new());
    row.push(err.to_string());
    row
}

/// Runs `cells` on a pool of `threads` workers, writing each cell's rows in
/// input order. Per-cell failures must already be folded into rows.
pub fn run_cells<C, F, W>(cells: &[C], threads: usize, header: &[&str], out: W, eval: F) -> Result<()>
where
    C: Sync,
    F: Fn(&C) -> Vec<Row> + Sync,
    W: Write,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::usage(format!("thread pool: {e}")))?;
    let mut wtr = csv::Writer::from_writer(out);
    let io_err = |e: csv::Error| Error::Io {
        path: "<csv output>".into(),
        source: std::io::Error::other(e.to_string()),
    };
    wtr.write_record(header).map_err(io_err)?;
    wtr.flush().map_err(|e| Error::io("<csv output>", e))?;
    let batch = threads.max(1);
    for chunk in cells.chunks(batch) {
        let rows: Vec<Vec<Row>> = pool.install(|| chunk.par_iter().map(&eval).collect());
        for row in rows.iter().flatten() {
            wtr.write_record(row).map_err(io_err)?;
        }
        wtr.flush().map_err(|e| Error::io("<csv output>", e))?;
    }
    Ok(())
}

fn check_kind(cfg: &ExperimentConfig, kind: ExperimentKind) -> Result<()> {
    if cfg.experiment != kind {
        return Err(Error::Config(format!(
            "config describes '{}' but '{}' was requested",
            cfg.experiment.as_str(),
            kind.as_str()
        )));
    }
    Ok(())
}

struct DescentOutcome {
    variance: (f64, f64),
    bias: Option<(f64, f64)>,
    lambda_min: f64,
    pinv: bool,
}

fn descent_cell(cfg: &ExperimentConfig, n: usize, d: usize, seed: u64) -> Result<DescentOutcome> {
    let kernel = cfg.kernel.build(d)?;
    let target = cfg.target.build(&kernel, cfg.distribution, n, d, cfg.master_seed)?;
    let data = sample_dataset(cfg.distribution, n, d, &target, cfg.noise_sd, seed)?;
    let system = KernelSystem::new(&kernel, &data.x, 0.0)?;
    let test = cfg
        .distribution
        .sample_design(cfg.m_test, d, cell_seed(seed, &[stream::TEST]))?;
    let variance = mean_se(&system.variance_terms(&test)?);
    let bias = if cfg.target.is_none() {
        None
    } else {
        Some(mean_se(&system.bias_terms(&target, &test)?))
    };
    let diag = system.diagnostics();
    Ok(DescentOutcome {
        variance,
        bias,
        lambda_min: diag.lambda_min,
        pinv: diag.pinv_fallback,
    })
}

pub fn run_descent_sweep<W: Write>(cfg: &ExperimentConfig, threads: usize, out: W) -> Result<()> {
    check_kind(cfg, ExperimentKind::Descent)?;
    let mut cells = Vec::new();
    for n in cfg.sample_sizes() {
        for d in cfg.dims() {
            for trial in 0..cfg.trials {
                cells.push((n, d, trial));
            }
        }
    }
    run_cells(&cells, threads, &DESCENT_HEADER, out, |&(n, d, trial)| {
        let seed = cell_seed(cfg.master_seed, &[n as u64, d as u64, trial as u64]);
        let start = Instant::now();
        let res = descent_cell(cfg, n, d, seed);
        let wall = if cfg.record_timing {
            format!("{}", start.elapsed().as_millis())
        } else {
            String::new()
        };
        let prefix = vec![
            SCHEMA_VERSION.to_string(),
            "descent".into(),
            n.to_string(),
            d.to_string(),
            trial.to_string(),
            seed.to_string(),
        ];
        let row = match res {
            Ok(o) => {
                let mut row = prefix;
                row.extend([
                    f(o.variance.0),
                    f(o.variance.1),
                    opt(o.bias.map(|b| b.0)),
                    opt(o.bias.map(|b| b.1)),
                    f(o.lambda_min),
                    o.pinv.to_string(),
                    wall,
                    String::new(),
                ]);
                row
            }
            Err(e) => {
                let mut row = error_row(prefix, DESCENT_HEADER.len(), &e);
                row[12] = wall;
                row
            }
        };
        vec![row]
    })
}

struct SpectralOutcome {
    rank: usize,
    predicted: u64,
    min_nz: f64,
    null: f64,
    floor_scale: f64,
    floor_ratio: f64,
    theta: Option<(f64, f64)>,
    lambda: Option<(f64, f64)>,
}

fn spectral_cell(cfg: &ExperimentConfig, n: usize, d: usize, iota: u32, seed: u64) -> Result<SpectralOutcome> {
    let kernel = cfg.kernel.build(d)?;
    let x = cfg.distribution.sample_design(n, d, seed)?;
    let report = restricted_isometry_report(&kernel, &x, iota, seed)?;
    let (theta, lambda) = match &kernel {
        Kernel::Taylor(spec) => {
            let basis = gram_schmidt_basis(cfg.distribution, iota)?;
            let fm = build_feature_matrices(spec, &basis, &x, iota)?;
            let t = theta_min_eig(&fm)?;
            (Some((t.phi, t.psi)), Some(lambda_norms(&fm)?))
        }
        Kernel::Ntk { .. } => (None, None),
    };
    Ok(SpectralOutcome {
        rank: report.rank_numeric,
        predicted: report.rank_predicted,
        min_nz: report.lambda_min_nonzero,
        null: report.largest_null,
        floor_scale: report.floor_scale,
        floor_ratio: report.floor_ratio,
        theta,
        lambda,
    })
}

pub fn run_spectral_sweep<W: Write>(cfg: &ExperimentConfig, threads: usize, out: W) -> Result<()> {
    check_kind(cfg, ExperimentKind::Spectral)?;
    let iota = cfg.iota_or_err()?;
    let mut cells = Vec::new();
    for d in cfg.dims() {
        let sizes = match cfg.n_per_feature {
            Some(k) => vec![k
                .checked_mul(multi_index_count(d, iota)?)
                .ok_or_else(|| Error::Capacity("sample size overflows".into()))?],
            None => cfg.sample_sizes(),
        };
        for n in sizes {
            for trial in 0..cfg.trials {
                cells.push((n, d, trial));
            }
        }
    }
    let label = cfg.kernel.build(1)?.label().to_string();
    run_cells(&cells, threads, &SPECTRAL_HEADER, out, |&(n, d, trial)| {
        let seed = cell_seed(cfg.master_seed, &[n as u64, d as u64, trial as u64]);
        let prefix = vec![
            SCHEMA_VERSION.to_string(),
            "spectral".into(),
            n.to_string(),
            d.to_string(),
            iota.to_string(),
            trial.to_string(),
            seed.to_string(),
            label.clone(),
        ];
        let row = match spectral_cell(cfg, n, d, iota, seed) {
            Ok(o) => {
                let mut row = prefix;
                row.extend([
                    o.rank.to_string(),
                    o.predicted.to_string(),
                    f(o.min_nz),
                    f(o.null),
                    f(o.floor_scale),
                    f(o.floor_ratio),
                    opt(o.theta.map(|t| t.0)),
                    opt(o.theta.map(|t| t.1)),
                    opt(o.lambda.map(|l| l.0)),
                    opt(o.lambda.map(|l| l.1)),
                    String::new(),
                ]);
                row
            }
            Err(e) => error_row(prefix, SPECTRAL_HEADER.len(), &e),
        };
        vec![row]
    })
}

/// Uniformly random unit vector of length `len`.
pub fn random_unit_vector(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let v: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

type SmallBallOutcome = (f64, f64, f64, f64, f64);

fn smallball_cell(cfg: &ExperimentConfig, d: usize, iota: u32, seed: u64) -> Result<SmallBallOutcome> {
    let kernel = cfg.kernel.build(d)?;
    let spec = kernel
        .taylor()
        .ok_or_else(|| Error::Config("smallball needs a Taylor kernel".into()))?;
    let basis = gram_schmidt_basis(cfg.distribution, iota)?;
    let u = random_unit_vector(multi_index_count(d, iota)?, cell_seed(seed, &[stream::DIRECTION]));
    let sb = small_ball_estimate(
        spec,
        &basis,
        d,
        iota,
        &u,
        cfg.epsilon,
        cfg.mc_samples,
        cell_seed(seed, &[stream::SMALL_BALL]),
    )?;
    let (ratio, se) = l4_l2_ratio(&basis, &u, d, iota, cfg.l4_samples, cell_seed(seed, &[stream::MOMENT]))?;
    Ok((sb.prob_hat, sb.std_error, sb.exact_second_moment, ratio, se))
}

/// One random unit direction per row: the small-ball probability of `f_u` and
/// the moment ratio of the unscaled expansion `sum_r u_r q_r`.
pub fn run_smallball_sweep<W: Write>(cfg: &ExperimentConfig, threads: usize, out: W) -> Result<()> {
    check_kind(cfg, ExperimentKind::Smallball)?;
    let iota = cfg.iota_or_err()?;
    let cells: Vec<(usize, usize)> = cfg
        .dims()
        .into_iter()
        .flat_map(|d| (0..cfg.u_count).map(move |i| (d, i)))
        .collect();
    run_cells(&cells, threads, &SMALLBALL_HEADER, out, |&(d, index)| {
        let seed = cell_seed(cfg.master_seed, &[d as u64, u64::from(iota), index as u64]);
        let prefix = vec![
            SCHEMA_VERSION.to_string(),
            "smallball".into(),
            d.to_string(),
            iota.to_string(),
            index.to_string(),
            seed.to_string(),
            f(cfg.epsilon),
        ];
        let row = match smallball_cell(cfg, d, iota, seed) {
            Ok((p, pse, m2, r, rse)) => {
                let mut row = prefix;
                row.extend([f(p), f(pse), f(m2), f(r), f(rse), String::new()]);
                row
            }
            Err(e) => error_row(prefix, SMALLBALL_HEADER.len(), &e),
        };
        vec![row]
    })
}

/// Random Gaussian input pairs for a dimension.
pub fn ntk_pairs(master_seed: u64, d: usize, pairs: usize) -> Result<(Design, Design)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cell_seed(master_seed, &[stream::PAIRS, d as u64]));
    let mut draw = |rows: usize| -> Result<Design> {
        let data = (0..rows * d).map(|_| StandardNormal.sample(&mut rng)).collect();
        Design::from_row_major(rows, d, data)
    };
    let a = draw(pairs)?;
    let b = draw(pairs)?;
    Ok((a, b))
}

/// Mean over `weight_seeds` independent networks of the finite-width kernel on
/// every pair, next to the infinite-width value.
pub fn ntk_pair_means(cfg: &ExperimentConfig, d: usize, width: usize) -> Result<Vec<(f64, f64)>> {
    let (a, b) = ntk_pairs(cfg.master_seed, d, cfg.pairs)?;
    let spec = NtkSpec::new(d, width);
    let mut sums = vec![0.0; cfg.pairs];
    for s in 0..cfg.weight_seeds {
        let net = FiniteWidthNtk::sample(
            &spec,
            cell_seed(cfg.master_seed, &[stream::WEIGHTS, d as u64, width as u64, s as u64]),
        )?;
        for (p, sum) in sums.iter_mut().enumerate() {
            *sum += net.eval(a.row(p), b.row(p))?;
        }
    }
    (0..cfg.pairs)
        .map(|p| {
            let h_inf = ntk_infinite(&spec, a.row(p), b.row(p))?;
            Ok((h_inf, sums[p] / cfg.weight_seeds as f64))
        })
        .collect()
}

pub fn run_ntk_check<W: Write>(cfg: &ExperimentConfig, threads: usize, out: W) -> Result<()> {
    check_kind(cfg, ExperimentKind::NtkCheck)?;
    let cells: Vec<(usize, usize)> = cfg
        .dims()
        .into_iter()
        .flat_map(|d| cfg.widths.iter().map(move |&m| (d, m)))
        .collect();
    run_cells(&cells, threads, &NTK_HEADER, out, |&(d, width)| {
        let prefix = |pair: String| {
            vec![
                SCHEMA_VERSION.to_string(),
                "ntk_check".into(),
                d.to_string(),
                width.to_string(),
                pair,
                cfg.weight_seeds.to_string(),
            ]
        };
        match ntk_pair_means(cfg, d, width) {
            Ok(values) => values
                .into_iter()
                .enumerate()
                .map(|(p, (h_inf, h_mean))| {
                    let mut row = prefix(p.to_string());
                    row.extend([
                        f(h_inf),
                        f(h_mean),
                        f((h_mean - h_inf).abs() / h_inf.abs()),
                        String::new(),
                    ]);
                    row
                })
                .collect(),
            Err(e) => vec![error_row(prefix(String::new()), NTK_HEADER.len(), &e)],
        }
    })
}

pub fn run_rate_curve<W: Write>(cfg: &ExperimentConfig, out: W) -> Result<()> {
    check_kind(cfg, ExperimentKind::RateCurve)?;
    let alphas = rate_curve_alphas(cfg.alpha_points);
    let rows: Vec<Row> = alphas
        .iter()
        .map(|&a| {
            let (iota, beta) = theoretical_rate(a)?;
            Ok(vec![
                SCHEMA_VERSION.to_string(),
                "rate_curve".into(),
                f(a),
                iota.to_string(),
                f(beta),
            ])
        })
        .collect::<Result<_>>()?;
    run_cells(&[()], 1, &RATE_HEADER, out, |_| rows.clone())
}

/// Dispatches on the configured experiment kind.
pub fn run_experiment<W: Write>(cfg: &ExperimentConfig, threads: usize, out: W) -> Result<()> {
    match cfg.experiment {
        ExperimentKind::Descent => run_descent_sweep(cfg, threads, out),
        ExperimentKind::Spectral => run_spectral_sweep(cfg, threads, out),
        ExperimentKind::Smallball => run_smallball_sweep(cfg, threads, out),
        ExperimentKind::NtkCheck => run_ntk_check(cfg, threads, out),
        ExperimentKind::RateCurve => run_rate_curve(cfg, out),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(cfg: &str, threads: usize) -> String {
        let cfg = ExperimentConfig::from_json_str(cfg).unwrap();
        let mut buf = Vec::new();
        run_experiment(&cfg, threads, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn descent_schema_and_empty_bias() {
        let out = run(r#"{"experiment":"descent","n":30,"d_grid":[3,5],"trials":2,"m_test":20}"#, 2);
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines[0], DESCENT_HEADER.join(","));
        assert_eq!(lines.len(), 5);
        for l in &lines[1..] {
            let cols: Vec<&str> = l.split(',').collect();
            assert_eq!(cols.len(), 14);
            assert_eq!(cols[0], "1");
            assert!(!cols[6].is_empty() && cols[8].is_empty() && cols[9].is_empty());
            assert!(cols[12].is_empty() && cols[13].is_empty());
        }
    }

    #[test]
    fn descent_is_thread_count_independent() {
        let cfg = r#"{"experiment":"descent","n":[20,25],"d_grid":[2,4],"trials":2,"m_test":10,
            "target":{"kind":"representable","density":{"kind":"coordinate","index":0},"reference_size":50},
            "noise_sd":0.1,"master_seed":3}"#;
        assert_eq!(run(cfg, 1), run(cfg, 3));
    }

    #[test]
    fn singular_kernel_sets_fallback_flag() {
        // constant kernel: rank one
        let out = run(
            r#"{"experiment":"descent","n":5,"d_grid":[1],"m_test":4,"kernel":{"kind":"polynomial","coefficients":[1]}}"#,
            1,
        );
        let row: Vec<&str> = out.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(row.len(), 14);
        assert_eq!(row[11], "true");
    }

    #[test]
    fn smallball_with_no_directions_is_header_only() {
        let out = run(r#"{"experiment":"smallball","d_grid":[4],"iota":2,"u_count":0}"#, 1);
        assert_eq!(out, format!("{}\n", SMALLBALL_HEADER.join(",")));
    }

    #[test]
    fn spectral_rank_law_rows() {
        let out = run(
            r#"{"experiment":"spectral","d_grid":[4,5],"iota":2,"n_per_feature":4,"trials":2}"#,
            2,
        );
        let rows: Vec<Vec<String>> = out.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect();
        assert_eq!(rows.len(), 4);
        for r in rows {
            assert_eq!(r[8], r[9], "{r:?}");
            assert!(r[18].is_empty());
        }
    }

    #[test]
    fn rate_curve_rows() {
        let out = run(r#"{"experiment":"rate_curve","alpha_points":9}"#, 1);
        for l in out.lines().skip(1) {
            let c: Vec<f64> = l.split(',').skip(2).map(|v| v.parse().unwrap()).collect();
            assert!(c[2] >= 0.0);
        }
    }

    #[test]
    fn kind_mismatch_is_a_config_error() {
        let cfg = ExperimentConfig::from_json_str(r#"{"experiment":"rate_curve"}"#).unwrap();
        let err = run_descent_sweep(&cfg, 1, Vec::new()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
