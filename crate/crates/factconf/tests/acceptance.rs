//! End-to-end acceptance checks. Each test prints one PASS/FAIL line before asserting.

use std::path::Path;
use std::process::Command;

use factconf::bias::{
    bias_matrix, build_r_operator, check_identification, masked_entries, masked_procrustes, partial_id_interval,
};
use factconf::estimators::{
    dose_response_summaries, estimate_point, exposure_residuals, ife_fit, DoseCurve, EstimatorConfig, Learner, Method,
};
use factconf::factor::{posterior_moments, select_rank, FactorModel, NoiseMode, RankMethod, RankOptions};
use factconf::numerics::{lstsq, sample_covariance};
use factconf::panel::NeighborhoodSpec;
use factconf::rng::{derive_seed, haar_orthogonal, normal_matrix, rng_from};
use factconf::sim::{generate, run_benchmark, BenchEstimator, BenchmarkResult, SimScenario};
use factconf::spline::BSplineBasis;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

fn report(criterion: u32, name: &str, ok: bool, detail: &str) {
    println!("criterion {criterion:>2} {} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {criterion} ({name}) failed: {detail}");
}

fn estimators(labels: &[&str]) -> Vec<BenchEstimator> {
    labels.iter().map(|l| BenchEstimator::parse(l).unwrap()).collect()
}

fn bias_sd(res: &BenchmarkResult, scenario: &str, est: &str, target: &str) -> (f64, f64) {
    let row = res.row(scenario, est, target).unwrap_or_else(|| panic!("missing row {scenario}/{est}/{target}"));
    assert_eq!(row.failures, 0, "{est} failed on {scenario}");
    (row.bias, row.sd)
}

#[test]
fn fixed_spatial_effects_band() {
    let scenario = SimScenario::from_name("linear-fixed", 0).unwrap();
    let res = run_benchmark(&[scenario], &estimators(&["fc3", "stacked-dml", "ife6", "multi-dml"]), 100, 7).unwrap();
    let t = "beta.direct";
    let (fc_b, fc_sd) = bias_sd(&res, "linear-fixed", "fc3", t);
    let (st_b, _) = bias_sd(&res, "linear-fixed", "stacked-dml", t);
    let (ife_b, _) = bias_sd(&res, "linear-fixed", "ife6", t);
    let (mu_b, mu_sd) = bias_sd(&res, "linear-fixed", "multi-dml", t);
    let ok = fc_b.abs() <= 0.05
        && fc_sd <= 0.08
        && (0.30..=0.55).contains(&st_b)
        && (0.12..=0.27).contains(&ife_b)
        && mu_b.abs() <= 0.10
        && mu_sd >= 0.25;
    let detail =
        format!("fc3 {fc_b:.3}/{fc_sd:.3}, stacked-dml {st_b:.3}, ife6 {ife_b:.3}, multi-dml {mu_b:.3}/{mu_sd:.3}");
    report(1, "fixed spatial effects", ok, &detail);
}

#[test]
fn interference_recovery() {
    let scenario = SimScenario::from_name("interference", 0).unwrap();
    let res = run_benchmark(&[scenario], &estimators(&["fc4", "stacked-dml", "ife4"]), 100, 11).unwrap();
    let get = |e: &str, t: &str| bias_sd(&res, "interference", e, t).0;
    let (d, s) = ("beta.direct", "beta.spillover");
    let fc_direct = 1.0 + get("fc4", d);
    let fc_spill = 0.5 + get("fc4", s);
    let dml = get("stacked-dml", d).abs().max(get("stacked-dml", s).abs());
    let ife = get("ife4", d).abs().max(get("ife4", s).abs());
    let ok = (0.9..=1.1).contains(&fc_direct) && (0.4..=0.6).contains(&fc_spill) && dml > 0.1 && ife > 0.1;
    let detail = format!("fc4 mean ({fc_direct:.3}, {fc_spill:.3}), max |bias| stacked-dml {dml:.3}, ife4 {ife:.3}");
    report(2, "interference recovery", ok, &detail);
}

#[test]
fn misspecification_robustness() {
    let names = ["misspec-laplace", "misspec-t5", "misspec-mixture", "misspec-skew", "misspec-hetero"];
    let scenarios: Vec<SimScenario> = names.iter().map(|n| SimScenario::from_name(n, 0).unwrap()).collect();
    let res = run_benchmark(&scenarios, &estimators(&["fc3"]), 100, 13).unwrap();
    let biases: Vec<f64> = names.iter().map(|n| bias_sd(&res, n, "fc3", "beta.direct").0).collect();
    let ok = biases.iter().all(|b| b.abs() <= 0.1);
    let detail = names.iter().zip(&biases).map(|(n, b)| format!("{n} {b:.3}")).collect::<Vec<_>>().join(", ");
    report(3, "misspecification robustness", ok, &detail);
}

/// Exact population moments of a random instance, perturbed by `noise`, fed through the
/// completion machinery. Returns (C error, worst slope error) or None when not identified.
fn noiseless_instance(m: usize, n: usize, seed: u64, noise: f64) -> Option<(f64, f64)> {
    let mut rng = rng_from(seed);
    let b = normal_matrix(&mut rng, n, m);
    let psi = DVector::from_fn(n, |_, _| rng.gen_range(0.5..1.5));
    let gamma = normal_matrix(&mut rng, n, m);
    let theta_true = haar_orthogonal(&mut rng, m);
    let slopes = DVector::from_fn(n, |_, _| rng.gen_range(0.5..1.5));
    let r_op = build_r_operator(&FactorModel::from_parts(b, psi, NoiseMode::Diagonal).unwrap()).unwrap();
    let c_true = bias_matrix(&gamma, &theta_true, &r_op);
    let nb = NeighborhoodSpec::none(n);
    let mut jitter = |a: &DMatrix<f64>| a + normal_matrix(&mut rng, a.nrows(), a.ncols()) * noise;
    // Outcome loadings are only known up to rotation.
    let frame = haar_orthogonal(&mut rng_from(seed ^ 0xF00D), m);
    let gamma_seen = jitter(&(&gamma * &frame));
    let r_seen = jitter(&r_op);
    let c_seen = jitter(&c_true);
    let naive_diag = DVector::from_fn(n, |i, _| slopes[i] + c_seen[(i, i)]);
    if !check_identification(&gamma_seen, &r_seen, &nb).spanning_ok {
        return None;
    }
    let entries = masked_entries(&nb.off_mask(), &c_seen);
    let fit = masked_procrustes(&gamma_seen, &r_seen, &entries, 10, seed).unwrap();
    let c_hat = bias_matrix(&gamma_seen, &fit.theta, &r_seen);
    let slope_err = (0..n).map(|i| (naive_diag[i] - c_hat[(i, i)] - slopes[i]).abs()).fold(0.0, f64::max);
    Some(((&c_hat - &c_true).norm(), slope_err))
}

#[test]
fn identification_at_noiseless_limit() {
    let mut done = 0;
    let mut worst_c: f64 = 0.0;
    let mut worst_slope: f64 = 0.0;
    let mut seed = 0;
    while done < 50 {
        let m = 1 + done % 3;
        seed += 1;
        if let Some((c_err, s_err)) = noiseless_instance(m, 12, seed, 1e-6) {
            worst_c = worst_c.max(c_err);
            worst_slope = worst_slope.max(s_err);
            done += 1;
        }
        assert!(seed < 500, "too few identified instances");
    }
    let ok = worst_c <= 1e-4 && worst_slope <= 1e-3;
    report(
        4,
        "identification",
        ok,
        &format!("50 instances, max C error {worst_c:.2e}, max slope error {worst_slope:.2e}"),
    );
}

#[test]
fn partial_identification_containment() {
    let mut escapes = 0;
    let mut endpoint_gap: f64 = 0.0;
    for inst in 0..200u64 {
        let mut rng = rng_from(derive_seed(5, 0xA11, inst));
        let m = 1 + (inst % 3) as usize;
        let d = 6;
        let gamma = normal_matrix(&mut rng, d, m);
        let r_op = normal_matrix(&mut rng, m, d);
        let contrast = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
        let unit = (inst % d as u64) as usize;
        let iv = partial_id_interval(&gamma, &r_op, unit, &contrast);
        let slack = 1e-12 * iv.hi.abs().max(1.0);
        for _ in 0..1000 {
            let theta = haar_orthogonal(&mut rng, m);
            let realized = (gamma.row(unit) * &theta * &r_op * &contrast)[(0, 0)];
            if realized < iv.lo - slack || realized > iv.hi + slack {
                escapes += 1;
            }
        }
        if m == 1 {
            let at_plus = (gamma.row(unit) * &r_op * &contrast)[(0, 0)];
            endpoint_gap = endpoint_gap.max((at_plus.abs() - iv.hi).abs());
        }
    }
    let ok = escapes == 0 && endpoint_gap <= 1e-10;
    report(
        5,
        "partial identification",
        ok,
        &format!("{escapes} escapes in 200000 draws, rank-one endpoint gap {endpoint_gap:.1e}"),
    );
}

#[test]
fn conditional_outcome_covariance() {
    let mut scenario = SimScenario::from_name("linear-fixed", 0).unwrap();
    scenario.n_times = 2000;
    let draw = generate(&scenario, 21).unwrap();
    let panel = &draw.panel;
    let est = estimate_point(panel, &EstimatorConfig::new(Method::FC, 3)).unwrap();
    let fitted = est.bias_model.unwrap().outcome_covariance();
    // Sample Cov(Y | D): residuals of each outcome row on its own covariates and on every
    // exposure, each exposure first adjusted for the covariates of its coordinate.
    let (d, r) = panel.outcomes.shape();
    let p = panel.covariates.len();
    let own_design =
        |i: usize| DMatrix::from_fn(r, 1 + p, |t, k| if k == 0 { 1.0 } else { panel.covariates[k - 1][(i, t)] });
    let mut adjusted = DMatrix::zeros(d, r);
    for j in 0..d {
        let x = own_design(j);
        let dj = panel.exposures.row(j).transpose();
        let coef = lstsq(&x, &dj).unwrap();
        adjusted.set_row(j, &(dj - &x * coef).transpose());
    }
    let mut resid = DMatrix::zeros(r, d);
    for i in 0..d {
        let x = own_design(i);
        let design = DMatrix::from_fn(r, 1 + p + d, |t, k| if k <= p { x[(t, k)] } else { adjusted[(k - 1 - p, t)] });
        let y = panel.outcomes.row(i).transpose();
        let coef = lstsq(&design, &y).unwrap();
        resid.set_column(i, &(y - &design * coef));
    }
    let sample = sample_covariance(&resid, false).unwrap() * (r as f64 / (r - 1 - p - d) as f64);
    let rel = (&fitted - &sample).norm() / sample.norm();
    report(6, "conditional outcome covariance", rel <= 0.1, &format!("relative Frobenius error {rel:.4} at T = 2000"));
}

#[test]
fn degenerate_equivalences() {
    // No factors: the interactive fixed effects fit is the pooled OLS slope.
    let scenario = SimScenario::from_name("linear-fixed", 0).unwrap();
    let draw = generate(&scenario, 3).unwrap();
    let panel = &draw.panel;
    let center = |m: &DMatrix<f64>| m.add_scalar(-m.mean());
    let mut cols = vec![center(&panel.exposures)];
    cols.extend(panel.covariates.iter().map(center));
    let n = panel.exposures.len();
    let x = DMatrix::from_fn(n, cols.len(), |row, k| cols[k].as_slice()[row]);
    let y = DVector::from_column_slice(center(&panel.outcomes).as_slice());
    let ols = (x.transpose() * &x).cholesky().unwrap().solve(&(x.transpose() * y));
    let ife = ife_fit(panel, &EstimatorConfig::new(Method::IFE, 0)).unwrap();
    let ife_gap = (ife.beta[0] - ols[0]).abs();

    // No outcome loadings: the bias estimate vanishes and FC reduces to naive per-unit regressions.
    let mut quiet = scenario.clone();
    quiet.params.gamma_scale = 0.0;
    quiet.sigma_eps = 1e-3;
    let draw = generate(&quiet, 4).unwrap();
    let panel = &draw.panel;
    let mut config = EstimatorConfig::new(Method::FC, 3);
    config.learner = Learner::Linear;
    let fc = estimate_point(panel, &config).unwrap();
    let c_max = fc.bias_model.as_ref().unwrap().bias_matrix.amax();
    let (d, r) = panel.exposures.shape();
    let p = panel.covariates.len();
    let mut naive_gap: f64 = 0.0;
    for i in 0..d {
        let design = DMatrix::from_fn(r, 2 + p, |t, k| match k {
            0 => panel.exposures[(i, t)],
            1 => 1.0,
            k => panel.covariates[k - 2][(i, t)],
        });
        let coef = lstsq(&design, &panel.outcomes.row(i).transpose()).unwrap();
        naive_gap = naive_gap.max((coef[0] - fc.unit_slopes[i][0]).abs());
    }

    // Posterior moments for two exposures sharing one unit-loading factor with unit noise.
    let model =
        FactorModel::from_parts(DMatrix::from_element(2, 1, 1.0), DVector::from_element(2, 1.0), NoiseMode::Diagonal)
            .unwrap();
    let sign = model.loadings[(0, 0)].signum();
    let post = posterior_moments(&model);
    let mean_at = sign * post.mean(&DVector::from_vec(vec![1.0, 2.0]))[0];
    let post_err = [
        (sign * post.mean_operator[(0, 0)] - 1.0 / 3.0).abs(),
        (sign * post.mean_operator[(0, 1)] - 1.0 / 3.0).abs(),
        (post.cov[(0, 0)] - 1.0 / 3.0).abs(),
        (mean_at - 1.0).abs(),
        (post.sigma_d - DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0])).amax(),
    ]
    .into_iter()
    .fold(0.0, f64::max);

    let ok = ife_gap <= 1e-10 && c_max <= 1e-2 && naive_gap <= 1e-3 && post_err <= 1e-10;
    let detail = format!(
        "IFE(0) vs OLS {ife_gap:.1e}, zero-loading max |C| {c_max:.1e} and slope gap {naive_gap:.1e}, posterior error {post_err:.1e}"
    );
    report(7, "degenerate equivalences", ok, &detail);
}

#[test]
fn rank_selection() {
    let scenario = SimScenario::from_name("linear-fixed", 0).unwrap();
    let mut hits = [0usize; 2];
    for rep in 0..50u64 {
        let draw = generate(&scenario, derive_seed(17, 0x2A, rep)).unwrap();
        let resid = exposure_residuals(&draw.panel, Learner::default()).unwrap();
        for (k, method) in [RankMethod::InfoCriterion, RankMethod::EigenRatio].into_iter().enumerate() {
            if select_rank(&resid, method, 8, &RankOptions::default()).unwrap().rank == 3 {
                hits[k] += 1;
            }
        }
    }
    let ok = hits.iter().all(|&h| h * 10 >= 50 * 9);
    report(
        8,
        "rank selection",
        ok,
        &format!("rank 3 chosen {}/50 (information criterion), {}/50 (eigenvalue ratio)", hits[0], hits[1]),
    );
}

#[test]
fn dose_response_checks() {
    // Marginal curve against central differences of a smooth spline curve.
    let basis = BSplineBasis::uniform(-2.0, 2.0, 6);
    let coef: Vec<f64> = (0..basis.size()).map(|k| (k as f64 * 0.7).sin() + 0.1 * k as f64).collect();
    let curve = DoseCurve::spline(basis, coef).unwrap();
    let sample: Vec<f64> = (0..101).map(|k| -2.0 + 0.04 * k as f64).collect();
    let summary = dose_response_summaries(&curve, &sample, &[0.5]).unwrap();
    let h = 1e-5;
    let anchor = curve.value(summary.exposure_mean);
    let interior = 1..summary.grid.len() - 1;
    let fd_err = interior
        .map(|k| {
            let x = summary.grid[k];
            let fd = ((curve.value(x + h) - anchor) - (curve.value(x - h) - anchor)) / (2.0 * h);
            (fd - summary.marginal[k]).abs()
        })
        .fold(0.0, f64::max);

    // g(d) = d^2 fitted by a cubic spline, summarized over exposures {-1, 0, 1}.
    let basis = BSplineBasis::uniform(-3.0, 3.0, 4);
    let xs: Vec<f64> = (0..121).map(|k| -3.0 + 0.05 * k as f64).collect();
    let design = DMatrix::from_fn(xs.len(), basis.size(), |row, k| basis.eval(xs[row])[k]);
    let coef = lstsq(&design, &DVector::from_iterator(xs.len(), xs.iter().map(|x| x * x))).unwrap();
    let quad = DoseCurve::spline(basis, coef.iter().copied().collect()).unwrap();
    let s = dose_response_summaries(&quad, &[-1.0, 0.0, 1.0], &[1.0]).unwrap();
    let quad_err = s.acd.abs().max((s.ate[0].value - 1.0).abs());

    let ok = fd_err <= 1e-4 && quad_err <= 1e-3;
    report(
        9,
        "dose response",
        ok,
        &format!("marginal vs differences {fd_err:.1e}, quadratic example error {quad_err:.1e}"),
    );
}

fn run_cli(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_factconf")).args(args).env("FC_LOG", "error").output().unwrap();
    assert!(out.status.success(), "factconf {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

/// Document text without the timestamp header line.
fn without_header(path: &Path) -> String {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines().enumerate().filter(|(k, _)| *k != 1).map(|(_, l)| l).collect::<Vec<_>>().join("\n")
}

#[test]
fn cli_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let data_s = data.to_str().unwrap();
    run_cli(&["simulate", "--scenario", "linear-fixed", "--seed", "9", "--out", data_s]);
    let mut docs = Vec::new();
    for (k, threads) in ["1", "4"].iter().enumerate() {
        let out = tmp.path().join(format!("fit{k}"));
        run_cli(&[
            "fit",
            "--in",
            data_s,
            "--out",
            out.to_str().unwrap(),
            "--method",
            "fc",
            "--rank",
            "3",
            "--bootstrap",
            "10",
            "--seed",
            "5",
            "--threads",
            threads,
        ]);
        docs.push((without_header(&out.join("estimate.json")), std::fs::read(out.join("curve_0.csv")).unwrap()));
        let bench = tmp.path().join(format!("bench{k}"));
        run_cli(&[
            "benchmark",
            "--scenario",
            "linear-fixed",
            "--estimators",
            "fc3,ife3",
            "--reps",
            "3",
            "--seed",
            "2",
            "--out",
            bench.to_str().unwrap(),
            "--threads",
            threads,
            "--raw",
        ]);
        // The summary table carries wall-clock runtimes; the raw estimates do not.
        docs.push((String::new(), std::fs::read(bench.join("benchmark_raw.csv")).unwrap()));
    }
    let ok = docs[0] == docs[2] && docs[1] == docs[3] && !docs[0].0.contains("generated_at_unix");
    report(10, "determinism", ok, "fit and benchmark outputs identical across runs and thread counts");
}
