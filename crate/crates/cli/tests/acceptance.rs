//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runs as a plain binary (`harness = false`).

#![allow(clippy::needless_range_loop)]

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use gapfill_core::baseline::{
    fill_kalman, fill_linear, fill_moving_average, fill_poly_batch, fill_poly_local, fill_spline, FillerConfig,
};
use gapfill_core::bench::{run_method, run_synthetic_benchmark, synthetic_case, BenchmarkReport, Method, MethodConfig};
use gapfill_core::bidir::{combine, EnsembleCombiner, LearnedBlend};
use gapfill_core::evo::{crossover, initial_population, mutate, random_chain};
use gapfill_core::lag::{AtomicModel, LagMatrix, ModelKind};
use gapfill_core::parallel::with_threads;
use gapfill_core::synth::{generate, inject_gaps, GapSpec, SyntheticSpec};
use gapfill_core::{run_search, EvoConfig, TimeSeries};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BENCH_SEED: u64 = 42;
const BENCH_SEEDS: usize = 5;
const BENCH_LENGTH: usize = 5000;
const REQUIRED_WINS: usize = 4;
const RUNTIME_BUDGET: Duration = Duration::from_secs(300);

const RIDGE_TOL: f64 = 1e-8;
const LASSO_TOL: f64 = 1e-5;
const POLY_TOL: f64 = 1e-8;
const SPLINE_TOL: f64 = 1e-8;
const KALMAN_TOL: f64 = 1e-8;

const COMBINE_SAMPLES: usize = 10_000;
const EVO_GENERATIONS: usize = 10;
const EVO_SEEDS: u64 = 5;
const VARIATION_SAMPLES: usize = 1000;
const INJECT_SEEDS: u64 = 20;
const FRACTION_BAND: (f64, f64) = (0.294, 0.306);

type Check = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Check + 'a>);

fn main() -> ExitCode {
    let bench = timed(|| {
        run_synthetic_benchmark(BENCH_SEED, BENCH_SEEDS, BENCH_LENGTH, &Method::ALL, &MethodConfig::default())
    });
    let criteria: [Criterion; 8] = [
        ("restoration ordering", Box::new(|| criterion_1(&bench))),
        ("forecast-impact ordering", Box::new(|| criterion_2(&bench))),
        ("oracle equivalence", Box::new(criterion_3)),
        ("combiner properties", Box::new(criterion_4)),
        ("evolutionary invariants", Box::new(criterion_5)),
        ("totality and idempotence", Box::new(criterion_6)),
        ("end-to-end determinism", Box::new(criterion_7)),
        ("gap-injection contract", Box::new(criterion_8)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS criterion {}: {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {}: {name}: {detail}", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn metric(
    report: &BenchmarkReport,
    run: usize,
    method: Method,
    pick: fn(&gapfill_core::bench::ReportRow) -> Option<f64>,
) -> Result<f64, String> {
    let row = report.runs[run]
        .rows
        .iter()
        .find(|r| r.method == method.name())
        .ok_or_else(|| format!("no row for {method}"))?;
    pick(row).ok_or_else(|| format!("seed {}: {method} {}", report.runs[run].seed, row.status))
}

type BenchResult = (gapfill_core::Result<BenchmarkReport>, Duration);

fn criterion_1((report, elapsed): &BenchResult) -> Check {
    let report = report.as_ref().map_err(|e| e.to_string())?;
    let mut automl_wins = 0;
    let mut bidir_wins = 0;
    let mut detail = Vec::new();
    for run in 0..report.runs.len() {
        let fwd = metric(report, run, Method::RidgeForward, |r| r.mae)?;
        let bidir = metric(report, run, Method::RidgeBidir, |r| r.mae)?;
        let automl = metric(report, run, Method::AutomlBidir, |r| r.mae)?;
        automl_wins += usize::from(automl < fwd);
        bidir_wins += usize::from(bidir < fwd);
        detail.push(format!("seed {}: automl {automl:.4} bidir {bidir:.4} forward {fwd:.4}", report.runs[run].seed));
    }
    let summary = format!(
        "automl<forward {automl_wins}/{BENCH_SEEDS}, bidir<forward {bidir_wins}/{BENCH_SEEDS}, {:.0}s; {}",
        elapsed.as_secs_f64(),
        detail.join("; ")
    );
    ensure(automl_wins >= REQUIRED_WINS && bidir_wins >= REQUIRED_WINS && *elapsed < RUNTIME_BUDGET, summary.clone())?;
    Ok(summary)
}

fn criterion_2((report, _): &BenchResult) -> Check {
    let report = report.as_ref().map_err(|e| e.to_string())?;
    let mut wins = 0;
    let mut detail = Vec::new();
    for run in 0..report.runs.len() {
        let automl = metric(report, run, Method::AutomlBidir, |r| r.deviation)?;
        let linear = metric(report, run, Method::Linear, |r| r.deviation)?;
        let original = report.runs[run].rows.iter().find(|r| r.method == "original").and_then(|r| r.deviation);
        ensure(original == Some(0.0), format!("seed {}: original deviation {original:?}", report.runs[run].seed))?;
        wins += usize::from(automl <= linear);
        detail.push(format!("seed {}: automl {automl:+.3}% linear {linear:+.3}%", report.runs[run].seed));
    }
    let summary = format!("automl<=linear {wins}/{BENCH_SEEDS}, original 0 every run; {}", detail.join("; "));
    ensure(wins >= REQUIRED_WINS, summary.clone())?;
    Ok(summary)
}

/// Gaussian elimination with partial pivoting.
fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

fn random_lags(rows: usize, width: usize, seed: u64) -> LagMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth: Vec<f64> = (0..width).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut features = Vec::new();
    let mut targets = Vec::new();
    for _ in 0..rows {
        let x: Vec<f64> = (0..width).map(|_| rng.random_range(-3.0..3.0)).collect();
        targets.push(0.7 + x.iter().zip(&truth).map(|(a, b)| a * b).sum::<f64>() + rng.random_range(-0.1..0.1));
        features.extend(x);
    }
    LagMatrix::new(features, targets, width).unwrap()
}

/// Coefficients then intercept, from `[1 X]ᵀ[1 X] β = [1 X]ᵀ y`.
fn ols(data: &LagMatrix) -> Vec<f64> {
    let p = data.width() + 1;
    let mut ata = vec![vec![0.0; p]; p];
    let mut aty = vec![0.0; p];
    for (row, &y) in data.iter_rows().zip(data.targets()) {
        let x: Vec<f64> = std::iter::once(1.0).chain(row.iter().copied()).collect();
        for i in 0..p {
            aty[i] += x[i] * y;
            for j in 0..p {
                ata[i][j] += x[i] * x[j];
            }
        }
    }
    let beta = gauss_solve(ata, aty);
    beta[1..].iter().copied().chain(std::iter::once(beta[0])).collect()
}

fn params(kind: ModelKind, data: &LagMatrix) -> Result<Vec<f64>, String> {
    let fitted = AtomicModel::new(kind).fit(data).map_err(|e| e.to_string())?;
    let (coef, intercept) = fitted.linear_parts().ok_or("not a linear model")?;
    Ok(coef.iter().copied().chain(std::iter::once(intercept)).collect())
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn series(v: &[f64]) -> TimeSeries {
    TimeSeries::new(v.to_vec()).unwrap()
}

fn criterion_3() -> Check {
    const M: f64 = f64::NAN;
    let mut ridge_err = 0.0f64;
    let mut lasso_err = 0.0f64;
    for seed in 0..5 {
        let data = random_lags(60, 5, seed);
        let ridge = params(ModelKind::Ridge { lambda: 0.0 }, &data)?;
        ridge_err = ridge_err.max(max_diff(&ridge, &ols(&data)));
        lasso_err = lasso_err.max(max_diff(&params(ModelKind::Lasso { lambda: 0.0 }, &data)?, &ridge));
    }
    ensure(ridge_err <= RIDGE_TOL, format!("ridge vs normal equations {ridge_err:e}"))?;
    ensure(lasso_err <= LASSO_TOL, format!("lasso vs ridge {lasso_err:e}"))?;

    let mut poly_err = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let n = 40;
        let c: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
        let truth: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / n as f64;
                c[0] + c[1] * t + c[2] * t * t
            })
            .collect();
        let gapped: Vec<f64> =
            truth.iter().enumerate().map(|(i, &v)| if (10..14).contains(&i) || i % 7 == 3 { M } else { v }).collect();
        let cfg = FillerConfig { poly_degree: 2, ..FillerConfig::default() };
        for f in [fill_poly_local, fill_poly_batch] {
            let out = f(&series(&gapped), &cfg).map_err(|e| e.to_string())?;
            poly_err = poly_err.max(max_diff(out.values(), &truth));
        }
    }
    ensure(poly_err <= POLY_TOL, format!("polynomial reproduction {poly_err:e}"))?;

    // knots x = 0, 1, 3, 4 with y = 1, 2, 0, 3: two interior second derivatives by Cramer's rule
    let (x, y) = ([0.0, 1.0, 3.0, 4.0], [1.0, 2.0, 0.0, 3.0]);
    let h = [x[1] - x[0], x[2] - x[1], x[3] - x[2]];
    let d = |i: usize| (y[i + 1] - y[i]) / h[i];
    let (a11, a12, r1) = (2.0 * (h[0] + h[1]), h[1], 6.0 * (d(1) - d(0)));
    let (a21, a22, r2) = (h[1], 2.0 * (h[1] + h[2]), 6.0 * (d(2) - d(1)));
    let det = a11 * a22 - a12 * a21;
    let m1 = (r1 * a22 - a12 * r2) / det;
    let m2 = (a11 * r2 - r1 * a21) / det;
    let expected = 0.5 * y[1] + 0.5 * y[2] + ((0.125 - 0.5) * m1 + (0.125 - 0.5) * m2) * h[1] * h[1] / 6.0;
    let out = fill_spline(&series(&[1.0, 2.0, M, 0.0, 3.0]), &FillerConfig::default()).map_err(|e| e.to_string())?;
    let spline_err = (out.values()[2] - expected).abs();
    ensure(spline_err <= SPLINE_TOL, format!("spline {spline_err:e}"))?;

    // local-level filter and smoother on [y0, missing, y2] with a diffuse prior
    let (y0, y2, q, r) = (1.0, 4.0, 0.3, 0.2);
    let (a0, p0) = (y0, r);
    let (a1, p1) = (a0, p0 + q);
    let (a2_pred, p2_pred) = (a1, p1 + q);
    let a2 = a2_pred + p2_pred / (p2_pred + r) * (y2 - a2_pred);
    let smoothed = a1 + p1 / p2_pred * (a2 - a2_pred);
    let cfg = FillerConfig { kalman_process_var: q, kalman_obs_var: r, ..FillerConfig::default() };
    let out = fill_kalman(&series(&[y0, M, y2]), &cfg).map_err(|e| e.to_string())?;
    let kalman_err = (out.values()[1] - smoothed).abs();
    ensure(kalman_err <= KALMAN_TOL, format!("kalman {kalman_err:e}"))?;

    Ok(format!(
        "ridge {ridge_err:.1e}, lasso {lasso_err:.1e}, poly {poly_err:.1e}, spline {spline_err:.1e}, kalman {kalman_err:.1e}"
    ))
}

fn criterion_4() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for sample in 0..COMBINE_SAMPLES {
        let n = rng.random_range(1..50);
        let f: Vec<f64> = (0..n).map(|_| rng.random_range(-100.0..100.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-100.0..100.0)).collect();
        let bins = (0..10)
            .map(|_| {
                rng.random_bool(0.8)
                    .then(|| [rng.random_range(-5.0..5.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
            })
            .collect();
        for combiner in [EnsembleCombiner::LinearRamp, EnsembleCombiner::Learned(LearnedBlend { bins })] {
            let out = combine(&f, &b, &combiner).map_err(|e| e.to_string())?;
            for j in 0..n {
                ensure(
                    out[j] >= f[j].min(b[j]) && out[j] <= f[j].max(b[j]),
                    format!("sample {sample} position {j} outside its inputs"),
                )?;
            }
        }
        if n >= 2 {
            let out = combine(&f, &b, &EnsembleCombiner::LinearRamp).map_err(|e| e.to_string())?;
            ensure(out[0] == f[0] && out[n - 1] == b[n - 1], format!("sample {sample}: ramp endpoints differ"))?;
        }
    }
    let mid = combine(&[2.0], &[4.0], &EnsembleCombiner::LinearRamp).map_err(|e| e.to_string())?;
    ensure(mid == vec![3.0], format!("n=1 midpoint {mid:?}"))?;
    Ok(format!("{COMBINE_SAMPLES} vectors convex, endpoints exact, midpoint 3.0"))
}

fn criterion_5() -> Check {
    let clean = generate(&SyntheticSpec::with_length(1500)).map_err(|e| e.to_string())?;
    for seed in 0..EVO_SEEDS {
        let config = EvoConfig { generations: EVO_GENERATIONS, rng_seed: seed, ..EvoConfig::default() };
        let result = run_search(&clean, 50, &config).map_err(|e| e.to_string())?;
        ensure(result.trace.len() == EVO_GENERATIONS, format!("seed {seed}: trace length {}", result.trace.len()))?;
        ensure(
            result.trace.windows(2).all(|p| p[1] <= p[0]),
            format!("seed {seed}: trace increases {:?}", result.trace),
        )?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut pool = initial_population(20, &mut rng);
    for i in 0..VARIATION_SAMPLES {
        let a = &pool[rng.random_range(0..pool.len())];
        let child = if i % 2 == 0 {
            mutate(a, &mut rng, 12)
        } else {
            let b = random_chain(&mut rng);
            crossover(a, &b, &mut rng, 12)
        };
        ensure(child.validate().is_ok(), format!("invalid offspring {}", child.canonical()))?;
        pool.push(child);
    }

    let config = EvoConfig { generations: 5, rng_seed: 42, ..EvoConfig::default() };
    let one = with_threads(1, || run_search(&clean, 50, &config)).map_err(|e| e.to_string())?;
    let four = with_threads(4, || run_search(&clean, 50, &config)).map_err(|e| e.to_string())?;
    ensure(one == four, "best genome differs between 1 and 4 threads")?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let input = dir.path().join("clean.csv");
    gapfill_core::series::write_csv(&clean, &input).map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for threads in ["1", "4"] {
        let out = dir.path().join(format!("best-{threads}.json"));
        let trace = dir.path().join(format!("trace-{threads}.csv"));
        run_cli(&[
            "--threads",
            threads,
            "search",
            "--in",
            path(&input),
            "--seed",
            "42",
            "--generations",
            "5",
            "--w",
            "50",
            "--out-pipeline",
            path(&out),
            "--out-trace",
            path(&trace),
        ])?;
        outputs.push((read(&out)?, read(&trace)?));
    }
    ensure(outputs[0] == outputs[1], "CLI search output differs between --threads 1 and 4")?;

    Ok(format!(
        "{EVO_SEEDS} traces non-increasing over {EVO_GENERATIONS} generations, {VARIATION_SAMPLES} offspring valid, identical best genome for 1 and 4 threads"
    ))
}

fn criterion_6() -> Check {
    let case = synthetic_case(6, 1000).map_err(|e| e.to_string())?;
    let config = MethodConfig {
        evo: EvoConfig { population_size: 8, generations: 2, ..EvoConfig::default() },
        ..MethodConfig::default()
    };
    for method in Method::ALL {
        let out = run_method(method, &case.gapped, &config).map_err(|e| format!("{method}: {e}"))?;
        ensure(out.missing_count() == 0, format!("{method} left gaps"))?;
        for (i, (&o, &g)) in out.values().iter().zip(case.gapped.values()).enumerate() {
            ensure(g.is_nan() || o.to_bits() == g.to_bits(), format!("{method} changed observed index {i}"))?;
        }
        let again = run_method(method, &case.clean, &config).map_err(|e| format!("{method}: {e}"))?;
        ensure(again == case.clean, format!("{method} altered a complete series"))?;
    }
    // the six classic fillers again on a short, irregular series
    let short = series(&[f64::NAN, 1.0, 2.5, f64::NAN, f64::NAN, 0.5, 3.0, f64::NAN, 4.0, 2.0, f64::NAN]);
    for f in [fill_linear, fill_poly_local, fill_poly_batch, fill_moving_average, fill_spline, fill_kalman] {
        let out = f(&short, &FillerConfig::default()).map_err(|e| e.to_string())?;
        ensure(out.missing_count() == 0, "classic filler left gaps on a short series")?;
    }
    Ok(format!("{} methods total, preserving and idempotent", Method::ALL.len()))
}

fn criterion_7() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut reports = Vec::new();
    for run in 0..2 {
        let report = dir.path().join(format!("report-{run}.csv"));
        let json = dir.path().join(format!("report-{run}.json"));
        run_cli(&["bench", "--synth-defaults", "--seed", "42", "--report", path(&report), "--json", path(&json)])?;
        reports.push((read(&report)?, read(&json)?));
    }
    ensure(reports[0] == reports[1], "reports differ between runs")?;
    Ok(format!("CSV ({} bytes) and JSON ({} bytes) identical across two runs", reports[0].0.len(), reports[0].1.len()))
}

fn criterion_8() -> Check {
    let clean = generate(&SyntheticSpec::default()).map_err(|e| e.to_string())?;
    let n = clean.len();
    let margin = gapfill_core::lag::default_window(n);
    let long = (n as f64 / 4.18).round() as usize;
    let long_start = n / 2 - long / 2;
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for seed in 0..INJECT_SEEDS {
        let (gapped, mask) =
            inject_gaps(&clean, &GapSpec { rng_seed: seed, ..GapSpec::default() }).map_err(|e| e.to_string())?;
        let fraction = mask.iter().filter(|&&m| m).count() as f64 / n as f64;
        lo = lo.min(fraction);
        hi = hi.max(fraction);
        ensure((FRACTION_BAND.0..=FRACTION_BAND.1).contains(&fraction), format!("seed {seed}: fraction {fraction}"))?;
        ensure(mask[long_start..long_start + long].iter().all(|&m| m), format!("seed {seed}: long gap not central"))?;
        ensure(
            !mask[long_start - 1] && !mask[long_start + long],
            format!("seed {seed}: long gap merged with a neighbour"),
        )?;
        ensure(mask[..margin].iter().chain(&mask[n - margin..]).all(|&m| !m), format!("seed {seed}: margin violated"))?;
        ensure((0..n).all(|i| mask[i] == gapped.is_missing(i)), format!("seed {seed}: mask and series disagree"))?;
    }
    Ok(format!("fractions in [{lo:.4}, {hi:.4}] over {INJECT_SEEDS} seeds, long gap of {long} at {long_start}, margins of {margin} clear"))
}

fn path(p: &Path) -> &str {
    p.to_str().expect("temporary paths are UTF-8")
}

fn read(p: &Path) -> Result<Vec<u8>, String> {
    std::fs::read(p).map_err(|e| format!("{}: {e}", p.display()))
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_gapfill")).args(args).output().map_err(|e| e.to_string())?;
    ensure(
        out.status.success(),
        format!("gapfill {} exited with {}: {}", args.join(" "), out.status, String::from_utf8_lossy(&out.stderr)),
    )
}
