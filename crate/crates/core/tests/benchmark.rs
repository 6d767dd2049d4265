use gapfill_core::bench::{
    forecast_mape, mae, mape, plot_data, run_forecast_impact, run_restoration_benchmark, run_synthetic_benchmark,
    run_synthetic_cases, synthetic_case, GapFiller, Method, MethodConfig,
};
use gapfill_core::{GapFillError, Result, TimeSeries};
use proptest::prelude::*;

struct Oracle(TimeSeries);

impl GapFiller for Oracle {
    fn name(&self) -> String {
        "oracle".into()
    }
    fn fill(&self, _: &TimeSeries) -> Result<TimeSeries> {
        Ok(self.0.clone())
    }
}

/// Copies the truth into the gaps and scribbles over every observed sample.
struct Scribbler(TimeSeries, f64);

impl GapFiller for Scribbler {
    fn name(&self) -> String {
        format!("scribble-{}", self.1)
    }
    fn fill(&self, series: &TimeSeries) -> Result<TimeSeries> {
        let values = series
            .values()
            .iter()
            .zip(self.0.values())
            .map(|(g, c)| if g.is_nan() { c + 0.5 } else { g + self.1 })
            .collect();
        TimeSeries::new(values)
    }
}

struct Broken;

impl GapFiller for Broken {
    fn name(&self) -> String {
        "broken".into()
    }
    fn fill(&self, _: &TimeSeries) -> Result<TimeSeries> {
        Err(GapFillError::NoFeasiblePipeline)
    }
}

fn case() -> (TimeSeries, TimeSeries, Vec<bool>) {
    let c = synthetic_case(3, 1000).unwrap();
    (c.clean, c.gapped, c.mask)
}

#[test]
fn oracle_scores_zero_and_failures_sort_last() {
    let (clean, gapped, mask) = case();
    let oracle = Oracle(clean.clone());
    let fillers: [&dyn GapFiller; 3] = [&Broken, &Scribbler(clean.clone(), 0.0), &oracle];
    let rows = run_restoration_benchmark(&clean, &gapped, &mask, &fillers).unwrap();
    assert_eq!(rows[0].row.method, "oracle");
    assert_eq!(rows[0].row.mae, Some(0.0));
    assert_eq!(rows[0].row.mape, Some(0.0));
    assert_eq!(rows[1].row.mae, Some(0.5));
    assert_eq!(rows[2].row.method, "broken");
    assert!(rows[2].row.status.starts_with("failed"));
    assert!(rows[2].restored.is_none());
}

#[test]
fn scoring_ignores_unmasked_samples() {
    let (clean, gapped, mask) = case();
    let a = Scribbler(clean.clone(), 0.0);
    let b = Scribbler(clean.clone(), 123.0);
    let rows_a = run_restoration_benchmark(&clean, &gapped, &mask, &[&a]).unwrap();
    let rows_b = run_restoration_benchmark(&clean, &gapped, &mask, &[&b]).unwrap();
    assert_eq!(rows_a[0].row.mae, rows_b[0].row.mae);
    assert_eq!(rows_a[0].row.mape, rows_b[0].row.mape);
}

#[test]
fn inconsistent_mask_is_rejected() {
    let (clean, gapped, mut mask) = case();
    let i = mask.iter().position(|&m| !m).unwrap();
    mask[i] = true;
    assert!(run_restoration_benchmark(&clean, &gapped, &mask, &[&Broken]).is_err());
}

#[test]
fn forecast_impact_examples() {
    let (clean, _, _) = case();
    let impact = run_forecast_impact(&clean, &[("copy".into(), clean.clone())], 64, 50).unwrap();
    assert_eq!(impact.variants[0].1, Ok((impact.original_mape, 0.0)));
    assert!(matches!(forecast_mape(&clean, &clean, 500, 50), Err(GapFillError::Precondition(_))));
    assert!(matches!(forecast_mape(&clean, &clean, 0, 50), Err(GapFillError::Precondition(_))));
}

#[test]
fn synthetic_benchmark_is_deterministic() {
    let methods = [Method::Linear, Method::Spline, Method::RidgeForward, Method::RidgeBidir];
    let a = run_synthetic_benchmark(7, 2, 1000, &methods, &MethodConfig::default()).unwrap();
    let b = run_synthetic_benchmark(7, 2, 1000, &methods, &MethodConfig::default()).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    assert_eq!(a.to_csv(true), b.to_csv(true));
    assert_eq!(a.runs.len(), 2);
    for run in &a.runs {
        assert_eq!(run.rows.len(), methods.len() + 1);
        let original = run.rows.iter().find(|r| r.method == "original").unwrap();
        assert_eq!(original.deviation, Some(0.0));
        for r in run.rows.iter().filter(|r| r.method != "original") {
            assert!(r.is_ok(), "{}: {}", r.method, r.status);
            assert!(r.mae.unwrap().is_finite() && r.mape.unwrap().is_finite());
            assert!(r.forecast_mape.unwrap().is_finite());
        }
    }
    let csv = a.to_csv(true);
    assert!(csv.starts_with("seed,method,mae,mape,forecast_mape,deviation,status\n"));
    assert!(csv.contains("all,linear:mean,"));
}

#[test]
fn plot_data_covers_every_gap_sample() {
    let (_, runs) = run_synthetic_cases(1, 1, 1000, &[Method::Linear], &MethodConfig::default()).unwrap();
    let run = &runs[0];
    let text = plot_data(&run.case, &run.restored);
    let missing = run.case.mask.iter().filter(|&&m| m).count();
    assert_eq!(text.lines().count(), missing + 1);
    assert!(text.lines().skip(1).all(|l| l.starts_with("linear,")));
}

proptest! {
    #[test]
    fn metric_properties(
        pairs in prop::collection::vec((-1e3..1e3f64, -1e3..1e3f64), 1..50),
        shift in -1e3..1e3f64,
    ) {
        let (a, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let m = mae(&a, &p).unwrap();
        prop_assert!(m >= 0.0);
        prop_assert_eq!(mae(&a, &a).unwrap(), 0.0);
        let a2: Vec<f64> = a.iter().map(|x| x + shift).collect();
        let p2: Vec<f64> = p.iter().map(|x| x + shift).collect();
        prop_assert!((mae(&a2, &p2).unwrap() - m).abs() <= 1e-9 * (1.0 + m + shift.abs()));
        if let Ok((pct, excluded)) = mape(&a, &p) {
            prop_assert!(pct >= 0.0);
            prop_assert!(excluded < a.len());
        }
        if a.iter().any(|x| x.abs() > 1e-9) {
            prop_assert_eq!(mape(&a, &a).unwrap().0, 0.0);
        }
    }
}
