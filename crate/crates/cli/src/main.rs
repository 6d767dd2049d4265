//! `gapfill`: generate, gap, fill, search and benchmark univariate series.

mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gapfill_core::baseline::FillerConfig;
use gapfill_core::bench::{
    benchmark_case, default_tail, method_fillers, plot_data, run_synthetic_cases, BenchCase, BenchmarkReport,
    GapFiller, Method, MethodConfig, RunMetadata,
};
use gapfill_core::lag::default_window;
use gapfill_core::parallel::configure_threads;
use gapfill_core::series::{format_csv, read_csv, CsvOptions};
use gapfill_core::synth::{generate, inject_gaps, mask_from_series, mask_series, GapSpec, SyntheticSpec};
use gapfill_core::{run_search, CombinerMode, EvoConfig, GapFillError, GapFillPolicy, Pipeline, TimeSeries};
use serde_json::json;

use crate::output::write_atomic;

#[derive(Parser, Debug)]
#[command(name = "gapfill", version, about = "Gap filling for univariate time series")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Input CSV files start with a header line.
    #[arg(long, global = true)]
    header: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a two-regime synthetic series.
    Synth(SynthArgs),
    /// Remove a long central gap plus random segments.
    Inject(InjectArgs),
    /// Fill every gap of a series.
    Fill(FillArgs),
    /// Search for a fill pipeline.
    Search(SearchArgs),
    /// Score fill methods on restoration accuracy and forecast impact.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 5000)]
    n: usize,
    #[arg(long, default_value_t = 1.0)]
    t1: f64,
    #[arg(long, default_value_t = 2.5)]
    t2: f64,
    /// Last index of the first regime (default n/2).
    #[arg(long = "break")]
    break_point: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    mu: f64,
    #[arg(long, default_value_t = 0.01)]
    sigma2: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct InjectArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 0.3)]
    fraction: f64,
    /// Long gap length (default round(n/4.18); 0 disables it).
    #[arg(long)]
    long_gap: Option<usize>,
    /// Long gap center (default n/2).
    #[arg(long)]
    long_gap_center: Option<usize>,
    #[arg(long, default_value_t = 5)]
    segment_min: usize,
    #[arg(long, default_value_t = 60)]
    segment_max: usize,
    /// Samples at either end that are never removed.
    #[arg(long)]
    margin: Option<usize>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    mask_out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CombinerArg {
    Ramp,
    Learned,
}

impl From<CombinerArg> for CombinerMode {
    fn from(c: CombinerArg) -> Self {
        match c {
            CombinerArg::Ramp => CombinerMode::LinearRamp,
            CombinerArg::Learned => CombinerMode::LearnedBlend,
        }
    }
}

#[derive(Args, Debug)]
struct WindowArgs {
    /// Model lag window.
    #[arg(long)]
    w: Option<usize>,
    /// Longest pre-gap context.
    #[arg(long)]
    w1: Option<usize>,
    /// Longest post-gap context.
    #[arg(long)]
    w2: Option<usize>,
}

impl WindowArgs {
    fn resolve(&self, fallback: usize) -> GapFillPolicy {
        let mut policy = GapFillPolicy::new(self.w.unwrap_or(fallback));
        policy.w1 = self.w1.unwrap_or(policy.w1);
        policy.w2 = self.w2.unwrap_or(policy.w2);
        policy
    }

    fn is_set(&self) -> bool {
        self.w.is_some() || self.w1.is_some() || self.w2.is_some()
    }
}

#[derive(Args, Debug)]
struct EvoArgs {
    #[arg(long)]
    generations: Option<usize>,
    #[arg(long)]
    population: Option<usize>,
}

impl EvoArgs {
    fn resolve(&self, seed: u64) -> EvoConfig {
        let d = EvoConfig::default();
        EvoConfig {
            generations: self.generations.unwrap_or(d.generations),
            population_size: self.population.unwrap_or(d.population_size),
            rng_seed: seed,
            ..d
        }
    }
}

#[derive(Args, Debug)]
struct FillerArgs {
    #[arg(long)]
    poly_degree: Option<usize>,
    #[arg(long)]
    sg_window: Option<usize>,
    #[arg(long)]
    ma_window: Option<usize>,
    #[arg(long)]
    kalman_process_var: Option<f64>,
    #[arg(long)]
    kalman_obs_var: Option<f64>,
}

impl FillerArgs {
    fn resolve(&self) -> FillerConfig {
        let d = FillerConfig::default();
        FillerConfig {
            poly_degree: self.poly_degree.unwrap_or(d.poly_degree),
            sg_window: self.sg_window.unwrap_or(d.sg_window),
            ma_window: self.ma_window.unwrap_or(d.ma_window),
            kalman_process_var: self.kalman_process_var.unwrap_or(d.kalman_process_var),
            kalman_obs_var: self.kalman_obs_var.unwrap_or(d.kalman_obs_var),
        }
    }
}

#[derive(Args, Debug)]
struct FillArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_parser = parse_method)]
    method: Method,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    window: WindowArgs,
    #[arg(long, value_enum, default_value_t = CombinerArg::Ramp)]
    combiner: CombinerArg,
    /// Pipeline JSON used by the model-based methods instead of their default genome.
    #[arg(long)]
    pipeline: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[command(flatten)]
    evo: EvoArgs,
    #[command(flatten)]
    filler: FillerArgs,
}

#[derive(Args, Debug)]
struct SearchArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[command(flatten)]
    evo: EvoArgs,
    /// Model lag window.
    #[arg(long)]
    w: Option<usize>,
    #[arg(long)]
    out_pipeline: PathBuf,
    /// Convergence trace as `generation,best_fitness`.
    #[arg(long)]
    out_trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, requires_all = ["gapped", "mask"], conflicts_with = "synth_defaults")]
    clean: Option<PathBuf>,
    #[arg(long, requires = "clean")]
    gapped: Option<PathBuf>,
    #[arg(long, requires = "clean")]
    mask: Option<PathBuf>,
    /// Benchmark on default synthetic cases instead of input files.
    #[arg(long, required_unless_present = "clean")]
    synth_defaults: bool,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Number of consecutive seeds in synthetic mode.
    #[arg(long, default_value_t = 1)]
    seeds: usize,
    /// Synthetic series length.
    #[arg(long, default_value_t = 5000)]
    n: usize,
    /// Comma-separated methods (default: all nine).
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    methods: Vec<Method>,
    /// Forecast-impact tail length (default 400, scaled below 2000 samples).
    #[arg(long)]
    tail: Option<usize>,
    #[command(flatten)]
    window: WindowArgs,
    #[arg(long, value_enum, default_value_t = CombinerArg::Ramp)]
    combiner: CombinerArg,
    #[command(flatten)]
    evo: EvoArgs,
    #[command(flatten)]
    filler: FillerArgs,
    /// CSV report.
    #[arg(long)]
    report: PathBuf,
    /// JSON report with full metadata.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Per-gap fill traces as CSV.
    #[arg(long)]
    plot_data: Option<PathBuf>,
    /// Append mean/std rows per method.
    #[arg(long)]
    aggregate: bool,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse::<Method>().map_err(|_| {
        let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
        format!("unknown method '{s}' (expected one of: {})", names.join(", "))
    })
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
}

impl From<GapFillError> for CliError {
    fn from(e: GapFillError) -> Self {
        match e {
            GapFillError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    configure_threads(cli.global.threads);
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            eprintln!("Run `gapfill --help` for usage.");
            ExitCode::from(1)
        }
        Err(CliError::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    let csv = CsvOptions { header: cli.global.header };
    match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Inject(a) => inject(a, csv),
        Command::Fill(a) => fill(a, csv),
        Command::Search(a) => search(a, csv),
        Command::Bench(a) => bench(a, csv),
    }
}

fn print_config(command: &str, config: serde_json::Value) {
    println!("{command}: {config}");
}

fn read_series(path: &Path, csv: CsvOptions) -> CliResult<TimeSeries> {
    read_csv(path, csv).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn synth(a: &SynthArgs) -> CliResult<()> {
    let spec = SyntheticSpec {
        t1: a.t1,
        t2: a.t2,
        break_point: a.break_point.unwrap_or(a.n / 2),
        noise_mean: a.mu,
        noise_var: a.sigma2,
        rng_seed: a.seed,
        ..SyntheticSpec::with_length(a.n)
    };
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    print_config("synth", json!({ "spec": spec, "seed": a.seed }));
    let series = generate(&spec)?;
    write_atomic(&a.out, &format_csv(&series))
}

fn inject(a: &InjectArgs, csv: CsvOptions) -> CliResult<()> {
    let series = read_series(&a.input, csv)?;
    let spec = GapSpec {
        total_fraction: a.fraction,
        segment_min: a.segment_min,
        segment_max: a.segment_max,
        long_gap_length: a.long_gap,
        long_gap_center: a.long_gap_center,
        protected_margin: a.margin,
        rng_seed: a.seed,
    };
    let resolved = spec.resolve(series.len()).map_err(|e| CliError::Usage(e.to_string()))?;
    print_config("inject", json!({ "spec": spec, "resolved": resolved, "seed": a.seed }));
    let (gapped, mask) = inject_gaps(&series, &spec)?;
    write_atomic(&a.out, &format_csv(&gapped))?;
    write_atomic(&a.mask_out, &format_csv(&mask_series(&mask, series.origin())?))
}

fn load_pipeline(path: &Path) -> CliResult<Pipeline> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Pipeline::from_json(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn is_model_based(m: Method) -> bool {
    matches!(m, Method::RidgeForward | Method::RidgeBidir | Method::AutomlBidir)
}

fn fill(a: &FillArgs, csv: CsvOptions) -> CliResult<()> {
    let series = read_series(&a.input, csv)?;
    if a.pipeline.is_some() && !is_model_based(a.method) {
        return Err(CliError::Usage(format!("--pipeline does not apply to method {}", a.method)));
    }
    let pipeline = a.pipeline.as_deref().map(load_pipeline).transpose()?;
    let config = MethodConfig {
        filler: a.filler.resolve(),
        policy: Some(a.window.resolve(default_window(series.len()))),
        combiner: a.combiner.into(),
        evo: a.evo.resolve(a.seed),
        pipeline,
        seed: a.seed,
    };
    validate_method_config(&config)?;
    print_config(
        "fill",
        json!({
            "method": a.method.name(),
            "policy": config.policy,
            "combiner": config.combiner,
            "filler": config.filler,
            "evo": config.evo,
            "pipeline": config.pipeline.as_ref().map(Pipeline::canonical),
            "seed": a.seed,
        }),
    );
    let filled = gapfill_core::bench::run_method(a.method, &series, &config)?;
    write_atomic(&a.out, &format_csv(&filled))
}

fn validate_method_config(config: &MethodConfig) -> CliResult<()> {
    let usage = |e: GapFillError| CliError::Usage(e.to_string());
    config.filler.validate().map_err(usage)?;
    config.evo.validate().map_err(usage)?;
    if let Some(p) = &config.policy {
        p.validate().map_err(usage)?;
    }
    Ok(())
}

fn search(a: &SearchArgs, csv: CsvOptions) -> CliResult<()> {
    let series = read_series(&a.input, csv)?;
    let config = a.evo.resolve(a.seed);
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let w = a.w.unwrap_or_else(|| default_window(series.len()));
    if w == 0 {
        return Err(CliError::Usage("--w must be positive".into()));
    }
    print_config("search", json!({ "evo": config, "w": w, "seed": a.seed }));
    let result = run_search(&series, w, &config)?;
    println!(
        "best fitness {} after {} evaluations: {}",
        result.best_fitness,
        result.evaluations,
        result.best.canonical()
    );
    write_atomic(&a.out_pipeline, &result.best.to_json()?)?;
    if let Some(path) = &a.out_trace {
        let mut trace = String::from("generation,best_fitness\n");
        for (g, f) in result.trace.iter().enumerate() {
            trace.push_str(&format!("{g},{f}\n"));
        }
        write_atomic(path, &trace)?;
    }
    Ok(())
}

fn bench(a: &BenchArgs, csv: CsvOptions) -> CliResult<()> {
    let methods = if a.methods.is_empty() { Method::ALL.to_vec() } else { a.methods.clone() };
    let mut config = MethodConfig {
        filler: a.filler.resolve(),
        policy: None,
        combiner: a.combiner.into(),
        evo: a.evo.resolve(a.seed),
        pipeline: None,
        seed: a.seed,
    };
    let (report, plots) = if a.synth_defaults {
        if a.seeds == 0 {
            return Err(CliError::Usage("--seeds must be positive".into()));
        }
        if a.window.is_set() {
            config.policy = Some(a.window.resolve(default_window(a.n)));
        }
        if a.tail.is_some() {
            return Err(CliError::Usage("--tail applies to file mode only".into()));
        }
        validate_method_config(&config)?;
        let (report, runs) = run_synthetic_cases(a.seed, a.seeds, a.n, &methods, &config)?;
        print_config("bench", json!({ "metadata": report.metadata, "methods": names(&methods) }));
        let plots: Vec<(u64, String)> = runs.iter().map(|r| (r.report.seed, plot_data(&r.case, &r.restored))).collect();
        (report, plots)
    } else {
        let (Some(clean), Some(gapped), Some(mask)) = (&a.clean, &a.gapped, &a.mask) else {
            return Err(CliError::Usage("either --synth-defaults or --clean, --gapped and --mask are required".into()));
        };
        let case = BenchCase {
            clean: read_series(clean, csv)?,
            gapped: read_series(gapped, csv)?,
            mask: mask_from_series(&read_series(mask, csv)?)?,
        };
        let n = case.clean.len();
        let policy = a.window.resolve(default_window(n));
        config.policy = Some(policy);
        validate_method_config(&config)?;
        let tail = a.tail.unwrap_or_else(|| default_tail(n));
        let metadata = RunMetadata {
            seeds: vec![a.seed],
            series_length: n,
            tail,
            filler: config.filler,
            evo: config.evo,
            policy,
            combiner: config.combiner,
            synthetic: None,
            gaps: None,
        };
        print_config("bench", json!({ "metadata": metadata, "methods": names(&methods) }));
        let fillers = method_fillers(&methods, &config);
        let refs: Vec<&dyn GapFiller> = fillers.iter().map(|f| f as &dyn GapFiller).collect();
        let (seed_report, restored) = benchmark_case(&case, a.seed, &refs, tail, policy.w)?;
        let plot = plot_data(&case, &restored);
        (BenchmarkReport { metadata, runs: vec![seed_report] }, vec![(a.seed, plot)])
    };
    write_atomic(&a.report, &report.to_csv(a.aggregate))?;
    if let Some(path) = &a.json {
        write_atomic(path, &report.to_json()?)?;
    }
    if let Some(path) = &a.plot_data {
        write_atomic(path, &merge_plots(&plots))?;
    }
    Ok(())
}

fn names(methods: &[Method]) -> Vec<&'static str> {
    methods.iter().map(|m| m.name()).collect()
}

/// One plot table; with several seeds each row is prefixed by its seed.
fn merge_plots(plots: &[(u64, String)]) -> String {
    if let [(_, only)] = plots {
        return only.clone();
    }
    let mut out = String::new();
    for (i, (seed, text)) in plots.iter().enumerate() {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        if i == 0 {
            out.push_str(&format!("seed,{header}\n"));
        }
        for line in lines {
            out.push_str(&format!("{seed},{line}\n"));
        }
    }
    out
}
