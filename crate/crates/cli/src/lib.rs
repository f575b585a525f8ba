//! The `sparsefield` command line: synthesize data, place sensors, train the
//! neural reconstructor, evaluate all strategies and render heatmaps.

pub mod render;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use sparsefield::data::{
    load_series, save_series, save_series_csv, split_series, synth_series, Format, SnapshotSeries,
    SplitSpec, SynthKind, SynthSpec,
};
use sparsefield::linalg::Matrix;
use sparsefield::linear::{fit_principal_basis, random_placement, reconstruct_linear};
use sparsefield::metrics::{evaluate, metrics_csv, per_cell_csv, EvalReport, MetricsRow};
use sparsefield::neural::{
    fit_neural, load_checkpoint, predict_series, save_checkpoint, TrainConfig,
    DEFAULT_HIDDEN_LAYERS,
};
use sparsefield::placement::{
    analyze_connectivity, insert_bridges, measure_matrix, select_sampling_locations, Placement,
};

/// Environment variable capping the number of evaluation threads.
pub const THREADS_ENV: &str = "SPARSEFIELD_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] sparsefield::Error),
    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    /// 0 success, 2 usage/argument, 3 data/parse/IO, 4 numerical, 5 internal.
    pub fn exit_code(&self) -> i32 {
        use sparsefield::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e {
                E::InvalidArgument(_) | E::Shape { .. } => 2,
                E::Parse { .. } | E::Io(_) => 3,
                E::NonFinite { .. } | E::NoConvergence { .. } | E::Singular { .. } | E::Degenerate { .. } => 4,
            },
            CliError::File { .. } => 3,
            CliError::Internal(_) => 5,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// Attaches `path` to bare I/O errors.
fn at_path<T>(path: &Path, r: sparsefield::Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        sparsefield::Error::Io(source) => CliError::File {
            path: path.to_path_buf(),
            source,
        },
        other => other.into(),
    })
}

#[derive(Parser, Debug)]
#[command(name = "sparsefield", version, about = "Sparse sensor placement and field reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic snapshot series.
    Synth(SynthArgs),
    /// Choose sensor locations on the training split.
    Place(PlaceArgs),
    /// Train the neural reconstructor.
    Train(TrainArgs),
    /// Compare QR and random placements with both reconstructors.
    Evaluate(EvaluateArgs),
    /// Write a grayscale heatmap of one snapshot.
    Render(RenderArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KindArg {
    #[value(name = "traveling_gaussians", alias = "traveling-gaussians")]
    TravelingGaussians,
    #[value(name = "standing_waves", alias = "standing-waves")]
    StandingWaves,
    Mixed,
}

impl From<KindArg> for SynthKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::TravelingGaussians => SynthKind::TravelingGaussians,
            KindArg::StandingWaves => SynthKind::StandingWaves,
            KindArg::Mixed => SynthKind::Mixed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Binary,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Strategy {
    Qr,
    Rand,
}

#[derive(Args, Debug)]
struct InputArgs {
    /// Series file (.sfgd binary or stacked .csv) or a directory of grid CSVs.
    #[arg(long)]
    input: PathBuf,
    /// Overrides format detection from the path.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

impl InputArgs {
    fn load(&self) -> Result<SnapshotSeries> {
        let format = match self.format {
            Some(FormatArg::Binary) => Format::Binary,
            Some(FormatArg::Csv) => Format::Csv,
            None => detect_format(&self.input),
        };
        at_path(&self.input, load_series(&self.input, format))
    }
}

fn detect_format(path: &Path) -> Format {
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if path.is_dir() || is_csv {
        Format::Csv
    } else {
        Format::Binary
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "traveling_gaussians")]
    kind: KindArg,
    #[arg(long)]
    h: usize,
    #[arg(long)]
    w: usize,
    /// Number of snapshots.
    #[arg(long)]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Standard deviation of additive Gaussian noise.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Number of bumps or wave pairs.
    #[arg(long, default_value_t = 3)]
    components: usize,
    #[arg(long)]
    out: PathBuf,
    /// Output format; defaults to CSV for a .csv path, binary otherwise.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Args, Debug)]
struct SplitArgs {
    /// Leading fraction of snapshots used for fitting.
    #[arg(long, default_value_t = 0.7)]
    train_fraction: f64,
}

impl SplitArgs {
    fn split(&self, series: &SnapshotSeries) -> Result<(SnapshotSeries, SnapshotSeries)> {
        Ok(split_series(series, SplitSpec::new(self.train_fraction)?)?)
    }
}

#[derive(Args, Debug)]
struct PlaceArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    split: SplitArgs,
    /// Number of sensors.
    #[arg(long)]
    r: usize,
    #[arg(long, value_enum, default_value = "qr")]
    strategy: Strategy,
    /// Seed for the random strategy.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Communication radius (ℓ1 grid steps) for the connectivity report.
    #[arg(long)]
    tau: Option<usize>,
    /// Append bridging sensors until the network is connected (needs --tau).
    #[arg(long, requires = "tau")]
    bridge: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainingArgs {
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 20)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    epsilon: f64,
    /// Keep the learning rate constant.
    #[arg(long)]
    no_cosine: bool,
    /// Even number of reconstructor hidden layers.
    #[arg(long, default_value_t = DEFAULT_HIDDEN_LAYERS)]
    hidden_layers: usize,
}

impl TrainingArgs {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            cosine_decay: !self.no_cosine,
            seed,
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    split: SplitArgs,
    /// Placement file written by `place`.
    #[arg(long)]
    placement: PathBuf,
    #[command(flatten)]
    training: TrainingArgs,
    /// Initialization seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Loss history CSV; defaults to the checkpoint path with `.loss.csv` appended.
    #[arg(long)]
    loss_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long)]
    r: usize,
    #[command(flatten)]
    training: TrainingArgs,
    /// Base seed; trial t uses seed + t for initialization and random placement.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of trials to average.
    #[arg(long, default_value_t = 1)]
    trials: usize,
    /// Only the two linear rows.
    #[arg(long)]
    linear_only: bool,
    /// Use the truth as every reconstruction (pipeline self-check).
    #[arg(long)]
    debug_identity: bool,
    /// Directory for per-cell metric dumps, one CSV per strategy.
    #[arg(long)]
    per_cell_dir: Option<PathBuf>,
    /// Metrics CSV path; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Snapshot index.
    #[arg(long, default_value_t = 0)]
    snapshot: usize,
    /// Render the reconstruction of this checkpoint instead of the truth.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Placement whose sensors --mark-sensors highlights.
    #[arg(long)]
    placement: Option<PathBuf>,
    /// Draw sensor cells at full intensity.
    #[arg(long)]
    mark_sensors: bool,
    #[arg(long)]
    out: PathBuf,
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn run<I, T>(args: I, stdout: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            write!(stdout, "{}", e.render())?;
            return Ok(());
        }
        Err(e) => {
            let text = e.render().to_string();
            let text = text.strip_prefix("error: ").unwrap_or(&text).trim_end().to_string();
            return Err(CliError::Usage(text));
        }
    };
    match cli.command {
        Command::Synth(a) => cmd_synth(&a, stdout),
        Command::Place(a) => cmd_place(&a, stdout),
        Command::Train(a) => cmd_train(&a, stdout),
        Command::Evaluate(a) => cmd_evaluate(&a, stdout),
        Command::Render(a) => cmd_render(&a, stdout),
    }
}

fn cmd_synth(a: &SynthArgs, stdout: &mut dyn Write) -> Result<()> {
    let series = synth_series(&SynthSpec {
        kind: a.kind.into(),
        height: a.h,
        width: a.w,
        snapshots: a.m,
        seed: a.seed,
        noise: a.noise,
        components: a.components,
    })?;
    let csv = match a.format {
        Some(f) => f == FormatArg::Csv,
        None => detect_format(&a.out) == Format::Csv,
    };
    if csv {
        save_series_csv(&a.out, &series)?;
    } else {
        save_series(&a.out, &series)?;
    }
    writeln!(stdout, "wrote {} snapshots of {}x{} to {}", a.m, a.h, a.w, a.out.display())?;
    Ok(())
}

fn choose(strategy: Strategy, train: &SnapshotSeries, r: usize, seed: u64) -> Result<Placement> {
    Ok(match strategy {
        Strategy::Qr => select_sampling_locations(train, r)?,
        Strategy::Rand => random_placement(train.grid(), r, seed, train.mask())?,
    })
}

fn cmd_place(a: &PlaceArgs, stdout: &mut dyn Write) -> Result<()> {
    let series = a.input.load()?;
    let (train, _) = a.split.split(&series)?;
    let mut placement = choose(a.strategy, &train, a.r, a.seed)?;
    if let Some(tau) = a.tau {
        let report = analyze_connectivity(&placement, tau);
        let omega = report.omega.map_or("none".to_string(), |o| o.to_string());
        writeln!(stdout, "connected={} omega={omega}", report.connected)?;
        writeln!(stdout, "graph_connected={} components={}", report.graph_connected, report.components)?;
        if a.bridge {
            let (bridged, after) = insert_bridges(&placement, tau)?;
            let added: Vec<String> = after.bridges_added.iter().map(|b| b.to_string()).collect();
            writeln!(stdout, "bridges={} [{}]", added.len(), added.join(" "))?;
            writeln!(stdout, "after: graph_connected={} components={}", after.graph_connected, after.components)?;
            placement = bridged;
        }
    }
    placement.save(&a.out)?;
    writeln!(stdout, "placed {} sensors: {:?}", placement.len(), placement.indices())?;
    Ok(())
}

fn loss_csv(history: &[f64]) -> String {
    let mut out = String::from("step,loss\n");
    for (k, l) in history.iter().enumerate() {
        writeln!(out, "{},{l:?}", k + 1).expect("String write");
    }
    out
}

fn cmd_train(a: &TrainArgs, stdout: &mut dyn Write) -> Result<()> {
    let series = a.input.load()?;
    let (train, _) = a.split.split(&series)?;
    let placement = at_path(&a.placement, Placement::load(&a.placement))?;
    let config = a.training.config(a.seed);
    let out = fit_neural(placement, &train, a.training.hidden_layers, &config)?;
    save_checkpoint(&a.out, &out.model)?;
    let loss_path = a.loss_out.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".loss.csv");
        p.into()
    });
    fs::write(&loss_path, loss_csv(&out.loss_history))?;
    let last = out.loss_history.last().copied().unwrap_or(f64::NAN);
    writeln!(
        stdout,
        "trained {} steps, final batch loss {last:.6}; checkpoint {}",
        out.loss_history.len(),
        a.out.display()
    )?;
    Ok(())
}

const STRATEGIES: [&str; 4] = ["qr+linear", "rand+linear", "qr+neural", "rand+neural"];

/// Mean of several reports of the same shape.
fn average(reports: &[EvalReport]) -> EvalReport {
    let n = reports.len() as f64;
    let cells = reports[0].per_cell_mse.len();
    let mean_vec = |f: fn(&EvalReport) -> &Vec<f64>| -> Vec<f64> {
        (0..cells).map(|i| reports.iter().map(|r| f(r)[i]).sum::<f64>() / n).collect()
    };
    EvalReport {
        n_sensors: reports[0].n_sensors,
        mse: reports.iter().map(|r| r.mse).sum::<f64>() / n,
        var: reports.iter().map(|r| r.var).sum::<f64>() / n,
        effective_cells: reports[0].effective_cells,
        per_cell_mse: mean_vec(|r| &r.per_cell_mse),
        per_cell_var: mean_vec(|r| &r.per_cell_var),
    }
}

fn thread_cap() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got '{v}'"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Runs `jobs` on at most `threads` workers; results keep job order.
fn run_parallel<T, F>(jobs: Vec<F>, threads: usize) -> Result<Vec<T>>
where
    T: Send,
    F: FnOnce() -> Result<T> + Send,
{
    let mut results = Vec::with_capacity(jobs.len());
    let mut jobs = jobs.into_iter().peekable();
    while jobs.peek().is_some() {
        let chunk: Vec<F> = jobs.by_ref().take(threads).collect();
        let outcomes = std::thread::scope(|s| {
            let handles: Vec<_> = chunk.into_iter().map(|job| s.spawn(job)).collect();
            handles
                .into_iter()
                .map(|h| h.join().map_err(|_| CliError::Internal("evaluation worker panicked".into())))
                .collect::<Vec<_>>()
        });
        for o in outcomes {
            results.push(o??);
        }
    }
    Ok(results)
}

fn cmd_evaluate(a: &EvaluateArgs, stdout: &mut dyn Write) -> Result<()> {
    if a.trials == 0 {
        return Err(CliError::Usage("--trials must be at least 1".into()));
    }
    let threads = thread_cap()?;
    let series = a.input.load()?;
    let (train, test) = a.split.split(&series)?;
    let truth = test.to_matrix();
    let mask = test.mask();
    let r = a.r;
    let report = |recon: &Matrix| -> Result<EvalReport> { Ok(evaluate(&truth, recon, mask, r)?) };

    let strategies: &[&str] = if a.linear_only { &STRATEGIES[..2] } else { &STRATEGIES };
    let mut rows: Vec<Vec<EvalReport>> = vec![Vec::new(); strategies.len()];
    if a.debug_identity {
        for reports in rows.iter_mut() {
            reports.push(report(&truth)?);
        }
    } else {
        let qr = select_sampling_locations(&train, r)?;
        let basis = fit_principal_basis(&train, r)?;
        let linear = |p: &Placement| -> Result<EvalReport> {
            report(&reconstruct_linear(&basis, p, &measure_matrix(p, &truth)?)?)
        };
        let qr_linear = linear(&qr)?;
        let mut randoms = Vec::with_capacity(a.trials);
        for t in 0..a.trials as u64 {
            let p = random_placement(train.grid(), r, a.seed + t, train.mask())?;
            rows[1].push(linear(&p)?);
            randoms.push(p);
        }
        rows[0].push(qr_linear);
        if !a.linear_only {
            let mut jobs = Vec::new();
            for (t, rand_p) in randoms.iter().enumerate() {
                let config = a.training.config(a.seed + t as u64);
                for p in [qr.clone(), rand_p.clone()] {
                    let (train, test, config) = (&train, &test, config.clone());
                    let hidden = a.training.hidden_layers;
                    jobs.push(move || -> Result<Matrix> {
                        let out = fit_neural(p, train, hidden, &config)?;
                        Ok(predict_series(&out.model, test)?)
                    });
                }
            }
            let recons = run_parallel(jobs, threads)?;
            for pair in recons.chunks(2) {
                rows[2].push(report(&pair[0])?);
                rows[3].push(report(&pair[1])?);
            }
        }
    }

    let averaged: Vec<EvalReport> = rows.iter().map(|r| average(r)).collect();
    let table: Vec<MetricsRow> = strategies
        .iter()
        .zip(&averaged)
        .map(|(s, rep)| MetricsRow {
            strategy: s.to_string(),
            n_sensors: rep.n_sensors,
            mse: rep.mse,
            var: rep.var,
        })
        .collect();
    let csv = metrics_csv(&table);
    match &a.out {
        Some(path) => {
            fs::write(path, &csv)?;
            write!(stdout, "{csv}")?;
        }
        None => write!(stdout, "{csv}")?,
    }
    if let Some(dir) = &a.per_cell_dir {
        fs::create_dir_all(dir)?;
        for (s, rep) in strategies.iter().zip(&averaged) {
            let name = format!("{}.csv", s.replace('+', "_"));
            fs::write(dir.join(name), per_cell_csv(rep, series.grid().width, mask))?;
        }
    }
    Ok(())
}

fn cmd_render(a: &RenderArgs, stdout: &mut dyn Write) -> Result<()> {
    let series = a.input.load()?;
    if a.snapshot >= series.len() {
        return Err(CliError::Usage(format!(
            "snapshot {} out of range for a series of {}",
            a.snapshot,
            series.len()
        )));
    }
    let model = a.checkpoint.as_deref().map(|p| at_path(p, load_checkpoint(p))).transpose()?;
    let values = match &model {
        Some(m) => predict_series(m, &series.slice(0..a.snapshot + 1))?.column(a.snapshot),
        None => series.snapshots()[a.snapshot].values.clone(),
    };
    let mut sensors = Vec::new();
    if a.mark_sensors {
        let placement = match (&a.placement, &model) {
            (Some(path), _) => at_path(path, Placement::load(path))?,
            (None, Some(m)) => m.placement.clone(),
            (None, None) => {
                return Err(CliError::Usage("--mark-sensors needs --placement or --checkpoint".into()))
            }
        };
        if placement.grid() != series.grid() {
            return Err(CliError::Usage("placement grid differs from the series grid".into()));
        }
        sensors = placement.indices().to_vec();
    }
    let pixels = render::gray_levels(&values, series.mask(), &sensors);
    fs::write(&a.out, render::encode_pgm(series.grid(), &pixels))?;
    writeln!(stdout, "rendered snapshot {} to {}", a.snapshot, a.out.display())?;
    Ok(())
}
