//! `micdt`: fit SVAR causal digital twins, inspect Granger factors, render
//! fence graphs and run what-if simulations.
//!
//! Exit codes: 0 success, 1 user or validation error, 2 numerical failure.

mod config;

use std::collections::BTreeMap;
use std::fmt::Display;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use micdt_core::simulate::{NoiseFamily, NoiseSpec, DEFAULT_BURN_IN};
use micdt_core::svar::DEFAULT_PRUNE_THRESHOLD;
use micdt_core::var::granger_all_pairs;
use micdt_core::{
    build_fence_graph, counterfactual_report, fit_svar, load_csv, load_model, pairwise_granger,
    simulate_svar, Contrast, CsvOptions, DotStyle, Error, GrangerResult, IcaConfig, Intervention,
    KalmanConfig, Scenario, Strategy, SvarConfig, VarMethod,
};

use config::Overlay;

const SEED_ENV: &str = "MICDT_SEED";

#[derive(Parser, Debug)]
#[command(
    name = "micdt",
    version,
    about = "Structural VAR causal digital twins for multichannel sensor data"
)]
struct Cli {
    /// TOML or JSON file whose keys mirror the long flag names.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit an SVAR model to a CSV time series and write the model JSON.
    Fit(FitArgs),
    /// Pairwise Granger causality table (CSV on stdout).
    Granger(GrangerArgs),
    /// Render the fence graph of a model as DOT or JSON.
    Graph(GraphArgs),
    /// Simulate a model forward and write the series as CSV.
    Simulate(SimulateArgs),
    /// Compare a model against edited scenarios under common random numbers.
    Counterfactual(CounterfactualArgs),
}

#[derive(Args, Debug)]
struct CsvArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    /// Field delimiter (single byte).
    #[arg(long)]
    delimiter: Option<char>,
    /// The first row holds data, not labels.
    #[arg(long)]
    no_header: bool,
    /// Name of a column to drop before analysis.
    #[arg(long)]
    time_column: Option<String>,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    csv: CsvArgs,
    #[arg(long)]
    lags: Option<usize>,
    /// ols or kalman.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    prune_threshold: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    no_standardize: bool,
    /// logcosh or cube.
    #[arg(long)]
    contrast: Option<String>,
    /// symmetric or deflation.
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// Kalman process noise q.
    #[arg(long)]
    kalman_q: Option<f64>,
    /// Kalman observation noise r.
    #[arg(long)]
    kalman_r: Option<f64>,
    /// Kalman initial coefficient variance.
    #[arg(long)]
    kalman_p0: Option<f64>,
    /// Model JSON path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GrangerArgs {
    #[command(flatten)]
    csv: CsvArgs,
    #[arg(long)]
    lags: Option<usize>,
    /// Comma-separated `source:target` pairs (all ordered pairs when omitted).
    #[arg(long)]
    pairs: Option<String>,
    /// Aligned, human-readable table instead of CSV.
    #[arg(long)]
    pretty: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GraphArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
    /// dot or json.
    #[arg(long)]
    format: Option<String>,
    /// Draw the reduced-form (uncorrected) lag matrices.
    #[arg(long)]
    uncorrected: bool,
    /// Re-express factors in raw sensor units.
    #[arg(long)]
    raw_units: bool,
    #[arg(long)]
    min_width: Option<f64>,
    #[arg(long)]
    max_width: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    samples: Option<usize>,
    /// laplace, uniform or gaussian.
    #[arg(long)]
    noise: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    sim: SimArgs,
}

#[derive(Args, Debug)]
struct CounterfactualArgs {
    #[command(flatten)]
    sim: SimArgs,
    /// `structural:SRC->DST=V`, `lagK:SRC->DST=V` or `clamp:CH=V`; repeatable.
    #[arg(long)]
    edit: Vec<String>,
    /// Apply all edits as one scenario instead of one scenario per edit.
    #[arg(long)]
    combine: bool,
}

/// Resolved settings: flag, then config file, then default. Every resolved
/// value is recorded for echoing.
struct Resolver {
    overlay: Overlay,
    echo: BTreeMap<String, String>,
}

impl Resolver {
    fn value<T>(
        &mut self,
        key: &str,
        flag: Option<T>,
        default: Option<T>,
    ) -> Result<Option<T>, Error>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => Some(v),
            None => self.overlay.get::<T>(key)?.or(default),
        };
        if let Some(v) = &v {
            self.echo.insert(key.to_string(), v.to_string());
        }
        Ok(v)
    }

    fn required<T>(&mut self, key: &str, flag: Option<T>) -> Result<T, Error>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        self.value(key, flag, None)?
            .ok_or_else(|| Error::InvalidArgument(format!("--{key} is required")))
    }

    fn or<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, Error>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        Ok(self
            .value(key, flag, Some(default))?
            .expect("default supplied"))
    }

    fn switch(&mut self, key: &str, flag: bool) -> Result<bool, Error> {
        let v = flag || self.overlay.get::<bool>(key)?.unwrap_or(false);
        self.echo.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    fn path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<Option<PathBuf>, Error> {
        let v = match flag {
            Some(p) => Some(p),
            None => self.overlay.get::<String>(key)?.map(PathBuf::from),
        };
        if let Some(p) = &v {
            self.echo.insert(key.to_string(), p.display().to_string());
        }
        Ok(v)
    }

    /// Flag, then config file, then `MICDT_SEED`, then 0.
    fn seed(&mut self, flag: Option<u64>) -> Result<u64, Error> {
        let env = match std::env::var(SEED_ENV) {
            Ok(raw) => Some(
                raw.trim()
                    .parse::<u64>()
                    .map_err(|e| Error::InvalidArgument(format!("{SEED_ENV}={raw:?}: {e}")))?,
            ),
            Err(_) => None,
        };
        let seed = match flag {
            Some(s) => s,
            None => self.overlay.get::<u64>("seed")?.or(env).unwrap_or(0),
        };
        self.echo.insert("seed".into(), seed.to_string());
        Ok(seed)
    }
}

fn parse_choice<T: FromStr<Err = Error>>(raw: &str) -> Result<T, Error> {
    raw.parse()
}

fn parse_method(raw: &str) -> Result<bool, Error> {
    match raw.to_ascii_lowercase().as_str() {
        "ols" => Ok(false),
        "kalman" => Ok(true),
        other => Err(Error::InvalidArgument(format!(
            "unknown method {other:?} (expected ols or kalman)"
        ))),
    }
}

fn parse_contrast(raw: &str) -> Result<Contrast, Error> {
    match raw.to_ascii_lowercase().as_str() {
        "logcosh" => Ok(Contrast::LogCosh),
        "cube" => Ok(Contrast::Cube),
        other => Err(Error::InvalidArgument(format!(
            "unknown contrast {other:?} (expected logcosh or cube)"
        ))),
    }
}

fn parse_strategy(raw: &str) -> Result<Strategy, Error> {
    match raw.to_ascii_lowercase().as_str() {
        "symmetric" => Ok(Strategy::Symmetric),
        "deflation" => Ok(Strategy::Deflation),
        other => Err(Error::InvalidArgument(format!(
            "unknown strategy {other:?} (expected symmetric or deflation)"
        ))),
    }
}

fn csv_options(r: &mut Resolver, args: &CsvArgs) -> Result<(PathBuf, CsvOptions), Error> {
    let input = r
        .path("input", args.input.clone())?
        .ok_or_else(|| Error::InvalidArgument("--input is required".into()))?;
    let delimiter = r.or("delimiter", args.delimiter, ',')?;
    if !delimiter.is_ascii() {
        return Err(Error::InvalidArgument(format!(
            "delimiter {delimiter:?} is not a single byte"
        )));
    }
    let no_header = r.switch("no-header", args.no_header)?;
    let time_column = r.value::<String>("time-column", args.time_column.clone(), None)?;
    Ok((
        input,
        CsvOptions {
            delimiter: delimiter as u8,
            has_header: !no_header,
            time_column,
        },
    ))
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), Error> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
        }
    }
    Ok(())
}

fn cmd_fit(r: &mut Resolver, args: FitArgs) -> Result<(), Error> {
    let (input, csv) = csv_options(r, &args.csv)?;
    let lags = r.required("lags", args.lags)?;
    let kalman = parse_method(&r.or("method", args.method, "ols".to_string())?)?;
    let prune_threshold = r.or(
        "prune-threshold",
        args.prune_threshold,
        DEFAULT_PRUNE_THRESHOLD,
    )?;
    let seed = r.seed(args.seed)?;
    let no_standardize = r.switch("no-standardize", args.no_standardize)?;
    let defaults = IcaConfig::default();
    let ica = IcaConfig {
        contrast: parse_contrast(&r.or("contrast", args.contrast, "logcosh".to_string())?)?,
        strategy: parse_strategy(&r.or("strategy", args.strategy, "symmetric".to_string())?)?,
        max_iter: r.or("max-iter", args.max_iter, defaults.max_iter)?,
        tol: r.or("tol", args.tol, defaults.tol)?,
        seed,
    };
    let var_method = if kalman {
        let d = KalmanConfig::default();
        VarMethod::Kalman(KalmanConfig {
            process_noise: r.or("kalman-q", args.kalman_q, d.process_noise)?,
            observation_noise: r.or("kalman-r", args.kalman_r, d.observation_noise)?,
            initial_covariance: r.or("kalman-p0", args.kalman_p0, d.initial_covariance)?,
        })
    } else {
        VarMethod::Ols
    };
    let out = r.path("out", args.out)?;

    let series = load_csv(&input, &csv)?;
    let config = SvarConfig {
        var_method,
        ica,
        prune_threshold,
        standardize: !no_standardize,
    };
    let mut model = fit_svar(&series, lags, &config)?;
    model.fit_meta.run_config = Some(r.echo.clone());
    write_output(out.as_deref(), &model.to_json()?)
}

fn parse_pairs(raw: &str) -> Result<Vec<(String, String)>, Error> {
    raw.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (s, t) = p.trim().split_once(':').ok_or_else(|| {
                Error::InvalidArgument(format!("malformed pair {p:?}: expected source:target"))
            })?;
            Ok((s.trim().to_string(), t.trim().to_string()))
        })
        .collect()
}

fn granger_table(rows: &[GrangerResult], pretty: bool) -> String {
    let header = ["source", "target", "var_restricted", "var_full", "f_value"];
    let cells: Vec<[String; 5]> = rows
        .iter()
        .map(|g| {
            [
                g.source.clone(),
                g.target.clone(),
                format!("{}", g.var_restricted),
                format!("{}", g.var_full),
                format!("{}", g.f_value),
            ]
        })
        .collect();
    let mut out = String::new();
    if pretty {
        let mut widths = header.map(str::len);
        let shown: Vec<[String; 5]> = rows
            .iter()
            .map(|g| {
                [
                    g.source.clone(),
                    g.target.clone(),
                    format!("{:.6}", g.var_restricted),
                    format!("{:.6}", g.var_full),
                    format!("{:.6}", g.f_value),
                ]
            })
            .collect();
        for row in &shown {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let line = |cols: [&str; 5]| {
            let mut s = String::new();
            for (k, (c, w)) in cols.iter().zip(widths).enumerate() {
                if k < 2 {
                    s.push_str(&format!("{c:<w$}  "));
                } else {
                    s.push_str(&format!("{c:>w$}  "));
                }
            }
            s.trim_end().to_string() + "\n"
        };
        out.push_str(&line(header));
        for row in &shown {
            out.push_str(&line([&row[0], &row[1], &row[2], &row[3], &row[4]]));
        }
    } else {
        out.push_str(&header.join(","));
        out.push('\n');
        for row in &cells {
            out.push_str(&row.join(","));
            out.push('\n');
        }
    }
    out
}

fn cmd_granger(r: &mut Resolver, args: GrangerArgs) -> Result<(), Error> {
    let (input, csv) = csv_options(r, &args.csv)?;
    let lags = r.required("lags", args.lags)?;
    let pairs = r.value::<String>("pairs", args.pairs, None)?;
    let pretty = r.switch("pretty", args.pretty)?;
    let out = r.path("out", args.out)?;
    let series = load_csv(&input, &csv)?;
    let rows = match pairs {
        Some(raw) => parse_pairs(&raw)?
            .iter()
            .map(|(s, t)| pairwise_granger(&series, s, t, lags))
            .collect::<Result<Vec<_>, _>>()?,
        None => granger_all_pairs(&series, lags)?,
    };
    log::info!("effective config: {:?}", r.echo);
    write_output(out.as_deref(), &granger_table(&rows, pretty))
}

fn cmd_graph(r: &mut Resolver, args: GraphArgs) -> Result<(), Error> {
    let path = r
        .path("model", args.model)?
        .ok_or_else(|| Error::InvalidArgument("--model is required".into()))?;
    let threshold = r.or("threshold", args.threshold, DEFAULT_PRUNE_THRESHOLD)?;
    if threshold.is_nan() || threshold < 0.0 {
        return Err(Error::InvalidArgument("--threshold must be >= 0".into()));
    }
    let format = r
        .or("format", args.format, "dot".to_string())?
        .to_ascii_lowercase();
    let uncorrected = r.switch("uncorrected", args.uncorrected)?;
    let raw_units = r.switch("raw-units", args.raw_units)?;
    let d = DotStyle::default();
    let style = DotStyle {
        min_width: r.or("min-width", args.min_width, d.min_width)?,
        max_width: r.or("max-width", args.max_width, d.max_width)?,
    };
    if !(style.min_width > 0.0 && style.min_width <= style.max_width) {
        return Err(Error::InvalidArgument(
            "pen widths must satisfy 0 < min-width <= max-width".into(),
        ));
    }
    let out = r.path("out", args.out)?;

    let mut model = load_model(&path)?;
    if raw_units {
        model = model.in_raw_units();
    }
    let graph = build_fence_graph(&model, threshold, !uncorrected);
    let text = match format.as_str() {
        "dot" => {
            let echo: Vec<String> = r.echo.iter().map(|(k, v)| format!("{k}={v}")).collect();
            let comment = echo.join(" ").replace('\\', "\\\\").replace('"', "\\\"");
            graph.to_dot(&style).replacen(
                "digraph fence_graph {\n",
                &format!("digraph fence_graph {{\n  comment=\"run_config: {comment}\";\n"),
                1,
            )
        }
        "json" => {
            let mut value: serde_json::Value = serde_json::from_str(&graph.to_json()?)
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            value["run_config"] = serde_json::to_value(&r.echo).expect("string map");
            serde_json::to_string_pretty(&value).expect("json value") + "\n"
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown format {other:?} (expected dot or json)"
            )))
        }
    };
    write_output(out.as_deref(), &text)
}

struct SimSetup {
    model: micdt_core::SvarModel,
    samples: usize,
    noise: NoiseSpec,
    burn_in: usize,
    out: Option<PathBuf>,
}

fn sim_setup(r: &mut Resolver, args: SimArgs) -> Result<SimSetup, Error> {
    let path = r
        .path("model", args.model)?
        .ok_or_else(|| Error::InvalidArgument("--model is required".into()))?;
    let samples = r.required("samples", args.samples)?;
    let family: NoiseFamily =
        parse_choice(&r.or("noise", args.noise, NoiseFamily::default().to_string())?)?;
    let seed = r.seed(args.seed)?;
    let burn_in = r.or("burn-in", args.burn_in, DEFAULT_BURN_IN)?;
    let out = r.path("out", args.out)?;
    let model = load_model(&path)?;
    let noise = NoiseSpec::with_variances(family, &model.noise_variances, seed);
    Ok(SimSetup {
        model,
        samples,
        noise,
        burn_in,
        out,
    })
}

fn cmd_simulate(r: &mut Resolver, args: SimulateArgs) -> Result<(), Error> {
    let s = sim_setup(r, args.sim)?;
    let series = simulate_svar(&s.model, s.samples, &s.noise, s.burn_in)?;
    log::info!("effective config: {:?}", r.echo);
    let mut buf = Vec::new();
    series.write_csv_to(&mut buf, b',')?;
    write_output(
        s.out.as_deref(),
        &String::from_utf8(buf).expect("CSV is UTF-8"),
    )
}

fn cmd_counterfactual(r: &mut Resolver, args: CounterfactualArgs) -> Result<(), Error> {
    let mut edits = args.edit;
    if edits.is_empty() {
        edits = r.overlay.list("edit");
    }
    let combine = r.switch("combine", args.combine)?;
    let s = sim_setup(r, args.sim)?;
    r.echo.insert("edit".into(), edits.join(" "));
    let interventions = edits
        .iter()
        .map(|e| Intervention::parse_edit(e))
        .collect::<Result<Vec<_>, _>>()?;
    let scenarios: Vec<Scenario> = if interventions.is_empty() {
        Vec::new()
    } else if combine {
        vec![Scenario { interventions }]
    } else {
        interventions
            .into_iter()
            .map(|i| Scenario {
                interventions: vec![i],
            })
            .collect()
    };
    let report = counterfactual_report(&s.model, &scenarios, s.samples, &s.noise, s.burn_in)?;
    let mut value: serde_json::Value = serde_json::from_str(&report.to_json()?)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    value["run_config"] = serde_json::to_value(&r.echo).expect("string map");
    write_output(
        s.out.as_deref(),
        &(serde_json::to_string_pretty(&value).expect("json value") + "\n"),
    )
}

fn subcommand_name(c: &Command) -> &'static str {
    match c {
        Command::Fit(_) => "fit",
        Command::Granger(_) => "granger",
        Command::Graph(_) => "graph",
        Command::Simulate(_) => "simulate",
        Command::Counterfactual(_) => "counterfactual",
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let overlay = match &cli.config {
        Some(path) => Overlay::load(path, subcommand_name(&cli.command))?,
        None => Overlay::default(),
    };
    let mut r = Resolver {
        overlay,
        echo: BTreeMap::new(),
    };
    if let Some(path) = &cli.config {
        r.echo.insert("config".into(), path.display().to_string());
    }
    match cli.command {
        Command::Fit(a) => cmd_fit(&mut r, a),
        Command::Granger(a) => cmd_granger(&mut r, a),
        Command::Graph(a) => cmd_graph(&mut r, a),
        Command::Simulate(a) => cmd_simulate(&mut r, a),
        Command::Counterfactual(a) => cmd_counterfactual(&mut r, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_env("MICDT_LOG")
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
