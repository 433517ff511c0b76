//! `nowcast`: synthetic scenes, motion, model fitting, forecasting and
//! verification from the command line.
//!
//! Exit codes: 0 on success, 2 on a data error, 3 on a configuration error.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgMatches, Args, Command, FromArgMatches, Parser, Subcommand};
use nowcast_core::config::{PipelineConfig, CONFIG_KEYS};
use nowcast_core::eval::{evaluate, format_table, write_metrics_csv};
use nowcast_core::forecast::{dbz_to_rainrate, rainrate_to_dbz};
use nowcast_core::kv::parse_kv;
use nowcast_core::motion::{smooth_velocity, trec, write_velocity_csv};
use nowcast_core::pipeline::{
    fit_sequence, forecast_sequence, prepare, read_fit, read_forecast_rows, write_fit, write_forecast,
};
use nowcast_core::raster::{build_layout, read_field, read_sequence, write_field, ReflectivityField};
use nowcast_core::synth::{generate_scene, write_scene, SceneSpec};
use nowcast_core::Error;

#[derive(Parser)]
#[command(name = "nowcast", version, about = "Radar reflectivity nowcasting")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic scan sequence with known motion and growth.
    Synth {
        /// Scene description file (`key = value`); defaults otherwise.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Track and smooth motion between two scans.
    Motion {
        scan_a: PathBuf,
        scan_b: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Fit the space-time growth model to a scan sequence.
    Fit {
        #[arg(required = true)]
        scans: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Forecast past the last scan with a fitted model and the persistence baseline.
    Forecast {
        #[arg(required = true)]
        scans: Vec<PathBuf>,
        #[arg(long)]
        fit: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Score a forecast table against observed scans.
    Eval {
        /// `forecast_variance.csv` written by `forecast`.
        #[arg(long)]
        forecast: PathBuf,
        #[arg(required = true)]
        truth: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Convert between reflectivity (dBZ) and rain rate (mm/h).
    Convert {
        /// Direction of conversion.
        #[arg(long, value_parser = ["rain", "dbz"])]
        to: String,
        /// A single value to convert.
        #[arg(long, conflicts_with_all = ["input", "out"])]
        value: Option<f64>,
        /// A raster to convert cell by cell.
        #[arg(long, requires = "out")]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// `--config FILE` plus one `--<key> VALUE` flag per configuration key.
#[derive(Debug, Default)]
struct ConfigArgs {
    file: Option<PathBuf>,
    overrides: BTreeMap<String, String>,
}

impl FromArgMatches for ConfigArgs {
    fn from_arg_matches(m: &ArgMatches) -> Result<Self, clap::Error> {
        let mut out = ConfigArgs {
            file: m.get_one::<PathBuf>("config").cloned(),
            ..Default::default()
        };
        for key in CONFIG_KEYS {
            if let Some(v) = m.get_one::<String>(key) {
                out.overrides.insert(key.to_string(), v.clone());
            }
        }
        Ok(out)
    }

    fn update_from_arg_matches(&mut self, m: &ArgMatches) -> Result<(), clap::Error> {
        *self = Self::from_arg_matches(m)?;
        Ok(())
    }
}

impl Args for ConfigArgs {
    fn augment_args(cmd: Command) -> Command {
        let cmd = cmd.arg(
            clap::Arg::new("config")
                .long("config")
                .value_name("FILE")
                .value_parser(clap::value_parser!(PathBuf))
                .help("Configuration file (`key = value` lines)"),
        );
        CONFIG_KEYS.iter().fold(cmd, |cmd, key| {
            cmd.arg(
                clap::Arg::new(*key)
                    .long(*key)
                    .value_name("VALUE")
                    .allow_negative_numbers(true)
                    .help_heading("Configuration overrides"),
            )
        })
    }

    fn augment_args_for_update(cmd: Command) -> Command {
        Self::augment_args(cmd)
    }
}

impl ConfigArgs {
    fn load(&self) -> Result<PipelineConfig, Failure> {
        let mut map = match &self.file {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
                parse_kv(&text, path).map_err(|e| Failure::Config(e.to_string()))?
            }
            None => BTreeMap::new(),
        };
        map.extend(self.overrides.clone());
        Ok(PipelineConfig::from_map(map)?)
    }
}

enum Failure {
    Data(String),
    Config(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Config(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}

fn run(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::Synth { spec, seed, out } => {
            let mut s = match spec {
                Some(p) => SceneSpec::read(&p).map_err(|e| Failure::Config(e.to_string()))?,
                None => SceneSpec::default(),
            };
            if let Some(seed) = seed {
                s.seed = seed;
            }
            s.validate()?;
            let scene = generate_scene(&s)?;
            let paths = write_scene(&scene, &s, &out)?;
            println!("wrote {} scans to {}", paths.len(), out.display());
        }
        Cmd::Motion {
            scan_a,
            scan_b,
            out,
            config,
        } => {
            let cfg = config.load()?;
            let a = read_field(&scan_a)?;
            let b = read_field(&scan_b)?;
            let layout = build_layout(a.width(), a.height(), cfg.array_size, cfg.spacing)?;
            let field = smooth_velocity(&trec(&a, &b, &layout, &cfg.motion)?, &cfg.motion)?;
            write_velocity_csv(&field, &out)?;
            let valid = field.valid.iter().filter(|&&v| v).count();
            println!("{valid} of {} vectors valid; wrote {}", field.len(), out.display());
        }
        Cmd::Fit { scans, out, config } => {
            let cfg = config.load()?;
            let fields = read_sequence(&scans)?;
            let run = fit_sequence(&fields, &cfg)?;
            for w in &run.warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "{:>4} {:>10} {:>10} {:>14} {:>5} {:>9}",
                "t", "rho", "sigma", "loglik", "iter", "converged"
            );
            for tf in &run.fit.times {
                println!(
                    "{:>4} {:>10.4} {:>10.4} {:>14.3} {:>5} {:>9}",
                    tf.t, tf.rho, tf.sigma, tf.loglik, tf.iterations, tf.converged
                );
            }
            let r: Vec<String> = run.fit.r.iter().map(|x| format!("{x:.4}")).collect();
            println!("r = [{}] over {} arrays", r.join(", "), run.fit.active.len());
            write_fit(&run.fit, &out)?;
        }
        Cmd::Forecast {
            scans,
            fit,
            out,
            config,
        } => {
            let cfg = config.load()?;
            let fit = read_fit(&fit)?;
            let fields = read_sequence(&scans)?;
            let prepared = prepare(&fields, &cfg.motion, fit.array_size, fit.spacing)?;
            let set = forecast_sequence(&prepared, &fit, cfg.horizon)?;
            let written = write_forecast(&set, &prepared.grid, fit.array_size, &out)?;
            println!("wrote {} files to {}", written.len(), out.display());
        }
        Cmd::Eval {
            forecast,
            truth,
            out,
            config,
        } => {
            let cfg = config.load()?;
            let rows = read_forecast_rows(&forecast)?;
            let fields = read_sequence(&truth)?;
            let metrics = evaluate(
                &rows,
                &fields,
                cfg.array_size,
                cfg.motion.max_missing_fraction,
                cfg.threshold,
            )?;
            write_metrics_csv(&metrics, &out)?;
            print!("{}", format_table(&metrics, cfg.threshold));
        }
        Cmd::Convert { to, value, input, out } => {
            let f = if to == "rain" { dbz_to_rainrate } else { rainrate_to_dbz };
            match (value, input, out) {
                (Some(v), _, _) => println!("{}", f(v)),
                (None, Some(input), Some(out)) => convert_field(&input, &out, f)?,
                _ => return Err(Failure::Config("convert: give --value or --input with --out".into())),
            }
        }
    }
    Ok(())
}

fn convert_field(input: &Path, out: &Path, f: fn(f64) -> f64) -> Result<(), Failure> {
    let field = read_field(input)?;
    let values = field
        .values()
        .iter()
        .map(|&v| if v.is_nan() { v } else { f(v) })
        .collect();
    write_field(&ReflectivityField::new(field.grid, field.timestamp, values)?, out)?;
    Ok(())
}
