use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use clap::{Parser, Subcommand};

use metareg::io::{
    bands_to_csv, ingest_csv, prediction_bands, render_summary, summary_csv, summary_json,
    ColumnMapping, FitReport, ScenarioConfig,
};
use metareg::rng::parse_seed;
use metareg::simulation::run_simulation_with_progress;
use metareg::{
    build_design, fit_model, logit_effect, synthetic, Centering, Error, FitSettings, ModelSpec,
    Result,
};

#[derive(Parser)]
#[command(
    name = "metareg",
    version,
    about = "Mixed-effects meta-regression and coverage simulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a meta-regression of log-odds on study-level moderators.
    Fit(FitArgs),
    /// Run a Monte Carlo coverage scenario.
    Simulate(SimulateArgs),
    /// Write the bundled synthetic design as CSV.
    SynthDesign {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "events")]
    events: String,
    #[arg(long, default_value = "total")]
    total: String,
    /// Optional study identifier column.
    #[arg(long)]
    id: Option<String>,
    /// Comma-separated moderator columns (empty for intercept only).
    #[arg(long, value_delimiter = ',')]
    moderators: Vec<String>,
    /// Add the product of the two moderators.
    #[arg(long)]
    interaction: bool,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, default_value = "mean")]
    center: Centering,
    /// Truncate the Knapp-Hartung scale at 1.
    #[arg(long)]
    kh_truncate: bool,
    /// Write the fit report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write prediction bands along each moderator as CSV.
    #[arg(long)]
    plot_data: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    grid_points: usize,
}

#[derive(clap::Args)]
struct SimulateArgs {
    /// Scenario TOML file.
    #[arg(long)]
    scenario: PathBuf,
    /// Override the number of replicates.
    #[arg(long)]
    reps: Option<usize>,
    /// Override the master seed (decimal or 0x-hex).
    #[arg(long)]
    seed: Option<String>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Suppress progress output.
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Fit(args) => run_fit(&args),
        Command::Simulate(args) => run_simulate(&args),
        Command::SynthDesign { out } => run_synth(out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run_fit(args: &FitArgs) -> Result<()> {
    let start = Instant::now();
    let moderators: Vec<&str> = args.moderators.iter().map(String::as_str).collect();
    let mut mapping = ColumnMapping::new(&args.events, &args.total, &moderators);
    if let Some(id) = &args.id {
        mapping = mapping.with_id(id);
    }
    let dataset = ingest_csv(&args.data, &mapping)?;
    let spec = ModelSpec::new(args.moderators.clone(), args.interaction, args.center)?;
    let effects = dataset
        .studies
        .iter()
        .map(|s| logit_effect(s.events, s.total))
        .collect::<Result<Vec<_>>>()?;
    let mut settings = FitSettings::default();
    settings.knapp_hartung.truncate = args.kh_truncate;
    let fit = fit_model(&dataset, &spec, &effects, &settings)?;
    let n_dropped = dataset.len() - fit.k;
    let report = FitReport::new(&fit, &spec, args.level, n_dropped)?;

    print!("{}", report.render_table());
    if let Some(path) = &args.out {
        write_file(path, &report.to_json()?)?;
    }
    if let Some(path) = &args.plot_data {
        let (design, _) = build_design(&dataset, &spec)?;
        let columns: Vec<Vec<f64>> = fit
            .moderators
            .iter()
            .map(|m| design.column(design.moderator_column(m).expect("moderator column")))
            .collect();
        let bands = prediction_bands(&fit, &columns, args.level, args.grid_points)?;
        write_file(path, &bands_to_csv(&fit, &bands))?;
    }
    eprintln!("fit completed in {:.3} s", start.elapsed().as_secs_f64());
    Ok(())
}

fn run_simulate(args: &SimulateArgs) -> Result<()> {
    if args.threads == 0 {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    let (mut cfg, base) = ScenarioConfig::load(&args.scenario)?;
    if let Some(reps) = args.reps {
        cfg.reps = reps;
    }
    if let Some(seed) = &args.seed {
        let value = parse_seed(seed)
            .ok_or_else(|| Error::Config(format!("--seed: cannot parse `{seed}`")))?;
        cfg.seed = metareg::io::config::SeedValue::Int(value);
    }
    let scenario = cfg.into_scenario(&base)?;

    let start = Instant::now();
    let last = AtomicUsize::new(0);
    let quiet = args.quiet;
    let summary = run_simulation_with_progress(&scenario, args.threads, |done, total| {
        if quiet {
            return;
        }
        // roughly 20 updates per run
        let step = (total / 20).max(1);
        let bucket = done / step;
        if last.fetch_max(bucket, Ordering::Relaxed) < bucket || done == total {
            eprint!("\r{done}/{total} replicates");
            if done == total {
                eprintln!();
            }
        }
    })?;

    std::fs::create_dir_all(&args.out_dir)?;
    write_file(&args.out_dir.join("summary.csv"), &summary_csv(&summary))?;
    write_file(&args.out_dir.join("summary.json"), &summary_json(&summary)?)?;
    print!("{}", render_summary(&summary));
    if !quiet {
        eprintln!(
            "simulation completed in {:.1} s",
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}

fn run_synth(out: Option<&Path>) -> Result<()> {
    let design = synthetic::generate(&synthetic::SyntheticParams::default())?;
    let text = synthetic::to_csv(&design);
    match out {
        Some(path) => write_file(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents)
        .map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))
}
