use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use llmvol::config::{PipelineConfig, EXAMPLE_CONFIG};
use llmvol::pipeline::{plan, run_stage, PipelineError, Stage, CONFIG_EXIT_CODE};
use llmvol::prompt::PromptStyle;
use llmvol::synth::{generate, write_demo, DemoSpec};

#[derive(Parser)]
#[command(
    name = "llmvol",
    version,
    about = "Repeated-run volatility of LLM news sentiment and its trading impact"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// More log output on stderr (-v info, -vv debug). RUST_LOG takes precedence.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Filter, deduplicate and date the raw feed; load prices and calendar.
    Ingest(StageArgs),
    /// Render prompts and collect responses over the temperature x repetition grid.
    Query(StageArgs),
    /// Extract labels from responses.
    Parse(StageArgs),
    /// Lexical and semantic volatility per temperature.
    Metrics(StageArgs),
    /// Backtest the long-short strategy for every (temperature, run).
    Backtest(StageArgs),
    /// Write summary.json and the plot-ready tables.
    Report(StageArgs),
    /// All stages in order, stopping at the first failure.
    RunAll(StageArgs),
    /// Write a synthetic data set and a commented config into a directory.
    Demo {
        #[arg(long, default_value = "demo")]
        dir: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Last calendar date of the generated feed (YYYY-MM-DD).
        #[arg(long)]
        end: Option<chrono::NaiveDate>,
    },
}

#[derive(Args)]
struct StageArgs {
    #[arg(short, long, default_value = "llmvol.toml")]
    config: PathBuf,
    /// Print what would run and exit.
    #[arg(long)]
    dry_run: bool,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// synthetic, replay or http
    #[arg(long)]
    provider: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Comma-separated, e.g. 0,0.5,1
    #[arg(long, value_delimiter = ',')]
    temperatures: Option<Vec<f64>>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long, value_parser = parse_style)]
    style: Option<PromptStyle>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_in_flight: Option<usize>,
    /// Requests per minute, 0 = unlimited.
    #[arg(long)]
    rate_limit: Option<u32>,
}

fn parse_style(s: &str) -> Result<PromptStyle, String> {
    match s {
        "single" => Ok(PromptStyle::Single),
        "batch" => Ok(PromptStyle::Batch),
        _ => Err(format!("expected single or batch, got {s:?}")),
    }
}

impl StageArgs {
    fn load(&self) -> Result<PipelineConfig, PipelineError> {
        let mut c = PipelineConfig::load(&self.config)?;
        if let Some(v) = &self.output {
            c.paths.output = v.clone();
        }
        if let Some(v) = &self.cache {
            c.paths.cache = v.clone();
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = &self.provider {
            c.run.provider = v.clone();
        }
        if let Some(v) = &self.model {
            c.run.model = v.clone();
        }
        if let Some(v) = &self.temperatures {
            c.run.temperatures = v.clone();
        }
        if let Some(v) = self.repetitions {
            c.run.repetitions = v;
        }
        if let Some(v) = self.style {
            c.prompt.style = v;
        }
        if let Some(v) = self.batch_size {
            c.prompt.batch_size = v;
        }
        if let Some(v) = self.max_in_flight {
            c.run.max_in_flight = v;
        }
        if let Some(v) = self.rate_limit {
            c.run.rate_limit = v;
        }
        c.validate()?;
        Ok(c)
    }
}

fn run_stages(args: &StageArgs, stages: &[Stage]) -> Result<(), PipelineError> {
    let config = args.load()?;
    if args.dry_run {
        for line in plan(&config, stages) {
            println!("{line}");
        }
        return Ok(());
    }
    for &stage in stages {
        log::info!("{stage}: starting");
        let summary = run_stage(&config, stage)?;
        eprintln!("{stage}: {summary}");
    }
    Ok(())
}

fn demo(dir: &Path, seed: u64, end: Option<chrono::NaiveDate>) -> Result<(), String> {
    let mut spec = DemoSpec {
        seed,
        ..DemoSpec::default()
    };
    if let Some(end) = end {
        spec.end = end;
    }
    if spec.end <= spec.start {
        return Err(format!("--end must be after {}", spec.start));
    }
    let data = generate(&spec);
    write_demo(&dir.join("data"), &data).map_err(|e| e.to_string())?;
    let config = EXAMPLE_CONFIG.replacen("seed = 7", &format!("seed = {seed}"), 1);
    let path = dir.join("llmvol.toml");
    std::fs::write(&path, config).map_err(|e| format!("{}: {e}", path.display()))?;
    eprintln!(
        "demo: {} headlines, {} tickers, {} trading dates; config at {}",
        data.headlines.len(),
        spec.tickers.len(),
        data.calendar.len(),
        path.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();

    let result = match &cli.command {
        Command::Ingest(a) => run_stages(a, &[Stage::Ingest]),
        Command::Query(a) => run_stages(a, &[Stage::Query]),
        Command::Parse(a) => run_stages(a, &[Stage::Parse]),
        Command::Metrics(a) => run_stages(a, &[Stage::Metrics]),
        Command::Backtest(a) => run_stages(a, &[Stage::Backtest]),
        Command::Report(a) => run_stages(a, &[Stage::Report]),
        Command::RunAll(a) => run_stages(a, &Stage::ALL),
        Command::Demo { dir, seed, end } => {
            return match demo(dir, *seed, *end) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: demo: {e}");
                    ExitCode::FAILURE
                }
            };
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = e.exit_code();
            debug_assert!(code == CONFIG_EXIT_CODE || code >= 10);
            ExitCode::from(code as u8)
        }
    }
}
