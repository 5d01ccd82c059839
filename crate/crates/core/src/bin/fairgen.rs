use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use fairgen::pipeline::{
    render_csv, render_text, run_pipeline, summarize, CellOutcome, GridCell, GridConfig, GridRecord, GridSummary,
    PipelineError, RunConfig, RunRecord, GRID_RECORD_FILE, RUN_RECORD_FILE,
};

#[derive(Parser)]
#[command(name = "fairgen", version, about = "Bias-mitigated synthetic tabular data pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one pipeline config over all of its seeds.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Expand and run an experiment grid.
    Grid {
        #[arg(long)]
        config: PathBuf,
        /// Mark each synthesizer's best value per column.
        #[arg(long)]
        bold: bool,
    },
    /// Render the results stored in an output directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
        #[arg(long)]
        bold: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Table,
    Csv,
}

fn single_run_summary(record: &RunRecord) -> GridSummary {
    let cell = GridCell {
        synthesizer: record.synthesizer.clone(),
        technique: record.technique.clone(),
        debias_attribute: None,
        output_dir: record.config.output_dir.clone(),
        outcome: CellOutcome::Completed { record: Box::new(record.clone()) },
    };
    summarize(&[cell], &record.config.evaluation_attributes)
}

fn report(input: &Path, format: Format, bold: bool) -> Result<String, PipelineError> {
    let summary = if input.join(GRID_RECORD_FILE).exists() {
        GridRecord::load(input)?.summary
    } else {
        single_run_summary(&RunRecord::load(input)?)
    };
    Ok(match format {
        Format::Json => serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n",
        Format::Table => render_text(&summary, bold),
        Format::Csv => render_csv(&summary),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config } => RunConfig::load(&config).and_then(|c| run_pipeline(&c)).map(|record| {
            print!("{}", render_text(&single_run_summary(&record), false));
            println!("wrote {}", record.config.output_dir.join(RUN_RECORD_FILE).display());
            ExitCode::SUCCESS
        }),
        Command::Grid { config, bold } => GridConfig::load(&config).and_then(|c| c.run().map(|r| (c, r))).map(|(c, record)| {
            print!("{}", render_text(&record.summary, bold));
            for cell in &record.cells {
                if let CellOutcome::Failed { stage, error } = &cell.outcome {
                    eprintln!("failed cell {}: {stage}: {error}", cell.output_dir.display());
                }
            }
            println!("wrote {}", c.output_dir.join(GRID_RECORD_FILE).display());
            if record.failures() == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }),
        Command::Report { input, format, bold } => report(&input, format, bold).map(|text| {
            print!("{text}");
            ExitCode::SUCCESS
        }),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::FAILURE
    })
}
