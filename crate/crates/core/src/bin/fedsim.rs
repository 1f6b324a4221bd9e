use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use fedsim::chart::{render_chart, ChartSeries};
use fedsim::config::{parse_config, Overrides};
use fedsim::metrics::RunSummary;
use fedsim::output::{self, write_atomic, write_run};
use fedsim::{run_observed, DropKind, Error, Execution, Federation, RunConfig, WeightingStrategy};

/// Deterministic simulator of synchronous federated learning.
#[derive(Debug, Parser)]
#[command(name = "fedsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment and write rounds.csv, nodes.csv, summary.json and a chart.
    Run(RunArgs),
    /// Plot accuracy against simulated time from one or more rounds.csv files.
    Chart {
        #[arg(long)]
        out: PathBuf,
        /// Each file becomes one series, labelled by its parent directory.
        #[arg(required = true)]
        csv: Vec<PathBuf>,
    },
    /// Run the same experiment under several strategies.
    Compare {
        #[command(flatten)]
        run: RunArgs,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "uniform,num_samples,num_classes,entropy"
        )]
        strategies: Vec<WeightingStrategy>,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON config file (a previous summary.json also works).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    strategy: Option<WeightingStrategy>,
    #[arg(long)]
    drop_policy: Option<DropKind>,
    #[arg(long)]
    drop_count: Option<usize>,
    #[arg(long)]
    drop_after: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory holding the Fashion-MNIST IDX files.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Train nodes one after another instead of in parallel.
    #[arg(long)]
    sequential: bool,
    #[arg(long, short)]
    quiet: bool,
}

impl RunArgs {
    fn config(&self) -> fedsim::Result<RunConfig> {
        let overrides = Overrides {
            seed: self.seed,
            strategy: self.strategy,
            drop_policy: self.drop_policy,
            drop_count: self.drop_count,
            drop_after: self.drop_after,
            rounds: self.rounds,
            out_dir: self.out.clone(),
            data_dir: self.data.clone(),
        };
        parse_config(self.config.as_deref(), &overrides)
    }

    fn execution(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::default()
        }
    }
}

fn execute(
    config: &RunConfig,
    federation: &Federation,
    args: &RunArgs,
) -> fedsim::Result<RunSummary> {
    let started = Instant::now();
    let quiet = args.quiet;
    let out = run_observed(config, federation, args.execution(), |r| {
        if !quiet {
            eprintln!(
                "[{}] round {:>3}  t={:>8.3}s  acc={:.4}  active={}",
                config.strategy,
                r.iteration,
                r.elapsed_time,
                r.global_accuracy,
                r.active_nodes.len()
            );
        }
    })?;
    let summary = RunSummary::new(config, &out.records)?;
    let out_dir = &config.paths.out_dir;
    write_run(&summary, out_dir)?;
    let rows: Vec<_> = summary.records.iter().map(output::RoundRow::from).collect();
    if !rows.is_empty() {
        let svg = render_chart(&[ChartSeries::from_rows(config.strategy.as_str(), &rows)])?;
        write_atomic(&out_dir.join(output::CHART_FILE), svg.as_bytes())?;
    }
    if !quiet {
        eprintln!(
            "wrote {} in {:.1}s",
            out_dir.display(),
            started.elapsed().as_secs_f64()
        );
    }
    Ok(summary)
}

fn correlation_text(summary: &RunSummary) -> String {
    match summary.correlation {
        Some(c) if c.is_degenerate() => "degenerate".into(),
        Some(c) => format!("{:.4}", c.value()),
        None => "n/a".into(),
    }
}

fn series_label(path: &Path) -> String {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("series");
    if stem == "rounds" {
        if let Some(dir) = path
            .parent()
            .and_then(|p| p.file_name())
            .and_then(|s| s.to_str())
        {
            return dir.to_string();
        }
    }
    stem.to_string()
}

fn dispatch(cli: Cli) -> fedsim::Result<()> {
    match cli.command {
        Command::Run(args) => {
            let config = args.config()?;
            let federation = Federation::load(&config)?;
            let summary = execute(&config, &federation, &args)?;
            println!(
                "strategy={} final_accuracy={:.4} weight_gain_correlation={}",
                config.strategy,
                summary.final_global_accuracy,
                correlation_text(&summary)
            );
        }
        Command::Chart { out, csv } => {
            let series = csv
                .iter()
                .map(|p| {
                    Ok(ChartSeries::from_rows(
                        series_label(p),
                        &output::read_rounds_csv(p)?,
                    ))
                })
                .collect::<fedsim::Result<Vec<_>>>()?;
            write_atomic(&out, render_chart(&series)?.as_bytes())?;
        }
        Command::Compare {
            run: args,
            strategies,
        } => {
            if strategies.is_empty() {
                return Err(Error::Usage("no strategies given".into()));
            }
            let base = args.config()?;
            let federation = Federation::load(&base)?;
            let root = base.paths.out_dir.clone();
            let mut series = Vec::new();
            let mut table =
                String::from("strategy,final_global_accuracy,weight_gain_correlation,degenerate\n");
            for strategy in strategies {
                let mut config = base.clone();
                config.strategy = strategy;
                config.paths.out_dir = root.join(strategy.as_str());
                let summary = execute(&config, &federation, &args)?;
                let (value, degenerate) = summary
                    .correlation
                    .map_or((0.0, true), |c| (c.value(), c.is_degenerate()));
                table.push_str(&format!(
                    "{strategy},{:.6},{value:.6},{degenerate}\n",
                    summary.final_global_accuracy
                ));
                println!(
                    "strategy={strategy} final_accuracy={:.4} weight_gain_correlation={}",
                    summary.final_global_accuracy,
                    correlation_text(&summary)
                );
                let rows: Vec<_> = summary.records.iter().map(output::RoundRow::from).collect();
                series.push(ChartSeries::from_rows(strategy.as_str(), &rows));
            }
            write_atomic(&root.join("comparison.csv"), table.as_bytes())?;
            if series.iter().all(|s| !s.points.is_empty()) {
                write_atomic(
                    &root.join(output::CHART_FILE),
                    render_chart(&series)?.as_bytes(),
                )?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
