use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ideolens::pipeline::{mock, Config, Pipeline, StageReport};
use ideolens::{Error, Language};

#[derive(Parser)]
#[command(name = "ideolens", version, about = "Elicit, validate and analyse model assessments of political figures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Answer every model and judge with the built-in simulator instead of the network.
    #[arg(long)]
    mock: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Select topics from Pantheon and localized summaries.
    SelectTopics(Common),
    /// Assign taxonomy tags to every topic with the tagging judge.
    Tag(Common),
    /// Run the two-stage elicitation campaign.
    Elicit {
        #[command(flatten)]
        common: Common,
        /// Comma-separated model ids; overrides the config.
        #[arg(long, value_delimiter = ',')]
        models: Option<Vec<String>>,
        /// Comma-separated languages (names or codes); overrides the config.
        #[arg(long, value_delimiter = ',')]
        languages: Option<Vec<String>>,
    },
    /// Judge stage-1 descriptions and extract stage-2 labels.
    Validate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        judge_desc: Option<String>,
        #[arg(long)]
        judge_label: Option<String>,
    },
    /// Apply the three filters and write the score matrix.
    Filter(Common),
    /// Tag aggregation, biplot, radar and forest tables.
    Analyze(Common),
    /// Render SVG figures from the analysis tables.
    Report(Common),
    /// Every stage in order.
    RunAll(Common),
    /// Write a small self-contained corpus and config for `--mock` runs.
    MockFixture {
        dir: PathBuf,
    },
}

fn print(reports: &[StageReport]) {
    for r in reports {
        println!("{}", serde_json::json!({ "stage": r.stage, "counters": r.counters }));
    }
}

fn pipeline(common: &Common, edit: impl Fn(&mut Config) -> Result<(), Error>) -> Result<Pipeline, Error> {
    let (mut raw, mut config) = Config::load(&common.config)?;
    edit(&mut raw)?;
    edit(&mut config)?;
    Pipeline::new(raw, config, common.mock)
}

fn run(command: Command) -> Result<(), Error> {
    let no_edit = |_: &mut Config| Ok(());
    match command {
        Command::MockFixture { dir } => {
            let cfg = mock::write_mock_fixture(&dir)?;
            println!("{}", cfg.display());
        }
        Command::SelectTopics(c) => print(&[pipeline(&c, no_edit)?.select_topics()?]),
        Command::Tag(c) => print(&[pipeline(&c, no_edit)?.tag()?]),
        Command::Elicit { common, models, languages } => {
            let langs: Option<BTreeSet<Language>> = languages
                .map(|ls| {
                    ls.iter()
                        .map(|l| l.parse::<Language>().map_err(|e| Error::Config(e.to_string())))
                        .collect()
                })
                .transpose()?;
            let p = pipeline(&common, |c| {
                if let Some(m) = &models {
                    c.models = Some(m.iter().cloned().collect());
                }
                if let Some(l) = &langs {
                    c.languages = Some(l.clone());
                }
                Ok(())
            })?;
            print(&[p.elicit()?]);
        }
        Command::Validate { common, judge_desc, judge_label } => {
            let p = pipeline(&common, |c| {
                if let Some(j) = &judge_desc {
                    c.judges.description = j.clone();
                }
                if let Some(j) = &judge_label {
                    c.judges.label = j.clone();
                }
                Ok(())
            })?;
            print(&[p.validate()?]);
        }
        Command::Filter(c) => print(&[pipeline(&c, no_edit)?.filter()?]),
        Command::Analyze(c) => print(&[pipeline(&c, no_edit)?.analyze()?]),
        Command::Report(c) => print(&[pipeline(&c, no_edit)?.report()?]),
        Command::RunAll(c) => print(&pipeline(&c, no_edit)?.run_all()?),
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("IDEOLENS_LOG").unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            // a config that cannot be read is a usage problem
            let missing_config = matches!(&e, Error::Config(m) if m.starts_with("config file") && m.ends_with("not found"));
            ExitCode::from(if missing_config { 2 } else { 1 })
        }
    }
}
