//! Command-line front end: batch simulations, reports over exported logs,
//! test-space export and the experiment server.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fairprobe::engine::{EngineConfig, HypothesisSet, LikelihoodTable, SelectionPolicy};
use fairprobe::report::{
    classification_histogram, convergence_report, demographic_breakdown, simulation_records, summary_table,
    survey_tally, survey_tally_report, BinEdges, Report,
};
use fairprobe::study::{read_ndjson, write_ndjson, DemographicAttribute, SessionRecord, SurveyResponse};
use fairprobe::test_space::ErrorCountRange;
use fairprobe::{enumerate_tests, run_simulation, FairnessNotion, ResponderKind, SimulationSpec, TestSpaceConfig};
use fairprobe_service::ServiceConfig;
use serde::Deserialize;

#[derive(Debug, Parser)]
#[command(name = "fairprobe", version, about = "Adaptive elicitation of perceived group fairness")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML configuration (analysis settings, or server settings for `serve`).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed for simulations.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Hypothesis set.
    #[arg(long, global = true, value_enum)]
    pub hypotheses: Option<HypothesisChoice>,
    /// Output path. Reports are written as CSV plus a `.json` metadata
    /// sidecar; without this flag the CSV goes to stdout.
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
    /// Posterior level above which a responder counts as matched.
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HypothesisChoice {
    Default,
    Appendix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SelectionChoice {
    Adaptive,
    Random,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run seeded simulated participants and report convergence curves.
    Simulate(SimulateArgs),
    /// Count records by most probable notion and likelihood bin.
    Histogram(HistogramArgs),
    /// Percentage of records matched to each notion.
    Summary(InputArgs),
    /// Matched percentages per value of a demographic attribute.
    Demographics(DemographicsArgs),
    /// Count survey choices per scenario and stakes level.
    SurveyTally(InputArgs),
    /// Write the enumerated test space in its line format.
    EnumerateTests(EnumerateArgs),
    /// Run the HTTP experiment server.
    Serve,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Followed notion (DP, EP, FDP, FNP, FPP, FOP) or `random`.
    #[arg(long)]
    pub responder: Option<String>,
    /// Softmax temperature of the simulated responder.
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub max_tests: Option<usize>,
    #[arg(long, value_enum)]
    pub selection: Option<SelectionChoice>,
    /// Also write one session record per run as line-delimited JSON.
    #[arg(long)]
    pub records: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Line-delimited JSON input; repeat to combine several files.
    #[arg(long, short, required = true)]
    pub input: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HistogramArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Likelihood bin edges, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub bins: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct DemographicsArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// age_bracket, gender, race, education or political_leaning.
    #[arg(long)]
    pub attribute: String,
}

#[derive(Debug, Args)]
pub struct EnumerateArgs {
    #[arg(long)]
    pub min_errors: Option<usize>,
    #[arg(long)]
    pub max_errors: Option<usize>,
}

/// Analysis settings file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub engine: EngineConfig,
    pub test_space: Option<TestSpaceConfig>,
    pub simulation: SimulationSection,
    pub report: ReportSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub responder: ResponderKind,
    pub num_runs: usize,
    pub max_tests_per_run: Option<usize>,
    pub master_seed: u64,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            responder: ResponderKind::NotionFollower {
                notion: FairnessNotion::DP,
                temperature: 1.0,
            },
            num_runs: 100,
            max_tests_per_run: None,
            master_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    pub bins: Option<Vec<f64>>,
    pub threshold: Option<f64>,
}

impl AnalysisConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(AnalysisConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
            }
        }
    }
}

fn hypothesis_set(choice: HypothesisChoice) -> HypothesisSet {
    match choice {
        HypothesisChoice::Default => HypothesisSet::default_set(),
        HypothesisChoice::Appendix => HypothesisSet::appendix_set(),
    }
}

fn emit(report: &Report, output: Option<&Path>) -> Result<()> {
    match output {
        Some(path) => {
            report.save(path).with_context(|| format!("writing {}", path.display()))?;
            eprintln!("wrote {} and {}", path.display(), path.with_extension("json").display());
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(report.to_csv_string()?.as_bytes())?;
        }
    }
    Ok(())
}

fn read_all<T: serde::de::DeserializeOwned>(paths: &[PathBuf]) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for p in paths {
        let file = File::open(p).with_context(|| format!("opening {}", p.display()))?;
        out.extend(read_ndjson(BufReader::new(file)).with_context(|| format!("reading {}", p.display()))?);
    }
    Ok(out)
}

/// Builds the simulation spec from config plus command-line overrides.
pub fn simulation_spec(global: &GlobalArgs, args: &SimulateArgs, config: &AnalysisConfig) -> Result<SimulationSpec> {
    let mut engine = config.engine.clone();
    if let Some(h) = global.hypotheses {
        engine.hypotheses = hypothesis_set(h);
    }
    if let Some(t) = global.threshold.or(config.report.threshold) {
        engine.classification_threshold = t;
    }
    let master_seed = global.seed.unwrap_or(config.simulation.master_seed);
    match args.selection {
        Some(SelectionChoice::Adaptive) => engine.selection = SelectionPolicy::Adaptive,
        Some(SelectionChoice::Random) => engine.selection = SelectionPolicy::Random { seed: 0 },
        None => {}
    }
    let mut responder = config.simulation.responder;
    if let Some(r) = &args.responder {
        responder = if r.eq_ignore_ascii_case("random") {
            ResponderKind::Random
        } else {
            ResponderKind::NotionFollower {
                notion: r.parse()?,
                temperature: engine.response.temperature,
            }
        };
    }
    if let (Some(t), ResponderKind::NotionFollower { temperature, .. }) = (args.temperature, &mut responder) {
        *temperature = t;
    }
    let spec = SimulationSpec {
        responder,
        num_runs: args.runs.unwrap_or(config.simulation.num_runs),
        master_seed,
        max_tests_per_run: args
            .max_tests
            .or(config.simulation.max_tests_per_run)
            .unwrap_or(engine.max_tests),
        engine,
    };
    spec.validate()?;
    Ok(spec)
}

fn threshold(global: &GlobalArgs, config: &AnalysisConfig) -> f64 {
    global
        .threshold
        .or(config.report.threshold)
        .unwrap_or(config.engine.classification_threshold)
}

pub fn run(cli: Cli) -> Result<()> {
    let global = &cli.global;
    if let Command::Serve = cli.command {
        let config = ServiceConfig::load(global.config.as_deref())?;
        let runtime = tokio::runtime::Runtime::new()?;
        return Ok(runtime.block_on(fairprobe_service::serve(config))?);
    }
    let config = AnalysisConfig::load(global.config.as_deref())?;
    let output = global.output.as_deref();
    match &cli.command {
        Command::Simulate(args) => {
            let spec = simulation_spec(global, args, &config)?;
            let space = Arc::new(enumerate_tests(&config.test_space.clone().unwrap_or_default())?);
            let table = Arc::new(LikelihoodTable::build(&space, &spec.engine.hypotheses, &spec.engine.response)?);
            let sim = run_simulation(space, table, &spec)?;
            if let Some(path) = &args.records {
                let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
                write_ndjson(&simulation_records(&sim), std::io::BufWriter::new(file))?;
            }
            emit(&convergence_report(&sim), output)
        }
        Command::Histogram(args) => {
            let records: Vec<SessionRecord> = read_all(&args.input.input)?;
            let edges = match args.bins.clone().or(config.report.bins.clone()) {
                Some(e) => BinEdges::new(e)?,
                None => BinEdges::default(),
            };
            emit(&classification_histogram(&records, &edges).to_report(), output)
        }
        Command::Summary(args) => {
            let records: Vec<SessionRecord> = read_all(&args.input)?;
            emit(&summary_table(&records, threshold(global, &config)).to_report(), output)
        }
        Command::Demographics(args) => {
            let records: Vec<SessionRecord> = read_all(&args.input.input)?;
            let attribute: DemographicAttribute = args.attribute.parse()?;
            let breakdown = demographic_breakdown(&records, attribute, threshold(global, &config))?;
            emit(&breakdown.to_report(), output)
        }
        Command::SurveyTally(args) => {
            let responses: Vec<SurveyResponse> = read_all(&args.input)?;
            emit(&survey_tally_report(&survey_tally(&responses)), output)
        }
        Command::EnumerateTests(args) => {
            let mut space_config = config.test_space.clone().unwrap_or_default();
            let range = &mut space_config.error_count_range;
            *range = ErrorCountRange {
                min: args.min_errors.unwrap_or(range.min),
                max: args.max_errors.unwrap_or(range.max),
            };
            let space = enumerate_tests(&space_config)?;
            match output {
                Some(path) => {
                    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
                    space.export(std::io::BufWriter::new(file))?;
                    eprintln!("wrote {} tests to {}", space.len(), path.display());
                }
                None => space.export(std::io::stdout().lock())?,
            }
            Ok(())
        }
        Command::Serve => unreachable!("handled above"),
    }
}
