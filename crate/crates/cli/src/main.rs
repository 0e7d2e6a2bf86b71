use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rocil::harness::{
    run_experiment, run_suite, Checkpoint, Experiment, Method, RunConfig, SuiteGrid, SuitePreset,
    SuiteReport,
};
use rocil::scenario::{
    build_scenario, validate_scenario, Category, ClassCountDistribution, Scenario, ScenarioConfig,
};
use rocil::stream::{import_image_folder, ImportOptions, SyntheticSpec};
use rocil::{Error, Result};

#[derive(Parser)]
#[command(
    name = "rocil",
    version,
    about = "Realistic online class-incremental learning simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scenario and write it as JSON.
    Generate(GenerateArgs),
    /// Check a scenario file against the realistic-stream properties.
    Validate { scenario: PathBuf },
    /// Convert a folder of class subfolders of images into a feature dataset.
    ImportDataset {
        images: PathBuf,
        out: PathBuf,
        #[arg(long, default_value_t = ImportOptions::default().side)]
        side: u32,
        #[arg(long, default_value_t = ImportOptions::default().test_per_class)]
        test_per_class: usize,
    },
    /// Write a synthetic Gaussian-cluster dataset.
    SynthDataset {
        out: PathBuf,
        /// Overrides of synthetic spec fields, e.g. `noise_std=3`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run one experiment.
    Run(RunArgs),
    /// Run a grid of experiments and print the summary table.
    Suite(SuiteArgs),
    /// Summarize the results files below a directory.
    Report {
        dir: PathBuf,
        #[arg(long, value_enum, default_value_t = ReportFormat::Markdown)]
        format: ReportFormat,
    },
}

#[derive(Args)]
struct GenerateArgs {
    /// Scenario config file (TOML or JSON). Preset flags are used otherwise.
    #[arg(long, conflicts_with_all = ["category", "classes", "tasks"])]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = CategoryArg::Short)]
    category: CategoryArg,
    #[arg(long, default_value_t = 101)]
    classes: u32,
    #[arg(long, default_value_t = 10)]
    tasks: u32,
    #[arg(long, value_enum, default_value_t = DistributionArg::Exp)]
    distribution: DistributionArg,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; stdout when absent.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Run config (TOML). Without one, a synthetic-benchmark run is built
    /// from `--method`, `--category` and `--tasks`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = MethodArg::ErRandom)]
    method: MethodArg,
    #[arg(long)]
    dmu: bool,
    #[arg(long, value_enum, default_value_t = CategoryArg::Short)]
    category: CategoryArg,
    #[arg(long, default_value_t = 5)]
    tasks: u32,
    /// Override any config key, e.g. `sgd.learning_rate=0.01`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct SuiteArgs {
    /// Grid file (TOML).
    #[arg(long, conflicts_with = "preset")]
    grid: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    /// Seeds for a preset grid.
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    /// Overrides applied to the grid file (`base.` prefixes base config keys).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Directory for per-run outputs and the summary files.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CategoryArg {
    Short,
    Moderate,
    Long,
}

impl From<CategoryArg> for Category {
    fn from(c: CategoryArg) -> Self {
        match c {
            CategoryArg::Short => Category::ShortTerm,
            CategoryArg::Moderate => Category::ModerateTerm,
            CategoryArg::Long => Category::LongTerm,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DistributionArg {
    Exp,
    Gauss,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum MethodArg {
    Finetune,
    ErRandom,
    ErRandomNcm,
    ErMir,
    ErGss,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Finetune => Method::Finetune,
            MethodArg::ErRandom => Method::ErRandom,
            MethodArg::ErRandomNcm => Method::ErRandomNcm,
            MethodArg::ErMir => Method::ErMir,
            MethodArg::ErGss => Method::ErGss,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Main,
    Distribution,
    Buffer,
}

impl From<PresetArg> for SuitePreset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Main => SuitePreset::Main,
            PresetArg::Distribution => SuitePreset::Distribution,
            PresetArg::Buffer => SuitePreset::Buffer,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Markdown,
    Distribution,
    Csv,
    Json,
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
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Generate(args) => generate(args),
        Command::Validate { scenario } => validate(&scenario),
        Command::ImportDataset {
            images,
            out,
            side,
            test_per_class,
        } => {
            let opts = ImportOptions {
                side,
                test_per_class,
            };
            let ds = import_image_folder(&images, &out, &opts)?;
            eprintln!(
                "imported {} classes of {}-d features into {}",
                ds.num_classes(),
                ds.feature_dim,
                out.display()
            );
            Ok(())
        }
        Command::SynthDataset { out, overrides } => {
            let defaults = toml::Table::try_from(SyntheticSpec::default())
                .map_err(|e| Error::Config(e.to_string()))?;
            let table = rocil::harness::parse_with_overrides(&defaults.to_string(), &overrides)?;
            let spec: SyntheticSpec = table.try_into()?;
            spec.generate().save(&out)?;
            eprintln!("wrote {} classes into {}", spec.num_classes, out.display());
            Ok(())
        }
        Command::Run(args) => run(args),
        Command::Suite(args) => suite(args),
        Command::Report { dir, format } => {
            let report = SuiteReport::from_dir(&dir)?;
            print!("{}", render(&report, format)?);
            Ok(())
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn generate(args: GenerateArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => {
            let text = read_text(path)?;
            if path.extension().is_some_and(|e| e == "json") {
                serde_json::from_str::<ScenarioConfig>(&text)?
            } else {
                toml::from_str::<ScenarioConfig>(&text)?
            }
        }
        None => {
            let mut c = ScenarioConfig::preset(
                args.category.into(),
                args.classes,
                args.tasks,
                args.seed.unwrap_or(0),
            );
            c.class_count_distribution = match args.distribution {
                DistributionArg::Exp => ClassCountDistribution::default(),
                DistributionArg::Gauss => ClassCountDistribution::gaussian_default(),
            };
            c
        }
    };
    if let Some(seed) = args.seed {
        config.rng_seed = seed;
    }
    let scenario = build_scenario(&config)?;
    let json = scenario.to_json()?;
    match &args.out {
        Some(path) => write_text(path, &json)?,
        None => println!("{json}"),
    }
    Ok(())
}

fn validate(path: &Path) -> Result<()> {
    let scenario = Scenario::from_json(&read_text(path)?)?;
    let report = validate_scenario(&scenario);
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    for v in &report.violations {
        println!("{v}");
    }
    if report.violations.is_empty() {
        println!("ok: {} tasks, no violations", scenario.tasks.len());
        Ok(())
    } else {
        Err(Error::Data(format!(
            "{} violation(s) in {}",
            report.violations.len(),
            path.display()
        )))
    }
}

fn run(args: RunArgs) -> Result<()> {
    let mut overrides = args.overrides;
    overrides.push(format!("seed={}", args.seed));
    if let Some(out) = &args.out {
        overrides.push(format!("output_dir={:?}", out.display().to_string()));
    }
    let cfg = match &args.config {
        Some(path) => RunConfig::load(path, &overrides)?,
        None => {
            let mut base = RunConfig::synthetic(
                args.method.into(),
                args.category.into(),
                args.tasks,
                args.seed,
            );
            base.dmu = args.dmu;
            RunConfig::from_toml(&base.to_toml()?, &overrides)?
        }
    };
    let outcome = match &args.resume {
        Some(path) => {
            let cp = Checkpoint::load(path)?;
            let outcome = Experiment::resume(cfg.clone(), cp)?.run_to_end()?;
            if let Some(dir) = &cfg.output_dir {
                outcome.write_to(dir)?;
            }
            outcome
        }
        None => run_experiment(&cfg)?,
    };
    let r = &outcome.results;
    println!(
        "{}{} average accuracy {:.4} over {} tasks",
        r.method.display_name(),
        if r.dmu { " + DMU" } else { "" },
        r.average_accuracy,
        r.num_tasks
    );
    print!("{}", outcome.matrix.to_csv());
    Ok(())
}

fn suite(args: SuiteArgs) -> Result<()> {
    let mut grid = match (&args.grid, args.preset) {
        (Some(path), _) => SuiteGrid::load(path, &args.overrides)?,
        (None, Some(preset)) => {
            let base = RunConfig::synthetic(Method::ErRandom, Category::ShortTerm, 5, 0);
            let overrides = args
                .overrides
                .iter()
                .map(|kv| {
                    kv.strip_prefix("base.").map(str::to_string).ok_or_else(|| {
                        Error::Config(format!(
                            "preset grids only take `base.` overrides, got `{kv}`"
                        ))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let base = RunConfig::from_toml(&base.to_toml()?, &overrides)?;
            SuiteGrid::preset(preset.into(), base, (0..args.seeds).collect())
        }
        (None, None) => return Err(Error::Config("suite needs --grid or --preset".into())),
    };
    if let Some(out) = &args.out {
        grid.output_dir = Some(out.join("runs"));
    }
    let report = run_suite(&grid);
    for f in &report.failures {
        eprintln!(
            "run failed (seed {}, config {}): {}",
            f.seed, f.config_hash, f.error
        );
    }
    let table = report.to_markdown();
    print!("{table}");
    if let Some(out) = &args.out {
        write_text(&out.join("summary.md"), &table)?;
        write_text(&out.join("summary.csv"), &report.to_csv())?;
        write_text(
            &out.join("report.json"),
            &serde_json::to_string_pretty(&report)?,
        )?;
    }
    if report.cells.is_empty() && !report.failures.is_empty() {
        return Err(Error::Data("every run of the suite failed".into()));
    }
    Ok(())
}

fn render(report: &SuiteReport, format: ReportFormat) -> Result<String> {
    Ok(match format {
        ReportFormat::Markdown => report.to_markdown(),
        ReportFormat::Distribution => report.to_distribution_markdown(),
        ReportFormat::Csv => report.to_csv(),
        ReportFormat::Json => serde_json::to_string_pretty(report)? + "\n",
    })
}
