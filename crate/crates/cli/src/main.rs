use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use robos_core::ecm::{validate, LifecycleState, Manifest, Registry};
use robos_core::harness::{self, write_results, ExperimentConfig, ExperimentId, TableFormat, RESULTS_ENV};
use robos_core::runtime::{AuditFilter, AuditLog};
use robos_core::stats;

#[derive(Parser)]
#[command(name = "robos", version, about = "Run experiments, manage capability packages and inspect audit logs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Experiments E1 to E8.
    #[command(subcommand)]
    Experiment(ExperimentCmd),
    /// Capability packages: validate, install, hot-swap, lifecycle.
    #[command(subcommand)]
    Ecm(EcmCmd),
    /// Policy audit logs.
    #[command(subcommand)]
    Audit(AuditCmd),
    /// Statistics utilities.
    #[command(subcommand)]
    Stats(StatsCmd),
    /// Failure-boundary sweep over a custom grid.
    Sweep {
        /// Comma-separated failure probabilities.
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
        grid: Vec<f64>,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Trials per condition and task.
    #[arg(long, default_value_t = 100)]
    n: u32,
    #[arg(long, default_value_t = harness::DEFAULT_MASTER_SEED)]
    seed: u64,
    /// Results root; defaults to $ROBOS_RESULTS, then ./results.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Table printed to standard output. Both formats are always written to disk.
    #[arg(long, value_enum, default_value_t = Format::Markdown)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Markdown,
}

impl From<Format> for TableFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => TableFormat::Csv,
            Format::Markdown => TableFormat::Markdown,
        }
    }
}

#[derive(Subcommand)]
enum ExperimentCmd {
    Run {
        /// E1..E8
        id: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// List experiment ids and titles.
    List,
}

#[derive(Args)]
struct RegistryArg {
    /// Directory holding the registry state.
    #[arg(long, default_value = "robos-registry")]
    registry: PathBuf,
}

#[derive(Subcommand)]
enum EcmCmd {
    /// Validate a package directory or manifest file against the registry.
    Validate {
        path: PathBuf,
        #[command(flatten)]
        reg: RegistryArg,
    },
    /// Validate and register a package in the installed state.
    Install {
        path: PathBuf,
        #[command(flatten)]
        reg: RegistryArg,
    },
    /// Install, configure and activate a package in one atomic update.
    Swap {
        path: PathBuf,
        #[command(flatten)]
        reg: RegistryArg,
    },
    /// Move a package to another lifecycle state.
    Transition {
        package: String,
        /// installed | configured | active | deactivated | removed
        state: String,
        #[command(flatten)]
        reg: RegistryArg,
    },
    /// List registered packages and their states.
    List {
        #[command(flatten)]
        reg: RegistryArg,
    },
}

#[derive(Subcommand)]
enum AuditCmd {
    /// Print audit records from an NDJSON log, optionally filtered.
    Show {
        file: PathBuf,
        #[arg(long)]
        blocked: bool,
        #[arg(long, conflicts_with = "blocked")]
        allowed: bool,
        #[arg(long)]
        package: Option<String>,
        #[arg(long)]
        skill: Option<String>,
    },
}

#[derive(Subcommand)]
enum StatsCmd {
    /// 95% Wilson score interval.
    Wilson { successes: u64, n: u64 },
    /// One-sided Fisher exact test, alternative: group A succeeds more often.
    Fisher { a_succ: u64, a_fail: u64, b_succ: u64, b_fail: u64 },
    /// Expected worst-case re-plan cycles over a batch of trials.
    Geotail {
        p_fail: f64,
        #[arg(long, default_value_t = 100)]
        n: u64,
        #[arg(long, default_value_t = 10_000)]
        replications: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn results_root(out: Option<PathBuf>) -> PathBuf {
    out.or_else(|| std::env::var_os(RESULTS_ENV).map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("results"))
}

fn run_and_write(cfg: ExperimentConfig, run: RunArgs) -> Result<()> {
    let report = harness::run_experiment(&cfg)?;
    print!("{}", harness::emit_table(&report, run.format.into()));
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let dir = write_results(&results_root(run.out), &report, stamp).context("writing results")?;
    eprintln!("results written to {}", dir.display());
    Ok(())
}

fn load_manifest(path: &Path) -> Result<Manifest> {
    let m = if path.is_dir() {
        Manifest::load_dir(path)
    } else {
        Manifest::from_json(&fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?)
    };
    m.with_context(|| format!("loading {}", path.display()))
}

const STATE_FILE: &str = "registry.json";

fn load_registry(dir: &Path) -> Result<Registry> {
    let file = dir.join(STATE_FILE);
    if !file.exists() {
        return Ok(Registry::new());
    }
    let text = fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", file.display()))
}

fn save_registry(dir: &Path, reg: &Registry) -> Result<()> {
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!("{STATE_FILE}.tmp"));
    fs::write(&tmp, serde_json::to_string_pretty(reg)?)?;
    fs::rename(&tmp, dir.join(STATE_FILE))?;
    Ok(())
}

fn ecm(cmd: EcmCmd) -> Result<()> {
    match cmd {
        EcmCmd::Validate { path, reg } => {
            let m = load_manifest(&path)?;
            let report = validate(&m, &load_registry(&reg.registry)?);
            if report.is_valid() {
                println!("{}: valid", m.name);
                Ok(())
            } else {
                print!("{report}");
                bail!("{} violation(s) in {}", report.violations.len(), m.name)
            }
        }
        EcmCmd::Install { path, reg } => {
            let mut r = load_registry(&reg.registry)?;
            let m = load_manifest(&path)?;
            let name = m.name.clone();
            r.install(m)?;
            save_registry(&reg.registry, &r)?;
            println!("{name}: installed");
            Ok(())
        }
        EcmCmd::Swap { path, reg } => {
            let mut r = load_registry(&reg.registry)?;
            let m = load_manifest(&path)?;
            let name = m.name.clone();
            let latency = r.hot_swap(m)?;
            save_registry(&reg.registry, &r)?;
            println!("{name}: active (registry update {} ns)", latency.as_nanos());
            Ok(())
        }
        EcmCmd::Transition { package, state, reg } => {
            let to: LifecycleState = state.parse().map_err(anyhow::Error::msg)?;
            let mut r = load_registry(&reg.registry)?;
            r.transition(&package, to)?;
            save_registry(&reg.registry, &r)?;
            println!("{package}: {to}");
            Ok(())
        }
        EcmCmd::List { reg } => {
            for (name, e) in load_registry(&reg.registry)?.entries() {
                println!("{name}\t{}\t{}", e.manifest.version, e.state);
            }
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Experiment(ExperimentCmd::List) => {
            for id in ExperimentId::ALL {
                println!("{id}\t{}", id.title());
            }
            Ok(())
        }
        Command::Experiment(ExperimentCmd::Run { id, run }) => {
            let id: ExperimentId = id.parse()?;
            let cfg = ExperimentConfig::defaults(id).with_trials(run.n).with_seed(run.seed);
            run_and_write(cfg, run)
        }
        Command::Sweep { grid, run } => {
            let mut cfg = ExperimentConfig::defaults(ExperimentId::E8).with_trials(run.n).with_seed(run.seed);
            cfg.grid = grid;
            run_and_write(cfg, run)
        }
        Command::Ecm(cmd) => ecm(cmd),
        Command::Audit(AuditCmd::Show { file, blocked, allowed, package, skill }) => {
            let f = fs::File::open(&file).with_context(|| format!("opening {}", file.display()))?;
            let log = AuditLog::read_ndjson(BufReader::new(f)).context("parsing audit log")?;
            let filter = AuditFilter { blocked_only: blocked, allowed_only: allowed, package, skill };
            for r in log.records().iter().filter(|r| filter.matches(r)) {
                println!("{}", serde_json::to_string(r)?);
            }
            Ok(())
        }
        Command::Stats(StatsCmd::Wilson { successes, n }) => {
            let i = stats::wilson(successes, n)?;
            println!("{:.4} {:.4}", i.lower, i.upper);
            Ok(())
        }
        Command::Stats(StatsCmd::Fisher { a_succ, a_fail, b_succ, b_fail }) => {
            println!("{:.4}", stats::fisher_one_sided(a_succ, a_fail, b_succ, b_fail)?);
            Ok(())
        }
        Command::Stats(StatsCmd::Geotail { p_fail, n, replications, seed }) => {
            let t = stats::geometric_tail_mc(p_fail, n, replications, seed)?;
            println!("expected_max {:.3} pct95 {}", t.expected_max, t.pct95);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
