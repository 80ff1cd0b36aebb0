//! Command-line pipeline: generate a scenario tree, solve it, verify the
//! policy and write the report tables.
//!
//! Exit codes: 0 success, 1 other errors, 2 configuration errors,
//! 3 infeasible model, 4 failed verification.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use ssdalm::alm::generate_tree;
use ssdalm::config::{ConfigError, RunConfig};
use ssdalm::decomposer::RunStatus;
use ssdalm::report::{export_all_cdf, report_tables, verify, Report, SolutionFile, VerifyOptions};
use ssdalm::tree::ScenarioTree;

const THREADS_VAR: &str = "SSDALM_THREADS";

#[derive(Parser)]
#[command(name = "ssdalm", version, about = "Scenario-tree ALM with stochastic dominance funding constraints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a scenario tree from a configuration.
    Generate {
        /// Config file, or a shipped preset: base_small, base_paper, stressed.
        #[arg(long)]
        config: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Solve a tree with the nested decomposition.
    Solve {
        #[arg(long)]
        tree: PathBuf,
        #[arg(long)]
        config: String,
        /// Defaults to solution.json next to the tree.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a stored solution against its tree.
    Verify {
        #[arg(long)]
        tree: PathBuf,
        #[arg(long)]
        solution: PathBuf,
        /// Also compare against the extensive-form LP (small trees only).
        #[arg(long)]
        oracle: bool,
    },
    /// Write report tables and CDF curves for a stored solution.
    Report {
        #[arg(long)]
        solution: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Defaults to the solution's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve one configuration per parameter value, in parallel.
    Sweep {
        #[arg(long)]
        config: String,
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<f64>,
        #[arg(long, default_value = "sweep")]
        out: PathBuf,
    },
    /// generate, solve, verify and report in one go.
    Run {
        #[arg(long)]
        config: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        oracle: bool,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Infeasible(String),
    Verification(String),
    Other(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Other(_) => 1,
            Failure::Config(_) => 2,
            Failure::Infeasible(_) => 3,
            Failure::Verification(_) => 4,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Infeasible(m) => write!(f, "infeasible: {m}"),
            Failure::Verification(m) => write!(f, "verification failed: {m}"),
            Failure::Other(e) => write!(f, "{e:#}"),
        }
    }
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Other(e.into())
    }
}

fn config_failure(e: ConfigError) -> Failure {
    Failure::Config(e.to_string())
}

type Result<T> = std::result::Result<T, Failure>;

/// A config path, or a preset name when no such file exists.
fn load_config(spec: &str) -> Result<RunConfig> {
    let path = Path::new(spec);
    if path.exists() {
        let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{spec}: {e}")))?;
        RunConfig::from_toml(&text).map_err(config_failure)
    } else {
        RunConfig::preset(spec).ok_or_else(|| Failure::Config(format!("{spec} is neither a file nor a preset")))
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Failure::Other(anyhow::anyhow!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).map_err(|e| Failure::Other(anyhow::anyhow!("{}: {e}", path.display())))
}

fn load_tree(path: &Path) -> Result<ScenarioTree> {
    ScenarioTree::from_text(&read(path)?).map_err(|e| Failure::Other(anyhow::anyhow!("{}: {e}", path.display())))
}

fn generate(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    let gen = generate_tree(&cfg.generator_input())?;
    let tree_path = out.join("tree.txt");
    write(&tree_path, &gen.tree.to_text())?;
    write(&out.join("config.toml"), &cfg.to_toml())?;
    write(&out.join("diagnostics.json"), &serde_json::to_string_pretty(&gen.diagnostics)?)?;
    eprintln!(
        "tree: {} nodes, {} return floors, {} growth floors",
        gen.tree.topology.num_nodes(),
        gen.diagnostics.return_floors,
        gen.diagnostics.growth_floors
    );
    Ok(tree_path)
}

fn solve(tree: &ScenarioTree, cfg: &RunConfig, out: &Path) -> Result<SolutionFile> {
    let file = SolutionFile::solve(tree, cfg)?;
    write(out, &file.to_json())?;
    let res = &file.result;
    for rec in &res.log {
        eprintln!(
            "iteration {} solved {} cuts o/f/r/e {}/{}/{}/{} root {}",
            rec.iteration,
            rec.nodes_solved,
            rec.cuts.objective,
            rec.cuts.feasibility,
            rec.cuts.risk,
            rec.cuts.event,
            rec.root_bound.map_or("infeasible".to_string(), |b| b.to_string())
        );
    }
    match res.status {
        RunStatus::Infeasible => Err(Failure::Infeasible(format!("root problem infeasible, see {}", out.display()))),
        RunStatus::IterationLimit => Err(Failure::Other(anyhow::anyhow!("iteration limit reached"))),
        RunStatus::Unbounded => Err(Failure::Other(anyhow::anyhow!(
            "values reached the -M or w floor; the model is unbounded or the floors are too tight"
        ))),
        RunStatus::Optimal => {
            println!("objective {} K0 {}", res.objective.unwrap_or(f64::NAN), res.k0.unwrap_or(f64::NAN));
            Ok(file)
        }
    }
}

fn run_verify(file: &SolutionFile, tree: &ScenarioTree, oracle: bool, out: Option<&Path>) -> Result<()> {
    let opts = VerifyOptions {
        oracle,
        ..Default::default()
    };
    let v = verify(file, tree, &opts)?;
    let json = v.to_json();
    match out {
        Some(p) => write(p, &json)?,
        None => println!("{json}"),
    }
    let earlier_bad = v.earlier.iter().filter(|c| !c.dominates).count();
    eprintln!(
        "stage T-1 dominance at {}/{} nodes; earlier nodes {}/{}; max row violation {:e}",
        v.last_stage.iter().filter(|c| c.dominates).count(),
        v.last_stage.len(),
        v.earlier.len() - earlier_bad,
        v.earlier.len(),
        v.max_row_violation
    );
    if v.passed() {
        Ok(())
    } else {
        Err(Failure::Verification(v.failures.join("; ")))
    }
}

fn write_report(file: &SolutionFile, tree: &ScenarioTree, format: Format, dir: &Path) -> Result<Report> {
    let rep = report_tables(&file.result, tree, &file.config)?;
    match format {
        Format::Json => write(&dir.join("report.json"), &rep.to_json())?,
        Format::Csv => {
            write(&dir.join("summary.csv"), &rep.summary_csv())?;
            write(&dir.join("stages.csv"), &rep.stages_csv())?;
            if rep.mismatch.is_some() {
                write(&dir.join("mismatch.csv"), &rep.mismatch_csv())?;
            }
        }
    }
    write(&dir.join("cdf.csv"), &export_all_cdf(file, tree)?)?;
    Ok(rep)
}

fn sweep(base: &RunConfig, param: &str, values: &[f64], out: &Path) -> Result<()> {
    let mut cfgs = Vec::with_capacity(values.len());
    for &v in values {
        let mut cfg = base.clone();
        cfg.set_param(param, v).map_err(config_failure)?;
        cfgs.push((v, cfg));
    }
    let rows: Vec<Result<String>> = cfgs
        .par_iter()
        .map(|(v, cfg)| {
            let dir = out.join(format!("{param}_{v}"));
            let tree_path = generate(cfg, &dir)?;
            let tree = load_tree(&tree_path)?;
            let file = SolutionFile::solve(&tree, cfg)?;
            write(&dir.join("solution.json"), &file.to_json())?;
            let res = &file.result;
            if res.status != RunStatus::Optimal {
                return Ok(format!("{v},{:?},,,,,,{}", res.status, res.iterations));
            }
            let rep = write_report(&file, &tree, Format::Csv, &dir)?;
            let opt = |x: Option<f64>| x.map_or_else(String::new, |x| x.to_string());
            Ok(format!(
                "{v},{:?},{},{},{},{},{},{}",
                rep.status,
                opt(rep.k0),
                opt(rep.objective),
                opt(rep.fr0),
                opt(rep.fr_terminal),
                rep.active_ssd_pct,
                rep.iterations
            ))
        })
        .collect();
    let mut table = format!("{param},status,k0,objective,fr0,fr_terminal,active_ssd_pct,iterations\n");
    for row in rows {
        table.push_str(&row?);
        table.push('\n');
    }
    write(&out.join("sweep.csv"), &table)?;
    print!("{table}");
    Ok(())
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate { config, out, seed } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.tree.seed = s;
            }
            let path = generate(&cfg, &out)?;
            println!("{}", path.display());
            Ok(())
        }
        Command::Solve { tree, config, out } => {
            let cfg = load_config(&config)?;
            let t = load_tree(&tree)?;
            let out = out.unwrap_or_else(|| tree.with_file_name("solution.json"));
            solve(&t, &cfg, &out).map(|_| ())
        }
        Command::Verify { tree, solution, oracle } => {
            let t = load_tree(&tree)?;
            let file = SolutionFile::from_json(&read(&solution)?)?;
            run_verify(&file, &t, oracle, None)
        }
        Command::Report { solution, format, out } => {
            let file = SolutionFile::from_json(&read(&solution)?)?;
            let tree = file.tree()?;
            let dir = out.unwrap_or_else(|| solution.parent().map(Path::to_path_buf).unwrap_or_default());
            let rep = write_report(&file, &tree, format, &dir)?;
            match format {
                Format::Json => println!("{}", rep.to_json()),
                Format::Csv => print!("{}{}", rep.summary_csv(), rep.stages_csv()),
            }
            Ok(())
        }
        Command::Sweep {
            config,
            param,
            values,
            out,
        } => {
            let cfg = load_config(&config)?;
            sweep(&cfg, &param, &values, &out)
        }
        Command::Run { config, out, oracle } => {
            let cfg = load_config(&config)?;
            let tree_path = generate(&cfg, &out)?;
            let tree = load_tree(&tree_path)?;
            let file = solve(&tree, &cfg, &out.join("solution.json"))?;
            let verified = run_verify(&file, &tree, oracle, Some(&out.join("verification.json")));
            let rep = write_report(&file, &tree, Format::Csv, &out)?;
            write(&out.join("report.json"), &rep.to_json())?;
            print!("{}", rep.summary_csv());
            verified
        }
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_VAR) {
        let n: usize = v
            .parse()
            .map_err(|_| Failure::Config(format!("{THREADS_VAR} must be a positive integer, got {v}")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match configure_threads().and_then(|_| execute(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
