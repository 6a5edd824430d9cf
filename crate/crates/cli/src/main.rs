use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use gendich::fixtures::{builtin_fixture, FIXTURE_NAMES};
use gendich::scenario::{
    output_dir, prepare, run_scenario, DetectKnobs, Expectations, Header, PerturbKnobs, ScenarioConfig, Stage,
};
use gendich::Error;

const DEFAULT_ROOT: &str = "gendich-out";

/// Rate-function dichotomies of evolution families: detection, admissibility
/// probes, adapted norms and robustness experiments.
#[derive(Parser)]
#[command(name = "gendich", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file. Exit 0 when every expectation holds, 1 when one
    /// fails, 2 on configuration errors.
    Run {
        config: PathBuf,
        /// Output root (default: $GENDICH_OUTPUT_ROOT, else ./gendich-out).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the built-in fixtures and their annotations.
    Fixtures {
        #[arg(long)]
        json: bool,
    },
    /// Detect and verify a dichotomy on a fixture.
    Detect {
        fixture: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Also fit a growth rate in the initial time.
        #[arg(long)]
        nonuniform: bool,
    },
    /// Probe an admissibility pair on a fixture with the bundled inputs.
    Probe {
        fixture: String,
        #[arg(long, value_enum)]
        pair: PairArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Perturb a fixture and compare certificates before and after.
    Perturb {
        fixture: String,
        /// zero, envelope or constant.
        #[arg(long, default_value = "envelope")]
        kind: String,
        /// identity or upper.
        #[arg(long, default_value = "identity")]
        pattern: String,
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value_t = 1.0)]
        a: f64,
        #[arg(long, default_value_t = 0.0)]
        epsilon: f64,
        /// Extra δ values for a sweep.
        #[arg(long, value_delimiter = ',')]
        deltas: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the summary of a finished scenario directory; the exit code
    /// repeats its verdict.
    Report { dir: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum PairArg {
    Y1,
    Yinf,
}

fn header(name: String, fixture: &str, stages: Vec<Stage>, seed: u64) -> Header {
    Header { name, fixture: Some(fixture.to_string()), stages, output: None, seed }
}

fn bare(header: Header) -> ScenarioConfig {
    ScenarioConfig {
        scenario: header,
        family: None,
        rate: None,
        norms: None,
        z: None,
        validate: Default::default(),
        detect: Default::default(),
        adapt: Default::default(),
        probe: Default::default(),
        perturb: None,
        expect: Expectations::default(),
    }
}

/// Exit code 2: nothing was computed.
fn preflight(e: Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(2)
}

fn execute(config: ScenarioConfig, base: &Path, out: Option<PathBuf>) -> ExitCode {
    let dir = match &out {
        Some(root) => root.join(config.scenario.output.as_deref().unwrap_or(&config.scenario.name)),
        None => output_dir(&config, Path::new(DEFAULT_ROOT)),
    };
    let prep = match prepare(config, base) {
        Ok(p) => p,
        Err(e) => return preflight(e),
    };
    match run_scenario(&prep, &dir) {
        Ok(outcome) => {
            for l in &outcome.lines {
                let status = match l.pass {
                    Some(true) => " [pass]",
                    Some(false) => " [fail]",
                    None => "",
                };
                println!("{} = {}{status}", l.key, l.value);
            }
            for a in &outcome.assertions {
                println!(
                    "expect.{}: {} (expected {}, observed {})",
                    a.name,
                    if a.pass { "PASS" } else { "FAIL" },
                    a.expected,
                    a.observed
                );
            }
            println!("reports: {}", dir.display());
            if outcome.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn list_fixtures(json: bool) -> ExitCode {
    let mut all = Vec::new();
    for name in FIXTURE_NAMES {
        let fx = builtin_fixture(name).expect("registered fixture");
        if json {
            all.push(serde_json::json!({
                "name": fx.name,
                "description": fx.description,
                "rate": fx.rate.name(),
                "discontinuous": fx.family.is_discontinuous(),
                "annotations": fx.annotations,
            }));
        } else {
            let flag = if fx.family.is_discontinuous() { " [discontinuous]" } else { "" };
            println!("{:<18} {}{flag}", fx.name, fx.description);
        }
    }
    if json {
        println!("{}", serde_json::to_string_pretty(&all).expect("serializable"));
    }
    ExitCode::SUCCESS
}

fn report(dir: &Path) -> ExitCode {
    let path = dir.join("summary.txt");
    match std::fs::read_to_string(&path) {
        Ok(text) => {
            print!("{text}");
            if text.lines().any(|l| l == "result: PASS") {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", path.display());
            ExitCode::from(2)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let here = Path::new(".");
    match cli.command {
        Command::Run { config, out } => {
            let cfg = match ScenarioConfig::load(&config) {
                Ok(c) => c,
                Err(e) => return preflight(e),
            };
            let base = config.parent().unwrap_or(here).to_path_buf();
            execute(cfg, &base, out)
        }
        Command::Fixtures { json } => list_fixtures(json),
        Command::Detect { fixture, out, seed, nonuniform } => {
            let mut cfg = bare(header(format!("detect_{fixture}"), &fixture, vec![Stage::Detect], seed));
            if nonuniform {
                cfg.detect = DetectKnobs { nonuniform: Some(true), ..Default::default() };
            }
            execute(cfg, here, out)
        }
        Command::Probe { fixture, pair, out } => {
            let stage = match pair {
                PairArg::Y1 => Stage::ProbeY1,
                PairArg::Yinf => Stage::ProbeYinf,
            };
            let cfg = bare(header(format!("{}_{fixture}", stage.name()), &fixture, vec![stage], 1));
            execute(cfg, here, out)
        }
        Command::Perturb { fixture, kind, pattern, delta, a, epsilon, deltas, out } => {
            let mut cfg = bare(header(format!("perturb_{fixture}"), &fixture, vec![Stage::Perturb], 1));
            cfg.perturb = Some(PerturbKnobs {
                kind,
                pattern,
                path: None,
                delta,
                a,
                epsilon,
                deltas,
                picard_tol: None,
                max_iters: None,
                rho_spacing: None,
            });
            execute(cfg, here, out)
        }
        Command::Report { dir } => report(&dir),
    }
}
