use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use parchain::crypto::Digest;
use parchain::fluid::{default_k, detect_communities};
use parchain::gossip::{
    analytic_fraction, characteristic_time, mean_curve, simulate_gossip, time_to_fraction,
    GossipMode, GossipParams, Mixing, DEFAULT_HOP_CAP,
};
use parchain::graphnet::Graph;
use parchain::rng::stream;
use parchain::scenarios::{self, run_scenario, ScenarioConfig, ScenarioError};

const DEFAULT_SEED: u64 = 1;
const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "parchain", version, about = "Parallel-chains ledger simulator")]
struct Cli {
    /// Print more detail to stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario file (or the name of a built-in scenario).
    Run {
        #[arg(long)]
        scenario: String,
        /// Overrides the seed in the scenario file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = "PARCHAIN_OUT", default_value = "parchain-out")]
        out: PathBuf,
    },
    /// Compare simulated gossip coverage with the logistic model.
    GossipValidate {
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0.5)]
        beta: f64,
        /// One or more fan-out values, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "3")]
        fanout: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        w0: usize,
        #[arg(long, default_value_t = 100)]
        runs: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "continuous")]
        mode: ModeArg,
        #[arg(long, env = "PARCHAIN_OUT", default_value = "parchain-out")]
        out: PathBuf,
    },
    /// Detect fluid communities in an edge-list graph.
    Communities {
        #[arg(long)]
        graph: PathBuf,
        /// Defaults to ceil(sqrt(n)).
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1000)]
        max_supersteps: usize,
        #[arg(long, env = "PARCHAIN_OUT", default_value = "parchain-out")]
        out: PathBuf,
    },
    /// List the built-in scenarios.
    List,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ModeArg {
    Continuous,
    Synchronous,
}

enum Failure {
    Usage(String),
    Assertion,
    Io(std::io::Error),
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e)
    }
}

fn header(seed: u64, config_hash: &Digest) -> String {
    format!(
        "# parchain {VERSION} seed={seed} config_hash={}",
        config_hash.to_hex()
    )
}

fn seed_or_default(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        eprintln!("no --seed given, using {DEFAULT_SEED}");
        DEFAULT_SEED
    })
}

fn load_scenario(arg: &str) -> Result<ScenarioConfig, Failure> {
    let path = Path::new(arg);
    if path.exists() {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("cannot read {arg}: {e}")))?;
        return ScenarioConfig::from_toml(&text).map_err(|e| Failure::Usage(e.to_string()));
    }
    match scenarios::builtin(arg) {
        Ok(cfg) => Ok(cfg),
        Err(ScenarioError::Unknown(_)) => Err(Failure::Usage(format!(
            "no scenario file or built-in scenario named {arg:?}"
        ))),
        Err(e) => Err(Failure::Usage(e.to_string())),
    }
}

fn cmd_run(scenario: &str, seed: Option<u64>, out: &Path, verbose: u8) -> Result<(), Failure> {
    let mut cfg = load_scenario(scenario)?;
    match seed {
        Some(s) => cfg.seed = s,
        None => eprintln!("no --seed given, using the scenario seed {}", cfg.seed),
    }
    let report = run_scenario(&cfg).map_err(|e| Failure::Usage(e.to_string()))?;
    let files = report.write_to(out)?;
    println!("{}", report.header_line());
    println!("scenario {}", report.name);
    for (k, v) in &report.metrics {
        if verbose > 0 || report.assertions.iter().any(|a| &a.metric == k) {
            println!("  {k} = {v}");
        }
    }
    if let Some(x) = report.metric("invalid_accepted") {
        println!("{x} invalid accepted");
    }
    for f in &files {
        println!("wrote {}", f.display());
    }
    if report.passed() {
        println!("PASS ({} assertions)", report.assertions.len());
        Ok(())
    } else {
        for a in report.failures() {
            println!("FAIL {}", a.diff());
        }
        Err(Failure::Assertion)
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_gossip(
    n: usize,
    beta: f64,
    fanouts: &[usize],
    w0: usize,
    runs: usize,
    seed: Option<u64>,
    mode: ModeArg,
    out: &Path,
) -> Result<(), Failure> {
    if runs == 0 || fanouts.is_empty() {
        return Err(Failure::Usage(
            "need at least one run and one fanout".into(),
        ));
    }
    let seed = seed_or_default(seed);
    let mode = match mode {
        ModeArg::Continuous => GossipMode::Continuous,
        ModeArg::Synchronous => GossipMode::Synchronous,
    };
    let spec = format!("n={n} beta={beta} fanout={fanouts:?} w0={w0} runs={runs} mode={mode:?}");
    let mut csv = format!(
        "{}\n# {spec}\nfanout,t,w_empirical,w_analytic\n",
        header(seed, &Digest::of(spec.as_bytes()))
    );
    let target = 1.0 - (-1.0f64).exp();
    for &f in fanouts {
        let params = GossipParams {
            n,
            w0_count: w0,
            fanout: f,
            beta,
        };
        params
            .validate()
            .map_err(|e| Failure::Usage(e.to_string()))?;
        let curves = (0..runs)
            .map(|r| {
                let mut rng = stream(seed, "gossip-validate", (f as u64) << 32 | r as u64);
                simulate_gossip(
                    &params,
                    mode,
                    Mixing::Homogeneous,
                    None,
                    &mut rng,
                    DEFAULT_HOP_CAP,
                )
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| Failure::Usage(e.to_string()))?;
        let mean = mean_curve(&curves);
        for &(t, w) in &mean.samples {
            let _ = writeln!(csv, "{f},{t},{w:.6},{:.6}", analytic_fraction(t, &params));
        }
        let tau = characteristic_time(&params).map_err(|e| Failure::Usage(e.to_string()))?;
        match time_to_fraction(&mean, target) {
            Some(t) => {
                println!("fanout {f}: tau = {tau:.3}, time to {target:.3} coverage = {t:.3}")
            }
            None => println!("fanout {f}: tau = {tau:.3}, never reached {target:.3} coverage"),
        }
    }
    std::fs::create_dir_all(out)?;
    let path = out.join("gossip.csv");
    std::fs::write(&path, csv)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_communities(
    graph: &Path,
    k: Option<usize>,
    seed: Option<u64>,
    max_supersteps: usize,
    out: &Path,
) -> Result<(), Failure> {
    let text = std::fs::read_to_string(graph)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", graph.display())))?;
    let g = Graph::from_edge_list(&text).map_err(|e| Failure::Usage(e.to_string()))?;
    let seed = seed_or_default(seed);
    let k = k.unwrap_or_else(|| default_k(g.node_count()));
    let mut rng = stream(seed, "communities", 0);
    let a = detect_communities(&g, k, &mut rng, max_supersteps)
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let spec = format!("k={k} max_supersteps={max_supersteps}\n{text}");
    let body = format!(
        "{}\n{}",
        header(seed, &Digest::of(spec.as_bytes())),
        a.to_text()
    );
    std::fs::create_dir_all(out)?;
    let path = out.join("communities.txt");
    std::fs::write(&path, body)?;
    println!("k={k} sizes={:?} converged={}", a.sizes(), a.converged);
    println!("wrote {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Run {
            scenario,
            seed,
            out,
        } => cmd_run(scenario, *seed, out, cli.verbose),
        Cmd::GossipValidate {
            n,
            beta,
            fanout,
            w0,
            runs,
            seed,
            mode,
            out,
        } => cmd_gossip(*n, *beta, fanout, *w0, *runs, *seed, *mode, out),
        Cmd::Communities {
            graph,
            k,
            seed,
            max_supersteps,
            out,
        } => cmd_communities(graph, *k, *seed, *max_supersteps, out),
        Cmd::List => {
            for name in scenarios::builtin_names() {
                println!("{name}");
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Assertion) => ExitCode::from(1),
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Io(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
