//! `cran`: calibrate, run and compare clustering campaigns.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use cran_core::clustering::ClusterPolicy;
use cran_core::reporting::ComparisonReport;
use cran_core::simulator::{self, CampaignConfig, CampaignResult, Scheme};
use cran_core::topology::NetworkConfig;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(name = "cran", version, about = "Backhaul-constrained BS clustering campaigns")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run an unconstrained fixed-cluster baseline and print its tier-mean
    /// backhaul `(C_macro, C_pico)` in Mbps.
    Calibrate {
        #[command(flatten)]
        net: NetArgs,
        /// Baseline clustering: `strongest_s` or `disjoint`.
        #[arg(long, default_value = "strongest_s")]
        scheme: String,
        #[arg(long, default_value_t = 2)]
        s: usize,
        #[arg(long, default_value_t = 50)]
        slots: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "cran-calibration")]
        out: PathBuf,
    },
    /// Run a proportional-fair campaign for one scheme.
    Run(RunArgs),
    /// Re-run the campaign recorded in a manifest.
    Rerun {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare result directories against a baseline directory.
    Report {
        #[arg(required = true)]
        results: Vec<PathBuf>,
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long, default_value_t = 40)]
        bins: usize,
        #[arg(long, default_value = "cran-report")]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct NetArgs {
    /// Network config TOML (keys as in `NetworkConfig`, units in the names).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in network: full, desk or toy.
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    net: NetArgs,
    /// dynamic | static:max_loading | static:biased | static:strongest_s |
    /// baseline:strongest_s | baseline:disjoint (`strongest_2` etc. also accepted)
    #[arg(long)]
    scheme: String,
    /// Backhaul budgets `C_macro,C_pico` in Mbps.
    #[arg(long, value_parser = parse_pair::<f64>)]
    backhaul: Option<(f64, f64)>,
    #[arg(long)]
    s: Option<usize>,
    #[arg(long)]
    eta1: Option<f64>,
    /// Per-BS user quotas `K_macro,K_pico`.
    #[arg(long, value_parser = parse_pair::<usize>)]
    k_max: Option<(usize, usize)>,
    #[arg(long)]
    eta2: Option<f64>,
    /// Strength biases `zeta_macro,zeta_pico` in dB.
    #[arg(long, value_parser = parse_pair::<f64>)]
    bias: Option<(f64, f64)>,
    #[arg(long, default_value_t = 50)]
    slots: usize,
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Comma-separated seeds; each lands in `<out>/seed_<x>`.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    #[arg(long)]
    out: PathBuf,
}

fn parse_pair<T: std::str::FromStr>(s: &str) -> Result<(T, T), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected `a,b`, got `{s}`"))?;
    let parse = |x: &str| x.trim().parse::<T>().map_err(|_| format!("cannot parse `{x}`"));
    Ok((parse(a)?, parse(b)?))
}

#[derive(Debug)]
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

type CmdResult<T> = Result<T, Failure>;

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunManifest {
    command: String,
    version: String,
    network: NetworkConfig,
    campaign: CampaignConfig,
    seed: u64,
    scheme: String,
    outputs: Vec<PathBuf>,
    wall_seconds: f64,
    slot_seconds: Vec<f64>,
    iteration_seconds: Vec<Vec<f64>>,
    /// `(C_macro, C_pico)` Mbps, for calibration runs.
    calibrated_mbps: Option<(f64, f64)>,
}

impl RunManifest {
    fn write(&self, dir: &Path) -> anyhow::Result<()> {
        let mut f = BufWriter::new(File::create(dir.join("manifest.json"))?);
        serde_json::to_writer_pretty(&mut f, self)?;
        f.flush()?;
        Ok(())
    }
}

fn load_network(net: &NetArgs) -> CmdResult<NetworkConfig> {
    match (&net.config, &net.preset) {
        (Some(path), _) => NetworkConfig::load(path)
            .with_context(|| format!("loading {}", path.display()))
            .map_err(usage),
        (None, Some(name)) => {
            NetworkConfig::preset(name).ok_or_else(|| usage(anyhow!("unknown preset `{name}` (full, desk, toy)")))
        }
        (None, None) => Ok(NetworkConfig::desk_scale()),
    }
}

fn strongest_s(name: &str, s: Option<usize>) -> anyhow::Result<ClusterPolicy> {
    let s = match name.strip_prefix("strongest_") {
        Some("s") => s.ok_or_else(|| anyhow!("`{name}` needs --s"))?,
        Some(n) => n.parse().map_err(|_| anyhow!("bad cluster size in `{name}`"))?,
        None => unreachable!(),
    };
    Ok(ClusterPolicy::StrongestS { s })
}

fn parse_scheme(args: &RunArgs) -> anyhow::Result<Scheme> {
    let (kind, name) = args.scheme.split_once(':').unwrap_or((args.scheme.as_str(), ""));
    let policy = || -> anyhow::Result<ClusterPolicy> {
        Ok(match name {
            "max_loading" => {
                let (k_max_macro, k_max_pico) = args.k_max.ok_or_else(|| anyhow!("max_loading needs --k-max"))?;
                ClusterPolicy::MaxLoading {
                    eta1_db: args.eta1.ok_or_else(|| anyhow!("max_loading needs --eta1"))?,
                    k_max_macro,
                    k_max_pico,
                }
            }
            "biased" => {
                let (bias_macro_db, bias_pico_db) = args.bias.ok_or_else(|| anyhow!("biased needs --bias"))?;
                ClusterPolicy::Biased {
                    eta2_db: args.eta2.ok_or_else(|| anyhow!("biased needs --eta2"))?,
                    bias_macro_db,
                    bias_pico_db,
                }
            }
            "disjoint" => ClusterPolicy::DisjointCell,
            p if p.starts_with("strongest_") => strongest_s(p, args.s)?,
            "" => bail!("scheme `{kind}` needs a policy, e.g. `{kind}:strongest_s`"),
            p => bail!("unknown clustering policy `{p}`"),
        })
    };
    match kind {
        "dynamic" if name.is_empty() => Ok(Scheme::Dynamic),
        "static" => Ok(Scheme::Static(policy()?)),
        "baseline" => Ok(Scheme::Baseline(policy()?)),
        _ => bail!("unknown scheme `{}`", args.scheme),
    }
}

fn output_paths(dir: &Path) -> Vec<PathBuf> {
    ["rates.csv", "backhaul.csv", "utility.csv", "base_stations.csv", "result.json", "manifest.json"]
        .iter()
        .map(|f| dir.join(f))
        .collect()
}

fn execute(network: &NetworkConfig, campaign: &CampaignConfig, out: &Path, command: &str) -> CmdResult<CampaignResult> {
    let started = Instant::now();
    let result = simulator::run_campaign(campaign, network).map_err(runtime)?;
    std::fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(runtime)?;
    result
        .write_outputs(out)
        .with_context(|| format!("writing {}", out.display()))
        .map_err(runtime)?;
    let manifest = RunManifest {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        network: network.clone(),
        campaign: campaign.clone(),
        seed: network.rng_seed,
        scheme: result.scheme.clone(),
        outputs: output_paths(out),
        wall_seconds: started.elapsed().as_secs_f64(),
        slot_seconds: result.slot_seconds.clone(),
        iteration_seconds: result.iteration_seconds.clone(),
        calibrated_mbps: None,
    };
    manifest.write(out).map_err(runtime)?;
    if !result.errors.is_empty() {
        eprintln!("{}: {} slot(s) failed, see result.json", out.display(), result.errors.len());
    }
    Ok(result)
}

fn cmd_run(args: &RunArgs) -> CmdResult<()> {
    let base = load_network(&args.net)?;
    let scheme = parse_scheme(args).map_err(usage)?;
    let mut campaign = CampaignConfig::new(scheme, args.slots);
    campaign.backhaul_override = args.backhaul;
    campaign.validate(&base).map_err(usage)?;
    if args.parallel == 0 {
        return Err(usage(anyhow!("--parallel must be >= 1")));
    }

    let jobs: Vec<(NetworkConfig, PathBuf)> = match &args.seeds {
        Some(seeds) => seeds
            .iter()
            .map(|&s| (NetworkConfig { rng_seed: s, ..base.clone() }, args.out.join(format!("seed_{s}"))))
            .collect(),
        None => vec![(
            NetworkConfig {
                rng_seed: args.seed.unwrap_or(base.rng_seed),
                ..base.clone()
            },
            args.out.clone(),
        )],
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.parallel)
        .build()
        .map_err(runtime)?;
    let outcomes: Vec<CmdResult<CampaignResult>> =
        pool.install(|| jobs.par_iter().map(|(net, out)| execute(net, &campaign, out, "run")).collect());
    for ((net, out), outcome) in jobs.iter().zip(outcomes) {
        let result = outcome?;
        let median = cran_core::reporting::rate_percentile(&result, 50.0).unwrap_or(0.0);
        println!(
            "{} seed {}: median {:.3} Mbps over {} users -> {}",
            result.scheme,
            net.rng_seed,
            median,
            result.num_users(),
            out.display()
        );
    }
    Ok(())
}

fn cmd_calibrate(net: &NetArgs, scheme: &str, s: usize, slots: usize, seed: u64, out: &Path) -> CmdResult<()> {
    let network = NetworkConfig {
        rng_seed: seed,
        ..load_network(net)?
    };
    let policy = match scheme {
        "disjoint" => ClusterPolicy::DisjointCell,
        p if p.starts_with("strongest_") => strongest_s(p, Some(s)).map_err(usage)?,
        p => return Err(usage(anyhow!("unknown baseline `{p}` (strongest_s, disjoint)"))),
    };
    let campaign = CampaignConfig::new(Scheme::Baseline(policy), slots);
    campaign.validate(&network).map_err(usage)?;
    let started = Instant::now();
    let result = simulator::run_campaign(&campaign, &network).map_err(runtime)?;
    let (c_macro, c_pico) = simulator::calibrated_budgets(&result, network.bandwidth_hz);
    std::fs::create_dir_all(out).map_err(runtime)?;
    result.write_outputs(out).map_err(runtime)?;
    RunManifest {
        command: "calibrate".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        network,
        campaign,
        seed,
        scheme: result.scheme.clone(),
        outputs: output_paths(out),
        wall_seconds: started.elapsed().as_secs_f64(),
        slot_seconds: result.slot_seconds.clone(),
        iteration_seconds: result.iteration_seconds.clone(),
        calibrated_mbps: Some((c_macro, c_pico)),
    }
    .write(out)
    .map_err(runtime)?;
    println!("{c_macro},{c_pico}");
    Ok(())
}

fn cmd_rerun(manifest: &Path, out: &Path) -> CmdResult<()> {
    let text = std::fs::read_to_string(manifest)
        .with_context(|| format!("reading {}", manifest.display()))
        .map_err(usage)?;
    let m: RunManifest = serde_json::from_str(&text).map_err(usage)?;
    m.network.validate().map_err(usage)?;
    m.campaign.validate(&m.network).map_err(usage)?;
    let result = execute(&m.network, &m.campaign, out, "rerun")?;
    println!("{} seed {} -> {}", result.scheme, m.seed, out.display());
    Ok(())
}

fn cmd_report(results: &[PathBuf], baseline: &Path, bins: usize, out: &Path) -> CmdResult<()> {
    let read = |dir: &Path| {
        CampaignResult::read_dir(dir)
            .with_context(|| format!("reading results from {}", dir.display()))
            .map_err(usage)
    };
    let base = read(baseline)?;
    let mut all = vec![base.clone()];
    for dir in results {
        if dir == baseline {
            continue;
        }
        let r = read(dir)?;
        if r.num_users() != base.num_users() {
            return Err(runtime(anyhow!(
                "{} has {} users, baseline has {}",
                dir.display(),
                r.num_users(),
                base.num_users()
            )));
        }
        all.push(r);
    }
    let report = ComparisonReport::build(&all, &base.scheme, bins).map_err(runtime)?;
    report.write_all(&all, out).map_err(runtime)?;
    println!("scheme,p10_mbps,p50_mbps,p90_mbps,p50_gain_pct");
    for s in &report.schemes {
        println!(
            "{},{:.4},{:.4},{:.4},{}",
            s.scheme,
            s.percentiles[0],
            s.percentiles[1],
            s.percentiles[2],
            s.gains_pct[1].map(|g| format!("{g:.2}")).unwrap_or_default()
        );
    }
    Ok(())
}

fn dispatch(cli: Cli) -> CmdResult<()> {
    match &cli.command {
        Command::Calibrate {
            net,
            scheme,
            s,
            slots,
            seed,
            out,
        } => cmd_calibrate(net, scheme, *s, *slots, *seed, out),
        Command::Run(args) => cmd_run(args),
        Command::Rerun { manifest, out } => cmd_rerun(manifest, out),
        Command::Report {
            results,
            baseline,
            bins,
            out,
        } => cmd_report(results, baseline, *bins, out),
    }
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
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
