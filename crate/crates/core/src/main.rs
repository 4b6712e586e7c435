use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::{info, warn};

use m2m_sched::experiment::{
    self, builtin_scenario, linspace, replication_traces, run_point, run_sweep, tune_proposed, write_json,
    write_point_csv, Tuning,
};
use m2m_sched::optimizer::DEFAULT_RESOLUTION;
use m2m_sched::scenario::{builtin_config_with, DEFAULT_EXTREME_GAMMA, LAMBDA_ED1_RANGE};
use m2m_sched::{engine, generate_traces, PolicyKind, Scenario, SimConfig};

#[derive(Parser)]
#[command(name = "m2msim", version, about = "Multiclass M2M uplink scheduling simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct Overrides {
    /// Master RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Monte-Carlo replications per point.
    #[arg(long)]
    replications: Option<u32>,
    /// Simulated time per replication, ms.
    #[arg(long)]
    horizon_ms: Option<f64>,
    /// Keep PU packets past their deadline instead of dropping them.
    #[arg(long)]
    no_drop: bool,
    /// γ of PU1 in the penalty_extreme scenario.
    #[arg(long, default_value_t = DEFAULT_EXTREME_GAMMA)]
    extreme_gamma: f64,
}

impl Overrides {
    fn apply(&self, cfg: &mut SimConfig) {
        if let Some(s) = self.seed {
            cfg.rng_seed = s;
        }
        if let Some(r) = self.replications {
            cfg.replications = r;
        }
        if let Some(h) = self.horizon_ms {
            cfg.sim_horizon_ms = h;
        }
        if self.no_drop {
            cfg.drop_failed_pu = false;
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Check a config file and report every violation.
    Validate { config: PathBuf },
    /// Print the config of a built-in scenario as JSON.
    Scenario {
        name: String,
        #[arg(long, default_value_t = LAMBDA_ED1_RANGE.0)]
        lambda_ed1: f64,
    },
    /// Simulate one configuration (file or scenario name) under each policy.
    Run {
        target: String,
        #[arg(long = "policy")]
        policies: Vec<PolicyKind>,
        #[arg(long)]
        lambda_ed1: Option<f64>,
        /// Tune the proposed policy's PU thresholds on this many grid points
        /// per dimension first (0 keeps the configured thresholds).
        #[arg(long, default_value_t = 0)]
        resolution: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write a per-packet log of replication 0 for each policy.
        #[arg(long)]
        packet_log: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Sweep a built-in scenario over the ED1 arrival rate.
    Sweep {
        scenario: String,
        #[arg(long, default_value = "lambda_ed1")]
        var: String,
        #[arg(long, default_value_t = LAMBDA_ED1_RANGE.0)]
        from: f64,
        #[arg(long, default_value_t = LAMBDA_ED1_RANGE.1)]
        to: f64,
        #[arg(long, default_value_t = 4)]
        steps: usize,
        #[arg(long = "policy")]
        policies: Vec<PolicyKind>,
        #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
        resolution: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Grid-search the proposed policy's thresholds for a scenario.
    Optimize {
        scenario: String,
        #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
        resolution: usize,
        #[arg(long, default_value_t = LAMBDA_ED1_RANGE.1)]
        lambda_ed1: f64,
        /// Also search ED thresholds (always on for opt_delta).
        #[arg(long)]
        include_ed: bool,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Dump the arrival/service trace of one replication as CSV.
    Trace {
        target: String,
        #[arg(long, default_value_t = 0)]
        replication: u32,
        #[arg(long)]
        lambda_ed1: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// A config path or a built-in scenario name.
fn load_target(target: &str, lambda_ed1: Option<f64>, extreme_gamma: f64) -> Result<SimConfig> {
    if let Ok(s) = target.parse::<Scenario>() {
        return Ok(builtin_config_with(s, lambda_ed1.unwrap_or(LAMBDA_ED1_RANGE.0), extreme_gamma));
    }
    let mut cfg = SimConfig::load(Path::new(target)).with_context(|| format!("loading {target}"))?;
    if let (Some(l), Some(ed)) = (lambda_ed1, cfg.ed_classes.first_mut()) {
        ed.arrival_rate_per_ms = l;
    }
    Ok(cfg)
}

fn check(cfg: &SimConfig) -> Result<()> {
    let violations = cfg.validate();
    if !violations.is_empty() {
        for v in &violations {
            eprintln!("invalid: {v}");
        }
        bail!("{} config violation(s)", violations.len());
    }
    let rho = cfg.offered_load();
    info!("offered load {rho:.4}");
    if rho >= 1.0 {
        warn!("offered load {rho:.4} >= 1: queues are unstable");
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn policies_or_all(p: Vec<PolicyKind>) -> Vec<PolicyKind> {
    if p.is_empty() {
        PolicyKind::ALL.to_vec()
    } else {
        p
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match real_main(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Validate { config } => {
            let cfg = SimConfig::load(&config)?;
            check(&cfg)?;
            println!("{}: valid (offered load {:.4})", config.display(), cfg.offered_load());
        }
        Command::Scenario { name, lambda_ed1 } => {
            let s: Scenario = name.parse()?;
            println!("{}", builtin_config_with(s, lambda_ed1, DEFAULT_EXTREME_GAMMA).to_json()?);
        }
        Command::Run {
            target,
            policies,
            lambda_ed1,
            resolution,
            out,
            packet_log,
            overrides,
        } => {
            let mut cfg = load_target(&target, lambda_ed1, overrides.extreme_gamma)?;
            overrides.apply(&mut cfg);
            check(&cfg)?;
            let policies = policies_or_all(policies);
            let results = run_point(&cfg, &policies, &Tuning::pu_only(resolution))?;
            let mut stdout = io::stdout().lock();
            writeln!(stdout, "{:<15} {:>9} {:>9}", "policy", "V_mean", "V_ci95")?;
            for r in &results {
                writeln!(stdout, "{:<15} {:>9.4} {:>9.4}", r.policy.as_str(), r.v_mean, r.v_ci)?;
            }
            if let Some(gap) = experiment::utility_gap(&results) {
                writeln!(stdout, "delta V (proposed - best baseline) = {gap:.4}")?;
            }
            if let Some(dir) = out {
                write_point_csv(&cfg, &results, create(&dir.join(experiment::RESULTS_FILE))?)?;
                write_json(&dir.join(experiment::SUMMARY_FILE), &results)?;
                if packet_log {
                    let traces = generate_traces(&cfg, 0);
                    for p in &policies {
                        let built = p.build(&cfg)?;
                        let output = engine::run_logged(&cfg, built.as_ref(), &traces)?;
                        let path = dir.join(format!("packets_{p}.csv"));
                        engine::write_packet_log(&output.packet_log, create(&path)?)?;
                    }
                }
                info!("wrote results to {}", dir.display());
            }
        }
        Command::Sweep {
            scenario,
            var,
            from,
            to,
            steps,
            policies,
            resolution,
            out,
            overrides,
        } => {
            if var != "lambda_ed1" {
                bail!("unsupported sweep variable `{var}` (only lambda_ed1)");
            }
            let s: Scenario = scenario.parse()?;
            let mut plan = builtin_scenario(s);
            plan.sweep_values = linspace(from, to, steps);
            plan.policies = policies_or_all(policies);
            plan.tuning.resolution = resolution;
            plan.extreme_gamma = overrides.extreme_gamma;
            overrides.apply(&mut plan.base);
            plan.output_dir = Some(out.clone());
            check(&plan.config_at(plan.sweep_values.first().copied().unwrap_or(from)))?;
            let report = run_sweep(&plan)?;
            for p in &report.points {
                for r in &p.results {
                    println!("{:.3} {:<15} V={:.4} ±{:.4}", p.lambda_ed1, r.policy.as_str(), r.v_mean, r.v_ci);
                }
                if let Some(d) = p.delta_v {
                    println!("{:.3} delta V = {d:.4}", p.lambda_ed1);
                }
            }
            if let Some(d) = report.max_delta_v {
                println!("max delta V = {d:.4}");
            }
            info!("wrote {}", out.display());
        }
        Command::Optimize {
            scenario,
            resolution,
            lambda_ed1,
            include_ed,
            out,
            overrides,
        } => {
            let s: Scenario = scenario.parse()?;
            let mut cfg = builtin_config_with(s, lambda_ed1, overrides.extreme_gamma);
            overrides.apply(&mut cfg);
            check(&cfg)?;
            let tuning = Tuning {
                resolution: resolution.max(1),
                include_ed: include_ed || s.optimizes_delta(),
                keep_defaults: true,
            };
            let traces = replication_traces(&cfg);
            let (tuned, grid) = tune_proposed(&cfg, &traces, &tuning)?;
            grid.write_csv(create(&out.join("grid.csv"))?)?;
            let mut w = create(&out.join("tuned_config.json"))?;
            writeln!(w, "{}", tuned.to_json()?)?;
            w.flush()?;
            for (label, v) in grid.labels.iter().zip(&grid.best) {
                println!("{label} = {v:.4}");
            }
            println!("best V = {:.4} ±{:.4} over {} grid points", grid.best_mean, grid.best_ci, grid.table.len());
        }
        Command::Trace {
            target,
            replication,
            lambda_ed1,
            out,
        } => {
            let cfg = load_target(&target, lambda_ed1, DEFAULT_EXTREME_GAMMA)?;
            check(&cfg)?;
            let traces = generate_traces(&cfg, replication);
            match out {
                Some(path) => traces.write_csv(create(&path)?)?,
                None => traces.write_csv(io::stdout().lock())?,
            }
        }
    }
    Ok(())
}
