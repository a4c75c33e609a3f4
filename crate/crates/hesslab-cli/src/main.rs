//! Command-line front end for the laboratory: every subcommand writes its
//! outputs under `--out` together with a manifest describing the exact run.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use hesslab::aging::AgingDataset;
use hesslab::config::LabConfig;
use hesslab::cycles::{self, DrivingCycle};
use hesslab::ems::{ActionGrid, QTable};
use hesslab::harness::{
    compare, compare_to_csv, compare_to_text, curve_csv, trace_to_csv, train_on_cycle,
    tune_on_cycle, Simulator, Strategy,
};
use hesslab::optimize::{identify_aging, HeuristicKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "hesslab",
    version,
    about = "Simulation laboratory for battery/ultracapacitor hybrid storage in electric vehicles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Laboratory configuration TOML; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for every random draw the command makes.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory the outputs and the manifest are written to.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CycleArg {
    /// Bundled fixture name (udds_like, wltp_like) or a cycle CSV path.
    #[arg(long, default_value = "udds_like")]
    cycle: String,
}

#[derive(Args)]
struct StrategyArg {
    /// Power-split strategy: battery_only, threshold, bilinear, fixed_ratio
    /// or learned.
    #[arg(long, default_value = "battery_only")]
    strategy: String,
    /// Discharge threshold in W (threshold strategy only).
    #[arg(long)]
    discharge_w: Option<f64>,
    /// Charge threshold in W, negative (threshold strategy only).
    #[arg(long)]
    charge_w: Option<f64>,
    /// Trained table CSV (learned strategy only).
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one strategy over one cycle and write the step trace.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        cycle: CycleArg,
        #[command(flatten)]
        strategy: StrategyArg,
    },
    /// Train the learned table on a cycle and write table and curve.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        cycle: CycleArg,
    },
    /// Tune a proportional rule (bilinear or fixed_ratio) on a cycle.
    TuneHeuristic {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        cycle: CycleArg,
        /// Rule to tune: bilinear or fixed_ratio.
        #[arg(long, default_value = "fixed_ratio")]
        strategy: String,
    },
    /// Fit the capacity-fade model to cycling datasets.
    IdentifyAging {
        #[command(flatten)]
        common: Common,
        /// Dataset CSVs: a `# soc_pct=..,c_rate=..,temp_c=..` line followed
        /// by `ah,q_loss_pct` rows. Repeat the flag per dataset.
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
    },
    /// Drive repeated cycles until the battery empties and report distance.
    Range {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        cycle: CycleArg,
        #[command(flatten)]
        strategy: StrategyArg,
    },
    /// Accumulate throughput and capacity loss over fixed repetitions.
    Aging {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        cycle: CycleArg,
        #[command(flatten)]
        strategy: StrategyArg,
        /// Cycle repetitions counted toward aging.
        #[arg(long, default_value_t = 50)]
        repetitions: usize,
    },
    /// Range and aging for a lineup of strategies; the first is the
    /// reference for the percent columns.
    Compare {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        cycle: CycleArg,
        /// Strategy names, repeatable: battery_only, bilinear, fixed_ratio
        /// or learned.
        #[arg(long = "strategy", default_values_t = [
            "battery_only".to_string(),
            "bilinear".to_string(),
            "fixed_ratio".to_string(),
        ])]
        strategies: Vec<String>,
        /// Trained table CSV, required when the lineup includes learned.
        #[arg(long)]
        table: Option<PathBuf>,
        /// Cycle repetitions counted toward aging.
        #[arg(long, default_value_t = 50)]
        repetitions: usize,
    },
    /// Decode a trained table into per-state threshold choices.
    ExportPolicy {
        #[command(flatten)]
        common: Common,
        /// Trained table CSV produced by train.
        #[arg(long)]
        table: PathBuf,
    },
}

/// Output directory with the list of files the manifest will declare.
struct OutDir {
    dir: PathBuf,
    files: Vec<String>,
}

impl OutDir {
    fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(OutDir { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        fs::write(self.dir.join(name), contents)
            .with_context(|| format!("writing {name}"))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn save_table(&mut self, name: &str, table: &QTable) -> Result<()> {
        table.save(&self.dir.join(name)).with_context(|| format!("writing {name}"))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn finish(self, cfg: &LabConfig, cycle: Option<&str>, seed: u64) -> Result<()> {
        let manifest = json!({
            "command": std::env::args().collect::<Vec<String>>(),
            "files": self.files,
            "cycle": cycle,
            "seed": seed,
            "config": serde_json::to_value(cfg).context("serializing configuration")?,
        });
        let text = serde_json::to_string_pretty(&manifest).context("rendering manifest")?;
        fs::write(self.dir.join("manifest.json"), text + "\n").context("writing manifest.json")?;
        Ok(())
    }
}

fn load_config(path: Option<&Path>) -> Result<LabConfig> {
    match path {
        Some(p) => LabConfig::from_toml_file(p)
            .with_context(|| format!("loading configuration {}", p.display())),
        None => Ok(LabConfig::default()),
    }
}

fn load_cycle_arg(name: &str, cfg: &LabConfig) -> Result<DrivingCycle> {
    if let Some(cycle) = cycles::fixture(name) {
        return Ok(cycle);
    }
    let path = Path::new(name);
    if path.exists() {
        return Ok(cycles::load_cycle(path, cfg.sim.dt_s)?);
    }
    bail!("cycle {name:?} is neither a bundled fixture nor an existing file");
}

fn resolve_strategy(arg: &StrategyArg, cfg: &LabConfig) -> Result<Strategy> {
    match arg.strategy.as_str() {
        "battery_only" => Ok(Strategy::BatteryOnly),
        "threshold" => {
            let (Some(discharge_w), Some(charge_w)) = (arg.discharge_w, arg.charge_w) else {
                bail!("the threshold strategy needs --discharge-w and --charge-w");
            };
            Ok(Strategy::Threshold { discharge_w, charge_w })
        }
        "bilinear" => Ok(Strategy::Bilinear(cfg.heuristic1.clone())),
        "fixed_ratio" => Ok(Strategy::FixedRatio(cfg.heuristic2.clone())),
        "learned" => {
            let Some(path) = &arg.table else {
                bail!("the learned strategy needs --table");
            };
            Ok(Strategy::Learned(QTable::load(path)?))
        }
        other => bail!(
            "unknown strategy {other:?} (expected battery_only, threshold, bilinear, \
             fixed_ratio or learned)"
        ),
    }
}

fn heuristic_kind(name: &str) -> Result<HeuristicKind> {
    match name {
        "bilinear" => Ok(HeuristicKind::Bilinear),
        "fixed_ratio" => Ok(HeuristicKind::FixedRatio),
        other => bail!("unknown rule {other:?} (expected bilinear or fixed_ratio)"),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common, cycle, strategy } => {
            let cfg = load_config(common.config.as_deref())?;
            let cyc = load_cycle_arg(&cycle.cycle, &cfg)?;
            let strat = resolve_strategy(&strategy, &cfg)?;
            let sim = Simulator::new(&cfg, &cyc)?;
            let spec = sim.calibrate_reward()?;
            let result = sim.run(&strat, Some(&spec))?;
            let mut out = OutDir::create(&common.out)?;
            out.write("trace.csv", &trace_to_csv(&result.records))?;
            out.write(
                "summary.json",
                &(serde_json::to_string_pretty(&result).context("rendering summary")? + "\n"),
            )?;
            out.finish(&cfg, Some(&cyc.name), common.seed)
        }
        Command::Train { common, cycle } => {
            let cfg = load_config(common.config.as_deref())?;
            let cyc = load_cycle_arg(&cycle.cycle, &cfg)?;
            let mut rng = ChaCha8Rng::seed_from_u64(common.seed);
            let outcome = train_on_cycle(&cfg, &cyc, &mut rng)?;
            let mut out = OutDir::create(&common.out)?;
            out.save_table("qtable.csv", &outcome.q)?;
            out.write("curve.csv", &curve_csv(&outcome.curve))?;
            let summary = json!({
                "episodes": cfg.ems.qlearn.episodes,
                "best_total": outcome.best_total,
                "n_states": outcome.q.n_states(),
                "n_actions": outcome.q.n_actions(),
            });
            out.write(
                "summary.json",
                &(serde_json::to_string_pretty(&summary).context("rendering summary")? + "\n"),
            )?;
            out.finish(&cfg, Some(&cyc.name), common.seed)
        }
        Command::TuneHeuristic { common, cycle, strategy } => {
            let cfg = load_config(common.config.as_deref())?;
            let cyc = load_cycle_arg(&cycle.cycle, &cfg)?;
            let kind = heuristic_kind(&strategy)?;
            let mut rng = ChaCha8Rng::seed_from_u64(common.seed);
            let (tuned, outcome) = tune_on_cycle(&cfg, &cyc, kind, &mut rng)?;
            let params = match &tuned {
                Strategy::Bilinear(p) => serde_json::to_value(p),
                Strategy::FixedRatio(p) => serde_json::to_value(p),
                _ => unreachable!("tuning returns a proportional rule"),
            }
            .context("serializing tuned parameters")?;
            let mut out = OutDir::create(&common.out)?;
            let mut history = String::from("generation,best_cost\n");
            for (i, cost) in outcome.history.iter().enumerate() {
                history.push_str(&format!("{i},{cost}\n"));
            }
            out.write("history.csv", &history)?;
            let summary = json!({
                "rule": strategy,
                "best_cost": outcome.best_cost,
                "params": params,
            });
            out.write(
                "tuned.json",
                &(serde_json::to_string_pretty(&summary).context("rendering summary")? + "\n"),
            )?;
            out.finish(&cfg, Some(&cyc.name), common.seed)
        }
        Command::IdentifyAging { common, data } => {
            let cfg = load_config(common.config.as_deref())?;
            let mut datasets = Vec::with_capacity(data.len());
            for path in &data {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading dataset {}", path.display()))?;
                let name = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| path.display().to_string());
                datasets.push(AgingDataset::parse_csv(&name, &text)?);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(common.seed);
            let fit = identify_aging(&datasets, &cfg.aging, &cfg.ga, &mut rng)?;
            let mut out = OutDir::create(&common.out)?;
            out.write(
                "identify.json",
                &(serde_json::to_string_pretty(&fit).context("rendering fit")? + "\n"),
            )?;
            out.finish(&cfg, None, common.seed)
        }
        Command::Range { common, cycle, strategy } => {
            let cfg = load_config(common.config.as_deref())?;
            let cyc = load_cycle_arg(&cycle.cycle, &cfg)?;
            let strat = resolve_strategy(&strategy, &cfg)?;
            let sim = Simulator::new(&cfg, &cyc)?;
            let result = sim.range_test(&strat)?;
            let mut out = OutDir::create(&common.out)?;
            out.write(
                "range.json",
                &(serde_json::to_string_pretty(&result).context("rendering result")? + "\n"),
            )?;
            out.finish(&cfg, Some(&cyc.name), common.seed)
        }
        Command::Aging { common, cycle, strategy, repetitions } => {
            let cfg = load_config(common.config.as_deref())?;
            let cyc = load_cycle_arg(&cycle.cycle, &cfg)?;
            let strat = resolve_strategy(&strategy, &cfg)?;
            let sim = Simulator::new(&cfg, &cyc)?;
            let result = sim.aging_test(&strat, repetitions)?;
            let mut out = OutDir::create(&common.out)?;
            out.write(
                "aging.json",
                &(serde_json::to_string_pretty(&result).context("rendering result")? + "\n"),
            )?;
            out.finish(&cfg, Some(&cyc.name), common.seed)
        }
        Command::Compare { common, cycle, strategies, table, repetitions } => {
            let cfg = load_config(common.config.as_deref())?;
            let cyc = load_cycle_arg(&cycle.cycle, &cfg)?;
            let mut entries = Vec::with_capacity(strategies.len());
            for name in &strategies {
                let arg = StrategyArg {
                    strategy: name.clone(),
                    discharge_w: None,
                    charge_w: None,
                    table: table.clone(),
                };
                entries.push((name.clone(), resolve_strategy(&arg, &cfg)?));
            }
            let result = compare(&cfg, &cyc, &entries, repetitions)?;
            let mut out = OutDir::create(&common.out)?;
            out.write("compare.csv", &compare_to_csv(&result))?;
            out.write("compare.txt", &compare_to_text(&result))?;
            out.finish(&cfg, Some(&cyc.name), common.seed)
        }
        Command::ExportPolicy { common, table } => {
            let cfg = load_config(common.config.as_deref())?;
            let q = QTable::load(&table)?;
            let grid = ActionGrid::new(&cfg.ems.action_grid)?;
            let sov_bins = cfg.ems.state_grid.sov_bins;
            let n_states = cfg.ems.state_grid.power_bins * sov_bins;
            if q.n_states() != n_states || q.n_actions() != grid.n_actions() {
                bail!(
                    "table shape {}x{} does not match the configured grids ({}x{})",
                    q.n_states(),
                    q.n_actions(),
                    n_states,
                    grid.n_actions()
                );
            }
            let mut policy = String::from("state,power_bin,sov_bin,discharge_w,charge_w\n");
            for state in 0..n_states {
                let (discharge_w, charge_w) = grid.thresholds(q.argmax_action(state));
                policy.push_str(&format!(
                    "{state},{},{},{discharge_w},{charge_w}\n",
                    state / sov_bins,
                    state % sov_bins,
                ));
            }
            let mut out = OutDir::create(&common.out)?;
            out.write("policy.csv", &policy)?;
            out.finish(&cfg, None, common.seed)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let record = json!({ "error": { "message": e.to_string() } });
            eprintln!("{record}");
            return ExitCode::FAILURE;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = json!({ "error": { "message": format!("{e:#}") } });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}
