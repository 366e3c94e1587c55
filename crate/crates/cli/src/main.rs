use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use ranslice_core::hdm::{train_hdm, DtStub, OfflineDataset, TrainConfig};
use ranslice_core::intent::{parse_intent, retrieve_context, validate_goal, ContextStore, ValidationLimits};
use ranslice_core::sim::{
    generate_offline_dataset, run_scenario, summarize, write_results, write_run, ControllerKind, RunConfig,
    Simulator, SCENARIO_IDS,
};
use ranslice_core::{Error, SliceSla};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

/// RAN slicing simulator with hierarchical controllers.
#[derive(Parser)]
#[command(name = "ranslice", version)]
struct Cli {
    /// Root for output files.
    #[arg(long, global = true, env = "RANSLICE_OUT", default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the controller in the configuration.
    #[arg(long)]
    controller: Option<String>,
    /// Overrides the episode length.
    #[arg(long)]
    steps: Option<u64>,
    /// Trained orchestrator checkpoint (HDM or sequence regressor).
    #[arg(long)]
    orchestrator: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one episode per seed and write CSV traces.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Single seed; defaults to every seed in the configuration.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write per-UE, link and micro-step traces.
        #[arg(long)]
        full_trace: bool,
    },
    /// Run a scenario sweep for the selected controllers.
    Scenario {
        #[command(flatten)]
        common: Common,
        /// Scenario id: a, b, c or d.
        #[arg(long)]
        id: String,
        /// Comma-separated controller names; defaults to all.
        #[arg(long, value_delimiter = ',')]
        controllers: Vec<String>,
        /// Number of seeds, starting at 0.
        #[arg(long)]
        seeds: Option<u64>,
    },
    /// Collect labelled orchestration demonstrations.
    GenerateDataset {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        episodes: usize,
        #[arg(long, default_value_t = 600)]
        steps: u64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Output file, relative to the output root.
        #[arg(long, default_value = "dataset.json")]
        file: PathBuf,
    },
    /// Fit the HDM orchestrator and the sequence-regressor baseline.
    TrainHdm {
        /// Dataset written by generate-dataset.
        #[arg(long)]
        dataset: PathBuf,
        /// JSON training configuration.
        #[arg(long)]
        train_config: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Episodes kept out of training for the fidelity report.
        #[arg(long, default_value_t = 20)]
        held_out: usize,
    },
    /// Run every scenario for every controller with trained orchestrators.
    Evaluate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// HDM checkpoint; trained from a fresh dataset if absent.
        #[arg(long)]
        hdm: Option<PathBuf>,
        /// Sequence-regressor checkpoint; fitted from a fresh dataset if absent.
        #[arg(long)]
        dt: Option<PathBuf>,
        /// Comma-separated scenario ids; defaults to all.
        #[arg(long, value_delimiter = ',')]
        scenarios: Vec<String>,
        #[arg(long)]
        seeds: Option<u64>,
    },
    /// Parse and validate an operator intent against the default SLAs.
    ParseIntent {
        #[arg(long)]
        text: String,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let mut cfg: RunConfig =
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            if cfg.network.num_ue == 0 {
                cfg.sync_counts();
            }
            cfg
        }
        None => RunConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn controller(name: &str) -> Result<ControllerKind> {
    ControllerKind::parse(name).ok_or_else(|| {
        let known: Vec<&str> = ControllerKind::ALL.iter().map(|c| c.as_str()).collect();
        Error::Config(format!("unknown controller {name:?}; expected one of {}", known.join(", "))).into()
    })
}

fn apply_common(common: &Common) -> Result<RunConfig> {
    let mut cfg = load_config(common.config.as_deref())?;
    if let Some(c) = &common.controller {
        cfg.controller = controller(c)?;
    }
    if let Some(s) = common.steps {
        cfg.steps = s;
    }
    if let Some(p) = &common.orchestrator {
        cfg.orchestrator_path = Some(p.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn simulate(out: &Path, common: &Common, seed: Option<u64>, full: bool) -> Result<()> {
    let mut cfg = apply_common(common)?;
    if full {
        cfg.traces.ue = true;
        cfg.traces.links = true;
        cfg.traces.micro = true;
    }
    let seeds = seed.map(|s| vec![s]).unwrap_or_else(|| cfg.seeds.clone());
    for seed in seeds {
        let mut sim = Simulator::new(cfg.clone(), seed)?;
        sim.run()?;
        let summary = summarize(&cfg, seed, sim.trace());
        let dir = out.join(format!("{}-seed{seed}", cfg.controller));
        write_run(&dir, &cfg, sim.trace(), &summary)?;
        println!(
            "{} seed {seed}: URLLC latency {:.3} ms, eMBB {:.1} Mbps, reward {:.4} -> {}",
            cfg.controller,
            summary.urllc_latency_s().unwrap_or(f64::NAN) * 1e3,
            summary.embb_throughput_bps().unwrap_or(f64::NAN) / 1e6,
            summary.reward_mean,
            dir.display()
        );
    }
    Ok(())
}

fn scenario_ids(ids: &[String]) -> Result<Vec<String>> {
    if ids.is_empty() {
        return Ok(SCENARIO_IDS.iter().map(|s| s.to_string()).collect());
    }
    for id in ids {
        if !SCENARIO_IDS.contains(&id.as_str()) {
            return Err(Error::UnknownScenario(id.clone()).into());
        }
    }
    Ok(ids.to_vec())
}

fn print_rows(rows: &[ranslice_core::sim::ResultRow]) {
    let mut keys: Vec<(String, ControllerKind)> = vec![];
    for r in rows {
        let k = (r.point.clone(), r.controller);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    println!("{:<22} {:<22} {:>12} {:>12} {:>12}", "point", "controller", "urllc_ms", "embb_mbps", "be_p5_mbps");
    for (point, c) in keys {
        let sel: Vec<_> = rows.iter().filter(|r| r.point == point && r.controller == c).collect();
        let avg = |f: &dyn Fn(&ranslice_core::sim::RunSummary) -> Option<f64>| {
            sel.iter().filter_map(|r| f(&r.summary)).sum::<f64>() / sel.len().max(1) as f64
        };
        println!(
            "{point:<22} {:<22} {:>12.3} {:>12.1} {:>12.3}",
            c.as_str(),
            avg(&|s| s.urllc_latency_s()) * 1e3,
            avg(&|s| s.embb_throughput_bps()) / 1e6,
            avg(&|s| s.be_percentile_bps()) / 1e6
        );
    }
}

/// Controllers that need a checkpoint run separately so each can point at
/// its own file.
fn sweep(id: &str, base: &RunConfig, controllers: &[ControllerKind], hdm: Option<&Path>, dt: Option<&Path>) -> Result<Vec<ranslice_core::sim::ResultRow>> {
    let mut rows = vec![];
    for &c in controllers {
        let mut cfg = base.clone();
        match c {
            ControllerKind::DtStub => cfg.orchestrator_path = dt.map(Path::to_path_buf).or(cfg.orchestrator_path),
            ControllerKind::HdmAgentic | ControllerKind::HrlNoHealing => {
                cfg.orchestrator_path = hdm.map(Path::to_path_buf).or(cfg.orchestrator_path)
            }
            _ => {}
        }
        rows.extend(run_scenario(id, &cfg, &[c])?);
    }
    Ok(rows)
}

fn scenario(out: &Path, common: &Common, id: &str, names: &[String], seeds: Option<u64>) -> Result<()> {
    let mut cfg = apply_common(common)?;
    if let Some(n) = seeds {
        cfg.seeds = (0..n).collect();
    }
    let controllers = if names.is_empty() {
        ControllerKind::ALL.to_vec()
    } else {
        names.iter().map(|n| controller(n)).collect::<Result<_>>()?
    };
    let rows = sweep(id, &cfg, &controllers, None, None)?;
    std::fs::create_dir_all(out)?;
    let path = out.join(format!("scenario_{id}.csv"));
    write_results(&path, &rows)?;
    print_rows(&rows);
    println!("wrote {}", path.display());
    Ok(())
}

fn train(out: &Path, dataset: &Path, tc: Option<&Path>, epochs: Option<usize>, seed: u64, held_out: usize) -> Result<()> {
    let ds = OfflineDataset::load(dataset)?;
    let mut cfg = match tc {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)
            .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        None => TrainConfig::default(),
    };
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    cfg.validate()?;
    let (train, test) = ds.split(held_out);
    let (model, report) = train_hdm(&train, &cfg, seed)?;
    let samples = train.training_samples(model.config());
    let dt = DtStub::fit(&samples, 4, 1e-3)?;
    std::fs::create_dir_all(out)?;
    model.save(&out.join("hdm.json"))?;
    dt.save(&out.join("dt.json"))?;
    std::fs::write(out.join("train_report.json"), serde_json::to_vec_pretty(&report)?)?;

    let held = test.training_samples(model.config());
    let mut hits = 0usize;
    let mut mse = 0.0;
    for s in &held {
        let p = model.predict(&s.input)?.action;
        let want = s.target[..3]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|x| x.0)
            .unwrap_or(0);
        hits += usize::from(p.agent.index() == want);
        mse += p.theta.iter().zip(&s.target[3..]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.theta.len() as f64;
    }
    let n = held.len().max(1) as f64;
    println!(
        "trained on {} decisions: loss {:.4} -> {:.4}; held-out {} decisions: agent match {:.1}%, theta MSE {:.4}",
        samples.len(),
        report.initial_loss,
        report.loss_curve.last().copied().unwrap_or(f64::NAN),
        held.len(),
        100.0 * hits as f64 / n,
        mse / n
    );
    println!("wrote {} and {}", out.join("hdm.json").display(), out.join("dt.json").display());
    Ok(())
}

fn evaluate(out: &Path, config: Option<&Path>, hdm: Option<PathBuf>, dt: Option<PathBuf>, ids: &[String], seeds: Option<u64>) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(n) = seeds {
        cfg.seeds = (0..n).collect();
    }
    let ids = scenario_ids(ids)?;
    let (hdm, dt) = match (hdm, dt) {
        (Some(h), Some(d)) => (h, d),
        (h, d) => {
            info!("no checkpoints given; generating a dataset and training");
            let ds_path = out.join("dataset.json");
            std::fs::create_dir_all(out)?;
            generate_offline_dataset(&cfg, 200, 600, 7)?.save(&ds_path)?;
            train(out, &ds_path, None, None, 1, 20)?;
            (h.unwrap_or_else(|| out.join("hdm.json")), d.unwrap_or_else(|| out.join("dt.json")))
        }
    };
    for id in ids {
        println!("scenario {id}");
        let rows = sweep(&id, &cfg, &ControllerKind::ALL, Some(&hdm), Some(&dt))?;
        let path = out.join(format!("evaluate_{id}.csv"));
        write_results(&path, &rows)?;
        print_rows(&rows);
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn parse(text: &str) -> Result<()> {
    let goal = parse_intent(text).map_err(|e| Error::Config(e.to_string()))?;
    println!("parsed: {goal}");
    println!("{}", serde_json::to_string_pretty(&goal)?);
    let slas = ranslice_core::sla::SliceKind::ALL.map(SliceSla::for_kind);
    let store = ContextStore::from_slas(&slas);
    let ctx = retrieve_context(&goal, &store);
    match validate_goal(&goal, &slas, &ctx, &ValidationLimits::default()) {
        Ok(v) => println!("accepted: {}", serde_json::to_string(&v.region)?),
        Err(r) => bail!(Error::Config(r.to_string())),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let out = cli.out;
    match cli.cmd {
        Cmd::Simulate { common, seed, full_trace } => simulate(&out, &common, seed, full_trace),
        Cmd::Scenario { common, id, controllers, seeds } => scenario(&out, &common, &id, &controllers, seeds),
        Cmd::GenerateDataset { config, episodes, steps, seed, file } => {
            let cfg = load_config(config.as_deref())?;
            let ds = generate_offline_dataset(&cfg, episodes, steps, seed)?;
            std::fs::create_dir_all(&out)?;
            let path = out.join(file);
            ds.save(&path)?;
            println!("{} episodes, {} decisions -> {}", episodes, ds.record_count(), path.display());
            Ok(())
        }
        Cmd::TrainHdm { dataset, train_config, epochs, seed, held_out } => {
            train(&out, &dataset, train_config.as_deref(), epochs, seed, held_out)
        }
        Cmd::Evaluate { config, hdm, dt, scenarios, seeds } => evaluate(&out, config.as_deref(), hdm, dt, &scenarios, seeds),
        Cmd::ParseIntent { text } => parse(&text),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = matches!(
                e.downcast_ref::<Error>(),
                Some(Error::Config(_) | Error::UnknownScenario(_))
            );
            ExitCode::from(if config { EXIT_CONFIG } else { EXIT_RUNTIME })
        }
    }
}
