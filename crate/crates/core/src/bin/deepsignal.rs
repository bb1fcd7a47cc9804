use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use deepsignal::controllers::{Controller, DrlController};
use deepsignal::dqn::Checkpoint;
use deepsignal::encoder::render_stack;
use deepsignal::env::Environment;
use deepsignal::harness::output::{write_bins, write_summary, write_training_days, write_training_log, write_vehicles};
use deepsignal::harness::plot::{Chart, Series};
use deepsignal::harness::{compare_controllers, evaluate, train_experiment, Comparison, ExperimentConfig, ScenarioSpec};

#[derive(Parser)]
#[command(name = "deepsignal", about = "Deep Q-learning signal control for an isolated intersection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a Q-network and write the checkpoint and learning curve.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configured (unscaled) number of training days.
        #[arg(long)]
        days: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run a checkpoint greedily on the held-out evaluation days.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Compare a checkpoint with the fixed-time and semi-actuated baselines.
    Compare {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Evaluate only the two baselines.
    Baselines {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        scenario: Option<String>,
    },
    /// Print the encoded state after running the fixed-time plan for a while.
    DumpState {
        #[arg(long)]
        ascii: bool,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seconds after midnight to stop at.
        #[arg(long, default_value_t = 8 * 3600)]
        at: u64,
        #[arg(long)]
        size: Option<usize>,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train { config, days, seed, out } => train(&config, days, seed, &out),
        Command::Evaluate { checkpoint, config, scenario, out } => run_evaluate(&checkpoint, &config, scenario, &out),
        Command::Compare { checkpoint, config, scenario, out } => compare(&checkpoint, &config, scenario, &out),
        Command::Baselines { config, scenario } => baselines(&config, scenario),
        Command::DumpState { ascii, config, at, size } => dump_state(ascii, config, at, size),
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("loading config {}", path.display()))
}

fn scenario_of<'a>(cfg: &'a ExperimentConfig, name: &Option<String>) -> Result<Option<&'a ScenarioSpec>> {
    Ok(match name {
        Some(n) => Some(cfg.scenario(n)?),
        None => None,
    })
}

fn train(config: &Path, days: Option<u64>, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(d) = days {
        cfg.training_days = d;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    let started = Instant::now();
    let models = train_experiment(&cfg, |size, d| {
        eprintln!(
            "[{size}x{size}] day {:>3}  ttt {:>10} s  mean delay {:>7.2} s  eps {:.3}  loss {}  steps {}  ({:.0} s)",
            d.day,
            d.total_travel_time_s,
            d.mean_delay_s,
            d.epsilon_end,
            d.mean_loss.map(|l| format!("{l:.4e}")).unwrap_or_else(|| "-".into()),
            d.gradient_steps,
            started.elapsed().as_secs_f64()
        );
    })?;
    let mut curves = Vec::new();
    for (i, m) in models.iter().enumerate() {
        let suffix = if i == 0 { String::new() } else { format!("_{}", m.encoder_size) };
        m.checkpoint.save(&out.join(format!("checkpoint{suffix}.json")))?;
        write_training_days(&out.join(format!("training_days{suffix}.csv")), &m.run.days)?;
        write_training_log(&out.join(format!("training_log{suffix}.csv")), &m.run.log)?;
        curves.push((m.encoder_size, m.run.days.iter().map(|d| (d.day as f64, d.total_travel_time_s as f64)).collect()));
    }
    let names: Vec<String> = curves.iter().map(|(s, _)| format!("{s}x{s}")).collect();
    let chart = Chart {
        title: "Total travel time per training day",
        x_label: "day",
        y_label: "vehicle-seconds",
        series: curves.into_iter().zip(&names).map(|((_, p), n)| Series { name: n, points: p }).collect(),
        highlight: None,
    };
    std::fs::write(out.join("learning_curve.svg"), chart.to_svg())?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn load_controller(checkpoint: &Path) -> Result<DrlController> {
    let ck = Checkpoint::load(checkpoint).with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    Ok(DrlController { network: ck.network()? })
}

fn run_evaluate(checkpoint: &Path, config: &Path, scenario: Option<String>, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let mut drl = load_controller(checkpoint)?;
    let sc = scenario_of(&cfg, &scenario)?;
    let (summary, logs) = evaluate(&cfg, &mut drl, sc)?;
    std::fs::create_dir_all(out)?;
    write_vehicles(&out.join("evaluation_vehicles.csv"), &logs)?;
    println!(
        "{}: {} days, {} vehicles, mean delay {:.2} s, total travel time {} s",
        summary.controller, summary.days, summary.vehicles, summary.mean_delay_s, summary.total_travel_time_s
    );
    if let Some(w) = summary.window_mean_delay_s {
        println!("  scenario window mean delay {w:.2} s");
    }
    Ok(())
}

fn print_comparison(cmp: &Comparison) {
    for s in &cmp.summaries {
        print!("{:<14} mean delay {:>7.2} s  vehicles {:>7}  ttt {:>11} s", s.controller, s.mean_delay_s, s.vehicles, s.total_travel_time_s);
        if let Some(w) = s.window_mean_delay_s {
            print!("  window {w:>7.2} s");
        }
        println!();
    }
    for (name, r) in &cmp.reductions {
        println!("delay reduction vs {name}: {r:.1}%");
    }
}

fn compare(checkpoint: &Path, config: &Path, scenario: Option<String>, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let drl = load_controller(checkpoint)?;
    let sc = scenario_of(&cfg, &scenario)?;
    let cmp = compare_controllers(&cfg, &drl.network, sc)?;
    std::fs::create_dir_all(out)?;
    let tag = scenario.as_deref().map(|s| format!("_{s}")).unwrap_or_default();
    write_summary(&out.join(format!("summary{tag}.csv")), &cmp)?;
    write_bins(&out.join(format!("delay_bins{tag}.csv")), &cmp)?;
    write_vehicles(&out.join(format!("vehicles{tag}.csv")), &cmp.logs)?;
    let highlight = sc.and_then(|s| {
        let lo = s.overrides.iter().map(|o| o.start_s).min()?;
        let hi = s.overrides.iter().map(|o| o.end_s).max()?;
        Some((lo as f64 / 3600.0, hi as f64 / 3600.0))
    });
    let chart = Chart {
        title: "Average delay per 15 minutes",
        x_label: "hour of day",
        y_label: "mean delay (s)",
        series: cmp
            .summaries
            .iter()
            .map(|s| Series {
                name: &s.controller,
                points: s.bins.iter().map(|b| (b.start_s as f64 / 3600.0, b.mean_delay_s)).collect(),
            })
            .collect(),
        highlight,
    };
    std::fs::write(out.join(format!("delay_profile{tag}.svg")), chart.to_svg())?;
    print_comparison(&cmp);
    Ok(())
}

fn baselines(config: &Path, scenario: Option<String>) -> Result<()> {
    let cfg = load_config(config)?;
    let sc = scenario_of(&cfg, &scenario)?;
    let mut cs: Vec<Box<dyn Controller>> = vec![Box::new(cfg.actuated_controller()?), Box::new(cfg.fixed_time_controller()?)];
    for c in cs.iter_mut() {
        let (s, _) = evaluate(&cfg, c.as_mut(), sc)?;
        print!("{:<14} mean delay {:>7.2} s  vehicles {:>7}  ttt {:>11} s", s.controller, s.mean_delay_s, s.vehicles, s.total_travel_time_s);
        if let Some(w) = s.window_mean_delay_s {
            print!("  window {w:>7.2} s");
        }
        println!();
    }
    Ok(())
}

fn dump_state(ascii: bool, config: Option<PathBuf>, at: u64, size: Option<usize>) -> Result<()> {
    if !ascii {
        bail!("only --ascii output is supported");
    }
    let mut cfg = match config {
        Some(p) => load_config(&p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = size {
        cfg.env.encoder_size = s;
    }
    let mut ft = cfg.fixed_time_controller()?;
    let mut env = Environment::new(cfg.env.clone(), cfg.seed, true)?;
    for _ in 0..at {
        let a = ft.act(&env.observation())?;
        env.step(a, 0)?;
    }
    let clock = env.clock();
    println!(
        "t={} ({:02}:{:02}:{:02}, day-of-week {})  queues {:?}",
        clock.t,
        clock.second_of_day / 3600,
        clock.second_of_day % 3600 / 60,
        clock.second_of_day % 60,
        clock.day_of_week,
        env.simulator().queue_lengths()
    );
    print!("{}", render_stack(env.frames().expect("frames enabled")));
    Ok(())
}
