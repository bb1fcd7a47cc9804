//! Experiment orchestration: configuration, scenarios, seeded day runs,
//! controller comparisons and training campaigns.

pub mod output;
pub mod plot;

use serde::{Deserialize, Serialize};

use crate::controllers::{ActuatedConfig, Controller, DrlController, FixedTimeController, FixedTimePlan, SemiActuatedController, DEFAULT_PLAN_WINDOWS};
use crate::dqn::network::{NetworkSpec, QNetwork};
use crate::dqn::replay::ReplayBuffer;
use crate::dqn::training::{run_training, DaySummary, TrainingRun};
use crate::dqn::{Checkpoint, EpsilonSchedule, Learner, TrainConfig};
use crate::env::{EnvConfig, Environment};
use crate::error::{Error, Result};
use crate::signal::{Interval, RingBarrierPlan};
use crate::sim::{ApproachId, VolumeProfile, NUM_APPROACHES, SECONDS_PER_DAY};

/// Width of the delay aggregation bins.
pub const BIN_S: u32 = 900;

/// A named set of volume overrides layered on the base profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub overrides: Vec<VolumeOverride>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeOverride {
    /// EB, WB, NB or SB.
    pub approach: String,
    pub start_s: u32,
    pub end_s: u32,
    pub vph: f64,
}

impl ScenarioSpec {
    /// Southbound minor-street surge from 175 to 600 veh/h, 21:00 to 23:00.
    pub fn surge() -> ScenarioSpec {
        ScenarioSpec {
            name: "surge".into(),
            overrides: vec![VolumeOverride { approach: "SB".into(), start_s: 21 * 3600, end_s: 23 * 3600, vph: 600.0 }],
        }
    }

    /// The same surge placed at 20:00 to 21:00.
    pub fn surge_early() -> ScenarioSpec {
        ScenarioSpec {
            name: "surge_early".into(),
            overrides: vec![VolumeOverride { approach: "SB".into(), start_s: 20 * 3600, end_s: 21 * 3600, vph: 600.0 }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for o in &self.overrides {
            ApproachId::parse(&o.approach)?;
            if o.start_s >= o.end_s || o.end_s as u64 > SECONDS_PER_DAY {
                return Err(Error::Config(format!("scenario {}: window [{}, {}) invalid", self.name, o.start_s, o.end_s)));
            }
            if !(o.vph.is_finite() && o.vph >= 0.0) {
                return Err(Error::Config(format!("scenario {}: volume must be non-negative", self.name)));
            }
        }
        Ok(())
    }

    pub fn apply(&self, base: &VolumeProfile) -> Result<VolumeProfile> {
        self.validate()?;
        let mut p = base.clone();
        for o in &self.overrides {
            p = p.with_override(ApproachId::parse(&o.approach)?, o.start_s, o.end_s, o.vph)?;
        }
        Ok(p)
    }

    /// Whether `second_of_day` falls inside any override window.
    pub fn covers(&self, second_of_day: u32) -> bool {
        self.overrides.iter().any(|o| second_of_day >= o.start_s && second_of_day < o.end_s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub scenarios: Vec<ScenarioSpec>,
    pub actuated: ActuatedConfig,
    /// Time-of-day fixed-time plans; sized by Webster from the base profile when absent.
    pub fixed_time: Option<FixedTimePlan>,
    pub train: TrainConfig,
    pub epsilon: EpsilonSchedule,
    pub training_days: u64,
    pub evaluation_days: u64,
    /// Master seed: training arrivals, exploration, and held-out evaluation days.
    pub seed: u64,
    /// Compresses the ε schedule and the training length by this factor.
    pub time_scale: f64,
    /// Further encoder sizes trained alongside the main one for learning-curve comparison.
    pub extra_network_sizes: Vec<usize>,
    /// Training days for the extra sizes, scaled like `training_days`; the
    /// main size's count when absent.
    pub extra_network_days: Option<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            env: EnvConfig::default(),
            scenarios: vec![ScenarioSpec::surge(), ScenarioSpec::surge_early()],
            actuated: ActuatedConfig::default(),
            fixed_time: None,
            train: TrainConfig::default(),
            epsilon: EpsilonSchedule::default(),
            training_days: 61,
            evaluation_days: 2,
            seed: 1,
            time_scale: 1.0,
            extra_network_sizes: Vec::new(),
            extra_network_days: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<ExperimentConfig> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        for s in &self.scenarios {
            s.validate()?;
        }
        let plan = self.signal_plan();
        self.actuated.validate(&plan)?;
        if let Some(ft) = &self.fixed_time {
            ft.validate(&plan)?;
        }
        self.train.validate()?;
        self.effective_schedule().validate()?;
        if self.training_days == 0 || self.evaluation_days == 0 || self.extra_network_days == Some(0) {
            return Err(Error::Config("training and evaluation days must be at least 1".into()));
        }
        if !(self.time_scale.is_finite() && self.time_scale > 0.0) {
            return Err(Error::Config("time scale must be positive".into()));
        }
        for s in &self.extra_network_sizes {
            NetworkSpec::for_matrix_size(*s)?;
        }
        Ok(())
    }

    pub fn signal_plan(&self) -> RingBarrierPlan {
        RingBarrierPlan::two_phase(self.env.timing)
    }

    pub fn effective_schedule(&self) -> EpsilonSchedule {
        let s = self.time_scale;
        EpsilonSchedule {
            observe_end_s: (self.epsilon.observe_end_s as f64 * s).round() as u64,
            explore_end_s: (self.epsilon.explore_end_s as f64 * s).round() as u64,
            ..self.epsilon
        }
    }

    pub fn effective_training_days(&self) -> u64 {
        self.scaled_days(self.training_days)
    }

    fn scaled_days(&self, days: u64) -> u64 {
        ((days as f64 * self.time_scale).round() as u64).max(1)
    }

    pub fn scenario(&self, name: &str) -> Result<&ScenarioSpec> {
        self.scenarios
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::Config(format!("no scenario named {name:?}")))
    }

    pub fn fixed_time_plan(&self) -> Result<FixedTimePlan> {
        match &self.fixed_time {
            Some(ft) => Ok(ft.clone()),
            None => FixedTimePlan::from_profile(&self.env.profile, &self.env.dynamics, &self.signal_plan(), &DEFAULT_PLAN_WINDOWS),
        }
    }

    /// Arrival seed of held-out evaluation day `d`, derived apart from the training stream.
    pub fn evaluation_seed(&self, d: u64) -> u64 {
        mix(self.seed ^ 0xE7A1_u64.rotate_left(48)).wrapping_add(d.wrapping_mul(0x9E37_79B9_7F4A_7C15)) | 1
    }

    pub fn fixed_time_controller(&self) -> Result<FixedTimeController> {
        Ok(FixedTimeController { plan: self.fixed_time_plan()? })
    }

    pub fn actuated_controller(&self) -> Result<SemiActuatedController> {
        Ok(SemiActuatedController::new(self.actuated.clone(), Some(self.fixed_time_plan()?)))
    }
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VehicleRecord {
    pub approach: ApproachId,
    pub arrival_s: u64,
    pub at_stopline_s: u64,
    pub depart_s: Option<u64>,
    /// Stop-line to departure; vehicles still queued at day end are charged
    /// up to the end of the day, those still travelling carry zero.
    pub delay_s: u64,
}

impl VehicleRecord {
    /// Seconds spent on the links before `day_end_s`.
    pub fn travel_time_s(&self, day_end_s: u64) -> u64 {
        self.depart_s.unwrap_or(day_end_s).min(day_end_s) - self.arrival_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub t: u64,
    pub action: String,
    pub queues: [u32; NUM_APPROACHES],
    pub reward: f64,
    pub ring1: String,
    pub ring2: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub controller: String,
    pub seed: u64,
    pub day_end_s: u64,
    pub vehicles: Vec<VehicleRecord>,
    pub ticks: Vec<TickRecord>,
    /// FNV-1a digest of the per-second arrival counts.
    pub arrival_stream_hash: u64,
    pub total_travel_time_s: u64,
    pub total_reward: f64,
}

impl MetricsLog {
    /// Vehicles that reached the stop line during the day; the population for delay statistics.
    pub fn delay_population(&self) -> impl Iterator<Item = &VehicleRecord> {
        let end = self.day_end_s;
        self.vehicles.iter().filter(move |v| v.at_stopline_s < end)
    }

    pub fn mean_delay_s(&self) -> f64 {
        let (n, sum) = self.delay_population().fold((0u64, 0u64), |(n, s), v| (n + 1, s + v.delay_s));
        if n == 0 {
            0.0
        } else {
            sum as f64 / n as f64
        }
    }
}

fn fnv1a(hash: &mut u64, bytes: &[u8]) {
    for b in bytes {
        *hash ^= *b as u64;
        *hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
}

fn ring_label(env: &Environment, ring: usize) -> String {
    let rs = &env.signal().rings[ring];
    let id = env.signal().phase_id(env.plan(), ring);
    let iv = match rs.interval {
        Interval::Green => "G",
        Interval::Yellow => "Y",
        Interval::AllRed => "R",
    };
    format!("{id}{iv}{}", rs.time_in_interval_s)
}

/// Simulates one day from an empty intersection at midnight.
pub fn run_day(controller: &mut dyn Controller, env_cfg: &EnvConfig, seed: u64, record_ticks: bool) -> Result<MetricsLog> {
    let mut env = Environment::new(env_cfg.clone(), seed, controller.needs_frames())?;
    let mut log = MetricsLog {
        controller: controller.name().to_string(),
        seed,
        day_end_s: SECONDS_PER_DAY,
        vehicles: Vec::new(),
        ticks: Vec::new(),
        arrival_stream_hash: 0xCBF2_9CE4_8422_2325,
        total_travel_time_s: 0,
        total_reward: 0.0,
    };
    for _ in 0..SECONDS_PER_DAY {
        let action = controller.act(&env.observation())?;
        let (r1, r2) = if record_ticks { (ring_label(&env, 0), ring_label(&env, 1)) } else { Default::default() };
        let report = env.step(action, 0)?;
        for a in report.arrivals {
            fnv1a(&mut log.arrival_stream_hash, &a.to_le_bytes());
        }
        log.total_travel_time_s += report.in_system as u64;
        log.total_reward += report.reward;
        for v in &report.departed {
            log.vehicles.push(VehicleRecord {
                approach: v.approach,
                arrival_s: v.arrival_s,
                at_stopline_s: v.at_stopline_s,
                depart_s: v.depart_s,
                delay_s: v.delay().unwrap_or(0),
            });
        }
        if record_ticks {
            log.ticks.push(TickRecord {
                t: report.clock.t,
                action: action.name().to_string(),
                queues: report.outcome.approaches.map(|a| a.queue_after),
                reward: report.reward,
                ring1: r1,
                ring2: r2,
            });
        }
    }
    let end = log.day_end_s;
    for v in env.simulator().vehicles_in_system() {
        log.vehicles.push(VehicleRecord {
            approach: v.approach,
            arrival_s: v.arrival_s,
            at_stopline_s: v.at_stopline_s,
            depart_s: None,
            delay_s: end.saturating_sub(v.at_stopline_s),
        });
    }
    log.vehicles.sort_by_key(|v| (v.arrival_s, v.approach, v.at_stopline_s, v.depart_s.unwrap_or(u64::MAX)));
    Ok(log)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinStat {
    pub start_s: u32,
    pub vehicles: u64,
    pub mean_delay_s: f64,
    /// Inside the scenario's override window.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerSummary {
    pub controller: String,
    pub days: u64,
    pub vehicles: u64,
    pub mean_delay_s: f64,
    pub total_travel_time_s: u64,
    pub bins: Vec<BinStat>,
    /// Mean delay of vehicles reaching the stop line inside the scenario window.
    pub window_mean_delay_s: Option<f64>,
}

/// Per-controller aggregates over the same seeded days.
pub fn summarize(controller: &str, logs: &[MetricsLog], scenario: Option<&ScenarioSpec>) -> ControllerSummary {
    let n_bins = (SECONDS_PER_DAY as u32 / BIN_S) as usize;
    let mut counts = vec![0u64; n_bins];
    let mut sums = vec![0u64; n_bins];
    let (mut wn, mut ws) = (0u64, 0u64);
    for log in logs {
        for v in log.delay_population() {
            let sod = (v.at_stopline_s % SECONDS_PER_DAY) as u32;
            let b = (sod / BIN_S) as usize;
            counts[b] += 1;
            sums[b] += v.delay_s;
            if scenario.is_some_and(|s| s.covers(sod)) {
                wn += 1;
                ws += v.delay_s;
            }
        }
    }
    let vehicles: u64 = counts.iter().sum();
    let total: u64 = sums.iter().sum();
    ControllerSummary {
        controller: controller.to_string(),
        days: logs.len() as u64,
        vehicles,
        mean_delay_s: if vehicles == 0 { 0.0 } else { total as f64 / vehicles as f64 },
        total_travel_time_s: logs.iter().map(|l| l.total_travel_time_s).sum(),
        bins: (0..n_bins)
            .map(|b| BinStat {
                start_s: b as u32 * BIN_S,
                vehicles: counts[b],
                mean_delay_s: if counts[b] == 0 { 0.0 } else { sums[b] as f64 / counts[b] as f64 },
                flagged: scenario.is_some_and(|s| s.covers(b as u32 * BIN_S)),
            })
            .collect(),
        window_mean_delay_s: scenario.map(|_| if wn == 0 { 0.0 } else { ws as f64 / wn as f64 }),
    }
}

/// Relative reduction of `ours` against `baseline`, in percent.
pub fn reduction_pct(ours: f64, baseline: f64) -> f64 {
    if baseline == 0.0 {
        0.0
    } else {
        (baseline - ours) / baseline * 100.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub scenario: Option<String>,
    pub summaries: Vec<ControllerSummary>,
    /// (learned vs baseline name, whole-day reduction %).
    pub reductions: Vec<(String, f64)>,
    pub logs: Vec<MetricsLog>,
}

impl Comparison {
    pub fn summary(&self, controller: &str) -> Option<&ControllerSummary> {
        self.summaries.iter().find(|s| s.controller == controller)
    }
}

/// Runs the learned policy and both baselines on the same held-out seed days.
pub fn compare_controllers(cfg: &ExperimentConfig, network: &QNetwork, scenario: Option<&ScenarioSpec>) -> Result<Comparison> {
    cfg.validate()?;
    if network.spec().input_size != cfg.env.encoder_size {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint expects {}x{} matrices, config encodes {}x{}",
            network.spec().input_size,
            network.spec().input_size,
            cfg.env.encoder_size,
            cfg.env.encoder_size
        )));
    }
    let mut env_cfg = cfg.env.clone();
    if let Some(s) = scenario {
        env_cfg.profile = s.apply(&cfg.env.profile)?;
    }
    let mut controllers: Vec<Box<dyn Controller>> = vec![
        Box::new(DrlController { network: network.clone() }),
        Box::new(cfg.actuated_controller()?),
        Box::new(cfg.fixed_time_controller()?),
    ];
    let mut summaries = Vec::new();
    let mut all_logs = Vec::new();
    for c in controllers.iter_mut() {
        let mut logs = Vec::new();
        for d in 0..cfg.evaluation_days {
            logs.push(run_day(c.as_mut(), &env_cfg, cfg.evaluation_seed(d), false)?);
        }
        summaries.push(summarize(c.name(), &logs, scenario));
        all_logs.extend(logs);
    }
    let ours = summaries[0].mean_delay_s;
    let reductions = summaries[1..]
        .iter()
        .map(|s| (s.controller.clone(), reduction_pct(ours, s.mean_delay_s)))
        .collect();
    Ok(Comparison { scenario: scenario.map(|s| s.name.clone()), summaries, reductions, logs: all_logs })
}

/// Held-out evaluation of a single controller on the configured evaluation days.
pub fn evaluate(cfg: &ExperimentConfig, controller: &mut dyn Controller, scenario: Option<&ScenarioSpec>) -> Result<(ControllerSummary, Vec<MetricsLog>)> {
    let mut env_cfg = cfg.env.clone();
    if let Some(s) = scenario {
        env_cfg.profile = s.apply(&cfg.env.profile)?;
    }
    let mut logs = Vec::new();
    for d in 0..cfg.evaluation_days {
        logs.push(run_day(controller, &env_cfg, cfg.evaluation_seed(d), false)?);
    }
    Ok((summarize(controller.name(), &logs, scenario), logs))
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub encoder_size: usize,
    pub checkpoint: Checkpoint,
    pub run: TrainingRun,
}

/// Trains one network per requested encoder size (the configured one first),
/// each on the same seeded arrival stream.
pub fn train_experiment(cfg: &ExperimentConfig, mut on_day: impl FnMut(usize, &DaySummary)) -> Result<Vec<TrainedModel>> {
    cfg.validate()?;
    let mut sizes = vec![cfg.env.encoder_size];
    sizes.extend(cfg.extra_network_sizes.iter().copied().filter(|s| *s != cfg.env.encoder_size));
    let sched = cfg.effective_schedule();
    let mut out = Vec::new();
    for (i, size) in sizes.into_iter().enumerate() {
        let days = match cfg.extra_network_days {
            Some(d) if i > 0 => cfg.scaled_days(d),
            _ => cfg.effective_training_days(),
        };
        let env_cfg = EnvConfig { encoder_size: size, ..cfg.env.clone() };
        let mut env = Environment::new(env_cfg, cfg.seed, true)?;
        let mut learner = Learner::new(NetworkSpec::for_matrix_size(size)?, cfg.train.clone())?;
        let mut replay = ReplayBuffer::new(cfg.train.replay_capacity);
        let run = run_training(&mut env, &mut learner, &mut replay, &sched, days, cfg.seed, |d| on_day(size, d))?;
        out.push(TrainedModel { encoder_size: size, checkpoint: learner.checkpoint(), run });
    }
    Ok(out)
}
