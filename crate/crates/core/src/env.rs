//! One intersection wired end to end: arrivals, signal, simulator, encoder and reward.
//!
//! Each call to [`Environment::step`] is one second: the chosen action is
//! applied, the resulting displays are shown while arrivals are sampled and the
//! simulator ticks, the reward is scored, and the signal clock advances.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controllers::Observation;
use crate::encoder::{encode, layout_for, EncoderLayout, FrameStack};
use crate::error::Result;
use crate::reward::{compute_reward, RewardConfig};
use crate::signal::{
    apply_action, indications, tick_signal, valid_actions, Action, ActionMask, IntervalTiming, RingBarrierPlan,
    RingBarrierState,
};
use crate::sim::{
    ApproachId, ArrivalGenerator, DynamicsConfig, Indication, SimClock, Simulator, TickOutcome, Vehicle,
    VolumeProfile, NUM_APPROACHES, SECONDS_PER_DAY,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub profile: VolumeProfile,
    pub dynamics: DynamicsConfig,
    pub timing: IntervalTiming,
    pub reward: RewardConfig,
    /// State matrix side: 80 or 24.
    pub encoder_size: usize,
    /// 0 = Monday.
    pub start_day_of_week: u8,
    /// Detector look-ahead for vehicles about to reach the stop line.
    pub detector_lookahead_s: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            profile: VolumeProfile::default_diurnal(),
            dynamics: DynamicsConfig::default(),
            timing: IntervalTiming::default(),
            reward: RewardConfig::default(),
            encoder_size: 80,
            start_day_of_week: 0,
            detector_lookahead_s: 2,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.profile.validate()?;
        self.dynamics.validate()?;
        self.reward.validate()?;
        let plan = RingBarrierPlan::two_phase(self.timing);
        plan.validate()?;
        layout_for(self.encoder_size, &plan, NUM_APPROACHES)?;
        if self.start_day_of_week > 6 {
            return Err(crate::Error::Config("start day of week must be 0..=6".into()));
        }
        Ok(())
    }
}

/// Everything observable about one simulated second.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub clock: SimClock,
    pub action: Action,
    pub indications: [Indication; NUM_APPROACHES],
    pub arrivals: [u32; NUM_APPROACHES],
    pub outcome: TickOutcome,
    pub reward: f64,
    pub departed: Vec<Vehicle>,
    /// Vehicles on the links once the second is over.
    pub in_system: usize,
}

#[derive(Debug, Clone)]
pub struct Environment {
    cfg: EnvConfig,
    plan: RingBarrierPlan,
    layout: EncoderLayout,
    sim: Simulator,
    signal: RingBarrierState,
    arrivals: ArrivalGenerator,
    rng: ChaCha8Rng,
    seed: u64,
    t: u64,
    frames: Option<FrameStack>,
}

impl Environment {
    /// Starts at midnight with empty links and every ring green on its first phase.
    /// With `encode_frames`, a frame stack is maintained for learned policies.
    pub fn new(cfg: EnvConfig, seed: u64, encode_frames: bool) -> Result<Environment> {
        cfg.validate()?;
        let plan = RingBarrierPlan::two_phase(cfg.timing);
        let layout = layout_for(cfg.encoder_size, &plan, NUM_APPROACHES)?;
        let mut env = Environment {
            sim: Simulator::new(cfg.dynamics),
            signal: RingBarrierState::initial(&plan),
            arrivals: ArrivalGenerator::new(cfg.dynamics.arrival_mode),
            rng: day_rng(seed, 0),
            seed,
            t: 0,
            frames: None,
            plan,
            layout,
            cfg,
        };
        if encode_frames {
            env.frames = Some(FrameStack::new(env.encode_now()));
        }
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn plan(&self) -> &RingBarrierPlan {
        &self.plan
    }

    pub fn layout(&self) -> &EncoderLayout {
        &self.layout
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }

    pub fn signal(&self) -> &RingBarrierState {
        &self.signal
    }

    pub fn time(&self) -> u64 {
        self.t
    }

    pub fn clock(&self) -> SimClock {
        SimClock::at(self.t, self.cfg.start_day_of_week)
    }

    pub fn frames(&self) -> Option<&FrameStack> {
        self.frames.as_ref()
    }

    pub fn mask(&self) -> ActionMask {
        valid_actions(&self.signal, &self.plan)
    }

    pub fn observation(&self) -> Observation<'_> {
        let now = self.t;
        let look = self.cfg.detector_lookahead_s;
        Observation {
            clock: self.clock(),
            signal: &self.signal,
            plan: &self.plan,
            mask: self.mask(),
            queues: self.sim.queue_lengths(),
            detectors: ApproachId::ALL.map(|a| self.sim.detector_occupied(a, now, look)),
            frames: self.frames.as_ref(),
        }
    }

    fn encode_now(&self) -> crate::encoder::StateMatrix {
        encode(&self.sim.queue_lengths(), &self.signal, &self.clock(), &self.layout)
    }

    /// Advances one second. `lockout_s` holds the signal (DoNothing only) for
    /// that many further seconds after the action is applied.
    pub fn step(&mut self, action: Action, lockout_s: u32) -> Result<StepReport> {
        let clock = self.clock();
        if clock.second_of_day == 0 {
            self.rng = day_rng(self.seed, clock.day_index);
        }
        self.signal = apply_action(&self.signal, action, &self.plan)?;
        if lockout_s > 0 {
            self.signal.request_lockout(lockout_s);
        }
        let shown = indications(&self.signal, &self.plan);
        let arrivals = self.arrivals.sample_arrivals(&self.cfg.profile, &clock, &mut self.rng);
        let outcome = self.sim.tick(&shown, &arrivals, &clock)?;
        let reward = compute_reward(&outcome, &self.cfg.reward);
        self.signal = tick_signal(&self.signal, &self.plan);
        self.t += 1;
        if self.frames.is_some() {
            let m = self.encode_now();
            if let Some(f) = self.frames.as_mut() {
                f.push(m);
            }
        }
        Ok(StepReport {
            clock,
            action,
            indications: shown,
            arrivals,
            outcome,
            reward,
            departed: self.sim.drain_departed(),
            in_system: self.sim.in_system(),
        })
    }

    /// True when the next step starts a new day.
    pub fn at_day_boundary(&self) -> bool {
        self.t % SECONDS_PER_DAY == 0
    }
}

/// Tracks displayed green runs per approach and counts any shorter than the minimum.
#[derive(Debug, Clone, Default)]
pub struct GreenAudit {
    run_s: [u32; NUM_APPROACHES],
    pub greens_completed: u64,
    pub short_greens: u64,
    pub conflicting_greens: u64,
}

impl GreenAudit {
    pub fn observe(&mut self, shown: &[Indication; NUM_APPROACHES], min_green_s: u32) {
        for a in ApproachId::ALL {
            if shown[a.0] == Indication::Green {
                self.run_s[a.0] += 1;
            } else if self.run_s[a.0] > 0 {
                self.greens_completed += 1;
                if self.run_s[a.0] < min_green_s {
                    self.short_greens += 1;
                }
                self.run_s[a.0] = 0;
            }
            for b in ApproachId::ALL {
                if a < b
                    && shown[a.0] == Indication::Green
                    && shown[b.0] == Indication::Green
                    && crate::sim::approaches_conflict(a, b)
                {
                    self.conflicting_greens += 1;
                }
            }
        }
    }
}

/// Arrival stream for one day: the master seed picks the generator, the day its stream.
fn day_rng(seed: u64, day: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(day);
    rng
}
