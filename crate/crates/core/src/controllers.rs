//! Baseline controllers and the learned-policy adapter, all behind [`Controller`].

use serde::{Deserialize, Serialize};

use crate::dqn::network::QNetwork;
use crate::dqn::masked_argmax;
use crate::encoder::FrameStack;
use crate::error::{Error, Result};
use crate::signal::{Action, ActionMask, Interval, RingBarrierPlan, RingBarrierState};
use crate::sim::{ApproachId, DynamicsConfig, SimClock, VolumeProfile, NUM_APPROACHES, SECONDS_PER_DAY};

/// What a controller sees at the start of each second.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub clock: SimClock,
    pub signal: &'a RingBarrierState,
    pub plan: &'a RingBarrierPlan,
    pub mask: ActionMask,
    pub queues: [u32; NUM_APPROACHES],
    /// Stop-line presence detectors.
    pub detectors: [bool; NUM_APPROACHES],
    pub frames: Option<&'a FrameStack>,
}

pub trait Controller {
    fn name(&self) -> &str;

    /// Whether [`Observation::frames`] must be populated.
    fn needs_frames(&self) -> bool {
        false
    }

    fn act(&mut self, obs: &Observation<'_>) -> Result<Action>;
}

/// One cycle: split per ring-1 phase position, green plus clearance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingPlan {
    pub name: String,
    pub cycle_s: u32,
    pub splits_s: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanWindow {
    pub start_s: u32,
    pub end_s: u32,
    pub plan: String,
}

/// Time-of-day plan schedule covering the whole day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedTimePlan {
    pub plans: Vec<TimingPlan>,
    pub schedule: Vec<PlanWindow>,
}

/// Default plan windows: AM peak, midday, PM peak, evening. Night runs the evening plan.
pub const DEFAULT_PLAN_WINDOWS: [(&str, u32, u32); 4] = [
    ("am_peak", 6 * 3600, 10 * 3600),
    ("midday", 10 * 3600, 15 * 3600),
    ("pm_peak", 15 * 3600, 19 * 3600),
    ("evening", 19 * 3600, 23 * 3600),
];

impl FixedTimePlan {
    /// Four Webster plans, each sized on the busiest hour of its window.
    pub fn from_profile(
        profile: &VolumeProfile,
        dynamics: &DynamicsConfig,
        plan: &RingBarrierPlan,
        windows: &[(&str, u32, u32)],
    ) -> Result<FixedTimePlan> {
        let n = plan.ring_len(0);
        let phases: Vec<_> = (0..n).map(|p| plan.phase_at(0, p)).collect();
        let lost: f64 = phases
            .iter()
            .map(|p| (dynamics.startup_lost_time_s + p.clearance_s()) as f64)
            .sum();
        let min_splits: Vec<u32> = phases.iter().map(|p| p.min_green_s + p.clearance_s()).collect();
        let mut plans = Vec::new();
        for (name, start, end) in windows {
            let vols = profile.peak_hour(*start, *end);
            let critical: Vec<f64> = phases
                .iter()
                .map(|p| p.served_approaches.iter().map(|a| vols[a.0]).fold(0.0, f64::max))
                .collect();
            let mut tp = webster_plan(&critical, dynamics.saturation_flow_vph(), lost)?;
            tp.enforce_min_splits(&min_splits)?;
            tp.name = name.to_string();
            plans.push(tp);
        }
        let mut schedule = Vec::new();
        let mut sorted: Vec<_> = windows.to_vec();
        sorted.sort_by_key(|w| w.1);
        let fallback = sorted.last().map(|w| w.0.to_string()).unwrap_or_default();
        let mut cursor = 0;
        for (name, start, end) in &sorted {
            if *start > cursor {
                schedule.push(PlanWindow { start_s: cursor, end_s: *start, plan: fallback.clone() });
            }
            schedule.push(PlanWindow { start_s: *start, end_s: *end, plan: name.to_string() });
            cursor = *end;
        }
        if (cursor as u64) < SECONDS_PER_DAY {
            schedule.push(PlanWindow { start_s: cursor, end_s: SECONDS_PER_DAY as u32, plan: fallback });
        }
        let out = FixedTimePlan { plans, schedule };
        out.validate(plan)?;
        Ok(out)
    }

    /// Schedule gaps, unknown plan names and splits that cannot hold minimum
    /// green plus clearance are load-time errors.
    pub fn validate(&self, plan: &RingBarrierPlan) -> Result<()> {
        let mut cursor = 0u32;
        for w in &self.schedule {
            if w.start_s != cursor || w.end_s <= w.start_s {
                return Err(Error::Config(format!("plan schedule gap or overlap at {cursor} s")));
            }
            if !self.plans.iter().any(|p| p.name == w.plan) {
                return Err(Error::Config(format!("schedule references unknown plan {:?}", w.plan)));
            }
            cursor = w.end_s;
        }
        if cursor as u64 != SECONDS_PER_DAY {
            return Err(Error::Config("plan schedule does not cover the whole day".into()));
        }
        for tp in &self.plans {
            if tp.splits_s.len() != plan.ring_len(0) {
                return Err(Error::Config(format!("plan {} needs {} splits", tp.name, plan.ring_len(0))));
            }
            if tp.splits_s.iter().sum::<u32>() != tp.cycle_s {
                return Err(Error::Config(format!("plan {}: splits do not sum to the cycle", tp.name)));
            }
            for (pos, split) in tp.splits_s.iter().enumerate() {
                let ph = plan.phase_at(0, pos);
                if *split < ph.min_green_s + ph.clearance_s() {
                    return Err(Error::Config(format!(
                        "plan {}: split {split} s for phase {} is below min green + clearance",
                        tp.name, ph.id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn active(&self, second_of_day: u32) -> &TimingPlan {
        let w = self
            .schedule
            .iter()
            .find(|w| second_of_day >= w.start_s && second_of_day < w.end_s)
            .expect("validated schedule covers the day");
        self.plans.iter().find(|p| p.name == w.plan).expect("validated plan name")
    }
}

impl TimingPlan {
    /// Moves time from phases with slack until every split reaches its minimum.
    pub fn enforce_min_splits(&mut self, min_splits: &[u32]) -> Result<()> {
        if min_splits.iter().sum::<u32>() > self.cycle_s {
            return Err(Error::Config(format!("cycle {} s too short for minimum splits", self.cycle_s)));
        }
        loop {
            let Some(short) = (0..self.splits_s.len()).find(|&i| self.splits_s[i] < min_splits[i]) else {
                return Ok(());
            };
            let donor = (0..self.splits_s.len())
                .max_by_key(|&i| self.splits_s[i] as i64 - min_splits[i] as i64)
                .expect("non-empty");
            self.splits_s[donor] -= 1;
            self.splits_s[short] += 1;
        }
    }
}

/// Webster cycle `(1.5 L + 5) / (1 - Y)`, rounded to 5 s and clamped to
/// [40, 120] s, with green time shared in proportion to each phase's flow ratio.
pub fn webster_plan(critical_vph: &[f64], saturation_vph: f64, lost_time_s: f64) -> Result<TimingPlan> {
    if critical_vph.is_empty() {
        return Err(Error::Config("webster plan needs at least one phase".into()));
    }
    let ratios: Vec<f64> = critical_vph.iter().map(|v| v / saturation_vph).collect();
    let y: f64 = ratios.iter().sum();
    if y >= 1.0 {
        return Err(Error::Oversaturated(y));
    }
    let raw = (1.5 * lost_time_s + 5.0) / (1.0 - y);
    let cycle = ((raw / 5.0).round() * 5.0).clamp(40.0, 120.0);
    let n = ratios.len() as f64;
    let shares: Vec<f64> = if y > 0.0 {
        let green = cycle - lost_time_s;
        ratios.iter().map(|r| lost_time_s / n + green * r / y).collect()
    } else {
        vec![cycle / n; ratios.len()]
    };
    Ok(TimingPlan { name: "webster".into(), cycle_s: cycle as u32, splits_s: largest_remainder(&shares, cycle as u32) })
}

fn largest_remainder(shares: &[f64], total: u32) -> Vec<u32> {
    let mut out: Vec<u32> = shares.iter().map(|s| s.floor().max(0.0) as u32).collect();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = shares[a] - shares[a].floor();
        let fb = shares[b] - shares[b].floor();
        fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    let mut left = total.saturating_sub(out.iter().sum());
    for i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        out[*i] += 1;
        left -= 1;
    }
    out
}

/// Terminates each green when its split minus clearance has elapsed.
pub fn fixed_time_step(plan: &FixedTimePlan, clock: &SimClock, signal: &RingBarrierState, rb: &RingBarrierPlan) -> Action {
    let ring = &signal.rings[0];
    if ring.interval != Interval::Green {
        return Action::DoNothing;
    }
    let tp = plan.active(clock.second_of_day);
    let phase = rb.phase_at(0, ring.position);
    let green = tp.splits_s[ring.position].saturating_sub(phase.clearance_s());
    if ring.time_in_interval_s >= green {
        Action::AdvanceBoth
    } else {
        Action::DoNothing
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActuatedConfig {
    /// Passage time: a gap longer than this ends the minor green.
    pub gap_s: u32,
    /// Maximum minor-street green.
    pub max_green_s: u32,
    pub detector_approaches: Vec<ApproachId>,
    /// Seconds of day during which the controller runs free, e.g. 23:00 to 06:00.
    pub free_mode_window: (u32, u32),
    /// A vehicle this close to the stop line occupies the detector.
    pub detector_lookahead_s: u32,
}

impl Default for ActuatedConfig {
    fn default() -> Self {
        ActuatedConfig {
            gap_s: 3,
            max_green_s: 30,
            detector_approaches: vec![ApproachId::NORTHBOUND, ApproachId::SOUTHBOUND],
            free_mode_window: (23 * 3600, 6 * 3600),
            detector_lookahead_s: 2,
        }
    }
}

impl ActuatedConfig {
    pub fn validate(&self, plan: &RingBarrierPlan) -> Result<()> {
        if self.gap_s == 0 {
            return Err(Error::Config("gap_s must be positive".into()));
        }
        if self.detector_approaches.is_empty() {
            return Err(Error::Config("semi-actuated control needs minor-street detectors".into()));
        }
        for pos in 0..plan.ring_len(0) {
            let ph = plan.phase_at(0, pos);
            if self.serves_detected(&ph.served_approaches) && self.max_green_s < ph.min_green_s {
                return Err(Error::Config(format!("max green {} s below min green of phase {}", self.max_green_s, ph.id)));
            }
        }
        Ok(())
    }

    pub fn in_free_mode(&self, second_of_day: u32) -> bool {
        let (start, end) = self.free_mode_window;
        if start <= end {
            second_of_day >= start && second_of_day < end
        } else {
            second_of_day >= start || second_of_day < end
        }
    }

    fn serves_detected(&self, served: &[ApproachId]) -> bool {
        served.iter().any(|a| self.detector_approaches.contains(a))
    }
}

/// Semi-actuated decision. `since_actuation_s` counts seconds since a minor
/// detector was last occupied (0 when occupied now).
pub fn semi_actuated_step(
    cfg: &ActuatedConfig,
    timing: Option<&FixedTimePlan>,
    detectors: &[bool; NUM_APPROACHES],
    since_actuation_s: u32,
    clock: &SimClock,
    signal: &RingBarrierState,
    rb: &RingBarrierPlan,
) -> Action {
    let ring = &signal.rings[0];
    if ring.interval != Interval::Green {
        return Action::DoNothing;
    }
    let phase = rb.phase_at(0, ring.position);
    let age = ring.time_in_interval_s;
    let call = cfg.detector_approaches.iter().any(|a| detectors[a.0]);
    if cfg.serves_detected(&phase.served_approaches) {
        let gap_out = since_actuation_s > cfg.gap_s;
        let max_out = age >= cfg.max_green_s;
        if age >= phase.min_green_s && (gap_out || max_out) {
            return Action::AdvanceBoth;
        }
        return Action::DoNothing;
    }
    // major street: rest in green, serve a call once the hold time is over
    let mut hold = phase.min_green_s;
    if !cfg.in_free_mode(clock.second_of_day) {
        if let Some(t) = timing {
            let tp = t.active(clock.second_of_day);
            hold = hold.max(tp.splits_s[ring.position].saturating_sub(phase.clearance_s()));
        }
    }
    if call && age >= hold {
        Action::AdvanceBoth
    } else {
        Action::DoNothing
    }
}

/// Masked argmax over Q-values, lowest index on ties. No exploration.
pub fn drl_policy_step(network: &QNetwork, frames: &FrameStack, mask: &ActionMask) -> Result<Action> {
    let q = network.forward_stack(frames)?;
    Ok(masked_argmax(&q, mask))
}

fn guard(action: Action, mask: &ActionMask) -> Action {
    if mask[action.index()] {
        action
    } else {
        Action::DoNothing
    }
}

#[derive(Debug, Clone)]
pub struct FixedTimeController {
    pub plan: FixedTimePlan,
}

impl Controller for FixedTimeController {
    fn name(&self) -> &str {
        "fixed_time"
    }

    fn act(&mut self, obs: &Observation<'_>) -> Result<Action> {
        Ok(guard(fixed_time_step(&self.plan, &obs.clock, obs.signal, obs.plan), &obs.mask))
    }
}

#[derive(Debug, Clone)]
pub struct SemiActuatedController {
    pub cfg: ActuatedConfig,
    pub timing: Option<FixedTimePlan>,
    since_actuation_s: u32,
}

impl SemiActuatedController {
    pub fn new(cfg: ActuatedConfig, timing: Option<FixedTimePlan>) -> Self {
        SemiActuatedController { cfg, timing, since_actuation_s: u32::MAX / 2 }
    }
}

impl Controller for SemiActuatedController {
    fn name(&self) -> &str {
        "semi_actuated"
    }

    fn act(&mut self, obs: &Observation<'_>) -> Result<Action> {
        if self.cfg.detector_approaches.iter().any(|a| obs.detectors[a.0]) {
            self.since_actuation_s = 0;
        } else {
            self.since_actuation_s = self.since_actuation_s.saturating_add(1);
        }
        let a = semi_actuated_step(
            &self.cfg,
            self.timing.as_ref(),
            &obs.detectors,
            self.since_actuation_s,
            &obs.clock,
            obs.signal,
            obs.plan,
        );
        Ok(guard(a, &obs.mask))
    }
}

/// Greedy learned policy.
#[derive(Debug, Clone)]
pub struct DrlController {
    pub network: QNetwork,
}

impl Controller for DrlController {
    fn name(&self) -> &str {
        "drl"
    }

    fn needs_frames(&self) -> bool {
        true
    }

    fn act(&mut self, obs: &Observation<'_>) -> Result<Action> {
        if obs.mask.iter().filter(|v| **v).count() == 1 {
            return Ok(Action::DoNothing);
        }
        let frames = obs
            .frames
            .ok_or_else(|| Error::Config("learned policy needs the frame stack".into()))?;
        drl_policy_step(&self.network, frames, &obs.mask)
    }
}
