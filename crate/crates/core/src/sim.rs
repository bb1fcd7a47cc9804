//! One-second vertical-queue simulator of an isolated four-approach intersection.
//!
//! Vehicles enter an approach link, travel a fixed free-flow time to the stop
//! line and join a point queue there. Queued vehicles are stopped, so queue
//! membership is exactly the "slower than 15 km/h" criterion used by the
//! reward and the state encoder. A green approach discharges its queue after a
//! start-up lost time at one vehicle per saturation headway.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_APPROACHES: usize = 4;
pub const SECONDS_PER_DAY: u64 = 86_400;

/// Index of an intersection approach, named by travel direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ApproachId(pub usize);

impl ApproachId {
    pub const EASTBOUND: ApproachId = ApproachId(0);
    pub const WESTBOUND: ApproachId = ApproachId(1);
    pub const NORTHBOUND: ApproachId = ApproachId(2);
    pub const SOUTHBOUND: ApproachId = ApproachId(3);

    pub const ALL: [ApproachId; NUM_APPROACHES] = [
        ApproachId::EASTBOUND,
        ApproachId::WESTBOUND,
        ApproachId::NORTHBOUND,
        ApproachId::SOUTHBOUND,
    ];

    pub fn checked(index: usize) -> Result<ApproachId> {
        if index < NUM_APPROACHES {
            Ok(ApproachId(index))
        } else {
            Err(Error::UnknownApproach(index))
        }
    }

    pub fn name(self) -> &'static str {
        match self.0 {
            0 => "EB",
            1 => "WB",
            2 => "NB",
            3 => "SB",
            _ => "??",
        }
    }

    /// Eastbound and westbound form the major street.
    pub fn is_major(self) -> bool {
        self.0 < 2
    }

    pub fn parse(name: &str) -> Result<ApproachId> {
        ApproachId::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Config(format!("unknown approach name {name:?}")))
    }
}

/// Through movements on crossing streets conflict; opposing ones do not.
pub fn approaches_conflict(a: ApproachId, b: ApproachId) -> bool {
    a.is_major() != b.is_major()
}

/// Signal display shown to one approach for one second.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Indication {
    Green,
    Yellow,
    Red,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeSegment {
    pub start_s: u32,
    pub end_s: u32,
    pub vph: f64,
}

/// Piecewise-constant hourly-or-longer demand per approach over one day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeProfile {
    pub approaches: Vec<Vec<VolumeSegment>>,
}

const MIN_SEGMENT_S: u32 = 3600;

impl VolumeProfile {
    /// Major street 300/900/600/1000/400/150 vph over night, AM peak, midday,
    /// PM peak, evening and late night; minor street a flat 175 vph.
    pub fn default_diurnal() -> VolumeProfile {
        let major = vec![
            seg(0, 6, 300.0),
            seg(6, 10, 900.0),
            seg(10, 15, 600.0),
            seg(15, 19, 1000.0),
            seg(19, 23, 400.0),
            seg(23, 24, 150.0),
        ];
        let minor = vec![seg(0, 24, 175.0)];
        VolumeProfile {
            approaches: vec![major.clone(), major, minor.clone(), minor],
        }
    }

    pub fn constant(vph: [f64; NUM_APPROACHES]) -> VolumeProfile {
        VolumeProfile {
            approaches: vph.iter().map(|&v| vec![seg(0, 24, v)]).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.approaches.len() != NUM_APPROACHES {
            return Err(Error::Config(format!(
                "volume profile has {} approaches, expected {NUM_APPROACHES}",
                self.approaches.len()
            )));
        }
        for (a, segs) in self.approaches.iter().enumerate() {
            let mut cursor = 0u32;
            for s in segs {
                if s.start_s != cursor {
                    return Err(Error::Config(format!(
                        "approach {a}: segment starting at {} leaves a gap or overlap at {cursor}",
                        s.start_s
                    )));
                }
                if s.end_s < s.start_s + MIN_SEGMENT_S {
                    return Err(Error::Config(format!(
                        "approach {a}: segment [{}, {}) shorter than one hour",
                        s.start_s, s.end_s
                    )));
                }
                if !(s.vph >= 0.0 && s.vph.is_finite()) {
                    return Err(Error::Config(format!("approach {a}: volume {} invalid", s.vph)));
                }
                cursor = s.end_s;
            }
            if cursor as u64 != SECONDS_PER_DAY {
                return Err(Error::Config(format!("approach {a}: segments end at {cursor}, not 86400")));
            }
        }
        Ok(())
    }

    /// Hourly volume on `approach` at `second_of_day`.
    pub fn volume_at(&self, approach: ApproachId, second_of_day: u32) -> f64 {
        self.approaches[approach.0]
            .iter()
            .find(|s| second_of_day >= s.start_s && second_of_day < s.end_s)
            .map_or(0.0, |s| s.vph)
    }

    /// Replaces demand on one approach inside `[start_s, end_s)`.
    pub fn with_override(&self, approach: ApproachId, start_s: u32, end_s: u32, vph: f64) -> Result<VolumeProfile> {
        if start_s >= end_s || end_s as u64 > SECONDS_PER_DAY {
            return Err(Error::Config(format!("override window [{start_s}, {end_s}) invalid")));
        }
        let mut out = self.clone();
        let segs = &self.approaches[approach.0];
        let mut rebuilt = Vec::with_capacity(segs.len() + 2);
        for s in segs {
            if s.end_s <= start_s || s.start_s >= end_s {
                rebuilt.push(*s);
                continue;
            }
            if s.start_s < start_s {
                rebuilt.push(VolumeSegment { start_s: s.start_s, end_s: start_s, vph: s.vph });
            }
            if s.end_s > end_s {
                rebuilt.push(VolumeSegment { start_s: end_s, end_s: s.end_s, vph: s.vph });
            }
        }
        rebuilt.push(VolumeSegment { start_s, end_s, vph });
        rebuilt.sort_by_key(|s| s.start_s);
        out.approaches[approach.0] = rebuilt;
        out.validate()?;
        Ok(out)
    }

    /// Highest total intersection volume over any whole hour inside `[start_s, end_s)`,
    /// returned as per-approach volumes for that hour.
    pub fn peak_hour(&self, start_s: u32, end_s: u32) -> [f64; NUM_APPROACHES] {
        let mut best = [0.0; NUM_APPROACHES];
        let mut best_total = f64::NEG_INFINITY;
        let mut hour = start_s;
        while hour + 3600 <= end_s.max(start_s + 3600) {
            let mut vols = [0.0; NUM_APPROACHES];
            for a in ApproachId::ALL {
                // segments are at least an hour long and hour-aligned by construction of the
                // defaults; average over the hour to stay exact when they are not
                let mut sum = 0.0;
                for s in (hour..hour + 3600).step_by(300) {
                    sum += self.volume_at(a, s % SECONDS_PER_DAY as u32);
                }
                vols[a.0] = sum / 12.0;
            }
            let total: f64 = vols.iter().sum();
            if total > best_total {
                best_total = total;
                best = vols;
            }
            hour += 3600;
        }
        best
    }
}

fn seg(start_h: u32, end_h: u32, vph: f64) -> VolumeSegment {
    VolumeSegment { start_s: start_h * 3600, end_s: end_h * 3600, vph }
}

/// Experiment time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimClock {
    pub t: u64,
    pub second_of_day: u32,
    pub day_index: u64,
    pub day_of_week: u8,
}

impl SimClock {
    /// Clock at `t` seconds after an experiment that started at midnight of weekday
    /// `start_day_of_week` (0 = Monday).
    pub fn at(t: u64, start_day_of_week: u8) -> SimClock {
        let day_index = t / SECONDS_PER_DAY;
        SimClock {
            t,
            second_of_day: (t % SECONDS_PER_DAY) as u32,
            day_index,
            day_of_week: ((start_day_of_week as u64 + day_index) % 7) as u8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ArrivalMode {
    #[default]
    Poisson,
    /// Evenly spaced arrivals at exactly the segment rate.
    Deterministic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynamicsConfig {
    pub link_travel_time_s: u32,
    pub startup_lost_time_s: u32,
    pub saturation_headway_s: f64,
    pub arrival_mode: ArrivalMode,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        DynamicsConfig {
            link_travel_time_s: 20,
            startup_lost_time_s: 2,
            saturation_headway_s: 2.0,
            arrival_mode: ArrivalMode::Poisson,
        }
    }
}

impl DynamicsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.saturation_headway_s > 0.0 && self.saturation_headway_s.is_finite()) {
            return Err(Error::Config("saturation headway must be positive".into()));
        }
        Ok(())
    }

    pub fn saturation_flow_vph(&self) -> f64 {
        3600.0 / self.saturation_headway_s
    }
}

/// Per-second arrival source for every approach.
#[derive(Debug, Clone)]
pub struct ArrivalGenerator {
    mode: ArrivalMode,
    // vph-seconds owed to each approach in deterministic mode
    owed: [f64; NUM_APPROACHES],
}

impl ArrivalGenerator {
    pub fn new(mode: ArrivalMode) -> Self {
        ArrivalGenerator { mode, owed: [0.0; NUM_APPROACHES] }
    }

    /// Arrivals on each approach during the second `clock.t`. Poisson counts
    /// have mean `vph / 3600`.
    pub fn sample_arrivals<R: Rng + ?Sized>(
        &mut self,
        profile: &VolumeProfile,
        clock: &SimClock,
        rng: &mut R,
    ) -> [u32; NUM_APPROACHES] {
        let mut counts = [0u32; NUM_APPROACHES];
        for a in ApproachId::ALL {
            let vph = profile.volume_at(a, clock.second_of_day);
            counts[a.0] = match self.mode {
                ArrivalMode::Poisson => {
                    if vph <= 0.0 {
                        0
                    } else {
                        let d = Poisson::new(vph / 3600.0).expect("positive finite rate");
                        let x: f64 = d.sample(rng);
                        x as u32
                    }
                }
                ArrivalMode::Deterministic => {
                    self.owed[a.0] += vph;
                    let n = (self.owed[a.0] / 3600.0).floor();
                    self.owed[a.0] -= n * 3600.0;
                    n as u32
                }
            };
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vehicle {
    pub id: u64,
    pub approach: ApproachId,
    pub arrival_s: u64,
    pub at_stopline_s: u64,
    pub depart_s: Option<u64>,
}

impl Vehicle {
    /// Control delay; `None` until the vehicle crosses the stop line.
    pub fn delay(&self) -> Option<u64> {
        self.depart_s.map(|d| d - self.at_stopline_s)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ApproachState {
    pub queue: VecDeque<Vehicle>,
    pub in_transit: VecDeque<Vehicle>,
    /// True while green and past the start-up lost time.
    pub discharging: bool,
    green_elapsed_s: u32,
    service_credit_s: f64,
    last_shown: Option<Indication>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ApproachTick {
    pub arrivals: u32,
    pub discharged: u32,
    pub queue_after: u32,
    pub shown: Option<Indication>,
}

/// What happened at the intersection during one second.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TickOutcome {
    pub approaches: [ApproachTick; NUM_APPROACHES],
    /// Approaches whose green ended this second with vehicles still queued,
    /// paired with that residual queue.
    pub green_terminated: Vec<(ApproachId, u32)>,
}

impl TickOutcome {
    pub fn total_discharged(&self) -> u32 {
        self.approaches.iter().map(|a| a.discharged).sum()
    }

    /// Vehicles queued behind approaches that showed red this second.
    pub fn queued_on_red(&self) -> u32 {
        self.approaches
            .iter()
            .filter(|a| a.shown == Some(Indication::Red))
            .map(|a| a.queue_after)
            .sum()
    }
}

/// Full simulator state for one intersection.
#[derive(Debug, Clone)]
pub struct Simulator {
    dynamics: DynamicsConfig,
    approaches: Vec<ApproachState>,
    next_id: u64,
    total_arrived: u64,
    total_departed: u64,
    departed: Vec<Vehicle>,
}

impl Simulator {
    pub fn new(dynamics: DynamicsConfig) -> Self {
        Simulator {
            dynamics,
            approaches: vec![ApproachState::default(); NUM_APPROACHES],
            next_id: 0,
            total_arrived: 0,
            total_departed: 0,
            departed: Vec::new(),
        }
    }

    pub fn dynamics(&self) -> &DynamicsConfig {
        &self.dynamics
    }

    pub fn approach(&self, a: ApproachId) -> &ApproachState {
        &self.approaches[a.0]
    }

    /// Stopped vehicles at the stop line of `approach`. Not capped.
    pub fn queue_length(&self, approach: usize) -> Result<usize> {
        let a = ApproachId::checked(approach)?;
        Ok(self.approaches[a.0].queue.len())
    }

    pub fn queue_lengths(&self) -> [u32; NUM_APPROACHES] {
        std::array::from_fn(|i| self.approaches[i].queue.len() as u32)
    }

    pub fn total_arrived(&self) -> u64 {
        self.total_arrived
    }

    pub fn total_departed(&self) -> u64 {
        self.total_departed
    }

    pub fn in_transit_count(&self) -> usize {
        self.approaches.iter().map(|a| a.in_transit.len()).sum()
    }

    pub fn queued_count(&self) -> usize {
        self.approaches.iter().map(|a| a.queue.len()).sum()
    }

    pub fn in_system(&self) -> usize {
        self.in_transit_count() + self.queued_count()
    }

    /// Vehicles still on the links, for censoring at the end of a run.
    pub fn vehicles_in_system(&self) -> impl Iterator<Item = &Vehicle> {
        self.approaches.iter().flat_map(|a| a.queue.iter().chain(a.in_transit.iter()))
    }

    /// Takes every vehicle that has departed since the previous call.
    pub fn drain_departed(&mut self) -> Vec<Vehicle> {
        std::mem::take(&mut self.departed)
    }

    /// Presence detector at the stop line: occupied when a queue stands there or
    /// a vehicle is within `lookahead_s` of reaching it.
    pub fn detector_occupied(&self, approach: ApproachId, now: u64, lookahead_s: u64) -> bool {
        let st = &self.approaches[approach.0];
        !st.queue.is_empty()
            || st
                .in_transit
                .front()
                .is_some_and(|v| v.at_stopline_s <= now + lookahead_s)
    }

    /// Puts `n` vehicles directly into the stop-line queue. Test and scenario setup.
    pub fn seed_queue(&mut self, approach: ApproachId, n: usize, now: u64) {
        for _ in 0..n {
            let v = Vehicle {
                id: self.next_id,
                approach,
                arrival_s: now,
                at_stopline_s: now,
                depart_s: None,
            };
            self.next_id += 1;
            self.total_arrived += 1;
            self.approaches[approach.0].queue.push_back(v);
        }
    }

    /// Advances one second with `arrivals` entering the links and the given displays.
    pub fn tick(
        &mut self,
        indications: &[Indication; NUM_APPROACHES],
        arrivals: &[u32; NUM_APPROACHES],
        clock: &SimClock,
    ) -> Result<TickOutcome> {
        for a in ApproachId::ALL {
            for b in ApproachId::ALL {
                if a < b
                    && indications[a.0] == Indication::Green
                    && indications[b.0] == Indication::Green
                    && approaches_conflict(a, b)
                {
                    return Err(Error::SafetyViolation { first: a.0, second: b.0 });
                }
            }
        }

        let t = clock.t;
        let travel = self.dynamics.link_travel_time_s as u64;
        let lost = self.dynamics.startup_lost_time_s;
        let headway = self.dynamics.saturation_headway_s;
        let mut outcome = TickOutcome::default();

        for a in ApproachId::ALL {
            let shown = indications[a.0];
            let st = &mut self.approaches[a.0];
            let tick = &mut outcome.approaches[a.0];
            tick.shown = Some(shown);

            for _ in 0..arrivals[a.0] {
                st.in_transit.push_back(Vehicle {
                    id: self.next_id,
                    approach: a,
                    arrival_s: t,
                    at_stopline_s: t + travel,
                    depart_s: None,
                });
                self.next_id += 1;
            }
            tick.arrivals = arrivals[a.0];
            self.total_arrived += arrivals[a.0] as u64;

            if st.last_shown == Some(Indication::Green) && shown != Indication::Green && !st.queue.is_empty() {
                outcome.green_terminated.push((a, st.queue.len() as u32));
            }

            while st.in_transit.front().is_some_and(|v| v.at_stopline_s <= t) {
                let v = st.in_transit.pop_front().expect("front checked");
                st.queue.push_back(v);
            }

            if shown == Indication::Green {
                st.green_elapsed_s += 1;
                if st.green_elapsed_s > lost {
                    st.discharging = true;
                    st.service_credit_s += 1.0;
                    while st.service_credit_s >= headway {
                        let Some(mut v) = st.queue.pop_front() else { break };
                        v.depart_s = Some(t);
                        st.service_credit_s -= headway;
                        tick.discharged += 1;
                        self.departed.push(v);
                    }
                    if st.queue.is_empty() {
                        st.service_credit_s = st.service_credit_s.min(headway);
                    }
                }
            } else {
                st.green_elapsed_s = 0;
                st.service_credit_s = 0.0;
                st.discharging = false;
            }
            self.total_departed += tick.discharged as u64;
            tick.queue_after = st.queue.len() as u32;
            st.last_shown = Some(shown);
        }
        Ok(outcome)
    }
}
