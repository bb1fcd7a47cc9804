//! Ring-barrier phase machine with the rule checker that gates agent actions.
//!
//! Timing convention: the state passed to [`indications`] is what is shown for
//! the current second, and [`tick_signal`] runs once that second is over. An
//! interval of `d` seconds is therefore shown at ages `0..d`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{approaches_conflict, ApproachId, Indication, NUM_APPROACHES};

pub const NUM_ACTIONS: usize = 5;

/// Agent action. The discriminant is the Q-vector index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    DoNothing = 0,
    AdvanceRing1 = 1,
    AdvanceRing2 = 2,
    AdvanceBoth = 3,
    AdvanceToBarrier = 4,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [
        Action::DoNothing,
        Action::AdvanceRing1,
        Action::AdvanceRing2,
        Action::AdvanceBoth,
        Action::AdvanceToBarrier,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::DoNothing => "DoNothing",
            Action::AdvanceRing1 => "AdvanceRing1",
            Action::AdvanceRing2 => "AdvanceRing2",
            Action::AdvanceBoth => "AdvanceBoth",
            Action::AdvanceToBarrier => "AdvanceToBarrier",
        }
    }
}

/// Validity flag per action, indexed like [`Action::ALL`].
pub type ActionMask = [bool; NUM_ACTIONS];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub id: u32,
    pub ring: u8,
    pub barrier_group: u32,
    pub served_approaches: Vec<ApproachId>,
    #[serde(default = "default_min_green")]
    pub min_green_s: u32,
    #[serde(default = "default_yellow")]
    pub yellow_s: u32,
    #[serde(default = "default_all_red")]
    pub all_red_s: u32,
}

fn default_min_green() -> u32 {
    10
}
fn default_yellow() -> u32 {
    3
}
fn default_all_red() -> u32 {
    1
}

impl Phase {
    pub fn clearance_s(&self) -> u32 {
        self.yellow_s + self.all_red_s
    }
}

/// Phases per ring in service order. Barrier groups must appear in the same
/// order in every ring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RingBarrierPlan {
    pub phases: Vec<Phase>,
    /// Phase ids per ring, ring 1 first.
    pub rings: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntervalTiming {
    pub min_green_s: u32,
    pub yellow_s: u32,
    pub all_red_s: u32,
}

impl Default for IntervalTiming {
    fn default() -> Self {
        IntervalTiming { min_green_s: 10, yellow_s: 3, all_red_s: 1 }
    }
}

impl RingBarrierPlan {
    /// Major-street through then minor-street through, with ring 2 mirroring ring 1.
    pub fn two_phase(timing: IntervalTiming) -> RingBarrierPlan {
        let major = vec![ApproachId::EASTBOUND, ApproachId::WESTBOUND];
        let minor = vec![ApproachId::NORTHBOUND, ApproachId::SOUTHBOUND];
        let mk = |id, ring, group, served: &Vec<ApproachId>| Phase {
            id,
            ring,
            barrier_group: group,
            served_approaches: served.clone(),
            min_green_s: timing.min_green_s,
            yellow_s: timing.yellow_s,
            all_red_s: timing.all_red_s,
        };
        RingBarrierPlan {
            phases: vec![mk(1, 1, 0, &major), mk(2, 1, 1, &minor), mk(3, 2, 0, &major), mk(4, 2, 1, &minor)],
            rings: vec![vec![1, 2], vec![3, 4]],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rings.is_empty() || self.rings.len() > 2 {
            return Err(Error::Config(format!("plan must have 1 or 2 rings, got {}", self.rings.len())));
        }
        for p in &self.phases {
            if p.min_green_s < 1 {
                return Err(Error::Config(format!("phase {}: min green must be >= 1 s", p.id)));
            }
            if p.served_approaches.iter().any(|a| a.0 >= NUM_APPROACHES) {
                return Err(Error::Config(format!("phase {}: unknown served approach", p.id)));
            }
            for a in &p.served_approaches {
                for b in &p.served_approaches {
                    if approaches_conflict(*a, *b) {
                        return Err(Error::Config(format!("phase {} serves conflicting approaches", p.id)));
                    }
                }
            }
        }
        let mut sequences = Vec::new();
        for (r, ring) in self.rings.iter().enumerate() {
            if ring.is_empty() {
                return Err(Error::Config(format!("ring {} is empty", r + 1)));
            }
            let mut seq: Vec<u32> = Vec::new();
            for id in ring {
                let p = self.phase_by_id(*id)?;
                if p.ring as usize != r + 1 {
                    return Err(Error::Config(format!("phase {id} listed in ring {} but tagged ring {}", r + 1, p.ring)));
                }
                if seq.last() != Some(&p.barrier_group) {
                    seq.push(p.barrier_group);
                }
            }
            if seq.len() > 1 && seq.first() == seq.last() {
                seq.pop();
            }
            sequences.push(seq);
        }
        if sequences.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::Config("barrier groups do not align across rings".into()));
        }
        for (i, ra) in self.rings.iter().enumerate() {
            for rb in self.rings.iter().skip(i + 1) {
                for pa in ra {
                    for pb in rb {
                        let (a, b) = (self.phase_by_id(*pa)?, self.phase_by_id(*pb)?);
                        if a.barrier_group != b.barrier_group {
                            continue;
                        }
                        for x in &a.served_approaches {
                            for y in &b.served_approaches {
                                if approaches_conflict(*x, *y) {
                                    return Err(Error::Config(format!(
                                        "concurrent phases {} and {} serve conflicting approaches",
                                        a.id, b.id
                                    )));
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn phase_by_id(&self, id: u32) -> Result<&Phase> {
        self.phases
            .iter()
            .find(|p| p.id == id)
            .ok_or_else(|| Error::Config(format!("phase id {id} not defined")))
    }

    /// Phase at position `pos` of ring `ring` (0-based). Panics on a bad index;
    /// positions come from states built against this plan.
    pub fn phase_at(&self, ring: usize, pos: usize) -> &Phase {
        let id = self.rings[ring][pos];
        self.phases.iter().find(|p| p.id == id).expect("validated plan")
    }

    pub fn ring_len(&self, ring: usize) -> usize {
        self.rings[ring].len()
    }

    fn next_pos(&self, ring: usize, pos: usize) -> usize {
        (pos + 1) % self.rings[ring].len()
    }

    /// Last position in the run of phases sharing `pos`'s barrier group.
    fn barrier_end_pos(&self, ring: usize, pos: usize) -> usize {
        let group = self.phase_at(ring, pos).barrier_group;
        let mut p = pos;
        loop {
            let n = self.next_pos(ring, p);
            if n == pos || self.phase_at(ring, n).barrier_group != group {
                return p;
            }
            p = n;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Interval {
    Green,
    Yellow,
    AllRed,
}

impl Interval {
    pub fn index(self) -> usize {
        match self {
            Interval::Green => 0,
            Interval::Yellow => 1,
            Interval::AllRed => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RingState {
    /// Position of the current (or clearing) phase within the ring.
    pub position: usize,
    pub interval: Interval,
    pub time_in_interval_s: u32,
    /// Phase position that starts once clearance ends.
    pub next_position: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RingBarrierState {
    pub rings: Vec<RingState>,
    pub lockout_remaining_s: u32,
}

impl RingBarrierState {
    /// Every ring on its first phase, green just started.
    pub fn initial(plan: &RingBarrierPlan) -> RingBarrierState {
        let rings: Vec<RingState> = (0..plan.rings.len())
            .map(|_| RingState { position: 0, interval: Interval::Green, time_in_interval_s: 0, next_position: None })
            .collect();
        let lockout = (0..plan.rings.len()).map(|r| plan.phase_at(r, 0).min_green_s).max().unwrap_or(0);
        RingBarrierState { rings, lockout_remaining_s: lockout }
    }

    /// Blocks every action except DoNothing for at least `seconds` more seconds.
    pub fn request_lockout(&mut self, seconds: u32) {
        self.lockout_remaining_s = self.lockout_remaining_s.max(seconds);
    }

    pub fn phase_id(&self, plan: &RingBarrierPlan, ring: usize) -> u32 {
        plan.rings[ring][self.rings[ring].position]
    }

    fn ring_ready(&self, plan: &RingBarrierPlan, ring: usize) -> bool {
        let rs = &self.rings[ring];
        rs.interval == Interval::Green && rs.time_in_interval_s >= plan.phase_at(ring, rs.position).min_green_s
    }

    /// Barrier group the ring is in or is clearing toward.
    fn committed_group(&self, plan: &RingBarrierPlan, ring: usize) -> u32 {
        let rs = &self.rings[ring];
        plan.phase_at(ring, rs.next_position.unwrap_or(rs.position)).barrier_group
    }
}

/// Per-ring target positions for an advance action, or `None` when the action
/// is not allowed in `state`.
fn advance_targets(state: &RingBarrierState, plan: &RingBarrierPlan, action: Action) -> Option<Vec<Option<usize>>> {
    let n_rings = plan.rings.len();
    let mut targets: Vec<Option<usize>> = vec![None; n_rings];
    if action == Action::DoNothing {
        return Some(targets);
    }
    if state.lockout_remaining_s > 0 {
        return None;
    }
    match action {
        Action::DoNothing => return Some(targets),
        Action::AdvanceRing1 | Action::AdvanceRing2 => {
            let r = if action == Action::AdvanceRing1 { 0 } else { 1 };
            if r >= n_rings || !state.ring_ready(plan, r) {
                return None;
            }
            targets[r] = Some(plan.next_pos(r, state.rings[r].position));
        }
        Action::AdvanceBoth => {
            for (r, t) in targets.iter_mut().enumerate() {
                if !state.ring_ready(plan, r) {
                    return None;
                }
                *t = Some(plan.next_pos(r, state.rings[r].position));
            }
        }
        Action::AdvanceToBarrier => {
            for (r, t) in targets.iter_mut().enumerate() {
                let rs = &state.rings[r];
                if rs.interval != Interval::Green {
                    return None;
                }
                let end = plan.barrier_end_pos(r, rs.position);
                if end != rs.position {
                    if !state.ring_ready(plan, r) {
                        return None;
                    }
                    *t = Some(end);
                }
            }
            if targets.iter().all(Option::is_none) {
                return None;
            }
        }
    }
    // every ring must end up in one barrier group
    let group_of = |r: usize| match targets[r] {
        Some(p) => plan.phase_at(r, p).barrier_group,
        None => state.committed_group(plan, r),
    };
    let g0 = group_of(0);
    if (1..n_rings).any(|r| group_of(r) != g0) {
        return None;
    }
    Some(targets)
}

/// Rule checker: which actions may be taken this second.
pub fn valid_actions(state: &RingBarrierState, plan: &RingBarrierPlan) -> ActionMask {
    let mut mask = [false; NUM_ACTIONS];
    for a in Action::ALL {
        mask[a.index()] = advance_targets(state, plan, a).is_some();
    }
    mask[Action::DoNothing.index()] = true;
    mask
}

/// Applies a rule-checked action. Advanced rings enter their clearance.
pub fn apply_action(state: &RingBarrierState, action: Action, plan: &RingBarrierPlan) -> Result<RingBarrierState> {
    let targets = advance_targets(state, plan, action).ok_or_else(|| Error::RuleViolation {
        action: action.name(),
        reason: describe_block(state, plan),
    })?;
    let mut next = state.clone();
    for (r, target) in targets.iter().enumerate() {
        let Some(target) = *target else { continue };
        let phase = plan.phase_at(r, state.rings[r].position);
        let rs = &mut next.rings[r];
        rs.next_position = Some(target);
        rs.time_in_interval_s = 0;
        if phase.yellow_s > 0 {
            rs.interval = Interval::Yellow;
        } else if phase.all_red_s > 0 {
            rs.interval = Interval::AllRed;
        } else {
            rs.interval = Interval::Green;
            rs.position = target;
            rs.next_position = None;
            let mg = plan.phase_at(r, target).min_green_s;
            next.lockout_remaining_s = next.lockout_remaining_s.max(mg);
            continue;
        }
        next.lockout_remaining_s = next.lockout_remaining_s.max(phase.clearance_s());
    }
    Ok(next)
}

fn describe_block(state: &RingBarrierState, plan: &RingBarrierPlan) -> String {
    if state.lockout_remaining_s > 0 {
        return format!("lockout active for {} more s", state.lockout_remaining_s);
    }
    for (r, rs) in state.rings.iter().enumerate() {
        if rs.interval != Interval::Green {
            return format!("ring {} is in {:?}", r + 1, rs.interval);
        }
        let mg = plan.phase_at(r, rs.position).min_green_s;
        if rs.time_in_interval_s < mg {
            return format!("ring {} green {} s below minimum {} s", r + 1, rs.time_in_interval_s, mg);
        }
    }
    "rings would end up on different sides of a barrier".into()
}

/// Advances interval timers by one second.
pub fn tick_signal(state: &RingBarrierState, plan: &RingBarrierPlan) -> RingBarrierState {
    let mut next = state.clone();
    next.lockout_remaining_s = next.lockout_remaining_s.saturating_sub(1);
    for (r, rs) in next.rings.iter_mut().enumerate() {
        rs.time_in_interval_s += 1;
        let phase = plan.phase_at(r, rs.position);
        if rs.interval == Interval::Yellow && rs.time_in_interval_s >= phase.yellow_s {
            rs.interval = Interval::AllRed;
            rs.time_in_interval_s = 0;
        }
    }
    // all-red to green, holding a ring at a barrier until its partners are ready
    let ready: Vec<bool> = next
        .rings
        .iter()
        .enumerate()
        .map(|(r, rs)| {
            rs.interval == Interval::AllRed && rs.time_in_interval_s >= plan.phase_at(r, rs.position).all_red_s
        })
        .collect();
    let mut start_green = vec![false; next.rings.len()];
    for r in 0..next.rings.len() {
        if !ready[r] {
            continue;
        }
        let rs = &next.rings[r];
        let target = rs.next_position.expect("clearing ring has a target");
        let from_group = plan.phase_at(r, rs.position).barrier_group;
        let to_group = plan.phase_at(r, target).barrier_group;
        if from_group == to_group {
            start_green[r] = true;
            continue;
        }
        start_green[r] = next.rings.iter().enumerate().all(|(o, os)| {
            o == r
                || (ready[o] && os.next_position.map(|p| plan.phase_at(o, p).barrier_group) == Some(to_group))
                || (os.interval == Interval::Green && plan.phase_at(o, os.position).barrier_group == to_group)
        });
    }
    for (r, go) in start_green.into_iter().enumerate() {
        if !go {
            continue;
        }
        let rs = &mut next.rings[r];
        rs.position = rs.next_position.take().expect("clearing ring has a target");
        rs.interval = Interval::Green;
        rs.time_in_interval_s = 0;
        let mg = plan.phase_at(r, rs.position).min_green_s;
        next.lockout_remaining_s = next.lockout_remaining_s.max(mg);
    }
    next
}

/// Display per approach for the current second.
pub fn indications(state: &RingBarrierState, plan: &RingBarrierPlan) -> [Indication; NUM_APPROACHES] {
    let mut out = [Indication::Red; NUM_APPROACHES];
    for (r, rs) in state.rings.iter().enumerate() {
        let shown = match rs.interval {
            Interval::Green => Indication::Green,
            Interval::Yellow => Indication::Yellow,
            Interval::AllRed => continue,
        };
        for a in &plan.phase_at(r, rs.position).served_approaches {
            let cur = &mut out[a.0];
            if shown == Indication::Green || *cur == Indication::Red {
                *cur = shown;
            }
        }
    }
    out
}
