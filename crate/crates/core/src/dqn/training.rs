//! The per-second interaction loop that fills replay and trains the learner.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::replay::{ReplayBuffer, Transition};
use super::{epsilon_at, select_action_with, train_step, EpsilonSchedule, Learner};
use crate::env::{Environment, GreenAudit};
use crate::error::{Error, Result};
use crate::signal::Action;
use crate::sim::SECONDS_PER_DAY;

/// One row of the training log, written every gradient-step period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLogRow {
    pub t: u64,
    pub gradient_step: u64,
    pub epsilon: f64,
    /// Minibatch loss of the step taken at `t`; empty during warm-up.
    pub loss: Option<f64>,
    /// Reward summed over the period ending at `t`.
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaySummary {
    pub day: u64,
    /// Vehicle-seconds spent on the links during the day.
    pub total_travel_time_s: u64,
    pub vehicles_departed: u64,
    pub mean_delay_s: f64,
    pub total_reward: f64,
    pub mean_loss: Option<f64>,
    pub epsilon_end: f64,
    pub gradient_steps: u64,
    /// Running totals since the start of this call.
    pub short_greens: u64,
    pub conflicting_greens: u64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainingRun {
    pub days: Vec<DaySummary>,
    pub log: Vec<StepLogRow>,
}

#[derive(Debug, Default)]
struct DayAccumulator {
    ttt: u64,
    departed: u64,
    delay_sum: u64,
    reward: f64,
    loss_sum: f64,
    losses: u64,
}

/// Runs `days` simulated days of ε-greedy interaction on `env`, storing every
/// second as a transition and taking a gradient step every training period.
/// `on_day` sees each day's summary as it completes.
pub fn run_training(
    env: &mut Environment,
    learner: &mut Learner,
    replay: &mut ReplayBuffer,
    sched: &EpsilonSchedule,
    days: u64,
    seed: u64,
    mut on_day: impl FnMut(&DaySummary),
) -> Result<TrainingRun> {
    sched.validate()?;
    learner.config.validate()?;
    if env.frames().is_none() {
        return Err(Error::Config("training needs an environment that encodes frames".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let min_green = env.plan().phases.iter().map(|p| p.min_green_s).min().unwrap_or(0);
    let period = learner.config.train_period_s;
    let mut run = TrainingRun::default();
    let mut day = DayAccumulator::default();
    let mut period_reward = 0.0;
    let mut audit = GreenAudit::default();
    let end = env.time() + days * SECONDS_PER_DAY;

    while env.time() < end {
        let t = learner.seconds;
        let epsilon = epsilon_at(t, sched);
        let stage = sched.stage_at(t);
        let mask = env.mask();
        let state = env.frames().cloned().expect("checked above");
        let net = &learner.network;
        // Seconds where the rule checker leaves only DoNothing are not choices:
        // no exploration draw, no network pass, and no fresh random lockout.
        let (action, lockout) = if mask.iter().filter(|v| **v).count() == 1 {
            (Action::DoNothing, 0)
        } else {
            select_action_with(|| net.forward_stack(&state), &mask, epsilon, &mut rng, stage)?
        };
        let report = env.step(action, lockout)?;
        let next_state = env.frames().cloned().expect("checked above");
        replay.push(Transition { state, action, reward: report.reward, next_state, next_mask: env.mask() });
        learner.seconds += 1;

        day.ttt += report.in_system as u64;
        for v in &report.departed {
            day.departed += 1;
            day.delay_sum += v.delay().unwrap_or(0);
        }
        day.reward += report.reward;
        audit.observe(&report.indications, min_green);
        period_reward += report.reward;

        if learner.seconds % period == 0 {
            let loss = train_step(learner, replay, &mut rng)?;
            if let Some(l) = loss {
                day.loss_sum += l;
                day.losses += 1;
            }
            run.log.push(StepLogRow {
                t: learner.seconds,
                gradient_step: learner.steps,
                epsilon,
                loss,
                reward: period_reward,
            });
            period_reward = 0.0;
        }

        if env.at_day_boundary() {
            let d = std::mem::take(&mut day);
            let summary = DaySummary {
                day: env.time() / SECONDS_PER_DAY - 1,
                total_travel_time_s: d.ttt,
                vehicles_departed: d.departed,
                mean_delay_s: if d.departed > 0 { d.delay_sum as f64 / d.departed as f64 } else { 0.0 },
                total_reward: d.reward,
                mean_loss: (d.losses > 0).then(|| d.loss_sum / d.losses as f64),
                epsilon_end: epsilon,
                gradient_steps: learner.steps,
                short_greens: audit.short_greens,
                conflicting_greens: audit.conflicting_greens,
            };
            on_day(&summary);
            run.days.push(summary);
        }
    }
    Ok(run)
}
