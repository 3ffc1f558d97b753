//! Discrete-event simulation of a flattened model.
//!
//! # Scheduling
//!
//! Timed activities follow the restart-on-disable policy: a firing time is
//! drawn when the activity becomes enabled, kept as long as it stays enabled
//! (rate changes do not reschedule), cancelled on disable, and redrawn after
//! the activity itself fires. The minimum-time scheduled activity fires
//! next; ties break toward the smaller instance id. Instantaneous activities
//! fire between timed firings until none is enabled: highest priority first,
//! equal priorities resolved by a weighted draw, instance id ordering
//! everywhere else.
//!
//! # Random draws
//!
//! One [`crate::rng::SplitMix64`] output is consumed per: (1) firing-time
//! draw of an exponential activity on enabling, (2) case selection when an
//! activity has more than one case, (3) selection among several enabled
//! instantaneous activities at equal priority. Deterministic delays and
//! single-case firings consume nothing. Together with the fixed examination
//! order this makes a trajectory a pure function of `(model, seed)`.
//!
//! # Re-examination
//!
//! After an event only the activities reading a changed variable (plus the
//! fired activity) are re-examined in [`SimMode::Connectivity`];
//! [`SimMode::Oracle`] rescans everything. The two modes must produce
//! identical trajectories — that equivalence is the test that connectivity
//! lists lose no enabling changes.

use crate::connectivity::ConnectivityLists;
use crate::expr::{evaluate, EvalCtx, EvalError, Expr, PlaceEnv, Value};
use crate::flatten::{ActId, ActivityInstance, FlatModel, FlattenError, Marking, VarId};
use crate::model::Timing;
use crate::rng::SplitMix64;
use std::cmp::Reverse;
use std::collections::BTreeSet;
use std::io::{self, Write};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimMode {
    /// Re-examine only connectivity-affected activities after each event.
    Connectivity,
    /// Re-examine every activity after each event (equivalence oracle).
    Oracle,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub seed: u64,
    pub stop_after_events: Option<u64>,
    pub stop_at_time: Option<f64>,
    pub mode: SimMode,
    pub max_instantaneous_chain: u32,
}

impl SimConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            stop_after_events: None,
            stop_at_time: None,
            mode: SimMode::Connectivity,
            max_instantaneous_chain: 100_000,
        }
    }

    pub fn max_events(mut self, n: u64) -> Self {
        self.stop_after_events = Some(n);
        self
    }

    pub fn max_time(mut self, t: f64) -> Self {
        self.stop_at_time = Some(t);
        self
    }

    pub fn oracle(mut self) -> Self {
        self.mode = SimMode::Oracle;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarChange {
    pub var: VarId,
    pub old: i64,
    pub new: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub time: f64,
    pub activity: ActId,
    pub case_index: u32,
    /// Net state changes, ascending by variable id, `old != new`.
    pub changes: Vec<VarChange>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    EventLimit,
    TimeLimit,
    /// No activity enabled or scheduled.
    Absorbed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub events: Vec<Event>,
    pub final_marking: Marking,
    pub draws: u64,
    /// Activity examinations performed after events (both modes count the
    /// same way, so the oracle/connectivity workload contrast is visible).
    pub reexaminations: u64,
    pub status: StopReason,
    pub end_time: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("no stop condition configured")]
    NoStopCondition,
    #[error("instantaneous chain exceeded {limit} firings")]
    Livelock { limit: u32 },
    #[error("update drives `{var}` to {attempted}")]
    NegativeMarking { var: String, attempted: i64 },
    #[error("activity `{activity}`: rate/delay evaluated to {value}")]
    InvalidRate { activity: String, value: f64 },
    #[error("activity `{activity}`: case weights sum to {sum}")]
    InvalidWeight { activity: String, sum: f64 },
    #[error("activity `{activity}`: {source}")]
    Eval { activity: String, source: EvalError },
    #[error(transparent)]
    Flatten(#[from] FlattenError),
}

/// Totally ordered event time; simulation times are always finite.
#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

struct ActEnv<'a> {
    fm: &'a FlatModel,
    act: &'a ActivityInstance,
    marking: &'a [i64],
}

impl PlaceEnv for ActEnv<'_> {
    fn read(&self, place: &str, index: Option<i64>) -> Result<i64, EvalError> {
        let var = self.fm.resolve_runtime(self.act.leaf, place, index)?;
        if self.act.grants.binary_search(&var).is_err() {
            return Err(EvalError::AccessViolation {
                place: place.to_string(),
                index: index.unwrap_or(self.act.replica_index),
                reader: self.act.replica_index,
            });
        }
        Ok(self.marking[var as usize])
    }

    fn repshared(&self, place: &str) -> Result<Vec<i64>, EvalError> {
        self.fm.leaves[self.act.leaf as usize]
            .repshared
            .get(place)
            .cloned()
            .ok_or_else(|| EvalError::NotRepShared { place: place.to_string() })
    }
}

pub enum Step {
    Fired,
    Absorbed,
    PastLimit,
}

pub struct Simulator<'a> {
    fm: &'a FlatModel,
    cl: &'a ConnectivityLists,
    mode: SimMode,
    max_chain: u32,
    rng: SplitMix64,
    time: f64,
    marking: Vec<i64>,
    scheduled: Vec<Option<f64>>,
    queue: BTreeSet<(OrdF64, ActId)>,
    inst_enabled: BTreeSet<(Reverse<u32>, ActId)>,
    chain: u32,
    timed_active: bool,
    events: Vec<Event>,
    draws: u64,
    reexaminations: u64,
}

impl<'a> Simulator<'a> {
    pub fn new(
        fm: &'a FlatModel,
        cl: &'a ConnectivityLists,
        cfg: &SimConfig,
    ) -> Result<Self, SimError> {
        let marking = fm.initial_marking()?.0;
        let mut sim = Self {
            fm,
            cl,
            mode: cfg.mode,
            max_chain: cfg.max_instantaneous_chain,
            rng: SplitMix64::new(cfg.seed),
            time: 0.0,
            marking,
            scheduled: vec![None; fm.activities.len()],
            queue: BTreeSet::new(),
            inst_enabled: BTreeSet::new(),
            chain: 0,
            timed_active: false,
            events: Vec::new(),
            draws: 0,
            reexaminations: 0,
        };
        for id in 0..fm.activities.len() as ActId {
            if sim.priority_of(id).is_some() {
                sim.examine_instantaneous(id)?;
            }
        }
        Ok(sim)
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    // Returned reference borrows from the flat model, not from `self`, so
    // callers can keep it across state mutations.
    fn decl(&self, id: ActId) -> &'a crate::model::ActivityDecl {
        let act = &self.fm.activities[id as usize];
        &act.model.activities[act.decl_idx]
    }

    fn priority_of(&self, id: ActId) -> Option<u32> {
        match self.decl(id).timing {
            Timing::Instantaneous { priority, .. } => Some(priority),
            _ => None,
        }
    }

    fn draw_unit(&mut self) -> f64 {
        self.draws += 1;
        self.rng.next_unit()
    }

    fn eval(&self, id: ActId, expr: &Expr) -> Result<Value, SimError> {
        let act = &self.fm.activities[id as usize];
        let env = ActEnv { fm: self.fm, act, marking: &self.marking };
        let ctx = EvalCtx { replica_index: act.replica_index, n: act.n, env: &env };
        evaluate(expr, &ctx)
            .map_err(|source| SimError::Eval { activity: act.label.clone(), source })
    }

    fn is_enabled(&self, id: ActId) -> Result<bool, SimError> {
        let enabling = &self.decl(id).enabling;
        self.eval(id, enabling)?.as_bool().map_err(|source| SimError::Eval {
            activity: self.fm.activities[id as usize].label.clone(),
            source,
        })
    }

    fn examine_timed(&mut self, id: ActId) -> Result<(), SimError> {
        let enabled = self.is_enabled(id)?;
        match (self.scheduled[id as usize], enabled) {
            (Some(t), false) => {
                self.queue.remove(&(OrdF64(t), id));
                self.scheduled[id as usize] = None;
            }
            (None, true) => {
                let delay = match &self.decl(id).timing {
                    Timing::Exponential { rate } => {
                        let rate = self.rate_value(id, rate)?;
                        self.draws += 1;
                        self.rng.next_exp(rate)
                    }
                    Timing::Deterministic { delay } => {
                        let delay =
                            self.eval(id, delay)?.as_real().map_err(|source| SimError::Eval {
                                activity: self.fm.activities[id as usize].label.clone(),
                                source,
                            })?;
                        if delay < 0.0 || !delay.is_finite() {
                            return Err(SimError::InvalidRate {
                                activity: self.fm.activities[id as usize].label.clone(),
                                value: delay,
                            });
                        }
                        delay
                    }
                    Timing::Instantaneous { .. } => unreachable!("timed examination"),
                };
                let t = self.time + delay;
                self.queue.insert((OrdF64(t), id));
                self.scheduled[id as usize] = Some(t);
            }
            _ => {}
        }
        Ok(())
    }

    fn rate_value(&self, id: ActId, rate: &Expr) -> Result<f64, SimError> {
        let v = self.eval(id, rate)?.as_real().map_err(|source| SimError::Eval {
            activity: self.fm.activities[id as usize].label.clone(),
            source,
        })?;
        if !(v.is_finite() && v > 0.0) {
            return Err(SimError::InvalidRate {
                activity: self.fm.activities[id as usize].label.clone(),
                value: v,
            });
        }
        Ok(v)
    }

    fn examine_instantaneous(&mut self, id: ActId) -> Result<(), SimError> {
        let priority = self.priority_of(id).expect("instantaneous activity");
        let enabled = self.is_enabled(id)?;
        let key = (Reverse(priority), id);
        if enabled {
            self.inst_enabled.insert(key);
        } else {
            self.inst_enabled.remove(&key);
        }
        Ok(())
    }

    fn reexamine(&mut self, affected: &[ActId]) -> Result<(), SimError> {
        self.reexaminations += affected.len() as u64;
        for &id in affected {
            if self.priority_of(id).is_some() {
                self.examine_instantaneous(id)?;
            } else if self.timed_active {
                self.examine_timed(id)?;
            }
        }
        Ok(())
    }

    /// Weighted pick: index with the smallest cumulative weight reaching
    /// `u * total`. One draw; weights must be non-negative with positive sum.
    fn pick_weighted(&mut self, label: &str, weights: &[f64]) -> Result<usize, SimError> {
        let mut total = 0.0;
        for &w in weights {
            if w < 0.0 || !w.is_finite() {
                return Err(SimError::InvalidWeight { activity: label.to_string(), sum: w });
            }
            total += w;
        }
        if total <= 0.0 {
            return Err(SimError::InvalidWeight { activity: label.to_string(), sum: total });
        }
        let target = self.draw_unit() * total;
        let mut cum = 0.0;
        for (i, &w) in weights.iter().enumerate() {
            cum += w;
            if cum >= target {
                return Ok(i);
            }
        }
        Ok(weights.len() - 1)
    }

    fn fire(&mut self, id: ActId) -> Result<(), SimError> {
        let decl = self.decl(id);
        let label = &self.fm.activities[id as usize].label;
        let case_index = if decl.cases.len() == 1 {
            0
        } else {
            let weights: Vec<f64> = decl
                .cases
                .iter()
                .map(|case| {
                    self.eval(id, &case.weight)?
                        .as_real()
                        .map_err(|source| SimError::Eval { activity: label.clone(), source })
                })
                .collect::<Result<_, _>>()?;
            let label = label.clone();
            self.pick_weighted(&label, &weights)?
        };

        // Apply updates sequentially; each statement sees the effect of the
        // previous ones.
        let mut first_old: std::collections::BTreeMap<VarId, i64> =
            std::collections::BTreeMap::new();
        for update in &decl.cases[case_index].updates {
            let act = &self.fm.activities[id as usize];
            let label = &act.label;
            let index = match &update.target.index {
                None => None,
                Some(idx) => Some(
                    self.eval(id, idx)?
                        .as_int()
                        .map_err(|source| SimError::Eval { activity: label.clone(), source })?,
                ),
            };
            let var = self
                .fm
                .resolve_runtime(act.leaf, &update.target.name, index)
                .map_err(|source| SimError::Eval { activity: label.clone(), source })?;
            if act.grants.binary_search(&var).is_err() {
                return Err(SimError::Eval {
                    activity: label.clone(),
                    source: EvalError::AccessViolation {
                        place: update.target.name.clone(),
                        index: index.unwrap_or(act.replica_index),
                        reader: act.replica_index,
                    },
                });
            }
            let value = self
                .eval(id, &update.value)?
                .as_int()
                .map_err(|source| SimError::Eval { activity: label.clone(), source })?;
            if value < 0 {
                return Err(SimError::NegativeMarking {
                    var: self.fm.vars[var as usize].label.clone(),
                    attempted: value,
                });
            }
            first_old.entry(var).or_insert(self.marking[var as usize]);
            self.marking[var as usize] = value;
        }

        let changes: Vec<VarChange> = first_old
            .into_iter()
            .filter(|&(var, old)| self.marking[var as usize] != old)
            .map(|(var, old)| VarChange { var, old, new: self.marking[var as usize] })
            .collect();

        let changed_vars: Vec<VarId> = changes.iter().map(|c| c.var).collect();
        self.events.push(Event {
            time: self.time,
            activity: id,
            case_index: case_index as u32,
            changes,
        });

        let affected: Vec<ActId> = match self.mode {
            SimMode::Oracle => (0..self.fm.activities.len() as ActId).collect(),
            SimMode::Connectivity => {
                let mut a = self.cl.affected_activities(&changed_vars);
                if let Err(pos) = a.binary_search(&id) {
                    a.insert(pos, id);
                }
                a
            }
        };
        self.reexamine(&affected)
    }

    /// Produce the next event: an enabled instantaneous activity if any,
    /// otherwise the earliest scheduled timed activity. The first timed
    /// scheduling pass runs once the initial marking has stabilized.
    pub fn step(&mut self, time_limit: Option<f64>) -> Result<Step, SimError> {
        if let Some(&(Reverse(priority), first)) = self.inst_enabled.first() {
            let candidates: Vec<ActId> = self
                .inst_enabled
                .iter()
                .take_while(|(p, _)| p.0 == priority)
                .map(|&(_, id)| id)
                .collect();
            let chosen = if candidates.len() == 1 {
                first
            } else {
                let weights: Vec<f64> = candidates
                    .iter()
                    .map(|&id| {
                        let weight_expr = match &self.decl(id).timing {
                            Timing::Instantaneous { weight, .. } => weight,
                            _ => unreachable!(),
                        };
                        self.eval(id, weight_expr)?.as_real().map_err(|source| SimError::Eval {
                            activity: self.fm.activities[id as usize].label.clone(),
                            source,
                        })
                    })
                    .collect::<Result<_, _>>()?;
                candidates[self.pick_weighted("instantaneous selection", &weights)?]
            };
            self.chain += 1;
            if self.chain > self.max_chain {
                return Err(SimError::Livelock { limit: self.max_chain });
            }
            // Firing re-examines the chosen activity itself, so a
            // still-enabled immediate stays in the set.
            self.fire(chosen)?;
            return Ok(Step::Fired);
        }
        self.chain = 0;

        if !self.timed_active {
            self.timed_active = true;
            for id in 0..self.fm.activities.len() as ActId {
                if self.priority_of(id).is_none() {
                    self.examine_timed(id)?;
                }
            }
        }

        match self.queue.first().copied() {
            None => Ok(Step::Absorbed),
            Some((OrdF64(t), id)) => {
                if let Some(limit) = time_limit {
                    if t > limit {
                        return Ok(Step::PastLimit);
                    }
                }
                self.queue.pop_first();
                self.scheduled[id as usize] = None;
                self.time = t;
                self.fire(id)?;
                Ok(Step::Fired)
            }
        }
    }

    pub fn into_trajectory(self, status: StopReason, end_time: f64) -> Trajectory {
        Trajectory {
            events: self.events,
            final_marking: Marking(self.marking),
            draws: self.draws,
            reexaminations: self.reexaminations,
            status,
            end_time,
        }
    }
}

/// Everything an activity's re-examination depends on, evaluated directly
/// against a marking: the enabling value, the rate/delay/weight expression,
/// and the case weights. Connectivity soundness means no variable outside
/// the activity's read set can change any of these.
#[derive(Debug, Clone, PartialEq)]
pub struct ExamValues {
    pub enabling: Result<bool, SimError>,
    pub timing: Result<f64, SimError>,
    pub case_weights: Vec<Result<f64, SimError>>,
}

pub fn examination_values(fm: &FlatModel, id: ActId, marking: &Marking) -> ExamValues {
    let act = &fm.activities[id as usize];
    let decl = &act.model.activities[act.decl_idx];
    let eval = |expr: &Expr| -> Result<Value, SimError> {
        let env = ActEnv { fm, act, marking: &marking.0 };
        let ctx = EvalCtx { replica_index: act.replica_index, n: act.n, env: &env };
        evaluate(expr, &ctx)
            .map_err(|source| SimError::Eval { activity: act.label.clone(), source })
    };
    let as_real = |expr: &Expr| {
        eval(expr).and_then(|v| {
            v.as_real().map_err(|source| SimError::Eval { activity: act.label.clone(), source })
        })
    };
    let enabling = eval(&decl.enabling).and_then(|v| {
        v.as_bool().map_err(|source| SimError::Eval { activity: act.label.clone(), source })
    });
    let timing = match &decl.timing {
        Timing::Exponential { rate } => as_real(rate),
        Timing::Deterministic { delay } => as_real(delay),
        Timing::Instantaneous { weight, .. } => as_real(weight),
    };
    let case_weights = decl.cases.iter().map(|c| as_real(&c.weight)).collect();
    ExamValues { enabling, timing, case_weights }
}

/// Run a full simulation. The trajectory is a deterministic function of the
/// flattened model and `cfg.seed`; connectivity and oracle modes produce
/// identical trajectories.
pub fn simulate(
    fm: &FlatModel,
    cl: &ConnectivityLists,
    cfg: &SimConfig,
) -> Result<Trajectory, SimError> {
    if cfg.stop_after_events.is_none() && cfg.stop_at_time.is_none() {
        return Err(SimError::NoStopCondition);
    }
    let mut sim = Simulator::new(fm, cl, cfg)?;
    loop {
        if let Some(limit) = cfg.stop_after_events {
            if sim.events.len() as u64 >= limit {
                let end = sim.time;
                return Ok(sim.into_trajectory(StopReason::EventLimit, end));
            }
        }
        match sim.step(cfg.stop_at_time)? {
            Step::Fired => {}
            Step::Absorbed => {
                let end = sim.time;
                return Ok(sim.into_trajectory(StopReason::Absorbed, end));
            }
            Step::PastLimit => {
                let end = cfg.stop_at_time.expect("limit triggered");
                return Ok(sim.into_trajectory(StopReason::TimeLimit, end));
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryCmp {
    Equal,
    DivergedAt(usize),
}

/// Event-by-event comparison: time (bitwise), activity, case, changes.
pub fn compare_trajectories(a: &Trajectory, b: &Trajectory) -> TrajectoryCmp {
    let shared = a.events.len().min(b.events.len());
    for i in 0..shared {
        let (ea, eb) = (&a.events[i], &b.events[i]);
        if ea.time.to_bits() != eb.time.to_bits()
            || ea.activity != eb.activity
            || ea.case_index != eb.case_index
            || ea.changes != eb.changes
        {
            return TrajectoryCmp::DivergedAt(i);
        }
    }
    if a.events.len() != b.events.len() || a.final_marking != b.final_marking {
        return TrajectoryCmp::DivergedAt(shared);
    }
    TrajectoryCmp::Equal
}

/// Write the trajectory in the trace format: one event per line,
/// `time<TAB>activity<TAB>case<TAB>var:old->new,...`, times as shortest
/// round-trip decimals, variables as canonical labels.
pub fn write_trace(fm: &FlatModel, traj: &Trajectory, w: &mut dyn Write) -> io::Result<()> {
    for e in &traj.events {
        let changes = e
            .changes
            .iter()
            .map(|c| format!("{}:{}->{}", fm.vars[c.var as usize].label, c.old, c.new))
            .collect::<Vec<_>>()
            .join(",");
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            e.time, fm.activities[e.activity as usize].label, e.case_index, changes
        )?;
    }
    Ok(())
}
