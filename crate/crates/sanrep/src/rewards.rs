//! Reward variables evaluated over trajectories.
//!
//! A reward variable combines an optional rate expression (a function of the
//! marking, integrated piecewise-constant between events) and impulse
//! clauses (collected at matching activity firings, evaluated on the
//! post-firing marking). Rewards are post-processed from recorded
//! trajectories rather than accumulated during simulation, which keeps them
//! replayable: evaluating the same trajectory twice gives the identical
//! value.
//!
//! Reward expressions address state by canonical label (`cells[2].P`,
//! `mon.Queue`); `repindex()` and `n` are not available in reward scope.
//!
//! [`estimate`] runs independent replications and reports the sample mean
//! with a Student-t 95% half-width.

use crate::connectivity::ConnectivityLists;
use crate::expr::{evaluate, EvalCtx, EvalError, Expr, ExprKind, PlaceEnv};
use crate::flatten::{FlatModel, FlattenError, VarId};
use crate::sim::{simulate, SimConfig, SimError, StopReason, Trajectory};
use statrs::distribution::{ContinuousCDF, StudentsT};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RewardKind {
    /// Integral of the rate over `[from, to]` divided by the interval
    /// length, plus impulses collected in the interval.
    TimeAveraged { from: f64, to: f64 },
    /// Rate expression sampled on the marking at time `at`; impulse clauses
    /// do not contribute.
    InstantOfTime { at: f64 },
    /// Raw integral plus impulses over `[from, to]`.
    Accumulated { from: f64, to: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseClause {
    /// Activity declaration name (matches every instance) or a full
    /// instance label like `cells[2].step`.
    pub activity: String,
    pub expr: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardVar {
    pub name: String,
    pub rate: Option<Expr>,
    pub impulses: Vec<ImpulseClause>,
    pub kind: RewardKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub half_width95: f64,
    pub runs: u32,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RewardError {
    #[error("reward `{name}` has neither a rate nor impulse clauses")]
    NoMeasure { name: String },
    #[error("reward `{name}` has an invalid interval [{from}, {to}]")]
    BadInterval { name: String, from: f64, to: f64 },
    #[error("trajectory ends at {covered} before the reward horizon {needed}")]
    HorizonExceeded { needed: f64, covered: f64 },
    #[error("unknown state variable `{label}` in reward expression")]
    UnknownLabel { label: String },
    #[error("impulse clause names unknown activity `{name}`")]
    UnknownActivity { name: String },
    #[error("repindex()/n are not available in reward expressions")]
    ReplicationSymbol,
    #[error("estimation needs at least 2 runs, got {got}")]
    NeedTwoRuns { got: usize },
    #[error("reward evaluation: {0}")]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Flatten(#[from] FlattenError),
}

fn collect_labels(e: &Expr, out: &mut Vec<String>) {
    match &e.kind {
        ExprKind::Place(p) => {
            out.push(p.name.clone());
            if let Some(idx) = &p.index {
                collect_labels(idx, out);
            }
        }
        ExprKind::Count(inner) | ExprKind::Unary(_, inner) => collect_labels(inner, out),
        ExprKind::Contains(a, b) | ExprKind::Binary(_, a, b) => {
            collect_labels(a, out);
            collect_labels(b, out);
        }
        ExprKind::If(a, b, c) => {
            collect_labels(a, out);
            collect_labels(b, out);
            collect_labels(c, out);
        }
        _ => {}
    }
}

fn mentions_replication(e: &Expr) -> bool {
    match &e.kind {
        ExprKind::RepIndex | ExprKind::N => true,
        ExprKind::Place(p) => p.index.as_deref().is_some_and(mentions_replication),
        ExprKind::Count(inner) | ExprKind::Unary(_, inner) => mentions_replication(inner),
        ExprKind::Contains(a, b) | ExprKind::Binary(_, a, b) => {
            mentions_replication(a) || mentions_replication(b)
        }
        ExprKind::If(a, b, c) => {
            mentions_replication(a) || mentions_replication(b) || mentions_replication(c)
        }
        _ => false,
    }
}

struct LabelEnv<'a> {
    resolved: &'a BTreeMap<String, VarId>,
    marking: &'a [i64],
}

impl PlaceEnv for LabelEnv<'_> {
    fn read(&self, place: &str, index: Option<i64>) -> Result<i64, EvalError> {
        if index.is_some() {
            // Reward labels embed constant indices in the name itself.
            return Err(EvalError::IndexOnScalar { place: place.to_string() });
        }
        self.resolved
            .get(place)
            .map(|&v| self.marking[v as usize])
            .ok_or_else(|| EvalError::UnknownPlace { place: place.to_string() })
    }

    fn repshared(&self, place: &str) -> Result<Vec<i64>, EvalError> {
        Err(EvalError::NotRepShared { place: place.to_string() })
    }
}

/// Resolve every state-variable label a reward mentions, once.
fn resolve_labels(rv: &RewardVar, fm: &FlatModel) -> Result<BTreeMap<String, VarId>, RewardError> {
    let mut labels = Vec::new();
    if let Some(rate) = &rv.rate {
        if mentions_replication(rate) {
            return Err(RewardError::ReplicationSymbol);
        }
        collect_labels(rate, &mut labels);
    }
    for clause in &rv.impulses {
        if mentions_replication(&clause.expr) {
            return Err(RewardError::ReplicationSymbol);
        }
        collect_labels(&clause.expr, &mut labels);
    }
    let mut resolved = BTreeMap::new();
    for label in labels {
        let var = fm
            .var_by_label(&label)
            .ok_or_else(|| RewardError::UnknownLabel { label: label.clone() })?;
        resolved.insert(label, var);
    }
    Ok(resolved)
}

fn eval_with(
    expr: &Expr,
    resolved: &BTreeMap<String, VarId>,
    marking: &[i64],
) -> Result<f64, RewardError> {
    let env = LabelEnv { resolved, marking };
    let ctx = EvalCtx { replica_index: 0, n: 1, env: &env };
    Ok(evaluate(expr, &ctx)?.as_real()?)
}

fn interval(rv: &RewardVar) -> Result<(f64, f64), RewardError> {
    let (from, to) = match rv.kind {
        RewardKind::TimeAveraged { from, to } => (from, to),
        RewardKind::Accumulated { from, to } => (from, to),
        RewardKind::InstantOfTime { at } => (at, at),
    };
    let bad = !(0.0 <= from && from <= to)
        || matches!(rv.kind, RewardKind::TimeAveraged { .. } if from == to);
    if bad {
        return Err(RewardError::BadInterval { name: rv.name.clone(), from, to });
    }
    Ok((from, to))
}

/// Evaluate a reward variable over one trajectory.
pub fn evaluate_reward(
    rv: &RewardVar,
    fm: &FlatModel,
    traj: &Trajectory,
) -> Result<f64, RewardError> {
    if rv.rate.is_none() && rv.impulses.is_empty() {
        return Err(RewardError::NoMeasure { name: rv.name.clone() });
    }
    let (from, to) = interval(rv)?;
    for clause in &rv.impulses {
        let known = fm.activities.iter().any(|a| {
            clause.activity == a.label || clause.activity == a.model.activities[a.decl_idx].name
        });
        if !known {
            return Err(RewardError::UnknownActivity { name: clause.activity.clone() });
        }
    }
    let covered = match traj.status {
        StopReason::Absorbed => f64::INFINITY,
        _ => traj.end_time,
    };
    if to > covered {
        return Err(RewardError::HorizonExceeded { needed: to, covered });
    }
    let resolved = resolve_labels(rv, fm)?;

    let mut marking = fm.initial_marking()?.0;
    let mut rate_integral = 0.0;
    let mut instant_value: Option<f64> = None;
    let mut impulse_sum = 0.0;
    let instant = matches!(rv.kind, RewardKind::InstantOfTime { .. });

    let mut segment_start = 0.0f64;
    let mut event_idx = 0;
    loop {
        let segment_end = traj.events.get(event_idx).map(|e| e.time).unwrap_or(f64::INFINITY);
        // Rate contribution of [segment_start, segment_end) clipped to
        // [from, to].
        if let Some(rate) = &rv.rate {
            if !instant {
                let lo = segment_start.max(from);
                let hi = segment_end.min(to);
                if hi > lo {
                    rate_integral += eval_with(rate, &resolved, &marking)? * (hi - lo);
                }
            } else if instant_value.is_none() {
                // The marking at time `at` is the state after all events at
                // times <= at; segments are right-open, so the first segment
                // extending past `at` holds that state.
                let at = from;
                if segment_end > at {
                    instant_value = Some(eval_with(rate, &resolved, &marking)?);
                }
            }
        }
        let Some(event) = traj.events.get(event_idx) else { break };
        // Nothing after the horizon can contribute.
        if instant {
            if instant_value.is_some() {
                break;
            }
        } else if event.time > to {
            break;
        }
        for change in &event.changes {
            marking[change.var as usize] = change.new;
        }
        if !instant && event.time >= from && event.time <= to {
            for clause in &rv.impulses {
                let act = &fm.activities[event.activity as usize];
                let decl_name = &act.model.activities[act.decl_idx].name;
                if clause.activity == *decl_name || clause.activity == act.label {
                    impulse_sum += eval_with(&clause.expr, &resolved, &marking)?;
                }
            }
        }
        segment_start = event.time;
        event_idx += 1;
    }

    let value = match rv.kind {
        RewardKind::TimeAveraged { from, to } => rate_integral / (to - from) + impulse_sum,
        RewardKind::Accumulated { .. } => rate_integral + impulse_sum,
        RewardKind::InstantOfTime { .. } => instant_value.unwrap_or(0.0),
    };
    Ok(value)
}

/// Student-t 97.5% quantile for `df` degrees of freedom.
fn t_quantile_975(df: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df).expect("valid degrees of freedom").inverse_cdf(0.975)
}

/// Sample mean and 95% confidence half-width of independent replications.
pub fn summarize(samples: &[f64]) -> Estimate {
    let k = samples.len();
    assert!(k >= 2, "summarize needs at least two samples");
    let mean = samples.iter().sum::<f64>() / k as f64;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k as f64 - 1.0);
    let half_width95 =
        if var == 0.0 { 0.0 } else { t_quantile_975(k as f64 - 1.0) * (var / k as f64).sqrt() };
    Estimate { mean, half_width95, runs: k as u32 }
}

/// Run one replication per seed (concurrently) and summarize.
pub fn estimate(
    rv: &RewardVar,
    fm: &FlatModel,
    cl: &ConnectivityLists,
    cfg: &SimConfig,
    seeds: &[u64],
) -> Result<Estimate, RewardError> {
    if seeds.len() < 2 {
        return Err(RewardError::NeedTwoRuns { got: seeds.len() });
    }
    let workers =
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(4).min(seeds.len());
    let mut samples: Vec<Option<Result<f64, RewardError>>> = vec![None; seeds.len()];
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for w in 0..workers {
            handles.push(scope.spawn(move || {
                let mut out = Vec::new();
                for (i, &seed) in seeds.iter().enumerate() {
                    if i % workers != w {
                        continue;
                    }
                    let run_cfg = SimConfig { seed, ..cfg.clone() };
                    let result = simulate(fm, cl, &run_cfg)
                        .map_err(RewardError::from)
                        .and_then(|traj| evaluate_reward(rv, fm, &traj));
                    out.push((i, result));
                }
                out
            }));
        }
        for handle in handles {
            for (i, result) in handle.join().expect("replication worker") {
                samples[i] = Some(result);
            }
        }
    });
    let values: Vec<f64> =
        samples.into_iter().map(|s| s.expect("every index assigned")).collect::<Result<_, _>>()?;
    Ok(summarize(&values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connectivity::build_connectivity;
    use crate::expr::{parse, Expr};
    use crate::flatten::flatten;
    use crate::model::{ActivityDecl, AtomicModel, CaseDecl, PlaceDecl, Timing, UpdateStmt};

    fn pulse_model() -> AtomicModel {
        // A token bounces: P goes 1 -> 0 -> 1 with deterministic delays, so
        // integrals have closed forms.
        AtomicModel::new("pulse")
            .with_place(PlaceDecl::scalar("P", Expr::int(1)))
            .with_activity(ActivityDecl {
                name: "drain".to_string(),
                timing: Timing::Deterministic { delay: Expr::int(1) },
                enabling: parse("P > 0").unwrap(),
                cases: vec![CaseDecl {
                    weight: Expr::int(1),
                    updates: vec![UpdateStmt::new("P", None, parse("P - 1").unwrap())],
                }],
                span: Default::default(),
            })
            .with_activity(ActivityDecl {
                name: "refill".to_string(),
                timing: Timing::Deterministic { delay: Expr::int(1) },
                enabling: parse("P == 0").unwrap(),
                cases: vec![CaseDecl {
                    weight: Expr::int(1),
                    updates: vec![UpdateStmt::new("P", None, parse("P + 1").unwrap())],
                }],
                span: Default::default(),
            })
    }

    fn run(max_time: f64) -> (crate::flatten::FlatModel, Trajectory) {
        let fm = flatten(&pulse_model().into_node(), "pulse").unwrap();
        let cl = build_connectivity(&fm);
        let cfg = SimConfig::new(1).max_time(max_time);
        let traj = simulate(&fm, &cl, &cfg).unwrap();
        (fm, traj)
    }

    fn reward(rate: Option<&str>, kind: RewardKind) -> RewardVar {
        RewardVar {
            name: "r".to_string(),
            rate: rate.map(|r| {
                let tokens = crate::expr::lex(r).unwrap();
                let mut pos = 0;
                crate::expr::parse_tokens(&tokens, &mut pos, true).unwrap()
            }),
            impulses: vec![],
            kind,
        }
    }

    #[test]
    fn constant_rate_time_average_is_one() {
        let (fm, traj) = run(10.0);
        let rv = reward(Some("1"), RewardKind::TimeAveraged { from: 0.0, to: 10.0 });
        let v = evaluate_reward(&rv, &fm, &traj).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn impulse_counts_events_in_window() {
        let (fm, traj) = run(10.0);
        let mut rv = reward(None, RewardKind::Accumulated { from: 0.0, to: 7.5 });
        rv.impulses.push(ImpulseClause { activity: "drain".to_string(), expr: Expr::int(1) });
        rv.impulses.push(ImpulseClause { activity: "refill".to_string(), expr: Expr::int(1) });
        let v = evaluate_reward(&rv, &fm, &traj).unwrap();
        let expected = traj.events.iter().filter(|e| e.time <= 7.5).count() as f64;
        assert_eq!(v, expected);
        assert_eq!(v, 7.0);
    }

    #[test]
    fn square_wave_time_average_is_half() {
        // P is 1 on [0,1), 0 on [1,2), ... so the average over [0,10] is 1/2.
        let (fm, traj) = run(10.0);
        let rv = reward(Some("pulse.P"), RewardKind::TimeAveraged { from: 0.0, to: 10.0 });
        let v = evaluate_reward(&rv, &fm, &traj).unwrap();
        assert!((v - 0.5).abs() < 1e-12, "{v}");
    }

    #[test]
    fn instant_of_time_samples_post_event_state() {
        let (fm, traj) = run(10.0);
        let rv = reward(Some("pulse.P"), RewardKind::InstantOfTime { at: 0.5 });
        assert_eq!(evaluate_reward(&rv, &fm, &traj).unwrap(), 1.0);
        // At exactly t=1 the drain has fired.
        let rv = reward(Some("pulse.P"), RewardKind::InstantOfTime { at: 1.0 });
        assert_eq!(evaluate_reward(&rv, &fm, &traj).unwrap(), 0.0);
    }

    #[test]
    fn horizon_violation_is_detected() {
        let (fm, traj) = run(5.0);
        let rv = reward(Some("1"), RewardKind::TimeAveraged { from: 0.0, to: 10.0 });
        assert!(matches!(
            evaluate_reward(&rv, &fm, &traj),
            Err(RewardError::HorizonExceeded { .. })
        ));
    }

    #[test]
    fn linearity_in_the_rate_expression() {
        let (fm, traj) = run(10.0);
        let base = reward(Some("pulse.P"), RewardKind::Accumulated { from: 0.0, to: 10.0 });
        let scaled = reward(Some("3 * pulse.P"), RewardKind::Accumulated { from: 0.0, to: 10.0 });
        let a = evaluate_reward(&base, &fm, &traj).unwrap();
        let b = evaluate_reward(&scaled, &fm, &traj).unwrap();
        assert!((b - 3.0 * a).abs() < 1e-12);
    }

    #[test]
    fn replaying_gives_identical_values() {
        let (fm, traj) = run(10.0);
        let rv = reward(Some("pulse.P"), RewardKind::TimeAveraged { from: 0.0, to: 10.0 });
        let a = evaluate_reward(&rv, &fm, &traj).unwrap();
        let b = evaluate_reward(&rv, &fm, &traj).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn t_quantiles_match_published_table() {
        assert!((t_quantile_975(1.0) - 12.7062047361747).abs() < 1e-9);
        assert!((t_quantile_975(2.0) - 4.30265272974946).abs() < 1e-9);
        assert!((t_quantile_975(19.0) - 2.09302405440831).abs() < 1e-9);
    }

    #[test]
    fn summarize_two_samples() {
        let est = summarize(&[1.0, 3.0]);
        assert_eq!(est.mean, 2.0);
        assert_eq!(est.runs, 2);
        // Standard error is 1.0, so the half-width is the t quantile itself.
        assert!((est.half_width95 - 12.7062047361747).abs() < 1e-6);
    }

    #[test]
    fn constant_reward_has_zero_half_width() {
        let fm = flatten(&pulse_model().into_node(), "pulse").unwrap();
        let cl = build_connectivity(&fm);
        let cfg = SimConfig::new(0).max_time(4.0);
        let rv = reward(Some("1"), RewardKind::TimeAveraged { from: 0.0, to: 4.0 });
        let est = estimate(&rv, &fm, &cl, &cfg, &[1, 2, 3]).unwrap();
        assert_eq!(est.mean, 1.0);
        assert_eq!(est.half_width95, 0.0);
        assert_eq!(est.runs, 3);
    }

    #[test]
    fn estimation_requires_two_seeds() {
        let fm = flatten(&pulse_model().into_node(), "pulse").unwrap();
        let cl = build_connectivity(&fm);
        let cfg = SimConfig::new(0).max_time(4.0);
        let rv = reward(Some("1"), RewardKind::TimeAveraged { from: 0.0, to: 4.0 });
        assert!(matches!(
            estimate(&rv, &fm, &cl, &cfg, &[1]),
            Err(RewardError::NeedTwoRuns { got: 1 })
        ));
    }
}
