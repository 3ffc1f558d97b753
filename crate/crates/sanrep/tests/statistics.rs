//! Distributional sanity checks beyond the headline M/M/1 mean: these pin
//! the firing-time transform, case branching, and conditional rewards to
//! closed-form values with fixed seeds and generous tolerances.

use sanrep::connectivity::build_connectivity;
use sanrep::expr::{lex, parse, parse_tokens, Expr};
use sanrep::flatten::{flatten, FlatModel};
use sanrep::model::{ActivityDecl, AtomicModel, CaseDecl, PlaceDecl, Timing, UpdateStmt};
use sanrep::rewards::{evaluate_reward, RewardKind, RewardVar};
use sanrep::sim::{simulate, SimConfig};

fn timed(name: &str, rate: &str, enabling: &str, updates: Vec<(&str, &str)>) -> ActivityDecl {
    ActivityDecl {
        name: name.to_string(),
        timing: Timing::Exponential { rate: parse(rate).unwrap() },
        enabling: parse(enabling).unwrap(),
        cases: vec![CaseDecl {
            weight: Expr::int(1),
            updates: updates
                .into_iter()
                .map(|(t, v)| UpdateStmt::new(t, None, parse(v).unwrap()))
                .collect(),
        }],
        span: Default::default(),
    }
}

fn dotted(src: &str) -> Expr {
    let tokens = lex(src).unwrap();
    let mut pos = 0;
    parse_tokens(&tokens, &mut pos, true).unwrap()
}

fn mm1() -> FlatModel {
    let model = AtomicModel::new("q")
        .with_place(PlaceDecl::scalar("Queue", Expr::int(0)))
        .with_activity(timed("arrive", "0.5", "true", vec![("Queue", "Queue + 1")]))
        .with_activity(timed("serve", "1.0", "Queue > 0", vec![("Queue", "Queue - 1")]));
    flatten(&model.into_node(), "q").unwrap()
}

#[test]
fn mm1_utilization_matches_rho() {
    // P(Queue > 0) = rho = 0.5 in steady state.
    let fm = mm1();
    let cl = build_connectivity(&fm);
    let rv = RewardVar {
        name: "busy".to_string(),
        rate: Some(dotted("if q.Queue > 0 then 1 else 0")),
        impulses: vec![],
        kind: RewardKind::TimeAveraged { from: 0.0, to: 150_000.0 },
    };
    let mut values = Vec::new();
    for seed in 1..=5u64 {
        let cfg = SimConfig::new(seed).max_time(150_000.0);
        let traj = simulate(&fm, &cl, &cfg).unwrap();
        values.push(evaluate_reward(&rv, &fm, &traj).unwrap());
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    assert!((mean - 0.5).abs() < 0.02, "utilization {mean}");
}

#[test]
fn exponential_interevent_mean_matches_the_rate() {
    // A single always-enabled activity with rate 2 fires with mean gap 0.5.
    let model = AtomicModel::new("poisson")
        .with_place(PlaceDecl::scalar("Count", Expr::int(0)))
        .with_activity(timed("tick", "2.0", "true", vec![("Count", "Count + 1")]));
    let fm = flatten(&model.into_node(), "p").unwrap();
    let cl = build_connectivity(&fm);
    let traj = simulate(&fm, &cl, &SimConfig::new(7).max_events(40_000)).unwrap();
    let mean_gap = traj.end_time / traj.events.len() as f64;
    assert!((mean_gap - 0.5).abs() < 0.01, "mean gap {mean_gap}");
    // Second moment of Exp(2) is 2/lambda^2 = 0.5.
    let mut prev = 0.0;
    let mut second = 0.0;
    for e in &traj.events {
        second += (e.time - prev).powi(2);
        prev = e.time;
    }
    second /= traj.events.len() as f64;
    assert!((second - 0.5).abs() < 0.03, "second moment {second}");
}

#[test]
fn case_weights_branch_in_proportion() {
    let model = AtomicModel::new("branch")
        .with_place(PlaceDecl::scalar("A", Expr::int(0)))
        .with_place(PlaceDecl::scalar("B", Expr::int(0)))
        .with_activity(ActivityDecl {
            name: "split".to_string(),
            timing: Timing::Exponential { rate: parse("1").unwrap() },
            enabling: parse("true").unwrap(),
            cases: vec![
                CaseDecl {
                    weight: parse("3").unwrap(),
                    updates: vec![UpdateStmt::new("A", None, parse("A + 1").unwrap())],
                },
                CaseDecl {
                    weight: parse("1").unwrap(),
                    updates: vec![UpdateStmt::new("B", None, parse("B + 1").unwrap())],
                },
            ],
            span: Default::default(),
        });
    let fm = flatten(&model.into_node(), "m").unwrap();
    let cl = build_connectivity(&fm);
    let traj = simulate(&fm, &cl, &SimConfig::new(11).max_events(20_000)).unwrap();
    let a = traj.final_marking.0[fm.var_by_label("m.A").unwrap() as usize] as f64;
    let b = traj.final_marking.0[fm.var_by_label("m.B").unwrap() as usize] as f64;
    let share = a / (a + b);
    assert!((share - 0.75).abs() < 0.01, "heavy-case share {share}");
    // One case draw per event, one firing-time draw per (re-)enabling:
    // the initial schedule plus one redraw after every firing.
    assert_eq!(traj.draws, 2 * traj.events.len() as u64 + 1);
}

#[test]
fn marking_dependent_rates_are_sampled_at_each_redraw() {
    // The clock alternates phases and its rate is re-evaluated whenever it
    // is rescheduled (after every firing), so delays alternate Exp(1) and
    // Exp(4): the long-run mean gap is (1 + 1/4) / 2 = 0.625.
    let model = AtomicModel::new("clock")
        .with_place(PlaceDecl::scalar("Phase", Expr::int(0)))
        .with_activity(timed(
            "tick",
            "if Phase == 0 then 1.0 else 4.0",
            "true",
            vec![("Phase", "1 - Phase")],
        ));
    let fm = flatten(&model.into_node(), "c").unwrap();
    let cl = build_connectivity(&fm);
    let traj = simulate(&fm, &cl, &SimConfig::new(3).max_events(40_000)).unwrap();
    let mean_gap = traj.end_time / traj.events.len() as f64;
    assert!((mean_gap - 0.625).abs() < 0.01, "mean gap {mean_gap}");

    // Interleaved horizon check through a conditional reward: the fraction
    // of time spent in phase 1 is (1/4) / (1 + 1/4) = 0.2.
    let rv = RewardVar {
        name: "phase1".to_string(),
        rate: Some(dotted("if c.Phase == 1 then 1 else 0")),
        impulses: vec![],
        kind: RewardKind::TimeAveraged { from: 0.0, to: 20_000.0 },
    };
    let share = evaluate_reward(&rv, &fm, &traj).unwrap();
    assert!((share - 0.2).abs() < 0.01, "phase-1 share {share}");
}
