//! Shared generators and checks for the property and acceptance suites.
//!
//! The expression generators produce well-typed trees over a fixed scope:
//! `P` scalar with 4 replicas, `Q` scalar, `B` an array of 3 entries, with
//! `P` rep-shared so `repshared(P)` is meaningful. Literals are kept
//! non-negative because the parser never produces negative literals (unary
//! minus is a node of its own), which keeps pretty-print round-trips exact.

use proptest::prelude::*;
use sanrep::expr::{
    evaluate, extract_dependencies, AccessIndex, BinOp, EvalCtx, Expr, MapEnv, UnOp,
};

pub const N: i64 = 4;

pub fn int_expr(depth: u32) -> BoxedStrategy<Expr> {
    let leaf = prop_oneof![
        (0i64..20).prop_map(Expr::int),
        Just(Expr::rep_index()),
        Just(Expr::n()),
        Just(Expr::place("P")),
        Just(Expr::place("Q")),
        (0i64..N).prop_map(|k| Expr::place_at("P", Expr::int(k))),
        (0i64..3).prop_map(|k| Expr::place_at("B", Expr::int(k))),
        Just(Expr::synth(sanrep::expr::ExprKind::Count(Box::new(Expr::synth(
            sanrep::expr::ExprKind::RepShared("P".to_string())
        ))))),
    ];
    if depth == 0 {
        return leaf.boxed();
    }
    let sub = int_expr(depth - 1);
    let sub_bool = bool_expr(depth - 1);
    prop_oneof![
        4 => leaf,
        2 => (sub.clone(), sub.clone(), prop_oneof![
                Just(BinOp::Add), Just(BinOp::Sub), Just(BinOp::Mul),
                Just(BinOp::Div), Just(BinOp::Mod),
            ])
            .prop_map(|(a, b, op)| Expr::binary(op, a, b)),
        1 => sub.clone().prop_map(|e| Expr::synth(sanrep::expr::ExprKind::Unary(UnOp::Neg, Box::new(e)))),
        1 => (sub_bool, sub.clone(), sub.clone()).prop_map(|(c, t, e)| Expr::if_then_else(c, t, e)),
        // Indexed reads with a computed index, wrapped modulo the range so
        // dynamic dependencies are exercised without drowning in
        // out-of-range errors.
        1 => sub.clone().prop_map(|idx| Expr::place_at("P", Expr::modulo(idx, Expr::n()))),
        1 => sub.prop_map(|idx| Expr::place_at("B", Expr::modulo(idx, Expr::int(3)))),
    ]
    .boxed()
}

pub fn bool_expr(depth: u32) -> BoxedStrategy<Expr> {
    let leaf = prop_oneof![
        any::<bool>().prop_map(Expr::bool),
        (
            int_expr(0),
            int_expr(0),
            prop_oneof![
                Just(BinOp::Lt),
                Just(BinOp::Le),
                Just(BinOp::Gt),
                Just(BinOp::Ge),
                Just(BinOp::Eq),
                Just(BinOp::Ne),
            ]
        )
            .prop_map(|(a, b, op)| Expr::binary(op, a, b)),
    ];
    if depth == 0 {
        return leaf.boxed();
    }
    let sub_int = int_expr(depth - 1);
    let sub = bool_expr(depth - 1);
    prop_oneof![
        3 => leaf,
        2 => (sub_int.clone(), sub_int.clone(), prop_oneof![
                Just(BinOp::Lt), Just(BinOp::Le), Just(BinOp::Gt),
                Just(BinOp::Ge), Just(BinOp::Eq), Just(BinOp::Ne),
            ])
            .prop_map(|(a, b, op)| Expr::binary(op, a, b)),
        2 => (sub.clone(), sub.clone(), prop_oneof![Just(BinOp::And), Just(BinOp::Or)])
            .prop_map(|(a, b, op)| Expr::binary(op, a, b)),
        1 => sub.clone().prop_map(|e| Expr::synth(sanrep::expr::ExprKind::Unary(UnOp::Not, Box::new(e)))),
        1 => sub_int.prop_map(|v| Expr::synth(sanrep::expr::ExprKind::Contains(
                Box::new(Expr::synth(sanrep::expr::ExprKind::RepShared("P".to_string()))),
                Box::new(v),
            ))),
    ]
    .boxed()
}

pub fn any_expr() -> BoxedStrategy<Expr> {
    prop_oneof![int_expr(3), bool_expr(3)].boxed()
}

/// Marking values for the fixed scope.
#[derive(Debug, Clone)]
pub struct ScopeMarking {
    pub p: [i64; N as usize],
    pub q: [i64; 1],
    pub b: [i64; 3],
}

pub fn marking() -> impl Strategy<Value = ScopeMarking> {
    (
        proptest::array::uniform4(0i64..10),
        proptest::array::uniform1(0i64..10),
        proptest::array::uniform3(0i64..10),
    )
        .prop_map(|(p, q, b)| ScopeMarking { p, q, b })
}

pub fn env_for(replica: i64, m: &ScopeMarking) -> MapEnv {
    let mut env = MapEnv::new(replica).with("P", &m.p).with("Q", &m.q).with("B", &m.b);
    let mut granted: Vec<i64> =
        vec![(replica - 1).rem_euclid(N), replica, (replica + 1).rem_euclid(N)];
    granted.sort_unstable();
    granted.dedup();
    env.repshared.insert("P".to_string(), granted);
    env
}

/// Core dependency-soundness check: perturbing any variable outside the
/// extracted read set must not change the evaluation outcome (value or
/// error).
pub fn soundness_case(
    e: &Expr,
    replica: i64,
    base: &ScopeMarking,
    noise: &ScopeMarking,
) -> Result<(), String> {
    let deps = extract_dependencies(e, replica, N);
    let covered = |place: &str, slot: usize, len: usize| {
        deps.reads.iter().any(|r| {
            r.place == place
                && match r.index {
                    AccessIndex::All => true,
                    AccessIndex::At(k) => k == slot as i64,
                    AccessIndex::SelfIndex => {
                        // MapEnv resolves unindexed reads to entry 0 for
                        // single-entry places and to the replica otherwise.
                        if len == 1 {
                            slot == 0
                        } else {
                            slot as i64 == replica
                        }
                    }
                }
        })
    };
    let mut perturbed = base.clone();
    for (slot, value) in noise.p.iter().enumerate() {
        if !covered("P", slot, N as usize) {
            perturbed.p[slot] = *value;
        }
    }
    for (slot, value) in noise.q.iter().enumerate() {
        if !covered("Q", slot, 1) {
            perturbed.q[slot] = *value;
        }
    }
    for (slot, value) in noise.b.iter().enumerate() {
        if !covered("B", slot, 3) {
            perturbed.b[slot] = *value;
        }
    }

    let env1 = env_for(replica, base);
    let env2 = env_for(replica, &perturbed);
    let r1 = evaluate(e, &EvalCtx { replica_index: replica, n: N, env: &env1 });
    let r2 = evaluate(e, &EvalCtx { replica_index: replica, n: N, env: &env2 });
    if r1 == r2 {
        Ok(())
    } else {
        Err(format!(
            "expression `{e}` at replica {replica}: {r1:?} vs {r2:?} after perturbing outside {:?}",
            deps.reads
        ))
    }
}
