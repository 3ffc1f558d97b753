//! Parameterized topology models in two equivalent forms, plus the scaling
//! benchmark over connectivity-list construction.
//!
//! For each topology the generator emits:
//!
//! * `narep` form — non-anonymous replicas of a scalar place `P` with a
//!   rep-shared access map restricted to the topology's neighbor relation;
//!   expressions address neighbors through `repindex()`, which flattening
//!   folds to exact per-replica dependencies.
//! * `rep-emulated` form — anonymous replicas, one shared `n`-entry array
//!   `P`, and a local index place `idx` initialized to the replica index;
//!   activities address the array through `idx`, so every index is
//!   marking-dependent and each activity conservatively depends on the whole
//!   array.
//!
//! Both forms have identical stochastic behavior (matched seeds produce
//! equal trajectories under the natural state-variable mapping), but their
//! dependency-analysis cost differs: the 1-neighbor ring costs `3n` checks
//! in narep form and `n²` rep-emulated.

use crate::compose::{narep, rep, AccessMap, ComposeError, CompositionNode, SharingMode};
use crate::connectivity::build_connectivity;
use crate::expr::{BinOp, Expr};
use crate::flatten::{flatten, FlatModel, VarId};
use crate::model::{ActivityDecl, AtomicModel, CaseDecl, PlaceDecl, Timing, UpdateStmt};
use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    /// `k` neighbors on each side.
    Ring {
        k: u32,
    },
    Star,
    Full,
}

impl Topology {
    pub fn name(&self) -> &'static str {
        match self {
            Topology::Ring { .. } => "ring",
            Topology::Star => "star",
            Topology::Full => "full",
        }
    }

    fn access_map(&self, n: u32) -> AccessMap {
        match self {
            Topology::Ring { k } => AccessMap::ring(n, *k),
            Topology::Star => AccessMap::star(n),
            Topology::Full => AccessMap::full(n),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchMode {
    Narep,
    RepEmulated,
}

impl BenchMode {
    pub fn name(&self) -> &'static str {
        match self {
            BenchMode::Narep => "narep",
            BenchMode::RepEmulated => "rep-emulated",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchSpec {
    pub topology: Topology,
    pub n_list: Vec<u32>,
    pub modes: Vec<BenchMode>,
    pub repeats: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub topology: &'static str,
    pub n: u32,
    pub mode: &'static str,
    pub vars: usize,
    pub activities: usize,
    pub checks: u64,
    pub build_ns_min: u128,
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Compose(#[from] ComposeError),
    #[error(transparent)]
    Flatten(#[from] crate::flatten::FlattenError),
}

/// `P[(base + offset) % n]`
fn neighbor_read(base: Expr, offset: i64) -> Expr {
    Expr::place_at("P", Expr::modulo(Expr::add(base, Expr::int(offset)), Expr::n()))
}

/// `1 + sum of both k-neighborhood sides`, the congestion-dependent rate.
fn ring_rate(base: impl Fn() -> Expr, k: u32) -> Expr {
    let mut acc = Expr::int(1);
    for d in 1..=k as i64 {
        acc = Expr::add(acc, neighbor_read(Expr::add(base(), Expr::n()), -d));
        acc = Expr::add(acc, neighbor_read(base(), d));
    }
    acc
}

/// `P[0] + P[1] + ... + P[n-1] > 0` with explicit entries.
fn total_tokens_positive(n: u32) -> Expr {
    let mut acc = Expr::place_at("P", Expr::int(0));
    for i in 1..n as i64 {
        acc = Expr::add(acc, Expr::place_at("P", Expr::int(i)));
    }
    Expr::gt(acc, Expr::int(0))
}

fn timed(name: &str, rate: Expr, enabling: Expr, updates: Vec<UpdateStmt>) -> ActivityDecl {
    ActivityDecl {
        name: name.to_string(),
        timing: Timing::Exponential { rate },
        enabling,
        cases: vec![CaseDecl { weight: Expr::int(1), updates }],
        span: Default::default(),
    }
}

/// Template activity bodies, parameterized over how the replica index is
/// obtained: `repindex()` in narep form, the `idx` place in rep form.
fn template(topology: Topology, n: u32, index: impl Fn() -> Expr) -> ActivityDecl {
    match topology {
        Topology::Ring { k } => timed(
            "step",
            ring_rate(&index, k),
            Expr::gt(Expr::place_at("P", index()), Expr::int(0)),
            vec![
                UpdateStmt::new(
                    "P",
                    Some(index()),
                    Expr::sub(Expr::place_at("P", index()), Expr::int(1)),
                ),
                UpdateStmt::new(
                    "P",
                    Some(Expr::modulo(Expr::add(index(), Expr::int(1)), Expr::n())),
                    Expr::add(neighbor_read(index(), 1), Expr::int(1)),
                ),
            ],
        ),
        Topology::Star => timed(
            "step",
            Expr::add(Expr::real(1.0), Expr::place_at("P", Expr::int(0))),
            Expr::if_then_else(
                Expr::binary(BinOp::Eq, index(), Expr::int(0)),
                Expr::gt(Expr::place_at("P", Expr::int(0)), Expr::int(0)),
                Expr::gt(Expr::place_at("P", index()), Expr::int(0)),
            ),
            vec![
                UpdateStmt::new(
                    "P",
                    Some(index()),
                    Expr::sub(Expr::place_at("P", index()), Expr::int(1)),
                ),
                UpdateStmt::new(
                    "P",
                    Some(Expr::int(0)),
                    Expr::add(
                        Expr::place_at("P", Expr::int(0)),
                        Expr::if_then_else(
                            Expr::binary(BinOp::Eq, index(), Expr::int(0)),
                            Expr::int(0),
                            Expr::int(1),
                        ),
                    ),
                ),
            ],
        ),
        Topology::Full => {
            // Token hops are guarded inside the updates so the enabling reads
            // exactly the n entries in both forms.
            let has_token = || Expr::gt(Expr::place_at("P", index()), Expr::int(0));
            timed(
                "step",
                Expr::real(1.0),
                total_tokens_positive(n),
                vec![
                    UpdateStmt::new(
                        "P",
                        Some(Expr::modulo(Expr::add(index(), Expr::int(1)), Expr::n())),
                        Expr::add(
                            neighbor_read(index(), 1),
                            Expr::if_then_else(has_token(), Expr::int(1), Expr::int(0)),
                        ),
                    ),
                    UpdateStmt::new(
                        "P",
                        Some(index()),
                        Expr::if_then_else(
                            has_token(),
                            Expr::sub(Expr::place_at("P", index()), Expr::int(1)),
                            Expr::place_at("P", index()),
                        ),
                    ),
                ],
            )
        }
    }
}

/// Build the composition for one (topology, n, mode) point.
pub fn generate_model(
    topology: Topology,
    n: u32,
    mode: BenchMode,
) -> Result<CompositionNode, ComposeError> {
    match mode {
        BenchMode::Narep => {
            let cell = AtomicModel::new("cell")
                .with_place(PlaceDecl::scalar("P", Expr::int(1)))
                .with_activity(template(topology, n, Expr::rep_index));
            let sharing = BTreeMap::from([(
                "P".to_string(),
                SharingMode::RepShared { access: topology.access_map(n) },
            )]);
            narep(cell.into_node(), n, sharing, vec![])
        }
        BenchMode::RepEmulated => {
            let cell = AtomicModel::new("cell")
                .with_place(PlaceDecl::scalar("idx", Expr::rep_index()))
                .with_place(PlaceDecl::array("P", n, Expr::int(1)))
                .with_activity(template(topology, n, || Expr::place("idx")));
            rep(cell.into_node(), n, BTreeSet::from(["P".to_string()]))
        }
    }
}

/// Canonical-variable correspondence between the two forms: replica `j`'s
/// `P` in narep form is entry `j` of the shared array in rep form.
pub fn emulation_var_map(
    fm_narep: &FlatModel,
    fm_rep: &FlatModel,
    label: &str,
    n: u32,
) -> Vec<(VarId, VarId)> {
    (0..n)
        .map(|j| {
            let a = fm_narep.var_by_label(&format!("{label}[{j}].P")).expect("narep P replica");
            let b = fm_rep.var_by_label(&format!("{label}[0].P[{j}]")).expect("rep P entry");
            (a, b)
        })
        .collect()
}

/// Flatten once per point, then time `build_connectivity` `repeats` times
/// and report the minimum. Runs sequentially.
pub fn run_bench(spec: &BenchSpec) -> Result<Vec<BenchRow>, BenchError> {
    let mut rows = Vec::new();
    for &n in &spec.n_list {
        for &mode in &spec.modes {
            let node = generate_model(spec.topology, n, mode)?;
            let fm = flatten(&node, spec.topology.name())?;
            let mut best: Option<(u64, u128)> = None;
            for _ in 0..spec.repeats.max(1) {
                let cl = build_connectivity(&fm);
                best = Some(match best {
                    None => (cl.check_count, cl.build_time_nanos),
                    Some((checks, ns)) => {
                        debug_assert_eq!(checks, cl.check_count);
                        (checks, ns.min(cl.build_time_nanos))
                    }
                });
            }
            let (checks, build_ns_min) = best.expect("at least one repeat");
            rows.push(BenchRow {
                topology: spec.topology.name(),
                n,
                mode: mode.name(),
                vars: fm.var_count(),
                activities: fm.activities.len(),
                checks,
                build_ns_min,
            });
        }
    }
    Ok(rows)
}

pub const CSV_HEADER: &str = "topology,n,mode,vars,activities,checks,build_ns_min";

pub fn write_csv(rows: &[BenchRow], w: &mut dyn Write) -> io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.topology, r.n, r.mode, r.vars, r.activities, r.checks, r.build_ns_min
        )?;
    }
    Ok(())
}
