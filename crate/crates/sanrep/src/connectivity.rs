//! Connectivity lists: for each canonical state variable, the activity
//! instances whose enabling, rate, or case weights must be re-evaluated when
//! it changes.
//!
//! Construction iterates, for every activity instance, over the canonical
//! variables the instance is granted, testing membership in its resolved
//! read set. One examined `(activity instance, state variable)` pair is one
//! *check*, the unit reported in `check_count` — with one exception:
//! variables private to a single replica of an anonymous `rep` are wired by
//! stamping the template's internal analysis across replicas and cost no
//! checks. Composition-managed variables (shared through `rep`, joined,
//! place-shared, rep-shared, or up-shared) are always examined per instance.
//! A fully shared `n`-entry array read through a marking-dependent index
//! therefore costs `n` checks for each of `n` replicas, the complete-graph
//! `n²`; a rep-shared ring costs `3n`.

use crate::flatten::{ActId, FlatModel, VarId};
use std::time::Instant;

#[derive(Debug, Clone)]
pub struct ConnectivityLists {
    /// Canonical variable id -> activity instances reading it (ascending).
    pub var_to_activities: Vec<Vec<ActId>>,
    /// Examined (activity instance, state variable) pairs.
    pub check_count: u64,
    pub build_time_nanos: u128,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivityReport {
    pub vars: usize,
    pub activities: usize,
    pub checks: u64,
    /// `checks / (vars * activities)`; 1.0 for a complete dependency graph.
    pub density: f64,
    pub build_ns: u128,
}

/// Build the inverse read-dependency relation, counting examined pairs.
pub fn build_connectivity(fm: &FlatModel) -> ConnectivityLists {
    let start = Instant::now();
    let mut lists: Vec<Vec<ActId>> = vec![Vec::new(); fm.var_count()];
    let mut checks = 0u64;
    for (id, act) in fm.activities.iter().enumerate() {
        for &var in &act.grants {
            if !fm.vars[var as usize].amortized {
                checks += 1;
            }
            if act.reads.binary_search(&var).is_ok() {
                lists[var as usize].push(id as ActId);
            }
        }
    }
    ConnectivityLists {
        var_to_activities: lists,
        check_count: checks,
        build_time_nanos: start.elapsed().as_nanos(),
    }
}

impl ConnectivityLists {
    /// Union of the lists of the changed variables, ascending, deduplicated.
    pub fn affected_activities(&self, changed: &[VarId]) -> Vec<ActId> {
        let mut out: Vec<ActId> = Vec::new();
        for &var in changed {
            out.extend_from_slice(&self.var_to_activities[var as usize]);
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

pub fn connectivity_report(fm: &FlatModel, cl: &ConnectivityLists) -> ConnectivityReport {
    let vars = fm.var_count();
    let activities = fm.activities.len();
    let denom = (vars * activities) as f64;
    ConnectivityReport {
        vars,
        activities,
        checks: cl.check_count,
        density: if denom == 0.0 { 0.0 } else { cl.check_count as f64 / denom },
        build_ns: cl.build_time_nanos,
    }
}
