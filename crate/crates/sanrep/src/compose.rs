//! Composition tree: `join`, anonymous `rep`, and non-anonymous `narep`
//! with per-place sharing modes.

use crate::model::AtomicModel;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use thiserror::Error;

/// Per-replica access relation for a rep-shared place: `access[i]` is the
/// set of place-replica indices that replica `i`'s activities may read and
/// write. Every replica always has access to its own copy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessMap {
    pub access: Vec<BTreeSet<u32>>,
}

impl AccessMap {
    pub fn new(access: Vec<BTreeSet<u32>>) -> Self {
        Self { access }
    }

    pub fn n(&self) -> u32 {
        self.access.len() as u32
    }

    /// Ring with `k` neighbors on each side: replica `i` may touch
    /// `i-k ..= i+k` modulo `n`.
    pub fn ring(n: u32, k: u32) -> Self {
        let access = (0..n)
            .map(|i| {
                let mut set = BTreeSet::new();
                for d in 0..=k as i64 {
                    set.insert((i as i64 + d).rem_euclid(n as i64) as u32);
                    set.insert((i as i64 - d).rem_euclid(n as i64) as u32);
                }
                set
            })
            .collect();
        Self { access }
    }

    /// Hub-and-spokes: replica 0 is the hub; every spoke may touch itself
    /// and the hub.
    pub fn star(n: u32) -> Self {
        let access = (0..n)
            .map(|i| {
                let mut set = BTreeSet::new();
                set.insert(0);
                set.insert(i);
                set
            })
            .collect();
        Self { access }
    }

    /// Complete relation: every replica may touch every copy.
    pub fn full(n: u32) -> Self {
        let all: BTreeSet<u32> = (0..n).collect();
        Self { access: vec![all; n as usize] }
    }

    /// Torus grid with 4-neighborhood; replicas are numbered row-major.
    pub fn grid(rows: u32, cols: u32) -> Self {
        let n = rows * cols;
        let access = (0..n)
            .map(|i| {
                let (r, c) = ((i / cols) as i64, (i % cols) as i64);
                let mut set = BTreeSet::new();
                for (dr, dc) in [(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)] {
                    let rr = (r + dr).rem_euclid(rows as i64) as u32;
                    let cc = (c + dc).rem_euclid(cols as i64) as u32;
                    set.insert(rr * cols + cc);
                }
                set
            })
            .collect();
        Self { access }
    }

    /// Replicas whose activities may touch replica `i`'s copy: ascending
    /// `{ j : i in access[j] }`. This is what `repshared(P)` evaluates to.
    pub fn granted_to(&self, i: u32) -> Vec<i64> {
        (0..self.n()).filter(|&j| self.access[j as usize].contains(&i)).map(i64::from).collect()
    }
}

/// Sharing mode of one place under `narep`.
#[derive(Debug, Clone, PartialEq)]
pub enum SharingMode {
    /// Private per replica (the default).
    Local,
    /// Each group of replica indices shares a single place copy. Groups must
    /// be disjoint and non-empty; uncovered indices stay local.
    PlaceShared { groups: Vec<BTreeSet<u32>> },
    /// Each replica keeps its own copy, but the copies listed in the access
    /// map are readable and writable across replicas.
    RepShared { access: AccessMap },
}

/// Alias a set of inner place replicas to entries of an array place in a
/// sibling submodel, resolved at the join that brings both together.
#[derive(Debug, Clone, PartialEq)]
pub struct UpShareSpec {
    pub place: String,
    /// Sibling path relative to the enclosing join, e.g. `mon` or `mon.Q`
    /// split as (`mon`, `Q`).
    pub sibling: String,
    pub outer_place: String,
    /// Inner replica index -> outer array entry. Injective.
    pub entry_map: BTreeMap<u32, u32>,
}

/// One join group: the named child places become a single state variable.
#[derive(Debug, Clone, PartialEq)]
pub struct JoinSpec {
    /// `(child path, place name)` pairs; paths may be dotted for nested joins.
    pub group: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CompositionNode {
    Atomic(Arc<AtomicModel>),
    Join {
        children: Vec<(String, CompositionNode)>,
        joins: Vec<JoinSpec>,
    },
    Rep {
        child: Box<CompositionNode>,
        n: u32,
        shared: BTreeSet<String>,
    },
    NaRep {
        child: Box<CompositionNode>,
        n: u32,
        sharing: BTreeMap<String, SharingMode>,
        up_shares: Vec<UpShareSpec>,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ComposeError {
    #[error("replication count must be >= 1")]
    ZeroReplicas,
    #[error("unknown place `{place}` in {operator} specification")]
    UnknownPlace { place: String, operator: &'static str },
    #[error(
        "OWNER_NOT_IN_ACCESS: replica {replica} missing from its own access set for `{place}`"
    )]
    OwnerNotInAccess { place: String, replica: u32 },
    #[error("invalid sharing spec for `{place}`: {reason}")]
    InvalidSharingSpec { place: String, reason: String },
    #[error("join group member `{path}.{place}` not found")]
    UnknownPath { path: String, place: String },
    #[error("kind mismatch: `{a}` and `{b}` cannot be joined")]
    KindMismatch { a: String, b: String },
    #[error("duplicate child label `{label}` in join")]
    DuplicateLabel { label: String },
}

impl CompositionNode {
    /// Place names visible for sharing at this node: bare names for atomic
    /// models, `child.place` paths below joins, unchanged through rep/narep.
    pub fn exported_place_names(&self) -> Vec<String> {
        match self {
            CompositionNode::Atomic(m) => m.places.iter().map(|p| p.name.clone()).collect(),
            CompositionNode::Join { children, .. } => children
                .iter()
                .flat_map(|(label, child)| {
                    child.exported_place_names().into_iter().map(move |p| format!("{label}.{p}"))
                })
                .collect(),
            CompositionNode::Rep { child, .. } | CompositionNode::NaRep { child, .. } => {
                child.exported_place_names()
            }
        }
    }
}

/// Anonymous replication. Places named in `shared` become one state variable
/// across all `n` replicas; everything else is private per replica.
pub fn rep(
    child: CompositionNode,
    n: u32,
    shared: BTreeSet<String>,
) -> Result<CompositionNode, ComposeError> {
    if n == 0 {
        return Err(ComposeError::ZeroReplicas);
    }
    let exported = child.exported_place_names();
    for place in &shared {
        if !exported.contains(place) {
            return Err(ComposeError::UnknownPlace { place: place.clone(), operator: "rep" });
        }
    }
    Ok(CompositionNode::Rep { child: Box::new(child), n, shared })
}

/// Non-anonymous replication with per-place sharing modes. Unlisted places
/// default to `Local`.
pub fn narep(
    child: CompositionNode,
    n: u32,
    sharing: BTreeMap<String, SharingMode>,
    up_shares: Vec<UpShareSpec>,
) -> Result<CompositionNode, ComposeError> {
    if n == 0 {
        return Err(ComposeError::ZeroReplicas);
    }
    let exported = child.exported_place_names();
    for (place, mode) in &sharing {
        if !exported.contains(place) {
            return Err(ComposeError::UnknownPlace { place: place.clone(), operator: "narep" });
        }
        match mode {
            SharingMode::Local => {}
            SharingMode::PlaceShared { groups } => {
                let mut covered: BTreeSet<u32> = BTreeSet::new();
                for group in groups {
                    if group.is_empty() {
                        return Err(ComposeError::InvalidSharingSpec {
                            place: place.clone(),
                            reason: "empty placeshared group".to_string(),
                        });
                    }
                    for &idx in group {
                        if idx >= n {
                            return Err(ComposeError::InvalidSharingSpec {
                                place: place.clone(),
                                reason: format!("replica index {idx} out of range 0..{n}"),
                            });
                        }
                        if !covered.insert(idx) {
                            return Err(ComposeError::InvalidSharingSpec {
                                place: place.clone(),
                                reason: format!("replica index {idx} appears in two groups"),
                            });
                        }
                    }
                }
            }
            SharingMode::RepShared { access } => {
                if access.n() != n {
                    return Err(ComposeError::InvalidSharingSpec {
                        place: place.clone(),
                        reason: format!("access map covers {} replicas, expected {n}", access.n()),
                    });
                }
                for (i, set) in access.access.iter().enumerate() {
                    if !set.contains(&(i as u32)) {
                        return Err(ComposeError::OwnerNotInAccess {
                            place: place.clone(),
                            replica: i as u32,
                        });
                    }
                    if let Some(&bad) = set.iter().find(|&&j| j >= n) {
                        return Err(ComposeError::InvalidSharingSpec {
                            place: place.clone(),
                            reason: format!("access target {bad} out of range 0..{n}"),
                        });
                    }
                }
            }
        }
    }
    for spec in &up_shares {
        if !exported.contains(&spec.place) {
            return Err(ComposeError::UnknownPlace {
                place: spec.place.clone(),
                operator: "upshared",
            });
        }
        let mut targets = BTreeSet::new();
        for (&inner, &outer) in &spec.entry_map {
            if inner >= n {
                return Err(ComposeError::InvalidSharingSpec {
                    place: spec.place.clone(),
                    reason: format!("upshared replica index {inner} out of range 0..{n}"),
                });
            }
            if !targets.insert(outer) {
                return Err(ComposeError::InvalidSharingSpec {
                    place: spec.place.clone(),
                    reason: format!("upshared entry map is not injective at entry {outer}"),
                });
            }
        }
    }
    Ok(CompositionNode::NaRep { child: Box::new(child), n, sharing, up_shares })
}

/// State-sharing join of labeled children.
pub fn join(
    children: Vec<(String, CompositionNode)>,
    joins: Vec<JoinSpec>,
) -> Result<CompositionNode, ComposeError> {
    let mut labels = BTreeSet::new();
    for (label, _) in &children {
        if !labels.insert(label.clone()) {
            return Err(ComposeError::DuplicateLabel { label: label.clone() });
        }
    }
    let node = CompositionNode::Join { children, joins };
    let exported = node.exported_place_names();
    if let CompositionNode::Join { joins, .. } = &node {
        for spec in joins {
            for (path, place) in &spec.group {
                if !exported.contains(&format!("{path}.{place}")) {
                    return Err(ComposeError::UnknownPath {
                        path: path.clone(),
                        place: place.clone(),
                    });
                }
            }
        }
    }
    Ok(node)
}
