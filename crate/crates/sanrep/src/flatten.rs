//! Flattening: instantiate a composition tree into canonical state variables
//! and activity instances.
//!
//! Every leaf place contributes one raw slot per replica and array entry.
//! Sharing (join groups, rep-shared places of anonymous replication,
//! place-sharing and up-sharing of non-anonymous replication) merges slots
//! through a union-find; the canonical representative of a class is its
//! smallest slot id, so variable numbering is deterministic and independent
//! of the order sharing specifications are written in.
//!
//! Flattening also resolves, per activity instance, the exact canonical
//! variables its enabling, rate and case-weight expressions can read (via
//! [`crate::expr::extract_dependencies`] with `repindex()` bound), the
//! variables it may write, and the variables it is granted access to.
//! Static references outside the grant set fail here; marking-dependent
//! references are clipped to the grant set and re-checked at runtime.

use crate::compose::{CompositionNode, SharingMode, UpShareSpec};
use crate::expr::{
    extract_dependencies, extract_update_dependencies, AccessIndex, DependencySet, EvalCtx,
    EvalError, Expr, ExprKind, PlaceEnv,
};
use crate::model::{AtomicModel, PlaceKind, Timing};
use crate::unionfind::UnionFind;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::Arc;
use thiserror::Error;

pub type SlotId = u32;
pub type VarId = u32;
pub type ActId = u32;

/// Dense marking vector indexed by canonical variable id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Marking(pub Vec<i64>);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlattenError {
    #[error("activity `{activity}`: access to {access} is not granted")]
    AccessViolation { activity: String, access: String },
    #[error("kind mismatch: `{a}` and `{b}` cannot be aliased")]
    KindMismatch { a: String, b: String },
    #[error("inconsistent initialization of `{var}`: {v1} vs {v2}")]
    InconsistentInitialization { var: String, v1: i64, v2: i64 },
    #[error("negative initial marking {value} for `{var}`")]
    NegativeInitial { var: String, value: i64 },
    #[error("activity `{activity}`: index {index} out of range for `{place}` (0..{len})")]
    IndexOutOfRange { activity: String, place: String, index: i64, len: u32 },
    #[error("invalid sharing spec for `{place}`: {reason}")]
    InvalidSharingSpec { place: String, reason: String },
    #[error("unknown path `{path}`")]
    UnknownPath { path: String },
    #[error("up-share of `{place}` onto `{sibling}` was never resolved by an enclosing join")]
    UnresolvedUpShare { place: String, sibling: String },
    #[error("{context}: repindex() is only available inside narep (or in initial expressions under rep)")]
    RepIndexOutsideNaRep { context: String },
    #[error("{context}: n is only available inside rep or narep")]
    NOutsideReplication { context: String },
    #[error("`{place}` is not rep-shared")]
    NotRepShared { place: String },
    #[error("{context}: {source}")]
    Eval { context: String, source: EvalError },
}

#[derive(Debug, Clone)]
pub struct CanonicalVar {
    /// Label of the canonical representative slot, e.g. `cells[2].P`.
    pub label: String,
    /// Number of raw slots aliased into this variable.
    pub class_size: u32,
    /// True when the variable is private to one replica of an anonymous
    /// `rep`: its wiring is stamped from the template and costs no
    /// dependency checks during connectivity construction.
    pub amortized: bool,
}

#[derive(Debug, Clone)]
pub struct ActivityInstance {
    pub label: String,
    pub leaf: u32,
    pub model: Arc<AtomicModel>,
    pub decl_idx: usize,
    pub replica_index: i64,
    pub n: i64,
    /// Canonical variables this instance may read or write, ascending.
    pub grants: Vec<VarId>,
    /// Canonical variables whose change can affect enabling, rate, or case
    /// weights, ascending. Always a subset of `grants`.
    pub reads: Vec<VarId>,
    /// Canonical variables the case updates may write, ascending (subset of
    /// `grants`; conservative when targets are marking-dependent).
    pub writes: Vec<VarId>,
    /// True when some index expression depends on the marking.
    pub dynamic: bool,
}

/// Where a leaf-local place name resolves to.
#[derive(Debug, Clone)]
pub(crate) enum BoundPlace {
    /// Scalar place under replication: one slot per replica of the innermost
    /// enclosing rep/narep; `own` is this leaf's replica.
    ReplicaIndexed { slots: Arc<Vec<SlotId>>, own: u32 },
    /// Array place: this replica's entries.
    Entries { slots: Vec<SlotId> },
    /// Scalar place outside any replication.
    Single { slot: SlotId },
}

#[derive(Debug, Clone)]
pub(crate) struct LeafInstance {
    pub model: Arc<AtomicModel>,
    pub replica_index: i64,
    pub n: i64,
    pub in_narep: bool,
    pub in_rep: bool,
    pub(crate) bindings: BTreeMap<String, BoundPlace>,
    /// Place name -> ascending replica indices granted access to this
    /// replica's copy (rep-shared places only).
    pub(crate) repshared: BTreeMap<String, Vec<i64>>,
}

#[derive(Debug, Clone)]
struct Slot {
    label: String,
    leaf: u32,
    place_idx: usize,
    entry: u32,
    amortized: bool,
}

#[derive(Debug)]
pub struct FlatModel {
    pub vars: Vec<CanonicalVar>,
    pub activities: Vec<ActivityInstance>,
    pub(crate) leaves: Vec<LeafInstance>,
    slots: Vec<Slot>,
    slot_to_var: Vec<VarId>,
    /// (narep place path, replica) -> granted replica list.
    repshared_lists: BTreeMap<(String, u32), Vec<i64>>,
}

// ------------------------------------------------------------------
// Tree walk
// ------------------------------------------------------------------

#[derive(Debug, Clone)]
enum ExportSlots {
    Flat(Vec<SlotId>),
    Replicated(Vec<ExportSlots>),
}

#[derive(Debug, Clone)]
struct Export {
    is_array: bool,
    slots: ExportSlots,
}

struct PendingUpShare {
    place: String,
    inner_slots: Vec<SlotId>,
    entries: Vec<u32>,
    sibling: String,
    outer_place: String,
}

struct Scope {
    exports: BTreeMap<String, Export>,
    leaves: Vec<u32>,
    pending: Vec<PendingUpShare>,
}

struct LeafBuild {
    leaf: LeafInstance,
    has_ctx: bool,
    extra_grant_slots: Vec<SlotId>,
}

struct Builder {
    slots: Vec<Slot>,
    leaves: Vec<LeafBuild>,
    activities: Vec<(u32, usize, String)>,
    merges: Vec<(SlotId, SlotId)>,
    repshared_lists: BTreeMap<(String, u32), Vec<i64>>,
}

impl Builder {
    fn merge_shapes(
        &mut self,
        a: &ExportSlots,
        b: &ExportSlots,
        what: &str,
    ) -> Result<(), FlattenError> {
        match (a, b) {
            (ExportSlots::Flat(x), ExportSlots::Flat(y)) if x.len() == y.len() => {
                for (&sa, &sb) in x.iter().zip(y) {
                    self.merges.push((sa, sb));
                }
                Ok(())
            }
            (ExportSlots::Replicated(x), ExportSlots::Replicated(y)) if x.len() == y.len() => {
                for (ea, eb) in x.iter().zip(y) {
                    self.merge_shapes(ea, eb, what)?;
                }
                Ok(())
            }
            _ => Err(FlattenError::KindMismatch {
                a: what.to_string(),
                b: "incompatible shape".to_string(),
            }),
        }
    }

    fn walk(&mut self, node: &CompositionNode, path: &str) -> Result<Scope, FlattenError> {
        match node {
            CompositionNode::Atomic(model) => self.walk_atomic(model, path),
            CompositionNode::Join { children, joins } => self.walk_join(children, joins, path),
            CompositionNode::Rep { child, n, shared } => self.walk_rep(child, *n, shared, path),
            CompositionNode::NaRep { child, n, sharing, up_shares } => {
                self.walk_narep(child, *n, sharing, up_shares, path)
            }
        }
    }

    fn walk_atomic(&mut self, model: &Arc<AtomicModel>, path: &str) -> Result<Scope, FlattenError> {
        let leaf_id = self.leaves.len() as u32;
        let mut bindings = BTreeMap::new();
        let mut exports = BTreeMap::new();
        for (place_idx, place) in model.places.iter().enumerate() {
            let mut slots = Vec::new();
            for entry in 0..place.kind.entries() {
                let label = match place.kind {
                    PlaceKind::Scalar => format!("{path}.{}", place.name),
                    PlaceKind::Array(_) => format!("{path}.{}[{entry}]", place.name),
                };
                let id = self.slots.len() as SlotId;
                self.slots.push(Slot { label, leaf: leaf_id, place_idx, entry, amortized: false });
                slots.push(id);
            }
            let binding = match place.kind {
                PlaceKind::Scalar => BoundPlace::Single { slot: slots[0] },
                PlaceKind::Array(_) => BoundPlace::Entries { slots: slots.clone() },
            };
            bindings.insert(place.name.clone(), binding);
            exports.insert(
                place.name.clone(),
                Export { is_array: place.kind.is_array(), slots: ExportSlots::Flat(slots) },
            );
        }
        for (decl_idx, activity) in model.activities.iter().enumerate() {
            self.activities.push((leaf_id, decl_idx, format!("{path}.{}", activity.name)));
        }
        self.leaves.push(LeafBuild {
            leaf: LeafInstance {
                model: model.clone(),
                replica_index: 0,
                n: 1,
                in_narep: false,
                in_rep: false,
                bindings,
                repshared: BTreeMap::new(),
            },
            has_ctx: false,
            extra_grant_slots: Vec::new(),
        });
        Ok(Scope { exports, leaves: vec![leaf_id], pending: Vec::new() })
    }

    fn walk_join(
        &mut self,
        children: &[(String, CompositionNode)],
        joins: &[crate::compose::JoinSpec],
        path: &str,
    ) -> Result<Scope, FlattenError> {
        let mut exports = BTreeMap::new();
        let mut leaves = Vec::new();
        let mut pending = Vec::new();
        for (label, child) in children {
            let child_path =
                if path.is_empty() { label.clone() } else { format!("{path}.{label}") };
            let scope = self.walk(child, &child_path)?;
            for (name, export) in scope.exports {
                exports.insert(format!("{label}.{name}"), export);
            }
            leaves.extend(scope.leaves);
            pending.extend(scope.pending);
        }

        // Resolve up-shares whose sibling lives under this join.
        let mut unresolved = Vec::new();
        for p in pending {
            let key = format!("{}.{}", p.sibling, p.outer_place);
            match exports.get(&key) {
                Some(outer) => {
                    if !outer.is_array {
                        return Err(FlattenError::KindMismatch {
                            a: p.place.clone(),
                            b: format!("{key} is not an array place"),
                        });
                    }
                    let ExportSlots::Flat(outer_slots) = &outer.slots else {
                        return Err(FlattenError::KindMismatch {
                            a: p.place.clone(),
                            b: format!("{key} is replicated"),
                        });
                    };
                    for (&inner_slot, &entry) in p.inner_slots.iter().zip(&p.entries) {
                        let Some(&outer_slot) = outer_slots.get(entry as usize) else {
                            return Err(FlattenError::InvalidSharingSpec {
                                place: p.place.clone(),
                                reason: format!(
                                    "upshared entry {entry} out of range for `{key}` (0..{})",
                                    outer_slots.len()
                                ),
                            });
                        };
                        self.merges.push((inner_slot, outer_slot));
                    }
                }
                None => unresolved.push(p),
            }
        }

        for spec in joins {
            let mut first: Option<(String, ExportSlots, bool)> = None;
            for (child_path, place) in &spec.group {
                let key = format!("{child_path}.{place}");
                let export = exports
                    .get(&key)
                    .ok_or_else(|| FlattenError::UnknownPath { path: key.clone() })?;
                match &first {
                    None => first = Some((key, export.slots.clone(), export.is_array)),
                    Some((first_key, first_slots, first_array)) => {
                        if *first_array != export.is_array {
                            return Err(FlattenError::KindMismatch {
                                a: first_key.clone(),
                                b: key.clone(),
                            });
                        }
                        let export_slots = export.slots.clone();
                        self.merge_shapes(first_slots, &export_slots, &key).map_err(|_| {
                            FlattenError::KindMismatch { a: first_key.clone(), b: key.clone() }
                        })?;
                    }
                }
            }
        }

        Ok(Scope { exports, leaves, pending: unresolved })
    }

    /// Instantiate `n` copies of `child`, returning per-copy scopes plus the
    /// leaf offsets that received their replication context from this
    /// operator (innermost wins; deeper operators have already claimed
    /// their leaves).
    fn instantiate_copies(
        &mut self,
        child: &CompositionNode,
        n: u32,
        path: &str,
        in_narep: bool,
    ) -> Result<(Vec<Scope>, Vec<usize>), FlattenError> {
        let mut scopes = Vec::new();
        let mut fresh_offsets = Vec::new();
        for i in 0..n {
            let copy_path = format!("{path}[{i}]");
            let scope = self.walk(child, &copy_path)?;
            if !scope.pending.is_empty() {
                let p = &scope.pending[0];
                return Err(FlattenError::UnresolvedUpShare {
                    place: p.place.clone(),
                    sibling: p.sibling.clone(),
                });
            }
            if i == 0 {
                for (offset, &leaf_id) in scope.leaves.iter().enumerate() {
                    if !self.leaves[leaf_id as usize].has_ctx {
                        fresh_offsets.push(offset);
                    }
                }
            }
            for (offset, &leaf_id) in scope.leaves.iter().enumerate() {
                if fresh_offsets.contains(&offset) {
                    let build = &mut self.leaves[leaf_id as usize];
                    build.has_ctx = true;
                    build.leaf.replica_index = i as i64;
                    build.leaf.n = n as i64;
                    build.leaf.in_narep = in_narep;
                    build.leaf.in_rep = !in_narep;
                }
            }
            scopes.push(scope);
        }

        // Scalar places of freshly claimed leaves become replica-indexed:
        // `P[j]` in an expression resolves to copy j's slot.
        for &offset in &fresh_offsets {
            let leaf0 = scopes[0].leaves[offset] as usize;
            let place_names: Vec<String> = self.leaves[leaf0]
                .leaf
                .bindings
                .iter()
                .filter(|(_, b)| matches!(b, BoundPlace::Single { .. }))
                .map(|(name, _)| name.clone())
                .collect();
            for name in place_names {
                let slots: Vec<SlotId> = scopes
                    .iter()
                    .map(|s| {
                        let leaf = s.leaves[offset] as usize;
                        match self.leaves[leaf].leaf.bindings[&name] {
                            BoundPlace::Single { slot } => slot,
                            _ => unreachable!("fresh leaves share the child layout"),
                        }
                    })
                    .collect();
                let shared = Arc::new(slots);
                for (i, s) in scopes.iter().enumerate() {
                    let leaf = s.leaves[offset] as usize;
                    self.leaves[leaf].leaf.bindings.insert(
                        name.clone(),
                        BoundPlace::ReplicaIndexed { slots: shared.clone(), own: i as u32 },
                    );
                }
            }
        }
        Ok((scopes, fresh_offsets))
    }

    fn export_slot_set(slots: &ExportSlots, out: &mut Vec<SlotId>) {
        match slots {
            ExportSlots::Flat(s) => out.extend_from_slice(s),
            ExportSlots::Replicated(shapes) => {
                for s in shapes {
                    Self::export_slot_set(s, out);
                }
            }
        }
    }

    fn walk_rep(
        &mut self,
        child: &CompositionNode,
        n: u32,
        shared: &BTreeSet<String>,
        path: &str,
    ) -> Result<Scope, FlattenError> {
        let (scopes, fresh_offsets) = self.instantiate_copies(child, n, path, false)?;

        let mut shared_slots: BTreeSet<SlotId> = BTreeSet::new();
        for name in shared {
            let first = scopes[0].exports[name].slots.clone();
            let mut acc = Vec::new();
            Self::export_slot_set(&first, &mut acc);
            for scope in &scopes[1..] {
                let other = scope.exports[name].slots.clone();
                Self::export_slot_set(&other, &mut acc);
                self.merge_shapes(&first, &other, name)?;
            }
            shared_slots.extend(acc);
        }

        // Anonymous replication: unshared variables of leaves replicated by
        // this operator are template-stamped, not individually checked.
        let claimed: BTreeSet<u32> =
            scopes.iter().flat_map(|s| fresh_offsets.iter().map(|&o| s.leaves[o])).collect();
        for slot_id in 0..self.slots.len() {
            if claimed.contains(&self.slots[slot_id].leaf)
                && !shared_slots.contains(&(slot_id as SlotId))
            {
                self.slots[slot_id].amortized = true;
            }
        }

        let mut exports = BTreeMap::new();
        let names: Vec<String> = scopes[0].exports.keys().cloned().collect();
        for name in names {
            let is_array = scopes[0].exports[&name].is_array;
            let slots = if shared.contains(&name) {
                scopes[0].exports[&name].slots.clone()
            } else {
                ExportSlots::Replicated(
                    scopes.iter().map(|s| s.exports[&name].slots.clone()).collect(),
                )
            };
            exports.insert(name.clone(), Export { is_array, slots });
        }
        let leaves = scopes.iter().flat_map(|s| s.leaves.iter().copied()).collect();
        Ok(Scope { exports, leaves, pending: Vec::new() })
    }

    fn walk_narep(
        &mut self,
        child: &CompositionNode,
        n: u32,
        sharing: &BTreeMap<String, SharingMode>,
        up_shares: &[UpShareSpec],
        path: &str,
    ) -> Result<Scope, FlattenError> {
        let (scopes, _fresh) = self.instantiate_copies(child, n, path, true)?;

        let scalar_copy_slots =
            |scopes: &[Scope], name: &str| -> Result<Vec<SlotId>, FlattenError> {
                scopes
                    .iter()
                    .map(|s| match &s.exports[name].slots {
                        ExportSlots::Flat(v) if v.len() == 1 => Ok(v[0]),
                        _ => Err(FlattenError::InvalidSharingSpec {
                            place: name.to_string(),
                            reason: "rep-shared and up-shared places must be scalar".to_string(),
                        }),
                    })
                    .collect()
            };

        let mut collapsed: BTreeSet<String> = BTreeSet::new();
        for (name, mode) in sharing {
            match mode {
                SharingMode::Local => {}
                SharingMode::PlaceShared { groups } => {
                    for group in groups {
                        let mut iter = group.iter();
                        let first = *iter.next().expect("groups are non-empty");
                        let first_shape = scopes[first as usize].exports[name].slots.clone();
                        for &other in iter {
                            let other_shape = scopes[other as usize].exports[name].slots.clone();
                            self.merge_shapes(&first_shape, &other_shape, name)?;
                        }
                    }
                    if groups.len() == 1 && groups[0].len() == n as usize {
                        collapsed.insert(name.clone());
                    }
                }
                SharingMode::RepShared { access } => {
                    let copy_slots = scalar_copy_slots(&scopes, name)?;
                    for i in 0..n {
                        let granted: Vec<SlotId> = access.access[i as usize]
                            .iter()
                            .map(|&j| copy_slots[j as usize])
                            .collect();
                        for &leaf in &scopes[i as usize].leaves {
                            self.leaves[leaf as usize].extra_grant_slots.extend(&granted);
                        }
                        let list = access.granted_to(i);
                        self.repshared_lists.insert((format!("{path}.{name}"), i), list.clone());
                        // Attach the list to the leaf that owns the place so
                        // `repshared(P)` can be evaluated there.
                        let owner_leaf = self.slots[copy_slots[i as usize] as usize].leaf;
                        let local_name = {
                            let leaf = &self.leaves[owner_leaf as usize].leaf;
                            let place_idx = self.slots[copy_slots[i as usize] as usize].place_idx;
                            leaf.model.places[place_idx].name.clone()
                        };
                        self.leaves[owner_leaf as usize].leaf.repshared.insert(local_name, list);
                    }
                }
            }
        }

        let mut pending = Vec::new();
        for spec in up_shares {
            let copy_slots = scalar_copy_slots(&scopes, &spec.place)?;
            let entries: Vec<u32> = spec.entry_map.values().copied().collect();
            let inner_slots: Vec<SlotId> =
                spec.entry_map.keys().map(|&replica| copy_slots[replica as usize]).collect();
            pending.push(PendingUpShare {
                place: format!("{path}.{}", spec.place),
                inner_slots,
                entries,
                sibling: spec.sibling.clone(),
                outer_place: spec.outer_place.clone(),
            });
        }

        let mut exports = BTreeMap::new();
        let names: Vec<String> = scopes[0].exports.keys().cloned().collect();
        for name in names {
            let is_array = scopes[0].exports[&name].is_array;
            let slots = if collapsed.contains(&name) {
                scopes[0].exports[&name].slots.clone()
            } else {
                ExportSlots::Replicated(
                    scopes.iter().map(|s| s.exports[&name].slots.clone()).collect(),
                )
            };
            exports.insert(name.clone(), Export { is_array, slots });
        }
        let leaves = scopes.iter().flat_map(|s| s.leaves.iter().copied()).collect();
        Ok(Scope { exports, leaves, pending })
    }
}

// ------------------------------------------------------------------
// Expression scope checks and dependency resolution
// ------------------------------------------------------------------

fn mentions_repindex(e: &Expr) -> bool {
    match &e.kind {
        ExprKind::RepIndex => true,
        ExprKind::Int(_)
        | ExprKind::Real(_)
        | ExprKind::Bool(_)
        | ExprKind::N
        | ExprKind::RepShared(_) => false,
        ExprKind::Place(p) => p.index.as_deref().is_some_and(mentions_repindex),
        ExprKind::Count(inner) | ExprKind::Unary(_, inner) => mentions_repindex(inner),
        ExprKind::Contains(a, b) | ExprKind::Binary(_, a, b) => {
            mentions_repindex(a) || mentions_repindex(b)
        }
        ExprKind::If(a, b, c) => {
            mentions_repindex(a) || mentions_repindex(b) || mentions_repindex(c)
        }
    }
}

fn mentions_n(e: &Expr) -> bool {
    match &e.kind {
        ExprKind::N => true,
        ExprKind::Int(_)
        | ExprKind::Real(_)
        | ExprKind::Bool(_)
        | ExprKind::RepIndex
        | ExprKind::RepShared(_) => false,
        ExprKind::Place(p) => p.index.as_deref().is_some_and(mentions_n),
        ExprKind::Count(inner) | ExprKind::Unary(_, inner) => mentions_n(inner),
        ExprKind::Contains(a, b) | ExprKind::Binary(_, a, b) => mentions_n(a) || mentions_n(b),
        ExprKind::If(a, b, c) => mentions_n(a) || mentions_n(b) || mentions_n(c),
    }
}

fn check_scope(
    e: &Expr,
    leaf: &LeafInstance,
    context: &str,
    is_initial: bool,
) -> Result<(), FlattenError> {
    if mentions_repindex(e) {
        let allowed = leaf.in_narep || (leaf.in_rep && is_initial);
        if !allowed {
            return Err(FlattenError::RepIndexOutsideNaRep { context: context.to_string() });
        }
    }
    if mentions_n(e) && !(leaf.in_narep || leaf.in_rep) {
        return Err(FlattenError::NOutsideReplication { context: context.to_string() });
    }
    Ok(())
}

struct NoPlaces;

impl PlaceEnv for NoPlaces {
    fn read(&self, place: &str, _index: Option<i64>) -> Result<i64, EvalError> {
        Err(EvalError::UnknownPlace { place: place.to_string() })
    }

    fn repshared(&self, place: &str) -> Result<Vec<i64>, EvalError> {
        Err(EvalError::NotRepShared { place: place.to_string() })
    }
}

impl FlatModel {
    /// Resolve a leaf-local place reference to slot ids. `index` follows the
    /// conventions of [`BoundPlace`].
    fn resolve_slots(
        &self,
        leaf: u32,
        place: &str,
        index: AccessIndex,
    ) -> Result<Vec<SlotId>, EvalError> {
        let binding = self.leaves[leaf as usize]
            .bindings
            .get(place)
            .ok_or_else(|| EvalError::UnknownPlace { place: place.to_string() })?;
        let check = |k: i64, len: usize| -> Result<usize, EvalError> {
            if k < 0 || k as usize >= len {
                Err(EvalError::IndexOutOfRange {
                    place: place.to_string(),
                    index: k,
                    len: len as u32,
                })
            } else {
                Ok(k as usize)
            }
        };
        match (binding, index) {
            (BoundPlace::ReplicaIndexed { slots, own }, AccessIndex::SelfIndex) => {
                Ok(vec![slots[*own as usize]])
            }
            (BoundPlace::ReplicaIndexed { slots, .. }, AccessIndex::At(k)) => {
                Ok(vec![slots[check(k, slots.len())?]])
            }
            (BoundPlace::ReplicaIndexed { slots, .. }, AccessIndex::All) => Ok(slots.to_vec()),
            (BoundPlace::Entries { .. }, AccessIndex::SelfIndex) => {
                Err(EvalError::MissingIndex { place: place.to_string() })
            }
            (BoundPlace::Entries { slots }, AccessIndex::At(k)) => {
                Ok(vec![slots[check(k, slots.len())?]])
            }
            (BoundPlace::Entries { slots }, AccessIndex::All) => Ok(slots.clone()),
            (BoundPlace::Single { slot }, AccessIndex::SelfIndex | AccessIndex::All) => {
                Ok(vec![*slot])
            }
            (BoundPlace::Single { .. }, AccessIndex::At(_)) => {
                Err(EvalError::IndexOnScalar { place: place.to_string() })
            }
        }
    }

    /// Resolve a read at simulation time: evaluated index to canonical id.
    pub(crate) fn resolve_runtime(
        &self,
        leaf: u32,
        place: &str,
        index: Option<i64>,
    ) -> Result<VarId, EvalError> {
        let access = match index {
            None => AccessIndex::SelfIndex,
            Some(k) => AccessIndex::At(k),
        };
        let slots = self.resolve_slots(leaf, place, access)?;
        Ok(self.slot_to_var[slots[0] as usize])
    }

    pub fn var_count(&self) -> usize {
        self.vars.len()
    }

    /// Canonical variable behind any raw-slot label (e.g. `cells[2].P`).
    pub fn var_by_label(&self, label: &str) -> Option<VarId> {
        self.slots.iter().position(|s| s.label == label).map(|idx| self.slot_to_var[idx])
    }

    pub fn activity_by_label(&self, label: &str) -> Option<ActId> {
        self.activities.iter().position(|a| a.label == label).map(|i| i as ActId)
    }

    /// Exact read/write canonical-variable sets of an activity instance.
    pub fn resolve_access(&self, activity: ActId) -> (&[VarId], &[VarId]) {
        let a = &self.activities[activity as usize];
        (&a.reads, &a.writes)
    }

    /// Ascending replica indices whose activities may touch `place`'s copy
    /// owned by `replica`. `place` is the narep-level path, e.g. `ring.P`.
    pub fn repshared_list(&self, place: &str, replica: u32) -> Result<&[i64], FlattenError> {
        self.repshared_lists
            .get(&(place.to_string(), replica))
            .map(|v| v.as_slice())
            .ok_or_else(|| FlattenError::NotRepShared { place: place.to_string() })
    }

    /// Evaluate every slot's initial expression and check that aliased slots
    /// agree.
    pub fn initial_marking(&self) -> Result<Marking, FlattenError> {
        let mut values: Vec<Option<i64>> = vec![None; self.vars.len()];
        for (slot_id, slot) in self.slots.iter().enumerate() {
            let leaf = &self.leaves[slot.leaf as usize];
            let place = &leaf.model.places[slot.place_idx];
            let expr = place.initial.entry(slot.entry);
            let context = format!("initial marking of {}", slot.label);
            check_scope(expr, leaf, &context, true)?;
            let ctx = EvalCtx { replica_index: leaf.replica_index, n: leaf.n, env: &NoPlaces };
            let value = crate::expr::evaluate(expr, &ctx)
                .and_then(|v| v.as_int())
                .map_err(|source| FlattenError::Eval { context: context.clone(), source })?;
            if value < 0 {
                return Err(FlattenError::NegativeInitial { var: slot.label.clone(), value });
            }
            let var = self.slot_to_var[slot_id] as usize;
            match values[var] {
                None => values[var] = Some(value),
                Some(prev) if prev == value => {}
                Some(prev) => {
                    return Err(FlattenError::InconsistentInitialization {
                        var: self.vars[var].label.clone(),
                        v1: prev,
                        v2: value,
                    });
                }
            }
        }
        Ok(Marking(values.into_iter().map(|v| v.expect("every var has a slot")).collect()))
    }

    /// Line-oriented description of the canonical-variable and
    /// activity-instance tables, used for golden tests.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "vars {}", self.vars.len());
        for (id, var) in self.vars.iter().enumerate() {
            let _ = writeln!(
                out,
                "var {id} {} class={} amortized={}",
                var.label, var.class_size, var.amortized
            );
        }
        let _ = writeln!(out, "activities {}", self.activities.len());
        let fmt_ids =
            |ids: &[VarId]| ids.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
        for (id, act) in self.activities.iter().enumerate() {
            let _ = writeln!(
                out,
                "act {id} {} replica={} n={} reads={} writes={} grants={} dynamic={}",
                act.label,
                act.replica_index,
                act.n,
                fmt_ids(&act.reads),
                fmt_ids(&act.writes),
                fmt_ids(&act.grants),
                act.dynamic
            );
        }
        out
    }
}

fn resolve_dependency_set(
    fm: &FlatModel,
    leaf: u32,
    activity_label: &str,
    grants: &BTreeSet<VarId>,
    deps: &DependencySet,
) -> Result<(Vec<VarId>, Vec<VarId>), FlattenError> {
    let resolve_group =
        |accesses: &BTreeSet<crate::expr::PlaceAccess>| -> Result<Vec<VarId>, FlattenError> {
            let mut out = BTreeSet::new();
            for access in accesses {
                let slots =
                    fm.resolve_slots(leaf, &access.place, access.index).map_err(|e| match e {
                        EvalError::IndexOutOfRange { place, index, len } => {
                            FlattenError::IndexOutOfRange {
                                activity: activity_label.to_string(),
                                place,
                                index,
                                len,
                            }
                        }
                        other => FlattenError::Eval {
                            context: format!("activity `{activity_label}`"),
                            source: other,
                        },
                    })?;
                match access.index {
                    AccessIndex::All => {
                        // Marking-dependent reference: keep the granted part,
                        // the evaluator enforces the rest at runtime.
                        out.extend(
                            slots
                                .iter()
                                .map(|&s| fm.slot_to_var[s as usize])
                                .filter(|v| grants.contains(v)),
                        );
                    }
                    _ => {
                        let var = fm.slot_to_var[slots[0] as usize];
                        if !grants.contains(&var) {
                            return Err(FlattenError::AccessViolation {
                                activity: activity_label.to_string(),
                                access: access.to_string(),
                            });
                        }
                        out.insert(var);
                    }
                }
            }
            Ok(out.into_iter().collect())
        };
    let reads = resolve_group(&deps.reads)?;
    let writes = resolve_group(&deps.writes)?;
    Ok((reads, writes))
}

/// Flatten a composition tree. `root_label` becomes the leading path segment
/// of every state-variable label (pass `""` for a root join whose children
/// are already labeled).
pub fn flatten(root: &CompositionNode, root_label: &str) -> Result<FlatModel, FlattenError> {
    let mut builder = Builder {
        slots: Vec::new(),
        leaves: Vec::new(),
        activities: Vec::new(),
        merges: Vec::new(),
        repshared_lists: BTreeMap::new(),
    };
    let scope = builder.walk(root, root_label)?;
    if let Some(p) = scope.pending.first() {
        return Err(FlattenError::UnresolvedUpShare {
            place: p.place.clone(),
            sibling: p.sibling.clone(),
        });
    }

    let mut uf = UnionFind::new(builder.slots.len());
    for (a, b) in &builder.merges {
        uf.union(*a, *b);
    }
    let canon = uf.canonical_map();

    // Canonical variables in ascending representative-slot order.
    let mut var_of_rep: BTreeMap<SlotId, VarId> = BTreeMap::new();
    let mut vars: Vec<CanonicalVar> = Vec::new();
    let mut slot_to_var = vec![0; builder.slots.len()];
    for (slot_id, &rep) in canon.iter().enumerate() {
        let var = *var_of_rep.entry(rep).or_insert_with(|| {
            let id = vars.len() as VarId;
            vars.push(CanonicalVar {
                label: builder.slots[rep as usize].label.clone(),
                class_size: 0,
                amortized: true,
            });
            id
        });
        slot_to_var[slot_id] = var;
        vars[var as usize].class_size += 1;
        vars[var as usize].amortized &= builder.slots[slot_id].amortized;
    }

    let leaves: Vec<LeafInstance> = builder.leaves.iter().map(|l| l.leaf.clone()).collect();
    let mut fm = FlatModel {
        vars,
        activities: Vec::new(),
        leaves,
        slots: builder.slots,
        slot_to_var,
        repshared_lists: builder.repshared_lists,
    };

    // Grants per leaf: own slots plus rep-shared extras.
    let mut leaf_grants: Vec<BTreeSet<VarId>> = vec![BTreeSet::new(); builder.leaves.len()];
    for (slot_id, slot) in fm.slots.iter().enumerate() {
        leaf_grants[slot.leaf as usize].insert(fm.slot_to_var[slot_id]);
    }
    for (leaf_id, build) in builder.leaves.iter().enumerate() {
        for &slot in &build.extra_grant_slots {
            leaf_grants[leaf_id].insert(fm.slot_to_var[slot as usize]);
        }
    }

    for (leaf_id, decl_idx, label) in &builder.activities {
        let leaf = &fm.leaves[*leaf_id as usize];
        let decl = &leaf.model.activities[*decl_idx];
        let (replica, n) = (leaf.replica_index, leaf.n);

        // Scope legality of repindex()/n in every expression of the activity.
        let context = format!("activity `{label}`");
        check_scope(&decl.enabling, leaf, &context, false)?;
        match &decl.timing {
            Timing::Exponential { rate } | Timing::Deterministic { delay: rate } => {
                check_scope(rate, leaf, &context, false)?;
            }
            Timing::Instantaneous { weight, .. } => check_scope(weight, leaf, &context, false)?,
        }
        for case in &decl.cases {
            check_scope(&case.weight, leaf, &context, false)?;
            for update in &case.updates {
                if let Some(idx) = &update.target.index {
                    check_scope(idx, leaf, &context, false)?;
                }
                check_scope(&update.value, leaf, &context, false)?;
            }
        }

        // Dependencies that drive re-examination: enabling, rate/weight,
        // case weights. Update expressions are evaluated at firing time and
        // tracked separately for access enforcement.
        let mut exam_deps = extract_dependencies(&decl.enabling, replica, n);
        match &decl.timing {
            Timing::Exponential { rate } | Timing::Deterministic { delay: rate } => {
                exam_deps.merge(extract_dependencies(rate, replica, n));
            }
            Timing::Instantaneous { weight, .. } => {
                exam_deps.merge(extract_dependencies(weight, replica, n));
            }
        }
        for case in &decl.cases {
            exam_deps.merge(extract_dependencies(&case.weight, replica, n));
        }

        let mut firing_deps = DependencySet::default();
        for case in &decl.cases {
            for update in &case.updates {
                firing_deps.merge(extract_update_dependencies(
                    &update.target,
                    &update.value,
                    replica,
                    n,
                ));
            }
        }

        let grants = &leaf_grants[*leaf_id as usize];
        let (reads, _) = resolve_dependency_set(&fm, *leaf_id, label, grants, &exam_deps)?;
        let (_, writes) = resolve_dependency_set(&fm, *leaf_id, label, grants, &firing_deps)?;

        fm.activities.push(ActivityInstance {
            label: label.clone(),
            leaf: *leaf_id,
            model: leaf.model.clone(),
            decl_idx: *decl_idx,
            replica_index: replica,
            n,
            grants: grants.iter().copied().collect(),
            reads,
            writes,
            dynamic: exam_deps.dynamic || firing_deps.dynamic,
        });
    }

    // Aliased slots must agree on their initial value; surfacing that here
    // rather than at the first simulation makes `check` complete.
    fm.initial_marking()?;

    Ok(fm)
}


#[cfg(test)]
mod nesting_tests {
    use super::*;
    use crate::compose::{narep, rep, SharingMode};
    use crate::expr::parse;
    use crate::model::{ActivityDecl, CaseDecl, PlaceDecl, UpdateStmt};
    use std::collections::BTreeSet;

    fn cell() -> AtomicModel {
        AtomicModel::new("cell").with_place(PlaceDecl::scalar("P", Expr::int(1))).with_activity(
            ActivityDecl {
                name: "step".to_string(),
                timing: Timing::Exponential { rate: Expr::int(1) },
                enabling: parse("P[repindex()] > 0").unwrap(),
                cases: vec![CaseDecl {
                    weight: Expr::int(1),
                    updates: vec![UpdateStmt::new("P", None, parse("P - 1").unwrap())],
                }],
                span: Default::default(),
            },
        )
    }

    #[test]
    fn narep_nests_inside_narep_with_pointwise_sharing() {
        // Outer place-sharing merges whole inner replica families pointwise:
        // blocks[0][j].P aliases blocks[1][j].P for every inner j.
        let inner = narep(cell().into_node(), 2, BTreeMap::new(), vec![]).unwrap();
        let sharing = BTreeMap::from([(
            "P".to_string(),
            SharingMode::PlaceShared { groups: vec![BTreeSet::from([0, 1])] },
        )]);
        let node = narep(inner, 2, sharing, vec![]).unwrap();
        let fm = flatten(&node, "blocks").unwrap();
        assert_eq!(fm.var_count(), 2);
        for j in 0..2 {
            assert_eq!(
                fm.var_by_label(&format!("blocks[0][{j}].P")),
                fm.var_by_label(&format!("blocks[1][{j}].P"))
            );
        }
        // repindex() refers to the innermost replication, so the leaf
        // bindings span the inner dimension only.
        assert_eq!(fm.activities[0].n, 2);
        let total: u32 = fm.vars.iter().map(|v| v.class_size).sum();
        assert_eq!(total, 4);
    }

    #[test]
    fn rep_sharing_on_an_inner_family_is_rejected() {
        let inner = narep(cell().into_node(), 2, BTreeMap::new(), vec![]).unwrap();
        let sharing = BTreeMap::from([(
            "P".to_string(),
            SharingMode::RepShared { access: crate::compose::AccessMap::full(2) },
        )]);
        let node = narep(inner, 2, sharing, vec![]).unwrap();
        assert!(matches!(flatten(&node, "blocks"), Err(FlattenError::InvalidSharingSpec { .. })));
    }

    #[test]
    fn rep_of_narep_keeps_inner_variables_unamortized() {
        // Only leaves whose innermost replicator is the anonymous rep are
        // template-stamped; a nested narep stays per-instance.
        let inner = narep(cell().into_node(), 2, BTreeMap::new(), vec![]).unwrap();
        let node = rep(inner, 3, BTreeSet::new()).unwrap();
        let fm = flatten(&node, "outer").unwrap();
        assert_eq!(fm.var_count(), 6);
        assert!(fm.vars.iter().all(|v| !v.amortized));

        // Whereas rep directly over a plain template is stamped.
        let plain = AtomicModel::new("cell")
            .with_place(PlaceDecl::scalar("P", Expr::int(1)))
            .with_activity(ActivityDecl {
                name: "step".to_string(),
                timing: Timing::Exponential { rate: Expr::int(1) },
                enabling: parse("P > 0").unwrap(),
                cases: vec![CaseDecl {
                    weight: Expr::int(1),
                    updates: vec![UpdateStmt::new("P", None, parse("P - 1").unwrap())],
                }],
                span: Default::default(),
            });
        let node = rep(plain.into_node(), 3, BTreeSet::new()).unwrap();
        let fm = flatten(&node, "outer").unwrap();
        assert!(fm.vars.iter().all(|v| v.amortized));
    }
}

#[cfg(test)]
mod upshare_mode_tests {
    use super::*;
    use crate::compose::{join, narep, AccessMap, SharingMode, UpShareSpec};
    use crate::expr::parse;
    use crate::model::{ActivityDecl, CaseDecl, PlaceDecl, UpdateStmt};

    fn cell() -> AtomicModel {
        AtomicModel::new("cell").with_place(PlaceDecl::scalar("P", Expr::int(1))).with_activity(
            ActivityDecl {
                name: "step".to_string(),
                timing: Timing::Exponential { rate: Expr::int(1) },
                enabling: parse("P[repindex()] > 0").unwrap(),
                cases: vec![CaseDecl {
                    weight: Expr::int(1),
                    updates: vec![UpdateStmt::new("P", None, parse("P - 1").unwrap())],
                }],
                span: Default::default(),
            },
        )
    }

    fn monitor() -> AtomicModel {
        AtomicModel::new("monitor")
            .with_place(PlaceDecl::array("Q", 3, Expr::int(1)))
            .with_activity(ActivityDecl {
                name: "watch".to_string(),
                timing: Timing::Exponential { rate: Expr::int(1) },
                enabling: parse("Q[0] + Q[1] + Q[2] > 0").unwrap(),
                cases: vec![CaseDecl { weight: Expr::int(1), updates: vec![] }],
                span: Default::default(),
            })
    }

    fn compose_with(sharing: SharingMode) -> Result<FlatModel, FlattenError> {
        let spec = UpShareSpec {
            place: "P".to_string(),
            sibling: "mon".to_string(),
            outer_place: "Q".to_string(),
            entry_map: BTreeMap::from([(0, 0), (1, 1), (2, 2)]),
        };
        let cells =
            narep(cell().into_node(), 3, BTreeMap::from([("P".to_string(), sharing)]), vec![spec])
                .unwrap();
        let top = join(
            vec![("cells".to_string(), cells), ("mon".to_string(), monitor().into_node())],
            vec![],
        )
        .unwrap();
        flatten(&top, "")
    }

    #[test]
    fn local_placeshared_and_repshared_places_can_all_be_upshared() {
        // Local: three distinct variables, each aliased with its entry.
        let fm = compose_with(SharingMode::Local).unwrap();
        assert_eq!(fm.var_count(), 3);
        for k in 0..3 {
            assert_eq!(
                fm.var_by_label(&format!("cells[{k}].P")),
                fm.var_by_label(&format!("mon.Q[{k}]"))
            );
        }

        // Place-shared {0,1}: the shared pair drags its two array entries
        // into one class, so Q[0] and Q[1] coincide too.
        let fm = compose_with(SharingMode::PlaceShared { groups: vec![BTreeSet::from([0, 1])] })
            .unwrap();
        assert_eq!(fm.var_count(), 2);
        assert_eq!(fm.var_by_label("mon.Q[0]"), fm.var_by_label("mon.Q[1]"));
        assert_ne!(fm.var_by_label("mon.Q[1]"), fm.var_by_label("mon.Q[2]"));

        // Rep-shared ring: copies stay distinct (aliased pointwise with the
        // array), and cross-replica grants still apply.
        let fm = compose_with(SharingMode::RepShared { access: AccessMap::ring(3, 1) }).unwrap();
        assert_eq!(fm.var_count(), 3);
        let act = fm.activity_by_label("cells[1].step").unwrap();
        let grants = &fm.activities[act as usize].grants;
        assert_eq!(grants.len(), 3);
        // The monitor reads every entry, i.e. every cell's state.
        let watch = fm.activity_by_label("mon.watch").unwrap();
        let (reads, _) = fm.resolve_access(watch);
        assert_eq!(reads.len(), 3);
    }
}
