//! Text model format: atomic model definitions, one composition section,
//! and reward definitions. The grammar is documented in
//! `docs/model-format.md`.
//!
//! ```text
//! atomic Cell {
//!   place P = 1;
//!   activity step {
//!     rate 1 + P[(repindex()+n-1) % n] + P[(repindex()+1) % n];
//!     enabled P[repindex()] > 0;
//!     case 1 {
//!       P[repindex()] = P[repindex()] - 1;
//!       P[(repindex()+1) % n] = P[(repindex()+1) % n] + 1;
//!     }
//!   }
//! }
//!
//! compose {
//!   cells = narep(Cell, 5) { P: repshared ring(1); };
//!   top = cells;
//! }
//!
//! reward load { rate cells[0].P; timeavg 0 100; }
//! ```

use crate::compose::{self, AccessMap, CompositionNode, JoinSpec, SharingMode, UpShareSpec};
use crate::expr::PlaceRef;
use crate::expr::{lex, parse_tokens, Expr, Span, Tok, Token};
use crate::model::{
    self, ActivityDecl, AtomicModel, CaseDecl, InitialSpec, PlaceDecl, PlaceKind, Timing,
    UpdateStmt,
};
use crate::rewards::{ImpulseClause, RewardKind, RewardVar};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{0}")]
    Io(String),
    #[error("{span}: syntax error: {message}")]
    Syntax { message: String, span: Span },
    #[error("validation failed:\n{}", diagnostics.join("\n"))]
    Validation { diagnostics: Vec<String> },
}

impl From<crate::expr::ParseError> for LoadError {
    fn from(e: crate::expr::ParseError) -> Self {
        LoadError::Syntax { message: e.to_string(), span: e.span() }
    }
}

#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub name: String,
    pub root: CompositionNode,
    pub root_label: String,
    pub rewards: Vec<RewardVar>,
}

pub fn load(path: &Path) -> Result<LoadedModel, LoadError> {
    let source = std::fs::read_to_string(path)
        .map_err(|e| LoadError::Io(format!("{}: {e}", path.display())))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".to_string());
    load_str(&source, &name)
}

pub fn load_str(source: &str, name: &str) -> Result<LoadedModel, LoadError> {
    let tokens = lex(source).map_err(|e| LoadError::Syntax { message: e.message, span: e.span })?;
    let mut parser = FileParser {
        tokens: &tokens,
        pos: 0,
        atomics: BTreeMap::new(),
        bindings: Vec::new(),
        diagnostics: Vec::new(),
    };
    let loaded = parser.file(name)?;
    Ok(loaded)
}

struct FileParser<'t> {
    tokens: &'t [Token],
    pos: usize,
    atomics: BTreeMap<String, Arc<AtomicModel>>,
    bindings: Vec<(String, CompositionNode, NodeSource)>,
    diagnostics: Vec<String>,
}

#[derive(Clone, PartialEq)]
enum NodeSource {
    Reference(String),
    InlineJoin,
    InlineReplication,
}

impl<'t> FileParser<'t> {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos.min(self.tokens.len() - 1)]
    }

    fn bump(&mut self) -> Token {
        let t = self.peek().clone();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, kind: &Tok) -> bool {
        if &self.peek().kind == kind {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, kind: Tok) -> Result<Token, LoadError> {
        if self.peek().kind == kind {
            Ok(self.bump())
        } else {
            Err(self.unexpected(&format!("expected {}", kind.describe())))
        }
    }

    fn unexpected(&self, expected: &str) -> LoadError {
        LoadError::Syntax {
            message: format!("{expected}, found {}", self.peek().kind.describe()),
            span: self.peek().span,
        }
    }

    fn ident(&mut self) -> Result<(String, Span), LoadError> {
        match self.peek().kind.clone() {
            Tok::Ident(s) => {
                let span = self.bump().span;
                Ok((s, span))
            }
            _ => Err(self.unexpected("expected identifier")),
        }
    }

    fn integer(&mut self) -> Result<i64, LoadError> {
        match self.peek().kind {
            Tok::Int(v) => {
                self.bump();
                Ok(v)
            }
            _ => Err(self.unexpected("expected integer")),
        }
    }

    fn nonneg_integer(&mut self) -> Result<u32, LoadError> {
        match self.peek().kind {
            Tok::Int(v) if v >= 0 => {
                self.bump();
                Ok(v as u32)
            }
            _ => Err(self.unexpected("expected a non-negative integer")),
        }
    }

    fn number(&mut self) -> Result<f64, LoadError> {
        match self.peek().kind {
            Tok::Int(v) => {
                self.bump();
                Ok(v as f64)
            }
            Tok::Real(v) => {
                self.bump();
                Ok(v)
            }
            _ => Err(self.unexpected("expected number")),
        }
    }

    fn expr(&mut self) -> Result<Expr, LoadError> {
        Ok(parse_tokens(self.tokens, &mut self.pos, false)?)
    }

    fn reward_expr(&mut self) -> Result<Expr, LoadError> {
        Ok(parse_tokens(self.tokens, &mut self.pos, true)?)
    }

    fn int_list(&mut self) -> Result<Vec<u32>, LoadError> {
        let mut out = vec![self.integer()? as u32];
        while self.eat(&Tok::Comma) {
            out.push(self.integer()? as u32);
        }
        Ok(out)
    }

    fn file(&mut self, name: &str) -> Result<LoadedModel, LoadError> {
        let mut compose_result: Option<(CompositionNode, String)> = None;
        let mut rewards: Vec<RewardVar> = Vec::new();
        let mut any_item = false;
        loop {
            match self.peek().kind {
                Tok::Eof => break,
                Tok::Atomic => {
                    any_item = true;
                    self.atomic()?;
                }
                Tok::Compose => {
                    any_item = true;
                    if compose_result.is_some() {
                        self.diagnostics.push("more than one compose section".to_string());
                        self.compose_section()?;
                    } else {
                        compose_result = Some(self.compose_section()?);
                    }
                }
                Tok::Reward => {
                    any_item = true;
                    let reward = self.reward()?;
                    if rewards.iter().any(|r| r.name == reward.name) {
                        self.diagnostics.push(format!("duplicate reward `{}`", reward.name));
                    }
                    rewards.push(reward);
                }
                _ => return Err(self.unexpected("expected `atomic`, `compose`, or `reward`")),
            }
        }
        if !any_item {
            return Err(LoadError::Syntax {
                message: "expected `atomic`, `compose`, or `reward`, found end of input"
                    .to_string(),
                span: self.peek().span,
            });
        }
        let (root, root_label) = match compose_result {
            Some(r) => r,
            None => {
                self.diagnostics.push("missing compose section".to_string());
                return Err(LoadError::Validation {
                    diagnostics: std::mem::take(&mut self.diagnostics),
                });
            }
        };
        if !self.diagnostics.is_empty() {
            return Err(LoadError::Validation {
                diagnostics: std::mem::take(&mut self.diagnostics),
            });
        }
        Ok(LoadedModel { name: name.to_string(), root, root_label, rewards })
    }

    fn atomic(&mut self) -> Result<(), LoadError> {
        self.expect(Tok::Atomic)?;
        let (name, span) = self.ident()?;
        self.expect(Tok::LBrace)?;
        let mut model = AtomicModel::new(&name);
        loop {
            match self.peek().kind {
                Tok::Place => model.places.push(self.place()?),
                Tok::Activity => model.activities.push(self.activity()?),
                Tok::RBrace => {
                    self.bump();
                    break;
                }
                _ => return Err(self.unexpected("expected `place`, `activity`, or `}`")),
            }
        }
        for d in model::validate(&model) {
            self.diagnostics.push(format!("{name}: {d}"));
        }
        if self.atomics.contains_key(&name) {
            self.diagnostics.push(format!("{}: atomic model `{name}` defined twice", span));
        }
        self.atomics.insert(name, Arc::new(model));
        Ok(())
    }

    fn place(&mut self) -> Result<PlaceDecl, LoadError> {
        let span = self.expect(Tok::Place)?.span;
        let (name, _) = self.ident()?;
        let kind = if self.eat(&Tok::LBracket) {
            let len = self.integer()?;
            self.expect(Tok::RBracket)?;
            PlaceKind::Array(len.max(0) as u32)
        } else {
            PlaceKind::Scalar
        };
        let initial = if self.eat(&Tok::Assign) {
            if self.eat(&Tok::LBrace) {
                let mut entries = vec![self.expr()?];
                while self.eat(&Tok::Comma) {
                    entries.push(self.expr()?);
                }
                self.expect(Tok::RBrace)?;
                InitialSpec::PerEntry(entries)
            } else {
                InitialSpec::Uniform(self.expr()?)
            }
        } else {
            InitialSpec::Uniform(Expr::int(0))
        };
        self.expect(Tok::Semi)?;
        Ok(PlaceDecl { name, kind, initial, span })
    }

    fn activity(&mut self) -> Result<ActivityDecl, LoadError> {
        let span = self.expect(Tok::Activity)?.span;
        let (name, _) = self.ident()?;
        self.expect(Tok::LBrace)?;
        let timing = match self.peek().kind {
            Tok::Rate => {
                self.bump();
                let rate = self.expr()?;
                self.expect(Tok::Semi)?;
                Timing::Exponential { rate }
            }
            Tok::Delay => {
                self.bump();
                let delay = self.expr()?;
                self.expect(Tok::Semi)?;
                Timing::Deterministic { delay }
            }
            Tok::Weight => {
                self.bump();
                let weight = self.expr()?;
                self.expect(Tok::Priority)?;
                let priority = self.nonneg_integer()?;
                self.expect(Tok::Semi)?;
                Timing::Instantaneous { weight, priority }
            }
            _ => return Err(self.unexpected("expected `rate`, `delay`, or `weight`")),
        };
        let enabling = if self.eat(&Tok::Enabled) {
            let e = self.expr()?;
            self.expect(Tok::Semi)?;
            e
        } else {
            Expr::bool(true)
        };
        let mut cases = Vec::new();
        while self.peek().kind == Tok::Case {
            self.bump();
            let weight = self.expr()?;
            self.expect(Tok::LBrace)?;
            let mut updates = Vec::new();
            while self.peek().kind != Tok::RBrace {
                updates.push(self.update()?);
            }
            self.expect(Tok::RBrace)?;
            cases.push(CaseDecl { weight, updates });
        }
        self.expect(Tok::RBrace)?;
        Ok(ActivityDecl { name, timing, enabling, cases, span })
    }

    fn update(&mut self) -> Result<UpdateStmt, LoadError> {
        let (name, span) = self.ident()?;
        let index = if self.eat(&Tok::LBracket) {
            let idx = self.expr()?;
            self.expect(Tok::RBracket)?;
            Some(Box::new(idx))
        } else {
            None
        };
        self.expect(Tok::Assign)?;
        let value = self.expr()?;
        self.expect(Tok::Semi)?;
        Ok(UpdateStmt { target: PlaceRef { name, index }, value, span })
    }

    // ----------------------------------------------------------
    // Composition section
    // ----------------------------------------------------------

    fn compose_section(&mut self) -> Result<(CompositionNode, String), LoadError> {
        self.expect(Tok::Compose)?;
        self.expect(Tok::LBrace)?;
        while self.peek().kind != Tok::RBrace {
            let (name, span) = self.ident()?;
            self.expect(Tok::Assign)?;
            let (node, source) = self.node_expr()?;
            self.expect(Tok::Semi)?;
            if self.lookup(&name).is_some() || self.atomics.contains_key(&name) {
                self.diagnostics.push(format!("{span}: `{name}` defined twice"));
            }
            self.bindings.push((name, node, source));
        }
        self.expect(Tok::RBrace)?;
        let Some((_, node, source)) = self.bindings.iter().find(|(n, _, _)| n == "top").cloned()
        else {
            self.diagnostics.push("compose section has no `top` binding".to_string());
            return Err(LoadError::Validation {
                diagnostics: std::mem::take(&mut self.diagnostics),
            });
        };
        let label = match source {
            NodeSource::Reference(name) => name,
            NodeSource::InlineJoin => String::new(),
            NodeSource::InlineReplication => "top".to_string(),
        };
        Ok((node, label))
    }

    fn lookup(&self, name: &str) -> Option<CompositionNode> {
        self.bindings.iter().find(|(n, _, _)| n == name).map(|(_, node, _)| node.clone())
    }

    fn node_ref(&mut self) -> Result<(String, CompositionNode), LoadError> {
        let (name, span) = self.ident()?;
        if let Some(node) = self.lookup(&name) {
            return Ok((name, node));
        }
        if let Some(model) = self.atomics.get(&name) {
            return Ok((name, CompositionNode::Atomic(model.clone())));
        }
        Err(LoadError::Syntax { message: format!("unknown model or binding `{name}`"), span })
    }

    fn node_expr(&mut self) -> Result<(CompositionNode, NodeSource), LoadError> {
        match self.peek().kind {
            Tok::Rep => {
                let span = self.bump().span;
                self.expect(Tok::LParen)?;
                let (_, child) = self.node_ref()?;
                self.expect(Tok::Comma)?;
                let n = self.integer()?.max(0) as u32;
                self.expect(Tok::RParen)?;
                let mut shared = BTreeSet::new();
                if self.eat(&Tok::Share) {
                    self.expect(Tok::LBrace)?;
                    loop {
                        let (place, _) = self.ident()?;
                        shared.insert(place);
                        if !self.eat(&Tok::Comma) {
                            break;
                        }
                    }
                    self.expect(Tok::RBrace)?;
                }
                let node =
                    compose::rep(child, n, shared).map_err(|e| self.compose_error(span, e))?;
                Ok((node, NodeSource::InlineReplication))
            }
            Tok::NaRep => {
                let span = self.bump().span;
                self.expect(Tok::LParen)?;
                let (_, child) = self.node_ref()?;
                self.expect(Tok::Comma)?;
                let n = self.integer()?.max(0) as u32;
                self.expect(Tok::RParen)?;
                let mut sharing = BTreeMap::new();
                let mut up_shares = Vec::new();
                if self.eat(&Tok::LBrace) {
                    while self.peek().kind != Tok::RBrace {
                        if self.eat(&Tok::UpShared) {
                            up_shares.push(self.upshare_clause()?);
                        } else {
                            let place = self.place_path()?;
                            self.expect(Tok::Colon)?;
                            let mode = self.sharing_mode(n)?;
                            self.expect(Tok::Semi)?;
                            sharing.insert(place, mode);
                        }
                    }
                    self.expect(Tok::RBrace)?;
                }
                let node = compose::narep(child, n, sharing, up_shares)
                    .map_err(|e| self.compose_error(span, e))?;
                Ok((node, NodeSource::InlineReplication))
            }
            Tok::Join => {
                let span = self.bump().span;
                self.expect(Tok::LParen)?;
                let mut children = Vec::new();
                loop {
                    let (name, node) = self.node_ref()?;
                    children.push((name, node));
                    if !self.eat(&Tok::Comma) {
                        break;
                    }
                }
                self.expect(Tok::RParen)?;
                let mut joins = Vec::new();
                if self.eat(&Tok::LBrace) {
                    while self.eat(&Tok::Share) {
                        let mut group = vec![self.split_path()?];
                        self.expect(Tok::Assign)?;
                        group.push(self.split_path()?);
                        while self.eat(&Tok::Assign) {
                            group.push(self.split_path()?);
                        }
                        self.expect(Tok::Semi)?;
                        joins.push(JoinSpec { group });
                    }
                    self.expect(Tok::RBrace)?;
                }
                let node =
                    compose::join(children, joins).map_err(|e| self.compose_error(span, e))?;
                Ok((node, NodeSource::InlineJoin))
            }
            _ => {
                let (name, node) = self.node_ref()?;
                Ok((node, NodeSource::Reference(name)))
            }
        }
    }

    fn compose_error(&mut self, span: Span, e: compose::ComposeError) -> LoadError {
        self.diagnostics.push(format!("{span}: {e}"));
        LoadError::Validation { diagnostics: std::mem::take(&mut self.diagnostics) }
    }

    /// Dotted place path inside narep sharing clauses (`P` or `a.P`).
    fn place_path(&mut self) -> Result<String, LoadError> {
        let (mut path, _) = self.ident()?;
        while self.eat(&Tok::Dot) {
            path.push('.');
            path.push_str(&self.ident()?.0);
        }
        Ok(path)
    }

    /// Dotted path split into (child path, place name) for join groups.
    fn split_path(&mut self) -> Result<(String, String), LoadError> {
        let (first, span) = self.ident()?;
        let mut segments = vec![first];
        while self.eat(&Tok::Dot) {
            segments.push(self.ident()?.0);
        }
        if segments.len() < 2 {
            return Err(LoadError::Syntax {
                message: "expected `child.place` path".to_string(),
                span,
            });
        }
        let place = segments.pop().unwrap();
        Ok((segments.join("."), place))
    }

    fn sharing_mode(&mut self, n: u32) -> Result<SharingMode, LoadError> {
        match self.peek().kind {
            Tok::Local => {
                self.bump();
                Ok(SharingMode::Local)
            }
            Tok::PlaceShared => {
                self.bump();
                let mut groups = Vec::new();
                while self.eat(&Tok::LBrace) {
                    let list = self.int_list()?;
                    self.expect(Tok::RBrace)?;
                    groups.push(list.into_iter().collect::<BTreeSet<u32>>());
                }
                if groups.is_empty() {
                    return Err(self.unexpected("expected at least one `{i, j, ...}` group"));
                }
                Ok(SharingMode::PlaceShared { groups })
            }
            Tok::RepSharedKw => {
                self.bump();
                let access =
                    match self.peek().kind {
                        Tok::Ring => {
                            self.bump();
                            self.expect(Tok::LParen)?;
                            let k = self.integer()?.max(0) as u32;
                            self.expect(Tok::RParen)?;
                            AccessMap::ring(n, k)
                        }
                        Tok::Star => {
                            self.bump();
                            AccessMap::star(n)
                        }
                        Tok::Full => {
                            self.bump();
                            AccessMap::full(n)
                        }
                        Tok::Grid => {
                            self.bump();
                            self.expect(Tok::LParen)?;
                            let rows = self.integer()?.max(0) as u32;
                            self.expect(Tok::Comma)?;
                            let cols = self.integer()?.max(0) as u32;
                            self.expect(Tok::RParen)?;
                            AccessMap::grid(rows, cols)
                        }
                        Tok::LBrace => {
                            self.bump();
                            let mut rows: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
                            while self.peek().kind != Tok::RBrace {
                                let replica = self.integer()? as u32;
                                self.expect(Tok::Colon)?;
                                self.expect(Tok::LBrace)?;
                                let list = self.int_list()?;
                                self.expect(Tok::RBrace)?;
                                rows.insert(replica, list.into_iter().collect());
                                if !self.eat(&Tok::Semi) {
                                    break;
                                }
                            }
                            self.expect(Tok::RBrace)?;
                            let access: Vec<BTreeSet<u32>> =
                                (0..n).map(|i| rows.remove(&i).unwrap_or_default()).collect();
                            AccessMap::new(access)
                        }
                        _ => return Err(self.unexpected(
                            "expected `ring(k)`, `star`, `full`, `grid(r,c)`, or `{i: {..}; ...}`",
                        )),
                    };
                Ok(SharingMode::RepShared { access })
            }
            _ => Err(self.unexpected("expected `local`, `placeshared`, or `repshared`")),
        }
    }

    /// `upshared P -> sibling.Q {0 -> 0, 1 -> 1};`
    fn upshare_clause(&mut self) -> Result<UpShareSpec, LoadError> {
        let place = self.place_path()?;
        self.expect(Tok::Arrow)?;
        let (sibling, outer_place) = self.split_path()?;
        self.expect(Tok::LBrace)?;
        let mut entry_map = BTreeMap::new();
        loop {
            let inner = self.integer()? as u32;
            self.expect(Tok::Arrow)?;
            let outer = self.integer()? as u32;
            entry_map.insert(inner, outer);
            if !self.eat(&Tok::Comma) {
                break;
            }
        }
        self.expect(Tok::RBrace)?;
        self.expect(Tok::Semi)?;
        Ok(UpShareSpec { place, sibling, outer_place, entry_map })
    }

    // ----------------------------------------------------------
    // Rewards
    // ----------------------------------------------------------

    /// Activity matcher: declaration name or instance label with replica
    /// brackets, e.g. `step` or `cells[2].step`.
    fn activity_matcher(&mut self) -> Result<String, LoadError> {
        let (mut out, _) = self.ident()?;
        loop {
            if self.eat(&Tok::LBracket) {
                let idx = self.integer()?;
                self.expect(Tok::RBracket)?;
                out.push_str(&format!("[{idx}]"));
            } else if self.eat(&Tok::Dot) {
                out.push('.');
                out.push_str(&self.ident()?.0);
            } else {
                return Ok(out);
            }
        }
    }

    fn reward(&mut self) -> Result<RewardVar, LoadError> {
        self.expect(Tok::Reward)?;
        let (name, span) = self.ident()?;
        self.expect(Tok::LBrace)?;
        let mut rate = None;
        let mut impulses = Vec::new();
        let mut kind = None;
        while self.peek().kind != Tok::RBrace {
            match self.peek().kind {
                Tok::Rate => {
                    self.bump();
                    if rate.is_some() {
                        self.diagnostics
                            .push(format!("{span}: reward `{name}` has two rate clauses"));
                    }
                    rate = Some(self.reward_expr()?);
                    self.expect(Tok::Semi)?;
                }
                Tok::Impulse => {
                    self.bump();
                    let activity = self.activity_matcher()?;
                    let expr = self.reward_expr()?;
                    self.expect(Tok::Semi)?;
                    impulses.push(ImpulseClause { activity, expr });
                }
                Tok::TimeAvg => {
                    self.bump();
                    let from = self.number()?;
                    let to = self.number()?;
                    self.expect(Tok::Semi)?;
                    kind = Some(RewardKind::TimeAveraged { from, to });
                }
                Tok::Instant => {
                    self.bump();
                    let at = self.number()?;
                    self.expect(Tok::Semi)?;
                    kind = Some(RewardKind::InstantOfTime { at });
                }
                Tok::Accumulated => {
                    self.bump();
                    let from = self.number()?;
                    let to = self.number()?;
                    self.expect(Tok::Semi)?;
                    kind = Some(RewardKind::Accumulated { from, to });
                }
                _ => {
                    return Err(self.unexpected(
                        "expected `rate`, `impulse`, `timeavg`, `instant`, or `accumulated`",
                    ))
                }
            }
        }
        self.expect(Tok::RBrace)?;
        let Some(kind) = kind else {
            self.diagnostics.push(format!("{span}: reward `{name}` has no kind clause"));
            return Ok(RewardVar {
                name,
                rate,
                impulses,
                kind: RewardKind::InstantOfTime { at: 0.0 },
            });
        };
        if rate.is_none() && impulses.is_empty() {
            self.diagnostics
                .push(format!("{span}: reward `{name}` has neither rate nor impulse clauses"));
        }
        Ok(RewardVar { name, rate, impulses, kind })
    }
}
