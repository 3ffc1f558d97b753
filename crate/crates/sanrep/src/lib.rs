//! Stochastic activity network modeling and simulation with hierarchical
//! composition.
//!
//! Models are built from atomic stochastic activity networks (places plus
//! timed and instantaneous activities) combined with three composers:
//!
//! * `join` — state-sharing composition of distinct submodels,
//! * `rep` — anonymous replication of a template with optionally shared
//!   places,
//! * `narep` — non-anonymous replication: replicas carry an index reachable
//!   as `repindex()`, and each place declares a sharing mode (`local`,
//!   `placeshared`, `repshared`, `upshared`).
//!
//! Declared sharing is what makes dependency analysis cheap: flattening
//! resolves every activity instance's read set exactly, and connectivity-list
//! construction examines only the variables an instance is actually granted,
//! instead of assuming every replica can touch every other replica's state.
//! A 1-neighbor ring of `n` replicas costs `3n` dependency checks where the
//! anonymous-replication emulation of the same system (one fully shared
//! `n`-entry array indexed through a local index place) costs `n²`.
//!
//! The crate ships a discrete-event simulator (exponential and deterministic
//! timed activities, prioritized instantaneous activities), rate and impulse
//! reward variables with replication-based confidence intervals, a text model
//! format, and a benchmark generator reproducing the `3n` vs `n²` scaling
//! contrast. See `docs/model-format.md` and `docs/determinism.md` in the
//! repository root for the file format and the reproducibility contract.
//!
//! ```
//! use sanrep::modelfile::load_str;
//! use sanrep::{build_connectivity, flatten, simulate, SimConfig};
//!
//! let source = r#"
//!     atomic Cell {
//!       place P = 1;
//!       activity step {
//!         rate 1 + P[(repindex()+n-1) % n] + P[(repindex()+1) % n];
//!         enabled P[repindex()] > 0;
//!         case 1 {
//!           P[repindex()] = P[repindex()] - 1;
//!           P[(repindex()+1) % n] = P[(repindex()+1) % n] + 1;
//!         }
//!       }
//!     }
//!     compose { cells = narep(Cell, 8) { P: repshared ring(1); }; top = cells; }
//! "#;
//! let model = load_str(source, "ring").unwrap();
//! let fm = flatten(&model.root, &model.root_label).unwrap();
//! let cl = build_connectivity(&fm);
//! assert_eq!(cl.check_count, 24); // 3n, not n*n
//!
//! let trajectory = simulate(&fm, &cl, &SimConfig::new(1).max_events(100)).unwrap();
//! assert_eq!(trajectory.events.len(), 100);
//! ```

pub mod bench;
pub mod compose;
pub mod connectivity;
pub mod expr;
pub mod flatten;
pub mod model;
pub mod modelfile;
pub mod rewards;
pub mod rng;
pub mod sim;
pub mod unionfind;

pub use compose::{AccessMap, ComposeError, CompositionNode, JoinSpec, SharingMode, UpShareSpec};
pub use connectivity::{build_connectivity, ConnectivityLists, ConnectivityReport};
pub use flatten::{flatten, FlatModel, FlattenError, Marking};
pub use model::{
    ActivityDecl, AtomicModel, CaseDecl, Diagnostic, PlaceDecl, PlaceKind, Timing, UpdateStmt,
};
pub use rewards::{estimate, evaluate_reward, Estimate, RewardKind, RewardVar};
pub use sim::{
    compare_trajectories, simulate, Event, SimConfig, SimError, SimMode, Trajectory, TrajectoryCmp,
};
