//! Co-safe temporal formulas, their automata and guard factorization.

pub mod dfa;
pub mod dfa_file;
pub mod formula;
pub mod guard;

pub use dfa::{to_dfa, Dfa, DEFAULT_STATE_CAP};
pub use dfa_file::{parse_guard, read_dfa_file, write_dfa_file, DfaFile, GuardExpr};
pub use formula::{parse, Formula};
pub use guard::{factor_edges, Conjunction, GuardedTransition, OutgoingTransitions};
