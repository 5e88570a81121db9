//! Reversible multiparty asynchronous choreographies.
//!
//! The crate implements both levels of a choreography:
//!
//! - *global types* with a cursor marking the current protocol state,
//!   stepped forward and backward ([`global`]);
//! - *configurations* of located processes, monitors, and session queues,
//!   reduced under a decoupled semantics where sends, receives, and their
//!   undoings are separate steps ([`decoupled`]), or under a coarser atomic
//!   semantics where a synchronization is a single step ([`atomic`]).
//!
//! Monitors double as memories: each one carries a local type with a cursor,
//! the variables bound so far, and a store, which is enough to replay any
//! step in reverse. On top of the two semantics sit executable checks for
//! the meta-properties one expects of such a system: the loop property,
//! commutation of concurrent steps, causal consistency of rollbacks, and
//! the correspondence between the global and local levels ([`causal`],
//! [`conform`]).
//!
//! [`surface`] provides a small concrete syntax for protocols and systems,
//! plus the bundled example programs used throughout the test suite.

pub mod atomic;
pub mod causal;
pub mod conform;
pub mod decoupled;
pub mod global;
pub mod ident;
pub mod process;
pub mod runtime;
pub mod surface;
pub mod types;

pub use ident::{KeyName, Label, Location, Participant, ProcVar, SessionName, SharedName, TypeVar, Var};
pub use types::{GlobalType, LocalType, ValueType};
