//! Correct-by-construction system substitution over finite-state machines.
//!
//! * [`kernel`]: guarded-event machines, expressions, valuations, systems.
//! * [`obligations`]: exhaustive checking of invariants, variants, refinement
//!   and switch feasibility.
//! * [`substitution`]: the switch event (cold, warm, hot) and scenario runs.
//! * [`commerce`]: the cart-selection case study and its scenario registry.

pub mod commerce;
pub mod kernel;
pub mod obligations;
pub mod substitution;
pub mod suite;

pub use kernel::{
    AtomSet, CompoundState, Domain, Expr, GuardedEvent, Machine, MachineDef, SystemDef,
    SystemsPartition, Universe, Valuation, Value, VarDecl, VarKind,
};
pub use obligations::{Counterexample, ObligationKind, ObligationReport, RefinementLink};
pub use substitution::{HorizontalInvariant, Policy, SubstitutionConfig, Trigger};
pub use suite::Scenario;
