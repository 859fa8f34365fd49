//! Guarded-event machines over finite domains.
//!
//! Events are deterministic once their parameters are bound; choosing among
//! enabled `(event, binding)` pairs is left to the caller. Every list produced
//! here comes out in a fixed order (event declaration order, then ascending
//! binding order) so that runs are reproducible.

pub mod expr;
pub mod format;
mod machine;
pub mod value;

use thiserror::Error;

pub use expr::{BinOp, Expr, Quantifier, Scope, SortScope};
pub use machine::{
    Assignment, Binding, CompoundState, GuardedEvent, Machine, MachineDef, Param, StateScope,
    SystemDef, SystemsPartition, Valuation, VarDecl,
};
pub use value::{Atom, AtomSet, Domain, Sort, Universe, Value, VarKind};

use expr::{domain_values, Layered};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KernelError {
    #[error("sort error in `{context}`: expected {expected}, found {found}")]
    SortError {
        expected: Sort,
        found: Sort,
        context: String,
    },
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),
    #[error("unknown atom `{0}`")]
    UnknownAtom(String),
    #[error("duplicate atom `{0}` in universe")]
    DuplicateAtom(String),
    #[error("universe has {0} atoms; at most 64 are supported")]
    UniverseTooLarge(usize),
    #[error("`{0}` is not a valid identifier")]
    BadIdentifier(String),
    #[error("domain is unbounded and cannot be enumerated")]
    UnboundedDomain,
    #[error("duplicate variable `{0}`")]
    DuplicateVariable(String),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("duplicate event `{0}`")]
    DuplicateEvent(String),
    #[error("duplicate system `{0}`")]
    DuplicateSystem(String),
    #[error("unknown system `{0}`")]
    UnknownSystem(String),
    #[error("variable `{var}` belongs to both `{first}` and `{second}`")]
    SystemOverlap {
        var: String,
        first: String,
        second: String,
    },
    #[error("event `{event}`: parameter `{param}` is duplicated or shadows a variable")]
    ParamClash { event: String, param: String },
    #[error("event `{event}` assigns `{var}` more than once")]
    ConflictingAssignment { event: String, var: String },
    #[error("convergent event `{0}` has no variant to decrease")]
    MissingVariant(String),
    #[error("selector `{0}` must be an unowned nat variable bounded by the system count")]
    BadSelector(String),
    #[error("init assigns {found} values for {expected} variables")]
    InitArity { expected: usize, found: usize },
    #[error("value {value} is outside the domain of `{var}`")]
    DomainViolation { var: String, value: String },
    #[error("initial state violates invariant #{index}: {predicate}")]
    InitViolatesInvariant { index: usize, predicate: String },
    #[error("unknown event `{0}`")]
    UnknownEvent(String),
    #[error("event `{event}`: bad binding ({reason})")]
    BadBinding { event: String, reason: String },
    #[error("guard of `{0}` is false")]
    GuardFalse(String),
}

/// Returns the initial valuation after re-checking every invariant on it.
pub fn initialize(m: &Machine) -> Result<Valuation, KernelError> {
    let init = m.def().init.clone();
    if let Some(index) = violated_invariant(m, &init)? {
        return Err(KernelError::InitViolatesInvariant {
            index,
            predicate: m.invariants()[index].to_string(),
        });
    }
    Ok(init)
}

/// Index of the first invariant that `v` violates.
pub fn violated_invariant(m: &Machine, v: &Valuation) -> Result<Option<usize>, KernelError> {
    let scope = m.scope(v);
    for (i, inv) in m.invariants().iter().enumerate() {
        if !inv.holds(m.universe(), &scope)? {
            return Ok(Some(i));
        }
    }
    Ok(None)
}

/// Every enabled `(event, binding)` pair, in deterministic order.
pub fn enabled(m: &Machine, v: &Valuation) -> Result<Vec<(String, Binding)>, KernelError> {
    let mut out = Vec::new();
    for ev in m.events() {
        if !ev.params.is_empty() && !state_guard_holds(m, ev, v)? {
            continue;
        }
        for binding in bindings(m, ev, v)? {
            if guard_holds(m, ev, v, &binding)? {
                out.push((ev.name.clone(), binding));
            }
        }
    }
    Ok(out)
}

/// Cartesian product of the event's parameter domains, ascending.
pub fn bindings(
    m: &Machine,
    ev: &GuardedEvent,
    v: &Valuation,
) -> Result<Vec<Binding>, KernelError> {
    let scope = m.scope(v);
    let mut acc: Vec<Binding> = vec![Vec::new()];
    for p in &ev.params {
        let values = domain_values(&p.domain, m.universe(), &scope)?;
        acc = acc
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |val| {
                    let mut b = prefix.clone();
                    b.push((p.name.clone(), *val));
                    b
                })
            })
            .collect();
    }
    Ok(acc)
}

/// Conjuncts of the guard that mention no parameter; lets `enabled` skip
/// binding enumeration when the state alone disables the event.
fn state_guard_holds(m: &Machine, ev: &GuardedEvent, v: &Valuation) -> Result<bool, KernelError> {
    let Expr::And(terms) = &ev.guard else {
        return Ok(true);
    };
    let scope = m.scope(v);
    for t in terms {
        let free = t.free_vars();
        if ev.params.iter().any(|p| free.contains(&p.name)) {
            continue;
        }
        if !t.holds(m.universe(), &scope)? {
            return Ok(false);
        }
    }
    Ok(true)
}

fn guard_holds(
    m: &Machine,
    ev: &GuardedEvent,
    v: &Valuation,
    binding: &Binding,
) -> Result<bool, KernelError> {
    let base = m.scope(v);
    let scope = Layered {
        locals: binding,
        parent: &base,
    };
    ev.guard.holds(m.universe(), &scope)
}

/// Fires one event with parallel-assignment semantics.
pub fn step(
    m: &Machine,
    v: &Valuation,
    event: &str,
    binding: &Binding,
) -> Result<Valuation, KernelError> {
    let ev = m
        .event(event)
        .ok_or_else(|| KernelError::UnknownEvent(event.to_string()))?;
    check_binding(m, ev, v, binding)?;
    if !guard_holds(m, ev, v, binding)? {
        return Err(KernelError::GuardFalse(event.to_string()));
    }
    let base = m.scope(v);
    let scope = Layered {
        locals: binding,
        parent: &base,
    };
    let mut updates = Vec::with_capacity(ev.actions.len());
    for a in &ev.actions {
        let i = m
            .var_index(&a.target)
            .ok_or_else(|| KernelError::UnknownVariable(a.target.clone()))?;
        let value = a.value.eval(m.universe(), &scope)?;
        let decl = &m.variables()[i];
        if !decl.kind.admits(&value, m.universe()) {
            return Err(KernelError::DomainViolation {
                var: decl.name.clone(),
                value: value.display(m.universe()).to_string(),
            });
        }
        updates.push((i, value));
    }
    let mut next = v.clone();
    for (i, value) in updates {
        next.set(i, value);
    }
    Ok(next)
}

fn check_binding(
    m: &Machine,
    ev: &GuardedEvent,
    v: &Valuation,
    binding: &Binding,
) -> Result<(), KernelError> {
    let bad = |reason: String| KernelError::BadBinding {
        event: ev.name.clone(),
        reason,
    };
    if binding.len() != ev.params.len() {
        return Err(bad(format!(
            "expected {} parameters, got {}",
            ev.params.len(),
            binding.len()
        )));
    }
    let scope = m.scope(v);
    for (p, (name, value)) in ev.params.iter().zip(binding) {
        if &p.name != name {
            return Err(bad(format!(
                "expected parameter `{}`, got `{name}`",
                p.name
            )));
        }
        if !domain_values(&p.domain, m.universe(), &scope)?.contains(value) {
            return Err(bad(format!("value for `{name}` is outside its domain")));
        }
    }
    Ok(())
}

/// Evaluates a system's variant over the system's own variables only.
pub fn variant_value(m: &Machine, s: &SystemDef, v: &Valuation) -> Result<u64, KernelError> {
    let keep = |n: &str| s.owns(n);
    let scope = m.restricted_scope(v, &keep);
    match s.variant.eval(m.universe(), &scope)? {
        Value::Nat(n) => Ok(n),
        other => Err(KernelError::SortError {
            expected: Sort::Nat,
            found: other.sort(),
            context: s.variant.to_string(),
        }),
    }
}
