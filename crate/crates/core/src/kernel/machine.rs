//! Machines, systems, and their well-formedness rules.

use std::collections::{HashMap, HashSet};

use super::expr::{Expr, Scope, SortScope};
use super::value::{is_identifier, Domain, Sort, Universe, Value, VarKind};
use super::KernelError;

/// A total assignment of values to a machine's variables, in declaration order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Valuation(Vec<Value>);

impl Valuation {
    pub fn new(values: Vec<Value>) -> Self {
        Valuation(values)
    }

    pub fn values(&self) -> &[Value] {
        &self.0
    }

    pub fn get(&self, index: usize) -> Value {
        self.0[index]
    }

    pub fn set(&mut self, index: usize, value: Value) {
        self.0[index] = value;
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Parameter values of one event occurrence, in parameter declaration order.
pub type Binding = Vec<(String, Value)>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarDecl {
    pub name: String,
    pub kind: VarKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Param {
    pub name: String,
    pub domain: Domain,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub target: String,
    pub value: Expr,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GuardedEvent {
    pub name: String,
    /// Owning system. Unowned events are never scheduled while a system is
    /// active; they exist for exhaustive checking (e.g. a modelled switch).
    pub system: Option<String>,
    pub params: Vec<Param>,
    pub guard: Expr,
    pub actions: Vec<Assignment>,
    pub convergent: bool,
}

impl GuardedEvent {
    pub fn new(name: &str, guard: Expr) -> Self {
        GuardedEvent {
            name: name.to_string(),
            system: None,
            params: Vec::new(),
            guard,
            actions: Vec::new(),
            convergent: false,
        }
    }

    pub fn owned_by(mut self, system: &str) -> Self {
        self.system = Some(system.to_string());
        self
    }

    pub fn param(mut self, name: &str, domain: Domain) -> Self {
        self.params.push(Param {
            name: name.to_string(),
            domain,
        });
        self
    }

    pub fn assign(mut self, target: &str, value: Expr) -> Self {
        self.actions.push(Assignment {
            target: target.to_string(),
            value,
        });
        self
    }

    pub fn convergent(mut self) -> Self {
        self.convergent = true;
        self
    }
}

/// A system: its variable group and the variant ranking its states.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SystemDef {
    pub id: String,
    pub sv: Vec<String>,
    pub variant: Expr,
    /// States a warm start may resume from. `None` means every state.
    pub checkpoint: Option<Expr>,
}

impl SystemDef {
    pub fn new(id: &str, sv: &[&str], variant: Expr) -> Self {
        SystemDef {
            id: id.to_string(),
            sv: sv.iter().map(|s| s.to_string()).collect(),
            variant,
            checkpoint: None,
        }
    }

    pub fn owns(&self, var: &str) -> bool {
        self.sv.iter().any(|v| v == var)
    }
}

/// Systems whose variable groups are pairwise disjoint.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SystemsPartition(Vec<SystemDef>);

impl SystemsPartition {
    pub fn new(systems: Vec<SystemDef>) -> Result<Self, KernelError> {
        let mut owner: HashMap<&str, &str> = HashMap::new();
        let mut ids = HashSet::new();
        for s in &systems {
            if !is_identifier(&s.id) {
                return Err(KernelError::BadIdentifier(s.id.clone()));
            }
            if !ids.insert(s.id.as_str()) {
                return Err(KernelError::DuplicateSystem(s.id.clone()));
            }
            for v in &s.sv {
                if let Some(prev) = owner.insert(v, &s.id) {
                    return Err(KernelError::SystemOverlap {
                        var: v.clone(),
                        first: prev.to_string(),
                        second: s.id.clone(),
                    });
                }
            }
        }
        Ok(SystemsPartition(systems))
    }

    pub fn systems(&self) -> &[SystemDef] {
        &self.0
    }

    pub fn get(&self, id: &str) -> Option<&SystemDef> {
        self.0.iter().find(|s| s.id == id)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.0.iter().position(|s| s.id == id)
    }
}

/// Which system is running, plus the full machine valuation.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CompoundState {
    pub active: String,
    pub valuation: Valuation,
}

/// Unvalidated machine description.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MachineDef {
    pub name: String,
    pub universe: Universe,
    pub variables: Vec<VarDecl>,
    pub init: Valuation,
    pub invariants: Vec<Expr>,
    pub variant: Option<Expr>,
    pub events: Vec<GuardedEvent>,
    pub systems: Vec<SystemDef>,
    /// Nat variable holding the index of the active system, if the machine
    /// models several systems in one state space.
    pub selector: Option<String>,
}

/// A well-formed machine. Construction checks every static rule; the init
/// invariant check is deferred to [`super::initialize`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Machine {
    def: MachineDef,
    index: HashMap<String, usize>,
    partition: SystemsPartition,
}

impl Machine {
    pub fn new(def: MachineDef) -> Result<Self, KernelError> {
        if !is_identifier(&def.name) {
            return Err(KernelError::BadIdentifier(def.name.clone()));
        }
        let mut index = HashMap::with_capacity(def.variables.len());
        for (i, decl) in def.variables.iter().enumerate() {
            if !is_identifier(&decl.name) {
                return Err(KernelError::BadIdentifier(decl.name.clone()));
            }
            if index.insert(decl.name.clone(), i).is_some() {
                return Err(KernelError::DuplicateVariable(decl.name.clone()));
            }
        }
        if def.init.len() != def.variables.len() {
            return Err(KernelError::InitArity {
                expected: def.variables.len(),
                found: def.init.len(),
            });
        }
        for (decl, value) in def.variables.iter().zip(def.init.values()) {
            if !decl.kind.admits(value, &def.universe) {
                return Err(KernelError::DomainViolation {
                    var: decl.name.clone(),
                    value: value.display(&def.universe).to_string(),
                });
            }
        }
        let partition = SystemsPartition::new(def.systems.clone())?;
        let machine = Machine {
            def,
            index,
            partition,
        };
        machine.check_expressions()?;
        Ok(machine)
    }

    fn check_expressions(&self) -> Result<(), KernelError> {
        let u = &self.def.universe;
        let scope = VarSorts(self);
        for inv in &self.def.invariants {
            expect_sort(inv, Sort::Bool, u, &scope)?;
        }
        if let Some(variant) = &self.def.variant {
            expect_sort(variant, Sort::Nat, u, &scope)?;
        }
        for s in self.partition.systems() {
            for v in &s.sv {
                if !self.index.contains_key(v) {
                    return Err(KernelError::UnknownVariable(v.clone()));
                }
            }
            let restricted = |n: &str| if s.owns(n) { scope.sort_of(n) } else { None };
            expect_sort(&s.variant, Sort::Nat, u, &restricted)?;
            if let Some(cp) = &s.checkpoint {
                expect_sort(cp, Sort::Bool, u, &restricted)?;
            }
        }
        let mut names = HashSet::new();
        for ev in &self.def.events {
            if !is_identifier(&ev.name) {
                return Err(KernelError::BadIdentifier(ev.name.clone()));
            }
            if !names.insert(ev.name.as_str()) {
                return Err(KernelError::DuplicateEvent(ev.name.clone()));
            }
            if let Some(sys) = &ev.system {
                if self.partition.get(sys).is_none() {
                    return Err(KernelError::UnknownSystem(sys.clone()));
                }
            }
            let mut param_names = HashSet::new();
            for p in &ev.params {
                if !is_identifier(&p.name) {
                    return Err(KernelError::BadIdentifier(p.name.clone()));
                }
                if self.index.contains_key(&p.name) || !param_names.insert(p.name.as_str()) {
                    return Err(KernelError::ParamClash {
                        event: ev.name.clone(),
                        param: p.name.clone(),
                    });
                }
                if let Domain::Within(set) = &p.domain {
                    expect_sort(set, Sort::Set, u, &scope)?;
                }
            }
            let with_params = |n: &str| {
                ev.params
                    .iter()
                    .find(|p| p.name == n)
                    .map(|p| p.domain.sort())
                    .or_else(|| scope.sort_of(n))
            };
            expect_sort(&ev.guard, Sort::Bool, u, &with_params)?;
            let mut targets = HashSet::new();
            for a in &ev.actions {
                let Some(&i) = self.index.get(&a.target) else {
                    return Err(KernelError::UnknownVariable(a.target.clone()));
                };
                if !targets.insert(a.target.as_str()) {
                    return Err(KernelError::ConflictingAssignment {
                        event: ev.name.clone(),
                        var: a.target.clone(),
                    });
                }
                expect_sort(&a.value, self.def.variables[i].kind.sort(), u, &with_params)?;
            }
            if ev.convergent && self.variant_for(ev).is_none() {
                return Err(KernelError::MissingVariant(ev.name.clone()));
            }
        }
        if let Some(sel) = &self.def.selector {
            let i = *self
                .index
                .get(sel)
                .ok_or_else(|| KernelError::UnknownVariable(sel.clone()))?;
            let n = self.partition.systems().len() as u64;
            let ok = n > 0
                && self.def.variables[i].kind == VarKind::Nat { bound: Some(n - 1) }
                && self.partition.systems().iter().all(|s| !s.owns(sel));
            if !ok {
                return Err(KernelError::BadSelector(sel.clone()));
            }
        }
        Ok(())
    }

    /// Variant a convergent event must decrease: its owner's, else the machine's.
    pub fn variant_for(&self, event: &GuardedEvent) -> Option<&Expr> {
        match &event.system {
            Some(id) => self.partition.get(id).map(|s| &s.variant),
            None => self.def.variant.as_ref(),
        }
    }

    pub fn def(&self) -> &MachineDef {
        &self.def
    }

    pub fn into_def(self) -> MachineDef {
        self.def
    }

    pub fn name(&self) -> &str {
        &self.def.name
    }

    pub fn universe(&self) -> &Universe {
        &self.def.universe
    }

    pub fn variables(&self) -> &[VarDecl] {
        &self.def.variables
    }

    pub fn invariants(&self) -> &[Expr] {
        &self.def.invariants
    }

    pub fn events(&self) -> &[GuardedEvent] {
        &self.def.events
    }

    pub fn event(&self, name: &str) -> Option<&GuardedEvent> {
        self.def.events.iter().find(|e| e.name == name)
    }

    pub fn partition(&self) -> &SystemsPartition {
        &self.partition
    }

    pub fn system(&self, id: &str) -> Option<&SystemDef> {
        self.partition.get(id)
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn value(&self, v: &Valuation, name: &str) -> Option<Value> {
        self.var_index(name).map(|i| v.get(i))
    }

    pub fn selector_index(&self) -> Option<usize> {
        self.def.selector.as_deref().and_then(|s| self.var_index(s))
    }

    /// The active system according to the selector variable, if any.
    pub fn selected_system(&self, v: &Valuation) -> Option<&SystemDef> {
        let i = self.selector_index()?;
        let n = v.get(i).as_nat()? as usize;
        self.partition.systems().get(n)
    }

    /// Evaluation scope over one valuation of this machine.
    pub fn scope<'a>(&'a self, v: &'a Valuation) -> StateScope<'a> {
        StateScope {
            machine: self,
            valuation: v,
        }
    }

    /// Evaluation scope over one valuation, restricted to the variables `keep`
    /// accepts.
    pub fn restricted_scope<'a>(
        &'a self,
        v: &'a Valuation,
        keep: &'a dyn Fn(&str) -> bool,
    ) -> impl Scope + 'a {
        move |n: &str| if keep(n) { self.value(v, n) } else { None }
    }

    /// Checks that `expr` has `sort` over this machine's variables plus
    /// `extra` names, and references nothing else.
    pub fn check_sort(
        &self,
        expr: &Expr,
        sort: Sort,
        extra: &dyn SortScope,
    ) -> Result<(), KernelError> {
        let scope = |n: &str| extra.sort_of(n).or_else(|| VarSorts(self).sort_of(n));
        expect_sort(expr, sort, &self.def.universe, &scope)
    }
}

pub struct StateScope<'a> {
    machine: &'a Machine,
    valuation: &'a Valuation,
}

impl Scope for StateScope<'_> {
    fn lookup(&self, name: &str) -> Option<Value> {
        self.machine.value(self.valuation, name)
    }
}

struct VarSorts<'a>(&'a Machine);

impl SortScope for VarSorts<'_> {
    fn sort_of(&self, name: &str) -> Option<Sort> {
        self.0
            .var_index(name)
            .map(|i| self.0.def.variables[i].kind.sort())
    }
}

fn expect_sort(
    expr: &Expr,
    want: Sort,
    universe: &Universe,
    scope: &dyn SortScope,
) -> Result<(), KernelError> {
    let got = expr.sort(universe, scope)?;
    if got == want {
        Ok(())
    } else {
        Err(KernelError::SortError {
            expected: want,
            found: got,
            context: expr.to_string(),
        })
    }
}
