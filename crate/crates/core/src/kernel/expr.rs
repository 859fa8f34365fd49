//! Finite-domain expression trees: sort checking and evaluation.
//!
//! Natural subtraction floors at zero, so `a - b` with `b > a` yields `0`.
//! Card-difference variants such as `card(U) - card(C)` never reach the floor
//! because `C ⊆ U`; the floor only keeps the `nat` sort closed.

use std::collections::BTreeSet;
use std::fmt;

use super::value::{AtomSet, Domain, Sort, Universe, Value};
use super::KernelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Union,
    Inter,
    Diff,
    Add,
    Sub,
    Eq,
    Le,
    Lt,
    In,
    Subset,
    Implies,
}

impl BinOp {
    pub fn name(self) -> &'static str {
        match self {
            BinOp::Union => "union",
            BinOp::Inter => "inter",
            BinOp::Diff => "diff",
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Eq => "eq",
            BinOp::Le => "le",
            BinOp::Lt => "lt",
            BinOp::In => "in",
            BinOp::Subset => "subset",
            BinOp::Implies => "implies",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "union" => BinOp::Union,
            "inter" => BinOp::Inter,
            "diff" => BinOp::Diff,
            "add" => BinOp::Add,
            "sub" => BinOp::Sub,
            "eq" => BinOp::Eq,
            "le" => BinOp::Le,
            "lt" => BinOp::Lt,
            "in" => BinOp::In,
            "subset" => BinOp::Subset,
            "implies" => BinOp::Implies,
            _ => return None,
        })
    }

    fn symbol(self) -> &'static str {
        match self {
            BinOp::Union => "∪",
            BinOp::Inter => "∩",
            BinOp::Diff => "∖",
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Eq => "=",
            BinOp::Le => "≤",
            BinOp::Lt => "<",
            BinOp::In => "∈",
            BinOp::Subset => "⊆",
            BinOp::Implies => "⇒",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Quantifier {
    Forall,
    Exists,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Nat(u64),
    Bool(bool),
    Atom(String),
    SetLit(Vec<String>),
    Universe,
    Var(String),
    Card(Box<Expr>),
    Singleton(Box<Expr>),
    Not(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    And(Vec<Expr>),
    Or(Vec<Expr>),
    Quant {
        quantifier: Quantifier,
        var: String,
        domain: Domain,
        body: Box<Expr>,
    },
}

pub fn var(name: &str) -> Expr {
    Expr::Var(name.to_string())
}

pub fn nat(n: u64) -> Expr {
    Expr::Nat(n)
}

pub fn atoms<S: AsRef<str>>(names: &[S]) -> Expr {
    Expr::SetLit(names.iter().map(|s| s.as_ref().to_string()).collect())
}

pub fn and(terms: Vec<Expr>) -> Expr {
    Expr::And(terms)
}

pub fn or(terms: Vec<Expr>) -> Expr {
    Expr::Or(terms)
}

pub fn not(e: Expr) -> Expr {
    Expr::Not(Box::new(e))
}

pub fn forall(v: &str, domain: Domain, body: Expr) -> Expr {
    Expr::Quant {
        quantifier: Quantifier::Forall,
        var: v.to_string(),
        domain,
        body: Box::new(body),
    }
}

pub fn exists(v: &str, domain: Domain, body: Expr) -> Expr {
    Expr::Quant {
        quantifier: Quantifier::Exists,
        var: v.to_string(),
        domain,
        body: Box::new(body),
    }
}

impl Expr {
    fn bin(self, op: BinOp, rhs: Expr) -> Expr {
        Expr::Bin(op, Box::new(self), Box::new(rhs))
    }

    pub fn union(self, rhs: Expr) -> Expr {
        self.bin(BinOp::Union, rhs)
    }

    pub fn inter(self, rhs: Expr) -> Expr {
        self.bin(BinOp::Inter, rhs)
    }

    pub fn diff(self, rhs: Expr) -> Expr {
        self.bin(BinOp::Diff, rhs)
    }

    pub fn plus(self, rhs: Expr) -> Expr {
        self.bin(BinOp::Add, rhs)
    }

    pub fn minus(self, rhs: Expr) -> Expr {
        self.bin(BinOp::Sub, rhs)
    }

    pub fn equals(self, rhs: Expr) -> Expr {
        self.bin(BinOp::Eq, rhs)
    }

    pub fn at_most(self, rhs: Expr) -> Expr {
        self.bin(BinOp::Le, rhs)
    }

    pub fn less_than(self, rhs: Expr) -> Expr {
        self.bin(BinOp::Lt, rhs)
    }

    pub fn member_of(self, set: Expr) -> Expr {
        self.bin(BinOp::In, set)
    }

    pub fn subset_of(self, set: Expr) -> Expr {
        self.bin(BinOp::Subset, set)
    }

    pub fn implies(self, rhs: Expr) -> Expr {
        self.bin(BinOp::Implies, rhs)
    }

    pub fn card(self) -> Expr {
        Expr::Card(Box::new(self))
    }

    /// `{self}` for an atom-sorted expression.
    pub fn singleton(self) -> Expr {
        Expr::Singleton(Box::new(self))
    }

    /// Variables occurring free in the expression.
    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_free(&mut Vec::new(), &mut out);
        out
    }

    fn collect_free<'a>(&'a self, bound: &mut Vec<&'a str>, out: &mut BTreeSet<String>) {
        match self {
            Expr::Var(v) => {
                if !bound.contains(&v.as_str()) {
                    out.insert(v.clone());
                }
            }
            Expr::Nat(_) | Expr::Bool(_) | Expr::Atom(_) | Expr::SetLit(_) | Expr::Universe => {}
            Expr::Card(e) | Expr::Singleton(e) | Expr::Not(e) => e.collect_free(bound, out),
            Expr::Bin(_, a, b) => {
                a.collect_free(bound, out);
                b.collect_free(bound, out);
            }
            Expr::And(es) | Expr::Or(es) => es.iter().for_each(|e| e.collect_free(bound, out)),
            Expr::Quant {
                var, domain, body, ..
            } => {
                if let Domain::Within(set) = domain {
                    set.collect_free(bound, out);
                }
                bound.push(var);
                body.collect_free(bound, out);
                bound.pop();
            }
        }
    }

    /// Replaces free occurrences of variables by expressions.
    pub fn substitute(&self, map: &dyn Fn(&str) -> Option<Expr>) -> Expr {
        self.subst_inner(map, &mut Vec::new())
    }

    fn subst_inner<'a>(
        &'a self,
        map: &dyn Fn(&str) -> Option<Expr>,
        bound: &mut Vec<&'a str>,
    ) -> Expr {
        match self {
            Expr::Var(v) if !bound.contains(&v.as_str()) => map(v).unwrap_or_else(|| self.clone()),
            Expr::Var(_)
            | Expr::Nat(_)
            | Expr::Bool(_)
            | Expr::Atom(_)
            | Expr::SetLit(_)
            | Expr::Universe => self.clone(),
            Expr::Card(e) => Expr::Card(Box::new(e.subst_inner(map, bound))),
            Expr::Singleton(e) => Expr::Singleton(Box::new(e.subst_inner(map, bound))),
            Expr::Not(e) => Expr::Not(Box::new(e.subst_inner(map, bound))),
            Expr::Bin(op, a, b) => Expr::Bin(
                *op,
                Box::new(a.subst_inner(map, bound)),
                Box::new(b.subst_inner(map, bound)),
            ),
            Expr::And(es) => Expr::And(es.iter().map(|e| e.subst_inner(map, bound)).collect()),
            Expr::Or(es) => Expr::Or(es.iter().map(|e| e.subst_inner(map, bound)).collect()),
            Expr::Quant {
                quantifier,
                var,
                domain,
                body,
            } => {
                let domain = match domain {
                    Domain::Within(set) => Domain::Within(Box::new(set.subst_inner(map, bound))),
                    d => d.clone(),
                };
                bound.push(var);
                let body = body.subst_inner(map, bound);
                bound.pop();
                Expr::Quant {
                    quantifier: *quantifier,
                    var: var.clone(),
                    domain,
                    body: Box::new(body),
                }
            }
        }
    }

    /// Computes the sort of the expression, failing on any ill-sorted node.
    pub fn sort(&self, universe: &Universe, scope: &dyn SortScope) -> Result<Sort, KernelError> {
        let expect = |e: &Expr, want: Sort| -> Result<(), KernelError> {
            let got = e.sort(universe, scope)?;
            if got == want {
                Ok(())
            } else {
                Err(KernelError::SortError {
                    expected: want,
                    found: got,
                    context: e.to_string(),
                })
            }
        };
        match self {
            Expr::Nat(_) => Ok(Sort::Nat),
            Expr::Bool(_) => Ok(Sort::Bool),
            Expr::Atom(a) => universe.atom(a).map(|_| Sort::Atom),
            Expr::SetLit(names) => universe.set_of(names).map(|_| Sort::Set),
            Expr::Universe => Ok(Sort::Set),
            Expr::Var(v) => scope
                .sort_of(v)
                .ok_or_else(|| KernelError::UnboundVariable(v.clone())),
            Expr::Card(e) => expect(e, Sort::Set).map(|_| Sort::Nat),
            Expr::Singleton(e) => expect(e, Sort::Atom).map(|_| Sort::Set),
            Expr::Not(e) => expect(e, Sort::Bool).map(|_| Sort::Bool),
            Expr::Bin(op, a, b) => {
                let (lhs, rhs, out) = match op {
                    BinOp::Union | BinOp::Inter | BinOp::Diff => (Sort::Set, Sort::Set, Sort::Set),
                    BinOp::Add | BinOp::Sub => (Sort::Nat, Sort::Nat, Sort::Nat),
                    BinOp::Le | BinOp::Lt => (Sort::Nat, Sort::Nat, Sort::Bool),
                    BinOp::In => (Sort::Atom, Sort::Set, Sort::Bool),
                    BinOp::Subset => (Sort::Set, Sort::Set, Sort::Bool),
                    BinOp::Implies => (Sort::Bool, Sort::Bool, Sort::Bool),
                    BinOp::Eq => {
                        let s = a.sort(universe, scope)?;
                        expect(b, s)?;
                        return Ok(Sort::Bool);
                    }
                };
                expect(a, lhs)?;
                expect(b, rhs)?;
                Ok(out)
            }
            Expr::And(es) | Expr::Or(es) => {
                for e in es {
                    expect(e, Sort::Bool)?;
                }
                Ok(Sort::Bool)
            }
            Expr::Quant {
                var, domain, body, ..
            } => {
                if let Domain::Within(set) = domain {
                    expect(set, Sort::Set)?;
                }
                let inner = BoundSort {
                    name: var,
                    sort: domain.sort(),
                    parent: scope,
                };
                let s = body.sort(universe, &inner)?;
                if s != Sort::Bool {
                    return Err(KernelError::SortError {
                        expected: Sort::Bool,
                        found: s,
                        context: body.to_string(),
                    });
                }
                Ok(Sort::Bool)
            }
        }
    }

    /// Evaluates the expression. Total on well-sorted terms whose free
    /// variables are all bound by `scope`.
    pub fn eval(&self, universe: &Universe, scope: &dyn Scope) -> Result<Value, KernelError> {
        match self {
            Expr::Nat(n) => Ok(Value::Nat(*n)),
            Expr::Bool(b) => Ok(Value::Bool(*b)),
            Expr::Atom(a) => universe.atom(a).map(Value::Atom),
            Expr::SetLit(names) => universe.set_of(names).map(Value::Set),
            Expr::Universe => Ok(Value::Set(universe.full_set())),
            Expr::Var(v) => scope
                .lookup(v)
                .ok_or_else(|| KernelError::UnboundVariable(v.clone())),
            Expr::Card(e) => Ok(Value::Nat(set_of(e, universe, scope)?.len())),
            Expr::Singleton(e) => match e.eval(universe, scope)? {
                Value::Atom(a) => Ok(Value::Set(AtomSet::singleton(a))),
                other => Err(KernelError::SortError {
                    expected: Sort::Atom,
                    found: other.sort(),
                    context: e.to_string(),
                }),
            },
            Expr::Not(e) => Ok(Value::Bool(!bool_of(e, universe, scope)?)),
            Expr::Bin(BinOp::Implies, a, b) => {
                // Short-circuit so guards like `p ∈ S ⇒ …` stay cheap.
                if !bool_of(a, universe, scope)? {
                    return Ok(Value::Bool(true));
                }
                bool_of(b, universe, scope).map(Value::Bool)
            }
            Expr::Bin(op, a, b) => {
                let lhs = a.eval(universe, scope)?;
                let rhs = b.eval(universe, scope)?;
                apply_bin(*op, lhs, rhs, self)
            }
            Expr::And(es) => {
                for e in es {
                    if !bool_of(e, universe, scope)? {
                        return Ok(Value::Bool(false));
                    }
                }
                Ok(Value::Bool(true))
            }
            Expr::Or(es) => {
                for e in es {
                    if bool_of(e, universe, scope)? {
                        return Ok(Value::Bool(true));
                    }
                }
                Ok(Value::Bool(false))
            }
            Expr::Quant {
                quantifier,
                var,
                domain,
                body,
            } => {
                let want = *quantifier == Quantifier::Exists;
                for value in domain_values(domain, universe, scope)? {
                    let inner = Bound {
                        name: var,
                        value,
                        parent: scope,
                    };
                    if bool_of(body, universe, &inner)? == want {
                        return Ok(Value::Bool(want));
                    }
                }
                Ok(Value::Bool(!want))
            }
        }
    }

    /// Evaluates a boolean-sorted expression.
    pub fn holds(&self, universe: &Universe, scope: &dyn Scope) -> Result<bool, KernelError> {
        bool_of(self, universe, scope)
    }
}

fn apply_bin(op: BinOp, lhs: Value, rhs: Value, node: &Expr) -> Result<Value, KernelError> {
    use Value::*;
    Ok(match (op, lhs, rhs) {
        (BinOp::Union, Set(a), Set(b)) => Set(a.union(b)),
        (BinOp::Inter, Set(a), Set(b)) => Set(a.intersection(b)),
        (BinOp::Diff, Set(a), Set(b)) => Set(a.difference(b)),
        (BinOp::Add, Nat(a), Nat(b)) => Nat(a.saturating_add(b)),
        (BinOp::Sub, Nat(a), Nat(b)) => Nat(a.saturating_sub(b)),
        (BinOp::Le, Nat(a), Nat(b)) => Bool(a <= b),
        (BinOp::Lt, Nat(a), Nat(b)) => Bool(a < b),
        (BinOp::In, Atom(a), Set(s)) => Bool(s.contains(a)),
        (BinOp::Subset, Set(a), Set(b)) => Bool(a.is_subset(b)),
        (BinOp::Eq, a, b) if a.sort() == b.sort() => Bool(a == b),
        (_, a, b) => {
            return Err(KernelError::SortError {
                expected: a.sort(),
                found: b.sort(),
                context: node.to_string(),
            })
        }
    })
}

fn bool_of(e: &Expr, universe: &Universe, scope: &dyn Scope) -> Result<bool, KernelError> {
    match e.eval(universe, scope)? {
        Value::Bool(b) => Ok(b),
        other => Err(KernelError::SortError {
            expected: Sort::Bool,
            found: other.sort(),
            context: e.to_string(),
        }),
    }
}

fn set_of(e: &Expr, universe: &Universe, scope: &dyn Scope) -> Result<AtomSet, KernelError> {
    match e.eval(universe, scope)? {
        Value::Set(s) => Ok(s),
        other => Err(KernelError::SortError {
            expected: Sort::Set,
            found: other.sort(),
            context: e.to_string(),
        }),
    }
}

/// Values of a domain in ascending canonical order.
pub fn domain_values(
    domain: &Domain,
    universe: &Universe,
    scope: &dyn Scope,
) -> Result<Vec<Value>, KernelError> {
    Ok(match domain {
        Domain::Atoms => universe.full_set().iter().map(Value::Atom).collect(),
        Domain::Bool => vec![Value::Bool(false), Value::Bool(true)],
        Domain::Nat { max } => (0..=*max).map(Value::Nat).collect(),
        Domain::Subsets => AtomSet::all_subsets(universe.len())
            .into_iter()
            .map(Value::Set)
            .collect(),
        Domain::Within(set) => set_of(set, universe, scope)?
            .iter()
            .map(Value::Atom)
            .collect(),
    })
}

/// Variable lookup during evaluation.
pub trait Scope {
    fn lookup(&self, name: &str) -> Option<Value>;
}

/// Variable sorts during sort checking.
pub trait SortScope {
    fn sort_of(&self, name: &str) -> Option<Sort>;
}

impl<F: Fn(&str) -> Option<Value>> Scope for F {
    fn lookup(&self, name: &str) -> Option<Value> {
        self(name)
    }
}

impl<F: Fn(&str) -> Option<Sort>> SortScope for F {
    fn sort_of(&self, name: &str) -> Option<Sort> {
        self(name)
    }
}

/// A scope with no variables.
pub struct Empty;

impl Scope for Empty {
    fn lookup(&self, _: &str) -> Option<Value> {
        None
    }
}

impl SortScope for Empty {
    fn sort_of(&self, _: &str) -> Option<Sort> {
        None
    }
}

/// One binding layered over a parent scope.
pub struct Bound<'a> {
    pub name: &'a str,
    pub value: Value,
    pub parent: &'a dyn Scope,
}

impl Scope for Bound<'_> {
    fn lookup(&self, name: &str) -> Option<Value> {
        if name == self.name {
            Some(self.value)
        } else {
            self.parent.lookup(name)
        }
    }
}

/// A list of bindings (event parameters) layered over a parent scope.
pub struct Layered<'a> {
    pub locals: &'a [(String, Value)],
    pub parent: &'a dyn Scope,
}

impl Scope for Layered<'_> {
    fn lookup(&self, name: &str) -> Option<Value> {
        self.locals
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .or_else(|| self.parent.lookup(name))
    }
}

struct BoundSort<'a> {
    name: &'a str,
    sort: Sort,
    parent: &'a dyn SortScope,
}

impl SortScope for BoundSort<'_> {
    fn sort_of(&self, name: &str) -> Option<Sort> {
        if name == self.name {
            Some(self.sort)
        } else {
            self.parent.sort_of(name)
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Nat(n) => write!(f, "{n}"),
            Expr::Bool(b) => write!(f, "{b}"),
            Expr::Atom(a) => f.write_str(a),
            Expr::SetLit(names) if names.is_empty() => f.write_str("∅"),
            Expr::SetLit(names) => write!(f, "{{{}}}", names.join(",")),
            Expr::Universe => f.write_str("UNIVERSE"),
            Expr::Var(v) => f.write_str(v),
            Expr::Card(e) => write!(f, "card({e})"),
            Expr::Singleton(e) => write!(f, "{{{e}}}"),
            Expr::Not(e) => write!(f, "¬({e})"),
            Expr::Bin(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Expr::And(es) | Expr::Or(es) if es.is_empty() => {
                write!(f, "{}", matches!(self, Expr::And(_)))
            }
            Expr::And(es) | Expr::Or(es) => {
                let sep = if matches!(self, Expr::And(_)) {
                    " ∧ "
                } else {
                    " ∨ "
                };
                let parts: Vec<String> = es.iter().map(|e| e.to_string()).collect();
                write!(f, "({})", parts.join(sep))
            }
            Expr::Quant {
                quantifier,
                var,
                domain,
                body,
            } => {
                let q = match quantifier {
                    Quantifier::Forall => "∀",
                    Quantifier::Exists => "∃",
                };
                let d = match domain {
                    Domain::Atoms => "UNIVERSE".to_string(),
                    Domain::Bool => "BOOL".to_string(),
                    Domain::Nat { max } => format!("0..{max}"),
                    Domain::Subsets => "ℙ(UNIVERSE)".to_string(),
                    Domain::Within(s) => s.to_string(),
                };
                write!(f, "{q}{var} ∈ {d} · {body}")
            }
        }
    }
}
