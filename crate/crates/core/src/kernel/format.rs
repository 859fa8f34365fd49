//! JSON machine-definition files.
//!
//! Parsing is strict: unknown fields anywhere in the document are rejected.
//! Expression trees are tagged objects such as
//! `{"op":"card","arg":{"var":"C1"}}`; see [`expr_from_json`] for the grammar.

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value as Json};
use thiserror::Error;

use super::expr::{BinOp, Expr, Quantifier};
use super::machine::{
    Assignment, GuardedEvent, Machine, MachineDef, Param, SystemDef, Valuation, VarDecl,
};
use super::value::{Domain, Universe, Value, VarKind};
use super::KernelError;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("malformed machine file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad expression at {path}: {reason}")]
    Expr { path: String, reason: String },
    #[error("bad init value for `{var}`: {reason}")]
    Init { var: String, reason: String },
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Source/target systems and horizontal invariant carried alongside a machine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubstitutionSection {
    pub source: String,
    pub target: String,
    pub hinv: Option<Expr>,
}

/// A parsed machine file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MachineFile {
    pub machine: Machine,
    pub substitution: Option<SubstitutionSection>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileRepr {
    name: String,
    universe: Vec<String>,
    variables: Vec<VarRepr>,
    init: Map<String, Json>,
    #[serde(default)]
    invariants: Vec<Json>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    variant: Option<Json>,
    #[serde(default)]
    events: Vec<EventRepr>,
    #[serde(default)]
    systems: Vec<SystemRepr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    selector: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    substitution: Option<SubstRepr>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VarRepr {
    name: String,
    kind: KindRepr,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bound: Option<u64>,
}

#[derive(Serialize, Deserialize, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum KindRepr {
    Nat,
    Bool,
    Atomset,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EventRepr {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    system: Option<String>,
    #[serde(default)]
    params: Vec<ParamRepr>,
    guard: Json,
    #[serde(default)]
    assignments: Vec<AssignRepr>,
    #[serde(default, skip_serializing_if = "is_false")]
    convergent: bool,
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamRepr {
    name: String,
    domain: Json,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AssignRepr {
    var: String,
    value: Json,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemRepr {
    id: String,
    sv: Vec<String>,
    variant: Json,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    checkpoint: Option<Json>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SubstRepr {
    source: String,
    target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hinv: Option<Json>,
}

/// Parses and validates a machine file.
pub fn parse_machine_file(text: &str) -> Result<MachineFile, FormatError> {
    let repr: FileRepr = serde_json::from_str(text)?;
    let universe = Universe::new(repr.universe)?;
    let variables: Vec<VarDecl> = repr
        .variables
        .into_iter()
        .map(|v| VarDecl {
            kind: match v.kind {
                KindRepr::Nat => VarKind::Nat { bound: v.bound },
                KindRepr::Bool => VarKind::Bool,
                KindRepr::Atomset => VarKind::AtomSet,
            },
            name: v.name,
        })
        .collect();

    let mut init = Vec::with_capacity(variables.len());
    for decl in &variables {
        let lit = repr.init.get(&decl.name).ok_or_else(|| FormatError::Init {
            var: decl.name.clone(),
            reason: "missing".into(),
        })?;
        init.push(literal_from_json(lit, decl, &universe)?);
    }
    if let Some(extra) = repr
        .init
        .keys()
        .find(|k| !variables.iter().any(|d| &d.name == *k))
    {
        return Err(FormatError::Init {
            var: extra.clone(),
            reason: "not a declared variable".into(),
        });
    }

    let invariants = repr
        .invariants
        .iter()
        .enumerate()
        .map(|(i, j)| expr_at(j, format!("invariants[{i}]")))
        .collect::<Result<Vec<_>, _>>()?;
    let variant = repr
        .variant
        .as_ref()
        .map(|j| expr_at(j, "variant".into()))
        .transpose()?;

    let mut events = Vec::with_capacity(repr.events.len());
    for (ei, e) in repr.events.into_iter().enumerate() {
        let here = format!("events[{ei}]");
        let params = e
            .params
            .iter()
            .enumerate()
            .map(|(pi, p)| {
                Ok(Param {
                    name: p.name.clone(),
                    domain: domain_from_json(&p.domain, &format!("{here}.params[{pi}].domain"))?,
                })
            })
            .collect::<Result<Vec<_>, FormatError>>()?;
        let actions = e
            .assignments
            .iter()
            .enumerate()
            .map(|(ai, a)| {
                Ok(Assignment {
                    target: a.var.clone(),
                    value: expr_at(&a.value, format!("{here}.assignments[{ai}].value"))?,
                })
            })
            .collect::<Result<Vec<_>, FormatError>>()?;
        events.push(GuardedEvent {
            name: e.name,
            system: e.system,
            params,
            guard: expr_at(&e.guard, format!("{here}.guard"))?,
            actions,
            convergent: e.convergent,
        });
    }

    let systems = repr
        .systems
        .into_iter()
        .enumerate()
        .map(|(si, s)| {
            Ok(SystemDef {
                variant: expr_at(&s.variant, format!("systems[{si}].variant"))?,
                checkpoint: s
                    .checkpoint
                    .as_ref()
                    .map(|j| expr_at(j, format!("systems[{si}].checkpoint")))
                    .transpose()?,
                id: s.id,
                sv: s.sv,
            })
        })
        .collect::<Result<Vec<_>, FormatError>>()?;

    let substitution = repr
        .substitution
        .map(|s| {
            Ok::<_, FormatError>(SubstitutionSection {
                hinv: s
                    .hinv
                    .as_ref()
                    .map(|j| expr_at(j, "substitution.hinv".into()))
                    .transpose()?,
                source: s.source,
                target: s.target,
            })
        })
        .transpose()?;

    let machine = Machine::new(MachineDef {
        name: repr.name,
        universe,
        variables,
        init: Valuation::new(init),
        invariants,
        variant,
        events,
        systems,
        selector: repr.selector,
    })?;
    Ok(MachineFile {
        machine,
        substitution,
    })
}

/// Serializes a machine (and optional substitution section) as pretty JSON.
pub fn machine_to_json(m: &Machine, substitution: Option<&SubstitutionSection>) -> String {
    let def = m.def();
    let repr = FileRepr {
        name: def.name.clone(),
        universe: def.universe.names().to_vec(),
        variables: def
            .variables
            .iter()
            .map(|d| {
                let (kind, bound) = match d.kind {
                    VarKind::Nat { bound } => (KindRepr::Nat, bound),
                    VarKind::Bool => (KindRepr::Bool, None),
                    VarKind::AtomSet => (KindRepr::Atomset, None),
                };
                VarRepr {
                    name: d.name.clone(),
                    kind,
                    bound,
                }
            })
            .collect(),
        init: def
            .variables
            .iter()
            .zip(def.init.values())
            .map(|(d, v)| (d.name.clone(), value_to_json(v, &def.universe)))
            .collect(),
        invariants: def.invariants.iter().map(expr_to_json).collect(),
        variant: def.variant.as_ref().map(expr_to_json),
        events: def
            .events
            .iter()
            .map(|e| EventRepr {
                name: e.name.clone(),
                system: e.system.clone(),
                params: e
                    .params
                    .iter()
                    .map(|p| ParamRepr {
                        name: p.name.clone(),
                        domain: domain_to_json(&p.domain),
                    })
                    .collect(),
                guard: expr_to_json(&e.guard),
                assignments: e
                    .actions
                    .iter()
                    .map(|a| AssignRepr {
                        var: a.target.clone(),
                        value: expr_to_json(&a.value),
                    })
                    .collect(),
                convergent: e.convergent,
            })
            .collect(),
        systems: def
            .systems
            .iter()
            .map(|s| SystemRepr {
                id: s.id.clone(),
                sv: s.sv.clone(),
                variant: expr_to_json(&s.variant),
                checkpoint: s.checkpoint.as_ref().map(expr_to_json),
            })
            .collect(),
        selector: def.selector.clone(),
        substitution: substitution.map(|s| SubstRepr {
            source: s.source.clone(),
            target: s.target.clone(),
            hinv: s.hinv.as_ref().map(expr_to_json),
        }),
    };
    let mut text = serde_json::to_string_pretty(&repr).expect("machine JSON serializes");
    text.push('\n');
    text
}

/// JSON literal for a value: numbers, booleans, atom names, or name arrays.
pub fn value_to_json(v: &Value, universe: &Universe) -> Json {
    match *v {
        Value::Bool(b) => json!(b),
        Value::Nat(n) => json!(n),
        Value::Atom(a) => json!(universe.name(a)),
        Value::Set(s) => json!(universe.set_names(s)),
    }
}

fn literal_from_json(j: &Json, decl: &VarDecl, universe: &Universe) -> Result<Value, FormatError> {
    let err = |reason: String| FormatError::Init {
        var: decl.name.clone(),
        reason,
    };
    let value = match (decl.kind, j) {
        (VarKind::Nat { .. }, Json::Number(n)) => Value::Nat(
            n.as_u64()
                .ok_or_else(|| err(format!("{n} is not a natural number")))?,
        ),
        (VarKind::Bool, Json::Bool(b)) => Value::Bool(*b),
        (VarKind::AtomSet, Json::Array(items)) => {
            let names = items
                .iter()
                .map(|i| {
                    i.as_str()
                        .ok_or_else(|| err("set members must be atom names".into()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Value::Set(universe.set_of(&names)?)
        }
        (kind, other) => return Err(err(format!("{other} does not fit kind {:?}", kind))),
    };
    Ok(value)
}

fn expr_at(j: &Json, path: String) -> Result<Expr, FormatError> {
    expr_from_json_inner(j, &path)
}

/// Parses an expression tree.
///
/// Grammar: `{"nat":n}`, `{"bool":b}`, `{"atom":name}`, `{"set":[names]}`,
/// `{"var":name}`, `{"op":"universe"}`, `{"op":"card"|"not"|"singleton","arg":e}`,
/// `{"op":<binary>,"lhs":e,"rhs":e}` for union, inter, diff, add, sub, eq,
/// le, lt, in, subset, implies, `{"op":"and"|"or","args":[e…]}`, and
/// `{"op":"forall"|"exists","var":name,"domain":d,"body":e}` where a domain is
/// `{"kind":"universe"|"bool"|"subsets"}`, `{"kind":"nat","max":n}`, or
/// `{"kind":"within","set":e}`.
pub fn expr_from_json(j: &Json) -> Result<Expr, FormatError> {
    expr_from_json_inner(j, "$")
}

fn expr_from_json_inner(j: &Json, path: &str) -> Result<Expr, FormatError> {
    let err = |reason: &str| FormatError::Expr {
        path: path.to_string(),
        reason: reason.to_string(),
    };
    let obj = j.as_object().ok_or_else(|| err("expected an object"))?;
    let keys: Vec<&str> = {
        let mut k: Vec<&str> = obj.keys().map(String::as_str).collect();
        k.sort_unstable();
        k
    };
    let only = |want: &[&str]| -> Result<(), FormatError> {
        let mut w = want.to_vec();
        w.sort_unstable();
        if keys == w {
            Ok(())
        } else {
            Err(err(&format!("expected fields {want:?}, found {keys:?}")))
        }
    };
    let sub = |key: &str| -> Result<Expr, FormatError> {
        expr_from_json_inner(&obj[key], &format!("{path}.{key}"))
    };
    let string = |key: &str| -> Result<String, FormatError> {
        obj[key]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| err(&format!("`{key}` must be a string")))
    };

    if obj.contains_key("nat") {
        only(&["nat"])?;
        return obj["nat"]
            .as_u64()
            .map(Expr::Nat)
            .ok_or_else(|| err("`nat` must be a natural number"));
    }
    if obj.contains_key("bool") {
        only(&["bool"])?;
        return obj["bool"]
            .as_bool()
            .map(Expr::Bool)
            .ok_or_else(|| err("`bool` must be a boolean"));
    }
    if obj.contains_key("atom") {
        only(&["atom"])?;
        return string("atom").map(Expr::Atom);
    }
    if obj.contains_key("var") && !obj.contains_key("op") {
        only(&["var"])?;
        return string("var").map(Expr::Var);
    }
    if obj.contains_key("set") {
        only(&["set"])?;
        let items = obj["set"]
            .as_array()
            .ok_or_else(|| err("`set` must be an array"))?;
        return items
            .iter()
            .map(|i| {
                i.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| err("set members must be strings"))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Expr::SetLit);
    }
    let op = obj
        .get("op")
        .and_then(Json::as_str)
        .ok_or_else(|| err("expected a literal, `var`, or `op`"))?;
    match op {
        "universe" => {
            only(&["op"])?;
            Ok(Expr::Universe)
        }
        "card" | "not" | "singleton" => {
            only(&["op", "arg"])?;
            let arg = Box::new(sub("arg")?);
            Ok(match op {
                "card" => Expr::Card(arg),
                "not" => Expr::Not(arg),
                _ => Expr::Singleton(arg),
            })
        }
        "and" | "or" => {
            only(&["op", "args"])?;
            let items = obj["args"]
                .as_array()
                .ok_or_else(|| err("`args` must be an array"))?;
            let args = items
                .iter()
                .enumerate()
                .map(|(i, a)| expr_from_json_inner(a, &format!("{path}.args[{i}]")))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(if op == "and" {
                Expr::And(args)
            } else {
                Expr::Or(args)
            })
        }
        "forall" | "exists" => {
            only(&["op", "var", "domain", "body"])?;
            Ok(Expr::Quant {
                quantifier: if op == "forall" {
                    Quantifier::Forall
                } else {
                    Quantifier::Exists
                },
                var: string("var")?,
                domain: domain_from_json(&obj["domain"], &format!("{path}.domain"))?,
                body: Box::new(sub("body")?),
            })
        }
        other => {
            let bin =
                BinOp::from_name(other).ok_or_else(|| err(&format!("unknown op `{other}`")))?;
            only(&["op", "lhs", "rhs"])?;
            Ok(Expr::Bin(bin, Box::new(sub("lhs")?), Box::new(sub("rhs")?)))
        }
    }
}

fn domain_from_json(j: &Json, path: &str) -> Result<Domain, FormatError> {
    let err = |reason: &str| FormatError::Expr {
        path: path.to_string(),
        reason: reason.to_string(),
    };
    let obj = j
        .as_object()
        .ok_or_else(|| err("domain must be an object"))?;
    let kind = obj
        .get("kind")
        .and_then(Json::as_str)
        .ok_or_else(|| err("domain needs a `kind`"))?;
    let expect_len = |n: usize| {
        if obj.len() == n {
            Ok(())
        } else {
            Err(err("unexpected fields in domain"))
        }
    };
    match kind {
        "universe" => expect_len(1).map(|_| Domain::Atoms),
        "bool" => expect_len(1).map(|_| Domain::Bool),
        "subsets" => expect_len(1).map(|_| Domain::Subsets),
        "nat" => {
            expect_len(2)?;
            let max = obj
                .get("max")
                .and_then(Json::as_u64)
                .ok_or_else(|| err("nat domain needs a natural `max`"))?;
            Ok(Domain::Nat { max })
        }
        "within" => {
            expect_len(2)?;
            let set = obj
                .get("set")
                .ok_or_else(|| err("within domain needs `set`"))?;
            Ok(Domain::Within(Box::new(expr_from_json_inner(
                set,
                &format!("{path}.set"),
            )?)))
        }
        other => Err(err(&format!("unknown domain kind `{other}`"))),
    }
}

pub fn domain_to_json(d: &Domain) -> Json {
    match d {
        Domain::Atoms => json!({"kind": "universe"}),
        Domain::Bool => json!({"kind": "bool"}),
        Domain::Subsets => json!({"kind": "subsets"}),
        Domain::Nat { max } => json!({"kind": "nat", "max": max}),
        Domain::Within(set) => json!({"kind": "within", "set": expr_to_json(set)}),
    }
}

pub fn expr_to_json(e: &Expr) -> Json {
    match e {
        Expr::Nat(n) => json!({ "nat": n }),
        Expr::Bool(b) => json!({ "bool": b }),
        Expr::Atom(a) => json!({ "atom": a }),
        Expr::SetLit(names) => json!({ "set": names }),
        Expr::Universe => json!({"op": "universe"}),
        Expr::Var(v) => json!({ "var": v }),
        Expr::Card(a) => json!({"op": "card", "arg": expr_to_json(a)}),
        Expr::Singleton(a) => json!({"op": "singleton", "arg": expr_to_json(a)}),
        Expr::Not(a) => json!({"op": "not", "arg": expr_to_json(a)}),
        Expr::Bin(op, a, b) => {
            json!({"op": op.name(), "lhs": expr_to_json(a), "rhs": expr_to_json(b)})
        }
        Expr::And(es) => {
            json!({"op": "and", "args": es.iter().map(expr_to_json).collect::<Vec<_>>()})
        }
        Expr::Or(es) => {
            json!({"op": "or", "args": es.iter().map(expr_to_json).collect::<Vec<_>>()})
        }
        Expr::Quant {
            quantifier,
            var,
            domain,
            body,
        } => json!({
            "op": match quantifier { Quantifier::Forall => "forall", Quantifier::Exists => "exists" },
            "var": var,
            "domain": domain_to_json(domain),
            "body": expr_to_json(body),
        }),
    }
}
