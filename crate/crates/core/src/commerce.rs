//! Cart-selection case study.
//!
//! A client selects the products of a purchase set `P` into a cart.
//! `Sys1` keeps one cart `C1` on one website; `Sys2` spreads the selection
//! over two carts `C2a` and `C2b` on two websites. The two-site relation
//! `carts ∈ SITES × PRODUCTS` is encoded as one set variable per site, so
//! `ran(carts)` becomes `C2a ∪ C2b` and "no product selected twice" becomes
//! `C2a ∩ C2b = ∅`.
//!
//! Machines:
//!
//! | name   | content                                                        |
//! |--------|----------------------------------------------------------------|
//! | `m1`   | abstract selection into one cart                               |
//! | `m11`  | `Sys1` alone                                                   |
//! | `m12`  | `Sys2` alone                                                   |
//! | `m13`  | both systems, the running one chosen at initialisation         |
//! | `m141` | `Sys1` substituted by `Sys2`, cold start                       |
//! | `m142` | `Sys1` substituted by `Sys2`, hot start with state recovery    |

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::kernel::expr::{and, atoms, not, var};
use crate::kernel::{
    Domain, Expr, GuardedEvent, KernelError, Machine, MachineDef, SystemDef, Universe, Valuation,
    Value, VarDecl, VarKind,
};
use crate::obligations::{EventMapping, RefinementLink};
use crate::substitution::{Policy, SubstitutionConfig, Trigger};
use crate::suite::Scenario;

/// Scenario names in registry order.
pub const SCENARIOS: [&str; 6] = ["m1", "m11", "m12", "m13", "m141", "m142"];

/// Largest supported product count; the hot switch event ranges over pairs
/// of subsets, so its binding count grows as `4^N`.
pub const MAX_PRODUCTS: usize = 16;

pub const SYS1: &str = "Sys1";
pub const SYS2: &str = "Sys2";
pub const DONE: &str = "selection_done";
pub const ACTIVE: &str = "active";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CommerceError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("unknown scenario `{0}` (expected one of m1, m11, m12, m13, m141, m142)")]
    UnknownScenario(String),
    #[error("mutant `{mutant}` does not apply to scenario `{scenario}`")]
    MutantNotApplicable { mutant: Mutant, scenario: String },
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Product universe and purchase set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommerceParams {
    pub products: usize,
    /// Defaults to every product.
    pub purchase: Option<Vec<String>>,
}

impl Default for CommerceParams {
    fn default() -> Self {
        CommerceParams {
            products: 5,
            purchase: None,
        }
    }
}

impl CommerceParams {
    pub fn with_products(products: usize) -> Self {
        CommerceParams {
            products,
            purchase: None,
        }
    }

    pub fn universe(&self) -> Result<Universe, CommerceError> {
        if self.products == 0 || self.products > MAX_PRODUCTS {
            return Err(CommerceError::InvalidParams(format!(
                "product count must be in 1..={MAX_PRODUCTS}, got {}",
                self.products
            )));
        }
        Ok(Universe::new(
            (1..=self.products).map(|i| format!("Prod{i}")),
        )?)
    }

    /// The purchase set as product names, in universe order.
    pub fn purchase_names(&self) -> Result<Vec<String>, CommerceError> {
        let u = self.universe()?;
        match &self.purchase {
            None => Ok(u.names().to_vec()),
            Some(names) => {
                let set = u
                    .set_of(names)
                    .map_err(|e| CommerceError::InvalidParams(e.to_string()))?;
                Ok(u.set_names(set).into_iter().map(str::to_string).collect())
            }
        }
    }

    fn purchase_expr(&self) -> Result<Expr, CommerceError> {
        Ok(atoms(&self.purchase_names()?))
    }
}

/// Seeded faults that a correct checker must catch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mutant {
    /// Select into `C2a` without requiring the product to be absent from `C2b`.
    DropDisjointnessGuard,
    /// The single-cart select may re-add a product already in the cart.
    NonDecreasingSelect,
    /// The horizontal invariant is replaced by `false`.
    HinvFalse,
}

impl Mutant {
    pub const ALL: [Mutant; 3] = [
        Mutant::DropDisjointnessGuard,
        Mutant::NonDecreasingSelect,
        Mutant::HinvFalse,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mutant::DropDisjointnessGuard => "drop-disjointness-guard",
            Mutant::NonDecreasingSelect => "non-decreasing-select",
            Mutant::HinvFalse => "hinv-false",
        }
    }

    /// Scenarios the mutant can be applied to.
    pub fn applies_to(self, scenario: &str) -> bool {
        match self {
            Mutant::DropDisjointnessGuard => matches!(scenario, "m12" | "m13" | "m141" | "m142"),
            Mutant::NonDecreasingSelect => {
                matches!(scenario, "m1" | "m11" | "m13" | "m141" | "m142")
            }
            Mutant::HinvFalse => scenario == "m142",
        }
    }
}

impl fmt::Display for Mutant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mutant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mutant::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                format!("unknown mutant `{s}` (expected drop-disjointness-guard, non-decreasing-select, or hinv-false)")
            })
    }
}

fn set_var(name: &str) -> VarDecl {
    VarDecl {
        name: name.to_string(),
        kind: VarKind::AtomSet,
    }
}

fn bool_var(name: &str) -> VarDecl {
    VarDecl {
        name: name.to_string(),
        kind: VarKind::Bool,
    }
}

fn empty() -> Expr {
    atoms::<&str>(&[])
}

/// `card(UNIVERSE) - card(cart)`: products still selectable.
fn remaining(cart: Expr) -> Expr {
    Expr::Universe.card().minus(cart.card())
}

/// The `Sys1` variant, `card(ValueElements) - card(val(C1))`.
pub fn sys1() -> SystemDef {
    SystemDef::new(SYS1, &["C1"], remaining(var("C1")))
}

/// The `Sys2` variant, `card(ValueElements) - card(val(C2a) ∪ val(C2b))`.
pub fn sys2() -> SystemDef {
    SystemDef::new(
        SYS2,
        &["C2a", "C2b"],
        remaining(var("C2a").union(var("C2b"))),
    )
}

/// The horizontal invariant `val(C1) = val(C2a) ∪ val(C2b)`.
pub fn horizontal_invariant() -> Expr {
    var("C1").equals(var("C2a").union(var("C2b")))
}

/// Selection of product `p` into `cart`; `also_absent` lists other carts
/// that must not already hold `p`.
fn select_event(
    name: &str,
    cart: &str,
    also_absent: &[&str],
    extra_guard: Vec<Expr>,
    purchase: &Expr,
) -> GuardedEvent {
    let mut guard = extra_guard;
    guard.push(var("p").member_of(purchase.clone()));
    guard.push(not(var("p").member_of(var(cart))));
    for other in also_absent {
        guard.push(not(var("p").member_of(var(other))));
    }
    guard.push(not(var(DONE)));
    GuardedEvent::new(name, and(guard))
        .param("p", Domain::Atoms)
        .assign(cart, var(cart).union(var("p").singleton()))
        .convergent()
}

fn finish_event(name: &str, union: Expr, extra_guard: Vec<Expr>, purchase: &Expr) -> GuardedEvent {
    let mut guard = extra_guard;
    guard.push(union.equals(purchase.clone()));
    guard.push(not(var(DONE)));
    GuardedEvent::new(name, and(guard)).assign(DONE, Expr::Bool(true))
}

fn cart_pair() -> Expr {
    var("C2a").union(var("C2b"))
}

fn is_active(index: u64) -> Expr {
    var(ACTIVE).equals(Expr::Nat(index))
}

fn init_values(variables: &[VarDecl], active: u64) -> Valuation {
    Valuation::new(
        variables
            .iter()
            .map(|d| match d.kind {
                VarKind::AtomSet => Value::Set(crate::kernel::AtomSet::EMPTY),
                VarKind::Bool => Value::Bool(false),
                VarKind::Nat { .. } => Value::Nat(active),
            })
            .collect(),
    )
}

fn drop_conjunct(event: &mut GuardedEvent, conjunct: &Expr) {
    if let Expr::And(terms) = &mut event.guard {
        terms.retain(|t| t != conjunct);
    }
}

fn apply_mutant(def: &mut MachineDef, mutant: Option<Mutant>) {
    match mutant {
        Some(Mutant::DropDisjointnessGuard) => {
            if let Some(e) = def.events.iter_mut().find(|e| e.name == "select_a") {
                drop_conjunct(e, &not(var("p").member_of(var("C2b"))));
            }
        }
        Some(Mutant::NonDecreasingSelect) => {
            for (name, cart) in [("select", "cart"), ("select", "C1"), ("select1", "C1")] {
                if let Some(e) = def.events.iter_mut().find(|e| e.name == name) {
                    drop_conjunct(e, &not(var("p").member_of(var(cart))));
                }
            }
        }
        Some(Mutant::HinvFalse) | None => {}
    }
}

/// Abstract selection: one cart, `select` and `finish`.
pub fn build_m1(params: &CommerceParams) -> Result<Machine, CommerceError> {
    build_m1_mutated(params, None)
}

fn build_m1_mutated(
    params: &CommerceParams,
    mutant: Option<Mutant>,
) -> Result<Machine, CommerceError> {
    let u = params.universe()?;
    let p = params.purchase_expr()?;
    let variables = vec![set_var("cart"), bool_var(DONE)];
    let mut def = MachineDef {
        name: "m1".into(),
        init: init_values(&variables, 0),
        universe: u,
        variables,
        invariants: vec![
            var("cart").subset_of(p.clone()),
            var(DONE).implies(var("cart").equals(p.clone())),
        ],
        variant: Some(remaining(var("cart"))),
        events: vec![
            select_event("select", "cart", &[], vec![], &p),
            finish_event("finish", var("cart"), vec![], &p),
        ],
        systems: vec![],
        selector: None,
    };
    apply_mutant(&mut def, mutant);
    Ok(Machine::new(def)?)
}

/// `Sys1` alone: one cart `C1` on one website.
pub fn build_m11(params: &CommerceParams) -> Result<(Machine, SystemDef), CommerceError> {
    Ok((build_m11_mutated(params, None)?, sys1()))
}

fn build_m11_mutated(
    params: &CommerceParams,
    mutant: Option<Mutant>,
) -> Result<Machine, CommerceError> {
    let u = params.universe()?;
    let p = params.purchase_expr()?;
    let variables = vec![set_var("C1"), bool_var(DONE)];
    let mut def = MachineDef {
        name: "m11".into(),
        init: init_values(&variables, 0),
        universe: u,
        variables,
        invariants: vec![
            var("C1").subset_of(p.clone()),
            var(DONE).implies(var("C1").equals(p.clone())),
        ],
        variant: None,
        events: vec![
            select_event("select", "C1", &[], vec![], &p).owned_by(SYS1),
            finish_event("finish", var("C1"), vec![], &p).owned_by(SYS1),
        ],
        systems: vec![sys1()],
        selector: None,
    };
    apply_mutant(&mut def, mutant);
    Ok(Machine::new(def)?)
}

/// `Sys2` alone: carts `C2a` and `C2b` on two websites, no failures.
pub fn build_m12(params: &CommerceParams) -> Result<(Machine, SystemDef), CommerceError> {
    Ok((build_m12_mutated(params, None)?, sys2()))
}

fn build_m12_mutated(
    params: &CommerceParams,
    mutant: Option<Mutant>,
) -> Result<Machine, CommerceError> {
    let u = params.universe()?;
    let p = params.purchase_expr()?;
    let variables = vec![set_var("C2a"), set_var("C2b"), bool_var(DONE)];
    let mut def = MachineDef {
        name: "m12".into(),
        init: init_values(&variables, 0),
        universe: u,
        variables,
        invariants: vec![
            var("C2a").subset_of(p.clone()),
            var("C2b").subset_of(p.clone()),
            var("C2a").inter(var("C2b")).equals(empty()),
            var(DONE).implies(cart_pair().equals(p.clone())),
        ],
        variant: None,
        events: vec![
            select_event("select_a", "C2a", &["C2b"], vec![], &p).owned_by(SYS2),
            select_event("select_b", "C2b", &["C2a"], vec![], &p).owned_by(SYS2),
            finish_event("finish", cart_pair(), vec![], &p).owned_by(SYS2),
        ],
        systems: vec![sys2()],
        selector: None,
    };
    apply_mutant(&mut def, mutant);
    Ok(Machine::new(def)?)
}

/// Which system a composed machine starts with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialSystem {
    Sys1,
    Sys2,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Composition {
    Choice(InitialSystem),
    Cold,
    Hot,
}

fn build_composed(
    params: &CommerceParams,
    composition: Composition,
    mutant: Option<Mutant>,
) -> Result<Machine, CommerceError> {
    let u = params.universe()?;
    let p = params.purchase_expr()?;
    let variables = vec![
        set_var("C1"),
        set_var("C2a"),
        set_var("C2b"),
        bool_var(DONE),
        VarDecl {
            name: ACTIVE.into(),
            kind: VarKind::Nat { bound: Some(1) },
        },
    ];
    let initial = match composition {
        Composition::Choice(InitialSystem::Sys2) => 1,
        _ => 0,
    };
    let name = match composition {
        Composition::Choice(_) => "m13",
        Composition::Cold => "m141",
        Composition::Hot => "m142",
    };

    let mut invariants = vec![
        var("C1").subset_of(p.clone()),
        var("C2a").subset_of(p.clone()),
        var("C2b").subset_of(p.clone()),
        var("C2a").inter(var("C2b")).equals(empty()),
        and(vec![var(DONE), is_active(0)]).implies(var("C1").equals(p.clone())),
        and(vec![var(DONE), is_active(1)]).implies(cart_pair().equals(p.clone())),
        // Sys2 stays in its initial state until it runs.
        is_active(0).implies(cart_pair().equals(empty())),
    ];
    match composition {
        Composition::Choice(_) => invariants.push(is_active(1).implies(var("C1").equals(empty()))),
        Composition::Hot => invariants.push(is_active(1).implies(var("C1").subset_of(cart_pair()))),
        Composition::Cold => {}
    }

    let mut events = vec![
        select_event("select1", "C1", &[], vec![is_active(0)], &p).owned_by(SYS1),
        finish_event("finish1", var("C1"), vec![is_active(0)], &p).owned_by(SYS1),
        select_event("select_a", "C2a", &["C2b"], vec![is_active(1)], &p).owned_by(SYS2),
        select_event("select_b", "C2b", &["C2a"], vec![is_active(1)], &p).owned_by(SYS2),
        finish_event("finish2", cart_pair(), vec![is_active(1)], &p).owned_by(SYS2),
    ];
    match composition {
        Composition::Choice(_) => {}
        Composition::Cold => events.push(
            GuardedEvent::new("switch", and(vec![is_active(0), not(var(DONE))]))
                .assign(ACTIVE, Expr::Nat(1))
                .assign("C2a", empty())
                .assign("C2b", empty()),
        ),
        Composition::Hot => {
            let hinv = if mutant == Some(Mutant::HinvFalse) {
                Expr::Bool(false)
            } else {
                horizontal_invariant()
            };
            let recovered = |n: &str| match n {
                "C2a" => Some(var("ra")),
                "C2b" => Some(var("rb")),
                _ => None,
            };
            let variant_match = sys1().variant.equals(sys2().variant.substitute(&recovered));
            events.push(
                GuardedEvent::new(
                    "switch",
                    and(vec![
                        is_active(0),
                        not(var(DONE)),
                        hinv.substitute(&recovered),
                        var("ra").inter(var("rb")).equals(empty()),
                        variant_match,
                    ]),
                )
                .param("ra", Domain::Subsets)
                .param("rb", Domain::Subsets)
                .assign(ACTIVE, Expr::Nat(1))
                .assign("C2a", var("ra"))
                .assign("C2b", var("rb")),
            );
        }
    }

    let mut def = MachineDef {
        name: name.into(),
        init: init_values(&variables, initial),
        universe: u,
        variables,
        invariants,
        variant: None,
        events,
        systems: vec![sys1(), sys2()],
        selector: Some(ACTIVE.into()),
    };
    apply_mutant(&mut def, mutant);
    Ok(Machine::new(def)?)
}

/// Both systems in one machine; the running one is fixed at initialisation.
pub fn build_m13(
    params: &CommerceParams,
    initial: InitialSystem,
) -> Result<Machine, CommerceError> {
    build_composed(params, Composition::Choice(initial), None)
}

/// Cold-start substitution of `Sys1` by `Sys2`.
pub fn build_m141(params: &CommerceParams) -> Result<(Machine, SubstitutionConfig), CommerceError> {
    let m = build_composed(params, Composition::Cold, None)?;
    Ok((m, cold_config()))
}

/// Hot-start substitution of `Sys1` by `Sys2` with state recovery.
pub fn build_m142(params: &CommerceParams) -> Result<(Machine, SubstitutionConfig), CommerceError> {
    let m = build_composed(params, Composition::Hot, None)?;
    Ok((m, hot_config(false)))
}

fn cold_config() -> SubstitutionConfig {
    SubstitutionConfig::new(sys1(), sys2(), None, Policy::Cold, Trigger::Manual)
}

fn hot_config(hinv_false: bool) -> SubstitutionConfig {
    let hinv = if hinv_false {
        Expr::Bool(false)
    } else {
        horizontal_invariant()
    };
    SubstitutionConfig::new(sys1(), sys2(), Some(hinv), Policy::Hot, Trigger::Manual)
}

fn link(
    abstract_machine: Machine,
    concrete: Machine,
    gluing: Expr,
    map: &[(&str, Option<&str>)],
) -> RefinementLink {
    RefinementLink {
        abstract_machine,
        concrete,
        gluing,
        event_map: map
            .iter()
            .map(|(c, a)| {
                let mapping = match a {
                    Some(a) => EventMapping::Refines(a.to_string()),
                    None => EventMapping::Stutter,
                };
                (c.to_string(), mapping)
            })
            .collect(),
    }
}

/// `m11` refines `m1` with gluing `cart = C1`.
pub fn m11_refines_m1(params: &CommerceParams) -> Result<RefinementLink, CommerceError> {
    Ok(link(
        build_m1(params)?,
        build_m11(params)?.0,
        var("cart").equals(var("C1")),
        &[("select", Some("select")), ("finish", Some("finish"))],
    ))
}

/// `m12` refines `m1` with gluing `cart = C2a ∪ C2b`.
pub fn m12_refines_m1(params: &CommerceParams) -> Result<RefinementLink, CommerceError> {
    m12_link(params, build_m12(params)?.0, cart_pair())
}

/// `m12` against `m1` with the too-weak gluing `cart = C2a`.
pub fn m12_refines_m1_site_a_only(
    params: &CommerceParams,
) -> Result<RefinementLink, CommerceError> {
    m12_link(params, build_m12(params)?.0, var("C2a"))
}

fn m12_link(
    params: &CommerceParams,
    concrete: Machine,
    glued_cart: Expr,
) -> Result<RefinementLink, CommerceError> {
    Ok(link(
        build_m1(params)?,
        concrete,
        var("cart").equals(glued_cart),
        &[
            ("select_a", Some("select")),
            ("select_b", Some("select")),
            ("finish", Some("finish")),
        ],
    ))
}

/// Gluing for composed machines: the abstract cart is the active system's cart.
fn composed_gluing() -> Expr {
    and(vec![
        is_active(0).implies(var("cart").equals(var("C1"))),
        is_active(1).implies(var("cart").equals(cart_pair())),
    ])
}

fn composed_link(
    params: &CommerceParams,
    concrete: Machine,
) -> Result<RefinementLink, CommerceError> {
    Ok(link(
        build_m1(params)?,
        concrete,
        composed_gluing(),
        &[
            ("select1", Some("select")),
            ("finish1", Some("finish")),
            ("select_a", Some("select")),
            ("select_b", Some("select")),
            ("finish2", Some("finish")),
            ("switch", None),
        ],
    ))
}

/// Builds the named scenario(s). `m13` yields one instance per initial system.
pub fn scenarios(
    name: &str,
    params: &CommerceParams,
    mutant: Option<Mutant>,
) -> Result<Vec<Scenario>, CommerceError> {
    if !SCENARIOS.contains(&name) {
        return Err(CommerceError::UnknownScenario(name.to_string()));
    }
    if let Some(m) = mutant {
        if !m.applies_to(name) {
            return Err(CommerceError::MutantNotApplicable {
                mutant: m,
                scenario: name.to_string(),
            });
        }
    }
    let with_link = |mut s: Scenario, link: RefinementLink| {
        s.refinement = Some(link);
        s
    };
    Ok(match name {
        "m1" => vec![Scenario::new(name, build_m1_mutated(params, mutant)?)],
        "m11" => {
            let m = build_m11_mutated(params, mutant)?;
            let l = link(
                build_m1(params)?,
                m.clone(),
                var("cart").equals(var("C1")),
                &[("select", Some("select")), ("finish", Some("finish"))],
            );
            vec![with_link(Scenario::new(name, m), l)]
        }
        "m12" => {
            let m = build_m12_mutated(params, mutant)?;
            let l = m12_link(params, m.clone(), cart_pair())?;
            vec![with_link(Scenario::new(name, m), l)]
        }
        "m13" => [InitialSystem::Sys1, InitialSystem::Sys2]
            .into_iter()
            .map(|init| {
                let m = build_composed(params, Composition::Choice(init), mutant)?;
                let l = composed_link(params, m.clone())?;
                let label = match init {
                    InitialSystem::Sys1 => "m13[Sys1]",
                    InitialSystem::Sys2 => "m13[Sys2]",
                };
                Ok(with_link(Scenario::new(label, m), l))
            })
            .collect::<Result<Vec<_>, CommerceError>>()?,
        "m141" => {
            let m = build_composed(params, Composition::Cold, mutant)?;
            let mut s = Scenario::new(name, m);
            s.substitution = Some(cold_config());
            vec![s]
        }
        "m142" => {
            let m = build_composed(params, Composition::Hot, mutant)?;
            let l = composed_link(params, m.clone())?;
            let mut s = with_link(Scenario::new(name, m), l);
            s.substitution = Some(hot_config(mutant == Some(Mutant::HinvFalse)));
            vec![s]
        }
        _ => unreachable!("checked against SCENARIOS"),
    })
}
