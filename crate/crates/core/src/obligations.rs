//! Exhaustive proof-obligation checking over finite state spaces.
//!
//! Every obligation is discharged by enumerating reachable states. A failing
//! report always carries a counterexample whose `path` replays from the
//! initial state through [`kernel::step`](crate::kernel::step).

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;

use serde_json::{json, Map, Value as Json};
use thiserror::Error;

use crate::kernel::format::value_to_json;
use crate::kernel::{
    self, enabled, initialize, step, variant_value, violated_invariant, Binding, Expr,
    GuardedEvent, KernelError, Machine, Scope, Sort, SystemDef, Valuation, Value,
};

/// Default bound on explored states.
pub const DEFAULT_STATE_CAP: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ObligationError {
    #[error("state cap of {cap} exceeded with {frontier} states still queued")]
    StateCapExceeded { cap: usize, frontier: usize },
    #[error("gluing invariant is ill-sorted: {0}")]
    GluingIllSorted(String),
    #[error("bad refinement link: {0}")]
    BadLink(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ObligationKind {
    Invariants,
    Variant,
    Refinement,
    Switch,
}

impl ObligationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ObligationKind::Invariants => "invariants",
            ObligationKind::Variant => "variant",
            ObligationKind::Refinement => "refinement",
            ObligationKind::Switch => "switch",
        }
    }
}

impl fmt::Display for ObligationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One fired event.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Step {
    pub event: String,
    pub binding: Binding,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Counterexample {
    /// Steps from the initial state to `state`.
    pub path: Vec<Step>,
    pub state: Valuation,
    /// The offending transition out of `state`, if any.
    pub event: Option<String>,
    pub binding: Option<Binding>,
    pub post: Option<Valuation>,
    pub violated: String,
}

impl Counterexample {
    /// Replays `path` from the machine's initial state, returning the state
    /// reached and, when the counterexample names a kernel event, its post-state.
    pub fn replay(&self, m: &Machine) -> Result<(Valuation, Option<Valuation>), KernelError> {
        let mut v = m.def().init.clone();
        for s in &self.path {
            v = step(m, &v, &s.event, &s.binding)?;
        }
        let post = match (&self.event, &self.binding) {
            (Some(e), Some(b)) if m.event(e).is_some() => Some(step(m, &v, e, b)?),
            _ => None,
        };
        Ok((v, post))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObligationReport {
    pub kind: ObligationKind,
    pub machine: String,
    /// System, abstract machine, or substitution the obligation is about.
    pub subject: Option<String>,
    pub passed: bool,
    pub counterexample: Option<Counterexample>,
    pub states: usize,
}

impl ObligationReport {
    pub(crate) fn pass(
        kind: ObligationKind,
        m: &Machine,
        subject: Option<String>,
        states: usize,
    ) -> Self {
        ObligationReport {
            kind,
            machine: m.name().to_string(),
            subject,
            passed: true,
            counterexample: None,
            states,
        }
    }

    pub(crate) fn fail(
        kind: ObligationKind,
        m: &Machine,
        subject: Option<String>,
        states: usize,
        cx: Counterexample,
    ) -> Self {
        ObligationReport {
            kind,
            machine: m.name().to_string(),
            subject,
            passed: false,
            counterexample: Some(cx),
            states,
        }
    }

    /// One JSON record; `m` supplies names for rendering valuations.
    pub fn to_json(&self, m: &Machine) -> Json {
        let mut rec = Map::new();
        rec.insert("kind".into(), json!(self.kind.as_str()));
        rec.insert("machine".into(), json!(self.machine));
        if let Some(s) = &self.subject {
            rec.insert("subject".into(), json!(s));
        }
        rec.insert(
            "verdict".into(),
            json!(if self.passed { "pass" } else { "fail" }),
        );
        rec.insert("states".into(), json!(self.states));
        if let Some(cx) = &self.counterexample {
            let mut c = Map::new();
            c.insert(
                "path".into(),
                Json::Array(
                    cx.path
                        .iter()
                        .map(|s| json!({"event": s.event, "binding": binding_to_json(m, &s.binding)}))
                        .collect(),
                ),
            );
            c.insert("state".into(), valuation_to_json(m, &cx.state));
            if let Some(e) = &cx.event {
                c.insert("event".into(), json!(e));
            }
            if let Some(b) = &cx.binding {
                c.insert("binding".into(), binding_to_json(m, b));
            }
            if let Some(p) = &cx.post {
                c.insert("post".into(), valuation_to_json(m, p));
            }
            c.insert("violated".into(), json!(cx.violated));
            rec.insert("counterexample".into(), Json::Object(c));
        }
        Json::Object(rec)
    }
}

/// Valuation rendered as a JSON object in declaration order.
pub fn valuation_to_json(m: &Machine, v: &Valuation) -> Json {
    Json::Object(
        m.variables()
            .iter()
            .zip(v.values())
            .map(|(d, val)| (d.name.clone(), value_to_json(val, m.universe())))
            .collect(),
    )
}

pub fn binding_to_json(m: &Machine, b: &Binding) -> Json {
    Json::Object(
        b.iter()
            .map(|(n, v)| (n.clone(), value_to_json(v, m.universe())))
            .collect(),
    )
}

/// Breadth-first state graph with parent links for counterexample paths.
pub(crate) struct StateGraph {
    pub states: Vec<Valuation>,
    parent: Vec<Option<(usize, Step)>>,
}

impl StateGraph {
    pub fn path_to(&self, mut i: usize) -> Vec<Step> {
        let mut path = Vec::new();
        while let Some((p, s)) = &self.parent[i] {
            path.push(s.clone());
            i = *p;
        }
        path.reverse();
        path
    }

    pub fn parent(&self, i: usize) -> Option<&(usize, Step)> {
        self.parent[i].as_ref()
    }
}

/// Explores from `init`, not expanding states for which `stop` holds.
pub(crate) fn explore(
    m: &Machine,
    init: Valuation,
    cap: usize,
    stop: &dyn Fn(&Valuation) -> Result<bool, KernelError>,
) -> Result<StateGraph, ObligationError> {
    let mut graph = StateGraph {
        states: vec![init.clone()],
        parent: vec![None],
    };
    let mut seen: HashMap<Valuation, usize> = HashMap::from([(init, 0)]);
    let mut queue = VecDeque::from([0usize]);
    while let Some(i) = queue.pop_front() {
        let v = graph.states[i].clone();
        if stop(&v)? {
            continue;
        }
        for (event, binding) in enabled(m, &v)? {
            let next = step(m, &v, &event, &binding)?;
            if seen.contains_key(&next) {
                continue;
            }
            if graph.states.len() >= cap {
                return Err(ObligationError::StateCapExceeded {
                    cap,
                    frontier: queue.len() + 1,
                });
            }
            let j = graph.states.len();
            seen.insert(next.clone(), j);
            graph.states.push(next);
            graph.parent.push(Some((i, Step { event, binding })));
            queue.push_back(j);
        }
    }
    Ok(graph)
}

/// All states reachable from the initial valuation, sorted canonically.
pub fn reachable(m: &Machine, cap: usize) -> Result<BTreeSet<Valuation>, ObligationError> {
    let init = initialize(m)?;
    let graph = explore(m, init, cap, &|_| Ok(false))?;
    Ok(graph.states.into_iter().collect())
}

/// Every reachable state satisfies every invariant.
pub fn check_invariants(m: &Machine, cap: usize) -> Result<ObligationReport, ObligationError> {
    const KIND: ObligationKind = ObligationKind::Invariants;
    let init = m.def().init.clone();
    if let Some(idx) = violated_invariant(m, &init)? {
        let cx = Counterexample {
            path: Vec::new(),
            state: init,
            event: None,
            binding: None,
            post: None,
            violated: format!("invariant #{idx}: {}", m.invariants()[idx]),
        };
        return Ok(ObligationReport::fail(KIND, m, None, 1, cx));
    }
    let violates = |v: &Valuation| violated_invariant(m, v).map(|r| r.is_some());
    let graph = explore(m, init, cap, &violates)?;
    for (i, v) in graph.states.iter().enumerate() {
        if let Some(idx) = violated_invariant(m, v)? {
            let (p, s) = graph.parent(i).expect("initial state already checked");
            let cx = Counterexample {
                path: graph.path_to(*p),
                state: graph.states[*p].clone(),
                event: Some(s.event.clone()),
                binding: Some(s.binding.clone()),
                post: Some(v.clone()),
                violated: format!("invariant #{idx}: {}", m.invariants()[idx]),
            };
            return Ok(ObligationReport::fail(
                KIND,
                m,
                None,
                graph.states.len(),
                cx,
            ));
        }
    }
    Ok(ObligationReport::pass(KIND, m, None, graph.states.len()))
}

/// The machine-level variant as a pseudo-system over all variables, if declared.
pub fn machine_variant(m: &Machine) -> Option<SystemDef> {
    m.def().variant.as_ref().map(|variant| SystemDef {
        id: m.name().to_string(),
        sv: m.variables().iter().map(|d| d.name.clone()).collect(),
        variant: variant.clone(),
        checkpoint: None,
    })
}

fn decreases_variant_of(m: &Machine, ev: &GuardedEvent, s: &SystemDef) -> bool {
    ev.convergent
        && match &ev.system {
            Some(owner) => owner == &s.id,
            None => m.system(&s.id).is_none(),
        }
}

/// Every convergent event of `s` strictly decreases its variant.
///
/// Convergent events owned by `s` are checked against `s.variant`; passing the
/// pseudo-system from [`machine_variant`] checks the unowned ones. Variants are
/// naturals, so non-negativity holds by construction.
pub fn check_variant(
    m: &Machine,
    s: &SystemDef,
    cap: usize,
) -> Result<ObligationReport, ObligationError> {
    const KIND: ObligationKind = ObligationKind::Variant;
    let subject = Some(s.id.clone());
    let convergent: Vec<&str> = m
        .events()
        .iter()
        .filter(|e| decreases_variant_of(m, e, s))
        .map(|e| e.name.as_str())
        .collect();
    if convergent.is_empty() {
        return Ok(ObligationReport::pass(KIND, m, subject, 0));
    }
    let init = initialize(m)?;
    let graph = explore(m, init, cap, &|_| Ok(false))?;
    for (i, v) in graph.states.iter().enumerate() {
        let before = variant_value(m, s, v)?;
        for (event, binding) in enabled(m, v)? {
            if !convergent.contains(&event.as_str()) {
                continue;
            }
            let post = step(m, v, &event, &binding)?;
            let after = variant_value(m, s, &post)?;
            if after >= before {
                let cx = Counterexample {
                    path: graph.path_to(i),
                    state: v.clone(),
                    violated: format!(
                        "variant of {} not decreased by `{event}`: {before} -> {after}",
                        s.id
                    ),
                    event: Some(event),
                    binding: Some(binding),
                    post: Some(post),
                };
                return Ok(ObligationReport::fail(
                    KIND,
                    m,
                    subject,
                    graph.states.len(),
                    cx,
                ));
            }
        }
    }
    Ok(ObligationReport::pass(KIND, m, subject, graph.states.len()))
}

/// How a concrete event relates to the abstract machine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventMapping {
    Refines(String),
    Stutter,
}

/// An abstract machine, a concrete one, and the predicate gluing their states.
///
/// Variables sharing a name in both machines are the same variable: the
/// gluing implicitly requires their values to be equal.
#[derive(Debug, Clone)]
pub struct RefinementLink {
    pub abstract_machine: Machine,
    pub concrete: Machine,
    pub gluing: Expr,
    pub event_map: Vec<(String, EventMapping)>,
}

impl RefinementLink {
    fn validate(&self) -> Result<(), ObligationError> {
        let (a, c) = (&self.abstract_machine, &self.concrete);
        if a.universe() != c.universe() {
            return Err(ObligationError::GluingIllSorted(
                "abstract and concrete universes differ".into(),
            ));
        }
        for d in c.variables() {
            if let Some(i) = a.var_index(&d.name) {
                if a.variables()[i].kind.sort() != d.kind.sort() {
                    return Err(ObligationError::GluingIllSorted(format!(
                        "shared variable `{}` has different sorts",
                        d.name
                    )));
                }
            }
        }
        let abstract_sorts = |n: &str| a.var_index(n).map(|i| a.variables()[i].kind.sort());
        c.check_sort(&self.gluing, Sort::Bool, &abstract_sorts)
            .map_err(|e| ObligationError::GluingIllSorted(e.to_string()))?;
        for ev in c.events() {
            match self.mapping(&ev.name) {
                None => {
                    return Err(ObligationError::BadLink(format!(
                        "concrete event `{}` is not mapped",
                        ev.name
                    )))
                }
                Some(EventMapping::Refines(ae)) if a.event(ae).is_none() => {
                    return Err(ObligationError::BadLink(format!(
                        "abstract event `{ae}` does not exist"
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn mapping(&self, concrete_event: &str) -> Option<&EventMapping> {
        self.event_map
            .iter()
            .find(|(c, _)| c == concrete_event)
            .map(|(_, m)| m)
    }

    pub fn glued(&self, va: &Valuation, vc: &Valuation) -> Result<bool, KernelError> {
        let (a, c) = (&self.abstract_machine, &self.concrete);
        for (i, d) in c.variables().iter().enumerate() {
            if let Some(j) = a.var_index(&d.name) {
                if va.get(j) != vc.get(i) {
                    return Ok(false);
                }
            }
        }
        let scope = GluedScope { link: self, va, vc };
        self.gluing.holds(c.universe(), &scope)
    }
}

struct GluedScope<'a> {
    link: &'a RefinementLink,
    va: &'a Valuation,
    vc: &'a Valuation,
}

impl Scope for GluedScope<'_> {
    fn lookup(&self, name: &str) -> Option<Value> {
        self.link
            .concrete
            .value(self.vc, name)
            .or_else(|| self.link.abstract_machine.value(self.va, name))
    }
}

/// Forward simulation over glued reachable pairs.
pub fn check_refinement(
    link: &RefinementLink,
    cap: usize,
) -> Result<ObligationReport, ObligationError> {
    const KIND: ObligationKind = ObligationKind::Refinement;
    link.validate()?;
    let (a, c) = (&link.abstract_machine, &link.concrete);
    let subject = Some(a.name().to_string());
    let va0 = initialize(a)?;
    let vc0 = initialize(c)?;
    if !link.glued(&va0, &vc0)? {
        let cx = Counterexample {
            path: Vec::new(),
            state: vc0,
            event: None,
            binding: None,
            post: None,
            violated: format!("initial states are not glued by {}", link.gluing),
        };
        return Ok(ObligationReport::fail(KIND, c, subject, 1, cx));
    }

    type Pair = (Valuation, Valuation);
    let mut pairs: Vec<Pair> = vec![(va0, vc0)];
    let mut parent: Vec<Option<(usize, Step)>> = vec![None];
    let mut seen: HashMap<Pair, usize> = HashMap::from([(pairs[0].clone(), 0)]);
    let mut queue = VecDeque::from([0usize]);
    let path_to = |parent: &[Option<(usize, Step)>], mut i: usize| {
        let mut path = Vec::new();
        while let Some((p, s)) = &parent[i] {
            path.push(s.clone());
            i = *p;
        }
        path.reverse();
        path
    };

    while let Some(i) = queue.pop_front() {
        let (va, vc) = pairs[i].clone();
        for (event, binding) in enabled(c, &vc)? {
            let vc_next = step(c, &vc, &event, &binding)?;
            let mut matches = Vec::new();
            let missing = match link.mapping(&event).expect("validated") {
                EventMapping::Stutter => {
                    if link.glued(&va, &vc_next)? {
                        matches.push(va.clone());
                        None
                    } else {
                        Some(format!(
                            "stuttering `{event}` breaks gluing {}",
                            link.gluing
                        ))
                    }
                }
                EventMapping::Refines(ae) => {
                    let aev = a.event(ae).expect("validated");
                    for ab in kernel::bindings(a, aev, &va)? {
                        let va_next = match step(a, &va, ae, &ab) {
                            Ok(next) => next,
                            Err(KernelError::GuardFalse(_)) => continue,
                            Err(e) => return Err(e.into()),
                        };
                        if link.glued(&va_next, &vc_next)? && !matches.contains(&va_next) {
                            matches.push(va_next);
                        }
                    }
                    matches.is_empty().then(|| {
                        format!(
                            "no `{ae}` step of {} re-establishes gluing {}",
                            a.name(),
                            link.gluing
                        )
                    })
                }
            };
            if let Some(violated) = missing {
                let cx = Counterexample {
                    path: path_to(&parent, i),
                    state: vc,
                    event: Some(event),
                    binding: Some(binding),
                    post: Some(vc_next),
                    violated,
                };
                return Ok(ObligationReport::fail(KIND, c, subject, pairs.len(), cx));
            }
            for va_next in matches {
                let pair = (va_next, vc_next.clone());
                if seen.contains_key(&pair) {
                    continue;
                }
                if pairs.len() >= cap {
                    return Err(ObligationError::StateCapExceeded {
                        cap,
                        frontier: queue.len() + 1,
                    });
                }
                let j = pairs.len();
                seen.insert(pair.clone(), j);
                pairs.push(pair);
                parent.push(Some((
                    i,
                    Step {
                        event: event.clone(),
                        binding: binding.clone(),
                    },
                )));
                queue.push_back(j);
            }
        }
    }
    Ok(ObligationReport::pass(KIND, c, subject, pairs.len()))
}
