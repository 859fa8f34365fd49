//! The switch event: replacing a failed source system by a target system.
//!
//! * Cold: target variables return to their initial values.
//! * Hot: target variables are recovered so that the horizontal invariant
//!   holds against the frozen source state, both variants agree, and every
//!   machine invariant still holds. Among all such target states the least in
//!   canonical order is chosen.
//! * Warm: as hot, then rounded back to the nearest state accepted by the
//!   target's checkpoint predicate. Without a checkpoint, warm equals hot.
//!
//! Substitution is one-way: once the target is active the source is never
//! scheduled again.

mod scenario;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::kernel::{
    enabled, initialize, variant_value, violated_invariant, CompoundState, Expr, KernelError,
    Machine, Sort, SystemDef, Valuation, Value,
};
use crate::obligations::{
    explore, Counterexample, ObligationError, ObligationKind, ObligationReport,
};

pub use scenario::{run_scenario, Driver, Trace, TraceRecord};

/// Largest target state space recovery will enumerate.
pub const MAX_RECOVERY_CANDIDATES: u64 = 1 << 24;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SubstitutionError {
    #[error("invalid substitution config: {0}")]
    Invalid(String),
    #[error("expected active system `{expected}`, found `{found}`")]
    WrongActiveSystem { expected: String, found: String },
    #[error("unrecoverable: {0}")]
    Unrecoverable(RecoveryFailure),
    #[error("registered recovery function rejected: {0}")]
    RecoveryRejected(String),
    #[error("switch breaks invariant #{index}: {predicate}")]
    SwitchBreaksInvariant { index: usize, predicate: String },
    #[error("run did not quiesce within {0} steps")]
    MaxStepsExceeded(usize),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Why no target state could be recovered: how many of the enumerated
/// candidates failed each constraint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecoveryFailure {
    pub candidates: u64,
    pub failed_hinv: u64,
    pub failed_variant: u64,
    pub failed_invariants: u64,
    pub failed_checkpoint: u64,
}

impl fmt::Display for RecoveryFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "none of {} candidates satisfies all constraints (horizontal invariant failed {}, variant match failed {}, machine invariants failed {}",
            self.candidates, self.failed_hinv, self.failed_variant, self.failed_invariants
        )?;
        if self.failed_checkpoint > 0 {
            write!(f, ", checkpoint failed {}", self.failed_checkpoint)?;
        }
        f.write_str(")")
    }
}

/// Predicate linking source and target variables at the switch point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HorizontalInvariant(pub Expr);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Policy {
    Cold,
    Warm,
    Hot,
}

impl Policy {
    pub fn as_str(self) -> &'static str {
        match self {
            Policy::Cold => "cold",
            Policy::Warm => "warm",
            Policy::Hot => "hot",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cold" => Ok(Policy::Cold),
            "warm" => Ok(Policy::Warm),
            "hot" => Ok(Policy::Hot),
            other => Err(format!(
                "unknown policy `{other}` (expected cold, warm, or hot)"
            )),
        }
    }
}

/// When the source system fails.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Trigger {
    /// After the source has executed this many events.
    AtStep(usize),
    /// At the first state where this predicate over source variables holds.
    WhenPred(Expr),
    /// Never fired by a scenario run; only explicit [`switch`] calls.
    Manual,
}

/// User-supplied recovery: maps the pre-switch valuation to target values,
/// one per variable of `target.sv` in the order listed there.
pub type RecoveryFn = Arc<dyn Fn(&Machine, &Valuation) -> Vec<Value> + Send + Sync>;

#[derive(Clone)]
pub struct SubstitutionConfig {
    pub source: SystemDef,
    pub target: SystemDef,
    pub hinv: Option<HorizontalInvariant>,
    pub policy: Policy,
    pub trigger: Trigger,
    pub recovery: Option<RecoveryFn>,
}

impl fmt::Debug for SubstitutionConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SubstitutionConfig")
            .field("source", &self.source.id)
            .field("target", &self.target.id)
            .field("hinv", &self.hinv)
            .field("policy", &self.policy)
            .field("trigger", &self.trigger)
            .field("recovery", &self.recovery.as_ref().map(|_| "<fn>"))
            .finish()
    }
}

impl SubstitutionConfig {
    pub fn new(
        source: SystemDef,
        target: SystemDef,
        hinv: Option<Expr>,
        policy: Policy,
        trigger: Trigger,
    ) -> Self {
        SubstitutionConfig {
            source,
            target,
            hinv: hinv.map(HorizontalInvariant),
            policy,
            trigger,
            recovery: None,
        }
    }

    /// Label used in reports, e.g. `Sys1->Sys2/hot`.
    pub fn label(&self) -> String {
        format!("{}->{}/{}", self.source.id, self.target.id, self.policy)
    }

    pub fn validate(&self, m: &Machine) -> Result<(), SubstitutionError> {
        let invalid = |s: String| Err(SubstitutionError::Invalid(s));
        if self.source.id == self.target.id {
            return invalid("source and target are the same system".into());
        }
        for s in [&self.source, &self.target] {
            match m.system(&s.id) {
                Some(declared) if declared == s => {}
                Some(_) => {
                    return invalid(format!(
                        "system `{}` differs from the machine's declaration",
                        s.id
                    ))
                }
                None => {
                    return invalid(format!(
                        "system `{}` is not in the machine's partition",
                        s.id
                    ))
                }
            }
        }
        let linked = |n: &str| self.source.owns(n) || self.target.owns(n);
        match (&self.hinv, self.policy) {
            (None, Policy::Warm | Policy::Hot) => {
                return invalid(format!(
                    "{} start requires a horizontal invariant",
                    self.policy
                ))
            }
            (Some(h), _) => {
                if let Some(v) = h.0.free_vars().into_iter().find(|v| !linked(v)) {
                    return invalid(format!(
                        "horizontal invariant mentions `{v}` outside both systems"
                    ));
                }
                m.check_sort(&h.0, Sort::Bool, &|_: &str| None::<Sort>)?;
            }
            (None, Policy::Cold) => {}
        }
        if let Trigger::WhenPred(p) = &self.trigger {
            if let Some(v) = p.free_vars().into_iter().find(|v| !self.source.owns(v)) {
                return invalid(format!(
                    "trigger mentions `{v}`, which is not a source variable"
                ));
            }
            m.check_sort(p, Sort::Bool, &|_: &str| None::<Sort>)?;
        }
        Ok(())
    }
}

/// Whether both systems' variants agree on their respective valuations.
pub fn variant_match(
    m: &Machine,
    source: &SystemDef,
    vs: &Valuation,
    target: &SystemDef,
    vt: &Valuation,
) -> Result<bool, KernelError> {
    Ok(variant_value(m, source, vs)? == variant_value(m, target, vt)?)
}

/// Evaluates the horizontal invariant over source values from `pre` and
/// target values from `post`.
pub fn hinv_holds(
    m: &Machine,
    cfg: &SubstitutionConfig,
    pre: &Valuation,
    post: &Valuation,
) -> Result<bool, KernelError> {
    let Some(h) = &cfg.hinv else {
        return Ok(true);
    };
    let scope = |n: &str| {
        if cfg.source.owns(n) {
            m.value(pre, n)
        } else if cfg.target.owns(n) {
            m.value(post, n)
        } else {
            None
        }
    };
    h.0.holds(m.universe(), &scope)
}

/// Indices of target variables in machine declaration order.
fn target_indices(m: &Machine, target: &SystemDef) -> Result<Vec<usize>, KernelError> {
    let mut idx = target
        .sv
        .iter()
        .map(|n| {
            m.var_index(n)
                .ok_or_else(|| KernelError::UnknownVariable(n.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    idx.sort_unstable();
    Ok(idx)
}

/// `current` with the selector (if any) pointing at `target`.
fn activate(m: &Machine, target: &SystemDef, current: &Valuation) -> Valuation {
    let mut v = current.clone();
    if let (Some(sel), Some(pos)) = (m.selector_index(), m.partition().position(&target.id)) {
        v.set(sel, Value::Nat(pos as u64));
    }
    v
}

/// Every candidate post-switch valuation, in ascending canonical order: all
/// combinations of target-variable values, everything else taken from `base`.
pub fn recovery_candidates(
    m: &Machine,
    target: &SystemDef,
    base: &Valuation,
) -> Result<Vec<Valuation>, SubstitutionError> {
    let idx = target_indices(m, target)?;
    let domains = idx
        .iter()
        .map(|&i| m.variables()[i].kind.values(m.universe()))
        .collect::<Result<Vec<_>, _>>()?;
    let total = domains
        .iter()
        .try_fold(1u64, |acc, d| acc.checked_mul(d.len() as u64))
        .filter(|&t| t <= MAX_RECOVERY_CANDIDATES)
        .ok_or_else(|| {
            SubstitutionError::Invalid("target state space too large to enumerate".into())
        })?;
    let mut out = Vec::with_capacity(total as usize);
    let mut digits = vec![0usize; idx.len()];
    loop {
        let mut v = base.clone();
        for (k, &i) in idx.iter().enumerate() {
            v.set(i, domains[k][digits[k]]);
        }
        out.push(v);
        // Odometer, least significant digit last.
        let mut k = idx.len();
        loop {
            if k == 0 {
                return Ok(out);
            }
            k -= 1;
            digits[k] += 1;
            if digits[k] < domains[k].len() {
                break;
            }
            digits[k] = 0;
        }
    }
}

enum Verdict {
    Ok,
    Hinv,
    Variant,
    Invariant,
}

fn judge(
    m: &Machine,
    cfg: &SubstitutionConfig,
    pre: &Valuation,
    source_variant: u64,
    candidate: &Valuation,
) -> Result<Verdict, KernelError> {
    if !hinv_holds(m, cfg, pre, candidate)? {
        return Ok(Verdict::Hinv);
    }
    if variant_value(m, &cfg.target, candidate)? != source_variant {
        return Ok(Verdict::Variant);
    }
    if violated_invariant(m, candidate)?.is_some() {
        return Ok(Verdict::Invariant);
    }
    Ok(Verdict::Ok)
}

/// Recovers a target state for a warm or hot switch.
///
/// Returns the full post-switch valuation: target variables recovered, the
/// selector (if any) pointing at the target, every other variable unchanged.
pub fn recover_state(
    m: &Machine,
    cfg: &SubstitutionConfig,
    current: &Valuation,
) -> Result<Valuation, SubstitutionError> {
    if cfg.policy == Policy::Cold {
        return Err(SubstitutionError::Invalid(
            "cold start does not recover state".into(),
        ));
    }
    if cfg.hinv.is_none() {
        return Err(SubstitutionError::Invalid(
            "recovery requires a horizontal invariant".into(),
        ));
    }
    let base = activate(m, &cfg.target, current);
    let source_variant = variant_value(m, &cfg.source, current)?;

    let hot = if let Some(f) = &cfg.recovery {
        let values = f(m, current);
        if values.len() != cfg.target.sv.len() {
            return Err(SubstitutionError::RecoveryRejected(format!(
                "returned {} values for {} target variables",
                values.len(),
                cfg.target.sv.len()
            )));
        }
        let mut v = base.clone();
        for (name, value) in cfg.target.sv.iter().zip(values) {
            let i = m
                .var_index(name)
                .ok_or_else(|| KernelError::UnknownVariable(name.clone()))?;
            if !m.variables()[i].kind.admits(&value, m.universe()) {
                return Err(SubstitutionError::RecoveryRejected(format!(
                    "value for `{name}` is outside its domain"
                )));
            }
            v.set(i, value);
        }
        match judge(m, cfg, current, source_variant, &v)? {
            Verdict::Ok => v,
            Verdict::Hinv => {
                return Err(SubstitutionError::RecoveryRejected(
                    "horizontal invariant fails".into(),
                ))
            }
            Verdict::Variant => {
                return Err(SubstitutionError::RecoveryRejected(
                    "variants do not match".into(),
                ))
            }
            Verdict::Invariant => {
                return Err(SubstitutionError::RecoveryRejected(
                    "machine invariant fails".into(),
                ))
            }
        }
    } else {
        let mut failure = RecoveryFailure {
            candidates: 0,
            failed_hinv: 0,
            failed_variant: 0,
            failed_invariants: 0,
            failed_checkpoint: 0,
        };
        let mut found = None;
        for candidate in recovery_candidates(m, &cfg.target, &base)? {
            failure.candidates += 1;
            match judge(m, cfg, current, source_variant, &candidate)? {
                Verdict::Ok => {
                    found = Some(candidate);
                    break;
                }
                Verdict::Hinv => failure.failed_hinv += 1,
                Verdict::Variant => failure.failed_variant += 1,
                Verdict::Invariant => failure.failed_invariants += 1,
            }
        }
        found.ok_or(SubstitutionError::Unrecoverable(failure))?
    };

    if cfg.policy == Policy::Hot {
        return Ok(hot);
    }
    round_to_checkpoint(m, cfg, &base, hot)
}

/// Warm start: keep the hot state if it is a checkpoint; otherwise the
/// checkpoint state with the least variant not below the hot state's (the
/// nearest one with no more progress), ties broken canonically.
fn round_to_checkpoint(
    m: &Machine,
    cfg: &SubstitutionConfig,
    base: &Valuation,
    hot: Valuation,
) -> Result<Valuation, SubstitutionError> {
    let Some(cp) = &cfg.target.checkpoint else {
        return Ok(hot);
    };
    let at_checkpoint = |v: &Valuation| -> Result<bool, KernelError> {
        let keep = |n: &str| cfg.target.owns(n);
        let scope = m.restricted_scope(v, &keep);
        let holds = cp.holds(m.universe(), &scope);
        holds
    };
    if at_checkpoint(&hot)? {
        return Ok(hot);
    }
    let floor = variant_value(m, &cfg.target, &hot)?;
    let mut failure = RecoveryFailure {
        candidates: 0,
        failed_hinv: 0,
        failed_variant: 0,
        failed_invariants: 0,
        failed_checkpoint: 0,
    };
    let mut best: Option<(u64, Valuation)> = None;
    for candidate in recovery_candidates(m, &cfg.target, base)? {
        failure.candidates += 1;
        if !at_checkpoint(&candidate)? {
            failure.failed_checkpoint += 1;
            continue;
        }
        let variant = variant_value(m, &cfg.target, &candidate)?;
        if variant < floor {
            failure.failed_variant += 1;
            continue;
        }
        if violated_invariant(m, &candidate)?.is_some() {
            failure.failed_invariants += 1;
            continue;
        }
        // Candidates arrive in canonical order, so strict < keeps the least.
        if best.as_ref().is_none_or(|(b, _)| variant < *b) {
            best = Some((variant, candidate));
        }
    }
    best.map(|(_, v)| v)
        .ok_or(SubstitutionError::Unrecoverable(failure))
}

/// Record of one executed switch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwitchRecord {
    pub policy: Policy,
    pub pre_variant: u64,
    pub post_variant: u64,
    pub hinv_holds: bool,
}

/// Executes the switch from `cfg.source` to `cfg.target`.
pub fn switch(
    m: &Machine,
    cfg: &SubstitutionConfig,
    state: &CompoundState,
) -> Result<CompoundState, SubstitutionError> {
    switch_with_record(m, cfg, state).map(|(s, _)| s)
}

pub fn switch_with_record(
    m: &Machine,
    cfg: &SubstitutionConfig,
    state: &CompoundState,
) -> Result<(CompoundState, SwitchRecord), SubstitutionError> {
    if state.active != cfg.source.id {
        return Err(SubstitutionError::WrongActiveSystem {
            expected: cfg.source.id.clone(),
            found: state.active.clone(),
        });
    }
    let pre = &state.valuation;
    let post = match cfg.policy {
        Policy::Cold => {
            let init = initialize(m)?;
            let mut v = activate(m, &cfg.target, pre);
            for i in target_indices(m, &cfg.target)? {
                v.set(i, init.get(i));
            }
            if let Some(index) = violated_invariant(m, &v)? {
                return Err(SubstitutionError::SwitchBreaksInvariant {
                    index,
                    predicate: m.invariants()[index].to_string(),
                });
            }
            v
        }
        Policy::Warm | Policy::Hot => recover_state(m, cfg, pre)?,
    };
    let record = SwitchRecord {
        policy: cfg.policy,
        pre_variant: variant_value(m, &cfg.source, pre)?,
        post_variant: variant_value(m, &cfg.target, &post)?,
        hinv_holds: hinv_holds(m, cfg, pre, &post)?,
    };
    Ok((
        CompoundState {
            active: cfg.target.id.clone(),
            valuation: post,
        },
        record,
    ))
}

/// The system running in `v`: the selector's choice, or `fallback` when the
/// machine has no selector.
pub(crate) fn active_in<'a>(
    m: &'a Machine,
    v: &Valuation,
    fallback: Option<&'a str>,
) -> Option<&'a str> {
    match m.selector_index() {
        Some(_) => m.selected_system(v).map(|s| s.id.as_str()),
        None => fallback,
    }
}

/// Whether the system `id` has an enabled event of its own in `v`.
pub(crate) fn system_can_move(
    m: &Machine,
    id: Option<&str>,
    v: &Valuation,
) -> Result<bool, KernelError> {
    Ok(enabled(m, v)?.iter().any(|(e, _)| owned_by(m, e, id)))
}

pub(crate) fn owned_by(m: &Machine, event: &str, active: Option<&str>) -> bool {
    match active {
        Some(id) => m
            .event(event)
            .is_some_and(|e| e.system.as_deref() == Some(id)),
        None => true,
    }
}

/// Switch feasibility: from every reachable state where the source is running
/// and can still move, the switch succeeds and its post-state satisfies the
/// machine invariants. Warm and hot switches must also satisfy the horizontal
/// invariant and preserve the variant; cold switches must restore the
/// target's initial values.
pub fn check_switch(
    m: &Machine,
    cfg: &SubstitutionConfig,
    cap: usize,
) -> Result<ObligationReport, ObligationError> {
    const KIND: ObligationKind = ObligationKind::Switch;
    let subject = Some(cfg.label());
    if let Err(e) = cfg.validate(m) {
        return Err(ObligationError::BadLink(e.to_string()));
    }
    let init = initialize(m)?;
    let graph = explore(m, init.clone(), cap, &|_| Ok(false))?;
    let target_idx = target_indices(m, &cfg.target)?;
    let fail = |i: usize, post: Option<Valuation>, violated: String| Counterexample {
        path: graph.path_to(i),
        state: graph.states[i].clone(),
        event: Some("switch".into()),
        binding: None,
        post,
        violated,
    };
    for (i, v) in graph.states.iter().enumerate() {
        let active = active_in(m, v, Some(&cfg.source.id));
        if active != Some(cfg.source.id.as_str()) || !system_can_move(m, active, v)? {
            continue;
        }
        let state = CompoundState {
            active: cfg.source.id.clone(),
            valuation: v.clone(),
        };
        let (post, record) = match switch_with_record(m, cfg, &state) {
            Ok(r) => r,
            Err(SubstitutionError::Kernel(e)) => return Err(e.into()),
            Err(e) => {
                let cx = fail(i, None, e.to_string());
                return Ok(ObligationReport::fail(
                    KIND,
                    m,
                    subject,
                    graph.states.len(),
                    cx,
                ));
            }
        };
        let post = post.valuation;
        let problem = if let Some(idx) = violated_invariant(m, &post)? {
            Some(format!(
                "invariant #{idx} after switch: {}",
                m.invariants()[idx]
            ))
        } else if cfg.policy == Policy::Cold {
            target_idx
                .iter()
                .any(|&t| post.get(t) != init.get(t))
                .then(|| "cold switch did not restore target init".to_string())
        } else if !record.hinv_holds {
            Some("horizontal invariant fails after switch".to_string())
        } else if record.pre_variant != record.post_variant {
            Some(format!(
                "variant not preserved: {} -> {}",
                record.pre_variant, record.post_variant
            ))
        } else {
            None
        };
        if let Some(violated) = problem {
            let cx = fail(i, Some(post), violated);
            return Ok(ObligationReport::fail(
                KIND,
                m,
                subject,
                graph.states.len(),
                cx,
            ));
        }
    }
    Ok(ObligationReport::pass(KIND, m, subject, graph.states.len()))
}
