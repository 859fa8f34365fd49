//! Seeded end-to-end runs with at most one substitution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value as Json};

use super::{
    active_in, owned_by, switch_with_record, SubstitutionConfig, SubstitutionError, SwitchRecord,
    Trigger,
};
use crate::kernel::{
    enabled, initialize, step, variant_value, Binding, CompoundState, Machine, Valuation,
};
use crate::obligations::{binding_to_json, valuation_to_json};

/// How the next event is picked among the enabled ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Driver {
    /// Uniformly at random from a ChaCha8 stream seeded with the run seed.
    Random,
    /// Always the first enabled pair.
    First,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub step: usize,
    pub active: Option<String>,
    pub event: Option<String>,
    pub binding: Option<Binding>,
    pub valuation: Valuation,
    /// Variant of every system in the partition, in partition order.
    pub variants: Vec<(String, u64)>,
    pub switch: Option<SwitchRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn last(&self) -> &TraceRecord {
        self.records
            .last()
            .expect("a trace always holds the initial state")
    }

    pub fn switch_record(&self) -> Option<(usize, &SwitchRecord)> {
        self.records
            .iter()
            .find_map(|r| r.switch.as_ref().map(|s| (r.step, s)))
    }

    /// Number of events fired (switches excluded).
    pub fn event_count(&self) -> usize {
        self.records.iter().filter(|r| r.event.is_some()).count()
    }

    /// Line-delimited JSON, one record per line.
    pub fn to_jsonl(&self, m: &Machine) -> String {
        let mut out = String::new();
        for r in &self.records {
            let mut rec = Map::new();
            rec.insert("step".into(), json!(r.step));
            rec.insert("active".into(), json!(r.active));
            if let Some(e) = &r.event {
                rec.insert("event".into(), json!(e));
            }
            if let Some(b) = &r.binding {
                rec.insert("binding".into(), binding_to_json(m, b));
            }
            rec.insert("valuation".into(), valuation_to_json(m, &r.valuation));
            rec.insert(
                "variants".into(),
                Json::Object(
                    r.variants
                        .iter()
                        .map(|(k, v)| (k.clone(), json!(v)))
                        .collect(),
                ),
            );
            if let Some(s) = &r.switch {
                rec.insert(
                    "switch".into(),
                    json!({
                        "policy": s.policy.as_str(),
                        "pre_variant": s.pre_variant,
                        "post_variant": s.post_variant,
                        "hinv_holds": s.hinv_holds,
                    }),
                );
            }
            out.push_str(&Json::Object(rec).to_string());
            out.push('\n');
        }
        out
    }
}

fn variants(m: &Machine, v: &Valuation) -> Result<Vec<(String, u64)>, SubstitutionError> {
    m.partition()
        .systems()
        .iter()
        .map(|s| Ok((s.id.clone(), variant_value(m, s, v)?)))
        .collect()
}

/// Runs the machine from its initial state.
///
/// Only events owned by the active system are scheduled (all events when no
/// system is active). With a substitution config, the source must be active
/// initially; the switch fires at the first step where the trigger holds
/// while the source can still move, after which the target runs. The run
/// ends when the active system has no enabled event; exceeding `max_steps`
/// events is an error.
pub fn run_scenario(
    m: &Machine,
    cfg: Option<&SubstitutionConfig>,
    driver: Driver,
    seed: u64,
    max_steps: usize,
) -> Result<Trace, SubstitutionError> {
    if let Some(cfg) = cfg {
        cfg.validate(m)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = initialize(m)?;
    let mut active: Option<String> =
        active_in(m, &v, cfg.map(|c| c.source.id.as_str())).map(str::to_string);
    if let Some(cfg) = cfg {
        if active.as_deref() != Some(cfg.source.id.as_str()) {
            return Err(SubstitutionError::WrongActiveSystem {
                expected: cfg.source.id.clone(),
                found: active.unwrap_or_default(),
            });
        }
    }

    let mut trace = Trace::default();
    trace.records.push(TraceRecord {
        step: 0,
        active: active.clone(),
        event: None,
        binding: None,
        valuation: v.clone(),
        variants: variants(m, &v)?,
        switch: None,
    });
    let mut switched = false;
    let mut source_steps = 0usize;
    let mut steps = 0usize;

    loop {
        let choices: Vec<(String, Binding)> = enabled(m, &v)?
            .into_iter()
            .filter(|(e, _)| owned_by(m, e, active.as_deref()))
            .collect();

        if let (Some(cfg), false) = (cfg, switched) {
            if !choices.is_empty() && trigger_fires(m, cfg, &v, source_steps)? {
                let state = CompoundState {
                    active: cfg.source.id.clone(),
                    valuation: v.clone(),
                };
                let (next, record) = switch_with_record(m, cfg, &state)?;
                v = next.valuation;
                active = Some(next.active);
                switched = true;
                trace.records.push(TraceRecord {
                    step: trace.records.len(),
                    active: active.clone(),
                    event: None,
                    binding: None,
                    valuation: v.clone(),
                    variants: variants(m, &v)?,
                    switch: Some(record),
                });
                continue;
            }
        }

        if choices.is_empty() {
            return Ok(trace);
        }
        if steps >= max_steps {
            return Err(SubstitutionError::MaxStepsExceeded(max_steps));
        }
        let pick = match driver {
            Driver::First => 0,
            Driver::Random => rng.gen_range(0..choices.len()),
        };
        let (event, binding) = choices.into_iter().nth(pick).expect("index in range");
        v = step(m, &v, &event, &binding)?;
        steps += 1;
        if !switched {
            source_steps += 1;
        }
        trace.records.push(TraceRecord {
            step: trace.records.len(),
            active: active.clone(),
            event: Some(event),
            binding: Some(binding),
            valuation: v.clone(),
            variants: variants(m, &v)?,
            switch: None,
        });
    }
}

fn trigger_fires(
    m: &Machine,
    cfg: &SubstitutionConfig,
    v: &Valuation,
    source_steps: usize,
) -> Result<bool, SubstitutionError> {
    Ok(match &cfg.trigger {
        Trigger::AtStep(k) => source_steps == *k,
        Trigger::WhenPred(p) => {
            let keep = |n: &str| cfg.source.owns(n);
            let scope = m.restricted_scope(v, &keep);
            let fires = p.holds(m.universe(), &scope)?;
            fires
        }
        Trigger::Manual => false,
    })
}
