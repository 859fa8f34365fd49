use std::cmp::Ordering;
use std::sync::Arc;

use subst_core::commerce::*;
use subst_core::kernel::expr::{and, not, var};
use subst_core::kernel::{
    AtomSet, CompoundState, Domain, Expr, GuardedEvent, Machine, MachineDef, SystemDef, Universe,
    Valuation, Value, VarDecl, VarKind,
};
use subst_core::obligations::{check_invariants, DEFAULT_STATE_CAP};
use subst_core::substitution::{
    check_switch, recover_state, run_scenario, switch, switch_with_record, Driver, Policy,
    SubstitutionConfig, SubstitutionError, Trigger,
};

fn set_bits(m: &Machine, v: &Valuation, name: &str) -> u64 {
    m.value(v, name).and_then(|x| x.as_set()).unwrap().bits()
}

/// A pre-switch state of m142/m141: Sys1 running with cart `c1`.
fn pre_state(m: &Machine, c1: u64) -> Valuation {
    let mut v = m.def().init.clone();
    v.set(
        m.var_index("C1").unwrap(),
        Value::Set(AtomSet::from_bits(c1)),
    );
    v
}

/// Membership-first order on sets of `n` atoms: at the first atom where two
/// sets differ, the one holding it comes first.
fn oracle_cmp(n: usize, a: u64, b: u64) -> Ordering {
    for i in 0..n {
        let (ia, ib) = (a >> i & 1, b >> i & 1);
        if ia != ib {
            return ib.cmp(&ia);
        }
    }
    Ordering::Equal
}

/// Brute-force hot recovery for the commerce encoding: every disjoint pair
/// of subsets of `p` whose union is `c1` and whose size matches, least first.
fn oracle_recover(n: usize, p: u64, c1: u64) -> Option<(u64, u64)> {
    let mut best: Option<(u64, u64)> = None;
    for a in 0..1u64 << n {
        for b in 0..1u64 << n {
            let ok = a | b == c1
                && a & b == 0
                && a & !p == 0
                && b & !p == 0
                && (a | b).count_ones() == c1.count_ones();
            if !ok {
                continue;
            }
            let better = match best {
                None => true,
                Some((ba, bb)) => oracle_cmp(n, a, ba).then(oracle_cmp(n, b, bb)) == Ordering::Less,
            };
            if better {
                best = Some((a, b));
            }
        }
    }
    best
}

#[test]
fn recover_state_matches_brute_force_minimum() {
    let mut inputs = 0;
    for n in 1..=5usize {
        for p in 1..1u64 << n {
            let names: Vec<String> = (0..n)
                .filter(|i| p >> i & 1 == 1)
                .map(|i| format!("Prod{}", i + 1))
                .collect();
            let params = CommerceParams {
                products: n,
                purchase: Some(names),
            };
            let (m, cfg) = build_m142(&params).unwrap();
            for c1 in (0..1u64 << n).filter(|c| c & !p == 0) {
                let pre = pre_state(&m, c1);
                let got = recover_state(&m, &cfg, &pre).unwrap();
                let expected = oracle_recover(n, p, c1).unwrap();
                assert_eq!(
                    (set_bits(&m, &got, "C2a"), set_bits(&m, &got, "C2b")),
                    expected,
                    "n={n} p={p:b} c1={c1:b}"
                );
                assert_eq!(m.value(&got, ACTIVE), Some(Value::Nat(1)));
                assert_eq!(set_bits(&m, &got, "C1"), c1);
                inputs += 1;
            }
        }
    }
    // Every nonempty purchase set and every cart within it: sum of 3^n - 1.
    assert_eq!(inputs, 2 + 8 + 26 + 80 + 242);
}

#[test]
fn hot_switch_example_keeps_the_selection() {
    let (m, cfg) = build_m142(&CommerceParams::default()).unwrap();
    let pre = pre_state(&m, 0b00101);
    let post = recover_state(&m, &cfg, &pre).unwrap();
    assert_eq!(set_bits(&m, &post, "C2a"), 0b00101);
    assert_eq!(set_bits(&m, &post, "C2b"), 0);
}

#[test]
fn hot_switch_properties_hold_for_every_pre_switch_cart() {
    let (m, cfg) = build_m142(&CommerceParams::default()).unwrap();
    for c1 in 0..32u64 {
        let pre = pre_state(&m, c1);
        let state = CompoundState {
            active: SYS1.into(),
            valuation: pre,
        };
        let (next, rec) = switch_with_record(&m, &cfg, &state).unwrap();
        let (a, b) = (
            set_bits(&m, &next.valuation, "C2a"),
            set_bits(&m, &next.valuation, "C2b"),
        );
        assert_eq!(next.active, SYS2);
        assert_eq!(c1 & !(a | b), 0, "lost a selection from {c1:b}");
        assert_eq!(c1, a | b);
        assert_eq!(a & b, 0);
        assert_eq!(rec.pre_variant, 5 - c1.count_ones() as u64);
        assert_eq!(rec.pre_variant, rec.post_variant);
        assert!(rec.hinv_holds);
    }
    assert!(check_switch(&m, &cfg, DEFAULT_STATE_CAP).unwrap().passed);
}

#[test]
fn cold_switch_restores_target_init_from_every_state() {
    let (m, cfg) = build_m141(&CommerceParams::default()).unwrap();
    for c1 in 0..32u64 {
        let state = CompoundState {
            active: SYS1.into(),
            valuation: pre_state(&m, c1),
        };
        let next = switch(&m, &cfg, &state).unwrap();
        assert_eq!(set_bits(&m, &next.valuation, "C2a"), 0);
        assert_eq!(set_bits(&m, &next.valuation, "C2b"), 0);
        assert_eq!(set_bits(&m, &next.valuation, "C1"), c1);
    }
    assert!(check_switch(&m, &cfg, DEFAULT_STATE_CAP).unwrap().passed);
    assert!(check_invariants(&m, DEFAULT_STATE_CAP).unwrap().passed);
}

#[test]
fn switch_from_wrong_system_is_rejected() {
    let (m, cfg) = build_m142(&CommerceParams::default()).unwrap();
    let state = CompoundState {
        active: SYS2.into(),
        valuation: pre_state(&m, 0),
    };
    assert!(matches!(
        switch(&m, &cfg, &state),
        Err(SubstitutionError::WrongActiveSystem { .. })
    ));
}

#[test]
fn false_horizontal_invariant_is_unrecoverable() {
    let (m, mut cfg) = build_m142(&CommerceParams::with_products(3)).unwrap();
    cfg.hinv = Some(subst_core::HorizontalInvariant(Expr::Bool(false)));
    let err = recover_state(&m, &cfg, &pre_state(&m, 1)).unwrap_err();
    match err {
        SubstitutionError::Unrecoverable(f) => {
            assert_eq!(f.candidates, 64);
            assert_eq!(f.failed_hinv, 64);
        }
        other => panic!("{other:?}"),
    }
    assert!(!check_switch(&m, &cfg, DEFAULT_STATE_CAP).unwrap().passed);
}

#[test]
fn registered_recovery_is_verified_not_trusted() {
    let (m, mut cfg) = build_m142(&CommerceParams::with_products(3)).unwrap();
    let c1 = m.var_index("C1").unwrap();
    cfg.recovery = Some(Arc::new(move |_: &Machine, v: &Valuation| {
        vec![Value::Set(AtomSet::EMPTY), v.get(c1)]
    }));
    let post = recover_state(&m, &cfg, &pre_state(&m, 0b011)).unwrap();
    assert_eq!(set_bits(&m, &post, "C2b"), 0b011);

    cfg.recovery = Some(Arc::new(|_: &Machine, _: &Valuation| {
        vec![Value::Set(AtomSet::EMPTY); 2]
    }));
    assert!(matches!(
        recover_state(&m, &cfg, &pre_state(&m, 0b011)),
        Err(SubstitutionError::RecoveryRejected(_))
    ));
}

#[test]
fn cold_policy_has_no_recovery() {
    let (m, mut cfg) = build_m142(&CommerceParams::with_products(2)).unwrap();
    cfg.policy = Policy::Cold;
    assert!(matches!(
        recover_state(&m, &cfg, &pre_state(&m, 0)),
        Err(SubstitutionError::Invalid(_))
    ));
}

/// Two counters: `a` counts up to 6 under SysA; `b` counts up to 6 under
/// SysB, whose checkpoints are the even values.
fn counters() -> (Machine, SystemDef, SystemDef) {
    let u = Universe::new(Vec::<String>::new()).unwrap();
    let nat = |name: &str| VarDecl {
        name: name.into(),
        kind: VarKind::Nat { bound: Some(6) },
    };
    let sys_a = SystemDef::new("SysA", &["a"], Expr::Nat(6).minus(var("a")));
    let mut sys_b = SystemDef::new("SysB", &["b"], Expr::Nat(6).minus(var("b")));
    let even = [0u64, 2, 4, 6].map(|k| var("b").equals(Expr::Nat(k)));
    sys_b.checkpoint = Some(subst_core::kernel::expr::or(even.to_vec()));
    let sel = VarDecl {
        name: "sel".into(),
        kind: VarKind::Nat { bound: Some(1) },
    };
    let tick = |name: &str, v: &str, sys: &str, idx: u64| {
        GuardedEvent::new(
            name,
            and(vec![
                var("sel").equals(Expr::Nat(idx)),
                var(v).less_than(Expr::Nat(6)),
            ]),
        )
        .assign(v, var(v).plus(Expr::Nat(1)))
        .owned_by(sys)
        .convergent()
    };
    let m = Machine::new(MachineDef {
        name: "counters".into(),
        universe: u,
        variables: vec![nat("a"), nat("b"), sel],
        init: Valuation::new(vec![Value::Nat(0), Value::Nat(0), Value::Nat(0)]),
        invariants: vec![],
        variant: None,
        events: vec![
            tick("tick_a", "a", "SysA", 0),
            tick("tick_b", "b", "SysB", 1),
        ],
        systems: vec![sys_a.clone(), sys_b.clone()],
        selector: Some("sel".into()),
    })
    .unwrap();
    (m, sys_a, sys_b)
}

#[test]
fn warm_start_rounds_back_to_the_nearest_checkpoint() {
    let (m, a, b) = counters();
    let hinv = var("a").equals(var("b"));
    let hot = SubstitutionConfig::new(
        a.clone(),
        b.clone(),
        Some(hinv.clone()),
        Policy::Hot,
        Trigger::Manual,
    );
    let warm = SubstitutionConfig::new(a, b, Some(hinv), Policy::Warm, Trigger::Manual);
    for k in 0..=6u64 {
        let pre = Valuation::new(vec![Value::Nat(k), Value::Nat(0), Value::Nat(0)]);
        let h = recover_state(&m, &hot, &pre).unwrap();
        let w = recover_state(&m, &warm, &pre).unwrap();
        assert_eq!(m.value(&h, "b"), Some(Value::Nat(k)));
        assert_eq!(m.value(&w, "b"), Some(Value::Nat(k - k % 2)), "k={k}");
        assert_eq!(m.value(&w, "sel"), Some(Value::Nat(1)));
    }
    assert!(check_switch(&m, &hot, DEFAULT_STATE_CAP).unwrap().passed);
    // Rounding back loses progress, so the variant is not preserved.
    assert!(!check_switch(&m, &warm, DEFAULT_STATE_CAP).unwrap().passed);
}

#[test]
fn cold_run_completes_for_every_failure_point() {
    let (m, base) = build_m141(&CommerceParams::default()).unwrap();
    for k in 0..=5 {
        for seed in 0..5 {
            let mut cfg = base.clone();
            cfg.trigger = Trigger::AtStep(k);
            let t = run_scenario(&m, Some(&cfg), Driver::Random, seed, 1000).unwrap();
            let (at, rec) = t.switch_record().expect("switch happens");
            assert_eq!(at, k + 1);
            assert_eq!(rec.post_variant, 5);
            let last = &t.last().valuation;
            assert_eq!(m.value(last, DONE), Some(Value::Bool(true)));
            assert_eq!(
                set_bits(&m, last, "C2a") | set_bits(&m, last, "C2b"),
                0b11111
            );
            assert_eq!(t.last().active.as_deref(), Some(SYS2));
        }
    }
}

#[test]
fn hot_run_resumes_where_the_source_stopped() {
    let (m, mut cfg) = build_m142(&CommerceParams::default()).unwrap();
    cfg.trigger = Trigger::AtStep(3);
    let t = run_scenario(&m, Some(&cfg), Driver::Random, 1, 1000).unwrap();
    let (at, rec) = t.switch_record().unwrap();
    assert_eq!(at, 4);
    assert_eq!((rec.pre_variant, rec.post_variant), (2, 2));
    // Three source selections, the switch, then two target selections and finish.
    assert_eq!(t.event_count(), 6);
    let last = &t.last().valuation;
    assert_eq!(
        set_bits(&m, last, "C2a") | set_bits(&m, last, "C2b"),
        0b11111
    );
}

#[test]
fn trigger_past_the_end_never_fires() {
    let (m, mut cfg) = build_m142(&CommerceParams::with_products(2)).unwrap();
    cfg.trigger = Trigger::AtStep(9);
    let t = run_scenario(&m, Some(&cfg), Driver::First, 0, 100).unwrap();
    assert!(t.switch_record().is_none());
    assert_eq!(t.last().active.as_deref(), Some(SYS1));
}

#[test]
fn predicate_trigger_sees_source_variables() {
    let (m, mut cfg) = build_m142(&CommerceParams::default()).unwrap();
    cfg.trigger = Trigger::WhenPred(var("C1").card().equals(Expr::Nat(2)));
    let t = run_scenario(&m, Some(&cfg), Driver::Random, 7, 1000).unwrap();
    let (at, rec) = t.switch_record().unwrap();
    assert_eq!(at, 3);
    assert_eq!(rec.pre_variant, 3);

    cfg.trigger = Trigger::WhenPred(not(var("C2a").equals(var("C2b"))));
    assert!(matches!(
        run_scenario(&m, Some(&cfg), Driver::First, 0, 10),
        Err(SubstitutionError::Invalid(_))
    ));
}

#[test]
fn runs_are_reproducible_and_bounded() {
    let (m, mut cfg) = build_m142(&CommerceParams::default()).unwrap();
    cfg.trigger = Trigger::AtStep(2);
    let a = run_scenario(&m, Some(&cfg), Driver::Random, 42, 1000).unwrap();
    let b = run_scenario(&m, Some(&cfg), Driver::Random, 42, 1000).unwrap();
    assert_eq!(a.to_jsonl(&m), b.to_jsonl(&m));
    assert!(matches!(
        run_scenario(&m, Some(&cfg), Driver::Random, 42, 3),
        Err(SubstitutionError::MaxStepsExceeded(3))
    ));
    let first = a.to_jsonl(&m);
    let line: serde_json::Value = serde_json::from_str(first.lines().nth(3).unwrap()).unwrap();
    assert_eq!(line["switch"]["policy"], "hot");
    assert!(line.get("event").is_none());
}

#[test]
fn domain_parameters_are_checked() {
    let (m, _) = build_m142(&CommerceParams::with_products(2)).unwrap();
    let ev = m.event("switch").unwrap();
    assert_eq!(ev.params.len(), 2);
    assert!(matches!(ev.params[0].domain, Domain::Subsets));
}
