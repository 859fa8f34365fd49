use std::collections::BTreeSet;

use subst_core::commerce::*;
use subst_core::kernel::{enabled, initialize, variant_value, Machine, Valuation};
use subst_core::obligations::{
    check_invariants, check_refinement, check_variant, reachable, DEFAULT_STATE_CAP,
};
use subst_core::substitution::{run_scenario, Driver};

fn set_bits(m: &Machine, v: &Valuation, name: &str) -> u64 {
    m.value(v, name).and_then(|x| x.as_set()).unwrap().bits()
}

fn flag(m: &Machine, v: &Valuation, name: &str) -> bool {
    m.value(v, name).and_then(|x| x.as_bool()).unwrap()
}

fn purchase_bits(n: usize, purchase: &[usize]) -> u64 {
    if purchase.is_empty() {
        (1u64 << n) - 1
    } else {
        purchase.iter().fold(0, |acc, i| acc | 1 << (i - 1))
    }
}

fn params(n: usize, purchase: &[usize]) -> CommerceParams {
    CommerceParams {
        products: n,
        purchase: (!purchase.is_empty())
            .then(|| purchase.iter().map(|i| format!("Prod{i}")).collect()),
    }
}

/// Subsets of `p` as bitmasks, by plain counting.
fn oracle_subsets(n: usize, p: u64) -> BTreeSet<u64> {
    (0..1u64 << n).filter(|s| s & !p == 0).collect()
}

/// Disjoint pairs of subsets of `p`, by plain counting.
fn oracle_pairs(n: usize, p: u64) -> BTreeSet<(u64, u64)> {
    let subs = oracle_subsets(n, p);
    let mut out = BTreeSet::new();
    for &a in &subs {
        for &b in &subs {
            if a & b == 0 {
                out.insert((a, b));
            }
        }
    }
    out
}

#[test]
fn m11_cart_states_match_subset_count() {
    for (n, purchase) in [(5, vec![]), (4, vec![]), (5, vec![2, 4]), (1, vec![])] {
        let (m, _) = build_m11(&params(n, &purchase)).unwrap();
        let carts: BTreeSet<u64> = reachable(&m, DEFAULT_STATE_CAP)
            .unwrap()
            .iter()
            .map(|v| set_bits(&m, v, "C1"))
            .collect();
        assert_eq!(carts, oracle_subsets(n, purchase_bits(n, &purchase)));
    }
    let (m, _) = build_m11(&CommerceParams::default()).unwrap();
    let carts: BTreeSet<u64> = reachable(&m, DEFAULT_STATE_CAP)
        .unwrap()
        .iter()
        .map(|v| set_bits(&m, v, "C1"))
        .collect();
    assert_eq!(carts.len(), 32);
}

#[test]
fn m12_cart_pairs_match_disjoint_pair_count() {
    for (n, purchase) in [(5, vec![]), (3, vec![]), (5, vec![1, 5])] {
        let (m, _) = build_m12(&params(n, &purchase)).unwrap();
        let pairs: BTreeSet<(u64, u64)> = reachable(&m, DEFAULT_STATE_CAP)
            .unwrap()
            .iter()
            .map(|v| (set_bits(&m, v, "C2a"), set_bits(&m, v, "C2b")))
            .collect();
        assert_eq!(pairs, oracle_pairs(n, purchase_bits(n, &purchase)));
    }
    let (m, _) = build_m12(&CommerceParams::default()).unwrap();
    let pairs: BTreeSet<(u64, u64)> = reachable(&m, DEFAULT_STATE_CAP)
        .unwrap()
        .iter()
        .map(|v| (set_bits(&m, v, "C2a"), set_bits(&m, v, "C2b")))
        .collect();
    assert_eq!(pairs.len(), 243);
}

#[test]
fn m1_finish_enabled_exactly_when_cart_is_purchase() {
    let p = params(4, &[1, 3, 4]);
    let m = build_m1(&p).unwrap();
    let target = purchase_bits(4, &[1, 3, 4]);
    for v in reachable(&m, DEFAULT_STATE_CAP).unwrap() {
        let finish = enabled(&m, &v).unwrap().iter().any(|(e, _)| e == "finish");
        let expected = set_bits(&m, &v, "cart") == target && !flag(&m, &v, DONE);
        assert_eq!(finish, expected, "{v:?}");
        if flag(&m, &v, DONE) {
            assert_eq!(set_bits(&m, &v, "cart"), target);
        }
    }
    assert!(check_invariants(&m, DEFAULT_STATE_CAP).unwrap().passed);
}

#[test]
fn sys1_variant_starts_at_product_count() {
    let (m, sys) = build_m11(&CommerceParams::default()).unwrap();
    let init = initialize(&m).unwrap();
    assert_eq!(variant_value(&m, &sys, &init).unwrap(), 5);
    assert!(check_variant(&m, &sys, DEFAULT_STATE_CAP).unwrap().passed);
}

#[test]
fn partition_matches_the_case_study() {
    let m = build_m13(&CommerceParams::default(), InitialSystem::Sys1).unwrap();
    let systems = m.partition().systems();
    assert_eq!(systems.len(), 2);
    assert_eq!(systems[0].id, SYS1);
    assert_eq!(systems[0].sv, vec!["C1".to_string()]);
    assert_eq!(systems[1].id, SYS2);
    assert_eq!(systems[1].sv, vec!["C2a".to_string(), "C2b".to_string()]);
    assert!(m.event("switch").is_none());
}

#[test]
fn every_registry_scenario_passes_at_default_size() {
    let p = CommerceParams::with_products(4);
    for name in SCENARIOS {
        for s in scenarios(name, &p, None).unwrap() {
            for r in s.check(DEFAULT_STATE_CAP).unwrap() {
                assert!(r.passed, "{} {:?} {:?}", s.name, r.kind, r.counterexample);
            }
        }
    }
}

#[test]
fn safety_properties_hold_on_every_reachable_state() {
    let p = CommerceParams::with_products(4);
    let full = purchase_bits(4, &[]);
    for name in SCENARIOS {
        for s in scenarios(name, &p, None).unwrap() {
            let m = &s.machine;
            let has = |n: &str| m.var_index(n).is_some();
            for v in reachable(m, DEFAULT_STATE_CAP).unwrap() {
                let active_cart = match m.selected_system(&v).map(|s| s.id.as_str()) {
                    Some(SYS2) => set_bits(m, &v, "C2a") | set_bits(m, &v, "C2b"),
                    Some(_) => set_bits(m, &v, "C1"),
                    None if has("cart") => set_bits(m, &v, "cart"),
                    None if has("C1") => set_bits(m, &v, "C1"),
                    None => set_bits(m, &v, "C2a") | set_bits(m, &v, "C2b"),
                };
                if flag(m, &v, DONE) {
                    assert_eq!(active_cart, full, "{} {v:?}", s.name);
                }
                if has("C2a") {
                    assert_eq!(set_bits(m, &v, "C2a") & set_bits(m, &v, "C2b"), 0);
                }
            }
        }
    }
}

#[test]
fn m12_with_site_a_gluing_fails_with_replayable_counterexample() {
    let p = CommerceParams::default();
    assert!(
        check_refinement(&m11_refines_m1(&p).unwrap(), DEFAULT_STATE_CAP)
            .unwrap()
            .passed
    );
    assert!(
        check_refinement(&m12_refines_m1(&p).unwrap(), DEFAULT_STATE_CAP)
            .unwrap()
            .passed
    );

    let bad = m12_refines_m1_site_a_only(&p).unwrap();
    let r = check_refinement(&bad, DEFAULT_STATE_CAP).unwrap();
    assert!(!r.passed);
    let cx = r.counterexample.unwrap();
    let (state, post) = cx.replay(&bad.concrete).unwrap();
    assert_eq!(state, cx.state);
    assert_eq!(post, cx.post);
    assert_eq!(cx.event.as_deref(), Some("select_b"));
}

/// Projection of a composed-machine state onto one system's variables.
fn project(m: &Machine, v: &Valuation, names: &[&str]) -> Vec<subst_core::Value> {
    names.iter().map(|n| m.value(v, n).unwrap()).collect()
}

fn assert_bisimilar(
    composed: &Machine,
    single: &Machine,
    names: &[&str],
    rename: &dyn Fn(&str) -> String,
) {
    for seed in 0..20 {
        let a = run_scenario(composed, None, Driver::Random, seed, 1000).unwrap();
        let b = run_scenario(single, None, Driver::Random, seed, 1000).unwrap();
        assert_eq!(a.records.len(), b.records.len(), "seed {seed}");
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!(ra.event.as_deref().map(rename), rb.event, "seed {seed}");
            assert_eq!(ra.binding, rb.binding);
            assert_eq!(
                project(composed, &ra.valuation, names),
                project(single, &rb.valuation, names)
            );
        }
    }
}

#[test]
fn m13_behaves_as_the_chosen_system() {
    let p = CommerceParams::default();
    let m13a = build_m13(&p, InitialSystem::Sys1).unwrap();
    let (m11, _) = build_m11(&p).unwrap();
    assert_bisimilar(&m13a, &m11, &["C1", DONE], &|e| {
        e.trim_end_matches('1').to_string()
    });

    let m13b = build_m13(&p, InitialSystem::Sys2).unwrap();
    let (m12, _) = build_m12(&p).unwrap();
    assert_bisimilar(&m13b, &m12, &["C2a", "C2b", DONE], &|e| {
        if e == "finish2" {
            "finish".into()
        } else {
            e.to_string()
        }
    });
}

#[test]
fn every_mutant_is_caught_with_a_replayable_counterexample() {
    let p = CommerceParams::with_products(4);
    for mutant in Mutant::ALL {
        for name in SCENARIOS.into_iter().filter(|n| mutant.applies_to(n)) {
            let mut caught = false;
            for s in scenarios(name, &p, Some(mutant)).unwrap() {
                for r in s.check(DEFAULT_STATE_CAP).unwrap() {
                    let Some(cx) = &r.counterexample else {
                        continue;
                    };
                    caught = true;
                    let m = match (&r.kind, &s.refinement) {
                        (subst_core::ObligationKind::Refinement, Some(l)) => &l.concrete,
                        _ => &s.machine,
                    };
                    let (state, post) = cx.replay(m).unwrap();
                    assert_eq!(state, cx.state, "{name} {mutant}");
                    if m.event(cx.event.as_deref().unwrap_or("")).is_some() && cx.binding.is_some()
                    {
                        assert_eq!(post, cx.post, "{name} {mutant}");
                    }
                }
            }
            assert!(caught, "{mutant} not caught on {name}");
        }
    }
}

#[test]
fn mutants_outside_their_scope_are_rejected() {
    let p = CommerceParams::default();
    assert!(matches!(
        scenarios("m11", &p, Some(Mutant::HinvFalse)),
        Err(CommerceError::MutantNotApplicable { .. })
    ));
    assert!(matches!(
        scenarios("m9", &p, None),
        Err(CommerceError::UnknownScenario(_))
    ));
    assert!(build_m1(&CommerceParams::with_products(0)).is_err());
    assert!(build_m1(&CommerceParams::with_products(MAX_PRODUCTS + 1)).is_err());
    assert!(build_m1(&params(3, &[4])).is_err());
    assert_eq!("hinv-false".parse::<Mutant>(), Ok(Mutant::HinvFalse));
}
