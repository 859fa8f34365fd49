//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use subst_core::commerce::*;
use subst_core::kernel::format::parse_machine_file;
use subst_core::kernel::{AtomSet, CompoundState, Machine, Valuation, Value};
use subst_core::obligations::{check_refinement, reachable, DEFAULT_STATE_CAP};
use subst_core::substitution::{recover_state, switch, switch_with_record};
use subst_core::ObligationKind;

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn subst(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_subst"))
        .args(args)
        .env_remove("SUBST_STATE_CAP")
        .output()
        .expect("binary runs")
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn bits(m: &Machine, v: &Valuation, name: &str) -> u64 {
    m.value(v, name).and_then(|x| x.as_set()).unwrap().bits()
}

fn with_c1(m: &Machine, c1: u64) -> Valuation {
    let mut v = m.def().init.clone();
    v.set(
        m.var_index("C1").unwrap(),
        Value::Set(AtomSet::from_bits(c1)),
    );
    v
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    for name in SCENARIOS {
        let out = subst(&["check", "--scenario", name, "--products", "5"]);
        ensure(out.status.code() == Some(0), || {
            format!(
                "check {name} exited {:?}: {}",
                out.status.code(),
                String::from_utf8_lossy(&out.stderr)
            )
        })?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || {
        format!("suite took {elapsed:?}")
    })?;

    let p = CommerceParams::default();
    let (m11, _) = build_m11(&p).unwrap();
    let carts: BTreeSet<u64> = reachable(&m11, DEFAULT_STATE_CAP)
        .unwrap()
        .iter()
        .map(|v| bits(&m11, v, "C1"))
        .collect();
    let (m12, _) = build_m12(&p).unwrap();
    let pairs: BTreeSet<(u64, u64)> = reachable(&m12, DEFAULT_STATE_CAP)
        .unwrap()
        .iter()
        .map(|v| (bits(&m12, v, "C2a"), bits(&m12, v, "C2b")))
        .collect();
    // Oracles: every subset of 5 products; every assignment of each product
    // to site a, site b, or neither.
    let oracle_carts: BTreeSet<u64> = (0..32).collect();
    let mut oracle_pairs = BTreeSet::new();
    for code in 0..243u32 {
        let (mut a, mut b, mut c) = (0u64, 0u64, code);
        for i in 0..5 {
            match c % 3 {
                1 => a |= 1 << i,
                2 => b |= 1 << i,
                _ => {}
            }
            c /= 3;
        }
        oracle_pairs.insert((a, b));
    }
    ensure(carts == oracle_carts, || {
        format!("M11 carts: {} vs 32", carts.len())
    })?;
    ensure(pairs == oracle_pairs, || {
        format!("M12 cart pairs: {} vs 243", pairs.len())
    })?;
    Ok(format!(
        "6 scenarios exit 0 in {:.1?}; M11 carts 32; M12 cart pairs 243",
        elapsed
    ))
}

fn criterion_2() -> Verdict {
    let p = CommerceParams::default();
    for link in [m11_refines_m1(&p).unwrap(), m12_refines_m1(&p).unwrap()] {
        let r = check_refinement(&link, DEFAULT_STATE_CAP).map_err(|e| e.to_string())?;
        ensure(r.passed, || {
            format!(
                "{} does not refine m1: {:?}",
                link.concrete.name(),
                r.counterexample
            )
        })?;
    }
    let bad = m12_refines_m1_site_a_only(&p).unwrap();
    let r = check_refinement(&bad, DEFAULT_STATE_CAP).map_err(|e| e.to_string())?;
    ensure(!r.passed, || "gluing abstract = C2a was accepted".into())?;
    let cx = r.counterexample.ok_or("no counterexample")?;
    let (state, post) = cx.replay(&bad.concrete).map_err(|e| e.to_string())?;
    ensure(
        state == cx.state && post == cx.post && post.is_some(),
        || "counterexample does not replay".into(),
    )?;
    Ok(format!(
        "M11, M12 refine M1; abstract = C2a fails after {} steps then {}",
        cx.path.len(),
        cx.event.unwrap_or_default()
    ))
}

fn criterion_3() -> Verdict {
    let start = Instant::now();
    let (m, cfg) = build_m142(&CommerceParams::default()).unwrap();
    for c1 in 0..32u64 {
        let state = CompoundState {
            active: SYS1.into(),
            valuation: with_c1(&m, c1),
        };
        let (next, rec) = switch_with_record(&m, &cfg, &state).map_err(|e| e.to_string())?;
        let (a, b) = (
            bits(&m, &next.valuation, "C2a"),
            bits(&m, &next.valuation, "C2b"),
        );
        ensure(c1 & !(a | b) == 0, || {
            format!("C1={c1:05b}: selection lost")
        })?;
        ensure(c1 == a | b && rec.hinv_holds, || {
            format!("C1={c1:05b}: horizontal invariant fails")
        })?;
        ensure(rec.pre_variant == rec.post_variant, || {
            format!("C1={c1:05b}: variant jumps")
        })?;
        ensure(a & b == 0, || format!("C1={c1:05b}: carts overlap"))?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(10), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "32/32 pre-switch carts satisfy all four properties in {elapsed:.1?}"
    ))
}

fn last_record(trace: &str) -> serde_json::Value {
    serde_json::from_str(trace.lines().last().unwrap()).unwrap()
}

fn criterion_4() -> Verdict {
    let (m, cfg) = build_m141(&CommerceParams::default()).unwrap();
    let init = &m.def().init;
    let mut pre_states = 0;
    for v in reachable(&m, DEFAULT_STATE_CAP).map_err(|e| e.to_string())? {
        if m.value(&v, ACTIVE) != Some(Value::Nat(0))
            || m.value(&v, DONE) == Some(Value::Bool(true))
        {
            continue;
        }
        pre_states += 1;
        let next = switch(
            &m,
            &cfg,
            &CompoundState {
                active: SYS1.into(),
                valuation: v.clone(),
            },
        )
        .map_err(|e| e.to_string())?;
        for name in ["C2a", "C2b"] {
            ensure(
                m.value(&next.valuation, name) == m.value(init, name),
                || format!("{name} not reset from {v:?}"),
            )?;
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let mut runs = 0;
    for k in 0..=5 {
        for seed in 0..3 {
            let path = dir.path().join(format!("cold-{k}-{seed}.jsonl"));
            let (ks, ss) = (k.to_string(), seed.to_string());
            let out = subst(&[
                "simulate",
                "--scenario",
                "m141",
                "--fail-at",
                &ks,
                "--seed",
                &ss,
                "--out",
                path.to_str().unwrap(),
            ]);
            ensure(out.status.success(), || {
                format!("fail-at {k}: {}", String::from_utf8_lossy(&out.stderr))
            })?;
            let last = last_record(&std::fs::read_to_string(&path).unwrap());
            let union: BTreeSet<String> = ["C2a", "C2b"]
                .iter()
                .flat_map(|c| {
                    last["valuation"][c]
                        .as_array()
                        .unwrap()
                        .iter()
                        .map(|x| x.as_str().unwrap().to_string())
                })
                .collect();
            let all: BTreeSet<String> = (1..=5).map(|i| format!("Prod{i}")).collect();
            ensure(last["valuation"][DONE] == true && union == all, || {
                format!("fail-at {k}: ended at {last}")
            })?;
            runs += 1;
        }
    }
    Ok(format!("{pre_states} pre-switch states reset to Sys2 init; {runs} cold runs complete with union = P"))
}

fn criterion_5() -> Verdict {
    let p = CommerceParams::default();
    let cases = [
        (
            Mutant::DropDisjointnessGuard,
            "m12",
            ObligationKind::Invariants,
        ),
        (Mutant::NonDecreasingSelect, "m11", ObligationKind::Variant),
        (Mutant::HinvFalse, "m142", ObligationKind::Switch),
    ];
    let mut notes = Vec::new();
    for (mutant, name, kind) in cases {
        let clean = &scenarios(name, &p, None).unwrap()[0];
        let find = |s: &subst_core::Scenario| {
            s.check(DEFAULT_STATE_CAP)
                .unwrap()
                .into_iter()
                .find(|r| r.kind == kind)
                .unwrap()
        };
        ensure(find(clean).passed, || {
            format!("{name} {kind} fails without mutation")
        })?;
        let dirty = &scenarios(name, &p, Some(mutant)).unwrap()[0];
        let r = find(dirty);
        ensure(!r.passed, || format!("{mutant} not caught by {kind}"))?;
        let cx = r.counterexample.ok_or("no counterexample")?;
        let (state, post) = cx
            .replay(&dirty.machine)
            .map_err(|e| format!("{mutant}: replay failed: {e}"))?;
        ensure(state == cx.state, || {
            format!("{mutant}: replay reaches another state")
        })?;
        if cx.binding.is_some() {
            ensure(post == cx.post, || {
                format!("{mutant}: replayed post-state differs")
            })?;
        }
        let out = subst(&["check", "--scenario", name, "--mutate", mutant.as_str()]);
        ensure(out.status.code() == Some(1), || {
            format!("{mutant}: cli exit {:?}", out.status.code())
        })?;
        let clean_out = subst(&["check", "--scenario", name]);
        ensure(clean_out.status.code() == Some(0), || {
            format!("{name}: cli exit {:?}", clean_out.status.code())
        })?;
        notes.push(format!("{mutant} flips {name} {kind}"));
    }
    Ok(notes.join("; "))
}

/// Membership-first comparison of two sets over `n` atoms.
fn canonical(n: usize, a: u64, b: u64) -> Ordering {
    (0..n)
        .map(|i| (b >> i & 1).cmp(&(a >> i & 1)))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

fn criterion_6() -> Verdict {
    let mut inputs = 0;
    for n in 1..=5usize {
        for p in 1..1u64 << n {
            let purchase = (0..n)
                .filter(|i| p >> i & 1 == 1)
                .map(|i| format!("Prod{}", i + 1))
                .collect();
            let (m, cfg) = build_m142(&CommerceParams {
                products: n,
                purchase: Some(purchase),
            })
            .unwrap();
            for c1 in (0..1u64 << n).filter(|c| c & !p == 0) {
                let mut best: Option<(u64, u64)> = None;
                for a in 0..1u64 << n {
                    for b in 0..1u64 << n {
                        let ok = a | b == c1 && a & b == 0 && (a | b) & !p == 0;
                        let better = best.is_none_or(|(x, y)| {
                            canonical(n, a, x).then(canonical(n, b, y)).is_lt()
                        });
                        if ok && better {
                            best = Some((a, b));
                        }
                    }
                }
                let got = recover_state(&m, &cfg, &with_c1(&m, c1)).map_err(|e| e.to_string())?;
                let got = (bits(&m, &got, "C2a"), bits(&m, &got, "C2b"));
                ensure(Some(got) == best, || {
                    format!("n={n} P={p:b} C1={c1:b}: {got:?} vs {best:?}")
                })?;
                inputs += 1;
            }
        }
    }
    Ok(format!(
        "{inputs}/{inputs} inputs (N = 1..5, every P, every C1 within P) match"
    ))
}

fn run_to_file(dir: &Path, tag: &str, args: &[&str]) -> Result<Vec<u8>, String> {
    let path = dir.join(format!("{tag}.jsonl"));
    let mut full = vec!["simulate"];
    full.extend_from_slice(args);
    full.extend_from_slice(&["--out", path.to_str().unwrap()]);
    let out = subst(&full);
    ensure(out.status.success(), || {
        format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr))
    })?;
    Ok(std::fs::read(path).unwrap())
}

fn criterion_7() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let commands: &[&[&str]] = &[
        &["--scenario", "m1", "--seed", "1"],
        &["--scenario", "m11", "--seed", "1"],
        &["--scenario", "m12", "--seed", "9"],
        &["--scenario", "m13", "--seed", "4", "--initial", "sys2"],
        &["--scenario", "m141", "--fail-at", "2", "--seed", "5"],
        &[
            "--scenario",
            "m142",
            "--fail-at",
            "3",
            "--policy",
            "hot",
            "--seed",
            "1",
        ],
        &[
            "--scenario",
            "m142",
            "--fail-at",
            "1",
            "--policy",
            "warm",
            "--seed",
            "77",
            "--products",
            "7",
        ],
    ];
    for (i, args) in commands.iter().enumerate() {
        let a = run_to_file(dir.path(), &format!("{i}a"), args)?;
        let b = run_to_file(dir.path(), &format!("{i}b"), args)?;
        ensure(a == b, || format!("{args:?}: traces differ"))?;
    }

    let p = CommerceParams::default();
    let mut machines = 0;
    for name in SCENARIOS {
        for (k, initial) in ["sys1", "sys2"].iter().enumerate() {
            let built = scenarios(name, &p, None).unwrap();
            let Some(s) = built.get(k) else { continue };
            let exported = dir.path().join(format!("{name}-{initial}.json"));
            let reimported = dir.path().join(format!("{name}-{initial}-again.json"));
            let e = exported.to_str().unwrap();
            let r = reimported.to_str().unwrap();
            let out = subst(&[
                "export",
                "--scenario",
                name,
                "--initial",
                initial,
                "--out",
                e,
            ]);
            ensure(out.status.success(), || format!("export {name} failed"))?;
            let out = subst(&["import", "--machine", e, "--out", r]);
            ensure(out.status.success(), || format!("import {name} failed"))?;
            let first = std::fs::read(&exported).unwrap();
            ensure(first == std::fs::read(&reimported).unwrap(), || {
                format!("{name}: re-export differs")
            })?;
            let parsed = parse_machine_file(std::str::from_utf8(&first).unwrap())
                .map_err(|e| e.to_string())?;
            ensure(parsed.machine == s.machine, || {
                format!("{name}: imported machine differs from built-in")
            })?;
            machines += 1;
        }
    }
    Ok(format!(
        "{} simulate commands byte-identical; {machines} machines round-trip",
        commands.len()
    ))
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 7] = [
        ("obligation suite", criterion_1),
        ("refinement", criterion_2),
        ("hot switch", criterion_3),
        ("cold switch", criterion_4),
        ("mutant detection", criterion_5),
        ("recovery oracle", criterion_6),
        ("determinism", criterion_7),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("criterion {} ({name}): PASS: {detail}", i + 1),
            Err(why) => {
                failures += 1;
                println!("criterion {} ({name}): FAIL: {why}", i + 1);
            }
        }
    }
    assert_eq!(failures, 0, "{failures} acceptance criteria failed");
}
