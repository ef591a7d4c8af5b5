mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mpst::ast::*;
use mpst::equiv::subtype;
use mpst::index::{entails, eval_ground, IndexCtx, Verdict};
use mpst::kinding::kind_global;
use mpst::normalize::{normal_form, normal_form_with, Strategy};
use mpst::project::merge;
use mpst::protocols;
use mpst::simulate::{run, Config, RunOptions, Scheduler};
use mpst::surface::{export_json, import_json, parse_global, parse_local};

use common::{merge_case, well_kinded_global};

const FUEL: u64 = 1_000_000;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn leftmost_and_random_strategies_agree(seed in any::<u64>(), order in any::<u64>()) {
        let (_, g) = well_kinded_global(seed);
        let a = normal_form_with(&g, Strategy::Leftmost, FUEL).expect("leftmost terminates");
        let b = normal_form_with(&g, Strategy::Random(order), FUEL).expect("random terminates");
        prop_assert!(alpha_eq(&a, &b), "{g}\n  leftmost: {a}\n  random:   {b}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn merge_is_a_greatest_lower_bound(seed in any::<u64>()) {
        let (a, b, lb) = merge_case(seed);
        let env = StdEnv::new();
        let m = merge(&a, &b).map_err(|e| TestCaseError::fail(format!("{a} / {b}: {e}")))?;
        prop_assert!(subtype(&env, &m, &a), "{m} </= {a}");
        prop_assert!(subtype(&env, &m, &b), "{m} </= {b}");
        prop_assert!(subtype(&env, &lb, &a) && subtype(&env, &lb, &b), "{lb} is not below both sides");
        prop_assert!(subtype(&env, &lb, &m), "{lb} </= {m}");
    }

    #[test]
    fn merge_commutes(seed in any::<u64>()) {
        let (a, b, _) = merge_case(seed);
        let ab = merge(&a, &b).unwrap();
        let ba = merge(&b, &a).unwrap();
        prop_assert!(alpha_eq(&ab, &ba), "{ab} vs {ba}");
    }

    #[test]
    fn print_then_parse_is_identity(seed in any::<u64>()) {
        let (_, g) = well_kinded_global(seed);
        let back = parse_global(&g.to_string()).map_err(|e| TestCaseError::fail(format!("{g}: {e}")))?;
        prop_assert!(alpha_eq(&g, &back), "{g}\n  reparsed: {back}");
        let (a, b, _) = merge_case(seed);
        for t in [a, b] {
            let back = parse_local(&t.to_string()).unwrap();
            prop_assert!(alpha_eq(&t, &back));
        }
    }

    #[test]
    fn json_round_trip(seed in any::<u64>()) {
        let (_, g) = well_kinded_global(seed);
        let back: GlobalType = import_json(&export_json(&g)).unwrap();
        prop_assert_eq!(&g, &back);
        let nf = normal_form(&g).unwrap();
        let back: GlobalType = import_json(&export_json(&nf)).unwrap();
        prop_assert_eq!(nf, back);
    }

    #[test]
    fn normal_forms_are_idempotent_and_keep_the_kind(seed in any::<u64>()) {
        let (_, g) = well_kinded_global(seed);
        let nf = normal_form(&g).unwrap();
        prop_assert_eq!(normal_form(&nf).unwrap(), nf.clone());
        prop_assert!(kind_global(&StdEnv::new(), &nf).is_ok(), "{nf} lost its kind");
    }

    #[test]
    fn seeded_runs_are_reproducible(seed in any::<u64>(), n in 2u64..5) {
        let p = protocols::ring(n).unwrap();
        let c = Config::new(&p.env(), &p.program()).unwrap();
        let a = run(&c, Scheduler::Random(seed), &RunOptions::new()).unwrap();
        let b = run(&c, Scheduler::Random(seed), &RunOptions::new()).unwrap();
        prop_assert_eq!(a.trace_jsonl(), b.trace_jsonl());
        prop_assert_eq!(a.verdict.as_str(), "done");
    }
}

// ---------------------------------------------------------------------------
// Index entailment against brute force

const VARS: [&str; 2] = ["x", "y"];
const BOX: u64 = 10;

fn linear(rng: &mut ChaCha8Rng) -> IndexExpr {
    let mut e = IndexExpr::Lit(rng.random_range(0..4));
    for v in VARS {
        match rng.random_range(0..3) {
            0 => {}
            1 => e = IndexExpr::add(e, IndexExpr::var(v)),
            _ => e = IndexExpr::add(e, IndexExpr::mul(IndexExpr::Lit(rng.random_range(2..4)), IndexExpr::var(v))),
        }
    }
    e
}

fn holds(p: &Prop, x: u64, y: u64) -> bool {
    let at = |e: &IndexExpr| {
        let e = e.subst_ix("x", &IndexExpr::Lit(x)).subst_ix("y", &IndexExpr::Lit(y));
        eval_ground(&e).expect("ground")
    };
    match p {
        Prop::True => true,
        Prop::Leq(a, b) => at(a) <= at(b),
        Prop::And(a, b) => holds(a, x, y) && holds(b, x, y),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn entailment_agrees_with_enumeration(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Bounded box, so "valid" can be checked exhaustively.
        let mut hyp = Prop::conj(VARS.iter().map(|v| Prop::leq(IndexExpr::var(v), IndexExpr::Lit(BOX))));
        for _ in 0..rng.random_range(0..3) {
            hyp = Prop::and(hyp, Prop::leq(linear(&mut rng), linear(&mut rng)));
        }
        let goal = Prop::leq(linear(&mut rng), linear(&mut rng));
        let env = StdEnv::new()
            .with(StdEntry::Index("x".into(), IndexSort::Nat))
            .with(StdEntry::Index("y".into(), IndexSort::Nat))
            .with(StdEntry::Pred(hyp.clone()));
        let ctx = IndexCtx::from_env(&env);
        let models: Vec<(u64, u64)> =
            (0..=BOX).flat_map(|x| (0..=BOX).map(move |y| (x, y))).filter(|&(x, y)| holds(&hyp, x, y)).collect();
        match entails(&ctx, &goal) {
            Verdict::Valid => {
                for &(x, y) in &models {
                    prop_assert!(holds(&goal, x, y), "{goal} fails at x={x}, y={y} under {hyp}");
                }
            }
            Verdict::Invalid(cex) => {
                let x = cex.get("x").copied().unwrap_or(0) as u64;
                let y = cex.get("y").copied().unwrap_or(0) as u64;
                prop_assert!(holds(&hyp, x, y) && !holds(&goal, x, y), "bad counterexample {cex:?} for {goal} under {hyp}");
            }
            Verdict::Undecided => {}
        }
    }
}
