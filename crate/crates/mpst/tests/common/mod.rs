//! Seed-driven generators shared by the property tests and the acceptance
//! suite.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mpst::ast::*;
use mpst::kinding::kind_global;
use mpst::surface::parse_global;

const NAMES: [&str; 4] = ["A", "B", "C", "D"];
const LABELS: [&str; 4] = ["ok", "quit", "more", "done"];

struct GenCtx {
    /// Index variables in scope.
    ivars: Vec<String>,
    /// Type variables usable in tail position.
    tvars: Vec<String>,
    fresh: usize,
}

impl GenCtx {
    fn fresh(&mut self, base: &str) -> String {
        self.fresh += 1;
        format!("{base}{}", self.fresh)
    }
}

fn participant(rng: &mut ChaCha8Rng, ctx: &GenCtx, name: &str) -> String {
    match ctx.ivars.choose(rng) {
        Some(i) if rng.random_bool(0.5) => {
            if rng.random_bool(0.5) {
                format!("{name}[{i} + 1]")
            } else {
                format!("{name}[{i}]")
            }
        }
        _ => format!("{name}[{}]", rng.random_range(0..3)),
    }
}

fn pair(rng: &mut ChaCha8Rng, ctx: &GenCtx) -> (String, String) {
    let mut names = NAMES.to_vec();
    let a = names.remove(rng.random_range(0..names.len()));
    let b = names[rng.random_range(0..names.len())];
    (participant(rng, ctx, a), participant(rng, ctx, b))
}

fn leaf(rng: &mut ChaCha8Rng, ctx: &GenCtx) -> String {
    match ctx.tvars.choose(rng) {
        Some(x) if rng.random_bool(0.7) => x.clone(),
        _ => "end".into(),
    }
}

fn global(rng: &mut ChaCha8Rng, ctx: &mut GenCtx, depth: u32) -> String {
    if depth == 0 {
        return leaf(rng, ctx);
    }
    match rng.random_range(0..10) {
        0 => leaf(rng, ctx),
        1..=3 => {
            let (p, q) = pair(rng, ctx);
            let u = if rng.random_bool(0.7) { "nat" } else { "bool" };
            format!("{p} -> {q} : {u}. {}", global(rng, ctx, depth - 1))
        }
        4 => {
            let (p, q) = pair(rng, ctx);
            let n = rng.random_range(1..=2);
            let mut labels = LABELS.to_vec();
            let mut arms = Vec::new();
            for _ in 0..n {
                let l = labels.remove(rng.random_range(0..labels.len()));
                arms.push(format!("{l}: {}", global(rng, ctx, depth - 1)));
            }
            format!("{p} -> {q} {{ {} }}", arms.join(", "))
        }
        5..=7 => {
            let m: u64 = rng.random_range(0..=3);
            let e = rng.random_range(0..=m);
            let base = global(rng, ctx, depth - 1);
            let i = ctx.fresh("i");
            let x = ctx.fresh("x");
            ctx.ivars.push(i.clone());
            ctx.tvars.push(x.clone());
            let body = global(rng, ctx, depth - 1);
            ctx.ivars.pop();
            ctx.tvars.pop();
            format!("(R {base} with ({i} : [0..{m}], {x}) {{ {body} }}) @ {e}")
        }
        8 => {
            let c = rng.random_range(0..3);
            let lhs = ctx.ivars.choose(rng).cloned().unwrap_or_else(|| rng.random_range(0..3).to_string());
            let a = global(rng, ctx, depth - 1);
            let b = global(rng, ctx, depth - 1);
            format!("(if {lhs} <= {c} then {a} else {b})")
        }
        _ => {
            let t = ctx.fresh("t");
            let (p, q) = pair(rng, ctx);
            ctx.tvars.push(t.clone());
            let body = global(rng, ctx, depth - 1);
            ctx.tvars.pop();
            format!("mu {t}. {p} -> {q} : nat. {body}")
        }
    }
}

/// Source of a random closed global type. Recursor sorts are finite ranges
/// and every application index lies in its range.
pub fn global_source(seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ctx = GenCtx { ivars: Vec::new(), tvars: Vec::new(), fresh: 0 };
    let depth = rng.random_range(1..=5);
    global(&mut rng, &mut ctx, depth)
}

/// A well-kinded closed global type: the first candidate from `seed` on that
/// parses and kinds.
pub fn well_kinded_global(seed: u64) -> (u64, GlobalType) {
    let mut s = seed;
    loop {
        let src = global_source(s);
        let g = parse_global(&src).unwrap_or_else(|e| panic!("generated `{src}` does not parse: {e}"));
        if kind_global(&StdEnv::new(), &g).is_ok() {
            return (s, g);
        }
        s = s.wrapping_add(0x9E37_79B9_7F4A_7C15);
    }
}

// ---------------------------------------------------------------------------
// Local types for merging

/// Shape shared by both sides of a mergeable pair.
#[derive(Clone, Debug)]
pub enum Skel {
    End,
    Var(String),
    Mu(String, Box<Skel>),
    Out(Participant, Box<Skel>),
    In(Participant, Box<Skel>),
    Bra(Participant, BTreeMap<Label, Skel>),
    Sel(Participant, BTreeMap<Label, Skel>),
}

fn peer(rng: &mut ChaCha8Rng) -> Participant {
    Participant::at(NAMES[rng.random_range(0..NAMES.len())], rng.random_range(0..2))
}

fn labels(rng: &mut ChaCha8Rng, lo: usize) -> Vec<Label> {
    let n = rng.random_range(lo..=3);
    let mut all = LABELS.to_vec();
    (0..n).map(|_| Label::new(all.remove(rng.random_range(0..all.len())))).collect()
}

fn skel(rng: &mut ChaCha8Rng, tvar: Option<&str>, depth: u32) -> Skel {
    if depth == 0 {
        return match tvar {
            Some(t) if rng.random_bool(0.5) => Skel::Var(t.into()),
            _ => Skel::End,
        };
    }
    match rng.random_range(0..7) {
        0 => skel(rng, tvar, 0),
        1 => Skel::Out(peer(rng), Box::new(skel(rng, tvar, depth - 1))),
        2 => Skel::In(peer(rng), Box::new(skel(rng, tvar, depth - 1))),
        3 | 4 => {
            let p = peer(rng);
            Skel::Bra(p, labels(rng, 1).into_iter().map(|l| (l, skel(rng, tvar, depth - 1))).collect())
        }
        _ => {
            let p = peer(rng);
            Skel::Sel(p, labels(rng, 1).into_iter().map(|l| (l, skel(rng, tvar, depth - 1))).collect())
        }
    }
}

pub fn random_skel(rng: &mut ChaCha8Rng) -> Skel {
    let depth = rng.random_range(1..=4);
    if rng.random_bool(0.25) {
        Skel::Mu("t".into(), Box::new(Skel::Out(peer(rng), Box::new(skel(rng, Some("t"), depth)))))
    } else {
        skel(rng, None, depth)
    }
}

fn nonempty_subset(rng: &mut ChaCha8Rng, n: usize) -> Vec<bool> {
    let mut keep: Vec<bool> = (0..n).map(|_| rng.random_bool(0.6)).collect();
    if !keep.iter().any(|k| *k) {
        keep[rng.random_range(0..n)] = true;
    }
    keep
}

/// One side of a mergeable pair: each branching keeps a non-empty subset of
/// its labels, everything else is kept.
pub fn side(s: &Skel, rng: &mut ChaCha8Rng) -> LocalType {
    match s {
        Skel::End => Ty::End,
        Skel::Var(x) => Ty::Var(x.clone()),
        Skel::Mu(x, b) => Ty::mu(x, side(b, rng)),
        Skel::Out(p, k) => Ty::act(LAct::Out { peer: p.clone(), payload: Payload::Nat, cont: Box::new(side(k, rng)) }),
        Skel::In(p, k) => Ty::act(LAct::In { peer: p.clone(), payload: Payload::Bool, cont: Box::new(side(k, rng)) }),
        Skel::Bra(p, bs) => {
            let keep = nonempty_subset(rng, bs.len());
            let branches = bs.iter().zip(keep).filter(|(_, k)| *k).map(|((l, t), _)| (l.clone(), side(t, rng))).collect();
            Ty::act(LAct::Bra { peer: p.clone(), branches })
        }
        Skel::Sel(p, bs) => {
            Ty::act(LAct::Sel { peer: p.clone(), branches: bs.iter().map(|(l, t)| (l.clone(), side(t, rng))).collect() })
        }
    }
}

/// A type below every side of `s`: branchings offer all labels of the shape
/// plus an extra one, selections keep a non-empty subset.
pub fn lower_bound(s: &Skel, rng: &mut ChaCha8Rng) -> LocalType {
    match s {
        Skel::End => Ty::End,
        Skel::Var(x) => Ty::Var(x.clone()),
        Skel::Mu(x, b) => Ty::mu(x, lower_bound(b, rng)),
        Skel::Out(p, k) => {
            Ty::act(LAct::Out { peer: p.clone(), payload: Payload::Nat, cont: Box::new(lower_bound(k, rng)) })
        }
        Skel::In(p, k) => {
            Ty::act(LAct::In { peer: p.clone(), payload: Payload::Bool, cont: Box::new(lower_bound(k, rng)) })
        }
        Skel::Bra(p, bs) => {
            let mut branches: BTreeMap<Label, LocalType> =
                bs.iter().map(|(l, t)| (l.clone(), lower_bound(t, rng))).collect();
            if rng.random_bool(0.5) {
                branches.insert(Label::new("extra"), Ty::End);
            }
            Ty::act(LAct::Bra { peer: p.clone(), branches })
        }
        Skel::Sel(p, bs) => {
            let keep = nonempty_subset(rng, bs.len());
            let branches =
                bs.iter().zip(keep).filter(|(_, k)| *k).map(|((l, t), _)| (l.clone(), lower_bound(t, rng))).collect();
            Ty::act(LAct::Sel { peer: p.clone(), branches })
        }
    }
}

/// A mergeable pair and a common lower bound, all from one seed.
pub fn merge_case(seed: u64) -> (LocalType, LocalType, LocalType) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = random_skel(&mut rng);
    let a = side(&s, &mut rng);
    let b = side(&s, &mut rng);
    let lb = lower_bound(&s, &mut rng);
    (a, b, lb)
}
