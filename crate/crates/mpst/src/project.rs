//! Generic end-point projection, mergeability and merge.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::hash::Hash;
use std::thread::LocalKey;

use thiserror::Error;

use crate::ast::*;
use crate::index::{entails, simplify, IndexCtx, Verdict};
use crate::normalize::{decide_guard, normal_form, NormError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProjectError {
    #[error("cannot merge at {}: {left} and {right}", path_str(.path))]
    MergeFailure { path: Vec<String>, left: Box<LocalType>, right: Box<LocalType> },
    #[error(transparent)]
    Norm(#[from] NormError),
}

fn path_str(p: &[String]) -> String {
    if p.is_empty() {
        "top level".into()
    } else {
        p.join(" / ")
    }
}

fn peq(a: &Participant, b: &Participant) -> Guard {
    Guard::PartEq(a.clone(), b.clone())
}

/// `if g then a else b`, resolved at once when `g` does not depend on free
/// variables.
fn cond(g: Guard, a: impl FnOnce() -> Result<LocalType, ProjectError>, b: impl FnOnce() -> Result<LocalType, ProjectError>) -> Result<LocalType, ProjectError> {
    match decide_guard(&g) {
        Some(true) => a(),
        Some(false) => b(),
        None => Ok(Ty::cond(g, a()?, b()?)),
    }
}

/// `mu x. t` with `mu x. x` read as `end` and vacuous binders dropped.
fn mu(x: &str, t: LocalType) -> LocalType {
    match &t {
        Ty::Var(y) if y == x => Ty::End,
        _ if !t.free_tvars().contains(x) => t,
        _ => Ty::mu(x, t),
    }
}

/// `g` projected onto `q`.
pub fn project(g: &GlobalType, q: &Participant) -> Result<LocalType, ProjectError> {
    match g {
        Ty::End => Ok(Ty::End),
        Ty::Var(x) => Ok(Ty::Var(x.clone())),
        Ty::Act(GAct::Msg { from, to, payload, cont }) => {
            let out = |t: LocalType| Ty::act(LAct::Out { peer: to.clone(), payload: payload.clone(), cont: Box::new(t) });
            let inp = |t: LocalType| Ty::act(LAct::In { peer: from.clone(), payload: payload.clone(), cont: Box::new(t) });
            cond(
                peq(q, from),
                || cond(peq(q, to), || Ok(out(inp(project(cont, q)?))), || Ok(out(project(cont, q)?))),
                || cond(peq(q, to), || Ok(inp(project(cont, q)?)), || project(cont, q)),
            )
        }
        Ty::Act(GAct::Branch { from, to, branches }) => {
            let each = || -> Result<BTreeMap<Label, LocalType>, ProjectError> {
                branches.iter().map(|(l, b)| Ok((l.clone(), project(b, q)?))).collect()
            };
            cond(
                peq(q, from),
                || Ok(Ty::act(LAct::Sel { peer: to.clone(), branches: each()? })),
                || {
                    cond(
                        peq(q, to),
                        || Ok(Ty::act(LAct::Bra { peer: from.clone(), branches: each()? })),
                        || {
                            let mut acc: Option<LocalType> = None;
                            for (l, t) in each()? {
                                acc = Some(match acc {
                                    None => t,
                                    Some(a) => merge_at(&a, &t, &mut vec![format!("branch {l}")])?,
                                });
                            }
                            Ok(acc.unwrap_or(Ty::End))
                        },
                    )
                },
            )
        }
        Ty::Mu(x, b) => Ok(mu(x, project(b, q)?)),
        Ty::Rec(r) => Ok(Ty::Rec(Box::new(RecNode {
            base: project(&r.base, q)?,
            ivar: r.ivar.clone(),
            sort: r.sort.clone(),
            tvar: r.tvar.clone(),
            body: project(&r.body, q)?,
        }))),
        Ty::App(f, e) => Ok(Ty::app(project(f, q)?, e.clone())),
        Ty::Cond(guard, a, b) => cond(guard.clone(), || project(a, q), || project(b, q)),
    }
}

const CACHE_LIMIT: usize = 4096;

/// Per-thread memo table lookup; the table is dropped wholesale when full.
pub(crate) fn memo<K: Eq + Hash + Clone, V: Clone>(
    cache: &'static LocalKey<RefCell<HashMap<K, V>>>,
    key: &K,
    f: impl FnOnce() -> V,
) -> V {
    if let Some(hit) = cache.with(|c| c.borrow().get(key).cloned()) {
        return hit;
    }
    let out = f();
    cache.with(|c| {
        let mut c = c.borrow_mut();
        if c.len() >= CACHE_LIMIT {
            c.clear();
        }
        c.insert(key.clone(), out.clone());
    });
    out
}

thread_local! {
    static GLOBAL_NF: RefCell<HashMap<GlobalType, Result<GlobalType, NormError>>> = RefCell::new(HashMap::new());
    static LOCAL_NF: RefCell<HashMap<LocalType, Result<LocalType, NormError>>> = RefCell::new(HashMap::new());
    static GROUND_PROJ: RefCell<HashMap<(GlobalType, Participant), Result<LocalType, ProjectError>>> =
        RefCell::new(HashMap::new());
}

/// Normal form of a global type, memoised per thread. Runtime checking asks
/// for the same shared types at every step.
pub fn global_normal_form(g: &GlobalType) -> Result<GlobalType, NormError> {
    memo(&GLOBAL_NF, g, || normal_form(g))
}

/// Memoised normal form of a local type.
pub fn local_normal_form(t: &LocalType) -> Result<LocalType, NormError> {
    memo(&LOCAL_NF, t, || normal_form(t))
}

/// Projection of the normal form of a closed `g` (memoised).
pub fn project_ground(g: &GlobalType, q: &Participant) -> Result<LocalType, ProjectError> {
    memo(&GROUND_PROJ, &(g.clone(), q.clone()), || {
        let nf = global_normal_form(g)?;
        Ok(local_normal_form(&project(&nf, q)?)?)
    })
}

/// Participants occurring syntactically in `g` (carried types excluded).
pub fn pid(g: &GlobalType) -> BTreeSet<Participant> {
    fn go(g: &GlobalType, out: &mut BTreeSet<Participant>) {
        match g {
            Ty::Act(a) => {
                for p in a.participants() {
                    out.insert(Participant {
                        name: p.name.clone(),
                        indices: p.indices.iter().map(simplify).collect(),
                    });
                }
                for c in a.children() {
                    go(c, out);
                }
            }
            Ty::Mu(_, b) => go(b, out),
            Ty::Rec(r) => {
                go(&r.base, out);
                go(&r.body, out);
            }
            Ty::App(f, _) => go(f, out),
            Ty::Cond(_, a, b) => {
                go(a, out);
                go(b, out);
            }
            Ty::Var(_) | Ty::End => {}
        }
    }
    let mut out = BTreeSet::new();
    go(g, &mut out);
    out
}

// ---------------------------------------------------------------------------
// Merge

pub fn mergeable(a: &LocalType, b: &LocalType) -> bool {
    merge(a, b).is_ok()
}

pub fn merge(a: &LocalType, b: &LocalType) -> Result<LocalType, ProjectError> {
    merge_at(a, b, &mut Vec::new())
}

fn fold_part(p: &Participant) -> Participant {
    Participant { name: p.name.clone(), indices: p.indices.iter().map(simplify).collect() }
}

pub(crate) fn same_participant(a: &Participant, b: &Participant) -> bool {
    fold_part(a) == fold_part(b)
}

pub(crate) fn payload_eq(a: &Payload, b: &Payload) -> bool {
    match (a, b) {
        (Payload::Shared(x), Payload::Shared(y)) => alpha_eq(&**x, &**y),
        (Payload::Session(x), Payload::Session(y)) => alpha_eq(&**x, &**y),
        _ => a == b,
    }
}

/// Renames the binders `x` of `a` and `y` of `b` to a common name.
fn align(x: &str, a: &LocalType, y: &str, b: &LocalType) -> (String, LocalType, LocalType) {
    if x == y {
        return (x.to_string(), a.clone(), b.clone());
    }
    let mut avoid = a.free_tvars();
    avoid.extend(b.free_tvars());
    let z = if !b.free_tvars().contains(x) { x.to_string() } else { fresh_name(x, &avoid) };
    let zt = Ty::Var(z.clone());
    let a2 = if z == x { a.clone() } else { a.subst_tvar(x, &zt) };
    (z.clone(), a2, b.subst_tvar(y, &zt))
}

fn align_ix(i: &str, a: &LocalType, j: &str, b: &LocalType) -> (String, LocalType, LocalType) {
    if i == j {
        return (i.to_string(), a.clone(), b.clone());
    }
    let mut avoid = a.free_index_vars();
    avoid.extend(b.free_index_vars());
    let k = if !b.free_index_vars().contains(i) { i.to_string() } else { fresh_name(i, &avoid) };
    let ke = IndexExpr::var(&k);
    let a2 = if k == i { a.clone() } else { a.subst_ix(i, &ke) };
    (k.clone(), a2, b.subst_ix(j, &ke))
}

fn merge_at(a: &LocalType, b: &LocalType, path: &mut Vec<String>) -> Result<LocalType, ProjectError> {
    let fail = |path: &Vec<String>| ProjectError::MergeFailure { path: path.clone(), left: Box::new(a.clone()), right: Box::new(b.clone()) };
    let sub = |x: &LocalType, y: &LocalType, step: String, path: &mut Vec<String>| {
        path.push(step);
        let r = merge_at(x, y, path);
        path.pop();
        r
    };
    match (a, b) {
        (Ty::End, Ty::End) => Ok(Ty::End),
        (Ty::Var(x), Ty::Var(y)) if x == y => Ok(a.clone()),
        (Ty::Act(LAct::Bra { peer: p, branches: k }), Ty::Act(LAct::Bra { peer: q, branches: j }))
            if same_participant(p, q) =>
        {
            let mut out = BTreeMap::new();
            for (l, t) in k {
                let merged = match j.get(l) {
                    Some(t2) => sub(t, t2, format!("&{l}"), path)?,
                    None => t.clone(),
                };
                out.insert(l.clone(), merged);
            }
            for (l, t) in j {
                out.entry(l.clone()).or_insert_with(|| t.clone());
            }
            Ok(Ty::act(LAct::Bra { peer: p.clone(), branches: out }))
        }
        (Ty::Act(LAct::Sel { peer: p, branches: k }), Ty::Act(LAct::Sel { peer: q, branches: j }))
            if same_participant(p, q) && k.keys().eq(j.keys()) =>
        {
            let mut out = BTreeMap::new();
            for (l, t) in k {
                out.insert(l.clone(), sub(t, &j[l], format!("+{l}"), path)?);
            }
            Ok(Ty::act(LAct::Sel { peer: p.clone(), branches: out }))
        }
        (
            Ty::Act(LAct::Out { peer: p, payload: u, cont: c }),
            Ty::Act(LAct::Out { peer: q, payload: v, cont: d }),
        ) if same_participant(p, q) && payload_eq(u, v) => Ok(Ty::act(LAct::Out {
            peer: p.clone(),
            payload: u.clone(),
            cont: Box::new(sub(c, d, format!("!{p}"), path)?),
        })),
        (
            Ty::Act(LAct::In { peer: p, payload: u, cont: c }),
            Ty::Act(LAct::In { peer: q, payload: v, cont: d }),
        ) if same_participant(p, q) && payload_eq(u, v) => Ok(Ty::act(LAct::In {
            peer: p.clone(),
            payload: u.clone(),
            cont: Box::new(sub(c, d, format!("?{p}"), path)?),
        })),
        (Ty::Mu(x, s), Ty::Mu(y, t)) => {
            let (z, s, t) = align(x, s, y, t);
            Ok(Ty::mu(&z, sub(&s, &t, format!("mu {z}"), path)?))
        }
        (Ty::Rec(r), Ty::Rec(s)) if alpha_eq(&r.sort, &s.sort) => {
            let base = sub(&r.base, &s.base, "base".into(), path)?;
            let (x, b1, b2) = align(&r.tvar, &r.body, &s.tvar, &s.body);
            let (i, b1, b2) = align_ix(&r.ivar, &b1, &s.ivar, &b2);
            let body = sub(&b1, &b2, "step".into(), path)?;
            Ok(Ty::Rec(Box::new(RecNode { base, ivar: i, sort: r.sort.clone(), tvar: x, body })))
        }
        (Ty::App(f, e), Ty::App(g, e2)) if simplify(e) == simplify(e2) => {
            Ok(Ty::app(sub(f, g, format!("@ {e}"), path)?, e.clone()))
        }
        (Ty::Cond(g, x, y), Ty::Cond(h, x2, y2)) if g == h => {
            Ok(Ty::cond(g.clone(), sub(x, x2, "then".into(), path)?, sub(y, y2, "else".into(), path)?))
        }
        _ if alpha_eq(a, b) => Ok(a.clone()),
        _ => Err(fail(path)),
    }
}

// ---------------------------------------------------------------------------
// Simplification under hypotheses

/// Truth of a guard under `ctx`, when the index engine can tell.
pub fn guard_verdict(ctx: &IndexCtx, g: &Guard) -> Option<bool> {
    if let Some(v) = decide_guard(g) {
        return Some(v);
    }
    let p = match g {
        Guard::PartEq(a, b) => {
            if a.name != b.name || a.indices.len() != b.indices.len() {
                return Some(false);
            }
            Prop::conj(a.indices.iter().zip(&b.indices).map(|(x, y)| Prop::eq(x.clone(), y.clone())))
        }
        Guard::Prop(p) => p.clone(),
    };
    if entails(ctx, &p) == Verdict::Valid {
        return Some(true);
    }
    if ctx.assume(p).consistent().is_invalid() {
        return Some(false);
    }
    None
}

/// Hypothesis for the else branch of `g`, when it is a conjunction.
pub fn negated_guard(g: &Guard) -> Option<Prop> {
    match g {
        Guard::Prop(Prop::Leq(a, b)) => Some(Prop::Leq(b.clone().succ(), a.clone())),
        _ => None,
    }
}

pub(crate) fn guard_prop(g: &Guard) -> Option<Prop> {
    match g {
        Guard::PartEq(a, b) if a.name == b.name && a.indices.len() == b.indices.len() => {
            Some(Prop::conj(a.indices.iter().zip(&b.indices).map(|(x, y)| Prop::eq(x.clone(), y.clone()))))
        }
        Guard::PartEq(..) => None,
        Guard::Prop(p) => Some(p.clone()),
    }
}

/// Prunes conditional branches refuted by `ctx`, assuming each guard in its
/// then branch.
pub fn simplify_projection<A: Action>(t: &Ty<A>, ctx: &IndexCtx) -> Ty<A> {
    match t {
        Ty::Cond(g, a, b) => match guard_verdict(ctx, g) {
            Some(true) => simplify_projection(a, ctx),
            Some(false) => simplify_projection(b, ctx),
            None => {
                let ca = match guard_prop(g) {
                    Some(p) => ctx.assume(p),
                    None => ctx.clone(),
                };
                let cb = match negated_guard(g) {
                    Some(p) => ctx.assume(p),
                    None => ctx.clone(),
                };
                let a = simplify_projection(a, &ca);
                let b = simplify_projection(b, &cb);
                if a == b {
                    a
                } else {
                    Ty::cond(g.clone(), a, b)
                }
            }
        },
        Ty::Act(a) => Ty::Act(a.map_children(&mut |c| simplify_projection(c, ctx))),
        Ty::Mu(x, b) => Ty::Mu(x.clone(), Box::new(simplify_projection(b, ctx))),
        Ty::Rec(r) => {
            // A binder shadowing a variable of `ctx` is renamed, so the outer
            // hypotheses do not leak into the body.
            let (ivar, body) = if ctx.mentions(&r.ivar) {
                let mut avoid = r.body.free_index_vars();
                avoid.insert(r.ivar.clone());
                let mut v = fresh_name(&r.ivar, &avoid);
                while ctx.mentions(&v) {
                    avoid.insert(v);
                    v = fresh_name(&r.ivar, &avoid);
                }
                let body = r.body.subst_ix(&r.ivar, &IndexExpr::var(&v));
                (v, body)
            } else {
                (r.ivar.clone(), r.body.clone())
            };
            let inner = ctx.assume(crate::index::predecessor_sort(&r.sort).constraints_on(&IndexExpr::var(&ivar)));
            Ty::Rec(Box::new(RecNode {
                base: simplify_projection(&r.base, ctx),
                ivar,
                sort: r.sort.clone(),
                tvar: r.tvar.clone(),
                body: simplify_projection(&body, &inner),
            }))
        }
        Ty::App(f, e) => Ty::app(simplify_projection(f, ctx), e.clone()),
        Ty::Var(_) | Ty::End => t.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::{parse_global, parse_local};

    fn w(k: u64) -> Participant {
        Participant::at("W", k)
    }

    #[test]
    fn ok_quit_projection_merges() {
        let g = parse_global(
            "W[0] -> W[1] { ok: W[1] -> W[2] { ok: W[1] -> W[2] : bool. end }, \
             quit: W[1] -> W[2] { quit: W[1] -> W[2] : nat. end } }",
        )
        .unwrap();
        let t = project(&g, &w(2)).unwrap();
        let expected = parse_local("&<W[1], { ok: ?<W[1], bool>; end, quit: ?<W[1], nat>; end }>").unwrap();
        assert_eq!(t, expected);
    }

    #[test]
    fn naive_branching_does_not_merge() {
        let g = parse_global("W[0] -> W[1] { ok: W[1] -> W[2] : bool. end, quit: W[1] -> W[2] : nat. end }").unwrap();
        assert!(matches!(project(&g, &w(2)), Err(ProjectError::MergeFailure { .. })));
    }

    #[test]
    fn merge_laws() {
        let a = parse_local("&<p, { a: end }>").unwrap();
        let b = parse_local("&<p, { b: end }>").unwrap();
        assert_eq!(merge(&a, &b).unwrap(), parse_local("&<p, { a: end, b: end }>").unwrap());
        assert_eq!(merge(&a, &a).unwrap(), a);
        let out = parse_local("!<p, nat>; end").unwrap();
        let inp = parse_local("?<p, nat>; end").unwrap();
        assert!(!mergeable(&out, &inp));
        assert!(!mergeable(&parse_local("?<W1, bool>; end").unwrap(), &parse_local("?<W1, nat>; end").unwrap()));
    }

    #[test]
    fn mu_x_x_is_end() {
        let g = parse_global("A -> B : nat. mu x. C -> D : nat. x").unwrap();
        let t = project(&g, &Participant::named("A")).unwrap();
        assert_eq!(t, parse_local("!<B, nat>; end").unwrap());
    }

    #[test]
    fn sequence_projection_at_ground_instance() {
        let g = parse_global("pi n : nat. foreach i < n { W[i+1] -> W[i] : nat }").unwrap();
        let t = project_ground(&Ty::app(g, IndexExpr::Lit(3)), &w(1)).unwrap();
        assert_eq!(t, parse_local("?<W[2], nat>; !<W[0], nat>; end").unwrap());
    }

    #[test]
    fn symbolic_guards_stay_and_prune() {
        let g = parse_global("Alice -> Bob : nat. end").unwrap();
        assert_eq!(project(&g, &Participant::named("Carol")).unwrap(), Ty::End);
        let sym = parse_global("W[i] -> W[0] : nat. end").unwrap();
        let t = project(&sym, &w(0)).unwrap();
        assert!(matches!(t, Ty::Cond(..)));
        let ctx = IndexCtx::default().assume(Prop::Leq(IndexExpr::Lit(1), IndexExpr::var("i")));
        assert_eq!(simplify_projection(&t, &ctx), parse_local("?<W[i], nat>; end").unwrap());
    }
}
