//! Type reduction: recursor unfolding, ground conditionals, weak head and
//! full normal forms.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::ast::{Action, Guard, IndexExpr, IndexTerm, Participant, Payload, RecNode, Ty};
use crate::index::{const_difference, decide_prop, eval_ground, predecessor_expr, simplify, IndexError};

pub const DEFAULT_FUEL: u64 = 1_000_000;

const MEMO_LIMIT: usize = 200_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NormError {
    #[error("reduction did not terminate within {0} steps")]
    FuelExhausted(u64),
    #[error(transparent)]
    Index(#[from] IndexError),
}

/// Redex selection for [`normal_form_with`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    /// Head first, then continuations left to right.
    Leftmost,
    /// Uniformly random redex at every step.
    Random(u64),
}

/// Truth value of a guard when it is independent of free variables.
pub fn decide_guard(g: &Guard) -> Option<bool> {
    match g {
        Guard::Prop(p) => decide_prop(p),
        Guard::PartEq(p, q) => decide_part_eq(p, q),
    }
}

fn decide_part_eq(p: &Participant, q: &Participant) -> Option<bool> {
    if p.name != q.name || p.indices.len() != q.indices.len() {
        return Some(false);
    }
    let mut all = true;
    for (a, b) in p.indices.iter().zip(&q.indices) {
        match const_difference(a, b) {
            Some(0) => {}
            Some(_) => return Some(false),
            None => all = false,
        }
    }
    all.then_some(true)
}

/// One unfolding of `(R base (i) x. body) @ e`, provided `e` is `0` or a
/// successor.
fn unfold<A: Action>(r: &RecNode<A>, e: &IndexExpr) -> Result<Option<Ty<A>>, NormError> {
    let pred = if e.is_ground() {
        match eval_ground(e)? {
            0 => return Ok(Some(r.base.clone())),
            n => IndexExpr::Lit(n - 1),
        }
    } else {
        match predecessor_expr(e) {
            Some(p) => p,
            None => return Ok(None),
        }
    };
    let again = Ty::App(Box::new(Ty::Rec(Box::new(r.clone()))), pred.clone());
    Ok(Some(r.body.subst_ix(&r.ivar, &pred).subst_tvar(&r.tvar, &again)))
}

/// A single head reduction step, if one applies.
pub fn step<A: Action>(t: &Ty<A>) -> Result<Option<Ty<A>>, NormError> {
    match t {
        Ty::App(f, e) => match f.as_ref() {
            Ty::Rec(r) => unfold(r, e),
            _ => Ok(step(f)?.map(|f| Ty::App(Box::new(f), e.clone()))),
        },
        Ty::Cond(g, a, b) => Ok(decide_guard(g).map(|v| if v { (**a).clone() } else { (**b).clone() })),
        Ty::Mu(x, body) => {
            if matches!(body.as_ref(), Ty::Var(y) if y == x) {
                Ok(Some(Ty::End))
            } else if !body.free_tvars().contains(x) {
                Ok(Some((**body).clone()))
            } else {
                Ok(None)
            }
        }
        _ => Ok(None),
    }
}

/// Reduction engine with a step budget and memo tables.
pub struct Normalizer<A: Action> {
    fuel: u64,
    remaining: u64,
    whnf_memo: HashMap<Ty<A>, Ty<A>>,
    nf_memo: HashMap<Ty<A>, Ty<A>>,
}

impl<A: Action> Default for Normalizer<A> {
    fn default() -> Self {
        Self::new(DEFAULT_FUEL)
    }
}

impl<A: Action> Normalizer<A> {
    pub fn new(fuel: u64) -> Self {
        Normalizer { fuel, remaining: fuel, whnf_memo: HashMap::new(), nf_memo: HashMap::new() }
    }

    fn burn(&mut self) -> Result<(), NormError> {
        if self.remaining == 0 {
            return Err(NormError::FuelExhausted(self.fuel));
        }
        self.remaining -= 1;
        Ok(())
    }

    fn remember(memo: &mut HashMap<Ty<A>, Ty<A>>, k: &Ty<A>, v: &Ty<A>) {
        if memo.len() >= MEMO_LIMIT {
            memo.clear();
        }
        memo.insert(k.clone(), v.clone());
    }

    pub fn whnf(&mut self, t: &Ty<A>) -> Result<Ty<A>, NormError> {
        self.remaining = self.fuel;
        self.whnf_inner(t)
    }

    fn whnf_inner(&mut self, t: &Ty<A>) -> Result<Ty<A>, NormError> {
        if let Some(v) = self.whnf_memo.get(t) {
            return Ok(v.clone());
        }
        let mut cur = t.clone();
        while let Some(next) = step(&cur)? {
            self.burn()?;
            cur = next;
        }
        Self::remember(&mut self.whnf_memo, t, &cur);
        Ok(cur)
    }

    pub fn normal_form(&mut self, t: &Ty<A>) -> Result<Ty<A>, NormError> {
        self.remaining = self.fuel;
        self.nf_inner(t)
    }

    fn nf_inner(&mut self, t: &Ty<A>) -> Result<Ty<A>, NormError> {
        if let Some(v) = self.nf_memo.get(t) {
            return Ok(v.clone());
        }
        let head = self.whnf_inner(t)?;
        let out = match &head {
            Ty::Act(a) => {
                let mut err = None;
                let a = a.map_children(&mut |c| match self.nf_inner(c) {
                    Ok(c) => c,
                    Err(e) => {
                        err.get_or_insert(e);
                        c.clone()
                    }
                });
                if let Some(e) = err {
                    return Err(e);
                }
                Ty::Act(fold_leaves(&a, self.remaining)?)
            }
            Ty::Mu(x, b) => {
                let b = self.nf_inner(b)?;
                let m = Ty::Mu(x.clone(), Box::new(b));
                match step(&m)? {
                    Some(r) => r,
                    None => m,
                }
            }
            Ty::Rec(r) => Ty::Rec(Box::new(RecNode {
                base: self.nf_inner(&r.base)?,
                ivar: r.ivar.clone(),
                sort: r.sort.clone(),
                tvar: r.tvar.clone(),
                body: self.nf_inner(&r.body)?,
            })),
            Ty::App(f, e) => Ty::App(Box::new(self.nf_inner(f)?), simplify(e)),
            Ty::Cond(g, a, b) => Ty::Cond(fold_guard(g), Box::new(self.nf_inner(a)?), Box::new(self.nf_inner(b)?)),
            Ty::Var(_) | Ty::End => head.clone(),
        };
        Self::remember(&mut self.nf_memo, t, &out);
        Ok(out)
    }
}

fn fold_participant(p: &Participant) -> Participant {
    Participant { name: p.name.clone(), indices: p.indices.iter().map(simplify).collect() }
}

fn fold_guard(g: &Guard) -> Guard {
    match g {
        Guard::PartEq(p, q) => Guard::PartEq(fold_participant(p), fold_participant(q)),
        Guard::Prop(p) => Guard::Prop(p.clone()),
    }
}

/// Canonicalises index expressions in a prefix and normalises carried types.
fn fold_leaves<A: Action>(a: &A, fuel: u64) -> Result<A, NormError> {
    let mut err = None;
    let out = a.map_leaves(&mut fold_participant, &mut |u| match fold_payload(u, fuel) {
        Ok(u) => u,
        Err(e) => {
            err.get_or_insert(e);
            u.clone()
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

fn fold_payload(u: &Payload, fuel: u64) -> Result<Payload, NormError> {
    Ok(match u {
        Payload::Shared(g) => Payload::Shared(Box::new(Normalizer::new(fuel.max(1)).normal_form(g)?)),
        Payload::Session(t) => Payload::Session(Box::new(Normalizer::new(fuel.max(1)).normal_form(t)?)),
        other => other.clone(),
    })
}

pub fn whnf<A: Action>(t: &Ty<A>) -> Result<Ty<A>, NormError> {
    Normalizer::default().whnf(t)
}

pub fn normal_form<A: Action>(t: &Ty<A>) -> Result<Ty<A>, NormError> {
    Normalizer::default().normal_form(t)
}

/// Full normalisation under an explicit strategy and budget.
pub fn normal_form_with<A: Action>(t: &Ty<A>, strategy: Strategy, fuel: u64) -> Result<Ty<A>, NormError> {
    match strategy {
        Strategy::Leftmost => Normalizer::new(fuel).normal_form(t),
        Strategy::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut cur = t.clone();
            let mut used = 0;
            loop {
                let mut sites = Vec::new();
                redexes(&cur, &mut Vec::new(), &mut sites)?;
                if sites.is_empty() {
                    break;
                }
                if used == fuel {
                    return Err(NormError::FuelExhausted(fuel));
                }
                used += 1;
                let path = &sites[rng.random_range(0..sites.len())];
                cur = rewrite_at(&cur, path)?;
            }
            fold_all(&cur, fuel - used)
        }
    }
}

fn children<A: Action>(t: &Ty<A>) -> Vec<&Ty<A>> {
    match t {
        Ty::Act(a) => a.children(),
        Ty::Mu(_, b) => vec![b],
        Ty::Rec(r) => vec![&r.base, &r.body],
        Ty::App(f, _) => vec![f],
        Ty::Cond(_, a, b) => vec![a, b],
        Ty::Var(_) | Ty::End => vec![],
    }
}

fn map_child<A: Action>(t: &Ty<A>, k: usize, f: &mut dyn FnMut(&Ty<A>) -> Ty<A>) -> Ty<A> {
    match t {
        Ty::Act(a) => {
            let mut i = 0;
            Ty::Act(a.map_children(&mut |c| {
                let out = if i == k { f(c) } else { c.clone() };
                i += 1;
                out
            }))
        }
        Ty::Mu(x, b) => Ty::Mu(x.clone(), Box::new(f(b))),
        Ty::Rec(r) => {
            let mut r = (**r).clone();
            if k == 0 {
                r.base = f(&r.base);
            } else {
                r.body = f(&r.body);
            }
            Ty::Rec(Box::new(r))
        }
        Ty::App(g, e) => Ty::App(Box::new(f(g)), e.clone()),
        Ty::Cond(g, a, b) if k == 0 => Ty::Cond(g.clone(), Box::new(f(a)), b.clone()),
        Ty::Cond(g, a, b) => Ty::Cond(g.clone(), a.clone(), Box::new(f(b))),
        Ty::Var(_) | Ty::End => t.clone(),
    }
}

fn redexes<A: Action>(t: &Ty<A>, path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) -> Result<(), NormError> {
    // The head of an application is a redex only through the application itself.
    if step(t)?.is_some() && !matches!(t, Ty::App(f, _) if !matches!(**f, Ty::Rec(_))) {
        out.push(path.clone());
    }
    for (k, c) in children(t).into_iter().enumerate() {
        path.push(k);
        redexes(c, path, out)?;
        path.pop();
    }
    Ok(())
}

fn rewrite_at<A: Action>(t: &Ty<A>, path: &[usize]) -> Result<Ty<A>, NormError> {
    match path.split_first() {
        None => Ok(step(t)?.unwrap_or_else(|| t.clone())),
        Some((k, rest)) => {
            let mut err = None;
            let out = map_child(t, *k, &mut |c| match rewrite_at(c, rest) {
                Ok(c) => c,
                Err(e) => {
                    err.get_or_insert(e);
                    c.clone()
                }
            });
            match err {
                Some(e) => Err(e),
                None => Ok(out),
            }
        }
    }
}

/// Index canonicalisation applied to a term with no remaining redexes.
fn fold_all<A: Action>(t: &Ty<A>, fuel: u64) -> Result<Ty<A>, NormError> {
    Ok(match t {
        Ty::Act(a) => {
            let mut err = None;
            let a = a.map_children(&mut |c| match fold_all(c, fuel) {
                Ok(c) => c,
                Err(e) => {
                    err.get_or_insert(e);
                    c.clone()
                }
            });
            if let Some(e) = err {
                return Err(e);
            }
            Ty::Act(fold_leaves(&a, fuel)?)
        }
        Ty::Mu(x, b) => Ty::Mu(x.clone(), Box::new(fold_all(b, fuel)?)),
        Ty::Rec(r) => Ty::Rec(Box::new(RecNode {
            base: fold_all(&r.base, fuel)?,
            ivar: r.ivar.clone(),
            sort: r.sort.clone(),
            tvar: r.tvar.clone(),
            body: fold_all(&r.body, fuel)?,
        })),
        Ty::App(f, e) => Ty::App(Box::new(fold_all(f, fuel)?), simplify(e)),
        Ty::Cond(g, a, b) => Ty::Cond(fold_guard(g), Box::new(fold_all(a, fuel)?), Box::new(fold_all(b, fuel)?)),
        Ty::Var(_) | Ty::End => t.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::*;
    use crate::surface::parse_global;

    fn seq_at(n: u64) -> GlobalType {
        let g = parse_global("pi n : nat. foreach i < n { W[i+1] -> W[i] : nat }").unwrap();
        Ty::app(g, IndexExpr::Lit(n))
    }

    #[test]
    fn recursor_at_zero_is_base() {
        let r = parse_global("(R A -> B : nat. end with (i : nat, x) { x }) @ 0").unwrap();
        assert_eq!(step(&r).unwrap(), Some(parse_global("A -> B : nat. end").unwrap()));
    }

    #[test]
    fn sequence_unrolls() {
        let nf = normal_form(&seq_at(3)).unwrap();
        let expected = parse_global("W[3] -> W[2] : nat. W[2] -> W[1] : nat. W[1] -> W[0] : nat. end").unwrap();
        assert!(alpha_eq(&nf, &expected), "{nf}");
    }

    #[test]
    fn end_and_mu_are_stuck() {
        assert_eq!(step::<GAct>(&Ty::End).unwrap(), None);
        let m = parse_global("mu t. A -> B : nat. t").unwrap();
        assert_eq!(normal_form(&m).unwrap(), m);
        assert_eq!(normal_form(&parse_global("mu t. t").unwrap()).unwrap(), Ty::End);
    }

    #[test]
    fn strategies_agree_on_sequence() {
        let t = seq_at(5);
        let a = normal_form_with(&t, Strategy::Leftmost, DEFAULT_FUEL).unwrap();
        let b = normal_form_with(&t, Strategy::Random(7), DEFAULT_FUEL).unwrap();
        assert!(alpha_eq(&a, &b));
    }

    #[test]
    fn fuel_is_enforced() {
        assert_eq!(normal_form_with(&seq_at(50), Strategy::Leftmost, 3), Err(NormError::FuelExhausted(3)));
    }

    #[test]
    fn symbolic_successor_unfolds() {
        let r = parse_global("(R end with (j : nat, x) { A -> B : nat. x }) @ (i + 1)").unwrap();
        let h = whnf(&r).unwrap();
        assert!(matches!(h, Ty::Act(GAct::Msg { .. })), "{h}");
    }
}
