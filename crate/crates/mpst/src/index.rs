//! Index arithmetic: ground evaluation, entailment by Fourier-Motzkin
//! elimination with integer tightening, sort membership and enumeration.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::ast::{BinOp, IndexExpr, IndexSort, IndexTerm, Prop, StdEntry, StdEnv};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IndexError {
    #[error("index expression evaluates to a negative number: {0}")]
    NegativeResult(String),
    #[error("index arithmetic overflow in {0}")]
    Overflow(String),
    #[error("free index variable `{0}` in ground evaluation")]
    FreeVariable(String),
    #[error("exponent base must be a literal in {0}")]
    NonLiteralBase(String),
}

/// Outcome of an entailment query.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    Valid,
    /// Counterexample assignment.
    Invalid(BTreeMap<String, i64>),
    Undecided,
}

impl Verdict {
    pub fn is_valid(&self) -> bool {
        matches!(self, Verdict::Valid)
    }

    pub fn is_invalid(&self) -> bool {
        matches!(self, Verdict::Invalid(_))
    }
}

/// Evaluates a closed index expression over the integers.
pub fn eval_int(e: &IndexExpr) -> Result<i128, IndexError> {
    let shown = || e.to_string();
    match e {
        IndexExpr::Var(v) => Err(IndexError::FreeVariable(v.clone())),
        IndexExpr::Lit(n) => Ok(*n as i128),
        IndexExpr::Bin(op, a, b) => {
            if *op == BinOp::Pow && !matches!(**a, IndexExpr::Lit(_)) {
                return Err(IndexError::NonLiteralBase(shown()));
            }
            let x = eval_int(a)?;
            let y = eval_int(b)?;
            let r = match op {
                BinOp::Add => x.checked_add(y),
                BinOp::Sub => x.checked_sub(y),
                BinOp::Mul => x.checked_mul(y),
                BinOp::Pow => u32::try_from(y).ok().and_then(|y| x.checked_pow(y)),
            };
            r.filter(|r| r.unsigned_abs() <= u64::MAX as u128).ok_or_else(|| IndexError::Overflow(shown()))
        }
    }
}

/// Evaluates a closed index expression to a natural number.
pub fn eval_ground(e: &IndexExpr) -> Result<u64, IndexError> {
    let r = eval_int(e)?;
    if r < 0 {
        return Err(IndexError::NegativeResult(e.to_string()));
    }
    Ok(r as u64)
}

/// `e - 1` when `e` is syntactically a successor: a linear form with
/// non-negative coefficients and a positive constant.
pub fn predecessor_expr(e: &IndexExpr) -> Option<IndexExpr> {
    if e.is_ground() {
        let n = eval_ground(e).ok()?;
        return n.checked_sub(1).map(IndexExpr::Lit);
    }
    let mut atoms = Atoms::default();
    let l = linearise(e, &mut atoms);
    if l.has_atoms() || l.constant < 1 || l.coeffs.values().any(|k| *k < 0) {
        return None;
    }
    Some(simplify(&IndexExpr::sub(e.clone(), IndexExpr::Lit(1))))
}

// ---------------------------------------------------------------------------
// Linear forms

/// `sum coeffs[v] * v + constant`.  Names starting with `#` are opaque atoms
/// standing for nonlinear subterms.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Lin {
    pub coeffs: BTreeMap<String, i128>,
    pub constant: i128,
}

impl Lin {
    fn constant(k: i128) -> Self {
        Lin { coeffs: BTreeMap::new(), constant: k }
    }

    fn var(v: &str) -> Self {
        Lin { coeffs: [(v.to_string(), 1)].into_iter().collect(), constant: 0 }
    }

    fn add(&self, o: &Lin) -> Lin {
        let mut c = self.coeffs.clone();
        for (v, k) in &o.coeffs {
            *c.entry(v.clone()).or_insert(0) += k;
        }
        c.retain(|_, k| *k != 0);
        Lin { coeffs: c, constant: self.constant + o.constant }
    }

    fn scale(&self, s: i128) -> Lin {
        if s == 0 {
            return Lin::constant(0);
        }
        Lin { coeffs: self.coeffs.iter().map(|(v, k)| (v.clone(), k * s)).collect(), constant: self.constant * s }
    }

    fn sub(&self, o: &Lin) -> Lin {
        self.add(&o.scale(-1))
    }

    fn is_const(&self) -> bool {
        self.coeffs.is_empty()
    }

    fn coeff(&self, v: &str) -> i128 {
        self.coeffs.get(v).copied().unwrap_or(0)
    }

    fn has_atoms(&self) -> bool {
        self.coeffs.keys().any(|v| v.starts_with('#'))
    }

    fn magnitude_ok(&self) -> bool {
        const LIMIT: i128 = 1 << 80;
        self.constant.abs() < LIMIT && self.coeffs.values().all(|k| k.abs() < LIMIT)
    }

    /// Divides by the gcd of the coefficients, rounding the constant up:
    /// sound for integer solutions of `self <= 0`.
    fn tighten(mut self) -> Lin {
        let g = self.coeffs.values().fold(0i128, |g, k| gcd(g, k.abs()));
        if g > 1 {
            for k in self.coeffs.values_mut() {
                *k /= g;
            }
            self.constant = div_ceil(self.constant, g);
        }
        self
    }
}

fn gcd(a: i128, b: i128) -> i128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn div_floor(a: i128, b: i128) -> i128 {
    let q = a / b;
    if (a % b != 0) && ((a < 0) != (b < 0)) {
        q - 1
    } else {
        q
    }
}

fn div_ceil(a: i128, b: i128) -> i128 {
    -div_floor(-a, b)
}

/// Nonnegativity facts about atoms introduced during linearisation.
#[derive(Default)]
struct Atoms {
    lower: BTreeMap<String, i128>,
}

fn non_negative_syntax(e: &IndexExpr) -> bool {
    match e {
        IndexExpr::Var(_) | IndexExpr::Lit(_) => true,
        IndexExpr::Bin(BinOp::Sub, _, _) => false,
        IndexExpr::Bin(_, a, b) => non_negative_syntax(a) && non_negative_syntax(b),
    }
}

fn linearise(e: &IndexExpr, atoms: &mut Atoms) -> Lin {
    match e {
        IndexExpr::Var(v) => Lin::var(v),
        IndexExpr::Lit(n) => Lin::constant(*n as i128),
        IndexExpr::Bin(op, a, b) => {
            let la = linearise(a, atoms);
            let lb = linearise(b, atoms);
            match op {
                BinOp::Add => la.add(&lb),
                BinOp::Sub => la.sub(&lb),
                BinOp::Mul if la.is_const() => lb.scale(la.constant),
                BinOp::Mul if lb.is_const() => la.scale(lb.constant),
                BinOp::Pow if la.is_const() && lb.is_const() => {
                    match u32::try_from(lb.constant).ok().and_then(|y| la.constant.checked_pow(y)) {
                        Some(k) if lb.constant >= 0 => Lin::constant(k),
                        _ => atom(e, atoms, None),
                    }
                }
                BinOp::Pow => {
                    let lo = if la.is_const() && la.constant >= 1 { Some(1) } else { None };
                    atom(e, atoms, lo)
                }
                BinOp::Mul => {
                    let lo = if non_negative_syntax(e) { Some(0) } else { None };
                    atom(e, atoms, lo)
                }
            }
        }
    }
}

fn atom(e: &IndexExpr, atoms: &mut Atoms, lower: Option<i128>) -> Lin {
    let name = format!("#{}", e);
    if let Some(l) = lower {
        atoms.lower.insert(name.clone(), l);
    }
    Lin::var(&name)
}

/// Canonical form of an index expression; ground expressions fold to literals.
pub fn simplify(e: &IndexExpr) -> IndexExpr {
    if e.is_ground() {
        if let Ok(n) = eval_ground(e) {
            return IndexExpr::Lit(n);
        }
        return e.clone();
    }
    let mut atoms = Atoms::default();
    let l = linearise(e, &mut atoms);
    if l.has_atoms() {
        return e.clone();
    }
    let mut pos: Option<IndexExpr> = None;
    let mut neg: Vec<IndexExpr> = Vec::new();
    let term = |v: &str, k: i128| {
        if k == 1 {
            IndexExpr::var(v)
        } else {
            IndexExpr::mul(IndexExpr::Lit(k as u64), IndexExpr::var(v))
        }
    };
    for (v, k) in &l.coeffs {
        if *k > 0 {
            let t = term(v, *k);
            pos = Some(match pos {
                None => t,
                Some(p) => IndexExpr::add(p, t),
            });
        } else {
            neg.push(term(v, -*k));
        }
    }
    let mut out = match pos {
        None => IndexExpr::Lit(0),
        Some(p) => p,
    };
    if l.constant > 0 {
        out = if out == IndexExpr::Lit(0) {
            IndexExpr::Lit(l.constant as u64)
        } else {
            IndexExpr::add(out, IndexExpr::Lit(l.constant as u64))
        };
    }
    for n in neg {
        out = IndexExpr::sub(out, n);
    }
    if l.constant < 0 {
        out = IndexExpr::sub(out, IndexExpr::Lit((-l.constant) as u64));
    }
    out
}

/// `a - b` when it is the same constant for every assignment.
pub fn const_difference(a: &IndexExpr, b: &IndexExpr) -> Option<i128> {
    let mut atoms = Atoms::default();
    let l = linearise(a, &mut atoms).sub(&linearise(b, &mut atoms));
    l.coeffs.values().all(|k| *k == 0).then_some(l.constant)
}

/// Truth of `p` when it does not depend on any variable.
pub fn decide_prop(p: &Prop) -> Option<bool> {
    let mut all = true;
    for (a, b) in p.atoms() {
        match const_difference(&a, &b) {
            Some(d) if d > 0 => return Some(false),
            Some(_) => {}
            None => all = false,
        }
    }
    all.then_some(true)
}

// ---------------------------------------------------------------------------
// Fourier-Motzkin

enum Sat {
    Unsat,
    Sat(BTreeMap<String, i128>),
    Unknown,
}

const MAX_CONSTRAINTS: usize = 4000;

/// Decides `/\ cons <= 0` over the integers, soundly for `Unsat`.
fn solve(cons: Vec<Lin>) -> Sat {
    let mut current: BTreeSet<Lin> = BTreeSet::new();
    for c in cons {
        let c = c.tighten();
        if c.is_const() {
            if c.constant > 0 {
                return Sat::Unsat;
            }
            continue;
        }
        current.insert(c);
    }
    let mut stages: Vec<(String, BTreeSet<Lin>)> = Vec::new();
    loop {
        let vars: BTreeSet<String> = current.iter().flat_map(|c| c.coeffs.keys().cloned()).collect();
        let Some(x) = vars
            .iter()
            .min_by_key(|v| {
                let p = current.iter().filter(|c| c.coeff(v) > 0).count() as i64;
                let n = current.iter().filter(|c| c.coeff(v) < 0).count() as i64;
                p * n - p - n
            })
            .cloned()
        else {
            break;
        };
        let mut next = BTreeSet::new();
        let (mut pos, mut neg) = (Vec::new(), Vec::new());
        for c in &current {
            let k = c.coeff(&x);
            if k > 0 {
                pos.push(c);
            } else if k < 0 {
                neg.push(c);
            } else {
                next.insert(c.clone());
            }
        }
        for p in &pos {
            for n in &neg {
                let a = p.coeff(&x);
                let b = -n.coeff(&x);
                let combined = p.scale(b).add(&n.scale(a)).tighten();
                if !combined.magnitude_ok() {
                    return Sat::Unknown;
                }
                if combined.is_const() {
                    if combined.constant > 0 {
                        return Sat::Unsat;
                    }
                    continue;
                }
                next.insert(combined);
            }
        }
        if next.len() > MAX_CONSTRAINTS {
            return Sat::Unknown;
        }
        stages.push((x, std::mem::replace(&mut current, next)));
    }
    // Back substitution for an integer witness.
    let mut assign: BTreeMap<String, i128> = BTreeMap::new();
    for (x, cons) in stages.iter().rev() {
        let mut lo: Option<i128> = None;
        let mut hi: Option<i128> = None;
        for c in cons {
            let a = c.coeff(x);
            if a == 0 {
                continue;
            }
            let mut rest = c.constant;
            for (v, k) in &c.coeffs {
                if v != x {
                    rest += k * assign.get(v).copied().unwrap_or(0);
                }
            }
            if a > 0 {
                let b = div_floor(-rest, a);
                hi = Some(hi.map_or(b, |h| h.min(b)));
            } else {
                let b = div_ceil(rest, -a);
                lo = Some(lo.map_or(b, |l| l.max(b)));
            }
        }
        let val = match (lo, hi) {
            (Some(l), Some(h)) if l > h => return Sat::Unknown,
            (Some(l), _) => l,
            (None, Some(h)) => h.min(0),
            (None, None) => 0,
        };
        assign.insert(x.clone(), val);
    }
    Sat::Sat(assign)
}

// ---------------------------------------------------------------------------
// Contexts

/// Hypotheses extracted from a standard environment.
#[derive(Clone, Debug, Default)]
pub struct IndexCtx {
    hyps: Vec<Prop>,
    vars: BTreeSet<String>,
}

impl IndexCtx {
    pub fn from_env(env: &StdEnv) -> Self {
        let mut ctx = IndexCtx::default();
        for e in &env.entries {
            match e {
                StdEntry::Index(v, s) => {
                    ctx.vars.insert(v.clone());
                    ctx.hyps.push(s.constraints_on(&IndexExpr::var(v)));
                }
                StdEntry::Pred(p) => ctx.hyps.push(p.clone()),
                _ => {}
            }
        }
        ctx
    }

    pub fn assume(&self, p: Prop) -> Self {
        let mut c = self.clone();
        c.hyps.push(p);
        c
    }

    /// Whether `v` occurs in the context.
    pub fn mentions(&self, v: &str) -> bool {
        self.vars.contains(v) || self.hyps.iter().any(|h| h.free_index_vars().contains(v))
    }

    fn constraints(&self, extra: &[(IndexExpr, IndexExpr)]) -> (Vec<Lin>, Atoms) {
        let mut atoms = Atoms::default();
        let mut out = Vec::new();
        let mut vars = self.vars.clone();
        let mut push = |a: &IndexExpr, b: &IndexExpr, atoms: &mut Atoms, vars: &mut BTreeSet<String>| {
            a.free_ix(vars);
            b.free_ix(vars);
            out.push(linearise(a, atoms).sub(&linearise(b, atoms)));
        };
        for h in &self.hyps {
            for (a, b) in h.atoms() {
                push(&a, &b, &mut atoms, &mut vars);
            }
        }
        for (a, b) in extra {
            push(a, b, &mut atoms, &mut vars);
        }
        for v in &vars {
            out.push(Lin::var(v).scale(-1));
        }
        for (a, lo) in &atoms.lower {
            out.push(Lin::constant(*lo).sub(&Lin::var(a)));
        }
        (out, atoms)
    }

    /// Whether the hypotheses admit an integer model.
    pub fn consistent(&self) -> Verdict {
        let (cons, _) = self.constraints(&[]);
        let has_atoms = cons.iter().any(Lin::has_atoms);
        match solve(cons) {
            Sat::Unsat => Verdict::Invalid(BTreeMap::new()),
            Sat::Sat(_) if !has_atoms => Verdict::Valid,
            _ => Verdict::Undecided,
        }
    }
}

/// `ctx |= goal`.
pub fn entails(ctx: &IndexCtx, goal: &Prop) -> Verdict {
    let mut undecided = false;
    for (a, b) in goal.atoms() {
        // refute ctx /\ b + 1 <= a
        let (cons, _) = ctx.constraints(&[(b.clone().succ(), a.clone())]);
        let has_atoms = cons.iter().any(Lin::has_atoms);
        match solve(cons) {
            Sat::Unsat => {}
            Sat::Sat(w) if !has_atoms => {
                return Verdict::Invalid(w.into_iter().map(|(k, v)| (k, v as i64)).collect());
            }
            _ => undecided = true,
        }
    }
    if undecided {
        Verdict::Undecided
    } else {
        Verdict::Valid
    }
}

/// Decides `e1 = e2` under `ctx`.
pub fn entails_eq(ctx: &IndexCtx, a: &IndexExpr, b: &IndexExpr) -> Verdict {
    entails(ctx, &Prop::eq(a.clone(), b.clone()))
}

/// `ctx |= e : I`.
pub fn member(ctx: &IndexCtx, e: &IndexExpr, sort: &IndexSort) -> Verdict {
    entails(ctx, &Prop::and(Prop::Leq(IndexExpr::Lit(0), e.clone()), sort.constraints_on(e)))
}

/// The sort `{ i | i + 1 in I }` of predecessors.
pub fn predecessor_sort(sort: &IndexSort) -> IndexSort {
    match sort {
        IndexSort::Nat => IndexSort::Nat,
        IndexSort::Constrained { var, base, prop } if **base == IndexSort::Nat => {
            if let Prop::Leq(IndexExpr::Var(v), hi) = prop {
                if v == var && !hi.free_index_vars().contains(var) {
                    return match eval_ground(hi) {
                        Ok(0) => empty_sort(),
                        Ok(k) => IndexSort::range(IndexExpr::Lit(k - 1)),
                        Err(_) => IndexSort::range(simplify(&IndexExpr::sub(hi.clone(), IndexExpr::Lit(1)))),
                    };
                }
            }
            generic_predecessor(sort)
        }
        IndexSort::Constrained { .. } => generic_predecessor(sort),
    }
}

fn generic_predecessor(sort: &IndexSort) -> IndexSort {
    let var = crate::ast::fresh_name("r", &sort.free_index_vars());
    let v = IndexExpr::var(&var);
    let prop = sort.constraints_on(&v.clone().succ());
    let prop = Prop::conj(prop.atoms().into_iter().map(|(a, b)| Prop::Leq(simplify(&a), simplify(&b))));
    IndexSort::Constrained { var, base: Box::new(IndexSort::Nat), prop }
}

pub fn empty_sort() -> IndexSort {
    IndexSort::Constrained {
        var: "r".into(),
        base: Box::new(IndexSort::Nat),
        prop: Prop::Leq(IndexExpr::Lit(1), IndexExpr::Lit(0)),
    }
}

const ENUMERATION_LIMIT: i128 = 100_000;

/// Elements of `sort` under `ctx` when that set is finite and decidable.
pub fn enumerate(ctx: &IndexCtx, sort: &IndexSort) -> Option<Vec<u64>> {
    let mut avoid = sort.free_index_vars();
    avoid.extend(ctx.vars.iter().cloned());
    let v = crate::ast::fresh_name("elem", &avoid);
    let ve = IndexExpr::var(&v);
    let probe = ctx.assume(sort.constraints_on(&ve));
    let (cons, _) = probe.constraints(&[]);
    let hi = upper_bound(cons, &v)?;
    if hi > ENUMERATION_LIMIT {
        return None;
    }
    let mut out = Vec::new();
    for k in 0..=hi.max(-1) {
        match member(ctx, &IndexExpr::Lit(k as u64), sort) {
            Verdict::Valid => out.push(k as u64),
            Verdict::Invalid(_) => {}
            Verdict::Undecided => return None,
        }
    }
    Some(out)
}

/// Projects the constraint set onto `v` and returns its upper bound.
fn upper_bound(cons: Vec<Lin>, v: &str) -> Option<i128> {
    let mut current: BTreeSet<Lin> = cons.into_iter().map(Lin::tighten).collect();
    loop {
        if current.iter().any(|c| c.is_const() && c.constant > 0) {
            return Some(-1);
        }
        current.retain(|c| !c.is_const());
        let others: BTreeSet<String> =
            current.iter().flat_map(|c| c.coeffs.keys().cloned()).filter(|x| x != v).collect();
        let Some(x) = others.into_iter().next() else { break };
        let mut next = BTreeSet::new();
        let (mut pos, mut neg) = (Vec::new(), Vec::new());
        for c in &current {
            let k = c.coeff(&x);
            if k > 0 {
                pos.push(c.clone());
            } else if k < 0 {
                neg.push(c.clone());
            } else {
                next.insert(c.clone());
            }
        }
        for p in &pos {
            for n in &neg {
                let a = p.coeff(&x);
                let b = -n.coeff(&x);
                let c = p.scale(b).add(&n.scale(a)).tighten();
                if !c.magnitude_ok() {
                    return None;
                }
                next.insert(c);
            }
        }
        if next.len() > MAX_CONSTRAINTS {
            return None;
        }
        current = next;
    }
    current
        .iter()
        .filter(|c| c.coeff(v) > 0)
        .map(|c| div_floor(-c.constant, c.coeff(v)))
        .min()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(s: &str) -> IndexExpr {
        IndexExpr::var(s)
    }

    fn l(n: u64) -> IndexExpr {
        IndexExpr::Lit(n)
    }

    fn ctx_with(bindings: &[(&str, IndexSort)]) -> IndexCtx {
        let mut env = StdEnv::new();
        for (n, s) in bindings {
            env.push(StdEntry::Index(n.to_string(), s.clone()));
        }
        IndexCtx::from_env(&env)
    }

    #[test]
    fn ground_evaluation() {
        assert_eq!(eval_ground(&IndexExpr::pow(l(2), l(10))), Ok(1024));
        assert!(matches!(eval_ground(&IndexExpr::sub(l(1), l(2))), Err(IndexError::NegativeResult(_))));
        assert_eq!(eval_ground(&IndexExpr::sub(IndexExpr::add(l(1), l(3)), l(2))), Ok(2));
    }

    #[test]
    fn entailment_linear() {
        let ctx = ctx_with(&[("n", IndexSort::Nat), ("i", IndexSort::range(v("n")))]);
        assert_eq!(entails(&ctx, &Prop::Leq(v("i"), IndexExpr::add(v("n"), l(1)))), Verdict::Valid);
        assert!(entails(&ctx, &Prop::Leq(l(1), v("i"))).is_invalid());
    }

    #[test]
    fn integer_tightening() {
        // 2i = 1 has no integer solution.
        let ctx = ctx_with(&[("i", IndexSort::Nat)])
            .assume(Prop::eq(IndexExpr::mul(l(2), v("i")), l(1)));
        assert_eq!(entails(&ctx, &Prop::Leq(l(5), l(3))), Verdict::Valid);
    }

    #[test]
    fn nonlinear_goal_is_undecided() {
        let ctx = ctx_with(&[("n", IndexSort::Nat), ("m", IndexSort::Nat)]);
        let goal = Prop::Leq(IndexExpr::mul(v("n"), v("m")), v("n"));
        assert_eq!(entails(&ctx, &goal), Verdict::Undecided);
    }

    #[test]
    fn predecessor_of_ranges() {
        assert_eq!(predecessor_sort(&IndexSort::range(l(3))), IndexSort::range(l(2)));
        let ctx = IndexCtx::default();
        assert_eq!(enumerate(&ctx, &predecessor_sort(&IndexSort::range(l(0)))), Some(vec![]));
        let lower = IndexSort::between(l(2), l(6));
        assert_eq!(enumerate(&ctx, &lower), Some(vec![2, 3, 4, 5, 6]));
        assert_eq!(enumerate(&ctx, &predecessor_sort(&lower)), Some(vec![1, 2, 3, 4, 5]));
        assert_eq!(enumerate(&ctx, &IndexSort::Nat), None);
    }

    #[test]
    fn simplify_linear() {
        let e = IndexExpr::sub(IndexExpr::add(v("n"), l(1)), l(1));
        assert_eq!(simplify(&e), v("n"));
    }
}
