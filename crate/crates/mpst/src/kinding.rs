//! Well-formed environments and kinding of types, participants, sorts and
//! process types.

use std::collections::{BTreeMap, BTreeSet};

use crate::ast::*;
use crate::diag::{Diagnostic, Trail};
use crate::index::{entails, member, predecessor_sort, simplify, IndexCtx, Verdict};

type KResult<T> = Result<T, Diagnostic>;

/// Rule names for the two instances of the generic kinding rules.
trait KindRules: Action {
    const PREFIX: &'static str;
    fn act_rule(&self) -> &'static str;
}

impl KindRules for GAct {
    const PREFIX: &'static str = "K";
    fn act_rule(&self) -> &'static str {
        match self {
            GAct::Msg { .. } => "KIO",
            GAct::Branch { .. } => "KBra",
        }
    }
}

impl KindRules for LAct {
    const PREFIX: &'static str = "KL";
    fn act_rule(&self) -> &'static str {
        match self {
            LAct::Out { .. } => "KLOut",
            LAct::In { .. } => "KLIn",
            LAct::Sel { .. } => "KLSel",
            LAct::Bra { .. } => "KLBra",
        }
    }
}

fn dom(g: &StdEnv) -> BTreeSet<String> {
    g.entries
        .iter()
        .filter_map(|e| match e {
            StdEntry::Sort(n, _) | StdEntry::Index(n, _) | StdEntry::ProcVar(n, _) => Some(n.clone()),
            StdEntry::Pred(_) => None,
        })
        .collect()
}

/// Checks `g |- Env`, returning every failed premise.
pub fn check_env(g: &StdEnv) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut prefix = StdEnv::new();
    let mut k = Kinder::default();
    for e in &g.entries {
        let names = dom(&prefix);
        let res = match e {
            StdEntry::Pred(p) => k.check_prop(&prefix, p, "EPre").and_then(|_| {
                match IndexCtx::from_env(&prefix.with(e.clone())).consistent() {
                    Verdict::Invalid(_) => Err(k.trail.error("EPre", format!("assumption {p} is unsatisfiable"))),
                    _ => Ok(()),
                }
            }),
            StdEntry::Sort(u, s) if !names.contains(u) => k.payload(&prefix, s).map(|_| ()),
            StdEntry::Index(i, s) if !names.contains(i) => k.sort(&prefix, s),
            StdEntry::ProcVar(x, t) if !names.contains(x) => k.proctype(&prefix, t).map(|_| ()),
            StdEntry::Sort(n, _) | StdEntry::Index(n, _) | StdEntry::ProcVar(n, _) => {
                let rule = match e {
                    StdEntry::Sort(..) => "ESort",
                    StdEntry::Index(..) => "EIndex",
                    _ => "VEnv",
                };
                Err(k.trail.error(rule, format!("`{n}` is already bound")))
            }
        };
        if let Err(d) = res {
            out.push(d);
        }
        prefix.push(e.clone());
    }
    out
}

pub fn kind_global(g: &StdEnv, t: &GlobalType) -> KResult<Kind> {
    Kinder::default().ty(g, &BTreeMap::new(), t)
}

pub fn kind_local(g: &StdEnv, t: &LocalType) -> KResult<Kind> {
    Kinder::default().ty(g, &BTreeMap::new(), t)
}

pub fn kind_proctype(g: &StdEnv, t: &ProcessType) -> KResult<Kind> {
    Kinder::default().proctype(g, t)
}

pub fn kind_participant(g: &StdEnv, p: &Participant) -> KResult<()> {
    Kinder::default().participant(g, p)
}

pub fn kind_payload(g: &StdEnv, u: &Payload) -> KResult<()> {
    Kinder::default().payload(g, u)
}

pub fn check_sort(g: &StdEnv, s: &IndexSort) -> KResult<()> {
    Kinder::default().sort(g, s)
}

/// `g |- e : nat` including non-negativity of every subtraction.
pub fn check_index(g: &StdEnv, e: &IndexExpr) -> KResult<()> {
    Kinder::default().index(g, e, "TIOp")
}

/// Kind equality: equal shapes, sorts with the same members.
pub fn kind_eq(g: &StdEnv, a: &Kind, b: &Kind) -> Verdict {
    match (a, b) {
        (Kind::Type, Kind::Type) => Verdict::Valid,
        (Kind::Pi(i, s, k), Kind::Pi(j, t, l)) => {
            let mut avoid = g.index_vars();
            avoid.extend(a.free_index_vars());
            avoid.extend(b.free_index_vars());
            let v = fresh_name(i, &avoid);
            let ve = IndexExpr::var(&v);
            let ctx = IndexCtx::from_env(g).assume(Prop::Leq(IndexExpr::Lit(0), ve.clone()));
            let forward = entails(&ctx.assume(s.constraints_on(&ve)), &t.constraints_on(&ve));
            let back = entails(&ctx.assume(t.constraints_on(&ve)), &s.constraints_on(&ve));
            let g2 = g.with(StdEntry::Index(v.clone(), s.clone()));
            let rest = kind_eq(&g2, &k.subst_ix(i, &ve), &l.subst_ix(j, &ve));
            combine([forward, back, rest])
        }
        _ => Verdict::Invalid(BTreeMap::new()),
    }
}

fn combine(vs: impl IntoIterator<Item = Verdict>) -> Verdict {
    let mut undecided = false;
    for v in vs {
        match v {
            Verdict::Invalid(w) => return Verdict::Invalid(w),
            Verdict::Undecided => undecided = true,
            Verdict::Valid => {}
        }
    }
    if undecided {
        Verdict::Undecided
    } else {
        Verdict::Valid
    }
}

/// Binds the index variable `i : s` in `g`, renaming it when the name is
/// already taken.  Returns the extended environment and the name used.
pub fn bind_index(g: &StdEnv, i: &str, s: IndexSort) -> (StdEnv, String) {
    let names = dom(g);
    let name = if names.contains(i) { fresh_name(i, &names) } else { i.to_string() };
    (g.with(StdEntry::Index(name.clone(), s)), name)
}

#[derive(Default)]
struct Kinder {
    trail: Trail,
}

impl Kinder {
    fn enter<T>(&mut self, frame: String, f: impl FnOnce(&mut Self) -> KResult<T>) -> KResult<T> {
        self.trail.push(frame);
        let r = f(self);
        self.trail.pop();
        r
    }

    fn verdict(&self, v: Verdict, rule: &str, what: impl Fn() -> String) -> KResult<()> {
        match v {
            Verdict::Valid => Ok(()),
            Verdict::Invalid(w) if w.is_empty() => Err(self.trail.error(rule, what())),
            Verdict::Invalid(w) => {
                let w: Vec<String> = w.iter().filter(|(k, _)| !k.starts_with('#')).map(|(k, v)| format!("{k}={v}")).collect();
                Err(self.trail.error(rule, format!("{} (counterexample {})", what(), w.join(", "))))
            }
            Verdict::Undecided => Err(self.trail.undecided(rule, format!("cannot decide: {}", what()))),
        }
    }

    fn unbound(&self, g: &StdEnv, fv: BTreeSet<String>, rule: &str) -> KResult<()> {
        let bound = g.index_vars();
        match fv.into_iter().find(|v| !bound.contains(v)) {
            Some(v) => Err(self.trail.error(rule, format!("unbound index variable `{v}`"))),
            None => Ok(()),
        }
    }

    fn check_prop(&mut self, g: &StdEnv, p: &Prop, rule: &str) -> KResult<()> {
        self.unbound(g, p.free_index_vars(), rule)?;
        for (a, b) in p.atoms() {
            self.index(g, &a, rule)?;
            self.index(g, &b, rule)?;
        }
        Ok(())
    }

    fn index(&mut self, g: &StdEnv, e: &IndexExpr, rule: &str) -> KResult<()> {
        self.unbound(g, e.free_index_vars(), "TVari")?;
        let ctx = IndexCtx::from_env(g);
        let mut stack = vec![e];
        while let Some(e) = stack.pop() {
            if let IndexExpr::Bin(op, a, b) = e {
                if *op == BinOp::Pow && !matches!(**a, IndexExpr::Lit(_)) {
                    return Err(self.trail.error(rule, format!("exponent base of {e} is not a literal")));
                }
                if *op == BinOp::Sub {
                    let goal = Prop::Leq((**b).clone(), (**a).clone());
                    self.verdict(entails(&ctx, &goal), rule, || format!("{e} may be negative"))?;
                }
                stack.push(a);
                stack.push(b);
            }
        }
        Ok(())
    }

    fn sort(&mut self, g: &StdEnv, s: &IndexSort) -> KResult<()> {
        match s {
            IndexSort::Nat => Ok(()),
            IndexSort::Constrained { var, base, prop } => {
                self.sort(g, base)?;
                let (g2, v) = bind_index(g, var, (**base).clone());
                let prop = if v == *var { prop.clone() } else { prop.subst_ix(var, &IndexExpr::var(&v)) };
                self.unbound(&g2, prop.free_index_vars(), "KIIndex")
            }
        }
    }

    fn participant(&mut self, g: &StdEnv, p: &Participant) -> KResult<()> {
        for e in &p.indices {
            self.enter(format!("TP: participant {p}"), |k| k.index(g, e, "TIOp"))?;
        }
        Ok(())
    }

    fn payload(&mut self, g: &StdEnv, u: &Payload) -> KResult<()> {
        match u {
            Payload::Nat | Payload::Bool | Payload::Complex => Ok(()),
            Payload::Shared(t) => self.enter(format!("KMar: <{t}>"), |k| {
                if let Some(x) = t.free_tvars().into_iter().next() {
                    return Err(k.trail.error("KMar", format!("shared channel type has free type variable `{x}`")));
                }
                k.expect_type(g, t, "KMar")
            }),
            Payload::Session(t) => self.enter(format!("KLDeleg: {t}"), |k| {
                if let Some(x) = t.free_tvars().into_iter().next() {
                    return Err(k.trail.error("KLDeleg", format!("delegated type has free type variable `{x}`")));
                }
                k.expect_type(g, t, "KLDeleg")
            }),
        }
    }

    fn expect_type<A: KindRules>(&mut self, g: &StdEnv, t: &Ty<A>, rule: &str) -> KResult<()>
    where
        Ty<A>: std::fmt::Display,
    {
        match self.ty(g, &BTreeMap::new(), t)? {
            Kind::Type => Ok(()),
            k => Err(self.trail.error(rule, format!("{t} has kind {k}, expected Type"))),
        }
    }

    fn ty_type<A: KindRules>(&mut self, g: &StdEnv, tv: &BTreeMap<String, Kind>, t: &Ty<A>, rule: &str) -> KResult<()>
    where
        Ty<A>: std::fmt::Display,
    {
        match self.ty(g, tv, t)? {
            Kind::Type => Ok(()),
            k => Err(self.trail.error(rule, format!("continuation {t} has kind {k}, expected Type"))),
        }
    }

    fn ty<A: KindRules>(&mut self, g: &StdEnv, tv: &BTreeMap<String, Kind>, t: &Ty<A>) -> KResult<Kind>
    where
        Ty<A>: std::fmt::Display,
    {
        let p = A::PREFIX;
        match t {
            Ty::End => Ok(Kind::Type),
            Ty::Var(x) => tv.get(x).cloned().ok_or_else(|| self.trail.error(&format!("{p}Var"), format!("unbound type variable `{x}`"))),
            Ty::Act(a) => {
                let rule = a.act_rule();
                self.enter(format!("{rule}: {}", short(t)), |k| {
                    for q in a.participants() {
                        k.participant(g, q)?;
                    }
                    for u in a.payloads() {
                        k.payload(g, u)?;
                    }
                    for c in a.children() {
                        k.ty_type(g, tv, c, rule)?;
                    }
                    Ok(Kind::Type)
                })
            }
            Ty::Mu(x, b) => self.enter(format!("{p}Rec: {}", short(t)), |k| {
                let mut tv2 = tv.clone();
                tv2.insert(x.clone(), Kind::Type);
                k.ty_type(g, &tv2, b, &format!("{p}Rec"))?;
                Ok(Kind::Type)
            }),
            Ty::Rec(r) => self.enter(format!("{p}Rcr: {}", short(t)), |k| k.rec(g, tv, r)),
            Ty::App(f, e) => self.enter(format!("{p}App: {}", short(t)), |k| {
                let rule = format!("{p}App");
                match k.ty(g, tv, f)? {
                    Kind::Pi(j, s, body) => {
                        k.index(g, e, &rule)?;
                        let ctx = IndexCtx::from_env(g);
                        k.verdict(member(&ctx, e, &s), &rule, || format!("argument {e} is not in {s}"))?;
                        Ok(body.subst_ix(&j, e))
                    }
                    Kind::Type => Err(k.trail.error(&rule, format!("{f} has kind Type and cannot be applied"))),
                }
            }),
            Ty::Cond(guard, a, b) => self.enter(format!("{p}Cond: {}", short(t)), |k| {
                let (g_then, g_else) = match guard {
                    Guard::PartEq(x, y) => {
                        k.participant(g, x)?;
                        k.participant(g, y)?;
                        let mut g_then = g.clone();
                        if x.name == y.name && x.indices.len() == y.indices.len() {
                            for (i, j) in x.indices.iter().zip(&y.indices) {
                                g_then.push(StdEntry::Pred(Prop::eq(i.clone(), j.clone())));
                            }
                        }
                        (g_then, g.clone())
                    }
                    Guard::Prop(pr) => {
                        k.check_prop(g, pr, &format!("{p}Cond"))?;
                        let atoms = pr.atoms();
                        let g_else = match atoms.as_slice() {
                            [(l, r)] => g.with(StdEntry::Pred(Prop::Leq(r.clone().succ(), l.clone()))),
                            _ => g.clone(),
                        };
                        (g.with(StdEntry::Pred(pr.clone())), g_else)
                    }
                };
                let ka = k.ty(&g_then, tv, a)?;
                let kb = k.ty(&g_else, tv, b)?;
                k.verdict(kind_eq(g, &ka, &kb), &format!("{p}Cond"), || format!("branches have kinds {ka} and {kb}"))?;
                Ok(ka)
            }),
        }
    }

    fn rec<A: KindRules>(&mut self, g: &StdEnv, tv: &BTreeMap<String, Kind>, r: &RecNode<A>) -> KResult<Kind>
    where
        Ty<A>: std::fmt::Display,
    {
        let p = A::PREFIX;
        let rule = format!("{p}Rcr");
        self.sort(g, &r.sort)?;
        let pred = predecessor_sort(&r.sort);
        let (g_body, i) = bind_index(g, &r.ivar, pred);
        let body = if i == r.ivar { r.body.clone() } else { r.body.subst_ix(&r.ivar, &IndexExpr::var(&i)) };
        let j = fresh_name("j", &dom(&g_body));
        let base_kind = self.ty(g, tv, &r.base)?;
        // Pi-shaped recursor: the body does not recurse and the base is `end`.
        if r.base == Ty::End && !body.free_tvars().contains(&r.tvar) {
            let kb = self.ty(&g_body, tv, &body)?;
            if kb != Kind::Type {
                let shifted = kb.subst_ix(&i, &simplify(&IndexExpr::sub(IndexExpr::var(&j), IndexExpr::Lit(1))));
                return Ok(Kind::Pi(j, r.sort.clone(), Box::new(shifted)));
            }
        }
        let mut tv2 = tv.clone();
        tv2.insert(r.tvar.clone(), base_kind.clone());
        let kb = self.ty(&g_body, &tv2, &body)?;
        self.verdict(kind_eq(&g_body, &base_kind, &kb), &rule, || {
            format!("base has kind {base_kind} but the step has kind {kb}")
        })?;
        Ok(Kind::Pi(j, r.sort.clone(), Box::new(base_kind)))
    }

    fn proctype(&mut self, g: &StdEnv, t: &ProcessType) -> KResult<Kind> {
        match t {
            ProcessType::Sess(d) => {
                for (c, ty) in d {
                    self.enter(format!("KPCh: {c}"), |k| {
                        if let Chan::Endpoint(_, p) = c {
                            k.participant(g, p)?;
                        }
                        for m in &ty.msgs {
                            let (MsgType::Out(q, _) | MsgType::Sel(q, _)) = m;
                            k.participant(g, q)?;
                            if let MsgType::Out(_, u) = m {
                                k.payload(g, u)?;
                            }
                        }
                        match &ty.cont {
                            Some(t) => k.ty_type(g, &BTreeMap::new(), t, "KPCh"),
                            None => Ok(()),
                        }
                    })?;
                }
                Ok(Kind::Type)
            }
            ProcessType::Pi(i, s, body) => self.enter(format!("KPProd: {i}"), |k| {
                k.sort(g, s)?;
                let (g2, v) = bind_index(g, i, s.clone());
                let body = if v == *i { (**body).clone() } else { body.subst_ix(i, &IndexExpr::var(&v)) };
                let kb = k.proctype(&g2, &body)?;
                Ok(Kind::Pi(v, s.clone(), Box::new(kb)))
            }),
        }
    }
}

fn short<T: std::fmt::Display>(t: &T) -> String {
    let s = t.to_string();
    if s.chars().count() > 60 {
        let cut: String = s.chars().take(57).collect();
        format!("{cut}...")
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::{parse_global, parse_local};

    fn n_env() -> StdEnv {
        StdEnv::new().with(StdEntry::Index("n".into(), IndexSort::Nat))
    }

    #[test]
    fn message_kinds_to_type() {
        let g = parse_global("Alice -> Bob : nat. end").unwrap();
        assert_eq!(kind_global(&StdEnv::new(), &g), Ok(Kind::Type));
    }

    #[test]
    fn recursor_kinds_to_pi_over_its_sort() {
        let g = parse_global("R end with (i : [0..n], x) { W[i + 1] -> W[i] : nat. x }").unwrap();
        let k = kind_global(&n_env(), &g).unwrap();
        let Kind::Pi(_, s, body) = &k else { panic!("{k}") };
        assert!(alpha_eq(s, &IndexSort::range(IndexExpr::var("n"))));
        assert_eq!(**body, Kind::Type);
    }

    #[test]
    fn shared_payload_must_be_closed() {
        let g = parse_global("mu x. A -> B : <C -> D : nat. x>. end").unwrap();
        let e = kind_global(&StdEnv::new(), &g).unwrap_err();
        assert_eq!(e.rule, "KMar");
    }

    #[test]
    fn local_kinding_mirrors_global() {
        assert_eq!(kind_local(&StdEnv::new(), &parse_local("!<Bob, nat>; end").unwrap()), Ok(Kind::Type));
        let t = parse_local("R end with (i : [0..n], x) { ?<W[i + 1], nat>; x }").unwrap();
        assert!(matches!(kind_local(&n_env(), &t), Ok(Kind::Pi(..))));
        let bad = parse_local("mu x. !<A, chan(?<B, nat>; x)>; end").unwrap();
        assert_eq!(kind_local(&StdEnv::new(), &bad).unwrap_err().rule, "KLDeleg");
    }

    #[test]
    fn environments() {
        assert!(check_env(&StdEnv::new()).is_empty());
        let ok = n_env().with(StdEntry::Pred(Prop::Leq(IndexExpr::Lit(2), IndexExpr::var("n"))));
        assert!(check_env(&ok).is_empty());
        let g = Payload::Shared(Box::new(Ty::End));
        let dup = StdEnv::new().with(StdEntry::Sort("a".into(), g.clone())).with(StdEntry::Sort("a".into(), g));
        assert_eq!(check_env(&dup).len(), 1);
    }

    #[test]
    fn participants_must_be_non_negative() {
        let g = n_env().with(StdEntry::Pred(Prop::Leq(IndexExpr::Lit(1), IndexExpr::var("n"))));
        let p = Participant::indexed("W", vec![IndexExpr::sub(IndexExpr::var("n"), IndexExpr::Lit(1))]);
        assert!(kind_participant(&g, &p).is_ok());
        assert!(kind_participant(&StdEnv::new(), &Participant::named("Alice")).is_ok());
        let i_env = StdEnv::new().with(StdEntry::Index("i".into(), IndexSort::range(IndexExpr::Lit(3))));
        let bad = Participant::indexed("W", vec![IndexExpr::sub(IndexExpr::var("i"), IndexExpr::Lit(5))]);
        let d = kind_participant(&i_env, &bad).unwrap_err();
        assert!(d.message.contains("i=0"), "{d}");
    }

    #[test]
    fn process_types() {
        assert_eq!(kind_proctype(&StdEnv::new(), &ProcessType::Sess(SessionEnv::new())), Ok(Kind::Type));
        let mut d = SessionEnv::new();
        d.insert(Chan::Var("y".into()), GenType::local(parse_local("!<p, nat>; end").unwrap()));
        let t = ProcessType::Pi("i".into(), IndexSort::range(IndexExpr::var("n")), Box::new(ProcessType::Sess(d)));
        assert!(matches!(kind_proctype(&n_env(), &t), Ok(Kind::Pi(..))));
    }

    #[test]
    fn nested_pi_families_kind() {
        let g = parse_global("pi n : nat. pi m : nat. foreach i < n { foreach j < m { W[i][j] -> W[i][j] : nat } }").unwrap();
        let k = kind_global(&StdEnv::new(), &g).unwrap();
        assert!(matches!(&k, Kind::Pi(_, _, inner) if matches!(**inner, Kind::Pi(..))), "{k}");
    }
}
