//! Type equivalence (staged, with a rule trace), isomorphism up to µ
//! folding, and subtyping.

use std::collections::{BTreeMap, HashSet};
use std::fmt::{self, Display};

use serde_json::{json, Value as J};

use crate::ast::{
    alpha_eq, fresh_name, Action, Canonical, GAct, GenType, GlobalType, Guard, IndexExpr, IndexSort, IndexTerm,
    LAct, LocalType, MsgType, Participant, Payload, ProcessType, Prop, RecNode, SessionEnv, StdEntry, StdEnv, Ty,
};
use crate::index::{entails, enumerate, predecessor_sort, IndexCtx, Verdict};
use crate::kinding::bind_index;
use crate::normalize::{Normalizer, DEFAULT_FUEL};
use crate::project::{guard_prop, guard_verdict, same_participant};
use crate::surface::ToJson;

/// Outcome of an equivalence query.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EqVerdict {
    Equal,
    NotEqual,
    /// The staged rules ran out (infinite index domain, or the index engine
    /// could not decide a premise).
    Undecided,
}

impl EqVerdict {
    pub fn is_equal(self) -> bool {
        self == EqVerdict::Equal
    }

    /// Conjunction: any refutation wins over undecided.
    fn and(self, other: EqVerdict) -> EqVerdict {
        use EqVerdict::*;
        match (self, other) {
            (NotEqual, _) | (_, NotEqual) => NotEqual,
            (Undecided, _) | (_, Undecided) => Undecided,
            _ => Equal,
        }
    }

    fn of_index(v: Verdict) -> EqVerdict {
        match v {
            Verdict::Valid => EqVerdict::Equal,
            Verdict::Invalid(_) => EqVerdict::NotEqual,
            Verdict::Undecided => EqVerdict::Undecided,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EqVerdict::Equal => "equal",
            EqVerdict::NotEqual => "not-equal",
            EqVerdict::Undecided => "undecided",
        }
    }
}

impl Display for EqVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One node of the derivation, in pre-order.  `depth` gives the tree shape.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceStep {
    pub depth: usize,
    pub rule: &'static str,
    pub left: String,
    pub right: String,
    pub verdict: EqVerdict,
}

#[derive(Clone, Debug)]
pub struct EquivOutcome {
    pub verdict: EqVerdict,
    pub trace: Vec<TraceStep>,
    /// First refuted or undecided premise, if any.
    pub reason: Option<String>,
}

impl EquivOutcome {
    pub fn is_equal(&self) -> bool {
        self.verdict.is_equal()
    }

    /// Rule names in trace order.
    pub fn rules(&self) -> Vec<&'static str> {
        self.trace.iter().map(|s| s.rule).collect()
    }

    pub fn render_trace(&self) -> String {
        let mut out = String::new();
        for s in &self.trace {
            out.push_str(&format!(
                "{:width$}{} [{}] {} == {}\n",
                "",
                s.rule,
                s.verdict,
                s.left,
                s.right,
                width = s.depth * 2
            ));
        }
        out
    }
}

impl ToJson for EquivOutcome {
    fn to_json(&self) -> J {
        json!({
            "verdict": self.verdict.as_str(),
            "reason": self.reason,
            "trace": self.trace.iter().map(|s| json!({
                "depth": s.depth,
                "rule": s.rule,
                "verdict": s.verdict.as_str(),
                "left": s.left,
                "right": s.right,
            })).collect::<Vec<_>>(),
        })
    }
}

/// Per-layer rule names.
pub trait EquivRules: Action {
    fn equiv_rule(&self) -> &'static str;
}

impl EquivRules for GAct {
    fn equiv_rule(&self) -> &'static str {
        match self {
            GAct::Msg { .. } => "WfIO",
            GAct::Branch { .. } => "WfBra",
        }
    }
}

impl EquivRules for LAct {
    fn equiv_rule(&self) -> &'static str {
        match self {
            LAct::Out { .. } | LAct::In { .. } => "WfIO",
            LAct::Sel { .. } | LAct::Bra { .. } => "WfBra",
        }
    }
}

/// The prefix with participants, payloads and continuations erased: two
/// prefixes match structurally iff their skeletons are equal.
fn skeleton<A: Action>(a: &A) -> A {
    a.map_leaves(&mut |_| Participant::named("_"), &mut |_| Payload::Nat).map_children(&mut |_| Ty::End)
}

const TRACE_LIMIT: usize = 20_000;
const SHOW_LIMIT: usize = 160;

fn show<T: Display>(t: &T) -> String {
    let s = t.to_string();
    if s.chars().count() <= SHOW_LIMIT {
        s
    } else {
        let mut c: String = s.chars().take(SHOW_LIMIT).collect();
        c.push_str("...");
        c
    }
}

#[derive(Clone)]
struct Scope {
    env: StdEnv,
    ctx: IndexCtx,
}

impl Scope {
    fn new(env: &StdEnv) -> Self {
        Scope { env: env.clone(), ctx: IndexCtx::from_env(env) }
    }

    fn assume(&self, p: Prop) -> Self {
        Scope { env: self.env.with(StdEntry::Pred(p.clone())), ctx: self.ctx.assume(p) }
    }

    /// Binds a fresh index variable (based on `hint`) of sort `s`.
    fn bind(&self, hint: &str, s: IndexSort) -> (Self, String) {
        let (env, name) = bind_index(&self.env, hint, s);
        let ctx = IndexCtx::from_env(&env);
        (Scope { env, ctx }, name)
    }
}

/// Case hypotheses covering the negation of a conjunction of atoms:
/// `not (A1 /\ .. /\ Ak)` is `not A1 \/ (A1 /\ not A2) \/ ...`.
fn negation_cases(p: &Prop) -> Vec<Prop> {
    let atoms = p.atoms();
    let mut out = Vec::new();
    for (k, (a, b)) in atoms.iter().enumerate() {
        let mut hyps: Vec<Prop> = atoms[..k].iter().map(|(x, y)| Prop::Leq(x.clone(), y.clone())).collect();
        hyps.push(Prop::Leq(b.clone().succ(), a.clone()));
        out.push(Prop::conj(hyps));
    }
    out
}

/// Both index sorts denote the same set under `ctx`.
pub(crate) fn sort_eq(ctx: &IndexCtx, a: &IndexSort, b: &IndexSort) -> EqVerdict {
    if alpha_eq(a, b) {
        return EqVerdict::Equal;
    }
    let mut avoid = a.free_index_vars();
    avoid.extend(b.free_index_vars());
    let v = fresh_name("s", &avoid);
    let ve = IndexExpr::var(&v);
    let (ca, cb) = (a.constraints_on(&ve), b.constraints_on(&ve));
    let there = entails(&ctx.assume(ca.clone()), &cb);
    let back = entails(&ctx.assume(cb), &ca);
    EqVerdict::of_index(there).and(EqVerdict::of_index(back))
}

pub(crate) fn participant_eq(ctx: &IndexCtx, a: &Participant, b: &Participant) -> EqVerdict {
    if a.name != b.name || a.indices.len() != b.indices.len() {
        return EqVerdict::NotEqual;
    }
    if same_participant(a, b) {
        return EqVerdict::Equal;
    }
    let p = Prop::conj(a.indices.iter().zip(&b.indices).map(|(x, y)| Prop::eq(x.clone(), y.clone())));
    EqVerdict::of_index(entails(ctx, &p))
}

/// Renames the binders of two recursors to common fresh names.
fn align_rec<A: Action>(scope: &Scope, r1: &RecNode<A>, r2: &RecNode<A>) -> (Scope, Ty<A>, Ty<A>) {
    let (inner, i) = scope.bind(&r1.ivar, predecessor_sort(&r1.sort));
    let iv = IndexExpr::var(&i);
    let mut avoid = r1.body.free_tvars();
    avoid.extend(r2.body.free_tvars());
    let x = if r1.tvar == r2.tvar { r1.tvar.clone() } else { fresh_name(&r1.tvar, &avoid) };
    let b1 = r1.body.subst_ix(&r1.ivar, &iv).subst_tvar(&r1.tvar, &Ty::tvar(&x));
    let b2 = r2.body.subst_ix(&r2.ivar, &iv).subst_tvar(&r2.tvar, &Ty::tvar(&x));
    (inner, b1, b2)
}

fn align_mu<A: Action>(x: &str, a: &Ty<A>, y: &str, b: &Ty<A>) -> (Ty<A>, Ty<A>) {
    if x == y {
        return (a.clone(), b.clone());
    }
    let mut avoid = a.free_tvars();
    avoid.extend(b.free_tvars());
    let z = fresh_name(x, &avoid);
    (a.subst_tvar(x, &Ty::tvar(&z)), b.subst_tvar(y, &Ty::tvar(&z)))
}

struct Checker<A: Action> {
    norm: Normalizer<A>,
    trace: Vec<TraceStep>,
    depth: usize,
    reason: Option<String>,
}

impl<A: EquivRules> Checker<A>
where
    Ty<A>: Display + Canonical,
{
    fn new() -> Self {
        Checker { norm: Normalizer::new(DEFAULT_FUEL), trace: Vec::new(), depth: 0, reason: None }
    }

    fn open(&mut self, l: &dyn Fn() -> String, r: &dyn Fn() -> String) -> Option<usize> {
        if self.trace.len() >= TRACE_LIMIT {
            return None;
        }
        self.trace.push(TraceStep { depth: self.depth, rule: "?", left: l(), right: r(), verdict: EqVerdict::Equal });
        Some(self.trace.len() - 1)
    }

    fn close(&mut self, idx: Option<usize>, rule: &'static str, v: EqVerdict) {
        if let Some(i) = idx {
            self.trace[i].rule = rule;
            self.trace[i].verdict = v;
        }
    }

    fn fail(&mut self, v: EqVerdict, why: impl FnOnce() -> String) -> EqVerdict {
        if v != EqVerdict::Equal && self.reason.is_none() {
            self.reason = Some(why());
        }
        v
    }

    /// Weak head normal form, also resolving guards decided by the scope
    /// and pushing applications through undecided conditionals.
    fn head(&mut self, scope: &Scope, t: &Ty<A>) -> Result<Ty<A>, String> {
        let mut cur = self.norm.whnf(t).map_err(|e| e.to_string())?;
        loop {
            let next = match &cur {
                Ty::Cond(g, a, b) => guard_verdict(&scope.ctx, g).map(|v| if v { (**a).clone() } else { (**b).clone() }),
                Ty::App(f, e) => match f.as_ref() {
                    Ty::Cond(g, a, b) => Some(match guard_verdict(&scope.ctx, g) {
                        Some(true) => Ty::app((**a).clone(), e.clone()),
                        Some(false) => Ty::app((**b).clone(), e.clone()),
                        None => Ty::cond(g.clone(), Ty::app((**a).clone(), e.clone()), Ty::app((**b).clone(), e.clone())),
                    }),
                    _ => None,
                },
                _ => None,
            };
            match next {
                Some(n) => cur = self.norm.whnf(&n).map_err(|e| e.to_string())?,
                None => return Ok(cur),
            }
        }
    }

    fn node(&mut self, scope: &Scope, a: &Ty<A>, b: &Ty<A>) -> EqVerdict {
        let idx = self.open(&|| show(a), &|| show(b));
        self.depth += 1;
        let (rule, v) = self.decide(scope, a, b, idx);
        self.depth -= 1;
        self.close(idx, rule, v);
        v
    }

    fn decide(&mut self, scope: &Scope, a: &Ty<A>, b: &Ty<A>, idx: Option<usize>) -> (&'static str, EqVerdict) {
        if alpha_eq(a, b) {
            return ("Refl", EqVerdict::Equal);
        }
        let (ha, hb) = match (self.head(scope, a), self.head(scope, b)) {
            (Ok(x), Ok(y)) => (x, y),
            (Err(e), _) | (_, Err(e)) => return ("WfBase", self.fail(EqVerdict::Undecided, || e)),
        };
        if &ha != a || &hb != b {
            return ("WfBase", self.node(scope, &ha, &hb));
        }
        match (a, b) {
            (Ty::Cond(g, x, y), _) => ("WfCase", self.case_split(scope, g, x, y, b, true)),
            (_, Ty::Cond(g, x, y)) => ("WfCase", self.case_split(scope, g, x, y, a, false)),
            (Ty::End, Ty::End) => ("WfEnd", EqVerdict::Equal),
            (Ty::Var(x), Ty::Var(y)) => {
                let v = if x == y { EqVerdict::Equal } else { EqVerdict::NotEqual };
                ("WfRVar", self.fail(v, || format!("type variables {x} and {y} differ")))
            }
            (Ty::Act(p), Ty::Act(q)) => (p.equiv_rule(), self.act(scope, p, q)),
            (Ty::Mu(x, s), Ty::Mu(y, t)) => {
                let (s, t) = align_mu(x, s, y, t);
                ("WfPRec", self.node(scope, &s, &t))
            }
            (Ty::Rec(r1), Ty::Rec(r2)) => self.rec(scope, a, b, r1, r2, idx),
            (Ty::App(f, i), Ty::App(g, j)) => {
                let iv = self.fail(EqVerdict::of_index(entails(&scope.ctx, &Prop::eq(i.clone(), j.clone()))), || {
                    format!("indices {i} and {j} are not provably equal")
                });
                if iv == EqVerdict::NotEqual {
                    return ("WfApp", iv);
                }
                ("WfApp", iv.and(self.node(scope, f, g)))
            }
            // A recursor stuck on a symbolic index against anything else
            // would need induction on the index.
            (Ty::App(..) | Ty::Rec(_), _) | (_, Ty::App(..) | Ty::Rec(_)) => (
                "Mismatch",
                self.fail(EqVerdict::Undecided, || format!("{} is stuck against {}", show(a), show(b))),
            ),
            _ => ("Mismatch", self.fail(EqVerdict::NotEqual, || format!("{} differs from {}", show(a), show(b)))),
        }
    }

    /// Splits on an undecided guard of the conditional `Cond(g, x, y)` on
    /// one side; `other` is the opposite side.
    fn case_split(&mut self, scope: &Scope, g: &Guard, x: &Ty<A>, y: &Ty<A>, other: &Ty<A>, left: bool) -> EqVerdict {
        let Some(p) = guard_prop(g) else {
            return self.fail(EqVerdict::Undecided, || format!("cannot split on guard {g}"));
        };
        let mut cases = vec![(p.clone(), x)];
        cases.extend(negation_cases(&p).into_iter().map(|h| (h, y)));
        let mut acc = EqVerdict::Equal;
        for (h, branch) in cases {
            let inner = scope.assume(h);
            match inner.ctx.consistent() {
                Verdict::Invalid(_) => continue,
                Verdict::Valid | Verdict::Undecided => {}
            }
            let v = if left { self.node(&inner, branch, other) } else { self.node(&inner, other, branch) };
            acc = acc.and(v);
            if acc == EqVerdict::NotEqual {
                break;
            }
        }
        acc
    }

    fn act(&mut self, scope: &Scope, p: &A, q: &A) -> EqVerdict {
        if skeleton(p) != skeleton(q) {
            return self.fail(EqVerdict::NotEqual, || "prefixes differ in shape or labels".into());
        }
        let mut acc = EqVerdict::Equal;
        for (x, y) in p.participants().into_iter().zip(q.participants()) {
            let v = participant_eq(&scope.ctx, x, y);
            acc = acc.and(self.fail(v, || format!("participants {x} and {y} differ")));
            if acc == EqVerdict::NotEqual {
                return acc;
            }
        }
        for (x, y) in p.payloads().into_iter().zip(q.payloads()) {
            let v = payload_equiv(&scope.env, x, y);
            acc = acc.and(self.fail(v, || format!("payloads {x} and {y} differ")));
            if acc == EqVerdict::NotEqual {
                return acc;
            }
        }
        for (x, y) in p.children().into_iter().zip(q.children()) {
            acc = acc.and(self.node(scope, x, y));
            if acc == EqVerdict::NotEqual {
                return acc;
            }
        }
        acc
    }

    fn rec(
        &mut self,
        scope: &Scope,
        a: &Ty<A>,
        b: &Ty<A>,
        r1: &RecNode<A>,
        r2: &RecNode<A>,
        idx: Option<usize>,
    ) -> (&'static str, EqVerdict) {
        let sv = sort_eq(&scope.ctx, &r1.sort, &r2.sort);
        let sv = self.fail(sv, || format!("recursor domains {} and {} differ", r1.sort, r2.sort));
        if sv != EqVerdict::Equal {
            return ("WfRec", sv);
        }
        let mark = self.trace.len();
        let saved_reason = self.reason.clone();
        let base = self.node(scope, &r1.base, &r2.base);
        if base == EqVerdict::NotEqual {
            return ("WfRec", base);
        }
        let (inner, b1, b2) = align_rec(scope, r1, r2);
        let componentwise = base.and(self.node(&inner, &b1, &b2));
        if componentwise == EqVerdict::Equal {
            return ("WfRec", componentwise);
        }
        // Drop the failed attempt and check every instance instead.
        self.trace.truncate(mark.max(idx.map_or(0, |i| i + 1)));
        self.reason = saved_reason;
        let Some(elems) = enumerate(&scope.ctx, &r1.sort) else {
            return (
                "WfRecF",
                self.fail(EqVerdict::Undecided, || {
                    format!("recursors differ componentwise and domain {} is not finite", r1.sort)
                }),
            );
        };
        let mut acc = self.node(scope, &r1.base, &r2.base);
        for k in std::iter::once(0).chain(elems.into_iter().filter(|&k| k > 0)) {
            if acc == EqVerdict::NotEqual {
                break;
            }
            let e = IndexExpr::Lit(k);
            acc = acc.and(self.node(scope, &Ty::app(a.clone(), e.clone()), &Ty::app(b.clone(), e)));
        }
        ("WfRecF", acc)
    }

    fn run(mut self, scope: &Scope, a: &Ty<A>, b: &Ty<A>) -> EquivOutcome {
        let verdict = self.node(scope, a, b);
        EquivOutcome { verdict, trace: self.trace, reason: if verdict == EqVerdict::Equal { None } else { self.reason } }
    }
}

pub(crate) fn payload_equiv(env: &StdEnv, a: &Payload, b: &Payload) -> EqVerdict {
    match (a, b) {
        (Payload::Shared(x), Payload::Shared(y)) => global_equiv(env, x, y).verdict,
        (Payload::Session(x), Payload::Session(y)) => local_equiv(env, x, y).verdict,
        _ if a == b => EqVerdict::Equal,
        _ => EqVerdict::NotEqual,
    }
}

/// Weak head normal form of `t`, resolving the conditionals decided by `env`.
pub fn head_under<A: EquivRules>(env: &StdEnv, t: &Ty<A>) -> Result<Ty<A>, String>
where
    Ty<A>: Display + Canonical,
{
    Checker::new().head(&Scope::new(env), t)
}

pub fn global_equiv(env: &StdEnv, a: &GlobalType, b: &GlobalType) -> EquivOutcome {
    Checker::new().run(&Scope::new(env), a, b)
}

pub fn local_equiv(env: &StdEnv, a: &LocalType, b: &LocalType) -> EquivOutcome {
    Checker::new().run(&Scope::new(env), a, b)
}

/// Either side of an equivalence query.
#[derive(Clone, Debug)]
pub enum AnyType {
    Global(GlobalType),
    Local(LocalType),
    Process(ProcessType),
}

/// `env |- a == b`; mixing layers is a refutation.
pub fn type_equiv(env: &StdEnv, a: &AnyType, b: &AnyType) -> EquivOutcome {
    match (a, b) {
        (AnyType::Global(x), AnyType::Global(y)) => global_equiv(env, x, y),
        (AnyType::Local(x), AnyType::Local(y)) => local_equiv(env, x, y),
        (AnyType::Process(x), AnyType::Process(y)) => proctype_equiv(env, x, y),
        _ => EquivOutcome {
            verdict: EqVerdict::NotEqual,
            trace: Vec::new(),
            reason: Some("types of different layers".into()),
        },
    }
}

// ---------------------------------------------------------------------------
// Process types

struct ProcChecker {
    locals: Checker<LAct>,
}

impl ProcChecker {
    fn msg(&mut self, scope: &Scope, m: &MsgType, n: &MsgType) -> EqVerdict {
        match (m, n) {
            (MsgType::Out(p, u), MsgType::Out(q, w)) => {
                let v = participant_eq(&scope.ctx, p, q).and(payload_equiv(&scope.env, u, w));
                self.locals.fail(v, || format!("queued {m} differs from {n}"))
            }
            (MsgType::Sel(p, l), MsgType::Sel(q, k)) if l == k => {
                let v = participant_eq(&scope.ctx, p, q);
                self.locals.fail(v, || format!("queued {m} differs from {n}"))
            }
            _ => self.locals.fail(EqVerdict::NotEqual, || format!("queued {m} differs from {n}")),
        }
    }

    fn gen(&mut self, scope: &Scope, a: &GenType, b: &GenType) -> EqVerdict {
        if a.msgs.len() != b.msgs.len() {
            return self.locals.fail(EqVerdict::NotEqual, || format!("queues {a} and {b} differ in length"));
        }
        let mut acc = EqVerdict::Equal;
        for (m, n) in a.msgs.iter().zip(&b.msgs) {
            acc = acc.and(self.msg(scope, m, n));
        }
        match (&a.cont, &b.cont) {
            (None, None) => acc,
            (Some(s), Some(t)) => acc.and(self.locals.node(scope, s, t)),
            _ => self.locals.fail(EqVerdict::NotEqual, || format!("{a} and {b} differ")),
        }
    }

    fn env(&mut self, scope: &Scope, a: &SessionEnv, b: &SessionEnv) -> EqVerdict {
        let keys: Vec<_> = a.keys().collect();
        if keys != b.keys().collect::<Vec<_>>() {
            return self.locals.fail(EqVerdict::NotEqual, || "session environments have different domains".into());
        }
        let mut acc = EqVerdict::Equal;
        for k in keys {
            acc = acc.and(self.gen(scope, &a[k], &b[k]));
        }
        acc
    }

    fn ptype(&mut self, scope: &Scope, a: &ProcessType, b: &ProcessType) -> EqVerdict {
        match (a, b) {
            (ProcessType::Sess(x), ProcessType::Sess(y)) => self.env(scope, x, y),
            (ProcessType::Pi(i, s, x), ProcessType::Pi(j, t, y)) => {
                let sv = sort_eq(&scope.ctx, s, t);
                if sv != EqVerdict::Equal {
                    return self.locals.fail(sv, || format!("domains {s} and {t} differ"));
                }
                let (inner, k) = scope.bind(i, s.clone());
                let kv = IndexExpr::var(&k);
                self.ptype(&inner, &x.subst_ix(i, &kv), &y.subst_ix(j, &kv))
            }
            _ => self.locals.fail(EqVerdict::NotEqual, || format!("{a} and {b} differ")),
        }
    }
}

pub fn proctype_equiv(env: &StdEnv, a: &ProcessType, b: &ProcessType) -> EquivOutcome {
    let mut pc = ProcChecker { locals: Checker::new() };
    let verdict = pc.ptype(&Scope::new(env), a, b);
    let reason = if verdict == EqVerdict::Equal { None } else { pc.locals.reason };
    EquivOutcome { verdict, trace: pc.locals.trace, reason }
}

pub fn session_env_equiv(env: &StdEnv, a: &SessionEnv, b: &SessionEnv) -> EquivOutcome {
    proctype_equiv(env, &ProcessType::Sess(a.clone()), &ProcessType::Sess(b.clone()))
}

// ---------------------------------------------------------------------------
// Isomorphism up to µ folding

const UNFOLD_LIMIT: usize = 10_000;

fn unfold_mu(x: &str, body: &LocalType) -> LocalType {
    body.subst_tvar(x, &Ty::mu(x, body.clone()))
}

struct Iso {
    assumed: HashSet<(LocalType, LocalType)>,
    norm: Normalizer<LAct>,
    steps: usize,
}

impl Iso {
    fn ty(&mut self, a: &LocalType, b: &LocalType) -> bool {
        if alpha_eq(a, b) {
            return true;
        }
        self.steps += 1;
        if self.steps > UNFOLD_LIMIT {
            return false;
        }
        let key = (a.canonical(), b.canonical());
        if !self.assumed.insert(key) {
            return true;
        }
        if let Ty::Mu(x, body) = a {
            return self.ty(&unfold_mu(x, body), b);
        }
        if let Ty::Mu(y, body) = b {
            return self.ty(a, &unfold_mu(y, body));
        }
        let (Ok(ha), Ok(hb)) = (self.norm.whnf(a), self.norm.whnf(b)) else { return false };
        if &ha != a || &hb != b {
            return self.ty(&ha, &hb);
        }
        match (a, b) {
            (Ty::Act(p), Ty::Act(q)) => {
                skeleton(p) == skeleton(q)
                    && p.participants().into_iter().zip(q.participants()).all(|(x, y)| same_participant(x, y))
                    && p.payloads().into_iter().zip(q.payloads()).all(|(x, y)| self.payload(x, y))
                    && p.children().into_iter().zip(q.children()).all(|(x, y)| self.ty(x, y))
            }
            _ => false,
        }
    }

    fn payload(&mut self, a: &Payload, b: &Payload) -> bool {
        match (a, b) {
            (Payload::Session(x), Payload::Session(y)) => self.ty(x, y),
            (Payload::Shared(x), Payload::Shared(y)) => alpha_eq(&**x, &**y),
            _ => a == b,
        }
    }

    fn gen(&mut self, a: &GenType, b: &GenType) -> bool {
        a.msgs.len() == b.msgs.len()
            && a.msgs.iter().zip(&b.msgs).all(|(m, n)| match (m, n) {
                (MsgType::Out(p, u), MsgType::Out(q, w)) => same_participant(p, q) && self.payload(u, w),
                (MsgType::Sel(p, l), MsgType::Sel(q, k)) => same_participant(p, q) && l == k,
                _ => false,
            })
            && match (&a.cont, &b.cont) {
                (None, None) => true,
                (Some(s), Some(t)) => self.ty(s, t),
                _ => false,
            }
    }

    fn ptype(&mut self, a: &ProcessType, b: &ProcessType) -> bool {
        match (a, b) {
            (ProcessType::Sess(x), ProcessType::Sess(y)) => {
                x.keys().eq(y.keys()) && x.iter().zip(y.values()).all(|((_, s), t)| self.gen(s, t))
            }
            (ProcessType::Pi(i, s, x), ProcessType::Pi(j, t, y)) => {
                if !alpha_eq(s, t) {
                    return false;
                }
                let mut avoid = x.free_index_vars();
                avoid.extend(y.free_index_vars());
                let k = IndexExpr::var(&fresh_name(i, &avoid));
                self.ptype(&x.subst_ix(i, &k), &y.subst_ix(j, &k))
            }
            _ => false,
        }
    }
}

impl Default for Iso {
    fn default() -> Self {
        Iso { assumed: HashSet::new(), norm: Normalizer::new(DEFAULT_FUEL), steps: 0 }
    }
}

/// `a ≈ b`: equality of the infinite unfoldings.
pub fn iso(a: &LocalType, b: &LocalType) -> bool {
    Iso::default().ty(a, b)
}

pub fn iso_proctype(a: &ProcessType, b: &ProcessType) -> bool {
    Iso::default().ptype(a, b)
}

pub fn iso_env(a: &SessionEnv, b: &SessionEnv) -> bool {
    Iso::default().ptype(&ProcessType::Sess(a.clone()), &ProcessType::Sess(b.clone()))
}

// ---------------------------------------------------------------------------
// Subtyping

struct Sub {
    assumed: HashSet<(LocalType, LocalType)>,
    eq: Checker<LAct>,
    steps: usize,
}

impl Sub {
    fn ty(&mut self, scope: &Scope, a: &LocalType, b: &LocalType) -> bool {
        if alpha_eq(a, b) {
            return true;
        }
        self.steps += 1;
        if self.steps > UNFOLD_LIMIT {
            return false;
        }
        let key = (a.canonical(), b.canonical());
        if self.assumed.contains(&key) {
            return true;
        }
        self.assumed.insert(key.clone());
        let ok = self.unassumed(scope, a, b);
        if !ok {
            // The pair may be reached again under other hypotheses.
            self.assumed.remove(&key);
        }
        ok
    }

    fn unassumed(&mut self, scope: &Scope, a: &LocalType, b: &LocalType) -> bool {
        if let Ty::Mu(x, body) = a {
            return self.ty(scope, &unfold_mu(x, body), b);
        }
        if let Ty::Mu(y, body) = b {
            return self.ty(scope, a, &unfold_mu(y, body));
        }
        let (Ok(ha), Ok(hb)) = (self.eq.head(scope, a), self.eq.head(scope, b)) else { return false };
        if &ha != a || &hb != b {
            return self.ty(scope, &ha, &hb);
        }
        let same = |p: &Participant, q: &Participant| participant_eq(&scope.ctx, p, q) == EqVerdict::Equal;
        match (a, b) {
            (Ty::Cond(g, x, y), _) => self.split(scope, g, x, y, b, true),
            (_, Ty::Cond(g, x, y)) => self.split(scope, g, x, y, a, false),
            (Ty::End, Ty::End) => true,
            (Ty::Var(x), Ty::Var(y)) => x == y,
            (Ty::Act(LAct::Out { peer: p, payload: u, cont: s }), Ty::Act(LAct::Out { peer: q, payload: w, cont: t }))
            | (Ty::Act(LAct::In { peer: p, payload: u, cont: s }), Ty::Act(LAct::In { peer: q, payload: w, cont: t })) => {
                same(p, q) && payload_equiv(&scope.env, u, w) == EqVerdict::Equal && self.ty(scope, s, t)
            }
            (Ty::Act(LAct::Sel { peer: p, branches: k }), Ty::Act(LAct::Sel { peer: q, branches: j })) => {
                same(p, q) && self.labels(scope, k, j)
            }
            (Ty::Act(LAct::Bra { peer: p, branches: k }), Ty::Act(LAct::Bra { peer: q, branches: j })) => {
                same(p, q) && self.labels_rev(scope, k, j)
            }
            (Ty::Rec(r1), Ty::Rec(r2)) => {
                if sort_eq(&scope.ctx, &r1.sort, &r2.sort) != EqVerdict::Equal || !self.ty(scope, &r1.base, &r2.base) {
                    return false;
                }
                let (inner, b1, b2) = align_rec(scope, r1, r2);
                self.ty(&inner, &b1, &b2)
            }
            (Ty::App(f, i), Ty::App(g, j)) => {
                entails(&scope.ctx, &Prop::eq(i.clone(), j.clone())).is_valid() && self.ty(scope, f, g)
            }
            _ => false,
        }
    }

    /// Selection: every label on the left is offered on the right.
    fn labels(&mut self, scope: &Scope, k: &BTreeMap<crate::ast::Label, LocalType>, j: &BTreeMap<crate::ast::Label, LocalType>) -> bool {
        k.iter().all(|(l, t)| j.get(l).is_some_and(|u| self.ty(scope, t, u)))
    }

    /// Branching: every label on the right is handled on the left.
    fn labels_rev(&mut self, scope: &Scope, k: &BTreeMap<crate::ast::Label, LocalType>, j: &BTreeMap<crate::ast::Label, LocalType>) -> bool {
        j.iter().all(|(l, u)| k.get(l).is_some_and(|t| self.ty(scope, t, u)))
    }

    fn split(&mut self, scope: &Scope, g: &Guard, x: &LocalType, y: &LocalType, other: &LocalType, left: bool) -> bool {
        let Some(p) = guard_prop(g) else { return false };
        let mut cases = vec![(p.clone(), x)];
        cases.extend(negation_cases(&p).into_iter().map(|h| (h, y)));
        cases.into_iter().all(|(h, branch)| {
            let inner = scope.assume(h);
            if inner.ctx.consistent().is_invalid() {
                return true;
            }
            if left {
                self.ty(&inner, branch, other)
            } else {
                self.ty(&inner, other, branch)
            }
        })
    }
}

/// `env |- a <= b`.
pub fn subtype(env: &StdEnv, a: &LocalType, b: &LocalType) -> bool {
    Sub { assumed: HashSet::new(), eq: Checker::new(), steps: 0 }.ty(&Scope::new(env), a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::{Label, MsgType};
    use crate::surface::{parse_global, parse_local};

    fn l(s: &str) -> LocalType {
        parse_local(s).unwrap()
    }

    fn env_i() -> StdEnv {
        StdEnv::new().with(StdEntry::Index("i".into(), IndexSort::Nat))
    }

    #[test]
    fn reflexive_on_variable() {
        let t = Ty::tvar("t");
        let out = local_equiv(&StdEnv::new(), &t, &t);
        assert!(out.is_equal());
        assert_eq!(out.rules(), ["Refl"]);
    }

    #[test]
    fn successor_application_closes_by_whnf() {
        let r = "(R end with (j : nat, x) { !<Bob, nat>; x })";
        let left = l(&format!("{r} @ (i + 1)"));
        let right = l(&format!("!<Bob, nat>; {r} @ i"));
        let out = local_equiv(&env_i(), &left, &right);
        assert!(out.is_equal(), "{}", out.render_trace());
        assert_eq!(out.trace[0].rule, "WfBase");
        assert_eq!(out.trace[1].rule, "Refl");
    }

    #[test]
    fn different_prefixes_are_not_equal() {
        let out = local_equiv(&StdEnv::new(), &l("!<p, nat>; end"), &l("?<p, nat>; end"));
        assert_eq!(out.verdict, EqVerdict::NotEqual);
        assert!(out.reason.is_some());
    }

    #[test]
    fn infinite_domain_is_undecided() {
        // Same instances are not visible componentwise: 2*i vs i+i is fine,
        // but bodies with different shapes over nat cannot be enumerated.
        let a = l("R end with (j : nat, x) { !<p, nat>; x }");
        let b = l("R end with (j : nat, x) { ?<p, nat>; x }");
        let out = local_equiv(&StdEnv::new(), &a, &b);
        assert_eq!(out.verdict, EqVerdict::Undecided);
    }

    #[test]
    fn finite_domain_falls_back_to_instances() {
        // Bodies differ syntactically but agree on every instance of [0..2].
        let a = l("R end with (j : [0..2], x) { if j <= 5 then !<p, nat>; x else ?<p, nat>; x }");
        let b = l("R end with (j : [0..2], x) { !<p, nat>; x }");
        let out = local_equiv(&StdEnv::new(), &a, &b);
        assert!(out.is_equal(), "{}", out.render_trace());
        assert!(out.rules().contains(&"WfRec") || out.rules().contains(&"WfRecF"));
    }

    #[test]
    fn case_split_on_participant() {
        let env = StdEnv::new().with(StdEntry::Index("p".into(), IndexSort::Nat));
        let g = "if W[p] == W[0] then !<W[1], nat>; end else end";
        let h = "if p <= 0 then !<W[1], nat>; end else end";
        let out = local_equiv(&env, &l(g), &l(h));
        assert!(out.is_equal(), "{}", out.render_trace());
        assert!(out.rules().contains(&"WfCase"));
    }

    #[test]
    fn global_messages() {
        let a = parse_global("A -> B : nat. end").unwrap();
        let b = parse_global("A -> B : bool. end").unwrap();
        assert!(global_equiv(&StdEnv::new(), &a, &a).is_equal());
        assert_eq!(global_equiv(&StdEnv::new(), &a, &b).verdict, EqVerdict::NotEqual);
    }

    #[test]
    fn process_types_compare_per_channel() {
        let mut d1 = SessionEnv::new();
        d1.insert(crate::ast::Chan::Var("y".into()), GenType::local(l("!<p, nat>; end")));
        let mut d2 = d1.clone();
        assert!(session_env_equiv(&StdEnv::new(), &d1, &d2).is_equal());
        d2.insert(
            crate::ast::Chan::Var("y".into()),
            GenType { msgs: vec![MsgType::Sel(Participant::named("p"), Label::new("ok"))], cont: Some(Ty::End) },
        );
        assert_eq!(session_env_equiv(&StdEnv::new(), &d1, &d2).verdict, EqVerdict::NotEqual);
    }

    #[test]
    fn iso_examples() {
        let m = l("mu x. !<p, nat>; x");
        assert!(iso(&m, &l("!<p, nat>; mu x. !<p, nat>; x")));
        assert!(iso(&Ty::End, &Ty::End));
        assert!(!iso(&m, &l("mu x. ?<p, nat>; x")));
        assert!(iso(&m, &l("mu y. !<p, nat>; !<p, nat>; y")));
    }

    #[test]
    fn subtyping_examples() {
        let e = StdEnv::new();
        assert!(subtype(&e, &l("+<p, {ok: end}>"), &l("+<p, {ok: end, quit: end}>")));
        assert!(!subtype(&e, &l("+<p, {ok: end, quit: end}>"), &l("+<p, {ok: end}>")));
        assert!(subtype(&e, &l("&<p, {ok: end, quit: end}>"), &l("&<p, {ok: end}>")));
        assert!(!subtype(&e, &l("&<p, {ok: end}>"), &l("&<p, {ok: end, quit: end}>")));
        assert!(subtype(&e, &Ty::tvar("t"), &Ty::tvar("t")));
        assert!(subtype(&e, &l("mu x. +<p, {ok: x}>"), &l("mu x. +<p, {ok: x, quit: end}>")));
    }

    #[test]
    fn negation_cases_cover() {
        let p = Prop::eq(IndexExpr::var("a"), IndexExpr::lit(0));
        assert_eq!(negation_cases(&p).len(), 2);
    }
}
