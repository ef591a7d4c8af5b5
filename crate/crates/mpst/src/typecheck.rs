//! Process typing: initial processes against session environments, runtime
//! configurations with queues, coherence of session environments and their
//! reduction.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use thiserror::Error;

use crate::ast::*;
use crate::diag::{Diagnostic, Trail};
use crate::equiv::{head_under, iso, iso_proctype, local_equiv, participant_eq, payload_equiv, proctype_equiv, sort_eq, EqVerdict};
use crate::index::{eval_ground, member, predecessor_sort, simplify, IndexCtx, Verdict};
use crate::kinding::{bind_index, kind_global, kind_proctype};
use crate::project::{global_normal_form, local_normal_form, memo, payload_eq, pid, project, project_ground, same_participant, simplify_projection};

/// Channel typing used while checking a single thread.
pub type Env = BTreeMap<Chan, LocalType>;

type R<T> = Result<T, Diagnostic>;

const UNFOLD_LIMIT: usize = 256;
const EXPAND_LIMIT: usize = 100_000;

#[derive(Clone, Debug, Default, PartialEq)]
pub enum CheckMode {
    #[default]
    Initial,
    /// Runtime configurations.  Carries the session environment of each
    /// session whose environment cannot be read off pending requests.
    Runtime(BTreeMap<Session, SessionEnv>),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CompositionError {
    #[error("composition of two session types on {0} is undefined")]
    Bottom(Chan),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GenProjError {
    #[error("type is not ground: {0}")]
    NotGround(String),
    #[error("cannot merge {0:?} with {1:?}")]
    Merge(Box<PTrace>, Box<PTrace>),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LinkError {
    #[error("thread uses {count} session channels: {thread}")]
    NotSimple { thread: String, count: usize },
    #[error("no initiator on `{shared}` covers {role}")]
    NotWellLinked { shared: String, role: String },
    #[error("{0}")]
    Expansion(String),
}

pub fn env_of(d: &SessionEnv) -> Env {
    d.iter().map(|(c, t)| (norm_chan(c), t.cont.clone().unwrap_or(Ty::End))).collect()
}

pub fn session_env_of(d: &Env) -> SessionEnv {
    d.iter().map(|(c, t)| (c.clone(), GenType::local(t.clone()))).collect()
}

pub(crate) fn norm_part(p: &Participant) -> Participant {
    Participant { name: p.name.clone(), indices: p.indices.iter().map(simplify).collect() }
}

pub(crate) fn norm_chan(c: &Chan) -> Chan {
    match c {
        Chan::Endpoint(s, p) => Chan::Endpoint(s.clone(), norm_part(p)),
        other => other.clone(),
    }
}

/// Participants of an initiator, with ranges expanded.
pub fn expand_roles(roles: &[RoleSpec]) -> Result<Vec<Participant>, String> {
    let mut out = Vec::new();
    for r in roles {
        match r {
            RoleSpec::One(p) => out.push(norm_part(p)),
            RoleSpec::Range { name, from, to } => {
                let (a, b) = match (eval_ground(from), eval_ground(to)) {
                    (Ok(a), Ok(b)) => (a, b),
                    _ => return Err(format!("participant range {name}[{from}..{to}] is not ground")),
                };
                let ks: Vec<u64> = if a <= b { (a..=b).collect() } else { (b..=a).rev().collect() };
                out.extend(ks.into_iter().map(|k| Participant::at(name, k)));
            }
        }
    }
    Ok(out)
}

fn brief(p: &Process) -> String {
    let s = p.to_string();
    let line = s.lines().next().unwrap_or("");
    if line.chars().count() > 60 {
        format!("{}...", line.chars().take(60).collect::<String>())
    } else {
        line.to_string()
    }
}

fn is_closed_global(g: &GlobalType) -> bool {
    g.is_closed() && g.free_index_vars().is_empty()
}

thread_local! {
    static CLOSED_KINDS: RefCell<HashMap<GlobalType, Result<Kind, Diagnostic>>> = RefCell::new(HashMap::new());
    static TRACES: RefCell<HashMap<(GenType, Participant), Result<PTrace, GenProjError>>> = RefCell::new(HashMap::new());
}

/// Kinding, memoised for closed types (their kind does not depend on Γ).
fn kind_of(g: &StdEnv, t: &GlobalType) -> Result<Kind, Diagnostic> {
    if is_closed_global(t) {
        memo(&CLOSED_KINDS, t, || kind_global(g, t))
    } else {
        kind_global(g, t)
    }
}

/// Parallel components, looking through nested `|`.
pub fn flatten_par(p: &Process) -> Vec<&Process> {
    fn go<'a>(p: &'a Process, out: &mut Vec<&'a Process>) {
        match p {
            Process::Par(a, b) => {
                go(a, out);
                go(b, out);
            }
            Process::Zero => {}
            other => out.push(other),
        }
    }
    let mut out = Vec::new();
    go(p, &mut out);
    out
}

/// Channels a component needs from its context: free channels, endpoints of
/// pending requests, and the channels of process variables it mentions.
fn uses(g: &StdEnv, p: &Process) -> BTreeSet<Chan> {
    let mut out: BTreeSet<Chan> = p.free_chans().iter().map(norm_chan).collect();
    let mut bound = BTreeSet::new();
    p.map_proc(&mut |q| {
        match q {
            Process::Request { role, session, .. } => {
                out.insert(Chan::Endpoint(session.clone(), norm_part(role)));
            }
            Process::PVar(x) => {
                if let Some(t) = g.proc_var(x) {
                    let mut t = t;
                    while let ProcessType::Pi(_, _, b) = t {
                        t = b;
                    }
                    if let ProcessType::Sess(d) = t {
                        out.extend(d.keys().map(norm_chan));
                    }
                }
            }
            Process::NewSession { session, .. } => {
                bound.insert(session.clone());
            }
            _ => {}
        }
        None
    });
    out.retain(|c| !matches!(c, Chan::Endpoint(s, _) if bound.contains(s)));
    out
}

// ---------------------------------------------------------------------------
// Thread checker

struct Tc<'m> {
    trail: Trail,
    mode: &'m CheckMode,
}

impl<'m> Tc<'m> {
    fn new(mode: &'m CheckMode) -> Self {
        Tc { trail: Trail::default(), mode }
    }

    fn enter<T>(&mut self, frame: String, f: impl FnOnce(&mut Self) -> R<T>) -> R<T> {
        self.trail.push(frame);
        let r = f(self);
        self.trail.pop();
        r
    }

    fn err<T>(&self, rule: &str, msg: impl Into<String>) -> R<T> {
        Err(self.trail.error(rule, msg))
    }

    fn lift<T>(&self, r: Result<T, Diagnostic>) -> R<T> {
        r.map_err(|mut d| {
            let mut trail = self.trail.frames().to_vec();
            trail.append(&mut d.trail);
            d.trail = trail;
            d
        })
    }

    fn verdict(&self, v: EqVerdict, rule: &str, msg: impl FnOnce() -> String) -> R<()> {
        match v {
            EqVerdict::Equal => Ok(()),
            EqVerdict::Undecided => Err(self.trail.undecided(rule, msg())),
            EqVerdict::NotEqual => self.err(rule, msg()),
        }
    }

    fn same_local(&self, g: &StdEnv, a: &LocalType, b: &LocalType, rule: &str, what: &str) -> R<()> {
        if a == b || iso(a, b) {
            return Ok(());
        }
        let v = local_equiv(g, a, b).verdict;
        self.verdict(v, rule, || format!("{what}: {a} is not equivalent to {b}"))
    }

    fn same_payload(&self, g: &StdEnv, have: &Payload, want: &Payload, rule: &str) -> R<()> {
        if payload_eq(have, want) {
            return Ok(());
        }
        if let (Payload::Session(a), Payload::Session(b)) = (have, want) {
            if iso(a, b) {
                return Ok(());
            }
        }
        let v = payload_equiv(g, have, want);
        self.verdict(v, rule, || format!("payload {have} does not match expected {want}"))
    }

    fn same_peer(&self, g: &StdEnv, have: &Participant, want: &Participant, rule: &str) -> R<()> {
        let v = participant_eq(&IndexCtx::from_env(g), have, want);
        self.verdict(v, rule, || format!("process addresses {have} where the type expects {want}"))
    }

    fn is_end(&self, g: &StdEnv, c: &Chan, t: &LocalType, rule: &str) -> R<()> {
        if *t == Ty::End {
            return Ok(());
        }
        let v = local_equiv(g, t, &Ty::End).verdict;
        self.verdict(v, rule, || format!("{c} has type {t}, expected end"))
    }

    /// Head of an expected type: weak head normal form with decided guards
    /// resolved and recursion unfolded.
    fn head(&self, g: &StdEnv, t: &LocalType, rule: &str) -> R<LocalType> {
        let mut t = t.clone();
        for _ in 0..UNFOLD_LIMIT {
            let h = match head_under(g, &t) {
                Ok(h) => h,
                Err(m) => return self.err(rule, m),
            };
            match h {
                Ty::Mu(x, b) => {
                    let whole = Ty::Mu(x.clone(), b.clone());
                    t = b.subst_tvar(&x, &whole);
                }
                Ty::Cond(gd, ..) => {
                    return Err(self.trail.undecided(rule, format!("cannot decide guard {gd} of {t}")));
                }
                other => return Ok(other),
            }
        }
        self.err(rule, format!("recursion in {t} does not reach a prefix"))
    }

    fn take(&self, d: &Env, c: &Chan, rule: &str) -> R<(Env, LocalType)> {
        let mut d = d.clone();
        match d.remove(&norm_chan(c)) {
            Some(t) => Ok((d, t)),
            None => self.err(rule, format!("no session type for channel {c}")),
        }
    }

    fn shared(&self, g: &StdEnv, a: &str, rule: &str) -> R<GlobalType> {
        match g.value_sort(a) {
            Some(Payload::Shared(t)) => Ok((**t).clone()),
            Some(other) => self.err(rule, format!("`{a}` has sort {other}, not a shared name")),
            None => self.err(rule, format!("unknown shared name `{a}`")),
        }
    }

    fn pid_of(&self, gt: &GlobalType, rule: &str) -> R<Vec<Participant>> {
        let t = if is_closed_global(gt) {
            match global_normal_form(gt) {
                Ok(t) => t,
                Err(e) => return self.err(rule, e.to_string()),
            }
        } else {
            gt.clone()
        };
        Ok(pid(&t).iter().map(norm_part).collect())
    }

    fn member_of(&self, g: &StdEnv, p: &Participant, parts: &[Participant], rule: &str) -> R<()> {
        let ctx = IndexCtx::from_env(g);
        let mut undecided = false;
        for q in parts {
            match participant_eq(&ctx, p, q) {
                EqVerdict::Equal => return Ok(()),
                EqVerdict::Undecided => undecided = true,
                EqVerdict::NotEqual => {}
            }
        }
        let names: Vec<String> = parts.iter().map(|q| q.to_string()).collect();
        let msg = format!("{p} is not a participant of {{{}}}", names.join(", "));
        if undecided {
            Err(self.trail.undecided(rule, msg))
        } else {
            self.err(rule, msg)
        }
    }

    fn project(&self, g: &StdEnv, gt: &GlobalType, p: &Participant, rule: &str) -> R<LocalType> {
        let r = if is_closed_global(gt) {
            project_ground(gt, p)
        } else {
            project(gt, p).map(|t| simplify_projection(&t, &IndexCtx::from_env(g)))
        };
        r.or_else(|e| self.err(rule, e.to_string()))
    }

    fn bind_chan(&self, g: &StdEnv, d: &Env, y: &str, t: LocalType, rule: &str) -> R<Env> {
        let mut d = d.clone();
        let key = Chan::Var(y.to_string());
        if let Some(old) = d.get(&key) {
            self.is_end(g, &key, old, rule)?;
        }
        d.insert(key, t);
        Ok(d)
    }

    fn expr_sort(&self, g: &StdEnv, e: &Expr, rule: &str) -> R<Payload> {
        match e {
            Expr::Lit(v) => self.value_sort(g, v, rule),
            Expr::Var(x) => {
                if let Some(s) = g.value_sort(x) {
                    Ok(s.clone())
                } else if g.index_sort(x).is_some() {
                    Ok(Payload::Nat)
                } else {
                    self.err(rule, format!("unbound variable `{x}`"))
                }
            }
            Expr::Bin(op, a, b) => {
                let sa = self.expr_sort(g, a, rule)?;
                let sb = self.expr_sort(g, b, rule)?;
                let numeric = |s: &Payload| matches!(s, Payload::Nat | Payload::Complex);
                if !numeric(&sa) || !numeric(&sb) {
                    return self.err(rule, format!("arithmetic on {sa} and {sb} in {e}"));
                }
                if *op == ExprOp::Pow {
                    if sb != Payload::Nat {
                        return self.err(rule, format!("exponent of {e} must be nat"));
                    }
                    return Ok(sa);
                }
                if sa == Payload::Complex || sb == Payload::Complex {
                    Ok(Payload::Complex)
                } else {
                    Ok(Payload::Nat)
                }
            }
        }
    }

    fn value_sort(&self, g: &StdEnv, v: &Value, rule: &str) -> R<Payload> {
        match v {
            Value::Nat(_) => Ok(Payload::Nat),
            Value::Bool(_) => Ok(Payload::Bool),
            Value::Complex(..) => Ok(Payload::Complex),
            Value::Name(a) => match g.value_sort(a) {
                Some(s @ Payload::Shared(_)) => Ok(s.clone()),
                _ => self.err(rule, format!("`{a}` is not a shared name")),
            },
            Value::Endpoint(s, p) => self.err(rule, format!("endpoint {s}[{p}] used as a value")),
        }
    }

    fn env_match(&self, g: &StdEnv, have: &Env, want: &Env, rule: &str) -> R<()> {
        let keys: BTreeSet<&Chan> = have.keys().chain(want.keys()).collect();
        for c in keys {
            let a = have.get(c).unwrap_or(&Ty::End);
            let b = want.get(c).unwrap_or(&Ty::End);
            self.same_local(g, a, b, rule, &format!("channel {c}"))?;
        }
        Ok(())
    }

    fn check(&mut self, g: &StdEnv, p: &Process, d: &Env) -> R<()> {
        match p {
            Process::Zero => {
                for (c, t) in d {
                    self.is_end(g, c, t, "TNull")?;
                }
                Ok(())
            }
            Process::Send { chan, to, value, cont } => self.enter(format!("TOut {}", brief(p)), |tc| {
                let (mut d2, t) = tc.take(d, chan, "TOut")?;
                match tc.head(g, &t, "TOut")? {
                    Ty::Act(LAct::Out { peer, payload, cont: tc_ }) => {
                        tc.same_peer(g, to, &peer, "TOut")?;
                        let s = tc.expr_sort(g, value, "TOut")?;
                        tc.same_payload(g, &s, &payload, "TOut")?;
                        d2.insert(norm_chan(chan), *tc_);
                        tc.check(g, cont, &d2)
                    }
                    other => tc.err("TOut", format!("{chan} has type {other}, expected an output to {to}")),
                }
            }),
            Process::Recv { chan, from, binder, sort, cont } => self.enter(format!("TIn {}", brief(p)), |tc| {
                let (mut d2, t) = tc.take(d, chan, "TIn")?;
                match tc.head(g, &t, "TIn")? {
                    Ty::Act(LAct::In { peer, payload, cont: tc_ }) => {
                        tc.same_peer(g, from, &peer, "TIn")?;
                        if let Some(s) = sort {
                            tc.same_payload(g, s, &payload, "TIn")?;
                        }
                        d2.insert(norm_chan(chan), *tc_);
                        match payload {
                            Payload::Session(t2) => {
                                let d3 = tc.bind_chan(g, &d2, binder, *t2, "TRecep")?;
                                tc.check(g, cont, &d3)
                            }
                            u => tc.check(&g.with(StdEntry::Sort(binder.clone(), u)), cont, &d2),
                        }
                    }
                    other => tc.err("TIn", format!("{chan} has type {other}, expected an input from {from}")),
                }
            }),
            Process::Deleg { chan, to, delegated, cont } => self.enter(format!("TDeleg {}", brief(p)), |tc| {
                let (d2, t) = tc.take(d, chan, "TDeleg")?;
                let (mut d3, td) = tc.take(&d2, delegated, "TDeleg")?;
                match tc.head(g, &t, "TDeleg")? {
                    Ty::Act(LAct::Out { peer, payload: Payload::Session(want), cont: tc_ }) => {
                        tc.same_peer(g, to, &peer, "TDeleg")?;
                        tc.same_local(g, &td, &want, "TDeleg", &format!("delegated {delegated}"))?;
                        d3.insert(norm_chan(chan), *tc_);
                        tc.check(g, cont, &d3)
                    }
                    other => tc.err("TDeleg", format!("{chan} has type {other}, expected a delegation to {to}")),
                }
            }),
            Process::Catch { chan, from, binder, ty, cont } => self.enter(format!("TRecep {}", brief(p)), |tc| {
                let (mut d2, t) = tc.take(d, chan, "TRecep")?;
                match tc.head(g, &t, "TRecep")? {
                    Ty::Act(LAct::In { peer, payload: Payload::Session(got), cont: tc_ }) => {
                        tc.same_peer(g, from, &peer, "TRecep")?;
                        tc.same_local(g, ty, &got, "TRecep", &format!("received {binder}"))?;
                        d2.insert(norm_chan(chan), *tc_);
                        let d3 = tc.bind_chan(g, &d2, binder, *got, "TRecep")?;
                        tc.check(g, cont, &d3)
                    }
                    other => tc.err("TRecep", format!("{chan} has type {other}, expected a channel from {from}")),
                }
            }),
            Process::Select { chan, to, label, cont } => self.enter(format!("TSel {}", brief(p)), |tc| {
                let (mut d2, t) = tc.take(d, chan, "TSel")?;
                match tc.head(g, &t, "TSel")? {
                    Ty::Act(LAct::Sel { peer, mut branches }) => {
                        tc.same_peer(g, to, &peer, "TSel")?;
                        let Some(tl) = branches.remove(label) else {
                            let ls: Vec<String> = branches.keys().map(|l| l.to_string()).collect();
                            return tc.err("TSel", format!("label {label} not among {{{}}}", ls.join(", ")));
                        };
                        d2.insert(norm_chan(chan), tl);
                        tc.check(g, cont, &d2)
                    }
                    other => tc.err("TSel", format!("{chan} has type {other}, expected a selection to {to}")),
                }
            }),
            Process::Branch { chan, from, branches } => self.enter(format!("TBra {}", brief(p)), |tc| {
                let (d2, t) = tc.take(d, chan, "TBra")?;
                match tc.head(g, &t, "TBra")? {
                    Ty::Act(LAct::Bra { peer, branches: tb }) => {
                        tc.same_peer(g, from, &peer, "TBra")?;
                        for (l, tl) in tb {
                            let Some(pl) = branches.get(&l) else {
                                return tc.err("TBra", format!("process has no branch for label {l}"));
                            };
                            let mut d3 = d2.clone();
                            d3.insert(norm_chan(chan), tl);
                            tc.enter(format!("branch {l}"), |tc| tc.check(g, pl, &d3))?;
                        }
                        Ok(())
                    }
                    other => tc.err("TBra", format!("{chan} has type {other}, expected a branching from {from}")),
                }
            }),
            Process::Init { shared, roles, binder, body } => self.enter(format!("TInit {}", brief(p)), |tc| {
                let gt = tc.shared(g, shared, "TInit")?;
                let roles = match expand_roles(roles) {
                    Ok(r) if !r.is_empty() => r,
                    Ok(_) => return tc.err("TInit", "initiator lists no participants"),
                    Err(m) => return tc.err("TInit", m),
                };
                let parts = tc.pid_of(&gt, "TInit")?;
                for r in &roles {
                    tc.member_of(g, r, &parts, "TInit")?;
                }
                for q in &parts {
                    tc.member_of(g, q, &roles, "TInit")?;
                }
                let t0 = tc.project(g, &gt, &roles[0], "TInit")?;
                let d2 = tc.bind_chan(g, d, binder, t0, "TInit")?;
                tc.check(g, body, &d2)
            }),
            Process::Accept { shared, role, binder, body } => self.enter(format!("TAcc {}", brief(p)), |tc| {
                let gt = tc.shared(g, shared, "TAcc")?;
                match tc.lift(kind_of(g, &gt))? {
                    Kind::Type => {}
                    k => return tc.err("TAcc", format!("shared type of `{shared}` has kind {k}, expected Type")),
                }
                let parts = tc.pid_of(&gt, "TAcc")?;
                tc.member_of(g, role, &parts, "TAcc")?;
                let t = tc.project(g, &gt, role, "TAcc")?;
                let d2 = tc.bind_chan(g, d, binder, t, "TAcc")?;
                tc.check(g, body, &d2)
            }),
            Process::Request { shared, role, session } => self.enter(format!("TReq {}", brief(p)), |tc| {
                let gt = tc.shared(g, shared, "TReq")?;
                let parts = tc.pid_of(&gt, "TReq")?;
                tc.member_of(g, role, &parts, "TReq")?;
                let t = tc.project(g, &gt, role, "TReq")?;
                let key = Chan::Endpoint(session.clone(), norm_part(role));
                let (rest, have) = tc.take(d, &key, "TReq")?;
                tc.same_local(g, &have, &t, "TReq", &format!("endpoint {key}"))?;
                for (c, t) in &rest {
                    tc.is_end(g, c, t, "TReq")?;
                }
                Ok(())
            }),
            Process::Mu { var, annot, body } => self.enter(format!("TRec {}", brief(p)), |tc| {
                let tau = match annot {
                    Some(a) => {
                        let a = env_of(a);
                        tc.env_match(g, d, &a, "TRec")?;
                        a
                    }
                    None => d.clone(),
                };
                let g2 = g.with(StdEntry::ProcVar(var.clone(), ProcessType::Sess(session_env_of(&tau))));
                tc.check(&g2, body, &tau)
            }),
            Process::PVar(x) => match g.proc_var(x) {
                Some(ProcessType::Sess(dx)) => {
                    let dx = env_of(dx);
                    self.env_match(g, &dx, d, "TVar")
                }
                Some(t) => self.err("TVar", format!("process variable {x} : {t} must be applied")),
                None => self.err("TVar", format!("unbound process variable {x}")),
            },
            Process::PApp(f, e) => self.enter(format!("TApp {}", brief(p)), |tc| {
                if let Some(t) = tc.synth(g, p)? {
                    return match t {
                        ProcessType::Sess(dt) => tc.env_match(g, d, &env_of(&dt), "TApp"),
                        t => tc.err("TApp", format!("partially applied recursor of type {t}")),
                    };
                }
                let q = tc.unfold_app(g, f, e)?;
                tc.check(g, &q, d)
            }),
            Process::PRec(_) => self.err("TPRec", format!("recursor used without an index: {}", brief(p))),
            Process::NewName { name, ty, body } => self.enter(format!("TNu {}", brief(p)), |tc| {
                match tc.lift(kind_of(g, ty))? {
                    Kind::Type => {}
                    k => return tc.err("TNu", format!("type of `{name}` has kind {k}, expected Type")),
                }
                tc.check(&g.with(StdEntry::Sort(name.clone(), Payload::Shared(Box::new(ty.clone())))), body, d)
            }),
            Process::NewSession { session, body } => self.enter(format!("GSRes {}", brief(p)), |tc| {
                let comps = flatten_par(body);
                let mut msgs = Vec::new();
                let mut rest = Vec::new();
                for c in comps {
                    match c {
                        Process::Queue { session: s, msgs: m } if s == session => msgs.extend(m.iter().cloned()),
                        other => rest.push(other),
                    }
                }
                let ds = tc.session_env(g, session, &rest)?;
                tc.runtime_scope(g, &[(session.clone(), msgs, ds)], &rest, d)
            }),
            Process::Par(..) => {
                let comps = flatten_par(p);
                if let Some(Process::Queue { session, .. }) = comps.iter().find(|c| matches!(c, Process::Queue { .. })) {
                    return self.err("GSRes", format!("queue of {session} outside its restriction"));
                }
                self.par(g, &comps, d)
            }
            Process::Queue { session, .. } => self.err("GSRes", format!("queue of {session} outside its restriction")),
            Process::Emit { value, cont, .. } => {
                self.expr_sort(g, value, "TOut")?;
                self.check(g, cont, d)
            }
        }
    }

    /// Type of an annotated recursor, possibly applied.
    fn synth(&mut self, g: &StdEnv, p: &Process) -> R<Option<ProcessType>> {
        match p {
            Process::PRec(node) => match &node.annot {
                Some(t) => {
                    self.prec(g, node, t)?;
                    Ok(Some(t.clone()))
                }
                None => Ok(None),
            },
            Process::PVar(x) => Ok(g.proc_var(x).cloned()),
            Process::PApp(f, e) => match self.synth(g, f)? {
                Some(ProcessType::Pi(j, s, body)) => {
                    match member(&IndexCtx::from_env(g), e, &s) {
                        Verdict::Valid => {}
                        Verdict::Invalid(_) => return self.err("TApp", format!("index {e} is not in {s}")),
                        Verdict::Undecided => return Err(self.trail.undecided("TApp", format!("cannot show {e} : {s}"))),
                    }
                    Ok(Some(body.subst_ix(&j, e)))
                }
                Some(t) => self.err("TApp", format!("{t} cannot be applied to {e}")),
                None => Ok(None),
            },
            _ => Ok(None),
        }
    }

    /// One unfolding of an unannotated recursor at a ground index.
    fn unfold_app(&mut self, g: &StdEnv, f: &Process, e: &IndexExpr) -> R<Process> {
        let f = match f {
            Process::PApp(f2, e2) => self.unfold_app(g, f2, e2)?,
            other => other.clone(),
        };
        let Process::PRec(node) = &f else {
            return self.err("TApp", format!("{} cannot be applied to {e}", brief(&f)));
        };
        let k = match eval_ground(&simplify(e)) {
            Ok(k) => k,
            Err(_) => {
                return self.err("TApp", format!("recursor without annotation applied to non-ground index {e}"));
            }
        };
        if let Verdict::Invalid(_) = member(&IndexCtx::from_env(g), &IndexExpr::Lit(k), &node.sort) {
            return self.err("TApp", format!("index {k} is not in {}", node.sort));
        }
        if k == 0 {
            return Ok(node.base.clone());
        }
        let prev = IndexExpr::Lit(k - 1);
        let again = Process::PApp(Box::new(f.clone()), prev.clone());
        Ok(node.body.subst_ix(&node.ivar, &prev).subst_pvar(&node.pvar, &again))
    }

    fn prec(&mut self, g: &StdEnv, node: &PRecNode, t: &ProcessType) -> R<()> {
        self.enter(format!("TPRec R ... with ({} : {}, {})", node.ivar, node.sort, node.pvar), |tc| {
            let ProcessType::Pi(j, sort, body_t) = t else {
                return tc.err("TPRec", format!("recursor checked against {t}, expected a Π type"));
            };
            tc.lift(kind_proctype(g, t))?;
            if let Some(a) = &node.annot {
                if a != t && !iso_proctype(a, t) {
                    let v = proctype_equiv(g, a, t).verdict;
                    tc.verdict(v, "TPRec", || format!("annotation {a} does not match {t}"))?;
                }
            }
            let v = sort_eq(&IndexCtx::from_env(g), &node.sort, sort);
            tc.verdict(v, "TPRec", || format!("recursor sort {} differs from {sort}", node.sort))?;
            tc.check_ptype(g, &node.base, &body_t.subst_ix(j, &IndexExpr::Lit(0)))?;
            let (g2, iv) = bind_index(g, &node.ivar, predecessor_sort(sort));
            let ie = IndexExpr::var(&iv);
            let body = if iv == node.ivar { node.body.clone() } else { node.body.subst_ix(&node.ivar, &ie) };
            let g3 = g2.with(StdEntry::ProcVar(node.pvar.clone(), body_t.subst_ix(j, &ie)));
            tc.check_ptype(&g3, &body, &body_t.subst_ix(j, &ie.succ()))
        })
    }

    fn check_ptype(&mut self, g: &StdEnv, p: &Process, t: &ProcessType) -> R<()> {
        match t {
            ProcessType::Sess(d) => self.check(g, p, &env_of(d)),
            ProcessType::Pi(..) => match p {
                Process::PRec(node) => self.prec(g, node, t),
                Process::PVar(x) => match g.proc_var(x) {
                    Some(tx) if tx == t || iso_proctype(tx, t) => Ok(()),
                    Some(tx) => {
                        let v = proctype_equiv(g, tx, t).verdict;
                        self.verdict(v, "TVar", || format!("{x} : {tx} does not match {t}"))
                    }
                    None => self.err("TVar", format!("unbound process variable {x}")),
                },
                _ => self.err("TPRec", format!("expected a recursor of type {t}, found {}", brief(p))),
            },
        }
    }

    fn par(&mut self, g: &StdEnv, comps: &[&Process], d: &Env) -> R<()> {
        if comps.len() == 1 {
            return self.check(g, comps[0], d);
        }
        let used: Vec<BTreeSet<Chan>> = comps.iter().map(|c| uses(g, c)).collect();
        let mut envs = vec![Env::new(); comps.len()];
        for (c, t) in d {
            let owners: Vec<usize> = (0..comps.len()).filter(|&i| used[i].contains(c)).collect();
            match owners.as_slice() {
                [] => self.is_end(g, c, t, "TPar")?,
                [i] => {
                    envs[*i].insert(c.clone(), t.clone());
                }
                _ => return self.err("TPar", format!("channel {c} is used by two parallel components")),
            }
        }
        for (comp, env) in comps.iter().zip(&envs) {
            self.enter(format!("TPar {}", brief(comp)), |tc| tc.check(g, comp, env))?;
        }
        Ok(())
    }

    /// Session environment of a restricted session: the hint from the mode
    /// if any, else the projections requested by pending requests.
    fn session_env(&self, g: &StdEnv, s: &Session, comps: &[&Process]) -> R<SessionEnv> {
        if let CheckMode::Runtime(h) = self.mode {
            if let Some(d) = h.get(s) {
                return Ok(d.iter().map(|(c, t)| (norm_chan(c), t.clone())).collect());
            }
        }
        let mut shared = None;
        for c in comps {
            c.map_proc(&mut |q| {
                if let Process::Request { shared: a, session, .. } = q {
                    if session == s && shared.is_none() {
                        shared = Some(a.clone());
                    }
                }
                None
            });
        }
        let Some(a) = shared else {
            return self.err("GSRes", format!("session environment of {s} is unknown"));
        };
        let gt = self.shared(g, &a, "GSRes")?;
        let mut out = SessionEnv::new();
        for r in self.pid_of(&gt, "GSRes")? {
            let t = self.project(g, &gt, &r, "GSRes")?;
            out.insert(Chan::Endpoint(s.clone(), r), GenType::local(t));
        }
        Ok(out)
    }

    fn runtime_scope(
        &mut self,
        g: &StdEnv,
        sessions: &[(Session, Vec<Message>, SessionEnv)],
        comps: &[&Process],
        outer: &Env,
    ) -> R<()> {
        let mut d = outer.clone();
        for (s, _, ds) in sessions {
            if let Err(m) = check_coherence(ds) {
                return self.err("GSRes", format!("session environment of {s} is not coherent: {m}"));
            }
            d.extend(env_of(ds));
        }
        let known = d.clone();
        for (s, msgs, ds) in sessions {
            let (qenv, claimed) = self.queue(g, s, msgs, &known)?;
            let ds: SessionEnv = ds.iter().map(|(c, t)| (norm_chan(c), t.clone())).collect();
            let keys: BTreeSet<&Chan> = ds.keys().chain(qenv.keys()).collect();
            for c in keys {
                let want = ds.get(c).map(|t| t.msgs.as_slice()).unwrap_or(&[]);
                let have = qenv.get(c).map(|t| t.msgs.as_slice()).unwrap_or(&[]);
                if !self.msgs_match(g, have, want) {
                    return self.err("QSend", format!("queued messages from {c} do not match its session type"));
                }
            }
            for c in claimed.keys() {
                d.remove(c);
            }
        }
        self.par(g, comps, &d)
    }

    fn msgs_match(&self, g: &StdEnv, a: &[MsgType], b: &[MsgType]) -> bool {
        a.len() == b.len()
            && a.iter().zip(b).all(|(x, y)| match (x, y) {
                (MsgType::Out(p, u), MsgType::Out(q, v)) => {
                    same_participant(p, q) && self.same_payload(g, u, v, "QSend").is_ok()
                }
                (MsgType::Sel(p, l), MsgType::Sel(q, k)) => same_participant(p, q) && l == k,
                _ => false,
            })
    }

    fn queue(&self, g: &StdEnv, s: &Session, msgs: &[Message], known: &Env) -> R<(SessionEnv, Env)> {
        let mut out = SessionEnv::new();
        let mut claimed = Env::new();
        for m in msgs {
            let mt = match &m.content {
                MsgContent::Value(v) => MsgType::Out(norm_part(&m.to), self.value_sort(g, v, "QSend")?),
                MsgContent::Label(l) => MsgType::Sel(norm_part(&m.to), l.clone()),
                MsgContent::Chan(s2, p2) => {
                    let c2 = Chan::Endpoint(s2.clone(), norm_part(p2));
                    let Some(t) = known.get(&c2) else {
                        return self.err("QDeleg", format!("type of delegated endpoint {c2} is unknown"));
                    };
                    claimed.insert(c2, t.clone());
                    MsgType::Out(norm_part(&m.to), Payload::Session(Box::new(t.clone())))
                }
            };
            out.entry(Chan::Endpoint(s.clone(), norm_part(&m.from)))
                .or_insert_with(|| GenType { msgs: Vec::new(), cont: None })
                .msgs
                .push(mt);
        }
        Ok((out, claimed))
    }
}

// ---------------------------------------------------------------------------
// Entry points

/// Type of a process.  Initial processes without free channels get the empty
/// environment; annotated recursors get their annotation.  In runtime mode,
/// free sessions are typed with the environments supplied by the mode.
pub fn check_process(g: &StdEnv, p: &Process, mode: &CheckMode) -> Result<ProcessType, Diagnostic> {
    let mut tc = Tc::new(mode);
    if let Some(t) = tc.synth(g, p)? {
        return Ok(t);
    }
    let free: BTreeSet<Chan> = uses(g, p);
    let comps = flatten_par(p);
    let queued: BTreeSet<Session> = comps
        .iter()
        .filter_map(|c| match c {
            Process::Queue { session, .. } => Some(session.clone()),
            _ => None,
        })
        .collect();
    let mut sessions: BTreeSet<Session> = queued.clone();
    let mut vars = Vec::new();
    for c in &free {
        match c {
            Chan::Endpoint(s, _) => {
                sessions.insert(s.clone());
            }
            Chan::Var(_) => vars.push(c.to_string()),
        }
    }
    if !vars.is_empty() {
        return Err(Diagnostic::error(
            "TPar",
            format!("free channels {{{}}} need an expected type", vars.join(", ")),
        ));
    }
    if sessions.is_empty() {
        tc.check(g, p, &Env::new())?;
        return Ok(ProcessType::Sess(SessionEnv::new()));
    }
    let CheckMode::Runtime(hints) = mode else {
        return Err(Diagnostic::error("GSRes", "runtime terms in an initial process"));
    };
    let mut scope = Vec::new();
    let mut whole = SessionEnv::new();
    for s in &sessions {
        let Some(ds) = hints.get(s) else {
            return Err(Diagnostic::error("GSRes", format!("no session environment given for free session {s}")));
        };
        let msgs: Vec<Message> = comps
            .iter()
            .filter_map(|c| match c {
                Process::Queue { session, msgs } if session == s => Some(msgs.clone()),
                _ => None,
            })
            .flatten()
            .collect();
        whole.extend(ds.iter().map(|(c, t)| (norm_chan(c), t.clone())));
        scope.push((s.clone(), msgs, ds.clone()));
    }
    let rest: Vec<&Process> = comps.into_iter().filter(|c| !matches!(c, Process::Queue { .. })).collect();
    tc.runtime_scope(g, &scope, &rest, &Env::new())?;
    Ok(ProcessType::Sess(whole))
}

/// Checks `p` against an expected process type.
pub fn check_against(g: &StdEnv, p: &Process, t: &ProcessType, mode: &CheckMode) -> Result<(), Diagnostic> {
    Tc::new(mode).check_ptype(g, p, t)
}

/// A runtime configuration: threads plus, per session, its queue and its
/// session environment.
pub fn check_configuration(
    g: &StdEnv,
    threads: &[Process],
    sessions: &BTreeMap<Session, (Vec<Message>, SessionEnv)>,
) -> Result<(), Diagnostic> {
    let mode = CheckMode::Runtime(sessions.iter().map(|(s, (_, d))| (s.clone(), d.clone())).collect());
    let mut tc = Tc::new(&mode);
    let scope: Vec<(Session, Vec<Message>, SessionEnv)> =
        sessions.iter().map(|(s, (m, d))| (s.clone(), m.clone(), d.clone())).collect();
    let comps: Vec<&Process> = threads.iter().collect();
    tc.runtime_scope(g, &scope, &comps, &Env::new())
}

/// Message types of a queue, with the delegated endpoints it holds.
pub fn check_queue(g: &StdEnv, s: &Session, msgs: &[Message], delegated: &Env) -> Result<SessionEnv, Diagnostic> {
    let mode = CheckMode::Initial;
    let (mut out, claimed) = Tc::new(&mode).queue(g, s, msgs, delegated)?;
    for (c, t) in claimed {
        out.insert(c, GenType::local(t));
    }
    Ok(out)
}

/// `Δ * Δ'`: message types are sequenced in front of the other side.
pub fn compose_env(a: &SessionEnv, b: &SessionEnv) -> Result<SessionEnv, CompositionError> {
    let mut out = a.clone();
    for (c, tb) in b {
        let Some(ta) = out.get(c) else {
            out.insert(c.clone(), tb.clone());
            continue;
        };
        let joined = if ta.cont.is_none() {
            GenType { msgs: ta.msgs.iter().chain(&tb.msgs).cloned().collect(), cont: tb.cont.clone() }
        } else if tb.cont.is_none() {
            GenType { msgs: tb.msgs.iter().chain(&ta.msgs).cloned().collect(), cont: ta.cont.clone() }
        } else {
            return Err(CompositionError::Bottom(c.clone()));
        };
        out.insert(c.clone(), joined);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Generalised projection, duality, coherence

/// Projection of a generalised type onto one peer.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum PTrace {
    End,
    Var(String),
    Mu(String, Box<PTrace>),
    Out(Payload, Box<PTrace>),
    In(Payload, Box<PTrace>),
    /// A selection already sitting in a queue.
    SelOne(Label, Box<PTrace>),
    Sel(BTreeMap<Label, PTrace>),
    Bra(BTreeMap<Label, PTrace>),
}

impl PTrace {
    fn subst(&self, x: &str, r: &PTrace) -> PTrace {
        let s = |t: &PTrace| Box::new(t.subst(x, r));
        match self {
            PTrace::Var(y) if y == x => r.clone(),
            PTrace::End | PTrace::Var(_) => self.clone(),
            PTrace::Mu(y, _) if y == x => self.clone(),
            PTrace::Mu(y, b) => PTrace::Mu(y.clone(), s(b)),
            PTrace::Out(u, b) => PTrace::Out(u.clone(), s(b)),
            PTrace::In(u, b) => PTrace::In(u.clone(), s(b)),
            PTrace::SelOne(l, b) => PTrace::SelOne(l.clone(), s(b)),
            PTrace::Sel(m) => PTrace::Sel(m.iter().map(|(l, t)| (l.clone(), t.subst(x, r))).collect()),
            PTrace::Bra(m) => PTrace::Bra(m.iter().map(|(l, t)| (l.clone(), t.subst(x, r))).collect()),
        }
    }

    fn mentions(&self, x: &str) -> bool {
        match self {
            PTrace::End => false,
            PTrace::Var(y) => y == x,
            PTrace::Mu(y, b) => y != x && b.mentions(x),
            PTrace::Out(_, b) | PTrace::In(_, b) | PTrace::SelOne(_, b) => b.mentions(x),
            PTrace::Sel(m) | PTrace::Bra(m) => m.values().any(|t| t.mentions(x)),
        }
    }
}

fn ptrace_mu(x: &str, b: PTrace) -> PTrace {
    match &b {
        PTrace::Var(y) if y == x => PTrace::End,
        _ if !b.mentions(x) => b,
        _ => PTrace::Mu(x.to_string(), Box::new(b)),
    }
}

fn ptrace_merge(a: PTrace, b: PTrace) -> Result<PTrace, GenProjError> {
    if a == b {
        return Ok(a);
    }
    let fail = |a: PTrace, b: PTrace| Err(GenProjError::Merge(Box::new(a), Box::new(b)));
    let is_bra = matches!(a, PTrace::Bra(_));
    match (a, b) {
        // selections merge like branchings: a peer that offers every label
        // is dual to whichever one the third party's choice leads to
        (PTrace::Bra(mut m), PTrace::Bra(n)) | (PTrace::Sel(mut m), PTrace::Sel(n)) => {
            for (l, t) in n {
                let merged = match m.remove(&l) {
                    Some(s) => ptrace_merge(s, t)?,
                    None => t,
                };
                m.insert(l, merged);
            }
            Ok(if is_bra { PTrace::Bra(m) } else { PTrace::Sel(m) })
        }
        (PTrace::Mu(x, a), PTrace::Mu(y, b)) if x == y => Ok(PTrace::Mu(x, Box::new(ptrace_merge(*a, *b)?))),
        (PTrace::Out(u, a), PTrace::Out(v, b)) if u == v => Ok(PTrace::Out(u, Box::new(ptrace_merge(*a, *b)?))),
        (PTrace::In(u, a), PTrace::In(v, b)) if u == v => Ok(PTrace::In(u, Box::new(ptrace_merge(*a, *b)?))),
        (PTrace::SelOne(l, a), PTrace::SelOne(k, b)) if l == k => {
            Ok(PTrace::SelOne(l, Box::new(ptrace_merge(*a, *b)?)))
        }
        (a, b) => fail(a, b),
    }
}

fn local_trace(t: &LocalType, q: &Participant) -> Result<PTrace, GenProjError> {
    let merge_all = |m: &BTreeMap<Label, LocalType>| -> Result<PTrace, GenProjError> {
        let mut acc: Option<PTrace> = None;
        for t in m.values() {
            let p = local_trace(t, q)?;
            acc = Some(match acc {
                None => p,
                Some(a) => ptrace_merge(a, p)?,
            });
        }
        Ok(acc.unwrap_or(PTrace::End))
    };
    match t {
        Ty::End => Ok(PTrace::End),
        Ty::Var(x) => Ok(PTrace::Var(x.clone())),
        Ty::Mu(x, b) => Ok(ptrace_mu(x, local_trace(b, q)?)),
        Ty::Act(LAct::Out { peer, payload, cont }) => {
            let k = local_trace(cont, q)?;
            Ok(if same_participant(peer, q) { PTrace::Out(payload.clone(), Box::new(k)) } else { k })
        }
        Ty::Act(LAct::In { peer, payload, cont }) => {
            let k = local_trace(cont, q)?;
            Ok(if same_participant(peer, q) { PTrace::In(payload.clone(), Box::new(k)) } else { k })
        }
        Ty::Act(LAct::Sel { peer, branches }) if same_participant(peer, q) => Ok(PTrace::Sel(
            branches.iter().map(|(l, t)| Ok((l.clone(), local_trace(t, q)?))).collect::<Result<_, GenProjError>>()?,
        )),
        Ty::Act(LAct::Bra { peer, branches }) if same_participant(peer, q) => Ok(PTrace::Bra(
            branches.iter().map(|(l, t)| Ok((l.clone(), local_trace(t, q)?))).collect::<Result<_, GenProjError>>()?,
        )),
        Ty::Act(LAct::Sel { branches, .. } | LAct::Bra { branches, .. }) => merge_all(branches),
        other => Err(GenProjError::NotGround(other.to_string())),
    }
}

/// Generalised type projected onto the interactions with `q`.
pub fn gen_project(t: &GenType, q: &Participant) -> Result<PTrace, GenProjError> {
    memo(&TRACES, &(t.clone(), q.clone()), || gen_project_uncached(t, q))
}

fn gen_project_uncached(t: &GenType, q: &Participant) -> Result<PTrace, GenProjError> {
    let mut acc = match &t.cont {
        Some(c) => {
            let nf = local_normal_form(c).map_err(|e| GenProjError::NotGround(e.to_string()))?;
            local_trace(&nf, q)?
        }
        None => PTrace::End,
    };
    for m in t.msgs.iter().rev() {
        if !same_participant(m.receiver(), q) {
            continue;
        }
        acc = match m {
            MsgType::Out(_, u) => PTrace::Out(u.clone(), Box::new(acc)),
            MsgType::Sel(_, l) => PTrace::SelOne(l.clone(), Box::new(acc)),
        };
    }
    Ok(acc)
}

/// Duality of two projections, coinductively.
pub fn dual(a: &PTrace, b: &PTrace) -> bool {
    struct D {
        assumed: HashSet<(PTrace, PTrace)>,
        steps: usize,
    }
    impl D {
        fn go(&mut self, a: &PTrace, b: &PTrace) -> bool {
            self.steps += 1;
            if self.steps > EXPAND_LIMIT {
                return false;
            }
            if !self.assumed.insert((a.clone(), b.clone())) {
                return true;
            }
            match (a, b) {
                (PTrace::Mu(x, body), _) => self.go(&body.subst(x, a), b),
                (_, PTrace::Mu(y, body)) => self.go(a, &body.subst(y, b)),
                (PTrace::End, PTrace::End) => true,
                (PTrace::Var(x), PTrace::Var(y)) => x == y,
                (PTrace::Out(u, a2), PTrace::In(v, b2)) | (PTrace::In(u, a2), PTrace::Out(v, b2)) => {
                    payload_eq(u, v) && self.go(a2, b2)
                }
                (PTrace::Sel(m), PTrace::Bra(n)) | (PTrace::Bra(n), PTrace::Sel(m)) => {
                    m.iter().all(|(l, t)| n.get(l).is_some_and(|s| self.go(t, s)))
                }
                (PTrace::SelOne(l, t), PTrace::Bra(n)) | (PTrace::Bra(n), PTrace::SelOne(l, t)) => {
                    n.get(l).is_some_and(|s| self.go(t, s))
                }
                _ => false,
            }
        }
    }
    D { assumed: HashSet::new(), steps: 0 }.go(a, b)
}

fn peers(t: &LocalType, out: &mut BTreeSet<Participant>) {
    match t {
        Ty::Act(a) => {
            out.insert(norm_part(a.peer()));
            for c in a.children() {
                peers(c, out);
            }
        }
        Ty::Mu(_, b) => peers(b, out),
        Ty::Cond(_, a, b) => {
            peers(a, out);
            peers(b, out);
        }
        Ty::Rec(r) => {
            peers(&r.base, out);
            peers(&r.body, out);
        }
        Ty::App(t, _) => peers(t, out),
        Ty::Var(_) | Ty::End => {}
    }
}

/// Every pair of distinct endpoints of a session is dual on their mutual
/// interactions.
pub fn check_coherence(d: &SessionEnv) -> Result<(), String> {
    let d: SessionEnv = d.iter().map(|(c, t)| (norm_chan(c), t.clone())).collect();
    for (c, t) in &d {
        let Chan::Endpoint(s, p) = c else { continue };
        let mut qs = BTreeSet::new();
        for m in &t.msgs {
            qs.insert(norm_part(m.receiver()));
        }
        if let Some(k) = &t.cont {
            let nf = local_normal_form(k).map_err(|e| e.to_string())?;
            peers(&nf, &mut qs);
        }
        for q in qs {
            if same_participant(&q, p) {
                continue;
            }
            let tp = gen_project(t, &q).map_err(|e| format!("{c}: {e}"))?;
            if tp == PTrace::End {
                continue;
            }
            let cq = Chan::Endpoint(s.clone(), q.clone());
            let Some(tq) = d.get(&cq) else {
                return Err(format!("{c} interacts with {q}, which has no endpoint"));
            };
            let tqp = gen_project(tq, p).map_err(|e| format!("{cq}: {e}"))?;
            if !dual(&tp, &tqp) {
                return Err(format!("{c} and {cq} are not dual"));
            }
        }
    }
    Ok(())
}

pub fn coherent(d: &SessionEnv) -> bool {
    check_coherence(d).is_ok()
}

// ---------------------------------------------------------------------------
// Session environment reduction

pub(crate) fn ground_head(t: &LocalType) -> Option<LocalType> {
    let mut t = local_normal_form(t).ok()?;
    for _ in 0..UNFOLD_LIMIT {
        match t {
            Ty::Mu(x, b) => {
                let whole = Ty::Mu(x.clone(), b.clone());
                t = b.subst_tvar(&x, &whole);
            }
            other => return Some(other),
        }
    }
    None
}

fn cont_head(d: &SessionEnv, c: &Chan) -> Option<LocalType> {
    d.get(c).and_then(|t| t.cont.as_ref()).and_then(ground_head)
}

fn set_cont(d: &mut SessionEnv, c: &Chan, t: LocalType) {
    if let Some(g) = d.get_mut(c) {
        g.cont = Some(t);
    }
}

/// Moves an output at the head of a continuation into the message part.
pub fn env_send_moves(d: &SessionEnv) -> Vec<SessionEnv> {
    let mut out = Vec::new();
    for c in d.keys() {
        if let Some(Ty::Act(LAct::Out { peer, payload, cont })) = cont_head(d, c) {
            let mut e = d.clone();
            let g = e.get_mut(c).expect("present");
            g.msgs.push(MsgType::Out(norm_part(&peer), payload));
            g.cont = Some(*cont);
            out.push(e);
        }
    }
    out
}

/// One-step reductions of a session environment.
pub fn env_step(d: &SessionEnv) -> Vec<SessionEnv> {
    let d: SessionEnv = d.iter().map(|(c, t)| (norm_chan(c), t.clone())).collect();
    let mut out = Vec::new();
    for (cq, gq) in &d {
        let Chan::Endpoint(s, q) = cq else { continue };
        let Some(h) = gq.cont.as_ref().and_then(ground_head) else { continue };
        match &h {
            Ty::Act(LAct::In { peer, payload, cont }) => {
                let cp = Chan::Endpoint(s.clone(), norm_part(peer));
                let Some(gp) = d.get(&cp) else { continue };
                match gp.msgs.iter().position(|m| same_participant(m.receiver(), q)) {
                    Some(k) => {
                        if let MsgType::Out(_, u) = &gp.msgs[k] {
                            if payload_eq(u, payload) {
                                let mut e = d.clone();
                                e.get_mut(&cp).expect("present").msgs.remove(k);
                                set_cont(&mut e, cq, (**cont).clone());
                                out.push(e);
                            }
                        }
                    }
                    None if cp != *cq => {
                        if let Some(Ty::Act(LAct::Out { peer: to, payload: u, cont: k })) = cont_head(&d, &cp) {
                            if same_participant(&to, q) && payload_eq(&u, payload) {
                                let mut e = d.clone();
                                set_cont(&mut e, &cp, *k);
                                set_cont(&mut e, cq, (**cont).clone());
                                out.push(e);
                            }
                        }
                    }
                    None => {}
                }
            }
            Ty::Act(LAct::Out { peer, payload, cont }) if same_participant(peer, q) => {
                if let Some(Ty::Act(LAct::In { peer: from, payload: u, cont: k })) = ground_head(cont) {
                    if same_participant(&from, q) && payload_eq(&u, payload) {
                        let mut e = d.clone();
                        set_cont(&mut e, cq, *k);
                        out.push(e);
                    }
                }
            }
            Ty::Act(LAct::Sel { peer, branches }) => {
                for (l, t) in branches {
                    let mut e = d.clone();
                    let g = e.get_mut(cq).expect("present");
                    g.msgs.push(MsgType::Sel(norm_part(peer), l.clone()));
                    g.cont = Some(t.clone());
                    out.push(e);
                }
            }
            Ty::Act(LAct::Bra { peer, branches }) => {
                let cp = Chan::Endpoint(s.clone(), norm_part(peer));
                let Some(gp) = d.get(&cp) else { continue };
                if let Some(k) = gp.msgs.iter().position(|m| same_participant(m.receiver(), q)) {
                    if let MsgType::Sel(_, l) = &gp.msgs[k] {
                        if let Some(t) = branches.get(l) {
                            let mut e = d.clone();
                            e.get_mut(&cp).expect("present").msgs.remove(k);
                            set_cont(&mut e, cq, t.clone());
                            out.push(e);
                        }
                    }
                }
            }
            _ => {}
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Simple and well-linked programs

/// Unfolds every recursor applied to a ground index.
pub fn expand_ground(p: &Process) -> Result<Process, String> {
    let mut budget = EXPAND_LIMIT;
    fn go(p: &Process, budget: &mut usize) -> Result<Process, String> {
        let mut err = None;
        let out = p.map_proc(&mut |q| {
            if err.is_some() {
                return Some(Process::Zero);
            }
            let Process::PApp(f, e) = q else { return None };
            let Ok(k) = eval_ground(&simplify(e)) else { return None };
            let f = match go(f, budget) {
                Ok(f) => f,
                Err(m) => {
                    err = Some(m);
                    return Some(Process::Zero);
                }
            };
            let Process::PRec(node) = &f else { return None };
            if *budget == 0 {
                err = Some("expansion limit reached".to_string());
                return Some(Process::Zero);
            }
            *budget -= 1;
            let step = if k == 0 {
                node.base.clone()
            } else {
                let prev = IndexExpr::Lit(k - 1);
                let again = Process::PApp(Box::new(f.clone()), prev.clone());
                node.body.subst_ix(&node.ivar, &prev).subst_pvar(&node.pvar, &again)
            };
            Some(match go(&step, budget) {
                Ok(s) => s,
                Err(m) => {
                    err = Some(m);
                    Process::Zero
                }
            })
        });
        match err {
            Some(m) => Err(m),
            None => Ok(out),
        }
    }
    go(p, &mut budget)
}

fn threads(p: &Process) -> Vec<&Process> {
    match p {
        Process::Par(a, b) => {
            let mut v = threads(a);
            v.extend(threads(b));
            v
        }
        Process::NewName { body, .. } | Process::NewSession { body, .. } => threads(body),
        Process::Zero | Process::Queue { .. } => Vec::new(),
        other => vec![other],
    }
}

fn session_binders(p: &Process) -> usize {
    let mut n = 0;
    p.map_proc(&mut |q| {
        if matches!(q, Process::Init { .. } | Process::Accept { .. } | Process::Catch { .. } | Process::Request { .. }) {
            n += 1;
        }
        None
    });
    n + p.free_chans().iter().filter(|c| matches!(c, Chan::Endpoint(..))).count()
}

/// Each thread uses a single session channel, and every accept or request
/// has an initiator on the same shared name listing its role.
pub fn check_simple_and_welllinked(p: &Process) -> Result<(), LinkError> {
    let p = expand_ground(p).map_err(LinkError::Expansion)?;
    for t in threads(&p) {
        let count = session_binders(t);
        if count > 1 {
            return Err(LinkError::NotSimple { thread: brief(t), count });
        }
    }
    let mut inits: BTreeMap<String, Vec<Option<Vec<Participant>>>> = BTreeMap::new();
    let mut needs = Vec::new();
    p.map_proc(&mut |q| {
        match q {
            Process::Init { shared, roles, .. } => {
                inits.entry(shared.clone()).or_default().push(expand_roles(roles).ok());
            }
            Process::Accept { shared, role, .. } | Process::Request { shared, role, .. } => {
                needs.push((shared.clone(), norm_part(role)));
            }
            _ => {}
        }
        None
    });
    for (a, r) in needs {
        let covered = inits.get(&a).is_some_and(|is| {
            is.iter().any(|roles| match roles {
                Some(rs) => rs.iter().any(|x| same_participant(x, &r)),
                None => true,
            })
        });
        if !covered {
            return Err(LinkError::NotWellLinked { shared: a, role: r.to_string() });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::{parse_global, parse_local, parse_process};

    fn lt(s: &str) -> LocalType {
        parse_local(s).unwrap()
    }

    fn ep(s: &str, p: &str) -> Chan {
        Chan::Endpoint(Session(s.into()), Participant::named(p))
    }

    fn shared(a: &str, g: &str) -> StdEnv {
        StdEnv::new().with(StdEntry::Sort(a.into(), Payload::Shared(Box::new(parse_global(g).unwrap()))))
    }

    #[test]
    fn null_process_needs_end() {
        let g = StdEnv::new();
        let y = Chan::Var("y".into());
        let ok = ProcessType::Sess([(y.clone(), GenType::local(Ty::End))].into());
        assert!(check_against(&g, &Process::Zero, &ok, &CheckMode::Initial).is_ok());
        let bad = ProcessType::Sess([(y, GenType::local(lt("!<Bob, nat>; end")))].into());
        let e = check_against(&g, &Process::Zero, &bad, &CheckMode::Initial).unwrap_err();
        assert_eq!(e.rule, "TNull");
    }

    #[test]
    fn closed_two_party_program() {
        let g = shared("a", "Alice -> Bob : nat. Bob -> Alice : bool. end");
        let p = parse_process(
            "init a[Alice, Bob](y). y!<Bob, 3>; y?(Bob, b); 0 | accept a[Bob](z). z?(Alice, x); z!<Alice, true>; 0",
        )
        .unwrap();
        assert_eq!(check_process(&g, &p, &CheckMode::Initial).unwrap(), ProcessType::Sess(SessionEnv::new()));
        let wrong = parse_process(
            "init a[Alice, Bob](y). y!<Bob, true>; y?(Bob, b); 0 | accept a[Bob](z). z?(Alice, x); z!<Alice, true>; 0",
        )
        .unwrap();
        let e = check_process(&g, &wrong, &CheckMode::Initial).unwrap_err();
        assert_eq!(e.rule, "TOut");
        assert!(e.trail.iter().any(|f| f.starts_with("TInit")));
    }

    #[test]
    fn annotated_recursor_under_symbolic_index() {
        // Alice sends n naturals to Bob, one per step of the recursor.
        let g = StdEnv::new().with(StdEntry::Index("n".into(), IndexSort::Nat));
        let p = parse_process(
            "R 0 with (i : nat, X : pi j : nat. { y : R end with (k : nat, Z) { !<Bob, nat>; Z } @ j }) { y!<Bob, i>; X } @ n",
        )
        .unwrap();
        let want = ProcessType::Sess(
            [(
                Chan::Var("y".into()),
                GenType::local(Ty::app(
                    parse_local("R end with (k : nat, Z) { !<Bob, nat>; Z }").unwrap(),
                    IndexExpr::var("n"),
                )),
            )]
            .into(),
        );
        assert_eq!(check_process(&g, &p, &CheckMode::Initial).unwrap(), want);
    }

    #[test]
    fn composition() {
        let c = ep("s", "Alice");
        let m = GenType { msgs: vec![MsgType::Out(Participant::named("Bob"), Payload::Nat)], cont: None };
        let t = GenType::local(lt("?<Bob, nat>; end"));
        let a: SessionEnv = [(c.clone(), m.clone())].into();
        let b: SessionEnv = [(c.clone(), t.clone())].into();
        let ab = compose_env(&a, &b).unwrap();
        assert_eq!(ab[&c], GenType { msgs: m.msgs.clone(), cont: t.cont.clone() });
        assert_eq!(compose_env(&b, &a).unwrap(), ab);
        assert_eq!(compose_env(&b, &b), Err(CompositionError::Bottom(c)));
    }

    #[test]
    fn queue_types() {
        let g = StdEnv::new();
        let s = Session("s".into());
        let msgs = vec![
            Message { from: Participant::named("A"), to: Participant::named("B"), content: MsgContent::Value(Value::Nat(1)) },
            Message { from: Participant::named("A"), to: Participant::named("C"), content: MsgContent::Label(Label::new("ok")) },
        ];
        let q = check_queue(&g, &s, &msgs, &Env::new()).unwrap();
        assert_eq!(
            q[&ep("s", "A")].msgs,
            vec![MsgType::Out(Participant::named("B"), Payload::Nat), MsgType::Sel(Participant::named("C"), Label::new("ok"))]
        );
        let deleg = vec![Message {
            from: Participant::named("A"),
            to: Participant::named("B"),
            content: MsgContent::Chan(Session("t".into()), Participant::named("C")),
        }];
        assert_eq!(check_queue(&g, &s, &deleg, &Env::new()).unwrap_err().rule, "QDeleg");
        let held: Env = [(ep("t", "C"), lt("!<D, nat>; end"))].into();
        let q = check_queue(&g, &s, &deleg, &held).unwrap();
        assert_eq!(q[&ep("t", "C")], GenType::local(lt("!<D, nat>; end")));
    }

    #[test]
    fn duality() {
        let a = PTrace::Out(Payload::Nat, Box::new(PTrace::End));
        let b = PTrace::In(Payload::Nat, Box::new(PTrace::End));
        assert!(dual(&a, &b));
        assert!(!dual(&a, &a));
        let sel = PTrace::Sel([(Label::new("l"), PTrace::End)].into());
        let bra = PTrace::Bra([(Label::new("l"), PTrace::End), (Label::new("r"), PTrace::End)].into());
        assert!(dual(&sel, &bra));
        assert!(!dual(&bra.clone(), &PTrace::Sel([(Label::new("x"), PTrace::End)].into())));
        let loop_out = PTrace::Mu("x".into(), Box::new(PTrace::Out(Payload::Nat, Box::new(PTrace::Var("x".into())))));
        let loop_in2 = PTrace::In(
            Payload::Nat,
            Box::new(PTrace::Mu("y".into(), Box::new(PTrace::In(Payload::Nat, Box::new(PTrace::Var("y".into())))))),
        );
        assert!(dual(&loop_out, &loop_in2));
    }

    #[test]
    fn coherence_of_projections() {
        let g = parse_global("W[0] -> W[1] : nat. W[1] -> W[0] : nat. end").unwrap();
        let d: SessionEnv = [0u64, 1]
            .iter()
            .map(|&k| {
                let p = Participant::at("W", k);
                (Chan::Endpoint(Session("s".into()), p.clone()), GenType::local(project_ground(&g, &p).unwrap()))
            })
            .collect();
        assert!(coherent(&d));
        assert!(coherent(&SessionEnv::new()));
        let mut bad = d.clone();
        bad.insert(ep("s", "X"), GenType::local(Ty::End));
        bad.get_mut(&Chan::Endpoint(Session("s".into()), Participant::at("W", 1))).unwrap().cont =
            Some(lt("?<W[0], bool>; !<W[0], nat>; end"));
        assert!(!coherent(&bad));
    }

    #[test]
    fn environment_steps() {
        let a = ep("s", "A");
        let b = ep("s", "B");
        let d: SessionEnv =
            [(a.clone(), GenType::local(lt("!<B, nat>; end"))), (b.clone(), GenType::local(lt("?<A, nat>; end")))].into();
        let next = env_step(&d);
        assert_eq!(next.len(), 1);
        assert_eq!(next[0][&a].cont, Some(Ty::End));
        assert_eq!(next[0][&b].cont, Some(Ty::End));
        let sent = env_send_moves(&d);
        assert_eq!(sent[0][&a].msgs, vec![MsgType::Out(Participant::named("B"), Payload::Nat)]);
        assert!(coherent(&sent[0]));
        let sel: SessionEnv = [
            (a.clone(), GenType::local(lt("+<B, { l: end, r: end }>"))),
            (b.clone(), GenType::local(lt("&<A, { l: end, r: end }>"))),
        ]
        .into();
        let next = env_step(&sel);
        assert_eq!(next.len(), 2);
        assert!(next.iter().all(coherent));
        let branched = env_step(&next[0]);
        assert_eq!(branched.len(), 1);
        assert!(branched[0][&a].msgs.is_empty());
    }

    #[test]
    fn runtime_configuration_with_queue() {
        let g = shared("a", "A -> B : nat. end");
        let d: SessionEnv = [
            (ep("s", "A"), GenType { msgs: vec![MsgType::Out(Participant::named("B"), Payload::Nat)], cont: Some(Ty::End) }),
            (ep("s", "B"), GenType::local(lt("?<A, nat>; end"))),
        ]
        .into();
        let threads = vec![parse_process("s[B]?(A, x); 0").unwrap()];
        let msgs = vec![Message {
            from: Participant::named("A"),
            to: Participant::named("B"),
            content: MsgContent::Value(Value::Nat(5)),
        }];
        let sessions: BTreeMap<_, _> = [(Session("s".into()), (msgs.clone(), d.clone()))].into();
        assert!(check_configuration(&g, &threads, &sessions).is_ok());
        let empty: BTreeMap<_, _> = [(Session("s".into()), (Vec::new(), d))].into();
        assert_eq!(check_configuration(&g, &threads, &empty).unwrap_err().rule, "QSend");
    }

    #[test]
    fn simple_and_well_linked() {
        let ok = parse_process("init a[A, B](y). 0 | accept a[B](z). 0").unwrap();
        assert!(check_simple_and_welllinked(&ok).is_ok());
        let two = parse_process("init a[A, B](y). init b[A, B](w). 0").unwrap();
        assert!(matches!(check_simple_and_welllinked(&two), Err(LinkError::NotSimple { .. })));
        let orphan = parse_process("accept a[B](z). 0").unwrap();
        assert!(matches!(check_simple_and_welllinked(&orphan), Err(LinkError::NotWellLinked { .. })));
    }
}
