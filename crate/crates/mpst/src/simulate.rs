//! Asynchronous operational semantics: configurations, one-step reduction,
//! schedulers, traces, and the subject-reduction and fidelity monitors.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value as J};
use thiserror::Error;

use crate::ast::*;
use crate::diag::Diagnostic;
use crate::index::{eval_ground, simplify};
use crate::normalize::normal_form;
use crate::project::{global_normal_form, pid, project_ground, same_participant};
use crate::surface::ToJson;
use crate::typecheck::{check_configuration, check_process, env_send_moves, env_step, expand_roles, ground_head, norm_chan, norm_part, CheckMode};

pub const DEFAULT_FUEL: usize = 100_000;
const UNFOLD_LIMIT: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("session {0} is restricted twice")]
    SessionClash(Session),
    #[error("recursion in {0} never reaches a prefix")]
    Unguarded(String),
}

/// A running program: threads, queues, restricted names, and a counter for
/// fresh session names.
#[derive(Clone, Debug)]
pub struct Config {
    pub threads: Vec<Process>,
    pub queues: BTreeMap<Session, Vec<Message>>,
    pub gamma: StdEnv,
    pub fresh: u64,
}

impl Config {
    pub fn new(gamma: &StdEnv, p: &Process) -> Result<Config, SimError> {
        let mut c = Config { threads: Vec::new(), queues: BTreeMap::new(), gamma: gamma.clone(), fresh: 0 };
        c.spawn(p.clone())?;
        Ok(c)
    }

    pub fn is_done(&self) -> bool {
        self.threads.is_empty() && self.queues.values().all(Vec::is_empty)
    }

    fn names(&self) -> BTreeSet<String> {
        self.gamma
            .entries
            .iter()
            .filter_map(|e| match e {
                StdEntry::Sort(n, _) => Some(n.clone()),
                _ => None,
            })
            .collect()
    }

    /// Adds `p` as threads, applying the structural rules eagerly: parallel
    /// composition is split, `0` dropped, restrictions extruded and
    /// recursion unfolded at the head.
    fn spawn(&mut self, p: Process) -> Result<(), SimError> {
        let mut work = vec![p];
        let mut unfolds = 0;
        while let Some(p) = work.pop() {
            match p {
                Process::Zero => {}
                Process::Par(a, b) => {
                    work.push(*b);
                    work.push(*a);
                }
                Process::NewName { name, ty, body } => {
                    let taken = self.names();
                    let (name, body) = if taken.contains(&name) {
                        let fresh = fresh_name(&name, &taken);
                        let body = body.subst_value(&name, &Value::Name(fresh.clone()));
                        (fresh, body)
                    } else {
                        (name, *body)
                    };
                    self.gamma.push(StdEntry::Sort(name, Payload::Shared(Box::new(ty))));
                    work.push(body);
                }
                Process::NewSession { session, body } => {
                    if self.queues.contains_key(&session) {
                        return Err(SimError::SessionClash(session));
                    }
                    self.queues.insert(session, Vec::new());
                    work.push(*body);
                }
                Process::Queue { session, msgs } => self.queues.entry(session).or_default().extend(msgs),
                Process::Mu { var, annot, body } => {
                    unfolds += 1;
                    if unfolds > UNFOLD_LIMIT {
                        return Err(SimError::Unguarded(var));
                    }
                    let whole = Process::Mu { var: var.clone(), annot, body: body.clone() };
                    work.push(body.subst_pvar(&var, &whole));
                }
                other => self.threads.push(other),
            }
        }
        Ok(())
    }

    fn fresh_session(&mut self) -> Session {
        loop {
            let s = Session(format!("s{}", self.fresh));
            self.fresh += 1;
            if !self.queues.contains_key(&s) {
                return s;
            }
        }
    }

    /// Drops empty queues of sessions no thread refers to.
    fn collect(&mut self) {
        let mut live = BTreeSet::new();
        for t in &self.threads {
            for c in t.free_chans() {
                if let Chan::Endpoint(s, _) = c {
                    live.insert(s);
                }
            }
            t.map_proc(&mut |q| {
                if let Process::Request { session, .. } = q {
                    live.insert(session.clone());
                }
                None
            });
        }
        self.queues.retain(|s, q| !q.is_empty() || live.contains(s));
    }

    /// Canonical rendering, used to identify states.
    pub fn key(&self) -> String {
        let mut ts: Vec<String> = self.threads.iter().map(|t| t.to_string()).collect();
        ts.sort();
        let qs: Vec<String> = self
            .queues
            .iter()
            .map(|(s, m)| format!("{s}:[{}]", m.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(",")))
            .collect();
        format!("{} || {}", ts.join(" | "), qs.join(" "))
    }

    fn shared_type(&self, a: &str) -> Option<GlobalType> {
        match self.gamma.value_sort(a) {
            Some(Payload::Shared(g)) => Some((**g).clone()),
            _ => None,
        }
    }
}

impl fmt::Display for Config {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in &self.threads {
            writeln!(f, "  {t}")?;
        }
        for (s, q) in &self.queues {
            let ms: Vec<String> = q.iter().map(|m| m.to_string()).collect();
            writeln!(f, "  queue {s} [{}]", ms.join(", "))?;
        }
        Ok(())
    }
}

/// A reduction enabled in a configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Choice {
    Thread(usize),
    /// `[Join]`: an accept thread with a pending request thread.
    Join(usize, usize),
}

/// One applied rule.
#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    pub step: usize,
    pub rule: &'static str,
    pub thread: usize,
    pub redex: String,
    pub session: Option<Session>,
    pub endpoint: Option<Chan>,
    pub message: Option<Message>,
    pub output: Option<(String, Value)>,
}

impl ToJson for Event {
    fn to_json(&self) -> J {
        json!({
            "step": self.step,
            "rule": self.rule,
            "thread": self.thread,
            "redex": self.redex,
            "message": self.message.as_ref().map(|m| m.to_json()),
            "output": self.output.as_ref().map(|(c, v)| json!({"channel": c, "value": v.to_json()})),
        })
    }
}

fn brief(p: &Process) -> String {
    let s = p.to_string();
    let line = s.lines().next().unwrap_or("").to_string();
    if line.chars().count() > 80 {
        format!("{}...", line.chars().take(80).collect::<String>())
    } else {
        line
    }
}

// ---------------------------------------------------------------------------
// Values

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("cannot apply arithmetic to {0}")]
    NotNumeric(String),
    #[error("exponent must be a natural, got {0}")]
    Exponent(String),
}

fn as_complex(v: &Value) -> Option<Complex64> {
    match v {
        Value::Nat(n) => Some(Complex64::new(*n as f64, 0.0)),
        Value::Complex(re, im) => Some(Complex64::new(*re, *im)),
        _ => None,
    }
}

pub fn eval_expr(e: &Expr) -> Result<Value, EvalError> {
    match e {
        Expr::Lit(v) => Ok(v.clone()),
        Expr::Var(x) => Err(EvalError::Unbound(x.clone())),
        Expr::Bin(op, a, b) => {
            let (a, b) = (eval_expr(a)?, eval_expr(b)?);
            if let (Value::Nat(x), Value::Nat(y)) = (&a, &b) {
                let (x, y) = (*x, *y);
                return Ok(Value::Nat(match op {
                    ExprOp::Add => x.saturating_add(y),
                    ExprOp::Sub => x.saturating_sub(y),
                    ExprOp::Mul => x.saturating_mul(y),
                    ExprOp::Pow => x.saturating_pow(y.min(u32::MAX as u64) as u32),
                }));
            }
            let ca = as_complex(&a).ok_or_else(|| EvalError::NotNumeric(a.to_string()))?;
            let z = match op {
                ExprOp::Pow => {
                    let Value::Nat(k) = b else { return Err(EvalError::Exponent(b.to_string())) };
                    ca.powu(k.min(u32::MAX as u64) as u32)
                }
                _ => {
                    let cb = as_complex(&b).ok_or_else(|| EvalError::NotNumeric(b.to_string()))?;
                    match op {
                        ExprOp::Add => ca + cb,
                        ExprOp::Sub => ca - cb,
                        _ => ca * cb,
                    }
                }
            };
            Ok(Value::Complex(z.re, z.im))
        }
    }
}

fn ground_index(e: &IndexExpr) -> Option<u64> {
    eval_ground(&simplify(e)).ok()
}

fn ground_part(p: &Participant) -> Option<Participant> {
    let indices = p.indices.iter().map(|e| ground_index(e).map(IndexExpr::Lit)).collect::<Option<Vec<_>>>()?;
    Some(Participant { name: p.name.clone(), indices })
}

fn endpoint(c: &Chan) -> Option<(Session, Participant)> {
    match c {
        Chan::Endpoint(s, p) => Some((s.clone(), ground_part(p)?)),
        Chan::Var(_) => None,
    }
}

/// Index of the first message from `from` to `to`.
fn first_from(q: &[Message], from: &Participant, to: &Participant) -> Option<usize> {
    q.iter().position(|m| same_participant(&m.from, from) && same_participant(&m.to, to))
}

// ---------------------------------------------------------------------------
// One step

/// Outcome of applying a rule to a thread: replacement threads and the
/// record of what happened.
struct Fired {
    rule: &'static str,
    replace: Vec<Process>,
    session: Option<Session>,
    endpoint: Option<Chan>,
    message: Option<Message>,
    output: Option<(String, Value)>,
    init: Option<(Session, String)>,
}

impl Fired {
    fn new(rule: &'static str, replace: Vec<Process>) -> Self {
        Fired { rule, replace, session: None, endpoint: None, message: None, output: None, init: None }
    }
}

/// Unfolds a ground application one step (`[ZeroR]` or `[SuccR]`).
fn app_step(f: &Process, e: &IndexExpr) -> Option<(&'static str, Process)> {
    match f {
        Process::PRec(node) => {
            let k = ground_index(e)?;
            if k == 0 {
                Some(("ZeroR", node.base.clone()))
            } else {
                let prev = IndexExpr::Lit(k - 1);
                let again = Process::PApp(Box::new(f.clone()), prev.clone());
                Some(("SuccR", node.body.subst_ix(&node.ivar, &prev).subst_pvar(&node.pvar, &again)))
            }
        }
        Process::PApp(g, e2) => {
            let (rule, g2) = app_step(g, e2)?;
            Some((rule, Process::PApp(Box::new(g2), e.clone())))
        }
        _ => None,
    }
}

impl Config {
    /// Every reduction enabled now, in a fixed order.
    pub fn enabled(&self) -> Vec<Choice> {
        let mut out = Vec::new();
        for (i, t) in self.threads.iter().enumerate() {
            match t {
                Process::Accept { shared, role, .. } => {
                    for (j, r) in self.threads.iter().enumerate() {
                        if let Process::Request { shared: a, role: p, .. } = r {
                            if a == shared && same_participant(p, role) {
                                out.push(Choice::Join(i, j));
                            }
                        }
                    }
                }
                _ => {
                    if self.can_fire(t) {
                        out.push(Choice::Thread(i));
                    }
                }
            }
        }
        out
    }

    fn can_fire(&self, t: &Process) -> bool {
        match t {
            Process::PApp(f, e) => app_step(f, e).is_some(),
            Process::Init { roles, .. } => expand_roles(roles).is_ok(),
            Process::Send { chan, value, .. } => endpoint(chan).is_some() && eval_expr(value).is_ok(),
            Process::Emit { value, .. } => eval_expr(value).is_ok(),
            Process::Deleg { chan, delegated, .. } => endpoint(chan).is_some() && endpoint(delegated).is_some(),
            Process::Select { chan, .. } => endpoint(chan).is_some(),
            Process::Recv { chan, from, .. } | Process::Catch { chan, from, .. } => {
                self.head_message(chan, from).is_some_and(|m| !matches!(m.content, MsgContent::Label(_)))
            }
            Process::Branch { chan, from, branches } => self.head_message(chan, from).is_some_and(|m| match &m.content {
                MsgContent::Label(l) => branches.contains_key(l),
                _ => false,
            }),
            _ => false,
        }
    }

    fn head_message(&self, chan: &Chan, from: &Participant) -> Option<&Message> {
        let (s, q) = endpoint(chan)?;
        let from = ground_part(from)?;
        let queue = self.queues.get(&s)?;
        first_from(queue, &from, &q).map(|k| &queue[k])
    }

    fn take_message(&mut self, chan: &Chan, from: &Participant) -> Option<Message> {
        let (s, q) = endpoint(chan)?;
        let from = ground_part(from)?;
        let queue = self.queues.get_mut(&s)?;
        let k = first_from(queue, &from, &q)?;
        Some(queue.remove(k))
    }

    fn fire(&mut self, i: usize) -> Option<Fired> {
        let t = self.threads[i].clone();
        match t {
            Process::PApp(f, e) => {
                let (rule, p) = app_step(&f, &e)?;
                Some(Fired::new(rule, vec![p]))
            }
            Process::Init { shared, roles, binder, body } => {
                let roles = expand_roles(&roles).ok()?;
                let s = self.fresh_session();
                self.queues.insert(s.clone(), Vec::new());
                let mut out = vec![body.subst_chan(&binder, &Chan::Endpoint(s.clone(), roles[0].clone()))];
                for r in &roles[1..] {
                    out.push(Process::Request { shared: shared.clone(), role: r.clone(), session: s.clone() });
                }
                let mut f = Fired::new("Init", out);
                f.session = Some(s.clone());
                f.init = Some((s, shared));
                Some(f)
            }
            Process::Send { chan, to, value, cont } => {
                let (s, p) = endpoint(&chan)?;
                let v = eval_expr(&value).ok()?;
                let m = Message { from: p.clone(), to: ground_part(&to)?, content: MsgContent::Value(v) };
                self.queues.entry(s.clone()).or_default().push(m.clone());
                let mut f = Fired::new("Send", vec![*cont]);
                f.session = Some(s.clone());
                f.endpoint = Some(Chan::Endpoint(s, p));
                f.message = Some(m);
                Some(f)
            }
            Process::Deleg { chan, to, delegated, cont } => {
                let (s, p) = endpoint(&chan)?;
                let (s2, p2) = endpoint(&delegated)?;
                let m = Message { from: p.clone(), to: ground_part(&to)?, content: MsgContent::Chan(s2, p2) };
                self.queues.entry(s.clone()).or_default().push(m.clone());
                let mut f = Fired::new("Deleg", vec![*cont]);
                f.session = Some(s.clone());
                f.endpoint = Some(Chan::Endpoint(s, p));
                f.message = Some(m);
                Some(f)
            }
            Process::Select { chan, to, label, cont } => {
                let (s, p) = endpoint(&chan)?;
                let m = Message { from: p.clone(), to: ground_part(&to)?, content: MsgContent::Label(label) };
                self.queues.entry(s.clone()).or_default().push(m.clone());
                let mut f = Fired::new("Label", vec![*cont]);
                f.session = Some(s.clone());
                f.endpoint = Some(Chan::Endpoint(s, p));
                f.message = Some(m);
                Some(f)
            }
            Process::Recv { chan, from, binder, cont, .. } => {
                let m = self.take_message(&chan, &from)?;
                let next = match &m.content {
                    MsgContent::Value(v) => cont.subst_value(&binder, v),
                    MsgContent::Chan(s2, p2) => cont.subst_chan(&binder, &Chan::Endpoint(s2.clone(), p2.clone())),
                    MsgContent::Label(_) => return None,
                };
                let mut f = Fired::new("Recv", vec![next]);
                f.session = endpoint(&chan).map(|e| e.0);
                f.endpoint = Some(norm_chan(&chan));
                f.message = Some(m);
                Some(f)
            }
            Process::Catch { chan, from, binder, cont, .. } => {
                let m = self.take_message(&chan, &from)?;
                let MsgContent::Chan(s2, p2) = &m.content else { return None };
                let next = cont.subst_chan(&binder, &Chan::Endpoint(s2.clone(), p2.clone()));
                let mut f = Fired::new("Recv", vec![next]);
                f.session = endpoint(&chan).map(|e| e.0);
                f.endpoint = Some(norm_chan(&chan));
                f.message = Some(m);
                Some(f)
            }
            Process::Branch { chan, from, branches } => {
                let m = self.take_message(&chan, &from)?;
                let MsgContent::Label(l) = &m.content else { return None };
                let next = branches.get(l)?.clone();
                let mut f = Fired::new("Branch", vec![next]);
                f.session = endpoint(&chan).map(|e| e.0);
                f.endpoint = Some(norm_chan(&chan));
                f.message = Some(m);
                Some(f)
            }
            Process::Emit { target, value, cont } => {
                let v = eval_expr(&value).ok()?;
                let mut f = Fired::new("Emit", vec![*cont]);
                f.output = Some((target, v));
                Some(f)
            }
            _ => None,
        }
    }

    /// Applies `choice`, returning the event.  `None` when the choice is not
    /// enabled.
    pub fn step(&mut self, choice: Choice, step: usize) -> Result<Option<(Event, Option<(Session, String)>)>, SimError> {
        let (thread, mut fired, redex) = match choice {
            Choice::Thread(i) => {
                let Some(t) = self.threads.get(i) else { return Ok(None) };
                let redex = brief(t);
                let mut trial = self.clone();
                let Some(f) = trial.fire(i) else { return Ok(None) };
                *self = trial;
                (i, f, redex)
            }
            Choice::Join(i, j) => {
                let (Some(Process::Accept { binder, body, role, .. }), Some(Process::Request { session, role: r2, .. })) =
                    (self.threads.get(i).cloned(), self.threads.get(j).cloned())
                else {
                    return Ok(None);
                };
                if !same_participant(&role, &r2) {
                    return Ok(None);
                }
                let redex = brief(&self.threads[i]);
                let p = ground_part(&r2).unwrap_or(r2);
                let next = body.subst_chan(&binder, &Chan::Endpoint(session.clone(), p));
                self.threads.remove(i.max(j));
                self.threads.remove(i.min(j));
                let mut f = Fired::new("Join", vec![next]);
                f.session = Some(session);
                // Continue in the accept's slot so positions stay meaningful.
                (i.min(j), f, redex)
            }
        };
        let replace = std::mem::take(&mut fired.replace);
        if let Choice::Thread(i) = choice {
            self.threads.remove(i);
        }
        let before = self.threads.len();
        let mut tail = self.threads.split_off(thread.min(before));
        for p in replace {
            self.spawn(p)?;
        }
        self.threads.append(&mut tail);
        self.collect();
        let ev = Event {
            step,
            rule: fired.rule,
            thread,
            redex,
            session: fired.session,
            endpoint: fired.endpoint,
            message: fired.message,
            output: fired.output,
        };
        Ok(Some((ev, fired.init)))
    }
}

// ---------------------------------------------------------------------------
// Running

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheduler {
    Random(u64),
    RoundRobin,
    /// Every interleaving, up to the given depth.
    Exhaustive(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub enum RunVerdict {
    Done,
    Stuck(String),
    FuelOut,
}

impl RunVerdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunVerdict::Done => "done",
            RunVerdict::Stuck(_) => "stuck",
            RunVerdict::FuelOut => "fuel-out",
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub fuel: usize,
    /// Re-type the configuration after each step.
    pub check_sr: bool,
    /// Walk each endpoint's projected local type alongside the trace.
    pub fidelity: bool,
}

impl RunOptions {
    pub fn new() -> Self {
        RunOptions { fuel: DEFAULT_FUEL, check_sr: false, fidelity: false }
    }
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub verdict: RunVerdict,
    pub trace: Vec<Event>,
    pub sr_violations: Vec<String>,
    pub fidelity_violations: Vec<String>,
    /// States visited (exhaustive mode).
    pub states: usize,
    pub final_config: Config,
}

impl RunReport {
    pub fn outputs(&self) -> BTreeMap<String, Value> {
        external_outputs(&self.trace)
    }

    pub fn trace_jsonl(&self) -> String {
        let mut s = String::new();
        for e in &self.trace {
            s.push_str(&e.to_json().to_string());
            s.push('\n');
        }
        s
    }
}

impl ToJson for RunReport {
    fn to_json(&self) -> J {
        let outs: serde_json::Map<String, J> = self.outputs().into_iter().map(|(c, v)| (c, v.to_json())).collect();
        json!({
            "verdict": self.verdict.as_str(),
            "stuck": match &self.verdict { RunVerdict::Stuck(s) => J::String(s.clone()), _ => J::Null },
            "steps": self.trace.len(),
            "outputs": outs,
            "sr_violations": self.sr_violations,
            "fidelity_violations": self.fidelity_violations,
            "states": self.states,
        })
    }
}

/// Values sent on external channels, by channel.
pub fn external_outputs(trace: &[Event]) -> BTreeMap<String, Value> {
    trace.iter().filter_map(|e| e.output.clone()).collect()
}

fn stuck_report(c: &Config) -> String {
    format!("no rule applies in\n{c}")
}

/// Session environments tracked alongside the run, re-checked after every
/// step against the candidates reachable by environment reduction.
struct SrMonitor {
    envs: BTreeMap<Session, SessionEnv>,
    violations: Vec<String>,
    enabled: bool,
}

fn initial_env(c: &Config, s: &Session, shared: &str) -> Option<SessionEnv> {
    let g = c.shared_type(shared)?;
    let nf = global_normal_form(&g).ok()?;
    let mut out = SessionEnv::new();
    for r in pid(&nf) {
        let r = norm_part(&r);
        out.insert(Chan::Endpoint(s.clone(), r.clone()), GenType::local(project_ground(&nf, &r).ok()?));
    }
    Some(out)
}

impl SrMonitor {
    fn new(c: &Config, on: bool) -> Self {
        let mut m = SrMonitor { envs: BTreeMap::new(), violations: Vec::new(), enabled: on };
        if on && !c.queues.is_empty() {
            m.enabled = false;
            m.violations.push("initial configuration has open sessions; subject reduction not monitored".into());
        }
        if m.enabled {
            let p = Process::par_all(c.threads.iter().cloned());
            if let Err(d) = check_process(&c.gamma, &p, &CheckMode::Initial) {
                m.enabled = false;
                m.violations.push(format!("initial configuration does not typecheck: {d}"));
            }
        }
        m
    }

    fn check(&self, c: &Config, envs: &BTreeMap<Session, SessionEnv>) -> Result<(), Diagnostic> {
        let sessions: BTreeMap<Session, (Vec<Message>, SessionEnv)> = c
            .queues
            .keys()
            .map(|s| (s.clone(), (c.queues[s].clone(), envs.get(s).cloned().unwrap_or_default())))
            .collect();
        check_configuration(&c.gamma, &c.threads, &sessions)
    }

    fn after(&mut self, c: &Config, ev: &Event, init: Option<(Session, String)>) {
        if !self.enabled {
            return;
        }
        let mut base = self.envs.clone();
        base.retain(|s, _| c.queues.contains_key(s));
        if let Some((s, a)) = init {
            match initial_env(c, &s, &a) {
                Some(d) => {
                    base.insert(s, d);
                }
                None => {
                    self.violations.push(format!("step {}: cannot project the type of `{a}`", ev.step));
                    self.enabled = false;
                    return;
                }
            }
        }
        // a communication step almost always moves the environment, so the
        // unchanged one is tried last for those
        let moved = matches!(ev.rule, "Send" | "Deleg" | "Label" | "Recv" | "Branch");
        let mut candidates = vec![base.clone()];
        if let Some(s) = &ev.session {
            if let Some(d) = base.get(s) {
                let mut seen = HashSet::new();
                seen.insert(d.clone());
                for d2 in env_send_moves(d).into_iter().chain(env_step(d)) {
                    if seen.insert(d2.clone()) {
                        let mut e = base.clone();
                        e.insert(s.clone(), d2);
                        candidates.push(e);
                    }
                }
            }
        }
        if moved {
            candidates.rotate_left(1);
        }
        let mut last = None;
        for cand in candidates {
            match self.check(c, &cand) {
                Ok(()) => {
                    self.envs = cand;
                    return;
                }
                Err(d) => last = Some(d),
            }
        }
        let why = last.map(|d| d.to_string()).unwrap_or_default();
        self.violations.push(format!("step {} ({} {}): {why}", ev.step, ev.rule, ev.redex));
        self.enabled = false;
    }
}

/// Walks each endpoint's projected local type along the observed actions.
struct FidelityMonitor {
    states: BTreeMap<Chan, LocalType>,
    violations: Vec<String>,
    enabled: bool,
}

impl FidelityMonitor {
    fn after(&mut self, c: &Config, ev: &Event, init: &Option<(Session, String)>) {
        if !self.enabled {
            return;
        }
        if let Some((s, a)) = init {
            if let Some(d) = initial_env(c, s, a) {
                for (k, t) in d {
                    self.states.insert(k, t.cont.unwrap_or(Ty::End));
                }
            }
            return;
        }
        let (Some(ep), Some(m)) = (&ev.endpoint, &ev.message) else { return };
        let Some(t) = self.states.get(ep) else { return };
        let head = ground_head(t);
        let next = match (ev.rule, head, &m.content) {
            ("Send" | "Deleg", Some(Ty::Act(LAct::Out { peer, cont, .. })), _) if same_participant(&peer, &m.to) => {
                Some(*cont)
            }
            ("Recv", Some(Ty::Act(LAct::In { peer, cont, .. })), _) if same_participant(&peer, &m.from) => Some(*cont),
            ("Label", Some(Ty::Act(LAct::Sel { peer, mut branches })), MsgContent::Label(l))
                if same_participant(&peer, &m.to) =>
            {
                branches.remove(l)
            }
            ("Branch", Some(Ty::Act(LAct::Bra { peer, mut branches })), MsgContent::Label(l))
                if same_participant(&peer, &m.from) =>
            {
                branches.remove(l)
            }
            _ => None,
        };
        match next {
            Some(t2) => {
                self.states.insert(ep.clone(), t2);
            }
            None => {
                self.violations.push(format!("step {}: {} {} leaves the local type {t} of {ep}", ev.step, ev.rule, m));
                self.states.remove(ep);
            }
        }
    }

    fn finish(&mut self) {
        for (c, t) in &self.states {
            if normal_form(t).ok() != Some(Ty::End) {
                self.violations.push(format!("{c} stops with remaining type {t}"));
            }
        }
    }
}

/// Runs `c` under `sched` with `opts.fuel` steps at most.
pub fn run(c: &Config, sched: Scheduler, opts: &RunOptions) -> Result<RunReport, SimError> {
    if let Scheduler::Exhaustive(depth) = sched {
        return exhaustive(c, depth, opts);
    }
    let mut c = c.clone();
    let mut rng = match sched {
        Scheduler::Random(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        _ => None,
    };
    let mut sr = SrMonitor::new(&c, opts.check_sr);
    let mut fid = FidelityMonitor { states: BTreeMap::new(), violations: Vec::new(), enabled: opts.fidelity };
    let mut trace = Vec::new();
    let mut turn = 0usize;
    let verdict = loop {
        let choices = c.enabled();
        if choices.is_empty() {
            break if c.is_done() { RunVerdict::Done } else { RunVerdict::Stuck(stuck_report(&c)) };
        }
        if trace.len() >= opts.fuel {
            break RunVerdict::FuelOut;
        }
        let pick = match &mut rng {
            Some(r) => choices[r.random_range(0..choices.len())],
            None => {
                let k = turn % choices.len();
                turn += 1;
                choices[k]
            }
        };
        let Some((ev, init)) = c.step(pick, trace.len())? else {
            break RunVerdict::Stuck(stuck_report(&c));
        };
        sr.after(&c, &ev, init.clone());
        fid.after(&c, &ev, &init);
        trace.push(ev);
    };
    if verdict == RunVerdict::Done {
        fid.finish();
    }
    Ok(RunReport {
        verdict,
        trace,
        sr_violations: sr.violations,
        fidelity_violations: fid.violations,
        states: 0,
        final_config: c,
    })
}

fn exhaustive(start: &Config, depth: usize, opts: &RunOptions) -> Result<RunReport, SimError> {
    let mut seen = HashSet::new();
    let mut stack: Vec<(Config, Vec<Event>)> = vec![(start.clone(), Vec::new())];
    let mut truncated = false;
    let mut done: Option<(Config, Vec<Event>)> = None;
    while let Some((c, trace)) = stack.pop() {
        if !seen.insert(c.key()) {
            continue;
        }
        let choices = c.enabled();
        if choices.is_empty() {
            if c.is_done() {
                done.get_or_insert((c, trace));
                continue;
            }
            let report = stuck_report(&c);
            return Ok(RunReport {
                verdict: RunVerdict::Stuck(report),
                trace,
                sr_violations: Vec::new(),
                fidelity_violations: Vec::new(),
                states: seen.len(),
                final_config: c,
            });
        }
        if trace.len() >= depth.min(opts.fuel.max(1)) {
            truncated = true;
            continue;
        }
        for ch in choices.into_iter().rev() {
            let mut c2 = c.clone();
            if let Some((ev, _)) = c2.step(ch, trace.len())? {
                let mut t2 = trace.clone();
                t2.push(ev);
                stack.push((c2, t2));
            }
        }
    }
    let states = seen.len();
    Ok(match done {
        Some((c, trace)) if !truncated => RunReport {
            verdict: RunVerdict::Done,
            trace,
            sr_violations: Vec::new(),
            fidelity_violations: Vec::new(),
            states,
            final_config: c,
        },
        other => {
            let (c, trace) = other.unwrap_or_else(|| (start.clone(), Vec::new()));
            RunReport {
                verdict: RunVerdict::FuelOut,
                trace,
                sr_violations: Vec::new(),
                fidelity_violations: Vec::new(),
                states,
                final_config: c,
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::{parse_global, parse_process};

    fn env_with(a: &str, g: &str) -> StdEnv {
        StdEnv::new().with(StdEntry::Sort(a.into(), Payload::Shared(Box::new(parse_global(g).unwrap()))))
    }

    #[test]
    fn zero_index_takes_the_base() {
        let p = parse_process("(R emit r<1> with (i : nat, X) { emit r<2>; X }) @ 0").unwrap();
        let c = Config::new(&StdEnv::new(), &p).unwrap();
        let r = run(&c, Scheduler::RoundRobin, &RunOptions::new()).unwrap();
        assert_eq!(r.trace[0].rule, "ZeroR");
        assert_eq!(r.outputs()["r"], Value::Nat(1));
        assert_eq!(r.verdict, RunVerdict::Done);
    }

    #[test]
    fn two_party_run_is_typed_at_every_step() {
        let g = env_with("a", "A -> B : nat. B -> A : nat. end");
        let p = parse_process("init a[A, B](y). y!<B, 3>; y?(B, z); emit out<z> | accept a[B](w). w?(A, x); w!<A, x * 2>; 0")
            .unwrap();
        let c = Config::new(&g, &p).unwrap();
        let opts = RunOptions { check_sr: true, fidelity: true, ..RunOptions::new() };
        for seed in 0..10 {
            let r = run(&c, Scheduler::Random(seed), &opts).unwrap();
            assert_eq!(r.verdict, RunVerdict::Done);
            assert!(r.sr_violations.is_empty(), "{:?}", r.sr_violations);
            assert!(r.fidelity_violations.is_empty(), "{:?}", r.fidelity_violations);
            assert_eq!(r.outputs()["out"], Value::Nat(6));
        }
    }

    #[test]
    fn wrong_sender_gets_stuck() {
        let g = env_with("a", "A -> B : nat. end");
        let p = parse_process("init a[A, B](y). y!<B, 3>; 0 | accept a[B](w). w?(C, x); 0").unwrap();
        let c = Config::new(&g, &p).unwrap();
        let r = run(&c, Scheduler::RoundRobin, &RunOptions::new()).unwrap();
        assert!(matches!(r.verdict, RunVerdict::Stuck(_)));
        let e = run(&c, Scheduler::Exhaustive(50), &RunOptions::new()).unwrap();
        assert!(matches!(e.verdict, RunVerdict::Stuck(_)));
    }

    #[test]
    fn branching_and_complex_values() {
        let g = env_with("a", "A -> B { go: A -> B : complex. end, stop: end }");
        let p = parse_process(
            "init a[A, B](y). y <| B, go; y!<B, c(1.0, 2.0) * c(0.0, 1.0)>; 0 | accept a[B](w). w |> A { go: w?(A, x); emit r<x>, stop: 0 }",
        )
        .unwrap();
        let c = Config::new(&g, &p).unwrap();
        let opts = RunOptions { check_sr: true, fidelity: true, ..RunOptions::new() };
        let r = run(&c, Scheduler::Random(7), &opts).unwrap();
        assert_eq!(r.verdict, RunVerdict::Done);
        assert!(r.sr_violations.is_empty(), "{:?}", r.sr_violations);
        assert_eq!(r.outputs()["r"], Value::Complex(-2.0, 1.0));
        let e = run(&c, Scheduler::Exhaustive(100), &RunOptions::new()).unwrap();
        assert_eq!(e.verdict, RunVerdict::Done);
        assert!(e.states > 1);
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let g = env_with("a", "A -> B : nat. A -> C : nat. end");
        let p = parse_process("init a[A, B, C](y). y!<B, 1>; y!<C, 2>; 0 | accept a[B](w). w?(A, x); 0 | accept a[C](v). v?(A, x); 0")
            .unwrap();
        let c = Config::new(&g, &p).unwrap();
        let a = run(&c, Scheduler::Random(42), &RunOptions::new()).unwrap().trace_jsonl();
        let b = run(&c, Scheduler::Random(42), &RunOptions::new()).unwrap().trace_jsonl();
        assert_eq!(a, b);
    }

    #[test]
    fn no_external_sends() {
        assert!(external_outputs(&[]).is_empty());
    }
}
