//! Core syntax: index expressions, sorts, global and local types, kinds,
//! process types and processes, together with substitution and alpha
//! equivalence.

use std::collections::{BTreeMap, BTreeSet};

/// Arithmetic operators allowed in index expressions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Pow,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum IndexExpr {
    Var(String),
    Lit(u64),
    Bin(BinOp, Box<IndexExpr>, Box<IndexExpr>),
}

impl IndexExpr {
    pub fn var(name: &str) -> Self {
        IndexExpr::Var(name.to_string())
    }

    pub fn lit(n: u64) -> Self {
        IndexExpr::Lit(n)
    }

    pub fn bin(op: BinOp, a: IndexExpr, b: IndexExpr) -> Self {
        IndexExpr::Bin(op, Box::new(a), Box::new(b))
    }

    pub fn add(a: IndexExpr, b: IndexExpr) -> Self {
        Self::bin(BinOp::Add, a, b)
    }

    pub fn sub(a: IndexExpr, b: IndexExpr) -> Self {
        Self::bin(BinOp::Sub, a, b)
    }

    pub fn mul(a: IndexExpr, b: IndexExpr) -> Self {
        Self::bin(BinOp::Mul, a, b)
    }

    pub fn pow(a: IndexExpr, b: IndexExpr) -> Self {
        Self::bin(BinOp::Pow, a, b)
    }

    pub fn succ(self) -> Self {
        Self::add(self, IndexExpr::Lit(1))
    }

    pub fn is_ground(&self) -> bool {
        match self {
            IndexExpr::Var(_) => false,
            IndexExpr::Lit(_) => true,
            IndexExpr::Bin(_, a, b) => a.is_ground() && b.is_ground(),
        }
    }

    pub fn as_lit(&self) -> Option<u64> {
        match self {
            IndexExpr::Lit(n) => Some(*n),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Prop {
    Leq(IndexExpr, IndexExpr),
    And(Box<Prop>, Box<Prop>),
    True,
}

impl Prop {
    pub fn leq(a: IndexExpr, b: IndexExpr) -> Self {
        Prop::Leq(a, b)
    }

    pub fn and(a: Prop, b: Prop) -> Self {
        match (a, b) {
            (Prop::True, q) => q,
            (p, Prop::True) => p,
            (p, q) => Prop::And(Box::new(p), Box::new(q)),
        }
    }

    /// `a = b` as a pair of inequalities.
    pub fn eq(a: IndexExpr, b: IndexExpr) -> Self {
        Prop::and(Prop::Leq(a.clone(), b.clone()), Prop::Leq(b, a))
    }

    /// `a < b`, i.e. `a + 1 <= b`.
    pub fn lt(a: IndexExpr, b: IndexExpr) -> Self {
        Prop::Leq(a.succ(), b)
    }

    /// Flattened list of atomic inequalities.
    pub fn atoms(&self) -> Vec<(IndexExpr, IndexExpr)> {
        let mut out = Vec::new();
        fn go(p: &Prop, out: &mut Vec<(IndexExpr, IndexExpr)>) {
            match p {
                Prop::Leq(a, b) => out.push((a.clone(), b.clone())),
                Prop::And(a, b) => {
                    go(a, out);
                    go(b, out);
                }
                Prop::True => {}
            }
        }
        go(self, &mut out);
        out
    }

    pub fn conj(props: impl IntoIterator<Item = Prop>) -> Prop {
        props.into_iter().fold(Prop::True, Prop::and)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum IndexSort {
    Nat,
    Constrained {
        var: String,
        base: Box<IndexSort>,
        prop: Prop,
    },
}

impl IndexSort {
    /// `[0..hi]`.
    pub fn range(hi: IndexExpr) -> Self {
        let var = fresh_name("r", &free_ix_of(&hi));
        IndexSort::Constrained {
            prop: Prop::Leq(IndexExpr::Var(var.clone()), hi),
            var,
            base: Box::new(IndexSort::Nat),
        }
    }

    /// `[lo..hi]`; equal to [`IndexSort::range`] when `lo` is the literal 0.
    pub fn between(lo: IndexExpr, hi: IndexExpr) -> Self {
        if lo == IndexExpr::Lit(0) {
            return Self::range(hi);
        }
        let mut avoid = free_ix_of(&hi);
        lo.free_ix(&mut avoid);
        let var = fresh_name("r", &avoid);
        let v = IndexExpr::Var(var.clone());
        IndexSort::Constrained {
            prop: Prop::and(Prop::Leq(lo, v.clone()), Prop::Leq(v, hi)),
            var,
            base: Box::new(IndexSort::Nat),
        }
    }

    /// Every constraint the sort imposes on `e`.
    pub fn constraints_on(&self, e: &IndexExpr) -> Prop {
        match self {
            IndexSort::Nat => Prop::True,
            IndexSort::Constrained { var, base, prop } => {
                Prop::and(base.constraints_on(e), prop.subst_ix(var, e))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Participant {
    pub name: String,
    pub indices: Vec<IndexExpr>,
}

impl Participant {
    pub fn named(name: &str) -> Self {
        Participant { name: name.to_string(), indices: Vec::new() }
    }

    pub fn indexed(name: &str, indices: Vec<IndexExpr>) -> Self {
        Participant { name: name.to_string(), indices }
    }

    /// `name[k]` for a literal `k`.
    pub fn at(name: &str, k: u64) -> Self {
        Self::indexed(name, vec![IndexExpr::Lit(k)])
    }

    pub fn is_ground(&self) -> bool {
        self.indices.iter().all(IndexExpr::is_ground)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Label(pub String);

impl Label {
    pub fn new(s: &str) -> Self {
        Label(s.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Payload {
    Nat,
    Bool,
    Complex,
    Shared(Box<GlobalType>),
    Session(Box<LocalType>),
}

/// Guard of a conditional type.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Guard {
    PartEq(Participant, Participant),
    Prop(Prop),
}

/// Types shared by global and local types; `A` is the communication layer.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Ty<A> {
    Act(A),
    Mu(String, Box<Ty<A>>),
    Var(String),
    Rec(Box<RecNode<A>>),
    App(Box<Ty<A>>, IndexExpr),
    Cond(Guard, Box<Ty<A>>, Box<Ty<A>>),
    End,
}

/// `R base (ivar : sort) tvar. body`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RecNode<A> {
    pub base: Ty<A>,
    pub ivar: String,
    pub sort: IndexSort,
    pub tvar: String,
    pub body: Ty<A>,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GAct {
    Msg {
        from: Participant,
        to: Participant,
        payload: Payload,
        cont: Box<GlobalType>,
    },
    Branch {
        from: Participant,
        to: Participant,
        branches: BTreeMap<Label, GlobalType>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LAct {
    Out {
        peer: Participant,
        payload: Payload,
        cont: Box<LocalType>,
    },
    In {
        peer: Participant,
        payload: Payload,
        cont: Box<LocalType>,
    },
    Sel {
        peer: Participant,
        branches: BTreeMap<Label, LocalType>,
    },
    Bra {
        peer: Participant,
        branches: BTreeMap<Label, LocalType>,
    },
}

pub type GlobalType = Ty<GAct>;
pub type LocalType = Ty<LAct>;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Kind {
    Type,
    Pi(String, IndexSort, Box<Kind>),
}

/// Runtime session name.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Session(pub String);

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Chan {
    Var(String),
    Endpoint(Session, Participant),
}

/// Message types of asynchronous sends still sitting in a queue.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MsgType {
    Out(Participant, Payload),
    Sel(Participant, Label),
}

impl MsgType {
    pub fn receiver(&self) -> &Participant {
        match self {
            MsgType::Out(p, _) | MsgType::Sel(p, _) => p,
        }
    }
}

/// `msgs ; cont`.  `cont == None` is a pure message type.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GenType {
    pub msgs: Vec<MsgType>,
    pub cont: Option<LocalType>,
}

impl GenType {
    pub fn local(t: LocalType) -> Self {
        GenType { msgs: Vec::new(), cont: Some(t) }
    }

    pub fn is_local(&self) -> bool {
        self.msgs.is_empty() && self.cont.is_some()
    }
}

pub type SessionEnv = BTreeMap<Chan, GenType>;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ProcessType {
    Sess(SessionEnv),
    Pi(String, IndexSort, Box<ProcessType>),
}

/// Entry of the standard environment.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StdEntry {
    Pred(Prop),
    Sort(String, Payload),
    Index(String, IndexSort),
    ProcVar(String, ProcessType),
}

/// Ordered standard environment (later entries shadow earlier ones).
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct StdEnv {
    pub entries: Vec<StdEntry>,
}

impl StdEnv {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(&self, e: StdEntry) -> Self {
        let mut out = self.clone();
        out.entries.push(e);
        out
    }

    pub fn push(&mut self, e: StdEntry) {
        self.entries.push(e);
    }

    pub fn index_sort(&self, v: &str) -> Option<&IndexSort> {
        self.entries.iter().rev().find_map(|e| match e {
            StdEntry::Index(n, s) if n == v => Some(s),
            _ => None,
        })
    }

    pub fn value_sort(&self, v: &str) -> Option<&Payload> {
        self.entries.iter().rev().find_map(|e| match e {
            StdEntry::Sort(n, s) if n == v => Some(s),
            _ => None,
        })
    }

    pub fn proc_var(&self, v: &str) -> Option<&ProcessType> {
        self.entries.iter().rev().find_map(|e| match e {
            StdEntry::ProcVar(n, t) if n == v => Some(t),
            _ => None,
        })
    }

    pub fn index_vars(&self) -> BTreeSet<String> {
        self.entries
            .iter()
            .filter_map(|e| match e {
                StdEntry::Index(n, _) => Some(n.clone()),
                _ => None,
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Nat(u64),
    Bool(bool),
    Complex(f64, f64),
    Name(String),
    Endpoint(Session, Participant),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExprOp {
    Add,
    Sub,
    Mul,
    Pow,
}

/// Value expressions carried by messages.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Lit(Value),
    Var(String),
    Bin(ExprOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn from_index(e: &IndexExpr) -> Expr {
        match e {
            IndexExpr::Var(v) => Expr::Var(v.clone()),
            IndexExpr::Lit(n) => Expr::Lit(Value::Nat(*n)),
            IndexExpr::Bin(op, a, b) => {
                let op = match op {
                    BinOp::Add => ExprOp::Add,
                    BinOp::Sub => ExprOp::Sub,
                    BinOp::Mul => ExprOp::Mul,
                    BinOp::Pow => ExprOp::Pow,
                };
                Expr::Bin(op, Box::new(Expr::from_index(a)), Box::new(Expr::from_index(b)))
            }
        }
    }

    /// The expression as an index expression, when it is one.
    pub fn to_index(&self) -> Option<IndexExpr> {
        match self {
            Expr::Var(v) => Some(IndexExpr::Var(v.clone())),
            Expr::Lit(Value::Nat(n)) => Some(IndexExpr::Lit(*n)),
            Expr::Bin(op, a, b) => {
                let op = match op {
                    ExprOp::Add => BinOp::Add,
                    ExprOp::Sub => BinOp::Sub,
                    ExprOp::Mul => BinOp::Mul,
                    ExprOp::Pow => BinOp::Pow,
                };
                Some(IndexExpr::bin(op, a.to_index()?, b.to_index()?))
            }
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum MsgContent {
    Value(Value),
    Chan(Session, Participant),
    Label(Label),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Message {
    pub from: Participant,
    pub to: Participant,
    pub content: MsgContent,
}

/// Entry of an initiator's participant list; ranges expand once ground.
#[derive(Clone, Debug, PartialEq)]
pub enum RoleSpec {
    One(Participant),
    /// `name[from..to]`, descending when `from > to`.
    Range { name: String, from: IndexExpr, to: IndexExpr },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Process {
    Init { shared: String, roles: Vec<RoleSpec>, binder: String, body: Box<Process> },
    Accept { shared: String, role: Participant, binder: String, body: Box<Process> },
    Request { shared: String, role: Participant, session: Session },
    Send { chan: Chan, to: Participant, value: Expr, cont: Box<Process> },
    Recv { chan: Chan, from: Participant, binder: String, sort: Option<Payload>, cont: Box<Process> },
    Deleg { chan: Chan, to: Participant, delegated: Chan, cont: Box<Process> },
    Catch { chan: Chan, from: Participant, binder: String, ty: LocalType, cont: Box<Process> },
    Select { chan: Chan, to: Participant, label: Label, cont: Box<Process> },
    Branch { chan: Chan, from: Participant, branches: BTreeMap<Label, Process> },
    Mu { var: String, annot: Option<SessionEnv>, body: Box<Process> },
    PVar(String),
    PRec(Box<PRecNode>),
    PApp(Box<Process>, IndexExpr),
    NewName { name: String, ty: GlobalType, body: Box<Process> },
    NewSession { session: Session, body: Box<Process> },
    Par(Box<Process>, Box<Process>),
    Queue { session: Session, msgs: Vec<Message> },
    /// Output on an external channel outside any session.
    Emit { target: String, value: Expr, cont: Box<Process> },
    Zero,
}

/// `R base (ivar : sort) pvar [: annot]. body`.
#[derive(Clone, Debug, PartialEq)]
pub struct PRecNode {
    pub base: Process,
    pub ivar: String,
    pub sort: IndexSort,
    pub pvar: String,
    pub annot: Option<ProcessType>,
    pub body: Process,
}

impl Process {
    pub fn par(a: Process, b: Process) -> Process {
        match (a, b) {
            (Process::Zero, q) => q,
            (p, Process::Zero) => p,
            (p, q) => Process::Par(Box::new(p), Box::new(q)),
        }
    }

    pub fn par_all(ps: impl IntoIterator<Item = Process>) -> Process {
        let v: Vec<Process> = ps.into_iter().collect();
        v.into_iter().rev().fold(Process::Zero, |acc, p| match acc {
            Process::Zero => p,
            acc => Process::Par(Box::new(p), Box::new(acc)),
        })
    }
}

// ---------------------------------------------------------------------------
// Fresh names

/// `base`, then `base'`, `base''`, ... until the name avoids `avoid`.
pub fn fresh_name(base: &str, avoid: &BTreeSet<String>) -> String {
    let mut n = base.to_string();
    while avoid.contains(&n) {
        n.push('\'');
    }
    n
}

fn free_ix_of<T: IndexTerm>(t: &T) -> BTreeSet<String> {
    let mut s = BTreeSet::new();
    t.free_ix(&mut s);
    s
}

// ---------------------------------------------------------------------------
// Index substitution

/// Terms with free index variables.
pub trait IndexTerm: Sized {
    /// Capture-avoiding substitution of `e` for index variable `v`.
    fn subst_ix(&self, v: &str, e: &IndexExpr) -> Self;
    fn free_ix(&self, out: &mut BTreeSet<String>);

    fn free_index_vars(&self) -> BTreeSet<String> {
        let mut s = BTreeSet::new();
        self.free_ix(&mut s);
        s
    }
}

impl IndexTerm for IndexExpr {
    fn subst_ix(&self, v: &str, e: &IndexExpr) -> Self {
        match self {
            IndexExpr::Var(x) if x == v => e.clone(),
            IndexExpr::Var(_) | IndexExpr::Lit(_) => self.clone(),
            IndexExpr::Bin(op, a, b) => IndexExpr::bin(*op, a.subst_ix(v, e), b.subst_ix(v, e)),
        }
    }

    fn free_ix(&self, out: &mut BTreeSet<String>) {
        match self {
            IndexExpr::Var(x) => {
                out.insert(x.clone());
            }
            IndexExpr::Lit(_) => {}
            IndexExpr::Bin(_, a, b) => {
                a.free_ix(out);
                b.free_ix(out);
            }
        }
    }
}

impl IndexTerm for Prop {
    fn subst_ix(&self, v: &str, e: &IndexExpr) -> Self {
        match self {
            Prop::Leq(a, b) => Prop::Leq(a.subst_ix(v, e), b.subst_ix(v, e)),
            Prop::And(a, b) => Prop::And(Box::new(a.subst_ix(v, e)), Box::new(b.subst_ix(v, e))),
            Prop::True => Prop::True,
        }
    }

    fn free_ix(&self, out: &mut BTreeSet<String>) {
        for (a, b) in self.atoms() {
            a.free_ix(out);
            b.free_ix(out);
        }
    }
}

/// Renames binder `var` in `body` when it would capture a variable of `e`.
fn avoid_capture<T: IndexTerm>(var: &str, body: &T, v: &str, e: &IndexExpr) -> (String, T) {
    let fe = free_ix_of(e);
    if !fe.contains(var) {
        return (var.to_string(), body.subst_ix(v, e));
    }
    let mut avoid = fe;
    body.free_ix(&mut avoid);
    avoid.insert(v.to_string());
    let fresh = fresh_name(var, &avoid);
    let renamed = body.subst_ix(var, &IndexExpr::Var(fresh.clone()));
    (fresh, renamed.subst_ix(v, e))
}

impl IndexTerm for IndexSort {
    fn subst_ix(&self, v: &str, e: &IndexExpr) -> Self {
        match self {
            IndexSort::Nat => IndexSort::Nat,
            IndexSort::Constrained { var, base, prop } => {
                let base = Box::new(base.subst_ix(v, e));
                if var == v {
                    return IndexSort::Constrained { var: var.clone(), base, prop: prop.clone() };
                }
                let (var, prop) = avoid_capture(var, prop, v, e);
                IndexSort::Constrained { var, base, prop }
            }
        }
    }

    fn free_ix(&self, out: &mut BTreeSet<String>) {
        if let IndexSort::Constrained { var, base, prop } = self {
            base.free_ix(out);
            let mut inner = free_ix_of(prop);
            inner.remove(var);
            out.extend(inner);
        }
    }
}

impl IndexTerm for Participant {
    fn subst_ix(&self, v: &str, e: &IndexExpr) -> Self {
        Participant {
            name: self.name.clone(),
            indices: self.indices.iter().map(|i| i.subst_ix(v, e)).collect(),
        }
    }

    fn free_ix(&self, out: &mut BTreeSet<String>) {
        for i in &self.indices {
            i.free_ix(out);
        }
    }
}

impl IndexTerm for Payload {
    fn subst_ix(&self, v: &str, e: &IndexExpr) -> Self {
        match self {
            Payload::Shared(g) => Payload::Shared(Box::new(g.subst_ix(v, e))),
            Payload::Session(t) => Payload::Session(Box::new(t.subst_ix(v, e))),
            other => other.clone(),
        }
    }

    fn free_ix(&self, out: &mut BTreeSet<String>) {
        match self {
            Payload::Shared(g) => g.free_ix(out),
            Payload::Session(t) => t.free_ix(out),
            _ => {}
        }
    }
}

impl IndexTerm for Guard {
    fn subst_ix(&self, v: &str, e: &IndexExpr) -> Self {
        match self {
            Guard::PartEq(p, q) => Guard::PartEq(p.subst_ix(v, e), q.subst_ix(v, e)),
            Guard::Prop(p) => Guard::Prop(p.subst_ix(v, e)),
        }
    }

    fn free_ix(&self, out: &mut BTreeSet<String>) {
        match self {
            Guard::PartEq(p, q) => {
                p.free_ix(out);
                q.free_ix(out);
            }
            Guard::Prop(p) => p.free_ix(out),
        }
    }
}

/// The communication layer of a type, generic over global and local types.
pub trait Action: Clone + std::fmt::Debug + PartialEq + Eq + Ord + std::hash::Hash + IndexTerm {
    /// Continuations, in order.
    fn children(&self) -> Vec<&Ty<Self>>;
    /// Rebuilds the action with every continuation mapped through `f`.
    fn map_children(&self, f: &mut dyn FnMut(&Ty<Self>) -> Ty<Self>) -> Self;
    fn participants(&self) -> Vec<&Participant>;
    fn payloads(&self) -> Vec<&Payload>;
    /// Rebuilds the prefix itself (participants and payloads), leaving
    /// continuations untouched.
    fn map_leaves(
        &self,
        part: &mut dyn FnMut(&Participant) -> Participant,
        pay: &mut dyn FnMut(&Payload) -> Payload,
    ) -> Self;
}

impl IndexTerm for GAct {
    fn subst_ix(&self, v: &str, e: &IndexExpr) -> Self {
        match self {
            GAct::Msg { from, to, payload, cont } => GAct::Msg {
                from: from.subst_ix(v, e),
                to: to.subst_ix(v, e),
                payload: payload.subst_ix(v, e),
                cont: Box::new(cont.subst_ix(v, e)),
            },
            GAct::Branch { from, to, branches } => GAct::Branch {
                from: from.subst_ix(v, e),
                to: to.subst_ix(v, e),
                branches: branches.iter().map(|(l, g)| (l.clone(), g.subst_ix(v, e))).collect(),
            },
        }
    }

    fn free_ix(&self, out: &mut BTreeSet<String>) {
        for p in self.participants() {
            p.free_ix(out);
        }
        for u in self.payloads() {
            u.free_ix(out);
        }
        for c in self.children() {
            c.free_ix(out);
        }
    }
}

impl Action for GAct {
    fn children(&self) -> Vec<&GlobalType> {
        match self {
            GAct::Msg { cont, .. } => vec![cont],
            GAct::Branch { branches, .. } => branches.values().collect(),
        }
    }

    fn map_children(&self, f: &mut dyn FnMut(&GlobalType) -> GlobalType) -> Self {
        match self {
            GAct::Msg { from, to, payload, cont } => GAct::Msg {
                from: from.clone(),
                to: to.clone(),
                payload: payload.clone(),
                cont: Box::new(f(cont)),
            },
            GAct::Branch { from, to, branches } => GAct::Branch {
                from: from.clone(),
                to: to.clone(),
                branches: branches.iter().map(|(l, g)| (l.clone(), f(g))).collect(),
            },
        }
    }

    fn participants(&self) -> Vec<&Participant> {
        match self {
            GAct::Msg { from, to, .. } | GAct::Branch { from, to, .. } => vec![from, to],
        }
    }

    fn payloads(&self) -> Vec<&Payload> {
        match self {
            GAct::Msg { payload, .. } => vec![payload],
            GAct::Branch { .. } => vec![],
        }
    }

    fn map_leaves(
        &self,
        part: &mut dyn FnMut(&Participant) -> Participant,
        pay: &mut dyn FnMut(&Payload) -> Payload,
    ) -> Self {
        match self {
            GAct::Msg { from, to, payload, cont } => {
                GAct::Msg { from: part(from), to: part(to), payload: pay(payload), cont: cont.clone() }
            }
            GAct::Branch { from, to, branches } => {
                GAct::Branch { from: part(from), to: part(to), branches: branches.clone() }
            }
        }
    }
}

impl IndexTerm for LAct {
    fn subst_ix(&self, v: &str, e: &IndexExpr) -> Self {
        match self {
            LAct::Out { peer, payload, cont } => LAct::Out {
                peer: peer.subst_ix(v, e),
                payload: payload.subst_ix(v, e),
                cont: Box::new(cont.subst_ix(v, e)),
            },
            LAct::In { peer, payload, cont } => LAct::In {
                peer: peer.subst_ix(v, e),
                payload: payload.subst_ix(v, e),
                cont: Box::new(cont.subst_ix(v, e)),
            },
            LAct::Sel { peer, branches } => LAct::Sel {
                peer: peer.subst_ix(v, e),
                branches: branches.iter().map(|(l, t)| (l.clone(), t.subst_ix(v, e))).collect(),
            },
            LAct::Bra { peer, branches } => LAct::Bra {
                peer: peer.subst_ix(v, e),
                branches: branches.iter().map(|(l, t)| (l.clone(), t.subst_ix(v, e))).collect(),
            },
        }
    }

    fn free_ix(&self, out: &mut BTreeSet<String>) {
        for p in self.participants() {
            p.free_ix(out);
        }
        for u in self.payloads() {
            u.free_ix(out);
        }
        for c in self.children() {
            c.free_ix(out);
        }
    }
}

impl LAct {
    pub fn peer(&self) -> &Participant {
        match self {
            LAct::Out { peer, .. } | LAct::In { peer, .. } | LAct::Sel { peer, .. } | LAct::Bra { peer, .. } => peer,
        }
    }
}

impl Action for LAct {
    fn children(&self) -> Vec<&LocalType> {
        match self {
            LAct::Out { cont, .. } | LAct::In { cont, .. } => vec![cont],
            LAct::Sel { branches, .. } | LAct::Bra { branches, .. } => branches.values().collect(),
        }
    }

    fn map_children(&self, f: &mut dyn FnMut(&LocalType) -> LocalType) -> Self {
        match self {
            LAct::Out { peer, payload, cont } => {
                LAct::Out { peer: peer.clone(), payload: payload.clone(), cont: Box::new(f(cont)) }
            }
            LAct::In { peer, payload, cont } => {
                LAct::In { peer: peer.clone(), payload: payload.clone(), cont: Box::new(f(cont)) }
            }
            LAct::Sel { peer, branches } => LAct::Sel {
                peer: peer.clone(),
                branches: branches.iter().map(|(l, t)| (l.clone(), f(t))).collect(),
            },
            LAct::Bra { peer, branches } => LAct::Bra {
                peer: peer.clone(),
                branches: branches.iter().map(|(l, t)| (l.clone(), f(t))).collect(),
            },
        }
    }

    fn participants(&self) -> Vec<&Participant> {
        vec![self.peer()]
    }

    fn payloads(&self) -> Vec<&Payload> {
        match self {
            LAct::Out { payload, .. } | LAct::In { payload, .. } => vec![payload],
            _ => vec![],
        }
    }

    fn map_leaves(
        &self,
        part: &mut dyn FnMut(&Participant) -> Participant,
        pay: &mut dyn FnMut(&Payload) -> Payload,
    ) -> Self {
        match self {
            LAct::Out { peer, payload, cont } => LAct::Out { peer: part(peer), payload: pay(payload), cont: cont.clone() },
            LAct::In { peer, payload, cont } => LAct::In { peer: part(peer), payload: pay(payload), cont: cont.clone() },
            LAct::Sel { peer, branches } => LAct::Sel { peer: part(peer), branches: branches.clone() },
            LAct::Bra { peer, branches } => LAct::Bra { peer: part(peer), branches: branches.clone() },
        }
    }
}

impl<A: Action> IndexTerm for Ty<A> {
    fn subst_ix(&self, v: &str, e: &IndexExpr) -> Self {
        match self {
            Ty::Act(a) => Ty::Act(a.subst_ix(v, e)),
            Ty::Mu(x, b) => Ty::Mu(x.clone(), Box::new(b.subst_ix(v, e))),
            Ty::Var(_) | Ty::End => self.clone(),
            Ty::Rec(r) => {
                let base = r.base.subst_ix(v, e);
                let sort = r.sort.subst_ix(v, e);
                let (ivar, body) = if r.ivar == v {
                    (r.ivar.clone(), r.body.clone())
                } else {
                    avoid_capture(&r.ivar, &r.body, v, e)
                };
                Ty::Rec(Box::new(RecNode { base, ivar, sort, tvar: r.tvar.clone(), body }))
            }
            Ty::App(t, i) => Ty::App(Box::new(t.subst_ix(v, e)), i.subst_ix(v, e)),
            Ty::Cond(g, a, b) => {
                Ty::Cond(g.subst_ix(v, e), Box::new(a.subst_ix(v, e)), Box::new(b.subst_ix(v, e)))
            }
        }
    }

    fn free_ix(&self, out: &mut BTreeSet<String>) {
        match self {
            Ty::Act(a) => a.free_ix(out),
            Ty::Mu(_, b) => b.free_ix(out),
            Ty::Var(_) | Ty::End => {}
            Ty::Rec(r) => {
                r.base.free_ix(out);
                r.sort.free_ix(out);
                let mut inner = free_ix_of(&r.body);
                inner.remove(&r.ivar);
                out.extend(inner);
            }
            Ty::App(t, i) => {
                t.free_ix(out);
                i.free_ix(out);
            }
            Ty::Cond(g, a, b) => {
                g.free_ix(out);
                a.free_ix(out);
                b.free_ix(out);
            }
        }
    }
}

impl IndexTerm for Kind {
    fn subst_ix(&self, v: &str, e: &IndexExpr) -> Self {
        match self {
            Kind::Type => Kind::Type,
            Kind::Pi(j, s, k) => {
                let s = s.subst_ix(v, e);
                if j == v {
                    return Kind::Pi(j.clone(), s, k.clone());
                }
                let (j, k) = avoid_capture(j, k.as_ref(), v, e);
                Kind::Pi(j, s, Box::new(k))
            }
        }
    }

    fn free_ix(&self, out: &mut BTreeSet<String>) {
        if let Kind::Pi(j, s, k) = self {
            s.free_ix(out);
            let mut inner = free_ix_of(k.as_ref());
            inner.remove(j);
            out.extend(inner);
        }
    }
}

impl IndexTerm for MsgType {
    fn subst_ix(&self, v: &str, e: &IndexExpr) -> Self {
        match self {
            MsgType::Out(p, u) => MsgType::Out(p.subst_ix(v, e), u.subst_ix(v, e)),
            MsgType::Sel(p, l) => MsgType::Sel(p.subst_ix(v, e), l.clone()),
        }
    }

    fn free_ix(&self, out: &mut BTreeSet<String>) {
        match self {
            MsgType::Out(p, u) => {
                p.free_ix(out);
                u.free_ix(out);
            }
            MsgType::Sel(p, _) => p.free_ix(out),
        }
    }
}

impl IndexTerm for GenType {
    fn subst_ix(&self, v: &str, e: &IndexExpr) -> Self {
        GenType {
            msgs: self.msgs.iter().map(|m| m.subst_ix(v, e)).collect(),
            cont: self.cont.as_ref().map(|t| t.subst_ix(v, e)),
        }
    }

    fn free_ix(&self, out: &mut BTreeSet<String>) {
        for m in &self.msgs {
            m.free_ix(out);
        }
        if let Some(t) = &self.cont {
            t.free_ix(out);
        }
    }
}

impl IndexTerm for Chan {
    fn subst_ix(&self, v: &str, e: &IndexExpr) -> Self {
        match self {
            Chan::Var(_) => self.clone(),
            Chan::Endpoint(s, p) => Chan::Endpoint(s.clone(), p.subst_ix(v, e)),
        }
    }

    fn free_ix(&self, out: &mut BTreeSet<String>) {
        if let Chan::Endpoint(_, p) = self {
            p.free_ix(out);
        }
    }
}

impl IndexTerm for SessionEnv {
    fn subst_ix(&self, v: &str, e: &IndexExpr) -> Self {
        self.iter().map(|(c, t)| (c.subst_ix(v, e), t.subst_ix(v, e))).collect()
    }

    fn free_ix(&self, out: &mut BTreeSet<String>) {
        for (c, t) in self {
            c.free_ix(out);
            t.free_ix(out);
        }
    }
}

impl IndexTerm for ProcessType {
    fn subst_ix(&self, v: &str, e: &IndexExpr) -> Self {
        match self {
            ProcessType::Sess(d) => ProcessType::Sess(d.subst_ix(v, e)),
            ProcessType::Pi(j, s, t) => {
                let s = s.subst_ix(v, e);
                if j == v {
                    return ProcessType::Pi(j.clone(), s, t.clone());
                }
                let (j, t) = avoid_capture(j, t.as_ref(), v, e);
                ProcessType::Pi(j, s, Box::new(t))
            }
        }
    }

    fn free_ix(&self, out: &mut BTreeSet<String>) {
        match self {
            ProcessType::Sess(d) => d.free_ix(out),
            ProcessType::Pi(j, s, t) => {
                s.free_ix(out);
                let mut inner = free_ix_of(t.as_ref());
                inner.remove(j);
                out.extend(inner);
            }
        }
    }
}

impl IndexTerm for Expr {
    fn subst_ix(&self, v: &str, e: &IndexExpr) -> Self {
        match self {
            Expr::Var(x) if x == v => Expr::from_index(e),
            Expr::Bin(op, a, b) => Expr::Bin(*op, Box::new(a.subst_ix(v, e)), Box::new(b.subst_ix(v, e))),
            Expr::Lit(Value::Endpoint(s, p)) => Expr::Lit(Value::Endpoint(s.clone(), p.subst_ix(v, e))),
            other => other.clone(),
        }
    }

    fn free_ix(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Var(x) => {
                out.insert(x.clone());
            }
            Expr::Bin(_, a, b) => {
                a.free_ix(out);
                b.free_ix(out);
            }
            _ => {}
        }
    }
}

impl IndexTerm for RoleSpec {
    fn subst_ix(&self, v: &str, e: &IndexExpr) -> Self {
        match self {
            RoleSpec::One(p) => RoleSpec::One(p.subst_ix(v, e)),
            RoleSpec::Range { name, from, to } => RoleSpec::Range {
                name: name.clone(),
                from: from.subst_ix(v, e),
                to: to.subst_ix(v, e),
            },
        }
    }

    fn free_ix(&self, out: &mut BTreeSet<String>) {
        match self {
            RoleSpec::One(p) => p.free_ix(out),
            RoleSpec::Range { from, to, .. } => {
                from.free_ix(out);
                to.free_ix(out);
            }
        }
    }
}

impl IndexTerm for MsgContent {
    fn subst_ix(&self, v: &str, e: &IndexExpr) -> Self {
        match self {
            MsgContent::Chan(s, p) => MsgContent::Chan(s.clone(), p.subst_ix(v, e)),
            other => other.clone(),
        }
    }

    fn free_ix(&self, out: &mut BTreeSet<String>) {
        if let MsgContent::Chan(_, p) = self {
            p.free_ix(out);
        }
    }
}

impl IndexTerm for Process {
    fn subst_ix(&self, v: &str, e: &IndexExpr) -> Self {
        let bx = |p: &Process| Box::new(p.subst_ix(v, e));
        match self {
            Process::Init { shared, roles, binder, body } => Process::Init {
                shared: shared.clone(),
                roles: roles.iter().map(|r| r.subst_ix(v, e)).collect(),
                binder: binder.clone(),
                body: bx(body),
            },
            Process::Accept { shared, role, binder, body } => Process::Accept {
                shared: shared.clone(),
                role: role.subst_ix(v, e),
                binder: binder.clone(),
                body: bx(body),
            },
            Process::Request { shared, role, session } => Process::Request {
                shared: shared.clone(),
                role: role.subst_ix(v, e),
                session: session.clone(),
            },
            Process::Send { chan, to, value, cont } => Process::Send {
                chan: chan.subst_ix(v, e),
                to: to.subst_ix(v, e),
                value: value.subst_ix(v, e),
                cont: bx(cont),
            },
            Process::Recv { chan, from, binder, sort, cont } => Process::Recv {
                chan: chan.subst_ix(v, e),
                from: from.subst_ix(v, e),
                binder: binder.clone(),
                sort: sort.as_ref().map(|u| u.subst_ix(v, e)),
                cont: if binder == v { cont.clone() } else { bx(cont) },
            },
            Process::Deleg { chan, to, delegated, cont } => Process::Deleg {
                chan: chan.subst_ix(v, e),
                to: to.subst_ix(v, e),
                delegated: delegated.subst_ix(v, e),
                cont: bx(cont),
            },
            Process::Catch { chan, from, binder, ty, cont } => Process::Catch {
                chan: chan.subst_ix(v, e),
                from: from.subst_ix(v, e),
                binder: binder.clone(),
                ty: ty.subst_ix(v, e),
                cont: bx(cont),
            },
            Process::Select { chan, to, label, cont } => Process::Select {
                chan: chan.subst_ix(v, e),
                to: to.subst_ix(v, e),
                label: label.clone(),
                cont: bx(cont),
            },
            Process::Branch { chan, from, branches } => Process::Branch {
                chan: chan.subst_ix(v, e),
                from: from.subst_ix(v, e),
                branches: branches.iter().map(|(l, p)| (l.clone(), p.subst_ix(v, e))).collect(),
            },
            Process::Mu { var, annot, body } => Process::Mu {
                var: var.clone(),
                annot: annot.as_ref().map(|d| d.subst_ix(v, e)),
                body: bx(body),
            },
            Process::PVar(_) | Process::Zero => self.clone(),
            Process::PRec(r) => {
                let base = r.base.subst_ix(v, e);
                let sort = r.sort.subst_ix(v, e);
                if r.ivar == v {
                    return Process::PRec(Box::new(PRecNode {
                        base,
                        sort,
                        ivar: r.ivar.clone(),
                        pvar: r.pvar.clone(),
                        annot: r.annot.clone(),
                        body: r.body.clone(),
                    }));
                }
                let mut ivar = r.ivar.clone();
                let mut body = r.body.clone();
                let mut annot = r.annot.clone();
                if free_ix_of(e).contains(&ivar) {
                    let mut avoid = free_ix_of(e);
                    body.free_ix(&mut avoid);
                    if let Some(a) = &annot {
                        a.free_ix(&mut avoid);
                    }
                    avoid.insert(v.to_string());
                    let fresh = fresh_name(&ivar, &avoid);
                    let fv = IndexExpr::Var(fresh.clone());
                    body = body.subst_ix(&ivar, &fv);
                    annot = annot.map(|a| a.subst_ix(&ivar, &fv));
                    ivar = fresh;
                }
                Process::PRec(Box::new(PRecNode {
                    base,
                    sort,
                    ivar,
                    pvar: r.pvar.clone(),
                    annot: annot.map(|a| a.subst_ix(v, e)),
                    body: body.subst_ix(v, e),
                }))
            }
            Process::PApp(p, i) => Process::PApp(bx(p), i.subst_ix(v, e)),
            Process::NewName { name, ty, body } => {
                Process::NewName { name: name.clone(), ty: ty.subst_ix(v, e), body: bx(body) }
            }
            Process::NewSession { session, body } => {
                Process::NewSession { session: session.clone(), body: bx(body) }
            }
            Process::Par(a, b) => Process::Par(bx(a), bx(b)),
            Process::Queue { session, msgs } => Process::Queue {
                session: session.clone(),
                msgs: msgs
                    .iter()
                    .map(|m| Message {
                        from: m.from.subst_ix(v, e),
                        to: m.to.subst_ix(v, e),
                        content: m.content.subst_ix(v, e),
                    })
                    .collect(),
            },
            Process::Emit { target, value, cont } => {
                Process::Emit { target: target.clone(), value: value.subst_ix(v, e), cont: bx(cont) }
            }
        }
    }

    fn free_ix(&self, out: &mut BTreeSet<String>) {
        match self {
            Process::Init { roles, body, .. } => {
                for r in roles {
                    r.free_ix(out);
                }
                body.free_ix(out);
            }
            Process::Accept { role, body, .. } => {
                role.free_ix(out);
                body.free_ix(out);
            }
            Process::Request { role, .. } => role.free_ix(out),
            Process::Send { chan, to, value, cont } => {
                chan.free_ix(out);
                to.free_ix(out);
                value.free_ix(out);
                cont.free_ix(out);
            }
            Process::Recv { chan, from, sort, cont, .. } => {
                chan.free_ix(out);
                from.free_ix(out);
                if let Some(u) = sort {
                    u.free_ix(out);
                }
                cont.free_ix(out);
            }
            Process::Deleg { chan, to, delegated, cont } => {
                chan.free_ix(out);
                to.free_ix(out);
                delegated.free_ix(out);
                cont.free_ix(out);
            }
            Process::Catch { chan, from, ty, cont, .. } => {
                chan.free_ix(out);
                from.free_ix(out);
                ty.free_ix(out);
                cont.free_ix(out);
            }
            Process::Select { chan, to, cont, .. } => {
                chan.free_ix(out);
                to.free_ix(out);
                cont.free_ix(out);
            }
            Process::Branch { chan, from, branches } => {
                chan.free_ix(out);
                from.free_ix(out);
                for p in branches.values() {
                    p.free_ix(out);
                }
            }
            Process::Mu { annot, body, .. } => {
                if let Some(a) = annot {
                    a.free_ix(out);
                }
                body.free_ix(out);
            }
            Process::PVar(_) | Process::Zero => {}
            Process::PRec(r) => {
                r.base.free_ix(out);
                r.sort.free_ix(out);
                let mut inner = free_ix_of(&r.body);
                if let Some(a) = &r.annot {
                    a.free_ix(&mut inner);
                }
                inner.remove(&r.ivar);
                out.extend(inner);
            }
            Process::PApp(p, i) => {
                p.free_ix(out);
                i.free_ix(out);
            }
            Process::NewName { ty, body, .. } => {
                ty.free_ix(out);
                body.free_ix(out);
            }
            Process::NewSession { body, .. } => body.free_ix(out),
            Process::Par(a, b) => {
                a.free_ix(out);
                b.free_ix(out);
            }
            Process::Queue { msgs, .. } => {
                for m in msgs {
                    m.from.free_ix(out);
                    m.to.free_ix(out);
                    m.content.free_ix(out);
                }
            }
            Process::Emit { value, cont, .. } => {
                value.free_ix(out);
                cont.free_ix(out);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Type variables

impl<A: Action> Ty<A> {
    pub fn act(a: A) -> Self {
        Ty::Act(a)
    }

    pub fn mu(x: &str, body: Ty<A>) -> Self {
        Ty::Mu(x.to_string(), Box::new(body))
    }

    pub fn tvar(x: &str) -> Self {
        Ty::Var(x.to_string())
    }

    pub fn rec(base: Ty<A>, ivar: &str, sort: IndexSort, tvar: &str, body: Ty<A>) -> Self {
        Ty::Rec(Box::new(RecNode { base, ivar: ivar.to_string(), sort, tvar: tvar.to_string(), body }))
    }

    pub fn app(t: Ty<A>, e: IndexExpr) -> Self {
        Ty::App(Box::new(t), e)
    }

    pub fn cond(g: Guard, a: Ty<A>, b: Ty<A>) -> Self {
        Ty::Cond(g, Box::new(a), Box::new(b))
    }

    pub fn free_tvars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_ftv(&mut out);
        out
    }

    fn collect_ftv(&self, out: &mut BTreeSet<String>) {
        match self {
            Ty::Act(a) => {
                for c in a.children() {
                    c.collect_ftv(out);
                }
            }
            Ty::Mu(x, b) => {
                let mut inner = b.free_tvars();
                inner.remove(x);
                out.extend(inner);
            }
            Ty::Var(x) => {
                out.insert(x.clone());
            }
            Ty::Rec(r) => {
                r.base.collect_ftv(out);
                let mut inner = r.body.free_tvars();
                inner.remove(&r.tvar);
                out.extend(inner);
            }
            Ty::App(t, _) => t.collect_ftv(out),
            Ty::Cond(_, a, b) => {
                a.collect_ftv(out);
                b.collect_ftv(out);
            }
            Ty::End => {}
        }
    }

    /// All type variable names occurring anywhere, bound or free.
    fn all_tvars(&self, out: &mut BTreeSet<String>) {
        match self {
            Ty::Act(a) => {
                for c in a.children() {
                    c.all_tvars(out);
                }
            }
            Ty::Mu(x, b) => {
                out.insert(x.clone());
                b.all_tvars(out);
            }
            Ty::Var(x) => {
                out.insert(x.clone());
            }
            Ty::Rec(r) => {
                out.insert(r.tvar.clone());
                r.base.all_tvars(out);
                r.body.all_tvars(out);
            }
            Ty::App(t, _) => t.all_tvars(out),
            Ty::Cond(_, a, b) => {
                a.all_tvars(out);
                b.all_tvars(out);
            }
            Ty::End => {}
        }
    }

    /// Capture-avoiding substitution of `repl` for the type variable `x`.
    pub fn subst_tvar(&self, x: &str, repl: &Ty<A>) -> Ty<A> {
        let ftv = repl.free_tvars();
        let fix = repl.free_index_vars();
        self.subst_tvar_with(x, repl, &ftv, &fix)
    }

    fn subst_tvar_with(&self, x: &str, repl: &Ty<A>, ftv: &BTreeSet<String>, fix: &BTreeSet<String>) -> Ty<A> {
        match self {
            Ty::Var(y) if y == x => repl.clone(),
            Ty::Var(_) | Ty::End => self.clone(),
            Ty::Act(a) => Ty::Act(a.map_children(&mut |c| c.subst_tvar_with(x, repl, ftv, fix))),
            Ty::Mu(y, b) => {
                if y == x || !b.free_tvars().contains(x) {
                    return self.clone();
                }
                let (y, b) = self.rename_tbinder(y, b, ftv);
                Ty::Mu(y, Box::new(b.subst_tvar_with(x, repl, ftv, fix)))
            }
            Ty::Rec(r) => {
                let base = r.base.subst_tvar_with(x, repl, ftv, fix);
                if r.tvar == x || !r.body.free_tvars().contains(x) {
                    return Ty::Rec(Box::new(RecNode { base, ..(**r).clone() }));
                }
                let (tvar, body) = self.rename_tbinder(&r.tvar, &r.body, ftv);
                let (ivar, body) = if fix.contains(&r.ivar) {
                    let mut avoid = fix.clone();
                    body.free_ix(&mut avoid);
                    let fresh = fresh_name(&r.ivar, &avoid);
                    let b = body.subst_ix(&r.ivar, &IndexExpr::Var(fresh.clone()));
                    (fresh, b)
                } else {
                    (r.ivar.clone(), body)
                };
                Ty::Rec(Box::new(RecNode {
                    base,
                    ivar,
                    sort: r.sort.clone(),
                    tvar,
                    body: body.subst_tvar_with(x, repl, ftv, fix),
                }))
            }
            Ty::App(t, i) => Ty::App(Box::new(t.subst_tvar_with(x, repl, ftv, fix)), i.clone()),
            Ty::Cond(g, a, b) => Ty::Cond(
                g.clone(),
                Box::new(a.subst_tvar_with(x, repl, ftv, fix)),
                Box::new(b.subst_tvar_with(x, repl, ftv, fix)),
            ),
        }
    }

    fn rename_tbinder(&self, y: &str, body: &Ty<A>, avoid_ftv: &BTreeSet<String>) -> (String, Ty<A>) {
        if !avoid_ftv.contains(y) {
            return (y.to_string(), body.clone());
        }
        let mut avoid = avoid_ftv.clone();
        body.all_tvars(&mut avoid);
        let fresh = fresh_name(y, &avoid);
        let renamed = body.subst_tvar(y, &Ty::Var(fresh.clone()));
        (fresh, renamed)
    }

    /// Replaces every `end` in continuation position by the type variable `x`.
    pub fn subst_end_with_tvar(&self, x: &str) -> Ty<A> {
        let xs: BTreeSet<String> = [x.to_string()].into_iter().collect();
        match self {
            Ty::End => Ty::Var(x.to_string()),
            Ty::Var(_) => self.clone(),
            Ty::Act(a) => Ty::Act(a.map_children(&mut |c| c.subst_end_with_tvar(x))),
            Ty::Mu(y, b) => {
                let (y, b) = self.rename_tbinder(y, b, &xs);
                Ty::Mu(y, Box::new(b.subst_end_with_tvar(x)))
            }
            Ty::Rec(r) => {
                let (tvar, body) = self.rename_tbinder(&r.tvar, &r.body, &xs);
                Ty::Rec(Box::new(RecNode {
                    base: r.base.subst_end_with_tvar(x),
                    ivar: r.ivar.clone(),
                    sort: r.sort.clone(),
                    tvar,
                    body: body.subst_end_with_tvar(x),
                }))
            }
            Ty::App(t, i) => Ty::App(Box::new(t.subst_end_with_tvar(x)), i.clone()),
            Ty::Cond(g, a, b) => {
                Ty::Cond(g.clone(), Box::new(a.subst_end_with_tvar(x)), Box::new(b.subst_end_with_tvar(x)))
            }
        }
    }

    /// Structural size, used to bound searches.
    pub fn size(&self) -> usize {
        match self {
            Ty::Act(a) => 1 + a.children().iter().map(|c| c.size()).sum::<usize>(),
            Ty::Mu(_, b) => 1 + b.size(),
            Ty::Var(_) | Ty::End => 1,
            Ty::Rec(r) => 1 + r.base.size() + r.body.size(),
            Ty::App(t, _) => 1 + t.size(),
            Ty::Cond(_, a, b) => 1 + a.size() + b.size(),
        }
    }

    /// Whether the type is closed in both type and index variables.
    pub fn is_closed(&self) -> bool {
        self.free_tvars().is_empty() && self.free_index_vars().is_empty()
    }
}

// ---------------------------------------------------------------------------
// Alpha equivalence

/// Renames every binder to a canonical name determined by binding depth.
pub trait Canonical {
    fn canonical(&self) -> Self;
}

struct Canon {
    ix: Vec<(String, String)>,
    tv: Vec<(String, String)>,
}

impl Canon {
    fn ix_lookup(&self, v: &str) -> IndexExpr {
        for (from, to) in self.ix.iter().rev() {
            if from == v {
                return IndexExpr::Var(to.clone());
            }
        }
        IndexExpr::Var(v.to_string())
    }

    fn expr(&self, e: &IndexExpr) -> IndexExpr {
        match e {
            IndexExpr::Var(v) => self.ix_lookup(v),
            IndexExpr::Lit(_) => e.clone(),
            IndexExpr::Bin(op, a, b) => IndexExpr::bin(*op, self.expr(a), self.expr(b)),
        }
    }

    fn prop(&self, p: &Prop) -> Prop {
        match p {
            Prop::Leq(a, b) => Prop::Leq(self.expr(a), self.expr(b)),
            Prop::And(a, b) => Prop::And(Box::new(self.prop(a)), Box::new(self.prop(b))),
            Prop::True => Prop::True,
        }
    }

    fn push_ix(&mut self, v: &str) -> String {
        let name = format!("%i{}", self.ix.len());
        self.ix.push((v.to_string(), name.clone()));
        name
    }

    fn sort(&mut self, s: &IndexSort) -> IndexSort {
        match s {
            IndexSort::Nat => IndexSort::Nat,
            IndexSort::Constrained { var, base, prop } => {
                let base = Box::new(self.sort(base));
                let name = self.push_ix(var);
                let prop = self.prop(prop);
                self.ix.pop();
                IndexSort::Constrained { var: name, base, prop }
            }
        }
    }

    fn part(&self, p: &Participant) -> Participant {
        Participant { name: p.name.clone(), indices: p.indices.iter().map(|e| self.expr(e)).collect() }
    }

    fn payload(&mut self, u: &Payload) -> Payload {
        match u {
            Payload::Shared(g) => {
                let saved = std::mem::take(&mut self.tv);
                let g = self.ty(g, &mut |c: &mut Canon, a: &GAct| c.gact(a));
                self.tv = saved;
                Payload::Shared(Box::new(g))
            }
            Payload::Session(t) => {
                let saved = std::mem::take(&mut self.tv);
                let t = self.ty(t, &mut |c: &mut Canon, a: &LAct| c.lact(a));
                self.tv = saved;
                Payload::Session(Box::new(t))
            }
            other => other.clone(),
        }
    }

    fn guard(&self, g: &Guard) -> Guard {
        match g {
            Guard::PartEq(p, q) => Guard::PartEq(self.part(p), self.part(q)),
            Guard::Prop(p) => Guard::Prop(self.prop(p)),
        }
    }

    fn gact(&mut self, a: &GAct) -> GAct {
        match a {
            GAct::Msg { from, to, payload, cont } => GAct::Msg {
                from: self.part(from),
                to: self.part(to),
                payload: self.payload(payload),
                cont: Box::new(self.ty(cont, &mut |c: &mut Canon, a: &GAct| c.gact(a))),
            },
            GAct::Branch { from, to, branches } => GAct::Branch {
                from: self.part(from),
                to: self.part(to),
                branches: branches
                    .iter()
                    .map(|(l, g)| (l.clone(), self.ty(g, &mut |c: &mut Canon, a: &GAct| c.gact(a))))
                    .collect(),
            },
        }
    }

    fn lact(&mut self, a: &LAct) -> LAct {
        let rec = |c: &mut Canon, t: &LocalType| c.ty(t, &mut |c: &mut Canon, a: &LAct| c.lact(a));
        match a {
            LAct::Out { peer, payload, cont } => LAct::Out {
                peer: self.part(peer),
                payload: self.payload(payload),
                cont: Box::new(rec(self, cont)),
            },
            LAct::In { peer, payload, cont } => LAct::In {
                peer: self.part(peer),
                payload: self.payload(payload),
                cont: Box::new(rec(self, cont)),
            },
            LAct::Sel { peer, branches } => LAct::Sel {
                peer: self.part(peer),
                branches: branches.iter().map(|(l, t)| (l.clone(), rec(self, t))).collect(),
            },
            LAct::Bra { peer, branches } => LAct::Bra {
                peer: self.part(peer),
                branches: branches.iter().map(|(l, t)| (l.clone(), rec(self, t))).collect(),
            },
        }
    }

    fn ty<A: Action>(&mut self, t: &Ty<A>, act: &mut dyn FnMut(&mut Canon, &A) -> A) -> Ty<A> {
        match t {
            Ty::Act(a) => Ty::Act(act(self, a)),
            Ty::Mu(x, b) => {
                let name = format!("%t{}", self.tv.len());
                self.tv.push((x.clone(), name.clone()));
                let b = self.ty(b, act);
                self.tv.pop();
                Ty::Mu(name, Box::new(b))
            }
            Ty::Var(x) => {
                for (from, to) in self.tv.iter().rev() {
                    if from == x {
                        return Ty::Var(to.clone());
                    }
                }
                t.clone()
            }
            Ty::Rec(r) => {
                let base = self.ty(&r.base, act);
                let sort = self.sort(&r.sort);
                let iname = self.push_ix(&r.ivar);
                let tname = format!("%t{}", self.tv.len());
                self.tv.push((r.tvar.clone(), tname.clone()));
                let body = self.ty(&r.body, act);
                self.tv.pop();
                self.ix.pop();
                Ty::Rec(Box::new(RecNode { base, ivar: iname, sort, tvar: tname, body }))
            }
            Ty::App(f, e) => Ty::App(Box::new(self.ty(f, act)), self.expr(e)),
            Ty::Cond(g, a, b) => {
                let g = self.guard(g);
                Ty::Cond(g, Box::new(self.ty(a, act)), Box::new(self.ty(b, act)))
            }
            Ty::End => Ty::End,
        }
    }

    fn kind(&mut self, k: &Kind) -> Kind {
        match k {
            Kind::Type => Kind::Type,
            Kind::Pi(j, s, k) => {
                let s = self.sort(s);
                let name = self.push_ix(j);
                let k = self.kind(k);
                self.ix.pop();
                Kind::Pi(name, s, Box::new(k))
            }
        }
    }
}

fn canon() -> Canon {
    Canon { ix: Vec::new(), tv: Vec::new() }
}

impl Canonical for GlobalType {
    fn canonical(&self) -> Self {
        canon().ty(self, &mut |c: &mut Canon, a: &GAct| c.gact(a))
    }
}

impl Canonical for LocalType {
    fn canonical(&self) -> Self {
        canon().ty(self, &mut |c: &mut Canon, a: &LAct| c.lact(a))
    }
}

impl Canonical for Kind {
    fn canonical(&self) -> Self {
        canon().kind(self)
    }
}

impl Canonical for IndexSort {
    fn canonical(&self) -> Self {
        canon().sort(self)
    }
}

pub fn alpha_eq<T: Canonical + PartialEq>(a: &T, b: &T) -> bool {
    a == b || a.canonical() == b.canonical()
}

// ---------------------------------------------------------------------------
// Derived forms

/// `foreach i < e { G }` as `(R end (i : [0..e]) x. G[x/end]) @ e`.
pub fn foreach<A: Action>(ivar: &str, bound: IndexExpr, body: Ty<A>) -> Ty<A> {
    let x = fresh_name("x", &body.free_tvars());
    Ty::app(Ty::rec(Ty::End, ivar, IndexSort::range(bound.clone()), &x, body.subst_end_with_tvar(&x)), bound)
}

/// `G1 ; G2` as `(R G2 (i : [0..1]) x. G1[x/end]) @ 1`.
pub fn seq<A: Action>(first: Ty<A>, second: Ty<A>) -> Ty<A> {
    let mut avoid = first.free_tvars();
    avoid.extend(second.free_tvars());
    let x = fresh_name("x", &avoid);
    let mut iavoid = first.free_index_vars();
    iavoid.extend(second.free_index_vars());
    let i = fresh_name("i", &iavoid);
    Ty::app(
        Ty::rec(second, &i, IndexSort::range(IndexExpr::Lit(1)), &x, first.subst_end_with_tvar(&x)),
        IndexExpr::Lit(1),
    )
}

/// `Π i : I. G` as `R end (i : I) x. G[i+1/i]`.
pub fn pi<A: Action>(ivar: &str, sort: IndexSort, body: Ty<A>) -> Ty<A> {
    let x = fresh_name("x", &body.free_tvars());
    let shifted = body.subst_ix(ivar, &IndexExpr::var(ivar).succ());
    Ty::rec(Ty::End, ivar, sort, &x, shifted)
}

/// `if e then G1 else G2` as `(R G2 (i : nat) x. G1) @ e`.
pub fn if_index<A: Action>(e: IndexExpr, then: Ty<A>, otherwise: Ty<A>) -> Ty<A> {
    let mut avoid = then.free_tvars();
    avoid.extend(otherwise.free_tvars());
    let x = fresh_name("x", &avoid);
    let mut iavoid = then.free_index_vars();
    iavoid.extend(otherwise.free_index_vars());
    let i = fresh_name("i", &iavoid);
    Ty::app(Ty::rec(otherwise, &i, IndexSort::Nat, &x, then), e)
}

/// Inverse of [`if_index`] for the shape it produces.
pub fn decode_if_index<A: Action>(t: &Ty<A>) -> Option<(IndexExpr, Ty<A>, Ty<A>)> {
    if let Ty::App(f, e) = t {
        if let Ty::Rec(r) = f.as_ref() {
            let uses_binders =
                r.body.free_tvars().contains(&r.tvar) || r.body.free_index_vars().contains(&r.ivar);
            if r.sort == IndexSort::Nat && !uses_binders {
                return Some((e.clone(), r.body.clone(), r.base.clone()));
            }
        }
    }
    None
}

/// `Cond(1 <= e)` encoded through [`if_index`]; other guards have no encoding.
pub fn encode_cond<A: Action>(t: &Ty<A>) -> Option<Ty<A>> {
    if let Ty::Cond(Guard::Prop(Prop::Leq(IndexExpr::Lit(1), e)), a, b) = t {
        return Some(if_index(e.clone(), (**a).clone(), (**b).clone()));
    }
    None
}

pub fn decode_cond<A: Action>(t: &Ty<A>) -> Option<Ty<A>> {
    decode_if_index(t).map(|(e, a, b)| Ty::cond(Guard::Prop(Prop::Leq(IndexExpr::Lit(1), e)), a, b))
}

// ---------------------------------------------------------------------------
// Process substitutions (replacements are closed)

impl Process {
    /// Replaces process variable `x` by the closed process `repl`.
    pub fn subst_pvar(&self, x: &str, repl: &Process) -> Process {
        self.map_proc(&mut |p| match p {
            Process::PVar(y) if y == x => Some(repl.clone()),
            Process::Mu { var, .. } if var == x => Some(p.clone()),
            Process::PRec(r) if r.pvar == x => {
                let mut r2 = (**r).clone();
                r2.base = r.base.subst_pvar(x, repl);
                Some(Process::PRec(Box::new(r2)))
            }
            _ => None,
        })
    }

    /// Replaces the channel variable `y` by `c`.
    pub fn subst_chan(&self, y: &str, c: &Chan) -> Process {
        let fix = |ch: &Chan| match ch {
            Chan::Var(v) if v == y => c.clone(),
            other => other.clone(),
        };
        self.map_proc(&mut |p| {
            let shadow = match p {
                Process::Init { binder, .. } | Process::Accept { binder, .. } | Process::Catch { binder, .. } => {
                    binder == y
                }
                Process::Recv { binder, .. } => binder == y,
                _ => false,
            };
            match p {
                Process::Send { chan, to, value, cont } => Some(Process::Send {
                    chan: fix(chan),
                    to: to.clone(),
                    value: value.clone(),
                    cont: Box::new(cont.subst_chan(y, c)),
                }),
                Process::Recv { chan, from, binder, sort, cont } => Some(Process::Recv {
                    chan: fix(chan),
                    from: from.clone(),
                    binder: binder.clone(),
                    sort: sort.clone(),
                    cont: if shadow { cont.clone() } else { Box::new(cont.subst_chan(y, c)) },
                }),
                Process::Deleg { chan, to, delegated, cont } => Some(Process::Deleg {
                    chan: fix(chan),
                    to: to.clone(),
                    delegated: fix(delegated),
                    cont: Box::new(cont.subst_chan(y, c)),
                }),
                Process::Catch { chan, from, binder, ty, cont } => Some(Process::Catch {
                    chan: fix(chan),
                    from: from.clone(),
                    binder: binder.clone(),
                    ty: ty.clone(),
                    cont: if shadow { cont.clone() } else { Box::new(cont.subst_chan(y, c)) },
                }),
                Process::Select { chan, to, label, cont } => Some(Process::Select {
                    chan: fix(chan),
                    to: to.clone(),
                    label: label.clone(),
                    cont: Box::new(cont.subst_chan(y, c)),
                }),
                Process::Branch { chan, from, branches } => Some(Process::Branch {
                    chan: fix(chan),
                    from: from.clone(),
                    branches: branches.iter().map(|(l, q)| (l.clone(), q.subst_chan(y, c))).collect(),
                }),
                Process::Init { .. } | Process::Accept { .. } if shadow => Some(p.clone()),
                Process::Mu { var, annot: Some(d), body } => {
                    let d = d.iter().map(|(k, v)| (fix(k), v.clone())).collect();
                    Some(Process::Mu { var: var.clone(), annot: Some(d), body: Box::new(body.subst_chan(y, c)) })
                }
                Process::PRec(r) if r.annot.is_some() => {
                    let mut r2 = (**r).clone();
                    r2.annot = r.annot.as_ref().map(|a| rename_chan_in_ptype(a, y, c));
                    r2.base = r.base.subst_chan(y, c);
                    r2.body = r.body.subst_chan(y, c);
                    Some(Process::PRec(Box::new(r2)))
                }
                _ => None,
            }
        })
    }

    /// Replaces the value variable `x` by `v` in expressions and shared-name positions.
    pub fn subst_value(&self, x: &str, v: &Value) -> Process {
        self.map_proc(&mut |p| match p {
            Process::Recv { binder, .. } if binder == x => Some(p.clone()),
            Process::Send { chan, to, value, cont } => Some(Process::Send {
                chan: chan.clone(),
                to: to.clone(),
                value: value.subst_value(x, v),
                cont: Box::new(cont.subst_value(x, v)),
            }),
            Process::Emit { target, value, cont } => Some(Process::Emit {
                target: target.clone(),
                value: value.subst_value(x, v),
                cont: Box::new(cont.subst_value(x, v)),
            }),
            Process::Init { shared, roles, binder, body } if shared == x => match v {
                Value::Name(n) => Some(Process::Init {
                    shared: n.clone(),
                    roles: roles.clone(),
                    binder: binder.clone(),
                    body: Box::new(body.subst_value(x, v)),
                }),
                _ => None,
            },
            Process::Accept { shared, role, binder, body } if shared == x => match v {
                Value::Name(n) => Some(Process::Accept {
                    shared: n.clone(),
                    role: role.clone(),
                    binder: binder.clone(),
                    body: Box::new(body.subst_value(x, v)),
                }),
                _ => None,
            },
            _ => None,
        })
    }

    /// Generic top-down rewrite: `f` returns `Some` to replace a node (no further descent).
    pub fn map_proc(&self, f: &mut dyn FnMut(&Process) -> Option<Process>) -> Process {
        if let Some(p) = f(self) {
            return p;
        }
        match self {
            Process::Init { shared, roles, binder, body } => Process::Init {
                shared: shared.clone(),
                roles: roles.clone(),
                binder: binder.clone(),
                body: Box::new(body.map_proc(f)),
            },
            Process::Accept { shared, role, binder, body } => Process::Accept {
                shared: shared.clone(),
                role: role.clone(),
                binder: binder.clone(),
                body: Box::new(body.map_proc(f)),
            },
            Process::Send { chan, to, value, cont } => Process::Send {
                chan: chan.clone(),
                to: to.clone(),
                value: value.clone(),
                cont: Box::new(cont.map_proc(f)),
            },
            Process::Recv { chan, from, binder, sort, cont } => Process::Recv {
                chan: chan.clone(),
                from: from.clone(),
                binder: binder.clone(),
                sort: sort.clone(),
                cont: Box::new(cont.map_proc(f)),
            },
            Process::Deleg { chan, to, delegated, cont } => Process::Deleg {
                chan: chan.clone(),
                to: to.clone(),
                delegated: delegated.clone(),
                cont: Box::new(cont.map_proc(f)),
            },
            Process::Catch { chan, from, binder, ty, cont } => Process::Catch {
                chan: chan.clone(),
                from: from.clone(),
                binder: binder.clone(),
                ty: ty.clone(),
                cont: Box::new(cont.map_proc(f)),
            },
            Process::Select { chan, to, label, cont } => Process::Select {
                chan: chan.clone(),
                to: to.clone(),
                label: label.clone(),
                cont: Box::new(cont.map_proc(f)),
            },
            Process::Branch { chan, from, branches } => Process::Branch {
                chan: chan.clone(),
                from: from.clone(),
                branches: branches.iter().map(|(l, p)| (l.clone(), p.map_proc(f))).collect(),
            },
            Process::Mu { var, annot, body } => {
                Process::Mu { var: var.clone(), annot: annot.clone(), body: Box::new(body.map_proc(f)) }
            }
            Process::PRec(r) => {
                let mut r2 = (**r).clone();
                r2.base = r.base.map_proc(f);
                r2.body = r.body.map_proc(f);
                Process::PRec(Box::new(r2))
            }
            Process::PApp(p, e) => Process::PApp(Box::new(p.map_proc(f)), e.clone()),
            Process::NewName { name, ty, body } => {
                Process::NewName { name: name.clone(), ty: ty.clone(), body: Box::new(body.map_proc(f)) }
            }
            Process::NewSession { session, body } => {
                Process::NewSession { session: session.clone(), body: Box::new(body.map_proc(f)) }
            }
            Process::Par(a, b) => Process::Par(Box::new(a.map_proc(f)), Box::new(b.map_proc(f))),
            Process::Emit { target, value, cont } => Process::Emit {
                target: target.clone(),
                value: value.clone(),
                cont: Box::new(cont.map_proc(f)),
            },
            Process::Request { .. } | Process::Queue { .. } | Process::PVar(_) | Process::Zero => self.clone(),
        }
    }

    /// Replaces every `0` leaf by `repl` (used by process `foreach`).
    pub fn subst_zero(&self, repl: &Process) -> Process {
        self.map_proc(&mut |p| match p {
            Process::Zero => Some(repl.clone()),
            _ => None,
        })
    }

    /// Free channel variables and endpoints used by the process.
    pub fn free_chans(&self) -> BTreeSet<Chan> {
        let mut out = BTreeSet::new();
        self.collect_chans(&mut BTreeSet::new(), &mut out);
        out
    }

    fn collect_chans(&self, bound: &mut BTreeSet<String>, out: &mut BTreeSet<Chan>) {
        let use_chan = |c: &Chan, bound: &BTreeSet<String>, out: &mut BTreeSet<Chan>| match c {
            Chan::Var(v) if bound.contains(v) => {}
            other => {
                out.insert(other.clone());
            }
        };
        let under = |binder: &str, body: &Process, bound: &mut BTreeSet<String>, out: &mut BTreeSet<Chan>| {
            let fresh = bound.insert(binder.to_string());
            body.collect_chans(bound, out);
            if fresh {
                bound.remove(binder);
            }
        };
        match self {
            Process::Init { binder, body, .. } | Process::Accept { binder, body, .. } => {
                under(binder, body, bound, out)
            }
            Process::Send { chan, cont, .. } | Process::Select { chan, cont, .. } => {
                use_chan(chan, bound, out);
                cont.collect_chans(bound, out);
            }
            Process::Recv { chan, binder, cont, .. } => {
                use_chan(chan, bound, out);
                under(binder, cont, bound, out);
            }
            Process::Deleg { chan, delegated, cont, .. } => {
                use_chan(chan, bound, out);
                use_chan(delegated, bound, out);
                cont.collect_chans(bound, out);
            }
            Process::Catch { chan, binder, cont, .. } => {
                use_chan(chan, bound, out);
                under(binder, cont, bound, out);
            }
            Process::Branch { chan, branches, .. } => {
                use_chan(chan, bound, out);
                for p in branches.values() {
                    p.collect_chans(bound, out);
                }
            }
            Process::Mu { annot, body, .. } => {
                if let Some(d) = annot {
                    for c in d.keys() {
                        use_chan(c, bound, out);
                    }
                }
                body.collect_chans(bound, out);
            }
            Process::PRec(r) => {
                r.base.collect_chans(bound, out);
                r.body.collect_chans(bound, out);
                if let Some(a) = &r.annot {
                    for c in ptype_chans(a) {
                        use_chan(&c, bound, out);
                    }
                }
            }
            Process::PApp(p, _) => p.collect_chans(bound, out),
            Process::NewName { body, .. } | Process::NewSession { body, .. } => body.collect_chans(bound, out),
            Process::Par(a, b) => {
                a.collect_chans(bound, out);
                b.collect_chans(bound, out);
            }
            Process::Emit { cont, .. } => cont.collect_chans(bound, out),
            Process::Request { .. } | Process::Queue { .. } | Process::PVar(_) | Process::Zero => {}
        }
    }
}

fn ptype_chans(t: &ProcessType) -> Vec<Chan> {
    match t {
        ProcessType::Sess(d) => d.keys().cloned().collect(),
        ProcessType::Pi(_, _, t) => ptype_chans(t),
    }
}

fn rename_chan_in_ptype(t: &ProcessType, y: &str, c: &Chan) -> ProcessType {
    match t {
        ProcessType::Sess(d) => ProcessType::Sess(
            d.iter()
                .map(|(k, v)| match k {
                    Chan::Var(n) if n == y => (c.clone(), v.clone()),
                    _ => (k.clone(), v.clone()),
                })
                .collect(),
        ),
        ProcessType::Pi(j, s, t) => ProcessType::Pi(j.clone(), s.clone(), Box::new(rename_chan_in_ptype(t, y, c))),
    }
}

impl Expr {
    pub fn subst_value(&self, x: &str, v: &Value) -> Expr {
        match self {
            Expr::Var(y) if y == x => Expr::Lit(v.clone()),
            Expr::Bin(op, a, b) => Expr::Bin(*op, Box::new(a.subst_value(x, v)), Box::new(b.subst_value(x, v))),
            other => other.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(i: IndexExpr) -> Participant {
        Participant::indexed("W", vec![i])
    }

    fn msg(p: Participant, q: Participant, cont: GlobalType) -> GlobalType {
        Ty::Act(GAct::Msg { from: p, to: q, payload: Payload::Nat, cont: Box::new(cont) })
    }

    #[test]
    fn index_substitution_avoids_capture() {
        // R end (i : [0..n]) x. W[i] -> W[j] : nat. x, substitute j := i
        let body = msg(w(IndexExpr::var("i")), w(IndexExpr::var("j")), Ty::tvar("x"));
        let r: GlobalType = Ty::rec(Ty::End, "i", IndexSort::range(IndexExpr::var("n")), "x", body);
        let s = r.subst_ix("j", &IndexExpr::var("i"));
        let Ty::Rec(node) = &s else { panic!() };
        assert_ne!(node.ivar, "i");
        assert!(s.free_index_vars().contains("i"));
    }

    #[test]
    fn alpha_eq_ignores_binder_names() {
        let a: GlobalType = Ty::mu("t", msg(Participant::named("A"), Participant::named("B"), Ty::tvar("t")));
        let b: GlobalType = Ty::mu("s", msg(Participant::named("A"), Participant::named("B"), Ty::tvar("s")));
        assert!(alpha_eq(&a, &b));
        let c: GlobalType = Ty::mu("s", msg(Participant::named("A"), Participant::named("C"), Ty::tvar("s")));
        assert!(!alpha_eq(&a, &c));
    }

    #[test]
    fn end_replacement_renames_clashing_binder() {
        let inner: GlobalType = Ty::mu("x", msg(Participant::named("A"), Participant::named("B"), Ty::End));
        let out = inner.subst_end_with_tvar("x");
        assert_eq!(out.free_tvars(), ["x".to_string()].into_iter().collect());
    }

    #[test]
    fn tvar_substitution_respects_shadowing() {
        let t: GlobalType = Ty::mu("x", Ty::tvar("x"));
        assert_eq!(t.subst_tvar("x", &Ty::End), t);
    }

    #[test]
    fn cond_encoding_round_trips() {
        let g: GlobalType = Ty::cond(
            Guard::Prop(Prop::Leq(IndexExpr::Lit(1), IndexExpr::var("n"))),
            msg(Participant::named("A"), Participant::named("B"), Ty::End),
            Ty::End,
        );
        let enc = encode_cond(&g).unwrap();
        assert_eq!(decode_cond(&enc).unwrap(), g);
    }
}
