//! Schema-versioned JSON interchange.  Keys are sorted (serde_json's default
//! map is ordered), so output is deterministic.

use std::collections::BTreeMap;

use serde_json::{json, Map, Value as J};
use thiserror::Error;

use crate::ast::*;

use super::{ChanDecl, Decl, GlobalDecl, LocalDecl, Param, ProcDecl, SourceFile, Span};

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum JsonError {
    #[error("malformed JSON: {0}")]
    Syntax(String),
    #[error("unsupported schema version {0}")]
    Version(u64),
    #[error("missing or invalid field `{0}`")]
    Field(String),
    #[error("unknown node tag `{0}`")]
    Tag(String),
}

pub trait ToJson {
    fn to_json(&self) -> J;
}

pub trait FromJson: Sized {
    fn from_json(j: &J) -> Result<Self, JsonError>;
}

/// Serialises `t` with the schema version at the root.
pub fn export_json<T: ToJson>(t: &T) -> String {
    let mut j = t.to_json();
    match &mut j {
        J::Object(m) => {
            m.insert("v".into(), json!(SCHEMA_VERSION));
        }
        other => {
            j = json!({ "v": SCHEMA_VERSION, "value": other.clone() });
        }
    }
    serde_json::to_string(&j).expect("serialisable")
}

pub fn import_json<T: FromJson>(s: &str) -> Result<T, JsonError> {
    let j: J = serde_json::from_str(s).map_err(|e| JsonError::Syntax(e.to_string()))?;
    let v = j.get("v").and_then(J::as_u64).ok_or_else(|| JsonError::Field("v".into()))?;
    if v != SCHEMA_VERSION {
        return Err(JsonError::Version(v));
    }
    match j.get("value") {
        Some(inner) if j.as_object().map(|m| m.len()) == Some(2) => T::from_json(inner),
        _ => T::from_json(&j),
    }
}

fn field<'a>(j: &'a J, k: &str) -> Result<&'a J, JsonError> {
    j.get(k).ok_or_else(|| JsonError::Field(k.into()))
}

fn str_field(j: &J, k: &str) -> Result<String, JsonError> {
    field(j, k)?.as_str().map(str::to_string).ok_or_else(|| JsonError::Field(k.into()))
}

fn tag(j: &J) -> Result<&str, JsonError> {
    j.get("t").and_then(J::as_str).ok_or_else(|| JsonError::Field("t".into()))
}

fn sub<T: FromJson>(j: &J, k: &str) -> Result<T, JsonError> {
    T::from_json(field(j, k)?)
}

fn list<T: FromJson>(j: &J, k: &str) -> Result<Vec<T>, JsonError> {
    field(j, k)?.as_array().ok_or_else(|| JsonError::Field(k.into()))?.iter().map(T::from_json).collect()
}

fn opt<T: FromJson>(j: &J, k: &str) -> Result<Option<T>, JsonError> {
    match j.get(k) {
        None | Some(J::Null) => Ok(None),
        Some(v) => T::from_json(v).map(Some),
    }
}

fn labelled<T: FromJson>(j: &J, k: &str) -> Result<BTreeMap<Label, T>, JsonError> {
    field(j, k)?
        .as_object()
        .ok_or_else(|| JsonError::Field(k.into()))?
        .iter()
        .map(|(l, v)| Ok((Label(l.clone()), T::from_json(v)?)))
        .collect()
}

fn labelled_json<T: ToJson>(m: &BTreeMap<Label, T>) -> J {
    J::Object(m.iter().map(|(l, v)| (l.0.clone(), v.to_json())).collect::<Map<_, _>>())
}

impl<T: ToJson> ToJson for Vec<T> {
    fn to_json(&self) -> J {
        J::Array(self.iter().map(ToJson::to_json).collect())
    }
}

impl<T: ToJson> ToJson for Box<T> {
    fn to_json(&self) -> J {
        (**self).to_json()
    }
}

impl<T: FromJson> FromJson for Box<T> {
    fn from_json(j: &J) -> Result<Self, JsonError> {
        T::from_json(j).map(Box::new)
    }
}

impl ToJson for IndexExpr {
    fn to_json(&self) -> J {
        match self {
            IndexExpr::Var(v) => json!({"t": "var", "name": v}),
            IndexExpr::Lit(n) => json!({"t": "lit", "n": n}),
            IndexExpr::Bin(op, a, b) => {
                let op = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Pow => "^",
                };
                json!({"t": "bin", "op": op, "l": a.to_json(), "r": b.to_json()})
            }
        }
    }
}

impl FromJson for IndexExpr {
    fn from_json(j: &J) -> Result<Self, JsonError> {
        match tag(j)? {
            "var" => Ok(IndexExpr::Var(str_field(j, "name")?)),
            "lit" => Ok(IndexExpr::Lit(field(j, "n")?.as_u64().ok_or_else(|| JsonError::Field("n".into()))?)),
            "bin" => {
                let op = match str_field(j, "op")?.as_str() {
                    "+" => BinOp::Add,
                    "-" => BinOp::Sub,
                    "*" => BinOp::Mul,
                    "^" => BinOp::Pow,
                    o => return Err(JsonError::Tag(o.into())),
                };
                Ok(IndexExpr::bin(op, sub(j, "l")?, sub(j, "r")?))
            }
            t => Err(JsonError::Tag(t.into())),
        }
    }
}

impl ToJson for Prop {
    fn to_json(&self) -> J {
        match self {
            Prop::Leq(a, b) => json!({"t": "leq", "l": a.to_json(), "r": b.to_json()}),
            Prop::And(a, b) => json!({"t": "and", "l": a.to_json(), "r": b.to_json()}),
            Prop::True => json!({"t": "true"}),
        }
    }
}

impl FromJson for Prop {
    fn from_json(j: &J) -> Result<Self, JsonError> {
        match tag(j)? {
            "leq" => Ok(Prop::Leq(sub(j, "l")?, sub(j, "r")?)),
            "and" => Ok(Prop::And(sub(j, "l")?, sub(j, "r")?)),
            "true" => Ok(Prop::True),
            t => Err(JsonError::Tag(t.into())),
        }
    }
}

impl ToJson for IndexSort {
    fn to_json(&self) -> J {
        match self {
            IndexSort::Nat => json!({"t": "nat"}),
            IndexSort::Constrained { var, base, prop } => {
                json!({"t": "sub", "var": var, "base": base.to_json(), "prop": prop.to_json()})
            }
        }
    }
}

impl FromJson for IndexSort {
    fn from_json(j: &J) -> Result<Self, JsonError> {
        match tag(j)? {
            "nat" => Ok(IndexSort::Nat),
            "sub" => Ok(IndexSort::Constrained { var: str_field(j, "var")?, base: sub(j, "base")?, prop: sub(j, "prop")? }),
            t => Err(JsonError::Tag(t.into())),
        }
    }
}

impl ToJson for Participant {
    fn to_json(&self) -> J {
        json!({"name": self.name, "idx": self.indices.to_json()})
    }
}

impl FromJson for Participant {
    fn from_json(j: &J) -> Result<Self, JsonError> {
        Ok(Participant { name: str_field(j, "name")?, indices: list(j, "idx")? })
    }
}

impl ToJson for Payload {
    fn to_json(&self) -> J {
        match self {
            Payload::Nat => json!({"t": "nat"}),
            Payload::Bool => json!({"t": "bool"}),
            Payload::Complex => json!({"t": "complex"}),
            Payload::Shared(g) => json!({"t": "shared", "g": g.to_json()}),
            Payload::Session(t) => json!({"t": "session", "l": t.to_json()}),
        }
    }
}

impl FromJson for Payload {
    fn from_json(j: &J) -> Result<Self, JsonError> {
        match tag(j)? {
            "nat" => Ok(Payload::Nat),
            "bool" => Ok(Payload::Bool),
            "complex" => Ok(Payload::Complex),
            "shared" => Ok(Payload::Shared(sub(j, "g")?)),
            "session" => Ok(Payload::Session(sub(j, "l")?)),
            t => Err(JsonError::Tag(t.into())),
        }
    }
}

impl ToJson for Guard {
    fn to_json(&self) -> J {
        match self {
            Guard::PartEq(p, q) => json!({"t": "peq", "l": p.to_json(), "r": q.to_json()}),
            Guard::Prop(p) => json!({"t": "prop", "p": p.to_json()}),
        }
    }
}

impl FromJson for Guard {
    fn from_json(j: &J) -> Result<Self, JsonError> {
        match tag(j)? {
            "peq" => Ok(Guard::PartEq(sub(j, "l")?, sub(j, "r")?)),
            "prop" => Ok(Guard::Prop(sub(j, "p")?)),
            t => Err(JsonError::Tag(t.into())),
        }
    }
}

/// JSON for the communication layer of a type.
trait ActJson: Sized {
    fn act_json(&self) -> J;
    fn act_from(j: &J) -> Result<Option<Self>, JsonError>;
}

impl<A: ActJson> ToJson for Ty<A> {
    fn to_json(&self) -> J {
        match self {
            Ty::End => json!({"t": "end"}),
            Ty::Var(x) => json!({"t": "var", "name": x}),
            Ty::Act(a) => a.act_json(),
            Ty::Mu(x, b) => json!({"t": "mu", "var": x, "body": b.to_json()}),
            Ty::Rec(r) => json!({
                "t": "rec",
                "base": r.base.to_json(),
                "ivar": r.ivar,
                "sort": r.sort.to_json(),
                "tvar": r.tvar,
                "body": r.body.to_json(),
            }),
            Ty::App(f, e) => json!({"t": "app", "f": f.to_json(), "arg": e.to_json()}),
            Ty::Cond(g, a, b) => json!({"t": "cond", "guard": g.to_json(), "then": a.to_json(), "else": b.to_json()}),
        }
    }
}

impl<A: ActJson> FromJson for Ty<A> {
    fn from_json(j: &J) -> Result<Self, JsonError> {
        if let Some(a) = A::act_from(j)? {
            return Ok(Ty::Act(a));
        }
        match tag(j)? {
            "end" => Ok(Ty::End),
            "var" => Ok(Ty::Var(str_field(j, "name")?)),
            "mu" => Ok(Ty::Mu(str_field(j, "var")?, sub(j, "body")?)),
            "rec" => Ok(Ty::Rec(Box::new(RecNode {
                base: sub(j, "base")?,
                ivar: str_field(j, "ivar")?,
                sort: sub(j, "sort")?,
                tvar: str_field(j, "tvar")?,
                body: sub(j, "body")?,
            }))),
            "app" => Ok(Ty::App(sub(j, "f")?, sub(j, "arg")?)),
            "cond" => Ok(Ty::Cond(sub(j, "guard")?, sub(j, "then")?, sub(j, "else")?)),
            t => Err(JsonError::Tag(t.into())),
        }
    }
}

impl ActJson for GAct {
    fn act_json(&self) -> J {
        match self {
            GAct::Msg { from, to, payload, cont } => json!({
                "t": "msg", "from": from.to_json(), "to": to.to_json(),
                "payload": payload.to_json(), "cont": cont.to_json(),
            }),
            GAct::Branch { from, to, branches } => json!({
                "t": "branch", "from": from.to_json(), "to": to.to_json(),
                "branches": labelled_json(branches),
            }),
        }
    }

    fn act_from(j: &J) -> Result<Option<Self>, JsonError> {
        Ok(match tag(j)? {
            "msg" => Some(GAct::Msg {
                from: sub(j, "from")?,
                to: sub(j, "to")?,
                payload: sub(j, "payload")?,
                cont: sub(j, "cont")?,
            }),
            "branch" => Some(GAct::Branch { from: sub(j, "from")?, to: sub(j, "to")?, branches: labelled(j, "branches")? }),
            _ => None,
        })
    }
}

impl ActJson for LAct {
    fn act_json(&self) -> J {
        match self {
            LAct::Out { peer, payload, cont } => {
                json!({"t": "out", "peer": peer.to_json(), "payload": payload.to_json(), "cont": cont.to_json()})
            }
            LAct::In { peer, payload, cont } => {
                json!({"t": "in", "peer": peer.to_json(), "payload": payload.to_json(), "cont": cont.to_json()})
            }
            LAct::Sel { peer, branches } => json!({"t": "sel", "peer": peer.to_json(), "branches": labelled_json(branches)}),
            LAct::Bra { peer, branches } => json!({"t": "bra", "peer": peer.to_json(), "branches": labelled_json(branches)}),
        }
    }

    fn act_from(j: &J) -> Result<Option<Self>, JsonError> {
        Ok(match tag(j)? {
            "out" => Some(LAct::Out { peer: sub(j, "peer")?, payload: sub(j, "payload")?, cont: sub(j, "cont")? }),
            "in" => Some(LAct::In { peer: sub(j, "peer")?, payload: sub(j, "payload")?, cont: sub(j, "cont")? }),
            "sel" => Some(LAct::Sel { peer: sub(j, "peer")?, branches: labelled(j, "branches")? }),
            "bra" => Some(LAct::Bra { peer: sub(j, "peer")?, branches: labelled(j, "branches")? }),
            _ => None,
        })
    }
}

impl ToJson for Kind {
    fn to_json(&self) -> J {
        match self {
            Kind::Type => json!({"t": "type"}),
            Kind::Pi(j, s, k) => json!({"t": "pi", "var": j, "sort": s.to_json(), "body": k.to_json()}),
        }
    }
}

impl FromJson for Kind {
    fn from_json(j: &J) -> Result<Self, JsonError> {
        match tag(j)? {
            "type" => Ok(Kind::Type),
            "pi" => Ok(Kind::Pi(str_field(j, "var")?, sub(j, "sort")?, sub(j, "body")?)),
            t => Err(JsonError::Tag(t.into())),
        }
    }
}

impl ToJson for Chan {
    fn to_json(&self) -> J {
        match self {
            Chan::Var(v) => json!({"t": "var", "name": v}),
            Chan::Endpoint(s, p) => json!({"t": "endpoint", "session": s.0, "role": p.to_json()}),
        }
    }
}

impl FromJson for Chan {
    fn from_json(j: &J) -> Result<Self, JsonError> {
        match tag(j)? {
            "var" => Ok(Chan::Var(str_field(j, "name")?)),
            "endpoint" => Ok(Chan::Endpoint(Session(str_field(j, "session")?), sub(j, "role")?)),
            t => Err(JsonError::Tag(t.into())),
        }
    }
}

impl ToJson for MsgType {
    fn to_json(&self) -> J {
        match self {
            MsgType::Out(p, u) => json!({"t": "out", "to": p.to_json(), "payload": u.to_json()}),
            MsgType::Sel(p, l) => json!({"t": "sel", "to": p.to_json(), "label": l.0}),
        }
    }
}

impl FromJson for MsgType {
    fn from_json(j: &J) -> Result<Self, JsonError> {
        match tag(j)? {
            "out" => Ok(MsgType::Out(sub(j, "to")?, sub(j, "payload")?)),
            "sel" => Ok(MsgType::Sel(sub(j, "to")?, Label(str_field(j, "label")?))),
            t => Err(JsonError::Tag(t.into())),
        }
    }
}

impl ToJson for GenType {
    fn to_json(&self) -> J {
        json!({"msgs": self.msgs.to_json(), "cont": self.cont.as_ref().map(ToJson::to_json)})
    }
}

impl FromJson for GenType {
    fn from_json(j: &J) -> Result<Self, JsonError> {
        Ok(GenType { msgs: list(j, "msgs")?, cont: opt(j, "cont")? })
    }
}

impl ToJson for SessionEnv {
    fn to_json(&self) -> J {
        J::Array(self.iter().map(|(c, t)| json!({"chan": c.to_json(), "type": t.to_json()})).collect())
    }
}

impl FromJson for SessionEnv {
    fn from_json(j: &J) -> Result<Self, JsonError> {
        j.as_array()
            .ok_or_else(|| JsonError::Field("env".into()))?
            .iter()
            .map(|e| Ok((sub(e, "chan")?, sub(e, "type")?)))
            .collect()
    }
}

impl ToJson for ProcessType {
    fn to_json(&self) -> J {
        match self {
            ProcessType::Sess(d) => json!({"t": "sess", "env": d.to_json()}),
            ProcessType::Pi(j, s, t) => json!({"t": "pi", "var": j, "sort": s.to_json(), "body": t.to_json()}),
        }
    }
}

impl FromJson for ProcessType {
    fn from_json(j: &J) -> Result<Self, JsonError> {
        match tag(j)? {
            "sess" => Ok(ProcessType::Sess(sub(j, "env")?)),
            "pi" => Ok(ProcessType::Pi(str_field(j, "var")?, sub(j, "sort")?, sub(j, "body")?)),
            t => Err(JsonError::Tag(t.into())),
        }
    }
}

impl ToJson for Value {
    fn to_json(&self) -> J {
        match self {
            Value::Nat(n) => json!({"t": "nat", "n": n}),
            Value::Bool(b) => json!({"t": "bool", "b": b}),
            Value::Complex(re, im) => json!({"t": "complex", "re": re, "im": im}),
            Value::Name(n) => json!({"t": "name", "name": n}),
            Value::Endpoint(s, p) => json!({"t": "endpoint", "session": s.0, "role": p.to_json()}),
        }
    }
}

impl FromJson for Value {
    fn from_json(j: &J) -> Result<Self, JsonError> {
        let num = |k: &str| field(j, k)?.as_f64().ok_or_else(|| JsonError::Field(k.into()));
        match tag(j)? {
            "nat" => Ok(Value::Nat(field(j, "n")?.as_u64().ok_or_else(|| JsonError::Field("n".into()))?)),
            "bool" => Ok(Value::Bool(field(j, "b")?.as_bool().ok_or_else(|| JsonError::Field("b".into()))?)),
            "complex" => Ok(Value::Complex(num("re")?, num("im")?)),
            "name" => Ok(Value::Name(str_field(j, "name")?)),
            "endpoint" => Ok(Value::Endpoint(Session(str_field(j, "session")?), sub(j, "role")?)),
            t => Err(JsonError::Tag(t.into())),
        }
    }
}

impl ToJson for Expr {
    fn to_json(&self) -> J {
        match self {
            Expr::Lit(v) => json!({"t": "lit", "value": v.to_json()}),
            Expr::Var(x) => json!({"t": "var", "name": x}),
            Expr::Bin(op, a, b) => {
                let op = match op {
                    ExprOp::Add => "+",
                    ExprOp::Sub => "-",
                    ExprOp::Mul => "*",
                    ExprOp::Pow => "^",
                };
                json!({"t": "bin", "op": op, "l": a.to_json(), "r": b.to_json()})
            }
        }
    }
}

impl FromJson for Expr {
    fn from_json(j: &J) -> Result<Self, JsonError> {
        match tag(j)? {
            "lit" => Ok(Expr::Lit(sub(j, "value")?)),
            "var" => Ok(Expr::Var(str_field(j, "name")?)),
            "bin" => {
                let op = match str_field(j, "op")?.as_str() {
                    "+" => ExprOp::Add,
                    "-" => ExprOp::Sub,
                    "*" => ExprOp::Mul,
                    "^" => ExprOp::Pow,
                    o => return Err(JsonError::Tag(o.into())),
                };
                Ok(Expr::Bin(op, sub(j, "l")?, sub(j, "r")?))
            }
            t => Err(JsonError::Tag(t.into())),
        }
    }
}

impl ToJson for RoleSpec {
    fn to_json(&self) -> J {
        match self {
            RoleSpec::One(p) => json!({"t": "one", "role": p.to_json()}),
            RoleSpec::Range { name, from, to } => {
                json!({"t": "range", "name": name, "from": from.to_json(), "to": to.to_json()})
            }
        }
    }
}

impl FromJson for RoleSpec {
    fn from_json(j: &J) -> Result<Self, JsonError> {
        match tag(j)? {
            "one" => Ok(RoleSpec::One(sub(j, "role")?)),
            "range" => Ok(RoleSpec::Range { name: str_field(j, "name")?, from: sub(j, "from")?, to: sub(j, "to")? }),
            t => Err(JsonError::Tag(t.into())),
        }
    }
}

impl ToJson for Message {
    fn to_json(&self) -> J {
        let content = match &self.content {
            MsgContent::Value(v) => json!({"t": "value", "value": v.to_json()}),
            MsgContent::Chan(s, p) => json!({"t": "chan", "session": s.0, "role": p.to_json()}),
            MsgContent::Label(l) => json!({"t": "label", "label": l.0}),
        };
        json!({"from": self.from.to_json(), "to": self.to.to_json(), "content": content})
    }
}

impl FromJson for Message {
    fn from_json(j: &J) -> Result<Self, JsonError> {
        let c = field(j, "content")?;
        let content = match tag(c)? {
            "value" => MsgContent::Value(sub(c, "value")?),
            "chan" => MsgContent::Chan(Session(str_field(c, "session")?), sub(c, "role")?),
            "label" => MsgContent::Label(Label(str_field(c, "label")?)),
            t => return Err(JsonError::Tag(t.into())),
        };
        Ok(Message { from: sub(j, "from")?, to: sub(j, "to")?, content })
    }
}

impl ToJson for Process {
    fn to_json(&self) -> J {
        match self {
            Process::Init { shared, roles, binder, body } => json!({
                "t": "init", "shared": shared, "roles": roles.to_json(), "binder": binder, "body": body.to_json(),
            }),
            Process::Accept { shared, role, binder, body } => json!({
                "t": "accept", "shared": shared, "role": role.to_json(), "binder": binder, "body": body.to_json(),
            }),
            Process::Request { shared, role, session } => {
                json!({"t": "request", "shared": shared, "role": role.to_json(), "session": session.0})
            }
            Process::Send { chan, to, value, cont } => json!({
                "t": "send", "chan": chan.to_json(), "to": to.to_json(), "value": value.to_json(), "cont": cont.to_json(),
            }),
            Process::Recv { chan, from, binder, sort, cont } => json!({
                "t": "recv", "chan": chan.to_json(), "from": from.to_json(), "binder": binder,
                "sort": sort.as_ref().map(ToJson::to_json), "cont": cont.to_json(),
            }),
            Process::Deleg { chan, to, delegated, cont } => json!({
                "t": "deleg", "chan": chan.to_json(), "to": to.to_json(), "delegated": delegated.to_json(),
                "cont": cont.to_json(),
            }),
            Process::Catch { chan, from, binder, ty, cont } => json!({
                "t": "catch", "chan": chan.to_json(), "from": from.to_json(), "binder": binder, "ty": ty.to_json(),
                "cont": cont.to_json(),
            }),
            Process::Select { chan, to, label, cont } => json!({
                "t": "select", "chan": chan.to_json(), "to": to.to_json(), "label": label.0, "cont": cont.to_json(),
            }),
            Process::Branch { chan, from, branches } => json!({
                "t": "branch", "chan": chan.to_json(), "from": from.to_json(), "branches": labelled_json(branches),
            }),
            Process::Mu { var, annot, body } => json!({
                "t": "mu", "var": var, "annot": annot.as_ref().map(ToJson::to_json), "body": body.to_json(),
            }),
            Process::PVar(x) => json!({"t": "pvar", "name": x}),
            Process::PRec(r) => json!({
                "t": "rec", "base": r.base.to_json(), "ivar": r.ivar, "sort": r.sort.to_json(), "pvar": r.pvar,
                "annot": r.annot.as_ref().map(ToJson::to_json), "body": r.body.to_json(),
            }),
            Process::PApp(p, e) => json!({"t": "app", "f": p.to_json(), "arg": e.to_json()}),
            Process::NewName { name, ty, body } => {
                json!({"t": "new", "name": name, "ty": ty.to_json(), "body": body.to_json()})
            }
            Process::NewSession { session, body } => {
                json!({"t": "newsession", "session": session.0, "body": body.to_json()})
            }
            Process::Par(a, b) => json!({"t": "par", "l": a.to_json(), "r": b.to_json()}),
            Process::Queue { session, msgs } => json!({"t": "queue", "session": session.0, "msgs": msgs.to_json()}),
            Process::Emit { target, value, cont } => {
                json!({"t": "emit", "target": target, "value": value.to_json(), "cont": cont.to_json()})
            }
            Process::Zero => json!({"t": "zero"}),
        }
    }
}

impl FromJson for Process {
    fn from_json(j: &J) -> Result<Self, JsonError> {
        Ok(match tag(j)? {
            "init" => Process::Init {
                shared: str_field(j, "shared")?,
                roles: list(j, "roles")?,
                binder: str_field(j, "binder")?,
                body: sub(j, "body")?,
            },
            "accept" => Process::Accept {
                shared: str_field(j, "shared")?,
                role: sub(j, "role")?,
                binder: str_field(j, "binder")?,
                body: sub(j, "body")?,
            },
            "request" => Process::Request {
                shared: str_field(j, "shared")?,
                role: sub(j, "role")?,
                session: Session(str_field(j, "session")?),
            },
            "send" => Process::Send { chan: sub(j, "chan")?, to: sub(j, "to")?, value: sub(j, "value")?, cont: sub(j, "cont")? },
            "recv" => Process::Recv {
                chan: sub(j, "chan")?,
                from: sub(j, "from")?,
                binder: str_field(j, "binder")?,
                sort: opt(j, "sort")?,
                cont: sub(j, "cont")?,
            },
            "deleg" => Process::Deleg {
                chan: sub(j, "chan")?,
                to: sub(j, "to")?,
                delegated: sub(j, "delegated")?,
                cont: sub(j, "cont")?,
            },
            "catch" => Process::Catch {
                chan: sub(j, "chan")?,
                from: sub(j, "from")?,
                binder: str_field(j, "binder")?,
                ty: sub(j, "ty")?,
                cont: sub(j, "cont")?,
            },
            "select" => Process::Select {
                chan: sub(j, "chan")?,
                to: sub(j, "to")?,
                label: Label(str_field(j, "label")?),
                cont: sub(j, "cont")?,
            },
            "branch" => Process::Branch { chan: sub(j, "chan")?, from: sub(j, "from")?, branches: labelled(j, "branches")? },
            "mu" => Process::Mu { var: str_field(j, "var")?, annot: opt(j, "annot")?, body: sub(j, "body")? },
            "pvar" => Process::PVar(str_field(j, "name")?),
            "rec" => Process::PRec(Box::new(PRecNode {
                base: sub(j, "base")?,
                ivar: str_field(j, "ivar")?,
                sort: sub(j, "sort")?,
                pvar: str_field(j, "pvar")?,
                annot: opt(j, "annot")?,
                body: sub(j, "body")?,
            })),
            "app" => Process::PApp(sub(j, "f")?, sub(j, "arg")?),
            "new" => Process::NewName { name: str_field(j, "name")?, ty: sub(j, "ty")?, body: sub(j, "body")? },
            "newsession" => Process::NewSession { session: Session(str_field(j, "session")?), body: sub(j, "body")? },
            "par" => Process::Par(sub(j, "l")?, sub(j, "r")?),
            "queue" => Process::Queue { session: Session(str_field(j, "session")?), msgs: list(j, "msgs")? },
            "emit" => Process::Emit { target: str_field(j, "target")?, value: sub(j, "value")?, cont: sub(j, "cont")? },
            "zero" => Process::Zero,
            t => return Err(JsonError::Tag(t.into())),
        })
    }
}

impl ToJson for Param {
    fn to_json(&self) -> J {
        json!({"name": self.name, "sort": self.sort.to_json()})
    }
}

impl FromJson for Param {
    fn from_json(j: &J) -> Result<Self, JsonError> {
        Ok(Param { name: str_field(j, "name")?, sort: sub(j, "sort")? })
    }
}

impl ToJson for Decl {
    fn to_json(&self) -> J {
        match self {
            Decl::Global(d) => json!({"t": "global", "name": d.name, "params": d.params.to_json(), "body": d.body.to_json()}),
            Decl::Local(d) => json!({"t": "local", "name": d.name, "params": d.params.to_json(), "body": d.body.to_json()}),
            Decl::Proc(d) => json!({"t": "proc", "name": d.name, "params": d.params.to_json(), "body": d.body.to_json()}),
            Decl::Chan(d) => json!({"t": "chan", "name": d.name, "ty": d.ty.to_json()}),
        }
    }
}

impl FromJson for Decl {
    fn from_json(j: &J) -> Result<Self, JsonError> {
        let span = Span::default();
        Ok(match tag(j)? {
            "global" => Decl::Global(GlobalDecl { name: str_field(j, "name")?, params: list(j, "params")?, body: sub(j, "body")?, span }),
            "local" => Decl::Local(LocalDecl { name: str_field(j, "name")?, params: list(j, "params")?, body: sub(j, "body")?, span }),
            "proc" => Decl::Proc(ProcDecl { name: str_field(j, "name")?, params: list(j, "params")?, body: sub(j, "body")?, span }),
            "chan" => Decl::Chan(ChanDecl { name: str_field(j, "name")?, ty: sub(j, "ty")?, span }),
            t => return Err(JsonError::Tag(t.into())),
        })
    }
}

impl ToJson for SourceFile {
    fn to_json(&self) -> J {
        json!({"t": "file", "decls": self.decls.to_json()})
    }
}

impl FromJson for SourceFile {
    fn from_json(j: &J) -> Result<Self, JsonError> {
        Ok(SourceFile { decls: list(j, "decls")? })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::{parse, parse_global};

    #[test]
    fn end_has_versioned_shape() {
        assert_eq!(export_json(&GlobalType::End), r#"{"t":"end","v":1}"#);
    }

    #[test]
    fn global_round_trip() {
        let g = parse_global("mu t. A -> B { ok: t, quit: A -> C : <D -> E : nat. end>. end }").unwrap();
        let back: GlobalType = import_json(&export_json(&g)).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn source_file_round_trip_modulo_spans() {
        let f = parse("global G(n) = foreach i < n { A[i] -> B : complex }\nproc P = emit r<c(1.5, -2.0)>; 0").unwrap();
        let back: SourceFile = import_json(&export_json(&f)).unwrap();
        assert_eq!(export_json(&back), export_json(&f));
    }

    #[test]
    fn rejects_future_versions() {
        assert_eq!(import_json::<GlobalType>(r#"{"t":"end","v":2}"#), Err(JsonError::Version(2)));
    }
}
