//! Concrete syntax printer.  Output re-parses to the same core term.

use std::fmt::{self, Display, Formatter, Write};

use crate::ast::*;

use super::{Decl, SourceFile};

fn prec(e: &IndexExpr) -> u8 {
    match e {
        IndexExpr::Var(_) | IndexExpr::Lit(_) => 4,
        IndexExpr::Bin(BinOp::Add | BinOp::Sub, _, _) => 1,
        IndexExpr::Bin(BinOp::Mul, _, _) => 2,
        IndexExpr::Bin(BinOp::Pow, _, _) => 3,
    }
}

fn paren_if(f: &mut Formatter<'_>, cond: bool, e: &IndexExpr) -> fmt::Result {
    if cond {
        write!(f, "({})", e)
    } else {
        write!(f, "{}", e)
    }
}

impl Display for IndexExpr {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            IndexExpr::Var(v) => f.write_str(v),
            IndexExpr::Lit(n) => write!(f, "{}", n),
            IndexExpr::Bin(op, a, b) => {
                let p = prec(self);
                let (sym, lp, rp) = match op {
                    BinOp::Add => ("+", prec(a) < p, prec(b) <= p),
                    BinOp::Sub => ("-", prec(a) < p, prec(b) <= p),
                    BinOp::Mul => ("*", prec(a) < p, prec(b) <= p),
                    BinOp::Pow => ("^", prec(a) <= p, prec(b) < p),
                };
                paren_if(f, lp, a)?;
                write!(f, " {} ", sym)?;
                paren_if(f, rp, b)
            }
        }
    }
}

/// An index expression in a position that only admits atoms.
pub(crate) struct IndexAtom<'a>(pub &'a IndexExpr);

impl Display for IndexAtom<'_> {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        paren_if(f, prec(self.0) < 4, self.0)
    }
}

impl Display for Prop {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            Prop::True => f.write_str("true"),
            Prop::Leq(a, b) => write!(f, "{} <= {}", a, b),
            Prop::And(a, b) => write!(f, "{} && {}", a, b),
        }
    }
}

impl Display for IndexSort {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            IndexSort::Nat => f.write_str("nat"),
            IndexSort::Constrained { var, base, prop } => {
                if **base == IndexSort::Nat {
                    let v = IndexExpr::Var(var.clone());
                    match prop {
                        Prop::Leq(a, hi) if *a == v && !hi.free_index_vars().contains(var) => {
                            return write!(f, "[0..{}]", hi);
                        }
                        Prop::And(l, r) => {
                            if let (Prop::Leq(lo, a), Prop::Leq(b, hi)) = (&**l, &**r) {
                                if *a == v
                                    && *b == v
                                    && !lo.free_index_vars().contains(var)
                                    && !hi.free_index_vars().contains(var)
                                    && *lo != IndexExpr::Lit(0)
                                {
                                    return write!(f, "[{}..{}]", lo, hi);
                                }
                            }
                        }
                        _ => {}
                    }
                }
                write!(f, "{{{} : {} | {}}}", var, base, prop)
            }
        }
    }
}

impl Display for Participant {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)?;
        for i in &self.indices {
            write!(f, "[{}]", i)?;
        }
        Ok(())
    }
}

impl Display for Label {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Display for Payload {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            Payload::Nat => f.write_str("nat"),
            Payload::Bool => f.write_str("bool"),
            Payload::Complex => f.write_str("complex"),
            Payload::Shared(g) => write!(f, "<{}>", g),
            Payload::Session(t) => write!(f, "chan({})", t),
        }
    }
}

impl Display for Guard {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            Guard::PartEq(p, q) => write!(f, "{} == {}", p, q),
            Guard::Prop(p) => write!(f, "{}", p),
        }
    }
}

/// Writes the shared type constructors; `act` handles the communication layer.
fn fmt_ty<A>(t: &Ty<A>, f: &mut Formatter<'_>, act: &dyn Fn(&A, &mut Formatter<'_>) -> fmt::Result) -> fmt::Result {
    match t {
        Ty::End => f.write_str("end"),
        Ty::Var(x) => f.write_str(x),
        Ty::Act(a) => act(a, f),
        Ty::Mu(x, b) => {
            write!(f, "mu {}. ", x)?;
            fmt_ty(b, f, act)
        }
        Ty::Rec(r) => {
            f.write_str("R ")?;
            fmt_ty(&r.base, f, act)?;
            write!(f, " with ({} : {}, {}) {{ ", r.ivar, r.sort, r.tvar)?;
            fmt_ty(&r.body, f, act)?;
            f.write_str(" }")
        }
        Ty::App(g, e) => {
            let atomic = matches!(**g, Ty::Rec(_) | Ty::Var(_) | Ty::App(..) | Ty::End);
            if atomic {
                fmt_ty(g, f, act)?;
            } else {
                f.write_str("(")?;
                fmt_ty(g, f, act)?;
                f.write_str(")")?;
            }
            write!(f, " @ {}", IndexAtom(e))
        }
        Ty::Cond(g, a, b) => {
            write!(f, "if {} then ", g)?;
            fmt_ty(a, f, act)?;
            f.write_str(" else ")?;
            fmt_ty(b, f, act)
        }
    }
}

fn fmt_gact(a: &GAct, f: &mut Formatter<'_>) -> fmt::Result {
    match a {
        GAct::Msg { from, to, payload, cont } => {
            write!(f, "{} -> {} : {}. ", from, to, payload)?;
            fmt_ty(cont, f, &fmt_gact)
        }
        GAct::Branch { from, to, branches } => {
            write!(f, "{} -> {} {{ ", from, to)?;
            for (i, (l, g)) in branches.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write!(f, "{}: ", l)?;
                fmt_ty(g, f, &fmt_gact)?;
            }
            f.write_str(" }")
        }
    }
}

fn fmt_lact(a: &LAct, f: &mut Formatter<'_>) -> fmt::Result {
    let branches = |f: &mut Formatter<'_>, sym: &str, peer: &Participant, bs: &std::collections::BTreeMap<Label, LocalType>| {
        write!(f, "{}<{}, {{ ", sym, peer)?;
        for (i, (l, t)) in bs.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{}: ", l)?;
            fmt_ty(t, f, &fmt_lact)?;
        }
        f.write_str(" }>")
    };
    match a {
        LAct::Out { peer, payload, cont } => {
            write!(f, "!<{}, {}>; ", peer, payload)?;
            fmt_ty(cont, f, &fmt_lact)
        }
        LAct::In { peer, payload, cont } => {
            write!(f, "?<{}, {}>; ", peer, payload)?;
            fmt_ty(cont, f, &fmt_lact)
        }
        LAct::Sel { peer, branches: bs } => branches(f, "+", peer, bs),
        LAct::Bra { peer, branches: bs } => branches(f, "&", peer, bs),
    }
}

impl Display for GlobalType {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        fmt_ty(self, f, &fmt_gact)
    }
}

impl Display for LocalType {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        fmt_ty(self, f, &fmt_lact)
    }
}

impl Display for Kind {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            Kind::Type => f.write_str("type"),
            Kind::Pi(j, s, k) => write!(f, "pi {} : {}. {}", j, s, k),
        }
    }
}

impl Display for Session {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Display for Chan {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            Chan::Var(v) => f.write_str(v),
            Chan::Endpoint(s, p) => write!(f, "{}[{}]", s, p),
        }
    }
}

impl Display for MsgType {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            MsgType::Out(p, u) => write!(f, "msg !<{}, {}>", p, u),
            MsgType::Sel(p, l) => write!(f, "msg +<{}, {}>", p, l),
        }
    }
}

impl Display for GenType {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        for (i, m) in self.msgs.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{}", m)?;
        }
        if let Some(t) = &self.cont {
            if !self.msgs.is_empty() {
                f.write_str("; ")?;
            }
            write!(f, "{}", t)?;
        }
        Ok(())
    }
}

pub(crate) struct EnvDisplay<'a>(pub &'a SessionEnv);

impl Display for EnvDisplay<'_> {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, (c, t)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, " {}: {}", c, t)?;
        }
        f.write_str(if self.0.is_empty() { "}" } else { " }" })
    }
}

impl Display for ProcessType {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            ProcessType::Sess(d) => write!(f, "{}", EnvDisplay(d)),
            ProcessType::Pi(j, s, t) => write!(f, "pi {} : {}. {}", j, s, t),
        }
    }
}

fn fmt_float(x: f64) -> String {
    format!("{:?}", x)
}

impl Display for Value {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            Value::Nat(n) => write!(f, "{}", n),
            Value::Bool(b) => write!(f, "{}", b),
            Value::Complex(re, im) => write!(f, "c({}, {})", fmt_float(*re), fmt_float(*im)),
            Value::Name(n) => f.write_str(n),
            Value::Endpoint(s, p) => write!(f, "{}[{}]", s, p),
        }
    }
}

fn expr_prec(e: &Expr) -> u8 {
    match e {
        Expr::Lit(_) | Expr::Var(_) => 4,
        Expr::Bin(ExprOp::Add | ExprOp::Sub, _, _) => 1,
        Expr::Bin(ExprOp::Mul, _, _) => 2,
        Expr::Bin(ExprOp::Pow, _, _) => 3,
    }
}

impl Display for Expr {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Lit(v) => write!(f, "{}", v),
            Expr::Var(x) => f.write_str(x),
            Expr::Bin(op, a, b) => {
                let p = expr_prec(self);
                let (sym, lp, rp) = match op {
                    ExprOp::Add => ("+", expr_prec(a) < p, expr_prec(b) <= p),
                    ExprOp::Sub => ("-", expr_prec(a) < p, expr_prec(b) <= p),
                    ExprOp::Mul => ("*", expr_prec(a) < p, expr_prec(b) <= p),
                    ExprOp::Pow => ("^", expr_prec(a) <= p, expr_prec(b) < p),
                };
                if lp {
                    write!(f, "({})", a)?;
                } else {
                    write!(f, "{}", a)?;
                }
                write!(f, " {} ", sym)?;
                if rp {
                    write!(f, "({})", b)
                } else {
                    write!(f, "{}", b)
                }
            }
        }
    }
}

impl Display for RoleSpec {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            RoleSpec::One(p) => write!(f, "{}", p),
            RoleSpec::Range { name, from, to } => write!(f, "{}[{}..{}]", name, from, to),
        }
    }
}

impl Display for MsgContent {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            MsgContent::Value(v) => write!(f, "{}", v),
            MsgContent::Chan(s, p) => write!(f, "chan {}[{}]", s, p),
            MsgContent::Label(l) => write!(f, "label {}", l),
        }
    }
}

impl Display for Message {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.from, self.to, self.content)
    }
}

impl Display for Process {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        let cont = |f: &mut Formatter<'_>, p: &Process| -> fmt::Result {
            f.write_str("; ")?;
            fmt_proc_unit(p, f)
        };
        match self {
            Process::Zero => f.write_str("0"),
            Process::PVar(x) => f.write_str(x),
            Process::Init { shared, roles, binder, body } => {
                write!(f, "init {}[", shared)?;
                for (i, r) in roles.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{}", r)?;
                }
                write!(f, "]({}). ", binder)?;
                fmt_proc_unit(body, f)
            }
            Process::Accept { shared, role, binder, body } => {
                write!(f, "accept {}[{}]({}). ", shared, role, binder)?;
                fmt_proc_unit(body, f)
            }
            Process::Request { shared, role, session } => write!(f, "req {}[{}] : {}", shared, role, session),
            Process::Send { chan, to, value, cont: k } => {
                write!(f, "{}!<{}, {}>", chan, to, value)?;
                cont(f, k)
            }
            Process::Recv { chan, from, binder, sort, cont: k } => {
                match sort {
                    Some(u) => write!(f, "{}?({}, {} : {})", chan, from, binder, u)?,
                    None => write!(f, "{}?({}, {})", chan, from, binder)?,
                }
                cont(f, k)
            }
            Process::Deleg { chan, to, delegated, cont: k } => {
                write!(f, "{}!<{}, chan {}>", chan, to, delegated)?;
                cont(f, k)
            }
            Process::Catch { chan, from, binder, ty, cont: k } => {
                write!(f, "{}?({}, chan {} : {})", chan, from, binder, ty)?;
                cont(f, k)
            }
            Process::Select { chan, to, label, cont: k } => {
                write!(f, "{} <| {}, {}", chan, to, label)?;
                cont(f, k)
            }
            Process::Branch { chan, from, branches } => {
                write!(f, "{} |> {} {{ ", chan, from)?;
                for (i, (l, p)) in branches.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{}: {}", l, p)?;
                }
                f.write_str(" }")
            }
            Process::Mu { var, annot, body } => {
                match annot {
                    Some(d) => write!(f, "mu {} : {}. ", var, EnvDisplay(d))?,
                    None => write!(f, "mu {}. ", var)?,
                }
                fmt_proc_unit(body, f)
            }
            Process::PRec(r) => {
                write!(f, "R {} with ({} : {}, {}", r.base, r.ivar, r.sort, r.pvar)?;
                if let Some(a) = &r.annot {
                    write!(f, " : {}", a)?;
                }
                write!(f, ") {{ {} }}", r.body)
            }
            Process::PApp(p, e) => {
                if matches!(**p, Process::PRec(_) | Process::PApp(..) | Process::PVar(_)) {
                    write!(f, "{} @ {}", p, IndexAtom(e))
                } else {
                    write!(f, "({}) @ {}", p, IndexAtom(e))
                }
            }
            Process::NewName { name, ty, body } => {
                write!(f, "new {} : <{}> in ", name, ty)?;
                fmt_proc_unit(body, f)
            }
            Process::NewSession { session, body } => {
                write!(f, "newsession {} in ", session)?;
                fmt_proc_unit(body, f)
            }
            Process::Par(..) => {
                let mut parts = Vec::new();
                flatten_par(self, &mut parts);
                for (i, p) in parts.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" | ")?;
                    }
                    fmt_proc_unit(p, f)?;
                }
                Ok(())
            }
            Process::Queue { session, msgs } => {
                write!(f, "queue {} [", session)?;
                for (i, m) in msgs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{}", m)?;
                }
                f.write_str("]")
            }
            Process::Emit { target, value, cont: k } => {
                write!(f, "emit {}<{}>", target, value)?;
                cont(f, k)
            }
        }
    }
}

fn flatten_par<'a>(p: &'a Process, out: &mut Vec<&'a Process>) {
    match p {
        Process::Par(a, b) => {
            flatten_par(a, out);
            flatten_par(b, out);
        }
        other => out.push(other),
    }
}

/// A process in a position where a bare parallel composition needs parentheses.
fn fmt_proc_unit(p: &Process, f: &mut Formatter<'_>) -> fmt::Result {
    if matches!(p, Process::Par(..)) {
        write!(f, "({})", p)
    } else {
        write!(f, "{}", p)
    }
}

fn fmt_params(params: &[super::Param]) -> String {
    if params.is_empty() {
        return String::new();
    }
    let mut s = String::from("(");
    for (i, p) in params.iter().enumerate() {
        if i > 0 {
            s.push_str(", ");
        }
        let _ = write!(s, "{} : {}", p.name, p.sort);
    }
    s.push(')');
    s
}

impl Display for Decl {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            Decl::Global(d) => write!(f, "global {}{} = {}", d.name, fmt_params(&d.params), d.body),
            Decl::Local(d) => write!(f, "local {}{} = {}", d.name, fmt_params(&d.params), d.body),
            Decl::Proc(d) => write!(f, "proc {}{} = {}", d.name, fmt_params(&d.params), d.body),
            Decl::Chan(d) => write!(f, "chan {} : {}", d.name, d.ty),
        }
    }
}

impl Display for SourceFile {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        for d in &self.decls {
            writeln!(f, "{}", d)?;
        }
        Ok(())
    }
}
