//! Lexer and recursive-descent parser for `.gt` / `.proc` sources.

use std::collections::{BTreeMap, BTreeSet};

use crate::ast::*;

use super::{ChanDecl, Decl, GlobalDecl, LocalDecl, Param, ParseError, ProcDecl, SourceFile, Span};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Num(u64),
    Float(f64),
    Sym(&'static str),
    Eof,
}

const SYMBOLS: &[&str] = &[
    "->", "..", "<=", ">=", "==", "&&", "<|", "|>", ".", ":", ";", ",", "(", ")", "[", "]", "{", "}", "<", ">", "=",
    "&", "|", "!", "?", "+", "-", "*", "^", "@",
];

fn lex(src: &str) -> Result<Vec<(Tok, Span)>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let adv = |i: &mut usize, line: &mut usize, col: &mut usize, n: usize, chars: &[char]| {
        for _ in 0..n {
            if chars[*i] == '\n' {
                *line += 1;
                *col = 1;
            } else {
                *col += 1;
            }
            *i += 1;
        }
    };
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            adv(&mut i, &mut line, &mut col, 1, &chars);
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                adv(&mut i, &mut line, &mut col, 1, &chars);
            }
            continue;
        }
        let span = Span { line, col };
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_' || chars[i] == '\'') {
                i += 1;
            }
            col += i - start;
            out.push((Tok::Ident(chars[start..i].iter().collect()), span));
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let mut float = false;
            if i + 1 < chars.len() && chars[i] == '.' && chars[i + 1].is_ascii_digit() {
                float = true;
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '-' || chars[j] == '+') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    float = true;
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            col += i - start;
            let tok = if float {
                Tok::Float(text.parse().map_err(|_| ParseError::at(span, format!("bad number `{}`", text)))?)
            } else {
                Tok::Num(text.parse().map_err(|_| ParseError::at(span, format!("number too large `{}`", text)))?)
            };
            out.push((tok, span));
            continue;
        }
        let rest: String = chars[i..(i + 2).min(chars.len())].iter().collect();
        let Some(sym) = SYMBOLS.iter().find(|s| rest.starts_with(**s)) else {
            return Err(ParseError::at(span, format!("unexpected character `{}`", c)));
        };
        adv(&mut i, &mut line, &mut col, sym.len(), &chars);
        out.push((Tok::Sym(sym), span));
    }
    out.push((Tok::Eof, Span { line, col }));
    Ok(out)
}

const KEYWORDS: &[&str] = &[
    "end", "mu", "R", "with", "foreach", "foreach_inc", "if", "then", "else", "pi", "nat", "bool", "complex", "true",
    "false", "global", "local", "proc", "chan", "init", "accept", "new", "in", "emit", "req", "queue", "newsession",
    "type", "label",
];

struct GlobalDef {
    params: Vec<Param>,
    body: GlobalType,
}

struct LocalDef {
    params: Vec<Param>,
    body: LocalType,
}

struct ProcDef {
    params: Vec<Param>,
    body: Process,
}

pub(super) struct Parser {
    toks: Vec<(Tok, Span)>,
    pos: usize,
    globals: BTreeMap<String, GlobalDef>,
    locals: BTreeMap<String, LocalDef>,
    procs: BTreeMap<String, ProcDef>,
}

type PResult<T> = Result<T, ParseError>;

impl Parser {
    pub(super) fn new(src: &str) -> PResult<Self> {
        Ok(Parser {
            toks: lex(src)?,
            pos: 0,
            globals: BTreeMap::new(),
            locals: BTreeMap::new(),
            procs: BTreeMap::new(),
        })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].0
    }

    fn span(&self) -> Span {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, msg: impl Into<String>) -> PResult<T> {
        Err(ParseError::at(self.span(), msg.into()))
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(x) if *x == s)
    }

    fn is_kw(&self, k: &str) -> bool {
        matches!(self.peek(), Tok::Ident(x) if x == k)
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn eat_kw(&mut self, k: &str) -> bool {
        if self.is_kw(k) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> PResult<()> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            self.err(format!("expected `{}`, found {}", s, describe(self.peek())))
        }
    }

    fn expect_kw(&mut self, k: &str) -> PResult<()> {
        if self.eat_kw(k) {
            Ok(())
        } else {
            self.err(format!("expected `{}`, found {}", k, describe(self.peek())))
        }
    }

    fn ident(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                self.bump();
                Ok(s)
            }
            other => self.err(format!("expected identifier, found {}", describe(&other))),
        }
    }

    fn at_eof(&self) -> bool {
        matches!(self.peek(), Tok::Eof)
    }

    pub(super) fn finish(&self) -> PResult<()> {
        if self.at_eof() {
            Ok(())
        } else {
            self.err(format!("unexpected {}", describe(self.peek())))
        }
    }

    // -- files ---------------------------------------------------------------

    pub(super) fn source_file(&mut self) -> PResult<SourceFile> {
        let mut decls = Vec::new();
        while !self.at_eof() {
            decls.push(self.decl()?);
        }
        Ok(SourceFile { decls })
    }

    fn decl(&mut self) -> PResult<Decl> {
        let span = self.span();
        if self.eat_kw("global") {
            let name = self.ident()?;
            let params = self.params()?;
            self.expect_sym("=")?;
            let body = self.global()?;
            self.globals.insert(name.clone(), GlobalDef { params: params.clone(), body: body.clone() });
            return Ok(Decl::Global(GlobalDecl { name, params, body, span }));
        }
        if self.eat_kw("local") {
            let name = self.ident()?;
            let params = self.params()?;
            self.expect_sym("=")?;
            let body = self.local()?;
            self.locals.insert(name.clone(), LocalDef { params: params.clone(), body: body.clone() });
            return Ok(Decl::Local(LocalDecl { name, params, body, span }));
        }
        if self.eat_kw("proc") {
            let name = self.ident()?;
            let params = self.params()?;
            self.expect_sym("=")?;
            let body = self.proc_par()?;
            self.procs.insert(name.clone(), ProcDef { params: params.clone(), body: body.clone() });
            return Ok(Decl::Proc(ProcDecl { name, params, body, span }));
        }
        if self.eat_kw("chan") {
            let name = self.ident()?;
            self.expect_sym(":")?;
            let ty = self.global()?;
            return Ok(Decl::Chan(ChanDecl { name, ty, span }));
        }
        self.err(format!("expected a declaration, found {}", describe(self.peek())))
    }

    fn params(&mut self) -> PResult<Vec<Param>> {
        let mut out = Vec::new();
        if !self.eat_sym("(") {
            return Ok(out);
        }
        loop {
            let name = self.ident()?;
            let sort = if self.eat_sym(":") { self.sort()? } else { IndexSort::Nat };
            out.push(Param { name, sort });
            if self.eat_sym(")") {
                return Ok(out);
            }
            self.expect_sym(",")?;
        }
    }

    fn args(&mut self) -> PResult<Vec<IndexExpr>> {
        self.expect_sym("(")?;
        let mut out = Vec::new();
        if self.eat_sym(")") {
            return Ok(out);
        }
        loop {
            out.push(self.index()?);
            if self.eat_sym(")") {
                return Ok(out);
            }
            self.expect_sym(",")?;
        }
    }

    // -- indices -------------------------------------------------------------

    pub(super) fn index(&mut self) -> PResult<IndexExpr> {
        let mut e = self.index_prod()?;
        loop {
            if self.eat_sym("+") {
                e = IndexExpr::add(e, self.index_prod()?);
            } else if self.is_sym("-") && !matches!(self.peek_at(1), Tok::Sym(">")) {
                self.bump();
                e = IndexExpr::sub(e, self.index_prod()?);
            } else {
                return Ok(e);
            }
        }
    }

    fn index_prod(&mut self) -> PResult<IndexExpr> {
        let mut e = self.index_pow()?;
        while self.eat_sym("*") {
            e = IndexExpr::mul(e, self.index_pow()?);
        }
        Ok(e)
    }

    fn index_pow(&mut self) -> PResult<IndexExpr> {
        let base = self.index_atom()?;
        if self.eat_sym("^") {
            let exp = self.index_pow()?;
            return Ok(IndexExpr::pow(base, exp));
        }
        Ok(base)
    }

    fn index_atom(&mut self) -> PResult<IndexExpr> {
        match self.peek().clone() {
            Tok::Num(n) => {
                self.bump();
                Ok(IndexExpr::Lit(n))
            }
            Tok::Sym("(") => {
                self.bump();
                let e = self.index()?;
                self.expect_sym(")")?;
                Ok(e)
            }
            _ => Ok(IndexExpr::Var(self.ident()?)),
        }
    }

    fn prop(&mut self) -> PResult<Prop> {
        let mut p = self.prop_atom()?;
        while self.eat_sym("&&") {
            p = Prop::And(Box::new(p), Box::new(self.prop_atom()?));
        }
        Ok(p)
    }

    fn prop_atom(&mut self) -> PResult<Prop> {
        if self.eat_kw("true") {
            return Ok(Prop::True);
        }
        let a = self.index()?;
        self.comparison(a)
    }

    fn comparison(&mut self, a: IndexExpr) -> PResult<Prop> {
        let op = match self.peek() {
            Tok::Sym(s @ ("<=" | ">=" | "<" | ">" | "=")) => *s,
            other => return self.err(format!("expected a comparison, found {}", describe(other))),
        };
        self.bump();
        let b = self.index()?;
        Ok(match op {
            "<=" => Prop::Leq(a, b),
            ">=" => Prop::Leq(b, a),
            "<" => Prop::lt(a, b),
            ">" => Prop::lt(b, a),
            _ => Prop::eq(a, b),
        })
    }

    pub(super) fn sort(&mut self) -> PResult<IndexSort> {
        if self.eat_kw("nat") {
            return Ok(IndexSort::Nat);
        }
        if self.eat_sym("[") {
            let lo = self.index()?;
            self.expect_sym("..")?;
            let hi = self.index()?;
            self.expect_sym("]")?;
            return Ok(IndexSort::between(lo, hi));
        }
        if self.eat_sym("{") {
            let var = self.ident()?;
            self.expect_sym(":")?;
            let base = self.sort()?;
            self.expect_sym("|")?;
            let prop = self.prop()?;
            self.expect_sym("}")?;
            return Ok(IndexSort::Constrained { var, base: Box::new(base), prop });
        }
        self.err(format!("expected a sort, found {}", describe(self.peek())))
    }

    pub(super) fn participant(&mut self) -> PResult<Participant> {
        let name = self.ident()?;
        self.participant_indices(name)
    }

    fn participant_indices(&mut self, name: String) -> PResult<Participant> {
        let mut indices = Vec::new();
        while self.eat_sym("[") {
            indices.push(self.index()?);
            self.expect_sym("]")?;
        }
        Ok(Participant { name, indices })
    }

    fn payload(&mut self) -> PResult<Payload> {
        if self.eat_kw("nat") {
            return Ok(Payload::Nat);
        }
        if self.eat_kw("bool") {
            return Ok(Payload::Bool);
        }
        if self.eat_kw("complex") {
            return Ok(Payload::Complex);
        }
        if self.eat_sym("<") {
            let g = self.global()?;
            self.expect_sym(">")?;
            return Ok(Payload::Shared(Box::new(g)));
        }
        if self.eat_kw("chan") {
            self.expect_sym("(")?;
            let t = self.local()?;
            self.expect_sym(")")?;
            return Ok(Payload::Session(Box::new(t)));
        }
        self.err(format!("expected a payload type, found {}", describe(self.peek())))
    }

    /// Guard of `if`: participant equality, a proposition, or a bare index.
    fn guard(&mut self) -> PResult<Result<Guard, IndexExpr>> {
        if self.is_kw("true") {
            return Ok(Ok(Guard::Prop(self.prop()?)));
        }
        let save = self.pos;
        if let Ok(p) = self.participant() {
            if self.eat_sym("==") {
                let q = self.participant()?;
                return Ok(Ok(Guard::PartEq(p, q)));
            }
        }
        self.pos = save;
        let a = self.index()?;
        if matches!(self.peek(), Tok::Sym("<=" | ">=" | "<" | ">" | "=")) {
            let mut p = self.comparison(a)?;
            while self.eat_sym("&&") {
                p = Prop::And(Box::new(p), Box::new(self.prop_atom()?));
            }
            return Ok(Ok(Guard::Prop(p)));
        }
        Ok(Err(a))
    }

    // -- shared type forms ---------------------------------------------------

    fn rec_header(&mut self) -> PResult<(String, IndexSort, String)> {
        self.expect_kw("with")?;
        self.expect_sym("(")?;
        let ivar = self.ident()?;
        self.expect_sym(":")?;
        let sort = self.sort()?;
        self.expect_sym(",")?;
        let tvar = self.ident()?;
        self.expect_sym(")")?;
        Ok((ivar, sort, tvar))
    }

    fn postfix_app<A: Action>(&mut self, mut t: Ty<A>) -> PResult<Ty<A>> {
        while self.eat_sym("@") {
            let e = self.index_atom()?;
            t = Ty::app(t, e);
        }
        Ok(t)
    }

    /// Binder forms and primaries common to global and local types.
    fn ty_common<A: Action>(
        &mut self,
        full: &mut dyn FnMut(&mut Parser) -> PResult<Ty<A>>,
        reference: &mut dyn FnMut(&mut Parser, String) -> PResult<Ty<A>>,
    ) -> PResult<Option<Ty<A>>> {
        if self.eat_kw("mu") {
            let x = self.ident()?;
            self.expect_sym(".")?;
            return Ok(Some(Ty::mu(&x, full(self)?)));
        }
        if self.eat_kw("pi") {
            let n = self.ident()?;
            self.expect_sym(":")?;
            let s = self.sort()?;
            self.expect_sym(".")?;
            return Ok(Some(pi(&n, s, full(self)?)));
        }
        if self.is_kw("foreach") || self.is_kw("foreach_inc") {
            let inc = self.is_kw("foreach_inc");
            self.bump();
            let i = self.ident()?;
            self.expect_sym("<")?;
            let bound = self.index()?;
            self.expect_sym("{")?;
            let body = full(self)?;
            self.expect_sym("}")?;
            let body = if inc {
                // i counts up: the recursor's k-th unfolding visits bound - 1 - k
                let flipped = IndexExpr::sub(IndexExpr::sub(bound.clone(), IndexExpr::Lit(1)), IndexExpr::var(&i));
                body.subst_ix(&i, &flipped)
            } else {
                body
            };
            return Ok(Some(foreach(&i, bound, body)));
        }
        if self.eat_kw("if") {
            let g = self.guard()?;
            self.expect_kw("then")?;
            let a = full(self)?;
            self.expect_kw("else")?;
            let b = full(self)?;
            return Ok(Some(match g {
                Ok(g) => Ty::cond(g, a, b),
                Err(e) => if_index(e, a, b),
            }));
        }
        let prim = if self.eat_kw("end") {
            Ty::End
        } else if self.eat_kw("R") {
            let base = full(self)?;
            let (ivar, sort, tvar) = self.rec_header()?;
            self.expect_sym("{")?;
            let body = full(self)?;
            self.expect_sym("}")?;
            Ty::rec(base, &ivar, sort, &tvar, body)
        } else if self.eat_sym("(") {
            let t = full(self)?;
            self.expect_sym(")")?;
            t
        } else if let Tok::Ident(name) = self.peek().clone() {
            if KEYWORDS.contains(&name.as_str()) {
                return Ok(None);
            }
            match self.peek_at(1) {
                Tok::Sym("(") => {
                    self.bump();
                    reference(self, name)?
                }
                Tok::Sym("[" | "->") => return Ok(None),
                _ => {
                    self.bump();
                    Ty::Var(name)
                }
            }
        } else {
            return Ok(None);
        };
        Ok(Some(self.postfix_app(prim)?))
    }

    // -- global types --------------------------------------------------------

    pub(super) fn global(&mut self) -> PResult<GlobalType> {
        let first = self.global_unit()?;
        if self.eat_sym(";") {
            let rest = self.global()?;
            return Ok(seq(first, rest));
        }
        Ok(first)
    }

    fn global_unit(&mut self) -> PResult<GlobalType> {
        let mut full = |p: &mut Parser| p.global();
        let mut reference = |p: &mut Parser, name: String| p.global_ref(&name);
        if let Some(t) = self.ty_common(&mut full, &mut reference)? {
            return Ok(t);
        }
        let from = self.participant()?;
        self.expect_sym("->")?;
        let to = self.participant()?;
        if self.eat_sym(":") {
            let payload = self.payload()?;
            let cont = if self.eat_sym(".") { self.global()? } else { Ty::End };
            return Ok(Ty::Act(GAct::Msg { from, to, payload, cont: Box::new(cont) }));
        }
        self.expect_sym("{")?;
        let mut branches = BTreeMap::new();
        loop {
            let l = Label(self.ident()?);
            self.expect_sym(":")?;
            let g = self.global()?;
            if branches.insert(l.clone(), g).is_some() {
                return self.err(format!("duplicate label `{}`", l));
            }
            if self.eat_sym("}") {
                break;
            }
            self.expect_sym(",")?;
        }
        Ok(Ty::Act(GAct::Branch { from, to, branches }))
    }

    fn global_ref(&mut self, name: &str) -> PResult<GlobalType> {
        let args = self.args()?;
        let Some(def) = self.globals.get(name) else {
            return self.err(format!("unknown global declaration `{}`", name));
        };
        if def.params.len() != args.len() {
            return self.err(format!("`{}` expects {} arguments", name, def.params.len()));
        }
        Ok(instantiate(&def.body, &def.params, &args))
    }

    // -- local types ---------------------------------------------------------

    pub(super) fn local(&mut self) -> PResult<LocalType> {
        let mut full = |p: &mut Parser| p.local();
        let mut reference = |p: &mut Parser, name: String| p.local_ref(&name);
        if let Some(t) = self.ty_common(&mut full, &mut reference)? {
            return Ok(t);
        }
        if self.is_sym("!") || self.is_sym("?") {
            let out = self.is_sym("!");
            self.bump();
            self.expect_sym("<")?;
            let peer = self.participant()?;
            self.expect_sym(",")?;
            let payload = self.payload()?;
            self.expect_sym(">")?;
            let cont = Box::new(if self.eat_sym(";") { self.local()? } else { Ty::End });
            return Ok(Ty::Act(if out {
                LAct::Out { peer, payload, cont }
            } else {
                LAct::In { peer, payload, cont }
            }));
        }
        if self.is_sym("+") || self.is_sym("&") {
            let sel = self.is_sym("+");
            self.bump();
            self.expect_sym("<")?;
            let peer = self.participant()?;
            self.expect_sym(",")?;
            self.expect_sym("{")?;
            let mut branches = BTreeMap::new();
            loop {
                let l = Label(self.ident()?);
                self.expect_sym(":")?;
                let t = self.local()?;
                if branches.insert(l.clone(), t).is_some() {
                    return self.err(format!("duplicate label `{}`", l));
                }
                if self.eat_sym("}") {
                    break;
                }
                self.expect_sym(",")?;
            }
            self.expect_sym(">")?;
            return Ok(Ty::Act(if sel { LAct::Sel { peer, branches } } else { LAct::Bra { peer, branches } }));
        }
        self.err(format!("expected a local type, found {}", describe(self.peek())))
    }

    fn local_ref(&mut self, name: &str) -> PResult<LocalType> {
        let args = self.args()?;
        let Some(def) = self.locals.get(name) else {
            return self.err(format!("unknown local declaration `{}`", name));
        };
        if def.params.len() != args.len() {
            return self.err(format!("`{}` expects {} arguments", name, def.params.len()));
        }
        Ok(instantiate(&def.body, &def.params, &args))
    }

    // -- process types -------------------------------------------------------

    fn session_env(&mut self) -> PResult<SessionEnv> {
        self.expect_sym("{")?;
        let mut env = SessionEnv::new();
        if self.eat_sym("}") {
            return Ok(env);
        }
        loop {
            let c = self.chan()?;
            self.expect_sym(":")?;
            let t = self.local()?;
            env.insert(c, GenType::local(t));
            if self.eat_sym("}") {
                return Ok(env);
            }
            self.expect_sym(",")?;
        }
    }

    fn process_type(&mut self) -> PResult<ProcessType> {
        if self.eat_kw("pi") {
            let j = self.ident()?;
            self.expect_sym(":")?;
            let s = self.sort()?;
            self.expect_sym(".")?;
            let t = self.process_type()?;
            return Ok(ProcessType::Pi(j, s, Box::new(t)));
        }
        Ok(ProcessType::Sess(self.session_env()?))
    }

    // -- processes -----------------------------------------------------------

    fn chan(&mut self) -> PResult<Chan> {
        let name = self.ident()?;
        if self.eat_sym("[") {
            let p = self.participant()?;
            self.expect_sym("]")?;
            return Ok(Chan::Endpoint(Session(name), p));
        }
        Ok(Chan::Var(name))
    }

    pub(super) fn proc_par(&mut self) -> PResult<Process> {
        let mut parts = vec![self.proc_unit()?];
        while self.eat_sym("|") {
            parts.push(self.proc_unit()?);
        }
        let mut it = parts.into_iter().rev();
        let last = it.next().expect("nonempty");
        Ok(it.fold(last, |acc, p| Process::Par(Box::new(p), Box::new(acc))))
    }

    fn proc_cont(&mut self) -> PResult<Process> {
        if self.eat_sym(";") {
            self.proc_unit()
        } else {
            Ok(Process::Zero)
        }
    }

    fn is_chan_action(&self) -> bool {
        if !matches!(self.peek(), Tok::Ident(_)) {
            return false;
        }
        match self.peek_at(1) {
            Tok::Sym("!" | "?" | "<|" | "|>") => true,
            Tok::Sym("[") => {
                // s[p]! ... : scan to the matching bracket
                let mut depth = 0usize;
                let mut k = 1;
                loop {
                    match self.peek_at(k) {
                        Tok::Sym("[") => depth += 1,
                        Tok::Sym("]") => {
                            depth -= 1;
                            if depth == 0 && !matches!(self.peek_at(k + 1), Tok::Sym("[")) {
                                return matches!(self.peek_at(k + 1), Tok::Sym("!" | "?" | "<|" | "|>"));
                            }
                        }
                        Tok::Eof => return false,
                        _ => {}
                    }
                    k += 1;
                }
            }
            _ => false,
        }
    }

    fn proc_unit(&mut self) -> PResult<Process> {
        if let Tok::Num(0) = self.peek() {
            self.bump();
            return Ok(Process::Zero);
        }
        if self.eat_kw("init") {
            let shared = self.ident()?;
            self.expect_sym("[")?;
            let mut roles = Vec::new();
            loop {
                let name = self.ident()?;
                if self.is_sym("[") {
                    // detect a range `name[a..b]`
                    let save = self.pos;
                    self.bump();
                    let from = self.index()?;
                    if self.eat_sym("..") {
                        let to = self.index()?;
                        self.expect_sym("]")?;
                        roles.push(RoleSpec::Range { name, from, to });
                    } else {
                        self.pos = save;
                        roles.push(RoleSpec::One(self.participant_indices(name)?));
                    }
                } else {
                    roles.push(RoleSpec::One(Participant { name, indices: vec![] }));
                }
                if self.eat_sym("]") {
                    break;
                }
                self.expect_sym(",")?;
            }
            self.expect_sym("(")?;
            let binder = self.ident()?;
            self.expect_sym(")")?;
            self.expect_sym(".")?;
            let body = Box::new(self.proc_unit()?);
            return Ok(Process::Init { shared, roles, binder, body });
        }
        if self.eat_kw("accept") {
            let shared = self.ident()?;
            self.expect_sym("[")?;
            let role = self.participant()?;
            self.expect_sym("]")?;
            self.expect_sym("(")?;
            let binder = self.ident()?;
            self.expect_sym(")")?;
            self.expect_sym(".")?;
            let body = Box::new(self.proc_unit()?);
            return Ok(Process::Accept { shared, role, binder, body });
        }
        if self.eat_kw("req") {
            let shared = self.ident()?;
            self.expect_sym("[")?;
            let role = self.participant()?;
            self.expect_sym("]")?;
            self.expect_sym(":")?;
            let session = Session(self.ident()?);
            return Ok(Process::Request { shared, role, session });
        }
        if self.eat_kw("mu") {
            let var = self.ident()?;
            let annot = if self.eat_sym(":") { Some(self.session_env()?) } else { None };
            self.expect_sym(".")?;
            let body = Box::new(self.proc_unit()?);
            return Ok(Process::Mu { var, annot, body });
        }
        if self.eat_kw("new") {
            let name = self.ident()?;
            self.expect_sym(":")?;
            self.expect_sym("<")?;
            let ty = self.global()?;
            self.expect_sym(">")?;
            self.expect_kw("in")?;
            let body = Box::new(self.proc_unit()?);
            return Ok(Process::NewName { name, ty, body });
        }
        if self.eat_kw("newsession") {
            let session = Session(self.ident()?);
            self.expect_kw("in")?;
            let body = Box::new(self.proc_unit()?);
            return Ok(Process::NewSession { session, body });
        }
        if self.eat_kw("emit") {
            let target = self.ident()?;
            self.expect_sym("<")?;
            let value = self.expr()?;
            self.expect_sym(">")?;
            let cont = Box::new(self.proc_cont()?);
            return Ok(Process::Emit { target, value, cont });
        }
        if self.eat_kw("queue") {
            let session = Session(self.ident()?);
            self.expect_sym("[")?;
            let mut msgs = Vec::new();
            if !self.eat_sym("]") {
                loop {
                    self.expect_sym("(")?;
                    let from = self.participant()?;
                    self.expect_sym(",")?;
                    let to = self.participant()?;
                    self.expect_sym(",")?;
                    let content = if self.eat_kw("label") {
                        MsgContent::Label(Label(self.ident()?))
                    } else if self.eat_kw("chan") {
                        match self.chan()? {
                            Chan::Endpoint(s, p) => MsgContent::Chan(s, p),
                            Chan::Var(_) => return self.err("expected an endpoint"),
                        }
                    } else {
                        match self.expr()? {
                            Expr::Lit(v) => MsgContent::Value(v),
                            Expr::Var(n) => MsgContent::Value(Value::Name(n)),
                            _ => return self.err("queued values must be literals"),
                        }
                    };
                    self.expect_sym(")")?;
                    msgs.push(Message { from, to, content });
                    if self.eat_sym("]") {
                        break;
                    }
                    self.expect_sym(",")?;
                }
            }
            return Ok(Process::Queue { session, msgs });
        }
        if self.is_kw("foreach") {
            self.bump();
            let i = self.ident()?;
            self.expect_sym("<")?;
            let bound = self.index()?;
            self.expect_sym("{")?;
            let body = self.proc_par()?;
            self.expect_sym("}")?;
            let after = self.proc_cont()?;
            let mut avoid = BTreeSet::new();
            collect_pvars(&body, &mut avoid);
            let x = fresh_name("X", &avoid);
            let rec = PRecNode {
                base: after,
                ivar: i,
                sort: IndexSort::range(bound.clone()),
                pvar: x.clone(),
                annot: None,
                body: body.subst_zero(&Process::PVar(x)),
            };
            return Ok(Process::PApp(Box::new(Process::PRec(Box::new(rec))), bound));
        }
        if self.eat_kw("if") {
            let e = self.index()?;
            self.expect_kw("then")?;
            let a = self.proc_par()?;
            self.expect_kw("else")?;
            let b = self.proc_unit()?;
            let mut avoid = BTreeSet::new();
            collect_pvars(&a, &mut avoid);
            let x = fresh_name("X", &avoid);
            let i = fresh_name("i", &a.free_index_vars());
            let rec = PRecNode { base: b, ivar: i, sort: IndexSort::Nat, pvar: x, annot: None, body: a };
            return Ok(Process::PApp(Box::new(Process::PRec(Box::new(rec))), e));
        }
        if self.is_chan_action() {
            let chan = self.chan()?;
            if self.eat_sym("!") {
                self.expect_sym("<")?;
                let to = self.participant()?;
                self.expect_sym(",")?;
                if self.eat_kw("chan") {
                    let delegated = self.chan()?;
                    self.expect_sym(">")?;
                    let cont = Box::new(self.proc_cont()?);
                    return Ok(Process::Deleg { chan, to, delegated, cont });
                }
                let value = self.expr()?;
                self.expect_sym(">")?;
                let cont = Box::new(self.proc_cont()?);
                return Ok(Process::Send { chan, to, value, cont });
            }
            if self.eat_sym("?") {
                self.expect_sym("(")?;
                let from = self.participant()?;
                self.expect_sym(",")?;
                if self.eat_kw("chan") {
                    let binder = self.ident()?;
                    self.expect_sym(":")?;
                    let ty = self.local()?;
                    self.expect_sym(")")?;
                    let cont = Box::new(self.proc_cont()?);
                    return Ok(Process::Catch { chan, from, binder, ty, cont });
                }
                let binder = self.ident()?;
                let sort = if self.eat_sym(":") { Some(self.payload()?) } else { None };
                self.expect_sym(")")?;
                let cont = Box::new(self.proc_cont()?);
                return Ok(Process::Recv { chan, from, binder, sort, cont });
            }
            if self.eat_sym("<|") {
                let to = self.participant()?;
                self.expect_sym(",")?;
                let label = Label(self.ident()?);
                let cont = Box::new(self.proc_cont()?);
                return Ok(Process::Select { chan, to, label, cont });
            }
            self.expect_sym("|>")?;
            let from = self.participant()?;
            self.expect_sym("{")?;
            let mut branches = BTreeMap::new();
            loop {
                let l = Label(self.ident()?);
                self.expect_sym(":")?;
                let p = self.proc_par()?;
                if branches.insert(l.clone(), p).is_some() {
                    return self.err(format!("duplicate label `{}`", l));
                }
                if self.eat_sym("}") {
                    break;
                }
                self.expect_sym(",")?;
            }
            return Ok(Process::Branch { chan, from, branches });
        }
        let prim = if self.eat_kw("R") {
            let base = self.proc_par()?;
            self.expect_kw("with")?;
            self.expect_sym("(")?;
            let ivar = self.ident()?;
            self.expect_sym(":")?;
            let sort = self.sort()?;
            self.expect_sym(",")?;
            let pvar = self.ident()?;
            let annot = if self.eat_sym(":") { Some(self.process_type()?) } else { None };
            self.expect_sym(")")?;
            self.expect_sym("{")?;
            let body = self.proc_par()?;
            self.expect_sym("}")?;
            Process::PRec(Box::new(PRecNode { base, ivar, sort, pvar, annot, body }))
        } else if self.eat_sym("(") {
            let p = self.proc_par()?;
            self.expect_sym(")")?;
            p
        } else {
            let name = self.ident()?;
            if self.is_sym("(") {
                self.proc_ref(&name)?
            } else {
                Process::PVar(name)
            }
        };
        let mut p = prim;
        while self.eat_sym("@") {
            let e = self.index_atom()?;
            p = Process::PApp(Box::new(p), e);
        }
        Ok(p)
    }

    fn proc_ref(&mut self, name: &str) -> PResult<Process> {
        let args = self.args()?;
        let Some(def) = self.procs.get(name) else {
            return self.err(format!("unknown process declaration `{}`", name));
        };
        if def.params.len() != args.len() {
            return self.err(format!("`{}` expects {} arguments", name, def.params.len()));
        }
        Ok(instantiate(&def.body, &def.params, &args))
    }

    // -- value expressions ---------------------------------------------------

    fn expr(&mut self) -> PResult<Expr> {
        let mut e = self.expr_prod()?;
        loop {
            let op = if self.is_sym("+") {
                ExprOp::Add
            } else if self.is_sym("-") {
                ExprOp::Sub
            } else {
                return Ok(e);
            };
            self.bump();
            e = Expr::Bin(op, Box::new(e), Box::new(self.expr_prod()?));
        }
    }

    fn expr_prod(&mut self) -> PResult<Expr> {
        let mut e = self.expr_pow()?;
        while self.eat_sym("*") {
            e = Expr::Bin(ExprOp::Mul, Box::new(e), Box::new(self.expr_pow()?));
        }
        Ok(e)
    }

    fn expr_pow(&mut self) -> PResult<Expr> {
        let base = self.expr_atom()?;
        if self.eat_sym("^") {
            let exp = self.expr_pow()?;
            return Ok(Expr::Bin(ExprOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn float(&mut self) -> PResult<f64> {
        let neg = self.eat_sym("-");
        let x = match self.bump() {
            Tok::Num(n) => n as f64,
            Tok::Float(x) => x,
            other => return self.err(format!("expected a number, found {}", describe(&other))),
        };
        Ok(if neg { -x } else { x })
    }

    fn expr_atom(&mut self) -> PResult<Expr> {
        match self.peek().clone() {
            Tok::Num(n) => {
                self.bump();
                Ok(Expr::Lit(Value::Nat(n)))
            }
            Tok::Sym("(") => {
                self.bump();
                let e = self.expr()?;
                self.expect_sym(")")?;
                Ok(e)
            }
            Tok::Ident(k) if k == "true" || k == "false" => {
                self.bump();
                Ok(Expr::Lit(Value::Bool(k == "true")))
            }
            Tok::Ident(k) if k == "c" && matches!(self.peek_at(1), Tok::Sym("(")) => {
                self.bump();
                self.bump();
                let re = self.float()?;
                self.expect_sym(",")?;
                let im = self.float()?;
                self.expect_sym(")")?;
                Ok(Expr::Lit(Value::Complex(re, im)))
            }
            _ => Ok(Expr::Var(self.ident()?)),
        }
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("`{}`", s),
        Tok::Num(n) => format!("`{}`", n),
        Tok::Float(x) => format!("`{}`", x),
        Tok::Sym(s) => format!("`{}`", s),
        Tok::Eof => "end of input".to_string(),
    }
}

fn collect_pvars(p: &Process, out: &mut BTreeSet<String>) {
    p.map_proc(&mut |q| {
        match q {
            Process::PVar(x) => {
                out.insert(x.clone());
            }
            Process::Mu { var, .. } => {
                out.insert(var.clone());
            }
            Process::PRec(r) => {
                out.insert(r.pvar.clone());
            }
            _ => {}
        }
        None
    });
}

/// Simultaneous substitution of declaration parameters by arguments.
pub fn instantiate<T: IndexTerm + Clone>(body: &T, params: &[Param], args: &[IndexExpr]) -> T {
    let mut avoid: BTreeSet<String> = body.free_index_vars();
    for a in args {
        a.free_ix(&mut avoid);
    }
    let mut t = None::<T>;
    let mut temps = Vec::new();
    for p in params {
        let tmp = fresh_name(&format!("{}_", p.name), &avoid);
        avoid.insert(tmp.clone());
        let cur = t.as_ref().unwrap_or(body);
        t = Some(cur.subst_ix(&p.name, &IndexExpr::var(&tmp)));
        temps.push(tmp);
    }
    for (tmp, a) in temps.iter().zip(args) {
        let cur = t.as_ref().unwrap_or(body);
        t = Some(cur.subst_ix(tmp, a));
    }
    t.unwrap_or_else(|| body.clone())
}
