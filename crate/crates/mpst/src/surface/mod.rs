//! Concrete syntax: parsing, printing and JSON interchange.

mod json;
mod parse;
mod print;

use std::fmt;

use thiserror::Error;

use crate::ast::{GlobalType, IndexSort, LocalType, Process};

pub use json::{export_json, import_json, FromJson, JsonError, ToJson, SCHEMA_VERSION};
pub use parse::instantiate;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Span {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{span}: {message}")]
pub struct ParseError {
    pub span: Span,
    pub message: String,
}

impl ParseError {
    pub fn at(span: Span, message: String) -> Self {
        ParseError { span, message }
    }
}

/// Declaration parameter; instantiated by substitution.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub sort: IndexSort,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalDecl {
    pub name: String,
    pub params: Vec<Param>,
    pub body: GlobalType,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalDecl {
    pub name: String,
    pub params: Vec<Param>,
    pub body: LocalType,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProcDecl {
    pub name: String,
    pub params: Vec<Param>,
    pub body: Process,
    pub span: Span,
}

/// `chan a : G` binds a shared name in every process of the file.
#[derive(Clone, Debug, PartialEq)]
pub struct ChanDecl {
    pub name: String,
    pub ty: GlobalType,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Decl {
    Global(GlobalDecl),
    Local(LocalDecl),
    Proc(ProcDecl),
    Chan(ChanDecl),
}

impl Decl {
    pub fn name(&self) -> &str {
        match self {
            Decl::Global(d) => &d.name,
            Decl::Local(d) => &d.name,
            Decl::Proc(d) => &d.name,
            Decl::Chan(d) => &d.name,
        }
    }

    pub fn span(&self) -> Span {
        match self {
            Decl::Global(d) => d.span,
            Decl::Local(d) => d.span,
            Decl::Proc(d) => d.span,
            Decl::Chan(d) => d.span,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SourceFile {
    pub decls: Vec<Decl>,
}

impl SourceFile {
    pub fn find(&self, name: &str) -> Option<&Decl> {
        self.decls.iter().find(|d| d.name() == name)
    }

    pub fn global(&self, name: &str) -> Option<&GlobalDecl> {
        self.decls.iter().find_map(|d| match d {
            Decl::Global(g) if g.name == name => Some(g),
            _ => None,
        })
    }

    pub fn local(&self, name: &str) -> Option<&LocalDecl> {
        self.decls.iter().find_map(|d| match d {
            Decl::Local(g) if g.name == name => Some(g),
            _ => None,
        })
    }

    pub fn proc(&self, name: &str) -> Option<&ProcDecl> {
        self.decls.iter().find_map(|d| match d {
            Decl::Proc(g) if g.name == name => Some(g),
            _ => None,
        })
    }

    pub fn chans(&self) -> impl Iterator<Item = &ChanDecl> {
        self.decls.iter().filter_map(|d| match d {
            Decl::Chan(c) => Some(c),
            _ => None,
        })
    }
}

pub fn parse(src: &str) -> Result<SourceFile, ParseError> {
    parse::Parser::new(src)?.source_file()
}

fn parse_whole<T>(src: &str, f: impl FnOnce(&mut parse::Parser) -> Result<T, ParseError>) -> Result<T, ParseError> {
    let mut p = parse::Parser::new(src)?;
    let t = f(&mut p)?;
    p.finish()?;
    Ok(t)
}

pub fn parse_global(src: &str) -> Result<GlobalType, ParseError> {
    parse_whole(src, |p| p.global())
}

pub fn parse_local(src: &str) -> Result<LocalType, ParseError> {
    parse_whole(src, |p| p.local())
}

pub fn parse_process(src: &str) -> Result<Process, ParseError> {
    parse_whole(src, |p| p.proc_par())
}

pub fn parse_index(src: &str) -> Result<crate::ast::IndexExpr, ParseError> {
    parse_whole(src, |p| p.index())
}

pub fn parse_sort(src: &str) -> Result<IndexSort, ParseError> {
    parse_whole(src, |p| p.sort())
}

pub fn parse_participant(src: &str) -> Result<crate::ast::Participant, ParseError> {
    parse_whole(src, |p| p.participant())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::*;

    #[test]
    fn parses_sequence_family() {
        let g = parse_global("pi n : nat. foreach i < n { W[i+1] -> W[i] : nat }").unwrap();
        let Ty::Rec(r) = &g else { panic!("expected a recursor, got {g:?}") };
        assert_eq!(r.base, Ty::End);
        assert_eq!(r.sort, IndexSort::Nat);
    }

    #[test]
    fn print_parse_round_trip() {
        let srcs = [
            "A -> B : nat. B -> C { ok: end, quit: C -> A : bool. end }",
            "mu t. A -> B : <C -> D : nat. end>. t",
            "(R end with (i : [0..n], x) { W[i + 1] -> W[i] : nat. x }) @ n",
            "if W[p] == W[0] then end else A -> B : nat. end",
            "if 1 <= n && n <= 3 then end else end",
        ];
        for s in srcs {
            let g = parse_global(s).unwrap();
            let printed = g.to_string();
            let again = parse_global(&printed).unwrap();
            assert!(alpha_eq(&g, &again), "{s} -> {printed}");
        }
        let locals = ["!<A, nat>; ?<B, bool>; end", "+<A, { l: end, r: &<B, { x: end }> }>", "mu t. !<A, chan(?<B, nat>; end)>; t"];
        for s in locals {
            let t = parse_local(s).unwrap();
            let again = parse_local(&t.to_string()).unwrap();
            assert!(alpha_eq(&t, &again), "{s}");
        }
    }

    #[test]
    fn processes_round_trip() {
        let src = "init a[W[2..0]](y). y!<W[1], 3 + n>; y?(W[1], z); (R 0 with (i : [0..2], X) { y <| A, ok; X }) @ 2";
        let p = parse_process(src).unwrap();
        assert_eq!(parse_process(&p.to_string()).unwrap(), p);
    }

    #[test]
    fn declarations_inline_references() {
        let f = parse("global G(n) = foreach i < n { A -> B : nat }\nchan a : G(3)\nproc P = accept a[B](y). 0").unwrap();
        assert_eq!(f.decls.len(), 3);
        let Decl::Chan(c) = &f.decls[1] else { panic!() };
        assert!(c.ty.free_index_vars().is_empty());
    }

    #[test]
    fn parse_errors_carry_positions() {
        let e = parse_global("A -> : nat").unwrap_err();
        assert_eq!(e.span.line, 1);
        assert!(e.span.col > 1);
    }
}
