//! Command-line front end. [`run`] takes the arguments and I/O handles so the
//! binary and the tests drive the same code.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::{self, Read, Write};
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value as J};
use thiserror::Error;

use crate::ast::*;
use crate::diag::Diagnostic;
use crate::equiv::{global_equiv, local_equiv, EqVerdict, EquivOutcome};
use crate::index::{member, IndexCtx};
use crate::kinding::{check_env, kind_global, kind_local};
use crate::normalize::{normal_form, NormError};
use crate::project::{global_normal_form, pid, project, project_ground, simplify_projection, ProjectError};
use crate::protocols::{example, ProtocolError, EXAMPLES};
use crate::simulate::{run as simulate_run, Config, RunOptions, RunVerdict, Scheduler, SimError, DEFAULT_FUEL};
use crate::surface::{
    instantiate, parse, parse_index, parse_participant, GlobalDecl, LocalDecl, Param, ParseError, SourceFile, ToJson,
    SCHEMA_VERSION,
};
use crate::typecheck::{check_process, CheckMode};

/// Process exit status.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Exit {
    Ok = 0,
    Failure = 1,
    Undecided = 2,
    Usage = 3,
}

impl Exit {
    fn of_diag(d: &Diagnostic) -> Exit {
        if d.is_undecided() {
            Exit::Undecided
        } else {
            Exit::Failure
        }
    }

    fn status(self) -> &'static str {
        match self {
            Exit::Ok => "ok",
            Exit::Failure => "failure",
            Exit::Undecided => "undecided",
            Exit::Usage => "usage",
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: String, source: io::Error },
    #[error("{file}:{err}")]
    Syntax { file: String, err: ParseError },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl CliError {
    fn exit(&self) -> Exit {
        match self {
            CliError::Syntax { .. } | CliError::Sim(_) => Exit::Failure,
            _ => Exit::Usage,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Parser, Debug)]
#[command(name = "mpst", version, about = "Parameterised multiparty session types")]
struct Cli {
    /// Machine-readable output (one JSON document on stdout).
    #[arg(long, global = true)]
    json: bool,
    /// key=value file with defaults for `fuel`, `seed` and `scheduler`.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Parse a source file and print it back.
    Parse { file: String },
    /// Kind every type declaration (or one).
    Kind {
        file: String,
        #[arg(long)]
        decl: Option<String>,
        #[arg(long, value_delimiter = ',')]
        at: Vec<String>,
    },
    /// Project a global declaration onto a participant (all participants when ground and no role is given).
    Project {
        file: String,
        #[arg(long)]
        decl: String,
        #[arg(long)]
        role: Option<String>,
        #[arg(long, value_delimiter = ',')]
        at: Vec<String>,
        /// Prune conditionals decided by the parameter constraints.
        #[arg(long)]
        simplify: bool,
    },
    /// Print normal forms of type declarations.
    Normalize {
        file: String,
        #[arg(long)]
        decl: Option<String>,
        #[arg(long, value_delimiter = ',')]
        at: Vec<String>,
    },
    /// Decide equivalence of two type declarations.
    Equiv {
        file: String,
        #[arg(long)]
        left: String,
        #[arg(long)]
        right: String,
        /// Inclusive range `a..b` for the single remaining parameter.
        #[arg(long)]
        domain: Option<String>,
        #[arg(long, value_delimiter = ',')]
        at: Vec<String>,
    },
    /// Typecheck process declarations against the shared names of the file.
    Typecheck {
        /// Source file, or `-` for stdin.
        file: String,
        #[arg(long)]
        decl: Option<String>,
        #[arg(long, value_delimiter = ',')]
        at: Vec<String>,
    },
    /// Run a process declaration.
    Simulate {
        file: String,
        /// Defaults to `Main`, or the only process of the file.
        #[arg(long)]
        decl: Option<String>,
        /// Parameter values, `k=v,...`.
        #[arg(long, value_delimiter = ',')]
        at: Vec<String>,
        /// Seed of the random scheduler (default 0).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        scheduler: Option<SchedulerArg>,
        /// Step budget (search depth for the exhaustive scheduler).
        #[arg(long)]
        fuel: Option<usize>,
        /// Write the trace as JSON lines.
        #[arg(long, value_name = "PATH")]
        trace: Option<PathBuf>,
        /// Typecheck every intermediate configuration.
        #[arg(long)]
        check_sr: bool,
        /// Check the trace against the projected local types.
        #[arg(long)]
        fidelity: bool,
    },
    /// Print the source of a built-in example (the list, without a name).
    Examples {
        name: Option<String>,
        /// Example parameters, `k=v,...`.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        params: Vec<String>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SchedulerArg {
    Random,
    Rr,
    Exhaustive,
}

/// Defaults read from a `--config` file.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Settings {
    pub fuel: Option<usize>,
    pub seed: Option<u64>,
    pub scheduler: Option<String>,
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_settings(text: &str) -> Result<Settings, CliError> {
    let mut s = Settings::default();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(usage(format!("config line {}: expected key = value", n + 1)));
        };
        let (k, v) = (k.trim(), v.trim().trim_matches('"'));
        let bad = || usage(format!("config line {}: bad value `{v}` for {k}", n + 1));
        match k {
            "fuel" => s.fuel = Some(v.parse().map_err(|_| bad())?),
            "seed" => s.seed = Some(v.parse().map_err(|_| bad())?),
            "scheduler" => {
                if !["random", "rr", "exhaustive"].contains(&v) {
                    return Err(bad());
                }
                s.scheduler = Some(v.to_string());
            }
            _ => return Err(usage(format!("config line {}: unknown key `{k}`", n + 1))),
        }
    }
    Ok(s)
}

/// What a subcommand produced: an exit status, text for stdout, and the same
/// content as JSON.
struct Outcome {
    exit: Exit,
    text: String,
    json: J,
}

impl Outcome {
    fn new(exit: Exit, text: String, json: J) -> Self {
        Outcome { exit, text, json }
    }
}

/// Runs the CLI; returns the process exit code.
pub fn run<I, T>(args: I, stdin: &mut dyn Read, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { Exit::Usage as i32 } else { 0 };
            let rendered = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(rendered.as_bytes()) } else { out.write_all(rendered.as_bytes()) };
            return code;
        }
    };
    let json_mode = cli.json;
    let result = settings(&cli).and_then(|s| dispatch(cli.cmd, &s, stdin));
    match result {
        Ok(o) => {
            let _ = if json_mode {
                let mut j = o.json;
                if let J::Object(m) = &mut j {
                    m.insert("v".into(), json!(SCHEMA_VERSION));
                    m.insert("status".into(), json!(o.exit.status()));
                }
                writeln!(out, "{}", serde_json::to_string_pretty(&j).expect("serialisable"))
            } else {
                out.write_all(o.text.as_bytes())
            };
            o.exit as i32
        }
        Err(e) => {
            let exit = e.exit();
            if json_mode && exit != Exit::Usage {
                let j = json!({"v": SCHEMA_VERSION, "status": exit.status(), "error": e.to_string()});
                let _ = writeln!(out, "{}", serde_json::to_string_pretty(&j).expect("serialisable"));
            } else {
                let _ = writeln!(err, "mpst: {e}");
            }
            exit as i32
        }
    }
}

fn settings(cli: &Cli) -> Result<Settings, CliError> {
    match &cli.config {
        None => Ok(Settings::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|source| CliError::Read { path: p.display().to_string(), source })?;
            parse_settings(&text)
        }
    }
}

fn dispatch(cmd: Cmd, s: &Settings, stdin: &mut dyn Read) -> Result<Outcome, CliError> {
    match cmd {
        Cmd::Parse { file } => cmd_parse(&load(&file, stdin)?),
        Cmd::Kind { file, decl, at } => cmd_kind(&load(&file, stdin)?, decl.as_deref(), &parse_at(&at)?),
        Cmd::Project { file, decl, role, at, simplify } => {
            cmd_project(&load(&file, stdin)?, &decl, role.as_deref(), &parse_at(&at)?, simplify)
        }
        Cmd::Normalize { file, decl, at } => cmd_normalize(&load(&file, stdin)?, decl.as_deref(), &parse_at(&at)?),
        Cmd::Equiv { file, left, right, domain, at } => {
            cmd_equiv(&load(&file, stdin)?, &left, &right, domain.as_deref(), &parse_at(&at)?)
        }
        Cmd::Typecheck { file, decl, at } => cmd_typecheck(&load(&file, stdin)?, decl.as_deref(), &parse_at(&at)?),
        Cmd::Simulate { file, decl, at, seed, scheduler, fuel, trace, check_sr, fidelity } => {
            let src = load(&file, stdin)?;
            let scheduler = match (scheduler, s.scheduler.as_deref()) {
                (Some(a), _) => a,
                (None, Some("rr")) => SchedulerArg::Rr,
                (None, Some("exhaustive")) => SchedulerArg::Exhaustive,
                _ => SchedulerArg::Random,
            };
            let opts = SimOpts {
                seed: seed.or(s.seed).unwrap_or(0),
                scheduler,
                fuel: fuel.or(s.fuel).unwrap_or(DEFAULT_FUEL),
                trace,
                check_sr,
                fidelity,
            };
            cmd_simulate(&src, decl.as_deref(), &parse_at(&at)?, &opts)
        }
        Cmd::Examples { name, params } => cmd_examples(name.as_deref(), &params),
    }
}

// ---------------------------------------------------------------------------
// Inputs

fn load(file: &str, stdin: &mut dyn Read) -> Result<SourceFile, CliError> {
    let text = if file == "-" {
        let mut s = String::new();
        stdin.read_to_string(&mut s).map_err(|source| CliError::Read { path: "<stdin>".into(), source })?;
        s
    } else {
        fs::read_to_string(file).map_err(|source| CliError::Read { path: file.into(), source })?
    };
    let name = if file == "-" { "<stdin>" } else { file };
    parse(&text).map_err(|err| CliError::Syntax { file: name.into(), err })
}

type At = BTreeMap<String, IndexExpr>;

fn parse_at(items: &[String]) -> Result<At, CliError> {
    let mut out = At::new();
    for it in items {
        let Some((k, v)) = it.split_once('=') else {
            return Err(usage(format!("expected name=value, found `{it}`")));
        };
        let e = parse_index(v.trim()).map_err(|e| usage(format!("bad index `{v}`: {}", e.message)))?;
        out.insert(k.trim().to_string(), e);
    }
    Ok(out)
}

fn apply_at<T: IndexTerm>(t: T, at: &At) -> T {
    at.iter().fold(t, |t, (k, e)| t.subst_ix(k, e))
}

/// Γ with every shared name of the file, at the given parameters.
fn shared_env(file: &SourceFile, at: &At) -> StdEnv {
    let mut g = StdEnv::new();
    for c in file.chans() {
        g.push(StdEntry::Sort(c.name.clone(), Payload::Shared(Box::new(apply_at(c.ty.clone(), at)))));
    }
    g
}

/// A declaration body with the parameters named in `at` substituted. The
/// remaining parameters are returned in order.
fn instantiate_decl<T: IndexTerm + Clone>(
    name: &str,
    params: &[Param],
    body: &T,
    at: &At,
) -> Result<(T, Vec<Param>), CliError> {
    let mut given = Vec::new();
    let mut args = Vec::new();
    let mut rest = Vec::new();
    for p in params {
        match at.get(&p.name) {
            Some(e) => {
                if member(&IndexCtx::default(), e, &p.sort).is_invalid() {
                    return Err(usage(format!("{}={} is outside the sort {} of `{name}`", p.name, e, p.sort)));
                }
                given.push(p.clone());
                args.push(e.clone());
            }
            None => rest.push(p.clone()),
        }
    }
    Ok((instantiate(body, &given, &args), rest))
}

fn require_ground(name: &str, rest: &[Param]) -> Result<(), CliError> {
    match rest.first() {
        None => Ok(()),
        Some(p) => Err(usage(format!("parameter `{}` of `{name}` needs a value (--at {}=...)", p.name, p.name))),
    }
}

fn fold_pi<A: Action>(body: Ty<A>, rest: &[Param]) -> Ty<A> {
    rest.iter().rev().fold(body, |t, p| pi(&p.name, p.sort.clone(), t))
}

fn with_params(g: &StdEnv, rest: &[Param]) -> StdEnv {
    let mut g = g.clone();
    for p in rest {
        g.push(StdEntry::Index(p.name.clone(), p.sort.clone()));
    }
    g
}

enum TypeDecl<'a> {
    Global(&'a GlobalDecl),
    Local(&'a LocalDecl),
}

impl TypeDecl<'_> {
    fn name(&self) -> &str {
        match self {
            TypeDecl::Global(d) => &d.name,
            TypeDecl::Local(d) => &d.name,
        }
    }
}

fn type_decls<'a>(file: &'a SourceFile, only: Option<&str>) -> Result<Vec<TypeDecl<'a>>, CliError> {
    let all: Vec<TypeDecl> = file
        .decls
        .iter()
        .filter_map(|d| match d {
            crate::surface::Decl::Global(g) => Some(TypeDecl::Global(g)),
            crate::surface::Decl::Local(l) => Some(TypeDecl::Local(l)),
            _ => None,
        })
        .filter(|d| only.is_none_or(|n| d.name() == n))
        .collect();
    if let (Some(n), true) = (only, all.is_empty()) {
        return Err(usage(format!("no type declaration named `{n}`")));
    }
    Ok(all)
}

fn diag_json(d: &Diagnostic) -> J {
    d.to_json()
}

// ---------------------------------------------------------------------------
// Subcommands

fn cmd_parse(file: &SourceFile) -> Result<Outcome, CliError> {
    Ok(Outcome::new(Exit::Ok, file.to_string(), json!({ "file": file.to_json() })))
}

fn cmd_kind(file: &SourceFile, only: Option<&str>, at: &At) -> Result<Outcome, CliError> {
    let gamma = shared_env(file, at);
    let mut exit = Exit::Ok;
    let mut text = String::new();
    let mut rows = Vec::new();
    for d in type_decls(file, only)? {
        let res = match d {
            TypeDecl::Global(g) => {
                let (body, rest) = instantiate_decl(&g.name, &g.params, &g.body, at)?;
                kind_global(&gamma, &fold_pi(body, &rest)).map_err(|e| e.at(g.span))
            }
            TypeDecl::Local(l) => {
                let (body, rest) = instantiate_decl(&l.name, &l.params, &l.body, at)?;
                kind_local(&gamma, &fold_pi(body, &rest)).map_err(|e| e.at(l.span))
            }
        };
        match res {
            Ok(k) => {
                text.push_str(&format!("{} : {}\n", d.name(), k));
                rows.push(json!({"decl": d.name(), "kind": k.to_json()}));
            }
            Err(e) => {
                exit = exit.max(Exit::of_diag(&e));
                text.push_str(&format!("{}: {}\n", d.name(), e));
                rows.push(json!({"decl": d.name(), "diagnostic": diag_json(&e)}));
            }
        }
    }
    if only.is_none() {
        for e in check_env(&gamma) {
            exit = exit.max(Exit::of_diag(&e));
            text.push_str(&format!("shared names: {e}\n"));
            rows.push(json!({"decl": null, "diagnostic": diag_json(&e)}));
        }
    }
    Ok(Outcome::new(exit, text, json!({ "kinds": rows })))
}

fn project_err_exit(e: &ProjectError) -> Exit {
    match e {
        ProjectError::MergeFailure { .. } => Exit::Failure,
        ProjectError::Norm(NormError::FuelExhausted(_)) => Exit::Undecided,
        ProjectError::Norm(_) => Exit::Failure,
    }
}

fn cmd_project(file: &SourceFile, decl: &str, role: Option<&str>, at: &At, simplify: bool) -> Result<Outcome, CliError> {
    let g = file.global(decl).ok_or_else(|| usage(format!("no global declaration named `{decl}`")))?;
    let (body, rest) = instantiate_decl(&g.name, &g.params, &g.body, at)?;
    let gamma = with_params(&shared_env(file, at), &rest);
    let ground = rest.is_empty() && body.free_index_vars().is_empty();
    let roles: Vec<Participant> = match role {
        Some(r) => vec![apply_at(parse_participant(r).map_err(|e| usage(format!("bad role `{r}`: {}", e.message)))?, at)],
        None if ground => match global_normal_form(&body) {
            Ok(nf) => pid(&nf).into_iter().collect(),
            Err(e) => return Ok(failed_projection(&ProjectError::Norm(e))),
        },
        None => return Err(usage("--role is required when parameters are left symbolic")),
    };
    let ctx = IndexCtx::from_env(&gamma);
    let mut text = String::new();
    let mut rows = Vec::new();
    for r in roles {
        let res = if ground { project_ground(&body, &r) } else { project(&body, &r) };
        match res {
            Ok(t) => {
                let t = if simplify { simplify_projection(&t, &ctx) } else { t };
                text.push_str(&format!("{r} : {t}\n"));
                rows.push(json!({"role": r.to_string(), "type": t.to_json(), "text": t.to_string()}));
            }
            Err(e) => return Ok(failed_projection(&e)),
        }
    }
    Ok(Outcome::new(Exit::Ok, text, json!({ "projections": rows })))
}

fn failed_projection(e: &ProjectError) -> Outcome {
    let kind = match e {
        ProjectError::MergeFailure { .. } => "merge-failure",
        ProjectError::Norm(_) => "normalisation",
    };
    Outcome::new(project_err_exit(e), format!("error: {e}\n"), json!({"error": {"kind": kind, "message": e.to_string()}}))
}

fn cmd_normalize(file: &SourceFile, only: Option<&str>, at: &At) -> Result<Outcome, CliError> {
    let mut exit = Exit::Ok;
    let mut text = String::new();
    let mut rows = Vec::new();
    for d in type_decls(file, only)? {
        let res = match d {
            TypeDecl::Global(g) => {
                let (body, _) = instantiate_decl(&g.name, &g.params, &g.body, at)?;
                normal_form(&body).map(|t| (t.to_string(), t.to_json()))
            }
            TypeDecl::Local(l) => {
                let (body, _) = instantiate_decl(&l.name, &l.params, &l.body, at)?;
                normal_form(&body).map(|t| (t.to_string(), t.to_json()))
            }
        };
        match res {
            Ok((s, j)) => {
                text.push_str(&format!("{} = {}\n", d.name(), s));
                rows.push(json!({"decl": d.name(), "normal_form": j, "text": s}));
            }
            Err(e) => {
                exit = exit.max(match e {
                    NormError::FuelExhausted(_) => Exit::Undecided,
                    _ => Exit::Failure,
                });
                text.push_str(&format!("{}: error: {e}\n", d.name()));
                rows.push(json!({"decl": d.name(), "error": e.to_string()}));
            }
        }
    }
    Ok(Outcome::new(exit, text, json!({ "normal_forms": rows })))
}

/// Inclusive `a..b`.
fn parse_domain(s: &str) -> Result<(u64, u64), CliError> {
    let bad = || usage(format!("expected a domain a..b, found `{s}`"));
    let (a, b) = s.split_once("..").ok_or_else(bad)?;
    let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
    if a > b {
        return Err(bad());
    }
    Ok((a, b))
}

/// Both sides as types over the same free parameters. With a domain, the
/// single remaining parameter `n` becomes the index of a recursor over
/// `[0..b-a]` whose body is the declaration at `n + a`, so the staged rules
/// may close the comparison by enumerating the domain.
fn equiv_sides<A: Action>(
    left: (&str, &[Param], &Ty<A>),
    right: (&str, &[Param], &Ty<A>),
    domain: Option<(u64, u64)>,
    at: &At,
) -> Result<(Ty<A>, Ty<A>, Vec<Param>), CliError> {
    let (lb, lrest) = instantiate_decl(left.0, left.1, left.2, at)?;
    let (rb, rrest) = instantiate_decl(right.0, right.1, right.2, at)?;
    if lrest.len() != rrest.len() {
        return Err(usage(format!(
            "`{}` and `{}` leave {} and {} parameters open",
            left.0,
            right.0,
            lrest.len(),
            rrest.len()
        )));
    }
    let vars: Vec<IndexExpr> = lrest.iter().map(|p| IndexExpr::var(&p.name)).collect();
    let rb = instantiate(&rb, &rrest, &vars);
    let Some((a, b)) = domain else {
        return Ok((lb, rb, lrest));
    };
    let [p] = lrest.as_slice() else {
        return Err(usage(format!("--domain needs exactly one open parameter, found {}", lrest.len())));
    };
    let j = fresh_name("j", &lb.free_index_vars().union(&rb.free_index_vars()).cloned().collect());
    let shift = IndexExpr::add(IndexExpr::var(&j), IndexExpr::Lit(a));
    let wrap = |t: &Ty<A>| {
        let body = t.subst_ix(&p.name, &shift);
        let x = fresh_name("x", &body.free_tvars());
        Ty::rec(Ty::End, &j, IndexSort::range(IndexExpr::Lit(b - a)), &x, body)
    };
    Ok((wrap(&lb), wrap(&rb), Vec::new()))
}

fn cmd_equiv(file: &SourceFile, left: &str, right: &str, domain: Option<&str>, at: &At) -> Result<Outcome, CliError> {
    let domain = domain.map(parse_domain).transpose()?;
    let gamma = shared_env(file, at);
    let find = |n: &str| file.global(n).map(TypeDecl::Global).or_else(|| file.local(n).map(TypeDecl::Local));
    let l = find(left).ok_or_else(|| usage(format!("no type declaration named `{left}`")))?;
    let r = find(right).ok_or_else(|| usage(format!("no type declaration named `{right}`")))?;
    let out: EquivOutcome = match (l, r) {
        (TypeDecl::Global(a), TypeDecl::Global(b)) => {
            let (x, y, rest) =
                equiv_sides((&a.name, &a.params, &a.body), (&b.name, &b.params, &b.body), domain, at)?;
            global_equiv(&with_params(&gamma, &rest), &x, &y)
        }
        (TypeDecl::Local(a), TypeDecl::Local(b)) => {
            let (x, y, rest) =
                equiv_sides((&a.name, &a.params, &a.body), (&b.name, &b.params, &b.body), domain, at)?;
            local_equiv(&with_params(&gamma, &rest), &x, &y)
        }
        _ => return Err(usage(format!("`{left}` and `{right}` are not both global or both local"))),
    };
    let exit = match out.verdict {
        EqVerdict::Equal => Exit::Ok,
        EqVerdict::NotEqual => Exit::Failure,
        EqVerdict::Undecided => Exit::Undecided,
    };
    let mut text = format!("{}\n", out.verdict);
    if let Some(why) = &out.reason {
        text.push_str(&format!("reason: {why}\n"));
    }
    text.push_str(&out.render_trace());
    if !text.ends_with('\n') {
        text.push('\n');
    }
    Ok(Outcome::new(exit, text, json!({ "equiv": out.to_json() })))
}

fn cmd_typecheck(file: &SourceFile, only: Option<&str>, at: &At) -> Result<Outcome, CliError> {
    let gamma = shared_env(file, at);
    let mut exit = Exit::Ok;
    let mut text = String::new();
    let mut rows = Vec::new();
    for e in check_env(&gamma) {
        exit = exit.max(Exit::of_diag(&e));
        text.push_str(&format!("shared names: {e}\n"));
        rows.push(json!({"decl": null, "diagnostic": diag_json(&e)}));
    }
    let procs: Vec<_> = file
        .decls
        .iter()
        .filter_map(|d| match d {
            crate::surface::Decl::Proc(p) if only.is_none_or(|n| p.name == n) => Some(p),
            _ => None,
        })
        .collect();
    if procs.is_empty() {
        return Err(usage(match only {
            Some(n) => format!("no process declaration named `{n}`"),
            None => "the file declares no processes".into(),
        }));
    }
    for p in procs {
        let (body, rest) = instantiate_decl(&p.name, &p.params, &p.body, at)?;
        require_ground(&p.name, &rest)?;
        match check_process(&gamma, &body, &CheckMode::Initial) {
            Ok(t) => {
                text.push_str(&format!("{} : {}\n", p.name, t));
                rows.push(json!({"decl": p.name, "type": t.to_json(), "text": t.to_string()}));
            }
            Err(e) => {
                let e = e.at(p.span);
                exit = exit.max(Exit::of_diag(&e));
                text.push_str(&format!("{}: {}\n", p.name, e));
                rows.push(json!({"decl": p.name, "diagnostic": diag_json(&e)}));
            }
        }
    }
    Ok(Outcome::new(exit, text, json!({ "results": rows })))
}

struct SimOpts {
    seed: u64,
    scheduler: SchedulerArg,
    fuel: usize,
    trace: Option<PathBuf>,
    check_sr: bool,
    fidelity: bool,
}

fn cmd_simulate(file: &SourceFile, decl: Option<&str>, at: &At, o: &SimOpts) -> Result<Outcome, CliError> {
    let procs: Vec<_> = file
        .decls
        .iter()
        .filter_map(|d| match d {
            crate::surface::Decl::Proc(p) => Some(p),
            _ => None,
        })
        .collect();
    let chosen = match decl {
        Some(n) => procs.iter().find(|p| p.name == n),
        None => procs.iter().find(|p| p.name == "Main").or(if procs.len() == 1 { procs.first() } else { None }),
    };
    let p = chosen.ok_or_else(|| {
        usage(match decl {
            Some(n) => format!("no process declaration named `{n}`"),
            None => "no `Main` process; pick one with --decl".into(),
        })
    })?;
    let (body, rest) = instantiate_decl(&p.name, &p.params, &p.body, at)?;
    require_ground(&p.name, &rest)?;
    let gamma = shared_env(file, at);
    let config = Config::new(&gamma, &body)?;
    let sched = match o.scheduler {
        SchedulerArg::Random => Scheduler::Random(o.seed),
        SchedulerArg::Rr => Scheduler::RoundRobin,
        SchedulerArg::Exhaustive => Scheduler::Exhaustive(o.fuel),
    };
    let opts = RunOptions { fuel: o.fuel, check_sr: o.check_sr, fidelity: o.fidelity };
    let report = simulate_run(&config, sched, &opts)?;
    if let Some(path) = &o.trace {
        fs::write(path, report.trace_jsonl())
            .map_err(|source| CliError::Write { path: path.display().to_string(), source })?;
    }
    let violations = !report.sr_violations.is_empty() || !report.fidelity_violations.is_empty();
    let exit = match &report.verdict {
        RunVerdict::Stuck(_) => Exit::Failure,
        _ if violations => Exit::Failure,
        RunVerdict::FuelOut => Exit::Undecided,
        RunVerdict::Done => Exit::Ok,
    };
    let mut text = format!("verdict: {}\nsteps: {}\n", report.verdict.as_str(), report.trace.len());
    if o.scheduler == SchedulerArg::Exhaustive {
        text.push_str(&format!("states: {}\n", report.states));
    }
    for (c, v) in report.outputs() {
        text.push_str(&format!("output {c} = {v}\n"));
    }
    for v in &report.sr_violations {
        text.push_str(&format!("subject reduction violated: {v}\n"));
    }
    for v in &report.fidelity_violations {
        text.push_str(&format!("fidelity violated: {v}\n"));
    }
    if let RunVerdict::Stuck(why) = &report.verdict {
        text.push_str(&format!("stuck: {why}\n"));
    }
    Ok(Outcome::new(exit, text, json!({ "run": report.to_json() })))
}

fn cmd_examples(name: Option<&str>, params: &[String]) -> Result<Outcome, CliError> {
    let Some(name) = name else {
        let text: String = EXAMPLES.iter().map(|e| format!("{e}\n")).collect();
        return Ok(Outcome::new(Exit::Ok, text, json!({ "examples": EXAMPLES })));
    };
    let mut kv = BTreeMap::new();
    for it in params {
        let (k, v) = it.split_once('=').ok_or_else(|| usage(format!("expected key=value, found `{it}`")))?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    let p = example(name, &kv).map_err(|e| match e {
        ProtocolError::Source(_) => CliError::Protocol(e),
        other => usage(other.to_string()),
    })?;
    let params: BTreeMap<&str, &str> = p.params.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
    Ok(Outcome::new(Exit::Ok, p.source.clone(), json!({"name": p.name, "params": params, "source": p.source})))
}
