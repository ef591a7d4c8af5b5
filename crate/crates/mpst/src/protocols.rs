//! Generators for the worked examples: a parameterised global type together
//! with one process per role, emitted as source text and parsed back.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use thiserror::Error;

use crate::ast::*;
use crate::surface::{parse, ParseError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("parameter {name} = {value} is out of range ({expected})")]
    ParameterOutOfRange { name: String, value: String, expected: String },
    #[error("unknown example `{0}`")]
    Unknown(String),
    #[error("generated source does not parse: {0}")]
    Source(#[from] ParseError),
}

fn out_of_range(name: &str, value: impl ToString, expected: &str) -> ProtocolError {
    ProtocolError::ParameterOutOfRange { name: name.into(), value: value.to_string(), expected: expected.into() }
}

/// One instantiated example.
#[derive(Clone, Debug)]
pub struct Protocol {
    pub name: String,
    pub params: Vec<(String, String)>,
    /// The parameterised type (`pi`-abstracted over the declaration's parameters).
    pub global: GlobalType,
    /// The type bound to the shared name, at the chosen parameters.
    pub instance: GlobalType,
    pub shared: String,
    pub roles: Vec<(Participant, Process)>,
    /// A self-contained source file: declarations, shared name, one `proc`
    /// per role and `proc Main` composing them.
    pub source: String,
}

impl Protocol {
    /// Γ binding the shared name.
    pub fn env(&self) -> StdEnv {
        StdEnv::new().with(StdEntry::Sort(self.shared.clone(), Payload::Shared(Box::new(self.instance.clone()))))
    }

    pub fn program(&self) -> Process {
        Process::par_all(self.roles.iter().map(|(_, p)| p.clone()))
    }

    /// The program with the shared name restricted, typable under an empty Γ.
    pub fn closed_program(&self) -> Process {
        Process::NewName { name: self.shared.clone(), ty: self.instance.clone(), body: Box::new(self.program()) }
    }

    pub fn role(&self, p: &Participant) -> Option<&Process> {
        self.roles.iter().find(|(q, _)| q == p).map(|(_, proc)| proc)
    }

    /// Rebuilds `source` from the current role processes (used after mutation).
    fn reprint(&mut self) {
        let mut src = String::new();
        let _ = writeln!(src, "// {} (mutated)", self.name);
        let _ = writeln!(src, "chan {} : {}", self.shared, self.instance);
        push_roles(&mut src, self.roles.iter().map(|(r, p)| (r.clone(), p.to_string())));
        self.source = src;
    }
}

fn proc_name(p: &Participant) -> String {
    let mut s = p.name.clone();
    for i in &p.indices {
        let _ = write!(s, "_{i}");
    }
    s
}

fn push_roles(src: &mut String, roles: impl Iterator<Item = (Participant, String)>) {
    let mut names = Vec::new();
    for (r, body) in roles {
        let n = proc_name(&r);
        let _ = writeln!(src, "proc {n} = {body}");
        names.push(format!("{n}()"));
    }
    let main = if names.is_empty() { "0".to_string() } else { names.join(" | ") };
    let _ = writeln!(src, "proc Main = {main}");
}

/// Assembles the source text and parses it back into a [`Protocol`].
fn build(
    name: &str,
    params: Vec<(String, String)>,
    decl: &str,
    global_name: &str,
    args: &str,
    roles: Vec<(Participant, String)>,
) -> Result<Protocol, ProtocolError> {
    let mut src = String::new();
    let shown: Vec<String> = params.iter().map(|(k, v)| format!("{k} = {v}")).collect();
    let _ = writeln!(src, "// {name} {}", shown.join(", "));
    let _ = writeln!(src, "{decl}");
    let _ = writeln!(src, "chan a : {global_name}{args}");
    let order: Vec<Participant> = roles.iter().map(|(r, _)| r.clone()).collect();
    push_roles(&mut src, roles.into_iter());
    let file = parse(&src)?;
    let g = file.global(global_name).expect("generated declaration");
    let global = g.params.iter().rev().fold(g.body.clone(), |t, p| pi(&p.name, p.sort.clone(), t));
    let instance = file.chans().next().expect("generated shared name").ty.clone();
    let roles = order
        .into_iter()
        .map(|r| {
            let body = file.proc(&proc_name(&r)).expect("generated role").body.clone();
            (r, body)
        })
        .collect();
    Ok(Protocol { name: name.into(), params, global, instance, shared: "a".into(), roles, source: src })
}

fn w(k: u64) -> Participant {
    Participant::at("W", k)
}

fn w2(a: u64, b: u64) -> Participant {
    Participant::indexed("W", vec![IndexExpr::Lit(a), IndexExpr::Lit(b)])
}

fn role_list(rs: &[Participant]) -> String {
    rs.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(", ")
}

/// Initiator first, then everybody else.
fn init(first: &Participant, all: &[Participant], body: &str) -> String {
    let mut rs = vec![first.clone()];
    rs.extend(all.iter().filter(|r| *r != first).cloned());
    format!("init a[{}](y). {body}", role_list(&rs))
}

fn accept(r: &Participant, body: &str) -> String {
    format!("accept a[{r}](y). {body}")
}

/// `W[n] -> W[n-1] -> ... -> W[0]`, each worker forwarding its input plus one.
pub fn sequence(n: u64) -> Result<Protocol, ProtocolError> {
    let decl = "global Sequence(n : nat) = foreach i < n { W[i + 1] -> W[i] : nat }";
    let mut roles = Vec::new();
    if n > 0 {
        let all: Vec<Participant> = (0..=n).rev().map(w).collect();
        for k in (0..=n).rev() {
            let body = if k == n {
                init(&w(n), &all, &format!("y!<W[{}], 1>; 0", n - 1))
            } else if k == 0 {
                accept(&w(0), "y?(W[1], x); emit out<x>; 0")
            } else {
                accept(&w(k), &format!("y?(W[{}], x); y!<W[{}], x + 1>; 0", k + 1, k - 1))
            };
            roles.push((w(k), body));
        }
    }
    build("sequence", vec![("n".into(), n.to_string())], decl, "Sequence", &format!("({n})"), roles)
}

/// Alice sends `n` numbers to Bob, who relays each one to Carol.
pub fn repetition(n: u64) -> Result<Protocol, ProtocolError> {
    let decl = "global Repetition(n : nat) = foreach i < n { Alice -> Bob : nat. Bob -> Carol : nat }";
    let mut roles = Vec::new();
    if n > 0 {
        let all: Vec<Participant> = ["Alice", "Bob", "Carol"].iter().map(|s| Participant::named(s)).collect();
        roles.push((all[0].clone(), init(&all[0], &all, &format!("foreach i < {n} {{ y!<Bob, i + 1>; 0 }}; 0"))));
        roles.push((all[1].clone(), accept(&all[1], &format!("foreach i < {n} {{ y?(Alice, x); y!<Carol, x * 2>; 0 }}; 0"))));
        roles.push((all[2].clone(), accept(&all[2], &format!("foreach i < {n} {{ y?(Bob, x); emit carol<x>; 0 }}; 0"))));
    }
    build("repetition", vec![("n".into(), n.to_string())], decl, "Repetition", &format!("({n})"), roles)
}

/// Alice sends one message to each of `W[0..n-1]`.
pub fn multicast(n: u64) -> Result<Protocol, ProtocolError> {
    let decl = "global Multicast(n : nat) = foreach i < n { Alice -> W[n - 1 - i] : nat }";
    let mut roles = Vec::new();
    if n > 0 {
        let alice = Participant::named("Alice");
        let mut all = vec![alice.clone()];
        all.extend((0..n).map(w));
        roles.push((alice.clone(), init(&alice, &all, &format!("foreach i < {n} {{ y!<W[{n} - 1 - i], 10 + i>; 0 }}; 0"))));
        for k in 0..n {
            roles.push((w(k), accept(&w(k), &format!("y?(Alice, x); emit w{k}<x>; 0"))));
        }
    }
    build("multicast", vec![("n".into(), n.to_string())], decl, "Multicast", &format!("({n})"), roles)
}

/// A token travels `W[0] -> W[1] -> ... -> W[n] -> W[0]`.
pub fn ring(n: u64) -> Result<Protocol, ProtocolError> {
    if n < 2 {
        return Err(out_of_range("n", n, "n >= 2"));
    }
    let decl = "global Ring(n : nat) = foreach i < n { W[n - i - 1] -> W[n - i] : nat }; W[n] -> W[0] : nat";
    let all: Vec<Participant> = (0..=n).map(w).collect();
    let mut roles = vec![(w(0), init(&w(0), &all, &format!("y!<W[1], 1>; y?(W[{n}], x); emit out<x>; 0")))];
    for k in 1..=n {
        let next = if k == n { 0 } else { k + 1 };
        roles.push((w(k), accept(&w(k), &format!("y?(W[{}], x); y!<W[{next}], x + 1>; 0", k - 1))));
    }
    build("ring", vec![("n".into(), n.to_string())], decl, "Ring", &format!("({n})"), roles)
}

/// Workers `W[i][j]` on an `(n+1) x (m+1)` grid; every worker receives from
/// its lower and right neighbours and sends up and left, converging on `W[0][0]`.
pub fn mesh(n: u64, m: u64) -> Result<Protocol, ProtocolError> {
    if n < 2 {
        return Err(out_of_range("n", n, "n >= 2"));
    }
    if m < 2 {
        return Err(out_of_range("m", m, "m >= 2"));
    }
    let decl = "global Mesh(n : nat, m : nat) = foreach i < n { foreach j < m { W[i + 1][j + 1] -> W[i][j + 1] : nat. W[i + 1][j + 1] -> W[i + 1][j] : nat }; W[i + 1][0] -> W[i][0] : nat }; foreach k < m { W[0][k + 1] -> W[0][k] : nat }";
    let mut all = Vec::new();
    for a in (0..=n).rev() {
        for b in (0..=m).rev() {
            all.push(w2(a, b));
        }
    }
    let mut roles = Vec::new();
    for a in (0..=n).rev() {
        for b in (0..=m).rev() {
            // receive from below, then from the right; forward the sum up, then left
            let mut body = String::new();
            let mut terms = vec!["1".to_string()];
            if a < n {
                let _ = write!(body, "y?(W[{}][{b}], d); ", a + 1);
                terms.push("d".into());
            }
            if b < m {
                let _ = write!(body, "y?(W[{a}][{}], r); ", b + 1);
                terms.push("r".into());
            }
            let v = terms.join(" + ");
            if a > 0 && b > 0 {
                let _ = write!(body, "y!<W[{}][{b}], {v}>; y!<W[{a}][{}], {v}>; 0", a - 1, b - 1);
            } else if a > 0 {
                let _ = write!(body, "y!<W[{}][0], {v}>; 0", a - 1);
            } else if b > 0 {
                let _ = write!(body, "y!<W[0][{}], {v}>; 0", b - 1);
            } else {
                let _ = write!(body, "emit out<{v}>; 0");
            }
            let me = w2(a, b);
            let text = if a == n && b == m { init(&me, &all, &body) } else { accept(&me, &body) };
            roles.push((me, text));
        }
    }
    let params = vec![("n".into(), n.to_string()), ("m".into(), m.to_string())];
    build("mesh", params, decl, "Mesh", &format!("({n}, {m})"), roles)
}

/// Reverses the low `bits` bits of `k`.
pub fn bit_reverse(k: usize, bits: u32) -> usize {
    if bits == 0 {
        0
    } else {
        k.reverse_bits() >> (usize::BITS - bits)
    }
}

/// `omega_N^k = e^{2 pi i k / N}`.
pub fn twiddle(k: usize, big_n: usize) -> Complex64 {
    Complex64::from_polar(1.0, 2.0 * PI * k as f64 / big_n as f64)
}

/// Brute-force DFT `X_k = sum_j x_j omega_N^{jk}`.
pub fn dft(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n).map(|k| x.iter().enumerate().map(|(j, xj)| xj * twiddle((j * k) % n, n)).sum()).collect()
}

fn lit(z: Complex64) -> String {
    format!("c({:?}, {:?})", z.re, z.im)
}

/// Default FFT input: `x_k = k + 1`.
pub fn fft_default_input(n: u32) -> Vec<Complex64> {
    (0..1usize << n).map(|k| Complex64::new(k as f64 + 1.0, 0.0)).collect()
}

/// Radix-2 FFT on `2^n` machines over a butterfly network. Machine `p`
/// starts with `x[rev(p)]` and emits `X_p` on `r{p}`.
pub fn fft(n: u32, x: &[Complex64]) -> Result<Protocol, ProtocolError> {
    if n > 16 {
        return Err(out_of_range("n", n, "n <= 16"));
    }
    let big_n = 1usize << n;
    if x.len() != big_n {
        return Err(out_of_range("inputs", x.len(), &format!("exactly {big_n} values")));
    }
    let decl = "global Fft(n : nat) = foreach i < 2^n { W[i] -> W[i] : complex }; foreach l < n { foreach i < 2^l { foreach j < 2^(n - l - 1) { W[i * 2^(n - l) + j] -> W[i * 2^(n - l) + 2^(n - l - 1) + j] : complex. W[i * 2^(n - l) + 2^(n - l - 1) + j] -> W[i * 2^(n - l) + j] : complex. W[i * 2^(n - l) + j] -> W[i * 2^(n - l) + j] : complex. W[i * 2^(n - l) + 2^(n - l - 1) + j] -> W[i * 2^(n - l) + 2^(n - l - 1) + j] : complex } } }";
    let all: Vec<Participant> = (0..big_n as u64).map(w).collect();
    let mut roles = Vec::new();
    for p in 0..big_n {
        let mut body = format!("y!<W[{p}], {}>; ", lit(x[bit_reverse(p, n)]));
        // stages run l = n-1 down to 0, matching the recursor's unfolding order
        for l in (0..n).rev() {
            let half = 1usize << (n - l - 1);
            let g = (p % (1usize << (n - l))) << l;
            let wg = lit(twiddle(g, big_n));
            if p & half == 0 {
                let q = p + half;
                let _ = write!(body, "y?(W[{p}], x); y!<W[{q}], x>; y?(W[{q}], z); y!<W[{p}], x + z * {wg}>; ");
            } else {
                let q = p - half;
                let _ = write!(body, "y?(W[{p}], x); y?(W[{q}], z); y!<W[{q}], x>; y!<W[{p}], z + x * {wg}>; ");
            }
        }
        let _ = write!(body, "y?(W[{p}], x); emit r{p}<x>; 0");
        let me = w(p as u64);
        let text = if p == 0 { init(&me, &all, &body) } else { accept(&me, &body) };
        roles.push((me, text));
    }
    let inputs: Vec<String> = x.iter().map(|z| format!("{z}")).collect();
    let params = vec![("n".into(), n.to_string()), ("inputs".into(), inputs.join(" "))];
    build("fft", params, decl, "Fft", &format!("({n})"), roles)
}

fn supp(i: usize) -> Participant {
    Participant::at("Supp", i as u64)
}

fn manu(i: usize, j: usize) -> Participant {
    Participant::indexed("Manu", vec![IndexExpr::Lit(i as u64), IndexExpr::Lit(j as u64)])
}

/// Quote request with suppliers `Supp[0..=k]`, supplier `s` talking to
/// `Manu[s][0..js[s]]`. The buyer consults suppliers from `k` down to `0`;
/// each answers `retryStep3`, so the whole round restarts once, after which
/// the buyer accepts the quote of `Supp[k]`.
pub fn quote_request(k: usize, js: &[usize]) -> Result<Protocol, ProtocolError> {
    if js.len() != k + 1 {
        return Err(out_of_range("J", js.len(), &format!("one manufacturer count per supplier ({})", k + 1)));
    }
    if k > 16 || js.iter().any(|&j| j > 16) {
        return Err(out_of_range("i", k, "at most 16 suppliers and 16 manufacturers each"));
    }
    let sups: Vec<usize> = (0..=k).collect();
    let manus = |s: usize, label: &str| format!("foreach j < {} {{ Supp[{s}] -> Manu[{s}][j] {{ {label}: end }} }}", js[s]);
    let g2: Vec<String> = sups
        .iter()
        .rev()
        .map(|&s| {
            format!("foreach j < {} {{ Supp[{s}] -> Manu[{s}][j] : nat. Manu[{s}][j] -> Supp[{s}] : nat }}; Supp[{s}] -> Buyer : nat", js[s])
        })
        .collect();
    let close: Vec<String> = sups
        .iter()
        .map(|&s| format!("(if Supp[i] == Supp[{s}] then end else Buyer -> Supp[{s}] {{ close: end }}); {}", manus(s, "close")))
        .collect();
    let retry: Vec<String> =
        sups.iter().map(|&s| format!("Buyer -> Supp[{s}] {{ retryStep3: end }}; {}", manus(s, "retryStep3"))).collect();
    let close = close.join("; ");
    let decl = format!(
        "global QuoteRequest = foreach i < {n} {{ Buyer -> Supp[i] : nat }}; mu t. {g2}; \
         (R ({retry}; t) with (i : nat, y) {{ Buyer -> Supp[i] {{ ok: {close}, modify: Buyer -> Supp[i] : nat. \
         Supp[i] -> Buyer {{ ok: {close}, retryStep3: y, reject: {close} }} }} }}) @ {n}",
        n = k + 1,
        g2 = g2.join("; "),
        retry = retry.join("; "),
    );

    let buyer = Participant::named("Buyer");
    let mut all = vec![buyer.clone()];
    all.extend(sups.iter().map(|&s| supp(s)));
    for &s in &sups {
        all.extend((0..js[s]).map(|j| manu(s, j)));
    }

    // Buyer: straight-line, two rounds.
    let close_b = |i: usize| -> String {
        let mut t: String = sups.iter().filter(|&&s| s != i).map(|s| format!("y <| Supp[{s}], close; ")).collect();
        t.push('0');
        t
    };
    let gather: String = sups.iter().rev().map(|s| format!("y?(Supp[{s}], q{s}); ")).collect();
    let mut tail = format!("{gather}y <| Supp[{k}], ok; {}", close_b(k));
    let retry_b: String = sups.iter().map(|s| format!("y <| Supp[{s}], retryStep3; ")).collect();
    tail = format!("{retry_b}{tail}");
    for &i in &sups {
        tail = format!(
            "y <| Supp[{i}], modify; y!<Supp[{i}], 90>; y |> Supp[{i}] {{ ok: {c}, reject: {c}, retryStep3: {tail} }}",
            c = close_b(i)
        );
    }
    let opening: String = sups.iter().rev().map(|s| format!("y!<Supp[{s}], 100>; ")).collect();
    let mut roles = vec![(buyer.clone(), init(&buyer, &all, &format!("{opening}{gather}{tail}")))];

    for &s in &sups {
        let desc: Vec<usize> = (0..js[s]).rev().collect();
        let ask: String = desc.iter().map(|j| format!("y!<Manu[{s}][{j}], q>; y?(Manu[{s}][{j}], m{j}); ")).collect();
        let tell = |l: &str| -> String { desc.iter().map(|j| format!("y <| Manu[{s}][{j}], {l}; ")).collect() };
        let closed = format!("{}0", tell("close"));
        let again = format!("{}X", tell("retryStep3"));
        let body = format!(
            "y?(Buyer, q); mu X. {ask}y!<Buyer, q + {s}>; y |> Buyer {{ ok: {closed}, close: {closed}, \
             modify: y?(Buyer, q2); y <| Buyer, retryStep3; y |> Buyer {{ close: {closed}, retryStep3: {again} }}, \
             retryStep3: {again} }}"
        );
        roles.push((supp(s), accept(&supp(s), &body)));
    }
    for &s in &sups {
        for j in 0..js[s] {
            let body = format!("mu X. y?(Supp[{s}], it); y!<Supp[{s}], it + {j}>; y |> Supp[{s}] {{ close: 0, retryStep3: X }}");
            roles.push((manu(s, j), accept(&manu(s, j), &body)));
        }
    }
    let shown: Vec<String> = js.iter().map(|j| j.to_string()).collect();
    let params = vec![("i".into(), k.to_string()), ("J".into(), shown.join(":"))];
    build("quote_request", params, &decl, "QuoteRequest", "()", roles)
}

/// Names accepted by [`example`].
pub const EXAMPLES: &[&str] = &["sequence", "repetition", "multicast", "ring", "mesh", "fft", "quote_request"];

fn nat_param(params: &BTreeMap<String, String>, key: &str, default: u64) -> Result<u64, ProtocolError> {
    match params.get(key) {
        None => Ok(default),
        Some(v) => v.trim().parse().map_err(|_| out_of_range(key, v, "a natural number")),
    }
}

fn complex_list(s: &str) -> Result<Vec<Complex64>, ProtocolError> {
    s.split([',', ' '])
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<Complex64>().map_err(|_| out_of_range("inputs", t, "complex numbers such as 1+2i")))
        .collect()
}

/// Builds an example by name from `key=value` parameters. Missing keys take
/// small defaults; unknown keys are rejected.
pub fn example(name: &str, params: &BTreeMap<String, String>) -> Result<Protocol, ProtocolError> {
    let allowed: &[&str] = match name {
        "sequence" | "repetition" | "multicast" | "ring" => &["n"],
        "mesh" => &["n", "m"],
        "fft" => &["n", "inputs"],
        "quote_request" => &["i", "J"],
        _ => return Err(ProtocolError::Unknown(name.into())),
    };
    if let Some(k) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(out_of_range(k, &params[k], &format!("one of {}", allowed.join(", "))));
    }
    match name {
        "sequence" => sequence(nat_param(params, "n", 3)?),
        "repetition" => repetition(nat_param(params, "n", 3)?),
        "multicast" => multicast(nat_param(params, "n", 3)?),
        "ring" => ring(nat_param(params, "n", 3)?),
        "mesh" => mesh(nat_param(params, "n", 2)?, nat_param(params, "m", 2)?),
        "fft" => {
            let n = nat_param(params, "n", 2)?;
            let n = u32::try_from(n).map_err(|_| out_of_range("n", n, "n <= 16"))?;
            if n > 16 {
                return Err(out_of_range("n", n, "n <= 16"));
            }
            let x = match params.get("inputs") {
                Some(s) => complex_list(s)?,
                None => fft_default_input(n),
            };
            fft(n, &x)
        }
        _ => {
            let k = nat_param(params, "i", 1)? as usize;
            let js = match params.get("J") {
                Some(s) => s
                    .split(':')
                    .map(|t| t.trim().parse::<usize>().map_err(|_| out_of_range("J", s, "counts separated by `:`")))
                    .collect::<Result<Vec<_>, _>>()?,
                None => vec![1; k + 1],
            };
            quote_request(k, &js)
        }
    }
}

/// Fault injections used to exercise the progress checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mutation {
    /// The first input names a different sender.
    SwapSender,
    /// The last accepting role is replaced by `0`.
    DropAccept,
    /// The first selection sends a label nobody offers.
    WrongLabel,
}

impl Mutation {
    pub const ALL: [Mutation; 3] = [Mutation::SwapSender, Mutation::DropAccept, Mutation::WrongLabel];
}

fn first_recv(p: &Process, f: &mut dyn FnMut(&Participant) -> Participant) -> Option<Process> {
    let mut done = false;
    let out = p.map_proc(&mut |q| match q {
        Process::Recv { chan, from, binder, sort, cont } if !done => {
            done = true;
            Some(Process::Recv {
                chan: chan.clone(),
                from: f(from),
                binder: binder.clone(),
                sort: sort.clone(),
                cont: cont.clone(),
            })
        }
        _ => None,
    });
    done.then_some(out)
}

fn first_select(p: &Process) -> Option<Process> {
    let mut done = false;
    let out = p.map_proc(&mut |q| match q {
        Process::Select { chan, to, cont, .. } if !done => {
            done = true;
            Some(Process::Select { chan: chan.clone(), to: to.clone(), label: Label::new("wrong_label"), cont: cont.clone() })
        }
        _ => None,
    });
    done.then_some(out)
}

/// Applies a mutation, or `None` when the protocol has nothing to mutate
/// (no inputs, no accepting roles, no selections).
pub fn mutate(proto: &Protocol, m: Mutation) -> Option<Protocol> {
    let mut out = proto.clone();
    let names: Vec<Participant> = proto.roles.iter().map(|(r, _)| r.clone()).collect();
    let changed = match m {
        Mutation::SwapSender => out.roles.iter_mut().enumerate().any(|(k, (me, p))| {
            let me = me.clone();
            let mut pick = |from: &Participant| {
                names.iter().cycle().skip(k + 1).take(names.len()).find(|r| *r != from && **r != me).cloned().unwrap_or_else(|| from.clone())
            };
            match first_recv(p, &mut pick) {
                Some(q) if q != *p => {
                    *p = q;
                    true
                }
                _ => false,
            }
        }),
        Mutation::DropAccept => match out.roles.iter_mut().rev().find(|(_, p)| matches!(p, Process::Accept { .. })) {
            Some((_, p)) => {
                *p = Process::Zero;
                true
            }
            None => false,
        },
        Mutation::WrongLabel => out.roles.iter_mut().any(|(_, p)| match first_select(p) {
            Some(q) => {
                *p = q;
                true
            }
            None => false,
        }),
    };
    if !changed {
        return None;
    }
    out.name = format!("{}+{m:?}", proto.name);
    out.reprint();
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinding::kind_global;
    use crate::normalize::normal_form;
    use crate::project::project_ground;
    use crate::simulate::{run, Config, RunOptions, RunVerdict, Scheduler};
    use crate::typecheck::{check_process, CheckMode};

    fn exercise(p: &Protocol) {
        assert!(kind_global(&StdEnv::new(), &p.global).is_ok(), "{}: {:?}", p.name, kind_global(&StdEnv::new(), &p.global));
        let g = p.env();
        check_process(&g, &p.program(), &CheckMode::Initial).unwrap_or_else(|e| panic!("{}: {e}", p.name));
        let c = Config::new(&g, &p.program()).unwrap();
        let opts = RunOptions { check_sr: true, fidelity: true, ..RunOptions::new() };
        for seed in 0..3 {
            let r = run(&c, Scheduler::Random(seed), &opts).unwrap();
            assert_eq!(r.verdict, RunVerdict::Done, "{} seed {seed}", p.name);
            assert!(r.sr_violations.is_empty(), "{}: {:?}", p.name, r.sr_violations);
            assert!(r.fidelity_violations.is_empty(), "{}: {:?}", p.name, r.fidelity_violations);
        }
    }

    #[test]
    fn small_instances_check_and_run() {
        for n in 0..=3 {
            exercise(&sequence(n).unwrap());
            exercise(&repetition(n).unwrap());
            exercise(&multicast(n).unwrap());
        }
        exercise(&ring(2).unwrap());
        exercise(&ring(4).unwrap());
        exercise(&mesh(2, 2).unwrap());
        exercise(&mesh(2, 3).unwrap());
    }

    #[test]
    fn fft_instances_check_and_run() {
        for n in 0..=2 {
            exercise(&fft(n, &fft_default_input(n)).unwrap());
        }
    }

    #[test]
    fn quote_request_checks_and_runs() {
        exercise(&quote_request(0, &[1]).unwrap());
        exercise(&quote_request(1, &[2, 1]).unwrap());
    }

    #[test]
    fn parameter_ranges() {
        assert!(matches!(ring(1), Err(ProtocolError::ParameterOutOfRange { .. })));
        assert!(matches!(mesh(1, 3), Err(ProtocolError::ParameterOutOfRange { .. })));
        assert!(matches!(quote_request(1, &[1]), Err(ProtocolError::ParameterOutOfRange { .. })));
        assert!(matches!(example("nope", &BTreeMap::new()), Err(ProtocolError::Unknown(_))));
    }

    #[test]
    fn multicast_zero_is_end() {
        let p = multicast(0).unwrap();
        assert_eq!(normal_form(&p.instance).unwrap(), Ty::End);
        assert!(p.roles.is_empty());
    }

    #[test]
    fn ring_two_message_order() {
        let p = ring(2).unwrap();
        let want = crate::surface::parse_global("W[0] -> W[1] : nat. W[1] -> W[2] : nat. W[2] -> W[0] : nat. end").unwrap();
        assert_eq!(normal_form(&p.instance).unwrap(), want);
    }

    #[test]
    fn fft_one_projection_for_machine_zero() {
        let p = fft(1, &fft_default_input(1)).unwrap();
        let t = project_ground(&normal_form(&p.instance).unwrap(), &Participant::at("W", 0)).unwrap();
        let want = crate::surface::parse_local(
            "!<W[0], complex>; ?<W[0], complex>; !<W[1], complex>; ?<W[1], complex>; !<W[0], complex>; ?<W[0], complex>; end",
        )
        .unwrap();
        assert_eq!(t, want);
    }

    #[test]
    fn bit_reversal() {
        assert_eq!(bit_reverse(1, 3), 4);
        assert_eq!(bit_reverse(6, 3), 3);
        assert_eq!(bit_reverse(0, 0), 0);
    }

    #[test]
    fn mutants_change_the_program() {
        let p = ring(3).unwrap();
        let m = mutate(&p, Mutation::SwapSender).unwrap();
        assert_ne!(m.program(), p.program());
        assert!(crate::surface::parse(&m.source).is_ok(), "{}", m.source);
        assert!(mutate(&p, Mutation::WrongLabel).is_none());
        assert!(mutate(&quote_request(0, &[1]).unwrap(), Mutation::WrongLabel).is_some());
    }
}
