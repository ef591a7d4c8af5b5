//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints exactly one PASS/FAIL line; exits non-zero if any fails.

mod common;

use std::collections::BTreeMap;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};
use std::io::Write as _;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use mpst::ast::*;
use mpst::equiv::{local_equiv, session_env_equiv, subtype};
use mpst::normalize::{normal_form_with, Strategy};
use mpst::project::{merge, project, simplify_projection, ProjectError};
use mpst::index::IndexCtx;
use mpst::protocols::{self, mutate, Mutation, Protocol};
use mpst::simulate::{run, Config, RunOptions, RunVerdict, Scheduler};
use mpst::surface::{parse, parse_global, parse_local};
use mpst::typecheck::{check_process, CheckMode};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn within(limit: Duration, start: Instant) -> Result<String, String> {
    let took = start.elapsed();
    if took <= limit {
        Ok(format!("{:.2?}", took))
    } else {
        Err(format!("took {:.2?}, limit {:.0?}", took, limit))
    }
}

fn w(k: u64) -> Participant {
    Participant::at("W", k)
}

// ---------------------------------------------------------------------------

fn mergeability() -> Outcome {
    let start = Instant::now();
    let corrected = parse_global(
        "W[0] -> W[1] { ok: W[1] -> W[2] { ok: W[1] -> W[2] : bool. end }, \
         quit: W[1] -> W[2] { quit: W[1] -> W[2] : nat. end } }",
    )
    .unwrap();
    let expected = parse_local("&<W[1], { ok: ?<W[1], bool>; end, quit: ?<W[1], nat>; end }>").unwrap();
    let got = project(&corrected, &w(2)).map_err(|e| format!("corrected type does not project: {e}"))?;
    if got != expected {
        return Err(format!("projection is {got}, expected {expected}"));
    }
    let naive = parse_global("W[0] -> W[1] { ok: W[1] -> W[2] : bool. end, quit: W[1] -> W[2] : nat. end }").unwrap();
    match project(&naive, &w(2)) {
        Err(ProjectError::MergeFailure { .. }) => {}
        other => return Err(format!("naive variant gave {other:?}")),
    }
    within(Duration::from_secs(1), start)
}

/// The three-case end-point type of worker `W[p]` in the sequence protocol.
const SEQUENCE_ROLE: &str = "if W[p] == W[n] then (if n <= 0 then end else !<W[n - 1], nat>; end) \
     else (if W[p] == W[0] then ?<W[1], nat>; end else ?<W[p + 1], nat>; !<W[p - 1], nat>; end)";

fn sequence_endpoints() -> Outcome {
    let g = parse("global S(n : nat) = foreach i < n { W[i + 1] -> W[i] : nat }").unwrap();
    let body = g.global("S").unwrap().body.clone();
    let generic = project(&body, &Participant::indexed("W", vec![IndexExpr::var("p")]))
        .map_err(|e| format!("generic projection failed: {e}"))?;
    let hand = parse_local(SEQUENCE_ROLE).unwrap();
    let mut slowest = Duration::ZERO;
    for n in 0..=4u64 {
        for p in 0..=n {
            let start = Instant::now();
            let at = |t: &LocalType| t.subst_ix("n", &IndexExpr::Lit(n)).subst_ix("p", &IndexExpr::Lit(p));
            let out = local_equiv(&StdEnv::new(), &at(&generic), &at(&hand));
            if !out.is_equal() {
                return Err(format!("n={n}, W[{p}]: {}\n{}", out.verdict, out.render_trace()));
            }
            if out.trace.first().map(|s| s.rule) != Some("WfBase") {
                return Err(format!("n={n}, W[{p}] closed by {:?}, not WfBase", out.rules()));
            }
            slowest = slowest.max(start.elapsed());
        }
    }
    if slowest > Duration::from_secs(1) {
        return Err(format!("slowest instance took {slowest:.2?}"));
    }
    Ok(format!("15 instances, slowest {slowest:.2?}"))
}

fn equivalence_staging() -> Outcome {
    let start = Instant::now();
    let r = "(R end with (j : nat, x) { !<Bob, nat>; x })";
    let env = StdEnv::new().with(StdEntry::Index("i".into(), IndexSort::Nat));
    let y = Chan::Var("y".into());
    let delta = |t: &str| SessionEnv::from([(y.clone(), GenType::local(parse_local(t).unwrap()))]);
    let out = session_env_equiv(&env, &delta(&format!("{r} @ (i + 1)")), &delta(&format!("!<Bob, nat>; {r} @ i")));
    if !out.is_equal() || !out.rules().contains(&"WfBase") {
        return Err(format!("TEq step: {} via {:?}", out.verdict, out.rules()));
    }

    // The ring generator: projection of the ring onto its first worker.
    let file = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/ring.gt")).unwrap();
    let src = parse(&file).unwrap();
    let ring = &src.global("Ring").unwrap().body;
    let ctx = IndexCtx::from_env(&StdEnv::new().with(StdEntry::Index("n".into(), IndexSort::Nat)));
    let generator = simplify_projection(&project(ring, &w(0)).unwrap(), &ctx);
    if !alpha_eq(&generator, &src.local("Gen").unwrap().body) {
        return Err(format!("fixture Gen is not the projection {generator}"));
    }
    let mut cli_out = Vec::new();
    let code = mpst::cli::run(
        ["mpst", "--json", "equiv", concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/ring.gt"), "--left", "Gen", "--right", "Roles", "--domain", "2..6"],
        &mut std::io::empty(),
        &mut cli_out,
        &mut std::io::sink(),
    );
    let text = String::from_utf8(cli_out).unwrap();
    if code != 0 || !text.contains("\"WfRecF\"") {
        return Err(format!("ring generator vs role: exit {code}\n{text}"));
    }
    within(Duration::from_secs(5), start)
}

/// Independent O(N^2) DFT with `omega = e^{2 pi i / N}`.
fn reference_dft(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len() as f64;
    (0..x.len())
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(j, v)| v * Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * (j * k) as f64 / n))
                .sum()
        })
        .collect()
}

fn fft_outputs(p: &Protocol, seed: u64) -> Result<Vec<Complex64>, String> {
    let c = Config::new(&p.env(), &p.program()).map_err(|e| e.to_string())?;
    let r = run(&c, Scheduler::Random(seed), &RunOptions::new()).map_err(|e| e.to_string())?;
    if r.verdict != RunVerdict::Done {
        return Err(format!("{} with seed {seed}: {}", p.name, r.verdict.as_str()));
    }
    let outs = r.outputs();
    outs.values()
        .map(|v| match v {
            Value::Complex(re, im) => Ok(()).map(|_| Complex64::new(*re, *im)),
            other => Err(format!("non-complex output {other}")),
        })
        .collect::<Result<Vec<_>, _>>()
        .and_then(|_| {
            (0..outs.len())
                .map(|k| match outs.get(&format!("r{k}")) {
                    Some(Value::Complex(re, im)) => Ok(Complex64::new(*re, *im)),
                    _ => Err(format!("missing output r{k}")),
                })
                .collect()
        })
}

fn fft() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for m in 1..=3u32 {
        let big_n = 1usize << m;
        let p = protocols::fft(m, &protocols::fft_default_input(m)).unwrap();
        match check_process(&StdEnv::new(), &p.closed_program(), &CheckMode::Initial) {
            Ok(ProcessType::Sess(d)) if d.is_empty() => {}
            other => return Err(format!("m={m}: typing gave {other:?}")),
        }
        for seed in 0..100 {
            let outs = fft_outputs(&p, seed)?;
            if outs.len() != big_n {
                return Err(format!("m={m}, seed {seed}: {} outputs", outs.len()));
            }
        }
        for v in 0..20u64 {
            let x: Vec<Complex64> =
                (0..big_n).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
            let p = protocols::fft(m, &x).unwrap();
            let got = fft_outputs(&p, v)?;
            for (k, (a, b)) in got.iter().zip(reference_dft(&x)).enumerate() {
                let err = (a.re - b.re).abs().max((a.im - b.im).abs());
                worst = worst.max(err);
                if err > 1e-9 {
                    return Err(format!("m={m}, vector {v}, X_{k}: {a} vs {b}"));
                }
            }
        }
    }
    within(Duration::from_secs(60), start).map(|t| format!("{t}, max error {worst:.1e}"))
}

fn corpus() -> Vec<Protocol> {
    let mut out = Vec::new();
    for n in 0..=4 {
        out.push(protocols::sequence(n).unwrap());
        out.push(protocols::repetition(n).unwrap());
    }
    for n in 0..=5 {
        out.push(protocols::multicast(n).unwrap());
    }
    for n in 2..=5 {
        out.push(protocols::ring(n).unwrap());
    }
    for n in 2..=3 {
        for m in 2..=3 {
            out.push(protocols::mesh(n, m).unwrap());
        }
    }
    out.push(protocols::quote_request(1, &[2, 1]).unwrap());
    for m in 0..=2 {
        out.push(protocols::fft(m, &protocols::fft_default_input(m)).unwrap());
    }
    out
}

fn label(p: &Protocol) -> String {
    let ps: Vec<String> = p.params.iter().filter(|(k, _)| k != "inputs").map(|(k, v)| format!("{k}={v}")).collect();
    format!("{}({})", p.name, ps.join(","))
}

/// Runs `f` on every corpus entry in parallel and collects the failures.
fn for_corpus(f: impl Fn(&Protocol) -> Result<(), String> + Sync) -> Vec<String> {
    let programs = corpus();
    std::thread::scope(|s| {
        let handles: Vec<_> = programs.iter().map(|p| s.spawn(|| f(p).map_err(|e| format!("{}: {e}", label(p))))).collect();
        handles.into_iter().filter_map(|h| h.join().expect("worker").err()).collect()
    })
}

fn subject_reduction() -> Outcome {
    let start = Instant::now();
    let opts = RunOptions { check_sr: true, fidelity: true, ..RunOptions::new() };
    let failures = for_corpus(|p| {
        let c = Config::new(&p.env(), &p.program()).map_err(|e| e.to_string())?;
        for seed in 0..3 {
            let r = run(&c, Scheduler::Random(seed), &opts).map_err(|e| e.to_string())?;
            if let Some(v) = r.sr_violations.first().or(r.fidelity_violations.first()) {
                return Err(format!("seed {seed}: {v}"));
            }
            if r.verdict != RunVerdict::Done {
                return Err(format!("seed {seed}: {}", r.verdict.as_str()));
            }
        }
        Ok(())
    });
    match failures.first() {
        None => Ok(format!("{} programs x 3 seeds, {:.2?}", corpus().len(), start.elapsed())),
        Some(f) => Err(format!("{} violations; first: {f}", failures.len())),
    }
}

fn progress() -> Outcome {
    let failures = for_corpus(|p| {
        let c = Config::new(&p.env(), &p.program()).map_err(|e| e.to_string())?;
        for seed in 0..50 {
            let r = run(&c, Scheduler::Random(seed), &RunOptions::new()).map_err(|e| e.to_string())?;
            if let RunVerdict::Stuck(why) = r.verdict {
                return Err(format!("seed {seed} stuck: {why}"));
            }
        }
        Ok(())
    });
    if let Some(f) = failures.first() {
        return Err(format!("{} programs stuck; first: {f}", failures.len()));
    }
    let mut mutants = 0usize;
    let mut escaped = Vec::new();
    for p in corpus() {
        for m in Mutation::ALL {
            let Some(q) = mutate(&p, m) else { continue };
            mutants += 1;
            if check_process(&StdEnv::new(), &q.closed_program(), &CheckMode::Initial).is_err() {
                continue;
            }
            let c = Config::new(&q.env(), &q.program()).map_err(|e| e.to_string())?;
            for seed in 0..50 {
                let r = run(&c, Scheduler::Random(seed), &RunOptions::new()).map_err(|e| e.to_string())?;
                if !matches!(r.verdict, RunVerdict::Stuck(_)) {
                    escaped.push(format!("{} {m:?} seed {seed}", label(&p)));
                    break;
                }
            }
        }
    }
    match escaped.first() {
        None => Ok(format!("{} programs x 50 seeds, {mutants} mutants rejected", corpus().len())),
        Some(e) => Err(format!("{} mutants neither stuck nor rejected; first: {e}", escaped.len())),
    }
}

fn normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut bad = Vec::new();
    for _ in 0..500 {
        let (seed, g) = common::well_kinded_global(rng.random());
        let a = normal_form_with(&g, Strategy::Leftmost, 1_000_000);
        let b = normal_form_with(&g, Strategy::Random(rng.random()), 1_000_000);
        match (a, b) {
            (Ok(a), Ok(b)) if alpha_eq(&a, &b) => {}
            (a, b) => bad.push(format!("seed {seed}: {a:?} vs {b:?}")),
        }
    }
    match bad.first() {
        None => Ok("500 types, 0 disagreements".into()),
        Some(b) => Err(format!("{} disagreements; first {b}", bad.len())),
    }
}

fn merge_soundness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let env = StdEnv::new();
    let mut bad = Vec::new();
    for k in 0..200 {
        let (a, b, lb) = common::merge_case(rng.random());
        let m = match merge(&a, &b) {
            Ok(m) => m,
            Err(e) => {
                bad.push(format!("{a} / {b} do not merge: {e}"));
                continue;
            }
        };
        if !subtype(&env, &m, &a) || !subtype(&env, &m, &b) {
            bad.push(format!("merge {m} not below {a} and {b}"));
        }
        if k < 50 && (!subtype(&env, &lb, &a) || !subtype(&env, &lb, &b) || !subtype(&env, &lb, &m)) {
            bad.push(format!("lower bound {lb} not below merge {m}"));
        }
    }
    match bad.first() {
        None => Ok("200 pairs, 50 lower bounds, 0 violations".into()),
        Some(b) => Err(format!("{} violations; first {b}", bad.len())),
    }
}

fn mpst(args: &[&str], stdin: &str) -> (i32, Vec<u8>) {
    let mut child = Command::new(env!("CARGO_BIN_EXE_mpst"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("spawn mpst");
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    let mut bytes = out.stdout;
    bytes.extend(out.stderr);
    (out.status.code().unwrap_or(-1), bytes)
}

fn determinism() -> Outcome {
    let dir = std::env::temp_dir().join(format!("mpst-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let data = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data");
    let mut runs: Vec<(Vec<String>, String)> = Vec::new();
    let mut files = BTreeMap::new();
    for name in protocols::EXAMPLES {
        let (_, src) = mpst(&["examples", name], "");
        let src = String::from_utf8(src).unwrap();
        let path = dir.join(format!("{name}.proc"));
        std::fs::write(&path, &src).unwrap();
        files.insert(*name, path.display().to_string());
        runs.push((vec!["examples".into(), (*name).into()], String::new()));
        runs.push((vec!["typecheck".into(), "-".into()], src.clone()));
        runs.push((vec!["--json".into(), "parse".into(), "-".into()], src));
    }
    for (name, path) in &files {
        for seed in ["0", "1", "42"] {
            let trace = dir.join(format!("{name}-{seed}.jsonl")).display().to_string();
            runs.push((
                ["simulate", path, "--seed", seed, "--trace", &trace, "--json"].map(String::from).to_vec(),
                String::new(),
            ));
            runs.push((vec!["--json".into(), "trace-file".into(), trace], String::new()));
        }
        runs.push((["simulate", path, "--scheduler", "rr"].map(String::from).to_vec(), String::new()));
    }
    let fixtures = [
        vec!["equiv", "seq.gt", "--left", "Gen", "--right", "Roles", "--domain", "2..5"],
        vec!["equiv", "ring.gt", "--left", "Gen", "--right", "Roles", "--domain", "2..6", "--json"],
        vec!["project", "seq.gt", "--decl", "Sequence", "--at", "n=4"],
        vec!["project", "ring.gt", "--decl", "Ring", "--role", "W[n]", "--simplify", "--json"],
        vec!["kind", "seq.gt"],
        vec!["normalize", "ring.gt", "--at", "n=3"],
        vec!["simulate", "broken_ring.proc", "--at", "n=2"],
        vec!["simulate", "broken_ring.proc", "--at", "n=2", "--scheduler", "exhaustive"],
    ];
    for f in fixtures {
        let args: Vec<String> =
            f.iter().map(|a| if a.ends_with(".gt") || a.ends_with(".proc") { format!("{data}/{a}") } else { a.to_string() }).collect();
        runs.push((args, String::new()));
    }
    let digest = |args: &[String], stdin: &str| -> Vec<u8> {
        if args.get(1).map(String::as_str) == Some("trace-file") {
            return Sha256::digest(std::fs::read(&args[2]).unwrap_or_default()).to_vec();
        }
        let argv: Vec<&str> = args.iter().map(String::as_str).collect();
        let (code, out) = mpst(&argv, stdin);
        let mut h = Sha256::new();
        h.update(code.to_le_bytes());
        h.update(out);
        h.finalize().to_vec()
    };
    let first: Vec<Vec<u8>> = runs.iter().map(|(a, s)| digest(a, s)).collect();
    let second: Vec<Vec<u8>> = runs.iter().map(|(a, s)| digest(a, s)).collect();
    let _ = std::fs::remove_dir_all(&dir);
    let differing: Vec<String> =
        runs.iter().zip(first.iter().zip(&second)).filter(|(_, (a, b))| a != b).map(|((a, _), _)| a.join(" ")).collect();
    match differing.first() {
        None => Ok(format!("{} invocations hashed twice, all identical", runs.len())),
        Some(d) => Err(format!("{} invocations differ; first: mpst {d}", differing.len())),
    }
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("mergeability of the ok/quit example", mergeability),
        ("sequence end-points for n in 0..=4", sequence_endpoints),
        ("equivalence staging (WfBase, WfRecF)", equivalence_staging),
        ("FFT typing, termination and DFT values", fft),
        ("subject reduction on the corpus", subject_reduction),
        ("progress on the corpus and fault injection", progress),
        ("normalisation strategies agree", normalization),
        ("merge is a greatest lower bound", merge_soundness),
        ("deterministic CLI output", determinism),
    ];
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let res = std::panic::catch_unwind(f).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned().or(e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match res {
            Ok(info) => println!("criterion {}: PASS  {name} ({info})", k + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {why}", k + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
