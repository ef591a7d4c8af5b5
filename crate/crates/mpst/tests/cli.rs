use std::path::PathBuf;

use serde_json::Value as Json;

use mpst::cli::{parse_settings, run};

fn data(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name).display().to_string()
}

struct Out {
    code: i32,
    stdout: String,
    stderr: String,
}

fn mpst_with_stdin(args: &[&str], stdin: &str) -> Out {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("mpst").chain(args.iter().copied());
    let code = run(argv, &mut stdin.as_bytes(), &mut out, &mut err);
    Out { code, stdout: String::from_utf8(out).unwrap(), stderr: String::from_utf8(err).unwrap() }
}

fn mpst(args: &[&str]) -> Out {
    mpst_with_stdin(args, "")
}

fn json(out: &Out) -> Json {
    serde_json::from_str(&out.stdout).unwrap_or_else(|e| panic!("not JSON ({e}):\n{}", out.stdout))
}

fn temp_file(name: &str, contents: &str) -> String {
    let dir = std::env::temp_dir().join(format!("mpst-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join(name);
    std::fs::write(&path, contents).unwrap();
    path.display().to_string()
}

#[test]
fn ring_generator_matches_role_over_a_domain() {
    let ring = data("ring.gt");
    let out = mpst(&["equiv", &ring, "--left", "Gen", "--right", "Roles", "--domain", "2..6"]);
    assert_eq!(out.code, 0, "{}{}", out.stdout, out.stderr);
    assert!(out.stdout.starts_with("equal\n"));
    assert!(out.stdout.contains("WfRecF"));

    let open = mpst(&["equiv", &ring, "--left", "Gen", "--right", "Roles"]);
    assert_eq!(open.code, 2, "{}", open.stdout);
    assert!(open.stdout.starts_with("undecided"));

    let at4 = mpst(&["equiv", &ring, "--left", "Gen", "--right", "Roles", "--at", "n=4"]);
    assert_eq!(at4.code, 0, "{}", at4.stdout);
}

#[test]
fn sequence_generator_matches_role() {
    let out = mpst(&["--json", "equiv", &data("seq.gt"), "--left", "Gen", "--right", "Roles", "--domain", "2..5"]);
    assert_eq!(out.code, 0, "{}", out.stdout);
    let v = json(&out);
    assert_eq!(v["v"], 1);
    assert_eq!(v["status"], "ok");
    assert_eq!(v["equiv"]["trace"][0]["rule"], "WfRecF");
}

#[test]
fn broken_ring_gets_stuck_and_fails_typing() {
    let file = data("broken_ring.proc");
    let sim = mpst(&["simulate", &file, "--at", "n=2"]);
    assert_eq!(sim.code, 1);
    assert!(sim.stdout.starts_with("verdict: stuck"), "{}", sim.stdout);
    assert!(sim.stdout.contains("queue s0 [(W[1], W[2], 2)]"));

    let tc = mpst(&["typecheck", &file, "--at", "n=2"]);
    assert_eq!(tc.code, 1, "{}{}", tc.stdout, tc.stderr);

    let missing = mpst(&["simulate", &file]);
    assert_eq!(missing.code, 3);
    assert!(missing.stderr.contains("needs a value"), "{}", missing.stderr);
}

#[test]
fn project_every_role_of_a_ground_instance() {
    let out = mpst(&["project", &data("seq.gt"), "--decl", "Sequence", "--at", "n=2"]);
    assert_eq!(out.code, 0);
    assert_eq!(
        out.stdout,
        "W[0] : ?<W[1], nat>; end\nW[1] : ?<W[2], nat>; !<W[0], nat>; end\nW[2] : !<W[1], nat>; end\n"
    );
}

#[test]
fn project_json_carries_text_and_tree() {
    let out = mpst(&["--json", "project", &data("seq.gt"), "--decl", "Sequence", "--at", "n=2", "--role", "W[1]"]);
    assert_eq!(out.code, 0);
    let v = json(&out);
    assert_eq!(v["projections"][0]["role"], "W[1]");
    assert_eq!(v["projections"][0]["text"], "?<W[2], nat>; !<W[0], nat>; end");
    assert_eq!(v["projections"][0]["type"]["t"], "in");
}

#[test]
fn examples_pipe_into_typecheck() {
    let list = mpst(&["examples"]);
    assert_eq!(list.code, 0);
    assert_eq!(list.stdout.lines().count(), mpst::protocols::EXAMPLES.len());
    for (name, params) in [("fft", "n=2"), ("ring", "n=3"), ("quote_request", "i=1,J=2:1")] {
        let src = mpst(&["examples", name, "--params", params]);
        assert_eq!(src.code, 0, "{name}: {}", src.stderr);
        let tc = mpst_with_stdin(&["typecheck", "-"], &src.stdout);
        assert_eq!(tc.code, 0, "{name}: {}{}", tc.stdout, tc.stderr);
    }
}

#[test]
fn sequence_json_matches_golden_file() {
    let src = mpst(&["examples", "sequence", "--params", "n=3"]);
    let out = mpst_with_stdin(&["--json", "parse", "-"], &src.stdout);
    assert_eq!(out.code, 0);
    let golden = std::fs::read_to_string(data("sequence.json")).unwrap();
    assert_eq!(out.stdout, golden);
}

#[test]
fn simulate_json_report() {
    let src = mpst(&["examples", "ring", "--params", "n=3"]).stdout;
    let out = mpst_with_stdin(&["--json", "simulate", "-", "--seed", "3", "--check-sr"], &src);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let v = json(&out);
    assert_eq!(v["run"]["verdict"], "done");
    assert_eq!(v["run"]["outputs"]["out"]["n"], 4);
    assert_eq!(v["run"]["sr_violations"], Json::Array(vec![]));
}

#[test]
fn trace_file_is_one_event_per_line() {
    let src = mpst(&["examples", "sequence", "--params", "n=2"]).stdout;
    let proc_file = temp_file("seq2.proc", &src);
    let trace = temp_file("seq2.jsonl", "");
    let out = mpst(&["simulate", &proc_file, "--trace", &trace, "--seed", "1"]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let text = std::fs::read_to_string(&trace).unwrap();
    assert!(!text.is_empty());
    for line in text.lines() {
        let ev: Json = serde_json::from_str(line).unwrap();
        assert!(ev["rule"].is_string(), "{line}");
    }
}

#[test]
fn config_file_sets_fuel_and_scheduler() {
    let cfg = temp_file("small.cfg", "# tight budget\nfuel = 5\nscheduler = rr\n");
    let src = mpst(&["examples", "ring", "--params", "n=3"]).stdout;
    let proc_file = temp_file("ring3.proc", &src);
    let out = mpst(&["--config", &cfg, "simulate", &proc_file]);
    assert_eq!(out.code, 2, "{}", out.stdout);
    assert!(out.stdout.starts_with("verdict: fuel-out"));

    let s = parse_settings("seed = 9\nscheduler = exhaustive\n").unwrap();
    assert_eq!(s.seed, Some(9));
    assert_eq!(s.scheduler.as_deref(), Some("exhaustive"));
}

#[test]
fn bad_config_is_a_usage_error() {
    let cfg = temp_file("bad.cfg", "bogus = 5\n");
    let out = mpst(&["--config", &cfg, "examples"]);
    assert_eq!(out.code, 3);
    assert!(out.stderr.contains("unknown key `bogus`"), "{}", out.stderr);
    assert!(parse_settings("fuel five").is_err());
}

#[test]
fn usage_errors_exit_3() {
    assert_eq!(mpst(&["bogus"]).code, 3);
    assert_eq!(mpst(&["project", &data("seq.gt")]).code, 3);
    assert_eq!(mpst(&["parse", "/nonexistent/file.gt"]).code, 3);
    assert_eq!(mpst(&["examples", "nosuch"]).code, 3);
    assert_eq!(mpst(&["--help"]).code, 0);
}

#[test]
fn syntax_errors_exit_1_with_json_diagnostic() {
    let out = mpst_with_stdin(&["--json", "parse", "-"], "global G = A -> ;");
    assert_eq!(out.code, 1);
    let v = json(&out);
    assert_eq!(v["v"], 1);
    assert_eq!(v["status"], "failure");
    assert!(v["error"].as_str().unwrap().starts_with("<stdin>:1:17:"));
}
