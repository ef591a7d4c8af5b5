//! Projections of ground protocol instances are pairwise dual, and the
//! symbolic projection agrees with projecting after instantiation.

use mpst::ast::*;
use mpst::equiv::local_equiv;
use mpst::project::{global_normal_form, pid, project, project_ground};
use mpst::protocols::{self, Protocol};
use mpst::typecheck::check_coherence;

fn initial_env(p: &Protocol) -> SessionEnv {
    let s = Session("s".into());
    pid(&global_normal_form(&p.instance).unwrap())
        .into_iter()
        .map(|r| {
            let t = project_ground(&p.instance, &r).unwrap_or_else(|e| panic!("{}: {r}: {e}", p.name));
            (Chan::Endpoint(s.clone(), r), GenType::local(t))
        })
        .collect()
}

#[test]
fn ring_and_mesh_projections_are_coherent() {
    let mut cases: Vec<Protocol> = (2..=6).map(|n| protocols::ring(n).unwrap()).collect();
    for n in 2..=3 {
        for m in 2..=4 {
            cases.push(protocols::mesh(n, m).unwrap());
        }
    }
    for p in &cases {
        let d = initial_env(p);
        assert!(!d.is_empty());
        check_coherence(&d).unwrap_or_else(|e| panic!("{} {:?}: {e}", p.name, p.params));
    }
}

#[test]
fn broken_ring_is_not_coherent() {
    let p = protocols::ring(3).unwrap();
    let mut d = initial_env(&p);
    let w0 = Chan::Endpoint(Session("s".into()), Participant::at("W", 0));
    // W[0] expects its token from W[2] instead of W[3].
    let t = d[&w0].cont.clone().unwrap().to_string().replace("?<W[3]", "?<W[2]");
    d.insert(w0, GenType::local(mpst::surface::parse_local(&t).unwrap()));
    assert!(check_coherence(&d).is_err());
}

#[test]
fn symbolic_ring_projection_instantiates_to_ground_projection() {
    let p = protocols::ring(2).unwrap();
    let Ty::Rec(r) = &p.global else { panic!("ring type is not pi-abstracted: {}", p.global) };
    let body = &r.body;
    // The body of `pi n. G` mentions `n + 1` for the parameter, so instance
    // `k` substitutes `k - 1`.
    let n = r.ivar.clone();
    for role in [IndexExpr::Lit(0), IndexExpr::Lit(1), IndexExpr::var(&n).succ(), IndexExpr::var(&n)] {
        let q = Participant::indexed("W", vec![role.clone()]);
        let generic = project(body, &q).unwrap();
        for k in 2..=5u64 {
            let at = |t: &LocalType| t.subst_ix(&n, &IndexExpr::Lit(k - 1));
            let ground_q = Participant::indexed("W", vec![role.subst_ix(&n, &IndexExpr::Lit(k - 1))]);
            let ground = project_ground(&protocols::ring(k).unwrap().instance, &ground_q).unwrap();
            let out = local_equiv(&StdEnv::new(), &at(&generic), &ground);
            assert!(out.is_equal(), "W[{role}] at n={k}:\n{}", out.render_trace());
        }
    }
}
