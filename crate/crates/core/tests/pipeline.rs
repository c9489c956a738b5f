use cpshape_core::coupling::restart_sequence;
use cpshape_core::dynamics::{evolve, semigroup_check, Configuration};
use cpshape_core::engine::NEVER;
use cpshape_core::environment::{EnvironmentLaw, Marginal, RateBounds};
use cpshape_core::lattice::Site;
use cpshape_core::oracle::{ExactChain, OracleEvent};
use cpshape_core::regeneration::essential_hitting;
use cpshape_core::replica::ReplicaFactory;

fn iid_law() -> EnvironmentLaw {
    EnvironmentLaw::Iid { bounds: RateBounds::new(1.5, 3.0).unwrap(), marginal: Marginal::Uniform { low: 1.5, high: 3.0 } }
}

#[test]
fn separate_factories_build_identical_replicas() {
    let a = ReplicaFactory::new(iid_law(), 2, 6, 5.0, 77).unwrap();
    let b = ReplicaFactory::new(iid_law(), 2, 6, 5.0, 77).unwrap();
    let start = Configuration::single(Site::ORIGIN);
    for i in [0, 1, 17, 1_000_003] {
        let (ra, rb) = (a.replica(i).unwrap(), b.replica(i).unwrap());
        assert_eq!(ra.env, rb.env);
        let ta = evolve(&ra.real.view(), &ra.env, &start, 5.0).unwrap();
        let tb = evolve(&rb.real.view(), &rb.env, &start, 5.0).unwrap();
        assert_eq!(ta, tb);
    }
}

#[test]
fn master_seed_changes_the_paths() {
    let a = ReplicaFactory::new(EnvironmentLaw::constant(2.0), 1, 20, 5.0, 1).unwrap();
    let b = ReplicaFactory::new(EnvironmentLaw::constant(2.0), 1, 20, 5.0, 2).unwrap();
    let start = Configuration::single(Site::ORIGIN);
    let differ = (0..20).any(|i| {
        let (ra, rb) = (a.replica(i).unwrap(), b.replica(i).unwrap());
        evolve(&ra.real.view(), &ra.env, &start, 5.0).unwrap().events != evolve(&rb.real.view(), &rb.env, &start, 5.0).unwrap().events
    });
    assert!(differ);
}

/// Monte Carlo from independent replicas against the exact chain on a
/// three-site segment.
#[test]
fn simulated_survival_matches_exact_chain() {
    let t = 1.0;
    let f = ReplicaFactory::new(EnvironmentLaw::constant(1.0), 1, 1, t, 4242).unwrap();
    let chain = ExactChain::new(&f.replica(0).unwrap().env).unwrap();
    let start = Configuration::single(Site::ORIGIN);
    let edge = Site::unit(0, 1);
    let exact_alive = chain.transient_prob(&start, t, OracleEvent::Survives).unwrap().value;
    let exact_edge = chain.transient_prob(&start, t, OracleEvent::Occupied(edge)).unwrap().value;

    let n = 20_000u64;
    let (mut alive, mut at_edge) = (0u64, 0u64);
    for i in 0..n {
        let r = f.replica(i).unwrap();
        let tr = evolve(&r.real.view(), &r.env, &start, t).unwrap();
        alive += tr.is_alive() as u64;
        at_edge += tr.final_configuration().contains(&edge) as u64;
    }
    for (hits, p) in [(alive, exact_alive), (at_edge, exact_edge)] {
        let est = hits as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((est - p).abs() <= 4.0 * se, "estimate {est} vs exact {p} (se {se})");
    }
}

#[test]
fn semigroup_holds_on_random_replicas() {
    let f = ReplicaFactory::new(iid_law(), 1, 30, 6.0, 5).unwrap();
    let a = Configuration::from_sites([-2, 0, 3].map(|k| Site::unit(0, k)));
    for i in 0..50 {
        let r = f.replica(i).unwrap();
        assert!(semigroup_check(&r.real.view(), &r.env, &a, 1.25, 2.5).unwrap(), "replica {i}");
    }
}

#[test]
fn restart_count_ends_at_extinction_on_death_runs() {
    let t_end = 15.0;
    let f = ReplicaFactory::new(EnvironmentLaw::constant(2.0), 1, 40, t_end, 11).unwrap();
    let start = Configuration::single(Site::ORIGIN);
    let mut deaths = 0;
    for i in 0..200 {
        let r = f.replica(i).unwrap();
        let out = restart_sequence(&r.real.view(), &r.env, t_end).unwrap();
        let tr = evolve(&r.real.view(), &r.env, &start, t_end).unwrap();
        assert_eq!(out.strong_extinction, tr.extinction_time);
        if tr.extinction_time != NEVER {
            deaths += 1;
            assert_eq!(out.u_k(), tr.extinction_time, "replica {i}");
        }
    }
    assert!(deaths > 0);
}

#[test]
fn essential_hitting_follows_first_infection() {
    let h = 30.0;
    let f = ReplicaFactory::new(EnvironmentLaw::constant(3.0), 1, 80, h, 3).unwrap();
    let x = Site::unit(0, 6);
    let mut resolved = 0;
    for i in 0..40 {
        let r = f.replica(i).unwrap();
        let tr = essential_hitting(&r.real.view(), &r.env, x, h).unwrap();
        if let Some(k) = tr.k {
            resolved += 1;
            assert!(k >= 1);
            assert_eq!(tr.u[1], tr.t);
            assert!(tr.sigma >= tr.t);
            assert!(tr.gap().unwrap() >= 0.0);
            assert!(tr.u.windows(2).all(|w| w[0] <= w[1]));
        }
    }
    assert!(resolved > 0);
}
