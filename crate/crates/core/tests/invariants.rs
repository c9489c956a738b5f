use cpshape_core::coupling::{evolve_coupled, restart_sequence, NestedInitial};
use cpshape_core::dynamics::{evolve, hitting_times, semigroup_check, Configuration};
use cpshape_core::environment::{sample_environment, shift_environment, EnvironmentLaw, Marginal, RateBounds};
use cpshape_core::lattice::{Edge, ObjectId, Site};
use cpshape_core::oracle::{ExactChain, OracleEvent};
use cpshape_core::regeneration::essential_hitting;
use cpshape_core::replica::ReplicaFactory;
use cpshape_core::stats::{condition_on_survival, fit_tail, SurvivalRecord, TailKind};
use cpshape_core::substrate::GraphicalRealization;
use proptest::prelude::*;

fn iid_law() -> EnvironmentLaw {
    EnvironmentLaw::Iid { bounds: RateBounds::new(1.0, 3.0).unwrap(), marginal: Marginal::Uniform { low: 1.0, high: 3.0 } }
}

fn line_sites(max: i32) -> impl Strategy<Value = Vec<Site>> {
    prop::collection::vec((-max..=max).prop_map(|k| Site::unit(0, k)), 1..5)
}

fn plane_site(max: i32) -> impl Strategy<Value = Site> {
    (-max..=max, -max..=max).prop_map(|(a, b)| Site::from_slice(&[a, b]))
}

fn config(sites: &[Site]) -> Configuration {
    Configuration::from_sites(sites.iter().copied())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn edges_join_nearest_neighbours(low in plane_site(50), axis in 0usize..2, shift in plane_site(20)) {
        let e = Edge::from_low(low, axis);
        let (lo, hi) = (e.low().coords(2).to_vec(), e.high().coords(2).to_vec());
        let diffs: Vec<i32> = lo.iter().zip(&hi).map(|(a, b)| b - a).collect();
        prop_assert_eq!(diffs.iter().map(|d| d.abs()).sum::<i32>(), 1);
        prop_assert_eq!(diffs[e.axis()], 1);
        prop_assert_eq!(Edge::between(e.high(), e.low()).unwrap(), e);
        let t = e.translate(shift);
        prop_assert_eq!(t.low(), low + shift);
        prop_assert_eq!(t.axis(), axis);
    }

    #[test]
    fn streams_are_ordered_and_regenerate(seed in any::<u64>(), site in plane_site(4), horizon in 0.5f64..20.0) {
        let real = GraphicalRealization::new(2, 5, horizon, seed, 2.5).unwrap();
        let again = GraphicalRealization::new(2, 5, horizon, seed, 2.5).unwrap();
        for id in [ObjectId::Site(site), ObjectId::Edge(Edge::from_low(site, 1))] {
            let s = real.stream_for(&id).unwrap();
            prop_assert!(s.times.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(s.times.iter().all(|t| *t >= 0.0 && *t <= horizon));
            prop_assert_eq!(s.times.len(), s.marks.len());
            prop_assert!(s.marks.iter().all(|m| (0.0..=1.0).contains(m)));
            prop_assert_eq!(&s, &again.stream_for(&id).unwrap());
        }
    }

    #[test]
    fn view_shifts_compose_and_commute(
        seed in any::<u64>(),
        a in 0.0f64..3.0,
        b in 0.0f64..3.0,
        x in plane_site(2),
        y in plane_site(2),
        site in plane_site(2),
    ) {
        let real = GraphicalRealization::new(2, 8, 10.0, seed, 2.0).unwrap();
        let v = real.view();
        let id = ObjectId::Edge(Edge::from_low(site, 0));

        let two = v.space_shift(x).unwrap().space_shift(y).unwrap().events(&id).unwrap();
        let one = v.space_shift(x + y).unwrap().events(&id).unwrap();
        prop_assert_eq!(two, one);

        let two = v.time_shift(a).unwrap().time_shift(b).unwrap().events(&id).unwrap();
        let one = v.time_shift(a + b).unwrap().events(&id).unwrap();
        prop_assert_eq!(two.times.len(), one.times.len());
        prop_assert!(two.times.iter().zip(&one.times).all(|(p, q)| (p - q).abs() < 1e-12));
        prop_assert_eq!(two.marks, one.marks);

        let ts = v.time_shift(a).unwrap().space_shift(x).unwrap().events(&id).unwrap();
        let st = v.space_shift(x).unwrap().time_shift(a).unwrap().events(&id).unwrap();
        prop_assert_eq!(ts, st);
    }

    #[test]
    fn environment_rates_respect_bounds(seed in any::<u64>(), x in plane_site(2)) {
        let law = iid_law();
        let env = sample_environment(&law, seed, 2, 4).unwrap();
        let b = env.bounds();
        prop_assert!(env.rates().iter().all(|r| b.contains(*r)));
        prop_assert_eq!(&env, &sample_environment(&law, seed, 2, 4).unwrap());
        let shifted = shift_environment(&env, x).unwrap();
        prop_assert!(shifted.rates().iter().all(|r| b.contains(*r)));
    }

    #[test]
    fn monotone_and_additive_in_the_initial_set(
        seed in 0u64..1_000_000,
        a in line_sites(6),
        b in line_sites(6),
        t in 0.1f64..5.0,
    ) {
        let f = ReplicaFactory::new(iid_law(), 1, 25, 5.0, seed).unwrap();
        let r = f.replica(0).unwrap();
        let v = r.real.view();
        let (ca, cb) = (config(&a), config(&b));
        let cab = ca.union(&cb);
        let xa = evolve(&v, &r.env, &ca, t).unwrap().final_configuration();
        let xb = evolve(&v, &r.env, &cb, t).unwrap().final_configuration();
        let xab = evolve(&v, &r.env, &cab, t).unwrap().final_configuration();
        prop_assert!(xa.is_subset(&xab));
        prop_assert!(xb.is_subset(&xab));
        prop_assert_eq!(xa.union(&xb), xab);
    }

    #[test]
    fn semigroup_and_replay(seed in 0u64..1_000_000, a in line_sites(4), t in 0.1f64..3.0, s in 0.1f64..3.0) {
        let f = ReplicaFactory::new(iid_law(), 1, 25, 6.0, seed).unwrap();
        let r = f.replica(3).unwrap();
        let v = r.real.view();
        let ca = config(&a);
        prop_assert!(semigroup_check(&v, &r.env, &ca, t, s).unwrap());
        let tr = evolve(&v, &r.env, &ca, t + s).unwrap();
        prop_assert_eq!(tr.configuration_at(t + s), tr.final_configuration());
        prop_assert_eq!(&tr, &evolve(&v, &r.env, &ca, t + s).unwrap());
    }

    #[test]
    fn growth_set_never_shrinks(seed in 0u64..1_000_000, t1 in 0.0f64..4.0, dt in 0.0f64..4.0) {
        let f = ReplicaFactory::new(iid_law(), 2, 8, 8.0, seed).unwrap();
        let r = f.replica(0).unwrap();
        let g = hitting_times(&r.real.view(), &r.env, &Configuration::single(Site::ORIGIN), 8.0).unwrap();
        let (h1, h2) = (g.h(t1), g.h(t1 + dt));
        prop_assert!(h1.iter().all(|s| h2.contains(s)));
        prop_assert!(h1.contains(&Site::ORIGIN));
    }

    #[test]
    fn coupled_processes_stay_nested(
        seed in 0u64..1_000_000,
        weak in line_sites(3),
        extra in line_sites(3),
        more in line_sites(3),
    ) {
        let f = ReplicaFactory::new(iid_law(), 1, 30, 6.0, seed).unwrap();
        let r = f.replica(1).unwrap();
        let w = config(&weak);
        let s = w.union(&config(&extra));
        let init = NestedInitial { weak: w, strong: s.clone(), richardson: s.union(&config(&more)) };
        let c = evolve_coupled(&r.real.view(), &r.env, &init, 6.0).unwrap();
        prop_assert!(c.nesting_holds());
        // Richardson has no deaths
        let (r0, r1) = (&c.richardson.initial, c.richardson.final_configuration());
        prop_assert!(r0.is_subset(&r1));
    }

    #[test]
    fn restart_sequence_picks_least_sites(seed in 0u64..1_000_000) {
        let f = ReplicaFactory::new(EnvironmentLaw::constant(2.0), 1, 40, 15.0, seed).unwrap();
        let r = f.replica(0).unwrap();
        let v = r.real.view();
        let out = restart_sequence(&v, &r.env, 15.0).unwrap();
        prop_assert!(out.u.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(out.u.len(), out.k as usize + 1);
        let strong = evolve(&v, &r.env, &Configuration::single(Site::ORIGIN), 15.0).unwrap();
        for (k, z) in out.z.iter().enumerate().skip(1) {
            let alive = strong.configuration_at(out.u[k]);
            prop_assert_eq!(alive.least(), Some(*z));
        }
    }

    #[test]
    fn essential_hitting_interleaves(seed in 0u64..1_000_000, k in 1i32..6) {
        let f = ReplicaFactory::new(EnvironmentLaw::constant(3.0), 1, 40, 40.0, seed).unwrap();
        let r = f.replica(0).unwrap();
        let tr = essential_hitting(&r.real.view(), &r.env, Site::unit(0, k), 10.0).unwrap();
        prop_assert_eq!(tr.u[0], 0.0);
        prop_assert_eq!(tr.v[0], 0.0);
        for i in 1..tr.v.len() {
            prop_assert!(tr.u[i] <= tr.v[i]);
            if i + 1 < tr.u.len() {
                prop_assert!(tr.v[i] <= tr.u[i + 1]);
            }
        }
        if !tr.censored {
            let kk = tr.k.unwrap() as usize;
            prop_assert_eq!(tr.sigma, tr.u[kk]);
            prop_assert!(tr.sigma >= tr.t);
        }
    }

    #[test]
    fn tail_fit_scales_with_the_samples(raw in prop::collection::vec(0.0f64..1.0, 300..400), c in 0.1f64..10.0) {
        let xs: Vec<f64> = raw.iter().map(|u| -(1.0 - u).ln()).collect();
        let scaled: Vec<f64> = xs.iter().map(|x| c * x).collect();
        let a = fit_tail(&xs, TailKind::Exponential).unwrap();
        let b = fit_tail(&scaled, TailKind::Exponential).unwrap();
        prop_assert!((b.slope * c - a.slope).abs() <= 1e-9 * a.slope.abs().max(1.0));
        prop_assert!((b.r_squared - a.r_squared).abs() <= 1e-9);
    }

    #[test]
    fn conditioning_keeps_exactly_the_survivors(flags in prop::collection::vec(any::<bool>(), 1..60)) {
        #[derive(Clone, Debug, PartialEq)]
        struct R(usize, bool);
        impl SurvivalRecord for R {
            fn survived(&self) -> bool {
                self.1
            }
        }
        let records: Vec<R> = flags.iter().enumerate().map(|(i, f)| R(i, *f)).collect();
        let expected: Vec<R> = records.iter().filter(|r| r.1).cloned().collect();
        match condition_on_survival(records) {
            Ok(c) => {
                prop_assert_eq!(c.acceptance.successes as usize, expected.len());
                prop_assert_eq!(c.acceptance.trials as usize, flags.len());
                prop_assert_eq!(c.records, expected);
            }
            Err(_) => prop_assert!(expected.is_empty()),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn exact_chain_is_a_generator(seed in any::<u64>(), t in 0.0f64..3.0, a in line_sites(1), extra in line_sites(1)) {
        let env = sample_environment(&iid_law(), seed, 1, 1).unwrap();
        let chain = ExactChain::new(&env).unwrap();
        let n = chain.n_states() as u32;
        for from in 0..n {
            let row: f64 = (0..n).map(|to| chain.generator(from, to)).sum();
            prop_assert!(row.abs() < 1e-12);
            for to in (0..n).filter(|to| *to != from) {
                prop_assert!(chain.generator(from, to) >= 0.0);
            }
        }
        prop_assert!((0..n).all(|to| chain.generator(0, to) == 0.0));

        let small = config(&a);
        let big = small.union(&config(&extra));
        let p = |c: &Configuration, ev| chain.transient_prob(c, t, ev).unwrap().value;
        let (ps, pb) = (p(&small, OracleEvent::Survives), p(&big, OracleEvent::Survives));
        for v in [ps, pb] {
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&v));
        }
        prop_assert!(ps <= pb + 1e-9);
        prop_assert_eq!(p(&Configuration::empty(), OracleEvent::Survives), 0.0);
    }
}
