use proptest::prelude::*;

use crt_spectra::cascade::{sample_cascade, truncated_perturbation, Address, CascadeTree, PerturbationTable};
use crt_spectra::dendrite::{ContractionSystem, DendriteGraph};
use crt_spectra::excursion::{decompose, excursion_distance, sample_excursion};
use crt_spectra::forms::{assemble_cut_set, assemble_network, cut_level_for_depth};
use crt_spectra::spectrum::{dense_eigenvalues, log_grid, Boundary, Bracketing, EtaHierarchy, Pencil};
use crt_spectra::Network;

const BUDGET: u128 = 1 << 24;

fn level_network(depth: usize, seed: u64) -> (CascadeTree, PerturbationTable, Network) {
    let c = sample_cascade(depth, seed, BUDGET).unwrap();
    let t = PerturbationTable::anchored(&c, 4);
    let net = assemble_network(&c, &t).unwrap();
    (c, t, net)
}

fn cut_network(depth: usize, seed: u64) -> (CascadeTree, Network) {
    let c = sample_cascade(depth.saturating_sub(1), seed, BUDGET).unwrap();
    let net = assemble_cut_set(&c, cut_level_for_depth(depth), 4, 1, BUDGET).unwrap();
    (c, net)
}

fn grid() -> Vec<f64> {
    log_grid(1e-1, 1e9, 41).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn excursion_distance_is_a_pseudometric(
        seed in any::<u64>(),
        triples in proptest::collection::vec((0usize..=512, 0usize..=512, 0usize..=512), 40),
    ) {
        let f = sample_excursion(512, seed).unwrap();
        for (a, b, c) in triples {
            let d = |s, t| excursion_distance(&f, s, t).unwrap();
            prop_assert_eq!(d(a, a), 0.0);
            prop_assert_eq!(d(a, b), d(b, a));
            prop_assert!(d(a, b) >= 0.0);
            prop_assert!(d(a, c) <= d(a, b) + d(b, c) + 1e-12);
        }
    }

    #[test]
    fn split_masses_are_marker_gaps(seed in any::<u64>(), u in 1usize..1023, v in 1usize..1023) {
        prop_assume!(u.abs_diff(v) > 8);
        let f = sample_excursion(1024, seed).unwrap();
        if let Ok(sp) = decompose(&f, u.min(v), u.max(v)) {
            let m = sp.markers;
            let [d1, d2, d3] = sp.masses.0;
            prop_assert!((d1 - (1.0 + m.h_minus - m.h_plus)).abs() < 1e-12);
            prop_assert!((d2 - (m.h - m.h_minus)).abs() < 1e-12);
            prop_assert!((d3 - (m.h_plus - m.h)).abs() < 1e-12);
            prop_assert!((d1 + d2 + d3 - 1.0).abs() < 1e-12);
            for p in &sp.pieces {
                prop_assert_eq!(p.at(0), 0.0);
                prop_assert_eq!(p.at(p.n()), 0.0);
                prop_assert!(p.values().iter().all(|&x| x >= 0.0));
            }
        }
    }

    #[test]
    fn level_masses_sum_to_one(depth in 0usize..8, seed in any::<u64>()) {
        let c = sample_cascade(depth, seed, BUDGET).unwrap();
        for k in 0..=depth {
            let s: f64 = c.level_lengths(k).iter().map(|l| l * l).sum();
            prop_assert!((s - 1.0).abs() < 1e-9, "level {} sums to {}", k, s);
        }
    }

    #[test]
    fn truncated_recursion_is_exact(depth in 2usize..6, seed in any::<u64>(), m in 1usize..6, idx in any::<u64>()) {
        let c = sample_cascade(depth, seed, BUDGET).unwrap();
        let k = depth - 1;
        let a = Address::from_index(k, idx % 3u64.pow(k as u32));
        let lhs = truncated_perturbation(&c, a, m);
        let rhs = c.w(a.child(1)) * truncated_perturbation(&c, a.child(1), m - 1)
            + c.w(a.child(2)) * truncated_perturbation(&c, a.child(2), m - 1);
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn counts_equal_dense_oracle(depth in 0usize..=4, seed in any::<u64>(), dirichlet in any::<bool>()) {
        let (_, _, net) = level_network(depth, seed);
        let b = if dirichlet { Boundary::dirichlet() } else { Boundary::Neumann };
        let dense = dense_eigenvalues(&net, &b).unwrap();
        let p = Pencil::new(&net, b).unwrap();
        for l in log_grid(1e-1, 1e7, 20).unwrap() {
            let want = dense.iter().filter(|&&e| e <= l).count();
            prop_assert_eq!(p.count_below(l), want, "λ = {}", l);
        }
    }

    #[test]
    fn counts_are_monotone_bracketed_and_homogeneous(
        depth in 1usize..=6,
        seed in any::<u64>(),
        a in 1e-2f64..1e2,
    ) {
        let (_, _, net) = level_network(depth, seed);
        let n = Pencil::new(&net, Boundary::Neumann).unwrap();
        let d = Pencil::new(&net, Boundary::dirichlet()).unwrap();
        let mut scaled = net.clone();
        scaled.scale_conductances(a);
        let ns = Pencil::new(&scaled, Boundary::Neumann).unwrap();
        let mut last = 0;
        for l in grid() {
            let (cn, cd) = (n.count_below(l), d.count_below(l));
            prop_assert!(cn >= last);
            last = cn;
            prop_assert!(cd <= cn && cn <= cd + 2);
            prop_assert_eq!(ns.count_below(a * l), cn);
        }
    }

    #[test]
    fn bracketing_chains_hold_on_levels(depth in 1usize..=6, seed in any::<u64>()) {
        let (c, _, net) = level_network(depth, seed);
        let br = Bracketing::new(&net, &c).unwrap();
        for l in grid() {
            let r = br.check(l);
            prop_assert!(r.chain_holds() && r.gap_holds(), "{:?} at λ = {}", r, l);
        }
    }

    #[test]
    fn bracketing_chains_hold_on_cut_sets(depth in 2usize..=7, seed in any::<u64>()) {
        let (c, net) = cut_network(depth, seed);
        prop_assume!(net.cell_count() >= 3);
        let br = Bracketing::new(&net, &c).unwrap();
        for l in grid() {
            let r = br.check(l);
            prop_assert!(r.chain_holds() && r.gap_holds(), "{:?} at λ = {}", r, l);
        }
    }

    #[test]
    fn evolution_identity_with_fresh_child_networks(depth in 2usize..=6, seed in any::<u64>()) {
        let (c, t, net) = level_network(depth, seed);
        let h = EtaHierarchy::new(&net, &c, 1).unwrap();
        let whole = Pencil::new(&net, Boundary::dirichlet()).unwrap();
        let children: Vec<(f64, Pencil<f64>)> = (1..=3u8)
            .map(|j| {
                let cell = Address::ROOT.child(j);
                let fresh: Network = assemble_network(&c.subtree(cell), &t.subtree(cell)).unwrap();
                (c.w(cell).powi(3), Pencil::new(&fresh, Boundary::dirichlet()).unwrap())
            })
            .collect();
        for l in grid() {
            let sum: usize = children.iter().map(|(w3, p)| p.count_below(l * w3)).sum();
            let eta = h.eta_at(Address::ROOT, l);
            prop_assert!((0..=6).contains(&eta));
            prop_assert_eq!(whole.count_below(l) as i64, eta + sum as i64, "λ = {}", l);
        }
    }

    #[test]
    fn eta_is_bounded_on_cut_sets(depth in 2usize..=7, seed in any::<u64>()) {
        let (c, net) = cut_network(depth, seed);
        prop_assume!(net.cell_count() >= 3);
        let h = EtaHierarchy::new(&net, &c, 1).unwrap();
        let floor_t = -net.diameter().ln();
        for t in (0..80).map(|i| -4.0 + 0.25 * i as f64) {
            let eta = h.eta(Address::ROOT, t);
            prop_assert!((0..=6).contains(&eta), "η({}) = {}", t, eta);
            if t < floor_t {
                prop_assert_eq!(eta, 0);
            }
        }
    }

    #[test]
    fn contraction_parameter_does_not_change_counts(depth in 0usize..=4, seed in any::<u64>()) {
        let c = sample_cascade(depth, seed, BUDGET).unwrap();
        let t = PerturbationTable::anchored(&c, 3);
        let nets: Vec<Network> = [0.2, 0.4]
            .iter()
            .map(|&p| {
                let g = DendriteGraph::build(ContractionSystem::new(p).unwrap(), depth);
                Network::assemble(&g, &c, &t).unwrap()
            })
            .collect();
        prop_assert_eq!(&nets[0], &nets[1]);
        let (a, b) = (Pencil::new(&nets[0], Boundary::Neumann).unwrap(), Pencil::new(&nets[1], Boundary::Neumann).unwrap());
        for l in grid() {
            prop_assert_eq!(a.count_below(l), b.count_below(l));
        }
    }

    #[test]
    fn refinement_conserves_cell_mass(depth in 1usize..=6, seed in any::<u64>()) {
        let (c, _, _) = level_network(depth, seed);
        for k in 0..depth {
            for (i, l) in c.level_lengths(k).iter().enumerate() {
                let a = Address::from_index(k, i as u64);
                let kids: f64 = (1..=3u8).map(|j| c.l(a.child(j)).powi(2)).sum();
                prop_assert!((kids - l * l).abs() <= 1e-15 * (l * l).max(1e-300));
            }
        }
    }
}
