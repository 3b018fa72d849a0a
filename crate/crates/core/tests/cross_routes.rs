//! The recursion against brute-force gluing on random small models.

use num_bigint::BigUint;
use proptest::prelude::*;

use sdmaps::oracle::count_rooted_planar;
use sdmaps::{
    count_m0, count_planar, symmetrized_count, symmetrized_count_with, Convention, EnumOptions, MapCountTable,
    Monomial, MultiIndex, StarList, StarSpec,
};

fn word(max_len: usize) -> impl Strategy<Value = Monomial> {
    prop::collection::vec(0u8..2, 0..=max_len).prop_map(Monomial::new)
}

fn model() -> impl Strategy<Value = (StarSpec, Monomial, MultiIndex)> {
    (
        prop::collection::vec(word(4).prop_filter("non-empty", |w| w.degree() > 0), 1..=3),
        word(4),
    )
        .prop_filter_map("valid spec", |(words, root)| {
            StarSpec::new(2, words).ok().map(|s| (s, root))
        })
        .prop_flat_map(|(spec, root)| {
            let n = spec.len();
            (Just(spec), Just(root), prop::collection::vec(0u32..=2, n))
        })
        .prop_filter_map("small enough", |(spec, root, k)| {
            let half_edges: usize = root.degree()
                + k.iter()
                    .enumerate()
                    .map(|(j, &kj)| kj as usize * spec.word(j).degree())
                    .sum::<usize>();
            (k.iter().sum::<u32>() <= 3 && half_edges <= 14).then(|| (spec, root, MultiIndex::new(k)))
        })
}

fn multiset(spec: &StarSpec, k: &MultiIndex) -> Vec<(Monomial, usize)> {
    k.entries()
        .iter()
        .enumerate()
        .map(|(j, &kj)| (spec.word(j).clone(), kj as usize))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn plain_recursion_counts_labeled_maps((spec, root, k) in model()) {
        let table = MapCountTable::with_convention(spec.clone(), Convention::Plain);
        let sd = table.map_count(&root, &k).unwrap();
        let brute = count_m0(Some(&root), &multiset(&spec, &k)).unwrap();
        prop_assert_eq!(sd, BigUint::from(brute));
    }

    #[test]
    fn doubled_recursion_counts_symmetrized_maps((spec, root, k) in model()) {
        let table = MapCountTable::new(spec.clone());
        let sd = table.map_count(&root, &k).unwrap();
        prop_assert_eq!(sd, symmetrized_count(Some(&root), &spec, &k).unwrap());
    }

    #[test]
    fn pruning_never_changes_counts((spec, root, k) in model()) {
        let pruned = EnumOptions { prune_nonplanar: true, ..EnumOptions::default() };
        let full = symmetrized_count(Some(&root), &spec, &k).unwrap();
        prop_assert_eq!(full, symmetrized_count_with(Some(&root), &spec, &k, &pruned).unwrap());
    }

    #[test]
    fn rooted_counts_agree((spec, root, k) in model()) {
        prop_assume!(root.degree() > 0);
        let table = MapCountTable::with_convention(spec.clone(), Convention::Plain);
        let stars = StarList::from_multiset(Some(&root), &multiset(&spec, &k));
        let brute = count_rooted_planar(&stars, &EnumOptions::default()).unwrap();
        prop_assert_eq!(table.rooted_count(&root, &k).unwrap(), BigUint::from(brute));
    }

    #[test]
    fn counts_are_tracial((spec, p, k) in model(), q in word(3)) {
        let table = MapCountTable::new(spec);
        prop_assert_eq!(table.map_count(&p.concat(&q), &k).unwrap(), table.map_count(&q.concat(&p), &k).unwrap());
    }

    #[test]
    fn labeled_count_is_rotation_invariant((spec, root, k) in model()) {
        prop_assume!(root.degree() > 1);
        let stars = StarList::from_multiset(Some(&root), &multiset(&spec, &k));
        let rotated = StarList::from_multiset(Some(&root.rotate(1)), &multiset(&spec, &k));
        let opts = EnumOptions::default();
        prop_assert_eq!(count_planar(&stars, &opts).unwrap(), count_planar(&rotated, &opts).unwrap());
    }
}
