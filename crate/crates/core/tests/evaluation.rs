use nhmm::evaluation::{evaluate, ContingencyTable};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[path = "common/metric_oracle.rs"]
mod metric_oracle;
use metric_oracle::{exhaustive_one_to_one, oracle};

fn assert_matches_oracle(counts: Vec<Vec<u64>>, tol: f64) {
    let want = oracle(&counts);
    let t = ContingencyTable::from_counts(counts).unwrap();
    let vm = t.v_measure().unwrap();
    for (name, got, exp) in [
        ("m1", t.many_to_one().unwrap(), want.m1),
        ("o1", t.one_to_one().unwrap(), want.o1),
        ("h", vm.homogeneity, want.h),
        ("c", vm.completeness, want.c),
        ("vm", vm.v_measure, want.vm),
    ] {
        assert!((got - exp).abs() <= tol, "{name}: {got} vs {exp}");
    }
}

#[test]
fn entropy_oracle_on_small_table() {
    assert_matches_oracle(vec![vec![2, 1], vec![0, 3]], 1e-12);
    // H(T) = H(1/3, 2/3), H(T|C) = H(T)/2, H(C) = ln 2, H(C|T) = (4/6)·H(1/4, 3/4)
    let hom = 0.5;
    let h_t = -(0.25 * 0.25f64.ln() + 0.75 * 0.75f64.ln());
    let com = 1.0 - (4.0 / 6.0) * h_t / 2f64.ln();
    let vm = ContingencyTable::from_counts(vec![vec![2, 1], vec![0, 3]])
        .unwrap()
        .v_measure()
        .unwrap();
    assert!((vm.homogeneity - hom).abs() < 1e-12 && (vm.completeness - com).abs() < 1e-12);
    assert!((vm.v_measure - 2.0 * hom * com / (hom + com)).abs() < 1e-12);
}

#[test]
fn greedy_is_not_optimal_on_the_discriminating_table() {
    let counts = vec![vec![3, 3], vec![3, 0]];
    assert_eq!(exhaustive_one_to_one(&counts), 6);
    let t = ContingencyTable::from_counts(counts).unwrap();
    assert!((t.one_to_one().unwrap() - 6.0 / 9.0).abs() < 1e-15);
    assert!(t.one_to_one().unwrap() > 3.0 / 9.0);
}

#[test]
fn large_random_corpus_matches_independent_formulas() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut pred = Vec::new();
    let mut gold = Vec::new();
    let mut tokens = 0;
    while tokens < 10_000 {
        let n = rng.random_range(1..30);
        pred.push(
            (0..n)
                .map(|_| rng.random_range(0..45usize))
                .collect::<Vec<_>>(),
        );
        gold.push(
            (0..n)
                .map(|_| rng.random_range(0..45u32))
                .collect::<Vec<_>>(),
        );
        tokens += n;
    }
    let r = evaluate(&pred, &gold).unwrap();
    let want = oracle(r.table.counts());
    assert_eq!(r.table.total(), tokens as u64);
    for (got, exp) in [
        (r.many_to_one, want.m1),
        (r.one_to_one, want.o1),
        (r.homogeneity, want.h),
        (r.completeness, want.c),
        (r.v_measure, want.vm),
    ] {
        assert!((got - exp).abs() <= 1e-9, "{got} vs {exp}");
    }
}

#[test]
fn identical_and_relabeled_predictions_score_one() {
    let gold: Vec<Vec<u32>> = vec![vec![0, 1, 2, 1], vec![2, 2, 0]];
    let same: Vec<Vec<usize>> = gold
        .iter()
        .map(|s| s.iter().map(|&t| t as usize).collect())
        .collect();
    let perm = [2usize, 0, 1];
    let relabeled: Vec<Vec<usize>> = same
        .iter()
        .map(|s| s.iter().map(|&t| perm[t]).collect())
        .collect();
    for pred in [same, relabeled] {
        let r = evaluate(&pred, &gold).unwrap();
        assert_eq!((r.many_to_one, r.one_to_one), (1.0, 1.0));
        assert!((r.v_measure - 1.0).abs() < 1e-12);
    }
}

fn tables() -> impl Strategy<Value = Vec<Vec<u64>>> {
    (1usize..6, 1usize..6)
        .prop_flat_map(|(k, t)| prop::collection::vec(prop::collection::vec(0u64..20, t), k))
        .prop_filter("nonempty", |c| c.iter().flatten().any(|&x| x > 0))
}

fn permuted(counts: &[Vec<u64>], rows: &[usize], cols: &[usize]) -> Vec<Vec<u64>> {
    rows.iter()
        .map(|&r| cols.iter().map(|&c| counts[r][c]).collect())
        .collect()
}

fn metrics(counts: Vec<Vec<u64>>) -> [f64; 5] {
    let t = ContingencyTable::from_counts(counts).unwrap();
    let vm = t.v_measure().unwrap();
    [
        t.many_to_one().unwrap(),
        t.one_to_one().unwrap(),
        vm.homogeneity,
        vm.completeness,
        vm.v_measure,
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn one_to_one_never_exceeds_many_to_one(counts in tables()) {
        let [m1, o1, ..] = metrics(counts.clone());
        prop_assert!(o1 <= m1 + 1e-15);
        let n: u64 = counts.iter().flatten().sum();
        let exact = exhaustive_one_to_one(&counts) as f64 / n as f64;
        prop_assert!((o1 - exact).abs() < 1e-15);
    }

    #[test]
    fn metrics_are_permutation_invariant(counts in tables(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows: Vec<usize> = (0..counts.len()).collect();
        let mut cols: Vec<usize> = (0..counts[0].len()).collect();
        rand::seq::SliceRandom::shuffle(rows.as_mut_slice(), &mut rng);
        rand::seq::SliceRandom::shuffle(cols.as_mut_slice(), &mut rng);
        let a = metrics(counts.clone());
        let b = metrics(permuted(&counts, &rows, &cols));
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn v_measure_bounds(counts in tables()) {
        let [_, _, h, c, vm] = metrics(counts.clone());
        for x in [h, c, vm] {
            prop_assert!((0.0..=1.0).contains(&x));
        }
        prop_assert!(vm <= (h + c) / 2.0 + 1e-12);
        // swapping the roles of clusters and tags swaps h and c
        let t: Vec<Vec<u64>> = (0..counts[0].len()).map(|j| counts.iter().map(|r| r[j]).collect()).collect();
        let [_, _, h2, c2, vm2] = metrics(t);
        prop_assert!((h - c2).abs() < 1e-12 && (c - h2).abs() < 1e-12 && (vm - vm2).abs() < 1e-12);
    }

    #[test]
    fn doubling_the_corpus_changes_nothing(counts in tables()) {
        let doubled: Vec<Vec<u64>> = counts.iter().map(|r| r.iter().map(|x| 2 * x).collect()).collect();
        let (a, b) = (metrics(counts), metrics(doubled));
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn library_agrees_with_oracle(counts in tables()) {
        assert_matches_oracle(counts, 1e-10);
    }
}
