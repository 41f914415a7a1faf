use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rtfn::eval::tables::{expected, FOCUS};
use rtfn::eval::{
    kmeans_fit, kmeans_run, pair_counts, pair_counts_brute_force, rand_index, rank_table, reproduce_tables,
    top1_accuracy, BundledTables, ResultsTable,
};
use rtfn::{RtfnError, Tensor};

fn points(rows: &[&[f64]]) -> Tensor {
    let f = rows[0].len();
    Tensor::new(&[rows.len(), f], rows.iter().flat_map(|r| r.iter().copied()).collect()).unwrap()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

// ---------------- K-means ----------------

#[test]
fn single_cluster_is_the_mean() {
    let p = points(&[&[0.0, 1.0], &[2.0, 3.0], &[4.0, -1.0]]);
    let a = kmeans_fit(&p, 1, 10, 0).unwrap();
    assert_eq!(a.labels, vec![0, 0, 0]);
    assert!((a.centroids.at(&[0, 0]) - 2.0).abs() < 1e-12);
    assert!((a.centroids.at(&[0, 1]) - 1.0).abs() < 1e-12);
}

#[test]
fn two_pairs_example() {
    let p = points(&[&[0.0], &[1.0], &[10.0], &[11.0]]);
    let a = kmeans_fit(&p, 2, 10, 3).unwrap();
    assert_eq!(a.inertia, 1.0);
    assert_eq!(a.labels[0], a.labels[1]);
    assert_eq!(a.labels[2], a.labels[3]);
    assert_ne!(a.labels[0], a.labels[2]);
    let mut c = [a.centroids.data()[0], a.centroids.data()[1]];
    c.sort_by(f64::total_cmp);
    assert_eq!(c, [0.5, 10.5]);
}

#[test]
fn one_cluster_per_point_has_zero_inertia() {
    let p = points(&[&[0.0, 0.0], &[1.0, 5.0], &[-3.0, 2.0], &[7.0, 7.0], &[2.0, -4.0]]);
    let a = kmeans_fit(&p, 5, 3, 1).unwrap();
    assert_eq!(a.inertia, 0.0);
    let mut l = a.labels.clone();
    l.sort();
    assert_eq!(l, vec![0, 1, 2, 3, 4]);
}

#[test]
fn duplicate_points_still_fill_every_cluster() {
    let p = points(&[&[1.0], &[1.0], &[1.0], &[2.0]]);
    let a = kmeans_fit(&p, 3, 5, 0).unwrap();
    assert!(a.labels.iter().all(|&l| l < 3));
    assert_eq!(a.inertia, 0.0);
}

#[test]
fn bad_k_is_a_config_error() {
    let p = points(&[&[0.0], &[1.0]]);
    assert!(matches!(kmeans_fit(&p, 3, 10, 0), Err(RtfnError::Config(_))));
    assert!(matches!(kmeans_fit(&p, 0, 10, 0), Err(RtfnError::Config(_))));
}

#[test]
fn fit_is_deterministic_per_seed() {
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let data: Vec<f64> = (0..60 * 3).map(|_| r.random_range(-1.0..1.0)).collect();
    let p = Tensor::new(&[60, 3], data).unwrap();
    let a = kmeans_fit(&p, 4, 10, 11).unwrap();
    let b = kmeans_fit(&p, 4, 10, 11).unwrap();
    assert_eq!(a.labels, b.labels);
    assert_eq!(a.inertia.to_bits(), b.inertia.to_bits());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lloyd_inertia_never_increases(seed in any::<u64>(), s in 2usize..40, k in 1usize..6, f in 1usize..4) {
        prop_assume!(k <= s);
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..s * f).map(|_| r.random_range(-5.0..5.0)).collect();
        let p = Tensor::new(&[s, f], data).unwrap();
        let run = kmeans_run(&p, k, &mut r).unwrap();
        for w in run.inertia_trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9 * w[0].max(1.0), "{:?}", run.inertia_trace);
        }
        // reported inertia is the within-cluster sum for the returned labels and centroids
        let a = &run.assignment;
        let fresh: f64 = (0..s)
            .map(|i| sq_dist(&p.data()[i * f..(i + 1) * f], &a.centroids.data()[a.labels[i] * f..(a.labels[i] + 1) * f]))
            .sum();
        prop_assert!((fresh - a.inertia).abs() <= 1e-9 * fresh.max(1.0));
        // every point sits with its nearest centroid
        for i in 0..s {
            let x = &p.data()[i * f..(i + 1) * f];
            let own = sq_dist(x, &a.centroids.data()[a.labels[i] * f..(a.labels[i] + 1) * f]);
            for c in 0..k {
                prop_assert!(own <= sq_dist(x, &a.centroids.data()[c * f..(c + 1) * f]) + 1e-12);
            }
        }
    }
}

// ---------------- Rand Index ----------------

#[test]
fn rand_index_examples() {
    assert_eq!(rand_index(&[0, 0, 1, 1], &[0, 0, 1, 1]).unwrap(), 1.0);
    assert_eq!(rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
    assert_eq!(rand_index(&[0, 1, 0, 1], &[0, 0, 1, 1]).unwrap(), 2.0 / 6.0);
    assert_eq!(rand_index(&[0, 0, 0], &[0, 0, 0]).unwrap(), 1.0);
    let c = pair_counts(&[0, 1, 0, 1], &[0, 0, 1, 1]).unwrap();
    assert_eq!((c.positive_agree, c.negative_agree, c.total), (0, 2, 6));
}

#[test]
fn rand_index_rejects_bad_input() {
    assert!(rand_index(&[0, 1], &[0]).is_err());
    assert!(rand_index(&[0], &[0]).is_err());
}

#[test]
fn contingency_counts_match_pairwise_enumeration() {
    let mut r = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..100 {
        let n = r.random_range(2..120);
        let ka = r.random_range(1..7);
        let kb = r.random_range(1..7);
        let a: Vec<usize> = (0..n).map(|_| r.random_range(0..ka)).collect();
        let b: Vec<usize> = (0..n).map(|_| r.random_range(0..kb)).collect();
        assert_eq!(pair_counts(&a, &b).unwrap(), pair_counts_brute_force(&a, &b).unwrap());
    }
}

proptest! {
    #[test]
    fn rand_index_is_label_invariant_and_bounded(
        a in prop::collection::vec(0usize..5, 2..60),
        perm_seed in any::<u64>(),
    ) {
        let mut r = ChaCha8Rng::seed_from_u64(perm_seed);
        let b: Vec<usize> = a.iter().map(|_| r.random_range(0..4)).collect();
        let ri = rand_index(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&ri));
        prop_assert_eq!(ri, rand_index(&b, &a).unwrap());
        // relabel `a` by a permutation of its ids
        let mut perm: Vec<usize> = (0..5).collect();
        for i in (1..5).rev() {
            perm.swap(i, r.random_range(0..=i));
        }
        let relabeled: Vec<usize> = a.iter().map(|&l| perm[l] + 10).collect();
        prop_assert_eq!(ri, rand_index(&relabeled, &b).unwrap());
        prop_assert_eq!(rand_index(&a, &a).unwrap(), 1.0);
    }
}

// ---------------- accuracy ----------------

#[test]
fn accuracy_examples() {
    assert_eq!(top1_accuracy(&[0, 1, 1, 0], &[0, 1, 0, 0]).unwrap(), 0.75);
    assert_eq!(top1_accuracy(&[2, 2], &[2, 2]).unwrap(), 1.0);
    assert!(matches!(top1_accuracy(&[], &[]), Err(RtfnError::Data { .. })));
    assert!(matches!(top1_accuracy(&[1], &[1, 0]), Err(RtfnError::Data { .. })));
}

proptest! {
    #[test]
    fn accuracy_ignores_sample_order(pairs in prop::collection::vec((0usize..3, 0usize..3), 1..50), seed in any::<u64>()) {
        let (p, t): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
        let mut shuffled = pairs.clone();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, r.random_range(0..=i));
        }
        let (ps, ts): (Vec<_>, Vec<_>) = shuffled.into_iter().unzip();
        let a = top1_accuracy(&p, &t).unwrap();
        prop_assert_eq!(a, top1_accuracy(&ps, &ts).unwrap());
        prop_assert!((0.0..=1.0).contains(&a));
    }
}

// ---------------- result tables ----------------

/// Rank of `mine` among `all` via an explicit sort: tied entries share the
/// mean of the 1-based positions they occupy.
fn sorted_rank(all: &[f64], mine: f64) -> f64 {
    let mut v = all.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    let pos: Vec<usize> = v
        .iter()
        .enumerate()
        .filter(|(_, &x)| (x - mine).abs() <= 1e-9)
        .map(|(i, _)| i + 1)
        .collect();
    pos.iter().sum::<usize>() as f64 / pos.len() as f64
}

#[test]
fn bundled_tables_reproduce_published_aggregates() {
    let tables = BundledTables::embedded().unwrap();
    let t1 = rank_table(&tables.appendix, FOCUS).unwrap();
    assert_eq!(
        (t1.win, t1.tie, t1.lose, t1.best),
        (expected::TABLE1_WIN, expected::TABLE1_TIE, expected::TABLE1_LOSE, expected::TABLE1_BEST)
    );
    assert_eq!((t1.win, t1.tie, t1.lose, t1.best), (11, 29, 45, 40));
    assert_eq!(t1.count, 85);

    let t3 = rank_table(&tables.long_series, FOCUS).unwrap();
    assert!((t3.mean - 0.856049).abs() <= 1e-6, "{}", t3.mean);

    let t4 = rank_table(&tables.rand_index, FOCUS).unwrap();
    assert!((t4.mean - 0.7189).abs() <= 5e-5, "{}", t4.mean);

    let checks = reproduce_tables(&tables).unwrap();
    assert!(checks.iter().all(|c| c.ok));
    assert_eq!(checks[0].line, "Table1 best=40 win=11 tie=29 lose=45 OK");
}

#[test]
fn average_rank_matches_sort_based_oracle() {
    let tables = BundledTables::embedded().unwrap();
    for table in [&tables.appendix, &tables.long_series, &tables.rand_index] {
        let col = table.column(FOCUS).unwrap();
        let mut sum = 0.0;
        let mut n = 0;
        for row in &table.values {
            let Some(mine) = row[col] else { continue };
            let present: Vec<f64> = row.iter().filter_map(|v| *v).collect();
            sum += sorted_rank(&present, mine);
            n += 1;
        }
        let got = rank_table(table, FOCUS).unwrap().average_rank;
        assert!((got - sum / n as f64).abs() < 1e-12);
    }
}

#[test]
fn all_equal_column_ties_everywhere() {
    let t = ResultsTable::parse_csv("dataset,A,Ours,B\nx,0.5,0.5,0.5\ny,0.25,0.25,---\n").unwrap();
    let s = rank_table(&t, "Ours").unwrap();
    assert_eq!((s.win, s.tie, s.lose, s.best), (0, 2, 0, 2));
    assert_eq!(s.average_rank, 1.75);
}

#[test]
fn missing_cells_are_skipped() {
    let t = ResultsTable::parse_csv("dataset,A,Ours\nx,---,0.9\ny,0.8,---\nz,0.95,0.9\n").unwrap();
    let s = rank_table(&t, "Ours").unwrap();
    assert_eq!((s.win, s.tie, s.lose, s.count), (1, 0, 1, 2));
    assert!((s.mean - 0.9).abs() < 1e-15);
}

#[test]
fn malformed_tables_are_rejected() {
    assert!(ResultsTable::parse_csv("").is_err());
    assert!(ResultsTable::parse_csv("dataset,A\nx,1.5\n").is_err());
    assert!(ResultsTable::parse_csv("dataset,A\nx,abc\n").is_err());
    let e = ResultsTable::parse_csv("dataset,A,B\nx,0.1\n").unwrap_err();
    assert!(matches!(e, RtfnError::Data { line: Some(2), .. }), "{e:?}");
    let t = ResultsTable::parse_csv("dataset,A\nx,0.1\n").unwrap();
    assert!(rank_table(&t, "Ours").is_err());
}

proptest! {
    #[test]
    fn win_tie_lose_partition_present_rows(
        rows in prop::collection::vec(prop::collection::vec(prop::option::weighted(0.8, 0u8..5), 4), 1..30)
    ) {
        let mut csv = String::from("dataset,A,B,C,Ours\n");
        for (i, r) in rows.iter().enumerate() {
            let cells: Vec<String> = r.iter().map(|c| match c { Some(v) => format!("{}", *v as f64 / 4.0), None => "---".into() }).collect();
            csv.push_str(&format!("d{i},{}\n", cells.join(",")));
        }
        let t = ResultsTable::parse_csv(&csv).unwrap();
        let present = rows.iter().filter(|r| r[3].is_some()).count();
        match rank_table(&t, "Ours") {
            Ok(s) => {
                prop_assert_eq!(s.win + s.tie + s.lose, s.count);
                prop_assert_eq!(s.count, present);
                prop_assert_eq!(s.best, s.win + s.tie);
                prop_assert!(s.average_rank >= 1.0);
            }
            Err(_) => prop_assert_eq!(present, 0),
        }
    }
}
