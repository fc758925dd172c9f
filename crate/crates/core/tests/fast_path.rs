mod common;

use common::checks::fast_path_errors;

#[test]
fn incremental_rows_and_commits_match_recompute() {
    let (incremental, committed) = fast_path_errors(200, 500, 100, 11);
    assert!(incremental <= 1e-9, "incremental error {incremental}");
    assert!(committed <= 1e-9, "post-commit error {committed}");
}

#[test]
fn small_dense_graphs_stay_exact() {
    for seed in 0..5 {
        let (incremental, committed) = fast_path_errors(12, 60, 40, seed);
        assert!(
            incremental <= 1e-12 && committed <= 1e-12,
            "seed {seed}: {incremental} {committed}"
        );
    }
}
