use mfnet_core::channel::{direct_gain_distribution, interference_gain_distribution};
use mfnet_core::reduction::*;
use mfnet_core::{Error, NetworkConfig};
use proptest::prelude::*;

fn binom(n: u64, k: u64) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[test]
fn binomial_pmf_matches_closed_form() {
    let p = interference_count_pmf(0.19, 4).unwrap();
    assert!((p[0] - 0.430467).abs() < 1e-6);
    for (k, v) in p.iter().enumerate() {
        let want = binom(4, k as u64) * 0.19f64.powi(k as i32) * 0.81f64.powi(4 - k as i32);
        assert!((v - want).abs() < 1e-14);
    }
    let big = interference_count_pmf(0.003, 3142).unwrap();
    assert!((big.iter().sum::<f64>() - 1.0).abs() < 1e-10);
}

#[test]
fn single_interval_centroid_is_mean() {
    let pmf = interference_count_pmf(0.3, 12).unwrap();
    let q = quantize_counts(&pmf, 1).unwrap();
    assert_eq!(q.intervals, vec![(0, 12)]);
    assert!((q.centroids[0] - 3.6).abs() < 1e-12);
}

proptest! {
    #[test]
    fn quantization_preserves_mean(theta in 0.01f64..0.99, n in 2usize..200, nc in 1usize..4) {
        let pmf = interference_count_pmf(theta, n).unwrap();
        let q = quantize_counts(&pmf, nc).unwrap();
        let total: f64 = q.masses.iter().zip(&q.centroids).map(|(m, c)| m * c).sum();
        prop_assert!((total - theta * n as f64).abs() < 1e-9);
        prop_assert!((q.masses.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        for ((lo, hi), c) in q.intervals.iter().zip(&q.centroids) {
            prop_assert!(*c >= *lo as f64 - 1e-12 && *c <= *hi as f64 + 1e-12);
        }
        // contiguous cover of the support
        prop_assert_eq!(q.intervals[0].0, 0);
        prop_assert_eq!(q.intervals.last().unwrap().1, n);
        prop_assert!(q.intervals.windows(2).all(|w| w[1].0 == w[0].1 + 1));
    }
}

fn table_for(na: usize, nc: usize) -> (NetworkConfig, InterferenceGroupTable) {
    let mut cfg = NetworkConfig::reference();
    cfg.na = na;
    cfg.nc = nc;
    let idist = interference_gain_distribution(&cfg).unwrap();
    let t = build_group_table(&cfg, &idist, 4096).unwrap();
    (cfg, t)
}

#[test]
fn untracked_table() {
    let (cfg, t) = table_for(0, 1);
    assert_eq!(t.n_groups, 1);
    assert_eq!(t.xi, 1.0);
    assert_eq!(t.nr, vec![t.ni as f64]);
    let r = 10.0 * cfg.d0;
    assert_eq!(t.ni, (cfg.lambda * std::f64::consts::PI * r * r).ceil() as usize);
}

#[test]
fn one_tracked_index_two_intervals() {
    let (_, t) = table_for(1, 2);
    assert_eq!(t.u, vec![vec![1], vec![2]]);
    assert_eq!(t.n_groups, 2);
    assert!((t.xi * t.n_groups as f64 - 1.0).abs() < 1e-15);
    for (g, u) in t.u.iter().enumerate() {
        let want = (t.ni as f64 - t.abar[0][u[0] - 1]).max(0.0);
        assert_eq!(t.nr[g], want);
    }
}

#[test]
fn two_tracked_indices_encoding_is_bijective() {
    let (_, t) = table_for(2, 2);
    let mut seen = vec![false; 4];
    for (g, u) in t.u.iter().enumerate() {
        let k = u[0] + 2 * (u[1] - 1);
        assert_eq!(k, g + 1);
        assert!(!seen[g]);
        seen[g] = true;
    }
    assert!(seen.into_iter().all(|s| s));
}

#[test]
fn group_cap_is_a_size_error() {
    let mut cfg = NetworkConfig::reference();
    cfg.na = 4;
    cfg.nc = 3;
    let idist = interference_gain_distribution(&cfg).unwrap();
    assert!(matches!(build_group_table(&cfg, &idist, 80), Err(Error::Size(_))));
    assert!(build_group_table(&cfg, &idist, 81).is_ok());
}

fn manual_table(centroids: Vec<f64>) -> InterferenceGroupTable {
    let nc = centroids.len();
    InterferenceGroupTable {
        ni: 10,
        na: 1,
        nc,
        abar: vec![centroids.clone()],
        quantizations: vec![CountQuantization {
            intervals: (0..nc).map(|i| (i, i)).collect(),
            centroids: centroids.clone(),
            masses: vec![1.0 / nc as f64; nc],
        }],
        u: (1..=nc).map(|l| vec![l]).collect(),
        nr: centroids.iter().map(|c| 10.0 - c).collect(),
        xi: 1.0 / nc as f64,
        n_groups: nc,
    }
}

#[test]
fn posterior_examples() {
    let post = posterior_tables(&manual_table(vec![1.0, 3.0])).unwrap();
    assert!((post.q1[0][0] - 0.25).abs() < 1e-15);
    assert!((post.q1[0][1] - 0.75).abs() < 1e-15);
    let post = posterior_tables(&manual_table(vec![2.0, 2.0])).unwrap();
    assert_eq!(post.q1[0], vec![0.5, 0.5]);
    let (_, t) = table_for(0, 1);
    let post = posterior_tables(&t).unwrap();
    assert_eq!(post.q, vec![1.0]);
    assert!(posterior_tables(&manual_table(vec![0.0, 0.0])).is_err());
}

#[test]
fn posteriors_are_stochastic() {
    for (na, nc) in [(1, 2), (2, 2), (3, 2), (2, 3)] {
        let (_, t) = table_for(na, nc);
        let post = posterior_tables(&t).unwrap();
        for row in post.q1.iter().chain(&post.q2) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert!((post.q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

/// Interference at class `a` written out as the two explicit sums over
/// tracked and untracked interference gains.
fn raw_interference(red: &Reduction, p: &[f64], a: usize) -> f64 {
    let ng = red.direct.len();
    let i = a / ng;
    let t = &red.table;
    let idist = &red.interference;
    let mut total = 0.0;
    for k in 0..t.na {
        for l in 0..t.n_groups {
            for m in 0..ng {
                total += t.abar[k][t.u[i][k] - 1]
                    * red.posteriors.q1[k][l]
                    * red.direct.probs[m]
                    * p[m + l * ng]
                    * idist.gains[k];
            }
        }
    }
    for k in t.na..idist.len() {
        for l in 0..t.n_groups {
            for m in 0..ng {
                total += t.nr[i] * idist.probs[k] * red.posteriors.q[l] * red.direct.probs[m] * p[m + l * ng]
                    * idist.gains[k];
            }
        }
    }
    total
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn equivalent_gains_reproduce_raw_sums(na in 0usize..3, nc in 1usize..3, lambda in 0.2f64..3.0, seed in 0u64..1000) {
        let mut cfg = NetworkConfig::reference();
        cfg.na = na;
        cfg.nc = if na == 0 { 1 } else { nc };
        cfg.lambda = lambda;
        let red = reduce(&cfg).unwrap();
        let n = red.wtm.n_t();
        let p: Vec<f64> = (0..n).map(|i| ((i as u64 * 2654435761 + seed) % 997) as f64 / 997.0 * cfg.p_max).collect();
        let got = red.wtm.interference(&p);
        for a in 0..n {
            let want = raw_interference(&red, &p, a);
            prop_assert!((got[a] - want).abs() <= 1e-9 * want.abs().max(1e-300));
        }
        prop_assert!((red.wtm.omega.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        prop_assert!(red.wtm.gtilde.iter().flatten().all(|v| *v >= 0.0));
    }
}

#[test]
fn untracked_reduction_collapses() {
    let cfg = NetworkConfig::reference();
    let red = reduce(&cfg).unwrap();
    let n = red.wtm.n_t();
    for row in &red.wtm.gtilde {
        assert!(row.iter().all(|v| *v == row[0]));
    }
    let idist = interference_gain_distribution(&cfg).unwrap();
    let direct = direct_gain_distribution(&cfg).unwrap();
    let mean_gain: f64 = idist.gains.iter().zip(&idist.probs).map(|(g, t)| g * t).sum();
    let p: Vec<f64> = (0..n).map(|i| 0.01 * (i + 1) as f64).collect();
    let mean_power: f64 = p.iter().zip(&direct.probs).map(|(a, b)| a * b).sum();
    let want = red.table.ni as f64 * mean_gain * mean_power;
    for v in red.wtm.interference(&p) {
        assert!((v - want).abs() < 1e-12 * want);
    }
}

#[test]
fn zero_interference_gives_zero_matrix() {
    let mut cfg = NetworkConfig::reference();
    cfg.lambda = 1e-9;
    let direct = direct_gain_distribution(&cfg).unwrap();
    let mut idist = interference_gain_distribution(&cfg).unwrap();
    idist.gains.iter_mut().for_each(|g| *g = 0.0);
    let table = build_group_table(&cfg, &idist, 4096).unwrap();
    let post = posterior_tables(&table).unwrap();
    let w = build_wtm(&cfg, &direct, &idist, &table, &post).unwrap();
    assert!(w.gtilde.iter().flatten().all(|v| *v == 0.0));
}

#[test]
fn class_layout_follows_groups() {
    let mut cfg = NetworkConfig::reference();
    cfg.na = 1;
    cfg.nc = 2;
    let red = reduce(&cfg).unwrap();
    let ng = red.direct.len();
    assert_eq!(red.wtm.n_t(), 2 * ng);
    for g in 0..2 {
        for j in 0..ng {
            let a = red.class(g, j);
            assert_eq!(red.wtm.g[a], red.direct.gains[j]);
            assert!((red.wtm.omega[a] - 0.5 * red.direct.probs[j]).abs() < 1e-15);
        }
    }
}

#[test]
fn wtm_json_round_trip() {
    let red = reduce(&NetworkConfig::reference()).unwrap();
    let text = serde_json::to_string(&red.wtm).unwrap();
    assert!(text.contains("\"Gtilde\""));
    assert_eq!(MeanFieldWtm::from_json_str(&text).unwrap(), red.wtm);
}
