use mfnet_core::channel::*;
use mfnet_core::config::REFERENCE_FADING;
use mfnet_core::rng::stream_rng;
use mfnet_core::NetworkConfig;
use proptest::prelude::*;

fn single_level(nm: usize) -> NetworkConfig {
    let mut cfg = NetworkConfig::reference();
    cfg.fading_levels = vec![(1.0, 1.0)];
    cfg.nm = nm;
    cfg.nm_i = nm.max(1);
    cfg
}

#[test]
fn empty_process_at_zero_intensity() {
    let mut cfg = NetworkConfig::reference();
    cfg.lambda = 0.0;
    assert!(sample_ppp(&cfg, 3).unwrap().is_empty());
}

#[test]
fn ppp_count_mean() {
    let mut cfg = NetworkConfig::reference();
    cfg.lambda = 1.0;
    cfg.area_side = 10.0;
    let total: usize = (0..10_000).map(|s| sample_ppp(&cfg, s).unwrap().len()).sum();
    let mean = total as f64 / 1e4;
    assert!((97.0..=103.0).contains(&mean), "mean count {mean}");
}

#[test]
fn ppp_is_deterministic_and_inside() {
    let cfg = NetworkConfig::reference();
    let a = sample_ppp(&cfg, 11).unwrap();
    let b = sample_ppp(&cfg, 11).unwrap();
    assert_eq!(a, b);
    assert!(a.positions.iter().flatten().all(|x| (0.0..cfg.area_side).contains(x)));
    assert_ne!(a, sample_ppp(&cfg, 12).unwrap());
}

#[test]
fn ppp_rejects_bad_area() {
    let mut cfg = NetworkConfig::reference();
    cfg.area_side = 0.0;
    assert!(sample_ppp(&cfg, 0).unwrap_err().is_config());
}

#[test]
fn ring_probabilities() {
    assert_eq!(distance_pmf(1).unwrap(), vec![1.0]);
    assert_eq!(distance_pmf(2).unwrap(), vec![0.25, 0.75]);
    assert!(distance_pmf(0).is_err());
    for nm in 1..40 {
        let s: f64 = distance_pmf(nm).unwrap().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}

#[test]
fn bounded_path_loss() {
    assert_eq!(path_loss(0.0, 3.0).unwrap(), 1.0);
    assert_eq!(path_loss(1.0, 3.0).unwrap(), 0.125);
    assert!((path_loss(2.0, 3.0).unwrap() - 1.0 / 27.0).abs() < 1e-15);
    assert!(path_loss(-0.1, 3.0).is_err());
}

proptest! {
    #[test]
    fn path_loss_decreasing(d in 0.0f64..100.0, step in 1e-6f64..10.0, alpha in 2.01f64..6.0) {
        let a = path_loss(d, alpha).unwrap();
        let b = path_loss(d + step, alpha).unwrap();
        prop_assert!(b < a);
        prop_assert!(a <= 1.0);
    }

    #[test]
    fn sorting_keeps_pairs(nm in 1usize..6, extra in 0usize..6, alpha in 2.1f64..5.0) {
        let mut cfg = NetworkConfig::reference();
        cfg.nm = nm;
        cfg.nm_i = nm + extra;
        cfg.alpha = alpha;
        for dist in [direct_gain_distribution(&cfg).unwrap(), interference_gain_distribution(&cfg).unwrap()] {
            let s: f64 = dist.probs.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(dist.gains.windows(2).all(|w| w[0] >= w[1]));
            // unsorted expectation, rebuilt from the definition
            let rings = dist.len() / cfg.fading_levels.len();
            let mut mean = 0.0;
            for &(h, beta) in &cfg.fading_levels {
                for (l, g) in distance_pmf(rings).unwrap().iter().enumerate() {
                    mean += beta * g * h * (2.0 + l as f64).powf(-alpha);
                }
            }
            prop_assert!((dist.mean() - mean).abs() < 1e-12);
        }
    }
}

#[test]
fn singleton_direct_law() {
    let d = direct_gain_distribution(&single_level(1)).unwrap();
    assert_eq!(d.gains, vec![0.125]);
    assert_eq!(d.probs, vec![1.0]);
}

#[test]
fn reference_direct_top_entry() {
    let d = direct_gain_distribution(&NetworkConfig::reference()).unwrap();
    assert_eq!(d.len(), 8);
    assert!((d.gains[0] - 4.6045 * 0.125).abs() < 1e-12);
    assert!((d.probs[0] - 0.0625).abs() < 1e-15);
}

#[test]
fn interference_law_shape() {
    let cfg = NetworkConfig::reference();
    let d = interference_gain_distribution(&cfg).unwrap();
    assert_eq!(d.len(), 4 * 10);
    assert!((ring_pmf(10)[9] - 0.19).abs() < 1e-15);
    assert_eq!(ring_pmf(1), vec![1.0]);
}

#[test]
fn rayleigh_quantization_reproduces_reference_table() {
    let levels = rayleigh_levels(4).unwrap();
    for ((h, b), (h_ref, b_ref)) in levels.iter().zip(REFERENCE_FADING) {
        assert!((h - h_ref).abs() < 1e-3, "{h} vs {h_ref}");
        assert_eq!(*b, b_ref);
    }
    for n in [1, 2, 6] {
        let l = rayleigh_levels(n).unwrap();
        // centroids of the amplitude, squared, stay below E[h] = 2
        assert!(l.iter().map(|(h, b)| h * b).sum::<f64>() < 2.0);
        assert!(l.windows(2).all(|w| w[0].0 > w[1].0));
    }
}

#[test]
fn empirical_ring_law_matches() {
    let nm = 5;
    let mut rng = stream_rng(2024, 0);
    let side = 1000.0;
    let center = [500.0, 500.0];
    let mut counts = vec![0usize; nm];
    let n = 100_000;
    for _ in 0..n {
        let p = uniform_in_disk(&mut rng, center, nm as f64, side);
        let d = torus_distance(center, p, side);
        counts[ring_index(d, 1.0) - 1] += 1;
    }
    let tv: f64 = counts
        .iter()
        .zip(distance_pmf(nm).unwrap())
        .map(|(c, p)| (*c as f64 / n as f64 - p).abs())
        .sum::<f64>()
        / 2.0;
    assert!(tv < 0.02, "tv {tv}");
}

#[test]
fn bucket_index_nearest_is_exact() {
    let mut rng = stream_rng(5, 1);
    let pts = sample_ppp_in(0.5, 20.0, &mut rng).unwrap();
    let idx = BucketIndex::new(&pts, 20.0, 2.0);
    let queries = sample_ppp_in(0.2, 20.0, &mut rng).unwrap();
    for q in queries {
        let (i, d) = idx.nearest(q).unwrap();
        let best = pts.iter().map(|p| torus_distance(*p, q, 20.0)).fold(f64::INFINITY, f64::min);
        assert_eq!(d, best);
        assert_eq!(torus_distance(pts[i], q, 20.0), best);
    }
}

#[test]
fn node_csv_has_header() {
    let cfg = NetworkConfig::reference();
    let nodes = sample_ppp(&cfg, 1).unwrap();
    let mut buf = Vec::new();
    nodes.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("x,y\n"));
    assert_eq!(text.lines().count(), nodes.len() + 1);
}

#[test]
fn config_json_round_trip() {
    let cfg = NetworkConfig::reference();
    let back = NetworkConfig::from_json_str(&cfg.to_json().unwrap()).unwrap();
    assert_eq!(cfg, back);
    assert!(cfg.to_json().unwrap().contains("\"NmI\""));
}
