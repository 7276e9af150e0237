use mspgd_core::metrics::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn positive_series() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(1e-4f64..1.0, 2..200)
}

proptest! {
    #[test]
    fn rsd_ignores_scale(s in positive_series(), c in 1e-3f64..1e3) {
        let scaled: Vec<f64> = s.iter().map(|x| c * x).collect();
        let (a, b) = (rsd(&s).unwrap(), rsd(&scaled).unwrap());
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1e-9));
    }

    #[test]
    fn common_scale_leaves_db_alone(open in positive_series(), closed in positive_series(), c in 1e-3f64..1e3) {
        let so: Vec<f64> = open.iter().map(|x| c * x).collect();
        let sc: Vec<f64> = closed.iter().map(|x| c * x).collect();
        let (a, b) = (improvement_db(&open, &closed).unwrap(), improvement_db(&so, &sc).unwrap());
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn histogram_keeps_every_sample(s in proptest::collection::vec(-0.1f64..1.0, 0..500), bins in 2usize..50) {
        let h = histogram(&s, bins).unwrap();
        prop_assert_eq!(h.total(), s.len());
        prop_assert_eq!(h.edges.len(), bins + 1);
    }

    #[test]
    fn summary_is_recomputable(open in positive_series(), closed in positive_series()) {
        let r = RunSummary::from_series("p", 5.4, &open, &closed, 1.0, vec![1]).unwrap();
        prop_assert_eq!(r.mean_eta_open, mean(&open).unwrap());
        prop_assert_eq!(r.rsd_closed, rsd(&closed).unwrap());
        prop_assert_eq!(r.improvement_db, 10.0 * (r.mean_eta_closed / r.mean_eta_open).log10());
        prop_assert_eq!(r.histogram_open.clone(), histogram(&open, HISTOGRAM_BINS).unwrap());
    }
}

#[test]
fn uniform_series_fills_bins_evenly() {
    let n = 20_000;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let h = histogram(&s, 10).unwrap();
    let expected = n as f64 / 10.0;
    // multinomial bin count σ = sqrt(N p (1 − p))
    let sigma = (n as f64 * 0.1 * 0.9).sqrt();
    for c in &h.counts {
        assert!((*c as f64 - expected).abs() < 5.0 * sigma, "{:?}", h.counts);
    }
}

#[test]
fn reference_rsd_by_hand() {
    assert!((rsd(&[1.0, 3.0]).unwrap() - 70.7107).abs() < 1e-4);
}
