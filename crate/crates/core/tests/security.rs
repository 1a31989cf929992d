use polqkd::photonic::{ChannelModel, DetectorModel, SourceModel};
use polqkd::protocol::{Basis, ObservedCounts, ProtocolParams};
use polqkd::security::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

fn lab() -> LinkScenario {
    LinkScenario {
        source: SourceModel::new(ProtocolParams::lab_1p5ghz()).with_intrinsic_qber(0.0038, Some(0.0027)),
        channel: ChannelModel::lossy(0.0),
        detector: DetectorModel::default(),
    }
}

fn block(scenario: &LinkScenario, loss: f64, n: u64) -> ObservedCounts {
    scenario.expected_block(loss, n).unwrap().0
}

fn finite_key(counts: &ObservedCounts, sec: &SecurityParams) -> KeyResult {
    let p = ProtocolParams::lab_1p5ghz();
    key_length(&decoy_bounds(counts, &p, sec).unwrap(), counts, sec).unwrap()
}

#[test]
#[allow(clippy::excessive_precision)]
fn entropy_oracle() {
    // 30-digit evaluation of -x log2 x - (1-x) log2(1-x) at x = 0.11.
    let oracle = 0.499_915_958_164_527_995_640_499_594_13;
    let got = binary_entropy(0.11).unwrap();
    assert!((got - oracle).abs() < 1e-12, "{got}");
}

fn coverage(bound: &dyn ConcentrationBound, eps: f64) -> f64 {
    let (n, p) = (100_000u64, 0.01);
    let mean = n as f64 * p;
    let dist = Binomial::new(n, p).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let trials = 100_000;
    let inside = (0..trials)
        .filter(|_| {
            let x = dist.sample(&mut rng) as f64;
            let (lo, hi) = bound.interval(x, n as f64, eps).unwrap();
            lo <= mean && mean <= hi
        })
        .count();
    inside as f64 / trials as f64
}

#[test]
fn interval_coverage_by_sampling() {
    for eps in [1e-2, 1e-3] {
        let c = coverage(&Chernoff, eps);
        assert!(c >= 1.0 - 2.0 * eps, "chernoff eps={eps}: {c}");
        let h = coverage(&Hoeffding, eps);
        assert!(h >= 1.0 - 2.0 * eps, "hoeffding eps={eps}: {h}");
    }
}

#[test]
fn asymptotic_single_photon_yield() {
    // With a small decoy the one-decoy bound is tight to O(mu*nu); compare
    // against the single-photon detections the link model predicts. At
    // 40 dB dead time is negligible. Misalignment errors would enter the
    // vacuum upper bound, so the source is aligned.
    let mut s = lab();
    s.source.params.nu = 0.05;
    s.source = s.source.with_intrinsic_qber(0.0, None);
    let c = block(&s, 40.0, 10_000_000);
    let params = s.source.params;
    let b = asymptotic_bounds(&c, &params, &SecurityParams::default()).unwrap();

    let eta = 10f64.powf(-4.0) * s.detector.efficiency;
    let d = s.detector.dark_rate_hz / params.rep_rate_hz;
    // Single-photon key-basis detection probability per slot, ignoring dead
    // time: one photon through the key arm with no click in the check arm,
    // or a dark count on top.
    let y1 = eta * params.p_z_rx + d * 4.0;
    let p1: f64 = [(params.mu, params.p_mu), (params.nu, 1.0 - params.p_mu)]
        .iter()
        .map(|(m, p)| p * m * (-m).exp())
        .sum();
    let oracle = c.total_sent() * params.p_z_tx * p1 * y1;
    let got = b.s_z1_lower;
    assert!((got / oracle - 1.0).abs() < 0.01, "s_z1={got} oracle={oracle}");
}

#[test]
fn zero_x_errors_give_small_phase_error() {
    let mut s = lab();
    s.source = s.source.with_intrinsic_qber(0.0038, Some(0.0));
    let mut c = block(&s, 10.0, 100_000_000);
    c.m[Basis::X.index()] = [0.0, 0.0];
    let b = decoy_bounds(&c, &s.source.params, &SecurityParams::default()).unwrap();
    assert!(b.phi_z_upper < 0.01, "{}", b.phi_z_upper);
}

#[test]
fn tiny_block_is_degenerate_zero_key() {
    let c = ObservedCounts {
        n: [[50.0, 40.0], [5.0, 4.0]],
        m: [[1.0, 1.0], [0.0, 0.0]],
        slots_sent: [1e6, 1e6],
        acquisition_time_s: 1e-3,
    };
    let sec = SecurityParams::default();
    let b = decoy_bounds(&c, &ProtocolParams::lab_1p5ghz(), &sec).unwrap();
    assert!(b.s_z1_lower <= 90.0 && b.s_z0_lower <= 90.0);
    assert_eq!(key_length(&b, &c, &sec).unwrap().key_length_bits, 0);
}

#[test]
fn missing_decoy_counts_give_zero_key_not_error() {
    let c = ObservedCounts {
        n: [[1e6, 0.0], [1e5, 1e5]],
        m: [[1e3, 0.0], [1e2, 1e2]],
        slots_sent: [1e9, 1e9],
        acquisition_time_s: 1.0,
    };
    let sec = SecurityParams::default();
    let b = decoy_bounds(&c, &ProtocolParams::lab_1p5ghz(), &sec).unwrap();
    assert!(b.degenerate);
    assert_eq!(key_length(&b, &c, &sec).unwrap().key_length_bits, 0);
}

#[test]
fn zero_bounds_zero_key() {
    let c = ObservedCounts {
        acquisition_time_s: 1.0,
        ..Default::default()
    };
    let r = key_length(&SecurityBounds::default(), &c, &SecurityParams::default()).unwrap();
    assert_eq!(r.key_length_bits, 0);
    assert_eq!(r.skr_bps, 0.0);
}

#[test]
fn lab_five_db_rate() {
    let c = block(&lab(), 5.0, 10_000_000);
    let r = finite_key(&c, &SecurityParams::default());
    assert!((9.4e6..=10.4e6).contains(&r.skr_bps), "{}", r.skr_bps);
}

#[test]
fn curve_properties() {
    let grid: Vec<f64> = (0..=55).map(f64::from).collect();
    let pts = skr_vs_loss_curve(&lab(), &grid, &SecurityParams::default()).unwrap();
    let max = pts.iter().map(|p| p.skr_chernoff).fold(0.0, f64::max);
    assert_eq!(pts[0].skr_chernoff, max);
    for w in pts.windows(2) {
        assert!(w[1].skr_chernoff <= w[0].skr_chernoff);
        assert!(w[1].skr_hoeffding <= w[0].skr_hoeffding);
        assert!(w[1].skr_asymptotic <= w[0].skr_asymptotic);
    }
    for p in &pts {
        assert!(p.skr_chernoff >= p.skr_hoeffding, "{p:?}");
        assert!(p.skr_asymptotic >= p.skr_chernoff, "{p:?}");
        if p.skr_hoeffding > 0.0 {
            assert!(p.skr_chernoff > p.skr_hoeffding, "{p:?}");
        }
    }
    assert!(pts.iter().find(|p| p.loss_db == 52.0).unwrap().skr_chernoff > 0.0);
}

#[test]
fn unsorted_grid_rejected() {
    assert!(skr_vs_loss_curve(&lab(), &[10.0, 5.0], &SecurityParams::default()).is_err());
}

#[test]
fn converges_to_asymptote_from_below() {
    let s = lab();
    let sec = SecurityParams::default();
    let asym = asymptotic_key_length(&block(&s, 20.0, 10_000_000), &s.source.params, &sec)
        .unwrap()
        .skr_bps;
    let gaps: Vec<f64> = [100_000u64, 10_000_000, 1_000_000_000]
        .iter()
        .map(|&n| {
            let r = finite_key(&block(&s, 20.0, n), &sec.with_block(n));
            assert!(r.skr_bps <= asym);
            (asym - r.skr_bps) / asym
        })
        .collect();
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
    assert!(gaps[2] < 0.02, "{gaps:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn key_monotone_in_loss(loss in 0.0f64..50.0, step in 0.1f64..5.0) {
        let s = lab();
        let sec = SecurityParams::default();
        let a = finite_key(&block(&s, loss, 10_000_000), &sec).skr_bps;
        let b = finite_key(&block(&s, loss + step, 10_000_000), &sec).skr_bps;
        prop_assert!(b <= a);
    }

    #[test]
    fn key_monotone_in_qber(loss in 0.0f64..40.0, extra in 1.0f64..500.0) {
        let s = lab();
        let sec = SecurityParams::default();
        let c = block(&s, loss, 10_000_000);
        let mut worse = c;
        let y = Basis::Y.index();
        let add = extra.min(worse.n[y][0] - worse.m[y][0]);
        worse.m[y][0] += add;
        prop_assert!(finite_key(&worse, &sec).key_length_bits <= finite_key(&c, &sec).key_length_bits);
    }

    #[test]
    fn key_monotone_in_block(loss in 0.0f64..45.0, exp in 4.0f64..8.0) {
        let s = lab();
        let n1 = 10f64.powf(exp) as u64;
        let n2 = n1 * 4;
        let sec = SecurityParams::default();
        let a = finite_key(&block(&s, loss, n1), &sec.with_block(n1)).skr_bps;
        let b = finite_key(&block(&s, loss, n2), &sec.with_block(n2)).skr_bps;
        prop_assert!(b >= a);
    }

    #[test]
    fn chernoff_key_at_least_hoeffding(loss in 0.0f64..55.0, exp in 4.0f64..9.0) {
        let n = 10f64.powf(exp) as u64;
        let c = block(&lab(), loss, n);
        let sec = SecurityParams::default().with_block(n);
        let ch = finite_key(&c, &sec.with_bound(BoundKind::Chernoff));
        let ho = finite_key(&c, &sec.with_bound(BoundKind::Hoeffding));
        prop_assert!(ch.key_length_bits >= ho.key_length_bits);
    }
}
