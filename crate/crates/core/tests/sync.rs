use polqkd::photonic::{
    counts_from_assignments, simulate_slots, Channel, ChannelModel, DetectorModel, SourceModel, SymbolStream, TimeTag,
    TxClock,
};
use polqkd::protocol::{generate_sequence, qber_basis, Basis, ProtocolParams};
use polqkd::sync::*;
use polqkd::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Normal};

const P_1G5: f64 = 2000.0 / 3.0;

/// Tags on a thinned slot grid with Gaussian jitter; returns tags and the
/// true slot of each.
fn grid_tags(period: f64, p_det: f64, n: usize, sigma: f64, seed: u64) -> (Vec<TimeTag>, Vec<u64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gap = Geometric::new(p_det).unwrap();
    let jitter = Normal::new(0.0, sigma.max(1e-300)).unwrap();
    let offset = 5.0e6;
    let mut slot = 0u64;
    let mut tags = Vec::with_capacity(n);
    let mut slots = Vec::with_capacity(n);
    for _ in 0..n {
        slot += gap.sample(&mut rng) + 1;
        let j = if sigma > 0.0 { jitter.sample(&mut rng) } else { 0.0 };
        let t = (offset + slot as f64 * period + j).round() as u64;
        tags.push(TimeTag {
            channel: Channel::ALL[rng.gen_range(0..4)],
            time_ps: t,
        });
        slots.push(slot);
    }
    tags.sort_by_key(|t| t.time_ps);
    (tags, slots)
}

/// Ordinary least squares of time on slot index.
fn regression_period(tags: &[TimeTag], slots: &[u64]) -> f64 {
    let n = tags.len() as f64;
    let mk = slots.iter().map(|&k| k as f64).sum::<f64>() / n;
    let mt = tags.iter().map(|t| t.time_ps as f64).sum::<f64>() / n;
    let (mut skk, mut skt) = (0.0, 0.0);
    for (t, &k) in tags.iter().zip(slots) {
        let dk = k as f64 - mk;
        skk += dk * dk;
        skt += dk * (t.time_ps as f64 - mt);
    }
    skt / skk
}

#[test]
fn noiseless_grid_period() {
    let (tags, _) = grid_tags(P_1G5, 1.0, 1_000_000, 0.0, 1);
    let p = estimate_period(&tags, P_1G5, 10_000).unwrap();
    assert!((p - P_1G5).abs() < 1e-6, "{p}");
}

#[test]
fn jittered_offset_grid_period() {
    let truth = P_1G5 * (1.0 + 20e-6);
    let (tags, slots) = grid_tags(truth, 0.01, 1_000_000, 30.0, 2);
    let oracle = regression_period(&tags, &slots);
    let p = estimate_period(&tags, P_1G5, 10_000).unwrap();
    assert!(((p - truth) / truth).abs() < 1e-9, "p={p} truth={truth}");
    assert!(((p - oracle) / oracle).abs() < 1e-9, "p={p} oracle={oracle}");
}

#[test]
fn random_tags_do_not_lock() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut times: Vec<u64> = (0..20_000).map(|_| rng.gen_range(0..10_000_000_000u64)).collect();
    times.sort_unstable();
    let tags: Vec<TimeTag> = times
        .into_iter()
        .map(|t| TimeTag {
            channel: Channel::L,
            time_ps: t,
        })
        .collect();
    assert!(matches!(estimate_period(&tags, P_1G5, 10_000), Err(Error::NoLock(_))));
}

#[test]
fn too_few_tags_rejected() {
    let (tags, _) = grid_tags(P_1G5, 0.1, 500, 0.0, 4);
    assert!(estimate_period(&tags, P_1G5, 10_000).is_err());
}

#[test]
fn period_estimator_unbiased() {
    let truth = P_1G5 * (1.0 - 7e-6);
    let errs: Vec<f64> = (0..100)
        .map(|seed| {
            let (tags, _) = grid_tags(truth, 0.02, 20_000, 30.0, 100 + seed);
            estimate_period(&tags, P_1G5, 10_000).unwrap() - truth
        })
        .collect();
    let n = errs.len() as f64;
    let mean = errs.iter().sum::<f64>() / n;
    let sd = (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(mean.abs() < 1.96 * sd / n.sqrt(), "mean={mean:e} sd={sd:e}");
}

struct Bench {
    stream: SymbolStream,
    src: SourceModel,
    clock: TxClock,
}

fn bench(prefix_seed: u64) -> Bench {
    let params = ProtocolParams::lab_1p5ghz();
    let prefix = generate_sequence(prefix_seed, 1_000_000, &params).unwrap();
    let block = generate_sequence(77, 4096, &params).unwrap();
    Bench {
        stream: SymbolStream::new(prefix, block).unwrap(),
        src: SourceModel::new(params).with_intrinsic_qber(0.0155, Some(0.0073)),
        clock: TxClock {
            period_ps: P_1G5,
            offset_ps: 123_456.0,
        },
    }
}

fn tag_det(sigma: f64) -> DetectorModel {
    DetectorModel {
        jitter_sigma_ps: sigma,
        ..DetectorModel::default()
    }
}

#[test]
fn zero_loss_loopback_lag() {
    let b = bench(11);
    let det = DetectorModel {
        dead_time_ns: 0.0,
        ..DetectorModel::ideal()
    };
    let sim = simulate_slots(&b.stream, 100_000, &b.src, &ChannelModel::lossy(0.0), &det, b.clock, 5).unwrap();
    let p = estimate_period(&sim.tags, P_1G5, 10_000).unwrap();
    let off = estimate_offset(&sim.tags, p, &b.stream.prefix).unwrap();
    assert!((off - b.clock.offset_ps).abs() < P_1G5 / 100.0, "{off}");
}

#[test]
fn lock_at_seventeen_db() {
    let b = bench(12);
    let sim = simulate_slots(
        &b.stream,
        30_000_000,
        &b.src,
        &ChannelModel::lossy(17.5),
        &tag_det(30.0),
        b.clock,
        6,
    )
    .unwrap();
    let cfg = SyncConfig::new(P_1G5, b.stream.prefix.clone());
    let period = estimate_period_with(&sim.tags, &cfg).unwrap();
    let off = estimate_offset_with(&sim.tags, period.period_ps, &b.stream.prefix, 6.0).unwrap();
    assert!(off.confidence > 6.0);
    assert_eq!(off.first_slot, sim.truth[0].slot_index);
    assert!((off.offset_ps - b.clock.offset_ps).abs() < P_1G5 / 10.0);
}

#[test]
fn wrong_prefix_does_not_lock() {
    let b = bench(13);
    let sim = simulate_slots(
        &b.stream,
        30_000_000,
        &b.src,
        &ChannelModel::lossy(17.5),
        &tag_det(30.0),
        b.clock,
        7,
    )
    .unwrap();
    let other = generate_sequence(999, 1_000_000, &b.src.params).unwrap();
    let p = estimate_period(&sim.tags, P_1G5, 10_000).unwrap();
    assert!(matches!(estimate_offset(&sim.tags, p, &other), Err(Error::NoLock(_))));
}

#[test]
fn noiseless_residuals_vanish() {
    let (tags, slots) = grid_tags(P_1G5 * 3.0, 1.0, 10_000, 0.0, 8);
    // Integer-ps grid at a 2000 ps period has exact centers.
    let clock = ClockEstimate {
        period_ps: 2000.0,
        offset_ps: 5.0e6,
        residual_sigma_ps: 0.0,
        confidence: 10.0,
    };
    let a = assign_slots(&tags, &clock);
    assert!(a.residuals_ps.iter().all(|&r| r == 0.0));
    assert!(a.assigned.iter().zip(&slots).all(|((s, _), t)| s == t));
}

#[test]
fn fitted_sigma_matches_sample_residuals() {
    let (tags, slots) = grid_tags(P_1G5, 0.01, 1_000_000, 30.0, 9);
    let cfg = SyncConfig::new(P_1G5, Vec::new());
    let p = estimate_period_with(&tags, &cfg).unwrap().period_ps;
    let clock = ClockEstimate {
        period_ps: p,
        offset_ps: 5.0e6,
        residual_sigma_ps: 0.0,
        confidence: 10.0,
    };
    let a = assign_slots(&tags, &clock);
    let truth_res: Vec<f64> = tags
        .iter()
        .zip(&slots)
        .map(|(t, &k)| t.time_ps as f64 - 5.0e6 - k as f64 * P_1G5)
        .collect();
    let m = truth_res.iter().sum::<f64>() / truth_res.len() as f64;
    let sd = (truth_res.iter().map(|r| (r - m).powi(2)).sum::<f64>() / truth_res.len() as f64).sqrt();
    assert!((a.sigma_ps / sd - 1.0).abs() < 0.05, "fit={} sample={sd}", a.sigma_ps);
    assert!((a.sigma_ps / 30.0 - 1.0).abs() < 0.05);
    assert!(a.warnings.is_empty());
}

#[test]
fn broad_residuals_warn() {
    let (tags, _) = grid_tags(P_1G5, 0.05, 20_000, 0.0, 10);
    let clock = ClockEstimate {
        period_ps: P_1G5 * 1.001,
        offset_ps: 5.0e6,
        residual_sigma_ps: 0.0,
        confidence: 10.0,
    };
    assert!(!assign_slots(&tags, &clock).warnings.is_empty());
}

fn synced(sigma: f64, seed: u64) -> (f64, f64, f64, f64) {
    let b = bench(14);
    let ch = ChannelModel::lossy(17.5);
    let sim = simulate_slots(&b.stream, 100_000_000, &b.src, &ch, &tag_det(sigma), b.clock, seed).unwrap();
    let cfg = SyncConfig::new(P_1G5, b.stream.prefix.clone());
    let res = synchronize(&sim.tags, &cfg).unwrap();
    let truth: Vec<u64> = sim.truth.iter().map(|t| t.slot_index).collect();
    let acc = assignment_accuracy(&res.assignment.assigned, &truth);
    let rate = b.src.params.rep_rate_hz;
    let got = counts_from_assignments(&b.stream, &res.assignment.assigned, sim.slots, rate, 1).unwrap();
    let gt = counts_from_assignments(&b.stream, &sim.true_assignments(), sim.slots, rate, 1).unwrap();
    let dq = (qber_basis(&got, Basis::Y).unwrap() - qber_basis(&gt, Basis::Y).unwrap()).abs();
    (acc, dq, res.assignment.sigma_ps, res.clock().confidence)
}

#[test]
fn end_to_end_sync_preserves_statistics() {
    let (acc, dq, sigma, conf) = synced(30.0, 21);
    assert!(acc >= 0.999, "{acc}");
    assert!(dq < 5e-4, "{dq}");
    assert!(conf > 6.0);
    assert!((sigma / 30.0 - 1.0).abs() < 0.1, "{sigma}");
}

#[test]
fn jitter_ordering_preserved() {
    let (_, _, narrow, _) = synced(25.0, 31);
    let (_, _, wide, _) = synced(45.0, 31);
    assert!(wide > narrow);
}

#[test]
fn piecewise_relock_keeps_numbering() {
    let b = bench(15);
    let sim = simulate_slots(
        &b.stream,
        40_000_000,
        &b.src,
        &ChannelModel::lossy(17.5),
        &tag_det(30.0),
        b.clock,
        41,
    )
    .unwrap();
    let mut cfg = SyncConfig::new(P_1G5, b.stream.prefix.clone());
    cfg.relock_tags = 20_000;
    let res = synchronize(&sim.tags, &cfg).unwrap();
    assert!(res.clocks.len() >= 3);
    let truth: Vec<u64> = sim.truth.iter().map(|t| t.slot_index).collect();
    assert!(assignment_accuracy(&res.assignment.assigned, &truth) >= 0.999);
}

#[test]
fn deterministic_estimate() {
    let (tags, _) = grid_tags(P_1G5, 0.02, 30_000, 30.0, 50);
    let a = estimate_period(&tags, P_1G5, 10_000).unwrap();
    let b = estimate_period(&tags, P_1G5, 10_000).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
}

#[test]
fn histogram_csv() {
    let h = jitter_histogram(&[0.0, 1.0, -1.0], 2.0, 4.0).unwrap();
    let mut buf = Vec::new();
    write_histogram_csv(&h, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("bin_center_ps,count\n"));
    assert_eq!(h.iter().map(|x| x.1).sum::<u64>(), 3);
}
