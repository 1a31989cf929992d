use polqkd::protocol::*;
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn lab() -> ProtocolParams {
    ProtocolParams::lab_1p5ghz()
}

#[test]
fn class_frequencies_pass_chi_square() {
    let p = lab();
    let seq = generate_sequence(2024, 2_000_000, &p).unwrap();
    let n = seq.len() as f64;
    let mut obs = [[0.0; 2]; 2];
    for s in &seq {
        obs[s.basis.index()][s.intensity.index()] += 1.0;
    }
    let mut chi2 = 0.0;
    for b in Basis::ALL {
        for k in Intensity::ALL {
            let e = n * p.tx_basis_prob(b) * p.intensity_prob(k);
            chi2 += (obs[b.index()][k.index()] - e).powi(2) / e;
        }
    }
    // Four cells, probabilities fixed in advance: three degrees of freedom.
    let crit = ChiSquared::new(3.0).unwrap().inverse_cdf(1.0 - 1e-3);
    assert!(chi2 < crit, "chi2={chi2} crit={crit}");
}

#[test]
fn key_bits_are_balanced() {
    let seq = generate_sequence(99, 1_000_000, &lab()).unwrap();
    let (ones, total) = seq
        .iter()
        .filter(|s| s.basis == Basis::Y)
        .fold((0.0, 0.0), |(o, t), s| (o + f64::from(s.bit), t + 1.0));
    // Two-sided z-test at 1e-3.
    let z = (ones - total / 2.0) / (total / 4.0f64).sqrt();
    assert!(z.abs() < 3.29, "z={z}");
}

#[test]
fn check_basis_sends_one_state() {
    let seq = generate_sequence(5, 10_000, &lab()).unwrap();
    assert!(seq.iter().filter(|s| s.basis == Basis::X).all(|s| s.bit == 0));
    assert!(seq.iter().all(SymbolRecord::is_valid));
}

fn outcomes(seq: &[SymbolRecord], picks: &[(bool, bool, bool)]) -> Vec<RxOutcome> {
    seq.iter()
        .zip(picks)
        .filter(|(_, p)| p.0)
        .map(|(s, &(_, y, flip))| RxOutcome {
            slot_index: s.slot_index,
            basis: if y { Basis::Y } else { Basis::X },
            bit: s.bit ^ u8::from(flip),
        })
        .collect()
}

proptest! {
    #[test]
    fn sifting_is_idempotent(seed in 0u64..1000, picks in proptest::collection::vec(any::<(bool, bool, bool)>(), 200)) {
        let seq = generate_sequence(seed, 200, &lab()).unwrap();
        let once = sift(&seq, &outcomes(&seq, &picks)).unwrap();
        let twice = sift(&seq, &once.as_outcomes()).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn counts_are_conserved(seed in 0u64..1000, picks in proptest::collection::vec(any::<(bool, bool, bool)>(), 300)) {
        let seq = generate_sequence(seed, 300, &lab()).unwrap();
        let block = sift(&seq, &outcomes(&seq, &picks)).unwrap();
        let c = accumulate_counts(std::slice::from_ref(&block), &seq).unwrap();
        let n: f64 = Basis::ALL.iter().map(|&b| c.n_basis(b)).sum();
        let m: f64 = Basis::ALL.iter().map(|&b| c.m_basis(b)).sum();
        prop_assert_eq!(n, block.len() as f64);
        prop_assert!(m <= n);
        prop_assert_eq!(c.total_sent(), seq.len() as f64);
        for e in &block.entries {
            prop_assert_eq!(e.basis, seq[e.slot_index as usize].basis);
        }
    }

    #[test]
    fn counts_survive_csv(seed in 0u64..1000) {
        let seq = generate_sequence(seed, 500, &lab()).unwrap();
        let picks: Vec<_> = (0..500).map(|i| (i % 3 != 0, i % 2 == 0, i % 7 == 0)).collect();
        let block = sift(&seq, &outcomes(&seq, &picks)).unwrap();
        let c = accumulate_counts(&[block], &seq).unwrap().with_acquisition_time(0.25);
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        prop_assert_eq!(ObservedCounts::read_csv(buf.as_slice()).unwrap(), c);
    }
}
