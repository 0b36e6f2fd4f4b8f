use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparse_secagg::crypto::{DomainTag, PrgStream, Purpose, Seed};
use sparse_secagg::error::Error;
use sparse_secagg::field::{FieldElement, FieldModulus, PrimeField};
use sparse_secagg::masking::{expand_additive_mask, BitMask, MaskSet, PairMask};
use sparse_secagg::protocol::{
    build_masked_values, prepare_users, run_round, Cohort, MaskedGradient, Mode, ProtocolConfig, RoundInput,
    ServerRoundState, SparseMaskedGradient, Transcript,
};

fn gradients(n: u32, d: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    (g, vec![1.0 / n as f64; n as usize])
}

fn cohort(cfg: &ProtocolConfig, seed: u64) -> Cohort {
    Cohort::setup(cfg, &Seed::from_u64(seed)).unwrap()
}

#[test]
fn no_dropouts_matches_the_oracle() {
    let cfg = ProtocolConfig {
        users: 6,
        dim: 300,
        alpha: 0.3,
        ..Default::default()
    };
    let c = cohort(&cfg, 1);
    let (g, w) = gradients(6, 300, 1);
    let input = RoundInput {
        gradients: &g,
        weights: &w,
        clip: 1.0,
    };
    let t = run_round(&c, 0, &input, &[]).unwrap();
    assert!(t.exact());
    assert!(t.aggregate.iter().any(|x| x.value() != 0));
}

#[test]
fn one_dropout_in_four_matches_the_oracle() {
    let cfg = ProtocolConfig {
        users: 4,
        dim: 200,
        alpha: 0.5,
        ..Default::default()
    };
    let c = cohort(&cfg, 2);
    let (g, w) = gradients(4, 200, 2);
    let input = RoundInput {
        gradients: &g,
        weights: &w,
        clip: 1.0,
    };
    for dropped in 0..4 {
        let t = run_round(&c, 3, &input, &[dropped]).unwrap();
        assert!(t.exact(), "dropped {dropped}");
        assert_eq!(t.bytes_sent[dropped as usize], 0);
    }
}

#[test]
fn half_dropped_is_fatal() {
    let cfg = ProtocolConfig {
        users: 8,
        dim: 32,
        alpha: 0.5,
        ..Default::default()
    };
    let c = cohort(&cfg, 3);
    let (g, w) = gradients(8, 32, 3);
    let input = RoundInput {
        gradients: &g,
        weights: &w,
        clip: 1.0,
    };
    assert!(run_round(&c, 0, &input, &[0, 1, 2]).unwrap().exact());
    assert_eq!(
        run_round(&c, 0, &input, &[0, 1, 2, 3]),
        Err(Error::TooManyDropouts {
            survivors: 4,
            cohort: 8,
            needed: 5
        })
    );
}

#[test]
fn reruns_are_identical() {
    let cfg = ProtocolConfig {
        users: 5,
        dim: 64,
        alpha: 0.4,
        theta: 0.2,
        gamma: 0.2,
        ..Default::default()
    };
    let (g, w) = gradients(5, 64, 4);
    let input = RoundInput {
        gradients: &g,
        weights: &w,
        clip: 1.0,
    };
    let a = run_round(&cohort(&cfg, 4), 9, &input, &[1]).unwrap();
    let b = run_round(&cohort(&cfg, 4), 9, &input, &[1]).unwrap();
    assert_eq!(a, b);
    let other = run_round(&cohort(&cfg, 5), 9, &input, &[1]).unwrap();
    assert_ne!(a.aggregate, other.aggregate);
}

#[test]
fn messages_are_sized_by_the_selection() {
    let cfg = ProtocolConfig {
        users: 5,
        dim: 500,
        alpha: 0.2,
        ..Default::default()
    };
    let c = cohort(&cfg, 6);
    let (g, w) = gradients(5, 500, 6);
    let input = RoundInput {
        gradients: &g,
        weights: &w,
        clip: 1.0,
    };
    for u in prepare_users(&c, 0, &input, &[0, 1, 2, 3, 4]).unwrap() {
        let MaskedGradient::Sparse(m) = &u.message else {
            panic!("sparse mode")
        };
        assert_eq!(m.locations, u.locations);
        assert_eq!(m.to_bytes().len(), 8 + 12 * u.locations.len());
    }
}

#[test]
fn tiny_alpha_sends_empty_messages() {
    let cfg = ProtocolConfig {
        users: 3,
        dim: 4,
        alpha: 1e-6,
        ..Default::default()
    };
    let c = cohort(&cfg, 7);
    let (mut g, w) = gradients(3, 4, 7);
    g.iter_mut().flatten().for_each(|v| *v *= 1e-3);
    // the rescaling by 1/p is huge here, so the clip bound must be tiny
    let input = RoundInput {
        gradients: &g,
        weights: &w,
        clip: 1e-3,
    };
    let t = run_round(&c, 0, &input, &[]).unwrap();
    assert_eq!(t.bytes_sent, vec![8, 8, 8]);
    assert!(t.aggregate.iter().all(|x| x.value() == 0) && t.exact());
}

#[test]
fn zero_masks_leave_the_quantized_gradient() {
    let f = PrimeField::default();
    let bits = BitMask::from_bits(&[true; 4]);
    let zero = PairMask {
        bits: bits.clone(),
        values: vec![FieldElement::ZERO; 4],
    };
    let masks = MaskSet {
        user: 0,
        selection: vec![0, 1, 2, 3],
        private: vec![FieldElement::ZERO; 4],
        pairs: vec![(1, zero)],
    };
    let y: Vec<FieldElement> = [5, 0, 9, 2].iter().map(|&v| f.element(v)).collect();
    assert_eq!(build_masked_values(&f, &y, &masks), y);
}

/// Hand evaluation of x_i from dense mask vectors and raw binary-lane words.
#[test]
fn three_user_message_matches_hand_evaluation() {
    let (n, d) = (3u32, 4usize);
    let cfg = ProtocolConfig {
        users: n,
        dim: d,
        alpha: 1.0,
        ..Default::default()
    };
    let c = cohort(&cfg, 8);
    let f = c.field();
    let (g, w) = gradients(n, d, 8);
    let input = RoundInput {
        gradients: &g,
        weights: &w,
        clip: 1.0,
    };
    let round = 2;
    let users = prepare_users(&c, round, &input, &[0, 1, 2]).unwrap();
    let threshold = (0.5f64 * 2f64.powi(64)) as u64;
    for u in &users {
        let i = u.user;
        let r_i = expand_additive_mask(f, &c.private_seed(i), DomainTag::AdditivePrivate, round, d).unwrap();
        let mut x = vec![None; d];
        for l in 0..d {
            let mut selected = false;
            let mut acc = f.add(r_i[l], FieldElement::ZERO);
            for j in (0..n).filter(|&j| j != i) {
                let mut raw =
                    PrgStream::at_word(&c.pair_seed(i, j, Purpose::Binary), DomainTag::Binary, round, l as u64);
                let word = u64::from_le_bytes(raw.bytes(8).try_into().unwrap());
                let b = word < threshold;
                selected |= b;
                if b {
                    let r = expand_additive_mask(
                        f,
                        &c.pair_seed(i, j, Purpose::Additive),
                        DomainTag::AdditivePairwise,
                        round,
                        d,
                    )
                    .unwrap();
                    acc = if j > i { f.add(acc, r[l]) } else { f.sub(acc, r[l]) };
                }
            }
            if selected {
                x[l] = Some(acc);
            }
        }
        let MaskedGradient::Sparse(m) = &u.message else {
            panic!()
        };
        let expect_locs: Vec<u32> = (0..d as u32).filter(|&l| x[l as usize].is_some()).collect();
        assert_eq!(m.locations, expect_locs);
        for (k, &l) in m.locations.iter().enumerate() {
            assert_eq!(m.values[k], f.add(u.quantized[k], x[l as usize].unwrap()));
        }
    }
}

#[test]
fn duplicate_and_foreign_messages_are_rejected() {
    let cfg = ProtocolConfig {
        users: 3,
        dim: 4,
        ..Default::default()
    };
    let mut s = ServerRoundState::new(&cfg, 0).unwrap();
    let f = PrimeField::default();
    let m = SparseMaskedGradient {
        user: 1,
        locations: vec![2],
        values: vec![f.element(3)],
    };
    s.receive(MaskedGradient::Sparse(m.clone())).unwrap();
    assert_eq!(s.accumulator()[2], f.element(3));
    assert_eq!(s.receive(MaskedGradient::Sparse(m)), Err(Error::DuplicateUser(1)));
    let far = SparseMaskedGradient {
        user: 0,
        locations: vec![4],
        values: vec![f.element(3)],
    };
    assert!(s.receive(MaskedGradient::Sparse(far)).is_err());
}

#[test]
fn missing_shares_block_unmasking() {
    let cfg = ProtocolConfig {
        users: 4,
        dim: 16,
        alpha: 0.5,
        ..Default::default()
    };
    let c = cohort(&cfg, 9);
    let (g, w) = gradients(4, 16, 9);
    let input = RoundInput {
        gradients: &g,
        weights: &w,
        clip: 1.0,
    };
    let users = prepare_users(&c, 0, &input, &[0, 1, 2]).unwrap();
    let mut s = ServerRoundState::new(&cfg, 0).unwrap();
    for u in users {
        s.receive(u.message).unwrap();
    }
    let ids = s.required_seeds();
    assert_eq!(ids.len(), 3 + 3 * 2);
    // only two shares of the first seed: below the threshold of three
    s.add_shares(ids[0], c.shares(ids[0], &[0, 1]).unwrap());
    assert_eq!(
        s.reconstruct(ids[0]),
        Err(Error::InsufficientShares { have: 2, need: 3 })
    );
    assert!(matches!(s.recover_and_unmask(), Err(Error::InsufficientShares { .. })));
}

/// Removing a dropped user's pair mask must use exactly its selection bits.
#[test]
fn flipping_any_removal_bit_breaks_exactness() {
    let (n, d) = (4u32, 24usize);
    let cfg = ProtocolConfig {
        users: n,
        dim: d,
        alpha: 0.6,
        ..Default::default()
    };
    let c = cohort(&cfg, 10);
    let f = *c.field();
    let (g, w) = gradients(n, d, 10);
    let input = RoundInput {
        gradients: &g,
        weights: &w,
        clip: 1.0,
    };
    let round = 1;
    let dropped = 2u32;
    let senders = [0u32, 1, 3];
    let users = prepare_users(&c, round, &input, &senders).unwrap();
    let mut oracle = vec![FieldElement::ZERO; d];
    for u in &users {
        for (&l, &v) in u.locations.iter().zip(&u.quantized) {
            oracle[l as usize] = f.add(oracle[l as usize], v);
        }
    }
    let pair_mask = |j: u32| {
        PairMask::expand(
            &f,
            &c.pair_seed(dropped, j, Purpose::Additive),
            &c.pair_seed(dropped, j, Purpose::Binary),
            round,
            d,
            cfg.alpha,
            n,
        )
        .unwrap()
    };
    let unmask = |flip: Option<(u32, usize)>| {
        let mut s = ServerRoundState::new(&cfg, round).unwrap();
        for u in &users {
            s.receive(u.message.clone()).unwrap();
        }
        for &j in &senders {
            s.remove_private_mask(j, &c.private_seed(j)).unwrap();
            let mut m = pair_mask(j);
            if let Some((fj, l)) = flip {
                if fj == j {
                    let bits = m.bits.flipped(l);
                    let values = sparse_secagg::masking::additive_mask_at(
                        &f,
                        &c.pair_seed(dropped, j, Purpose::Additive),
                        DomainTag::AdditivePairwise,
                        round,
                        bits.ones(),
                    )
                    .unwrap();
                    m = PairMask { bits, values };
                }
            }
            s.remove_pair_mask(dropped, j, &m);
        }
        s.accumulator().to_vec()
    };
    assert_eq!(unmask(None), oracle);
    for &j in &senders {
        for l in 0..d {
            assert_ne!(
                unmask(Some((j, l))),
                oracle,
                "flip of b_{dropped}{j}({l}) went unnoticed"
            );
        }
    }
}

#[test]
fn baseline_mode_sums_survivors() {
    let cfg = ProtocolConfig {
        users: 2,
        dim: 10,
        mode: Mode::Baseline,
        ..Default::default()
    };
    let c = cohort(&cfg, 11);
    let (g, w) = gradients(2, 10, 11);
    let input = RoundInput {
        gradients: &g,
        weights: &w,
        clip: 1.0,
    };
    let t = run_round(&c, 0, &input, &[]).unwrap();
    assert!(t.exact());
    assert_eq!(t.bytes_sent, vec![8 + 8 * 10; 2]);
    assert!(t.contributors.iter().all(|&k| k == 2));

    let cfg = ProtocolConfig {
        users: 5,
        dim: 10,
        mode: Mode::Baseline,
        ..Default::default()
    };
    let c = cohort(&cfg, 12);
    let (g, w) = gradients(5, 10, 12);
    let input = RoundInput {
        gradients: &g,
        weights: &w,
        clip: 1.0,
    };
    let t = run_round(&c, 0, &input, &[3]).unwrap();
    assert!(t.exact());
    // the sum over survivors in real terms: the baseline scales by 1/(1 - theta) = 1
    for (l, got) in t.update.iter().enumerate().take(10) {
        let plain: f64 = [0usize, 1, 2, 4].iter().map(|&i| g[i][l] / 5.0).sum();
        assert!((got - plain).abs() <= 4.0 / 1024.0, "{l}");
    }
}

#[test]
fn alternative_prime_works_end_to_end() {
    let q = FieldModulus::new((1 << 61) - 1).unwrap();
    let cfg = ProtocolConfig {
        users: 7,
        dim: 128,
        alpha: 0.3,
        q,
        ..Default::default()
    };
    let c = cohort(&cfg, 13);
    let (g, w) = gradients(7, 128, 13);
    let input = RoundInput {
        gradients: &g,
        weights: &w,
        clip: 1.0,
    };
    assert!(run_round(&c, 0, &input, &[2, 5]).unwrap().exact());
}

#[test]
fn diffie_hellman_cohort_unmasks() {
    let cfg = ProtocolConfig {
        users: 5,
        dim: 64,
        alpha: 0.5,
        key_agreement: sparse_secagg::protocol::KeyAgreement::DiffieHellman,
        ..Default::default()
    };
    let c = cohort(&cfg, 14);
    let (g, w) = gradients(5, 64, 14);
    let input = RoundInput {
        gradients: &g,
        weights: &w,
        clip: 1.0,
    };
    assert!(run_round(&c, 0, &input, &[4]).unwrap().exact());
}

#[test]
fn transcript_replays_into_the_same_aggregate() {
    let cfg = ProtocolConfig {
        users: 4,
        dim: 50,
        alpha: 0.5,
        ..Default::default()
    };
    let c = cohort(&cfg, 15);
    let (g, w) = gradients(4, 50, 15);
    let input = RoundInput {
        gradients: &g,
        weights: &w,
        clip: 1.0,
    };
    let users = prepare_users(&c, 0, &input, &[0, 1, 2, 3]).unwrap();
    let mut t = Transcript::default();
    users.iter().for_each(|u| t.record(&u.message));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("round.bin");
    t.write_to(std::fs::File::create(&path).unwrap()).unwrap();
    let back = Transcript::read_from(std::fs::File::open(&path).unwrap()).unwrap();
    let mut a = ServerRoundState::new(&cfg, 0).unwrap();
    let mut b = ServerRoundState::new(&cfg, 0).unwrap();
    for u in users {
        a.receive(u.message).unwrap();
    }
    for m in back.replay(Mode::Sparse, c.field()).unwrap() {
        b.receive(m).unwrap();
    }
    assert_eq!(a.accumulator(), b.accumulator());
}
