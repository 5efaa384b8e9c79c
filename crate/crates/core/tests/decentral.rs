mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

use common::*;
use reserve_core::admm::{AdmmConfig, BuildingLocalState, CentralizedAdmm};
use reserve_core::decentral::{
    decode, encode, from_hex, local_update, ring_round, run_decentralized, to_hex, InMemoryRing,
    MessageKind, RingMessage, Transport,
};
use reserve_core::qp::QpSettings;
use reserve_core::robust_policy::PolicyStructure;
use reserve_core::Error;

fn kind() -> impl Strategy<Value = MessageKind> {
    prop_oneof![Just(MessageKind::Accumulate), Just(MessageKind::Circulate)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn codec_round_trip(kind in kind(), iter in any::<u32>(), hop in any::<u32>(),
                        bits in prop::collection::vec(any::<u64>(), 1..40)) {
        let msg = RingMessage { kind, iter, hop, payload: bits.iter().map(|b| f64::from_bits(*b)).collect() };
        let bytes = encode(&msg).unwrap();
        prop_assert_eq!(bytes.len(), 17 + 8 * bits.len());
        let back = decode(&bytes).unwrap();
        prop_assert_eq!(back.kind, kind);
        prop_assert_eq!(back.iter, iter);
        prop_assert_eq!(back.hop, hop);
        let back_bits: Vec<u64> = back.payload.iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(back_bits, bits);
        prop_assert_eq!(from_hex(&to_hex(&bytes)).unwrap(), bytes);
    }
}

#[derive(serde::Deserialize)]
struct Fixture {
    file: String,
    kind: String,
    iter: u32,
    hop: u32,
    payload: Vec<f64>,
}

#[test]
fn golden_frames_decode_to_documented_messages() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let fixtures: Vec<Fixture> =
        serde_json::from_str(&std::fs::read_to_string(dir.join("frames.json")).unwrap()).unwrap();
    assert!(!fixtures.is_empty());
    for f in fixtures {
        let bytes = from_hex(std::fs::read_to_string(dir.join(&f.file)).unwrap().trim()).unwrap();
        let expected = RingMessage {
            kind: match f.kind.as_str() {
                "accumulate" => MessageKind::Accumulate,
                _ => MessageKind::Circulate,
            },
            iter: f.iter,
            hop: f.hop,
            payload: f.payload,
        };
        assert_eq!(decode(&bytes).unwrap(), expected, "{}", f.file);
        assert_eq!(encode(&expected).unwrap(), bytes, "{}", f.file);
    }
}

#[test]
fn empty_payload_is_rejected() {
    let msg = RingMessage {
        kind: MessageKind::Accumulate,
        iter: 1,
        hop: 1,
        payload: vec![],
    };
    assert!(encode(&msg).is_err());
    let frame = from_hex(
        "4d4d4441010100000001000000 00000000"
            .replace(' ', "")
            .as_str(),
    )
    .unwrap();
    assert!(matches!(decode(&frame), Err(Error::Decode(_))));
}

#[test]
fn ring_sum_matches_direct_summation() {
    let mut rng = rng(41);
    for m in 1..=32 {
        let n = rng.gen_range(1..=24);
        let contributions: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect())
            .collect();
        let direct: Vec<f64> = (0..n)
            .map(|k| contributions.iter().map(|c| c[k]).sum())
            .collect();
        let mut ring = InMemoryRing::new(m);
        let held = ring_round(&mut ring, 3, &contributions).unwrap();
        assert_eq!(ring.delivered(), 2 * (m - 1));
        for h in held {
            assert!(max_abs_diff(&h, &direct) <= 1e-12, "M={m}");
        }
    }
}

#[test]
fn aggregate_is_permutation_invariant() {
    let mut rng = rng(42);
    let contributions: Vec<Vec<f64>> = (0..9)
        .map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let reference = ring_round(&mut InMemoryRing::new(9), 1, &contributions).unwrap()[0].clone();
    for _ in 0..10 {
        let mut shuffled = contributions.clone();
        shuffled.shuffle(&mut rng);
        let held = ring_round(&mut InMemoryRing::new(9), 1, &shuffled).unwrap();
        for h in held {
            assert!(max_abs_diff(&h, &reference) <= 1e-12);
        }
    }
}

#[test]
fn broken_ring_aborts_with_protocol_error() {
    let mut ring = InMemoryRing::new(4);
    ring.break_link(1, 2);
    let err = ring_round(&mut ring, 1, &vec![vec![1.0]; 4]).unwrap_err();
    assert!(
        matches!(&err, Error::Protocol(t) if t.contains("member 2 to member 3")),
        "{err}"
    );
}

#[test]
fn local_update_reproduces_the_coordinator_trace() {
    let fleet = small_fleet(43, 3, 6);
    let p = vec![0.15; 6];
    let cfg = AdmmConfig {
        rho: 0.3,
        max_iters: 5,
        track_feasible: false,
        ..AdmmConfig::default()
    };
    let mut admm = CentralizedAdmm::new(&fleet, cfg, &p).unwrap();
    admm.run().unwrap();
    let h = &admm.history;
    for (b, building) in fleet.iter().enumerate() {
        let mut state = BuildingLocalState::new(
            b,
            building,
            PolicyStructure::LowerTriangular,
            QpSettings::default(),
        )
        .unwrap();
        for t in 0..h.len() - 1 {
            let lambda_prev = if t == 0 {
                vec![0.0; 6]
            } else {
                h[t - 1].lambda[b].clone()
            };
            let out =
                local_update(&mut state, &h[t].omega, &lambda_prev, &h[t].y[b], 0.3, &p).unwrap();
            assert!(max_abs_diff(&out.ybar, &h[t].ybar[b]) <= 1e-9);
            assert!(max_abs_diff(&out.lambda, &h[t].lambda[b]) <= 1e-9);
            assert!(
                max_abs_diff(&out.y, &h[t + 1].y[b]) <= 1e-9,
                "building {b}, iteration {}",
                t + 2
            );
        }
    }
}

#[test]
fn ring_run_matches_coordinator_on_the_toy_fleet() {
    let fleet = toy_fleet();
    let p = vec![1.0; TOY_HOURS];
    let cfg = AdmmConfig {
        max_iters: 20,
        ..AdmmConfig::default()
    };
    let central = reserve_core::admm::run_centralized(&fleet, cfg, &p).unwrap();
    let mut ring = InMemoryRing::new(fleet.len());
    let run = run_decentralized(&fleet, cfg, &p, &mut ring).unwrap();
    assert_eq!(run.messages, vec![12; 20]);
    for (a, b) in central.history.iter().zip(&run.history) {
        assert!(max_abs_diff_nested(&a.y, &b.y) <= 1e-9);
        assert!(max_abs_diff_nested(&a.lambda, &b.lambda) <= 1e-9);
    }
    assert_eq!(central.outcome.shares, run.outcome.shares);
    assert_eq!(ring.transcript_hex().lines().count(), 12 * 20);
}
