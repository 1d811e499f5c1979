use cis::codec::{self, decode_flo, encode_flo};
use cis_core::rng::seeded;
use cis_core::synth::{gen_ideal_sample, SynthConfig};
use cis_core::training::{Players, TrainConfig};
use cis_core::FlowField;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn random_flow_round_trips_through_a_file() {
    let mut rng = seeded(4, 0);
    let flow = FlowField::from_fn(16, 16, |_, _| [rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0)]);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.flo");
    codec::flo_write(&path, &flow).unwrap();
    let back = codec::flo_read(&path).unwrap();
    assert_eq!(back, flow);
    assert!(back.vectors().iter().zip(flow.vectors()).all(|(a, b)| a[0].to_bits() == b[0].to_bits() && a[1].to_bits() == b[1].to_bits()));
}

#[test]
fn flo_errors_carry_path_and_offset() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.flo");
    std::fs::write(&path, 0.0f32.to_le_bytes()).unwrap();
    let msg = codec::flo_read(&path).unwrap_err().to_string();
    assert!(msg.contains("bad.flo") && msg.contains("byte 0"), "{msg}");
}

#[test]
fn checkpoints_round_trip_through_files() {
    let players = Players::init(&TrainConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.ckpt");
    codec::checkpoint_write(&path, &players.generator).unwrap();
    let back = codec::checkpoint_read(&path).unwrap();
    assert_eq!(back, players.generator);
    assert_eq!(back.to_bytes(), std::fs::read(&path).unwrap());
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(codec::checkpoint_read(&path), Err(cis::CliError::Format { .. })));
}

#[test]
fn scene_images_round_trip_after_quantization() {
    let s = gen_ideal_sample(9, &SynthConfig::default()).unwrap();
    let ppm = codec::encode_ppm(&s.frame);
    assert_eq!(codec::encode_ppm(&codec::decode_ppm(&ppm).unwrap()), ppm);
    assert_eq!(codec::decode_mask(&codec::encode_mask(&s.mask)).unwrap(), s.mask);
}

proptest! {
    #[test]
    fn flo_round_trip_is_bit_exact(w in 1usize..9, h in 1usize..9, seed in any::<u64>()) {
        let mut rng = seeded(seed, 0);
        let flow = FlowField::from_fn(w, h, |_, _| [f32::from_bits(rng.random::<u32>() & 0x7F7F_FFFF), -rng.random::<f32>() * 1e6]);
        let bytes = encode_flo(&flow).unwrap();
        prop_assert_eq!(bytes.len(), 12 + 8 * w * h);
        prop_assert_eq!(decode_flo(&bytes).unwrap(), flow);
        for cut in [0, 3, 11, bytes.len() - 1] {
            prop_assert!(decode_flo(&bytes[..cut]).is_err());
        }
    }

    #[test]
    fn soft_masks_quantize_within_half_a_level(p in proptest::collection::vec(0.0f32..=1.0, 12)) {
        let m = cis_core::SoftMask::new(4, 3, p.clone()).unwrap();
        let back = codec::decode_soft_mask(&codec::encode_soft_mask(&m)).unwrap();
        for (a, b) in p.iter().zip(back.probs()) {
            prop_assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }
}
