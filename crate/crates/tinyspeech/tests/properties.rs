//! Property tests for the algebraic invariants.

use proptest::prelude::*;
use tinyspeech::dataset::{parse_wav, write_wav, AudioClip};
use tinyspeech::ops::{maxpool2d, softmax, unpool_replicate};
use tinyspeech::quant::quantize_tensor;
use tinyspeech::tensor::Tensor;

proptest! {
    #[test]
    fn softmax_is_on_the_simplex_and_shift_invariant(
        logits in prop::collection::vec(-50.0f64..50.0, 1..20),
        shift in -100.0f64..100.0,
    ) {
        let p = softmax(&logits);
        let sum: f64 = p.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        let shifted: Vec<f64> = logits.iter().map(|x| x + shift).collect();
        let q = softmax(&shifted);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn quantization_round_trip_stays_within_half_scale(
        values in prop::collection::vec(-1000.0f64..1000.0, 1..200),
        eight_bit in any::<bool>(),
    ) {
        let bits = if eight_bit { 8 } else { 4 };
        let qt = quantize_tensor(&values, &[values.len()], bits).unwrap();
        prop_assert!(qt.scale > 0.0);
        for (v, d) in values.iter().zip(qt.dequantize()) {
            prop_assert!(
                (v - d).abs() <= qt.scale / 2.0 * (1.0 + 1e-12),
                "|{} - {}| > {}/2", v, d, qt.scale
            );
        }
    }

    #[test]
    fn wav_round_trip_preserves_int16_payloads(
        samples in prop::collection::vec(any::<i16>(), 0..500),
    ) {
        let clip = AudioClip {
            samples: samples.iter().map(|&s| s as f64 / 32768.0).collect(),
            sample_rate: 16_000,
        };
        let parsed = parse_wav(&write_wav(&clip)).unwrap();
        let back: Vec<i16> = parsed
            .samples
            .iter()
            .map(|&s| (s * 32768.0).round() as i16)
            .collect();
        prop_assert_eq!(samples, back);
    }

    #[test]
    fn unpooled_map_agrees_with_input_at_argmax_positions(
        data in prop::collection::vec(-10.0f64..10.0, 36),
        window in 1usize..3,
    ) {
        let x = Tensor::from_vec([1, 1, 6, 6], data).unwrap();
        let rec = maxpool2d(&x, (window, window), (window, window)).unwrap();
        let up = unpool_replicate(&rec.pooled, (window, window), (window, window), (6, 6)).unwrap();
        for &src in &rec.argmax {
            prop_assert_eq!(up.data()[src], x.data()[src]);
        }
    }

    #[test]
    fn mul_by_ones_is_identity_and_reshape_preserves_data(
        data in prop::collection::vec(-100.0f64..100.0, 24),
    ) {
        let t = Tensor::from_vec([2, 3, 2, 2], data).unwrap();
        let ones = Tensor::from_vec([2, 3, 2, 2], vec![1.0; 24]).unwrap();
        prop_assert_eq!(&t.mul(&ones).unwrap(), &t);
        let r = t.reshape([1, 4, 3, 2]).unwrap();
        prop_assert_eq!(r.data(), t.data());
        prop_assert_eq!(&r.reshape([2, 3, 2, 2]).unwrap(), &t);
    }
}
