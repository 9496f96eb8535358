use dsscc_core::container::{self, HEADER_BYTES};
use dsscc_core::entropy::cdf::{CdfTable, TOTAL};
use dsscc_core::rc::{self, RangeDecoder, RangeEncoder};
use dsscc_core::CoreError;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_table(rng: &mut ChaCha8Rng) -> CdfTable {
    let n = rng.gen_range(1..300usize);
    let peak = rng.gen_range(0.5f64..8.0);
    let probs: Vec<f64> = (0..n).map(|_| rng.gen::<f64>().powf(peak)).collect();
    CdfTable::from_probs(rng.gen_range(-200..50), &probs, rng.gen_range(0.0..1e-3)).unwrap()
}

/// Draws a symbol by inverting the quantized cumulative counts.
fn draw(t: &CdfTable, rng: &mut ChaCha8Rng) -> i64 {
    let v = rng.gen_range(0..TOTAL);
    let slot = t.cdf().partition_point(|&c| c <= v) - 1;
    if slot == t.escape_slot() {
        t.max_sym + 1 + rng.gen_range(0..50)
    } else {
        t.min_sym + slot as i64
    }
}

fn ideal_bits(t: &CdfTable, s: i64) -> f64 {
    let c = t.cdf();
    let slot = if s < t.min_sym || s > t.max_sym { t.escape_slot() } else { (s - t.min_sym) as usize };
    let extra = if slot == t.escape_slot() { 15.0 + 1.0 } else { 0.0 };
    -(((c[slot + 1] - c[slot]) as f64) / TOTAL as f64).log2() + extra
}

#[test]
fn coder_length_is_within_one_percent_of_the_ideal() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let tables: Vec<CdfTable> = (0..50).map(|_| random_table(&mut rng)).collect();
    let n = 100_000;
    let pick: Vec<usize> = (0..n).map(|_| rng.gen_range(0..tables.len())).collect();
    let symbols: Vec<i64> = pick.iter().map(|&i| draw(&tables[i], &mut rng)).collect();
    let refs: Vec<&CdfTable> = pick.iter().map(|&i| &tables[i]).collect();
    let bytes = rc::encode_symbols(&symbols, &refs).unwrap();
    let shannon: f64 = symbols.iter().zip(&refs).map(|(&s, t)| ideal_bits(t, s)).sum();
    let realized = 8.0 * bytes.len() as f64;
    assert!(realized <= shannon * 1.01 + 64.0, "{realized} bits vs {shannon}");
    assert!((rc::shannon_bits(&symbols, &refs) - shannon).abs() < 1e-6 * shannon);
    assert_eq!(rc::decode_symbols(&bytes, &refs), symbols);
}

#[test]
fn raw_coder_round_trips_extreme_intervals() {
    let mut enc = RangeEncoder::new();
    let seq = [(0u32, 1u32), (TOTAL - 1, 1), (0, TOTAL - 1), (12345, 2), (TOTAL / 2, TOTAL / 2)];
    for _ in 0..200 {
        for &(c, f) in &seq {
            enc.encode(c, f);
        }
    }
    let bytes = enc.finish();
    let mut dec = RangeDecoder::new(&bytes);
    for _ in 0..200 {
        for &(c, f) in &seq {
            let v = dec.peek();
            assert!(v >= c && v < c + f, "{v} not in [{c}, {})", c + f);
            dec.consume(c, f);
        }
    }
}

fn sample_frame() -> Vec<u8> {
    let z: Vec<u8> = (0..40u8).map(|i| i.wrapping_mul(37)).collect();
    let y: Vec<u8> = (0..300u16).map(|i| (i * 11 % 251) as u8).collect();
    container::pack(&z, &y, [8, 8, 48], [2, 2, 32]).unwrap()
}

#[test]
fn container_round_trip_and_layout() {
    let f = sample_frame();
    assert_eq!(f.len(), HEADER_BYTES + 340);
    assert_eq!(&f[..4], b"DSCC");
    let u = container::unpack(&f).unwrap();
    assert_eq!(u.y_dims, [8, 8, 48]);
    assert_eq!(u.z_dims, [2, 2, 32]);
    assert_eq!(u.z_bytes.len(), 40);
    assert_eq!(u.y_bytes.len(), 300);
}

#[test]
fn every_payload_bit_flip_is_detected() {
    let f = sample_frame();
    for bit in HEADER_BYTES * 8..f.len() * 8 {
        let mut g = f.clone();
        g[bit / 8] ^= 1 << (bit % 8);
        assert!(matches!(container::unpack(&g), Err(CoreError::FrameCorrupt(_))), "bit {bit}");
    }
}

#[test]
fn header_damage_is_rejected() {
    let f = sample_frame();
    let mut g = f.clone();
    g[0] = b'X';
    assert!(matches!(container::unpack(&g), Err(CoreError::Format(_))));
    let mut g = f.clone();
    g[4] = 9;
    assert!(matches!(container::unpack(&g), Err(CoreError::Format(_))));
    for cut in [0, 3, 20, HEADER_BYTES, f.len() - 1] {
        assert!(container::unpack(&f[..cut]).is_err(), "cut {cut}");
    }
    // Length and CRC fields.
    for byte in 17..HEADER_BYTES {
        for b in 0..8 {
            let mut g = f.clone();
            g[byte] ^= 1 << b;
            assert!(matches!(container::unpack(&g), Err(CoreError::FrameCorrupt(_))), "byte {byte} bit {b}");
        }
    }
}

proptest! {
    #[test]
    fn symbols_round_trip(seed in any::<u64>(), len in 0usize..400) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tables: Vec<CdfTable> = (0..4).map(|_| random_table(&mut rng)).collect();
        let refs: Vec<&CdfTable> = (0..len).map(|i| &tables[i % 4]).collect();
        let symbols: Vec<i64> = refs
            .iter()
            .map(|t| if rng.gen_bool(0.05) { rng.gen_range(-16384..=16384) } else { draw(t, &mut rng) })
            .collect();
        let bytes = rc::encode_symbols(&symbols, &refs).unwrap();
        prop_assert_eq!(rc::decode_symbols(&bytes, &refs), symbols);
    }

    #[test]
    fn container_round_trips(z in proptest::collection::vec(any::<u8>(), 0..200),
                             y in proptest::collection::vec(any::<u8>(), 0..600)) {
        let f = container::pack(&z, &y, [4, 4, 8], [1, 1, 4]).unwrap();
        let u = container::unpack(&f).unwrap();
        prop_assert_eq!(u.z_bytes, z);
        prop_assert_eq!(u.y_bytes, y);
    }
}
