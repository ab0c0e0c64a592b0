use kvaf_fusion::event::*;
use kvaf_fusion::loss::Sample;
use ndarray::{s, Array4, Axis};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_video(seed: u64, shape: (usize, usize, usize, usize)) -> Array4<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array4::from_shape_simple_fn(shape, || rng.random_range(0.0..1.0))
}

fn shape_strategy() -> impl Strategy<Value = ([usize; 3], [usize; 3], [usize; 3], usize)> {
    // (latent dims in blocks, block, patch, channels)
    (
        prop::array::uniform3(1usize..4),
        prop::array::uniform3(1usize..4),
        prop::array::uniform3(1usize..3),
        1usize..4,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn difference_ignores_global_offset(seed in 0u64..1000, c in -5.0f64..5.0, t in 1usize..6) {
        let v = random_video(seed, (t, 3, 4, 3));
        let a = frame_difference(v.view()).unwrap();
        let b = frame_difference(v.mapv(|x| x + c).view()).unwrap();
        prop_assert!(a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn difference_of_reversed_video(seed in 0u64..1000, t in 2usize..7) {
        let v = random_video(seed, (t, 2, 3, 3));
        let mut rev = v.clone();
        rev.invert_axis(Axis(0));
        let d = frame_difference(v.view()).unwrap();
        let dr = frame_difference(rev.view()).unwrap();
        prop_assert!(dr.index_axis(Axis(0), 0).iter().all(|&x| x == 0.0));
        // dr[k] = |v[T-1-k] − v[T-k]| = d[T-k] for k ≥ 1.
        for k in 1..t {
            prop_assert_eq!(dr.index_axis(Axis(0), k), d.index_axis(Axis(0), t - k));
        }
    }

    #[test]
    fn encoder_is_linear(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0, (cells, block, _, c) in shape_strategy()) {
        let shape = (cells[0] * block[0], cells[1] * block[1], cells[2] * block[2], c);
        let x = random_video(seed, shape);
        let y = random_video(seed + 1, shape);
        let lhs = encode_latent((&x * a + &y * b).view(), block).unwrap();
        let ex = encode_latent(x.view(), block).unwrap();
        let ey = encode_latent(y.view(), block).unwrap();
        let rhs = &ex.values * a + &ey.values * b;
        prop_assert!(lhs.values.iter().zip(rhs.iter()).all(|(p, q)| (p - q).abs() < 1e-12));
    }

    #[test]
    fn patchify_round_trips_exactly((cells, _, patch, c) in shape_strategy(), seed in 0u64..1000) {
        let shape = (cells[0] * patch[0], cells[1] * patch[1], cells[2] * patch[2], c);
        let lat = LatentGrid::new(random_video(seed, shape), [1, 1, 1]).unwrap();
        let tg = patchify(&lat, patch).unwrap();
        prop_assert_eq!(tg.tokens.len(), lat.values.len());
        prop_assert_eq!(tg.len(), cells[0] * cells[1] * cells[2]);
        prop_assert_eq!(unpatchify(&tg).unwrap(), lat);
    }
}

#[test]
fn first_token_is_top_left_patch_of_first_frame() {
    let lat = LatentGrid::new(random_video(3, (2, 4, 6, 2)), [1, 1, 1]).unwrap();
    let tg = patchify(&lat, [1, 2, 2]).unwrap();
    let patch: Vec<f64> = lat.values.slice(s![0, 0..2, 0..2, ..]).iter().copied().collect();
    assert_eq!(tg.tokens.row(0).to_vec(), patch);
    assert_eq!(tg.grid_shape, [2, 2, 3]);
    assert_eq!(tg.token_time(5), 0);
    assert_eq!(tg.token_time(6), 1);
}

#[test]
fn event_target_matches_sample_construction() {
    let video = random_video(5, (4, 16, 16, 3));
    let kvaf = random_video(6, (4, 16, 16, 3));
    let block = [2, 8, 8];
    let zeros = LatentGrid::new(Array4::zeros((2, 2, 2, 3)), block).unwrap();
    let sample = Sample::build(&video, &kvaf, 0.5, &zeros, &zeros, block).unwrap();
    let direct = encode_latent(frame_difference(video.view()).unwrap().view(), block).unwrap();
    assert_eq!(sample.event, direct);
    let bits = |l: &LatentGrid| l.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&sample.event), bits(&direct));
}

#[test]
fn constant_video_has_zero_event_target() {
    let v = Array4::from_elem((8, 32, 32, 3), 0.42);
    let e = encode_latent(frame_difference(v.view()).unwrap().view(), [2, 8, 8]).unwrap();
    assert!(e.values.iter().all(|&x| x == 0.0));
}

#[test]
fn decode_inverts_encode_on_block_constant_video() {
    let lat = LatentGrid::new(random_video(7, (2, 3, 3, 3)), [2, 4, 4]).unwrap();
    let video = decode_latent(&lat);
    assert_eq!(video.dim(), (4, 12, 12, 3));
    let back = encode_latent(video.view(), [2, 4, 4]).unwrap();
    assert!(back.values.iter().zip(lat.values.iter()).all(|(a, b)| (a - b).abs() < 1e-15));
}
