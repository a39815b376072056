use std::path::Path;

use proptest::prelude::*;
use unetformer::decoders::{DecoderConfig, SegModel};
use unetformer::io::{decode_checkpoint, encode_checkpoint, CheckpointMeta, DType, VolHeader, Volume};
use unetformer::nn::Params;
use unetformer::pretrain::{generate_mask, masked_cube_count};
use unetformer::swin::{cyclic_shift, window_partition, window_reverse, EncoderConfig, TokenGrid, WindowLayout};
use unetformer::Tensor;

fn grid_strategy() -> impl Strategy<Value = ([usize; 3], usize, Vec<f64>)> {
    ([1usize..7, 1..7, 1..7], 1usize..4).prop_flat_map(|(dims, c)| {
        let n = dims.iter().product::<usize>() * c;
        (Just(dims), Just(c), prop::collection::vec(-1e6f64..1e6, n))
    })
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn finite_f64() -> impl Strategy<Value = f64> {
    prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partition_reverse_round_trip((dims, c, values) in grid_strategy(), m in 1usize..5, shifted: bool) {
        let n: usize = dims.iter().product();
        let x = Tensor::new(&[n, c], values).unwrap();
        let layout = WindowLayout::new(dims, m, shifted).unwrap();
        let windows = layout.partition(&x).unwrap();
        prop_assert_eq!(windows.shape()[0] * windows.shape()[1], layout.gather.len());
        prop_assert_eq!(bits(&layout.reverse(&windows).unwrap().to_vec()), bits(&x.to_vec()));

        let grid = TokenGrid::new(dims, x.clone()).unwrap();
        let (w, pad) = window_partition(&grid, m).unwrap();
        prop_assert_eq!(bits(&window_reverse(&w, &pad).unwrap().values.to_vec()), bits(&x.to_vec()));
    }

    #[test]
    fn shift_unshift_round_trip((dims, c, values) in grid_strategy(), s in [-9isize..9, -9..9, -9..9]) {
        let n: usize = dims.iter().product();
        let grid = TokenGrid::new(dims, Tensor::new(&[n, c], values).unwrap()).unwrap();
        let shifted = cyclic_shift(&grid, s).unwrap();
        let back = cyclic_shift(&shifted, s.map(|v| -v)).unwrap();
        prop_assert_eq!(bits(&back.values.to_vec()), bits(&grid.values.to_vec()));
    }

    #[test]
    fn vvol_round_trip_f64(dims in [1usize..6, 1..6, 1..6], channels in 1usize..3, fill in prop::collection::vec(finite_f64(), 64), spacing in [0.1f64..5.0, 0.1..5.0, 0.1..5.0]) {
        let n = dims.iter().product::<usize>() * channels;
        let data: Vec<f64> = (0..n).map(|i| fill[(i * 5 + n) % fill.len()]).collect();
        let vol = Volume::new(VolHeader { dims, channels, dtype: DType::F64, spacing }, data).unwrap();
        let back = Volume::decode(&vol.encode().unwrap(), Path::new("p.vvol")).unwrap();
        prop_assert_eq!(bits(&back.data), bits(&vol.data));
        prop_assert_eq!(back.header, vol.header);
    }

    #[test]
    fn vvol_round_trip_u16_and_f32(dims in [1usize..6, 1..6, 1..6], values in prop::collection::vec(any::<u16>(), 125)) {
        let n: usize = dims.iter().product();
        let ints: Vec<f64> = values[..n].iter().map(|&v| v as f64).collect();
        let floats: Vec<f64> = values[..n].iter().map(|&v| (v as f32 * 0.37) as f64).collect();
        for (dtype, data) in [(DType::U16, ints), (DType::F32, floats)] {
            let vol = Volume::new(VolHeader { dims, channels: 1, dtype, spacing: [1.0, 1.0, 2.0] }, data).unwrap();
            let back = Volume::decode(&vol.encode().unwrap(), Path::new("p.vvol")).unwrap();
            prop_assert_eq!(bits(&back.data), bits(&vol.data));
        }
    }

    #[test]
    fn checkpoint_round_trip(shapes in prop::collection::vec(prop::collection::vec(1usize..5, 1..4), 1..6), fill in prop::collection::vec(finite_f64(), 64)) {
        let params = Params::new(0);
        for (i, shape) in shapes.iter().enumerate() {
            let t = params.zeros_param(&format!("layer{i}.weight"), shape).unwrap();
            let v: Vec<f64> = (0..t.numel()).map(|j| fill[(i * 7 + j) % fill.len()]).collect();
            t.assign(&v).unwrap();
        }
        let meta = CheckpointMeta::segmentation(&tiny_model(), 3, 9);
        let ck = decode_checkpoint(&encode_checkpoint(&params, &meta).unwrap(), Path::new("p.ufck")).unwrap();
        prop_assert_eq!(&ck.meta, &meta);
        prop_assert_eq!(ck.tensors.len(), shapes.len());
        for (name, t) in params.named() {
            let stored = &ck.tensors[&name];
            prop_assert_eq!(&stored.shape, &t.shape().to_vec());
            prop_assert_eq!(bits(&stored.values), bits(&t.to_vec()));
        }
    }

    #[test]
    fn mask_count_is_rounded_ratio(ratio in 0.0f64..=1.0, patch in prop::sample::select(vec![4usize, 8, 16]), seed: u64) {
        let m = generate_mask([32, 32, 48], patch, ratio, seed).unwrap();
        let n = m.total_cubes();
        prop_assert_eq!(m.masked_cubes.len(), masked_cube_count(ratio, n));
        prop_assert_eq!(m.masked_cubes.len(), (ratio * n as f64).round() as usize);
        prop_assert!(m.masked_cubes.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(m.voxel_mask().iter().filter(|&&b| b).count(), m.masked_cubes.len() * patch.pow(3));
    }
}

fn tiny_model() -> SegModel {
    thread_local! {
        static MODEL: SegModel = SegModel::new(&EncoderConfig::tiny(), &DecoderConfig::default(), 0).unwrap();
    }
    MODEL.with(|m| m.clone())
}
