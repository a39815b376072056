//! Window partitioning, cyclic shift and masked window attention on a small
//! token grid whose extents are not multiples of the window.

use unetformer::nn::Params;
use unetformer::swin::{WindowAttention, WindowLayout};
use unetformer::{no_grad, Tensor};

fn main() -> unetformer::Result<()> {
    let dims = [5, 4, 6];
    let (dim, heads, m) = (8, 2, 4);
    let n: usize = dims.iter().product();
    let tokens = Tensor::from_fn(&[n, dim], |i| ((i as f64) * 0.37).sin());
    let attn = WindowAttention::new(&Params::new(1), dim, heads, m, true)?;

    for shifted in [false, true] {
        let layout = WindowLayout::new(dims, m, shifted)?;
        let windows = layout.partition(&tokens)?;
        let mask = layout.mask();
        let out = no_grad(|| attn.forward(&windows, layout.local_offsets(), mask.as_ref()))?;
        let back = layout.reverse(&out)?;
        println!(
            "shifted={shifted}: shift {:?}, padded {:?}, windows {:?}, masked={}, output {:?}",
            layout.shift,
            layout.pad.padded,
            windows.shape(),
            mask.is_some(),
            back.shape()
        );
        let round_trip = layout.reverse(&windows)?;
        assert_eq!(round_trip.to_vec(), tokens.to_vec());
    }
    println!("partition/reverse round trip is exact");
    Ok(())
}
