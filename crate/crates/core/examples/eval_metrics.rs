//! Dice, Hausdorff and 95th-percentile Hausdorff on two offset spheres, with
//! isotropic and anisotropic spacing.

use unetformer::labels::Labels;
use unetformer::metrics::evaluate;

fn sphere(dims: [usize; 3], centre: [f64; 3], r: f64) -> Labels {
    let mut v = Vec::with_capacity(dims.iter().product());
    for x in 0..dims[0] {
        for y in 0..dims[1] {
            for z in 0..dims[2] {
                let d2 =
                    (x as f64 - centre[0]).powi(2) + (y as f64 - centre[1]).powi(2) + (z as f64 - centre[2]).powi(2);
                v.push(u16::from(d2 <= r * r));
            }
        }
    }
    Labels::new(dims, v).expect("sizes match")
}

fn main() -> unetformer::Result<()> {
    let dims = [24, 24, 24];
    let gt = sphere(dims, [12.0, 12.0, 12.0], 6.0);
    let pred = sphere(dims, [13.0, 12.0, 11.0], 5.5);
    for spacing in [[1.0, 1.0, 1.0], [2.5, 0.8, 0.8]] {
        let r = evaluate(&pred, &gt, 2, spacing)?;
        println!("spacing {spacing:?}");
        println!("{}", serde_json::to_string_pretty(&r)?);
    }
    Ok(())
}
