//! Finite-difference checks for every differentiable op, the composite
//! layers, the losses and both end-to-end models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::decoders::{DecoderConfig, DecoderLayer, SegModel, Variant};
use crate::error::Result;
use crate::labels::Labels;
use crate::losses::{
    deep_supervision_loss, dice_ce_loss, masked_l1, L1Normalization, LossWeights, DICE_SMOOTH, LOG_FLOOR,
};
use crate::nn::{CnnBlock, Params};
use crate::pretrain::{generate_mask, PretrainModel};
use crate::runtime::{synth_dataset, SynthConfig};
use crate::swin::{windowed_attention, EncoderConfig, PatchEmbed, PatchMerge, SwinBlock, TokenGrid, WindowAttention};
use crate::tensor::gradcheck::random_projection;
use crate::tensor::{
    concat, conv3d, conv_transpose3d, gradcheck, gradcheck_sampled, instance_norm, layer_norm, trilinear_upsample,
    GradReport, Tensor, NORM_EPS,
};

/// Pass threshold on the maximum relative error.
pub const GRAD_TOL: f64 = 1e-4;

/// Step for op-level checks.
pub const OP_STEP: f64 = 1e-5;

/// Smaller step for the end-to-end models, so fewer pre-activations cross
/// the leaky-ReLU kink between the two probes.
pub const MODEL_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
pub struct SuiteOptions {
    /// Include the 32^3 end-to-end model checks.
    pub models: bool,
    /// Coordinates sampled per parameter tensor in the model checks.
    pub model_coords: usize,
    pub seed: u64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            models: true,
            model_coords: 2,
            seed: 0,
        }
    }
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::param(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape matches")
}

/// Values in `±[0.1, 1)`, away from the kinks of `abs` and `leaky_relu`.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let v = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::param(shape, v).expect("shape matches")
}

/// Overwrites every parameter with values in `±scale`.
fn randomize(p: &Params, scale: f64, rng: &mut ChaCha8Rng) {
    for (_, t) in p.named() {
        let v: Vec<f64> = (0..t.numel()).map(|_| rng.random_range(-scale..scale)).collect();
        t.assign(&v).expect("same length");
    }
}

/// Moves biases and norm affine parameters off their initial values. At the
/// exact initialization a single-voxel instance norm outputs its zero bias,
/// which puts the following leaky ReLU exactly on its kink.
fn generic_point(p: &Params, rng: &mut ChaCha8Rng) {
    for (name, t) in p.named() {
        let norm_gain = name.contains("norm") && name.ends_with(".weight");
        if !(norm_gain || name.ends_with(".bias") || name.ends_with("bias_table")) {
            continue;
        }
        let v: Vec<f64> = (0..t.numel())
            .map(|_| {
                if norm_gain {
                    rng.random_range(0.5..1.5)
                } else {
                    rng.random_range(-0.5..0.5)
                }
            })
            .collect();
        t.assign(&v).expect("same length");
    }
}

fn leaves(p: &Params) -> Vec<Tensor> {
    p.named().into_iter().map(|(_, t)| t).collect()
}

type Check = (&'static str, Box<dyn Fn(&mut ChaCha8Rng) -> Result<GradReport>>);

fn op_checks() -> Vec<Check> {
    let mut v: Vec<Check> = Vec::new();
    macro_rules! check {
        ($name:expr, |$rng:ident| $body:block) => {
            v.push((
                $name,
                Box::new(move |$rng: &mut ChaCha8Rng| -> Result<GradReport> { $body }),
            ));
        };
    }
    check!("add", |rng| {
        let (a, b) = (uniform(&[3, 4], -1.0, 1.0, rng), uniform(&[3, 4], -1.0, 1.0, rng));
        gradcheck(
            "add",
            &|| random_projection(&a.add(&b)?, 1),
            &[a.clone(), b.clone()],
            OP_STEP,
        )
    });
    check!("sub", |rng| {
        let (a, b) = (uniform(&[3, 4], -1.0, 1.0, rng), uniform(&[3, 4], -1.0, 1.0, rng));
        gradcheck(
            "sub",
            &|| random_projection(&a.sub(&b)?, 2),
            &[a.clone(), b.clone()],
            OP_STEP,
        )
    });
    check!("mul", |rng| {
        let (a, b) = (uniform(&[3, 4], -1.0, 1.0, rng), uniform(&[3, 4], -1.0, 1.0, rng));
        gradcheck(
            "mul",
            &|| random_projection(&a.mul(&b)?, 3),
            &[a.clone(), b.clone()],
            OP_STEP,
        )
    });
    check!("div", |rng| {
        let (a, b) = (uniform(&[3, 4], -1.0, 1.0, rng), uniform(&[3, 4], 0.5, 2.0, rng));
        gradcheck(
            "div",
            &|| random_projection(&a.div(&b)?, 4),
            &[a.clone(), b.clone()],
            OP_STEP,
        )
    });
    check!("add_broadcast", |rng| {
        let (a, b) = (uniform(&[2, 3, 4], -1.0, 1.0, rng), uniform(&[3, 1], -1.0, 1.0, rng));
        gradcheck(
            "add_broadcast",
            &|| random_projection(&a.add_broadcast(&b)?, 5),
            &[a.clone(), b.clone()],
            OP_STEP,
        )
    });
    check!("mul_broadcast", |rng| {
        let (a, b) = (uniform(&[2, 3, 4], -1.0, 1.0, rng), uniform(&[4], -1.0, 1.0, rng));
        gradcheck(
            "mul_broadcast",
            &|| random_projection(&a.mul_broadcast(&b)?, 6),
            &[a.clone(), b.clone()],
            OP_STEP,
        )
    });
    check!("scale/add_scalar/neg", |rng| {
        let a = uniform(&[5], -1.0, 1.0, rng);
        gradcheck(
            "scale/add_scalar/neg",
            &|| random_projection(&a.scale(1.7).add_scalar(0.3).neg(), 7),
            std::slice::from_ref(&a),
            OP_STEP,
        )
    });
    check!("leaky_relu", |rng| {
        let a = away_from_zero(&[12], rng);
        gradcheck(
            "leaky_relu",
            &|| random_projection(&a.leaky_relu(0.01), 8),
            std::slice::from_ref(&a),
            OP_STEP,
        )
    });
    check!("gelu", |rng| {
        let a = uniform(&[12], -3.0, 3.0, rng);
        gradcheck(
            "gelu",
            &|| random_projection(&a.gelu(), 9),
            std::slice::from_ref(&a),
            OP_STEP,
        )
    });
    check!("log_clamped", |rng| {
        let a = uniform(&[8], 0.05, 2.0, rng);
        gradcheck(
            "log_clamped",
            &|| random_projection(&a.log_clamped(LOG_FLOOR)?, 10),
            std::slice::from_ref(&a),
            OP_STEP,
        )
    });
    check!("abs", |rng| {
        let a = away_from_zero(&[10], rng);
        gradcheck(
            "abs",
            &|| random_projection(&a.abs(), 11),
            std::slice::from_ref(&a),
            OP_STEP,
        )
    });
    check!("square", |rng| {
        let a = uniform(&[10], -2.0, 2.0, rng);
        gradcheck(
            "square",
            &|| random_projection(&a.square(), 12),
            std::slice::from_ref(&a),
            OP_STEP,
        )
    });
    check!("sum/mean", |rng| {
        let a = uniform(&[3, 5], -1.0, 1.0, rng);
        gradcheck(
            "sum/mean",
            &|| a.sum().add(&a.square().mean()),
            std::slice::from_ref(&a),
            OP_STEP,
        )
    });
    check!("sum_lastaxis", |rng| {
        let a = uniform(&[3, 5], -1.0, 1.0, rng);
        gradcheck(
            "sum_lastaxis",
            &|| random_projection(&a.sum_lastaxis(), 13),
            std::slice::from_ref(&a),
            OP_STEP,
        )
    });
    check!("reshape/permute", |rng| {
        let a = uniform(&[2, 3, 4], -1.0, 1.0, rng);
        gradcheck(
            "reshape/permute",
            &|| random_projection(&a.permute(&[2, 0, 1])?.reshape(&[4, 6])?, 14),
            std::slice::from_ref(&a),
            OP_STEP,
        )
    });
    check!("narrow", |rng| {
        let a = uniform(&[3, 5, 2], -1.0, 1.0, rng);
        gradcheck(
            "narrow",
            &|| random_projection(&a.narrow(1, 1, 3)?, 15),
            std::slice::from_ref(&a),
            OP_STEP,
        )
    });
    check!("gather_rows", |rng| {
        let a = uniform(&[4, 3], -1.0, 1.0, rng);
        let rows = [Some(2), None, Some(0), Some(2), Some(3)];
        gradcheck(
            "gather_rows",
            &|| random_projection(&a.gather_rows(&rows)?, 16),
            std::slice::from_ref(&a),
            OP_STEP,
        )
    });
    check!("concat", |rng| {
        let (a, b) = (uniform(&[2, 3, 2], -1.0, 1.0, rng), uniform(&[2, 1, 2], -1.0, 1.0, rng));
        gradcheck(
            "concat",
            &|| random_projection(&concat(&[a.clone(), b.clone()], 1)?, 17),
            &[a.clone(), b.clone()],
            OP_STEP,
        )
    });
    check!("linear", |rng| {
        let (x, w, b) = (
            uniform(&[2, 3, 4], -1.0, 1.0, rng),
            uniform(&[5, 4], -1.0, 1.0, rng),
            uniform(&[5], -1.0, 1.0, rng),
        );
        gradcheck(
            "linear",
            &|| random_projection(&x.linear(&w, Some(&b))?, 18),
            &[x.clone(), w.clone(), b.clone()],
            OP_STEP,
        )
    });
    check!("bmm", |rng| {
        let (a, b, c) = (
            uniform(&[2, 3, 4], -1.0, 1.0, rng),
            uniform(&[2, 4, 5], -1.0, 1.0, rng),
            uniform(&[2, 5, 4], -1.0, 1.0, rng),
        );
        gradcheck(
            "bmm",
            &|| random_projection(&a.bmm(&b, false)?.add(&a.bmm(&c, true)?)?, 19),
            &[a.clone(), b.clone(), c.clone()],
            OP_STEP,
        )
    });
    check!("softmax_lastaxis", |rng| {
        let a = uniform(&[3, 6], -3.0, 3.0, rng);
        gradcheck(
            "softmax_lastaxis",
            &|| random_projection(&a.softmax_lastaxis(), 20),
            std::slice::from_ref(&a),
            OP_STEP,
        )
    });
    check!("layer_norm", |rng| {
        let (x, g, b) = (
            uniform(&[4, 6], -1.0, 1.0, rng),
            uniform(&[6], 0.5, 1.5, rng),
            uniform(&[6], -0.5, 0.5, rng),
        );
        gradcheck(
            "layer_norm",
            &|| random_projection(&layer_norm(&x, &g, &b, NORM_EPS)?, 21),
            &[x.clone(), g.clone(), b.clone()],
            OP_STEP,
        )
    });
    check!("instance_norm", |rng| {
        let (x, g, b) = (
            uniform(&[1, 2, 3, 3, 2], -1.0, 1.0, rng),
            uniform(&[2], 0.5, 1.5, rng),
            uniform(&[2], -0.5, 0.5, rng),
        );
        gradcheck(
            "instance_norm",
            &|| random_projection(&instance_norm(&x, &g, &b, NORM_EPS)?, 22),
            &[x.clone(), g.clone(), b.clone()],
            OP_STEP,
        )
    });
    check!("conv3d", |rng| {
        let (x, w, b, w2) = (
            uniform(&[1, 2, 4, 4, 3], -1.0, 1.0, rng),
            uniform(&[3, 2, 3, 3, 3], -0.5, 0.5, rng),
            uniform(&[3], -0.5, 0.5, rng),
            uniform(&[2, 2, 2, 2, 2], -0.5, 0.5, rng),
        );
        gradcheck(
            "conv3d",
            &|| {
                let same = conv3d(&x, &w, Some(&b), 1, 1)?;
                let strided = conv3d(&x, &w2, None, 2, 1)?;
                random_projection(&same, 23)?.add(&random_projection(&strided, 24)?)
            },
            &[x.clone(), w.clone(), b.clone(), w2.clone()],
            OP_STEP,
        )
    });
    check!("conv_transpose3d", |rng| {
        let (x, w, b) = (
            uniform(&[1, 3, 2, 3, 2], -1.0, 1.0, rng),
            uniform(&[3, 2, 2, 2, 2], -0.5, 0.5, rng),
            uniform(&[2], -0.5, 0.5, rng),
        );
        gradcheck(
            "conv_transpose3d",
            &|| random_projection(&conv_transpose3d(&x, &w, Some(&b), 2, 2)?, 25),
            &[x.clone(), w.clone(), b.clone()],
            OP_STEP,
        )
    });
    check!("trilinear_upsample", |rng| {
        let x = uniform(&[1, 2, 3, 2, 3], -1.0, 1.0, rng);
        gradcheck(
            "trilinear_upsample",
            &|| {
                random_projection(
                    &trilinear_upsample(&x, 2)?.add(
                        &trilinear_upsample(&x, 4)?
                            .narrow(2, 0, 6)?
                            .narrow(3, 0, 4)?
                            .narrow(4, 0, 6)?,
                    )?,
                    26,
                )
            },
            std::slice::from_ref(&x),
            OP_STEP,
        )
    });
    v
}

fn layer_checks() -> Vec<Check> {
    let mut v: Vec<Check> = Vec::new();
    v.push((
        "window_attention(shifted)",
        Box::new(|rng| {
            let p = Params::new(rng.random());
            let attn = WindowAttention::new(&p, 8, 2, 2, true)?;
            randomize(&p, 0.4, rng);
            let x = uniform(&[3 * 5 * 3, 8], -1.0, 1.0, rng);
            let mut inputs = leaves(&p);
            inputs.push(x.clone());
            gradcheck(
                "window_attention(shifted)",
                &|| random_projection(&windowed_attention(&attn, [3, 5, 3], &x, true)?, 30),
                &inputs,
                OP_STEP,
            )
        }),
    ));
    v.push((
        "swin_block",
        Box::new(|rng| {
            let p = Params::new(rng.random());
            let block = SwinBlock::new(&p, 8, 2, 2, 16, true, true)?;
            randomize(&p, 0.4, rng);
            let x = uniform(&[4 * 4 * 4, 8], -1.0, 1.0, rng);
            let mut inputs = leaves(&p);
            inputs.push(x.clone());
            gradcheck(
                "swin_block",
                &|| random_projection(&block.forward(&TokenGrid::new([4, 4, 4], x.clone())?)?.values, 31),
                &inputs,
                OP_STEP,
            )
        }),
    ));
    v.push((
        "decoder_layer",
        Box::new(|rng| {
            let p = Params::new(rng.random());
            let layer = DecoderLayer::new(&p, 8, 2, &EncoderConfig::tiny(), false)?;
            randomize(&p, 0.4, rng);
            let x = uniform(&[2 * 4 * 2, 8], -1.0, 1.0, rng);
            let mut inputs = leaves(&p);
            inputs.push(x.clone());
            gradcheck(
                "decoder_layer",
                &|| random_projection(&layer.forward(&TokenGrid::new([2, 4, 2], x.clone())?)?.values, 32),
                &inputs,
                OP_STEP,
            )
        }),
    ));
    v.push((
        "patch_embed/merge",
        Box::new(|rng| {
            let p = Params::new(rng.random());
            let embed = PatchEmbed::new(&p.sub("embed"), 4)?;
            let merge = PatchMerge::new(&p.sub("merge"), 4)?;
            randomize(&p, 0.5, rng);
            let x = uniform(&[1, 1, 4, 6, 4], -1.0, 1.0, rng);
            let mut inputs = leaves(&p);
            inputs.push(x.clone());
            gradcheck(
                "patch_embed/merge",
                &|| random_projection(&merge.forward(&embed.forward(&x)?)?.values, 33),
                &inputs,
                OP_STEP,
            )
        }),
    ));
    v.push((
        "cnn_block",
        Box::new(|rng| {
            let p = Params::new(rng.random());
            let block = CnnBlock::new(&p, 2, 3)?;
            randomize(&p, 0.5, rng);
            let x = uniform(&[1, 2, 3, 4, 3], -1.0, 1.0, rng);
            let mut inputs = leaves(&p);
            inputs.push(x.clone());
            gradcheck(
                "cnn_block",
                &|| random_projection(&block.forward(&x)?, 34),
                &inputs,
                OP_STEP,
            )
        }),
    ));
    v.push((
        "dice_ce_loss",
        Box::new(|rng| {
            let logits = uniform(&[1, 3, 2, 3, 2], -2.0, 2.0, rng);
            let labels = Labels::new([2, 3, 2], (0..12).map(|i| (i % 3) as u16).collect())?;
            let g = labels.one_hot(3)?;
            gradcheck(
                "dice_ce_loss",
                &|| {
                    let y = crate::losses::class_probabilities(&logits)?;
                    dice_ce_loss(&y, &g, DICE_SMOOTH)
                },
                std::slice::from_ref(&logits),
                OP_STEP,
            )
        }),
    ));
    v.push((
        "masked_l1",
        Box::new(|rng| {
            let mask = generate_mask([4, 4, 4], 2, 0.5, 3)?;
            let pred = uniform(&[1, 1, 4, 4, 4], -1.0, 1.0, rng);
            let target = Tensor::from_fn(&[1, 1, 4, 4, 4], |i| if i % 2 == 0 { 2.0 } else { -2.0 });
            gradcheck(
                "masked_l1",
                &|| masked_l1(&pred, &target, &mask, L1Normalization::Voxels),
                std::slice::from_ref(&pred),
                OP_STEP,
            )
        }),
    ));
    v
}

fn model_check(variant: Variant, opts: SuiteOptions) -> Result<GradReport> {
    let enc = EncoderConfig::tiny();
    let dec = DecoderConfig {
        variant,
        ..DecoderConfig::default()
    };
    let model = SegModel::new(&enc, &dec, opts.seed)?;
    generic_point(&model.params, &mut ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed));
    let sample = &synth_dataset(1, 32, 3, opts.seed, SynthConfig::default())?[0];
    let name = match variant {
        Variant::Cnn => "model(cnn decoder)",
        Variant::Transformer => "model(transformer decoder)",
    };
    gradcheck_sampled(
        name,
        &|| {
            deep_supervision_loss(
                &model.forward(&sample.image)?,
                &sample.label,
                LossWeights::default(),
                DICE_SMOOTH,
            )
        },
        &leaves(&model.params),
        MODEL_STEP,
        opts.model_coords,
        opts.seed,
    )
}

fn pretrain_check(opts: SuiteOptions) -> Result<GradReport> {
    let model = PretrainModel::new(&EncoderConfig::tiny(), opts.seed)?;
    generic_point(&model.params, &mut ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed));
    let volume = synth_dataset(1, 32, 3, opts.seed, SynthConfig::default())?[0]
        .image
        .clone();
    let mask = generate_mask([32; 3], 8, 0.4, opts.seed)?;
    gradcheck_sampled(
        "model(reconstruction)",
        &|| crate::pretrain::pretrain_loss(&model, &volume, &mask, &Default::default()),
        &leaves(&model.params),
        MODEL_STEP,
        opts.model_coords,
        opts.seed,
    )
}

/// Names of all checks in run order.
pub fn check_names(opts: SuiteOptions) -> Vec<&'static str> {
    let mut names: Vec<&'static str> = op_checks()
        .iter()
        .chain(layer_checks().iter())
        .map(|(n, _)| *n)
        .collect();
    if opts.models {
        names.extend([
            "model(cnn decoder)",
            "model(transformer decoder)",
            "model(reconstruction)",
        ]);
    }
    names
}

/// Runs every check, calling `progress` after each one.
pub fn run_suite(opts: SuiteOptions, progress: &mut dyn FnMut(&GradReport)) -> Result<Vec<GradReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut out = Vec::new();
    for (_, check) in op_checks().into_iter().chain(layer_checks()) {
        let r = check(&mut rng)?;
        progress(&r);
        out.push(r);
    }
    if opts.models {
        for r in [
            model_check(Variant::Cnn, opts),
            model_check(Variant::Transformer, opts),
            pretrain_check(opts),
        ] {
            let r = r?;
            progress(&r);
            out.push(r);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn op_and_layer_checks_pass() {
        let opts = SuiteOptions {
            models: false,
            ..SuiteOptions::default()
        };
        let reports = run_suite(opts, &mut |_| {}).unwrap();
        assert_eq!(reports.len(), check_names(opts).len());
        for r in &reports {
            assert!(r.passes(GRAD_TOL), "{r:?}");
        }
    }
}
