//! Ready-made specs: GhostNet, a CIFAR-style VGG-16 and a small Ghost CNN.

use super::spec::{BneckSpec, ConvSpec, LayerSpec, NetworkSpec};
use crate::error::{Error, Result};

/// `(exp, out, se, stride)` for each Ghost bottleneck.
pub const GHOSTNET_BOTTLENECKS: [(usize, usize, bool, usize); 16] = [
    (16, 16, false, 1),
    (48, 24, false, 2),
    (72, 24, false, 1),
    (72, 40, true, 2),
    (120, 40, true, 1),
    (240, 80, false, 2),
    (200, 80, false, 1),
    (184, 80, false, 1),
    (184, 80, false, 1),
    (480, 112, true, 1),
    (672, 112, true, 1),
    (672, 160, true, 2),
    (960, 160, false, 1),
    (960, 160, true, 1),
    (960, 160, false, 1),
    (960, 160, true, 1),
];
pub const GHOSTNET_STEM: usize = 16;
pub const GHOSTNET_HEAD: usize = 960;
pub const GHOSTNET_FEATURES: usize = 1280;

/// Bottlenecks that drop to stride 1 on small inputs.
const SMALL_INPUT_STRIDE1: [usize; 2] = [1, 3];

/// `alpha * width` rounded to the nearest multiple of 4 (ties up), at least 4.
pub fn scale_width(width: usize, alpha: f64) -> usize {
    let quarters = (alpha * width as f64 / 4.0 + 0.5).floor();
    (quarters as usize * 4).max(4)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("width multiplier must be positive, got {alpha}")))
    }
}

fn conv(out: usize, kernel: usize, stride: usize, bias: bool) -> LayerSpec {
    LayerSpec::Conv(ConvSpec {
        out,
        kernel,
        stride,
        padding: (kernel - 1) / 2,
        bias,
    })
}

/// GhostNet for 3x224x224 inputs.
pub fn build_ghostnet(alpha: f64, num_classes: usize) -> Result<NetworkSpec> {
    build_ghostnet_for(alpha, num_classes, (3, 224, 224))
}

/// GhostNet for an arbitrary input. Inputs of 64 pixels or less per side use a
/// stride-1 stem and keep only the last two stride-2 stages.
pub fn build_ghostnet_for(alpha: f64, num_classes: usize, input: (usize, usize, usize)) -> Result<NetworkSpec> {
    check_alpha(alpha)?;
    let small = input.1.max(input.2) <= 64;
    let w = |c| scale_width(c, alpha);
    let mut spec = NetworkSpec::new(input, num_classes);
    spec.width_multiplier = alpha;
    spec.push(conv(w(GHOSTNET_STEM), 3, if small { 1 } else { 2 }, false))
        .push(LayerSpec::BatchNorm)
        .push(LayerSpec::Relu);
    for (i, &(exp, out, se, stride)) in GHOSTNET_BOTTLENECKS.iter().enumerate() {
        let stride = if small && SMALL_INPUT_STRIDE1.contains(&i) { 1 } else { stride };
        spec.push(LayerSpec::Bottleneck(BneckSpec::new(w(exp), w(out), se, stride)));
    }
    spec.push(conv(w(GHOSTNET_HEAD), 1, 1, false))
        .push(LayerSpec::BatchNorm)
        .push(LayerSpec::Relu)
        .push(LayerSpec::AvgPool(None))
        .push(conv(w(GHOSTNET_FEATURES), 1, 1, true))
        .push(LayerSpec::Relu)
        .push(LayerSpec::Flatten)
        .push(LayerSpec::Fc {
            out: num_classes,
            bias: true,
        });
    spec.validate()?;
    Ok(spec)
}

/// Conv widths of the 13-conv VGG-16; `None` marks a 2x2 average pool.
pub const VGG16_PLAN: [Option<usize>; 18] = [
    Some(64),
    Some(64),
    None,
    Some(128),
    Some(128),
    None,
    Some(256),
    Some(256),
    Some(256),
    None,
    Some(512),
    Some(512),
    Some(512),
    None,
    Some(512),
    Some(512),
    Some(512),
    None,
];

/// VGG-16 for 32x32 inputs: 13 conv3x3+BN+ReLU layers, five 2x2 pools, one FC.
pub fn vgg16_cifar(alpha: f64, num_classes: usize) -> Result<NetworkSpec> {
    check_alpha(alpha)?;
    let mut spec = NetworkSpec::new((3, 32, 32), num_classes);
    spec.width_multiplier = alpha;
    for step in VGG16_PLAN {
        match step {
            Some(c) => {
                spec.push(conv(scale_width(c, alpha), 3, 1, false))
                    .push(LayerSpec::BatchNorm)
                    .push(LayerSpec::Relu);
            }
            None => {
                spec.push(LayerSpec::AvgPool(Some((2, 2))));
            }
        }
    }
    spec.push(LayerSpec::Flatten).push(LayerSpec::Fc {
        out: num_classes,
        bias: true,
    });
    spec.validate()?;
    Ok(spec)
}

/// Stem conv, two Ghost bottlenecks (the second with SE), global pool and FC.
pub fn tiny_ghost_cnn(input: (usize, usize, usize), num_classes: usize) -> Result<NetworkSpec> {
    let mut spec = NetworkSpec::new(input, num_classes);
    spec.push(conv(16, 3, 1, false))
        .push(LayerSpec::BatchNorm)
        .push(LayerSpec::Relu)
        .push(LayerSpec::Bottleneck(BneckSpec::new(32, 24, false, 2)))
        .push(LayerSpec::Bottleneck(BneckSpec::new(64, 32, true, 2)))
        .push(LayerSpec::AvgPool(None))
        .push(LayerSpec::Flatten)
        .push(LayerSpec::Fc {
            out: num_classes,
            bias: true,
        });
    spec.validate()?;
    Ok(spec)
}
