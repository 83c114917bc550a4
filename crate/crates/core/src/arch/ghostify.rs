//! Conv-to-Ghost-module rewriting.

use super::spec::{GhostSpec, LayerSpec, NetworkSpec};
use crate::error::Result;

/// Replaces every conv with more than one output channel by a Ghost module with the
/// same width, kernel, stride and padding, using ratio `s` and cheap kernel `d`.
///
/// The emitted modules carry no internal BN or ReLU (the surrounding layers already
/// provide them) and keep the conv's bias, so `s = 1` is parameter-identical to the
/// original. Ghost modules are left alone, which makes the rewrite idempotent.
pub fn ghostify(spec: &NetworkSpec, s: usize, d: usize) -> Result<NetworkSpec> {
    let mut out = spec.clone();
    for layer in &mut out.layers {
        if let LayerSpec::Conv(c) = *layer {
            if c.out > 1 {
                *layer = LayerSpec::Ghost(GhostSpec {
                    out: c.out,
                    kernel: c.kernel,
                    stride: c.stride,
                    padding: c.padding,
                    ratio: s,
                    cheap_kernel: d,
                    relu: false,
                    bn: false,
                    cheap_bn: false,
                    bias: c.bias,
                });
            }
        }
    }
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::zoo;

    #[test]
    fn preserves_shapes_and_is_idempotent() {
        let base = zoo::vgg16_cifar(0.25, 10).unwrap();
        let g = ghostify(&base, 2, 3).unwrap();
        assert_eq!(base.shapes().unwrap(), g.shapes().unwrap());
        assert_eq!(ghostify(&g, 2, 3).unwrap(), g);
        assert!(g.layers.iter().all(|l| !matches!(l, LayerSpec::Conv(_))));
    }

    #[test]
    fn ratio_above_width_is_rejected() {
        let base = zoo::tiny_ghost_cnn((1, 8, 8), 2).unwrap();
        assert!(ghostify(&base, 17, 3).is_err());
    }
}
