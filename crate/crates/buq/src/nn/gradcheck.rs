//! Finite-difference validation of the backward pass.

use crate::error::Result;
use crate::nn::net::{cross_entropy, ActShape, Cache, DropoutPass, LayerWb, Net};
use crate::nn::{Architecture, ModelParams};
use crate::tensor::TensorF32;

const FD_STEP: f64 = 1e-3;

/// Floor for the relative-error denominator. Central differences at step
/// 1e-3 carry O(1e-7) absolute truncation error, so gradients far below
/// this scale are compared against it rather than against themselves.
const DENOM_FLOOR: f64 = 1e-3;

/// Compares the analytic cross-entropy gradient against central finite
/// differences on an f64 promotion of a freshly initialized model, and
/// returns the maximum relative error over all parameters.
///
/// Dropout layers run in off mode on both sides. Intended for small
/// architectures (at most ~1e4 parameters).
pub fn grad_check(arch: &Architecture, x: &TensorF32, label: usize, init_seed: u64) -> Result<f64> {
    let model = ModelParams::init(arch, init_seed);
    let mut wb: Vec<LayerWb<f64>> = model
        .wb()
        .iter()
        .map(|l| LayerWb {
            w: l.w.iter().map(|&v| v as f64).collect(),
            b: l.b.iter().map(|&v| v as f64).collect(),
        })
        .collect();
    let x64: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
    let shape = match *x.shape() {
        [d] => ActShape::Flat(d),
        [h, w] => ActShape::Spatial { c: 1, h, w },
        [c, h, w] => ActShape::Spatial { c, h, w },
        ref other => {
            return Err(crate::error::Error::InputShape {
                expected: "[d], [h, w] or [c, h, w]".into(),
                got: format!("{other:?}"),
            })
        }
    };

    let loss_of = |wb: &[LayerWb<f64>]| -> Result<f64> {
        let net = Net {
            layers: &model.layers()[..],
            wb,
        };
        let (logits, out_shape) = net.forward_logits(&x64, 1, shape, DropoutPass::Off, None)?;
        let (loss, _) = cross_entropy(&logits, &[label], 1, out_shape.numel());
        Ok(loss)
    };

    // analytic gradient
    let analytic = {
        let net = Net {
            layers: &model.layers()[..],
            wb: &wb,
        };
        let mut caches: Vec<Cache<f64>> = Vec::new();
        let (logits, out_shape) =
            net.forward_logits(&x64, 1, shape, DropoutPass::Off, Some(&mut caches))?;
        let (_, dlogits) = cross_entropy(&logits, &[label], 1, out_shape.numel());
        net.backward(&caches, dlogits, 1)
    };

    let mut max_rel = 0.0f64;
    for li in 0..wb.len() {
        for is_bias in [false, true] {
            let len = if is_bias { wb[li].b.len() } else { wb[li].w.len() };
            for pi in 0..len {
                let set = |wb: &mut [LayerWb<f64>], v: f64| {
                    if is_bias {
                        wb[li].b[pi] = v;
                    } else {
                        wb[li].w[pi] = v;
                    }
                };
                let original = if is_bias { wb[li].b[pi] } else { wb[li].w[pi] };
                set(&mut wb, original + FD_STEP);
                let plus = loss_of(&wb)?;
                set(&mut wb, original - FD_STEP);
                let minus = loss_of(&wb)?;
                set(&mut wb, original);
                let numeric = (plus - minus) / (2.0 * FD_STEP);
                let a = if is_bias {
                    analytic[li].b[pi]
                } else {
                    analytic[li].w[pi]
                };
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(DENOM_FLOOR);
                if rel > max_rel {
                    max_rel = rel;
                }
            }
        }
    }
    Ok(max_rel)
}
