//! Generic compute kernels for the layer chain.
//!
//! Everything here is instantiated at `f32` for training and inference and
//! at `f64` for the finite-difference gradient oracle, so the same code path
//! is validated in both precisions.

use num_traits::Float;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::LayerSpec;

/// Shape of one sample's activation, batch axis excluded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ActShape {
    Flat(usize),
    Spatial { c: usize, h: usize, w: usize },
}

impl ActShape {
    pub(crate) fn numel(&self) -> usize {
        match *self {
            ActShape::Flat(d) => d,
            ActShape::Spatial { c, h, w } => c * h * w,
        }
    }

    pub(crate) fn describe(&self) -> String {
        match *self {
            ActShape::Flat(d) => format!("[{d}]"),
            ActShape::Spatial { c, h, w } => format!("[{c}, {h}, {w}]"),
        }
    }
}

/// Weights and bias of one layer; both empty for parameterless layers.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LayerWb<T> {
    pub w: Vec<T>,
    pub b: Vec<T>,
}

impl<T> LayerWb<T> {
    pub(crate) fn empty() -> Self {
        Self {
            w: Vec::new(),
            b: Vec::new(),
        }
    }
}

/// How dropout layers behave during a pass.
pub(crate) enum DropoutPass<'r> {
    /// Identity; used at plain inference and by the ensemble posterior.
    Off,
    /// Per-element masks over the whole batch, for training.
    PerElement(&'r mut ChaCha8Rng),
    /// One mask per feature shared across the batch, so a pass behaves as a
    /// fixed parameter sample no matter how inputs are batched.
    PerFeature(&'r mut ChaCha8Rng),
}

/// Per-layer state recorded by a forward pass for the backward pass.
pub(crate) enum Cache<T> {
    /// The layer's input activations.
    Input { data: Vec<T>, shape: ActShape },
    /// Dropout multipliers (0 or 1/(1-p)), same length as the activation.
    Mask(Vec<T>),
    /// Max-pool winner index into the input feature map, per output element.
    ArgMax { idx: Vec<u32>, in_shape: ActShape },
    /// Shape bookkeeping only.
    Shape(ActShape),
    None,
}

fn shape_error(expected: String, got: &ActShape) -> Error {
    Error::InputShape {
        expected,
        got: got.describe(),
    }
}

/// Output shape of `layer` applied to `input`, or an error when it cannot
/// accept that shape.
pub(crate) fn infer_shape(layer: &LayerSpec, input: ActShape) -> Result<ActShape> {
    match *layer {
        LayerSpec::Dense { input: d_in, output } => match input {
            ActShape::Flat(d) if d == d_in => Ok(ActShape::Flat(output)),
            other => Err(shape_error(format!("[{d_in}]"), &other)),
        },
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
        } => match input {
            ActShape::Spatial { c, h, w } if c == in_channels && h >= kernel && w >= kernel => {
                Ok(ActShape::Spatial {
                    c: out_channels,
                    h: (h - kernel) / stride + 1,
                    w: (w - kernel) / stride + 1,
                })
            }
            other => Err(shape_error(
                format!("[{in_channels}, >={kernel}, >={kernel}]"),
                &other,
            )),
        },
        LayerSpec::MaxPool2d { kernel, stride } => match input {
            ActShape::Spatial { c, h, w } if h >= kernel && w >= kernel => Ok(ActShape::Spatial {
                c,
                h: (h - kernel) / stride + 1,
                w: (w - kernel) / stride + 1,
            }),
            other => Err(shape_error(format!("[c, >={kernel}, >={kernel}]"), &other)),
        },
        LayerSpec::Relu | LayerSpec::Dropout { .. } | LayerSpec::Softmax => Ok(input),
        LayerSpec::Flatten => Ok(ActShape::Flat(input.numel())),
        LayerSpec::GlobalAvgPool => match input {
            ActShape::Spatial { c, .. } => Ok(ActShape::Flat(c)),
            other => Err(shape_error("[c, h, w]".into(), &other)),
        },
    }
}

fn dense_forward<T: Float>(
    x: &[T],
    w: &[T],
    b: &[T],
    batch: usize,
    d_in: usize,
    d_out: usize,
) -> Vec<T> {
    let mut y = vec![T::zero(); batch * d_out];
    for bi in 0..batch {
        let xrow = &x[bi * d_in..(bi + 1) * d_in];
        let yrow = &mut y[bi * d_out..(bi + 1) * d_out];
        for (o, yv) in yrow.iter_mut().enumerate() {
            let wrow = &w[o * d_in..(o + 1) * d_in];
            let mut acc = b[o];
            for (&xv, &wv) in xrow.iter().zip(wrow) {
                acc = acc + xv * wv;
            }
            *yv = acc;
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn dense_backward<T: Float>(
    dy: &[T],
    x: &[T],
    w: &[T],
    batch: usize,
    d_in: usize,
    d_out: usize,
    dw: &mut [T],
    db: &mut [T],
) -> Vec<T> {
    let mut dx = vec![T::zero(); batch * d_in];
    for bi in 0..batch {
        let dyrow = &dy[bi * d_out..(bi + 1) * d_out];
        let xrow = &x[bi * d_in..(bi + 1) * d_in];
        let dxrow = &mut dx[bi * d_in..(bi + 1) * d_in];
        for (o, &g) in dyrow.iter().enumerate() {
            db[o] = db[o] + g;
            let wrow = &w[o * d_in..(o + 1) * d_in];
            for (dxv, &wv) in dxrow.iter_mut().zip(wrow) {
                *dxv = *dxv + g * wv;
            }
            let dwrow = &mut dw[o * d_in..(o + 1) * d_in];
            for (dwv, &xv) in dwrow.iter_mut().zip(xrow) {
                *dwv = *dwv + g * xv;
            }
        }
    }
    dx
}

struct ConvDims {
    in_c: usize,
    out_c: usize,
    k: usize,
    s: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

fn conv_forward<T: Float>(x: &[T], wgt: &[T], b: &[T], batch: usize, d: &ConvDims) -> Vec<T> {
    let mut y = vec![T::zero(); batch * d.out_c * d.oh * d.ow];
    let in_plane = d.h * d.w;
    let out_plane = d.oh * d.ow;
    for bi in 0..batch {
        let xb = &x[bi * d.in_c * in_plane..(bi + 1) * d.in_c * in_plane];
        let yb = &mut y[bi * d.out_c * out_plane..(bi + 1) * d.out_c * out_plane];
        for oc in 0..d.out_c {
            let yplane = &mut yb[oc * out_plane..(oc + 1) * out_plane];
            for v in yplane.iter_mut() {
                *v = b[oc];
            }
            for ic in 0..d.in_c {
                let xplane = &xb[ic * in_plane..(ic + 1) * in_plane];
                let wbase = ((oc * d.in_c) + ic) * d.k * d.k;
                for ky in 0..d.k {
                    for kx in 0..d.k {
                        let wv = wgt[wbase + ky * d.k + kx];
                        for oy in 0..d.oh {
                            let xrow = &xplane[(oy * d.s + ky) * d.w..];
                            let yrow = &mut yplane[oy * d.ow..(oy + 1) * d.ow];
                            for (ox, yv) in yrow.iter_mut().enumerate() {
                                *yv = *yv + xrow[ox * d.s + kx] * wv;
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Float>(
    dy: &[T],
    x: &[T],
    wgt: &[T],
    batch: usize,
    d: &ConvDims,
    dw: &mut [T],
    db: &mut [T],
) -> Vec<T> {
    let mut dx = vec![T::zero(); batch * d.in_c * d.h * d.w];
    let in_plane = d.h * d.w;
    let out_plane = d.oh * d.ow;
    for bi in 0..batch {
        let xb = &x[bi * d.in_c * in_plane..(bi + 1) * d.in_c * in_plane];
        let dyb = &dy[bi * d.out_c * out_plane..(bi + 1) * d.out_c * out_plane];
        let dxb = &mut dx[bi * d.in_c * in_plane..(bi + 1) * d.in_c * in_plane];
        for oc in 0..d.out_c {
            let dyplane = &dyb[oc * out_plane..(oc + 1) * out_plane];
            for g in dyplane {
                db[oc] = db[oc] + *g;
            }
            for ic in 0..d.in_c {
                let xplane = &xb[ic * in_plane..(ic + 1) * in_plane];
                let dxplane = &mut dxb[ic * in_plane..(ic + 1) * in_plane];
                let wbase = ((oc * d.in_c) + ic) * d.k * d.k;
                for ky in 0..d.k {
                    for kx in 0..d.k {
                        let wv = wgt[wbase + ky * d.k + kx];
                        let mut wg = T::zero();
                        for oy in 0..d.oh {
                            let xoff = (oy * d.s + ky) * d.w + kx;
                            let dyrow = &dyplane[oy * d.ow..(oy + 1) * d.ow];
                            for (ox, &g) in dyrow.iter().enumerate() {
                                wg = wg + g * xplane[xoff + ox * d.s];
                                dxplane[xoff + ox * d.s] = dxplane[xoff + ox * d.s] + g * wv;
                            }
                        }
                        dw[wbase + ky * d.k + kx] = dw[wbase + ky * d.k + kx] + wg;
                    }
                }
            }
        }
    }
    dx
}

fn maxpool_forward<T: Float>(
    x: &[T],
    batch: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    s: usize,
) -> (Vec<T>, Vec<u32>) {
    let oh = (h - k) / s + 1;
    let ow = (w - k) / s + 1;
    let mut y = vec![T::zero(); batch * c * oh * ow];
    let mut idx = vec![0u32; batch * c * oh * ow];
    let in_plane = h * w;
    let out_plane = oh * ow;
    for bi in 0..batch {
        for ci in 0..c {
            let xplane = &x[(bi * c + ci) * in_plane..(bi * c + ci + 1) * in_plane];
            let base = (bi * c + ci) * out_plane;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = xplane[oy * s * w + ox * s];
                    let mut best_at = (oy * s * w + ox * s) as u32;
                    for ky in 0..k {
                        for kx in 0..k {
                            let at = (oy * s + ky) * w + ox * s + kx;
                            if xplane[at] > best {
                                best = xplane[at];
                                best_at = at as u32;
                            }
                        }
                    }
                    y[base + oy * ow + ox] = best;
                    // index is relative to this sample+channel plane
                    idx[base + oy * ow + ox] = best_at;
                }
            }
        }
    }
    (y, idx)
}

/// Numerically stable softmax over the last axis, in place semantics.
pub(crate) fn softmax_rows<T: Float>(x: &[T], batch: usize, m: usize) -> Vec<T> {
    let mut y = vec![T::zero(); batch * m];
    for bi in 0..batch {
        let row = &x[bi * m..(bi + 1) * m];
        let yrow = &mut y[bi * m..(bi + 1) * m];
        let mut mx = row[0];
        for &v in row.iter() {
            mx = mx.max(v);
        }
        let mut sum = T::zero();
        for (yv, &v) in yrow.iter_mut().zip(row) {
            *yv = (v - mx).exp();
            sum = sum + *yv;
        }
        for yv in yrow.iter_mut() {
            *yv = *yv / sum;
        }
    }
    y
}

/// Mean cross-entropy over the batch plus the gradient w.r.t. the logits.
///
/// Loss accumulates in f64; the gradient is `(softmax - onehot) / batch`.
pub(crate) fn cross_entropy<T: Float>(
    logits: &[T],
    labels: &[usize],
    batch: usize,
    m: usize,
) -> (f64, Vec<T>) {
    let probs = softmax_rows(logits, batch, m);
    let mut loss = 0.0f64;
    let mut dlogits = probs;
    let inv_b = T::one() / T::from(batch).unwrap();
    for (bi, &label) in labels.iter().enumerate() {
        let p = dlogits[bi * m + label];
        loss -= p.to_f64().unwrap().max(1e-45).ln();
        for v in &mut dlogits[bi * m..(bi + 1) * m] {
            *v = *v * inv_b;
        }
        dlogits[bi * m + label] = dlogits[bi * m + label] - inv_b;
    }
    (loss / batch as f64, dlogits)
}

/// A layer chain plus its weights, generic over precision.
pub(crate) struct Net<'a, T> {
    pub layers: &'a [LayerSpec],
    pub wb: &'a [LayerWb<T>],
}

impl<'a, T: Float> Net<'a, T> {
    /// Runs all layers except a trailing softmax and returns the logits.
    ///
    /// When `caches` is given, per-layer state needed by [`Self::backward`]
    /// is recorded.
    pub(crate) fn forward_logits(
        &self,
        x: &[T],
        batch: usize,
        shape: ActShape,
        mut dropout: DropoutPass<'_>,
        mut caches: Option<&mut Vec<Cache<T>>>,
    ) -> Result<(Vec<T>, ActShape)> {
        assert_eq!(x.len(), batch * shape.numel(), "batch data length mismatch");
        let mut act = x.to_vec();
        let mut act_shape = shape;
        for (li, layer) in self.layers.iter().enumerate() {
            if matches!(layer, LayerSpec::Softmax) && li == self.layers.len() - 1 {
                break;
            }
            let out_shape = infer_shape(layer, act_shape)?;
            let cache = match *layer {
                LayerSpec::Dense { input, output } => {
                    let wb = &self.wb[li];
                    let y = dense_forward(&act, &wb.w, &wb.b, batch, input, output);
                    let prev = std::mem::replace(&mut act, y);
                    Cache::Input {
                        data: prev,
                        shape: act_shape,
                    }
                }
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                } => {
                    let (h, w) = match act_shape {
                        ActShape::Spatial { h, w, .. } => (h, w),
                        _ => unreachable!("infer_shape validated spatial input"),
                    };
                    let (oh, ow) = match out_shape {
                        ActShape::Spatial { h, w, .. } => (h, w),
                        _ => unreachable!(),
                    };
                    let dims = ConvDims {
                        in_c: in_channels,
                        out_c: out_channels,
                        k: kernel,
                        s: stride,
                        h,
                        w,
                        oh,
                        ow,
                    };
                    let wb = &self.wb[li];
                    let y = conv_forward(&act, &wb.w, &wb.b, batch, &dims);
                    let prev = std::mem::replace(&mut act, y);
                    Cache::Input {
                        data: prev,
                        shape: act_shape,
                    }
                }
                LayerSpec::MaxPool2d { kernel, stride } => {
                    let (c, h, w) = match act_shape {
                        ActShape::Spatial { c, h, w } => (c, h, w),
                        _ => unreachable!(),
                    };
                    let (y, idx) = maxpool_forward(&act, batch, c, h, w, kernel, stride);
                    act = y;
                    Cache::ArgMax {
                        idx,
                        in_shape: act_shape,
                    }
                }
                LayerSpec::Relu => {
                    let prev = act.clone();
                    for v in &mut act {
                        if *v < T::zero() {
                            *v = T::zero();
                        }
                    }
                    Cache::Input {
                        data: prev,
                        shape: act_shape,
                    }
                }
                LayerSpec::Dropout { p } if p == 0.0 => Cache::None,
                LayerSpec::Dropout { p } => match &mut dropout {
                    DropoutPass::Off => Cache::None,
                    DropoutPass::PerElement(rng) => {
                        let keep_scale = T::from(1.0 / (1.0 - p as f64)).unwrap();
                        let mut mask = vec![T::zero(); act.len()];
                        for (mv, av) in mask.iter_mut().zip(act.iter_mut()) {
                            if rng.gen::<f32>() >= p {
                                *mv = keep_scale;
                            }
                            *av = *av * *mv;
                        }
                        Cache::Mask(mask)
                    }
                    DropoutPass::PerFeature(rng) => {
                        let keep_scale = T::from(1.0 / (1.0 - p as f64)).unwrap();
                        let feat = act_shape.numel();
                        let mut mask = vec![T::zero(); feat];
                        for mv in mask.iter_mut() {
                            if rng.gen::<f32>() >= p {
                                *mv = keep_scale;
                            }
                        }
                        for bi in 0..batch {
                            for (av, mv) in act[bi * feat..(bi + 1) * feat].iter_mut().zip(&mask) {
                                *av = *av * *mv;
                            }
                        }
                        // expand so backward stays uniform; training never
                        // takes this path
                        let mut full = Vec::with_capacity(batch * feat);
                        for _ in 0..batch {
                            full.extend_from_slice(&mask);
                        }
                        Cache::Mask(full)
                    }
                },
                LayerSpec::Flatten => Cache::Shape(act_shape),
                LayerSpec::GlobalAvgPool => {
                    let (c, h, w) = match act_shape {
                        ActShape::Spatial { c, h, w } => (c, h, w),
                        _ => unreachable!(),
                    };
                    let plane = h * w;
                    let inv = T::one() / T::from(plane).unwrap();
                    let mut y = vec![T::zero(); batch * c];
                    for bi in 0..batch {
                        for ci in 0..c {
                            let xplane = &act[(bi * c + ci) * plane..(bi * c + ci + 1) * plane];
                            let mut acc = T::zero();
                            for &v in xplane {
                                acc = acc + v;
                            }
                            y[bi * c + ci] = acc * inv;
                        }
                    }
                    act = y;
                    Cache::Shape(act_shape)
                }
                LayerSpec::Softmax => {
                    let m = act_shape.numel();
                    act = softmax_rows(&act, batch, m);
                    Cache::None
                }
            };
            if let Some(caches) = caches.as_deref_mut() {
                caches.push(cache);
            }
            act_shape = out_shape;
        }
        Ok((act, act_shape))
    }

    /// Backpropagates `dlogits` through every cached layer and returns
    /// per-layer parameter gradients.
    pub(crate) fn backward(
        &self,
        caches: &[Cache<T>],
        dlogits: Vec<T>,
        batch: usize,
    ) -> Vec<LayerWb<T>> {
        let mut grads: Vec<LayerWb<T>> = self
            .wb
            .iter()
            .map(|wb| LayerWb {
                w: vec![T::zero(); wb.w.len()],
                b: vec![T::zero(); wb.b.len()],
            })
            .collect();
        let mut dy = dlogits;
        for (li, cache) in caches.iter().enumerate().rev() {
            let layer = &self.layers[li];
            dy = match (layer, cache) {
                (LayerSpec::Dense { input, output }, Cache::Input { data, .. }) => {
                    let g = &mut grads[li];
                    dense_backward(
                        &dy,
                        data,
                        &self.wb[li].w,
                        batch,
                        *input,
                        *output,
                        &mut g.w,
                        &mut g.b,
                    )
                }
                (
                    LayerSpec::Conv2d {
                        in_channels,
                        out_channels,
                        kernel,
                        stride,
                    },
                    Cache::Input { data, shape },
                ) => {
                    let (h, w) = match *shape {
                        ActShape::Spatial { h, w, .. } => (h, w),
                        _ => unreachable!(),
                    };
                    let dims = ConvDims {
                        in_c: *in_channels,
                        out_c: *out_channels,
                        k: *kernel,
                        s: *stride,
                        h,
                        w,
                        oh: (h - kernel) / stride + 1,
                        ow: (w - kernel) / stride + 1,
                    };
                    let g = &mut grads[li];
                    conv_backward(
                        &dy,
                        data,
                        &self.wb[li].w,
                        batch,
                        &dims,
                        &mut g.w,
                        &mut g.b,
                    )
                }
                (LayerSpec::MaxPool2d { .. }, Cache::ArgMax { idx, in_shape }) => {
                    let feat = in_shape.numel();
                    let (c, h, w) = match *in_shape {
                        ActShape::Spatial { c, h, w } => (c, h, w),
                        _ => unreachable!(),
                    };
                    let plane = h * w;
                    let out_plane = dy.len() / (batch * c);
                    let mut dx = vec![T::zero(); batch * feat];
                    for bc in 0..batch * c {
                        let dyplane = &dy[bc * out_plane..(bc + 1) * out_plane];
                        let dxplane = &mut dx[bc * plane..(bc + 1) * plane];
                        let idxplane = &idx[bc * out_plane..(bc + 1) * out_plane];
                        for (&at, &g) in idxplane.iter().zip(dyplane) {
                            dxplane[at as usize] = dxplane[at as usize] + g;
                        }
                    }
                    dx
                }
                (LayerSpec::Relu, Cache::Input { data, .. }) => {
                    let mut dx = dy;
                    for (dv, &xv) in dx.iter_mut().zip(data) {
                        if xv <= T::zero() {
                            *dv = T::zero();
                        }
                    }
                    dx
                }
                (LayerSpec::Dropout { .. }, Cache::Mask(mask)) => {
                    let mut dx = dy;
                    for (dv, &mv) in dx.iter_mut().zip(mask) {
                        *dv = *dv * mv;
                    }
                    dx
                }
                (LayerSpec::Dropout { .. }, Cache::None) => dy,
                (LayerSpec::Flatten, Cache::Shape(_)) => dy,
                (LayerSpec::GlobalAvgPool, Cache::Shape(shape)) => {
                    let (c, h, w) = match *shape {
                        ActShape::Spatial { c, h, w } => (c, h, w),
                        _ => unreachable!(),
                    };
                    let plane = h * w;
                    let inv = T::one() / T::from(plane).unwrap();
                    let mut dx = vec![T::zero(); batch * c * plane];
                    for bc in 0..batch * c {
                        let g = dy[bc] * inv;
                        for v in &mut dx[bc * plane..(bc + 1) * plane] {
                            *v = g;
                        }
                    }
                    dx
                }
                (layer, _) => unreachable!("no backward rule for {layer:?}"),
            };
        }
        let _ = dy; // input gradient is not needed
        grads
    }
}
