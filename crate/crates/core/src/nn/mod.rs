//! Layered networks and the range-based execution engine.
//!
//! A [`Network`] is a flat layer list plus skip routes `(src, dst)`: the
//! output of layer `src` is concatenated channel-wise onto the input of
//! layer `dst`. [`forward_range`]/[`backward_range`] execute any contiguous
//! layer interval, carrying skip activations (or their gradients) across the
//! interval's edges. Running `0..len` is monolithic evaluation; chaining
//! intervals reproduces a split deployment on the same code path and the
//! same arithmetic, so the two agree bit for bit by construction.

pub mod conv;
pub mod gradcheck;
pub mod loss;
pub mod norm;
pub mod optim;
pub mod pool;

use std::collections::BTreeMap;

use crate::error::{Result, SplitFedError};
use crate::mask::Mask;
use crate::params::{ParamVector, Segment};
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    /// 3x3-style convolution, stride 1, same zero padding.
    Conv2d { in_channels: usize, out_channels: usize, kernel: usize },
    BatchNorm { channels: usize },
    Relu,
    MaxPool2x2,
    Upsample2x2,
    /// Marker for the per-pixel class decision; identity on the logits.
    ArgmaxOutput,
}

/// Routes the output of layer `src` into the input of layer `dst`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SkipRoute {
    pub src: usize,
    pub dst: usize,
}

#[derive(Clone, Copy, Debug)]
struct ChannelPlan {
    /// Channels of the main path arriving at the layer.
    main_in: usize,
    /// Channels after concatenating skip inputs.
    concat_in: usize,
    out: usize,
}

#[derive(Clone, Debug)]
pub struct Network {
    layers: Vec<LayerSpec>,
    skips: Vec<SkipRoute>,
    input_channels: usize,
    plan: Vec<ChannelPlan>,
}

impl Network {
    pub fn new(layers: Vec<LayerSpec>, skips: Vec<SkipRoute>, input_channels: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(SplitFedError::Shape("network needs at least one layer".into()));
        }
        if input_channels == 0 {
            return Err(SplitFedError::Shape("input channels must be positive".into()));
        }
        for (i, r) in skips.iter().enumerate() {
            if r.src >= r.dst {
                return Err(SplitFedError::Shape(format!(
                    "skip route {i} must go forward, got {} -> {}",
                    r.src, r.dst
                )));
            }
            if r.dst >= layers.len() {
                return Err(SplitFedError::Shape(format!(
                    "skip route {i} targets layer {} beyond the last layer",
                    r.dst
                )));
            }
            if skips[..i].iter().any(|o| o == r) {
                return Err(SplitFedError::Shape(format!(
                    "duplicate skip route {} -> {}",
                    r.src, r.dst
                )));
            }
        }
        // Walk the channel counts front to back, folding in skip inputs.
        let mut plan = Vec::with_capacity(layers.len());
        let mut cur = input_channels;
        let mut outs: Vec<usize> = Vec::with_capacity(layers.len());
        for (i, layer) in layers.iter().enumerate() {
            let mut srcs: Vec<usize> =
                skips.iter().filter(|r| r.dst == i).map(|r| r.src).collect();
            srcs.sort_unstable();
            let concat_in = cur + srcs.iter().map(|&s| outs[s]).sum::<usize>();
            let out = match layer {
                LayerSpec::Conv2d { in_channels, out_channels, kernel } => {
                    if *kernel == 0 || *kernel % 2 == 0 {
                        return Err(SplitFedError::Shape(format!(
                            "layer {i}: conv kernel must be odd, got {kernel}"
                        )));
                    }
                    if *in_channels != concat_in {
                        return Err(SplitFedError::Shape(format!(
                            "layer {i}: conv declares {in_channels} input channels but receives {concat_in}"
                        )));
                    }
                    if *out_channels == 0 {
                        return Err(SplitFedError::Shape(format!(
                            "layer {i}: conv needs at least one output channel"
                        )));
                    }
                    *out_channels
                }
                LayerSpec::BatchNorm { channels } => {
                    if *channels != concat_in {
                        return Err(SplitFedError::Shape(format!(
                            "layer {i}: batchnorm declares {channels} channels but receives {concat_in}"
                        )));
                    }
                    concat_in
                }
                LayerSpec::ArgmaxOutput => {
                    if i + 1 != layers.len() {
                        return Err(SplitFedError::Shape(format!(
                            "layer {i}: argmax output must be the final layer"
                        )));
                    }
                    concat_in
                }
                LayerSpec::Relu | LayerSpec::MaxPool2x2 | LayerSpec::Upsample2x2 => concat_in,
            };
            plan.push(ChannelPlan { main_in: cur, concat_in, out });
            outs.push(out);
            cur = out;
        }
        Ok(Network { layers, skips, input_channels, plan })
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn skips(&self) -> &[SkipRoute] {
        &self.skips
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    pub fn output_channels(&self) -> usize {
        self.plan.last().unwrap().out
    }

    /// Parameter segment names for layers in `lo..hi`, in layer order.
    pub fn param_names(&self, lo: usize, hi: usize) -> Vec<String> {
        let mut names = Vec::new();
        for i in lo..hi.min(self.layers.len()) {
            match &self.layers[i] {
                LayerSpec::Conv2d { .. } => {
                    names.push(conv_w_name(i));
                    names.push(conv_b_name(i));
                }
                LayerSpec::BatchNorm { .. } => {
                    names.push(bn_gamma_name(i));
                    names.push(bn_beta_name(i));
                }
                _ => {}
            }
        }
        names
    }

    /// He-uniform initialization: conv weights drawn from
    /// `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, biases zero, batchnorm at
    /// identity. The draw order is fixed, so equal seeds give equal weights.
    pub fn init_params(&self, seed: u64) -> Result<ParamVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pv = ParamVector::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                LayerSpec::Conv2d { in_channels, out_channels, kernel } => {
                    let fan_in = (in_channels * kernel * kernel) as f64;
                    let limit = (6.0 / fan_in).sqrt();
                    let n = out_channels * in_channels * kernel * kernel;
                    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
                    pv.push(Segment::new(
                        conv_w_name(i),
                        vec![*out_channels, *in_channels, *kernel, *kernel],
                        data,
                    )?)?;
                    pv.push(Segment::new(
                        conv_b_name(i),
                        vec![*out_channels],
                        vec![0.0; *out_channels],
                    )?)?;
                }
                LayerSpec::BatchNorm { channels } => {
                    pv.push(Segment::new(bn_gamma_name(i), vec![*channels], vec![1.0; *channels])?)?;
                    pv.push(Segment::new(bn_beta_name(i), vec![*channels], vec![0.0; *channels])?)?;
                }
                _ => {}
            }
        }
        Ok(pv)
    }
}

pub fn conv_w_name(i: usize) -> String {
    format!("l{i:02}.conv.w")
}

pub fn conv_b_name(i: usize) -> String {
    format!("l{i:02}.conv.b")
}

pub fn bn_gamma_name(i: usize) -> String {
    format!("l{i:02}.bn.gamma")
}

pub fn bn_beta_name(i: usize) -> String {
    format!("l{i:02}.bn.beta")
}

/// A main activation (or gradient) plus skip tensors keyed by source layer.
#[derive(Clone, Debug)]
pub struct TensorBundle {
    pub main: Tensor,
    /// Sorted ascending by source layer index.
    pub skips: Vec<(usize, Tensor)>,
}

impl TensorBundle {
    pub fn solo(main: Tensor) -> Self {
        TensorBundle { main, skips: Vec::new() }
    }
}

#[derive(Debug)]
enum LayerCache {
    Conv { input: Tensor },
    Bn(norm::BnCache),
    Relu { mask: Vec<bool>, shape: Vec<usize> },
    Pool(pool::PoolCache),
    Stateless,
}

#[derive(Debug)]
struct ConcatInfo {
    main_channels: usize,
    /// `(src layer, channels)` in concatenation order.
    parts: Vec<(usize, usize)>,
}

/// Cached intermediates for one executed layer interval.
#[derive(Debug)]
pub struct PartCache {
    lo: usize,
    hi: usize,
    layer_caches: Vec<LayerCache>,
    concats: Vec<Option<ConcatInfo>>,
}

impl PartCache {
    pub fn range(&self) -> (usize, usize) {
        (self.lo, self.hi)
    }
}

fn segment_data<'a>(
    params: &'a ParamVector,
    name: &str,
    shape: &[usize],
) -> Result<&'a [f64]> {
    let seg = params.segment(name).ok_or_else(|| {
        SplitFedError::Data(format!("parameter vector is missing segment {name:?}"))
    })?;
    if seg.shape != shape {
        return Err(SplitFedError::Shape(format!(
            "segment {name:?} has shape {:?}, expected {shape:?}",
            seg.shape
        )));
    }
    Ok(&seg.data)
}

fn apply_forward(
    net: &Network,
    params: &ParamVector,
    i: usize,
    x: Tensor,
) -> Result<(Tensor, LayerCache)> {
    match &net.layers[i] {
        LayerSpec::Conv2d { in_channels, out_channels, kernel } => {
            let w = segment_data(
                params,
                &conv_w_name(i),
                &[*out_channels, *in_channels, *kernel, *kernel],
            )?;
            let b = segment_data(params, &conv_b_name(i), &[*out_channels])?;
            let y = conv::forward(&x, w, b, *out_channels, *kernel)?;
            Ok((y, LayerCache::Conv { input: x }))
        }
        LayerSpec::BatchNorm { channels } => {
            let gamma = segment_data(params, &bn_gamma_name(i), &[*channels])?;
            let beta = segment_data(params, &bn_beta_name(i), &[*channels])?;
            let (y, cache) = norm::forward(&x, gamma, beta)?;
            Ok((y, LayerCache::Bn(cache)))
        }
        LayerSpec::Relu => {
            let mask: Vec<bool> = x.data().iter().map(|&v| v > 0.0).collect();
            let data = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
            let shape = x.shape().to_vec();
            let y = Tensor::new(shape.clone(), data)?;
            Ok((y, LayerCache::Relu { mask, shape }))
        }
        LayerSpec::MaxPool2x2 => {
            let (y, cache) = pool::maxpool_forward(&x)?;
            Ok((y, LayerCache::Pool(cache)))
        }
        LayerSpec::Upsample2x2 => {
            let y = pool::upsample_forward(&x)?;
            Ok((y, LayerCache::Stateless))
        }
        LayerSpec::ArgmaxOutput => Ok((x, LayerCache::Stateless)),
    }
}

fn backward_layer(
    net: &Network,
    params: &ParamVector,
    i: usize,
    cache: &LayerCache,
    dy: &Tensor,
) -> Result<(Tensor, Vec<(String, Segment)>)> {
    match (&net.layers[i], cache) {
        (LayerSpec::Conv2d { in_channels, out_channels, kernel }, LayerCache::Conv { input }) => {
            let w = segment_data(
                params,
                &conv_w_name(i),
                &[*out_channels, *in_channels, *kernel, *kernel],
            )?;
            let (dw, db, dx) = conv::backward(input, w, dy, *out_channels, *kernel)?;
            let grads = vec![
                (
                    conv_w_name(i),
                    Segment::new(
                        conv_w_name(i),
                        vec![*out_channels, *in_channels, *kernel, *kernel],
                        dw,
                    )?,
                ),
                (conv_b_name(i), Segment::new(conv_b_name(i), vec![*out_channels], db)?),
            ];
            Ok((dx, grads))
        }
        (LayerSpec::BatchNorm { channels }, LayerCache::Bn(bn)) => {
            let gamma = segment_data(params, &bn_gamma_name(i), &[*channels])?;
            let (dx, dgamma, dbeta) = norm::backward(bn, gamma, dy)?;
            let grads = vec![
                (bn_gamma_name(i), Segment::new(bn_gamma_name(i), vec![*channels], dgamma)?),
                (bn_beta_name(i), Segment::new(bn_beta_name(i), vec![*channels], dbeta)?),
            ];
            Ok((dx, grads))
        }
        (LayerSpec::Relu, LayerCache::Relu { mask, shape }) => {
            if dy.shape() != shape.as_slice() {
                return Err(SplitFedError::Shape(format!(
                    "relu backward: gradient shape {:?} does not match cached {:?}",
                    dy.shape(),
                    shape
                )));
            }
            let data = dy
                .data()
                .iter()
                .zip(mask)
                .map(|(&g, &m)| if m { g } else { 0.0 })
                .collect();
            Ok((Tensor::new(shape.clone(), data)?, Vec::new()))
        }
        (LayerSpec::MaxPool2x2, LayerCache::Pool(pc)) => {
            let (n, c, _, _) = dy.dims4()?;
            let dx = pool::maxpool_backward(pc, &[n, c, pc.in_h, pc.in_w], dy)?;
            Ok((dx, Vec::new()))
        }
        (LayerSpec::Upsample2x2, LayerCache::Stateless) => {
            Ok((pool::upsample_backward(dy)?, Vec::new()))
        }
        (LayerSpec::ArgmaxOutput, LayerCache::Stateless) => Ok((dy.clone(), Vec::new())),
        _ => Err(SplitFedError::Shape(format!(
            "layer {i}: cache kind does not match layer kind"
        ))),
    }
}

/// Executes layers `lo..hi`.
///
/// `input.main` feeds layer `lo`; `input.skips` supplies activations of
/// layers before `lo` that some layer at or after `lo` consumes. The output
/// bundle's `skips` carry every activation (incoming or computed here) still
/// needed by layers at or after `hi`. An empty interval (`lo == hi`) is the
/// identity: the bundle passes through untouched.
pub fn forward_range(
    net: &Network,
    params: &ParamVector,
    lo: usize,
    hi: usize,
    input: &TensorBundle,
) -> Result<(TensorBundle, PartCache)> {
    if lo > hi || hi > net.layers.len() {
        return Err(SplitFedError::Shape(format!(
            "invalid layer range {lo}..{hi} for a {}-layer network",
            net.layers.len()
        )));
    }
    let mut avail: BTreeMap<usize, Tensor> = BTreeMap::new();
    for (src, t) in &input.skips {
        if *src >= lo {
            return Err(SplitFedError::Protocol(format!(
                "incoming skip activation for layer {src} is not upstream of range {lo}..{hi}"
            )));
        }
        avail.insert(*src, t.clone());
    }
    if lo < net.layers.len() {
        let expect_ch = if lo == 0 { net.input_channels } else { net.plan[lo].main_in };
        if input.main.dims4()?.1 != expect_ch {
            return Err(SplitFedError::Shape(format!(
                "range {lo}..{hi} expects {expect_ch} input channels, got {}",
                input.main.dims4()?.1
            )));
        }
    }

    let mut cur = input.main.clone();
    let mut layer_caches = Vec::with_capacity(hi - lo);
    let mut concats = Vec::with_capacity(hi - lo);
    for i in lo..hi {
        let mut srcs: Vec<usize> =
            net.skips.iter().filter(|r| r.dst == i).map(|r| r.src).collect();
        srcs.sort_unstable();
        let x = if srcs.is_empty() {
            concats.push(None);
            cur
        } else {
            let mut parts: Vec<&Tensor> = Vec::with_capacity(1 + srcs.len());
            let mut info = ConcatInfo { main_channels: cur.shape()[1], parts: Vec::new() };
            parts.push(&cur);
            for &s in &srcs {
                let t = avail.get(&s).ok_or_else(|| {
                    SplitFedError::Protocol(format!(
                        "layer {i} needs the skip activation of layer {s}, which was not provided"
                    ))
                })?;
                info.parts.push((s, t.shape()[1]));
                parts.push(t);
            }
            let joined = Tensor::concat_channels(&parts)?;
            concats.push(Some(info));
            joined
        };
        if x.dims4()?.1 != net.plan[i].concat_in {
            return Err(SplitFedError::Shape(format!(
                "layer {i} expects {} channels, got {}",
                net.plan[i].concat_in,
                x.dims4()?.1
            )));
        }
        let (y, lc) = apply_forward(net, params, i, x)?;
        if net.skips.iter().any(|r| r.src == i) {
            avail.insert(i, y.clone());
        }
        layer_caches.push(lc);
        cur = y;
    }

    // Outgoing skips: still needed by a layer at or after hi.
    let mut out_srcs: Vec<usize> = net
        .skips
        .iter()
        .filter(|r| r.dst >= hi && r.src < hi)
        .map(|r| r.src)
        .collect();
    out_srcs.sort_unstable();
    out_srcs.dedup();
    let mut skips = Vec::with_capacity(out_srcs.len());
    for s in out_srcs {
        let t = avail.get(&s).ok_or_else(|| {
            SplitFedError::Protocol(format!(
                "skip activation of layer {s} is needed downstream but unavailable in {lo}..{hi}"
            ))
        })?;
        skips.push((s, t.clone()));
    }
    Ok((
        TensorBundle { main: cur, skips },
        PartCache { lo, hi, layer_caches, concats },
    ))
}

/// Backward pass over the interval recorded in `cache`.
///
/// `dout.main` is the gradient at the interval's output; `dout.skips` carry
/// gradients for skip activations consumed downstream, keyed by source
/// layer. Returns the parameter gradients for the interval (in layer order)
/// and the gradient bundle at the interval's input: `main` for layer `lo`'s
/// input plus pending skip gradients whose sources lie before `lo`.
pub fn backward_range(
    net: &Network,
    params: &ParamVector,
    cache: &PartCache,
    dout: &TensorBundle,
) -> Result<(ParamVector, TensorBundle)> {
    let (lo, hi) = (cache.lo, cache.hi);
    let mut pending: BTreeMap<usize, Tensor> = BTreeMap::new();
    for (src, t) in &dout.skips {
        if *src >= hi {
            return Err(SplitFedError::Protocol(format!(
                "skip gradient for layer {src} is not produced by range {lo}..{hi}"
            )));
        }
        pending.insert(*src, t.clone());
    }

    let mut g = dout.main.clone();
    let mut per_layer: Vec<Vec<(String, Segment)>> = Vec::with_capacity(hi - lo);
    for i in (lo..hi).rev() {
        if let Some(p) = pending.remove(&i) {
            g = g.add(&p)?;
        }
        let (dx, grads) = backward_layer(net, params, i, &cache.layer_caches[i - lo], &g)?;
        g = match &cache.concats[i - lo] {
            None => dx,
            Some(info) => {
                let mut sizes = Vec::with_capacity(1 + info.parts.len());
                sizes.push(info.main_channels);
                sizes.extend(info.parts.iter().map(|&(_, c)| c));
                let mut parts = dx.split_channels(&sizes)?;
                let rest = parts.split_off(1);
                let dmain = parts.pop().unwrap();
                for ((src, _), t) in info.parts.iter().zip(rest) {
                    match pending.remove(src) {
                        Some(existing) => {
                            pending.insert(*src, existing.add(&t)?);
                        }
                        None => {
                            pending.insert(*src, t);
                        }
                    }
                }
                dmain
            }
        };
        per_layer.push(grads);
    }

    let mut grad_pv = ParamVector::new();
    for grads in per_layer.into_iter().rev() {
        for (_, seg) in grads {
            grad_pv.push(seg)?;
        }
    }
    let skips: Vec<(usize, Tensor)> = pending.into_iter().collect();
    for (src, _) in &skips {
        debug_assert!(*src < lo);
    }
    Ok((grad_pv, TensorBundle { main: g, skips }))
}

/// Monolithic forward over the whole network; returns logits and the cache.
pub fn forward(net: &Network, params: &ParamVector, input: &Tensor) -> Result<(Tensor, PartCache)> {
    let (bundle, cache) =
        forward_range(net, params, 0, net.len(), &TensorBundle::solo(input.clone()))?;
    Ok((bundle.main, cache))
}

/// Monolithic backward; returns parameter gradients and the input gradient.
pub fn backward(
    net: &Network,
    params: &ParamVector,
    cache: &PartCache,
    dlogits: &Tensor,
) -> Result<(ParamVector, Tensor)> {
    let (grads, bundle) = backward_range(net, params, cache, &TensorBundle::solo(dlogits.clone()))?;
    Ok((grads, bundle.main))
}

/// Per-pixel class decision over channel logits; ties take the lowest index.
pub fn predictions(logits: &Tensor) -> Result<Vec<Mask>> {
    let (n, c, h, w) = logits.dims4()?;
    if c > u8::MAX as usize + 1 {
        return Err(SplitFedError::Shape(format!("{c} classes exceed mask range")));
    }
    let zs = logits.data();
    let plane = h * w;
    let mut out = Vec::with_capacity(n);
    for bi in 0..n {
        let mut data = vec![0u8; plane];
        for (pix, slot) in data.iter_mut().enumerate() {
            let base = bi * c * plane + pix;
            let mut best = zs[base];
            let mut best_c = 0u8;
            for ci in 1..c {
                let v = zs[base + ci * plane];
                if v > best {
                    best = v;
                    best_c = ci as u8;
                }
            }
            *slot = best_c;
        }
        out.push(Mask::new(h, w, data)?);
    }
    Ok(out)
}
