//! Small CPU-trainable encoder-decoder for semantic segmentation.
//!
//! ```text
//! x(3,S) -conv3-relu-> e1(c1,S) -pool-> -conv3-relu-> e2(c2,S/2) -pool-> -conv3-relu-> e3(c3,S/4)
//! up(e3) ++ e2 -conv3-relu-> d2(d2,S/2)
//! up(d2) ++ e1 -conv1-> logits(L,S)
//! ```
//!
//! Forward and backward passes are written out by hand over flat `f32`
//! buffers in `[channel][row][col]` order.

use std::io::{Read, Write};
use std::path::Path;

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ClassScores, ModelConfig, Optimizer, PredictionOutput, Predictor};
use crate::dataset::resize::nearest;
use crate::dataset::{resize_image, resize_mask_nearest, resize_pair, LabelMask};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MFRM";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub num_labels: usize,
    pub enc1: usize,
    pub enc2: usize,
    pub enc3: usize,
    pub dec2: usize,
}

impl Architecture {
    pub fn new(num_labels: usize) -> Self {
        Self {
            num_labels,
            enc1: 8,
            enc2: 16,
            enc3: 16,
            dec2: 8,
        }
    }

    fn layers(&self) -> [ConvSpec; 5] {
        let mut offset = 0;
        let mut spec = |cin, cout, k| {
            let s = ConvSpec {
                cin,
                cout,
                k,
                offset,
            };
            offset += s.len();
            s
        };
        [
            spec(3, self.enc1, 3),
            spec(self.enc1, self.enc2, 3),
            spec(self.enc2, self.enc3, 3),
            spec(self.enc2 + self.enc3, self.dec2, 3),
            spec(self.enc1 + self.dec2, self.num_labels, 1),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(ConvSpec::len).sum()
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvSpec {
    cin: usize,
    cout: usize,
    k: usize,
    offset: usize,
}

impl ConvSpec {
    fn weight_len(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }

    fn len(&self) -> usize {
        self.weight_len() + self.cout
    }

    fn weights<'a>(&self, params: &'a [f32]) -> &'a [f32] {
        &params[self.offset..self.offset + self.weight_len()]
    }

    fn bias<'a>(&self, params: &'a [f32]) -> &'a [f32] {
        &params[self.offset + self.weight_len()..self.offset + self.len()]
    }
}

/// Feature map `[c][h][w]`.
#[derive(Clone, Debug)]
struct Map {
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl Map {
    fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    fn plane(&self, c: usize) -> &[f32] {
        let n = self.h * self.w;
        &self.data[c * n..(c + 1) * n]
    }

    fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.h * self.w;
        &mut self.data[c * n..(c + 1) * n]
    }

    fn concat(a: &Map, b: &Map) -> Map {
        debug_assert_eq!((a.h, a.w), (b.h, b.w));
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Map {
            c: a.c + b.c,
            h: a.h,
            w: a.w,
            data,
        }
    }

    fn split(self, first: usize) -> (Map, Map) {
        let n = self.h * self.w;
        let mut data = self.data;
        let rest = data.split_off(first * n);
        (
            Map {
                c: first,
                h: self.h,
                w: self.w,
                data,
            },
            Map {
                c: self.c - first,
                h: self.h,
                w: self.w,
                data: rest,
            },
        )
    }
}

#[inline]
fn axpy(y: &mut [f32], a: f32, x: &[f32]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    // eight accumulators so the loop vectorizes
    let mut acc = [0f32; 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        for j in 0..8 {
            acc[j] += a[i * 8 + j] * b[i * 8 + j];
        }
    }
    let mut s: f32 = acc.iter().sum();
    for i in chunks * 8..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Valid output column range and input offset for a kernel tap.
#[inline]
fn tap_range(len: usize, tap: usize, pad: usize) -> (usize, usize, isize) {
    let shift = tap as isize - pad as isize;
    let start = (-shift).max(0) as usize;
    let end = ((len as isize) - shift).min(len as isize).max(0) as usize;
    (start, end, shift)
}

fn conv_forward(spec: &ConvSpec, params: &[f32], input: &Map) -> Map {
    let (h, w, k, pad) = (input.h, input.w, spec.k, spec.k / 2);
    let weights = spec.weights(params);
    let bias = spec.bias(params);
    let mut out = Map::zeros(spec.cout, h, w);
    for o in 0..spec.cout {
        let out_plane = out.plane_mut(o);
        out_plane.iter_mut().for_each(|v| *v = bias[o]);
        for i in 0..spec.cin {
            let in_plane = input.plane(i);
            for ky in 0..k {
                let (y0, y1, dy) = tap_range(h, ky, pad);
                for kx in 0..k {
                    let wv = weights[((o * spec.cin + i) * k + ky) * k + kx];
                    let (x0, x1, dx) = tap_range(w, kx, pad);
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let src = &in_plane[sy * w + (x0 as isize + dx) as usize..][..x1 - x0];
                        axpy(&mut out_plane[y * w + x0..y * w + x1], wv, src);
                    }
                }
            }
        }
    }
    out
}

/// Accumulates parameter gradients into `grad`; returns the input gradient
/// when `want_input` is set.
fn conv_backward(
    spec: &ConvSpec,
    params: &[f32],
    input: &Map,
    dout: &Map,
    grad: &mut [f32],
    want_input: bool,
) -> Option<Map> {
    let (h, w, k, pad) = (input.h, input.w, spec.k, spec.k / 2);
    let weights = spec.weights(params);
    let (gw, gb) = grad[spec.offset..spec.offset + spec.len()].split_at_mut(spec.weight_len());
    let mut din = want_input.then(|| Map::zeros(spec.cin, h, w));
    for (o, bias) in gb.iter_mut().enumerate().take(spec.cout) {
        let d_plane = dout.plane(o);
        *bias += d_plane.iter().sum::<f32>();
        for i in 0..spec.cin {
            let in_plane = input.plane(i);
            for ky in 0..k {
                let (y0, y1, dy) = tap_range(h, ky, pad);
                for kx in 0..k {
                    let widx = ((o * spec.cin + i) * k + ky) * k + kx;
                    let (x0, x1, dx) = tap_range(w, kx, pad);
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let src_start = sy * w + (x0 as isize + dx) as usize;
                        let d = &d_plane[y * w + x0..y * w + x1];
                        acc += dot(d, &in_plane[src_start..src_start + (x1 - x0)]);
                        if let Some(din) = din.as_mut() {
                            let wv = weights[widx];
                            axpy(
                                &mut din.plane_mut(i)[src_start..src_start + (x1 - x0)],
                                wv,
                                d,
                            );
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
    din
}

fn relu(mut m: Map) -> Map {
    m.data.iter_mut().for_each(|v| *v = v.max(0.0));
    m
}

fn relu_backward(activated: &Map, mut d: Map) -> Map {
    for (g, a) in d.data.iter_mut().zip(&activated.data) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
    d
}

fn avg_pool(m: &Map) -> Map {
    let (h, w) = (m.h / 2, m.w / 2);
    let mut out = Map::zeros(m.c, h, w);
    for c in 0..m.c {
        let src = m.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..h {
            for x in 0..w {
                let a = (2 * y) * m.w + 2 * x;
                let b = a + m.w;
                dst[y * w + x] = 0.25 * (src[a] + src[a + 1] + src[b] + src[b + 1]);
            }
        }
    }
    out
}

fn avg_pool_backward(d: &Map, h: usize, w: usize) -> Map {
    let mut out = Map::zeros(d.c, h, w);
    for c in 0..d.c {
        let src = d.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = 0.25 * src[(y / 2) * d.w + x / 2];
            }
        }
    }
    out
}

fn upsample(m: &Map) -> Map {
    let (h, w) = (m.h * 2, m.w * 2);
    let mut out = Map::zeros(m.c, h, w);
    for c in 0..m.c {
        let src = m.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = src[(y / 2) * m.w + x / 2];
            }
        }
    }
    out
}

fn upsample_backward(d: &Map) -> Map {
    let (h, w) = (d.h / 2, d.w / 2);
    let mut out = Map::zeros(d.c, h, w);
    for c in 0..d.c {
        let src = d.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..d.h {
            for x in 0..d.w {
                dst[(y / 2) * w + x / 2] += src[y * d.w + x];
            }
        }
    }
    out
}

struct Activations {
    input: Map,
    e1: Map,
    p1: Map,
    e2: Map,
    p2: Map,
    e3: Map,
    cat2: Map,
    d2: Map,
    cat1: Map,
    logits: Map,
}

fn forward(arch: &Architecture, params: &[f32], input: Map) -> Activations {
    let [l1, l2, l3, l4, l5] = arch.layers();
    let e1 = relu(conv_forward(&l1, params, &input));
    let p1 = avg_pool(&e1);
    let e2 = relu(conv_forward(&l2, params, &p1));
    let p2 = avg_pool(&e2);
    let e3 = relu(conv_forward(&l3, params, &p2));
    let cat2 = Map::concat(&e2, &upsample(&e3));
    let d2 = relu(conv_forward(&l4, params, &cat2));
    let cat1 = Map::concat(&e1, &upsample(&d2));
    let logits = conv_forward(&l5, params, &cat1);
    Activations {
        input,
        e1,
        p1,
        e2,
        p2,
        e3,
        cat2,
        d2,
        cat1,
        logits,
    }
}

/// Per-pixel softmax in place over the channel axis.
fn softmax(logits: &mut Map) {
    let n = logits.h * logits.w;
    let c = logits.c;
    for p in 0..n {
        let max = (0..c)
            .map(|k| logits.data[k * n + p])
            .fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0;
        for k in 0..c {
            let e = (logits.data[k * n + p] - max).exp();
            logits.data[k * n + p] = e;
            sum += e;
        }
        for k in 0..c {
            logits.data[k * n + p] /= sum;
        }
    }
}

/// Mean cross-entropy loss and its gradient for one image.
fn loss_and_gradient(
    arch: &Architecture,
    params: &[f32],
    sample: &Sample,
) -> (f64, Vec<f32>) {
    let acts = forward(arch, params, sample.input.clone());
    let [l1, l2, l3, l4, l5] = arch.layers();
    let mut probs = acts.logits.clone();
    softmax(&mut probs);
    let n = probs.h * probs.w;
    let mut loss = 0.0f64;
    let inv_n = 1.0 / n as f32;
    let mut dlogits = probs;
    for (p, &t) in sample.target.iter().enumerate() {
        let idx = usize::from(t) * n + p;
        loss -= f64::from(dlogits.data[idx].max(1e-12).ln());
        dlogits.data[idx] -= 1.0;
    }
    dlogits.data.iter_mut().for_each(|g| *g *= inv_n);
    loss /= n as f64;

    let mut grad = vec![0.0f32; params.len()];
    let dcat1 = conv_backward(&l5, params, &acts.cat1, &dlogits, &mut grad, true).unwrap();
    let (de1_skip, dup2) = dcat1.split(arch.enc1);
    let dd2 = relu_backward(&acts.d2, upsample_backward(&dup2));
    let dcat2 = conv_backward(&l4, params, &acts.cat2, &dd2, &mut grad, true).unwrap();
    let (de2_skip, dup3) = dcat2.split(arch.enc2);
    let de3 = relu_backward(&acts.e3, upsample_backward(&dup3));
    let dp2 = conv_backward(&l3, params, &acts.p2, &de3, &mut grad, true).unwrap();
    let mut de2 = avg_pool_backward(&dp2, acts.e2.h, acts.e2.w);
    axpy(&mut de2.data, 1.0, &de2_skip.data);
    let de2 = relu_backward(&acts.e2, de2);
    let dp1 = conv_backward(&l2, params, &acts.p1, &de2, &mut grad, true).unwrap();
    let mut de1 = avg_pool_backward(&dp1, acts.e1.h, acts.e1.w);
    axpy(&mut de1.data, 1.0, &de1_skip.data);
    let de1 = relu_backward(&acts.e1, de1);
    conv_backward(&l1, params, &acts.input, &de1, &mut grad, false);
    (loss, grad)
}

fn image_to_map(image: &RgbImage) -> Map {
    let (w, h) = image.dimensions();
    let (w, h) = (w as usize, h as usize);
    let mut m = Map::zeros(3, h, w);
    for (i, px) in image.pixels().enumerate() {
        for c in 0..3 {
            m.data[c * h * w + i] = (f32::from(px[c]) / 255.0 - 0.5) * 4.0;
        }
    }
    m
}

struct Sample {
    input: Map,
    target: Vec<u8>,
}

/// Per-epoch record of a training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub seed: u64,
    pub epoch_losses: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    arch: Architecture,
}

/// Trained reference network; immutable once built.
#[derive(Clone, Debug)]
pub struct ReferenceModel {
    config: ModelConfig,
    arch: Architecture,
    params: Vec<f32>,
}

impl ReferenceModel {
    pub fn init(config: ModelConfig, num_labels: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if !config.input_side.is_multiple_of(4) {
            return Err(Error::validation(format!(
                "reference model needs an input side divisible by 4, got {}",
                config.input_side
            )));
        }
        let arch = Architecture::new(num_labels);
        let mut params = vec![0.0f32; arch.param_count()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in arch.layers() {
            let fan_in = (layer.cin * layer.k * layer.k) as f32;
            let bound = (6.0 / fan_in).sqrt();
            for w in &mut params[layer.offset..layer.offset + layer.weight_len()] {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(Self {
            config,
            arch,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            arch: self.arch.clone(),
        })
        .expect("header serializes");
        let mut out = Vec::with_capacity(12 + header.len() + 4 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Load {
            name: "reference".into(),
            message: m.into(),
        };
        let mut r = bytes;
        let mut word = [0u8; 4];
        r.read_exact(&mut word).map_err(|_| bad("truncated"))?;
        if &word != MAGIC {
            return Err(bad("not a reference model file"));
        }
        r.read_exact(&mut word).map_err(|_| bad("truncated"))?;
        if u32::from_le_bytes(word) != FORMAT_VERSION {
            return Err(bad("unsupported format version"));
        }
        r.read_exact(&mut word).map_err(|_| bad("truncated"))?;
        let hlen = u32::from_le_bytes(word) as usize;
        if r.len() < hlen {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&r[..hlen]).map_err(|e| bad(&e.to_string()))?;
        let body = &r[hlen..];
        if body.len() != 4 * header.arch.param_count() {
            return Err(bad("weight count does not match architecture"));
        }
        let params = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self {
            config: header.config,
            arch: header.arch,
            params,
        })
    }

    /// SHA-256 of the serialized model.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Class probabilities at the model's input resolution.
    fn scores_at_input(&self, image: &RgbImage) -> Map {
        let side = self.config.input_side;
        let resized = resize_image(image, side, side);
        let mut logits = forward(&self.arch, &self.params, image_to_map(&resized)).logits;
        softmax(&mut logits);
        logits
    }
}

fn argmax_lowest(scores: &Map) -> Vec<u8> {
    let n = scores.h * scores.w;
    (0..n)
        .map(|p| {
            let mut best = 0;
            for k in 1..scores.c {
                if scores.data[k * n + p] > scores.data[best * n + p] {
                    best = k;
                }
            }
            best as u8
        })
        .collect()
}

impl Predictor for ReferenceModel {
    fn predict(&self, image: &RgbImage) -> Result<PredictionOutput> {
        let (w, h) = image.dimensions();
        let scores = self.scores_at_input(image);
        let side = self.config.input_side;
        let labels = LabelMask::from_values(side, side, argmax_lowest(&scores))?;
        let label_mask = resize_mask_nearest(&labels, w, h);

        // upsample the score planes with the same nearest-neighbor mapping
        let cols: Vec<usize> = (0..w).map(|x| nearest(x, w, side) as usize).collect();
        let mut data = Vec::with_capacity(scores.c * (w * h) as usize);
        for k in 0..scores.c {
            let plane = scores.plane(k);
            for y in 0..h {
                let sy = nearest(y, h, side) as usize;
                data.extend(cols.iter().map(|&sx| plane[sy * side as usize + sx]));
            }
        }
        let class_scores = ClassScores::new(w, h, scores.c, data)?;
        Ok(PredictionOutput {
            label_mask,
            class_scores: Some(class_scores),
            instances: None,
        })
    }

    fn digest(&self) -> String {
        ReferenceModel::digest(self)
    }
}

/// Trains the reference network on image/mask pairs.
///
/// Images are resized to the config's input side once up front. Per-image
/// gradients are computed in parallel and summed in sample order, so the
/// result depends only on the data, config and seed.
pub fn train_reference(
    config: &ModelConfig,
    samples: &[(RgbImage, LabelMask)],
    num_labels: usize,
    seed: u64,
) -> Result<(ReferenceModel, TrainingLog)> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::validation("training split is empty"));
    }
    let mut model = ReferenceModel::init(config.clone(), num_labels, seed)?;
    let side = config.input_side;
    let prepared: Vec<Sample> = samples
        .par_iter()
        .map(|(image, mask)| {
            let (im, m) = resize_pair(image, mask, side)?;
            if m.values().iter().any(|&v| usize::from(v) >= num_labels) {
                return Err(Error::validation("mask label outside the model's label range"));
            }
            Ok(Sample {
                input: image_to_map(&im),
                target: m.values().to_vec(),
            })
        })
        .collect::<Result<_>>()?;

    let mut optimizer = OptimizerState::new(config, model.params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut log = TrainingLog {
        seed,
        epoch_losses: Vec::with_capacity(config.epochs),
    };

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let results: Vec<(f64, Vec<f32>)> = batch
                .par_iter()
                .map(|&i| loss_and_gradient(&model.arch, &model.params, &prepared[i]))
                .collect();
            let mut grad = vec![0.0f32; model.params.len()];
            let scale = 1.0 / batch.len() as f32;
            for (loss, g) in &results {
                epoch_loss += loss;
                axpy(&mut grad, scale, g);
            }
            optimizer.step(&mut model.params, &grad);
        }
        let mean_loss = epoch_loss / prepared.len() as f64;
        if !mean_loss.is_finite() || model.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Training {
                epoch,
                loss: mean_loss,
            });
        }
        log::info!("epoch {epoch}/{}: loss {mean_loss:.5}", config.epochs);
        log.epoch_losses.push(mean_loss);
    }
    Ok((model, log))
}

struct OptimizerState {
    kind: Optimizer,
    lr: f32,
    momentum: f32,
    decay: f32,
    step: i32,
    m: Vec<f32>,
    v: Vec<f32>,
}

impl OptimizerState {
    fn new(config: &ModelConfig, n: usize) -> Self {
        Self {
            kind: config.optimizer,
            lr: config.learning_rate as f32,
            momentum: config.momentum as f32,
            decay: config.decay.unwrap_or(0.0) as f32,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    fn step(&mut self, params: &mut [f32], grad: &[f32]) {
        self.step += 1;
        match self.kind {
            Optimizer::SgdMomentum => {
                for ((p, g), v) in params.iter_mut().zip(grad).zip(&mut self.m) {
                    let g = g + self.decay * *p;
                    *v = self.momentum * *v + g;
                    *p -= self.lr * *v;
                }
            }
            Optimizer::Adam => {
                let (b1, b2, eps) = (0.9f32, 0.999f32, 1e-8f32);
                let c1 = 1.0 - b1.powi(self.step);
                let c2 = 1.0 - b2.powi(self.step);
                for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
                    let g = g + self.decay * *p;
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
        }
    }
}
