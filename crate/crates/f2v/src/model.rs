//! The Frame-to-Video predictor: a convolutional semantic-map encoder, a
//! variational flow encoder, and a shared transposed-convolution decoder
//! with skip connections from the semantic branch.
//!
//! One forward pass emits the whole future clip: the decoder produces
//! `horizon * 3` sigmoid channels which are regrouped into `horizon`
//! semantic frames.

use crate::flow::{compute_direction_map, DirectionMap, FlowField, EPS_MOTION};
use crate::frame::{SemanticFrame, VideoTensor};
use crate::nn::conv::{conv2d, conv2d_backward, tconv2d, tconv2d_backward};
use crate::nn::ops::{
    concat_channels, leaky_relu, leaky_relu_backward, maxpool2, maxpool2_backward, sigmoid,
    sigmoid_backward, split_channels,
};
use crate::nn::{ParamLayout, Scalar};
use ndarray::{Array3, Array4, Axis, Zip};
use rand::RngExt as _;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch for {what}: expected {expected}, got {actual}")]
    Shape {
        what: String,
        expected: String,
        actual: String,
    },
    #[error("invalid model config: {0}")]
    BadConfig(String),
}

/// What the variational encoder consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OfInput {
    /// Raw two-channel (u, v) flow.
    Uv,
    /// Single-channel flow magnitude.
    MagnitudeOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub image_size: usize,
    pub horizon: usize,
    /// Output channels of each encoder stage; the last entry is the latent
    /// channel count. One stage per spatial halving down to `latent_spatial`.
    pub stage_channels: Vec<usize>,
    pub latent_spatial: usize,
    pub leaky_slope: f64,
    pub of_input: OfInput,
    /// Log-variance is clamped to `[-logvar_clamp, logvar_clamp]`.
    pub logvar_clamp: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl ModelConfig {
    /// Full-size configuration: 128x128 input, 512x4x4 latent.
    pub fn paper() -> Self {
        Self {
            image_size: 128,
            horizon: 10,
            stage_channels: vec![32, 64, 128, 256, 512],
            latent_spatial: 4,
            leaky_slope: 0.1,
            of_input: OfInput::Uv,
            logvar_clamp: 10.0,
        }
    }

    /// 32x32 configuration with three stages, for gradient tests and
    /// fast unit runs. The latent grid is 64x4x4.
    pub fn tiny() -> Self {
        Self {
            image_size: 32,
            stage_channels: vec![8, 16, 64],
            ..Self::paper()
        }
    }

    pub fn num_stages(&self) -> usize {
        self.stage_channels.len()
    }

    pub fn latent_channels(&self) -> usize {
        *self.stage_channels.last().expect("non-empty stages")
    }

    pub fn sm_in_channels(&self) -> usize {
        3 + 2
    }

    pub fn of_in_channels(&self) -> usize {
        match self.of_input {
            OfInput::Uv => 2,
            OfInput::MagnitudeOnly => 1,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.stage_channels.is_empty() {
            return Err(ModelError::BadConfig("stage_channels is empty".into()));
        }
        if self.horizon == 0 {
            return Err(ModelError::BadConfig("horizon must be >= 1".into()));
        }
        let reduced = self.image_size >> self.num_stages();
        if reduced != self.latent_spatial || self.image_size % (1 << self.num_stages()) != 0 {
            return Err(ModelError::BadConfig(format!(
                "image_size {} with {} stages gives latent spatial {}, expected {}",
                self.image_size,
                self.num_stages(),
                reduced,
                self.latent_spatial
            )));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(ModelError::BadConfig(format!(
                "leaky_slope {} outside (0,1)",
                self.leaky_slope
            )));
        }
        if self.logvar_clamp <= 0.0 {
            return Err(ModelError::BadConfig("logvar_clamp must be > 0".into()));
        }
        Ok(())
    }
}

/// Diagonal Gaussian over the latent motion grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDistribution<S: Scalar> {
    pub mu: Array3<S>,
    pub logvar: Array3<S>,
}

/// Output of one forward pass.
#[derive(Debug, Clone)]
pub struct PredictionOutput<S: Scalar> {
    /// `(horizon, 3, h, w)`, every value in (0, 1).
    pub frames: Array4<S>,
    pub latent: LatentDistribution<S>,
    pub z: Array3<S>,
}

impl PredictionOutput<f32> {
    /// Repackage predicted frames as a video whose indices start at
    /// `first_index`.
    pub fn to_video_tensor(&self, first_index: usize) -> VideoTensor {
        VideoTensor::from_array4(&self.frames, first_index)
            .expect("sigmoid outputs are in range")
    }
}

/// Latent sampling mode for the variational branch.
#[derive(Debug, Clone)]
pub enum LatentMode<S: Scalar> {
    /// `z = mu`; deterministic, used at inference.
    Mean,
    /// `z = mu + sigma * eps` with seeded standard-normal noise.
    Sample { seed: u64 },
    /// Caller-supplied noise, for tests and the training loop.
    WithNoise(Array3<S>),
}

#[derive(Debug, Clone, Copy)]
struct ConvIds {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct StageIds {
    c1: ConvIds,
    c2: ConvIds,
}

#[derive(Debug, Clone)]
struct ModelIndex {
    sm: Vec<StageIds>,
    of: Vec<StageIds>,
    mu: ConvIds,
    logvar: ConvIds,
    up: Vec<ConvIds>,
    out: ConvIds,
}

/// The full predictor with its flat parameter buffer.
#[derive(Debug, Clone)]
pub struct Model<S: Scalar> {
    pub cfg: ModelConfig,
    pub layout: ParamLayout,
    pub params: Vec<S>,
    idx: ModelIndex,
}

struct StageCache<S: Scalar> {
    x_in: Array3<S>,
    a1: Array3<S>,
    a2: Array3<S>,
    pool_idx: Array3<u8>,
}

/// Every intermediate needed to run the backward pass.
pub struct Tape<S: Scalar> {
    sm: Vec<StageCache<S>>,
    of: Vec<StageCache<S>>,
    of_features: Array3<S>,
    logvar_raw: Array3<S>,
    pub latent: LatentDistribution<S>,
    noise: Option<Array3<S>>,
    pub z: Array3<S>,
    dec_x: Vec<Array3<S>>,
    dec_a: Vec<Array3<S>>,
    /// Sigmoid output as `(horizon*3, h, w)`.
    pub y: Array3<S>,
}

impl<S: Scalar> Tape<S> {
    /// Predicted frames regrouped as `(horizon, 3, h, w)`.
    pub fn frames(&self, horizon: usize) -> Array4<S> {
        let (c, h, w) = self.y.dim();
        self.y
            .to_shape((horizon, c / horizon, h, w))
            .expect("channel grouping")
            .to_owned()
    }

    pub fn into_output(self, horizon: usize) -> PredictionOutput<S> {
        let frames = self.frames(horizon);
        PredictionOutput {
            frames,
            latent: self.latent,
            z: self.z,
        }
    }
}

fn build_layout(cfg: &ModelConfig) -> (ParamLayout, ModelIndex) {
    let mut layout = ParamLayout::default();
    let k = 3usize;
    let mut trunk = |layout: &mut ParamLayout, prefix: &str, in_ch: usize| -> Vec<StageIds> {
        let mut ids = Vec::new();
        let mut c_in = in_ch;
        for (i, &c_out) in cfg.stage_channels.iter().enumerate() {
            let c1 = ConvIds {
                w: layout.add_weight(
                    format!("{prefix}.s{i}.c1.w"),
                    &[c_out, c_in, k, k],
                    c_in * k * k,
                ),
                b: layout.add_bias(format!("{prefix}.s{i}.c1.b"), c_out),
            };
            let c2 = ConvIds {
                w: layout.add_weight(
                    format!("{prefix}.s{i}.c2.w"),
                    &[c_out, c_out, k, k],
                    c_out * k * k,
                ),
                b: layout.add_bias(format!("{prefix}.s{i}.c2.b"), c_out),
            };
            ids.push(StageIds { c1, c2 });
            c_in = c_out;
        }
        ids
    };
    let sm = trunk(&mut layout, "sm", cfg.sm_in_channels());
    let of = trunk(&mut layout, "of", cfg.of_in_channels());
    let latent = cfg.latent_channels();
    let mu = ConvIds {
        w: layout.add_weight("of.mu.w", &[latent, latent, k, k], latent * k * k),
        b: layout.add_bias("of.mu.b", latent),
    };
    let logvar = ConvIds {
        w: layout.add_weight("of.logvar.w", &[latent, latent, k, k], latent * k * k),
        b: layout.add_bias("of.logvar.b", latent),
    };
    let n = cfg.num_stages();
    let mut up = Vec::new();
    let mut c_in = 2 * latent;
    for j in 0..n {
        let c_out = cfg.stage_channels[n - 1 - j];
        up.push(ConvIds {
            w: layout.add_weight(
                format!("dec.up{j}.w"),
                &[c_in, c_out, k, k],
                c_in * k * k,
            ),
            b: layout.add_bias(format!("dec.up{j}.b"), c_out),
        });
        c_in = 2 * c_out; // concat with the matching skip
    }
    let out = ConvIds {
        w: layout.add_weight(
            "dec.out.w",
            &[cfg.horizon * 3, c_in, k, k],
            c_in * k * k,
        ),
        b: layout.add_bias("dec.out.b", cfg.horizon * 3),
    };
    (
        layout,
        ModelIndex {
            sm,
            of,
            mu,
            logvar,
            up,
            out,
        },
    )
}

impl<S: Scalar> Model<S> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let (layout, idx) = build_layout(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = layout.init_params(&mut rng);
        Ok(Self {
            cfg,
            layout,
            params,
            idx,
        })
    }

    /// All parameters zero; the decoder then emits 0.5 everywhere.
    pub fn zeros(cfg: ModelConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        let (layout, idx) = build_layout(&cfg);
        let params = vec![S::zero(); layout.total];
        Ok(Self {
            cfg,
            layout,
            params,
            idx,
        })
    }

    /// Rebuild from a config and an existing flat parameter buffer.
    pub fn from_params(cfg: ModelConfig, params: Vec<S>) -> Result<Self, ModelError> {
        cfg.validate()?;
        let (layout, idx) = build_layout(&cfg);
        if params.len() != layout.total {
            return Err(ModelError::BadConfig(format!(
                "parameter buffer has {} values, layout needs {}",
                params.len(),
                layout.total
            )));
        }
        Ok(Self {
            cfg,
            layout,
            params,
            idx,
        })
    }

    pub fn num_params(&self) -> usize {
        self.layout.total
    }

    fn slope(&self) -> S {
        S::of(self.cfg.leaky_slope)
    }

    fn check_input(&self, what: &str, x: &Array3<S>, channels: usize) -> Result<(), ModelError> {
        let sz = self.cfg.image_size;
        if x.dim() != (channels, sz, sz) {
            return Err(ModelError::Shape {
                what: what.to_string(),
                expected: format!("({channels}, {sz}, {sz})"),
                actual: format!("{:?}", x.dim()),
            });
        }
        Ok(())
    }

    fn conv_apply(&self, ids: ConvIds, x: &Array3<S>) -> Array3<S> {
        let w = self.layout.view4(&self.params, ids.w);
        let b = self.layout.slice(&self.params, ids.b);
        conv2d(&x.view(), &w, b, 1, 1)
    }

    fn trunk_forward(&self, x0: Array3<S>, ids: &[StageIds]) -> (Array3<S>, Vec<StageCache<S>>) {
        let slope = self.slope();
        let mut caches = Vec::with_capacity(ids.len());
        let mut x = x0;
        for stage in ids {
            let y1 = self.conv_apply(stage.c1, &x);
            let a1 = leaky_relu(y1, slope);
            let y2 = self.conv_apply(stage.c2, &a1);
            let a2 = leaky_relu(y2, slope);
            let (p, pool_idx) = maxpool2(&a2.view());
            caches.push(StageCache {
                x_in: x,
                a1,
                a2,
                pool_idx,
            });
            x = p;
        }
        (x, caches)
    }

    fn trunk_backward(
        &self,
        caches: &[StageCache<S>],
        ids: &[StageIds],
        mut d_out: Array3<S>,
        d_skips: Option<&[Array3<S>]>,
        grads: &mut [S],
    ) -> Array3<S> {
        let slope = self.slope();
        for (i, (cache, stage)) in caches.iter().zip(ids.iter()).enumerate().rev() {
            let mut d_prepool = maxpool2_backward(&d_out.view(), &cache.pool_idx);
            if let Some(skips) = d_skips {
                d_prepool += &skips[i];
            }
            let d_y2 = leaky_relu_backward(&cache.a2.view(), &d_prepool.view(), slope);
            let w2 = self.layout.view4(&self.params, stage.c2.w);
            let (d_a1, dw2, db2) = conv2d_backward(&cache.a1.view(), &w2, &d_y2.view(), 1, 1);
            accumulate(grads, &self.layout, stage.c2.w, dw2.as_slice().unwrap());
            accumulate(grads, &self.layout, stage.c2.b, db2.as_slice().unwrap());
            let d_y1 = leaky_relu_backward(&cache.a1.view(), &d_a1.view(), slope);
            let w1 = self.layout.view4(&self.params, stage.c1.w);
            let (d_x, dw1, db1) = conv2d_backward(&cache.x_in.view(), &w1, &d_y1.view(), 1, 1);
            accumulate(grads, &self.layout, stage.c1.w, dw1.as_slice().unwrap());
            accumulate(grads, &self.layout, stage.c1.b, db1.as_slice().unwrap());
            d_out = d_x;
        }
        d_out
    }

    /// Encode the initial frame plus its direction map into the deepest
    /// feature grid and the per-stage pre-pool skip activations.
    pub fn sm_encode(
        &self,
        initial: &Array3<S>,
        direction: &Array3<S>,
    ) -> Result<(Array3<S>, Vec<Array3<S>>), ModelError> {
        self.check_input("sm initial frame", initial, 3)?;
        self.check_input("sm direction map", direction, 2)?;
        let x0 = concat_channels(&initial.view(), &direction.view());
        let (features, caches) = self.trunk_forward(x0, &self.idx.sm);
        let skips = caches.into_iter().map(|c| c.a2).collect();
        Ok((features, skips))
    }

    /// Encode the initial flow map into a latent Gaussian.
    pub fn of_encode(&self, flow_input: &Array3<S>) -> Result<LatentDistribution<S>, ModelError> {
        self.check_input("of flow map", flow_input, self.cfg.of_in_channels())?;
        let (features, _) = self.trunk_forward(flow_input.clone(), &self.idx.of);
        let mu = self.conv_apply(self.idx.mu, &features);
        let raw = self.conv_apply(self.idx.logvar, &features);
        let clamp = S::of(self.cfg.logvar_clamp);
        let logvar = raw.mapv(|v| v.min(clamp).max(-clamp));
        Ok(LatentDistribution { mu, logvar })
    }

    /// Decode concatenated (features, z) into the predicted future frames.
    pub fn decode(
        &self,
        features: &Array3<S>,
        z: &Array3<S>,
        skips: &[Array3<S>],
    ) -> Result<Array4<S>, ModelError> {
        let latent = self.cfg.latent_channels();
        let spatial = self.cfg.latent_spatial;
        for (what, g) in [("decoder features", features), ("decoder z", z)] {
            if g.dim() != (latent, spatial, spatial) {
                return Err(ModelError::Shape {
                    what: what.to_string(),
                    expected: format!("({latent}, {spatial}, {spatial})"),
                    actual: format!("{:?}", g.dim()),
                });
            }
        }
        if skips.len() != self.cfg.num_stages() {
            return Err(ModelError::Shape {
                what: "decoder skips".to_string(),
                expected: format!("{} stages", self.cfg.num_stages()),
                actual: format!("{} stages", skips.len()),
            });
        }
        let (y, _, _) = self.run_decoder(features, z, skips);
        Ok(regroup_frames(y, self.cfg.horizon))
    }

    fn run_decoder(
        &self,
        features: &Array3<S>,
        z: &Array3<S>,
        skips: &[Array3<S>],
    ) -> (Array3<S>, Vec<Array3<S>>, Vec<Array3<S>>) {
        let slope = self.slope();
        let n = self.cfg.num_stages();
        let mut dec_x = Vec::with_capacity(n + 1);
        let mut dec_a = Vec::with_capacity(n);
        let mut x = concat_channels(&features.view(), &z.view());
        for j in 0..n {
            let ids = self.idx.up[j];
            let w = self.layout.view4(&self.params, ids.w);
            let b = self.layout.slice(&self.params, ids.b);
            let t = tconv2d(&x.view(), &w, b);
            let a = leaky_relu(t, slope);
            let nx = concat_channels(&a.view(), &skips[n - 1 - j].view());
            dec_x.push(x);
            dec_a.push(a);
            x = nx;
        }
        let logits = self.conv_apply(self.idx.out, &x);
        dec_x.push(x);
        let y = sigmoid(logits);
        (y, dec_x, dec_a)
    }

    /// Full forward pass. Deterministic given parameters, inputs, and mode.
    pub fn forward(
        &self,
        initial: &Array3<S>,
        direction: &Array3<S>,
        flow_input: &Array3<S>,
        mode: &LatentMode<S>,
    ) -> Result<PredictionOutput<S>, ModelError> {
        let tape = self.forward_train(initial, direction, flow_input, mode)?;
        Ok(tape.into_output(self.cfg.horizon))
    }

    /// Forward pass retaining every activation needed by [`Model::backward`].
    pub fn forward_train(
        &self,
        initial: &Array3<S>,
        direction: &Array3<S>,
        flow_input: &Array3<S>,
        mode: &LatentMode<S>,
    ) -> Result<Tape<S>, ModelError> {
        self.check_input("sm initial frame", initial, 3)?;
        self.check_input("sm direction map", direction, 2)?;
        self.check_input("of flow map", flow_input, self.cfg.of_in_channels())?;
        let x0 = concat_channels(&initial.view(), &direction.view());
        let (features, sm_caches) = self.trunk_forward(x0, &self.idx.sm);
        let (of_features, of_caches) = self.trunk_forward(flow_input.clone(), &self.idx.of);
        let mu = self.conv_apply(self.idx.mu, &of_features);
        let logvar_raw = self.conv_apply(self.idx.logvar, &of_features);
        let clamp = S::of(self.cfg.logvar_clamp);
        let logvar = logvar_raw.mapv(|v| v.min(clamp).max(-clamp));
        let latent = LatentDistribution {
            mu,
            logvar,
        };
        let noise = match mode {
            LatentMode::Mean => None,
            LatentMode::Sample { seed } => Some(standard_normal(latent.mu.dim(), *seed)),
            LatentMode::WithNoise(n) => Some(n.clone()),
        };
        let z = match &noise {
            None => latent.mu.clone(),
            Some(n) => reparameterize(&latent, n),
        };
        let skips: Vec<Array3<S>> = sm_caches.iter().map(|c| c.a2.clone()).collect();
        let (y, dec_x, dec_a) = self.run_decoder(&features, &z, &skips);
        Ok(Tape {
            sm: sm_caches,
            of: of_caches,
            of_features,
            logvar_raw,
            latent,
            noise,
            z,
            dec_x,
            dec_a,
            y,
        })
    }

    /// Backpropagate `d_frames` (gradient w.r.t. the sigmoid output, as
    /// `(horizon, 3, h, w)`) plus optional direct gradients on mu/logvar
    /// (e.g. from a KL term). Returns the flat parameter gradient.
    pub fn backward(
        &self,
        tape: &Tape<S>,
        d_frames: &Array4<S>,
        d_mu_extra: Option<&Array3<S>>,
        d_logvar_extra: Option<&Array3<S>>,
    ) -> Vec<S> {
        let mut grads = vec![S::zero(); self.layout.total];
        let slope = self.slope();
        let n = self.cfg.num_stages();
        let (c, h, w) = tape.y.dim();
        let dy = d_frames
            .to_shape((c, h, w))
            .expect("frame grouping")
            .to_owned();
        let d_logits = sigmoid_backward(&tape.y.view(), &dy.view());
        let w_out = self.layout.view4(&self.params, self.idx.out.w);
        let (mut d_x, dw_out, db_out) =
            conv2d_backward(&tape.dec_x[n].view(), &w_out, &d_logits.view(), 1, 1);
        accumulate(&mut grads, &self.layout, self.idx.out.w, dw_out.as_slice().unwrap());
        accumulate(&mut grads, &self.layout, self.idx.out.b, db_out.as_slice().unwrap());
        let mut d_skips: Vec<Option<Array3<S>>> = (0..n).map(|_| None).collect();
        for j in (0..n).rev() {
            let c_j = self.cfg.stage_channels[n - 1 - j];
            let (d_a, d_skip) = split_channels(&d_x.view(), c_j);
            d_skips[n - 1 - j] = Some(d_skip);
            let d_t = leaky_relu_backward(&tape.dec_a[j].view(), &d_a.view(), slope);
            let ids = self.idx.up[j];
            let w = self.layout.view4(&self.params, ids.w);
            let (d_prev, dw, db) = tconv2d_backward(&tape.dec_x[j].view(), &w, &d_t.view());
            accumulate(&mut grads, &self.layout, ids.w, dw.as_slice().unwrap());
            accumulate(&mut grads, &self.layout, ids.b, db.as_slice().unwrap());
            d_x = d_prev;
        }
        let latent_ch = self.cfg.latent_channels();
        let (d_features, d_z) = split_channels(&d_x.view(), latent_ch);

        // Latent path: z = mu + exp(logvar/2) * eps.
        let mut d_mu = d_z.clone();
        if let Some(extra) = d_mu_extra {
            d_mu += extra;
        }
        let half = S::of(0.5);
        let mut d_logvar = match &tape.noise {
            Some(eps) => {
                let mut d = d_z;
                Zip::from(&mut d)
                    .and(eps)
                    .and(&tape.latent.logvar)
                    .for_each(|d, &e, &lv| *d = *d * e * half * (lv * half).exp());
                d
            }
            None => Array3::zeros(d_z.dim()),
        };
        if let Some(extra) = d_logvar_extra {
            d_logvar += extra;
        }
        // Clamp: gradient passes only where the raw value was in range.
        let clamp = S::of(self.cfg.logvar_clamp);
        Zip::from(&mut d_logvar)
            .and(&tape.logvar_raw)
            .for_each(|d, &raw| {
                if raw.abs() > clamp {
                    *d = S::zero();
                }
            });

        let w_mu = self.layout.view4(&self.params, self.idx.mu.w);
        let (d_of1, dw_mu, db_mu) =
            conv2d_backward(&tape.of_features.view(), &w_mu, &d_mu.view(), 1, 1);
        accumulate(&mut grads, &self.layout, self.idx.mu.w, dw_mu.as_slice().unwrap());
        accumulate(&mut grads, &self.layout, self.idx.mu.b, db_mu.as_slice().unwrap());
        let w_lv = self.layout.view4(&self.params, self.idx.logvar.w);
        let (d_of2, dw_lv, db_lv) =
            conv2d_backward(&tape.of_features.view(), &w_lv, &d_logvar.view(), 1, 1);
        accumulate(&mut grads, &self.layout, self.idx.logvar.w, dw_lv.as_slice().unwrap());
        accumulate(&mut grads, &self.layout, self.idx.logvar.b, db_lv.as_slice().unwrap());
        let d_of = d_of1 + d_of2;
        self.trunk_backward(&tape.of, &self.idx.of, d_of, None, &mut grads);

        let d_skips: Vec<Array3<S>> = d_skips.into_iter().map(|d| d.unwrap()).collect();
        self.trunk_backward(&tape.sm, &self.idx.sm, d_features, Some(&d_skips), &mut grads);
        grads
    }
}

fn accumulate<S: Scalar>(grads: &mut [S], layout: &ParamLayout, id: usize, contrib: &[S]) {
    let spec = layout.spec(id);
    let dst = &mut grads[spec.offset..spec.offset + spec.len];
    debug_assert_eq!(dst.len(), contrib.len());
    for (d, c) in dst.iter_mut().zip(contrib) {
        *d = *d + *c;
    }
}

fn regroup_frames<S: Scalar>(y: Array3<S>, horizon: usize) -> Array4<S> {
    let (c, h, w) = y.dim();
    y.into_shape_with_order((horizon, c / horizon, h, w))
        .expect("channel grouping")
}

/// `z = mu + exp(logvar/2) * noise`.
pub fn reparameterize<S: Scalar>(latent: &LatentDistribution<S>, noise: &Array3<S>) -> Array3<S> {
    let half = S::of(0.5);
    let mut z = latent.mu.clone();
    Zip::from(&mut z)
        .and(&latent.logvar)
        .and(noise)
        .for_each(|z, &lv, &n| *z = *z + (lv * half).exp() * n);
    z
}

/// Seeded standard-normal grid.
pub fn standard_normal<S: Scalar>(dim: (usize, usize, usize), seed: u64) -> Array3<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array3::from_shape_simple_fn(dim, || S::of(rng.sample(StandardNormal)))
}

/// Concatenate a semantic frame with its direction map into the five-channel
/// encoder input.
pub fn sm_input_from<S: Scalar>(frame: &SemanticFrame, direction: &DirectionMap) -> Array3<S> {
    let (h, w) = (frame.height(), frame.width());
    let mut x = Array3::<S>::zeros((5, h, w));
    for ch in 0..3 {
        Zip::from(x.index_axis_mut(Axis(0), ch))
            .and(frame.data().index_axis(Axis(0), ch))
            .for_each(|o, &v| *o = S::of(v as f64));
    }
    Zip::from(x.index_axis_mut(Axis(0), 3))
        .and(&direction.c0)
        .for_each(|o, &v| *o = S::of(v as f64));
    Zip::from(x.index_axis_mut(Axis(0), 4))
        .and(&direction.c1)
        .for_each(|o, &v| *o = S::of(v as f64));
    x
}

/// Pack a flow field into the variational encoder's input channels.
pub fn of_input_from<S: Scalar>(flow: &FlowField, kind: OfInput) -> Array3<S> {
    let (h, w) = (flow.height(), flow.width());
    match kind {
        OfInput::Uv => {
            let mut x = Array3::<S>::zeros((2, h, w));
            Zip::from(x.index_axis_mut(Axis(0), 0))
                .and(&flow.u)
                .for_each(|o, &v| *o = S::of(v as f64));
            Zip::from(x.index_axis_mut(Axis(0), 1))
                .and(&flow.v)
                .for_each(|o, &v| *o = S::of(v as f64));
            x
        }
        OfInput::MagnitudeOnly => {
            let mut x = Array3::<S>::zeros((1, h, w));
            for y in 0..h {
                for xx in 0..w {
                    let m = (flow.u[(y, xx)] as f64).hypot(flow.v[(y, xx)] as f64);
                    x[(0, y, xx)] = S::of(m);
                }
            }
            x
        }
    }
}

/// Build a direction map for a model input using the default motion mask.
pub fn direction_input_from<S: Scalar>(flow: &FlowField) -> Array3<S> {
    let dm = compute_direction_map(flow, EPS_MOTION).expect("finite flow");
    let (h, w) = (dm.height(), dm.width());
    let mut x = Array3::<S>::zeros((2, h, w));
    Zip::from(x.index_axis_mut(Axis(0), 0))
        .and(&dm.c0)
        .for_each(|o, &v| *o = S::of(v as f64));
    Zip::from(x.index_axis_mut(Axis(0), 1))
        .and(&dm.c1)
        .for_each(|o, &v| *o = S::of(v as f64));
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand3(dim: (usize, usize, usize), seed: u64) -> Array3<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_simple_fn(dim, || rng.random_range(0.0..1.0))
    }

    #[test]
    fn paper_config_encodes_to_512x4x4_with_five_skips() {
        let model = Model::<f32>::new(ModelConfig::paper(), 7).unwrap();
        let initial = rand3((3, 128, 128), 1);
        let direction = rand3((2, 128, 128), 2);
        let (features, skips) = model.sm_encode(&initial, &direction).unwrap();
        assert_eq!(features.dim(), (512, 4, 4));
        let dims: Vec<_> = skips.iter().map(|s| s.dim()).collect();
        assert_eq!(
            dims,
            vec![
                (32, 128, 128),
                (64, 64, 64),
                (128, 32, 32),
                (256, 16, 16),
                (512, 8, 8)
            ]
        );
    }

    #[test]
    fn tiny_config_encodes_to_64x4x4_with_three_stages() {
        let model = Model::<f32>::new(ModelConfig::tiny(), 7).unwrap();
        let (features, skips) = model
            .sm_encode(&rand3((3, 32, 32), 1), &rand3((2, 32, 32), 2))
            .unwrap();
        assert_eq!(features.dim(), (64, 4, 4));
        assert_eq!(skips.len(), 3);
    }

    #[test]
    fn sm_encode_is_a_pure_function() {
        let model = Model::<f32>::new(ModelConfig::tiny(), 3).unwrap();
        let initial = rand3((3, 32, 32), 1);
        let direction = rand3((2, 32, 32), 2);
        let (f1, _) = model.sm_encode(&initial, &direction).unwrap();
        let (f2, _) = model.sm_encode(&initial, &direction).unwrap();
        assert_eq!(f1, f2);
    }

    #[test]
    fn sm_encode_rejects_wrong_spatial_dims() {
        let model = Model::<f32>::new(ModelConfig::tiny(), 3).unwrap();
        let err = model
            .sm_encode(&rand3((3, 16, 16), 1), &rand3((2, 16, 16), 2))
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(3, 32, 32)") && msg.contains("(3, 16, 16)"), "{msg}");
    }

    #[test]
    fn of_encode_yields_finite_latents_on_zero_flow() {
        let model = Model::<f32>::new(ModelConfig::tiny(), 3).unwrap();
        let latent = model.of_encode(&Array3::zeros((2, 32, 32))).unwrap();
        assert_eq!(latent.mu.dim(), (64, 4, 4));
        assert_eq!(latent.logvar.dim(), (64, 4, 4));
        assert!(latent.mu.iter().chain(latent.logvar.iter()).all(|v| v.is_finite()));
    }

    #[test]
    fn logvar_is_clamped_to_ten() {
        let mut model = Model::<f32>::new(ModelConfig::tiny(), 3).unwrap();
        // Push the logvar head bias far beyond the clamp.
        let spec = model.layout.by_name("of.logvar.b").unwrap().clone();
        for v in &mut model.params[spec.offset..spec.offset + spec.len] {
            *v = 50.0;
        }
        let latent = model.of_encode(&rand3((2, 32, 32), 9)).unwrap();
        assert!(latent.logvar.iter().all(|&v| v <= 10.0));
        assert!(latent.logvar.iter().any(|&v| v == 10.0));
    }

    #[test]
    fn reparameterize_closed_forms() {
        let latent = LatentDistribution {
            mu: Array3::from_elem((1, 1, 1), 2.0f64),
            logvar: Array3::from_elem((1, 1, 1), 4.0f64.ln()),
        };
        // noise 0 -> z = mu
        let z = reparameterize(&latent, &Array3::zeros((1, 1, 1)));
        assert_eq!(z[(0, 0, 0)], 2.0);
        // mu=0, logvar=0, noise=1 -> z = 1
        let unit = LatentDistribution {
            mu: Array3::zeros((1, 1, 1)),
            logvar: Array3::zeros((1, 1, 1)),
        };
        let z = reparameterize(&unit, &Array3::from_elem((1, 1, 1), 1.0));
        assert_eq!(z[(0, 0, 0)], 1.0);
        // mu=2, logvar=ln 4, noise=-1 -> z = 2 - 2 = 0
        let z = reparameterize(&latent, &Array3::from_elem((1, 1, 1), -1.0));
        assert!(z[(0, 0, 0)].abs() < 1e-12);
    }

    #[test]
    fn zero_parameters_predict_one_half_everywhere() {
        let model = Model::<f32>::zeros(ModelConfig::tiny()).unwrap();
        let out = model
            .forward(
                &Array3::zeros((3, 32, 32)),
                &Array3::zeros((2, 32, 32)),
                &Array3::zeros((2, 32, 32)),
                &LatentMode::Mean,
            )
            .unwrap();
        assert!(out.frames.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn horizon_one_yields_single_frame() {
        let cfg = ModelConfig {
            horizon: 1,
            ..ModelConfig::tiny()
        };
        let model = Model::<f32>::new(cfg, 5).unwrap();
        let out = model
            .forward(
                &rand3((3, 32, 32), 1),
                &rand3((2, 32, 32), 2),
                &rand3((2, 32, 32), 3),
                &LatentMode::Mean,
            )
            .unwrap();
        assert_eq!(out.frames.dim(), (1, 3, 32, 32));
    }

    #[test]
    fn forward_tiny_end_to_end_shapes_and_range() {
        let model = Model::<f32>::new(ModelConfig::tiny(), 11).unwrap();
        let out = model
            .forward(
                &rand3((3, 32, 32), 1),
                &rand3((2, 32, 32), 2),
                &rand3((2, 32, 32), 3),
                &LatentMode::Sample { seed: 4 },
            )
            .unwrap();
        assert_eq!(out.frames.dim(), (10, 3, 32, 32));
        assert!(out.frames.iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(out.latent.mu.dim(), (64, 4, 4));
    }

    #[test]
    fn mean_mode_forward_is_bit_identical() {
        let model = Model::<f32>::new(ModelConfig::tiny(), 13).unwrap();
        let i = rand3((3, 32, 32), 1);
        let d = rand3((2, 32, 32), 2);
        let f = rand3((2, 32, 32), 3);
        let a = model.forward(&i, &d, &f, &LatentMode::Mean).unwrap();
        let b = model.forward(&i, &d, &f, &LatentMode::Mean).unwrap();
        assert_eq!(a.frames, b.frames);
        assert_eq!(a.z, b.z);
    }

    #[test]
    fn near_deterministic_sampling_matches_mean_mode() {
        let mut model = Model::<f32>::new(ModelConfig::tiny(), 17).unwrap();
        // Force logvar to the clamp floor: sigma = exp(-5) ~ 6.7e-3.
        let spec = model.layout.by_name("of.logvar.b").unwrap().clone();
        for v in &mut model.params[spec.offset..spec.offset + spec.len] {
            *v = -50.0;
        }
        let i = rand3((3, 32, 32), 1);
        let d = rand3((2, 32, 32), 2);
        let f = rand3((2, 32, 32), 3);
        let mean = model.forward(&i, &d, &f, &LatentMode::Mean).unwrap();
        let sampled = model
            .forward(&i, &d, &f, &LatentMode::Sample { seed: 99 })
            .unwrap();
        let max_diff = mean
            .frames
            .iter()
            .zip(sampled.frames.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max_diff < 1e-2, "max diff {max_diff}");
    }

    #[test]
    fn config_validation_rejects_bad_geometry() {
        let bad = ModelConfig {
            image_size: 48,
            ..ModelConfig::tiny()
        };
        assert!(bad.validate().is_err());
        let bad = ModelConfig {
            stage_channels: vec![],
            ..ModelConfig::tiny()
        };
        assert!(bad.validate().is_err());
    }
}
