//! The head-target network.
//!
//! A four-stage strided convolutional pyramid feeds an upsampling decoder that
//! produces the decoded feature `f_dec` at heatmap resolution. A convolution
//! turns `f_dec` into the head-detection map; a single further convolution of
//! that map gives the one-channel head feature, which is concatenated back onto
//! `f_dec` to form `f_prop`. Three convolutional branches map `f_prop` to the
//! `N` head, gaze and connection heatmaps, and a strided convolution plus a
//! fully-connected layer map `f_dec` to `N` out-of-frame logits. Hidden
//! convolutions use SiLU so the whole network is smooth.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::SceneImage;
use crate::error::{Error, Result};
use crate::heatmap::Heatmap;
use crate::nn::{
    concat_channels, silu, silu_backward_inplace, split_channels, upsample2x,
    upsample2x_backward, Conv2d, ConvCache, Linear, Param, Real, Tensor,
};

/// Named size presets for the backbone and heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackbonePreset {
    /// Gradient-check scale: 32 px input, 16x16 maps, 2 proposals.
    Tiny,
    /// Desk-scale default for CPU training.
    Compact,
    /// 256 px input and 192 decoded channels.
    Standard,
}

impl std::str::FromStr for BackbonePreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(BackbonePreset::Tiny),
            "compact" => Ok(BackbonePreset::Compact),
            "standard" => Ok(BackbonePreset::Standard),
            other => Err(Error::invalid(format!("unknown backbone preset {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackbonePreset,
    pub input_size: usize,
    /// N, the number of head-target proposals.
    pub num_proposals: usize,
    /// (m, n): heatmap width and height.
    pub heatmap_size: (usize, usize),
    pub decoded_channels: usize,
    pub stage_channels: [usize; 4],
    pub decoder_channels: [usize; 2],
    pub proposal_hidden: usize,
    pub oof_channels: usize,
    /// Concatenate the head feature onto `f_dec`; when false it is replaced by zeros.
    pub reinject_head: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::standard()
    }
}

impl ModelConfig {
    pub fn preset(preset: BackbonePreset) -> Self {
        match preset {
            BackbonePreset::Tiny => Self::tiny(),
            BackbonePreset::Compact => Self::compact(),
            BackbonePreset::Standard => Self::standard(),
        }
    }

    pub fn tiny() -> Self {
        ModelConfig {
            backbone: BackbonePreset::Tiny,
            input_size: 32,
            num_proposals: 2,
            heatmap_size: (16, 16),
            decoded_channels: 4,
            stage_channels: [4, 4, 4, 4],
            decoder_channels: [4, 4],
            proposal_hidden: 4,
            oof_channels: 2,
            reinject_head: true,
        }
    }

    pub fn compact() -> Self {
        ModelConfig {
            backbone: BackbonePreset::Compact,
            input_size: 128,
            num_proposals: 20,
            heatmap_size: (64, 64),
            decoded_channels: 16,
            stage_channels: [16, 24, 32, 48],
            decoder_channels: [32, 24],
            proposal_hidden: 16,
            oof_channels: 4,
            reinject_head: true,
        }
    }

    pub fn standard() -> Self {
        ModelConfig {
            backbone: BackbonePreset::Standard,
            input_size: 256,
            num_proposals: 20,
            heatmap_size: (64, 64),
            decoded_channels: 192,
            stage_channels: [32, 64, 128, 256],
            decoder_channels: [128, 96],
            proposal_hidden: 64,
            oof_channels: 8,
            reinject_head: true,
        }
    }

    fn stem_layers(&self) -> usize {
        (self.input_size / self.heatmap_size.0).trailing_zeros() as usize - 1
    }

    pub fn validate(&self) -> Result<()> {
        let (m, n) = self.heatmap_size;
        if self.num_proposals == 0 || self.decoded_channels == 0 {
            return Err(Error::invalid("num_proposals and decoded_channels must be >= 1"));
        }
        if m != n {
            return Err(Error::invalid("heatmaps must be square"));
        }
        if m % 8 != 0 {
            return Err(Error::invalid(format!(
                "heatmap size {m} must be divisible by 8 for the three-step decoder"
            )));
        }
        let ratio = self.input_size / m;
        if self.input_size % m != 0 || ratio < 2 || !ratio.is_power_of_two() {
            return Err(Error::invalid(format!(
                "input size {} must be a power-of-two multiple (>= 2) of heatmap size {m}",
                self.input_size
            )));
        }
        if self.stage_channels.contains(&0)
            || self.decoder_channels.contains(&0)
            || self.proposal_hidden == 0
            || self.oof_channels == 0
        {
            return Err(Error::invalid("channel counts must be positive"));
        }
        Ok(())
    }
}

/// Intermediate features of one forward pass.
#[derive(Debug, Clone)]
pub struct FeatureMaps<T> {
    pub f_dec: Tensor<T>,
    /// Head-detection map after the clamp to `[0, 1]`.
    pub h_det: Heatmap,
    /// Head-detection map before the clamp; the detection loss targets this.
    pub h_det_raw: Heatmap,
    pub f_head: Tensor<T>,
    pub f_prop: Tensor<T>,
}

/// The model's `N` head-target proposals.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalSet {
    pub head_maps: Vec<Heatmap>,
    pub gaze_maps: Vec<Heatmap>,
    pub connection_maps: Vec<Heatmap>,
    pub oof_logits: Vec<f64>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl ProposalSet {
    pub fn len(&self) -> usize {
        self.head_maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.head_maps.is_empty()
    }

    pub fn oof_prob(&self, k: usize) -> f64 {
        sigmoid(self.oof_logits[k])
    }
}

/// Loss gradients with respect to the model outputs.
#[derive(Debug, Clone)]
pub struct OutputGrads {
    /// With respect to the activated head/gaze/connection maps.
    pub head: Vec<Heatmap>,
    pub gaze: Vec<Heatmap>,
    pub connection: Vec<Heatmap>,
    pub oof_logits: Vec<f64>,
    /// With respect to the raw (pre-clamp) detection map.
    pub detection_raw: Heatmap,
}

impl OutputGrads {
    pub fn zeros(n: usize, width: usize, height: usize) -> Self {
        OutputGrads {
            head: vec![Heatmap::zeros(width, height); n],
            gaze: vec![Heatmap::zeros(width, height); n],
            connection: vec![Heatmap::zeros(width, height); n],
            oof_logits: vec![0.0; n],
            detection_raw: Heatmap::zeros(width, height),
        }
    }
}

#[derive(Debug, Clone)]
struct Branch<T> {
    hidden: Conv2d<T>,
    out: Conv2d<T>,
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    config: ModelConfig,
    stem: Vec<Conv2d<T>>,
    stages: Vec<Vec<Conv2d<T>>>,
    decoder: Vec<Conv2d<T>>,
    det: Conv2d<T>,
    head_feature: Conv2d<T>,
    branches: Vec<Branch<T>>,
    oof_conv: Conv2d<T>,
    oof_fc: Linear<T>,
}

struct ConvStep<T> {
    cache: ConvCache<T>,
    pre: Tensor<T>,
    out: Tensor<T>,
}

/// Everything `backward` needs from a training forward pass.
pub struct Trace<T> {
    stem: Vec<ConvStep<T>>,
    stages: Vec<Vec<ConvStep<T>>>,
    decoder: Vec<ConvStep<T>>,
    det: ConvCache<T>,
    h_det_raw: Tensor<T>,
    head_feature: Option<ConvCache<T>>,
    branches: Vec<(ConvStep<T>, ConvCache<T>, Tensor<T>)>,
    oof_conv: ConvStep<T>,
}

const INPUT_CHANNELS: usize = 5;

impl<T: Real> Model<T> {
    /// Fan-in scaled random initialization, deterministic in `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let [c1, c2, c3, c4] = config.stage_channels;
        let [d0, d1] = config.decoder_channels;
        let c_dec = config.decoded_channels;
        let n = config.num_proposals;

        let mut stem = Vec::new();
        let mut prev = INPUT_CHANNELS;
        for _ in 0..config.stem_layers() {
            stem.push(Conv2d::new(rng, prev, c1, 3, 2, 1));
            prev = c1;
        }
        let mut stages = Vec::new();
        for (i, &c) in [c1, c2, c3, c4].iter().enumerate() {
            let mut convs = vec![Conv2d::new(rng, prev, c, 3, 2, 1)];
            if i == 3 {
                convs.push(Conv2d::new(rng, c, c, 3, 1, 2));
                convs.push(Conv2d::new(rng, c, c, 3, 1, 4));
            } else {
                convs.push(Conv2d::new(rng, c, c, 3, 1, 1));
            }
            stages.push(convs);
            prev = c;
        }
        let decoder = vec![
            Conv2d::new(rng, c4 + c3, d0, 3, 1, 1),
            Conv2d::new(rng, d0 + c2, d1, 3, 1, 1),
            Conv2d::new(rng, d1 + c1, c_dec, 3, 1, 1),
        ];
        let det = Conv2d::new(rng, c_dec, 1, 3, 1, 1);
        let head_feature = Conv2d::new(rng, 1, 1, 3, 1, 1);
        let branches = (0..3)
            .map(|_| Branch {
                hidden: Conv2d::new(rng, c_dec + 1, config.proposal_hidden, 3, 1, 1),
                out: Conv2d::new(rng, config.proposal_hidden, n, 3, 1, 1),
            })
            .collect();
        let oof_conv = Conv2d::new(rng, c_dec, config.oof_channels, 3, 4, 1);
        let (m, h) = config.heatmap_size;
        let (oh, ow) = oof_conv.output_hw(h, m);
        let oof_fc = Linear::new(rng, config.oof_channels * oh * ow, n);

        Ok(Model {
            config,
            stem,
            stages,
            decoder,
            det,
            head_feature,
            branches,
            oof_conv,
            oof_fc,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn param_names(&self) -> Vec<String> {
        let mut convs: Vec<String> = Vec::new();
        convs.extend((0..self.stem.len()).map(|i| format!("stem.{i}")));
        for (s, stage) in self.stages.iter().enumerate() {
            convs.extend((0..stage.len()).map(|i| format!("stage{}.{i}", s + 1)));
        }
        convs.extend((0..self.decoder.len()).map(|i| format!("decoder.{i}")));
        convs.push("detection".into());
        convs.push("head_feature".into());
        for name in ["head", "gaze", "connection"] {
            convs.push(format!("{name}.hidden"));
            convs.push(format!("{name}.out"));
        }
        convs.push("oof.conv".into());
        convs.push("oof.fc".into());
        convs
            .into_iter()
            .flat_map(|c| [format!("{c}.weight"), format!("{c}.bias")])
            .collect()
    }

    /// Every parameter tensor with a stable dotted name.
    pub fn params(&self) -> Vec<(String, &Param<T>)> {
        let mut refs: Vec<&Param<T>> = Vec::new();
        for c in self
            .stem
            .iter()
            .chain(self.stages.iter().flatten())
            .chain(self.decoder.iter())
            .chain([&self.det, &self.head_feature])
        {
            refs.push(&c.weight);
            refs.push(&c.bias);
        }
        for b in &self.branches {
            refs.extend([&b.hidden.weight, &b.hidden.bias, &b.out.weight, &b.out.bias]);
        }
        refs.extend([&self.oof_conv.weight, &self.oof_conv.bias]);
        refs.extend([&self.oof_fc.weight, &self.oof_fc.bias]);
        self.param_names().into_iter().zip(refs).collect()
    }

    /// Mutable counterpart of [`Model::params`], same order.
    pub fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let names = self.param_names();
        let mut refs: Vec<&mut Param<T>> = Vec::new();
        for c in self
            .stem
            .iter_mut()
            .chain(self.stages.iter_mut().flatten())
            .chain(self.decoder.iter_mut())
            .chain([&mut self.det, &mut self.head_feature])
        {
            refs.push(&mut c.weight);
            refs.push(&mut c.bias);
        }
        for b in self.branches.iter_mut() {
            refs.push(&mut b.hidden.weight);
            refs.push(&mut b.hidden.bias);
            refs.push(&mut b.out.weight);
            refs.push(&mut b.out.bias);
        }
        refs.push(&mut self.oof_conv.weight);
        refs.push(&mut self.oof_conv.bias);
        refs.push(&mut self.oof_fc.weight);
        refs.push(&mut self.oof_fc.bias);
        names.into_iter().zip(refs).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }

    /// Conv weights only (excludes biases and the fully-connected layer).
    pub fn conv_weights(&self) -> Vec<&Param<T>> {
        self.stem
            .iter()
            .chain(self.stages.iter().flatten())
            .chain(self.decoder.iter())
            .chain([&self.det, &self.head_feature, &self.oof_conv])
            .chain(self.branches.iter().flat_map(|b| [&b.hidden, &b.out]))
            .map(|c| &c.weight)
            .collect()
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    fn input_tensor(&self, image: &SceneImage) -> Result<Tensor<T>> {
        let s = self.config.input_size;
        if image.width() != s || image.height() != s {
            return Err(Error::shape(format!(
                "image is {}x{}, model expects {s}x{s}",
                image.width(),
                image.height()
            )));
        }
        let plane = s * s;
        let mut data = Vec::with_capacity(INPUT_CHANNELS * plane);
        data.extend(image.data().iter().map(|&v| T::of(f64::from(v) - 0.5)));
        for axis in 0..2 {
            for y in 0..s {
                for x in 0..s {
                    let v = if axis == 0 { x } else { y };
                    data.push(T::of((v as f64 + 0.5) / s as f64 - 0.5));
                }
            }
        }
        Ok(Tensor::from_vec(INPUT_CHANNELS, s, s, data))
    }

    fn to_heatmap(t: &[T], w: usize, h: usize, f: impl Fn(f64) -> f64) -> Heatmap {
        Heatmap::from_vec(w, h, t.iter().map(|v| f(v.as_f64())).collect()).expect("plane size")
    }

    /// Inference forward pass.
    pub fn forward(&self, image: &SceneImage) -> Result<(FeatureMaps<T>, ProposalSet)> {
        let (features, proposals, _) = self.forward_train(image)?;
        Ok((features, proposals))
    }

    /// Forward pass that also returns the trace needed by [`Model::backward`].
    pub fn forward_train(&self, image: &SceneImage) -> Result<(FeatureMaps<T>, ProposalSet, Trace<T>)> {
        let x = self.input_tensor(image)?;
        let act_conv = |conv: &Conv2d<T>, x: &Tensor<T>| {
            let (pre, cache) = conv.forward(x);
            let out = silu(&pre);
            ConvStep { cache, pre, out }
        };

        let mut stem = Vec::new();
        let mut cur = x;
        for c in &self.stem {
            let step = act_conv(c, &cur);
            cur = step.out.clone();
            stem.push(step);
        }
        let mut stages = Vec::new();
        let mut skips = Vec::new();
        for convs in &self.stages {
            let mut steps = Vec::new();
            for c in convs {
                let step = act_conv(c, &cur);
                cur = step.out.clone();
                steps.push(step);
            }
            skips.push(cur.clone());
            stages.push(steps);
        }
        let mut decoder = Vec::new();
        for (i, c) in self.decoder.iter().enumerate() {
            let skip = &skips[2 - i];
            let step = act_conv(c, &concat_channels(&upsample2x(&cur), skip));
            cur = step.out.clone();
            decoder.push(step);
        }
        let f_dec = cur;
        let (m, n) = self.config.heatmap_size;

        let (h_det_raw, det_cache) = self.det.forward(&f_dec);
        let mut h_clamped = h_det_raw.clone();
        for v in &mut h_clamped.data {
            *v = v.max(T::zero()).min(T::one());
        }
        let (f_head, head_cache) = if self.config.reinject_head {
            let (f, c) = self.head_feature.forward(&h_clamped);
            (f, Some(c))
        } else {
            (Tensor::zeros(1, n, m), None)
        };
        let f_prop = concat_channels(&f_dec, &f_head);

        let mut branches = Vec::new();
        let mut maps: Vec<Vec<Heatmap>> = Vec::new();
        for b in &self.branches {
            let hidden = act_conv(&b.hidden, &f_prop);
            let (mut logits, out_cache) = b.out.forward(&hidden.out);
            for v in &mut logits.data {
                *v = T::of(sigmoid(v.as_f64()));
            }
            maps.push(
                (0..self.config.num_proposals)
                    .map(|k| Self::to_heatmap(logits.channel(k), m, n, |v| v))
                    .collect(),
            );
            branches.push((hidden, out_cache, logits));
        }
        let oof_conv = act_conv(&self.oof_conv, &f_dec);
        let oof_logits: Vec<f64> = self
            .oof_fc
            .forward(&oof_conv.out.data)
            .into_iter()
            .map(|v| v.as_f64())
            .collect();

        let connection_maps = maps.pop().expect("three branches");
        let gaze_maps = maps.pop().expect("three branches");
        let head_maps = maps.pop().expect("three branches");
        let proposals = ProposalSet {
            head_maps,
            gaze_maps,
            connection_maps,
            oof_logits,
        };
        let features = FeatureMaps {
            h_det: Self::to_heatmap(&h_clamped.data, m, n, |v| v),
            h_det_raw: Self::to_heatmap(&h_det_raw.data, m, n, |v| v),
            f_dec,
            f_head,
            f_prop,
        };
        let trace = Trace {
            stem,
            stages,
            decoder,
            det: det_cache,
            h_det_raw,
            head_feature: head_cache,
            branches,
            oof_conv,
        };
        Ok((features, proposals, trace))
    }

    /// Accumulates parameter gradients for one forward pass.
    pub fn backward(&mut self, trace: Trace<T>, grads: &OutputGrads) {
        let (m, n) = self.config.heatmap_size;
        let c_dec = self.config.decoded_channels;
        let plane = m * n;
        let Trace {
            stem,
            stages,
            decoder,
            det,
            h_det_raw,
            head_feature,
            branches,
            oof_conv,
        } = trace;

        // proposal branches
        let mut d_prop = Tensor::<T>::zeros(c_dec + 1, n, m);
        let groups = [&grads.head, &grads.gaze, &grads.connection];
        for ((branch, (hidden, out_cache, probs)), group) in
            self.branches.iter_mut().zip(&branches).zip(groups)
        {
            let mut d_logits = Tensor::<T>::zeros(self.config.num_proposals, n, m);
            for (k, g) in group.iter().enumerate() {
                let p = probs.channel(k);
                for ((d, &gv), &pv) in d_logits.channel_mut(k).iter_mut().zip(g.values()).zip(p) {
                    *d = T::of(gv) * pv * (T::one() - pv);
                }
            }
            let mut d_hidden = branch.out.backward(out_cache, &d_logits, true).expect("dx");
            silu_backward_inplace(&hidden.pre, &mut d_hidden);
            let dp = branch.hidden.backward(&hidden.cache, &d_hidden, true).expect("dx");
            d_prop.add_assign(&dp);
        }
        let (mut d_dec, d_head) = split_channels(&d_prop, c_dec);

        // detection map and head-feature re-injection
        let mut d_raw = Tensor::from_vec(
            1,
            n,
            m,
            grads.detection_raw.values().iter().map(|&v| T::of(v)).collect(),
        );
        if let Some(cache) = &head_feature {
            let d_clamped = self.head_feature.backward(cache, &d_head, true).expect("dx");
            for ((d, &dc), &raw) in d_raw.data.iter_mut().zip(&d_clamped.data).zip(&h_det_raw.data) {
                if raw > T::zero() && raw < T::one() {
                    *d += dc;
                }
            }
        }
        debug_assert_eq!(d_raw.data.len(), plane);
        d_dec.add_assign(&self.det.backward(&det, &d_raw, true).expect("dx"));

        // out-of-frame head
        let d_logits: Vec<T> = grads.oof_logits.iter().map(|&v| T::of(v)).collect();
        let d_flat = self.oof_fc.backward(&oof_conv.out.data, &d_logits);
        let mut d_oof = Tensor::from_vec(
            oof_conv.out.channels,
            oof_conv.out.height,
            oof_conv.out.width,
            d_flat,
        );
        silu_backward_inplace(&oof_conv.pre, &mut d_oof);
        d_dec.add_assign(&self.oof_conv.backward(&oof_conv.cache, &d_oof, true).expect("dx"));

        // decoder, deepest block last in the forward order
        let mut d_skips: Vec<Option<Tensor<T>>> = vec![None, None, None];
        let mut d_cur = d_dec;
        for i in (0..self.decoder.len()).rev() {
            let step = &decoder[i];
            silu_backward_inplace(&step.pre, &mut d_cur);
            let d_in = self.decoder[i].backward(&step.cache, &d_cur, true).expect("dx");
            let up_channels = d_in.channels - stages[2 - i].last().expect("stage").out.channels;
            let (d_up, d_skip) = split_channels(&d_in, up_channels);
            d_skips[2 - i] = Some(d_skip);
            d_cur = upsample2x_backward(&d_up);
        }

        // backbone
        let first_layer = self.stem.is_empty();
        for s in (0..self.stages.len()).rev() {
            if s < 3 {
                d_cur.add_assign(d_skips[s].as_ref().expect("skip gradient"));
            }
            for i in (0..self.stages[s].len()).rev() {
                let step = &stages[s][i];
                silu_backward_inplace(&step.pre, &mut d_cur);
                let need_dx = !(first_layer && s == 0 && i == 0);
                match self.stages[s][i].backward(&step.cache, &d_cur, need_dx) {
                    Some(dx) => d_cur = dx,
                    None => return,
                }
            }
        }
        for i in (0..self.stem.len()).rev() {
            let step = &stem[i];
            silu_backward_inplace(&step.pre, &mut d_cur);
            match self.stem[i].backward(&step.cache, &d_cur, i > 0) {
                Some(dx) => d_cur = dx,
                None => return,
            }
        }
    }
}
