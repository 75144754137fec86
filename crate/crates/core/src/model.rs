//! Per-segment two-stream network and clip-level aggregation.
//!
//! Each stream is three `conv 3x3 -> batchnorm -> relu -> maxpool 2x2`
//! blocks (8, 16, 32 channels) closed by global average pooling, so both
//! feature vectors are 32 wide whatever the input resolution. The two
//! vectors are concatenated and mapped to class probabilities by one fully
//! connected layer and a softmax.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::seed::{self, stream};
use crate::tensor::{BatchMoments, BatchNormState, Gradients, Mode, NamedTensor, Tape, Tensor, Var};

pub const STREAM_CHANNELS: [usize; 3] = [8, 16, 32];
pub const FEATURE_WIDTH: usize = 32;
const KERNEL: usize = 3;

/// Class probabilities of one segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbVector(pub [f32; NUM_CLASSES]);

impl ProbVector {
    pub fn new(p: [f32; NUM_CLASSES]) -> Result<Self> {
        let total: f64 = p.iter().map(|&v| v as f64).sum();
        if p.iter().any(|&v| !(v >= 0.0)) || (total - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!(
                "not a probability vector (sum {total}): {p:?}"
            )));
        }
        Ok(ProbVector(p))
    }

    pub fn from_slice(p: &[f32]) -> Result<Self> {
        let arr: [f32; NUM_CLASSES] = p
            .try_into()
            .map_err(|_| Error::shape("prob_vector", format!("expected {NUM_CLASSES} values, got {}", p.len())))?;
        Self::new(arr)
    }
}

/// Clip-level score: elementwise sum of segment probabilities.
pub fn aggregate(probs: &[ProbVector]) -> Result<[f32; NUM_CLASSES]> {
    if probs.is_empty() {
        return Err(Error::invalid("cannot aggregate an empty list of segments"));
    }
    let mut score = [0.0f32; NUM_CLASSES];
    for p in probs {
        score.iter_mut().zip(&p.0).for_each(|(s, &v)| *s += v);
    }
    Ok(score)
}

/// Index of the highest score; ties go to the lowest index.
pub fn predict(scores: &[f32]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

fn glorot<R: Rng>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape, data).expect("valid shape").into_param()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub weight: Tensor,
    pub bias: Tensor,
    pub bn: BatchNormState,
}

impl ConvBlock {
    fn new<R: Rng>(in_ch: usize, out_ch: usize, rng: &mut R) -> Self {
        let k2 = KERNEL * KERNEL;
        ConvBlock {
            weight: glorot(&[out_ch, in_ch, KERNEL, KERNEL], in_ch * k2, out_ch * k2, rng),
            bias: Tensor::zeros(&[out_ch]).into_param(),
            bn: BatchNormState::new(out_ch),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stream {
    pub blocks: Vec<ConvBlock>,
}

impl Stream {
    fn new<R: Rng>(in_ch: usize, rng: &mut R) -> Self {
        let mut blocks = Vec::with_capacity(STREAM_CHANNELS.len());
        let mut c = in_ch;
        for &out in &STREAM_CHANNELS {
            blocks.push(ConvBlock::new(c, out, rng));
            c = out;
        }
        Stream { blocks }
    }

    pub fn in_channels(&self) -> usize {
        self.blocks[0].weight.shape()[1]
    }

    fn forward(
        &self,
        tape: &mut Tape,
        mut x: Var,
        mode: Mode,
        params: &mut Vec<Var>,
        moments: &mut Vec<BatchMoments>,
    ) -> Result<Var> {
        for block in &self.blocks {
            let w = tape.param(&block.weight);
            let b = tape.param(&block.bias);
            let y = tape.conv2d(x, w, b, 1, KERNEL / 2)?;
            let g = tape.param(&block.bn.gamma);
            let be = tape.param(&block.bn.beta);
            let (y, m) = tape.batchnorm2d(y, g, be, &block.bn.stats, mode)?;
            moments.extend(m);
            let y = tape.relu(y)?;
            x = tape.maxpool2d(y, 2, 2)?;
            params.extend([w, b, g, be]);
        }
        tape.global_avg_pool(x)
    }
}

/// Output of one segment network on a batch.
pub struct SegmentOutput {
    /// `[B, 6]` probabilities.
    pub probs: Var,
    /// Leaves in [`AvNet::params_mut`] order.
    pub params: Vec<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AvNet {
    pub video: Stream,
    pub audio: Stream,
    pub fc_weight: Tensor,
    pub fc_bias: Tensor,
}

impl AvNet {
    pub fn new<R: Rng>(video_channels: usize, rng: &mut R) -> Self {
        let video = Stream::new(video_channels, rng);
        let audio = Stream::new(1, rng);
        let feat = 2 * FEATURE_WIDTH;
        AvNet {
            video,
            audio,
            fc_weight: glorot(&[NUM_CLASSES, feat], feat, NUM_CLASSES, rng),
            fc_bias: Tensor::zeros(&[NUM_CLASSES]).into_param(),
        }
    }

    fn run(&self, tape: &mut Tape, frame: Var, spec: Var, mode: Mode) -> Result<(SegmentOutput, Vec<BatchMoments>)> {
        let fb = tape.value(frame).shape().first().copied();
        let sb = tape.value(spec).shape().first().copied();
        if fb != sb {
            return Err(Error::shape(
                "forward_segment",
                format!("batch dimension: {fb:?} frames but {sb:?} spectrograms"),
            ));
        }
        let mut params = Vec::with_capacity(26);
        let mut moments = Vec::with_capacity(6);
        let v = self.video.forward(tape, frame, mode, &mut params, &mut moments)?;
        let a = self.audio.forward(tape, spec, mode, &mut params, &mut moments)?;
        let fused = tape.concat(&[v, a])?;
        let w = tape.param(&self.fc_weight);
        let b = tape.param(&self.fc_bias);
        let logits = tape.linear(fused, w, b)?;
        let probs = tape.softmax(logits)?;
        params.extend([w, b]);
        Ok((SegmentOutput { probs, params }, moments))
    }

    /// Records the network on `tape`. Training mode normalises with batch
    /// statistics and folds them into the running averages.
    pub fn forward(&mut self, tape: &mut Tape, frame: Var, spec: Var, mode: Mode) -> Result<SegmentOutput> {
        let (out, moments) = self.run(tape, frame, spec, mode)?;
        let mut it = moments.into_iter();
        for bn in self.batchnorms_mut() {
            if let Some(m) = it.next() {
                bn.stats.update(&m);
            }
        }
        Ok(out)
    }

    pub fn forward_eval(&self, tape: &mut Tape, frame: Var, spec: Var) -> Result<SegmentOutput> {
        Ok(self.run(tape, frame, spec, Mode::Eval)?.0)
    }

    /// Eval-mode probabilities for `[B, C, H, W]` frames and `[B, 1, Hs, Ws]`
    /// spectrograms.
    pub fn predict_proba(&self, frames: &Tensor, specs: &Tensor) -> Result<Vec<ProbVector>> {
        let mut tape = Tape::new();
        let f = tape.constant(frames.clone());
        let s = tape.constant(specs.clone());
        let out = self.forward_eval(&mut tape, f, s)?;
        tape.value(out.probs)
            .data()
            .chunks_exact(NUM_CLASSES)
            .map(ProbVector::from_slice)
            .collect()
    }

    fn batchnorms_mut(&mut self) -> impl Iterator<Item = &mut BatchNormState> {
        self.video
            .blocks
            .iter_mut()
            .chain(self.audio.blocks.iter_mut())
            .map(|b| &mut b.bn)
    }

    /// Learnable tensors in a fixed order.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::with_capacity(26);
        for block in self.video.blocks.iter_mut().chain(self.audio.blocks.iter_mut()) {
            out.push(&mut block.weight);
            out.push(&mut block.bias);
            out.push(&mut block.bn.gamma);
            out.push(&mut block.bn.beta);
        }
        out.push(&mut self.fc_weight);
        out.push(&mut self.fc_bias);
        out
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::with_capacity(26);
        for block in self.video.blocks.iter().chain(self.audio.blocks.iter()) {
            out.extend([&block.weight, &block.bias, &block.bn.gamma, &block.bn.beta]);
        }
        out.extend([&self.fc_weight, &self.fc_bias]);
        out
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Tensor::zero_grad);
    }

    pub fn accumulate_grads(&mut self, leaves: &[Var], grads: &Gradients) -> Result<()> {
        let params = self.params_mut();
        if params.len() != leaves.len() {
            return Err(Error::Graph(format!(
                "{} leaves recorded for {} parameters",
                leaves.len(),
                params.len()
            )));
        }
        for (p, &v) in params.into_iter().zip(leaves) {
            grads.accumulate_into(v, p)?;
        }
        Ok(())
    }

    /// All tensors under `prefix`, including running statistics.
    pub fn named_tensors(&self, prefix: &str) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        for (name, stream) in [("video", &self.video), ("audio", &self.audio)] {
            for (i, block) in stream.blocks.iter().enumerate() {
                let l = i + 1;
                let vec_tensor = |v: &[f32]| Tensor::new(&[v.len()], v.to_vec()).expect("non-empty");
                out.push(NamedTensor::new(format!("{prefix}{name}/conv{l}.weight"), block.weight.clone()));
                out.push(NamedTensor::new(format!("{prefix}{name}/conv{l}.bias"), block.bias.clone()));
                out.push(NamedTensor::new(format!("{prefix}{name}/bn{l}.weight"), block.bn.gamma.clone()));
                out.push(NamedTensor::new(format!("{prefix}{name}/bn{l}.bias"), block.bn.beta.clone()));
                out.push(NamedTensor::new(
                    format!("{prefix}{name}/bn{l}.running_mean"),
                    vec_tensor(&block.bn.stats.running_mean),
                ));
                out.push(NamedTensor::new(
                    format!("{prefix}{name}/bn{l}.running_var"),
                    vec_tensor(&block.bn.stats.running_var),
                ));
            }
        }
        out.push(NamedTensor::new(format!("{prefix}fusion/fc.weight"), self.fc_weight.clone()));
        out.push(NamedTensor::new(format!("{prefix}fusion/fc.bias"), self.fc_bias.clone()));
        out
    }

    /// Overwrites every tensor from `table`; names are looked up under `prefix`.
    pub fn load_named(&mut self, prefix: &str, table: &HashMap<String, Tensor>) -> Result<()> {
        let fetch = |name: String, shape: &[usize]| -> Result<Tensor> {
            let t = table
                .get(&name)
                .ok_or_else(|| Error::invalid(format!("checkpoint lacks `{name}`")))?;
            if t.shape() != shape {
                return Err(Error::shape(
                    "load_checkpoint",
                    format!("`{name}` has shape {:?}, expected {shape:?}", t.shape()),
                ));
            }
            Ok(t.clone().into_param())
        };
        for (name, stream) in [("video", &mut self.video), ("audio", &mut self.audio)] {
            for (i, block) in stream.blocks.iter_mut().enumerate() {
                let l = i + 1;
                block.weight = fetch(format!("{prefix}{name}/conv{l}.weight"), block.weight.shape())?;
                block.bias = fetch(format!("{prefix}{name}/conv{l}.bias"), block.bias.shape())?;
                block.bn.gamma = fetch(format!("{prefix}{name}/bn{l}.weight"), block.bn.gamma.shape())?;
                block.bn.beta = fetch(format!("{prefix}{name}/bn{l}.bias"), block.bn.beta.shape())?;
                let ch = [block.bn.channels()];
                block.bn.stats.running_mean = fetch(format!("{prefix}{name}/bn{l}.running_mean"), &ch)?.into_data();
                let var = fetch(format!("{prefix}{name}/bn{l}.running_var"), &ch)?.into_data();
                if var.iter().any(|&v| !(v > 0.0)) {
                    return Err(Error::invalid(format!("{prefix}{name}/bn{l}.running_var must be positive")));
                }
                block.bn.stats.running_var = var;
            }
        }
        self.fc_weight = fetch(format!("{prefix}fusion/fc.weight"), self.fc_weight.shape())?;
        self.fc_bias = fetch(format!("{prefix}fusion/fc.bias"), self.fc_bias.shape())?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sharing {
    /// One network per temporal segment.
    Independent,
    /// A single network applied to every segment.
    Shared,
}

impl std::str::FromStr for Sharing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "independent" => Ok(Sharing::Independent),
            "shared" => Ok(Sharing::Shared),
            other => Err(Error::invalid(format!("unknown sharing mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for Sharing {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Sharing::Independent => "independent",
            Sharing::Shared => "shared",
        })
    }
}

/// The `N`-segment architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub nets: Vec<AvNet>,
    pub segments: usize,
    pub sharing: Sharing,
}

/// Inputs of one temporal segment for a batch of clips.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentBatch {
    /// `[B, C, H, W]`
    pub frames: Tensor,
    /// `[B, 1, Hs, Ws]`
    pub specs: Tensor,
}

/// Net index and the tape leaves of its parameters for one segment.
pub type LeafBinding = (usize, Vec<Var>);

impl Ensemble {
    pub fn new(segments: usize, sharing: Sharing, video_channels: usize, seed: u64) -> Result<Self> {
        if segments == 0 {
            return Err(Error::invalid("segment count must be at least 1"));
        }
        let count = match sharing {
            Sharing::Independent => segments,
            Sharing::Shared => 1,
        };
        let nets = (0..count)
            .map(|k| AvNet::new(video_channels, &mut seed::rng(&[seed, stream::INIT, k as u64])))
            .collect();
        Ok(Ensemble {
            nets,
            segments,
            sharing,
        })
    }

    pub fn net_index(&self, segment: usize) -> usize {
        match self.sharing {
            Sharing::Independent => segment,
            Sharing::Shared => 0,
        }
    }

    fn check_batches(&self, batches: &[SegmentBatch]) -> Result<()> {
        if batches.len() != self.segments {
            return Err(Error::shape(
                "ensemble",
                format!("{} segment batches for {} segments", batches.len(), self.segments),
            ));
        }
        Ok(())
    }

    /// Training-mode pass over all segments. Returns the aggregate
    /// distribution `Σ p_n / N` and, per segment, the net index and leaves.
    pub fn forward_train(&mut self, tape: &mut Tape, batches: &[SegmentBatch]) -> Result<(Var, Vec<LeafBinding>)> {
        self.check_batches(batches)?;
        let mut probs = Vec::with_capacity(self.segments);
        let mut bindings = Vec::with_capacity(self.segments);
        for (n, batch) in batches.iter().enumerate() {
            let idx = self.net_index(n);
            let f = tape.constant(batch.frames.clone());
            let s = tape.constant(batch.specs.clone());
            let out = self.nets[idx].forward(tape, f, s, Mode::Train)?;
            probs.push(out.probs);
            bindings.push((idx, out.params));
        }
        let total = tape.sum(&probs)?;
        let mean = tape.scale(total, 1.0 / self.segments as f32)?;
        Ok((mean, bindings))
    }

    /// Eval-mode probabilities, indexed `[segment][clip]`.
    pub fn predict_segments(&self, batches: &[SegmentBatch]) -> Result<Vec<Vec<ProbVector>>> {
        self.check_batches(batches)?;
        batches
            .iter()
            .enumerate()
            .map(|(n, b)| self.nets[self.net_index(n)].predict_proba(&b.frames, &b.specs))
            .collect()
    }

    /// Clip scores, one aggregated vector per clip.
    pub fn scores(&self, batches: &[SegmentBatch]) -> Result<Vec<[f32; NUM_CLASSES]>> {
        let per_segment = self.predict_segments(batches)?;
        let clips = per_segment[0].len();
        (0..clips)
            .map(|c| {
                let probs: Vec<ProbVector> = per_segment.iter().map(|s| s[c]).collect();
                aggregate(&probs)
            })
            .collect()
    }

    pub fn zero_grad(&mut self) {
        self.nets.iter_mut().for_each(AvNet::zero_grad);
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.nets.iter_mut().flat_map(AvNet::params_mut).collect()
    }

    pub fn named_tensors(&self) -> Vec<NamedTensor> {
        self.nets
            .iter()
            .enumerate()
            .flat_map(|(k, n)| n.named_tensors(&format!("seg{k}/")))
            .collect()
    }

    /// Rebuilds an ensemble from checkpoint entries; a single stored
    /// network with `segments > 1` is read as shared.
    pub fn from_named(entries: &[NamedTensor], segments: usize) -> Result<Self> {
        let table: HashMap<String, Tensor> = entries
            .iter()
            .map(|e| (e.name.clone(), e.tensor.clone()))
            .collect();
        let mut count = 0;
        while table.contains_key(&format!("seg{count}/fusion/fc.weight")) {
            count += 1;
        }
        let sharing = match count {
            0 => return Err(Error::invalid("checkpoint holds no segment networks")),
            1 if segments > 1 => Sharing::Shared,
            c if c == segments => Sharing::Independent,
            c => {
                return Err(Error::invalid(format!(
                    "checkpoint holds {c} segment networks but {segments} segments were requested"
                )))
            }
        };
        let channels = table
            .get("seg0/video/conv1.weight")
            .map(|t| t.shape()[1])
            .ok_or_else(|| Error::invalid("checkpoint lacks `seg0/video/conv1.weight`"))?;
        let mut ens = Ensemble::new(segments, sharing, channels, 0)?;
        for (k, net) in ens.nets.iter_mut().enumerate() {
            net.load_named(&format!("seg{k}/"), &table)?;
        }
        Ok(ens)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
    }

    fn net(seed: u64) -> AvNet {
        AvNet::new(1, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn rows_are_distributions() {
        let n = net(1);
        let p = n.predict_proba(&random(&[3, 1, 16, 16], 2), &random(&[3, 1, 12, 16], 3)).unwrap();
        assert_eq!(p.len(), 3);
        for v in p {
            assert!((v.0.iter().map(|&x| x as f64).sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_head_is_uniform() {
        let mut n = net(1);
        n.fc_weight = Tensor::zeros(&[6, 64]).into_param();
        n.fc_bias = Tensor::zeros(&[6]).into_param();
        let p = n.predict_proba(&random(&[2, 1, 8, 8], 2), &random(&[2, 1, 8, 8], 3)).unwrap();
        for v in p {
            assert!(v.0.iter().all(|&x| x == 1.0 / 6.0));
        }
    }

    #[test]
    fn eval_mode_is_batch_equivariant() {
        let n = net(4);
        let f = random(&[3, 1, 8, 8], 5);
        let s = random(&[3, 1, 8, 8], 6);
        let p = n.predict_proba(&f, &s).unwrap();
        let perm = [2usize, 0, 1];
        let pick = |t: &Tensor| {
            let per = t.len() / 3;
            let data = perm.iter().flat_map(|&i| t.data()[i * per..(i + 1) * per].to_vec()).collect();
            Tensor::new(t.shape(), data).unwrap()
        };
        let q = n.predict_proba(&pick(&f), &pick(&s)).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(q[k], p[i]);
        }
    }

    #[test]
    fn batch_mismatch_is_rejected() {
        let n = net(1);
        assert!(n.predict_proba(&random(&[2, 1, 8, 8], 2), &random(&[3, 1, 8, 8], 3)).is_err());
    }

    #[test]
    fn aggregate_and_predict() {
        // dyadic values, so the tie below is exact
        let a = ProbVector::new([0.5, 0.25, 0.125, 0.0625, 0.03125, 0.03125]).unwrap();
        let b = ProbVector::new([0.25, 0.5, 0.0625, 0.0625, 0.0625, 0.0625]).unwrap();
        let s = aggregate(&[a, b]).unwrap();
        assert_eq!(s, [0.75, 0.75, 0.1875, 0.125, 0.09375, 0.09375]);
        assert_eq!(predict(&s), 0);
        assert_eq!(aggregate(&[a]).unwrap(), a.0);
        assert!(aggregate(&[]).is_err());
        assert_eq!(predict(&[0.0, 0.0, 0.0, 1.0, 0.0, 0.0]), 3);
        let tripled = aggregate(&[b, b, b]).unwrap();
        for (x, y) in tripled.iter().zip(b.0) {
            assert!((x - 3.0 * y).abs() < 1e-6);
        }
        assert!(ProbVector::new([0.5; 6]).is_err());
    }

    #[test]
    fn independent_segments_are_isolated() {
        let mut ens = Ensemble::new(3, Sharing::Independent, 1, 9).unwrap();
        let batches: Vec<SegmentBatch> = (0..3)
            .map(|k| SegmentBatch {
                frames: random(&[2, 1, 8, 8], 10 + k),
                specs: random(&[2, 1, 8, 8], 20 + k),
            })
            .collect();
        let before = ens.predict_segments(&batches).unwrap();
        ens.nets[1].fc_bias.data_mut()[2] += 1.0;
        let after = ens.predict_segments(&batches).unwrap();
        assert_eq!(before[0], after[0]);
        assert_eq!(before[2], after[2]);
        assert_ne!(before[1], after[1]);
    }

    #[test]
    fn checkpoint_names_round_trip() {
        let ens = Ensemble::new(2, Sharing::Independent, 3, 1).unwrap();
        let named = ens.named_tensors();
        assert!(named.iter().any(|n| n.name == "seg1/audio/bn2.running_var"));
        assert!(named.iter().all(|n| n.name.starts_with("seg")));
        let back = Ensemble::from_named(&named, 2).unwrap();
        assert_eq!(back.named_tensors(), named);

        let shared = Ensemble::new(4, Sharing::Shared, 1, 1).unwrap();
        let back = Ensemble::from_named(&shared.named_tensors(), 4).unwrap();
        assert_eq!(back.sharing, Sharing::Shared);
        assert!(Ensemble::from_named(&named, 3).is_err());
    }
}
