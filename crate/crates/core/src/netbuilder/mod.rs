//! The encoder-decoder segmentation network.
//!
//! One recipe covers the full-size network, the shallow variant and the
//! small desk-scale variants:
//!
//! * stem: two 3x3 convolutions, `3 -> b -> b`;
//! * encoder level `i = 1..=depth`: a 2x2 stride-2 convolution doubling the
//!   channels, then two 3x3 convolutions at `b * 2^i`;
//! * decoder level `i = depth..=1`: a 2x2 stride-2 transposed convolution
//!   halving the channels, concatenation with the level `i - 1` encoder (or
//!   stem) output, a 3x3 convolution halving the concatenation and one
//!   keeping it;
//! * head: concatenation of the last decoder output with the stem output,
//!   3x3 convolutions `2b -> b -> b -> 1`.
//!
//! Every convolution but the last is followed by optional batch
//! normalisation and a ReLU. The output is one logit channel at input
//! resolution.

mod checkpoint;

use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{relu_backward_inplace, relu_inplace, BatchNorm2d, BnCache, Conv2d, ConvTranspose2x2, Param, Tensor};

pub use checkpoint::{checkpoint_name, load_checkpoint, save_checkpoint, CheckpointMeta};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// Number of resolution halvings.
    pub depth: usize,
    /// Channels produced by the stem.
    pub base_width: usize,
    pub input_side: usize,
    #[serde(default = "yes")]
    pub use_batch_norm: bool,
    #[serde(default)]
    pub batch_norm_affine: bool,
}

fn yes() -> bool {
    true
}

impl NetworkConfig {
    pub fn new(depth: usize, base_width: usize, input_side: usize) -> Self {
        Self {
            depth,
            base_width,
            input_side,
            use_batch_norm: true,
            batch_norm_affine: false,
        }
    }

    /// Full-size network: 512 input, seven halvings, 16-channel stem.
    pub fn crop() -> Self {
        Self::new(7, 16, 512)
    }

    /// Shallow comparison network: four halvings, 64-channel stem.
    pub fn shallow() -> Self {
        Self::new(4, 64, 512)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(Error::Config("depth must be >= 1".into()));
        }
        if self.base_width < 1 {
            return Err(Error::Config("base_width must be >= 1".into()));
        }
        let factor = 1usize
            .checked_shl(self.depth as u32)
            .ok_or_else(|| Error::Config(format!("depth {} too large", self.depth)))?;
        if self.input_side == 0 || self.input_side % factor != 0 {
            return Err(Error::Config(format!(
                "input_side {} is not divisible by 2^{} = {factor}",
                self.input_side, self.depth
            )));
        }
        Ok(())
    }

    /// Channels at encoder level `level` (0 is the stem).
    pub fn channels_at(&self, level: usize) -> usize {
        self.base_width << level
    }

    pub fn bottom_side(&self) -> usize {
        self.input_side >> self.depth
    }

    /// Trainable scalars, from the layer recipe rather than a built network.
    pub fn closed_form_parameter_count(&self) -> usize {
        let b = self.base_width;
        // Every non-final convolution carries one normalisation per output channel.
        let bn = if self.use_batch_norm && self.batch_norm_affine { 2 } else { 0 };
        let stem = (27 * b + b) + (9 * b * b + b) + 2 * bn * b;
        let mut encoder = 0;
        let mut decoder = 0;
        for level in 1..=self.depth {
            let c = self.channels_at(level - 1);
            encoder += 80 * c * c + 6 * c + 3 * bn * 2 * c;
            decoder += 35 * c * c + 3 * c + 3 * bn * c;
        }
        let head = (18 * b * b + b) + (9 * b * b + b) + (9 * b + 1) + 2 * bn * b;
        stem + encoder + decoder + head
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Training,
    Evaluation,
}

/// Where a feature map sits in the network, reported to forward probes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Stem,
    Encoder(usize),
    Decoder(usize),
    Output,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageInfo {
    pub stage: Stage,
    pub channels: usize,
    pub side: usize,
}

#[derive(Clone, Debug)]
enum Op {
    Conv(Conv2d),
    Up(ConvTranspose2x2),
}

#[derive(Clone, Debug)]
struct Block {
    op: Op,
    bn: Option<BatchNorm2d>,
    relu: bool,
}

struct BlockCache {
    input: Rc<Tensor>,
    output: Rc<Tensor>,
    bn: Option<BnCache>,
}

/// Activations recorded by a training forward pass, consumed by `backward`.
pub struct Tape {
    caches: Vec<Option<BlockCache>>,
}

impl Block {
    fn new(op: Op, config: &NetworkConfig, relu: bool) -> Self {
        let out = match &op {
            Op::Conv(c) => c.out_ch,
            Op::Up(u) => u.out_ch,
        };
        let bn = (relu && config.use_batch_norm).then(|| BatchNorm2d::new(out, config.batch_norm_affine));
        Self { op, bn, relu }
    }

    fn forward(&self, input: Rc<Tensor>, batch_stats: bool, tape: Option<&mut Vec<Option<BlockCache>>>) -> Result<Rc<Tensor>> {
        let mut y = match &self.op {
            Op::Conv(c) => c.forward(&input)?,
            Op::Up(u) => u.forward(&input)?,
        };
        let mut bn_cache = None;
        if let Some(bn) = &self.bn {
            if batch_stats {
                bn_cache = Some(bn.forward_train(&mut y));
            } else {
                bn.forward_eval(&mut y);
            }
        }
        if self.relu {
            relu_inplace(&mut y);
        }
        let y = Rc::new(y);
        if let Some(tape) = tape {
            tape.push(Some(BlockCache {
                input,
                output: y.clone(),
                bn: bn_cache,
            }));
        }
        Ok(y)
    }

    fn backward(&mut self, cache: BlockCache, mut dy: Tensor, need_dx: bool) -> Option<Tensor> {
        if self.relu {
            relu_backward_inplace(&cache.output, &mut dy);
        }
        if let (Some(bn), Some(bc)) = (self.bn.as_mut(), cache.bn.as_ref()) {
            bn.backward(bc, &mut dy);
        }
        match &mut self.op {
            Op::Conv(c) => c.backward(&cache.input, &dy, need_dx),
            Op::Up(u) => Some(u.backward(&cache.input, &dy)),
        }
    }

    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        match &mut self.op {
            Op::Conv(c) => {
                out.push(&mut c.weight);
                out.push(&mut c.bias);
            }
            Op::Up(u) => {
                out.push(&mut u.weight);
                out.push(&mut u.bias);
            }
        }
        if let Some(bn) = self.bn.as_mut() {
            if let Some(g) = bn.gamma.as_mut() {
                out.push(g);
            }
            if let Some(b) = bn.beta.as_mut() {
                out.push(b);
            }
        }
    }

    fn parameter_count(&self) -> usize {
        let op = match &self.op {
            Op::Conv(c) => c.parameter_count(),
            Op::Up(u) => u.parameter_count(),
        };
        op + self.bn.as_ref().map_or(0, BatchNorm2d::parameter_count)
    }
}

/// Flat block list; see the index helpers for the layout.
#[derive(Clone, Debug)]
struct Unet {
    depth: usize,
    base: usize,
    blocks: Vec<Block>,
}

impl Unet {
    fn build(config: &NetworkConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = config.base_width;
        let d = config.depth;
        let conv = |rng: &mut ChaCha8Rng, i, o, k, s, p, relu| {
            Block::new(Op::Conv(Conv2d::new(rng, i, o, k, s, p)), config, relu)
        };
        let mut blocks = Vec::with_capacity(6 * d + 5);
        blocks.push(conv(&mut rng, 3, b, 3, 1, 1, true));
        blocks.push(conv(&mut rng, b, b, 3, 1, 1, true));
        for level in 1..=d {
            let (cin, cout) = (config.channels_at(level - 1), config.channels_at(level));
            blocks.push(conv(&mut rng, cin, cout, 2, 2, 0, true));
            blocks.push(conv(&mut rng, cout, cout, 3, 1, 1, true));
            blocks.push(conv(&mut rng, cout, cout, 3, 1, 1, true));
        }
        for level in (1..=d).rev() {
            let (cin, cout) = (config.channels_at(level), config.channels_at(level - 1));
            blocks.push(Block::new(Op::Up(ConvTranspose2x2::new(&mut rng, cin, cout)), config, true));
            blocks.push(conv(&mut rng, 2 * cout, cout, 3, 1, 1, true));
            blocks.push(conv(&mut rng, cout, cout, 3, 1, 1, true));
        }
        blocks.push(conv(&mut rng, 2 * b, b, 3, 1, 1, true));
        blocks.push(conv(&mut rng, b, b, 3, 1, 1, true));
        blocks.push(conv(&mut rng, b, 1, 3, 1, 1, false));
        Self { depth: d, base: b, blocks }
    }

    fn enc(&self, level: usize, k: usize) -> usize {
        2 + 3 * (level - 1) + k
    }

    fn dec(&self, level: usize, k: usize) -> usize {
        2 + 3 * self.depth + 3 * (self.depth - level) + k
    }

    fn head(&self, k: usize) -> usize {
        2 + 6 * self.depth + k
    }

    fn forward(
        &self,
        x: Rc<Tensor>,
        batch_stats: bool,
        mut tape: Option<&mut Vec<Option<BlockCache>>>,
        probe: &mut dyn FnMut(StageInfo),
    ) -> Result<Tensor> {
        let mut run = |idx: usize, input: Rc<Tensor>| self.blocks[idx].forward(input, batch_stats, tape.as_deref_mut());
        let report = |probe: &mut dyn FnMut(StageInfo), stage, t: &Tensor| {
            probe(StageInfo {
                stage,
                channels: t.channels(),
                side: t.height(),
            })
        };

        let s = run(0, x)?;
        let s = run(1, s)?;
        report(probe, Stage::Stem, &s);
        let mut skips = vec![s.clone()];
        let mut cur = s;
        for level in 1..=self.depth {
            cur = run(self.enc(level, 0), cur)?;
            cur = run(self.enc(level, 1), cur)?;
            cur = run(self.enc(level, 2), cur)?;
            report(probe, Stage::Encoder(level), &cur);
            skips.push(cur.clone());
        }
        for level in (1..=self.depth).rev() {
            let up = run(self.dec(level, 0), cur)?;
            let cat = Tensor::concat_channels(&up, &skips[level - 1])?;
            drop(up);
            cur = run(self.dec(level, 1), Rc::new(cat))?;
            cur = run(self.dec(level, 2), cur)?;
            report(probe, Stage::Decoder(level), &cur);
        }
        let cat = Tensor::concat_channels(&cur, &skips[0])?;
        drop(skips);
        let h = run(self.head(0), Rc::new(cat))?;
        let h = run(self.head(1), h)?;
        let out = run(self.head(2), h)?;
        report(probe, Stage::Output, &out);
        drop(run);
        // Keep the tape's reference alive; hand the caller its own copy otherwise.
        Ok(Rc::try_unwrap(out).unwrap_or_else(|rc| (*rc).clone()))
    }

    fn backward(&mut self, mut tape: Tape, dlogits: Tensor) {
        let take = |caches: &mut Vec<Option<BlockCache>>, idx: usize| caches[idx].take().expect("tape entry");
        let d = self.depth;
        let step = |this: &mut Self, tape: &mut Tape, idx: usize, g: Tensor, need_dx: bool| {
            let cache = take(&mut tape.caches, idx);
            this.blocks[idx].backward(cache, g, need_dx)
        };

        let g = step(self, &mut tape, self.head(2), dlogits, true).expect("dx");
        let g = step(self, &mut tape, self.head(1), g, true).expect("dx");
        let g = step(self, &mut tape, self.head(0), g, true).expect("dx");
        let (mut g_cur, g_stem) = g.split_channels(self.base);
        let mut skip_grads: Vec<Option<Tensor>> = (0..=d).map(|_| None).collect();
        skip_grads[0] = Some(g_stem);

        for level in 1..=d {
            let g = step(self, &mut tape, self.dec(level, 2), g_cur, true).expect("dx");
            let g = step(self, &mut tape, self.dec(level, 1), g, true).expect("dx");
            let (g_up, g_skip) = g.split_channels(self.base << (level - 1));
            accumulate(&mut skip_grads[level - 1], g_skip);
            g_cur = step(self, &mut tape, self.dec(level, 0), g_up, true).expect("dx");
        }

        let mut g_enc = g_cur;
        for level in (1..=d).rev() {
            if let Some(extra) = skip_grads[level].take() {
                g_enc.add_assign(&extra);
            }
            let g = step(self, &mut tape, self.enc(level, 2), g_enc, true).expect("dx");
            let g = step(self, &mut tape, self.enc(level, 1), g, true).expect("dx");
            g_enc = step(self, &mut tape, self.enc(level, 0), g, true).expect("dx");
        }
        if let Some(extra) = skip_grads[0].take() {
            g_enc.add_assign(&extra);
        }
        let g = step(self, &mut tape, 1, g_enc, true).expect("dx");
        step(self, &mut tape, 0, g, false);
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::with_capacity(self.blocks.len() * 4);
        for b in &mut self.blocks {
            b.params_mut(&mut out);
        }
        out
    }

    fn batch_norms(&self) -> impl Iterator<Item = &BatchNorm2d> {
        self.blocks.iter().filter_map(|b| b.bn.as_ref())
    }

    fn batch_norms_mut(&mut self) -> impl Iterator<Item = &mut BatchNorm2d> {
        self.blocks.iter_mut().filter_map(|b| b.bn.as_mut())
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(t) => t.add_assign(&g),
        None => *slot = Some(g),
    }
}

/// Built, trainable network.
pub struct NetworkHandle {
    config: NetworkConfig,
    net: Unet,
    mode: Mode,
    forward_batches: AtomicUsize,
    forward_samples: AtomicUsize,
}

impl Clone for NetworkHandle {
    fn clone(&self) -> Self {
        Self {
            config: self.config,
            net: self.net.clone(),
            mode: self.mode,
            forward_batches: AtomicUsize::new(self.forward_batches()),
            forward_samples: AtomicUsize::new(self.forward_samples()),
        }
    }
}

impl std::fmt::Debug for NetworkHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NetworkHandle")
            .field("config", &self.config)
            .field("mode", &self.mode)
            .field("parameters", &self.parameter_count())
            .finish()
    }
}

/// Build a randomly initialised network; equal seeds give equal parameters.
pub fn build_network(config: NetworkConfig, init_seed: u64) -> Result<NetworkHandle> {
    config.validate()?;
    Ok(NetworkHandle {
        config,
        net: Unet::build(&config, init_seed),
        mode: Mode::Evaluation,
        forward_batches: AtomicUsize::new(0),
        forward_samples: AtomicUsize::new(0),
    })
}

pub fn build_crop() -> NetworkHandle {
    build_network(NetworkConfig::crop(), 0).expect("valid recipe")
}

pub fn build_shallow() -> NetworkHandle {
    build_network(NetworkConfig::shallow(), 0).expect("valid recipe")
}

impl NetworkHandle {
    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Number of forward batches evaluated so far.
    pub fn forward_batches(&self) -> usize {
        self.forward_batches.load(Ordering::Relaxed)
    }

    /// Number of images pushed through the network so far.
    pub fn forward_samples(&self) -> usize {
        self.forward_samples.load(Ordering::Relaxed)
    }

    /// Count of trainable scalars in the built network.
    pub fn parameter_count(&self) -> usize {
        self.net.blocks.iter().map(Block::parameter_count).sum()
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        let [n, c, h, w] = batch.shape();
        let s = self.config.input_side;
        if n == 0 || c != 3 || h != s || w != s {
            return Err(Error::Shape(format!(
                "network expects Bx3x{s}x{s} input, got {:?}",
                batch.shape()
            )));
        }
        Ok(())
    }

    /// Logits for a `B x 3 x S x S` batch. Evaluation mode uses running
    /// normalisation statistics; training mode uses the batch's own.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        self.forward_probed(batch, &mut |_| {})
    }

    /// As [`forward`](Self::forward), reporting every stage's shape to `probe`.
    pub fn forward_probed(&self, batch: &Tensor, probe: &mut dyn FnMut(StageInfo)) -> Result<Tensor> {
        self.check_batch(batch)?;
        self.forward_batches.fetch_add(1, Ordering::Relaxed);
        self.forward_samples.fetch_add(batch.batch(), Ordering::Relaxed);
        self.net.forward(Rc::new(batch.clone()), self.mode == Mode::Training, None, probe)
    }

    /// Training forward pass: batch statistics, running statistics updated,
    /// activations recorded for [`backward`](Self::backward).
    pub fn forward_train(&mut self, batch: &Tensor) -> Result<(Tensor, Tape)> {
        self.check_batch(batch)?;
        self.forward_batches.fetch_add(1, Ordering::Relaxed);
        self.forward_samples.fetch_add(batch.batch(), Ordering::Relaxed);
        let mut caches = Vec::with_capacity(self.net.blocks.len());
        let out = self.net.forward(Rc::new(batch.clone()), true, Some(&mut caches), &mut |_| {})?;
        let mut it = caches.iter();
        for block in self.net.blocks.iter_mut() {
            let cache = it.next().and_then(|c| c.as_ref());
            if let (Some(bn), Some(BlockCache { bn: Some(bc), .. })) = (block.bn.as_mut(), cache) {
                bn.update_running(bc);
            }
        }
        Ok((out, Tape { caches }))
    }

    /// Accumulate parameter gradients of a scalar loss with gradient `dlogits`.
    pub fn backward(&mut self, tape: Tape, dlogits: Tensor) -> Result<()> {
        let expect = [dlogits.batch(), 1, self.config.input_side, self.config.input_side];
        if dlogits.shape() != expect {
            return Err(Error::Shape(format!(
                "logit gradient {:?}, expected {expect:?}",
                dlogits.shape()
            )));
        }
        self.net.backward(tape, dlogits);
        Ok(())
    }

    /// Trainable parameters in a fixed order.
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.net.params_mut()
    }

    pub fn zero_grad(&mut self) {
        for p in self.net.params_mut() {
            p.zero_grad();
        }
    }

    /// Flattened parameter values followed by normalisation running statistics.
    pub(crate) fn state_tensors(&mut self) -> Vec<Vec<f32>> {
        let mut out: Vec<Vec<f32>> = self.net.params_mut().into_iter().map(|p| p.value.clone()).collect();
        for bn in self.net.batch_norms() {
            out.push(bn.running_mean.clone());
            out.push(bn.running_var.clone());
        }
        out
    }

    pub(crate) fn load_state_tensors(&mut self, tensors: Vec<Vec<f32>>) -> Result<()> {
        let mut it = tensors.into_iter();
        let mismatch = |what: &str| Error::Checkpoint(format!("state does not match architecture ({what})"));
        for p in self.net.params_mut() {
            let v = it.next().ok_or_else(|| mismatch("missing parameter"))?;
            if v.len() != p.value.len() {
                return Err(mismatch("parameter length"));
            }
            p.value = v;
            p.grad.clear();
        }
        for bn in self.net.batch_norms_mut() {
            let (m, v) = (
                it.next().ok_or_else(|| mismatch("missing running mean"))?,
                it.next().ok_or_else(|| mismatch("missing running variance"))?,
            );
            if m.len() != bn.channels || v.len() != bn.channels {
                return Err(mismatch("running statistics length"));
            }
            bn.running_mean = m;
            bn.running_var = v;
        }
        if it.next().is_some() {
            return Err(mismatch("trailing tensors"));
        }
        Ok(())
    }

    /// Overwrite one parameter tensor (used to hand-set weights in tests and tools).
    pub fn set_param(&mut self, index: usize, values: &[f32]) -> Result<()> {
        let mut params = self.net.params_mut();
        let p = params
            .get_mut(index)
            .ok_or_else(|| Error::Config(format!("no parameter tensor {index}")))?;
        if p.value.len() != values.len() {
            return Err(Error::Shape(format!(
                "parameter {index} has {} values, got {}",
                p.value.len(),
                values.len()
            )));
        }
        p.value.copy_from_slice(values);
        Ok(())
    }

    pub fn param_lengths(&mut self) -> Vec<usize> {
        self.net.params_mut().iter().map(|p| p.len()).collect()
    }
}
