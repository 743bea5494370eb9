//! Network definition: volumetric encoder, causal temporal transformer with
//! a global-embedding head, and upsampling decoder with residual skips.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::SpanSample;
use crate::error::{Error, Result};
use crate::forecaster::tape::{Tape, Tensor, VarId};
use crate::geom::SpanLevel;
use crate::voxel::OccupancyGrid;
use nalgebra::Vector3;

/// Training objective selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Dice,
    Bce,
}

/// Ablation switches. The full model keeps every flag at its default.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantFlags {
    /// Restrict the loss to one level instead of the 4-level multi-task mean.
    pub single_task_level: Option<SpanLevel>,
    /// When false, the union token is dropped and the last frame token
    /// serves as the prediction head.
    pub use_global_embedding: bool,
    pub loss: LossKind,
    /// When false, the four span channels of every input frame are zeroed;
    /// only the scene channel remains.
    pub use_history: bool,
}

impl Default for VariantFlags {
    fn default() -> Self {
        VariantFlags {
            single_task_level: None,
            use_global_embedding: true,
            loss: LossKind::Dice,
            use_history: true,
        }
    }
}

/// Architecture hyperparameters. Encoder stage widths exclude the final
/// stage, whose width is `feature_dim`; the stage count must equal
/// log2(resolution) so the bottleneck is spatially 1x1x1.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub encoder_widths: Vec<usize>,
    pub transformer_layers: usize,
    pub heads: usize,
    pub resolution: usize,
    pub t_past: usize,
    pub variant: VariantFlags,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feature_dim: 64,
            encoder_widths: vec![8, 16, 32],
            transformer_layers: 2,
            heads: 4,
            resolution: 16,
            t_past: 2,
            variant: VariantFlags::default(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let stages = self.encoder_widths.len() + 1;
        if 1usize << stages != self.resolution {
            return Err(Error::InvalidConfig(format!(
                "encoder has {stages} stages but resolution {} needs log2(R) = {}",
                self.resolution,
                (self.resolution as f64).log2()
            )));
        }
        if self.feature_dim == 0 || self.feature_dim % self.heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "feature_dim {} must be a positive multiple of heads {}",
                self.feature_dim, self.heads
            )));
        }
        if self.transformer_layers == 0 {
            return Err(Error::InvalidConfig("transformer needs at least one layer".into()));
        }
        if self.t_past == 0 {
            return Err(Error::InvalidConfig("t_past must be at least 1".into()));
        }
        if self.encoder_widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidConfig("encoder widths must be positive".into()));
        }
        Ok(())
    }

    /// Channel widths of every encoder stage output, bottleneck last.
    fn stage_widths(&self) -> Vec<usize> {
        let mut w = self.encoder_widths.clone();
        w.push(self.feature_dim);
        w
    }

    /// Level rows that participate in the loss.
    pub fn loss_levels(&self) -> Vec<usize> {
        match self.variant.single_task_level {
            Some(level) => vec![level.index()],
            None => vec![0, 1, 2, 3],
        }
    }
}

/// Named parameter block.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

struct LayerSlots {
    ln1: (usize, usize),
    q: (usize, usize),
    k: (usize, usize),
    v: (usize, usize),
    o: (usize, usize),
    ln2: (usize, usize),
    f1: (usize, usize),
    f2: (usize, usize),
}

/// Conv stage with optional group normalization after it.
struct ConvBlock {
    w: usize,
    b: usize,
    gn: Option<(usize, usize)>,
}

struct Layout {
    enc: Vec<ConvBlock>,
    dec: Vec<ConvBlock>,
    layers: Vec<LayerSlots>,
    final_ln: (usize, usize),
}

/// Group count for a stage of `c` channels: 4 when it divides, else the
/// largest of 2 or 1 that does.
fn gn_groups(c: usize) -> usize {
    if c % 4 == 0 {
        4
    } else if c % 2 == 0 {
        2
    } else {
        1
    }
}

/// Feed-forward expansion inside each transformer block.
const FFN_EXPAND: usize = 4;
/// Output channels: the four span levels.
const LEVELS_OUT: usize = 4;
/// Input channels per frame: four levels plus scene.
const CHANNELS_IN: usize = 5;

/// The forecasting network: parameters plus the config they were built for.
pub struct Forecaster {
    pub config: ModelConfig,
    pub params: Vec<Param>,
    layout: Layout,
}

impl Forecaster {
    /// Fresh network with seeded uniform init, biases zero.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = Vec::new();

        let widths = config.stage_widths();
        let mut enc = Vec::new();
        let mut cin = CHANNELS_IN;
        for (i, &cout) in widths.iter().enumerate() {
            let w = push_weight(&mut params, &mut rng, format!("enc.stage{i}.w"), vec![cout, cin, 3, 3, 3], cin * 27);
            let b = push_fill(&mut params, format!("enc.stage{i}.b"), vec![cout], 0.0);
            let g = push_fill(&mut params, format!("enc.stage{i}.gn.gamma"), vec![cout], 1.0);
            let bb = push_fill(&mut params, format!("enc.stage{i}.gn.beta"), vec![cout], 0.0);
            enc.push(ConvBlock { w, b, gn: Some((g, bb)) });
            cin = cout;
        }
        let n = widths.len();
        let mut dec = Vec::new();
        for i in 0..n {
            let dcin = widths[n - 1 - i];
            let last = i + 1 == n;
            let dcout = if last { LEVELS_OUT } else { widths[n - 2 - i] };
            let w = push_weight(&mut params, &mut rng, format!("dec.stage{i}.w"), vec![dcout, dcin, 3, 3, 3], dcin * 27);
            let b = push_fill(&mut params, format!("dec.stage{i}.b"), vec![dcout], 0.0);
            if last {
                // Output logits start at -2 so fresh models predict sparse
                // grids (sigmoid ~0.12) instead of half-occupied ones, while
                // keeping enough sigmoid slope to lift true cells quickly.
                params[b].value.data.fill(-2.0);
            }
            // No norm on the output stage: logits go straight to sigmoid.
            let gn = if last {
                None
            } else {
                let g = push_fill(&mut params, format!("dec.stage{i}.gn.gamma"), vec![dcout], 1.0);
                let bb = push_fill(&mut params, format!("dec.stage{i}.gn.beta"), vec![dcout], 0.0);
                Some((g, bb))
            };
            dec.push(ConvBlock { w, b, gn });
        }
        let c = config.feature_dim;
        let mut layers = Vec::new();
        for l in 0..config.transformer_layers {
            let ln1 = (
                push_fill(&mut params, format!("tf.layer{l}.ln1.gamma"), vec![c], 1.0),
                push_fill(&mut params, format!("tf.layer{l}.ln1.beta"), vec![c], 0.0),
            );
            let proj = |params: &mut Vec<Param>, rng: &mut ChaCha8Rng, tag: &str| {
                let w = push_weight(params, rng, format!("tf.layer{l}.{tag}.w"), vec![c, c], c);
                let b = push_fill(params, format!("tf.layer{l}.{tag}.b"), vec![c], 0.0);
                (w, b)
            };
            let q = proj(&mut params, &mut rng, "q");
            let k = proj(&mut params, &mut rng, "k");
            let v = proj(&mut params, &mut rng, "v");
            let o = proj(&mut params, &mut rng, "o");
            let ln2 = (
                push_fill(&mut params, format!("tf.layer{l}.ln2.gamma"), vec![c], 1.0),
                push_fill(&mut params, format!("tf.layer{l}.ln2.beta"), vec![c], 0.0),
            );
            let f1 = (
                push_weight(&mut params, &mut rng, format!("tf.layer{l}.ffn1.w"), vec![c, c * FFN_EXPAND], c),
                push_fill(&mut params, format!("tf.layer{l}.ffn1.b"), vec![c * FFN_EXPAND], 0.0),
            );
            let f2 = (
                push_weight(&mut params, &mut rng, format!("tf.layer{l}.ffn2.w"), vec![c * FFN_EXPAND, c], c * FFN_EXPAND),
                push_fill(&mut params, format!("tf.layer{l}.ffn2.b"), vec![c], 0.0),
            );
            layers.push(LayerSlots { ln1, q, k, v, o, ln2, f1, f2 });
        }
        let final_ln = (
            push_fill(&mut params, "tf.final.gamma".into(), vec![c], 1.0),
            push_fill(&mut params, "tf.final.beta".into(), vec![c], 0.0),
        );
        let layout = Layout { enc, dec, layers, final_ln };
        Ok(Forecaster { config, params, layout })
    }

    /// Rebuild from a parameter list in registration order (checkpoint load).
    pub fn from_params(config: ModelConfig, params: Vec<Param>) -> Result<Self> {
        let fresh = Forecaster::new(config.clone())?;
        if fresh.params.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter blocks, found {}",
                fresh.params.len(),
                params.len()
            )));
        }
        for (a, b) in fresh.params.iter().zip(&params) {
            if a.name != b.name || a.value.shape != b.value.shape {
                return Err(Error::Checkpoint(format!(
                    "parameter mismatch: expected {} {:?}, found {} {:?}",
                    a.name, a.value.shape, b.name, b.value.shape
                )));
            }
        }
        Ok(Forecaster { config, params, layout: fresh.layout })
    }

    /// Round every parameter to f32 precision in place. Checkpoints store
    /// f32, so training snaps to this grid before reporting final metrics;
    /// a reloaded model then reproduces forward passes bit for bit.
    pub fn quantize_f32(&mut self) {
        for p in &mut self.params {
            for v in &mut p.value.data {
                *v = *v as f32 as f64;
            }
        }
    }

    fn put(&self, tape: &mut Tape, slot: usize) -> VarId {
        tape.param(slot, &self.params[slot].value)
    }

    /// Encoder over one 5-channel volume: per stage conv, group norm, SiLU,
    /// then pool. Returns the bottleneck embedding and pre-pool activations.
    fn encode_one(&self, tape: &mut Tape, x: VarId) -> (VarId, Vec<VarId>) {
        let mut skips = Vec::new();
        let mut h = x;
        for block in &self.layout.enc {
            let (wv, bv) = (self.put(tape, block.w), self.put(tape, block.b));
            let mut y = tape.conv3d(h, wv, bv);
            if let Some((g, b)) = block.gn {
                let (gv, bv) = (self.put(tape, g), self.put(tape, b));
                let c = tape.shape(y)[0];
                y = tape.group_norm(y, gv, bv, gn_groups(c));
            }
            let s = tape.silu(y);
            skips.push(s);
            h = tape.avg_pool2(s);
        }
        let c = self.config.feature_dim;
        (tape.reshape(h, vec![c]), skips)
    }

    /// Spec op `encode`: embeds each frame, plus the union-over-frames
    /// global token when the variant keeps it. Returns the token list in
    /// temporal order (global last) and the skip stack that will feed the
    /// decoder: the union encode's skips normally, the last frame's in the
    /// w/o-global ablation.
    pub fn encode(&self, tape: &mut Tape, input: &SampleInput) -> (Vec<VarId>, Vec<VarId>) {
        let mut tokens = Vec::new();
        let mut last_skips = Vec::new();
        for frame in &input.frames {
            let x = tape.constant(frame);
            let (emb, skips) = self.encode_one(tape, x);
            tokens.push(emb);
            last_skips = skips;
        }
        if self.config.variant.use_global_embedding {
            let x = tape.constant(&input.union);
            let (emb, skips) = self.encode_one(tape, x);
            tokens.push(emb);
            (tokens, skips)
        } else {
            (tokens, last_skips)
        }
    }

    /// Spec op `temporal_fuse`: causal transformer over the token sequence;
    /// returns the output at the last position (the prediction head).
    pub fn temporal_fuse(&self, tape: &mut Tape, tokens: &[VarId]) -> VarId {
        let c = self.config.feature_dim;
        let rows = tokens.len();
        let stacked = tape.stack_rows(tokens);
        let pe = tape.constant(&positional_encoding(rows, c));
        let mut h = tape.add(stacked, pe);
        for layer in &self.layout.layers {
            let (g1, b1) = (self.put(tape, layer.ln1.0), self.put(tape, layer.ln1.1));
            let a = tape.layer_norm(h, g1, b1);
            let (qw, qb) = (self.put(tape, layer.q.0), self.put(tape, layer.q.1));
            let (kw, kb) = (self.put(tape, layer.k.0), self.put(tape, layer.k.1));
            let (vw, vb) = (self.put(tape, layer.v.0), self.put(tape, layer.v.1));
            let q = tape.linear(a, qw, qb);
            let k = tape.linear(a, kw, kb);
            let v = tape.linear(a, vw, vb);
            let att = tape.causal_attend(q, k, v, self.config.heads);
            let (ow, ob) = (self.put(tape, layer.o.0), self.put(tape, layer.o.1));
            let proj = tape.linear(att, ow, ob);
            h = tape.add(h, proj);
            let (g2, b2) = (self.put(tape, layer.ln2.0), self.put(tape, layer.ln2.1));
            let ff_in = tape.layer_norm(h, g2, b2);
            let (f1w, f1b) = (self.put(tape, layer.f1.0), self.put(tape, layer.f1.1));
            let (f2w, f2b) = (self.put(tape, layer.f2.0), self.put(tape, layer.f2.1));
            let f = tape.linear(ff_in, f1w, f1b);
            let f = tape.silu(f);
            let f = tape.linear(f, f2w, f2b);
            h = tape.add(h, f);
        }
        let (gf, bf) = (self.put(tape, self.layout.final_ln.0), self.put(tape, self.layout.final_ln.1));
        let out = tape.layer_norm(h, gf, bf);
        tape.select_row(out, rows - 1)
    }

    /// Spec op `decode`: upsample from the head embedding, adding the skip
    /// activation at each scale, ending in 4 sigmoid occupancy planes.
    pub fn decode(&self, tape: &mut Tape, head: VarId, skips: &[VarId]) -> VarId {
        let c = self.config.feature_dim;
        let n = self.layout.dec.len();
        debug_assert_eq!(skips.len(), n);
        let mut h = tape.reshape(head, vec![c, 1, 1, 1]);
        for (i, block) in self.layout.dec.iter().enumerate() {
            h = tape.upsample2(h);
            h = tape.add(h, skips[n - 1 - i]);
            let (wv, bv) = (self.put(tape, block.w), self.put(tape, block.b));
            h = tape.conv3d(h, wv, bv);
            if let Some((g, b)) = block.gn {
                let (gv, bv) = (self.put(tape, g), self.put(tape, b));
                let ch = tape.shape(h)[0];
                h = tape.group_norm(h, gv, bv, gn_groups(ch));
            }
            if i + 1 < n {
                h = tape.silu(h);
            }
        }
        let r = self.config.resolution;
        let s = tape.sigmoid_op(h);
        tape.reshape(s, vec![LEVELS_OUT, r * r * r])
    }

    /// Full forward pass to `[4, R^3]` soft occupancy.
    pub fn forward(&self, tape: &mut Tape, input: &SampleInput) -> VarId {
        let (tokens, skips) = self.encode(tape, input);
        let head = self.temporal_fuse(tape, &tokens);
        self.decode(tape, head, &skips)
    }

    /// Geometry gate shared by predict and train.
    pub fn check_sample(&self, sample: &SpanSample) -> Result<()> {
        if sample.inputs.len() != self.config.t_past {
            return Err(Error::Shape {
                expected: format!("{} input frames", self.config.t_past),
                got: format!("{}", sample.inputs.len()),
            });
        }
        let r = sample.target[0].resolution();
        if r != self.config.resolution {
            return Err(Error::Shape {
                expected: format!("resolution {}", self.config.resolution),
                got: format!("{r}"),
            });
        }
        Ok(())
    }

    /// Deterministic forecast for one sample.
    pub fn predict(&self, sample: &SpanSample) -> Result<Forecast> {
        self.check_sample(sample)?;
        let input = SampleInput::from_sample(sample, self.config.variant.use_history)?;
        let mut tape = Tape::new();
        let pred = self.forward(&mut tape, &input);
        let g = &sample.target[0];
        Forecast::from_soft(
            tape.value(pred).to_vec(),
            g.resolution(),
            g.cube_length(),
            g.origin(),
        )
    }
}

/// Dense network input built from one sample: per-frame 5-channel volumes
/// and their union. Channel order: foveal, central, peripheral, orientation,
/// scene.
pub struct SampleInput {
    pub frames: Vec<Tensor>,
    pub union: Tensor,
}

impl SampleInput {
    pub fn from_sample(sample: &SpanSample, use_history: bool) -> Result<Self> {
        let r = sample.target[0].resolution();
        let vol = r * r * r;
        let mut frames = Vec::with_capacity(sample.inputs.len());
        let mut union = vec![0.0; CHANNELS_IN * vol];
        for span in &sample.inputs {
            let mut data = Vec::with_capacity(CHANNELS_IN * vol);
            for level in SpanLevel::ALL {
                let grid = span.level(level);
                if grid.resolution() != r {
                    return Err(Error::Shape {
                        expected: format!("resolution {r}"),
                        got: format!("{}", grid.resolution()),
                    });
                }
                if use_history {
                    data.extend(grid.to_dense());
                } else {
                    data.extend(std::iter::repeat(0.0).take(vol));
                }
            }
            data.extend(span.scene.to_dense());
            for (u, &v) in union.iter_mut().zip(&data) {
                if v > *u {
                    *u = v;
                }
            }
            frames.push(Tensor::new(vec![CHANNELS_IN, r, r, r], data));
        }
        Ok(SampleInput { frames, union: Tensor::new(vec![CHANNELS_IN, r, r, r], union) })
    }

    /// Dense `[4, R^3]` training target from the sample's future union.
    pub fn target_dense(sample: &SpanSample) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &sample.target {
            out.extend(g.to_dense());
        }
        out
    }
}

fn push_weight(
    params: &mut Vec<Param>,
    rng: &mut ChaCha8Rng,
    name: String,
    shape: Vec<usize>,
    fan_in: usize,
) -> usize {
    // He-style bound for SiLU stacks; plain 1/sqrt(fan) loses a factor
    // ~2.4 of signal per stage over four conv stages.
    let s = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-s..s)).collect();
    params.push(Param { name, value: Tensor::new(shape, data) });
    params.len() - 1
}

fn push_fill(params: &mut Vec<Param>, name: String, shape: Vec<usize>, v: f64) -> usize {
    let n: usize = shape.iter().product();
    params.push(Param { name, value: Tensor::new(shape, vec![v; n]) });
    params.len() - 1
}

/// Sinusoidal positions added to the token matrix before the transformer.
fn positional_encoding(rows: usize, cols: usize) -> Tensor {
    let mut data = vec![0.0; rows * cols];
    for pos in 0..rows {
        for i in 0..cols {
            let pair = (i / 2 * 2) as f64;
            let angle = pos as f64 / 10000f64.powf(pair / cols as f64);
            data[pos * cols + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![rows, cols], data)
}

/// Model output for one sample: soft occupancy per level plus the 0.5
/// binarization on the sample's grid geometry.
#[derive(Debug, Clone)]
pub struct Forecast {
    pub soft: Vec<f64>,
    pub resolution: usize,
    pub binarized: [OccupancyGrid; 4],
}

impl Forecast {
    pub fn from_soft(
        soft: Vec<f64>,
        resolution: usize,
        cube_length: f64,
        origin: Vector3<f64>,
    ) -> Result<Self> {
        let vol = resolution.pow(3);
        if soft.len() != LEVELS_OUT * vol {
            return Err(Error::Shape {
                expected: format!("{} soft values", LEVELS_OUT * vol),
                got: format!("{}", soft.len()),
            });
        }
        let mut grids = Vec::with_capacity(LEVELS_OUT);
        for l in 0..LEVELS_OUT {
            grids.push(OccupancyGrid::from_dense(
                resolution,
                cube_length,
                origin,
                &soft[l * vol..(l + 1) * vol],
                0.5,
            )?);
        }
        let binarized: [OccupancyGrid; 4] = grids.try_into().expect("four levels");
        Ok(Forecast { soft, resolution, binarized })
    }

    /// Soft values of one level, length R^3.
    pub fn level_soft(&self, level: SpanLevel) -> &[f64] {
        let vol = self.resolution.pow(3);
        &self.soft[level.index() * vol..(level.index() + 1) * vol]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            feature_dim: 8,
            encoder_widths: vec![4, 6],
            transformer_layers: 2,
            heads: 2,
            resolution: 8,
            t_past: 2,
            variant: VariantFlags::default(),
            seed: 11,
        }
    }

    fn zero_input(cfg: &ModelConfig) -> SampleInput {
        let r = cfg.resolution;
        let vol = r * r * r;
        let frames = (0..cfg.t_past)
            .map(|_| Tensor::zeros(vec![CHANNELS_IN, r, r, r]))
            .collect();
        SampleInput { frames, union: Tensor::new(vec![CHANNELS_IN, r, r, r], vec![0.0; CHANNELS_IN * vol]) }
    }

    #[test]
    fn config_validation_catches_bad_geometry() {
        let mut cfg = ModelConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.resolution = 8;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::default();
        cfg.feature_dim = 66;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_input_gives_finite_identical_frame_embeddings() {
        let cfg = tiny_config();
        let model = Forecaster::new(cfg.clone()).unwrap();
        let input = zero_input(&cfg);
        let mut tape = Tape::new();
        let (tokens, _) = model.encode(&mut tape, &input);
        assert_eq!(tokens.len(), cfg.t_past + 1);
        let first = tape.value(tokens[0]).to_vec();
        assert!(first.iter().all(|v| v.is_finite()));
        for &t in &tokens[1..] {
            assert_eq!(tape.value(t), &first[..]);
        }
    }

    #[test]
    fn forward_output_is_sigmoid_shaped() {
        let cfg = tiny_config();
        let model = Forecaster::new(cfg.clone()).unwrap();
        let input = zero_input(&cfg);
        let mut tape = Tape::new();
        let pred = model.forward(&mut tape, &input);
        let vol = cfg.resolution.pow(3);
        assert_eq!(tape.shape(pred), &[4, vol]);
        assert!(tape.value(pred).iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn channel_permutation_changes_embedding() {
        let cfg = tiny_config();
        let model = Forecaster::new(cfg.clone()).unwrap();
        let r = cfg.resolution;
        let vol = r * r * r;
        let mut data = vec![0.0; CHANNELS_IN * vol];
        for i in 0..vol / 3 {
            data[i * 2] = 1.0; // foveal channel pattern
        }
        let frame = Tensor::new(vec![CHANNELS_IN, r, r, r], data.clone());
        let mut swapped = vec![0.0; CHANNELS_IN * vol];
        swapped[vol..2 * vol].copy_from_slice(&data[..vol]); // move plane 0 to 1
        let frame_sw = Tensor::new(vec![CHANNELS_IN, r, r, r], swapped);
        let embed = |f: &Tensor| {
            let mut tape = Tape::new();
            let x = tape.constant(f);
            let (e, _) = model.encode_one(&mut tape, x);
            tape.value(e).to_vec()
        };
        assert_ne!(embed(&frame), embed(&frame_sw));
    }

    #[test]
    fn zeroing_skips_changes_decoder_output() {
        let cfg = tiny_config();
        let model = Forecaster::new(cfg.clone()).unwrap();
        let r = cfg.resolution;
        let vol = r * r * r;
        let mut data = vec![0.0; CHANNELS_IN * vol];
        for i in (0..vol).step_by(7) {
            data[4 * vol + i] = 1.0;
        }
        let input = SampleInput {
            frames: vec![Tensor::new(vec![CHANNELS_IN, r, r, r], data.clone()); 2],
            union: Tensor::new(vec![CHANNELS_IN, r, r, r], data),
        };
        let mut tape = Tape::new();
        let (tokens, skips) = model.encode(&mut tape, &input);
        let head = model.temporal_fuse(&mut tape, &tokens);
        let live = model.decode(&mut tape, head, &skips);
        let live_v = tape.value(live).to_vec();
        let zskips: Vec<VarId> = skips
            .iter()
            .map(|&s| {
                let sh = tape.shape(s).to_vec();
                tape.constant(&Tensor::zeros(sh))
            })
            .collect();
        let dead = model.decode(&mut tape, head, &zskips);
        assert_ne!(live_v, tape.value(dead));
    }

    #[test]
    fn single_token_head_depends_only_on_that_token() {
        let mut cfg = tiny_config();
        cfg.t_past = 1;
        cfg.variant.use_global_embedding = false;
        let model = Forecaster::new(cfg.clone()).unwrap();
        let input = zero_input(&cfg);
        let run = || {
            let mut tape = Tape::new();
            let (tokens, _) = model.encode(&mut tape, &input);
            assert_eq!(tokens.len(), 1);
            let head = model.temporal_fuse(&mut tape, &tokens);
            tape.value(head).to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn quantize_f32_is_idempotent() {
        let mut model = Forecaster::new(tiny_config()).unwrap();
        model.quantize_f32();
        let snap: Vec<Vec<f64>> = model.params.iter().map(|p| p.value.data.clone()).collect();
        model.quantize_f32();
        for (p, s) in model.params.iter().zip(&snap) {
            assert_eq!(&p.value.data, s);
        }
    }
}
