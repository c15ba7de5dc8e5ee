use rand::Rng;

use super::params::{vector_shape, ParamId, ParamStore};
use super::time_embedding;
use crate::diffusion::NoisePredictor;
use crate::numerics::{
    concat_channels, conv2d, conv2d_backward, group_norm, group_norm_backward, linear,
    linear_backward, silu, silu_backward, split_channels, upsample_nearest2x,
    upsample_nearest2x_backward, ConvSpec, Element, GroupNormCache, Shape, Tensor,
};
use crate::rng::rng_from;
use crate::{Error, Result};

const BLOCKS_PER_STAGE: usize = 2;
const MID_BLOCKS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UNetConfig {
    pub base_channels: usize,
    pub depth: usize,
    pub time_embed_dim: usize,
    /// `y_t` plus conditioning channels: 3 with topography, 2 without.
    pub in_channels: usize,
    pub groups: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            base_channels: 32,
            depth: 2,
            time_embed_dim: 128,
            in_channels: 3,
            groups: 8,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, reason: String| Err(Error::config_key(key, reason));
        if self.base_channels == 0 {
            return fail("model.base_channels", "must be positive".into());
        }
        if self.depth == 0 {
            return fail("model.depth", "must be at least 1".into());
        }
        if self.time_embed_dim == 0 || !self.time_embed_dim.is_multiple_of(2) {
            return fail("model.time_embed_dim", "must be even and positive".into());
        }
        if !(2..=3).contains(&self.in_channels) {
            return fail(
                "model.in_channels",
                format!("must be 2 or 3, got {}", self.in_channels),
            );
        }
        if self.groups == 0 || !self.base_channels.is_multiple_of(self.groups) {
            return fail(
                "model.groups",
                format!(
                    "{} channels are not divisible into {} groups",
                    self.base_channels, self.groups
                ),
            );
        }
        Ok(())
    }

    /// Input sides must halve cleanly `depth` times.
    pub fn check_input(&self, height: usize, width: usize) -> Result<()> {
        let m = 1usize << self.depth;
        if height == 0 || width == 0 || !height.is_multiple_of(m) || !width.is_multiple_of(m) {
            return Err(Error::Shape {
                op: "unet",
                detail: format!("{height}x{width} input is not divisible by 2^depth = {m}"),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvIds {
    weight: ParamId,
    bias: ParamId,
    spec: ConvSpec,
}

#[derive(Debug, Clone, Copy)]
struct PairIds {
    a: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
struct ResBlock {
    norm: PairIds,
    conv: ConvIds,
    temb: PairIds,
    skip: Option<ConvIds>,
}

#[derive(Debug, Clone)]
struct Stage {
    blocks: Vec<ResBlock>,
    downsample: Option<ConvIds>,
}

#[derive(Debug, Clone)]
struct Layout {
    time: [PairIds; 2],
    input: ConvIds,
    down: Vec<Stage>,
    mid: Vec<ResBlock>,
    up: Vec<Stage>,
    out_norm: PairIds,
    out_conv: ConvIds,
}

struct Builder<'a, F, R> {
    params: &'a mut ParamStore<F>,
    rng: &'a mut R,
}

impl<F: Element, R: Rng> Builder<'_, F, R> {
    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> ConvIds {
        let weight = self.params.add_he(
            format!("{name}.weight"),
            Shape::new(cout, cin, k, k),
            cin * k * k,
            self.rng,
        );
        let bias = self
            .params
            .add_const(format!("{name}.bias"), vector_shape(cout), F::zero());
        ConvIds {
            weight,
            bias,
            spec: ConvSpec {
                stride,
                padding: k / 2,
            },
        }
    }

    fn linear(&mut self, name: &str, fin: usize, fout: usize) -> PairIds {
        let a = self.params.add_normal(
            format!("{name}.weight"),
            Shape::new(fout, fin, 1, 1),
            (1.0 / fin as f64).sqrt(),
            self.rng,
        );
        let b = self
            .params
            .add_const(format!("{name}.bias"), vector_shape(fout), F::zero());
        PairIds { a, b }
    }

    fn norm(&mut self, name: &str, c: usize) -> PairIds {
        let a = self
            .params
            .add_const(format!("{name}.gain"), vector_shape(c), F::one());
        let b = self
            .params
            .add_const(format!("{name}.shift"), vector_shape(c), F::zero());
        PairIds { a, b }
    }

    fn block(&mut self, name: &str, cin: usize, cout: usize, temb: usize) -> ResBlock {
        ResBlock {
            norm: self.norm(&format!("{name}.norm"), cin),
            conv: self.conv(&format!("{name}.conv"), cin, cout, 3, 1),
            temb: self.linear(&format!("{name}.temb"), temb, cout),
            skip: (cin != cout).then(|| self.conv(&format!("{name}.skip"), cin, cout, 1, 1)),
        }
    }
}

/// Conditional noise predictor: concatenates `y_t` with the conditioning
/// stack and maps it through a residual encoder/decoder with skip
/// connections, modulated by a learned embedding of `t`.
#[derive(Debug, Clone)]
pub struct UNet<F> {
    config: UNetConfig,
    params: ParamStore<F>,
    layout: Layout,
}

struct BlockTape<F> {
    input: Tensor<F>,
    cache: GroupNormCache<F>,
    normed: Tensor<F>,
    act: Tensor<F>,
}

/// Activations saved by [`UNet::forward`] for the backward pass.
pub struct UNetTape<F> {
    in_channels: usize,
    embed: Tensor<F>,
    hidden1: Tensor<F>,
    act1: Tensor<F>,
    hidden2: Tensor<F>,
    temb: Tensor<F>,
    x_in: Tensor<F>,
    down: Vec<(Vec<BlockTape<F>>, Tensor<F>)>,
    mid: Vec<BlockTape<F>>,
    up: Vec<Vec<BlockTape<F>>>,
    out_cache: GroupNormCache<F>,
    out_normed: Tensor<F>,
    out_act: Tensor<F>,
}

impl<F: Element> UNet<F> {
    /// Builds the network with He-normal convolutions, `N(0, 1/fan_in)`
    /// linear layers, unit norm gains and a zero output convolution.
    pub fn new(config: UNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::default();
        let mut rng = rng_from(seed, "unet-init");
        let mut b = Builder {
            params: &mut params,
            rng: &mut rng,
        };
        let c = config.base_channels;
        let e = config.time_embed_dim;
        let time = [b.linear("time_embed.0", e, e), b.linear("time_embed.1", e, e)];
        let input = b.conv("input.conv", config.in_channels, c, 3, 1);
        let down = (0..config.depth)
            .map(|i| Stage {
                blocks: (0..BLOCKS_PER_STAGE)
                    .map(|j| b.block(&format!("down.{i}.block.{j}"), c, c, e))
                    .collect(),
                downsample: Some(b.conv(&format!("down.{i}.downsample.conv"), c, c, 3, 2)),
            })
            .collect();
        let mid = (0..MID_BLOCKS)
            .map(|j| b.block(&format!("mid.block.{j}"), c, c, e))
            .collect();
        let up = (0..config.depth)
            .rev()
            .map(|i| Stage {
                blocks: (0..BLOCKS_PER_STAGE)
                    .map(|j| {
                        let cin = if j == 0 { 2 * c } else { c };
                        b.block(&format!("up.{i}.block.{j}"), cin, c, e)
                    })
                    .collect(),
                downsample: None,
            })
            .collect();
        let out_norm = b.norm("out.norm", c);
        let out_conv = b.conv("out.conv", c, 1, 3, 1);
        for id in [out_conv.weight, out_conv.bias] {
            params.get_mut(id).data_mut().fill(F::zero());
        }
        Ok(UNet {
            config,
            params,
            layout: Layout {
                time,
                input,
                down,
                mid,
                up,
                out_norm,
                out_conv,
            },
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }

    /// Same network in another precision.
    pub fn cast<G: Element>(&self) -> UNet<G> {
        UNet {
            config: self.config,
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    fn p(&self, id: ParamId) -> &Tensor<F> {
        self.params.get(id)
    }

    fn conv_fwd(&self, ids: &ConvIds, x: &Tensor<F>) -> Result<Tensor<F>> {
        conv2d(x, self.p(ids.weight), self.p(ids.bias).data(), ids.spec)
    }

    fn conv_bwd(&mut self, ids: &ConvIds, x: &Tensor<F>, d: &Tensor<F>) -> Result<Tensor<F>> {
        let g = conv2d_backward(x, self.p(ids.weight), ids.spec, d)?;
        self.params.accumulate(ids.weight, g.d_weight.data());
        self.params.accumulate(ids.bias, &g.d_bias);
        Ok(g.d_input)
    }

    fn linear_fwd(&self, ids: &PairIds, x: &Tensor<F>) -> Result<Tensor<F>> {
        linear(x, self.p(ids.a), self.p(ids.b).data())
    }

    fn linear_bwd(&mut self, ids: &PairIds, x: &Tensor<F>, d: &Tensor<F>) -> Result<Tensor<F>> {
        let g = linear_backward(x, self.p(ids.a), d)?;
        self.params.accumulate(ids.a, g.d_weight.data());
        self.params.accumulate(ids.b, &g.d_bias);
        Ok(g.d_input)
    }

    fn norm_fwd(&self, ids: &PairIds, x: &Tensor<F>) -> Result<(Tensor<F>, GroupNormCache<F>)> {
        group_norm(
            x,
            self.config.groups,
            self.p(ids.a).data(),
            self.p(ids.b).data(),
        )
    }

    fn norm_bwd(&mut self, ids: &PairIds, cache: &GroupNormCache<F>, d: &Tensor<F>) -> Result<Tensor<F>> {
        let g = group_norm_backward(cache, self.p(ids.a).data(), d)?;
        self.params.accumulate(ids.a, &g.d_gain);
        self.params.accumulate(ids.b, &g.d_shift);
        Ok(g.d_input)
    }

    fn block_fwd(&self, blk: &ResBlock, x: Tensor<F>, temb: &Tensor<F>) -> Result<(Tensor<F>, BlockTape<F>)> {
        let (normed, cache) = self.norm_fwd(&blk.norm, &x)?;
        let act = silu(&normed);
        let mut h = self.conv_fwd(&blk.conv, &act)?;
        let proj = self.linear_fwd(&blk.temb, temb)?;
        let s = h.shape();
        for b in 0..s.batch {
            for c in 0..s.channels {
                let v = proj.data()[b * s.channels + c];
                h.plane_mut(b, c).iter_mut().for_each(|x| *x = *x + v);
            }
        }
        match &blk.skip {
            Some(ids) => h.add_assign(&self.conv_fwd(ids, &x)?)?,
            None => h.add_assign(&x)?,
        }
        Ok((
            h,
            BlockTape {
                input: x,
                cache,
                normed,
                act,
            },
        ))
    }

    /// Returns the input gradient; adds the time-embedding gradient into
    /// `d_temb`.
    fn block_bwd(
        &mut self,
        blk: &ResBlock,
        tape: BlockTape<F>,
        temb: &Tensor<F>,
        d_temb: &mut Tensor<F>,
        d_out: &Tensor<F>,
    ) -> Result<Tensor<F>> {
        let s = d_out.shape();
        let proj_grad: Vec<F> = (0..s.batch * s.channels)
            .map(|i| {
                d_out.data()[i * s.plane()..(i + 1) * s.plane()]
                    .iter()
                    .fold(F::zero(), |a, &v| a + v)
            })
            .collect();
        let proj_grad = Tensor::from_vec(Shape::new(s.batch, s.channels, 1, 1), proj_grad)?;
        d_temb.add_assign(&self.linear_bwd(&blk.temb, temb, &proj_grad)?)?;
        let d_act = self.conv_bwd(&blk.conv, &tape.act, d_out)?;
        let d_normed = silu_backward(&tape.normed, &d_act)?;
        let mut d_x = self.norm_bwd(&blk.norm, &tape.cache, &d_normed)?;
        match &blk.skip {
            Some(ids) => d_x.add_assign(&self.conv_bwd(ids, &tape.input, d_out)?)?,
            None => d_x.add_assign(d_out)?,
        }
        Ok(d_x)
    }

    pub fn forward(&self, y_t: &Tensor<F>, cond: &Tensor<F>, t: &[usize]) -> Result<(Tensor<F>, UNetTape<F>)> {
        let ys = y_t.shape();
        if ys.channels != 1 {
            return Err(Error::Dimension {
                op: "unet",
                axis: "channels",
                expected: 1,
                actual: ys.channels,
            });
        }
        cond.expect_shape(
            "unet",
            ys.with_channels(self.config.in_channels - 1),
        )?;
        if t.len() != ys.batch {
            return Err(Error::Dimension {
                op: "unet",
                axis: "timesteps",
                expected: ys.batch,
                actual: t.len(),
            });
        }
        self.config.check_input(ys.height, ys.width)?;
        let l = self.layout.clone();

        let dim = self.config.time_embed_dim;
        let mut embed = Vec::with_capacity(ys.batch * dim);
        for &step in t {
            embed.extend(time_embedding::<F>(step, dim)?);
        }
        let embed = Tensor::from_vec(Shape::new(ys.batch, dim, 1, 1), embed)?;
        let hidden1 = self.linear_fwd(&l.time[0], &embed)?;
        let act1 = silu(&hidden1);
        let hidden2 = self.linear_fwd(&l.time[1], &act1)?;
        let temb = silu(&hidden2);

        let x_in = concat_channels(&[y_t, cond])?;
        let mut h = self.conv_fwd(&l.input, &x_in)?;
        let mut skips = Vec::with_capacity(l.down.len());
        let mut down = Vec::with_capacity(l.down.len());
        for stage in &l.down {
            let mut tapes = Vec::with_capacity(stage.blocks.len());
            for blk in &stage.blocks {
                let (next, tape) = self.block_fwd(blk, h, &temb)?;
                tapes.push(tape);
                h = next;
            }
            let ds = stage.downsample.as_ref().expect("down stages downsample");
            let pooled = self.conv_fwd(ds, &h)?;
            skips.push(h.clone());
            down.push((tapes, h));
            h = pooled;
        }
        let mut mid = Vec::with_capacity(l.mid.len());
        for blk in &l.mid {
            let (next, tape) = self.block_fwd(blk, h, &temb)?;
            mid.push(tape);
            h = next;
        }
        let mut up = Vec::with_capacity(l.up.len());
        for stage in &l.up {
            let skip = skips.pop().expect("one skip per stage");
            h = concat_channels(&[&upsample_nearest2x(&h), &skip])?;
            let mut tapes = Vec::with_capacity(stage.blocks.len());
            for blk in &stage.blocks {
                let (next, tape) = self.block_fwd(blk, h, &temb)?;
                tapes.push(tape);
                h = next;
            }
            up.push(tapes);
        }
        let (out_normed, out_cache) = self.norm_fwd(&l.out_norm, &h)?;
        let out_act = silu(&out_normed);
        let out = self.conv_fwd(&l.out_conv, &out_act)?;
        Ok((
            out,
            UNetTape {
                in_channels: self.config.in_channels,
                embed,
                hidden1,
                act1,
                hidden2,
                temb,
                x_in,
                down,
                mid,
                up,
                out_cache,
                out_normed,
                out_act,
            },
        ))
    }

    /// Accumulates parameter gradients and returns `dL/d(y_t)`.
    pub fn backward(&mut self, tape: UNetTape<F>, d_out: &Tensor<F>) -> Result<Tensor<F>> {
        let l = self.layout.clone();
        let UNetTape {
            in_channels,
            embed,
            hidden1,
            act1,
            hidden2,
            temb,
            x_in,
            down,
            mid,
            up,
            out_cache,
            out_normed,
            out_act,
        } = tape;
        let mut d_temb = Tensor::zeros(temb.shape());

        let d_act = self.conv_bwd(&l.out_conv, &out_act, d_out)?;
        let d_normed = silu_backward(&out_normed, &d_act)?;
        let mut d_h = self.norm_bwd(&l.out_norm, &out_cache, &d_normed)?;

        let c = self.config.base_channels;
        let mut d_skips = Vec::with_capacity(up.len());
        for (stage, tapes) in l.up.iter().zip(up).rev() {
            for (blk, bt) in stage.blocks.iter().zip(tapes).rev() {
                d_h = self.block_bwd(blk, bt, &temb, &mut d_temb, &d_h)?;
            }
            let mut parts = split_channels(&d_h, &[c, c])?.into_iter();
            let d_up = parts.next().expect("two parts");
            d_skips.push(parts.next().expect("two parts"));
            d_h = upsample_nearest2x_backward(&d_up)?;
        }
        for (blk, bt) in l.mid.iter().zip(mid).rev() {
            d_h = self.block_bwd(blk, bt, &temb, &mut d_temb, &d_h)?;
        }
        for (stage, (tapes, pre_pool)) in l.down.iter().zip(down).rev() {
            let ds = stage.downsample.as_ref().expect("down stages downsample");
            d_h = self.conv_bwd(ds, &pre_pool, &d_h)?;
            d_h.add_assign(&d_skips.pop().expect("one skip per stage"))?;
            for (blk, bt) in stage.blocks.iter().zip(tapes).rev() {
                d_h = self.block_bwd(blk, bt, &temb, &mut d_temb, &d_h)?;
            }
        }
        let d_x_in = self.conv_bwd(&l.input, &x_in, &d_h)?;

        let d_hidden2 = silu_backward(&hidden2, &d_temb)?;
        let d_act1 = self.linear_bwd(&l.time[1], &act1, &d_hidden2)?;
        let d_hidden1 = silu_backward(&hidden1, &d_act1)?;
        self.linear_bwd(&l.time[0], &embed, &d_hidden1)?;

        let mut parts = split_channels(&d_x_in, &[1, in_channels - 1])?;
        Ok(parts.swap_remove(0))
    }
}

impl<F: Element> NoisePredictor<F> for UNet<F> {
    type Tape = UNetTape<F>;

    fn forward(&self, y_t: &Tensor<F>, cond: &Tensor<F>, t: &[usize]) -> Result<(Tensor<F>, UNetTape<F>)> {
        UNet::forward(self, y_t, cond, t)
    }

    fn backward(&mut self, tape: UNetTape<F>, d_out: &Tensor<F>) -> Result<()> {
        UNet::backward(self, tape, d_out).map(drop)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{random_tensor, relative_error};
    use proptest::prelude::*;
    use rand::seq::index::sample;

    fn small() -> UNetConfig {
        UNetConfig {
            base_channels: 8,
            depth: 2,
            time_embed_dim: 16,
            in_channels: 3,
            groups: 4,
        }
    }

    fn randomize_output(net: &mut UNet<f64>, seed: u64) {
        let mut rng = rng_from(seed, "test-out");
        for name in ["out.conv.weight", "out.conv.bias"] {
            let t = net.params_mut().by_name_mut(name).unwrap();
            let r = random_tensor(t.shape(), &mut rng);
            t.data_mut().copy_from_slice(r.data());
        }
    }

    fn inputs(b: usize, c: usize, n: usize, seed: u64) -> (Tensor<f64>, Tensor<f64>) {
        let mut rng = rng_from(seed, "test-in");
        (
            random_tensor(Shape::new(b, 1, n, n), &mut rng),
            random_tensor(Shape::new(b, c - 1, n, n), &mut rng),
        )
    }

    #[test]
    fn default_parameter_count() {
        // time MLP 2*(128*128 + 128) = 33024; input conv 3*9*32 + 32 = 896;
        // 32->32 block = 64 + 9248 + 4128 = 13440; downsample = 9248;
        // 64->32 block = 128 + 18464 + 4128 + 2080 = 24800; out = 64 + 289.
        let want = 33024 + 896 + 2 * (2 * 13440 + 9248) + 2 * 13440 + 2 * (24800 + 13440) + 353;
        let net = UNet::<f32>::new(UNetConfig::default(), 0).unwrap();
        assert_eq!(want, 209_889);
        assert_eq!(net.params().scalar_count(), want);
        let no_topo = UNet::<f32>::new(
            UNetConfig {
                in_channels: 2,
                ..UNetConfig::default()
            },
            0,
        )
        .unwrap();
        assert_eq!(no_topo.params().scalar_count(), want - 9 * 32);
    }

    #[test]
    fn parameter_names_are_stable() {
        let net = UNet::<f32>::new(UNetConfig::default(), 0).unwrap();
        for name in [
            "time_embed.0.weight",
            "input.conv.bias",
            "down.0.block.1.temb.weight",
            "down.1.downsample.conv.weight",
            "mid.block.1.norm.gain",
            "up.0.block.0.skip.weight",
            "out.conv.weight",
        ] {
            assert!(net.params().by_name(name).is_some(), "{name}");
        }
        assert!(net.params().by_name("up.0.block.1.skip.weight").is_none());
        assert_eq!(
            net.params().by_name("up.1.block.0.conv.weight").unwrap().shape(),
            Shape::new(32, 64, 3, 3)
        );
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let mut net = UNet::<f64>::new(small(), 1).unwrap();
        for (_, t) in net.params_mut().iter_mut() {
            t.data_mut().fill(0.0);
        }
        let (y, c) = inputs(2, 3, 16, 2);
        let out = net.predict(&y, &c, &[1, 500]).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fresh_network_predicts_zero() {
        let net = UNet::<f64>::new(small(), 1).unwrap();
        let (y, c) = inputs(1, 3, 16, 2);
        let out = net.predict(&y, &c, &[10]).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_shape_matches_input() {
        let net = UNet::<f32>::new(UNetConfig::default(), 3).unwrap();
        for n in [32, 128] {
            let y = Tensor::zeros(Shape::new(1, 1, n, n));
            let c = Tensor::zeros(Shape::new(1, 2, n, n));
            let out = net.predict(&y, &c, &[7]).unwrap();
            assert_eq!(out.shape(), Shape::new(1, 1, n, n));
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let net = UNet::<f32>::new(small(), 3).unwrap();
        let y = Tensor::zeros(Shape::new(1, 1, 18, 18));
        let c = Tensor::zeros(Shape::new(1, 2, 18, 18));
        assert!(matches!(net.predict(&y, &c, &[1]), Err(Error::Shape { .. })));
        let y = Tensor::zeros(Shape::new(1, 1, 16, 16));
        let c = Tensor::zeros(Shape::new(1, 1, 16, 16));
        assert!(matches!(
            net.predict(&y, &c, &[1]),
            Err(Error::Dimension { axis: "channels", .. })
        ));
        let c = Tensor::zeros(Shape::new(1, 2, 16, 16));
        assert!(matches!(
            net.predict(&y, &c, &[1, 2]),
            Err(Error::Dimension { axis: "timesteps", .. })
        ));
    }

    #[test]
    fn config_errors_name_the_key() {
        let cfg = UNetConfig {
            groups: 5,
            ..UNetConfig::default()
        };
        match UNet::<f32>::new(cfg, 0) {
            Err(Error::ConfigKey { key, .. }) => assert_eq!(key, "model.groups"),
            other => panic!("unexpected {other:?}"),
        }
        let cfg = UNetConfig {
            in_channels: 4,
            ..UNetConfig::default()
        };
        assert!(UNet::<f32>::new(cfg, 0).is_err());
    }

    #[test]
    fn two_channel_ablation_runs() {
        let cfg = UNetConfig {
            in_channels: 2,
            ..small()
        };
        let net = UNet::<f64>::new(cfg, 0).unwrap();
        let (y, c) = inputs(2, 2, 16, 5);
        let out = net.predict(&y, &c, &[3, 4]).unwrap();
        assert_eq!(out.shape(), y.shape());
    }

    /// Loss `<r, net(y)>` with random probe `r`; compares analytic
    /// parameter gradients with central differences.
    fn param_grad_errors(net64: &mut UNet<f64>, probes: usize, seed: u64) -> Vec<(String, f64)> {
        let (y, c) = inputs(2, 3, 16, seed);
        let t = [3usize, 40];
        let mut rng = rng_from(seed, "probe");
        let r = random_tensor(Shape::new(2, 1, 16, 16), &mut rng);
        let loss = |net: &UNet<f64>| -> f64 {
            let out = net.predict(&y, &c, &t).unwrap();
            out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
        };
        let mut analytic_net: UNet<f32> = net64.cast();
        analytic_net.params_mut().zero_grads();
        let (_, tape) = analytic_net
            .forward(&y.cast(), &c.cast(), &t)
            .unwrap();
        analytic_net.backward(tape, &r.cast()).unwrap();

        let names: Vec<String> = net64.params().iter().map(|(n, _)| n.to_string()).collect();
        let picks = sample(&mut rng, names.len(), probes);
        let mut errors = Vec::new();
        let h = 1e-4;
        for p in picks {
            let name = &names[p];
            let len = net64.params().by_name(name).unwrap().len();
            let k = rng.random_range(0..len);
            let analytic = analytic_net.params().by_name(name).unwrap().grad().unwrap()[k] as f64;
            let base = net64.params().by_name(name).unwrap().data()[k];
            net64.params_mut().by_name_mut(name).unwrap().data_mut()[k] = base + h;
            let up = loss(net64);
            net64.params_mut().by_name_mut(name).unwrap().data_mut()[k] = base - h;
            let down = loss(net64);
            net64.params_mut().by_name_mut(name).unwrap().data_mut()[k] = base;
            let numeric = (up - down) / (2.0 * h);
            errors.push((format!("{name}[{k}]"), relative_error(analytic, numeric)));
        }
        errors
    }

    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        let mut net = UNet::<f64>::new(small(), 11).unwrap();
        randomize_output(&mut net, 11);
        let errors = param_grad_errors(&mut net, 20, 4);
        for (name, err) in &errors {
            assert!(*err <= 1e-3, "{name}: relative error {err}");
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut net = UNet::<f64>::new(small(), 12).unwrap();
        randomize_output(&mut net, 12);
        let (y, c) = inputs(1, 3, 16, 8);
        let mut rng = rng_from(8, "probe");
        let r = random_tensor(y.shape(), &mut rng);
        let (_, tape) = net.forward(&y, &c, &[17]).unwrap();
        let dy = net.backward(tape, &r).unwrap();
        let loss = |y: &Tensor<f64>| -> f64 {
            let out = net.predict(y, &c, &[17]).unwrap();
            out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
        };
        for _ in 0..10 {
            let k = rng.random_range(0..y.len());
            let mut yp = y.clone();
            yp.data_mut()[k] += 1e-5;
            let mut ym = y.clone();
            ym.data_mut()[k] -= 1e-5;
            let numeric = (loss(&yp) - loss(&ym)) / 2e-5;
            let err = relative_error(dy.data()[k], numeric);
            assert!(err <= 1e-6, "y[{k}]: {err}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn random_networks_stay_finite(seed in any::<u64>(), t in 1usize..=1000) {
            let mut net = UNet::<f64>::new(small(), seed).unwrap();
            randomize_output(&mut net, seed);
            let (mut y, mut c) = inputs(1, 3, 16, seed ^ 1);
            for v in y.data_mut().iter_mut().chain(c.data_mut()) {
                *v = (*v * 1.5).clamp(-3.0, 3.0);
            }
            let out = net.predict(&y, &c, &[t]).unwrap();
            prop_assert!(out.all_finite());
        }
    }
}
