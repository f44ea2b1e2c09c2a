//! Layers and composite blocks: convolutions, FTB, AFA, the RGB refinement
//! network and the two-branch polarization compensation network.

use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{kaiming, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{param_err, Result};

/// Square convolution with bias.
#[derive(Clone, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        ci: usize,
        co: usize,
        k: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let w = store.register(format!("{name}.w"), kaiming([co, ci, k, k], ci * k * k, rng))?;
        let b = store.register(format!("{name}.b"), Tensor::zeros([1, co, 1, 1]))?;
        Ok(Conv {
            w,
            b,
            stride,
            pad: k / 2,
        })
    }

    /// Zero-initialised convolution (residual output heads).
    pub fn zeros(store: &mut ParamStore, name: &str, ci: usize, co: usize, k: usize) -> Result<Self> {
        let w = store.register(format!("{name}.w"), Tensor::zeros([co, ci, k, k]))?;
        let b = store.register(format!("{name}.b"), Tensor::zeros([1, co, 1, 1]))?;
        Ok(Conv {
            w,
            b,
            stride: 1,
            pad: k / 2,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.conv2d(x, w, Some(b), self.stride, self.pad)
    }

    pub fn forward_relu(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let y = self.forward(g, store, x)?;
        g.relu(y)
    }
}

/// 2×2 stride-2 transposed convolution with bias.
#[derive(Clone, Debug)]
pub struct ConvT {
    pub w: ParamId,
    pub b: ParamId,
}

impl ConvT {
    pub fn new(store: &mut ParamStore, name: &str, ci: usize, co: usize, rng: &mut impl Rng) -> Result<Self> {
        let w = store.register(format!("{name}.w"), kaiming([ci, co, 2, 2], ci, rng))?;
        let b = store.register(format!("{name}.b"), Tensor::zeros([1, co, 1, 1]))?;
        Ok(ConvT { w, b })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.conv_transpose2(x, w, Some(b))
    }
}

/// Feature transfer block: `x + conv3(relu(conv1(x)))`, identity at init.
#[derive(Clone, Debug)]
pub struct Ftb {
    pub inner: Conv,
    pub outer: Conv,
}

impl Ftb {
    pub fn new(store: &mut ParamStore, name: &str, c: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Ftb {
            inner: Conv::new(store, &format!("{name}.c1"), c, c, 1, 1, rng)?,
            outer: Conv::zeros(store, &format!("{name}.c3"), c, c, 3)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.inner.forward_relu(g, store, x)?;
        let r = self.outer.forward(g, store, h)?;
        g.add(x, r)
    }
}

/// Attention-based feature aggregation for an encoder-to-decoder skip.
#[derive(Clone, Debug)]
pub struct Afa {
    pub squeeze: Conv,
    pub excite: Conv,
}

impl Afa {
    pub fn new(store: &mut ParamStore, name: &str, c: usize, rng: &mut impl Rng) -> Result<Self> {
        let mid = (c / 2).max(2);
        Ok(Afa {
            squeeze: Conv::new(store, &format!("{name}.fc1"), c, mid, 1, 1, rng)?,
            excite: Conv::new(store, &format!("{name}.fc2"), mid, c, 1, 1, rng)?,
        })
    }

    /// Channel weights in `(0, 1)`, shape `[n, c, 1, 1]`.
    pub fn weights(&self, g: &mut Graph, store: &ParamStore, enc: Var) -> Result<Var> {
        let d = g.gap(enc)?;
        let h = self.squeeze.forward_relu(g, store, d)?;
        let z = self.excite.forward(g, store, h)?;
        g.sigmoid(z)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, enc: Var, dec: Var) -> Result<Var> {
        let w = self.weights(g, store, enc)?;
        afa_fuse(g, enc, dec, w)
    }
}

/// `dec + w ⊙ enc` with per-channel weights `w`.
pub fn afa_fuse(g: &mut Graph, enc: Var, dec: Var, w: Var) -> Result<Var> {
    let weighted = g.mul_channels(enc, w)?;
    g.add(dec, weighted)
}

/// Per-pixel softmax blend of two predictions by their confidences.
pub fn confidence_blend(g: &mut Graph, x1: Var, c1: Var, x2: Var, c2: Var) -> Result<Var> {
    g.blend(x1, c1, x2, c2)
}

/// Residual RGB refinement: `G + f(G, S0, S1, S2, M)`.
#[derive(Clone, Debug)]
pub struct Rgbrn {
    pub layers: Vec<Conv>,
    pub head: Conv,
}

pub const RGBRN_INPUTS: usize = 7;

impl Rgbrn {
    pub fn new(store: &mut ParamStore, c: usize, rng: &mut impl Rng) -> Result<Self> {
        let layers = vec![
            Conv::new(store, "rgbrn.c0", RGBRN_INPUTS, c, 3, 1, rng)?,
            Conv::new(store, "rgbrn.c1", c, c, 3, 1, rng)?,
        ];
        let head = Conv::zeros(store, "rgbrn.head", c, 3, 3)?;
        Ok(Rgbrn { layers, head })
    }

    /// `rgb`: `[n,3,h,w]`; `sparse`: `[n,3,h,w]` sparse Stokes; `mask`: `[n,1,h,w]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, rgb: Var, sparse: Var, mask: Var) -> Result<Var> {
        let mut h = g.concat(&[rgb, sparse, mask])?;
        for l in &self.layers {
            h = l.forward_relu(g, store, h)?;
        }
        let r = self.head.forward(g, store, h)?;
        g.add(rgb, r)
    }
}

/// How encoder features reach the decoder and the second branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SkipConfig {
    pub use_ftb: bool,
    pub use_afa: bool,
}

/// One U-shaped encoder-decoder branch.
#[derive(Clone, Debug)]
pub struct Branch {
    enc: Vec<(Conv, Conv)>,
    up: Vec<ConvT>,
    dec: Vec<Conv>,
    afa: Vec<Afa>,
    head: Conv,
}

/// Decoder features per level (finest first) and the raw head output.
pub struct BranchOutput {
    pub head: Var,
    pub decoder: Vec<Var>,
}

impl Branch {
    #[allow(clippy::too_many_arguments)]
    fn new(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        c: usize,
        depth: usize,
        use_afa: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let ch = |l: usize| c << l;
        let mut enc = Vec::with_capacity(depth);
        for l in 0..depth {
            let (ci, stride) = if l == 0 { (inputs, 1) } else { (ch(l - 1), 2) };
            enc.push((
                Conv::new(store, &format!("{name}.enc{l}.a"), ci, ch(l), 3, stride, rng)?,
                Conv::new(store, &format!("{name}.enc{l}.b"), ch(l), ch(l), 3, 1, rng)?,
            ));
        }
        let mut up = Vec::new();
        let mut dec = Vec::new();
        let mut afa = Vec::new();
        for l in 0..depth.saturating_sub(1) {
            up.push(ConvT::new(store, &format!("{name}.up{l}"), ch(l + 1), ch(l), rng)?);
            dec.push(Conv::new(store, &format!("{name}.dec{l}"), ch(l), ch(l), 3, 1, rng)?);
            if use_afa {
                afa.push(Afa::new(store, &format!("{name}.afa{l}"), ch(l), rng)?);
            }
        }
        let head = Conv::zeros(store, &format!("{name}.head"), c, outputs + 1, 3)?;
        Ok(Branch {
            enc,
            up,
            dec,
            afa,
            head,
        })
    }

    /// `inject[l]` is added to the level-`l` encoder features after their
    /// first convolution.
    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, inject: Option<&[Var]>) -> Result<BranchOutput> {
        let depth = self.enc.len();
        let mut feats = Vec::with_capacity(depth);
        let mut h = x;
        for (l, (a, b)) in self.enc.iter().enumerate() {
            h = a.forward_relu(g, store, h)?;
            if let Some(inj) = inject {
                h = g.add(h, inj[l])?;
            }
            h = b.forward_relu(g, store, h)?;
            feats.push(h);
        }
        let mut decoder = vec![h; depth];
        for l in (0..depth - 1).rev() {
            let u = self.up[l].forward(g, store, decoder[l + 1])?;
            let u = g.relu(u)?;
            let fused = match self.afa.get(l) {
                Some(afa) => afa.forward(g, store, feats[l], u)?,
                None => g.add(u, feats[l])?,
            };
            decoder[l] = self.dec[l].forward_relu(g, store, fused)?;
        }
        let head = self.head.forward(g, store, decoder[0])?;
        Ok(BranchOutput { head, decoder })
    }
}

/// Outputs of the compensation network; confidences are single-channel.
#[derive(Clone, Copy, Debug)]
pub struct PcnOutput {
    pub first: Var,
    pub c_first: Var,
    pub second: Var,
    pub c_second: Var,
    pub blended: Var,
}

/// Two-branch polarization compensation network.
///
/// Branch 1 sees the guide, the sparse polarization channels and the mask;
/// branch 2 sees branch 1's prediction with the same sparse data, and
/// receives branch-1 decoder features at every encoder level (through FTBs
/// when enabled, plain addition otherwise). When a dense prior is supplied
/// it is appended to both inputs and both heads predict a residual on it.
#[derive(Clone, Debug)]
pub struct Pcn {
    first: Branch,
    second: Branch,
    ftb: Vec<Ftb>,
    channels: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PcnShape {
    /// Number of polarization channels predicted.
    pub channels: usize,
    /// Channels in the guide image.
    pub guide: usize,
    pub base: usize,
    pub depth: usize,
    pub prior: bool,
}

impl Pcn {
    pub fn new(store: &mut ParamStore, shape: PcnShape, skips: SkipConfig, rng: &mut impl Rng) -> Result<Self> {
        if shape.base < 2 || shape.depth < 1 || shape.channels == 0 {
            return param_err(format!("invalid network shape {shape:?}"));
        }
        let k = shape.channels;
        let extra = if shape.prior { k } else { 0 };
        let first = Branch::new(
            store,
            "pcn.b1",
            shape.guide + k + 1 + extra,
            k,
            shape.base,
            shape.depth,
            skips.use_afa,
            rng,
        )?;
        let second = Branch::new(store, "pcn.b2", 2 * k + 1 + extra, k, shape.base, shape.depth, skips.use_afa, rng)?;
        let mut ftb = Vec::new();
        if skips.use_ftb {
            for l in 0..shape.depth {
                ftb.push(Ftb::new(store, &format!("pcn.ftb{l}"), shape.base << l, rng)?);
            }
        }
        Ok(Pcn {
            first,
            second,
            ftb,
            channels: k,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    fn split(&self, g: &mut Graph, head: Var, prior: Option<Var>) -> Result<(Var, Var)> {
        let k = self.channels;
        let mut v = g.slice_channels(head, 0, k)?;
        if let Some(p) = prior {
            v = g.add(p, v)?;
        }
        let c = g.slice_channels(head, k, 1)?;
        Ok((v, c))
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        guide: Var,
        sparse: Var,
        mask: Var,
        prior: Option<Var>,
    ) -> Result<PcnOutput> {
        let mut in1 = vec![guide, sparse, mask];
        in1.extend(prior);
        let x1 = g.concat(&in1)?;
        let b1 = self.first.forward(g, store, x1, None)?;
        let (first, c_first) = self.split(g, b1.head, prior)?;

        let mut transfer = Vec::with_capacity(b1.decoder.len());
        for (l, &d) in b1.decoder.iter().enumerate() {
            transfer.push(match self.ftb.get(l) {
                Some(f) => f.forward(g, store, d)?,
                None => d,
            });
        }
        let mut in2 = vec![first, sparse, mask];
        in2.extend(prior);
        let x2 = g.concat(&in2)?;
        let b2 = self.second.forward(g, store, x2, Some(&transfer))?;
        let (second, c_second) = self.split(g, b2.head, prior)?;
        let blended = confidence_blend(g, first, c_first, second, c_second)?;
        Ok(PcnOutput {
            first,
            c_first,
            second,
            c_second,
            blended,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{gradcheck, GradCheckOptions};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Replace every parameter (including zero-initialised heads) with
    /// random values so gradients reach every layer.
    fn randomize(store: &mut ParamStore, seed: u64) {
        let mut r = rng(seed);
        for id in store.ids().collect::<Vec<_>>() {
            let shape = store.get(id).shape();
            *store.get_mut(id) = Tensor::uniform(shape, 0.5, &mut r);
        }
    }

    fn assert_grads(inputs: &[Tensor], store: &ParamStore, f: impl Fn(&mut Graph, &ParamStore, &[Var]) -> Result<Var>) {
        let r = gradcheck(inputs, store, f, GradCheckOptions::default()).unwrap();
        assert!(r.max_rel_err < 1e-4, "{r:?}");
    }

    #[test]
    fn ftb_identity_at_init_and_gradcheck() {
        let mut store = ParamStore::new();
        let ftb = Ftb::new(&mut store, "ftb", 4, &mut rng(1)).unwrap();
        let x = Tensor::uniform([2, 4, 8, 8], 1.0, &mut rng(2));
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let y = ftb.forward(&mut g, &store, xv).unwrap();
        assert_eq!(g.value(y), &x);
        randomize(&mut store, 3);
        assert_grads(&[x], &store, |g, s, v| ftb.forward(g, s, v[0]));
    }

    #[test]
    fn afa_weights_extremes_and_gradcheck() {
        let mut store = ParamStore::new();
        let afa = Afa::new(&mut store, "afa", 4, &mut rng(1)).unwrap();
        let enc = Tensor::uniform([2, 4, 8, 8], 1.0, &mut rng(2));
        let dec = Tensor::uniform([2, 4, 8, 8], 1.0, &mut rng(3));
        for (w, expect) in [(0.0, dec.clone()), (1.0, {
            let mut t = dec.clone();
            t.add_assign(&enc);
            t
        })] {
            let mut g = Graph::new();
            let (e, d) = (g.input(enc.clone()), g.input(dec.clone()));
            let wv = g.input(Tensor::filled([2, 4, 1, 1], w));
            let y = afa_fuse(&mut g, e, d, wv).unwrap();
            assert_eq!(g.value(y), &expect);
        }
        let mut g = Graph::new();
        let e = g.input(enc.clone());
        let w = afa.weights(&mut g, &store, e).unwrap();
        assert!(g.value(w).data().iter().all(|&v| v > 0.0 && v < 1.0));
        assert_grads(&[enc, dec], &store, |g, s, v| afa.forward(g, s, v[0], v[1]));
    }

    #[test]
    fn blend_gradcheck_on_batch() {
        let store = ParamStore::new();
        let ins = [
            Tensor::uniform([2, 4, 8, 8], 1.0, &mut rng(1)),
            Tensor::uniform([2, 1, 8, 8], 3.0, &mut rng(2)),
            Tensor::uniform([2, 4, 8, 8], 1.0, &mut rng(3)),
            Tensor::uniform([2, 1, 8, 8], 3.0, &mut rng(4)),
        ];
        assert_grads(&ins, &store, |g, _, v| confidence_blend(g, v[0], v[1], v[2], v[3]));
    }

    proptest! {
        #[test]
        fn blend_is_convex(vals in proptest::collection::vec((-5.0..5.0f64, -30.0..30.0f64, -5.0..5.0f64, -30.0..30.0f64), 1..20)) {
            let n = vals.len();
            let t = |f: fn(&(f64, f64, f64, f64)) -> f64| Tensor::from_vec([1, 1, 1, n], vals.iter().map(f).collect()).unwrap();
            let mut g = Graph::new();
            let (x1, c1, x2, c2) = (g.input(t(|v| v.0)), g.input(t(|v| v.1)), g.input(t(|v| v.2)), g.input(t(|v| v.3)));
            let y = confidence_blend(&mut g, x1, c1, x2, c2).unwrap();
            for (i, v) in vals.iter().enumerate() {
                let out = g.value(y).data()[i];
                prop_assert!(out >= v.0.min(v.2) - 1e-12 && out <= v.0.max(v.2) + 1e-12);
                if v.0 == v.2 {
                    prop_assert_eq!(out, v.0);
                }
            }
        }
    }

    #[test]
    fn rgbrn_identity_at_init() {
        let mut store = ParamStore::new();
        let net = Rgbrn::new(&mut store, 4, &mut rng(1)).unwrap();
        let rgb = Tensor::uniform([1, 3, 8, 8], 1.0, &mut rng(2));
        let mut g = Graph::new();
        let (r, s, m) = (
            g.input(rgb.clone()),
            g.input(Tensor::uniform([1, 3, 8, 8], 1.0, &mut rng(3))),
            g.input(Tensor::filled([1, 1, 8, 8], 1.0)),
        );
        let y = net.forward(&mut g, &store, r, s, m).unwrap();
        assert_eq!(g.value(y), &rgb);
    }

    fn pcn_inputs(n: usize, k: usize, prior: bool) -> Vec<Tensor> {
        let mut v = vec![
            Tensor::uniform([n, 3, 8, 8], 1.0, &mut rng(10)),
            Tensor::uniform([n, k, 8, 8], 1.0, &mut rng(11)),
            Tensor::uniform([n, 1, 8, 8], 1.0, &mut rng(12)).map(|x| if x > 0.0 { 1.0 } else { 0.0 }),
        ];
        if prior {
            v.push(Tensor::uniform([n, k, 8, 8], 1.0, &mut rng(13)));
        }
        v
    }

    #[test]
    fn pcn_full_gradcheck() {
        for (skips, prior) in [
            (SkipConfig { use_ftb: true, use_afa: true }, true),
            (SkipConfig { use_ftb: false, use_afa: false }, false),
        ] {
            let shape = PcnShape {
                channels: 2,
                guide: 3,
                base: 2,
                depth: 3,
                prior,
            };
            let mut store = ParamStore::new();
            let pcn = Pcn::new(&mut store, shape, skips, &mut rng(1)).unwrap();
            randomize(&mut store, 5);
            let ins = pcn_inputs(2, 2, prior);
            let opts = GradCheckOptions {
                max_per_tensor: Some(6),
                ..Default::default()
            };
            let r = gradcheck(
                &ins,
                &store,
                |g, s, v| {
                    let out = pcn.forward(g, s, v[0], v[1], v[2], v.get(3).copied())?;
                    let parts = g.concat(&[out.first, out.c_first, out.second, out.c_second, out.blended])?;
                    Ok(parts)
                },
                opts,
            )
            .unwrap();
            assert!(r.max_rel_err < 1e-4, "{r:?}");
        }
    }

    #[test]
    fn pcn_shapes_and_identity_on_prior() {
        let shape = PcnShape {
            channels: 2,
            guide: 3,
            base: 4,
            depth: 3,
            prior: true,
        };
        let mut store = ParamStore::new();
        let pcn = Pcn::new(&mut store, shape, SkipConfig { use_ftb: true, use_afa: true }, &mut rng(1)).unwrap();
        let ins = pcn_inputs(1, 2, true);
        let mut g = Graph::new();
        let v: Vec<Var> = ins.iter().map(|t| g.input(t.clone())).collect();
        let out = pcn.forward(&mut g, &store, v[0], v[1], v[2], Some(v[3])).unwrap();
        assert_eq!(g.shape(out.blended), [1, 2, 8, 8]);
        assert_eq!(g.shape(out.c_first), [1, 1, 8, 8]);
        assert_eq!(g.value(out.blended), &ins[3]);
    }
}
