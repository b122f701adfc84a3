//! One segmentation stage: conv encoder with skip levels, transformer
//! bottleneck over patch tokens, mirrored decoder with bilinear
//! upsampling, and a 6-channel logit head.

use rand::Rng;

use super::Preset;
use crate::nn::layers::{BatchNorm2d, Conv2d, LayerNorm, TransformerBlock};
use crate::nn::{init, BnStore, NnError, ParamId, ParamStore, Scalar, Session, Var};

struct ConvBnRelu {
    conv: Conv2d,
    bn: BatchNorm2d,
}

impl ConvBnRelu {
    fn new<F: Scalar, R: Rng>(
        params: &mut ParamStore<F>,
        bns: &mut BnStore<F>,
        rng: &mut R,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
    ) -> Self {
        Self {
            conv: Conv2d::new(params, rng, name, in_ch, out_ch, k, stride),
            bn: BatchNorm2d::new(params, bns, &format!("{name}.bn"), out_ch),
        }
    }

    fn forward<F: Scalar>(
        &self,
        params: &ParamStore<F>,
        bns: &mut BnStore<F>,
        sess: &mut Session<F>,
        x: Var,
        train: bool,
    ) -> Result<Var, NnError> {
        let c = self.conv.forward(params, sess, x)?;
        let n = self.bn.forward(params, bns, sess, c, train)?;
        Ok(sess.graph.relu(n))
    }
}

/// Standard bottleneck residual block (1x1 down, 3x3, 1x1 up), with a
/// projection shortcut when shape changes.
struct Bottleneck {
    c1: Conv2d,
    b1: BatchNorm2d,
    c2: Conv2d,
    b2: BatchNorm2d,
    c3: Conv2d,
    b3: BatchNorm2d,
    shortcut: Option<(Conv2d, BatchNorm2d)>,
}

impl Bottleneck {
    fn new<F: Scalar, R: Rng>(
        params: &mut ParamStore<F>,
        bns: &mut BnStore<F>,
        rng: &mut R,
        name: &str,
        in_ch: usize,
        mid_ch: usize,
        out_ch: usize,
        stride: usize,
    ) -> Self {
        let shortcut = (stride != 1 || in_ch != out_ch).then(|| {
            (
                Conv2d::new(params, rng, &format!("{name}.down"), in_ch, out_ch, 1, stride),
                BatchNorm2d::new(params, bns, &format!("{name}.down.bn"), out_ch),
            )
        });
        Self {
            c1: Conv2d::new(params, rng, &format!("{name}.c1"), in_ch, mid_ch, 1, 1),
            b1: BatchNorm2d::new(params, bns, &format!("{name}.b1"), mid_ch),
            c2: Conv2d::new(params, rng, &format!("{name}.c2"), mid_ch, mid_ch, 3, stride),
            b2: BatchNorm2d::new(params, bns, &format!("{name}.b2"), mid_ch),
            c3: Conv2d::new(params, rng, &format!("{name}.c3"), mid_ch, out_ch, 1, 1),
            b3: BatchNorm2d::new(params, bns, &format!("{name}.b3"), out_ch),
            shortcut,
        }
    }

    fn forward<F: Scalar>(
        &self,
        params: &ParamStore<F>,
        bns: &mut BnStore<F>,
        sess: &mut Session<F>,
        x: Var,
        train: bool,
    ) -> Result<Var, NnError> {
        let mut h = self.c1.forward(params, sess, x)?;
        h = self.b1.forward(params, bns, sess, h, train)?;
        h = sess.graph.relu(h);
        h = self.c2.forward(params, sess, h)?;
        h = self.b2.forward(params, bns, sess, h, train)?;
        h = sess.graph.relu(h);
        h = self.c3.forward(params, sess, h)?;
        h = self.b3.forward(params, bns, sess, h, train)?;
        let skip = match &self.shortcut {
            Some((conv, bn)) => {
                let s = conv.forward(params, sess, x)?;
                bn.forward(params, bns, sess, s, train)?
            }
            None => x,
        };
        let sum = sess.graph.add(h, skip)?;
        Ok(sess.graph.relu(sum))
    }
}

struct TokenMixer {
    pos: ParamId,
    blocks: Vec<TransformerBlock>,
    ln: LayerNorm,
    width: usize,
}

impl TokenMixer {
    fn new<F: Scalar, R: Rng>(
        params: &mut ParamStore<F>,
        rng: &mut R,
        name: &str,
        tokens: usize,
        width: usize,
        depth: usize,
        heads: usize,
        mlp_dim: usize,
    ) -> Result<Self, NnError> {
        let pos = params.add(
            format!("{name}.pos"),
            init::normal(&[tokens, width], 0.02, rng),
        );
        let blocks = (0..depth)
            .map(|i| TransformerBlock::new(params, rng, &format!("{name}.blk{i}"), width, heads, mlp_dim))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            pos,
            blocks,
            ln: LayerNorm::new(params, &format!("{name}.ln"), width),
            width,
        })
    }

    /// `[B, D, h, w] -> [B, D, h, w]` through tokenization, learned
    /// position embeddings, and the transformer blocks.
    fn forward<F: Scalar>(
        &self,
        params: &ParamStore<F>,
        sess: &mut Session<F>,
        x: Var,
    ) -> Result<Var, NnError> {
        let (b, d, h, w) = sess.graph.value(x).dims4()?;
        if d != self.width {
            return Err(NnError::ShapeMismatch(format!(
                "token width {d} vs mixer width {}",
                self.width
            )));
        }
        let t = h * w;
        let flat = sess.graph.reshape(x, &[b, d, t])?;
        let mut tokens = sess.graph.transpose_last2(flat)?; // [B, T, D]
        let pos = sess.param(params, self.pos);
        tokens = sess.graph.add_batched(tokens, pos)?;
        for blk in &self.blocks {
            tokens = blk.forward(params, sess, tokens)?;
        }
        tokens = self.ln.forward(params, sess, tokens)?;
        let back = sess.graph.transpose_last2(tokens)?;
        sess.graph.reshape(back, &[b, d, h, w])
    }
}

/// Output handles of one stage forward.
pub struct StageTrace {
    pub logits: Var,
    /// Post-ReLU outputs of the four decoder blocks, shallow to deep
    /// resolution (block 1 at the bottleneck).
    pub decoder_acts: Vec<Var>,
}

enum Net {
    Mini(MiniStage),
    Paper(PaperStage),
}

pub struct StageNet {
    net: Net,
}

impl StageNet {
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Scalar, R: Rng>(
        params: &mut ParamStore<F>,
        bns: &mut BnStore<F>,
        rng: &mut R,
        name: &str,
        preset: Preset,
        in_ch: usize,
        out_ch: usize,
        resolution: usize,
    ) -> Result<Self, NnError> {
        let net = match preset {
            Preset::Mini => Net::Mini(MiniStage::new(
                params, bns, rng, name, in_ch, out_ch, resolution,
            )?),
            Preset::Paper => Net::Paper(PaperStage::new(
                params, bns, rng, name, in_ch, out_ch, resolution,
            )?),
        };
        Ok(Self { net })
    }

    pub fn forward<F: Scalar>(
        &self,
        params: &ParamStore<F>,
        bns: &mut BnStore<F>,
        sess: &mut Session<F>,
        x: Var,
        train: bool,
    ) -> Result<StageTrace, NnError> {
        match &self.net {
            Net::Mini(s) => s.forward(params, bns, sess, x, train),
            Net::Paper(s) => s.forward(params, bns, sess, x, train),
        }
    }
}

/// Desk-scale stage: three stride-2 conv levels (16/32/64), 2
/// transformer blocks of width 64 over the 1/8-resolution tokens, and
/// a mirrored decoder with skip connections.
struct MiniStage {
    enc1: ConvBnRelu,
    enc2: ConvBnRelu,
    enc3: ConvBnRelu,
    mixer: TokenMixer,
    d0: ConvBnRelu,
    d1: ConvBnRelu,
    d2: ConvBnRelu,
    d3: ConvBnRelu,
    head: Conv2d,
}

impl MiniStage {
    const CH: [usize; 3] = [16, 32, 64];
    const WIDTH: usize = 64;
    const DEPTH: usize = 2;
    const HEADS: usize = 4;

    fn new<F: Scalar, R: Rng>(
        params: &mut ParamStore<F>,
        bns: &mut BnStore<F>,
        rng: &mut R,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        resolution: usize,
    ) -> Result<Self, NnError> {
        let [c1, c2, c3] = Self::CH;
        let tokens = (resolution / 8) * (resolution / 8);
        Ok(Self {
            enc1: ConvBnRelu::new(params, bns, rng, &format!("{name}.enc1"), in_ch, c1, 3, 2),
            enc2: ConvBnRelu::new(params, bns, rng, &format!("{name}.enc2"), c1, c2, 3, 2),
            enc3: ConvBnRelu::new(params, bns, rng, &format!("{name}.enc3"), c2, c3, 3, 2),
            mixer: TokenMixer::new(
                params,
                rng,
                &format!("{name}.mixer"),
                tokens,
                Self::WIDTH,
                Self::DEPTH,
                Self::HEADS,
                2 * Self::WIDTH,
            )?,
            d0: ConvBnRelu::new(params, bns, rng, &format!("{name}.d0"), c3 + c3, c3, 3, 1),
            d1: ConvBnRelu::new(params, bns, rng, &format!("{name}.d1"), c3 + c2, c2, 3, 1),
            d2: ConvBnRelu::new(params, bns, rng, &format!("{name}.d2"), c2 + c1, c1, 3, 1),
            d3: ConvBnRelu::new(params, bns, rng, &format!("{name}.d3"), c1, c1, 3, 1),
            head: Conv2d::new(params, rng, &format!("{name}.head"), c1, out_ch, 3, 1),
        })
    }

    fn forward<F: Scalar>(
        &self,
        params: &ParamStore<F>,
        bns: &mut BnStore<F>,
        sess: &mut Session<F>,
        x: Var,
        train: bool,
    ) -> Result<StageTrace, NnError> {
        let s1 = self.enc1.forward(params, bns, sess, x, train)?;
        let s2 = self.enc2.forward(params, bns, sess, s1, train)?;
        let s3 = self.enc3.forward(params, bns, sess, s2, train)?;
        let mixed = self.mixer.forward(params, sess, s3)?;

        let cat0 = sess.graph.concat_channels(&[mixed, s3])?;
        let a0 = self.d0.forward(params, bns, sess, cat0, train)?;

        let up1 = sess.graph.bilinear_up2(a0)?;
        let cat1 = sess.graph.concat_channels(&[up1, s2])?;
        let a1 = self.d1.forward(params, bns, sess, cat1, train)?;

        let up2 = sess.graph.bilinear_up2(a1)?;
        let cat2 = sess.graph.concat_channels(&[up2, s1])?;
        let a2 = self.d2.forward(params, bns, sess, cat2, train)?;

        let up3 = sess.graph.bilinear_up2(a2)?;
        let a3 = self.d3.forward(params, bns, sess, up3, train)?;

        let logits = self.head.forward(params, sess, a3)?;
        Ok(StageTrace {
            logits,
            decoder_acts: vec![a0, a1, a2, a3],
        })
    }
}

/// Paper-scale stage: ResNet-style bottleneck encoder producing 1/4,
/// 1/8 and 1/16 features, 12 transformer blocks of width 768 over the
/// 14x14 tokens (at 224 input), and the five-level decoder.
struct PaperStage {
    stem: ConvBnRelu,
    layer1: Vec<Bottleneck>,
    layer2: Vec<Bottleneck>,
    layer3: Vec<Bottleneck>,
    embed: Conv2d,
    mixer: TokenMixer,
    d0: ConvBnRelu,
    d1: ConvBnRelu,
    d2: ConvBnRelu,
    d3: ConvBnRelu,
    d4: ConvBnRelu,
    head: Conv2d,
}

impl PaperStage {
    const WIDTH: usize = 768;
    const DEPTH: usize = 12;
    const HEADS: usize = 12;

    fn new<F: Scalar, R: Rng>(
        params: &mut ParamStore<F>,
        bns: &mut BnStore<F>,
        rng: &mut R,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        resolution: usize,
    ) -> Result<Self, NnError> {
        let tokens = (resolution / 16) * (resolution / 16);
        let make_layer = |params: &mut ParamStore<F>,
                          bns: &mut BnStore<F>,
                          rng: &mut R,
                          lname: String,
                          depth: usize,
                          in_ch: usize,
                          mid: usize,
                          out: usize|
         -> Vec<Bottleneck> {
            (0..depth)
                .map(|i| {
                    let (ic, stride) = if i == 0 { (in_ch, 2) } else { (out, 1) };
                    Bottleneck::new(params, bns, rng, &format!("{lname}.{i}"), ic, mid, out, stride)
                })
                .collect()
        };
        Ok(Self {
            stem: ConvBnRelu::new(params, bns, rng, &format!("{name}.stem"), in_ch, 64, 7, 2),
            layer1: make_layer(params, bns, rng, format!("{name}.layer1"), 3, 64, 64, 256),
            layer2: make_layer(params, bns, rng, format!("{name}.layer2"), 4, 256, 128, 512),
            layer3: make_layer(params, bns, rng, format!("{name}.layer3"), 6, 512, 256, 1024),
            embed: Conv2d::new(params, rng, &format!("{name}.embed"), 1024, Self::WIDTH, 1, 1),
            mixer: TokenMixer::new(
                params,
                rng,
                &format!("{name}.mixer"),
                tokens,
                Self::WIDTH,
                Self::DEPTH,
                Self::HEADS,
                4 * Self::WIDTH,
            )?,
            d0: ConvBnRelu::new(params, bns, rng, &format!("{name}.d0"), Self::WIDTH, 512, 3, 1),
            d1: ConvBnRelu::new(params, bns, rng, &format!("{name}.d1"), 512 + 512, 256, 3, 1),
            d2: ConvBnRelu::new(params, bns, rng, &format!("{name}.d2"), 256 + 256, 128, 3, 1),
            d3: ConvBnRelu::new(params, bns, rng, &format!("{name}.d3"), 128 + 64, 64, 3, 1),
            d4: ConvBnRelu::new(params, bns, rng, &format!("{name}.d4"), 64, 16, 3, 1),
            head: Conv2d::new(params, rng, &format!("{name}.head"), 16, out_ch, 3, 1),
        })
    }

    fn forward<F: Scalar>(
        &self,
        params: &ParamStore<F>,
        bns: &mut BnStore<F>,
        sess: &mut Session<F>,
        x: Var,
        train: bool,
    ) -> Result<StageTrace, NnError> {
        let s1 = self.stem.forward(params, bns, sess, x, train)?; // 64 @ 1/2
        let mut h = s1;
        for b in &self.layer1 {
            h = b.forward(params, bns, sess, h, train)?;
        }
        let s2 = h; // 256 @ 1/4
        for b in &self.layer2 {
            h = b.forward(params, bns, sess, h, train)?;
        }
        let s3 = h; // 512 @ 1/8
        for b in &self.layer3 {
            h = b.forward(params, bns, sess, h, train)?;
        }
        let emb = self.embed.forward(params, sess, h)?; // 768 @ 1/16
        let mixed = self.mixer.forward(params, sess, emb)?;

        let a0 = self.d0.forward(params, bns, sess, mixed, train)?;
        let up1 = sess.graph.bilinear_up2(a0)?;
        let cat1 = sess.graph.concat_channels(&[up1, s3])?;
        let a1 = self.d1.forward(params, bns, sess, cat1, train)?;
        let up2 = sess.graph.bilinear_up2(a1)?;
        let cat2 = sess.graph.concat_channels(&[up2, s2])?;
        let a2 = self.d2.forward(params, bns, sess, cat2, train)?;
        let up3 = sess.graph.bilinear_up2(a2)?;
        let cat3 = sess.graph.concat_channels(&[up3, s1])?;
        let a3 = self.d3.forward(params, bns, sess, cat3, train)?;
        let up4 = sess.graph.bilinear_up2(a3)?;
        let a4 = self.d4.forward(params, bns, sess, up4, train)?;
        let logits = self.head.forward(params, sess, a4)?;
        Ok(StageTrace {
            logits,
            decoder_acts: vec![a0, a1, a2, a3],
        })
    }
}
