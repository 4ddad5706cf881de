use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Uniform;

use super::config::{Ablation, ModelConfig};
use super::layers::{fan_in_uniform, Linear};
use crate::error::{dim_err, Result};
use crate::tensor::{BatchNorm, BatchStats, ParamId, ParamStore, Scalar, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in normalization; running statistics are updated.
    Train,
    Eval,
}

/// Handles into the tape produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    /// `[B, n_classes]`.
    pub logits: Var,
    /// Output of the attention branch of the final block, `[B, T, N, D]`.
    pub local: Var,
}

#[derive(Debug, Clone)]
struct PatchEmbed {
    conv: ParamId,
    bn: BatchNorm,
    pos: ParamId,
}

#[derive(Debug, Clone)]
struct SpikeSla {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
}

#[derive(Debug, Clone)]
struct MambaLayer {
    in_proj: Linear,
    conv_w: ParamId,
    conv_b: ParamId,
    b_proj: Linear,
    c_proj: Linear,
    dt_proj: Linear,
    dt_bias: ParamId,
    a_log: ParamId,
    out_proj: Linear,
}

#[derive(Debug, Clone)]
struct Ffn {
    fc1: Linear,
    fc2: Linear,
}

#[derive(Debug, Clone)]
struct Block {
    sla: SpikeSla,
    mamba: MambaLayer,
    ffn: Ffn,
}

/// The spiking event classifier: patch embedding, a stack of
/// attention/state-space/FFN blocks and a pooled linear head.
#[derive(Debug, Clone)]
pub struct SpikMamba<T> {
    cfg: ModelConfig,
    pub params: ParamStore<T>,
    patch: PatchEmbed,
    blocks: Vec<Block>,
    head: Linear,
}

fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

impl<T: Scalar> SpikMamba<T> {
    /// Builds a randomly initialized model. Parameters of a branch removed
    /// by the ablation setting are created but frozen.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (d, p) = (cfg.d_model, cfg.patch);
        let conv = store.add(
            "patch.conv.weight",
            fan_in_uniform(&mut rng, &[d, 3, 1, p, p], 3 * p * p),
        )?;
        let bn = BatchNorm::new(&mut store, "patch.bn", d)?;
        let pos = store.add(
            "patch.pos_embed",
            Tensor::zeros(&[cfg.frames, cfg.tokens_per_frame(), d]),
        )?;
        let patch = PatchEmbed { conv, bn, pos };

        let mut blocks = Vec::with_capacity(cfg.n_blocks);
        for i in 0..cfg.n_blocks {
            let pre = format!("blocks.{i}");
            let sla = SpikeSla::new(&mut store, &mut rng, &format!("{pre}.sla"), d)?;
            let mamba = MambaLayer::new(&mut store, &mut rng, &format!("{pre}.mamba"), &cfg)?;
            let ffn = Ffn {
                fc1: Linear::new(&mut store, &mut rng, &format!("{pre}.ffn.fc1"), d, cfg.ffn_hidden, true)?,
                fc2: Linear::new(&mut store, &mut rng, &format!("{pre}.ffn.fc2"), cfg.ffn_hidden, d, true)?,
            };
            let frozen: Vec<ParamId> = match cfg.ablation {
                Ablation::SlaOnly => mamba.ids().collect(),
                Ablation::MambaOnly => sla.ids().collect(),
                _ => Vec::new(),
            };
            for id in frozen {
                store.get_mut(id).trainable = false;
            }
            blocks.push(Block { sla, mamba, ffn });
        }
        let head = Linear::new(&mut store, &mut rng, "head", d, cfg.n_classes, true)?;
        Ok(Self {
            cfg,
            params: store,
            patch,
            blocks,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Records a forward pass of `x` (`[B, 3, T, H, W]`) on `tape`. In
    /// train mode the normalization running statistics are updated.
    pub fn forward(&mut self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<ForwardOutput> {
        let (out, stats) = self.run(tape, x, mode == Mode::Train)?;
        if let Some(stats) = stats {
            self.patch.bn.update_running(&mut self.params, &stats);
        }
        Ok(out)
    }

    /// Eval-mode forward that leaves the model untouched.
    pub fn forward_eval(&self, tape: &mut Tape<T>, x: Var) -> Result<ForwardOutput> {
        Ok(self.run(tape, x, false)?.0)
    }

    /// Eval-mode logits `[B, n_classes]` for a batch of event frames.
    pub fn logits(&self, x: &Tensor<f32>) -> Result<Tensor<T>> {
        let mut tape = Tape::inference();
        let xv = tape.constant(x.cast());
        let out = self.forward_eval(&mut tape, xv)?;
        Ok(tape.value(out.logits).clone())
    }

    /// Top-1 class per sample.
    pub fn predict(&self, x: &Tensor<f32>) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(x)?))
    }

    fn spike(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        if self.cfg.ablation == Ablation::AnnMode {
            Ok(tape.silu(x))
        } else {
            tape.lif(x, 1, &self.cfg.lif)
        }
    }

    fn run(&self, tape: &mut Tape<T>, x: Var, train: bool) -> Result<(ForwardOutput, Option<BatchStats<T>>)> {
        let cfg = &self.cfg;
        let want = [3, cfg.frames, cfg.height, cfg.width];
        let shape = tape.shape(x);
        if shape.len() != 5 || shape[1..] != want {
            return Err(dim_err!(
                "model expects input [B, 3, {}, {}, {}], got {shape:?}",
                want[1],
                want[2],
                want[3]
            ));
        }
        let (p, stats) = self.patch_embed(tape, x, train)?;
        let mut p = p;
        let mut local = p;
        for block in &self.blocks {
            (p, local) = self.block(tape, block, p)?;
        }
        let pooled = tape.mean(p, &[1, 2], false)?;
        let logits = self.head.forward(tape, &self.params, pooled)?;
        Ok((ForwardOutput { logits, local }, stats))
    }

    fn patch_embed(&self, tape: &mut Tape<T>, x: Var, train: bool) -> Result<(Var, Option<BatchStats<T>>)> {
        let cfg = &self.cfg;
        let batch = tape.shape(x)[0];
        let w = tape.param(&self.params, self.patch.conv);
        let y = tape.conv3d(x, w, [1, cfg.patch, cfg.patch])?;
        let (y, stats) = self.patch.bn.apply(tape, &self.params, y, train)?;
        let y = tape.permute(y, &[0, 2, 3, 4, 1])?;
        let y = tape.reshape(y, &[batch, cfg.frames, cfg.tokens_per_frame(), cfg.d_model])?;
        let s = self.spike(tape, y)?;
        let pos = tape.param(&self.params, self.patch.pos);
        Ok((tape.add(s, pos)?, stats))
    }

    /// Returns `(block output, attention-branch output)`.
    fn block(&self, tape: &mut Tape<T>, block: &Block, p: Var) -> Result<(Var, Var)> {
        let local = match self.cfg.ablation {
            Ablation::MambaOnly => p,
            _ => self.sla(tape, &block.sla, p)?,
        };
        let global = match self.cfg.ablation {
            Ablation::SlaOnly => local,
            _ => {
                let m = self.mamba(tape, &block.mamba, local)?;
                tape.add(m, local)?
            }
        };
        let h = block.ffn.fc1.forward(tape, &self.params, global)?;
        let h = self.spike(tape, h)?;
        let h = block.ffn.fc2.forward(tape, &self.params, h)?;
        Ok((tape.add(h, global)?, local))
    }

    fn sla(&self, tape: &mut Tape<T>, sla: &SpikeSla, p: Var) -> Result<Var> {
        let w = self.cfg.window;
        let q = sla.q.forward(tape, &self.params, p)?;
        let q = self.spike(tape, q)?;
        let k = sla.k.forward(tape, &self.params, p)?;
        let k = self.spike(tape, k)?;
        let v = sla.v.forward(tape, &self.params, p)?;
        let (q, k, v) = (
            tape.window_reshape(q, w)?,
            tape.window_reshape(k, w)?,
            tape.window_reshape(v, w)?,
        );
        let att = tape.linear_attention(q, k, v)?;
        let att = tape.window_reverse(att, w)?;
        let att = self.spike(tape, att)?;
        let out = sla.out.forward(tape, &self.params, att)?;
        tape.mul(out, p)
    }

    fn mamba(&self, tape: &mut Tape<T>, m: &MambaLayer, p: Var) -> Result<Var> {
        let (b, t, n) = {
            let s = tape.shape(p);
            (s[0], s[1], s[2])
        };
        let di = self.cfg.d_inner;
        let seq = [b, t * n, di];
        let grid = [b, t, n, di];

        let h = m.in_proj.forward(tape, &self.params, p)?;
        let h = self.spike(tape, h)?;
        let h = tape.reshape(h, &seq)?;
        let cw = tape.param(&self.params, m.conv_w);
        let h = tape.conv1d_depthwise(h, cw)?;
        let cb = tape.param(&self.params, m.conv_b);
        let h = tape.add(h, cb)?;
        let h = tape.reshape(h, &grid)?;
        let h = self.spike(tape, h)?;
        let u = tape.reshape(h, &seq)?;

        let bm = m.b_proj.forward(tape, &self.params, u)?;
        let cm = m.c_proj.forward(tape, &self.params, u)?;
        let dt = m.dt_proj.forward(tape, &self.params, u)?;
        let dt_bias = tape.param(&self.params, m.dt_bias);
        let dt = tape.add(dt, dt_bias)?;
        let delta = tape.softplus(dt);
        let a_log = tape.param(&self.params, m.a_log);
        let a = tape.exp(a_log);
        let a = tape.neg(a);

        let y = tape.selective_ssm(u, delta, a, bm, cm)?;
        let y = tape.reshape(y, &grid)?;
        let y = self.spike(tape, y)?;
        let y = m.out_proj.forward(tape, &self.params, y)?;
        tape.mul(y, p)
    }
}

impl SpikeSla {
    fn new<T: Scalar>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, pre: &str, d: usize) -> Result<Self> {
        let mut lin = |name: &str| Linear::new(store, rng, &format!("{pre}.{name}"), d, d, true);
        let (q, k, v, out) = (lin("q")?, lin("k")?, lin("v")?, lin("out")?);
        // `out` gates P multiplicatively; a unit bias starts the gate open
        // while the attention spikes are still silent.
        if let Some(b) = out.bias {
            *store.value_mut(b) = Tensor::ones(&[d]);
        }
        Ok(Self { q, k, v, out })
    }

    fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        [&self.q, &self.k, &self.v, &self.out].into_iter().flat_map(Linear::ids)
    }
}

impl MambaLayer {
    fn new<T: Scalar>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, pre: &str, cfg: &ModelConfig) -> Result<Self> {
        let (d, di, ds, k) = (cfg.d_model, cfg.d_inner, cfg.d_state, cfg.conv_k);
        let in_proj = Linear::new(store, rng, &format!("{pre}.in_proj"), d, di, true)?;
        let conv_w = store.add(&format!("{pre}.conv.weight"), fan_in_uniform(rng, &[di, k], k))?;
        let conv_b = store.add(&format!("{pre}.conv.bias"), fan_in_uniform(rng, &[di], k))?;
        let b_proj = Linear::new(store, rng, &format!("{pre}.b_proj"), di, ds, false)?;
        let c_proj = Linear::new(store, rng, &format!("{pre}.c_proj"), di, ds, false)?;
        let dt_proj = Linear::new(store, rng, &format!("{pre}.dt_proj"), di, di, false)?;
        let log_range = Uniform::new(1e-3f64.ln(), 1e-1f64.ln()).expect("valid range");
        let dt_bias = Tensor::from_fn(&[di], |_| {
            T::from_f64_lossy(inverse_softplus(rng.sample(log_range).exp()))
        });
        let dt_bias = store.add(&format!("{pre}.dt_bias"), dt_bias)?;
        let a_log = Tensor::from_fn(&[di, ds], |i| T::from_f64_lossy(((i % ds + 1) as f64).ln()));
        let a_log = store.add(&format!("{pre}.a_log"), a_log)?;
        let out_proj = Linear::new(store, rng, &format!("{pre}.out_proj"), di, d, true)?;
        Ok(Self {
            in_proj,
            conv_w,
            conv_b,
            b_proj,
            c_proj,
            dt_proj,
            dt_bias,
            a_log,
            out_proj,
        })
    }

    fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.in_proj
            .ids()
            .chain([self.conv_w, self.conv_b])
            .chain(self.b_proj.ids())
            .chain(self.c_proj.ids())
            .chain(self.dt_proj.ids())
            .chain([self.dt_bias, self.a_log])
            .chain(self.out_proj.ids())
    }
}

/// Index of the largest entry of each row of a `[B, C]` tensor; ties go to
/// the lowest index.
pub fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    let c = logits.shape()[logits.rank() - 1];
    logits
        .data()
        .chunks(c)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, row[0]), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}
