use serde::Serialize;

use super::config::{Ablation, ModelConfig};
use super::layers::linear_params;

/// Trainable parameter count and per-sample forward cost.
///
/// `flops` counts multiply-accumulate pairs of every matrix product and
/// convolution (including the linear-attention products `K^T V`, `Q (K^T V)`
/// and `Q sum(K)`), `L * d_inner * k` for the depthwise convolution and
/// `L * d_inner * d_state` per scan. Elementwise work is not counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CountReport {
    pub params: usize,
    pub flops: usize,
}

impl CountReport {
    pub fn gflops(&self) -> f64 {
        self.flops as f64 / 1e9
    }
}

struct Part {
    params: usize,
    flops: usize,
}

fn patch_embed(cfg: &ModelConfig) -> Part {
    let (d, p, n, t) = (cfg.d_model, cfg.patch, cfg.tokens_per_frame(), cfg.frames);
    let kernel = 3 * p * p;
    Part {
        params: d * kernel + 2 * d + t * n * d,
        flops: t * n * d * kernel,
    }
}

fn sla(cfg: &ModelConfig) -> Part {
    let (d, l, w) = (cfg.d_model, cfg.frames * cfg.tokens_per_frame(), cfg.window);
    let windows = cfg.frames / w;
    let tokens = w * cfg.tokens_per_frame();
    Part {
        params: 4 * linear_params(d, d, true),
        flops: 4 * l * d * d + windows * (2 * tokens * d * d + tokens * d),
    }
}

fn mamba(cfg: &ModelConfig) -> Part {
    let (d, di, ds, k) = (cfg.d_model, cfg.d_inner, cfg.d_state, cfg.conv_k);
    let l = cfg.frames * cfg.tokens_per_frame();
    Part {
        params: linear_params(d, di, true)
            + di * k
            + di
            + 2 * linear_params(di, ds, false)
            + linear_params(di, di, false)
            + di
            + di * ds
            + linear_params(di, d, true),
        flops: l * d * di + l * di * k + 2 * l * di * ds + l * di * di + l * di * ds + l * di * d,
    }
}

fn ffn(cfg: &ModelConfig) -> Part {
    let (d, h) = (cfg.d_model, cfg.ffn_hidden);
    let l = cfg.frames * cfg.tokens_per_frame();
    Part {
        params: linear_params(d, h, true) + linear_params(h, d, true),
        flops: 2 * l * d * h,
    }
}

/// Closed-form counts for `cfg`. Branches removed by the ablation setting
/// contribute neither parameters nor work.
pub fn count_params_flops(cfg: &ModelConfig) -> CountReport {
    let mut block = vec![ffn(cfg)];
    if cfg.ablation != Ablation::MambaOnly {
        block.push(sla(cfg));
    }
    if cfg.ablation != Ablation::SlaOnly {
        block.push(mamba(cfg));
    }
    let head = Part {
        params: linear_params(cfg.d_model, cfg.n_classes, true),
        flops: cfg.d_model * cfg.n_classes,
    };
    let pe = patch_embed(cfg);
    let per_block = block.iter().fold((0, 0), |(p, f), x| (p + x.params, f + x.flops));
    CountReport {
        params: pe.params + cfg.n_blocks * per_block.0 + head.params,
        flops: pe.flops + cfg.n_blocks * per_block.1 + head.flops,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Preset, SpikMamba};

    #[test]
    fn matches_instantiated_model() {
        for preset in [Preset::Tiny, Preset::Desk] {
            for ablation in [
                Ablation::Full,
                Ablation::SlaOnly,
                Ablation::MambaOnly,
                Ablation::AnnMode,
            ] {
                let cfg = ModelConfig {
                    ablation,
                    ..ModelConfig::preset(preset)
                };
                let model = SpikMamba::<f32>::new(cfg.clone(), 0).unwrap();
                assert_eq!(count_params_flops(&cfg).params, model.params.num_trainable_elements());
            }
        }
    }

    #[test]
    fn tiny_hand_ledger() {
        // patch 1536 + 16 + 128, attention 4 * 72, state-space branch
        // 144 + 64 + 16 + 64 + 64 + 256 + 16 + 64 + 136, ffn 144 + 136, head 18
        let r = count_params_flops(&ModelConfig::preset(Preset::Tiny));
        assert_eq!(r.params, 1680 + 288 + 824 + 280 + 18);
        // patch 16 * 8 * 192; attention 4 * 16 * 64 + 2 * (2 * 8 * 64 + 8 * 8);
        // state-space 2048 + 1024 + 2048 + 4096 + 1024 + 2048; ffn 4096; head 16
        assert_eq!(r.flops, 24576 + 4096 + 2176 + 12288 + 4096 + 16);
    }

    #[test]
    fn blocks_add_exact_increments() {
        let one = ModelConfig::preset(Preset::Desk);
        let counts: Vec<_> = (1..=3)
            .map(|n| {
                count_params_flops(&ModelConfig {
                    n_blocks: n,
                    ..one.clone()
                })
            })
            .collect();
        assert_eq!(counts[2].params - counts[1].params, counts[1].params - counts[0].params);
        assert!(counts[1].params > counts[0].params);
    }
}
