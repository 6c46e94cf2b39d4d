//! Model parameters: seeded initialisation and FTEN1 (de)serialisation.
//!
//! Names follow the module structure, e.g. `stage1.fded.v.dwc`,
//! `stage2.scmc.expert0.a2v.q`, `stage3.scmc.router.mlp_a.w2`,
//! `decoder.query_embed`.

use crate::error::{Error, Result};
use crate::fded::{FdedParams, Modality};
use crate::fixtures::{AnyTensor, TensorFile};
use crate::init::{derive_seed, InitSpec};
use crate::ops::Mlp;
use crate::pipeline::config::ModelConfig;
use crate::scmc::{AttentionProj, ExpertParams, RouterParams, StcParams};
use crate::tensor::RealTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct StageParams {
    /// `[C, 2C]` fusion of the previous visual output with the stage input;
    /// absent on the first stage.
    pub fuse: Option<RealTensor>,
    pub fded_v: FdedParams,
    pub fded_a: FdedParams,
    pub experts: Vec<ExpertParams>,
    pub router: RouterParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    /// `[N_q, C]`
    pub query_embed: RealTensor,
    /// `C → C → C`
    pub query_mlp: Mlp,
    /// Query-to-pixel cross-attention.
    pub attn: AttentionProj,
    /// `[C, C]` per-pixel embedding.
    pub pixel_embed: RealTensor,
    /// `[C, classes]`
    pub class_head: RealTensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub stages: Vec<StageParams>,
    pub decoder: DecoderParams,
}

/// How the router's output layer is initialised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RouterInit {
    #[default]
    Random,
    /// Zero output layer: every frame routes uniformly.
    Uniform,
    /// Zero output weights and a large bias on expert 0.
    OneHot,
}

impl std::str::FromStr for RouterInit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(RouterInit::Random),
            "uniform" => Ok(RouterInit::Uniform),
            "one-hot" | "onehot" => Ok(RouterInit::OneHot),
            _ => Err(Error::Config(format!("unknown router init {s:?}"))),
        }
    }
}

/// Logit margin of the one-hot router; softmax puts `1 - O(e^-40)` on expert 0.
const ONE_HOT_LOGIT: f64 = 40.0;
/// Spread of the random router's output bias.
const ROUTER_BIAS_SCALE: f64 = 2.5;

struct Init {
    seed: u64,
}

impl Init {
    fn uniform(&self, name: &str, shape: Vec<usize>, scale: f64) -> RealTensor {
        InitSpec::uniform(derive_seed(self.seed, name), scale).build(shape)
    }

    /// Identity-like matrix `[.., n, n]` plus uniform noise.
    fn near_identity(&self, name: &str, blocks: usize, n: usize, noise: f64) -> RealTensor {
        let mut t = self.uniform(name, vec![blocks, n, n], noise);
        for b in 0..blocks {
            for i in 0..n {
                t.data_mut()[(b * n + i) * n + i] += 1.0;
            }
        }
        t
    }

    fn mlp(&self, name: &str, input: usize, hidden: usize, output: usize) -> Mlp {
        Mlp {
            w1: self.uniform(&format!("{name}.w1"), vec![input, hidden], 1.0 / (input as f64).sqrt()),
            b1: RealTensor::zeros(vec![hidden]),
            w2: self.uniform(
                &format!("{name}.w2"),
                vec![hidden, output],
                1.0 / (hidden as f64).sqrt(),
            ),
            b2: RealTensor::zeros(vec![output]),
        }
    }

    fn stc(&self, name: &str, cfg: &ModelConfig) -> StcParams {
        let (c, k) = (cfg.channels, cfg.stc_kernel);
        StcParams {
            spatial: self.uniform(&format!("{name}.spatial"), vec![1, k, k], 1.0 / k as f64),
            temporal: self.mlp(&format!("{name}.temporal"), c, c / cfg.reduction, c),
            channel: self.mlp(&format!("{name}.channel"), c, c / cfg.reduction, c),
        }
    }

    fn proj(&self, name: &str, c: usize) -> AttentionProj {
        let s = 1.0 / (c as f64).sqrt();
        AttentionProj {
            q: self.uniform(&format!("{name}.q"), vec![c, c], s),
            k: self.uniform(&format!("{name}.k"), vec![c, c], s),
            v: self.uniform(&format!("{name}.v"), vec![c, c], s),
            out: self.uniform(&format!("{name}.out"), vec![c, c], 0.5 * s),
        }
    }

    fn fded(&self, name: &str, cfg: &ModelConfig) -> FdedParams {
        let c = cfg.channels;
        let cg = c / cfg.groups;
        let mut dwc = self.uniform(&format!("{name}.dwc"), vec![c, 3, 3], 0.1);
        for ch in 0..c {
            dwc.data_mut()[ch * 9 + 4] += 1.0;
        }
        FdedParams {
            dwc,
            group: self.near_identity(&format!("{name}.group"), cfg.groups, cg, 0.1 / (cg as f64).sqrt()),
            conv3d: self.uniform(&format!("{name}.conv3d"), vec![c, 3, 3, 3], 0.05),
            ca: self.mlp(&format!("{name}.ca"), c, c / cfg.reduction, c),
            band_weights: [1.0; 4],
            ladder: cfg.ladder,
            enhance: cfg.enhance,
        }
    }

    fn router(&self, name: &str, cfg: &ModelConfig, kind: RouterInit) -> RouterParams {
        let c = cfg.channels;
        let mut r = RouterParams {
            stc_a: self.stc(&format!("{name}.stc_a"), cfg),
            stc_v: self.stc(&format!("{name}.stc_v"), cfg),
            mlp_a: self.mlp(&format!("{name}.mlp_a"), c, c / 2, cfg.experts),
            mlp_v: self.mlp(&format!("{name}.mlp_v"), c, c / 2, cfg.experts),
        };
        for (side, mlp) in [("mlp_a", &mut r.mlp_a), ("mlp_v", &mut r.mlp_v)] {
            match kind {
                RouterInit::Random => {
                    // Pooled features are close to zero, so without a bias
                    // every row would be near uniform.
                    mlp.w2 = mlp.w2.scale(4.0);
                    mlp.b2 = self.uniform(&format!("{name}.{side}.b2"), vec![cfg.experts], ROUTER_BIAS_SCALE);
                }
                RouterInit::Uniform => {
                    mlp.w2 = RealTensor::zeros(mlp.w2.shape().to_vec());
                }
                RouterInit::OneHot => {
                    mlp.w2 = RealTensor::zeros(mlp.w2.shape().to_vec());
                    mlp.b2.data_mut()[0] = ONE_HOT_LOGIT;
                }
            }
        }
        r
    }
}

impl ModelParams {
    /// Deterministic initialisation from `cfg.seed`.
    pub fn init(cfg: &ModelConfig, router: RouterInit) -> Result<Self> {
        cfg.validate()?;
        let init = Init { seed: cfg.seed };
        let c = cfg.channels;
        let stages = (1..=cfg.stages)
            .map(|i| {
                let p = format!("stage{i}");
                StageParams {
                    fuse: (i > 1)
                        .then(|| init.uniform(&format!("{p}.fuse"), vec![c, 2 * c], 1.0 / (2.0 * c as f64).sqrt())),
                    fded_v: init.fded(&format!("{p}.fded.v"), cfg),
                    fded_a: init.fded(&format!("{p}.fded.a"), cfg),
                    experts: (0..cfg.experts)
                        .map(|e| {
                            let n = format!("{p}.scmc.expert{e}");
                            ExpertParams {
                                stc_q: init.stc(&format!("{n}.stc_q"), cfg),
                                stc_k: init.stc(&format!("{n}.stc_k"), cfg),
                                stc_v: init.stc(&format!("{n}.stc_v"), cfg),
                                a2v: init.proj(&format!("{n}.a2v"), c),
                                v2a: init.proj(&format!("{n}.v2a"), c),
                            }
                        })
                        .collect(),
                    router: init.router(&format!("{p}.scmc.router"), cfg, router),
                }
            })
            .collect();
        let decoder = DecoderParams {
            query_embed: init.uniform("decoder.query_embed", vec![cfg.queries, c], 1.0),
            query_mlp: init.mlp("decoder.query_mlp", c, c, c),
            attn: init.proj("decoder.attn", c),
            pixel_embed: init.uniform("decoder.pixel_embed", vec![c, c], 1.0 / (c as f64).sqrt()),
            class_head: init.uniform("decoder.class_head", vec![c, cfg.classes], 1.0 / (c as f64).sqrt()),
        };
        Ok(Self { stages, decoder })
    }

    pub fn to_ften(&self) -> Result<TensorFile> {
        let mut out = Vec::new();
        for (i, s) in self.stages.iter().enumerate() {
            let p = format!("stage{}", i + 1);
            if let Some(fuse) = &s.fuse {
                out.push((format!("{p}.fuse"), fuse.clone()));
            }
            for (m, f) in [(Modality::Visual, &s.fded_v), (Modality::Audio, &s.fded_a)] {
                put_fded(&mut out, &format!("{p}.fded.{}", m.tag()), f);
            }
            for (e, ex) in s.experts.iter().enumerate() {
                let n = format!("{p}.scmc.expert{e}");
                put_stc(&mut out, &format!("{n}.stc_q"), &ex.stc_q);
                put_stc(&mut out, &format!("{n}.stc_k"), &ex.stc_k);
                put_stc(&mut out, &format!("{n}.stc_v"), &ex.stc_v);
                put_proj(&mut out, &format!("{n}.a2v"), &ex.a2v);
                put_proj(&mut out, &format!("{n}.v2a"), &ex.v2a);
            }
            let r = format!("{p}.scmc.router");
            put_stc(&mut out, &format!("{r}.stc_a"), &s.router.stc_a);
            put_stc(&mut out, &format!("{r}.stc_v"), &s.router.stc_v);
            put_mlp(&mut out, &format!("{r}.mlp_a"), &s.router.mlp_a);
            put_mlp(&mut out, &format!("{r}.mlp_v"), &s.router.mlp_v);
        }
        let d = &self.decoder;
        out.push(("decoder.query_embed".into(), d.query_embed.clone()));
        put_mlp(&mut out, "decoder.query_mlp", &d.query_mlp);
        put_proj(&mut out, "decoder.attn", &d.attn);
        out.push(("decoder.pixel_embed".into(), d.pixel_embed.clone()));
        out.push(("decoder.class_head".into(), d.class_head.clone()));

        let mut file = TensorFile::new();
        for (name, t) in out {
            file.insert(name, t)?;
        }
        Ok(file)
    }

    /// Loads parameters and checks every shape against `cfg`.
    pub fn from_ften(file: &TensorFile, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let ld = Loader { file };
        let c = cfg.channels;
        let (cr, k) = (c / cfg.reduction, cfg.stc_kernel);
        let present = (1..).take_while(|i| ld.has(&format!("stage{i}.fded.v.dwc"))).count();
        if present != cfg.stages {
            return Err(Error::Params(format!(
                "file holds {present} stages, config expects {}",
                cfg.stages
            )));
        }
        let experts_present = (0..)
            .take_while(|e| ld.has(&format!("stage1.scmc.expert{e}.a2v.q")))
            .count();
        if experts_present != cfg.experts {
            return Err(Error::Params(format!(
                "file holds {experts_present} experts per stage, config expects {}",
                cfg.experts
            )));
        }
        let mut stages = Vec::with_capacity(cfg.stages);
        for i in 1..=cfg.stages {
            let p = format!("stage{i}");
            let fuse = if i > 1 {
                Some(ld.get(&format!("{p}.fuse"), &[c, 2 * c])?)
            } else {
                None
            };
            let fded_v = ld.fded(&format!("{p}.fded.v"), cfg)?;
            let fded_a = ld.fded(&format!("{p}.fded.a"), cfg)?;
            let experts = (0..cfg.experts)
                .map(|e| {
                    let n = format!("{p}.scmc.expert{e}");
                    Ok(ExpertParams {
                        stc_q: ld.stc(&format!("{n}.stc_q"), c, cr, k)?,
                        stc_k: ld.stc(&format!("{n}.stc_k"), c, cr, k)?,
                        stc_v: ld.stc(&format!("{n}.stc_v"), c, cr, k)?,
                        a2v: ld.proj(&format!("{n}.a2v"), c)?,
                        v2a: ld.proj(&format!("{n}.v2a"), c)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let r = format!("{p}.scmc.router");
            let router = RouterParams {
                stc_a: ld.stc(&format!("{r}.stc_a"), c, cr, k)?,
                stc_v: ld.stc(&format!("{r}.stc_v"), c, cr, k)?,
                mlp_a: ld.mlp(&format!("{r}.mlp_a"), c, c / 2, cfg.experts)?,
                mlp_v: ld.mlp(&format!("{r}.mlp_v"), c, c / 2, cfg.experts)?,
            };
            stages.push(StageParams {
                fuse,
                fded_v,
                fded_a,
                experts,
                router,
            });
        }
        let decoder = DecoderParams {
            query_embed: ld.get("decoder.query_embed", &[cfg.queries, c])?,
            query_mlp: ld.mlp("decoder.query_mlp", c, c, c)?,
            attn: ld.proj("decoder.attn", c)?,
            pixel_embed: ld.get("decoder.pixel_embed", &[c, c])?,
            class_head: ld.get("decoder.class_head", &[c, cfg.classes])?,
        };
        Ok(Self { stages, decoder })
    }
}

fn put_mlp(out: &mut Vec<(String, RealTensor)>, name: &str, m: &Mlp) {
    out.push((format!("{name}.w1"), m.w1.clone()));
    out.push((format!("{name}.b1"), m.b1.clone()));
    out.push((format!("{name}.w2"), m.w2.clone()));
    out.push((format!("{name}.b2"), m.b2.clone()));
}

fn put_stc(out: &mut Vec<(String, RealTensor)>, name: &str, s: &StcParams) {
    out.push((format!("{name}.spatial"), s.spatial.clone()));
    put_mlp(out, &format!("{name}.temporal"), &s.temporal);
    put_mlp(out, &format!("{name}.channel"), &s.channel);
}

fn put_proj(out: &mut Vec<(String, RealTensor)>, name: &str, p: &AttentionProj) {
    for (k, t) in ["q", "k", "v", "out"].into_iter().zip(p.all()) {
        out.push((format!("{name}.{k}"), t.clone()));
    }
}

fn put_fded(out: &mut Vec<(String, RealTensor)>, name: &str, f: &FdedParams) {
    out.push((format!("{name}.dwc"), f.dwc.clone()));
    out.push((format!("{name}.group"), f.group.clone()));
    out.push((format!("{name}.conv3d"), f.conv3d.clone()));
    put_mlp(out, &format!("{name}.ca"), &f.ca);
    out.push((
        format!("{name}.band_weights"),
        RealTensor::new(vec![4], f.band_weights.to_vec()).expect("4 weights"),
    ));
}

struct Loader<'a> {
    file: &'a TensorFile,
}

impl Loader<'_> {
    fn has(&self, name: &str) -> bool {
        self.file.contains(name)
    }

    fn get(&self, name: &str, shape: &[usize]) -> Result<RealTensor> {
        match self.file.get(name) {
            Some(AnyTensor::Real(t)) if t.shape() == shape => Ok(t.clone()),
            Some(AnyTensor::Real(t)) => Err(Error::Params(format!(
                "{name} has shape {:?}, config expects {shape:?}",
                t.shape()
            ))),
            Some(AnyTensor::Complex(_)) => Err(Error::Params(format!("{name} must be real"))),
            None => Err(Error::Params(format!("missing parameter {name}"))),
        }
    }

    fn mlp(&self, name: &str, input: usize, hidden: usize, output: usize) -> Result<Mlp> {
        Ok(Mlp {
            w1: self.get(&format!("{name}.w1"), &[input, hidden])?,
            b1: self.get(&format!("{name}.b1"), &[hidden])?,
            w2: self.get(&format!("{name}.w2"), &[hidden, output])?,
            b2: self.get(&format!("{name}.b2"), &[output])?,
        })
    }

    fn stc(&self, name: &str, c: usize, cr: usize, k: usize) -> Result<StcParams> {
        Ok(StcParams {
            spatial: self.get(&format!("{name}.spatial"), &[1, k, k])?,
            temporal: self.mlp(&format!("{name}.temporal"), c, cr, c)?,
            channel: self.mlp(&format!("{name}.channel"), c, cr, c)?,
        })
    }

    fn proj(&self, name: &str, c: usize) -> Result<AttentionProj> {
        Ok(AttentionProj {
            q: self.get(&format!("{name}.q"), &[c, c])?,
            k: self.get(&format!("{name}.k"), &[c, c])?,
            v: self.get(&format!("{name}.v"), &[c, c])?,
            out: self.get(&format!("{name}.out"), &[c, c])?,
        })
    }

    fn fded(&self, name: &str, cfg: &ModelConfig) -> Result<FdedParams> {
        let c = cfg.channels;
        let cg = c / cfg.groups;
        let bw = self.get(&format!("{name}.band_weights"), &[4])?;
        Ok(FdedParams {
            dwc: self.get(&format!("{name}.dwc"), &[c, 3, 3])?,
            group: self.get(&format!("{name}.group"), &[cfg.groups, cg, cg])?,
            conv3d: self.get(&format!("{name}.conv3d"), &[c, 3, 3, 3])?,
            ca: self.mlp(&format!("{name}.ca"), c, c / cfg.reduction, c)?,
            band_weights: bw.data().try_into().expect("4 weights"),
            ladder: cfg.ladder,
            enhance: cfg.enhance,
        })
    }
}
