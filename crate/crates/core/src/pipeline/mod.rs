//! Three-stage composition of FDED and SCMC, query derivation, the decoder
//! stand-in and segmentation metrics.

pub mod config;
pub mod decoder;
pub mod metrics;
pub mod params;

pub use config::ModelConfig;
pub use decoder::{decode_masks, derive_queries, threshold_masks, Prediction, MASK_THRESHOLD};
pub use metrics::{frame_counts, metric_fscore, metric_jaccard, Counts, F_BETA_SQ};
pub use params::{DecoderParams, ModelParams, RouterInit, StageParams};

use crate::error::{Error, Result};
use crate::fded::{fded_forward, Modality};
use crate::fixtures::SceneFixture;
use crate::ops;
use crate::scmc::{scmc_forward, RoutingDecision, ScmcOptions};
use crate::tensor::RealTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct StageState {
    /// 1-based.
    pub index: usize,
    /// `[T, C, H_i, W_i]`
    pub v_feat: RealTensor,
    /// `[T, C, Ha, Wa]`
    pub a_feat: RealTensor,
    pub routing_v: RoutingDecision,
    pub routing_a: RoutingDecision,
}

fn check_ladder(cfg: &ModelConfig, index: usize, x: &RealTensor, what: &str) -> Result<()> {
    let (h, w) = cfg.stage_resolution(index);
    let (_, c, xh, xw) = x.dims4("run_stages")?;
    if c != cfg.channels || (xh, xw) != (h, w) {
        return Err(Error::invalid(
            "run_stages",
            format!(
                "stage {index} {what} has shape {:?}, expected [T, {}, {h}, {w}]",
                x.shape(),
                cfg.channels
            ),
        ));
    }
    Ok(())
}

/// Checks that parameters match the configured widths and counts.
pub fn validate_params(cfg: &ModelConfig, p: &ModelParams) -> Result<()> {
    cfg.validate()?;
    if p.stages.len() != cfg.stages {
        return Err(Error::Params(format!(
            "parameters hold {} stages, config expects {}",
            p.stages.len(),
            cfg.stages
        )));
    }
    for (i, s) in p.stages.iter().enumerate() {
        for f in [&s.fded_v, &s.fded_a] {
            f.validate()?;
            if f.channels() != cfg.channels {
                return Err(Error::Params(format!(
                    "stage {} FDED width {} does not match channels {}",
                    i + 1,
                    f.channels(),
                    cfg.channels
                )));
            }
        }
        if s.experts.len() != cfg.experts || s.router.experts() != cfg.experts {
            return Err(Error::Params(format!(
                "stage {} has {} experts and a router over {}, config expects {}",
                i + 1,
                s.experts.len(),
                s.router.experts(),
                cfg.experts
            )));
        }
        for e in &s.experts {
            e.validate(cfg.channels)?;
        }
        match (&s.fuse, i) {
            (None, 0) => {}
            (Some(f), i) if i > 0 && f.shape() == [cfg.channels, 2 * cfg.channels] => {}
            _ => return Err(Error::Params(format!("stage {} fusion weights are malformed", i + 1))),
        }
    }
    let d = &p.decoder;
    if d.query_embed.shape() != [cfg.queries, cfg.channels] || d.class_head.shape() != [cfg.channels, cfg.classes] {
        return Err(Error::Params("decoder shapes do not match the config".into()));
    }
    Ok(())
}

/// Runs every stage. Stage 1 enhances `P_1` with the raw audio features; each
/// later stage resizes the previous visual output to `P_i`, concatenates,
/// fuses back to `C` channels and continues with the previous audio output.
pub fn run_stages(
    features: &[RealTensor],
    audio: &RealTensor,
    cfg: &ModelConfig,
    p: &ModelParams,
) -> Result<Vec<StageState>> {
    if features.len() != cfg.stages || p.stages.len() != cfg.stages {
        return Err(Error::invalid(
            "run_stages",
            format!(
                "{} feature maps and {} parameter stages for {} configured stages",
                features.len(),
                p.stages.len(),
                cfg.stages
            ),
        ));
    }
    let (ta, ca, _, _) = audio.dims4("run_stages")?;
    if ca != cfg.channels {
        return Err(Error::invalid(
            "run_stages",
            format!("audio has {ca} channels, expected {}", cfg.channels),
        ));
    }
    let opts = ScmcOptions {
        force_dense: cfg.force_dense,
    };
    let mut states: Vec<StageState> = Vec::with_capacity(cfg.stages);
    for (i, (pi, sp)) in features.iter().zip(&p.stages).enumerate() {
        let index = i + 1;
        check_ladder(cfg, index, pi, "input")?;
        if pi.shape()[0] != ta {
            return Err(Error::shape("run_stages", pi.shape(), audio.shape()));
        }
        let (v_in, a_in) = match states.last() {
            None => (pi.clone(), audio.clone()),
            Some(prev) => {
                let (h, w) = cfg.stage_resolution(index);
                let up = ops::bilinear_resize(&prev.v_feat, h, w)?;
                let fuse = sp
                    .fuse
                    .as_ref()
                    .ok_or_else(|| Error::Params(format!("stage {index} is missing its fusion weights")))?;
                (
                    ops::pointwise_conv(&up.concat_channels(pi)?, fuse)?,
                    prev.a_feat.clone(),
                )
            }
        };
        let fv = fded_forward(&v_in, Modality::Visual, &sp.fded_v)?.features;
        let fa = fded_forward(&a_in, Modality::Audio, &sp.fded_a)?.features;
        let out = scmc_forward(&fv, &fa, &sp.experts, &sp.router, opts)?;
        check_ladder(cfg, index, &out.visual, "output")?;
        states.push(StageState {
            index,
            v_feat: out.visual,
            a_feat: out.audio,
            routing_v: out.routing_v,
            routing_a: out.routing_a,
        });
    }
    Ok(states)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub stages: Vec<StageState>,
    pub queries: RealTensor,
    pub prediction: Prediction,
}

/// Validated configuration and parameters; immutable once built.
#[derive(Debug, Clone)]
pub struct Pipeline {
    cfg: ModelConfig,
    params: ModelParams,
}

impl Pipeline {
    pub fn new(cfg: ModelConfig, params: ModelParams) -> Result<Self> {
        validate_params(&cfg, &params)?;
        Ok(Self { cfg, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// Checks that a fixture matches the configured resolution, width and depth.
    pub fn check_fixture(&self, fx: &SceneFixture) -> Result<()> {
        let cfg = &self.cfg;
        if fx.spec.height != cfg.height || fx.spec.width != cfg.width {
            return Err(Error::invalid(
                "pipeline",
                format!(
                    "fixture is {}x{}, config expects {}x{}",
                    fx.spec.height, fx.spec.width, cfg.height, cfg.width
                ),
            ));
        }
        if fx.stage_features.len() < cfg.stages {
            return Err(Error::invalid(
                "pipeline",
                format!(
                    "fixture has {} feature levels, config needs {}",
                    fx.stage_features.len(),
                    cfg.stages
                ),
            ));
        }
        if fx.audio_features.shape()[1] != cfg.channels {
            return Err(Error::invalid(
                "pipeline",
                format!(
                    "fixture width {} does not match channels {}",
                    fx.audio_features.shape()[1],
                    cfg.channels
                ),
            ));
        }
        Ok(())
    }

    pub fn run(&self, fx: &SceneFixture) -> Result<PipelineOutput> {
        self.check_fixture(fx)?;
        self.run_features(&fx.stage_features[..self.cfg.stages], &fx.audio_features)
    }

    pub fn run_features(&self, features: &[RealTensor], audio: &RealTensor) -> Result<PipelineOutput> {
        let stages = run_stages(features, audio, &self.cfg, &self.params)?;
        let last = stages.last().expect("at least one stage");
        let d = &self.params.decoder;
        let queries = derive_queries(&last.a_feat, &d.query_embed, &d.query_mlp)?;
        let prediction = decode_masks(&queries, &last.v_feat, d, self.cfg.height, self.cfg.width)?;
        Ok(PipelineOutput {
            stages,
            queries,
            prediction,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{gen_scene, Motion, SceneSpec, Texture};

    fn cfg(stages: usize) -> ModelConfig {
        ModelConfig {
            stages,
            channels: 8,
            experts: 2,
            queries: 2,
            height: 32,
            width: 32,
            ..ModelConfig::default()
        }
    }

    fn scene() -> SceneFixture {
        gen_scene(SceneSpec::new(7, 2, 32, 8, Texture::Checkerboard, Motion::Linear)).unwrap()
    }

    #[test]
    fn stage_shapes_follow_ladder() {
        let c = cfg(3);
        let pipe = Pipeline::new(c.clone(), ModelParams::init(&c, RouterInit::Random).unwrap()).unwrap();
        let out = pipe.run(&scene()).unwrap();
        let dims: Vec<_> = out.stages.iter().map(|s| s.v_feat.shape().to_vec()).collect();
        assert_eq!(dims, vec![vec![2, 8, 8, 8], vec![2, 8, 4, 4], vec![2, 8, 2, 2]]);
        assert_eq!(out.prediction.mask_logits.shape(), [2, 2, 32, 32]);
        assert!(out.prediction.binary_mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
        assert_eq!(out, pipe.run(&scene()).unwrap());
    }

    #[test]
    fn single_stage_is_one_fded_scmc_pass() {
        let c = cfg(1);
        let p = ModelParams::init(&c, RouterInit::Random).unwrap();
        let fx = scene();
        let states = run_stages(&fx.stage_features[..1], &fx.audio_features, &c, &p).unwrap();
        let s = &p.stages[0];
        let fv = fded_forward(&fx.stage_features[0], Modality::Visual, &s.fded_v)
            .unwrap()
            .features;
        let fa = fded_forward(&fx.audio_features, Modality::Audio, &s.fded_a)
            .unwrap()
            .features;
        let direct = scmc_forward(&fv, &fa, &s.experts, &s.router, ScmcOptions::default()).unwrap();
        assert!(states[0].v_feat.bit_eq(&direct.visual));
        assert!(states[0].a_feat.bit_eq(&direct.audio));
    }

    #[test]
    fn ladder_violations_are_rejected() {
        let c = cfg(2);
        let p = ModelParams::init(&c, RouterInit::Random).unwrap();
        let fx = scene();
        let swapped = vec![fx.stage_features[1].clone(), fx.stage_features[0].clone()];
        assert!(run_stages(&swapped, &fx.audio_features, &c, &p).is_err());
        assert!(run_stages(&fx.stage_features[..1], &fx.audio_features, &c, &p).is_err());
    }

    #[test]
    fn mismatched_params_are_rejected() {
        let c = cfg(2);
        let p = ModelParams::init(
            &ModelConfig {
                experts: 3,
                ..c.clone()
            },
            RouterInit::Random,
        )
        .unwrap();
        assert!(Pipeline::new(c, p).unwrap_err().to_string().contains("experts"));
    }
}
