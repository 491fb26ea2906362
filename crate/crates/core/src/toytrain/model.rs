//! End-to-end toy pipeline: vision projector, landmark projector,
//! guided cross-attention and decoder likelihood, with exact gradients.

use ndarray::{s, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frgca::{frgca_backward, frgca_forward, AttentionVariant, FrgcaParams};
use crate::frlp::{frlp_backward, frlp_forward, FrlpParams, ProjectorMode};
use crate::geometry::{clip_masks, LandmarkClip, PatchGrid, RegionPartition};
use crate::nn::{ParamSet, TensorArchive};
use crate::toytrain::decoder::{
    first_token_logits, loss_and_grad, sequence_assemble, DecoderInput, ToyDecoder,
};
use crate::toytrain::synth::Sample;
use crate::toytrain::vision::{vision_backward, vision_forward, VisionProjector};

/// Named parameter groups of the two-stage schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    /// landmark projector (γ)
    Frlp,
    /// guided cross-attention (α)
    Frgca,
    /// vision projector (θ)
    Vision,
    /// decoder (φ)
    Decoder,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 4] = [Self::Frlp, Self::Frgca, Self::Vision, Self::Decoder];

    pub fn prefix(self) -> &'static str {
        match self {
            Self::Frlp => "frlp",
            Self::Frgca => "frgca",
            Self::Vision => "vision",
            Self::Decoder => "decoder",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub vision: VisionProjector,
    pub frlp: FrlpParams,
    pub frgca: FrgcaParams,
    pub decoder: ToyDecoder,
}

impl ModelParams {
    pub fn zeros_like(&self) -> Self {
        Self {
            vision: self.vision.zeros_like(),
            frlp: self.frlp.zeros_like(),
            frgca: self.frgca.zeros_like(),
            decoder: self.decoder.zeros_like(),
        }
    }

    pub fn group(&self, g: ParamGroup) -> &dyn ParamSet {
        match g {
            ParamGroup::Frlp => &self.frlp,
            ParamGroup::Frgca => &self.frgca,
            ParamGroup::Vision => &self.vision,
            ParamGroup::Decoder => &self.decoder,
        }
    }

    pub fn group_mut(&mut self, g: ParamGroup) -> &mut dyn ParamSet {
        match g {
            ParamGroup::Frlp => &mut self.frlp,
            ParamGroup::Frgca => &mut self.frgca,
            ParamGroup::Vision => &mut self.vision,
            ParamGroup::Decoder => &mut self.decoder,
        }
    }

    /// Raw little-endian bytes of one group, for bit-level freeze checks.
    pub fn group_bytes(&self, g: ParamGroup) -> Vec<u8> {
        self.group(g)
            .flatten()
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect()
    }

    pub fn to_archive(&self) -> TensorArchive {
        let mut archive = TensorArchive::default();
        for g in ParamGroup::ALL {
            archive.insert(self.group(g), g.prefix());
        }
        archive
    }

    pub fn restore(&mut self, archive: &TensorArchive) -> Result<()> {
        for g in ParamGroup::ALL {
            archive.restore(self.group_mut(g), g.prefix())?;
        }
        Ok(())
    }
}

impl ParamSet for ModelParams {
    fn visit(&self, _prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for g in ParamGroup::ALL {
            self.group(g).visit(g.prefix(), f);
        }
    }

    fn visit_mut(&mut self, _prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        for g in ParamGroup::ALL {
            self.group_mut(g).visit_mut(g.prefix(), f);
        }
    }
}

/// Fixed, parameter-free pieces of the pipeline.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub partition: RegionPartition,
    pub grid: PatchGrid,
    pub variant: AttentionVariant,
    pub projector: ProjectorMode,
    pub context_cap: usize,
}

struct Inputs<'a> {
    raw: &'a Array3<f64>,
    clip: &'a LandmarkClip,
    instruction: &'a [usize],
    response: &'a [usize],
}

impl<'a> From<&'a Sample> for Inputs<'a> {
    fn from(s: &'a Sample) -> Self {
        Self {
            raw: &s.raw,
            clip: &s.clip,
            instruction: &s.instruction,
            response: &s.response,
        }
    }
}

impl Pipeline {
    fn check(&self, inputs: &Inputs) -> Result<()> {
        let (t, n, _) = inputs.raw.dim();
        if t != inputs.clip.num_frames() {
            return Err(Error::ShapeMismatch(format!(
                "{t} visual frames but {} landmark frames",
                inputs.clip.num_frames()
            )));
        }
        if n != self.grid.num_patches() {
            return Err(Error::ShapeMismatch(format!(
                "{n} visual tokens per frame but grid has {}",
                self.grid.num_patches()
            )));
        }
        Ok(())
    }

    /// Vision projection followed by landmark enrichment.
    fn enrich(
        &self,
        params: &ModelParams,
        inputs: &Inputs,
    ) -> Result<(Array3<f64>, Option<EnrichState>)> {
        self.check(inputs)?;
        let (h_v, vision_cache) = vision_forward(inputs.raw, &params.vision)?;
        if self.variant == AttentionVariant::None {
            return Ok((
                h_v,
                Some(EnrichState {
                    vision_cache,
                    frgca_cache: None,
                }),
            ));
        }
        let tokens = frlp_forward(inputs.clip, &self.partition, &params.frlp, self.projector)?;
        let masks = clip_masks(inputs.clip, &self.partition, &self.grid)?;
        let (out, cache) = frgca_forward(&h_v, &tokens.combined, &masks, &params.frgca, self.variant)?;
        Ok((
            out,
            Some(EnrichState {
                vision_cache,
                frgca_cache: Some(cache),
            }),
        ))
    }

    pub fn enriched_tokens(&self, params: &ModelParams, sample: &Sample) -> Result<Array3<f64>> {
        self.enrich(params, &sample.into()).map(|(t, _)| t)
    }

    pub fn assemble(&self, params: &ModelParams, sample: &Sample) -> Result<DecoderInput> {
        let inputs: Inputs = sample.into();
        let (enriched, _) = self.enrich(params, &inputs)?;
        sequence_assemble(
            &enriched,
            inputs.instruction,
            inputs.response,
            &params.decoder,
            self.context_cap,
        )
    }

    pub fn loss(&self, params: &ModelParams, sample: &Sample) -> Result<f64> {
        let seq = self.assemble(params, sample)?;
        crate::toytrain::decoder::autoregressive_loss(&seq, &sample.response, &params.decoder)
    }

    /// Argmax over the vocabulary at the first response position.
    pub fn predict(&self, params: &ModelParams, sample: &Sample) -> Result<usize> {
        let seq = self.assemble(params, sample)?;
        let logits = first_token_logits(&seq, &params.decoder)?;
        Ok(logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .expect("vocabulary is non-empty"))
    }

    pub fn loss_and_grad(&self, params: &ModelParams, sample: &Sample) -> Result<(f64, ModelParams)> {
        let inputs: Inputs = sample.into();
        let (enriched, state) = self.enrich(params, &inputs)?;
        let state = state.expect("forward state recorded");
        let seq = sequence_assemble(
            &enriched,
            inputs.instruction,
            inputs.response,
            &params.decoder,
            self.context_cap,
        )?;
        let (loss, d_seq, decoder_grads) = loss_and_grad(&seq, inputs.response, &params.decoder)?;
        let mut grads = params.zeros_like();
        grads.decoder = decoder_grads;

        let d_enriched = d_seq
            .slice(s![..seq.visual_len, ..])
            .to_owned()
            .into_shape_with_order(enriched.raw_dim())
            .expect("visual block matches enriched tokens");
        let d_hv = match &state.frgca_cache {
            None => d_enriched,
            Some(cache) => {
                let g = frgca_backward(&d_enriched, cache, &params.frgca)?;
                grads.frgca = g.params;
                grads.frlp = frlp_backward(inputs.clip, &self.partition, &params.frlp, self.projector, &g.h_l)?;
                g.h_v
            }
        };
        let (vision_grads, _) = vision_backward(&d_hv, &state.vision_cache, &params.vision)?;
        grads.vision = vision_grads;
        Ok((loss, grads))
    }
}

struct EnrichState {
    vision_cache: crate::toytrain::vision::VisionCache,
    frgca_cache: Option<crate::frgca::FrgcaCache>,
}
