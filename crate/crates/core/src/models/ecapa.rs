//! ECAPA-TDNN variant that reads raw audio.
//!
//! | layer                  | in, out, kernel, stride, pad, dilation |
//! |------------------------|----------------------------------------|
//! | input_layer            | 1, C, 1024, 512, 0, 1                  |
//! | se_res2_1              | C, C, 3, 1, 2, 2                       |
//! | se_res2_2              | C, C, 3, 1, 3, 3                       |
//! | se_res2_3              | C, C, 3, 1, 4, 4                       |
//! | feature_aggregation    | channel concat of the three blocks     |
//! | concat_conv            | 3C, 3C, 1, 1, 0, 1                     |
//! | attentive_stats_pool   | 3C -> 6C                               |
//! | embedding              | 6C -> E                                |
//! | speaker_prediction     | E -> S                                 |
//! | depression_prediction  | E -> 1                                 |
//!
//! `C = 128 * channel_multiplier`. The input layer and the SE-Res2 blocks are
//! FE; everything after is FP.

use super::builder::{Builder, WeightBias};
use super::{
    partial_forward, ActivationLayout, Component, LayerInfo, LayerRole, ModelError, ModelSpec,
    Parameter, TapeForward, INPUT_KERNEL, INPUT_STRIDE,
};
use crate::autodiff::layers::{
    attentive_stats_pool, se_res2_block, AttentionParams, SeRes2Config, SeRes2Params,
};
use crate::autodiff::{ConvGeometry, Real, Tape, Var};
use crate::seed::{rng_for, stream};

pub const BLOCK_DILATIONS: [usize; 3] = [2, 3, 4];
const BLOCK_KERNEL: usize = 3;

#[derive(Clone, Debug)]
pub(crate) struct SeRes2Idx {
    conv_in: WeightBias,
    res2: Vec<WeightBias>,
    conv_out: WeightBias,
    se_down: WeightBias,
    se_up: WeightBias,
    dilation: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct EcapaNet {
    input: WeightBias,
    blocks: Vec<SeRes2Idx>,
    concat: WeightBias,
    att_hidden: WeightBias,
    att_score: WeightBias,
    embedding: WeightBias,
    speaker: WeightBias,
    mdd: WeightBias,
    res2_scale: usize,
    /// Layer indices in forward order.
    layer_ids: [usize; 10],
}

pub(crate) fn build(
    spec: &ModelSpec,
) -> Result<(EcapaNet, Vec<LayerInfo>, Vec<Parameter>), ModelError> {
    use ActivationLayout::*;
    use Component::*;
    use LayerRole::*;

    let c = spec.channels()?;
    let agg = 3 * c;
    let att = spec.scaled(spec.attention_channels)?;
    let scale = spec.res2_scale;
    let width = c / scale;
    let se_hidden = c / spec.se_ratio;
    let emb = spec.embedding_dim;

    let mut b = Builder::new(rng_for(spec.seed, stream::INIT, 0));
    let mut ids = [0usize; 10];

    ids[0] = b.layer("input_layer", FeatureExtraction, Trunk, ChannelsTime);
    let input = b.conv("input_layer", "", c, 1, INPUT_KERNEL);

    let mut blocks = Vec::new();
    for (i, &dilation) in BLOCK_DILATIONS.iter().enumerate() {
        let name = format!("se_res2_{}", i + 1);
        ids[1 + i] = b.layer(&name, FeatureExtraction, Trunk, ChannelsTime);
        let conv_in = b.conv(&name, "conv_in.", c, c, 1);
        let res2 = (0..scale - 1)
            .map(|j| {
                b.conv(
                    &name,
                    &format!("res2_{}.", j + 1),
                    width,
                    width,
                    BLOCK_KERNEL,
                )
            })
            .collect();
        let conv_out = b.conv(&name, "conv_out.", c, c, 1);
        let se_down = b.dense(&name, "se_down.", se_hidden, c);
        let se_up = b.dense(&name, "se_up.", c, se_hidden);
        blocks.push(SeRes2Idx {
            conv_in,
            res2,
            conv_out,
            se_down,
            se_up,
            dilation,
        });
    }

    ids[4] = b.layer(
        "feature_aggregation",
        FeatureProcessing,
        Trunk,
        ChannelsTime,
    );
    ids[5] = b.layer("concat_conv", FeatureProcessing, Trunk, ChannelsTime);
    let concat = b.conv("concat_conv", "", agg, agg, 1);
    ids[6] = b.layer("attentive_stats_pool", FeatureProcessing, Trunk, Vector);
    let att_hidden = b.conv("attentive_stats_pool", "hidden.", att, agg, 1);
    let att_score = b.conv("attentive_stats_pool", "score.", agg, att, 1);
    ids[7] = b.layer("embedding", FeatureProcessing, Trunk, Vector);
    let embedding = b.dense("embedding", "", emb, 2 * agg);
    ids[8] = b.layer("speaker_prediction", FeatureProcessing, SpeakerHead, Vector);
    let speaker = b.dense("speaker_prediction", "", spec.num_speakers, emb);
    ids[9] = b.layer(
        "depression_prediction",
        FeatureProcessing,
        ConditionHead,
        Vector,
    );
    let mdd = b.dense("depression_prediction", "", 1, emb);

    let net = EcapaNet {
        input,
        blocks,
        concat,
        att_hidden,
        att_score,
        embedding,
        speaker,
        mdd,
        res2_scale: scale,
        layer_ids: ids,
    };
    Ok((net, b.layers, b.params))
}

impl EcapaNet {
    pub(crate) fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        input: Var,
        p: &[Var],
    ) -> Result<TapeForward, ModelError> {
        let ids = &self.layer_ids;
        let mut acts = Vec::with_capacity(10);

        let x = tape.conv1d(
            input,
            p[self.input.w],
            p[self.input.b],
            ConvGeometry::new(INPUT_STRIDE, 0, 1),
        )?;
        let mut x = tape.relu(x);
        acts.push((ids[0], x));

        let mut block_outs = Vec::with_capacity(3);
        for (i, blk) in self.blocks.iter().enumerate() {
            let params = SeRes2Params {
                conv_in: blk.conv_in.conv(p),
                res2: blk.res2.iter().map(|r| r.conv(p)).collect(),
                conv_out: blk.conv_out.conv(p),
                se_down: blk.se_down.dense(p),
                se_up: blk.se_up.dense(p),
            };
            let cfg = SeRes2Config {
                scale: self.res2_scale,
                kernel: BLOCK_KERNEL,
                dilation: blk.dilation,
                se_bypass: false,
            };
            x = se_res2_block(tape, x, &params, &cfg)?;
            acts.push((ids[1 + i], x));
            block_outs.push(x);
        }

        let agg = tape.concat_rows(&block_outs)?;
        acts.push((ids[4], agg));
        let h = tape.conv1d(
            agg,
            p[self.concat.w],
            p[self.concat.b],
            ConvGeometry::new(1, 0, 1),
        )?;
        let h = tape.relu(h);
        acts.push((ids[5], h));

        let pooled = attentive_stats_pool(
            tape,
            h,
            &AttentionParams {
                hidden: self.att_hidden.conv(p),
                score: self.att_score.conv(p),
            },
        )?
        .output;
        acts.push((ids[6], pooled));

        let emb = self.embedding.dense(p).apply(tape, pooled)?;
        acts.push((ids[7], emb));
        let spk = self.speaker.dense(p).apply(tape, emb)?;
        acts.push((ids[8], spk));
        let mdd = self.mdd.dense(p).apply(tape, emb)?;
        acts.push((ids[9], mdd));

        Ok(partial_forward(mdd, spk, emb, acts))
    }
}
