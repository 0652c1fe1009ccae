//! CNN-LSTM baseline on raw audio: two 1-D convolutions (FE) followed by two
//! unidirectional LSTMs and the prediction heads (FP).

use super::builder::{Builder, LstmIdx, WeightBias};
use super::{
    partial_forward, ActivationLayout, Component, LayerInfo, LayerRole, ModelError, ModelSpec,
    Parameter, TapeForward, INPUT_KERNEL, INPUT_STRIDE,
};
use crate::autodiff::layers::lstm_sequence;
use crate::autodiff::{ConvGeometry, Real, Tape, Tensor, Var};
use crate::seed::{rng_for, stream};

const CONV2_KERNEL: usize = 3;

#[derive(Clone, Debug)]
pub(crate) struct DepAudioNet {
    conv1: WeightBias,
    conv2: WeightBias,
    lstm1: LstmIdx,
    lstm2: LstmIdx,
    speaker: WeightBias,
    mdd: WeightBias,
    hidden: usize,
    layer_ids: [usize; 6],
}

pub(crate) fn build(
    spec: &ModelSpec,
) -> Result<(DepAudioNet, Vec<LayerInfo>, Vec<Parameter>), ModelError> {
    use ActivationLayout::*;
    use Component::*;
    use LayerRole::*;

    let c = spec.channels()?;
    let hidden = spec.embedding_dim;
    let mut b = Builder::new(rng_for(spec.seed, stream::INIT, 0));
    let mut ids = [0usize; 6];

    ids[0] = b.layer("conv1", FeatureExtraction, Trunk, ChannelsTime);
    let conv1 = b.conv("conv1", "", c, 1, INPUT_KERNEL);
    ids[1] = b.layer("conv2", FeatureExtraction, Trunk, ChannelsTime);
    let conv2 = b.conv("conv2", "", c, c, CONV2_KERNEL);
    ids[2] = b.layer("lstm1", FeatureProcessing, Trunk, TimeFeatures);
    let lstm1 = b.lstm("lstm1", c, hidden);
    ids[3] = b.layer("lstm2", FeatureProcessing, Trunk, TimeFeatures);
    let lstm2 = b.lstm("lstm2", hidden, hidden);
    ids[4] = b.layer("speaker_prediction", FeatureProcessing, SpeakerHead, Vector);
    let speaker = b.dense("speaker_prediction", "", spec.num_speakers, hidden);
    ids[5] = b.layer(
        "depression_prediction",
        FeatureProcessing,
        ConditionHead,
        Vector,
    );
    let mdd = b.dense("depression_prediction", "", 1, hidden);

    if ConvGeometry::new(INPUT_STRIDE, 0, 1)
        .output_len(spec.segment_len, INPUT_KERNEL)
        .is_none_or(|t| t < CONV2_KERNEL)
    {
        return Err(ModelError::InvalidSpec(format!(
            "segment_len {} too short for two convolutions",
            spec.segment_len
        )));
    }

    let net = DepAudioNet {
        conv1,
        conv2,
        lstm1,
        lstm2,
        speaker,
        mdd,
        hidden,
        layer_ids: ids,
    };
    Ok((net, b.layers, b.params))
}

impl DepAudioNet {
    pub(crate) fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        input: Var,
        p: &[Var],
    ) -> Result<TapeForward, ModelError> {
        let ids = &self.layer_ids;
        let mut acts = Vec::with_capacity(6);

        let x = tape.conv1d(
            input,
            p[self.conv1.w],
            p[self.conv1.b],
            ConvGeometry::new(INPUT_STRIDE, 0, 1),
        )?;
        let x = tape.relu(x);
        acts.push((ids[0], x));
        let x = tape.conv1d(
            x,
            p[self.conv2.w],
            p[self.conv2.b],
            ConvGeometry::new(1, 0, 1),
        )?;
        let x = tape.relu(x);
        acts.push((ids[1], x));

        let seq = tape.transpose(x)?;
        let zeros = Tensor::zeros(vec![self.hidden])?;
        let h0 = tape.constant(zeros.clone());
        let c0 = tape.constant(zeros);
        let l1 = lstm_sequence(tape, seq, &self.lstm1.params(p), h0, c0)?;
        acts.push((ids[2], l1));
        let l2 = lstm_sequence(tape, l1, &self.lstm2.params(p), h0, c0)?;
        acts.push((ids[3], l2));

        let steps = tape.shape(l2)[0];
        let last = tape.slice_rows(l2, steps - 1, 1)?;
        let emb = tape.reshape(last, vec![self.hidden])?;

        let spk = self.speaker.dense(p).apply(tape, emb)?;
        acts.push((ids[4], spk));
        let mdd = self.mdd.dense(p).apply(tape, emb)?;
        acts.push((ids[5], mdd));
        Ok(partial_forward(mdd, spk, emb, acts))
    }
}
