use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{gdv, AnalysisError};
use crate::data::Segment;
use crate::models::{Activation, ActivationLayout, Model};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GdvEntry {
    pub layer: String,
    pub speaker_gdv: f64,
    pub mdd_gdv: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GdvReport {
    /// Non-prediction layers in model order.
    pub layers: Vec<GdvEntry>,
    /// Always true: higher values mean more separable.
    pub sign_flipped: bool,
}

impl GdvReport {
    /// Columns `layer,speaker_gdv,mdd_gdv`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), AnalysisError> {
        let mut out = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        for e in &self.layers {
            out.serialize(e)?;
        }
        out.flush().map_err(|e| AnalysisError::Csv(e.to_string()))
    }
}

/// Mean over time for `[C, T]` and `[T, F]` activations; vectors pass
/// through.
pub fn pool_time(a: &Activation) -> Vec<f64> {
    let v = &a.value;
    let data = v.data();
    match a.layout {
        ActivationLayout::Vector => data.iter().map(|&x| x as f64).collect(),
        ActivationLayout::ChannelsTime => {
            let (c, t) = (v.shape()[0], v.shape()[1]);
            (0..c)
                .map(|i| {
                    data[i * t..(i + 1) * t]
                        .iter()
                        .map(|&x| x as f64)
                        .sum::<f64>()
                        / t as f64
                })
                .collect()
        }
        ActivationLayout::TimeFeatures => {
            let (t, f) = (v.shape()[0], v.shape()[1]);
            (0..f)
                .map(|j| (0..t).map(|i| data[i * f + j] as f64).sum::<f64>() / t as f64)
                .collect()
        }
    }
}

/// Speaker and condition separability of every non-prediction layer.
pub fn layerwise_gdv(model: &Model, segments: &[Segment]) -> Result<GdvReport, AnalysisError> {
    if segments.is_empty() {
        return Err(AnalysisError::Empty("segment list"));
    }
    let pooled: Vec<Vec<(String, Vec<f64>)>> = segments
        .par_iter()
        .map(|s| {
            let out = model.forward(&s.samples)?;
            Ok(out
                .activations
                .iter()
                .filter(|a| !a.prediction)
                .map(|a| (a.layer.clone(), pool_time(a)))
                .collect())
        })
        .collect::<Result<_, AnalysisError>>()?;

    let speakers: Vec<usize> = segments.iter().map(|s| s.speaker).collect();
    let conditions: Vec<u8> = segments.iter().map(|s| s.condition).collect();
    let layers = (0..pooled[0].len())
        .map(|li| {
            let points: Vec<Vec<f64>> = pooled.iter().map(|p| p[li].1.clone()).collect();
            Ok(GdvEntry {
                layer: pooled[0][li].0.clone(),
                speaker_gdv: gdv(&points, &speakers)?,
                mdd_gdv: gdv(&points, &conditions)?,
            })
        })
        .collect::<Result<_, AnalysisError>>()?;
    Ok(GdvReport {
        layers,
        sign_flipped: true,
    })
}
