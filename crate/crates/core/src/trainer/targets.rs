use super::FrameVariant;
use crate::error::{Error, Result};
use crate::quantizer::LabelSeq;

/// Aligns 10 ms frame labels with the model frame rate.
///
/// * 10 ms: identity.
/// * 20 ms, single: label of the first frame of each pair (`2t`).
/// * 20 ms, dual: `(label(2t), label(2t + 1))`.
///
/// Output length is `floor(T / 2)` for 20 ms, matching `concat_frames`.
/// `num_feature_frames` is the 10 ms feature length the labels must match.
pub fn make_targets(
    labels10: &LabelSeq,
    variant: FrameVariant,
    dual: bool,
    num_feature_frames: usize,
) -> Result<Vec<LabelSeq>> {
    if labels10.len() != num_feature_frames {
        return Err(Error::shape(format!(
            "{}: {} labels for {num_feature_frames} feature frames",
            labels10.utt_id,
            labels10.len()
        )));
    }
    let l = &labels10.labels;
    let id = labels10.utt_id.clone();
    match (variant, dual) {
        (FrameVariant::Ms10, false) => Ok(vec![labels10.clone()]),
        (FrameVariant::Ms10, true) => {
            Err(Error::invalid("dual targets need the 20ms frame variant"))
        }
        (FrameVariant::Ms20, dual) => {
            let t = l.len() / 2;
            let even: Vec<u32> = (0..t).map(|i| l[2 * i]).collect();
            let mut out = vec![LabelSeq::new(id.clone(), even, 20.0)];
            if dual {
                out.push(LabelSeq::new(
                    id,
                    (0..t).map(|i| l[2 * i + 1]).collect(),
                    20.0,
                ));
            }
            Ok(out)
        }
    }
}
