//! Hand localization decoding on the 48x28 grid.
//!
//! The external localizer network emits a two-channel heatmap (left, right)
//! over a 48x28 downscale of the frame. This module decodes it back to
//! full-frame keypoints and a hand-ID classification; the matching encoder
//! is [`crate::heatmap::localization_target`].

use crate::heatmap::{decode_peak, HeatmapStack, LOCALIZATION_GRID};

/// Channel confidence below which a hand is treated as absent.
pub const DEFAULT_CONF_THRESHOLD: f64 = 0.25;

/// Four-way hand-ID classification of one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HandClass {
    None,
    Left,
    Right,
    TwoHands,
}

/// A decoded hand keypoint in full-frame pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocatedHand {
    pub u: f64,
    pub v: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocatorOutput {
    pub left: Option<LocatedHand>,
    pub right: Option<LocatedHand>,
    pub classification: HandClass,
}

/// Decode a two-channel 48x28 locator heatmap into full-frame keypoints.
///
/// Grid cells map to the frame through their centres, `(g + 0.5) * scale`.
/// Channels whose peak stays below `conf_threshold` yield no hand; an
/// all-zero channel is simply an absent hand, not an error.
pub fn decode_locator(
    stack: &HeatmapStack,
    frame_dims: (u32, u32),
    conf_threshold: f64,
) -> LocatorOutput {
    assert_eq!(stack.channels(), 2, "locator stacks have (left, right) channels");
    let (gw, gh) = LOCALIZATION_GRID;
    debug_assert_eq!((stack.width(), stack.height()), (gw, gh));
    let scale_u = frame_dims.0 as f64 / stack.width() as f64;
    let scale_v = frame_dims.1 as f64 / stack.height() as f64;

    let decode = |channel: u32| -> Option<LocatedHand> {
        match decode_peak(stack, channel) {
            Ok((x, y, confidence)) if confidence > conf_threshold => Some(LocatedHand {
                u: (x as f64 + 0.5) * scale_u,
                v: (y as f64 + 0.5) * scale_v,
                confidence,
            }),
            _ => None,
        }
    };
    let left = decode(0);
    let right = decode(1);
    let classification = match (&left, &right) {
        (Some(_), Some(_)) => HandClass::TwoHands,
        (Some(_), None) => HandClass::Left,
        (None, Some(_)) => HandClass::Right,
        (None, None) => HandClass::None,
    };
    LocatorOutput {
        left,
        right,
        classification,
    }
}
