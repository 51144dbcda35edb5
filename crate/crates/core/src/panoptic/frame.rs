//! Per-pixel class-probability frames and thresholded discrete masks.

use smallvec::SmallVec;
use thiserror::Error;

use super::registry::{ClassId, ClassRegistry, UNKNOWN_CLASS};

#[derive(Debug, Error, PartialEq)]
pub enum PanopticError {
    #[error("pixel ({u},{v}) out of bounds for {w}x{h} frame")]
    PixelOutOfBounds { u: u32, v: u32, w: u32, h: u32 },
    #[error("pixel distribution invalid: {0}")]
    BadDistribution(String),
    #[error("class id {0} not present in registry")]
    UnknownClassId(ClassId),
    #[error("instance id set on non-thing pixel {0}")]
    InstanceOnStuff(usize),
}

type PixelDist = SmallVec<[(ClassId, f32); 2]>;

/// Soft segmentation output: a (possibly sub-normalized) class probability
/// vector per pixel plus instance ids for "thing" pixels. Missing probability
/// mass models abstention, which is what makes ambiguous-terrain pixels
/// expressible.
#[derive(Debug, Clone, PartialEq)]
pub struct PanopticFrame {
    pub width: u32,
    pub height: u32,
    pub stamp: f64,
    dists: Vec<PixelDist>,
    instances: Vec<u32>,
}

impl PanopticFrame {
    /// Frame where every pixel abstains (zero probability mass).
    pub fn new_abstain(width: u32, height: u32, stamp: f64) -> Self {
        let n = (width as usize) * (height as usize);
        Self {
            width,
            height,
            stamp,
            dists: vec![PixelDist::new(); n],
            instances: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.dists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dists.is_empty()
    }

    #[inline]
    pub fn index(&self, u: u32, v: u32) -> usize {
        (v as usize) * (self.width as usize) + u as usize
    }

    pub fn set_pixel(
        &mut self,
        u: u32,
        v: u32,
        dist: &[(ClassId, f32)],
        instance: u32,
    ) -> Result<(), PanopticError> {
        if u >= self.width || v >= self.height {
            return Err(PanopticError::PixelOutOfBounds {
                u,
                v,
                w: self.width,
                h: self.height,
            });
        }
        let mut sum = 0.0f32;
        for &(_, p) in dist {
            if !(0.0..=1.0).contains(&p) {
                return Err(PanopticError::BadDistribution(format!(
                    "probability {p} outside [0,1]"
                )));
            }
            sum += p;
        }
        if sum > 1.0 + 1e-6 {
            return Err(PanopticError::BadDistribution(format!(
                "probability mass {sum} exceeds 1"
            )));
        }
        let idx = self.index(u, v);
        self.dists[idx] = PixelDist::from_slice(dist);
        self.instances[idx] = instance;
        Ok(())
    }

    /// Highest-probability class at a pixel, ties broken toward the lower
    /// class id. `None` when the pixel carries no probability mass.
    pub fn argmax(&self, idx: usize) -> Option<(ClassId, f32)> {
        let mut best: Option<(ClassId, f32)> = None;
        for &(c, p) in &self.dists[idx] {
            if p <= 0.0 {
                continue;
            }
            best = match best {
                None => Some((c, p)),
                Some((bc, bp)) if p > bp || (p == bp && c < bc) => Some((c, p)),
                keep => keep,
            };
        }
        best
    }

    pub fn instance(&self, idx: usize) -> u32 {
        self.instances[idx]
    }

    pub fn dist(&self, idx: usize) -> &[(ClassId, f32)] {
        &self.dists[idx]
    }

    /// Re-encode a discrete mask as a one-hot frame (unknown pixels abstain).
    pub fn from_mask_one_hot(mask: &PanopticMask) -> Self {
        let mut frame = Self::new_abstain(mask.width, mask.height, mask.stamp);
        for idx in 0..mask.classes.len() {
            if mask.classes[idx] != UNKNOWN_CLASS {
                frame.dists[idx] = PixelDist::from_slice(&[(mask.classes[idx], 1.0)]);
                frame.instances[idx] = mask.instances[idx];
            }
        }
        frame
    }

    /// Check registry-dependent invariants: instance ids appear only where
    /// the argmax class is a thing, and every referenced class id exists.
    pub fn validate(&self, registry: &ClassRegistry) -> Result<(), PanopticError> {
        for idx in 0..self.dists.len() {
            for &(c, _) in &self.dists[idx] {
                if !registry.contains(c) {
                    return Err(PanopticError::UnknownClassId(c));
                }
            }
            if self.instances[idx] != 0 {
                let thing = self
                    .argmax(idx)
                    .map_or(false, |(c, _)| registry.is_thing(c));
                if !thing {
                    return Err(PanopticError::InstanceOnStuff(idx));
                }
            }
        }
        Ok(())
    }
}

/// Discrete panoptic mask: class id (0 = unknown) and instance id per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct PanopticMask {
    pub width: u32,
    pub height: u32,
    pub stamp: f64,
    pub classes: Vec<ClassId>,
    pub instances: Vec<u32>,
}

impl PanopticMask {
    pub fn filled(width: u32, height: u32, stamp: f64, class: ClassId) -> Self {
        let n = (width as usize) * (height as usize);
        Self {
            width,
            height,
            stamp,
            classes: vec![class; n],
            instances: vec![0; n],
        }
    }

    #[inline]
    pub fn index(&self, u: u32, v: u32) -> usize {
        (v as usize) * (self.width as usize) + u as usize
    }

    pub fn class_at(&self, u: u32, v: u32) -> ClassId {
        self.classes[self.index(u, v)]
    }

    pub fn instance_at(&self, u: u32, v: u32) -> u32 {
        self.instances[self.index(u, v)]
    }

    pub fn validate(&self, registry: &ClassRegistry) -> Result<(), PanopticError> {
        for &c in &self.classes {
            if !registry.contains(c) {
                return Err(PanopticError::UnknownClassId(c));
            }
        }
        Ok(())
    }
}

/// Threshold a soft frame into a discrete mask: a pixel keeps its argmax
/// class iff the maximum probability is positive and at least `tau`;
/// otherwise it becomes unknown. Instance ids survive only on pixels that
/// keep their class.
pub fn threshold_frame(frame: &PanopticFrame, tau: f64) -> PanopticMask {
    let n = frame.len();
    let mut classes = vec![UNKNOWN_CLASS; n];
    let mut instances = vec![0u32; n];
    for idx in 0..n {
        if let Some((c, p)) = frame.argmax(idx) {
            if (p as f64) >= tau {
                classes[idx] = c;
                instances[idx] = frame.instance(idx);
            }
        }
    }
    PanopticMask {
        width: frame.width,
        height: frame.height,
        stamp: frame.stamp,
        classes,
        instances,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame_1px(dist: &[(ClassId, f32)]) -> PanopticFrame {
        let mut f = PanopticFrame::new_abstain(1, 1, 0.0);
        f.set_pixel(0, 0, dist, 0).unwrap();
        f
    }

    #[test]
    fn confident_pixel_keeps_class() {
        let f = frame_1px(&[(1, 0.9)]);
        let m = threshold_frame(&f, 0.5);
        assert_eq!(m.classes[0], 1);
    }

    #[test]
    fn split_confidence_becomes_unknown() {
        // dirt 0.4, gravel 0.4, pavement 0.2 at tau 0.5: no class crosses.
        let f = frame_1px(&[(5, 0.4), (3, 0.4), (2, 0.2)]);
        let m = threshold_frame(&f, 0.5);
        assert_eq!(m.classes[0], UNKNOWN_CLASS);
    }

    #[test]
    fn zero_threshold_keeps_argmax_except_zero_mass() {
        let f = frame_1px(&[(4, 0.2), (6, 0.1)]);
        assert_eq!(threshold_frame(&f, 0.0).classes[0], 4);
        let empty = PanopticFrame::new_abstain(1, 1, 0.0);
        assert_eq!(threshold_frame(&empty, 0.0).classes[0], UNKNOWN_CLASS);
    }

    #[test]
    fn instance_dropped_when_thresholded_out() {
        let mut f = PanopticFrame::new_abstain(2, 1, 0.0);
        f.set_pixel(0, 0, &[(20, 0.9)], 7).unwrap();
        f.set_pixel(1, 0, &[(20, 0.3)], 7).unwrap();
        let m = threshold_frame(&f, 0.5);
        assert_eq!(m.instances, vec![7, 0]);
        assert_eq!(m.classes, vec![20, UNKNOWN_CLASS]);
    }

    #[test]
    fn overfull_distribution_rejected() {
        let mut f = PanopticFrame::new_abstain(1, 1, 0.0);
        let err = f.set_pixel(0, 0, &[(1, 0.8), (2, 0.4)], 0).unwrap_err();
        assert!(matches!(err, PanopticError::BadDistribution(_)));
    }

    fn arb_frame() -> impl Strategy<Value = PanopticFrame> {
        let pixel = prop::collection::vec((1u8..30, 0.0f32..0.6), 0..3);
        prop::collection::vec(pixel, 16).prop_map(|pixels| {
            let mut f = PanopticFrame::new_abstain(4, 4, 0.0);
            for (i, dist) in pixels.into_iter().enumerate() {
                // Cap the mass at 1 by scaling down when needed.
                let sum: f32 = dist.iter().map(|d| d.1).sum();
                let scale = if sum > 1.0 { 0.99 / sum } else { 1.0 };
                let dist: Vec<(ClassId, f32)> =
                    dist.into_iter().map(|(c, p)| (c, p * scale)).collect();
                f.set_pixel(i as u32 % 4, i as u32 / 4, &dist, 0).unwrap();
            }
            f
        })
    }

    proptest! {
        // Raising tau never converts an unknown pixel into a known class.
        #[test]
        fn threshold_monotone(f in arb_frame(), t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let m_lo = threshold_frame(&f, lo);
            let m_hi = threshold_frame(&f, hi);
            for i in 0..m_lo.classes.len() {
                if m_hi.classes[i] != UNKNOWN_CLASS {
                    prop_assert!(m_lo.classes[i] != UNKNOWN_CLASS);
                }
            }
        }

        // Re-encoding a mask one-hot and thresholding at any tau <= 1 is the identity.
        #[test]
        fn threshold_idempotent(f in arb_frame(), tau in 0.0f64..=1.0) {
            let mask = threshold_frame(&f, 0.3);
            let onehot = PanopticFrame::from_mask_one_hot(&mask);
            let again = threshold_frame(&onehot, tau);
            prop_assert_eq!(mask, again);
        }
    }
}
