use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Engine hyperparameters. Unknown keys are rejected when deserializing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Sentences on each side searched by local embedding classification.
    pub n_local: usize,
    /// Sentences on each side shown to the language model.
    pub n_llm: usize,
    /// Neighbours that must agree for a candidate to become an exemplar.
    pub purity_neighbors: usize,
    /// Acceptance threshold `D` on cosine distance.
    pub assign_threshold: f64,
    /// Threshold below which a segment of any length is accepted outright.
    pub high_confidence_threshold: f64,
    pub long_segment_seconds: f64,
    pub silence_split_seconds: f64,
    pub der_collar_seconds: f64,
    /// Maximum visual distance for an identity to count as confident.
    pub visual_confidence_threshold: f64,
    /// Fraction of a segment that must lie in detected overlap to get two labels.
    pub overlap_min_fraction: f64,
    /// Passed through to the feature extractors.
    pub gallery_images_per_character: usize,
    pub crop_width_px: u32,
    pub crop_height_px: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            n_local: 15,
            n_llm: 15,
            purity_neighbors: 5,
            assign_threshold: 0.5,
            high_confidence_threshold: 0.15,
            long_segment_seconds: 2.0,
            silence_split_seconds: 1.0,
            der_collar_seconds: 0.25,
            visual_confidence_threshold: 0.5,
            overlap_min_fraction: 0.5,
            gallery_images_per_character: 10,
            crop_width_px: 350,
            crop_height_px: 350,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::validation("config", m));
        let positive = [
            ("assign_threshold", self.assign_threshold),
            ("high_confidence_threshold", self.high_confidence_threshold),
            ("long_segment_seconds", self.long_segment_seconds),
            ("silence_split_seconds", self.silence_split_seconds),
            ("visual_confidence_threshold", self.visual_confidence_threshold),
            ("overlap_min_fraction", self.overlap_min_fraction),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be a positive finite number, got {v}"));
            }
        }
        if !(self.der_collar_seconds.is_finite() && self.der_collar_seconds >= 0.0) {
            return bad(format!(
                "der_collar_seconds must be non-negative, got {}",
                self.der_collar_seconds
            ));
        }
        for (name, v) in [
            ("n_local", self.n_local),
            ("n_llm", self.n_llm),
            ("purity_neighbors", self.purity_neighbors),
            ("gallery_images_per_character", self.gallery_images_per_character),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.crop_width_px == 0 || self.crop_height_px == 0 {
            return bad("crop dimensions must be positive".into());
        }
        if self.high_confidence_threshold >= self.assign_threshold {
            return bad(format!(
                "high_confidence_threshold ({}) must be below assign_threshold ({})",
                self.high_confidence_threshold, self.assign_threshold
            ));
        }
        if self.overlap_min_fraction > 1.0 {
            return bad("overlap_min_fraction must not exceed 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.n_local, 15);
        assert_eq!(cfg.n_llm, 15);
        assert_eq!(cfg.purity_neighbors, 5);
        assert_eq!(cfg.long_segment_seconds, 2.0);
        assert_eq!(cfg.silence_split_seconds, 1.0);
        assert_eq!(cfg.der_collar_seconds, 0.25);
        assert_eq!((cfg.crop_width_px, cfg.crop_height_px), (350, 350));
        assert_eq!(cfg.gallery_images_per_character, 10);
    }

    #[test]
    fn high_threshold_must_be_below_d() {
        let cfg = PipelineConfig {
            high_confidence_threshold: 0.5,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_window_rejected() {
        let cfg = PipelineConfig {
            n_local: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg: PipelineConfig = serde_json::from_str(r#"{"assign_threshold": 0.7}"#).unwrap();
        assert_eq!(cfg.assign_threshold, 0.7);
        assert_eq!(cfg.n_local, 15);
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"bogus": 1}"#).is_err());
    }
}
