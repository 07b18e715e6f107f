use serde::{Deserialize, Serialize};

use crate::error::{CanError, Result};

/// Residual backbone layout. The stem is a 3×3 convolution; each stage is
/// one residual block. The last stage is replicated per branch and must
/// keep stride 1.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub stem_width: usize,
    pub stem_stride: usize,
    pub widths: Vec<usize>,
    pub strides: Vec<usize>,
    pub input_h: usize,
    pub input_w: usize,
}

impl BackboneConfig {
    /// 96×32 input, cumulative stride 8, 12×4 final map.
    pub fn desk() -> Self {
        BackboneConfig {
            stem_width: 16,
            stem_stride: 2,
            widths: vec![16, 32, 64, 64],
            strides: vec![1, 2, 2, 1],
            input_h: 96,
            input_w: 32,
        }
    }

    /// ResNet50-scale widths on 384×128 input: 2048 channels on a 24×8 map.
    pub fn full_size() -> Self {
        BackboneConfig {
            stem_width: 64,
            stem_stride: 4,
            widths: vec![256, 512, 1024, 2048],
            strides: vec![1, 2, 2, 1],
            input_h: 384,
            input_w: 128,
        }
    }

    /// Tiny network on 48×16 input (12×4 map) for gradient checks.
    pub fn toy() -> Self {
        BackboneConfig {
            stem_width: 3,
            stem_stride: 2,
            widths: vec![3, 4, 4],
            strides: vec![1, 2, 1],
            input_h: 48,
            input_w: 16,
        }
    }

    pub fn cumulative_stride(&self) -> usize {
        self.stem_stride * self.strides.iter().product::<usize>()
    }

    pub fn feature_hw(&self) -> (usize, usize) {
        let s = self.cumulative_stride();
        (self.input_h / s, self.input_w / s)
    }

    pub fn feature_channels(&self) -> usize {
        *self.widths.last().unwrap_or(&0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CanError::Config(msg));
        if self.widths.is_empty() || self.widths.len() != self.strides.len() {
            return bad(format!(
                "backbone needs matching, non-empty widths and strides ({} vs {})",
                self.widths.len(),
                self.strides.len()
            ));
        }
        if self.stem_width == 0 || self.widths.contains(&0) {
            return bad("backbone widths must be positive".into());
        }
        if self.stem_stride == 0 || self.strides.contains(&0) {
            return bad("backbone strides must be positive".into());
        }
        if *self.strides.last().unwrap() != 1 {
            return bad("final backbone stage must have stride 1".into());
        }
        let s = self.cumulative_stride();
        if self.input_h == 0 || self.input_w == 0 || !self.input_h.is_multiple_of(s) || !self.input_w.is_multiple_of(s) {
            return bad(format!(
                "cumulative stride {s} must divide input {}×{}",
                self.input_h, self.input_w
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchSpec {
    pub part_counts: Vec<usize>,
}

impl BranchSpec {
    pub fn new(part_counts: Vec<usize>) -> Self {
        BranchSpec { part_counts }
    }

    pub fn can() -> Self {
        BranchSpec::new(vec![1, 3, 5, 7])
    }

    pub fn validate(&self, feature_h: usize) -> Result<()> {
        if self.part_counts.is_empty() {
            return Err(CanError::Config("branch spec is empty".into()));
        }
        for (i, &n) in self.part_counts.iter().enumerate() {
            if n == 0 || n > feature_h {
                return Err(CanError::Config(format!(
                    "part count {n} must lie in 1..={feature_h} (feature map height)"
                )));
            }
            if self.part_counts[..i].contains(&n) {
                return Err(CanError::Config(format!("duplicate part count {n}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub branches: BranchSpec,
    pub embed_dim: usize,
    pub num_classes: usize,
    pub cosine_scale: f64,
    pub collaborative_attention: bool,
}

impl ModelConfig {
    pub fn desk(num_classes: usize) -> Self {
        ModelConfig {
            backbone: BackboneConfig::desk(),
            branches: BranchSpec::can(),
            embed_dim: 64,
            num_classes,
            cosine_scale: 16.0,
            collaborative_attention: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.branches.validate(self.backbone.feature_hw().0)?;
        if self.embed_dim == 0 {
            return Err(CanError::Config("embed_dim must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(CanError::Config("need at least 2 classes".into()));
        }
        if !(self.cosine_scale > 0.0 && self.cosine_scale.is_finite()) {
            return Err(CanError::Config("cosine_scale must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_and_full_size_maps() {
        assert_eq!(BackboneConfig::desk().feature_hw(), (12, 4));
        assert_eq!(BackboneConfig::full_size().feature_hw(), (24, 8));
        assert_eq!(BackboneConfig::full_size().feature_channels(), 2048);
        assert_eq!(BackboneConfig::toy().feature_hw(), (12, 4));
    }

    #[test]
    fn final_stride_must_be_one() {
        let mut bb = BackboneConfig::desk();
        bb.strides = vec![1, 2, 2, 2];
        assert!(bb.validate().is_err());
    }

    #[test]
    fn stride_must_divide_input() {
        let mut bb = BackboneConfig::desk();
        bb.input_h = 90;
        assert!(bb.validate().is_err());
    }

    #[test]
    fn branch_spec_checks() {
        assert!(BranchSpec::new(vec![1, 3, 3]).validate(12).is_err());
        assert!(BranchSpec::new(vec![13]).validate(12).is_err());
        assert!(BranchSpec::new(vec![0]).validate(12).is_err());
        assert!(BranchSpec::new(vec![1, 2, 3]).validate(12).is_ok());
    }
}
