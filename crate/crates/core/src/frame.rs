use crate::camera::Camera;
use crate::error::{LarmError, Result};

/// One rendered or predicted view: the universal record passed between
/// rendering, training, inference and reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleFrame {
    /// H x W x 3, values in [0, 1].
    pub rgb: Vec<f32>,
    /// Camera-frame depth, 0 on background.
    pub depth: Vec<f32>,
    pub fg_mask: Vec<bool>,
    pub part_mask: Vec<bool>,
    pub camera: Camera,
    pub theta: f64,
    pub joint_id: usize,
}

impl SampleFrame {
    pub fn width(&self) -> usize {
        self.camera.width()
    }

    pub fn height(&self) -> usize {
        self.camera.height()
    }

    pub fn pixel_count(&self) -> usize {
        self.width() * self.height()
    }

    /// Checks buffer sizes, `part ⊆ fg`, and `depth > 0 ⇔ fg`.
    pub fn validate(&self) -> Result<()> {
        let n = self.pixel_count();
        if self.rgb.len() != 3 * n || self.depth.len() != n || self.fg_mask.len() != n || self.part_mask.len() != n {
            return Err(LarmError::ShapeMismatch("frame buffer sizes".into()));
        }
        for i in 0..n {
            if self.part_mask[i] && !self.fg_mask[i] {
                return Err(LarmError::ShapeMismatch(format!("part pixel {i} outside foreground")));
            }
            if (self.depth[i] > 0.0) != self.fg_mask[i] {
                return Err(LarmError::ShapeMismatch(format!("depth/foreground disagree at {i}")));
            }
        }
        Ok(())
    }

    pub fn fg_count(&self) -> usize {
        self.fg_mask.iter().filter(|&&m| m).count()
    }
}
