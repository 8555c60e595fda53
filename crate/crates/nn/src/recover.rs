use pentrace_core::data::TrainingPair;
use pentrace_core::eval::{EvalError, Recoverer};
use pentrace_core::raster::{skeletonize, snap_to_skeleton};
use pentrace_core::{PenTrajectory, RasterImage};

use crate::model::{predict, ModelConfig};
use crate::params::ParameterStore;
use crate::NnError;

/// Trained model as a trajectory recoverer.
#[derive(Debug, Clone)]
pub struct ModelRecoverer {
    pub config: ModelConfig,
    pub params: ParameterStore<f32>,
    /// Replace each predicted point by its nearest skeleton pixel.
    pub snap: bool,
}

impl ModelRecoverer {
    pub fn new(config: ModelConfig, params: ParameterStore<f32>) -> Self {
        ModelRecoverer {
            config,
            params,
            snap: true,
        }
    }

    pub fn recover_image(&self, image: &RasterImage) -> Result<PenTrajectory, NnError> {
        Ok(self.recover_images(&[image])?.remove(0))
    }

    /// Batched prediction, snapped when `snap` is set.
    pub fn recover_images(&self, images: &[&RasterImage]) -> Result<Vec<PenTrajectory>, NnError> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(32) {
            let preds = predict(&self.params, &self.config, chunk)?;
            for (p, img) in preds.into_iter().zip(chunk) {
                out.push(if self.snap { snap(&p, img)? } else { p });
            }
        }
        Ok(out)
    }
}

fn snap(p: &PenTrajectory, img: &RasterImage) -> Result<PenTrajectory, NnError> {
    let skel = skeletonize(img).map_err(|e| NnError::ShapeMismatch(e.to_string()))?;
    snap_to_skeleton(p, &skel).map_err(|e| NnError::ShapeMismatch(e.to_string()))
}

impl Recoverer for ModelRecoverer {
    fn name(&self) -> &str {
        "seq2seq model"
    }

    fn recover(&mut self, sample: &TrainingPair) -> Result<PenTrajectory, EvalError> {
        self.recover_image(&sample.image)
            .map_err(|e| EvalError::Recovery(e.to_string()))
    }
}
