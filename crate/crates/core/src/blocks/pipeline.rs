use crate::error::Result;
use crate::features::{assemble_features, FeatureConfig, FeatureStack};
use crate::forest::{predict_in_place, RandomForestModel};
use crate::fusion::{fuse, FusionParams, ObjectSet};
use crate::vesicle::{find_vesicles, DetectParams, TemplateSource, VesicleSet, VesicleTemplate};
use crate::volume::{MembraneMask, Volume};

/// Every tunable of the detect path: vesicles, features, classification
/// and fusion.
#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    pub template: VesicleTemplate,
    pub vesicles: DetectParams,
    pub features: FeatureConfig,
    pub fusion: FusionParams,
}

impl Pipeline {
    pub fn new(fusion: FusionParams) -> Result<Self> {
        Ok(Pipeline {
            template: VesicleTemplate::build(&TemplateSource::default())?,
            vesicles: DetectParams::default(),
            features: FeatureConfig::default(),
            fusion,
        })
    }

    pub fn find_vesicles(&self, em: &Volume<u8>) -> Result<VesicleSet> {
        find_vesicles(em, &self.template, &self.vesicles)
    }

    /// Vesicle detection followed by the ten feature channels.
    pub fn features(&self, em: &Volume<u8>) -> Result<FeatureStack> {
        let vesicles = self.find_vesicles(em)?;
        assemble_features(em, &vesicles, &self.features)
    }

    /// Synapse probability per voxel; zero outside the mask.
    pub fn probability(&self, em: &Volume<u8>, mask: &MembraneMask, model: &RandomForestModel) -> Result<Volume<f32>> {
        predict_in_place(model, self.features(em)?, mask)
    }

    pub fn objects(&self, em: &Volume<u8>, mask: &MembraneMask, model: &RandomForestModel) -> Result<ObjectSet> {
        let prob = self.probability(em, mask, model)?;
        fuse(&prob, &self.fusion)
    }
}
