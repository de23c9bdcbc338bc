//! The ten-channel feature stack.
//!
//! Features are built in two passes: per-slice 2D transforms of the EM data
//! (intensity, local binary pattern, gradient magnitude, structure-tensor
//! coherence, vesicle indicator), then 3D box means at several bandwidths.
//! A final channel holds the distance to the nearest vesicle.

mod boxfilter;
mod transforms;
mod vesicle_channels;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::atomic::write_bytes_atomic;
use crate::error::{Error, Result};
use crate::hash::fnv1a;
use crate::vesicle::VesicleSet;
use crate::volume::{load_volume_as, save_volume, Dims, Resolution, Volume};

pub use boxfilter::box_filter;
pub use transforms::{gradient_magnitude, lbp_transform, structure_tensor_scalar, LBP_NEIGHBOURS};
pub use vesicle_channels::{vesicle_distance, vesicle_indicator};

/// A box kernel: odd voxel extents along x, y, z.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelSpec {
    pub name: &'static str,
    pub extent: [usize; 3],
}

impl KernelSpec {
    pub const THETA0: KernelSpec = KernelSpec { name: "t0", extent: [5, 5, 1] };
    pub const THETA1: KernelSpec = KernelSpec { name: "t1", extent: [15, 15, 3] };
    pub const THETA2: KernelSpec = KernelSpec { name: "t2", extent: [25, 25, 5] };
    pub const THETA3: KernelSpec = KernelSpec { name: "t3", extent: [101, 101, 5] };

    pub fn custom(extent: [usize; 3]) -> Self {
        KernelSpec { name: "custom", extent }
    }

    pub fn validate(&self) -> Result<()> {
        boxfilter::check_odd(self.extent)
    }

    pub fn half_extent(&self) -> [usize; 3] {
        [self.extent[0] / 2, self.extent[1] / 2, self.extent[2] / 2]
    }
}

pub const NUM_CHANNELS: usize = 10;

/// Channel order. A trained forest is only valid against this exact order;
/// its hash is stored in every model file.
pub const CHANNEL_NAMES: [&str; NUM_CHANNELS] = [
    "intensity_t0",
    "intensity_t1",
    "lbp_t0",
    "gradmag_t1",
    "gradmag_t2",
    "vesicle_density_t2",
    "vesicle_density_t3",
    "vesicle_distance",
    "structure_coherence_t1",
    "structure_coherence_t2",
];

/// Hash of the channel-order contract.
pub fn feature_order_tag() -> u64 {
    fnv1a(CHANNEL_NAMES.join("\n").as_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Gaussian window for the structure tensor, in pixels.
    pub structure_sigma: f32,
    /// Vesicle distances are clamped to this value.
    pub distance_cap_nm: f32,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            structure_sigma: 2.0,
            distance_cap_nm: 2000.0,
        }
    }
}

/// Ten aligned f32 channels over one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    dims: Dims,
    resolution: Resolution,
    channels: Vec<Volume<f32>>,
}

impl FeatureStack {
    pub fn new(channels: Vec<Volume<f32>>) -> Result<Self> {
        if channels.len() != NUM_CHANNELS {
            return Err(Error::param(format!("feature stack needs {NUM_CHANNELS} channels, got {}", channels.len())));
        }
        let dims = channels[0].dims();
        let resolution = channels[0].resolution();
        if channels.iter().any(|c| c.dims() != dims) {
            return Err(Error::param("feature channels have mismatched dims"));
        }
        Ok(FeatureStack { dims, resolution, channels })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn channels(&self) -> &[Volume<f32>] {
        &self.channels
    }

    pub fn channel(&self, c: usize) -> &Volume<f32> {
        &self.channels[c]
    }

    /// Feature vector of voxel `index`.
    #[inline]
    pub fn row(&self, index: usize) -> [f32; NUM_CHANNELS] {
        std::array::from_fn(|c| self.channels[c].data()[index])
    }

    pub fn into_channels(self) -> Vec<Volume<f32>> {
        self.channels
    }

    /// Writes one VSV1 volume per channel plus `manifest.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = Vec::with_capacity(NUM_CHANNELS);
        for (i, (ch, name)) in self.channels.iter().zip(CHANNEL_NAMES).enumerate() {
            let file = format!("{i:02}_{name}.vsv");
            save_volume(ch, &dir.join(&file))?;
            files.push(file);
        }
        let manifest = StackManifest {
            feature_order_tag: format!("{:016x}", feature_order_tag()),
            channels: CHANNEL_NAMES.iter().map(|s| s.to_string()).collect(),
            files,
        };
        let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        write_bytes_atomic(&dir.join("manifest.json"), &json)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: StackManifest =
            serde_json::from_slice(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if manifest.channels != CHANNEL_NAMES || manifest.feature_order_tag != format!("{:016x}", feature_order_tag()) {
            return Err(Error::ModelCompatibility(format!(
                "{}: channel order {:?} does not match {:?}",
                path.display(),
                manifest.channels,
                CHANNEL_NAMES
            )));
        }
        let channels = manifest
            .files
            .iter()
            .map(|f| load_volume_as::<f32>(&dir.join(f)))
            .collect::<Result<Vec<_>>>()?;
        FeatureStack::new(channels)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct StackManifest {
    feature_order_tag: String,
    channels: Vec<String>,
    files: Vec<String>,
}

/// Computes all ten channels for `em`, given vesicles detected on it.
///
/// Channels are computed in an order that keeps the number of full-size
/// temporaries small: the distance transform first, while little else is
/// allocated, and the intensity means last, straight from the u8 data.
pub fn assemble_features(em: &Volume<u8>, vesicles: &VesicleSet, config: &FeatureConfig) -> Result<FeatureStack> {
    let dims = em.dims();
    let res = em.resolution();
    let mut channels: [Option<Volume<f32>>; NUM_CHANNELS] = Default::default();

    channels[7] = Some(vesicle_distance(dims, res, vesicles, config.distance_cap_nm)?);

    let lbp = lbp_transform(em);
    channels[2] = Some(box_filter(&lbp, &KernelSpec::THETA0)?);
    drop(lbp);

    let grad = gradient_magnitude(em);
    channels[3] = Some(box_filter(&grad, &KernelSpec::THETA1)?);
    channels[4] = Some(box_filter(&grad, &KernelSpec::THETA2)?);
    drop(grad);

    let indicator = vesicle_indicator(dims, res, vesicles)?;
    channels[5] = Some(box_filter(&indicator, &KernelSpec::THETA2)?);
    channels[6] = Some(box_filter(&indicator, &KernelSpec::THETA3)?);
    drop(indicator);

    let coherence = structure_tensor_scalar(em, config.structure_sigma)?;
    channels[8] = Some(box_filter(&coherence, &KernelSpec::THETA1)?);
    channels[9] = Some(box_filter(&coherence, &KernelSpec::THETA2)?);
    drop(coherence);

    channels[0] = Some(box_filter(em, &KernelSpec::THETA0)?);
    channels[1] = Some(box_filter(em, &KernelSpec::THETA1)?);

    FeatureStack::new(channels.into_iter().map(|c| c.expect("every channel computed")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vesicle::Vesicle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kernel_constants() {
        assert_eq!(KernelSpec::THETA0.extent, [5, 5, 1]);
        assert_eq!(KernelSpec::THETA1.extent, [15, 15, 3]);
        assert_eq!(KernelSpec::THETA2.extent, [25, 25, 5]);
        assert_eq!(KernelSpec::THETA3.extent, [101, 101, 5]);
        for k in [KernelSpec::THETA0, KernelSpec::THETA1, KernelSpec::THETA2, KernelSpec::THETA3] {
            k.validate().unwrap();
        }
    }

    #[test]
    fn constant_volume_without_vesicles() {
        let em = Volume::filled(Dims::new(20, 18, 6), Resolution::default(), 120u8).unwrap();
        let fs = assemble_features(&em, &VesicleSet::default(), &FeatureConfig::default()).unwrap();
        assert_eq!(fs.channels().len(), 10);
        let all = |c: usize, v: f32| fs.channel(c).data().iter().all(|&x| (x - v).abs() < 1e-3);
        assert!(all(0, 120.0) && all(1, 120.0));
        assert!(all(2, 255.0));
        assert!(all(3, 0.0) && all(4, 0.0));
        assert!(all(5, 0.0) && all(6, 0.0) && all(7, 2000.0));
        assert!(all(8, 0.0) && all(9, 0.0));
    }

    #[test]
    fn density_channel_is_box_filtered_indicator() {
        let dims = Dims::new(30, 24, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let em = Volume::from_vec(dims, Resolution::default(), (0..dims.len()).map(|_| rng.random::<u8>()).collect()).unwrap();
        let ves = VesicleSet::new(vec![Vesicle { position: [11, 7, 3], score: 0.9 }]);
        let fs = assemble_features(&em, &ves, &FeatureConfig::default()).unwrap();
        let oracle = box_filter(&vesicle_indicator(dims, em.resolution(), &ves).unwrap(), &KernelSpec::THETA3).unwrap();
        assert_eq!(fs.channel(6), &oracle);
        assert!(fs.channels().iter().all(|c| c.data().iter().all(|v| v.is_finite())));
    }

    #[test]
    fn stack_save_load_roundtrip() {
        let dims = Dims::new(6, 5, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let em = Volume::from_vec(dims, Resolution::default(), (0..dims.len()).map(|_| rng.random::<u8>()).collect()).unwrap();
        let fs = assemble_features(&em, &VesicleSet::default(), &FeatureConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        fs.save(dir.path()).unwrap();
        assert_eq!(FeatureStack::load(dir.path()).unwrap(), fs);
    }

    #[test]
    fn stack_requires_ten_channels() {
        let c = Volume::filled(Dims::new(2, 2, 1), Resolution::default(), 0f32).unwrap();
        assert!(FeatureStack::new(vec![c; 9]).is_err());
    }
}
