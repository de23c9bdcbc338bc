//! Peak heap use of one padded block stays within one u8 EM channel, ten
//! f32 feature channels and one f32 probability channel per voxel.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicUsize, Ordering};

use vesicle_core::blocks::{decompose, process_block, MaskPolicy, Pipeline};
use vesicle_core::features::feature_order_tag;
use vesicle_core::forest::{Hyperparams, Node, RandomForestModel, Tree};
use vesicle_core::fusion::FusionParams;
use vesicle_core::synth::{generate_phantom, PhantomSpec};
use vesicle_core::Dims;

struct Counting;

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc(layout);
        if !p.is_null() {
            let now = CURRENT.fetch_add(layout.size(), Ordering::SeqCst) + layout.size();
            PEAK.fetch_max(now, Ordering::SeqCst);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        CURRENT.fetch_sub(layout.size(), Ordering::SeqCst);
    }
}

#[global_allocator]
static ALLOC: Counting = Counting;

fn dark_model() -> RandomForestModel {
    let tree = Tree {
        nodes: vec![
            Node::Split { feature: 0, threshold: 100.0, right: 2 },
            Node::Leaf { fraction: 1.0 },
            Node::Leaf { fraction: 0.0 },
        ],
    };
    let hp = Hyperparams { n_trees: 1, mtry: 3, min_leaf: 5, max_depth: 40, seed: 0 };
    RandomForestModel::from_parts(vec![tree], hp, feature_order_tag()).unwrap()
}

#[test]
fn padded_block_peak_is_bounded() {
    let phantom = generate_phantom(&PhantomSpec { dims: Dims::new(192, 192, 24), synapse_density: 2.0, ..PhantomSpec::default() })
        .unwrap();
    let mask = phantom.membrane.grid().clone();
    let policy = MaskPolicy::Provided(&mask);
    let model = dark_model();
    let pipeline = Pipeline::new(FusionParams::default()).unwrap();
    let decomp = decompose(phantom.em.dims(), [128, 128, 16], [32, 32, 4]).unwrap();
    let spec = decomp.blocks[0];
    let voxels = spec.padded.dims().len();

    let baseline = CURRENT.load(Ordering::SeqCst);
    PEAK.store(baseline, Ordering::SeqCst);
    let out = process_block(&phantom.em, &policy, &model, &pipeline, &spec).unwrap();
    let peak = PEAK.load(Ordering::SeqCst) - baseline;
    drop(out);

    let per_voxel = peak as f64 / voxels as f64;
    eprintln!("peak {per_voxel:.2} B/voxel over {voxels} voxels");
    let ceiling = 1.0 + 10.0 * 4.0 + 4.0;
    assert!(per_voxel <= ceiling, "peak {peak} bytes over {voxels} padded voxels = {per_voxel:.1} B/voxel");
}
