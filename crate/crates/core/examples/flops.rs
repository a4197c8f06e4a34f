//! Per-image FLOPs of the shipped backbones and of a tree's routing paths.

use trunk::config::{Backbone, DatasetName};
use trunk::data::DatasetHandle;
use trunk::model::{count_flops, make_node_network, BackboneSpec};

fn main() -> trunk::Result<()> {
    for &name in &[DatasetName::Emnist, DatasetName::Cifar10, DatasetName::Svhn] {
        let handle = DatasetHandle::published(name).expect("published dataset");
        for &family in Backbone::ALL {
            let spec = BackboneSpec::shipped(family, handle.image_shape);
            let flat = make_node_network(&spec, handle.num_categories, 0)?;
            let binary = make_node_network(&spec, 2, 0)?;
            let flat_flops = count_flops(&flat, handle.image_shape)?;
            let node_flops = count_flops(&binary, handle.image_shape)?;
            println!(
                "{name:<8} {family:<9} params {:>7}  flat {:>9}  two-way node {:>9}  depth-3 path {:>9}",
                flat.net.num_params(),
                flat_flops,
                node_flops,
                3 * node_flops
            );
        }
    }
    Ok(())
}
