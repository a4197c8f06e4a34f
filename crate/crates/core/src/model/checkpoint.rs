//! Node weights on disk: a raw little-endian `f64` blob plus a JSON index.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::layers::Layer;
use super::{make_node_network, BackboneSpec, NodeNetwork};
use crate::error::{fsx, Error, Result};

pub const WEIGHTS_FORMAT: &str = "trunk-weights/1";
const BLOB: &str = "weights.bin";
const INDEX: &str = "weights.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub out_groups: usize,
    pub sha256: String,
    pub tensors: Vec<TensorEntry>,
    pub spec: BackboneSpec,
}

fn named_tensors(net: &NodeNetwork) -> Vec<(String, Vec<usize>, &[f64])> {
    let mut out: Vec<(String, Vec<usize>, &[f64])> = Vec::new();
    for (i, l) in net.net.layers.iter().enumerate() {
        let p = format!("{i}.{}", l.name());
        match l {
            Layer::Conv(c) => {
                out.push((
                    format!("{p}.weight"),
                    vec![c.out_channels, c.in_channels / c.groups, c.kernel, c.kernel],
                    &c.weight.value,
                ));
                out.push((format!("{p}.bias"), vec![c.out_channels], &c.bias.value));
            }
            Layer::Norm(n) => {
                out.push((format!("{p}.gamma"), vec![n.channels], &n.gamma.value));
                out.push((format!("{p}.beta"), vec![n.channels], &n.beta.value));
                out.push((format!("{p}.running_mean"), vec![n.channels], &n.running_mean));
                out.push((format!("{p}.running_var"), vec![n.channels], &n.running_var));
            }
            Layer::Linear(f) => {
                out.push((
                    format!("{p}.weight"),
                    vec![f.out_features, f.in_features],
                    &f.weight.value,
                ));
                out.push((format!("{p}.bias"), vec![f.out_features], &f.bias.value));
            }
            _ => {}
        }
    }
    out
}

fn tensor_slots(net: &mut NodeNetwork) -> Vec<&mut Vec<f64>> {
    let mut out = Vec::new();
    for l in &mut net.net.layers {
        match l {
            Layer::Conv(c) => {
                out.push(&mut c.weight.value);
                out.push(&mut c.bias.value);
            }
            Layer::Norm(n) => {
                out.push(&mut n.gamma.value);
                out.push(&mut n.beta.value);
                out.push(&mut n.running_mean);
                out.push(&mut n.running_var);
            }
            Layer::Linear(f) => {
                out.push(&mut f.weight.value);
                out.push(&mut f.bias.value);
            }
            _ => {}
        }
    }
    out
}

/// Write `weights.bin` and `weights.json` into `dir`.
pub fn save_checkpoint(net: &NodeNetwork, dir: &Path) -> Result<CheckpointMeta> {
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    let mut offset = 0;
    for (name, shape, values) in named_tensors(net) {
        for v in values {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        tensors.push(TensorEntry {
            name,
            shape,
            offset,
            len: values.len(),
        });
        offset += values.len();
    }
    let meta = CheckpointMeta {
        format: WEIGHTS_FORMAT.into(),
        out_groups: net.out_groups,
        sha256: hex::encode(Sha256::digest(&blob)),
        tensors,
        spec: net.spec.clone(),
    };
    fsx::write_atomic(&dir.join(BLOB), &blob)?;
    fsx::write_atomic(&dir.join(INDEX), serde_json::to_string_pretty(&meta)?.as_bytes())?;
    Ok(meta)
}

/// Rebuild a node network from a checkpoint directory.
pub fn load_checkpoint(dir: &Path) -> Result<NodeNetwork> {
    let index = dir.join(INDEX);
    if !index.exists() {
        return Err(Error::MissingCheckpoint(dir.display().to_string()));
    }
    let meta: CheckpointMeta = serde_json::from_str(&fsx::read_to_string(&index)?)?;
    if meta.format != WEIGHTS_FORMAT {
        return Err(Error::Checkpoint(format!("unknown format {:?}", meta.format)));
    }
    let blob = fsx::read(&dir.join(BLOB))?;
    if hex::encode(Sha256::digest(&blob)) != meta.sha256 {
        return Err(Error::Checkpoint(format!("{}: checksum mismatch", dir.display())));
    }
    let values: Vec<f64> = blob
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    let mut net = make_node_network(&meta.spec, meta.out_groups, 0)?;
    let expected: Vec<(String, usize)> = named_tensors(&net).into_iter().map(|(n, _, v)| (n, v.len())).collect();
    if expected.len() != meta.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {}",
            expected.len(),
            meta.tensors.len()
        )));
    }
    for (slot, (entry, (name, len))) in tensor_slots(&mut net)
        .into_iter()
        .zip(meta.tensors.iter().zip(expected))
    {
        if entry.name != name || entry.len != len || entry.offset + len > values.len() {
            return Err(Error::Checkpoint(format!(
                "tensor {} does not match {name}",
                entry.name
            )));
        }
        slot.copy_from_slice(&values[entry.offset..entry.offset + len]);
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Backbone;
    use crate::tensor::ImageShape;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut net = make_node_network(&BackboneSpec::shipped(Backbone::Vgg, ImageShape::new(3, 8, 8)), 3, 4).unwrap();
        if let Layer::Norm(n) = &mut net.net.layers[1] {
            n.running_mean[0] = 0.25;
        }
        let meta = save_checkpoint(&net, dir.path()).unwrap();
        assert_eq!(meta.format, WEIGHTS_FORMAT);
        assert_eq!(load_checkpoint(dir.path()).unwrap(), net);
    }

    #[test]
    fn corrupt_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let net = make_node_network(
            &BackboneSpec::shipped(Backbone::Mobilenet, ImageShape::new(1, 8, 8)),
            2,
            0,
        )
        .unwrap();
        save_checkpoint(&net, dir.path()).unwrap();
        let mut blob = std::fs::read(dir.path().join(BLOB)).unwrap();
        blob[0] ^= 1;
        std::fs::write(dir.path().join(BLOB), blob).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Checkpoint(_))));
        assert!(matches!(
            load_checkpoint(&dir.path().join("nope")),
            Err(Error::MissingCheckpoint(_))
        ));
    }
}
