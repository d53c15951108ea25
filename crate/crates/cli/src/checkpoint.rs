//! Network checkpoints in the container format: every parameter tensor
//! plus the architecture, system dimensions, and a training-stage tag.

use std::path::Path;

use sblu_core::autodiff::Tensor;
use sblu_core::channel::SystemConfig;
use sblu_core::container::Container;
use sblu_core::measurement::BeamPhases;
use sblu_core::sblnet::{ArchConfig, CombinerParams, NetworkParams, SblLayerParams};

use crate::CliError;

pub fn save_checkpoint(
    path: &Path,
    net: &NetworkParams,
    sys: &SystemConfig,
    stage: &str,
) -> Result<(), CliError> {
    let mut c = Container::new();
    c.set_meta("kind", "checkpoint");
    c.set_meta("stage", stage);
    c.set_meta("layers", net.arch.layers);
    c.set_meta("n_filters", net.arch.n_filters);
    c.set_meta("filter_size", net.arch.filter_size);
    c.set_meta("multi_block", net.arch.multi_block);
    c.set_meta("n_tx", sys.n_tx);
    c.set_meta("n_rx", sys.n_rx);
    c.set_meta("m_tx", sys.m_tx);
    c.set_meta("m_rx", sys.m_rx);
    c.set_meta("n_rf_rx", sys.n_rf_rx);
    c.set_meta("grid", sys.grid);
    c.set_meta("n_sc", sys.n_sc);
    for (i, layer) in net.layers.iter().enumerate() {
        c.push_tensor(&format!("layer{i}.conv1_w"), &layer.conv1_w);
        c.push_tensor(&format!("layer{i}.conv1_b"), &layer.conv1_b);
        c.push_tensor(&format!("layer{i}.conv2_w"), &layer.conv2_w);
        c.push_tensor(&format!("layer{i}.conv2_b"), &layer.conv2_b);
    }
    c.push_tensor("phases.w", &phase_tensor(&net.phases.w_phase));
    c.push_tensor("phases.f", &phase_tensor(&net.phases.f_phase));
    if let Some(comb) = &net.combiner {
        c.push_tensor("combiner.fc1_w", &comb.fc1_w);
        c.push_tensor("combiner.fc1_b", &comb.fc1_b);
        c.push_tensor("combiner.fc2_w", &comb.fc2_w);
        c.push_tensor("combiner.fc2_b", &comb.fc2_b);
    }
    c.write_to(path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(NetworkParams, String), CliError> {
    let c = Container::read_from(path)?;
    if c.meta_get("kind") != Some("checkpoint") {
        return Err(CliError::Config(format!(
            "{} is not a checkpoint container",
            path.display()
        )));
    }
    let stage = c.meta_get("stage").unwrap_or("unknown").to_string();
    let arch = ArchConfig {
        layers: meta_num(&c, "layers")?,
        n_filters: meta_num(&c, "n_filters")?,
        filter_size: meta_num(&c, "filter_size")?,
        multi_block: c.meta_get("multi_block") == Some("true"),
    };
    let mut layers = Vec::with_capacity(arch.layers);
    for i in 0..arch.layers {
        layers.push(SblLayerParams {
            conv1_w: c.get_tensor(&format!("layer{i}.conv1_w"))?,
            conv1_b: c.get_tensor(&format!("layer{i}.conv1_b"))?,
            conv2_w: c.get_tensor(&format!("layer{i}.conv2_w"))?,
            conv2_b: c.get_tensor(&format!("layer{i}.conv2_b"))?,
        });
    }
    let phases = BeamPhases {
        w_phase: tensor_rows(&c.get_tensor("phases.w")?),
        f_phase: tensor_rows(&c.get_tensor("phases.f")?),
    };
    let combiner = if c.get("combiner.fc1_w").is_some() {
        Some(CombinerParams {
            fc1_w: c.get_tensor("combiner.fc1_w")?,
            fc1_b: c.get_tensor("combiner.fc1_b")?,
            fc2_w: c.get_tensor("combiner.fc2_w")?,
            fc2_b: c.get_tensor("combiner.fc2_b")?,
        })
    } else {
        None
    };
    Ok((
        NetworkParams {
            arch,
            layers,
            phases,
            combiner,
        },
        stage,
    ))
}

/// FNV-1a over the container bytes; logged so runs can tell checkpoints
/// apart.
pub fn content_hash(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path)?;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    Ok(format!("{h:016x}"))
}

fn phase_tensor(rows: &[Vec<f64>]) -> Tensor {
    Tensor::from_fn(&[rows.len(), rows[0].len()], |ix| rows[ix[0]][ix[1]])
}

fn tensor_rows(t: &Tensor) -> Vec<Vec<f64>> {
    let (r, c) = (t.shape()[0], t.shape()[1]);
    (0..r)
        .map(|i| t.data()[i * c..(i + 1) * c].to_vec())
        .collect()
}

fn meta_num(c: &Container, key: &str) -> Result<usize, CliError> {
    c.meta_get(key)
        .ok_or_else(|| CliError::Config(format!("checkpoint missing {key:?}")))?
        .parse()
        .map_err(|_| CliError::Config(format!("bad {key:?} in checkpoint")))
}
