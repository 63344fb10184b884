//! Checkpoints: `model.json` lists each tensor's name, shape, encoding and byte
//! range inside `model.bin`. MR projections are stored in the block format;
//! dense tensors as raw little-endian f64.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ABMILModel, AttentionLayer, ModelSpec, Projection};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::mrblock::{read_block, write_block};
use crate::numerics::Matrix;

pub const CHECKPOINT_MANIFEST: &str = "model.json";
pub const CHECKPOINT_BIN: &str = "model.bin";
const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Encoding {
    MrBlock,
    F64Le,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    encoding: Encoding,
    shape: Vec<usize>,
    offset: usize,
    length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    model: ModelSpec,
    tensors: Vec<TensorEntry>,
}

fn push_dense(bin: &mut Vec<u8>, tensors: &mut Vec<TensorEntry>, name: &str, shape: Vec<usize>, data: &[f64]) {
    let offset = bin.len();
    data.iter().for_each(|x| bin.extend_from_slice(&x.to_le_bytes()));
    tensors.push(TensorEntry { name: name.into(), encoding: Encoding::F64Le, shape, offset, length: bin.len() - offset });
}

fn push_projection(bin: &mut Vec<u8>, tensors: &mut Vec<TensorEntry>, name: &str, p: &Projection) -> Result<()> {
    match p {
        Projection::Linear(m) => push_dense(bin, tensors, name, vec![m.rows(), m.cols()], m.as_slice()),
        Projection::Mr(b) => {
            let offset = bin.len();
            write_block(b, &mut *bin)?;
            tensors.push(TensorEntry {
                name: name.into(),
                encoding: Encoding::MrBlock,
                shape: vec![b.d0(), b.d1(), b.rank()],
                offset,
                length: bin.len() - offset,
            });
        }
    }
    Ok(())
}

pub fn save_checkpoint(model: &ABMILModel, dir: &Path) -> Result<()> {
    let mut bin = Vec::new();
    let mut tensors = Vec::new();
    push_projection(&mut bin, &mut tensors, "attention.v", &model.attention.v)?;
    push_projection(&mut bin, &mut tensors, "attention.u", &model.attention.u)?;
    push_dense(&mut bin, &mut tensors, "attention.w", vec![model.attention.w.len()], &model.attention.w);
    let cw = &model.classifier_w;
    push_dense(&mut bin, &mut tensors, "classifier.w", vec![cw.rows(), cw.cols()], cw.as_slice());
    push_dense(&mut bin, &mut tensors, "classifier.b", vec![model.classifier_b.len()], &model.classifier_b);
    let manifest = Manifest { schema_version: SCHEMA_VERSION, model: model.spec(), tensors };
    write_atomic(&dir.join(CHECKPOINT_BIN), &bin)?;
    write_atomic(&dir.join(CHECKPOINT_MANIFEST), serde_json::to_string_pretty(&manifest)?.as_bytes())
}

fn bad(message: impl Into<String>) -> Error {
    Error::Parse { location: CHECKPOINT_MANIFEST.into(), message: message.into() }
}

pub fn load_checkpoint(dir: &Path) -> Result<ABMILModel> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(CHECKPOINT_MANIFEST))?)?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(bad(format!("unsupported schema version {}", manifest.schema_version)));
    }
    let bin = fs::read(dir.join(CHECKPOINT_BIN))?;
    let find = |name: &str| -> Result<(&TensorEntry, &[u8])> {
        let t = manifest.tensors.iter().find(|t| t.name == name).ok_or_else(|| bad(format!("missing tensor {name}")))?;
        let bytes = bin
            .get(t.offset..t.offset + t.length)
            .ok_or_else(|| bad(format!("tensor {name} lies outside {CHECKPOINT_BIN}")))?;
        Ok((t, bytes))
    };
    let dense = |name: &str| -> Result<(Vec<usize>, Vec<f64>)> {
        let (t, bytes) = find(name)?;
        if t.encoding != Encoding::F64Le || bytes.len() != 8 * t.shape.iter().product::<usize>() {
            return Err(bad(format!("tensor {name} has the wrong encoding or length")));
        }
        Ok((t.shape.clone(), bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect()))
    };
    let matrix = |name: &str| -> Result<Matrix> {
        let (shape, data) = dense(name)?;
        match shape[..] {
            [r, c] => Matrix::new(r, c, data),
            _ => Err(bad(format!("tensor {name} is not two-dimensional"))),
        }
    };
    let projection = |name: &str| -> Result<Projection> {
        let (t, bytes) = find(name)?;
        match t.encoding {
            Encoding::MrBlock => Ok(Projection::Mr(read_block(bytes)?)),
            Encoding::F64Le => Ok(Projection::Linear(matrix(name)?)),
        }
    };
    let model = ABMILModel {
        attention: AttentionLayer { v: projection("attention.v")?, u: projection("attention.u")?, w: dense("attention.w")?.1 },
        classifier_w: matrix("classifier.w")?,
        classifier_b: dense("classifier.b")?.1,
        dropout: manifest.model.dropout,
    };
    if model.spec() != manifest.model {
        return Err(bad("tensors do not match the model description"));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mil::AttentionKind;
    use crate::mrblock::Variant;
    use crate::numerics::RngStream;

    #[test]
    fn round_trip_both_kinds() {
        for attention in [AttentionKind::Linear, AttentionKind::Mr { rank: 3, variant: Variant::AnchorTrainable }] {
            let spec = ModelSpec { input_dim: 9, hidden_dim: 6, classes: 3, dropout: 0.25, attention };
            let mut model = ABMILModel::new(&spec, &RngStream::new(4, 0)).unwrap();
            model.params_mut()[1].iter_mut().for_each(|x| *x += 0.125);
            let dir = tempfile::tempdir().unwrap();
            save_checkpoint(&model, dir.path()).unwrap();
            assert_eq!(load_checkpoint(dir.path()).unwrap(), model);
        }
    }

    #[test]
    fn truncated_binary_is_rejected() {
        let spec = ModelSpec { input_dim: 4, hidden_dim: 3, classes: 2, dropout: 0.0, attention: AttentionKind::Linear };
        let model = ABMILModel::new(&spec, &RngStream::new(0, 0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&model, dir.path()).unwrap();
        let bin = fs::read(dir.path().join(CHECKPOINT_BIN)).unwrap();
        fs::write(dir.path().join(CHECKPOINT_BIN), &bin[..bin.len() - 8]).unwrap();
        assert!(load_checkpoint(dir.path()).is_err());
    }
}
