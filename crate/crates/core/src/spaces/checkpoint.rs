//! Model checkpoints: a UTF-8 key=value header (format version, fusion
//! mode, encoder bindings and their resource references, tensor directory)
//! terminated by a blank line, followed by the raw little-endian `f32`
//! tensors in the header-declared order.
//!
//! Frozen resources (vocabularies, the w2v table, precomputed sentence
//! vectors) are stored as file references, not embedded; loading re-reads
//! them from the recorded paths unless an override redirects a kind.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::encoders::{load_embedding_table, load_precomputed, GruEncoder, GruParams};
use crate::error::{Error, Result};
use crate::textproc::Vocabulary;

use super::{
    EncoderKind, FusionMode, MultiSpaceModel, SentenceEncoder, TensorView, TensorViewMut,
    DEFAULT_TRANSFORM_DIM,
};

const MAGIC_LINE: &str = "sea-checkpoint";
const FORMAT_VERSION: u32 = 1;

/// Redirect the frozen resources referenced by a checkpoint, e.g. after
/// files have moved. Each override applies to every encoder of its kind.
#[derive(Debug, Clone, Default)]
pub struct CheckpointOverrides {
    pub bow_vocab: Option<PathBuf>,
    pub seq_vocab: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub precomputed: Option<PathBuf>,
}

/// Write the model and the resource reference of each bound encoder
/// (vocabulary file, embedding table, or precomputed-vector container, in
/// [`MultiSpaceModel::flat_encoders`] order).
pub fn save_checkpoint(
    model: &MultiSpaceModel<f32>,
    path: &Path,
    resources: &[String],
) -> Result<()> {
    let encoders: Vec<&SentenceEncoder<f32>> = model.flat_encoders().collect();
    if encoders.len() != resources.len() {
        return Err(Error::Dimension {
            context: "checkpoint resource references".into(),
            expected: encoders.len(),
            got: resources.len(),
        });
    }

    let mut header = String::new();
    header.push_str(MAGIC_LINE);
    header.push('\n');
    header.push_str(&format!("format={FORMAT_VERSION}\n"));
    header.push_str(&format!("fusion={}\n", model.fusion.tag()));
    header.push_str(&format!("k={}\n", model.k()));
    header.push_str(&format!("d_v={}\n", model.d_v));
    header.push_str(&format!("d_c={}\n", model.d_c()));
    if model.fusion == FusionMode::TransformedConcat {
        let width = match &model.subnets[0].encoder {
            super::CompositeEncoder::Transformed { transforms, .. } => transforms[0].d_out(),
            _ => DEFAULT_TRANSFORM_DIM,
        };
        header.push_str(&format!("transform_dim={width}\n"));
    }
    header.push_str(&format!("encoder_count={}\n", encoders.len()));
    for (i, (enc, resource)) in encoders.iter().zip(resources).enumerate() {
        header.push_str(&format!("encoder{i}.kind={}\n", enc.kind().tag()));
        header.push_str(&format!("encoder{i}.dim={}\n", enc.output_dim()));
        header.push_str(&format!("encoder{i}.resource={resource}\n"));
        match enc {
            SentenceEncoder::Recurrent(gru) => {
                header.push_str(&format!("encoder{i}.hidden={}\n", gru.hidden()));
                header.push_str(&format!("encoder{i}.d_emb={}\n", gru.d_emb()));
            }
            SentenceEncoder::Precomputed { store } => {
                header.push_str(&format!("encoder{i}.model={}\n", store.model_label));
                header.push_str(&format!("encoder{i}.pooling={}\n", store.pooling_label));
            }
            _ => {}
        }
    }

    let mut names = Vec::new();
    let mut data: Vec<u8> = Vec::new();
    model.visit_params(&mut |name, view: TensorView<'_, f32>| {
        let (rows, cols) = view.shape2();
        names.push((name, rows, cols));
        for v in view.iter() {
            data.extend_from_slice(&v.to_le_bytes());
        }
    });
    header.push_str(&format!("tensor_count={}\n", names.len()));
    for (i, (name, rows, cols)) in names.iter().enumerate() {
        header.push_str(&format!("tensor{i}.name={name}\n"));
        header.push_str(&format!("tensor{i}.rows={rows}\n"));
        header.push_str(&format!("tensor{i}.cols={cols}\n"));
    }
    header.push('\n');

    let mut bytes = header.into_bytes();
    bytes.extend_from_slice(&data);
    fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

struct Header {
    values: HashMap<String, String>,
}

impl Header {
    fn get(&self, key: &str) -> Result<&str> {
        self.values
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Format(format!("checkpoint header missing key {key:?}")))
    }

    fn get_usize(&self, key: &str) -> Result<usize> {
        self.get(key)?
            .parse()
            .map_err(|_| Error::Format(format!("checkpoint header key {key:?} is not a count")))
    }
}

/// Reload a model saved by [`save_checkpoint`], re-reading the referenced
/// frozen resources. Returns the model and the resource path used per
/// encoder (after overrides).
pub fn load_checkpoint(
    path: &Path,
    overrides: &CheckpointOverrides,
) -> Result<(MultiSpaceModel<f32>, Vec<String>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let boundary = bytes
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| Error::Format(format!("{}: no header terminator", path.display())))?;
    let header_text = std::str::from_utf8(&bytes[..boundary])
        .map_err(|_| Error::Format(format!("{}: header is not UTF-8", path.display())))?;
    let data = &bytes[boundary + 2..];

    let mut lines = header_text.lines();
    if lines.next() != Some(MAGIC_LINE) {
        return Err(Error::Format(format!(
            "{}: not a model checkpoint",
            path.display()
        )));
    }
    let mut values = HashMap::new();
    for line in lines {
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Format(format!("{}: malformed header line {line:?}", path.display()))
        })?;
        values.insert(key.to_owned(), value.to_owned());
    }
    let header = Header { values };

    let format = header.get_usize("format")?;
    if format != FORMAT_VERSION as usize {
        return Err(Error::Format(format!(
            "{}: unsupported checkpoint format {format}",
            path.display()
        )));
    }
    let fusion = FusionMode::parse(header.get("fusion")?)?;
    let d_v = header.get_usize("d_v")?;
    let d_c = header.get_usize("d_c")?;
    let transform_dim = if fusion == FusionMode::TransformedConcat {
        header.get_usize("transform_dim")?
    } else {
        DEFAULT_TRANSFORM_DIM
    };

    let encoder_count = header.get_usize("encoder_count")?;
    let mut encoders = Vec::with_capacity(encoder_count);
    let mut used_resources = Vec::with_capacity(encoder_count);
    for i in 0..encoder_count {
        let kind = EncoderKind::parse(header.get(&format!("encoder{i}.kind"))?)?;
        let declared_dim = header.get_usize(&format!("encoder{i}.dim"))?;
        let stored = header.get(&format!("encoder{i}.resource"))?;
        let resource = match kind {
            EncoderKind::Bow => overrides.bow_vocab.as_ref(),
            EncoderKind::Gru | EncoderKind::BiGru => overrides.seq_vocab.as_ref(),
            EncoderKind::W2v => overrides.embeddings.as_ref(),
            EncoderKind::Bert => overrides.precomputed.as_ref(),
        }
        .map(|p| p.display().to_string())
        .unwrap_or_else(|| stored.to_owned());
        let resource_path = PathBuf::from(&resource);

        let encoder = match kind {
            EncoderKind::Bow => SentenceEncoder::Bow {
                vocab: Arc::new(Vocabulary::load(&resource_path)?),
            },
            EncoderKind::W2v => SentenceEncoder::W2v {
                table: Arc::new(load_embedding_table(&resource_path)?),
            },
            EncoderKind::Gru | EncoderKind::BiGru => {
                let vocab = Arc::new(Vocabulary::load(&resource_path)?);
                let hidden = header.get_usize(&format!("encoder{i}.hidden"))?;
                let d_emb = header.get_usize(&format!("encoder{i}.d_emb"))?;
                let backward = if kind == EncoderKind::BiGru {
                    Some(GruParams::zeros(d_emb, hidden))
                } else {
                    None
                };
                SentenceEncoder::Recurrent(GruEncoder {
                    embedding: ndarray::Array2::zeros((vocab.len(), d_emb)),
                    vocab,
                    forward: GruParams::zeros(d_emb, hidden),
                    backward,
                })
            }
            EncoderKind::Bert => {
                let model_label = header.get(&format!("encoder{i}.model"))?.to_owned();
                let pooling_label = header.get(&format!("encoder{i}.pooling"))?.to_owned();
                SentenceEncoder::Precomputed {
                    store: Arc::new(load_precomputed(
                        &resource_path,
                        &model_label,
                        &pooling_label,
                    )?),
                }
            }
        };
        if encoder.output_dim() != declared_dim {
            return Err(Error::Dimension {
                context: format!(
                    "checkpoint encoder{i} ({}) resource {resource}",
                    kind.tag()
                ),
                expected: declared_dim,
                got: encoder.output_dim(),
            });
        }
        encoders.push(encoder);
        used_resources.push(resource);
    }

    let mut model = MultiSpaceModel::with_zero_params(fusion, encoders, d_v, d_c, transform_dim)?;
    if model.k() != header.get_usize("k")? {
        return Err(Error::Format(format!(
            "{}: header k disagrees with the reconstructed model",
            path.display()
        )));
    }

    let tensor_count = header.get_usize("tensor_count")?;
    let mut directory = Vec::with_capacity(tensor_count);
    let mut total_floats = 0usize;
    for i in 0..tensor_count {
        let name = header.get(&format!("tensor{i}.name"))?.to_owned();
        let rows = header.get_usize(&format!("tensor{i}.rows"))?;
        let cols = header.get_usize(&format!("tensor{i}.cols"))?;
        total_floats += rows * cols;
        directory.push((name, rows, cols));
    }
    if data.len() != total_floats * 4 {
        return Err(Error::Format(format!(
            "{}: tensor data holds {} bytes, directory declares {}",
            path.display(),
            data.len(),
            total_floats * 4
        )));
    }

    let mut cursor = 0usize;
    let mut slot = 0usize;
    let mut fill_error: Option<Error> = None;
    model.visit_params_mut(&mut |name, mut view: TensorViewMut<'_, f32>| {
        if fill_error.is_some() {
            return;
        }
        let Some((stored_name, rows, cols)) = directory.get(slot) else {
            fill_error = Some(Error::Format(format!(
                "checkpoint directory ended before model tensor {name}"
            )));
            return;
        };
        if stored_name != &name {
            fill_error = Some(Error::Format(format!(
                "checkpoint tensor {slot} is {stored_name:?}, model expects {name:?}"
            )));
            return;
        }
        if view.shape2() != (*rows, *cols) {
            fill_error = Some(Error::Dimension {
                context: format!("checkpoint tensor {name}"),
                expected: rows * cols,
                got: view.len(),
            });
            return;
        }
        for v in view.iter_mut() {
            let raw: [u8; 4] = data[cursor..cursor + 4].try_into().expect("length checked");
            *v = f32::from_le_bytes(raw);
            cursor += 4;
        }
        slot += 1;
    });
    if let Some(err) = fill_error {
        return Err(err);
    }
    if slot != directory.len() {
        return Err(Error::Format(format!(
            "{}: checkpoint holds {} tensors, model consumes {slot}",
            path.display(),
            directory.len()
        )));
    }

    Ok((model, used_resources))
}
