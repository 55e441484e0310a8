//! Checkpoint format, little-endian:
//!
//! ```text
//! magic "GIMQNET" | version u8
//! config: input_width, lstm_hidden, dense1, dense2, max_trace (u32 each)
//! vocabulary: u32 count, then per name u32 byte length + UTF-8
//! scaler: 8 x f64 means, 8 x f64 stds
//! 8 tensors (lstm_w, lstm_b, dense1_w, dense1_b, dense2_w, dense2_b, out_w, out_b):
//!   u32 element count, then f32 values
//! ```

use std::fs;
use std::path::Path;

use super::net::{Weights, TENSOR_NAMES};
use super::{NetworkConfig, NetworkParams};
use crate::codec::{Decoder, Encoder};
use crate::error::{CheckpointError, Error, Result};
use crate::event_model::Vocabulary;
use crate::ingestion::seqfile::{decode_scaler, decode_vocab, encode_scaler, encode_vocab};

pub const CKPT_MAGIC: &[u8; 7] = b"GIMQNET";
pub const CKPT_VERSION: u8 = 1;

pub fn to_bytes(params: &NetworkParams) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.bytes(CKPT_MAGIC);
    enc.u8(CKPT_VERSION);
    let c = &params.config;
    for v in [
        c.input_width,
        c.lstm_hidden,
        c.dense_widths[0],
        c.dense_widths[1],
        c.max_trace,
    ] {
        enc.u32(v as u32);
    }
    encode_vocab(&mut enc, &params.vocab);
    encode_scaler(&mut enc, &params.scaler);
    for t in params.weights.tensors() {
        enc.u32(t.len() as u32);
        enc.f32s(t);
    }
    enc.buf
}

pub fn save_checkpoint(params: &NetworkParams, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(params)).map_err(|e| Error::io(path, e))
}

pub fn from_bytes(data: &[u8]) -> Result<NetworkParams, CheckpointError> {
    let corrupt = CheckpointError::Corrupt;
    let mut dec = Decoder::new(data);
    if dec.take(CKPT_MAGIC.len(), "magic").map_err(corrupt)? != CKPT_MAGIC {
        return Err(CheckpointError::Corrupt("bad magic".into()));
    }
    let version = dec.u8("version").map_err(corrupt)?;
    if version != CKPT_VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: CKPT_VERSION,
        });
    }
    let mut dims = [0usize; 5];
    for d in dims.iter_mut() {
        *d = dec.u32("network config").map_err(corrupt)? as usize;
    }
    let config = NetworkConfig {
        input_width: dims[0],
        lstm_hidden: dims[1],
        dense_widths: [dims[2], dims[3]],
        max_trace: dims[4],
    };
    config
        .validate()
        .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    let vocab = decode_vocab(&mut dec).map_err(corrupt)?;
    if vocab.encoded_width() != config.input_width {
        return Err(CheckpointError::ShapeMismatch(format!(
            "input width {} but vocabulary of {} actions encodes to {}",
            config.input_width,
            vocab.len(),
            vocab.encoded_width()
        )));
    }
    let scaler = decode_scaler(&mut dec).map_err(corrupt)?;
    let mut weights = Weights::<f32>::zeros(&config);
    let sizes = config.tensor_sizes();
    for (i, t) in weights.tensors_mut().into_iter().enumerate() {
        let n = dec.u32("tensor length").map_err(corrupt)? as usize;
        if n != sizes[i] {
            return Err(CheckpointError::ShapeMismatch(format!(
                "tensor {} has {n} values, config implies {}",
                TENSOR_NAMES[i], sizes[i]
            )));
        }
        *t = dec.f32s(n, TENSOR_NAMES[i]).map_err(corrupt)?;
    }
    if dec.remaining() != 0 {
        return Err(CheckpointError::Corrupt(format!("{} trailing bytes", dec.remaining())));
    }
    if !weights.all_finite() {
        return Err(CheckpointError::Corrupt("non-finite weight".into()));
    }
    Ok(NetworkParams {
        config,
        vocab,
        scaler,
        weights,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<NetworkParams> {
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(from_bytes(&data)?)
}

/// Loads a checkpoint and requires it to use exactly `vocab`.
pub fn load_checkpoint_with_vocab(path: &Path, vocab: &Vocabulary) -> Result<NetworkParams> {
    let params = load_checkpoint(path)?;
    if params.vocab.len() != vocab.len() {
        return Err(CheckpointError::ShapeMismatch(format!(
            "checkpoint has {} actions, vocabulary has {}",
            params.vocab.len(),
            vocab.len()
        ))
        .into());
    }
    if &params.vocab != vocab {
        return Err(CheckpointError::ShapeMismatch(
            "checkpoint action names differ from the vocabulary".into(),
        )
        .into());
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_model::FeatureScaler;
    use crate::qnet::init_params;

    fn params() -> NetworkParams {
        let vocab = Vocabulary::default();
        let cfg = NetworkConfig {
            input_width: vocab.encoded_width(),
            lstm_hidden: 5,
            dense_widths: [4, 3],
            max_trace: 10,
        };
        let mut scaler = FeatureScaler::identity();
        scaler.mean[3] = 2.5;
        scaler.std[4] = 0.125;
        init_params(cfg, vocab, scaler, 17).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let p = params();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.ckpt");
        save_checkpoint(&p, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, p);
        assert_eq!(to_bytes(&back), fs::read(&path).unwrap());
    }

    #[test]
    fn distinct_errors() {
        let bytes = to_bytes(&params());
        let truncated = from_bytes(&bytes[..bytes.len() - 5]).unwrap_err();
        assert!(matches!(truncated, CheckpointError::Corrupt(_)), "{truncated}");

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(from_bytes(&bad_magic), Err(CheckpointError::Corrupt(_))));

        let mut bad_version = bytes.clone();
        bad_version[CKPT_MAGIC.len()] = 9;
        assert!(matches!(
            from_bytes(&bad_version),
            Err(CheckpointError::Version { found: 9, expected: 1 })
        ));
    }

    #[test]
    fn vocabulary_size_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.ckpt");
        save_checkpoint(&params(), &path).unwrap();
        let twelve = Vocabulary::new(Vocabulary::default().names()[..12].to_vec()).unwrap();
        let err = load_checkpoint_with_vocab(&path, &twelve).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(CheckpointError::ShapeMismatch(_))), "{err}");
        assert!(load_checkpoint_with_vocab(&path, &Vocabulary::default()).is_ok());
    }
}
