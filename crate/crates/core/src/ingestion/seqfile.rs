//! Processed-sequence file written by `ingest` and read by `train`.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic "GIMSEQ" | version u8
//! vocabulary: u32 count, then per name u32 byte length + UTF-8
//! scaler: 8 x f64 means, 8 x f64 stds
//! width u32 | sequence count u32
//! per sequence:
//!   game_id u64 | terminal u8 (0 home, 1 away, 2 neither) | steps u32
//!   per step: event_index u32, player_id u64, team_id u64, side u8 (0 home, 1 away),
//!             action u32, game_time f64, play_number u32, trace_length u8
//!   features: steps x width f32
//! ```

use std::fs;
use std::path::Path;

use super::{Sequence, StepInfo};
use crate::codec::{Decoder, Encoder};
use crate::error::{Error, Result};
use crate::event_model::{ActionId, FeatureScaler, TeamSide, Terminal, Vocabulary, N_CONTINUOUS};

pub const SEQ_MAGIC: &[u8; 6] = b"GIMSEQ";
pub const SEQ_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedData {
    pub vocab: Vocabulary,
    pub scaler: FeatureScaler,
    pub sequences: Vec<Sequence>,
}

pub(crate) fn encode_vocab(enc: &mut Encoder, vocab: &Vocabulary) {
    enc.u32(vocab.len() as u32);
    for n in vocab.names() {
        enc.str(n);
    }
}

pub(crate) fn decode_vocab(dec: &mut Decoder) -> Result<Vocabulary, String> {
    let n = dec.u32("vocabulary size")? as usize;
    let mut names = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        names.push(dec.str("action name")?);
    }
    Vocabulary::new(names).map_err(|e| e.to_string())
}

pub(crate) fn encode_scaler(enc: &mut Encoder, s: &FeatureScaler) {
    for &m in &s.mean {
        enc.f64(m);
    }
    for &d in &s.std {
        enc.f64(d);
    }
}

pub(crate) fn decode_scaler(dec: &mut Decoder) -> Result<FeatureScaler, String> {
    let mut s = FeatureScaler::identity();
    for i in 0..N_CONTINUOUS {
        s.mean[i] = dec.f64("scaler mean")?;
    }
    for i in 0..N_CONTINUOUS {
        s.std[i] = dec.f64("scaler std")?;
    }
    Ok(s)
}

pub fn write_sequences(
    path: &Path,
    vocab: &Vocabulary,
    scaler: &FeatureScaler,
    sequences: &[Sequence],
) -> Result<()> {
    let mut enc = Encoder::new();
    enc.bytes(SEQ_MAGIC);
    enc.u8(SEQ_VERSION);
    encode_vocab(&mut enc, vocab);
    encode_scaler(&mut enc, scaler);
    enc.u32(vocab.encoded_width() as u32);
    enc.u32(sequences.len() as u32);
    for seq in sequences {
        enc.u64(seq.game_id);
        enc.u8(seq.terminal.index() as u8);
        enc.u32(seq.len() as u32);
        for (st, &tl) in seq.steps.iter().zip(&seq.trace_lengths) {
            enc.u32(st.event_index);
            enc.u64(st.player_id);
            enc.u64(st.team_id);
            enc.u8(st.side.index() as u8);
            enc.u32(st.action.0 as u32);
            enc.f64(st.game_time);
            enc.u32(st.play_number);
            enc.u8(tl);
        }
        enc.f32s(&seq.features);
    }
    fs::write(path, enc.buf).map_err(|e| Error::io(path, e))
}

pub fn read_sequences(path: &Path) -> Result<ProcessedData> {
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&data).map_err(|message| Error::Row {
        path: path.display().to_string(),
        line: 0,
        message,
    })
}

fn decode(data: &[u8]) -> Result<ProcessedData, String> {
    let mut dec = Decoder::new(data);
    if dec.take(SEQ_MAGIC.len(), "magic")? != SEQ_MAGIC {
        return Err("not a processed-sequence file (bad magic)".into());
    }
    let version = dec.u8("version")?;
    if version != SEQ_VERSION {
        return Err(format!("unsupported sequence file version {version}"));
    }
    let vocab = decode_vocab(&mut dec)?;
    let scaler = decode_scaler(&mut dec)?;
    let width = dec.u32("width")? as usize;
    if width != vocab.encoded_width() {
        return Err(format!(
            "width {width} does not match vocabulary ({} expected)",
            vocab.encoded_width()
        ));
    }
    let n_seq = dec.u32("sequence count")? as usize;
    let mut sequences = Vec::with_capacity(n_seq.min(1 << 20));
    for _ in 0..n_seq {
        let game_id = dec.u64("game id")?;
        let terminal = Terminal::from_index(dec.u8("terminal")? as usize).ok_or("bad terminal code")?;
        let n = dec.u32("step count")? as usize;
        let mut steps = Vec::with_capacity(n.min(1 << 20));
        let mut trace_lengths = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let event_index = dec.u32("event index")?;
            let player_id = dec.u64("player id")?;
            let team_id = dec.u64("team id")?;
            let side = match dec.u8("side")? {
                0 => TeamSide::Home,
                1 => TeamSide::Away,
                _ => return Err("bad side code".into()),
            };
            let action = dec.u32("action")?;
            if action as usize >= vocab.len() {
                return Err(format!("action index {action} outside vocabulary"));
            }
            let game_time = dec.f64("game time")?;
            let play_number = dec.u32("play number")?;
            let tl = dec.u8("trace length")?;
            if tl == 0 || tl as usize > super::MAX_TRACE {
                return Err(format!("trace length {tl} out of range"));
            }
            steps.push(StepInfo {
                event_index,
                player_id,
                team_id,
                side,
                action: ActionId(action as u16),
                game_time,
                play_number,
            });
            trace_lengths.push(tl);
        }
        let features = dec.f32s(n * width, "features")?;
        sequences.push(Sequence {
            game_id,
            terminal,
            width,
            features,
            trace_lengths,
            steps,
        });
    }
    if dec.remaining() != 0 {
        return Err(format!("{} trailing bytes", dec.remaining()));
    }
    Ok(ProcessedData {
        vocab,
        scaler,
        sequences,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingestion::{ingest, parse_events_from_reader, Schema};

    #[test]
    fn round_trip_and_truncation() {
        let text = "GID,PID,GT,TID,X,Y,MP,GD,Action,OC,P,H/A\n\
                    7,1,1.0,1,10,5,EV,0,pass,S,H,H\n\
                    7,2,2.5,2,-30,5,PP,1,shot,F,A,A\n\
                    7,2,3.0,2,80,0,PP,1,goal,S,A,A\n\
                    7,1,9.0,1,0,0,SH,-1,carry,S,H,H\n";
        let vocab = Vocabulary::default();
        let parsed = parse_events_from_reader(text.as_bytes(), "t", &Schema::default(), &vocab, false).unwrap();
        let ing = ingest(parsed.games, &vocab, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seq.bin");
        write_sequences(&path, &vocab, &ing.scaler, &ing.sequences).unwrap();
        let back = read_sequences(&path).unwrap();
        assert_eq!(back.sequences, ing.sequences);
        assert_eq!(back.scaler, ing.scaler);
        assert_eq!(back.vocab, vocab);

        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(read_sequences(&path).unwrap_err().to_string().contains("truncated"));
        fs::write(&path, b"NOTSEQ\x01").unwrap();
        assert!(read_sequences(&path).unwrap_err().to_string().contains("magic"));
    }
}
