//! Tagger checkpoint format: magic `TAG1`, label names, parameter tensors as
//! little-endian float32 with declared shapes, and a trailing JSON history
//! blob.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2};

use crate::corpus::{LabelSet, LabelSetKind};

use super::lstm::{BiLstm, BiLstmLayer, LstmDirection};
use super::{CrfParams, Projection, TaggerEncoder, TaggerError, TrainedTagger, TrainingHistory};

const MAGIC: &[u8; 4] = b"TAG1";

const ENCODER_BILSTM: u8 = 0;
const ENCODER_FROZEN: u8 = 1;

struct TensorWriter<W: Write> {
    inner: W,
    count: u32,
}

impl<W: Write> TensorWriter<W> {
    fn matrix(&mut self, name: &str, m: &Array2<f64>) -> Result<(), TaggerError> {
        self.header(name, &[m.nrows() as u32, m.ncols() as u32])?;
        for &v in m.iter() {
            self.inner.write_f32::<LittleEndian>(v as f32)?;
        }
        Ok(())
    }

    fn vector(&mut self, name: &str, v: &Array1<f64>) -> Result<(), TaggerError> {
        self.header(name, &[v.len() as u32])?;
        for &x in v.iter() {
            self.inner.write_f32::<LittleEndian>(x as f32)?;
        }
        Ok(())
    }

    fn header(&mut self, name: &str, dims: &[u32]) -> Result<(), TaggerError> {
        self.inner.write_u32::<LittleEndian>(name.len() as u32)?;
        self.inner.write_all(name.as_bytes())?;
        self.inner.write_u32::<LittleEndian>(dims.len() as u32)?;
        for &d in dims {
            self.inner.write_u32::<LittleEndian>(d)?;
        }
        self.count += 1;
        Ok(())
    }
}

pub fn save_tagger(mut writer: impl Write, tagger: &TrainedTagger) -> Result<(), TaggerError> {
    writer.write_all(MAGIC)?;
    writer.write_u8(match tagger.encoder {
        TaggerEncoder::BiLstm(_) => ENCODER_BILSTM,
        TaggerEncoder::Frozen { .. } => ENCODER_FROZEN,
    })?;
    writer.write_u8(match tagger.label_set.kind() {
        LabelSetKind::Core5 => 0,
        LabelSetKind::Extended8 => 1,
    })?;
    match &tagger.encoder {
        TaggerEncoder::BiLstm(net) => {
            writer.write_u32::<LittleEndian>(net.num_layers() as u32)?;
            writer.write_u32::<LittleEndian>(net.input_dim() as u32)?;
            writer.write_u32::<LittleEndian>(net.hidden_total() as u32)?;
        }
        TaggerEncoder::Frozen { dim } => {
            writer.write_u32::<LittleEndian>(0)?;
            writer.write_u32::<LittleEndian>(*dim as u32)?;
            writer.write_u32::<LittleEndian>(*dim as u32)?;
        }
    }

    // tensor count is computable from the geometry, so write tensors directly
    let mut tw = TensorWriter {
        inner: &mut writer,
        count: 0,
    };
    if let TaggerEncoder::BiLstm(net) = &tagger.encoder {
        for (l, layer) in net.layers.iter().enumerate() {
            for (tag, dir) in [("fwd", &layer.fwd), ("bwd", &layer.bwd)] {
                tw.matrix(&format!("lstm.{l}.{tag}.w"), &dir.w)?;
                tw.matrix(&format!("lstm.{l}.{tag}.u"), &dir.u)?;
                tw.vector(&format!("lstm.{l}.{tag}.b"), &dir.b)?;
            }
        }
    }
    tw.matrix("proj.w", &tagger.projection.w)?;
    tw.vector("proj.b", &tagger.projection.b)?;
    tw.matrix("crf.transitions", &tagger.crf.transitions)?;
    tw.vector("crf.start", &tagger.crf.start)?;
    tw.vector("crf.end", &tagger.crf.end)?;

    let history = serde_json::to_vec(&tagger.history).expect("history serializes");
    writer.write_u64::<LittleEndian>(history.len() as u64)?;
    writer.write_all(&history)?;
    Ok(())
}

struct TensorReader<R: Read> {
    inner: R,
}

impl<R: Read> TensorReader<R> {
    fn matrix(&mut self, expect: &str) -> Result<Array2<f64>, TaggerError> {
        let dims = self.header(expect, 2)?;
        let (rows, cols) = (dims[0] as usize, dims[1] as usize);
        let mut data = vec![0f32; rows * cols];
        self.inner.read_f32_into::<LittleEndian>(&mut data)?;
        Ok(Array2::from_shape_vec((rows, cols), data.into_iter().map(|v| v as f64).collect())
            .expect("shape matches"))
    }

    fn vector(&mut self, expect: &str) -> Result<Array1<f64>, TaggerError> {
        let dims = self.header(expect, 1)?;
        let mut data = vec![0f32; dims[0] as usize];
        self.inner.read_f32_into::<LittleEndian>(&mut data)?;
        Ok(Array1::from_vec(data.into_iter().map(|v| v as f64).collect()))
    }

    fn header(&mut self, expect: &str, ndim: usize) -> Result<Vec<u32>, TaggerError> {
        let name_len = self.inner.read_u32::<LittleEndian>()? as usize;
        let mut name = vec![0u8; name_len];
        self.inner.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| TaggerError::Checkpoint("tensor name is not UTF-8".into()))?;
        if name != expect {
            return Err(TaggerError::Checkpoint(format!(
                "expected tensor {expect}, found {name}"
            )));
        }
        let n = self.inner.read_u32::<LittleEndian>()? as usize;
        if n != ndim {
            return Err(TaggerError::Checkpoint(format!(
                "tensor {name}: expected {ndim} dims, found {n}"
            )));
        }
        (0..n)
            .map(|_| Ok(self.inner.read_u32::<LittleEndian>()?))
            .collect()
    }
}

pub fn load_tagger(mut reader: impl Read) -> Result<TrainedTagger, TaggerError> {
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(TaggerError::Checkpoint(format!("bad magic {magic:?}")));
    }
    let encoder_kind = reader.read_u8()?;
    let label_set = match reader.read_u8()? {
        0 => LabelSet::core5(),
        1 => LabelSet::extended8(),
        other => return Err(TaggerError::Checkpoint(format!("bad label set tag {other}"))),
    };
    let num_layers = reader.read_u32::<LittleEndian>()? as usize;
    let input_dim = reader.read_u32::<LittleEndian>()? as usize;
    let hidden_total = reader.read_u32::<LittleEndian>()? as usize;

    let mut tr = TensorReader { inner: &mut reader };
    let encoder = match encoder_kind {
        ENCODER_BILSTM => {
            let mut layers = Vec::with_capacity(num_layers);
            for l in 0..num_layers {
                let mut dirs = Vec::with_capacity(2);
                for tag in ["fwd", "bwd"] {
                    dirs.push(LstmDirection {
                        w: tr.matrix(&format!("lstm.{l}.{tag}.w"))?,
                        u: tr.matrix(&format!("lstm.{l}.{tag}.u"))?,
                        b: tr.vector(&format!("lstm.{l}.{tag}.b"))?,
                    });
                }
                let bwd = dirs.pop().unwrap();
                let fwd = dirs.pop().unwrap();
                layers.push(BiLstmLayer { fwd, bwd });
            }
            let reference = BiLstm::zeros(num_layers, input_dim, hidden_total);
            TaggerEncoder::BiLstm(reference.with_layers(layers))
        }
        ENCODER_FROZEN => TaggerEncoder::Frozen { dim: input_dim },
        other => return Err(TaggerError::Checkpoint(format!("bad encoder tag {other}"))),
    };

    let projection = Projection {
        w: tr.matrix("proj.w")?,
        b: tr.vector("proj.b")?,
    };
    let mut crf = CrfParams::bio(&label_set);
    let transitions = tr.matrix("crf.transitions")?;
    let start = tr.vector("crf.start")?;
    let end = tr.vector("crf.end")?;
    if transitions.dim() != crf.transitions.dim() || start.len() != crf.start.len() {
        return Err(TaggerError::Checkpoint("CRF shape mismatch".into()));
    }
    // keep the structural −∞ pins authoritative; stored values fill the rest
    for ((i, j), v) in transitions.indexed_iter() {
        if crf.transition_allowed(i, j) {
            crf.transitions[(i, j)] = *v;
        }
    }
    for (i, v) in start.iter().enumerate() {
        if crf.start_allowed(i) {
            crf.start[i] = *v;
        }
    }
    crf.end = end;

    let history_len = reader.read_u64::<LittleEndian>()? as usize;
    let mut history_bytes = vec![0u8; history_len];
    reader.read_exact(&mut history_bytes)?;
    let history: TrainingHistory = serde_json::from_slice(&history_bytes)
        .map_err(|e| TaggerError::Checkpoint(format!("history: {e}")))?;

    Ok(TrainedTagger {
        label_set,
        encoder,
        projection,
        crf,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_tagger() -> TrainedTagger {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let label_set = LabelSet::core5();
        let mut crf = CrfParams::bio(&label_set);
        use rand::Rng;
        for i in 0..5 {
            for j in 0..5 {
                if crf.transition_allowed(i, j) {
                    crf.transitions[(i, j)] = rng.random_range(-1.0..1.0);
                }
            }
        }
        TrainedTagger {
            encoder: TaggerEncoder::BiLstm(BiLstm::init(2, 7, 6, &mut rng)),
            projection: Projection::init(6, 5, &mut rng),
            crf,
            label_set,
            history: TrainingHistory {
                epochs: vec![],
                best_epoch: 3,
            },
        }
    }

    #[test]
    fn round_trip_preserves_f32_values() {
        let tagger = sample_tagger();
        let mut buf = Vec::new();
        save_tagger(&mut buf, &tagger).unwrap();
        let loaded = load_tagger(&buf[..]).unwrap();
        assert_eq!(loaded.history.best_epoch, 3);
        assert_eq!(loaded.label_set, tagger.label_set);
        // values survive up to the f32 storage precision
        match (&loaded.encoder, &tagger.encoder) {
            (TaggerEncoder::BiLstm(a), TaggerEncoder::BiLstm(b)) => {
                assert_eq!(a.num_layers(), b.num_layers());
                for (la, lb) in a.layers.iter().zip(&b.layers) {
                    for (da, db) in [(&la.fwd, &lb.fwd), (&la.bwd, &lb.bwd)] {
                        for (x, y) in da.w.iter().zip(db.w.iter()) {
                            assert_eq!(*x, *y as f32 as f64);
                        }
                    }
                }
            }
            other => panic!("encoder kind changed: {other:?}"),
        }
        // a second save of the loaded model is byte-identical
        let mut buf2 = Vec::new();
        save_tagger(&mut buf2, &loaded).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn pinned_transitions_survive_round_trip() {
        let tagger = sample_tagger();
        let mut buf = Vec::new();
        save_tagger(&mut buf, &tagger).unwrap();
        let loaded = load_tagger(&buf[..]).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                if !tagger.crf.transition_allowed(i, j) {
                    assert_eq!(loaded.crf.transitions[(i, j)], f64::NEG_INFINITY);
                }
            }
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let err = load_tagger(&b"NOPE1234"[..]).unwrap_err();
        assert!(matches!(err, TaggerError::Checkpoint(_)));
    }
}
