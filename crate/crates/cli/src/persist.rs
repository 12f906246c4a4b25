//! Binary artifacts: a magic tag, a format version, then dense matrices
//! as `rows: u64, cols: u64, data: f64...`, all little-endian.

use std::path::Path;

use ndarray::Array2;
use ngc::model::ToyModel;
use ngc::ood::Prototypes;

use crate::error::CliError;

pub const FORMAT_VERSION: u32 = 1;
const MODEL_MAGIC: &[u8; 4] = b"NGCM";
const PROTOTYPES_MAGIC: &[u8; 4] = b"NGCP";

pub const MODEL_FILE: &str = "model.bin";
pub const PROTOTYPES_FILE: &str = "prototypes.bin";

fn put_matrix(buf: &mut Vec<u8>, m: &Array2<f64>) {
    buf.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    buf.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for v in m.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn header(magic: &[u8; 4]) -> Vec<u8> {
    let mut buf = magic.to_vec();
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated file")?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize, String> {
        usize::try_from(self.u64()?).map_err(|_| "dimension overflows usize".to_string())
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<(), String> {
        if self.take(4)? != magic {
            return Err("bad magic bytes".into());
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(format!("unsupported format version {version}, expected {FORMAT_VERSION}"));
        }
        Ok(())
    }

    fn matrix(&mut self) -> Result<Array2<f64>, String> {
        let rows = self.usize()?;
        let cols = self.usize()?;
        let len = rows.checked_mul(cols).ok_or("dimension overflow")?;
        let raw = self.take(len.checked_mul(8).ok_or("dimension overflow")?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Array2::from_shape_vec((rows, cols), data).expect("length checked"))
    }

    fn finish(&self) -> Result<(), String> {
        if self.pos != self.bytes.len() {
            return Err("trailing bytes".into());
        }
        Ok(())
    }
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn artifact_err(path: &Path) -> impl Fn(String) -> CliError + '_ {
    move |message| CliError::Artifact {
        path: path.to_path_buf(),
        message,
    }
}

pub fn encode_model(model: &ToyModel) -> Vec<u8> {
    let mut buf = header(MODEL_MAGIC);
    put_matrix(&mut buf, &model.encoder);
    put_matrix(&mut buf, &model.classifier);
    put_matrix(&mut buf, &model.projector);
    buf
}

pub fn decode_model(bytes: &[u8]) -> Result<ToyModel, String> {
    let mut r = Reader { bytes, pos: 0 };
    r.header(MODEL_MAGIC)?;
    let encoder = r.matrix()?;
    let classifier = r.matrix()?;
    let projector = r.matrix()?;
    r.finish()?;
    ToyModel::from_parts(encoder, classifier, projector).map_err(|e| e.to_string())
}

pub fn encode_prototypes(p: &Prototypes) -> Vec<u8> {
    let mut buf = header(PROTOTYPES_MAGIC);
    buf.extend_from_slice(&(p.support().len() as u64).to_le_bytes());
    for &s in p.support() {
        buf.extend_from_slice(&(s as u64).to_le_bytes());
    }
    put_matrix(&mut buf, p.vectors());
    buf
}

pub fn decode_prototypes(bytes: &[u8]) -> Result<Prototypes, String> {
    let mut r = Reader { bytes, pos: 0 };
    r.header(PROTOTYPES_MAGIC)?;
    let k = r.usize()?;
    let support = (0..k).map(|_| r.usize()).collect::<Result<Vec<_>, _>>()?;
    let vectors = r.matrix()?;
    r.finish()?;
    Prototypes::from_parts(vectors, support).map_err(|e| e.to_string())
}

pub fn save_model(dir: &Path, model: &ToyModel) -> Result<(), CliError> {
    write(&dir.join(MODEL_FILE), &encode_model(model))
}

pub fn load_model(dir: &Path) -> Result<ToyModel, CliError> {
    let path = dir.join(MODEL_FILE);
    decode_model(&read(&path)?).map_err(artifact_err(&path))
}

pub fn save_prototypes(dir: &Path, p: &Prototypes) -> Result<(), CliError> {
    write(&dir.join(PROTOTYPES_FILE), &encode_prototypes(p))
}

pub fn load_prototypes(dir: &Path) -> Result<Prototypes, CliError> {
    let path = dir.join(PROTOTYPES_FILE);
    if !path.exists() {
        return Err(CliError::Artifact {
            path,
            message: "missing prototypes; run `train` first".into(),
        });
    }
    decode_prototypes(&read(&path)?).map_err(artifact_err(&path))
}
