//! Parameter checkpoints: named tensors with shapes, in JSON (value-exact
//! round trip) or a little-endian binary layout (bit-exact).
//!
//! Binary layout: the 8-byte magic `LAGDYNCK`, a `u32` format version, a
//! `u64` header length and a JSON header (dof and architecture), then per
//! tensor a `u64` name length, the UTF-8 name, `u64` rows, `u64` cols and
//! `rows x cols` `f64` values.

use std::path::Path;

use lagdyn_core::nn::{BundleConfig, Matrix, ParamSet, ParameterBundle};
use serde::{Deserialize, Serialize};

use crate::error::{write_file, AppError, AppResult};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"LAGDYNCK";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub dof: usize,
    pub hidden: Vec<usize>,
    pub channels: usize,
    pub stages: usize,
    pub kernel: usize,
}

impl Architecture {
    fn of(bundle: &ParameterBundle) -> Self {
        let c = bundle.config();
        Self {
            dof: bundle.dof(),
            hidden: c.hidden.clone(),
            channels: c.channels,
            stages: c.stages,
            kernel: c.kernel,
        }
    }

    fn build(&self) -> AppResult<ParameterBundle> {
        let config = BundleConfig {
            hidden: self.hidden.clone(),
            channels: self.channels,
            stages: self.stages,
            kernel: self.kernel,
        };
        ParameterBundle::new(self.dof, config, 0).map_err(|e| AppError::Data(format!("checkpoint architecture: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub architecture: Architecture,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn from_bundle(bundle: &ParameterBundle) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            architecture: Architecture::of(bundle),
            tensors: bundle
                .params()
                .into_iter()
                .map(|p| Tensor {
                    name: p.name.clone(),
                    shape: [p.value.rows(), p.value.cols()],
                    data: p.value.as_slice().to_vec(),
                })
                .collect(),
        }
    }

    pub fn to_bundle(&self) -> AppResult<ParameterBundle> {
        if self.format_version != FORMAT_VERSION {
            return Err(AppError::Data(format!("unsupported checkpoint version {}", self.format_version)));
        }
        let mut bundle = self.architecture.build()?;
        if bundle.params().len() != self.tensors.len() {
            return Err(AppError::Data("checkpoint tensor count does not match its architecture".into()));
        }
        for t in &self.tensors {
            let m =
                Matrix::from_vec(t.shape[0], t.shape[1], t.data.clone()).map_err(|e| AppError::Data(format!("tensor {}: {e}", t.name)))?;
            bundle
                .set_value(&t.name, m)
                .map_err(|e| AppError::Data(format!("tensor {}: {e}", t.name)))?;
        }
        Ok(bundle)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> AppResult<Self> {
        serde_json::from_str(text).map_err(|e| AppError::Data(format!("checkpoint: {e}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.architecture).expect("architecture serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.format_version.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u64).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.shape[0] as u64).to_le_bytes());
            out.extend_from_slice(&(t.shape[1] as u64).to_le_bytes());
            for x in &t.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> AppResult<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(AppError::Data("not a binary checkpoint".into()));
        }
        let format_version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        let header_len = r.u64()? as usize;
        let architecture = serde_json::from_slice(r.take(header_len)?).map_err(|e| AppError::Data(format!("checkpoint header: {e}")))?;
        let mut tensors = Vec::new();
        while r.pos < bytes.len() {
            let n = r.u64()? as usize;
            let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| AppError::Data("tensor name is not UTF-8".into()))?;
            let shape = [r.u64()? as usize, r.u64()? as usize];
            let count = shape[0]
                .checked_mul(shape[1])
                .ok_or_else(|| AppError::Data("tensor shape overflows".into()))?;
            let data = (0..count)
                .map(|_| Ok(f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"))))
                .collect::<AppResult<_>>()?;
            tensors.push(Tensor { name, shape, data });
        }
        Ok(Self {
            format_version,
            architecture,
            tensors,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> AppResult<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| AppError::Data("checkpoint is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> AppResult<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn is_binary(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "bin")
}

/// Writes JSON, or binary when the extension is `.bin`.
pub fn save(path: &Path, bundle: &ParameterBundle) -> AppResult<()> {
    let ck = Checkpoint::from_bundle(bundle);
    if is_binary(path) {
        write_file(path, ck.to_bytes())
    } else {
        write_file(path, ck.to_json())
    }
}

pub fn load(path: &Path) -> AppResult<ParameterBundle> {
    let bytes = std::fs::read(path).map_err(|e| AppError::io(path, e))?;
    let ck = if is_binary(path) {
        Checkpoint::from_bytes(&bytes)?
    } else {
        Checkpoint::from_json(std::str::from_utf8(&bytes).map_err(|_| AppError::io(path, "not UTF-8"))?)?
    };
    ck.to_bundle()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle() -> ParameterBundle {
        let config = BundleConfig {
            hidden: vec![5, 4],
            channels: 3,
            stages: 2,
            kernel: 3,
        };
        let mut b = ParameterBundle::new(2, config, 9).unwrap();
        // awkward values for the text round trip
        b.inertia.layers[0].bias.value = Matrix::row_vector(vec![0.1, 1.0 / 3.0, -2.2250738585072014e-308, 5e-324, 1e300]);
        b
    }

    #[test]
    fn json_round_trip_is_value_exact() {
        let b = bundle();
        let back = Checkpoint::from_json(&Checkpoint::from_bundle(&b).to_json())
            .unwrap()
            .to_bundle()
            .unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let b = bundle();
        let ck = Checkpoint::from_bundle(&b);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        let (x, y) = (Checkpoint::from_bundle(&back.to_bundle().unwrap()), ck);
        for (a, b) in x.tensors.iter().zip(&y.tensors) {
            assert!(a.data.iter().zip(&b.data).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let ck = Checkpoint::from_bundle(&bundle());
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(Checkpoint::from_bytes(b"NOTACKPT").is_err());
        let mut wrong = ck.clone();
        wrong.format_version = 99;
        assert!(wrong.to_bundle().is_err());
        let mut missing = ck;
        missing.tensors.pop();
        assert!(missing.to_bundle().is_err());
    }
}
