//! Binary checkpoint container shared by the graph network and baselines.
//!
//! Layout: 8-byte magic `BGRAPHCK`, header length as u64 LE, UTF-8 JSON
//! header, then the payload: every parameter tensor in [`ParamSet`] order,
//! then Adam first moments, then second moments, all as f64 LE.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::baselines::{LinearModel, MlpModel};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::gnn::{GnnDims, ModelParams};
use crate::nn::ParamSet;
use crate::optim::AdamState;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"BGRAPHCK";
pub const FORMAT_VERSION: u32 = 1;
/// Refuse headers larger than this before allocating.
const MAX_HEADER: u64 = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Gnn,
    Lr,
    Mlp,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Gnn => "gnn",
            Self::Lr => "lr",
            Self::Mlp => "mlp",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gnn" => Ok(Self::Gnn),
            "lr" => Ok(Self::Lr),
            "mlp" => Ok(Self::Mlp),
            other => Err(Error::InvalidConfig(format!(
                "unknown model '{other}', expected gnn, lr or mlp"
            ))),
        }
    }
}

/// Shape description stored in the header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelDims {
    Gnn(GnnDims),
    Lr { n_inputs: usize, n_outputs: usize },
    Mlp { n_inputs: usize, hidden: usize, n_outputs: usize },
}

impl ModelDims {
    pub fn kind(&self) -> ModelKind {
        match self {
            Self::Gnn(_) => ModelKind::Gnn,
            Self::Lr { .. } => ModelKind::Lr,
            Self::Mlp { .. } => ModelKind::Mlp,
        }
    }

    pub fn n_inputs(&self) -> usize {
        match *self {
            Self::Gnn(d) => d.n_events,
            Self::Lr { n_inputs, .. } | Self::Mlp { n_inputs, .. } => n_inputs,
        }
    }

    pub fn n_outputs(&self) -> usize {
        match *self {
            Self::Gnn(d) => d.n_drugs,
            Self::Lr { n_outputs, .. } | Self::Mlp { n_outputs, .. } => n_outputs,
        }
    }
}

/// Models that can be written to and rebuilt from a checkpoint.
pub trait Checkpointable<F: Scalar>: ParamSet<F> {
    fn dims(&self) -> ModelDims;

    fn zeros_for(dims: &ModelDims) -> Result<Self>;
}

impl<F: Scalar> Checkpointable<F> for ModelParams<F> {
    fn dims(&self) -> ModelDims {
        ModelDims::Gnn(self.dims)
    }

    fn zeros_for(dims: &ModelDims) -> Result<Self> {
        match dims {
            ModelDims::Gnn(d) => Ok(Self::zeros(*d)),
            other => Err(kind_error(ModelKind::Gnn, other.kind())),
        }
    }
}

impl<F: Scalar> Checkpointable<F> for LinearModel<F> {
    fn dims(&self) -> ModelDims {
        ModelDims::Lr {
            n_inputs: self.w.ncols(),
            n_outputs: self.w.nrows(),
        }
    }

    fn zeros_for(dims: &ModelDims) -> Result<Self> {
        match *dims {
            ModelDims::Lr {
                n_inputs,
                n_outputs,
            } => Ok(Self::zeros(n_inputs, n_outputs)),
            other => Err(kind_error(ModelKind::Lr, other.kind())),
        }
    }
}

impl<F: Scalar> Checkpointable<F> for MlpModel<F> {
    fn dims(&self) -> ModelDims {
        ModelDims::Mlp {
            n_inputs: self.w1.ncols(),
            hidden: self.w1.nrows(),
            n_outputs: self.w2.nrows(),
        }
    }

    fn zeros_for(dims: &ModelDims) -> Result<Self> {
        match *dims {
            ModelDims::Mlp {
                n_inputs,
                hidden,
                n_outputs,
            } => Ok(Self::zeros(n_inputs, hidden, n_outputs)),
            other => Err(kind_error(ModelKind::Mlp, other.kind())),
        }
    }
}

fn kind_error(expected: ModelKind, found: ModelKind) -> Error {
    Error::ShapeMismatch(format!("checkpoint holds a {found} model, expected {expected}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format_version: u32,
    pub model: ModelDims,
    pub tensors: Vec<TensorInfo>,
    pub adam_step: u64,
    /// Free-form training configuration, echoed for provenance.
    pub hyper: Value,
    pub payload_len: u64,
    pub payload_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone)]
pub struct Checkpoint<F, P> {
    pub params: P,
    pub state: AdamState<F>,
    pub header: Header,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn encode_checkpoint<F: Scalar, P: Checkpointable<F>>(
    params: &P,
    state: &AdamState<F>,
    hyper: &Value,
) -> Result<Vec<u8>> {
    let tensors = params.tensors();
    if state.m.len() != tensors.len()
        || state.v.len() != tensors.len()
        || tensors
            .iter()
            .zip(state.m.iter().zip(&state.v))
            .any(|(t, (m, v))| m.len() != t.len() || v.len() != t.len())
    {
        return Err(Error::ShapeMismatch(
            "optimizer state does not match parameters".into(),
        ));
    }
    let mut payload = Vec::with_capacity(params.n_params() * 24);
    let mut push = |xs: &[F]| {
        for x in xs {
            payload.extend_from_slice(&x.as_f64().to_le_bytes());
        }
    };
    for t in &tensors {
        push(t);
    }
    for m in &state.m {
        push(m);
    }
    for v in &state.v {
        push(v);
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        model: params.dims(),
        tensors: params
            .tensor_names()
            .into_iter()
            .zip(&tensors)
            .map(|(name, t)| TensorInfo { name, len: t.len() })
            .collect(),
        adam_step: state.step,
        hyper: hyper.clone(),
        payload_len: payload.len() as u64,
        payload_sha256: hex(&Sha256::digest(&payload)),
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + header_json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_json);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn save_checkpoint<F: Scalar, P: Checkpointable<F>>(
    params: &P,
    state: &AdamState<F>,
    hyper: &Value,
    path: &Path,
) -> Result<()> {
    write_atomic(path, &encode_checkpoint(params, state, hyper)?)
}

/// Splits a container into its validated header and payload.
pub fn decode_header(bytes: &[u8]) -> Result<(Header, &[u8])> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Integrity("not a checkpoint (bad magic)".into()));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    if header_len > MAX_HEADER {
        return Err(Error::TooLarge(header_len, MAX_HEADER));
    }
    let header_end = 16 + header_len as usize;
    if bytes.len() < header_end {
        return Err(Error::Integrity("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[16..header_end])
        .map_err(|e| Error::Integrity(format!("unreadable header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Version {
            found: header.format_version,
            expected: FORMAT_VERSION,
        });
    }
    let payload = &bytes[header_end..];
    if payload.len() as u64 != header.payload_len {
        return Err(Error::Integrity(format!(
            "payload is {} bytes, header says {}",
            payload.len(),
            header.payload_len
        )));
    }
    if hex(&Sha256::digest(payload)) != header.payload_sha256 {
        return Err(Error::Integrity("payload checksum mismatch".into()));
    }
    Ok((header, payload))
}

pub fn decode_checkpoint<F: Scalar, P: Checkpointable<F>>(bytes: &[u8]) -> Result<Checkpoint<F, P>> {
    let (header, payload) = decode_header(bytes)?;
    let mut params = P::zeros_for(&header.model)?;
    let lens: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let names = params.tensor_names();
    let described: Vec<(String, usize)> = header.tensors.iter().map(|t| (t.name.clone(), t.len)).collect();
    if described != names.into_iter().zip(lens.iter().copied()).collect::<Vec<_>>() {
        return Err(Error::ShapeMismatch(
            "tensor table does not match the model dimensions".into(),
        ));
    }
    let total: usize = lens.iter().sum();
    if payload.len() != total * 3 * 8 {
        return Err(Error::Integrity(format!(
            "payload holds {} values, expected {}",
            payload.len() / 8,
            total * 3
        )));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| F::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))));
    for t in params.tensors_mut() {
        for x in t.iter_mut() {
            *x = values.next().expect("length checked");
        }
    }
    let mut state = AdamState::new(&params);
    for m in state.m.iter_mut() {
        for x in m.iter_mut() {
            *x = values.next().expect("length checked");
        }
    }
    for v in state.v.iter_mut() {
        for x in v.iter_mut() {
            *x = values.next().expect("length checked");
        }
    }
    state.step = header.adam_step;
    if !params.all_finite() {
        return Err(Error::Integrity("non-finite parameter values".into()));
    }
    Ok(Checkpoint {
        params,
        state,
        header,
    })
}

pub fn read_header(path: &Path) -> Result<Header> {
    let bytes = std::fs::read(path)?;
    Ok(decode_header(&bytes)?.0)
}

pub fn load_checkpoint<F: Scalar, P: Checkpointable<F>>(path: &Path) -> Result<Checkpoint<F, P>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}

impl<F, P> Checkpoint<F, P> {
    /// Fails unless the stored model has exactly `expected` dimensions.
    pub fn expect_dims(&self, expected: &ModelDims) -> Result<()> {
        if &self.header.model != expected {
            return Err(Error::ShapeMismatch(format!(
                "checkpoint dims {:?} do not match configured {:?}",
                self.header.model, expected
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamSet;

    fn sample() -> (ModelParams<f64>, AdamState<f64>) {
        let p = ModelParams::<f64>::init(GnnDims::new(4, 2, 5, 3), 9);
        let mut state = AdamState::new(&p);
        state.step = 17;
        for (k, m) in state.m.iter_mut().enumerate() {
            m.iter_mut().enumerate().for_each(|(i, x)| *x = (k * 31 + i) as f64 * 1e-3);
        }
        for v in state.v.iter_mut() {
            v.iter_mut().for_each(|x| *x = 0.25);
        }
        (p, state)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (p, s) = sample();
        let bytes = encode_checkpoint(&p, &s, &serde_json::json!({"lr": 1e-4})).unwrap();
        let ck: Checkpoint<f64, ModelParams<f64>> = decode_checkpoint(&bytes).unwrap();
        let bits = |v: Vec<&[f64]>| v.concat().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(ck.params.tensors()), bits(p.tensors()));
        assert_eq!(ck.state, s);
        assert_eq!(ck.header.hyper["lr"], 1e-4);

        let p32: ModelParams<f32> = p.cast();
        let s32 = AdamState::new(&p32);
        let bytes = encode_checkpoint(&p32, &s32, &Value::Null).unwrap();
        let ck: Checkpoint<f32, ModelParams<f32>> = decode_checkpoint(&bytes).unwrap();
        assert_eq!(ck.params, p32);
    }

    #[test]
    fn detects_damage() {
        let (p, s) = sample();
        let bytes = encode_checkpoint(&p, &s, &Value::Null).unwrap();
        let truncated = &bytes[..bytes.len() - 9];
        assert!(matches!(
            decode_checkpoint::<f64, ModelParams<f64>>(truncated),
            Err(Error::Integrity(_))
        ));
        let mut flipped = bytes.clone();
        let last = flipped.len() - 1;
        flipped[last] ^= 1;
        assert!(matches!(
            decode_checkpoint::<f64, ModelParams<f64>>(&flipped),
            Err(Error::Integrity(_))
        ));
        assert!(matches!(
            decode_checkpoint::<f64, ModelParams<f64>>(b"nonsense"),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn version_and_shape_checks() {
        let (p, s) = sample();
        let bytes = encode_checkpoint(&p, &s, &Value::Null).unwrap();
        let (mut header, payload) = decode_header(&bytes).unwrap();
        header.format_version = 99;
        let json = serde_json::to_vec(&header).unwrap();
        let mut forged = MAGIC.to_vec();
        forged.extend_from_slice(&(json.len() as u64).to_le_bytes());
        forged.extend_from_slice(&json);
        forged.extend_from_slice(payload);
        assert!(matches!(
            decode_checkpoint::<f64, ModelParams<f64>>(&forged),
            Err(Error::Version { found: 99, expected: 1 })
        ));

        let ck: Checkpoint<f64, ModelParams<f64>> = decode_checkpoint(&bytes).unwrap();
        let wrong_m = ModelDims::Gnn(GnnDims::new(4, 2, 6, 3));
        assert!(matches!(ck.expect_dims(&wrong_m), Err(Error::ShapeMismatch(_))));
        assert!(ck.expect_dims(&ModelDims::Gnn(p.dims)).is_ok());
        assert!(matches!(
            decode_checkpoint::<f64, LinearModel<f64>>(&bytes),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn baselines_share_the_container() {
        let mlp = MlpModel::<f64>::init(5, 8, 2, 1);
        let bytes = encode_checkpoint(&mlp, &AdamState::new(&mlp), &Value::Null).unwrap();
        assert_eq!(decode_header(&bytes).unwrap().0.model.kind(), ModelKind::Mlp);
        let back: Checkpoint<f64, MlpModel<f64>> = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back.params, mlp);
    }
}
