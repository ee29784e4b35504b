//! Versioned binary snapshots of agents and models.
//!
//! Layout (little endian): magic `OWLC`, format version `u16`, scalar width
//! in bytes `u8`, payload tag `u8`, feature dimension `u32`, payload length
//! `u64`, then the bincode-encoded payload.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{OwlError, Result};
use crate::evm::EvmModel;
use crate::learners::DiscoveredLearner;
use crate::pipeline::Agent;
use crate::scalar::Scalar;

pub const MAGIC: [u8; 4] = *b"OWLC";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum PayloadTag {
    Agent = 1,
    EvmModel = 2,
    Learner = 3,
}

impl PayloadTag {
    fn from_u8(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Self::Agent),
            2 => Ok(Self::EvmModel),
            3 => Ok(Self::Learner),
            other => Err(OwlError::Checkpoint(format!("unknown payload tag {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub version: u16,
    pub scalar_bytes: u8,
    pub tag: PayloadTag,
    pub dim: u32,
    pub payload_len: u64,
}

const HEADER_LEN: usize = 4 + 2 + 1 + 1 + 4 + 8;

fn encode<T: Scalar, P: Serialize>(tag: PayloadTag, dim: usize, payload: &P) -> Result<Vec<u8>> {
    let body = bincode::serialize(payload).map_err(|e| OwlError::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + body.len());
    out.extend_from_slice(&MAGIC);
    // Writes into a Vec cannot fail.
    out.write_u16::<LittleEndian>(VERSION).unwrap();
    out.write_u8(std::mem::size_of::<T>() as u8).unwrap();
    out.write_u8(tag as u8).unwrap();
    let dim = u32::try_from(dim).map_err(|_| OwlError::Checkpoint("dimension exceeds u32".into()))?;
    out.write_u32::<LittleEndian>(dim).unwrap();
    out.write_u64::<LittleEndian>(body.len() as u64).unwrap();
    out.extend_from_slice(&body);
    Ok(out)
}

pub fn read_header(bytes: &[u8]) -> Result<Header> {
    let short = |_| OwlError::Checkpoint("truncated header".into());
    let mut cur = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic).map_err(short)?;
    if magic != MAGIC {
        return Err(OwlError::Checkpoint("bad magic".into()));
    }
    let version = cur.read_u16::<LittleEndian>().map_err(short)?;
    if version != VERSION {
        return Err(OwlError::Checkpoint(format!("unsupported version {version}")));
    }
    let scalar_bytes = cur.read_u8().map_err(short)?;
    let tag = PayloadTag::from_u8(cur.read_u8().map_err(short)?)?;
    let dim = cur.read_u32::<LittleEndian>().map_err(short)?;
    let payload_len = cur.read_u64::<LittleEndian>().map_err(short)?;
    Ok(Header { version, scalar_bytes, tag, dim, payload_len })
}

fn decode<T: Scalar, P: DeserializeOwned>(bytes: &[u8], tag: PayloadTag) -> Result<(Header, P)> {
    let header = read_header(bytes)?;
    if header.tag != tag {
        return Err(OwlError::Checkpoint(format!("expected {tag:?} payload, found {:?}", header.tag)));
    }
    if header.scalar_bytes as usize != std::mem::size_of::<T>() {
        return Err(OwlError::Checkpoint(format!(
            "checkpoint holds {}-byte scalars, requested {}",
            header.scalar_bytes,
            std::mem::size_of::<T>()
        )));
    }
    let body = &bytes[HEADER_LEN..];
    if body.len() as u64 != header.payload_len {
        return Err(OwlError::Checkpoint(format!(
            "payload length {} does not match header {}",
            body.len(),
            header.payload_len
        )));
    }
    let payload = bincode::deserialize(body).map_err(|e| OwlError::Checkpoint(e.to_string()))?;
    Ok((header, payload))
}

fn check_header_dim(header: &Header, dim: usize) -> Result<()> {
    if header.dim as usize != dim {
        return Err(OwlError::Checkpoint(format!("header dim {} but payload dim {dim}", header.dim)));
    }
    Ok(())
}

pub fn encode_agent<T: Scalar>(agent: &Agent<T>) -> Result<Vec<u8>> {
    encode::<T, _>(PayloadTag::Agent, agent.dim, agent)
}

pub fn decode_agent<T: Scalar>(bytes: &[u8]) -> Result<Agent<T>> {
    let (header, agent): (_, Agent<T>) = decode::<T, _>(bytes, PayloadTag::Agent)?;
    check_header_dim(&header, agent.dim)?;
    Ok(agent)
}

pub fn encode_evm<T: Scalar>(model: &EvmModel<T>) -> Result<Vec<u8>> {
    encode::<T, _>(PayloadTag::EvmModel, model.dim, model)
}

pub fn decode_evm<T: Scalar>(bytes: &[u8]) -> Result<EvmModel<T>> {
    let (header, model): (_, EvmModel<T>) = decode::<T, _>(bytes, PayloadTag::EvmModel)?;
    check_header_dim(&header, model.dim)?;
    Ok(model)
}

pub fn encode_learner<T: Scalar>(learner: &DiscoveredLearner<T>, dim: usize) -> Result<Vec<u8>> {
    encode::<T, _>(PayloadTag::Learner, dim, learner)
}

pub fn decode_learner<T: Scalar>(bytes: &[u8]) -> Result<(usize, DiscoveredLearner<T>)> {
    let (header, learner) = decode::<T, _>(bytes, PayloadTag::Learner)?;
    Ok((header.dim as usize, learner))
}

pub fn save_agent<T: Scalar>(agent: &Agent<T>, path: &Path) -> Result<()> {
    let bytes = encode_agent(agent)?;
    fs::write(path, bytes).map_err(|source| OwlError::Io { path: path.display().to_string(), source })
}

pub fn load_agent<T: Scalar>(path: &Path) -> Result<Agent<T>> {
    let bytes = fs::read(path).map_err(|source| OwlError::Io { path: path.display().to_string(), source })?;
    decode_agent(&bytes)
}
