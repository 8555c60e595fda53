//! Binary checkpoints: `PPCK`, a u16 version, then records of
//! `{u16 name length, name, u8 rank, u32 dims…, f32 LE payload}`.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::adam::{AdamConfig, AdamState};
use crate::model::{init_params, ModelConfig, CONFIG_RECORD};
use crate::params::ParameterStore;
use crate::NnError;

pub const MAGIC: &[u8; 4] = b"PPCK";
pub const VERSION: u16 = 1;

/// One named f32 array.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

fn bad(msg: impl Into<String>) -> NnError {
    NnError::Checkpoint(msg.into())
}

pub fn write_records<W: Write>(mut out: W, records: &[Record]) -> Result<(), NnError> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    for r in records {
        let name = r.name.as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| bad(format!("name too long: {}", r.name)))?;
        let rank = u8::try_from(r.dims.len()).map_err(|_| bad(format!("rank too high: {}", r.name)))?;
        if r.dims.iter().product::<usize>() != r.data.len() {
            return Err(bad(format!(
                "{}: dims {:?} do not match {} values",
                r.name,
                r.dims,
                r.data.len()
            )));
        }
        out.write_all(&len.to_le_bytes())?;
        out.write_all(name)?;
        out.write_all(&[rank])?;
        for d in &r.dims {
            let d = u32::try_from(*d).map_err(|_| bad(format!("dimension too large: {}", r.name)))?;
            out.write_all(&d.to_le_bytes())?;
        }
        for v in &r.data {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_exact<R: Read>(input: &mut R, n: usize, what: &str) -> Result<Vec<u8>, NnError> {
    let mut buf = vec![0u8; n];
    input
        .read_exact(&mut buf)
        .map_err(|_| bad(format!("truncated while reading {what}")))?;
    Ok(buf)
}

pub fn read_records<R: Read>(mut input: R) -> Result<Vec<Record>, NnError> {
    let head = read_exact(&mut input, 6, "header")?;
    if &head[..4] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = u16::from_le_bytes([head[4], head[5]]);
    if version != VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let mut records = Vec::new();
    loop {
        let mut len = [0u8; 2];
        match input.read(&mut len[..1])? {
            0 => break,
            _ => input
                .read_exact(&mut len[1..])
                .map_err(|_| bad("truncated record header"))?,
        }
        let len = u16::from_le_bytes(len) as usize;
        let name = String::from_utf8(read_exact(&mut input, len, "record name")?)
            .map_err(|_| bad("record name is not UTF-8"))?;
        let rank = read_exact(&mut input, 1, &name)?[0] as usize;
        let dims_raw = read_exact(&mut input, 4 * rank, &name)?;
        let dims: Vec<usize> = dims_raw
            .chunks(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
            .collect();
        let n: usize = dims.iter().product();
        let payload = read_exact(&mut input, 4 * n, &name)?;
        let data = payload
            .chunks(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        records.push(Record { name, dims, data });
    }
    Ok(records)
}

/// An `f32` payload value back to the `f64` it was most likely written
/// from: the shortest decimal that rounds to it. Recovers settings such as
/// `0.001` exactly.
pub fn widen(v: f32) -> f64 {
    v.to_string().parse().unwrap_or(v as f64)
}

/// A loaded model, optionally with optimizer state.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParameterStore<f32>,
    pub adam: Option<AdamState<f32>>,
}

fn record(name: &str, dims: Vec<usize>, data: Vec<f32>) -> Record {
    Record {
        name: name.to_string(),
        dims,
        data,
    }
}

/// Config, parameters, batchnorm statistics and (optionally) Adam state.
pub fn checkpoint_records(
    config: &ModelConfig,
    params: &ParameterStore<f32>,
    adam: Option<&AdamState<f32>>,
) -> Vec<Record> {
    let mut out = vec![config.to_record()];
    for p in params.params() {
        out.push(record(&p.name, p.value.shape.clone(), p.value.data.clone()));
    }
    for (name, b) in params.buffers() {
        out.push(record(name, b.shape.clone(), b.data.clone()));
    }
    if let Some(a) = adam {
        let c = a.config;
        out.push(record(
            "adam.config",
            vec![5],
            [c.lr, c.beta1, c.beta2, c.eps, c.weight_decay]
                .iter()
                .map(|v| *v as f32)
                .collect(),
        ));
        out.push(record("adam.t", vec![1], vec![a.t as f32]));
        for (p, (m, v)) in params.params().iter().zip(a.m.iter().zip(&a.v)) {
            out.push(record(&format!("adam.m.{}", p.name), p.value.shape.clone(), m.clone()));
            out.push(record(&format!("adam.v.{}", p.name), p.value.shape.clone(), v.clone()));
        }
    }
    out
}

pub fn save_checkpoint(
    path: &Path,
    config: &ModelConfig,
    params: &ParameterStore<f32>,
    adam: Option<&AdamState<f32>>,
) -> Result<(), NnError> {
    let file = std::fs::File::create(path)?;
    write_records(std::io::BufWriter::new(file), &checkpoint_records(config, params, adam))
}

pub fn checkpoint_from_records(records: Vec<Record>) -> Result<Checkpoint, NnError> {
    let mut by_name: HashMap<String, Record> = HashMap::new();
    for r in records {
        if by_name.contains_key(&r.name) {
            return Err(bad(format!("duplicate record {}", r.name)));
        }
        by_name.insert(r.name.clone(), r);
    }
    let cfg_rec = by_name
        .remove(CONFIG_RECORD)
        .ok_or_else(|| bad("missing config record"))?;
    let config = ModelConfig::from_record(&cfg_rec)?;
    let mut params: ParameterStore<f32> = init_params(&config, 0)?;
    let mut take = |name: &str, dims: &[usize]| -> Result<Vec<f32>, NnError> {
        let r = by_name
            .remove(name)
            .ok_or_else(|| bad(format!("missing record {name}")))?;
        if r.dims != dims {
            return Err(bad(format!("{name}: dims {:?}, expected {dims:?}", r.dims)));
        }
        Ok(r.data)
    };
    for p in params.params_mut() {
        p.value.data = take(&p.name, &p.value.shape)?;
    }
    let buffers: Vec<(String, Vec<usize>)> = params
        .buffers()
        .iter()
        .map(|(n, b)| (n.clone(), b.shape.clone()))
        .collect();
    for (name, shape) in buffers {
        let data = take(&name, &shape)?;
        params.set_buffer(&name, data)?;
    }
    let adam = match take("adam.t", &[1]) {
        Err(_) => None,
        Ok(t) => {
            let c = take("adam.config", &[5])?;
            let config = AdamConfig {
                lr: widen(c[0]),
                beta1: widen(c[1]),
                beta2: widen(c[2]),
                eps: widen(c[3]),
                weight_decay: widen(c[4]),
            };
            let mut state = AdamState::new(&params, config);
            state.t = t[0] as u64;
            for (i, p) in params.params().iter().enumerate() {
                state.m[i] = take(&format!("adam.m.{}", p.name), &p.value.shape)?;
                state.v[i] = take(&format!("adam.v.{}", p.name), &p.value.shape)?;
            }
            Some(state)
        }
    };
    if let Some(extra) = by_name.keys().next() {
        return Err(bad(format!("unexpected record {extra}")));
    }
    Ok(Checkpoint { config, params, adam })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, NnError> {
    let file = std::fs::File::open(path)?;
    checkpoint_from_records(read_records(std::io::BufReader::new(file))?)
}
