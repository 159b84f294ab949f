//! Self-describing binary checkpoint container.
//!
//! ```text
//! UTSCKPT v1\n
//! meta <count>\n          then <count> lines of key=value
//! params <count>\n        then <count> records
//! adagrad <count>\n       then <count> records
//! end\n
//! ```
//!
//! A record is a line `<name> <dtype> <rank> <d0> .. <dn>\n` followed by the
//! little-endian values and a single `\n`. Records are written in name
//! order, so save → load → save is byte-identical.

use std::io::{BufRead, Write};

use crate::error::{NumericsError, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &str = "UTSCKPT v1";

fn bad(msg: impl Into<String>) -> NumericsError {
    NumericsError::Checkpoint(msg.into())
}

fn write_record<S: Scalar>(out: &mut Vec<u8>, name: &str, t: &Tensor<S>) {
    let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
    out.extend_from_slice(format!("{name} {} {} {}\n", S::DTYPE, t.shape().len(), dims.join(" ")).as_bytes());
    for &v in t.data() {
        v.write_le(out);
    }
    out.push(b'\n');
}

/// Serializes `meta` and `params` (entries and accumulators).
pub fn encode<S: Scalar>(meta: &[(String, String)], params: &ParamStore<S>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC.as_bytes());
    out.push(b'\n');
    out.extend_from_slice(format!("meta {}\n", meta.len()).as_bytes());
    for (k, v) in meta {
        if k.contains(['=', '\n']) || v.contains('\n') {
            return Err(bad(format!("meta entry {k:?} is not a single key=value line")));
        }
        out.extend_from_slice(format!("{k}={v}\n").as_bytes());
    }
    out.extend_from_slice(format!("params {}\n", params.len()).as_bytes());
    for (name, t) in params.iter() {
        if name.contains(char::is_whitespace) {
            return Err(bad(format!("parameter name {name:?} contains whitespace")));
        }
        write_record(&mut out, name, t);
    }
    out.extend_from_slice(format!("adagrad {}\n", params.len()).as_bytes());
    for (name, t) in params.accumulators() {
        write_record(&mut out, name, t);
    }
    out.extend_from_slice(b"end\n");
    Ok(out)
}

pub fn write<S: Scalar>(w: &mut impl Write, meta: &[(String, String)], params: &ParamStore<S>) -> Result<()> {
    w.write_all(&encode(meta, params)?)?;
    Ok(())
}

fn read_line(r: &mut impl BufRead) -> Result<String> {
    let mut buf = Vec::new();
    r.read_until(b'\n', &mut buf)?;
    if buf.last() != Some(&b'\n') {
        return Err(bad("unexpected end of file"));
    }
    buf.pop();
    String::from_utf8(buf).map_err(|_| bad("header line is not UTF-8"))
}

fn section(r: &mut impl BufRead, tag: &str) -> Result<usize> {
    let line = read_line(r)?;
    let rest = line
        .strip_prefix(tag)
        .and_then(|s| s.strip_prefix(' '))
        .ok_or_else(|| bad(format!("expected section {tag:?}, found {line:?}")))?;
    rest.parse().map_err(|_| bad(format!("bad count in {line:?}")))
}

fn read_record<S: Scalar>(r: &mut impl BufRead) -> Result<(String, Tensor<S>)> {
    let line = read_line(r)?;
    let mut parts = line.split(' ');
    let name = parts.next().filter(|s| !s.is_empty()).ok_or_else(|| bad("record without name"))?;
    let dtype = parts.next().ok_or_else(|| bad("record without dtype"))?;
    if dtype != S::DTYPE {
        return Err(bad(format!("{name}: stored as {dtype}, requested {}", S::DTYPE)));
    }
    let rank: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad(format!("{name}: bad rank")))?;
    let shape: Vec<usize> = parts
        .map(|s| s.parse().map_err(|_| bad(format!("{name}: bad dimension {s:?}"))))
        .collect::<Result<_>>()?;
    if shape.len() != rank {
        return Err(bad(format!("{name}: rank {rank} but {} dims", shape.len())));
    }
    let n: usize = shape.iter().product();
    let mut raw = vec![0u8; n * S::WIDTH + 1];
    r.read_exact(&mut raw).map_err(|_| bad(format!("{name}: truncated values")))?;
    if raw.pop() != Some(b'\n') {
        return Err(bad(format!("{name}: missing record terminator")));
    }
    let data = raw.chunks(S::WIDTH).map(S::read_le).collect();
    Ok((name.to_string(), Tensor::new(shape, data)?))
}

/// Reads a checkpoint written by [`write`] with the same dtype.
pub fn read<S: Scalar>(r: &mut impl BufRead) -> Result<(Vec<(String, String)>, ParamStore<S>)> {
    let magic = read_line(r)?;
    if magic != MAGIC {
        return Err(bad(format!("bad header {magic:?}")));
    }
    let n_meta = section(r, "meta")?;
    let mut meta = Vec::with_capacity(n_meta);
    for _ in 0..n_meta {
        let line = read_line(r)?;
        let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("bad meta line {line:?}")))?;
        meta.push((k.to_string(), v.to_string()));
    }
    let n_params = section(r, "params")?;
    let mut store = ParamStore::new();
    for _ in 0..n_params {
        let (name, t) = read_record::<S>(r)?;
        store.insert(name, t);
    }
    let n_acc = section(r, "adagrad")?;
    if n_acc != n_params {
        return Err(bad(format!("{n_params} params but {n_acc} accumulators")));
    }
    for _ in 0..n_acc {
        let (name, t) = read_record::<S>(r)?;
        if t.data().iter().any(|&v| v < S::zero()) {
            return Err(bad(format!("{name}: negative accumulator entry")));
        }
        store.set_accumulator(&name, t)?;
    }
    if read_line(r)? != "end" {
        return Err(bad("missing end marker"));
    }
    Ok((meta, store))
}

/// Dtype tag of the first parameter record, without decoding values.
pub fn peek_dtype(r: &mut impl BufRead) -> Result<String> {
    if read_line(r)? != MAGIC {
        return Err(bad("bad header"));
    }
    let n_meta = section(r, "meta")?;
    for _ in 0..n_meta {
        read_line(r)?;
    }
    let n = section(r, "params")?;
    if n == 0 {
        return Ok(f64::DTYPE.to_string());
    }
    let line = read_line(r)?;
    line.split(' ')
        .nth(1)
        .map(str::to_string)
        .ok_or_else(|| bad("record without dtype"))
}
