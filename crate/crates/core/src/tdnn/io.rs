//! Parameter files: a text header followed by raw little-endian f64 tensors.
//!
//! ```text
//! unitcat-tdnn 1
//! feat_dim 40
//! layer frame1 -2,-1,0,1,2 256
//! ...
//! embedding_dim 256
//! classes 10
//! tensor frame1.weight 256 200
//! ...
//! end
//! <tensor data in header order, row-major>
//! ```

use std::path::Path;

use super::{init_tdnn, FrameLayerSpec, TdnnConfig, TdnnError, TdnnParams};

const MAGIC: &str = "unitcat-tdnn 1";

fn tensor_shape(p: &TdnnParams, name: &str) -> (usize, usize) {
    if name == "projection.weight" {
        return (p.projection.rows, p.projection.classes);
    }
    let (layer, kind) = name.rsplit_once('.').unwrap();
    let a = if layer == "segment6" {
        &p.segment6
    } else {
        let i = p.config.frame_layers.iter().position(|l| l.name == layer).unwrap();
        &p.frame[i]
    };
    if kind == "weight" {
        (a.output_dim, a.input_dim)
    } else {
        (a.output_dim, 1)
    }
}

pub fn encode_params(p: &TdnnParams) -> Vec<u8> {
    let cfg = &p.config;
    let mut header = format!("{MAGIC}\nfeat_dim {}\n", cfg.feat_dim);
    for l in &cfg.frame_layers {
        let offs: Vec<String> = l.offsets.iter().map(i32::to_string).collect();
        header.push_str(&format!("layer {} {} {}\n", l.name, offs.join(","), l.output_dim));
    }
    header.push_str(&format!("embedding_dim {}\nclasses {}\n", cfg.embedding_dim, cfg.num_classes));
    let tensors = p.tensors();
    for (name, _) in &tensors {
        let (r, c) = tensor_shape(p, name);
        header.push_str(&format!("tensor {name} {r} {c}\n"));
    }
    header.push_str("end\n");
    let mut out = header.into_bytes();
    for (_, t) in tensors {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn bad(msg: impl Into<String>) -> TdnnError {
    TdnnError::Format(msg.into())
}

pub fn decode_params(bytes: &[u8]) -> Result<TdnnParams, TdnnError> {
    let mut pos = 0;
    let mut lines = Vec::new();
    loop {
        let nl = bytes[pos..].iter().position(|&b| b == b'\n').ok_or_else(|| bad("header not terminated"))?;
        let line = std::str::from_utf8(&bytes[pos..pos + nl]).map_err(|_| bad("header is not UTF-8"))?;
        pos += nl + 1;
        if line == "end" {
            break;
        }
        lines.push(line.to_string());
    }
    if lines.first().map(String::as_str) != Some(MAGIC) {
        return Err(bad("missing or unsupported version line"));
    }
    let mut cfg = TdnnConfig { feat_dim: 0, frame_layers: Vec::new(), embedding_dim: 0, num_classes: 0 };
    let mut declared = Vec::new();
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad number {s:?}")));
    for line in &lines[1..] {
        let f: Vec<&str> = line.split_whitespace().collect();
        match f.as_slice() {
            ["feat_dim", v] => cfg.feat_dim = num(v)?,
            ["layer", name, offs, out] => {
                let offsets = offs
                    .split(',')
                    .map(|o| o.parse::<i32>().map_err(|_| bad(format!("bad offset {o:?}"))))
                    .collect::<Result<Vec<_>, _>>()?;
                cfg.frame_layers.push(FrameLayerSpec { name: name.to_string(), offsets, output_dim: num(out)? });
            }
            ["embedding_dim", v] => cfg.embedding_dim = num(v)?,
            ["classes", v] => cfg.num_classes = num(v)?,
            ["tensor", name, r, c] => declared.push((name.to_string(), num(r)?, num(c)?)),
            _ => return Err(bad(format!("unrecognized header line {line:?}"))),
        }
    }
    if cfg.feat_dim == 0 || cfg.frame_layers.is_empty() || cfg.embedding_dim == 0 || cfg.num_classes == 0 {
        return Err(bad("incomplete network description"));
    }
    let mut p = init_tdnn(&cfg, 0);
    let expected: Vec<(String, usize, usize)> = p
        .tensors()
        .iter()
        .map(|(n, _)| {
            let (r, c) = tensor_shape(&p, n);
            (n.clone(), r, c)
        })
        .collect();
    if declared != expected {
        return Err(bad("tensor list does not match the network description"));
    }
    for (_, t) in p.tensors_mut() {
        let need = t.len() * 8;
        let raw = bytes.get(pos..pos + need).ok_or_else(|| bad("truncated tensor data"))?;
        for (v, c) in t.iter_mut().zip(raw.chunks_exact(8)) {
            *v = f64::from_le_bytes(c.try_into().unwrap());
        }
        pos += need;
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes after tensor data"));
    }
    Ok(p)
}

pub fn save_params(path: &Path, p: &TdnnParams) -> Result<(), TdnnError> {
    std::fs::write(path, encode_params(p)).map_err(|source| TdnnError::Io { path: path.display().to_string(), source })
}

pub fn load_params(path: &Path) -> Result<TdnnParams, TdnnError> {
    let bytes = std::fs::read(path).map_err(|source| TdnnError::Io { path: path.display().to_string(), source })?;
    decode_params(&bytes)
}
