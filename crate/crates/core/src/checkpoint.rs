//! Self-describing binary checkpoint container.
//!
//! Layout: an 8-byte magic header, a format-version integer, then a list of
//! named sections. Network sections record layer sizes, activation names as
//! strings, and parameter arrays in row-major order. All integers and f64 bit
//! patterns are little-endian; round trips are bit-exact.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::nn::{Activation, AdamState, DenseNetwork};
use crate::{Error, Result};

pub const MAGIC: [u8; 8] = *b"COSTREG\x01";
pub const FORMAT_VERSION: u32 = 1;

/// One named section of a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub enum Section {
    Network(DenseNetwork),
    Adam { beta1: f64, beta2: f64, epsilon: f64, step: u64, first_moment: Vec<f64>, second_moment: Vec<f64> },
    Floats(Vec<f64>),
    Ints(Vec<u64>),
    Text(String),
}

impl Section {
    fn tag(&self) -> u8 {
        match self {
            Section::Network(_) => 1,
            Section::Adam { .. } => 2,
            Section::Floats(_) => 3,
            Section::Ints(_) => 4,
            Section::Text(_) => 5,
        }
    }

    pub fn from_adam(state: &AdamState) -> Self {
        let (beta1, beta2, epsilon, step, first_moment, second_moment) = state.to_flat();
        Section::Adam { beta1, beta2, epsilon, step, first_moment, second_moment }
    }

    pub fn to_adam(&self, net: &DenseNetwork) -> Result<AdamState> {
        match self {
            Section::Adam { beta1, beta2, epsilon, step, first_moment, second_moment } => {
                AdamState::from_flat(net, *beta1, *beta2, *epsilon, *step, first_moment, second_moment)
            }
            _ => Err(Error::Checkpoint("section is not an optimizer state".into())),
        }
    }
}

/// An ordered collection of named sections.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    sections: Vec<(String, Section)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: &str, section: Section) {
        self.sections.push((name.to_string(), section));
    }

    pub fn get(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.sections.iter().map(|(n, _)| n.as_str())
    }

    pub fn network(&self, name: &str) -> Result<&DenseNetwork> {
        match self.get(name) {
            Some(Section::Network(net)) => Ok(net),
            Some(_) => Err(Error::Checkpoint(format!("section '{name}' is not a network"))),
            None => Err(Error::Checkpoint(format!("missing network section '{name}'"))),
        }
    }

    pub fn text(&self, name: &str) -> Result<&str> {
        match self.get(name) {
            Some(Section::Text(t)) => Ok(t),
            Some(_) => Err(Error::Checkpoint(format!("section '{name}' is not text"))),
            None => Err(Error::Checkpoint(format!("missing text section '{name}'"))),
        }
    }

    pub fn floats(&self, name: &str) -> Result<&[f64]> {
        match self.get(name) {
            Some(Section::Floats(v)) => Ok(v),
            Some(_) => Err(Error::Checkpoint(format!("section '{name}' is not a float array"))),
            None => Err(Error::Checkpoint(format!("missing float section '{name}'"))),
        }
    }

    pub fn ints(&self, name: &str) -> Result<&[u64]> {
        match self.get(name) {
            Some(Section::Ints(v)) => Ok(v),
            Some(_) => Err(Error::Checkpoint(format!("section '{name}' is not an int array"))),
            None => Err(Error::Checkpoint(format!("missing int section '{name}'"))),
        }
    }

    pub fn adam(&self, name: &str, net: &DenseNetwork) -> Result<AdamState> {
        match self.get(name) {
            Some(section) => section.to_adam(net),
            None => Err(Error::Checkpoint(format!("missing optimizer section '{name}'"))),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        put_u32(&mut out, self.sections.len() as u32);
        for (name, section) in &self.sections {
            put_str(&mut out, name);
            out.push(section.tag());
            match section {
                Section::Network(net) => encode_network(&mut out, net),
                Section::Adam { beta1, beta2, epsilon, step, first_moment, second_moment } => {
                    put_f64(&mut out, *beta1);
                    put_f64(&mut out, *beta2);
                    put_f64(&mut out, *epsilon);
                    put_u64(&mut out, *step);
                    put_f64_slice(&mut out, first_moment);
                    put_f64_slice(&mut out, second_moment);
                }
                Section::Floats(v) => put_f64_slice(&mut out, v),
                Section::Ints(v) => {
                    put_u64(&mut out, v.len() as u64);
                    for x in v {
                        put_u64(&mut out, *x);
                    }
                }
                Section::Text(t) => put_str(&mut out, t),
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8)?;
        if magic != MAGIC {
            return Err(Error::Checkpoint("bad magic header".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::CheckpointVersion { found: version, supported: FORMAT_VERSION });
        }
        let count = r.u32()? as usize;
        let mut sections = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name = r.string()?;
            let tag = r.u8()?;
            let section = match tag {
                1 => Section::Network(decode_network(&mut r)?),
                2 => Section::Adam {
                    beta1: r.f64()?,
                    beta2: r.f64()?,
                    epsilon: r.f64()?,
                    step: r.u64()?,
                    first_moment: r.f64_slice()?,
                    second_moment: r.f64_slice()?,
                },
                3 => Section::Floats(r.f64_slice()?),
                4 => {
                    let n = r.u64()? as usize;
                    if n > r.bytes.len() / 8 {
                        return Err(Error::Checkpoint("int array length exceeds data".into()));
                    }
                    let mut v = Vec::with_capacity(n);
                    for _ in 0..n {
                        v.push(r.u64()?);
                    }
                    Section::Ints(v)
                }
                5 => Section::Text(r.string()?),
                other => return Err(Error::Checkpoint(format!("unknown section tag {other}"))),
            };
            sections.push((name, section));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after final section".into()));
        }
        Ok(Self { sections })
    }
}

fn encode_network(out: &mut Vec<u8>, net: &DenseNetwork) {
    put_u32(out, net.sizes().len() as u32);
    for &s in net.sizes() {
        put_u64(out, s as u64);
    }
    put_str(out, net.hidden_activation().name());
    put_str(out, net.output_activation().name());
    for l in 0..net.layer_count() {
        for &w in net.layer_weights(l) {
            put_f64(out, w);
        }
        for &b in net.layer_biases(l) {
            put_f64(out, b);
        }
    }
}

fn decode_network(r: &mut Reader<'_>) -> Result<DenseNetwork> {
    let n_sizes = r.u32()? as usize;
    if !(2..=64).contains(&n_sizes) {
        return Err(Error::Checkpoint(format!("implausible layer-size count {n_sizes}")));
    }
    let mut sizes = Vec::with_capacity(n_sizes);
    for _ in 0..n_sizes {
        sizes.push(r.u64()? as usize);
    }
    let hidden = Activation::from_name(&r.string()?)
        .map_err(|_| Error::Checkpoint("unknown hidden activation".into()))?;
    let output = Activation::from_name(&r.string()?)
        .map_err(|_| Error::Checkpoint("unknown output activation".into()))?;
    let mut weights = Vec::with_capacity(n_sizes - 1);
    let mut biases = Vec::with_capacity(n_sizes - 1);
    for l in 0..n_sizes - 1 {
        let w_len = sizes[l]
            .checked_mul(sizes[l + 1])
            .ok_or_else(|| Error::Checkpoint("layer size overflow".into()))?;
        if w_len > r.bytes.len() / 8 {
            return Err(Error::Checkpoint("weight array length exceeds data".into()));
        }
        let mut w = Vec::with_capacity(w_len);
        for _ in 0..w_len {
            w.push(r.f64()?);
        }
        let mut b = Vec::with_capacity(sizes[l + 1]);
        for _ in 0..sizes[l + 1] {
            b.push(r.f64()?);
        }
        weights.push(w);
        biases.push(b);
    }
    DenseNetwork::from_parts(sizes, hidden, output, weights, biases)
}

fn put_u32(out: &mut Vec<u8>, x: u32) {
    out.extend_from_slice(&x.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, x: u64) {
    out.extend_from_slice(&x.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, x: f64) {
    out.extend_from_slice(&x.to_bits().to_le_bytes());
}

fn put_f64_slice(out: &mut Vec<u8>, xs: &[f64]) {
    put_u64(out, xs.len() as u64);
    for &x in xs {
        put_f64(out, x);
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("unexpected end of data".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("length checked")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("length checked")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn f64_slice(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        if n > self.bytes.len() / 8 {
            return Err(Error::Checkpoint("float array length exceeds data".into()));
        }
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            v.push(self.f64()?);
        }
        Ok(v)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        if n > self.bytes.len() {
            return Err(Error::Checkpoint("string length exceeds data".into()));
        }
        let raw = self.take(n)?;
        core::str::from_utf8(raw)
            .map(|s| s.to_string())
            .map_err(|_| Error::Checkpoint("invalid utf-8 in string".into()))
    }
}
