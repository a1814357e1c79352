//! WFM1 model files.
//!
//! `"WFM1" | u32 layer_count | layers...`, each layer a u32 type code
//! (0 = convolution, 1 = ReLU); a convolution continues with
//! `u32 out | u32 in | u32 kernel`, then `out*in*k*k` weights and `out`
//! biases as little-endian f32.

use std::fs;
use std::path::Path;

use super::conv::ConvLayer;
use super::model::{Layer, Model};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"WFM1";

const LAYER_CONV: u32 = 0;
const LAYER_RELU: u32 = 1;
// sanity bound on header fields so a corrupt file cannot request huge buffers
const MAX_EXTENT: u32 = 1 << 16;

pub fn encode_model(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&(model.layers().len() as u32).to_le_bytes());
    for layer in model.layers() {
        match layer {
            Layer::Conv(c) => {
                out.extend_from_slice(&LAYER_CONV.to_le_bytes());
                for d in [c.out_channels(), c.in_channels(), c.kernel()] {
                    out.extend_from_slice(&(d as u32).to_le_bytes());
                }
                for v in c.weight.data().iter().chain(c.bias.data()) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            Layer::Relu => out.extend_from_slice(&LAYER_RELU.to_le_bytes()),
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn u32(&mut self, field: &'static str) -> Result<u32> {
        let b = self
            .bytes
            .get(self.pos..self.pos + 4)
            .ok_or_else(|| Error::format(field, "file truncated"))?;
        self.pos += 4;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, n: usize, field: &'static str) -> Result<Vec<f32>> {
        let b = self
            .bytes
            .get(self.pos..self.pos + 4 * n)
            .ok_or_else(|| Error::format(field, "file truncated"))?;
        self.pos += 4 * n;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<Model> {
    match bytes.get(..4) {
        Some(m) if m == MODEL_MAGIC => {}
        _ => return Err(Error::format("magic", "not a WFM1 model file")),
    }
    let mut r = Reader { bytes, pos: 4 };
    let count = r.u32("layer_count")?;
    if count == 0 || count > MAX_EXTENT {
        return Err(Error::format("layer_count", format!("implausible layer count {count}")));
    }
    let mut layers = Vec::with_capacity(count as usize);
    for _ in 0..count {
        match r.u32("layer_type")? {
            LAYER_CONV => {
                let cout = r.u32("out_channels")?;
                let cin = r.u32("in_channels")?;
                let k = r.u32("kernel")?;
                for (v, field) in [(cout, "out_channels"), (cin, "in_channels"), (k, "kernel")] {
                    if v == 0 || v > MAX_EXTENT {
                        return Err(Error::format(field, format!("implausible value {v}")));
                    }
                }
                let (cout, cin, k) = (cout as usize, cin as usize, k as usize);
                let w = r.f32s(cout * cin * k * k, "weights")?;
                let b = r.f32s(cout, "bias")?;
                if w.iter().chain(&b).any(|v| !v.is_finite()) {
                    return Err(Error::format("weights", "non-finite parameter"));
                }
                let conv = ConvLayer::from_parts(
                    Tensor::new(vec![cout, cin, k, k], w)?,
                    Tensor::new(vec![cout], b)?,
                )
                .map_err(|e| Error::format("kernel", e.to_string()))?;
                layers.push(Layer::Conv(conv));
            }
            LAYER_RELU => layers.push(Layer::Relu),
            other => {
                return Err(Error::format("layer_type", format!("unknown layer type {other}")))
            }
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::format(
            "payload",
            format!("{} trailing bytes", bytes.len() - r.pos),
        ));
    }
    Model::from_layers(layers).map_err(|e| Error::format("layers", e.to_string()))
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{BandId, MultiBandImage};
    use crate::rng::Rng;

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut model = Model::<f32>::scnn_with_widths(13, &[8, 6]).unwrap();
        model.init_he_uniform(4);
        let bytes = encode_model(&model);
        let back = decode_model(&bytes).unwrap();
        assert_eq!(back, model);
        assert_eq!(encode_model(&back), bytes);
    }

    #[test]
    fn predictions_survive_roundtrip() {
        let mut model = Model::<f32>::scnn_with_widths(13, &[8, 8, 8]).unwrap();
        model.init_he_uniform(9);
        let mut rng = Rng::new(2);
        let data = (0..16 * 16 * 13).map(|_| rng.uniform() as f32).collect();
        let img = MultiBandImage::new(16, 16, BandId::canonical(13), data).unwrap();
        let back = decode_model(&encode_model(&model)).unwrap();
        assert_eq!(model.predict(&img).unwrap(), back.predict(&img).unwrap());
    }

    #[test]
    fn wrong_magic_rejected() {
        let mut bytes = encode_model(&Model::linear(13).unwrap());
        bytes[3] = b'2';
        assert!(matches!(decode_model(&bytes), Err(Error::Format { field: "magic", .. })));
    }

    #[test]
    fn truncated_and_malformed_rejected() {
        let bytes = encode_model(&Model::linear(13).unwrap());
        assert!(decode_model(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_model(&extra).is_err());
        let mut bad_type = bytes.clone();
        bad_type[8] = 9;
        assert!(matches!(
            decode_model(&bad_type),
            Err(Error::Format { field: "layer_type", .. })
        ));
    }
}
