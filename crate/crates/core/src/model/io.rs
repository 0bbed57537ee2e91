//! Weights file format.
//!
//! ```text
//! offset  size  field
//! 0       6     magic "SGSEG1"
//! 6       2     format version, u16 LE
//! 8       28    layers, heads, d_model, d_ff, window, input_dim, classes (u32 LE each)
//! 36      4·P   parameters as f32 LE, in ModelWeights::tensors() order
//! ```

use super::{ModelConfig, ModelWeights};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"SGSEG1";
pub const FORMAT_VERSION: u16 = 1;
const HEADER_LEN: usize = 6 + 2 + 7 * 4;

pub fn save_weights(weights: &ModelWeights) -> Vec<u8> {
    let c = &weights.config;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * weights.num_parameters());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for v in [c.layers, c.heads, c.d_model, c.d_ff, c.window, c.input_dim, c.classes] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for t in weights.tensors() {
        for &x in t {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    out
}

pub fn load_weights(bytes: &[u8]) -> Result<(ModelWeights, ModelConfig)> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            needed: HEADER_LEN,
            got: bytes.len(),
        });
    }
    let version = u16::from_le_bytes([bytes[6], bytes[7]]);
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let field = |i: usize| {
        let o = 8 + 4 * i;
        u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize
    };
    let config = ModelConfig {
        layers: field(0),
        heads: field(1),
        d_model: field(2),
        d_ff: field(3),
        window: field(4),
        input_dim: field(5),
        classes: field(6),
    };
    config.validate()?;
    let mut weights = ModelWeights::zeros(config);
    let needed = HEADER_LEN + 4 * weights.num_parameters();
    if bytes.len() < needed {
        return Err(Error::Truncated {
            needed,
            got: bytes.len(),
        });
    }
    if bytes.len() > needed {
        return Err(Error::TrailingBytes(bytes.len() - needed));
    }
    let mut values = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))));
    for t in weights.tensors_mut() {
        for x in t {
            *x = values.next().expect("length checked");
        }
    }
    Ok((weights, config))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            layers: 1,
            heads: 2,
            d_model: 4,
            d_ff: 8,
            window: 3,
            input_dim: 6,
            classes: 3,
        }
    }

    #[test]
    fn header_layout() {
        let w = ModelWeights::init(cfg(), 0).unwrap();
        let bytes = save_weights(&w);
        assert_eq!(&bytes[..6], b"SGSEG1");
        assert_eq!(&bytes[6..8], &[1, 0]);
        assert_eq!(&bytes[8..12], &[1, 0, 0, 0]);
        assert_eq!(&bytes[16..20], &[4, 0, 0, 0]);
        assert_eq!(bytes.len(), HEADER_LEN + 4 * w.num_parameters());
    }

    #[test]
    fn corruption_cases_are_distinct() {
        let w = ModelWeights::init(cfg(), 0).unwrap();
        let bytes = save_weights(&w);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(load_weights(&bad), Err(Error::BadMagic)));

        let mut bad = bytes.clone();
        bad[6] = 9;
        assert!(matches!(load_weights(&bad), Err(Error::VersionMismatch { found: 9, .. })));

        assert!(matches!(load_weights(&bytes[..bytes.len() - 3]), Err(Error::Truncated { .. })));
        assert!(matches!(load_weights(&bytes[..20]), Err(Error::Truncated { .. })));

        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(load_weights(&long), Err(Error::TrailingBytes(1))));
    }
}
