//! Network cache format.
//!
//! ```text
//! u64 LE   header length in bytes
//! [u8]     JSON header {"format", "version", "head", "k", "layers": [[out, in], ...]}
//! [f64 LE] per layer: weights row-major (out × in), then biases
//! ```

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::network::{Head, Layer, Network};
use crate::error::{Error, Result};

const FORMAT: &str = "deepdof-network";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    head: Head,
    k: usize,
    layers: Vec<(usize, usize)>,
}

pub fn network_to_bytes(net: &Network) -> Vec<u8> {
    let header = Header {
        format: FORMAT.into(),
        version: VERSION,
        head: net.head(),
        k: net.k(),
        layers: net.layers().iter().map(|l| (l.out_dim(), l.in_dim())).collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serialises");
    let mut out = Vec::with_capacity(8 + json.len() + 8 * net.param_count());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for layer in net.layers() {
        for v in layer.weights.iter().chain(layer.bias.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn network_from_bytes(bytes: &[u8]) -> Result<Network> {
    let truncated = |offset: usize| Error::Format {
        offset: offset as u64,
        reason: "truncated network file".into(),
    };
    let len_bytes: [u8; 8] = bytes.get(..8).ok_or_else(|| truncated(0))?.try_into().unwrap();
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let json = bytes.get(8..8 + header_len).ok_or_else(|| truncated(8))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| Error::Format {
        offset: 8,
        reason: format!("bad header: {e}"),
    })?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(Error::Format {
            offset: 8,
            reason: format!("unsupported format {} v{}", header.format, header.version),
        });
    }
    let mut pos = 8 + header_len;
    let mut next = || -> Result<f64> {
        let chunk: [u8; 8] = bytes.get(pos..pos + 8).ok_or_else(|| truncated(pos))?.try_into().unwrap();
        pos += 8;
        Ok(f64::from_le_bytes(chunk))
    };
    let mut layers = Vec::with_capacity(header.layers.len());
    for &(out_dim, in_dim) in &header.layers {
        let mut w = Vec::with_capacity(out_dim * in_dim);
        for _ in 0..out_dim * in_dim {
            w.push(next()?);
        }
        let mut b = Vec::with_capacity(out_dim);
        for _ in 0..out_dim {
            b.push(next()?);
        }
        layers.push(Layer {
            weights: Array2::from_shape_vec((out_dim, in_dim), w).expect("sized above"),
            bias: Array1::from(b),
        });
    }
    if pos != bytes.len() {
        return Err(Error::Format {
            offset: pos as u64,
            reason: "trailing bytes after parameters".into(),
        });
    }
    Network::from_layers(layers, header.head, header.k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::network::{init_network, Architecture};
    use crate::rng::RngStream;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            input in 1usize..6,
            hidden in proptest::collection::vec(1usize..5, 0..3),
            k in 2usize..5,
            full in any::<bool>(),
            seed in any::<u64>(),
        ) {
            let head = if full { Head::Full } else { Head::Reference };
            let net = init_network(&Architecture::new(input, hidden, k, head), &RngStream::new(seed)).unwrap();
            let back = network_from_bytes(&network_to_bytes(&net)).unwrap();
            prop_assert_eq!(back, net);
        }
    }

    #[test]
    fn truncation_is_a_format_error() {
        let net = init_network(&Architecture::new(2, vec![2], 2, Head::Reference), &RngStream::new(0)).unwrap();
        let bytes = network_to_bytes(&net);
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(network_from_bytes(cut), Err(Error::Format { .. })));
        assert!(matches!(network_from_bytes(&bytes[..4]), Err(Error::Format { offset: 0, .. })));
    }
}
