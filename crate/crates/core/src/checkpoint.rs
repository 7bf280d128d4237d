//! Versioned binary checkpoint of a network and, optionally, the Hebbian head.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic "MOHQACKP" | u32 version
//! u32 × 3 input shape (C, H, W) | u32 layer count
//! per layer: u8 tag (0 conv, 1 relu, 2 flatten, 3 dense), u32 × 3 arguments
//! u64 parameter count | f64 × count, row-major per layer
//! u8 has_mohn
//!   u32 actions | u32 features | f64 theta_pct, tau_e, baseline, running_avg_alpha
//!   u8 post_synaptic | f64 weights | f64 traces | f64 running average
//!   u8 has_prev_input | f64 × features
//! ```
//!
//! Floats are stored as raw bits, so `load(save(x))` is bit-identical.

use std::io::{Read, Write};

use crate::mohn::{MohnConfig, MohnState, PostSynaptic};
use crate::nn::{LayerSpec, Network, Shape};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"MOHQACKP";
const VERSION: u32 = 1;

pub fn save<W: Write>(mut w: W, net: &Network, mohn: Option<&MohnState>) -> Result<()> {
    w.write_all(MAGIC)?;
    put_u32(&mut w, VERSION)?;
    let input = net.input_shape();
    for dim in [input.channels, input.height, input.width] {
        put_u32(&mut w, dim as u32)?;
    }
    let specs = net.layer_specs();
    put_u32(&mut w, specs.len() as u32)?;
    for spec in specs {
        let (tag, args) = match spec {
            LayerSpec::Conv2d { out_channels, kernel, stride } => (0u8, [out_channels, kernel, stride]),
            LayerSpec::Relu => (1, [0; 3]),
            LayerSpec::Flatten => (2, [0; 3]),
            LayerSpec::Dense { out_dim } => (3, [out_dim, 0, 0]),
        };
        w.write_all(&[tag])?;
        for a in args {
            put_u32(&mut w, a as u32)?;
        }
    }
    let params = net.flat_params();
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    put_f64s(&mut w, &params)?;

    match mohn {
        None => w.write_all(&[0])?,
        Some(m) => {
            w.write_all(&[1])?;
            put_u32(&mut w, m.num_actions() as u32)?;
            put_u32(&mut w, m.num_features() as u32)?;
            let c = m.config();
            put_f64s(&mut w, &[c.theta_pct, c.tau_e, c.baseline, c.running_avg_alpha])?;
            w.write_all(&[match c.post_synaptic {
                PostSynaptic::ExecutedAction => 0,
                PostSynaptic::MohnOutput => 1,
            }])?;
            put_f64s(&mut w, m.weights())?;
            put_f64s(&mut w, m.traces())?;
            put_f64s(&mut w, m.running_avg())?;
            match m.prev_input() {
                None => w.write_all(&[0])?,
                Some(p) => {
                    w.write_all(&[1])?;
                    put_f64s(&mut w, p)?;
                }
            }
        }
    }
    Ok(())
}

pub fn load<R: Read>(mut r: R) -> Result<(Network, Option<MohnState>)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let version = get_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let input = Shape::new(get_u32(&mut r)? as usize, get_u32(&mut r)? as usize, get_u32(&mut r)? as usize);
    let n_layers = get_u32(&mut r)? as usize;
    let mut specs = Vec::with_capacity(n_layers.min(1024));
    for _ in 0..n_layers {
        let tag = get_u8(&mut r)?;
        let args = [get_u32(&mut r)? as usize, get_u32(&mut r)? as usize, get_u32(&mut r)? as usize];
        specs.push(match tag {
            0 => LayerSpec::Conv2d { out_channels: args[0], kernel: args[1], stride: args[2] },
            1 => LayerSpec::Relu,
            2 => LayerSpec::Flatten,
            3 => LayerSpec::Dense { out_dim: args[0] },
            t => return Err(Error::Format(format!("unknown layer tag {t}"))),
        });
    }
    let mut net = Network::zeros(input, &specs).map_err(|e| Error::Format(e.to_string()))?;
    let mut count = [0u8; 8];
    r.read_exact(&mut count)?;
    let count = u64::from_le_bytes(count) as usize;
    if count != net.param_count() {
        return Err(Error::Format(format!("expected {} parameters, found {count}", net.param_count())));
    }
    net.set_flat_params(&get_f64s(&mut r, count)?)?;

    let mohn = match get_u8(&mut r)? {
        0 => None,
        1 => {
            let actions = get_u32(&mut r)? as usize;
            let features = get_u32(&mut r)? as usize;
            let c = get_f64s(&mut r, 4)?;
            let post_synaptic = match get_u8(&mut r)? {
                0 => PostSynaptic::ExecutedAction,
                1 => PostSynaptic::MohnOutput,
                t => return Err(Error::Format(format!("unknown postsynaptic tag {t}"))),
            };
            let config =
                MohnConfig { theta_pct: c[0], tau_e: c[1], baseline: c[2], running_avg_alpha: c[3], post_synaptic };
            let size = actions
                .checked_mul(features)
                .filter(|&s| s <= 1 << 24)
                .ok_or_else(|| Error::Format("MOHN dimensions too large".into()))?;
            let weights = get_f64s(&mut r, size)?;
            let traces = get_f64s(&mut r, size)?;
            let avg = get_f64s(&mut r, features)?;
            let prev = match get_u8(&mut r)? {
                0 => None,
                _ => Some(get_f64s(&mut r, features)?),
            };
            Some(MohnState::from_parts(config, actions, features, weights, traces, avg, prev)?)
        }
        t => return Err(Error::Format(format!("bad MOHN flag {t}"))),
    };
    Ok((net, mohn))
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_f64s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn get_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n.min(1 << 20));
    let mut b = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dqn::QNetwork;
    use crate::rng::stream_rng;

    #[test]
    fn round_trip_is_bit_identical() {
        let q = QNetwork::new(3, &mut stream_rng(5, 10)).unwrap();
        let mut mohn = MohnState::new(MohnConfig::default(), 3, 64).unwrap();
        let features: Vec<f64> = (0..64).map(|i| (i as f64 * 0.7).sin()).collect();
        mohn.input(&features).unwrap();
        mohn.update_traces(&[0.0, 1.0, 0.0]).unwrap();
        mohn.modulate(1.0).unwrap();

        let mut bytes = Vec::new();
        save(&mut bytes, q.network(), Some(&mohn)).unwrap();
        let (net, back) = load(bytes.as_slice()).unwrap();
        assert_eq!(&net, q.network());
        assert_eq!(back.as_ref(), Some(&mohn));

        let mut again = Vec::new();
        save(&mut again, &net, back.as_ref()).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(load(&b"NOTACKPTxxxx"[..]), Err(Error::Format(_))));
        let q = QNetwork::new(3, &mut stream_rng(5, 10)).unwrap();
        let mut bytes = Vec::new();
        save(&mut bytes, q.network(), None).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(load(bytes.as_slice()), Err(Error::Io(_))));
    }
}
