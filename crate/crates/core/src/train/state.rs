//! Resumable training-state files.
//!
//! Layout, little-endian throughout: magic `CPST`, version `u32`, then
//! epochs done `u64`, Adam step count `u64`, beta `f64`, the four Adam
//! hyperparameters as `f64`, stale epochs `u64`, early-stop flag `u8`, record
//! count `u32` with each record as epoch `u32` plus five `f64`, a best-weights
//! flag `u8` (followed by its epoch `u64` and loss `f64` when set), and
//! finally tensor blocks in the parameter-file encoding: network weights,
//! first moments, second moments and, when flagged, the best weights.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{BestWeights, EpochRecord, LossCurve, TrainState};
use crate::error::{Error, Result};
use crate::optim::{AdamConfig, AdamState};
use crate::posenet::{read_tensors, write_tensors, NetworkSpec, PoseNet};
use crate::tensor::Tensor;

pub const STATE_MAGIC: &[u8; 4] = b"CPST";
pub const STATE_VERSION: u32 = 1;

/// Writes the weights of `net` together with the optimizer and loop state.
pub fn checkpoint(net: &PoseNet, state: &TrainState, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(STATE_MAGIC)?;
    w.write_all(&STATE_VERSION.to_le_bytes())?;
    w.write_all(&(state.epochs_done as u64).to_le_bytes())?;
    w.write_all(&state.adam.t.to_le_bytes())?;
    let AdamConfig {
        alpha,
        beta1,
        beta2,
        epsilon,
    } = state.adam.config;
    for v in [state.beta, alpha, beta1, beta2, epsilon] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&(state.stale_epochs as u64).to_le_bytes())?;
    w.write_all(&[state.stopped_early as u8])?;
    w.write_all(&(state.curve.records.len() as u32).to_le_bytes())?;
    for r in &state.curve.records {
        w.write_all(&(r.epoch as u32).to_le_bytes())?;
        for v in [
            r.train_translation,
            r.train_rotation,
            r.val_translation,
            r.val_rotation,
            r.learning_rate,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    match &state.best {
        Some(b) => {
            w.write_all(&[1])?;
            w.write_all(&(b.epoch as u64).to_le_bytes())?;
            w.write_all(&b.val_loss.to_le_bytes())?;
        }
        None => w.write_all(&[0])?,
    }

    let params = net.graph().params();
    let named: Vec<(&str, &Tensor)> = params.iter().map(|p| (p.name.as_str(), &p.value)).collect();
    write_tensors(&mut w, &named)?;
    for moments in [&state.adam.m, &state.adam.v] {
        let tensors: Vec<(&str, Tensor)> = moments
            .iter()
            .map(|(k, v)| (k.as_str(), Tensor::from_vec(v.clone())))
            .collect();
        let refs: Vec<(&str, &Tensor)> = tensors.iter().map(|(k, t)| (*k, t)).collect();
        write_tensors(&mut w, &refs)?;
    }
    if let Some(b) = &state.best {
        let named: Vec<(&str, &Tensor)> = params
            .iter()
            .map(|p| p.name.as_str())
            .zip(&b.weights)
            .collect();
        write_tensors(&mut w, &named)?;
    }
    w.flush()?;
    Ok(())
}

struct Reader<'a, R> {
    inner: R,
    path: &'a Path,
}

impl<R: Read> Reader<'_, R> {
    fn bytes<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner
            .read_exact(&mut b)
            .map_err(|_| Error::format(self.path, format!("truncated {what}")))?;
        Ok(b)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(what)?))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(what)?))
    }

    fn flag(&mut self, what: &str) -> Result<bool> {
        match self.bytes::<1>(what)?[0] {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::format(self.path, format!("bad {what} flag {other}"))),
        }
    }
}

/// Rebuilds the network from `spec` and loads weights and training state.
pub fn resume(path: impl AsRef<Path>, spec: &NetworkSpec) -> Result<(PoseNet, TrainState)> {
    let path = path.as_ref();
    let mut r = Reader {
        inner: BufReader::new(File::open(path)?),
        path,
    };
    if &r.bytes::<4>("header")? != STATE_MAGIC {
        return Err(Error::format(path, "not a training-state file"));
    }
    let version = r.u32("version")?;
    if version != STATE_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported version {version}"),
        ));
    }
    let epochs_done = r.u64("epoch count")? as usize;
    let t = r.u64("step count")?;
    let beta = r.f64("beta")?;
    let config = AdamConfig {
        alpha: r.f64("learning rate")?,
        beta1: r.f64("beta1")?,
        beta2: r.f64("beta2")?,
        epsilon: r.f64("epsilon")?,
    };
    let stale_epochs = r.u64("stale count")? as usize;
    let stopped_early = r.flag("early stop")?;
    let n_records = r.u32("record count")?;
    if n_records as usize > epochs_done {
        return Err(Error::format(path, "more records than epochs"));
    }
    let mut records = Vec::with_capacity(n_records as usize);
    for _ in 0..n_records {
        records.push(EpochRecord {
            epoch: r.u32("record")? as usize,
            train_translation: r.f64("record")?,
            train_rotation: r.f64("record")?,
            val_translation: r.f64("record")?,
            val_rotation: r.f64("record")?,
            learning_rate: r.f64("record")?,
        });
    }
    let best_header = if r.flag("best weights")? {
        Some((r.u64("best epoch")? as usize, r.f64("best loss")?))
    } else {
        None
    };

    let weights = read_tensors(&mut r.inner, path)?;
    let mut moments = [BTreeMap::new(), BTreeMap::new()];
    for m in &mut moments {
        for (name, t) in read_tensors(&mut r.inner, path)? {
            m.insert(name, t.into_data());
        }
    }
    let best = match best_header {
        Some((epoch, val_loss)) => Some(BestWeights {
            epoch,
            val_loss,
            weights: read_tensors(&mut r.inner, path)?
                .into_iter()
                .map(|(_, t)| t)
                .collect(),
        }),
        None => None,
    };
    if r.inner.read(&mut [0u8; 1])? != 0 {
        return Err(Error::format(path, "trailing bytes"));
    }

    let mut net = PoseNet::new(spec)?;
    let params = net.graph().params();
    if weights.len() != params.len() || weights.iter().zip(params).any(|((n, _), p)| *n != p.name) {
        return Err(Error::format(
            path,
            "weights do not match the network layout",
        ));
    }
    let snapshot: Vec<Tensor> = weights.into_iter().map(|(_, t)| t).collect();
    net.restore(&snapshot)?;
    if let Some(b) = &best {
        if b.weights.len() != snapshot.len()
            || b.weights
                .iter()
                .zip(&snapshot)
                .any(|(a, s)| a.shape() != s.shape())
        {
            return Err(Error::format(
                path,
                "best weights do not match the network layout",
            ));
        }
    }
    let [m, v] = moments;
    let state = TrainState {
        adam: AdamState { config, t, m, v },
        epochs_done,
        curve: LossCurve { records },
        best,
        stale_epochs,
        stopped_early,
        beta,
    };
    Ok((net, state))
}
