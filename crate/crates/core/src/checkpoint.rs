//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "BASISCKPT1"  u32 version
//! u8 kind (0 basis, 1 irl)  u8 freeze_phi  f64 temperature
//! u32 feature_dim  u32 task_slots  u32 num_actions  u32 d  u32 num_prefs
//! u8 activation  u8 task_crossed
//! u32 n, n x u32 trunk_hidden    u32 n, n x u32 psi_hidden
//! u32 blocks, per block: u16 name length, name, u64 length, length x f32
//! u64 CRC-64 of every preceding byte
//! ```
//!
//! Parameters are stored as `f32`; models snapped with
//! [`BasisModel::snap_to_f32`] round-trip exactly.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::irl::IrlModel;
use crate::model::{BasisModel, ModelSpec};
use crate::nn::Activation;
use crate::rng::crc64;

pub const MAGIC: &[u8; 10] = b"BASISCKPT1";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    /// Multi-task pre-trained model with one preference per task.
    Basis,
    /// Inferred model with a single preference `w_e`.
    Irl,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointMeta {
    pub kind: ModelKind,
    pub freeze_phi: bool,
    /// Policy temperature the model was trained with.
    pub temperature: f64,
}

pub fn to_bytes(model: &BasisModel, meta: &CheckpointMeta) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(MAGIC);
    b.extend_from_slice(&VERSION.to_le_bytes());
    b.push(match meta.kind {
        ModelKind::Basis => 0,
        ModelKind::Irl => 1,
    });
    b.push(meta.freeze_phi as u8);
    b.extend_from_slice(&meta.temperature.to_le_bytes());
    let s = model.spec();
    for v in [s.feature_dim, s.task_slots, s.num_actions, s.d, model.num_prefs()] {
        b.extend_from_slice(&(v as u32).to_le_bytes());
    }
    b.push(s.activation.code());
    b.push(s.task_crossed as u8);
    for widths in [&s.trunk_hidden, &s.psi_hidden] {
        b.extend_from_slice(&(widths.len() as u32).to_le_bytes());
        for &w in widths.iter() {
            b.extend_from_slice(&(w as u32).to_le_bytes());
        }
    }
    let blocks = model.params.layout().blocks();
    b.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for block in blocks {
        b.extend_from_slice(&(block.name.len() as u16).to_le_bytes());
        b.extend_from_slice(block.name.as_bytes());
        b.extend_from_slice(&(block.len as u64).to_le_bytes());
        for &v in &model.params.values[block.range()] {
            b.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let crc = crc64(&b);
    b.extend_from_slice(&crc.to_le_bytes());
    b
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("unexpected end of data".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    fn widths(&mut self) -> Result<Vec<usize>> {
        let n = self.usize()?;
        if n > 64 {
            return Err(Error::Checkpoint(format!("{n} hidden layers")));
        }
        (0..n).map(|_| self.usize()).collect()
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<(BasisModel, CheckpointMeta)> {
    if bytes.len() < MAGIC.len() + 4 + 8 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let (payload, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    let computed = crc64(payload);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    let mut r = Reader {
        bytes: payload,
        pos: MAGIC.len(),
    };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let kind = match r.u8()? {
        0 => ModelKind::Basis,
        1 => ModelKind::Irl,
        k => return Err(Error::Checkpoint(format!("unknown model kind {k}"))),
    };
    let freeze_phi = r.u8()? != 0;
    let temperature = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
    let (feature_dim, task_slots, num_actions, d, num_prefs) = (r.usize()?, r.usize()?, r.usize()?, r.usize()?, r.usize()?);
    let activation = Activation::from_code(r.u8()?).ok_or_else(|| Error::Checkpoint("unknown activation".into()))?;
    let task_crossed = r.u8()? != 0;
    let spec = ModelSpec {
        feature_dim,
        task_slots,
        num_actions,
        d,
        trunk_hidden: r.widths()?,
        psi_hidden: r.widths()?,
        activation,
        task_crossed,
    };
    let mut model = BasisModel::zeros(spec, num_prefs).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let expected: Vec<(String, usize)> = model
        .params
        .layout()
        .blocks()
        .iter()
        .map(|b| (b.name.clone(), b.len))
        .collect();
    if r.u32()? as usize != expected.len() {
        return Err(Error::Checkpoint("block count does not match the model spec".into()));
    }
    for (name, len) in expected {
        let n = r.u16()? as usize;
        let found = std::str::from_utf8(r.take(n)?).map_err(|_| Error::Checkpoint("bad block name".into()))?;
        if found != name {
            return Err(Error::Checkpoint(format!("expected block {name}, found {found}")));
        }
        let stored_len = r.u64()?;
        if stored_len != len as u64 {
            return Err(Error::Checkpoint(format!(
                "block {name} has {stored_len} values, the model layout needs {len}"
            )));
        }
        let raw = r.take(len * 4)?;
        for (dst, c) in model.params.block_mut(&name).iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes(c.try_into().unwrap()) as f64;
        }
    }
    if r.pos != payload.len() {
        return Err(Error::Checkpoint("trailing bytes after the last block".into()));
    }
    Ok((
        model,
        CheckpointMeta {
            kind,
            freeze_phi,
            temperature,
        },
    ))
}

pub fn save(path: &Path, model: &BasisModel, meta: &CheckpointMeta) -> Result<()> {
    fs::write(path, to_bytes(model, meta)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(BasisModel, CheckpointMeta)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

pub fn save_irl(path: &Path, model: &IrlModel) -> Result<()> {
    save(
        path,
        &model.model,
        &CheckpointMeta {
            kind: ModelKind::Irl,
            freeze_phi: model.freeze_phi,
            temperature: model.temperature,
        },
    )
}

pub fn load_irl(path: &Path) -> Result<IrlModel> {
    let (model, meta) = load(path)?;
    if meta.kind != ModelKind::Irl || model.num_prefs() != 1 {
        return Err(Error::Checkpoint("not an inferred-reward checkpoint".into()));
    }
    Ok(IrlModel {
        model,
        freeze_phi: meta.freeze_phi,
        temperature: meta.temperature,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn model(crossed: bool) -> BasisModel {
        let spec = ModelSpec {
            feature_dim: 5,
            task_slots: 2,
            num_actions: 3,
            d: 2,
            trunk_hidden: vec![4],
            psi_hidden: vec![3],
            activation: Activation::Tanh,
            task_crossed: crossed,
        };
        let mut m = BasisModel::new(spec, 2, &mut rng::stream(4, 0)).unwrap();
        m.set_preference(1, &[0.25, -1.5]).unwrap();
        m.snap_to_f32();
        m
    }

    fn meta() -> CheckpointMeta {
        CheckpointMeta {
            kind: ModelKind::Basis,
            freeze_phi: true,
            temperature: 0.05,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for crossed in [false, true] {
            let m = model(crossed);
            let (back, mt) = from_bytes(&to_bytes(&m, &meta())).unwrap();
            assert_eq!(back.params, m.params);
            assert_eq!(back.spec(), m.spec());
            assert_eq!(mt, meta());
            let x = [1.0, 0.0, 0.5, 0.0, -1.0, 0.0, 1.0];
            assert_eq!(back.task_q_values(&x, 1).unwrap(), m.task_q_values(&x, 1).unwrap());
        }
    }

    #[test]
    fn corruption_and_version_are_distinct_errors() {
        let bytes = to_bytes(&model(false), &meta());
        let mut flipped = bytes.clone();
        let mid = bytes.len() / 2;
        flipped[mid] ^= 0x10;
        assert!(matches!(from_bytes(&flipped), Err(Error::ChecksumMismatch { .. })));
        let mut v2 = bytes[..bytes.len() - 8].to_vec();
        v2[10..14].copy_from_slice(&2u32.to_le_bytes());
        let crc = crc64(&v2);
        v2.extend_from_slice(&crc.to_le_bytes());
        assert!(matches!(from_bytes(&v2), Err(Error::VersionMismatch { found: 2, .. })));
        assert!(matches!(from_bytes(b"hello world, not a model"), Err(Error::Checkpoint(_))));
        assert!(from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn every_single_byte_flip_is_rejected() {
        let bytes = to_bytes(&model(true), &meta());
        for i in (0..bytes.len()).step_by(7) {
            let mut b = bytes.clone();
            b[i] ^= 0x01;
            assert!(from_bytes(&b).is_err(), "flip at {i} accepted");
        }
    }

    #[test]
    fn irl_checkpoint_round_trip() {
        let m = IrlModel::init_from_checkpoint(&model(false), false, 0.05).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("irl.ckpt");
        save_irl(&p, &m).unwrap();
        let back = load_irl(&p).unwrap();
        assert_eq!(back.model.params, m.model.params);
        assert!(!back.freeze_phi);
        assert_eq!(back.temperature, 0.05);
        save(&p, &model(false), &meta()).unwrap();
        assert!(load_irl(&p).is_err());
    }
}

#[cfg(test)]
mod props {
    use proptest::prelude::*;
    use rand::Rng as _;

    use super::*;
    use crate::rng;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn round_trip_preserves_forward_outputs_bit_for_bit(
            feature_dim in 1usize..6,
            task_slots in 0usize..3,
            num_actions in 1usize..4,
            d in 1usize..4,
            trunk in prop::collection::vec(1usize..5, 0..2),
            psi in prop::collection::vec(1usize..5, 0..2),
            tanh in any::<bool>(),
            crossed in any::<bool>(),
            seed in 0u64..1000,
        ) {
            let spec = ModelSpec {
                feature_dim,
                task_slots,
                num_actions,
                d,
                trunk_hidden: trunk,
                psi_hidden: psi,
                activation: if tanh { Activation::Tanh } else { Activation::Relu },
                task_crossed: crossed,
            };
            let mut r = rng::stream(seed, 0);
            let mut m = BasisModel::new(spec.clone(), 2, &mut r).unwrap();
            let w: Vec<f64> = (0..d).map(|_| r.gen_range(-2.0..2.0)).collect();
            m.set_preference(0, &w).unwrap();
            m.snap_to_f32();
            let meta = CheckpointMeta { kind: ModelKind::Basis, freeze_phi: tanh, temperature: 0.3 };
            let bytes = to_bytes(&m, &meta);
            let (back, back_meta) = from_bytes(&bytes).unwrap();
            prop_assert_eq!(&back_meta, &meta);
            prop_assert_eq!(to_bytes(&back, &back_meta), bytes);
            let x: Vec<f64> = (0..spec.input_dim()).map(|_| r.gen_range(-1.0..1.0)).collect();
            for k in 0..2 {
                prop_assert_eq!(back.task_q_values(&x, k).unwrap(), m.task_q_values(&x, k).unwrap());
            }
            prop_assert_eq!(back.cumulants(&x).unwrap(), m.cumulants(&x).unwrap());
            // forward is pure
            prop_assert_eq!(m.successor(&x, false).unwrap(), m.successor(&x, false).unwrap());
        }
    }
}
