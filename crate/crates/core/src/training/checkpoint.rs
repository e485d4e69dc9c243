//! Single-file checkpoint: a versioned header followed by named, checksummed
//! sections. Parameters are stored as little-endian `f64`.

use std::collections::BTreeMap;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::decoders::{DecoderShape, Decoders};
use crate::error::{Error, Result};
use crate::gaussians::{GaussianLayer, GaussianPrimitive, LayerTag, SH_COEFFS};
use crate::math::{Mat3, Quat, Rigid, Vec3};
use crate::skeleton::{Skeleton, SkinWeights};
use crate::triplane::{AvatarField, TriPlaneField};

use super::avatar::{Avatar, Rig};
use super::config::Config;
use super::optim::{AdamGroup, OptimizerState, ScheduleSpec};

pub const MAGIC: &[u8; 4] = b"LSCK";
pub const VERSION: u32 = 1;
pub const SECTIONS: [&str; 7] = ["config", "rig", "layers", "triplanes", "decoders", "optimizer", "rng-state"];

/// Everything needed to resume or render a fit.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: Config,
    /// Completed optimizer iterations.
    pub iteration: u64,
    pub avatar: Avatar<f64>,
    pub optimizer: OptimizerState,
    /// Frame sampler, positioned at the next draw.
    pub sampler: ChaCha8Rng,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let sections: [(&str, Vec<u8>); 7] = [
            ("config", self.config.to_json().into_bytes()),
            ("rig", encode_rig(&self.avatar.rig)),
            ("layers", encode_layers(&self.avatar)),
            ("triplanes", encode_fields(&self.avatar.fields)),
            ("decoders", encode_decoders(&self.avatar.decoders)),
            ("optimizer", encode_optimizer(&self.optimizer)),
            ("rng-state", encode_rng(self.iteration, &self.sampler)),
        ];
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.write_u32::<LE>(VERSION).unwrap();
        out.write_u32::<LE>(sections.len() as u32).unwrap();
        for (name, payload) in &sections {
            out.write_u16::<LE>(name.len() as u16).unwrap();
            out.extend_from_slice(name.as_bytes());
            out.write_u64::<LE>(payload.len() as u64).unwrap();
            out.write_u32::<LE>(crc32fast::hash(payload)).unwrap();
            out.extend_from_slice(payload);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let sections = split_sections(bytes)?;
        let get = |name: &str| sections.get(name).map(Vec::as_slice).ok_or_else(|| corrupt(name, "section missing"));

        let config: Config = serde_json::from_slice(get("config")?).map_err(|e| corrupt("config", e))?;
        config.validate().map_err(|e| corrupt("config", e))?;
        let rig = section("rig", decode_rig(get("rig")?))?;
        let [body, cloth, scene] = section("layers", decode_layers(get("layers")?))?;
        let fields = section("triplanes", decode_fields(get("triplanes")?))?;
        let decoders = section("decoders", decode_decoders(get("decoders")?))?;
        let optimizer = section("optimizer", decode_optimizer(get("optimizer")?))?;
        let (iteration, sampler) = section("rng-state", decode_rng(get("rng-state")?))?;
        let avatar = Avatar { body, cloth, scene, fields, decoders, rig };
        avatar.validate().map_err(|e| corrupt("layers", e))?;
        let sizes = avatar.group_sizes();
        if optimizer.groups.len() != 7 || optimizer.groups.iter().zip(sizes).any(|(g, n)| g.m.len() != n) {
            return Err(corrupt("optimizer", "moment buffers do not match the parameter groups"));
        }
        Ok(Self { config, iteration, avatar, optimizer, sampler })
    }

    /// Write to a temporary sibling, then rename over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        drop(f);
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn corrupt(section: &str, message: impl ToString) -> Error {
    Error::Checkpoint { section: section.to_string(), message: message.to_string() }
}

fn section<T>(name: &str, r: std::io::Result<T>) -> Result<T> {
    r.map_err(|e| corrupt(name, e))
}

fn split_sections(bytes: &[u8]) -> Result<BTreeMap<String, Vec<u8>>> {
    let mut c = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    c.read_exact(&mut magic).map_err(|_| corrupt("header", "file too short"))?;
    if &magic != MAGIC {
        return Err(corrupt("header", "bad magic"));
    }
    let version = c.read_u32::<LE>().map_err(|e| corrupt("header", e))?;
    if version != VERSION {
        return Err(corrupt("header", format!("unsupported version {version}")));
    }
    let count = c.read_u32::<LE>().map_err(|e| corrupt("header", e))?;
    let mut out = BTreeMap::new();
    for k in 0..count {
        let name_len = c.read_u16::<LE>().map_err(|_| corrupt("header", format!("truncated section table at entry {k}")))?;
        let mut name = vec![0u8; name_len as usize];
        c.read_exact(&mut name).map_err(|_| corrupt("header", format!("truncated section name at entry {k}")))?;
        let name = String::from_utf8(name).map_err(|_| corrupt("header", "section name is not UTF-8"))?;
        let len = c.read_u64::<LE>().map_err(|_| corrupt(&name, "truncated length"))?;
        let crc = c.read_u32::<LE>().map_err(|_| corrupt(&name, "truncated checksum"))?;
        let start = c.position() as usize;
        let end = start.checked_add(len as usize).filter(|&e| e <= bytes.len()).ok_or_else(|| corrupt(&name, "truncated payload"))?;
        let payload = &bytes[start..end];
        if crc32fast::hash(payload) != crc {
            return Err(corrupt(&name, "checksum mismatch"));
        }
        c.set_position(end as u64);
        out.insert(name, payload.to_vec());
    }
    Ok(out)
}

fn invalid(msg: impl Into<String>) -> std::io::Error {
    std::io::Error::new(std::io::ErrorKind::InvalidData, msg.into())
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    out.write_u64::<LE>(v.len() as u64).unwrap();
    for x in v {
        out.write_f64::<LE>(*x).unwrap();
    }
}

fn get_f64s(c: &mut Cursor<&[u8]>) -> std::io::Result<Vec<f64>> {
    let n = c.read_u64::<LE>()? as usize;
    let remaining = c.get_ref().len() - c.position() as usize;
    if n > remaining / 8 {
        return Err(invalid("array length exceeds payload"));
    }
    (0..n).map(|_| c.read_f64::<LE>()).collect()
}

fn get_len(c: &mut Cursor<&[u8]>, limit: usize) -> std::io::Result<usize> {
    let n = c.read_u64::<LE>()? as usize;
    if n > limit {
        return Err(invalid(format!("count {n} exceeds limit {limit}")));
    }
    Ok(n)
}

fn finish(c: &Cursor<&[u8]>) -> std::io::Result<()> {
    if (c.position() as usize) != c.get_ref().len() {
        return Err(invalid("trailing bytes"));
    }
    Ok(())
}

fn encode_rig(rig: &Rig<f64>) -> Vec<u8> {
    let mut out = Vec::new();
    let s = &rig.skeleton;
    out.write_u64::<LE>(s.joint_count() as u64).unwrap();
    for (p, r) in s.parents().iter().zip(s.rest_local()) {
        out.write_i64::<LE>(p.map_or(-1, |p| p as i64)).unwrap();
        for row in r.rotation.0 {
            for v in row {
                out.write_f64::<LE>(v).unwrap();
            }
        }
        for v in r.translation.0 {
            out.write_f64::<LE>(v).unwrap();
        }
    }
    for w in [&rig.body_weights, &rig.cloth_weights] {
        out.write_u64::<LE>(w.rows() as u64).unwrap();
        put_f64s(&mut out, w.as_slice());
    }
    out
}

fn decode_rig(bytes: &[u8]) -> std::io::Result<Rig<f64>> {
    let mut c = Cursor::new(bytes);
    let j = get_len(&mut c, 1024)?;
    let mut parents = Vec::with_capacity(j);
    let mut rest = Vec::with_capacity(j);
    for _ in 0..j {
        let p = c.read_i64::<LE>()?;
        parents.push(if p < 0 { None } else { Some(p as usize) });
        let mut m = Mat3::zero();
        for r in 0..3 {
            for k in 0..3 {
                m.0[r][k] = c.read_f64::<LE>()?;
            }
        }
        let t = Vec3::new(c.read_f64::<LE>()?, c.read_f64::<LE>()?, c.read_f64::<LE>()?);
        rest.push(Rigid::new(m, t));
    }
    let skeleton = Skeleton::new(parents, rest).map_err(|e| invalid(e.to_string()))?;
    let mut weights = Vec::with_capacity(2);
    for _ in 0..2 {
        let rows = get_len(&mut c, usize::MAX >> 8)?;
        let data = get_f64s(&mut c)?;
        weights.push(SkinWeights::new(rows, j, data).map_err(|e| invalid(e.to_string()))?);
    }
    finish(&c)?;
    let cloth_weights = weights.pop().unwrap();
    let body_weights = weights.pop().unwrap();
    Ok(Rig { skeleton, body_weights, cloth_weights })
}

const PRIM_FLOATS: usize = 3 + 4 + 3 + 1 + 3 * SH_COEFFS;

fn encode_layers(a: &Avatar<f64>) -> Vec<u8> {
    let mut out = Vec::new();
    for layer in [&a.body, &a.cloth, &a.scene] {
        out.write_u8(layer.tag.code()).unwrap();
        out.write_u64::<LE>(layer.len() as u64).unwrap();
        match layer.skin_binding() {
            Some(b) => {
                out.write_u8(1).unwrap();
                b.iter().for_each(|i| out.write_u64::<LE>(*i as u64).unwrap());
            }
            None => out.write_u8(0).unwrap(),
        }
        let mut flat = Vec::with_capacity(layer.len() * PRIM_FLOATS);
        for p in &layer.primitives {
            flat.extend_from_slice(&p.center.0);
            flat.extend_from_slice(&p.rotation().0);
            flat.extend_from_slice(&p.log_scale.0);
            flat.push(p.opacity_logit);
            flat.extend(p.sh.iter().flatten());
        }
        put_f64s(&mut out, &flat);
    }
    out
}

fn decode_layers(bytes: &[u8]) -> std::io::Result<[GaussianLayer<f64>; 3]> {
    let mut c = Cursor::new(bytes);
    let mut layers = Vec::with_capacity(3);
    for expected in [LayerTag::Body, LayerTag::Cloth, LayerTag::Scene] {
        let tag = LayerTag::from_code(c.read_u8()?).ok_or_else(|| invalid("unknown layer tag"))?;
        if tag != expected {
            return Err(invalid(format!("expected a {expected:?} layer, found {tag:?}")));
        }
        let n = get_len(&mut c, bytes.len())?;
        let binding = match c.read_u8()? {
            0 => None,
            1 => Some((0..n).map(|_| c.read_u64::<LE>().map(|v| v as usize)).collect::<std::io::Result<Vec<_>>>()?),
            _ => return Err(invalid("bad binding flag")),
        };
        let flat = get_f64s(&mut c)?;
        if flat.len() != n * PRIM_FLOATS {
            return Err(invalid(format!("{tag:?} layer holds {} floats, expected {}", flat.len(), n * PRIM_FLOATS)));
        }
        let prims = flat
            .chunks(PRIM_FLOATS)
            .map(|f| {
                let mut sh = [[0.0; 3]; SH_COEFFS];
                for (k, cc) in sh.iter_mut().enumerate() {
                    cc.copy_from_slice(&f[11 + 3 * k..14 + 3 * k]);
                }
                let mut p = GaussianPrimitive::new(Vec3::new(f[0], f[1], f[2]), Quat::identity(), Vec3::new(f[7], f[8], f[9]), f[10], sh);
                p.set_rotation_exact(Quat([f[3], f[4], f[5], f[6]]));
                p
            })
            .collect();
        layers.push(GaussianLayer::with_binding(tag, prims, binding).map_err(|e| invalid(e.to_string()))?);
    }
    finish(&c)?;
    let scene = layers.pop().unwrap();
    let cloth = layers.pop().unwrap();
    let body = layers.pop().unwrap();
    Ok([body, cloth, scene])
}

fn encode_fields(f: &AvatarField<f64>) -> Vec<u8> {
    let mut out = Vec::new();
    for field in [&f.body, &f.cloth] {
        out.write_u64::<LE>(field.res() as u64).unwrap();
        out.write_u64::<LE>(field.channels() as u64).unwrap();
        let (lo, hi) = field.bbox();
        lo.0.iter().chain(&hi.0).for_each(|v| out.write_f64::<LE>(*v).unwrap());
        let mut flat = Vec::with_capacity(field.param_count());
        field.flatten_into(&mut flat);
        put_f64s(&mut out, &flat);
    }
    out
}

fn decode_fields(bytes: &[u8]) -> std::io::Result<AvatarField<f64>> {
    let mut c = Cursor::new(bytes);
    let mut fields = Vec::with_capacity(2);
    for _ in 0..2 {
        let res = get_len(&mut c, 1 << 16)?;
        let channels = get_len(&mut c, 1 << 16)?;
        let mut b = [0.0; 6];
        for v in b.iter_mut() {
            *v = c.read_f64::<LE>()?;
        }
        let mut field = TriPlaneField::zeros(res, channels, Vec3::new(b[0], b[1], b[2]), Vec3::new(b[3], b[4], b[5]))
            .map_err(|e| invalid(e.to_string()))?;
        let flat = get_f64s(&mut c)?;
        if flat.len() != field.param_count() {
            return Err(invalid("triplane parameter count mismatch"));
        }
        field.load_flat(&flat);
        fields.push(field);
    }
    finish(&c)?;
    let cloth = fields.pop().unwrap();
    let body = fields.pop().unwrap();
    Ok(AvatarField { body, cloth })
}

fn encode_decoders(d: &Decoders<f64>) -> Vec<u8> {
    let mut out = Vec::new();
    out.write_u64::<LE>(d.appearance.input_dim() as u64).unwrap();
    out.write_u64::<LE>(d.joints as u64).unwrap();
    let hidden: Vec<usize> = d.appearance.layers[..d.appearance.layers.len() - 1].iter().map(|l| l.outputs).collect();
    out.write_u64::<LE>(hidden.len() as u64).unwrap();
    hidden.iter().for_each(|h| out.write_u64::<LE>(*h as u64).unwrap());
    for (name, head) in d.heads() {
        out.write_u8(name.len() as u8).unwrap();
        out.extend_from_slice(name.as_bytes());
        let mut flat = Vec::with_capacity(head.param_count());
        head.flatten_into(&mut flat);
        put_f64s(&mut out, &flat);
    }
    out
}

fn decode_decoders(bytes: &[u8]) -> std::io::Result<Decoders<f64>> {
    let mut c = Cursor::new(bytes);
    let feature_len = get_len(&mut c, 1 << 20)?;
    let joints = get_len(&mut c, 1024)?;
    let depth = get_len(&mut c, 64)?;
    let hidden = (0..depth).map(|_| get_len(&mut c, 1 << 16)).collect::<std::io::Result<Vec<_>>>()?;
    // weights are overwritten below; the seed only shapes the buffers
    let mut d = Decoders::init(DecoderShape { feature_len, hidden: &hidden, joints }, &mut ChaCha8Rng::seed_from_u64(0));
    let mut flat = Vec::with_capacity(d.param_count());
    for (name, head) in d.heads() {
        let len = c.read_u8()? as usize;
        let mut got = vec![0u8; len];
        c.read_exact(&mut got)?;
        if got != name.as_bytes() {
            return Err(invalid(format!("expected head {name}, found {}", String::from_utf8_lossy(&got))));
        }
        let w = get_f64s(&mut c)?;
        if w.len() != head.param_count() {
            return Err(invalid(format!("head {name} holds {} weights, expected {}", w.len(), head.param_count())));
        }
        flat.extend(w);
    }
    finish(&c)?;
    d.load_flat(&flat);
    Ok(d)
}

fn encode_optimizer(o: &OptimizerState) -> Vec<u8> {
    let mut out = Vec::new();
    for v in [o.beta1, o.beta2, o.eps] {
        out.write_f64::<LE>(v).unwrap();
    }
    out.write_u64::<LE>(o.step).unwrap();
    out.write_u64::<LE>(o.groups.len() as u64).unwrap();
    for g in &o.groups {
        out.write_f64::<LE>(g.schedule.lr_init).unwrap();
        out.write_f64::<LE>(g.schedule.lr_final).unwrap();
        out.write_u64::<LE>(g.schedule.horizon as u64).unwrap();
        put_f64s(&mut out, &g.m);
        put_f64s(&mut out, &g.v);
    }
    out
}

fn decode_optimizer(bytes: &[u8]) -> std::io::Result<OptimizerState> {
    let mut c = Cursor::new(bytes);
    let (beta1, beta2, eps) = (c.read_f64::<LE>()?, c.read_f64::<LE>()?, c.read_f64::<LE>()?);
    let step = c.read_u64::<LE>()?;
    let n = get_len(&mut c, 64)?;
    let mut groups = Vec::with_capacity(n);
    for _ in 0..n {
        let schedule = ScheduleSpec { lr_init: c.read_f64::<LE>()?, lr_final: c.read_f64::<LE>()?, horizon: c.read_u64::<LE>()? as usize };
        let m = get_f64s(&mut c)?;
        let v = get_f64s(&mut c)?;
        if m.len() != v.len() {
            return Err(invalid("moment buffers differ in length"));
        }
        groups.push(AdamGroup { schedule, m, v });
    }
    finish(&c)?;
    Ok(OptimizerState { beta1, beta2, eps, step, groups })
}

fn encode_rng(iteration: u64, rng: &ChaCha8Rng) -> Vec<u8> {
    let mut out = Vec::new();
    out.write_u64::<LE>(iteration).unwrap();
    out.extend_from_slice(&rng.get_seed());
    out.write_u64::<LE>(rng.get_stream()).unwrap();
    out.write_u128::<LE>(rng.get_word_pos()).unwrap();
    out
}

fn decode_rng(bytes: &[u8]) -> std::io::Result<(u64, ChaCha8Rng)> {
    let mut c = Cursor::new(bytes);
    let iteration = c.read_u64::<LE>()?;
    let mut seed = [0u8; 32];
    c.read_exact(&mut seed)?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(c.read_u64::<LE>()?);
    rng.set_word_pos(c.read_u128::<LE>()?);
    finish(&c)?;
    Ok((iteration, rng))
}
