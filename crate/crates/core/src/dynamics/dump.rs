//! Versioned binary dump of realizations.
//!
//! Layout (little endian): magic `EVDR`, `u32` format version, `u32` header
//! length, JSON header (params, window, seed, evolved flag), then the
//! particle body. Lattice particles store origin, mark, key and jump list;
//! continuum particles store mark, key and coarse path points.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::brownian::BrownianPath;
use super::{ContinuumRealization, Jump, LatticeRealization, ParticleRealization, SimulationWindow};
use crate::error::{Error, Result};
use crate::model::{ModelParams, Mode};

pub const DUMP_MAGIC: [u8; 4] = *b"EVDR";
pub const DUMP_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    params: ModelParams,
    window: SimulationWindow,
    seed: u64,
    evolved: bool,
    #[serde(default = "yes")]
    extendable: bool,
    particles: u64,
}

fn yes() -> bool {
    true
}

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u64(&mut self, v: u64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn i64(&mut self, v: i64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0.read_exact(&mut b).map_err(|e| Error::Format(format!("truncated dump: {e}")))?;
        Ok(b)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.bytes()?))
    }
    fn len(&mut self, limit: u64) -> Result<usize> {
        let n = self.u64()?;
        if n > limit {
            return Err(Error::Format(format!("length {n} exceeds {limit}")));
        }
        Ok(n as usize)
    }
}

const MAX_ITEMS: u64 = 1 << 32;

pub fn write_realization(r: &ParticleRealization, out: impl Write) -> Result<()> {
    let mut w = Writer(out);
    let (evolved, extendable) = match r {
        ParticleRealization::Lattice(l) => (l.evolved, l.extendable),
        ParticleRealization::Continuum(c) => (c.is_evolved(), c.extendable),
    };
    let header = Header {
        params: r.params().clone(),
        window: r.window().clone(),
        seed: r.seed(),
        evolved,
        extendable,
        particles: r.len() as u64,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    w.0.write_all(&DUMP_MAGIC)?;
    w.0.write_all(&DUMP_VERSION.to_le_bytes())?;
    w.0.write_all(&(json.len() as u32).to_le_bytes())?;
    w.0.write_all(&json)?;
    match r {
        ParticleRealization::Lattice(l) => {
            for k in 0..l.len() {
                for &c in l.origin(k) {
                    w.i64(c)?;
                }
                w.f64(l.marks[k])?;
                w.u64(l.keys[k])?;
                let jumps = l.jumps(k);
                w.u64(jumps.len() as u64)?;
                for j in jumps {
                    w.f64(j.time)?;
                    w.0.write_all(&[j.axis, j.step as u8])?;
                }
            }
        }
        ParticleRealization::Continuum(c) => {
            for k in 0..c.len() {
                for &x in c.origin(k) {
                    w.f64(x)?;
                }
                w.f64(c.marks[k])?;
                w.u64(c.keys[k])?;
                if evolved {
                    let pts = c.paths[k].coarse_points();
                    w.u64(pts.len() as u64)?;
                    for &x in pts {
                        w.f64(x)?;
                    }
                }
            }
        }
    }
    w.0.flush()?;
    Ok(())
}

pub fn read_realization(input: impl Read) -> Result<ParticleRealization> {
    let mut r = Reader(input);
    if r.bytes::<4>()? != DUMP_MAGIC {
        return Err(Error::Format("not a realization dump (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != DUMP_VERSION {
        return Err(Error::Format(format!("unsupported dump version {version}, expected {DUMP_VERSION}")));
    }
    let hlen = r.u32()? as usize;
    let mut hbuf = vec![0u8; hlen];
    r.0.read_exact(&mut hbuf).map_err(|e| Error::Format(format!("truncated header: {e}")))?;
    let h: Header = serde_json::from_slice(&hbuf).map_err(|e| Error::Format(format!("bad header: {e}")))?;
    h.params.validate()?;
    let d = h.params.dim;
    let n = usize::try_from(h.particles).map_err(|_| Error::Format("particle count overflow".into()))?;
    let out = match h.params.mode {
        Mode::Lattice => {
            let mut l = LatticeRealization {
                params: h.params.clone(),
                window: h.window.clone(),
                seed: h.seed,
                evolved: h.evolved,
                extendable: h.extendable,
                origins: Vec::with_capacity(n.min(1 << 20) * d),
                marks: Vec::new(),
                keys: Vec::new(),
                offsets: vec![0],
                jumps: Vec::new(),
            };
            for _ in 0..n {
                for _ in 0..d {
                    l.origins.push(r.i64()?);
                }
                l.marks.push(r.f64()?);
                l.keys.push(r.u64()?);
                let m = r.len(MAX_ITEMS)?;
                let mut last = 0.0;
                for _ in 0..m {
                    let time = r.f64()?;
                    let [axis, step] = r.bytes::<2>()?;
                    let step = step as i8;
                    if (axis as usize) >= d || step.abs() != 1 || !(time > last) || time > h.window.horizon {
                        return Err(Error::Format("corrupt jump record".into()));
                    }
                    last = time;
                    l.jumps.push(Jump { time, axis, step });
                }
                l.offsets.push(l.jumps.len());
            }
            ParticleRealization::Lattice(l)
        }
        Mode::Continuum => {
            let mut c = ContinuumRealization {
                params: h.params.clone(),
                window: h.window.clone(),
                seed: h.seed,
                extendable: h.extendable,
                origins: Vec::new(),
                marks: Vec::new(),
                keys: Vec::new(),
                paths: Vec::new(),
            };
            for _ in 0..n {
                for _ in 0..d {
                    c.origins.push(r.f64()?);
                }
                c.marks.push(r.f64()?);
                let key = r.u64()?;
                c.keys.push(key);
                if h.evolved {
                    let m = r.len(MAX_ITEMS)?;
                    if m < d || m % d != 0 {
                        return Err(Error::Format("corrupt path record".into()));
                    }
                    let pts = (0..m).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                    c.paths.push(BrownianPath::from_coarse(key, d, h.params.step_dt, pts));
                }
            }
            ParticleRealization::Continuum(c)
        }
    };
    let mut rest = [0u8; 1];
    if r.0.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after dump".into()));
    }
    Ok(out)
}

pub fn save(r: &ParticleRealization, path: &std::path::Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_realization(r, std::io::BufWriter::new(f))
}

pub fn load(path: &std::path::Path) -> Result<ParticleRealization> {
    let f = std::fs::File::open(path)?;
    read_realization(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn roundtrip(r: &ParticleRealization) -> ParticleRealization {
        let mut buf = Vec::new();
        write_realization(r, &mut buf).unwrap();
        read_realization(buf.as_slice()).unwrap()
    }

    #[test]
    fn continuum_roundtrip() {
        let p = ModelParams::continuum(0.3, 1.0, 2).unwrap().with_step_dt(0.05);
        let w = SimulationWindow::for_region(&p, 2.0, 1.5).unwrap();
        let r = ParticleRealization::sample(&p, &w, 4).unwrap();
        assert!(!r.is_empty());
        assert_eq!(roundtrip(&r), r);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(read_realization(&b"NOPE"[..]), Err(Error::Format(_))));
        let p = ModelParams::lattice(0.3, 1.0, 2).unwrap();
        let w = SimulationWindow::for_region(&p, 2.0, 1.5).unwrap();
        let r = ParticleRealization::sample(&p, &w, 4).unwrap();
        let mut buf = Vec::new();
        write_realization(&r, &mut buf).unwrap();
        let mut wrong_version = buf.clone();
        wrong_version[4] = 9;
        assert!(read_realization(wrong_version.as_slice()).is_err());
        buf.truncate(buf.len() - 3);
        assert!(read_realization(buf.as_slice()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn lattice_roundtrip(seed in any::<u64>(), lambda in 0.0f64..1.0, horizon in 0.0f64..4.0, dim in 2usize..4) {
            let p = ModelParams::lattice(lambda, 1.0, dim).unwrap();
            let w = SimulationWindow::for_region(&p, 2.0, horizon).unwrap();
            let r = ParticleRealization::sample(&p, &w, seed).unwrap();
            prop_assert_eq!(roundtrip(&r), r);
        }
    }
}
