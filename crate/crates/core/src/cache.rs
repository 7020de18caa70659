//! Content-addressed on-disk store of scattering solutions.
//!
//! One bundle file per (system, `nu_cut`, incoming level). Records are keyed by
//! the bit pattern of the requested momentum, so a warm run reproduces a cold
//! run bit for bit.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use num_complex::Complex64;

use crate::config::solver_key;
use crate::error::{Error, Result};
use crate::model::FloquetModel;
use crate::rates::SolutionCache;
use crate::scattering::ScatteringSolution;

const MAGIC: &[u8; 4] = b"FNSC";
pub const FORMAT_VERSION: u8 = 1;

#[derive(Default)]
struct Bundle {
    records: BTreeMap<u64, ScatteringSolution>,
    dirty: bool,
}

pub struct DiskCache {
    dir: PathBuf,
    bundles: Mutex<HashMap<String, Bundle>>,
}

impl DiskCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::Cache(format!("{}: {e}", dir.display())))?;
        Ok(DiskCache { dir, bundles: Mutex::new(HashMap::new()) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn bundle_name(model: &FloquetModel, j_in: usize) -> String {
        format!("{}-j{j_in}.bin", &solver_key(model)[..32])
    }

    fn with_bundle<R>(&self, name: &str, f: impl FnOnce(&mut Bundle) -> R) -> R {
        let mut map = self.bundles.lock().unwrap_or_else(|e| e.into_inner());
        let bundle = map.entry(name.to_string()).or_insert_with(|| {
            let path = self.dir.join(name);
            match fs::read(&path) {
                Ok(bytes) => match decode(&bytes) {
                    Ok(records) => Bundle { records, dirty: false },
                    Err(e) => {
                        eprintln!("warning: ignoring cache bundle {}: {e}", path.display());
                        Bundle::default()
                    }
                },
                Err(_) => Bundle::default(),
            }
        });
        f(bundle)
    }

    /// Number of solutions held in memory.
    pub fn len(&self) -> usize {
        self.bundles.lock().map(|m| m.values().map(|b| b.records.len()).sum()).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes every modified bundle and releases the in-memory copies.
    /// Files are replaced atomically.
    pub fn flush(&self) -> Result<()> {
        let mut map = self.bundles.lock().unwrap_or_else(|e| e.into_inner());
        for (name, bundle) in map.iter_mut().filter(|(_, b)| b.dirty) {
            let path = self.dir.join(name);
            let tmp = self.dir.join(format!("{name}.tmp"));
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&encode(&bundle.records))?;
            f.sync_all()?;
            fs::rename(&tmp, &path)?;
            bundle.dirty = false;
        }
        map.clear();
        Ok(())
    }
}

impl SolutionCache for DiskCache {
    fn get(&self, model: &FloquetModel, j_in: usize, p: f64) -> Option<ScatteringSolution> {
        let n = model.basis().len();
        self.with_bundle(&Self::bundle_name(model, j_in), |b| b.records.get(&p.to_bits()).cloned())
            .filter(|s| s.psi.len() == n)
    }

    fn put(&self, model: &FloquetModel, p: f64, sol: &ScatteringSolution) {
        self.with_bundle(&Self::bundle_name(model, sol.j_in), |b| {
            b.records.insert(p.to_bits(), sol.clone());
            b.dirty = true;
        })
    }
}

fn encode(records: &BTreeMap<u64, ScatteringSolution>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    let f = |out: &mut Vec<u8>, x: f64| out.extend_from_slice(&x.to_le_bytes());
    for (key, s) in records {
        out.extend_from_slice(&key.to_le_bytes());
        out.extend_from_slice(&(s.j_in as u64).to_le_bytes());
        out.extend_from_slice(&(s.psi.len() as u64).to_le_bytes());
        for x in [s.p_in, s.energy, s.condition] {
            f(&mut out, x);
        }
        for z in s.psi.iter().chain(&s.t_row) {
            f(&mut out, z.re);
            f(&mut out, z.im);
        }
        for p in &s.p_out {
            f(&mut out, p.unwrap_or(f64::NAN));
        }
    }
    out
}

struct Reader<'a>(&'a [u8]);

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        if self.0.len() < N {
            return Err(Error::Cache("truncated bundle".into()));
        }
        let (head, rest) = self.0.split_at(N);
        self.0 = rest;
        Ok(head.try_into().expect("split length"))
    }

    fn u64(&mut self) -> Result<u64> {
        self.take::<8>().map(u64::from_le_bytes)
    }

    fn f64(&mut self) -> Result<f64> {
        self.take::<8>().map(f64::from_le_bytes)
    }

    fn c64(&mut self) -> Result<Complex64> {
        Ok(Complex64::new(self.f64()?, self.f64()?))
    }
}

fn decode(bytes: &[u8]) -> Result<BTreeMap<u64, ScatteringSolution>> {
    let mut r = Reader(bytes);
    if &r.take::<4>()? != MAGIC {
        return Err(Error::Cache("bad magic".into()));
    }
    let [version] = r.take::<1>()?;
    if version != FORMAT_VERSION {
        return Err(Error::Cache(format!("format version {version}, expected {FORMAT_VERSION}")));
    }
    let count = r.u64()?;
    let mut records = BTreeMap::new();
    for _ in 0..count {
        let key = r.u64()?;
        let j_in = r.u64()? as usize;
        let n = r.u64()? as usize;
        if n > r.0.len() / 40 {
            return Err(Error::Cache("record length exceeds bundle".into()));
        }
        let (p_in, energy, condition) = (r.f64()?, r.f64()?, r.f64()?);
        let psi = (0..n).map(|_| r.c64()).collect::<Result<Vec<_>>>()?;
        let t_row = (0..n).map(|_| r.c64()).collect::<Result<Vec<_>>>()?;
        let p_out = (0..n).map(|_| r.f64().map(|x| (!x.is_nan()).then_some(x))).collect::<Result<Vec<_>>>()?;
        records.insert(key, ScatteringSolution { p_in, j_in, energy, psi, t_row, p_out, condition });
    }
    if !r.0.is_empty() {
        return Err(Error::Cache("trailing bytes".into()));
    }
    Ok(records)
}
