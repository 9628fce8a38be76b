//! `OMV1` binary container.
//!
//! Layout: magic `OMV1`, a little-endian `u32` header length, a UTF-8 JSON
//! header, then `prod(dims)` little-endian `f32` samples with the first
//! dimension varying fastest. Volumes use dims `[H, W, N]`, displacement and
//! vessel maps `[W, N]`, x displacement vectors `[N]` and boundary stacks
//! `[W, N, 2]`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{
    Boundaries, VesselKind, VesselMap, Volume, VolumeGeometry, XDisplacementVec,
    ZDisplacementMap,
};

pub const MAGIC: &[u8; 4] = b"OMV1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub dtype: String,
    pub dims: Vec<usize>,
    pub order: String,
    pub geometry_mm: [f64; 3],
}

impl Header {
    pub fn new(dims: &[usize], geometry: VolumeGeometry) -> Self {
        Self {
            dtype: "f32".into(),
            dims: dims.to_vec(),
            order: "z-contiguous".into(),
            geometry_mm: [geometry.extent_z_mm, geometry.extent_x_mm, geometry.extent_y_mm],
        }
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn geometry(&self) -> Result<VolumeGeometry> {
        let [z, x, y] = self.geometry_mm;
        VolumeGeometry::new(z, x, y)
    }
}

pub fn write<W: Write>(mut w: W, header: &Header, data: &[f32]) -> Result<()> {
    if data.len() != header.len() {
        return Err(Error::Format(format!(
            "{} samples for dims {:?}",
            data.len(),
            header.dims
        )));
    }
    let json = serde_json::to_vec(header)?;
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    let mut buf = Vec::with_capacity(data.len() * 4);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read<R: Read>(mut r: R) -> Result<(Header, Vec<f32>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;
    if header.dtype != "f32" {
        return Err(Error::Format(format!("unsupported dtype {}", header.dtype)));
    }
    if header.order != "z-contiguous" {
        return Err(Error::Format(format!("unsupported order {}", header.order)));
    }
    let mut bytes = vec![0u8; header.len() * 4];
    r.read_exact(&mut bytes)?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after samples".into()));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((header, data))
}

pub fn write_file(path: impl AsRef<Path>, header: &Header, data: &[f32]) -> Result<()> {
    write(BufWriter::new(File::create(path)?), header, data)
}

pub fn read_file(path: impl AsRef<Path>) -> Result<(Header, Vec<f32>)> {
    read(BufReader::new(File::open(path)?))
}

fn expect_rank(h: &Header, rank: usize, what: &str) -> Result<()> {
    if h.dims.len() != rank {
        return Err(Error::Format(format!("{what} needs {rank} dims, got {:?}", h.dims)));
    }
    Ok(())
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

pub fn save_volume(path: impl AsRef<Path>, v: &Volume) -> Result<()> {
    let (h, w, n) = v.dims();
    write_file(path, &Header::new(&[h, w, n], v.geometry()), v.data())
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let (h, data) = read_file(path)?;
    expect_rank(&h, 3, "volume")?;
    Volume::new(h.dims[0], h.dims[1], h.dims[2], data, h.geometry()?)
}

pub fn save_z_map(path: impl AsRef<Path>, d: &ZDisplacementMap) -> Result<()> {
    let header = Header::new(&[d.width(), d.slices()], VolumeGeometry::default());
    write_file(path, &header, &to_f32(d.values()))
}

pub fn load_z_map(path: impl AsRef<Path>) -> Result<ZDisplacementMap> {
    let (h, data) = read_file(path)?;
    expect_rank(&h, 2, "displacement map")?;
    ZDisplacementMap::new(h.dims[0], h.dims[1], to_f64(&data))
}

pub fn save_x_vec(path: impl AsRef<Path>, d: &XDisplacementVec) -> Result<()> {
    let header = Header::new(&[d.len()], VolumeGeometry::default());
    write_file(path, &header, &to_f32(d.values()))
}

pub fn load_x_vec(path: impl AsRef<Path>) -> Result<XDisplacementVec> {
    let (h, data) = read_file(path)?;
    expect_rank(&h, 1, "x displacement")?;
    XDisplacementVec::new(to_f64(&data))
}

pub fn save_vessels(path: impl AsRef<Path>, m: &VesselMap) -> Result<()> {
    let header = Header::new(&[m.width(), m.slices()], VolumeGeometry::default());
    write_file(path, &header, &to_f32(m.values()))
}

pub fn load_vessels(path: impl AsRef<Path>, kind: VesselKind) -> Result<VesselMap> {
    let (h, data) = read_file(path)?;
    expect_rank(&h, 2, "vessel map")?;
    VesselMap::new(h.dims[0], h.dims[1], to_f64(&data), kind)
}

pub fn save_boundaries(path: impl AsRef<Path>, b: &Boundaries) -> Result<()> {
    let header = Header::new(&[b.width(), b.slices(), 2], VolumeGeometry::default());
    write_file(path, &header, &to_f32(b.values()))
}

/// Boundary files do not record the volume height; pass the height of the volume they belong to.
pub fn load_boundaries(path: impl AsRef<Path>, height: usize) -> Result<Boundaries> {
    let (h, data) = read_file(path)?;
    expect_rank(&h, 3, "boundaries")?;
    if h.dims[2] != 2 {
        return Err(Error::Format(format!("boundary stack must have 2 surfaces, got {:?}", h.dims)));
    }
    Boundaries::new(height, h.dims[0], h.dims[1], to_f64(&data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_stable() {
        let mut buf = Vec::new();
        let header = Header::new(&[2, 3, 2], VolumeGeometry::default());
        write(&mut buf, &header, &[0.5; 12]).unwrap();
        assert_eq!(&buf[..4], b"OMV1");
        let n = u32::from_le_bytes([buf[4], buf[5], buf[6], buf[7]]) as usize;
        let json = std::str::from_utf8(&buf[8..8 + n]).unwrap();
        assert_eq!(
            json,
            r#"{"dtype":"f32","dims":[2,3,2],"order":"z-contiguous","geometry_mm":[1.9,5.8,5.8]}"#
        );
        assert_eq!(buf.len(), 8 + n + 48);
        assert_eq!(&buf[8 + n..8 + n + 4], &0.5f32.to_le_bytes());
    }

    #[test]
    fn volume_linear_index_matches_container_order() {
        let data: Vec<f32> = (0..24).map(|i| i as f32).collect();
        let v = Volume::new(2, 3, 4, data.clone(), VolumeGeometry::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.omv");
        save_volume(&p, &v).unwrap();
        let (_, raw) = read_file(&p).unwrap();
        for y in 0..4 {
            for x in 0..3 {
                for z in 0..2 {
                    assert_eq!(raw[(y * 3 + x) * 2 + z], v.get(z, x, y));
                }
            }
        }
        assert_eq!(load_volume(&p).unwrap(), v);
    }

    #[test]
    fn rejects_truncated_and_foreign_files() {
        let mut buf = Vec::new();
        write(&mut buf, &Header::new(&[4], VolumeGeometry::default()), &[1.0; 4]).unwrap();
        assert!(read(&buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read(bad.as_slice()), Err(Error::Format(_))));
        let mut long = buf.clone();
        long.push(0);
        assert!(read(long.as_slice()).is_err());
        assert!(write(&mut Vec::new(), &Header::new(&[4], VolumeGeometry::default()), &[1.0; 3])
            .is_err());
    }

    #[test]
    fn maps_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let z = ZDisplacementMap::new(3, 2, vec![0.1, -0.2, 0.3, 0.0, 1.5, -2.0]).unwrap();
        save_z_map(dir.path().join("z"), &z).unwrap();
        let back = load_z_map(dir.path().join("z")).unwrap();
        for (a, b) in z.values().iter().zip(back.values()) {
            assert_eq!(*a as f32, *b as f32);
        }
        let b = Boundaries::new(30, 2, 2, vec![1.0, 2.0, 3.0, 4.0, 10.0, 11.0, 12.0, 13.0]).unwrap();
        save_boundaries(dir.path().join("b"), &b).unwrap();
        assert_eq!(load_boundaries(dir.path().join("b"), 30).unwrap(), b);
        let x = XDisplacementVec::new(vec![-4.0, 0.0, 8.0]).unwrap();
        save_x_vec(dir.path().join("x"), &x).unwrap();
        assert_eq!(load_x_vec(dir.path().join("x")).unwrap(), x);
    }
}
