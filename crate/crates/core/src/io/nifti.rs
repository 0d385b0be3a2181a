//! Minimal NIfTI-1 reader/writer (single-file `.nii`, optionally gzipped).
//!
//! On read, the header orientation (sform if set, else qform, else the
//! pixdim diagonal) is reduced to the closest axis permutation plus flips and
//! the voxel buffer is reordered into the canonical RAS+ layout documented in
//! [`crate::volume`]. No interpolation happens on load. Written files always
//! carry a diagonal qform/sform.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};
use crate::volume::{
    Grid, ImageVolume, LabelSet, LabelVolume, ProbabilityVolume, Volume, VolumeKind,
};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;
const MAX_DIM: usize = i16::MAX as usize;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_INT32: i16 = 8;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;
const DT_INT8: i16 = 256;
const DT_UINT16: i16 = 512;
const DT_UINT32: i16 = 768;
const DT_INT64: i16 = 1024;
const DT_UINT64: i16 = 1280;

/// A volume loaded with a requested kind.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadedVolume {
    Image(ImageVolume),
    Labels(LabelVolume),
    Probabilities(ProbabilityVolume),
}

impl LoadedVolume {
    pub fn kind(&self) -> VolumeKind {
        match self {
            LoadedVolume::Image(_) => VolumeKind::Image,
            LoadedVolume::Labels(_) => VolumeKind::Labels,
            LoadedVolume::Probabilities(_) => VolumeKind::Probabilities,
        }
    }

    pub fn grid(&self) -> &Grid {
        match self {
            LoadedVolume::Image(v) => v.grid(),
            LoadedVolume::Labels(v) => v.grid(),
            LoadedVolume::Probabilities(v) => v.grid(),
        }
    }
}

/// Decoded file contents in canonical axis order, before kind-specific checks.
#[derive(Debug, Clone)]
pub struct RawVolume {
    pub grid: Grid,
    /// Size of the 4th axis (1 for 3D files).
    pub channels: usize,
    /// `dim[0]` from the header.
    pub ndim: usize,
    pub values: Vec<f64>,
}

pub fn read_volume(path: impl AsRef<Path>, kind: VolumeKind) -> Result<LoadedVolume> {
    let path = path.as_ref();
    Ok(match kind {
        VolumeKind::Image => LoadedVolume::Image(read_image(path)?),
        VolumeKind::Labels => LoadedVolume::Labels(read_labels(path, &LabelSet::default())?),
        VolumeKind::Probabilities => LoadedVolume::Probabilities(read_probabilities(path)?),
    })
}

pub fn read_image(path: impl AsRef<Path>) -> Result<ImageVolume> {
    let raw = read_raw(path)?;
    if raw.channels != 1 {
        return Err(Error::Dimensionality(format!(
            "image must be 3D, file has {} volumes along axis 4",
            raw.channels
        )));
    }
    if let Some(i) = raw.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index: i });
    }
    Volume::from_vec(raw.grid, raw.values)
}

pub fn read_labels(path: impl AsRef<Path>, labels: &LabelSet) -> Result<LabelVolume> {
    let raw = read_raw(path)?;
    if raw.channels != 1 {
        return Err(Error::Dimensionality(format!(
            "label map must be 3D, file has {} volumes along axis 4",
            raw.channels
        )));
    }
    labels_from_values(raw.grid, &raw.values, labels)
}

pub(crate) fn labels_from_values(
    grid: Grid,
    values: &[f64],
    labels: &LabelSet,
) -> Result<LabelVolume> {
    let mut out = Vec::with_capacity(values.len());
    for &v in values {
        if !(v.is_finite() && v >= 0.0 && v.fract() == 0.0 && v <= u16::MAX as f64)
            || !labels.contains(v as u16)
        {
            return Err(Error::UnknownLabel {
                value: v,
                allowed: labels.ids(),
            });
        }
        out.push(v as u16);
    }
    Volume::from_vec(grid, out)
}

pub fn read_probabilities(path: impl AsRef<Path>) -> Result<ProbabilityVolume> {
    let raw = read_raw(path)?;
    if raw.ndim != 4 {
        return Err(Error::Dimensionality(format!(
            "probability stack must be 4D (class axis last), file is {}D",
            raw.ndim
        )));
    }
    let data: Vec<f32> = raw.values.iter().map(|&v| v as f32).collect();
    let vol = Volume::from_channels(raw.grid, raw.channels, data)?;
    vol.validate_probabilities()?;
    Ok(vol)
}

fn open_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut file = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b {
        let mut out = Vec::new();
        MultiGzDecoder::new(&bytes[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(bytes)
    }
}

struct HeaderReader<'a> {
    buf: &'a [u8],
    big_endian: bool,
}

impl HeaderReader<'_> {
    fn bytes<const N: usize>(&self, off: usize) -> [u8; N] {
        let mut b = [0u8; N];
        b.copy_from_slice(&self.buf[off..off + N]);
        if self.big_endian {
            b.reverse();
        }
        b
    }
    fn i16(&self, off: usize) -> i16 {
        i16::from_le_bytes(self.bytes(off))
    }
    fn f32(&self, off: usize) -> f32 {
        f32::from_le_bytes(self.bytes(off))
    }
}

/// Reads any supported NIfTI-1 file into canonical order as `f64` values.
pub fn read_raw(path: impl AsRef<Path>) -> Result<RawVolume> {
    let path = path.as_ref();
    let bytes = open_bytes(path)?;
    decode(&bytes)
}

fn decode(bytes: &[u8]) -> Result<RawVolume> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::MalformedHeader(format!(
            "file has {} bytes, shorter than a header",
            bytes.len()
        )));
    }
    let big_endian = if i32::from_le_bytes(bytes[0..4].try_into().unwrap()) == 348 {
        false
    } else if i32::from_be_bytes(bytes[0..4].try_into().unwrap()) == 348 {
        true
    } else {
        return Err(Error::MalformedHeader("sizeof_hdr is not 348".into()));
    };
    let h = HeaderReader {
        buf: bytes,
        big_endian,
    };
    if &bytes[344..347] != b"n+1" {
        return Err(Error::MalformedHeader(
            "magic is not `n+1` (only single-file NIfTI-1 is supported)".into(),
        ));
    }

    let ndim = h.i16(40);
    if !(1..=7).contains(&ndim) {
        return Err(Error::MalformedHeader(format!("dim[0] = {ndim}")));
    }
    let ndim = ndim as usize;
    let mut dim = [1usize; 7];
    for (k, d) in dim.iter_mut().enumerate().take(ndim) {
        let v = h.i16(42 + 2 * k);
        if v < 1 {
            return Err(Error::MalformedHeader(format!("dim[{}] = {v}", k + 1)));
        }
        *d = v as usize;
    }
    if dim[4..].iter().any(|&d| d != 1) {
        return Err(Error::Dimensionality(format!(
            "axes beyond the 4th are not supported (dim = {dim:?})"
        )));
    }
    let channels = dim[3];

    let datatype = h.i16(70);
    let pixdim: Vec<f64> = (0..8).map(|k| h.f32(76 + 4 * k) as f64).collect();
    let spacing_vox = [pixdim[1].abs(), pixdim[2].abs(), pixdim[3].abs()];
    if spacing_vox.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::MalformedHeader(format!(
            "pixdim spacing must be positive, got {spacing_vox:?}"
        )));
    }
    let vox_offset = h.f32(108);
    if !(vox_offset >= HEADER_SIZE as f32) || vox_offset.fract() != 0.0 {
        return Err(Error::MalformedHeader(format!("vox_offset = {vox_offset}")));
    }
    let vox_offset = vox_offset as usize;
    let slope = h.f32(112) as f64;
    let inter = h.f32(116) as f64;

    let (affine, translation) = orientation(&h, &pixdim);

    let nvox = dim[0] * dim[1] * dim[2] * channels;
    let elem = match datatype {
        DT_UINT8 | DT_INT8 => 1,
        DT_INT16 | DT_UINT16 => 2,
        DT_INT32 | DT_UINT32 | DT_FLOAT32 => 4,
        DT_INT64 | DT_UINT64 | DT_FLOAT64 => 8,
        other => {
            return Err(Error::MalformedHeader(format!(
                "unsupported datatype code {other}"
            )))
        }
    };
    let need = vox_offset + nvox * elem;
    if bytes.len() < need {
        return Err(Error::MalformedHeader(format!(
            "voxel data truncated: need {need} bytes, file has {}",
            bytes.len()
        )));
    }
    let payload = &bytes[vox_offset..need];
    let mut values = decode_values(payload, datatype, big_endian);
    if slope != 0.0 && slope.is_finite() && inter.is_finite() && (slope != 1.0 || inter != 0.0) {
        for v in values.iter_mut() {
            *v = *v * slope + inter;
        }
    }

    let (grid, values) = canonicalize(
        [dim[0], dim[1], dim[2]],
        spacing_vox,
        channels,
        &affine,
        translation,
        values,
    )?;
    Ok(RawVolume {
        grid,
        channels,
        ndim,
        values,
    })
}

fn decode_values(payload: &[u8], datatype: i16, big_endian: bool) -> Vec<f64> {
    macro_rules! conv {
        ($t:ty, $n:expr) => {
            payload
                .chunks_exact($n)
                .map(|c| {
                    let mut b = [0u8; $n];
                    b.copy_from_slice(c);
                    if big_endian {
                        <$t>::from_be_bytes(b) as f64
                    } else {
                        <$t>::from_le_bytes(b) as f64
                    }
                })
                .collect()
        };
    }
    match datatype {
        DT_UINT8 => payload.iter().map(|&b| b as f64).collect(),
        DT_INT8 => payload.iter().map(|&b| b as i8 as f64).collect(),
        DT_INT16 => conv!(i16, 2),
        DT_UINT16 => conv!(u16, 2),
        DT_INT32 => conv!(i32, 4),
        DT_UINT32 => conv!(u32, 4),
        DT_FLOAT32 => conv!(f32, 4),
        DT_INT64 => conv!(i64, 8),
        DT_UINT64 => conv!(u64, 8),
        DT_FLOAT64 => conv!(f64, 8),
        _ => unreachable!("datatype validated by caller"),
    }
}

/// Returns the 3x3 voxel-to-world linear part (row-major) and translation.
fn orientation(h: &HeaderReader<'_>, pixdim: &[f64]) -> ([[f64; 3]; 3], [f64; 3]) {
    let qform_code = h.i16(252);
    let sform_code = h.i16(254);
    if sform_code > 0 {
        let mut m = [[0.0; 3]; 3];
        let mut t = [0.0; 3];
        for (r, row) in m.iter_mut().enumerate() {
            for (c, cell) in row.iter_mut().enumerate() {
                *cell = h.f32(280 + 16 * r + 4 * c) as f64;
            }
            t[r] = h.f32(280 + 16 * r + 12) as f64;
        }
        return (m, t);
    }
    if qform_code > 0 {
        let b = h.f32(256) as f64;
        let c = h.f32(260) as f64;
        let d = h.f32(264) as f64;
        let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
        let r = [
            [
                a * a + b * b - c * c - d * d,
                2.0 * (b * c - a * d),
                2.0 * (b * d + a * c),
            ],
            [
                2.0 * (b * c + a * d),
                a * a + c * c - b * b - d * d,
                2.0 * (c * d - a * b),
            ],
            [
                2.0 * (b * d - a * c),
                2.0 * (c * d + a * b),
                a * a + d * d - c * c - b * b,
            ],
        ];
        let qfac = if pixdim[0] < 0.0 { -1.0 } else { 1.0 };
        let scale = [pixdim[1].abs(), pixdim[2].abs(), pixdim[3].abs() * qfac];
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = r[i][j] * scale[j];
            }
        }
        let t = [h.f32(268) as f64, h.f32(272) as f64, h.f32(276) as f64];
        return (m, t);
    }
    let mut m = [[0.0; 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = pixdim[i + 1].abs();
    }
    (m, [0.0; 3])
}

const PERMUTATIONS: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

/// Picks the axis permutation (voxel axis j -> world axis perm[j]) that best
/// aligns with the affine columns, and whether each voxel axis is flipped.
fn axis_mapping(m: &[[f64; 3]; 3]) -> ([usize; 3], [bool; 3]) {
    let col_norm = |j: usize| {
        let n = (0..3).map(|i| m[i][j] * m[i][j]).sum::<f64>().sqrt();
        if n > 0.0 {
            n
        } else {
            1.0
        }
    };
    let norms = [col_norm(0), col_norm(1), col_norm(2)];
    let mut best = PERMUTATIONS[0];
    let mut best_score = f64::NEG_INFINITY;
    for p in PERMUTATIONS {
        let score: f64 = (0..3).map(|j| m[p[j]][j].abs() / norms[j]).sum();
        if score > best_score + 1e-12 {
            best_score = score;
            best = p;
        }
    }
    let flips = [m[best[0]][0] < 0.0, m[best[1]][1] < 0.0, m[best[2]][2] < 0.0];
    (best, flips)
}

fn canonicalize(
    dims: [usize; 3],
    spacing_vox: [f64; 3],
    channels: usize,
    m: &[[f64; 3]; 3],
    t: [f64; 3],
    values: Vec<f64>,
) -> Result<(Grid, Vec<f64>)> {
    let (perm, flips) = axis_mapping(m);

    let mut cdims = [0usize; 3];
    let mut cspacing = [0.0; 3];
    for j in 0..3 {
        cdims[perm[j]] = dims[j];
        cspacing[perm[j]] = spacing_vox[j];
    }
    // world position of the voxel that lands at canonical (0, 0, 0)
    let first: [f64; 3] = std::array::from_fn(|j| if flips[j] { (dims[j] - 1) as f64 } else { 0.0 });
    let origin: [f64; 3] =
        std::array::from_fn(|i| t[i] + (0..3).map(|j| m[i][j] * first[j]).sum::<f64>());
    let grid = Grid::with_origin(cdims, cspacing, origin)
        .map_err(|e| Error::MalformedHeader(e.to_string()))?;

    if perm == [0, 1, 2] && flips == [false; 3] {
        return Ok((grid, values));
    }
    let n = dims[0] * dims[1] * dims[2];
    let mut out = vec![0.0; values.len()];
    for ch in 0..channels {
        let src = &values[ch * n..(ch + 1) * n];
        let dst = &mut out[ch * n..(ch + 1) * n];
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let idx = [i, j, k];
                    let mut c = [0usize; 3];
                    for a in 0..3 {
                        c[perm[a]] = if flips[a] { dims[a] - 1 - idx[a] } else { idx[a] };
                    }
                    dst[grid.index(c[0], c[1], c[2])] = src[i + dims[0] * (j + dims[1] * k)];
                }
            }
        }
    }
    Ok((grid, out))
}

/// Element types that can be written to a NIfTI file.
pub trait NiftiScalar: Copy {
    /// Returns `(datatype, bitpix, little-endian payload)`.
    fn encode(data: &[Self]) -> (i16, i16, Vec<u8>);
}

impl NiftiScalar for f64 {
    fn encode(data: &[Self]) -> (i16, i16, Vec<u8>) {
        (
            DT_FLOAT64,
            64,
            data.iter().flat_map(|v| v.to_le_bytes()).collect(),
        )
    }
}

impl NiftiScalar for f32 {
    fn encode(data: &[Self]) -> (i16, i16, Vec<u8>) {
        (
            DT_FLOAT32,
            32,
            data.iter().flat_map(|v| v.to_le_bytes()).collect(),
        )
    }
}

impl NiftiScalar for u16 {
    /// Label maps fitting in a byte are stored as uint8.
    fn encode(data: &[Self]) -> (i16, i16, Vec<u8>) {
        if data.iter().all(|&v| v <= u8::MAX as u16) {
            (DT_UINT8, 8, data.iter().map(|&v| v as u8).collect())
        } else {
            (
                DT_UINT16,
                16,
                data.iter().flat_map(|v| v.to_le_bytes()).collect(),
            )
        }
    }
}

impl NiftiScalar for u8 {
    fn encode(data: &[Self]) -> (i16, i16, Vec<u8>) {
        (DT_UINT8, 8, data.to_vec())
    }
}

fn build_header<T: NiftiScalar>(v: &Volume<T>) -> Result<(Vec<u8>, Vec<u8>)> {
    let dims = v.dims();
    for &d in dims.iter().chain(std::iter::once(&v.channels())) {
        if d > MAX_DIM {
            return Err(Error::HeaderLimit { value: d });
        }
    }
    let (datatype, bitpix, payload) = T::encode(v.data());
    let grid = v.grid();
    let four_d = v.channels() > 1;

    let mut h = vec![0u8; VOX_OFFSET];
    let put_i16 = |h: &mut Vec<u8>, off: usize, x: i16| h[off..off + 2].copy_from_slice(&x.to_le_bytes());
    let put_f32 = |h: &mut Vec<u8>, off: usize, x: f32| h[off..off + 4].copy_from_slice(&x.to_le_bytes());
    h[0..4].copy_from_slice(&348i32.to_le_bytes());
    h[38] = b'r';
    put_i16(&mut h, 40, if four_d { 4 } else { 3 });
    for (k, &d) in dims.iter().enumerate() {
        put_i16(&mut h, 42 + 2 * k, d as i16);
    }
    put_i16(&mut h, 48, v.channels() as i16);
    for k in 4..7 {
        put_i16(&mut h, 42 + 2 * k, 1);
    }
    put_i16(&mut h, 70, datatype);
    put_i16(&mut h, 72, bitpix);
    put_f32(&mut h, 76, 1.0);
    for k in 0..3 {
        put_f32(&mut h, 80 + 4 * k, grid.spacing[k] as f32);
    }
    put_f32(&mut h, 92, 1.0);
    put_f32(&mut h, 108, VOX_OFFSET as f32);
    put_f32(&mut h, 112, 1.0);
    h[123] = 2; // mm
    let descrip = format!("segkit {}", env!("CARGO_PKG_VERSION"));
    h[148..148 + descrip.len()].copy_from_slice(descrip.as_bytes());
    put_i16(&mut h, 252, 1);
    put_i16(&mut h, 254, 1);
    for k in 0..3 {
        put_f32(&mut h, 268 + 4 * k, grid.origin[k] as f32);
    }
    for r in 0..3 {
        put_f32(&mut h, 280 + 16 * r + 4 * r, grid.spacing[r] as f32);
        put_f32(&mut h, 280 + 16 * r + 12, grid.origin[r] as f32);
    }
    h[344..348].copy_from_slice(b"n+1\0");
    Ok((h, payload))
}

/// Writes a volume; `.gz` suffix selects gzip compression. Multi-channel
/// volumes become 4D files with the channel on the 4th axis.
pub fn write_volume<T: NiftiScalar>(v: &Volume<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (header, payload) = build_header(v)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let gz = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("gz"))
        .unwrap_or(false);
    let res = if gz {
        let mut enc = GzEncoder::new(w, Compression::default());
        enc.write_all(&header)
            .and_then(|_| enc.write_all(&payload))
            .and_then(|_| enc.finish())
            .and_then(|mut inner| inner.flush())
    } else {
        w.write_all(&header)
            .and_then(|_| w.write_all(&payload))
            .and_then(|_| w.flush())
    };
    res.map_err(|e| Error::io(path, e))
}

pub fn write_loaded(v: &LoadedVolume, path: impl AsRef<Path>) -> Result<()> {
    match v {
        LoadedVolume::Image(v) => write_volume(v, path),
        LoadedVolume::Labels(v) => write_volume(v, path),
        LoadedVolume::Probabilities(v) => write_volume(v, path),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn small_uint8_round_trip() {
        let dir = tmp();
        let g = Grid::new([2, 2, 2], [1.0; 3]).unwrap();
        let v = Volume::from_vec(g, vec![0u16, 1, 2, 0, 1, 2, 2, 1]).unwrap();
        let p = dir.path().join("a.nii.gz");
        write_volume(&v, &p).unwrap();
        let back = read_labels(&p, &LabelSet::default()).unwrap();
        assert_eq!(back.dims(), [2, 2, 2]);
        assert_eq!(back.spacing(), [1.0, 1.0, 1.0]);
        assert_eq!(back.data(), v.data());
    }

    #[test]
    fn anisotropic_spacing_preserved_exactly() {
        let dir = tmp();
        let g = Grid::new([3, 4, 5], [3.0, 0.78125, 0.78125]).unwrap();
        let v = Volume::from_vec(g, (0..60).map(|i| i as f64 * 0.5).collect()).unwrap();
        let p = dir.path().join("aniso.nii");
        write_volume(&v, &p).unwrap();
        let back = read_image(&p).unwrap();
        assert_eq!(back.spacing(), [3.0, 0.78125, 0.78125]);
        assert_eq!(back.data(), v.data());
    }

    #[test]
    fn unknown_label_rejected() {
        let dir = tmp();
        let g = Grid::new([2, 1, 1], [1.0; 3]).unwrap();
        let v = Volume::from_vec(g, vec![0u16, 7]).unwrap();
        let p = dir.path().join("l.nii");
        write_volume(&v, &p).unwrap();
        match read_labels(&p, &LabelSet::default()) {
            Err(Error::UnknownLabel { value, .. }) => assert_eq!(value, 7.0),
            other => panic!("expected unknown-label error, got {other:?}"),
        }
    }

    #[test]
    fn probability_stack_is_4d_and_exact() {
        let dir = tmp();
        let g = Grid::new([2, 2, 1], [1.0, 2.0, 3.0]).unwrap();
        let p0 = [0.2f32, 0.5, 0.1, 1.0];
        let p1 = [0.3f32, 0.25, 0.6, 0.0];
        let data: Vec<f32> = p0
            .iter()
            .chain(p1.iter())
            .copied()
            .chain(p0.iter().zip(p1.iter()).map(|(a, b)| 1.0 - a - b))
            .collect();
        let v = Volume::from_channels(g, 3, data).unwrap();
        let p = dir.path().join("p.nii.gz");
        write_volume(&v, &p).unwrap();
        let raw = read_raw(&p).unwrap();
        assert_eq!(raw.ndim, 4);
        let back = read_probabilities(&p).unwrap();
        let max_err = back
            .data()
            .iter()
            .zip(v.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert_eq!(max_err, 0.0);
        assert_eq!(back.channels(), 3);
    }

    #[test]
    fn header_limit() {
        let dir = tmp();
        let g = Grid::new([70000, 1, 1], [1.0; 3]).unwrap();
        let v = Volume::filled(g, 0u16);
        let err = write_volume(&v, dir.path().join("big.nii")).unwrap_err();
        assert!(matches!(err, Error::HeaderLimit { value: 70000 }));
    }

    #[test]
    fn non_finite_image_rejected() {
        let dir = tmp();
        let g = Grid::new([2, 1, 1], [1.0; 3]).unwrap();
        let v = Volume::from_vec(g, vec![1.0f64, f64::NAN]).unwrap();
        let p = dir.path().join("nan.nii");
        write_volume(&v, &p).unwrap();
        assert!(matches!(read_image(&p), Err(Error::NonFinite { index: 1 })));
    }

    #[test]
    fn kind_dimensionality_mismatch() {
        let dir = tmp();
        let g = Grid::new([2, 1, 1], [1.0; 3]).unwrap();
        let v = Volume::from_vec(g, vec![0.5f32, 0.5]).unwrap();
        let p = dir.path().join("p3.nii");
        write_volume(&v, &p).unwrap();
        assert!(matches!(
            read_probabilities(&p),
            Err(Error::Dimensionality(_))
        ));
    }

    #[test]
    fn truncated_and_garbage_headers() {
        assert!(matches!(decode(&[0u8; 10]), Err(Error::MalformedHeader(_))));
        assert!(matches!(decode(&[0u8; 400]), Err(Error::MalformedHeader(_))));
    }

    fn patch_i16(bytes: &mut [u8], off: usize, v: i16) {
        bytes[off..off + 2].copy_from_slice(&v.to_le_bytes());
    }
    fn patch_f32(bytes: &mut [u8], off: usize, v: f32) {
        bytes[off..off + 4].copy_from_slice(&v.to_le_bytes());
    }

    #[test]
    fn flipped_and_permuted_sform_is_canonicalized() {
        // voxel axis 0 -> world -y, axis 1 -> world +x, axis 2 -> world +z
        let g = Grid::new([2, 3, 1], [1.0; 3]).unwrap();
        let v = Volume::from_vec(g, (0..6).map(|i| i as f64).collect()).unwrap();
        let (mut h, payload) = build_header(&v).unwrap();
        patch_i16(&mut h, 252, 0);
        patch_f32(&mut h, 76, 1.0);
        patch_f32(&mut h, 80, 2.0);
        patch_f32(&mut h, 84, 3.0);
        let rows = [[0.0, 3.0, 0.0, 10.0], [-2.0, 0.0, 0.0, 20.0], [0.0, 0.0, 1.0, 30.0]];
        for (r, row) in rows.iter().enumerate() {
            for (c, &x) in row.iter().enumerate() {
                patch_f32(&mut h, 280 + 16 * r + 4 * c, x);
            }
        }
        let mut bytes = h;
        bytes.extend_from_slice(&payload);
        let raw = decode(&bytes).unwrap();
        assert_eq!(raw.grid.dims, [3, 2, 1]);
        assert_eq!(raw.grid.spacing, [3.0, 2.0, 1.0]);
        // canonical (0,0,0) is original (i=1, j=0)
        assert_eq!(raw.grid.origin, [10.0, 18.0, 30.0]);
        // canonical (x, y) = (j, 1 - i); original value = i + 2 j
        for y in 0..2 {
            for x in 0..3 {
                let i = 1 - y;
                let j = x;
                assert_eq!(raw.values[raw.grid.index(x, y, 0)], (i + 2 * j) as f64);
            }
        }
    }

    #[test]
    fn big_endian_header_is_read() {
        let g = Grid::new([2, 1, 1], [1.5, 1.0, 1.0]).unwrap();
        let v = Volume::from_vec(g, vec![3u16, 4]).unwrap();
        let (h, _) = build_header(&v).unwrap();
        // re-encode all numeric fields big-endian with int16 payload
        let mut be = h.clone();
        let swap = |b: &mut [u8], off: usize, n: usize| b[off..off + n].reverse();
        swap(&mut be, 0, 4);
        for k in 0..8 {
            swap(&mut be, 40 + 2 * k, 2);
        }
        be[70..72].copy_from_slice(&DT_INT16.to_be_bytes());
        be[72..74].copy_from_slice(&16i16.to_be_bytes());
        for k in 0..8 {
            swap(&mut be, 76 + 4 * k, 4);
        }
        swap(&mut be, 108, 4);
        swap(&mut be, 112, 4);
        for off in [252, 254] {
            swap(&mut be, off, 2);
        }
        for k in 0..6 {
            swap(&mut be, 256 + 4 * k, 4);
        }
        for k in 0..12 {
            swap(&mut be, 280 + 4 * k, 4);
        }
        be.extend_from_slice(&3i16.to_be_bytes());
        be.extend_from_slice(&4i16.to_be_bytes());
        let raw = decode(&be).unwrap();
        assert_eq!(raw.values, vec![3.0, 4.0]);
        assert_eq!(raw.grid.spacing, [1.5, 1.0, 1.0]);
    }
}
