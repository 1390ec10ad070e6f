//! Raster data model and the flat-binary band-sequential file format.
//!
//! A raster on disk is a pair of files sharing a stem: `<name>.hdr`, a
//! UTF-8 `key=value` header, and `<name>.bin`, the little-endian float32
//! payload laid out band after band, each band row-major.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

/// Role of a band plane. The four spectral roles are what classification
/// needs; `Index` carries integer planes (class ids, segment ids).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BandRole {
    Blue,
    Green,
    Red,
    Nir,
    Index,
}

impl BandRole {
    pub const SPECTRAL: [BandRole; 4] = [BandRole::Blue, BandRole::Green, BandRole::Red, BandRole::Nir];

    pub fn name(self) -> &'static str {
        match self {
            BandRole::Blue => "blue",
            BandRole::Green => "green",
            BandRole::Red => "red",
            BandRole::Nir => "nir",
            BandRole::Index => "index",
        }
    }
}

impl fmt::Display for BandRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BandRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "blue" => Ok(BandRole::Blue),
            "green" => Ok(BandRole::Green),
            "red" => Ok(BandRole::Red),
            "nir" => Ok(BandRole::Nir),
            "index" => Ok(BandRole::Index),
            other => Err(Error::UnknownBandRole(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub role: BandRole,
    pub data: Vec<f32>,
}

/// Multi-band pixel grid. Values follow the scaled-reflectance convention
/// (0..=10000), so absolute rule thresholds apply without rescaling.
#[derive(Debug, Clone, PartialEq)]
pub struct MultibandRaster {
    width: usize,
    height: usize,
    bands: Vec<Band>,
    pixel_size_m: f64,
    nodata: Option<f32>,
}

impl MultibandRaster {
    pub fn new(width: usize, height: usize, bands: Vec<(BandRole, Vec<f32>)>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("raster dimensions must be positive, got {width}x{height}")));
        }
        if bands.is_empty() {
            return Err(Error::invalid("raster needs at least one band"));
        }
        let n = width * height;
        let mut seen = Vec::with_capacity(bands.len());
        for (role, data) in &bands {
            if seen.contains(role) {
                return Err(Error::invalid(format!("band role {role} appears twice")));
            }
            seen.push(*role);
            if data.len() != n {
                return Err(Error::invalid(format!(
                    "band {role} has {} values, expected {n}",
                    data.len()
                )));
            }
            if let Some(i) = data.iter().position(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::invalid(format!(
                    "band {role} pixel {i} is {} (must be finite and non-negative)",
                    data[i]
                )));
            }
        }
        Ok(MultibandRaster {
            width,
            height,
            bands: bands.into_iter().map(|(role, data)| Band { role, data }).collect(),
            pixel_size_m: 1.0,
            nodata: None,
        })
    }

    pub fn with_pixel_size(mut self, pixel_size_m: f64) -> Result<Self> {
        if !(pixel_size_m.is_finite() && pixel_size_m > 0.0) {
            return Err(Error::invalid(format!("pixel size must be positive, got {pixel_size_m}")));
        }
        self.pixel_size_m = pixel_size_m;
        Ok(self)
    }

    pub fn with_nodata(mut self, nodata: Option<f32>) -> Self {
        self.nodata = nodata;
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pixel_size_m(&self) -> f64 {
        self.pixel_size_m
    }

    pub fn nodata(&self) -> Option<f32> {
        self.nodata
    }

    pub fn bands(&self) -> &[Band] {
        &self.bands
    }

    pub fn band_count(&self) -> usize {
        self.bands.len()
    }

    pub fn band(&self, role: BandRole) -> Option<&[f32]> {
        self.bands.iter().find(|b| b.role == role).map(|b| b.data.as_slice())
    }

    /// The Blue/Green/Red/NIR planes, in that order.
    pub fn spectral_bands(&self) -> Result<[&[f32]; 4]> {
        let get = |role: BandRole, name: &'static str| self.band(role).ok_or(Error::MissingBand(name));
        Ok([
            get(BandRole::Blue, "blue")?,
            get(BandRole::Green, "green")?,
            get(BandRole::Red, "red")?,
            get(BandRole::Nir, "nir")?,
        ])
    }
}

/// Class-id plane. Label 0 is Unclassified.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelRaster {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    legend: BTreeMap<u32, String>,
}

pub const UNCLASSIFIED: u32 = 0;

impl LabelRaster {
    pub fn new(width: usize, height: usize, labels: Vec<u32>, legend: BTreeMap<u32, String>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("label raster dimensions must be positive, got {width}x{height}")));
        }
        if labels.len() != width * height {
            return Err(Error::invalid(format!(
                "label plane has {} values, expected {}",
                labels.len(),
                width * height
            )));
        }
        if legend.contains_key(&UNCLASSIFIED) {
            return Err(Error::invalid("label 0 is reserved for Unclassified"));
        }
        if let Some(l) = labels.iter().find(|&&l| l != UNCLASSIFIED && !legend.contains_key(&l)) {
            return Err(Error::invalid(format!("label {l} is missing from the legend")));
        }
        Ok(LabelRaster {
            width,
            height,
            labels,
            legend,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn legend(&self) -> &BTreeMap<u32, String> {
        &self.legend
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    /// Pixel count per label, including 0.
    pub fn counts(&self) -> BTreeMap<u32, usize> {
        let mut out = BTreeMap::new();
        for &l in &self.labels {
            *out.entry(l).or_insert(0) += 1;
        }
        out
    }

    /// Pixels whose four in-bounds neighbours all carry a different label.
    /// Border pixels count only their in-bounds neighbours.
    pub fn isolated_pixel_count(&self) -> usize {
        let (w, h) = (self.width, self.height);
        let mut count = 0;
        for r in 0..h {
            for c in 0..w {
                let l = self.labels[r * w + c];
                let mut neighbours = 0;
                let mut same = false;
                let mut check = |rr: usize, cc: usize| {
                    neighbours += 1;
                    if self.labels[rr * w + cc] == l {
                        same = true;
                    }
                };
                if r > 0 {
                    check(r - 1, c);
                }
                if r + 1 < h {
                    check(r + 1, c);
                }
                if c > 0 {
                    check(r, c - 1);
                }
                if c + 1 < w {
                    check(r, c + 1);
                }
                if neighbours > 0 && !same {
                    count += 1;
                }
            }
        }
        count
    }
}

fn file_pair(path: &Path) -> (PathBuf, PathBuf) {
    match path.extension().and_then(|e| e.to_str()) {
        Some("hdr") | Some("bin") => (path.with_extension("hdr"), path.with_extension("bin")),
        _ => {
            let mut hdr = path.as_os_str().to_owned();
            hdr.push(".hdr");
            let mut bin = path.as_os_str().to_owned();
            bin.push(".bin");
            (PathBuf::from(hdr), PathBuf::from(bin))
        }
    }
}

struct Header {
    width: usize,
    height: usize,
    roles: Vec<BandRole>,
    pixel_size_m: f64,
    nodata: Option<f32>,
    legend: Option<BTreeMap<u32, String>>,
}

fn format_header(
    width: usize,
    height: usize,
    roles: &[BandRole],
    pixel_size_m: f64,
    nodata: Option<f32>,
    legend: Option<&BTreeMap<u32, String>>,
) -> String {
    let roles: Vec<&str> = roles.iter().map(|r| r.name()).collect();
    let mut s = format!(
        "width={width}\nheight={height}\nbands={}\ndtype=float32\ninterleave=BSQ\npixel_size_m={pixel_size_m:?}\nbyteorder=LE\n",
        roles.join(",")
    );
    if let Some(nd) = nodata {
        s.push_str(&format!("nodata={nd:?}\n"));
    }
    if let Some(legend) = legend {
        let entries: Vec<String> = legend.iter().map(|(id, name)| format!("{id}:{name}")).collect();
        s.push_str(&format!("legend={}\n", entries.join(",")));
    }
    s
}

fn parse_header(path: &Path, text: &str) -> Result<Header> {
    let err = |line: usize, field: &str, reason: String| Error::Header {
        path: path.to_path_buf(),
        line,
        field: field.to_string(),
        reason,
    };
    let mut fields: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(err(line_no, line, "expected `key=value`".into()));
        };
        let key = key.trim();
        if !matches!(
            key,
            "width" | "height" | "bands" | "dtype" | "interleave" | "pixel_size_m" | "byteorder" | "nodata" | "legend"
        ) {
            return Err(err(line_no, key, "unknown field".into()));
        }
        if fields.insert(key, (line_no, value.trim())).is_some() {
            return Err(err(line_no, key, "duplicate field".into()));
        }
    }
    let last_line = text.lines().count().max(1);
    let required = |key: &str| -> Result<(usize, &str)> {
        fields
            .get(key)
            .copied()
            .ok_or_else(|| err(last_line, key, "missing required field".into()))
    };
    let dim = |key: &str| -> Result<usize> {
        let (line, v) = required(key)?;
        match v.parse::<usize>() {
            Ok(d) if d > 0 => Ok(d),
            _ => Err(err(line, key, format!("expected a positive integer, got `{v}`"))),
        }
    };
    let width = dim("width")?;
    let height = dim("height")?;

    let (bands_line, bands) = required("bands")?;
    let mut roles = Vec::new();
    for name in bands.split(',') {
        let role: BandRole = name.parse()?;
        if roles.contains(&role) {
            return Err(err(bands_line, "bands", format!("role `{role}` listed twice")));
        }
        roles.push(role);
    }

    for (key, expected) in [("dtype", "float32"), ("interleave", "BSQ"), ("byteorder", "LE")] {
        let (line, v) = required(key)?;
        if v != expected {
            return Err(err(line, key, format!("only `{expected}` is supported, got `{v}`")));
        }
    }

    let (line, v) = required("pixel_size_m")?;
    let pixel_size_m = match v.parse::<f64>() {
        Ok(p) if p.is_finite() && p > 0.0 => p,
        _ => return Err(err(line, "pixel_size_m", format!("expected a positive real, got `{v}`"))),
    };

    let nodata = match fields.get("nodata") {
        Some((line, v)) => Some(
            v.parse::<f32>()
                .map_err(|_| err(*line, "nodata", format!("expected a real, got `{v}`")))?,
        ),
        None => None,
    };

    let legend = match fields.get("legend") {
        Some((line, v)) => {
            let mut map = BTreeMap::new();
            for entry in v.split(',').filter(|e| !e.is_empty()) {
                let parsed = entry
                    .split_once(':')
                    .and_then(|(id, name)| id.trim().parse::<u32>().ok().map(|id| (id, name.trim().to_string())));
                match parsed {
                    Some((id, name)) if id != 0 && !name.is_empty() => {
                        map.insert(id, name);
                    }
                    _ => return Err(err(*line, "legend", format!("bad entry `{entry}`, expected `<id>:<name>`"))),
                }
            }
            Some(map)
        }
        None => None,
    };

    Ok(Header {
        width,
        height,
        roles,
        pixel_size_m,
        nodata,
        legend,
    })
}

fn write_pair(path: &Path, header: &str, planes: &[&[f32]]) -> Result<()> {
    let (hdr, bin) = file_pair(path);
    let mut payload = Vec::with_capacity(planes.iter().map(|p| p.len() * 4).sum());
    for plane in planes {
        for v in *plane {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(&hdr, header).map_err(|e| Error::io(&hdr, e))?;
    fs::write(&bin, payload).map_err(|e| Error::io(&bin, e))?;
    Ok(())
}

fn read_pair(path: &Path) -> Result<(Header, Vec<Vec<f32>>)> {
    let (hdr, bin) = file_pair(path);
    let text = fs::read_to_string(&hdr).map_err(|e| Error::io(&hdr, e))?;
    let header = parse_header(&hdr, &text)?;
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let plane_len = header.width * header.height;
    let expected = (header.roles.len() * plane_len * 4) as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            path: bin,
            expected,
            actual: bytes.len() as u64,
        });
    }
    let planes = bytes
        .chunks_exact(plane_len * 4)
        .map(|plane| {
            plane
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect()
        })
        .collect();
    Ok((header, planes))
}

/// Writes `<stem>.hdr` and `<stem>.bin`. `path` may name either file or the bare stem.
pub fn write_raster(raster: &MultibandRaster, path: impl AsRef<Path>) -> Result<()> {
    let roles: Vec<BandRole> = raster.bands.iter().map(|b| b.role).collect();
    let header = format_header(raster.width, raster.height, &roles, raster.pixel_size_m, raster.nodata, None);
    let planes: Vec<&[f32]> = raster.bands.iter().map(|b| b.data.as_slice()).collect();
    write_pair(path.as_ref(), &header, &planes)
}

pub fn read_raster(path: impl AsRef<Path>) -> Result<MultibandRaster> {
    let (header, planes) = read_pair(path.as_ref())?;
    let bands = header.roles.into_iter().zip(planes).collect();
    Ok(MultibandRaster::new(header.width, header.height, bands)?
        .with_pixel_size(header.pixel_size_m)?
        .with_nodata(header.nodata))
}

/// Label planes go through the same format: one `index` band plus a `legend` header line.
pub fn write_labels(labels: &LabelRaster, path: impl AsRef<Path>) -> Result<()> {
    let plane: Vec<f32> = labels.labels.iter().map(|&l| l as f32).collect();
    let header = format_header(labels.width, labels.height, &[BandRole::Index], 1.0, None, Some(&labels.legend));
    write_pair(path.as_ref(), &header, &[&plane])
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelRaster> {
    let path = path.as_ref();
    let (header, planes) = read_pair(path)?;
    if planes.len() != 1 {
        return Err(Error::invalid(format!(
            "{}: label raster must have exactly one band, found {}",
            path.display(),
            planes.len()
        )));
    }
    let mut labels = Vec::with_capacity(planes[0].len());
    for (i, &v) in planes[0].iter().enumerate() {
        if !(v >= 0.0 && v.fract() == 0.0 && v < 16_777_216.0) {
            return Err(Error::invalid(format!("{}: pixel {i} is not a class id ({v})", path.display())));
        }
        labels.push(v as u32);
    }
    let legend = match header.legend {
        Some(l) => l,
        None => labels
            .iter()
            .filter(|&&l| l != UNCLASSIFIED)
            .map(|&l| (l, format!("class{l}")))
            .collect(),
    };
    LabelRaster::new(header.width, header.height, labels, legend)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(MultibandRaster::new(0, 0, vec![(BandRole::Blue, vec![])]).is_err());
    }

    #[test]
    fn single_pixel_layout() {
        let dir = tmp();
        let r = MultibandRaster::new(1, 1, vec![(BandRole::Red, vec![5.0])]).unwrap();
        write_raster(&r, dir.path().join("one")).unwrap();
        let bin = fs::read(dir.path().join("one.bin")).unwrap();
        assert_eq!(bin, 5.0f32.to_le_bytes());
        let hdr = fs::read_to_string(dir.path().join("one.hdr")).unwrap();
        assert_eq!(
            hdr,
            "width=1\nheight=1\nbands=red\ndtype=float32\ninterleave=BSQ\npixel_size_m=1.0\nbyteorder=LE\n"
        );
    }

    #[test]
    fn header_claims_more_bands_than_payload() {
        let dir = tmp();
        let r = MultibandRaster::new(2, 2, vec![(BandRole::Red, vec![1.0; 4])]).unwrap();
        let p = dir.path().join("x");
        write_raster(&r, &p).unwrap();
        let hdr = fs::read_to_string(dir.path().join("x.hdr")).unwrap();
        fs::write(dir.path().join("x.hdr"), hdr.replace("bands=red", "bands=red,nir")).unwrap();
        match read_raster(&p) {
            Err(Error::SizeMismatch { expected, actual, .. }) => {
                assert_eq!(expected, 32);
                assert_eq!(actual, 16);
            }
            other => panic!("expected size mismatch, got {other:?}"),
        }
    }

    #[test]
    fn malformed_header_reports_line_and_field() {
        let dir = tmp();
        fs::write(
            dir.path().join("bad.hdr"),
            "width=4\nheight=four\nbands=red\ndtype=float32\ninterleave=BSQ\npixel_size_m=1\nbyteorder=LE\n",
        )
        .unwrap();
        fs::write(dir.path().join("bad.bin"), []).unwrap();
        match read_raster(dir.path().join("bad.hdr")) {
            Err(Error::Header { line, field, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(field, "height");
            }
            other => panic!("expected header error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_band_role() {
        let dir = tmp();
        fs::write(
            dir.path().join("b.hdr"),
            "width=1\nheight=1\nbands=swir\ndtype=float32\ninterleave=BSQ\npixel_size_m=1\nbyteorder=LE\n",
        )
        .unwrap();
        fs::write(dir.path().join("b.bin"), 1.0f32.to_le_bytes()).unwrap();
        assert!(matches!(read_raster(dir.path().join("b")), Err(Error::UnknownBandRole(r)) if r == "swir"));
    }

    #[test]
    fn labels_round_trip_with_legend() {
        let dir = tmp();
        let legend = BTreeMap::from([(1, "Water".to_string()), (7, "Road".to_string())]);
        let l = LabelRaster::new(3, 1, vec![0, 1, 7], legend).unwrap();
        write_labels(&l, dir.path().join("l.bin")).unwrap();
        assert_eq!(read_labels(dir.path().join("l.hdr")).unwrap(), l);
    }

    #[test]
    fn isolated_pixels() {
        let l = LabelRaster::new(
            3,
            3,
            vec![1, 1, 1, 1, 2, 1, 1, 1, 1],
            BTreeMap::from([(1, "a".into()), (2, "b".into())]),
        )
        .unwrap();
        assert_eq!(l.isolated_pixel_count(), 1);
    }

    #[test]
    fn negative_and_nan_rejected() {
        assert!(MultibandRaster::new(1, 1, vec![(BandRole::Red, vec![-1.0])]).is_err());
        assert!(MultibandRaster::new(1, 1, vec![(BandRole::Red, vec![f32::NAN])]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            w in 1usize..8,
            h in 1usize..8,
            nb in 1usize..5,
            seed in proptest::collection::vec(0.0f32..10000.0, 64 * 4),
            px in 0.1f64..30.0,
        ) {
            let dir = tmp();
            let bands = BandRole::SPECTRAL[..nb]
                .iter()
                .enumerate()
                .map(|(b, &role)| (role, (0..w * h).map(|i| seed[b * 64 + i]).collect()))
                .collect();
            let r = MultibandRaster::new(w, h, bands).unwrap().with_pixel_size(px).unwrap();
            let p = dir.path().join("r");
            write_raster(&r, &p).unwrap();
            proptest::prop_assert_eq!(read_raster(&p).unwrap(), r);
        }
    }
}
