//! Probabilistic point clouds: per-pixel depth estimates unprojected into
//! 3D, each point carrying its probability attribute and pixel provenance,
//! plus a PLY dialect for interchange.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::histogram::PixelEstimate;
use crate::scene::CameraIntrinsics;

/// One point of a probabilistic point cloud.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbabilisticPoint {
    pub position: [f64; 3],
    /// Peak mass over total mass of the source histogram, in (0, 1].
    pub probability: f64,
    /// Source pixel `(u, v)`, when known.
    pub pixel: Option<(u16, u16)>,
}

/// Provenance recorded in the PLY header.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CloudMetadata {
    pub seed: Option<u64>,
    pub bin_width: Option<f64>,
    pub num_bins: Option<usize>,
    pub sbr: Option<(f64, f64)>,
    /// Set when a read file had no probability property (all defaulted to 1).
    pub missing_probability: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProbabilisticPointCloud {
    pub points: Vec<ProbabilisticPoint>,
    pub metadata: CloudMetadata,
}

impl ProbabilisticPointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<[f64; 3]> {
        self.points.iter().map(|p| p.position).collect()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.probability).collect()
    }

    /// A copy containing only the points at `keep[i] == true`, in order.
    pub fn filter_by_mask(&self, keep: &[bool]) -> Self {
        let points = self
            .points
            .iter()
            .zip(keep)
            .filter_map(|(p, k)| k.then_some(*p))
            .collect();
        Self { points, metadata: self.metadata.clone() }
    }

    /// A copy containing the points at the given indices, in the given order.
    pub fn select(&self, indices: &[u32]) -> Self {
        let points = indices.iter().map(|i| self.points[*i as usize]).collect();
        Self { points, metadata: self.metadata.clone() }
    }
}

/// Unproject every valid estimate along its pixel ray. Points appear in
/// row-major pixel order; invalid pixels emit nothing.
pub fn build_ppc(
    estimates: &[PixelEstimate],
    intrinsics: &CameraIntrinsics,
    metadata: CloudMetadata,
) -> Result<ProbabilisticPointCloud> {
    intrinsics.validate()?;
    let (w, h) = (intrinsics.width as usize, intrinsics.height as usize);
    if estimates.len() != w * h {
        return Err(Error::dimension(format!(
            "{} estimates for a {w}x{h} grid",
            estimates.len()
        )));
    }
    let mut points = Vec::new();
    for v in 0..h {
        for u in 0..w {
            let est = &estimates[v * w + u];
            if !est.valid || est.depth <= 0.0 {
                continue;
            }
            let position = intrinsics.unproject(u as f64, v as f64, est.depth)?;
            points.push(ProbabilisticPoint {
                position,
                probability: est.probability,
                pixel: Some((u as u16, v as u16)),
            });
        }
    }
    Ok(ProbabilisticPointCloud { points, metadata })
}

// ── PLY dialect ───────────────────────────────────────────────────────

/// On-disk encodings supported by [`write_ply`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    BinaryLittleEndian,
    Ascii,
}

/// Write the cloud as a PLY `vertex` element with properties
/// `x y z probability pixel_u pixel_v` (positions and probability as
/// binary32). Header comments record generator version and provenance.
pub fn write_ply(cloud: &ProbabilisticPointCloud, path: &Path, format: PlyFormat) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ply_to(cloud, &mut w, format)
}

pub fn write_ply_to<W: Write>(
    cloud: &ProbabilisticPointCloud,
    w: &mut W,
    format: PlyFormat,
) -> Result<()> {
    let format_line = match format {
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
        PlyFormat::Ascii => "ascii",
    };
    writeln!(w, "ply")?;
    writeln!(w, "format {format_line} 1.0")?;
    writeln!(w, "comment generator ppc {}", env!("CARGO_PKG_VERSION"))?;
    let meta = &cloud.metadata;
    if let Some(seed) = meta.seed {
        writeln!(w, "comment seed {seed}")?;
    }
    if let Some(bw) = meta.bin_width {
        writeln!(w, "comment bin_width_s {bw:e}")?;
    }
    if let Some(nb) = meta.num_bins {
        writeln!(w, "comment num_bins {nb}")?;
    }
    if let Some((s, b)) = meta.sbr {
        writeln!(w, "comment sbr {s}:{b}")?;
    }
    writeln!(w, "element vertex {}", cloud.points.len())?;
    writeln!(w, "property float x")?;
    writeln!(w, "property float y")?;
    writeln!(w, "property float z")?;
    writeln!(w, "property float probability")?;
    writeln!(w, "property ushort pixel_u")?;
    writeln!(w, "property ushort pixel_v")?;
    writeln!(w, "end_header")?;

    for p in &cloud.points {
        let (u, v) = p.pixel.unwrap_or((u16::MAX, u16::MAX));
        match format {
            PlyFormat::BinaryLittleEndian => {
                for c in p.position {
                    w.write_all(&(c as f32).to_le_bytes())?;
                }
                w.write_all(&(p.probability as f32).to_le_bytes())?;
                w.write_all(&u.to_le_bytes())?;
                w.write_all(&v.to_le_bytes())?;
            }
            PlyFormat::Ascii => {
                writeln!(
                    w,
                    "{} {} {} {} {u} {v}",
                    p.position[0] as f32,
                    p.position[1] as f32,
                    p.position[2] as f32,
                    p.probability as f32
                )?;
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarType {
    F32,
    F64,
    U8,
    I8,
    U16,
    I16,
    U32,
    I32,
}

impl ScalarType {
    fn parse(token: &str) -> Result<Self> {
        Ok(match token {
            "float" | "float32" => ScalarType::F32,
            "double" | "float64" => ScalarType::F64,
            "uchar" | "uint8" => ScalarType::U8,
            "char" | "int8" => ScalarType::I8,
            "ushort" | "uint16" => ScalarType::U16,
            "short" | "int16" => ScalarType::I16,
            "uint" | "uint32" => ScalarType::U32,
            "int" | "int32" => ScalarType::I32,
            other => return Err(Error::parse(format!("unsupported PLY type `{other}`"))),
        })
    }

    fn size(self) -> usize {
        match self {
            ScalarType::U8 | ScalarType::I8 => 1,
            ScalarType::U16 | ScalarType::I16 => 2,
            ScalarType::F32 | ScalarType::U32 | ScalarType::I32 => 4,
            ScalarType::F64 => 8,
        }
    }

    fn decode(self, bytes: &[u8]) -> f64 {
        match self {
            ScalarType::F32 => f32::from_le_bytes(bytes.try_into().unwrap()) as f64,
            ScalarType::F64 => f64::from_le_bytes(bytes.try_into().unwrap()),
            ScalarType::U8 => bytes[0] as f64,
            ScalarType::I8 => bytes[0] as i8 as f64,
            ScalarType::U16 => u16::from_le_bytes(bytes.try_into().unwrap()) as f64,
            ScalarType::I16 => i16::from_le_bytes(bytes.try_into().unwrap()) as f64,
            ScalarType::U32 => u32::from_le_bytes(bytes.try_into().unwrap()) as f64,
            ScalarType::I32 => i32::from_le_bytes(bytes.try_into().unwrap()) as f64,
        }
    }
}

/// Read a PLY point cloud (ASCII or binary little-endian).
///
/// Unknown vertex properties are skipped. A file without a `probability`
/// property is accepted: probabilities default to 1.0 and the metadata
/// flag `missing_probability` is set, which lets conventional clouds enter
/// the pipeline.
pub fn read_ply(path: &Path) -> Result<ProbabilisticPointCloud> {
    let mut r = BufReader::new(File::open(path)?);
    read_ply_from(&mut r)
}

pub fn read_ply_from<R: BufRead>(r: &mut R) -> Result<ProbabilisticPointCloud> {
    let mut line = String::new();
    let mut read_line = |r: &mut R| -> Result<String> {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(Error::parse("unexpected end of PLY header"));
        }
        Ok(line.trim_end().to_string())
    };

    if read_line(r)? != "ply" {
        return Err(Error::parse("not a PLY file (missing `ply` magic)"));
    }

    let mut binary = None;
    let mut vertex_count: Option<usize> = None;
    let mut properties: Vec<(String, ScalarType)> = Vec::new();
    let mut in_vertex_element = false;
    let mut metadata = CloudMetadata::default();

    loop {
        let l = read_line(r)?;
        let tokens: Vec<&str> = l.split_whitespace().collect();
        match tokens.first().copied() {
            Some("format") => {
                binary = Some(match tokens.get(1).copied() {
                    Some("binary_little_endian") => true,
                    Some("ascii") => false,
                    other => {
                        return Err(Error::parse(format!(
                            "unsupported PLY format {other:?}"
                        )))
                    }
                });
            }
            Some("comment") => match (tokens.get(1).copied(), tokens.get(2)) {
                (Some("seed"), Some(v)) => metadata.seed = v.parse().ok(),
                (Some("bin_width_s"), Some(v)) => metadata.bin_width = v.parse().ok(),
                (Some("num_bins"), Some(v)) => metadata.num_bins = v.parse().ok(),
                (Some("sbr"), Some(v)) => {
                    if let Some((s, b)) = v.split_once(':') {
                        if let (Ok(s), Ok(b)) = (s.parse(), b.parse()) {
                            metadata.sbr = Some((s, b));
                        }
                    }
                }
                _ => {}
            },
            Some("element") => {
                let name = tokens.get(1).copied().unwrap_or("");
                let count: usize = tokens
                    .get(2)
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| Error::parse("malformed element line"))?;
                if name == "vertex" {
                    if vertex_count.is_some() {
                        return Err(Error::parse("duplicate vertex element"));
                    }
                    vertex_count = Some(count);
                    in_vertex_element = true;
                } else {
                    if vertex_count.is_none() && count > 0 {
                        return Err(Error::parse(format!(
                            "cannot skip element `{name}` that precedes vertices"
                        )));
                    }
                    in_vertex_element = false;
                }
            }
            Some("property") => {
                if !in_vertex_element {
                    continue;
                }
                if tokens.get(1).copied() == Some("list") {
                    return Err(Error::parse("list properties on vertices are unsupported"));
                }
                let ty = ScalarType::parse(
                    tokens
                        .get(1)
                        .copied()
                        .ok_or_else(|| Error::parse("malformed property line"))?,
                )?;
                let name = tokens
                    .get(2)
                    .copied()
                    .ok_or_else(|| Error::parse("malformed property line"))?;
                properties.push((name.to_string(), ty));
            }
            Some("end_header") => break,
            Some("obj_info") | None => {}
            Some(other) => {
                return Err(Error::parse(format!("unexpected header line `{other}`")));
            }
        }
    }

    let binary = binary.ok_or_else(|| Error::parse("PLY header has no format line"))?;
    let vertex_count = vertex_count.ok_or_else(|| Error::parse("PLY has no vertex element"))?;

    let find = |name: &str| properties.iter().position(|(n, _)| n == name);
    let ix = find("x").ok_or_else(|| Error::parse("vertex element is missing `x`"))?;
    let iy = find("y").ok_or_else(|| Error::parse("vertex element is missing `y`"))?;
    let iz = find("z").ok_or_else(|| Error::parse("vertex element is missing `z`"))?;
    let ipr = find("probability");
    let ipu = find("pixel_u");
    let ipv = find("pixel_v");
    metadata.missing_probability = ipr.is_none();

    let mut points = Vec::with_capacity(vertex_count);
    let mut fields = vec![0.0f64; properties.len()];
    let stride: usize = properties.iter().map(|(_, t)| t.size()).sum();
    let mut buf = vec![0u8; stride];
    let mut text = String::new();

    for row in 0..vertex_count {
        if binary {
            r.read_exact(&mut buf)
                .map_err(|_| Error::parse(format!("truncated vertex data at row {row}")))?;
            let mut offset = 0;
            for (slot, (_, ty)) in fields.iter_mut().zip(&properties) {
                *slot = ty.decode(&buf[offset..offset + ty.size()]);
                offset += ty.size();
            }
        } else {
            text.clear();
            if r.read_line(&mut text)? == 0 {
                return Err(Error::parse(format!("truncated vertex data at row {row}")));
            }
            let mut it = text.split_whitespace();
            for slot in fields.iter_mut() {
                *slot = it
                    .next()
                    .ok_or_else(|| Error::parse(format!("short vertex row {row}")))?
                    .parse()
                    .map_err(|_| Error::parse(format!("bad number in vertex row {row}")))?;
            }
        }

        let position = [fields[ix], fields[iy], fields[iz]];
        if position.iter().any(|c| !c.is_finite()) {
            return Err(Error::parse(format!("non-finite position in row {row}")));
        }
        let probability = match ipr {
            Some(i) => fields[i],
            None => 1.0,
        };
        if !(probability > 0.0 && probability <= 1.0) {
            return Err(Error::parse(format!(
                "probability {probability} outside (0, 1] in row {row}"
            )));
        }
        let pixel = match (ipu, ipv) {
            (Some(iu), Some(iv)) => {
                let (u, v) = (fields[iu], fields[iv]);
                if u == u16::MAX as f64 && v == u16::MAX as f64 {
                    None
                } else {
                    Some((u as u16, v as u16))
                }
            }
            _ => None,
        };
        points.push(ProbabilisticPoint { position, probability, pixel });
    }

    Ok(ProbabilisticPointCloud { points, metadata })
}

// ══════════════════════════════════════════════════════════════════════
// Tests
// ══════════════════════════════════════════════════════════════════════

#[cfg(test)]
mod tests {
    use super::*;
    use crate::histogram::PixelEstimate;
    use std::io::Cursor;

    fn sample_cloud() -> ProbabilisticPointCloud {
        ProbabilisticPointCloud {
            points: vec![
                ProbabilisticPoint {
                    position: [0.5, -0.25, 2.0],
                    probability: 0.75,
                    pixel: Some((3, 4)),
                },
                ProbabilisticPoint {
                    position: [-1.5, 0.125, 6.5],
                    probability: 0.031_25,
                    pixel: Some((10, 0)),
                },
            ],
            metadata: CloudMetadata {
                seed: Some(7),
                bin_width: Some(9.7e-11),
                num_bins: Some(1024),
                sbr: Some((5.0, 50.0)),
                missing_probability: false,
            },
        }
    }

    fn estimate(depth: f64, probability: f64, valid: bool) -> PixelEstimate {
        PixelEstimate { depth, peak_bin: 0, peak_height: 1.0, probability, valid }
    }

    #[test]
    fn build_ppc_emits_one_point_per_valid_pixel() {
        let intr = CameraIntrinsics::with_defaults(3, 2);
        let estimates = vec![
            estimate(2.0, 0.5, true),
            estimate(0.0, 0.5, false),
            estimate(3.0, 0.25, true),
            estimate(1.0, 0.9, false),
            estimate(4.0, 1.0, true),
            estimate(0.0, 0.0, false),
        ];
        let cloud = build_ppc(&estimates, &intr, CloudMetadata::default()).unwrap();
        assert_eq!(cloud.len(), 3);
        // Row-major order and bit-exact probability pass-through.
        assert_eq!(cloud.points[0].pixel, Some((0, 0)));
        assert_eq!(cloud.points[0].probability, 0.5);
        assert_eq!(cloud.points[1].pixel, Some((2, 0)));
        assert_eq!(cloud.points[2].pixel, Some((1, 1)));
        assert_eq!(cloud.points[2].probability, 1.0);
        // z equals the estimated depth.
        assert_eq!(cloud.points[0].position[2], 2.0);
    }

    #[test]
    fn all_invalid_estimates_give_an_empty_cloud() {
        let intr = CameraIntrinsics::with_defaults(2, 2);
        let estimates = vec![estimate(1.0, 0.5, false); 4];
        let cloud = build_ppc(&estimates, &intr, CloudMetadata::default()).unwrap();
        assert!(cloud.is_empty());
    }

    #[test]
    fn unprojection_is_consistent_with_projection() {
        let intr = CameraIntrinsics::with_defaults(64, 48);
        let mut estimates = vec![estimate(0.0, 0.5, false); 64 * 48];
        estimates[17 * 64 + 42] = estimate(3.25, 0.5, true);
        let cloud = build_ppc(&estimates, &intr, CloudMetadata::default()).unwrap();
        let (u, v, _) = intr.project(cloud.points[0].position).unwrap();
        assert!((u - 42.0).abs() < 0.5 && (v - 17.0).abs() < 0.5);
    }

    #[test]
    fn wrong_grid_size_is_rejected() {
        let intr = CameraIntrinsics::with_defaults(2, 2);
        assert!(build_ppc(&[estimate(1.0, 0.5, true)], &intr, CloudMetadata::default()).is_err());
    }

    #[test]
    fn binary_roundtrip_preserves_everything_at_f32() {
        let cloud = sample_cloud();
        let mut buf = Vec::new();
        write_ply_to(&cloud, &mut buf, PlyFormat::BinaryLittleEndian).unwrap();
        let back = read_ply_from(&mut Cursor::new(&buf)).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in cloud.points.iter().zip(&back.points) {
            for k in 0..3 {
                assert_eq!(a.position[k] as f32, b.position[k] as f32);
            }
            assert_eq!(a.probability as f32, b.probability as f32);
            assert_eq!(a.pixel, b.pixel);
        }
        assert_eq!(back.metadata.seed, Some(7));
        assert_eq!(back.metadata.num_bins, Some(1024));
        assert_eq!(back.metadata.sbr, Some((5.0, 50.0)));
        assert!(!back.metadata.missing_probability);
    }

    #[test]
    fn ascii_roundtrip_matches_binary_values() {
        let cloud = sample_cloud();
        let mut ascii = Vec::new();
        write_ply_to(&cloud, &mut ascii, PlyFormat::Ascii).unwrap();
        let back = read_ply_from(&mut Cursor::new(&ascii)).unwrap();
        for (a, b) in cloud.points.iter().zip(&back.points) {
            for k in 0..3 {
                assert_eq!(a.position[k] as f32, b.position[k] as f32);
            }
            assert_eq!(a.probability as f32, b.probability as f32);
            assert_eq!(a.pixel, b.pixel);
        }
    }

    #[test]
    fn empty_cloud_roundtrips() {
        let cloud = ProbabilisticPointCloud::default();
        let mut buf = Vec::new();
        write_ply_to(&cloud, &mut buf, PlyFormat::BinaryLittleEndian).unwrap();
        let back = read_ply_from(&mut Cursor::new(&buf)).unwrap();
        assert!(back.is_empty());
    }

    #[test]
    fn conventional_ply_defaults_probability_to_one() {
        let text = "\
ply
format ascii 1.0
element vertex 2
property float x
property float y
property float z
end_header
1 2 3
4 5 6
";
        let cloud = read_ply_from(&mut Cursor::new(text.as_bytes())).unwrap();
        assert!(cloud.metadata.missing_probability);
        assert!(cloud.points.iter().all(|p| p.probability == 1.0));
        assert!(cloud.points.iter().all(|p| p.pixel.is_none()));
        assert_eq!(cloud.points[1].position, [4.0, 5.0, 6.0]);
    }

    #[test]
    fn unknown_properties_are_skipped() {
        let text = "\
ply
format ascii 1.0
element vertex 1
property float x
property float y
property float z
property uchar red
property float probability
end_header
1 2 3 255 0.5
";
        let cloud = read_ply_from(&mut Cursor::new(text.as_bytes())).unwrap();
        assert_eq!(cloud.points[0].probability, 0.5);
    }

    #[test]
    fn malformed_headers_are_rejected() {
        for text in [
            "not a ply\n",
            "ply\nformat binary_big_endian 1.0\nend_header\n",
            "ply\nformat ascii 1.0\nend_header\n", // no vertex element
            "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nend_header\n1 2\n",
        ] {
            assert!(
                read_ply_from(&mut Cursor::new(text.as_bytes())).is_err(),
                "accepted: {text}"
            );
        }
    }

    #[test]
    fn out_of_range_probability_is_rejected() {
        let text = "\
ply
format ascii 1.0
element vertex 1
property float x
property float y
property float z
property float probability
end_header
1 2 3 1.5
";
        assert!(read_ply_from(&mut Cursor::new(text.as_bytes())).is_err());
    }
}
