//! Binary PLY reader/writer for the standard 3DGS splat layout.
//!
//! The on-disk layout matches what gsplat-style trainers export: vertex
//! properties `x y z [nx ny nz] f_dc_0..2 f_rest_* opacity scale_0..2
//! rot_0..3`, all 32-bit little-endian floats, opacity as a pre-sigmoid
//! logit, scales in log space, and the quaternion stored (w, x, y, z).

use super::{sh_coeff_count, Gaussian3D, GaussianScene, SceneError};
use glam::{Quat, Vec3};
use std::fmt::Write as _;

#[derive(Clone, Copy, PartialEq, Eq)]
enum ScalarType {
    F32,
    F64,
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
}

impl ScalarType {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "float" | "float32" => Some(Self::F32),
            "double" | "float64" => Some(Self::F64),
            "char" | "int8" => Some(Self::I8),
            "uchar" | "uint8" => Some(Self::U8),
            "short" | "int16" => Some(Self::I16),
            "ushort" | "uint16" => Some(Self::U16),
            "int" | "int32" => Some(Self::I32),
            "uint" | "uint32" => Some(Self::U32),
            _ => None,
        }
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::F32 | Self::I32 | Self::U32 => 4,
            Self::F64 => 8,
        }
    }
}

struct Header {
    vertex_count: usize,
    /// (name, type, byte offset within one vertex record)
    properties: Vec<(String, ScalarType, usize)>,
    stride: usize,
    body_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header, SceneError> {
    const END: &[u8] = b"end_header\n";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| SceneError::MalformedHeader("no end_header".into()))?;
    let body_offset = end + END.len();
    let text = std::str::from_utf8(&bytes[..end])
        .map_err(|_| SceneError::MalformedHeader("header is not utf-8".into()))?;

    let mut lines = text.lines().map(str::trim);
    if lines.next() != Some("ply") {
        return Err(SceneError::MalformedHeader("missing ply magic".into()));
    }

    let mut format_seen = false;
    let mut vertex_count = None;
    let mut in_vertex = false;
    let mut properties = Vec::new();
    let mut stride = 0usize;

    for line in lines {
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("comment") | Some("obj_info") | None => {}
            Some("format") => {
                match tok.next() {
                    Some("binary_little_endian") => {}
                    Some(other @ ("ascii" | "binary_big_endian")) => {
                        return Err(SceneError::UnsupportedFormat(other.into()));
                    }
                    other => {
                        return Err(SceneError::MalformedHeader(format!(
                            "bad format line: {other:?}"
                        )));
                    }
                }
                format_seen = true;
            }
            Some("element") => {
                let name = tok.next().unwrap_or("");
                let count: usize = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| SceneError::MalformedHeader("bad element count".into()))?;
                in_vertex = name == "vertex";
                if in_vertex {
                    if vertex_count.is_some() {
                        return Err(SceneError::MalformedHeader(
                            "duplicate vertex element".into(),
                        ));
                    }
                    vertex_count = Some(count);
                } else if count > 0 {
                    return Err(SceneError::MalformedHeader(format!(
                        "unsupported non-empty element {name:?}"
                    )));
                }
            }
            Some("property") => {
                if !in_vertex {
                    continue;
                }
                let ty_tok = tok
                    .next()
                    .ok_or_else(|| SceneError::MalformedHeader("bad property".into()))?;
                if ty_tok == "list" {
                    return Err(SceneError::MalformedHeader(
                        "list properties unsupported on vertex".into(),
                    ));
                }
                let ty = ScalarType::parse(ty_tok).ok_or_else(|| {
                    SceneError::MalformedHeader(format!("unknown property type {ty_tok:?}"))
                })?;
                let name = tok
                    .next()
                    .ok_or_else(|| SceneError::MalformedHeader("unnamed property".into()))?;
                properties.push((name.to_string(), ty, stride));
                stride += ty.size();
            }
            Some(other) => {
                return Err(SceneError::MalformedHeader(format!(
                    "unknown directive {other:?}"
                )));
            }
        }
    }

    if !format_seen {
        return Err(SceneError::MalformedHeader("missing format line".into()));
    }
    let vertex_count =
        vertex_count.ok_or_else(|| SceneError::MalformedHeader("missing vertex element".into()))?;
    Ok(Header {
        vertex_count,
        properties,
        stride,
        body_offset,
    })
}

fn find_f32(header: &Header, name: &str) -> Result<usize, SceneError> {
    let (_, ty, off) = header
        .properties
        .iter()
        .find(|(n, _, _)| n == name)
        .ok_or_else(|| SceneError::MalformedHeader(format!("missing property {name}")))?;
    if *ty != ScalarType::F32 {
        return Err(SceneError::MalformedHeader(format!(
            "property {name} is not float"
        )));
    }
    Ok(*off)
}

fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let z = x.exp();
        z / (1.0 + z)
    }
}

/// Loads a binary little-endian 3DGS PLY. Gaussian order equals file order;
/// the SH degree is inferred from the `f_rest_*` property count.
pub fn load_ply(bytes: &[u8]) -> Result<GaussianScene, SceneError> {
    let header = parse_header(bytes)?;

    let known = |name: &str| -> bool {
        matches!(name, "x" | "y" | "z" | "nx" | "ny" | "nz" | "opacity")
            || name.starts_with("f_dc_")
            || name.starts_with("f_rest_")
            || name.starts_with("scale_")
            || name.starts_with("rot_")
    };
    for (name, _, _) in &header.properties {
        if !known(name) {
            log::warn!("ignoring unknown PLY property {name:?}");
        }
    }

    let rest_count = header
        .properties
        .iter()
        .filter(|(n, _, _)| n.starts_with("f_rest_"))
        .count();
    let sh_degree = (0u8..=3)
        .find(|d| 3 * (sh_coeff_count(*d) - 1) == rest_count)
        .ok_or_else(|| {
            SceneError::MalformedHeader(format!("f_rest count {rest_count} matches no degree 0-3"))
        })?;

    let pos = [find_f32(&header, "x")?, find_f32(&header, "y")?, find_f32(&header, "z")?];
    let dc = [
        find_f32(&header, "f_dc_0")?,
        find_f32(&header, "f_dc_1")?,
        find_f32(&header, "f_dc_2")?,
    ];
    let rest: Vec<usize> = (0..rest_count)
        .map(|i| find_f32(&header, &format!("f_rest_{i}")))
        .collect::<Result<_, _>>()?;
    let opacity_off = find_f32(&header, "opacity")?;
    let scale = [
        find_f32(&header, "scale_0")?,
        find_f32(&header, "scale_1")?,
        find_f32(&header, "scale_2")?,
    ];
    let rot = [
        find_f32(&header, "rot_0")?,
        find_f32(&header, "rot_1")?,
        find_f32(&header, "rot_2")?,
        find_f32(&header, "rot_3")?,
    ];

    let need = header.body_offset + header.vertex_count * header.stride;
    if bytes.len() < need {
        return Err(SceneError::TruncatedBody {
            need,
            have: bytes.len(),
        });
    }
    let body = &bytes[header.body_offset..];

    let mut gaussians = Vec::with_capacity(header.vertex_count);
    for v in 0..header.vertex_count {
        let base = v * header.stride;
        let at = |off: usize| -> f32 {
            f32::from_le_bytes(body[base + off..base + off + 4].try_into().unwrap())
        };
        let finite = |x: f32, field: &'static str| -> Result<f32, SceneError> {
            if x.is_finite() {
                Ok(x)
            } else {
                Err(SceneError::NonFiniteValue(field))
            }
        };

        let mean = Vec3::new(
            finite(at(pos[0]), "x")?,
            finite(at(pos[1]), "y")?,
            finite(at(pos[2]), "z")?,
        );
        // scale floor keeps exp underflow from producing a zero axis
        let scale = Vec3::new(
            finite(at(scale[0]), "scale_0")?.exp().max(1e-20),
            finite(at(scale[1]), "scale_1")?.exp().max(1e-20),
            finite(at(scale[2]), "scale_2")?.exp().max(1e-20),
        );
        let opacity = sigmoid(finite(at(opacity_off), "opacity")?);
        let (w, x, y, z) = (
            finite(at(rot[0]), "rot_0")?,
            finite(at(rot[1]), "rot_1")?,
            finite(at(rot[2]), "rot_2")?,
            finite(at(rot[3]), "rot_3")?,
        );
        let q = Quat::from_xyzw(x, y, z, w);
        if q.length() < 1e-8 {
            return Err(SceneError::NonFiniteValue("rot (zero quaternion)"));
        }
        let rotation = q.normalize();

        let mut sh = Vec::with_capacity(3 + rest_count);
        for off in dc {
            sh.push(finite(at(off), "f_dc")?);
        }
        for &off in &rest {
            sh.push(finite(at(off), "f_rest")?);
        }

        gaussians.push(Gaussian3D {
            mean,
            rotation,
            scale,
            opacity,
            sh,
        });
    }

    GaussianScene::new(gaussians, sh_degree)
}

fn logit(o: f32) -> f32 {
    // sigmoid(±15) is within 4e-7 of the clamp ends, under the 1e-6
    // round-trip tolerance.
    let o = o.clamp(sigmoid(-15.0), sigmoid(15.0));
    (o / (1.0 - o)).ln()
}

/// Serializes a scene in the layout [`load_ply`] reads, including the
/// conventional zeroed normals.
pub fn save_ply(scene: &GaussianScene) -> Vec<u8> {
    let rest_count = 3 * (sh_coeff_count(scene.sh_degree()) - 1);

    let mut header = String::new();
    header.push_str("ply\nformat binary_little_endian 1.0\n");
    let _ = writeln!(header, "element vertex {}", scene.len());
    for name in ["x", "y", "z", "nx", "ny", "nz"] {
        let _ = writeln!(header, "property float {name}");
    }
    for i in 0..3 {
        let _ = writeln!(header, "property float f_dc_{i}");
    }
    for i in 0..rest_count {
        let _ = writeln!(header, "property float f_rest_{i}");
    }
    header.push_str("property float opacity\n");
    for i in 0..3 {
        let _ = writeln!(header, "property float scale_{i}");
    }
    for i in 0..4 {
        let _ = writeln!(header, "property float rot_{i}");
    }
    header.push_str("end_header\n");

    let stride = (6 + 3 + rest_count + 1 + 3 + 4) * 4;
    let mut out = Vec::with_capacity(header.len() + scene.len() * stride);
    out.extend_from_slice(header.as_bytes());

    let mut push = |v: f32| out.extend_from_slice(&v.to_le_bytes());
    for g in scene.gaussians() {
        push(g.mean.x);
        push(g.mean.y);
        push(g.mean.z);
        for _ in 0..3 {
            push(0.0); // normals, unused
        }
        for c in 0..3 + rest_count {
            push(g.sh[c]);
        }
        push(logit(g.opacity));
        push(g.scale.x.ln());
        push(g.scale.y.ln());
        push(g.scale.z.ln());
        let q = g.rotation.normalize();
        push(q.w);
        push(q.x);
        push(q.y);
        push(q.z);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_vertex_ply(opacity_logit: f32, log_scale: [f32; 3]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(
            b"ply\nformat binary_little_endian 1.0\nelement vertex 1\n\
              property float x\nproperty float y\nproperty float z\n\
              property float f_dc_0\nproperty float f_dc_1\nproperty float f_dc_2\n\
              property float opacity\n\
              property float scale_0\nproperty float scale_1\nproperty float scale_2\n\
              property float rot_0\nproperty float rot_1\nproperty float rot_2\nproperty float rot_3\n\
              end_header\n",
        );
        let fields = [
            0.0,
            0.0,
            0.0,
            0.1,
            0.2,
            0.3,
            opacity_logit,
            log_scale[0],
            log_scale[1],
            log_scale[2],
            1.0,
            0.0,
            0.0,
            0.0,
        ];
        for f in fields {
            out.extend_from_slice(&f32::to_le_bytes(f));
        }
        out
    }

    #[test]
    fn zero_logit_loads_as_half_opacity() {
        let scene = load_ply(&one_vertex_ply(0.0, [0.0; 3])).unwrap();
        assert_eq!(scene.gaussians()[0].opacity, 0.5);
        assert_eq!(scene.sh_degree(), 0);
    }

    #[test]
    fn zero_log_scale_loads_as_unit_scale() {
        let scene = load_ply(&one_vertex_ply(0.0, [0.0; 3])).unwrap();
        assert_eq!(scene.gaussians()[0].scale, Vec3::ONE);
    }

    #[test]
    fn truncated_body_is_reported() {
        let mut bytes = one_vertex_ply(0.0, [0.0; 3]);
        bytes.truncate(bytes.len() - 8);
        assert!(matches!(
            load_ply(&bytes),
            Err(SceneError::TruncatedBody { .. })
        ));
    }

    #[test]
    fn ascii_format_is_unsupported() {
        let bytes = b"ply\nformat ascii 1.0\nelement vertex 0\nend_header\n";
        assert!(matches!(
            load_ply(bytes),
            Err(SceneError::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn missing_property_is_malformed() {
        let bytes = b"ply\nformat binary_little_endian 1.0\nelement vertex 0\nproperty float x\nend_header\n";
        assert!(matches!(
            load_ply(bytes),
            Err(SceneError::MalformedHeader(_))
        ));
    }

    #[test]
    fn nan_field_is_rejected() {
        let bytes = one_vertex_ply(f32::NAN, [0.0; 3]);
        assert!(matches!(
            load_ply(&bytes),
            Err(SceneError::NonFiniteValue(_))
        ));
    }
}
