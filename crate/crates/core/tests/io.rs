mod common;

use std::path::Path;

use pointembed::geometry::NormalizationTransform;
use pointembed::io::{parse_ply, parse_xyz, ply_bytes, read_cloud, write_cloud, xyz_string, CloudMeta};
use pointembed::{Error, PointCloud};

fn f32_cloud(seed: u64, n: usize) -> PointCloud {
    // Coordinates already representable in float32, so PLY must keep them.
    let raw = common::random_points(&mut common::rng(seed), n);
    PointCloud::new(raw.iter().map(|p| p.map(|v| v as f32 as f64)).collect()).unwrap()
}

fn parse_error_line(e: Error) -> usize {
    match e {
        Error::Parse { line, .. } => line,
        other => panic!("expected a parse error, got {other}"),
    }
}

#[test]
fn xyz_two_points() {
    let (c, meta) = parse_xyz(b"0 0 0\n1 0 0\n", Path::new("t.xyz")).unwrap();
    assert_eq!(c.points(), &[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
    assert_eq!(meta, CloudMeta::default());
}

#[test]
fn xyz_comments_and_blank_lines_are_skipped() {
    let text = "# header\n0 1 2\n\n  3\t4 5  \n# trailing\n# more\n";
    let (c, _) = parse_xyz(text.as_bytes(), Path::new("t.xyz")).unwrap();
    assert_eq!(c.points(), &[[0.0, 1.0, 2.0], [3.0, 4.0, 5.0]]);
}

#[test]
fn xyz_round_trip_within_nine_digits() {
    let c = PointCloud::new(common::random_points(&mut common::rng(1), 300)).unwrap();
    let (back, _) = parse_xyz(
        xyz_string(&c, &CloudMeta::default()).as_bytes(),
        Path::new("t.xyz"),
    )
    .unwrap();
    for (a, b) in c.points().iter().zip(back.points()) {
        for k in 0..3 {
            assert!(
                (a[k] - b[k]).abs() <= 1e-6 * a[k].abs().max(1e-300),
                "{a:?} vs {b:?}"
            );
        }
    }
}

#[test]
fn xyz_errors_carry_line_numbers() {
    let p = Path::new("bad.xyz");
    assert_eq!(parse_error_line(parse_xyz(b"0 0 0\n1 0\n", p).unwrap_err()), 2);
    assert_eq!(
        parse_error_line(parse_xyz(b"# c\n0 0 0\n0 0 zz\n", p).unwrap_err()),
        3
    );
    assert_eq!(parse_error_line(parse_xyz(b"0 0 0 0\n", p).unwrap_err()), 1);
    let msg = parse_xyz(b"0 0 0\n1 0\n", p).unwrap_err().to_string();
    assert!(msg.starts_with("bad.xyz:2:"), "{msg}");
}

#[test]
fn empty_clouds_are_invalid_input() {
    for bytes in [&b""[..], b"# only comments\n\n"] {
        assert!(matches!(
            parse_xyz(bytes, Path::new("e.xyz")),
            Err(Error::InvalidInput(_))
        ));
    }
    let header = b"ply\nformat binary_little_endian 1.0\nelement vertex 0\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
    assert!(matches!(
        parse_ply(header, Path::new("e.ply")),
        Err(Error::InvalidInput(_))
    ));
}

#[test]
fn ply_round_trip_is_bit_exact() {
    let c = f32_cloud(2, 512);
    let bytes = ply_bytes(&c, &CloudMeta::default());
    let (back, _) = parse_ply(&bytes, Path::new("t.ply")).unwrap();
    assert_eq!(back.len(), 512);
    for (a, b) in c.points().iter().zip(back.points()) {
        for k in 0..3 {
            assert_eq!((a[k] as f32).to_bits(), (b[k] as f32).to_bits());
        }
    }
}

#[test]
fn ply_extra_properties_are_ignored() {
    let mut bytes = b"ply\nformat binary_little_endian 1.0\ncomment made elsewhere\nelement vertex 2\nproperty uchar red\nproperty float x\nproperty double w\nproperty float y\nproperty float z\nend_header\n".to_vec();
    for (i, p) in [[1.0f32, 2.0, 3.0], [-4.0, 5.5, 0.25]].iter().enumerate() {
        bytes.push(i as u8);
        bytes.extend(p[0].to_le_bytes());
        bytes.extend(7.0f64.to_le_bytes());
        bytes.extend(p[1].to_le_bytes());
        bytes.extend(p[2].to_le_bytes());
    }
    let (c, _) = parse_ply(&bytes, Path::new("x.ply")).unwrap();
    assert_eq!(c.points(), &[[1.0, 2.0, 3.0], [-4.0, 5.5, 0.25]]);
}

#[test]
fn ply_header_errors_are_reported() {
    let p = Path::new("h.ply");
    let ascii = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n";
    assert_eq!(parse_error_line(parse_ply(ascii, p).unwrap_err()), 2);
    let missing_z = b"ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty float x\nproperty float y\nend_header\n\0\0\0\0\0\0\0\0";
    assert!(matches!(parse_ply(missing_z, p), Err(Error::Parse { .. })));
    let truncated = b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n\0\0\0\0";
    assert!(parse_ply(truncated, p).is_err());
    assert!(matches!(
        parse_ply(b"not a ply", p),
        Err(Error::Parse { line: 1, .. })
    ));
}

#[test]
fn metadata_survives_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let c = f32_cloud(3, 40);
    let meta = CloudMeta {
        pad: 3,
        transform: Some(NormalizationTransform {
            center: [0.125, -2.5, 1e-3],
            scale: std::f64::consts::FRAC_1_SQRT_2,
        }),
    };
    for name in ["m.xyz", "m.ply"] {
        let path = dir.path().join(name);
        write_cloud(&path, &c, &meta).unwrap();
        let (back, got) = read_cloud(&path).unwrap();
        assert_eq!(got, meta, "{name}");
        assert_eq!(back.len(), c.len());
    }
}

#[test]
fn unknown_extension_reads_as_xyz() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cloud.pts");
    std::fs::write(&path, "1 2 3\n").unwrap();
    let (c, _) = read_cloud(&path).unwrap();
    assert_eq!(c.points(), &[[1.0, 2.0, 3.0]]);
}
