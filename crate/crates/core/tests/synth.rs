use neuvox::error::Error;
use neuvox::render::Camera;
use neuvox::synth::{look_at_origin, synth_dataset, Shape, SceneSpec, SynthOptions};

const SIZE: usize = 64;

fn camera(spec: &SceneSpec, eye: [f64; 3]) -> Camera {
    Camera {
        pose: look_at_origin(eye),
        focal: 0.5 * SIZE as f64 / (0.5 * spec.camera_angle_x).tan(),
        width: SIZE,
        height: SIZE,
    }
}

#[test]
fn empty_scene_renders_the_background() {
    for (bg, v) in [("black", 0.0), ("white", 1.0)] {
        let spec = SceneSpec::parse(&format!(r#"{{"bbox": [-1, -1, -1, 1, 1, 1], "background": "{bg}"}}"#)).unwrap();
        let ds = synth_dataset(&spec, &SynthOptions { cameras: 3, width: 8, height: 8, seed: 0 }).unwrap();
        for f in ds.train.iter().chain(&ds.test) {
            assert!(f.image.pixels.iter().all(|&p| p == v), "{bg}");
        }
    }
}

#[test]
fn opaque_sphere_shows_its_albedo_at_the_image_center() {
    let spec = SceneSpec::parse(
        r#"{"bbox": [-1, -1, -1, 1, 1, 1], "primitives": [
            {"kind": "sphere", "radius": 0.5, "density": 200, "albedo": [0.9, 0.4, 0.1]}]}"#,
    )
    .unwrap();
    let (near, far) = spec.near_far().unwrap();
    for eye in [[4.0, 0.0, 0.0], [0.0, -4.0, 0.0], [2.0, 2.0, 2.0f64.sqrt() * 2.0]] {
        let cam = camera(&spec, eye);
        let img = spec.render_image(&cam, 0.3, near, far).unwrap();
        // The four central pixels straddle the optical axis, which passes through the center.
        for (r, c) in [(31, 31), (31, 32), (32, 31), (32, 32)] {
            let px = img.pixel(r, c);
            for (got, want) in px.iter().zip([0.9, 0.4, 0.1]) {
                assert!((*got as f64 - want).abs() < 1e-3, "{eye:?}: {px:?}");
            }
        }
        // A corner ray misses the sphere entirely.
        assert_eq!(img.pixel(0, 0), [0.0; 3]);
    }
}

#[test]
fn sphere_edge_matches_analytic_occlusion() {
    let spec = SceneSpec::parse(
        r#"{"bbox": [-1, -1, -1, 1, 1, 1], "primitives": [
            {"kind": "sphere", "radius": 0.5, "density": 200, "albedo": [1, 1, 1]}]}"#,
    )
    .unwrap();
    let (near, far) = spec.near_far().unwrap();
    let cam = camera(&spec, [0.0, -4.0, 0.0]);
    let img = spec.render_image(&cam, 0.0, near, far).unwrap();
    let eye = [0.0, -4.0, 0.0];
    for r in 0..SIZE {
        for c in 0..SIZE {
            let d = cam.pixel_direction(r, c);
            // Distance from the sphere center to the ray line.
            let along = -(eye[0] * d[0] + eye[1] * d[1] + eye[2] * d[2]);
            let closest = [eye[0] + along * d[0], eye[1] + along * d[1], eye[2] + along * d[2]];
            let miss = (closest.iter().map(|v| v * v).sum::<f64>()).sqrt();
            let v = img.pixel(r, c)[0];
            if miss < 0.48 {
                assert!(v > 0.99, "({r}, {c}) miss {miss}: {v}");
            } else if miss > 0.5 {
                assert_eq!(v, 0.0, "({r}, {c}) miss {miss}");
            }
        }
    }
}

fn centroid(img: &neuvox::raster::Image) -> [f64; 2] {
    let (mut sr, mut sc, mut n) = (0.0, 0.0, 0.0);
    for r in 0..img.height {
        for c in 0..img.width {
            let w = img.pixel(r, c)[0] as f64;
            sr += w * (r as f64 + 0.5);
            sc += w * (c as f64 + 0.5);
            n += w;
        }
    }
    [sr / n, sc / n]
}

#[test]
fn moving_sphere_centroid_follows_projected_trajectory() {
    let spec = SceneSpec::parse(
        r#"{"bbox": [-1.2, -1, -1, 1.2, 1, 1], "primitives": [
            {"kind": "sphere", "radius": 0.3, "density": 200, "albedo": [1, 1, 1],
             "trajectory": {"center": [-0.4, 0, 0.1], "velocity": [0.8, 0, 0]}}]}"#,
    )
    .unwrap();
    let (near, far) = spec.near_far().unwrap();
    // Looking along +y: world x maps to image columns, world z to image rows (up).
    let eye = [0.0, -4.0, 0.0];
    let cam = camera(&spec, eye);
    let half = SIZE as f64 / 2.0;
    for t in [0.0, 1.0] {
        let img = spec.render_image(&cam, t, near, far).unwrap();
        let [row, col] = centroid(&img);
        let c = spec.primitives[0].trajectory.at(t);
        let depth = c[1] - eye[1];
        // A sphere's silhouette is an ellipse centered slightly off the projected center.
        let r = 0.3;
        let scale = cam.focal * depth / (depth * depth - r * r);
        let want_col = half + scale * c[0];
        let want_row = half - scale * c[2];
        assert!((col - want_col).abs() < 0.25, "t={t}: col {col} vs {want_col}");
        assert!((row - want_row).abs() < 0.25, "t={t}: row {row} vs {want_row}");
    }
}

#[test]
fn shapes_parse_from_a_flat_kind_tag() {
    let spec = SceneSpec::parse(
        r#"{"bbox": [-1, -1, -1, 1, 1, 1], "primitives": [
            {"kind": "box", "half_extent": [0.1, 0.2, 0.3], "density": 1, "albedo": [0, 0, 0]},
            {"kind": "blob", "std_dev": 0.1, "density": 1, "albedo": [0, 0, 0]}]}"#,
    )
    .unwrap();
    assert_eq!(spec.primitives[0].shape, Shape::Box { half_extent: [0.1, 0.2, 0.3] });
    assert_eq!(spec.primitives[1].shape, Shape::Blob { std_dev: 0.1 });
    assert_eq!(spec.background, "black");
}

#[test]
fn invalid_specs_are_scene_errors() {
    for text in [
        r#"{"bbox": [-1, -1, -1, 1, 1, 1], "primitives": [{"kind": "cone", "density": 1, "albedo": [0, 0, 0]}]}"#,
        r#"{"bbox": [-1, -1, -1, 1, 1, 1], "extra": 1}"#,
        r#"{"bbox": [-1, -1, -1, 1, 1, 1], "background": "grey"}"#,
        r#"{"bbox": [1, -1, -1, -1, 1, 1]}"#,
        r#"{"bbox": [-1, -1, -1, 1, 1, 1], "primitives": [
            {"kind": "sphere", "radius": 0.3, "density": 1, "albedo": [1, 1, 1],
             "trajectory": {"velocity": [1, 0, 0]}}]}"#,
        r#"{"bbox": [-1, -1, -1, 1, 1, 1], "primitives": [
            {"kind": "sphere", "radius": 0.3, "density": 1, "albedo": [2, 1, 1]}]}"#,
    ] {
        let err = SceneSpec::parse(text).unwrap_err();
        assert!(matches!(err, Error::Scene(_)), "{text}: {err}");
    }
}

#[test]
fn synthesis_is_seeded() {
    let spec = SceneSpec::parse(
        r#"{"bbox": [-1, -1, -1, 1, 1, 1], "primitives": [
            {"kind": "sphere", "radius": 0.4, "density": 5, "albedo": [0.5, 0.5, 0.5]}]}"#,
    )
    .unwrap();
    let opts = SynthOptions { cameras: 4, width: 8, height: 8, seed: 11 };
    let a = synth_dataset(&spec, &opts).unwrap();
    let b = synth_dataset(&spec, &opts).unwrap();
    assert_eq!(a.train, b.train);
    let c = synth_dataset(&spec, &SynthOptions { seed: 12, ..opts }).unwrap();
    assert_ne!(a.train[0].pose, c.train[0].pose);
    assert_eq!(a.val.len(), opts.held_out_cameras());
    assert_eq!(a.train.last().unwrap().time, 1.0);
}
