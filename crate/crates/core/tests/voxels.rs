use neuvox::voxels::{header_len, Bbox, GridGrad, Precision, VoxelGrid};
use neuvox::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit_box() -> Bbox {
    Bbox::new([0.0; 3], [1.0; 3]).unwrap()
}

fn odd_box() -> Bbox {
    Bbox::new([-1.0, 0.5, -2.0], [1.5, 2.0, 1.0]).unwrap()
}

fn random_grid(c: usize, dims: [usize; 3], bbox: Bbox, strides: &[usize], seed: u64) -> VoxelGrid {
    let mut g = VoxelGrid::new(c, dims, bbox, strides).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in g.data_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    g
}

fn random_point(bbox: &Bbox, rng: &mut impl Rng) -> [f64; 3] {
    let mut p = [0.0; 3];
    for a in 0..3 {
        p[a] = rng.gen_range(bbox.min[a]..bbox.max[a]);
    }
    p
}

/// Textbook trilinear blend written out term by term over the 8 corners.
fn eight_term_oracle(g: &VoxelGrid, p: [f64; 3]) -> Vec<f64> {
    let dims = g.dims();
    let b = g.bbox();
    let mut idx = [0usize; 3];
    let mut t = [0.0; 3];
    for a in 0..3 {
        let u = (p[a] - b.min[a]) / (b.max[a] - b.min[a]) * (dims[a] - 1) as f64;
        let i = (u.floor() as usize).min(dims[a] - 2);
        idx[a] = i;
        t[a] = u - i as f64;
    }
    let mut out = vec![0.0; g.channels()];
    for dx in 0..2 {
        for dy in 0..2 {
            for dz in 0..2 {
                let w = (if dx == 1 { t[0] } else { 1.0 - t[0] })
                    * (if dy == 1 { t[1] } else { 1.0 - t[1] })
                    * (if dz == 1 { t[2] } else { 1.0 - t[2] });
                let f = g.vertex(idx[0] + dx, idx[1] + dy, idx[2] + dz);
                for (o, v) in out.iter_mut().zip(f) {
                    *o += w * v;
                }
            }
        }
    }
    out
}

/// Fill with the affine field f_c(p) = a_c . p + b_c.
fn affine_grid(dims: [usize; 3], bbox: Bbox, strides: &[usize]) -> (VoxelGrid, impl Fn([f64; 3], usize) -> f64) {
    let mut g = VoxelGrid::new(2, dims, bbox, strides).unwrap();
    let coef = [[0.7, -1.3, 0.25, 0.1], [-0.4, 0.9, 2.0, -0.6]];
    let field = move |p: [f64; 3], c: usize| {
        let k = coef[c];
        k[0] * p[0] + k[1] * p[1] + k[2] * p[2] + k[3]
    };
    for x in 0..dims[0] {
        for y in 0..dims[1] {
            for z in 0..dims[2] {
                let p = g.vertex_position(x, y, z);
                g.set_vertex(x, y, z, &[field(p, 0), field(p, 1)]);
            }
        }
    }
    (g, field)
}

#[test]
fn vertex_query_is_bit_exact() {
    let g = random_grid(3, [4, 5, 3], odd_box(), &[1], 1);
    for (x, y, z) in [(0, 0, 0), (3, 4, 2), (1, 2, 1), (2, 0, 2)] {
        let p = g.vertex_position(x, y, z);
        assert_eq!(g.trilinear_interpolate(p).unwrap(), g.vertex(x, y, z));
    }
}

#[test]
fn cell_center_is_corner_mean() {
    let g = random_grid(2, [3, 3, 3], unit_box(), &[1], 2);
    let got = g.trilinear_interpolate([0.25, 0.75, 0.25]).unwrap();
    for c in 0..2 {
        let mut mean = 0.0;
        for x in 0..2 {
            for y in 1..3 {
                for z in 0..2 {
                    mean += g.vertex(x, y, z)[c];
                }
            }
        }
        mean /= 8.0;
        assert!((got[c] - mean).abs() < 1e-15);
    }
}

#[test]
fn random_points_match_eight_term_oracle() {
    let g = random_grid(3, [3, 3, 3], odd_box(), &[1], 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..500 {
        let p = random_point(g.bbox(), &mut rng);
        let got = g.trilinear_interpolate(p).unwrap();
        for (a, b) in got.iter().zip(eight_term_oracle(&g, p)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn constant_grid_all_strides() {
    let mut g = VoxelGrid::new(2, [9, 9, 9], unit_box(), &[1, 2, 4]).unwrap();
    for v in g.data_mut().chunks_exact_mut(2) {
        v.copy_from_slice(&[0.3, -2.0]);
    }
    let out = g.multi_distance_interpolate([0.31, 0.77, 0.05]).unwrap();
    for block in out.chunks_exact(2) {
        assert!((block[0] - 0.3).abs() < 1e-15 && (block[1] + 2.0).abs() < 1e-15);
    }
}

#[test]
fn unit_stride_equals_trilinear() {
    let g = random_grid(2, [5, 6, 7], odd_box(), &[1], 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100 {
        let p = random_point(g.bbox(), &mut rng);
        assert_eq!(g.multi_distance_interpolate(p).unwrap(), g.trilinear_interpolate(p).unwrap());
    }
}

#[test]
fn affine_fields_exact_at_every_stride() {
    // 11 and 10 vertices: stride 4 leaves a remainder on both axes.
    let (g, field) = affine_grid([11, 10, 9], odd_box(), &[1, 2, 4]);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..300 {
        let p = random_point(g.bbox(), &mut rng);
        let out = g.multi_distance_interpolate(p).unwrap();
        for block in out.chunks_exact(2) {
            for c in 0..2 {
                assert!((block[c] - field(p, c)).abs() < 1e-10, "{} vs {}", block[c], field(p, c));
            }
        }
    }
}

#[test]
fn out_of_bounds_rejected() {
    let g = random_grid(1, [3, 3, 3], unit_box(), &[1], 8);
    assert!(matches!(g.trilinear_interpolate([1.1, 0.5, 0.5]), Err(Error::OutOfBounds(_))));
    assert!(g.trilinear_interpolate([1.0 + 1e-12, 0.5, 0.5]).is_ok());
    assert!(g.multi_distance_interpolate([0.5, f64::NAN, 0.5]).is_err());
}

#[test]
fn construction_checks() {
    assert!(VoxelGrid::new(1, [1, 3, 3], unit_box(), &[1]).is_err());
    assert!(VoxelGrid::new(1, [4, 4, 4], unit_box(), &[1, 4]).is_err());
    assert!(VoxelGrid::new(1, [4, 4, 4], unit_box(), &[2, 1]).is_err());
    assert!(Bbox::new([0.0; 3], [1.0, 0.0, 1.0]).is_err());
    let g = VoxelGrid::coarse(1, [4, 4, 4], unit_box(), &[1, 2, 4]).unwrap();
    assert_eq!(g.effective_stride(4), 3);
    assert!(g.data().iter().all(|&v| v == 0.0));
}

#[test]
fn backward_zero_upstream() {
    let mut g = random_grid(2, [5, 5, 5], unit_box(), &[1, 2, 4], 9);
    let dp = g.backward_interpolate([0.3, 0.4, 0.9], &[0.0; 6]).unwrap();
    assert_eq!(dp, [0.0; 3]);
    assert!(g.grad.total.iter().all(|&v| v == 0.0));
    assert!(g.backward_interpolate([0.3, 0.4, 0.9], &[1.0; 5]).is_err());
}

#[test]
fn backward_at_vertex_hits_one_vertex_per_stride() {
    let mut g = random_grid(1, [9, 9, 9], unit_box(), &[1, 2, 4], 10);
    g.set_track_stride_grads(true);
    let p = g.vertex_position(4, 0, 8);
    g.backward_interpolate(p, &[1.0, 2.0, 3.0]).unwrap();
    let per = g.grad.per_stride.as_ref().unwrap();
    for (m, u) in [1.0, 2.0, 3.0].iter().enumerate() {
        let nonzero: Vec<(usize, f64)> =
            per[m].iter().copied().enumerate().filter(|(_, v)| *v != 0.0).collect();
        assert_eq!(nonzero, vec![(g.vertex_index(4, 0, 8), *u)]);
    }
    assert_eq!(g.grad.total[g.vertex_index(4, 0, 8)], 6.0);
}

#[test]
fn backward_matches_finite_differences() {
    let bbox = odd_box();
    let mut g = random_grid(2, [7, 6, 9], bbox, &[1, 2, 4], 11);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let h = 1e-6;
    for _ in 0..20 {
        // Keep clear of cell boundaries where the interpolant has kinks.
        let p = loop {
            let p = random_point(&bbox, &mut rng);
            let safe = (0..3).all(|a| {
                let u = (p[a] - bbox.min[a]) / bbox.extent()[a] * (g.dims()[a] - 1) as f64;
                [1.0, 2.0, 4.0].iter().all(|s: &f64| {
                    let f = (u / s).fract();
                    f > 0.01 && f < 0.99
                })
            });
            if safe {
                break p;
            }
        };
        let up: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |g: &VoxelGrid, p: [f64; 3]| -> f64 {
            g.multi_distance_interpolate(p).unwrap().iter().zip(&up).map(|(a, b)| a * b).sum()
        };
        g.zero_grad();
        let dp = g.backward_interpolate(p, &up).unwrap();
        for a in 0..3 {
            let (mut pp, mut pm) = (p, p);
            pp[a] += h;
            pm[a] -= h;
            let fd = (loss(&g, pp) - loss(&g, pm)) / (2.0 * h);
            assert!((fd - dp[a]).abs() / fd.abs().max(dp[a].abs()).max(1e-6) < 1e-5);
        }
        for _ in 0..20 {
            let i = rng.gen_range(0..g.data().len());
            let orig = g.data()[i];
            g.data_mut()[i] = orig + h;
            let fp = loss(&g, p);
            g.data_mut()[i] = orig - h;
            let fm = loss(&g, p);
            g.data_mut()[i] = orig;
            let fd = (fp - fm) / (2.0 * h);
            let an = g.grad.total[i];
            assert!((fd - an).abs() <= 1e-5 * fd.abs().max(an.abs()).max(1e-6));
        }
    }
}

#[test]
fn backward_is_transpose_of_forward() {
    // Interpolation is linear in grid data: <J dg, u> = <dg, J^T u>.
    let bbox = odd_box();
    let dg = random_grid(3, [6, 7, 5], bbox, &[1, 2, 4], 13);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..50 {
        let p = random_point(&bbox, &mut rng);
        let u: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lhs: f64 = dg.multi_distance_interpolate(p).unwrap().iter().zip(&u).map(|(a, b)| a * b).sum();
        let mut grad = GridGrad::zeros(dg.data().len(), 3, false);
        dg.scatter_backward(p, &u, &mut grad);
        let rhs: f64 = grad.total.iter().zip(dg.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}

#[test]
fn upscale_constant_grid() {
    let mut g = VoxelGrid::new(1, [3, 4, 5], unit_box(), &[1, 2]).unwrap();
    g.data_mut().fill(0.75);
    let up = g.upscale(2, [100; 3]).unwrap();
    assert_eq!(up.dims(), [6, 8, 10]);
    assert!(up.data().iter().all(|&v| (v - 0.75).abs() < 1e-15));
    assert!(up.grad.total.iter().all(|&v| v == 0.0));
    assert_eq!(up.grad.total.len(), up.data().len());
    assert_eq!(up.upscale(2, [7, 100, 100]).unwrap().dims(), [7, 16, 20]);
}

#[test]
fn upscale_linear_grid_stays_linear() {
    let bbox = odd_box();
    let mut g = VoxelGrid::new(1, [5, 6, 4], bbox, &[1]).unwrap();
    for x in 0..5 {
        for y in 0..6 {
            for z in 0..4 {
                let p = g.vertex_position(x, y, z);
                g.set_vertex(x, y, z, &[3.0 * p[1] - 1.0]);
            }
        }
    }
    let up = g.upscale(2, [64; 3]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..100 {
        let p = random_point(&bbox, &mut rng);
        let a = g.trilinear_interpolate(p).unwrap()[0];
        let b = up.trilinear_interpolate(p).unwrap()[0];
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn upscale_reproduces_old_interpolant_at_new_vertices() {
    let g = random_grid(2, [2, 2, 2], unit_box(), &[1], 16);
    let up = g.upscale(2, [64; 3]).unwrap();
    let d = up.dims();
    for x in 0..d[0] {
        for y in 0..d[1] {
            for z in 0..d[2] {
                let p = up.vertex_position(x, y, z);
                let old = g.trilinear_interpolate(p).unwrap();
                for (a, b) in up.vertex(x, y, z).iter().zip(&old) {
                    assert!((a - b).abs() < 1e-14);
                }
            }
        }
    }
    // The refined field at the old cell center is the mean of the 8 corners.
    let center = up.trilinear_interpolate([0.5; 3]).unwrap();
    for c in 0..2 {
        let mean: f64 = g.data().iter().skip(c).step_by(2).sum::<f64>() / 8.0;
        assert!((center[c] - mean).abs() < 1e-14);
    }
}

/// Round-to-nearest-even conversion to binary16 done on the f64 bit pattern,
/// for normal-range inputs.
fn nearest_half_oracle(x: f64) -> f64 {
    let bits = x.to_bits();
    let sign = if bits >> 63 == 1 { -1.0 } else { 1.0 };
    let exp = ((bits >> 52) & 0x7ff) as i64 - 1023;
    let mant = bits & ((1u64 << 52) - 1);
    assert!((-14..=15).contains(&exp), "oracle handles normal halves only");
    // Keep 10 mantissa bits; round on the 42 dropped ones.
    let dropped = mant & ((1u64 << 42) - 1);
    let mut kept = mant >> 42;
    let half = 1u64 << 41;
    if dropped > half || (dropped == half && kept & 1 == 1) {
        kept += 1;
    }
    sign * (1.0 + kept as f64 / 1024.0) * 2f64.powi(exp as i32)
}

#[test]
fn half_quantization_values() {
    let mut g = VoxelGrid::new(1, [2, 2, 2], unit_box(), &[1]).unwrap();
    let vals = [1.0, 0.1, -0.3, 3.3, 1000.5, 2.0e-3, 70000.0, -1e6];
    g.data_mut().copy_from_slice(&vals);
    g.quantize_half();
    assert_eq!(g.precision(), Precision::Half);
    assert_eq!(g.data()[0], 1.0);
    assert_eq!(g.data()[1], 0.0999755859375);
    for i in 1..6 {
        assert_eq!(g.data()[i], nearest_half_oracle(vals[i]), "value {}", vals[i]);
    }
    assert_eq!(g.data()[6], 65504.0);
    assert_eq!(g.data()[7], -65504.0);
}

#[test]
fn zero_grid_half_serialized_size() {
    let mut g = VoxelGrid::new(4, [10, 12, 14], unit_box(), &[1, 2, 4]).unwrap();
    g.quantize_half();
    let mut buf = Vec::new();
    g.write_to(&mut buf).unwrap();
    assert_eq!(buf.len(), header_len(3) + 2 * 4 * 10 * 12 * 14);
    assert_eq!(buf.len(), g.serialized_len());
    let back = VoxelGrid::read_from(&mut buf.as_slice()).unwrap();
    assert!(back.data().iter().all(|&v| v == 0.0));
    assert_eq!(back.precision(), Precision::Half);
}

#[test]
fn serialization_roundtrip_and_layout() {
    let g = random_grid(2, [3, 4, 5], odd_box(), &[1, 2], 17);
    let mut buf = Vec::new();
    g.write_to(&mut buf).unwrap();
    assert_eq!(&buf[..4], b"TNVX");
    let back = VoxelGrid::read_from(&mut buf.as_slice()).unwrap();
    assert_eq!(back.data(), g.data());
    assert_eq!(back.dims(), g.dims());
    assert_eq!(back.bbox(), g.bbox());
    assert_eq!(back.strides(), g.strides());
    // Channel-major with z fastest: the second payload value is channel 0 at (0, 0, 1).
    let h = header_len(2);
    let second = f64::from_le_bytes(buf[h + 8..h + 16].try_into().unwrap());
    assert_eq!(second, g.vertex(0, 0, 1)[0]);

    assert!(matches!(VoxelGrid::read_from(&mut &buf[..buf.len() - 1]), Err(Error::Checkpoint(_))));
    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(matches!(VoxelGrid::read_from(&mut bad.as_slice()), Err(Error::Checkpoint(_))));
}

#[test]
fn per_stride_norms_require_backward() {
    let mut g = random_grid(1, [9, 9, 9], unit_box(), &[1, 2, 4], 18);
    assert!(matches!(g.grad_magnitude_per_stride(), Err(Error::State(_))));
    g.set_track_stride_grads(true);
    assert!(matches!(g.grad_magnitude_per_stride(), Err(Error::State(_))));
    g.backward_interpolate([0.3, 0.6, 0.2], &[1.0, 0.0, 0.0]).unwrap();
    let rep = g.grad_magnitude_per_stride().unwrap();
    assert!(rep.norms[0] > 0.0);
    assert_eq!(&rep.norms[1..], &[0.0, 0.0]);
}

#[test]
fn per_stride_bookkeeping_sums_to_total() {
    // Each stride path has its own accumulator; together they make up the total.
    let mut g = random_grid(1, [9, 9, 9], unit_box(), &[1, 2, 4], 19);
    g.set_track_stride_grads(true);
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for _ in 0..30 {
        let p = random_point(g.bbox(), &mut rng);
        let u = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        g.backward_interpolate(p, &u).unwrap();
    }
    let per = g.grad.per_stride.as_ref().unwrap();
    for i in 0..g.data().len() {
        let s: f64 = per.iter().map(|b| b[i]).sum();
        assert!((s - g.grad.total[i]).abs() < 1e-12);
    }
    let rep = g.grad_magnitude_per_stride().unwrap();
    let fields_sq: f64 = rep.fields.iter().flatten().map(|v| v * v).sum();
    let norms_sq: f64 = rep.norms.iter().map(|n| n * n).sum();
    assert!((fields_sq - norms_sq).abs() < 1e-10);
}

proptest! {
    #[test]
    fn interpolation_is_convex_combination(px in 0.0f64..1.0, py in 0.0f64..1.0, pz in 0.0f64..1.0, seed in 0u64..1000) {
        let g = random_grid(1, [5, 7, 9], unit_box(), &[1, 2], seed);
        let lo = g.data().iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = g.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for v in g.multi_distance_interpolate([px, py, pz]).unwrap() {
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }
}
