use neuvox::error::Error;
use neuvox::nets::{Model, ModelGrad, NetConfig, ParamGroupId};
use neuvox::optim::{lr_schedule, Adam};
use neuvox::voxels::{Bbox, VoxelGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LRS: [f64; 3] = [8e-2, 6e-4, 8e-4];
const TOTAL: u64 = 100;

fn model() -> Model {
    let bbox = Bbox::new([-1.0; 3], [1.0; 3]).unwrap();
    let cfg = NetConfig { channels: 2, hidden: 8, time_dim: 10, strides: vec![1, 2], ..NetConfig::small() };
    let mut m = Model::new(cfg, VoxelGrid::new(2, [5; 3], bbox, &[1, 2]).unwrap(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for v in m.grid.data_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    m
}

/// Every gradient slot set by `f(flat index across all tensors)`.
fn gradient(model: &Model, f: impl Fn(usize) -> f64) -> ModelGrad {
    let mut g = ModelGrad::zeros_like(model, false);
    let mut k = 0;
    let mut fill = |v: &mut Vec<f64>| {
        for x in v.iter_mut() {
            *x = f(k);
            k += 1;
        }
    };
    fill(&mut g.grid.total);
    for mlp in [&mut g.time_net, &mut g.deform_net, &mut g.trunk, &mut g.color_net] {
        for l in &mut mlp.layers {
            fill(&mut l.weight);
            fill(&mut l.bias);
        }
    }
    fill(&mut g.density_head.weight);
    fill(&mut g.density_head.bias);
    g
}

fn snapshot(model: &mut Model) -> Vec<(ParamGroupId, Vec<f64>)> {
    model.tensors_mut().into_iter().map(|(id, t)| (id, t.to_vec())).collect()
}

/// Textbook scalar Adam, written out independently of the library.
struct ScalarAdam {
    m: f64,
    v: f64,
    t: i32,
}

impl ScalarAdam {
    fn update(&mut self, g: f64, lr: f64) -> f64 {
        self.t += 1;
        self.m = 0.9 * self.m + 0.1 * g;
        self.v = 0.99 * self.v + 0.01 * g * g;
        let m_hat = self.m / (1.0 - 0.9f64.powi(self.t));
        let v_hat = self.v / (1.0 - 0.99f64.powi(self.t));
        -lr * m_hat / (v_hat.sqrt() + 1e-8)
    }
}

#[test]
fn first_step_with_unit_gradient_moves_by_the_learning_rate() {
    let mut m = model();
    let mut adam = Adam::new(&mut m, [0.1; 3]);
    let before = snapshot(&mut m);
    let g = gradient(&m, |_| 1.0);
    adam.step(&mut m, &g, 0, TOTAL).unwrap();
    // Bias-corrected moments are both exactly 1 after one step.
    let want = -0.1 / (1.0 + 1e-8);
    for ((_, a), (_, b)) in snapshot(&mut m).iter().zip(&before) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y - want).abs() < 1e-14, "{}", x - y);
        }
    }
}

#[test]
fn two_steps_match_scalar_oracle() {
    let mut m = model();
    let mut adam = Adam::new(&mut m, LRS);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n: usize = snapshot(&mut m).iter().map(|(_, t)| t.len()).sum();
    let draws: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let g = gradient(&m, |k| draws[k]);
    // Read back in model tensor order so the oracle pairs each parameter with its own gradient.
    let flat: Vec<f64> = g.tensors().concat();
    let before = snapshot(&mut m);
    let mut oracles: Vec<ScalarAdam> = (0..n).map(|_| ScalarAdam { m: 0.0, v: 0.0, t: 0 }).collect();
    let mut expected: Vec<f64> = before.iter().flat_map(|(_, t)| t.clone()).collect();
    for iter in [0, 1] {
        adam.step(&mut m, &g, iter, TOTAL).unwrap();
        let mut k = 0;
        for (id, t) in &before {
            let lr = lr_schedule(LRS[*id as usize], iter, TOTAL).unwrap();
            for _ in 0..t.len() {
                expected[k] += oracles[k].update(flat[k], lr);
                k += 1;
            }
        }
    }
    let after: Vec<f64> = snapshot(&mut m).into_iter().flat_map(|(_, t)| t).collect();
    for (k, (a, e)) in after.iter().zip(&expected).enumerate() {
        assert!((a - e).abs() < 1e-12, "slot {k}: {a} vs {e}");
    }
    for id in ParamGroupId::ALL {
        assert_eq!(adam.group(id).step_count, 2);
    }
}

#[test]
fn zero_gradients_leave_parameters_unchanged() {
    let mut m = model();
    let mut adam = Adam::new(&mut m, LRS);
    let before = snapshot(&mut m);
    let zero = ModelGrad::zeros_like(&m, false);
    adam.step(&mut m, &zero, 0, TOTAL).unwrap();
    assert_eq!(snapshot(&mut m), before);
    assert_eq!(adam.group(ParamGroupId::Voxels).step_count, 1);
}

#[test]
fn first_update_is_invariant_to_gradient_scale() {
    let base = model();
    let updates = |k: f64| {
        let mut m = base.clone();
        let mut adam = Adam::new(&mut m, LRS);
        let g = gradient(&m, |i| k * ((i % 7) as f64 - 3.2));
        let before: Vec<f64> = snapshot(&mut m).into_iter().flat_map(|(_, t)| t).collect();
        adam.step(&mut m, &g, 0, TOTAL).unwrap();
        let after: Vec<f64> = snapshot(&mut m).into_iter().flat_map(|(_, t)| t).collect();
        after.iter().zip(&before).map(|(a, b)| a - b).collect::<Vec<f64>>()
    };
    let reference = updates(1.0);
    for k in [10.0, 0.1] {
        for (a, b) in updates(k).iter().zip(&reference) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-12), "k={k}: {a} vs {b}");
        }
    }
}

#[test]
fn non_finite_gradient_aborts_without_changes() {
    let mut m = model();
    let mut adam = Adam::new(&mut m, LRS);
    let n_grid = m.grid.data().len();
    let mut g = gradient(&m, |_| 0.5);
    g.deform_net.layers[0].bias[0] = f64::NAN;
    let before = snapshot(&mut m);
    let err = adam.step(&mut m, &g, 0, TOTAL).unwrap_err();
    assert!(matches!(&err, Error::Numerical { group, .. } if group == ParamGroupId::DeformNet.name()), "{err}");
    assert_eq!(snapshot(&mut m), before);
    assert_eq!(adam.group(ParamGroupId::DeformNet).step_count, 0);

    g.deform_net.layers[0].bias[0] = 0.0;
    g.grid.total[n_grid - 1] = f64::INFINITY;
    let err = adam.step(&mut m, &g, 0, TOTAL).unwrap_err();
    assert!(matches!(&err, Error::Numerical { group, .. } if group == ParamGroupId::Voxels.name()), "{err}");
}

#[test]
fn moments_stay_finite_and_reset_per_group() {
    let mut m = model();
    let mut adam = Adam::new(&mut m, LRS);
    for iter in 0..5 {
        let g = gradient(&m, |i| 1e6 * (((i + iter as usize) % 5) as f64 - 2.0));
        adam.step(&mut m, &g, iter, TOTAL).unwrap();
    }
    for grp in &adam.groups {
        assert!(grp.m.iter().chain(&grp.v).flatten().all(|x| x.is_finite()));
    }
    let deform = adam.group(ParamGroupId::DeformNet).clone();
    adam.reset_group(ParamGroupId::Voxels, &mut m);
    let vox = adam.group(ParamGroupId::Voxels);
    assert_eq!(vox.step_count, 0);
    assert!(vox.m.iter().chain(&vox.v).flatten().all(|&x| x == 0.0));
    assert_eq!(vox.m[0].len(), m.grid.data().len());
    assert_eq!(adam.group(ParamGroupId::DeformNet), &deform);
}

#[test]
fn mismatched_gradient_layout_is_a_state_error() {
    let mut m = model();
    let mut adam = Adam::new(&mut m, LRS);
    let mut g = ModelGrad::zeros_like(&m, false);
    g.grid.total.pop();
    assert!(matches!(adam.step(&mut m, &g, 0, TOTAL), Err(Error::State(_))));
}
