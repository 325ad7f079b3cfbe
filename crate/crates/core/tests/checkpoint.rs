use neuvox::checkpoint::{Checkpoint, VERSION};
use neuvox::config::TrainConfig;
use neuvox::error::Error;
use neuvox::nets::{Model, NetConfig};
use neuvox::optim::Adam;
use neuvox::voxels::{Bbox, StrideGradReport, VoxelGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn checkpoint(half: bool) -> Checkpoint {
    let config = TrainConfig {
        resolution: [6; 3],
        net: NetConfig { channels: 2, hidden: 8, time_dim: 10, strides: vec![1, 2], ..NetConfig::small() },
        total_iters: 10,
        upscale_iters: vec![3, 6],
        half_precision_last: 2,
        checkpoint_every: 5,
        ..TrainConfig::small()
    };
    let bbox = Bbox::new([-1.0, -0.5, -1.0], [1.0, 0.5, 1.5]).unwrap();
    let grid = VoxelGrid::new(2, [6; 3], bbox, &[1, 2]).unwrap();
    let mut model = Model::new(config.net.clone(), grid, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for v in model.grid.data_mut() {
        *v = rng.gen_range(-3.0..3.0);
    }
    if half {
        model.grid.quantize_half();
    }
    let mut optimizer = Adam::new(&mut model, config.lrs());
    for g in &mut optimizer.groups {
        g.step_count = 7;
        for m in &mut g.m {
            m.iter_mut().for_each(|x| *x = rng.gen());
        }
    }
    let diagnostics = StrideGradReport {
        strides: vec![1, 2],
        norms: vec![0.5, 0.25],
        fields: vec![vec![0.125; 216], vec![2.0; 216]],
        dims: [6; 3],
    };
    Checkpoint { iteration: 7, config, model, optimizer: Some(optimizer), diagnostics: Some(diagnostics) }
}

#[test]
fn save_load_save_is_byte_identical() {
    for half in [false, true] {
        let ck = checkpoint(half);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.tnv");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.iteration, 7);
        assert_eq!(back.config, ck.config);
        assert_eq!(back.model.grid.data(), ck.model.grid.data());
        assert_eq!(back.model.grid.precision(), ck.model.grid.precision());
        assert_eq!(back.optimizer, ck.optimizer);
        assert_eq!(back.diagnostics, ck.diagnostics);
        assert_eq!(back.to_bytes().unwrap(), std::fs::read(&path).unwrap());
    }
}

#[test]
fn optional_sections_roundtrip_when_absent() {
    let mut ck = checkpoint(false);
    ck.optimizer = None;
    ck.diagnostics = None;
    let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
    assert!(back.optimizer.is_none() && back.diagnostics.is_none());
    assert_eq!(back.to_bytes().unwrap(), ck.to_bytes().unwrap());
}

#[test]
fn bad_magic_is_rejected() {
    let mut bytes = checkpoint(false).to_bytes().unwrap();
    bytes[0] = b'X';
    let err = Checkpoint::from_bytes(&bytes).unwrap_err();
    assert!(matches!(&err, Error::Checkpoint(m) if m.contains("magic")), "{err}");
}

#[test]
fn version_mismatch_is_rejected() {
    let mut bytes = checkpoint(false).to_bytes().unwrap();
    bytes[4..8].copy_from_slice(&(VERSION + 1).to_le_bytes());
    let err = Checkpoint::from_bytes(&bytes).unwrap_err();
    assert!(matches!(&err, Error::Checkpoint(m) if m.contains("version")), "{err}");
}

#[test]
fn tampered_config_fails_the_hash_check() {
    let ck = checkpoint(false);
    let mut bytes = ck.to_bytes().unwrap();
    let text = ck.config.to_text();
    let at = bytes.windows(text.len()).position(|w| w == text.as_bytes()).unwrap();
    // Swap one digit inside the stored config.
    let digit = (at..at + text.len()).find(|&i| bytes[i].is_ascii_digit()).unwrap();
    bytes[digit] = if bytes[digit] == b'1' { b'2' } else { b'1' };
    let err = Checkpoint::from_bytes(&bytes).unwrap_err();
    assert!(matches!(&err, Error::Checkpoint(m) if m.contains("hash")), "{err}");
}

#[test]
fn every_truncation_is_a_checkpoint_error() {
    let bytes = checkpoint(false).to_bytes().unwrap();
    for len in (0..bytes.len()).step_by(37).chain([bytes.len() - 1]) {
        match Checkpoint::from_bytes(&bytes[..len]) {
            Err(Error::Checkpoint(_)) => {}
            other => panic!("prefix {len}: {other:?}"),
        }
    }
    let mut long = bytes.clone();
    long.push(0);
    assert!(matches!(Checkpoint::from_bytes(&long), Err(Error::Checkpoint(_))));
}

#[test]
fn missing_file_is_a_checkpoint_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(Checkpoint::load(&dir.path().join("nope.tnv")), Err(Error::Checkpoint(_))));
}
