//! The three networks and the model that ties them to the voxel grid.
//!
//! * time net: `gamma(t) -> C_h -> C_t`, ReLU after the hidden layer.
//! * deformation net: `[gamma(x, y, z), t_embed] -> C_h -> C_h -> 3` offsets,
//!   final layer zero-initialized so the initial deformation is the identity.
//! * radiance net: a trunk over `[gamma(v), t_embed, gamma(x, y, z)]`, a
//!   view-independent density head, and a color branch that also sees `gamma(d)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoding::{self, PeSpec};
use crate::error::{Error, Result};
use crate::mlp::{sigmoid, softplus, Linear, LinearGrad, Mlp, MlpGrad};
use crate::voxels::{Bbox, GridGrad, VoxelGrid};

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    /// Voxel feature channels `C_v`.
    pub channels: usize,
    /// Hidden width `C_h`.
    pub hidden: usize,
    /// Time-embedding width `C_t`; must equal `C_v * (2 * pe_voxel + 1)`.
    pub time_dim: usize,
    pub strides: Vec<usize>,
    pub pe_xyz: usize,
    pub pe_dir: usize,
    pub pe_time: usize,
    pub pe_voxel: usize,
    /// Added to the raw density before the softplus.
    pub sigma_shift: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self::small()
    }
}

impl NetConfig {
    /// 4 channels, hidden width 64.
    pub fn small() -> Self {
        Self {
            channels: 4,
            hidden: 64,
            time_dim: 20,
            strides: vec![1, 2, 4],
            pe_xyz: encoding::XYZ_FREQS,
            pe_dir: encoding::DIR_FREQS,
            pe_time: encoding::TIME_FREQS,
            pe_voxel: encoding::VOXEL_FREQS,
            sigma_shift: -2.0,
        }
    }

    /// 6 channels, hidden width 256.
    pub fn base() -> Self {
        Self {
            channels: 6,
            hidden: 256,
            time_dim: 30,
            ..Self::small()
        }
    }

    pub fn xyz_pe(&self) -> PeSpec {
        PeSpec::new(self.pe_xyz)
    }
    pub fn dir_pe(&self) -> PeSpec {
        PeSpec::new(self.pe_dir)
    }
    pub fn time_pe(&self) -> PeSpec {
        PeSpec::new(self.pe_time)
    }
    pub fn voxel_pe(&self) -> PeSpec {
        PeSpec::new(self.pe_voxel)
    }

    /// Encoded width of one stride's interpolated feature.
    pub fn encoded_voxel_dim(&self) -> usize {
        self.voxel_pe().output_dim(self.channels)
    }

    pub fn feature_dim(&self) -> usize {
        self.channels * self.strides.len()
    }

    pub fn xyz_dim(&self) -> usize {
        self.xyz_pe().output_dim(3)
    }

    pub fn dir_dim(&self) -> usize {
        self.dir_pe().output_dim(3)
    }

    pub fn deform_in_dim(&self) -> usize {
        self.xyz_dim() + self.time_dim
    }

    pub fn trunk_in_dim(&self) -> usize {
        self.strides.len() * self.encoded_voxel_dim() + self.time_dim + self.xyz_dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.hidden == 0 {
            return Err(Error::Config("channels and hidden width must be positive".into()));
        }
        if self.time_dim != self.encoded_voxel_dim() {
            return Err(Error::Config(format!(
                "time_dim {} must equal the encoded voxel feature width {} (= {} channels x {})",
                self.time_dim,
                self.encoded_voxel_dim(),
                self.channels,
                self.voxel_pe().block_dim()
            )));
        }
        if self.strides.is_empty() || self.strides[0] == 0 || self.strides.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "strides must be positive and strictly increasing, got {:?}",
                self.strides
            )));
        }
        if !self.sigma_shift.is_finite() {
            return Err(Error::Config("sigma_shift must be finite".into()));
        }
        Ok(())
    }
}

/// Optimizer group a parameter tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroupId {
    Voxels,
    DeformNet,
    OtherMlps,
}

impl ParamGroupId {
    pub const ALL: [ParamGroupId; 3] = [Self::Voxels, Self::DeformNet, Self::OtherMlps];

    pub fn name(self) -> &'static str {
        match self {
            Self::Voxels => "voxels",
            Self::DeformNet => "deform_net",
            Self::OtherMlps => "other_mlps",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: NetConfig,
    pub grid: VoxelGrid,
    pub time_net: Mlp,
    pub deform_net: Mlp,
    pub trunk: Mlp,
    pub density_head: Linear,
    pub color_net: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrad {
    pub grid: GridGrad,
    pub time_net: MlpGrad,
    pub deform_net: MlpGrad,
    pub trunk: MlpGrad,
    pub density_head: LinearGrad,
    pub color_net: MlpGrad,
}

impl ModelGrad {
    pub fn zeros_like(model: &Model, track_strides: bool) -> Self {
        Self {
            grid: GridGrad::zeros(model.grid.data().len(), model.grid.strides().len(), track_strides),
            time_net: MlpGrad::zeros_like(&model.time_net),
            deform_net: MlpGrad::zeros_like(&model.deform_net),
            trunk: MlpGrad::zeros_like(&model.trunk),
            density_head: LinearGrad::zeros_like(&model.density_head),
            color_net: MlpGrad::zeros_like(&model.color_net),
        }
    }

    pub fn clear(&mut self) {
        self.grid.clear();
        self.density_head.clear();
        for g in [&mut self.time_net, &mut self.deform_net, &mut self.trunk, &mut self.color_net] {
            g.clear();
        }
    }

    pub fn merge(&mut self, other: &ModelGrad) {
        self.grid.merge(&other.grid);
        self.time_net.merge(&other.time_net);
        self.deform_net.merge(&other.deform_net);
        self.trunk.merge(&other.trunk);
        self.density_head.merge(&other.density_head);
        self.color_net.merge(&other.color_net);
    }

    /// Flat gradient slices in the order of [`Model::tensors_mut`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![&self.grid.total];
        for g in self
            .time_net
            .layers
            .iter()
            .chain(&self.deform_net.layers)
            .chain(&self.trunk.layers)
            .chain(std::iter::once(&self.density_head))
            .chain(&self.color_net.layers)
        {
            out.push(&g.weight);
            out.push(&g.bias);
        }
        out
    }
}

impl Model {
    /// Zero voxels, seeded network weights, identity deformation.
    ///
    /// The output layers of the time and deformation networks start at zero,
    /// so a fresh model is exactly time-invariant.
    pub fn new(config: NetConfig, grid: VoxelGrid, seed: u64) -> Result<Self> {
        config.validate()?;
        if grid.channels() != config.channels || grid.strides() != config.strides.as_slice() {
            return Err(Error::Config(format!(
                "grid shape ({} channels, strides {:?}) does not match network config ({} channels, strides {:?})",
                grid.channels(),
                grid.strides(),
                config.channels,
                config.strides
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden;
        let mut time_net = Mlp::init(&[config.time_pe().output_dim(1), h, config.time_dim], false, &mut rng);
        let mut deform_net = Mlp::init(&[config.deform_in_dim(), h, h, 3], false, &mut rng);
        for last in [time_net.layers.last_mut().unwrap(), deform_net.layers.last_mut().unwrap()] {
            last.weight.fill(0.0);
            last.bias.fill(0.0);
        }
        let trunk = Mlp::init(&[config.trunk_in_dim(), h, h], true, &mut rng);
        let density_head = Linear::init(h, 1, &mut rng);
        let color_net = Mlp::init(&[h + config.dir_dim(), h, 3], false, &mut rng);
        let model = Self {
            config,
            grid,
            time_net,
            deform_net,
            trunk,
            density_head,
            color_net,
        };
        log::debug!(
            "model: {} voxel params, {} network params",
            model.grid.data().len(),
            model.num_network_params()
        );
        Ok(model)
    }

    pub fn bbox(&self) -> &Bbox {
        self.grid.bbox()
    }

    pub fn num_network_params(&self) -> usize {
        self.time_net.num_params()
            + self.deform_net.num_params()
            + self.trunk.num_params()
            + self.density_head.num_params()
            + self.color_net.num_params()
    }

    /// Every parameter tensor with its optimizer group. The order is stable
    /// and matches [`ModelGrad::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<(ParamGroupId, &mut [f64])> {
        let mut out: Vec<(ParamGroupId, &mut [f64])> = vec![(ParamGroupId::Voxels, self.grid.data_mut())];
        let groups = [
            (ParamGroupId::OtherMlps, self.time_net.layers.iter_mut().collect::<Vec<_>>()),
            (ParamGroupId::DeformNet, self.deform_net.layers.iter_mut().collect()),
            (ParamGroupId::OtherMlps, self.trunk.layers.iter_mut().collect()),
            (ParamGroupId::OtherMlps, vec![&mut self.density_head]),
            (ParamGroupId::OtherMlps, self.color_net.layers.iter_mut().collect()),
        ];
        for (id, layers) in groups {
            for l in layers {
                out.push((id, l.weight.as_mut_slice()));
                out.push((id, l.bias.as_mut_slice()));
            }
        }
        out
    }

    /// Network tensors (everything except voxels) in checkpoint order, with shapes.
    pub fn network_layers(&self) -> Vec<&Linear> {
        self.time_net
            .layers
            .iter()
            .chain(&self.deform_net.layers)
            .chain(&self.trunk.layers)
            .chain(std::iter::once(&self.density_head))
            .chain(&self.color_net.layers)
            .collect()
    }

    pub fn network_layers_mut(&mut self) -> Vec<&mut Linear> {
        self.time_net
            .layers
            .iter_mut()
            .chain(self.deform_net.layers.iter_mut())
            .chain(self.trunk.layers.iter_mut())
            .chain(std::iter::once(&mut self.density_head))
            .chain(self.color_net.layers.iter_mut())
            .collect()
    }

    /// Time embedding `Phi_t(gamma(t))`.
    pub fn encode_time(&self, t: f64) -> Result<Vec<f64>> {
        let enc = encoding::positional_encode(&[t], self.config.time_pe())?;
        Ok(self.time_net.forward_one(&enc))
    }

    /// Deformed position `p + Phi_d(gamma(p), t_embed)`, not yet clamped.
    pub fn deform(&self, p: [f64; 3], t_embed: &[f64]) -> Result<[f64; 3]> {
        if t_embed.len() != self.config.time_dim {
            return Err(Error::InvalidInput(format!(
                "time embedding has {} entries, expected {}",
                t_embed.len(),
                self.config.time_dim
            )));
        }
        let pn = self.bbox().normalize(p);
        let mut input = encoding::positional_encode(&pn, self.config.xyz_pe())?;
        input.extend_from_slice(t_embed);
        let off = self.deform_net.forward_one(&input);
        Ok([p[0] + off[0], p[1] + off[1], p[2] + off[2]])
    }

    /// Density and color for one point. Returns `(raw_sigma, sigma, rgb)`;
    /// `raw_sigma` excludes the shift.
    pub fn radiance(
        &self,
        feature: &[f64],
        t_embed: &[f64],
        p: [f64; 3],
        dir: [f64; 3],
    ) -> Result<(f64, f64, [f64; 3])> {
        let norm = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!("view direction has norm {norm}, expected 1")));
        }
        if feature.len() != self.config.feature_dim() || t_embed.len() != self.config.time_dim {
            return Err(Error::InvalidInput("radiance input width mismatch".into()));
        }
        let mut input = encoding::positional_encode(feature, self.config.voxel_pe())?;
        input.extend_from_slice(t_embed);
        input.extend(encoding::positional_encode(&self.bbox().normalize(p), self.config.xyz_pe())?);
        let h = self.trunk.forward_one(&input);
        let raw = self.density_head.forward_one(&h)?[0];
        let sigma = softplus(raw + self.config.sigma_shift);
        let mut cin = h;
        cin.extend(encoding::positional_encode(&dir, self.config.dir_pe())?);
        let logits = self.color_net.forward_one(&cin);
        Ok((raw, sigma, [sigmoid(logits[0]), sigmoid(logits[1]), sigmoid(logits[2])]))
    }
}
