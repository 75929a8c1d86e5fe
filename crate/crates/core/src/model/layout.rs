use serde::{Deserialize, Serialize};

use super::Architecture;

/// Which optimizer group a tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    /// Tensors of the closed-form velocity network: the `f_nu` encoder, the
    /// first gate vector and the output projection.
    Velocity,
    /// Everything else: the `f_tau` encoder, later gates and residual weights.
    FlowMap,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    #[serde(skip)]
    pub group: Option<Group>,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    pub fn group(&self) -> Group {
        self.group.unwrap_or(Group::FlowMap)
    }
}

/// Tensor indices of one encoder stack inside a [`Layout`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderIds {
    pub grids: Vec<usize>,
    pub layers: Vec<usize>,
}

/// Flat parameter layout: every tensor is a contiguous slice of one buffer,
/// in a fixed order that doubles as the checkpoint serialization order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub tensors: Vec<TensorInfo>,
    pub total: usize,
    pub nu: EncoderIds,
    pub tau: EncoderIds,
    /// Gate vectors `m0 .. m(L-1)`.
    pub gates: Vec<usize>,
    /// Residual weights `W1 .. W(L-1)`.
    pub residual: Vec<usize>,
    pub output: usize,
}

impl Layout {
    pub fn new(arch: &Architecture) -> Self {
        let mut tensors = Vec::new();
        let mut total = 0;
        let mut push = |name: String, shape: Vec<usize>, group: Group| {
            let info = TensorInfo {
                name,
                shape,
                offset: total,
                group: Some(group),
            };
            total += info.len();
            tensors.push(info);
            tensors.len() - 1
        };
        let d = arch.width;
        let concat = arch.feat_dim * arch.resolutions.len();
        let mut encoder = |prefix: &str, layers: usize, group: Group| {
            let grids = arch
                .resolutions
                .iter()
                .enumerate()
                .map(|(l, res)| {
                    let mut shape = res.clone();
                    shape.push(arch.feat_dim);
                    push(format!("{prefix}.grid{l}"), shape, group)
                })
                .collect();
            let layers = (0..layers)
                .map(|i| {
                    let fan_in = if i == 0 { concat } else { d };
                    push(format!("{prefix}.mlp{i}"), vec![d, fan_in], group)
                })
                .collect();
            EncoderIds { grids, layers }
        };
        let nu = encoder("f_nu", arch.nu_layers, Group::Velocity);
        let tau = encoder("f_tau", arch.tau_layers, Group::FlowMap);
        let gates = (0..arch.depth)
            .map(|l| {
                let g = if l == 0 { Group::Velocity } else { Group::FlowMap };
                push(format!("m{l}"), vec![d], g)
            })
            .collect();
        let residual = (1..arch.depth)
            .map(|l| push(format!("w{l}"), vec![d, d], Group::FlowMap))
            .collect();
        let output = push("w_out".into(), vec![arch.n, d], Group::Velocity);
        Layout {
            tensors,
            total,
            nu,
            tau,
            gates,
            residual,
            output,
        }
    }

    pub fn find(&self, name: &str) -> Option<&TensorInfo> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn is_grid(&self, id: usize) -> bool {
        self.nu.grids.contains(&id) || self.tau.grids.contains(&id)
    }
}
