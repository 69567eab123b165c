use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::NeuralError;

/// How raw observation frames enter the network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSpec {
    /// Two flattened occupancy grids, each projected to a `feature`-wide vector.
    Grids {
        lidar_cells: usize,
        bev_cells: usize,
        feature: usize,
    },
    /// A plain dense vector per frame, fed straight into the trunk.
    Vector { dim: usize },
}

/// Static architecture description. Parameter layout is a pure function of this.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input: InputSpec,
    /// Scalars appended to the fused feature at every timestep (intention,
    /// critic action inputs, ...).
    pub extra_inputs: usize,
    pub mlp_in: usize,
    pub lstm: usize,
    pub mlp_out: usize,
    pub head: usize,
    pub seq_len: usize,
}

impl NetworkSpec {
    /// Standard observation network: 32x32x1 lidar and 32x32x3 birdeye grids,
    /// each projected to 256 features.
    pub fn observation(extra_inputs: usize, head: usize, seq_len: usize) -> Self {
        NetworkSpec {
            input: InputSpec::Grids {
                lidar_cells: 1024,
                bev_cells: 3072,
                feature: 256,
            },
            extra_inputs,
            mlp_in: 256,
            lstm: 128,
            mlp_out: 64,
            head,
            seq_len,
        }
    }

    /// Small vector-input network for low-dimensional tasks.
    pub fn vector(dim: usize, extra_inputs: usize, head: usize, seq_len: usize) -> Self {
        NetworkSpec {
            input: InputSpec::Vector { dim },
            extra_inputs,
            mlp_in: 64,
            lstm: 32,
            mlp_out: 32,
            head,
            seq_len,
        }
    }

    /// Width of the per-timestep fused feature vector entering the trunk.
    pub fn fused_width(&self) -> usize {
        let base = match self.input {
            InputSpec::Grids { feature, .. } => 2 * feature,
            InputSpec::Vector { dim } => dim,
        };
        base + self.extra_inputs
    }

    /// Parameter records in declaration order: (name, rows, cols).
    pub fn record_shapes(&self) -> Vec<(&'static str, usize, usize)> {
        let mut shapes = Vec::new();
        if let InputSpec::Grids {
            lidar_cells,
            bev_cells,
            feature,
        } = self.input
        {
            shapes.push(("pre_lidar_w", lidar_cells, feature));
            shapes.push(("pre_lidar_b", 1, feature));
            shapes.push(("pre_bev_w", bev_cells, feature));
            shapes.push(("pre_bev_b", 1, feature));
        }
        let fused = self.fused_width();
        shapes.push(("in_w", fused, self.mlp_in));
        shapes.push(("in_b", 1, self.mlp_in));
        shapes.push(("lstm_wx", self.mlp_in, 4 * self.lstm));
        shapes.push(("lstm_wh", self.lstm, 4 * self.lstm));
        shapes.push(("lstm_b", 1, 4 * self.lstm));
        shapes.push(("out_w", self.lstm, self.mlp_out));
        shapes.push(("out_b", 1, self.mlp_out));
        shapes.push(("head_w", self.mlp_out, self.head));
        shapes.push(("head_b", 1, self.head));
        shapes
    }

    /// FNV-1a over the canonical field encoding; pins checkpoint compatibility.
    pub fn hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |v: u64| {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        match self.input {
            InputSpec::Grids {
                lidar_cells,
                bev_cells,
                feature,
            } => {
                eat(1);
                eat(lidar_cells as u64);
                eat(bev_cells as u64);
                eat(feature as u64);
            }
            InputSpec::Vector { dim } => {
                eat(2);
                eat(dim as u64);
            }
        }
        for v in [
            self.extra_inputs,
            self.mlp_in,
            self.lstm,
            self.mlp_out,
            self.head,
            self.seq_len,
        ] {
            eat(v as u64);
        }
        h
    }

    /// Xavier-uniform init; LSTM forget-gate bias starts at 1.
    pub fn init_params(&self, seed: u64) -> NetworkParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let records = self
            .record_shapes()
            .into_iter()
            .map(|(name, rows, cols)| {
                let data = if name.ends_with("_b") {
                    let mut b = Array2::zeros((rows, cols));
                    if name == "lstm_b" {
                        let hidden = self.lstm;
                        for j in hidden..2 * hidden {
                            b[[0, j]] = 1.0;
                        }
                    }
                    b
                } else {
                    let limit = (6.0 / (rows + cols) as f64).sqrt();
                    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-limit..limit))
                };
                ParamRecord {
                    name,
                    data,
                }
            })
            .collect();
        NetworkParams { records }
    }

    /// All-zero record set, used for gradients and optimizer moments.
    pub fn zero_params(&self) -> NetworkParams {
        let records = self
            .record_shapes()
            .into_iter()
            .map(|(name, rows, cols)| ParamRecord {
                name,
                data: Array2::zeros((rows, cols)),
            })
            .collect();
        NetworkParams { records }
    }
}

#[derive(Debug, Clone)]
pub struct ParamRecord {
    pub name: &'static str,
    pub data: Array2<f64>,
}

/// Ordered parameter records, addressable by flat index. The same layout is
/// reused for gradients and Adam moments.
#[derive(Debug, Clone)]
pub struct NetworkParams {
    pub records: Vec<ParamRecord>,
}

impl NetworkParams {
    pub fn record(&self, name: &str) -> &Array2<f64> {
        &self
            .records
            .iter()
            .find(|r| r.name == name)
            .unwrap_or_else(|| panic!("no record named {name}"))
            .data
    }

    pub fn len(&self) -> usize {
        self.records.iter().map(|r| r.data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get_flat(&self, mut idx: usize) -> f64 {
        for r in &self.records {
            if idx < r.data.len() {
                let cols = r.data.ncols();
                return r.data[[idx / cols, idx % cols]];
            }
            idx -= r.data.len();
        }
        panic!("flat index out of range");
    }

    pub fn set_flat(&mut self, mut idx: usize, value: f64) {
        for r in &mut self.records {
            if idx < r.data.len() {
                let cols = r.data.ncols();
                r.data[[idx / cols, idx % cols]] = value;
                return;
            }
            idx -= r.data.len();
        }
        panic!("flat index out of range");
    }

    pub fn same_layout(&self, other: &NetworkParams) -> bool {
        self.records.len() == other.records.len()
            && self
                .records
                .iter()
                .zip(&other.records)
                .all(|(a, b)| a.name == b.name && a.data.dim() == b.data.dim())
    }

    pub fn all_finite(&self) -> bool {
        self.records
            .iter()
            .all(|r| r.data.iter().all(|v| v.is_finite()))
    }

    pub fn check_layout(&self, other: &NetworkParams) -> Result<(), NeuralError> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(NeuralError::Layout(
                "record names/shapes differ".to_string(),
            ))
        }
    }
}
