use serde::{Deserialize, Serialize};

use super::layers::{BatchNorm2d, Conv2d, Dense, Init, Layer, ParamRef};
use super::ops;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::{seeded, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub dropout_p: f64,
    pub n_classes: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            input_dim: 360,
            hidden_dims: vec![128, 64],
            dropout_p: 0.3,
            n_classes: 2,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dims.len() != 2 {
            return Err(Error::invalid(format!(
                "MLP has exactly two hidden layers, got {}",
                self.hidden_dims.len()
            )));
        }
        if self.input_dim == 0 || self.n_classes < 2 || self.hidden_dims.contains(&0) {
            return Err(Error::invalid(
                "MLP dimensions must be positive".to_string(),
            ));
        }
        check_p(self.dropout_p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnConfig {
    pub in_channels: usize,
    pub mesh_rows: usize,
    pub mesh_cols: usize,
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    pub kernel: usize,
    pub pool: usize,
    pub dropout_p: f64,
    pub n_classes: usize,
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig {
            in_channels: 6,
            mesh_rows: 10,
            mesh_cols: 9,
            conv1_filters: 8,
            conv2_filters: 64,
            kernel: 3,
            pool: 2,
            dropout_p: 0.3,
            n_classes: 2,
        }
    }
}

impl CnnConfig {
    /// The per-stage output shapes implied by the configuration, worked out
    /// from the valid-convolution and pooling arithmetic.
    pub fn expected_trace(&self) -> Result<Vec<Vec<usize>>> {
        let shrink = |n: usize, by: usize| {
            n.checked_sub(by)
                .ok_or_else(|| Error::shape(format!("{n} is too small for kernel {}", by + 1)))
        };
        let k = self.kernel.saturating_sub(1);
        let (h1, w1) = (shrink(self.mesh_rows, k)?, shrink(self.mesh_cols, k)?);
        let (h2, w2) = (shrink(h1, k)?, shrink(w1, k)?);
        if self.pool == 0 || h2 < self.pool || w2 < self.pool {
            return Err(Error::shape(format!(
                "pool {} does not fit {h2}×{w2}",
                self.pool
            )));
        }
        let (h3, w3) = (h2 / self.pool, w2 / self.pool);
        Ok(vec![
            vec![self.in_channels, self.mesh_rows, self.mesh_cols],
            vec![self.conv1_filters, h1, w1],
            vec![self.conv2_filters, h2, w2],
            vec![self.conv2_filters, h3, w3],
            vec![self.conv2_filters * h3 * w3],
            vec![self.n_classes],
        ])
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.n_classes < 2 || self.in_channels == 0 {
            return Err(Error::invalid(
                "CNN dimensions must be positive".to_string(),
            ));
        }
        check_p(self.dropout_p)?;
        self.expected_trace().map(|_| ())
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::invalid(format!("dropout p = {p} must be in [0, 1)")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelConfig {
    Mlp(MlpConfig),
    Cnn(CnnConfig),
}

impl ModelConfig {
    pub fn input_shape(&self) -> Vec<usize> {
        match self {
            ModelConfig::Mlp(m) => vec![m.input_dim],
            ModelConfig::Cnn(c) => vec![c.in_channels, c.mesh_rows, c.mesh_cols],
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            ModelConfig::Mlp(m) => m.n_classes,
            ModelConfig::Cnn(c) => c.n_classes,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelConfig::Mlp(_) => "mlp",
            ModelConfig::Cnn(_) => "cnn",
        }
    }
}

/// A feed-forward stack of layers built from a [`ModelConfig`].
#[derive(Debug, Clone)]
pub struct Network {
    config: ModelConfig,
    layers: Vec<Layer>,
}

impl Network {
    /// Builds the network with seeded initialisation. For the CNN the
    /// realised shape trace must equal [`CnnConfig::expected_trace`].
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = seeded(seed);
        let layers = match &config {
            ModelConfig::Mlp(m) => {
                m.validate()?;
                mlp_layers(m, &mut rng)
            }
            ModelConfig::Cnn(c) => {
                c.validate()?;
                cnn_layers(c, &mut rng)
            }
        };
        let net = Network { config, layers };
        if let ModelConfig::Cnn(c) = &net.config {
            let got = net.shape_trace()?;
            let want = c.expected_trace()?;
            if got != want {
                return Err(Error::shape(format!(
                    "CNN shape trace {got:?} differs from the expected {want:?}"
                )));
            }
        }
        Ok(net)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Item shapes from the input through each layer that changes the shape.
    pub fn shape_trace(&self) -> Result<Vec<Vec<usize>>> {
        let mut s = self.config.input_shape();
        let mut trace = vec![s.clone()];
        for l in &self.layers {
            s = l.out_shape(&s)?;
            if trace.last() != Some(&s) {
                trace.push(s.clone());
            }
        }
        Ok(trace)
    }

    pub fn has_batchnorm(&self) -> bool {
        self.layers
            .iter()
            .any(|l| matches!(l, Layer::BatchNorm2d(_)))
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let want = self.config.input_shape();
        if x.shape().len() != want.len() + 1 || x.shape()[1..] != want[..] {
            return Err(Error::shape(format!(
                "model expects N×{want:?}, got {:?}",
                x.shape()
            )));
        }
        Ok(())
    }

    /// Recording forward pass. `rng` switches on train mode (dropout and
    /// batch statistics); `None` runs eval mode.
    pub fn forward(&mut self, x: &Tensor, mut rng: Option<&mut Rng>) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = x.clone();
        for l in &mut self.layers {
            h = l.forward(&h, rng.as_deref_mut())?;
        }
        Ok(h)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<()> {
        let mut g = grad.clone();
        for l in self.layers.iter_mut().rev() {
            g = l.backward(&g)?;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.layers.iter_mut().for_each(Layer::zero_grad);
    }

    /// Zeroes gradients, runs forward, loss and backward; returns the loss.
    pub fn loss_and_grad(
        &mut self,
        x: &Tensor,
        labels: &[u8],
        rng: Option<&mut Rng>,
    ) -> Result<f64> {
        self.zero_grad();
        let logits = self.forward(x, rng)?;
        let (loss, probs) = ops::softmax_cross_entropy(&logits, labels)?;
        self.backward(&ops::softmax_cross_entropy_grad(&probs, labels))?;
        Ok(loss)
    }

    /// Eval-mode logits; does not mutate the network.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = x.clone();
        for l in &self.layers {
            h = l.infer(&h)?;
        }
        Ok(h)
    }

    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        ops::softmax(&self.logits(x)?)
    }

    /// Argmax labels and class probabilities.
    pub fn predict(&self, x: &Tensor) -> Result<(Vec<u8>, Tensor)> {
        let p = self.predict_proba(x)?;
        Ok((argmax_rows(&p), p))
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<ParamRef<'_>> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn buffers(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(Layer::buffers).collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.layers
            .iter_mut()
            .flat_map(Layer::buffers_mut)
            .collect()
    }
}

/// Index of the largest entry of each row; ties go to the lower class.
pub fn argmax_rows(p: &Tensor) -> Vec<u8> {
    let k = p.shape()[1];
    p.data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            best as u8
        })
        .collect()
}

fn mlp_layers(m: &MlpConfig, rng: &mut Rng) -> Vec<Layer> {
    let mut layers = Vec::new();
    let mut d = m.input_dim;
    for &h in &m.hidden_dims {
        layers.push(Layer::Dense(Dense::new(d, h, Init::HeUniform, rng)));
        layers.push(Layer::relu());
        layers.push(Layer::dropout(m.dropout_p));
        d = h;
    }
    layers.push(Layer::Dense(Dense::new(
        d,
        m.n_classes,
        Init::GlorotUniform,
        rng,
    )));
    layers
}

fn cnn_layers(c: &CnnConfig, rng: &mut Rng) -> Vec<Layer> {
    let k = c.kernel;
    let h = (c.mesh_rows - 2 * (k - 1)) / c.pool;
    let w = (c.mesh_cols - 2 * (k - 1)) / c.pool;
    vec![
        Layer::Conv2d(Conv2d::new(c.in_channels, c.conv1_filters, k, rng)),
        Layer::BatchNorm2d(BatchNorm2d::new(c.conv1_filters)),
        Layer::relu(),
        Layer::Conv2d(Conv2d::new(c.conv1_filters, c.conv2_filters, k, rng)),
        Layer::BatchNorm2d(BatchNorm2d::new(c.conv2_filters)),
        Layer::relu(),
        Layer::maxpool(c.pool, c.pool),
        Layer::dropout(c.dropout_p),
        Layer::flatten(),
        Layer::Dense(Dense::new(
            c.conv2_filters * h * w,
            c.n_classes,
            Init::GlorotUniform,
            rng,
        )),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cnn_trace_matches_reference_architecture() {
        let net = Network::new(ModelConfig::Cnn(CnnConfig::default()), 1).unwrap();
        let want: Vec<Vec<usize>> = vec![
            vec![6, 10, 9],
            vec![8, 8, 7],
            vec![64, 6, 5],
            vec![64, 3, 2],
            vec![384],
            vec![2],
        ];
        assert_eq!(net.shape_trace().unwrap(), want);
        let x = Tensor::zeros(&[3, 6, 10, 9]);
        assert_eq!(net.logits(&x).unwrap().shape(), &[3, 2]);
    }

    #[test]
    fn mlp_has_three_weight_layers() {
        let net = Network::new(ModelConfig::Mlp(MlpConfig::default()), 1).unwrap();
        let dense = net
            .layers()
            .iter()
            .filter(|l| matches!(l, Layer::Dense(_)))
            .count();
        assert_eq!(dense, 3);
        assert_eq!(
            net.shape_trace().unwrap(),
            vec![vec![360], vec![128], vec![64], vec![2]]
        );
        let bad = MlpConfig {
            hidden_dims: vec![10],
            ..MlpConfig::default()
        };
        assert!(Network::new(ModelConfig::Mlp(bad), 1).is_err());
    }

    #[test]
    fn undersized_mesh_is_a_constructor_error() {
        let bad = CnnConfig {
            mesh_rows: 4,
            ..CnnConfig::default()
        };
        assert!(Network::new(ModelConfig::Cnn(bad), 1).is_err());
    }

    #[test]
    fn predict_is_argmax_and_repeatable() {
        let p = Tensor::new(&[2, 2], vec![0.9, 0.1, 0.2, 0.8]).unwrap();
        assert_eq!(argmax_rows(&p), vec![0, 1]);
        let net = Network::new(ModelConfig::Mlp(MlpConfig::default()), 4).unwrap();
        let x = Tensor::new(&[5, 360], (0..1800).map(|i| (i as f64).sin()).collect()).unwrap();
        let a = net.predict(&x).unwrap();
        let b = net.predict(&x).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        for row in a.1.data().chunks(2) {
            assert!((row[0] + row[1] - 1.0).abs() < 1e-12);
            assert_eq!(a.0.len(), 5);
        }
    }

    #[test]
    fn wrong_input_shape_rejected() {
        let net = Network::new(ModelConfig::Mlp(MlpConfig::default()), 4).unwrap();
        assert!(net.logits(&Tensor::zeros(&[2, 359])).is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let c = ModelConfig::Cnn(CnnConfig::default());
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains("\"kind\":\"cnn\""));
        assert_eq!(serde_json::from_str::<ModelConfig>(&s).unwrap(), c);
    }
}
