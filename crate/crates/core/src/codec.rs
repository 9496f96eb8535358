//! The five parametric transforms at desk scale, built as static graphs over
//! one shared parameter table.
//!
//! Parameter prefixes: `phi` analysis, `theta` synthesis, `psi1`
//! hyper-analysis, `psi2` hyper-synthesis, `omega` factorized density and
//! `gamma` classifier.

use std::collections::HashMap;
use std::path::Path;

use dsscc_autodiff::{uniform_init, Graph, ModelParams, NodeId, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::entropy::factorized;
use crate::error::{CoreError, Result};

pub const CODEC_PREFIXES: [&str; 5] = ["phi", "theta", "psi1", "psi2", "omega"];
pub const CLASSIFIER_PREFIX: &str = "gamma";

/// Spatial reduction of the analysis transform.
pub const DOWNSAMPLE: usize = 4;
/// Further reduction of the hyper-analysis transform.
pub const HYPER_DOWNSAMPLE: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecConfig {
    pub height: usize,
    pub width: usize,
    pub y_channels: usize,
    pub z_channels: usize,
    /// Hidden width of the four codec transforms.
    pub filters: usize,
    pub classes: usize,
    pub classifier_filters: usize,
    pub sigma_floor: f32,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            height: 32,
            width: 32,
            y_channels: 48,
            z_channels: 32,
            filters: 32,
            classes: 10,
            classifier_filters: 16,
            sigma_floor: 0.05,
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        let f = DOWNSAMPLE * HYPER_DOWNSAMPLE;
        if self.height == 0 || self.width == 0 || self.height % f != 0 || self.width % f != 0 {
            return Err(CoreError::Config(format!("image {}x{} not divisible by {f}", self.height, self.width)));
        }
        if self.y_channels == 0 || self.z_channels == 0 || self.filters == 0 || self.classifier_filters == 0 {
            return Err(CoreError::Config("channel counts must be positive".into()));
        }
        if self.classes < 2 {
            return Err(CoreError::Config("need at least two classes".into()));
        }
        if !(self.sigma_floor > 0.0) {
            return Err(CoreError::Config("sigma_floor must be positive".into()));
        }
        Ok(())
    }

    pub fn image_shape(&self, batch: usize) -> [usize; 4] {
        [batch, self.height, self.width, 3]
    }

    pub fn y_shape(&self, batch: usize) -> [usize; 4] {
        [batch, self.height / DOWNSAMPLE, self.width / DOWNSAMPLE, self.y_channels]
    }

    pub fn z_shape(&self, batch: usize) -> [usize; 4] {
        let f = DOWNSAMPLE * HYPER_DOWNSAMPLE;
        [batch, self.height / f, self.width / f, self.z_channels]
    }

    /// Source dimension `M = 3 H W`.
    pub fn source_dim(&self) -> usize {
        3 * self.height * self.width
    }
}

struct Init<'a> {
    params: &'a mut ModelParams,
    rng: ChaCha8Rng,
}

impl Init<'_> {
    fn conv(&mut self, name: &str, k: usize, cin: usize, cout: usize) {
        let w = uniform_init(&mut self.rng, &[k, k, cin, cout], k * k * cin);
        self.params.insert(format!("{name}.w"), w);
        self.params.insert(format!("{name}.b"), Tensor::zeros(&[cout]));
    }

    /// Uniform He initialization, for layers followed by a ReLU.
    fn relu_conv(&mut self, name: &str, k: usize, cin: usize, cout: usize) {
        let w = uniform_init(&mut self.rng, &[k, k, cin, cout], k * k * cin).map(|v| v * 6f32.sqrt());
        self.params.insert(format!("{name}.w"), w);
        self.params.insert(format!("{name}.b"), Tensor::zeros(&[cout]));
    }

    fn deconv(&mut self, name: &str, k: usize, cin: usize, cout: usize) {
        let w = uniform_init(&mut self.rng, &[k, k, cout, cin], k * k * cin);
        self.params.insert(format!("{name}.w"), w);
        self.params.insert(format!("{name}.b"), Tensor::zeros(&[cout]));
    }

    fn dense(&mut self, name: &str, cin: usize, cout: usize) {
        let w = uniform_init(&mut self.rng, &[cin, cout], cin);
        self.params.insert(format!("{name}.w"), w);
        self.params.insert(format!("{name}.b"), Tensor::zeros(&[cout]));
    }

    /// `beta = 1`, `gamma = 0.1 I` in raw form.
    fn gdn(&mut self, name: &str, c: usize) {
        let u = (1.0f32 - dsscc_autodiff::GDN_BETA_MIN).sqrt();
        let v = 0.1f32.sqrt();
        self.params.insert(format!("{name}.beta"), Tensor::full(&[c], u));
        self.params.insert(format!("{name}.gamma"), Tensor::from_fn(&[c, c], |i| if i % (c + 1) == 0 { v } else { 0.0 }));
    }
}

/// Fresh parameters for every sub-network.
pub fn init_params(cfg: &CodecConfig, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    let mut params = ModelParams::new();
    let mut init = Init { params: &mut params, rng: ChaCha8Rng::seed_from_u64(seed) };
    let (n, cy, cz) = (cfg.filters, cfg.y_channels, cfg.z_channels);
    init.conv("phi.conv0", 9, 3, n);
    init.gdn("phi.gdn0", n);
    init.conv("phi.conv1", 5, n, n);
    init.gdn("phi.gdn1", n);
    init.conv("phi.conv2", 5, n, n);
    init.gdn("phi.gdn2", n);
    init.conv("phi.conv3", 5, n, cy);

    init.deconv("theta.deconv0", 5, cy, n);
    init.gdn("theta.igdn0", n);
    init.deconv("theta.deconv1", 5, n, n);
    init.gdn("theta.igdn1", n);
    init.deconv("theta.deconv2", 5, n, n);
    init.gdn("theta.igdn2", n);
    init.deconv("theta.deconv3", 9, n, 3);

    init.conv("psi1.conv0", 5, cy, n);
    init.gdn("psi1.gdn0", n);
    init.conv("psi1.conv1", 5, n, cz);

    init.deconv("psi2.deconv0", 5, cz, n);
    init.gdn("psi2.igdn0", n);
    init.deconv("psi2.deconv1", 5, n, cy);

    let f = cfg.classifier_filters;
    init.relu_conv("gamma.conv0", 3, 3, f);
    init.relu_conv("gamma.conv1", 3, f, 2 * f);
    init.relu_conv("gamma.conv2", 3, 2 * f, 2 * f);
    let flat = (cfg.height / 4) * (cfg.width / 4) * 2 * f;
    init.dense("gamma.dense", flat, cfg.classes);

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6f6d_6567_61);
    factorized::init_params(&mut params, "omega", cz, &mut rng);
    Ok(params)
}

fn conv(g: &mut Graph, x: NodeId, name: &str, stride: usize, pad: usize) -> NodeId {
    let w = g.param(&format!("{name}.w"));
    let b = g.param(&format!("{name}.b"));
    g.conv2d(x, w, Some(b), stride, pad)
}

fn deconv(g: &mut Graph, x: NodeId, name: &str, stride: usize, pad: usize) -> NodeId {
    let w = g.param(&format!("{name}.w"));
    let b = g.param(&format!("{name}.b"));
    g.conv_transpose2d(x, w, Some(b), stride, pad, stride - 1)
}

fn gdn(g: &mut Graph, x: NodeId, name: &str, inverse: bool) -> NodeId {
    let beta = g.param(&format!("{name}.beta"));
    let gamma = g.param(&format!("{name}.gamma"));
    if inverse {
        g.igdn(x, beta, gamma)
    } else {
        g.gdn(x, beta, gamma)
    }
}

/// `f_phi`: image in `[0, 255]` to `y`.
pub fn analysis(g: &mut Graph, x: NodeId) -> NodeId {
    let h = g.scale(x, 1.0 / 255.0);
    let h = conv(g, h, "phi.conv0", 2, 4);
    let h = gdn(g, h, "phi.gdn0", false);
    let h = conv(g, h, "phi.conv1", 2, 2);
    let h = gdn(g, h, "phi.gdn1", false);
    let h = conv(g, h, "phi.conv2", 1, 2);
    let h = gdn(g, h, "phi.gdn2", false);
    conv(g, h, "phi.conv3", 1, 2)
}

/// `g_theta`: `y~` to an image in `[0, 255]`.
pub fn synthesis(g: &mut Graph, y: NodeId) -> NodeId {
    let h = deconv(g, y, "theta.deconv0", 1, 2);
    let h = gdn(g, h, "theta.igdn0", true);
    let h = deconv(g, h, "theta.deconv1", 1, 2);
    let h = gdn(g, h, "theta.igdn1", true);
    let h = deconv(g, h, "theta.deconv2", 2, 2);
    let h = gdn(g, h, "theta.igdn2", true);
    let h = deconv(g, h, "theta.deconv3", 2, 4);
    let h = g.relu(h);
    let h = g.scale(h, 255.0);
    g.clamp(h, 0.0, 255.0)
}

/// `h_psi1`: `y` to `z`.
pub fn hyper_analysis(g: &mut Graph, y: NodeId) -> NodeId {
    let h = conv(g, y, "psi1.conv0", 2, 2);
    let h = gdn(g, h, "psi1.gdn0", false);
    conv(g, h, "psi1.conv1", 2, 2)
}

/// `h_psi2`: `z~` to `sigma >= floor`.
pub fn hyper_synthesis(g: &mut Graph, z: NodeId, floor: f32) -> NodeId {
    let h = deconv(g, z, "psi2.deconv0", 2, 2);
    let h = gdn(g, h, "psi2.igdn0", true);
    let h = deconv(g, h, "psi2.deconv1", 2, 2);
    let h = g.softplus(h);
    g.lower_bound(h, floor)
}

/// `Q_gamma` logits for an image in `[0, 255]`.
pub fn classifier_logits(g: &mut Graph, x: NodeId) -> NodeId {
    let h = g.scale(x, 1.0 / 255.0);
    let h = conv(g, h, "gamma.conv0", 1, 1);
    let h = g.relu(h);
    let h = conv(g, h, "gamma.conv1", 2, 1);
    let h = g.relu(h);
    let h = conv(g, h, "gamma.conv2", 2, 1);
    let h = g.relu(h);
    let h = g.flatten(h);
    let w = g.param("gamma.dense.w");
    let b = g.param("gamma.dense.b");
    g.dense(h, w, Some(b))
}

fn single(build: impl FnOnce(&mut Graph, NodeId) -> NodeId) -> Graph {
    let mut g = Graph::new();
    let x = g.input("in");
    let out = build(&mut g, x);
    g.set_output("out", out);
    g
}

/// Parameters plus one inference graph per transform.
#[derive(Clone, Debug)]
pub struct CodecModel {
    pub config: CodecConfig,
    pub params: ModelParams,
    analysis: Graph,
    synthesis: Graph,
    hyper_analysis: Graph,
    hyper_synthesis: Graph,
    classifier: Graph,
}

impl CodecModel {
    pub fn new(config: CodecConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        Self::with_params(config, params)
    }

    pub fn with_params(config: CodecConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        let reference = init_params(&config, 0)?;
        for (name, p) in reference.iter() {
            let have = params.get(name).ok_or_else(|| CoreError::Config(format!("checkpoint lacks {name}")))?;
            if have.shape() != p.value.shape() {
                return Err(CoreError::Config(format!(
                    "{name}: checkpoint shape {:?}, config needs {:?}",
                    have.shape(),
                    p.value.shape()
                )));
            }
        }
        let floor = config.sigma_floor;
        Ok(CodecModel {
            analysis: single(analysis),
            synthesis: single(synthesis),
            hyper_analysis: single(hyper_analysis),
            hyper_synthesis: single(move |g, z| hyper_synthesis(g, z, floor)),
            classifier: single(|g, x| {
                let l = classifier_logits(g, x);
                g.softmax(l)
            }),
            config,
            params,
        })
    }

    pub fn load(config: CodecConfig, path: impl AsRef<Path>) -> Result<Self> {
        Self::with_params(config, ModelParams::load(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(self.params.save(path)?)
    }

    fn run(graph: &mut Graph, params: &ModelParams, input: &Tensor) -> Result<Tensor> {
        let mut inputs = HashMap::new();
        inputs.insert("in".to_string(), input.clone());
        let mut out = graph.forward(params, &inputs)?;
        Ok(out.remove("out").expect("graph output"))
    }

    fn expect_shape(what: &str, t: &Tensor, shape: &[usize]) -> Result<()> {
        if t.shape() != shape {
            return Err(CoreError::Dimension(format!("{what}: got {:?}, expected {shape:?}", t.shape())));
        }
        Ok(())
    }

    fn batch(t: &Tensor) -> usize {
        t.shape().first().copied().unwrap_or(0)
    }

    pub fn analyze(&mut self, x: &Tensor) -> Result<Tensor> {
        Self::expect_shape("image", x, &self.config.image_shape(Self::batch(x)))?;
        Self::run(&mut self.analysis, &self.params, x)
    }

    pub fn synthesize(&mut self, y: &Tensor) -> Result<Tensor> {
        Self::expect_shape("y", y, &self.config.y_shape(Self::batch(y)))?;
        Self::run(&mut self.synthesis, &self.params, y)
    }

    pub fn hyper_analyze(&mut self, y: &Tensor) -> Result<Tensor> {
        Self::expect_shape("y", y, &self.config.y_shape(Self::batch(y)))?;
        Self::run(&mut self.hyper_analysis, &self.params, y)
    }

    pub fn hyper_synthesize(&mut self, z: &Tensor) -> Result<Tensor> {
        Self::expect_shape("z", z, &self.config.z_shape(Self::batch(z)))?;
        Self::run(&mut self.hyper_synthesis, &self.params, z)
    }

    /// Class probabilities, one row per image.
    pub fn classify(&mut self, x: &Tensor) -> Result<Tensor> {
        Self::expect_shape("image", x, &self.config.image_shape(Self::batch(x)))?;
        Self::run(&mut self.classifier, &self.params, x)
    }

    /// Digest of the parameters under the given prefixes.
    pub fn digest(&self, prefixes: &[&str]) -> u64 {
        self.params.digest(|n| prefixes.iter().any(|p| n.starts_with(&format!("{p}."))))
    }
}
