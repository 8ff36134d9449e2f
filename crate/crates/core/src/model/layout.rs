use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct ConvLayer {
    pub w: usize,
    pub b: usize,
    pub kernel: usize,
    pub stride: usize,
    /// Nearest ×2 upsampling before the convolution.
    pub upsample: bool,
    pub activate: bool,
}

impl ConvLayer {
    pub fn padding(&self) -> usize {
        (self.kernel - 1) / 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct LinearLayer {
    pub w: usize,
    pub b: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Decoder {
    pub blocks: Vec<ConvLayer>,
    pub head: ConvLayer,
    pub sigma_head: Option<ConvLayer>,
}

/// Parameter indices for every layer, in storage order.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub enc_g: Vec<ConvLayer>,
    pub enc_l: Vec<ConvLayer>,
    pub phi_g: [LinearLayer; 2],
    pub phi_l: [LinearLayer; 2],
    pub dec_g: Decoder,
    pub dec_l: Decoder,
    pub enc_t: Vec<ConvLayer>,
    pub dec_t: Decoder,
    pub names: Vec<String>,
    pub shapes: Vec<Vec<usize>>,
    inits: Vec<Init>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    Uniform(f64),
    Constant(f64),
}

fn block_kernel(i: usize, blocks: usize) -> usize {
    if i + 1 == blocks && blocks > 1 {
        3
    } else if i == 0 {
        7
    } else {
        5
    }
}

#[derive(Default)]
struct Builder {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    inits: Vec<Init>,
}

impl Builder {
    fn push(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.names.push(name);
        self.shapes.push(shape);
        self.inits.push(init);
        self.names.len() - 1
    }

    fn conv(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        upsample: bool,
        activate: bool,
        bias: f64,
    ) -> ConvLayer {
        let bound = (1.0 / (cin * kernel) as f64).sqrt();
        let w = self.push(format!("{name}.w"), vec![cout, cin, kernel], Init::Uniform(bound));
        let b = self.push(format!("{name}.b"), vec![cout], Init::Constant(bias));
        ConvLayer {
            w,
            b,
            kernel,
            stride,
            upsample,
            activate,
        }
    }

    fn linear(&mut self, name: &str, fin: usize, fout: usize) -> LinearLayer {
        let bound = (1.0 / fin as f64).sqrt();
        let w = self.push(format!("{name}.w"), vec![fout, fin], Init::Uniform(bound));
        let b = self.push(format!("{name}.b"), vec![fout], Init::Constant(0.0));
        LinearLayer { w, b }
    }

    /// Stride-2 encoder; returns the layers and their output widths.
    fn encoder(&mut self, name: &str, widths: &[usize]) -> Vec<ConvLayer> {
        let n = widths.len();
        let mut cin = 1;
        widths
            .iter()
            .enumerate()
            .map(|(i, &cout)| {
                let l = self.conv(
                    &format!("{name}.{i}"),
                    cin,
                    cout,
                    block_kernel(i, n),
                    2,
                    false,
                    i + 1 < n,
                    0.0,
                );
                cin = cout;
                l
            })
            .collect()
    }

    /// Mirror of an encoder with widths `widths`, fed `input` channels.
    fn decoder(&mut self, name: &str, widths: &[usize], input: usize, with_sigma: bool) -> Decoder {
        let n = widths.len();
        let mut cin = input;
        let blocks = (0..n)
            .map(|j| {
                let cout = if j + 1 < n { widths[n - 2 - j] } else { widths[0] };
                let l = self.conv(
                    &format!("{name}.{j}"),
                    cin,
                    cout,
                    block_kernel(n - 1 - j, n),
                    1,
                    true,
                    true,
                    0.0,
                );
                cin = cout;
                l
            })
            .collect();
        let head = self.conv(&format!("{name}.head"), cin, 1, 3, 1, false, false, 0.0);
        // softplus(ln(e − 1)) = 1, so σ starts near one.
        let sigma_head = with_sigma.then(|| {
            self.conv(
                &format!("{name}.sigma"),
                cin,
                1,
                3,
                1,
                false,
                false,
                (std::f64::consts::E - 1.0).ln(),
            )
        });
        Decoder {
            blocks,
            head,
            sigma_head,
        }
    }
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let f = cfg.feature_dim;
        let mut global_widths = cfg.channels.clone();
        global_widths.push(f);
        let mut local_widths = cfg.channels[..cfg.channels.len() - 1].to_vec();
        local_widths.push(f);

        let mut b = Builder::default();
        let enc_g = b.encoder("enc_g", &global_widths);
        let enc_l = b.encoder("enc_l", &local_widths);
        let phi_g = [b.linear("phi_g.0", f, f), b.linear("phi_g.1", f, f)];
        let phi_l = [b.linear("phi_l.0", f, f), b.linear("phi_l.1", f, f)];
        let dec_g = b.decoder("dec_g", &global_widths, f, true);
        let dec_l = b.decoder("dec_l", &local_widths, f, true);
        let enc_t = b.encoder("enc_t", &global_widths);
        let dec_t = b.decoder("dec_t", &global_widths, 2 * f, false);
        Ok(Self {
            enc_g,
            enc_l,
            phi_g,
            phi_l,
            dec_g,
            dec_l,
            enc_t,
            dec_t,
            names: b.names,
            shapes: b.shapes,
            inits: b.inits,
        })
    }
}

/// All network weights, stored in a fixed order with stable names.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub(crate) layout: Layout,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    /// Uniform `±sqrt(1/fan_in)` weights, zero biases, σ-head biases at
    /// `ln(e − 1)`; fully determined by `config.seed`.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        let layout = Layout::new(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let tensors = layout
            .shapes
            .iter()
            .zip(&layout.inits)
            .map(|(shape, init)| {
                let n: usize = shape.iter().product();
                let data = match *init {
                    Init::Uniform(a) => (0..n).map(|_| rng.gen_range(-a..a)).collect(),
                    Init::Constant(c) => vec![c; n],
                };
                Tensor::new(shape.clone(), data)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: config.clone(),
            layout,
            tensors,
        })
    }

    /// Rebuilds parameters from named tensors, checking names and shapes
    /// against the layout implied by `config`.
    pub fn from_named(config: &ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        let layout = Layout::new(config)?;
        if named.len() != layout.names.len() {
            return Err(Error::dim(format!(
                "expected {} parameter tensors, got {}",
                layout.names.len(),
                named.len()
            )));
        }
        let mut tensors = Vec::with_capacity(named.len());
        for ((name, t), (want, shape)) in named.into_iter().zip(layout.names.iter().zip(&layout.shapes)) {
            if &name != want || t.shape() != shape.as_slice() {
                return Err(Error::dim(format!(
                    "parameter `{name}` {:?} does not match expected `{want}` {shape:?}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(Error::Numeric(format!("parameter `{name}` is not finite")));
            }
            tensors.push(t);
        }
        Ok(Self {
            config: config.clone(),
            layout,
            tensors,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.layout.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.layout
            .names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.layout.names.iter().position(|n| n == name)?;
        Some(&mut self.tensors[i])
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Parameter count for a config without allocating the weights.
    pub fn count_for(config: &ModelConfig) -> Result<usize> {
        Ok(Layout::new(config)?
            .shapes
            .iter()
            .map(|s| s.iter().product::<usize>())
            .sum())
    }

    /// Name prefix up to the first dot, used to group report lines.
    pub fn group_of(name: &str) -> &str {
        name.split('.').next().unwrap_or(name)
    }
}
