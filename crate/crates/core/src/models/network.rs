use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::params::{FilterGroup, GroupRole, ParamSet};
use super::ArchitectureSpec;
use crate::error::{Error, Result};
use crate::objective::{LossValue, Reduction};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    /// Same-padded convolution.
    Conv { kernel: usize },
    /// 2x2 stride-2 transposed convolution.
    Upsample,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerInfo {
    pub name: String,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Indices of this layer's filter groups in the parameter set.
    pub filters: Range<usize>,
    pub bias: usize,
}

impl LayerInfo {
    fn kernel(&self) -> usize {
        match self.kind {
            LayerKind::Conv { kernel } => kernel,
            LayerKind::Upsample => 2,
        }
    }

    fn filter_shape(&self) -> [usize; 3] {
        let k = self.kernel();
        [self.in_channels, k, k]
    }

    /// Number of products summed into each output element.
    pub fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Conv { kernel } => self.in_channels * kernel * kernel,
            LayerKind::Upsample => self.in_channels,
        }
    }
}

type LayerId = usize;

struct SkipPath {
    residual: Vec<[LayerId; 2]>,
    merge: LayerId,
}

struct DecoderStage {
    stage: usize,
    up: LayerId,
    skip: Option<SkipPath>,
    trunk: LayerId,
}

/// A built architecture: the layer plan plus its skip wiring.
pub struct Model {
    spec: ArchitectureSpec,
    layers: Vec<LayerInfo>,
    encoder: Vec<[LayerId; 2]>,
    bottleneck: [LayerId; 2],
    decoder: Vec<DecoderStage>,
    head: LayerId,
    group_count: usize,
}

struct PlanBuilder {
    layers: Vec<LayerInfo>,
    next_group: usize,
}

impl PlanBuilder {
    fn layer(&mut self, name: String, kind: LayerKind, cin: usize, cout: usize) -> LayerId {
        let filters = self.next_group..self.next_group + cout;
        let bias = filters.end;
        self.next_group = bias + 1;
        self.layers.push(LayerInfo {
            name,
            kind,
            in_channels: cin,
            out_channels: cout,
            filters,
            bias,
        });
        self.layers.len() - 1
    }

    fn conv3(&mut self, name: String, cin: usize, cout: usize) -> LayerId {
        self.layer(name, LayerKind::Conv { kernel: 3 }, cin, cout)
    }
}

impl Model {
    pub fn build(spec: &ArchitectureSpec) -> Result<Self> {
        spec.validate()?;
        let mut b = PlanBuilder {
            layers: Vec::new(),
            next_group: 0,
        };
        let mut encoder = Vec::with_capacity(spec.depth);
        let mut cin = spec.in_channels;
        for s in 0..spec.depth {
            let c = spec.stage_channels(s);
            let first = b.conv3(format!("enc{s}.conv0"), cin, c);
            let second = b.conv3(format!("enc{s}.conv1"), c, c);
            encoder.push([first, second]);
            cin = c;
        }
        let cb = spec.stage_channels(spec.depth);
        let bottleneck = [
            b.conv3("bottleneck.conv0".into(), cin, cb),
            b.conv3("bottleneck.conv1".into(), cb, cb),
        ];
        let mut decoder = Vec::with_capacity(spec.depth);
        let mut cprev = cb;
        for s in (0..spec.depth).rev() {
            let c = spec.stage_channels(s);
            let up = b.layer(format!("dec{s}.up"), LayerKind::Upsample, cprev, c);
            let skip = if spec.has_skip(s) {
                let blocks = spec.residual_blocks_per_skip.get(s).copied().unwrap_or(0);
                let residual = (0..blocks)
                    .map(|r| {
                        [
                            b.conv3(format!("skip{s}.res{r}.conv0"), c, c),
                            b.conv3(format!("skip{s}.res{r}.conv1"), c, c),
                        ]
                    })
                    .collect();
                let merge = b.conv3(format!("dec{s}.merge"), 2 * c, c);
                Some(SkipPath { residual, merge })
            } else {
                None
            };
            let trunk = b.conv3(format!("dec{s}.conv"), c, c);
            decoder.push(DecoderStage {
                stage: s,
                up,
                skip,
                trunk,
            });
            cprev = c;
        }
        let head = b.layer(
            "head".into(),
            LayerKind::Conv { kernel: 1 },
            spec.base_channels,
            spec.out_channels,
        );
        Ok(Self {
            spec: spec.clone(),
            group_count: b.next_group,
            layers: b.layers,
            encoder,
            bottleneck,
            decoder,
            head,
        })
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[LayerInfo] {
        &self.layers
    }

    /// Number of decoder stages fed by a skip connection.
    pub fn skip_count(&self) -> usize {
        self.decoder.iter().filter(|d| d.skip.is_some()).count()
    }

    pub fn group_count(&self) -> usize {
        self.group_count
    }

    pub fn filter_count(&self) -> usize {
        self.layers.iter().map(|l| l.out_channels).sum()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.out_channels * (l.filter_shape().iter().product::<usize>() + 1))
            .sum()
    }

    /// He-style initialisation: every filter element is drawn from
    /// `N(0, 2 / fan_in)`, biases are zero. Groups are drawn in enumeration
    /// order from one ChaCha stream seeded with `seed`.
    pub fn init_params<T: Scalar>(&self, seed: u64) -> ParamSet<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut groups = Vec::with_capacity(self.group_count);
        for layer in &self.layers {
            let std = (2.0 / layer.fan_in() as f64).sqrt();
            let shape = layer.filter_shape();
            for o in 0..layer.out_channels {
                let tensor = Tensor::from_fn(&shape, |_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    T::from_f64_lossy(std * z)
                });
                groups.push(FilterGroup {
                    name: format!("{}.filter{o}", layer.name),
                    role: GroupRole::ConvFilter,
                    tensor,
                });
            }
            groups.push(FilterGroup {
                name: format!("{}.bias", layer.name),
                role: GroupRole::Bias,
                tensor: Tensor::zeros(&[layer.out_channels]),
            });
        }
        ParamSet::new(groups)
    }

    /// Checks that `params` has exactly this model's group layout.
    pub fn check_params<T: Scalar>(&self, params: &ParamSet<T>) -> Result<()> {
        if params.group_count() != self.group_count {
            return Err(Error::shape(
                "Model::check_params",
                format!(
                    "{} groups, model has {}",
                    params.group_count(),
                    self.group_count
                ),
            ));
        }
        for layer in &self.layers {
            let shape = layer.filter_shape();
            for gi in layer.filters.clone() {
                let g = &params.groups()[gi];
                if g.role != GroupRole::ConvFilter || g.tensor.shape() != shape {
                    return Err(Error::shape(
                        "Model::check_params",
                        format!("group {} ({}) should be a {shape:?} filter", gi, g.name),
                    ));
                }
            }
            let bias = &params.groups()[layer.bias];
            if bias.role != GroupRole::Bias || bias.tensor.shape() != [layer.out_channels] {
                return Err(Error::shape(
                    "Model::check_params",
                    format!(
                        "group {} ({}) should be a bias of {}",
                        layer.bias, bias.name, layer.out_channels
                    ),
                ));
            }
        }
        Ok(())
    }

    fn check_input<T: Scalar>(&self, x: &Tensor<T>) -> Result<()> {
        let (_, c, h, w) = x.dims4()?;
        if c != self.spec.in_channels {
            return Err(Error::shape(
                "Model::forward",
                format!(
                    "input has {c} channels, model expects {}",
                    self.spec.in_channels
                ),
            ));
        }
        let d = self.spec.divisor();
        if h % d != 0 || w % d != 0 {
            return Err(Error::Indivisible {
                height: h,
                width: w,
                divisor: d,
            });
        }
        Ok(())
    }

    /// Places every layer's weight and bias on the tape, assembling each
    /// weight from its per-filter groups.
    fn place_params<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        params: &ParamSet<T>,
        trainable: bool,
    ) -> Vec<(Var, Var)> {
        self.layers
            .iter()
            .map(|layer| {
                let k = layer.kernel();
                let mut data = Vec::with_capacity(layer.out_channels * layer.in_channels * k * k);
                for gi in layer.filters.clone() {
                    data.extend_from_slice(params.groups()[gi].tensor.data());
                }
                let weight = Tensor::new(vec![layer.out_channels, layer.in_channels, k, k], data)
                    .expect("layout checked");
                let bias = params.groups()[layer.bias].tensor.clone();
                if trainable {
                    (g.param(weight), g.param(bias))
                } else {
                    (g.constant(weight), g.constant(bias))
                }
            })
            .collect()
    }

    fn conv<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        vars: &[(Var, Var)],
        id: LayerId,
        x: Var,
    ) -> Result<Var> {
        let (w, b) = vars[id];
        let k = self.layers[id].kernel();
        g.conv2d(x, w, Some(b), 1, k / 2)
    }

    fn conv_relu<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        vars: &[(Var, Var)],
        id: LayerId,
        x: Var,
    ) -> Result<Var> {
        let y = self.conv(g, vars, id, x)?;
        Ok(g.relu(y))
    }

    fn forward_on<T: Scalar>(&self, g: &mut Graph<T>, vars: &[(Var, Var)], x: Var) -> Result<Var> {
        let mut h = x;
        let mut skips = Vec::with_capacity(self.spec.depth);
        for &[c0, c1] in &self.encoder {
            h = self.conv_relu(g, vars, c0, h)?;
            h = self.conv_relu(g, vars, c1, h)?;
            skips.push(h);
            h = g.maxpool2d(h, 2)?;
        }
        h = self.conv_relu(g, vars, self.bottleneck[0], h)?;
        h = self.conv_relu(g, vars, self.bottleneck[1], h)?;
        for stage in &self.decoder {
            let (w, b) = vars[stage.up];
            let up = g.upsample2x(h, w, Some(b))?;
            h = g.relu(up);
            if let Some(skip) = &stage.skip {
                let mut e = skips[stage.stage];
                for &[r0, r1] in &skip.residual {
                    let t = self.conv_relu(g, vars, r0, e)?;
                    let t = self.conv(g, vars, r1, t)?;
                    let sum = g.add(t, e)?;
                    e = g.relu(sum);
                }
                let cat = g.concat_channels(h, e)?;
                h = self.conv_relu(g, vars, skip.merge, cat)?;
            }
            h = self.conv_relu(g, vars, stage.trunk, h)?;
        }
        self.conv(g, vars, self.head, h)
    }

    /// Output for a `[B, in_channels, H, W]` batch; `H` and `W` must be
    /// divisible by `2^depth`.
    pub fn forward<T: Scalar>(&self, params: &ParamSet<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_params(params)?;
        self.check_input(x)?;
        let mut g = Graph::new();
        let vars = self.place_params(&mut g, params, false);
        let xv = g.constant(x.clone());
        let out = self.forward_on(&mut g, &vars, xv)?;
        Ok(g.value(out).clone())
    }

    pub fn loss<T: Scalar>(
        &self,
        params: &ParamSet<T>,
        x: &Tensor<T>,
        target: &Tensor<T>,
        reduction: Reduction,
    ) -> Result<LossValue<T>> {
        let pred = self.forward(params, x)?;
        crate::objective::mse(&pred, target, reduction)
    }

    /// Batch loss and its gradient with respect to every parameter group.
    pub fn loss_and_grad<T: Scalar>(
        &self,
        params: &ParamSet<T>,
        x: &Tensor<T>,
        target: &Tensor<T>,
        reduction: Reduction,
    ) -> Result<(T, ParamSet<T>)> {
        self.check_params(params)?;
        self.check_input(x)?;
        let mut g = Graph::new();
        let vars = self.place_params(&mut g, params, true);
        let xv = g.constant(x.clone());
        let tv = g.constant(target.clone());
        let out = self.forward_on(&mut g, &vars, xv)?;
        let loss = g.mse(out, tv, reduction)?;
        let loss_value = g.value(loss).item();
        let mut grads = g.backward(loss)?;

        let mut groups = params.zeros_like().into_groups();
        for (layer, &(w, b)) in self.layers.iter().zip(&vars) {
            let k = layer.kernel();
            let gw = grads.take_or_zeros(w, &[layer.out_channels, layer.in_channels, k, k]);
            let per_filter = layer.in_channels * k * k;
            for (o, gi) in layer.filters.clone().enumerate() {
                groups[gi]
                    .tensor
                    .data_mut()
                    .copy_from_slice(&gw.data()[o * per_filter..(o + 1) * per_filter]);
            }
            let gb = grads.take_or_zeros(b, &[layer.out_channels]);
            groups[layer.bias]
                .tensor
                .data_mut()
                .copy_from_slice(gb.data());
        }
        Ok((loss_value, ParamSet::new(groups)))
    }
}
