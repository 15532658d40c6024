use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Activation, ModelSpec, Network, ParamSet, Stem, WHITENING_FILTERS};
use crate::element::Element;
use crate::error::{Error, Result};
use crate::tensor::{BatchNormState, BnMode, Tape, Tensor, Var};

/// Input side length the trunk is laid out for.
pub const INPUT_SIZE: usize = 32;

/// Tape handles of one conv -> batch-norm -> activation unit.
#[derive(Debug, Clone, Copy)]
pub struct ConvBnVars {
    pub conv: Var,
    pub gamma: Var,
    pub beta: Var,
}

pub fn conv_bn_act<T: Element>(
    tape: &mut Tape<T>,
    x: Var,
    vars: ConvBnVars,
    state: &mut BatchNormState<T>,
    act: Activation,
    mode: BnMode,
) -> Result<Var> {
    let pad = tape.shape(vars.conv)[2] / 2;
    let y = tape.conv2d(x, vars.conv, None, 1, pad)?;
    let y = tape.batchnorm2d(y, vars.gamma, vars.beta, state, mode)?;
    act.apply(tape, y)
}

/// `x + f(x)` where `f` is two conv-bn-act units that preserve the channel count.
pub fn residual_block<T: Element>(
    tape: &mut Tape<T>,
    x: Var,
    units: [ConvBnVars; 2],
    states: &mut [BatchNormState<T>],
    act: Activation,
    mode: BnMode,
) -> Result<Var> {
    let channels = tape.shape(x).get(1).copied().unwrap_or(0);
    for u in &units {
        let ws = tape.shape(u.conv);
        if ws[0] != channels || ws[1] != channels {
            return Err(Error::shape(
                "residual_block",
                format!("kernel {ws:?} does not preserve {channels} channels"),
            ));
        }
    }
    let [s1, s2] = states else {
        return Err(Error::shape("residual_block", "expected two batch-norm states"));
    };
    let h = conv_bn_act(tape, x, units[0], s1, act, mode)?;
    let h = conv_bn_act(tape, h, units[1], s2, act, mode)?;
    tape.add(x, h)
}

#[derive(Debug, Clone, Copy)]
struct UnitIndex {
    conv: usize,
    gamma: usize,
    beta: usize,
}

/// Unit order: prep, layer1, layer1 residual x2, layer2, layer3, layer3 residual x2.
const UNIT_NAMES: [&str; 8] = [
    "prep",
    "layer1",
    "layer1.res1",
    "layer1.res2",
    "layer2",
    "layer3",
    "layer3.res1",
    "layer3.res2",
];

/// ResNet-9: prep unit, two pooled stages with residual blocks at the second
/// and fourth widths, a pooled middle stage, global max pool and a scaled
/// linear head.
#[derive(Debug, Clone)]
pub struct ResNet9<T> {
    spec: ModelSpec,
    params: ParamSet<T>,
    bn: Vec<BatchNormState<T>>,
    stem_filters: Option<Tensor<T>>,
    units: Vec<UnitIndex>,
    head_weight: usize,
    head_bias: usize,
}

impl<T: Element> ResNet9<T> {
    /// Builds the network with Kaiming-normal (fan-in) conv and linear weights.
    pub fn build(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [_, w1, w2, w3] = spec.widths;
        let prep_in = match spec.stem {
            Stem::Plain => (spec.in_channels, 3),
            Stem::Whitened { .. } => (WHITENING_FILTERS, 1),
        };
        let prep = spec.prep_width();
        // (out, in, kernel) per unit
        let plan = [
            (prep, prep_in.0, prep_in.1),
            (w1, prep, 3),
            (w1, w1, 3),
            (w1, w1, 3),
            (w2, w1, 3),
            (w3, w2, 3),
            (w3, w3, 3),
            (w3, w3, 3),
        ];
        let mut params = ParamSet::new();
        let mut units = Vec::with_capacity(plan.len());
        let mut bn = Vec::with_capacity(plan.len());
        for (name, &(cout, cin, k)) in UNIT_NAMES.iter().zip(&plan) {
            let w = kaiming(&mut rng, &[cout, cin, k, k], cin * k * k)?;
            let conv = params.register(format!("{name}.conv.weight"), w)?;
            let gamma = params.register(format!("{name}.bn.weight"), Tensor::full(&[cout], T::one()))?;
            let beta = params.register(format!("{name}.bn.bias"), Tensor::zeros(&[cout]))?;
            units.push(UnitIndex { conv, gamma, beta });
            bn.push(BatchNormState::new(cout));
        }
        let head_weight = params.register("classifier.weight", kaiming(&mut rng, &[spec.classes, w3], w3)?)?;
        let head_bias = params.register("classifier.bias", Tensor::zeros(&[spec.classes]))?;
        let stem_filters = match &spec.stem {
            Stem::Plain => None,
            Stem::Whitened { filters, .. } => Some(Tensor::from_f64(&[WHITENING_FILTERS, 3, 3, 3], filters)?),
        };
        Ok(ResNet9 {
            spec,
            params,
            bn,
            stem_filters,
            units,
            head_weight,
            head_bias,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// The frozen whitening filters, if the stem is whitened.
    pub fn stem_filters(&self) -> Option<&Tensor<T>> {
        self.stem_filters.as_ref()
    }

    pub fn batchnorm_states(&self) -> &[BatchNormState<T>] {
        &self.bn
    }

    pub(crate) fn unit_names() -> &'static [&'static str] {
        &UNIT_NAMES
    }

    pub(crate) fn stem_filters_mut(&mut self) -> Option<&mut Tensor<T>> {
        self.stem_filters.as_mut()
    }

    fn bind_unit(&self, tape: &mut Tape<T>, i: usize) -> ConvBnVars {
        let u = self.units[i];
        ConvBnVars {
            conv: self.params.bind(tape, u.conv),
            gamma: self.params.bind(tape, u.gamma),
            beta: self.params.bind(tape, u.beta),
        }
    }

    fn unit(&mut self, tape: &mut Tape<T>, x: Var, i: usize, mode: BnMode) -> Result<Var> {
        let vars = self.bind_unit(tape, i);
        conv_bn_act(tape, x, vars, &mut self.bn[i], self.spec.activation, mode)
    }

    fn residual(&mut self, tape: &mut Tape<T>, x: Var, first: usize, mode: BnMode) -> Result<Var> {
        let units = [self.bind_unit(tape, first), self.bind_unit(tape, first + 1)];
        residual_block(
            tape,
            x,
            units,
            &mut self.bn[first..first + 2],
            self.spec.activation,
            mode,
        )
    }
}

fn kaiming<T: Element>(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Result<Tensor<T>> {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    let len = shape.iter().product();
    let data: Vec<f64> = (0..len).map(|_| normal.sample(rng)).collect();
    Tensor::from_f64(shape, &data)
}

impl<T: Element> Network<T> for ResNet9<T> {
    fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    fn forward(&mut self, tape: &mut Tape<T>, x: Var, mode: BnMode) -> Result<Var> {
        let s = tape.shape(x);
        if s.len() != 4 || s[1] != self.spec.in_channels || s[2] != INPUT_SIZE || s[3] != INPUT_SIZE {
            return Err(Error::shape(
                "resnet9",
                format!(
                    "expected [N,{},{INPUT_SIZE},{INPUT_SIZE}] input, got {s:?}",
                    self.spec.in_channels
                ),
            ));
        }
        let mut h = x;
        if let Some(filters) = &self.stem_filters {
            let f = tape.constant(filters);
            h = tape.conv2d(h, f, None, 1, 1)?;
        }
        h = self.unit(tape, h, 0, mode)?;
        h = self.unit(tape, h, 1, mode)?;
        h = tape.maxpool2d(h, 2, 2)?;
        h = self.residual(tape, h, 2, mode)?;
        h = self.unit(tape, h, 4, mode)?;
        h = tape.maxpool2d(h, 2, 2)?;
        h = self.unit(tape, h, 5, mode)?;
        h = tape.maxpool2d(h, 2, 2)?;
        h = self.residual(tape, h, 6, mode)?;
        h = tape.global_maxpool(h)?;
        let w = self.params.bind(tape, self.head_weight);
        let b = self.params.bind(tape, self.head_bias);
        h = tape.linear(h, w, Some(b))?;
        Ok(tape.scale(h, self.spec.head_scale))
    }

    fn batchnorm_states_mut(&mut self) -> Vec<&mut BatchNormState<T>> {
        self.bn.iter_mut().collect()
    }

    fn classes(&self) -> usize {
        self.spec.classes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_parameter_count() {
        // Convs: 64*3*9 + 128*64*9 + 2*128*128*9 + 256*128*9 + 512*256*9 + 2*512*512*9
        //      = 1728 + 73728 + 294912 + 294912 + 1179648 + 4718592 = 6563520
        // BN affine: 2*(64 + 3*128 + 256 + 3*512) = 4480
        // Head: 10*512 + 10 = 5130
        let m = ResNet9::<f32>::build(ModelSpec::default(), 0).unwrap();
        assert_eq!(m.params().num_elements(), 6_573_130);
        assert_eq!(m.params().len(), 8 * 3 + 2);
    }

    #[test]
    fn whitened_stem_needs_rgb() {
        let mut spec = ModelSpec::default().with_whitening(vec![0.0; 729]);
        spec.in_channels = 1;
        assert!(ResNet9::<f32>::build(spec, 0).is_err());
    }

    #[test]
    fn whitened_filters_are_not_trainable() {
        let spec = ModelSpec::default().narrowed(16).with_whitening(vec![0.1; 729]);
        let m = ResNet9::<f32>::build(spec, 0).unwrap();
        assert!(m.params().iter().all(|e| !e.name.starts_with("stem")));
        assert_eq!(
            m.params().get("prep.conv.weight").unwrap().tensor.shape(),
            &[4, 27, 1, 1]
        );
        assert!(m.stem_filters().is_some());
    }

    #[test]
    fn classification_partition_is_total() {
        let m = ResNet9::<f32>::build(ModelSpec::default().narrowed(8), 1).unwrap();
        for e in m.params().iter() {
            let kernel = e.name.ends_with("conv.weight") || e.name == "classifier.weight";
            assert_eq!(e.gc_eligible, kernel, "{}", e.name);
            assert_eq!(e.decay_exempt, !kernel, "{}", e.name);
        }
    }
}
