//! DMGC-GRU cell and the encoder–decoder built from it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dmgcn::{dmgcn_forward, AttentionCapture, DmgcnLayout, GraphSet, Mechanisms};
use crate::error::{Error, Result};
use crate::params::{Bindings, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub layers: usize,
    /// GRU hidden width `d`.
    pub hidden: usize,
    /// Traffic features per sensor `F`.
    pub features: usize,
    /// Input window `T^h`.
    pub history: usize,
    /// Forecast horizon `T^p`.
    pub horizon: usize,
    pub batch_size: usize,
    pub mechanisms: Mechanisms,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            hidden: 64,
            features: 1,
            history: 12,
            horizon: 12,
            batch_size: 32,
            mechanisms: Mechanisms::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("layers", self.layers),
            ("hidden", self.hidden),
            ("features", self.features),
            ("history", self.history),
            ("horizon", self.horizon),
            ("batch_size", self.batch_size),
        ];
        match dims.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(Error::Config(format!("model {name} must be positive"))),
            None => Ok(()),
        }
    }
}

pub const GATES: [&str; 3] = ["update", "reset", "candidate"];

/// Hidden state of every recurrent layer, each `[..., N, d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruState {
    pub layers: Vec<Var>,
}

/// Learnable parameters plus the fixed graphs they act on.
#[derive(Debug, Clone, PartialEq)]
pub struct Dmgcrn {
    pub config: ModelConfig,
    pub graphs: GraphSet,
    pub params: ParamStore,
    layouts: Vec<[DmgcnLayout; 3]>,
}

fn layouts(config: &ModelConfig, graphs: &GraphSet) -> Result<Vec<[DmgcnLayout; 3]>> {
    (0..config.layers)
        .map(|l| {
            let input = if l == 0 { config.features } else { config.hidden };
            let dh = input + config.hidden;
            let make = |gate: &str| {
                DmgcnLayout::new(format!("l{l}.{gate}"), dh, config.hidden, graphs, config.mechanisms)
            };
            Ok([make(GATES[0])?, make(GATES[1])?, make(GATES[2])?])
        })
        .collect()
}

impl Dmgcrn {
    /// Fresh model: uniform `±sqrt(1/fan_in)` weights, zero biases, unit masks.
    pub fn new(config: ModelConfig, graphs: GraphSet, seed: u64) -> Result<Self> {
        config.validate()?;
        let layouts = layouts(&config, &graphs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for gates in &layouts {
            for layout in gates {
                layout.init(&mut params, &mut rng);
            }
        }
        params.insert_uniform("readout.w", &[config.hidden, config.features], config.hidden, &mut rng);
        params.insert("readout.b", Tensor::zeros(&[config.features]));
        Ok(Self {
            config,
            graphs,
            params,
            layouts,
        })
    }

    /// Rebuilds a model around stored parameters, checking names and shapes.
    pub fn from_params(config: ModelConfig, graphs: GraphSet, params: ParamStore) -> Result<Self> {
        let template = Self::new(config, graphs, 0)?;
        let expected: Vec<_> = template.params.iter().map(|(n, t)| (n.clone(), t.shape().to_vec())).collect();
        let got: Vec<_> = params.iter().map(|(n, t)| (n.clone(), t.shape().to_vec())).collect();
        if expected != got {
            return Err(Error::Data(
                "stored parameters do not match the model configuration".into(),
            ));
        }
        Ok(Self { params, ..template })
    }

    pub fn nodes(&self) -> usize {
        self.graphs.len()
    }

    pub fn layouts(&self) -> &[[DmgcnLayout; 3]] {
        &self.layouts
    }

    /// Binds parameters and precomputes graph propagators on `tape`.
    pub fn bind<'m>(&'m self, tape: &mut Tape) -> Result<BoundModel<'m>> {
        self.bind_params(tape, &self.params)
    }

    /// Like [`bind`](Self::bind) but reading values from `params`.
    pub fn bind_params<'m>(&'m self, tape: &mut Tape, params: &ParamStore) -> Result<BoundModel<'m>> {
        let bindings = params.bind(tape)?;
        self.with_bindings(tape, bindings)
    }

    /// Binds parameters as constants, for inference without gradients.
    pub fn bind_frozen<'m>(&'m self, tape: &mut Tape) -> Result<BoundModel<'m>> {
        let bindings = self.params.bind_constants(tape)?;
        self.with_bindings(tape, bindings)
    }

    fn with_bindings<'m>(&'m self, tape: &mut Tape, bindings: Bindings) -> Result<BoundModel<'m>> {
        let propagators = self
            .layouts
            .iter()
            .map(|gates| {
                let mut out = Vec::with_capacity(3);
                for layout in gates {
                    out.push(layout.propagators(tape, &bindings, &self.graphs)?);
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BoundModel {
            model: self,
            bindings,
            propagators,
            capture: None,
        })
    }
}

/// A model bound to one tape.
pub struct BoundModel<'m> {
    model: &'m Dmgcrn,
    bindings: Bindings,
    propagators: Vec<Vec<Vec<Vec<Var>>>>,
    /// When set, every DMGCN call appends its attention weights here.
    pub capture: Option<Vec<AttentionCapture>>,
}

/// Which ground truth/prediction fed each decoder step.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput {
    /// `T^p` predictions, each `[..., N, F]` in normalised units.
    pub predictions: Vec<Var>,
    /// `teacher_forced[t]` is true when step `t` consumed ground truth.
    pub teacher_forced: Vec<bool>,
}

impl<'m> BoundModel<'m> {
    pub fn bindings(&self) -> &Bindings {
        &self.bindings
    }

    pub fn model(&self) -> &Dmgcrn {
        self.model
    }

    fn gate(&mut self, tape: &mut Tape, layer: usize, gate: usize, h: Var) -> Result<Var> {
        let layout = &self.model.layouts[layer][gate];
        dmgcn_forward(
            tape,
            layout,
            &self.bindings,
            &self.propagators[layer][gate],
            h,
            self.capture.as_mut(),
        )
    }

    /// `H_t = U ⊙ H + (1 − U) ⊙ C` for one layer.
    pub fn cell_step(&mut self, tape: &mut Tape, layer: usize, x: Var, h_prev: Var) -> Result<Var> {
        let rank = tape.shape(x).len();
        let xh = tape.concat(&[x, h_prev], rank - 1)?;
        let u = self.gate(tape, layer, 0, xh)?;
        let u = tape.sigmoid(u)?;
        let r = self.gate(tape, layer, 1, xh)?;
        let r = tape.sigmoid(r)?;
        let rh = tape.mul(r, h_prev)?;
        let xrh = tape.concat(&[x, rh], rank - 1)?;
        let c = self.gate(tape, layer, 2, xrh)?;
        let c = tape.tanh(c)?;
        let keep = tape.mul(u, h_prev)?;
        let one_minus_u = tape.rsub_scalar(1.0, u)?;
        let fresh = tape.mul(one_minus_u, c)?;
        tape.add(keep, fresh)
    }

    /// Zero hidden state for inputs shaped `[lead..., N, F]`.
    pub fn zero_state(&self, tape: &mut Tape, lead: &[usize]) -> Result<GruState> {
        let mut shape = lead.to_vec();
        shape.extend([self.model.nodes(), self.model.config.hidden]);
        let numel = shape.iter().product();
        let layers = (0..self.model.config.layers)
            .map(|_| tape.constant(&shape, vec![0.0; numel]))
            .collect::<Result<_>>()?;
        Ok(GruState { layers })
    }

    /// Runs `x` up through every layer, updating `state`; returns the top hidden state.
    pub fn step(&mut self, tape: &mut Tape, x: Var, state: &mut GruState) -> Result<Var> {
        let mut input = x;
        for layer in 0..state.layers.len() {
            let h = self.cell_step(tape, layer, input, state.layers[layer])?;
            state.layers[layer] = h;
            input = h;
        }
        Ok(input)
    }

    pub fn readout(&self, tape: &mut Tape, h: Var) -> Result<Var> {
        let y = tape.matmul(h, self.bindings.get("readout.w")?)?;
        tape.add_bias(y, self.bindings.get("readout.b")?)
    }

    /// Consumes the history window from a zero state.
    pub fn encode(&mut self, tape: &mut Tape, inputs: &[Var], lead: &[usize]) -> Result<GruState> {
        let mut state = self.zero_state(tape, lead)?;
        for &x in inputs {
            self.step(tape, x, &mut state)?;
        }
        Ok(state)
    }

    /// Decoder loop: step 1 consumes zeros; step `t > 1` consumes the ground
    /// truth of step `t−1` when `teacher_forced[t]`, else the previous prediction.
    pub fn decode(
        &mut self,
        tape: &mut Tape,
        mut state: GruState,
        labels: Option<&[Var]>,
        teacher_forced: Vec<bool>,
        lead: &[usize],
    ) -> Result<DecodeOutput> {
        let horizon = teacher_forced.len();
        let mut shape = lead.to_vec();
        shape.extend([self.model.nodes(), self.model.config.features]);
        let numel = shape.iter().product();
        let mut predictions: Vec<Var> = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let input = if t == 0 {
                tape.constant(&shape, vec![0.0; numel])?
            } else if teacher_forced[t] {
                let labels = labels.ok_or_else(|| Error::Config("teacher forcing needs labels".into()))?;
                labels[t - 1]
            } else {
                predictions[t - 1]
            };
            let top = self.step(tape, input, &mut state)?;
            predictions.push(self.readout(tape, top)?);
        }
        Ok(DecodeOutput {
            predictions,
            teacher_forced,
        })
    }

    /// Scheduled-sampling decode: each step after the first is teacher-forced
    /// with probability `teacher_prob`.
    pub fn decode_train(
        &mut self,
        tape: &mut Tape,
        state: GruState,
        labels: &[Var],
        teacher_prob: f64,
        rng: &mut impl Rng,
        lead: &[usize],
    ) -> Result<DecodeOutput> {
        let flags = (0..labels.len())
            .map(|t| t > 0 && sample_teacher_forcing(teacher_prob, rng))
            .collect();
        self.decode(tape, state, Some(labels), flags, lead)
    }

    /// Free-running decode over `horizon` steps.
    pub fn decode_infer(&mut self, tape: &mut Tape, state: GruState, horizon: usize, lead: &[usize]) -> Result<DecodeOutput> {
        self.decode(tape, state, None, vec![false; horizon], lead)
    }
}

/// One draw of the scheduled-sampling rule: `c ~ U(0,1)`, teacher-forced iff `c < p`.
pub fn sample_teacher_forcing(p: f64, rng: &mut impl Rng) -> bool {
    rng.gen::<f64>() < p
}

/// Mean absolute error between equally shaped tensors.
pub fn l1_loss(tape: &mut Tape, pred: Var, truth: Var) -> Result<Var> {
    let diff = tape.sub(pred, truth)?;
    let abs = tape.abs(diff)?;
    tape.mean(abs)
}
