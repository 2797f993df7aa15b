//! Momentum SGD and Adam over named [`Var`]s, with inspectable per-parameter state.

use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OptimizerKind {
    /// `v ← μv + (g + wd·θ)`, `θ ← θ − lr·v`.
    MomentumSgd { momentum: f64, weight_decay: f64 },
    /// Bias-corrected Adam.
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

/// Per-parameter optimizer state; `slots` holds `buf` (SGD) or `m`, `v` (Adam).
#[derive(Debug, Clone)]
pub struct SlotState {
    pub step: u64,
    pub slots: BTreeMap<String, Tensor>,
}

/// One optimizer over a fixed set of parameters, keyed `"<group>/<name>"`.
pub struct Optimizer {
    name: String,
    kind: OptimizerKind,
    base_lr: f64,
    vars: Vec<(String, Var)>,
    state: BTreeMap<String, SlotState>,
}

impl Optimizer {
    pub fn new(name: &str, kind: OptimizerKind, base_lr: f64, groups: &[&ParamSet]) -> Self {
        let vars = groups
            .iter()
            .flat_map(|g| g.params().map(move |(n, v)| (format!("{}/{n}", g.group()), v.clone())))
            .collect();
        Self {
            name: name.to_string(),
            kind,
            base_lr,
            vars,
            state: BTreeMap::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn base_lr(&self) -> f64 {
        self.base_lr
    }

    pub fn state(&self) -> &BTreeMap<String, SlotState> {
        &self.state
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.vars.iter().map(|(n, _)| n.as_str())
    }

    /// Updates every parameter that received a gradient; the others are left untouched.
    pub fn step(&mut self, grads: &GradStore, lr: f64) -> Result<()> {
        for (name, var) in &self.vars {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            let theta = var.as_tensor().detach();
            let g = g.detach();
            let st = self.state.entry(name.clone()).or_insert_with(|| SlotState {
                step: 0,
                slots: BTreeMap::new(),
            });
            st.step += 1;
            let updated = match self.kind {
                OptimizerKind::MomentumSgd { momentum, weight_decay } => {
                    let g = if weight_decay != 0.0 {
                        (&g + (&theta * weight_decay)?)?
                    } else {
                        g
                    };
                    let buf = match st.slots.get("buf") {
                        Some(b) => ((b * momentum)? + &g)?,
                        None => g,
                    };
                    let next = (&theta - (&buf * lr)?)?;
                    st.slots.insert("buf".into(), buf);
                    next
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let m = match st.slots.get("m") {
                        Some(m) => ((m * beta1)? + (&g * (1.0 - beta1))?)?,
                        None => (&g * (1.0 - beta1))?,
                    };
                    let v = match st.slots.get("v") {
                        Some(v) => ((v * beta2)? + (g.sqr()? * (1.0 - beta2))?)?,
                        None => (g.sqr()? * (1.0 - beta2))?,
                    };
                    let t = st.step as i32;
                    let m_hat = (&m / (1.0 - beta1.powi(t)))?;
                    let v_hat = (&v / (1.0 - beta2.powi(t)))?;
                    let update = (m_hat / (v_hat.sqrt()? + eps)?)?;
                    let next = (&theta - (update * lr)?)?;
                    st.slots.insert("m".into(), m);
                    st.slots.insert("v".into(), v);
                    next
                }
            };
            var.set(&updated)?;
        }
        Ok(())
    }

    /// Replaces the state; every key must name one of this optimizer's parameters.
    pub fn load_state(&mut self, state: BTreeMap<String, SlotState>) -> Result<()> {
        for (key, st) in &state {
            let Some((_, var)) = self.vars.iter().find(|(n, _)| n == key) else {
                return Err(Error::Checkpoint(format!("optimizer {} has no parameter `{key}`", self.name)));
            };
            for (slot, t) in &st.slots {
                if t.dims() != var.dims() {
                    return Err(Error::Checkpoint(format!(
                        "optimizer {}: slot {key}/{slot} has shape {:?}, parameter has {:?}",
                        self.name,
                        t.dims(),
                        var.dims()
                    )));
                }
            }
        }
        self.state = state
            .into_iter()
            .map(|(k, st)| {
                let dtype = self.vars.iter().find(|(n, _)| *n == k).expect("checked").1.dtype();
                let slots = st
                    .slots
                    .into_iter()
                    .map(|(s, t)| Ok((s, t.to_dtype(dtype)?)))
                    .collect::<Result<_>>()?;
                Ok((k, SlotState { step: st.step, slots }))
            })
            .collect::<Result<_>>()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::Init;
    use candle_core::DType;

    fn one_param(value: f64) -> (ParamSet, Var) {
        let mut init = Init::new("g", 0, DType::F64);
        let v = init.constant("w", &[1], value).unwrap();
        (init.finish(), v)
    }

    fn quad_step(opt: &mut Optimizer, v: &Var, lr: f64) {
        // loss = θ², gradient 2θ
        let loss = v.as_tensor().sqr().unwrap().sum_all().unwrap();
        opt.step(&loss.backward().unwrap(), lr).unwrap();
    }

    fn scalar(v: &Var) -> f64 {
        v.as_tensor().to_vec1::<f64>().unwrap()[0]
    }

    #[test]
    fn sgd_matches_hand_recurrence() {
        let (set, v) = one_param(1.0);
        let kind = OptimizerKind::MomentumSgd { momentum: 0.9, weight_decay: 0.1 };
        let mut opt = Optimizer::new("sgd", kind, 0.1, &[&set]);
        let (mut theta, mut buf) = (1.0f64, 0.0f64);
        for k in 0..4 {
            quad_step(&mut opt, &v, 0.1);
            let g = 2.0 * theta + 0.1 * theta;
            buf = if k == 0 { g } else { 0.9 * buf + g };
            theta -= 0.1 * buf;
            assert!((scalar(&v) - theta).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let (set, v) = one_param(3.0);
        let kind = OptimizerKind::Adam { beta1: 0.9, beta2: 0.99, eps: 1e-8 };
        let mut opt = Optimizer::new("adam", kind, 0.01, &[&set]);
        quad_step(&mut opt, &v, 0.01);
        assert!((scalar(&v) - 2.99).abs() < 1e-8);
        assert_eq!(opt.state()["g/w"].step, 1);
    }

    #[test]
    fn parameters_without_gradient_are_untouched() {
        let (set, v) = one_param(2.0);
        let mut opt = Optimizer::new("sgd", OptimizerKind::MomentumSgd { momentum: 0.9, weight_decay: 0.5 }, 1.0, &[&set]);
        let other = Var::new(&[1.0f64], &candle_core::Device::Cpu).unwrap();
        let grads = other.as_tensor().sqr().unwrap().sum_all().unwrap().backward().unwrap();
        opt.step(&grads, 1.0).unwrap();
        assert_eq!(scalar(&v), 2.0);
        assert!(opt.state().is_empty());
    }
}
