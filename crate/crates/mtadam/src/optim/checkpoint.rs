//! Versioned JSON checkpoints for optimizer state, so a training run can be
//! paused and resumed deterministically.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{AdamState, MtAdamState, ParameterGroups, RmsPropState, SgdMomentumState};

pub const CHECKPOINT_FORMAT: &str = "mtadam-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "optimizer")]
pub enum OptimizerState {
    MtAdam(MtAdamState),
    Adam(AdamState),
    RmsProp(RmsPropState),
    SgdMomentum(SgdMomentumState),
}

/// Snapshot of parameters plus optimizer state. JSON numbers round-trip
/// `f64` exactly, so a resumed run continues bit-identically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub params: ParameterGroups,
    pub state: OptimizerState,
}

impl Checkpoint {
    pub fn new(params: ParameterGroups, state: OptimizerState) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            params,
            state,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let ckpt: Checkpoint =
            serde_json::from_str(json).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unexpected format '{}'",
                ckpt.format
            )));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (supported: {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let json = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&json)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::{mtadam_step, OptimizerConfig, TermGradients};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_grads(rng: &mut ChaCha8Rng, layout: &crate::optim::GroupLayout) -> TermGradients {
        let terms: Vec<Vec<Vec<f64>>> = (0..2)
            .map(|_| {
                (0..layout.num_groups())
                    .map(|g| {
                        (0..layout.len_of(g))
                            .map(|_| rng.gen_range(-1.0..1.0))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        TermGradients::new(terms, layout).unwrap()
    }

    #[test]
    fn resume_from_checkpoint_is_bit_identical() {
        let cfg = OptimizerConfig::default();
        let mut params = ParameterGroups::new(vec![
            ("w".into(), vec![0.1, -0.2, 0.3]),
            ("b".into(), vec![0.05]),
        ])
        .unwrap();
        let layout = params.layout();
        let mut state = MtAdamState::new(2, &layout).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let grads: Vec<TermGradients> = (0..20).map(|_| random_grads(&mut rng, &layout)).collect();

        for g in &grads[..10] {
            mtadam_step(&mut params, g.clone(), &mut state, &cfg).unwrap();
        }
        let ckpt = Checkpoint::new(params.clone(), OptimizerState::MtAdam(state.clone()));
        let json = ckpt.to_json().unwrap();

        // uninterrupted continuation
        for g in &grads[10..] {
            mtadam_step(&mut params, g.clone(), &mut state, &cfg).unwrap();
        }

        // resumed continuation
        let restored = Checkpoint::from_json(&json).unwrap();
        let mut params2 = restored.params;
        let mut state2 = match restored.state {
            OptimizerState::MtAdam(s) => s,
            _ => panic!("wrong optimizer kind"),
        };
        for g in &grads[10..] {
            mtadam_step(&mut params2, g.clone(), &mut state2, &cfg).unwrap();
        }

        for g in 0..layout.num_groups() {
            assert_eq!(params.group(g), params2.group(g), "resume diverged");
        }
        assert_eq!(state, state2);
    }

    #[test]
    fn rejects_wrong_format_and_version() {
        let params = ParameterGroups::new(vec![("w".into(), vec![1.0])]).unwrap();
        let state = OptimizerState::Adam(AdamState::new(&params.layout()));
        let mut ckpt = Checkpoint::new(params, state);
        ckpt.version = 99;
        let json = serde_json::to_string(&ckpt).unwrap();
        assert!(Checkpoint::from_json(&json).is_err());

        ckpt.version = CHECKPOINT_VERSION;
        ckpt.format = "something-else".into();
        let json = serde_json::to_string(&ckpt).unwrap();
        assert!(Checkpoint::from_json(&json).is_err());
    }
}
