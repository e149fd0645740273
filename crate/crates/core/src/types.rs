//! Data shared by the simulator, the networks and the evaluation code.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary disease label. Stored as `{0, 1}` internally and written as
/// `{-1, +1}` in every external format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Label {
    Healthy,
    Disease,
}

impl Label {
    pub fn from_signed(y: i8) -> Result<Self> {
        match y {
            -1 => Ok(Label::Healthy),
            1 => Ok(Label::Disease),
            other => Err(Error::Contract(format!(
                "label must be -1 or +1, got {other}"
            ))),
        }
    }

    pub fn signed(self) -> i8 {
        match self {
            Label::Healthy => -1,
            Label::Disease => 1,
        }
    }

    /// 0 for healthy, 1 for disease.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_positive(self) -> bool {
        self == Label::Disease
    }
}

impl TryFrom<i8> for Label {
    type Error = Error;
    fn try_from(y: i8) -> Result<Self> {
        Label::from_signed(y)
    }
}

impl From<Label> for i8 {
    fn from(l: Label) -> i8 {
        l.signed()
    }
}

/// Shape of the per-step observation `x_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservationKind {
    /// Flat real vector of length `dim`.
    Vector { dim: usize },
    /// Single-channel `height x width` grid stored row-major.
    Image { height: usize, width: usize },
}

impl ObservationKind {
    pub fn len(&self) -> usize {
        match *self {
            ObservationKind::Vector { dim } => dim,
            ObservationKind::Image { height, width } => height * width,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Spatial shape used for heatmaps; vectors are a single row.
    pub fn grid(&self) -> (usize, usize) {
        match *self {
            ObservationKind::Vector { dim } => (1, dim),
            ObservationKind::Image { height, width } => (height, width),
        }
    }
}

/// One time step's latent blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    pub s: Vec<f64>,
    pub v: Vec<f64>,
    pub z: Vec<f64>,
}

impl LatentState {
    pub fn zeros(d_s: usize, d_v: usize, d_z: usize) -> Self {
        Self {
            s: vec![0.0; d_s],
            v: vec![0.0; d_v],
            z: vec![0.0; d_z],
        }
    }

    pub fn blocks(&self) -> [&[f64]; 3] {
        [&self.s, &self.v, &self.z]
    }

    pub fn is_finite(&self) -> bool {
        self.s
            .iter()
            .chain(&self.v)
            .chain(&self.z)
            .all(|x| x.is_finite())
    }
}

/// Observed quantities at step `t`: image/vector `x_t`, clinical
/// measurements `A_t` and the attributes `B_{t-1}` that drove the step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationStep {
    pub x: Vec<f64>,
    #[serde(rename = "A")]
    pub a: Vec<f64>,
    #[serde(rename = "B_prev")]
    pub b_prev: Vec<f64>,
}

impl ObservationStep {
    pub fn is_finite(&self) -> bool {
        self.x
            .iter()
            .chain(&self.a)
            .chain(&self.b_prev)
            .all(|x| x.is_finite())
    }
}

/// Observed trajectory for `t = 1..T-1` and the label `y_T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSample {
    pub steps: Vec<ObservationStep>,
    pub y: Label,
    /// Ground-truth latents, one per step; present for simulator output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<Vec<LatentState>>,
}

impl SequenceSample {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Copy without ground-truth latents.
    pub fn stripped(&self) -> Self {
        Self {
            truth: None,
            ..self.clone()
        }
    }

    /// Copy with the clinical and attribute channels removed.
    pub fn without_attributes(&self) -> Self {
        let steps = self
            .steps
            .iter()
            .map(|s| ObservationStep {
                x: s.x.clone(),
                a: Vec::new(),
                b_prev: Vec::new(),
            })
            .collect();
        Self {
            steps,
            y: self.y,
            truth: self.truth.clone(),
        }
    }

    /// Checks lengths and finiteness against the expected dims.
    pub fn validate(&self, steps: usize, d_x: usize, d_a: usize, d_b: usize) -> Result<()> {
        if self.steps.len() != steps {
            return Err(Error::Contract(format!(
                "sequence has {} steps, expected {steps}",
                self.steps.len()
            )));
        }
        for (t, s) in self.steps.iter().enumerate() {
            if s.x.len() != d_x || s.a.len() != d_a || s.b_prev.len() != d_b {
                return Err(Error::Contract(format!(
                    "step {}: dims (x {}, A {}, B {}) expected ({d_x}, {d_a}, {d_b})",
                    t + 1,
                    s.x.len(),
                    s.a.len(),
                    s.b_prev.len()
                )));
            }
            if !s.is_finite() {
                return Err(Error::Contract(format!(
                    "step {} contains non-finite values",
                    t + 1
                )));
            }
        }
        if let Some(truth) = &self.truth {
            if truth.len() != steps || !truth.iter().all(LatentState::is_finite) {
                return Err(Error::Contract("ground-truth latents malformed".into()));
            }
        }
        Ok(())
    }
}
