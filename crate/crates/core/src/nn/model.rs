//! The fixed network: two 3x3 conv + 2x2 pool blocks (depths 32 and 72), a
//! 256-unit fully connected layer, and a softmax classifier over 2 or 3
//! classes. Spatial flow is 64 -> 64 -> 32 -> 32 -> 16, so the flattened
//! feature vector entering the dense layer has 16*16*72 = 18432 values.

use super::ops::softmax;
use super::{
    conv2d_forward, dense_forward, maxpool_forward, relu, NnError, Tensor,
};
use crate::image::InputPlane;
use crate::rng::{derive_seed, SplitMix64};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    classes: usize,
}

impl ModelSpec {
    pub const INPUT_SIDE: usize = 64;
    pub const KERNEL: usize = 3;
    pub const POOL: usize = 2;
    pub const CONV1_DEPTH: usize = 32;
    pub const CONV2_DEPTH: usize = 72;
    pub const FC_UNITS: usize = 256;

    pub fn new(classes: usize) -> Result<Self, NnError> {
        if !(2..=3).contains(&classes) {
            return Err(NnError::BadClassCount(classes));
        }
        // Shape pipeline sanity: two pools halve 64 to 16.
        debug_assert_eq!(
            Self::INPUT_SIDE / Self::POOL / Self::POOL * Self::POOL * Self::POOL,
            Self::INPUT_SIDE
        );
        debug_assert_eq!(Self::flatten_len(), 18432);
        Ok(Self { classes })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Length of the flattened tensor entering the dense layer.
    pub fn flatten_len() -> usize {
        let side = Self::INPUT_SIDE / Self::POOL / Self::POOL;
        side * side * Self::CONV2_DEPTH
    }

    /// Total convolutional depth, the "node" count of the two conv layers.
    pub fn conv_node_count() -> usize {
        Self::CONV1_DEPTH + Self::CONV2_DEPTH
    }

    /// Closed-form parameter count for this class count.
    pub fn param_count(&self) -> usize {
        let conv1 = 3 * 3 * 1 * Self::CONV1_DEPTH + Self::CONV1_DEPTH;
        let conv2 = 3 * 3 * Self::CONV1_DEPTH * Self::CONV2_DEPTH + Self::CONV2_DEPTH;
        let fc = Self::flatten_len() * Self::FC_UNITS + Self::FC_UNITS;
        let out = Self::FC_UNITS * self.classes + self.classes;
        conv1 + conv2 + fc + out
    }

    /// Tensor shapes in serialization order.
    pub fn layer_shapes(&self) -> [Vec<usize>; 8] {
        [
            vec![3, 3, 1, Self::CONV1_DEPTH],
            vec![Self::CONV1_DEPTH],
            vec![3, 3, Self::CONV1_DEPTH, Self::CONV2_DEPTH],
            vec![Self::CONV2_DEPTH],
            vec![Self::flatten_len(), Self::FC_UNITS],
            vec![Self::FC_UNITS],
            vec![Self::FC_UNITS, self.classes],
            vec![self.classes],
        ]
    }
}

/// Learned parameters plus the provenance needed to reproduce them
/// (init seed, input normalization flag).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    classes: usize,
    seed: u64,
    pub normalized: bool,
    pub conv1_w: Tensor,
    pub conv1_b: Tensor,
    pub conv2_w: Tensor,
    pub conv2_b: Tensor,
    pub fc_w: Tensor,
    pub fc_b: Tensor,
    pub out_w: Tensor,
    pub out_b: Tensor,
}

// Substream ids for weight init draws.
const STREAM_CONV1_W: u64 = 1;
const STREAM_CONV2_W: u64 = 2;
const STREAM_FC_W: u64 = 3;
const STREAM_OUT_W: u64 = 4;

fn he_normal(shape: Vec<usize>, fan_in: usize, seed: u64) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let mut rng = SplitMix64::new(seed);
    Tensor::from_fn(shape, || rng.next_normal() * std)
}

impl ModelWeights {
    /// He-normal weights (std = sqrt(2/fan_in)), zero biases, all draws
    /// derived from `seed`.
    pub fn init(spec: &ModelSpec, seed: u64) -> Self {
        let c = spec.classes();
        Self {
            classes: c,
            seed,
            normalized: true,
            conv1_w: he_normal(
                vec![3, 3, 1, ModelSpec::CONV1_DEPTH],
                9,
                derive_seed(seed, STREAM_CONV1_W),
            ),
            conv1_b: Tensor::zeros(vec![ModelSpec::CONV1_DEPTH]),
            conv2_w: he_normal(
                vec![3, 3, ModelSpec::CONV1_DEPTH, ModelSpec::CONV2_DEPTH],
                9 * ModelSpec::CONV1_DEPTH,
                derive_seed(seed, STREAM_CONV2_W),
            ),
            conv2_b: Tensor::zeros(vec![ModelSpec::CONV2_DEPTH]),
            fc_w: he_normal(
                vec![ModelSpec::flatten_len(), ModelSpec::FC_UNITS],
                ModelSpec::flatten_len(),
                derive_seed(seed, STREAM_FC_W),
            ),
            fc_b: Tensor::zeros(vec![ModelSpec::FC_UNITS]),
            out_w: he_normal(
                vec![ModelSpec::FC_UNITS, c],
                ModelSpec::FC_UNITS,
                derive_seed(seed, STREAM_OUT_W),
            ),
            out_b: Tensor::zeros(vec![c]),
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec::new(self.classes).expect("held invariant")
    }

    pub(crate) fn from_parts(
        classes: usize,
        seed: u64,
        normalized: bool,
        tensors: Vec<Tensor>,
    ) -> Self {
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("eight tensors");
        Self {
            classes,
            seed,
            normalized,
            conv1_w: next(),
            conv1_b: next(),
            conv2_w: next(),
            conv2_b: next(),
            fc_w: next(),
            fc_b: next(),
            out_w: next(),
            out_b: next(),
        }
    }

    /// The eight parameter tensors in serialization order.
    pub fn tensors(&self) -> [&Tensor; 8] {
        [
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.fc_w,
            &self.fc_b,
            &self.out_w,
            &self.out_b,
        ]
    }

    /// Actual parameter count, summed over the stored tensors.
    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.all_finite())
    }

    /// Full inference pass. The returned score is `1 - P(class 0)`, i.e.
    /// suspiciousness under the class-0-is-benign convention.
    pub fn forward(&self, plane: &InputPlane) -> Prediction {
        let side = ModelSpec::INPUT_SIDE;
        let input = Tensor::new(vec![side, side, 1], plane.values().to_vec())
            .expect("plane is 64x64");
        let a1 = relu(&conv2d_forward(&input, &self.conv1_w, &self.conv1_b).expect("conv1"));
        let (p1, _) = maxpool_forward(&a1).expect("pool1");
        let a2 = relu(&conv2d_forward(&p1, &self.conv2_w, &self.conv2_b).expect("conv2"));
        let (p2, _) = maxpool_forward(&a2).expect("pool2");
        let flat = Tensor::new(vec![ModelSpec::flatten_len()], p2.into_data())
            .expect("flatten");
        let h = relu(&dense_forward(&flat, &self.fc_w, &self.fc_b).expect("fc"));
        let logits = dense_forward(&h, &self.out_w, &self.out_b).expect("out");
        let probs = softmax(logits.data());
        let score = 1.0 - probs[0];
        Prediction { probs, score }
    }
}

/// Output of one inference pass.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub score: f64,
}

impl Prediction {
    /// Predicted class: argmax with lowest-index tie-break.
    pub fn class(&self) -> usize {
        argmax_lowest(&self.probs)
    }
}

/// Index of the maximum value; ties resolve to the lowest index.
pub fn argmax_lowest(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}
