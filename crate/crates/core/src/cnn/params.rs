use super::{ArchitectureSpec, FeatureShape};
use crate::error::{Error, Result};
use crate::formats::NamedTensor;
use crate::tensor::{Matrix, Vector};
use crate::init::{glorot_limit, glorot_matrix, uniform_matrix};

/// Parameters of the two-conv classifier. The same layout doubles as the
/// gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnWeights {
    /// Feature-vector length the stack was built for.
    pub input_len: usize,
    /// `9 × filters.0`, rows ordered `(ky, kx)`.
    pub conv1_kernels: Matrix,
    pub conv1_bias: Vector,
    /// `9·filters.0 × filters.1`, rows ordered `(ky, kx, c_in)`.
    pub conv2_kernels: Matrix,
    pub conv2_bias: Vector,
    pub dense: Matrix,
    pub dense_bias: Vector,
    pub output: Matrix,
    pub output_bias: Vector,
}

pub type CnnGradients = CnnWeights;

const INPUT_LEN: &str = "input.length";

const NAMES: [&str; 8] = [
    "conv1.kernel",
    "conv1.bias",
    "conv2.kernel",
    "conv2.bias",
    "dense.kernel",
    "dense.bias",
    "output.kernel",
    "output.bias",
];

impl CnnWeights {
    /// Glorot-uniform kernels (fan = receptive field × channels), zero biases.
    pub fn init(spec: &ArchitectureSpec, feature_len: usize, seed: u64) -> Result<Self> {
        spec.validate()?;
        let shape = FeatureShape::for_len(feature_len)?;
        let (f1, f2) = spec.conv_filters;
        let conv = |cin: usize, cout: usize, tag: &str| {
            uniform_matrix(9 * cin, cout, glorot_limit(9 * cin, 9 * cout), seed, tag)
        };
        Ok(Self {
            input_len: feature_len,
            conv1_kernels: conv(1, f1, "cnn.conv1"),
            conv1_bias: vec![0.0; f1],
            conv2_kernels: conv(f1, f2, "cnn.conv2"),
            conv2_bias: vec![0.0; f2],
            dense: glorot_matrix(shape.flat_len(f2), spec.dense_units, seed, "cnn.dense"),
            dense_bias: vec![0.0; spec.dense_units],
            output: glorot_matrix(spec.dense_units, spec.num_classes, seed, "cnn.output"),
            output_bias: vec![0.0; spec.num_classes],
        })
    }

    pub fn zeros_like(other: &Self) -> Self {
        let mut z = other.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.input_len == other.input_len
            && self.conv1_kernels.shape() == other.conv1_kernels.shape()
            && self.conv2_kernels.shape() == other.conv2_kernels.shape()
            && self.dense.shape() == other.dense.shape()
            && self.output.shape() == other.output.shape()
    }

    /// Overwrites `self` with `other` in place, reusing the allocations.
    pub fn copy_from(&mut self, other: &Self) {
        assert!(self.same_shape(other), "copy between differently shaped weights");
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            dst.copy_from_slice(src);
        }
    }

    pub fn tensors(&self) -> [&[f64]; 8] {
        [
            self.conv1_kernels.data(),
            &self.conv1_bias,
            self.conv2_kernels.data(),
            &self.conv2_bias,
            self.dense.data(),
            &self.dense_bias,
            self.output.data(),
            &self.output_bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 8] {
        [
            self.conv1_kernels.data_mut(),
            &mut self.conv1_bias,
            self.conv2_kernels.data_mut(),
            &mut self.conv2_bias,
            self.dense.data_mut(),
            &mut self.dense_bias,
            self.output.data_mut(),
            &mut self.output_bias,
        ]
    }

    pub fn tensor_names() -> [&'static str; 8] {
        NAMES
    }

    pub fn num_classes(&self) -> usize {
        self.output.cols()
    }

    pub fn filters(&self) -> (usize, usize) {
        (self.conv1_kernels.cols(), self.conv2_kernels.cols())
    }

    pub fn dense_units(&self) -> usize {
        self.dense.cols()
    }

    pub fn input_flat_len(&self) -> usize {
        self.dense.rows()
    }

    pub fn to_tensors(&self) -> Vec<NamedTensor> {
        let (f1, f2) = self.filters();
        vec![
            NamedTensor::from_vector(INPUT_LEN, &[self.input_len as f64]),
            NamedTensor { name: NAMES[0].into(), dims: vec![3, 3, 1, f1], data: self.conv1_kernels.data().to_vec() },
            NamedTensor::from_vector(NAMES[1], &self.conv1_bias),
            NamedTensor { name: NAMES[2].into(), dims: vec![3, 3, f1, f2], data: self.conv2_kernels.data().to_vec() },
            NamedTensor::from_vector(NAMES[3], &self.conv2_bias),
            NamedTensor::from_matrix(NAMES[4], &self.dense),
            NamedTensor::from_vector(NAMES[5], &self.dense_bias),
            NamedTensor::from_matrix(NAMES[6], &self.output),
            NamedTensor::from_vector(NAMES[7], &self.output_bias),
        ]
    }

    /// Rebuilds weights from tensors in any order, checking that the shapes
    /// chain together.
    pub fn from_tensors(tensors: Vec<NamedTensor>) -> Result<Self> {
        let mut slots: [Option<NamedTensor>; 8] = Default::default();
        let mut input_len = None;
        for t in tensors {
            if t.name == INPUT_LEN {
                input_len = match t.data[..] {
                    [n] if n >= 1.0 && n.fract() == 0.0 => Some(n as usize),
                    _ => return Err(Error::invalid("cnn weights", "bad input.length")),
                };
                continue;
            }
            let i = NAMES
                .iter()
                .position(|n| *n == t.name)
                .ok_or_else(|| Error::invalid("cnn weights", format!("unexpected tensor `{}`", t.name)))?;
            slots[i] = Some(t);
        }
        let mut take = |i: usize| {
            slots[i]
                .take()
                .ok_or_else(|| Error::invalid("cnn weights", format!("missing tensor `{}`", NAMES[i])))
        };
        let kernel = |t: NamedTensor| -> Result<Matrix> {
            match t.dims[..] {
                [3, 3, cin, cout] => Matrix::new(9 * cin, cout, t.data),
                _ => Err(Error::shape("cnn weights", format!("{} {:?}", t.name, t.dims), "[3, 3, c_in, c_out]")),
            }
        };
        let input_len = input_len.ok_or_else(|| Error::invalid("cnn weights", "missing tensor `input.length`"))?;
        let w = Self {
            input_len,
            conv1_kernels: kernel(take(0)?)?,
            conv1_bias: take(1)?.data,
            conv2_kernels: kernel(take(2)?)?,
            conv2_bias: take(3)?.data,
            dense: take(4)?.into_matrix()?,
            dense_bias: take(5)?.data,
            output: take(6)?.into_matrix()?,
            output_bias: take(7)?.data,
        };
        let (f1, f2) = w.filters();
        let consistent = FeatureShape::for_len(input_len).is_ok_and(|s| s.flat_len(f2) == w.dense.rows())
            && w.conv1_kernels.rows() == 9
            && w.conv1_bias.len() == f1
            && w.conv2_kernels.rows() == 9 * f1
            && w.conv2_bias.len() == f2
            && w.dense_bias.len() == w.dense.cols()
            && w.output.rows() == w.dense.cols()
            && w.output_bias.len() == w.output.cols();
        if !consistent {
            return Err(Error::invalid("cnn weights", "tensor shapes do not chain"));
        }
        Ok(w)
    }

    /// `self += scale · other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        assert_eq!(self.input_len, other.input_len);
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }
}
