//! Dense network kernel: parameters, forward/JVP/backward passes and Adam.

mod adam;
mod dense;
mod serial;

pub use adam::{AdamConfig, AdamState};
pub use dense::{Activation, Architecture, DenseParams, Gates, Layer, Tape};
pub use serial::DenseParamsDoc;

/// Anything that exposes its trainable tensors as flat slices in a fixed order.
pub trait Parameters {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;
}

impl Parameters for DenseParams {
    fn tensors(&self) -> Vec<&[f64]> {
        DenseParams::tensors(self)
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        DenseParams::tensors_mut(self)
    }
}

impl<P: Parameters> Parameters for [P] {
    fn tensors(&self) -> Vec<&[f64]> {
        self.iter().flat_map(|p| p.tensors()).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.iter_mut().flat_map(|p| p.tensors_mut()).collect()
    }
}

impl<P: Parameters> Parameters for Vec<P> {
    fn tensors(&self) -> Vec<&[f64]> {
        self.as_slice().tensors()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.as_mut_slice().tensors_mut()
    }
}
