use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Handle to a parameter block inside a [`NetworkParams`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// A named, row-major parameter matrix (a vector is a `rows x 1` block).
#[derive(Clone, Debug, PartialEq)]
pub struct Block<T> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T> Block<T> {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Flat store of every parameter block of a network.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NetworkParams<T> {
    blocks: Vec<Block<T>>,
}

impl<T: Real> NetworkParams<T> {
    pub fn new() -> Self {
        NetworkParams { blocks: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, rows: usize, cols: usize, data: Vec<T>) -> ParamId {
        assert_eq!(data.len(), rows * cols, "block data does not match its shape");
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter block `{name}`");
        self.blocks.push(Block { name, rows, cols, data });
        ParamId(self.blocks.len() - 1)
    }

    pub fn zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, rows, cols, vec![T::zero(); rows * cols])
    }

    /// Block initialised uniformly in `±1/sqrt(fan_in)`.
    pub fn uniform_fan_in(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols).map(|_| T::lit(rng.random_range(-bound..bound))).collect();
        self.add(name, rows, cols, data)
    }

    pub fn block(&self, id: ParamId) -> &Block<T> {
        &self.blocks[id.0]
    }

    pub fn block_mut(&mut self, id: ParamId) -> &mut Block<T> {
        &mut self.blocks[id.0]
    }

    pub fn data(&self, id: ParamId) -> &[T] {
        &self.blocks[id.0].data
    }

    pub fn blocks(&self) -> &[Block<T>] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [Block<T>] {
        &mut self.blocks
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.blocks.iter().position(|b| b.name == name).map(ParamId)
    }

    pub fn num_params(&self) -> usize {
        self.blocks.iter().map(Block::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.blocks.iter().all(|b| b.data.iter().all(|x| x.is_finite_value()))
    }

    /// Gradient store with one zeroed block per parameter block.
    pub fn zero_grads(&self) -> Gradients<T> {
        Gradients { blocks: self.blocks.iter().map(|b| vec![T::zero(); b.len()]).collect() }
    }

    /// Overwrites values from `other`, which must have identical names and shapes.
    pub fn copy_from(&mut self, other: &NetworkParams<T>) -> Result<()> {
        if self.blocks.len() != other.blocks.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} blocks vs {}",
                self.blocks.len(),
                other.blocks.len()
            )));
        }
        for (dst, src) in self.blocks.iter_mut().zip(&other.blocks) {
            if dst.name != src.name || dst.rows != src.rows || dst.cols != src.cols {
                return Err(Error::ShapeMismatch(format!(
                    "block `{}` {}x{} vs `{}` {}x{}",
                    dst.name, dst.rows, dst.cols, src.name, src.rows, src.cols
                )));
            }
            dst.data.copy_from_slice(&src.data);
        }
        Ok(())
    }
}

/// Gradients laid out exactly like the [`NetworkParams`] they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    blocks: Vec<Vec<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, id: ParamId) -> &[T] {
        &self.blocks[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.blocks[id.0]
    }

    pub fn blocks(&self) -> &[Vec<T>] {
        &self.blocks
    }

    pub fn fill_zero(&mut self) {
        for b in &mut self.blocks {
            b.fill(T::zero());
        }
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for b in &mut self.blocks {
            for x in b.iter_mut() {
                *x *= factor;
            }
        }
    }

    pub fn norm(&self) -> T {
        self.blocks
            .iter()
            .flat_map(|b| b.iter())
            .fold(T::zero(), |acc, &x| acc + x * x)
            .sqrt()
    }

    /// Rescales so the global L2 norm does not exceed `max_norm`.
    pub fn clip_norm(&mut self, max_norm: T) -> T {
        let norm = self.norm();
        if norm > max_norm {
            self.scale(max_norm / norm);
        }
        norm
    }

    /// Index of the first block holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.blocks.iter().position(|b| b.iter().any(|x| !x.is_finite_value()))
    }
}
