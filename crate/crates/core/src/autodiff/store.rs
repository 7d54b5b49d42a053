use std::collections::HashMap;
use std::ops::{Deref, DerefMut};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Index of a block inside a [`ParamLayout`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BlockId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    #[serde(skip)]
    pub offset: usize,
}

impl BlockSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered, immutable list of named blocks packed into one flat vector.
#[derive(Debug, PartialEq, Eq)]
pub struct ParamLayout {
    blocks: Vec<BlockSpec>,
    index: HashMap<String, usize>,
    len: usize,
}

impl ParamLayout {
    pub fn builder() -> LayoutBuilder {
        LayoutBuilder::default()
    }

    pub fn blocks(&self) -> &[BlockSpec] {
        &self.blocks
    }

    pub fn block(&self, id: BlockId) -> &BlockSpec {
        &self.blocks[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = BlockId> {
        (0..self.blocks.len()).map(BlockId)
    }

    pub fn id(&self, name: &str) -> Result<BlockId> {
        self.index
            .get(name)
            .copied()
            .map(BlockId)
            .ok_or_else(|| Error::InvalidConfig(format!("no parameter block named {name:?}")))
    }

    /// Total number of scalars.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

#[derive(Default)]
pub struct LayoutBuilder {
    blocks: Vec<BlockSpec>,
}

impl LayoutBuilder {
    pub fn push(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> &mut Self {
        self.blocks.push(BlockSpec {
            name: name.into(),
            rows,
            cols,
            offset: 0,
        });
        self
    }

    pub fn build(self) -> Result<Arc<ParamLayout>> {
        let mut index = HashMap::new();
        let mut offset = 0;
        let mut blocks = self.blocks;
        for (i, b) in blocks.iter_mut().enumerate() {
            if index.insert(b.name.clone(), i).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate block {:?}", b.name)));
            }
            b.offset = offset;
            offset += b.len();
        }
        Ok(Arc::new(ParamLayout {
            blocks,
            index,
            len: offset,
        }))
    }
}

/// Gradient with respect to a flat parameter vector, in the same order.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientVector<S>(pub Vec<S>);

impl<S: Scalar> GradientVector<S> {
    pub fn zeros(len: usize) -> Self {
        GradientVector(vec![S::zero(); len])
    }

    pub fn into_inner(self) -> Vec<S> {
        self.0
    }

    pub fn norm(&self) -> S {
        self.0.iter().map(|&v| v * v).sum::<S>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl<S> Deref for GradientVector<S> {
    type Target = [S];
    fn deref(&self) -> &[S] {
        &self.0
    }
}

impl<S> DerefMut for GradientVector<S> {
    fn deref_mut(&mut self) -> &mut [S] {
        &mut self.0
    }
}

/// Named weight blocks over one flat vector. Block views are slices of the flat storage.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<S> {
    layout: Arc<ParamLayout>,
    values: Vec<S>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        let values = vec![S::zero(); layout.len()];
        ParamStore { layout, values }
    }

    pub fn unflatten(layout: Arc<ParamLayout>, values: Vec<S>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::Shape(format!(
                "flat vector has {} values, layout needs {}",
                values.len(),
                layout.len()
            )));
        }
        Ok(ParamStore { layout, values })
    }

    pub fn flatten(&self) -> Vec<S> {
        self.values.clone()
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn flat(&self) -> &[S] {
        &self.values
    }

    pub fn flat_mut(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn block(&self, id: BlockId) -> &[S] {
        &self.values[self.layout.block(id).range()]
    }

    pub fn block_mut(&mut self, id: BlockId) -> &mut [S] {
        let r = self.layout.block(id).range();
        &mut self.values[r]
    }

    pub fn block_by_name(&self, name: &str) -> Result<&[S]> {
        Ok(self.block(self.layout.id(name)?))
    }

    pub fn block_matrix(&self, id: BlockId) -> Matrix<S> {
        let spec = self.layout.block(id);
        Matrix::new(spec.rows, spec.cols, self.block(id).to_vec()).expect("layout shape")
    }

    pub fn set_block(&mut self, id: BlockId, m: &Matrix<S>) -> Result<()> {
        let spec = self.layout.block(id);
        if m.shape() != (spec.rows, spec.cols) {
            return Err(Error::Shape(format!(
                "block {} is {}x{}, got {}x{}",
                spec.name,
                spec.rows,
                spec.cols,
                m.rows(),
                m.cols()
            )));
        }
        self.block_mut(id).copy_from_slice(m.data());
        Ok(())
    }

    pub fn ensure_same_layout(&self, other: &ParamLayout) -> Result<()> {
        if *self.layout != *other {
            return Err(Error::InvalidConfig(
                "parameter layouts differ (checkpoint does not match the model)".into(),
            ));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
