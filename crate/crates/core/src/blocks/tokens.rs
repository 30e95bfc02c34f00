use crate::error::{Error, Result};
use crate::numerics::{DenseArray, Real};

/// A batch of token embeddings `[B × T × C]` whose first `split` tokens are
/// template tokens and the rest search tokens. Blocks never reorder tokens, so
/// `split` is carried through unchanged.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSeq<T> {
    data: DenseArray<T>,
    split: usize,
}

impl<T: Real> TokenSeq<T> {
    pub fn new(data: DenseArray<T>, split: usize) -> Result<Self> {
        if data.ndim() != 3 {
            return Err(Error::dim(format!(
                "token sequence must be [B × T × C], got {:?}",
                data.shape()
            )));
        }
        let t = data.dim(1);
        if split == 0 || split >= t {
            return Err(Error::dim(format!(
                "split {split} must leave at least one template and one search token (T = {t})"
            )));
        }
        Ok(Self { data, split })
    }

    /// Joins template `[B × N1 × C]` and search `[B × N2 × C]` along the token axis.
    pub fn concat(template: &DenseArray<T>, search: &DenseArray<T>) -> Result<Self> {
        if template.ndim() != 3 || search.ndim() != 3 {
            return Err(Error::dim("template and search must be [B × N × C]"));
        }
        let (b, n1, c) = (template.dim(0), template.dim(1), template.dim(2));
        let n2 = search.dim(1);
        if search.dim(0) != b || search.dim(2) != c {
            return Err(Error::dim(format!(
                "template {:?} and search {:?} disagree on batch or channels",
                template.shape(),
                search.shape()
            )));
        }
        let mut data = Vec::with_capacity(b * (n1 + n2) * c);
        for i in 0..b {
            data.extend_from_slice(&template.data()[i * n1 * c..(i + 1) * n1 * c]);
            data.extend_from_slice(&search.data()[i * n2 * c..(i + 1) * n2 * c]);
        }
        Self::new(DenseArray::new(&[b, n1 + n2, c], data)?, n1)
    }

    pub fn data(&self) -> &DenseArray<T> {
        &self.data
    }

    pub fn into_data(self) -> DenseArray<T> {
        self.data
    }

    pub fn split(&self) -> usize {
        self.split
    }

    pub fn batch(&self) -> usize {
        self.data.dim(0)
    }

    pub fn tokens(&self) -> usize {
        self.data.dim(1)
    }

    pub fn channels(&self) -> usize {
        self.data.dim(2)
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.batch(), self.tokens(), self.channels()]
    }

    /// Copy of batch entry `i` as `[T × C]`.
    pub fn item(&self, i: usize) -> DenseArray<T> {
        let n = self.tokens() * self.channels();
        DenseArray::new(
            &[self.tokens(), self.channels()],
            self.data.data()[i * n..(i + 1) * n].to_vec(),
        )
        .expect("item shape")
    }

    /// Builds a sequence from per-item `[T × C]` arrays.
    pub fn from_items(items: &[DenseArray<T>], split: usize) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::dim("empty token batch"))?;
        let (t, c) = (first.dim(0), first.dim(1));
        let mut data = Vec::with_capacity(items.len() * t * c);
        for it in items {
            it.expect_shape(&[t, c], "token item")?;
            data.extend_from_slice(it.data());
        }
        Self::new(DenseArray::new(&[items.len(), t, c], data)?, split)
    }

    /// Search tokens of batch entry `i`, `[N2 × C]`.
    pub fn search_item(&self, i: usize) -> DenseArray<T> {
        let (t, c) = (self.tokens(), self.channels());
        let start = i * t * c + self.split * c;
        DenseArray::new(
            &[t - self.split, c],
            self.data.data()[start..(i + 1) * t * c].to_vec(),
        )
        .expect("search shape")
    }

    /// Same layout, different values.
    pub fn with_data(&self, data: DenseArray<T>) -> Result<Self> {
        data.expect_shape(self.data.shape(), "token data")?;
        Ok(Self {
            data,
            split: self.split,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_counts() {
        let z = DenseArray::<f32>::zeros(&[2, 64, 8]);
        let x = DenseArray::<f32>::zeros(&[2, 256, 8]);
        let s = TokenSeq::concat(&z, &x).unwrap();
        assert_eq!(s.shape(), [2, 320, 8]);
        assert_eq!(s.split(), 64);
        assert_eq!(s.search_item(1).shape(), &[256, 8]);
    }

    #[test]
    fn rejects_bad_split() {
        let d = DenseArray::<f32>::zeros(&[1, 4, 2]);
        assert!(TokenSeq::new(d.clone(), 0).is_err());
        assert!(TokenSeq::new(d.clone(), 4).is_err());
        assert!(TokenSeq::new(d, 1).is_ok());
    }

    #[test]
    fn concat_rejects_channel_mismatch() {
        let z = DenseArray::<f32>::zeros(&[1, 4, 8]);
        let x = DenseArray::<f32>::zeros(&[1, 16, 4]);
        assert!(matches!(TokenSeq::concat(&z, &x), Err(Error::Dimension(_))));
    }
}
