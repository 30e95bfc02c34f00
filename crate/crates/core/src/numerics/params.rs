use crate::numerics::array::{DenseArray, Real};

/// A structure of named parameter arrays. Gradients and optimizer moments use
/// the same structure, so every walker (checkpointing, AdamW, gradient
/// checking, parameter counting) goes through these two visitors and sees the
/// arrays in the same order.
pub trait ParamTree<T: Real> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a DenseArray<T>)>);

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut DenseArray<T>)>);

    fn named(&self) -> Vec<(String, &DenseArray<T>)> {
        let mut out = Vec::new();
        self.visit("", &mut out);
        for (name, _) in &mut out {
            if let Some(stripped) = name.strip_prefix('.') {
                *name = stripped.to_string();
            }
        }
        out
    }

    fn named_mut(&mut self) -> Vec<(String, &mut DenseArray<T>)> {
        let mut out = Vec::new();
        self.visit_mut("", &mut out);
        for (name, _) in &mut out {
            if let Some(stripped) = name.strip_prefix('.') {
                *name = stripped.to_string();
            }
        }
        out
    }

    fn num_params(&self) -> usize {
        self.named().iter().map(|(_, a)| a.len()).sum()
    }

    fn zeros_like(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut z = self.clone();
        for (_, a) in z.named_mut() {
            a.fill(T::zero());
        }
        z
    }

    /// Sets every array to zero in place.
    fn zero_all(&mut self) {
        for (_, a) in self.named_mut() {
            a.fill(T::zero());
        }
    }
}

impl<T: Real, P: ParamTree<T>> ParamTree<T> for Vec<P> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a DenseArray<T>)>) {
        for (i, p) in self.iter().enumerate() {
            p.visit(&format!("{prefix}.{i}"), out);
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut DenseArray<T>)>) {
        for (i, p) in self.iter_mut().enumerate() {
            p.visit_mut(&format!("{prefix}.{i}"), out);
        }
    }
}

impl<T: Real, P: ParamTree<T>> ParamTree<T> for Option<P> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a DenseArray<T>)>) {
        if let Some(p) = self {
            p.visit(prefix, out);
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut DenseArray<T>)>) {
        if let Some(p) = self {
            p.visit_mut(prefix, out);
        }
    }
}
