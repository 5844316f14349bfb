use serde::Serialize;

/// One named tensor inside the flat parameter buffer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    /// Subject to decoupled weight decay (affine weights only).
    pub decay: bool,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.numel()
    }
}

/// Every trainable scalar in one contiguous buffer, addressed by spec index.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub specs: Vec<ParamSpec>,
    pub values: Vec<f64>,
}

impl Params {
    pub fn new() -> Self {
        Self {
            specs: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: &str, shape: &[usize], decay: bool) -> usize {
        let spec = ParamSpec {
            name: name.to_string(),
            shape: shape.to_vec(),
            offset: self.values.len(),
            decay,
        };
        self.values.resize(self.values.len() + spec.numel(), 0.0);
        self.specs.push(spec);
        self.specs.len() - 1
    }

    #[inline]
    pub fn get(&self, id: usize) -> &[f64] {
        &self.values[self.specs[id].range()]
    }

    #[inline]
    pub fn get_mut(&mut self, id: usize) -> &mut [f64] {
        let r = self.specs[id].range();
        &mut self.values[r]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }

    pub fn zeros_like(&self) -> Vec<f64> {
        vec![0.0; self.values.len()]
    }
}

impl Default for Params {
    fn default() -> Self {
        Self::new()
    }
}
