use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A named slice of the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    pub data: Vec<f64>,
    pub segments: Vec<Segment>,
}

impl ParamStore {
    /// Appends a zeroed segment and returns its index.
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize]) -> usize {
        let seg = Segment {
            name: name.into(),
            shape: shape.to_vec(),
            offset: self.data.len(),
        };
        self.data.resize(self.data.len() + seg.len(), 0.0);
        self.segments.push(seg);
        self.segments.len() - 1
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, seg: usize) -> &[f64] {
        &self.data[self.segments[seg].range()]
    }

    /// Uniform in `±1/sqrt(fan_in)` for every segment named `*.w`; the fan-in
    /// is the product of all but the first dimension. Biases stay zero.
    pub fn init_uniform(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for seg in &self.segments {
            if !seg.name.ends_with(".w") {
                continue;
            }
            let fan_in: usize = seg.shape[1..].iter().product();
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            for v in &mut self.data[seg.range()] {
                *v = rng.gen_range(-bound..bound);
            }
        }
    }

    /// Name of the segment holding flat index `i`, and the offset inside it.
    pub fn locate(&self, i: usize) -> Option<(&str, usize)> {
        self.segments
            .iter()
            .find(|s| s.range().contains(&i))
            .map(|s| (s.name.as_str(), i - s.offset))
    }
}
