use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{ContainerError, Reader, Writer};

/// Which recurrent cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward = 0,
    Backward = 1,
}

/// Offsets of every parameter tensor inside the flat parameter vector.
///
/// Per cell: input weights `4H x v`, recurrent weights `4H x H`, bias `4H`,
/// gate blocks in the order input, forget, output, candidate. Then the
/// attention context `t_a` (`H`), head weights `W'` (`2 x H`) and head bias
/// `b'` (`2`). Everything row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub v: usize,
    pub h: usize,
}

impl Layout {
    fn cell_len(&self) -> usize {
        4 * self.h * (self.v + self.h + 1)
    }

    pub fn wx(&self, d: Direction) -> Range<usize> {
        let base = d as usize * self.cell_len();
        base..base + 4 * self.h * self.v
    }

    pub fn wh(&self, d: Direction) -> Range<usize> {
        let start = self.wx(d).end;
        start..start + 4 * self.h * self.h
    }

    pub fn bias(&self, d: Direction) -> Range<usize> {
        let start = self.wh(d).end;
        start..start + 4 * self.h
    }

    pub fn attention(&self) -> Range<usize> {
        let start = 2 * self.cell_len();
        start..start + self.h
    }

    pub fn head_weights(&self) -> Range<usize> {
        let start = self.attention().end;
        start..start + 2 * self.h
    }

    pub fn head_bias(&self) -> Range<usize> {
        let start = self.head_weights().end;
        start..start + 2
    }

    pub fn total(&self) -> usize {
        self.head_bias().end
    }
}

/// Named slices of the parameter vector, used for per-group reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    InputWeights(Direction),
    RecurrentWeights(Direction),
    GateBias(Direction),
    AttentionContext,
    HeadWeights,
    HeadBias,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 9] = [
        ParamGroup::InputWeights(Direction::Forward),
        ParamGroup::RecurrentWeights(Direction::Forward),
        ParamGroup::GateBias(Direction::Forward),
        ParamGroup::InputWeights(Direction::Backward),
        ParamGroup::RecurrentWeights(Direction::Backward),
        ParamGroup::GateBias(Direction::Backward),
        ParamGroup::AttentionContext,
        ParamGroup::HeadWeights,
        ParamGroup::HeadBias,
    ];

    pub fn range(self, layout: &Layout) -> Range<usize> {
        match self {
            ParamGroup::InputWeights(d) => layout.wx(d),
            ParamGroup::RecurrentWeights(d) => layout.wh(d),
            ParamGroup::GateBias(d) => layout.bias(d),
            ParamGroup::AttentionContext => layout.attention(),
            ParamGroup::HeadWeights => layout.head_weights(),
            ParamGroup::HeadBias => layout.head_bias(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::InputWeights(Direction::Forward) => "forward.input_weights",
            ParamGroup::RecurrentWeights(Direction::Forward) => "forward.recurrent_weights",
            ParamGroup::GateBias(Direction::Forward) => "forward.bias",
            ParamGroup::InputWeights(Direction::Backward) => "backward.input_weights",
            ParamGroup::RecurrentWeights(Direction::Backward) => "backward.recurrent_weights",
            ParamGroup::GateBias(Direction::Backward) => "backward.bias",
            ParamGroup::AttentionContext => "attention_context",
            ParamGroup::HeadWeights => "head_weights",
            ParamGroup::HeadBias => "head_bias",
        }
    }
}

/// Bidirectional LSTM with additive attention and a two-way softmax head.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionModel {
    pub layout: Layout,
    /// Fixed input length `L`.
    pub max_len: usize,
    pub seed: u64,
    /// SHA-256 of the vocabulary/embedding file the model was trained on.
    pub embedding_hash: [u8; 32],
    pub params: Vec<f64>,
}

impl DetectionModel {
    /// Fresh model: weights uniform in `[-0.08, 0.08]`, gate biases zero
    /// except the forget gate at 1.0, head bias zero.
    pub fn new(v: usize, h: usize, max_len: usize, seed: u64) -> DetectionModel {
        let layout = Layout { v, h };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params: Vec<f64> = (0..layout.total())
            .map(|_| rng.random_range(-0.08..=0.08))
            .collect();
        for d in [Direction::Forward, Direction::Backward] {
            let b = layout.bias(d);
            params[b.clone()].fill(0.0);
            params[b.start + h..b.start + 2 * h].fill(1.0);
        }
        params[layout.head_bias()].fill(0.0);
        DetectionModel {
            layout,
            max_len,
            seed,
            embedding_hash: [0; 32],
            params,
        }
    }

    pub fn v(&self) -> usize {
        self.layout.v
    }

    pub fn hidden(&self) -> usize {
        self.layout.h
    }

    pub fn group(&self, g: ParamGroup) -> &[f64] {
        &self.params[g.range(&self.layout)]
    }

    pub fn group_mut(&mut self, g: ParamGroup) -> &mut [f64] {
        let r = g.range(&self.layout);
        &mut self.params[r]
    }

    /// Exchange the forward and backward cell parameters.
    pub fn swap_directions(&mut self) {
        let f = self.layout.wx(Direction::Forward).start..self.layout.bias(Direction::Forward).end;
        let b = self.layout.wx(Direction::Backward).start;
        let (lo, hi) = self.params.split_at_mut(b);
        lo[f.clone()].swap_with_slice(&mut hi[..f.len()]);
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|x| x.is_finite())
    }
}

const MAGIC: &[u8; 8] = b"MSEQMDL\0";
const VERSION: u32 = 1;

/// Serialize a model.
///
/// ```text
/// magic           8 bytes "MSEQMDL\0"
/// version         u32     1
/// v, H, L, seed   u64 each
/// embedding hash  32 bytes (raw SHA-256)
/// count           u64     number of parameters
/// params          count f64, layout order
/// ```
///
/// All integers and floats little-endian.
pub fn write_model(model: &DetectionModel) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.u64(model.layout.v as u64);
    w.u64(model.layout.h as u64);
    w.u64(model.max_len as u64);
    w.u64(model.seed);
    w.bytes(&model.embedding_hash);
    w.u64(model.params.len() as u64);
    w.f64s(&model.params);
    w.buf
}

pub fn read_model(bytes: &[u8]) -> Result<DetectionModel, ContainerError> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC, "MSEQMDL")?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(ContainerError::UnsupportedVersion(version));
    }
    let v = r.u64()? as usize;
    let h = r.u64()? as usize;
    let max_len = r.u64()? as usize;
    let seed = r.u64()?;
    let embedding_hash: [u8; 32] = r.take(32)?.try_into().unwrap();
    let count = r.count(8)?;
    let layout = Layout { v, h };
    if v == 0 || h == 0 || max_len == 0 || v.checked_mul(h).is_none() || count != layout.total() {
        return Err(ContainerError::Invalid(format!(
            "parameter count {count} does not match v={v}, H={h}, L={max_len}"
        )));
    }
    let params = r.f64s(count)?;
    r.finish()?;
    if params.iter().any(|x| !x.is_finite()) {
        return Err(ContainerError::Invalid("non-finite parameter".into()));
    }
    Ok(DetectionModel {
        layout,
        max_len,
        seed,
        embedding_hash,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_contiguous() {
        let l = Layout { v: 4, h: 3 };
        let mut end = 0;
        for g in ParamGroup::ALL {
            let r = g.range(&l);
            assert_eq!(r.start, end, "{}", g.name());
            end = r.end;
        }
        assert_eq!(end, l.total());
        assert_eq!(l.total(), 2 * (48 + 36 + 12) + 3 + 6 + 2);
    }

    #[test]
    fn init_ranges() {
        let m = DetectionModel::new(5, 4, 7, 3);
        let b = m.group(ParamGroup::GateBias(Direction::Backward));
        assert_eq!(&b[4..8], &[1.0; 4]);
        assert!(b[..4].iter().chain(&b[8..]).all(|&x| x == 0.0));
        assert!(m
            .group(ParamGroup::InputWeights(Direction::Forward))
            .iter()
            .all(|x| x.abs() <= 0.08));
        assert_eq!(m, DetectionModel::new(5, 4, 7, 3));
    }

    #[test]
    fn swap_twice_is_identity() {
        let m = DetectionModel::new(3, 2, 4, 9);
        let mut s = m.clone();
        s.swap_directions();
        assert_eq!(
            s.group(ParamGroup::RecurrentWeights(Direction::Forward)),
            m.group(ParamGroup::RecurrentWeights(Direction::Backward))
        );
        s.swap_directions();
        assert_eq!(s, m);
    }

    #[test]
    fn container_roundtrip() {
        let mut m = DetectionModel::new(3, 2, 4, 9);
        m.embedding_hash = [7; 32];
        let bytes = write_model(&m);
        let back = read_model(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(write_model(&back), bytes);
        assert!(read_model(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_model(&bad), Err(ContainerError::BadMagic { .. })));
    }
}
