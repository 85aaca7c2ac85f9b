//! Forward pass and hand-written backpropagation.
//!
//! Notation per position `t` of the valid prefix (`T` positions):
//!
//! ```text
//! z_t   = Wx x_t + Wh h_{t-1} + b          gates i, f, o, g
//! c_t   = f * c_{t-1} + i * g
//! h_t   = o * tanh(c_t)                    forward cell runs 0..T,
//!                                          backward cell runs T-1..0
//! H_t   = hf_t + hb_t
//! u_t   = tanh(H_t)
//! a     = softmax_t(t_a . u_t)             over valid positions only
//! s     = sum_t a_t H_t
//! s'    = tanh(s)
//! p     = softmax(W' s' + b')
//! ```
//!
//! Input projections `Wx x_t + b` are computed once per distinct input row,
//! and the matching weight gradients are accumulated per distinct row too.
//! Input gradients, when asked for, are accumulated per caller-chosen slot
//! (for joint training, one slot per vocabulary token).

use std::collections::HashMap;

use super::model::{DetectionModel, Direction};
use crate::embed::PaddedVectorSequence;

/// Everything the forward pass computed that localization needs.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    /// Attention weight per input position, length `L`; zero on pads.
    pub alpha: Vec<f64>,
    pub valid_len: usize,
    /// Summed hidden state per valid position, `valid_len x H` row-major.
    pub h: Vec<f64>,
    pub s: Vec<f64>,
    pub s_prime: Vec<f64>,
    /// Class probabilities, malicious first.
    pub p: [f64; 2],
}

#[derive(Default)]
struct DirTape {
    /// Activated gates per position, `T x 4H`.
    gates: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

/// Where the backward pass sends `dL/dx`: position `t` of the valid prefix
/// adds into row `slot[t]` of `dx` (`slots x v`); `None` positions are
/// skipped.
pub(crate) struct InputGrad<'a> {
    pub slot: &'a [Option<usize>],
    pub dx: &'a mut [f64],
}

pub(crate) struct Tape {
    t: usize,
    /// Distinct-row id of every valid position.
    row_id: Vec<usize>,
    /// First position holding each distinct row.
    distinct: Vec<usize>,
    dirs: [DirTape; 2],
    u: Vec<f64>,
    pub(crate) trace: AttentionTrace,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

// Eight independent lanes so the loop vectorizes; the summation order is
// fixed, so results stay deterministic.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[4]) + (acc[1] + acc[5]) + (acc[2] + acc[6]) + (acc[3] + acc[7]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (y, x) in y.iter_mut().zip(x) {
        *y += alpha * x;
    }
}

/// Softmax over `logits`, shifted by the max for stability.
fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

fn dedup_rows(x: &PaddedVectorSequence) -> (Vec<usize>, Vec<usize>) {
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut distinct = Vec::new();
    let row_id = (0..x.valid_len())
        .map(|t| {
            let key: Vec<u64> = x.row(t).iter().map(|f| f.to_bits()).collect();
            *seen.entry(key).or_insert_with(|| {
                distinct.push(t);
                distinct.len() - 1
            })
        })
        .collect();
    (row_id, distinct)
}

impl DetectionModel {
    /// `Wx x + b` for every distinct row, `distinct x 4H`.
    fn project(&self, d: Direction, x: &PaddedVectorSequence, distinct: &[usize]) -> Vec<f64> {
        let (v, g4) = (self.v(), 4 * self.hidden());
        let wx = &self.params[self.layout.wx(d)];
        let b = &self.params[self.layout.bias(d)];
        let mut out = Vec::with_capacity(distinct.len() * g4);
        for &t in distinct {
            let row = x.row(t);
            for r in 0..g4 {
                out.push(b[r] + dot(&wx[r * v..(r + 1) * v], row));
            }
        }
        out
    }

    fn run_cell(&self, d: Direction, proj: &[f64], row_id: &[usize]) -> DirTape {
        let h = self.hidden();
        let g4 = 4 * h;
        let t_len = row_id.len();
        let wh = &self.params[self.layout.wh(d)];
        let mut tape = DirTape {
            gates: vec![0.0; t_len * g4],
            c: vec![0.0; t_len * h],
            tanh_c: vec![0.0; t_len * h],
            h: vec![0.0; t_len * h],
        };
        let zero = vec![0.0; h];
        let order: Box<dyn Iterator<Item = usize>> = match d {
            Direction::Forward => Box::new(0..t_len),
            Direction::Backward => Box::new((0..t_len).rev()),
        };
        let mut prev: Option<usize> = None;
        for t in order {
            let (h_prev, c_prev) = match prev {
                Some(p) => (
                    tape.h[p * h..(p + 1) * h].to_vec(),
                    tape.c[p * h..(p + 1) * h].to_vec(),
                ),
                None => (zero.clone(), zero.clone()),
            };
            let z = &mut tape.gates[t * g4..(t + 1) * g4];
            let pr = &proj[row_id[t] * g4..(row_id[t] + 1) * g4];
            for r in 0..g4 {
                z[r] = pr[r] + dot(&wh[r * h..(r + 1) * h], &h_prev);
            }
            for (r, zr) in z.iter_mut().enumerate() {
                *zr = if r < 3 * h { sigmoid(*zr) } else { zr.tanh() };
            }
            for k in 0..h {
                let (i, f, o, g) = (z[k], z[h + k], z[2 * h + k], z[3 * h + k]);
                let c = f * c_prev[k] + i * g;
                let tc = c.tanh();
                tape.c[t * h + k] = c;
                tape.tanh_c[t * h + k] = tc;
                tape.h[t * h + k] = o * tc;
            }
            prev = Some(t);
        }
        tape
    }

    pub(crate) fn check_input(&self, x: &PaddedVectorSequence) -> Result<(), super::NnError> {
        if x.dim() != self.v() || x.len() != self.max_len {
            return Err(super::NnError::DimensionMismatch {
                expected: (self.max_len, self.v()),
                got: (x.len(), x.dim()),
            });
        }
        Ok(())
    }

    pub(crate) fn run(&self, x: &PaddedVectorSequence) -> Tape {
        let h = self.hidden();
        let t_len = x.valid_len();
        let (row_id, distinct) = dedup_rows(x);
        let dirs = [Direction::Forward, Direction::Backward].map(|d| {
            let proj = self.project(d, x, &distinct);
            self.run_cell(d, &proj, &row_id)
        });
        let hsum: Vec<f64> = dirs[0].h.iter().zip(&dirs[1].h).map(|(a, b)| a + b).collect();
        let u: Vec<f64> = hsum.iter().map(|x| x.tanh()).collect();
        let ta = &self.params[self.layout.attention()];
        let mut alpha = vec![0.0; x.len()];
        if t_len > 0 {
            for t in 0..t_len {
                alpha[t] = dot(ta, &u[t * h..(t + 1) * h]);
            }
            softmax_in_place(&mut alpha[..t_len]);
        }
        let mut s = vec![0.0; h];
        for t in 0..t_len {
            axpy(alpha[t], &hsum[t * h..(t + 1) * h], &mut s);
        }
        let s_prime: Vec<f64> = s.iter().map(|x| x.tanh()).collect();
        let wo = &self.params[self.layout.head_weights()];
        let bo = &self.params[self.layout.head_bias()];
        let mut p = [
            bo[0] + dot(&wo[..h], &s_prime),
            bo[1] + dot(&wo[h..], &s_prime),
        ];
        softmax_in_place(&mut p);
        Tape {
            t: t_len,
            row_id,
            distinct,
            dirs,
            u,
            trace: AttentionTrace {
                alpha,
                valid_len: t_len,
                h: hsum,
                s,
                s_prime,
                p,
            },
        }
    }

    /// Cross-entropy of the class at `target`, from the logits in the tape.
    pub(crate) fn loss_of(tape: &Tape, target: usize) -> f64 {
        -tape.trace.p[target].max(f64::MIN_POSITIVE).ln()
    }

    /// Accumulate the cross-entropy gradient into `grad` (same layout as
    /// the parameters) and return the loss.
    pub(crate) fn backward(
        &self,
        x: &PaddedVectorSequence,
        tape: &Tape,
        target: usize,
        grad: &mut [f64],
        mut input: Option<InputGrad<'_>>,
    ) -> f64 {
        let h = self.hidden();
        let g4 = 4 * h;
        let v = self.v();
        let lay = self.layout;
        let tr = &tape.trace;
        let t_len = tape.t;

        // head
        let mut dlogit = tr.p;
        dlogit[target] -= 1.0;
        {
            let gw = &mut grad[lay.head_weights()];
            axpy(dlogit[0], &tr.s_prime, &mut gw[..h]);
            axpy(dlogit[1], &tr.s_prime, &mut gw[h..]);
        }
        grad[lay.head_bias()]
            .iter_mut()
            .zip(dlogit)
            .for_each(|(g, d)| *g += d);
        let wo = &self.params[lay.head_weights()];
        let ds: Vec<f64> = (0..h)
            .map(|k| {
                let dsp = dlogit[0] * wo[k] + dlogit[1] * wo[h + k];
                dsp * (1.0 - tr.s_prime[k] * tr.s_prime[k])
            })
            .collect();

        // attention
        let ta = &self.params[lay.attention()];
        let mut dh = vec![0.0; t_len * h];
        let dalpha: Vec<f64> = (0..t_len)
            .map(|t| dot(&ds, &tr.h[t * h..(t + 1) * h]))
            .collect();
        let mean: f64 = (0..t_len).map(|t| tr.alpha[t] * dalpha[t]).sum();
        let mut dta = vec![0.0; h];
        for t in 0..t_len {
            let de = tr.alpha[t] * (dalpha[t] - mean);
            let u = &tape.u[t * h..(t + 1) * h];
            axpy(de, u, &mut dta);
            let dht = &mut dh[t * h..(t + 1) * h];
            for k in 0..h {
                dht[k] = tr.alpha[t] * ds[k] + de * ta[k] * (1.0 - u[k] * u[k]);
            }
        }
        grad[lay.attention()]
            .iter_mut()
            .zip(&dta)
            .for_each(|(g, d)| *g += d);

        // recurrent cells
        for d in [Direction::Forward, Direction::Backward] {
            let dt = &tape.dirs[d as usize];
            let wh = &self.params[lay.wh(d)];
            let mut dz_rows = vec![0.0; tape.distinct.len() * g4];
            let slots = input.as_ref().map_or(0, |ig| ig.dx.len() / v);
            let mut dz_slots = vec![0.0; slots * g4];
            let mut dwh = vec![0.0; g4 * h];
            let mut db = vec![0.0; g4];
            let mut dh_next = vec![0.0; h];
            let mut dc_next = vec![0.0; h];
            let mut dz = vec![0.0; g4];
            let order: Box<dyn Iterator<Item = usize>> = match d {
                Direction::Forward => Box::new((0..t_len).rev()),
                Direction::Backward => Box::new(0..t_len),
            };
            for t in order {
                let prev = match d {
                    Direction::Forward => t.checked_sub(1),
                    Direction::Backward => Some(t + 1).filter(|&p| p < t_len),
                };
                let gates = &dt.gates[t * g4..(t + 1) * g4];
                for k in 0..h {
                    let (i, f, o, g) = (gates[k], gates[h + k], gates[2 * h + k], gates[3 * h + k]);
                    let tc = dt.tanh_c[t * h + k];
                    let dht = dh[t * h + k] + dh_next[k];
                    let dc = dc_next[k] + dht * o * (1.0 - tc * tc);
                    let c_prev = prev.map_or(0.0, |p| dt.c[p * h + k]);
                    dz[k] = dc * g * i * (1.0 - i);
                    dz[h + k] = dc * c_prev * f * (1.0 - f);
                    dz[2 * h + k] = dht * tc * o * (1.0 - o);
                    dz[3 * h + k] = dc * i * (1.0 - g * g);
                    dc_next[k] = dc * f;
                }
                axpy(1.0, &dz, &mut db);
                let id = tape.row_id[t];
                axpy(1.0, &dz, &mut dz_rows[id * g4..(id + 1) * g4]);
                if let Some(slot) = input.as_ref().and_then(|ig| ig.slot[t]) {
                    axpy(1.0, &dz, &mut dz_slots[slot * g4..(slot + 1) * g4]);
                }
                dh_next.fill(0.0);
                if let Some(p) = prev {
                    let h_prev = &dt.h[p * h..(p + 1) * h];
                    for r in 0..g4 {
                        if dz[r] != 0.0 {
                            axpy(dz[r], h_prev, &mut dwh[r * h..(r + 1) * h]);
                            axpy(dz[r], &wh[r * h..(r + 1) * h], &mut dh_next);
                        }
                    }
                }
            }
            grad[lay.wh(d)].iter_mut().zip(&dwh).for_each(|(g, x)| *g += x);
            grad[lay.bias(d)].iter_mut().zip(&db).for_each(|(g, x)| *g += x);
            if let Some(ig) = input.as_mut() {
                let wx = &self.params[lay.wx(d)];
                for (slot, dzs) in dz_slots.chunks_exact(g4).enumerate() {
                    let dx = &mut ig.dx[slot * v..(slot + 1) * v];
                    for r in 0..g4 {
                        if dzs[r] != 0.0 {
                            axpy(dzs[r], &wx[r * v..(r + 1) * v], dx);
                        }
                    }
                }
            }
            let gwx = &mut grad[lay.wx(d)];
            for (id, &t) in tape.distinct.iter().enumerate() {
                let row = x.row(t);
                let dzr = &dz_rows[id * g4..(id + 1) * g4];
                for r in 0..g4 {
                    if dzr[r] != 0.0 {
                        axpy(dzr[r], row, &mut gwx[r * v..(r + 1) * v]);
                    }
                }
            }
        }
        Self::loss_of(tape, target)
    }
}
