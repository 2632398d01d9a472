//! The small policy network: three equal-width relu hidden layers and an
//! 8-way action logit head, operating on normalized (start, goal) inputs.
//!
//! Parameters live in one flat vector with the documented order
//! `[w1, b1, w2, b2, w3, b3, w_out, b_out]`. For the hypernetwork this
//! vector is generated per map; for the embedding baseline it is a trainable
//! block, with a per-map context vector added to the first hidden
//! pre-activation.

use std::ops::Range;

use crate::gridworld::Cell;
use crate::neural::layers::{linear_backward, linear_forward, relu_backward, relu_forward};
use crate::neural::Real;

/// Actions scored by the output layer.
pub const ACTION_DIM: usize = 8;

/// Normalized coordinates: (v - 15) / 15, mapping 0..=30 onto [-1, 1].
pub fn normalize_coord<S: Real>(v: u8) -> S {
    S::from_f64((f64::from(v) - 15.0) / 15.0)
}

/// Network input for a (start, goal) pair: [s.row, s.col, g.row, g.col],
/// each normalized.
pub fn sample_input<S: Real>(s: Cell, g: Cell) -> [S; 4] {
    [
        normalize_coord(s.row),
        normalize_coord(s.col),
        normalize_coord(g.row),
        normalize_coord(g.col),
    ]
}

/// Shape of the policy MLP; offsets index into its flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PrimaryNet {
    pub width: usize,
    pub input_dim: usize,
}

/// Saved activations of a primary forward pass (all post-relu).
pub struct PrimaryTrace<S> {
    pub x: [S; 4],
    pub h1: Vec<S>,
    pub h2: Vec<S>,
    pub h3: Vec<S>,
}

/// One named segment of the flat primary parameter vector.
#[derive(Clone, Debug)]
pub struct PrimarySegment {
    pub name: &'static str,
    pub range: Range<usize>,
    /// Fan-in of the layer this segment feeds, `None` for biases.
    pub fan_in: Option<usize>,
    /// True for the output layer, which is zero-initialized.
    pub output: bool,
}

impl PrimaryNet {
    pub fn new(width: usize, input_dim: usize) -> PrimaryNet {
        assert!(width >= 1 && input_dim >= 1);
        PrimaryNet { width, input_dim }
    }

    pub fn w1(&self) -> Range<usize> {
        0..self.width * self.input_dim
    }
    pub fn b1(&self) -> Range<usize> {
        let s = self.w1().end;
        s..s + self.width
    }
    pub fn w2(&self) -> Range<usize> {
        let s = self.b1().end;
        s..s + self.width * self.width
    }
    pub fn b2(&self) -> Range<usize> {
        let s = self.w2().end;
        s..s + self.width
    }
    pub fn w3(&self) -> Range<usize> {
        let s = self.b2().end;
        s..s + self.width * self.width
    }
    pub fn b3(&self) -> Range<usize> {
        let s = self.w3().end;
        s..s + self.width
    }
    pub fn w_out(&self) -> Range<usize> {
        let s = self.b3().end;
        s..s + ACTION_DIM * self.width
    }
    pub fn b_out(&self) -> Range<usize> {
        let s = self.w_out().end;
        s..s + ACTION_DIM
    }

    /// Total parameter count: (d*h + h) + 2(h^2 + h) + (8h + 8).
    pub fn param_count(&self) -> usize {
        self.b_out().end
    }

    /// The flat layout, segment by segment, for init and export.
    pub fn segments(&self) -> [PrimarySegment; 8] {
        [
            PrimarySegment { name: "w1", range: self.w1(), fan_in: Some(self.input_dim), output: false },
            PrimarySegment { name: "b1", range: self.b1(), fan_in: None, output: false },
            PrimarySegment { name: "w2", range: self.w2(), fan_in: Some(self.width), output: false },
            PrimarySegment { name: "b2", range: self.b2(), fan_in: None, output: false },
            PrimarySegment { name: "w3", range: self.w3(), fan_in: Some(self.width), output: false },
            PrimarySegment { name: "b3", range: self.b3(), fan_in: None, output: false },
            PrimarySegment { name: "w_out", range: self.w_out(), fan_in: Some(self.width), output: true },
            PrimarySegment { name: "b_out", range: self.b_out(), fan_in: None, output: true },
        ]
    }

    /// Forward pass. `context`, when present, is added to the first hidden
    /// pre-activation (the embedding baseline's per-map projection).
    pub fn forward<S: Real>(&self, theta: &[S], x: &[S; 4], context: Option<&[S]>) -> ([S; ACTION_DIM], PrimaryTrace<S>) {
        debug_assert_eq!(theta.len(), self.param_count(), "theta length mismatch");
        let h = self.width;
        let mut h1 = linear_forward(&x[..self.input_dim], &theta[self.w1()], &theta[self.b1()], h, self.input_dim);
        if let Some(ctx) = context {
            debug_assert_eq!(ctx.len(), h, "context length mismatch");
            for (v, c) in h1.iter_mut().zip(ctx) {
                *v += *c;
            }
        }
        relu_forward(&mut h1);
        let mut h2 = linear_forward(&h1, &theta[self.w2()], &theta[self.b2()], h, h);
        relu_forward(&mut h2);
        let mut h3 = linear_forward(&h2, &theta[self.w3()], &theta[self.b3()], h, h);
        relu_forward(&mut h3);
        let out = linear_forward(&h3, &theta[self.w_out()], &theta[self.b_out()], ACTION_DIM, h);
        let mut logits = [S::zero(); ACTION_DIM];
        logits.copy_from_slice(&out);
        (logits, PrimaryTrace { x: *x, h1, h2, h3 })
    }

    /// Logits only, no trace.
    pub fn infer<S: Real>(&self, theta: &[S], x: &[S; 4], context: Option<&[S]>) -> [S; ACTION_DIM] {
        self.forward(theta, x, context).0
    }

    /// Accumulate gradients with respect to theta (into `gtheta`) and, when
    /// requested, the context vector (into `gcontext`).
    pub fn backward<S: Real>(
        &self,
        theta: &[S],
        trace: &PrimaryTrace<S>,
        dlogits: &[S; ACTION_DIM],
        gtheta: &mut [S],
        gcontext: Option<&mut [S]>,
    ) {
        debug_assert_eq!(gtheta.len(), self.param_count());
        let h = self.width;

        let mut dh3 = vec![S::zero(); h];
        {
            let (head, tail) = gtheta.split_at_mut(self.b_out().start);
            linear_backward(
                &trace.h3,
                &theta[self.w_out()],
                dlogits,
                ACTION_DIM,
                h,
                &mut head[self.w_out()],
                &mut tail[..ACTION_DIM],
                Some(&mut dh3),
            );
        }
        relu_backward(&trace.h3, &mut dh3);

        let mut dh2 = vec![S::zero(); h];
        {
            let (head, tail) = gtheta.split_at_mut(self.b3().start);
            linear_backward(
                &trace.h2,
                &theta[self.w3()],
                &dh3,
                h,
                h,
                &mut head[self.w3()],
                &mut tail[..h],
                Some(&mut dh2),
            );
        }
        relu_backward(&trace.h2, &mut dh2);

        let mut dh1 = vec![S::zero(); h];
        {
            let (head, tail) = gtheta.split_at_mut(self.b2().start);
            linear_backward(
                &trace.h1,
                &theta[self.w2()],
                &dh2,
                h,
                h,
                &mut head[self.w2()],
                &mut tail[..h],
                Some(&mut dh1),
            );
        }
        relu_backward(&trace.h1, &mut dh1);

        {
            let (head, tail) = gtheta.split_at_mut(self.b1().start);
            linear_backward(
                &trace.x[..self.input_dim],
                &theta[self.w1()],
                &dh1,
                h,
                self.input_dim,
                &mut head[self.w1()],
                &mut tail[..h],
                None,
            );
        }
        if let Some(gctx) = gcontext {
            // context feeds the same pre-activation as b1
            for (g, d) in gctx.iter_mut().zip(&dh1) {
                *g += *d;
            }
        }
    }
}
