#pragma once

#include "flowmix/tape.hpp"

namespace flowmix {

/// Layer vocabulary. Every op validates shapes, rejects non-finite input,
/// broadcasts over the (batch, flow) axes unchanged and records a tape node.

/// x: [B,F,din], weight: [din,dout], bias: [dout] -> [B,F,dout].
Var dense_forward(Tape& tape, Var x, Var weight, Var bias);

/// x: [B,F,C,L], kernels: [C',C,k] with k odd -> [B,F,C',L'] under
/// same-padding floor(k/2); L' = floor((L + 2*pad - k)/stride) + 1.
Var conv1d_forward(Tape& tape, Var x, Var kernels, Index stride);

/// x: [B,F,C,H,W], kernels: [C',C,k,k]; the 2-D analogue of conv1d_forward.
Var conv2d_forward(Tape& tape, Var x, Var kernels, Index stride);

Var relu(Tape& tape, Var x);
Var sigmoid(Tape& tape, Var x);

/// Mean over all spatial/length axes per channel per flow slot:
/// [B,F,C,...] -> [B,F,C]. Requires rank >= 4.
Var global_avg_pool(Tape& tape, Var x);

/// Elementwise and reduction helpers (test composition and loss internals).
Var add(Tape& tape, Var a, Var b);
Var mul(Tape& tape, Var a, Var b);
Var reduce_sum(Tape& tape, Var x);

}  // namespace flowmix
