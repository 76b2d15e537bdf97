#include "flowmix/ops.hpp"

#include <cmath>

namespace flowmix {

namespace {

void check_rank(const FlowTensor& t, Index rank, const char* who) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(who) + ": expected rank " + std::to_string(rank) + " input, got " +
                         shape_str(t.shape()));
  }
}

}  // namespace

Var dense_forward(Tape& tape, Var x, Var weight, Var bias) {
  const FlowTensor& xv = tape.value(x);
  const FlowTensor& wv = tape.value(weight);
  const FlowTensor& bv = tape.value(bias);
  require_finite(xv, "dense_forward");
  require_finite(wv, "dense_forward");
  require_finite(bv, "dense_forward");
  if (xv.rank() < 2) throw DimensionError("dense_forward: input must be [B,F,din], got " + shape_str(xv.shape()));
  check_rank(wv, 2, "dense_forward(weight)");
  check_rank(bv, 1, "dense_forward(bias)");
  const Index din = xv.shape().back();
  const Index rows = xv.numel() / din;
  const Index dout = wv.dim(1);
  if (wv.dim(0) != din || bv.dim(0) != dout) {
    throw DimensionError("dense_forward: input " + shape_str(xv.shape()) + " incompatible with weight " +
                         shape_str(wv.shape()) + " / bias " + shape_str(bv.shape()));
  }

  Shape out_shape = xv.shape();
  out_shape.back() = dout;
  FlowTensor out(out_shape);
  {
    auto X = xv.as_matrix(rows, din);
    auto W = wv.as_matrix(din, dout);
    auto B = bv.as_matrix(1, dout);
    auto Y = out.as_matrix(rows, dout);
    Y.noalias() = X * W;
    Y.rowwise() += B.row(0);
  }

  auto backward = [x, weight, bias, rows, din, dout](Tape& t, const ArrayXd& grad_out) {
    ConstMapMat dY(grad_out.data(), rows, dout);
    const FlowTensor& xin = t.value(x);
    const FlowTensor& win = t.value(weight);
    auto X = xin.as_matrix(rows, din);
    auto W = win.as_matrix(din, dout);
    MapMat dX(t.grad_buffer(x).data(), rows, din);
    MapMat dW(t.grad_buffer(weight).data(), din, dout);
    MapMat dB(t.grad_buffer(bias).data(), 1, dout);
    dX.noalias() += dY * W.transpose();
    dW.noalias() += X.transpose() * dY;
    dB.row(0) += dY.colwise().sum();
  };
  return tape.emplace("dense", {x, weight, bias}, std::move(out), std::move(backward));
}

namespace {

struct Conv1dDims {
  Index batch, flow, cin, len, cout, k, pad, lout;
};

Conv1dDims conv1d_dims(const FlowTensor& x, const FlowTensor& kernels, Index stride) {
  if (stride < 1) throw ConfigError("conv1d_forward: stride must be >= 1, got " + std::to_string(stride));
  if (x.rank() != 4) throw DimensionError("conv1d_forward: input must be [B,F,C,L], got " + shape_str(x.shape()));
  if (kernels.rank() != 3) {
    throw DimensionError("conv1d_forward: kernels must be [C',C,k], got " + shape_str(kernels.shape()));
  }
  Conv1dDims d;
  d.batch = x.dim(0);
  d.flow = x.dim(1);
  d.cin = x.dim(2);
  d.len = x.dim(3);
  d.cout = kernels.dim(0);
  d.k = kernels.dim(2);
  if (kernels.dim(1) != d.cin) {
    throw DimensionError("conv1d_forward: input " + shape_str(x.shape()) + " incompatible with kernels " +
                         shape_str(kernels.shape()));
  }
  if (d.k % 2 == 0) throw ConfigError("conv1d_forward: kernel size must be odd, got " + std::to_string(d.k));
  if (d.len < d.k) {
    throw DimensionError("conv1d_forward: length " + std::to_string(d.len) + " shorter than kernel " +
                         std::to_string(d.k));
  }
  d.pad = d.k / 2;
  d.lout = (d.len + 2 * d.pad - d.k) / stride + 1;
  return d;
}

// Gathers the [C*k x L'] patch matrix for one (batch, flow) slice.
void im2col_1d(const double* x, const Conv1dDims& d, Index stride, MatRM& col) {
  col.setZero();
  for (Index c = 0; c < d.cin; ++c) {
    for (Index t = 0; t < d.k; ++t) {
      const Index row = c * d.k + t;
      for (Index o = 0; o < d.lout; ++o) {
        const Index src = o * stride + t - d.pad;
        if (src >= 0 && src < d.len) col(row, o) = x[c * d.len + src];
      }
    }
  }
}

}  // namespace

Var conv1d_forward(Tape& tape, Var x, Var kernels, Index stride) {
  const FlowTensor& xv = tape.value(x);
  const FlowTensor& kv = tape.value(kernels);
  require_finite(xv, "conv1d_forward");
  require_finite(kv, "conv1d_forward");
  const Conv1dDims d = conv1d_dims(xv, kv, stride);

  FlowTensor out(Shape{d.batch, d.flow, d.cout, d.lout});
  auto K = kv.as_matrix(d.cout, d.cin * d.k);
  MatRM col(d.cin * d.k, d.lout);
  for (Index b = 0; b < d.batch; ++b) {
    for (Index f = 0; f < d.flow; ++f) {
      const Index slice = b * d.flow + f;
      im2col_1d(xv.data() + slice * d.cin * d.len, d, stride, col);
      MapMat(out.data() + slice * d.cout * d.lout, d.cout, d.lout).noalias() = K * col;
    }
  }

  auto backward = [x, kernels, d, stride](Tape& t, const ArrayXd& grad_out) {
    const FlowTensor& xin = t.value(x);
    const FlowTensor& kin = t.value(kernels);
    auto K = kin.as_matrix(d.cout, d.cin * d.k);
    double* dx = t.grad_buffer(x).data();
    MapMat dK(t.grad_buffer(kernels).data(), d.cout, d.cin * d.k);
    MatRM col(d.cin * d.k, d.lout);
    MatRM dcol(d.cin * d.k, d.lout);
    for (Index b = 0; b < d.batch; ++b) {
      for (Index f = 0; f < d.flow; ++f) {
        const Index slice = b * d.flow + f;
        ConstMapMat dY(grad_out.data() + slice * d.cout * d.lout, d.cout, d.lout);
        im2col_1d(xin.data() + slice * d.cin * d.len, d, stride, col);
        dK.noalias() += dY * col.transpose();
        dcol.noalias() = K.transpose() * dY;
        double* dxs = dx + slice * d.cin * d.len;
        for (Index c = 0; c < d.cin; ++c) {
          for (Index tt = 0; tt < d.k; ++tt) {
            const Index row = c * d.k + tt;
            for (Index o = 0; o < d.lout; ++o) {
              const Index src = o * stride + tt - d.pad;
              if (src >= 0 && src < d.len) dxs[c * d.len + src] += dcol(row, o);
            }
          }
        }
      }
    }
  };
  return tape.emplace("conv1d", {x, kernels}, std::move(out), std::move(backward));
}

namespace {

struct Conv2dDims {
  Index batch, flow, cin, h, w, cout, k, pad, hout, wout;
};

Conv2dDims conv2d_dims(const FlowTensor& x, const FlowTensor& kernels, Index stride) {
  if (stride < 1) throw ConfigError("conv2d_forward: stride must be >= 1, got " + std::to_string(stride));
  if (x.rank() != 5) throw DimensionError("conv2d_forward: input must be [B,F,C,H,W], got " + shape_str(x.shape()));
  if (kernels.rank() != 4 || kernels.dim(2) != kernels.dim(3)) {
    throw DimensionError("conv2d_forward: kernels must be [C',C,k,k], got " + shape_str(kernels.shape()));
  }
  Conv2dDims d;
  d.batch = x.dim(0);
  d.flow = x.dim(1);
  d.cin = x.dim(2);
  d.h = x.dim(3);
  d.w = x.dim(4);
  d.cout = kernels.dim(0);
  d.k = kernels.dim(2);
  if (kernels.dim(1) != d.cin) {
    throw DimensionError("conv2d_forward: input " + shape_str(x.shape()) + " incompatible with kernels " +
                         shape_str(kernels.shape()));
  }
  if (d.k % 2 == 0) throw ConfigError("conv2d_forward: kernel size must be odd, got " + std::to_string(d.k));
  if (d.h < d.k || d.w < d.k) {
    throw DimensionError("conv2d_forward: spatial dims " + shape_str(x.shape()) + " smaller than kernel " +
                         std::to_string(d.k));
  }
  d.pad = d.k / 2;
  d.hout = (d.h + 2 * d.pad - d.k) / stride + 1;
  d.wout = (d.w + 2 * d.pad - d.k) / stride + 1;
  return d;
}

void im2col_2d(const double* x, const Conv2dDims& d, Index stride, MatRM& col) {
  col.setZero();
  for (Index c = 0; c < d.cin; ++c) {
    for (Index ki = 0; ki < d.k; ++ki) {
      for (Index kj = 0; kj < d.k; ++kj) {
        const Index row = (c * d.k + ki) * d.k + kj;
        for (Index oi = 0; oi < d.hout; ++oi) {
          const Index si = oi * stride + ki - d.pad;
          if (si < 0 || si >= d.h) continue;
          for (Index oj = 0; oj < d.wout; ++oj) {
            const Index sj = oj * stride + kj - d.pad;
            if (sj >= 0 && sj < d.w) col(row, oi * d.wout + oj) = x[(c * d.h + si) * d.w + sj];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d_forward(Tape& tape, Var x, Var kernels, Index stride) {
  const FlowTensor& xv = tape.value(x);
  const FlowTensor& kv = tape.value(kernels);
  require_finite(xv, "conv2d_forward");
  require_finite(kv, "conv2d_forward");
  const Conv2dDims d = conv2d_dims(xv, kv, stride);

  const Index patch = d.cin * d.k * d.k;
  const Index area_out = d.hout * d.wout;
  FlowTensor out(Shape{d.batch, d.flow, d.cout, d.hout, d.wout});
  auto K = kv.as_matrix(d.cout, patch);
  MatRM col(patch, area_out);
  for (Index b = 0; b < d.batch; ++b) {
    for (Index f = 0; f < d.flow; ++f) {
      const Index slice = b * d.flow + f;
      im2col_2d(xv.data() + slice * d.cin * d.h * d.w, d, stride, col);
      MapMat(out.data() + slice * d.cout * area_out, d.cout, area_out).noalias() = K * col;
    }
  }

  auto backward = [x, kernels, d, stride, patch, area_out](Tape& t, const ArrayXd& grad_out) {
    const FlowTensor& xin = t.value(x);
    const FlowTensor& kin = t.value(kernels);
    auto K = kin.as_matrix(d.cout, patch);
    double* dx = t.grad_buffer(x).data();
    MapMat dK(t.grad_buffer(kernels).data(), d.cout, patch);
    MatRM col(patch, area_out);
    MatRM dcol(patch, area_out);
    for (Index b = 0; b < d.batch; ++b) {
      for (Index f = 0; f < d.flow; ++f) {
        const Index slice = b * d.flow + f;
        ConstMapMat dY(grad_out.data() + slice * d.cout * area_out, d.cout, area_out);
        im2col_2d(xin.data() + slice * d.cin * d.h * d.w, d, stride, col);
        dK.noalias() += dY * col.transpose();
        dcol.noalias() = K.transpose() * dY;
        double* dxs = dx + slice * d.cin * d.h * d.w;
        for (Index c = 0; c < d.cin; ++c) {
          for (Index ki = 0; ki < d.k; ++ki) {
            for (Index kj = 0; kj < d.k; ++kj) {
              const Index row = (c * d.k + ki) * d.k + kj;
              for (Index oi = 0; oi < d.hout; ++oi) {
                const Index si = oi * stride + ki - d.pad;
                if (si < 0 || si >= d.h) continue;
                for (Index oj = 0; oj < d.wout; ++oj) {
                  const Index sj = oj * stride + kj - d.pad;
                  if (sj >= 0 && sj < d.w) dxs[(c * d.h + si) * d.w + sj] += dcol(row, oi * d.wout + oj);
                }
              }
            }
          }
        }
      }
    }
  };
  return tape.emplace("conv2d", {x, kernels}, std::move(out), std::move(backward));
}

Var relu(Tape& tape, Var x) {
  const FlowTensor& xv = tape.value(x);
  require_finite(xv, "relu");
  FlowTensor out(xv.shape(), xv.array().max(0.0));
  auto backward = [x](Tape& t, const ArrayXd& grad_out) {
    const ArrayXd& xin = t.value(x).array();
    t.grad_buffer(x) += grad_out * (xin > 0.0).cast<double>();
  };
  return tape.emplace("relu", {x}, std::move(out), std::move(backward));
}

Var sigmoid(Tape& tape, Var x) {
  const FlowTensor& xv = tape.value(x);
  require_finite(xv, "sigmoid");
  ArrayXd y = 1.0 / (1.0 + (-xv.array()).exp());
  FlowTensor out(xv.shape(), y);
  auto backward = [x, y = std::move(y)](Tape& t, const ArrayXd& grad_out) {
    t.grad_buffer(x) += grad_out * y * (1.0 - y);
  };
  return tape.emplace("sigmoid", {x}, std::move(out), std::move(backward));
}

Var global_avg_pool(Tape& tape, Var x) {
  const FlowTensor& xv = tape.value(x);
  require_finite(xv, "global_avg_pool");
  if (xv.rank() < 4) {
    throw DimensionError("global_avg_pool: input must be [B,F,C,spatial...], got " + shape_str(xv.shape()));
  }
  const Index batch = xv.dim(0), flow = xv.dim(1), channels = xv.dim(2);
  Index area = 1;
  for (Index a = 3; a < xv.rank(); ++a) area *= xv.dim(a);
  FlowTensor out(Shape{batch, flow, channels});
  {
    auto X = xv.as_matrix(batch * flow * channels, area);
    MapMat Y(out.data(), batch * flow * channels, 1);
    Y.col(0) = X.rowwise().mean();
  }
  auto backward = [x, batch, flow, channels, area](Tape& t, const ArrayXd& grad_out) {
    MapMat dX(t.grad_buffer(x).data(), batch * flow * channels, area);
    ConstMapMat dY(grad_out.data(), batch * flow * channels, 1);
    dX.colwise() += dY.col(0) / static_cast<double>(area);
  };
  return tape.emplace("global_avg_pool", {x}, std::move(out), std::move(backward));
}

Var add(Tape& tape, Var a, Var b) {
  const FlowTensor& av = tape.value(a);
  const FlowTensor& bv = tape.value(b);
  if (av.shape() != bv.shape()) {
    throw DimensionError("add: shape mismatch " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  }
  FlowTensor out(av.shape(), av.array() + bv.array());
  auto backward = [a, b](Tape& t, const ArrayXd& grad_out) {
    t.grad_buffer(a) += grad_out;
    t.grad_buffer(b) += grad_out;
  };
  return tape.emplace("add", {a, b}, std::move(out), std::move(backward));
}

Var mul(Tape& tape, Var a, Var b) {
  const FlowTensor& av = tape.value(a);
  const FlowTensor& bv = tape.value(b);
  if (av.shape() != bv.shape()) {
    throw DimensionError("mul: shape mismatch " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  }
  FlowTensor out(av.shape(), av.array() * bv.array());
  auto backward = [a, b](Tape& t, const ArrayXd& grad_out) {
    t.grad_buffer(a) += grad_out * t.value(b).array();
    t.grad_buffer(b) += grad_out * t.value(a).array();
  };
  return tape.emplace("mul", {a, b}, std::move(out), std::move(backward));
}

Var reduce_sum(Tape& tape, Var x) {
  const FlowTensor& xv = tape.value(x);
  FlowTensor out(Shape{1, 1});
  out.array()[0] = xv.array().sum();
  const Index n = xv.numel();
  auto backward = [x, n](Tape& t, const ArrayXd& grad_out) { t.grad_buffer(x) += ArrayXd::Constant(n, grad_out[0]); };
  return tape.emplace("reduce_sum", {x}, std::move(out), std::move(backward));
}

}  // namespace flowmix
