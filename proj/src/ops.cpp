#include "rfr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <utility>
#include <vector>

namespace rfr {
namespace {

thread_local BranchProbe* active_probe = nullptr;

void note_piece(unsigned piece) {
  if (active_probe) active_probe->note(piece);
}

template <typename T>
Tape<T>* tape_of(std::initializer_list<const Var<T>*> vars) {
  for (const Var<T>* v : vars) {
    if (v->defined() && v->tape()) return v->tape();
  }
  return nullptr;
}

template <typename T, typename F>
Var<T> emit(Tape<T>* tape, Tensor<T> value, F&& backward) {
  if (!tape) return Var<T>(std::move(value));
  return tape->record(std::move(value), std::forward<F>(backward));
}

// C[MxN] += A[MxK] * B[KxN], row-major with leading dimensions. Every C element
// accumulates over p in ascending order regardless of tiling.
template <typename T>
void gemm_acc(std::size_t M, std::size_t N, std::size_t K, const T* A, std::size_t lda, const T* B,
              std::size_t ldb, T* C, std::size_t ldc) {
  constexpr std::size_t kTile = 256;
  for (std::size_t j0 = 0; j0 < N; j0 += kTile) {
    const std::size_t nb = std::min(kTile, N - j0);
    std::size_t i = 0;
    for (; i + 4 <= M; i += 4) {
      T* __restrict c0 = C + (i + 0) * ldc + j0;
      T* __restrict c1 = C + (i + 1) * ldc + j0;
      T* __restrict c2 = C + (i + 2) * ldc + j0;
      T* __restrict c3 = C + (i + 3) * ldc + j0;
      for (std::size_t p = 0; p < K; ++p) {
        const T a0 = A[(i + 0) * lda + p];
        const T a1 = A[(i + 1) * lda + p];
        const T a2 = A[(i + 2) * lda + p];
        const T a3 = A[(i + 3) * lda + p];
        const T* __restrict b = B + p * ldb + j0;
        for (std::size_t j = 0; j < nb; ++j) {
          const T bv = b[j];
          c0[j] += a0 * bv;
          c1[j] += a1 * bv;
          c2[j] += a2 * bv;
          c3[j] += a3 * bv;
        }
      }
    }
    for (; i < M; ++i) {
      T* __restrict c0 = C + i * ldc + j0;
      for (std::size_t p = 0; p < K; ++p) {
        const T a0 = A[i * lda + p];
        const T* __restrict b = B + p * ldb + j0;
        for (std::size_t j = 0; j < nb; ++j) c0[j] += a0 * b[j];
      }
    }
  }
}

template <typename T>
std::vector<T> transpose_copy(const T* src, std::size_t rows, std::size_t cols) {
  std::vector<T> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = src[r * cols + c];
  }
  return out;
}

struct ConvGeometry {
  std::size_t channels, height, width;  // the "input" side of a forward convolution
  std::size_t kernel, stride, padding;
  std::size_t out_width;
};

// cols[row * nb + t] for row = (c, ky, kx) and output position j0 + t.
template <typename T>
void im2col_tile(const T* in, const ConvGeometry& g, std::size_t j0, std::size_t nb, T* cols,
                 bool transposed, std::size_t rows) {
  const auto H = static_cast<long>(g.height);
  const auto W = static_cast<long>(g.width);
  const auto s = static_cast<long>(g.stride);
  const auto p = static_cast<long>(g.padding);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    const T* plane = in + c * g.height * g.width;
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx, ++row) {
        std::size_t oy = j0 / g.out_width;
        std::size_t ox = j0 % g.out_width;
        for (std::size_t t = 0; t < nb; ++t) {
          const long iy = static_cast<long>(oy) * s - p + static_cast<long>(ky);
          const long ix = static_cast<long>(ox) * s - p + static_cast<long>(kx);
          const T v = (iy >= 0 && iy < H && ix >= 0 && ix < W) ? plane[iy * W + ix] : T(0);
          if (transposed) {
            cols[t * rows + row] = v;
          } else {
            cols[row * nb + t] = v;
          }
          if (++ox == g.out_width) {
            ox = 0;
            ++oy;
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_tile(const T* cols, const ConvGeometry& g, std::size_t j0, std::size_t nb, T* out) {
  const auto H = static_cast<long>(g.height);
  const auto W = static_cast<long>(g.width);
  const auto s = static_cast<long>(g.stride);
  const auto p = static_cast<long>(g.padding);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    T* plane = out + c * g.height * g.width;
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx, ++row) {
        std::size_t oy = j0 / g.out_width;
        std::size_t ox = j0 % g.out_width;
        const T* src = cols + row * nb;
        for (std::size_t t = 0; t < nb; ++t) {
          const long iy = static_cast<long>(oy) * s - p + static_cast<long>(ky);
          const long ix = static_cast<long>(ox) * s - p + static_cast<long>(kx);
          if (iy >= 0 && iy < H && ix >= 0 && ix < W) plane[iy * W + ix] += src[t];
          if (++ox == g.out_width) {
            ox = 0;
            ++oy;
          }
        }
      }
    }
  }
}

std::size_t tile_width(std::size_t rows, std::size_t positions) {
  const std::size_t budget = (std::size_t{1} << 18) / std::max<std::size_t>(rows, 1);
  return std::max<std::size_t>(std::min(std::clamp<std::size_t>(budget, 16, 1024), positions), 1);
}

template <typename T>
void check_bias(const Var<T>& bias, std::size_t channels, const char* op) {
  if (!bias.defined()) return;
  const Shape& b = bias.shape();
  if (b.n != channels || b.c != 1 || b.h != 1 || b.w != 1) {
    throw DimensionError(std::string(op) + ": bias shape " + b.str() + " does not match " +
                         std::to_string(channels) + " output channels (axis n)");
  }
}

template <typename T>
void add_bias_inplace(Tensor<T>& out, const Tensor<T>& bias) {
  const Shape s = out.shape();
  auto o = out.data();
  auto b = bias.values();
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      T* plane = o.data() + (n * s.c + c) * s.plane();
      for (std::size_t i = 0; i < s.plane(); ++i) plane[i] += b[c];
    }
  }
}

template <typename T>
Tensor<T> bias_grad(const Tensor<T>& g) {
  const Shape s = g.shape();
  Tensor<T> out(Shape{s.c, 1, 1, 1});
  auto o = out.data();
  auto v = g.values();
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* plane = v.data() + (n * s.c + c) * s.plane();
      for (std::size_t i = 0; i < s.plane(); ++i) o[c] += plane[i];
    }
  }
  return out;
}

template <typename T, typename F, typename DF>
Var<T> unary(const Var<T>& x, F&& fn, DF dfn) {
  Tensor<T> out(x.shape());
  auto o = out.data();
  auto v = x.value().values();
  for (std::size_t i = 0; i < v.size(); ++i) o[i] = fn(v[i]);
  Node<T>* px = x.node();
  Tensor<T> xv = x.value();
  return emit(tape_of<T>({&x}), std::move(out), [px, xv, dfn](const Tensor<T>& g) {
    Tensor<T> dx(xv.shape());
    auto d = dx.data();
    auto gv = g.values();
    auto in = xv.values();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = gv[i] * dfn(in[i], gv[i]);
    px->accumulate(dx);
  });
}

}  // namespace

BranchProbe::BranchProbe() : outer_(active_probe) { active_probe = this; }

BranchProbe::~BranchProbe() { active_probe = outer_; }

void BranchProbe::note(unsigned piece) { hash_ = (hash_ ^ piece) * 1099511628211ull; }

std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride,
                             std::size_t padding) {
  if (kernel == 0 || stride == 0) throw DimensionError("conv: kernel and stride must be >= 1");
  if (in + 2 * padding < kernel) {
    throw DimensionError("conv: input extent " + std::to_string(in) + " with padding " +
                         std::to_string(padding) + " is smaller than kernel " +
                         std::to_string(kernel));
  }
  return (in + 2 * padding - kernel) / stride + 1;
}

std::size_t conv_transpose_output_size(std::size_t in, std::size_t kernel, std::size_t stride,
                                       std::size_t padding) {
  if (kernel == 0 || stride == 0 || in == 0) {
    throw DimensionError("conv_transpose: kernel, stride and input extent must be >= 1");
  }
  const long size = static_cast<long>((in - 1) * stride + kernel) - 2 * static_cast<long>(padding);
  if (size <= 0) {
    throw DimensionError("conv_transpose: computed output size " + std::to_string(size) +
                         " is not positive");
  }
  return static_cast<std::size_t>(size);
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, std::size_t stride,
              std::size_t padding) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  if (ws.h != ws.w) throw DimensionError("conv2d: kernel must be square, got " + ws.str());
  if (xs.c != ws.c) {
    throw DimensionError("conv2d: input channels (axis c) = " + std::to_string(xs.c) +
                         " but weight expects " + std::to_string(ws.c) + " (weight axis c)");
  }
  check_bias(bias, ws.n, "conv2d");
  const std::size_t k = ws.h;
  const std::size_t ho = conv_output_size(xs.h, k, stride, padding);
  const std::size_t wo = conv_output_size(xs.w, k, stride, padding);
  const ConvGeometry geo{xs.c, xs.h, xs.w, k, stride, padding, wo};
  const std::size_t rows = xs.c * k * k;
  const std::size_t positions = ho * wo;
  const std::size_t tile = tile_width(rows, positions);

  Tensor<T> out(Shape{xs.n, ws.n, ho, wo});
  {
    auto o = out.data();
    const T* in = x.value().raw();
    const T* w = weight.value().raw();
    std::vector<T> cols(rows * tile);
    for (std::size_t n = 0; n < xs.n; ++n) {
      for (std::size_t j0 = 0; j0 < positions; j0 += tile) {
        const std::size_t nb = std::min(tile, positions - j0);
        im2col_tile(in + n * xs.c * xs.plane(), geo, j0, nb, cols.data(), false, rows);
        gemm_acc(ws.n, nb, rows, w, rows, cols.data(), nb, o.data() + n * ws.n * positions + j0,
                 positions);
      }
    }
  }
  if (bias.defined()) add_bias_inplace(out, bias.value());

  Node<T>* px = x.node();
  Node<T>* pw = weight.node();
  Node<T>* pb = bias.defined() ? bias.node() : nullptr;
  Tensor<T> xv = x.value();
  Tensor<T> wv = weight.value();
  return emit(tape_of<T>({&x, &weight, &bias}), std::move(out),
              [=](const Tensor<T>& g) {
                const T* gv = g.raw();
                if (px) {
                  Tensor<T> dx(xs);
                  auto d = dx.data();
                  std::vector<T> wt = transpose_copy(wv.raw(), ws.n, rows);
                  std::vector<T> dcols(rows * tile);
                  for (std::size_t n = 0; n < xs.n; ++n) {
                    for (std::size_t j0 = 0; j0 < positions; j0 += tile) {
                      const std::size_t nb = std::min(tile, positions - j0);
                      std::fill(dcols.begin(), dcols.end(), T(0));
                      gemm_acc(rows, nb, ws.n, wt.data(), ws.n, gv + n * ws.n * positions + j0,
                               positions, dcols.data(), nb);
                      col2im_tile(dcols.data(), geo, j0, nb, d.data() + n * xs.c * xs.plane());
                    }
                  }
                  px->accumulate(dx);
                }
                if (pw) {
                  Tensor<T> dw(ws);
                  auto d = dw.data();
                  std::vector<T> cols_t(tile * rows);
                  for (std::size_t n = 0; n < xs.n; ++n) {
                    for (std::size_t j0 = 0; j0 < positions; j0 += tile) {
                      const std::size_t nb = std::min(tile, positions - j0);
                      im2col_tile(xv.raw() + n * xs.c * xs.plane(), geo, j0, nb, cols_t.data(),
                                  true, rows);
                      gemm_acc(ws.n, rows, nb, gv + n * ws.n * positions + j0, positions,
                               cols_t.data(), rows, d.data(), rows);
                    }
                  }
                  pw->accumulate(dw);
                }
                if (pb) pb->accumulate(bias_grad(g));
              });
}

template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias,
                        std::size_t stride, std::size_t padding) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  if (ws.h != ws.w) throw DimensionError("conv_transpose2d: kernel must be square, got " + ws.str());
  if (xs.c != ws.n) {
    throw DimensionError("conv_transpose2d: input channels (axis c) = " + std::to_string(xs.c) +
                         " but weight expects " + std::to_string(ws.n) + " (weight axis n)");
  }
  check_bias(bias, ws.c, "conv_transpose2d");
  const std::size_t k = ws.h;
  const std::size_t ho = conv_transpose_output_size(xs.h, k, stride, padding);
  const std::size_t wo = conv_transpose_output_size(xs.w, k, stride, padding);
  // The output plays the role of a forward convolution's input.
  const ConvGeometry geo{ws.c, ho, wo, k, stride, padding, xs.w};
  const std::size_t rows = ws.c * k * k;
  const std::size_t positions = xs.plane();
  const std::size_t out_plane = ho * wo;
  const std::size_t tile = tile_width(rows, positions);

  Tensor<T> out(Shape{xs.n, ws.c, ho, wo});
  {
    auto o = out.data();
    std::vector<T> wt = transpose_copy(weight.value().raw(), ws.n, rows);
    std::vector<T> dcols(rows * tile);
    const T* in = x.value().raw();
    for (std::size_t n = 0; n < xs.n; ++n) {
      for (std::size_t j0 = 0; j0 < positions; j0 += tile) {
        const std::size_t nb = std::min(tile, positions - j0);
        std::fill(dcols.begin(), dcols.end(), T(0));
        gemm_acc(rows, nb, ws.n, wt.data(), ws.n, in + n * xs.c * positions + j0, positions,
                 dcols.data(), nb);
        col2im_tile(dcols.data(), geo, j0, nb, o.data() + n * ws.c * out_plane);
      }
    }
  }
  if (bias.defined()) add_bias_inplace(out, bias.value());

  Node<T>* px = x.node();
  Node<T>* pw = weight.node();
  Node<T>* pb = bias.defined() ? bias.node() : nullptr;
  Tensor<T> xv = x.value();
  Tensor<T> wv = weight.value();
  return emit(tape_of<T>({&x, &weight, &bias}), std::move(out),
              [=](const Tensor<T>& g) {
                const T* gv = g.raw();
                if (px) {
                  Tensor<T> dx(xs);
                  auto d = dx.data();
                  std::vector<T> cols(rows * tile);
                  for (std::size_t n = 0; n < xs.n; ++n) {
                    for (std::size_t j0 = 0; j0 < positions; j0 += tile) {
                      const std::size_t nb = std::min(tile, positions - j0);
                      im2col_tile(gv + n * ws.c * out_plane, geo, j0, nb, cols.data(), false, rows);
                      gemm_acc(ws.n, nb, rows, wv.raw(), rows, cols.data(), nb,
                               d.data() + n * xs.c * positions + j0, positions);
                    }
                  }
                  px->accumulate(dx);
                }
                if (pw) {
                  Tensor<T> dw(ws);
                  auto d = dw.data();
                  std::vector<T> cols_t(tile * rows);
                  for (std::size_t n = 0; n < xs.n; ++n) {
                    for (std::size_t j0 = 0; j0 < positions; j0 += tile) {
                      const std::size_t nb = std::min(tile, positions - j0);
                      im2col_tile(gv + n * ws.c * out_plane, geo, j0, nb, cols_t.data(), true,
                                  rows);
                      gemm_acc(ws.n, rows, nb, xv.raw() + n * xs.c * positions + j0, positions,
                               cols_t.data(), rows, d.data(), rows);
                    }
                  }
                  pw->accumulate(dw);
                }
                if (pb) pb->accumulate(bias_grad(g));
              });
}

template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, Tensor<T>& running_mean,
                  Tensor<T>& running_var, BnMode mode) {
  const Shape s = x.shape();
  const std::size_t C = s.c;
  const std::size_t count = s.n * s.plane();
  if (count == 0) throw DimensionError("batch_norm: channel has zero elements " + s.str());
  for (const Tensor<T>* t : std::initializer_list<const Tensor<T>*>{&gamma.value(), &beta.value(), &running_mean, &running_var}) {
    if (t->numel() != C) {
      throw DimensionError("batch_norm: parameter length " + std::to_string(t->numel()) +
                           " does not match channel count (axis c) " + std::to_string(C));
    }
  }
  const T eps = T(kBatchNormEps);
  std::vector<T> mu(C), inv_std(C);
  const T* xv = x.value().raw();
  if (mode == BnMode::kTrain) {
    auto rm = running_mean.data();
    auto rv = running_var.data();
    const T momentum = T(kBatchNormMomentum);
    for (std::size_t c = 0; c < C; ++c) {
      T acc = 0;
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* plane = xv + (n * C + c) * s.plane();
        for (std::size_t i = 0; i < s.plane(); ++i) acc += plane[i];
      }
      const T m = acc / T(count);
      T sq = 0;
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* plane = xv + (n * C + c) * s.plane();
        for (std::size_t i = 0; i < s.plane(); ++i) sq += (plane[i] - m) * (plane[i] - m);
      }
      const T var = sq / T(count);
      mu[c] = m;
      inv_std[c] = T(1) / std::sqrt(var + eps);
      const T unbiased = count > 1 ? sq / T(count - 1) : var;
      rm[c] = (T(1) - momentum) * rm[c] + momentum * m;
      rv[c] = (T(1) - momentum) * rv[c] + momentum * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mu[c] = running_mean[c];
      inv_std[c] = T(1) / std::sqrt(running_var[c] + eps);
    }
  }

  Tensor<T> xhat(s);
  Tensor<T> out(s);
  {
    auto xh = xhat.data();
    auto o = out.data();
    const auto gm = gamma.value().values();
    const auto bt = beta.value().values();
    for (std::size_t n = 0; n < s.n; ++n) {
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t base = (n * C + c) * s.plane();
        for (std::size_t i = 0; i < s.plane(); ++i) {
          const T h = (xv[base + i] - mu[c]) * inv_std[c];
          xh[base + i] = h;
          o[base + i] = gm[c] * h + bt[c];
        }
      }
    }
  }

  Node<T>* px = x.node();
  Node<T>* pg = mode == BnMode::kFrozen ? nullptr : gamma.node();
  Node<T>* pb = mode == BnMode::kFrozen ? nullptr : beta.node();
  Tensor<T> gv = gamma.value();
  Tape<T>* tape = mode == BnMode::kFrozen ? tape_of<T>({&x}) : tape_of<T>({&x, &gamma, &beta});
  return emit(tape, std::move(out), [=](const Tensor<T>& g) {
    const T* gr = g.raw();
    const T* xh = xhat.raw();
    std::vector<T> dgamma(C, T(0)), dbeta(C, T(0));
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t n = 0; n < s.n; ++n) {
        const std::size_t base = (n * C + c) * s.plane();
        for (std::size_t i = 0; i < s.plane(); ++i) {
          dbeta[c] += gr[base + i];
          dgamma[c] += gr[base + i] * xh[base + i];
        }
      }
    }
    if (px) {
      Tensor<T> dx(s);
      auto d = dx.data();
      for (std::size_t c = 0; c < C; ++c) {
        const T scale_c = gv[c] * inv_std[c];
        const T mean_dy = dbeta[c] / T(count);
        const T mean_dy_xh = dgamma[c] / T(count);
        for (std::size_t n = 0; n < s.n; ++n) {
          const std::size_t base = (n * C + c) * s.plane();
          for (std::size_t i = 0; i < s.plane(); ++i) {
            d[base + i] = mode == BnMode::kTrain
                              ? scale_c * (gr[base + i] - mean_dy - xh[base + i] * mean_dy_xh)
                              : scale_c * gr[base + i];
          }
        }
      }
      px->accumulate(dx);
    }
    if (pg) pg->accumulate(Tensor<T>(Shape{C, 1, 1, 1}, std::span<const T>(dgamma)));
    if (pb) pb->accumulate(Tensor<T>(Shape{C, 1, 1, 1}, std::span<const T>(dbeta)));
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  return unary(
      x,
      [](T v) {
        note_piece(v > T(0));
        return v > T(0) ? v : T(0);
      },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  return unary(
      x,
      [slope](T v) {
        note_piece(v > T(0));
        return v > T(0) ? v : slope * v;
      },
      [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <typename T>
Var<T> abs(const Var<T>& x) {
  return unary(
      x,
      [](T v) {
        note_piece(v > T(0) ? 2u : (v < T(0) ? 0u : 1u));
        return std::abs(v);
      },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Var<T> square(const Var<T>& x) {
  return unary(
      x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto av = a.value().values();
  auto bv = b.value().values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] + bv[i];
  Node<T>* pa = a.node();
  Node<T>* pb = b.node();
  return emit(tape_of<T>({&a, &b}), std::move(out), [pa, pb](const Tensor<T>& g) {
    if (pa) pa->accumulate(g);
    if (pb) pb->accumulate(g);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto av = a.value().values();
  auto bv = b.value().values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] - bv[i];
  Node<T>* pa = a.node();
  Node<T>* pb = b.node();
  return emit(tape_of<T>({&a, &b}), std::move(out), [pa, pb](const Tensor<T>& g) {
    if (pa) pa->accumulate(g);
    if (pb) {
      Tensor<T> neg(g.shape());
      auto d = neg.data();
      auto gv = g.values();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = -gv[i];
      pb->accumulate(neg);
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  const Shape as = a.shape();
  const Shape bs = b.shape();
  const bool broadcast = bs.c == 1 && as.c != 1;
  if (broadcast) {
    require_same_shape(Shape{as.n, 1, as.h, as.w}, bs, "mul (channel broadcast)");
  } else {
    require_same_shape(as, bs, "mul");
  }
  const std::size_t plane = as.plane();
  auto b_index = [=](std::size_t i) {
    if (!broadcast) return i;
    const std::size_t n = i / (as.c * plane);
    return n * plane + i % plane;
  };
  Tensor<T> out(as);
  auto o = out.data();
  auto av = a.value().values();
  auto bv = b.value().values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] * bv[b_index(i)];
  Node<T>* pa = a.node();
  Node<T>* pb = b.node();
  Tensor<T> at = a.value();
  Tensor<T> bt = b.value();
  return emit(tape_of<T>({&a, &b}), std::move(out), [=](const Tensor<T>& g) {
    auto gv = g.values();
    if (pa) {
      Tensor<T> da(as);
      auto d = da.data();
      auto bvv = bt.values();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = gv[i] * bvv[b_index(i)];
      pa->accumulate(da);
    }
    if (pb) {
      Tensor<T> db(bs);
      auto d = db.data();
      auto avv = at.values();
      for (std::size_t i = 0; i < gv.size(); ++i) d[b_index(i)] += gv[i] * avv[i];
      pb->accumulate(db);
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
  return unary(
      x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Var<T> add_channel_bias(const Var<T>& x, const Var<T>& bias) {
  check_bias(bias, x.shape().c, "add_channel_bias");
  Tensor<T> out = x.value();
  add_bias_inplace(out, bias.value());
  Node<T>* px = x.node();
  Node<T>* pb = bias.node();
  return emit(tape_of<T>({&x, &bias}), std::move(out), [px, pb](const Tensor<T>& g) {
    if (px) px->accumulate(g);
    if (pb) pb->accumulate(bias_grad(g));
  });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  const Shape as = a.shape();
  const Shape bs = b.shape();
  if (as.n != bs.n || as.h != bs.h || as.w != bs.w) {
    std::string axes;
    if (as.n != bs.n) axes += " n";
    if (as.h != bs.h) axes += " h";
    if (as.w != bs.w) axes += " w";
    throw DimensionError("concat_channels: " + as.str() + " vs " + bs.str() +
                         " differ on axes" + axes);
  }
  const Shape os{as.n, as.c + bs.c, as.h, as.w};
  const std::size_t pa_len = as.c * as.plane();
  const std::size_t pb_len = bs.c * bs.plane();
  Tensor<T> out(os);
  {
    auto o = out.data();
    const T* av = a.value().raw();
    const T* bv = b.value().raw();
    for (std::size_t n = 0; n < as.n; ++n) {
      std::copy_n(av + n * pa_len, pa_len, o.data() + n * (pa_len + pb_len));
      std::copy_n(bv + n * pb_len, pb_len, o.data() + n * (pa_len + pb_len) + pa_len);
    }
  }
  Node<T>* na = a.node();
  Node<T>* nb = b.node();
  return emit(tape_of<T>({&a, &b}), std::move(out), [=](const Tensor<T>& g) {
    const T* gv = g.raw();
    if (na) {
      Tensor<T> da(as);
      auto d = da.data();
      for (std::size_t n = 0; n < as.n; ++n) {
        std::copy_n(gv + n * (pa_len + pb_len), pa_len, d.data() + n * pa_len);
      }
      na->accumulate(da);
    }
    if (nb) {
      Tensor<T> db(bs);
      auto d = db.data();
      for (std::size_t n = 0; n < as.n; ++n) {
        std::copy_n(gv + n * (pa_len + pb_len) + pa_len, pb_len, d.data() + n * pb_len);
      }
      nb->accumulate(db);
    }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> out = x.value().reshaped(shape);
  Node<T>* px = x.node();
  const Shape xs = x.shape();
  return emit(tape_of<T>({&x}), std::move(out), [px, xs](const Tensor<T>& g) {
    px->accumulate(g.reshaped(xs));
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T acc = 0;
  for (T v : x.value().values()) acc += v;
  Node<T>* px = x.node();
  const Shape xs = x.shape();
  return emit(tape_of<T>({&x}), Tensor<T>(Shape{1, 1, 1, 1}, acc), [px, xs](const Tensor<T>& g) {
    px->accumulate(Tensor<T>(xs, g[0]));
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  const std::size_t count = x.value().numel();
  if (count == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(x), T(1) / T(count));
}

template <typename T>
Var<T> softmax_channels(const Var<T>& x) {
  const Shape s = x.shape();
  const std::size_t plane = s.plane();
  Tensor<T> out(s);
  {
    auto o = out.data();
    const T* v = x.value().raw();
    std::vector<T> e(s.c);
    for (std::size_t n = 0; n < s.n; ++n) {
      const std::size_t base = n * s.c * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        T mx = v[base + p];
        for (std::size_t c = 1; c < s.c; ++c) mx = std::max(mx, v[base + c * plane + p]);
        T total = 0;
        for (std::size_t c = 0; c < s.c; ++c) {
          e[c] = std::exp(v[base + c * plane + p] - mx);
          total += e[c];
        }
        for (std::size_t c = 0; c < s.c; ++c) o[base + c * plane + p] = e[c] / total;
      }
    }
  }
  Node<T>* px = x.node();
  Tensor<T> y = out;
  return emit(tape_of<T>({&x}), std::move(out), [px, y, s, plane](const Tensor<T>& g) {
    Tensor<T> dx(s);
    auto d = dx.data();
    const T* gv = g.raw();
    const T* yv = y.raw();
    for (std::size_t n = 0; n < s.n; ++n) {
      const std::size_t base = n * s.c * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        T dot = 0;
        for (std::size_t c = 0; c < s.c; ++c) dot += gv[base + c * plane + p] * yv[base + c * plane + p];
        for (std::size_t c = 0; c < s.c; ++c) {
          const std::size_t i = base + c * plane + p;
          d[i] = yv[i] * (gv[i] - dot);
        }
      }
    }
    px->accumulate(dx);
  });
}

template <typename T>
Var<T> l2_normalize_channels(const Var<T>& x, T floor) {
  const Shape s = x.shape();
  const std::size_t plane = s.plane();
  std::vector<T> norms(s.n * plane);
  Tensor<T> out(s);
  {
    auto o = out.data();
    const T* v = x.value().raw();
    for (std::size_t n = 0; n < s.n; ++n) {
      const std::size_t base = n * s.c * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        T sq = 0;
        for (std::size_t c = 0; c < s.c; ++c) sq += v[base + c * plane + p] * v[base + c * plane + p];
        const T norm = std::sqrt(sq);
        norms[n * plane + p] = norm;
        const T denom = std::max(norm, floor);
        for (std::size_t c = 0; c < s.c; ++c) o[base + c * plane + p] = v[base + c * plane + p] / denom;
      }
    }
  }
  Node<T>* px = x.node();
  Tensor<T> y = out;
  return emit(tape_of<T>({&x}), std::move(out), [=](const Tensor<T>& g) {
    Tensor<T> dx(s);
    auto d = dx.data();
    const T* gv = g.raw();
    const T* yv = y.raw();
    for (std::size_t n = 0; n < s.n; ++n) {
      const std::size_t base = n * s.c * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        const T norm = norms[n * plane + p];
        if (norm > floor) {
          T dot = 0;
          for (std::size_t c = 0; c < s.c; ++c) dot += yv[base + c * plane + p] * gv[base + c * plane + p];
          for (std::size_t c = 0; c < s.c; ++c) {
            const std::size_t i = base + c * plane + p;
            d[i] = (gv[i] - yv[i] * dot) / norm;
          }
        } else {
          for (std::size_t c = 0; c < s.c; ++c) {
            const std::size_t i = base + c * plane + p;
            d[i] = gv[i] / floor;
          }
        }
      }
    }
    px->accumulate(dx);
  });
}

template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b, bool transpose_a, bool transpose_b) {
  const Shape as = a.shape();
  const Shape bs = b.shape();
  if (as.n != bs.n) {
    throw DimensionError("bmm: batch (axis n) " + std::to_string(as.n) + " vs " +
                         std::to_string(bs.n));
  }
  const std::size_t a_rows = as.c, a_cols = as.plane();
  const std::size_t b_rows = bs.c, b_cols = bs.plane();
  const std::size_t M = transpose_a ? a_cols : a_rows;
  const std::size_t K = transpose_a ? a_rows : a_cols;
  const std::size_t K2 = transpose_b ? b_cols : b_rows;
  const std::size_t N = transpose_b ? b_rows : b_cols;
  if (K != K2) {
    throw DimensionError("bmm: inner extents differ (" + std::to_string(K) + " vs " +
                         std::to_string(K2) + ") for " + as.str() + " x " + bs.str());
  }
  const std::size_t batch = as.n;
  // op(A) and op(B) materialized per batch as row-major matrices.
  auto op_a = [=](const T* src) {
    return transpose_a ? transpose_copy(src, a_rows, a_cols) : std::vector<T>(src, src + M * K);
  };
  auto op_b = [=](const T* src) {
    return transpose_b ? transpose_copy(src, b_rows, b_cols) : std::vector<T>(src, src + K * N);
  };
  Tensor<T> out(Shape{batch, M, N, 1});
  {
    auto o = out.data();
    for (std::size_t n = 0; n < batch; ++n) {
      auto A = op_a(a.value().raw() + n * a_rows * a_cols);
      auto B = op_b(b.value().raw() + n * b_rows * b_cols);
      gemm_acc(M, N, K, A.data(), K, B.data(), N, o.data() + n * M * N, N);
    }
  }
  Node<T>* pa = a.node();
  Node<T>* pb = b.node();
  Tensor<T> av = a.value();
  Tensor<T> bv = b.value();
  return emit(tape_of<T>({&a, &b}), std::move(out), [=](const Tensor<T>& g) {
    Tensor<T> da(as), db(bs);
    auto dav = pa ? da.data() : std::span<T>{};
    auto dbv = pb ? db.data() : std::span<T>{};
    for (std::size_t n = 0; n < batch; ++n) {
      const T* gn = g.raw() + n * M * N;
      if (pa) {
        // d op(A) = G * op(B)^T  (M x K)
        auto B = op_b(bv.raw() + n * b_rows * b_cols);
        auto Bt = transpose_copy(B.data(), K, N);
        std::vector<T> dop(M * K, T(0));
        gemm_acc(M, K, N, gn, N, Bt.data(), K, dop.data(), K);
        T* dst = dav.data() + n * a_rows * a_cols;
        if (transpose_a) {
          auto back = transpose_copy(dop.data(), M, K);
          std::copy(back.begin(), back.end(), dst);
        } else {
          std::copy(dop.begin(), dop.end(), dst);
        }
      }
      if (pb) {
        // d op(B) = op(A)^T * G  (K x N)
        auto A = op_a(av.raw() + n * a_rows * a_cols);
        auto At = transpose_copy(A.data(), M, K);
        std::vector<T> dop(K * N, T(0));
        gemm_acc(K, N, M, At.data(), M, gn, N, dop.data(), N);
        T* dst = dbv.data() + n * b_rows * b_cols;
        if (transpose_b) {
          auto back = transpose_copy(dop.data(), K, N);
          std::copy(back.begin(), back.end(), dst);
        } else {
          std::copy(dop.begin(), dop.end(), dst);
        }
      }
    }
    if (pa) pa->accumulate(da);
    if (pb) pb->accumulate(db);
  });
}

template <typename T>
Var<T> box_mean(const Var<T>& x, std::size_t side) {
  if (side % 2 == 0) throw ContractError("box_mean: window side must be odd");
  const Shape s = x.shape();
  const long r = static_cast<long>(side / 2);
  const long H = static_cast<long>(s.h);
  const long W = static_cast<long>(s.w);
  auto count_at = [=](long y, long xx) {
    const long y0 = std::max(0L, y - r), y1 = std::min(H - 1, y + r);
    const long x0 = std::max(0L, xx - r), x1 = std::min(W - 1, xx + r);
    return T((y1 - y0 + 1) * (x1 - x0 + 1));
  };
  Tensor<T> out(s);
  {
    auto o = out.data();
    const T* v = x.value().raw();
    for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
      const T* plane = v + nc * s.plane();
      T* dst = o.data() + nc * s.plane();
      for (long y = 0; y < H; ++y) {
        for (long xx = 0; xx < W; ++xx) {
          T acc = 0;
          for (long yy = std::max(0L, y - r); yy <= std::min(H - 1, y + r); ++yy) {
            for (long x2 = std::max(0L, xx - r); x2 <= std::min(W - 1, xx + r); ++x2) {
              acc += plane[yy * W + x2];
            }
          }
          dst[y * W + xx] = acc / count_at(y, xx);
        }
      }
    }
  }
  Node<T>* px = x.node();
  return emit(tape_of<T>({&x}), std::move(out), [=](const Tensor<T>& g) {
    Tensor<T> dx(s);
    auto d = dx.data();
    const T* gv = g.raw();
    for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
      const T* gp = gv + nc * s.plane();
      T* dp = d.data() + nc * s.plane();
      for (long y = 0; y < H; ++y) {
        for (long xx = 0; xx < W; ++xx) {
          const T share = gp[y * W + xx] / count_at(y, xx);
          for (long yy = std::max(0L, y - r); yy <= std::min(H - 1, y + r); ++yy) {
            for (long x2 = std::max(0L, xx - r); x2 <= std::min(W - 1, xx + r); ++x2) {
              dp[yy * W + x2] += share;
            }
          }
        }
      }
    }
    px->accumulate(dx);
  });
}

template <typename T>
Var<T> gated_blend(const Var<T>& current, const Var<T>& previous, const Var<T>& gate_raw,
                   const Tensor<T>& valid) {
  const Shape s = current.shape();
  require_same_shape(s, previous.shape(), "gated_blend (previous scores)");
  require_same_shape(Shape{s.n, 1, s.h, s.w}, valid.shape(), "gated_blend (validity mask)");
  if (gate_raw.value().numel() != 1) throw DimensionError("gated_blend: gate must be a scalar");
  const T raw = gate_raw.value()[0];
  const T gate = T(1) / (T(1) + std::exp(-raw));
  const std::size_t plane = s.plane();
  auto valid_at = [=](std::size_t i) {
    const std::size_t n = i / (s.c * plane);
    return valid[n * plane + i % plane] != T(0);
  };
  Tensor<T> out(s);
  {
    auto o = out.data();
    auto cv = current.value().values();
    auto pv = previous.value().values();
    for (std::size_t i = 0; i < o.size(); ++i) {
      o[i] = valid_at(i) ? gate * cv[i] + (T(1) - gate) * pv[i] : cv[i];
    }
  }
  Node<T>* pc = current.node();
  Node<T>* pp = previous.node();
  Node<T>* pg = gate_raw.node();
  Tensor<T> cur = current.value();
  Tensor<T> prev = previous.value();
  return emit(tape_of<T>({&current, &previous, &gate_raw}), std::move(out),
              [=](const Tensor<T>& g) {
                auto gv = g.values();
                if (pc) {
                  Tensor<T> d(s);
                  auto dv = d.data();
                  for (std::size_t i = 0; i < dv.size(); ++i) dv[i] = valid_at(i) ? gate * gv[i] : gv[i];
                  pc->accumulate(d);
                }
                if (pp) {
                  Tensor<T> d(s);
                  auto dv = d.data();
                  for (std::size_t i = 0; i < dv.size(); ++i) {
                    dv[i] = valid_at(i) ? (T(1) - gate) * gv[i] : T(0);
                  }
                  pp->accumulate(d);
                }
                if (pg) {
                  T acc = 0;
                  auto cv = cur.values();
                  auto pv = prev.values();
                  for (std::size_t i = 0; i < gv.size(); ++i) {
                    if (valid_at(i)) acc += gv[i] * (cv[i] - pv[i]);
                  }
                  pg->accumulate(Tensor<T>(gate_raw.shape(), acc * gate * (T(1) - gate)));
                }
              });
}

template <typename T>
Var<T> divide_masked(const Var<T>& x, const Tensor<T>& denom) {
  const Shape s = x.shape();
  require_same_shape(Shape{s.n, 1, s.h, s.w}, denom.shape(), "divide_masked (denominator)");
  const std::size_t plane = s.plane();
  auto d_at = [=](std::size_t i) { return denom[(i / (s.c * plane)) * plane + i % plane]; };
  Tensor<T> out(s);
  {
    auto o = out.data();
    auto v = x.value().values();
    for (std::size_t i = 0; i < o.size(); ++i) {
      const T d = d_at(i);
      o[i] = d == T(0) ? T(0) : v[i] / d;
    }
  }
  Node<T>* px = x.node();
  return emit(tape_of<T>({&x}), std::move(out), [=](const Tensor<T>& g) {
    Tensor<T> dx(s);
    auto dv = dx.data();
    auto gv = g.values();
    for (std::size_t i = 0; i < dv.size(); ++i) {
      const T d = d_at(i);
      dv[i] = d == T(0) ? T(0) : gv[i] / d;
    }
    px->accumulate(dx);
  });
}

template <typename T>
Var<T> avg_pool2(const Var<T>& x) {
  const Shape s = x.shape();
  if (s.h < 2 || s.w < 2) throw DimensionError("avg_pool2: spatial extent below 2 in " + s.str());
  const Shape os{s.n, s.c, s.h / 2, s.w / 2};
  Tensor<T> out(os);
  {
    auto o = out.data();
    const T* v = x.value().raw();
    for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
      for (std::size_t y = 0; y < os.h; ++y) {
        for (std::size_t xx = 0; xx < os.w; ++xx) {
          const T* p = v + nc * s.plane() + 2 * y * s.w + 2 * xx;
          o[nc * os.plane() + y * os.w + xx] = (p[0] + p[1] + p[s.w] + p[s.w + 1]) * T(0.25);
        }
      }
    }
  }
  Node<T>* px = x.node();
  return emit(tape_of<T>({&x}), std::move(out), [=](const Tensor<T>& g) {
    Tensor<T> dx(s);
    auto d = dx.data();
    const T* gv = g.raw();
    for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
      for (std::size_t y = 0; y < os.h; ++y) {
        for (std::size_t xx = 0; xx < os.w; ++xx) {
          const T share = gv[nc * os.plane() + y * os.w + xx] * T(0.25);
          T* p = d.data() + nc * s.plane() + 2 * y * s.w + 2 * xx;
          p[0] += share;
          p[1] += share;
          p[s.w] += share;
          p[s.w + 1] += share;
        }
      }
    }
    px->accumulate(dx);
  });
}

template <typename T>
Tensor<T> nearest_downsample(const Tensor<T>& x, std::size_t factor) {
  const Shape s = x.shape();
  if (factor == 0 || s.h % factor != 0 || s.w % factor != 0) {
    throw DimensionError("nearest_downsample: " + s.str() + " not divisible by factor " +
                         std::to_string(factor));
  }
  if (factor == 1) return x;
  const Shape os{s.n, s.c, s.h / factor, s.w / factor};
  Tensor<T> out(os);
  auto o = out.data();
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
    for (std::size_t y = 0; y < os.h; ++y) {
      for (std::size_t xx = 0; xx < os.w; ++xx) {
        o[nc * os.plane() + y * os.w + xx] = x[nc * s.plane() + y * factor * s.w + xx * factor];
      }
    }
  }
  return out;
}

#define RFR_INSTANTIATE_OPS(T)                                                                   \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, std::size_t, std::size_t); \
  template Var<T> conv_transpose2d(const Var<T>&, const Var<T>&, const Var<T>&, std::size_t,     \
                                   std::size_t);                                                 \
  template Var<T> batch_norm(const Var<T>&, const Var<T>&, const Var<T>&, Tensor<T>&, Tensor<T>&, \
                             BnMode);                                                            \
  template Var<T> relu(const Var<T>&);                                                           \
  template Var<T> leaky_relu(const Var<T>&, T);                                                  \
  template Var<T> abs(const Var<T>&);                                                            \
  template Var<T> square(const Var<T>&);                                                         \
  template Var<T> add(const Var<T>&, const Var<T>&);                                             \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                             \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                             \
  template Var<T> scale(const Var<T>&, T);                                                       \
  template Var<T> add_channel_bias(const Var<T>&, const Var<T>&);                                \
  template Var<T> concat_channels(const Var<T>&, const Var<T>&);                                 \
  template Var<T> reshape(const Var<T>&, Shape);                                                 \
  template Var<T> sum(const Var<T>&);                                                            \
  template Var<T> mean(const Var<T>&);                                                           \
  template Var<T> softmax_channels(const Var<T>&);                                               \
  template Var<T> l2_normalize_channels(const Var<T>&, T);                                       \
  template Var<T> bmm(const Var<T>&, const Var<T>&, bool, bool);                                 \
  template Var<T> box_mean(const Var<T>&, std::size_t);                                          \
  template Var<T> gated_blend(const Var<T>&, const Var<T>&, const Var<T>&, const Tensor<T>&);    \
  template Var<T> divide_masked(const Var<T>&, const Tensor<T>&);                                \
  template Var<T> avg_pool2(const Var<T>&);                                                      \
  template Tensor<T> nearest_downsample(const Tensor<T>&, std::size_t);

RFR_INSTANTIATE_OPS(float)
RFR_INSTANTIATE_OPS(double)

}  // namespace rfr
