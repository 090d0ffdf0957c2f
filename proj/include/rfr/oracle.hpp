#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "rfr/tensor.hpp"

// Brute-force reference implementations. Everything here is written as literal
// loops over Tensor<double> and shares no code with the production operators.
namespace rfr::oracle {

using Map = Tensor<double>;

struct OracleReport {
  std::string case_name;
  double max_abs = 0;
  double max_rel = 0;
  double tolerance = 0;
  bool pass = false;

  /// "PASS|FAIL <case> max_abs=... max_rel=... tol=..."
  std::string line() const;
};

/// Compares `actual` against `reference`. Relative error is
/// max|a - r| / max(max|r|, tiny), so pass <=> max_rel <= tolerance.
OracleReport compare(const std::string& case_name, const Map& actual, const Map& reference,
                     double tolerance);

/// Weight (out,in,k,k), bias (out) or empty.
Map naive_conv2d(const Map& x, const Map& weight, const Map& bias, std::size_t stride,
                 std::size_t padding);
/// Scatter-add form. Weight (in,out,k,k).
Map naive_conv_transpose2d(const Map& x, const Map& weight, const Map& bias, std::size_t stride,
                           std::size_t padding);

struct PartialResult {
  Map features;
  Map mask;  // (n,1,h',w')
};
/// Literal per-window masked convolution with sum(1)/sum(M) rescaling.
/// `mask` has one channel (shared by all inputs) or one per input channel.
PartialResult naive_partial_conv(const Map& x, const Map& mask, const Map& weight, const Map& bias,
                                 std::size_t stride, std::size_t padding);

/// Binary dilation of the valid (1) set by a centred k x k square, `times` times.
Map mask_dilation(const Map& mask, std::size_t k, std::size_t times);

/// Per-pixel sum_i F_i M_i / sum_i M_i, 0 where no M_i is set.
Map naive_merge(const std::vector<Map>& features, const std::vector<Map>& masks);

struct AttentionInput {
  Map prev_score;  // (n, h*w, h, w): channel = key index, spatial = query
  Map prev_valid;  // (n,1,h,w)
  double lambda_raw = 0;
};

struct AttentionResult {
  Map score;          // blended score, same layout as prev_score
  Map reconstructed;  // (n,c,h,w)
};

/// Cosine similarity (norm floor 1e-8), query-neighbourhood mean over a side
/// x side window divided by the in-bounds count, softmax over keys, optional
/// gated blend, then score-weighted reconstruction.
AttentionResult naive_attention(const Map& features, const std::optional<AttentionInput>& state,
                                std::size_t side);

/// Central differences (f(v+eps) - f(v-eps)) / (2 eps) for each listed element
/// of `values`, restored afterwards. Elements whose evaluations are not finite
/// come back as NaN.
std::vector<double> finite_diff(const std::function<double()>& f, std::vector<double*> values,
                                double eps = 1e-4);

/// |a - n| / max(|a|, |n|, floor) for a gradient element pair.
double gradient_rel_error(double analytic, double numeric, double floor = 1e-6);

}  // namespace rfr::oracle
