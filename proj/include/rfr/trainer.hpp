#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "rfr/losses.hpp"
#include "rfr/rfr_net.hpp"
#include "rfr/synthetic.hpp"

namespace rfr {

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moment buffers are created lazily per tensor;
/// frozen entries are skipped and keep their moments untouched.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  /// Applies one update using the gradients currently stored in `store`.
  /// Throws NumericError naming the first tensor with a non-finite gradient,
  /// before any parameter changes.
  void step(ParamStore<T>& store, double lr);
  std::size_t steps_taken() const { return t_; }

 private:
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };
  AdamConfig cfg_;
  std::size_t t_ = 0;
  std::map<std::string, Moments> moments_;
};

struct TrainConfig {
  std::size_t batch_size = 4;
  double lr_main = 1e-4;
  double lr_finetune = 1e-5;
  AdamConfig adam{};
  std::size_t steps_main = 100;
  std::size_t steps_finetune = 0;
  std::uint64_t seed = 0;
  LossWeights weights{};
};

struct StepRecord {
  std::size_t step = 0;
  int phase = 1;
  LossValues losses;
};

struct TrainHistory {
  std::vector<StepRecord> steps;

  /// "step,total,hole,valid,perceptual,style" plus one row per step.
  std::string csv() const;
  void write_csv(const std::string& path) const;
};

using StepCallback = std::function<void(const StepRecord&)>;

/// Phase 1 runs steps_main updates at lr_main with batch statistics. Phase 2
/// runs steps_finetune updates at lr_finetune with every normalization layer
/// frozen (running statistics used, gamma/beta not updated). Batches are drawn
/// without replacement from a per-epoch shuffle derived from the seed.
template <typename T>
TrainHistory train(NetworkGraph<T>& net, const SyntheticDataset& data, const TrainConfig& cfg,
                   const StepCallback& on_step = {});

/// Freezes or releases every normalization parameter (names containing ".bn.").
template <typename T>
void freeze_batch_norm(ParamStore<T>& store, bool frozen);

}  // namespace rfr
