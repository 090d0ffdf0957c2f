#include "rfr/trainer.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "rfr/random.hpp"

namespace rfr {

template <typename T>
void Adam<T>::step(ParamStore<T>& store, double lr) {
  for (const auto& [name, e] : store.params()) {
    if (!e.frozen && !all_finite(e.grad)) {
      throw NumericError("non-finite gradient in tensor '" + name + "'");
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
  for (auto& [name, e] : store.params()) {
    if (e.frozen) continue;
    auto& mo = moments_[name];
    if (mo.m.empty()) {
      mo.m.assign(e.value.numel(), 0.0);
      mo.v.assign(e.value.numel(), 0.0);
    }
    auto value = e.value.data();
    const auto grad = e.grad.values();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i];
      mo.m[i] = cfg_.beta1 * mo.m[i] + (1 - cfg_.beta1) * g;
      mo.v[i] = cfg_.beta2 * mo.v[i] + (1 - cfg_.beta2) * g * g;
      const double mhat = mo.m[i] / bc1;
      const double vhat = mo.v[i] / bc2;
      value[i] = static_cast<T>(value[i] - lr * mhat / (std::sqrt(vhat) + cfg_.eps));
    }
  }
}

std::string TrainHistory::csv() const {
  std::ostringstream out;
  out << "step,total,hole,valid,perceptual,style\n" << std::setprecision(9);
  for (const auto& s : steps) {
    out << s.step << ',' << s.losses.total << ',' << s.losses.hole << ',' << s.losses.valid << ','
        << s.losses.perceptual << ',' << s.losses.style << '\n';
  }
  return out.str();
}

void TrainHistory::write_csv(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << csv();
  if (!out) throw IoError("error while writing '" + path + "'");
}

template <typename T>
void freeze_batch_norm(ParamStore<T>& store, bool frozen) {
  store.set_frozen([](const std::string& n) { return n.find(".bn.") != std::string::npos; }, frozen);
}

namespace {

class BatchSampler {
 public:
  BatchSampler(std::size_t count, std::size_t batch, std::uint64_t seed)
      : count_(count), batch_(batch), seed_(seed) {
    if (count == 0) throw ConfigError("training dataset is empty");
    if (batch == 0 || batch > count) {
      throw ConfigError("batch_size must be in [1, " + std::to_string(count) + "], got " +
                        std::to_string(batch));
    }
  }

  std::vector<std::size_t> next() {
    if (cursor_ + batch_ > order_.size()) reshuffle();
    std::vector<std::size_t> out(order_.begin() + cursor_, order_.begin() + cursor_ + batch_);
    cursor_ += batch_;
    return out;
  }

 private:
  void reshuffle() {
    order_.resize(count_);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    Rng rng(derive_seed(seed_, epoch_++));
    for (std::size_t i = count_ - 1; i > 0; --i) {
      std::swap(order_[i], order_[static_cast<std::size_t>(rng.integer(0, static_cast<long>(i)))]);
    }
    cursor_ = 0;
  }

  std::size_t count_, batch_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> order_;
};

}  // namespace

template <typename T>
TrainHistory train(NetworkGraph<T>& net, const SyntheticDataset& data, const TrainConfig& cfg,
                   const StepCallback& on_step) {
  if (!(cfg.lr_main >= 0) || !(cfg.lr_finetune >= 0)) {
    throw ConfigError("learning rates must be non-negative");
  }
  const FeatureExtractor<T> extractor(derive_seed(cfg.seed, "extractor"));
  BatchSampler sampler(data.size(), cfg.batch_size, derive_seed(cfg.seed, "batches"));
  Adam<T> adam(cfg.adam);
  TrainHistory history;

  auto run_phase = [&](int phase, std::size_t steps, double lr, BnMode mode) {
    for (std::size_t i = 0; i < steps; ++i) {
      const Batch b = data.batch(sampler.next());
      const Tensor<T> gt = b.gt.template cast<T>();
      const Tensor<T> mask = b.mask.template cast<T>();
      const Tensor<T> masked = b.masked.template cast<T>();

      Tape<T> tape;
      const Context<T> ctx = net.context(&tape, mode);
      const NetOutput<T> out = net.forward(ctx, masked, mask);
      const LossTerms<T> terms = compute_losses(out.prediction, gt, mask, extractor, cfg.weights);
      StepRecord rec{history.steps.size(), phase, values_of(terms)};
      if (!std::isfinite(rec.losses.total)) {
        throw NumericError("non-finite loss at step " + std::to_string(rec.step));
      }
      net.params().zero_grad();
      tape.backward(terms.total);
      adam.step(net.params(), lr);
      history.steps.push_back(rec);
      if (on_step) on_step(rec);
    }
  };

  run_phase(1, cfg.steps_main, cfg.lr_main, BnMode::kTrain);
  if (cfg.steps_finetune > 0) {
    freeze_batch_norm(net.params(), true);
    run_phase(2, cfg.steps_finetune, cfg.lr_finetune, BnMode::kFrozen);
    freeze_batch_norm(net.params(), false);
  }
  return history;
}

template class Adam<float>;
template class Adam<double>;
template void freeze_batch_norm(ParamStore<float>&, bool);
template void freeze_batch_norm(ParamStore<double>&, bool);
template TrainHistory train(NetworkGraph<float>&, const SyntheticDataset&, const TrainConfig&,
                            const StepCallback&);
template TrainHistory train(NetworkGraph<double>&, const SyntheticDataset&, const TrainConfig&,
                            const StepCallback&);

}  // namespace rfr
