#include "rfr/checks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numeric>
#include <sstream>

#include "rfr/image_io.hpp"
#include "rfr/kca.hpp"
#include "rfr/losses.hpp"
#include "rfr/random.hpp"
#include "rfr/rfr_net.hpp"
#include "rfr/synthetic.hpp"
#include "rfr/trainer.hpp"
#include "rfr/weights_io.hpp"

namespace rfr::checks {

void CheckResult::expect(bool ok, const std::string& what) {
  details.push_back(std::string(ok ? "ok   " : "FAIL ") + what);
  pass = pass && ok;
}

void CheckResult::add(const oracle::OracleReport& report) {
  details.push_back(report.line());
  pass = pass && report.pass;
}

std::string CheckResult::summary(bool verbose) const {
  std::string out = std::string(pass ? "PASS " : "FAIL ") + name + "\n";
  if (verbose || !pass) {
    for (const auto& d : details) out += "    " + d + "\n";
  }
  return out;
}

namespace {

std::string fmt(const char* format, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, format, a, b, c);
  return buf;
}

Tensor<double> random_map(const Shape& s, Rng& rng, double lo = -1, double hi = 1) {
  Tensor<double> t(s);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Values representable in float, so both precisions see identical inputs.
Tensor<double> random_float_map(const Shape& s, Rng& rng, double lo = -1, double hi = 1) {
  return random_map(s, rng, lo, hi).cast<float>().cast<double>();
}

Tensor<double> random_mask(const Shape& s, Rng& rng, double density) {
  Tensor<double> t(s);
  for (double& v : t.data()) v = rng.uniform() < density ? 1.0 : 0.0;
  return t;
}

std::size_t pick(Rng& rng, std::initializer_list<std::size_t> options) {
  return *(options.begin() + rng.integer(0, static_cast<long>(options.size()) - 1));
}

Tensor<double> concat_maps(const Tensor<double>& a, const Tensor<double>& b) {
  const Shape sa = a.shape(), sb = b.shape();
  Tensor<double> out(Shape{sa.n, sa.c + sb.c, sa.h, sa.w});
  for (std::size_t n = 0; n < sa.n; ++n)
    for (std::size_t c = 0; c < sa.c + sb.c; ++c)
      for (std::size_t y = 0; y < sa.h; ++y)
        for (std::size_t x = 0; x < sa.w; ++x)
          out.at(n, c, y, x) = c < sa.c ? a.at(n, c, y, x) : b.at(n, c - sa.c, y, x);
  return out;
}

Tensor<double> bias_vector(const Tensor<double>& b) {
  return b.reshaped(Shape{1, 1, 1, b.numel()});
}

struct Worst {
  oracle::OracleReport report;
  std::size_t failures = 0;
  std::size_t cases = 0;

  void take(const oracle::OracleReport& r) {
    ++cases;
    if (!r.pass) ++failures;
    if (cases == 1 || r.max_rel > report.max_rel || (!r.pass && report.pass)) report = r;
  }
  void publish(CheckResult& out, const std::string& label) const {
    oracle::OracleReport r = report;
    r.case_name = label + " worst of " + std::to_string(cases) + " (" + report.case_name + ")";
    r.pass = failures == 0;
    out.add(r);
  }
};

std::size_t count_holes(const Tensor<float>& mask) {
  std::size_t holes = 0;
  for (float v : mask.values()) holes += v == 0.0f;
  return holes;
}

template <typename T>
Tensor<T> central_hole_mask(std::size_t size, std::size_t hole) {
  Tensor<T> m(Shape{1, 1, size, size}, T(1));
  const std::size_t lo = (size - hole) / 2;
  for (std::size_t y = lo; y < lo + hole; ++y)
    for (std::size_t x = lo; x < lo + hole; ++x) m.at(0, 0, y, x) = T(0);
  return m;
}

ReasoningConfig micro_reasoning(std::size_t iter_num, bool attention, MergeMode mode) {
  ReasoningConfig cfg;
  cfg.iter_num = iter_num;
  cfg.attention = attention;
  cfg.merge_mode = mode;
  cfg.channel_scale = 8;
  return cfg;
}

}  // namespace

// ---------------------------------------------------------------------------

CheckResult oracle_equivalence(std::size_t cases, std::uint64_t seed) {
  CheckResult out{"oracle equivalence"};
  constexpr double kTol = 1e-5;
  Worst conv, pconv, pmask, merge, score, kca;
  for (std::size_t i = 0; i < cases; ++i) {
    Rng rng(derive_seed(seed, i));
    {
      const std::size_t k = pick(rng, {1, 3, 5, 7});
      const std::size_t stride = pick(rng, {1, 2});
      const std::size_t pad = static_cast<std::size_t>(rng.integer(0, long(k / 2)));
      const Shape xs{std::size_t(rng.integer(1, 2)), std::size_t(rng.integer(1, 4)),
                     std::size_t(rng.integer(long(k), 16)), std::size_t(rng.integer(long(k), 16))};
      const Tensor<double> x = random_float_map(xs, rng);
      const Tensor<double> w = random_float_map(Shape{std::size_t(rng.integer(1, 4)), xs.c, k, k}, rng);
      const Tensor<double> b = random_float_map(Shape{w.shape().n, 1, 1, 1}, rng);
      const auto prod = conv2d(Var<float>(x.cast<float>()), Var<float>(w.cast<float>()),
                               Var<float>(b.cast<float>()), stride, pad);
      conv.take(oracle::compare("conv2d " + xs.str() + " k" + std::to_string(k),
                                prod.value().cast<double>(),
                                oracle::naive_conv2d(x, w, bias_vector(b), stride, pad), kTol));
    }
    {
      const std::size_t k = pick(rng, {1, 3, 5, 7});
      const std::size_t stride = pick(rng, {1, 2});
      const std::size_t pad = static_cast<std::size_t>(rng.integer(0, long(k / 2)));
      const Shape xs{std::size_t(rng.integer(1, 2)), std::size_t(rng.integer(1, 4)),
                     std::size_t(rng.integer(long(k), 16)), std::size_t(rng.integer(long(k), 16))};
      const bool per_channel = rng.uniform() < 0.5;
      const Tensor<double> x = random_float_map(xs, rng);
      const Tensor<double> m =
          random_mask(Shape{xs.n, per_channel ? xs.c : 1, xs.h, xs.w}, rng, rng.uniform(0.05, 0.95));
      const Tensor<double> w = random_float_map(Shape{std::size_t(rng.integer(1, 4)), xs.c, k, k}, rng);
      const Tensor<double> b = random_float_map(Shape{w.shape().n, 1, 1, 1}, rng);
      const auto prod = partial_conv(Var<float>(x.cast<float>()), m.cast<float>(),
                                     Var<float>(w.cast<float>()), Var<float>(b.cast<float>()), stride, pad);
      const auto ref = oracle::naive_partial_conv(x, m, w, bias_vector(b), stride, pad);
      const std::string label = "partial_conv " + xs.str() + " k" + std::to_string(k) +
                                (per_channel ? " per-channel" : "");
      pconv.take(oracle::compare(label, prod.features.value().cast<double>(), ref.features, kTol));
      pmask.take(oracle::compare(label, prod.mask.cast<double>(), ref.mask, 0.0));
    }
    {
      const std::size_t count = std::size_t(rng.integer(1, 6));
      const Shape fs{std::size_t(rng.integer(1, 2)), std::size_t(rng.integer(1, 4)),
                     std::size_t(rng.integer(2, 16)), std::size_t(rng.integer(2, 16))};
      RecurrenceState<float> state;
      std::vector<Tensor<double>> fd, md;
      for (std::size_t r = 0; r < count; ++r) {
        fd.push_back(random_float_map(fs, rng, -2, 2));
        md.push_back(random_mask(Shape{fs.n, 1, fs.h, fs.w}, rng, rng.uniform(0.1, 0.9)));
        state.features.emplace_back(fd.back().cast<float>());
        state.masks.push_back(md.back().cast<float>());
      }
      merge.take(oracle::compare("merge " + std::to_string(count) + "x" + fs.str(),
                                 merge_features(state, MergeMode::kAdaptive).value().cast<double>(),
                                 oracle::naive_merge(fd, md), kTol));
    }
    {
      const Shape fs{std::size_t(rng.integer(1, 2)), std::size_t(rng.integer(1, 6)),
                     std::size_t(rng.integer(1, 8)), std::size_t(rng.integer(1, 8))};
      const std::size_t side = pick(rng, {1, 3, 5});
      const std::size_t recurrence = std::size_t(rng.integer(0, 1));
      const Tensor<double> f = random_float_map(fs, rng);
      const Tensor<double> valid = random_mask(Shape{fs.n, 1, fs.h, fs.w}, rng, 0.6);

      ParamStore<float> store;
      register_kca(store, "kca", fs.c, derive_seed(seed, i));
      const double lambda = float(rng.uniform(-3, 3));
      store.entry("kca.lambda").value.data()[0] = float(lambda);
      const Context<float> ctx{&store, nullptr, BnMode::kEval, {}};

      std::optional<AttentionState<float>> state;
      std::optional<oracle::AttentionInput> ref_state;
      if (recurrence == 1) {
        // Random distributions over keys at every query.
        Tensor<double> prev(Shape{fs.n, fs.plane(), fs.h, fs.w});
        for (std::size_t n = 0; n < fs.n; ++n)
          for (std::size_t q = 0; q < fs.plane(); ++q) {
            double z = 0;
            for (std::size_t k = 0; k < fs.plane(); ++k) z += (prev.at(n, k, q / fs.w, q % fs.w) = rng.uniform(0.01, 1));
            for (std::size_t k = 0; k < fs.plane(); ++k) prev.at(n, k, q / fs.w, q % fs.w) /= z;
          }
        prev = prev.cast<float>().cast<double>();
        const Tensor<double> prev_valid = random_mask(valid.shape(), rng, 0.5);
        state = AttentionState<float>{Var<float>(prev.cast<float>()), prev_valid.cast<float>(), 1};
        ref_state = oracle::AttentionInput{prev, prev_valid, lambda};
      }
      KcaConfig kcfg;
      kcfg.smoothing_side = side;
      const auto prod = kca_forward(ctx, "kca", Var<float>(f.cast<float>()), valid.cast<float>(),
                                    state, recurrence, kcfg);
      const auto ref = oracle::naive_attention(f, ref_state, side);
      const Tensor<double> fw = store.entry("kca.fuse.weight").value.cast<double>();
      const Tensor<double> fb = store.entry("kca.fuse.bias").value.cast<double>();
      const Tensor<double> fused = oracle::naive_conv2d(concat_maps(ref.reconstructed, f), fw, bias_vector(fb), 1, 0);
      const std::string label = "kca " + fs.str() + " s" + std::to_string(side) + " r" + std::to_string(recurrence);
      score.take(oracle::compare(label, prod.state.prev_score.value().cast<double>(), ref.score, kTol));
      kca.take(oracle::compare(label, prod.features.value().cast<double>(), fused, kTol));
    }
  }
  conv.publish(out, "conv2d");
  pconv.publish(out, "partial_conv features");
  pmask.publish(out, "partial_conv mask (exact)");
  merge.publish(out, "adaptive merge");
  score.publish(out, "kca scores");
  kca.publish(out, "kca output");
  return out;
}

// ---------------------------------------------------------------------------

CheckResult mask_dynamics(std::uint64_t seed) {
  CheckResult out{"mask dynamics"};
  Rng rng(derive_seed(seed, "mask-dynamics"));
  std::size_t mismatches = 0, trials = 0;
  for (std::size_t k : {3, 7}) {
    for (int i = 0; i < 50; ++i) {
      const Shape s{1, 1, std::size_t(rng.integer(8, 24)), std::size_t(rng.integer(8, 24))};
      const Tensor<double> m = random_mask(s, rng, rng.uniform(0.02, 0.6));
      const std::size_t times = std::size_t(rng.integer(1, 3));
      Tensor<double> upd = m;
      for (std::size_t t = 0; t < times; ++t) upd = mask_update(upd, k, 1, k / 2);
      ++trials;
      if (!bit_equal(upd, oracle::mask_dilation(m, k, times))) ++mismatches;
    }
  }
  out.expect(mismatches == 0, "mask update equals dilation on " + std::to_string(trials) +
                                  " random masks (k = 3, 7), mismatches: " + std::to_string(mismatches));

  const RfrModule module("rfr", micro_reasoning(6, true, MergeMode::kAdaptive));
  ParamStore<float> store;
  module.register_params(store, seed);
  const Context<float> ctx{&store, nullptr, BnMode::kEval, {}};
  for (int trial = 0; trial < 3; ++trial) {
    const Tensor<float> mask = generate_mask(32, MaskBand::k50to60, derive_seed(seed, std::uint64_t(trial)));
    const Tensor<float> feats = random_map(Shape{1, module.channels(), 32, 32}, rng).cast<float>();
    const auto res = module.forward(ctx, Var<float>(feats), mask);
    std::size_t prev = count_holes(mask);
    std::string trace = std::to_string(prev);
    bool ok = true;
    for (const auto& m : res.state.masks) {
      const std::size_t holes = count_holes(m);
      trace += " -> " + std::to_string(holes);
      ok = ok && holes <= prev && (prev == 0 || holes < prev);
      prev = holes;
    }
    out.expect(ok, "hole area per recurrence is non-increasing and strictly shrinking: " + trace);
  }

  for (auto [hole, expected] : {std::pair<std::size_t, std::size_t>{12, 1}, {24, 2}}) {
    const Tensor<float> mask = central_hole_mask<float>(32, hole);
    const Tensor<float> feats = random_map(Shape{1, module.channels(), 32, 32}, rng).cast<float>();
    const auto res = module.forward(ctx, Var<float>(feats), mask);
    std::size_t filled_at = 0;
    for (std::size_t i = 0; i < res.state.masks.size() && filled_at == 0; ++i) {
      if (count_holes(res.state.masks[i]) == 0) filled_at = i + 1;
    }
    out.expect(filled_at == expected, std::to_string(hole) + "x" + std::to_string(hole) +
                                          " central hole in 32x32 fully valid after recurrence " +
                                          std::to_string(filled_at) + " (expected " +
                                          std::to_string(expected) + ")");
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

using LossFn = std::function<Var<double>(Tape<double>*)>;

double probed_loss(const LossFn& loss, std::uint64_t* signature) {
  BranchProbe probe;
  const double v = loss(nullptr).value()[0];
  *signature = probe.signature();
  return v;
}

// True when moving the element by +-eps leaves every relu, leaky_relu and abs
// on the piece it selects at the base point.
bool smooth_around(const LossFn& loss, double& element, double eps, std::uint64_t base) {
  const double saved = element;
  std::uint64_t up = 0, down = 0;
  element = saved + eps;
  probed_loss(loss, &up);
  element = saved - eps;
  probed_loss(loss, &down);
  element = saved;
  return up == base && down == base;
}

// Checks d(loss)/d(param) for the named tensors. With `every_element` all
// entries are compared; otherwise the largest-gradient element plus `extra`
// random elements, each restricted to points whose +-eps neighbourhood lies on
// one smooth piece (candidates are tried in order, up to kMaxCandidates).
void gradcheck_params(CheckResult& out, const std::string& label, ParamStore<double>& store,
                      const LossFn& loss, const std::vector<std::string>& names, std::size_t extra,
                      Rng& rng, bool every_element = false) {
  constexpr double kEps = 1e-4;
  constexpr double kTol = 1e-4;
  constexpr std::size_t kMaxCandidates = 24;
  {
    Tape<double> tape;
    store.zero_grad();
    const Var<double> l = loss(&tape);
    tape.backward(l);
  }
  std::uint64_t base = 0;
  if (!every_element) probed_loss(loss, &base);
  std::vector<double> analytic;
  std::vector<double*> where;
  std::vector<std::string> tags;
  std::size_t skipped = 0;
  std::size_t unplaced = 0;
  for (const auto& name : names) {
    auto& e = store.entry(name);
    const auto g = e.grad.values();
    auto data = e.value.data();
    auto take = [&](std::size_t i) {
      analytic.push_back(g[i]);
      where.push_back(&data[i]);
      tags.push_back(name + "[" + std::to_string(i) + "]");
    };
    if (every_element) {
      for (std::size_t i = 0; i < g.size(); ++i) take(i);
      continue;
    }
    std::vector<std::size_t> order(g.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return std::abs(g[a]) > std::abs(g[b]); });
    auto place = [&](auto next) {
      for (std::size_t attempt = 0; attempt < kMaxCandidates; ++attempt) {
        const std::size_t i = next(attempt);
        if (smooth_around(loss, data[i], kEps, base)) {
          take(i);
          return;
        }
        ++skipped;
      }
      ++unplaced;
    };
    place([&](std::size_t a) { return order[std::min(a, order.size() - 1)]; });
    for (std::size_t j = 0; j < extra && g.size() > 1; ++j) {
      place([&](std::size_t) { return std::size_t(rng.integer(0, long(g.size()) - 1)); });
    }
  }
  const auto numeric =
      oracle::finite_diff([&] { return double(loss(nullptr).value()[0]); }, where, kEps);
  double worst = 0;
  std::string worst_tag;
  double worst_a = 0, worst_n = 0;
  for (std::size_t i = 0; i < numeric.size(); ++i) {
    const double err = std::isnan(numeric[i]) ? INFINITY : oracle::gradient_rel_error(analytic[i], numeric[i]);
    if (err >= worst) {
      worst = err;
      worst_tag = tags[i];
      worst_a = analytic[i];
      worst_n = numeric[i];
    }
  }
  std::string note;
  if (!every_element) {
    note = " (" + std::to_string(skipped) + " candidates skipped at kinks)";
  }
  out.expect(unplaced == 0 && worst < kTol,
             label + ": " + std::to_string(numeric.size()) + " elements, worst " + worst_tag +
                 fmt(" analytic=%.6e numeric=%.6e rel=%.2e", worst_a, worst_n, worst) + note +
                 (unplaced ? ", " + std::to_string(unplaced) + " elements without a smooth neighbourhood" : std::string()));
}

Var<double> weighted_sum(const Var<double>& x, const Tensor<double>& r) {
  return sum(mul(x, Var<double>(r)));
}

}  // namespace

CheckResult gradient_checks(std::uint64_t seed) {
  CheckResult out{"gradient checks"};
  Rng rng(derive_seed(seed, "gradcheck"));

  for (std::size_t stride : {1, 2}) {
    ParamStore<double> store;
    LayerSpec spec;
    spec.name = "pc";
    spec.kind = LayerKind::kPartialConv;
    spec.in_channels = 3;
    spec.out_channels = 4;
    spec.kernel = 3;
    spec.stride = stride;
    spec.padding = 1;
    register_layer(store, spec, seed);
    const Tensor<double> x = random_map(Shape{2, 3, 8, 8}, rng);
    const Tensor<double> m = random_mask(Shape{2, 1, 8, 8}, rng, 0.5);
    const std::size_t o = conv_output_size(8, 3, stride, 1);
    const Tensor<double> r = random_map(Shape{2, 4, o, o}, rng);
    const LossFn loss = [&](Tape<double>* tape) {
      const Context<double> ctx{&store, tape, BnMode::kTrain, {}};
      return weighted_sum(partial_conv(Var<double>(x), m, ctx.param("pc.weight"), ctx.param("pc.bias"), stride, 1).features, r);
    };
    gradcheck_params(out, "partial conv W, b (stride " + std::to_string(stride) + ")", store, loss,
                     {"pc.weight", "pc.bias"}, 0, rng, true);
  }

  {
    ParamStore<double> store;
    register_kca(store, "kca", 4, seed);
    store.entry("kca.lambda").value.data()[0] = 0.3;
    const Tensor<double> f0 = random_map(Shape{1, 4, 4, 4}, rng);
    const Tensor<double> f1 = random_map(Shape{1, 4, 4, 4}, rng);
    const Tensor<double> v0 = random_mask(Shape{1, 1, 4, 4}, rng, 0.6);
    const Tensor<double> v1 = random_mask(Shape{1, 1, 4, 4}, rng, 0.8);
    const Tensor<double> r = random_map(Shape{1, 4, 4, 4}, rng);
    const LossFn loss = [&](Tape<double>* tape) {
      const Context<double> ctx{&store, tape, BnMode::kTrain, {}};
      const auto a = kca_forward(ctx, "kca", Var<double>(f0), v0, std::optional<AttentionState<double>>{}, 0, KcaConfig{});
      const auto b = kca_forward(ctx, "kca", Var<double>(f1), v1, std::optional<AttentionState<double>>(a.state), 1, KcaConfig{});
      return add(weighted_sum(b.features, r), weighted_sum(a.features, r));
    };
    gradcheck_params(out, "attention gate lambda_raw and fusion conv (two recurrences)", store,
                     loss, {"kca.lambda", "kca.fuse.weight", "kca.fuse.bias"}, 0, rng, true);
  }

  {
    ParamStore<double> store;
    LayerSpec spec;
    spec.name = "bnconv";
    spec.in_channels = 3;
    spec.out_channels = 5;
    spec.batch_norm = true;
    spec.activation = Activation::kLeakyRelu;
    register_layer(store, spec, seed);
    for (double& v : store.entry("bnconv.bn.gamma").value.data()) v = rng.uniform(0.5, 1.5);
    for (double& v : store.entry("bnconv.bn.beta").value.data()) v = rng.uniform(-0.5, 0.5);
    const Tensor<double> x = random_map(Shape{3, 3, 6, 6}, rng);
    const Tensor<double> r = random_map(Shape{3, 5, 6, 6}, rng);
    const LossFn loss = [&](Tape<double>* tape) {
      const Context<double> ctx{&store, tape, BnMode::kTrain, {}};
      return weighted_sum(apply_layer(ctx, spec, Var<double>(x)), r);
    };
    gradcheck_params(out, "batch norm gamma, beta and input path (batch statistics)", store, loss,
                     {"bnconv.bn.gamma", "bnconv.bn.beta", "bnconv.weight"}, 0, rng, true);
  }

  NetConfig cfg;
  cfg.channel_scale = 8;
  cfg.resolution = 16;
  cfg.reasoning.iter_num = 2;
  NetworkGraph<double> net = build<double>(cfg, seed);
  const FeatureExtractor<double> fx(derive_seed(seed, "extractor"));
  const SyntheticDataset data(2, 16, MaskBand::k30to40, derive_seed(seed, "gradcheck-data"));
  const Batch batch = data.batch({0, 1});
  const Tensor<double> gt = batch.gt.cast<double>();
  const Tensor<double> mask = batch.mask.cast<double>();
  const Tensor<double> masked = batch.masked.cast<double>();
  const std::vector<std::string> tensors{
      "PartialConv0.weight",   "PartialConv1.bn.gamma", "rfr.PartialConv2.weight",
      "rfr.PartialConv3.bn.beta", "rfr.Conv1.weight",  "rfr.Conv8.weight",
      "rfr.DeConv1.weight",    "rfr.DeConv3.bn.gamma",  "DeConv4.weight",
      "PartialConv4.weight",   "PartialConv4.bias",     "Conv10.weight",
      "OutputConv.weight",     "OutputConv.bias",       "rfr.KCA.fuse.weight",
      "rfr.KCA.lambda"};
  const LossWeights weights;
  const std::vector<std::pair<std::string, Var<double> LossTerms<double>::*>> parts{
      {"L_hole", &LossTerms<double>::hole},
      {"L_valid", &LossTerms<double>::valid},
      {"L_perceptual", &LossTerms<double>::perceptual},
      {"L_style", &LossTerms<double>::style},
      {"total loss", &LossTerms<double>::total}};
  for (const auto& [label, member] : parts) {
    const LossFn loss = [&, member = member](Tape<double>* tape) {
      const Context<double> ctx = net.context(tape, BnMode::kEval);
      const auto res = net.forward(ctx, masked, mask);
      return compute_losses(res.prediction, gt, mask, fx, weights).*member;
    };
    gradcheck_params(out, label + " through the micro network", net.params(), loss, tensors, 1, rng);
  }
  return out;
}

// ---------------------------------------------------------------------------

CheckResult attention_contracts(std::uint64_t seed) {
  CheckResult out{"attention contracts"};
  Rng rng(derive_seed(seed, "attention"));
  const Shape fs{2, 6, 5, 5};
  std::vector<Tensor<float>> feats, valid;
  for (int i = 0; i < 3; ++i) feats.push_back(random_map(fs, rng).cast<float>());
  // Queries valid from recurrence 0 stay valid; more join later.
  Tensor<float> v(Shape{2, 1, 5, 5});
  for (int i = 0; i < 3; ++i) {
    for (float& x : v.data()) if (rng.uniform() < 0.4) x = 1.0f;
    valid.push_back(v);
  }

  auto run = [&](double lambda) {
    ParamStore<float> store;
    register_kca(store, "kca", fs.c, seed);
    store.entry("kca.lambda").value.data()[0] = float(lambda);
    const Context<float> ctx{&store, nullptr, BnMode::kEval, {}};
    std::vector<AttentionState<float>> states;
    std::optional<AttentionState<float>> st;
    for (std::size_t i = 0; i < 3; ++i) {
      st = kca_forward(ctx, "kca", Var<float>(feats[i]), valid[i], st, i, KcaConfig{}).state;
      states.push_back(*st);
    }
    return states;
  };
  auto slice_error = [](const Tensor<float>& score) {
    const Shape s = score.shape();
    double worst = 0;
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t p = 0; p < s.plane(); ++p) {
        double total = 0;
        for (std::size_t k = 0; k < s.c; ++k) total += score.at(n, k, p / s.w, p % s.w);
        worst = std::max(worst, std::abs(total - 1.0));
      }
    return worst;
  };
  auto score_prime = [&](int i) {
    return smooth_and_softmax(cosine_scores(Var<float>(feats[i])), 3).value();
  };

  double worst_sum = 0;
  for (double lambda : {0.0, 1.5, -2.0}) {
    for (const auto& s : run(lambda)) worst_sum = std::max(worst_sum, slice_error(s.prev_score.value()));
  }
  {
    const RfrModule module("rfr", micro_reasoning(4, true, MergeMode::kAdaptive));
    ParamStore<float> store;
    module.register_params(store, seed);
    store.entry("rfr.KCA.lambda").value.data()[0] = 0.7f;
    const Context<float> ctx{&store, nullptr, BnMode::kEval, {}};
    const auto res = module.forward(ctx, Var<float>(random_map(Shape{1, module.channels(), 32, 32}, rng).cast<float>()),
                                    generate_mask(32, MaskBand::k30to40, seed));
    for (const auto& s : res.scores) worst_sum = std::max(worst_sum, slice_error(s.value()));
  }
  out.expect(worst_sum <= 1e-5, fmt("every blended score slice sums to 1: worst |sum-1| = %.2e", worst_sum));

  const auto base = run(0.0);
  out.expect(bit_equal(base[0].prev_score.value(), score_prime(0)),
             "recurrence 0 scores equal smoothed softmax scores bit for bit");

  const auto open = run(40.0);
  double open_err = 0;
  for (int i = 1; i < 3; ++i) {
    const Tensor<float> sp = score_prime(i);
    const Tensor<float>& sc = open[i].prev_score.value();
    for (std::size_t j = 0; j < sp.numel(); ++j) open_err = std::max(open_err, double(std::abs(sc[j] - sp[j])));
  }
  out.expect(open_err <= 1e-6, fmt("lambda_raw = +40 reproduces current scores: max diff %.2e", open_err));

  const auto closed = run(-40.0);
  double closed_err = 0;
  std::size_t persistent = 0;
  const Shape ss = closed[0].prev_score.shape();
  for (std::size_t n = 0; n < ss.n; ++n)
    for (std::size_t p = 0; p < ss.plane(); ++p) {
      const std::size_t y = p / ss.w, x = p % ss.w;
      if (valid[0].at(n, 0, y, x) != 1.0f || valid[1].at(n, 0, y, x) != 1.0f) continue;
      ++persistent;
      for (std::size_t k = 0; k < ss.c; ++k) {
        closed_err = std::max(closed_err, double(std::abs(closed[2].prev_score.value().at(n, k, y, x) -
                                                          closed[0].prev_score.value().at(n, k, y, x))));
      }
    }
  out.expect(persistent > 0 && closed_err <= 1e-5,
             fmt("lambda_raw = -40 carries recurrence-0 scores to recurrence 2 at %.0f persistently valid queries: max diff %.2e",
                 double(persistent), closed_err));

  bool threw = false;
  try {
    ParamStore<float> store;
    register_kca(store, "kca", fs.c, seed);
    const Context<float> ctx{&store, nullptr, BnMode::kEval, {}};
    kca_forward(ctx, "kca", Var<float>(feats[0]), valid[0], std::optional<AttentionState<float>>{}, 1, KcaConfig{});
  } catch (const ContractError&) {
    threw = true;
  }
  out.expect(threw, "missing state at recurrence 1 is rejected");
  return out;
}

// ---------------------------------------------------------------------------

CheckResult merge_ablation(std::uint64_t seed) {
  CheckResult out{"merge ablation"};
  Rng rng(derive_seed(seed, "merge"));
  std::size_t exact = 0;
  constexpr std::size_t kCases = 25;
  for (std::size_t i = 0; i < kCases; ++i) {
    const std::size_t count = std::size_t(rng.integer(1, 6));
    const Shape fs{std::size_t(rng.integer(1, 2)), std::size_t(rng.integer(1, 3)), 6, 7};
    RecurrenceState<double> state;
    std::vector<Tensor<double>> fd, md;
    for (std::size_t r = 0; r < count; ++r) {
      Tensor<double> f(fs);
      for (double& v : f.data()) v = double(rng.integer(-9, 9));
      fd.push_back(f);
      md.push_back(random_mask(Shape{fs.n, 1, fs.h, fs.w}, rng, 0.5));
      state.features.emplace_back(f);
      state.masks.push_back(md.back());
    }
    exact += bit_equal(merge_features(state, MergeMode::kAdaptive).value(), oracle::naive_merge(fd, md));
  }
  out.expect(exact == kCases, "adaptive merge equals the oracle exactly on " + std::to_string(exact) +
                                  "/" + std::to_string(kCases) + " integer cases");

  const Tensor<float> feats = random_map(Shape{1, 8, 32, 32}, rng).cast<float>();
  const Tensor<float> mask = central_hole_mask<float>(32, 28);
  std::map<MergeMode, Tensor<float>> merged;
  std::size_t unsaturated = 0;
  for (MergeMode mode : {MergeMode::kAdaptive, MergeMode::kAverage, MergeMode::kLastOnly}) {
    const RfrModule module("rfr", micro_reasoning(6, true, mode));
    ParamStore<float> store;
    module.register_params(store, seed);
    const Context<float> ctx{&store, nullptr, BnMode::kEval, {}};
    const auto res = module.forward(ctx, Var<float>(feats), mask);
    merged[mode] = res.merged.value();
    unsaturated = count_holes(res.state.masks.front());
  }
  out.expect(unsaturated > 0, "masks are not saturated after the first recurrence (" +
                                  std::to_string(unsaturated) + " holes remain)");
  auto diff = [&](MergeMode a, MergeMode b) {
    double d = 0;
    for (std::size_t i = 0; i < merged[a].numel(); ++i) d = std::max(d, double(std::abs(merged[a][i] - merged[b][i])));
    return d;
  };
  const double da = diff(MergeMode::kAdaptive, MergeMode::kAverage);
  const double dl = diff(MergeMode::kAdaptive, MergeMode::kLastOnly);
  const double al = diff(MergeMode::kAverage, MergeMode::kLastOnly);
  out.expect(da > 1e-3 && dl > 1e-3 && al > 1e-3,
             fmt("pairwise max |diff|: adaptive/average %.3e, adaptive/last %.3e, average/last %.3e", da, dl, al));
  return out;
}

// ---------------------------------------------------------------------------

CheckResult toy_training(std::uint64_t seed, std::size_t steps) {
  CheckResult out{"toy training"};
  NetConfig cfg;
  cfg.channel_scale = 8;
  cfg.resolution = 32;
  cfg.reasoning.iter_num = 3;
  NetworkGraph<float> net = build<float>(cfg, seed);
  const SyntheticDataset data(16, 32, MaskBand::k30to40, derive_seed(seed, "toy-data"));
  TrainConfig tc;
  tc.lr_main = 1e-3;
  tc.steps_main = steps;
  tc.batch_size = 4;
  tc.seed = seed;
  TrainHistory hist;
  try {
    hist = train(net, data, tc);
  } catch (const NumericError& e) {
    out.expect(false, std::string("training aborted: ") + e.what());
    return out;
  }
  const std::size_t window = std::min<std::size_t>(10, hist.steps.size() / 2);
  auto mean_of = [&](std::size_t from, auto field) {
    double total = 0;
    for (std::size_t i = from; i < from + window; ++i) total += field(hist.steps[i].losses);
    return total / double(window);
  };
  const auto total = [](const LossValues& v) { return v.total; };
  const auto hole = [](const LossValues& v) { return v.hole; };
  const double first = mean_of(0, total), last = mean_of(hist.steps.size() - window, total);
  const double hole_first = mean_of(0, hole), hole_last = mean_of(hist.steps.size() - window, hole);
  bool finite = true;
  for (const auto& s : hist.steps) {
    for (double v : {s.losses.total, s.losses.hole, s.losses.valid, s.losses.perceptual, s.losses.style}) {
      finite = finite && std::isfinite(v);
    }
  }
  for (const auto& [name, e] : net.params().params()) finite = finite && all_finite(e.value);
  for (const auto& [name, b] : net.params().buffers()) finite = finite && all_finite(b);
  out.expect(finite, "loss history, parameters and buffers are finite");
  out.expect(last <= 0.5 * first, fmt("total loss: first-10 mean %.4f, last-10 mean %.4f (ratio %.3f, need <= 0.5)",
                                      first, last, last / first));
  out.expect(hole_last <= 0.6 * hole_first,
             fmt("L_hole: first-10 mean %.4f, last-10 mean %.4f (ratio %.3f, need <= 0.6)", hole_first,
                 hole_last, hole_last / hole_first));
  for (const std::string name : {"rfr.KCA.lambda", "PartialConv0.weight", "rfr.Conv4.weight"}) {
    double norm = 0;
    for (float g : net.params().entry(name).grad.values()) norm += double(g) * g;
    out.expect(std::isfinite(norm) && norm > 0, fmt(("gradient norm of " + name + " = %.3e").c_str(), std::sqrt(norm)));
  }
  return out;
}

// ---------------------------------------------------------------------------

std::size_t hand_derived_param_count() {
  // weights + bias (+ 2*out for batch norm), one row per table entry.
  const std::size_t rows[] = {
      3 * 64 * 49 + 64 + 128,       // PartialConv0
      64 * 64 * 49 + 64 + 128,      // PartialConv1
      64 * 64 * 16 + 64 + 128,      // DeConv4
      67 * 32 * 9 + 32,             // PartialConv4
      32 * 32 * 9 + 32 + 64,        // Conv9
      32 * 32 * 9 + 32 + 64,        // Conv10
      64 * 3 * 9 + 3,               // OutputConv
      64 * 64 * 49 + 64,            // PartialConv2
      64 * 64 * 49 + 64 + 128,      // PartialConv3
      64 * 128 * 9 + 128 + 256,     // Conv1
      128 * 256 * 9 + 256 + 512,    // Conv2
      256 * 512 * 9 + 512 + 1024,   // Conv3
      512 * 512 * 9 + 512 + 1024,   // Conv4
      512 * 512 * 9 + 512 + 1024,   // Conv5
      512 * 512 * 9 + 512 + 1024,   // Conv6
      1024 * 512 * 9 + 512 + 1024,  // Conv7
      1024 * 512 * 9 + 512 + 1024,  // Conv8
      1024 * 256 * 16 + 256 + 512,  // DeConv1
      512 * 128 * 16 + 128 + 256,   // DeConv2
      256 * 64 * 16 + 64 + 128,     // DeConv3
  };
  return std::accumulate(std::begin(rows), std::end(rows), std::size_t{0});
}

CheckResult architecture_fidelity(std::uint64_t seed) {
  CheckResult out{"architecture fidelity"};
  struct Expect {
    std::size_t channels;
    std::size_t side;
  };
  const std::map<std::string, Expect> table{
      {"PartialConv0", {64, 128}},     {"PartialConv1", {64, 128}},   {"rfr.PartialConv2", {64, 128}},
      {"rfr.PartialConv3", {64, 128}}, {"rfr.Conv1", {128, 64}},      {"rfr.Conv2", {256, 32}},
      {"rfr.Conv3", {512, 16}},        {"rfr.Conv4", {512, 16}},      {"rfr.Conv5", {512, 16}},
      {"rfr.Conv6", {512, 16}},        {"rfr.Conv7", {512, 16}},      {"rfr.Conv8", {512, 16}},
      {"rfr.KCA", {512, 16}},          {"rfr.DeConv1", {256, 32}},    {"rfr.DeConv2", {128, 64}},
      {"rfr.DeConv3", {64, 128}},      {"rfr.FeatureMerge", {64, 128}}, {"DeConv4", {64, 256}},
      {"PartialConv4", {32, 256}},     {"Conv9", {32, 256}},          {"Conv10", {32, 256}},
      {"OutputConv", {3, 256}}};

  NetConfig cfg;
  NetworkGraph<float> net = build<float>(cfg, seed);
  const SyntheticSample sample = make_sample(256, MaskBand::k30to40, seed);
  std::map<std::string, std::size_t> seen;
  std::vector<std::string> mismatches;
  const auto res = net.infer(sample.masked, sample.mask, [&](const std::string& name, const Shape& s) {
    ++seen[name];
    auto it = table.find(name);
    if (it == table.end()) {
      mismatches.push_back("unexpected layer " + name);
    } else if (s.n != 1 || s.c != it->second.channels || s.h != it->second.side || s.w != it->second.side) {
      mismatches.push_back(name + " produced " + s.str());
    }
  });
  for (const auto& [name, e] : table) {
    if (!seen.count(name)) mismatches.push_back("missing layer " + name);
  }
  out.expect(mismatches.empty() && res.prediction.shape() == Shape{1, 3, 256, 256},
             "256x256 trace matches the architecture table for " + std::to_string(table.size()) +
                 " layers" + (mismatches.empty() ? "" : ": " + mismatches.front()));
  out.expect(seen["rfr.DeConv3"] == 6 && seen["rfr.KCA"] == 6,
             "module layers run once per recurrence (" + std::to_string(seen["rfr.DeConv3"]) + " times)");

  const std::size_t hand = hand_derived_param_count();
  NetConfig bare = cfg;
  bare.reasoning.attention = false;
  const std::size_t bare_count = build<float>(bare, seed).param_count();
  out.expect(bare_count == hand && hand == 24297667,
             "parameter count without attention " + std::to_string(bare_count) + " equals hand-summed " +
                 std::to_string(hand));
  const std::size_t kca = 1024 * 512 + 512 + 1;
  out.expect(net.param_count() == hand + kca && net.params().scalar_count() == net.param_count(),
             "parameter count with attention " + std::to_string(net.param_count()) + " = " +
                 std::to_string(hand) + " + " + std::to_string(kca) + " (store holds " +
                 std::to_string(net.params().scalar_count()) + ")");
  const double ratio = double(net.param_count()) / 31e6;
  out.expect(ratio >= 0.5 && ratio <= 2.0, fmt("within a factor of 2 of 31M (ratio %.3f)", ratio));

  std::vector<std::size_t> counts;
  for (std::size_t iters : {6, 7, 8}) {
    NetConfig c = cfg;
    c.reasoning.iter_num = iters;
    const auto g = build<float>(c, seed);
    counts.push_back(g.module().param_count());
    counts.push_back(g.params().scalar_count());
  }
  out.expect(counts[0] == counts[2] && counts[2] == counts[4] && counts[1] == counts[3] && counts[3] == counts[5],
             "module parameter count " + std::to_string(counts[0]) + " is the same for iter_num 6, 7, 8");
  return out;
}

// ---------------------------------------------------------------------------

CheckResult determinism(std::uint64_t seed, const std::string& scratch_dir) {
  CheckResult out{"determinism and round trips"};
  namespace fs = std::filesystem;
  fs::create_directories(scratch_dir);
  NetConfig cfg;
  cfg.channel_scale = 4;
  cfg.resolution = 64;
  cfg.reasoning.iter_num = 3;

  const SyntheticSample sample = make_sample(64, MaskBand::k30to40, seed);
  std::vector<std::vector<std::uint8_t>> weight_files, image_files;
  for (int run = 0; run < 2; ++run) {
    NetworkGraph<float> net = build<float>(cfg, seed);
    const std::string wpath = (fs::path(scratch_dir) / ("weights" + std::to_string(run) + ".rfrw")).string();
    const std::string ipath = (fs::path(scratch_dir) / ("composite" + std::to_string(run) + ".ppm")).string();
    save_weights(net.params(), wpath);
    write_pnm(ipath, net.infer(sample.masked, sample.mask).composite);
    weight_files.push_back(read_file(wpath));
    image_files.push_back(read_file(ipath));
  }
  out.expect(weight_files[0] == weight_files[1],
             "identical seed and config give identical weight files (" + std::to_string(weight_files[0].size()) + " bytes)");
  out.expect(image_files[0] == image_files[1], "identical runs give identical output images");

  NetworkGraph<float> source = build<float>(cfg, seed);
  NetworkGraph<float> other = build<float>(cfg, seed + 1);
  load_weights(other.params(), (fs::path(scratch_dir) / "weights0.rfrw").string());
  bool same = true;
  for (const auto& [name, e] : source.params().params()) same = same && bit_equal(e.value, other.params().entry(name).value);
  for (const auto& [name, b] : source.params().buffers()) same = same && bit_equal(b, other.params().buffer(name));
  out.expect(same && serialize_weights(other.params()) == weight_files[0], "weight save/load round trip is bit-exact");

  std::vector<std::uint8_t> corrupt = weight_files[0];
  corrupt[0] = 'X';
  bool rejected = false;
  try {
    deserialize_weights(other.params(), corrupt);
  } catch (const FormatError&) {
    rejected = true;
  }
  out.expect(rejected, "corrupted magic is rejected");

  const std::string ppm = (fs::path(scratch_dir) / "roundtrip.ppm").string();
  const std::string pgm = (fs::path(scratch_dir) / "roundtrip.pgm").string();
  write_pnm(ppm, sample.gt);
  Tensor<float> mask_img = sample.mask;
  write_pnm(pgm, mask_img);
  const auto ppm_bytes = read_file(ppm), pgm_bytes = read_file(pgm);
  const Tensor<float> ppm_img = read_pnm(ppm), pgm_img = read_pnm(pgm);
  out.expect(encode_pnm(ppm_img) == ppm_bytes && encode_pnm(pgm_img) == pgm_bytes,
             "PPM and PGM read/write reproduce the file bytes");
  out.expect(bit_equal(decode_pnm(encode_pnm(ppm_img)), ppm_img) && bit_equal(pgm_img, sample.mask),
             "decoded 8-bit images survive encode/decode bit for bit");
  return out;
}

// ---------------------------------------------------------------------------

CheckResult depth_knob(std::uint64_t seed) {
  CheckResult out{"depth knob"};
  constexpr std::size_t kSide = 128;
  const SyntheticSample sample = make_sample(kSide, MaskBand::k30to40, seed);
  std::vector<std::size_t> peaks;
  std::string trace;
  for (std::size_t depth : {1, 2, 3}) {
    NetConfig cfg;
    cfg.resolution = kSide;
    cfg.downsample_depth = depth;
    cfg.reasoning.attention = false;
    NetworkGraph<float> net = build<float>(cfg, seed);
    const std::size_t before = memory::live_bytes();
    memory::reset_peak();
    { const auto res = net.infer(sample.masked, sample.mask); }
    peaks.push_back(memory::peak_bytes() - before);
    trace += (depth == 1 ? "" : " > ") + std::to_string(peaks.back() / 1024) + " KiB";
  }
  out.expect(peaks[0] > peaks[1] && peaks[1] > peaks[2],
             "peak activation memory at " + std::to_string(kSide) + "x" + std::to_string(kSide) +
                 " for depth 1, 2, 3: " + trace);
  return out;
}

}  // namespace rfr::checks
