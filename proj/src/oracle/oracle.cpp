#include "rfr/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace rfr::oracle {

std::string OracleReport::line() const {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%s %s max_abs=%.3e max_rel=%.3e tol=%.1e", pass ? "PASS" : "FAIL",
                case_name.c_str(), max_abs, max_rel, tolerance);
  return buf;
}

OracleReport compare(const std::string& case_name, const Map& actual, const Map& reference,
                     double tolerance) {
  OracleReport r;
  r.case_name = case_name;
  r.tolerance = tolerance;
  if (!(actual.shape() == reference.shape())) {
    r.max_abs = r.max_rel = std::numeric_limits<double>::infinity();
    r.case_name += " (shape " + actual.shape().str() + " vs " + reference.shape().str() + ")";
    return r;
  }
  double scale = 0;
  for (std::size_t i = 0; i < actual.numel(); ++i) {
    const double d = std::abs(actual[i] - reference[i]);
    r.max_abs = std::isnan(d) ? std::numeric_limits<double>::infinity() : std::max(r.max_abs, d);
    scale = std::max(scale, std::abs(reference[i]));
  }
  r.max_rel = r.max_abs / std::max(scale, 1e-300);
  if (r.max_abs == 0) r.max_rel = 0;
  r.pass = r.max_rel <= tolerance;
  return r;
}

Map naive_conv2d(const Map& x, const Map& weight, const Map& bias, std::size_t stride,
                 std::size_t padding) {
  const Shape s = x.shape();
  const Shape ws = weight.shape();
  const std::size_t k = ws.h;
  const std::size_t ho = (s.h + 2 * padding - k) / stride + 1;
  const std::size_t wo = (s.w + 2 * padding - k) / stride + 1;
  Map out(Shape{s.n, ws.n, ho, wo});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t o = 0; o < ws.n; ++o)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          double acc = bias.empty() ? 0.0 : bias[o];
          for (std::size_t i = 0; i < s.c; ++i)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const long iy = long(oy * stride + ky) - long(padding);
                const long ix = long(ox * stride + kx) - long(padding);
                if (iy < 0 || ix < 0 || iy >= long(s.h) || ix >= long(s.w)) continue;
                acc += weight.at(o, i, ky, kx) * x.at(n, i, iy, ix);
              }
          out.at(n, o, oy, ox) = acc;
        }
  return out;
}

Map naive_conv_transpose2d(const Map& x, const Map& weight, const Map& bias, std::size_t stride,
                           std::size_t padding) {
  const Shape s = x.shape();
  const Shape ws = weight.shape();
  const std::size_t k = ws.h;
  const std::size_t ho = (s.h - 1) * stride + k - 2 * padding;
  const std::size_t wo = (s.w - 1) * stride + k - 2 * padding;
  Map out(Shape{s.n, ws.c, ho, wo});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t i = 0; i < s.c; ++i)
      for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t xx = 0; xx < s.w; ++xx)
          for (std::size_t o = 0; o < ws.c; ++o)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const long oy = long(y * stride + ky) - long(padding);
                const long ox = long(xx * stride + kx) - long(padding);
                if (oy < 0 || ox < 0 || oy >= long(ho) || ox >= long(wo)) continue;
                out.at(n, o, oy, ox) += x.at(n, i, y, xx) * weight.at(i, o, ky, kx);
              }
  if (!bias.empty()) {
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t o = 0; o < ws.c; ++o)
        for (std::size_t p = 0; p < ho * wo; ++p) out.at(n, o, p / wo, p % wo) += bias[o];
  }
  return out;
}

PartialResult naive_partial_conv(const Map& x, const Map& mask, const Map& weight, const Map& bias,
                                 std::size_t stride, std::size_t padding) {
  const Shape s = x.shape();
  const Shape ws = weight.shape();
  const std::size_t k = ws.h;
  const std::size_t ho = (s.h + 2 * padding - k) / stride + 1;
  const std::size_t wo = (s.w + 2 * padding - k) / stride + 1;
  const bool shared = mask.shape().c == 1;
  PartialResult r{Map(Shape{s.n, ws.n, ho, wo}), Map(Shape{s.n, 1, ho, wo})};
  const double full = double(k * k * s.c);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        double msum = 0;
        for (std::size_t i = 0; i < s.c; ++i)
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
              const long iy = long(oy * stride + ky) - long(padding);
              const long ix = long(ox * stride + kx) - long(padding);
              if (iy < 0 || ix < 0 || iy >= long(s.h) || ix >= long(s.w)) continue;
              msum += mask.at(n, shared ? 0 : i, iy, ix);
            }
        if (msum == 0) continue;
        r.mask.at(n, 0, oy, ox) = 1;
        for (std::size_t o = 0; o < ws.n; ++o) {
          double acc = 0;
          for (std::size_t i = 0; i < s.c; ++i)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const long iy = long(oy * stride + ky) - long(padding);
                const long ix = long(ox * stride + kx) - long(padding);
                if (iy < 0 || ix < 0 || iy >= long(s.h) || ix >= long(s.w)) continue;
                acc += weight.at(o, i, ky, kx) * x.at(n, i, iy, ix) *
                       mask.at(n, shared ? 0 : i, iy, ix);
              }
          r.features.at(n, o, oy, ox) = acc * full / msum + (bias.empty() ? 0.0 : bias[o]);
        }
      }
  return r;
}

Map mask_dilation(const Map& mask, std::size_t k, std::size_t times) {
  Map cur = mask;
  const Shape s = mask.shape();
  const long r = long(k / 2);
  for (std::size_t t = 0; t < times; ++t) {
    Map next(s);
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t c = 0; c < s.c; ++c)
        for (long y = 0; y < long(s.h); ++y)
          for (long x = 0; x < long(s.w); ++x) {
            bool any = false;
            for (long dy = -r; dy <= r && !any; ++dy)
              for (long dx = -r; dx <= r && !any; ++dx) {
                const long yy = y + dy, xx = x + dx;
                if (yy < 0 || xx < 0 || yy >= long(s.h) || xx >= long(s.w)) continue;
                any = cur.at(n, c, yy, xx) != 0;
              }
            next.at(n, c, y, x) = any ? 1 : 0;
          }
    cur = next;
  }
  return cur;
}

Map naive_merge(const std::vector<Map>& features, const std::vector<Map>& masks) {
  const Shape s = features.at(0).shape();
  Map out(s);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t x = 0; x < s.w; ++x) {
          double num = 0, den = 0;
          for (std::size_t i = 0; i < features.size(); ++i) {
            const double m = masks[i].at(n, 0, y, x);
            num += features[i].at(n, c, y, x) * m;
            den += m;
          }
          out.at(n, c, y, x) = den == 0 ? 0.0 : num / den;
        }
  return out;
}

AttentionResult naive_attention(const Map& f, const std::optional<AttentionInput>& state,
                                std::size_t side) {
  const Shape s = f.shape();
  const std::size_t hw = s.h * s.w;
  const long r = long(side / 2);
  Map score(Shape{s.n, hw, s.h, s.w});
  Map rebuilt(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    // sim[q][k] over flat query/key indices.
    std::vector<double> norm(hw);
    for (std::size_t p = 0; p < hw; ++p) {
      double acc = 0;
      for (std::size_t c = 0; c < s.c; ++c) acc += f.at(n, c, p / s.w, p % s.w) * f.at(n, c, p / s.w, p % s.w);
      norm[p] = std::max(std::sqrt(acc), 1e-8);
    }
    std::vector<double> sim(hw * hw);
    for (std::size_t q = 0; q < hw; ++q)
      for (std::size_t k = 0; k < hw; ++k) {
        double dot = 0;
        for (std::size_t c = 0; c < s.c; ++c) {
          dot += (f.at(n, c, q / s.w, q % s.w) / norm[q]) * (f.at(n, c, k / s.w, k % s.w) / norm[k]);
        }
        sim[q * hw + k] = dot;
      }
    for (long y = 0; y < long(s.h); ++y)
      for (long x = 0; x < long(s.w); ++x) {
        std::vector<double> smooth(hw, 0.0);
        for (std::size_t k = 0; k < hw; ++k) {
          double acc = 0;
          int count = 0;
          for (long p = -r; p <= r; ++p)
            for (long t = -r; t <= r; ++t) {
              const long yy = y + p, xx = x + t;
              if (yy < 0 || xx < 0 || yy >= long(s.h) || xx >= long(s.w)) continue;
              acc += sim[(std::size_t(yy) * s.w + std::size_t(xx)) * hw + k];
              ++count;
            }
          smooth[k] = acc / count;
        }
        double mx = -std::numeric_limits<double>::infinity();
        for (double v : smooth) mx = std::max(mx, v);
        double z = 0;
        for (double v : smooth) z += std::exp(v - mx);
        const bool blend = state && state->prev_valid.at(n, 0, y, x) == 1;
        const double g = state ? 1.0 / (1.0 + std::exp(-state->lambda_raw)) : 1.0;
        for (std::size_t k = 0; k < hw; ++k) {
          double v = std::exp(smooth[k] - mx) / z;
          if (blend) v = g * v + (1 - g) * state->prev_score.at(n, k, y, x);
          score.at(n, k, y, x) = v;
        }
        for (std::size_t c = 0; c < s.c; ++c) {
          double acc = 0;
          for (std::size_t k = 0; k < hw; ++k) acc += score.at(n, k, y, x) * f.at(n, c, k / s.w, k % s.w);
          rebuilt.at(n, c, y, x) = acc;
        }
      }
  }
  return {score, rebuilt};
}

std::vector<double> finite_diff(const std::function<double()>& f, std::vector<double*> values,
                                double eps) {
  std::vector<double> out;
  out.reserve(values.size());
  for (double* v : values) {
    const double orig = *v;
    *v = orig + eps;
    const double up = f();
    *v = orig - eps;
    const double down = f();
    *v = orig;
    out.push_back(std::isfinite(up) && std::isfinite(down) ? (up - down) / (2 * eps)
                                                           : std::numeric_limits<double>::quiet_NaN());
  }
  return out;
}

double gradient_rel_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

}  // namespace rfr::oracle
