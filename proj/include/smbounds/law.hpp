#pragma once

// Univariate outcome laws used as population oracles. A law knows its CDF,
// quantile (left-continuous inverse) and its trimmed moments: the mean and
// variance of the lowest or highest `p` share of its mass. Continuous laws
// obtain trimmed moments by quadrature; discrete laws split the boundary
// atom so that exactly `p` of the mass is kept.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "smbounds/error.hpp"
#include "smbounds/numeric.hpp"
#include "smbounds/rng.hpp"

namespace smb {

/// Moments of a trimmed law: the boundary quantile, the kept mass and the
/// conditional mean and variance of the kept part.
struct TrimmedMoments {
  double quantile = 0.0;
  double mass = 0.0;
  double mean = 0.0;
  double variance = 0.0;
};

enum class Tail { lower, upper };

/// Number of standard deviations at which unbounded families are truncated
/// for quadrature.
inline constexpr double kSupportSds = 12.0;

class LawImpl {
 public:
  virtual ~LawImpl() = default;

  virtual double cdf(double y) const = 0;
  virtual double pdf(double y) const = 0;
  virtual double mean() const = 0;
  /// Interval carrying all but a negligible amount of mass.
  virtual std::pair<double, double> support() const = 0;
  virtual bool discrete() const { return false; }
  /// Points where the density changes quickly; used to split quadrature.
  virtual std::vector<double> breakpoints() const { return {}; }
  virtual double sample(CounterRng& rng) const { return quantile(rng.uniform()); }

  virtual double quantile(double p) const {
    auto [lo, hi] = support();
    if (p <= 0.0) return lo;
    if (p >= 1.0) return hi;
    while (cdf(lo) >= p) lo -= (hi - lo);
    while (cdf(hi) < p) hi += (hi - lo);
    return invert_cdf([this](double t) { return cdf(t); }, p, lo, hi);
  }

  virtual double variance() const {
    const double m = mean();
    auto [lo, hi] = support();
    const auto bp = breakpoints();
    return integrate([&](double t) { return (t - m) * (t - m) * pdf(t); }, lo, hi, bp);
  }

  virtual TrimmedMoments trimmed(double p, Tail tail) const {
    p = clamp01(p);
    auto [lo, hi] = support();
    const auto bp = breakpoints();
    TrimmedMoments out;
    if (p <= 0.0) {
      out.quantile = tail == Tail::lower ? quantile(0.0) : quantile(1.0);
      out.mean = out.quantile;
      return out;
    }
    if (p >= 1.0) {
      out.quantile = tail == Tail::lower ? hi : lo;
      out.mass = 1.0;
      out.mean = mean();
      out.variance = variance();
      return out;
    }
    const double y = tail == Tail::lower ? quantile(p) : quantile(1.0 - p);
    out.quantile = y;
    const double a = tail == Tail::lower ? lo : std::max(lo, y);
    const double b = tail == Tail::lower ? std::min(hi, y) : hi;
    const double mass = tail == Tail::lower ? cdf(y) : 1.0 - cdf(y);
    out.mass = mass;
    if (mass <= 0.0) {
      out.mean = y;
      return out;
    }
    // Moments about the boundary keep the variance well conditioned.
    const double m1 = integrate([&](double t) { return (t - y) * pdf(t); }, a, b, bp);
    const double m2 = integrate([&](double t) { return (t - y) * (t - y) * pdf(t); }, a, b, bp);
    const double shift = m1 / mass;
    out.mean = y + shift;
    out.variance = std::max(0.0, m2 / mass - shift * shift);
    return out;
  }
};

/// Value-semantic handle to an immutable law.
class OutcomeLaw {
 public:
  OutcomeLaw() = default;
  explicit OutcomeLaw(std::shared_ptr<const LawImpl> impl) : impl_(std::move(impl)) {}

  double cdf(double y) const { return impl_->cdf(y); }
  double pdf(double y) const { return impl_->pdf(y); }
  double quantile(double p) const { return impl_->quantile(p); }
  double mean() const { return impl_->mean(); }
  double variance() const { return impl_->variance(); }
  std::pair<double, double> support() const { return impl_->support(); }
  std::vector<double> breakpoints() const { return impl_->breakpoints(); }
  bool discrete() const { return impl_->discrete(); }
  double sample(CounterRng& rng) const { return impl_->sample(rng); }
  TrimmedMoments trimmed(double p, Tail tail) const { return impl_->trimmed(p, tail); }

  /// E[Y | Y <= y_p] for the lowest p share of mass (left-continuous y_p).
  double lower_trimmed_mean(double p) const { return trimmed(p, Tail::lower).mean; }
  /// E[Y | Y >= y_{1-p}] for the highest p share of mass.
  double upper_trimmed_mean(double p) const { return trimmed(p, Tail::upper).mean; }

  explicit operator bool() const { return static_cast<bool>(impl_); }
  const LawImpl* impl() const { return impl_.get(); }

 private:
  std::shared_ptr<const LawImpl> impl_;
};

class NormalLaw final : public LawImpl {
 public:
  NormalLaw(double mean, double sd) : mean_(mean), sd_(sd) {
    if (!(sd > 0.0) || !std::isfinite(mean)) {
      throw Error(ErrorCode::BadArgument, "normal law needs finite mean and sd > 0");
    }
  }
  double cdf(double y) const override { return normal_cdf((y - mean_) / sd_); }
  double pdf(double y) const override { return normal_pdf((y - mean_) / sd_) / sd_; }
  double quantile(double p) const override { return mean_ + sd_ * normal_quantile(p); }
  double mean() const override { return mean_; }
  double variance() const override { return sd_ * sd_; }
  std::pair<double, double> support() const override {
    return {mean_ - kSupportSds * sd_, mean_ + kSupportSds * sd_};
  }
  std::vector<double> breakpoints() const override {
    return {mean_ - 3 * sd_, mean_ - sd_, mean_, mean_ + sd_, mean_ + 3 * sd_};
  }
  double sample(CounterRng& rng) const override { return mean_ + sd_ * rng.normal(); }

  double sd() const { return sd_; }

 private:
  double mean_;
  double sd_;
};

/// Finite mixture of continuous laws.
class MixtureLaw final : public LawImpl {
 public:
  MixtureLaw(std::vector<double> weights, std::vector<OutcomeLaw> parts)
      : weights_(std::move(weights)), parts_(std::move(parts)) {
    if (weights_.size() != parts_.size() || parts_.empty()) {
      throw Error(ErrorCode::BadArgument, "mixture needs matching, nonempty weights and parts");
    }
    double total = 0.0;
    for (double w : weights_) {
      if (!(w >= 0.0)) throw Error(ErrorCode::BadArgument, "mixture weight must be >= 0");
      total += w;
    }
    if (!(total > 0.0)) throw Error(ErrorCode::BadArgument, "mixture weights sum to zero");
    for (double& w : weights_) w /= total;
    for (const auto& part : parts_) {
      if (part.discrete()) {
        throw Error(ErrorCode::BadArgument, "continuous mixture cannot hold a discrete part");
      }
    }
  }

  double cdf(double y) const override {
    double s = 0.0;
    for (std::size_t k = 0; k < parts_.size(); ++k) {
      if (weights_[k] > 0) s += weights_[k] * parts_[k].cdf(y);
    }
    return std::min(s, 1.0);
  }
  double pdf(double y) const override {
    double s = 0.0;
    for (std::size_t k = 0; k < parts_.size(); ++k) {
      if (weights_[k] > 0) s += weights_[k] * parts_[k].pdf(y);
    }
    return s;
  }
  double mean() const override {
    double s = 0.0;
    for (std::size_t k = 0; k < parts_.size(); ++k) {
      if (weights_[k] > 0) s += weights_[k] * parts_[k].mean();
    }
    return s;
  }
  double quantile(double p) const override {
    if (p <= 0.0 || p >= 1.0) {
      double edge = p <= 0.0 ? kInf : -kInf;
      for (std::size_t k = 0; k < parts_.size(); ++k) {
        if (weights_[k] <= 0) continue;
        const double q = parts_[k].quantile(p <= 0.0 ? 0.0 : 1.0);
        edge = p <= 0.0 ? std::min(edge, q) : std::max(edge, q);
      }
      return edge;
    }
    return LawImpl::quantile(p);
  }
  std::pair<double, double> support() const override {
    double lo = kInf;
    double hi = -kInf;
    for (std::size_t k = 0; k < parts_.size(); ++k) {
      if (weights_[k] <= 0) continue;
      auto [a, b] = parts_[k].support();
      lo = std::min(lo, a);
      hi = std::max(hi, b);
    }
    return {lo, hi};
  }
  std::vector<double> breakpoints() const override {
    std::vector<double> out;
    for (std::size_t k = 0; k < parts_.size(); ++k) {
      if (weights_[k] <= 0) continue;
      auto bp = parts_[k].breakpoints();
      out.insert(out.end(), bp.begin(), bp.end());
    }
    return out;
  }
  double sample(CounterRng& rng) const override {
    double u = rng.uniform();
    std::size_t k = 0;
    for (; k + 1 < parts_.size(); ++k) {
      if (u < weights_[k]) break;
      u -= weights_[k];
    }
    return parts_[k].sample(rng);
  }

  const std::vector<double>& weights() const { return weights_; }
  const std::vector<OutcomeLaw>& parts() const { return parts_; }

 private:
  std::vector<double> weights_;
  std::vector<OutcomeLaw> parts_;
};

/// Continuous law given by callables. `quantile` is optional and falls back
/// to bisection on the CDF.
class GenericLaw final : public LawImpl {
 public:
  struct Spec {
    std::function<double(double)> cdf;
    std::function<double(double)> pdf;
    std::function<double(double)> quantile;
    double support_lo = 0.0;
    double support_hi = 0.0;
    std::vector<double> breakpoints;
    std::optional<double> mean;
  };

  explicit GenericLaw(Spec spec) : spec_(std::move(spec)) {
    if (!spec_.cdf || !spec_.pdf || !(spec_.support_hi > spec_.support_lo)) {
      throw Error(ErrorCode::BadArgument, "generic law needs cdf, pdf and a support interval");
    }
    if (!spec_.mean) {
      spec_.mean = integrate([this](double t) { return t * spec_.pdf(t); }, spec_.support_lo,
                             spec_.support_hi, spec_.breakpoints);
    }
  }

  double cdf(double y) const override { return spec_.cdf(y); }
  double pdf(double y) const override { return spec_.pdf(y); }
  double mean() const override { return *spec_.mean; }
  double quantile(double p) const override {
    if (spec_.quantile) return spec_.quantile(p);
    if (p <= 0.0) return spec_.support_lo;
    if (p >= 1.0) return spec_.support_hi;
    return LawImpl::quantile(p);
  }
  std::pair<double, double> support() const override {
    return {spec_.support_lo, spec_.support_hi};
  }
  std::vector<double> breakpoints() const override { return spec_.breakpoints; }

 private:
  Spec spec_;
};

/// Discrete law on finitely many atoms. Trimming splits the boundary atom.
class AtomLaw final : public LawImpl {
 public:
  AtomLaw(std::vector<double> values, std::vector<double> weights) {
    if (values.empty() || values.size() != weights.size()) {
      throw Error(ErrorCode::BadArgument, "atom law needs matching, nonempty values and weights");
    }
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    double total = 0.0;
    for (double w : weights) {
      if (!(w >= 0.0)) throw Error(ErrorCode::BadArgument, "atom weight must be >= 0");
      total += w;
    }
    if (!(total > 0.0)) throw Error(ErrorCode::BadArgument, "atom weights sum to zero");
    for (std::size_t i : order) {
      if (weights[i] <= 0.0) continue;
      values_.push_back(values[i]);
      weights_.push_back(weights[i] / total);
    }
  }

  double cdf(double y) const override {
    double s = 0.0;
    for (std::size_t i = 0; i < values_.size() && values_[i] <= y; ++i) s += weights_[i];
    return std::min(s, 1.0);
  }
  double pdf(double) const override { return 0.0; }
  bool discrete() const override { return true; }
  double mean() const override {
    double s = 0.0;
    for (std::size_t i = 0; i < values_.size(); ++i) s += weights_[i] * values_[i];
    return s;
  }
  double variance() const override {
    const double m = mean();
    double s = 0.0;
    for (std::size_t i = 0; i < values_.size(); ++i) {
      s += weights_[i] * (values_[i] - m) * (values_[i] - m);
    }
    return s;
  }
  double quantile(double p) const override {
    if (p <= 0.0) return values_.front();
    double cum = 0.0;
    for (std::size_t i = 0; i < values_.size(); ++i) {
      cum += weights_[i];
      if (cum >= p) return values_[i];
    }
    return values_.back();
  }
  std::pair<double, double> support() const override { return {values_.front(), values_.back()}; }
  double sample(CounterRng& rng) const override { return quantile(rng.uniform()); }

  TrimmedMoments trimmed(double p, Tail tail) const override {
    p = clamp01(p);
    TrimmedMoments out;
    const std::size_t n = values_.size();
    if (p <= 0.0) {
      out.quantile = tail == Tail::lower ? values_.front() : values_.back();
      out.mean = out.quantile;
      return out;
    }
    // Walk inward from the chosen tail, taking whole atoms until the next
    // one would exceed p, then a fraction of that atom.
    double kept = 0.0;
    double sum = 0.0;
    double sumsq = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t i = tail == Tail::lower ? j : n - 1 - j;
      const double take = std::min(weights_[i], p - kept);
      if (take <= 0.0) break;
      kept += take;
      sum += take * values_[i];
      sumsq += take * values_[i] * values_[i];
      out.quantile = values_[i];
      if (kept >= p) break;
    }
    out.mass = kept;
    out.mean = sum / kept;
    out.variance = std::max(0.0, sumsq / kept - out.mean * out.mean);
    return out;
  }

  const std::vector<double>& values() const { return values_; }
  const std::vector<double>& weights() const { return weights_; }

 private:
  std::vector<double> values_;
  std::vector<double> weights_;
};

inline OutcomeLaw normal_law(double mean, double sd) {
  return OutcomeLaw(std::make_shared<NormalLaw>(mean, sd));
}

/// Mixture of laws; all-discrete inputs merge into a single atom law.
inline OutcomeLaw mixture_law(std::vector<double> weights, std::vector<OutcomeLaw> parts) {
  bool all_discrete = !parts.empty();
  for (const auto& part : parts) all_discrete = all_discrete && part.discrete();
  if (all_discrete) {
    double total = 0.0;
    for (double w : weights) total += w;
    std::vector<double> values;
    std::vector<double> masses;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const auto* atoms = static_cast<const AtomLaw*>(parts[k].impl());
      for (std::size_t i = 0; i < atoms->values().size(); ++i) {
        values.push_back(atoms->values()[i]);
        masses.push_back(weights[k] / total * atoms->weights()[i]);
      }
    }
    return OutcomeLaw(std::make_shared<AtomLaw>(std::move(values), std::move(masses)));
  }
  return OutcomeLaw(std::make_shared<MixtureLaw>(std::move(weights), std::move(parts)));
}

inline OutcomeLaw normal_mixture_law(const std::vector<double>& weights,
                                     const std::vector<double>& means,
                                     const std::vector<double>& sds) {
  std::vector<OutcomeLaw> parts;
  for (std::size_t k = 0; k < means.size(); ++k) parts.push_back(normal_law(means[k], sds[k]));
  return mixture_law(weights, std::move(parts));
}

inline OutcomeLaw atom_law(std::vector<double> values, std::vector<double> weights) {
  return OutcomeLaw(std::make_shared<AtomLaw>(std::move(values), std::move(weights)));
}

inline OutcomeLaw generic_law(GenericLaw::Spec spec) {
  return OutcomeLaw(std::make_shared<GenericLaw>(std::move(spec)));
}

}  // namespace smb
