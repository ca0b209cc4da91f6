#pragma once

// Observed-data model: validated selection samples, the identified
// selection primitives they imply, and the bound result record shared by
// every estimator.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "smbounds/error.hpp"

namespace smb {

/// One unit as read from data. `y` is only meaningful when s == 1.
struct RawRecord {
  std::optional<double> y;
  int s = 0;
  int d = 0;
  std::optional<std::string> w;
};

struct Record {
  std::optional<double> y;  // absent whenever s == 0
  bool s = false;
  bool d = false;
  std::optional<std::string> w;
};

/// Counts of the four (d, s) cells, indexed [d][s].
struct CellCounts {
  std::array<std::array<std::size_t, 2>, 2> n{};

  std::size_t operator()(int d, int s) const { return n[d][s]; }
  std::size_t arm(int d) const { return n[d][0] + n[d][1]; }
  std::size_t total() const { return arm(0) + arm(1); }
};

/// Validated observed sample. Immutable once built; `flipped` marks a sample
/// whose arms are exchanged for selection-primitive and trimming purposes
/// (monotonicity running from control to treatment), see flip_direction().
class SelectionSample {
 public:
  SelectionSample() = default;
  SelectionSample(std::vector<Record> records, bool flipped = false)
      : records_(std::move(records)), flipped_(flipped) {
    for (const auto& r : records_) ++counts_.n[r.d][r.s];
  }

  const std::vector<Record>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool flipped() const { return flipped_; }

  /// Cell counts on the stored (unflipped) labels.
  const CellCounts& counts() const { return counts_; }

  /// Arm label used for trimming: the stored label, exchanged when flipped.
  bool trimming_arm(const Record& r) const { return flipped_ ? !r.d : r.d; }

  /// Cell counts on the trimming labels.
  CellCounts trimming_counts() const {
    if (!flipped_) return counts_;
    CellCounts c;
    c.n[0] = counts_.n[1];
    c.n[1] = counts_.n[0];
    return c;
  }

  /// Observed outcomes in trimming arm `d` (selected units only), in record order.
  std::vector<double> outcomes(bool d) const {
    std::vector<double> out;
    out.reserve(trimming_counts()(d, 1));
    for (const auto& r : records_) {
      if (r.s && trimming_arm(r) == d) out.push_back(*r.y);
    }
    return out;
  }

  /// Distinct covariate labels in first-appearance order.
  std::vector<std::string> covariate_cells() const {
    std::vector<std::string> cells;
    for (const auto& r : records_) {
      if (!r.w) continue;
      bool seen = false;
      for (const auto& c : cells) seen = seen || c == *r.w;
      if (!seen) cells.push_back(*r.w);
    }
    return cells;
  }

 private:
  std::vector<Record> records_;
  CellCounts counts_;
  bool flipped_ = false;
};

/// Throws EmptyCell unless both selected cells (d=1,s=1) and (d=0,s=1) are
/// populated in trimming labels. `context` names the covariate cell, if any.
inline void require_selected_cells(const SelectionSample& sample, std::string_view context = {}) {
  const auto c = sample.trimming_counts();
  const std::string where = context.empty() ? "" : " in covariate cell '" + std::string(context) + "'";
  if (c(1, 1) == 0) throw Error(ErrorCode::EmptyCell, "no records with (d=1, s=1)" + where);
  if (c(0, 1) == 0) throw Error(ErrorCode::EmptyCell, "no records with (d=0, s=1)" + where);
}

inline SelectionSample validate_sample(const std::vector<RawRecord>& raw) {
  if (raw.empty()) throw Error(ErrorCode::EmptyInput, "no records");
  std::vector<Record> records;
  records.reserve(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const auto& r = raw[i];
    if (r.s != 0 && r.s != 1) {
      throw Error(ErrorCode::BadFlag, "record " + std::to_string(i) + ": s=" + std::to_string(r.s));
    }
    if (r.d != 0 && r.d != 1) {
      throw Error(ErrorCode::BadFlag, "record " + std::to_string(i) + ": d=" + std::to_string(r.d));
    }
    Record rec;
    rec.s = r.s == 1;
    rec.d = r.d == 1;
    rec.w = r.w;
    if (rec.s) {
      if (!r.y || !std::isfinite(*r.y)) {
        throw Error(ErrorCode::MissingOutcome,
                    "record " + std::to_string(i) + " is selected but has no outcome");
      }
      rec.y = r.y;
    }
    records.push_back(std::move(rec));
  }
  SelectionSample sample(std::move(records));
  require_selected_cells(sample);
  return sample;
}

/// Selection primitives behind the trimming bounds.
struct IdentifiedPrimitives {
  double alpha0 = 0.0;   // P(S=1 | D=0)
  double p_s1_d1 = 0.0;  // P(S=1 | D=1)
  double q0 = 0.0;       // alpha0 / p_s1_d1, stored unclamped
  double theta_F = 0.0;  // 1 + 1/q0 - 1/alpha0
  double theta_L = 1.0;
  double theta = 1.0;    // max(theta_L, theta_F)
  double eta0 = 0.0;     // E[Y | D=0, S=1]
  double p_d1 = 0.0;     // P(D=1)

  double p_s1_and_d1() const { return p_s1_d1 * p_d1; }
  double p_s1_and_d0() const { return alpha0 * (1.0 - p_d1); }
};

/// Fills q0, theta_F and theta from the three selection probabilities.
inline IdentifiedPrimitives make_primitives(double alpha0, double p_s1_d1, double p_d1,
                                            double eta0, double theta_L) {
  if (!(theta_L > 0.0 && theta_L <= 1.0)) {
    throw Error(ErrorCode::BadArgument, "theta_L must lie in (0, 1]");
  }
  if (p_s1_d1 <= 0.0) throw Error(ErrorCode::DivideByZero, "P(S=1|D=1) = 0");
  if (alpha0 <= 0.0) throw Error(ErrorCode::DivideByZero, "P(S=1|D=0) = 0");
  IdentifiedPrimitives p;
  p.alpha0 = alpha0;
  p.p_s1_d1 = p_s1_d1;
  p.p_d1 = p_d1;
  p.eta0 = eta0;
  p.q0 = alpha0 / p_s1_d1;
  p.theta_F = 1.0 + 1.0 / p.q0 - 1.0 / alpha0;
  p.theta_L = theta_L;
  p.theta = std::max(theta_L, p.theta_F);
  return p;
}

inline IdentifiedPrimitives identified_primitives(const SelectionSample& sample, double theta_L) {
  const auto c = sample.trimming_counts();
  if (c.arm(1) == 0 || c(1, 1) == 0) throw Error(ErrorCode::DivideByZero, "P(S=1|D=1) = 0");
  if (c.arm(0) == 0 || c(0, 1) == 0) throw Error(ErrorCode::DivideByZero, "P(S=1|D=0) = 0");
  const double alpha0 = static_cast<double>(c(0, 1)) / static_cast<double>(c.arm(0));
  const double p1 = static_cast<double>(c(1, 1)) / static_cast<double>(c.arm(1));
  const double pd1 = static_cast<double>(c.arm(1)) / static_cast<double>(c.total());
  double sum = 0.0;
  for (const auto& r : sample.records()) {
    if (r.s && !sample.trimming_arm(r)) sum += *r.y;
  }
  const double eta0 = sum / static_cast<double>(c(0, 1));
  return make_primitives(alpha0, p1, pd1, eta0, theta_L);
}

enum class Method { lee, stochastic, stochastic_symmetry, unknown_max, covariate_adjusted, mte };

constexpr std::string_view to_string(Method m) {
  switch (m) {
    case Method::lee: return "lee";
    case Method::stochastic: return "stochastic";
    case Method::stochastic_symmetry: return "stochastic_symmetry";
    case Method::unknown_max: return "unknown_max";
    case Method::covariate_adjusted: return "covariate_adjusted";
    case Method::mte: return "mte";
  }
  return "unknown";
}

struct ConfidenceInterval {
  double lo = 0.0;
  double hi = 0.0;
  double level = 0.95;
};

struct BoundsResult {
  double lower = 0.0;
  double upper = 0.0;
  std::optional<double> se_lower;
  std::optional<double> se_upper;
  std::optional<ConfidenceInterval> ci;
  Method method = Method::lee;
  bool symmetry = false;
  double theta_used = 1.0;
  double trim_fraction = 0.0;  // share of the treated-selected law kept (per tail under symmetry)
  bool flipped = false;        // monotonicity direction runs from treatment to control
  std::vector<std::string> warnings;
};

/// Quantile level with the left-continuous (infimum) convention.
struct QuantileSpec {
  double r = 0.5;

  explicit QuantileSpec(double level) : r(level) {
    if (!(level >= 0.0 && level <= 1.0)) {
      throw Error(ErrorCode::BadArgument, "quantile level outside [0, 1]");
    }
  }
};

}  // namespace smb
