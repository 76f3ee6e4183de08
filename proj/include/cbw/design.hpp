#ifndef CBW_DESIGN_HPP
#define CBW_DESIGN_HPP

#include "cbw/common.hpp"

#include <span>
#include <string>
#include <vector>

namespace cbw {

enum class DropReason { Constant, DuplicateOfBinary, Collinear };

inline std::string to_string(DropReason r) {
  switch (r) {
    case DropReason::Constant:
      return "constant";
    case DropReason::DuplicateOfBinary:
      return "duplicate-of-binary";
    case DropReason::Collinear:
      return "collinear";
  }
  return "?";
}

/// Provenance of a design column: source^power, or source * partner for an
/// optional pairwise interaction.
struct ColumnInfo {
  Index source = 0;
  int power = 1;
  Index partner = -1;

  std::string label() const {
    std::string s = "x" + std::to_string(source + 1);
    if (partner >= 0) return s + "*x" + std::to_string(partner + 1);
    if (power > 1) s += "^" + std::to_string(power);
    return s;
  }
};

struct DroppedColumn {
  ColumnInfo column;
  DropReason reason;
};

struct ColumnScaling {
  double center = 0.0;
  double scale = 1.0;
};

/// Which rows define the centering and scaling of a standardized design.
enum class Reference { AllUnits, TreatedUnits };

inline Reference default_reference(Estimand e) {
  return e == Estimand::ATT ? Reference::TreatedUnits : Reference::AllUnits;
}

struct DesignMatrix {
  Matrix values;
  std::vector<ColumnInfo> columns;
  /// Empty until standardize() runs; maps raw -> stored via (raw - center) / scale.
  std::vector<ColumnScaling> standardization;
  std::vector<DroppedColumn> dropped;

  Index rows() const { return values.rows(); }
  Index cols() const { return values.cols(); }
  bool standardized() const { return !standardization.empty(); }
};

struct ExpansionOptions {
  /// Adds x_i * x_j for i < j after the pure powers.
  bool interactions = false;
  /// Columns whose |Pearson correlation| with a retained column exceeds
  /// 1 - collinearity_tol are dropped.
  double collinearity_tol = 1e-10;
};

namespace detail {

inline bool is_constant(const Vector& v) { return v.size() == 0 || v.maxCoeff() == v.minCoeff(); }

inline double abs_correlation(const Vector& a, const Vector& b) {
  const Vector ca = a.array() - a.mean();
  const Vector cb = b.array() - b.mean();
  const double na = ca.norm();
  const double nb = cb.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::abs(ca.dot(cb)) / (na * nb);
}

}  // namespace detail

/// Moment expansion of `x` (n x k). Columns are emitted in power blocks:
/// every x first, then every x^2 (m >= 2), then every x^3 (m = 3), so the
/// expansion at order m is a prefix of the expansion at order m + 1.
/// Constant columns and duplicates (b^2 = b for binary b) are moved to
/// `dropped`; earlier (lower-power) columns win.
///
/// `source_ids` relabels the provenance of each input column; defaults to 0..k-1.
inline DesignMatrix expand_moments(const Matrix& x, int m, ExpansionOptions opts = {},
                                   std::span<const Index> source_ids = {}) {
  if (m < 1 || m > 3) throw ConfigError("moment order must be 1, 2 or 3");
  if (x.rows() == 0 || x.cols() == 0) throw DataError("expand_moments: empty input");
  if (!source_ids.empty() && static_cast<Index>(source_ids.size()) != x.cols()) {
    throw DataError("expand_moments: source_ids length does not match columns");
  }
  auto source = [&](Index j) { return source_ids.empty() ? j : source_ids[static_cast<std::size_t>(j)]; };

  std::vector<Vector> candidates;
  std::vector<ColumnInfo> info;
  for (int power = 1; power <= m; ++power) {
    for (Index j = 0; j < x.cols(); ++j) {
      candidates.emplace_back(x.col(j).array().pow(power));
      info.push_back({source(j), power, -1});
    }
  }
  if (opts.interactions) {
    for (Index i = 0; i < x.cols(); ++i) {
      for (Index j = i + 1; j < x.cols(); ++j) {
        candidates.emplace_back(x.col(i).cwiseProduct(x.col(j)));
        info.push_back({source(i), 1, source(j)});
      }
    }
  }

  const Index n = x.rows();
  // With n <= q + 1 rows every set of columns is trivially collinear in
  // sample, so only exact duplicates and constants are pruned there.
  const bool check_collinear = n > static_cast<Index>(candidates.size()) + 1;

  DesignMatrix d;
  std::vector<Vector> kept;
  std::vector<Vector> basis;  // orthonormal basis of the centered kept columns
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    const Vector& v = candidates[c];
    if (detail::is_constant(v)) {
      d.dropped.push_back({info[c], DropReason::Constant});
      continue;
    }
    bool drop = false;
    DropReason reason = DropReason::Collinear;
    for (const Vector& k : kept) {
      if (k == v) {
        drop = true;
        reason = DropReason::DuplicateOfBinary;
        break;
      }
      if (check_collinear && detail::abs_correlation(k, v) > 1.0 - opts.collinearity_tol) {
        drop = true;
        break;
      }
    }
    Vector resid;
    if (!drop && check_collinear) {
      const Vector centered = v.array() - v.mean();
      resid = centered;
      for (int pass = 0; pass < 2; ++pass) {
        for (const Vector& b : basis) resid -= b.dot(resid) * b;
      }
      if (resid.norm() <= 1e-9 * centered.norm()) drop = true;
    }
    if (drop) {
      d.dropped.push_back({info[c], reason});
      continue;
    }
    kept.push_back(v);
    d.columns.push_back(info[c]);
    if (check_collinear) basis.push_back(resid / resid.norm());
  }

  d.values.resize(n, static_cast<Index>(kept.size()));
  for (std::size_t c = 0; c < kept.size(); ++c) d.values.col(static_cast<Index>(c)) = kept[c];
  return d;
}

/// Centers and scales each column by the mean and sample standard deviation
/// (n - 1 denominator) over the reference rows. Composes with any existing
/// standardization so destandardize() always recovers the raw columns.
inline DesignMatrix standardize(const DesignMatrix& d, Reference ref, const Treatment& t) {
  if (ref == Reference::TreatedUnits && t.size() != d.rows()) {
    throw DataError("standardize: treatment length does not match design rows");
  }
  std::vector<Index> rows;
  for (Index i = 0; i < d.rows(); ++i) {
    if (ref == Reference::AllUnits || t[i] == 1) rows.push_back(i);
  }
  if (rows.size() < 2) throw DegenerateColumnError("standardize: fewer than two reference rows");

  DesignMatrix out = d;
  out.standardization.assign(static_cast<std::size_t>(d.cols()), ColumnScaling{});
  const double nr = static_cast<double>(rows.size());
  for (Index j = 0; j < d.cols(); ++j) {
    double mean = 0.0;
    for (Index i : rows) mean += d.values(i, j);
    mean /= nr;
    double ss = 0.0;
    for (Index i : rows) ss += (d.values(i, j) - mean) * (d.values(i, j) - mean);
    const double sd = std::sqrt(ss / (nr - 1.0));
    if (!(sd > 0.0)) {
      throw DegenerateColumnError("standardize: column " + std::to_string(j) + " (" +
                                  d.columns[static_cast<std::size_t>(j)].label() +
                                  ") is constant over the reference set");
    }
    out.values.col(j) = (d.values.col(j).array() - mean) / sd;
    const ColumnScaling prev = d.standardized() ? d.standardization[static_cast<std::size_t>(j)] : ColumnScaling{};
    out.standardization[static_cast<std::size_t>(j)] = {prev.center + prev.scale * mean, prev.scale * sd};
  }
  return out;
}

inline DesignMatrix standardize(const DesignMatrix& d) { return standardize(d, Reference::AllUnits, Treatment{}); }

/// Raw-scale values of a (possibly standardized) design.
inline Matrix destandardize(const DesignMatrix& d) {
  if (!d.standardized()) return d.values;
  Matrix raw(d.rows(), d.cols());
  for (Index j = 0; j < d.cols(); ++j) {
    const ColumnScaling s = d.standardization[static_cast<std::size_t>(j)];
    raw.col(j) = d.values.col(j).array() * s.scale + s.center;
  }
  return raw;
}

/// Prepends a column of ones.
inline Matrix with_intercept(const Matrix& x) {
  Matrix z(x.rows(), x.cols() + 1);
  z.col(0).setOnes();
  z.rightCols(x.cols()) = x;
  return z;
}

}  // namespace cbw

#endif  // CBW_DESIGN_HPP
