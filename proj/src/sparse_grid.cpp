#include "mleig/sparse_grid.hpp"

#include <sstream>

namespace mleig {

Matrix transform_gaussian_points(const Matrix& rule_points, const Vector& mu, const Matrix& Sigma) {
  Eigen::LLT<Matrix> llt(Sigma);
  if (llt.info() != Eigen::Success) throw DecompositionError("transform_gaussian_points: Sigma is not SPD");
  const Matrix L = llt.matrixL();
  return (rule_points * L.transpose()).rowwise() + mu.transpose();
}

namespace {

std::string to_string(const MultiIndex& index) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < index.size(); ++i) os << (i ? "," : "") << index[i];
  os << ")";
  return os.str();
}

bool admissible(const MultiIndex& cand, const IndexSet& set, const MultiIndex& floors) {
  MultiIndex back = cand;
  for (std::size_t i = 0; i < cand.size(); ++i) {
    if (cand[i] <= floors[i]) continue;
    --back[i];
    const bool present = set.count(back) > 0;
    ++back[i];
    if (!present) return false;
  }
  return true;
}

}  // namespace

bool is_downward_closed(const IndexSet& set, const MultiIndex& floors) {
  for (const auto& index : set) {
    if (index.size() != floors.size()) return false;
    for (std::size_t i = 0; i < index.size(); ++i)
      if (index[i] < floors[i]) return false;
    if (!admissible(index, set, floors)) return false;
  }
  return true;
}

double IndexFunctionCache::operator()(const MultiIndex& index) {
  auto it = values_.find(index);
  if (it != values_.end()) return it->second;
  const double v = U_(index);
  values_.emplace(index, v);
  return v;
}

double mixed_difference(const MultiIndex& index, IndexFunctionCache& U, const MultiIndex& floors) {
  const std::size_t k = index.size();
  std::vector<std::size_t> dirs;
  for (std::size_t i = 0; i < k; ++i)
    if (index[i] > floors[i]) dirs.push_back(i);
  double sum = 0.0;
  const std::size_t combos = std::size_t{1} << dirs.size();
  MultiIndex shifted = index;
  for (std::size_t mask = 0; mask < combos; ++mask) {
    int sign = 1;
    for (std::size_t b = 0; b < dirs.size(); ++b) {
      const bool on = (mask >> b) & 1u;
      shifted[dirs[b]] = index[dirs[b]] - (on ? 1 : 0);
      if (on) sign = -sign;
    }
    sum += sign * U(shifted);
  }
  return sum;
}

std::map<MultiIndex, int> combination_coefficients(const IndexSet& set) {
  std::map<MultiIndex, int> coeffs;
  for (const auto& index : set) {
    // Only forward directions with a member neighbor can contribute.
    std::vector<std::size_t> dirs;
    MultiIndex probe = index;
    for (std::size_t i = 0; i < index.size(); ++i) {
      ++probe[i];
      if (set.count(probe)) dirs.push_back(i);
      --probe[i];
    }
    int c = 0;
    const std::size_t combos = std::size_t{1} << dirs.size();
    for (std::size_t mask = 0; mask < combos; ++mask) {
      int sign = 1;
      probe = index;
      for (std::size_t b = 0; b < dirs.size(); ++b)
        if ((mask >> b) & 1u) {
          ++probe[dirs[b]];
          sign = -sign;
        }
      if (set.count(probe)) c += sign;
    }
    if (c != 0) coeffs.emplace(index, c);
  }
  return coeffs;
}

double combination_estimate(const IndexSet& set, const std::function<double(const MultiIndex&)>& U,
                            const MultiIndex& floors) {
  if (!is_downward_closed(set, floors)) throw StructureError("combination_estimate: index set is not downward closed");
  double sum = 0.0;
  for (const auto& [index, c] : combination_coefficients(set)) sum += c * U(index);
  return sum;
}

AdaptResult adapt_index_set(const std::function<Profit(const MultiIndex&)>& profit, const MultiIndex& root,
                            const AdaptOptions& options) {
  if (!(options.tol > 0.0)) throw ConfigError("adapt_index_set: tol must be > 0");
  const MultiIndex& floors = root;
  AdaptResult r;

  auto evaluate = [&](const MultiIndex& index) {
    const Profit p = profit(index);
    r.profits[index] = p;
    if (!p.estimated) r.work += p.work;
  };
  auto push_neighbors = [&](const MultiIndex& index) {
    MultiIndex cand = index;
    for (std::size_t i = 0; i < index.size(); ++i) {
      ++cand[i];
      if (!r.margin.count(cand) && admissible(cand, r.set, floors)) {
        r.margin.insert(cand);
        evaluate(cand);
      }
      --cand[i];
    }
  };

  evaluate(root);
  r.set.insert(root);
  r.admission_order.push_back(root);
  r.value = r.profits[root].delta;
  push_neighbors(root);

  for (;;) {
    r.error_estimate = 0.0;
    for (const auto& m : r.margin) r.error_estimate += std::abs(r.profits[m].delta);
    if (r.error_estimate <= options.tol / 2) {
      r.converged = true;
      break;
    }
    if (r.work >= options.max_work || r.set.size() >= options.max_indices || r.margin.empty()) break;

    const MultiIndex* best = nullptr;
    double best_ratio = -1.0;
    for (const auto& m : r.margin) {
      const auto& p = r.profits[m];
      const double ratio = std::abs(p.delta) / p.work;
      if (ratio > best_ratio) {
        best_ratio = ratio;
        best = &m;
      }
    }
    const MultiIndex chosen = *best;
    if (r.profits[chosen].estimated)
      throw ResourceError("adapt_index_set: index " + to_string(chosen) + " lies beyond the configured limits");
    r.margin.erase(chosen);
    r.set.insert(chosen);
    r.admission_order.push_back(chosen);
    r.value += r.profits[chosen].delta;
    if (!is_downward_closed(r.set, floors))
      throw StructureError("adapt_index_set: admission broke downward closedness");
    push_neighbors(chosen);
  }
  return r;
}

}  // namespace mleig
