#pragma once

#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dermnet/csv.hpp"
#include "dermnet/error.hpp"
#include "dermnet/tensor.hpp"

namespace dermnet {

/// Arg-max per probability row; ties break toward the lowest class index.
template <typename T>
std::vector<int> predict_labels(const TensorT<T>& probs) {
  if (probs.shape.size() != 2) raise(Err::ShapeMismatch, "probs must be (batch, K)");
  const int n = probs.dim(0);
  const int k = probs.dim(1);
  std::vector<int> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const T* row = probs.ptr() + static_cast<std::size_t>(i) * k;
    int best = 0;
    for (int j = 1; j < k; ++j)
      if (row[j] > row[best]) best = j;
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

inline double accuracy(const std::vector<int>& preds, const std::vector<int>& labels) {
  if (preds.size() != labels.size())
    raise(Err::ShapeMismatch, "preds/labels length mismatch");
  if (preds.empty()) raise(Err::EmptyInput, "accuracy of empty input");
  std::int64_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (preds[i] == labels[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(preds.size());
}

/// K x K counts; rows are true classes, columns predicted classes.
struct ConfusionMatrix {
  int k = 0;
  std::vector<std::int64_t> counts;  // row-major
  std::vector<std::string> labels;

  std::int64_t& at(int t, int p) { return counts[static_cast<std::size_t>(t) * k + p]; }
  std::int64_t at(int t, int p) const {
    return counts[static_cast<std::size_t>(t) * k + p];
  }
  std::int64_t total() const {
    std::int64_t s = 0;
    for (auto v : counts) s += v;
    return s;
  }
  std::int64_t trace() const {
    std::int64_t s = 0;
    for (int i = 0; i < k; ++i) s += at(i, i);
    return s;
  }
};

struct NormalizedConfusionMatrix {
  int k = 0;
  std::vector<double> rows;  // row-major
  std::vector<std::string> labels;

  double at(int t, int p) const { return rows[static_cast<std::size_t>(t) * k + p]; }
};

inline ConfusionMatrix confusion(const std::vector<int>& preds,
                                 const std::vector<int>& labels, int k,
                                 std::vector<std::string> class_labels = {}) {
  if (preds.size() != labels.size())
    raise(Err::ShapeMismatch, "preds/labels length mismatch");
  ConfusionMatrix cm;
  cm.k = k;
  cm.counts.assign(static_cast<std::size_t>(k) * k, 0);
  cm.labels = std::move(class_labels);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const int t = labels[i];
    const int p = preds[i];
    if (t < 0 || t >= k || p < 0 || p >= k)
      raise(Err::CodeOutOfRange, "label code outside 0.." + std::to_string(k - 1));
    ++cm.at(t, p);
  }
  return cm;
}

/// Divides each row by its sum; an all-zero row stays all-zero.
inline NormalizedConfusionMatrix normalize_rows(const ConfusionMatrix& cm) {
  NormalizedConfusionMatrix out;
  out.k = cm.k;
  out.labels = cm.labels;
  out.rows.assign(static_cast<std::size_t>(cm.k) * cm.k, 0.0);
  for (int t = 0; t < cm.k; ++t) {
    std::int64_t row_sum = 0;
    for (int p = 0; p < cm.k; ++p) row_sum += cm.at(t, p);
    if (row_sum == 0) continue;
    for (int p = 0; p < cm.k; ++p)
      out.rows[static_cast<std::size_t>(t) * cm.k + p] =
          static_cast<double>(cm.at(t, p)) / static_cast<double>(row_sum);
  }
  return out;
}

/// Per-class recall: diagonal over row sum; absent for empty rows.
inline std::vector<std::optional<double>> per_class_tpr(const ConfusionMatrix& cm) {
  std::vector<std::optional<double>> out(static_cast<std::size_t>(cm.k));
  for (int t = 0; t < cm.k; ++t) {
    std::int64_t row_sum = 0;
    for (int p = 0; p < cm.k; ++p) row_sum += cm.at(t, p);
    if (row_sum > 0)
      out[static_cast<std::size_t>(t)] =
          static_cast<double>(cm.at(t, t)) / static_cast<double>(row_sum);
  }
  return out;
}

/// CSV with class names as header row and leading column.
template <typename M>
std::string confusion_csv(const M& m) {
  std::ostringstream os;
  auto label = [&](int i) {
    return i < static_cast<int>(m.labels.size()) ? m.labels[static_cast<std::size_t>(i)]
                                                 : "class" + std::to_string(i);
  };
  os << "true\\pred";
  for (int p = 0; p < m.k; ++p) os << ',' << label(p);
  os << "\n";
  for (int t = 0; t < m.k; ++t) {
    os << label(t);
    for (int p = 0; p < m.k; ++p) {
      if constexpr (std::is_same_v<M, ConfusionMatrix>)
        os << ',' << m.at(t, p);
      else
        os << ',' << fmt_double(m.at(t, p));
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace dermnet
