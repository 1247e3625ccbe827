#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dermnet/csv.hpp"
#include "dermnet/error.hpp"
#include "dermnet/rng.hpp"

namespace dermnet {

/// The seven lesion classes, in the lexicographic order that defines the
/// label codes. The mapping ships with every checkpoint.
inline constexpr std::array<std::string_view, 7> kClassNames = {
    "akiec", "bcc", "bkl", "df", "mel", "nv", "vasc"};

inline constexpr int kNumClasses = static_cast<int>(kClassNames.size());

inline int class_code(std::string_view dx) {
  for (int i = 0; i < kNumClasses; ++i)
    if (kClassNames[static_cast<std::size_t>(i)] == dx) return i;
  return -1;
}

inline std::map<std::string, int> label_map() {
  std::map<std::string, int> m;
  for (int i = 0; i < kNumClasses; ++i)
    m.emplace(std::string(kClassNames[static_cast<std::size_t>(i)]), i);
  return m;
}

/// One manifest row: image reference, diagnosis, clinical metadata.
/// `label_code` is -1 until encode_labels runs.
struct SampleRecord {
  std::string lesion_id;
  std::string image_id;
  std::string dx;
  std::string dx_type;
  std::optional<double> age;
  std::string sex;
  std::string localization;
  int label_code = -1;
};

struct SplitResult {
  std::vector<SampleRecord> train;
  std::vector<SampleRecord> validation;
  std::uint64_t seed = 0;
  double ratio = 0.0;
};

namespace detail {
inline const std::array<std::string_view, 7> kManifestColumns = {
    "lesion_id", "image_id", "dx", "dx_type", "age", "sex", "localization"};
}

/// Parses the metadata CSV. The header row must name all seven expected
/// columns (any order; unknown extra columns are ignored). An empty age
/// field maps to "absent".
inline std::vector<SampleRecord> parse_manifest(std::string_view content,
                                                const std::string& source = "manifest") {
  const std::vector<std::string> lines = split_lines(content);
  if (lines.empty()) raise(Err::MissingHeader, "empty manifest", source);

  const std::vector<std::string> header = csv_split(lines[0]);
  std::array<int, 7> col{};
  col.fill(-1);
  for (std::size_t i = 0; i < header.size(); ++i) {
    for (std::size_t k = 0; k < detail::kManifestColumns.size(); ++k)
      if (header[i] == detail::kManifestColumns[k]) col[k] = static_cast<int>(i);
  }
  for (std::size_t k = 0; k < col.size(); ++k)
    if (col[k] < 0)
      raise(Err::MissingHeader,
            "header lacks column '" + std::string(detail::kManifestColumns[k]) + "'",
            source, 1);

  std::vector<SampleRecord> records;
  records.reserve(lines.size() - 1);
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const long line_no = static_cast<long>(li) + 1;
    const std::vector<std::string> f = csv_split(lines[li]);
    if (f.size() != header.size())
      raise(Err::MalformedRow,
            "expected " + std::to_string(header.size()) + " fields, got " +
                std::to_string(f.size()),
            source, line_no);

    SampleRecord r;
    r.lesion_id = f[static_cast<std::size_t>(col[0])];
    r.image_id = f[static_cast<std::size_t>(col[1])];
    r.dx = f[static_cast<std::size_t>(col[2])];
    r.dx_type = f[static_cast<std::size_t>(col[3])];
    const std::string& age_field = f[static_cast<std::size_t>(col[4])];
    r.sex = f[static_cast<std::size_t>(col[5])];
    r.localization = f[static_cast<std::size_t>(col[6])];

    if (class_code(r.dx) < 0)
      raise(Err::UnknownClass, "unknown dx '" + r.dx + "'", source, line_no);

    if (!age_field.empty()) {
      try {
        std::size_t pos = 0;
        const double age = std::stod(age_field, &pos);
        if (pos != age_field.size() || !std::isfinite(age) || age < 0)
          raise(Err::MalformedRow, "bad age '" + age_field + "'", source, line_no);
        r.age = age;
      } catch (const Error&) {
        throw;
      } catch (...) {
        raise(Err::MalformedRow, "bad age '" + age_field + "'", source, line_no);
      }
    }
    records.push_back(std::move(r));
  }
  return records;
}

/// Assigns label codes by the fixed lexicographic class mapping.
inline std::vector<SampleRecord> encode_labels(std::vector<SampleRecord> records) {
  for (auto& r : records) {
    const int code = class_code(r.dx);
    if (code < 0) raise(Err::UnknownClass, "unknown dx '" + r.dx + "'");
    r.label_code = code;
  }
  return records;
}

/// Replaces absent ages with the arithmetic mean of the present ones.
inline std::vector<SampleRecord> impute_age(std::vector<SampleRecord> records) {
  double sum = 0.0;
  std::int64_t n = 0;
  for (const auto& r : records) {
    if (r.age) {
      sum += *r.age;
      ++n;
    }
  }
  if (n == 0) raise(Err::AllAgesMissing, "no record has a present age");
  const double mean = sum / static_cast<double>(n);
  for (auto& r : records)
    if (!r.age) r.age = mean;
  return records;
}

inline std::array<std::int64_t, 7> class_counts(const std::vector<SampleRecord>& records) {
  std::array<std::int64_t, 7> counts{};
  for (const auto& r : records) {
    const int code = r.label_code >= 0 ? r.label_code : class_code(r.dx);
    if (code < 0 || code >= kNumClasses)
      raise(Err::UnknownClass, "unknown dx '" + r.dx + "'");
    ++counts[static_cast<std::size_t>(code)];
  }
  return counts;
}

/// Seeded shuffle + partition. |train| = round(ratio * N); stratified mode
/// applies the same rule per class. Same inputs, same output, always.
inline SplitResult split(const std::vector<SampleRecord>& records, double ratio,
                         std::uint64_t seed, bool stratified = false) {
  if (!(ratio > 0.0 && ratio < 1.0))
    raise(Err::BadConfig, "split ratio must be in (0,1)");
  if (records.size() < 2) raise(Err::DegenerateSplit, "need at least 2 records");

  SplitResult out;
  out.seed = seed;
  out.ratio = ratio;

  auto partition = [&](const std::vector<std::size_t>& idx, std::uint64_t sub_seed) {
    std::vector<std::size_t> order = idx;
    Rng rng(sub_seed);
    rng.shuffle(order);
    const auto n_train = static_cast<std::size_t>(
        std::llround(ratio * static_cast<double>(order.size())));
    for (std::size_t i = 0; i < order.size(); ++i) {
      (i < n_train ? out.train : out.validation).push_back(records[order[i]]);
    }
  };

  if (!stratified) {
    std::vector<std::size_t> idx(records.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    partition(idx, seed);
  } else {
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < records.size(); ++i) {
      const int code = class_code(records[i].dx);
      if (code < 0) raise(Err::UnknownClass, "unknown dx '" + records[i].dx + "'");
      by_class[code].push_back(i);
    }
    for (const auto& [code, idx] : by_class)
      partition(idx, mix_seed(seed, static_cast<std::uint64_t>(code)));
  }

  if (out.train.empty() || out.validation.empty())
    raise(Err::DegenerateSplit, "split leaves one side empty");
  return out;
}

}  // namespace dermnet
