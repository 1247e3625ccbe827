#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <set>
#include <string>

#include "dermnet/manifest.hpp"

using namespace dermnet;

namespace {

std::string small_manifest() {
  return
      "lesion_id,image_id,dx,dx_type,age,sex,localization\n"
      "HAM_0001,ISIC_0001,nv,histo,45.0,male,back\n"
      "HAM_0002,ISIC_0002,mel,histo,,female,trunk\n"
      "HAM_0003,ISIC_0003,bkl,consensus,60.0,male,face\n"
      "HAM_0004,ISIC_0004,nv,follow_up,30.0,female,abdomen\n";
}

}  // namespace

TEST(ParseManifest, DirectFieldMapping) {
  const auto records = parse_manifest(small_manifest());
  ASSERT_EQ(records.size(), 4u);
  EXPECT_EQ(records[0].lesion_id, "HAM_0001");
  EXPECT_EQ(records[0].image_id, "ISIC_0001");
  EXPECT_EQ(records[0].dx, "nv");
  EXPECT_EQ(records[0].dx_type, "histo");
  ASSERT_TRUE(records[0].age.has_value());
  EXPECT_DOUBLE_EQ(*records[0].age, 45.0);
  EXPECT_EQ(records[0].sex, "male");
  EXPECT_EQ(records[0].localization, "back");
}

TEST(ParseManifest, EmptyAgeIsAbsent) {
  const auto records = parse_manifest(small_manifest());
  EXPECT_FALSE(records[1].age.has_value());
}

TEST(ParseManifest, KeepsFileOrder) {
  const auto records = parse_manifest(small_manifest());
  EXPECT_EQ(records[2].image_id, "ISIC_0003");
  EXPECT_EQ(records[3].image_id, "ISIC_0004");
}

TEST(ParseManifest, HeaderColumnsMayBeReordered) {
  const std::string text =
      "image_id,lesion_id,dx,dx_type,sex,age,localization\n"
      "ISIC_9,HAM_9,df,histo,male,33,ear\n";
  const auto records = parse_manifest(text);
  ASSERT_EQ(records.size(), 1u);
  EXPECT_EQ(records[0].image_id, "ISIC_9");
  EXPECT_EQ(records[0].dx, "df");
  EXPECT_DOUBLE_EQ(*records[0].age, 33.0);
}

TEST(ParseManifest, WrongColumnCountIsMalformedRow) {
  const std::string text =
      "lesion_id,image_id,dx,dx_type,age,sex,localization\n"
      "HAM_1,ISIC_1,nv,histo,45.0,male\n";
  try {
    parse_manifest(text, "t.csv");
    FAIL() << "expected MalformedRow";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind, Err::MalformedRow);
    EXPECT_EQ(e.line, 2);
    EXPECT_EQ(e.file, "t.csv");
  }
}

TEST(ParseManifest, UnknownClassRejected) {
  const std::string text =
      "lesion_id,image_id,dx,dx_type,age,sex,localization\n"
      "HAM_1,ISIC_1,warts,histo,45.0,male,back\n";
  try {
    parse_manifest(text);
    FAIL() << "expected UnknownClass";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind, Err::UnknownClass);
    EXPECT_EQ(e.line, 2);
  }
}

TEST(ParseManifest, MissingHeader) {
  EXPECT_THROW(parse_manifest("a,b,c\n1,2,3\n"), Error);
  try {
    parse_manifest("lesion_id,image_id,dx\nx,y,nv\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind, Err::MissingHeader);
  }
}

TEST(ParseManifest, BadAgeIsMalformedRow) {
  const std::string text =
      "lesion_id,image_id,dx,dx_type,age,sex,localization\n"
      "HAM_1,ISIC_1,nv,histo,forty,male,back\n";
  try {
    parse_manifest(text);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind, Err::MalformedRow);
  }
}

TEST(EncodeLabels, LexicographicMapping) {
  // Independent oracle: sort the class names and index them.
  std::vector<std::string> sorted(kClassNames.begin(), kClassNames.end());
  std::sort(sorted.begin(), sorted.end());
  std::map<std::string, int> expected;
  for (std::size_t i = 0; i < sorted.size(); ++i)
    expected[sorted[i]] = static_cast<int>(i);

  EXPECT_EQ(expected.at("akiec"), 0);
  EXPECT_EQ(expected.at("vasc"), 6);
  EXPECT_EQ(expected.at("mel"), 4);

  for (const auto& [dx, code] : expected) EXPECT_EQ(class_code(dx), code);
}

TEST(EncodeLabels, InjectiveAndIdempotent) {
  auto records = encode_labels(parse_manifest(small_manifest()));
  std::set<int> codes;
  for (int c = 0; c < kNumClasses; ++c) {
    SampleRecord r;
    r.dx = std::string(kClassNames[static_cast<std::size_t>(c)]);
    const auto encoded = encode_labels({r});
    codes.insert(encoded[0].label_code);
  }
  EXPECT_EQ(codes.size(), 7u);

  const auto twice = encode_labels(records);
  for (std::size_t i = 0; i < records.size(); ++i)
    EXPECT_EQ(twice[i].label_code, records[i].label_code);
}

TEST(ImputeAge, MeanOfTwoValues) {
  std::vector<SampleRecord> rs(3);
  rs[0].age = 40.0;
  rs[2].age = 60.0;
  const auto out = impute_age(rs);
  EXPECT_DOUBLE_EQ(*out[0].age, 40.0);
  EXPECT_DOUBLE_EQ(*out[1].age, 50.0);
  EXPECT_DOUBLE_EQ(*out[2].age, 60.0);
}

TEST(ImputeAge, AllPresentIsNoOp) {
  std::vector<SampleRecord> rs(2);
  rs[0].age = 10.0;
  rs[1].age = 20.0;
  const auto out = impute_age(rs);
  EXPECT_DOUBLE_EQ(*out[0].age, 10.0);
  EXPECT_DOUBLE_EQ(*out[1].age, 20.0);
}

TEST(ImputeAge, HandArithmetic) {
  std::vector<SampleRecord> rs(4);
  rs[0].age = 30.0;
  rs[1].age = 35.0;
  const auto out = impute_age(rs);
  EXPECT_DOUBLE_EQ(*out[2].age, 32.5);
  EXPECT_DOUBLE_EQ(*out[3].age, 32.5);
}

TEST(ImputeAge, AllMissingRaises) {
  std::vector<SampleRecord> rs(3);
  try {
    impute_age(rs);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind, Err::AllAgesMissing);
  }
}

TEST(ImputeAge, PreservesColumnMean) {
  Rng rng(99);
  std::vector<SampleRecord> rs(137);
  double sum = 0.0;
  int present = 0;
  for (auto& r : rs) {
    if (rng.bernoulli(0.7)) {
      r.age = rng.uniform(0.0, 90.0);
      sum += *r.age;
      ++present;
    }
  }
  const double mean_before = sum / present;
  const auto out = impute_age(rs);
  double total = 0.0;
  for (const auto& r : out) total += *r.age;
  EXPECT_NEAR(total / static_cast<double>(out.size()), mean_before, 1e-12);
}

namespace {

std::vector<SampleRecord> synth_records(const std::vector<std::pair<std::string, int>>& classes) {
  std::vector<SampleRecord> rs;
  int serial = 0;
  for (const auto& [dx, n] : classes) {
    for (int i = 0; i < n; ++i) {
      SampleRecord r;
      r.dx = dx;
      r.image_id = "IMG_" + std::to_string(serial++);
      rs.push_back(r);
    }
  }
  return rs;
}

std::multiset<std::string> ids_of(const std::vector<SampleRecord>& rs) {
  std::multiset<std::string> s;
  for (const auto& r : rs) s.insert(r.image_id);
  return s;
}

}  // namespace

TEST(Split, EightyTwenty) {
  const auto rs = synth_records({{"nv", 10}});
  const auto sp = split(rs, 0.8, 7);
  EXPECT_EQ(sp.train.size(), 8u);
  EXPECT_EQ(sp.validation.size(), 2u);
}

TEST(Split, DeterministicPerSeed) {
  const auto rs = synth_records({{"nv", 25}, {"mel", 10}});
  const auto a = split(rs, 0.8, 42);
  const auto b = split(rs, 0.8, 42);
  ASSERT_EQ(a.train.size(), b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i)
    EXPECT_EQ(a.train[i].image_id, b.train[i].image_id);
  const auto c = split(rs, 0.8, 43);
  bool same = c.train.size() == a.train.size();
  if (same)
    for (std::size_t i = 0; i < a.train.size(); ++i)
      same = same && a.train[i].image_id == c.train[i].image_id;
  EXPECT_FALSE(same) << "different seeds should shuffle differently";
}

TEST(Split, StratifiedPerClassArithmetic) {
  const auto rs = synth_records({{"nv", 10}, {"mel", 5}});
  const auto sp = split(rs, 0.8, 3, /*stratified=*/true);
  std::map<std::string, int> train_counts, val_counts;
  for (const auto& r : sp.train) ++train_counts[r.dx];
  for (const auto& r : sp.validation) ++val_counts[r.dx];
  EXPECT_EQ(train_counts["nv"], 8);
  EXPECT_EQ(train_counts["mel"], 4);
  EXPECT_EQ(val_counts["nv"], 2);
  EXPECT_EQ(val_counts["mel"], 1);
}

TEST(Split, IsAPartition) {
  for (const std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
    for (const bool stratified : {false, true}) {
      const auto rs = synth_records({{"nv", 33}, {"df", 11}, {"vasc", 6}});
      const auto sp = split(rs, 0.7, seed, stratified);
      auto combined = ids_of(sp.train);
      for (const auto& r : sp.validation) combined.insert(r.image_id);
      EXPECT_EQ(combined, ids_of(rs));
      if (!stratified)
        EXPECT_EQ(sp.train.size(),
                  static_cast<std::size_t>(std::llround(0.7 * rs.size())));
    }
  }
}

TEST(Split, DegenerateAndBadRatio) {
  const auto rs = synth_records({{"nv", 2}});
  try {
    split(rs, 0.8, 1);  // round(1.6) = 2 -> empty validation
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind, Err::DegenerateSplit);
  }
  EXPECT_THROW(split(rs, 0.0, 1), Error);
  EXPECT_THROW(split(rs, 1.0, 1), Error);
}

TEST(ClassCounts, CountsByDx) {
  const auto rs = encode_labels(synth_records({{"nv", 3}, {"akiec", 2}, {"vasc", 1}}));
  const auto counts = class_counts(rs);
  EXPECT_EQ(counts[5], 3);  // nv
  EXPECT_EQ(counts[0], 2);  // akiec
  EXPECT_EQ(counts[6], 1);  // vasc
  EXPECT_EQ(counts[1] + counts[2] + counts[3] + counts[4], 0);
}
