#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "mmaffect/core.hpp"
#include "test_util.hpp"

using namespace mmaffect;
using testing_util::code_of;

namespace {

FeatureSequence make_seq(const FeatureDescriptor& d, const std::string& vid, std::size_t frames, double fill = 0.5) {
  return {d, vid, Tensor({frames, d.dim}, fill), std::nullopt};
}

}  // namespace

TEST(Registry, RegistersExtractorDims) {
  FeatureRegistry r;
  r.register_feature({"FAU", Modality::Visual, 17});
  r.register_feature({"EAC", Modality::Visual, 2048});
  EXPECT_EQ(r.at("FAU").dim, 17u);
  EXPECT_EQ(r.at("EAC").dim, 2048u);
  EXPECT_EQ(r[0].name, "FAU");
  EXPECT_EQ(r.index_of("EAC"), 1u);
}

TEST(Registry, RejectsDuplicatesAndZeroDim) {
  FeatureRegistry r;
  r.register_feature({"FAU", Modality::Visual, 17});
  EXPECT_EQ(code_of([&] { r.register_feature({"FAU", Modality::Visual, 17}); }), ErrorCode::DuplicateName);
  EXPECT_EQ(code_of([&] { r.register_feature({"X", Modality::Audio, 0}); }), ErrorCode::DimMismatch);
  EXPECT_EQ(code_of([&] { r.at("nope"); }), ErrorCode::UnknownFeature);
}

TEST(Registry, ExtractorsInOrder) {
  const auto r = extractor_registry();
  const std::vector<std::pair<std::string, std::size_t>> expected{
      {"IS09", 384}, {"CNN14", 2048}, {"VGGish", 128}, {"eGeMAPS", 88}, {"DeepSpectrum", 1024},
      {"EAC", 2048}, {"FAU", 17},     {"ResNet18", 512}, {"POSTER", 768}, {"POSTER2", 768}};
  ASSERT_EQ(r.size(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) {
    EXPECT_EQ(r[i].name, expected[i].first);
    EXPECT_EQ(r[i].dim, expected[i].second);
    EXPECT_EQ(r[i].modality, i < 5 ? Modality::Audio : Modality::Visual);
  }
}

TEST(Registry, SubsetKeepsRegistryOrder) {
  const auto r = extractor_registry().subset({"VGGish", "EAC", "IS09"});
  ASSERT_EQ(r.size(), 3u);
  EXPECT_EQ(r[0].name, "IS09");
  EXPECT_EQ(r[1].name, "VGGish");
  EXPECT_EQ(r[2].name, "EAC");
  EXPECT_EQ(code_of([] { extractor_registry().subset({"Bogus"}); }), ErrorCode::UnknownFeature);
}

TEST(Registry, IterationIsInsertionOrder) {
  std::mt19937_64 gen(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::string> names;
    for (int i = 0; i < 8; ++i) names.push_back("f" + std::to_string(gen() % 100000) + "_" + std::to_string(i));
    FeatureRegistry r;
    for (const auto& n : names) r.register_feature({n, Modality::Audio, 1 + gen() % 10});
    std::size_t i = 0;
    for (const auto& d : r) EXPECT_EQ(d.name, names[i++]);
  }
}

TEST(ValidateSequence, AcceptsAndRejects) {
  const FeatureDescriptor fau{"FAU", Modality::Visual, 17};
  EXPECT_NO_THROW(validate_sequence(make_seq(fau, "v", 3)));

  FeatureSequence narrow{fau, "v", Tensor({3, 16}, 0.0), std::nullopt};
  EXPECT_EQ(code_of([&] { validate_sequence(narrow); }), ErrorCode::DimMismatch);

  auto nan = make_seq(fau, "v", 3);
  nan.values.at(1, 4) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_EQ(code_of([&] { validate_sequence(nan); }), ErrorCode::NonFinite);

  FeatureSequence empty{fau, "v", Tensor(), std::nullopt};
  EXPECT_EQ(code_of([&] { validate_sequence(empty); }), ErrorCode::EmptySequence);
}

TEST(ValidateSequence, RandomCorruption) {
  std::mt19937_64 gen(11);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t dim = 1 + gen() % 12, frames = 1 + gen() % 9;
    const FeatureDescriptor d{"F", Modality::Audio, dim};
    std::size_t width = dim;
    const int corruption = static_cast<int>(gen() % 4);  // 0 none, 1 width, 2 NaN, 3 inf
    if (corruption == 1) width = dim + 1 + gen() % 3;
    FeatureSequence s{d, "v", Tensor({frames, width}, 0.25), std::nullopt};
    const std::size_t idx = gen() % s.values.size();
    if (corruption == 2) s.values[idx] = std::numeric_limits<double>::quiet_NaN();
    if (corruption == 3) s.values[idx] = -std::numeric_limits<double>::infinity();
    if (corruption == 0) {
      EXPECT_NO_THROW(validate_sequence(s));
    } else {
      EXPECT_EQ(code_of([&] { validate_sequence(s); }), corruption == 1 ? ErrorCode::DimMismatch : ErrorCode::NonFinite);
    }
  }
}

TEST(AlignLengths, TruncatesToMinimum) {
  const FeatureDescriptor a{"A", Modality::Audio, 2}, b{"B", Modality::Visual, 3}, c{"C", Modality::Visual, 1};
  std::vector<FeatureSequence> seqs{make_seq(a, "v", 300), make_seq(b, "v", 298), make_seq(c, "v", 300)};
  for (std::size_t t = 0; t < 300; ++t) seqs[0].values.at(t, 0) = static_cast<double>(t);
  const auto out = align_lengths(seqs);
  ASSERT_EQ(out.size(), 3u);
  for (const auto& s : out) EXPECT_EQ(s.frames(), 298u);
  EXPECT_EQ(out[0].descriptor.name, "A");
  EXPECT_EQ(out[2].descriptor.name, "C");
  for (std::size_t t = 0; t < 298; ++t) EXPECT_EQ(out[0].values.at(t, 0), static_cast<double>(t));
}

TEST(AlignLengths, AlignedInputUnchangedAndIdempotent) {
  const FeatureDescriptor a{"A", Modality::Audio, 2}, b{"B", Modality::Visual, 3};
  std::vector<FeatureSequence> same{make_seq(a, "v", 256), make_seq(b, "v", 256)};
  const auto out = align_lengths(same);
  EXPECT_EQ(out[0].values, same[0].values);
  EXPECT_EQ(out[1].values, same[1].values);

  std::mt19937_64 gen(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<FeatureSequence> seqs;
    for (int i = 0; i < 4; ++i) seqs.push_back(make_seq({"F" + std::to_string(i), Modality::Audio, 2}, "v", 1 + gen() % 40));
    const auto once = align_lengths(seqs);
    const auto twice = align_lengths(once);
    for (std::size_t i = 0; i < once.size(); ++i) EXPECT_EQ(once[i].values, twice[i].values);
  }
}

TEST(AlignLengths, MixedVideos) {
  const FeatureDescriptor a{"A", Modality::Audio, 2};
  std::vector<FeatureSequence> seqs{make_seq(a, "v1", 5), make_seq(a, "v2", 5)};
  EXPECT_EQ(code_of([&] { align_lengths(seqs); }), ErrorCode::MixedVideos);
}

TEST(TaskLabels, ExactlyOneTaskPresent) {
  TaskLabels l = VaLabels{{{0.1, 0.2}, {kVaInvalid, kVaInvalid}}};
  EXPECT_EQ(l.task(), Task::VA);
  EXPECT_EQ(l.va().frames.size(), 2u);
  EXPECT_EQ(code_of([&] { l.expr(); }), ErrorCode::TaskMismatch);
  EXPECT_TRUE(l.frame_valid(0));
  EXPECT_FALSE(l.frame_valid(1));
  EXPECT_EQ(*l.frames(), 2u);

  TaskLabels e = EriLabels{};
  EXPECT_FALSE(e.frames().has_value());
  EXPECT_EQ(code_of([&] { e.au(); }), ErrorCode::TaskMismatch);
}

TEST(TaskLabels, MaskRules) {
  TaskLabels expr = ExprLabels{{3, kInvalidLabel, 0}};
  EXPECT_TRUE(expr.frame_valid(0));
  EXPECT_FALSE(expr.frame_valid(1));
  std::array<int, kAuCount> ok{}, bad{};
  bad[7] = kInvalidLabel;
  TaskLabels au = AuLabels{{ok, bad}};
  EXPECT_TRUE(au.frame_valid(0));
  EXPECT_FALSE(au.frame_valid(1));
}

TEST(TaskLabels, SliceKeepsFrames) {
  TaskLabels l = ExprLabels{{0, 1, 2, 3, 4, 5}};
  const auto s = l.slice(2, 3);
  EXPECT_EQ(s.expr().frames, (std::vector<int>{2, 3, 4}));
}

TEST(Tasks, NamesAndOutputDims) {
  EXPECT_EQ(output_dim(Task::VA), 2u);
  EXPECT_EQ(output_dim(Task::Expr), 8u);
  EXPECT_EQ(output_dim(Task::AU), 12u);
  EXPECT_EQ(output_dim(Task::ERI), 7u);
  for (Task t : {Task::VA, Task::Expr, Task::AU, Task::ERI}) EXPECT_EQ(parse_task(to_string(t)), t);
  EXPECT_EQ(code_of([] { parse_task("valence"); }), ErrorCode::InvalidArgument);
}
