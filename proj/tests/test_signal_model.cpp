#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "vibtx/errors.hpp"
#include "vibtx/rng.hpp"
#include "vibtx/signal_model.hpp"

namespace fs = std::filesystem;
using namespace vibtx;

namespace {

fs::path temp_path(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "vibtx_test_signal";
  fs::create_directories(dir);
  return dir / name;
}

ImpactSample make_sample(Finger f, Rng& rng, HandArchetype hand = HandArchetype::CH) {
  ImpactSample s;
  s.label = f;
  s.hand = hand;
  s.meta.impact_speed = rng.uniform(0.2, 0.5);
  s.meta.seed = rng.next_u64();
  for (std::size_t k = 0; k < kNumSensors; ++k) {
    ReducedTrace t;
    t.samples.resize(kWindowLength);
    for (auto& v : t.samples) v = rng.normal();
    s.traces.push_back(std::move(t));
  }
  return s;
}

Dataset make_dataset(std::size_t per_finger, std::uint64_t seed) {
  Rng rng(seed);
  Dataset d;
  d.manifest.generation_seed = seed;
  for (Finger f : kAllFingers) {
    for (std::size_t i = 0; i < per_finger; ++i) d.samples.push_back(make_sample(f, rng));
  }
  return d;
}

bool has_rule(const std::vector<Violation>& v, const std::string& rule) {
  return std::ranges::any_of(v, [&](const Violation& x) { return x.rule == rule; });
}

}  // namespace

TEST(AxisTraceSet, EnforcesShape) {
  EXPECT_THROW(AxisTraceSet(0, 1000.0, {1.0}, {1.0, 2.0}, {1.0}), InvalidArgument);
  EXPECT_THROW(AxisTraceSet(0, 1000.0, {}, {}, {}), InvalidArgument);
  EXPECT_THROW(AxisTraceSet(0, 0.0, {1.0}, {1.0}, {1.0}), InvalidArgument);
  EXPECT_THROW(AxisTraceSet(0, 1000.0, {1.0}, {1.0}, {1.0}, {true, false}), InvalidArgument);
  const AxisTraceSet t(2, 1000.0, {1.0, 2.0}, {3.0, 4.0}, {5.0, 6.0});
  EXPECT_TRUE(t.all_valid());
  EXPECT_EQ(t.axis(2)[1], 6.0);
}

TEST(ForceTrace, EnforcesShape) {
  EXPECT_THROW(ForceTrace(1000.0, {1.0}, {1.0}, {}), InvalidArgument);
  EXPECT_THROW(ForceTrace(-1.0, {1.0}, {1.0}, {1.0}), InvalidArgument);
}

TEST(Names, RoundTrip) {
  for (Finger f : kAllFingers) EXPECT_EQ(parse_finger(to_string(f)), f);
  for (HandArchetype h : kAllArchetypes) EXPECT_EQ(parse_archetype(to_string(h)), h);
  EXPECT_EQ(parse_reduction(to_string(ReductionMethod::PCA)), ReductionMethod::PCA);
  EXPECT_FALSE(parse_archetype("XX").has_value());
}

TEST(ValidateDataset, BalancedDatasetIsClean) {
  EXPECT_TRUE(validate_dataset(make_dataset(100, 1)).empty());
}

TEST(ValidateDataset, ImbalanceIsOneViolation) {
  Rng rng(2);
  Dataset d;
  for (int i = 0; i < 99; ++i) d.samples.push_back(make_sample(Finger::Thumb, rng));
  for (int i = 0; i < 101; ++i) d.samples.push_back(make_sample(Finger::Index, rng));
  for (Finger f : {Finger::Middle, Finger::Ring, Finger::Little}) {
    for (int i = 0; i < 100; ++i) d.samples.push_back(make_sample(f, rng));
  }
  const auto v = validate_dataset(d);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].rule, "imbalance");
  EXPECT_FALSE(v[0].sample_index.has_value());
}

TEST(ValidateDataset, ShortTraceIsOneViolation) {
  auto d = make_dataset(100, 3);
  d.samples[17].traces[2].samples.resize(299);
  const auto v = validate_dataset(d);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].rule, "window length");
  EXPECT_EQ(v[0].sample_index, 17u);
}

TEST(ValidateDataset, OtherRules) {
  auto d = make_dataset(2, 4);
  d.samples[0].traces.pop_back();
  d.samples[1].traces[1].method = ReductionMethod::PCA;
  d.samples[2].traces[0].samples[5] = std::numeric_limits<double>::quiet_NaN();
  d.samples[3].hand = HandArchetype::SH;
  const auto v = validate_dataset(d);
  EXPECT_TRUE(has_rule(v, "trace count"));
  EXPECT_TRUE(has_rule(v, "mixed reduction"));
  EXPECT_TRUE(has_rule(v, "non-finite"));
  EXPECT_TRUE(has_rule(v, "hand mismatch"));
}

TEST(Persistence, EmptyDatasetRoundTrips) {
  Dataset d;
  d.manifest.hand = HandArchetype::IL;
  d.manifest.generation_seed = 12;
  const auto path = temp_path("empty.vtx");
  save_dataset(d, path);
  EXPECT_EQ(load_dataset(path), d);
}

TEST(Persistence, RandomDatasetsRoundTripBitExactly) {
  for (std::uint64_t seed = 10; seed < 15; ++seed) {
    auto d = make_dataset(1 + seed % 4, seed);
    d.manifest.role = DatasetRole::Validation;
    d.manifest.split_seed = seed * 31;
    d.manifest.parent_checksum = 0xDEADBEEF;
    d.samples[0].traces[0].samples[0] = -0.0;
    d.samples[0].traces[0].samples[1] = std::numeric_limits<double>::denorm_min();
    const auto path = temp_path("random.vtx");
    save_dataset(d, path);
    const auto back = load_dataset(path);
    EXPECT_EQ(back, d);
    EXPECT_TRUE(std::signbit(back.samples[0].traces[0].samples[0]));
    EXPECT_EQ(dataset_fingerprint(back), dataset_fingerprint(d));
  }
}

TEST(Persistence, FullSizeDatasetRoundTrips) {
  const auto d = make_dataset(100, 21);
  const auto path = temp_path("full.vtx");
  save_dataset(d, path);
  EXPECT_EQ(load_dataset(path), d);
}

TEST(Persistence, TruncatedFileIsChecksumError) {
  const auto path = temp_path("trunc.vtx");
  save_dataset(make_dataset(3, 5), path);
  fs::resize_file(path, fs::file_size(path) - 16);
  EXPECT_THROW((void)load_dataset(path), ChecksumError);
}

TEST(Fingerprint, ChangesWithContent) {
  auto d = make_dataset(2, 6);
  const auto before = dataset_fingerprint(d);
  d.samples[4].traces[3].samples[100] += 1e-12;
  EXPECT_NE(dataset_fingerprint(d), before);
}

TEST(Split, FourHundredFiftyFifty) {
  const auto d = make_dataset(100, 7);
  const auto s = split_dataset(d, {}, 99);
  EXPECT_EQ(s.train.samples.size(), 400u);
  EXPECT_EQ(s.validation.samples.size(), 50u);
  EXPECT_EQ(s.test.samples.size(), 50u);
  for (Finger f : kAllFingers) {
    EXPECT_EQ(s.train.counts_per_finger()[index_of(f)], 80u);
    EXPECT_EQ(s.validation.counts_per_finger()[index_of(f)], 10u);
    EXPECT_EQ(s.test.counts_per_finger()[index_of(f)], 10u);
  }
  EXPECT_EQ(s.train.manifest.role, DatasetRole::Train);
  EXPECT_EQ(s.test.manifest.role, DatasetRole::Test);
  EXPECT_EQ(s.test.manifest.parent_checksum, dataset_fingerprint(d));
  EXPECT_EQ(s.validation.manifest.split_seed, 99u);
}

TEST(Split, DisjointAndExhaustive) {
  const auto d = make_dataset(20, 8);
  const auto s = split_dataset(d, {0.7, 0.15, 0.15}, 3);
  std::multiset<std::uint64_t> seen;
  for (const auto* part : {&s.train, &s.validation, &s.test}) {
    for (const auto& x : part->samples) seen.insert(x.meta.seed);
  }
  std::multiset<std::uint64_t> all;
  for (const auto& x : d.samples) all.insert(x.meta.seed);
  EXPECT_EQ(seen, all);
  EXPECT_EQ(std::set<std::uint64_t>(seen.begin(), seen.end()).size(), d.samples.size());
  EXPECT_EQ(s.validation.samples.size(), 15u);
  EXPECT_EQ(s.test.samples.size(), 15u);
}

TEST(Split, IdentityFractions) {
  const auto d = make_dataset(10, 9);
  const auto s = split_dataset(d, {1.0, 0.0, 0.0}, 1);
  EXPECT_EQ(s.train.samples, d.samples);
  EXPECT_TRUE(s.validation.samples.empty());
  EXPECT_TRUE(s.test.samples.empty());
}

TEST(Split, DeterministicGivenSeed) {
  const auto d = make_dataset(100, 10);
  const auto a = split_dataset(d, {}, 5);
  const auto b = split_dataset(d, {}, 5);
  const auto c = split_dataset(d, {}, 6);
  EXPECT_EQ(a.test, b.test);
  EXPECT_EQ(a.train, b.train);
  EXPECT_NE(a.test.samples, c.test.samples);
}

TEST(Split, RejectsBadFractions) {
  const auto d = make_dataset(10, 11);
  EXPECT_THROW((void)split_dataset(d, {0.8, 0.1, 0.2}, 1), InvalidArgument);
  EXPECT_THROW((void)split_dataset(d, {1.2, -0.1, -0.1}, 1), InvalidArgument);
}
