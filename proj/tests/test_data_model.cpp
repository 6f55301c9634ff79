#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "mycobow/descriptors.hpp"
#include "mycobow/manifest.hpp"
#include "test_helpers.hpp"

using namespace mycobow;

namespace {

std::string line(const std::string& id, const std::string& sp, int prep, int idx) {
  return R"({"scan_id": ")" + id + R"(", "species": ")" + sp + R"(", "preparation": )" + std::to_string(prep) +
         R"(, "image_index": )" + std::to_string(idx) + R"(, "path": "img/)" + id + R"(.tif"})";
}

template <typename F>
std::string error_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(Manifest, ParsesSingleRecord) {
  const auto recs = parse_manifest(line("s1", "CA", 1, 0) + "\n");
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0].species, Species::CA);
  EXPECT_EQ(recs[0].preparation, 1);
  EXPECT_EQ(recs[0].image_index, 0);
  EXPECT_EQ(recs[0].path, "img/s1.tif");
}

TEST(Manifest, EmptyInputIsEmpty) {
  EXPECT_TRUE(parse_manifest("").empty());
  EXPECT_TRUE(parse_manifest("# only a comment\n\n").empty());
}

TEST(Manifest, UnknownSpeciesNamesLineAndCode) {
  const auto msg = error_of([] { parse_manifest("# header\n" + line("s1", "XX", 1, 0)); });
  EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;
  EXPECT_NE(msg.find("XX"), std::string::npos) << msg;
}

TEST(Manifest, RejectsBadPreparationDuplicatesAndMalformedLines) {
  EXPECT_NE(error_of([] { parse_manifest(line("s1", "CA", 3, 0)); }).find("line 1"), std::string::npos);
  const auto dup = error_of([] { parse_manifest(line("a", "CG", 2, 4) + "\n" + line("b", "CG", 2, 4)); });
  EXPECT_NE(dup.find("line 2"), std::string::npos) << dup;
  EXPECT_NE(dup.find("duplicate"), std::string::npos) << dup;
  EXPECT_NE(error_of([] { parse_manifest(line("a", "CG", 2, 4) + "\n" + line("a", "CT", 2, 4)); }).find("duplicate"),
            std::string::npos);
  EXPECT_NE(error_of([] { parse_manifest("{not json\n"); }).find("line 1"), std::string::npos);
  EXPECT_NE(error_of([] { parse_manifest(R"({"scan_id": "x", "species": "CA"})"); }).find("missing field"),
            std::string::npos);
}

TEST(Manifest, ParseIsOrderPreservingAndRoundTrips) {
  auto recs = testing_helpers::full_difas_records();
  Rng rng(3);
  rng.shuffle(recs);
  EXPECT_EQ(parse_manifest(format_manifest(recs)), recs);
}

TEST(Summary, FullDatasetCounts) {
  const auto s = summarize(testing_helpers::full_difas_records());
  EXPECT_EQ(s.total, 180u);
  for (auto c : s.per_species) EXPECT_EQ(c, 20u);
  EXPECT_EQ(s.per_preparation[0], 90u);
  EXPECT_EQ(s.per_preparation[1], 90u);
  EXPECT_EQ(summary_line(s), "180 scans, 9 species, 2 preparations");
}

TEST(Summary, EmptyAndSingleSpecies) {
  const auto empty = summarize({});
  EXPECT_EQ(empty.total, 0u);
  for (auto c : empty.per_species) EXPECT_EQ(c, 0u);

  std::vector<ScanRecord> three = {{"a", Species::MF, 1, 0, "a"}, {"b", Species::MF, 1, 1, "b"},
                                   {"c", Species::MF, 2, 0, "c"}};
  const auto s = summarize(three);
  for (std::size_t i = 0; i < kNumSpecies; ++i) EXPECT_EQ(s.per_species[i], species_at(i) == Species::MF ? 3u : 0u);
  std::size_t sum_species = 0;
  for (auto c : s.per_species) sum_species += c;
  EXPECT_EQ(sum_species, s.total);
  EXPECT_EQ(s.per_preparation[0] + s.per_preparation[1], s.total);
}

TEST(Dfb, SingleValueLayout) {
  DescriptorSet set;
  set.descriptors = FloatMatrix::Zero(1, 1);
  std::ostringstream out;
  // 24-byte header plus one float32.
  EXPECT_EQ(write_descriptors(set, out), 28u);
  const std::string bytes = out.str();
  ASSERT_EQ(bytes.size(), 28u);
  EXPECT_EQ(bytes.substr(0, 4), "DFB1");
  const unsigned char expected_header[] = {'D', 'F', 'B', '1', 1, 0, 0, 0, 1, 0, 0, 0,
                                           1,   0,   0,   0,   0, 0, 0, 0, 0, 0, 0, 0};
  EXPECT_EQ(std::memcmp(bytes.data(), expected_header, 24), 0);
}

TEST(Dfb, LittleEndianPayload) {
  DescriptorSet set;
  set.descriptors.resize(1, 2);
  set.descriptors << 1.0f, -2.0f;
  set.grid = Grid{1, 1};
  std::ostringstream out;
  // grid 1x1 with N=1
  EXPECT_EQ(write_descriptors(set, out), 32u);
  const std::string b = out.str();
  // 1.0f = 0x3F800000, -2.0f = 0xC0000000
  EXPECT_EQ(static_cast<unsigned char>(b[24 + 3]), 0x3Fu);
  EXPECT_EQ(static_cast<unsigned char>(b[24 + 2]), 0x80u);
  EXPECT_EQ(static_cast<unsigned char>(b[28 + 3]), 0xC0u);
  EXPECT_EQ(static_cast<unsigned char>(b[16]), 1u);
  EXPECT_EQ(static_cast<unsigned char>(b[20]), 1u);
}

TEST(Dfb, RoundTripIsBitExact) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    DescriptorSet set;
    const auto n = static_cast<Eigen::Index>(1 + rng.below(20));
    const auto d = static_cast<Eigen::Index>(1 + rng.below(10));
    set.descriptors.resize(n, d);
    for (Eigen::Index i = 0; i < n * d; ++i) {
      set.descriptors.data()[i] = static_cast<float>(rng.normal() * std::pow(10.0, rng.normal() * 5));
    }
    if (trial % 2 == 0) set.grid = Grid{1, static_cast<std::uint32_t>(n)};
    std::stringstream io;
    write_descriptors(set, io);
    const auto back = read_descriptors(io);
    EXPECT_TRUE(same_payload(set, back));
    std::ostringstream again;
    write_descriptors(back, again);
    std::ostringstream first;
    write_descriptors(set, first);
    EXPECT_EQ(first.str(), again.str());
  }
}

TEST(Dfb, NonFiniteRejectedBeforeWriting) {
  DescriptorSet set;
  set.descriptors = FloatMatrix::Zero(2, 2);
  set.descriptors(1, 1) = std::numeric_limits<float>::quiet_NaN();
  std::ostringstream out;
  EXPECT_THROW(write_descriptors(set, out), Error);
  EXPECT_TRUE(out.str().empty());
}

TEST(Dfb, ReaderErrors) {
  {
    std::istringstream in(std::string("XXXX") + std::string(20, '\0'));
    const auto msg = error_of([&] { read_descriptors(in); });
    EXPECT_NE(msg.find("bad magic"), std::string::npos) << msg;
  }
  {
    DescriptorSet set;
    set.descriptors = FloatMatrix::Ones(10, 3);
    std::ostringstream out;
    write_descriptors(set, out);
    std::string bytes = out.str();
    bytes.resize(bytes.size() - 3 * 4);  // drop the last row
    std::istringstream in(bytes);
    const auto msg = error_of([&] { read_descriptors(in); });
    EXPECT_NE(msg.find("truncated"), std::string::npos) << msg;
  }
  {
    DescriptorSet set;
    set.descriptors = FloatMatrix::Ones(4, 2);
    set.grid = Grid{2, 2};
    std::ostringstream out;
    write_descriptors(set, out);
    std::string bytes = out.str();
    bytes[16] = 3;  // grid 3x2 != 4
    std::istringstream in(bytes);
    const auto msg = error_of([&] { read_descriptors(in); });
    EXPECT_NE(msg.find("grid"), std::string::npos) << msg;
  }
  DescriptorSet bad_grid;
  bad_grid.descriptors = FloatMatrix::Ones(4, 2);
  bad_grid.grid = Grid{3, 1};
  std::ostringstream out;
  EXPECT_THROW(write_descriptors(bad_grid, out), Error);
}

TEST(Dfb, FileHelpersUseStemAsSourceId) {
  testing_helpers::TempDir dir("dfb");
  DescriptorSet set;
  set.descriptors = FloatMatrix::Constant(3, 2, 0.5f);
  set.grid = Grid{3, 1};
  write_descriptors_file(set, dir.path() / "scanA__r0__c0.dfb");
  const auto back = read_descriptors_file(dir.path() / "scanA__r0__c0.dfb");
  EXPECT_EQ(back.source_id, "scanA__r0__c0");
  EXPECT_TRUE(same_payload(set, back));
  EXPECT_THROW(read_descriptors_file(dir.path() / "missing.dfb"), Error);
}
