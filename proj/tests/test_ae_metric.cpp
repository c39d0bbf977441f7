#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "lsas/ae_metric.hpp"
#include "lsas/errors.hpp"
#include "lsas/image_io.hpp"

using namespace lsas;
namespace fs = std::filesystem;

namespace {

AEAnnotationRecord record_of(BinaryMask m) { return {"r", std::move(m), 0}; }

// Brute-force pixel count, independent of aes_score.
double brute_ratio(const BinaryMask& m, const BinaryMask& d) {
  int inter = 0, size = 0;
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      if (!m.at(y, x)) continue;
      ++size;
      inter += d.at(y, x) ? 1 : 0;
    }
  }
  return static_cast<double>(inter) / size;
}

std::vector<int> ones_then_zeros(int ones, int total) {
  std::vector<int> v(static_cast<std::size_t>(total), 0);
  std::fill(v.begin(), v.begin() + ones, 1);
  return v;
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("lsas_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_gray(const fs::path& path, int h, int w, std::uint8_t value) {
  Image8 img{w, h, 1, std::vector<std::uint8_t>(static_cast<std::size_t>(h) * w, value)};
  write_png(path, img);
}

BinaryMask upscale2(const BinaryMask& m) {
  BinaryMask out{m.height * 2, m.width * 2, {}};
  out.bits.resize(static_cast<std::size_t>(out.height) * out.width);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) out.bits[static_cast<std::size_t>(y) * out.width + x] = m.at(y / 2, x / 2);
  }
  return out;
}

}  // namespace

TEST_CASE("aes_score examples") {
  const auto d = box_mask(10, 10, 0, 0, 10, 10);
  auto r = aes_score(box_mask(10, 10, 2, 2, 5, 5), record_of(d));
  CHECK(r.overlap_ratio == 1.0);
  CHECK(r.aes == 1);

  r = aes_score(box_mask(10, 10, 0, 0, 2, 2), record_of(box_mask(10, 10, 5, 5, 10, 10)));
  CHECK(r.overlap_ratio == 0.0);
  CHECK(r.aes == 0);

  // |M| = 100, |M & D| = 80 sits exactly on the threshold.
  r = aes_score(box_mask(20, 20, 0, 0, 10, 10), record_of(box_mask(20, 20, 0, 0, 8, 10)), 0.8);
  CHECK(r.overlap_ratio == doctest::Approx(0.8));
  CHECK(r.aes == 0);
  r = aes_score(box_mask(20, 20, 0, 0, 10, 10), record_of(box_mask(20, 20, 0, 0, 9, 10)), 0.8);
  CHECK(r.aes == 1);

  CHECK_THROWS_AS(aes_score(box_mask(4, 4, 0, 0, 0, 0), record_of(d)), InvalidArgument);
  CHECK_THROWS_AS(aes_score(box_mask(4, 4, 0, 0, 2, 2), record_of(d)), InvalidArgument);
}

TEST_CASE("synthetic rectangles have analytic overlap") {
  const auto left_half = box_mask(32, 32, 0, 0, 32, 16);
  CHECK(aes_score(left_half, record_of(left_half)).overlap_ratio == 1.0);
  CHECK(aes_score(left_half, record_of(box_mask(32, 32, 0, 0, 16, 16))).overlap_ratio == 0.5);
}

TEST_CASE("overlap ratio matches brute force and survives upscaling") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> coord(0, 15);
  for (int trial = 0; trial < 200; ++trial) {
    int y0 = coord(rng), y1 = coord(rng), x0 = coord(rng), x1 = coord(rng);
    if (y0 > y1) std::swap(y0, y1);
    if (x0 > x1) std::swap(x0, x1);
    const auto m = box_mask(16, 16, y0, x0, y1 + 1, x1 + 1);
    const auto d = box_mask(16, 16, coord(rng) / 2, coord(rng) / 2, 8 + coord(rng) / 2, 8 + coord(rng) / 2);
    const auto r = aes_score(m, record_of(d), 0.8);
    CHECK(r.overlap_ratio == doctest::Approx(brute_ratio(m, d)));
    CHECK(r.aes == (brute_ratio(m, d) > 0.8 ? 1 : 0));
    CHECK(aes_score(upscale2(m), record_of(upscale2(d))).overlap_ratio == doctest::Approx(r.overlap_ratio));
  }
}

TEST_CASE("ae_aggregate") {
  const std::vector<int> small{1, 0, 1, 0};
  CHECK(ae_aggregate(small) == 50.0);
  const std::vector<std::pair<int, double>> table{{11, 9.17},  {27, 22.50}, {46, 38.33}, {36, 30.00}, {38, 31.67},
                                                  {32, 26.67}, {41, 34.17}, {49, 40.83}, {35, 29.17}};
  for (const auto& [ones, reported] : table) {
    CAPTURE(ones);
    auto v = ones_then_zeros(ones, 120);
    CHECK(round2(ae_aggregate(v)) == reported);
    std::shuffle(v.begin(), v.end(), std::mt19937(ones));
    CHECK(round2(ae_aggregate(v)) == reported);
  }
  CHECK_THROWS_AS(ae_aggregate(std::vector<int>{}), InvalidArgument);
  CHECK_THROWS_AS(ae_aggregate(std::vector<int>{1, 2}), InvalidArgument);
  CHECK(ae_aggregate(std::vector<int>(7, 1)) == 100.0);
  CHECK(ae_aggregate(std::vector<int>(7, 0)) == 0.0);
}

TEST_CASE("relative improvement at reported precision") {
  CHECK(round2(relative_improvement(22.50, 38.33)) == 70.36);
  CHECK(round2(relative_improvement(34.17, 40.83)) == 19.49);
  CHECK(round2(relative_improvement(30.00, 31.67)) == 5.57);
  // 38.33 over 29.17 is 31.40%; 31.58% corresponds to a 29.13 baseline.
  CHECK(round2(relative_improvement(29.17, 38.33)) == 31.40);
  CHECK(round2(relative_improvement(29.13, 38.33)) == 31.58);
  CHECK_THROWS_AS(relative_improvement(0.0, 1.0), InvalidArgument);
}

TEST_CASE("report round trip") {
  auto report = make_report({{"a_1", 1, 0.9, 1}, {"b_2", 2, 0.25, 0}, {"c_3", 3, 0.8125, 1}}, 0.8);
  CHECK(report.ae == doctest::Approx(200.0 / 3));
  std::stringstream ss;
  write_report(ss, report);
  const auto back = read_report(ss);
  CHECK(back.lambda == 0.8);
  CHECK(back.ae == doctest::Approx(report.ae).epsilon(1e-9));
  REQUIRE(back.images.size() == 3);
  CHECK(back.images[1].image_ref == "b_2");
  CHECK(back.images[2].overlap_ratio == 0.8125);
  CHECK(back.images[2].aes == 1);
  std::stringstream csv;
  write_report_csv(csv, report);
  std::string header;
  std::getline(csv, header);
  CHECK(header.find("image_ref") != std::string::npos);
  std::stringstream bad("not a report\n");
  CHECK_THROWS_AS(read_report(bad), DataError);
}

TEST_CASE("load_annotations") {
  SUBCASE("empty directory warns") {
    const auto dir = scratch("empty");
    const auto set = load_annotations(dir);
    CHECK(set.records.empty());
    CHECK(set.warnings.size() == 1);
  }
  SUBCASE("one image with its mask") {
    const auto dir = scratch("one");
    write_gray(dir / "cat_3.png", 8, 6, 100);
    auto mask = box_mask(8, 6, 1, 1, 4, 4);
    Image8 m{6, 8, 1, {}};
    for (auto b : mask.bits) m.pixels.push_back(b ? 255 : 0);
    write_png(dir / "cat_3.mask.png", m);
    const auto set = load_annotations(dir);
    REQUIRE(set.records.size() == 1);
    CHECK(set.issues.empty());
    CHECK(set.records[0].image_ref == "cat_3");
    CHECK(set.records[0].label == 3);
    CHECK(set.records[0].ideal_mask.bits == mask.bits);
  }
  SUBCASE("dimension mismatch and missing mask are reported per record") {
    const auto dir = scratch("bad");
    write_gray(dir / "big_1.png", 96, 96, 10);
    write_gray(dir / "big_1.mask.png", 32, 32, 255);
    write_gray(dir / "lonely_2.png", 4, 4, 10);
    const auto set = load_annotations(dir);
    CHECK(set.records.empty());
    REQUIRE(set.issues.size() == 2);
    CHECK(set.issues[0].image_ref == "big_1");
    CHECK(set.issues[0].message.find("dimension mismatch") != std::string::npos);
    CHECK(set.issues[1].message.find("missing ideal mask") != std::string::npos);
  }
  SUBCASE("not a directory") { CHECK_THROWS_AS(load_annotations("/nonexistent/lsas"), DataError); }
}

TEST_CASE("synthetic annotations are deterministic and survive a disk round trip") {
  const auto a = synth_annotations(7, 120, 32, 32);
  const auto b = synth_annotations(7, 120, 32, 32);
  REQUIRE(a.size() == 120);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].image_ref == b[i].image_ref);
    CHECK(a[i].ideal_mask.bits == b[i].ideal_mask.bits);
    CHECK(a[i].label == b[i].label);
    CHECK(a[i].ideal_mask.count() > 0);
  }
  CHECK(synth_annotations(8, 120, 32, 32)[0].ideal_mask.bits != a[0].ideal_mask.bits);

  const auto dir = scratch("synth");
  const std::vector<AEAnnotationRecord> few(a.begin(), a.begin() + 5);
  write_annotation_set(dir, few, 7);
  const auto set = load_annotations(dir);
  REQUIRE(set.records.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(set.records[i].image_ref == few[i].image_ref);
    CHECK(set.records[i].label == few[i].label);
    CHECK(set.records[i].ideal_mask.bits == few[i].ideal_mask.bits);
  }
}
