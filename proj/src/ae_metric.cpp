#include "lsas/ae_metric.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>

#include "lsas/errors.hpp"

namespace lsas {

AESResult aes_score(const BinaryMask& focused, const AEAnnotationRecord& record, double lambda) {
  const BinaryMask& ideal = record.ideal_mask;
  if (focused.height != ideal.height || focused.width != ideal.width || focused.bits.size() != ideal.bits.size()) {
    throw InvalidArgument("aes_score: focused region is " + std::to_string(focused.height) + "x" +
                          std::to_string(focused.width) + " but ideal region of '" + record.image_ref + "' is " +
                          std::to_string(ideal.height) + "x" + std::to_string(ideal.width));
  }
  std::size_t selected = 0, inside = 0;
  for (std::size_t i = 0; i < focused.bits.size(); ++i) {
    if (!focused.bits[i]) continue;
    ++selected;
    inside += ideal.bits[i] != 0;
  }
  if (selected == 0) throw InvalidArgument("aes_score: focused region is empty");
  AESResult r;
  r.overlap_ratio = static_cast<double>(inside) / static_cast<double>(selected);
  r.aes = r.overlap_ratio > lambda ? 1 : 0;
  return r;
}

double ae_aggregate(std::span<const int> scores) {
  if (scores.empty()) throw InvalidArgument("ae_aggregate: empty dataset");
  long sum = 0;
  for (int s : scores) {
    if (s != 0 && s != 1) throw InvalidArgument("ae_aggregate: scores must be 0 or 1");
    sum += s;
  }
  return 100.0 * static_cast<double>(sum) / static_cast<double>(scores.size());
}

double round2(double value) { return std::round(value * 100.0) / 100.0; }

double relative_improvement(double baseline, double improved) {
  const double b = round2(baseline);
  if (b == 0.0) throw InvalidArgument("relative_improvement: baseline is zero");
  return (round2(improved) - b) / b * 100.0;
}

AEReport make_report(std::vector<AEImageScore> images, double lambda) {
  std::vector<int> scores;
  scores.reserve(images.size());
  for (const auto& s : images) scores.push_back(s.aes);
  AEReport r;
  r.ae = ae_aggregate(scores);
  r.images = std::move(images);
  r.lambda = lambda;
  return r;
}

void write_report(std::ostream& out, const AEReport& report) {
  out << "image_ref\tlabel\toverlap_ratio\taes\n";
  out << std::fixed;
  for (const auto& s : report.images) {
    out << s.image_ref << '\t' << s.label << '\t' << std::setprecision(6) << s.overlap_ratio << '\t' << s.aes << '\n';
  }
  out << "# lambda\t" << std::setprecision(4) << report.lambda << '\n';
  out << "# images\t" << report.images.size() << '\n';
  out << "# ae_percent\t" << std::setprecision(2) << report.ae << '\n';
  out << std::defaultfloat;
}

void write_report_csv(std::ostream& out, const AEReport& report) {
  out << "image_ref,label,overlap_ratio,aes\n" << std::fixed << std::setprecision(6);
  for (const auto& s : report.images) out << s.image_ref << ',' << s.label << ',' << s.overlap_ratio << ',' << s.aes << '\n';
  out << std::defaultfloat;
}

AEReport read_report(std::istream& in) {
  AEReport r;
  std::string line;
  bool header = true;
  bool have_ae = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line.rfind("image_ref", 0) != 0) throw DataError("AE report: missing header row");
      continue;
    }
    std::istringstream fields(line);
    if (line[0] == '#') {
      std::string hash, key;
      double value = 0;
      fields >> hash >> key >> value;
      if (key == "lambda") r.lambda = value;
      if (key == "ae_percent") {
        r.ae = value;
        have_ae = true;
      }
      continue;
    }
    AEImageScore s;
    std::getline(fields, s.image_ref, '\t');
    if (!(fields >> s.label >> s.overlap_ratio >> s.aes)) throw DataError("AE report: malformed row '" + line + "'");
    r.images.push_back(std::move(s));
  }
  if (!have_ae) throw DataError("AE report: missing ae_percent trailer");
  // The trailer is printed at reported precision; the rows carry the exact value.
  if (!r.images.empty()) {
    double sum = 0;
    for (const auto& s : r.images) sum += s.aes;
    const double exact = 100.0 * sum / static_cast<double>(r.images.size());
    if (std::abs(exact - r.ae) > 0.005 + 1e-9) throw DataError("AE report: ae_percent trailer disagrees with rows");
    r.ae = exact;
  }
  return r;
}

namespace {

bool is_image_file(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

bool is_mask_file(const std::filesystem::path& p) {
  const std::string name = p.filename().string();
  return name.size() > 9 && name.compare(name.size() - 9, 9, ".mask.png") == 0;
}

std::optional<int> parse_int(std::string_view s) {
  int v = 0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) return std::nullopt;
  return v;
}

std::optional<int> label_from_stem(const std::string& stem) {
  const auto pos = stem.rfind('_');
  if (pos == std::string::npos || pos + 1 >= stem.size()) return std::nullopt;
  return parse_int(std::string_view(stem).substr(pos + 1));
}

std::map<std::string, int> read_labels(const std::filesystem::path& file, std::vector<std::string>& warnings) {
  std::map<std::string, int> labels;
  std::ifstream in(file);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    const auto label = comma == std::string::npos ? std::nullopt : parse_int(std::string_view(line).substr(comma + 1));
    if (!label) {
      if (lineno != 1) warnings.push_back("labels.csv:" + std::to_string(lineno) + ": unparsable row skipped");
      continue;
    }
    labels[line.substr(0, comma)] = *label;
  }
  return labels;
}

}  // namespace

AnnotationSet load_annotations(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DataError("annotation directory '" + dir.string() + "' does not exist");

  AnnotationSet set;
  std::map<std::string, int> labels;
  if (fs::exists(dir / "labels.csv")) labels = read_labels(dir / "labels.csv", set.warnings);

  std::vector<fs::path> images;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_image_file(entry.path()) && !is_mask_file(entry.path())) {
      images.push_back(entry.path());
    }
  }
  std::sort(images.begin(), images.end());
  if (images.empty()) {
    set.warnings.push_back("no annotated images found in '" + dir.string() + "'");
    return set;
  }

  for (const auto& path : images) {
    const std::string stem = path.stem().string();
    const fs::path mask_path = dir / (stem + ".mask.png");
    if (!fs::exists(mask_path)) {
      set.issues.push_back({stem, "missing ideal mask " + mask_path.filename().string()});
      continue;
    }
    try {
      const Image8 image = read_image(path);
      const Image8 mask = read_png(mask_path);
      if (image.width != mask.width || image.height != mask.height) {
        set.issues.push_back({stem, "dimension mismatch: image " + std::to_string(image.height) + "x" +
                                        std::to_string(image.width) + ", mask " + std::to_string(mask.height) + "x" +
                                        std::to_string(mask.width)});
        continue;
      }
      AEAnnotationRecord rec;
      rec.image_ref = stem;
      rec.ideal_mask.height = mask.height;
      rec.ideal_mask.width = mask.width;
      rec.ideal_mask.bits.resize(static_cast<std::size_t>(mask.width) * mask.height);
      for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
          bool on = false;
          for (int c = 0; c < mask.channels; ++c) on = on || mask.at(y, x, c) != 0;
          rec.ideal_mask.bits[static_cast<std::size_t>(y) * mask.width + x] = on;
        }
      }
      if (rec.ideal_mask.count() == 0) {
        set.issues.push_back({stem, "ideal mask is empty"});
        continue;
      }
      if (auto it = labels.find(stem); it != labels.end()) {
        rec.label = it->second;
      } else if (auto l = label_from_stem(stem)) {
        rec.label = *l;
      } else {
        set.issues.push_back({stem, "no label in labels.csv or file name"});
        continue;
      }
      set.records.push_back(std::move(rec));
    } catch (const std::exception& e) {
      set.issues.push_back({stem, e.what()});
    }
  }
  return set;
}

BinaryMask box_mask(int height, int width, int y0, int x0, int y1, int x1) {
  if (height <= 0 || width <= 0) throw InvalidArgument("box_mask: empty canvas");
  BinaryMask m;
  m.height = height;
  m.width = width;
  m.bits.assign(static_cast<std::size_t>(height) * width, 0);
  for (int y = std::max(0, y0); y < std::min(height, y1); ++y) {
    for (int x = std::max(0, x0); x < std::min(width, x1); ++x) m.bits[static_cast<std::size_t>(y) * width + x] = 1;
  }
  return m;
}

std::vector<AEAnnotationRecord> synth_annotations(std::uint64_t seed, std::size_t count, int height, int width,
                                                  int num_classes) {
  if (height < 4 || width < 4) throw InvalidArgument("synth_annotations: images must be at least 4x4");
  if (num_classes <= 0) throw InvalidArgument("synth_annotations: num_classes must be positive");
  std::mt19937_64 rng(seed);
  std::vector<AEAnnotationRecord> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    // Box sides between a quarter and a half of the image.
    std::uniform_int_distribution<int> bh(height / 4, height / 2), bw(width / 4, width / 2);
    const int h = bh(rng), w = bw(rng);
    std::uniform_int_distribution<int> oy(0, height - h), ox(0, width - w);
    const int y0 = oy(rng), x0 = ox(rng);
    AEAnnotationRecord rec;
    rec.label = static_cast<int>(i % static_cast<std::size_t>(num_classes));
    std::ostringstream ref;
    ref << "synth_" << std::setw(4) << std::setfill('0') << i << '_' << rec.label;
    rec.image_ref = ref.str();
    rec.ideal_mask = box_mask(height, width, y0, x0, y0 + h, x0 + w);
    out.push_back(std::move(rec));
  }
  return out;
}

void write_annotation_set(const std::filesystem::path& dir, const std::vector<AEAnnotationRecord>& records,
                          std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_int_distribution<int> noise(0, 90);
  std::ofstream labels(dir / "labels.csv");
  labels << "image_ref,label\n";
  for (const auto& rec : records) {
    const auto& m = rec.ideal_mask;
    Image8 img{m.width, m.height, 3, {}};
    img.pixels.resize(static_cast<std::size_t>(m.width) * m.height * 3);
    Image8 mask{m.width, m.height, 1, {}};
    mask.pixels.resize(static_cast<std::size_t>(m.width) * m.height);
    const int tint = 40 + 20 * (rec.label % 8);
    for (std::size_t i = 0; i < mask.pixels.size(); ++i) {
      const bool on = m.bits[i] != 0;
      mask.pixels[i] = on ? 255 : 0;
      for (int c = 0; c < 3; ++c) {
        const int base = noise(rng) + (on ? 120 + (c == rec.label % 3 ? tint / 2 : 0) : 0);
        img.pixels[i * 3 + c] = static_cast<std::uint8_t>(std::min(base, 255));
      }
    }
    write_png(dir / (rec.image_ref + ".png"), img);
    write_png(dir / (rec.image_ref + ".mask.png"), mask);
    labels << rec.image_ref << ',' << rec.label << '\n';
  }
}

}  // namespace lsas
