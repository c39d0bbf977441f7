#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "lsas/interpretability.hpp"

namespace lsas {

/// One image of an annotated dataset with its human-marked ideal region.
struct AEAnnotationRecord {
  std::string image_ref;
  BinaryMask ideal_mask;
  int label = -1;
};

struct AESResult {
  double overlap_ratio = 0.0;  // |M & ideal| / |M|
  int aes = 0;
};

/// Focus-region overlap test: 1 iff |M & ideal| / |M| > lambda (strict).
AESResult aes_score(const BinaryMask& focused, const AEAnnotationRecord& record, double lambda = 0.8);

/// 100 * mean of per-image scores.
double ae_aggregate(std::span<const int> scores);

/// Rounds to two decimals, the precision AE values are reported at.
double round2(double value);

/// Percentage change from `baseline` to `improved`, both taken at reported precision.
double relative_improvement(double baseline, double improved);

struct AEImageScore {
  std::string image_ref;
  int label = -1;
  double overlap_ratio = 0.0;
  int aes = 0;
};

struct AEReport {
  std::vector<AEImageScore> images;
  double lambda = 0.8;
  double ae = 0.0;  // percent
};

AEReport make_report(std::vector<AEImageScore> images, double lambda);

/// Tab-separated table with a header row, then `# key<TAB>value` trailer lines.
void write_report(std::ostream& out, const AEReport& report);
void write_report_csv(std::ostream& out, const AEReport& report);
/// Parses `write_report` output.
AEReport read_report(std::istream& in);

struct AnnotationIssue {
  std::string image_ref;
  std::string message;
};

struct AnnotationSet {
  std::vector<AEAnnotationRecord> records;
  std::vector<AnnotationIssue> issues;  // per-record problems; the record is skipped
  std::vector<std::string> warnings;
};

/// Loads `<stem>.png|.jpg` images with sibling `<stem>.mask.png` ideal masks
/// (nonzero = inside). Labels come from `labels.csv` (`image_ref,label`) or a
/// trailing `_<int>` in the stem. Records are sorted by image_ref.
AnnotationSet load_annotations(const std::filesystem::path& dir);

/// Axis-aligned box mask, half-open on [x0, x1) x [y0, y1).
BinaryMask box_mask(int height, int width, int y0, int x0, int y1, int x1);

/// Deterministic rectangular ideal regions for pipeline tests.
std::vector<AEAnnotationRecord> synth_annotations(std::uint64_t seed, std::size_t count, int height, int width,
                                                  int num_classes = 10);

/// Writes images, masks and labels.csv so `load_annotations` can read them back.
/// Each image is textured noise with a brighter object inside the ideal region.
void write_annotation_set(const std::filesystem::path& dir, const std::vector<AEAnnotationRecord>& records,
                          std::uint64_t seed);

}  // namespace lsas
