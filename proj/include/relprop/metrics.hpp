#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "relprop/heatmap.hpp"

namespace relprop {

/// Axis-aligned box, 0-based, inclusive min / exclusive max.
struct BoundingBox {
    std::int64_t x_min = 0;
    std::int64_t y_min = 0;
    std::int64_t x_max = 0;
    std::int64_t y_max = 0;
    std::string class_label;

    std::int64_t width() const { return x_max - x_min; }
    std::int64_t height() const { return y_max - y_min; }
    std::int64_t area() const { return width() * height(); }
};

/// One scored (image, class) pair: positive relevance inside the ground-truth
/// box union vs. the whole frame, plus the size-weighted variant that keeps a
/// uniform attribution at exactly 1.
struct LocalizationScore {
    std::string image_id;
    std::string class_label;
    double r_in = 0.0;
    double r_tot = 0.0;
    std::size_t s_in = 0;
    std::size_t s_tot = 0;
    double mu = 0.0;
    double mu_w = 0.0;
};

struct BinStat {
    double bin_low = 0.0;
    double bin_high = 0.0;
    double mean_mu = 0.0;
    std::size_t count = 0;
};

struct AggregateReport {
    double mean_mu_w = 0.0;
    double mean_mu = 0.0;
    double mean_mu_le_025 = 0.0; // over scores with S_in/S_tot <= 1/4
    double mean_mu_le_05 = 0.0;  // over scores with S_in/S_tot <= 1/2
    std::vector<BinStat> bins;   // 100 right-closed intervals over (0,1]
    std::size_t n_scores = 0;
};

/// Image plus its ground-truth boxes, in one coordinate frame.
struct AnnotatedFrame {
    std::string image_id;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<BoundingBox> boxes;
};

/// Bin index for a relative size, 1-based: ceil(100 * s_in / s_tot), clamped
/// to [1, 100]. Integer arithmetic, so boundary sizes land deterministically.
std::size_t size_bin(std::size_t s_in, std::size_t s_tot);

/// Scores one heatmap against the union of all boxes carrying target_class.
/// Only positive relevance counts; negative values are ignored on both sides
/// of the ratio. R_tot = 0 scores mu = mu_w = 0.
LocalizationScore localization_score(const Heatmap2D& heatmap, const std::vector<BoundingBox>& annotation,
                                     const std::string& target_class, const std::string& image_id);

AggregateReport aggregate(const std::vector<LocalizationScore>& scores);

/// Scores a uniform positive heatmap for every (image, class-with-boxes)
/// pair: mu = S_in/S_tot and mu_w = 1 exactly.
std::vector<LocalizationScore> baseline_scores(const std::vector<AnnotatedFrame>& frames);
AggregateReport baseline_report(const std::vector<AnnotatedFrame>& frames);

/// CSV writers. Values use %.17g so files are byte-stable and round-trip.
std::string scores_to_csv(const std::vector<LocalizationScore>& scores);
std::vector<LocalizationScore> scores_from_csv(const std::string& text);
void write_scores_csv(const std::filesystem::path& path, const std::vector<LocalizationScore>& scores);

/// Summary CSV: a `# summary` section with the headline means, the 100-bin
/// curve under `# bins`, and optionally a `# baseline` section.
std::string summary_to_csv(const AggregateReport& report, const AggregateReport* baseline = nullptr);
void write_summary_csv(const std::filesystem::path& path, const AggregateReport& report,
                       const AggregateReport* baseline = nullptr);

} // namespace relprop
