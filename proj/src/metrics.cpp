#include "relprop/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "relprop/errors.hpp"
#include "relprop/io_util.hpp"

namespace relprop {

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void check_box_in_frame(const BoundingBox& box, std::size_t height, std::size_t width) {
    if (box.x_min < 0 || box.y_min < 0 || box.x_min >= box.x_max || box.y_min >= box.y_max) {
        fail(Errc::degenerate_box, "box [" + std::to_string(box.x_min) + "," + std::to_string(box.y_min) + "," +
                                       std::to_string(box.x_max) + "," + std::to_string(box.y_max) + "] is degenerate");
    }
    if (box.x_max > static_cast<std::int64_t>(width) || box.y_max > static_cast<std::int64_t>(height)) {
        fail(Errc::dimension_mismatch, "box extends to (" + std::to_string(box.x_max) + "," + std::to_string(box.y_max) +
                                           ") outside a " + std::to_string(width) + "x" + std::to_string(height) + " frame");
    }
}

} // namespace

std::size_t size_bin(std::size_t s_in, std::size_t s_tot) {
    // ceil(100 * s_in / s_tot) without touching floating point
    const std::size_t idx = (100 * s_in + s_tot - 1) / s_tot;
    return std::clamp<std::size_t>(idx, 1, 100);
}

LocalizationScore localization_score(const Heatmap2D& heatmap, const std::vector<BoundingBox>& annotation,
                                     const std::string& target_class, const std::string& image_id) {
    const std::size_t H = heatmap.height(), W = heatmap.width();

    std::vector<const BoundingBox*> targets;
    for (const BoundingBox& box : annotation) {
        if (box.class_label != target_class) continue;
        check_box_in_frame(box, H, W);
        targets.push_back(&box);
    }
    if (targets.empty()) {
        fail(Errc::no_box_for_class, "no box carries class '" + target_class + "' on image " + image_id);
    }

    LocalizationScore score;
    score.image_id = image_id;
    score.class_label = target_class;
    score.s_tot = H * W;

    for (std::size_t i = 0; i < H * W; ++i) {
        const double v = heatmap.values[i];
        if (v > 0.0) score.r_tot += v;
    }

    // Row sweep over the box union: merge the x-intervals covering each row.
    std::vector<std::pair<std::int64_t, std::int64_t>> spans;
    for (std::size_t y = 0; y < H; ++y) {
        spans.clear();
        for (const BoundingBox* box : targets) {
            if (static_cast<std::int64_t>(y) >= box->y_min && static_cast<std::int64_t>(y) < box->y_max) {
                spans.emplace_back(box->x_min, box->x_max);
            }
        }
        if (spans.empty()) continue;
        std::sort(spans.begin(), spans.end());
        std::int64_t cur_lo = spans[0].first, cur_hi = spans[0].second;
        auto flush = [&] {
            score.s_in += static_cast<std::size_t>(cur_hi - cur_lo);
            for (std::int64_t x = cur_lo; x < cur_hi; ++x) {
                const double v = heatmap.at(y, static_cast<std::size_t>(x));
                if (v > 0.0) score.r_in += v;
            }
        };
        for (std::size_t i = 1; i < spans.size(); ++i) {
            if (spans[i].first <= cur_hi) {
                cur_hi = std::max(cur_hi, spans[i].second);
            } else {
                flush();
                cur_lo = spans[i].first;
                cur_hi = spans[i].second;
            }
        }
        flush();
    }

    if (score.r_tot > 0.0) {
        score.mu = score.r_in / score.r_tot;
        // single rounding so a uniform heatmap scores exactly 1
        score.mu_w = (score.r_in * static_cast<double>(score.s_tot)) /
                     (score.r_tot * static_cast<double>(score.s_in));
    }
    return score;
}

AggregateReport aggregate(const std::vector<LocalizationScore>& scores) {
    if (scores.empty()) fail(Errc::empty_input, "cannot aggregate zero scores");

    AggregateReport report;
    report.n_scores = scores.size();
    report.bins.resize(100);
    for (std::size_t b = 0; b < 100; ++b) {
        report.bins[b].bin_low = static_cast<double>(b) / 100.0;
        report.bins[b].bin_high = static_cast<double>(b + 1) / 100.0;
    }

    std::size_t n_le_025 = 0, n_le_05 = 0;
    for (const LocalizationScore& s : scores) {
        report.mean_mu += s.mu;
        report.mean_mu_w += s.mu_w;
        if (4 * s.s_in <= s.s_tot) {
            report.mean_mu_le_025 += s.mu;
            ++n_le_025;
        }
        if (2 * s.s_in <= s.s_tot) {
            report.mean_mu_le_05 += s.mu;
            ++n_le_05;
        }
        BinStat& bin = report.bins[size_bin(s.s_in, s.s_tot) - 1];
        bin.mean_mu += s.mu;
        bin.count += 1;
    }
    report.mean_mu /= static_cast<double>(report.n_scores);
    report.mean_mu_w /= static_cast<double>(report.n_scores);
    report.mean_mu_le_025 = n_le_025 ? report.mean_mu_le_025 / static_cast<double>(n_le_025) : 0.0;
    report.mean_mu_le_05 = n_le_05 ? report.mean_mu_le_05 / static_cast<double>(n_le_05) : 0.0;
    for (BinStat& bin : report.bins) {
        if (bin.count) bin.mean_mu /= static_cast<double>(bin.count);
    }
    return report;
}

std::vector<LocalizationScore> baseline_scores(const std::vector<AnnotatedFrame>& frames) {
    if (frames.empty()) fail(Errc::empty_input, "cannot build a baseline from zero frames");

    std::vector<LocalizationScore> scores;
    for (const AnnotatedFrame& frame : frames) {
        // unique class labels present on this frame, in sorted order
        std::vector<std::string> labels;
        for (const BoundingBox& box : frame.boxes) labels.push_back(box.class_label);
        std::sort(labels.begin(), labels.end());
        labels.erase(std::unique(labels.begin(), labels.end()), labels.end());

        Heatmap2D uniform{Tensor::full({frame.height, frame.width}, 1.0)};
        for (const std::string& label : labels) {
            scores.push_back(localization_score(uniform, frame.boxes, label, frame.image_id));
        }
    }
    if (scores.empty()) fail(Errc::empty_input, "no (image, class) pair carries a box");
    return scores;
}

AggregateReport baseline_report(const std::vector<AnnotatedFrame>& frames) { return aggregate(baseline_scores(frames)); }

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

std::string scores_to_csv(const std::vector<LocalizationScore>& scores) {
    std::ostringstream out;
    out << "image_id,class,s_in,s_tot,r_in,r_tot,mu,mu_w\n";
    for (const LocalizationScore& s : scores) {
        out << s.image_id << "," << s.class_label << "," << s.s_in << "," << s.s_tot << "," << fmt(s.r_in) << ","
            << fmt(s.r_tot) << "," << fmt(s.mu) << "," << fmt(s.mu_w) << "\n";
    }
    return out.str();
}

std::vector<LocalizationScore> scores_from_csv(const std::string& text) {
    std::vector<LocalizationScore> scores;
    std::istringstream in(text);
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (first) {
            first = false;
            if (line.rfind("image_id,", 0) != 0) fail(Errc::malformed_document, "unexpected score CSV header: " + line);
            continue;
        }
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::size_t start = 0;
        for (std::size_t i = 0; i <= line.size(); ++i) {
            if (i == line.size() || line[i] == ',') {
                fields.push_back(line.substr(start, i - start));
                start = i + 1;
            }
        }
        if (fields.size() != 8) fail(Errc::malformed_document, "score CSV row with " + std::to_string(fields.size()) + " fields");
        LocalizationScore s;
        s.image_id = fields[0];
        s.class_label = fields[1];
        try {
            s.s_in = std::stoull(fields[2]);
            s.s_tot = std::stoull(fields[3]);
            s.r_in = std::stod(fields[4]);
            s.r_tot = std::stod(fields[5]);
            s.mu = std::stod(fields[6]);
            s.mu_w = std::stod(fields[7]);
        } catch (const std::exception&) {
            fail(Errc::malformed_document, "unparseable score CSV row: " + line);
        }
        scores.push_back(std::move(s));
    }
    return scores;
}

void write_scores_csv(const std::filesystem::path& path, const std::vector<LocalizationScore>& scores) {
    write_text_file(path, scores_to_csv(scores));
}

namespace {

void append_summary_section(std::ostringstream& out, const AggregateReport& report) {
    out << "n_scores,mean_mu_w,mean_mu_le_025,mean_mu_le_05,mean_mu\n";
    out << report.n_scores << "," << fmt(report.mean_mu_w) << "," << fmt(report.mean_mu_le_025) << ","
        << fmt(report.mean_mu_le_05) << "," << fmt(report.mean_mu) << "\n";
}

} // namespace

std::string summary_to_csv(const AggregateReport& report, const AggregateReport* baseline) {
    std::ostringstream out;
    out << "# summary\n";
    append_summary_section(out, report);
    if (baseline) {
        out << "# baseline\n";
        append_summary_section(out, *baseline);
    }
    out << "# bins\n";
    out << "bin_low,bin_high,mean_mu,count\n";
    for (const BinStat& bin : report.bins) {
        out << fmt(bin.bin_low) << "," << fmt(bin.bin_high) << "," << fmt(bin.mean_mu) << "," << bin.count << "\n";
    }
    return out.str();
}

void write_summary_csv(const std::filesystem::path& path, const AggregateReport& report, const AggregateReport* baseline) {
    write_text_file(path, summary_to_csv(report, baseline));
}

} // namespace relprop
