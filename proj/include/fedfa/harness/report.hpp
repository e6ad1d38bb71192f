#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace fedfa::harness {

struct ReportRow {
    std::string algorithm;
    std::uint64_t seed = 0;
    std::size_t round = 0;
    double average_accuracy = 0.0;

    bool operator==(const ReportRow&) const = default;
};

struct ReportSummary {
    std::vector<ReportRow> rows;  // sorted by (algorithm, seed, round)
    std::vector<std::string> warnings;
    std::filesystem::path csv_path;
    std::filesystem::path svg_path;
};

// Collects every metrics.jsonl below run_dir and writes summary.csv and
// accuracy.svg into run_dir. Run directories without readable metrics are
// skipped with a warning.
ReportSummary emit_report(const std::filesystem::path& run_dir);

std::string summary_csv(const std::vector<ReportRow>& rows);
std::vector<ReportRow> parse_summary_csv(const std::string& text);

// Mean accuracy-vs-round curve per algorithm, one polyline each.
std::string accuracy_svg(const std::vector<ReportRow>& rows);

}  // namespace fedfa::harness
