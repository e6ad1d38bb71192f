#include "fedfa/harness/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace fedfa::harness {

namespace fs = std::filesystem;

namespace {

const char* kHeader = "algorithm,seed,round,average_accuracy";

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt_short(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

}  // namespace

std::string summary_csv(const std::vector<ReportRow>& rows) {
    std::ostringstream os;
    os << kHeader << '\n';
    for (const auto& r : rows) os << r.algorithm << ',' << r.seed << ',' << r.round << ',' << fmt(r.average_accuracy) << '\n';
    return os.str();
}

std::vector<ReportRow> parse_summary_csv(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line) || line != kHeader) throw std::runtime_error("summary csv: unexpected header");
    std::vector<ReportRow> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string alg, seed, round, acc;
        if (!std::getline(ls, alg, ',') || !std::getline(ls, seed, ',') || !std::getline(ls, round, ',') ||
            !std::getline(ls, acc)) {
            throw std::runtime_error("summary csv: malformed row '" + line + "'");
        }
        rows.push_back(ReportRow{alg, std::stoull(seed), static_cast<std::size_t>(std::stoull(round)), std::stod(acc)});
    }
    return rows;
}

std::string accuracy_svg(const std::vector<ReportRow>& rows) {
    // algorithm -> round -> (sum, count)
    std::map<std::string, std::map<std::size_t, std::pair<double, std::size_t>>> curves;
    std::size_t max_round = 1;
    for (const auto& r : rows) {
        auto& cell = curves[r.algorithm][r.round];
        cell.first += r.average_accuracy;
        ++cell.second;
        max_round = std::max(max_round, r.round);
    }
    const double W = 640, H = 400, L = 60, R = 150, T = 20, B = 50;
    const double pw = W - L - R, ph = H - T - B;
    auto px = [&](double round) { return L + pw * round / static_cast<double>(max_round); };
    auto py = [&](double acc) { return T + ph * (1.0 - acc); };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
       << ' ' << H << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<path d=\"M" << L << ' ' << T << " L" << L << ' ' << T + ph << " L" << L + pw << ' ' << T + ph
       << "\" stroke=\"black\" fill=\"none\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double a = i / 4.0;
        os << "<text x=\"" << L - 8 << "\" y=\"" << py(a) + 4 << "\" font-size=\"11\" text-anchor=\"end\">"
           << fmt_short(a) << "</text>\n";
    }
    os << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 12 << "\" font-size=\"12\" text-anchor=\"middle\">round (0.."
       << max_round << ")</text>\n";
    os << "<text x=\"14\" y=\"" << T + ph / 2 << "\" font-size=\"12\" transform=\"rotate(-90 14 " << T + ph / 2
       << ")\" text-anchor=\"middle\">test accuracy</text>\n";
    std::size_t idx = 0;
    for (const auto& [alg, pts] : curves) {
        const char* color = kPalette[idx % (sizeof kPalette / sizeof kPalette[0])];
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" data-algorithm=\"" << alg
           << "\" points=\"";
        bool first = true;
        for (const auto& [round, cell] : pts) {
            if (!first) os << ' ';
            first = false;
            os << fmt_short(px(static_cast<double>(round))) << ','
               << fmt_short(py(cell.first / static_cast<double>(cell.second)));
        }
        os << "\"/>\n";
        const double ly = T + 16 + 18.0 * static_cast<double>(idx);
        os << "<text x=\"" << L + pw + 10 << "\" y=\"" << ly << "\" font-size=\"12\" fill=\"" << color << "\">" << alg
           << "</text>\n";
        ++idx;
    }
    os << "</svg>\n";
    return os.str();
}

ReportSummary emit_report(const fs::path& run_dir) {
    if (!fs::is_directory(run_dir)) throw std::runtime_error("report: " + run_dir.string() + " is not a directory");
    ReportSummary s;
    std::set<fs::path> candidates;
    for (const auto& e : fs::recursive_directory_iterator(run_dir)) {
        if (!e.is_regular_file()) continue;
        const auto name = e.path().filename();
        if (name == "metrics.jsonl" || name == "config.json") candidates.insert(e.path().parent_path());
    }
    for (const auto& dir : candidates) {
        const fs::path metrics = dir / "metrics.jsonl";
        if (!fs::exists(metrics)) {
            s.warnings.push_back(dir.string() + ": missing metrics.jsonl");
            continue;
        }
        std::ifstream in(metrics);
        std::string line;
        std::size_t lineno = 0, good = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            try {
                const auto j = nlohmann::json::parse(line);
                s.rows.push_back(ReportRow{j.at("algorithm").get<std::string>(), j.at("seed").get<std::uint64_t>(),
                                           j.at("round").get<std::size_t>(), j.at("average_accuracy").get<double>()});
                ++good;
            } catch (const nlohmann::json::exception& e) {
                s.warnings.push_back(metrics.string() + ":" + std::to_string(lineno) + ": " + e.what());
                break;
            }
        }
        if (good == 0) s.warnings.push_back(metrics.string() + ": no metric rows");
    }
    std::sort(s.rows.begin(), s.rows.end(), [](const ReportRow& a, const ReportRow& b) {
        return std::tie(a.algorithm, a.seed, a.round) < std::tie(b.algorithm, b.seed, b.round);
    });
    s.csv_path = run_dir / "summary.csv";
    s.svg_path = run_dir / "accuracy.svg";
    write_text(s.csv_path, summary_csv(s.rows));
    write_text(s.svg_path, accuracy_svg(s.rows));
    return s;
}

}  // namespace fedfa::harness
