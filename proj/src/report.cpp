#include "moss/report.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "moss/error.hpp"

using nlohmann::json;

namespace moss {

namespace {

json parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw IoError("bad json in " + path + ": " + e.what());
    }
}

std::string format_double(double v, int precision) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(precision) << v;
    return os.str();
}

}  // namespace

LoadedRun load_run_dir(const std::string& dir) {
    LoadedRun run;
    run.dir = dir;
    const json summary = parse_file(dir + "/summary.json");
    run.tag = summary.at("tag").get<std::string>();
    for (const auto& [tier, acc] : summary.at("final_accuracy").items()) {
        run.tiers.push_back(tier);
        run.final_accuracy.push_back(acc.get<double>());
        const json& conv = summary.at("converged_round").at(tier);
        run.converged.push_back(conv.is_null() ? "-" : std::to_string(conv.get<int>()));
    }
    run.cumulative_mb =
        static_cast<double>(summary.at("cumulative_bytes").at("total").get<uint64_t>()) /
        (1024.0 * 1024.0);

    std::ifstream rounds(dir + "/rounds.jsonl");
    if (!rounds) throw IoError("cannot open " + dir + "/rounds.jsonl");
    run.accuracy_curves.resize(run.tiers.size());
    std::string line;
    while (std::getline(rounds, line)) {
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw IoError("bad round record in " + dir + ": " + e.what());
        }
        for (size_t i = 0; i < run.tiers.size(); ++i)
            run.accuracy_curves[i].push_back(rec.at("accuracy").at(run.tiers[i]).get<double>());
    }
    return run;
}

namespace {

std::vector<std::string> tier_union(const std::vector<LoadedRun>& runs) {
    std::vector<std::string> tiers;
    for (const LoadedRun& run : runs)
        for (const std::string& t : run.tiers)
            if (std::find(tiers.begin(), tiers.end(), t) == tiers.end()) tiers.push_back(t);
    return tiers;
}

std::vector<std::vector<std::string>> table_cells(const std::vector<LoadedRun>& runs,
                                                  std::vector<std::string>& header) {
    const auto tiers = tier_union(runs);
    header = {"run", "method"};
    for (const auto& t : tiers) header.push_back("conv_round_" + t);
    for (const auto& t : tiers) header.push_back("final_acc_" + t);
    header.push_back("cumulative_mb");
    std::vector<std::vector<std::string>> rows;
    for (const LoadedRun& run : runs) {
        std::vector<std::string> row = {run.dir, run.tag};
        for (const auto& t : tiers) {
            auto it = std::find(run.tiers.begin(), run.tiers.end(), t);
            row.push_back(it == run.tiers.end() ? "-"
                                                : run.converged[it - run.tiers.begin()]);
        }
        for (const auto& t : tiers) {
            auto it = std::find(run.tiers.begin(), run.tiers.end(), t);
            row.push_back(it == run.tiers.end()
                              ? "-"
                              : format_double(run.final_accuracy[it - run.tiers.begin()], 4));
        }
        row.push_back(format_double(run.cumulative_mb, 3));
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace

std::string comparison_csv(const std::vector<LoadedRun>& runs) {
    std::vector<std::string> header;
    const auto rows = table_cells(runs, header);
    std::ostringstream os;
    for (size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
    os << "\n";
    for (const auto& row : rows) {
        for (size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i];
        os << "\n";
    }
    return os.str();
}

std::string comparison_table(const std::vector<LoadedRun>& runs) {
    std::vector<std::string> header;
    const auto rows = table_cells(runs, header);
    std::vector<size_t> widths(header.size());
    for (size_t i = 0; i < header.size(); ++i) widths[i] = header[i].size();
    for (const auto& row : rows)
        for (size_t i = 0; i < row.size(); ++i) widths[i] = std::max(widths[i], row[i].size());
    std::ostringstream os;
    auto emit = [&](const std::vector<std::string>& row) {
        for (size_t i = 0; i < row.size(); ++i)
            os << (i ? "  " : "") << std::left << std::setw(static_cast<int>(widths[i])) << row[i];
        os << "\n";
    };
    emit(header);
    for (const auto& row : rows) emit(row);
    return os.str();
}

std::string accuracy_svg(const std::vector<LoadedRun>& runs) {
    static const char* kPalette[] = {"#4c78a8", "#f58518", "#54a24b", "#e45756", "#72b7b2",
                                     "#b279a2", "#ff9da6", "#9d755d", "#bab0ac", "#637939"};
    const int width = 760, height = 420, margin = 50;
    size_t max_rounds = 1;
    for (const LoadedRun& run : runs)
        for (const auto& curve : run.accuracy_curves)
            max_rounds = std::max(max_rounds, curve.size());

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
       << height << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    // Axes.
    os << "<line x1=\"" << margin << "\" y1=\"" << height - margin << "\" x2=\"" << width - margin
       << "\" y2=\"" << height - margin << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\"" << margin << "\" y2=\""
       << height - margin << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << width / 2 << "\" y=\"" << height - 12
       << "\" text-anchor=\"middle\" font-size=\"12\">round</text>\n";
    os << "<text x=\"14\" y=\"" << height / 2
       << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 14 " << height / 2
       << ")\">accuracy</text>\n";

    auto sx = [&](size_t r) {
        return margin + (max_rounds <= 1
                             ? 0.0
                             : (static_cast<double>(r) / (max_rounds - 1)) * (width - 2 * margin));
    };
    auto sy = [&](double acc) { return height - margin - acc * (height - 2 * margin); };

    int color = 0, legend_y = margin;
    for (const LoadedRun& run : runs)
        for (size_t t = 0; t < run.tiers.size(); ++t, ++color) {
            const auto& curve = run.accuracy_curves[t];
            if (curve.empty()) continue;
            const char* c = kPalette[color % 10];
            os << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"1.5\" points=\"";
            for (size_t r = 0; r < curve.size(); ++r)
                os << format_double(sx(r), 1) << "," << format_double(sy(curve[r]), 1) << " ";
            os << "\"/>\n";
            os << "<text x=\"" << width - margin + 4 << "\" y=\"" << legend_y
               << "\" font-size=\"10\" fill=\"" << c << "\">" << run.tag << ":" << run.tiers[t]
               << "</text>\n";
            legend_y += 14;
        }
    os << "</svg>\n";
    return os.str();
}

}  // namespace moss
