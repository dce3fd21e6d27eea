#include "ecor/report.hpp"

#include <cstdio>

namespace ecor {

std::string report_csv(const std::vector<ReportRow>& rows) {
    std::string out = results_csv_header();
    for (const ReportRow& r : rows) {
        out += results_csv_row(r.run_id, r.dataset, r.ablation, r.quad, r.seed);
    }
    return out;
}

std::string report_table(const std::vector<ReportRow>& rows) {
    std::vector<std::vector<std::string>> cells;
    cells.push_back({"run_id", "dataset", "ablation", "RR", "RW", "WR", "WW", "n", "seed"});
    char buf[32];
    for (const ReportRow& r : rows) {
        std::vector<std::string> line{r.run_id, r.dataset, to_string(r.ablation)};
        for (double v : {r.quad.rr(), r.quad.rw(), r.quad.wr(), r.quad.ww()}) {
            std::snprintf(buf, sizeof(buf), "%.4f", v);
            line.emplace_back(buf);
        }
        line.push_back(std::to_string(r.quad.n()));
        line.push_back(std::to_string(r.seed));
        cells.push_back(std::move(line));
    }
    std::vector<size_t> width(cells[0].size(), 0);
    for (const auto& line : cells) {
        for (size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
    }
    std::string out;
    for (const auto& line : cells) {
        for (size_t c = 0; c < line.size(); ++c) {
            out += line[c];
            if (c + 1 < line.size()) out.append(width[c] - line[c].size() + 2, ' ');
        }
        out += '\n';
    }
    return out;
}

}  // namespace ecor
