#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ecor/ablations.hpp"
#include "ecor/inference.hpp"

namespace ecor {

struct ReportRow {
    std::string run_id;
    std::string dataset;
    Ablation ablation = Ablation::ECOR;
    MetricsQuad quad;
    uint64_t seed = 0;
};

/// Machine form: results_csv_header plus one results_csv_row per entry.
std::string report_csv(const std::vector<ReportRow>& rows);

/// Eyeball form: fixed column order RR RW WR WW (higher RR is better, the
/// rest lower), fractions to four places, columns padded to align.
std::string report_table(const std::vector<ReportRow>& rows);

}  // namespace ecor
