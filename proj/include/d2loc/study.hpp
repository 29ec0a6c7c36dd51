#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace d2loc::study {

struct PdmiStudyRow {
    double log_eta = 0.0;      // log condition number of U
    double log_abs_det = 0.0;  // log |det U|
};

struct PdmiStudyResult {
    std::vector<PdmiStudyRow> rows;
    double pearson = 0.0;
};

// Samples random 2x2 joint distributions built the same way the snippet-level
// loss builds them (random attention values, random fg/bg partition) and
// records log(eta) against log|det| to expose their negative association.
// plant_identity appends the U = I optimum as an extra (0, 0) row.
PdmiStudyResult pdmi_study(std::size_t num_samples, std::uint64_t seed, bool plant_identity);

void write_study_csv(const PdmiStudyResult& result, const std::filesystem::path& path);

double pearson_correlation(const std::vector<PdmiStudyRow>& rows);

}  // namespace d2loc::study
