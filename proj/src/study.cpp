#include "d2loc/study.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "d2loc/errors.hpp"
#include "d2loc/losses.hpp"
#include "d2loc/rng.hpp"
#include "d2loc/svd.hpp"

namespace d2loc::study {

double pearson_correlation(const std::vector<PdmiStudyRow>& rows) {
    if (rows.size() < 2) throw UsageError("correlation needs at least two samples");
    double mx = 0.0, my = 0.0;
    for (const PdmiStudyRow& r : rows) {
        mx += r.log_eta;
        my += r.log_abs_det;
    }
    mx /= static_cast<double>(rows.size());
    my /= static_cast<double>(rows.size());
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (const PdmiStudyRow& r : rows) {
        const double dx = r.log_eta - mx;
        const double dy = r.log_abs_det - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw NumericError("degenerate sample in correlation");
    return sxy / std::sqrt(sxx * syy);
}

PdmiStudyResult pdmi_study(std::size_t num_samples, std::uint64_t seed, bool plant_identity) {
    if (num_samples < 2) throw UsageError("pdmi study needs at least two samples");
    Rng rng(seed);
    PdmiStudyResult result;
    result.rows.reserve(num_samples + (plant_identity ? 1 : 0));

    while (result.rows.size() < num_samples) {
        const std::size_t z = 2 + rng.uniform_index(11);  // 2..12 snippets
        const std::size_t n_f = 1 + rng.uniform_index(z - 1);

        // lambda' > 0.5 on the first n_f entries, < 0.5 on the rest; lambda uniform.
        std::vector<double> lambda_prime(z), lambda_vals(z);
        for (std::size_t t = 0; t < z; ++t) {
            lambda_prime[t] = t < n_f ? rng.uniform(0.5 + 1e-6, 1.0) : rng.uniform(0.0, 0.5 - 1e-6);
            lambda_vals[t] = rng.uniform(0.0, 1.0);
        }
        Matrix lam(z, 1);
        for (std::size_t t = 0; t < z; ++t) lam(t, 0) = lambda_vals[t];

        losses::SnippetJoint joint =
            losses::snippet_joint(nd::Array::leaf(std::move(lam), false), lambda_prime);
        const Matrix u = matmul_values(joint.p1.values(), joint.y1);
        const double det = nd::abs_det(u);
        if (det < 1e-9) continue;  // log|det| would swamp the plot; resample

        PdmiStudyRow row;
        row.log_abs_det = std::log(det);
        row.log_eta = nd::log_condition_number(nd::Array::leaf(u, false)).item();
        result.rows.push_back(row);
    }
    if (plant_identity) result.rows.push_back(PdmiStudyRow{0.0, 0.0});  // U = I optimum
    result.pearson = pearson_correlation(result.rows);
    return result;
}

void write_study_csv(const PdmiStudyResult& result, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os << "log_eta,log_abs_det\n";
    char buf[80];
    for (const PdmiStudyRow& r : result.rows) {
        std::snprintf(buf, sizeof(buf), "%.12g,%.12g\n", r.log_eta, r.log_abs_det);
        os << buf;
    }
}

}  // namespace d2loc::study
