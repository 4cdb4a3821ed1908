#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "sgool/embedder.hpp"

namespace sgool {

// 100 * cosine(condition embedding, image embedding)
double alignment_score(const JointEncoder& enc, const Tensor& img, const Condition& c);

struct AlignmentScores {
    double global_score = 0.0;
    double parts_score = 0.0;
    bool parts_degenerate = false;  // no salient region; parts fell back to global
};

// global plus saliency-part alignment of one image
AlignmentScores alignment_scores(const JointEncoder& enc, const Tensor& img, const Condition& c,
                                 double mask_k = 1.0, int pad = 1);

struct RunRecord {
    std::string method;  // unoptimized | global-only | sgool
    int condition = 0;
    std::uint64_t seed = 0;
    double alignment_global = 0.0;
    double alignment_parts = 0.0;
    std::string trace_path;
};

void write_run_record(const std::filesystem::path& path, const RunRecord& r);
RunRecord read_run_record(const std::filesystem::path& path);

struct MethodStats {
    std::string method;
    int count = 0;
    double mean_global = 0, median_global = 0, iqr_global = 0;
    double mean_parts = 0, median_parts = 0, iqr_parts = 0;
};

struct PairDiff {
    std::string method_a;
    std::string method_b;
    int paired = 0;  // (condition, seed) pairs present in both
    double median_global_diff = 0;  // median_a - median_b
    double median_parts_diff = 0;
};

struct ComparisonReport {
    std::vector<MethodStats> methods;
    std::vector<PairDiff> pairs;
    std::vector<std::string> warnings;
};

// Per-method stats plus signed pairwise median differences. Requires at
// least two methods with five seeds each; unbalanced seed sets narrow to the
// common (condition, seed) intersection with a warning.
ComparisonReport compare_methods(std::vector<RunRecord> records);

// report.csv keeps an empty hps column so externally computed preference
// scores can be merged later
void write_report_csv(const std::filesystem::path& path, const ComparisonReport& report);
void write_report_txt(const std::filesystem::path& path, const ComparisonReport& report);

double median(std::vector<double> values);
double quantile(std::vector<double> values, double q);

}  // namespace sgool
