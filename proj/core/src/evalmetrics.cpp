#include "sgool/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

namespace sgool {

using nlohmann::json;

namespace {

double cosine(const Tensor& a, const Tensor& b) {
    auto ad = a.data();
    auto bd = b.data();
    double s = 0.0;
    for (std::size_t i = 0; i < ad.size(); ++i) s += double(ad[i]) * double(bd[i]);
    return s;
}

}  // namespace

double alignment_score(const JointEncoder& enc, const Tensor& img, const Condition& c) {
    return 100.0 * cosine(enc.embed_condition(c).vector, enc.embed_image(img).vector);
}

AlignmentScores alignment_scores(const JointEncoder& enc, const Tensor& img, const Condition& c,
                                 double mask_k, int pad) {
    AlignmentScores out;
    out.global_score = alignment_score(enc, img, c);

    SaliencyMap map = detect_spectral_residual(img);
    std::vector<CropBox> boxes;
    if (!map.degenerate) {
        Mask mask = threshold_mask(map, mask_k);
        SaliencyParts parts = extract_parts(img, mask, pad, enc.config().input_shape[1]);
        if (!parts.crops.empty()) {
            out.parts_score =
                100.0 * cosine(enc.embed_condition(c).vector, enc.embed_parts(parts).vector);
            return out;
        }
    }
    out.parts_score = out.global_score;
    out.parts_degenerate = true;
    return out;
}

void write_run_record(const std::filesystem::path& path, const RunRecord& r) {
    json j;
    j["method"] = r.method;
    j["condition"] = r.condition;
    j["seed"] = r.seed;
    j["alignment_global"] = r.alignment_global;
    j["alignment_parts"] = r.alignment_parts;
    j["trace"] = r.trace_path;
    std::ofstream out(path);
    if (!out) throw io_error("cannot write record: " + path.string());
    out << j.dump(2) << "\n";
}

RunRecord read_run_record(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot read record: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw format_error("bad run record " + path.string() + ": " + e.what());
    }
    RunRecord r;
    r.method = j.at("method").get<std::string>();
    r.condition = j.at("condition").get<int>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.alignment_global = j.at("alignment_global").get<double>();
    r.alignment_parts = j.at("alignment_parts").get<double>();
    r.trace_path = j.value("trace", "");
    for (double v : {r.alignment_global, r.alignment_parts}) {
        if (!(v >= -100.0 - 1e-9 && v <= 100.0 + 1e-9)) {
            throw format_error("alignment score " + std::to_string(v) + " outside [-100,100] in " +
                               path.string());
        }
    }
    return r;
}

double quantile(std::vector<double> values, double q) {
    if (values.empty()) throw contract_error("quantile of empty set");
    std::sort(values.begin(), values.end());
    const double pos = q * double(values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = static_cast<std::size_t>(std::ceil(pos));
    const double frac = pos - double(lo);
    return values[lo] * (1.0 - frac) + values[hi] * frac;
}

double median(std::vector<double> values) { return quantile(std::move(values), 0.5); }

ComparisonReport compare_methods(std::vector<RunRecord> records) {
    // deterministic grouping, independent of record order
    std::map<std::string, std::map<std::pair<int, std::uint64_t>, RunRecord>> by_method;
    for (const auto& r : records) {
        by_method[r.method][{r.condition, r.seed}] = r;
    }
    if (by_method.size() < 2) {
        throw contract_error("compare_methods expects at least two methods, got " +
                             std::to_string(by_method.size()));
    }

    ComparisonReport report;

    bool unbalanced = false;
    std::set<std::pair<int, std::uint64_t>> common;
    bool first = true;
    for (const auto& [method, runs] : by_method) {
        std::set<std::pair<int, std::uint64_t>> keys;
        for (const auto& [key, r] : runs) keys.insert(key);
        if (first) {
            common = keys;
            first = false;
        } else {
            if (keys != common) unbalanced = true;
            std::set<std::pair<int, std::uint64_t>> merged;
            std::set_intersection(common.begin(), common.end(), keys.begin(), keys.end(),
                                  std::inserter(merged, merged.begin()));
            common = merged;
        }
    }
    if (unbalanced) {
        report.warnings.push_back("seed sets differ across methods; statistics use the " +
                                  std::to_string(common.size()) + " common (condition,seed) runs");
    }
    if (common.size() < 5) {
        throw contract_error("compare_methods needs at least 5 common seeds, got " +
                             std::to_string(common.size()));
    }

    std::map<std::string, std::vector<double>> global_scores, parts_scores;
    for (const auto& [method, runs] : by_method) {
        for (const auto& key : common) {
            const auto& r = runs.at(key);
            global_scores[method].push_back(r.alignment_global);
            parts_scores[method].push_back(r.alignment_parts);
        }
    }

    for (const auto& [method, gs] : global_scores) {
        const auto& ps = parts_scores[method];
        MethodStats st;
        st.method = method;
        st.count = static_cast<int>(gs.size());
        st.mean_global = 0;
        st.mean_parts = 0;
        for (double v : gs) st.mean_global += v;
        for (double v : ps) st.mean_parts += v;
        st.mean_global /= double(gs.size());
        st.mean_parts /= double(ps.size());
        st.median_global = median(gs);
        st.median_parts = median(ps);
        st.iqr_global = quantile(gs, 0.75) - quantile(gs, 0.25);
        st.iqr_parts = quantile(ps, 0.75) - quantile(ps, 0.25);
        report.methods.push_back(st);
    }

    for (std::size_t i = 0; i < report.methods.size(); ++i) {
        for (std::size_t j = i + 1; j < report.methods.size(); ++j) {
            PairDiff pd;
            pd.method_a = report.methods[i].method;
            pd.method_b = report.methods[j].method;
            pd.paired = static_cast<int>(common.size());
            pd.median_global_diff = report.methods[i].median_global - report.methods[j].median_global;
            pd.median_parts_diff = report.methods[i].median_parts - report.methods[j].median_parts;
            report.pairs.push_back(pd);
        }
    }
    return report;
}

void write_report_csv(const std::filesystem::path& path, const ComparisonReport& report) {
    std::ofstream out(path);
    if (!out) throw io_error("cannot write report: " + path.string());
    out << "row_type,method,other,count,mean_global,median_global,iqr_global,"
           "mean_parts,median_parts,iqr_parts,median_global_diff,median_parts_diff,hps\n";
    char line[512];
    for (const auto& m : report.methods) {
        std::snprintf(line, sizeof(line), "method,%s,,%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,,,\n",
                      m.method.c_str(), m.count, m.mean_global, m.median_global, m.iqr_global,
                      m.mean_parts, m.median_parts, m.iqr_parts);
        out << line;
    }
    for (const auto& p : report.pairs) {
        std::snprintf(line, sizeof(line), "pair,%s,%s,%d,,,,,,,%.6f,%.6f,\n", p.method_a.c_str(),
                      p.method_b.c_str(), p.paired, p.median_global_diff, p.median_parts_diff);
        out << line;
    }
}

void write_report_txt(const std::filesystem::path& path, const ComparisonReport& report) {
    std::ofstream out(path);
    if (!out) throw io_error("cannot write report: " + path.string());
    char line[512];
    out << "alignment report (scores are 100*cosine in the joint space)\n\n";
    std::snprintf(line, sizeof(line), "%-14s %5s  %10s %10s %8s  %10s %10s %8s\n", "method", "runs",
                  "mean_g", "median_g", "iqr_g", "mean_s", "median_s", "iqr_s");
    out << line;
    for (const auto& m : report.methods) {
        std::snprintf(line, sizeof(line), "%-14s %5d  %10.4f %10.4f %8.4f  %10.4f %10.4f %8.4f\n",
                      m.method.c_str(), m.count, m.mean_global, m.median_global, m.iqr_global,
                      m.mean_parts, m.median_parts, m.iqr_parts);
        out << line;
    }
    out << "\npairwise median differences (a - b)\n";
    for (const auto& p : report.pairs) {
        std::snprintf(line, sizeof(line), "%-14s vs %-14s  global %+.4f  parts %+.4f  (n=%d)\n",
                      p.method_a.c_str(), p.method_b.c_str(), p.median_global_diff,
                      p.median_parts_diff, p.paired);
        out << line;
    }
    for (const auto& w : report.warnings) out << "\nwarning: " << w << "\n";
}

}  // namespace sgool
