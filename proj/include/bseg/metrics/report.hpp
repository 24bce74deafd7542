#pragma once

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bseg/core/log.hpp"
#include "bseg/metrics/overlap.hpp"
#include "bseg/metrics/surface.hpp"
#include "bseg/metrics/uncertainty.hpp"

namespace bseg::metrics {

/// Evaluation of one predicted mask against its reference. Undefined quantities (surface distances
/// with an empty mask, sensitivity with an empty reference) are left empty and serialize as null.
struct MetricsReport {
    double dice = 0.0;
    std::optional<double> hd_mm;
    std::optional<double> assd_mm;
    std::optional<double> sensitivity;
    std::optional<double> specificity;
    ConfusionCounts counts;
    std::optional<double> total_uncertainty;
};

inline MetricsReport evaluate(const LabelVolume& mask, const LabelVolume& reference,
                              const UncertaintyVolume* uncertainty = nullptr, const LabelVolume* roi = nullptr) {
    MetricsReport r;
    r.counts = confusion(mask, reference);
    r.dice = dice(r.counts);
    try {
        r.sensitivity = metrics::sensitivity(r.counts);
    } catch (const UndefinedResultError& e) {
        log::warn(e.what());
    }
    try {
        r.specificity = metrics::specificity(r.counts);
    } catch (const UndefinedResultError& e) {
        log::warn(e.what());
    }
    try {
        const auto sd = surface_distances(mask, reference);
        r.hd_mm = sd.hausdorff;
        r.assd_mm = sd.assd;
    } catch (const UndefinedResultError& e) {
        log::warn(e.what());
    }
    if (uncertainty != nullptr) {
        if (uncertainty->dims() != mask.dims()) throw ShapeError("evaluate: uncertainty dims differ from mask");
        r.total_uncertainty = total_uncertainty(*uncertainty, roi);
    }
    return r;
}

inline const std::vector<std::string>& report_keys() {
    static const std::vector<std::string> keys{"dice", "hd_mm", "assd_mm", "sensitivity", "specificity",
                                               "tp",   "tn",    "fp",      "fn",          "total_uncertainty"};
    return keys;
}

inline nlohmann::json to_json(const MetricsReport& r) {
    const auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    nlohmann::json j;
    j["dice"] = r.dice;
    j["hd_mm"] = opt(r.hd_mm);
    j["assd_mm"] = opt(r.assd_mm);
    j["sensitivity"] = opt(r.sensitivity);
    j["specificity"] = opt(r.specificity);
    j["tp"] = r.counts.tp;
    j["tn"] = r.counts.tn;
    j["fp"] = r.counts.fp;
    j["fn"] = r.counts.fn;
    j["total_uncertainty"] = opt(r.total_uncertainty);
    return j;
}

inline MetricsReport from_json(const nlohmann::json& j) {
    const auto opt = [&](const char* k) -> std::optional<double> {
        if (!j.contains(k) || j.at(k).is_null()) return std::nullopt;
        return j.at(k).get<double>();
    };
    MetricsReport r;
    r.dice = j.at("dice").get<double>();
    r.hd_mm = opt("hd_mm");
    r.assd_mm = opt("assd_mm");
    r.sensitivity = opt("sensitivity");
    r.specificity = opt("specificity");
    r.counts = {j.at("tp").get<std::uint64_t>(), j.at("tn").get<std::uint64_t>(), j.at("fp").get<std::uint64_t>(),
                j.at("fn").get<std::uint64_t>()};
    r.total_uncertainty = opt("total_uncertainty");
    return r;
}

/// Value of a named numeric field; empty when the field is undefined for this report.
inline std::optional<double> field(const MetricsReport& r, const std::string& key) {
    if (key == "dice") return r.dice;
    if (key == "hd_mm") return r.hd_mm;
    if (key == "assd_mm") return r.assd_mm;
    if (key == "sensitivity") return r.sensitivity;
    if (key == "specificity") return r.specificity;
    if (key == "tp") return static_cast<double>(r.counts.tp);
    if (key == "tn") return static_cast<double>(r.counts.tn);
    if (key == "fp") return static_cast<double>(r.counts.fp);
    if (key == "fn") return static_cast<double>(r.counts.fn);
    if (key == "total_uncertainty") return r.total_uncertainty;
    throw ArgumentError("unknown metric '" + key + "'");
}

/// CSV with one row per named report followed by "mean" and "std" (sample, n-1) rows.
inline std::string summary_csv(const std::vector<std::string>& names, const std::vector<MetricsReport>& reports) {
    if (names.size() != reports.size()) throw ArgumentError("summary_csv: names/reports length mismatch");
    std::ostringstream out;
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
    out << "name";
    for (const auto& k : report_keys()) out << ',' << k;
    out << '\n';
    const auto cell = [&](const std::optional<double>& v) {
        if (v) out << *v;
    };
    for (std::size_t i = 0; i < reports.size(); ++i) {
        out << names[i];
        for (const auto& k : report_keys()) {
            out << ',';
            cell(field(reports[i], k));
        }
        out << '\n';
    }
    for (const char* row : {"mean", "std"}) {
        out << row;
        for (const auto& k : report_keys()) {
            std::vector<double> vals;
            for (const auto& r : reports)
                if (auto v = field(r, k)) vals.push_back(*v);
            out << ',';
            if (vals.empty()) continue;
            double mean = 0.0;
            for (double v : vals) mean += v;
            mean /= static_cast<double>(vals.size());
            if (std::string(row) == "mean") {
                out << mean;
            } else if (vals.size() > 1) {
                double ss = 0.0;
                for (double v : vals) ss += (v - mean) * (v - mean);
                out << std::sqrt(ss / static_cast<double>(vals.size() - 1));
            }
        }
        out << '\n';
    }
    return out.str();
}

}  // namespace bseg::metrics
