#pragma once

// Uncertainty experiments on phantom cohorts: training-set size, label corruption, test-time rotation and
// contrast shift. Every condition is run per master seed; models and subjects are cached so that
// conditions sharing a training set reuse one trained network.

#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "bseg/bayesnet/predict.hpp"
#include "bseg/bayesnet/train.hpp"
#include "bseg/metrics/report.hpp"
#include "bseg/pipeline/dataset.hpp"

namespace bseg::pipeline {

enum class Variant { train_size, label_corruption, rotation, contrast_shift };

inline Variant parse_variant(const std::string& s) {
    if (s == "train-size") return Variant::train_size;
    if (s == "label-corruption") return Variant::label_corruption;
    if (s == "rotation") return Variant::rotation;
    if (s == "contrast-shift") return Variant::contrast_shift;
    throw ArgumentError("unknown experiment variant '" + s +
                        "' (expected train-size, label-corruption, rotation or contrast-shift)");
}

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::train_size: return "train-size";
        case Variant::label_corruption: return "label-corruption";
        case Variant::rotation: return "rotation";
        default: return "contrast-shift";
    }
}

struct ExperimentConfig {
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    double scale = 1.0;
    net::NetworkConfig net;
    net::TrainConfig train;
    unsigned mc_samples = 6;
    Axis axis = Axis::z;
    std::size_t test_subjects = 5;
    /// Training pool per seed; smaller training sets are its leading subjects.
    std::size_t pool = 20;
    std::vector<std::size_t> train_sizes{5, 10, 20};
    /// Number of leading pool subjects whose labels are corrupted.
    std::vector<std::size_t> corrupted{0, 5, 10};
    phantom::Corruption corruption = phantom::Corruption::eye_adipose;
    std::vector<double> rotations{0.0, 10.0, 20.0, 30.0};
    std::vector<double> gammas{1.0, 1.5};
    double roi_margin = 2.0;

    void validate() const {
        net.validate();
        train.validate();
        if (seeds.empty()) throw ConfigError("experiment needs at least one seed");
        if (test_subjects < 1) throw ConfigError("experiment needs at least one test subject");
        if (mc_samples < 1) throw ConfigError("mc_samples must be >= 1");
        for (auto n : train_sizes)
            if (n < 1 || n > pool) throw ConfigError("training-set sizes must lie in [1, pool]");
        for (auto k : corrupted)
            if (k > pool) throw ConfigError("corrupted-label counts must not exceed the pool size");
        for (double a : rotations)
            if (!(std::abs(a) <= 180.0)) throw ConfigError("rotation angles must lie in [-180, 180]");
        for (double g : gammas)
            if (!(g > 0.0)) throw ConfigError("contrast gammas must be > 0");
    }
};

/// One (condition, subject, seed) outcome. `condition` is the training-set size, corrupted-label count,
/// rotation in degrees or gamma, depending on the variant.
struct ExperimentRecord {
    std::string variant;
    double condition = 0.0;
    std::size_t subject = 0;
    std::uint64_t seed = 0;
    double dice = 0.0;
    std::optional<double> assd_mm, hd_mm;
    double total_uncertainty = 0.0;
    double roi_total_uncertainty = 0.0;
    friend bool operator==(const ExperimentRecord&, const ExperimentRecord&) = default;
};

inline nlohmann::json to_json(const ExperimentRecord& r) {
    const auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    return {{"variant", r.variant},
            {"condition", r.condition},
            {"subject", r.subject},
            {"seed", r.seed},
            {"dice", r.dice},
            {"assd_mm", opt(r.assd_mm)},
            {"hd_mm", opt(r.hd_mm)},
            {"total_uncertainty", r.total_uncertainty},
            {"roi_total_uncertainty", r.roi_total_uncertainty}};
}

inline std::string records_csv(const std::vector<ExperimentRecord>& rs) {
    std::ostringstream os;
    os.precision(17);
    os << "variant,condition,subject,seed,dice,assd_mm,hd_mm,total_uncertainty,roi_total_uncertainty\n";
    for (const auto& r : rs) {
        os << r.variant << ',' << r.condition << ',' << r.subject << ',' << r.seed << ',' << r.dice << ',';
        if (r.assd_mm) os << *r.assd_mm;
        os << ',';
        if (r.hd_mm) os << *r.hd_mm;
        os << ',' << r.total_uncertainty << ',' << r.roi_total_uncertainty << '\n';
    }
    return os.str();
}

class ExperimentRunner {
public:
    explicit ExperimentRunner(ExperimentConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

    const ExperimentConfig& config() const noexcept { return cfg_; }

    std::vector<ExperimentRecord> run(Variant v) {
        std::vector<ExperimentRecord> out;
        for (auto seed : cfg_.seeds) {
            switch (v) {
                case Variant::train_size:
                    for (auto n : cfg_.train_sizes)
                        evaluate_all(out, v, static_cast<double>(n), seed, model(seed, n, 0), Perturbation{});
                    break;
                case Variant::label_corruption:
                    for (auto k : cfg_.corrupted)
                        evaluate_all(out, v, static_cast<double>(k), seed, model(seed, cfg_.pool, k), Perturbation{});
                    break;
                case Variant::rotation:
                    for (double a : cfg_.rotations)
                        evaluate_all(out, v, a, seed, model(seed, cfg_.pool, 0), Perturbation{a, 1.0});
                    break;
                case Variant::contrast_shift:
                    for (double g : cfg_.gammas)
                        evaluate_all(out, v, g, seed, model(seed, cfg_.pool, 0), Perturbation{0.0, g});
                    break;
            }
        }
        return out;
    }

    /// The trained network for a seed, the first `n` pool subjects and `corrupted` corrupted labels.
    const net::NetworkWeights& model(std::uint64_t seed, std::size_t n, std::size_t corrupted) {
        const auto key = std::make_tuple(seed, n, corrupted);
        if (auto it = models_.find(key); it != models_.end()) return it->second;
        net::SliceDataset ds;
        stage("phantom", [&] {
            for (std::size_t i = 0; i < n; ++i) {
                const auto cfg = subject_config(seed, "experiment.train", i);
                const auto ph = phantom::generate(cfg);
                LabelVolume labels = ph.mask;
                if (i < corrupted) {
                    const auto adipose = phantom::adipose_region(cfg);
                    labels = phantom::corrupt_labels(ph.mask, cfg_.corruption, &adipose);
                }
                net::append_slices(ds, prepare_image(ph.image), labels, cfg_.axis, cfg_.net.depth);
            }
        });
        net::TrainConfig tc = cfg_.train;
        tc.seed = derive_seed(seed, "experiment.train-run");
        log::info("experiment: training seed " + std::to_string(seed) + ", " + std::to_string(n) + " subjects, " +
                  std::to_string(corrupted) + " corrupted");
        net::NetworkWeights w;
        stage("train", [&] { w = net::train(ds, cfg_.net, tc).weights; });
        return models_.emplace(key, std::move(w)).first->second;
    }

private:
    struct Perturbation {
        double degrees = 0.0;
        double gamma = 1.0;
    };

    template <class F>
    static void stage(const char* name, F&& f) {
        try {
            f();
        } catch (const StageError&) {
            throw;
        } catch (const std::exception& e) {
            throw StageError(name, e.what());
        }
    }

    phantom::PhantomConfig subject_config(std::uint64_t seed, const char* role, std::size_t i) const {
        return phantom::sample_subject(phantom::scaled(phantom::PhantomConfig{}, cfg_.scale), derive_seed(seed, role, i));
    }

    void evaluate_all(std::vector<ExperimentRecord>& out, Variant v, double condition, std::uint64_t seed,
                      const net::NetworkWeights& w, const Perturbation& pert) {
        for (std::size_t j = 0; j < cfg_.test_subjects; ++j) {
            ExperimentRecord r;
            r.variant = variant_name(v);
            r.condition = condition;
            r.subject = j;
            r.seed = seed;
            Volume3D image;
            LabelVolume mask, roi;
            stage("perturb", [&] {
                const auto cfg = subject_config(seed, "experiment.test", j);
                auto ph = phantom::generate(cfg);
                roi = phantom::roi_behind_eyes(cfg, cfg_.roi_margin);
                image = std::move(ph.image);
                mask = std::move(ph.mask);
                if (pert.degrees != 0.0) {
                    roi = phantom::rotate_volume(image, roi, pert.degrees, cfg_.axis).mask;
                    auto rot = phantom::rotate_volume(image, mask, pert.degrees, cfg_.axis);
                    image = std::move(rot.image);
                    mask = std::move(rot.mask);
                }
                if (pert.gamma != 1.0) image = phantom::contrast_shift(image, pert.gamma);
            });
            net::McResult pred;
            stage("predict", [&] {
                net::McOptions o;
                o.samples = cfg_.mc_samples;
                o.seed = derive_seed(seed, "experiment.mc", j);
                o.axis = cfg_.axis;
                pred = net::mc_predict(w, prepare_image(image), o);
            });
            stage("evaluate", [&] {
                const auto rep = metrics::evaluate(pred.mean.argmax(), mask, &pred.uncertainty);
                r.dice = rep.dice;
                r.assd_mm = rep.assd_mm;
                r.hd_mm = rep.hd_mm;
                r.total_uncertainty = rep.total_uncertainty.value_or(0.0);
                r.roi_total_uncertainty = metrics::total_uncertainty(pred.uncertainty, &roi);
            });
            out.push_back(std::move(r));
        }
    }

    ExperimentConfig cfg_;
    std::map<std::tuple<std::uint64_t, std::size_t, std::size_t>, net::NetworkWeights> models_;
};

}  // namespace bseg::pipeline
