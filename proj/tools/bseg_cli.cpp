// bseg: phantom generation, training, MC prediction, CRF refinement, evaluation, statistics and
// uncertainty experiments. Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bseg/bayesnet/predict.hpp"
#include "bseg/bayesnet/serialize.hpp"
#include "bseg/bayesnet/train.hpp"
#include "bseg/densecrf/densecrf.hpp"
#include "bseg/metrics/report.hpp"
#include "bseg/metrics/stats.hpp"
#include "bseg/pipeline/config.hpp"
#include "bseg/pipeline/dataset.hpp"
#include "bseg/pipeline/experiment.hpp"
#include "bseg/volume/nifti.hpp"

namespace fs = std::filesystem;
using namespace bseg;
using nlohmann::json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << text;
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw FormatError("'" + path.string() + "' is not valid JSON: " + e.what(), e.byte);
    }
}

void ensure_parent(const std::string& prefix) {
    const fs::path p(prefix);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;

    pipeline::PipelineConfig load() const {
        auto c = config_path.empty() ? pipeline::PipelineConfig{} : pipeline::load_config(config_path);
        if (seed) c.seed = *seed;
        return c;
    }
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config_path, "JSON pipeline config; flags override its values")
        ->check(CLI::ExistingFile);
    cmd->add_option("--seed", c.seed, "master seed");
}

// phantom ------------------------------------------------------------------

struct PhantomArgs {
    Common common;
    std::size_t count = 0;
    std::string out;
    std::optional<double> scale;
};

int run_phantom(const PhantomArgs& a) {
    auto cfg = a.common.load();
    if (a.scale) cfg.phantom_scale = *a.scale;
    cfg.validate();
    const fs::path dir = a.out.empty() ? cfg.data_dir : fs::path(a.out);
    const auto m = pipeline::write_phantoms(dir, a.count, cfg.seed, cfg.phantom_scale);
    log::info("wrote " + std::to_string(m.size()) + " phantoms to " + dir.string());
    return 0;
}

// train --------------------------------------------------------------------

struct TrainArgs {
    Common common;
    std::string manifest, out;
    unsigned fold = 0;
    std::optional<unsigned> folds;
    std::optional<std::size_t> iterations, batch;
    std::optional<double> lr, momentum, dropout;
};

int run_train(const TrainArgs& a) {
    auto cfg = a.common.load();
    if (a.folds) cfg.folds = *a.folds;
    if (a.iterations) cfg.train.iterations = *a.iterations;
    if (a.batch) cfg.train.batch = *a.batch;
    if (a.lr) cfg.train.lr = *a.lr;
    if (a.momentum) cfg.train.momentum = *a.momentum;
    if (a.dropout) cfg.net.dropout = *a.dropout;
    cfg.validate();
    if (a.fold >= cfg.folds)
        throw ArgumentError("fold id " + std::to_string(a.fold) + " must be < fold count " + std::to_string(cfg.folds));

    const auto manifest = pipeline::read_manifest(a.manifest);
    const auto folds = pipeline::fold_split(manifest.size(), cfg.folds, derive_seed(cfg.seed, "folds"));
    const auto train_idx = pipeline::training_indices(folds, a.fold);
    const auto ds = pipeline::load_slices(manifest, train_idx, cfg.net.num_labels, cfg.net.depth, cfg.axis);
    cfg.train.seed = derive_seed(cfg.seed, "train", a.fold);

    const fs::path dir = a.out.empty() ? cfg.output_dir : fs::path(a.out);
    fs::create_directories(dir);
    const auto r = net::train(ds, cfg.net, cfg.train);
    net::save_weights(r.weights, dir / "weights.bin");
    r.log.write_csv(dir / "train_log.csv");
    json split{{"fold", a.fold}, {"folds", cfg.folds}, {"train", train_idx}, {"test", folds[a.fold]}};
    write_text(dir / "split.json", split.dump(2) + "\n");
    log::info("fold " + std::to_string(a.fold) + ": trained on " + std::to_string(train_idx.size()) +
              " subjects, final loss " + std::to_string(r.log.loss.empty() ? 0.0 : r.log.loss.back()));
    return 0;
}

// predict ------------------------------------------------------------------

struct PredictArgs {
    Common common;
    std::string weights, image, out;
    std::optional<unsigned> samples;
    std::optional<std::string> axis;
    std::size_t height = 0, width = 0;
    bool dump_samples = false, deterministic = false;
};

int run_predict(const PredictArgs& a) {
    auto cfg = a.common.load();
    if (a.samples) cfg.mc_samples = *a.samples;
    if (a.axis) cfg.axis = parse_axis(*a.axis);
    cfg.validate();
    const auto w = net::load_weights(a.weights);
    if (!a.common.config_path.empty() && !(w.config == cfg.net)) {
        const auto shape = [](const net::NetworkConfig& n) {
            std::string s = "depth " + std::to_string(n.depth) + ", channels [";
            for (std::size_t i = 0; i < n.channels.size(); ++i) s += (i ? "," : "") + std::to_string(n.channels[i]);
            return s + "], labels " + std::to_string(n.num_labels) + ", dropout " + std::to_string(n.dropout);
        };
        throw ShapeError("weights were trained for " + shape(w.config) + " but the config asks for " + shape(cfg.net));
    }
    const auto image = pipeline::prepare_image(nifti::read_volume(a.image));
    net::McOptions o;
    o.samples = cfg.mc_samples;
    o.seed = derive_seed(cfg.seed, "predict");
    o.axis = cfg.axis;
    o.height = a.height;
    o.width = a.width;
    o.deterministic = a.deterministic;
    o.keep_samples = a.dump_samples;
    const auto r = net::mc_predict(w, image, o);

    ensure_parent(a.out);
    pipeline::write_probs(r.mean, a.out);
    nifti::write(r.uncertainty, a.out + "_uncertainty.nii");
    nifti::write(r.mean.argmax(), a.out + "_mask.nii");
    for (std::size_t t = 0; t < r.samples.size(); ++t)
        pipeline::write_probs(r.samples[t], a.out + "_sample" + std::to_string(t));
    return 0;
}

// refine -------------------------------------------------------------------

struct RefineArgs {
    Common common;
    std::vector<std::string> probs;
    std::string image, out, filter = "fast";
    std::optional<unsigned> iters;
    std::optional<double> w1, w2, theta_alpha, theta_beta, theta_gamma;
};

int run_refine(const RefineArgs& a) {
    auto cfg = a.common.load();
    if (a.iters) cfg.crf.iterations = *a.iters;
    if (a.w1) cfg.crf.w1 = *a.w1;
    if (a.w2) cfg.crf.w2 = *a.w2;
    if (a.theta_alpha) cfg.crf.theta_alpha = *a.theta_alpha;
    if (a.theta_beta) cfg.crf.theta_beta = *a.theta_beta;
    if (a.theta_gamma) cfg.crf.theta_gamma = *a.theta_gamma;
    cfg.validate();
    const auto kind = crf::parse_filter(a.filter);
    std::vector<fs::path> channels(a.probs.begin(), a.probs.end());
    const auto probs = pipeline::read_probs(channels);
    const auto image = pipeline::prepare_image(nifti::read_volume(a.image));
    const auto r = crf::infer(probs, image, cfg.crf, kind);
    ensure_parent(a.out);
    pipeline::write_probs(r.probs, a.out);
    nifti::write(r.labels, a.out + "_mask.nii");
    return 0;
}

// eval ---------------------------------------------------------------------

struct EvalArgs {
    std::string mask, reference, uncertainty, roi, batch, out, csv;
};

metrics::MetricsReport evaluate_files(const std::string& mask, const std::string& reference,
                                      const std::string& uncertainty, const std::string& roi) {
    const auto m = nifti::read_labels(mask);
    const auto r = nifti::read_labels(reference);
    std::optional<UncertaintyVolume> u;
    std::optional<LabelVolume> region;
    if (!uncertainty.empty()) {
        const auto v = nifti::read_volume(uncertainty);
        u = UncertaintyVolume(v.grid(), v.to_vector());
    }
    if (!roi.empty()) region = nifti::read_labels(roi);
    return metrics::evaluate(m, r, u ? &*u : nullptr, region ? &*region : nullptr);
}

int run_eval(const EvalArgs& a) {
    if (a.batch.empty()) {
        if (a.mask.empty() || a.reference.empty()) throw ArgumentError("eval needs --mask and --reference, or --batch");
        const auto rep = evaluate_files(a.mask, a.reference, a.uncertainty, a.roi);
        write_text(a.out, metrics::to_json(rep).dump(2) + "\n");
        return 0;
    }
    const auto list = read_json(a.batch);
    if (!list.is_array()) throw FormatError("batch list must be a JSON array", 0);
    const auto base = fs::path(a.batch).parent_path();
    const auto resolve = [&](const json& e, const char* key) -> std::string {
        if (!e.contains(key)) return {};
        fs::path p = e.at(key).get<std::string>();
        return (p.is_relative() ? base / p : p).string();
    };
    std::vector<std::string> names;
    std::vector<metrics::MetricsReport> reports;
    json arr = json::array();
    for (std::size_t i = 0; i < list.size(); ++i) {
        const auto& e = list[i];
        if (!e.is_object() || !e.contains("mask") || !e.contains("reference"))
            throw FormatError("batch entry " + std::to_string(i) + " needs mask and reference", 0);
        names.push_back(e.contains("name") ? e["name"].get<std::string>() : "item" + std::to_string(i));
        reports.push_back(evaluate_files(resolve(e, "mask"), resolve(e, "reference"), resolve(e, "uncertainty"),
                                         resolve(e, "roi")));
        arr.push_back(metrics::to_json(reports.back()));
    }
    write_text(a.out, arr.dump(2) + "\n");
    if (!a.csv.empty()) write_text(a.csv, metrics::summary_csv(names, reports));
    return 0;
}

// stats --------------------------------------------------------------------

struct StatsArgs {
    std::string a, b, metric = "dice", method = "auto", out;
    std::size_t m = 1;
};

std::vector<double> metric_values(const fs::path& path, const std::string& metric) {
    const auto j = read_json(path);
    if (!j.is_array()) throw FormatError("'" + path.string() + "' must hold a JSON array of reports", 0);
    std::vector<double> v;
    for (std::size_t i = 0; i < j.size(); ++i) {
        const auto val = metrics::field(metrics::from_json(j[i]), metric);
        if (!val) throw UndefinedResultError("report " + std::to_string(i) + " of '" + path.string() + "' has no " + metric);
        v.push_back(*val);
    }
    return v;
}

int run_stats(const StatsArgs& a) {
    metrics::PValueMethod method = metrics::PValueMethod::automatic;
    if (a.method == "exact") method = metrics::PValueMethod::exact;
    else if (a.method == "normal") method = metrics::PValueMethod::normal;
    else if (a.method != "auto") throw ArgumentError("--method must be auto, exact or normal");
    const auto va = metric_values(a.a, a.metric), vb = metric_values(a.b, a.metric);
    const auto r = metrics::wilcoxon_signed_rank(va, vb, method);
    const double p = r.p;
    const auto adj = metrics::bonferroni(std::span<const double>(&p, 1), a.m);
    json j{{"metric", a.metric}, {"n", r.n},         {"w_plus", r.w_plus}, {"w_minus", r.w_minus},
           {"w", r.w},           {"p", r.p},         {"exact", r.exact},   {"comparisons", a.m},
           {"p_bonferroni", adj[0]}};
    write_text(a.out, j.dump(2) + "\n");
    return 0;
}

// experiment ---------------------------------------------------------------

struct ExperimentArgs {
    Common common;
    std::vector<std::string> variants;
    std::vector<std::uint64_t> seeds;
    std::optional<double> scale;
    std::optional<std::size_t> iterations, test_subjects;
    std::string out;
};

int run_experiment(const ExperimentArgs& a) {
    auto cfg = a.common.load();
    if (a.scale) cfg.phantom_scale = *a.scale;
    if (a.iterations) cfg.train.iterations = *a.iterations;
    cfg.validate();
    std::vector<pipeline::Variant> variants;
    for (const auto& v : a.variants) variants.push_back(pipeline::parse_variant(v));
    pipeline::ExperimentConfig ec;
    if (!a.seeds.empty()) ec.seeds = a.seeds;
    else ec.seeds = {cfg.seed};
    ec.scale = cfg.phantom_scale;
    ec.net = cfg.net;
    ec.train = cfg.train;
    ec.mc_samples = cfg.mc_samples;
    ec.axis = cfg.axis;
    if (a.test_subjects) ec.test_subjects = *a.test_subjects;
    pipeline::ExperimentRunner runner(ec);
    const fs::path dir = a.out.empty() ? cfg.output_dir : fs::path(a.out);
    for (auto v : variants) {
        const auto recs = runner.run(v);
        json j = json::array();
        for (const auto& r : recs) j.push_back(pipeline::to_json(r));
        const std::string stem = std::string("experiment_") + pipeline::variant_name(v);
        write_text(dir / (stem + ".json"), j.dump(2) + "\n");
        write_text(dir / (stem + ".csv"), pipeline::records_csv(recs));
    }
    return 0;
}

int guarded(const std::function<int()>& f) {
    try {
        return f();
    } catch (const ArgumentError& e) {
        std::cerr << "bseg: " << e.what() << '\n';
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "bseg: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "bseg: " << e.what() << '\n';
        return 2;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Brain extraction with MC-dropout segmentation and dense CRF refinement"};
    app.require_subcommand(1);
    int rc = 0;

    PhantomArgs pa;
    auto* ph = app.add_subcommand("phantom", "write seeded phantom image/mask pairs and a manifest");
    add_common(ph, pa.common);
    ph->add_option("--count", pa.count, "number of subjects")->required()->check(CLI::PositiveNumber);
    ph->add_option("--out", pa.out, "output directory (default: config data_dir)");
    ph->add_option("--scale", pa.scale, "resolution factor relative to 64x64x48");
    ph->callback([&] { rc = guarded([&] { return run_phantom(pa); }); });

    TrainArgs ta;
    auto* tr = app.add_subcommand("train", "train on every fold except --fold");
    add_common(tr, ta.common);
    tr->add_option("--manifest", ta.manifest, "manifest.json")->required()->check(CLI::ExistingFile);
    tr->add_option("--fold", ta.fold, "held-out fold id")->required();
    tr->add_option("--folds", ta.folds, "fold count");
    tr->add_option("--out", ta.out, "output directory (default: config output_dir)");
    tr->add_option("--iterations", ta.iterations);
    tr->add_option("--batch", ta.batch);
    tr->add_option("--lr", ta.lr);
    tr->add_option("--momentum", ta.momentum);
    tr->add_option("--dropout", ta.dropout);
    tr->callback([&] { rc = guarded([&] { return run_train(ta); }); });

    PredictArgs pr;
    auto* pd = app.add_subcommand("predict", "MC-dropout prediction: mean probabilities and uncertainty");
    add_common(pd, pr.common);
    pd->add_option("--weights", pr.weights)->required()->check(CLI::ExistingFile);
    pd->add_option("--image", pr.image)->required()->check(CLI::ExistingFile);
    pd->add_option("--out", pr.out, "output prefix")->required();
    pd->add_option("-T,--samples", pr.samples, "MC samples");
    pd->add_option("--axis", pr.axis, "slice axis x|y|z");
    pd->add_option("--height", pr.height, "network input height (0: native, padded)");
    pd->add_option("--width", pr.width, "network input width (0: native, padded)");
    pd->add_flag("--dump-samples", pr.dump_samples, "also write every sample's probabilities");
    pd->add_flag("--deterministic", pr.deterministic, "single pass without dropout");
    pd->callback([&] { rc = guarded([&] { return run_predict(pr); }); });

    RefineArgs ra;
    auto* rf = app.add_subcommand("refine", "dense CRF refinement of a probability volume");
    add_common(rf, ra.common);
    rf->add_option("--prob", ra.probs, "probability channel files in label order")->required()->expected(2, 255);
    rf->add_option("--image", ra.image)->required()->check(CLI::ExistingFile);
    rf->add_option("--out", ra.out, "output prefix")->required();
    rf->add_option("--iters", ra.iters, "mean-field iterations");
    rf->add_option("--w1", ra.w1, "appearance weight");
    rf->add_option("--w2", ra.w2, "smoothness weight");
    rf->add_option("--theta-alpha", ra.theta_alpha);
    rf->add_option("--theta-beta", ra.theta_beta);
    rf->add_option("--theta-gamma", ra.theta_gamma);
    rf->add_option("--filter", ra.filter, "fast|naive")->check(CLI::IsMember({"fast", "naive"}));
    rf->callback([&] { rc = guarded([&] { return run_refine(ra); }); });

    EvalArgs ea;
    auto* ev = app.add_subcommand("eval", "evaluate masks against references");
    ev->add_option("--mask", ea.mask);
    ev->add_option("--reference", ea.reference);
    ev->add_option("--uncertainty", ea.uncertainty);
    ev->add_option("--roi", ea.roi);
    ev->add_option("--batch", ea.batch, "JSON list of {name, mask, reference, uncertainty?, roi?}");
    ev->add_option("--out", ea.out, "report JSON")->required();
    ev->add_option("--csv", ea.csv, "batch summary CSV");
    ev->callback([&] { rc = guarded([&] { return run_eval(ea); }); });

    StatsArgs sa;
    auto* st = app.add_subcommand("stats", "paired Wilcoxon signed-rank test with Bonferroni correction");
    st->add_option("--a", sa.a, "reports JSON array")->required()->check(CLI::ExistingFile);
    st->add_option("--b", sa.b, "reports JSON array")->required()->check(CLI::ExistingFile);
    st->add_option("--metric", sa.metric);
    st->add_option("--m", sa.m, "number of comparisons")->check(CLI::PositiveNumber);
    st->add_option("--method", sa.method, "auto|exact|normal");
    st->add_option("--out", sa.out)->required();
    st->callback([&] { rc = guarded([&] { return run_stats(sa); }); });

    ExperimentArgs xa;
    auto* ex = app.add_subcommand("experiment", "uncertainty experiments on phantom cohorts");
    add_common(ex, xa.common);
    ex->add_option("--variant", xa.variants, "train-size|label-corruption|rotation|contrast-shift")->required();
    ex->add_option("--seeds", xa.seeds, "master seeds")->delimiter(',');
    ex->add_option("--scale", xa.scale);
    ex->add_option("--iterations", xa.iterations);
    ex->add_option("--test-subjects", xa.test_subjects);
    ex->add_option("--out", xa.out, "output directory");
    ex->callback([&] { rc = guarded([&] { return run_experiment(xa); }); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }
    return rc;
}
