#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "bseg/bayesnet/train.hpp"
#include "bseg/phantom/phantom.hpp"
#include "bseg/volume/nifti.hpp"

namespace bseg::pipeline {

struct ManifestEntry {
    std::filesystem::path image, mask;
    std::uint64_t seed = 0;
    friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

using Manifest = std::vector<ManifestEntry>;

/// Relative paths are written as given; on reading they are resolved against the manifest's directory.
inline void write_manifest(const Manifest& m, const std::filesystem::path& path) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& e : m) j.push_back({{"image", e.image.string()}, {"mask", e.mask.string()}, {"seed", e.seed}});
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << j.dump(2) << '\n';
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline Manifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("manifest '" + path.string() + "' is not valid JSON: " + e.what(), e.byte);
    }
    if (!j.is_array()) throw FormatError("manifest must be a JSON array", 0);
    const auto base = path.parent_path();
    Manifest m;
    for (std::size_t i = 0; i < j.size(); ++i) {
        const auto& r = j[i];
        if (!r.is_object() || !r.contains("image") || !r.contains("mask") || !r.contains("seed") ||
            !r["image"].is_string() || !r["mask"].is_string() || !r["seed"].is_number_unsigned())
            throw FormatError("manifest entry " + std::to_string(i) + " needs string image/mask and unsigned seed", 0);
        ManifestEntry e{r["image"].get<std::string>(), r["mask"].get<std::string>(), r["seed"].get<std::uint64_t>()};
        if (e.image.is_relative()) e.image = base / e.image;
        if (e.mask.is_relative()) e.mask = base / e.mask;
        m.push_back(std::move(e));
    }
    return m;
}

/// Phantom subject i uses seed master + i.
inline phantom::Phantom make_subject(std::uint64_t seed, double scale = 1.0) {
    return phantom::generate(phantom::sample_subject(phantom::scaled(phantom::PhantomConfig{}, scale), seed));
}

/// Writes `count` phantom pairs and manifest.json into `dir`; returns the manifest as written.
inline Manifest write_phantoms(const std::filesystem::path& dir, std::size_t count, std::uint64_t master,
                               double scale = 1.0) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
    Manifest m;
    for (std::size_t i = 0; i < count; ++i) {
        char stem[32];
        std::snprintf(stem, sizeof stem, "subject_%03zu", i);
        const std::uint64_t seed = master + i;
        const auto ph = make_subject(seed, scale);
        ManifestEntry e{std::string(stem) + "_image.nii", std::string(stem) + "_mask.nii", seed};
        nifti::write(ph.image, dir / e.image);
        nifti::write(ph.mask, dir / e.mask);
        m.push_back(std::move(e));
    }
    write_manifest(m, dir / "manifest.json");
    return m;
}

/// Seeded permutation of 0..n-1 cut into k contiguous folds whose sizes differ by at most one.
inline std::vector<std::vector<std::size_t>> fold_split(std::size_t n, unsigned k, std::uint64_t seed) {
    if (k < 2) throw ConfigError("fold count must be >= 2");
    if (n < k) throw ArgumentError("cannot split " + std::to_string(n) + " subjects into " + std::to_string(k) + " folds");
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(seed));
    std::vector<std::vector<std::size_t>> folds(k);
    for (unsigned f = 0; f < k; ++f) {
        const std::size_t lo = f * n / k, hi = (f + 1) * n / k;
        folds[f].assign(perm.begin() + static_cast<std::ptrdiff_t>(lo), perm.begin() + static_cast<std::ptrdiff_t>(hi));
        std::sort(folds[f].begin(), folds[f].end());
    }
    return folds;
}

/// Indices of every subject outside fold `f`.
inline std::vector<std::size_t> training_indices(const std::vector<std::vector<std::size_t>>& folds, unsigned f) {
    if (f >= folds.size())
        throw ArgumentError("fold id " + std::to_string(f) + " out of range for " + std::to_string(folds.size()) + " folds");
    std::vector<std::size_t> out;
    for (unsigned g = 0; g < folds.size(); ++g)
        if (g != f) out.insert(out.end(), folds[g].begin(), folds[g].end());
    std::sort(out.begin(), out.end());
    return out;
}

/// Network inputs are intensity-normalized; an all-constant volume normalizes to zeros with a warning.
inline Volume3D prepare_image(const Volume3D& raw) {
    bool degenerate = false;
    auto v = normalize_intensity(raw, &degenerate);
    if (degenerate) log::warn("input volume has constant intensity");
    return v;
}

inline net::SliceDataset load_slices(const Manifest& m, const std::vector<std::size_t>& which, unsigned num_labels,
                                     unsigned depth, Axis axis) {
    net::SliceDataset ds;
    for (auto i : which) {
        if (i >= m.size()) throw ArgumentError("subject index out of range");
        const auto image = nifti::read_volume(m[i].image);
        const auto mask = nifti::read_labels(m[i].mask, num_labels);
        net::append_slices(ds, prepare_image(image), mask, axis, depth);
    }
    return ds;
}

/// One file per label channel: <prefix>_prob_l<label>.nii.
inline std::filesystem::path channel_path(const std::string& prefix, unsigned label) {
    return prefix + "_prob_l" + std::to_string(label) + ".nii";
}

inline void write_probs(const ProbVolume& p, const std::string& prefix) {
    for (unsigned l = 0; l < p.num_labels(); ++l) nifti::write_channel(p, l, channel_path(prefix, l));
}

/// Channels stored as float32 are renormalized after reading.
inline ProbVolume read_probs(const std::vector<std::filesystem::path>& channels) {
    if (channels.size() < 2) throw ArgumentError("a probability volume needs at least 2 channel files");
    std::vector<Volume3D> vols;
    for (const auto& c : channels) vols.push_back(nifti::read_volume(c));
    return ProbVolume::from_channels(vols, true);
}

}  // namespace bseg::pipeline
