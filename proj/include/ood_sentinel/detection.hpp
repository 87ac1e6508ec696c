#pragma once

#include <algorithm>
#include <cstdio>
#include <exception>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "calibration.hpp"
#include "embedding_io.hpp"
#include "error.hpp"
#include "representation.hpp"

namespace ood {

enum class Verdict { Normal, Ood };

inline std::string_view to_string(Verdict v) { return v == Verdict::Ood ? "ood" : "normal"; }

struct DetectionResult {
    std::size_t index = 0;
    double epsilon = 0.0;
    double threshold = 0.0;
    Verdict verdict = Verdict::Normal;

    friend bool operator==(const DetectionResult&, const DetectionResult&) = default;
};

/// Distance of the composed vector from the model's mean.
inline double score(const DetectorModel& model, std::optional<std::span<const double>> v,
                    const LanguageFeatures& feats) {
    const auto omega = compose(model.recipe, v, feats);
    if (omega.values.size() != model.dim) {
        throw Error(ErrorKind::Dimension, "composed vector has length " +
                                              std::to_string(omega.values.size()) +
                                              " but the model expects " + std::to_string(model.dim));
    }
    return distance(omega.values, model.omega_mean);
}

/// Strictly above the threshold is out of distribution; a tie is normal.
inline Verdict classify(const DetectorModel& model, double epsilon) {
    return epsilon > model.threshold ? Verdict::Ood : Verdict::Normal;
}

inline DetectionResult detect_row(const DetectorModel& model, const SampleSources& src,
                                  std::size_t i) {
    const auto omega = compose_row(model.recipe, src, i);
    if (omega.values.size() != model.dim) {
        throw Error(ErrorKind::Dimension, "row " + std::to_string(i) + ": composed length " +
                                              std::to_string(omega.values.size()) +
                                              " but the model expects " + std::to_string(model.dim));
    }
    const double eps = distance(omega.values, model.omega_mean);
    return {i, eps, model.threshold, classify(model, eps)};
}

struct BatchOptions {
    /// Worker threads; 0 picks the hardware concurrency, 1 runs inline.
    unsigned threads = 0;
};

/// Scores every row. Results are in input order whatever the thread count.
inline std::vector<DetectionResult> batch_detect(const DetectorModel& model,
                                                 const SampleSources& src,
                                                 const BatchOptions& opt = {}) {
    const std::size_t n = check_sources(model.recipe, src);
    std::vector<DetectionResult> out(n);
    if (n == 0) return out;

    unsigned threads = opt.threads ? opt.threads : std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) out[i] = detect_row(model, src, i);
        return out;
    }

    std::vector<std::exception_ptr> errors(threads);
    {
        std::vector<std::jthread> pool;
        pool.reserve(threads);
        for (unsigned t = 0; t < threads; ++t) {
            pool.emplace_back([&, t] {
                try {
                    for (std::size_t i = t; i < n; i += threads) out[i] = detect_row(model, src, i);
                } catch (...) {
                    errors[t] = std::current_exception();
                }
            });
        }
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return out;
}

inline std::vector<DetectionResult> batch_detect(const DetectorModel& model,
                                                 const EmbeddingSet* latents,
                                                 const EmbeddingSet* clip_images,
                                                 const PromptBank& prompts,
                                                 const BatchOptions& opt = {}) {
    return batch_detect(model, SampleSources{latents, clip_images, &prompts}, opt);
}

/// `index,epsilon,threshold,verdict` with 9 significant digits.
inline std::string render_detections_csv(std::span<const DetectionResult> results) {
    std::string s = "index,epsilon,threshold,verdict\n";
    char buf[96];
    for (const auto& r : results) {
        std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,", r.index, r.epsilon, r.threshold);
        s += buf;
        s += to_string(r.verdict);
        s += '\n';
    }
    return s;
}

}  // namespace ood
