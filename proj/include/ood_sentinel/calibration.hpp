#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "embedding_io.hpp"
#include "error.hpp"
#include "recipe.hpp"
#include "representation.hpp"
#include "special_functions.hpp"

namespace ood {

/// splitmix64: the shuffle generator. Fixed so splits reproduce across implementations.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        state_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform-ish index in [0, bound) as next() % bound.
    std::size_t below(std::size_t bound) { return static_cast<std::size_t>(next() % bound); }

private:
    std::uint64_t state_;
};

/// Fisher-Yates from the back: for i = n-1 .. 1, swap(i, next() % (i+1)).
inline std::vector<std::size_t> shuffled_indices(std::size_t n, SplitMix64& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = n; i-- > 1;) {
        std::swap(idx[i], idx[rng.below(i + 1)]);
    }
    return idx;
}

struct SplitIndices {
    std::vector<std::size_t> mean_part;  // Yv: builds the mean vector
    std::vector<std::size_t> fit_part;   // Yf: builds the distance sample
};

inline SplitIndices split_indices(std::size_t count, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) {
        throw Error(ErrorKind::Configuration, "split fraction must lie in (0, 1)");
    }
    if (count < 4) {
        throw Error(ErrorKind::InsufficientData,
                    "split needs at least 4 rows, got " + std::to_string(count));
    }
    SplitMix64 rng(seed);
    auto idx = shuffled_indices(count, rng);
    const auto n_v = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(count)));
    if (n_v < 2 || count - n_v < 2) {
        throw Error(ErrorKind::InsufficientData,
                    "split of " + std::to_string(count) + " rows at fraction " +
                        std::to_string(fraction) + " leaves a part with fewer than 2 rows");
    }
    SplitIndices out;
    out.mean_part.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_v));
    out.fit_part.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_v), idx.end());
    return out;
}

inline std::pair<EmbeddingSet, EmbeddingSet> split_id(const EmbeddingSet& set, double fraction,
                                                      std::uint64_t seed) {
    const auto parts = split_indices(set.count(), fraction, seed);
    return {set.select(parts.mean_part), set.select(parts.fit_part)};
}

inline std::vector<double> mean_vector(std::span<const std::vector<double>> omegas) {
    if (omegas.empty()) {
        throw Error(ErrorKind::InsufficientData, "mean of an empty set of vectors");
    }
    const std::size_t n = omegas.front().size();
    std::vector<double> sum(n, 0.0);
    for (const auto& w : omegas) {
        if (w.size() != n) {
            throw Error(ErrorKind::Dimension, "mean of vectors with unequal lengths");
        }
        for (std::size_t i = 0; i < n; ++i) sum[i] += w[i];
    }
    const double inv = static_cast<double>(omegas.size());
    for (double& s : sum) s /= inv;
    return sum;
}

inline constexpr double kMinDistance = 1e-12;

/// 1 - cosine similarity, clamped to [1e-12, 2]. Larger means further from the mean.
inline double distance(std::span<const double> omega, std::span<const double> omega_mean) {
    return std::clamp(1.0 - cosine_similarity(omega, omega_mean), kMinDistance, 2.0);
}

// ---------------------------------------------------------------------------
// Gamma distribution

struct GammaParams {
    double shape = 1.0;  // k
    double scale = 1.0;  // theta

    double mean() const { return shape * scale; }
    double stddev() const { return std::sqrt(shape) * scale; }

    friend bool operator==(const GammaParams&, const GammaParams&) = default;
};

inline void validate(const GammaParams& g) {
    if (!(std::isfinite(g.shape) && g.shape > 0.0 && std::isfinite(g.scale) && g.scale > 0.0)) {
        throw Error(ErrorKind::Domain, "gamma parameters must be positive and finite");
    }
}

inline double gamma_cdf(const GammaParams& g, double x) {
    if (!(x >= 0.0)) throw Error(ErrorKind::Domain, "gamma cdf evaluated at a negative point");
    return special::gamma_p(g.shape, x / g.scale);
}

inline double gamma_pdf(const GammaParams& g, double x) {
    if (x < 0.0) return 0.0;
    if (x == 0.0) return g.shape < 1.0 ? INFINITY : (g.shape == 1.0 ? 1.0 / g.scale : 0.0);
    const double u = x / g.scale;
    return std::exp((g.shape - 1.0) * std::log(u) - u - std::lgamma(g.shape)) / g.scale;
}

/// Inverse cdf: bisection on a bracket [0, mean + 20 sd] (doubled until it contains p),
/// followed by bracket-guarded Newton polishing.
inline double gamma_quantile(const GammaParams& g, double p) {
    if (!(p > 0.0 && p < 1.0)) {
        throw Error(ErrorKind::Domain, "quantile probability must lie in (0, 1)");
    }
    double lo = 0.0;
    double hi = g.mean() + 20.0 * g.stddev();
    while (gamma_cdf(g, hi) < p) {
        lo = hi;
        hi *= 2.0;
        if (!std::isfinite(hi)) throw Error(ErrorKind::Numeric, "gamma quantile bracket diverged");
    }
    double x = 0.5 * (lo + hi);
    for (int i = 0; i < 4000; ++i) {
        x = 0.5 * (lo + hi);
        if (x == lo || x == hi) break;
        const double c = gamma_cdf(g, x);
        if (std::fabs(c - p) <= 1e-14) break;
        (c < p ? lo : hi) = x;
    }
    double err = gamma_cdf(g, x) - p;
    for (int i = 0; i < 8 && std::fabs(err) > 1e-15; ++i) {
        const double d = gamma_pdf(g, x);
        if (!(d > 0.0) || !std::isfinite(d)) break;
        const double next = x - err / d;
        if (!(next > lo && next < hi)) break;
        const double next_err = gamma_cdf(g, next) - p;
        if (std::fabs(next_err) >= std::fabs(err)) break;
        x = next;
        err = next_err;
    }
    return x;
}

struct GammaFit {
    GammaParams params;
    GammaParams moments;  // method-of-moments estimate (Newton start and fallback)
    bool converged = false;
    int iterations = 0;
};

/// k0 = mean^2 / var, theta0 = var / mean, with the population variance.
inline GammaParams gamma_moments(std::span<const double> samples) {
    const double n = static_cast<double>(samples.size());
    double mean = 0.0;
    for (double s : samples) mean += s;
    mean /= n;
    double var = 0.0;
    for (double s : samples) var += (s - mean) * (s - mean);
    var /= n;
    return {mean * mean / var, var / mean};
}

/// Maximum-likelihood Gamma fit: Newton on ln k - digamma(k) = ln(mean) - mean(ln x)
/// from the moments estimate; falls back to the moments estimate if Newton fails.
inline GammaFit fit_gamma(std::span<const double> samples) {
    if (samples.size() < 8) {
        throw Error(ErrorKind::InsufficientData,
                    "gamma fit needs at least 8 samples, got " + std::to_string(samples.size()));
    }
    double mean = 0.0;
    double mean_log = 0.0;
    for (double s : samples) {
        if (!(s > 0.0) || !std::isfinite(s)) {
            throw Error(ErrorKind::Domain, "gamma fit requires finite positive samples");
        }
        mean += s;
        mean_log += std::log(s);
    }
    mean /= static_cast<double>(samples.size());
    mean_log /= static_cast<double>(samples.size());

    double var = 0.0;
    for (double s : samples) var += (s - mean) * (s - mean);
    if (!(var > 0.0)) {
        throw Error(ErrorKind::DegenerateSamples, "gamma fit of samples with zero variance");
    }

    GammaFit fit;
    fit.moments = gamma_moments(samples);
    fit.params = fit.moments;

    const double target = std::log(mean) - mean_log;
    if (!(target > 0.0)) return fit;

    double k = fit.moments.shape;
    for (int it = 1; it <= 100; ++it) {
        const double f = std::log(k) - special::digamma(k) - target;
        const double df = 1.0 / k - special::trigamma(k);
        double next = k - f / df;
        if (!(next > 0.0)) next = 0.5 * k;
        const double delta = std::fabs(next - k);
        k = next;
        fit.iterations = it;
        if (!std::isfinite(k)) break;
        if (delta < 1e-10 * k) {
            fit.converged = true;
            break;
        }
    }
    if (fit.converged) fit.params = {k, mean / k};
    return fit;
}

// ---------------------------------------------------------------------------
// Detector model

struct Provenance {
    std::uint64_t seed = 0;
    std::size_t n_v = 0;
    std::size_t n_f = 0;
    std::string encoder;

    friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct DetectorModel {
    Recipe recipe;
    std::vector<double> omega_mean;
    GammaParams gamma;
    double confidence = 0.9;
    double threshold = 0.0;
    std::size_t dim = 0;
    Provenance provenance;

    friend bool operator==(const DetectorModel&, const DetectorModel&) = default;
};

/// Non-owning view of the per-sample inputs: row i of each set describes the same image.
/// When only one of `latents`/`clip_images` is given it serves both roles.
struct SampleSources {
    const EmbeddingSet* latents = nullptr;
    const EmbeddingSet* clip_images = nullptr;
    const PromptBank* prompts = nullptr;

    const EmbeddingSet* v_source() const { return latents ? latents : clip_images; }
    const EmbeddingSet* q_source() const { return clip_images ? clip_images : latents; }
};

/// Checks that everything `recipe` reads is present and row-aligned; returns the row count.
inline std::size_t check_sources(const Recipe& recipe, const SampleSources& src) {
    const bool need_v = uses(recipe, TermKind::V);
    const bool need_pi = uses(recipe, TermKind::Pi);
    const bool need_pibar = uses(recipe, TermKind::PiBar);
    if (need_v && !src.v_source()) {
        throw Error(ErrorKind::Configuration, "recipe uses 'v' but no latent embeddings were given");
    }
    if ((need_pi || need_pibar) && !src.q_source()) {
        throw Error(ErrorKind::Configuration,
                    "recipe uses language features but no CLIP image embeddings were given");
    }
    if (need_pi && (!src.prompts || src.prompts->normal.empty())) {
        throw Error(ErrorKind::Configuration, "recipe uses 'pi' but no normal prompts were given");
    }
    if (need_pibar && (!src.prompts || src.prompts->anomalous.empty())) {
        throw Error(ErrorKind::Configuration,
                    "recipe uses 'pibar' but no anomalous prompts were given");
    }
    if (src.latents && src.clip_images && src.latents->count() != src.clip_images->count()) {
        throw Error(ErrorKind::Alignment,
                    "latent set has " + std::to_string(src.latents->count()) +
                        " rows but CLIP image set has " + std::to_string(src.clip_images->count()));
    }
    const EmbeddingSet* any = src.v_source();
    return any ? any->count() : 0;
}

/// Working vector of row `i`. Only the inputs the recipe references are touched.
inline OmegaVector compose_row(const Recipe& recipe, const SampleSources& src, std::size_t i) {
    std::optional<std::span<const double>> v;
    std::vector<double> latent;
    if (uses(recipe, TermKind::V)) {
        latent = src.v_source()->row_f64(i);
        v = std::span<const double>(latent);
    }
    LanguageFeatures feats;
    if (uses(recipe, TermKind::Pi) || uses(recipe, TermKind::PiBar)) {
        static const PromptBank kNoPrompts;
        feats = language_features(src.q_source()->row(i), src.prompts ? *src.prompts : kNoPrompts);
    }
    return compose(recipe, v, feats);
}

struct CalibrationOptions {
    double confidence = 0.9;
    double fraction = 0.5;
    std::uint64_t seed = 0;
    std::string encoder;
};

struct Calibration {
    DetectorModel model;
    std::vector<double> fit_distances;  // distances of the Yf rows, in split order
    GammaFit fit;
};

/// Full calibration pipeline with diagnostics.
inline Calibration calibrate_detailed(const SampleSources& src, const Recipe& recipe,
                                      const CalibrationOptions& opt) {
    if (!(opt.confidence > 0.0 && opt.confidence < 1.0)) {
        throw Error(ErrorKind::Configuration, "confidence must lie in (0, 1)");
    }
    std::size_t count = 0;
    try {
        count = check_sources(recipe, src);
    } catch (const Error& e) {
        throw e.with_context("calibrate: inputs");
    }

    SplitIndices parts;
    try {
        parts = split_indices(count, opt.fraction, opt.seed);
    } catch (const Error& e) {
        throw e.with_context("calibrate: split");
    }

    Calibration out;
    auto& m = out.model;
    try {
        std::vector<std::vector<double>> omegas;
        omegas.reserve(parts.mean_part.size());
        for (std::size_t i : parts.mean_part) omegas.push_back(compose_row(recipe, src, i).values);
        m.omega_mean = mean_vector(omegas);
    } catch (const Error& e) {
        throw e.with_context("calibrate: mean vector");
    }

    try {
        out.fit_distances.reserve(parts.fit_part.size());
        for (std::size_t i : parts.fit_part) {
            const auto omega = compose_row(recipe, src, i);
            out.fit_distances.push_back(distance(omega.values, m.omega_mean));
        }
    } catch (const Error& e) {
        throw e.with_context("calibrate: distances");
    }

    try {
        out.fit = fit_gamma(out.fit_distances);
        m.gamma = out.fit.params;
        m.threshold = gamma_quantile(m.gamma, opt.confidence);
    } catch (const Error& e) {
        throw e.with_context("calibrate: gamma fit");
    }

    m.recipe = recipe;
    m.confidence = opt.confidence;
    m.dim = m.omega_mean.size();
    m.provenance = {opt.seed, parts.mean_part.size(), parts.fit_part.size(), opt.encoder};
    return out;
}

inline DetectorModel calibrate(const SampleSources& src, const Recipe& recipe,
                               const CalibrationOptions& opt) {
    return calibrate_detailed(src, recipe, opt).model;
}

/// Single-set form: `id_set` supplies both the latent and the CLIP image role.
inline DetectorModel calibrate(const EmbeddingSet& id_set, const PromptBank& prompts,
                               const Recipe& recipe, const CalibrationOptions& opt) {
    return calibrate(SampleSources{&id_set, nullptr, &prompts}, recipe, opt);
}

// ---------------------------------------------------------------------------
// Model file (JSON text, numbers with 17 significant digits)

namespace detail {

inline std::string num17(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

}  // namespace detail

inline std::string render_model(const DetectorModel& m) {
    std::string s;
    s += "{\n";
    s += "  \"recipe\": " + nlohmann::json(render_recipe(m.recipe)).dump() + ",\n";
    s += "  \"omega_mean\": [";
    for (std::size_t i = 0; i < m.omega_mean.size(); ++i) {
        if (i) s += ", ";
        s += detail::num17(m.omega_mean[i]);
    }
    s += "],\n";
    s += "  \"gamma\": {\"shape\": " + detail::num17(m.gamma.shape) +
         ", \"scale\": " + detail::num17(m.gamma.scale) + "},\n";
    s += "  \"confidence\": " + detail::num17(m.confidence) + ",\n";
    s += "  \"threshold\": " + detail::num17(m.threshold) + ",\n";
    s += "  \"dim\": " + std::to_string(m.dim) + ",\n";
    s += "  \"provenance\": {\"seed\": " + std::to_string(m.provenance.seed) +
         ", \"n_v\": " + std::to_string(m.provenance.n_v) +
         ", \"n_f\": " + std::to_string(m.provenance.n_f) +
         ", \"encoder\": " + nlohmann::json(m.provenance.encoder).dump() + "}\n";
    s += "}\n";
    return s;
}

inline DetectorModel parse_model(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorKind::Format, std::string("model is not valid JSON: ") + e.what());
    }
    DetectorModel m;
    try {
        try {
            m.recipe = parse_recipe(doc.at("recipe").get<std::string>());
        } catch (const Error& e) {
            throw Error(ErrorKind::Format, std::string("model recipe: ") + e.what());
        }
        m.omega_mean = doc.at("omega_mean").get<std::vector<double>>();
        m.gamma.shape = doc.at("gamma").at("shape").get<double>();
        m.gamma.scale = doc.at("gamma").at("scale").get<double>();
        m.confidence = doc.at("confidence").get<double>();
        m.threshold = doc.at("threshold").get<double>();
        m.dim = doc.at("dim").get<std::size_t>();
        const auto& p = doc.at("provenance");
        m.provenance.seed = p.at("seed").get<std::uint64_t>();
        m.provenance.n_v = p.at("n_v").get<std::size_t>();
        m.provenance.n_f = p.at("n_f").get<std::size_t>();
        m.provenance.encoder = p.at("encoder").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Format, std::string("malformed model: ") + e.what());
    }
    auto bad = [](const std::string& what) { return Error(ErrorKind::Format, "model " + what); };
    if (m.dim == 0 || m.omega_mean.size() != m.dim) throw bad("omega_mean length differs from dim");
    double norm = 0.0;
    for (double x : m.omega_mean) {
        if (!std::isfinite(x)) throw bad("omega_mean has a non-finite entry");
        norm += x * x;
    }
    if (!(norm > 0.0)) throw bad("omega_mean is the zero vector");
    if (!(m.gamma.shape > 0.0 && m.gamma.scale > 0.0 && std::isfinite(m.gamma.shape) &&
          std::isfinite(m.gamma.scale))) {
        throw bad("gamma parameters must be positive and finite");
    }
    if (!(m.confidence > 0.0 && m.confidence < 1.0)) throw bad("confidence outside (0, 1)");
    if (!(m.threshold > 0.0) || !std::isfinite(m.threshold)) throw bad("threshold must be positive");
    if (std::fabs(gamma_cdf(m.gamma, m.threshold) - m.confidence) > 1e-9) {
        throw bad("threshold is inconsistent with gamma and confidence");
    }
    return m;
}

inline void write_model(const DetectorModel& m, const std::filesystem::path& path) {
    const auto text = render_model(m);
    write_file_bytes(path, std::span(reinterpret_cast<const unsigned char*>(text.data()),
                                     text.size()));
}

inline DetectorModel read_model(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    try {
        return parse_model(std::string(bytes.begin(), bytes.end()));
    } catch (const Error& e) {
        throw e.with_context(path.string());
    }
}

}  // namespace ood
