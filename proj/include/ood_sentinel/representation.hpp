#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "embedding_io.hpp"
#include "error.hpp"
#include "recipe.hpp"

namespace ood {

/// (a.b) / (|a| |b|), clamped to [-1, 1]. Accepts any mix of float/double ranges.
template <typename A, typename B>
double cosine_similarity(std::span<const A> a, std::span<const B> b) {
    if (a.size() != b.size()) {
        throw Error(ErrorKind::Dimension, "cosine similarity of vectors with lengths " +
                                              std::to_string(a.size()) + " and " +
                                              std::to_string(b.size()));
    }
    if (a.empty()) {
        throw Error(ErrorKind::Dimension, "cosine similarity of empty vectors");
    }
    double dot = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = static_cast<double>(a[i]);
        const double y = static_cast<double>(b[i]);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if (!(na > 0.0) || !(nb > 0.0)) {
        throw Error(ErrorKind::DegenerateVector, "cosine similarity with a zero-norm vector");
    }
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

inline double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
    return cosine_similarity(std::span<const double>(a), std::span<const double>(b));
}

/// Similarities of one image embedding to the normal (pi) and anomalous (pibar) prompts.
class LanguageFeatures {
public:
    LanguageFeatures() = default;

    LanguageFeatures(std::vector<double> pi, std::vector<double> pibar)
        : pi_(std::move(pi)), pibar_(std::move(pibar)) {
        clamp_all(pi_);
        clamp_all(pibar_);
    }

    const std::vector<double>& pi() const noexcept { return pi_; }
    const std::vector<double>& pibar() const noexcept { return pibar_; }

private:
    static void clamp_all(std::vector<double>& xs) {
        constexpr double kSlack = 1e-9;
        for (double& x : xs) {
            if (!std::isfinite(x) || x < -1.0 - kSlack || x > 1.0 + kSlack) {
                throw Error(ErrorKind::Data, "language feature outside [-1, 1]");
            }
            x = std::clamp(x, -1.0, 1.0);
        }
    }

    std::vector<double> pi_;
    std::vector<double> pibar_;
};

/// CLIP text embeddings of the normal and anomalous scene descriptions.
/// Either set may be empty when the active recipe does not need it.
struct PromptBank {
    EmbeddingSet normal;
    EmbeddingSet anomalous;
};

namespace detail {

template <typename T>
std::vector<double> similarities(std::span<const T> image, const EmbeddingSet& prompts,
                                 const char* which) {
    std::vector<double> out;
    if (prompts.empty()) return out;
    if (prompts.dim() != image.size()) {
        throw Error(ErrorKind::Dimension, std::string(which) + " prompts have dim " +
                                              std::to_string(prompts.dim()) +
                                              " but the image embedding has dim " +
                                              std::to_string(image.size()));
    }
    out.reserve(prompts.count());
    for (std::size_t j = 0; j < prompts.count(); ++j) {
        out.push_back(cosine_similarity(image, prompts.row(j)));
    }
    return out;
}

}  // namespace detail

template <typename T>
LanguageFeatures language_features(std::span<const T> image_embedding, const PromptBank& prompts) {
    return LanguageFeatures(detail::similarities(image_embedding, prompts.normal, "normal"),
                            detail::similarities(image_embedding, prompts.anomalous, "anomalous"));
}

inline LanguageFeatures language_features(const std::vector<double>& image_embedding,
                                          const PromptBank& prompts) {
    return language_features(std::span<const double>(image_embedding), prompts);
}

/// A composed working vector together with the recipe that produced it.
struct OmegaVector {
    std::vector<double> values;
    Recipe recipe;
};

namespace detail {

inline std::span<const double> base_vector(TermKind kind, std::optional<std::span<const double>> v,
                                           const LanguageFeatures& feats) {
    switch (kind) {
        case TermKind::V:
            if (!v || v->empty()) {
                throw Error(ErrorKind::Configuration, "recipe uses 'v' but no latent was supplied");
            }
            return *v;
        case TermKind::Pi:
            if (feats.pi().empty()) {
                throw Error(ErrorKind::Configuration,
                            "recipe uses 'pi' but no normal prompts were supplied");
            }
            return feats.pi();
        case TermKind::PiBar:
            if (feats.pibar().empty()) {
                throw Error(ErrorKind::Configuration,
                            "recipe uses 'pibar' but no anomalous prompts were supplied");
            }
            return feats.pibar();
    }
    return {};
}

inline std::vector<double> expand_term(const Term& t, std::optional<std::span<const double>> v,
                                       const LanguageFeatures& feats) {
    const auto base = base_vector(t.kind, v, feats);
    std::vector<double> out;
    out.reserve(base.size() * t.factor);
    for (std::uint32_t k = 0; k < t.factor; ++k) out.insert(out.end(), base.begin(), base.end());
    return out;
}

/// Elementwise sum after cyclically tiling every operand to the longest length.
inline std::vector<double> expand_add(const Add& a, std::optional<std::span<const double>> v,
                                      const LanguageFeatures& feats) {
    std::vector<std::vector<double>> parts;
    std::size_t n = 0;
    for (const auto& t : a.terms) {
        parts.push_back(expand_term(t, v, feats));
        n = std::max(n, parts.back().size());
    }
    std::vector<double> out(n, 0.0);
    for (const auto& p : parts) {
        for (std::size_t i = 0; i < n; ++i) out[i] += p[i % p.size()];
    }
    return out;
}

}  // namespace detail

/// Builds the working vector for `recipe` from a latent `v` (optional) and language features.
inline OmegaVector compose(const Recipe& recipe, std::optional<std::span<const double>> v,
                           const LanguageFeatures& feats) {
    OmegaVector omega{{}, recipe};
    if (auto* t = std::get_if<Term>(&recipe)) {
        omega.values = detail::expand_term(*t, v, feats);
    } else if (auto* a = std::get_if<Add>(&recipe)) {
        omega.values = detail::expand_add(*a, v, feats);
    } else {
        for (const auto& c : std::get<Append>(recipe).children) {
            auto part = std::holds_alternative<Term>(c)
                            ? detail::expand_term(std::get<Term>(c), v, feats)
                            : detail::expand_add(std::get<Add>(c), v, feats);
            omega.values.insert(omega.values.end(), part.begin(), part.end());
        }
    }
    for (double x : omega.values) {
        if (!std::isfinite(x)) throw Error(ErrorKind::Data, "composed vector has a non-finite entry");
    }
    return omega;
}

}  // namespace ood
